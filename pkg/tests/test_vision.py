import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vsrssl.substrate import RngStream
from vsrssl.vision import (
    AugmentConfig,
    ClipBatch,
    center_crop,
    horizontal_flip,
    mixup,
    normalize_clip,
    random_crop,
    test_transform as eval_transform,
    train_transform,
)

clips = arrays(np.float32, st.tuples(st.integers(1, 4), st.integers(6, 12), st.integers(6, 12)),
               elements=st.floats(0, 1, width=32))


def test_flip_twice_is_identity():
    x = RngStream(0).uniform01((3, 8, 8)).astype(np.float32)
    y = horizontal_flip(horizontal_flip(x, 1.0, RngStream(1)), 1.0, RngStream(2))
    assert y.tobytes() == x.tobytes()


def test_flip_p0_is_identity():
    x = RngStream(0).uniform01((3, 8, 8))
    assert horizontal_flip(x, 0.0, RngStream(1)) is x


def test_flip_moves_column_3_to_28():
    x = np.zeros((1, 32, 32), dtype=np.float32)
    x[0, 10, 3] = 1
    y = horizontal_flip(x, 1.0, RngStream(0))
    assert y[0, 10, 28] == 1 and y.sum() == 1


def test_crop_to_full_size_is_identity():
    x = RngStream(0).uniform01((2, 9, 7))
    assert np.array_equal(center_crop(x, (9, 7)), x)
    assert np.array_equal(random_crop(x, (9, 7), RngStream(3)), x)


def test_center_crop_offset():
    x = np.arange(32 * 32, dtype=np.float32).reshape(1, 32, 32)
    assert np.array_equal(center_crop(x, (28, 28)), x[:, 2:30, 2:30])


def test_oversized_crop_rejected():
    with pytest.raises(ValueError):
        center_crop(np.zeros((1, 8, 8)), (9, 8))


@given(clips, st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 6))
def test_random_crop_is_a_contiguous_window(x, seed, dh, dw):
    h, w = max(1, x.shape[1] - dh), max(1, x.shape[2] - dw)
    y = random_crop(x, (h, w), RngStream(seed))
    # brute-force search over every offset
    matches = [(r, c) for r in range(x.shape[1] - h + 1) for c in range(x.shape[2] - w + 1)
               if np.array_equal(x[:, r:r + h, c:c + w], y)]
    assert matches


def test_constant_clip_normalizes_to_zero():
    assert not normalize_clip(np.full((2, 5, 5), 0.3)).any()


@given(clips.filter(lambda x: x.var() > 1e-3))
def test_normalized_moments(x):
    y = normalize_clip(x).astype(np.float64)
    assert abs(y.mean()) < 1e-6 and abs(y.std() - 1) < 1e-4


@given(clips.filter(lambda x: x.var() > 1e-3), st.floats(0.5, 4.0), st.floats(-2, 2))
def test_normalize_is_affine_invariant(x, a, b):
    np.testing.assert_allclose(normalize_clip(a * x + b), normalize_clip(x), atol=2e-4)


def test_transforms_output_shape():
    x = RngStream(0).uniform01((29, 36, 36)).astype(np.float32)
    assert train_transform(x, RngStream(1)).shape == (29, 28, 28)
    assert eval_transform(x).shape == (29, 28, 28)


def test_train_transform_is_seeded():
    x = RngStream(0).uniform01((5, 36, 36)).astype(np.float32)
    assert np.array_equal(train_transform(x, RngStream(4)), train_transform(x, RngStream(4)))


def test_bad_mixup_mode_rejected():
    with pytest.raises(ValueError):
        AugmentConfig(mixup_mode="uniform")


# -- mixup --------------------------------------------------------------------


def _batch(n=6, seed=0):
    rng = RngStream(seed)
    return ClipBatch(rng.uniform01((n, 3, 4, 4)).astype(np.float32), [int(v) for v in rng.integers(0, 5, n)])


def test_mixup_lambda_one_is_identity():
    b = _batch()
    out = mixup(b, 5, RngStream(1), lam=1.0)
    assert np.array_equal(out.clips, b.clips)
    assert (out.label_weights.argmax(1) == np.array(b.labels)).all() and (out.label_weights.max(1) == 1).all()


def test_mixup_identical_pair_members_unchanged():
    clip = RngStream(0).uniform01((3, 4, 4)).astype(np.float32)
    b = ClipBatch(np.stack([clip, clip]), [2, 2])
    out = mixup(b, 4, RngStream(1), lam=0.5)
    np.testing.assert_allclose(out.clips, b.clips, atol=1e-7)
    assert out.label_weights[:, 2].tolist() == [1.0, 1.0]


@given(st.integers(0, 10_000))
def test_mixup_soft_labels(seed):
    b = _batch(8, seed)
    out = mixup(b, 5, RngStream(seed), alpha=0.4)
    np.testing.assert_allclose(out.label_weights.sum(1), 1.0)
    # column mass equals lam*hist(y) + (1-lam)*hist(y o perm) and so equals hist(y)
    np.testing.assert_allclose(out.label_weights.sum(0), np.bincount(b.labels, minlength=5), atol=1e-9)


def test_fixed_mode_uses_alpha_as_lambda():
    b = ClipBatch(np.stack([np.zeros((1, 2, 2)), np.ones((1, 2, 2))]).astype(np.float32), [0, 1])
    out = mixup(b, 2, RngStream(0), alpha=0.4, mode="fixed")
    vals = sorted(float(c.mean()) for c in out.clips)
    assert vals in ([0.0, 1.0], pytest.approx([0.4, 0.6]))


def test_mixup_rejects_sentence_batches():
    b = ClipBatch(np.zeros((2, 3, 4, 4), np.float32), [[1], [2]], lengths=np.array([3, 2]))
    with pytest.raises(ValueError):
        mixup(b, 3, RngStream(0))


def test_clip_batch_rejects_unnormalized_soft_labels():
    with pytest.raises(ValueError):
        ClipBatch(np.zeros((1, 1, 2, 2)), [0], label_weights=np.array([[0.3, 0.3]]))
