import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vsrssl.substrate import (
    GRAD_CHECK_MAX_ELEMENTS,
    NonDeterministicProgram,
    ParameterStore,
    RngStream,
    ShapeError,
    draw,
    forward_backward,
    grad_check,
    module_program,
)


def store(**kw):
    return ParameterStore((k, torch.as_tensor(v, dtype=torch.float64)) for k, v in kw.items())


# -- forward_backward ------------------------------------------------------


def test_square_sum_gradient():
    _, g = forward_backward(lambda _, p: (p["x"] * p["x"]).sum(), None, store(x=[1.0, 2.0]))
    assert g["x"].tolist() == [2.0, 4.0]


def test_constant_loss_gives_exact_zero_gradients():
    params = store(a=np.ones((2, 3)), b=[4.0])
    _, g = forward_backward(lambda _, p: torch.tensor(5.0), None, params)
    assert all(bool((v == 0).all()) for v in g.values())
    assert set(g) == {"a", "b"}


def test_unreachable_parameter_is_zero():
    _, g = forward_backward(lambda _, p: p["used"].sum() * 3, None, store(used=[1.0, 1.0], idle=[[2.0]]))
    assert g["used"].tolist() == [3.0, 3.0]
    assert g["idle"].shape == (1, 1) and float(g["idle"]) == 0.0


def test_outputs_returned_alongside_loss():
    out, _ = forward_backward(lambda x, p: ((p["w"] * x).sum(), p["w"] * x), torch.ones(2), store(w=[2.0, 3.0]))
    assert out.tolist() == [2.0, 3.0]


def test_non_scalar_loss_rejected():
    with pytest.raises(ValueError, match="scalar"):
        forward_backward(lambda _, p: p["w"] * 2, None, store(w=[1.0, 2.0]))


def test_shape_mismatch_names_primitive():
    with pytest.raises(ShapeError) as exc:
        forward_backward(lambda x, p: (x @ p["w"]).sum(), torch.ones(2, 3, dtype=torch.float64), store(w=np.ones((4, 2))))
    assert exc.value.primitive == "matmul"


def test_layer_norm_then_sum_matches_finite_differences():
    x = torch.from_numpy(RngStream(0).normal01((3, 4)))
    ln = torch.nn.LayerNorm(4).double()
    params = ParameterStore.from_module(ln)
    # perturb the affine parameters so the loss depends on them non-trivially
    params = params.map(lambda t: t + 0.3 * torch.arange(t.numel(), dtype=t.dtype).reshape(t.shape))
    prog = module_program(ln, lambda m, inp: (m(inp) ** 2).sum())
    assert grad_check(prog, x, params) < 1e-6


# -- grad_check -------------------------------------------------------------


def test_quadratic_grad_check():
    params = store(w=[0.3, -1.2, 2.0])
    assert grad_check(lambda _, p: (p["w"] ** 2).sum() + p["w"][0] * p["w"][1], None, params, 1e-5) < 1e-8


@pytest.mark.parametrize("eps", [0.0, -1e-5])
def test_grad_check_rejects_bad_epsilon(eps):
    with pytest.raises(ValueError):
        grad_check(lambda _, p: p["w"].sum(), None, store(w=[1.0]), eps)


def test_grad_check_requires_f64():
    params = ParameterStore({"w": torch.ones(2, dtype=torch.float32)})
    with pytest.raises(TypeError):
        grad_check(lambda _, p: p["w"].sum(), None, params)


def test_grad_check_element_cap():
    params = store(w=np.zeros(GRAD_CHECK_MAX_ELEMENTS + 1))
    with pytest.raises(ValueError, match="cap"):
        grad_check(lambda _, p: p["w"].sum(), None, params)


def test_active_dropout_rejected():
    drop = torch.nn.Dropout(0.5)
    drop.train()
    with pytest.raises(NonDeterministicProgram):
        grad_check(lambda x, p: drop(p["w"] * x).sum(), torch.ones(64, dtype=torch.float64), store(w=np.ones(64)))


@pytest.mark.parametrize("name,fn", [
    ("relu", lambda x: torch.relu(x)),
    ("silu", torch.nn.functional.silu),
    ("glu", lambda x: torch.nn.functional.glu(x, dim=-1)),
    ("softmax", lambda x: torch.softmax(x, dim=-1)),
    ("mean_pool", lambda x: torch.nn.functional.avg_pool1d(x[None], 2)),
    ("max_pool", lambda x: torch.nn.functional.max_pool1d(x[None], 2)),
    ("concat_slice", lambda x: torch.cat([x[:, :2], x[:, 1:] * 2], dim=-1)),
])
def test_primitive_grad_check(name, fn):
    # strictly distinct, non-zero values keep max/relu away from kinks
    base = torch.linspace(0.11, 1.7, 24, dtype=torch.float64).reshape(4, 6)
    signs = torch.tensor([1, -1, 1, 1, -1, 1], dtype=torch.float64)
    params = ParameterStore({"w": (base * signs).clone()})
    weight = torch.from_numpy(RngStream(1).normal01(64))
    prog = lambda _, p: (fn(p["w"]).reshape(-1) * weight[: fn(p["w"]).numel()]).sum()
    assert grad_check(prog, None, params) < 1e-4, name


def test_conv_and_embedding_grad_check():
    rng = RngStream(2)
    x = torch.from_numpy(rng.normal01((1, 2, 5, 8, 8)))
    ids = torch.tensor([0, 3, 1, 3])
    params = store(k=rng.normal01((3, 2, 3, 3, 3)) * 0.3, k2=rng.normal01((2, 3, 3, 3)) * 0.3,
                   k1=rng.normal01((2, 2, 3)) * 0.3, e=rng.normal01((4, 3)))

    def prog(x, p):
        y3 = torch.nn.functional.conv3d(x, p["k"])
        y2 = torch.nn.functional.conv2d(y3[:, :, 0], p["k2"])
        y1 = torch.nn.functional.conv1d(y2[:, :, 0], p["k1"])
        emb = torch.nn.functional.embedding(ids, p["e"])
        return (y1 ** 2).sum() + (emb.sum(0) ** 2).sum()

    assert grad_check(prog, x, params) < 1e-4


# -- ParameterStore ---------------------------------------------------------

DTYPES = [np.float32, np.float64, np.int32, np.int64, np.uint8]


@st.composite
def stores(draw_):
    n = draw_(st.integers(0, 4))
    out = ParameterStore()
    for i in range(n):
        dtype = draw_(st.sampled_from(DTYPES))
        shape = draw_(st.lists(st.integers(1, 3), min_size=1, max_size=3).map(tuple))
        elements = st.floats(-1e6, 1e6, width=32) if dtype in (np.float32, np.float64) else st.integers(0, 200)
        arr = draw_(arrays(dtype, shape, elements=elements))
        out[f"layer{i}/p{draw_(st.text('abc', max_size=3))}"] = torch.from_numpy(arr)
    return out


@given(stores())
def test_store_byte_round_trip_is_bit_exact(s):
    back = ParameterStore.from_bytes(s.to_bytes())
    assert list(back) == list(s)
    for k in s:
        assert back[k].dtype == s[k].dtype and back[k].shape == s[k].shape
        assert back[k].numpy().tobytes() == s[k].numpy().tobytes()
    assert back.to_bytes() == s.to_bytes()


def test_store_header_layout():
    s = ParameterStore({"w": torch.tensor([1.0, 2.0], dtype=torch.float64)})
    data = s.to_bytes()
    assert data[:4] == b"LIRA"
    assert int.from_bytes(data[4:6], "little") == 1
    assert int.from_bytes(data[6:10], "little") == 1
    assert data.endswith(np.array([1.0, 2.0], "<f8").tobytes())


@pytest.mark.parametrize("shape", [(), (2, 0)])
def test_store_rejects_degenerate_shapes(shape):
    with pytest.raises(ValueError):
        ParameterStore({"w": torch.zeros(shape)}).to_bytes()


def test_store_rejects_bad_magic():
    with pytest.raises(ValueError):
        ParameterStore.from_bytes(b"NOPE" + bytes(10))


def test_store_file_round_trip_and_digest(tmp_path):
    s = store(a=[[1.0, 2.0]], b=[3.0])
    s.save(tmp_path / "s.lira")
    back = ParameterStore.load(tmp_path / "s.lira")
    assert back.digest() == s.digest()
    assert back.select("a").numel() == 2


def test_load_into_shape_mismatch():
    lin = torch.nn.Linear(2, 3)
    bad = ParameterStore({"weight": torch.zeros(3, 3), "bias": torch.zeros(3)})
    with pytest.raises(ShapeError):
        bad.load_into(lin)


# -- RngStream --------------------------------------------------------------


def test_same_seed_same_first_draw():
    assert RngStream(7).uniform01() == RngStream(7).uniform01()


def test_counter_advances():
    r = RngStream(7)
    a, b = r.uniform01(), r.uniform01()
    assert a != b and r.counter == 2


def test_permutation_of_one():
    assert RngStream(0).permutation(1).tolist() == [0]


def test_permutation_rejects_zero():
    with pytest.raises(ValueError):
        RngStream(0).permutation(0)


def test_bernoulli_zero_never_fires():
    assert not RngStream(5).bernoulli(0.0, size=1000).any()


@pytest.mark.parametrize("p", [-0.1, 1.5])
def test_bernoulli_rejects_bad_p(p):
    with pytest.raises(ValueError):
        draw(RngStream(0), "bernoulli", p=p)


@given(st.integers(0, 2**63 - 1), st.integers(2, 50))
def test_permutation_is_a_permutation(seed, n):
    assert sorted(RngStream(seed).permutation(n).tolist()) == list(range(n))


@given(st.integers(0, 2**32))
def test_children_are_independent_and_reproducible(seed):
    r = RngStream(seed)
    a, b = r.child("a"), r.child("b")
    assert a.uniform01() == RngStream(seed).child("a").uniform01()
    assert a.seed != b.seed


def test_uniform_range():
    u = RngStream(11).uniform01(5000)
    assert u.min() >= 0 and u.max() < 1 and abs(u.mean() - 0.5) < 0.02
