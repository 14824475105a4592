from dataclasses import replace

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from vsrssl.corpus import ManifestEntry
from vsrssl.models import WordModel, preset
from vsrssl.substrate import ParameterStore, module_digest
from vsrssl.train import (
    MetricRecord,
    Optimizer,
    OptimState,
    TrainPlan,
    plan_defaults,
    run_pretext,
    run_sentence_downstream,
    run_word_downstream,
    write_metrics_csv,
)
from vsrssl.train.loops import RandomProjectionEncoder, curriculum_threshold, length_filter

CFG = preset("desk")


@pytest.fixture(scope="module")
def pretext(tiny_corpus):
    plan = plan_defaults("pretext", epochs=2, batch_size=8, warmup=4)
    return run_pretext(plan, tiny_corpus, CFG)


def word_plan(**kw):
    return plan_defaults("word", **{"epochs": 1, "min_steps": 0, "batch_size": 8, **kw})


def sentence_plan(**kw):
    return plan_defaults("sentence", **{"epochs": 1, "batch_size": 8, "beam": 2, "curriculum_quantile": None, **kw})


# -- plans -----------------------------------------------------------------------


@pytest.mark.parametrize("regime", ["frozen", "finetuned"])
def test_downstream_regimes_need_checkpoint(regime):
    with pytest.raises(ValueError, match="checkpoint"):
        plan_defaults("word", regime=regime).validate()


@pytest.mark.parametrize("kw", [dict(task="audio"), dict(regime="linear"), dict(fraction=0.0),
                                dict(fraction=1.5), dict(schedule="cosine"), dict(optimizer="sgd")])
def test_bad_plans_rejected(kw):
    with pytest.raises(ValueError):
        replace(plan_defaults("word"), **kw).validate()


def test_plan_name():
    assert plan_defaults("word", fraction=0.05, seed=2).name == "word-supervised-f0.05-s2"


def test_paper_scale_keeps_published_optimiser_settings():
    p = plan_defaults("pretext", "paper")
    assert (p.beta1, p.beta2, p.eps, p.warmup, p.batch_size) == (0.9, 0.98, 1e-9, 25000, 32)
    w = plan_defaults("word", "paper")
    assert (w.optimizer, w.lr, w.weight_decay) == ("adamw", 3e-4, 0.01)
    assert plan_defaults("sentence", "paper").max_frames == 600


# -- pretext -------------------------------------------------------------------


def test_pretext_records_finite_losses(pretext):
    l1 = [r for r in pretext.records if r.metric == "l1_loss"]
    assert len(l1) >= 2 and all(np.isfinite(r.value) for r in l1)
    assert pretext.info["model_cfg"].head.out_dim == 20


def test_pretext_is_bit_reproducible(tiny_corpus, pretext, tmp_path):
    again = run_pretext(plan_defaults("pretext", epochs=2, batch_size=8, warmup=4), tiny_corpus, CFG)
    write_metrics_csv(tmp_path / "a.csv", pretext.records)
    write_metrics_csv(tmp_path / "b.csv", again.records)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert pretext.store.digest() == again.store.digest()


def test_pretext_without_standardisation_stays_finite(tiny_corpus):
    plan = plan_defaults("pretext", epochs=1, batch_size=8, warmup=4, target_standardize=False)
    assert all(np.isfinite(r.value) for r in run_pretext(plan, tiny_corpus, CFG).records)


# -- word ----------------------------------------------------------------------


def test_frozen_encoder_is_untouched(tiny_corpus, pretext):
    source = pretext.store
    plan = word_plan(regime="frozen", checkpoint="pretext.lira", tap="res-b3")
    res = run_word_downstream(plan, tiny_corpus, CFG, source)
    assert res.info["encoder_digest_before"] == res.info["encoder_digest_after"]
    enc = ParameterStore.from_module(res.model.encoder, "encoder/")
    for k, v in enc.items():
        assert v.numpy().tobytes() == source[k].numpy().tobytes()


def test_finetuned_encoder_moves(tiny_corpus, pretext):
    plan = word_plan(regime="finetuned", checkpoint="pretext.lira")
    res = run_word_downstream(plan, tiny_corpus, CFG, pretext.store)
    assert res.info["encoder_digest_before"] != res.info["encoder_digest_after"]
    assert 0.0 <= res.metrics["accuracy"] <= 1.0


def test_word_run_is_deterministic(tiny_corpus):
    a = run_word_downstream(word_plan(seed=4), tiny_corpus, CFG)
    b = run_word_downstream(word_plan(seed=4), tiny_corpus, CFG)
    assert a.records == b.records and a.store.digest() == b.store.digest()


def test_label_fraction_limits_training_set(tiny_corpus):
    res = run_word_downstream(word_plan(fraction=0.25), tiny_corpus, CFG)
    assert res.info["n_train"] == int(np.ceil(0.25 * len(tiny_corpus.word.split("train"))))


def test_random_projection_baseline_runs(tiny_corpus):
    plan = word_plan(regime="frozen", checkpoint="x")
    res = run_word_downstream(plan, tiny_corpus, CFG, encoder=RandomProjectionEncoder(28 * 28, 16, 0))
    assert res.info["encoder_digest_before"] == res.info["encoder_digest_after"]


def test_invalid_tap_rejected(tiny_corpus):
    with pytest.raises(KeyError):
        run_word_downstream(word_plan(tap="res-b9"), tiny_corpus, CFG)


def test_zero_lr_step_changes_nothing():
    model = WordModel(CFG)
    clips = torch.randn(2, 29, 28, 28)
    model(clips).sum().backward()
    before = ParameterStore.from_module(model).digest()
    Optimizer(model, OptimState("adamw", weight_decay=0.0)).step(0.0)
    assert ParameterStore.from_module(model).digest() == before


# -- sentence ----------------------------------------------------------------


def _entries(lengths):
    return [ManifestEntry(f"u{i}", "train", "", t, 0, transcript=[1]) for i, t in enumerate(lengths)]


@given(st.lists(st.integers(1, 80), min_size=1, max_size=30), st.integers(1, 80), st.floats(1, 81))
def test_length_filter_is_exact(lengths, max_frames, below):
    entries = _entries(lengths)
    kept = {e.id for e in length_filter(entries, max_frames, below)}
    assert kept == {e.id for e in entries if e.T_v <= max_frames and e.T_v < below}


def test_curriculum_threshold_sources():
    entries = _entries([10, 20, 30, 40, 50])
    assert curriculum_threshold(sentence_plan(curriculum=25), entries) == 25.0
    assert curriculum_threshold(sentence_plan(curriculum_quantile=0.5), entries) == 30.0
    assert curriculum_threshold(sentence_plan(), entries) is None


def test_max_frames_excludes_long_utterances(tiny_corpus):
    lengths = sorted(e.T_v for e in tiny_corpus.sentence.split("train"))
    cap = lengths[len(lengths) // 2]
    res = run_sentence_downstream(sentence_plan(max_frames=cap, curriculum_quantile=0.5), tiny_corpus, CFG,
                                  evaluate=False)
    by_id = {e.id: e.T_v for e in tiny_corpus.sentence.entries}
    assert all(by_id[i] <= cap for i in res.info["train_ids"])
    assert all(by_id[i] < res.info["threshold"] for i in res.info["stage1_ids"])
    assert len(res.info["train_ids"]) < len(lengths)


def test_curriculum_excluding_everything_rejected(tiny_corpus):
    with pytest.raises(ValueError, match="excludes every"):
        run_sentence_downstream(sentence_plan(curriculum=1), tiny_corpus, CFG, evaluate=False)


def test_max_frames_excluding_everything_rejected(tiny_corpus):
    with pytest.raises(ValueError):
        run_sentence_downstream(sentence_plan(max_frames=1), tiny_corpus, CFG, evaluate=False)


def test_sentence_run_reports_wer(tiny_corpus):
    res = run_sentence_downstream(sentence_plan(), tiny_corpus, CFG)
    metrics = {r.metric for r in res.records}
    assert {"ctc_loss", "ce_loss", "wer"} <= metrics
    assert res.metrics["wer"] >= 0
    assert all(isinstance(r, MetricRecord) for r in res.records)
