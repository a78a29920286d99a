import json

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sspitch.losses import total_loss
from sspitch.autodiff import ops
from sspitch.model import ModelConfig, init_model
from sspitch.trainer import (FrameDataset, SampleWeightTable, TrainConfig, TrainingError,
                             apply_weight_update, e_step, lambda_anneal, normalize_sce,
                             silent_gradient_norm, train)

TINY = ModelConfig(stem_channels=4, stage_channels=(4, 8), blocks_per_stage=1, groups=2,
                   head_taps=9, seed=3)


def _oracle_lambda(e):
    with mpmath.workdps(50):
        return mpmath.expm1(mpmath.mpf(e) ** mpmath.mpf("1.25") / 1000)


def _dataset(n=24, seed=0):
    rng = np.random.default_rng(seed)
    frames = rng.normal(size=(n, 269))
    return FrameDataset(frames, [f"c{i % 3}" for i in range(n)], np.arange(n))


@pytest.mark.parametrize("e", [0, 5, 10, 25, 50, 100])
def test_lambda_matches_high_precision(e):
    want = _oracle_lambda(e)
    got = lambda_anneal(e)
    if want == 0:
        assert got == 0.0
    else:
        assert abs(got - float(want)) <= 1e-12 * float(want)


def test_lambda_reference_values():
    assert lambda_anneal(5) == pytest.approx(0.0075048, abs=1e-7)
    assert lambda_anneal(50) == pytest.approx(0.142201, abs=1e-6)


def test_lambda_rejects_negative_epoch():
    with pytest.raises(ValueError):
        lambda_anneal(-1)


@given(st.floats(0, 500), st.floats(0, 500))
def test_lambda_is_monotone(a, b):
    lo, hi = sorted((a, b))
    assert lambda_anneal(lo) <= lambda_anneal(hi)


def test_normalize_spans_unit_interval():
    out = normalize_sce([3.0, 5.0, 4.0])
    assert out[0] == 0.0
    assert out[1] == pytest.approx(1.0, abs=1e-11)
    assert out[2] == pytest.approx(0.5, abs=1e-11)


def test_normalize_constant_gives_zeros():
    np.testing.assert_array_equal(normalize_sce(np.full(5, 2.5)), np.zeros(5))


def test_normalize_empty():
    with pytest.raises(ValueError):
        normalize_sce([])


def test_weight_update_worked_example():
    # w - lambda * s, clipped at zero
    out = apply_weight_update([1.0, 0.5, 0.01], [0.0, 0.5, 1.0], 0.1)
    np.testing.assert_allclose(out, [1.0, 0.45, 0.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30), st.floats(0, 2),
       st.integers(0, 2**31 - 1))
def test_weight_update_never_increases(w, lam, seed):
    s = np.random.default_rng(seed).uniform(size=len(w))
    out = apply_weight_update(w, s, lam)
    assert np.all(out <= np.asarray(w))
    assert np.all(out >= 0)


def test_e_step_shrinks_and_records_scores():
    ds = _dataset()
    model = init_model(TINY)
    table = SampleWeightTable.initial(ds)
    new = e_step(model, ds, table, epoch=10)
    assert np.all(new.weights <= table.weights)
    assert np.nanmin(new.sce_norm) == 0.0
    assert np.nanmax(new.sce_norm) == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(new.weights, 1.0 - lambda_anneal(10) * new.sce_norm)


def test_e_step_length_mismatch():
    ds = _dataset()
    table = SampleWeightTable.initial(_dataset(n=5))
    with pytest.raises(ValueError):
        e_step(init_model(TINY), ds, table, epoch=5)


def test_weight_table_csv_round_trip(tmp_path):
    ds = _dataset(n=6)
    table = SampleWeightTable.initial(ds)
    table.weights = np.linspace(0, 1, 6)
    table.sce_norm[2:] = 0.25
    path = tmp_path / "weights.csv"
    table.write_csv(path)
    back = SampleWeightTable.read_csv(path)
    assert back.clips == table.clips
    np.testing.assert_array_equal(back.frames, table.frames)
    np.testing.assert_allclose(back.weights, table.weights, atol=1e-9)
    assert np.isnan(back.sce_norm[:2]).all()
    assert path.read_text().splitlines()[0] == "clip,frame,weight,sce_norm"


def test_weight_table_bad_header(tmp_path):
    path = tmp_path / "w.csv"
    path.write_text("a,b\n")
    with pytest.raises(ValueError, match="header"):
        SampleWeightTable.read_csv(path)


def test_config_validation():
    with pytest.raises(ValueError, match="multiple"):
        TrainConfig(epochs=7, k_epochs=5).validate()
    with pytest.raises(ValueError):
        TrainConfig(lr=0).validate()
    with pytest.raises(ValueError):
        TrainConfig(delta_max=269).validate()


def test_empty_dataset_rejected():
    ds = FrameDataset(np.zeros((0, 269)), [], np.zeros(0, dtype=np.int64))
    with pytest.raises(ValueError, match="empty"):
        train(ds, TrainConfig(epochs=0))


def _short_run(tmp_path, name, **kw):
    cfg = TrainConfig(epochs=4, k_epochs=2, batch_size=8, checkpoint_every=2,
                      calibrate=False, model=TINY, **kw)
    return train(_dataset(), cfg, out_dir=tmp_path / name, log_path=tmp_path / f"{name}.jsonl")


def test_training_is_deterministic(tmp_path):
    m1, t1, _ = _short_run(tmp_path, "a")
    m2, t2, _ = _short_run(tmp_path, "b")
    for k in m1.params:
        np.testing.assert_array_equal(m1.params[k].data, m2.params[k].data)
    np.testing.assert_array_equal(t1.weights, t2.weights)
    assert (tmp_path / "a.jsonl").read_text() == (tmp_path / "b.jsonl").read_text()


def test_training_log_and_checkpoints(tmp_path):
    _, table, records = _short_run(tmp_path, "run")
    lines = [json.loads(s) for s in (tmp_path / "run.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in lines] == [0, 1, 2, 3]
    # warm-up epochs keep full weights and use no annealing
    assert lines[0]["lambda"] == lines[1]["lambda"] == 0.0
    assert lines[0]["weight_deciles"] == [1.0] * 11
    assert lines[2]["lambda"] == pytest.approx(lambda_anneal(2))
    assert lines[0]["silent_grad_norm"] is None
    assert lines[2]["silent_grad_norm"] < 1e-6
    assert sorted(p.name for p in (tmp_path / "run").iterdir()) == [
        "model_e002.plck", "model_e004.plck"]
    assert np.all(table.weights <= 1.0)


def test_weights_only_shrink_across_e_steps(tmp_path):
    _, _, records = _short_run(tmp_path, "run")
    deciles = [np.asarray(r["weight_deciles"]) for r in records if "weight_deciles" in r]
    for a, b in zip(deciles, deciles[1:]):
        assert np.all(b <= a)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises(tmp_path):
    # an absurd step size drives the parameters to overflow
    cfg = TrainConfig(epochs=2, k_epochs=1, batch_size=8, lr=1e300, calibrate=False,
                      model=TINY)
    with pytest.raises(TrainingError, match="non-finite"):
        train(_dataset(), cfg)


def test_silent_frames_have_zero_gradient():
    assert silent_gradient_norm(init_model(TINY)) < 1e-9


def test_zero_weight_frame_is_gated():
    model = init_model(TINY, dtype=np.float64)
    rng = np.random.default_rng(5)
    xa, xb = rng.normal(size=(4, 269)), rng.normal(size=(4, 269))
    deltas = np.array([3, -2, 7, 1])
    w = np.array([0.6, 0.0, 1.0, 0.0])
    keep = w > 0

    def grads(a, b, d, ww):
        for p in model.params.values():
            p.zero_grad()
        y = model(np.concatenate([a, b]))
        n = len(a)
        total_loss(ops.getitem(y, slice(0, n)), ops.getitem(y, slice(n, 2 * n)), d,
                   ww).total.backward()
        return {k: p.grad.copy() for k, p in model.params.items()}

    full = grads(xa, xb, deltas, w)
    part = grads(xa[keep], xb[keep], deltas[keep], w[keep])
    # normalisers 1/4 and 1/2 differ by an exact power of two
    for k in full:
        np.testing.assert_array_equal(full[k] * 2.0, part[k])
