import numpy as np
import pytest

from theory_of_machine.datagen import generate_dataset
from theory_of_machine.model import ModelDims, init_model, model_digest
from theory_of_machine.netcore import ParamBlock
from theory_of_machine.reports import write_training_outputs
from theory_of_machine.trainer import (
    AdamState,
    TrainConfig,
    TrainingError,
    adam_step,
    build_windows,
    evaluate,
    train,
)

FAST = TrainConfig(epochs=2, seq_len=20, stride=10, embed_dim=4, batch_size=8, seed=3)


@pytest.fixture(scope="module")
def tiny():
    return generate_dataset(5, {"SUV": 2, "TRACK": 2}, 200, 2)


def test_adam_zero_gradient_is_fixed_point():
    p = ParamBlock({"w": [1.0, -2.0]})
    st = AdamState()
    p.grads["w"][:] = [0.5, 0.5]
    adam_step(p, st, 0.1)
    before = p["w"].copy()
    m, v = st.m["w"].copy(), st.v["w"].copy()
    p.zero_grads()
    adam_step(p, st, 0.1)
    # parameters still move on stale momentum; the moments themselves decay
    np.testing.assert_allclose(st.m["w"], 0.9 * m, rtol=1e-15)
    np.testing.assert_allclose(st.v["w"], 0.999 * v, rtol=1e-15)
    fresh = ParamBlock({"w": [1.0, -2.0]})
    adam_step(fresh, AdamState(), 0.1)
    assert np.array_equal(fresh["w"], [1.0, -2.0])
    assert not np.array_equal(before, p["w"])


def test_adam_first_step_is_signed_lr():
    p = ParamBlock({"w": [0.0, 0.0, 0.0]})
    p.grads["w"][:] = [3.0, -0.01, 250.0]
    adam_step(p, AdamState(), 1e-3)
    np.testing.assert_allclose(p["w"], [-1e-3, 1e-3, -1e-3], rtol=1e-6)


def test_adam_against_written_out_recurrence():
    rng = np.random.default_rng(0)
    w0 = rng.normal(size=5)
    grads = rng.normal(size=(6, 5))
    p = ParamBlock({"w": w0})
    st = AdamState()
    lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
    w, m, v = w0.copy(), np.zeros(5), np.zeros(5)
    for t, g in enumerate(grads, start=1):
        p.grads["w"][:] = g
        adam_step(p, st, lr, b1, b2, eps)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
        np.testing.assert_allclose(p["w"], w, rtol=0, atol=1e-15)


def test_adam_rejects_nonfinite():
    p = ParamBlock({"w": [1.0]})
    p.grads["w"][:] = np.nan
    with pytest.raises(TrainingError, match="w"):
        adam_step(p, AdamState(), 0.1)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(seq_len=0).validate()
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0).validate()


def test_windows_respect_machines(tiny):
    ws = build_windows(tiny, tiny.split_ids("train"), 20, 10)
    assert len(ws) == 2 * 18
    for k in range(len(ws)):
        traj = tiny.trajectories[int(ws.machine_ids[k])]
        s = int(ws.starts[k])
        assert np.array_equal(ws.pairs[k], traj.stacked()[s : s + 20])
        assert np.array_equal(ws.next_outputs[k], traj.outputs[s + 20])
    assert ws.chain_start.tolist() == [True] + [False] * 17 + [True] + [False] * 17


def test_zero_epochs_returns_initial_model(tiny):
    model, metrics = train(TrainConfig(epochs=0, embed_dim=4, seed=3), tiny)
    assert model.equal(init_model(ModelDims(4), 3))
    assert metrics.epoch_train_mse == []


def test_training_is_deterministic(tiny, tmp_path):
    a, ma = train(FAST, tiny)
    b, mb = train(FAST, tiny)
    assert a.equal(b)
    assert ma.epoch_train_mse == mb.epoch_train_mse
    write_training_outputs(a, ma, FAST, tmp_path / "a")
    write_training_outputs(b, mb, FAST, tmp_path / "b")
    for name in ("checkpoint.json", "metrics.json", "epochs.csv", "loss_curve.svg"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_training_reduces_loss(tiny):
    _, metrics = train(TrainConfig(epochs=6, seq_len=20, stride=10, embed_dim=4, batch_size=8, seed=3), tiny)
    assert metrics.epoch_train_mse[-1] < metrics.epoch_train_mse[0]
    assert all(np.isfinite(metrics.epoch_train_mse))


def test_empty_train_split_rejected(tiny):
    from dataclasses import replace

    from theory_of_machine.datagen import SplitSpec

    empty = replace(tiny.manifest, split=SplitSpec((), tuple(tiny.trajectories)))
    with pytest.raises(TrainingError, match="empty"):
        train(FAST, replace(tiny, manifest=empty))


def test_evaluate_weighting_and_purity(tiny):
    model, _ = train(FAST, tiny)
    digest = model_digest(model)
    r1 = evaluate(model, tiny, "test", 20, 10)
    r2 = evaluate(model, tiny, "test", 20, 10)
    assert model_digest(model) == digest
    assert r1 == r2
    n = sum(r1.window_counts.values())
    weighted = sum(r1.per_machine[k] * r1.window_counts[k] for k in r1.per_machine) / n
    assert r1.aggregate == pytest.approx(weighted, abs=1e-12)
    assert set(r1.per_machine) == set(tiny.split_ids("test"))


def test_exact_model_evaluates_to_zero():
    ds = generate_dataset(6, {"STATELESS": 1}, 120, 0, linear_stateless=True)
    spec = ds.manifest.specs[0]
    model = init_model(ModelDims(4), 1)
    model["theory_w"][:] = 0.0
    model["theory_w"][:, 8:] = 2.0 * spec.params.weights
    model["theory_b"][:] = 0.0
    assert evaluate(model, ds, "train", 20, 10).aggregate < 1e-20
