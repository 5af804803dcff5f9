import numpy as np
import pytest

from reconlab.unet import (
    AdamState,
    TrainConfig,
    TrainingError,
    UNetConfig,
    adam_step,
    history_csv,
    load_checkpoint,
    save_checkpoint,
    train,
)

TINY = UNetConfig(levels=2, base_channels=4, frames=4)


def tiny_pairs(n=3, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        truth = rng.random((4, 8, 8)).astype(np.float32)
        aliased = np.clip(truth + 0.1 * rng.standard_normal(truth.shape), 0, 1).astype(np.float32)
        out.append((aliased, truth))
    return out


def test_adam_first_step_is_lr():
    cfg = TrainConfig(lr=1e-3)
    for g in (0.5, -3.0, 1e-4):
        p, _ = adam_step({"w": np.array([1.0])}, {"w": np.array([g])}, AdamState(), cfg)
        step = abs(p["w"][0] - 1.0)
        assert step == pytest.approx(cfg.lr * abs(g) / (abs(g) + cfg.eps), rel=1e-9)
        assert step == pytest.approx(cfg.lr, rel=1e-3)


def test_adam_zero_gradient():
    cfg = TrainConfig()
    params = {"w": np.array([2.0, -1.0])}
    state = AdamState(3, {"w": np.array([0.4, 0.2])}, {"w": np.array([0.1, 0.1])})
    new, st = adam_step(params, {"w": np.zeros(2)}, AdamState(), cfg)
    assert np.array_equal(new["w"], params["w"])
    _, st = adam_step(params, {"w": np.zeros(2)}, state, cfg)
    assert np.allclose(st.m["w"], 0.9 * state.m["w"])
    assert np.allclose(st.v["w"], 0.999 * state.v["w"])
    assert st.t == 4


def test_adam_rejects_nonfinite():
    with pytest.raises(TrainingError):
        adam_step({"w": np.zeros(1)}, {"w": np.array([np.nan])}, AdamState(), TrainConfig())


@pytest.mark.parametrize("bad", [dict(epochs=0), dict(batch=0), dict(lr=0.0), dict(loss="L3")])
def test_train_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_training_reduces_loss_and_is_deterministic():
    cfg = TrainConfig(epochs=8, batch=2, lr=3e-3, seed=4)
    a = train(tiny_pairs(), TINY, cfg)
    b = train(tiny_pairs(), TINY, cfg)
    assert a.history == b.history
    for k in a.net.params:
        assert np.array_equal(a.net.params[k], b.net.params[k])
    assert all(np.isfinite(a.history))
    assert a.history[-1] < a.initial_loss


def test_seed_changes_trajectory():
    a = train(tiny_pairs(), TINY, TrainConfig(epochs=2, batch=1, seed=1))
    b = train(tiny_pairs(), TINY, TrainConfig(epochs=2, batch=1, seed=2))
    assert a.history != b.history


def test_l1_training_runs():
    res = train(tiny_pairs(), TINY, TrainConfig(epochs=3, batch=3, loss="l1"))
    assert res.history[-1] < res.initial_loss


def test_train_rejects_bad_input():
    with pytest.raises(ValueError):
        train([], TINY, TrainConfig(epochs=1))
    p = tiny_pairs(2)
    p[1] = (p[1][0][:2], p[1][1][:2])
    with pytest.raises(ValueError):
        train(p, TINY, TrainConfig(epochs=1))


def test_periodic_checkpoints(tmp_path):
    train(tiny_pairs(2), TINY, TrainConfig(epochs=4, checkpoint_every=2), checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch_0002.ckpt", "epoch_0004.ckpt"]


def test_checkpoint_roundtrip(tmp_path):
    res = train(tiny_pairs(2), TINY, TrainConfig(epochs=1))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, res.net, {"pattern": "TGA_ROT"})
    net, extra = load_checkpoint(path)
    assert extra == {"pattern": "TGA_ROT"}
    assert net.config == res.net.config
    x = tiny_pairs(1, seed=9)[0][0]
    assert np.array_equal(net(x), res.net(x))
    path.write_bytes(b"garbage")
    with pytest.raises(ValueError):
        load_checkpoint(path)


def test_history_csv():
    assert history_csv([0.5, 0.25]) == "epoch,mean_loss\n1,0.5\n2,0.25\n"
