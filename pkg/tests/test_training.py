import csv

import numpy as np
import pytest

from tddhybrid.channel import generate_channels
from tddhybrid.config import TrainConfig, desk_config, desk_ofdm_config, desk_train_config
from tddhybrid.rng import make_rng
from tddhybrid.sudnn import init_model
from tddhybrid.training import (Adam, TrainingDiverged, learning_rate, load_checkpoint,
                                save_checkpoint, train, write_history)

TINY = desk_train_config(widths=(16, 8), epochs=3, n_train=300, n_val=100, batch_size=100)


def test_learning_rate_schedule():
    assert learning_rate(TrainConfig(), 250) == pytest.approx(1e-3 / 4)
    assert learning_rate(TrainConfig(), 99) == 1e-3
    assert learning_rate(TrainConfig(), 100) == 5e-4


def test_adam_first_step_moves_by_lr():
    p = {"w": np.array([1.0, -2.0])}
    Adam(lr=0.1).update(p, {"w": np.array([3.0, -0.5])})
    assert np.allclose(p["w"], [0.9, -1.9], atol=1e-6)


def test_training_is_deterministic_and_snapshots_best():
    cfg = desk_config()
    a = train(cfg, TINY, seed=5)
    b = train(cfg, TINY, seed=5)
    for k in a.model.params:
        assert np.array_equal(a.model.params[k], b.model.params[k])
    assert a.best_val_loss <= a.initial_val_loss
    assert len(a.history) == 3
    assert a.model.meta["adam_betas"] == [0.9, 0.999]
    assert all(v.dtype == np.float64 for v in a.model.params.values())


def test_training_float64_path():
    res = train(desk_ofdm_config(), TINY.replace(dtype="float64", epochs=1, n_train=100,
                                                 batch_size=50, n_val=40), seed=1)
    assert np.isfinite(res.best_val_loss)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_last_good():
    cfg = desk_config()
    H = generate_channels(cfg, 300, seed=1)
    H[5] = np.nan
    with pytest.raises(TrainingDiverged) as info:
        train(cfg, TINY, H_train=H, seed=1)
    assert info.value.last_good is not None


def test_checkpoint_round_trip(tmp_path):
    cfg = desk_ofdm_config()
    m = init_model(cfg, TINY, make_rng(0, 3))
    m.meta["note"] = "x"
    save_checkpoint(tmp_path / "ck", m)
    back = load_checkpoint(tmp_path / "ck")
    assert back.mode == "ofdm" and back.widths == m.widths and back.meta["note"] == "x"
    for k in m.params:
        assert np.array_equal(back.params[k], m.params[k])
    for k in m.buffers:
        assert np.array_equal(back.buffers[k], m.buffers[k])


def test_history_csv(tmp_path):
    res = train(desk_config(), TINY.replace(epochs=2), seed=2)
    write_history(tmp_path / "h.csv", res.history)
    rows = list(csv.DictReader(open(tmp_path / "h.csv")))
    assert [r["epoch"] for r in rows] == ["0", "1"]
    assert set(rows[0]) == {"epoch", "train_loss", "val_loss", "lr"}
