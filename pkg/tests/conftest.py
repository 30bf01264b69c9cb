import os
from pathlib import Path

import numpy as np
import pytest

from tddhybrid.config import (SystemConfig, TrainConfig, config_hash, desk_config,
                              desk_ofdm_config, desk_train_config)
from tddhybrid.training import load_checkpoint, save_checkpoint, train

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


class ModelBank:
    """Trains each (system, train, seed) combination once.

    Checkpoints are kept in the pytest cache so repeated runs skip
    training; training is deterministic, so a cached model is identical to
    a fresh one. Set TDDHYBRID_NO_MODEL_CACHE=1 to force retraining.
    """

    def __init__(self, root: Path | None):
        self.root = root
        self.models = {}

    def get(self, system: SystemConfig, train_cfg: TrainConfig | None = None, seed: int = 0):
        train_cfg = train_cfg or desk_train_config()
        key = f"{config_hash(system, train_cfg)}-{seed}"
        if key in self.models:
            return self.models[key]
        path = self.root / key if self.root else None
        if path is not None and (path / "manifest.json").is_file():
            model = load_checkpoint(path)
        else:
            model = train(system, train_cfg, seed=seed).model
            if path is not None:
                save_checkpoint(path, model)
        self.models[key] = model
        return model


@pytest.fixture(scope="session")
def model_bank(request):
    root = None
    if not os.environ.get("TDDHYBRID_NO_MODEL_CACHE"):
        root = Path(request.config.cache.mkdir("tddhybrid-models"))
    return ModelBank(root)


@pytest.fixture(scope="session")
def desk():
    return desk_config()


@pytest.fixture(scope="session")
def desk_ofdm():
    return desk_ofdm_config()


@pytest.fixture(scope="session")
def desk_model(model_bank, desk):
    """The reference desk model: flat, K=4, L_a=6, L_d=2, 10 dB."""
    return model_bank.get(desk)


@pytest.fixture(scope="session")
def desk_ofdm_model(model_bank, desk_ofdm):
    return model_bank.get(desk_ofdm)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def criterion():
    """Record the outcome of one acceptance criterion for the summary."""

    def record(number: int, name: str, passed: bool, detail: str = "") -> None:
        ACCEPTANCE[number] = (name, bool(passed), detail)
        print(f"criterion {number} {'PASS' if passed else 'FAIL'}: {name} {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        name, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if passed else 'FAIL'}  {name}  {detail}")
