"""Scenario and training configuration.

A config file is a flat JSON object. Keys are `SystemConfig` field names;
`TrainConfig` field names may appear in the same document. Anything else
is rejected.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised for unreadable config files or violated invariants."""


@dataclass(frozen=True)
class SystemConfig:
    # antenna geometry: M = M_h * M_v, spacing in wavelengths
    M_h: int = 8
    M_v: int = 8
    delta_over_lambda: float = 0.5
    N_RF: int = 4
    K: int = 4
    N_c: int = 128
    # pilot frames: L = L_a + L_d
    L: int = 8
    L_a: int = 6
    L_d: int = 2
    L_p: int = 4
    d_max: int = 4
    T_s: float = 1.0 / 1760.0  # microseconds
    roll_off: float = 0.8
    # linear powers; defaults give 10 dB uplink and downlink SNR
    P_U: float = 10.0
    P_D: float = 10.0
    sigma2: float = 1.0
    # phase-shifter levels, 0 means infinite resolution
    Q: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        checks = [
            (self.M_h >= 1 and self.M_v >= 1, "M_h >= 1 and M_v >= 1"),
            (self.N_RF >= 1, "N_RF >= 1"),
            (self.K >= 1, "K >= 1"),
            (self.K <= self.N_RF, "K <= N_RF"),
            (self.N_c >= 1, "N_c >= 1"),
            (self.L_a >= 1, "L_a >= 1"),
            (self.L_d >= 1, "L_d >= 1"),
            (self.L_a + self.L_d == self.L, "L_a + L_d = L"),
            (self.L_p >= 1, "L_p >= 1"),
            (0 <= self.d_max < self.N_c, "0 <= d_max < N_c"),
            (self.T_s > 0, "T_s > 0"),
            (0 < self.roll_off <= 1, "0 < roll_off <= 1"),
            (self.P_U > 0 and self.P_D > 0, "P_U > 0 and P_D > 0"),
            (self.sigma2 > 0, "sigma2 > 0"),
            (self.delta_over_lambda > 0, "delta_over_lambda > 0"),
            (self.Q == 0 or self.Q >= 2, "Q = 0 or Q >= 2"),
            (0 <= self.seed < 2**64, "0 <= seed < 2^64"),
        ]
        for ok, relation in checks:
            if not ok:
                raise ConfigError(f"{relation} violated")

    @property
    def M(self) -> int:
        return self.M_h * self.M_v

    @property
    def flat(self) -> bool:
        return self.N_c == 1

    @property
    def snr_ul_db(self) -> float:
        return 10 * math.log10(self.P_U / self.sigma2)

    @property
    def snr_dl_db(self) -> float:
        return 10 * math.log10(self.P_D / self.sigma2)

    def replace(self, **changes: Any) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def with_pilots(self, L_a: int, L_d: int) -> "SystemConfig":
        return self.replace(L=L_a + L_d, L_a=L_a, L_d=L_d)

    def with_snr(self, snr_ul_db: float | None = None,
                 snr_dl_db: float | None = None) -> "SystemConfig":
        """Set uplink/downlink SNR in dB by moving P_U/P_D at fixed sigma2."""
        changes = {}
        if snr_ul_db is not None:
            changes["P_U"] = self.sigma2 * 10 ** (snr_ul_db / 10)
        if snr_dl_db is not None:
            changes["P_D"] = self.sigma2 * 10 ** (snr_dl_db / 10)
        return self.replace(**changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class TrainConfig:
    widths: tuple[int, ...] = (1024, 512, 256)
    n_filters: int = 16
    batch_size: int = 500
    epochs: int = 1000
    lr: float = 1e-3
    lr_decay_every: int = 100
    lr_decay_factor: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-7
    bn_momentum: float = 0.99
    bn_eps: float = 1e-5
    n_train: int = 50_000  # K-user realizations
    n_val: int = 1000  # single-user samples
    dtype: str = "float64"  # arithmetic precision during training

    def __post_init__(self) -> None:
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        checks = [
            (len(self.widths) >= 1 and min(self.widths) >= 1, "widths non-empty and positive"),
            (self.n_filters >= 1, "n_filters >= 1"),
            (self.batch_size >= 2, "batch_size >= 2"),
            (self.epochs >= 1, "epochs >= 1"),
            (self.lr > 0, "lr > 0"),
            (self.lr_decay_every >= 1, "lr_decay_every >= 1"),
            (0 <= self.bn_momentum < 1, "0 <= bn_momentum < 1"),
            (self.n_train >= 1 and self.n_val >= 1, "n_train >= 1 and n_val >= 1"),
            (self.dtype in ("float32", "float64"), "dtype in {float32, float64}"),
        ]
        for ok, relation in checks:
            if not ok:
                raise ConfigError(f"{relation} violated")

    def replace(self, **changes: Any) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["widths"] = list(self.widths)
        return d


_SYSTEM_KEYS = {f.name for f in dataclasses.fields(SystemConfig)}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}


def _read_document(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    if not text.strip():
        return {}
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a flat JSON object")
    unknown = set(doc) - _SYSTEM_KEYS - _TRAIN_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return doc


def config_from_dict(doc: dict[str, Any]) -> SystemConfig:
    return SystemConfig(**{k: v for k, v in doc.items() if k in _SYSTEM_KEYS})


def load_config(path: str | Path) -> SystemConfig:
    """Read a `SystemConfig` from JSON, filling absent keys with defaults."""
    return config_from_dict(_read_document(path))


def load_train_config(path: str | Path) -> TrainConfig:
    doc = _read_document(path)
    return TrainConfig(**{k: v for k, v in doc.items() if k in _TRAIN_KEYS})


def save_config(path: str | Path, config: SystemConfig,
                train: TrainConfig | None = None) -> None:
    doc = config.to_dict()
    if train is not None:
        doc.update(train.to_dict())
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def config_hash(config: SystemConfig, train: TrainConfig | None = None) -> str:
    doc = {"system": config.to_dict(), "train": train.to_dict() if train else None}
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def desk_config(**overrides: Any) -> SystemConfig:
    """Desk-scale flat scenario: 4x4 UPA, four RF chains, four users."""
    base = SystemConfig(M_h=4, M_v=4, N_RF=4, K=4, N_c=1, d_max=0,
                        L=8, L_a=6, L_d=2)
    return base.replace(**overrides)


def desk_ofdm_config(**overrides: Any) -> SystemConfig:
    base = desk_config(N_c=16, d_max=4)
    return base.replace(**overrides)


def desk_train_config(**overrides: Any) -> TrainConfig:
    """Widths scaled by M/64 = 1/4; 5000 realizations = 20k user samples; float32."""
    base = TrainConfig(widths=(256, 128, 64), epochs=100, n_train=5000, n_val=2000,
                       dtype="float32")
    return base.replace(**overrides)


@dataclass(frozen=True)
class RunSpec:
    """Scenario plus training settings, as read from one config file."""

    system: SystemConfig = field(default_factory=SystemConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def load_run(path: str | Path) -> RunSpec:
    doc = _read_document(path)
    return RunSpec(
        system=config_from_dict(doc),
        train=TrainConfig(**{k: v for k, v in doc.items() if k in _TRAIN_KEYS}),
    )
