"""Uplink pilot phase: analog combining, noise, decorrelation, quantization.

Received blocks follow the per-user layout of one pilot phase:
(..., K, L_phase * rows, N_c), rows grouped frame by frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .rng import complex_normal

UNIT_TOL = 1e-9


class SensingError(ValueError):
    pass


def quantize_phases(phases, Q: int) -> np.ndarray:
    """Round phases to the nearest point of {2 pi q / Q}; ties go to the smaller q."""
    if Q < 2:
        raise ValueError("Q must be >= 2")
    step = 2 * np.pi / Q
    x = np.mod(np.asarray(phases, dtype=float), 2 * np.pi) / step
    q = np.mod(np.ceil(x - 0.5), Q)
    return q * step


@dataclass
class SensingMatrix:
    """Unit-modulus combiners, stored as phases of shape (frames, rows, M)."""

    phases: np.ndarray

    def __post_init__(self) -> None:
        self.phases = np.asarray(self.phases, dtype=float)
        if self.phases.ndim != 3:
            raise SensingError("phases must be (frames, rows, M)")

    @property
    def frames(self) -> int:
        return self.phases.shape[0]

    @property
    def rows(self) -> int:
        return self.phases.shape[1]

    @property
    def matrices(self) -> np.ndarray:
        return np.exp(1j * self.phases)

    @property
    def stacked(self) -> np.ndarray:
        """Overall sensing matrix, (frames * rows, M)."""
        return self.matrices.reshape(-1, self.phases.shape[-1])

    def quantized(self, Q: int) -> "SensingMatrix":
        return self if Q == 0 else SensingMatrix(quantize_phases(self.phases, Q))


def random_sensing(frames: int, rows: int, M: int, rng: np.random.Generator) -> SensingMatrix:
    return SensingMatrix(rng.uniform(0.0, 2 * np.pi, size=(frames, rows, M)))


def sensing_noise(rng: np.random.Generator, shape, sigma2: float) -> np.ndarray:
    """Antenna-domain noise, CN(0, sigma2 I)."""
    return complex_normal(rng, shape, sigma2)


def combine(H: np.ndarray, W: np.ndarray, noise: np.ndarray | None,
            P_U: float) -> np.ndarray:
    """y^(l) = W^(l) (sqrt(P_U) h + n^(l)), stacked over frames.

    H: (..., M, N_c); W: (frames, rows, M) or (..., frames, rows, M);
    noise: (..., frames, M, N_c) or None. Returns (..., frames*rows, N_c).
    """
    u = np.sqrt(P_U) * H[..., None, :, :]
    if noise is not None:
        u = u + noise
    y = W @ u  # (..., frames, rows, N_c)
    return y.reshape(*y.shape[:-3], -1, y.shape[-1])


def observe_pilots(H: np.ndarray, sensing: SensingMatrix, config: SystemConfig,
                   rng: np.random.Generator | None) -> np.ndarray:
    """Received pilots per user after decorrelation.

    H has shape (..., M, N_c), typically (K, M, N_c). Noise is injected at
    the antennas and combined through each frame's W, so its per-frame
    covariance is sigma2 W W^H. Passing rng=None gives the noiseless block.
    """
    H = np.asarray(H)
    if H.shape[-2] != sensing.phases.shape[-1]:
        raise SensingError(
            f"channel has {H.shape[-2]} antennas, sensing expects {sensing.phases.shape[-1]}")
    noise = None
    if rng is not None:
        shape = (*H.shape[:-2], sensing.frames, H.shape[-2], H.shape[-1])
        noise = sensing_noise(rng, shape, config.sigma2)
    return combine(H, sensing.matrices, noise, config.P_U)


def digital_phase_sensing(V_RF: np.ndarray, L_d: int) -> SensingMatrix:
    """Sensing for the digital pilot phase: every frame equals V_RF^H."""
    V_RF = np.asarray(V_RF)
    if np.max(np.abs(np.abs(V_RF) - 1.0)) > UNIT_TOL:
        raise SensingError("analog precoder entries must have unit modulus")
    if L_d < 1:
        raise SensingError("L_d must be >= 1")
    phases = np.angle(V_RF.conj().T)
    return SensingMatrix(np.repeat(phases[None], L_d, axis=0))


@dataclass
class PilotMatrixSet:
    """Per-subcarrier pilots X[j] = exp(i phi[j]) X with X the unitary K-point DFT."""

    base: np.ndarray
    rotation: np.ndarray

    @classmethod
    def create(cls, K: int, N_c: int, rng: np.random.Generator | None = None) -> "PilotMatrixSet":
        idx = np.arange(K)
        base = np.exp(-2j * np.pi * np.outer(idx, idx) / K) / np.sqrt(K)
        rotation = np.zeros(N_c) if rng is None else rng.uniform(0, 2 * np.pi, size=N_c)
        return cls(base, rotation)

    @property
    def matrices(self) -> np.ndarray:
        """(N_c, K, K) pilot matrices; row k is user k's pilot sequence."""
        return np.exp(1j * self.rotation)[:, None, None] * self.base[None]


def transmit_pilots(H: np.ndarray, sensing: SensingMatrix, pilots: PilotMatrixSet,
                    config: SystemConfig, rng: np.random.Generator | None) -> np.ndarray:
    """Raw received block before decorrelation.

    H: (K, M, N_c). Returns (frames, N_c, rows, K): in frame l, subcarrier j
    the base station sees W^(l) (sqrt(P_U) H[j] X[j] + N) over K symbols.
    """
    K, M, N_c = H.shape
    X = pilots.matrices  # (N_c, K, K)
    Hj = np.moveaxis(H, -1, 0).transpose(0, 2, 1)  # (N_c, M, K)
    tx = np.sqrt(config.P_U) * (Hj @ X)  # (N_c, M, K)
    W = sensing.matrices  # (frames, rows, M)
    out = np.empty((sensing.frames, N_c, sensing.rows, K), dtype=complex)
    for ell in range(sensing.frames):
        rx = tx
        if rng is not None:
            rx = tx + sensing_noise(rng, tx.shape, config.sigma2)
        out[ell] = W[ell] @ rx
    return out


def decorrelate_pilots(raw: np.ndarray, pilots: PilotMatrixSet) -> np.ndarray:
    """Right-multiply by X[j]^H and split users: (frames, N_c, rows, K) -> (K, frames*rows, N_c)."""
    X = pilots.matrices
    gram = X @ np.conj(np.swapaxes(X, -1, -2))
    if not np.allclose(gram, np.eye(X.shape[-1]), atol=1e-10):
        raise SensingError("pilot matrices are not unitary")
    y = raw @ np.conj(np.swapaxes(X, -1, -2))  # (frames, N_c, rows, K)
    frames, N_c, rows, K = y.shape
    return y.transpose(3, 0, 2, 1).reshape(K, frames * rows, N_c)
