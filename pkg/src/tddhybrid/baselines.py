"""Channel-recovery baselines: OMP estimation plus phase-matching analog beams.

Two analog stages are offered for comparison with the learned precoder:

    perfect_csi   phase-match the true channel, ZF/WMMSE on the true H_eq
    omp           estimate each user's channel from random-sensing pilots
                  with OMP over an angle dictionary, then phase-match the
                  estimate

For OFDM the analog beam phase-matches the principal eigenvector of the
estimated channel covariance averaged over a decimated subcarrier subset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import array_response
from .config import SystemConfig
from .digital import digital_precoders, herm, lmmse_equivalent
from .sensing import digital_phase_sensing, observe_pilots, quantize_phases, random_sensing

OFDM_DECIMATION = 8


class OmpError(ValueError):
    pass


@dataclass
class AngleDictionary:
    """Steering vectors on a midpoint grid over [-pi/2, pi/2]^2.

    `atoms` is (M, G_el * G_az); column g corresponds to angles[g] = (theta, phi).
    """

    angles: np.ndarray
    atoms: np.ndarray

    @classmethod
    def create(cls, config: SystemConfig, G_el: int | None = None,
               G_az: int | None = None) -> "AngleDictionary":
        default = 2 * math.isqrt(config.M)
        G_el = G_el or default
        G_az = G_az or default
        th = -np.pi / 2 + (np.arange(G_el) + 0.5) * np.pi / G_el
        ph = -np.pi / 2 + (np.arange(G_az) + 0.5) * np.pi / G_az
        T, P = np.meshgrid(th, ph, indexing="ij")
        angles = np.stack([T.ravel(), P.ravel()], axis=1)
        atoms = array_response(angles[:, 0], angles[:, 1], config).T
        return cls(angles, atoms)

    @property
    def size(self) -> int:
        return self.atoms.shape[1]


@dataclass
class OmpResult:
    h: np.ndarray
    support: list[int] = field(default_factory=list)
    coefficients: np.ndarray | None = None
    residual_norms: list[float] = field(default_factory=list)


def omp_estimate(y: np.ndarray, W: np.ndarray, dictionary: AngleDictionary, sparsity: int,
                 P_U: float = 1.0) -> OmpResult:
    """Greedy sparse recovery of h from y = sqrt(P_U) W h + noise.

    W is the stacked sensing matrix (measurements, M). Atoms are picked by
    normalized residual correlation and the coefficients are refit by least
    squares over the whole support after every pick.
    """
    y = np.asarray(y).ravel()
    W = np.asarray(W)
    A = math.sqrt(P_U) * (W @ dictionary.atoms)
    if sparsity > A.shape[0]:
        raise OmpError(f"sparsity {sparsity} exceeds the {A.shape[0]} available measurements")
    norms = np.linalg.norm(A, axis=0)
    norms = np.where(norms == 0, 1.0, norms)
    residual = y.copy()
    result = OmpResult(h=np.zeros(W.shape[1], dtype=complex),
                       residual_norms=[float(np.linalg.norm(residual))])
    coef = np.zeros(0, dtype=complex)
    for _ in range(sparsity):
        if result.residual_norms[-1] == 0.0:
            break
        corr = np.abs(A.conj().T @ residual) / norms
        corr[result.support] = -1.0
        result.support.append(int(np.argmax(corr)))
        sub = A[:, result.support]
        coef = np.linalg.lstsq(sub, y, rcond=None)[0]
        residual = y - sub @ coef
        result.residual_norms.append(float(np.linalg.norm(residual)))
    if result.support:
        result.h = dictionary.atoms[:, result.support] @ coef
    result.coefficients = coef
    return result


def phase_match(h: np.ndarray) -> np.ndarray:
    """Unit-modulus beam e^{i angle(h)}; zero entries get phase 0."""
    return np.exp(1j * np.angle(np.asarray(h)))


def principal_direction(h_samples: np.ndarray) -> np.ndarray:
    """Dominant eigenvector of sum_j h_j h_j^H, h_samples shaped (M, J)."""
    R = h_samples @ h_samples.conj().T
    return np.linalg.eigh(R)[1][:, -1]


def ofdm_subset(N_c: int) -> np.ndarray:
    return np.arange(0, N_c, OFDM_DECIMATION)


def analog_from_channels(H: np.ndarray) -> np.ndarray:
    """Phase-matched V_RF (M, K) from per-user channels H (K, M, N_c)."""
    K, M, N_c = H.shape
    if N_c == 1:
        return phase_match(H[:, :, 0].T)
    cols = [principal_direction(H[k][:, ofdm_subset(N_c)]) for k in range(K)]
    return phase_match(np.stack(cols, axis=1))


def omp_channels(H: np.ndarray, config: SystemConfig, rng: np.random.Generator,
                 frames: int, dictionary: AngleDictionary | None = None,
                 sparsity: int | None = None, subcarriers: np.ndarray | None = None,
                 noiseless: bool = False) -> np.ndarray:
    """OMP estimates of every user channel from `frames` random-sensing frames.

    Returns (K, M, N_c); subcarriers outside `subcarriers` stay zero.
    """
    dictionary = dictionary or AngleDictionary.create(config)
    sparsity = config.L_p if sparsity is None else sparsity
    K, M, N_c = H.shape
    subcarriers = np.arange(N_c) if subcarriers is None else subcarriers
    sensing = random_sensing(frames, config.N_RF, M, rng).quantized(config.Q)
    Y = observe_pilots(H, sensing, config, None if noiseless else rng)
    W = sensing.stacked
    out = np.zeros(H.shape, dtype=complex)
    for k in range(K):
        for j in subcarriers:
            out[k, :, j] = omp_estimate(Y[k, :, j], W, dictionary, sparsity, config.P_U).h
    return out


def _quantize_analog(V_RF: np.ndarray, Q: int) -> np.ndarray:
    return V_RF if Q == 0 else np.exp(1j * quantize_phases(np.angle(V_RF), Q))


def baseline_pipeline(H: np.ndarray, config: SystemConfig, rng: np.random.Generator,
                      mode: str = "omp", method: str = "zf", digital: str = "lmmse",
                      dictionary: AngleDictionary | None = None,
                      weights: np.ndarray | None = None,
                      noiseless: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Hybrid precoders for one K-user realization H (K, M, N_c).

    mode:
      perfect_csi  V_RF phase-matches the true channels; V_D from the true H_eq
      omp          channels estimated by OMP
    digital (omp only):
      estimate     all L frames feed OMP; V_D from V_RF^H H_hat on every subcarrier
      lmmse        L_a frames feed OMP; L_d frames estimate H_eq with LMMSE,
                   exactly as in the learned scheme
    `noiseless` drops the pilot noise (sensing is still drawn from rng).
    Returns (V_RF (M, K), V_D (N_c, K, K)).
    """
    H = np.asarray(H)
    K, M, N_c = H.shape
    if mode == "perfect_csi":
        V_RF = _quantize_analog(analog_from_channels(H), config.Q)
        H_eq = herm(V_RF)[None] @ np.moveaxis(H, -1, 0).transpose(0, 2, 1)
        return V_RF, digital_precoders(H_eq, V_RF, config, method, weights, fallback=True)
    if mode != "omp":
        raise ValueError(f"unknown baseline mode {mode!r}")
    if digital == "estimate":
        H_hat = omp_channels(H, config, rng, config.L, dictionary, noiseless=noiseless)
        V_RF = _quantize_analog(analog_from_channels(H_hat), config.Q)
        H_eq = herm(V_RF)[None] @ np.moveaxis(H_hat, -1, 0).transpose(0, 2, 1)
    elif digital == "lmmse":
        H_hat = omp_channels(H, config, rng, config.L_a, dictionary,
                             subcarriers=ofdm_subset(N_c), noiseless=noiseless)
        V_RF = _quantize_analog(analog_from_channels(H_hat), config.Q)
        ups = observe_pilots(H, digital_phase_sensing(V_RF, config.L_d), config,
                             None if noiseless else rng)
        ups = ups.reshape(K, config.L_d, K, N_c)  # (user, frame, column, subcarrier)
        H_eq = lmmse_equivalent(ups.transpose(1, 3, 2, 0), config)  # (N_c, column, user)
    else:
        raise ValueError(f"unknown digital phase {digital!r}")
    return V_RF, digital_precoders(H_eq, V_RF, config, method, weights, fallback=True)
