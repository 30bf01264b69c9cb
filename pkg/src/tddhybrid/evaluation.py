"""Sum-rate evaluation and experiment orchestration.

Rates are always computed on the true channels. Shapes follow the rest of
the package: H (..., K, M, N_c), V_RF (..., M, K), V_D (..., N_c, K, K).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .baselines import AngleDictionary, baseline_pipeline
from .channel import channels_from_paths, draw_paths, generate_channels
from .config import SystemConfig
from .digital import digital_precoders, herm, lmmse_equivalent, rates_from_gains
from .rng import Stream, complex_normal, make_rng
from .sensing import UNIT_TOL, SensingError, combine, observe_pilots, quantize_phases
from .sudnn import ModelError, SuDnnModel, predict

log = logging.getLogger(__name__)

SCHEMES = ("proposed", "perfect_csi", "omp_baseline")


@dataclass
class RateReport:
    """Per-user per-subcarrier rates in bits/s/Hz, shape (..., K, N_c)."""

    per_subcarrier: np.ndarray
    weights: np.ndarray | None = None

    @property
    def per_user(self) -> np.ndarray:
        return self.per_subcarrier.sum(axis=-1)

    @property
    def sum_rate(self) -> np.ndarray | float:
        s = self.per_user.sum(axis=-1)
        return float(s) if np.ndim(s) == 0 else s

    @property
    def weighted_sum(self) -> np.ndarray | float | None:
        if self.weights is None:
            return None
        s = (self.per_user * self.weights).sum(axis=-1)
        return float(s) if np.ndim(s) == 0 else s


def _as_subcarrier_major(H: np.ndarray) -> np.ndarray:
    """(..., K, M, N_c) -> (..., N_c, M, K)."""
    return np.swapaxes(np.moveaxis(H, -1, -3), -1, -2)


def sum_rate(H: np.ndarray, V_RF: np.ndarray, V_D: np.ndarray, config: SystemConfig,
             weights: np.ndarray | None = None) -> RateReport:
    """Achievable rates with interference treated as noise, on true channels."""
    H, V_RF, V_D = np.asarray(H), np.asarray(V_RF), np.asarray(V_D)
    if H.ndim < 3 or V_RF.ndim < 2 or V_D.ndim < 3:
        raise ValueError("expected H (..., K, M, N_c), V_RF (..., M, K), V_D (..., N_c, K, K)")
    K, M, N_c = H.shape[-3:]
    if V_RF.shape[-2] != M:
        raise ValueError(f"V_RF has {V_RF.shape[-2]} rows, channels have {M} antennas")
    if V_D.shape[-3:] != (N_c, V_RF.shape[-1], K):
        raise ValueError(f"V_D shape {V_D.shape[-3:]} does not match "
                         f"(N_c, N_RF, K) = {(N_c, V_RF.shape[-1], K)}")
    Hj = _as_subcarrier_major(H)
    eff = herm(Hj) @ (V_RF[..., None, :, :] @ V_D)  # [j, k, i] = h_k[j]^H V_RF v_i[j]
    rates = rates_from_gains(np.abs(eff) ** 2, config.sigma2)  # (..., N_c, K)
    return RateReport(np.swapaxes(rates, -1, -2), weights)


def interference_ratio(H: np.ndarray, V_RF: np.ndarray, V_D: np.ndarray) -> np.ndarray:
    """Per-user interference power over signal power, (..., N_c, K)."""
    eff = herm(_as_subcarrier_major(np.asarray(H))) @ (np.asarray(V_RF)[..., None, :, :] @ V_D)
    gains = np.abs(eff) ** 2
    signal = np.diagonal(gains, axis1=-2, axis2=-1)
    K = gains.shape[-1]
    interference = np.sum(gains * (1 - np.eye(K)), axis=-1)
    return interference / signal


# -- proposed scheme ---------------------------------------------------------

@dataclass
class PipelineResult:
    V_RF: np.ndarray
    V_D: np.ndarray
    report: RateReport


def quantize_analog(V_RF: np.ndarray, Q: int) -> np.ndarray:
    return V_RF if Q == 0 else np.exp(1j * quantize_phases(np.angle(V_RF), Q))


def analog_stage(config: SystemConfig, model: SuDnnModel, H: np.ndarray,
                 rng: np.random.Generator | None) -> np.ndarray:
    """First pilot phase and the replicated network: returns V_RF (..., M, K)."""
    if model.L_a != config.L_a or model.M != config.M:
        raise ModelError(f"model expects L_a={model.L_a}, M={model.M}; "
                         f"scenario has L_a={config.L_a}, M={config.M}")
    if config.K > config.N_RF or config.K > model.N_RF:
        raise ModelError(f"K = {config.K} exceeds N_RF = {min(config.N_RF, model.N_RF)}")
    sensing = model.sensing.quantized(config.Q)
    Y = observe_pilots(H, sensing, config, rng)  # (..., K, L_a*N_RF, N_c)
    lead = Y.shape[:-2]
    v = predict(model, Y.reshape(-1, *Y.shape[-2:])).reshape(*lead, config.M)
    return quantize_analog(np.swapaxes(v, -1, -2), config.Q)


def digital_stage(config: SystemConfig, H: np.ndarray, V_RF: np.ndarray,
                  rng: np.random.Generator | None, method: str = "zf",
                  weights: np.ndarray | None = None) -> np.ndarray:
    """Second pilot phase with sensing V_RF^H, LMMSE, then per-subcarrier precoders.

    Users whose quantized beams coincide make the equivalent channel
    singular; those subcarriers get the minimum-norm fallback precoder.
    """
    if np.max(np.abs(np.abs(V_RF) - 1.0)) > UNIT_TOL:
        raise SensingError("analog precoder entries must have unit modulus")
    K_users, M, N_c = H.shape[-3:]
    L_d = config.L_d
    W = np.repeat(herm(V_RF)[..., None, None, :, :], L_d, axis=-3)  # (..., 1, L_d, K, M)
    noise = None
    if rng is not None:
        noise = complex_normal(rng, (*H.shape[:-2], L_d, M, N_c), config.sigma2)
    y = combine(H, W, noise, config.P_U)  # (..., users, L_d*K, N_c)
    rows = V_RF.shape[-1]
    ups = y.reshape(*y.shape[:-2], L_d, rows, N_c)  # (..., user, frame, row, j)
    ups = np.moveaxis(ups, -4, -1)  # (..., frame, row, j, user)
    ups = np.swapaxes(ups, -3, -2)  # (..., frame, j, row, user)
    H_eq = lmmse_equivalent(ups, config, axis=-4)  # (..., N_c, K, K)
    return digital_precoders(H_eq, V_RF[..., None, :, :], config, method, weights,
                             fallback=True)


def run_ofdm_pipeline(config: SystemConfig, model: SuDnnModel, H: np.ndarray,
                      rng: np.random.Generator, method: str = "zf",
                      weights: np.ndarray | None = None,
                      noiseless: bool = False) -> PipelineResult:
    """Both pilot phases, precoder design and rates for H (..., K, M, N_c).

    `noiseless` removes the uplink pilot noise; rates still use config.sigma2.
    """
    H = np.asarray(H)
    pilot_rng = None if noiseless else rng
    V_RF = analog_stage(config, model, H, pilot_rng)
    V_D = digital_stage(config, H, V_RF, pilot_rng, method, weights)
    return PipelineResult(V_RF, V_D, sum_rate(H, V_RF, V_D, config, weights))


def run_flat_pipeline(config: SystemConfig, model: SuDnnModel, h: np.ndarray,
                      rng: np.random.Generator, method: str = "zf",
                      weights: np.ndarray | None = None,
                      noiseless: bool = False) -> PipelineResult:
    """Frequency-flat pipeline for channels h (..., K, M); V_D is (..., K, K)."""
    res = run_ofdm_pipeline(config, model, np.asarray(h)[..., None], rng, method,
                            weights, noiseless)
    return PipelineResult(res.V_RF, res.V_D[..., 0, :, :], res.report)


# -- trials ------------------------------------------------------------------

def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return make_rng(seed, Stream.NOISE, 1, trial)


def evaluation_channels(config: SystemConfig, trials: int, seed: int) -> np.ndarray:
    return generate_channels(config, trials, seed, Stream.EVAL)


def evaluate_scheme(config: SystemConfig, scheme: str, trials: int, seed: int,
                    model: SuDnnModel | None = None, method: str = "zf",
                    H: np.ndarray | None = None, digital: str = "lmmse",
                    noiseless: bool = False) -> list[RateReport]:
    """One RateReport per trial, in trial order.

    Channels default to the EVAL stream of `seed`, so two schemes run with
    the same seed see the same channels (paired trials).
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {', '.join(SCHEMES)}")
    if scheme == "proposed" and model is None:
        raise ModelError("the proposed scheme needs a trained model")
    H = evaluation_channels(config, trials, seed) if H is None else np.asarray(H)[:trials]
    dictionary = AngleDictionary.create(config) if scheme == "omp_baseline" else None
    reports = []
    for t in range(len(H)):
        rng = trial_rng(seed, t)
        if scheme == "proposed":
            reports.append(run_ofdm_pipeline(config, model, H[t], rng, method,
                                             noiseless=noiseless).report)
            continue
        mode = "perfect_csi" if scheme == "perfect_csi" else "omp"
        V_RF, V_D = baseline_pipeline(H[t], config, rng, mode, method, digital, dictionary,
                                     noiseless=noiseless)
        reports.append(sum_rate(H[t], V_RF, V_D, config))
    return reports


def sum_rates(reports: Sequence[RateReport]) -> np.ndarray:
    return np.array([r.sum_rate for r in reports], dtype=float)


def exceedance_frequency(a, b) -> float:
    """Fraction of paired trials where A's sum rate strictly exceeds B's.

    Accepts sequences of RateReport or arrays of sum rates.
    """
    ra = _rates_of(a)
    rb = _rates_of(b)
    if ra.shape != rb.shape or ra.size == 0:
        raise ValueError(f"unpaired inputs: {ra.size} vs {rb.size} trials")
    return float(np.mean(ra > rb))


def _rates_of(x) -> np.ndarray:
    if len(x) and isinstance(x[0], RateReport):
        return sum_rates(x)
    return np.asarray(x, dtype=float).ravel()


@dataclass
class AllocationTable:
    rows: list[tuple[int, int, float]]

    @property
    def best(self) -> tuple[int, int, float]:
        return max(self.rows, key=lambda r: r[2])


def pilot_splits(L: int) -> list[tuple[int, int]]:
    """(L_a, L_d) candidates starting from L_a = L - 1."""
    if L < 2:
        raise ValueError("L must be >= 2")
    return [(L_a, L - L_a) for L_a in range(L - 1, 0, -1)]


def sweep_pilot_allocation(config: SystemConfig, H: np.ndarray,
                           trainer: Callable[[SystemConfig], SuDnnModel],
                           seed: int = 0, method: str = "zf") -> AllocationTable:
    """Mean sum rate for every split of the fixed budget config.L."""
    rows = []
    for L_a, L_d in pilot_splits(config.L):
        cfg = config.with_pilots(L_a, L_d)
        model = trainer(cfg)
        reports = evaluate_scheme(cfg, "proposed", len(H), seed, model, method, H=H)
        rows.append((L_a, L_d, float(np.mean(sum_rates(reports)))))
    return AllocationTable(rows)


# -- fairness ----------------------------------------------------------------

@dataclass
class FairnessResult:
    users: np.ndarray  # (rounds, K) scheduled population indices
    rates: np.ndarray  # (rounds, K)
    weights: np.ndarray  # (rounds, K) weights used in each round
    average: np.ndarray  # (population,) mean rate over scheduled slots; nan if never
    cdf_x: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cdf_y: np.ndarray = field(default_factory=lambda: np.zeros(0))


def unit_path_gain(user: int) -> float:
    return 1.0


def current_weights(totals: np.ndarray, counts: np.ndarray, users: np.ndarray) -> np.ndarray:
    """w = 1 / long-term average rate; users without history get the mean weight."""
    seen = counts > 0
    avg = np.where(seen, totals / np.where(seen, counts, 1), np.nan)
    fallback = 1.0
    if seen.any():
        fallback = 1.0 / max(float(np.nanmean(avg)), 1e-300)
    w = np.empty(len(users))
    for i, u in enumerate(users):
        w[i] = 1.0 / max(avg[u], 1e-300) if seen[u] else fallback
    return w


def weighted_round_sim(config: SystemConfig, population: int, rounds: int,
                       rng: np.random.Generator, model: SuDnnModel | None = None,
                       scheme: str = "proposed", method: str = "wmmse",
                       path_gain: Callable[[int], float] = unit_path_gain) -> FairnessResult:
    """Random scheduling of K users per slot with weights 1/(long-term average rate)."""
    K = config.K
    if population < K:
        raise ValueError(f"population {population} is smaller than K = {K}")
    gains = np.array([path_gain(u) for u in range(population)], dtype=float)
    totals = np.zeros(population)
    counts = np.zeros(population, dtype=int)
    users_log = np.empty((rounds, K), dtype=int)
    rates_log = np.empty((rounds, K))
    weights_log = np.empty((rounds, K))
    for t in range(rounds):
        users = rng.choice(population, size=K, replace=False)
        H = channels_from_paths(draw_paths(config, rng), config)
        H = H * np.sqrt(gains[users])[:, None, None]
        w = current_weights(totals, counts, users)
        if scheme == "proposed":
            if model is None:
                raise ModelError("the proposed scheme needs a trained model")
            report = run_ofdm_pipeline(config, model, H, rng, method, weights=w).report
        elif scheme in ("perfect_csi", "omp_baseline"):
            mode = "perfect_csi" if scheme == "perfect_csi" else "omp"
            V_RF, V_D = baseline_pipeline(H, config, rng, mode, method, weights=w)
            report = sum_rate(H, V_RF, V_D, config, w)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        r = report.per_user
        users_log[t], rates_log[t], weights_log[t] = users, r, w
        np.add.at(totals, users, r)
        np.add.at(counts, users, 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        average = np.where(counts > 0, totals / counts, np.nan)
    x = np.sort(average[np.isfinite(average)])
    y = np.arange(1, len(x) + 1) / max(len(x), 1)
    return FairnessResult(users_log, rates_log, weights_log, average, x, y)


def mean_and_std(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0


def relative_gap(reference: float, value: float) -> float:
    return (reference - value) / reference if reference else math.nan
