"""Digital phase: equivalent-channel LMMSE estimate, ZF and WMMSE precoders.

Shapes: H_eq is (..., K, K) with rows indexed by analog-precoder column
and columns by user, so h_k^H V_RF v = (H_eq[:, k])^H v. Digital precoders
V_D are (..., K, K), one column per user stream. Leading axes broadcast.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .config import SystemConfig

log = logging.getLogger(__name__)

MAX_COND = 1e12


class DegenerateChannelError(np.linalg.LinAlgError):
    pass


def herm(x: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(x, -1, -2))


def lmmse_equivalent(upsilon: np.ndarray, config: SystemConfig, axis: int = 0) -> np.ndarray:
    """LMMSE estimate of V_RF^H H from L_d repeated pilot blocks.

    `upsilon` stacks the received K x K blocks along `axis`. Assumes
    E[h h^H] = I, which gives the average-and-scale closed form.
    """
    upsilon = np.asarray(upsilon)
    L_d = upsilon.shape[axis]
    if L_d == 0:
        raise ValueError("no digital-phase observations (L_d = 0)")
    coef = np.sqrt(config.P_U) / (config.P_U * L_d + config.sigma2)
    return coef * upsilon.sum(axis=axis)


def transmit_power(V_D: np.ndarray, V_RF: np.ndarray) -> np.ndarray:
    """Tr(V_D^H V_RF^H V_RF V_D) = ||V_RF V_D||_F^2."""
    X = np.asarray(V_RF) @ np.asarray(V_D)
    return np.sum(np.abs(X) ** 2, axis=(-2, -1))


def power_scale(V_D: np.ndarray, V_RF: np.ndarray, P_D: float) -> np.ndarray:
    """Scale V_D so the hybrid transmit power equals P_D exactly."""
    p = transmit_power(V_D, V_RF)
    if np.any(p <= 0):
        raise ValueError("cannot power-scale a zero precoder")
    return V_D * np.sqrt(P_D / p)[..., None, None]


def zf_direction(H_eq: np.ndarray) -> np.ndarray:
    """H (H^H H)^{-1}, computed as the pseudo-inverse of H^H.

    Raises DegenerateChannelError when cond(H^H H) exceeds MAX_COND.
    """
    H_eq = np.asarray(H_eq)
    s = np.linalg.svd(H_eq, compute_uv=False)
    with np.errstate(divide="ignore"):
        cond = (s[..., 0] / s[..., -1]) ** 2
    if np.any(~np.isfinite(cond)) or np.any(cond > MAX_COND):
        raise DegenerateChannelError(
            f"equivalent channel Gram matrix condition number {np.max(cond):.3g} exceeds {MAX_COND:g}")
    return np.linalg.pinv(herm(H_eq))


def zf_precoder(H_eq: np.ndarray, V_RF: np.ndarray, config: SystemConfig) -> np.ndarray:
    """Zero-forcing with equal per-user received amplitude, scaled to P_D."""
    return power_scale(zf_direction(H_eq), V_RF, config.P_D)


def sinr_matrix(H_eq: np.ndarray, V_D: np.ndarray) -> np.ndarray:
    """|h_k^H v_i|^2 as a (..., K, K) array indexed [k, i]."""
    return np.abs(herm(H_eq) @ V_D) ** 2


def rates_from_gains(gains: np.ndarray, sigma2: float) -> np.ndarray:
    signal = np.diagonal(gains, axis1=-2, axis2=-1)
    interference = gains.sum(axis=-1) - signal
    return np.log2(1 + signal / (interference + sigma2))


@dataclass
class WmmseResult:
    V_D: np.ndarray
    objective: list[float] = field(default_factory=list)
    converged: bool = False
    iterations: int = 0


def _solve_transmit(Bmat: np.ndarray, A: np.ndarray, Cmat: np.ndarray, P: float) -> np.ndarray:
    """argmin over V of the WMMSE transmitter step under Tr(V^H A V) <= P.

    Solves V = (B + mu A)^{-1} C with the smallest feasible mu >= 0, via the
    generalized eigenbasis B U = A U diag(lam), U^H A U = I.
    """
    lam, U = scipy.linalg.eigh(Bmat, A)
    lam = np.maximum(lam, 0.0)
    D = herm(U) @ Cmat
    p = np.sum(np.abs(D) ** 2, axis=1)

    def power(mu: float) -> float:
        with np.errstate(divide="ignore"):
            return float(np.sum(p / (lam + mu) ** 2))

    if lam.min() > 1e-14 * max(lam.max(), 1.0) and power(0.0) <= P:
        mu = 0.0
    else:
        lo, hi = 0.0, np.sqrt(p.sum() / P)
        while power(hi) > P:
            hi *= 2
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid in (lo, hi):
                break
            if power(mid) > P:
                lo = mid
            else:
                hi = mid
        mu = hi
    return U @ (D / (lam + mu)[:, None])


def wmmse_precoder(H_eq: np.ndarray, V_RF: np.ndarray, config: SystemConfig,
                   weights: np.ndarray | None = None, max_iters: int = 100,
                   tol: float = 1e-5) -> WmmseResult:
    """Iterative weighted-MMSE precoder on one K x K equivalent channel.

    The analog precoder only enters through the power constraint
    Tr(V_D^H A V_D) <= P_D with A = V_RF^H V_RF. Starts from ZF (or MRT
    if ZF is degenerate) and returns the best iterate, power-scaled to P_D.
    `objective` records sum_k a_k (w_k e_k - log w_k) after each transmitter
    update; it is non-increasing.
    """
    H_eq = np.asarray(H_eq)
    V_RF = np.asarray(V_RF)
    K = H_eq.shape[-1]
    alpha = np.ones(K) if weights is None else np.asarray(weights, dtype=float)
    sigma2, P = config.sigma2, config.P_D
    A = herm(V_RF) @ V_RF
    try:
        V = zf_direction(H_eq)
    except DegenerateChannelError:
        V = H_eq.copy()
    V = power_scale(V, V_RF, P)

    def weighted_rate(V: np.ndarray) -> float:
        return float(alpha @ rates_from_gains(sinr_matrix(H_eq, V), sigma2))

    best_V, best_rate = V, weighted_rate(V)
    result = WmmseResult(V_D=V)
    prev = None
    for it in range(1, max_iters + 1):
        S = herm(H_eq) @ V  # S[k, i] = h_k^H v_i
        total = np.sum(np.abs(S) ** 2, axis=1) + sigma2
        diag = np.diagonal(S)
        u = diag / total
        e = np.maximum(1.0 - np.abs(diag) ** 2 / total, 1e-300)
        w = 1.0 / e
        a = alpha * w
        Bmat = (H_eq * (a * np.abs(u) ** 2)) @ herm(H_eq)
        Cmat = H_eq * (a * u)
        V = _solve_transmit(Bmat, A, Cmat, P)
        S = herm(H_eq) @ V
        total = np.sum(np.abs(S) ** 2, axis=1) + sigma2
        e_new = np.abs(u) ** 2 * total - 2 * np.real(np.conj(u) * np.diagonal(S)) + 1.0
        obj = float(np.sum(alpha * (w * e_new - np.log(w))))
        result.objective.append(obj)
        rate = weighted_rate(V)
        if rate > best_rate:
            best_V, best_rate = V, rate
        result.iterations = it
        if prev is not None and abs(obj - prev) <= tol * abs(prev):
            result.converged = True
            break
        prev = obj
    if not result.converged:
        log.warning("WMMSE did not converge in %d iterations", max_iters)
    result.V_D = power_scale(best_V, V_RF, P)
    return result


def degenerate_fallback(H_eq: np.ndarray, V_RF: np.ndarray, config: SystemConfig) -> np.ndarray:
    """Minimum-norm precoder for a rank-deficient equivalent channel.

    Singular directions below 1/sqrt(MAX_COND) of the largest are dropped,
    so users that share an analog beam are served without nulling.
    """
    V = np.linalg.pinv(herm(H_eq), rcond=1.0 / np.sqrt(MAX_COND))
    return power_scale(V, V_RF, config.P_D)


def digital_precoders(H_eq: np.ndarray, V_RF: np.ndarray, config: SystemConfig,
                      method: str = "zf", weights: np.ndarray | None = None,
                      fallback: bool = False) -> np.ndarray:
    """Precoders for a stack of equivalent channels.

    H_eq is (..., K, K); V_RF must broadcast to (..., M, K), e.g. pass
    V_RF[:, None] for trials x subcarriers. With `fallback`, slices whose
    channel is degenerate get degenerate_fallback instead of raising.
    """
    if method not in ("zf", "wmmse"):
        raise ValueError(f"unknown digital precoder {method!r}")
    lead = H_eq.shape[:-2]
    V_b = np.broadcast_to(V_RF, (*lead, *V_RF.shape[-2:]))
    if method == "zf":
        try:
            return zf_precoder(H_eq, V_b, config)
        except DegenerateChannelError:
            if not fallback:
                raise
    out = np.empty(H_eq.shape, dtype=complex)
    for idx in np.ndindex(*lead):
        try:
            if method == "zf":
                out[idx] = zf_precoder(H_eq[idx], V_b[idx], config)
            else:
                out[idx] = wmmse_precoder(H_eq[idx], V_b[idx], config, weights).V_D
        except np.linalg.LinAlgError as exc:
            if not fallback:
                raise
            log.warning("degenerate equivalent channel at %s: %s", idx, exc)
            out[idx] = degenerate_fallback(H_eq[idx], V_b[idx], config)
    return out
