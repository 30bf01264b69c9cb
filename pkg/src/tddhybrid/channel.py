"""Sparse multipath mmWave channels on a uniform planar array.

Every user sees L_p paths with complex gain, continuous delay and
elevation/azimuth departure angles. Paths are pulse-shaped into d_max + 1
time taps, and the frequency response is the N_c-point DFT of those taps.
Arrays carry users (and optionally samples) as leading axes:

    taps   (..., K, d_max + 1, M)
    H      (..., K, M, N_c)
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import SystemConfig
from .rng import Stream, complex_normal, make_rng
from .tensorio import DatasetHeader, save_dataset

# realizations per vectorized batch in generate_channels
CHUNK = 1000


def array_response(theta, phi, config: SystemConfig) -> np.ndarray:
    """UPA steering vector(s) a_h(theta, phi) kron a_v(phi).

    Broadcasts over the shapes of `theta` and `phi`; the antenna axis is
    appended last with the vertical index running fastest.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    k = 2 * np.pi * config.delta_over_lambda
    mh = np.arange(config.M_h)
    mv = np.arange(config.M_v)
    ph = k * (np.cos(phi) * np.sin(theta))[..., None] * mh
    pv = k * np.sin(phi)[..., None] * mv
    phase = ph[..., :, None] + pv[..., None, :]
    return np.exp(1j * phase).reshape(*phase.shape[:-2], config.M)


def raised_cosine(t, config: SystemConfig) -> np.ndarray:
    """Raised-cosine pulse with p(0) = 1, time in microseconds."""
    x = np.asarray(t, dtype=float) / config.T_s
    beta = config.roll_off
    denom = 1.0 - (2.0 * beta * x) ** 2
    singular = np.isclose(denom, 0.0, rtol=0.0, atol=1e-12)
    safe = np.where(singular, 1.0, denom)
    out = np.sinc(x) * np.cos(np.pi * beta * x) / safe
    limit = (np.pi / 4) * np.sinc(1.0 / (2.0 * beta))
    out = np.where(singular, limit, out)
    return out if out.ndim else float(out)


@dataclass
class PathSet:
    """Per-path parameters, each shaped (..., K, L_p)."""

    alpha: np.ndarray
    tau: np.ndarray
    theta: np.ndarray
    phi: np.ndarray

    def scaled(self, c) -> "PathSet":
        return PathSet(self.alpha * c, self.tau, self.theta, self.phi)


def draw_paths(config: SystemConfig, rng: np.random.Generator,
               count: int | None = None) -> PathSet:
    """I.i.d. paths for every user; `count` adds a leading sample axis."""
    shape = (config.K, config.L_p) if count is None else (count, config.K, config.L_p)
    alpha = complex_normal(rng, shape)
    tau = rng.uniform(0.0, config.d_max * config.T_s, size=shape)
    theta = rng.uniform(-np.pi / 2, np.pi / 2, size=shape)
    phi = rng.uniform(-np.pi / 2, np.pi / 2, size=shape)
    return PathSet(alpha, tau, theta, phi)


def taps_from_paths(paths: PathSet, config: SystemConfig) -> np.ndarray:
    """Pulse-shaped time taps r[n], n = 0..d_max, shape (..., K, d_max+1, M)."""
    n = np.arange(config.d_max + 1)
    steer = array_response(paths.theta, paths.phi, config)  # (..., K, L_p, M)
    pulse = raised_cosine(n * config.T_s - paths.tau[..., None], config)  # (..., K, L_p, D)
    weights = paths.alpha[..., None] * pulse
    return np.einsum("...pd,...pm->...dm", weights, steer) / np.sqrt(config.L_p)


def freq_channel(taps: np.ndarray, config: SystemConfig) -> np.ndarray:
    """DFT of the taps onto N_c subcarriers, shape (..., K, M, N_c)."""
    n = np.arange(taps.shape[-2])
    j = np.arange(config.N_c)
    dft = np.exp(-2j * np.pi * np.outer(n, j) / config.N_c)  # (D, N_c)
    return np.einsum("...dm,dj->...mj", taps, dft)


def channels_from_paths(paths: PathSet, config: SystemConfig) -> np.ndarray:
    return freq_channel(taps_from_paths(paths, config), config)


def generate_channels(config: SystemConfig, count: int, seed: int | None = None,
                      stream: int = Stream.CHANNEL) -> np.ndarray:
    """`count` K-user realizations, shape (count, K, M, N_c), complex128.

    Realization i is drawn from its own stream (seed, stream, i), so any
    prefix of a larger draw is reproduced exactly.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    seed = config.seed if seed is None else seed
    out = np.empty((count, config.K, config.M, config.N_c), dtype=complex)
    for start in range(0, count, CHUNK):
        drawn = [draw_paths(config, make_rng(seed, stream, i))
                 for i in range(start, min(start + CHUNK, count))]
        paths = PathSet(*(np.stack([getattr(p, f) for p in drawn])
                          for f in ("alpha", "tau", "theta", "phi")))
        out[start:start + len(drawn)] = channels_from_paths(paths, config)
    return out


def generate_dataset(config: SystemConfig, count: int, path: str | Path,
                     seed: int | None = None) -> np.ndarray:
    """Generate channels and write them as a complex64 tensor file."""
    H = generate_channels(config, count, seed)
    header = DatasetHeader(
        shape=H.shape, dims=("sample", "user", "antenna", "subcarrier"),
        dtype="complex64", config=config.to_dict(),
        meta={"kind": "channels", "seed": config.seed if seed is None else seed},
    )
    save_dataset(path, header, H)
    return H


def user_samples(H: np.ndarray) -> np.ndarray:
    """Flatten (count, K, M, N_c) into single-user samples (count*K, M, N_c)."""
    return H.reshape(-1, *H.shape[-2:])
