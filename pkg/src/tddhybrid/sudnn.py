"""Single-user network mapping received pilots to one analog precoder column.

Pipeline for one user sample (batched along axis 0):

    sensing   Y = W(psi) (sqrt(P_U) h + n)          trainable phases psi
    features  flat: [Re y, Im y]
              ofdm: ReLU(rows @ F^T) per filter, rows = [Re Y; Im Y]
    FC stage  (BN -> dense -> ReLU) per hidden width, then BN -> dense to 2M
    normalize v = x / |x| entry-wise, x = out[:M] + i out[M:]

Gradients are computed by hand. Complex gradients use the real-pair
convention G = dL/dRe(z) + i dL/dIm(z).
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .config import SystemConfig, TrainConfig
from .rng import complex_normal
from .sensing import SensingMatrix

LN2 = math.log(2.0)


class ModelError(ValueError):
    pass


@dataclass
class SuDnnModel:
    mode: str
    M: int
    N_RF: int
    L_a: int
    N_c: int
    widths: tuple[int, ...]
    n_filters: int
    P_U: float
    sigma2: float
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    bn_momentum: float = 0.99
    bn_eps: float = 1e-5
    meta: dict = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.widths) + 1

    @property
    def in_rows(self) -> int:
        return self.L_a * self.N_RF

    @property
    def sensing(self) -> SensingMatrix:
        return SensingMatrix(self.params["psi"])

    def copy(self) -> "SuDnnModel":
        return copy.deepcopy(self)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())


def input_width(mode: str, L_a: int, N_RF: int, n_filters: int) -> int:
    rows = 2 * L_a * N_RF
    return rows if mode == "flat" else rows * n_filters


def init_model(config: SystemConfig, train: TrainConfig, rng: np.random.Generator,
               mode: str | None = None) -> SuDnnModel:
    """He-normal dense weights, zero biases, unit BN scale, uniform sensing phases."""
    mode = mode or ("flat" if config.flat else "ofdm")
    if mode not in ("flat", "ofdm"):
        raise ModelError(f"unknown mode {mode!r}")
    if mode == "flat" and config.N_c != 1:
        raise ModelError("flat mode requires N_c = 1")
    M, N_RF, L_a = config.M, config.N_RF, config.L_a
    params: dict[str, np.ndarray] = {
        "psi": rng.uniform(0.0, 2 * np.pi, size=(L_a, N_RF, M)),
    }
    if mode == "ofdm":
        params["conv"] = rng.normal(0.0, np.sqrt(1.0 / config.N_c),
                                    size=(train.n_filters, config.N_c))
    buffers: dict[str, np.ndarray] = {}
    dims = [input_width(mode, L_a, N_RF, train.n_filters), *train.widths, 2 * M]
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        params[f"bn{i}.gamma"] = np.ones(d_in)
        params[f"bn{i}.beta"] = np.zeros(d_in)
        buffers[f"bn{i}.mean"] = np.zeros(d_in)
        buffers[f"bn{i}.var"] = np.ones(d_in)
        params[f"dense{i}.W"] = rng.normal(0.0, np.sqrt(2.0 / d_in), size=(d_in, d_out))
        params[f"dense{i}.b"] = np.zeros(d_out)
    return SuDnnModel(
        mode=mode, M=M, N_RF=N_RF, L_a=L_a, N_c=config.N_c,
        widths=tuple(train.widths), n_filters=train.n_filters,
        P_U=config.P_U, sigma2=config.sigma2, params=params, buffers=buffers,
        bn_momentum=train.bn_momentum, bn_eps=train.bn_eps,
    )


# -- forward ---------------------------------------------------------------

def sense(model: SuDnnModel, H: np.ndarray, noise: np.ndarray | None,
          P_U: float | None = None) -> np.ndarray:
    """Sensing stage. H: (B, M, N_c); noise: (B, L_a, M, N_c). Returns (B, L_a*N_RF, N_c)."""
    P_U = model.P_U if P_U is None else P_U
    u = math.sqrt(P_U) * H[:, None]
    if noise is not None:
        u = u + noise
    W = np.exp(1j * model.params["psi"])
    y = W[None] @ u  # (B, L_a, N_RF, N_c)
    return y.reshape(y.shape[0], -1, y.shape[-1])


def draw_sensing_noise(model: SuDnnModel, batch: int, rng: np.random.Generator,
                       sigma2: float | None = None) -> np.ndarray:
    sigma2 = model.sigma2 if sigma2 is None else sigma2
    return complex_normal(rng, (batch, model.L_a, model.M, model.N_c), sigma2)


def _features(model: SuDnnModel, Y: np.ndarray, cache: dict) -> np.ndarray:
    if Y.ndim != 3 or Y.shape[1] != model.in_rows:
        raise ModelError(f"expected pilots (B, {model.in_rows}, N_c), got {Y.shape}")
    rows = np.concatenate([Y.real, Y.imag], axis=1)  # (B, 2R, N_c)
    if model.mode == "flat":
        if Y.shape[2] != 1:
            raise ModelError("flat model takes a single subcarrier")
        return rows[:, :, 0]
    if Y.shape[2] != model.params["conv"].shape[1]:
        raise ModelError(
            f"pilot block has {Y.shape[2]} subcarriers, filters have length "
            f"{model.params['conv'].shape[1]}")
    pre = rows @ model.params["conv"].T  # (B, 2R, N_f)
    cache["rows"] = rows
    cache["conv_pre"] = pre
    act = np.maximum(pre, 0.0)
    return act.transpose(0, 2, 1).reshape(Y.shape[0], -1)  # filter-major concat


def head(model: SuDnnModel, Y: np.ndarray, train: bool = False,
         update_stats: bool = False) -> tuple[np.ndarray, dict]:
    """Intermediate layers plus normalization. Returns (v, cache)."""
    cache: dict = {"train": train}
    x = _features(model, Y, cache)
    p, buf = model.params, model.buffers
    layers = []
    for i in range(model.n_layers):
        if train:
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            if update_stats:
                m = model.bn_momentum
                buf[f"bn{i}.mean"] = m * buf[f"bn{i}.mean"] + (1 - m) * mu
                buf[f"bn{i}.var"] = m * buf[f"bn{i}.var"] + (1 - m) * var
        else:
            mu, var = buf[f"bn{i}.mean"], buf[f"bn{i}.var"]
        inv_std = 1.0 / np.sqrt(var + model.bn_eps)
        xhat = (x - mu) * inv_std
        z = p[f"bn{i}.gamma"] * xhat + p[f"bn{i}.beta"]
        pre = z @ p[f"dense{i}.W"] + p[f"dense{i}.b"]
        layers.append((xhat, inv_std, z, pre))
        x = np.maximum(pre, 0.0) if i < model.n_layers - 1 else pre
    cache["layers"] = layers
    v_raw = x[:, :model.M] + 1j * x[:, model.M:]
    mag = np.abs(v_raw)
    zero = mag == 0.0
    v = np.where(zero, 1.0 + 0j, v_raw / np.where(zero, 1.0, mag))
    cache.update(v_raw=v_raw, mag=mag, zero=zero, v=v)
    return v, cache


def normalize_entries(x: np.ndarray) -> np.ndarray:
    """x / |x| entry-wise, with 0 mapped to 1."""
    mag = np.abs(x)
    return np.where(mag == 0, 1.0 + 0j, x / np.where(mag == 0, 1.0, mag))


def predict(model: SuDnnModel, Y: np.ndarray) -> np.ndarray:
    """Inference on received pilots (B, L_a*N_RF, N_c) -> (B, M)."""
    return head(model, np.asarray(Y), train=False)[0]


def forward_flat(model: SuDnnModel, h: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Flat-mode precoder for one channel vector h (M,), noise drawn from rng."""
    if model.mode != "flat":
        raise ModelError("forward_flat requires a flat-mode model")
    H = np.asarray(h).reshape(1, model.M, 1)
    Y = sense(model, H, draw_sensing_noise(model, 1, rng))
    return predict(model, Y)[0]


def forward_ofdm(model: SuDnnModel, Y: np.ndarray) -> np.ndarray:
    """OFDM-mode precoder from one user's pilot block (L_a*N_RF, N_c)."""
    if model.mode != "ofdm":
        raise ModelError("forward_ofdm requires an ofdm-mode model")
    return predict(model, np.asarray(Y)[None])[0]


# -- loss ------------------------------------------------------------------

def loss_scale(config: SystemConfig) -> float:
    return config.P_D / (config.M * config.K * config.sigma2)


def per_sample_loss(v: np.ndarray, H: np.ndarray, scale: float) -> tuple[np.ndarray, np.ndarray]:
    """Negative bits per sample and its gradient w.r.t. v.

    v: (B, M), H: (B, M, N_c). Loss_b = -sum_j log2(1 + scale |h_b[j]^H v_b|^2).
    """
    s = np.einsum("bmj,bm->bj", H.conj(), v)
    g = np.abs(s) ** 2
    loss = -np.sum(np.log1p(scale * g), axis=1) / LN2
    dg = -scale / ((1 + scale * g) * LN2)  # dL/d|s|^2
    G_v = 2 * np.einsum("bj,bj,bmj->bm", dg, s, H)
    return loss, G_v


def loss_flat(V_RF: np.ndarray, H: np.ndarray, config: SystemConfig) -> float:
    """Training loss for K users, frequency-flat. V_RF: (M, K), H: (K, M) or (K, M, 1)."""
    H = np.asarray(H)
    if H.ndim == 2:
        H = H[..., None]
    return float(np.sum(per_sample_loss(np.asarray(V_RF).T, H, loss_scale(config))[0]))


def loss_ofdm(V_RF: np.ndarray, H: np.ndarray, config: SystemConfig) -> float:
    """Training loss summed over users and subcarriers. H: (K, M, N_c)."""
    return float(np.sum(per_sample_loss(np.asarray(V_RF).T, np.asarray(H),
                                        loss_scale(config))[0]))


# -- backward --------------------------------------------------------------

def backward_head(model: SuDnnModel, cache: dict, G_v: np.ndarray) -> tuple[dict, np.ndarray]:
    """Gradients of the head parameters and of the pilots Y (complex)."""
    p = model.params
    grads: dict[str, np.ndarray] = {}
    v, mag, zero = cache["v"], cache["mag"], cache["zero"]
    safe = np.where(zero, 1.0, mag)
    G_x = (G_v - np.real(np.conj(G_v) * v) * v) / safe
    G_x = np.where(zero, 0.0, G_x)
    G = np.concatenate([G_x.real, G_x.imag], axis=1)
    layers = cache["layers"]
    train = cache["train"]
    for i in reversed(range(model.n_layers)):
        xhat, inv_std, z, pre = layers[i]
        if i < model.n_layers - 1:
            G = G * (pre > 0)
        grads[f"dense{i}.W"] = z.T @ G
        grads[f"dense{i}.b"] = G.sum(axis=0)
        G_z = G @ p[f"dense{i}.W"].T
        grads[f"bn{i}.gamma"] = np.sum(G_z * xhat, axis=0)
        grads[f"bn{i}.beta"] = G_z.sum(axis=0)
        G_xhat = G_z * p[f"bn{i}.gamma"]
        if train:
            B = G_xhat.shape[0]
            G = inv_std / B * (B * G_xhat - G_xhat.sum(axis=0)
                               - xhat * np.sum(G_xhat * xhat, axis=0))
        else:
            G = G_xhat * inv_std
    R = model.in_rows
    if model.mode == "flat":
        G_rows = G[:, :, None]
    else:
        B = G.shape[0]
        G_act = G.reshape(B, model.n_filters, 2 * R).transpose(0, 2, 1)
        G_pre = G_act * (cache["conv_pre"] > 0)
        grads["conv"] = np.einsum("brf,brj->fj", G_pre, cache["rows"])
        G_rows = G_pre @ p["conv"]
    G_Y = G_rows[:, :R] + 1j * G_rows[:, R:]
    return grads, G_Y


def backward_sensing(model: SuDnnModel, u: np.ndarray, G_Y: np.ndarray) -> np.ndarray:
    """dL/dpsi given the sensing input u = sqrt(P_U) h + n, shape (B, L_a, M, N_c)."""
    B, N_c = G_Y.shape[0], G_Y.shape[-1]
    G_y = G_Y.reshape(B, model.L_a, model.N_RF, N_c)
    W = np.exp(1j * model.params["psi"])
    corr = np.einsum("blrj,blmj->lrm", G_y.conj(), u)
    return np.real(1j * W * corr)


def loss_and_grads(model: SuDnnModel, H: np.ndarray, noise: np.ndarray | None,
                   scale: float, train: bool = True, update_stats: bool = False,
                   reduction: str = "mean") -> tuple[float, dict, dict]:
    """Minibatch loss and exact gradients for every trainable parameter.

    H: (B, M, N_c) single-user channels; noise: (B, L_a, M, N_c) antenna noise.
    Returns (loss, grads, info) where info holds per-sample losses and v.
    """
    u = math.sqrt(model.P_U) * H[:, None]
    if noise is not None:
        u = u + noise
    W = np.exp(1j * model.params["psi"])
    y = W[None] @ u
    Y = y.reshape(y.shape[0], -1, y.shape[-1])
    v, cache = head(model, Y, train=train, update_stats=update_stats)
    losses, G_v = per_sample_loss(v, H, scale)
    if reduction == "mean":
        loss = float(losses.mean())
        G_v = G_v / len(losses)
    elif reduction == "sum":
        loss = float(losses.sum())
    else:
        raise ValueError(f"unknown reduction {reduction!r}")
    grads, G_Y = backward_head(model, cache, G_v)
    grads["psi"] = backward_sensing(model, u, G_Y)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {name}")
    return loss, grads, {"losses": losses, "v": v, "cache": cache}


def relu_masks(model: SuDnnModel, H: np.ndarray, noise: np.ndarray | None,
               train: bool = True) -> list[np.ndarray]:
    """Activation patterns of every ReLU, for locating kinks in gradient checks."""
    Y = sense(model, H, noise)
    _, cache = head(model, Y, train=train)
    masks = [layer[3] > 0 for layer in cache["layers"][:-1]]
    if model.mode == "ofdm":
        masks.append(cache["conv_pre"] > 0)
    return masks


def replicate_for_users(model: SuDnnModel, K: int, N_RF: int | None = None):
    """Analog precoder builder from K copies of the tied network.

    The returned callable maps per-user pilots (K, L_a*N_RF, N_c) to
    V_RF (M, K), column k computed from user k's block alone.
    """
    N_RF = model.N_RF if N_RF is None else N_RF
    if K > N_RF:
        raise ModelError(f"K = {K} exceeds N_RF = {N_RF}")

    def build(Y_users: np.ndarray) -> np.ndarray:
        Y_users = np.asarray(Y_users)
        if Y_users.shape[0] != K:
            raise ModelError(f"expected pilots for {K} users, got {Y_users.shape[0]}")
        return predict(model, Y_users).T

    return build
