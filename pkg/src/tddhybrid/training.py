"""Unsupervised training of the tied single-user network, plus checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import generate_channels, user_samples
from .config import SystemConfig, TrainConfig
from .rng import Stream, make_rng
from .sudnn import (SuDnnModel, draw_sensing_noise, init_model, loss_and_grads,
                    loss_scale, per_sample_loss, predict, sense)
from .tensorio import DatasetHeader, load_tensor, save_tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_good: SuDnnModel | None):
        super().__init__(message)
        self.last_good = last_good


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.step
        c2 = 1 - b2 ** self.step
        for name, g in grads.items():
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def cast_model(model: SuDnnModel, dtype) -> SuDnnModel:
    """Copy of `model` with every parameter and buffer cast to `dtype`."""
    out = model.copy()
    out.params = {k: v.astype(dtype) for k, v in model.params.items()}
    out.buffers = {k: v.astype(dtype) for k, v in model.buffers.items()}
    return out


def learning_rate(train: TrainConfig, epoch: int) -> float:
    """Step schedule; `epoch` counts from 0."""
    return train.lr * train.lr_decay_factor ** (epoch // train.lr_decay_every)


@dataclass
class ValidationSet:
    H: np.ndarray
    noise: np.ndarray

    @classmethod
    def draw(cls, model: SuDnnModel, config: SystemConfig, n: int, seed: int) -> "ValidationSet":
        realizations = math.ceil(n / config.K)
        H = user_samples(generate_channels(config, realizations, seed, Stream.VALIDATION))[:n]
        noise = draw_sensing_noise(model, n, make_rng(seed, Stream.VALIDATION, 1 << 20))
        return cls(H, noise)


def evaluate_loss(model: SuDnnModel, H: np.ndarray, noise: np.ndarray,
                  config: SystemConfig, batch: int = 2000) -> float:
    """Mean per-user loss in inference mode."""
    scale = loss_scale(config)
    total = 0.0
    for s in range(0, len(H), batch):
        Y = sense(model, H[s:s + batch], noise[s:s + batch])
        v = predict(model, Y)
        total += per_sample_loss(v, H[s:s + batch], scale)[0].sum()
    return total / len(H)


@dataclass
class TrainResult:
    model: SuDnnModel
    history: list[dict] = field(default_factory=list)
    initial_val_loss: float = float("nan")
    best_val_loss: float = float("nan")
    best_epoch: int = -1


def train(config: SystemConfig, train_cfg: TrainConfig, H_train: np.ndarray | None = None,
          seed: int | None = None, mode: str | None = None,
          validation: ValidationSet | None = None) -> TrainResult:
    """Train one network on single-user samples drawn from K-user realizations.

    H_train: (count, K, M, N_c) channel realizations; generated from the
    seed when omitted. Sensing noise is redrawn for every minibatch. The
    returned model is the snapshot with the lowest validation loss.
    """
    seed = config.seed if seed is None else seed
    if H_train is None:
        H_train = generate_channels(config, train_cfg.n_train, seed)
    real = np.dtype(train_cfg.dtype)
    cplx = np.result_type(real, np.complex64)
    samples = user_samples(np.asarray(H_train)).astype(cplx, copy=False)
    model = cast_model(init_model(config, train_cfg, make_rng(seed, Stream.INIT), mode), real)
    if validation is None:
        validation = ValidationSet.draw(model, config, train_cfg.n_val, seed)
    validation = ValidationSet(validation.H.astype(cplx, copy=False),
                               validation.noise.astype(cplx, copy=False))
    shuffle_rng = make_rng(seed, Stream.SHUFFLE)
    noise_rng = make_rng(seed, Stream.NOISE)
    opt = Adam(lr=train_cfg.lr, beta1=train_cfg.adam_beta1, beta2=train_cfg.adam_beta2,
               eps=train_cfg.adam_eps)
    scale = loss_scale(config)

    initial = float(evaluate_loss(model, validation.H, validation.noise, config))
    result = TrainResult(model=model.copy(), initial_val_loss=initial, best_val_loss=initial)
    B = train_cfg.batch_size
    n = len(samples)
    for epoch in range(train_cfg.epochs):
        opt.lr = learning_rate(train_cfg, epoch)
        order = shuffle_rng.permutation(n)
        losses = []
        for s in range(0, n - B + 1 if n >= B else 1, B):
            idx = order[s:s + B]
            H = samples[idx]
            noise = draw_sensing_noise(model, len(idx), noise_rng).astype(cplx, copy=False)
            try:
                loss, grads, _ = loss_and_grads(model, H, noise, scale, train=True,
                                                update_stats=True)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", result.model) from exc
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", result.model)
            opt.update(model.params, grads)
            losses.append(loss)
        val = evaluate_loss(model, validation.H, validation.noise, config)
        if not np.isfinite(val):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}", result.model)
        result.history.append({"epoch": epoch, "train_loss": float(np.mean(losses)),
                               "val_loss": float(val), "lr": opt.lr})
        if val < result.best_val_loss:
            result.best_val_loss = float(val)
            result.best_epoch = epoch
            result.model = model.copy()
        log.debug("epoch %d train %.4f val %.4f", epoch, np.mean(losses), val)
    result.model = cast_model(result.model, np.float64)
    result.model.meta.update(
        best_epoch=result.best_epoch, best_val_loss=result.best_val_loss,
        initial_val_loss=initial, adam_betas=[opt.beta1, opt.beta2], adam_eps=opt.eps,
        epochs=train_cfg.epochs, seed=seed, train_dtype=train_cfg.dtype,
    )
    return result


def write_history(path: str | Path, history: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "val_loss", "lr"])
        w.writeheader()
        for row in history:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(directory: str | Path, model: SuDnnModel) -> None:
    """One float64 tensor file per parameter/buffer plus manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {**{f"param.{k}": v for k, v in model.params.items()},
              **{f"buffer.{k}": v for k, v in model.buffers.items()}}
    for name, arr in arrays.items():
        header = DatasetHeader(shape=arr.shape, dims=tuple(f"d{i}" for i in range(arr.ndim)),
                               dtype="float64", meta={"name": name})
        save_tensor(directory / f"{name}.bin", header, arr)
    manifest = {
        "mode": model.mode, "M": model.M, "N_RF": model.N_RF, "L_a": model.L_a,
        "N_c": model.N_c, "widths": list(model.widths), "n_filters": model.n_filters,
        "P_U": model.P_U, "sigma2": model.sigma2, "bn_momentum": model.bn_momentum,
        "bn_eps": model.bn_eps, "arrays": sorted(arrays), "meta": model.meta,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(directory: str | Path) -> SuDnnModel:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    params, buffers = {}, {}
    for name in manifest["arrays"]:
        _, arr = load_tensor(directory / f"{name}.bin")
        kind, key = name.split(".", 1)
        (params if kind == "param" else buffers)[key] = arr
    return SuDnnModel(
        mode=manifest["mode"], M=manifest["M"], N_RF=manifest["N_RF"], L_a=manifest["L_a"],
        N_c=manifest["N_c"], widths=tuple(manifest["widths"]), n_filters=manifest["n_filters"],
        P_U=manifest["P_U"], sigma2=manifest["sigma2"], params=params, buffers=buffers,
        bn_momentum=manifest["bn_momentum"], bn_eps=manifest["bn_eps"],
        meta=manifest.get("meta", {}),
    )
