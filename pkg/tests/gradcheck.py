"""Central finite-difference check of the hand-written gradients."""

import numpy as np

from tddhybrid.channel import generate_channels, user_samples
from tddhybrid.config import SystemConfig, desk_train_config
from tddhybrid.rng import make_rng
from tddhybrid.sudnn import draw_sensing_noise, init_model, loss_and_grads, loss_scale, relu_masks

STEP = 1e-5
# Rounding makes the central difference uncertain by about eps * |L| / STEP;
# entries smaller than FLOOR * max(1, |L|) are compared against that floor.
FLOOR = 1e-6


def small_problem(mode: str, seed: int):
    ofdm = mode == "ofdm"
    cfg = SystemConfig(M_h=2, M_v=2, N_RF=2, K=2, N_c=6 if ofdm else 1, d_max=2 if ofdm else 0,
                       L=3, L_a=2, L_d=1)
    tc = desk_train_config(widths=(7, 5), n_filters=3, dtype="float64")
    rng = make_rng(seed, 3)
    model = init_model(cfg, tc, rng)
    # move batch-norm away from the identity so its gradients are exercised
    for name, value in model.params.items():
        if ".gamma" in name or ".beta" in name:
            model.params[name] = value + rng.normal(0, 0.3, value.shape)
    H = user_samples(generate_channels(cfg, 3, seed))
    noise = draw_sensing_noise(model, len(H), rng)
    return cfg, model, H, noise


def check_gradients(mode: str, seed: int) -> tuple[float, int, int]:
    """Returns (max relative error, entries checked, entries skipped at kinks)."""
    cfg, model, H, noise = small_problem(mode, seed)
    scale = loss_scale(cfg)
    loss, grads, _ = loss_and_grads(model, H, noise, scale)
    floor = FLOOR * max(1.0, abs(loss))
    base_masks = relu_masks(model, H, noise)
    worst, checked, skipped = 0.0, 0, 0
    for name, P in model.params.items():
        for idx in np.ndindex(P.shape):
            orig = P[idx]
            P[idx] = orig + STEP
            lp = loss_and_grads(model, H, noise, scale)[0]
            kink = any((a != b).any() for a, b in zip(relu_masks(model, H, noise), base_masks))
            P[idx] = orig - STEP
            lm = loss_and_grads(model, H, noise, scale)[0]
            kink |= any((a != b).any() for a, b in zip(relu_masks(model, H, noise), base_masks))
            P[idx] = orig
            if kink:
                skipped += 1
                continue
            numeric = (lp - lm) / (2 * STEP)
            analytic = grads[name][idx]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            worst = max(worst, err)
            checked += 1
    return worst, checked, skipped
