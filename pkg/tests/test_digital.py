import logging

import numpy as np
import pytest

from tddhybrid.config import SystemConfig, desk_config
from tddhybrid.digital import (DegenerateChannelError, degenerate_fallback, digital_precoders,
                               herm, lmmse_equivalent, power_scale, rates_from_gains, sinr_matrix, transmit_power,
                               wmmse_precoder, zf_direction, zf_precoder)
from tddhybrid.rng import complex_normal


def cn(rng, *shape):
    return complex_normal(rng, shape)


def unit(rng, *shape):
    return np.exp(1j * rng.uniform(0, 2 * np.pi, shape))


def rate_oracle(H_eq, V_D, sigma2):
    """Straight-line per-user rate loop."""
    K = H_eq.shape[1]
    out = []
    for k in range(K):
        sig = abs(np.vdot(H_eq[:, k], V_D[:, k])) ** 2
        intf = sum(abs(np.vdot(H_eq[:, k], V_D[:, i])) ** 2 for i in range(K) if i != k)
        out.append(np.log2(1 + sig / (intf + sigma2)))
    return np.array(out)


# -- LMMSE -------------------------------------------------------------------

def test_lmmse_noiseless_recovers_equivalent_channel(rng):
    cfg = desk_config(sigma2=1e-300, L_d=1, L_a=7)
    H_eq = cn(rng, 4, 4)
    est = lmmse_equivalent(np.sqrt(cfg.P_U) * H_eq[None], cfg)
    assert np.max(np.abs(est - H_eq)) < 1e-14


def test_lmmse_zero_frames():
    with pytest.raises(ValueError, match="L_d = 0"):
        lmmse_equivalent(np.zeros((0, 4, 4)), desk_config())


def test_lmmse_scalar_bayes(rng):
    # textbook conditioning: E[x|y] = C_xy C_yy^{-1} y with y = sqrt(P) 1 x + n
    for L_d, P, s2 in [(1, 10.0, 1.0), (3, 2.5, 0.4), (5, 0.3, 7.0)]:
        cfg = SystemConfig(M_h=1, M_v=1, N_RF=1, K=1, N_c=1, d_max=0, L=L_d + 1, L_a=1,
                           L_d=L_d, P_U=P, sigma2=s2)
        y = cn(rng, L_d)
        C_yy = P * np.ones((L_d, L_d)) + s2 * np.eye(L_d)
        C_xy = np.sqrt(P) * np.ones(L_d)
        oracle = C_xy @ np.linalg.solve(C_yy, y)
        est = lmmse_equivalent(y[:, None, None], cfg)[0, 0]
        assert abs(est - oracle) < 1e-12


def test_lmmse_mse_decreases_with_frames(rng):
    mses = []
    for L_d in (1, 2, 4):
        cfg = SystemConfig(M_h=1, M_v=1, N_RF=1, K=1, N_c=1, d_max=0, L=L_d + 1, L_a=1,
                           L_d=L_d, P_U=1.0, sigma2=1.0)
        x = cn(rng, 10_000)
        y = np.sqrt(cfg.P_U) * x[None] + cn(rng, L_d, 10_000)
        mses.append(np.mean(np.abs(lmmse_equivalent(y, cfg) - x) ** 2))
    assert mses[0] > mses[1] > mses[2]
    assert mses[0] == pytest.approx(0.5, rel=0.05)  # sigma2 / (P + sigma2)


def test_lmmse_linear(rng):
    cfg = desk_config()
    a, b = cn(rng, 2, 16, 4, 4)
    c = 0.4 - 1.1j
    assert np.allclose(lmmse_equivalent(a + c * b, cfg),
                       lmmse_equivalent(a, cfg) + c * lmmse_equivalent(b, cfg), rtol=0, atol=1e-13)


# -- power scaling -----------------------------------------------------------

def test_power_scale_examples(rng):
    V_RF = unit(rng, 16, 4)
    V_D = cn(rng, 4, 4)
    a = power_scale(V_D, V_RF, 10.0)
    b = power_scale(V_D, V_RF, 20.0)
    assert np.allclose(b, np.sqrt(2) * a, rtol=1e-13)
    half = power_scale(V_D, V_RF, 5.0)
    assert np.allclose(power_scale(half, V_RF, 10.0), a, rtol=1e-13)
    with pytest.raises(ValueError, match="zero precoder"):
        power_scale(np.zeros((4, 4)), V_RF, 10.0)


def test_power_equality_oracle(rng):
    V_RF = unit(rng, 50, 16, 4)
    V_D = power_scale(cn(rng, 50, 4, 4), V_RF, 10.0)
    for i in range(50):
        tr = np.trace(V_D[i].conj().T @ V_RF[i].conj().T @ V_RF[i] @ V_D[i]).real
        assert abs(tr - 10.0) / 10.0 < 1e-12
    assert np.allclose(transmit_power(V_D, V_RF), 10.0, rtol=1e-12)


# -- ZF ----------------------------------------------------------------------

def test_zf_single_user_is_mrt(rng):
    h = cn(rng, 3, 1)
    v = zf_direction(h)
    assert abs(abs(np.vdot(h[:, 0], v[:, 0])) - np.linalg.norm(h) * np.linalg.norm(v)) < 1e-12


def test_zf_nulls_on_estimate(rng):
    cfg = desk_config()
    for _ in range(200):
        H_eq = cn(rng, 4, 4)
        V_RF = unit(rng, 16, 4)
        V_D = zf_precoder(H_eq, V_RF, cfg)
        G = herm(H_eq) @ V_D
        off = G - np.diag(np.diag(G))
        assert np.max(np.abs(off)) < 1e-9 * np.linalg.norm(np.diag(G))
        assert transmit_power(V_D, V_RF) == pytest.approx(cfg.P_D, rel=1e-12)
        mags = np.abs(np.diag(G))
        assert np.allclose(mags, mags[0], rtol=1e-9)  # equal received amplitude


def test_zf_rate_matches_oracle(rng):
    cfg = desk_config()
    H_eq = cn(rng, 4, 4)
    V_D = zf_precoder(H_eq, unit(rng, 16, 4), cfg)
    gains = sinr_matrix(H_eq, V_D)
    signal = np.diag(gains)
    cross = gains - np.diag(signal)
    assert np.max(cross.sum(axis=1) / signal) < 1e-18
    ideal = np.log2(1 + signal / cfg.sigma2)
    assert np.allclose(rates_from_gains(gains, cfg.sigma2), ideal, rtol=1e-12)
    assert np.allclose(rate_oracle(H_eq, V_D, cfg.sigma2), ideal, rtol=1e-12)


def test_zf_degenerate():
    H_eq = np.ones((4, 4), dtype=complex)
    with pytest.raises(DegenerateChannelError):
        zf_direction(H_eq)
    H_eq = np.diag([1.0, 1.0, 1.0, 1e-7]).astype(complex)
    with pytest.raises(DegenerateChannelError, match="condition number"):
        zf_direction(H_eq)


# -- WMMSE -------------------------------------------------------------------

def test_wmmse_single_user(rng):
    cfg = desk_config(K=1, N_RF=1)
    V_RF = unit(rng, 16, 1)
    h = cn(rng, 16)
    H_eq = V_RF.conj().T @ h[:, None]  # (1, 1)
    res = wmmse_precoder(H_eq, V_RF, cfg)
    rate = rates_from_gains(sinr_matrix(H_eq, res.V_D), cfg.sigma2)[0]
    gain = abs(H_eq[0, 0]) ** 2 / np.linalg.norm(V_RF) ** 2
    assert rate == pytest.approx(np.log2(1 + cfg.P_D * gain / cfg.sigma2), abs=1e-9)
    assert res.converged


def test_wmmse_beats_zf_at_low_snr(rng):
    cfg = desk_config(sigma2=100.0)
    wins = 0
    for _ in range(100):
        H_eq = cn(rng, 4, 4)
        V_RF = unit(rng, 16, 4)
        zf = rates_from_gains(sinr_matrix(H_eq, zf_precoder(H_eq, V_RF, cfg)), cfg.sigma2).sum()
        V = wmmse_precoder(H_eq, V_RF, cfg).V_D
        assert transmit_power(V, V_RF) == pytest.approx(cfg.P_D, rel=1e-12)
        wm = rates_from_gains(sinr_matrix(H_eq, V), cfg.sigma2).sum()
        wins += wm >= zf
    assert wins >= 95


def test_wmmse_objective_monotone(rng):
    for sigma2 in (0.1, 1.0, 10.0):
        cfg = desk_config(sigma2=sigma2)
        for _ in range(20):
            res = wmmse_precoder(cn(rng, 4, 4), unit(rng, 16, 4), cfg)
            obj = np.array(res.objective)
            assert np.all(np.diff(obj) <= 1e-9 * np.abs(obj[:-1]))


def test_wmmse_respects_weights(rng):
    cfg = desk_config(sigma2=10.0)
    H_eq = cn(rng, 4, 4)
    V_RF = unit(rng, 16, 4)
    flat = rates_from_gains(sinr_matrix(H_eq, wmmse_precoder(H_eq, V_RF, cfg).V_D), cfg.sigma2)
    w = np.array([10.0, 1.0, 1.0, 1.0])
    tilted = rates_from_gains(sinr_matrix(H_eq, wmmse_precoder(H_eq, V_RF, cfg, w).V_D),
                              cfg.sigma2)
    assert tilted[0] > flat[0]
    assert w @ tilted >= w @ flat - 1e-9


def test_wmmse_non_convergence_flag(rng, caplog):
    cfg = desk_config(sigma2=10.0)
    with caplog.at_level(logging.WARNING, logger="tddhybrid.digital"):
        res = wmmse_precoder(cn(rng, 4, 4), unit(rng, 16, 4), cfg, max_iters=1)
    assert not res.converged and res.iterations == 1
    assert "did not converge" in caplog.text


def test_digital_precoders_broadcast(rng):
    cfg = desk_config()
    H_eq = cn(rng, 3, 5, 4, 4)
    V_RF = unit(rng, 3, 16, 4)
    for method in ("zf", "wmmse"):
        V_D = digital_precoders(H_eq, V_RF[:, None], cfg, method)
        assert V_D.shape == (3, 5, 4, 4)
        assert np.allclose(transmit_power(V_D, V_RF[:, None]), cfg.P_D, rtol=1e-12)
    with pytest.raises(ValueError, match="unknown"):
        digital_precoders(H_eq, V_RF[:, None], cfg, "mmse")


def test_degenerate_fallback(rng):
    cfg = desk_config()
    V_RF = unit(rng, 16, 4)
    V_RF[:, 3] = V_RF[:, 0] * np.exp(0.7j)  # two users share one beam
    H = cn(rng, 16, 4)
    H_eq = (V_RF.conj().T @ H)[None]
    for method in ("zf", "wmmse"):
        with pytest.raises(np.linalg.LinAlgError):
            digital_precoders(H_eq, V_RF, cfg, method)
        V_D = digital_precoders(H_eq, V_RF, cfg, method, fallback=True)
        assert np.allclose(transmit_power(V_D, V_RF), cfg.P_D, rtol=1e-12)
        assert np.allclose(V_D[0], degenerate_fallback(H_eq[0], V_RF, cfg))
    r = rates_from_gains(sinr_matrix(H_eq[0], degenerate_fallback(H_eq[0], V_RF, cfg)),
                         cfg.sigma2)
    assert np.all(np.isfinite(r)) and np.all(r > 0)
