import numpy as np
import pytest

from tddhybrid.baselines import (AngleDictionary, OmpError, analog_from_channels,
                                 baseline_pipeline, ofdm_subset, omp_estimate, phase_match)
from tddhybrid.channel import array_response
from tddhybrid.config import desk_config, desk_ofdm_config
from tddhybrid.evaluation import evaluate_scheme, sum_rate, sum_rates
from tddhybrid.rng import complex_normal
from tddhybrid.sensing import random_sensing


def test_dictionary_invariants():
    cfg = desk_config()
    d = AngleDictionary.create(cfg)
    assert d.size == 64 and d.atoms.shape == (16, 64)
    assert np.max(np.abs(np.abs(d.atoms) - 1)) < 1e-12
    assert np.all(np.abs(d.angles) < np.pi / 2)
    assert np.isclose(d.angles[:, 0].min(), -np.pi / 2 + np.pi / 16)
    assert AngleDictionary.create(cfg, 3, 5).size == 15


def test_omp_exact_recovery_on_grid(rng):
    cfg = desk_config()
    d = AngleDictionary.create(cfg)
    for g in rng.choice(d.size, 10, replace=False):
        h = (0.8 - 0.3j) * d.atoms[:, g]
        W = random_sensing(1, 2, cfg.M, rng).stacked  # 2 measurements
        res = omp_estimate(np.sqrt(cfg.P_U) * W @ h, W, d, 1, cfg.P_U)
        assert res.support == [g]
        assert np.linalg.norm(res.h - h) / np.linalg.norm(h) < 1e-6


def test_omp_zero_measurement(rng):
    cfg = desk_config()
    W = random_sensing(2, 4, cfg.M, rng).stacked
    res = omp_estimate(np.zeros(8), W, AngleDictionary.create(cfg), 3)
    assert np.all(res.h == 0)


def test_omp_residual_non_increasing(rng):
    cfg = desk_config()
    d = AngleDictionary.create(cfg)
    for _ in range(50):
        W = random_sensing(3, 4, cfg.M, rng).stacked
        y = complex_normal(rng, 12)
        r = omp_estimate(y, W, d, 8).residual_norms
        assert len(r) == 9
        assert np.all(np.diff(r) <= 1e-12)


def test_omp_sparsity_exceeds_measurements(rng):
    cfg = desk_config()
    W = random_sensing(1, 2, cfg.M, rng).stacked
    with pytest.raises(OmpError, match="exceeds"):
        omp_estimate(np.ones(2), W, AngleDictionary.create(cfg), 3)


def test_phase_match_examples(rng):
    assert np.array_equal(phase_match(np.array([1.0, 2.0, 0.5])), np.ones(3))
    h = complex_normal(rng, 8)
    assert np.allclose(phase_match(3.7 * h), phase_match(h), rtol=0, atol=1e-15)
    assert phase_match(np.zeros(2))[0] == 1.0


def test_phase_match_beats_random_beams(rng):
    h = complex_normal(rng, 4)
    v = phase_match(h)
    best = abs(np.vdot(h, v))
    assert best == pytest.approx(np.sum(np.abs(h)), rel=1e-14)
    U = np.exp(1j * rng.uniform(0, 2 * np.pi, (100_000, 4)))
    assert np.max(np.abs(U @ h.conj())) <= best


def test_ofdm_analog_uses_principal_direction(rng):
    cfg = desk_ofdm_config()
    a = array_response(0.3, -0.2, cfg)
    H = (a[None, :, None] * complex_normal(rng, (4, 1, 16)))  # rank one across subcarriers
    V = analog_from_channels(H)
    for k in range(4):
        assert abs(abs(np.vdot(V[:, k], a)) - cfg.M) < 1e-9
    assert list(ofdm_subset(16)) == [0, 8]


def test_perfect_csi_single_user_closed_form(rng):
    cfg = desk_config(K=1)
    for _ in range(20):
        h = complex_normal(rng, (1, cfg.M, 1))
        V_RF, V_D = baseline_pipeline(h, cfg, rng, "perfect_csi")
        rate = sum_rate(h, V_RF, V_D, cfg).sum_rate
        closed = np.log2(1 + cfg.P_D * np.sum(np.abs(h)) ** 2 / (cfg.M * cfg.sigma2))
        assert abs(rate - closed) < 1e-9


def test_noiseless_on_grid_omp_matches_perfect_csi(rng):
    cfg = desk_config(K=1, L_p=1)
    d = AngleDictionary.create(cfg)
    for g in rng.choice(d.size, 10, replace=False):
        h = (complex_normal(rng, 1) * d.atoms[:, g])[None, :, None]
        perfect = sum_rate(h, *baseline_pipeline(h, cfg, rng, "perfect_csi"), cfg).sum_rate
        omp = sum_rate(h, *baseline_pipeline(h, cfg, rng, "omp", dictionary=d, noiseless=True),
                       cfg).sum_rate
        assert abs(perfect - omp) < 1e-6


def test_both_digital_modes_run(rng):
    cfg = desk_ofdm_config()
    H = complex_normal(rng, (4, cfg.M, cfg.N_c))
    for digital in ("estimate", "lmmse"):
        V_RF, V_D = baseline_pipeline(H, cfg, rng, "omp", digital=digital)
        assert V_RF.shape == (16, 4) and V_D.shape == (16, 4, 4)
    with pytest.raises(ValueError, match="unknown"):
        baseline_pipeline(H, cfg, rng, "gamp")


def test_genie_dominance():
    cfg = desk_config()
    perfect = sum_rates(evaluate_scheme(cfg, "perfect_csi", 500, seed=3))
    omp = sum_rates(evaluate_scheme(cfg, "omp_baseline", 500, seed=3))
    assert perfect.mean() >= omp.mean()
