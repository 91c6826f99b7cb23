import logging
import math

import numpy as np
import pytest

from proxcubic import _kernels, svrg
from proxcubic.cubic_model import CubicModel, model_value, prox_cubic_h, reference_solve
from proxcubic.problem import NonsmoothTerm
from proxcubic.sampling import HessianEstimate


def sample_model(seed, n=20, d=10, k=1, h=None, eta=1.0, gscale=3.0, shift=0.0):
    rng = np.random.default_rng(seed)
    fac = rng.standard_normal((n, d, k)) * rng.uniform(0.2, 2.0, (n, 1, 1))
    H = HessianEstimate(fac, shift, np.arange(n), exact=True)
    h = NonsmoothTerm.l1_plus_l2(0.1, 0.5) if h is None else h
    return CubicModel(rng.standard_normal(d), gscale * rng.standard_normal(d), H, eta,
                      rng.standard_normal(), h)


def test_importance_weights_examples(caplog):
    np.testing.assert_allclose(svrg.importance_weights([2, 3, 5]), [0.2, 0.3, 0.5])
    np.testing.assert_allclose(svrg.importance_weights([4, 4, 4, 4]), 0.25)
    np.testing.assert_allclose(svrg.importance_weights([7.0]), [1.0])
    q = svrg.importance_weights([0.0, 1.0])
    assert q[0] > 0 and q.sum() == pytest.approx(1.0)
    with caplog.at_level(logging.WARNING):
        np.testing.assert_allclose(svrg.importance_weights([0.0, 0.0]), 0.5)
    assert "uniform" in caplog.text


def cfg_with(L2=1.0, eta=12.0, m=4, kappa2=math.inf):
    kappa3 = 0.5 * L2 * (12.0 / eta) ** (2.0 / 3.0)
    return svrg.SvrgConfig(m=m, tau0=0.1 / L2, L2=L2, kappa2=kappa2, kappa3=kappa3,
                           q=np.array([1.0]))


def test_stage_params_examples():
    cfg = cfg_with()
    assert cfg.kappa3 == pytest.approx(0.5)
    M, tau = svrg.stage_params(cfg, 1.0)
    assert M == 200 and tau == pytest.approx(0.05)
    M, tau = svrg.stage_params(cfg, 4.0 ** -3)
    assert tau == pytest.approx(cfg.tau0)
    M, tau = svrg.stage_params(cfg, 1e30)
    assert M == math.ceil(100 * 0.5 * 4) and tau == pytest.approx(1e-3 * cfg.tau0)
    # strong convexity caps the inner length
    M, _ = svrg.stage_params(cfg_with(kappa2=3.0), 1e-12)
    assert M == 300
    with pytest.raises(ValueError):
        svrg.stage_params(cfg, 0.0)


def test_stage_contraction_value():
    assert svrg.stage_contraction(cfg_with()) == pytest.approx(1 / 6 + 2 / 3)
    assert svrg.stage_contraction(cfg_with(kappa2=1e12)) == pytest.approx(5 / 6, rel=1e-9)


def test_config_invariants():
    m = sample_model(0)
    cfg = svrg.SvrgConfig.from_model(m)
    assert cfg.q.sum() == pytest.approx(1.0) and np.all(cfg.q > 0)
    assert cfg.tau0 * cfg.L2 == pytest.approx(0.1, rel=1e-15)
    assert cfg.m == 20
    assert cfg.kappa2 == pytest.approx(cfg.L2 / 0.5)


def test_estimator_is_unbiased():
    m = sample_model(1, shift=0.3)
    cfg = svrg.SvrgConfig.from_model(m)
    rng = np.random.default_rng(0)
    w, w_tilde = rng.standard_normal((2, 10))
    mu_tilde = m.g + m.H.apply(w_tilde)
    mean = sum(cfg.q[i] * svrg.variance_reduced_gradient(m, cfg.q, w, w_tilde, mu_tilde, i)
               for i in range(20))
    np.testing.assert_allclose(mean, m.g + m.H.apply(w), atol=1e-12)


def test_compiled_inner_step_matches_reference():
    m = sample_model(2, shift=0.2)
    cfg = svrg.SvrgConfig.from_model(m)
    rng = np.random.default_rng(1)
    w_tilde = rng.standard_normal(10)
    mu_tilde = m.g + m.H.apply(w_tilde)
    lam, sig, box, lo, hi = m.encoded_h()
    for i in (0, 7, 19):
        out = _kernels.svrg_inner(w_tilde, mu_tilde, m.H.factors, m.H.shift, cfg.q,
                                  np.array([i]), 0.01, m.y, m.eta, lam, sig, box, lo, hi)
        grad = svrg.variance_reduced_gradient(m, cfg.q, w_tilde, w_tilde, mu_tilde, i)
        expect = prox_cubic_h(m.nonsmooth, m.y, m.eta, 0.01, w_tilde - 0.01 * grad)
        np.testing.assert_allclose(out, expect, atol=1e-14)


def test_single_sample_reduces_to_prox_gradient():
    m = sample_model(3, n=1)
    sol = svrg.solve(m, rng=np.random.default_rng(0))
    ref = reference_solve(m, 1e-12)
    np.testing.assert_allclose(sol.x, ref.x, atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_matches_reference_solution(seed):
    h = [NonsmoothTerm.zero(), NonsmoothTerm.l1(0.2), NonsmoothTerm.box(-0.3, 0.3),
         NonsmoothTerm.l2_squared(0.4), NonsmoothTerm.l1_plus_l2(0.1, 0.5)][seed]
    m = sample_model(10 + seed, h=h, k=2)
    if h.kind == "box":
        m.y = np.clip(m.y, -0.3, 0.3)
    sol = svrg.solve(m, svrg.SvrgConfig.from_model(m, target_gap=1e-11, max_stages=400),
                     np.random.default_rng(seed))
    ref = reference_solve(m, 1e-12)
    assert sol.warning == ""
    assert abs(model_value(m, sol.x) - model_value(m, ref.x)) <= 1e-8
    assert sol.hvp_count > 0


def test_optimal_start_is_fixed_point():
    m = sample_model(4)
    ref = reference_solve(m, 1e-14)
    sol = svrg.solve(m, rng=np.random.default_rng(0), w0=ref.x)
    np.testing.assert_allclose(sol.x, ref.x, atol=1e-6)


def test_gap_estimate_properties():
    for seed in range(100):
        m = sample_model(seed, n=8, d=5, eta=0.5 + seed % 7,
                         h=[NonsmoothTerm.zero(), NonsmoothTerm.l1(0.3)][seed % 2])
        best = model_value(m, reference_solve(m, 1e-13).x)
        w = np.random.default_rng(seed).standard_normal(5)
        est = svrg.gap_estimate(m, w)
        true_gap = model_value(m, w + m.y) - best
        assert est >= true_gap - 1e-12
    m = sample_model(5)
    ref = reference_solve(m, 1e-14)
    assert svrg.gap_estimate(m, ref.x - m.y) <= 1e-8
    # at the anchor the estimate bounds the full model decrease
    est0 = svrg.gap_estimate(m, np.zeros(10), step=1.0)
    assert est0 >= model_value(m, m.y) - model_value(m, ref.x) - 1e-12


def test_stage_history_is_monotone():
    m = sample_model(6, h=NonsmoothTerm.l1(0.1))
    sol = svrg.solve(m, rng=np.random.default_rng(2))
    gaps = [r.gap_estimate for r in sol.history]
    assert all(b <= a for a, b in zip(gaps, gaps[1:]))
    assert all(r.M_s >= 1 and r.tau_s > 0 for r in sol.history)


def test_stage_budget_exhaustion_warns():
    m = sample_model(7)
    cfg = svrg.SvrgConfig.from_model(m, target_gap=1e-300, max_stages=2)
    sol = svrg.solve(m, cfg, np.random.default_rng(0))
    assert "stage budget" in sol.warning
    assert len(sol.history) == 2
