import math

import numpy as np
import pytest

from proxcubic import ipcnm
from proxcubic.cubic_model import et_components
from proxcubic.problem import (NonsmoothTerm, ScheduleConfig, make_logistic, make_quadratic,
                              reference_minimum)

from conftest import logistic_instance


def test_budget_convex_example():
    cfg = ScheduleConfig(L3=1.0, D=1.0)
    b = ipcnm.budget_convex(1, cfg)
    assert b.hess_err == pytest.approx(0.5)
    assert b.grad_err == pytest.approx(0.125)
    assert b.sub_gap == pytest.approx(0.75)
    assert b.Et_total == pytest.approx(4.5)
    assert ipcnm.budget_convex(0, cfg) == b


def test_budget_convex_decreases_and_is_sound():
    cfg = ScheduleConfig(L3=2.5, D=0.7)
    prev = None
    for i in range(1, 200):
        b = ipcnm.budget_convex(i, cfg)
        assert sum(et_components(b.grad_err, b.hess_err, b.sub_gap, cfg.L3)) \
            <= b.Et_total * (1 + 1e-9)
        if prev is not None:
            assert b.grad_err < prev.grad_err and b.hess_err < prev.hess_err
            assert b.sub_gap < prev.sub_gap and b.Et_total < prev.Et_total
        prev = b


@pytest.mark.parametrize("Et", [1e-9, 0.3, 17.0])
def test_split_budget_is_exact(Et):
    b = ipcnm.split_budget(Et, 1.7)
    parts = et_components(b.grad_err, b.hess_err, b.sub_gap, 1.7)
    np.testing.assert_allclose(parts, Et / 3.0, rtol=1e-12)


def test_strongly_convex_budget():
    cfg = ScheduleConfig(L3=1.0, D=1.0, sigma2=1.0 / 3.0)
    assert ipcnm.alpha_strongly_convex(cfg) == pytest.approx(1.0 / 3.0)
    b0 = ipcnm.budget_strongly_convex(0, 10, cfg, 5.0)
    assert b0.Et_total == pytest.approx(0.5)
    for i in range(20):
        r = (ipcnm.budget_strongly_convex(i + 1, 10, cfg, 5.0).Et_total
             / ipcnm.budget_strongly_convex(i, 10, cfg, 5.0).Et_total)
        assert r == pytest.approx(2.0 / 3.0, rel=1e-12)
    with pytest.raises(ValueError):
        ipcnm.budget_strongly_convex(0, 10, ScheduleConfig(), 5.0)


def test_superlinear_budget():
    cfg = ScheduleConfig(L3=1.0, sigma2=2.0)
    assert ipcnm.omega(cfg) == pytest.approx(1.0)
    assert ipcnm.budget_superlinear(4, 4, cfg).Et_total == pytest.approx(0.5 * (2 / 3) ** 1.5)
    assert ipcnm.budget_superlinear(5, 4, cfg).Et_total == pytest.approx(0.5 * (2 / 3) ** 2.25)
    logs = [math.log(ipcnm.budget_superlinear(i, 0, cfg).Et_total / 0.5) for i in range(6)]
    for a, b in zip(logs, logs[1:]):
        assert b / a == pytest.approx(1.5)
    assert ipcnm.budget_superlinear(500, 0, cfg).Et_total == np.finfo(float).eps
    with pytest.raises(ValueError):
        ipcnm.budget_superlinear(2, 3, cfg)


def test_alpha_convex_identity():
    for t in range(100):
        assert ipcnm.alpha_convex(t) == 3.0 / (t + 3.0)


def test_config_defaults_and_errors():
    cfg = ScheduleConfig(L3=2.0)
    assert ipcnm.IpcnmConfig(cfg=cfg).eta == 6.0
    with pytest.raises(ValueError):
        ipcnm.IpcnmConfig(mode="nope")
    with pytest.raises(ValueError):
        ipcnm.IpcnmConfig(mode="strongly_convex", cfg=cfg)
    with pytest.raises(ValueError):
        ipcnm.IpcnmConfig(subsolver="cg")


def quad(d=6, seed=0, L3=1e-7, h=None):
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((12, d, 1))
    return make_quadratic(U, rng.standard_normal(d), h, L3=L3, D=10.0)


def test_quadratic_step_is_newton_step():
    p = quad()
    x0 = np.ones(p.dim)
    A = p.hess(x0)
    newton = x0 - np.linalg.solve(A, p.grad(x0))
    log = ipcnm.run(p, ipcnm.IpcnmConfig(cfg=p.constants, exact_oracles=True,
                                         sub_tol_cap=1e-14), 1, np.random.default_rng(0), x0)
    np.testing.assert_allclose(log.iterates[1], newton, atol=1e-4)


def test_stationary_start_is_fixed_point(logistic_l1):
    x_star, _ = reference_minimum(logistic_l1, tol=1e-12)
    log = ipcnm.run(logistic_l1, ipcnm.IpcnmConfig(cfg=logistic_l1.constants, exact_oracles=True,
                                                   sub_tol_cap=1e-14),
                    3, np.random.default_rng(0), x_star)
    for x in log.iterates:
        np.testing.assert_allclose(x, x_star, atol=1e-6)


def test_exact_oracles_descend(logistic_l1):
    log = ipcnm.run(logistic_l1, ipcnm.IpcnmConfig(cfg=logistic_l1.constants, exact_oracles=True),
                    15, np.random.default_rng(0))
    F = log.column("fval")
    assert np.all(np.diff(F) <= 1e-10)
    assert "exact_grad" in log.last["flags"]


def test_zero_iterations_keeps_initial_point(logistic_l1):
    log = ipcnm.run(logistic_l1, ipcnm.IpcnmConfig(cfg=logistic_l1.constants), 0)
    assert len(log) == 1 and log.last["iter"] == 0
    with pytest.raises(ValueError):
        ipcnm.run(logistic_l1, ipcnm.IpcnmConfig(cfg=logistic_l1.constants), -1)


def test_convex_rate_with_exact_oracles(logistic_l1):
    x_star, f_star = reference_minimum(logistic_l1, tol=1e-12)
    cfg = logistic_l1.constants
    log = ipcnm.run(logistic_l1, ipcnm.IpcnmConfig(cfg=cfg, exact_oracles=True), 20,
                    np.random.default_rng(0), f_star=f_star)
    gaps = np.maximum(log.column("gap"), 0.0)
    t = np.arange(len(gaps))
    assert np.all((t + 1) * (t + 2) * gaps <= 27 * cfg.L3 * cfg.D ** 3)


def test_strongly_convex_rate():
    base = logistic_instance(seed=1, d=10, n=300)
    p = make_logistic(base.data, base.targets, NonsmoothTerm.l1_plus_l2(0.01, 0.5))
    cfg = p.constants
    assert cfg.sigma2 == pytest.approx(0.5)
    _, f_star = reference_minimum(p, tol=1e-12)
    T = 15
    log = ipcnm.run(p, ipcnm.IpcnmConfig(mode="strongly_convex", cfg=cfg, exact_oracles=True),
                    T, np.random.default_rng(0), f_star=f_star)
    alpha = ipcnm.alpha_strongly_convex(cfg)
    gap0 = log.rows[0]["gap"]
    F0_est = log.F0_gap_estimate
    for t, g in enumerate(log.column("gap")):
        sched = sum((1 - alpha) ** (t - 1 - i) * F0_est * (1 - alpha) ** i / T for i in range(t))
        assert g <= (1 - alpha) ** t * gap0 + sched + 1e-12


def test_sampled_budgets_hold_often():
    p = logistic_instance(seed=2, d=8, n=2000)
    x_star, _ = reference_minimum(p)
    # a tight D keeps the budgets small enough that batches are genuinely partial
    cfg = p.constants.replace(delta=0.2, D=float(np.linalg.norm(x_star)))
    violations = total = 0
    for seed in range(3):
        log = ipcnm.run(p, ipcnm.IpcnmConfig(cfg=cfg), 12, np.random.default_rng(seed),
                        diagnostics=True)
        measured = log.column("Et_measured")[1:]
        budget = log.column("Et_budget")[1:]
        violations += int(np.sum(measured > budget))
        total += measured.size
        assert log.rows[3]["hess_samples_cum"] < 3 * p.n_samples
    assert violations / total <= cfg.delta
