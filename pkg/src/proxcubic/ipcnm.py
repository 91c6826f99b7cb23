"""Inexact proximal cubic-regularized Newton method (non-accelerated).

Each step builds the cubic model with eta = 3 L3 at the current iterate from
subsampled derivatives and solves it inexactly.  Error budgets decide batch
sizes and the subproblem tolerance so that the aggregate inexactness

    E_t = 4/(3 L3^2) ||hess f - H||^3 + 4/3 (2/L3)^{1/2} ||grad f - g||^{3/2} + sub_gap

follows the schedule of the chosen mode.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import svrg
from .cubic_model import CubicModel, ModelSolution, model_value, reference_solve
from .problem import CompositeProblem, ScheduleConfig
from .runlog import Counters, RunLog
from .sampling import (grad_batch_size, hess_batch_size, sample_gradient,
                       sample_hessian)

logger = logging.getLogger(__name__)

__all__ = [
    "ErrorBudget", "IpcnmConfig", "IpcnmState", "budget_convex", "budget_strongly_convex",
    "budget_superlinear", "split_budget", "alpha_convex", "alpha_strongly_convex",
    "omega", "step", "run", "solve_model", "initial_gap_estimate",
]

MODES = ("convex", "strongly_convex", "superlinear_tail")
SUBSOLVERS = ("reference", "svrg")

# subproblem tolerances below this are not meaningful in double precision
SUB_TOL_FLOOR = 1e-18


@dataclass(frozen=True)
class ErrorBudget:
    grad_err: float
    hess_err: float
    sub_gap: float
    Et_total: float


def budget_convex(i, cfg: ScheduleConfig) -> ErrorBudget:
    """Polynomially decaying targets giving E_i <= 27 L3 D^3/(i(i+1)(i+2)).

    Iteration 0 reuses the i = 1 budget.
    """
    i = max(int(i), 1)
    L3, D = cfg.L3, cfg.D
    k = i + 2
    return ErrorBudget(
        grad_err=9.0 * L3 * D ** 2 / (8.0 * k ** 2),
        hess_err=3.0 * L3 * D / (2.0 * k),
        sub_gap=81.0 * L3 * D ** 3 / (4.0 * k ** 3),
        Et_total=27.0 * L3 * D ** 3 / (i * (i + 1) * (i + 2)),
    )


def split_budget(Et_total, L3) -> ErrorBudget:
    """Spend a third of Et_total on each inexactness term."""
    third = Et_total / 3.0
    hess_err = (Et_total * L3 ** 2 / 4.0) ** (1.0 / 3.0)
    grad_err = (Et_total / (4.0 * math.sqrt(2.0 / L3))) ** (2.0 / 3.0)
    return ErrorBudget(grad_err, hess_err, third, Et_total)


def alpha_convex(t) -> float:
    """Combination weight used by the convex-rate argument at step t."""
    return 3.0 / (t + 3.0)


def alpha_strongly_convex(cfg: ScheduleConfig) -> float:
    if not cfg.sigma2 > 0:
        raise ValueError("strongly convex schedule needs sigma2 > 0")
    return min(1.0 / 3.0, math.sqrt(cfg.sigma2 / (3.0 * cfg.L3 * cfg.D)))


def budget_strongly_convex(i, t_horizon, cfg: ScheduleConfig, F0_gap_estimate) -> ErrorBudget:
    """Geometric targets E_i = F0_gap (1 - alpha)^i / t_horizon."""
    alpha = alpha_strongly_convex(cfg)
    if not F0_gap_estimate > 0:
        raise ValueError("F0_gap_estimate must be positive")
    Et = F0_gap_estimate * (1.0 - alpha) ** i / t_horizon
    return split_budget(Et, cfg.L3)


def omega(cfg: ScheduleConfig) -> float:
    return (cfg.sigma2 / 2.0) ** 3 / cfg.L3 ** 2


def budget_superlinear(i, t0, cfg: ScheduleConfig) -> ErrorBudget:
    """Doubly exponential targets E_i = (omega/2)(2/3)^{(3/2)^{i - t0 + 1}}."""
    if not cfg.sigma2 > 0:
        raise ValueError("superlinear schedule needs sigma2 > 0")
    if i < t0:
        raise ValueError("superlinear budget needs i >= t0")
    expo = 1.5 ** (i - t0 + 1)
    try:
        Et = 0.5 * omega(cfg) * math.exp(expo * math.log(2.0 / 3.0))
    except OverflowError:
        Et = 0.0
    Et = max(Et, np.finfo(float).eps)
    return split_budget(Et, cfg.L3)


@dataclass
class IpcnmConfig:
    mode: str = "convex"
    cfg: ScheduleConfig = field(default_factory=ScheduleConfig)
    eta: Optional[float] = None
    subsolver: str = "reference"
    F0_gap_estimate: Optional[float] = None
    exact_oracles: bool = False
    sub_tol_cap: Optional[float] = None
    max_sub_iter: int = 1_000_000
    record_wall_time: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.subsolver not in SUBSOLVERS:
            raise ValueError(f"unknown subsolver {self.subsolver!r}")
        if self.eta is None:
            self.eta = 3.0 * self.cfg.L3
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.mode != "convex" and not self.cfg.sigma2 > 0:
            raise ValueError(f"mode {self.mode} needs sigma2 > 0")


@dataclass
class IpcnmState:
    x: np.ndarray
    t: int = 0
    counters: Counters = field(default_factory=Counters)
    t0: Optional[int] = None
    last_solution: Optional[ModelSolution] = None


def solve_model(model: CubicModel, tol, subsolver, rng, max_iter=1_000_000) -> ModelSolution:
    tol = max(tol, SUB_TOL_FLOOR)
    if subsolver == "svrg":
        cfg = svrg.SvrgConfig.from_model(model, target_gap=tol)
        return svrg.solve(model, cfg, rng)
    return reference_solve(model, tol, max_iter=max_iter)


def _build_model(problem, x, budget, config: IpcnmConfig, rng, shift=0.0, eta=None):
    cfg = config.cfg
    n = problem.n_samples
    fail = cfg.delta / cfg.horizon_T
    if config.exact_oracles:
        gb = hb = n
    else:
        gb = grad_batch_size(budget.grad_err, fail, cfg, n)
        hb = hess_batch_size(budget.hess_err, fail, cfg, problem.dim, n)
    ge = sample_gradient(problem, x, gb, rng, budget.grad_err, fail)
    he = sample_hessian(problem, x, hb, shift, rng, budget.hess_err)
    model = CubicModel(x, ge.g, he, config.eta if eta is None else eta, problem.f(x),
                       problem.nonsmooth)
    return model, ge, he


def step(state: IpcnmState, problem: CompositeProblem, budget: ErrorBudget,
         config: IpcnmConfig, rng):
    """One inexact cubic Newton step; returns (new state, row values)."""
    model, ge, he = _build_model(problem, state.x, budget, config, rng)
    tol = budget.sub_gap
    if config.sub_tol_cap is not None:
        tol = min(tol, config.sub_tol_cap)
    sol = solve_model(model, tol, config.subsolver, rng, config.max_sub_iter)
    flags = []
    if ge.exact:
        flags.append("exact_grad")
    if he.exact:
        flags.append("exact_hess")
    if sol.warning:
        flags.append("sub_warning")
    c = state.counters
    counters = Counters(c.grad_samples + ge.batch, c.hess_samples + he.batch, c.hvp + sol.hvp_count)
    new = IpcnmState(sol.x, state.t + 1, counters, state.t0, sol)
    row = dict(iter=new.t, fval=problem.F(sol.x), grad_samples_cum=counters.grad_samples,
               hess_samples_cum=counters.hess_samples, hvp_count_cum=counters.hvp,
               subsolver_iters=sol.inner_iters, Et_budget=budget.Et_total,
               sub_gap=sol.model_gap_bound, flags=";".join(flags))
    return new, row, model


def initial_gap_estimate(problem: CompositeProblem, x0, eta) -> float:
    """Ten times the decrease of the exact cubic model at x0."""
    x0 = np.asarray(x0, float)
    he = sample_hessian(problem, x0, problem.n_samples)
    model = CubicModel(x0, problem.grad(x0), he, eta, problem.f(x0), problem.nonsmooth)
    sol = reference_solve(model, 1e-10)
    drop = problem.F(x0) - model_value(model, sol.x)
    return 10.0 * max(drop, np.finfo(float).eps)


def _gap_surrogate(cfg: ScheduleConfig, eta, step_vec) -> float:
    """Strong-convexity gap surrogate after a step of displacement step_vec.

    At an exact model minimizer ||grad F(x+)|| <= (eta + L3)/2 ||x+ - x||^2 up
    to oracle errors, and F(x+) - F* <= ||grad F(x+)||^2 / (2 sigma2).
    """
    r2 = float(step_vec @ step_vec)
    s = 0.5 * (eta + cfg.L3) * r2
    return s * s / (2.0 * cfg.sigma2)


def run(problem: CompositeProblem, config: IpcnmConfig, T, rng=None, x0=None,
        f_star=None, diagnostics=False) -> RunLog:
    """T steps of the method under the mode's error-budget schedule.

    With ``f_star`` the gap column is filled and, in superlinear_tail mode,
    the switch to the doubly exponential budget uses the true gap; otherwise
    a strong-convexity surrogate triggers it.  ``diagnostics`` adds the
    measured inexactness E_t (exact derivatives, test scale only).
    """
    from .cubic_model import compute_Et

    if T < 0:
        raise ValueError("T must be >= 0")
    rng = np.random.default_rng() if rng is None else rng
    x0 = np.zeros(problem.dim) if x0 is None else np.asarray(x0, float)
    cfg = config.cfg.replace(horizon_T=max(int(T), 1))
    config = IpcnmConfig(**{**config.__dict__, "cfg": cfg})
    extra = ("sub_gap", "Et_measured") if diagnostics else ("sub_gap",)
    log = RunLog(extra_columns=extra)
    F0 = problem.F(x0)
    log.append(x0, iter=0, wall_ms=0.0, fval=F0,
               gap=F0 - f_star if f_star is not None else math.nan,
               grad_samples_cum=0, hess_samples_cum=0, hvp_count_cum=0,
               subsolver_iters=0, Et_budget=math.nan, flags="")
    F0_gap = None
    if config.mode != "convex":
        F0_gap = config.F0_gap_estimate or initial_gap_estimate(problem, x0, config.eta)
    om = omega(cfg) if config.mode == "superlinear_tail" else math.nan
    state = IpcnmState(x0)
    start = time.perf_counter()
    for t in range(int(T)):
        if config.mode == "superlinear_tail" and state.t0 is None:
            if f_star is not None:
                gap_now = log.last["fval"] - f_star
            elif t == 0:
                gap_now = math.inf
            else:
                gap_now = _gap_surrogate(cfg, config.eta, state.x - log.iterates[-2])
            if gap_now <= 2.0 / 3.0 * om:
                state.t0 = t
        if config.mode == "convex":
            budget = budget_convex(t, cfg)
        elif state.t0 is not None:
            budget = budget_superlinear(t, state.t0, cfg)
        else:
            budget = budget_strongly_convex(t, cfg.horizon_T, cfg, F0_gap)
        prev_x = state.x
        state, row, model = step(state, problem, budget, config, rng)
        if state.t0 is not None and config.mode == "superlinear_tail":
            row["flags"] = ";".join(filter(None, [row["flags"], "superlinear"]))
        if diagnostics:
            row["Et_measured"] = compute_Et(problem, prev_x, model.g, model.H,
                                            row["sub_gap"], cfg)[0]
        row["wall_ms"] = (time.perf_counter() - start) * 1e3 if config.record_wall_time else 0.0
        row["gap"] = row["fval"] - f_star if f_star is not None else math.nan
        log.append(state.x, **row)
        if state.last_solution.warning:
            logger.warning("iteration %d: %s", state.t, state.last_solution.warning)
    log.t0 = state.t0
    log.F0_gap_estimate = F0_gap
    return log
