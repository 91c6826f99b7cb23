"""Accelerated inexact proximal cubic-regularized Newton method.

An estimating sequence

    psi_t(x) = <s, x> + A_t h(x) + (C1/2)||x - x0||^2 + (C2/3)||x - x0||^3 + const

accumulates linearizations at the iterates; its minimizer v_t is mixed with
x_t to form the anchor y_t of a cubic model with eta = 4 L3.  Hessian
estimates carry an identity shift so that mu_t/2 <= H_t - hess f(y_t) <= mu_t.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels, svrg
from .cubic_model import CubicModel, gap_certificate, reference_solve
from .problem import CompositeProblem, NonsmoothTerm, ScheduleConfig
from .runlog import Counters, RunLog
from .sampling import grad_batch_size, hess_batch_size, sample_gradient, sample_hessian

logger = logging.getLogger(__name__)

__all__ = [
    "EstimatingSequence", "AipcnmConfig", "schedule_convex", "schedule_strongly_convex",
    "psi_update", "psi_argmin", "psi_value", "q_residual_diag", "QReport",
    "feasibility", "step", "run", "AipcnmState",
]

MODES = ("convex", "strongly_convex")


@dataclass
class EstimatingSequence:
    x0: np.ndarray
    C1: float
    C2: float
    s: np.ndarray = None
    A_weight: float = 0.0
    constant_part: float = 0.0

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.s is None:
            self.s = np.zeros_like(self.x0)
        if not (self.C1 > 0 and self.C2 > 0):
            raise ValueError("C1 and C2 must be positive")

    def copy(self) -> "EstimatingSequence":
        return EstimatingSequence(self.x0.copy(), self.C1, self.C2, self.s.copy(),
                                  self.A_weight, self.constant_part)


def psi_value(seq: EstimatingSequence, x, nonsmooth: NonsmoothTerm) -> float:
    x = np.asarray(x, dtype=float)
    u = x - seq.x0
    nu = float(np.linalg.norm(u))
    val = float(seq.s @ x) + 0.5 * seq.C1 * nu ** 2 + seq.C2 / 3.0 * nu ** 3 + seq.constant_part
    if seq.A_weight > 0:
        val += seq.A_weight * nonsmooth.eval(x)
    return val


def psi_update(seq: EstimatingSequence, a_t, f_at_x, g_prime, x_next) -> EstimatingSequence:
    """Add a_t (f(x_next) + <g', x - x_next> + h(x)) to psi."""
    if a_t < 0:
        raise ValueError("a_t must be nonnegative")
    g_prime = np.asarray(g_prime, dtype=float)
    return EstimatingSequence(
        seq.x0, seq.C1, seq.C2, seq.s + a_t * g_prime, seq.A_weight + a_t,
        seq.constant_part + a_t * (f_at_x - float(g_prime @ np.asarray(x_next, float))))


def psi_argmin(seq: EstimatingSequence, nonsmooth: NonsmoothTerm) -> np.ndarray:
    """Exact minimizer of psi.

    Dividing by A_weight turns the problem into the cubic prox
    argmin_u ||u - z||^2/(2 step) + (eta/6)||u||^3 + h(u + x0) with
    step = A/C1, z = -s/C1, eta = 2 C2/A.  With A = 0 the minimizer is
    radial: u = -s/(C1 + C2 rho) with rho (C1 + C2 rho) = ||s||.
    """
    d = seq.x0.shape[0]
    if seq.A_weight == 0.0 or nonsmooth.kind == "zero":
        ns = float(np.linalg.norm(seq.s))
        if ns == 0.0:
            return seq.x0.copy()
        rho = 2.0 * ns / (seq.C1 + math.sqrt(seq.C1 ** 2 + 4.0 * seq.C2 * ns))
        return seq.x0 - seq.s / (seq.C1 + seq.C2 * rho)
    A = seq.A_weight
    step = A / seq.C1
    z = np.ascontiguousarray(-seq.s / seq.C1)
    lam, sig, box, lo, hi = nonsmooth.encode(d)
    u = _kernels.prox_cubic(z, seq.x0, 2.0 * seq.C2 / A, step, lam, sig, box, lo, hi)
    return seq.x0 + u


@dataclass
class AipcnmConfig:
    """Schedules: A_i, mu_i, C1, C2 and the two per-iteration error targets."""

    mode: str
    cfg: ScheduleConfig
    C1: float
    C2: float
    horizon_T: int
    rho: float = 0.0
    mu0: float = 0.0
    eta: Optional[float] = None
    subsolver: str = "reference"
    exact_oracles: bool = False
    sub_tol_cap: Optional[float] = None
    max_sub_iter: int = 1_000_000
    record_wall_time: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; choose from {MODES}")
        if self.horizon_T < 1:
            raise ValueError("horizon_T must be >= 1")
        if self.eta is None:
            self.eta = 4.0 * self.cfg.L3

    def A(self, i) -> float:
        if self.mode == "convex":
            return i * (i + 1) * (i + 2) / 6.0
        return 0.0 if i == 0 else (1.0 + self.rho) ** i

    def a(self, i) -> float:
        return self.A(i + 1) - self.A(i)

    def alpha(self, i) -> float:
        return self.a(i) / self.A(i + 1)

    def mu(self, i) -> float:
        if self.mode == "convex":
            return self.cfg.L3 * self.cfg.D / (i + 2)
        return self.mu0

    def coupled_target(self, i) -> float:
        """Bound on ||g_i - grad f(y_i) - grad model(x_{i+1})||."""
        T = self.horizon_T
        if self.mode == "convex":
            return self.cfg.L3 * self.cfg.D ** 2 / (math.sqrt(2.0 * T) * (i + 2) ** 2)
        s2, r = self.cfg.sigma2, self.rho
        return ((1.0 / self.mu0 + 9.0 * r * r / (4.0 * s2)) ** -0.5
                * (1.0 + r) ** (-i / 2.0 + 1.0) / math.sqrt(T))

    def gprime_target(self, i) -> float:
        """Bound on ||g'_{i+1} - grad f(x_{i+1})||."""
        T = self.horizon_T
        if self.mode == "convex":
            return 2.0 * self.cfg.L3 * self.cfg.D ** 2 / (math.sqrt(T) * (i + 2) ** 2)
        s2, r = self.cfg.sigma2, self.rho
        return (2.0 * math.sqrt(s2) / (3.0 * r)) * (1.0 + r) ** (-i / 2.0 + 1.0) / math.sqrt(T)

    def rate_bound(self, t, dist0) -> float:
        """Expected-gap bound after t steps given ||x0 - x*|| = dist0."""
        L3, D = self.cfg.L3, self.cfg.D
        if self.mode == "convex":
            return 129.0 * L3 * D ** 3 / (t * (t + 1) * (t + 2))
        return ((1.0 + self.rho) ** (-(t + 1))
                * (9.0 * self.mu0 / 4.0 * dist0 ** 2 + 32.0 * L3 / 9.0 * dist0 ** 3 + 2.0))


def schedule_convex(cfg: ScheduleConfig, T, **kwargs) -> AipcnmConfig:
    """A_i = i(i+1)(i+2)/6, mu_i = L3 D/(i+2), C1 = 7 L3 D, C2 = 48 L3."""
    if T < 1:
        raise ValueError("T must be >= 1")
    return AipcnmConfig("convex", cfg, C1=7.0 * cfg.L3 * cfg.D, C2=48.0 * cfg.L3,
                        horizon_T=int(T), **kwargs)


def schedule_strongly_convex(cfg: ScheduleConfig, T, repair=False, **kwargs) -> AipcnmConfig:
    """Geometric weights A_i = (1+rho)^i (A_0 = 0) with constant shift mu_0.

    With ``repair`` the constants C1, C2 are raised, where needed, to the
    smallest values meeting ``feasibility`` over the horizon.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if not cfg.sigma2 > 0:
        raise ValueError("strongly convex schedule needs sigma2 > 0")
    L3, R, s2 = cfg.L3, cfg.R_bound, cfg.sigma2
    rho = min(1.0, 3.0 ** (1.0 / 3.0) / 2.0 * (s2 / (L3 * R)) ** (1.0 / 3.0))
    mu0 = 32.0 * (L3 * R) ** (2.0 / 3.0) * s2 ** (1.0 / 3.0) / (27.0 * 3.0 ** (2.0 / 3.0))
    out = AipcnmConfig("strongly_convex", cfg, C1=9.0 * mu0 * (1.0 + rho) / 2.0,
                       C2=32.0 * (1.0 + rho) * L3 / 3.0, horizon_T=int(T), rho=rho,
                       mu0=mu0, **kwargs)
    if repair:
        rep = feasibility(out)
        out = replace(out, C1=max(out.C1, rep["C1_required"]),
                      C2=max(out.C2, rep["C2_required"]))
    return out


def feasibility(config: AipcnmConfig, T=None) -> dict:
    """Smallest C1, C2 allowed by the acceleration argument over t < T."""
    T = config.horizon_T if T is None else T
    cfg = config.cfg
    c1 = c2 = -math.inf
    for t in range(T):
        a, A, A1, mu = config.a(t), config.A(t), config.A(t + 1), config.mu(t)
        c1 = max(c1, 9.0 * mu * a * a / (2.0 * A1) - 2.0 / 3.0 * A * cfg.sigma2)
        c2 = max(c2, 32.0 * a ** 3 * cfg.L3 / (3.0 * A1 ** 2) - A * cfg.sigma2 / cfg.R_bound)
    return dict(C1_required=c1, C2_required=c2,
                C1_ok=config.C1 >= c1 * (1 - 1e-12), C2_ok=config.C2 >= c2 * (1 - 1e-12))


@dataclass
class QReport:
    q_norm: float
    mu: float
    lhs: float
    branch_quadratic: float
    branch_cubic: float
    rhs: float
    margin: float
    passed: bool


def q_residual_diag(problem: CompositeProblem, model: CubicModel, x_next, y_t, mu_t,
                    subgrad_h=None, L3=None) -> QReport:
    """Check the key acceleration inequality with exact derivatives.

    q = g - grad f(y) + grad F(x+) - grad model(x+), using the same
    subgradient of h at x+ on both sides so that it cancels.
    """
    L3 = problem.constants.L3 if L3 is None else L3
    x_next = np.asarray(x_next, float)
    y_t = np.asarray(y_t, float)
    w = x_next - y_t
    nw = float(np.linalg.norm(w))
    xi = np.zeros_like(w) if subgrad_h is None else np.asarray(subgrad_h, float)
    grad_F = problem.grad(x_next) + xi
    grad_model = model.g + model.H.apply(w, count=False) + 0.5 * model.eta * nw * w + xi
    q = model.g - problem.grad(y_t) + grad_F - grad_model
    qn = float(np.linalg.norm(q))
    lhs = float(q @ (y_t - x_next))
    b1 = qn * qn / (3.0 * mu_t)
    b2 = math.sqrt(qn ** 3 / (4.0 * L3 + 2.0 * model.eta))
    rhs = min(b1, b2) + mu_t / 4.0 * nw * nw
    margin = lhs - rhs
    return QReport(qn, mu_t, lhs, b1, b2, rhs, margin, margin >= -1e-8)


@dataclass
class AipcnmState:
    x: np.ndarray
    v: np.ndarray
    seq: EstimatingSequence
    t: int = 0
    counters: Counters = field(default_factory=Counters)


def _solve(model, coupled_half, sub_tol_cap, subsolver, rng, max_iter):
    # stationarity ||s|| <= eps is equivalent to the certificate reaching cert(eps)
    tol = gap_certificate(coupled_half, model.eta, model.strong_convexity)
    if sub_tol_cap is not None:
        tol = min(tol, sub_tol_cap)
    tol = max(tol, 1e-18)
    if subsolver == "svrg":
        return svrg.solve(model, svrg.SvrgConfig.from_model(model, target_gap=tol), rng)
    return reference_solve(model, tol, max_iter=max_iter)


def step(state: AipcnmState, problem: CompositeProblem, config: AipcnmConfig, rng,
         diagnostics=False):
    """One accelerated step; returns (new state, row values, extras)."""
    t = state.t
    cfg = config.cfg
    n, d = problem.n_samples, problem.dim
    fail = cfg.delta / config.horizon_T
    a_t, A_next = config.a(t), config.A(t + 1)
    alpha = a_t / A_next
    y = (1.0 - alpha) * state.x + alpha * state.v
    mu = config.mu(t)
    target1 = config.coupled_target(t)
    target2 = config.gprime_target(t)
    if config.exact_oracles:
        gb = hb = gpb = n
    else:
        gb = grad_batch_size(0.5 * target1, fail, cfg, n)
        hb = hess_batch_size(0.25 * mu, fail, cfg, d, n)
        gpb = grad_batch_size(target2, fail, cfg, n)
    ge = sample_gradient(problem, y, gb, rng, 0.5 * target1, fail)
    he = sample_hessian(problem, y, hb, 0.75 * mu, rng, 0.25 * mu)
    model = CubicModel(y, ge.g, he, config.eta, problem.f(y), problem.nonsmooth)
    sol = _solve(model, 0.5 * target1, config.sub_tol_cap, config.subsolver, rng,
                 config.max_sub_iter)
    x_next = sol.x
    gp = sample_gradient(problem, x_next, gpb, rng, target2, fail)
    f_next = problem.f(x_next)
    seq = psi_update(state.seq, a_t, f_next, gp.g, x_next)
    v_next = psi_argmin(seq, problem.nonsmooth)

    c = state.counters
    counters = Counters(c.grad_samples + ge.batch + gp.batch, c.hess_samples + he.batch,
                        c.hvp + sol.hvp_count)
    flags = []
    if ge.exact and gp.exact:
        flags.append("exact_grad")
    if he.exact:
        flags.append("exact_hess")
    if sol.warning:
        flags.append("sub_warning")
    if np.linalg.norm(v_next - state.v) > cfg.R_bound:
        flags.append("R_exceeded")
    F_next = f_next + problem.h(x_next)
    row = dict(iter=t + 1, fval=F_next, grad_samples_cum=counters.grad_samples,
               hess_samples_cum=counters.hess_samples, hvp_count_cum=counters.hvp,
               subsolver_iters=sol.inner_iters, Et_budget=target1, sub_gap=sol.model_gap_bound,
               A_t=A_next, psi_v=psi_value(seq, v_next, problem.nonsmooth),
               flags=";".join(flags))
    extras = dict(model=model, solution=sol, y=y, mu=mu, g_prime=gp.g)
    if diagnostics:
        rep = q_residual_diag(problem, model, x_next, y, mu, sol.subgrad_h)
        row["q_margin"] = rep.margin
        w = x_next - y
        s_model = (model.g + he.apply(w, count=False)
                   + 0.5 * model.eta * np.linalg.norm(w) * w + sol.subgrad_h)
        e1 = np.linalg.norm(ge.g - problem.grad(y) - s_model)
        e2 = np.linalg.norm(gp.g - problem.grad(x_next))
        k = 9.0 * a_t ** 2 / (2.0 * (3.0 * config.C1 + 2.0 * config.A(t) * cfg.sigma2))
        row["G_i"] = (A_next / mu + k) * e1 ** 2 + k * e2 ** 2
        extras["q_report"] = rep
    new = AipcnmState(x_next, v_next, seq, t + 1, counters)
    return new, row, extras


def run(problem: CompositeProblem, config: AipcnmConfig, T=None, rng=None, x0=None,
        f_star=None, diagnostics=False) -> RunLog:
    """T accelerated steps; the log also keeps each estimating sequence."""
    T = config.horizon_T if T is None else int(T)
    if T < 0:
        raise ValueError("T must be >= 0")
    rng = np.random.default_rng() if rng is None else rng
    x0 = np.zeros(problem.dim) if x0 is None else np.asarray(x0, float)
    extra = ("sub_gap", "A_t", "psi_v")
    if diagnostics:
        extra += ("q_margin", "G_i")
    log = RunLog(extra_columns=extra)
    seq = EstimatingSequence(x0, config.C1, config.C2)
    F0 = problem.F(x0)
    log.append(x0, iter=0, wall_ms=0.0, fval=F0,
               gap=F0 - f_star if f_star is not None else math.nan,
               grad_samples_cum=0, hess_samples_cum=0, hvp_count_cum=0, subsolver_iters=0,
               Et_budget=math.nan, A_t=config.A(0), psi_v=psi_value(seq, x0, problem.nonsmooth),
               flags="")
    log.sequences = [seq.copy()]
    log.v_iterates = [x0.copy()]
    state = AipcnmState(x0, x0.copy(), seq)
    start = time.perf_counter()
    for _ in range(T):
        state, row, extras = step(state, problem, config, rng, diagnostics)
        row["wall_ms"] = (time.perf_counter() - start) * 1e3 if config.record_wall_time else 0.0
        row["gap"] = row["fval"] - f_star if f_star is not None else math.nan
        log.append(state.x, **row)
        log.sequences.append(state.seq.copy())
        log.v_iterates.append(state.v.copy())
        if extras["solution"].warning:
            logger.warning("iteration %d: %s", state.t, extras["solution"].warning)
    return log
