"""Cubic-Prox-SVRG: variance-reduced prox-gradient for the cubic model.

The model in displacement form is P(w) = (1/b) sum_i psi_i(w) + r(w) with
psi_i(w) = w'(H_i + shift I)w/2 + <g, w> and r(w) = (eta/6)||w||^3 + h(w+y).
Samples are drawn with probability proportional to ||H_i||; the linear term
and the identity shift are common to all samples and enter exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import _kernels
from .cubic_model import CubicModel, ModelSolution, gap_certificate, model_value, residual

logger = logging.getLogger(__name__)

__all__ = [
    "SvrgConfig", "SvrgState", "StageRecord", "importance_weights", "stage_params",
    "gap_estimate", "solve", "stage_contraction", "variance_reduced_gradient",
]

WEIGHT_FLOOR = 1e-15


def importance_weights(norms) -> np.ndarray:
    """Sampling probabilities proportional to per-sample Hessian norms."""
    norms = np.asarray(norms, dtype=float).ravel()
    if norms.size == 0:
        raise ValueError("need at least one sample")
    if np.any(norms < 0) or not np.all(np.isfinite(norms)):
        raise ValueError("Hessian norms must be finite and nonnegative")
    total = norms.sum()
    if total == 0.0:
        logger.warning("all sample Hessians vanish; using uniform sampling")
        return np.full(norms.size, 1.0 / norms.size)
    q = np.maximum(norms / total, WEIGHT_FLOOR)
    return q / q.sum()


@dataclass
class SvrgConfig:
    m: int
    tau0: float
    L2: float
    kappa2: float
    kappa3: float
    q: np.ndarray
    max_stages: int = 200
    target_gap: float = 1e-10
    max_inner: int = 10_000_000

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if not (self.L2 > 0 and self.tau0 > 0):
            raise ValueError("L2 and tau0 must be positive")
        if not math.isfinite(self.kappa3):
            raise ValueError("kappa3 must be finite")
        if abs(self.q.sum() - 1.0) > 1e-12 or np.any(self.q <= 0):
            raise ValueError("q must be a strictly positive probability vector")

    @classmethod
    def from_model(cls, model: CubicModel, m=None, **kwargs) -> "SvrgConfig":
        """Stage constants for a model: L2 = mean ||H_i|| + shift, tau0 = 0.1/L2."""
        norms = model.H.sample_norms()
        q = importance_weights(norms)
        L2 = float(norms.mean()) + model.H.shift
        if L2 <= 0:
            # vanishing curvature: any step works, pick the cubic scale
            L2 = 1.0
        mu = model.strong_convexity
        kappa2 = L2 / mu if mu > 0 else math.inf
        kappa3 = 0.5 * L2 * (12.0 / model.eta) ** (2.0 / 3.0)
        m = model.H.batch if m is None else int(m)
        return cls(m=m, tau0=0.1 / L2, L2=L2, kappa2=kappa2, kappa3=kappa3, q=q, **kwargs)


@dataclass
class StageRecord:
    stage: int
    gap_estimate: float
    M_s: int
    tau_s: float
    value: float


@dataclass
class SvrgState:
    w_tilde: np.ndarray
    stage: int = 0
    gap_estimate: float = math.inf
    history: List[StageRecord] = field(default_factory=list)

    def record_gap(self, gap):
        # the estimate is only ever allowed to improve
        self.gap_estimate = min(self.gap_estimate, gap)
        return self.gap_estimate


def stage_params(cfg: SvrgConfig, gap) -> tuple:
    """Inner-loop length and step for a stage that starts at the given gap."""
    if not gap > 0:
        raise ValueError("gap must be positive")
    growth = max(cfg.m, gap ** (-1.0 / 3.0))
    M = math.ceil(100.0 * min(cfg.kappa2, cfg.kappa3 * growth))
    M = int(min(max(M, 1), cfg.max_inner))
    tau = cfg.tau0 * min(1.0, cfg.m ** -0.5 * gap ** (-1.0 / 6.0))
    return M, max(tau, 1e-3 * cfg.tau0)


def stage_contraction(cfg: SvrgConfig) -> float:
    """Per-stage contraction factor for the configured tau0 and kappa2 m."""
    lt = cfg.L2 * cfg.tau0
    first = 1.0 / (100.0 * lt * (1.0 - 4.0 * lt))
    km = cfg.kappa2 * cfg.m
    if math.isinf(km):
        second = 4.0 * lt / (1.0 - 4.0 * lt)
    else:
        second = 4.0 * lt * (100.0 * km + 1.0) / (100.0 * (1.0 - 4.0 * lt) * km)
    return first + second


def _p_value(model, w):
    return model_value(model, w + model.y) - model.f_at_anchor


def _certify(model: CubicModel, w, mu_w, step):
    """One prox-gradient step from w; returns (w+, certificate at w+, h-subgradient).

    ``mu_w`` is the smooth-part gradient at w.  The subgradient of P at w+ is
    (w - w+)/step + grad(w+) - grad(w), which is exact.
    """
    z = w - step * mu_w
    lam, sig, box, lo, hi = model.encoded_h()
    w_plus = _kernels.prox_cubic(z, model.y, model.eta, step, lam, sig, box, lo, hi)
    g_plus = model.g + model.H.apply(w_plus)
    s = (w - w_plus) / step + g_plus - mu_w
    cert = gap_certificate(np.linalg.norm(s), model.eta, model.strong_convexity)
    sub_h = (z - w_plus) / step - 0.5 * model.eta * np.linalg.norm(w_plus) * w_plus
    return w_plus, cert, sub_h


def _estimate(model, w, mu_w, step):
    w_plus, cert, sub_h = _certify(model, w, mu_w, step)
    p_w = _p_value(model, w)
    est = max(p_w - _p_value(model, w_plus), 0.0) + cert
    floor = 4.0 * np.finfo(float).eps * (1.0 + abs(p_w))
    return max(est, floor), w_plus, cert, sub_h


def gap_estimate(model: CubicModel, w_tilde, step=None) -> float:
    """Certified upper bound on P(w_tilde) - min P (w_tilde is a displacement).

    A single prox-gradient step to w+ gives an exact subgradient at w+, hence
    a certified gap there; the estimate adds the observed decrease
    P(w_tilde) - P(w+).  A tiny positive floor keeps stage formulas finite.
    """
    w_tilde = np.asarray(w_tilde, dtype=float)
    if step is None:
        step = SvrgConfig.from_model(model).tau0 * 10.0
    mu_w = model.g + model.H.apply(w_tilde, count=False)
    return _estimate(model, w_tilde, mu_w, step)[0]


def solve(model: CubicModel, cfg: Optional[SvrgConfig] = None, rng=None,
          w0=None) -> ModelSolution:
    """Run stages until the certified gap estimate reaches ``cfg.target_gap``.

    Returns the prox point with the best certificate seen; its
    ``model_gap_bound`` is that certificate.
    """
    cfg = SvrgConfig.from_model(model) if cfg is None else cfg
    rng = np.random.default_rng() if rng is None else rng
    H = model.H
    factors = np.ascontiguousarray(H.factors)
    if factors.shape[0] != cfg.q.shape[0]:
        raise ValueError("importance weights do not match the Hessian sample count")
    lam, sig, box, lo, hi = model.encoded_h()
    step_c = 1.0 / cfg.L2
    state = SvrgState(np.zeros(model.dim) if w0 is None else np.asarray(w0, float) - model.y)

    hvp_before = H.hvp_count
    inner_total = 0
    mu_w = model.g + H.apply(state.w_tilde)
    est, best_w, best_cert, best_sub = _estimate(model, state.w_tilde, mu_w, step_c)
    state.record_gap(est)
    while state.gap_estimate > cfg.target_gap and state.stage < cfg.max_stages:
        state.stage += 1
        M, tau = stage_params(cfg, state.gap_estimate)
        idx = rng.choice(cfg.q.shape[0], size=M, p=cfg.q)
        state.w_tilde = _kernels.svrg_inner(
            state.w_tilde, mu_w, factors, H.shift, cfg.q, idx, tau, model.y, model.eta,
            lam, sig, box, lo, hi)
        inner_total += M
        # one per-sample Hessian-vector product per inner step
        H.hvp_count += M
        mu_w = model.g + H.apply(state.w_tilde)
        est, w_plus, cert, sub = _estimate(model, state.w_tilde, mu_w, step_c)
        state.record_gap(est)
        if cert < best_cert:
            best_w, best_cert, best_sub = w_plus, cert, sub
        state.history.append(StageRecord(state.stage, state.gap_estimate, M, tau,
                                         _p_value(model, state.w_tilde)))
    warning = ""
    if best_cert > cfg.target_gap and state.gap_estimate > cfg.target_gap:
        warning = "svrg: stage budget exhausted"
        logger.warning("%s (certified gap %.3g > target %.3g)", warning,
                       best_cert, cfg.target_gap)
    x = best_w + model.y
    res = residual(model, x, step_c)
    return ModelSolution(x, float(best_cert), res, inner_total, H.hvp_count - hvp_before,
                         warning, best_sub, state.history)


def variance_reduced_gradient(model: CubicModel, q, w, w_tilde, mu_tilde, i) -> np.ndarray:
    """Importance-weighted SVRG direction for sample i (reference implementation)."""
    F = model.H.factors[i]
    diff = np.asarray(w, float) - np.asarray(w_tilde, float)
    b = model.H.batch
    return F @ (F.T @ diff) / (q[i] * b) + model.H.shift * diff + mu_tilde
