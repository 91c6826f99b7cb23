"""The cubic-regularized local model and its exact (reference) solver.

For an anchor y, gradient estimate g and Hessian estimate H the model is

    m(x) = f(y) + <g, x-y> + <H(x-y), x-y>/2 + (eta/6)||x-y||^3 + h(x).

All solvers work in the displacement w = x - y, where the composite part
r(w) = (eta/6)||w||^3 + h(w + y) has an exact prox (``prox_cubic_h``).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .problem import CompositeProblem, NonsmoothTerm, ScheduleConfig
from .sampling import HessianEstimate, spectral_norm

logger = logging.getLogger(__name__)

__all__ = [
    "CubicModel", "ModelSolution", "model_value", "prox_cubic_h", "reference_solve",
    "residual", "compute_Et", "et_components", "gap_certificate", "smooth_grad",
    "DENSE_LIMIT",
]

# dense linear algebra is used for spectral norms up to this dimension
DENSE_LIMIT = 50


@dataclass
class CubicModel:
    y: np.ndarray
    g: np.ndarray
    H: HessianEstimate
    eta: float
    f_at_anchor: float
    nonsmooth: NonsmoothTerm

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        self.y = np.asarray(self.y, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        if self.y.shape != self.g.shape or self.H.dim != self.y.shape[0]:
            raise ValueError("anchor, gradient and Hessian dimensions disagree")

    @property
    def dim(self) -> int:
        return self.y.shape[0]

    @property
    def strong_convexity(self) -> float:
        """Modulus of the quadratic-plus-h part (shift plus l2 weight of h)."""
        return self.H.shift + self.nonsmooth.strong_convexity

    def encoded_h(self):
        return self.nonsmooth.encode(self.dim)


@dataclass
class ModelSolution:
    x: np.ndarray
    model_gap_bound: float
    residual: float
    inner_iters: int
    hvp_count: int
    warning: str = ""
    subgrad_h: Optional[np.ndarray] = None
    history: list = field(default_factory=list)


def smooth_grad(m: CubicModel, w, count=True) -> np.ndarray:
    """Gradient of <g,w> + <Hw,w>/2 at displacement w."""
    return m.g + m.H.apply(w, count)


def model_value(m: CubicModel, x) -> float:
    x = np.asarray(x, dtype=float)
    w = x - m.y
    nw = float(np.linalg.norm(w))
    return (m.f_at_anchor + float(m.g @ w) + 0.5 * float(w @ m.H.apply(w, count=False))
            + m.eta / 6.0 * nw ** 3 + m.nonsmooth.eval(x))


def prox_cubic_h(nonsmooth: NonsmoothTerm, y_anchor, eta, step, z) -> np.ndarray:
    """argmin_w ||w - z||^2/(2 step) + (eta/6)||w||^3 + h(w + y_anchor).

    For fixed rho = ||w|| the problem separates into a prox of h with
    quadratic weight 1/step + eta*rho/2; rho is the root of a strictly
    decreasing scalar equation, found by safeguarded Newton.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    z = np.ascontiguousarray(z, dtype=float)
    y = np.ascontiguousarray(y_anchor, dtype=float)
    lam, sig, box, lo, hi = nonsmooth.encode(z.shape[0])
    return _kernels.prox_cubic(z, y, float(eta), float(step), lam, sig, box, lo, hi)


def gap_certificate(subgrad_norm, eta, mu=0.0) -> float:
    """Certified bound on model gap given the norm of a model subgradient."""
    return float(_kernels.gap_certificate(float(subgrad_norm), float(eta), float(mu)))


def _lipschitz(H: HessianEstimate) -> float:
    if H.dim <= 200:
        return float(np.linalg.eigvalsh(H.dense())[-1])
    return 1.01 * spectral_norm(H.apply, H.dim, iters=100)


def reference_solve(m: CubicModel, tol=1e-12, max_iter=1_000_000, x0=None) -> ModelSolution:
    """High-accuracy model minimizer with a certified gap bound.

    Accelerated prox-gradient with gradient-based restart on the displacement
    w = x - y.  Each prox point w+ comes with an exact model subgradient
    s+ = (v - w+)/tau + grad(w+) - grad(v); cubic growth of the model turns
    ||s+|| into the certificate gap <= (4/3) ||s+||^{3/2} / sqrt(eta)
    (or ||s+||^2 / (2 mu) if smaller).  Stops when the certificate is <= tol.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    Hd = m.H.dense()
    L = _lipschitz(m.H)
    tau = 1.0 / L if L > 0 else 1.0
    lam, sig, box, lo, hi = m.encoded_h()
    w0 = np.zeros(m.dim) if x0 is None else np.asarray(x0, float) - m.y
    w, cert, sub, iters = _kernels.fista_model(
        Hd, m.g, m.y, m.eta, tau, m.strong_convexity, tol, int(max_iter), w0,
        lam, sig, box, lo, hi)
    warning = ""
    if cert > tol:
        warning = "reference_solve: iteration cap reached"
        logger.warning("%s (certified gap %.3g > tol %.3g)", warning, cert, tol)
    # one model gradient per iteration at the extrapolated point and one at the prox point
    hvp = 2 * iters * m.H.batch
    m.H.hvp_count += hvp
    x = w + m.y
    res = residual(m, x, tau)
    return ModelSolution(x, float(cert), res, int(iters), hvp, warning, sub)


def residual(m: CubicModel, x, probe_step) -> float:
    """Prox-gradient mapping norm of the model at x."""
    if not probe_step > 0:
        raise ValueError("probe_step must be positive")
    w = np.asarray(x, float) - m.y
    z = w - probe_step * smooth_grad(m, w, count=False)
    w_new = prox_cubic_h(m.nonsmooth, m.y, m.eta, probe_step, z)
    return float(np.linalg.norm(w - w_new) / probe_step)


def et_components(grad_err, hess_err, sub_gap, L3):
    """The three inexactness terms: Hessian, gradient, subproblem."""
    hess_part = 4.0 / (3.0 * L3 ** 2) * hess_err ** 3
    grad_part = 4.0 / 3.0 * math.sqrt(2.0 / L3) * grad_err ** 1.5
    return hess_part, grad_part, float(sub_gap)


def operator_norm(apply, dim) -> float:
    if dim <= DENSE_LIMIT:
        M = np.column_stack([apply(e) for e in np.eye(dim)])
        return float(np.linalg.norm(0.5 * (M + M.T), 2))
    return spectral_norm(apply, dim)


def compute_Et(problem: CompositeProblem, x_t, g, H_operator, subsolver_gap,
               cfg: Optional[ScheduleConfig] = None):
    """Aggregate inexactness of one step measured against exact derivatives.

    ``H_operator`` is a HessianEstimate or any callable v -> Hv.  Returns
    (total, (hess_part, grad_part, sub_part)).
    """
    cfg = problem.constants if cfg is None else cfg
    x_t = np.asarray(x_t, float)
    if hasattr(H_operator, "apply"):
        def apply(v):
            return H_operator.apply(v, count=False)
    else:
        apply = H_operator
    grad_err = float(np.linalg.norm(problem.grad(x_t) - np.asarray(g, float)))
    hess_err = operator_norm(lambda v: problem.hvp(x_t, v) - apply(v), problem.dim)
    parts = et_components(grad_err, hess_err, subsolver_gap, cfg.L3)
    return sum(parts), parts
