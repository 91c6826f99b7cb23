"""Subsampled gradient and Hessian oracles with Bernstein batch sizing."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .problem import CompositeProblem, ScheduleConfig

logger = logging.getLogger(__name__)

__all__ = [
    "grad_batch_size", "hess_batch_size", "GradientEstimate", "HessianEstimate",
    "sample_gradient", "sample_hessian", "spectral_norm", "draw_indices",
]


def _check(eps, fail_prob):
    if not eps > 0:
        raise ValueError(f"target error must be positive, got {eps}")
    if not 0 < fail_prob < 1:
        raise ValueError(f"failure probability must lie in (0, 1), got {fail_prob}")


def _clamp(m, n_samples):
    m = max(1, m)
    if n_samples is not None:
        m = min(m, int(n_samples))
    return m


def grad_batch_size(eps, fail_prob, cfg: ScheduleConfig, n_samples=None) -> int:
    """Samples needed for ||g - grad f|| <= eps with probability 1 - fail_prob.

    Vector Bernstein: m = ceil(8 tau1^2 (1/4 + ln(1/fail_prob)) / eps^2),
    clamped to [1, n_samples].  A batch equal to ``n_samples`` means the
    caller should use the exact gradient.
    """
    _check(eps, fail_prob)
    if eps >= cfg.tau1 ** 2 / cfg.gamma1:
        logger.info("gradient target %.3g outside Bernstein regime (tau1^2/gamma1 = %.3g)",
                    eps, cfg.tau1 ** 2 / cfg.gamma1)
    m = math.ceil(8.0 * cfg.tau1 ** 2 * (0.25 + math.log(1.0 / fail_prob)) / eps ** 2)
    return _clamp(m, n_samples)


def hess_batch_size(eps, fail_prob, cfg: ScheduleConfig, dim, n_samples=None) -> int:
    """Samples needed for ||H - hess f|| <= eps with probability 1 - fail_prob.

    Matrix Bernstein: m = ceil(4 tau2^2 (1/4 + ln(2 dim / fail_prob)) / eps^2).
    """
    _check(eps, fail_prob)
    if dim < 1:
        raise ValueError("dim must be >= 1")
    if eps >= 2.0 * cfg.tau2 ** 2 / cfg.gamma2:
        logger.info("Hessian target %.3g outside Bernstein regime (2 tau2^2/gamma2 = %.3g)",
                    eps, 2.0 * cfg.tau2 ** 2 / cfg.gamma2)
    m = math.ceil(4.0 * cfg.tau2 ** 2 * (0.25 + math.log(2.0 * dim / fail_prob)) / eps ** 2)
    return _clamp(m, n_samples)


def draw_indices(n, batch, rng) -> np.ndarray:
    """Uniform draws with replacement; the full index range once batch >= n."""
    if batch < 1:
        raise ValueError("batch must be >= 1")
    if batch >= n:
        return np.arange(n)
    return np.sort(rng.integers(0, n, size=batch))


@dataclass
class GradientEstimate:
    g: np.ndarray
    batch: int
    exact: bool
    target_err: float = math.nan
    fail_prob: float = math.nan


@dataclass
class HessianEstimate:
    """Averaged Hessian over a sample multiset, plus an identity shift.

    ``factors`` holds per-sample factors F_i with H_i = F_i F_i^T, shape
    (batch, d, k); ``apply`` counts one Hessian-vector product per sample.
    """

    factors: np.ndarray
    shift: float = 0.0
    sample_ids: Optional[np.ndarray] = None
    target_err: float = math.nan
    exact: bool = False
    hvp_count: int = field(default=0, init=False)

    @property
    def batch(self) -> int:
        return self.factors.shape[0]

    @property
    def dim(self) -> int:
        return self.factors.shape[1]

    def apply_unshifted(self, v, count=True) -> np.ndarray:
        if count:
            self.hvp_count += self.batch
        u = np.einsum("bdk,d->bk", self.factors, v)
        return np.einsum("bdk,bk->d", self.factors, u) / self.batch

    def apply(self, v, count=True) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return self.apply_unshifted(v, count) + self.shift * v

    def sample_norms(self) -> np.ndarray:
        """Spectral norms of the unshifted sample Hessians F_i F_i^T."""
        if self.factors.shape[2] == 1:
            return np.sum(self.factors[:, :, 0] ** 2, axis=1)
        return np.linalg.norm(self.factors, ord=2, axis=(1, 2)) ** 2

    def dense(self, include_shift=True) -> np.ndarray:
        H = np.einsum("bik,bjk->ij", self.factors, self.factors) / self.batch
        if include_shift:
            H = H + self.shift * np.eye(self.dim)
        return H

    def with_shift(self, shift) -> "HessianEstimate":
        return HessianEstimate(self.factors, float(shift), self.sample_ids,
                               self.target_err, self.exact)


def sample_gradient(problem: CompositeProblem, x, batch, rng, target_err=math.nan,
                    fail_prob=math.nan) -> GradientEstimate:
    """Mean of per-sample gradients over ``batch`` uniform draws."""
    idx = draw_indices(problem.n_samples, int(batch), rng)
    exact = batch >= problem.n_samples
    g = problem.grad(x, idx)
    return GradientEstimate(g, len(idx), exact, target_err, fail_prob)


def sample_hessian(problem: CompositeProblem, x, batch, shift=0.0, rng=None,
                   target_err=math.nan) -> HessianEstimate:
    """Averaged per-sample Hessian operator at x plus ``shift * I``."""
    if shift < 0:
        raise ValueError("shift must be nonnegative")
    if rng is None and batch < problem.n_samples:
        raise ValueError("an rng is required for a proper subsample")
    idx = draw_indices(problem.n_samples, int(batch), rng)
    fac = np.ascontiguousarray(problem.hess_factors(np.asarray(x, float), idx))
    return HessianEstimate(fac, float(shift), idx, target_err,
                           batch >= problem.n_samples)


def spectral_norm(apply, dim, iters=50, rng=None) -> float:
    """Largest |eigenvalue| of a symmetric operator by power iteration."""
    rng = np.random.default_rng(12345) if rng is None else rng
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = apply(v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        lam = nw
        v = w / nw
    return float(lam)
