"""Composite objectives F = f + h with per-sample access to the smooth part.

The smooth part is a finite sum ``f = (1/n) sum_i f_i``; ``h`` is a simple
convex term with a cheap proximal map.  Problems are immutable after
construction.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.special import expit

logger = logging.getLogger(__name__)

__all__ = [
    "NonsmoothTerm", "ScheduleConfig", "CompositeProblem", "LinearModelProblem",
    "QuadraticProblem", "make_logistic", "make_cubic_regression",
    "make_quadratic", "quadratic_from_matrix", "load_sparse_text",
    "synth_stream", "reference_minimum", "DatasetError",
]

# rows per block in every reduction over samples; keeps summation order fixed
CHUNK = 4096

KINDS = ("zero", "l1", "l2_squared", "l1_plus_l2", "box")


class DatasetError(ValueError):
    """Raised for unreadable or malformed dataset files."""


@dataclass(frozen=True)
class NonsmoothTerm:
    """h(x) = lam*||x||_1 + (sigma2/2)*||x||^2, or the indicator of a box.

    Use the classmethod constructors rather than building this directly.
    """

    kind: str = "zero"
    lam: float = 0.0
    sigma2: float = 0.0
    lo: Optional[np.ndarray] = None
    hi: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown nonsmooth kind {self.kind!r}")
        if self.lam < 0 or self.sigma2 < 0:
            raise ValueError("nonsmooth weights must be nonnegative")
        if self.kind == "box":
            if self.lo is None or self.hi is None:
                raise ValueError("box term needs lo and hi")
            if np.any(np.asarray(self.lo) > np.asarray(self.hi)):
                raise ValueError("box lower bound exceeds upper bound")

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def l1(cls, lam):
        return cls("l1", lam=float(lam))

    @classmethod
    def l2_squared(cls, sigma2):
        return cls("l2_squared", sigma2=float(sigma2))

    @classmethod
    def l1_plus_l2(cls, lam, sigma2):
        return cls("l1_plus_l2", lam=float(lam), sigma2=float(sigma2))

    @classmethod
    def box(cls, lo, hi):
        return cls("box", lo=np.asarray(lo, dtype=float), hi=np.asarray(hi, dtype=float))

    @property
    def strong_convexity(self) -> float:
        return self.sigma2 if self.kind in ("l2_squared", "l1_plus_l2") else 0.0

    @property
    def is_smooth(self) -> bool:
        return self.kind in ("zero", "l2_squared")

    def eval(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.kind == "box":
            lo, hi = self.bounds(x.shape[0])
            slack = 1e-10 * (1.0 + np.abs(x))
            if np.any(x < lo - slack) or np.any(x > hi + slack):
                return math.inf
            return 0.0
        val = 0.0
        if self.lam:
            val += self.lam * float(np.sum(np.abs(x)))
        if self.strong_convexity:
            val += 0.5 * self.sigma2 * float(x @ x)
        return val

    def bounds(self, dim):
        lo = np.broadcast_to(np.asarray(self.lo, dtype=float), (dim,))
        hi = np.broadcast_to(np.asarray(self.hi, dtype=float), (dim,))
        return lo, hi

    def encode(self, dim):
        """Flat parameters for the compiled kernels: (lam, sig, box, lo, hi)."""
        if self.kind == "box":
            lo, hi = self.bounds(dim)
            return 0.0, 0.0, True, np.ascontiguousarray(lo), np.ascontiguousarray(hi)
        empty = np.zeros(dim)
        return float(self.lam), float(self.strong_convexity), False, empty, empty

    def prox(self, v, c=1.0):
        """argmin_x (c/2)||x - v||^2 + h(x)."""
        v = np.asarray(v, dtype=float)
        if self.kind == "box":
            lo, hi = self.bounds(v.shape[-1])
            return np.clip(v, lo, hi)
        sig = self.strong_convexity
        u = np.sign(v) * np.maximum(np.abs(v) - self.lam / c, 0.0)
        return u * (c / (c + sig))

    def subdiff_distance(self, x, s) -> float:
        """Euclidean distance from s to the subdifferential of h at x."""
        x = np.asarray(x, dtype=float)
        s = np.asarray(s, dtype=float)
        if self.kind == "box":
            lo, hi = self.bounds(x.shape[0])
            tol = 1e-12 * (1.0 + np.abs(x))
            at_lo = np.abs(x - lo) <= tol
            at_hi = np.abs(x - hi) <= tol
            # normal cone: s_j <= 0 at lo, s_j >= 0 at hi, 0 inside
            r = np.where(at_lo & at_hi, 0.0,
                         np.where(at_lo, np.maximum(s, 0.0),
                                  np.where(at_hi, np.minimum(s, 0.0), s)))
            return float(np.linalg.norm(r))
        s = s - self.strong_convexity * x
        nz = x != 0
        r = np.where(nz, s - self.lam * np.sign(x),
                     np.maximum(np.abs(s) - self.lam, 0.0))
        return float(np.linalg.norm(r))


@dataclass(frozen=True)
class ScheduleConfig:
    """Problem constants that feed the error-budget and batch-size schedules.

    None of these are certified; the constructors fill them with data-based
    estimates and every field can be overridden with ``dataclasses.replace``.
    """

    L3: float = 1.0
    D: float = 1.0
    sigma2: float = 0.0
    tau1: float = 1.0
    gamma1: float = 1.0
    tau2: float = 1.0
    gamma2: float = 1.0
    delta: float = 0.1
    horizon_T: int = 100
    R: Optional[float] = None

    def __post_init__(self):
        for name in ("L3", "D", "tau1", "gamma1", "tau2", "gamma2"):
            val = getattr(self, name)
            if not (val > 0 and math.isfinite(val)):
                raise ValueError(f"{name} must be positive and finite, got {val}")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.horizon_T < 1:
            raise ValueError("horizon_T must be >= 1")
        if self.R is not None and not self.R > 0:
            raise ValueError("R must be positive")

    @property
    def R_bound(self) -> float:
        return self.R if self.R is not None else 2.0 * self.D

    def replace(self, **changes) -> "ScheduleConfig":
        return dataclasses.replace(self, **changes)


def _chunked_mean(fn, idx, dim):
    """Mean of fn(chunk) row-sums over idx, reduced in a fixed block order."""
    total = np.zeros(dim)
    for start in range(0, len(idx), CHUNK):
        total += fn(idx[start:start + CHUNK]).sum(axis=0)
    return total / len(idx)


class CompositeProblem:
    """Base class: F(x) = (1/n) sum_i f_i(x) + h(x).

    Subclasses implement the batched primitives ``_values``, ``_grads``,
    ``hess_factors``; everything else is derived.
    """

    dim: int
    n_samples: int
    nonsmooth: NonsmoothTerm
    constants: ScheduleConfig

    # batched primitives -------------------------------------------------
    def _values(self, x, idx) -> np.ndarray:
        raise NotImplementedError

    def _grads(self, x, idx) -> np.ndarray:
        raise NotImplementedError

    def hess_factors(self, x, idx) -> np.ndarray:
        """Per-sample Hessian factors, shape (len(idx), d, k): H_i = F_i F_i^T."""
        raise NotImplementedError

    def hvp_batch(self, x, idx, v) -> np.ndarray:
        """Sum (not mean) of per-sample Hessian-vector products over idx."""
        fac = self.hess_factors(x, idx)
        return np.einsum("bdk,bk->d", fac, np.einsum("bdk,d->bk", fac, v))

    def hess_lipschitz_hint(self) -> float:
        """Cheap upper estimate of sup ||nabla^2 f||, used for prox-gradient steps."""
        return math.nan

    # per-sample access --------------------------------------------------
    def smooth_eval(self, x, i) -> float:
        return float(self._values(np.asarray(x, float), np.array([i]))[0])

    def smooth_grad(self, x, i) -> np.ndarray:
        return self._grads(np.asarray(x, float), np.array([i]))[0]

    def smooth_hvp(self, x, i, v) -> np.ndarray:
        return self.hvp_batch(np.asarray(x, float), np.array([i]), np.asarray(v, float))

    def smooth_hess(self, x, i) -> np.ndarray:
        fac = self.hess_factors(np.asarray(x, float), np.array([i]))[0]
        return fac @ fac.T

    # full-batch access --------------------------------------------------
    @property
    def all_ids(self) -> np.ndarray:
        return np.arange(self.n_samples)

    def f(self, x) -> float:
        x = np.asarray(x, float)
        return float(_chunked_mean(lambda c: self._values(x, c)[:, None], self.all_ids, 1)[0])

    def grad(self, x, idx=None) -> np.ndarray:
        x = np.asarray(x, float)
        idx = self.all_ids if idx is None else np.asarray(idx)
        return _chunked_mean(lambda c: self._grads(x, c), idx, self.dim)

    def hvp(self, x, v, idx=None) -> np.ndarray:
        x = np.asarray(x, float)
        v = np.asarray(v, float)
        idx = self.all_ids if idx is None else np.asarray(idx)
        total = np.zeros(self.dim)
        for start in range(0, len(idx), CHUNK):
            total += self.hvp_batch(x, idx[start:start + CHUNK], v)
        return total / len(idx)

    def hess(self, x, idx=None) -> np.ndarray:
        x = np.asarray(x, float)
        idx = self.all_ids if idx is None else np.asarray(idx)
        total = np.zeros((self.dim, self.dim))
        for start in range(0, len(idx), CHUNK):
            fac = self.hess_factors(x, idx[start:start + CHUNK])
            total += np.einsum("bik,bjk->ij", fac, fac)
        return total / len(idx)

    def h(self, x) -> float:
        return self.nonsmooth.eval(x)

    def F(self, x) -> float:
        return self.f(x) + self.h(x)


# ---------------------------------------------------------------------------
# linear-model problems: f_i(x) = phi(a_i^T x; b_i)


class _Loss:
    name = "loss"

    def value(self, z, t):
        raise NotImplementedError

    def d1(self, z, t):
        raise NotImplementedError

    def d2(self, z, t):
        raise NotImplementedError


class LogisticLoss(_Loss):
    name = "logistic"

    def value(self, z, t):
        return np.logaddexp(0.0, -t * z)

    def d1(self, z, t):
        return -t * expit(-t * z)

    def d2(self, z, t):
        p = expit(t * z)
        return p * (1.0 - p)


class CubicRegressionLoss(_Loss):
    """phi(r) = r^2/2 + (c/6)|r|^3 with r = z - t; convex, Lipschitz second derivative c."""

    name = "cubic_regression"

    def __init__(self, c):
        self.c = float(c)

    def value(self, z, t):
        r = z - t
        return 0.5 * r * r + self.c / 6.0 * np.abs(r) ** 3

    def d1(self, z, t):
        r = z - t
        return r + 0.5 * self.c * np.abs(r) * r

    def d2(self, z, t):
        return 1.0 + self.c * np.abs(z - t)


class LinearModelProblem(CompositeProblem):
    """f_i(x) = phi(a_i^T x; t_i) for a dense or CSR design matrix."""

    def __init__(self, data, targets, loss: _Loss, nonsmooth=None, constants=None):
        if sparse.issparse(data):
            data = sparse.csr_matrix(data, dtype=float)
        else:
            data = np.asarray(data, dtype=float)
            if data.ndim != 2:
                raise ValueError("design matrix must be 2-D")
        targets = np.asarray(targets, dtype=float).ravel()
        if data.shape[0] != targets.shape[0]:
            raise ValueError(
                f"dimension mismatch: {data.shape[0]} rows but {targets.shape[0]} targets")
        if data.shape[0] == 0:
            raise ValueError("empty dataset")
        self.data = data
        self.targets = targets
        self.loss = loss
        self.n_samples, self.dim = data.shape
        self.nonsmooth = nonsmooth if nonsmooth is not None else NonsmoothTerm.zero()
        self.constants = constants if constants is not None else ScheduleConfig()

    def _rows(self, idx):
        rows = self.data[idx]
        return rows.toarray() if sparse.issparse(rows) else rows

    def _z(self, x, idx):
        return np.asarray(self.data[idx] @ x).ravel()

    def _values(self, x, idx):
        return self.loss.value(self._z(x, idx), self.targets[idx])

    def _grads(self, x, idx):
        w = self.loss.d1(self._z(x, idx), self.targets[idx])
        return self._rows(idx) * w[:, None]

    def hess_factors(self, x, idx):
        w = self.loss.d2(self._z(x, idx), self.targets[idx])
        return (self._rows(idx) * np.sqrt(w)[:, None])[:, :, None]

    def hvp_batch(self, x, idx, v):
        rows = self.data[idx]
        w = self.loss.d2(np.asarray(rows @ x).ravel(), self.targets[idx])
        return np.asarray(rows.T @ (w * np.asarray(rows @ v).ravel())).ravel()

    def row_norms(self):
        if sparse.issparse(self.data):
            return np.sqrt(np.asarray(self.data.multiply(self.data).sum(axis=1)).ravel())
        return np.linalg.norm(self.data, axis=1)

    def with_constants(self, **changes):
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        new.constants = self.constants.replace(**changes)
        return new


class QuadraticProblem(CompositeProblem):
    """f_i(x) = (1/2)||U_i^T x||^2 - b_i^T x with PSD sample terms U_i U_i^T."""

    def __init__(self, factors, b, nonsmooth=None, constants=None):
        factors = np.asarray(factors, dtype=float)
        if factors.ndim == 2:
            factors = factors[:, :, None]
        if factors.ndim != 3:
            raise ValueError("factors must have shape (n, d) or (n, d, k)")
        n, d, _ = factors.shape
        b = np.asarray(b, dtype=float)
        if b.ndim == 1:
            if b.shape[0] != d:
                raise ValueError(f"dimension mismatch: b has {b.shape[0]} entries, d = {d}")
            b = np.broadcast_to(b, (n, d))
        elif b.shape != (n, d):
            raise ValueError(f"dimension mismatch: b has shape {b.shape}, expected {(n, d)}")
        self.factors = factors
        self.b = np.ascontiguousarray(b)
        self.n_samples, self.dim = n, d
        self.nonsmooth = nonsmooth if nonsmooth is not None else NonsmoothTerm.zero()
        self.constants = constants if constants is not None else ScheduleConfig()

    def _values(self, x, idx):
        u = np.einsum("bdk,d->bk", self.factors[idx], x)
        return 0.5 * np.sum(u * u, axis=1) - self.b[idx] @ x

    def _grads(self, x, idx):
        fac = self.factors[idx]
        return np.einsum("bdk,bk->bd", fac, np.einsum("bdk,d->bk", fac, x)) - self.b[idx]

    def hess_factors(self, x, idx):
        return self.factors[idx]

    def with_constants(self, **changes):
        new = object.__new__(type(self))
        new.__dict__.update(self.__dict__)
        new.constants = self.constants.replace(**changes)
        return new


# ---------------------------------------------------------------------------
# constructors


def _prox_grad_warm(problem, x0, iters=200):
    """A few hundred accelerated prox-gradient steps; only used to size D."""
    x, _, _ = _fista(problem, x0, max_iter=iters, tol=0.0)
    return x


def _with_default_D(problem, x0, overrides):
    if "D" in overrides:
        return problem
    x_ref = _prox_grad_warm(problem, x0)
    dist = float(np.linalg.norm(x0 - x_ref))
    return problem.with_constants(D=10.0 * dist if dist > 0 else 1.0)


def make_logistic(data, labels, nonsmooth=None, **overrides) -> LinearModelProblem:
    """Logistic regression f_i(x) = log(1 + exp(-y_i a_i^T x)).

    Constants are bounded from the data norms: |sigma''| <= 1/(6 sqrt 3) gives
    L3, and |sigma|, sigma' <= 1, 1/4 give the gradient/Hessian deviations.
    Any ScheduleConfig field may be overridden by keyword.
    """
    labels = np.asarray(labels, dtype=float).ravel()
    if not np.all(np.isin(labels, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    nonsmooth = nonsmooth if nonsmooth is not None else NonsmoothTerm.zero()
    prob = LinearModelProblem(data, labels, LogisticLoss(), nonsmooth)
    norms = prob.row_norms()
    amax = float(norms.max()) or 1.0
    est = dict(
        L3=amax ** 3 / (6.0 * math.sqrt(3.0)),
        sigma2=nonsmooth.strong_convexity,
        tau1=float(np.sqrt(np.mean(norms ** 2))) or 1.0,
        gamma1=2.0 * amax,
        tau2=float(np.sqrt(np.mean(norms ** 4))) / 4.0 or 1.0,
        gamma2=amax ** 2 / 4.0,
    )
    est.update(overrides)
    prob = prob.with_constants(**est)
    return _with_default_D(prob, np.zeros(prob.dim), overrides)


def _deviation_constants(problem, points):
    """Sample-based tau/gamma estimates at a few points (heuristic, not certified)."""
    tau1 = gamma1 = tau2 = gamma2 = 0.0
    ids = problem.all_ids
    for x in points:
        G = problem._grads(x, ids)
        dev = G - G.mean(axis=0)
        nrm = np.linalg.norm(dev, axis=1)
        tau1 = max(tau1, float(np.sqrt(np.mean(nrm ** 2))))
        gamma1 = max(gamma1, float(nrm.max()))
        fac = problem.hess_factors(x, ids)
        Hs = np.einsum("bik,bjk->bij", fac, fac)
        Hbar = Hs.mean(axis=0)
        devs = Hs - Hbar
        gamma2 = max(gamma2, float(np.max(np.linalg.norm(devs, ord=2, axis=(1, 2)))))
        second = np.einsum("bij,bjk->ik", devs, devs) / len(ids)
        tau2 = max(tau2, float(np.sqrt(np.linalg.norm(second, 2))))
    return dict(tau1=2 * tau1 or 1.0, gamma1=2 * gamma1 or 1.0,
                tau2=2 * tau2 or 1.0, gamma2=2 * gamma2 or 1.0)


def make_cubic_regression(data, targets, cubic_weight=1.0, nonsmooth=None,
                          **overrides) -> LinearModelProblem:
    """f_i(x) = r_i^2/2 + (c/6)|r_i|^3 with r_i = a_i^T x - t_i.

    Smooth, convex, with L3 <= c * mean ||a_i||^3; used as the genuinely cubic
    (L3 > 0) strongly convex test case when paired with an l2 term in h.
    """
    if cubic_weight < 0:
        raise ValueError("cubic_weight must be nonnegative")
    data = np.asarray(data, dtype=float)
    nonsmooth = nonsmooth if nonsmooth is not None else NonsmoothTerm.zero()
    prob = LinearModelProblem(data, targets, CubicRegressionLoss(cubic_weight), nonsmooth)
    norms = prob.row_norms()
    L3 = cubic_weight * float(np.mean(norms ** 3)) or 1e-3
    prob = prob.with_constants(L3=overrides.get("L3", L3), sigma2=nonsmooth.strong_convexity)
    prob = _with_default_D(prob, np.zeros(prob.dim), overrides)
    x_ref = _prox_grad_warm(prob, np.zeros(prob.dim))
    rng = np.random.default_rng(0)
    pts = [x_ref] + [x_ref + prob.constants.D * u / np.linalg.norm(u)
                     for u in rng.standard_normal((2, prob.dim))]
    est = _deviation_constants(prob, pts)
    est.update(overrides)
    return prob.with_constants(**est)


def make_quadratic(factors, b, nonsmooth=None, **overrides) -> QuadraticProblem:
    """f(x) = x^T A x / 2 - b^T x with A = (1/n) sum_i U_i U_i^T given by factors.

    ``factors`` is (n, d) for rank-1 terms or (n, d, k).  The Hessian is
    constant, so any positive L3 is valid; it defaults to 1.
    """
    nonsmooth = nonsmooth if nonsmooth is not None else NonsmoothTerm.zero()
    prob = QuadraticProblem(factors, b, nonsmooth)
    prob = prob.with_constants(L3=overrides.get("L3", 1.0), sigma2=nonsmooth.strong_convexity)
    prob = _with_default_D(prob, np.zeros(prob.dim), overrides)
    x_ref = _prox_grad_warm(prob, np.zeros(prob.dim))
    rng = np.random.default_rng(0)
    pts = [x_ref] + [x_ref + prob.constants.D * u / np.linalg.norm(u)
                     for u in rng.standard_normal((2, prob.dim))]
    est = _deviation_constants(prob, pts)
    est.update(overrides)
    return prob.with_constants(**est)


def quadratic_from_matrix(A, b, nonsmooth=None, **overrides) -> QuadraticProblem:
    """Split a symmetric PSD matrix into rank-1 sample terms; rejects non-PSD input."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if not np.allclose(A, A.T, atol=1e-12 * (1 + np.abs(A).max())):
        raise ValueError("A must be symmetric")
    lam, V = np.linalg.eigh(A)
    if lam.min() < -1e-10 * max(1.0, abs(lam).max()):
        raise ValueError(f"A is not positive semidefinite (min eigenvalue {lam.min():.3g})")
    lam = np.clip(lam, 0.0, None)
    d = A.shape[0]
    # A = (1/d) sum_j (sqrt(d lam_j) v_j)(sqrt(d lam_j) v_j)^T
    factors = (V * np.sqrt(d * lam)).T
    return make_quadratic(factors, b, nonsmooth, **overrides)


def load_sparse_text(path):
    """Read the ``label idx:val idx:val ...`` format (1-based, increasing indices).

    Returns (CSR matrix, labels).  Blank lines and ``#`` comments are skipped.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    labels, indptr, indices, values = [], [0], [], []
    width = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            labels.append(float(tokens[0]))
        except ValueError:
            raise DatasetError(f"line {lineno}: non-numeric label {tokens[0]!r}") from None
        prev = 0
        for tok in tokens[1:]:
            key, sep, val = tok.partition(":")
            if not sep:
                raise DatasetError(f"line {lineno}: malformed feature {tok!r}")
            try:
                j = int(key)
                v = float(val)
            except ValueError:
                raise DatasetError(f"line {lineno}: non-numeric token {tok!r}") from None
            if j < 1:
                raise DatasetError(f"line {lineno}: feature index {j} is not 1-based")
            if j <= prev:
                raise DatasetError(f"line {lineno}: feature indices must increase ({prev} then {j})")
            prev = j
            indices.append(j - 1)
            values.append(v)
            width = max(width, j)
        indptr.append(len(indices))
    if not labels:
        raise DatasetError("empty dataset")
    mat = sparse.csr_matrix(
        (np.asarray(values, float), np.asarray(indices, np.int64), np.asarray(indptr, np.int64)),
        shape=(len(labels), width))
    return mat, np.asarray(labels)


SYNTH_MODELS = ("logistic", "cubic_regression", "quadratic")


def synth_stream(seed, n, d, model="logistic", nonsmooth=None, feature_scale=1.0,
                 cubic_weight=1.0, **overrides) -> CompositeProblem:
    """Seeded synthetic dataset standing in for an online stream.

    Features are i.i.d. N(0, feature_scale^2); a planted parameter drawn from
    N(0, I/d) generates the responses.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    if model not in SYNTH_MODELS:
        raise ValueError(f"unknown synthetic model {model!r}; choose from {SYNTH_MODELS}")
    rng = np.random.default_rng(seed)
    A = feature_scale * rng.standard_normal((n, d))
    w_true = rng.standard_normal(d) / math.sqrt(d)
    if model == "logistic":
        p = expit(A @ w_true)
        y = np.where(rng.random(n) < p, 1.0, -1.0)
        return make_logistic(A, y, nonsmooth, **overrides)
    if model == "cubic_regression":
        t = A @ w_true + 0.1 * rng.standard_normal(n)
        return make_cubic_regression(A, t, cubic_weight, nonsmooth, **overrides)
    b = (A.T @ (A @ w_true)) / n
    return make_quadratic(A, b, nonsmooth, **overrides)


# ---------------------------------------------------------------------------
# reference minimizer of F


def _fista(problem, x0, max_iter=100000, tol=1e-11):
    """Accelerated prox-gradient with backtracking and gradient-based restart.

    Returns (x, mapping_norm, iterations) where mapping_norm is the norm of an
    exact subgradient of F at the returned point.
    """
    h = problem.nonsmooth
    x = np.array(x0, dtype=float)
    v = x.copy()
    theta = 1.0
    L = problem.hess_lipschitz_hint()
    if not (L > 0 and math.isfinite(L)):
        L = max(np.linalg.norm(problem.hess(x), 2), 1e-8) if problem.dim <= 200 else 1.0
    snorm = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        fv = problem.f(v)
        gv = problem.grad(v)
        while True:
            x_new = h.prox(v - gv / L, L)
            diff = x_new - v
            if problem.f(x_new) <= fv + gv @ diff + 0.5 * L * (diff @ diff) + 1e-15 * abs(fv):
                break
            L *= 2.0
        if it % 10 == 0 or it == max_iter:
            # subgradient of F at x_new: L(v - x_new) - g(v) + g(x_new)
            s = L * (v - x_new) - gv + problem.grad(x_new)
            snorm = float(np.linalg.norm(s))
            if snorm <= tol:
                return x_new, snorm, it
        theta_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
        if (v - x_new) @ (x_new - x) > 0:
            theta_new = 1.0
            v = x_new.copy()
        else:
            v = x_new + ((theta - 1.0) / theta_new) * (x_new - x)
        x, theta = x_new, theta_new
    return x, snorm, it


def reference_minimum(problem, x0=None, tol=1e-10, max_iter=200000):
    """High-accuracy minimizer of F (used only for gap columns and tests).

    Runs restarted FISTA to a small subgradient norm and, when f is smooth
    enough to allow it, polishes with a few proximal Newton steps solved by
    the same routine.  Returns (x_star, F_star).
    """
    x0 = np.zeros(problem.dim) if x0 is None else np.asarray(x0, float)
    x, snorm, _ = _fista(problem, x0, max_iter=max_iter, tol=tol)
    if snorm > tol:
        logger.warning("reference_minimum: subgradient norm %.3g above tol %.3g", snorm, tol)
    return x, problem.F(x)
