"""Compiled inner kernels: the cubic-regularized prox and the SVRG inner loop.

The nonsmooth term is passed in a flat encoding so the kernels stay
monomorphic: ``h(x) = lam*||x||_1 + (sig/2)*||x||^2`` when ``box`` is False,
or the indicator of ``[lo, hi]`` when ``box`` is True.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _prox_h_scaled(num, c, lam, sig, box, lo, hi):
    # argmin_x (c/2)||x - num/c||^2 + h(x), written in terms of num = c*v
    d = num.shape[0]
    out = np.empty(d)
    if box:
        for j in range(d):
            v = num[j] / c
            if v < lo[j]:
                v = lo[j]
            elif v > hi[j]:
                v = hi[j]
            out[j] = v
    else:
        for j in range(d):
            a = abs(num[j]) - lam
            if a > 0.0:
                out[j] = np.sign(num[j]) * a / (c + sig)
            else:
                out[j] = 0.0
    return out


@njit(cache=True)
def _radial_eval(z, y, eta, step, rho, lam, sig, box, lo, hi):
    """Return (w(rho), ||w(rho)||, d||w||/drho) for the fixed-radius subproblem."""
    c = 1.0 / step + 0.5 * eta * rho
    d = z.shape[0]
    num = np.empty(d)
    for j in range(d):
        num[j] = z[j] / step + c * y[j]
    x = _prox_h_scaled(num, c, lam, sig, box, lo, hi)
    w = x - y
    nw = np.sqrt(np.sum(w * w))
    # dw_j/dc = -w_j/(c+sig) on coordinates where the prox is locally affine
    acc = 0.0
    for j in range(d):
        if box:
            if lo[j] < x[j] < hi[j]:
                acc += w[j] * w[j] / c
        else:
            if abs(num[j]) > lam:
                acc += w[j] * w[j] / (c + sig)
    dnw = 0.0
    if nw > 0.0:
        dnw = -0.5 * eta * acc / nw
    return w, nw, dnw


@njit(cache=True)
def prox_cubic(z, y, eta, step, lam, sig, box, lo, hi):
    """argmin_w ||w - z||^2/(2 step) + (eta/6)||w||^3 + h(w + y)."""
    d = z.shape[0]
    if eta == 0.0:
        w, nw, dnw = _radial_eval(z, y, eta, step, 0.0, lam, sig, box, lo, hi)
        return w
    if (not box) and lam == 0.0:
        # h is a pure quadratic: the radial equation is a scalar quadratic
        u = np.empty(d)
        for j in range(d):
            u[j] = z[j] / step - sig * y[j]
        k = np.sqrt(np.sum(u * u))
        b = 1.0 / step + sig
        rho = 2.0 * k / (b + np.sqrt(b * b + 2.0 * eta * k))
        c = 1.0 / step + 0.5 * eta * rho + sig
        return u / c

    w0, hi_rho, dnw = _radial_eval(z, y, eta, step, 0.0, lam, sig, box, lo, hi)
    if hi_rho == 0.0:
        return w0
    # phi(rho) = ||w(rho)|| - rho is strictly decreasing with phi(0) >= 0,
    # phi(||w(0)||) <= 0, so the root is bracketed by [0, ||w(0)||].
    a = 0.0
    b = hi_rho
    rho = hi_rho
    zn = np.sqrt(np.sum(z * z))
    tol = 1e-15 * (1.0 + zn + hi_rho)
    w = w0
    for it in range(200):
        w, nw, dnw = _radial_eval(z, y, eta, step, rho, lam, sig, box, lo, hi)
        phi = nw - rho
        if phi == 0.0:
            break
        if phi > 0.0:
            a = rho
        else:
            b = rho
        dphi = dnw - 1.0
        cand = rho - phi / dphi
        if not (a < cand < b):
            cand = 0.5 * (a + b)
        if abs(cand - rho) <= tol or (b - a) <= tol:
            rho = cand
            w, nw, dnw = _radial_eval(z, y, eta, step, rho, lam, sig, box, lo, hi)
            break
        rho = cand
    return w


@njit(cache=True)
def svrg_inner(w_tilde, mu_tilde, factors, shift, q, idx, tau, y, eta,
               lam, sig, box, lo, hi):
    """One stage of the variance-reduced inner loop; returns the iterate average.

    ``factors`` has shape (b, d, k) with per-sample Hessians F_i F_i^T.  The
    shared shift and linear term enter through ``mu_tilde`` and the exact
    ``shift * (w - w_tilde)`` correction.
    """
    b, d, k = factors.shape
    w = w_tilde.copy()
    acc = np.zeros(d)
    diff = np.empty(d)
    grad = np.empty(d)
    zbuf = np.empty(d)
    for it in range(idx.shape[0]):
        i = idx[it]
        for j in range(d):
            diff[j] = w[j] - w_tilde[j]
        scale = 1.0 / (q[i] * b)
        for j in range(d):
            grad[j] = mu_tilde[j] + shift * diff[j]
        for col in range(k):
            s = 0.0
            for j in range(d):
                s += factors[i, j, col] * diff[j]
            s *= scale
            for j in range(d):
                grad[j] += s * factors[i, j, col]
        for j in range(d):
            zbuf[j] = w[j] - tau * grad[j]
        w = prox_cubic(zbuf, y, eta, tau, lam, sig, box, lo, hi)
        for j in range(d):
            acc[j] += w[j]
    return acc / idx.shape[0]


@njit(cache=True)
def gap_certificate(snorm, eta, mu):
    """Upper bound on P(w) - min P from a subgradient norm at w.

    Uses the cubic growth (eta/12)||u - w||^3 of the model and, when mu > 0,
    its mu-strong convexity; the smaller bound wins.
    """
    if snorm == 0.0:
        return 0.0
    best = np.inf
    if eta > 0.0:
        best = (4.0 / 3.0) * snorm ** 1.5 / np.sqrt(eta)
    if mu > 0.0:
        alt = 0.5 * snorm * snorm / mu
        if alt < best:
            best = alt
    return best


@njit(cache=True)
def fista_model(Hd, g, y, eta, tau, mu, tol, max_iter, w0,
                lam, sig, box, lo, hi):
    """Accelerated prox-gradient on P(w) = <g,w> + w'Hw/2 + (eta/6)||w||^3 + h(w+y).

    Stops once the certified gap at a prox point drops to ``tol``.  Returns
    (w_best, cert_best, h_subgradient_at_w_best, iterations).
    """
    d = g.shape[0]
    w = w0.copy()
    v = w0.copy()
    theta = 1.0
    best_w = w0.copy()
    best_cert = np.inf
    best_sub = np.zeros(d)
    it = 0
    gv = np.empty(d)
    z = np.empty(d)
    for it in range(1, max_iter + 1):
        gv[:] = g + Hd @ v
        for j in range(d):
            z[j] = v[j] - tau * gv[j]
        w_new = prox_cubic(z, y, eta, tau, lam, sig, box, lo, hi)
        # exact subgradient of P at the prox point
        gw = g + Hd @ w_new
        s = (v - w_new) / tau + gw - gv
        cert = gap_certificate(np.sqrt(np.sum(s * s)), eta, mu)
        if cert < best_cert:
            best_cert = cert
            best_w[:] = w_new
            nw = np.sqrt(np.sum(w_new * w_new))
            for j in range(d):
                best_sub[j] = (z[j] - w_new[j]) / tau - 0.5 * eta * nw * w_new[j]
        if best_cert <= tol:
            break
        theta_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * theta * theta))
        if np.sum((v - w_new) * (w_new - w)) > 0.0:
            theta_new = 1.0
            v[:] = w_new
        else:
            v[:] = w_new + ((theta - 1.0) / theta_new) * (w_new - w)
        w = w_new
        theta = theta_new
    return best_w, best_cert, best_sub, it
