"""Isotropic radial diffeomorphism used to flatten the target.

``h(g) = f(|g|) g/|g|`` with

    f(x) = exp(b x) - e/3                   for x > 1/b
    f(x) = x^3 b^3 e / 6 + x b e / 2        for x <= 1/b

The engine works in ``gamma`` coordinates with ``theta = h(gamma)``; the
density of ``gamma`` is ``pi(h(gamma)) |det grad h(gamma)|``.
``b=None`` everywhere means the identity map.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError, NumericError
from .kernels import log_stick_weights
from .model import log_weight_ratio_rows

E = np.e
_NEWTON_MAXITER = 100


def _check_b(b):
    if not (np.isfinite(b) and b > 0):
        raise InvalidInputError(f"diffeomorphism rate b must be positive, got {b}")


def f_scalar(x, b):
    _check_b(b)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise InvalidInputError("f is defined on [0, inf)")
    bx = b * x
    with np.errstate(over="ignore"):
        out = np.where(bx > 1.0, np.exp(bx) - E / 3.0, E * bx * (bx * bx / 6.0 + 0.5))
    return out if out.ndim else float(out)


def f_prime(x, b):
    _check_b(b)
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise InvalidInputError("f is defined on [0, inf)")
    bx = b * x
    with np.errstate(over="ignore"):
        out = np.where(bx > 1.0, b * np.exp(bx), b * E * (0.5 * bx * bx + 0.5))
    return out if out.ndim else float(out)


def _f_over_x(r, b):
    """f(r)/r, finite at r = 0 where it equals b e / 2."""
    br = b * r
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        big = (np.exp(br) - E / 3.0) / r
    return np.where(br > 1.0, big, b * E * (br * br / 6.0 + 0.5))


def _log_f_over_x(r, b):
    br = b * r
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        big = br + np.log1p(-(E / 3.0) * np.exp(-br)) - np.log(r)
    return np.where(br > 1.0, big, np.log(b * E * (br * br / 6.0 + 0.5)))


def f_inverse(y, b):
    """Inverse of ``f``: log branch above 2e/3, safeguarded Newton on the cubic below."""
    _check_b(b)
    y = np.asarray(y, dtype=float)
    if np.any(y < 0):
        raise InvalidInputError("f_inverse is defined on [0, inf)")
    out = np.empty_like(y)
    hi = y > 2.0 * E / 3.0
    out[hi] = np.log(y[hi] + E / 3.0) / b
    lo = ~hi
    if np.any(lo):
        yl = y[lo]
        # with t = b x the cubic is t^3 + 3 t = 6 y / e; closed form start
        q = 6.0 * yl / E
        t = 2.0 * np.sinh(np.arcsinh(0.5 * q) / 3.0)
        lo_b, hi_b = np.zeros_like(t), np.ones_like(t)
        tol = 1e-12 * np.maximum(1.0, yl)
        for _ in range(_NEWTON_MAXITER):
            g = E * t * (t * t / 6.0 + 0.5) - yl
            if np.all(np.abs(g) <= tol):
                break
            lo_b = np.where(g < 0, t, lo_b)
            hi_b = np.where(g > 0, t, hi_b)
            step = t - g / (E * (0.5 * t * t + 0.5))
            # fall back to bisection when Newton leaves the bracket
            t = np.where((step > lo_b) & (step < hi_b), step, 0.5 * (lo_b + hi_b))
        else:
            raise NumericError("f_inverse: Newton iteration did not converge")
        out[lo] = t / b
    return out if out.ndim else float(out)


def _norm(x, keepdims=False):
    """Euclidean norm along the last axis without overflow in the squares."""
    m = np.max(np.abs(x), axis=-1, keepdims=True)
    safe = np.where(m > 0, m, 1.0)
    with np.errstate(invalid="ignore"):
        r = m * np.linalg.norm(x / safe, axis=-1, keepdims=True)
    return r if keepdims else r[..., 0]


def h_forward(gamma, b):
    gamma = np.asarray(gamma, dtype=float)
    if b is None:
        return gamma.copy()
    _check_b(b)
    return _f_over_x(_norm(gamma, keepdims=True), b) * gamma


def h_inverse(x, b):
    x = np.asarray(x, dtype=float)
    if b is None:
        return x.copy()
    rho = _norm(x, keepdims=True)
    t = f_inverse(rho, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(rho > 0, t / rho, 2.0 / (b * E))
    return scale * x


def log_abs_det_grad_h(gamma, b):
    """``log f'(r) + (d-1) log(f(r)/r)`` with ``r = |gamma|``; batched over leading axes."""
    gamma = np.asarray(gamma, dtype=float)
    if b is None:
        return np.zeros(gamma.shape[:-1]) if gamma.ndim > 1 else 0.0
    _check_b(b)
    d = gamma.shape[-1]
    r = _norm(gamma)
    br = b * r
    log_fp = np.where(br > 1.0, np.log(b) + br, np.log(b * E * (0.5 * br * br + 0.5)))
    out = log_fp + (d - 1) * _log_f_over_x(r, b)
    return out if out.ndim else float(out)


def log_transformed_target(log_target, gamma, b):
    """Density of ``gamma`` given a log density ``log_target`` on ``theta = h(gamma)``."""
    return log_target(h_forward(gamma, b)) + log_abs_det_grad_h(gamma, b)


def log_transformed_weight_ratio(gamma, alloc, y, hp, b):
    g = np.atleast_2d(gamma)
    theta = h_forward(g, b)
    out = log_weight_ratio_rows(theta, np.atleast_2d(alloc), y, hp) + log_abs_det_grad_h(g, b)
    return out if np.ndim(gamma) > 1 else float(out[0])


def log_transformed_posterior(gamma, alloc, y, hp, b):
    """Unnormalised posterior of ``(alloc, gamma)``: weight ratio plus the allocation prior mass."""
    g = np.atleast_2d(gamma)
    al = np.atleast_2d(alloc)
    theta = h_forward(g, b)
    lw = log_stick_weights(theta[:, hp.sl_zeta])
    extra = np.take_along_axis(lw, al, axis=1).sum(axis=1)
    out = log_transformed_weight_ratio(g, al, y, hp, b) + extra
    return out if np.ndim(gamma) > 1 else float(out[0])
