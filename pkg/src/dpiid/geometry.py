"""Concentric ellipsoid shells: frame fitting, volumes and uniform sampling.

Shell ``i`` (0-based) is the set of points whose Mahalanobis radius lies in
``[radii[i-1], radii[i]]``, with ``radii[-1] = 0`` for the innermost ball.
Radii and volumes are handled in log space; ``r**d`` overflows quickly for
dimensions in the hundreds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from .errors import FrameError, InvalidInputError

OUTSIDE = -1
_JITTERS = (0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2, 1.0)


@dataclass(frozen=True)
class EllipsoidFrame:
    mu: np.ndarray
    scale_factor: np.ndarray  # lower triangular B with Sigma = B B^T
    log_det_B: float
    jitter: float = 0.0

    @property
    def d(self) -> int:
        return self.mu.shape[0]

    @classmethod
    def from_cov(cls, mu, cov) -> "EllipsoidFrame":
        B = np.linalg.cholesky(np.asarray(cov, dtype=float))
        return cls(np.asarray(mu, dtype=float), B, float(np.log(np.diag(B)).sum()))


def fit_frame(samples) -> EllipsoidFrame:
    """Center and scale from sample mean and (jittered) sample covariance."""
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2:
        raise FrameError("samples must be a (K, d) array")
    K, d = x.shape
    if K <= d:
        raise FrameError(f"need more samples than dimensions, got K={K}, d={d}")
    mu = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    for lam in _JITTERS:
        try:
            B = np.linalg.cholesky(cov + lam * np.eye(d))
        except np.linalg.LinAlgError:
            continue
        diag = np.diag(B)
        if np.all(np.isfinite(B)) and np.all(diag > 0):
            return EllipsoidFrame(mu, B, float(np.log(diag).sum()), lam)
    raise FrameError("covariance factorisation failed at every jitter level")


@dataclass(frozen=True)
class ShellSchedule:
    radii: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=float)
        if r.ndim != 1 or r.size == 0 or r[0] <= 0 or np.any(np.diff(r) <= 0):
            raise InvalidInputError("radii must be positive and strictly increasing")
        object.__setattr__(self, "radii", r)

    @classmethod
    def arithmetic(cls, base_radius: float, step: float, count: int) -> "ShellSchedule":
        return cls(base_radius + step * np.arange(count))

    @property
    def count(self) -> int:
        return self.radii.size

    @property
    def base_radius(self) -> float:
        return float(self.radii[0])

    @property
    def step(self) -> float:
        return float(self.radii[1] - self.radii[0]) if self.count > 1 else 0.0

    def extended(self, count: int) -> "ShellSchedule":
        """Same arithmetic progression continued to ``count`` shells."""
        if count <= self.count:
            return self
        if self.count < 2:
            raise InvalidInputError("cannot extrapolate a single-radius schedule")
        extra = self.radii[-1] + self.step * np.arange(1, count - self.count + 1)
        return ShellSchedule(np.concatenate([self.radii, extra]))

    def inner(self, i: int) -> float:
        return 0.0 if i == 0 else float(self.radii[i - 1])

    def outer(self, i: int) -> float:
        return float(self.radii[i])


def mahalanobis(frame: EllipsoidFrame, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=float)
    z = solve_triangular(frame.scale_factor, np.atleast_2d(x - frame.mu).T, lower=True)
    r = np.linalg.norm(z, axis=0)
    return r if x.ndim > 1 else float(r[0])


def shell_index(schedule: ShellSchedule, r):
    """Shell containing radius ``r``; boundary ties go to the lower shell. ``OUTSIDE`` past the last."""
    idx = np.searchsorted(schedule.radii, r, side="left")
    idx = np.where(idx >= schedule.count, OUTSIDE, idx)
    return idx if np.ndim(idx) else int(idx)


def _log_unit_ball(d):
    return 0.5 * d * np.log(np.pi) - gammaln(0.5 * d + 1.0)


def shell_log_volume(frame: EllipsoidFrame, schedule: ShellSchedule, i: int) -> float:
    d = frame.d
    hi = np.log(schedule.outer(i))
    if i == 0:
        log_diff = d * hi
    else:
        lo = np.log(schedule.inner(i))
        x = d * (hi - lo)
        log_diff = d * lo + (np.log(np.expm1(x)) if x < 30.0 else x + np.log1p(-np.exp(-x)))
    return float(frame.log_det_B + _log_unit_ball(d) + log_diff)


def ellipsoid_log_volume(frame: EllipsoidFrame, radius: float) -> float:
    return float(frame.log_det_B + _log_unit_ball(frame.d) + frame.d * np.log(radius))


def sample_radius(schedule: ShellSchedule, i: int, d: int, u) -> np.ndarray:
    """Inverse-CDF radius with density proportional to r^(d-1) on shell ``i``."""
    u = np.asarray(u, dtype=float)
    hi = np.log(schedule.outer(i))
    if i == 0:
        return np.exp(hi + np.log(u) / d)
    lo = np.log(schedule.inner(i))
    x = d * (hi - lo)
    if x < 30.0:
        lr = lo + np.log1p(u * np.expm1(x)) / d
    else:
        with np.errstate(divide="ignore"):
            lr = lo + (x + np.log(u + (1.0 - u) * np.exp(-x))) / d
    return np.clip(np.exp(lr), schedule.inner(i), schedule.outer(i))


def sample_uniform_shell(frame: EllipsoidFrame, schedule: ShellSchedule, i: int,
                         rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Uniform draw(s) on shell ``i``: isotropic direction times inverse-CDF radius, no rejection."""
    n = 1 if size is None else size
    d = frame.d
    g = rng.standard_normal((n, d))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = sample_radius(schedule, i, d, rng.random(n))
    x = frame.mu + (r[:, None] * g) @ frame.scale_factor.T
    return x[0] if size is None else x
