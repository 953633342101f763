"""Posterior summaries: predictive density on a grid and the number of components."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidInputError
from .model import HyperParams

_CHUNK = 2_000_000


@dataclass
class PredictiveGrid:
    x: np.ndarray
    mean_density: np.ndarray
    pointwise_variance: np.ndarray
    n_samples: int

    def scaled_variance(self, factor: float) -> np.ndarray:
        """Variance times a presentation factor; the stored values stay unscaled."""
        return factor * self.pointwise_variance


def _weights(theta, hp: HyperParams) -> np.ndarray:
    if hp.mode_code == 0:
        return np.full((theta.shape[0], hp.M), 1.0 / hp.M)
    psi = theta[:, hp.sl_psi]
    w = np.exp(psi - psi.max(axis=1, keepdims=True))
    return w / w.sum(axis=1, keepdims=True)


def density_values(theta, alloc, hp: HyperParams, x) -> np.ndarray:
    """Mixture density of every draw at every grid point, shape (K, G)."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    alloc = np.atleast_2d(np.asarray(alloc, dtype=np.int64))
    x = np.asarray(x, dtype=float)
    rows = np.arange(theta.shape[0])[:, None]
    mu = theta[:, hp.sl_nu][rows, alloc]
    lam = theta[:, hp.sl_lam][rows, alloc]
    w = _weights(theta, hp)
    prec = np.exp(lam)
    out = np.empty((theta.shape[0], x.size))
    step = max(1, _CHUNK // max(1, x.size * hp.M))
    for a in range(0, theta.shape[0], step):
        sl = slice(a, a + step)
        z = x[None, None, :] - mu[sl, :, None]
        dens = np.sqrt(prec[sl, :, None] / (2 * np.pi)) * np.exp(-0.5 * prec[sl, :, None] * z * z)
        out[sl] = np.einsum("kj,kjg->kg", w[sl], dens)
    return out


def predictive_density(samples, hp: HyperParams, grid) -> PredictiveGrid:
    """Mean and unbiased pointwise variance of the draw-wise mixture densities.

    ``samples`` is anything with ``theta`` and ``alloc`` arrays (a chain output
    or an i.i.d. sample set).
    """
    theta = np.asarray(samples.theta)
    if theta.shape[0] == 0:
        raise InvalidInputError("no samples")
    v = density_values(theta, samples.alloc, hp, grid)
    var = v.var(axis=0, ddof=1) if v.shape[0] > 1 else np.zeros(v.shape[1])
    return PredictiveGrid(np.asarray(grid, dtype=float), v.mean(axis=0), var, v.shape[0])


def batch_means_se(values, n_batches: int = 20) -> np.ndarray:
    """Monte Carlo standard error of column means from non-overlapping batch means."""
    v = np.asarray(values, dtype=float)
    n = v.shape[0] // n_batches * n_batches
    if n_batches < 2 or n == 0:
        raise InvalidInputError("need at least two non-empty batches")
    means = v[:n].reshape(n_batches, -1, *v.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)


def _occupied_mask(theta, alloc, hp: HyperParams, y) -> np.ndarray:
    """Components that are the most probable source of at least one observation."""
    rows = np.arange(theta.shape[0])[:, None]
    mu = theta[:, hp.sl_nu][rows, alloc]
    lam = theta[:, hp.sl_lam][rows, alloc]
    logw = np.log(_weights(theta, hp))
    y = np.asarray(y, dtype=float)
    resp = logw[:, :, None] + 0.5 * lam[:, :, None] - 0.5 * np.exp(lam)[:, :, None] * (y[None, None, :] - mu[:, :, None]) ** 2
    best = resp.argmax(axis=1)
    mask = np.zeros(alloc.shape, dtype=bool)
    np.put_along_axis(mask, best, True, axis=1)
    return mask


def k_values(alloc, theta=None, hp: HyperParams | None = None, y=None, occupied: bool = False) -> np.ndarray:
    """Number of distinct atoms per draw, optionally among data-occupied components only."""
    alloc = np.atleast_2d(np.asarray(alloc, dtype=np.int64))
    if alloc.shape[0] == 0:
        raise InvalidInputError("no samples")
    if occupied:
        if theta is None or hp is None or y is None:
            raise InvalidInputError("occupied counting needs theta, hp and y")
        mask = _occupied_mask(np.atleast_2d(theta), alloc, hp, y)
        return np.array([np.unique(a[m]).size for a, m in zip(alloc, mask)])
    s = np.sort(alloc, axis=1)
    return 1 + (np.diff(s, axis=1) != 0).sum(axis=1)


def k_posterior(alloc, **kw) -> dict[int, Fraction]:
    """Empirical distribution of K as exact fractions of the draw count."""
    ks = k_values(alloc, **kw)
    n = ks.size
    return {int(k): Fraction(c, n) for k, c in sorted(Counter(ks.tolist()).items())}
