"""Vectorised numpy counterparts of the loop kernels in ``_nb``."""

import numpy as np
from scipy.special import gammaln, logsumexp

LOG_2PI = np.log(2.0 * np.pi)
# rows per likelihood block, keeps the (rows, n, M) temporary small
_BLOCK_ELEMS = 2_000_000


def _softplus(x):
    return np.logaddexp(0.0, x)


def log_stick_weights(zetas):
    """Row-wise log stick weights for ``zetas`` of shape (K, N-1)."""
    zetas = np.atleast_2d(zetas)
    log_v = -_softplus(-zetas)
    log_1mv = -_softplus(zetas)
    K, k = zetas.shape
    acc = np.zeros((K, k + 1))
    np.cumsum(log_1mv, axis=1, out=acc[:, 1:])
    out = np.empty((K, k + 1))
    out[:, :k] = acc[:, :k] + log_v
    out[:, k] = acc[:, k]
    return out


def log_prior_batch(thetas, N, M, mode, hp):
    thetas = np.atleast_2d(thetas)
    at = thetas[:, 0]
    a, b = hp[4], hp[5]
    lp = a * np.log(b) - gammaln(a) + a * at - b * np.exp(at)
    hs, hS, nu0, c = 0.5 * hp[0], 0.5 * hp[1], hp[2], hp[3]
    const = hs * np.log(hS) - gammaln(hs) - 0.5 * (LOG_2PI + np.log(c))
    nu = thetas[:, 1:1 + N]
    lam = thetas[:, 1 + N:1 + 2 * N]
    tau = np.exp(lam)
    terms = const + (hs + 0.5) * lam - hS * tau - 0.5 * tau * (nu - nu0) ** 2 / c
    lp = lp + terms.sum(axis=1)
    z = thetas[:, 1 + 2 * N:3 * N]
    alpha = np.exp(at)
    lp = lp + (at[:, None] - _softplus(-z) - alpha[:, None] * _softplus(z)).sum(axis=1)
    if mode == 1:
        u = (thetas[:, 3 * N:3 * N + M] - hp[6]) / hp[7]
        lp = lp + (-0.5 * u * u - np.log(hp[7]) - 0.5 * LOG_2PI).sum(axis=1)
    return lp


def _log_pi(thetas, N, M, mode):
    if mode == 0:
        return np.full((thetas.shape[0], M), -np.log(M))
    psi = thetas[:, 3 * N:3 * N + M]
    return psi - logsumexp(psi, axis=1, keepdims=True)


def log_lik_batch(thetas, allocs, y, N, M, mode):
    thetas = np.atleast_2d(thetas)
    allocs = np.atleast_2d(allocs)
    K = thetas.shape[0]
    out = np.empty(K)
    step = max(1, _BLOCK_ELEMS // max(1, y.size * M))
    for lo in range(0, K, step):
        th = thetas[lo:lo + step]
        al = allocs[lo:lo + step]
        nu = np.take_along_axis(th[:, 1:1 + N], al, axis=1)
        lam = np.take_along_axis(th[:, 1 + N:1 + 2 * N], al, axis=1)
        lpi = _log_pi(th, N, M, mode)
        # (rows, n, M)
        comp = (lpi + 0.5 * lam - 0.5 * LOG_2PI)[:, None, :] \
            - 0.5 * np.exp(lam)[:, None, :] * (y[None, :, None] - nu[:, None, :]) ** 2
        out[lo:lo + step] = logsumexp(comp, axis=2).sum(axis=1)
    return out


def log_weight_ratio_batch(thetas, allocs, y, N, M, mode, hp):
    return log_lik_batch(thetas, allocs, y, N, M, mode) + log_prior_batch(thetas, N, M, mode, hp)


def sample_alloc_batch(thetas, u, N):
    thetas = np.atleast_2d(thetas)
    cum = np.cumsum(np.exp(log_stick_weights(thetas[:, 1 + 2 * N:3 * N])), axis=1)
    idx = (u[:, :, None] >= cum[:, None, :]).sum(axis=2)
    return np.minimum(idx, N - 1).astype(np.int64)


def tmcmc_chunk(theta, alloc, cur_lr, y, N, M, mode, hp, scale, eps, signs,
                u_alloc, u_acc, t0, burn_in, thin, out_theta, out_alloc):
    n_acc = 0
    keep = out_theta.shape[0]
    for s in range(eps.shape[0]):
        prop = theta + signs[s] * scale * eps[s]
        palloc = sample_alloc_batch(prop[None, :], u_alloc[s][None, :], N)
        lr = log_weight_ratio_batch(prop[None, :], palloc, y, N, M, mode, hp)[0]
        if np.log(u_acc[s]) < lr - cur_lr:
            theta[:] = prop
            alloc[:] = palloc[0]
            cur_lr = lr
            n_acc += 1
        t = t0 + s
        if t >= burn_in:
            q = t - burn_in + 1
            if q % thin == 0 and q // thin - 1 < keep:
                out_theta[q // thin - 1] = theta
                out_alloc[q // thin - 1] = alloc
    return cur_lr, n_acc


def imh_scan(log_rho, u_mh, u_res, cur_lr, p_hat, steps_needed):
    """Same contract as the loop version; jumps from one accepted move to the next."""
    B = log_rho.shape[0]
    start, cur, steps, rej = 0, -1, 0, 0
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        while start < B and steps < steps_needed:
            dl = log_rho[start:] - cur_lr
            m = np.where(dl >= 0.0, 1.0, np.exp(dl))
            moved = u_mh[start:] < m
            acc = moved & (u_res[start:] < (m - p_hat) / m)
            done = np.cumsum(acc | ~moved)
            stop = int(np.searchsorted(done, steps_needed - steps))
            hits = np.flatnonzero(acc)
            if hits.size and hits[0] <= stop:
                end = int(hits[0])
                cur = start + end
                cur_lr = log_rho[cur]
            else:
                end = min(stop, B - start - 1)
            steps += int(done[end])
            rej += int((moved[:end + 1] & ~acc[:end + 1]).sum())
            start += end + 1
    return cur, cur_lr, steps, start, rej
