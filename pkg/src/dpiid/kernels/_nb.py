"""Loop kernels compiled with numba (plain Python when numba is absent).

Parameter vectors use the flat layout documented in :mod:`dpiid.model`:
``[alpha_tilde, nu_1..nu_N, lam_1..lam_N, zeta_1..zeta_{N-1}, psi_1..psi_M]``.
``hp`` is the packed hyperparameter vector from ``HyperParams.packed()``.
"""

import math

import numpy as np

from .._backend import njit

LOG_2PI = math.log(2.0 * math.pi)


@njit
def _softplus(x):
    if x > 0.0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


@njit
def log_stick_weights_row(zeta, out):
    acc = 0.0
    k = zeta.shape[0]
    for i in range(k):
        z = zeta[i]
        out[i] = acc - _softplus(-z)
        acc -= _softplus(z)
    out[k] = acc


@njit
def log_prior_row(theta, N, M, mode, hp):
    at = theta[0]
    a = hp[4]
    b = hp[5]
    lp = a * math.log(b) - math.lgamma(a) + a * at - b * math.exp(at)
    hs = 0.5 * hp[0]
    hS = 0.5 * hp[1]
    nu0 = hp[2]
    c = hp[3]
    const = hs * math.log(hS) - math.lgamma(hs) - 0.5 * (LOG_2PI + math.log(c))
    for i in range(N):
        nu = theta[1 + i]
        lam = theta[1 + N + i]
        tau = math.exp(lam)
        d = nu - nu0
        lp += const + (hs + 0.5) * lam - hS * tau - 0.5 * tau * d * d / c
    alpha = math.exp(at)
    off = 1 + 2 * N
    for i in range(N - 1):
        z = theta[off + i]
        lp += at - _softplus(-z) - alpha * _softplus(z)
    if mode == 1:
        mu = hp[6]
        sd = hp[7]
        off = 3 * N
        for j in range(M):
            u = (theta[off + j] - mu) / sd
            lp += -0.5 * u * u - math.log(sd) - 0.5 * LOG_2PI
    return lp


@njit
def lik_workspace(N):
    return np.empty(5 * N), np.empty(N, dtype=np.int64)


@njit
def log_lik_row(theta, alloc, y, N, M, mode, work, act):
    """Mixture log likelihood; ``work`` and ``act`` come from :func:`lik_workspace`."""
    wk = work[:N]
    wk[:] = 0.0
    if mode == 0:
        for j in range(M):
            wk[alloc[j]] += 1.0
        for k in range(N):
            wk[k] /= M
    else:
        off = 3 * N
        mx = -np.inf
        for j in range(M):
            if theta[off + j] > mx:
                mx = theta[off + j]
        tot = 0.0
        for j in range(M):
            tot += math.exp(theta[off + j] - mx)
        for j in range(M):
            wk[alloc[j]] += math.exp(theta[off + j] - mx) / tot
    # compact list of occupied atoms
    na = 0
    for k in range(N):
        if wk[k] > 0.0:
            act[na] = k
            na += 1
    la = work[N:2 * N]
    prec = work[2 * N:3 * N]
    mean = work[3 * N:4 * N]
    tmp = work[4 * N:]
    for a in range(na):
        k = act[a]
        lam = theta[1 + N + k]
        la[a] = math.log(wk[k]) + 0.5 * lam - 0.5 * LOG_2PI
        prec[a] = math.exp(lam)
        mean[a] = theta[1 + k]
    ll = 0.0
    for i in range(y.shape[0]):
        yi = y[i]
        mx = -np.inf
        for a in range(na):
            d = yi - mean[a]
            v = la[a] - 0.5 * prec[a] * d * d
            tmp[a] = v
            if v > mx:
                mx = v
        s = 0.0
        for a in range(na):
            s += math.exp(tmp[a] - mx)
        ll += mx + math.log(s)
    return ll


@njit
def log_weight_ratio_row(theta, alloc, y, N, M, mode, hp, work, act):
    return log_lik_row(theta, alloc, y, N, M, mode, work, act) + log_prior_row(theta, N, M, mode, hp)


@njit
def log_weight_ratio_batch(thetas, allocs, y, N, M, mode, hp):
    K = thetas.shape[0]
    out = np.empty(K)
    work, act = lik_workspace(N)
    for r in range(K):
        out[r] = log_weight_ratio_row(thetas[r], allocs[r], y, N, M, mode, hp, work, act)
    return out


@njit
def log_lik_batch(thetas, allocs, y, N, M, mode):
    K = thetas.shape[0]
    out = np.empty(K)
    work, act = lik_workspace(N)
    for r in range(K):
        out[r] = log_lik_row(thetas[r], allocs[r], y, N, M, mode, work, act)
    return out


@njit
def log_prior_batch(thetas, N, M, mode, hp):
    K = thetas.shape[0]
    out = np.empty(K)
    for r in range(K):
        out[r] = log_prior_row(thetas[r], N, M, mode, hp)
    return out


@njit
def _alloc_row(theta, u, N, lw, out):
    log_stick_weights_row(theta[1 + 2 * N:3 * N], lw)
    acc = 0.0
    for k in range(N):  # cumulative weights, in place
        acc += math.exp(lw[k])
        lw[k] = acc
    for j in range(u.shape[0]):
        k = np.searchsorted(lw, u[j], side="right")
        out[j] = k if k < N else N - 1


@njit
def sample_alloc_batch(thetas, u, N):
    K = thetas.shape[0]
    M = u.shape[1]
    out = np.empty((K, M), dtype=np.int64)
    lw = np.empty(N)
    for r in range(K):
        _alloc_row(thetas[r], u[r], N, lw, out[r])
    return out


@njit
def tmcmc_chunk(theta, alloc, cur_lr, y, N, M, mode, hp, scale, eps, signs,
                u_alloc, u_acc, t0, burn_in, thin, out_theta, out_alloc):
    """Advance an additive-TMCMC chain by ``eps.shape[0]`` steps in place.

    Returns ``(current log weight ratio, accepted count)``.
    """
    d = theta.shape[0]
    prop = np.empty(d)
    palloc = np.empty(M, dtype=np.int64)
    lw = np.empty(N)
    work, act = lik_workspace(N)
    n_acc = 0
    keep = out_theta.shape[0]
    for s in range(eps.shape[0]):
        e = eps[s]
        for k in range(d):
            prop[k] = theta[k] + signs[s, k] * scale[k] * e
        _alloc_row(prop, u_alloc[s], N, lw, palloc)
        lr = log_weight_ratio_row(prop, palloc, y, N, M, mode, hp, work, act)
        if math.log(u_acc[s]) < lr - cur_lr:
            theta[:] = prop
            alloc[:] = palloc
            cur_lr = lr
            n_acc += 1
        t = t0 + s
        if t >= burn_in:
            q = t - burn_in + 1
            if q % thin == 0:
                idx = q // thin - 1
                if idx < keep:
                    out_theta[idx] = theta
                    out_alloc[idx] = alloc
    return cur_lr, n_acc


@njit
def imh_scan(log_rho, u_mh, u_res, cur_lr, p_hat, steps_needed):
    """Residual-kernel scan over a block of pre-drawn independence proposals.

    Returns ``(index of the final state or -1, its log ratio, steps completed,
    proposals consumed, residual rejections)``.
    """
    cur = -1
    steps = 0
    rej = 0
    k = 0
    B = log_rho.shape[0]
    while k < B and steps < steps_needed:
        dl = log_rho[k] - cur_lr
        m = 1.0 if dl >= 0.0 else math.exp(dl)
        if u_mh[k] < m:
            if u_res[k] < (m - p_hat) / m:
                cur = k
                cur_lr = log_rho[k]
                steps += 1
            else:
                rej += 1
        else:
            steps += 1
        k += 1
    return cur, cur_lr, steps, k, rej
