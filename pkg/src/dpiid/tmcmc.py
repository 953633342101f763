"""Additive transformation-based MCMC for the warm start and for comparison runs.

Every coordinate of the continuous block moves by ``sign_j * scale_j * eps``
with a single ``eps ~ |N(0, 1)|`` and independent fair signs. The allocation
vector is redrawn from the truncated prior given the proposed sticks and the
pair is accepted jointly on the weight ratio, which makes the prior draw of
the allocations part of the proposal.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .diffeo import h_inverse
from .errors import InvalidInputError
from .geometry import EllipsoidFrame, fit_frame
from .model import HyperParams, Theta, ThetaAux, log_weight_ratio_rows, sample_allocation_rows


@dataclass(frozen=True)
class TmcmcConfig:
    scale: float | tuple = 0.5 ** 0.5
    burn_in: int = 1_000_000
    thin: int = 100
    keep: int = 10_000
    seed: int = 0
    chunk: int = 4096

    def __post_init__(self):
        if np.any(np.asarray(self.scale, dtype=float) < 0):
            raise InvalidInputError("scale must be non-negative")
        if self.burn_in < 0 or self.thin < 1 or self.keep < 0:
            raise InvalidInputError("need burn_in >= 0, thin >= 1, keep >= 0")

    @property
    def total(self) -> int:
        return self.burn_in + self.keep * self.thin

    def scale_vector(self, d: int) -> np.ndarray:
        a = np.broadcast_to(np.asarray(self.scale, dtype=float), (d,))
        return np.ascontiguousarray(a)


@dataclass
class ChainOutput:
    theta: np.ndarray
    alloc: np.ndarray
    acceptance_rate: float
    hp: HyperParams
    acf: dict = field(default_factory=dict)

    @property
    def keep(self) -> int:
        return self.theta.shape[0]

    def aux(self, k: int) -> ThetaAux:
        return ThetaAux.from_vector(self.theta[k], self.hp)

    def state(self, k: int) -> Theta:
        return Theta(self.aux(k), self.alloc[k].copy())


def initial_state(y, hp: HyperParams, rng: np.random.Generator) -> Theta:
    """Deterministic start: atoms at data quantiles, prior-mean precision and concentration."""
    y = np.asarray(y, dtype=float)
    nu = np.quantile(y, (np.arange(hp.N) + 0.5) / hp.N)
    lam = np.full(hp.N, np.log(hp.s / hp.S))
    psi = np.zeros(hp.M) if hp.mode_code else None
    aux = ThetaAux(float(np.log(hp.a_alpha / hp.b_alpha)), nu, lam, np.zeros(hp.N - 1), psi)
    alloc = sample_allocation_rows(aux.to_vector()[None, :], hp, rng)[0]
    return Theta(aux, alloc)


def _streams(seed):
    """Separate generators for start, innovations, signs, allocations and acceptance.

    Each is consumed sequentially, so the chunk size never changes the chain.
    """
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(5)]


def _draw_block(rngs, S, d, M):
    r_eps, r_sign, r_alloc, r_acc = rngs
    eps = np.abs(r_eps.standard_normal(S))
    signs = np.where(r_sign.random((S, d)) < 0.5, -1.0, 1.0)
    u_alloc = r_alloc.random((S, M))
    u_acc = r_acc.random(S)
    return eps, signs, u_alloc, u_acc


def tmcmc_step(theta: Theta, y, hp: HyperParams, cfg: TmcmcConfig,
               rng: np.random.Generator) -> tuple[Theta, bool]:
    vec = theta.aux.check(hp).copy()
    alloc = np.asarray(theta.alloc, dtype=np.int64).copy()
    y = np.asarray(y, dtype=float)
    cur = float(log_weight_ratio_rows(vec[None, :], alloc[None, :], y, hp)[0])
    eps, signs, u_alloc, u_acc = _draw_block([rng] * 4, 1, hp.dim, hp.M)
    _, n_acc = kernels.tmcmc_chunk(vec, alloc, cur, y, hp.N, hp.M, hp.mode_code, hp.packed(),
                                   cfg.scale_vector(hp.dim), eps, signs, u_alloc, u_acc,
                                   0, 1, 1, np.empty((0, hp.dim)), np.empty((0, hp.M), np.int64))
    if not n_acc:
        return theta, False
    return Theta(ThetaAux.from_vector(vec, hp), alloc), True


def autocorrelation(series, max_lag: int) -> np.ndarray:
    """Biased sample ACF at lags ``0..max_lag``."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n <= max_lag:
        raise InvalidInputError("series must be longer than max_lag")
    x = x - x.mean()
    c0 = x @ x / n
    out = np.zeros(max_lag + 1)
    out[0] = 1.0
    if c0 <= 0:
        warnings.warn("constant series: autocorrelation set to 0 beyond lag 0", RuntimeWarning)
        return out
    for k in range(1, max_lag + 1):
        out[k] = (x[:-k] @ x[k:]) / n / c0
    return out


def tracked_series(theta, alloc, hp: HyperParams, name: str) -> np.ndarray:
    """Time series for a parameter name or a component summary such as ``xi_nu_30``."""
    if name.startswith("xi_nu_") or name.startswith("xi_tau_"):
        j = int(name.rsplit("_", 1)[1]) - 1
        atom = alloc[:, j]
        if name.startswith("xi_nu_"):
            return theta[:, hp.sl_nu][np.arange(len(atom)), atom]
        return np.exp(theta[:, hp.sl_lam][np.arange(len(atom)), atom])
    names = hp.param_names()
    if name not in names:
        raise InvalidInputError(f"unknown tracked coordinate {name!r}")
    return theta[:, names.index(name)]


def run_chain(y, hp: HyperParams, cfg: TmcmcConfig, init: Theta | None = None,
              track: list[str] | None = None, max_lag: int = 40) -> ChainOutput:
    y = np.asarray(y, dtype=float)
    r_init, *rngs = _streams(cfg.seed)
    if init is None:
        init = initial_state(y, hp, r_init)
    vec = init.aux.check(hp).copy()
    alloc = np.asarray(init.alloc, dtype=np.int64).copy()
    cur = float(log_weight_ratio_rows(vec[None, :], alloc[None, :], y, hp)[0])
    out_theta = np.empty((cfg.keep, hp.dim))
    out_alloc = np.empty((cfg.keep, hp.M), dtype=np.int64)
    scale = cfg.scale_vector(hp.dim)
    hpv = hp.packed()
    n_acc = 0
    t = 0
    while t < cfg.total:
        S = min(cfg.chunk, cfg.total - t)
        eps, signs, u_alloc, u_acc = _draw_block(rngs, S, hp.dim, hp.M)
        cur, acc = kernels.tmcmc_chunk(vec, alloc, cur, y, hp.N, hp.M, hp.mode_code, hpv,
                                       scale, eps, signs, u_alloc, u_acc, t, cfg.burn_in,
                                       cfg.thin, out_theta, out_alloc)
        n_acc += acc
        t += S
    rate = n_acc / cfg.total if cfg.total else 0.0
    out = ChainOutput(out_theta, out_alloc, rate, hp)
    if track is None:
        track = [f"xi_nu_{hp.M}", f"xi_tau_{hp.M}"]
    if cfg.keep > max_lag:
        for name in track:
            out.acf[name] = autocorrelation(tracked_series(out_theta, out_alloc, hp, name), max_lag)
    return out


def warm_start_frame(output: ChainOutput, b: float | None) -> EllipsoidFrame:
    """Frame fitted on the retained states mapped to the flattened coordinates."""
    return fit_frame(h_inverse(output.theta, b))
