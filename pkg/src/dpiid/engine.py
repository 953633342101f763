"""Exact i.i.d. sampling over ellipsoid shells.

Each shell ``A_i`` is handled by an independence Metropolis-Hastings kernel
whose proposal is uniform on the shell (allocations from the truncated prior).
The kernel is minorized by ``p_hat`` times its own proposal, so after a
geometric number of steps back in time the chain forgets its start. Drawing
the regeneration time first and running the residual kernel forward from a
fresh proposal gives an exact draw from the shell-restricted posterior.
Shells are chosen with probability proportional to their estimated mass.

Random streams are derived from the master seed by task kind and index, so
results never depend on the number of worker processes.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .diffeo import h_forward, log_abs_det_grad_h
from .errors import EngineError, InvalidInputError
from .geometry import (EllipsoidFrame, ShellSchedule, mahalanobis, sample_uniform_shell,
                       shell_index, shell_log_volume)
from .model import HyperParams, log_weight_ratio_rows, sample_allocation_rows

# spawn-key tags for the derived random streams
_SHELL, _DRAW, _SELECT = 0, 1, 2


def stream(seed: int, kind: int, index: int) -> np.random.Generator:
    """Generator for task ``index`` of a given kind, independent of scheduling."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(kind, index)))


# --------------------------------------------------------------------------- targets

class DPTarget:
    """Truncated DP mixture posterior seen in flattened ``gamma`` coordinates."""

    def __init__(self, y, hp: HyperParams, b: float | None = None):
        self.y = np.asarray(y, dtype=float)
        self.hp = hp
        self.b = b

    @property
    def dim(self) -> int:
        return self.hp.dim

    @property
    def n_extra(self) -> int:
        return self.hp.M

    def evaluate(self, gamma, rng):
        """Prior allocations for each row of ``gamma`` and the log weight ratio."""
        gamma = np.atleast_2d(gamma)
        theta = h_forward(gamma, self.b)
        alloc = sample_allocation_rows(theta, self.hp, rng)
        lr = log_weight_ratio_rows(theta, alloc, self.y, self.hp)
        if self.b is not None:
            lr = lr + log_abs_det_grad_h(gamma, self.b)
        return np.where(np.isnan(lr), -np.inf, lr), alloc

    def log_rho(self, gamma, extra):
        gamma = np.atleast_2d(gamma)
        theta = h_forward(gamma, self.b)
        lr = log_weight_ratio_rows(theta, np.atleast_2d(extra), self.y, self.hp)
        if self.b is not None:
            lr = lr + log_abs_det_grad_h(gamma, self.b)
        return lr

    def log_extra_density(self, gamma, extra):
        """Log prior mass of the allocations, ``sum_j log w_{c_j}``."""
        theta = h_forward(np.atleast_2d(gamma), self.b)
        lw = kernels.log_stick_weights(np.ascontiguousarray(theta[:, self.hp.sl_zeta]))
        return np.take_along_axis(lw, np.atleast_2d(extra), axis=1).sum(axis=1)


class ToyTarget:
    """Continuous density on ``theta = h(gamma)`` with no discrete block; for validation."""

    def __init__(self, logpdf, dim: int, b: float | None = None):
        self.logpdf = logpdf
        self.b = b
        self._dim = int(dim)

    @property
    def dim(self) -> int:
        return self._dim

    @property
    def n_extra(self) -> int:
        return 0

    def log_rho(self, gamma, extra=None):
        gamma = np.atleast_2d(gamma)
        with np.errstate(divide="ignore"):
            lr = np.asarray(self.logpdf(h_forward(gamma, self.b)), dtype=float)
        if self.b is not None:
            lr = lr + log_abs_det_grad_h(gamma, self.b)
        return np.where(np.isnan(lr), -np.inf, lr)

    def evaluate(self, gamma, rng):
        gamma = np.atleast_2d(gamma)
        return self.log_rho(gamma), np.empty((gamma.shape[0], 0), dtype=np.int64)

    def log_extra_density(self, gamma, extra):
        return np.zeros(np.atleast_2d(gamma).shape[0])


# --------------------------------------------------------------------------- config and records

@dataclass(frozen=True)
class EngineConfig:
    n_mc: int = 5000
    eta: float = 1e-10
    c1: float = 9.0  # square root of the innermost radius
    step: float = 0.0005
    shells: int = 10_000
    b: float | None = None
    draws: int = 1
    seed: int = 0
    workers: int = 1
    lazy: bool = True
    max_shells: int = 1 << 21
    max_steps: int = 10 ** 8  # residual steps allowed for a single draw
    max_total_steps: int | None = None  # residual steps allowed for the whole job
    block: int = 1 << 15

    def __post_init__(self):
        if self.n_mc < 2:
            raise InvalidInputError("n_mc must be at least 2")
        if not (self.eta > 0 and self.eta < 1):
            raise InvalidInputError("eta must lie in (0, 1)")
        if self.draws < 1:
            raise InvalidInputError("need at least one draw")
        if self.c1 <= 0 or self.step <= 0 or self.shells < 1:
            raise InvalidInputError("need c1 > 0, step > 0 and at least one shell")
        if self.workers < 1:
            raise InvalidInputError("workers must be >= 1")
        if self.b is not None and not self.b > 0:
            raise InvalidInputError("b must be positive")

    def schedule(self) -> ShellSchedule:
        return ShellSchedule.arithmetic(self.c1, self.step, self.shells)


@dataclass(frozen=True)
class ShellEstimate:
    shell: int
    log_mass: float
    log_s_hat: float
    log_S_hat: float
    p_hat: float
    n_mc: int
    empty: bool = False


@dataclass
class ShellState:
    """Current point of a shell chain: flattened coordinates, allocations, log ratio."""

    gamma: np.ndarray
    extra: np.ndarray
    log_rho: float


@dataclass
class IidDraw:
    theta: np.ndarray
    alloc: np.ndarray
    gamma: np.ndarray
    shell: int
    regen_time: int
    residual_rejections: int
    proposals: int
    out_of_range: int
    draw_index: int = 0


@dataclass
class SampleSet:
    theta: np.ndarray
    alloc: np.ndarray
    gamma: np.ndarray
    shell: np.ndarray
    regen_time: np.ndarray
    residual_rejections: np.ndarray
    proposals: np.ndarray
    out_of_range: np.ndarray
    estimates: list = field(default_factory=list)
    schedule: ShellSchedule | None = None
    seed: int = 0

    @property
    def size(self) -> int:
        return self.theta.shape[0]

    def draw(self, k: int) -> IidDraw:
        return IidDraw(self.theta[k], self.alloc[k], self.gamma[k], int(self.shell[k]),
                       int(self.regen_time[k]), int(self.residual_rejections[k]),
                       int(self.proposals[k]), int(self.out_of_range[k]), k)


def minorization_constant(log_s: float, log_S: float, eta: float) -> float:
    """``exp(log_s - log_S) - eta``, or ``(1 - eta)`` times the ratio when that is not positive."""
    if not np.isfinite(log_s) or not np.isfinite(log_S):
        return 0.0
    ratio = math.exp(log_s - log_S)
    p = ratio - eta
    return p if p > 0 else ratio * (1.0 - eta)


# --------------------------------------------------------------------------- shell estimation

def estimate_shell(i: int, frame: EllipsoidFrame, schedule: ShellSchedule, target,
                   cfg: EngineConfig, rng: np.random.Generator) -> ShellEstimate:
    """Monte Carlo mass and weight-ratio extremes for shell ``i``."""
    if not 0 <= i < schedule.count:
        raise InvalidInputError(f"shell {i} outside schedule of {schedule.count}")
    gamma = sample_uniform_shell(frame, schedule, i, rng, cfg.n_mc)
    lr, _ = target.evaluate(gamma, rng)
    if not np.any(np.isfinite(lr)):
        return ShellEstimate(i, -np.inf, -np.inf, -np.inf, 0.0, cfg.n_mc, True)
    lo, hi = float(lr.min()), float(lr.max())
    log_mass = shell_log_volume(frame, schedule, i) + float(logsumexp(lr)) - math.log(cfg.n_mc)
    return ShellEstimate(i, log_mass, lo, hi, minorization_constant(lo, hi, cfg.eta), cfg.n_mc)


def _estimate_task(args):
    i, frame, schedule, target, cfg = args
    try:
        return estimate_shell(i, frame, schedule, target, cfg, stream(cfg.seed, _SHELL, i))
    except Exception as exc:
        raise EngineError(f"shell {i}: {exc}") from exc


def _run_tasks(fn, tasks, workers):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (8 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=chunk))


def estimate_shells(frame, schedule, target, cfg: EngineConfig, indices=None) -> list[ShellEstimate]:
    idx = range(schedule.count) if indices is None else indices
    return _run_tasks(_estimate_task, [(i, frame, schedule, target, cfg) for i in idx], cfg.workers)


def p_hat_stability(i, frame, schedule, target, cfg: EngineConfig) -> tuple[float, float]:
    """``p_hat`` for shell ``i`` at ``n_mc`` and at ``2 n_mc`` on a fresh stream.

    A large drop at the doubled size means the Monte Carlo extremes are not yet settled.
    """
    a = estimate_shell(i, frame, schedule, target, cfg, stream(cfg.seed, _SHELL, i))
    cfg2 = replace(cfg, n_mc=2 * cfg.n_mc)
    b = estimate_shell(i, frame, schedule, target, cfg2, stream(cfg.seed + 1, _SHELL, i))
    return a.p_hat, b.p_hat


# --------------------------------------------------------------------------- shell selection

def _log_cumulative(estimates) -> np.ndarray:
    lm = np.array([e.log_mass for e in estimates], dtype=float)
    return np.logaddexp.accumulate(lm)


def resolve_shell(cum: np.ndarray, u: float) -> int:
    """Index ``i`` with ``cum[i-1] <= log(u) + total < cum[i]``."""
    total = cum[-1]
    if not np.isfinite(total):
        raise EngineError("every shell is empty; nothing to select")
    t = math.log(u) + total if u > 0 else -np.inf
    return int(min(np.searchsorted(cum, t, side="right"), cum.size - 1))


def select_shell(estimates, rng: np.random.Generator | None = None, extend_callback=None,
                 u: float | None = None) -> int:
    """Pick a shell with probability proportional to its mass.

    When the last computed shell is hit and ``extend_callback`` is given, the
    callback returns the estimates for a doubled schedule and the same uniform
    is resolved again, until the pick is interior.
    """
    if u is None:
        u = float(rng.random())
    estimates = list(estimates)
    while True:
        i = resolve_shell(_log_cumulative(estimates), u)
        if i < len(estimates) - 1 or extend_callback is None:
            return i
        longer = extend_callback(estimates)
        if len(longer) <= len(estimates):
            return i
        estimates = list(longer)


# --------------------------------------------------------------------------- single-shell kernels

def initial_state(i, frame, schedule, target, rng) -> ShellState:
    """A draw from the regeneration measure: uniform on the shell, prior allocations."""
    g = sample_uniform_shell(frame, schedule, i, rng, 1)
    lr, ex = target.evaluate(g, rng)
    return ShellState(g[0], ex[0], float(lr[0]))


def mh_step(state: ShellState, i, frame, schedule, target, rng) -> tuple[ShellState, float, bool]:
    """Independence Metropolis-Hastings step with a uniform shell proposal."""
    prop = initial_state(i, frame, schedule, target, rng)
    dl = prop.log_rho - state.log_rho
    if np.isnan(dl):
        m = 0.0
    else:
        m = 1.0 if dl >= 0 else math.exp(dl)
    if rng.random() < m:
        return prop, m, True
    return state, m, False


def estimate_rejection_mass(state: ShellState, i, frame, schedule, target, rng, n: int = 1000) -> float:
    """Monte Carlo probability that one kernel step stays put."""
    g = sample_uniform_shell(frame, schedule, i, rng, n)
    lr, _ = target.evaluate(g, rng)
    with np.errstate(over="ignore", invalid="ignore"):
        m = np.minimum(1.0, np.exp(lr - state.log_rho))
    return float(1.0 - np.nan_to_num(m, nan=0.0).mean())


def residual_step(state: ShellState, i, p_hat, frame, schedule, target, rng,
                  faithful: bool = False, n_rhat: int = 1000) -> tuple[ShellState, int]:
    """One transition of the residual kernel by rejection against one kernel step.

    Returns the new state and the number of rejected kernel steps. The fast
    path uses the simplified acceptance ratios; ``faithful`` forms the ratio
    of residual to full kernel densities explicitly, with a Monte Carlo
    estimate of the atom mass at the current point.
    """
    if not 0 < p_hat < 1:
        raise EngineError(f"residual kernel needs 0 < p_hat < 1, got {p_hat}")
    log_q = -shell_log_volume(frame, schedule, i)
    rejections = 0
    while True:
        new, m, moved = mh_step(state, i, frame, schedule, target, rng)
        u = rng.random()
        if not faithful:
            ratio = (m - p_hat) / m if moved else 1.0
        elif moved:
            # continuous parts: P has density q G m, R has q G (m - p) / (1 - p)
            dens = math.exp(log_q + float(target.log_extra_density(new.gamma, new.extra)[0]))
            p_dens = dens * m
            r_dens = dens * max(m - p_hat, 0.0) / (1.0 - p_hat)
            ratio = (1.0 - p_hat) * r_dens / p_dens
        else:
            # atoms: P puts r(theta) on the current point, R puts r(theta) / (1 - p)
            r_hat = estimate_rejection_mass(state, i, frame, schedule, target, rng, n_rhat)
            ratio = 1.0 if r_hat <= 0 else (1.0 - p_hat) * (r_hat / (1.0 - p_hat)) / r_hat
        if u < ratio:
            return new, rejections
        rejections += 1


def _regen_time(p, eta, rng) -> int:
    # must stay the first use of the draw stream; planned_regen_times relies on it
    if p >= 1.0 - eta:
        return 1
    if p > 1e-12:
        return int(rng.geometric(p))
    # inverse CDF in floating point; integer geometric sampling overflows here
    with np.errstate(divide="ignore", over="ignore"):
        t = np.ceil(np.log1p(-rng.random()) / np.log1p(-p))
    return int(t) if t < 2.0 ** 62 else float(t)


def planned_regen_times(picks, estimates, cfg: EngineConfig) -> np.ndarray:
    """Regeneration times the draws of a job will use, known before any simulation."""
    out = np.ones(len(picks))
    for k, i in enumerate(picks):
        p = estimates[i].p_hat
        if p > 0:
            out[k] = _regen_time(p, cfg.eta, stream(cfg.seed, _DRAW, k))
    return out


def perfect_draw(i: int, est: ShellEstimate, frame: EllipsoidFrame, schedule: ShellSchedule,
                 target, cfg: EngineConfig, rng: np.random.Generator,
                 deadline: float | None = None) -> IidDraw:
    """Exact draw from the posterior restricted to shell ``i``.

    With ``T ~ Geometric(p_hat)`` on ``{1, 2, ...}`` the start is a draw from
    the regeneration measure and ``T - 1`` residual transitions follow.
    """
    if est.empty:
        raise EngineError(f"shell {i} is empty")
    p = est.p_hat
    if not p > 0:
        raise EngineError(f"shell {i}: minorization constant is zero "
                          f"(log weight ratio spans {est.log_S_hat - est.log_s_hat:.4g} nats)")
    T = _regen_time(p, cfg.eta, rng)
    state = initial_state(i, frame, schedule, target, rng)
    need = T - 1
    if need > cfg.max_steps:
        raise EngineError(f"shell {i}: regeneration time {T} exceeds the step budget "
                          f"{cfg.max_steps} (p_hat = {p:.3g})")
    steps = used = rej = oor = 0
    cur_g, cur_x, cur_lr = state.gamma, state.extra, state.log_rho
    while steps < need:
        if deadline is not None and time.time() > deadline:
            raise EngineError(f"shell {i}: time budget exhausted after {steps} of {need} steps")
        B = int(min(cfg.block, max(64, 1.25 * (need - steps) + 16)))
        G = sample_uniform_shell(frame, schedule, i, rng, B)
        lr, ex = target.evaluate(G, rng)
        u = rng.random((2, B))
        k, cur_lr, st, n_used, n_rej = kernels.imh_scan(lr, u[0], u[1], cur_lr, p, need - steps)
        if k >= 0:
            cur_g, cur_x = G[k], ex[k]
        steps += st
        used += n_used
        rej += n_rej
        seen = lr[:n_used]
        oor += int(np.count_nonzero((seen < est.log_s_hat) | (seen > est.log_S_hat)))
    theta = h_forward(cur_g, target.b)
    return IidDraw(theta, np.asarray(cur_x, dtype=np.int64), np.asarray(cur_g), i, T, rej, used, oor)


def _draw_task(args):
    k, i, est, frame, schedule, target, cfg, deadline = args
    try:
        d = perfect_draw(i, est, frame, schedule, target, cfg, stream(cfg.seed, _DRAW, k), deadline)
    except Exception as exc:
        raise EngineError(f"draw {k} (shell {i}): {exc}") from exc
    d.draw_index = k
    return d


# --------------------------------------------------------------------------- orchestration

def sample_iid(target, frame: EllipsoidFrame, cfg: EngineConfig, schedule: ShellSchedule | None = None,
               estimates: list | None = None, time_budget: float | None = None) -> SampleSet:
    """``cfg.draws`` independent exact draws.

    Draw ``k`` takes its selection uniform and its chain randomness from
    streams keyed by ``k``; shell ``i`` is estimated on a stream keyed by
    ``i``. Extending the schedule therefore never perturbs earlier shells.
    """
    schedule = cfg.schedule() if schedule is None else schedule
    deadline = None if time_budget is None else time.time() + time_budget
    if estimates is None:
        estimates = estimate_shells(frame, schedule, target, cfg)
    estimates = list(estimates)
    if len(estimates) != schedule.count:
        raise InvalidInputError("need one estimate per shell")
    us = np.array([stream(cfg.seed, _SELECT, k).random() for k in range(cfg.draws)])
    while True:
        cum = _log_cumulative(estimates)
        picks = np.array([resolve_shell(cum, u) for u in us], dtype=np.int64)
        if not cfg.lazy or picks.max() < schedule.count - 1:
            break
        if schedule.count * 2 > cfg.max_shells:
            raise EngineError(f"shell schedule would exceed {cfg.max_shells} shells")
        old = schedule.count
        schedule = schedule.extended(2 * old)
        estimates += estimate_shells(frame, schedule, target, cfg, range(old, schedule.count))
    if cfg.max_total_steps is not None:
        need = float((planned_regen_times(picks, estimates, cfg) - 1).sum())
        if need > cfg.max_total_steps:
            raise EngineError(f"job needs {need:.4g} residual steps, above the budget of "
                              f"{cfg.max_total_steps}")
    tasks = [(k, int(picks[k]), estimates[picks[k]], frame, schedule, target, cfg, deadline)
             for k in range(cfg.draws)]
    draws = _run_tasks(_draw_task, tasks, cfg.workers)
    return SampleSet(
        theta=np.array([d.theta for d in draws]),
        alloc=np.array([d.alloc for d in draws], dtype=np.int64).reshape(cfg.draws, target.n_extra),
        gamma=np.array([d.gamma for d in draws]),
        shell=np.array([d.shell for d in draws], dtype=np.int64),
        regen_time=np.array([d.regen_time for d in draws], dtype=np.int64),
        residual_rejections=np.array([d.residual_rejections for d in draws], dtype=np.int64),
        proposals=np.array([d.proposals for d in draws], dtype=np.int64),
        out_of_range=np.array([d.out_of_range for d in draws], dtype=np.int64),
        estimates=estimates, schedule=schedule, seed=cfg.seed)


def expected_cost(estimates) -> float:
    """Mass-weighted mean of ``1 / p_hat``: expected kernel steps per draw."""
    lm = np.array([e.log_mass for e in estimates])
    w = np.exp(lm - logsumexp(lm))
    p = np.array([e.p_hat for e in estimates])
    with np.errstate(divide="ignore", over="ignore"):
        inv = np.where(w > 0, 1.0 / p, 0.0)
    return float(w @ inv)


def check_in_shell(frame, schedule, sample: SampleSet) -> bool:
    r = mahalanobis(frame, sample.gamma)
    return bool(np.all(shell_index(schedule, r) == sample.shell))
