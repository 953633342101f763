"""Truncated DP mixture of normals in unconstrained coordinates.

A parameter state is a flat float vector laid out as::

    [alpha_tilde, nu_1..nu_N, lam_1..lam_N, zeta_1..zeta_{N-1}, psi_1..psi_M]

with ``alpha = exp(alpha_tilde)``, atom precision ``tau_i = exp(lam_i)``, stick
fractions ``V_i = logistic(zeta_i)`` and (random-weight mode only) component
weights ``softmax(psi)``. Allocations are 0-based atom indices, one per mixture
component; component ``j`` uses atom ``alloc[j]``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import InvalidInputError


class WeightMode(str, enum.Enum):
    FIXED_EQUAL = "fixed"
    RANDOM_PSI = "random_psi"


@dataclass(frozen=True)
class HyperParams:
    M: int
    N: int
    s: float
    S: float
    nu0: float
    c: float
    a_alpha: float
    b_alpha: float
    weight_mode: WeightMode = WeightMode.FIXED_EQUAL
    # normal prior on psi in random-weight mode
    psi_mean: float = 0.0
    psi_sd: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "weight_mode", WeightMode(self.weight_mode))
        if int(self.M) != self.M or self.M < 1:
            raise InvalidInputError(f"M must be a positive integer, got {self.M}")
        if int(self.N) != self.N or self.N < 2:
            raise InvalidInputError(f"N must be an integer >= 2, got {self.N}")
        for name in ("s", "S", "c", "a_alpha", "b_alpha", "psi_sd"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvalidInputError(f"{name} must be positive, got {v}")
        if not np.isfinite(self.nu0):
            raise InvalidInputError("nu0 must be finite")

    @property
    def mode_code(self) -> int:
        return 0 if self.weight_mode is WeightMode.FIXED_EQUAL else 1

    @property
    def dim(self) -> int:
        return 3 * self.N + (self.M if self.mode_code else 0)

    def packed(self) -> np.ndarray:
        return np.array([self.s, self.S, self.nu0, self.c, self.a_alpha,
                         self.b_alpha, self.psi_mean, self.psi_sd], dtype=float)

    # slices into the flat parameter vector
    @property
    def sl_nu(self) -> slice:
        return slice(1, 1 + self.N)

    @property
    def sl_lam(self) -> slice:
        return slice(1 + self.N, 1 + 2 * self.N)

    @property
    def sl_zeta(self) -> slice:
        return slice(1 + 2 * self.N, 3 * self.N)

    @property
    def sl_psi(self) -> slice:
        return slice(3 * self.N, self.dim)

    def param_names(self) -> list[str]:
        names = ["alpha_tilde"]
        names += [f"nu_{i}" for i in range(1, self.N + 1)]
        names += [f"lambda_tilde_{i}" for i in range(1, self.N + 1)]
        names += [f"zeta_{i}" for i in range(1, self.N)]
        if self.mode_code:
            names += [f"psi_{j}" for j in range(1, self.M + 1)]
        return names


class Atom(NamedTuple):
    nu: float
    lambda_tilde: float


@dataclass
class ThetaAux:
    """The continuous block: log concentration, atoms, logistic sticks, psi."""

    alpha_tilde: float
    nu: np.ndarray
    lambda_tilde: np.ndarray
    zeta: np.ndarray
    psi: np.ndarray | None = None

    @property
    def atoms(self) -> list[Atom]:
        return [Atom(float(a), float(b)) for a, b in zip(self.nu, self.lambda_tilde)]

    def to_vector(self) -> np.ndarray:
        parts = [[self.alpha_tilde], self.nu, self.lambda_tilde, self.zeta]
        if self.psi is not None:
            parts.append(self.psi)
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    @classmethod
    def from_vector(cls, vec, hp: HyperParams) -> "ThetaAux":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (hp.dim,):
            raise InvalidInputError(f"expected vector of length {hp.dim}, got {vec.shape}")
        return cls(float(vec[0]), vec[hp.sl_nu].copy(), vec[hp.sl_lam].copy(),
                   vec[hp.sl_zeta].copy(), vec[hp.sl_psi].copy() if hp.mode_code else None)

    def check(self, hp: HyperParams) -> np.ndarray:
        """Validate against ``hp`` and return the flat vector."""
        if (self.psi is not None) != bool(hp.mode_code):
            raise InvalidInputError("psi block must be present exactly in random-weight mode")
        if len(self.nu) != hp.N or len(self.lambda_tilde) != hp.N or len(self.zeta) != hp.N - 1:
            raise InvalidInputError("atom / stick block sizes do not match N")
        if self.psi is not None and len(self.psi) != hp.M:
            raise InvalidInputError("psi must have length M")
        vec = self.to_vector()
        if not np.all(np.isfinite(vec)):
            raise InvalidInputError("parameter state contains non-finite entries")
        return vec


@dataclass
class Theta:
    aux: ThetaAux
    alloc: np.ndarray

    def xi(self) -> np.ndarray:
        """Component parameters (nu, lambda_tilde) materialised from the allocation, shape (M, 2)."""
        return np.column_stack([self.aux.nu[self.alloc], self.aux.lambda_tilde[self.alloc]])


def _check_alloc(alloc, hp: HyperParams) -> np.ndarray:
    alloc = np.asarray(alloc, dtype=np.int64)
    if alloc.shape != (hp.M,) or alloc.min() < 0 or alloc.max() >= hp.N:
        raise InvalidInputError(f"allocation must hold {hp.M} indices in [0, {hp.N})")
    return alloc


def stick_weights(zeta) -> np.ndarray:
    """Truncated stick-breaking weights from logistic sticks (V_N fixed to 1)."""
    zeta = np.asarray(zeta, dtype=float)
    if zeta.ndim != 1 or zeta.size < 1:
        raise InvalidInputError("zeta must be a non-empty 1-d array (N >= 2)")
    if not np.all(np.isfinite(zeta)):
        raise InvalidInputError("zeta contains non-finite entries")
    return np.exp(kernels.log_stick_weights(zeta[None, :])[0])


def log_prior_aux(aux: ThetaAux, hp: HyperParams) -> float:
    vec = aux.check(hp)
    return float(kernels.log_prior_batch(vec[None, :], hp.N, hp.M, hp.mode_code, hp.packed())[0])


def component_weights(aux: ThetaAux, hp: HyperParams) -> np.ndarray:
    if hp.mode_code == 0:
        return np.full(hp.M, 1.0 / hp.M)
    p = np.exp(aux.psi - aux.psi.max())
    return p / p.sum()


def log_likelihood(y, theta: Theta, hp: HyperParams) -> float:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise InvalidInputError("data must be a non-empty 1-d array")
    vec = theta.aux.check(hp)
    alloc = _check_alloc(theta.alloc, hp)
    return float(kernels.log_lik_batch(vec[None, :], alloc[None, :], y, hp.N, hp.M, hp.mode_code)[0])


def log_weight_ratio(theta: Theta, y, hp: HyperParams) -> float:
    """Unnormalised posterior divided by the prior mass of the allocations."""
    return log_likelihood(y, theta, hp) + log_prior_aux(theta.aux, hp)


def log_unnorm_posterior(theta: Theta, y, hp: HyperParams) -> float:
    lw = np.log(stick_weights(theta.aux.zeta))
    return log_weight_ratio(theta, y, hp) + float(lw[np.asarray(theta.alloc)].sum())


def sample_allocations(aux: ThetaAux, hp: HyperParams, rng: np.random.Generator) -> np.ndarray:
    vec = aux.check(hp)
    u = rng.random((1, hp.M))
    return kernels.sample_alloc_batch(vec[None, :], u, hp.N)[0]


# vectorised forms used by the samplers

def log_weight_ratio_rows(thetas, allocs, y, hp: HyperParams) -> np.ndarray:
    return kernels.log_weight_ratio_batch(np.ascontiguousarray(thetas, dtype=float),
                                          np.ascontiguousarray(allocs, dtype=np.int64),
                                          np.asarray(y, dtype=float), hp.N, hp.M,
                                          hp.mode_code, hp.packed())


def sample_allocation_rows(thetas, hp: HyperParams, rng: np.random.Generator) -> np.ndarray:
    thetas = np.ascontiguousarray(thetas, dtype=float)
    u = rng.random((thetas.shape[0], hp.M))
    return kernels.sample_alloc_batch(thetas, u, hp.N)


def prior_draws(hp: HyperParams, size: int, rng: np.random.Generator) -> np.ndarray:
    """Exact draws of the continuous block from its prior, shape (size, dim)."""
    out = np.empty((size, hp.dim))
    alpha = rng.gamma(hp.a_alpha, 1.0 / hp.b_alpha, size)
    out[:, 0] = np.log(alpha)
    tau = rng.gamma(hp.s / 2, 2.0 / hp.S, (size, hp.N))
    out[:, hp.sl_lam] = np.log(tau)
    out[:, hp.sl_nu] = hp.nu0 + rng.standard_normal((size, hp.N)) * np.sqrt(hp.c / tau)
    v = rng.beta(1.0, alpha[:, None] * np.ones((1, hp.N - 1)))
    v = np.clip(v, 1e-300, 1 - 1e-16)
    out[:, hp.sl_zeta] = np.log(v) - np.log1p(-v)
    if hp.mode_code:
        out[:, hp.sl_psi] = hp.psi_mean + hp.psi_sd * rng.standard_normal((size, hp.M))
    return out
