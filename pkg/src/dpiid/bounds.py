"""L1 truncation-error bounds for the bounded-component DP mixture."""

from __future__ import annotations

import math
from dataclasses import dataclass

import mpmath

from .errors import InvalidInputError, NumericError

# relative cancellation above which the float sum is redone in extended precision
_CANCEL_LIMIT = 1e8


def _check(M, N, alpha, name="M"):
    if int(M) != M or M < 1:
        raise InvalidInputError(f"{name} must be a positive integer, got {M}")
    if int(N) != N or N < 2:
        raise InvalidInputError(f"N must be an integer >= 2, got {N}")
    if not (math.isfinite(alpha) and alpha > 0):
        raise InvalidInputError(f"alpha must be positive, got {alpha}")


def approx_bound(M: int, N: int, alpha: float) -> float:
    _check(M, N, alpha)
    return 4.0 * M * math.exp(-(N - 1) / alpha)


def traditional_bound(n: int, N: int, alpha: float) -> float:
    """Classical truncation bound, which grows with the sample size ``n``."""
    _check(n, N, alpha, name="n")
    return 4.0 * n * math.exp(-(N - 1) / alpha)


def _tail_terms(M, N, alpha):
    # 1 - E[(sum_{i<N} w_i)^M] = sum_{k>=1} (-1)^{k+1} C(M,k) (alpha/(alpha+k))^{N-1}
    out = []
    for k in range(1, M + 1):
        lt = math.lgamma(M + 1) - math.lgamma(k + 1) - math.lgamma(M - k + 1) \
            + (N - 1) * (math.log(alpha) - math.log(alpha + k))
        out.append((1.0 if k % 2 else -1.0) * math.exp(lt))
    return out


def _tail_mp(M, N, alpha, dps):
    with mpmath.workdps(dps):
        a = mpmath.mpf(alpha)
        tot = mpmath.mpf(0)
        for k in range(1, M + 1):
            term = mpmath.binomial(M, k) * (a / (a + k)) ** (N - 1)
            tot += term if k % 2 else -term
        return tot


def exact_bound(M: int, N: int, alpha: float) -> float:
    """``2 [1 - E{(sum_{i<N} w_i)^M}]`` via the binomial expansion over sticks."""
    _check(M, N, alpha)
    terms = _tail_terms(M, N, alpha)
    tail = math.fsum(terms)
    scale = math.fsum(abs(t) for t in terms)
    if scale > 0 and (tail <= 0 or scale / tail > _CANCEL_LIMIT):
        for dps in (80, 200, 500):
            t = _tail_mp(M, N, alpha, dps)
            # need enough digits left after cancellation
            if t > 0 and mpmath.log10(scale / t) < dps - 20:
                tail = float(t)
                break
        else:
            raise NumericError(f"bound did not stabilise for M={M}, N={N}, alpha={alpha}")
    val = 2.0 * tail
    return min(max(val, 0.0), 2.0)


@dataclass(frozen=True)
class BoundReport:
    M: int
    N: int
    alpha: float
    exact_bound: float
    approx_bound: float
    traditional_bound_n: float | None = None
    n: int | None = None


def bound_report(M: int, N: int, alpha: float, n: int | None = None) -> BoundReport:
    trad = traditional_bound(n, N, alpha) if n is not None else None
    return BoundReport(M, N, alpha, exact_bound(M, N, alpha), approx_bound(M, N, alpha), trad, n)
