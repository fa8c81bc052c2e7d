"""Special functions, samplers, quadrature and series helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate as _spi


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class NumericError(ArithmeticError):
    """A numerical procedure failed to converge.

    ``partial`` carries the best estimate reached before giving up.
    """

    def __init__(self, message: str, partial: float = math.nan):
        super().__init__(message)
        self.partial = partial


# ---------------------------------------------------------------------------
# normal distribution

# Acklam's rational approximation, relative error ~1.2e-9 before refinement.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def _acklam(p: float) -> float:
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        return ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
                / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    if p > 1.0 - _P_LOW:
        q = math.sqrt(-2.0 * math.log1p(-p))
        return -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5])
                 / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    q = p - 0.5
    s = q * q
    return ((((((_A[0] * s + _A[1]) * s + _A[2]) * s + _A[3]) * s + _A[4]) * s + _A[5]) * q
            / (((((_B[0] * s + _B[1]) * s + _B[2]) * s + _B[3]) * s + _B[4]) * s + 1.0))


def inverse_normal_cdf(p: float) -> float:
    """Quantile of the standard normal distribution.

    Rational first guess refined by a Halley step on ``erfc``. Accurate to
    ~1e-14 in ``z`` over ``[1e-300, 1 - 1e-16]``.
    """
    p = float(p)
    if not 0.0 < p < 1.0:
        raise DomainError(f"inverse_normal_cdf needs 0 < p < 1, got {p!r}")
    z = _acklam(p)
    # refine against the tail that is representable without cancellation
    if p < 0.5:
        e = normal_cdf(z) - p
    else:
        # 1 - p is exact for p >= 0.5
        e = (1.0 - p) - 0.5 * math.erfc(z / math.sqrt(2.0))
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * z * z)
    return z - u / (1.0 + 0.5 * z * u)


# ---------------------------------------------------------------------------
# random streams


class RngStream:
    """Reproducible random stream keyed by ``(seed, stream_id)``.

    Backed by the counter-based Philox generator; distinct stream ids give
    independent streams by construction.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise DomainError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.Philox(ss))

    def spawn(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def sample_exponential(rng: RngStream, rate: float, size=None):
    if not rate > 0:
        raise DomainError(f"exponential rate must be positive, got {rate!r}")
    return rng.generator.exponential(1.0 / rate, size)


def sample_noncentral_chisq(rng: RngStream, dof: int, noncentrality: float, size=None):
    """Non-central chi-square draws built from squared shifted normals.

    The whole noncentrality is carried by the first component; the law only
    depends on the sum of squared means.
    """
    if int(dof) != dof or dof < 1:
        raise DomainError(f"dof must be a positive integer, got {dof!r}")
    if noncentrality < 0:
        raise DomainError(f"noncentrality must be >= 0, got {noncentrality!r}")
    dof = int(dof)
    shape = () if size is None else (size if isinstance(size, tuple) else (int(size),))
    z = rng.generator.standard_normal(shape + (dof,))
    z[..., 0] += math.sqrt(noncentrality)
    return np.sum(z * z, axis=-1)


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class Quadrature:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_subdivisions: int = 200
    # semi-infinite ranges stop where exp(-decay * x) drops below this
    envelope_floor: float = 1e-14


def integrate(f: Callable[[float], float], lower: float, upper: float,
              q: Quadrature = Quadrature(), decay_rate: float | None = None,
              points=None) -> float:
    """Adaptive integral of ``f`` over ``[lower, upper]``.

    ``upper`` may be ``math.inf``. When ``decay_rate`` is given the range is
    cut where ``exp(-decay_rate * (x - lower))`` falls below
    ``q.envelope_floor``; otherwise the infinite range is mapped to a finite
    one by substitution.
    """
    if math.isinf(upper) and decay_rate is not None:
        upper = lower + math.log(1.0 / q.envelope_floor) / decay_rate
    kw = dict(epsabs=q.abs_tol, epsrel=q.rel_tol, limit=q.max_subdivisions,
              full_output=1)
    if points is not None and not math.isinf(upper):
        pts = [p for p in points if lower < p < upper]
        if pts:
            kw["points"] = pts
    res = _spi.quad(f, lower, upper, **kw)
    value, err = res[0], res[1]
    if len(res) > 3 and err > max(q.rel_tol * abs(value), q.abs_tol):
        raise NumericError(f"quadrature did not converge: {res[3]}", partial=value)
    return value


# ---------------------------------------------------------------------------
# series


def truncate_geometric_series(term: Callable[[int], float],
                              tail_bound: Callable[[int], float],
                              eps: float = 1e-10, start: int = 1,
                              hard_cap: int = 10**7) -> tuple[float, int]:
    """Sum ``term(k)`` from ``start`` until ``tail_bound(k) <= eps``.

    Returns the partial sum and the last index included.
    """
    total = 0.0
    comp = 0.0
    k = start
    while k <= hard_cap:
        # Kahan summation keeps long tails honest
        y = term(k) - comp
        t = total + y
        comp = (t - total) - y
        total = t
        if tail_bound(k) <= eps:
            return total, k
        k += 1
    raise NumericError(f"series tail still above {eps} after {hard_cap} terms", partial=total)
