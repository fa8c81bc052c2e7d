"""Closed-form propagation-speed pipeline.

Cluster sizes are geometric, gaps are exponential, and the speed is a
renewal-reward ratio of forwarded distance over blocking plus transmission
time. Every infinite sum over cluster sizes is cut where ``P(N > k)`` drops
below ``eps``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from . import channel
from .channel import BeyondCapWarning, RangeModel, inv_gain_max, min_bridge_cluster
from .numerics import DomainError, NumericError, Quadrature, integrate

SERIES_EPS = 1e-10
# westbound road scanned for a bridging cluster before the search is cut (m)
DEFAULT_BRIDGE_HORIZON = 1000.0


class Regime(str, Enum):
    NORMAL = "normal"
    # blocking integral past the bridge-search horizon dominates
    HORIZON_LIMITED = "horizon-limited"
    FULLY_CONNECTED = "fully-connected"
    # blocking integral has no finite value without a horizon
    DIVERGENT = "divergent"
    OUTAGE_SATURATED = "outage-saturated"


class DegenerateRegime(ArithmeticError):
    def __init__(self, message: str, regime: Regime):
        super().__init__(message)
        self.regime = regime


class UnbridgeableGap(DomainError):
    """No tabulated westbound cluster is large enough to close the gap."""


@dataclass(frozen=True)
class TrafficConfig:
    lam: float
    v: float

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError(f"lambda must be > 0, got {self.lam}")
        if not self.v > 0:
            raise DomainError(f"v must be > 0, got {self.v}")


@dataclass(frozen=True)
class ProtocolConfig:
    tau: float = 0.01

    def __post_init__(self):
        if not self.tau > 0:
            raise DomainError(f"tau must be > 0, got {self.tau}")


@dataclass(frozen=True)
class IpsBreakdown:
    e_d: float
    e_tw: float
    e_tt: float
    p_b: float
    e_ge: float
    v_p: float
    v_p_ground: float
    regime: Regime = Regime.NORMAL

    def as_dict(self) -> dict:
        d = asdict(self)
        d["regime"] = self.regime.value
        return d


# ---------------------------------------------------------------------------
# cluster sizes


def cluster_size_pmf(lam: float, r: float, k):
    k_arr = np.asarray(k)
    if np.any(k_arr < 1):
        raise DomainError("cluster size must be >= 1")
    p = math.exp(-lam * r)
    out = p * (1.0 - p) ** (k_arr - 1)
    return float(out) if out.ndim == 0 else out


def cluster_size_cdf(lam: float, r: float, n):
    n_arr = np.asarray(n)
    out = 1.0 - (-math.expm1(-lam * r)) ** n_arr
    out = np.where(n_arr <= 0, 0.0, out)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class _Support:
    k: np.ndarray
    pmf: np.ndarray
    F: np.ndarray
    tail: float  # P(N > k_max)


def _support(model: RangeModel, lam: float, eps: float = SERIES_EPS) -> _Support:
    q = -math.expm1(-lam * model.r)
    # log q through log1p stays finite when q rounds to one
    log_q = math.log1p(-math.exp(-lam * model.r))
    k_max = max(1, math.ceil(math.log(eps) / log_q)) if log_q < 0 else 1
    if k_max > model.cap:
        warnings.warn(f"cluster-size tail P(N>{model.cap}) = {q**model.cap:.2e} "
                      "exceeds the series tolerance", BeyondCapWarning, stacklevel=3)
        k = np.arange(1, model.cap + 1)
        pmf = cluster_size_pmf(lam, model.r, k)
        # sizes beyond the table are lumped into one atom at the capped gain
        tail = q**model.cap
        return _Support(np.append(k, model.cap), np.append(pmf, tail),
                        np.asarray(model.F(np.append(k, model.cap))), 0.0)
    k = np.arange(1, k_max + 1)
    return _Support(k, cluster_size_pmf(lam, model.r, k), np.asarray(model.F(k)), q**k_max)


# ---------------------------------------------------------------------------
# bridging distance


def bridge_laplace(model: RangeModel, traffic: TrafficConfig, theta: float,
                   gap: float, n_rx: int) -> float:
    """Laplace transform ``E exp(-theta B)`` of the road searched for a bridging cluster."""
    if theta < 0:
        raise DomainError("theta must be >= 0")
    n0 = min_bridge_cluster(model, n_rx, gap)
    if model.beyond_cap(n0):
        raise UnbridgeableGap(f"gap {gap} m needs a westbound cluster above {model.cap}")
    lam = traffic.lam
    below = cluster_size_cdf(lam, model.r, n0)
    return (1.0 - below) / (1.0 - below * lam / (lam + theta))


def expected_bridge_distance(model: RangeModel, traffic: TrafficConfig, gap: float) -> float:
    """Mean westbound road length scanned until a cluster can close ``gap``.

    Mixes over the receiving cluster size; receivers that reach across the
    gap on their own contribute nothing.
    """
    if gap < 0:
        raise DomainError("gap must be >= 0")
    lam, r = traffic.lam, model.r
    k0 = inv_gain_max(model, gap / r)
    if k0 == 0:
        return 0.0
    log_q = math.log(-math.expm1(-lam * r))
    sizes = [(k, cluster_size_pmf(lam, r, k)) for k in range(1, k0 + 1)]
    capped = False
    if k0 == model.cap:
        # receivers beyond the table share the capped gain and cannot reach either
        sizes.append((model.cap, math.exp(model.cap * log_q)))
        capped = True
    total = 0.0
    for k, w in sizes:
        g = min_bridge_cluster(model, k, gap)
        if g == 0:
            continue
        if model.beyond_cap(g):
            capped = True
            g = model.cap
        expo = -g * log_q
        # (q^-G - 1) overflows long before the weight can cancel it
        total += math.inf if expo > 700 else w / lam * math.expm1(expo)
    if capped:
        warnings.warn(f"gap {gap:.1f} m reaches past the gain table; capped sizes used",
                      BeyondCapWarning, stacklevel=2)
    return total


# ---------------------------------------------------------------------------
# unbridged gap


def unbridged_gap_pdf(model: RangeModel, traffic: TrafficConfig, x, eps: float = SERIES_EPS):
    s = _support(model, traffic.lam, eps)
    lam = traffic.lam
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    thr = model.r * s.F
    with np.errstate(over="ignore"):
        dens = np.where(xs[:, None] >= thr[None, :],
                        s.pmf[None, :] * lam * np.exp(-lam * (xs[:, None] - thr[None, :])), 0.0)
    out = dens.sum(axis=1)
    return float(out[0]) if np.ndim(x) == 0 else out


def unbridged_gap_sf(model: RangeModel, traffic: TrafficConfig, x, eps: float = SERIES_EPS):
    """Survival function of the unbridged-gap mixture."""
    s = _support(model, traffic.lam, eps)
    lam = traffic.lam
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    thr = model.r * s.F
    with np.errstate(over="ignore"):
        sf = np.where(xs[:, None] >= thr[None, :],
                      s.pmf[None, :] * np.exp(-lam * (xs[:, None] - thr[None, :])), s.pmf[None, :])
    out = sf.sum(axis=1) / s.pmf.sum()
    return float(out[0]) if np.ndim(x) == 0 else out


def expected_unbridged_gap(model: RangeModel, traffic: TrafficConfig,
                           eps: float = SERIES_EPS, check: bool = True) -> float:
    """Mean unbridged gap, computed term by term as printed and in simplified form.

    The printed terms integrate ``x lam exp(-lam x)`` beyond ``r F(k)``; the
    simplified form is ``sum P_N(k) (r F(k) + 1/lam)``.
    """
    s = _support(model, traffic.lam, eps)
    lam, r = traffic.lam, model.r
    simple = float(np.sum(s.pmf * (r * s.F + 1.0 / lam)))
    if not check:
        return simple
    printed = 0.0
    quad = Quadrature(rel_tol=1e-12, abs_tol=0.0)
    for w, f in zip(s.pmf, s.F):
        a = r * f
        # conditional mean of the gap beyond a, i.e. int x lam e^{-lam x} / e^{-lam a}
        num = integrate(lambda x: x * lam * math.exp(-lam * (x - a)), a, math.inf, quad,
                        decay_rate=lam)
        printed += w * num
    if abs(printed - simple) > 1e-9 * abs(simple):
        raise NumericError(f"unbridged-gap forms disagree: {printed} vs {simple}", partial=simple)
    return simple


# ---------------------------------------------------------------------------
# blocking time


def _mean_search(model: RangeModel, lam: float, horizon: float | None) -> np.ndarray:
    """Mean westbound road scanned for a cluster larger than ``n``, for ``n = 1..cap``.

    The scan length is zero with probability ``p = q^n`` and otherwise
    exponential with rate ``lam p``; a horizon ``H`` replaces it by
    ``E min(B, H)``.
    """
    q = -math.expm1(-lam * model.r)
    n = np.arange(1, model.cap + 1)
    with np.errstate(over="ignore"):
        if horizon is None:
            return np.expm1(-n * math.log(q)) / lam
        p = q**n
        rate = lam * p
        with np.errstate(divide="ignore", invalid="ignore"):
            cut = (1 - p) * -np.expm1(-rate * horizon) / rate
    return np.where(rate * horizon < 1e-12, (1 - p) * horizon, cut)


def _blocking_integral(model: RangeModel, traffic: TrafficConfig, eps: float,
                       horizon: float | None) -> tuple[float, float]:
    """``int E(B(x)) p_e(x) dx`` by exact decomposition into constant-``G`` strips.

    For a receiving cluster of size ``k`` the required westbound size is
    ``n`` on the strip ``(r(F(k) + F(n-1)), r(F(k) + F(n))]``. Returns the
    integral and the part from strips whose mean search reached half the
    horizon (zero without a horizon).
    """
    s = _support(model, traffic.lam, eps)
    lam, r = traffic.lam, model.r
    thr = r * s.F
    # survival of the unbridged-gap mixture through cumulative sums
    w = s.pmf * np.exp(lam * thr)
    cum_w = np.concatenate([[0.0], np.cumsum(w)])
    cum_p = np.concatenate([[0.0], np.cumsum(s.pmf)])
    x_end = thr[0] + math.log(1.0 / Quadrature().envelope_floor) / lam

    def sf(x):
        j = np.searchsorted(thr, x, side="right")
        return (cum_p[-1] - cum_p[j]) + np.exp(-lam * np.minimum(x, x_end)) * cum_w[j]

    search = _mean_search(model, lam, horizon)
    # the last entry stands for every size beyond the table
    search = np.append(search, search[-1])
    near = search >= 0.5 * horizon if horizon is not None else np.zeros(search.size, bool)
    table = np.append(model.gain_table, math.inf)
    total = 0.0
    at_horizon = 0.0
    with np.errstate(invalid="ignore", over="ignore"):
        for idx in range(int(np.searchsorted(thr, x_end))):
            edges = r * (s.F[idx] + table)
            keep = edges[:-1] < x_end
            mass = sf(edges[:-1][keep]) - sf(np.minimum(edges[1:][keep], x_end))
            contrib = np.where(mass > 0, search[keep] * mass, 0.0)
            total += s.pmf[idx] * float(contrib.sum())
            at_horizon += s.pmf[idx] * float(contrib[near[keep]].sum())
    return float(total), float(at_horizon)


def expected_blocking_time(model: RangeModel, traffic: TrafficConfig,
                           eps: float = SERIES_EPS,
                           horizon: float | None = DEFAULT_BRIDGE_HORIZON) -> float:
    """Mean wait at an unbridged gap until opposing traffic closes it.

    ``horizon=None`` evaluates the search term without a cut; it grows
    without bound in most regimes because the required westbound cluster
    size rises quickly with the gap, and then ``NumericError`` is raised.
    """
    integral, _ = _blocking_integral(model, traffic, eps, horizon)
    e_ge = expected_unbridged_gap(model, traffic, eps, check=False)
    e_tw = (e_ge + 1.0 / traffic.lam + integral) / (2.0 * traffic.v)
    if not math.isfinite(e_tw):
        raise NumericError("bridge-search term diverges; set a horizon", partial=math.inf)
    return e_tw


# ---------------------------------------------------------------------------
# forwarding distance


def bridge_probability(model: RangeModel, traffic: TrafficConfig, eps: float = SERIES_EPS) -> float:
    """Probability a gap is crossed without waiting, half one-hop and half two-hop.

    The double sum factorises because its exponential splits over the two
    cluster sizes.
    """
    s = _support(model, traffic.lam, eps)
    m = float(np.sum(s.pmf))
    S = float(np.sum(s.pmf * np.exp(-traffic.lam * model.r * s.F)))
    return 0.5 * (m - S) + 0.5 * (m * m - S * S)


def expected_forward_distance(model: RangeModel, traffic: TrafficConfig,
                              eps: float = SERIES_EPS) -> float:
    p_b = bridge_probability(model, traffic, eps)
    if p_b >= 1.0:
        raise DegenerateRegime("every gap is bridged; forwarding never blocks",
                               Regime.FULLY_CONNECTED)
    return 1.0 / (traffic.lam * (1.0 - p_b))


# ---------------------------------------------------------------------------
# transmission time

_GL_X, _GL_W = np.polynomial.legendre.leggauss(96)


def mean_outage_given_size(model: RangeModel, traffic: TrafficConfig, k):
    """Outage averaged over link distances ``I ~ Exp(lam)`` cut to ``[0, r F(k)]``."""
    lam = traffic.lam
    k = np.atleast_1d(k)
    R = model.r * np.asarray(model.F(k))
    # Gauss-Legendre nodes mapped to [0, R] per size
    x = 0.5 * R[:, None] * (_GL_X[None, :] + 1.0)
    w = 0.5 * R[:, None] * _GL_W[None, :]
    dens = lam * np.exp(-lam * x) / -np.expm1(-lam * R)[:, None]
    if model.cooperative:
        po = np.vstack([channel.analytic_outage(model.config, x[i], int(n), 2)
                        for i, n in enumerate(k)])
    else:
        po = np.vstack([channel.analytic_outage(model.config, x[i], 1, 1)
                        for i, n in enumerate(k)])
    return np.sum(w * dens * po, axis=1)


def expected_transmission_time(model: RangeModel, traffic: TrafficConfig,
                               protocol: ProtocolConfig, eps: float = SERIES_EPS,
                               mean_outage: float | None = None) -> float:
    """Per-cycle radio delay, one or two hops with equal weight, retried every ``tau``."""
    if mean_outage is None:
        s = _support(model, traffic.lam, eps)
        mean_outage = float(np.sum(s.pmf * mean_outage_given_size(model, traffic, s.k)))
    if mean_outage >= 1.0:
        raise DegenerateRegime("mean outage reached one", Regime.OUTAGE_SATURATED)
    return 1.5 * protocol.tau / (1.0 - mean_outage)


# ---------------------------------------------------------------------------


def analytic_ips(model: RangeModel, traffic: TrafficConfig, protocol: ProtocolConfig,
                 eps: float = SERIES_EPS,
                 horizon: float | None = DEFAULT_BRIDGE_HORIZON) -> IpsBreakdown:
    """Propagation speed relative to the eastbound traffic, with its components.

    When every gap is bridged the cycle degenerates into plain forwarding:
    ``e_d`` becomes the mean advance per hop (one cluster plus one gap),
    ``e_tt`` the mean time per hop and ``e_tw`` zero. A divergent search term
    (``horizon=None``) gives ``v_p = 0`` flagged as divergent.
    """
    lam = traffic.lam
    e_ge = expected_unbridged_gap(model, traffic, eps, check=False)
    p_b = bridge_probability(model, traffic, eps)
    e_tt = expected_transmission_time(model, traffic, protocol, eps)
    if 1.0 - p_b < 1e-12:
        step = 1.0 / (lam * math.exp(-lam * model.r))
        per_hop = e_tt / 1.5
        return IpsBreakdown(step, 0.0, per_hop, p_b, e_ge, step / per_hop,
                            step / per_hop + traffic.v, Regime.FULLY_CONNECTED)
    e_d = 1.0 / (lam * (1.0 - p_b))
    integral, at_h = _blocking_integral(model, traffic, eps, horizon)
    e_tw = (e_ge + 1.0 / lam + integral) / (2.0 * traffic.v)
    if not math.isfinite(e_tw):
        return IpsBreakdown(e_d, math.inf, e_tt, p_b, e_ge, 0.0, traffic.v, Regime.DIVERGENT)
    regime = Regime.NORMAL
    if horizon is not None and integral > 0 and at_h > 0.5 * integral:
        regime = Regime.HORIZON_LIMITED
    v_p = e_d / (e_tw + e_tt)
    return IpsBreakdown(e_d, e_tw, e_tt, p_b, e_ge, v_p, v_p + traffic.v, regime)
