"""Rician outage, single-vehicle and virtual-MIMO ranges, and the gain table.

Convention for the fading magnitude: ``|psi|^2 / sigma^2`` is non-central
chi-square with 2 degrees of freedom and noncentrality ``1/sigma^2``
(``sigma^2 = 1/K``); two cooperating transmitters give 4 degrees of freedom
and noncentrality ``2/sigma^2``. The Monte-Carlo oracle samples exactly this
law, so it checks the cube-root normal approximation and nothing else.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .numerics import DomainError, RngStream, inverse_normal_cdf, normal_cdf, sample_noncentral_chisq

GAIN_TABLE_CAP = 4096


class UnreachableOutage(DomainError):
    """Target outage cannot be met under the cube-root normal approximation."""


@dataclass(frozen=True)
class ChannelConfig:
    K: float = 10.0
    delta: float = 2.0
    P_t: float = 1.0
    P_min: float = 1e-3
    P_out_target: float = 0.01
    N_0: float = 1e-13

    def __post_init__(self):
        if not self.K > 0:
            raise DomainError(f"K must be > 0, got {self.K}")
        if not 2.0 <= self.delta <= 4.0:
            raise DomainError(f"delta must lie in [2, 4], got {self.delta}")
        if not 0.0 < self.P_out_target < 1.0:
            raise DomainError(f"P_out_target must lie in (0, 1), got {self.P_out_target}")
        if not (self.P_t > 0 and self.P_min > 0):
            raise DomainError("P_t and P_min must be positive")
        if not self.N_0 > 0:
            raise DomainError("N_0 must be positive")

    @property
    def sigma_sq(self) -> float:
        return 1.0 / self.K

    @property
    def P_0(self) -> float:
        return self.K * self.P_t / (self.K + 1.0)

    def with_range(self, r: float) -> "ChannelConfig":
        """Same channel with ``P_t`` rescaled so the single-vehicle range is ``r``."""
        if not r > 0:
            raise DomainError(f"range must be positive, got {r}")
        scale = (r / single_range(self)) ** self.delta
        return replace(self, P_t=self.P_t * scale)


@dataclass(frozen=True)
class PatnaikParams:
    mean: float
    variance: float


def patnaik_params(dof: int, noncentrality: float) -> PatnaikParams:
    """Mean and variance of the cube root of ``X/(f+lam)`` for ``X ~ chi'^2_f(lam)``."""
    if dof < 1:
        raise DomainError(f"dof must be >= 1, got {dof}")
    if noncentrality < 0:
        raise DomainError(f"noncentrality must be >= 0, got {noncentrality}")
    tot = dof + noncentrality
    b = noncentrality / tot
    v = (2.0 / 9.0) * (1.0 + b) / tot
    return PatnaikParams(1.0 - v, v)


def _law(cfg: ChannelConfig, n_tx: int) -> tuple[PatnaikParams, float]:
    # returns Patnaik parameters and f + lam for the summed magnitudes
    if n_tx not in (1, 2):
        raise DomainError(f"n_tx must be 1 or 2, got {n_tx}")
    nc = n_tx / cfg.sigma_sq
    return patnaik_params(2 * n_tx, nc), 2 * n_tx + nc


def _range(cfg: ChannelConfig, n_tx: int, n_receivers: int) -> float:
    if n_receivers < 1:
        raise DomainError(f"n_receivers must be >= 1, got {n_receivers}")
    pp, tot = _law(cfg, n_tx)
    z = inverse_normal_cdf(cfg.P_out_target ** (1.0 / n_receivers))
    u = math.sqrt(pp.variance) * z + pp.mean
    if u <= 0:
        raise UnreachableOutage(
            "target outage unreachable under normal approximation "
            f"(P_out={cfg.P_out_target}, n_tx={n_tx}, n_rx={n_receivers})")
    return (cfg.P_0 * cfg.sigma_sq * tot * u**3 / cfg.P_min) ** (1.0 / cfg.delta)


def single_range(cfg: ChannelConfig) -> float:
    """Edge distance at which one transmitter meets the outage target at one receiver."""
    return _range(cfg, 1, 1)


def mimo_range(cfg: ChannelConfig, n_receivers: int, n_tx: int = 2) -> float:
    """Range of a transmitter pair towards a selection-combining cluster.

    ``n_tx=1`` is the lone-vehicle case: same selection diversity, no power
    doubling and the two-degree-of-freedom law.
    """
    return _range(cfg, n_tx, n_receivers)


def range_gain(cfg: ChannelConfig, n_receivers: int, n_tx: int = 2) -> float:
    return mimo_range(cfg, n_receivers, n_tx) / single_range(cfg)


def analytic_outage(cfg: ChannelConfig, distance, n_receivers: int, n_tx: int = 2):
    """Outage at ``distance`` under the cube-root normal approximation.

    Vectorised over ``distance``.
    """
    pp, tot = _law(cfg, n_tx)
    d = np.asarray(distance, dtype=float)
    thr = cfg.P_min * d**cfg.delta / (cfg.P_0 * cfg.sigma_sq * tot)
    zs = (np.cbrt(thr) - pp.mean) / math.sqrt(pp.variance)
    per_rx = 0.5 * _erfc_vec(-zs / math.sqrt(2.0))
    out = per_rx**n_receivers
    return float(out) if out.ndim == 0 else out


def _erfc_vec(x):
    from scipy.special import erfc
    return erfc(x)


def mc_outage(cfg: ChannelConfig, n_tx: int, n_receivers: int, distance: float,
              rng: RngStream, samples: int = 10**6, chunk: int = 2**18) -> tuple[float, float]:
    """Monte-Carlo outage of selection combining over ``n_receivers`` links.

    Each link sums ``n_tx`` squared Rician magnitudes scaled by the path loss
    at ``distance``. Returns ``(estimate, binomial standard error)``.
    """
    if samples < 10**4:
        raise DomainError("mc_outage needs at least 1e4 samples")
    if n_tx not in (1, 2):
        raise DomainError(f"n_tx must be 1 or 2, got {n_tx}")
    if distance <= 0:
        return 0.0, 0.0
    # received power = P_0 d^-delta sigma^2 X  with X ~ chi'^2_{2 n_tx}(n_tx/sigma^2)
    thr = cfg.P_min * distance**cfg.delta / (cfg.P_0 * cfg.sigma_sq)
    fails = 0
    done = 0
    while done < samples:
        m = min(chunk, samples - done)
        x = sample_noncentral_chisq(rng, 2 * n_tx, n_tx / cfg.sigma_sq, (m, n_receivers))
        fails += int(np.count_nonzero(x.max(axis=1) < thr))
        done += m
    p = fails / samples
    return p, math.sqrt(max(p * (1 - p), 1.0 / samples) / samples)


class BeyondCapWarning(RuntimeWarning):
    """A required cluster size exceeds the gain table; result uses the cap."""


@dataclass(frozen=True)
class RangeModel:
    """Single-vehicle range plus the tabulated gain ``F(n)`` for ``n <= cap``.

    ``gain_table[n]`` is ``F(n)`` with ``F(0) = 0``; ``single_tx_table`` holds
    the lone-transmitter gain. Sizes above ``cap`` returned by the inverse
    lookups mean "not bridgeable inside the table".
    """

    config: ChannelConfig
    r: float
    gain_table: np.ndarray = field(repr=False)
    single_tx_table: np.ndarray = field(repr=False)
    cooperative: bool = True

    @classmethod
    def build(cls, cfg: ChannelConfig, cap: int = GAIN_TABLE_CAP) -> "RangeModel":
        r = single_range(cfg)
        n = np.arange(1, cap + 1)
        g2 = np.array([0.0] + [mimo_range(cfg, int(k), 2) / r for k in n])
        g1 = np.array([0.0] + [mimo_range(cfg, int(k), 1) / r for k in n])
        g2.setflags(write=False)
        g1.setflags(write=False)
        return cls(cfg, r, g2, g1, True)

    @classmethod
    def for_range(cls, r: float, cfg: ChannelConfig | None = None,
                  cap: int = GAIN_TABLE_CAP) -> "RangeModel":
        cfg = ChannelConfig() if cfg is None else cfg
        return cls.build(cfg.with_range(r), cap)

    def non_cooperative(self) -> "RangeModel":
        """Same radio with every cluster limited to the single-vehicle range (F = 1)."""
        ones = np.ones_like(self.gain_table)
        ones[0] = 0.0
        ones.setflags(write=False)
        return replace(self, gain_table=ones, single_tx_table=ones, cooperative=False)

    @property
    def cap(self) -> int:
        return len(self.gain_table) - 1

    def F(self, n):
        """Gain of a transmitter pair towards ``n`` receivers (vectorised)."""
        return self.gain_table[np.minimum(n, self.cap)]

    def F_tx(self, n_tx, n_rx):
        """Gain with the lone-transmitter law when the sending cluster is a single car."""
        n_rx = np.minimum(n_rx, self.cap)
        return np.where(np.asarray(n_tx) >= 2, self.gain_table[n_rx], self.single_tx_table[n_rx])

    def beyond_cap(self, n: int) -> bool:
        return n > self.cap


_REL = 1e-12


def inv_gain_min(model: RangeModel, y: float) -> int:
    """Smallest ``n >= 1`` with ``F(n) >= y``; ``cap + 1`` when none is tabulated."""
    table = model.gain_table
    y = y - _REL * max(1.0, abs(y))
    if y <= table[1]:
        return 1
    i = int(np.searchsorted(table[1:], y, side="left")) + 1
    return i  # equals cap + 1 past the end


def inv_gain_max(model: RangeModel, y: float) -> int:
    """Largest ``k >= 0`` with ``F(k) < y`` (``F(0) = 0``), clipped to the cap."""
    y = y - _REL * max(1.0, abs(y))
    k = int(np.searchsorted(model.gain_table, y, side="left")) - 1
    return min(max(k, 0), model.cap)


def min_bridge_cluster(model: RangeModel, n_rx: int, gap: float) -> int:
    """Smallest westbound cluster that closes ``gap`` towards ``n_rx`` receivers.

    Zero when the gap is already inside the direct range.
    """
    if gap < 0:
        raise DomainError(f"gap must be >= 0, got {gap}")
    f_rx = float(model.F(n_rx))
    if gap <= model.r * f_rx * (1 + _REL):
        return 0
    return inv_gain_min(model, gap / model.r - f_rx)
