"""Information propagation speed on a two-way highway where vehicle clusters
cooperate as virtual antenna arrays."""

from .analytics import (DEFAULT_BRIDGE_HORIZON, IpsBreakdown, ProtocolConfig, Regime,
                        TrafficConfig, analytic_ips)
from .channel import ChannelConfig, RangeModel, mimo_range, range_gain, single_range
from .numerics import DomainError, NumericError, RngStream
from .simulator import SimConfig, harvest_statistics, measure_ips

__all__ = [
    "DEFAULT_BRIDGE_HORIZON", "IpsBreakdown", "ProtocolConfig", "Regime", "TrafficConfig",
    "analytic_ips", "ChannelConfig", "RangeModel", "mimo_range", "range_gain", "single_range",
    "DomainError", "NumericError", "RngStream", "SimConfig", "harvest_statistics", "measure_ips",
]
