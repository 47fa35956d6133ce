"""Heston Asian/Lookback pricing with stochastic collocation and a neural CV regressor."""
from .heston import HestonParams, PathBlock, SimConfig, simulate, simulate_euler, to_stock_measure
from .payoffs import MonitoringSchedule, PayoffSpec, aggregate, mc_price, payoff
from .collocation import (
    CollocationBasis, CollocationValues, PiecewiseMap, build_map, change_of_basis,
    cvs_from_samples, inverse_map, make_basis, sample_through,
)
from .semianalytic import semi_analytic_price, trunc_moment

__version__ = "0.1.0"
