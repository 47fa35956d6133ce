"""Path functionals A(S), the payoff H_omega and Monte Carlo price estimates."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .heston import CHUNK_SIZE, HestonParams, SimConfig, iter_chunks, to_stock_measure

AGGREGATORS = ("mean", "min", "max")
STRIKE_MODES = ("fixed", "floating", "fixed_and_floating")


@dataclass(frozen=True)
class MonitoringSchedule:
    dates: tuple[float, ...]

    def __post_init__(self):
        d = np.asarray(self.dates, dtype=float)
        if d.size == 0:
            raise ValueError("empty monitoring schedule")
        if np.any(np.diff(d) <= 0):
            raise ValueError("monitoring dates must be strictly increasing")
        if d[0] < 0:
            raise ValueError("monitoring dates must be >= 0")

    @property
    def n(self) -> int:
        return len(self.dates)

    @property
    def maturity(self) -> float:
        return self.dates[-1]

    @classmethod
    def equally_spaced(cls, maturity: float, n: int, start: float = 0.0) -> "MonitoringSchedule":
        """``n`` dates from ``start`` to ``maturity`` inclusive."""
        return cls(tuple(float(t) for t in np.linspace(start, maturity, n)))

    @classmethod
    def lagged(cls, maturity: float, n: int, lag: float) -> "MonitoringSchedule":
        """t_k = T - (n - k) * lag, k = 1..n (e.g. monthly Asian, 3-day lookback)."""
        return cls(tuple(maturity - (n - k) * lag for k in range(1, n + 1)))


@dataclass(frozen=True)
class PayoffSpec:
    aggregator: str = "mean"
    omega: int = 1
    k1: float = 0.0
    k2: float = 0.0
    strike_mode: str = "fixed"

    def __post_init__(self):
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}")
        if self.omega not in (1, -1):
            raise ValueError("omega must be +1 or -1")
        if self.k1 < 0 or self.k2 < 0:
            raise ValueError("strikes must be non-negative")
        if self.strike_mode not in STRIKE_MODES:
            raise ValueError(f"strike_mode must be one of {STRIKE_MODES}")
        if self.strike_mode == "fixed" and self.k1 != 0:
            raise ValueError("fixed-strike payoff requires k1 = 0")
        if self.strike_mode == "floating" and self.k2 != 0:
            raise ValueError("floating-strike payoff requires k2 = 0")

    @classmethod
    def lookback(cls, omega: int, k1: float = 0.0, k2: float = 0.0, strike_mode: str = "fixed"):
        """A(S) = omega * max_n omega * S(t_n): running max for calls, min for puts."""
        return cls("max" if omega == 1 else "min", omega, k1, k2, strike_mode)

    def with_strikes(self, k1: float | None = None, k2: float | None = None, omega: int | None = None):
        return replace(
            self,
            k1=self.k1 if k1 is None else k1,
            k2=self.k2 if k2 is None else k2,
            omega=self.omega if omega is None else omega,
        )


def aggregate(values, aggregator: str) -> np.ndarray | float:
    """Arithmetic mean, minimum or maximum along the last axis."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1:] == (0,) or values.ndim == 0:
        raise ValueError("cannot aggregate an empty observation vector")
    if aggregator == "mean":
        out = values.mean(axis=-1)
    elif aggregator == "min":
        out = values.min(axis=-1)
    elif aggregator == "max":
        out = values.max(axis=-1)
    else:
        raise ValueError(f"unknown aggregator {aggregator!r}")
    return out if np.ndim(out) else float(out)


def payoff(a, s_T, spec: PayoffSpec):
    """max(omega * (a - k1 * s_T - k2), 0)."""
    a = np.asarray(a, dtype=float)
    s_T = 0.0 if s_T is None else np.asarray(s_T, dtype=float)
    out = np.maximum(spec.omega * (a - spec.k1 * s_T - spec.k2), 0.0)
    return out if np.ndim(out) else float(out)


def mc_price(samples_a, samples_sT, spec: PayoffSpec, discount: float) -> tuple[float, float]:
    """Discounted sample mean of the payoff and its standard error.

    Fixed mode: ``samples_a`` are A(S) under Q and ``discount`` = e^{-rT}.
    Floating mode: ``samples_a`` are A(S)/S(T) under the stock measure, the
    strike is ``k1`` and ``discount`` = S(t0).
    Fixed-and-floating mode needs the matching S(T) samples under Q.
    """
    a = np.asarray(samples_a, dtype=float)
    if a.size == 0:
        raise ValueError("no samples")
    if spec.strike_mode == "fixed_and_floating":
        if samples_sT is None:
            raise ValueError("fixed_and_floating payoff needs S(T) samples")
        s = np.asarray(samples_sT, dtype=float)
        if s.shape != a.shape:
            raise ValueError(f"length mismatch: {a.shape} vs {s.shape}")
        h = np.maximum(spec.omega * (a - spec.k1 * s - spec.k2), 0.0)
    elif spec.strike_mode == "floating":
        h = np.maximum(spec.omega * (a - spec.k1), 0.0)
    else:
        h = np.maximum(spec.omega * (a - spec.k2), 0.0)
    h = discount * h
    se = h.std(ddof=1) / math.sqrt(h.size) if h.size > 1 else 0.0
    return float(h.mean()), float(se)


def confidence_interval(price: float, se: float, z: float = 1.96) -> tuple[float, float]:
    return price - z * se, price + z * se


def _functionals_for(params, cfg, schedule, aggregator, chunks):
    a_parts, s_parts = [], []
    for block in iter_chunks(params, cfg, schedule.dates, chunks=chunks):
        obs = block.displaced
        a_parts.append(aggregate(obs, aggregator))
        s_parts.append(obs[:, -1].copy())
    return np.concatenate(a_parts), np.concatenate(s_parts)


def sample_functionals(
    params: HestonParams,
    cfg: SimConfig,
    schedule: MonitoringSchedule,
    aggregator: str = "mean",
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate block-wise and keep only (A(S), S(T)) per path.

    Values are the displaced observations S - shift. With ``threads > 1`` the
    blocks are split into contiguous ranges across workers; the result is
    bit-identical to the serial run.
    """
    n_chunks = -(-cfg.n_paths // CHUNK_SIZE)
    if threads <= 1 or n_chunks == 1:
        return _functionals_for(params, cfg, schedule, aggregator, None)
    from joblib import Parallel, delayed

    groups = [g.tolist() for g in np.array_split(np.arange(n_chunks), min(threads, n_chunks))]
    parts = Parallel(n_jobs=len(groups))(
        delayed(_functionals_for)(params, cfg, schedule, aggregator, g) for g in groups
    )
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def price_fixed_strike(
    params: HestonParams,
    cfg: SimConfig,
    schedule: MonitoringSchedule,
    strikes: Sequence[float],
    omega: int = 1,
    aggregator: str = "mean",
    threads: int = 1,
) -> list[tuple[float, float]]:
    """Risk-neutral MC benchmark for fixed-strike options, one (price, se) per strike."""
    a, _ = sample_functionals(params, cfg, schedule, aggregator, threads)
    disc = math.exp(-params.r * schedule.maturity)
    return [mc_price(a, None, PayoffSpec(aggregator, omega, 0.0, k), disc) for k in strikes]


def price_floating_strike(
    params: HestonParams,
    cfg: SimConfig,
    schedule: MonitoringSchedule,
    strikes: Sequence[float],
    omega: int = 1,
    aggregator: str = "mean",
    threads: int = 1,
) -> list[tuple[float, float]]:
    """Floating-strike prices via the stock-measure representation.

    V = S(t0) E^S[max(omega (A/S(T) - K1), 0)], with paths simulated under the
    transformed Heston parameters.
    """
    a, s_T = sample_functionals(to_stock_measure(params), cfg, schedule, aggregator, threads)
    ratio = a / s_T
    return [
        mc_price(ratio, None, PayoffSpec(aggregator, omega, k, 0.0, "floating"), params.s0)
        for k in strikes
    ]
