"""Heston path simulation: almost-exact and full-truncation Euler schemes.

Paths are generated in fixed-size blocks of ``CHUNK_SIZE`` paths. Every block
draws from its own Philox stream keyed by ``(seed, block index)`` so the output
does not depend on how blocks are scheduled across workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

CHUNK_SIZE = 1 << 14
GRID_RTOL = 1e-12

RISK_NEUTRAL = "risk-neutral"
STOCK = "stock"

SCHEMES = ("almost-exact", "euler")


@dataclass(frozen=True)
class HestonParams:
    """Heston model and contract parameters.

    ``shift`` is the displacement of the observed quantity: the simulated
    Heston level is ``S`` and the observed rate is ``S - shift``.
    """

    r: float
    kappa: float
    gamma: float
    rho: float
    v_bar: float
    v0: float
    s0: float = 1.0
    shift: float = 0.0
    measure: str = RISK_NEUTRAL

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.v_bar < 0 or self.v0 < 0:
            raise ValueError("v_bar and v0 must be non-negative")
        if not self.s0 > 0:
            raise ValueError(f"s0 must be > 0, got {self.s0}")
        if not -1.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [-1, 1], got {self.rho}")
        if self.shift < 0:
            raise ValueError("shift must be non-negative")
        if self.measure not in (RISK_NEUTRAL, STOCK):
            raise ValueError(f"unknown measure {self.measure!r}")

    @property
    def feller_ratio(self) -> float:
        return 2.0 * self.kappa * self.v_bar / self.gamma**2

    def scaled(self, s0: float) -> "HestonParams":
        return replace(self, s0=s0)


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    dt: float
    horizon: float
    seed: int = 0
    scheme: str = "almost-exact"

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        self.n_steps  # validates horizon alignment

    @property
    def n_steps(self) -> int:
        return grid_index(self.horizon, self.dt)


@dataclass(frozen=True)
class PathBlock:
    """Observed paths: ``values`` and ``variances`` are (n_paths, n_times)."""

    times: np.ndarray
    values: np.ndarray
    variances: np.ndarray | None = None
    shift: float = 0.0

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def displaced(self) -> np.ndarray:
        return self.values - self.shift

    def at(self, t: float) -> np.ndarray:
        j = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[j], t, rel_tol=GRID_RTOL, abs_tol=GRID_RTOL):
            raise KeyError(f"time {t} not observed")
        return self.values[:, j]


def grid_index(t: float, dt: float) -> int:
    """Index of ``t`` on the grid ``k * dt``; raises if ``t`` is off-grid."""
    k = round(t / dt)
    if k < 0 or abs(k * dt - t) > GRID_RTOL * max(abs(t), dt):
        raise ValueError(f"time {t!r} is not an integer multiple of dt={dt!r}")
    return int(k)


def to_stock_measure(params: HestonParams) -> HestonParams:
    """Heston parameters under the measure with the stock as numeraire.

    kappa* = kappa - gamma*rho, v_bar* = kappa*v_bar/kappa*; the log-price
    drift becomes r + v/2 instead of r - v/2.
    """
    if params.measure == STOCK:
        raise ValueError("parameters are already expressed under the stock measure")
    kappa_star = params.kappa - params.gamma * params.rho
    if kappa_star == 0:
        raise ValueError("kappa - gamma*rho = 0: long-term variance undefined under stock measure")
    return replace(
        params,
        kappa=kappa_star,
        v_bar=params.kappa * params.v_bar / kappa_star,
        measure=STOCK,
    )


def ncx2_sample(rng: np.random.Generator, df: float, nonc: np.ndarray) -> np.ndarray:
    """Noncentral chi-squared draws as a Poisson mixture of gammas.

    Exact for every ``df >= 0``; ``df = 0`` with a zero Poisson draw gives
    the point mass at zero.
    """
    n = rng.poisson(0.5 * np.asarray(nonc))
    return 2.0 * rng.standard_gamma(0.5 * df + n)


def _chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(chunk,))
    return np.random.Generator(np.random.Philox(ss))


def _observation_indices(cfg: SimConfig, observe_at: Sequence[float]) -> np.ndarray:
    idx = np.array([grid_index(float(t), cfg.dt) for t in observe_at], dtype=np.int64)
    if idx.size == 0:
        raise ValueError("no observation dates")
    if np.any(np.diff(idx) <= 0):
        raise ValueError("observation dates must be strictly increasing")
    if idx[-1] > cfg.n_steps:
        raise ValueError("observation date beyond the simulation horizon")
    return idx


def _ae_constants(p: HestonParams, dt: float) -> dict:
    kappa, gamma, rho, v_bar = p.kappa, p.gamma, p.rho, p.v_bar
    delta = 4.0 * kappa * v_bar / gamma**2
    if delta <= 0 and v_bar != 0:
        raise ValueError(f"degrees of freedom 4*kappa*v_bar/gamma^2 = {delta} must be > 0")
    # (1 - e^{-kappa dt}) / kappa, with its kappa -> 0 limit
    decay = -math.expm1(-kappa * dt) / kappa if kappa != 0 else dt
    c_bar = 0.25 * gamma**2 * decay
    kappa_bar = math.exp(-kappa * dt) / c_bar
    half = 0.5 if p.measure == STOCK else -0.5
    return dict(
        delta=max(delta, 0.0),
        c_bar=c_bar,
        kappa_bar=kappa_bar,
        k0=(p.r - rho / gamma * kappa * v_bar) * dt,
        k1=(rho * kappa / gamma + half) * dt - rho / gamma,
        k2=rho / gamma,
        k3=(1.0 - rho**2) * dt,
    )


def _simulate_chunk_ae(p, cfg, obs, n, rng, keep_var):
    c = _ae_constants(p, cfg.dt)
    x = np.zeros(n)
    v = np.full(n, float(p.v0))
    vals = np.empty((n, obs.size))
    vars_ = np.empty((n, obs.size)) if keep_var else None
    j = 0
    if obs[0] == 0:
        vals[:, 0] = p.s0
        if keep_var:
            vars_[:, 0] = v
        j = 1
    for i in range(1, int(obs[-1]) + 1):
        v_next = c["c_bar"] * ncx2_sample(rng, c["delta"], c["kappa_bar"] * v)
        z = rng.standard_normal(n)
        x += c["k0"] + c["k1"] * v + c["k2"] * v_next + np.sqrt(c["k3"] * v) * z
        v = v_next
        if obs[j] == i:
            vals[:, j] = p.s0 * np.exp(x)
            if keep_var:
                vars_[:, j] = v
            j += 1
    return vals, vars_


def _simulate_chunk_euler(p, cfg, obs, n, rng, keep_var):
    dt = cfg.dt
    sdt = math.sqrt(dt)
    rho_c = math.sqrt(1.0 - p.rho**2)
    half = 0.5 if p.measure == STOCK else -0.5
    x = np.zeros(n)
    v = np.full(n, float(p.v0))
    vals = np.empty((n, obs.size))
    vars_ = np.empty((n, obs.size)) if keep_var else None
    j = 0
    if obs[0] == 0:
        vals[:, 0] = p.s0
        if keep_var:
            vars_[:, 0] = v
        j = 1
    for i in range(1, int(obs[-1]) + 1):
        zv = rng.standard_normal(n)
        zx = rng.standard_normal(n)
        vp = np.maximum(v, 0.0)
        sv = np.sqrt(vp)
        x += (p.r + half * vp) * dt + sv * sdt * (p.rho * zv + rho_c * zx)
        v = v + p.kappa * (p.v_bar - vp) * dt + p.gamma * sv * sdt * zv
        if obs[j] == i:
            vals[:, j] = p.s0 * np.exp(x)
            if keep_var:
                vars_[:, j] = np.maximum(v, 0.0)
            j += 1
    return vals, vars_


def iter_chunks(
    params: HestonParams,
    cfg: SimConfig,
    observe_at: Sequence[float],
    keep_variance: bool = False,
    chunks: Iterator[int] | None = None,
) -> Iterator[PathBlock]:
    """Yield the simulation block by block (``CHUNK_SIZE`` paths each).

    ``chunks`` restricts generation to a subset of block indices; the union
    over any partition of the indices equals the full simulation.
    """
    obs = _observation_indices(cfg, observe_at)
    if cfg.scheme == "almost-exact":
        _ae_constants(params, cfg.dt)  # fail fast on invalid parameters
    step = _simulate_chunk_ae if cfg.scheme == "almost-exact" else _simulate_chunk_euler
    times = obs * cfg.dt
    n_chunks = -(-cfg.n_paths // CHUNK_SIZE)
    for c in range(n_chunks) if chunks is None else chunks:
        n = min(CHUNK_SIZE, cfg.n_paths - c * CHUNK_SIZE)
        vals, vars_ = step(params, cfg, obs, n, _chunk_rng(cfg.seed, c), keep_variance)
        yield PathBlock(times, vals, vars_, params.shift)


def simulate(
    params: HestonParams,
    cfg: SimConfig,
    observe_at: Sequence[float],
    keep_variance: bool = True,
) -> PathBlock:
    """Simulate ``cfg.n_paths`` paths observed at ``observe_at``.

    The scheme is taken from ``cfg.scheme``; the default is the almost-exact
    scheme (exact CIR transition for the variance, left-point quadrature for
    the log-price).
    """
    blocks = list(iter_chunks(params, cfg, observe_at, keep_variance))
    return PathBlock(
        times=blocks[0].times,
        values=np.concatenate([b.values for b in blocks]),
        variances=np.concatenate([b.variances for b in blocks]) if keep_variance else None,
        shift=params.shift,
    )


def simulate_euler(
    params: HestonParams,
    cfg: SimConfig,
    observe_at: Sequence[float],
    keep_variance: bool = True,
) -> PathBlock:
    return simulate(params, replace(cfg, scheme="euler"), observe_at, keep_variance)


def save_paths(block: PathBlock, path: str | Path) -> None:
    """Write values as little-endian float64 rows plus a ``.hdr`` text sidecar."""
    path = Path(path)
    np.ascontiguousarray(block.values, dtype="<f8").tofile(path)
    header = [f"n_paths={block.n_paths}", "times=" + ",".join(repr(float(t)) for t in block.times)]
    if block.shift:
        header.append(f"shift={block.shift!r}")
    path.with_name(path.name + ".hdr").write_text("\n".join(header) + "\n")


def load_paths(path: str | Path) -> PathBlock:
    path = Path(path)
    meta = dict(
        line.split("=", 1)
        for line in path.with_name(path.name + ".hdr").read_text().splitlines()
        if line
    )
    times = np.array([float(t) for t in meta["times"].split(",")])
    n = int(meta["n_paths"])
    values = np.fromfile(path, dtype="<f8").reshape(n, times.size)
    return PathBlock(times, values, None, float(meta.get("shift", 0.0)))
