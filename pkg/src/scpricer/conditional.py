"""Joint sampling of (S(T), A(S) | S(T)) and fixed+floating strike pricing."""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .collocation import CollocationBasis, PiecewiseMap, build_map, cvs_from_samples, evaluate_rows, isotonic, make_basis
from .heston import HestonParams, SimConfig, iter_chunks
from .payoffs import PayoffSpec, mc_price
from .regressor.mlp import MLPModel, predict_cvs_batch

MIN_SUPPORT = 100_000
OUTSIDE_MODES = ("extrapolate", "clamp")


@dataclass(frozen=True, eq=False)
class MarginalSampler:
    """Quantile table of S(T).

    ``support`` is the sorted sample; with ``gmap`` set, draws go through the
    collocation map instead of the full table.
    """

    support: np.ndarray
    source: str = "empirical"
    gmap: PiecewiseMap | None = None

    def quantile(self, p):
        return np.quantile(self.support, p)

    def cdf(self, x):
        return np.searchsorted(self.support, x, side="right") / self.support.size

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.gmap is not None:
            return self.gmap(rng.standard_normal(n))
        return self.quantile(rng.random(n))

    def compressed(self, basis: CollocationBasis) -> "MarginalSampler":
        return MarginalSampler(self.support, "sc", build_map(cvs_from_samples(self.support, basis), basis))


def build_marginal(
    params: HestonParams,
    mc: SimConfig,
    maturity: float,
    min_support: int = MIN_SUPPORT,
) -> MarginalSampler:
    """Empirical law of S(T) from an almost-exact MC run (observed S - shift)."""
    if mc.horizon < maturity - 1e-12:
        raise ValueError("simulation horizon shorter than the maturity")
    if mc.n_paths < min_support:
        raise ValueError(f"need at least {min_support} paths for the marginal, got {mc.n_paths}")
    parts = [b.displaced[:, 0] for b in iter_chunks(params, mc, [maturity])]
    return MarginalSampler(np.sort(np.concatenate(parts)))


@dataclass(frozen=True, eq=False)
class ConditionalGrid:
    refs: np.ndarray
    probs: np.ndarray
    rows: np.ndarray
    basis: CollocationBasis
    inputs: np.ndarray

    @property
    def q_count(self) -> int:
        return self.refs.size

    def interpolate(self, s, outside: str = "extrapolate") -> tuple[np.ndarray, np.ndarray]:
        """Row-wise linear interpolation of G at ``s``.

        Draws outside [S^1, S^Q] either continue the end segments
        (``"extrapolate"``, rows re-sorted to stay non-decreasing) or take the
        boundary rows (``"clamp"``). The mask of such draws is returned too.
        """
        if outside not in OUTSIDE_MODES:
            raise ValueError(f"unknown outside mode {outside!r}; expected one of {OUTSIDE_MODES}")
        s = np.atleast_1d(np.asarray(s, dtype=float))
        lo, hi = self.refs[0], self.refs[-1]
        out = (s < lo) | (s > hi)
        x = np.clip(s, lo, hi) if outside == "clamp" else s
        u = (x - lo) / (hi - lo) * (self.q_count - 1)
        i = np.clip(np.floor(u).astype(int), 0, self.q_count - 2)
        w = (u - i)[:, None]
        rows = (1 - w) * self.rows[i] + w * self.rows[i + 1]
        if outside == "extrapolate" and out.any():
            rows[out] = np.maximum.accumulate(rows[out], axis=1)
        return rows, out


def reference_levels(s_min: float, s_max: float, q_count: int) -> np.ndarray:
    """S^q = S_min + (q-1)/(Q-1) (S_max - S_min), q = 1..Q."""
    if q_count < 2:
        raise ValueError("need Q >= 2 reference levels")
    return s_min + np.arange(q_count) / (q_count - 1) * (s_max - s_min)


def _augmented_inputs(params: HestonParams, maturity: float, s, p) -> np.ndarray:
    s = np.atleast_1d(s)
    base = [params.r, params.kappa, params.gamma, params.rho, params.v_bar, params.v0, maturity]
    out = np.empty((s.size, 9))
    out[:, :7] = base
    out[:, 7] = s / params.s0
    out[:, 8] = p
    return out


def build_grid(
    model: MLPModel,
    params: HestonParams,
    marginal: MarginalSampler,
    maturity: float,
    q_count: int = 15,
    p_min: float = 0.05,
    p_max: float = 0.85,
) -> ConditionalGrid:
    """Q network evaluations at the reference levels give the grid G (Q x M)."""
    if model.schema != "FxFlA":
        raise ValueError(f"conditional grid needs an FxFlA model, got {model.schema!r}")
    s_min, s_max = marginal.quantile([p_min, p_max])
    refs = reference_levels(s_min, s_max, q_count)
    probs = marginal.cdf(refs)
    inputs = _augmented_inputs(params, maturity, refs, probs)
    span = np.where(model.in_max > model.in_min, model.in_max - model.in_min, 1.0)
    tol = 1e-9 * span
    below = inputs < model.in_min - tol
    above = inputs > model.in_max + tol
    if np.any(below[:, 7:] | above[:, 7:]):
        raise ValueError(
            f"reference levels [{refs[0]:.4g}, {refs[-1]:.4g}] (p in [{probs[0]:.3f}, {probs[-1]:.3f}]) "
            f"outside the trained range [{model.in_min[7] * params.s0:.4g}, {model.in_max[7] * params.s0:.4g}]"
        )
    if np.any(below[:, :7] | above[:, :7]):
        warnings.warn("model parameters outside the trained ranges (extrapolation)", stacklevel=2)
    # row by row, so every row is bit-identical to a single predict_cvs call
    rows = np.array([isotonic(model.predict(x)) for x in inputs]) * params.s0
    return ConditionalGrid(refs, probs, rows, model_basis(model), inputs)


def model_basis(model: MLPModel) -> CollocationBasis:
    b = model.basis
    m = int(b.get("m", model.layer_sizes[-1]))
    if "xi_bar" in b:
        return make_basis(m, float(b["xi_bar"]), int(b.get("tail_degree", 1)))
    return make_basis(m, tail_degree=int(b.get("tail_degree", 1)))


def row_mean_violations(grid: ConditionalGrid) -> float:
    """Fraction of adjacent reference pairs whose mean CV decreases."""
    means = grid.rows.mean(axis=1)
    return float(np.mean(np.diff(means) < 0))


@dataclass(frozen=True, eq=False)
class JointSample:
    s_T: np.ndarray
    a: np.ndarray
    clamped_fraction: float = 0.0  # share of S(T) draws outside [S^1, S^Q]


def sample_joint(
    grid: ConditionalGrid,
    marginal: MarginalSampler,
    n_paths: int,
    seed=None,
    mode: str = "grid",
    model: MLPModel | None = None,
    params: HestonParams | None = None,
    maturity: float | None = None,
    outside: str = "extrapolate",
) -> JointSample:
    """Draw S(T) from the marginal, then one A per draw from its conditional map.

    ``mode="grid"`` interpolates the CV rows of ``grid``; ``mode="brute"``
    evaluates the network at every draw (needs ``model``, ``params`` and
    ``maturity``).
    """
    rng = np.random.default_rng(seed)
    s = marginal.sample(n_paths, rng)
    z = rng.standard_normal(n_paths)
    if mode == "grid":
        rows, clamped = grid.interpolate(s, outside)
        frac = float(clamped.mean())
    elif mode == "brute":
        if model is None or params is None or maturity is None:
            raise ValueError("brute-force mode needs model, params and maturity")
        rows = predict_cvs_batch(model, _augmented_inputs(params, maturity, s, marginal.cdf(s))) * params.s0
        frac = 0.0
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    return JointSample(s, evaluate_rows(grid.basis, rows, z), frac)


def price_fxfla(
    samples: JointSample,
    strikes: Iterable[tuple[float, float]],
    omega: int | Sequence[int],
    discount: float,
) -> list[dict]:
    """V = discount * mean(max(omega (A - K1 S(T) - K2), 0)) for every strike pair."""
    omegas = (omega,) if isinstance(omega, int) else tuple(omega)
    table = []
    for w in omegas:
        for k1, k2 in strikes:
            spec = PayoffSpec("mean", w, k1, k2, "fixed_and_floating")
            price, se = mc_price(samples.a, samples.s_T, spec, discount)
            table.append({"K1": k1, "K2": k2, "omega": w, "price": price, "std_err": se})
    return table


def price_table_csv(table: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=["K1", "K2", "omega", "price", "std_err"], lineterminator="\n")
    w.writeheader()
    for row in table:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def write_price_table(table: list[dict], path) -> None:
    Path(path).write_text(price_table_csv(table))
