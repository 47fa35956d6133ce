"""Synthetic training pairs (model parameters -> collocation values)."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from ..collocation import CollocationBasis, cvs_from_samples, make_basis
from ..heston import HestonParams, SimConfig, grid_index, iter_chunks
from ..payoffs import aggregate

log = logging.getLogger(__name__)

HESTON_FIELDS = ("r", "kappa", "gamma", "rho", "v_bar", "v0")
SCHEMAS = {
    "FxA": ("r", "kappa", "gamma", "rho", "v_bar", "v0", "T"),
    "FxL": ("kappa", "gamma", "rho", "v_bar", "v0", "T"),
    "FxFlA": ("r", "kappa", "gamma", "rho", "v_bar", "v0", "T", "S_q", "p_q"),
}


def lhs_sample(ranges, n: int, seed=None) -> np.ndarray:
    """Latin hypercube design: n points, one per equal-width stratum in every dimension."""
    ranges = np.asarray(ranges, dtype=float).reshape(-1, 2)
    if n < 1:
        raise ValueError("n must be >= 1")
    if np.any(ranges[:, 1] < ranges[:, 0]):
        raise ValueError("empty range (upper < lower)")
    u = qmc.LatinHypercube(d=len(ranges), seed=np.random.default_rng(seed)).random(n)
    return ranges[:, 0] + u * (ranges[:, 1] - ranges[:, 0])


@dataclass
class TrainingSet:
    schema: str
    inputs: np.ndarray
    outputs: np.ndarray
    basis: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.outputs = np.atleast_2d(np.asarray(self.outputs, dtype=float))
        if self.schema not in SCHEMAS:
            raise ValueError(f"unknown schema {self.schema!r}")
        if self.inputs.shape[1] != len(SCHEMAS[self.schema]):
            raise ValueError(f"{self.schema} expects {len(SCHEMAS[self.schema])} inputs")
        if len(self.inputs) != len(self.outputs):
            raise ValueError("inputs/outputs row mismatch")
        if np.any(np.diff(self.outputs, axis=1) < 0):
            raise ValueError("collocation value rows must be non-decreasing")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return SCHEMAS[self.schema]

    def __len__(self):
        return len(self.inputs)

    @property
    def norm_stats(self) -> dict:
        return {
            "in_min": self.inputs.min(axis=0), "in_max": self.inputs.max(axis=0),
            "out_min": self.outputs.min(axis=0), "out_max": self.outputs.max(axis=0),
        }

    def to_csv(self, path) -> None:
        d, m = self.inputs.shape[1], self.outputs.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["schema", *(f"p_{i}" for i in range(1, d + 1)), *(f"a_{k}" for k in range(1, m + 1))])
        for p, a in zip(self.inputs, self.outputs):
            w.writerow([self.schema, *map(repr, p.tolist()), *map(repr, a.tolist())])
        Path(path).write_text(buf.getvalue())

    @classmethod
    def from_csv(cls, path, basis: dict | None = None) -> "TrainingSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0] != "schema":
            raise ValueError(f"{path}: missing 'schema' header")
        header = rows[0]
        d = sum(h.startswith("p_") for h in header)
        m = sum(h.startswith("a_") for h in header)
        if d + m + 1 != len(header) or not rows[1:]:
            raise ValueError(f"{path}: malformed header or no data rows")
        schemas = {r[0] for r in rows[1:]}
        if len(schemas) != 1:
            raise ValueError(f"{path}: mixed schema tags {schemas}")
        try:
            data = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        except ValueError as exc:
            raise ValueError(f"{path}: non-numeric field ({exc})") from None
        if data.shape[1] != d + m:
            raise ValueError(f"{path}: ragged rows")
        return cls(schemas.pop(), data[:, :d], data[:, d:], basis or {})


@dataclass(frozen=True)
class GenerationSpec:
    """How to build a training set.

    Maturities are the last ``n_maturities`` grid times (step ``maturity_stride``
    grid points) ending at ``t_max``; for each, A(S) is the ``aggregator`` over
    ``window_n`` dates spaced ``window_lag`` apart and ending at T.
    """

    schema: str
    ranges: dict
    n_sets: int
    t_max: float
    n_maturities: int
    dt: float
    n_paths: int
    window_n: int
    window_lag: float
    aggregator: str = "mean"
    maturity_stride: int = 1
    allow_t0: bool = False
    fixed: dict = field(default_factory=dict)
    s0: float = 1.0
    seed: int = 0
    m: int = 21
    xi_bar: float | None = None
    tail_degree: int = 1
    q_count: int = 15
    p_min: float = 0.05
    p_max: float = 0.85
    n_closest: int = 0

    def __post_init__(self):
        if self.schema not in SCHEMAS:
            raise ValueError(f"unknown schema {self.schema!r}")
        needed = [f for f in HESTON_FIELDS if f in SCHEMAS[self.schema]]
        missing = [f for f in needed if f not in self.ranges]
        if missing:
            raise ValueError(f"ranges missing for {missing}")
        if self.schema == "FxFlA" and not 0 < self.n_closest <= self.n_paths:
            raise ValueError("FxFlA needs 0 < n_closest <= n_paths")

    @property
    def sampled_fields(self) -> tuple[str, ...]:
        return tuple(f for f in HESTON_FIELDS if f in SCHEMAS[self.schema])

    def basis(self) -> CollocationBasis:
        if self.xi_bar is None:
            return make_basis(self.m, tail_degree=self.tail_degree)
        return make_basis(self.m, self.xi_bar, self.tail_degree)

    def maturity_indices(self) -> np.ndarray:
        """Grid indices of the maturities; raises if any lacks enough history."""
        i_max = grid_index(self.t_max, self.dt)
        lag = grid_index(self.window_lag, self.dt)
        first_min = 0 if self.allow_t0 else 1
        idx = i_max - self.maturity_stride * np.arange(self.n_maturities)[::-1]
        admissible = idx - (self.window_n - 1) * lag >= first_min
        if self.n_maturities < 1 or not admissible.any():
            raise ValueError("no admissible maturities: horizon too short for the monitoring window")
        if not admissible.all():
            raise ValueError(
                f"only {int(admissible.sum())} of {self.n_maturities} maturities have "
                f"{self.window_n} monitoring dates after t0"
            )
        return idx

    @property
    def expected_rows(self) -> int:
        q = self.q_count if self.schema == "FxFlA" else 1
        return self.n_sets * self.n_maturities * q


def _set_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1, np.uint64)[0])


def _simulate_set(spec: GenerationSpec, params: HestonParams, sim_seed: int):
    """A(S) (and S(T)) per path for every maturity of the set."""
    mats = spec.maturity_indices()
    lag = grid_index(spec.window_lag, spec.dt)
    first = int(mats[0] - (spec.window_n - 1) * lag)
    obs_idx = np.arange(first, mats[-1] + 1)
    cfg = SimConfig(spec.n_paths, spec.dt, mats[-1] * spec.dt, sim_seed)
    a_all = np.empty((spec.n_paths, mats.size))
    s_all = np.empty((spec.n_paths, mats.size)) if spec.schema == "FxFlA" else None
    row = 0
    for block in iter_chunks(params, cfg, obs_idx * spec.dt):
        vals = block.values
        n = vals.shape[0]
        for j, i in enumerate(mats):
            cols = (i - first) - lag * np.arange(spec.window_n)[::-1]
            a_all[row:row + n, j] = aggregate(vals[:, cols], spec.aggregator)
            if s_all is not None:
                s_all[row:row + n, j] = vals[:, i - first]
        row += n
    return mats * spec.dt, a_all, s_all


def closest_window(sorted_vals: np.ndarray, target: float, n: int) -> tuple[int, int]:
    """[lo, lo+n) of the n entries of a sorted array nearest to ``target``."""
    size = sorted_vals.size
    lo, hi = 0, size - n
    while lo < hi:
        mid = (lo + hi) // 2
        if target - sorted_vals[mid] > sorted_vals[mid + n] - target:
            lo = mid + 1
        else:
            hi = mid
    return lo, lo + n


def conditional_rows(spec, basis, p_row, T, a, s_T):
    """Q training rows for A | S(T) = S^q at one maturity."""
    order = np.argsort(s_T, kind="stable")
    s_sorted, a_sorted = s_T[order], a[order]
    s_min, s_max = np.quantile(s_sorted, [spec.p_min, spec.p_max])
    refs = s_min + np.arange(spec.q_count) / (spec.q_count - 1) * (s_max - s_min)
    probs = np.searchsorted(s_sorted, refs, side="right") / s_sorted.size
    inputs, outputs = [], []
    for s_q, p_q in zip(refs, probs):
        lo, hi = closest_window(s_sorted, s_q, spec.n_closest)
        inputs.append([*p_row, T, s_q / spec.s0, p_q])
        outputs.append(cvs_from_samples(a_sorted[lo:hi], basis).a / spec.s0)
    return inputs, outputs


def _rows_for_set(spec: GenerationSpec, k: int, p_row) -> tuple[list, list]:
    values = dict(spec.fixed)
    values.update(zip(spec.sampled_fields, p_row))
    values.setdefault("r", 0.0)
    params = HestonParams(**{f: values[f] for f in HESTON_FIELDS}, s0=spec.s0)
    basis = spec.basis()
    times, a_all, s_all = _simulate_set(spec, params, _set_seed(spec.seed, k))
    inputs, outputs = [], []
    for j, T in enumerate(times):
        if spec.schema == "FxFlA":
            i_rows, o_rows = conditional_rows(spec, basis, p_row, T, a_all[:, j], s_all[:, j])
            inputs += i_rows
            outputs += o_rows
        else:
            inputs.append([*p_row, T])
            outputs.append(cvs_from_samples(a_all[:, j], basis).a / spec.s0)
    return inputs, outputs


def generate_training_set(spec: GenerationSpec, threads: int = 1) -> TrainingSet:
    """Simulate every LHS parameter set and compress A(S) at each maturity.

    CVs are stored for a unit initial level (A is homogeneous in S); FxFlA
    rows append the conditioning level S^q and its implied probability
    p^q = F_{S(T)}(S^q) to the inputs.
    """
    spec.maturity_indices()
    ranges = [spec.ranges[f] for f in spec.sampled_fields]
    design = lhs_sample(ranges, spec.n_sets, spec.seed)
    if threads > 1:
        from joblib import Parallel, delayed

        parts = Parallel(n_jobs=threads)(
            delayed(_rows_for_set)(spec, k, row) for k, row in enumerate(design.tolist())
        )
    else:
        parts = []
        for k, row in enumerate(design.tolist()):
            parts.append(_rows_for_set(spec, k, row))
            log.info("parameter set %d/%d done", k + 1, spec.n_sets)
    inputs = [r for part in parts for r in part[0]]
    outputs = [r for part in parts for r in part[1]]
    basis = spec.basis()
    return TrainingSet(spec.schema, np.array(inputs), np.array(outputs), basis.to_dict())
