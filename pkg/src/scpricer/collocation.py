"""Stochastic collocation on Chebyshev nodes with low-degree tails.

A target law A is represented by M collocation values a_k = F_A^{-1}(Phi(xi_k)).
The map g(x) ~ g~(x) sends a standard normal to A: a degree M-1 Lagrange
polynomial on [-xi_bar, xi_bar] and linear (or quadratic) polynomials through
the extreme nodes outside.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import mpmath
import numpy as np
from scipy.optimize import isotonic_regression
from scipy.special import ndtr, ndtri

DEFAULT_XI_BAR = float(ndtri(0.993))  # ~ 2.457
_EVAL_BLOCK = 1 << 16


def chebyshev_nodes(m: int, xi_bar: float) -> np.ndarray:
    """xi_k = -xi_bar * cos((k-1) pi / (m-1)), k = 1..m.

    Evaluated as xi_bar * sin(pi (2k - m - 1) / (2(m - 1))), which is the same
    number but exactly antisymmetric (the middle node is exactly 0).
    """
    k = np.arange(1, m + 1)
    return xi_bar * np.sin(np.pi * (2 * k - m - 1) / (2 * (m - 1)))


def change_of_basis(values_on_nodes, basis_nodes) -> np.ndarray:
    """Monomial coefficients alpha of the interpolant: V(nodes) @ alpha = a.

    The system is solved on nodes rescaled to [-1, 1] and mapped back, which
    keeps the Vandermonde solve well conditioned for M ~ 20.
    """
    a = np.asarray(values_on_nodes, dtype=float)
    x = np.asarray(basis_nodes, dtype=float)
    if a.shape != x.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {x.shape}")
    if np.unique(x).size != x.size:
        raise ValueError("singular Vandermonde system: duplicate nodes")
    scale = float(np.max(np.abs(x))) or 1.0
    beta = np.linalg.solve(np.vander(x / scale, increasing=True), a)
    return beta / scale ** np.arange(x.size)


def polyval(alpha, x):
    """Evaluate sum_i alpha_i x^i (coefficients in increasing order)."""
    return np.polynomial.polynomial.polyval(x, alpha)


def isotonic(a) -> np.ndarray:
    """Least-squares projection onto non-decreasing vectors (pool adjacent violators)."""
    return np.asarray(isotonic_regression(np.asarray(a, dtype=float)).x)


@dataclass(frozen=True, eq=False)
class CollocationBasis:
    m: int
    xi_bar: float
    tail_degree: int
    nodes: np.ndarray
    inv_vandermonde: np.ndarray
    bary_weights: np.ndarray

    @property
    def lower_idx(self) -> np.ndarray:
        return np.arange(self.tail_degree + 1)

    @property
    def upper_idx(self) -> np.ndarray:
        return np.arange(self.m - self.tail_degree - 1, self.m)

    @property
    def probabilities(self) -> np.ndarray:
        return ndtr(self.nodes)

    def lagrange_matrix(self, x) -> np.ndarray:
        """Rows l_k(x) of the full degree M-1 Lagrange basis (barycentric form)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        diff = x[:, None] - self.nodes[None, :]
        hit = diff == 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            w = self.bary_weights / diff
            w /= w.sum(axis=1, keepdims=True)
        rows = hit.any(axis=1)
        if rows.any():
            w[rows] = hit[rows].astype(float)
        return w

    def tail_matrix(self, x, idx) -> np.ndarray:
        """Lagrange basis on the subset of nodes ``idx`` evaluated at ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        nodes = self.nodes[idx]
        out = np.ones((x.size, nodes.size))
        for k in range(nodes.size):
            for j in range(nodes.size):
                if j != k:
                    out[:, k] *= (x - nodes[j]) / (nodes[k] - nodes[j])
        return out

    def to_dict(self) -> dict:
        return {"m": self.m, "xi_bar": self.xi_bar, "tail_degree": self.tail_degree}


def make_basis(m: int = 21, xi_bar: float = DEFAULT_XI_BAR, tail_degree: int = 1) -> CollocationBasis:
    if tail_degree not in (1, 2):
        raise ValueError("tail_degree must be 1 (linear) or 2 (quadratic)")
    if m < 2 or m < tail_degree + 1:
        raise ValueError(f"need at least {max(2, tail_degree + 1)} nodes, got m={m}")
    if not xi_bar > 0:
        raise ValueError("xi_bar must be > 0")
    nodes = chebyshev_nodes(m, xi_bar)
    w = (-1.0) ** np.arange(m)
    w[0] *= 0.5
    w[-1] *= 0.5
    return CollocationBasis(m, float(xi_bar), tail_degree, nodes, _inv_vandermonde(nodes), w)


@lru_cache(maxsize=64)
def _inv_vandermonde_cached(nodes: tuple) -> np.ndarray:
    # float64 inversion loses ~3 digits at M=21, xi_bar=2.46; invert in extended
    # precision and round once
    with mpmath.workdps(50):
        v = mpmath.matrix([[mpmath.mpf(x) ** j for j in range(len(nodes))] for x in nodes])
        inv = v**-1
        return np.array([[float(inv[i, j]) for j in range(inv.cols)] for i in range(inv.rows)])


def _inv_vandermonde(nodes: np.ndarray) -> np.ndarray:
    out = _inv_vandermonde_cached(tuple(float(x) for x in nodes))
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class CollocationValues:
    a: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if a.ndim != 1 or a.size < 2:
            raise ValueError("collocation values must be a vector of length >= 2")
        if np.any(np.diff(a) < 0):
            raise ValueError("collocation values must be non-decreasing")
        object.__setattr__(self, "a", a)

    def __len__(self):
        return self.a.size

    def scaled(self, c: float, shift: float = 0.0) -> "CollocationValues":
        return CollocationValues(c * self.a - shift)

    def to_csv_row(self) -> str:
        return ",".join(repr(float(v)) for v in self.a)

    @classmethod
    def from_csv_row(cls, row: str) -> "CollocationValues":
        return cls(np.array([float(v) for v in row.strip().split(",")]))


def cvs_from_samples(samples, basis: CollocationBasis) -> CollocationValues:
    """Empirical quantiles of ``samples`` at the node probabilities Phi(xi_k)."""
    s = np.asarray(samples, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("no samples")
    tail_p = 1.0 - ndtr(basis.xi_bar)
    if s.size < 1.0 / tail_p:
        warnings.warn(
            f"{s.size} samples cannot resolve the tail quantile at p={1 - tail_p:.4f}",
            stacklevel=2,
        )
    q = np.quantile(s, basis.probabilities)
    return CollocationValues(np.maximum.accumulate(q))


@dataclass(frozen=True, eq=False)
class PiecewiseMap:
    basis: CollocationBasis
    values: CollocationValues
    alpha_minus: np.ndarray
    alpha_mid: np.ndarray
    alpha_plus: np.ndarray

    @property
    def a(self) -> np.ndarray:
        return self.values.a

    @property
    def mono_coeffs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.alpha_minus, self.alpha_mid, self.alpha_plus

    @property
    def lower_slope(self) -> float:
        return float(self.alpha_minus[1]) if self.basis.tail_degree == 1 else float(
            np.polynomial.polynomial.polyval(self.basis.nodes[0], np.polynomial.polynomial.polyder(self.alpha_minus))
        )

    @property
    def upper_slope(self) -> float:
        return float(self.alpha_plus[1]) if self.basis.tail_degree == 1 else float(
            np.polynomial.polynomial.polyval(self.basis.nodes[-1], np.polynomial.polynomial.polyder(self.alpha_plus))
        )

    def __call__(self, x):
        scalar = np.ndim(x) == 0
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        xb = self.basis.xi_bar
        lo, hi = x < -xb, x > xb
        mid = ~(lo | hi)
        out[lo] = polyval(self.alpha_minus, x[lo])
        out[hi] = polyval(self.alpha_plus, x[hi])
        xm = x[mid]
        res = np.empty_like(xm)
        for s in range(0, xm.size, _EVAL_BLOCK):
            res[s:s + _EVAL_BLOCK] = self.basis.lagrange_matrix(xm[s:s + _EVAL_BLOCK]) @ (self.a - self.a[0]) + self.a[0]
        out[mid] = res
        return float(out[0]) if scalar else out

    def to_dict(self) -> dict:
        return {**self.basis.to_dict(), "a": [float(v) for v in self.a]}

    @classmethod
    def from_dict(cls, d: dict) -> "PiecewiseMap":
        basis = make_basis(int(d["m"]), float(d["xi_bar"]), int(d["tail_degree"]))
        return build_map(CollocationValues(np.asarray(d["a"], dtype=float)), basis)


def build_map(values, basis: CollocationBasis) -> PiecewiseMap:
    """Piecewise polynomial g~ interpolating ``values`` at the basis nodes."""
    if not isinstance(values, CollocationValues):
        values = CollocationValues(np.asarray(values, dtype=float))
    if len(values) != basis.m:
        raise ValueError(f"expected {basis.m} collocation values, got {len(values)}")
    a = values.a
    lo, hi = basis.lower_idx, basis.upper_idx
    # fit a - a_1 and add a_1 back: a constant map stays exactly constant
    ref = a[0]
    d = a - ref

    def fit(idx):
        alpha = change_of_basis(d[idx], basis.nodes[idx])
        alpha[0] += ref
        return alpha

    return PiecewiseMap(basis, values, fit(lo), fit(np.arange(basis.m)), fit(hi))


def evaluate_rows(basis: CollocationBasis, a_rows: np.ndarray, x) -> np.ndarray:
    """Evaluate a different map per sample: row j of ``a_rows`` at ``x[j]``."""
    a_rows = np.asarray(a_rows, dtype=float)
    x = np.asarray(x, dtype=float)
    ref = a_rows[:, 0].copy()
    a_rows = a_rows - ref[:, None]
    out = np.empty(x.size)
    xb = basis.xi_bar
    lo, hi = x < -xb, x > xb
    mid = ~(lo | hi)
    if lo.any():
        out[lo] = np.einsum("ij,ij->i", basis.tail_matrix(x[lo], basis.lower_idx), a_rows[lo][:, basis.lower_idx])
    if hi.any():
        out[hi] = np.einsum("ij,ij->i", basis.tail_matrix(x[hi], basis.upper_idx), a_rows[hi][:, basis.upper_idx])
    idx = np.flatnonzero(mid)
    for s in range(0, idx.size, _EVAL_BLOCK):
        j = idx[s:s + _EVAL_BLOCK]
        out[j] = np.einsum("ij,ij->i", basis.lagrange_matrix(x[j]), a_rows[j])
    return out + ref


def sample_through(gmap: PiecewiseMap, n: int, seed=None, normals=None) -> np.ndarray:
    """n draws g~(xi) with xi i.i.d. standard normal."""
    if normals is None:
        normals = np.random.default_rng(seed).standard_normal(n)
    return gmap(np.asarray(normals, dtype=float))


def _tail_inverse(alpha, y, node, side):
    """Invert a linear/quadratic tail polynomial on its half-line."""
    if alpha.size == 2:
        slope = alpha[1]
        if slope <= 0:
            return -math.inf if side < 0 else math.inf
        return (y - alpha[0]) / slope
    c0, c1, c2 = alpha
    if c2 == 0:
        return _tail_inverse(alpha[:2], y, node, side)
    disc = c1 * c1 - 4 * c2 * (c0 - y)
    if disc < 0:
        return -math.inf if side < 0 else math.inf
    roots = np.array([(-c1 - math.sqrt(disc)) / (2 * c2), (-c1 + math.sqrt(disc)) / (2 * c2)])
    ok = roots[roots <= node] if side < 0 else roots[roots >= node]
    if ok.size == 0:
        return -math.inf if side < 0 else math.inf
    return float(ok[np.argmin(np.abs(ok - node))])


def inverse_map(gmap: PiecewiseMap, y):
    """c with g~(c) ~ y.

    Inside [a_1, a_M]: linear interpolation on the pairs (a_k, xi_k). Outside:
    exact inversion of the tail polynomial; +-inf when a flat tail never
    reaches y.
    """
    a, nodes = gmap.a, gmap.basis.nodes
    if np.any(np.diff(a) < 0):
        raise ValueError("map is not monotone")
    scalar = np.ndim(y) == 0
    y = np.atleast_1d(np.asarray(y, dtype=float))
    out = np.interp(y, a, nodes)
    for i in np.flatnonzero(y < a[0]):
        out[i] = _tail_inverse(gmap.alpha_minus, y[i], nodes[0], -1)
    for i in np.flatnonzero(y > a[-1]):
        out[i] = _tail_inverse(gmap.alpha_plus, y[i], nodes[-1], +1)
    return float(out[0]) if scalar else out
