"""Empirical checks of the collocation error and pricing-error histograms."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import ndtr
from scipy.stats import norm

from .collocation import PiecewiseMap, build_map, cvs_from_samples, make_basis, CollocationValues

HIST_BIN_WIDTH = 0.5
XI_CUT = 38.0


@dataclass
class ErrorReport:
    epsilon_sc: float
    epsilon_minus: float
    epsilon_mid: float
    epsilon_plus: float
    epsilon_p: list[float] = field(default_factory=list)
    mc_se: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def lognormal_quantile(mu: float = 0.0, sigma: float = 0.25) -> Callable:
    """Exact map g = F^{-1} o Phi of a lognormal: xi -> exp(mu + sigma xi)."""
    return lambda x: np.exp(mu + sigma * np.asarray(x, dtype=float))


def _target_map(target) -> Callable:
    """g(xi) from either an exact map (callable) or reference samples."""
    if callable(target):
        return target
    ref = np.sort(np.asarray(target, dtype=float))
    return lambda x: np.quantile(ref, ndtr(np.asarray(x, dtype=float)))


def estimate_sc_error(reference, gmap: PiecewiseMap, n_probe: int = 10_000, seed=None) -> ErrorReport:
    """Monte Carlo estimate of E[(g - g~)^2(xi)] split over Omega_-, Omega_M, Omega_+.

    ``reference`` is a sample of the target (g taken as its empirical quantile
    function) or a callable giving g exactly.
    """
    g = _target_map(reference)
    xi = np.random.default_rng(seed).standard_normal(n_probe)
    d2 = (g(xi) - gmap(xi)) ** 2
    xb = gmap.basis.xi_bar
    lo, hi = xi < -xb, xi > xb
    mid = ~(lo | hi)
    parts = [float(np.sum(d2[m]) / n_probe) for m in (lo, mid, hi)]
    return ErrorReport(float(d2.mean()), parts[0], parts[1], parts[2])


def interior_error(g: Callable, gmap: PiecewiseMap, n_quad: int = 256) -> float:
    """E[(g - g_M)^2(xi) 1_{|xi| <= xi_bar}] by Gauss-Legendre quadrature."""
    x, w = np.polynomial.legendre.leggauss(n_quad)
    xb = gmap.basis.xi_bar
    t = xb * x
    return float(xb * np.sum(w * (g(t) - gmap(t)) ** 2 * norm.pdf(t)))


def tail_errors(g: Callable, gmap: PiecewiseMap) -> tuple[float, float]:
    """(eps_-, eps_+) by adaptive quadrature on the two half-lines.

    phi underflows past |xi| = 38, so the half-lines are cut there.
    """
    xb = gmap.basis.xi_bar
    f = lambda t: float((g(t) - gmap(t)) ** 2 * norm.pdf(t))
    lo = integrate.quad(f, -XI_CUT, -xb, epsabs=0, epsrel=1e-10, limit=200)[0]
    hi = integrate.quad(f, xb, XI_CUT, epsabs=0, epsrel=1e-10, limit=200)[0]
    return lo, hi


@dataclass
class SweepResult:
    x: list[float]
    eps: list[float]
    slope: float
    label: str = "M"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([self.label, "epsilon"])
        w.writerows(zip(self.x, self.eps))
        return buf.getvalue()


def _log_slope(x, eps) -> float:
    eps = np.maximum(np.asarray(eps, dtype=float), np.finfo(float).tiny)
    return float(np.polyfit(np.asarray(x, dtype=float), np.log(eps), 1)[0])


def sweep_interior_error(target, m_values: Sequence[int], xi_bar: float = 2.46,
                         n_probe: int = 10_000, seed=None) -> SweepResult:
    """eps_M against the number of nodes M, with the slope of log eps_M vs M.

    Exact maps use CVs a_k = g(xi_k) and quadrature; sample targets use
    empirical-quantile CVs and normal probes (so they carry a noise floor).
    """
    eps = []
    for m in m_values:
        basis = make_basis(int(m), xi_bar)
        if callable(target):
            gmap = build_map(CollocationValues(target(basis.nodes)), basis)
            eps.append(interior_error(target, gmap))
        else:
            gmap = build_map(cvs_from_samples(target, basis), basis)
            eps.append(estimate_sc_error(target, gmap, n_probe, seed).epsilon_mid)
    return SweepResult([int(m) for m in m_values], eps, _log_slope(m_values, eps))


def sweep_tail_error(target: Callable, xi_bars: Sequence[float], m: int = 21) -> dict:
    """eps_- and eps_+ as xi_bar grows (exact map only)."""
    lo, hi = [], []
    for xb in xi_bars:
        basis = make_basis(m, float(xb))
        gmap = build_map(CollocationValues(target(basis.nodes)), basis)
        e_lo, e_hi = tail_errors(target, gmap)
        lo.append(e_lo)
        hi.append(e_hi)
    return {
        "minus": SweepResult(list(map(float, xi_bars)), lo, _log_slope(xi_bars, lo), "xi_bar"),
        "plus": SweepResult(list(map(float, xi_bars)), hi, _log_slope(xi_bars, hi), "xi_bar"),
    }


@dataclass
class HistogramReport:
    ratios: list[float]
    counts: list[int]
    edges: list[float]
    fraction_within_3se: float

    def summary(self) -> dict:
        r = np.asarray(self.ratios)
        return {
            "n_cases": int(r.size),
            "fraction_within_3se": self.fraction_within_3se,
            "median_ratio": float(np.median(r)) if r.size else math.nan,
            "max_ratio": float(r.max()) if r.size else math.nan,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_lo", "bin_hi", "count"])
        w.writerows(zip(self.edges[:-1], self.edges[1:], self.counts))
        return buf.getvalue()


def error_ratio(price: float, bench: float, se: float) -> float:
    err = abs(price - bench)
    if se == 0:
        return 0.0 if err == 0 else math.inf
    return err / se


def error_histogram(cases: Iterable, pricer: Callable, benchmark: Callable) -> HistogramReport:
    """eps_P / SE for every case; bins of width 0.5 in SE units.

    ``pricer(case) -> price``; ``benchmark(case) -> (price, se)``.
    """
    ratios = []
    for case in cases:
        bench, se = benchmark(case)
        ratios.append(error_ratio(pricer(case), bench, se))
    return histogram_from_ratios(ratios)


def histogram_from_ratios(ratios) -> HistogramReport:
    r = np.asarray(ratios, dtype=float)
    finite = r[np.isfinite(r)]
    top = max(3.0, float(finite.max()) if finite.size else 0.0)
    edges = np.arange(0.0, HIST_BIN_WIDTH * (math.floor(top / HIST_BIN_WIDTH) + 2), HIST_BIN_WIDTH)
    counts, _ = np.histogram(np.minimum(r, edges[-1]), bins=edges)
    frac = float(np.mean(r <= 3.0)) if r.size else math.nan
    return HistogramReport(r.tolist(), counts.tolist(), edges.tolist(), frac)
