"""Command-line front end: gen-data, train, price, diagnose.

Configs are INI files (``[section]`` plus ``key = value``). Relative paths
inside a config resolve against the config file's directory.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .collocation import CollocationValues, build_map, make_basis, sample_through
from .conditional import (
    build_grid, build_marginal, price_fxfla, price_table_csv, row_mean_violations, sample_joint,
)
from .diagnostics import (
    estimate_sc_error, lognormal_quantile, sweep_interior_error, sweep_tail_error,
)
from .heston import HestonParams, SimConfig
from .payoffs import MonitoringSchedule, PayoffSpec, mc_price, price_fixed_strike, price_floating_strike
from .regressor import GenerationSpec, MLPModel, TrainConfig, TrainingDiverged, TrainingSet, train
from .regressor import generate_training_set, predict_cvs
from .semianalytic import semi_analytic_price

log = logging.getLogger("scpricer")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
MODES = ("mc-benchmark", "sc", "sa", "fxfla")
CONFIG_DIR = Path(__file__).with_name("configs")


class ConfigError(Exception):
    pass


class NumericalFailure(Exception):
    pass


# ---------------------------------------------------------------- config helpers

class Config:
    def __init__(self, path: Path, out: Path | None = None):
        self.path = path
        self.out = out
        self.raw = path.read_bytes()
        self.cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            self.cp.read_string(self.raw.decode())
        except (configparser.Error, UnicodeDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.raw).hexdigest()

    def section(self, name: str, required: bool = True) -> configparser.SectionProxy | dict:
        if name in self.cp:
            return self.cp[name]
        if required:
            raise ConfigError(f"{self.path}: missing [{name}] section")
        return {}

    def get(self, section, key, conv=str, default=None):
        sec = self.section(section, default is None)
        if key not in sec:
            if default is None:
                raise ConfigError(f"{self.path}: [{section}] needs '{key}'")
            return default
        try:
            return conv(sec[key])
        except ValueError as exc:
            raise ConfigError(f"{self.path}: [{section}] {key}: {exc}") from None

    def resolve(self, value: str) -> Path:
        """Absolute paths as given; otherwise the config dir, then --out, then cwd."""
        p = Path(value)
        if p.is_absolute():
            return p
        for base in (self.path.parent, self.out):
            if base is not None and (base / p).exists():
                return base / p
        return p

    def existing(self, section, key) -> Path:
        p = self.resolve(self.get(section, key))
        if not p.exists():
            raise ConfigError(f"{self.path}: [{section}] {key} -> {p} does not exist")
        return p


def floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def ints(text: str) -> list[int]:
    out = []
    for tok in text.replace(",", " ").split():
        if ".." in tok:
            lo, hi = tok.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(tok))
    return out


def boolean(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fraction(text: str) -> float:
    # allows "1/800"
    if "/" in text:
        num, den = text.split("/")
        return float(num) / float(den)
    return float(text)


def heston_from(cfg: Config, section: str = "model") -> HestonParams:
    sec = cfg.section(section)
    kw = {}
    for f in ("r", "kappa", "gamma", "rho", "v_bar", "v0", "s0", "shift"):
        if f in sec:
            kw[f] = cfg.get(section, f, float)
    try:
        return HestonParams(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cfg.path}: [{section}] {exc}") from None


def schedule_from(cfg: Config) -> MonitoringSchedule:
    T = cfg.get("contract", "maturity", _fraction)
    n = cfg.get("contract", "n_dates", int)
    lag = cfg.get("contract", "lag", _fraction, 0.0)
    try:
        if lag > 0:
            return MonitoringSchedule.lagged(T, n, lag)
        return MonitoringSchedule.equally_spaced(T, n, cfg.get("contract", "start", _fraction, 0.0))
    except ValueError as exc:
        raise ConfigError(f"{cfg.path}: [contract] {exc}") from None


def sim_from(cfg: Config, horizon: float, seed: int, section: str = "mc") -> SimConfig:
    try:
        return SimConfig(
            n_paths=cfg.get(section, "n_paths", int),
            dt=cfg.get(section, "dt", _fraction),
            horizon=horizon,
            seed=seed,
            scheme=cfg.get(section, "scheme", str, "almost-exact"),
        )
    except ValueError as exc:
        raise ConfigError(f"{cfg.path}: [{section}] {exc}") from None


def generation_from(cfg: Config, seed: int) -> GenerationSpec:
    sec = cfg.section("generation")
    conv = {
        "schema": str, "aggregator": str, "n_sets": int, "n_maturities": int, "n_paths": int,
        "window_n": int, "maturity_stride": int, "m": int, "tail_degree": int, "q_count": int,
        "n_closest": int, "allow_t0": boolean, "t_max": _fraction, "dt": _fraction,
        "window_lag": _fraction, "s0": float, "xi_bar": float, "p_min": float, "p_max": float,
    }
    known = {f.name for f in fields(GenerationSpec)}
    kw = {}
    for key in sec:
        if key not in known or key in ("ranges", "fixed", "seed"):
            raise ConfigError(f"{cfg.path}: [generation] unknown key '{key}'")
        kw[key] = cfg.get("generation", key, conv.get(key, float))
    ranges = {k: tuple(floats(v)) for k, v in cfg.section("ranges").items()}
    if any(len(v) != 2 for v in ranges.values()):
        raise ConfigError(f"{cfg.path}: [ranges] entries need exactly two bounds")
    fixed = {k: float(v) for k, v in cfg.section("fixed", required=False).items()}
    try:
        return GenerationSpec(ranges=ranges, fixed=fixed, seed=seed, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{cfg.path}: [generation] {exc}") from None


def train_config_from(cfg: Config, seed: int) -> TrainConfig:
    sec = cfg.section("train")
    kw = {"seed": seed}
    for key, conv in (("epochs", int), ("batch_size", int), ("lr", float), ("decay_rate", float),
                      ("decay_step", int)):
        if key in sec:
            kw[key] = cfg.get("train", key, conv)
    if "hidden" in sec:
        kw["hidden"] = tuple(ints(sec["hidden"]))
    if "fractions" in sec:
        kw["fractions"] = tuple(floats(sec["fractions"]))
    try:
        return TrainConfig(**kw)
    except ValueError as exc:
        raise ConfigError(f"{cfg.path}: [train] {exc}") from None


# ---------------------------------------------------------------- outputs

def write_manifest(out: Path, command: str, cfg: Config, seed: int, threads: int, extra: dict):
    manifest = {
        "command": command,
        "config": str(cfg.path),
        "config_sha256": cfg.sha256,
        "seed": seed,
        "threads": threads,
        "versions": {
            "scpricer": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        **extra,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _seed(args, cfg: Config) -> int:
    if args.seed is not None:
        return args.seed
    return cfg.get("run", "seed", int, 0)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args, cfg: Config) -> dict:
    seed = _seed(args, cfg)
    spec = generation_from(cfg, seed)
    try:
        spec.maturity_indices()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    t0 = time.perf_counter()
    try:
        ts = generate_training_set(spec, threads=args.threads)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        raise NumericalFailure(f"simulation failed: {exc}") from None
    if not np.all(np.isfinite(ts.outputs)):
        raise NumericalFailure("non-finite collocation values in the generated set")
    path = args.out / "training_set.csv"
    ts.to_csv(path)
    (args.out / "basis.json").write_text(json.dumps(ts.basis, indent=2) + "\n")
    print(f"rows: {len(ts)}  ({time.perf_counter() - t0:.1f}s)  -> {path}")
    return {"seed": seed, "outputs": [path.name, "basis.json"], "rows": len(ts)}


def cmd_train(args, cfg: Config) -> dict:
    seed = _seed(args, cfg)
    data = cfg.existing("train", "data")
    basis = {}
    basis_file = data.with_name("basis.json")
    if "basis" in cfg.section("train"):
        basis_file = cfg.existing("train", "basis")
    if basis_file.exists():
        basis = json.loads(basis_file.read_text())
    try:
        ts = TrainingSet.from_csv(data, basis)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"bad training set: {exc}") from None
    tc = train_config_from(cfg, seed)
    try:
        model = train(ts, tc)
    except TrainingDiverged as exc:
        raise NumericalFailure(str(exc)) from None
    path = args.out / "model.json"
    model.save(path)
    m = model.metrics
    print(f"layers {model.layer_sizes}  best epoch {m['best_epoch']}  "
          f"test R2 min {m.get('test_r2_min', float('nan')):.5f}  -> {path}")
    return {"seed": seed, "outputs": [path.name], "test_r2_min": m.get("test_r2_min")}


def _strikes(cfg: Config) -> list[float]:
    return floats(cfg.get("contract", "strikes"))


def _omegas(cfg: Config) -> list[int]:
    om = ints(cfg.get("contract", "omega", str, "1"))
    if any(o not in (1, -1) for o in om):
        raise ConfigError("omega must be 1 or -1")
    return om


def _price_mc(args, cfg, seed):
    params = heston_from(cfg)
    sched = schedule_from(cfg)
    sim = sim_from(cfg, sched.maturity, seed)
    agg = cfg.get("contract", "aggregator", str, "mean")
    floating = cfg.get("contract", "floating", boolean, False)
    rows = []
    for w in _omegas(cfg):
        pricer = price_floating_strike if floating else price_fixed_strike
        res = pricer(params, sim, sched, _strikes(cfg), w, agg, threads=args.threads)
        for k, (v, se) in zip(_strikes(cfg), res):
            k1, k2 = (k, 0.0) if floating else (0.0, k)
            rows.append({"K1": k1, "K2": k2, "omega": w, "price": v, "std_err": se})
    return rows


def _sc_map(model_path: Path, params: HestonParams, maturity: float):
    """Map of A(S) from the trained regressor at (params, T); CVs are stored per unit s0."""
    model = MLPModel.load(model_path)
    names = model.feature_names or ["r", "kappa", "gamma", "rho", "v_bar", "v0", "T"]
    values = {"r": params.r, "kappa": params.kappa, "gamma": params.gamma, "rho": params.rho,
              "v_bar": params.v_bar, "v0": params.v0, "T": maturity}
    p = [values[n] for n in names]
    # A is homogeneous in S0 and the min/max shift exactly with theta
    cvs = predict_cvs(model, p).scaled(params.s0, params.shift)
    b = model.basis
    basis = make_basis(int(b.get("m", len(cvs))), float(b.get("xi_bar", make_basis().xi_bar)),
                       int(b.get("tail_degree", 1)))
    return build_map(cvs, basis)


def _price_sc(args, cfg, seed):
    params = heston_from(cfg)
    T = cfg.get("contract", "maturity", _fraction)
    gmap = _sc_map(cfg.existing("sc", "model"), params, T)
    x = sample_through(gmap, cfg.get("sc", "n_draws", int, 100_000), seed)
    disc = math.exp(-params.r * T)
    rows = []
    for w in _omegas(cfg):
        for k in _strikes(cfg):
            v, se = mc_price(x, None, PayoffSpec("mean", w, 0.0, k), disc)
            rows.append({"K1": 0.0, "K2": k, "omega": w, "price": v, "std_err": se})
    return rows


def _price_sa(args, cfg, seed):
    sec = cfg.section("sa")
    if "model" in sec:
        params = heston_from(cfg)
        T = cfg.get("contract", "maturity", _fraction)
        gmap = _sc_map(cfg.existing("sa", "model"), params, T)
        c = math.exp(-params.r * T)
    else:
        m = cfg.get("sa", "m", int, 21)
        xi_bar = cfg.get("sa", "xi_bar", float, float(make_basis().xi_bar))
        basis = make_basis(m, xi_bar, cfg.get("sa", "tail_degree", int, 1))
        a = sec.get("a", "identity")
        try:
            cvs = CollocationValues(basis.nodes.copy() if a.strip() == "identity" else floats(a))
            gmap = build_map(cvs, basis)
        except ValueError as exc:
            raise ConfigError(f"[sa] {exc}") from None
        c = cfg.get("sa", "prefactor", float, 1.0)
    rows = []
    for w in _omegas(cfg):
        for k in _strikes(cfg):
            rows.append({"K1": 0.0, "K2": k, "omega": w,
                         "price": semi_analytic_price(gmap, k, w, c), "std_err": float("nan")})
    return rows


def _price_fxfla(args, cfg, seed):
    params = heston_from(cfg)
    T = cfg.get("contract", "maturity", _fraction)
    model = MLPModel.load(cfg.existing("fxfla", "model"))
    sim = sim_from(cfg, T, seed)
    marginal = build_marginal(params, sim, T, min_support=min(100_000, sim.n_paths))
    try:
        grid = build_grid(model, params, marginal, T,
                          cfg.get("fxfla", "q_count", int, 15),
                          cfg.get("fxfla", "p_min", float, 0.05),
                          cfg.get("fxfla", "p_max", float, 0.85))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    viol = row_mean_violations(grid)
    if viol > 0.05:
        raise NumericalFailure(f"conditional means decrease on {viol:.0%} of adjacent grid rows")
    mode = cfg.get("fxfla", "sampling", str, "grid")
    outside = cfg.get("fxfla", "outside", str, "extrapolate")
    js = sample_joint(grid, marginal, cfg.get("fxfla", "n_draws", int, 100_000), seed + 1, mode,
                      model, params, T, outside)
    print(f"S(T) draws outside [S^1, S^Q] ({outside}): {js.clamped_fraction:.2%}")
    k1s = floats(cfg.get("fxfla", "k1"))
    k2s = floats(cfg.get("fxfla", "k2"))
    return price_fxfla(js, [(a, b) for a in k1s for b in k2s], _omegas(cfg), math.exp(-params.r * T))


def cmd_price(args, cfg: Config) -> dict:
    mode = args.mode or cfg.get("price", "mode", str, "mc-benchmark")
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}")
    seed = _seed(args, cfg)
    t0 = time.perf_counter()
    handler = {"mc-benchmark": _price_mc, "sc": _price_sc, "sa": _price_sa, "fxfla": _price_fxfla}[mode]
    rows = handler(args, cfg, seed)
    if any(not math.isfinite(r["price"]) for r in rows):
        raise NumericalFailure("non-finite price")
    text = price_table_csv(rows)
    path = args.out / "prices.csv"
    path.write_text(text)
    sys.stdout.write(text)
    print(f"({time.perf_counter() - t0:.1f}s) -> {path}")
    return {"seed": seed, "mode": mode, "outputs": [path.name]}


def cmd_diagnose(args, cfg: Config) -> dict:
    seed = _seed(args, cfg)
    kind = args.mode or cfg.get("diagnose", "kind", str, "interior")
    target = cfg.get("diagnose", "target", str, "lognormal")
    if target != "lognormal":
        raise ConfigError(f"unsupported target {target!r} (only 'lognormal')")
    g = lognormal_quantile(cfg.get("diagnose", "mu", float, 0.0), cfg.get("diagnose", "sigma", float, 0.25))
    xi_bar = cfg.get("diagnose", "xi_bar", float, float(make_basis().xi_bar))
    outputs = []
    summary: dict = {"kind": kind}
    if kind == "interior":
        res = sweep_interior_error(g, ints(cfg.get("diagnose", "m_values", str, "4..12")), xi_bar)
        (args.out / "interior_decay.csv").write_text(res.to_csv())
        outputs.append("interior_decay.csv")
        summary.update(slope=res.slope, m=res.x, eps_M=res.eps)
    elif kind == "tail":
        res = sweep_tail_error(g, floats(cfg.get("diagnose", "xi_bars", str, "1.5 2 2.5 3 3.5")),
                               cfg.get("diagnose", "m", int, 21))
        for side, r in res.items():
            name = f"tail_decay_{side}.csv"
            (args.out / name).write_text(r.to_csv())
            outputs.append(name)
            summary[f"slope_{side}"] = r.slope
            summary[f"eps_{side}"] = r.eps
    elif kind == "sc-error":
        basis = make_basis(cfg.get("diagnose", "m", int, 21), xi_bar)
        gmap = build_map(CollocationValues(g(basis.nodes)), basis)
        rep = estimate_sc_error(g, gmap, cfg.get("diagnose", "n_probe", int, 10_000), seed)
        summary.update(json.loads(rep.to_json()))
    else:
        raise ConfigError(f"unknown diagnostic {kind!r} (interior | tail | sc-error)")
    (args.out / "diagnostics.json").write_text(json.dumps(summary, indent=2) + "\n")
    outputs.append("diagnostics.json")
    print(json.dumps(summary, indent=2))
    return {"seed": seed, "outputs": outputs}


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "price": cmd_price, "diagnose": cmd_diagnose}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scpricer", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="INI file, or the name of a shipped config")
    ap.add_argument("--out", type=Path, default=Path("."), help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="overrides [run] seed")
    ap.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--mode", default=None, help="price mode or diagnostic kind")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def _config_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    shipped = CONFIG_DIR / (name if name.endswith(".ini") else name + ".ini")
    if shipped.exists():
        return shipped
    raise ConfigError(f"config {name!r} not found")


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = Config(_config_path(args.config), args.out)
        args.out.mkdir(parents=True, exist_ok=True)
        extra = COMMANDS[args.command](args, cfg)
        seed = extra.pop("seed")
        write_manifest(args.out, args.command, cfg, seed, args.threads, extra)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
