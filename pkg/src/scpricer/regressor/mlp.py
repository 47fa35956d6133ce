"""Dense ReLU network with hand-written backprop and Adam."""
from __future__ import annotations

import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..collocation import CollocationValues, isotonic

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3000
    batch_size: int = 1024
    lr: float = 1e-3
    decay_rate: float = 0.1
    decay_step: int = 1000
    fractions: tuple[float, float, float] = (0.7, 0.2, 0.1)
    seed: int = 0
    hidden: tuple[int, ...] = (200, 200, 200)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if abs(sum(self.fractions) - 1.0) > 1e-12:
            raise ValueError(f"split fractions must sum to 1, got {self.fractions}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.decay_rate ** (epoch // self.decay_step)


def _span(lo, hi):
    s = hi - lo
    return np.where(s > 0, s, 1.0)


@dataclass
class MLPModel:
    """H~: parameters -> collocation values.

    Inputs and outputs are min-max scaled to [0, 1] with the stored ranges;
    ``weights[l]`` has shape (fan_in, fan_out).
    """

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    in_min: np.ndarray
    in_max: np.ndarray
    out_min: np.ndarray
    out_max: np.ndarray
    schema: str = ""
    feature_names: list[str] = field(default_factory=list)
    basis: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    def __post_init__(self):
        sizes = self.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("layer count mismatch")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[l], sizes[l + 1]) or b.shape != (sizes[l + 1],):
                raise ValueError(f"layer {l}: bad shapes {w.shape}, {b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {l}: non-finite weights")

    @classmethod
    def init(cls, layer_sizes, in_min, in_max, out_min, out_max, rng, **kw) -> "MLPModel":
        """He-style uniform init: U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero biases."""
        ws, bs = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            lim = math.sqrt(6.0 / fan_in)
            ws.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            bs.append(np.zeros(fan_out))
        return cls(list(layer_sizes), ws, bs, np.asarray(in_min, float), np.asarray(in_max, float),
                   np.asarray(out_min, float), np.asarray(out_max, float), **kw)

    # scaling
    def norm_in(self, p):
        return (np.asarray(p, dtype=float) - self.in_min) / _span(self.in_min, self.in_max)

    def norm_out(self, a):
        return (np.asarray(a, dtype=float) - self.out_min) / _span(self.out_min, self.out_max)

    def denorm_out(self, y):
        return self.out_min + np.asarray(y, dtype=float) * _span(self.out_min, self.out_max)

    # network
    def forward(self, x, cache: bool = False):
        h = np.asarray(x, dtype=float)
        acts = [h]
        pre = []
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            h = z if l == last else np.maximum(z, 0.0)
            if cache:
                pre.append(z)
                acts.append(h)
        return (h, acts, pre) if cache else h

    def gradients(self, x, y):
        """MSE loss and its gradients w.r.t. every weight and bias."""
        out, acts, pre = self.forward(x, cache=True)
        diff = out - y
        loss = float(np.mean(diff**2))
        d = 2.0 * diff / diff.size
        gw = [None] * len(self.weights)
        gb = [None] * len(self.weights)
        for l in range(len(self.weights) - 1, -1, -1):
            gw[l] = acts[l].T @ d
            gb[l] = d.sum(axis=0)
            if l:
                d = (d @ self.weights[l].T) * (pre[l - 1] > 0)
        return loss, gw, gb

    def predict(self, p) -> np.ndarray:
        """De-normalized raw network output (no monotone projection)."""
        p = np.asarray(p, dtype=float)
        if p.shape[-1] != self.layer_sizes[0]:
            raise ValueError(f"expected {self.layer_sizes[0]} inputs, got {p.shape[-1]}")
        return self.denorm_out(self.forward(self.norm_in(p)))

    def outside_range(self, p, tol: float = 1e-9) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        span = _span(self.in_min, self.in_max)
        return np.any((p < self.in_min - tol * span) | (p > self.in_max + tol * span), axis=1)

    # serialization
    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "layer_sizes": list(self.layer_sizes),
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "norm_stats": {
                "in_min": self.in_min.tolist(),
                "in_max": self.in_max.tolist(),
                "out_min": self.out_min.tolist(),
                "out_max": self.out_max.tolist(),
            },
            "feature_names": list(self.feature_names),
            "basis": dict(self.basis),
            "metrics": self.metrics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLPModel":
        ns = d["norm_stats"]
        return cls(
            layer_sizes=[int(s) for s in d["layer_sizes"]],
            weights=[np.array(w, dtype=float).reshape(a, b) for w, a, b in
                     zip(d["weights"], d["layer_sizes"][:-1], d["layer_sizes"][1:])],
            biases=[np.array(b, dtype=float) for b in d["biases"]],
            in_min=np.array(ns["in_min"], dtype=float),
            in_max=np.array(ns["in_max"], dtype=float),
            out_min=np.array(ns["out_min"], dtype=float),
            out_max=np.array(ns["out_max"], dtype=float),
            schema=d.get("schema", ""),
            feature_names=list(d.get("feature_names", [])),
            basis=dict(d.get("basis", {})),
            metrics=dict(d.get("metrics", {})),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "MLPModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def split_indices(n: int, fractions, seed: int):
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def r2_scores(y_true, y_pred) -> np.ndarray:
    """Per-output coefficient of determination."""
    ss_res = np.sum((y_true - y_pred) ** 2, axis=0)
    ss_tot = np.sum((y_true - y_true.mean(axis=0)) ** 2, axis=0)
    return 1.0 - ss_res / np.where(ss_tot > 0, ss_tot, 1.0)


def train(ts, cfg: TrainConfig = TrainConfig(), log_every: int = 0) -> MLPModel:
    # overflow shows up as a non-finite loss, reported as TrainingDiverged
    with np.errstate(over="ignore", invalid="ignore"):
        return _train(ts, cfg, log_every)


def _train(ts, cfg: TrainConfig, log_every: int) -> MLPModel:
    """Fit an MLP to ``ts`` with Adam on the MSE of min-max scaled targets.

    Uses a train/validation/test split per ``cfg.fractions``, a step-decay
    learning rate and keeps the weights of the epoch with the lowest
    validation loss. Test-split metrics end up in ``model.metrics``.
    """
    x_all, y_all = np.asarray(ts.inputs, float), np.asarray(ts.outputs, float)
    tr, va, te = split_indices(len(x_all), cfg.fractions, cfg.seed)
    if tr.size == 0:
        raise ValueError("empty training split")
    rng = np.random.default_rng(cfg.seed + 1)
    sizes = [x_all.shape[1], *cfg.hidden, y_all.shape[1]]
    model = MLPModel.init(
        sizes,
        x_all[tr].min(axis=0), x_all[tr].max(axis=0),
        y_all[tr].min(axis=0), y_all[tr].max(axis=0),
        rng,
        schema=getattr(ts, "schema", ""),
        feature_names=list(getattr(ts, "feature_names", [])),
        basis=dict(getattr(ts, "basis", {}) or {}),
    )
    xn, yn = model.norm_in(x_all), model.norm_out(y_all)
    x_tr, y_tr = xn[tr], yn[tr]
    x_va, y_va = (xn[va], yn[va]) if va.size else (x_tr, y_tr)

    m_w = [np.zeros_like(w) for w in model.weights]
    v_w = [np.zeros_like(w) for w in model.weights]
    m_b = [np.zeros_like(b) for b in model.biases]
    v_b = [np.zeros_like(b) for b in model.biases]
    step = 0
    best = (math.inf, None, None, -1)
    history = []
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = rng.permutation(tr.size)
        epoch_loss = 0.0
        for s in range(0, tr.size, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            loss, gw, gb = model.gradients(x_tr[idx], y_tr[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, step {step}, lr={lr:g}; "
                    f"last validation loss {best[0]:.3g}"
                )
            epoch_loss += loss * idx.size
            step += 1
            c1 = 1.0 - cfg.beta1**step
            c2 = 1.0 - cfg.beta2**step
            for params, grads, m, v in ((model.weights, gw, m_w, v_w), (model.biases, gb, m_b, v_b)):
                for l in range(len(params)):
                    m[l] = cfg.beta1 * m[l] + (1 - cfg.beta1) * grads[l]
                    v[l] = cfg.beta2 * v[l] + (1 - cfg.beta2) * grads[l] ** 2
                    params[l] -= lr * (m[l] / c1) / (np.sqrt(v[l] / c2) + cfg.eps)
        val = float(np.mean((model.forward(x_va) - y_va) ** 2))
        history.append((epoch_loss / tr.size, val))
        if val < best[0]:
            best = (val, [w.copy() for w in model.weights], [b.copy() for b in model.biases], epoch)
        if log_every and epoch % log_every == 0:
            log.info("epoch %d lr %.1e train %.3e val %.3e", epoch, lr, history[-1][0], val)
    model.weights, model.biases = best[1], best[2]

    metrics = {
        "best_epoch": best[3],
        "best_val_mse": best[0],
        "initial_train_mse": history[0][0],
        "final_train_mse": history[-1][0],
        "train_seconds": time.perf_counter() - t0,
        "n_train": int(tr.size),
        "n_val": int(va.size),
        "n_test": int(te.size),
    }
    if te.size:
        pred = model.predict(x_all[te])
        r2 = r2_scores(y_all[te], pred)
        metrics["test_mse"] = float(np.mean((model.norm_out(pred) - yn[te]) ** 2))
        metrics["test_r2"] = r2.tolist()
        metrics["test_r2_min"] = float(r2.min())
    model.metrics = metrics
    return model


def predict_cvs(model: MLPModel, p) -> CollocationValues:
    """Forward pass, de-normalization and isotonic projection of the CVs."""
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError("predict_cvs takes a single parameter vector")
    if model.outside_range(p)[0]:
        warnings.warn("parameter vector outside the trained input ranges (extrapolation)", stacklevel=2)
    return CollocationValues(isotonic(model.predict(p)))


def predict_cvs_batch(model: MLPModel, p) -> np.ndarray:
    """Row-wise ``predict_cvs`` for a matrix of inputs (projection only where needed)."""
    out = model.predict(np.atleast_2d(p))
    bad = np.flatnonzero(np.any(np.diff(out, axis=1) < 0, axis=1))
    for i in bad:
        out[i] = isotonic(out[i])
    return out
