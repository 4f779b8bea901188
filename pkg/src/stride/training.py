"""End-to-end optimization: AdamW, plateau scheduling, early stopping.

The minibatch unit is one (trajectory, t) window; all sampled query
points of a window share its latent, so each step costs one encoder pass
plus one decoder pass over batch*queries coordinates.  The tape is
rebuilt per step.

Determinism: batch order, query sampling and validation draws all derive
from the config seed through counters, so identical configs reproduce
identical checkpoints bit for bit.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from . import autodiff as ad
from .dataio import Dataset
from .datagen import extract_sensor_series
from .encoders import window_batch
from .errors import ConfigError, ContractError, TrainingError
from .model import StrideModel
from .util import derive_seed, rng_for


@dataclass
class TrainConfig:
    lag_k: int = 50
    n_query: int = 100
    batch_size: int = 128
    learning_rate: float = 2e-3
    weight_decay: float = 1e-6
    scheduler_gamma: float = 0.4
    scheduler_patience: int = 10
    early_stop_min_rel_improve: float = 0.005
    early_stop_window: int = 10
    early_stop_horizon: int = 80
    max_epochs: int = 200
    seed: int = 0
    window_stride: int = 1  # train on every s-th window, rotating offset per epoch

    def __post_init__(self):
        if not (0.0 < self.scheduler_gamma < 1.0):
            raise ConfigError(f"scheduler gamma {self.scheduler_gamma} not in (0, 1)")
        for name in ("n_query", "batch_size", "learning_rate", "scheduler_patience",
                     "early_stop_window", "early_stop_horizon", "window_stride"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_epochs < 0 or self.lag_k < 0 or self.weight_decay < 0:
            raise ConfigError("negative value in training config")


@dataclass
class TrainLog:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    stopped_early: bool = False
    best_epoch: int = -1

    def append(self, epoch, train_loss, val_loss, lr, seconds):
        self.epochs.append(int(epoch))
        self.train_loss.append(float(train_loss))
        self.val_loss.append(float(val_loss))
        self.lr.append(float(lr))
        self.seconds.append(float(seconds))

    def to_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss,lr,seconds"]
        for i in range(len(self.epochs)):
            lines.append(f"{self.epochs[i]},{self.train_loss[i]!r},{self.val_loss[i]!r},"
                         f"{self.lr[i]!r},{self.seconds[i]:.3f}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_csv())


# ---------------------------------------------------------------------------
# optimizer and schedules
# ---------------------------------------------------------------------------


def adamw_state(params: dict[str, np.ndarray]) -> dict:
    return {"step": 0,
            "m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()}}


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: dict, lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
               weight_decay: float = 0.0) -> None:
    """Decoupled-weight-decay Adam update, in place."""
    b1, b2 = betas
    state["step"] += 1
    t = state["step"]
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for k, p in params.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(p)
        gs = float(np.sum(g))
        if not math.isfinite(gs) and not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient for '{k}' at step {t}")
        m = state["m"][k]
        v = state["v"][k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if weight_decay:
            p -= lr * weight_decay * p
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class ReduceLROnPlateau:
    """Multiply lr by gamma after ``patience`` epochs without improvement."""

    def __init__(self, lr: float, gamma: float, patience: int, rel_threshold: float = 1e-4):
        self.lr = lr
        self.gamma = gamma
        self.patience = patience
        self.rel_threshold = rel_threshold
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best * (1.0 - self.rel_threshold):
            self.best = val_loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.gamma
                self.bad_epochs = 0
        return self.lr


class EarlyStopper:
    """Stop once the trailing-window best no longer improves on the best
    from ``horizon`` epochs earlier by the required relative margin."""

    def __init__(self, min_rel_improve: float, window: int, horizon: int):
        self.min_rel_improve = min_rel_improve
        self.window = window
        self.horizon = horizon
        self.history: list[float] = []

    def update(self, val_loss: float) -> bool:
        self.history.append(float(val_loss))
        e = len(self.history)
        if e <= self.horizon:
            return False
        past_best = min(self.history[: e - self.horizon])
        recent_best = min(self.history[-self.window:])
        return recent_best > past_best * (1.0 - self.min_rel_improve)


# ---------------------------------------------------------------------------
# loss and sampling
# ---------------------------------------------------------------------------


def sample_queries(traj, t: int, n: int, seed) -> tuple[np.ndarray, np.ndarray]:
    """Uniform without-replacement draw of query points for snapshot ``t``."""
    n_xi = traj.n_xi
    if n > n_xi:
        raise ContractError(f"cannot sample {n} of {n_xi} grid points")
    if n == n_xi:
        idx = np.arange(n_xi)
    else:
        idx = np.random.default_rng(seed).choice(n_xi, size=n, replace=False)
    return traj.coords[idx], traj.fields[t, idx]


def _batch_loss(model: StrideModel, graph: ad.Graph, wrapped, windows_norm,
                xi_norm, targets_norm) -> ad.Tensor:
    pred = model.forward_tape(graph, wrapped, windows_norm, xi_norm)
    diff = ad.sub(pred, graph.tensor(targets_norm))
    n_terms = windows_norm.shape[0] * (xi_norm.shape[0] // windows_norm.shape[0])
    return ad.scale(ad.tsum(ad.square(diff)), 1.0 / n_terms)


def mse_loss(model: StrideModel, minibatch: Iterable) -> ad.Tensor:
    """Mean over windows and query points of squared channel-norm error.

    ``minibatch`` yields (window, queries, targets) triples in physical
    units with a shared query count; inputs are normalized with the
    model's statistics before the average.
    """
    windows, xis, targets = [], [], []
    q = None
    for window, xi, tgt in minibatch:
        xi = np.atleast_2d(xi)
        if q is None:
            q = xi.shape[0]
        elif xi.shape[0] != q:
            raise ContractError("all windows in a minibatch share one query count")
        windows.append(window.values)
        xis.append(model.normalizer.normalize_coords(xi))
        targets.append(model.normalizer.normalize_fields(np.atleast_2d(tgt)))
    wn = model.normalizer.normalize_windows(np.stack(windows), model.sensor_set,
                                            model.lag_k)
    graph = ad.Graph()
    wrapped = model.wrap_params(graph, trainable=True)
    return _batch_loss(model, graph, wrapped, wn, np.concatenate(xis),
                       np.concatenate(targets))


# ---------------------------------------------------------------------------
# generic training loop
# ---------------------------------------------------------------------------


def run_training(params: dict[str, np.ndarray],
                 train_step_batches: Callable[[int], Iterable],
                 batch_loss: Callable[[ad.Graph, dict, object], ad.Tensor],
                 wrap: Callable[[ad.Graph, bool], dict],
                 val_loss: Callable[[], float],
                 cfg: TrainConfig) -> TrainLog:
    """Shared epoch loop: AdamW + plateau schedule + early stop + best restore.

    ``train_step_batches(epoch)`` yields opaque batch descriptors that
    ``batch_loss`` turns into a scalar tape tensor.
    """
    log = TrainLog()
    if cfg.max_epochs == 0:
        return log
    state = adamw_state(params)
    sched = ReduceLROnPlateau(cfg.learning_rate, cfg.scheduler_gamma, cfg.scheduler_patience)
    stopper = EarlyStopper(cfg.early_stop_min_rel_improve, cfg.early_stop_window,
                           cfg.early_stop_horizon)
    lr = cfg.learning_rate
    best_val = math.inf
    best_params: dict[str, np.ndarray] = {k: v.copy() for k, v in params.items()}
    best_epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        total, count = 0.0, 0
        for batch in train_step_batches(epoch):
            graph = ad.Graph(validate=False)
            wrapped = wrap(graph, True)
            loss = batch_loss(graph, wrapped, batch)
            lv = float(loss.value)
            if not math.isfinite(lv):
                raise TrainingError(f"non-finite loss at epoch {epoch} step {count}")
            node_to_name = {wrapped[k].node_id: k for k in params}
            grads_by_id = graph.backward(loss)
            grads = {node_to_name[i]: g for i, g in grads_by_id.items()
                     if i in node_to_name}
            adamw_step(params, grads, state, lr, weight_decay=cfg.weight_decay)
            total += lv
            count += 1
        vl = val_loss()
        if not math.isfinite(vl):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        if vl < best_val:
            best_val = vl
            best_epoch = epoch
            for k, v in params.items():
                best_params[k][...] = v
        lr = sched.step(vl)
        log.append(epoch, total / max(count, 1), vl, lr, time.perf_counter() - t0)
        if stopper.update(vl):
            log.stopped_early = True
            break
    for k, v in params.items():
        v[...] = best_params[k]
    log.best_epoch = best_epoch
    return log


# ---------------------------------------------------------------------------
# full-model training
# ---------------------------------------------------------------------------


def _prepare_series(model: StrideModel, dataset: Dataset, sensor_series) -> dict[int, np.ndarray]:
    if sensor_series is not None:
        return dict(sensor_series)
    return {i: extract_sensor_series(dataset.trajectories[i], model.sensor_set)
            for i in range(dataset.n_traj)}


def train(model: StrideModel, dataset: Dataset, cfg: TrainConfig,
          sensor_series: Optional[dict[int, np.ndarray]] = None) -> tuple[StrideModel, TrainLog]:
    """Optimize ``model`` on the dataset's train split; returns the best-
    validation parameters and the per-epoch log."""
    if not dataset.split("train") or not dataset.split("val"):
        raise ContractError("training needs non-empty train and val splits")
    series = _prepare_series(model, dataset, sensor_series)
    coords_norm = model.normalizer.normalize_coords(dataset.coords)
    n_xi = dataset.n_xi
    n_q = min(cfg.n_query, n_xi)
    params = model.trainable_arrays()

    def assemble(epoch: int, items: list[tuple[int, int]], query_tag: int):
        wins = np.concatenate([window_batch(series[j], cfg.lag_k, [t])
                               for j, t in items], axis=0)
        wn = model.normalizer.normalize_windows(wins, model.sensor_set, cfg.lag_k)
        xi = np.empty((len(items) * n_q, coords_norm.shape[1]))
        tgt = np.empty((len(items) * n_q, dataset.d_x))
        for i, (j, t) in enumerate(items):
            if n_q == n_xi:
                idx = np.arange(n_xi)
            else:
                rng = np.random.default_rng(derive_seed(cfg.seed, query_tag, epoch, j, t))
                idx = rng.choice(n_xi, size=n_q, replace=False)
            xi[i * n_q:(i + 1) * n_q] = coords_norm[idx]
            tgt[i * n_q:(i + 1) * n_q] = dataset.trajectories[j].fields[t, idx]
        return wn, xi, model.normalizer.normalize_fields(tgt)

    def train_step_batches(epoch: int):
        offset = (epoch - 1) % cfg.window_stride
        pairs = [(j, t) for j in dataset.split("train")
                 for t in range(offset, dataset.n_t, cfg.window_stride)]
        order = rng_for(cfg.seed, 6, epoch).permutation(len(pairs))
        for s in range(0, len(order), cfg.batch_size):
            items = [pairs[i] for i in order[s: s + cfg.batch_size]]
            yield assemble(epoch, items, query_tag=5)

    def batch_loss(graph, wrapped, batch):
        wn, xi, tgt = batch
        return _batch_loss(model, graph, wrapped, wn, xi, tgt)

    val_pairs = [(j, t) for j in dataset.split("val") for t in range(dataset.n_t)]

    def val_loss() -> float:
        total = 0.0
        for s in range(0, len(val_pairs), cfg.batch_size):
            items = val_pairs[s: s + cfg.batch_size]
            wn, xi, tgt = assemble(0, items, query_tag=7)
            graph = ad.Graph(validate=False)
            wrapped = model.wrap_params(graph, trainable=False)
            pred = model.forward_tape(graph, wrapped, wn, xi)
            total += float(np.sum((pred.value - tgt) ** 2))
        return total / (len(val_pairs) * n_q)

    log = run_training(params, train_step_batches, batch_loss,
                       lambda g, t: model.wrap_params(g, t), val_loss, cfg)
    return model, log
