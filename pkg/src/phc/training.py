"""Losses, regularizers, optimizer, scheduling, and the training loop."""

from __future__ import annotations

import csv
import logging
import time

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward
from .checkpoint import load_tensors, save_tensors
from .data import collate
from .metrics import metric_direction, task_metric
from .rng import derive_rng

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "train_loss", "train_metric", "val_metric", "lr",
               "weight_reg", "contribution_reg", "seconds")


# ---------------------------------------------------------------------------
# Regularizers
# ---------------------------------------------------------------------------

def weight_reg(phm_layers, p: float = 2.0) -> Tensor:
    """Mean over entries of the p-norm taken across the algebra axis of the
    stacked component weight matrices, summed over layers."""
    if p < 1:
        raise ValueError(f"norm order must be >= 1, got {p}")
    total = Tensor(0.0)
    for layer in phm_layers:
        acc = None
        for w in layer.weights:
            term = ad.power(ad.absolute(w), p)
            acc = term if acc is None else acc + term
        norms = ad.power(acc, 1.0 / p)
        total = total + norms.sum() / norms.size
    return total


def contribution_reg(contribution_sets) -> Tensor:
    """l1 mass of the contribution matrices, scaled by 1/n^3 per layer."""
    total = Tensor(0.0)
    for matrices in contribution_sets:
        n = len(matrices)
        acc = None
        for c in matrices:
            if not isinstance(c, Tensor):
                c = Tensor(c)
            term = ad.absolute(c).sum()
            acc = term if acc is None else acc + term
        total = total + acc / float(n ** 3)
    return total


def model_weight_reg(model, p: float = 2.0) -> Tensor:
    return weight_reg(model.phm_layers(), p)


def model_contribution_reg(model) -> Tensor:
    return contribution_reg([layer.contributions for layer in model.phm_layers()])


# ---------------------------------------------------------------------------
# Task losses
# ---------------------------------------------------------------------------

def _logsumexp_rows(z: Tensor) -> Tensor:
    shift = z.data.max(axis=1, keepdims=True)
    z0 = z - Tensor(shift)
    return ad.log(ad.exp(z0).sum(axis=1, keepdims=True)) + Tensor(shift)


def task_loss(logits: Tensor, targets: np.ndarray, task: str) -> Tensor:
    """Mean task loss over the batch.

    Binary and multilabel targets may contain NaN entries, which are
    excluded from the mean (multitask label convention).
    """
    targets = np.asarray(targets, dtype=np.float64)
    if task in ("binary", "multilabel-binary"):
        targets = targets.reshape(logits.shape)
        mask = np.isfinite(targets)
        count = mask.sum()
        if count == 0:
            raise ValueError("task loss undefined: all targets are masked")
        y = Tensor(np.where(mask, targets, 0.0))
        per = ad.softplus(logits) - logits * y
        return (per * Tensor(mask.astype(np.float64))).sum() / float(count)
    if task in ("multiclass", "node-multiclass"):
        labels = targets.ravel().astype(np.int64)
        rows, classes = logits.shape
        if labels.min() < 0 or labels.max() >= classes:
            raise ValueError("class label out of range")
        onehot = np.zeros((rows, classes))
        onehot[np.arange(rows), labels] = 1.0
        logp = logits - _logsumexp_rows(logits)
        return -(logp * Tensor(onehot)).sum() / float(rows)
    if task == "regression-mae":
        targets = targets.reshape(logits.shape)
        return ad.absolute(logits - Tensor(targets)).mean()
    raise ValueError(f"unknown task {task!r}")


def total_loss(logits: Tensor, targets: np.ndarray, model, cfg) -> Tensor:
    """Task loss plus the two regularization terms from the train config."""
    loss = task_loss(logits, targets, cfg.task)
    if cfg.lambda1 > 0:
        loss = loss + cfg.lambda1 * model_weight_reg(model, cfg.p_norm)
    if cfg.lambda2 > 0:
        loss = loss + cfg.lambda2 * model_contribution_reg(model)
    return loss


# ---------------------------------------------------------------------------
# Optimizer and scheduler
# ---------------------------------------------------------------------------

def clip_gradients(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their global l2 norm is at most max_norm.
    Returns the pre-clip norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale
    return total


class Adam:
    """Bias-corrected Adam with optional global-norm gradient clipping."""

    def __init__(self, named_params, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 clip_norm: float = 0.0):
        self.named_params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def zero_grad(self) -> None:
        for _, p in self.named_params:
            p.grad = None

    def step(self) -> None:
        grads = []
        for name, p in self.named_params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {name}")
            grads.append(g.astype(np.float64, copy=True))
        clip_gradients(grads, self.clip_norm)
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for (name, p), g in zip(self.named_params, grads):
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {"adam.step": np.array([float(self.step_count)])}
        for name in self.m:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        self.step_count = int(tensors["adam.step"][0])
        for name in self.m:
            np.copyto(self.m[name], tensors[f"adam.m.{name}"])
            np.copyto(self.v[name], tensors[f"adam.v.{name}"])


class PlateauScheduler:
    """Decays the learning rate by gamma after `patience` epochs without
    improvement; signals stop once the rate falls below min_lr."""

    def __init__(self, lr: float, gamma: float, patience: int,
                 mode: str = "min", min_lr: float = 1e-6):
        if mode not in ("min", "max"):
            raise ValueError(f"unknown mode {mode!r}")
        self.lr = lr
        self.gamma = gamma
        self.patience = patience
        self.mode = mode
        self.min_lr = min_lr
        self.best: float | None = None
        self.bad_epochs = 0
        self.stop = False

    def _improved(self, metric: float) -> bool:
        if self.best is None or not np.isfinite(self.best):
            return True
        if self.mode == "min":
            return metric < self.best
        return metric > self.best

    def step(self, metric: float) -> tuple[float, bool]:
        if self._improved(metric):
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.gamma
                self.bad_epochs = 0
                if self.lr < self.min_lr:
                    self.stop = True
        return self.lr, self.stop

    def state_tensors(self) -> dict[str, np.ndarray]:
        best = self.best if self.best is not None else np.nan
        return {"sched.state": np.array([self.lr, best, float(self.bad_epochs),
                                         1.0 if self.stop else 0.0])}

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        lr, best, bad, stop = tensors["sched.state"]
        self.lr = float(lr)
        self.best = None if np.isnan(best) else float(best)
        self.bad_epochs = int(bad)
        self.stop = bool(stop)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _batch_slices(count: int, batch_size: int):
    for start in range(0, count, batch_size):
        yield slice(start, min(start + batch_size, count))


class Trainer:
    """Deterministic mini-batch training with per-epoch metric logging.

    All randomness (shuffling, dropout masks) is drawn from counter-based
    streams keyed by (seed, purpose, epoch, batch), so a resumed run
    continues exactly where the interrupted one left off.
    """

    def __init__(self, model, train_graphs, val_graphs, cfg, seed: int,
                 log_path=None, resume_log: bool = False):
        self.model = model
        self.cfg = cfg
        self.seed = seed
        self.train_graphs = list(train_graphs)
        self.val_graphs = list(val_graphs)
        self.params = model.trainable_parameters()
        self.opt = Adam(self.params, cfg.lr, clip_norm=cfg.clip_norm)
        self.sched = PlateauScheduler(cfg.lr, cfg.plateau_gamma, cfg.patience,
                                      mode=metric_direction(cfg.task),
                                      min_lr=cfg.min_lr)
        self.epoch = 0
        self.history: list[dict] = []
        self.best_val: float | None = None
        self.extra_meta: dict[str, np.ndarray] = {}
        self.log_path = log_path
        if log_path is not None and not resume_log:
            with open(log_path, "w", newline="", encoding="utf-8") as fh:
                csv.writer(fh).writerow(LOG_COLUMNS)

    # -- evaluation ---------------------------------------------------------

    def predict(self, graphs) -> tuple[np.ndarray, np.ndarray]:
        """Eval-mode logits and targets over a list of graphs."""
        logits = []
        targets = []
        for sl in _batch_slices(len(graphs), self.cfg.batch_size):
            batch = collate(graphs[sl], self.cfg.task)
            logits.append(self.model.forward(batch, training=False).data)
            targets.append(batch.targets)
        return np.concatenate(logits, axis=0), np.concatenate(targets, axis=0)

    def evaluate(self, graphs) -> float:
        if not graphs:
            return float("nan")
        logits, targets = self.predict(graphs)
        return task_metric(self.cfg.task, logits, targets)

    # -- one epoch ----------------------------------------------------------

    def train_epoch(self) -> dict:
        t0 = time.perf_counter()
        order = derive_rng(self.seed, "shuffle", self.epoch).permutation(
            len(self.train_graphs))
        shuffled = [self.train_graphs[i] for i in order]
        loss_sum = 0.0
        graphs_seen = 0
        for bi, sl in enumerate(_batch_slices(len(shuffled), self.cfg.batch_size)):
            batch = collate(shuffled[sl], self.cfg.task)
            rng = derive_rng(self.seed, "dropout", self.epoch, bi)
            self.opt.zero_grad()
            with Tape() as tape:
                logits = self.model.forward(batch, training=True, rng=rng)
                loss = total_loss(logits, batch.targets, self.model, self.cfg)
            backward(tape, loss)
            self.opt.step()
            loss_sum += loss.item() * batch.num_graphs
            graphs_seen += batch.num_graphs

        train_metric = self.evaluate(self.train_graphs)
        val_metric = self.evaluate(self.val_graphs)
        driver = val_metric if self.val_graphs else train_metric
        lr_before = self.sched.lr
        _, _ = self.sched.step(driver)
        self.opt.lr = self.sched.lr

        row = {
            "epoch": self.epoch,
            "train_loss": loss_sum / max(graphs_seen, 1),
            "train_metric": train_metric,
            "val_metric": val_metric,
            "lr": lr_before,
            "weight_reg": model_weight_reg(self.model, self.cfg.p_norm).item(),
            "contribution_reg": model_contribution_reg(self.model).item(),
            "seconds": time.perf_counter() - t0,
        }
        self.history.append(row)
        self.epoch += 1
        if self.log_path is not None:
            with open(self.log_path, "a", newline="", encoding="utf-8") as fh:
                csv.writer(fh).writerow([repr(row[c]) if isinstance(row[c], float)
                                         else row[c] for c in LOG_COLUMNS])
        if self.val_graphs:
            better = (self.best_val is None
                      or (driver < self.best_val
                          if self.sched.mode == "min" else driver > self.best_val))
            if np.isfinite(driver) and better:
                self.best_val = driver
                row["is_best"] = True
        return row

    def fit(self, max_epochs: int | None = None, *, out_dir=None) -> list[dict]:
        """Run epochs until the cap or the scheduler stop flag.

        When ``out_dir`` is given, writes ``last.ckpt`` every epoch and
        ``best.ckpt`` at each new best validation metric.
        """
        cap = self.cfg.epochs if max_epochs is None else max_epochs
        while self.epoch < cap and not self.sched.stop:
            row = self.train_epoch()
            logger.info("epoch %d train_loss=%.6g train_metric=%.6g "
                        "val_metric=%.6g lr=%.3g", row["epoch"], row["train_loss"],
                        row["train_metric"], row["val_metric"], row["lr"])
            if out_dir is not None:
                self.save_checkpoint(out_dir / "last.ckpt")
                if row.get("is_best"):
                    self.save_checkpoint(out_dir / "best.ckpt")
        return self.history

    # -- persistence --------------------------------------------------------

    def state_tensors(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for name, t in self.model.named_tensors():
            out[f"param.{name}"] = t.data
        for name, buf in self.model.named_buffers():
            out[f"buffer.{name}"] = buf
        out.update(self.opt.state_tensors())
        out.update(self.sched.state_tensors())
        best_val = self.best_val if self.best_val is not None else np.nan
        out["meta.trainer"] = np.array([float(self.epoch), best_val])
        out.update(self.extra_meta)
        return out

    def save_checkpoint(self, path) -> None:
        save_tensors(path, self.state_tensors())

    def load_checkpoint(self, path) -> None:
        tensors = load_tensors(path)
        load_model_state(self.model, tensors)
        self.opt.load_state(tensors)
        self.sched.load_state(tensors)
        self.opt.lr = self.sched.lr
        epoch, best_val = tensors["meta.trainer"]
        self.epoch = int(epoch)
        self.best_val = None if np.isnan(best_val) else float(best_val)


def load_model_state(model, tensors: dict[str, np.ndarray]) -> None:
    """Copy ``param.*`` and ``buffer.*`` entries into a built model."""
    for name, t in model.named_tensors():
        key = f"param.{name}"
        if key not in tensors:
            raise ValueError(f"checkpoint is missing parameter {name!r}")
        if tensors[key].shape != t.data.shape:
            raise ValueError(f"checkpoint shape mismatch for {name!r}: "
                             f"{tensors[key].shape} vs {t.data.shape}")
        t.data = tensors[key].copy()
    for name, buf in model.named_buffers():
        key = f"buffer.{name}"
        if key not in tensors:
            raise ValueError(f"checkpoint is missing buffer {name!r}")
        np.copyto(buf, tensors[key])
