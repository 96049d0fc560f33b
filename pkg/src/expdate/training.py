"""Minibatch training loops, optimizers and per-epoch metrics."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .checkpoint import Checkpoint, model_checkpoint, save_checkpoint
from .crnn import CHARSET, Crnn, CrnnConfig, ctc_greedy_decode, ctc_loss, sequence_accuracy
from .synth import Dataset, load_dataset
from .tensor import Rng, Tape, Tensor, backward
from .vae import LCBVAE, VaeConfig

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "sgd_momentum", "adam")
METRIC_FIELDS = ("epoch", "seconds", "loss_total", "loss_recon", "loss_kl", "loss_ctc", "accuracy")


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 50
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    scale: str = "toy"
    clip_norm: float | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.scale not in ("paper", "toy"):
            raise ValueError("scale must be 'paper' or 'toy'")


# --------------------------------------------------------------- optimizers


@dataclass
class OptimizerState:
    step: int = 0
    slots: dict = field(default_factory=dict)


class NonFiniteError(FloatingPointError):
    pass


def optimizer_step(params: dict, grads: dict, state: OptimizerState, config: TrainConfig,
                   momentum: float = 0.9, betas=(0.9, 0.999), eps: float = 1e-8):
    """One update; returns ``(new_params, state)``. Inputs are not modified.

    ``params`` values may be Tensors or arrays; the result uses the same type.
    """
    missing = [k for k in params if k not in grads]
    if missing:
        raise KeyError(f"no gradient for parameters {missing}")
    lr = config.learning_rate
    state.step += 1
    t = state.step
    out = {}
    for name, p in params.items():
        w = p.data if isinstance(p, Tensor) else np.asarray(p)
        g = np.asarray(grads[name], dtype=w.dtype)
        if config.optimizer == "sgd":
            new = w - lr * g
        elif config.optimizer == "sgd_momentum":
            v = momentum * state.slots.get(name, np.zeros_like(w)) + g
            state.slots[name] = v
            new = w - lr * v
        else:
            m, v = state.slots.get(name, (np.zeros_like(w), np.zeros_like(w)))
            m = betas[0] * m + (1 - betas[0]) * g
            v = betas[1] * v + (1 - betas[1]) * g * g
            state.slots[name] = (m, v)
            mhat = m / (1 - betas[0] ** t)
            vhat = v / (1 - betas[1] ** t)
            new = w - lr * mhat / (np.sqrt(vhat) + eps)
        new = new.astype(w.dtype)
        if np.all(np.isfinite(g)) and not np.all(np.isfinite(new)):
            raise NonFiniteError(f"parameter {name} became non-finite at step {t}")
        out[name] = Tensor(new) if isinstance(p, Tensor) else new
    return out, state


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict, float]:
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if norm <= max_norm or norm == 0:
        return grads, norm
    scale = max_norm / norm
    return {k: (g * scale).astype(g.dtype) for k, g in grads.items()}, norm


# ------------------------------------------------------------------ metrics


@dataclass
class MetricsLog:
    rows: list[dict] = field(default_factory=list)

    def append(self, row: dict) -> None:
        if self.rows and row["epoch"] <= self.rows[-1]["epoch"]:
            raise ValueError("epoch indices must increase")
        if not self.rows and row["epoch"] != 1:
            raise ValueError("first epoch index must be 1")
        self.rows.append(row)

    def column(self, name: str) -> list:
        return [r.get(name) for r in self.rows]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRIC_FIELDS)
            for r in self.rows:
                w.writerow(["" if r.get(k) is None else (repr(r[k]) if isinstance(r[k], float) else r[k])
                            for k in METRIC_FIELDS])

    @classmethod
    def read_csv(cls, path) -> "MetricsLog":
        rows = []
        with open(path, encoding="utf-8") as fh:
            for rec in csv.DictReader(fh):
                row = {}
                for k in METRIC_FIELDS:
                    v = rec.get(k, "")
                    row[k] = None if v == "" else (int(v) if k == "epoch" else float(v))
                rows.append(row)
        return cls(rows)


# ---------------------------------------------------------------- training


def _as_dataset(data) -> Dataset:
    return data if isinstance(data, Dataset) else load_dataset(data)


def _batches(n: int, batch_size: int, rng: Rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _finish_epoch(model, metrics: MetricsLog, row: dict, config: TrainConfig, out, history_key: str):
    metrics.append(row)
    meta = {
        "epoch": row["epoch"],
        "loss_history": [r[history_key] for r in metrics.rows[-10:]],
        "train_config": asdict(config),
        "rng_state": Rng(config.seed).derive(1, row["epoch"] + 1).get_state(),
    }
    ckpt = model_checkpoint(model, meta)
    if out is not None:
        save_checkpoint(ckpt, out)
    return ckpt


StepCallback = Callable[[dict], None]


def train_vae(data, model_config: VaeConfig, config: TrainConfig, out=None,
              on_step: StepCallback | None = None) -> tuple[Checkpoint, MetricsLog, LCBVAE]:
    """Fit the VAE to map ``inputs`` to ``targets`` with the negative ELBO.

    Per-step randomness (dropout, latent noise) comes from
    ``Rng(seed).derive(2, epoch, step)``; shuffling from ``derive(1, epoch)``.
    """
    ds = _as_dataset(data)
    if len(ds) == 0:
        raise ValueError("empty dataset")
    if ds.image_shape != model_config.input_shape:
        raise ValueError(f"dataset images {ds.image_shape} do not match model input {model_config.input_shape}")
    root = Rng(config.seed)
    model = LCBVAE(model_config, rng=root.derive(0))
    opt = OptimizerState()
    metrics = MetricsLog()
    ckpt = None
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        sums = np.zeros(3)
        steps = 0
        for step, idx in enumerate(_batches(len(ds), config.batch_size, root.derive(1, epoch))):
            step_rng = root.derive(2, epoch, step)
            before = {"params": {k: t.data for k, t in model.params.items()}, "state": dict(model.state)}
            tape = Tape()
            model.params = {k: tape.watch(Tensor(t.data)) for k, t in model.params.items()}
            total, rec, kl = model.loss(ds.inputs[idx], ds.targets[idx], "train", step_rng)
            grads = backward(total, tape)
            named = {k: grads[t] for k, t in model.params.items()}
            if config.clip_norm:
                named, _ = clip_by_global_norm(named, config.clip_norm)
            losses = (float(total.data), float(rec.data), float(kl.data))
            if on_step is not None:
                on_step({"epoch": epoch, "step": step, "indices": idx, "losses": losses,
                         "rng_key": step_rng.key, **before})
            new, opt = optimizer_step({k: t.data for k, t in model.params.items()}, named, opt, config)
            model.params = {k: Tensor(v) for k, v in new.items()}
            sums += losses
            steps += 1
        mean = sums / steps
        row = {"epoch": epoch, "seconds": time.perf_counter() - t0, "loss_total": float(mean[0]),
               "loss_recon": float(mean[1]), "loss_kl": float(mean[2]), "loss_ctc": None, "accuracy": None}
        log.info("vae epoch %d: total %.2f recon %.2f kl %.2f (%.1fs)", epoch, *mean, row["seconds"])
        ckpt = _finish_epoch(model, metrics, row, config, out, "loss_total")
    return ckpt, metrics, model


def check_labels(labels) -> list[list[int]]:
    """Encode every label up front; raises on the first unencodable one."""
    out = []
    for i, lab in enumerate(labels):
        try:
            out.append(CHARSET.encode(lab))
        except ValueError as exc:
            raise ValueError(f"label {i} ({lab!r}): {exc}") from None
    return out


def train_crnn(data, model_config: CrnnConfig, config: TrainConfig, out=None, images: str = "targets",
               eval_data=None, on_step: StepCallback | None = None) -> tuple[Checkpoint, MetricsLog, Crnn]:
    """Fit the recognizer on (solid image, label) pairs with CTC."""
    ds = _as_dataset(data)
    if len(ds) == 0:
        raise ValueError("empty dataset")
    encoded = check_labels(ds.labels)
    x_all = getattr(ds, images)
    if x_all.shape[1:] != model_config.input_shape:
        raise ValueError(f"dataset images {x_all.shape[1:]} do not match model input {model_config.input_shape}")
    if eval_data is not None:
        eval_data = _as_dataset(eval_data)
        check_labels(eval_data.labels)
    root = Rng(config.seed)
    model = Crnn(model_config, rng=root.derive(0))
    opt = OptimizerState()
    metrics = MetricsLog()
    clip = config.clip_norm if config.clip_norm is not None else 5.0
    ckpt = None
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        total, steps = 0.0, 0
        for step, idx in enumerate(_batches(len(ds), config.batch_size, root.derive(1, epoch))):
            before = {"params": {k: t.data for k, t in model.params.items()}}
            tape = Tape()
            model.params = {k: tape.watch(Tensor(t.data)) for k, t in model.params.items()}
            loss = ctc_loss(model.forward(x_all[idx], "train"), [encoded[i] for i in idx])
            grads = backward(loss, tape)
            named, _ = clip_by_global_norm({k: grads[t] for k, t in model.params.items()}, clip)
            value = float(loss.data)
            if on_step is not None:
                on_step({"epoch": epoch, "step": step, "indices": idx, "losses": (value,), **before})
            new, opt = optimizer_step({k: t.data for k, t in model.params.items()}, named, opt, config)
            model.params = {k: Tensor(v) for k, v in new.items()}
            total += value
            steps += 1
        acc = None
        if eval_data is not None:
            acc = evaluate_crnn(model, eval_data.targets, eval_data.labels)
        row = {"epoch": epoch, "seconds": time.perf_counter() - t0, "loss_total": total / steps,
               "loss_recon": None, "loss_kl": None, "loss_ctc": total / steps, "accuracy": acc}
        log.info("crnn epoch %d: ctc %.4f acc %s (%.1fs)", epoch, total / steps, acc, row["seconds"])
        ckpt = _finish_epoch(model, metrics, row, config, out, "loss_ctc")
    return ckpt, metrics, model


def predict_crnn(model: Crnn, images: np.ndarray, batch_size: int = 64) -> list[str]:
    out = []
    for start in range(0, len(images), batch_size):
        out += ctc_greedy_decode(model.forward(images[start:start + batch_size], "infer").data)
    return out


def evaluate_crnn(model: Crnn, images: np.ndarray, labels) -> float:
    return sequence_accuracy(predict_crnn(model, images), labels)
