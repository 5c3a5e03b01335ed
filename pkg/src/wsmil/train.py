"""Mini-batch training of the frame classifier from weak labels."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import Bag, HalfAndHalfSampler, pad_batch
from .errors import ContractError, TrainingError
from .evaluate import EvalReport, frame_metrics
from .losses import LOSS_KINDS, batch_loss
from .model import ModelConfig, ModelParams, forward_batch, init_params, save_model, threshold

log = logging.getLogger(__name__)

METRIC_HEADER = "epoch,train_loss,val_precision,val_recall,val_f1\n"


@dataclass
class TrainConfig:
    loss: str = "mmm"
    epochs: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    checkpoint_interval: int = 0  # 0: only the final epoch
    eval_interval: int = 1
    hnh_anchor: str = "majority"
    threshold: float = 0.5
    dtype: str = "float64"  # float32 trains about twice as fast

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be 'float32' or 'float64', got {self.dtype!r}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss!r}; expected one of {LOSS_KINDS}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, applied to the arrays in ``params`` in place."""
    for k, g in grads.items():
        if params[k].shape != g.shape:
            raise ContractError(f"gradient for {k!r} has shape {g.shape}, parameter has {params[k].shape}")
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for k, p in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val: EvalReport | None = None

    def csv_row(self) -> str:
        if self.val is None:
            return f"{self.epoch},{self.train_loss!r},,,\n"
        return f"{self.epoch},{self.train_loss!r},{self.val.precision!r},{self.val.recall!r},{self.val.f1!r}\n"


@dataclass
class TrainResult:
    model: ModelParams
    history: list
    adam: AdamState
    best_epoch: int | None = None
    best_f1: float | None = None


def predict_batched(model: ModelParams, features, batch_size: int = 16) -> list[np.ndarray]:
    """Inference-mode frame scores for a list of (T_i, F) matrices."""
    out = []
    for s in range(0, len(features), batch_size):
        chunk = features[s:s + batch_size]
        x, mask = pad_batch(chunk)
        o = forward_batch(model, x, None if mask.all() else mask, training=False).data
        out.extend(o[i, : f.shape[0]].copy() for i, f in enumerate(chunk))
    return out


def evaluate_model(model: ModelParams, features, truths, tau=0.5) -> EvalReport:
    scores = predict_batched(model, features)
    return frame_metrics([threshold(s, tau) for s in scores], list(truths))


def train(bags: list[Bag], config: TrainConfig, model: ModelParams | None = None,
          model_config: ModelConfig = ModelConfig(), validation=None, out_dir=None) -> TrainResult:
    """Train with Half-and-Half batches, the configured loss and Adam.

    ``validation`` is an optional ``(features, truths)`` pair of lists (frame
    matrices and binary frame vectors); it is scored every
    ``eval_interval`` epochs and the best-F1 weights are saved as
    ``best.wsck`` without influencing training. With ``out_dir`` set, the
    metric log is written to ``metrics.csv`` and checkpoints to
    ``checkpoints/``.
    """
    if model is None:
        model = init_params(config.seed, model_config)
    model = model.astype(config.dtype)
    labels = np.array([b.Y for b in bags])
    sampler = HalfAndHalfSampler(labels, config.batch_size, config.seed + 1, config.hnh_anchor)
    state = AdamState()
    weights = {k: t.data for k, t in model.params.items()}

    ckpt_dir = metrics_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        ckpt_dir = out_dir / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.csv"
        metrics_path.write_text(METRIC_HEADER)

    history, best_f1, best_epoch = [], None, None
    for epoch in range(1, config.epochs + 1):
        losses = []
        for b_no, idx in enumerate(sampler.epoch(), start=1):
            x, mask = pad_batch([bags[i].features.frames for i in idx])
            m = None if mask.all() else mask
            o = forward_batch(model, x, m, training=True)
            loss = batch_loss(config.loss, o, labels[idx], m)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b_no}")
            grads = ad.backward(loss, model.params)
            adam_step(weights, grads, state, config.lr, config.beta1, config.beta2, config.adam_epsilon)
            losses.append(value)
        rec = EpochRecord(epoch, float(np.mean(losses)))

        if validation is not None and (epoch % config.eval_interval == 0 or epoch == config.epochs):
            rec.val = evaluate_model(model, validation[0], validation[1], config.threshold)
            if best_f1 is None or rec.val.f1 > best_f1:
                best_f1, best_epoch = rec.val.f1, epoch
                if ckpt_dir is not None:
                    save_model(ckpt_dir / "best.wsck", model)
        history.append(rec)
        log.info("epoch %d loss %.5f%s", epoch, rec.train_loss,
                 f" val_f1 {rec.val.f1:.4f}" if rec.val is not None else "")

        if metrics_path is not None:
            with open(metrics_path, "a") as f:
                f.write(rec.csv_row())
        if ckpt_dir is not None:
            if config.checkpoint_interval and epoch % config.checkpoint_interval == 0:
                save_model(ckpt_dir / f"epoch_{epoch:05d}.wsck", model)
            if epoch == config.epochs:
                save_model(ckpt_dir / "final.wsck", model)
    return TrainResult(model, history, state, best_epoch, best_f1)
