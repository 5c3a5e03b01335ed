"""Convolutional-recurrent frame classifier.

Three blocks of 3x3 convolution, batch normalisation, ReLU and frequency-only
max pooling (1x5, 1x4, 1x2) turn a ``T x 40`` log-mel matrix into ``T x 64``
features. Two bidirectional GRU layers (64 units per direction) and two
time-distributed dense layers (64 ReLU units, then one sigmoid unit) produce
one presence probability per frame, so the output keeps all ``T`` frames.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .audio import FeatureMatrix
from .checkpoint import load_arrays, save_arrays
from .errors import ShapeError

__all__ = [
    "ModelConfig",
    "ModelParams",
    "FramePredictions",
    "init_params",
    "glorot_bound",
    "forward_batch",
    "forward",
    "predict",
    "threshold",
    "save_model",
    "load_model",
]


@dataclass(frozen=True)
class ModelConfig:
    n_mels: int = 40
    conv_channels: int = 64
    pool_sizes: tuple = (5, 4, 2)
    kernel_size: int = 3
    gru_units: int = 64
    gru_layers: int = 2
    dense_units: int = 64
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-3

    def pooled_freq(self) -> int:
        f = self.n_mels
        for k in self.pool_sizes:
            if f % k:
                raise ShapeError(f"pool chain {self.pool_sizes} does not divide n_mels={self.n_mels}")
            f //= k
        return f


@dataclass
class ModelParams:
    config: ModelConfig
    params: dict  # name -> trainable Tensor
    buffers: dict = field(default_factory=dict)  # name -> batch-norm running statistics
    seed: int | None = None

    def arrays(self) -> dict:
        """All weights and buffers as plain arrays, in a stable order."""
        out = {k: t.data for k, t in self.params.items()}
        out.update(self.buffers)
        return out

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.params.values())).data.dtype

    def copy(self) -> "ModelParams":
        params = {k: ad.Tensor(t.data.copy(), requires_grad=True, name=k) for k, t in self.params.items()}
        return ModelParams(self.config, params, {k: v.copy() for k, v in self.buffers.items()}, self.seed)

    def astype(self, dtype) -> "ModelParams":
        """This model if it already has ``dtype`` (float32 or float64), else a converted copy."""
        dtype = np.dtype(dtype)
        if dtype == self.dtype:
            return self
        params = {k: ad.Tensor(t.data.astype(dtype), requires_grad=True, name=k) for k, t in self.params.items()}
        return ModelParams(self.config, params, {k: v.copy() for k, v in self.buffers.items()}, self.seed)


@dataclass
class FramePredictions:
    o: np.ndarray
    id: str = ""
    output: ad.Tensor | None = field(default=None, repr=False)  # graph handle in train mode

    def __len__(self):
        return len(self.o)


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def _shapes(cfg: ModelConfig):
    """(name, shape, fan_in, fan_out) for every trainable tensor; fans are None for non-Glorot ones."""
    k, C, H = cfg.kernel_size, cfg.conv_channels, cfg.gru_units
    out = []
    cin = 1
    for i in range(1, len(cfg.pool_sizes) + 1):
        out.append((f"conv{i}.kernel", (k, k, cin, C), k * k * cin, k * k * C))
        out.append((f"conv{i}.bias", (C,), None, None))
        out.append((f"bn{i}.gamma", (C,), None, None))
        out.append((f"bn{i}.beta", (C,), None, None))
        cin = C
    d = C * cfg.pooled_freq()
    for layer in range(1, cfg.gru_layers + 1):
        for direction in ("fwd", "bwd"):
            out.append((f"gru{layer}.{direction}.W", (d, 3 * H), d, 3 * H))
            out.append((f"gru{layer}.{direction}.U", (H, 3 * H), H, 3 * H))
            out.append((f"gru{layer}.{direction}.b", (3 * H,), None, None))
        d = 2 * H
    out.append(("dense1.W", (d, cfg.dense_units), d, cfg.dense_units))
    out.append(("dense1.b", (cfg.dense_units,), None, None))
    out.append(("dense2.W", (cfg.dense_units, 1), cfg.dense_units, 1))
    out.append(("dense2.b", (1,), None, None))
    return out


def init_params(seed: int = 0, config: ModelConfig = ModelConfig()) -> ModelParams:
    """Glorot-uniform weights, zero biases, unit batch-norm scale, deterministic in ``seed``."""
    config.pooled_freq()
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape, fan_in, fan_out in _shapes(config):
        if fan_in is not None:
            lim = glorot_bound(fan_in, fan_out)
            arr = rng.uniform(-lim, lim, size=shape)
        elif name.endswith("gamma"):
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        params[name] = ad.Tensor(arr, requires_grad=True, name=name)
    buffers = {}
    for i in range(1, len(config.pool_sizes) + 1):
        buffers[f"bn{i}.running_mean"] = np.zeros(config.conv_channels)
        buffers[f"bn{i}.running_var"] = np.ones(config.conv_channels)
    return ModelParams(config, params, buffers, seed)


def forward_batch(model: ModelParams, x, mask=None, training=False) -> ad.Tensor:
    """Frame probabilities (B, T) for a zero-padded feature batch ``x`` of shape (B, T, F).

    ``mask`` (B, T) marks valid frames. Padded frames are zeroed after every
    convolution block so a padded clip sees the same 'same' padding as an
    unpadded one, are excluded from batch statistics, and leave GRU state
    untouched. In training mode the batch-norm running statistics are updated
    and the returned tensor carries the autodiff graph.
    """
    cfg = model.config
    dt = model.dtype
    x = np.asarray(x, dtype=dt)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != cfg.n_mels:
        raise ShapeError(f"expected features of shape (B, T, {cfg.n_mels}), got {x.shape}")
    B, T, _ = x.shape
    if mask is not None:
        mask = np.asarray(mask, dtype=dt)
        if mask.shape != (B, T):
            raise ShapeError(f"mask shape {mask.shape} does not match features {x.shape}")
    p = model.params if training else {k: ad.Tensor(t.data) for k, t in model.params.items()}

    h = ad.Tensor(x.reshape(B, T, cfg.n_mels, 1))
    for i, k in enumerate(cfg.pool_sizes, start=1):
        h = ad.conv2d_same(h, p[f"conv{i}.kernel"], p[f"conv{i}.bias"])
        h = ad.batch_norm(h, p[f"bn{i}.gamma"], p[f"bn{i}.beta"],
                          model.buffers[f"bn{i}.running_mean"], model.buffers[f"bn{i}.running_var"],
                          training, cfg.bn_momentum, cfg.bn_epsilon, mask)
        # relu commutes with max, so pooling first is exact and cheaper
        h = ad.relu(ad.max_pool_freq(h, k))
        if mask is not None:
            h = ad.mul(h, mask[:, :, None, None])
    h = ad.reshape(h, (B, T, -1))
    for layer in range(1, cfg.gru_layers + 1):
        fw = [p[f"gru{layer}.fwd.{n}"] for n in "WUb"]
        bw = [p[f"gru{layer}.bwd.{n}"] for n in "WUb"]
        h = ad.bigru(h, fw, bw, mask)
    h = ad.relu(ad.dense(h, p["dense1.W"], p["dense1.b"]))
    h = ad.sigmoid(ad.dense(h, p["dense2.W"], p["dense2.b"]))
    return ad.reshape(h, (B, T))


def forward(model: ModelParams, features: FeatureMatrix, mode: str = "infer") -> FramePredictions:
    """Per-frame predictions for one recording; ``mode`` is ``"train"`` or ``"infer"``."""
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    out = forward_batch(model, features.frames[None], training=(mode == "train"))
    return FramePredictions(out.data[0].copy(), features.id, out if mode == "train" else None)


def predict(model: ModelParams, features: FeatureMatrix) -> FramePredictions:
    return forward(model, features, "infer")


def threshold(preds, tau: float = 0.5) -> np.ndarray:
    """Binary frame labels: 1 where the prediction is >= tau."""
    o = preds.o if isinstance(preds, FramePredictions) else np.asarray(preds)
    return (o >= tau).astype(np.int8)


def save_model(path, model: ModelParams) -> None:
    save_arrays(path, model.arrays())


def load_model(path, config: ModelConfig | None = None) -> ModelParams:
    """Load a checkpoint; layer widths are read back from the stored shapes."""
    arrays = load_arrays(path)
    n_blocks = sum(1 for k in arrays if k.startswith("conv") and k.endswith(".kernel"))
    n_gru = sum(1 for k in arrays if k.startswith("gru") and k.endswith(".fwd.W"))
    base = config or ModelConfig()
    inferred = replace(
        base,
        conv_channels=arrays["conv1.kernel"].shape[3],
        kernel_size=arrays["conv1.kernel"].shape[0],
        gru_units=arrays["gru1.fwd.U"].shape[0],
        gru_layers=n_gru,
        dense_units=arrays["dense1.W"].shape[1],
    )
    if len(inferred.pool_sizes) != n_blocks:
        raise ShapeError(f"checkpoint has {n_blocks} conv blocks but config pools {inferred.pool_sizes}")
    expected = {name: shape for name, shape, _, _ in _shapes(inferred)}
    params = {}
    for name, shape in expected.items():
        if name not in arrays or arrays[name].shape != shape:
            got = arrays[name].shape if name in arrays else None
            raise ShapeError(f"checkpoint entry {name!r}: expected {shape}, found {got}")
        params[name] = ad.Tensor(arrays[name], requires_grad=True, name=name)
    buffers = {k: v for k, v in arrays.items() if ".running_" in k}
    return ModelParams(inferred, params, buffers)
