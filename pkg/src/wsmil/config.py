"""Run configuration files.

A run config is an INI file. Relative paths are resolved against the
directory containing the config file. ``[model]`` and ``[train]`` accept any
field of ``ModelConfig`` and ``TrainConfig``; the common ones are::

    [paths]
    train_manifest = train/manifest.csv
    val_manifest = test/manifest.csv        ; optional
    val_annotations = test/strong.csv       ; optional, enables per-epoch F1
    audio_root =                            ; default: each manifest's directory
    feature_cache = features
    output_dir = runs/mmm

    [features]
    sample_rate = 44100
    window = 1014
    hop = 507
    n_mels = 40
    fmin = 0
    fmax =                                  ; default: Nyquist
    log_floor = 1e-10

    [model]
    conv_channels = 64
    pool_sizes = 5,4,2
    gru_units = 64
    dense_units = 64

    [train]
    loss = mmm
    epochs = 300
    batch_size = 32
    lr = 0.001
    seed = 0
    dtype = float64                         ; float32 trains about twice as fast

    [label_map]
    target = bird
    positive = *                            ; ';'-separated raw labels, or *

    [predict]
    threshold = 0.5
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields
from pathlib import Path

from .audio import FeatureConfig
from .data import LabelMap
from .errors import ParameterError
from .losses import LOSS_KINDS
from .model import ModelConfig
from .train import TrainConfig


@dataclass
class RunConfig:
    base_dir: Path
    train_manifest: Path | None = None
    val_manifest: Path | None = None
    val_annotations: Path | None = None
    audio_root: Path | None = None
    feature_cache: Path = Path("features")
    output_dir: Path = Path("runs")
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    label_map: LabelMap = field(default_factory=lambda: LabelMap("event", frozenset("*")))
    threshold: float = 0.5


def _coerce(cls, section, name):
    """Parse a section into keyword arguments typed after the dataclass defaults."""
    out = {}
    known = {f.name: f for f in fields(cls)}
    for key, raw in section.items():
        if key not in known:
            raise ParameterError(f"[{section.name}] unknown key {key!r}")
        raw = raw.strip()
        default = getattr(cls(), key) if key != "fmax" else None
        try:
            if raw == "":
                value = None if key == "fmax" else default
            elif isinstance(default, bool):
                value = section.getboolean(key)
            elif isinstance(default, int):
                value = int(raw)
            elif isinstance(default, float) or key == "fmax":
                value = float(raw)
            elif isinstance(default, tuple):
                value = tuple(int(v) for v in raw.split(","))
            else:
                value = raw
        except ValueError:
            raise ParameterError(f"[{name}] {key} = {raw!r} is not a valid value") from None
        out[key] = value
    return out


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ParameterError(f"config file {path} not found")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ParameterError(f"{path}: {exc}") from exc
    base = path.resolve().parent
    rc = RunConfig(base_dir=base)

    if cp.has_section("paths"):
        for key, raw in cp["paths"].items():
            if not hasattr(rc, key) or key in ("features", "model", "train", "label_map", "threshold"):
                raise ParameterError(f"[paths] unknown key {key!r}")
            raw = raw.strip()
            setattr(rc, key, (base / raw) if raw else None)
    for attr in ("feature_cache", "output_dir"):
        p = getattr(rc, attr)
        if p is None or not p.is_absolute():
            setattr(rc, attr, base / (p or RunConfig.__dataclass_fields__[attr].default))

    if cp.has_section("features"):
        rc.features = FeatureConfig(**_coerce(FeatureConfig, cp["features"], "features"))
    if cp.has_section("model"):
        rc.model = ModelConfig(**_coerce(ModelConfig, cp["model"], "model"))
    if cp.has_section("train"):
        kw = _coerce(TrainConfig, cp["train"], "train")
        if kw.get("loss", "mmm") not in LOSS_KINDS:
            raise ParameterError(f"[train] loss must be one of {LOSS_KINDS}, got {kw['loss']!r}")
        try:
            rc.train = TrainConfig(**kw)
        except ValueError as exc:
            raise ParameterError(f"[train] {exc}") from exc
    if cp.has_section("label_map"):
        sec = cp["label_map"]
        target = sec.get("target", "").strip()
        if not target:
            raise ParameterError("[label_map] target must be non-empty")
        positive = frozenset(s.strip() for s in sec.get("positive", "").split(";") if s.strip())
        rc.label_map = LabelMap(target, positive)
    if cp.has_section("predict"):
        rc.threshold = cp["predict"].getfloat("threshold", 0.5)
        if not 0 < rc.threshold < 1:
            raise ParameterError(f"[predict] threshold must lie in (0, 1), got {rc.threshold}")

    for attr in ("train_manifest", "val_manifest", "val_annotations", "audio_root"):
        p = getattr(rc, attr)
        if p is not None and not p.exists():
            raise ParameterError(f"[paths] {attr} = {p} does not exist")
    return rc
