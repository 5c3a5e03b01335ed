"""Corpus ingestion: weak manifests, label collapsing, bags and balanced batching."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import FeatureConfig, FeatureMatrix, decode_wav, extract_logmel, load_features, save_features
from .errors import ManifestError, SamplerError, WsmilError

__all__ = [
    "WeakManifestEntry",
    "LabelMap",
    "Bag",
    "StrongAnnotation",
    "load_weak_manifest",
    "write_weak_manifest",
    "apply_label_map",
    "HalfAndHalfSampler",
    "hnh_batches",
    "load_strong_annotations",
    "write_strong_annotations",
    "frames_from_annotation",
    "pad_batch",
    "FeatureCache",
]


@dataclass(frozen=True)
class WeakManifestEntry:
    id: str
    path: str
    labels: frozenset = frozenset()


@dataclass(frozen=True)
class LabelMap:
    """Collapse raw labels into one binary target.

    ``positive`` lists the raw labels that count as the target; the wildcard
    ``"*"`` makes any labelled recording positive.
    """

    target: str
    positive: frozenset

    def __post_init__(self):
        if not self.target:
            raise ValueError("label map needs a non-empty target name")
        object.__setattr__(self, "positive", frozenset(self.positive))

    def label(self, labels) -> int:
        labels = set(labels)
        if "*" in self.positive:
            return int(bool(labels))
        return int(bool(labels & self.positive))


@dataclass
class Bag:
    features: FeatureMatrix
    Y: int
    id: str = ""

    def __post_init__(self):
        if self.Y not in (0, 1):
            raise ValueError(f"bag {self.id!r}: weak label must be 0 or 1, got {self.Y}")
        if self.features.T < 1:
            raise ValueError(f"bag {self.id!r} has no frames")

    @property
    def M(self) -> int:
        return self.features.T


@dataclass
class StrongAnnotation:
    id: str
    events: list = field(default_factory=list)  # [(onset_s, offset_s), ...]


def load_weak_manifest(path) -> list[WeakManifestEntry]:
    """Read an ``id,path,labels`` CSV; labels are ';'-separated and may be empty."""
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = {"id", "path", "labels"} - set(reader.fieldnames or ())
        if missing:
            raise ManifestError(f"{path}: header is missing column(s) {sorted(missing)}")
        entries, seen = [], {}
        for row_no, row in enumerate(reader, start=2):
            rid = (row["id"] or "").strip()
            if not rid:
                raise ManifestError(f"{path}: row {row_no}: empty id")
            if not (row["path"] or "").strip():
                raise ManifestError(f"{path}: row {row_no}: recording {rid!r} has no file path")
            if rid in seen:
                raise ManifestError(f"{path}: row {row_no}: duplicate id {rid!r} (first on row {seen[rid]})")
            seen[rid] = row_no
            labels = frozenset(s.strip() for s in (row["labels"] or "").split(";") if s.strip())
            entries.append(WeakManifestEntry(rid, row["path"].strip(), labels))
    return entries


def write_weak_manifest(path, entries) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "path", "labels"])
        for e in entries:
            w.writerow([e.id, e.path, ";".join(sorted(e.labels))])


def apply_label_map(entries, label_map: LabelMap) -> list[tuple[str, int]]:
    return [(e.id, label_map.label(e.labels)) for e in entries]


class HalfAndHalfSampler:
    """Mini-batches with equal numbers of positive and negative bags.

    An epoch is anchored on one class (the majority by default): every anchor
    bag is drawn once in shuffled order, topped up with extra random anchor
    draws to fill the last batch. The other class is drawn from concatenated
    random permutations, so it repeats only as often as needed.
    """

    def __init__(self, labels, batch_size: int = 32, seed: int = 0, anchor: str = "majority"):
        # accepts weak labels or Bag objects
        labels = np.asarray([x.Y if isinstance(x, Bag) else x for x in labels])
        if batch_size < 2 or batch_size % 2:
            raise SamplerError(f"batch size must be a positive even number, got {batch_size}")
        if anchor not in ("majority", "minority"):
            raise SamplerError(f"anchor must be 'majority' or 'minority', got {anchor!r}")
        self.pos = np.flatnonzero(labels == 1)
        self.neg = np.flatnonzero(labels == 0)
        if len(self.pos) == 0 or len(self.neg) == 0:
            raise SamplerError(
                f"Half-and-Half batching needs both classes, got {len(self.pos)} positive and {len(self.neg)} negative bags"
            )
        self.half = batch_size // 2
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        big, small = (self.pos, self.neg) if len(self.pos) >= len(self.neg) else (self.neg, self.pos)
        self.anchor_idx, self.other_idx = (big, small) if anchor == "majority" else (small, big)

    def __len__(self):
        return math.ceil(len(self.anchor_idx) / self.half)

    def _cover(self, idx, n):
        # every index once, then random extras to reach n
        parts = [self.rng.permutation(idx)]
        extra = n - len(idx)
        if extra > 0:
            parts.append(self.rng.choice(idx, size=extra, replace=extra > len(idx)))
        return np.concatenate(parts)[:n]

    def _cycle(self, idx, n):
        # back-to-back random permutations, so repeats are spread evenly
        reps = math.ceil(n / len(idx))
        return np.concatenate([self.rng.permutation(idx) for _ in range(reps)])[:n]

    def epoch(self) -> list[np.ndarray]:
        n_batches = len(self)
        n = n_batches * self.half
        anchor = self._cover(self.anchor_idx, n)
        other = self._cycle(self.other_idx, n)
        batches = []
        for b in range(n_batches):
            sl = slice(b * self.half, (b + 1) * self.half)
            batch = np.concatenate([anchor[sl], other[sl]])
            batches.append(self.rng.permutation(batch))
        return batches


def hnh_batches(labels, batch_size: int = 32, seed: int = 0, epochs: int | None = None, anchor="majority"):
    """Yield Half-and-Half batches (arrays of bag indices), epoch after epoch."""
    sampler = HalfAndHalfSampler(labels, batch_size, seed, anchor)
    e = 0
    while epochs is None or e < epochs:
        yield from sampler.epoch()
        e += 1


def load_strong_annotations(path) -> dict[str, StrongAnnotation]:
    """Read an ``id,onset,offset`` CSV (one event per row, seconds)."""
    path = Path(path)
    out: dict[str, StrongAnnotation] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = {"id", "onset", "offset"} - set(reader.fieldnames or ())
        if missing:
            raise ManifestError(f"{path}: header is missing column(s) {sorted(missing)}")
        for row_no, row in enumerate(reader, start=2):
            rid = row["id"].strip()
            ann = out.setdefault(rid, StrongAnnotation(rid))
            if not (row["onset"] or "").strip():
                continue  # recording listed without events
            try:
                on, off = float(row["onset"]), float(row["offset"])
            except ValueError:
                raise ManifestError(f"{path}: row {row_no}: non-numeric onset/offset") from None
            if not 0 <= on < off:
                raise ManifestError(f"{path}: row {row_no}: need 0 <= onset < offset, got {on}, {off}")
            ann.events.append((on, off))
    return out


def write_strong_annotations(path, annotations) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "onset", "offset"])
        for ann in annotations:
            if not ann.events:
                w.writerow([ann.id, "", ""])
            for on, off in ann.events:
                w.writerow([ann.id, f"{on:.6f}", f"{off:.6f}"])


def frames_from_annotation(ann, T: int, hop_seconds: float) -> np.ndarray:
    """Binary frame labels: frame j is active iff its centre (j + 0.5) * hop lies in some [onset, offset)."""
    events = ann.events if isinstance(ann, StrongAnnotation) else ann
    centers = (np.arange(T) + 0.5) * hop_seconds
    out = np.zeros(T, dtype=np.int8)
    for on, off in events:
        out[(centers >= on) & (centers < off)] = 1
    return out


def pad_batch(feature_list):
    """Stack variable-length (T_i, F) matrices into (B, T_max, F) plus a (B, T_max) validity mask."""
    T = max(f.shape[0] for f in feature_list)
    F = feature_list[0].shape[1]
    x = np.zeros((len(feature_list), T, F))
    mask = np.zeros((len(feature_list), T), dtype=bool)
    for i, f in enumerate(feature_list):
        x[i, : f.shape[0]] = f
        mask[i, : f.shape[0]] = True
    return x, mask


class FeatureCache:
    """Directory of ``<id>.wsmf`` feature files computed from manifest audio."""

    def __init__(self, root, config: FeatureConfig = FeatureConfig(), audio_root=None):
        self.root = Path(root)
        self.config = config
        self.audio_root = Path(audio_root) if audio_root is not None else None

    def path_for(self, rid: str) -> Path:
        return self.root / f"{rid}.wsmf"

    def audio_path(self, entry: WeakManifestEntry, manifest_dir=None) -> Path:
        p = Path(entry.path)
        if p.is_absolute():
            return p
        base = self.audio_root if self.audio_root is not None else Path(manifest_dir or ".")
        return base / p

    def build(self, entries, manifest_dir=None, force=False) -> list[str]:
        """Extract features for stale or missing entries; returns the ids written."""
        self.root.mkdir(parents=True, exist_ok=True)
        written = []
        for e in entries:
            src = self.audio_path(e, manifest_dir)
            dst = self.path_for(e.id)
            if not force and dst.exists() and src.exists() and dst.stat().st_mtime >= src.stat().st_mtime:
                continue
            try:
                feats = extract_logmel(decode_wav(src, e.id), self.config)
            except WsmilError as exc:
                raise type(exc)(f"recording {e.id!r}: {exc}") from exc
            except OSError as exc:
                raise ManifestError(f"recording {e.id!r}: {exc}") from exc
            save_features(dst, feats)
            written.append(e.id)
        return written

    def load(self, rid: str) -> FeatureMatrix:
        return load_features(self.path_for(rid), self.config.hop_seconds, rid)

    def bags(self, entries, label_map: LabelMap, manifest_dir=None) -> list[Bag]:
        self.build(entries, manifest_dir)
        return [Bag(self.load(e.id), label_map.label(e.labels), e.id) for e in entries]
