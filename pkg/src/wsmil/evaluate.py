"""Frame-level scoring, transcription export and F1-vs-epoch curves."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError

__all__ = [
    "EvalReport",
    "frame_metrics",
    "transcription_export",
    "write_transcriptions",
    "read_metric_log",
    "curve_emit",
]


def _ratio(num, den):
    return num / den if den else 0.0


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    flags: list = field(default_factory=list)
    per_recording: dict = field(default_factory=dict)  # id -> (tp, fp, fn)

    @classmethod
    def from_counts(cls, tp, fp, fn, per_recording=None):
        p = _ratio(tp, tp + fp)
        r = _ratio(tp, tp + fn)
        # harmonic mean of p and r, formed from the counts to avoid rounding twice
        f1 = _ratio(2 * tp, 2 * tp + fp + fn)
        flags = ["no positives"] if tp + fp + fn == 0 else []
        return cls(int(tp), int(fp), int(fn), p, r, f1, flags, per_recording or {})

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "tp", "fp", "fn", "precision", "recall", "f1"])
        for rid, (tp, fp, fn) in self.per_recording.items():
            sub = EvalReport.from_counts(tp, fp, fn)
            w.writerow([rid, tp, fp, fn, repr(sub.precision), repr(sub.recall), repr(sub.f1)])
        w.writerow(["__total__", self.tp, self.fp, self.fn, repr(self.precision), repr(self.recall), repr(self.f1)])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [
            f"frames: TP={self.tp} FP={self.fp} FN={self.fn}",
            f"precision={self.precision:.4f} recall={self.recall:.4f} f1={self.f1:.4f}",
        ]
        if self.flags:
            lines.append("flags: " + ", ".join(self.flags))
        return "\n".join(lines) + "\n"


def frame_metrics(pred, truth) -> EvalReport:
    """Micro-averaged frame precision / recall / F1 over all recordings.

    ``pred`` and ``truth`` map recording id to binary frame vectors (lists are
    indexed by position). Counts are pooled over every frame before the ratios
    are formed; 0/0 is taken as 0.
    """
    if not isinstance(pred, dict):
        pred = dict(enumerate(pred))
    if not isinstance(truth, dict):
        truth = dict(enumerate(truth))
    if set(pred) != set(truth):
        raise ContractError(f"recordings differ between predictions and truth: {sorted(set(pred) ^ set(truth), key=str)}")
    per = {}
    TP = FP = FN = 0
    for rid in pred:
        p = np.asarray(pred[rid]).astype(bool)
        t = np.asarray(truth[rid]).astype(bool)
        if p.shape != t.shape:
            raise ContractError(f"recording {rid!r}: {p.shape[0]} predicted frames vs {t.shape[0]} reference frames")
        tp = int(np.count_nonzero(p & t))
        fp = int(np.count_nonzero(p & ~t))
        fn = int(np.count_nonzero(~p & t))
        per[rid] = (tp, fp, fn)
        TP, FP, FN = TP + tp, FP + fp, FN + fn
    return EvalReport.from_counts(TP, FP, FN, per)


def transcription_export(preds, hop_seconds: float, tau: float = 0.5) -> list[tuple[float, float]]:
    """Events from maximal runs of frames with score >= tau, as (onset, offset) seconds."""
    o = getattr(preds, "o", preds)
    active = np.asarray(o) >= tau
    edges = np.diff(np.concatenate([[0], active.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return [(float(s * hop_seconds), float(e * hop_seconds)) for s, e in zip(starts, ends)]


def write_transcriptions(path, transcriptions: dict) -> None:
    """``id,onset,offset`` CSV; recordings without events get one empty row."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "onset", "offset"])
        for rid, events in transcriptions.items():
            if not events:
                w.writerow([rid, "", ""])
            for on, off in events:
                w.writerow([rid, f"{on:.6f}", f"{off:.6f}"])


def read_metric_log(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]


def curve_emit(runs: dict, width: int = 640, height: int = 400) -> tuple[str, str]:
    """Render F1-vs-epoch series as (csv_text, svg_text).

    ``runs`` maps a series label to a metric log (rows with ``epoch`` and
    ``val_f1``; rows with an empty ``val_f1`` are skipped) or to a list of
    ``(epoch, f1)`` pairs. Output is deterministic for identical input.
    """
    series = {}
    for label, rows in runs.items():
        pts = []
        for row in rows:
            if isinstance(row, dict):
                if row.get("val_f1", "") in ("", None):
                    continue
                pts.append((int(row["epoch"]), float(row["val_f1"])))
            else:
                pts.append((int(row[0]), float(row[1])))
        if pts:
            series[label] = pts
    if not series:
        raise ValueError("no data")

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["series", "epoch", "f1"])
    for label, pts in series.items():
        for e, f in pts:
            w.writerow([label, e, repr(f)])

    left, right, top, bottom = 56, 150, 20, 44
    pw, ph = width - left - right, height - top - bottom
    e_min = min(e for pts in series.values() for e, _ in pts)
    e_max = max(e for pts in series.values() for e, _ in pts)
    span = max(e_max - e_min, 1)

    def xy(e, f):
        return left + pw * (e - e_min) / span, top + ph * (1.0 - min(max(f, 0.0), 1.0))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for k in range(6):
        f = k / 5
        _, y = xy(e_min, f)
        out.append(f'<line x1="{left - 4}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{y + 4:.2f}" font-size="11" text-anchor="end">{f:.1f}</text>')
    for e in (e_min, e_max):
        x, _ = xy(e, 0)
        out.append(f'<text x="{x:.2f}" y="{top + ph + 16}" font-size="11" text-anchor="middle">{e}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 8}" font-size="12" text-anchor="middle">epoch</text>')
    out.append(f'<text x="14" y="{top + ph / 2:.2f}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 14 {top + ph / 2:.2f})">frame F1</text>')
    for i, (label, pts) in enumerate(series.items()):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in (xy(e, f) for e, f in pts))
        out.append(f'<polyline class="series" data-label="{_escape(label)}" fill="none" stroke="{color}" '
                   f'stroke-width="1.5" points="{coords}"/>')
        ly = top + 14 + 18 * i
        out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 32}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 38}" y="{ly + 4}" font-size="12">{_escape(label)}</text>')
    out.append("</svg>")
    return buf.getvalue(), "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def write_curves(out_prefix, runs: dict) -> tuple[Path, Path]:
    csv_text, svg_text = curve_emit(runs)
    out_prefix = Path(out_prefix)
    csv_path, svg_path = out_prefix.with_suffix(".csv"), out_prefix.with_suffix(".svg")
    csv_path.write_text(csv_text)
    svg_path.write_text(svg_text)
    return csv_path, svg_path
