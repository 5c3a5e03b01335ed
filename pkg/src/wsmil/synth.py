"""Synthetic weakly-labelled corpora: tone bursts over white noise.

Positive clips carry one tone burst per entry of ``burst_snr_db`` (for
example one loud and one faint burst), placed without overlap at random
times; negative clips are noise only. The strong annotations are exact by
construction: each burst's onset and offset are written out as generated.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioClip, write_wav
from .data import StrongAnnotation, WeakManifestEntry, write_strong_annotations, write_weak_manifest
from .errors import ParameterError

RAMP_SECONDS = 0.005


@dataclass(frozen=True)
class SynthConfig:
    n_positive: int = 40
    n_negative: int = 40
    duration: float = 5.0
    sample_rate: int = 44100
    burst_snr_db: tuple = (0.0, -15.0)
    burst_duration: tuple = (0.1, 1.0)
    freq_range: tuple = (500.0, 8000.0)
    noise_rms: tuple = (0.01, 0.05)
    label: str = "tone"
    prefix: str = "clip"


def _place(rng, durations, total, attempts=1000):
    """Random non-overlapping onsets for bursts of the given durations."""
    if sum(durations) > total:
        raise ParameterError(f"cannot fit bursts of {sum(durations):.2f} s into a {total:.2f} s clip")
    for _ in range(attempts):
        onsets = [rng.uniform(0.0, total - d) for d in durations]
        spans = sorted(zip(onsets, durations))
        if all(a + da <= b for (a, da), (b, _) in zip(spans, spans[1:])):
            return onsets
    raise ParameterError(f"cannot fit bursts of {sum(durations):.2f} s into a {total:.2f} s clip")


def synth_clip(rng: np.random.Generator, config: SynthConfig, positive: bool):
    """Return (samples, events) for one clip."""
    n = int(round(config.duration * config.sample_rate))
    sigma = rng.uniform(*config.noise_rms)
    x = rng.normal(0.0, sigma, size=n)
    events = []
    if positive:
        durations = [rng.uniform(*config.burst_duration) for _ in config.burst_snr_db]
        onsets = _place(rng, durations, config.duration)
        for snr, on, dur in zip(config.burst_snr_db, onsets, durations):
            freq = rng.uniform(*config.freq_range)
            amp = np.sqrt(2.0 * sigma**2 * 10.0 ** (snr / 10.0))
            i0 = int(round(on * config.sample_rate))
            i1 = min(int(round((on + dur) * config.sample_rate)), n)
            t = np.arange(i1 - i0) / config.sample_rate
            env = np.ones_like(t)
            r = min(int(RAMP_SECONDS * config.sample_rate), len(t) // 2)
            if r:
                ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(r) / r)
                env[:r] = ramp
                env[-r:] = ramp[::-1]
            x[i0:i1] += amp * env * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
            events.append((i0 / config.sample_rate, i1 / config.sample_rate))
    peak = np.max(np.abs(x))
    if peak > 0.99:
        x *= 0.99 / peak
    return x, sorted(events)


def generate_corpus(out_dir, config: SynthConfig = SynthConfig(), seed: int = 0):
    """Write WAVs, ``manifest.csv`` (weak labels) and ``strong.csv`` (event times) under ``out_dir``.

    Returns (manifest_path, strong_path).
    """
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    kinds = [True] * config.n_positive + [False] * config.n_negative
    entries, annotations = [], []
    width = len(str(len(kinds)))
    for i, positive in enumerate(kinds):
        rid = f"{config.prefix}{i:0{width}d}"
        samples, events = synth_clip(rng, config, positive)
        rel = f"audio/{rid}.wav"
        write_wav(out_dir / rel, AudioClip(samples, config.sample_rate, rid))
        entries.append(WeakManifestEntry(rid, rel, frozenset([config.label]) if positive else frozenset()))
        annotations.append(StrongAnnotation(rid, events))
    manifest = out_dir / "manifest.csv"
    strong = out_dir / "strong.csv"
    write_weak_manifest(manifest, entries)
    write_strong_annotations(strong, annotations)
    return manifest, strong
