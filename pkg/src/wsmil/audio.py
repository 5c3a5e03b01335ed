"""Audio decoding and log mel-band energy features.

The frontend turns a PCM WAV recording into a ``T x 40`` matrix of natural-log
mel-band energies. Framing uses a periodic Hamming window of 1014 samples
(about 23 ms at 44.1 kHz) with a hop of half a window and no centre padding,
so ``T = 1 + floor((L - window) / hop)``.
"""
from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io.wavfile
import scipy.signal

from .errors import FormatError, ParameterError, TooShortError, UnsupportedFormatError

__all__ = [
    "AudioClip",
    "FeatureConfig",
    "FeatureMatrix",
    "decode_wav",
    "write_wav",
    "stft_power",
    "hz_to_mel",
    "mel_to_hz",
    "mel_filterbank",
    "extract_logmel",
    "n_frames",
    "save_features",
    "load_features",
    "export_features_csv",
]

WSMF_MAGIC = b"WSMF"
WSMF_VERSION = 1


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    id: str = ""

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ParameterError(f"sample_rate must be positive, got {self.sample_rate}")
        if len(self.samples) == 0:
            raise ParameterError(f"clip {self.id!r} has no samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int = 44100
    window: int = 1014
    hop: int = 507
    n_mels: int = 40
    fmin: float = 0.0
    fmax: float | None = None  # None -> Nyquist
    log_floor: float = 1e-10

    @property
    def hop_seconds(self) -> float:
        return self.hop / self.sample_rate

    def resolved_fmax(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else float(self.fmax)


@dataclass
class FeatureMatrix:
    frames: np.ndarray  # (T, F)
    frame_hop_seconds: float
    id: str = ""
    extra: dict = field(default_factory=dict, repr=False)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def F(self) -> int:
        return self.frames.shape[1]


def _check_riff(path: Path) -> None:
    with open(path, "rb") as f:
        head = f.read(12)
    if len(head) < 12 or head[:4] not in (b"RIFF", b"RIFX", b"RF64") or head[8:12] != b"WAVE":
        raise FormatError(f"{path}: malformed RIFF/WAVE header")


def decode_wav(path, id: str | None = None) -> AudioClip:
    """Read a PCM or float WAV file as a mono clip scaled to [-1, 1].

    Integer PCM is divided by its full-scale value (8-bit is unsigned and
    offset by 128); multichannel audio is averaged to mono.
    """
    path = Path(path)
    _check_riff(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.io.wavfile.WavFileWarning)
            sr, data = scipy.io.wavfile.read(path)
    except ValueError as exc:
        msg = str(exc)
        if "Unknown wave file format" in msg or "Unsupported" in msg or "not supported" in msg:
            raise UnsupportedFormatError(f"{path}: {msg}") from exc
        raise FormatError(f"{path}: {msg}") from exc
    except (EOFError, struct.error) as exc:
        raise FormatError(f"{path}: truncated file ({exc})") from exc

    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        # 24-bit PCM arrives left-justified in int32
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise UnsupportedFormatError(f"{path}: unsupported sample type {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return AudioClip(x, int(sr), path.stem if id is None else id)


def write_wav(path, clip: AudioClip) -> None:
    """Write a clip as 16-bit PCM."""
    pcm = np.round(np.clip(clip.samples, -1.0, 1.0) * 32767.0).astype(np.int16)
    scipy.io.wavfile.write(path, clip.sample_rate, pcm)


def n_frames(length: int, window: int, hop: int) -> int:
    if length < window:
        raise TooShortError(f"signal of {length} samples is shorter than one window ({window})")
    return 1 + (length - window) // hop


def stft_power(clip: AudioClip, window_samples: int = 1014, hop_samples: int = 507) -> np.ndarray:
    """Power spectrogram ``|DFT(hamming * frame)|**2`` with shape (T, window // 2 + 1)."""
    if window_samples < 2 or hop_samples < 1:
        raise ParameterError(f"need window >= 2 and hop >= 1, got {window_samples}, {hop_samples}")
    x = np.asarray(clip.samples, dtype=np.float64)
    T = n_frames(len(x), window_samples, hop_samples)
    frames = np.lib.stride_tricks.sliding_window_view(x, window_samples)[::hop_samples][:T]
    win = scipy.signal.get_window("hamming", window_samples, fftbins=True)
    spec = np.fft.rfft(frames * win, axis=1)
    return spec.real**2 + spec.imag**2


def hz_to_mel(f):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    mel = f / f_sp
    return np.where(f >= min_log_hz, min_log_mel + np.log(np.maximum(f, min_log_hz) / min_log_hz) / logstep, mel)


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f_sp = 200.0 / 3
    min_log_hz = 1000.0
    min_log_mel = min_log_hz / f_sp
    logstep = np.log(6.4) / 27.0
    return np.where(m >= min_log_mel, min_log_hz * np.exp(logstep * (m - min_log_mel)), f_sp * m)


def mel_filterbank(sample_rate: int, n_fft_bins: int, n_mels: int = 40,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular, area-normalised mel filters of shape (n_mels, n_fft_bins).

    ``n_fft_bins`` is the number of one-sided bins, ``window // 2 + 1``.
    """
    nyquist = sample_rate / 2
    if fmax is None:
        fmax = nyquist
    if n_mels < 1:
        raise ParameterError(f"n_mels must be >= 1, got {n_mels}")
    if fmax > nyquist:
        raise ParameterError(f"fmax={fmax} Hz exceeds Nyquist ({nyquist} Hz)")
    if not 0 <= fmin < fmax:
        raise ParameterError(f"need 0 <= fmin < fmax, got fmin={fmin}, fmax={fmax}")
    n_fft = 2 * (n_fft_bins - 1)
    fft_freqs = np.arange(n_fft_bins) * sample_rate / n_fft
    mel_pts = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fdiff = np.diff(mel_pts)
    ramps = mel_pts[:, None] - fft_freqs[None, :]
    lower = -ramps[:-2] / fdiff[:-1, None]
    upper = ramps[2:] / fdiff[1:, None]
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (mel_pts[2:] - mel_pts[:-2]))[:, None]
    return weights


def extract_logmel(clip: AudioClip, config: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    """Natural-log mel-band energies ``ln(mel @ power + floor)`` for one clip."""
    if clip.sample_rate != config.sample_rate:
        raise ParameterError(
            f"clip {clip.id!r} has sample rate {clip.sample_rate}, expected {config.sample_rate} "
            "(resampling is not supported)"
        )
    power = stft_power(clip, config.window, config.hop)
    fb = mel_filterbank(config.sample_rate, power.shape[1], config.n_mels, config.fmin, config.resolved_fmax())
    with np.errstate(divide="ignore"):
        frames = np.log(power @ fb.T + config.log_floor)
    return FeatureMatrix(frames, config.hop_seconds, clip.id)


def save_features(path, feats: FeatureMatrix) -> None:
    """Write the WSMF binary format: magic, u32 version, u32 T, u32 F, f32 LE row-major."""
    T, F = feats.frames.shape
    with open(path, "wb") as f:
        f.write(WSMF_MAGIC)
        f.write(struct.pack("<III", WSMF_VERSION, T, F))
        f.write(np.ascontiguousarray(feats.frames, dtype="<f4").tobytes())


def load_features(path, hop_seconds: float = 507 / 44100, id: str | None = None) -> FeatureMatrix:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != WSMF_MAGIC:
        raise FormatError(f"{path}: not a WSMF feature file")
    version, T, F = struct.unpack("<III", raw[4:16])
    if version != WSMF_VERSION:
        raise UnsupportedFormatError(f"{path}: WSMF version {version} not supported")
    body = raw[16:]
    if len(body) != 4 * T * F:
        raise FormatError(f"{path}: expected {T}x{F} values, found {len(body) // 4}")
    frames = np.frombuffer(body, dtype="<f4").reshape(T, F).astype(np.float64)
    return FeatureMatrix(frames, hop_seconds, path.stem if id is None else id)


def export_features_csv(path, feats: FeatureMatrix) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame"] + [f"mel{k}" for k in range(feats.F)])
        for j, row in enumerate(feats.frames):
            w.writerow([j] + [repr(float(v)) for v in row])
