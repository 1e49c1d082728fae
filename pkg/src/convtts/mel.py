"""Log-mel spectrogram extraction and the on-disk mel cache.

The extractor is a center-padded magnitude STFT (periodic Hann window,
FFT size = next power of two >= window length) followed by a mel
filterbank spanning 0 Hz to Nyquist with Slaney-style area normalization,
then a natural log with a floor clamp. Frame count is exactly
``1 + floor(n_samples / hop_samples)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .arrayio import load_array, save_array
from .errors import ConfigError, FormatError, InputError

LOG_MEL_FLOOR = 1e-5


@dataclass
class MelConfig:
    sample_rate: int = 16000
    hop_ms: float = 12.5
    win_ms: float = 50.0
    n_mels: int = 80
    fmin: float = 0.0
    fmax: float | None = None  # None = Nyquist
    floor: float = LOG_MEL_FLOOR

    def __post_init__(self):
        if self.sample_rate <= 0 or self.n_mels <= 0:
            raise ConfigError("sample_rate and n_mels must be positive")
        for name in ("hop_ms", "win_ms"):
            samples = getattr(self, name) * self.sample_rate / 1000.0
            if abs(samples - round(samples)) > 1e-9:
                raise ConfigError(
                    f"{name}={getattr(self, name)} is not an integer sample "
                    f"count at {self.sample_rate} Hz"
                )
        if self.hop_samples > self.win_samples:
            raise ConfigError("hop must not exceed window length")

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000.0))

    @property
    def win_samples(self) -> int:
        return int(round(self.win_ms * self.sample_rate / 1000.0))

    @property
    def n_fft(self) -> int:
        return 1 << (self.win_samples - 1).bit_length()

    @classmethod
    def from_dict(cls, obj: dict) -> "MelConfig":
        known = {k: obj[k] for k in ("sample_rate", "hop_ms", "win_ms", "n_mels",
                                     "fmin", "fmax", "floor") if k in obj}
        return cls(**known)


@dataclass
class MelSpectrogram:
    frames: np.ndarray  # (n_frames, n_mels) log-mel energies
    hop_ms: float
    win_ms: float
    sample_rate: int

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_mels(self) -> int:
        return self.frames.shape[1]


def hann_window(length: int) -> np.ndarray:
    """Periodic Hann window (satisfies COLA when hop divides length)."""
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(config: MelConfig) -> np.ndarray:
    """Triangular mel filterbank, shape (n_mels, n_fft // 2 + 1)."""
    fmax = config.fmax if config.fmax is not None else config.sample_rate / 2.0
    if not (0 <= config.fmin < fmax <= config.sample_rate / 2.0):
        raise ConfigError(f"bad mel band edges fmin={config.fmin} fmax={fmax}")
    n_bins = config.n_fft // 2 + 1
    fft_freqs = np.arange(n_bins) * config.sample_rate / config.n_fft
    mel_edges = np.linspace(_hz_to_mel(config.fmin), _hz_to_mel(fmax), config.n_mels + 2)
    hz_edges = _mel_to_hz(mel_edges)
    fb = np.zeros((config.n_mels, n_bins), dtype=np.float64)
    for i in range(config.n_mels):
        lo, center, hi = hz_edges[i], hz_edges[i + 1], hz_edges[i + 2]
        rising = (fft_freqs - lo) / max(center - lo, 1e-12)
        falling = (hi - fft_freqs) / max(hi - center, 1e-12)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
        fb[i] *= 2.0 / (hi - lo)  # Slaney area normalization
    return fb


def frame_count(n_samples: int, hop_samples: int) -> int:
    return 1 + n_samples // hop_samples


def stft_complex(waveform: np.ndarray, config: MelConfig) -> np.ndarray:
    """Center-padded complex STFT, shape (n_frames, n_fft // 2 + 1)."""
    x = np.asarray(waveform, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise InputError("waveform must be a non-empty 1-D array")
    win = config.win_samples
    hop = config.hop_samples
    pad = win // 2
    mode = "reflect" if x.size > win - pad else "constant"
    padded = np.pad(x, (pad, win - pad), mode=mode)
    n_frames = frame_count(x.size, hop)
    window = hann_window(win)
    frames = np.stack([padded[t * hop : t * hop + win] for t in range(n_frames)])
    return np.fft.rfft(frames * window, n=config.n_fft, axis=1)


def stft_magnitude(waveform: np.ndarray, config: MelConfig) -> np.ndarray:
    """|STFT| with center padding, shape (n_frames, n_fft // 2 + 1)."""
    return np.abs(stft_complex(waveform, config))


def extract_mel(waveform: np.ndarray, config: MelConfig) -> MelSpectrogram:
    """Log-mel spectrogram of a mono waveform.

    Values are ``log(max(mel_energy, floor))``, so a silent input produces
    a constant matrix at ``log(floor)``.
    """
    magnitude = stft_magnitude(waveform, config)
    fb = mel_filterbank(config)
    mel = magnitude @ fb.T
    logmel = np.log(np.maximum(mel, config.floor))
    return MelSpectrogram(
        frames=logmel.astype(np.float32),
        hop_ms=config.hop_ms,
        win_ms=config.win_ms,
        sample_rate=config.sample_rate,
    )


def read_wav(path, expected_rate: int | None = None) -> tuple[np.ndarray, int]:
    """Read a mono PCM wav as float64 in [-1, 1]."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"wav file not found: {path}")
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise FormatError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample format {data.dtype}")
    if expected_rate is not None and rate != expected_rate:
        raise FormatError(f"{path}: sample rate {rate} != expected {expected_rate}")
    return samples, rate


def write_wav(path, samples: np.ndarray, sample_rate: int):
    """Write float samples as 16-bit PCM, clipping to [-1, 1]."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    wavfile.write(path, sample_rate, np.round(clipped * 32767.0).astype(np.int16))


def save_mel(path, mel: MelSpectrogram):
    """Write a mel cache entry: flat float32 payload + sidecar."""
    save_array(
        path,
        mel.frames,
        extra={
            "n_frames": int(mel.n_frames),
            "n_mels": int(mel.n_mels),
            "hop_ms": mel.hop_ms,
            "win_ms": mel.win_ms,
            "sample_rate": mel.sample_rate,
        },
    )


def load_mel(path) -> MelSpectrogram:
    frames, meta = load_array(path)
    try:
        expected = (int(meta["n_frames"]), int(meta["n_mels"]))
    except KeyError as exc:
        raise FormatError(f"mel sidecar for {path} lacks {exc}") from exc
    if frames.shape != expected:
        raise FormatError(
            f"{path}: payload shape {frames.shape} != sidecar {expected}"
        )
    return MelSpectrogram(
        frames=frames,
        hop_ms=float(meta["hop_ms"]),
        win_ms=float(meta["win_ms"]),
        sample_rate=int(meta["sample_rate"]),
    )


def mel_cache_name(conversation_id: str, turn_index: int) -> str:
    return f"{conversation_id}_t{turn_index:03d}.mel.f32"
