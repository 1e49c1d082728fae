"""Griffin-Lim waveform reconstruction from log-mel spectrograms.

A debugging-quality vocoder: the mel filterbank is pseudo-inverted to a
linear magnitude spectrogram and the phase is recovered by iterative
STFT/ISTFT projection. The output has exactly ``(n_frames - 1) * hop``
samples (one analysis hop short of the frame count law's fixed point), so
re-analysis yields the same frame count.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, InputError
from .mel import MelConfig, hann_window, mel_filterbank, stft_complex


def mel_to_linear_magnitude(logmel: np.ndarray, config: MelConfig) -> np.ndarray:
    """Pseudo-invert the filterbank: (n, n_mels) log-mel -> (n, bins) >= 0."""
    logmel = np.asarray(logmel, dtype=np.float64)
    if logmel.ndim != 2 or logmel.shape[1] != config.n_mels:
        raise InputError(f"expected (n, {config.n_mels}) log-mel, got {logmel.shape}")
    amplitudes = np.exp(logmel)
    inverse = np.linalg.pinv(mel_filterbank(config))  # (bins, n_mels)
    return np.maximum(amplitudes @ inverse.T, 0.0)


def istft(spectrum: np.ndarray, config: MelConfig, length: int) -> np.ndarray:
    """Windowed overlap-add inverse of :func:`stft_complex`."""
    win = config.win_samples
    hop = config.hop_samples
    window = hann_window(win)
    frames = np.fft.irfft(spectrum, n=config.n_fft, axis=1)[:, :win] * window
    n_frames = frames.shape[0]
    total = (n_frames - 1) * hop + win
    signal = np.zeros(total)
    weight = np.zeros(total)
    for t in range(n_frames):
        signal[t * hop : t * hop + win] += frames[t]
        weight[t * hop : t * hop + win] += window**2
    signal /= np.maximum(weight, 1e-10)
    pad = win // 2
    out = signal[pad : pad + length]
    if out.shape[0] < length:
        out = np.pad(out, (0, length - out.shape[0]))
    return out


def griffin_lim(
    logmel: np.ndarray,
    config: MelConfig,
    iterations: int = 60,
    seed: int = 0,
) -> np.ndarray:
    """Reconstruct a waveform whose mel spectrogram approximates ``logmel``.

    ``iterations`` phase-refinement rounds follow a random-phase
    initialization drawn from ``seed``; zero iterations returns the
    initial inversion.
    """
    if iterations < 0:
        raise ConfigError("iterations must be >= 0")
    magnitude = mel_to_linear_magnitude(logmel, config)
    n_frames = magnitude.shape[0]
    length = max(config.hop_samples, (n_frames - 1) * config.hop_samples)
    rng = np.random.default_rng(seed)
    phase = rng.uniform(-np.pi, np.pi, size=magnitude.shape)
    waveform = istft(magnitude * np.exp(1j * phase), config, length)
    for _ in range(iterations):
        analyzed = stft_complex(waveform, config)[:n_frames]
        phase = np.angle(analyzed)
        waveform = istft(magnitude * np.exp(1j * phase), config, length)
    return waveform
