"""WAV file handling and mel-spectrogram extraction.

The mel front end matches the conventions this vocoder family was trained
with: FFT size 1024, hop 256, periodic Hann window of length 1024, centered
frames via reflect padding, an 80-band area-normalized triangular filterbank
on the Slaney mel scale spanning 0-8000 Hz over magnitude spectra, and
natural-log compression with a 1e-5 floor.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ShapeError

N_FFT = 1024
HOP = 256
WIN_LENGTH = 1024
N_MELS = 80
F_MIN = 0.0
F_MAX = 8000.0
SAMPLE_RATE = 22050
LOG_FLOOR = 1e-5


@dataclass
class Waveform:
    samples: np.ndarray  # float32 in [-1, 1]
    sample_rate: int


def read_wav(path) -> Waveform:
    """Read a 16-bit PCM mono RIFF file; samples scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as wf:
            if wf.getnchannels() != 1:
                raise FormatError(f"{path}: only mono input is supported ({wf.getnchannels()} channels)")
            if wf.getsampwidth() != 2:
                raise FormatError(f"{path}: only 16-bit PCM is supported ({8 * wf.getsampwidth()}-bit)")
            raw = wf.readframes(wf.getnframes())
            rate = wf.getframerate()
    except wave.Error as exc:
        raise FormatError(f"{path}: malformed or unsupported WAV file: {exc}") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    return Waveform(samples=samples, sample_rate=rate)


def write_wav(path, waveform: Waveform) -> None:
    """Write 16-bit PCM mono; samples clamped to [-1, 1] and scaled by 32767."""
    clipped = np.clip(np.asarray(waveform.samples, dtype=np.float32), -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(waveform.sample_rate)
        wf.writeframes(pcm.tobytes())


def hann_window(length: int = WIN_LENGTH) -> np.ndarray:
    """Periodic Hann window."""
    n = np.arange(length)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)


def _hz_to_mel(f):
    """Slaney scale: linear below 1 kHz, logarithmic above."""
    f = np.asarray(f, dtype=np.float64)
    mel = 3.0 * f / 200.0
    log_region = f >= 1000.0
    log_step = np.log(6.4) / 27.0
    return np.where(log_region, 15.0 + np.log(np.maximum(f, 1000.0) / 1000.0) / log_step, mel)


def _mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    hz = 200.0 * m / 3.0
    log_region = m >= 15.0
    log_step = np.log(6.4) / 27.0
    return np.where(log_region, 1000.0 * np.exp(log_step * (m - 15.0)), hz)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE,
                   f_min: float = F_MIN, f_max: float = F_MAX) -> np.ndarray:
    """(n_mels, n_fft//2 + 1) triangular filters, area-normalized."""
    edges = _mel_to_hz(np.linspace(_hz_to_mel(f_min), _hz_to_mel(f_max), n_mels + 2))
    bins = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lower = (bins - edges[:-2, None]) / (edges[1:-1, None] - edges[:-2, None])
    upper = (edges[2:, None] - bins) / (edges[2:, None] - edges[1:-1, None])
    weights = np.maximum(0.0, np.minimum(lower, upper))
    weights *= (2.0 / (edges[2:] - edges[:-2]))[:, None]
    return weights


def frame_count(n_samples: int, hop: int = HOP) -> int:
    """Centered-frame count: floor(n/hop) + 1."""
    return n_samples // hop + 1


def stft_magnitudes(samples: np.ndarray) -> np.ndarray:
    """(frames, n_fft//2 + 1) magnitude spectra of centered Hann frames."""
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ShapeError("empty input")
    pad = N_FFT // 2
    if x.size <= pad:
        raise ShapeError(f"input must be longer than {pad} samples for centered frames")
    padded = np.pad(x, pad, mode="reflect")
    n_frames = frame_count(x.size)
    window = hann_window()
    frames = np.empty((n_frames, N_FFT))
    for t in range(n_frames):
        frames[t] = padded[t * HOP : t * HOP + N_FFT]
    return np.abs(np.fft.rfft(frames * window, axis=1))


def mel_spectrogram(waveform: Waveform) -> np.ndarray:
    """(80, frames) log-mel feature map of a 22050 Hz waveform."""
    if waveform.sample_rate != SAMPLE_RATE:
        raise ShapeError(f"expected {SAMPLE_RATE} Hz input, got {waveform.sample_rate}")
    spectra = stft_magnitudes(waveform.samples)
    mel = mel_filterbank() @ spectra.T
    return np.log(np.maximum(mel, LOG_FLOOR)).astype(np.float32)
