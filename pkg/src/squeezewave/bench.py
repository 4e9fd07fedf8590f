"""Wall-clock throughput measurement of the synthesis path."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import rng
from .model import Model, infer


def synthetic_mel(n_mels: int, frames: int, seed: int = 1234) -> np.ndarray:
    """Deterministic stand-in conditioning, N(0, 1) per bin."""
    return rng.gaussians(seed, 0, n_mels * frames).reshape(n_mels, frames).astype(np.float32)


@dataclass
class BenchResult:
    samples: int
    runs_s: list[float]

    @property
    def median_s(self) -> float:
        return float(np.median(self.runs_s))

    @property
    def variance_s2(self) -> float:
        return float(np.var(self.runs_s))

    @property
    def samples_per_second(self) -> float:
        return self.samples / self.median_s

    def real_time_factor(self, sample_rate: int) -> float:
        return self.samples_per_second / sample_rate


def measure(model: Model, seconds: float = 10.0, *, runs: int = 5, warmup: int = 1,
            threads: int = 1, seed: int = 0) -> BenchResult:
    """Time synthesis of ``seconds`` of audio from synthetic conditioning."""
    cfg = model.config
    frames = max(1, int(round(seconds * cfg.sample_rate / cfg.hop)))
    mel = synthetic_mel(cfg.n_mels, frames)
    out_samples = frames * cfg.hop
    for _ in range(warmup):
        infer(mel, 1.0, model, seed, threads=threads)
    timings = []
    for _ in range(runs):
        t0 = time.perf_counter()
        audio = infer(mel, 1.0, model, seed, threads=threads)
        timings.append(time.perf_counter() - t0)
        assert audio.size == out_samples
    return BenchResult(samples=out_samples, runs_s=timings)
