"""Complete vocoder models: configuration, assembly, forward and synthesis.

The training-direction pass maps grouped audio to a Gaussian latent while
accumulating the exact log-determinant; synthesis runs the inverted flow
stack on a drawn (or injected) latent.  Long mel inputs are chunked into
fixed windows; windows are independent, so multi-threaded synthesis is
bit-identical to single-threaded.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .errors import ConfigError, ShapeError
from .flow import SQUEEZEWAVE, WAVEGLOW, FlowStep, InvertiblePointwise, WNShape, WNWeights
from .kernels import ConvWeights, _count, as_feature_map, conv1d, upsample_nearest


@dataclass(frozen=True)
class ModelConfig:
    """Architecture description; the only input the analyzer needs.

    Field order matters: the model file stores these fields in declaration
    order (see storage.py).
    """

    sample_rate: int = 22050
    group_size: int = 8
    n_flows: int = 12
    n_early_every: int = 4
    n_early_size: int = 2
    wn_layers: int = 8
    wn_width: int = 256
    wn_kernel: int = 3
    variant: str = WAVEGLOW
    cond_before_upsample: bool = False
    n_mels: int = 80
    hop: int = 256
    window_samples: int = 16000
    upsample_kernel: int = 0  # 0 = nearest-neighbor; else learned transposed-conv taps

    def validate(self) -> "ModelConfig":
        if self.variant not in (WAVEGLOW, SQUEEZEWAVE):
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.group_size < 2 or self.group_size % 2:
            raise ConfigError("group_size must be even and >= 2")
        if self.n_flows < 0:
            raise ConfigError("n_flows must be >= 0")
        if self.n_early_size < 0 or self.n_early_size % 2:
            raise ConfigError("n_early_size must be even and >= 0")
        if self.n_early_every < 0:
            raise ConfigError("n_early_every must be >= 0")
        if min(self.wn_layers, self.wn_width, self.n_mels, self.hop) < 1:
            raise ConfigError("wn_layers, wn_width, n_mels and hop must be positive")
        if self.wn_kernel < 1 or self.wn_kernel % 2 == 0:
            raise ConfigError("wn_kernel must be odd")
        if self.variant == WAVEGLOW and self.cond_before_upsample:
            raise ConfigError("waveglow-variant conditioning is upsampled before projection")
        if self.window_samples < self.hop:
            raise ConfigError("window_samples must cover at least one conditioning frame")
        if (self.window_frames * self.hop) % self.group_size:
            raise ConfigError("window frames must group evenly into flow channels")
        for pre in self.channels_before_flow():
            if pre < 2 or pre % 2:
                raise ConfigError("live channel count must stay even and >= 2")
        for i, pre in enumerate(self.channels_before_flow()):
            if self.emits_early_before(i) and pre < 2 * self.n_early_size:
                raise ConfigError("early output would leave fewer than n_early_size channels")
        return self

    # --- schedule -------------------------------------------------------

    def emits_early_before(self, flow_index: int) -> bool:
        return (
            self.n_early_every > 0
            and self.n_early_size > 0
            and flow_index > 0
            and flow_index % self.n_early_every == 0
        )

    def channels_before_flow(self) -> list[int]:
        """Live channel count entering each flow, before its early emission."""
        out, c = [], self.group_size
        for i in range(self.n_flows):
            out.append(c)
            if self.emits_early_before(i):
                c -= self.n_early_size
                out[-1] = c
        return out

    def final_channels(self) -> int:
        chans = self.channels_before_flow()
        return chans[-1] if chans else self.group_size

    # --- derived sizes --------------------------------------------------

    @property
    def cond_in(self) -> int:
        """Channels entering each flow's conditioning projection.

        The waveglow variant upsamples the mel to sample rate and groups it
        alongside the audio, so every flow sees n_mels * group_size channels.
        The squeezewave variants condition at mel frame rate.
        """
        if self.variant == WAVEGLOW:
            return self.n_mels * self.group_size
        return self.n_mels

    @property
    def cond_width(self) -> int:
        return 2 * self.wn_width * self.wn_layers

    @property
    def window_frames(self) -> int:
        return self.window_samples // self.hop

    def frames_to_length(self, n_frames: int) -> int:
        return n_frames * self.hop // self.group_size


PRESETS: dict[str, ModelConfig] = {
    "waveglow": ModelConfig(
        group_size=8, wn_width=256, variant=WAVEGLOW,
        window_samples=16000, upsample_kernel=1024,
    ),
    "sw-128l": ModelConfig(
        group_size=128, wn_width=256, variant=SQUEEZEWAVE,
        cond_before_upsample=True, window_samples=16384,
    ),
    "sw-128s": ModelConfig(
        group_size=128, wn_width=128, variant=SQUEEZEWAVE,
        cond_before_upsample=True, window_samples=16384,
    ),
    "sw-64l": ModelConfig(
        group_size=256, wn_width=256, variant=SQUEEZEWAVE,
        window_samples=16384,
    ),
    "sw-64s": ModelConfig(
        group_size=256, wn_width=128, variant=SQUEEZEWAVE,
        window_samples=16384,
    ),
}


@dataclass
class Model:
    """A configuration plus every learned weight, immutable once built."""

    config: ModelConfig
    flows: list[FlowStep]
    upsampler: tuple[np.ndarray, np.ndarray] | None = None  # (weight [C,C,K], bias [C])

    def __post_init__(self):
        cfg = self.config.validate()
        if len(self.flows) != cfg.n_flows:
            raise ConfigError(f"model has {len(self.flows)} flows, config says {cfg.n_flows}")
        for step, pre in zip(self.flows, cfg.channels_before_flow()):
            if step.mix.side != pre or step.wn.half_channels != pre // 2:
                raise ConfigError("flow widths disagree with the early-output schedule")
            if step.wn.width != cfg.wn_width or step.wn.n_layers != cfg.wn_layers:
                raise ConfigError("WN shape disagrees with config")
            if step.wn.cond_in != cfg.cond_in or step.wn.kernel_size != cfg.wn_kernel:
                raise ConfigError("conditioning shape disagrees with config")
            want = WAVEGLOW if cfg.variant == WAVEGLOW else SQUEEZEWAVE
            if step.wn.variant != want:
                raise ConfigError("WN variant disagrees with config")
        if cfg.upsample_kernel:
            if self.upsampler is None:
                raise ConfigError("config declares a learned upsampler but no weights present")
            w, b = self.upsampler
            if w.shape != (cfg.n_mels, cfg.n_mels, cfg.upsample_kernel) or b.shape != (cfg.n_mels,):
                raise ConfigError("upsampler weight shape disagrees with config")
        elif self.upsampler is not None:
            raise ConfigError("upsampler weights present but config says nearest-neighbor")


@dataclass
class LatentVector:
    """Flat latent with enough layout metadata to re-split per flow."""

    z: np.ndarray  # 1-D float32, length == samples of the processed window
    chunks: list[tuple[int, int]] = field(default_factory=list)  # (channels, length)

    def split(self) -> list[np.ndarray]:
        out, offset = [], 0
        for c, l in self.chunks:
            out.append(self.z[offset : offset + c * l].reshape(c, l))
            offset += c * l
        if offset != self.z.size:
            raise ShapeError("latent length disagrees with its chunk layout")
        return out


def group_audio(wave: np.ndarray, group_size: int) -> np.ndarray:
    """Reshape samples into (group_size, length) with contiguous blocks.

    Frame t holds samples [t*group_size, (t+1)*group_size).
    """
    wave = np.asarray(wave, dtype=np.float32).reshape(-1)
    if wave.size == 0 or wave.size % group_size:
        raise ShapeError(f"{wave.size} samples do not divide into groups of {group_size}")
    return np.ascontiguousarray(wave.reshape(-1, group_size).T)


def ungroup_audio(x: np.ndarray) -> np.ndarray:
    """Exact inverse of group_audio."""
    return np.ascontiguousarray(x.T).reshape(-1)


def _learned_upsample(mel: np.ndarray, weight: np.ndarray, bias: np.ndarray, hop: int) -> np.ndarray:
    """Transposed convolution with stride ``hop``; overlap-add per frame."""
    channels, frames = mel.shape
    k = weight.shape[2]
    out_len = (frames - 1) * hop + k
    out = np.zeros((weight.shape[1], out_len))
    taps = weight.astype(np.float64)  # (C_in, C_out, K)
    contrib = np.tensordot(mel.astype(np.float64).T, taps, axes=1)  # (frames, C_out, K)
    for f in range(frames):
        out[:, f * hop : f * hop + k] += contrib[f]
    out += bias.astype(np.float64)[:, None]
    _count(frames * k * channels * weight.shape[1])
    return out.astype(np.float32)


def _aligned_cond_input(mel: np.ndarray, model: Model, length: int) -> np.ndarray:
    """Conditioning signal aligned for the per-flow projections.

    Waveglow variant: mel upsampled to sample rate, trimmed, then grouped to
    (n_mels * group_size, length).  Squeezewave variants: kept at frame rate
    when the projection runs before upsampling, else stretched to ``length``.
    """
    cfg = model.config
    mel = as_feature_map(mel)
    if mel.shape[0] != cfg.n_mels:
        raise ShapeError(f"mel has {mel.shape[0]} channels, config expects {cfg.n_mels}")
    if cfg.variant == WAVEGLOW:
        target = length * cfg.group_size
        if model.upsampler is not None:
            up = _learned_upsample(mel, *model.upsampler, cfg.hop)
        else:
            up = upsample_nearest(mel, target)
        if up.shape[1] < target:
            raise ShapeError("mel is too short to condition this many samples")
        up = up[:, :target]
        grouped = up.reshape(cfg.n_mels, length, cfg.group_size).transpose(0, 2, 1)
        return np.ascontiguousarray(grouped.reshape(cfg.n_mels * cfg.group_size, length))
    if cfg.cond_before_upsample:
        return mel
    return upsample_nearest(mel, length)


def _flow_cond(aligned: np.ndarray, step: FlowStep, cfg: ModelConfig, length: int) -> np.ndarray:
    """This flow's projected conditioning map, (cond_width, length)."""
    projected = conv1d(aligned, step.wn.cond_spec(), step.wn.cond)
    if cfg.cond_before_upsample:
        projected = upsample_nearest(projected, length)
    return projected


def prepare_conditioning(mel: np.ndarray, model: Model, length: int | None = None) -> list[np.ndarray]:
    """Projected conditioning for every flow.

    ``length`` defaults to the grouped length the mel covers exactly.
    """
    cfg = model.config
    if length is None:
        length = cfg.frames_to_length(np.asarray(mel).shape[1])
    aligned = _aligned_cond_input(mel, model, length)
    return [_flow_cond(aligned, step, cfg, length) for step in model.flows]


def forward(audio: np.ndarray, mel: np.ndarray, model: Model, *,
            prepared_cond: list[np.ndarray] | None = None):
    """Map audio to its latent; returns (LatentVector, total_log_det).

    Before each flow i with i > 0 and i % n_early_every == 0, the first
    n_early_size channels move to the latent and leave the live tensor.
    ``prepared_cond`` (the prepare_conditioning output for this mel) skips
    re-projecting the conditioning when one utterance is processed many
    times; it must match the audio's grouped length.
    """
    cfg = model.config
    x = group_audio(audio, cfg.group_size)
    length = x.shape[1]
    aligned = None if prepared_cond is not None else _aligned_cond_input(mel, model, length)
    chunks: list[np.ndarray] = []
    total_log_det = 0.0
    for i, step in enumerate(model.flows):
        if cfg.emits_early_before(i):
            chunks.append(np.ascontiguousarray(x[: cfg.n_early_size]))
            x = x[cfg.n_early_size :]
        if prepared_cond is not None:
            cond = prepared_cond[i]
        else:
            cond = _flow_cond(aligned, step, cfg, length)
        x, log_det = step.forward(x, cond, cond_projected=True)
        total_log_det += log_det
    chunks.append(x)
    z = np.concatenate([c.reshape(-1) for c in chunks])
    latent = LatentVector(z=z, chunks=[c.shape for c in chunks])
    return latent, total_log_det


def _invert_window(z_chunks: list[np.ndarray], mel: np.ndarray, model: Model,
                   prepared_cond: list[np.ndarray] | None = None) -> np.ndarray:
    """Run the inverted flow stack on pre-split latent chunks."""
    cfg = model.config
    length = z_chunks[-1].shape[1]
    aligned = None if prepared_cond is not None else _aligned_cond_input(mel, model, length)
    x = z_chunks[-1]
    remaining = z_chunks[:-1]
    for i in range(cfg.n_flows - 1, -1, -1):
        if prepared_cond is not None:
            cond = prepared_cond[i]
        else:
            cond = _flow_cond(aligned, model.flows[i], cfg, length)
        x = model.flows[i].inverse(x, cond, cond_projected=True)
        if cfg.emits_early_before(i):
            x = np.concatenate([remaining[-1], x], axis=0)
            remaining = remaining[:-1]
    return ungroup_audio(x)


def latent_layout(cfg: ModelConfig, length: int) -> list[tuple[int, int]]:
    """Chunk shapes of a window's latent, in emission order."""
    chunks = []
    for i in range(cfg.n_flows):
        if cfg.emits_early_before(i):
            chunks.append((cfg.n_early_size, length))
    chunks.append((cfg.final_channels(), length))
    return chunks


def _split_flat_z(z: np.ndarray, cfg: ModelConfig, length: int) -> list[np.ndarray]:
    layout = latent_layout(cfg, length)
    need = sum(c * l for c, l in layout)
    if z.size != need:
        raise ShapeError(f"latent has {z.size} values, window needs {need}")
    return LatentVector(z=np.asarray(z, np.float32).reshape(-1), chunks=layout).split()


def infer(mel: np.ndarray, sigma: float, model: Model, seed: int = 0, *,
          z: np.ndarray | None = None, threads: int = 1,
          prepared_cond: list[np.ndarray] | None = None) -> np.ndarray:
    """Synthesize audio from a mel-spectrogram.

    The latent is N(0, sigma^2) from the counter generator unless ``z`` is
    injected.  Mels longer than one window are chunked; the final partial
    window is zero-padded and its synthesis trimmed.  Output length is
    frames * hop samples.  ``prepared_cond`` (see forward) is accepted for
    single-window inputs only.
    """
    if sigma <= 0:
        raise ShapeError("sigma must be positive")
    cfg = model.config
    mel = as_feature_map(mel)
    frames = mel.shape[1]
    wf = cfg.window_frames
    n_windows = -(-frames // wf)
    window_samples = wf * cfg.hop
    window_length = cfg.frames_to_length(wf)
    if prepared_cond is not None and n_windows > 1:
        raise ShapeError("prepared conditioning covers exactly one window")

    def run(w: int) -> np.ndarray:
        chunk = mel[:, w * wf : (w + 1) * wf]
        if chunk.shape[1] < wf:
            chunk = np.pad(chunk, ((0, 0), (0, wf - chunk.shape[1])))
        if z is None:
            zw = sigma * rng.gaussians(seed, w * window_samples, window_samples)
        else:
            zw = np.asarray(z, np.float32).reshape(-1)[w * window_samples : (w + 1) * window_samples]
        return _invert_window(
            _split_flat_z(zw.astype(np.float32), cfg, window_length), chunk, model, prepared_cond
        )

    if z is not None and np.asarray(z).size != n_windows * window_samples:
        raise ShapeError(
            f"injected latent has {np.asarray(z).size} values, "
            f"{n_windows} windows need {n_windows * window_samples}"
        )
    if threads > 1 and n_windows > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pieces = list(pool.map(run, range(n_windows)))
    else:
        pieces = [run(w) for w in range(n_windows)]
    return np.concatenate(pieces)[: frames * cfg.hop]


def nll(audio: np.ndarray, mel: np.ndarray, sigma: float, model: Model) -> float:
    """Per-sample negative log-likelihood, up to the constant entropy term.

    Returns (sum(z^2) / (2 sigma^2) - total_log_det) / n_samples.  The
    sigma-dependent normalization constant is omitted, so values are
    comparable across signals only at fixed sigma.
    """
    if sigma <= 0:
        raise ShapeError("sigma must be positive")
    latent, total_log_det = forward(audio, mel, model)
    quad = float(np.sum(latent.z.astype(np.float64) ** 2)) / (2.0 * sigma * sigma)
    return (quad - total_log_det) / latent.z.size


def _random_orthogonal(gen: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(gen.standard_normal((n, n)))
    return (q * np.sign(np.diag(r))).astype(np.float32)


def _random_mix(gen: np.random.Generator, n: int) -> np.ndarray:
    """Well-conditioned non-orthogonal matrix with |log det| of order 1."""
    q1 = _random_orthogonal(gen, n).astype(np.float64)
    q2 = _random_orthogonal(gen, n).astype(np.float64)
    scales = np.exp(gen.standard_normal(n) * 0.35)
    return (q1 * scales) @ q2


def random_model(config: ModelConfig, seed: int = 0, *, orthogonal: bool = True) -> Model:
    """Seeded random weights for tests and benchmarks.

    1x1 mixes are random orthogonal (or well-conditioned general matrices
    when ``orthogonal`` is False, giving the flow an order-one log-det).
    Convolutions are fan-in-scaled normals with zero biases, so activations
    and coupling scales stay bounded at every width and roundtrip
    tolerances are meaningful.  Weight draws use numpy's PCG64 stream,
    which is stable for a fixed seed.
    """
    cfg = config.validate()
    gen = np.random.Generator(np.random.PCG64(seed))
    flows = []
    for pre in cfg.channels_before_flow():
        w = _random_orthogonal(gen, pre) if orthogonal else _random_mix(gen, pre)
        wn_weights = _random_wn(cfg, pre // 2, gen)
        flows.append(FlowStep(InvertiblePointwise(w), wn_weights))
    upsampler = None
    if cfg.upsample_kernel:
        k = cfg.upsample_kernel
        weight = gen.standard_normal((cfg.n_mels, cfg.n_mels, k), dtype=np.float32)
        weight *= np.float32(0.5 / np.sqrt(cfg.n_mels * k))
        upsampler = (weight, np.zeros(cfg.n_mels, np.float32))
    return Model(config=cfg, flows=flows, upsampler=upsampler)


def wn_shape(cfg: ModelConfig, half: int) -> WNShape:
    return WNShape(cfg.variant, half, cfg.wn_width, cfg.wn_layers, cfg.cond_in, cfg.wn_kernel)


def _random_wn(cfg: ModelConfig, half: int, gen: np.random.Generator) -> WNWeights:
    shape = wn_shape(cfg, half)
    rand = lambda spec: ConvWeights.random(spec, gen)
    return WNWeights(
        cfg.variant, half, cfg.wn_width, cfg.wn_layers, cfg.cond_in, cfg.wn_kernel,
        start=rand(shape.start_spec()),
        in_layers=[rand(shape.in_spec(i)) for i in range(cfg.wn_layers)],
        cond=rand(shape.cond_spec()),
        res_skip=[rand(shape.res_skip_spec(i)) for i in range(cfg.wn_layers)],
        end=rand(shape.end_spec()),
    )
