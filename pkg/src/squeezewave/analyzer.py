"""Analytical cost model: per-layer MACs and parameters for any config.

MAC accounting: one multiply-accumulate per kernel tap per output element.
A dense convolution costs K * C_in * C_out * L_out; its depthwise-separable
replacement costs K * C_in * L_out + C_in * C_out * L_out (temporal stage
plus pointwise stage).  Bias adds, gates, activations and nearest-neighbor
upsampling cost nothing; the learned transposed-convolution upsampler and
the per-flow 1x1 mixes are counted in their own classes.  These totals match
the multiply-accumulate counter wired into the kernels exactly.

Per-second normalization follows the published cost tables for this model
family: layer costs are enumerated over one 16384-sample window, and the
window is normalized by the legacy 16000-sample segment duration
(gmacs_per_second = window_macs * sample_rate / 16000 / 1e9).

Parameter accounting counts weight elements resident at inference time:
convolution kernels, the 1x1 mixing matrices together with their cached
inverses, and upsampler taps.  Bias vectors (under 0.3% of any total here)
are excluded; this is the convention under which the published parameter
counts for this family are reproduced.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .flow import WAVEGLOW
from .kernels import ConvSpec
from .model import ModelConfig, wn_shape

COST_WINDOW_SAMPLES = 16384
REFERENCE_WINDOW_SAMPLES = 16000

LAYER_CLASSES = ("inv1x1", "start", "in_layer", "cond_layer", "res_skip_layer", "end", "upsample")


@dataclass(frozen=True)
class LayerCost:
    name: str
    layer_class: str
    macs: int
    params: int


@dataclass
class CostReport:
    """Layer costs for one analysis window plus normalized totals."""

    config_name: str
    layers: list[LayerCost]
    seconds: float
    sample_rate: int

    @property
    def total_macs(self) -> int:
        """Exact MAC count of one analysis window."""
        return sum(l.macs for l in self.layers)

    @property
    def params_total(self) -> int:
        return sum(l.params for l in self.layers)

    def class_totals(self) -> dict[str, tuple[int, int]]:
        totals = {c: [0, 0] for c in LAYER_CLASSES}
        for l in self.layers:
            totals[l.layer_class][0] += l.macs
            totals[l.layer_class][1] += l.params
        return {c: (m, p) for c, (m, p) in totals.items()}

    @property
    def gmacs_per_second(self) -> float:
        return self.total_macs * self.sample_rate / REFERENCE_WINDOW_SAMPLES / 1e9

    @property
    def total_gmacs(self) -> float:
        """GMACs for the requested duration; linear in seconds."""
        return self.gmacs_per_second * self.seconds

    def class_share(self, layer_class: str) -> float:
        total = self.total_macs
        return self.class_totals()[layer_class][0] / total if total else 0.0


def macs_dense_conv(spec: ConvSpec, l_out: int) -> int:
    if spec.separable:
        raise ConfigError("macs_dense_conv requires a dense spec")
    return spec.kernel_size * spec.in_channels * spec.out_channels * l_out


def macs_separable_conv(spec: ConvSpec, l_in: int) -> int:
    if not spec.separable:
        raise ConfigError("macs_separable_conv requires a separable spec")
    return spec.kernel_size * spec.in_channels * l_in + spec.in_channels * spec.out_channels * l_in


def _conv_macs(spec: ConvSpec, l_out: int) -> int:
    if spec.separable:
        return macs_separable_conv(spec, l_out)
    return macs_dense_conv(spec, l_out)


def _conv_params(spec: ConvSpec) -> int:
    """Weight elements only; bias vectors are not counted."""
    if spec.separable:
        return spec.in_channels * spec.kernel_size + spec.out_channels * spec.in_channels
    return spec.kernel_size * spec.in_channels * spec.out_channels


def window_layer_costs(config: ModelConfig, n_frames: int, mel_frames: int) -> list[LayerCost]:
    """Every layer's cost for one window of ``n_frames`` grouped steps.

    ``mel_frames`` is the conditioning length at frame rate.  Mirrors the
    execution graph exactly, including early-output channel shrinkage.
    """
    config.validate()
    cond_len = mel_frames if config.cond_before_upsample else n_frames
    if config.variant == WAVEGLOW:
        cond_len = n_frames
    layers: list[LayerCost] = []
    for i, pre in enumerate(config.channels_before_flow()):
        shape = wn_shape(config, pre // 2)
        prefix = f"flow{i}."
        layers.append(LayerCost(prefix + "inv1x1", "inv1x1", pre * pre * n_frames, 2 * pre * pre))

        def add(name, cls, spec, length):
            layers.append(LayerCost(prefix + name, cls, _conv_macs(spec, length), _conv_params(spec)))

        add("wn.start", "start", shape.start_spec(), n_frames)
        for j in range(config.wn_layers):
            add(f"wn.in{j}", "in_layer", shape.in_spec(j), n_frames)
        add("wn.cond", "cond_layer", shape.cond_spec(), cond_len)
        for j in range(config.wn_layers):
            add(f"wn.res_skip{j}", "res_skip_layer", shape.res_skip_spec(j), n_frames)
        add("wn.end", "end", shape.end_spec(), n_frames)
    if config.upsample_kernel:
        layers.append(
            LayerCost(
                "upsample",
                "upsample",
                mel_frames * config.upsample_kernel * config.n_mels * config.n_mels,
                config.n_mels * config.n_mels * config.upsample_kernel,
            )
        )
    return layers


def analyze(config: ModelConfig, audio_seconds: float = 1.0) -> CostReport:
    """Cost report for synthesizing ``audio_seconds`` of audio."""
    if audio_seconds <= 0:
        raise ConfigError("audio_seconds must be positive")
    config.validate()
    if COST_WINDOW_SAMPLES % config.group_size:
        raise ConfigError("group_size must divide the analysis window")
    n_frames = COST_WINDOW_SAMPLES // config.group_size
    mel_frames = COST_WINDOW_SAMPLES // config.hop
    layers = window_layer_costs(config, n_frames, mel_frames)
    return CostReport(
        config_name=config.variant,
        layers=layers,
        seconds=audio_seconds,
        sample_rate=config.sample_rate,
    )


def count_params(config: ModelConfig) -> int:
    """Inference-resident weight elements implied by a configuration."""
    n_frames = COST_WINDOW_SAMPLES // config.group_size
    mel_frames = COST_WINDOW_SAMPLES // config.hop
    return sum(l.params for l in window_layer_costs(config, n_frames, mel_frames))


def compare(a: CostReport, b: CostReport) -> float:
    """MAC ratio a/b, the 'how many times cheaper is b' number."""
    if b.total_macs == 0:
        raise ConfigError("cannot compare against a zero-MAC report")
    return a.total_macs / b.total_macs


def format_table(report: CostReport, name: str = "") -> str:
    """Human-readable per-class summary."""
    lines = []
    title = name or report.config_name
    lines.append(f"cost report: {title}  ({report.seconds:g} s of audio at {report.sample_rate} Hz)")
    lines.append(f"{'class':<16}{'GMACs':>12}{'share':>9}{'params':>14}")
    totals = report.class_totals()
    scale = report.sample_rate / REFERENCE_WINDOW_SAMPLES / 1e9 * report.seconds
    for cls in LAYER_CLASSES:
        macs, params = totals[cls]
        if macs == 0 and params == 0:
            continue
        share = report.class_share(cls)
        lines.append(f"{cls:<16}{macs * scale:>12.4f}{share:>8.1%}{params:>14,}")
    lines.append(f"{'total':<16}{report.total_gmacs:>12.4f}{'':>8}{report.params_total:>14,}")
    lines.append(f"gmacs/s = {report.gmacs_per_second:.4f}   params = {report.params_total / 1e6:.2f} M")
    return "\n".join(lines)


def format_records(report: CostReport) -> str:
    """Machine-readable: one tab-separated record per layer."""
    rows = [f"{l.name}\t{l.layer_class}\t{l.macs}\t{l.params}" for l in report.layers]
    return "\n".join(rows)
