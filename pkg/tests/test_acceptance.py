"""Acceptance suite: one test per criterion, each printing a pass line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
numbers.  The WaveGlow-sized checks share one set of seeded random models,
built once per session.
"""

import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import record_criterion
from squeezewave import rng as crng
from squeezewave.analyzer import analyze, compare, count_params, window_layer_costs
from squeezewave.audio import (
    HOP,
    LOG_FLOOR,
    SAMPLE_RATE,
    Waveform,
    mel_spectrogram,
)
from squeezewave.bench import measure, synthetic_mel
from squeezewave.kernels import ConvSpec, ConvWeights, conv1d, depthwise_separable_conv1d, mac_counter
from squeezewave.model import (
    PRESETS,
    ModelConfig,
    forward,
    infer,
    nll,
    prepare_conditioning,
    random_model,
)

PUBLISHED_GMACS = {"waveglow": 228.9, "sw-128l": 3.78, "sw-128s": 1.07, "sw-64l": 2.16, "sw-64s": 0.69}
PUBLISHED_RATIOS = {"sw-128l": 61.0, "sw-128s": 214.0, "sw-64l": 106.0, "sw-64s": 332.0}
PUBLISHED_PARAMS = {"waveglow": 87.7e6, "sw-128l": 23.6e6, "sw-128s": 7.1e6,
                "sw-64l": 24.6e6, "sw-64s": 8.8e6}

_models: dict[str, object] = {}


def preset_model(name):
    if name not in _models:
        _models[name] = random_model(PRESETS[name], seed=1)
    return _models[name]


def test_a1_waveglow_cost():
    t0 = time.perf_counter()
    report = analyze(PRESETS["waveglow"], 1.0)
    total = report.total_gmacs
    shares = {cls: report.class_share(cls) for cls in ("in_layer", "cond_layer", "res_skip_layer")}
    elapsed = time.perf_counter() - t0
    assert 224.0 <= total <= 234.0
    assert abs(shares["in_layer"] - 0.47) <= 0.03
    assert abs(shares["cond_layer"] - 0.39) <= 0.03
    assert abs(shares["res_skip_layer"] - 0.14) <= 0.03
    assert elapsed < 1.0
    record_criterion(f"A1 PASS: waveglow {total:.2f} GMACs/s, shares "
          f"{shares['in_layer']:.1%}/{shares['cond_layer']:.1%}/{shares['res_skip_layer']:.1%}, "
          f"analyzed in {elapsed * 1e3:.0f} ms")


def test_a2_squeezewave_costs_and_ratios():
    baseline = analyze(PRESETS["waveglow"], 1.0)
    lines = []
    for name, expected in PUBLISHED_RATIOS.items():
        report = analyze(PRESETS[name], 1.0)
        gmacs = report.total_gmacs
        ratio = compare(baseline, report)
        assert abs(gmacs / PUBLISHED_GMACS[name] - 1) <= 0.05, name
        assert abs(ratio / expected - 1) <= 0.05, name
        lines.append(f"{name} {gmacs:.3f}G (x{ratio:.0f})")
    record_criterion("A2 PASS: " + ", ".join(lines))


def test_a3_parameter_counts():
    lines = []
    for name, expected in PUBLISHED_PARAMS.items():
        params = count_params(PRESETS[name])
        assert abs(params / expected - 1) <= 0.05, name
        lines.append(f"{name} {params / 1e6:.2f}M")
    record_criterion("A3 PASS: " + ", ".join(lines))


@pytest.mark.parametrize("c_out", [8, 128, 512])
def test_a4_separable_cost_law(c_out):
    k, c_in, length = 3, 32, 12
    x = np.zeros((c_in, length), np.float32)
    dense_spec = ConvSpec(k, c_in, c_out, padding=1)
    sep_spec = ConvSpec(k, c_in, c_out, padding=1, separable=True)
    with mac_counter() as dense:
        conv1d(x, dense_spec, ConvWeights.zeros(dense_spec))
    with mac_counter() as sep:
        depthwise_separable_conv1d(x, sep_spec, ConvWeights.zeros(sep_spec))
    measured = Fraction(sep.count, dense.count)
    assert measured == Fraction(1, c_out) + Fraction(1, k)
    record_criterion(f"A4 PASS: K={k} C_out={c_out}: measured ratio {measured} == 1/C_out + 1/K")


def test_a5_bijectivity_suite():
    """Both roundtrip compositions per preset on one window each.

    The timed work is the bijection evaluations: conditioning preparation
    plus three flow-stack passes per preset (audio -> z -> audio checks
    forward/inverse; pushing the restored audio forward again checks
    inverse/forward on a drawn latent).  Building the seeded random models
    is setup, shared with the other criteria.
    """
    lines = []
    elapsed = 0.0
    for name in PRESETS:
        model = preset_model(name)
        cfg = model.config
        frames = cfg.window_frames
        mel = synthetic_mel(cfg.n_mels, frames, seed=7)
        audio = crng.gaussians(11, 0, frames * cfg.hop).astype(np.float32)
        t0 = time.perf_counter()
        cond = prepare_conditioning(mel, model, length=cfg.frames_to_length(frames))
        latent, _ = forward(audio, mel, model, prepared_cond=cond)
        restored = infer(mel, 1.0, model, z=latent.z, prepared_cond=cond)
        fwd_err = float(np.max(np.abs(restored - audio)))
        relatent, _ = forward(restored, mel, model, prepared_cond=cond)
        elapsed += time.perf_counter() - t0
        inv_err = float(np.max(np.abs(relatent.z - latent.z)))
        assert fwd_err < 1e-3, name
        assert inv_err < 1e-3, name
        lines.append(f"{name} {fwd_err:.1e}/{inv_err:.1e}")
    assert elapsed < 60.0
    record_criterion(f"A5 PASS ({elapsed:.1f} s of roundtrips): " + ", ".join(lines))


def _tiny_logdet_config(i):
    variants = ("waveglow", "squeezewave")
    if i % 4 == 3:  # early-output schedule in the mix
        return ModelConfig(group_size=8, n_flows=5, n_early_every=2, n_early_size=2,
                           wn_layers=1, wn_width=4, variant=variants[i % 2],
                           n_mels=3, hop=8, window_samples=16)
    group = (4, 4, 8)[i % 3]
    return ModelConfig(group_size=group, n_flows=1 + i % 3, n_early_every=0, n_early_size=0,
                       wn_layers=1 + i % 2, wn_width=(4, 8)[i % 2], variant=variants[i % 2],
                       n_mels=3, hop=group, window_samples=16)


def test_a6_logdet_against_numerical_jacobian():
    worst = 0.0
    for i in range(20):
        cfg = _tiny_logdet_config(i).validate()
        model = random_model(cfg, seed=100 + i, orthogonal=False)
        n = cfg.window_samples
        mel = synthetic_mel(cfg.n_mels, cfg.window_frames, seed=200 + i)
        audio = crng.gaussians(300 + i, 0, n).astype(np.float32)
        _, analytic = forward(audio, mel, model)
        h = 0.02
        jac = np.zeros((n, n))
        for j in range(n):
            up, down = audio.copy(), audio.copy()
            up[j] += h
            down[j] -= h
            zu, _ = forward(up, mel, model)
            zd, _ = forward(down, mel, model)
            jac[:, j] = (zu.z.astype(np.float64) - zd.z) / (2 * h)
        _, numeric = np.linalg.slogdet(jac)
        rel = abs(analytic - numeric) / abs(numeric)
        worst = max(worst, rel)
        assert rel < 1e-3, f"model {i}: analytic {analytic:.6f} vs numeric {numeric:.6f}"
    record_criterion(f"A6 PASS: 20 tiny models, worst relative log-det error {worst:.2e}")


def test_a7_throughput_ordering():
    rates = {}
    for name in PRESETS:
        model = preset_model(name)
        cfg = model.config
        seconds = cfg.window_frames * cfg.hop / cfg.sample_rate
        runs = 1 if name == "waveglow" else 3
        result = measure(model, seconds, runs=runs, warmup=0, seed=3)
        rates[name] = result.samples_per_second
    base = rates["waveglow"]
    for name in PUBLISHED_RATIOS:
        assert rates[name] >= 10 * base, f"{name}: {rates[name]:.0f} vs waveglow {base:.0f}"
    rtf = rates["sw-128s"] / SAMPLE_RATE
    assert rtf >= 1.0
    summary = ", ".join(f"{n} {r:,.0f}/s (x{r / base:.0f})" for n, r in rates.items())
    record_criterion(f"A7 PASS: {summary}; sw-128s real-time factor {rtf:.1f}")


def test_a8_mel_pipeline():
    t = np.arange(22050)
    sine = (0.5 * np.sin(2 * np.pi * 1000.0 * t / SAMPLE_RATE)).astype(np.float32)
    mel = mel_spectrogram(Waveform(sine, SAMPLE_RATE)).astype(np.float64)
    frame = np.exp(mel[:, 40])
    peak = int(np.argmax(frame))
    energy = frame**2
    others = np.delete(energy, [peak - 1, peak, peak + 1])
    concentration_db = 10 * np.log10(energy[peak] / others.max())
    assert concentration_db >= 20.0

    gen = np.random.default_rng(8)
    for _ in range(10):
        n = int(gen.integers(600, 50000))
        frames = mel_spectrogram(Waveform(np.zeros(n, np.float32), SAMPLE_RATE)).shape[1]
        assert frames == n // HOP + 1

    floor = mel_spectrogram(Waveform(np.zeros(4096, np.float32), SAMPLE_RATE))
    assert np.all(floor == np.float32(np.log(LOG_FLOOR)))
    record_criterion(f"A8 PASS: 1 kHz concentration {concentration_db:.1f} dB, "
          f"frame formula x10, floor exact")


def test_a9_nll_sanity():
    identity = random_model(
        ModelConfig(group_size=4, n_flows=0, variant="squeezewave", n_mels=8,
                    hop=4, window_samples=4096), seed=0)
    mel = synthetic_mel(8, 1024, seed=5)
    silence = nll(np.zeros(4096, np.float32), mel, 1.0, identity)
    ones = nll(np.ones(4096, np.float32), mel, 1.0, identity)
    assert abs(silence) <= 1e-6
    assert abs(ones - 0.5) <= 1e-6

    lines = []
    for name in PRESETS:
        model = preset_model(name)
        cfg = model.config
        mel_w = synthetic_mel(cfg.n_mels, cfg.window_frames, seed=17)
        generated = infer(mel_w, 1.0, model, seed=23)
        segment = 4096
        mel_seg = mel_w[:, : segment // cfg.hop]
        nll_gen = nll(generated[:segment], mel_seg, 1.0, model)
        noise = (10.0 * crng.gaussians(29, 0, segment)).astype(np.float32)
        nll_noise = nll(noise, mel_seg, 1.0, model)
        assert nll_gen < nll_noise, name
        lines.append(f"{name} {nll_gen:.2f}<{nll_noise:.0f}")
    record_criterion(f"A9 PASS: identity exact (0, 0.5); generated vs noise: " + ", ".join(lines))
