"""Command-line interface.

One subcommand per workflow: synthesize, analyze, benchmark, roundtrip,
nll, gen-random-model, mel.  Every command is deterministic for fixed flags
and seeds, exits 0 on success, and prints a one-line diagnostic with a
nonzero exit code on failure.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from . import analyzer, bench, rng, storage
from .audio import Waveform, mel_spectrogram, read_wav, write_wav
from .errors import ConfigError, VocoderError
from .flow import SQUEEZEWAVE, WAVEGLOW
from .model import PRESETS, ModelConfig, forward, infer, nll, random_model


def _preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(sorted(PRESETS))}")


def _parse_config_file(path: str) -> ModelConfig:
    """One `key = value` per line, keys matching ModelConfig field names."""
    values = {}
    bools = {"true": True, "false": False, "1": True, "0": False}
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value'")
            key, _, value = (part.strip() for part in line.partition("="))
            if key == "variant":
                if value not in (WAVEGLOW, SQUEEZEWAVE):
                    raise ConfigError(f"{path}:{line_no}: unknown variant {value!r}")
                values[key] = value
            elif key == "cond_before_upsample":
                if value.lower() not in bools:
                    raise ConfigError(f"{path}:{line_no}: expected true/false")
                values[key] = bools[value.lower()]
            elif key in ModelConfig.__dataclass_fields__:
                values[key] = int(value)
            else:
                raise ConfigError(f"{path}:{line_no}: unknown config key {key!r}")
    return ModelConfig(**values).validate()


def _config_from_args(args) -> tuple[ModelConfig, str]:
    if getattr(args, "config", None):
        return _parse_config_file(args.config), args.config
    return _preset(args.preset), args.preset


def _load_mel_input(args) -> np.ndarray:
    if getattr(args, "mel", None):
        return storage.load_mel(args.mel)
    return mel_spectrogram(read_wav(args.wav))


def cmd_synthesize(args) -> int:
    model = storage.load_model(args.model)
    mel = _load_mel_input(args)
    t0 = time.perf_counter()
    audio = infer(mel, args.sigma, model, args.seed, threads=args.threads)
    elapsed = time.perf_counter() - t0
    write_wav(args.out, Waveform(audio, model.config.sample_rate))
    print(f"wrote {args.out}: {audio.size} samples in {elapsed:.2f} s "
          f"({audio.size / elapsed:,.0f} samples/s)")
    return 0


def cmd_analyze(args) -> int:
    config, name = _config_from_args(args)
    report = analyzer.analyze(config, args.seconds)
    if args.format == "records":
        print(analyzer.format_records(report))
    else:
        print(analyzer.format_table(report, name))
        if name != "waveglow" and config != PRESETS["waveglow"]:
            baseline = analyzer.analyze(PRESETS["waveglow"], args.seconds)
            print(f"waveglow / {name} MAC ratio: {analyzer.compare(baseline, report):.1f}")
    return 0


def cmd_benchmark(args) -> int:
    if args.model:
        model = storage.load_model(args.model)
        name = args.model
    elif args.preset or args.config:
        config, name = _config_from_args(args)
        model = random_model(config, seed=args.seed)
    else:
        raise ConfigError("benchmark needs --model, --preset or --config")
    result = bench.measure(model, args.seconds, runs=args.runs, warmup=args.warmup,
                           threads=args.threads, seed=args.seed)
    rate = model.config.sample_rate
    print(f"{name}: {result.samples_per_second:,.0f} samples/s "
          f"(median of {len(result.runs_s)} runs, variance {result.variance_s2:.2e} s^2), "
          f"real-time factor {result.real_time_factor(rate):.2f} at {rate} Hz")
    return 0


def cmd_roundtrip(args) -> int:
    config, name = _config_from_args(args)
    model = random_model(config, seed=args.seed)
    frames = model.config.window_frames
    mel = bench.synthetic_mel(config.n_mels, frames, seed=args.seed + 1)
    samples = frames * config.hop
    audio = np.asarray(rng.gaussians(args.seed + 2, 0, samples), dtype=np.float32)
    latent, _ = forward(audio, mel, model)
    restored = infer(mel, 1.0, model, z=latent.z)
    fwd_err = float(np.max(np.abs(restored - audio)))

    z0 = rng.gaussians(args.seed + 3, 0, samples).astype(np.float32)
    synth = infer(mel, 1.0, model, z=z0)
    latent2, _ = forward(synth, mel, model)
    inv_err = float(np.max(np.abs(latent2.z - z0)))

    tiny = ModelConfig(group_size=4, n_flows=2, n_early_every=0, n_early_size=0,
                       wn_layers=2, wn_width=8, variant=config.variant,
                       cond_before_upsample=config.cond_before_upsample,
                       n_mels=8, hop=4, window_samples=16)
    jac_err = _logdet_relative_error(tiny, seed=args.seed)

    print(f"forward->inverse max abs error: {fwd_err:.2e}")
    print(f"inverse->forward max abs error: {inv_err:.2e}")
    print(f"tiny-config log-det relative error: {jac_err:.2e}")
    ok = fwd_err < 1e-3 and inv_err < 1e-3 and jac_err < 1e-3
    print("roundtrip: " + ("pass" if ok else "FAIL"))
    return 0 if ok else 1


def _logdet_relative_error(config: ModelConfig, seed: int) -> float:
    """Analytic total_log_det vs a central-difference Jacobian log|det|."""
    model = random_model(config, seed=seed, orthogonal=False)
    n = config.window_samples
    mel = bench.synthetic_mel(config.n_mels, n // config.hop, seed=seed + 10)
    audio = rng.gaussians(seed + 11, 0, n).astype(np.float32)
    _, analytic = forward(audio, mel, model)
    h = 0.02
    jac = np.empty((n, n))
    for j in range(n):
        up, down = audio.copy(), audio.copy()
        up[j] += h
        down[j] -= h
        zu, _ = forward(up, mel, model)
        zd, _ = forward(down, mel, model)
        jac[:, j] = (zu.z.astype(np.float64) - zd.z.astype(np.float64)) / (2 * h)
    _, numeric = np.linalg.slogdet(jac)
    return abs(analytic - numeric) / max(abs(numeric), 1e-12)


def cmd_nll(args) -> int:
    model = storage.load_model(args.model)
    wav = read_wav(args.wav)
    cfg = model.config
    samples = wav.samples
    usable = (samples.size // cfg.group_size) * cfg.group_size
    if usable == 0:
        raise VocoderError(f"{args.wav}: too short for group size {cfg.group_size}")
    samples = samples[:usable]
    mel = mel_spectrogram(Waveform(samples, wav.sample_rate))
    needed = -(-usable // cfg.hop)
    value = nll(samples, mel[:, :max(needed, 1)], args.sigma, model)
    print(f"nll: {value:.6f}")
    return 0


def cmd_gen_random_model(args) -> int:
    config, _ = _config_from_args(args)
    model = random_model(config, seed=args.seed)
    storage.save_model(model, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_mel(args) -> int:
    mel = mel_spectrogram(read_wav(args.wav))
    storage.save_mel(args.out, mel)
    print(f"wrote {args.out}: {mel.shape[0]}x{mel.shape[1]}")
    return 0


def _add_config_source(p, required=True):
    group = p.add_mutually_exclusive_group(required=required)
    group.add_argument("--preset", choices=sorted(PRESETS), help="built-in configuration")
    group.add_argument("--config", help="configuration file (key = value lines)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="squeezewave",
                                     description="Flow-vocoder inference engine and cost analyzer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthesize", help="mel (or wav) -> waveform")
    p.add_argument("--model", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--mel", help="mel container file")
    src.add_argument("--wav", help="compute the mel from this wav first")
    p.add_argument("--out", required=True)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=cmd_synthesize)

    p = sub.add_parser("analyze", help="MAC/parameter cost report")
    _add_config_source(p)
    p.add_argument("--seconds", type=float, default=1.0)
    p.add_argument("--format", choices=("table", "records"), default="table")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("benchmark", help="synthesis throughput")
    _add_config_source(p, required=False)
    p.add_argument("--model", help="benchmark an existing model file")
    p.add_argument("--seconds", type=float, default=10.0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_benchmark)

    p = sub.add_parser("roundtrip", help="verify bijectivity of a random model")
    _add_config_source(p)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_roundtrip)

    p = sub.add_parser("nll", help="negative log-likelihood of audio under a model")
    p.add_argument("--model", required=True)
    p.add_argument("--wav", required=True)
    p.add_argument("--sigma", type=float, default=1.0)
    p.set_defaults(fn=cmd_nll)

    p = sub.add_parser("gen-random-model", help="write a seeded random model file")
    _add_config_source(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_random_model)

    p = sub.add_parser("mel", help="wav -> mel container")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_mel)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (VocoderError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
