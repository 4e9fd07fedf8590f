"""Secondary acceptance (A10): the checkpoint converter feeds the engine.

Checkpoints in the published training layouts are generated with torch,
converted by the node tool, loaded by the engine, and cross-checked:

* conversion output passes the engine's full load validation,
* engine synthesis with an injected latent matches a straight-line torch
  reimplementation of the source model family within 1e-2 max-abs,
* the inferred configuration's cost matches its preset within 5%.
"""

import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

torch = pytest.importorskip("torch")

from conftest import record_criterion
from squeezewave.analyzer import analyze
from squeezewave.model import PRESETS, infer
from squeezewave.storage import load_model

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "scripts"))

import make_checkpoint_fixtures as builders  # noqa: E402

CONVERTER = REPO / "converter" / "dist" / "cli.js"


@pytest.fixture(scope="module")
def converter():
    if not CONVERTER.exists():
        subprocess.run(["npm", "install", "--no-audit", "--no-fund"],
                       cwd=REPO / "converter", check=True, capture_output=True)
        subprocess.run(["npm", "run", "build"], cwd=REPO / "converter",
                       check=True, capture_output=True)

    def run(src, dst, *overrides):
        args = ["node", str(CONVERTER), "convert", str(src), str(dst)]
        for pair in overrides:
            args += ["--set", pair]
        return subprocess.run(args, check=True, capture_output=True, text=True).stdout

    return run


def fused_weight(module):
    if hasattr(module, "weight_v"):
        v = module.weight_v.data
        g = module.weight_g.data
        norm = v.flatten(1).norm(dim=1).view(-1, *([1] * (v.dim() - 1)))
        return g * v / norm
    return module.weight.data


def oracle_infer(model, mel, z_flat):
    """Straight-line torch inverse pass in the source family's conventions.

    The structure follows the published inference code of this model
    lineage: transposed-convolution upsampling trimmed to the audio length,
    mel grouping alongside the audio channels, per-layer conditioning, and
    couplings whose projection emits (t, log_s) in that order.
    """
    import torch.nn.functional as F

    group = model.n_group
    length = z_flat.numel() // group
    up = F.conv_transpose1d(
        mel[None], model.upsample.weight, model.upsample.bias, stride=model.upsample.stride[0]
    )[0]
    up = up[:, : length * group]
    n_mels = up.shape[0]
    grouped = up.reshape(n_mels, length, group).permute(0, 2, 1).reshape(n_mels * group, length)

    def emits(k):
        return k > 0 and model.n_early_size and k % model.n_early_every == 0

    sides, remaining = [], group
    for k in range(model.n_flows):
        if emits(k):
            remaining -= model.n_early_size
        sides.append(remaining)
    layout = [model.n_early_size for k in range(model.n_flows) if emits(k)] + [sides[-1]]
    parts, offset = [], 0
    for c in layout:
        parts.append(z_flat[offset : offset + c * length].reshape(c, length))
        offset += c * length

    x = parts.pop()
    for k in reversed(range(model.n_flows)):
        wn = model.WN[k]
        half = x.shape[0] // 2
        y_a, y_b = x[:half], x[half:]
        h = F.conv1d(y_a[None], fused_weight(wn.start), wn.start.bias)[0]
        width = h.shape[0]
        skip = torch.zeros_like(h)
        for j, in_layer in enumerate(wn.in_layers):
            acts = F.conv1d(
                h[None], fused_weight(in_layer), in_layer.bias,
                padding=in_layer.padding[0], dilation=in_layer.dilation[0],
            )[0]
            cond = wn.cond_layers[j]
            acts = acts + F.conv1d(grouped[None], fused_weight(cond), cond.bias)[0]
            gate = torch.tanh(acts[:width]) * torch.sigmoid(acts[width:])
            res = wn.res_skip_layers[j]
            r = F.conv1d(gate[None], fused_weight(res), res.bias)[0]
            if j < len(wn.in_layers) - 1:
                h = h + r[:width]
                skip = skip + r[width:]
            else:
                skip = skip + r
        out = F.conv1d(skip[None], wn.end.weight, wn.end.bias)[0]
        shift, log_s = out[:half], out[half:]
        x_b = (y_b - shift) / torch.exp(log_s)
        x = torch.cat([y_a, x_b], 0)
        w_inv = torch.inverse(model.convinv[k].conv.weight.squeeze(-1).double()).float()
        x = w_inv @ x
        if emits(k):
            x = torch.cat([parts.pop(), x], 0)
    return x.permute(1, 0).reshape(-1)


def test_a10_converted_checkpoint_matches_reference(tmp_path, converter):
    torch.manual_seed(77)
    reference = builders.tiny_waveglow()
    ckpt = tmp_path / "wg.pt"
    torch.save({"model": reference, "iteration": 1}, ckpt)

    out = tmp_path / "wg.sqzw"
    log = converter(ckpt, out, "window_samples=64")
    assert "variant=waveglow" in log
    engine_model = load_model(out)  # zero validation errors

    frames = engine_model.config.window_frames
    gen = np.random.default_rng(5)
    mel = gen.standard_normal((6, frames)).astype(np.float32)
    z = gen.standard_normal(frames * engine_model.config.hop).astype(np.float32)

    engine_audio = infer(mel, 1.0, engine_model, z=z)
    with torch.no_grad():
        expected = oracle_infer(reference, torch.from_numpy(mel), torch.from_numpy(z))
    err = float(np.max(np.abs(engine_audio - expected.numpy())))
    assert err < 1e-2
    record_criterion(f"A10 PASS (z-injection): engine vs reference max abs error {err:.2e}")


def test_a10_inferred_config_cost_matches_preset(tmp_path, converter):
    torch.manual_seed(99)
    full = builders.FlowModel(
        builders.SqueezewaveWN, n_mels=80, group=128, n_flows=12, every=4, size=2,
        width=128, n_layers=8, cond_in=80, upsample_kernel=1024, upsample_stride=256,
    )
    ckpt = tmp_path / "sw128s.pt"
    torch.save(full.state_dict(), ckpt)

    out = tmp_path / "sw128s.sqzw"
    log = converter(ckpt, out)
    assert "variant=squeezewave" in log
    assert "dropped: upsample.weight" in log

    model = load_model(out)
    assert model.config == PRESETS["sw-128s"]
    inferred = analyze(model.config, 1.0).gmacs_per_second
    preset = analyze(PRESETS["sw-128s"], 1.0).gmacs_per_second
    assert abs(inferred / preset - 1) <= 0.05
    record_criterion(f"A10 PASS (cost cross-check): inferred {inferred:.3f} GMACs/s vs preset {preset:.3f}")


def test_a10_conversion_idempotent(tmp_path, converter):
    torch.manual_seed(77)
    ckpt = tmp_path / "sw.pt"
    torch.save(builders.tiny_squeezewave().state_dict(), ckpt)
    a, b = tmp_path / "a.sqzw", tmp_path / "b.sqzw"
    converter(ckpt, a, "hop=8", "window_samples=64")
    converter(ckpt, b, "hop=8", "window_samples=64")
    assert a.read_bytes() == b.read_bytes()
    load_model(a)


def test_a10_corrupted_checkpoint_names_missing_tensors(tmp_path, converter):
    torch.manual_seed(77)
    state = builders.tiny_waveglow().state_dict()
    broken = {k: v for k, v in state.items() if "WN.1.cond_layers.0" not in k}
    ckpt = tmp_path / "broken.pt"
    torch.save(broken, ckpt)
    with pytest.raises(subprocess.CalledProcessError) as err:
        converter(ckpt, tmp_path / "broken.sqzw")
    assert "cond projections" in err.value.stderr
