"""Builds the converter's test fixtures: small checkpoints in the naming
schemes used by published WaveGlow/SqueezeWave training code.

Run from the repository root:

    python3 scripts/make_checkpoint_fixtures.py converter/fixtures
"""

import sys
from pathlib import Path

import torch
import torch.nn as nn
from torch.nn.utils import weight_norm


class Invertible1x1Conv(nn.Module):
    def __init__(self, c):
        super().__init__()
        self.conv = nn.Conv1d(c, c, 1, bias=False)
        with torch.no_grad():
            w = torch.linalg.qr(torch.randn(c, c))[0]
            self.conv.weight.copy_(w[:, :, None])


class WaveglowWN(nn.Module):
    """Dense dilated layers, per-layer conditioning projections."""

    def __init__(self, half, width, n_layers, cond_in, k=3):
        super().__init__()
        self.start = weight_norm(nn.Conv1d(half, width, 1))
        self.in_layers = nn.ModuleList()
        self.cond_layers = nn.ModuleList()
        self.res_skip_layers = nn.ModuleList()
        for i in range(n_layers):
            d = 2**i
            self.in_layers.append(
                weight_norm(nn.Conv1d(width, 2 * width, k, dilation=d, padding=d * (k - 1) // 2))
            )
            self.cond_layers.append(weight_norm(nn.Conv1d(cond_in, 2 * width, 1)))
            out = 2 * width if i < n_layers - 1 else width
            self.res_skip_layers.append(weight_norm(nn.Conv1d(width, out, 1)))
        self.end = nn.Conv1d(width, 2 * half, 1)


class SqueezewaveWN(nn.Module):
    """Separable undilated layers, one fused conditioning projection."""

    def __init__(self, half, width, n_layers, cond_in, k=3):
        super().__init__()
        self.start = weight_norm(nn.Conv1d(half, width, 1))
        self.cond_layer = weight_norm(nn.Conv1d(cond_in, 2 * width * n_layers, 1))
        self.in_layers = nn.ModuleList()
        self.res_skip_layers = nn.ModuleList()
        for _ in range(n_layers):
            depthwise = nn.Conv1d(width, width, k, padding=(k - 1) // 2, groups=width)
            pointwise = nn.Conv1d(width, 2 * width, 1)
            self.in_layers.append(nn.Sequential(depthwise, pointwise))
            self.res_skip_layers.append(weight_norm(nn.Conv1d(width, width, 1)))
        self.end = nn.Conv1d(width, 2 * half, 1)


class FlowModel(nn.Module):
    def __init__(self, wn_cls, *, n_mels, group, n_flows, every, size, width, n_layers,
                 cond_in, upsample_kernel, upsample_stride):
        super().__init__()
        self.upsample = nn.ConvTranspose1d(n_mels, n_mels, upsample_kernel,
                                           stride=upsample_stride)
        self.WN = nn.ModuleList()
        self.convinv = nn.ModuleList()
        remaining = group
        for k in range(n_flows):
            if k % every == 0 and k > 0 and size:
                remaining -= size
            self.convinv.append(Invertible1x1Conv(remaining))
            self.WN.append(wn_cls(remaining // 2, width, n_layers, cond_in))
        self.n_flows = n_flows
        self.n_group = group
        self.n_early_every = every
        self.n_early_size = size


def tiny_waveglow():
    # module-graph checkpoint, per-layer conditioning, early outputs at 2 and 4
    return FlowModel(
        WaveglowWN, n_mels=6, group=8, n_flows=5, every=2, size=2,
        width=8, n_layers=2, cond_in=6 * 8, upsample_kernel=16, upsample_stride=4,
    )


def tiny_squeezewave():
    return FlowModel(
        SqueezewaveWN, n_mels=6, group=8, n_flows=4, every=2, size=2,
        width=8, n_layers=2, cond_in=6, upsample_kernel=16, upsample_stride=4,
    )


def main(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(1234)

    wg = tiny_waveglow()
    torch.save({"model": wg, "iteration": 1000}, out_dir / "tiny_waveglow.pt")

    sw = tiny_squeezewave()
    torch.save(sw.state_dict(), out_dir / "tiny_squeezewave.pt")

    broken = {k: v for k, v in wg.state_dict().items() if "WN.1.cond_layers.0" not in k}
    torch.save(broken, out_dir / "missing_tensor.pt")

    print(f"fixtures written to {out_dir}")


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "converter/fixtures"))
