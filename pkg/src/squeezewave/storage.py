"""Portable binary containers for models and mel-spectrograms.

Everything is little-endian.  Model file ("SQZW"):

    magic           4 bytes  "SQZW"
    version         u32      currently 1
    config block             every ModelConfig field in declaration order,
                             u32 except the two u8 flags:
                             sample_rate, group_size, n_flows, n_early_every,
                             n_early_size, wn_layers, wn_width, wn_kernel,
                             variant (u8: 0 waveglow / 1 squeezewave),
                             cond_before_upsample (u8), n_mels, hop,
                             window_samples, upsample_kernel
    tensor_count    u32
    per tensor:     name_len u16, name UTF-8, rank u8, dims u32 each,
                    raw float32 payload

Canonical tensor names:

    flow{i}.inv1x1.W
    flow{i}.wn.start.{weight,bias}
    flow{i}.wn.in{j}.{weight,bias}                       dense variant
    flow{i}.wn.in{j}.{dw_weight,dw_bias,pw_weight,pw_bias}  separable variant
    flow{i}.wn.cond.{weight,bias}
    flow{i}.wn.res_skip{j}.{weight,bias}
    flow{i}.wn.end.{weight,bias}
    upsample.{weight,bias}          only when upsample_kernel > 0; the weight
                                    is (n_mels, n_mels, upsample_kernel) in
                                    transposed-convolution layout

Mel file ("SQZM") uses the same tensor framing with a single rank-2 tensor
named "mel" and no config block.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ConfigError, FormatError, SchemaError
from .flow import SQUEEZEWAVE, WAVEGLOW, FlowStep, InvertiblePointwise, WNWeights
from .kernels import ConvWeights
from .model import Model, ModelConfig, wn_shape

MODEL_MAGIC = b"SQZW"
MEL_MAGIC = b"SQZM"
FORMAT_VERSION = 1

_VARIANT_CODE = {WAVEGLOW: 0, SQUEEZEWAVE: 1}
_CODE_VARIANT = {v: k for k, v in _VARIANT_CODE.items()}


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated file (needed {n} more bytes)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def done(self) -> None:
        if self.pos != len(self.data):
            raise FormatError(f"{self.path}: {len(self.data) - self.pos} trailing bytes")


def _write_tensors(parts: list, tensors: list[tuple[str, np.ndarray]]) -> None:
    parts.append(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())


def _read_tensors(r: _Reader) -> dict[str, np.ndarray]:
    count = r.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.take(r.u16()).decode("utf-8")
        rank = r.u8()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        payload = r.take(4 * int(np.prod(dims, dtype=np.int64)))
        if name in tensors:
            raise SchemaError(f"{r.path}: duplicate tensor {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return tensors


def model_tensor_names(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Canonical name -> shape table implied by a configuration."""
    table: dict[str, tuple[int, ...]] = {}
    for i, pre in enumerate(config.channels_before_flow()):
        shape = wn_shape(config, pre // 2)
        prefix = f"flow{i}."
        table[prefix + "inv1x1.W"] = (pre, pre)

        def add(layer: str, spec):
            for tname, tshape in ConvWeights.shapes(spec).items():
                table[f"{prefix}wn.{layer}.{tname}"] = tshape

        add("start", shape.start_spec())
        for j in range(config.wn_layers):
            add(f"in{j}", shape.in_spec(j))
        add("cond", shape.cond_spec())
        for j in range(config.wn_layers):
            add(f"res_skip{j}", shape.res_skip_spec(j))
        add("end", shape.end_spec())
    if config.upsample_kernel:
        table["upsample.weight"] = (config.n_mels, config.n_mels, config.upsample_kernel)
        table["upsample.bias"] = (config.n_mels,)
    return table


def model_tensors(model: Model) -> list[tuple[str, np.ndarray]]:
    """The model's tensors in canonical order."""
    out: list[tuple[str, np.ndarray]] = []
    for i, step in enumerate(model.flows):
        prefix = f"flow{i}."
        out.append((prefix + "inv1x1.W", step.mix.w))

        def add(layer: str, weights: ConvWeights):
            for tname, arr in weights.tensors().items():
                out.append((f"{prefix}wn.{layer}.{tname}", arr))

        add("start", step.wn.start)
        for j, w in enumerate(step.wn.in_layers):
            add(f"in{j}", w)
        add("cond", step.wn.cond)
        for j, w in enumerate(step.wn.res_skip):
            add(f"res_skip{j}", w)
        add("end", step.wn.end)
    if model.upsampler is not None:
        out.append(("upsample.weight", model.upsampler[0]))
        out.append(("upsample.bias", model.upsampler[1]))
    return out


def _pack_config(cfg: ModelConfig) -> bytes:
    return struct.pack(
        "<8I2B4I",
        cfg.sample_rate, cfg.group_size, cfg.n_flows, cfg.n_early_every,
        cfg.n_early_size, cfg.wn_layers, cfg.wn_width, cfg.wn_kernel,
        _VARIANT_CODE[cfg.variant], int(cfg.cond_before_upsample),
        cfg.n_mels, cfg.hop, cfg.window_samples, cfg.upsample_kernel,
    )


def _unpack_config(r: _Reader) -> ModelConfig:
    vals = struct.unpack("<8I2B4I", r.take(8 * 4 + 2 + 4 * 4))
    if vals[8] not in _CODE_VARIANT:
        raise SchemaError(f"{r.path}: unknown variant code {vals[8]}")
    cfg = ModelConfig(
        sample_rate=vals[0], group_size=vals[1], n_flows=vals[2],
        n_early_every=vals[3], n_early_size=vals[4], wn_layers=vals[5],
        wn_width=vals[6], wn_kernel=vals[7], variant=_CODE_VARIANT[vals[8]],
        cond_before_upsample=bool(vals[9]), n_mels=vals[10], hop=vals[11],
        window_samples=vals[12], upsample_kernel=vals[13],
    )
    try:
        return cfg.validate()
    except ConfigError as exc:
        raise SchemaError(f"{r.path}: invalid configuration: {exc}") from exc


def save_model(model: Model, path) -> None:
    parts = [MODEL_MAGIC, struct.pack("<I", FORMAT_VERSION), _pack_config(model.config)]
    _write_tensors(parts, model_tensors(model))
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_model(path) -> Model:
    """Read and validate a model file; every shape invariant is re-checked."""
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), str(path))
    if r.take(4) != MODEL_MAGIC:
        raise SchemaError(f"{r.path}: not a model file (bad magic)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise SchemaError(f"{r.path}: unsupported format version {version}")
    cfg = _unpack_config(r)
    tensors = _read_tensors(r)
    r.done()

    expected = model_tensor_names(cfg)
    for name, arr in tensors.items():
        if name not in expected:
            raise SchemaError(f"{r.path}: unknown tensor {name!r}")
        if arr.shape != expected[name]:
            raise SchemaError(
                f"{r.path}: tensor {name!r} has shape {arr.shape}, expected {expected[name]}"
            )
        if not np.isfinite(arr).all():
            raise SchemaError(f"{r.path}: tensor {name!r} contains non-finite values")
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise SchemaError(f"{r.path}: missing tensors {missing[:4]}")

    flows = []
    for i, pre in enumerate(cfg.channels_before_flow()):
        prefix = f"flow{i}."
        shape = wn_shape(cfg, pre // 2)

        def conv(layer: str, spec) -> ConvWeights:
            own = {
                tname: tensors[f"{prefix}wn.{layer}.{tname}"]
                for tname in ConvWeights.shapes(spec)
            }
            return ConvWeights(spec, **own)

        wn_weights = WNWeights(
            cfg.variant, pre // 2, cfg.wn_width, cfg.wn_layers, cfg.cond_in, cfg.wn_kernel,
            start=conv("start", shape.start_spec()),
            in_layers=[conv(f"in{j}", shape.in_spec(j)) for j in range(cfg.wn_layers)],
            cond=conv("cond", shape.cond_spec()),
            res_skip=[conv(f"res_skip{j}", shape.res_skip_spec(j)) for j in range(cfg.wn_layers)],
            end=conv("end", shape.end_spec()),
        )
        flows.append(FlowStep(InvertiblePointwise(tensors[prefix + "inv1x1.W"]), wn_weights))
    upsampler = None
    if cfg.upsample_kernel:
        upsampler = (tensors["upsample.weight"], tensors["upsample.bias"])
    return Model(config=cfg, flows=flows, upsampler=upsampler)


def save_mel(path, mel: np.ndarray) -> None:
    mel = np.ascontiguousarray(mel, dtype=np.float32)
    if mel.ndim != 2:
        raise SchemaError("mel must be 2-D (channels, frames)")
    parts = [MEL_MAGIC, struct.pack("<I", FORMAT_VERSION)]
    _write_tensors(parts, [("mel", mel)])
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_mel(path) -> np.ndarray:
    with open(path, "rb") as fh:
        r = _Reader(fh.read(), str(path))
    if r.take(4) != MEL_MAGIC:
        raise SchemaError(f"{r.path}: not a mel file (bad magic)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise SchemaError(f"{r.path}: unsupported format version {version}")
    tensors = _read_tensors(r)
    r.done()
    if set(tensors) != {"mel"} or tensors["mel"].ndim != 2:
        raise SchemaError(f"{r.path}: expected a single rank-2 tensor named 'mel'")
    return tensors["mel"]
