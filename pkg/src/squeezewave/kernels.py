"""Minimal 1-D neural network kernels.

A feature map is a 2-D ``float32`` array of shape ``(channels, length)`` in
C order, so element ``(c, t)`` sits at flat index ``c * length + t``.
Convolutions run as float32 BLAS matmuls; the blocked pairwise accumulation
keeps the error of the longest inner sums here (under 10^3 terms) near
1e-6 relative.  Scalar reductions that do grow with signal length, the
log-determinant sums, are accumulated in float64 by their owners.

Every multiply-accumulate executed by a convolution or channel-mixing matmul
can be tallied through :class:`mac_counter`, which the cost analyzer's tests
use to pin the analytical model to the executed arithmetic.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import ShapeError

_tally = threading.local()


class mac_counter:
    """Context manager that counts multiply-accumulates on this thread.

    Only convolution and matrix-mix multiplies are counted; bias adds,
    activations, gates and nearest-neighbor upsampling are free.
    """

    def __enter__(self):
        self.count = 0
        stack = getattr(_tally, "stack", None)
        if stack is None:
            stack = _tally.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _tally.stack.pop()
        return False


def _count(n: int) -> None:
    for counter in getattr(_tally, "stack", ()):
        counter.count += n


def as_feature_map(a) -> np.ndarray:
    """Coerce to a (channels, length) float32 map, validating the shape."""
    a = np.ascontiguousarray(a, dtype=np.float32)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"feature map must be 2-D (channels, length), got shape {a.shape}")
    return a


@dataclass(frozen=True)
class ConvSpec:
    """Static description of a 1-D convolution (stride is always 1)."""

    kernel_size: int
    in_channels: int
    out_channels: int
    dilation: int = 1
    padding: int = 0
    separable: bool = False

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ShapeError(f"kernel size must be odd and positive, got {self.kernel_size}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError("channel counts must be positive")
        if self.dilation < 1 or self.padding < 0:
            raise ShapeError("dilation must be >= 1 and padding >= 0")

    @classmethod
    def same(cls, kernel_size, in_channels, out_channels, dilation=1, separable=False):
        """Spec whose output length equals its input length (odd kernels)."""
        pad = dilation * (kernel_size - 1) // 2
        return cls(kernel_size, in_channels, out_channels, dilation, pad, separable)

    def out_length(self, in_length: int) -> int:
        n = in_length + 2 * self.padding - self.dilation * (self.kernel_size - 1)
        if n < 1:
            raise ShapeError(
                f"convolution output would be empty: L_in={in_length}, K={self.kernel_size}, "
                f"d={self.dilation}, p={self.padding}"
            )
        return n


class ConvWeights:
    """Weight tensors for one convolution, dense or depthwise-separable.

    Dense: ``weight[C_out][C_in][K]`` and ``bias[C_out]``.
    Separable: ``dw_weight[C_in][K]``, ``dw_bias[C_in]``,
    ``pw_weight[C_out][C_in]``, ``pw_bias[C_out]``.
    """

    def __init__(self, spec: ConvSpec, **tensors):
        self.spec = spec
        expect = self.shapes(spec)
        if set(tensors) != set(expect):
            raise ShapeError(f"expected tensors {sorted(expect)}, got {sorted(tensors)}")
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype=np.float32)
            if arr.shape != expect[name]:
                raise ShapeError(f"{name} has shape {arr.shape}, expected {expect[name]}")
            setattr(self, name, arr)

    @staticmethod
    def shapes(spec: ConvSpec) -> dict:
        k, ci, co = spec.kernel_size, spec.in_channels, spec.out_channels
        if spec.separable:
            return {
                "dw_weight": (ci, k),
                "dw_bias": (ci,),
                "pw_weight": (co, ci),
                "pw_bias": (co,),
            }
        return {"weight": (co, ci, k), "bias": (co,)}

    @classmethod
    def zeros(cls, spec: ConvSpec) -> "ConvWeights":
        return cls(spec, **{n: np.zeros(s, np.float32) for n, s in cls.shapes(spec).items()})

    @classmethod
    def random(cls, spec: ConvSpec, rng: np.random.Generator, gain: float = 0.5) -> "ConvWeights":
        """Fan-in-scaled weights ~ N(0, (gain/sqrt(fan))^2), biases zero.

        The fan-in scaling keeps activations near unit magnitude at any
        width, which a fixed weight scale does not.
        """
        fans = {"weight": spec.in_channels * spec.kernel_size,
                "dw_weight": spec.kernel_size, "pw_weight": spec.in_channels}
        tensors = {}
        for name, shape in cls.shapes(spec).items():
            if name.endswith("bias"):
                tensors[name] = np.zeros(shape, np.float32)
            else:
                draw = rng.standard_normal(shape, dtype=np.float32)
                draw *= np.float32(gain / np.sqrt(fans[name]))
                tensors[name] = draw
        return cls(spec, **tensors)

    def tensors(self) -> dict:
        return {name: getattr(self, name) for name in self.shapes(self.spec)}


def _sliding(x: np.ndarray, spec: ConvSpec, l_out: int) -> np.ndarray:
    """Zero-padded sliding view of shape (C_in, K, L_out)."""
    c, l_in = x.shape
    if spec.padding:
        padded = np.zeros((c, l_in + 2 * spec.padding), dtype=x.dtype)
        padded[:, spec.padding : spec.padding + l_in] = x
    else:
        padded = x
    s0, s1 = padded.strides
    return as_strided(padded, shape=(c, spec.kernel_size, l_out), strides=(s0, spec.dilation * s1, s1))


def conv1d(x: np.ndarray, spec: ConvSpec, weights: ConvWeights) -> np.ndarray:
    """Dense 1-D convolution, zero padded, stride 1."""
    if spec.separable:
        raise ShapeError("conv1d requires a dense spec; use depthwise_separable_conv1d")
    if x.shape[0] != spec.in_channels:
        raise ShapeError(f"input has {x.shape[0]} channels, spec expects {spec.in_channels}")
    x = np.ascontiguousarray(x, dtype=np.float32)
    l_out = spec.out_length(x.shape[1])
    if spec.kernel_size == 1 and spec.padding == 0:
        y = weights.weight[:, :, 0] @ x
    else:
        cols = _sliding(x, spec, l_out).reshape(spec.in_channels * spec.kernel_size, l_out)
        y = weights.weight.reshape(spec.out_channels, -1) @ cols
    y += weights.bias[:, None]
    _count(spec.kernel_size * spec.in_channels * spec.out_channels * l_out)
    return y


def depthwise_separable_conv1d(x: np.ndarray, spec: ConvSpec, weights: ConvWeights) -> np.ndarray:
    """Per-channel temporal filter followed by a pointwise channel mix."""
    if not spec.separable:
        raise ShapeError("depthwise_separable_conv1d requires a separable spec")
    if x.shape[0] != spec.in_channels:
        raise ShapeError(f"input has {x.shape[0]} channels, spec expects {spec.in_channels}")
    x = np.ascontiguousarray(x, dtype=np.float32)
    l_out = spec.out_length(x.shape[1])
    view = _sliding(x, spec, l_out)
    inter = np.einsum("ck,ckt->ct", weights.dw_weight, view)
    inter += weights.dw_bias[:, None]
    y = weights.pw_weight @ inter
    y += weights.pw_bias[:, None]
    _count(spec.kernel_size * spec.in_channels * l_out + spec.in_channels * spec.out_channels * l_out)
    return y


def upsample_nearest(x: np.ndarray, target_length: int) -> np.ndarray:
    """Repeat each frame ceil(target/length) times, then truncate.

    The ceil-then-truncate rule makes non-integer ratios deterministic.
    """
    length = x.shape[1]
    if target_length < length:
        raise ShapeError(f"cannot upsample length {length} down to {target_length}")
    if target_length == length:
        return x
    factor = -(-target_length // length)
    return np.repeat(x, factor, axis=1)[:, :target_length]


def gated_activation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """tanh(a) * sigmoid(b), element-wise."""
    if a.shape != b.shape:
        raise ShapeError(f"gate inputs differ in shape: {a.shape} vs {b.shape}")
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    # sigmoid written via tanh to stay overflow-free for large |b|
    sig = np.float32(0.5) + np.float32(0.5) * np.tanh(np.float32(0.5) * b)
    return np.tanh(a) * sig
