"""Invertible building blocks of one flow step.

A step is: invertible pointwise channel mix, split the channels in half,
run the first half (plus conditioning) through a WaveNet-like network to get
``(log_s, t)``, then affine-couple the second half.  Both the mix and the
coupling have exact inverses, so the whole step does too.

Channel split convention, used by both directions: ``x_a`` is channels
``[0, c/2)`` and ``x_b`` is channels ``[c/2, c)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvertibilityError, ShapeError
from .kernels import (
    ConvSpec,
    ConvWeights,
    _count,
    conv1d,
    depthwise_separable_conv1d,
    gated_activation,
)

WAVEGLOW = "waveglow"
SQUEEZEWAVE = "squeezewave"

_DET_FLOOR = 1e-12


def _invert_with_logdet(w: np.ndarray):
    """Partial-pivot Gaussian elimination: returns (inverse, log|det|).

    Raises if the matrix is singular or |det| <= 1e-12.
    """
    n = w.shape[0]
    a = np.concatenate([w.astype(np.float64), np.eye(n)], axis=1)
    log_det = 0.0
    for col in range(n):
        pivot_row = col + int(np.argmax(np.abs(a[col:, col])))
        pivot = a[pivot_row, col]
        if pivot == 0.0:
            raise InvertibilityError("1x1 mixing matrix is singular")
        if pivot_row != col:
            a[[col, pivot_row]] = a[[pivot_row, col]]
        log_det += math.log(abs(pivot))
        a[col] /= pivot
        for row in range(n):
            if row != col and a[row, col] != 0.0:
                a[row] -= a[row, col] * a[col]
    if log_det <= math.log(_DET_FLOOR):
        raise InvertibilityError(f"1x1 mixing matrix has |det| <= {_DET_FLOOR:g}")
    return a[:, n:], log_det


class InvertiblePointwise:
    """Square channel-mixing matrix with its inverse cached at load time."""

    def __init__(self, w: np.ndarray):
        w = np.ascontiguousarray(w, dtype=np.float32)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ShapeError(f"1x1 weight must be square, got shape {w.shape}")
        self.w = w
        self.w_inv, self.log_abs_det = _invert_with_logdet(w)

    @property
    def side(self) -> int:
        return self.w.shape[0]

    def forward(self, x: np.ndarray):
        """Mix channels at every time step; returns (y, log_det)."""
        if x.shape[0] != self.side:
            raise ShapeError(f"input has {x.shape[0]} channels, matrix side is {self.side}")
        length = x.shape[1]
        y = (self.w.astype(np.float64) @ x.astype(np.float64)).astype(np.float32)
        _count(self.side * self.side * length)
        return y, length * self.log_abs_det

    def inverse(self, y: np.ndarray) -> np.ndarray:
        if y.shape[0] != self.side:
            raise ShapeError(f"input has {y.shape[0]} channels, matrix side is {self.side}")
        _count(self.side * self.side * y.shape[1])
        return (self.w_inv @ y.astype(np.float64)).astype(np.float32)


@dataclass
class CouplingCoeffs:
    """The (log_s, t) pair produced by the WN network."""

    log_s: np.ndarray
    t: np.ndarray


@dataclass
class WNShape:
    """Static layer plan of one WN network.

    For half-width input (c/2 channels), width ``w``, ``n`` layers and
    conditioning input ``cond_in``:

    * ``start``: 1x1, c/2 -> w
    * ``in_layers[i]``: kernel K, w -> 2w.  Waveglow variant: dense with
      dilation 2**i.  Squeezewave variant: depthwise-separable, undilated.
    * ``cond``: 1x1, cond_in -> 2*w*n, sliced per layer.
    * ``res_skip[i]``: 1x1.  Waveglow: w -> 2w except the last layer
      (w -> w).  Squeezewave: w -> w everywhere.
    * ``end``: 1x1, w -> c (the (log_s, t) pair).
    """

    variant: str
    half_channels: int
    width: int
    n_layers: int
    cond_in: int
    kernel_size: int

    def __post_init__(self):
        if self.variant not in (WAVEGLOW, SQUEEZEWAVE):
            raise ShapeError(f"unknown variant {self.variant!r}")

    def start_spec(self) -> ConvSpec:
        return ConvSpec(1, self.half_channels, self.width)

    def in_spec(self, i: int) -> ConvSpec:
        if self.variant == WAVEGLOW:
            return ConvSpec.same(self.kernel_size, self.width, 2 * self.width, dilation=2**i)
        return ConvSpec.same(self.kernel_size, self.width, 2 * self.width, separable=True)

    def cond_spec(self) -> ConvSpec:
        return ConvSpec(1, self.cond_in, 2 * self.width * self.n_layers)

    def res_skip_spec(self, i: int) -> ConvSpec:
        last = i == self.n_layers - 1
        out = self.width if (last or self.variant == SQUEEZEWAVE) else 2 * self.width
        return ConvSpec(1, self.width, out)

    def end_spec(self) -> ConvSpec:
        return ConvSpec(1, self.width, 2 * self.half_channels)


class WNWeights(WNShape):
    """A WNShape plus its convolution weights, shape-checked on build."""

    def __init__(self, variant, half_channels, width, n_layers, cond_in, kernel_size,
                 start, in_layers, cond, res_skip, end):
        super().__init__(variant, half_channels, width, n_layers, cond_in, kernel_size)
        if len(in_layers) != n_layers or len(res_skip) != n_layers:
            raise ShapeError("layer list lengths disagree with n_layers")
        self.start = self._check(start, self.start_spec())
        self.in_layers = [self._check(w, self.in_spec(i)) for i, w in enumerate(in_layers)]
        self.cond = self._check(cond, self.cond_spec())
        self.res_skip = [self._check(w, self.res_skip_spec(i)) for i, w in enumerate(res_skip)]
        self.end = self._check(end, self.end_spec())

    @staticmethod
    def _check(weights: ConvWeights, spec: ConvSpec) -> ConvWeights:
        if weights.spec != spec:
            raise ShapeError(f"weight spec {weights.spec} does not match required {spec}")
        return weights


def _apply(x, spec: ConvSpec, weights: ConvWeights):
    if spec.separable:
        return depthwise_separable_conv1d(x, spec, weights)
    return conv1d(x, spec, weights)


def wn(x_a: np.ndarray, cond: np.ndarray, weights: WNWeights, *,
       cond_projected: bool = False) -> CouplingCoeffs:
    """Compute coupling coefficients from the untouched half and conditioning.

    ``cond`` is the aligned conditioning signal (same length as ``x_a``) and
    is passed through the ``cond`` projection here, unless the caller already
    projected it (``cond_projected=True``), in which case it must carry
    ``2 * width * n_layers`` channels.
    """
    if x_a.shape[0] != weights.half_channels:
        raise ShapeError(f"WN input has {x_a.shape[0]} channels, expected {weights.half_channels}")
    if not cond_projected:
        if cond.shape[1] != x_a.shape[1]:
            raise ShapeError("conditioning length does not match the audio half")
        cond = conv1d(cond, weights.cond_spec(), weights.cond)
    elif cond.shape != (2 * weights.width * weights.n_layers, x_a.shape[1]):
        raise ShapeError("projected conditioning has the wrong shape")

    w = weights.width
    h = conv1d(x_a, weights.start_spec(), weights.start)
    skip = np.zeros_like(h)
    for i in range(weights.n_layers):
        acts = _apply(h, weights.in_spec(i), weights.in_layers[i])
        acts += cond[2 * w * i : 2 * w * (i + 1)]
        gated = gated_activation(acts[:w], acts[w:])
        r = conv1d(gated, weights.res_skip_spec(i), weights.res_skip[i])
        last = i == weights.n_layers - 1
        if weights.variant == WAVEGLOW:
            if last:
                skip += r
            else:
                h = h + r[:w]
                skip += r[w:]
        else:
            # merged branch: one half-width output feeds both pathways
            skip += r
            if not last:
                h = h + r
    out = conv1d(skip, weights.end_spec(), weights.end)
    half = weights.half_channels
    return CouplingCoeffs(log_s=out[:half], t=out[half:])


def coupling_forward(x_b: np.ndarray, coeffs: CouplingCoeffs):
    """x_b * exp(log_s) + t; returns the result and sum(log_s)."""
    if x_b.shape != coeffs.log_s.shape or x_b.shape != coeffs.t.shape:
        raise ShapeError("coupling inputs differ in shape")
    out = (x_b * np.exp(coeffs.log_s) + coeffs.t).astype(np.float32)
    return out, float(np.sum(coeffs.log_s, dtype=np.float64))


def coupling_inverse(y_b: np.ndarray, coeffs: CouplingCoeffs) -> np.ndarray:
    """Exact inverse of coupling_forward."""
    if y_b.shape != coeffs.log_s.shape or y_b.shape != coeffs.t.shape:
        raise ShapeError("coupling inputs differ in shape")
    return ((y_b - coeffs.t) * np.exp(-coeffs.log_s)).astype(np.float32)


@dataclass
class FlowStep:
    """One bijection: channel mix followed by an affine coupling."""

    mix: InvertiblePointwise
    wn: WNWeights

    def forward(self, x: np.ndarray, cond: np.ndarray, *, cond_projected: bool = False):
        if x.shape[0] != 2 * self.wn.half_channels:
            raise ShapeError(f"flow step expects {2 * self.wn.half_channels} channels, got {x.shape[0]}")
        y, log_det = self.mix.forward(x)
        half = self.wn.half_channels
        x_a, x_b = y[:half], y[half:]
        coeffs = wn(x_a, cond, self.wn, cond_projected=cond_projected)
        y_b, coupling_ld = coupling_forward(x_b, coeffs)
        return np.concatenate([x_a, y_b], axis=0), log_det + coupling_ld

    def inverse(self, y: np.ndarray, cond: np.ndarray, *, cond_projected: bool = False):
        if y.shape[0] != 2 * self.wn.half_channels:
            raise ShapeError(f"flow step expects {2 * self.wn.half_channels} channels, got {y.shape[0]}")
        half = self.wn.half_channels
        y_a, y_b = y[:half], y[half:]
        coeffs = wn(y_a, cond, self.wn, cond_projected=cond_projected)
        x_b = coupling_inverse(y_b, coeffs)
        return self.mix.inverse(np.concatenate([y_a, x_b], axis=0))
