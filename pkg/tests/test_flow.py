import math

import numpy as np
import pytest

from squeezewave.errors import InvertibilityError, ShapeError
from squeezewave.flow import (
    SQUEEZEWAVE,
    WAVEGLOW,
    CouplingCoeffs,
    FlowStep,
    InvertiblePointwise,
    WNShape,
    WNWeights,
    coupling_forward,
    coupling_inverse,
    wn,
)
from squeezewave.kernels import ConvWeights


def make_wn(variant, half, width, n_layers, cond_in, kernel=3, fill=None, rng=None):
    shape = WNShape(variant, half, width, n_layers, cond_in, kernel)

    def weights(spec):
        if fill is not None:
            w = ConvWeights.zeros(spec)
            for arr in w.tensors().values():
                arr[:] = fill
            return w
        return ConvWeights.random(spec, rng)

    return WNWeights(
        variant, half, width, n_layers, cond_in, kernel,
        start=weights(shape.start_spec()),
        in_layers=[weights(shape.in_spec(i)) for i in range(n_layers)],
        cond=weights(shape.cond_spec()),
        res_skip=[weights(shape.res_skip_spec(i)) for i in range(n_layers)],
        end=weights(shape.end_spec()),
    )


class TestInvertiblePointwise:
    def test_identity(self, rng):
        mix = InvertiblePointwise(np.eye(3, dtype=np.float32))
        x = rng.standard_normal((3, 5)).astype(np.float32)
        y, log_det = mix.forward(x)
        np.testing.assert_array_equal(y, x)
        assert log_det == 0.0
        np.testing.assert_array_equal(mix.inverse(x), x)

    def test_diagonal_scaling(self):
        mix = InvertiblePointwise(2.0 * np.eye(2, dtype=np.float32))
        x = np.ones((2, 3), np.float32)
        y, log_det = mix.forward(x)
        np.testing.assert_array_equal(y, 2 * x)
        assert log_det == pytest.approx(3 * math.log(4.0), rel=1e-12)

    def test_orthogonal_logdet_zero(self, rng):
        q, _ = np.linalg.qr(rng.standard_normal((6, 6)))
        mix = InvertiblePointwise(q.astype(np.float32))
        _, log_det = mix.forward(rng.standard_normal((6, 4)).astype(np.float32))
        assert abs(log_det) < 1e-6 * 4

    def test_roundtrip_against_numpy_inverse(self, rng):
        w = np.eye(8) + 0.3 * rng.standard_normal((8, 8))
        mix = InvertiblePointwise(w.astype(np.float32))
        np.testing.assert_allclose(mix.w_inv, np.linalg.inv(w.astype(np.float32)), rtol=1e-4, atol=1e-6)
        x = rng.standard_normal((8, 16)).astype(np.float32)
        y, _ = mix.forward(x)
        np.testing.assert_allclose(mix.inverse(y), x, atol=1e-4)

    def test_diagonal_inverse(self):
        mix = InvertiblePointwise(np.diag([2.0, 4.0]).astype(np.float32))
        x = mix.inverse(np.array([[2.0], [4.0]], np.float32))
        np.testing.assert_allclose(x, [[1.0], [1.0]], rtol=1e-6)

    def test_singular_rejected(self):
        with pytest.raises(InvertibilityError):
            InvertiblePointwise(np.zeros((3, 3), np.float32))
        with pytest.raises(InvertibilityError):
            InvertiblePointwise(np.diag([1e-7, 1e-7]).astype(np.float32))  # |det| = 1e-14


class TestWN:
    def test_zero_network_gives_identity_coupling(self, rng):
        for variant in (WAVEGLOW, SQUEEZEWAVE):
            weights = make_wn(variant, half=2, width=4, n_layers=2, cond_in=6, fill=0.0)
            x_a = rng.standard_normal((2, 5)).astype(np.float32)
            cond = rng.standard_normal((6, 5)).astype(np.float32)
            coeffs = wn(x_a, cond, weights)
            assert not coeffs.log_s.any() and not coeffs.t.any()
            y, log_det = coupling_forward(x_a, coeffs)
            np.testing.assert_array_equal(y, x_a)
            assert log_det == 0.0

    @pytest.mark.parametrize("variant,reach", [(WAVEGLOW, 7), (SQUEEZEWAVE, 3)])
    def test_receptive_field_shows_dilation_schedule(self, rng, variant, reach):
        """Dilations are 2**i in the waveglow variant, 1 in squeezewave.

        With kernel 3 and 3 layers the output column range influenced by a
        single input column is +-(1+2+4) vs +-(1+1+1).
        """
        length = 21
        center = length // 2
        weights = make_wn(variant, half=2, width=4, n_layers=3, cond_in=6, rng=rng)
        cond = np.zeros((6, length), np.float32)
        base = np.zeros((2, length), np.float32)
        delta = base.copy()
        delta[0, center] = 1.0
        diff = np.abs(wn(delta, cond, weights).log_s - wn(base, cond, weights).log_s).sum(axis=0)
        touched = np.nonzero(diff > 0)[0]
        assert touched.min() == center - reach
        assert touched.max() == center + reach

    @pytest.mark.parametrize("variant", [WAVEGLOW, SQUEEZEWAVE])
    def test_matches_straight_line_oracle(self, rng, variant):
        """Scalar loop-nest reimplementation with no layer abstractions."""
        half, width, n_layers, cond_in, length, k = 2, 8, 2, 5, 6, 3
        weights = make_wn(variant, half, width, n_layers, cond_in, rng=rng)
        x_a = rng.standard_normal((half, length)).astype(np.float32)
        cond = rng.standard_normal((cond_in, length)).astype(np.float32)

        def conv_loops(x, w, b, dilation, padding):
            c_out, c_in, kk = w.shape
            l_out = x.shape[1] + 2 * padding - dilation * (kk - 1)
            out = np.zeros((c_out, l_out))
            for o in range(c_out):
                for t in range(l_out):
                    acc = float(b[o])
                    for c in range(c_in):
                        for j in range(kk):
                            src = t + j * dilation - padding
                            if 0 <= src < x.shape[1]:
                                acc += float(w[o, c, j]) * float(x[c, src])
                    out[o, t] = acc
            return out

        h = conv_loops(x_a, weights.start.weight, weights.start.bias, 1, 0)
        projected = conv_loops(cond, weights.cond.weight, weights.cond.bias, 1, 0)
        skip = np.zeros((width, length))
        for i in range(n_layers):
            lw = weights.in_layers[i]
            if variant == WAVEGLOW:
                d = 2**i
                acts = conv_loops(h, lw.weight, lw.bias, d, d * (k - 1) // 2)
            else:
                inter = np.zeros((width, length))
                for c in range(width):
                    inter[c] = conv_loops(
                        h[c : c + 1], lw.dw_weight[c][None, None, :], lw.dw_bias[c : c + 1], 1, 1
                    )[0]
                acts = conv_loops(inter, lw.pw_weight[:, :, None], lw.pw_bias, 1, 0)
            acts = acts + projected[2 * width * i : 2 * width * (i + 1)]
            gate = np.tanh(acts[:width]) / (1.0 + np.exp(-acts[width:]))
            r = conv_loops(gate, weights.res_skip[i].weight, weights.res_skip[i].bias, 1, 0)
            if variant == WAVEGLOW:
                if i == n_layers - 1:
                    skip = skip + r
                else:
                    h = h + r[:width]
                    skip = skip + r[width:]
            else:
                skip = skip + r
                if i != n_layers - 1:
                    h = h + r
        out = conv_loops(skip, weights.end.weight, weights.end.bias, 1, 0)

        coeffs = wn(x_a, cond, weights)
        np.testing.assert_allclose(coeffs.log_s, out[:half], rtol=1e-4, atol=1e-5)
        np.testing.assert_allclose(coeffs.t, out[half:], rtol=1e-4, atol=1e-5)

    def test_squeezewave_res_skip_half_width(self):
        wide = WNShape(WAVEGLOW, 2, 8, 3, 5, 3)
        slim = WNShape(SQUEEZEWAVE, 2, 8, 3, 5, 3)
        for i in range(2):  # non-final layers
            assert slim.res_skip_spec(i).out_channels * 2 == wide.res_skip_spec(i).out_channels

    def test_projected_conditioning_path(self, rng):
        weights = make_wn(WAVEGLOW, 2, 4, 2, 6, rng=rng)
        x_a = rng.standard_normal((2, 5)).astype(np.float32)
        cond = rng.standard_normal((6, 5)).astype(np.float32)
        from squeezewave.kernels import conv1d

        projected = conv1d(cond, weights.cond_spec(), weights.cond)
        raw = wn(x_a, cond, weights)
        pre = wn(x_a, projected, weights, cond_projected=True)
        np.testing.assert_array_equal(raw.log_s, pre.log_s)
        np.testing.assert_array_equal(raw.t, pre.t)


class TestCoupling:
    def test_identity(self, rng):
        x = rng.standard_normal((2, 4)).astype(np.float32)
        zero = CouplingCoeffs(np.zeros_like(x), np.zeros_like(x))
        y, log_det = coupling_forward(x, zero)
        np.testing.assert_array_equal(y, x)
        assert log_det == 0.0
        np.testing.assert_array_equal(coupling_inverse(x, zero), x)

    def test_constant_scale(self):
        x = np.arange(6, dtype=np.float32).reshape(2, 3)
        coeffs = CouplingCoeffs(np.full((2, 3), np.log(2.0), np.float32), np.ones((2, 3), np.float32))
        y, log_det = coupling_forward(x, coeffs)
        np.testing.assert_allclose(y, 2 * x + 1, rtol=1e-6)
        assert log_det == pytest.approx(6 * math.log(2.0), rel=1e-6)

    def test_logdet_matches_numerical_jacobian(self, rng):
        x = rng.standard_normal((2, 3)).astype(np.float32)
        coeffs = CouplingCoeffs(
            (0.3 * rng.standard_normal((2, 3))).astype(np.float32),
            rng.standard_normal((2, 3)).astype(np.float32),
        )
        _, analytic = coupling_forward(x, coeffs)
        h = 1e-3
        n = x.size
        jac = np.zeros((n, n))
        flat = x.reshape(-1)
        for j in range(n):
            up, down = flat.copy(), flat.copy()
            up[j] += h
            down[j] -= h
            yu, _ = coupling_forward(up.reshape(x.shape), coeffs)
            yd, _ = coupling_forward(down.reshape(x.shape), coeffs)
            jac[:, j] = (yu.reshape(-1).astype(np.float64) - yd.reshape(-1)) / (2 * h)
        _, numeric = np.linalg.slogdet(jac)
        assert analytic == pytest.approx(numeric, rel=1e-3)

    def test_scalar_inverse(self):
        coeffs = CouplingCoeffs(np.full((1, 1), np.log(2.0), np.float32), np.ones((1, 1), np.float32))
        x = coupling_inverse(np.array([[5.0]], np.float32), coeffs)
        np.testing.assert_allclose(x, [[2.0]], rtol=1e-6)

    def test_roundtrip(self, rng):
        x = rng.standard_normal((3, 7)).astype(np.float32)
        coeffs = CouplingCoeffs(
            rng.standard_normal((3, 7)).astype(np.float32),
            rng.standard_normal((3, 7)).astype(np.float32),
        )
        y, _ = coupling_forward(x, coeffs)
        np.testing.assert_allclose(coupling_inverse(y, coeffs), x, atol=1e-4)

    def test_shape_mismatch(self):
        coeffs = CouplingCoeffs(np.zeros((2, 2), np.float32), np.zeros((2, 2), np.float32))
        with pytest.raises(ShapeError):
            coupling_forward(np.zeros((2, 3), np.float32), coeffs)


class TestFlowStep:
    def make_step(self, rng, variant=WAVEGLOW, channels=4, zero_wn=False, identity_mix=False):
        if identity_mix:
            w = np.eye(channels, dtype=np.float32)
        else:
            q, _ = np.linalg.qr(rng.standard_normal((channels, channels)))
            w = q.astype(np.float32)
        wn_weights = make_wn(
            variant, channels // 2, 8, 2, 6,
            fill=0.0 if zero_wn else None, rng=None if zero_wn else rng,
        )
        return FlowStep(InvertiblePointwise(w), wn_weights)

    def test_zero_wn_identity_mix_is_identity(self, rng):
        step = self.make_step(rng, zero_wn=True, identity_mix=True)
        x = rng.standard_normal((4, 5)).astype(np.float32)
        cond = rng.standard_normal((6, 5)).astype(np.float32)
        y, log_det = step.forward(x, cond)
        np.testing.assert_array_equal(y, x)
        assert log_det == 0.0

    @pytest.mark.parametrize("variant", [WAVEGLOW, SQUEEZEWAVE])
    def test_roundtrip(self, rng, variant):
        step = self.make_step(rng, variant)
        x = rng.standard_normal((4, 6)).astype(np.float32)
        cond = rng.standard_normal((6, 6)).astype(np.float32)
        y, _ = step.forward(x, cond)
        np.testing.assert_allclose(step.inverse(y, cond), x, atol=1e-4)

    def test_untouched_half_passes_through(self, rng):
        step = self.make_step(rng)
        x = rng.standard_normal((4, 6)).astype(np.float32)
        cond = rng.standard_normal((6, 6)).astype(np.float32)
        y, _ = step.forward(x, cond)
        mixed, _ = step.mix.forward(x)
        np.testing.assert_array_equal(y[:2], mixed[:2])

    def test_logdet_matches_numerical_jacobian(self, rng):
        step = self.make_step(rng)
        cond = rng.standard_normal((6, 3)).astype(np.float32)
        x = rng.standard_normal((4, 3)).astype(np.float32)
        _, analytic = step.forward(x, cond)
        n = x.size
        h = 1e-2
        jac = np.zeros((n, n))
        flat = x.reshape(-1)
        for j in range(n):
            up, down = flat.copy(), flat.copy()
            up[j] += h
            down[j] -= h
            yu, _ = step.forward(up.reshape(x.shape), cond)
            yd, _ = step.forward(down.reshape(x.shape), cond)
            jac[:, j] = (yu.reshape(-1).astype(np.float64) - yd.reshape(-1)) / (2 * h)
        _, numeric = np.linalg.slogdet(jac)
        assert analytic == pytest.approx(numeric, rel=1e-3, abs=2e-3)
