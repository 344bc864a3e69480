"""tConv layer tests: FIR equivalence, linear-phase invariants, gradients."""

import numpy as np
import numpy.testing as npt
import pytest

from pcgkit import autograd as ag
from pcgkit.autograd import Parameter, Tensor
from pcgkit.dsp import FirFilter, default_filterbank, fir_apply
from pcgkit.errors import ParameterError
from pcgkit.optim import sgd_step, zero_grads
from pcgkit.tconv import (TConvLayer, frequency_response, group_delay, init_from_filterbank,
                          lp_constrain, tconv_forward)

from gradcheck import numeric_grad, rel_error


def causal_fir_direct(b, x):
    """Independent double-loop causal convolution oracle."""
    y = np.zeros_like(x)
    for n in range(x.size):
        for i in range(b.size):
            if n - i >= 0:
                y[n] += b[i] * x[n - i]
    return y


class TestTconvForward:
    def test_centered_delta_is_identity(self):
        k = np.zeros(7)
        k[3] = 1.0
        layer = TConvLayer(k, "t")
        x = np.random.default_rng(0).normal(size=50)
        npt.assert_allclose(tconv_forward(layer, x), x, atol=1e-15)

    def test_delay_aligned_equivalence_with_causal_fir(self):
        rng = np.random.default_rng(1)
        for trial in range(20):
            n_taps = rng.choice([5, 9, 21, 61])
            b = rng.normal(size=n_taps)
            x = rng.normal(size=200)
            layer = TConvLayer(b, "t")
            y_tconv = tconv_forward(layer, x)
            y_fir = fir_apply(FirFilter(b), x)
            half = n_taps // 2
            # y_tconv[n - N/2] == y_fir[n] for n >= N
            diff = y_tconv[n_taps - half: 200 - half] - y_fir[n_taps: 200]
            assert np.max(np.abs(diff)) < 1e-12

    def test_moving_average_of_constant(self):
        layer = TConvLayer(np.full(5, 0.2), "t")
        out = tconv_forward(layer, np.ones(20))
        npt.assert_allclose(out[2:-2], 1.0, atol=1e-15)

    def test_linear_in_input(self):
        rng = np.random.default_rng(2)
        layer = TConvLayer(rng.normal(size=9), "t")
        x, z = rng.normal(size=64), rng.normal(size=64)
        a, c = 2.5, -1.25
        combined = tconv_forward(layer, a * x + c * z)
        separate = a * tconv_forward(layer, x) + c * tconv_forward(layer, z)
        assert np.max(np.abs(combined - separate)) < 1e-12

    def test_even_kernel_rejected(self):
        with pytest.raises(ParameterError, match="odd"):
            TConvLayer(np.ones(4), "t")


class TestLinearPhase:
    def test_mirror_construction(self):
        half = Parameter(np.array([1.0, 2.0, 3.0]), "h")
        full = lp_constrain(half)
        npt.assert_array_equal(full.data, [1, 2, 3, 2, 1])

    def test_symmetry_survives_sgd(self):
        rng = np.random.default_rng(3)
        layer = TConvLayer.random(21, rng, "t", variant="linear_phase")
        x = rng.normal(size=(4, 1, 64))
        for _ in range(25):
            out = layer.apply(Tensor(x))
            loss = ag.tmean(ag.power(out, 2.0))
            zero_grads(layer.parameters())
            loss.backward()
            sgd_step(layer.parameters(), lr=0.05)
            b = layer.coefficients()
            npt.assert_array_equal(b, b[::-1])

    def test_mirror_gradient_folds_onto_half(self):
        half_data = np.array([0.5, -1.0, 2.0])
        r = np.array([1.0, 10.0, 100.0, 1000.0, 10000.0])
        half = Parameter(half_data.copy(), "h")
        loss = ag.tsum(ag.mul(lp_constrain(half), Tensor(r)))
        loss.backward()
        # endpoints accumulate both mirror contributions, the center only one
        npt.assert_array_equal(half.grad, [1.0 + 10000.0, 10.0 + 1000.0, 100.0])

    def test_group_delay_constant_half_order(self):
        rng = np.random.default_rng(4)
        layer = TConvLayer.random(61, rng, "t", variant="linear_phase")
        freqs, tau, mask = group_delay(layer.coefficients())
        assert mask.sum() > 100
        npt.assert_allclose(tau[mask], 30.0, atol=1e-6)

    def test_phase_unwrap_oracle_on_bandpass(self):
        # Independent check of the group-delay utility: unwrap the FFT phase of
        # a designed band-pass and difference it across the passband.
        from pcgkit.dsp import design_bandpass
        b = design_bandpass(80.0, 200.0, 1000.0, 60).coefficients
        nfft = 1 << 16
        h = np.fft.rfft(b, n=nfft)
        strong = np.abs(h) > 0.5  # well inside the passband
        phase = np.unwrap(np.angle(h))
        dw = 2.0 * np.pi / nfft
        tau_num = -np.diff(phase) / dw
        passband = strong[:-1] & strong[1:]
        npt.assert_allclose(tau_num[passband], 30.0, atol=1e-6)
        freqs, tau, mask = group_delay(b, nfft=nfft)
        npt.assert_allclose(tau[strong], 30.0, atol=1e-9)


class TestInitFromFilterbank:
    def test_zero_training_matches_static_filterbank(self):
        rng = np.random.default_rng(5)
        designs = default_filterbank(1000.0, order=60)
        layers = init_from_filterbank(designs)
        x = rng.normal(size=300)
        for design, layer in zip(designs, layers):
            y_static = fir_apply(design, x)
            y_tconv = tconv_forward(layer, x)
            diff = y_tconv[61 - 30: 300 - 30] - y_static[61: 300]
            assert np.max(np.abs(diff)) < 1e-12

    def test_four_bands_give_four_layers(self):
        layers = init_from_filterbank(default_filterbank(1000.0))
        assert len(layers) == 4
        assert all(layer.kernel_len == 61 for layer in layers)

    def test_lp_init_reproduces_symmetric_design(self):
        designs = default_filterbank(1000.0)
        layers = init_from_filterbank(designs, variant="linear_phase")
        for d, layer in zip(designs, layers):
            npt.assert_array_equal(layer.coefficients(), d.coefficients)

    def test_mismatched_lengths_rejected(self):
        from pcgkit.dsp import design_bandpass
        designs = [design_bandpass(25, 45, 1000, 60), design_bandpass(45, 80, 1000, 40)]
        with pytest.raises(ParameterError, match="kernel length"):
            init_from_filterbank(designs)


class TestTconvGradients:
    @pytest.mark.parametrize("variant", ["free", "linear_phase"])
    def test_finite_difference(self, variant):
        rng = np.random.default_rng(6)
        ref = TConvLayer.random(9, rng, "t", variant=variant)
        arrays = [p.data.copy() for p in ref.parameters()]
        x = rng.normal(size=(2, 1, 16))
        r = rng.normal(size=(2, 1, 16))

        def build():
            layer = TConvLayer.random(9, np.random.default_rng(0), "t", variant=variant)
            for p, arr in zip(layer.parameters(), arrays):
                p.data = arr
            out = layer.apply(Tensor(x))
            return ag.tsum(ag.mul(out, Tensor(r))), layer.parameters()

        loss, params = build()
        loss.backward()
        analytic = [p.grad.copy() for p in params]
        for arr, ana in zip(arrays, analytic):
            num = numeric_grad(lambda: build()[0].data.item(), arr)
            assert rel_error(ana, num) < 1e-5


def test_export_filter_analysis(tmp_path):
    from pcgkit.tconv import export_filter_analysis
    layers = init_from_filterbank(default_filterbank(1000.0))
    path = tmp_path / "filters.csv"
    export_filter_analysis(layers, path, rate=1000.0, nfft=256)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "layer,frequency_hz,magnitude_db,phase_rad"
    assert len(lines) == 1 + 4 * 129
