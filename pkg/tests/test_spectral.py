import numpy as np
import pytest
import scipy.signal
from hypothesis import given
from hypothesis import strategies as st

from hybrid_sysid.signal import MultiChannelSignal, lowpass_fft
from hybrid_sysid.spectral import (
    FrfModel,
    estimate_cpsd,
    estimate_frf,
    estimate_psd,
    frf_predict,
)
from hybrid_sysid.synth import lti_respond

from conftest import white


def integrated(sd):
    return np.sum(sd.values.real) * (sd.frequencies[1] - sd.frequencies[0])


class TestPsd:
    def test_sine_parseval(self):
        fs = 1000.0
        t = np.arange(60_000) / fs
        sd = estimate_psd(np.sin(2 * np.pi * 10 * t), fs, 4096)
        assert abs(integrated(sd) - 0.5) < 0.01

    def test_zero(self):
        assert np.all(estimate_psd(np.zeros(4096), 1.0, 1024).values == 0)

    def test_white_noise_parseval(self):
        x = np.random.default_rng(1).standard_normal(60 * 1024)
        sd = estimate_psd(x, 1.0, 1024)
        assert sd.segment_count >= 50
        assert abs(integrated(sd) - np.var(x)) < 0.05

    def test_matches_scipy_welch(self):
        # independent oracle: scipy's Welch implementation with identical settings
        x = np.random.default_rng(2).standard_normal(20_000)
        ours = estimate_psd(x, 500.0, 1024)
        f, ref = scipy.signal.welch(x, 500.0, window="hann", nperseg=1024, noverlap=512,
                                    detrend=False, scaling="density")
        np.testing.assert_allclose(ours.frequencies, f)
        np.testing.assert_allclose(ours.values, ref, rtol=1e-10, atol=1e-14)

    def test_segment_too_long(self):
        with pytest.raises(ValueError):
            estimate_psd(np.zeros(10), 1.0, 16)


class TestCpsd:
    def test_self_cpsd_is_psd(self):
        x = np.random.default_rng(3).standard_normal(8192)
        np.testing.assert_allclose(estimate_cpsd(x, x, 1.0, 512).values, estimate_psd(x, 1.0, 512).values)

    def test_linear_in_output(self):
        x = np.random.default_rng(4).standard_normal(8192)
        c = estimate_cpsd(x, 2 * x, 1.0, 512).values
        p = estimate_psd(x, 1.0, 512).values
        assert np.max(np.abs(c - 2 * p)) <= 1e-10 * np.max(p)

    def test_conjugate_symmetry(self):
        r = np.random.default_rng(5)
        x, y = r.standard_normal((2, 4096))
        np.testing.assert_allclose(estimate_cpsd(x, y, 1.0, 256).values,
                                   np.conj(estimate_cpsd(y, x, 1.0, 256).values))

    def test_matches_scipy_csd(self):
        r = np.random.default_rng(6)
        x, y = r.standard_normal((2, 10_000))
        ours = estimate_cpsd(x, y, 100.0, 512)
        _, ref = scipy.signal.csd(x, y, 100.0, window="hann", nperseg=512, noverlap=256,
                                  detrend=False, scaling="density")
        np.testing.assert_allclose(ours.values, ref, rtol=1e-9, atol=1e-14)

    def test_independent_noises_incoherent(self):
        r = np.random.default_rng(7)
        x, y = r.standard_normal((2, 101 * 256))
        sxy = estimate_cpsd(x, y, 1.0, 512)
        assert sxy.segment_count >= 100
        coh = np.abs(sxy.values) ** 2 / (estimate_psd(x, 1.0, 512).values * estimate_psd(y, 1.0, 512).values)
        assert np.mean(coh[1:-1]) < 0.1

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            estimate_cpsd(np.zeros(100), np.zeros(101), 1.0, 16)


class TestFrf:
    def test_identity_loopback(self):
        x = white(60_000, seed=8)
        frf = estimate_frf([x], [x], 1024, band_limit=400.0)
        band = frf.frequencies <= 400
        assert np.max(np.abs(frf.H[band, 0, 0] - 1)) < 0.02

    def test_delayed_gain(self):
        d, fs = 10, 1000.0
        x = white(120_000, seed=9)
        raw = x.data[:, 0]
        y = MultiChannelSignal(fs, ("y",), 2 * np.concatenate([np.zeros(d), raw[:-d]])[:, None])
        frf = estimate_frf([x], [y], 1024, band_limit=80.0)
        f = frf.frequencies
        band = (f > 0) & (f <= 80)
        H = frf.H[band, 0, 0]
        assert np.max(np.abs(np.abs(H) - 2) / 2) < 0.02
        slope = np.polyfit(f[band], np.unwrap(np.angle(H)), 1)[0]
        assert abs(slope / (-2 * np.pi * d / fs) - 1) < 0.02
        assert np.all(frf.H[f > 80] == 0)

        # held-out in-band excitation against the analytic plant
        x2 = lowpass_fft(white(20_000, seed=10), 70.0)
        r2 = x2.data[:, 0]
        truth = 2 * np.concatenate([np.zeros(d), r2[:-d]])
        pred = frf_predict(frf, x2).data[:, 0]
        assert np.sqrt(np.sum((pred - truth) ** 2) / np.sum(truth ** 2)) < 0.03

    def test_zero_outputs(self):
        x = white(8192, seed=11)
        y = MultiChannelSignal(1000.0, ("y",), np.zeros((8192, 1)))
        assert np.all(estimate_frf([x], [y], 512).H == 0)

    def test_errors(self):
        x = white(4096, seed=12)
        with pytest.raises(ValueError):
            estimate_frf([], [], 512)
        dead = MultiChannelSignal(1000.0, ("u0",), np.zeros((4096, 1)))
        with pytest.raises(ValueError, match="excitation"):
            estimate_frf([dead], [x], 512)

    def test_floor_guard(self):
        # input without content above 100 Hz must not produce amplified noise there
        x = white(32_768, seed=13)
        xl = lowpass_fft(x, 100.0)
        frf = estimate_frf([xl], [xl], 1024, band_limit=500.0)
        high = frf.frequencies > 150
        assert np.max(np.abs(frf.H[high])) < 1.5

    def test_mimo_uncorrelated_inputs(self):
        fs = 1000.0
        names_in, names_out = ("a", "b"), ("p", "q")
        M = np.array([[1.0, 0.5], [-0.3, 2.0]])
        xs = [white(30_000, 2, seed=s, names=names_in) for s in range(4)]
        ys = [MultiChannelSignal(fs, names_out, x.data @ M) for x in xs]
        frf = estimate_frf(xs, ys, 512, band_limit=400.0)
        band = frf.frequencies <= 400
        # unbiased across bins; per-bin scatter comes from the other input
        assert np.abs(frf.H[band].mean(axis=0) - M).max() < 0.02
        assert np.sqrt(np.mean(np.abs(frf.H[band] - M[None]) ** 2)) < 0.1


class TestPredict:
    def test_identity(self):
        x = white(5000, 2, seed=14)
        y = frf_predict(FrfModel.identity(x.names, x.sample_rate), x)
        assert np.sqrt(np.sum((y.data - x.data) ** 2) / np.sum(x.data ** 2)) < 1e-9
        assert y.names == x.names and len(y) == len(x)

    def test_zero_model(self):
        x = white(1000, 1, seed=15)
        zero = FrfModel.from_response(lambda f: np.zeros((f.size, 1, 1)), ("u0",), ("y",), 1000.0)
        assert np.all(frf_predict(zero, x).data == 0)

    def test_channel_mismatch(self):
        x = white(100, 1, seed=16, names=("other",))
        with pytest.raises(KeyError):
            frf_predict(FrfModel.identity(("u0",), 1000.0), x)

    @given(st.floats(-3, 3), st.floats(-3, 3), st.integers(10, 500))
    def test_linearity(self, a, b, n):
        r = np.random.default_rng(n)
        model = FrfModel.from_response(
            lambda f: (1 / (1 + 1j * f / 50))[:, None, None] * np.ones((1, 1, 1)),
            ("u",), ("y",), 1000.0, 257)
        x1 = MultiChannelSignal(1000.0, ("u",), r.standard_normal((n, 1)))
        x2 = MultiChannelSignal(1000.0, ("u",), r.standard_normal((n, 1)))
        lhs = frf_predict(model, x1.with_data(a * x1.data + b * x2.data)).data
        rhs = a * frf_predict(model, x1).data + b * frf_predict(model, x2).data
        assert np.max(np.abs(lhs - rhs)) < 1e-9

    def test_band_limit_zeroes_model(self):
        model = FrfModel.from_response(lambda f: np.ones((f.size, 1, 1)), ("u",), ("y",), 100.0, 65, band_limit=20.0)
        assert np.all(model.H[model.frequencies > 20] == 0)

    def test_lti_roundtrip(self):
        fs = 1000.0
        model = FrfModel.from_response(
            lambda f: (3.0 / (1 - (f / 40) ** 2 + 0.6j * f / 40))[:, None, None],
            ("u",), ("y",), fs, 2049, band_limit=80.0)
        xs = [white(60_000, seed=20 + i, names=("u",)) for i in range(2)]
        ys = [lti_respond(model, x) for x in xs]
        est = estimate_frf(xs, ys, 4096, band_limit=80.0)
        # the plant itself is cut hard at 80 Hz; leave the Hann leakage bins at the edge out
        band = (est.frequencies > 0) & (est.frequencies <= 78)
        true = np.interp(est.frequencies[band], model.frequencies, np.abs(model.H[:, 0, 0]))
        assert np.max(np.abs(np.abs(est.H[band, 0, 0]) - true) / true) < 0.02
        x3 = white(30_000, seed=30, names=("u",))
        y3 = lti_respond(model, x3).data
        p3 = frf_predict(est, x3).data
        assert np.sqrt(np.sum((p3 - y3) ** 2) / np.sum(y3 ** 2)) < 0.05
