"""Segment-averaged (cross) power spectral densities and MIMO FRF models.

The FRF estimator divides the effective cross spectrum of input ``k`` and
output ``l`` by the effective auto spectrum of input ``k``; inputs are
expected to be mutually uncorrelated noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .signal import MultiChannelSignal

#: relative floor below which an input auto spectrum counts as unexcited
PSD_FLOOR = 1e-10
DEFAULT_SEGMENT_LENGTH = 4096
DEFAULT_BAND_LIMIT = 80.0


@dataclass(frozen=True, eq=False)
class SpectralDensity:
    frequencies: np.ndarray
    values: np.ndarray
    segment_count: int
    segment_duration: float


@dataclass(frozen=True, eq=False)
class FrfModel:
    """Frequency response matrix ``H[f, k, l]`` (input ``k`` -> output ``l``)."""

    frequencies: np.ndarray
    H: np.ndarray
    band_limit: float
    input_names: tuple[str, ...]
    output_names: tuple[str, ...]
    sample_rate: float
    segment_length: int = 0

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        H = np.asarray(self.H, dtype=complex)
        if H.ndim != 3 or H.shape[0] != f.size:
            raise ValueError(f"H must have shape (n_freq, n_in, n_out), got {H.shape}")
        if H.shape[1:] != (len(self.input_names), len(self.output_names)):
            raise ValueError("H dimensions do not match the channel names")
        if f.size < 2 or f[0] != 0 or np.any(np.diff(f) <= 0):
            raise ValueError("frequency grid must start at 0 and increase strictly")
        H = H.copy()
        H[f > self.band_limit] = 0.0
        for name, value in (("frequencies", f), ("H", H)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "input_names", tuple(self.input_names))
        object.__setattr__(self, "output_names", tuple(self.output_names))
        object.__setattr__(self, "band_limit", float(self.band_limit))
        object.__setattr__(self, "sample_rate", float(self.sample_rate))
        object.__setattr__(self, "segment_length", int(self.segment_length))

    @property
    def n_inputs(self) -> int:
        return len(self.input_names)

    @property
    def n_outputs(self) -> int:
        return len(self.output_names)

    @classmethod
    def from_response(cls, response, input_names, output_names, sample_rate,
                      n_freq: int = 2049, band_limit: float | None = None):
        """Tabulate an analytic response ``response(f) -> (n_f, n_in, n_out)``."""
        f = np.linspace(0.0, sample_rate / 2, n_freq)
        H = np.asarray(response(f), dtype=complex)
        return cls(f, H, sample_rate / 2 if band_limit is None else band_limit,
                   tuple(input_names), tuple(output_names), sample_rate, 2 * (n_freq - 1))

    @classmethod
    def identity(cls, names, sample_rate, n_freq: int = 2049):
        n = len(names)
        return cls.from_response(lambda f: np.broadcast_to(np.eye(n), (f.size, n, n)),
                                 names, names, sample_rate, n_freq)


def _segments(x: np.ndarray, segment_length: int) -> np.ndarray:
    """Hann-windowed 50%-overlap segments of ``x`` (axis 0), shape (M, seg, ...)."""
    n = x.shape[0]
    if segment_length > n:
        raise ValueError(f"segment length {segment_length} exceeds data length {n}")
    step = segment_length // 2
    starts = range(0, n - segment_length + 1, max(step, 1))
    return np.stack([x[s:s + segment_length] for s in starts])


def _window(name: str, n: int) -> np.ndarray:
    if name == "hann":
        # periodic Hann, the usual choice for spectral averaging
        return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    if name in ("boxcar", "rect", "none"):
        return np.ones(n)
    raise ValueError(f"unknown spectral window {name!r}")


def _spectra(x: np.ndarray, segment_length: int, window: str,
             detrend: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Windowed segment FFTs, shape (M, n_freq, ...), and the window."""
    w = _window(window, segment_length)
    seg = _segments(x, segment_length)
    if detrend:
        seg = seg - seg.mean(axis=1, keepdims=True)
    shape = (1, segment_length) + (1,) * (seg.ndim - 2)
    return np.fft.rfft(seg * w.reshape(shape), axis=1), w


def _density_scale(segment_length: int, sample_rate: float, w: np.ndarray) -> np.ndarray:
    """One-sided density scaling: 2 / (fs * sum(w^2)), DC and Nyquist not doubled."""
    n_freq = segment_length // 2 + 1
    scale = np.full(n_freq, 2.0 / (sample_rate * np.sum(w ** 2)))
    scale[0] /= 2
    if segment_length % 2 == 0:
        scale[-1] /= 2
    return scale


def estimate_cpsd(x, y, sample_rate: float, segment_length: int = DEFAULT_SEGMENT_LENGTH,
                  window: str = "hann") -> SpectralDensity:
    """Effective cross spectral density ``mean_m conj(X_m) * Y_m`` (one-sided)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    X, w = _spectra(x, segment_length, window)
    Y, _ = _spectra(y, segment_length, window)
    values = np.mean(np.conj(X) * Y, axis=0) * _density_scale(segment_length, sample_rate, w)
    return SpectralDensity(np.fft.rfftfreq(segment_length, 1.0 / sample_rate), values,
                           X.shape[0], segment_length / sample_rate)


def estimate_psd(x, sample_rate: float, segment_length: int = DEFAULT_SEGMENT_LENGTH,
                 window: str = "hann") -> SpectralDensity:
    x = np.asarray(x, dtype=float)
    X, w = _spectra(x, segment_length, window)
    values = np.mean(np.abs(X) ** 2, axis=0) * _density_scale(segment_length, sample_rate, w)
    return SpectralDensity(np.fft.rfftfreq(segment_length, 1.0 / sample_rate), values,
                           X.shape[0], segment_length / sample_rate)


def estimate_frf(
    inputs: Sequence[MultiChannelSignal],
    outputs: Sequence[MultiChannelSignal],
    segment_length: int = DEFAULT_SEGMENT_LENGTH,
    band_limit: float = DEFAULT_BAND_LIMIT,
    window: str = "hann",
    detrend: bool = True,
) -> FrfModel:
    """Estimate ``H_kl = S_kl / S_kk`` from paired input/output files.

    Segment spectra are accumulated over every file before the ratio is
    taken. Bins whose input auto spectrum falls below ``PSD_FLOOR`` times its
    maximum are set to zero, as is everything above ``band_limit``.

    With ``detrend`` every segment loses its mean before windowing. Channel
    offsets are then kept out of the low-frequency bins, where they would
    otherwise correlate the inputs; the static gain still comes from the
    slow fluctuations.
    """
    if not inputs or len(inputs) != len(outputs):
        raise ValueError("need equally many (>= 1) input and output files")
    in_names, out_names = inputs[0].names, outputs[0].names
    fs = inputs[0].sample_rate
    n_freq = segment_length // 2 + 1
    s_kk = np.zeros((n_freq, len(in_names)))
    s_kl = np.zeros((n_freq, len(in_names), len(out_names)), dtype=complex)
    count = 0
    for x, y in zip(inputs, outputs):
        if x.sample_rate != fs or y.sample_rate != fs:
            raise ValueError("all files must share one sample rate")
        if len(x) != len(y):
            raise ValueError(f"paired files differ in length: {len(x)} vs {len(y)}")
        X, w = _spectra(x.select(in_names).data, segment_length, window, detrend)
        Y, _ = _spectra(y.select(out_names).data, segment_length, window, detrend)
        s_kk += np.sum(np.abs(X) ** 2, axis=0)
        s_kl += np.einsum("mfk,mfl->fkl", np.conj(X), Y)
        count += X.shape[0]
    # the common 1/(T*M) factor cancels in the ratio but keeps the values meaningful
    scale = _density_scale(segment_length, fs, _window(window, segment_length)) / count
    s_kk *= scale[:, None]
    s_kl *= scale[:, None, None]
    peak = s_kk.max(axis=0)
    if np.any(peak <= 0):
        dead = [n for n, p in zip(in_names, peak) if p <= 0]
        raise ValueError(f"input channels without any excitation: {dead}")
    excited = s_kk >= PSD_FLOOR * peak
    H = np.zeros_like(s_kl)
    safe = np.where(excited, s_kk, 1.0)
    H[...] = np.where(excited[:, :, None], s_kl / safe[:, :, None], 0.0)
    freqs = np.fft.rfftfreq(segment_length, 1.0 / fs)
    return FrfModel(freqs, H, band_limit, in_names, out_names, fs, segment_length)


def _next_pow2(n: int) -> int:
    return 1 << max(int(n) - 1, 0).bit_length()


def frf_predict(model: FrfModel, signal: MultiChannelSignal) -> MultiChannelSignal:
    """Output signal ``Y(f) = H(f)^T X(f)`` evaluated with one whole-record FFT."""
    x = signal.select(model.input_names).data
    n = x.shape[0]
    n_fft = _next_pow2(n)
    X = np.fft.rfft(x, n=n_fft, axis=0)
    f = np.fft.rfftfreq(n_fft, 1.0 / signal.sample_rate)
    H = _interpolate(model, f)
    Y = np.einsum("fk,fkl->fl", X, H)
    y = np.fft.irfft(Y, n=n_fft, axis=0)[:n]
    return MultiChannelSignal(signal.sample_rate, model.output_names, y)


def _interpolate(model: FrfModel, f: np.ndarray) -> np.ndarray:
    grid = model.frequencies
    flat = model.H.reshape(grid.size, -1)
    out = np.empty((f.size, flat.shape[1]), dtype=complex)
    for j in range(flat.shape[1]):
        out[:, j] = (np.interp(f, grid, flat[:, j].real, right=0.0)
                     + 1j * np.interp(f, grid, flat[:, j].imag, right=0.0))
    out[f > model.band_limit] = 0.0
    return out.reshape(f.size, model.n_inputs, model.n_outputs)
