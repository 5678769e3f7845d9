"""Windowed subsequence prediction and the FRF/LSTM predictor compositions.

Schemes
-------
``frf``      the linear model alone
``pure``     LSTM on the measured inputs
``hybrid1``  FRF prediction plus an LSTM estimate of the FRF residual
``hybrid2``  LSTM fed with the inputs and the FRF prediction side by side
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import lstm as _lstm
from .signal import (
    MultiChannelSignal,
    StandardizationStats,
    fit_standardization,
    subsequence_starts,
    take_window,
)
from .spectral import FrfModel, frf_predict

SCHEMES = ("frf", "pure", "hybrid1", "hybrid2")
FRF_PREFIX = "frf:"
PREDICT_BATCH = 256


@dataclass(frozen=True)
class WindowingConfig:
    length: int = 256
    overlap: float = 0.5
    power: int = 10

    def __post_init__(self):
        if self.length < 2:
            raise ValueError("subsequence length must be >= 2")
        if not 0 < self.overlap <= 1:
            raise ValueError("overlap factor must lie in (0, 1]")
        if self.power < 1:
            raise ValueError("window power must be >= 1")


def welch_window(length: int, power: int = 10) -> np.ndarray:
    """``(1 - ((2t - L)/L)^2) ** power`` at integer offsets ``t = 0 .. L-1``."""
    if length < 2:
        raise ValueError("window length must be >= 2")
    t = np.arange(length, dtype=float)
    return (1.0 - ((2.0 * t - length) / length) ** 2) ** power


def window_weights(starts: Sequence[int], total_length: int, config: WindowingConfig):
    """Renormalized per-subsequence weights.

    Returns a list of ``(start, weights)`` where ``weights`` has length ``L``
    and is zero outside ``[0, total_length)``. At every output sample the
    weights of all covering subsequences sum to one. A sample whose covering
    windows are all exactly zero (only possible without overlap) falls back
    to equal weights over those windows.
    """
    L = config.length
    w = welch_window(L, config.power)
    total = np.zeros(total_length)
    cover = np.zeros(total_length)
    spans = []
    for s in starts:
        lo, hi = max(s, 0), min(s + L, total_length)
        if hi <= lo:
            continue
        total[lo:hi] += w[lo - s:hi - s]
        cover[lo:hi] += 1
        spans.append((s, lo, hi))
    if np.any(cover == 0):
        raise AssertionError(f"samples not covered by any subsequence: {np.flatnonzero(cover == 0)[:5]}")
    dead = total == 0
    out = []
    for s, lo, hi in spans:
        ws = np.zeros(L)
        seg = w[lo - s:hi - s]
        ws[lo - s:hi - s] = np.where(dead[lo:hi], 1.0 / cover[lo:hi],
                                     seg / np.where(dead[lo:hi], 1.0, total[lo:hi]))
        out.append((s, ws))
    return out


def recombine(predictions: Sequence[tuple[int, np.ndarray]], total_length: int,
              config: WindowingConfig) -> np.ndarray:
    """Blend ``(start, L x n_out)`` subsequence predictions into one record.

    Samples at negative times are dropped.
    """
    starts = [s for s, _ in predictions]
    if len(set(starts)) != len(starts):
        raise ValueError("duplicate subsequence positions")
    weights = dict(window_weights(starts, total_length, config))
    n_out = np.asarray(predictions[0][1]).shape[1]
    out = np.zeros((total_length, n_out))
    L = config.length
    for s, y in predictions:
        if s not in weights:
            continue
        ws = weights[s]
        lo, hi = max(s, 0), min(s + L, total_length)
        out[lo:hi] += ws[lo - s:hi - s, None] * np.asarray(y)[lo - s:hi - s]
    return out


def windowed_forward(net: _lstm.LstmNetwork, x: np.ndarray, config: WindowingConfig,
                     boundary_x: np.ndarray | None = None) -> np.ndarray:
    """Predict a whole standardized record ``x (n, n_in)`` subsequence by subsequence.

    ``boundary_x`` replaces the constant-extended window used for the
    boundary subsequence when given (shape ``(L, n_in)``).
    """
    n = x.shape[0]
    starts = subsequence_starts(n, config.length, config.overlap)
    windows = np.stack([take_window(x, s, config.length) for s in starts])
    if boundary_x is not None:
        windows[0] = boundary_x
    ys = []
    for lo in range(0, len(starts), PREDICT_BATCH):
        y, _ = _lstm.forward(net, windows[lo:lo + PREDICT_BATCH])
        ys.append(y)
    ys = np.concatenate(ys)
    return recombine(list(zip(starts, ys)), n, config)


@dataclass(eq=False)
class HybridPredictor:
    scheme: str
    input_names: tuple[str, ...]
    output_names: tuple[str, ...]
    windowing: WindowingConfig
    lstm: _lstm.LstmNetwork | None = None
    frf: FrfModel | None = None

    def __post_init__(self):
        self.input_names = tuple(self.input_names)
        self.output_names = tuple(self.output_names)
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.scheme in ("frf", "hybrid1", "hybrid2"):
            if self.frf is None:
                raise ValueError(f"scheme {self.scheme!r} requires an FRF model")
            if self.frf.output_names != self.output_names:
                raise ValueError("FRF outputs must match the predicted channels")
            if self.frf.input_names != self.input_names:
                raise ValueError("FRF inputs must match the predictor inputs")
        if self.scheme != "frf":
            if self.lstm is None:
                raise ValueError(f"scheme {self.scheme!r} requires an LSTM network")
            width = len(self.lstm_input_names)
            if self.lstm.n_inputs != width:
                raise ValueError(f"LSTM consumes {self.lstm.n_inputs} channels, wiring provides {width}")
            if self.lstm.n_outputs != len(self.output_names):
                raise ValueError("LSTM output width does not match the predicted channels")
            if self.lstm.input_stats is None or self.lstm.output_stats is None:
                raise ValueError("LSTM network carries no standardization stats")

    @property
    def lstm_input_names(self) -> tuple[str, ...]:
        if self.scheme == "hybrid2":
            return self.input_names + tuple(FRF_PREFIX + n for n in self.output_names)
        return self.input_names

    @property
    def lstm_output_names(self) -> tuple[str, ...]:
        return self.output_names


def _boundary_frf(frf: FrfModel, x: MultiChannelSignal, length: int) -> np.ndarray:
    """FRF response over the boundary window, computed on the front-padded input."""
    half = length // 2
    data = x.data
    padded = np.vstack([np.repeat(data[:1], half, axis=0), data[:length - half]])
    if padded.shape[0] < length:
        padded = take_window(padded, 0, length)
    sig = MultiChannelSignal(x.sample_rate, x.names, padded)
    return frf_predict(frf, sig).data


def _lstm_inputs(predictor: HybridPredictor, x: MultiChannelSignal):
    """Assembled LSTM input record plus the boundary-window override (hybrid2)."""
    if predictor.scheme != "hybrid2":
        return x.data, None
    frf_y = frf_predict(predictor.frf, x).data
    boundary = take_window(x.data, -(predictor.windowing.length // 2), predictor.windowing.length)
    boundary = np.hstack([boundary, _boundary_frf(predictor.frf, x, predictor.windowing.length)])
    return np.hstack([x.data, frf_y]), boundary


def predict(predictor: HybridPredictor, signal: MultiChannelSignal) -> MultiChannelSignal:
    """Predict the output channels for one input record (same sample count)."""
    x = signal.select(predictor.input_names)
    if predictor.scheme == "frf":
        return frf_predict(predictor.frf, x)
    net = predictor.lstm
    raw, boundary = _lstm_inputs(predictor, x)
    stats_in = net.input_stats.subset(predictor.lstm_input_names)
    stats_out = net.output_stats.subset(predictor.lstm_output_names)
    z = (raw - stats_in.mean) / stats_in.std
    if boundary is not None:
        boundary = (boundary - stats_in.mean) / stats_in.std
    y = windowed_forward(net, z, predictor.windowing, boundary) * stats_out.std + stats_out.mean
    if predictor.scheme == "hybrid1":
        y = y + frf_predict(predictor.frf, x).data
    return MultiChannelSignal(signal.sample_rate, predictor.output_names, y)


@dataclass(eq=False)
class TrainingSet:
    inputs: np.ndarray           # (n_sub, L, n_in), standardized
    targets: np.ndarray          # (n_sub, L, n_out), standardized
    input_stats: StandardizationStats
    output_stats: StandardizationStats
    input_names: tuple[str, ...]
    output_names: tuple[str, ...]
    raw_target_variance: float = float("nan")
    output_variance: float = float("nan")


def build_training_set(scheme: str, inputs: Sequence[MultiChannelSignal],
                       targets: Sequence[MultiChannelSignal], frf: FrfModel | None,
                       windowing: WindowingConfig, input_names: Sequence[str] | None = None,
                       output_names: Sequence[str] | None = None) -> TrainingSet:
    """Assemble channels per scheme, standardize collectively and cut subsequences.

    The boundary subsequence is not used for training: its negative-time
    targets were never measured.
    """
    if scheme not in ("pure", "hybrid1", "hybrid2"):
        raise ValueError(f"no LSTM training for scheme {scheme!r}")
    if len(inputs) != len(targets) or not inputs:
        raise ValueError("need equally many (>= 1) input and target files")
    if scheme != "pure" and frf is None:
        raise ValueError(f"scheme {scheme!r} requires an FRF model")
    in_names = tuple(input_names or (frf.input_names if scheme != "pure" else inputs[0].names))
    out_names = tuple(output_names or (frf.output_names if scheme != "pure" else targets[0].names))

    assembled_in, assembled_out, plain_out = [], [], []
    for x, y in zip(inputs, targets):
        if len(x) != len(y):
            raise ValueError(f"paired files differ in length: {len(x)} vs {len(y)}")
        x = x.select(in_names)
        y = y.select(out_names)
        plain_out.append(y.data)
        if scheme == "pure":
            assembled_in.append(x)
            assembled_out.append(y)
        elif scheme == "hybrid1":
            e = y.data - frf_predict(frf, x).data
            assembled_in.append(x)
            assembled_out.append(y.with_data(e))
        else:
            frf_y = frf_predict(frf, x)
            frf_y = frf_y.with_data(frf_y.data, [FRF_PREFIX + n for n in out_names])
            assembled_in.append(x.concat_channels(frf_y))
            assembled_out.append(y)

    in_stats = fit_standardization(assembled_in)
    out_stats = fit_standardization(assembled_out)
    if scheme == "hybrid1":
        # residual mean pinned to zero so that a zero network adds nothing
        out_stats = StandardizationStats(out_stats.names, np.zeros(len(out_names)), out_stats.std)

    L = windowing.length
    X, Y = [], []
    for xs, ys in zip(assembled_in, assembled_out):
        zx = (xs.data - in_stats.mean) / in_stats.std
        zy = (ys.data - out_stats.mean) / out_stats.std
        for s in subsequence_starts(len(xs), L, windowing.overlap)[1:]:
            X.append(take_window(zx, s, L))
            Y.append(take_window(zy, s, L))
    plain = np.vstack(plain_out)
    raw = np.vstack([a.data for a in assembled_out])
    return TrainingSet(np.stack(X), np.stack(Y), in_stats, out_stats,
                       assembled_in[0].names, out_names,
                       float(np.mean(raw.var(axis=0))), float(np.mean(plain.var(axis=0))))


@dataclass(eq=False)
class FitResult:
    predictor: HybridPredictor
    history: list[float]                 # mean training loss per epoch
    training_set: TrainingSet
    validation: list[tuple[int, float]]  # (epoch, channel-averaged RMS) checkpoints
    best_epoch: int                      # epoch of the returned weights

    def __iter__(self):
        # allows ``predictor, history, ts = fit_predictor(...)``
        return iter((self.predictor, self.history, self.training_set))


def channel_mean_rms(predictor: HybridPredictor, signals: Sequence[MultiChannelSignal]) -> float:
    """Mean over files and output channels of ``sqrt(sum(e^2) / sum(y^2))``."""
    vals = []
    for sig in signals:
        y = sig.select(predictor.output_names).data
        p = predict(predictor, sig).data
        energy = np.sum(y * y, axis=0)
        vals.extend(np.sqrt(np.sum((y - p) ** 2, axis=0) / np.where(energy > 0, energy, np.nan)))
    return float(np.nanmean(vals))


def fit_predictor(scheme: str, inputs: Sequence[MultiChannelSignal],
                  targets: Sequence[MultiChannelSignal], frf: FrfModel | None,
                  windowing: WindowingConfig, architecture: Sequence[int],
                  config: _lstm.TrainConfig, init: _lstm.LstmNetwork | None = None,
                  input_names: Sequence[str] | None = None,
                  output_names: Sequence[str] | None = None, callback=None,
                  validation: Sequence[MultiChannelSignal] | None = None,
                  validate_every: int = 10) -> FitResult:
    """Build the training set, train an LSTM and wrap it as a predictor.

    ``init`` supplies a starting network (copied) instead of a fresh seeded
    initialization. With ``validation`` signals (inputs and outputs in one
    record) the weights are scored every ``validate_every`` epochs and after
    the last one, and the best-scoring weights are returned.
    """
    ts = build_training_set(scheme, inputs, targets, frf, windowing, input_names, output_names)
    n_in, n_out = ts.inputs.shape[2], ts.targets.shape[2]
    if init is None:
        net = _lstm.init_network(architecture, n_in, n_out, np.random.default_rng(config.seed))
    else:
        if init.n_inputs != n_in or init.n_outputs != n_out:
            raise ValueError("initial network does not match the training wiring")
        net = init.copy()
    net.input_stats = ts.input_stats
    net.output_stats = ts.output_stats
    in_names = ts.input_names[:len(ts.input_names) - (n_out if scheme == "hybrid2" else 0)]

    def wrap(network):
        return HybridPredictor(scheme, in_names, ts.output_names, windowing, network,
                               frf if scheme != "pure" else None)

    checkpoints: list[tuple[int, float]] = []
    best = {"epoch": config.epochs - 1, "score": np.inf, "net": None}

    def on_epoch(epoch, loss):
        if callback is not None:
            callback(epoch, loss)
        if validation and ((epoch + 1) % validate_every == 0 or epoch == config.epochs - 1):
            score = channel_mean_rms(wrap(net), validation)
            checkpoints.append((epoch, score))
            if score < best["score"]:
                best.update(epoch=epoch, score=score, net=net.copy())

    net, history = _lstm.train(net, ts.inputs, ts.targets, config, callback=on_epoch)
    if best["net"] is not None:
        net = best["net"]
    return FitResult(wrap(net), history, ts, checkpoints, best["epoch"])
