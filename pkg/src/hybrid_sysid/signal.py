"""Multichannel time series, standardization, FFT low-pass and subsequences."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

#: configuration limit on the subsequence length
MAX_SUBSEQUENCE_LENGTH = 65536


@dataclass(frozen=True, eq=False)
class MultiChannelSignal:
    """Uniformly sampled multichannel time series.

    ``data`` has shape ``(n_samples, n_channels)``; column ``j`` belongs to
    ``names[j]``.
    """

    sample_rate: float
    names: tuple[str, ...]
    data: np.ndarray

    def __post_init__(self):
        data = np.array(self.data, dtype=float, copy=True)
        if data.ndim == 1:
            data = data[:, None]
        names = tuple(str(n) for n in self.names)
        if data.ndim != 2:
            raise ValueError(f"data must be 2-D (samples, channels), got {data.shape}")
        if data.shape[0] < 1:
            raise ValueError("a signal needs at least one sample")
        if data.shape[1] != len(names):
            raise ValueError(f"{len(names)} names for {data.shape[1]} channels")
        if len(set(names)) != len(names):
            raise ValueError(f"channel names must be unique: {names}")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    @classmethod
    def from_channels(cls, sample_rate: float, channels: dict[str, Sequence[float]]):
        names = list(channels)
        data = np.column_stack([np.asarray(channels[n], dtype=float) for n in names])
        return cls(sample_rate, tuple(names), data)

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    @property
    def time(self) -> np.ndarray:
        return np.arange(len(self)) / self.sample_rate

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.data[:, self.names.index(name)]
        except ValueError:
            raise KeyError(f"no channel {name!r} in {self.names}") from None

    def select(self, names: Iterable[str]) -> "MultiChannelSignal":
        names = tuple(names)
        missing = [n for n in names if n not in self.names]
        if missing:
            raise KeyError(f"channels {missing} not in {self.names}")
        idx = [self.names.index(n) for n in names]
        return MultiChannelSignal(self.sample_rate, names, self.data[:, idx])

    def with_data(self, data: np.ndarray, names: Sequence[str] | None = None):
        return MultiChannelSignal(self.sample_rate, self.names if names is None else tuple(names), data)

    def concat_channels(self, other: "MultiChannelSignal") -> "MultiChannelSignal":
        if len(other) != len(self):
            raise ValueError(f"length mismatch: {len(self)} vs {len(other)}")
        return MultiChannelSignal(
            self.sample_rate, self.names + other.names, np.hstack([self.data, other.data])
        )


@dataclass(frozen=True, eq=False)
class StandardizationStats:
    names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        std = np.asarray(self.std, dtype=float).reshape(-1)
        if not (len(self.names) == mean.size == std.size):
            raise ValueError("one (mean, std) pair per channel required")
        if np.any(std <= 0):
            raise ValueError("standard deviations must be positive")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    def subset(self, names: Sequence[str]) -> "StandardizationStats":
        missing = [n for n in names if n not in self.names]
        if missing:
            raise KeyError(f"no standardization stats for channels {missing}")
        idx = [self.names.index(n) for n in names]
        return StandardizationStats(tuple(names), self.mean[idx], self.std[idx])


@dataclass(frozen=True, eq=False)
class Subsequence:
    """A window of ``length`` samples starting at ``start`` (may be negative)."""

    start: int
    data: np.ndarray

    @property
    def length(self) -> int:
        return self.data.shape[0]

    @property
    def is_boundary(self) -> bool:
        return self.start < 0


def fit_standardization(signals: Sequence[MultiChannelSignal]) -> StandardizationStats:
    """Per-channel mean and population standard deviation over all signals.

    Zero-variance channels get ``std = 1`` so that scaling is a no-op.
    """
    if not signals:
        raise ValueError("at least one signal is required")
    names = signals[0].names
    for s in signals[1:]:
        if set(s.names) != set(names):
            raise ValueError(f"mismatched channel sets: {names} vs {s.names}")
    stacked = np.vstack([s.select(names).data for s in signals])
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    # constant channels would otherwise divide by zero
    std = np.where(std > 0, std, 1.0)
    return StandardizationStats(names, mean, std)


def apply_standardization(
    signal: MultiChannelSignal, stats: StandardizationStats, direction: str = "forward"
) -> MultiChannelSignal:
    sub = stats.subset(signal.names)
    if direction == "forward":
        return signal.with_data((signal.data - sub.mean) / sub.std)
    if direction == "inverse":
        return signal.with_data(signal.data * sub.std + sub.mean)
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def lowpass_fft(signal: MultiChannelSignal, cutoff: float) -> MultiChannelSignal:
    """Zero every FFT bin above ``cutoff`` Hz (no transition band)."""
    nyquist = signal.sample_rate / 2
    if not 0 < cutoff < nyquist:
        raise ValueError(f"cutoff must lie in (0, {nyquist}) Hz, got {cutoff}")
    n = len(signal)
    spectrum = np.fft.rfft(signal.data, axis=0)
    freqs = np.fft.rfftfreq(n, d=1.0 / signal.sample_rate)
    spectrum[freqs > cutoff] = 0.0
    return signal.with_data(np.fft.irfft(spectrum, n=n, axis=0))


def subsequence_starts(n_samples: int, length: int, overlap: float) -> list[int]:
    """Start indices of the subsequences covering ``n_samples``.

    The first entry is the boundary subsequence at ``-length // 2``; the
    remaining interior starts advance by ``round(overlap * length)`` and the
    last one is anchored flush with the final sample when the stride
    overshoots.
    """
    if length < 2:
        raise ValueError(f"subsequence length must be >= 2, got {length}")
    if length > MAX_SUBSEQUENCE_LENGTH:
        raise ValueError(f"subsequence length {length} exceeds {MAX_SUBSEQUENCE_LENGTH}")
    if not 0 < overlap <= 1:
        raise ValueError(f"overlap factor must lie in (0, 1], got {overlap}")
    if n_samples < 1:
        raise ValueError("signal must contain at least one sample")
    stride = max(1, int(round(overlap * length)))
    last = max(n_samples - length, 0)
    starts = list(range(0, last + 1, stride))
    if starts[-1] != last:
        starts.append(last)
    return [-(length // 2)] + starts


def take_window(data: np.ndarray, start: int, length: int) -> np.ndarray:
    """Rows ``start .. start+length-1`` of ``data``, held constant outside the record."""
    idx = np.clip(np.arange(start, start + length), 0, data.shape[0] - 1)
    return data[idx]


def extract_subsequences(
    signal: MultiChannelSignal, length: int, overlap: float
) -> list[Subsequence]:
    """Cut ``signal`` into fixed-length subsequences.

    Returns the boundary subsequence first (negative-time samples hold the
    value at the first sample), then the interior subsequences in order.
    """
    return [
        Subsequence(start, take_window(signal.data, start, length))
        for start in subsequence_starts(len(signal), length, overlap)
    ]


# --- CSV ingestion ---------------------------------------------------------

_TIME_TOLERANCE = 1e-9


def read_csv(path: str | Path) -> MultiChannelSignal:
    """Read a ``time,<ch1>,<ch2>,...`` CSV file. Lines starting with ``#`` are skipped."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_csv(text, source=str(path))


def parse_csv(text: str, source: str = "<string>") -> MultiChannelSignal:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ValueError(f"{source}: empty file")
    header = next(csv.reader([lines[0]]))
    header = [h.strip() for h in header]
    if not header or header[0] != "time":
        raise ValueError(f"{source}: first column must be 'time', got {header[:1]}")
    if len(header) < 2:
        raise ValueError(f"{source}: no data channels")
    if len(lines) < 2:
        raise ValueError(f"{source}: no data rows")
    try:
        table = np.loadtxt(io.StringIO("\n".join(lines[1:])), delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ValueError(f"{source}: {exc}") from None
    if table.shape[1] != len(header):
        raise ValueError(f"{source}: {table.shape[1]} columns, header has {len(header)}")
    t = table[:, 0]
    if t.size == 1:
        raise ValueError(f"{source}: a single row does not define a sample rate")
    steps = np.diff(t)
    if np.any(steps <= 0):
        raise ValueError(f"{source}: time column must be strictly increasing")
    dt = (t[-1] - t[0]) / (t.size - 1)
    if np.max(np.abs(steps - dt)) > _TIME_TOLERANCE * dt + 1e-15 * np.max(np.abs(t)):
        raise ValueError(f"{source}: time column is not uniformly sampled")
    return MultiChannelSignal(1.0 / dt, tuple(header[1:]), table[:, 1:])


def format_csv(signal: MultiChannelSignal, comments: Sequence[str] = ()) -> str:
    out = io.StringIO()
    for c in comments:
        out.write(f"# {c}\n")
    out.write(",".join(("time",) + signal.names) + "\n")
    table = np.column_stack([signal.time, signal.data])
    np.savetxt(out, table, fmt="%.17g", delimiter=",")
    return out.getvalue()


def write_csv(signal: MultiChannelSignal, path: str | Path, comments: Sequence[str] = ()) -> None:
    Path(path).write_text(format_csv(signal, comments), encoding="utf-8")
