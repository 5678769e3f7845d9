"""Prediction error metrics and tabulated evaluation reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

from . import fatigue
from .pipeline import HybridPredictor
from .pipeline import predict as predict_with
from .signal import MultiChannelSignal
from .spectral import DEFAULT_SEGMENT_LENGTH, estimate_psd


def rms_error(prediction, target) -> float:
    """``sqrt(sum((y - y*)^2) / sum(y^2))``; NaN for a zero-energy target."""
    p = np.asarray(prediction, dtype=float)
    y = np.asarray(target, dtype=float)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {y.shape}")
    energy = np.sum(y * y)
    if energy == 0:
        return float("nan")
    return float(np.sqrt(np.sum((y - p) ** 2) / energy))


def psd_rms_error(prediction, target, sample_rate: float = 1.0,
                  segment_length: int = DEFAULT_SEGMENT_LENGTH) -> float:
    """``rms_error`` between the one-sided PSD value sequences of both signals."""
    sp = estimate_psd(prediction, sample_rate, segment_length).values
    st = estimate_psd(target, sample_rate, segment_length).values
    return rms_error(sp, st)


def _segment_for(n: int, segment_length: int) -> int:
    # shorter records fall back to the largest power of two that fits
    return min(segment_length, 1 << (int(n).bit_length() - 1))


@dataclass
class EvalFile:
    name: str
    group: str
    signal: MultiChannelSignal


@dataclass
class EvaluationReport:
    """Long-format rows ``(group, file, channel, metric, value)``.

    Per-file rows hold per-channel ``rms``, ``psd_rms`` and ``damage_ratio``,
    the channel means ``rms_mean`` / ``psd_rms_mean`` (channel ``*``) and a
    ``multirain`` value for every complete x/y/z channel triple. Group rows
    use file ``*`` and average the per-file values.
    """

    rows: list[tuple[str, str, str, str, float]] = field(default_factory=list)

    def value(self, metric: str, file: str = "*", channel: str = "*", group: str | None = None) -> float:
        for g, f, c, m, v in self.rows:
            if m == metric and f == file and c == channel and (group is None or g == group):
                return v
        raise KeyError((group, file, channel, metric))

    def select(self, metric: str, file: str | None = None, channel: str | None = None):
        return [r for r in self.rows if r[3] == metric
                and (file is None or r[1] == file) and (channel is None or r[2] == channel)]

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["group", "file", "channel", "metric", "value"])
        for g, f, c, m, v in self.rows:
            w.writerow([g, f, c, m, repr(float(v))])
        return out.getvalue()

    def summary(self) -> str:
        lines = []
        groups = sorted({r[0] for r in self.rows})
        for g in groups:
            parts = [f"{m}={v:.4g}" for gg, f, c, m, v in self.rows
                     if gg == g and f == "*" and c == "*"]
            lines.append(f"{g}: " + " ".join(parts))
        return "\n".join(lines)


def channel_triples(names: Sequence[str]) -> list[tuple[str, str, str]]:
    """Group ``<q>_x, <q>_y, <q>_z`` channel names into triples."""
    triples = []
    for n in names:
        if n.endswith("_x"):
            stem = n[:-2]
            trip = (n, stem + "_y", stem + "_z")
            if all(t in names for t in trip):
                triples.append(trip)
    if not triples and len(names) == 3:
        triples.append(tuple(names))
    return triples


def evaluate(predictor, files: Sequence[EvalFile], output_names: Sequence[str] | None = None,
             segment_length: int = DEFAULT_SEGMENT_LENGTH,
             woehler: fatigue.WoehlerParams = fatigue.WoehlerParams(),
             directions: fatigue.DirectionSet | None = None) -> EvaluationReport:
    """Score a predictor on every file of a split.

    ``predictor`` is a :class:`~hybrid_sysid.pipeline.HybridPredictor` or any
    callable ``signal -> MultiChannelSignal``. Group aggregates are
    unweighted means over the files of the group.
    """
    if isinstance(predictor, HybridPredictor):
        output_names = output_names or predictor.output_names
        predict = partial(predict_with, predictor)
    else:
        predict = predictor
    if output_names is None:
        raise ValueError("output_names are required for a bare callable")
    if not files:
        raise ValueError("empty evaluation split")
    if directions is None:
        directions = fatigue.generate_directions()
    report = EvaluationReport()
    per_group: dict[str, dict[tuple[str, str], list[float]]] = {}
    triples = channel_triples(list(output_names))
    for ef in files:
        target = ef.signal.select(output_names)
        pred = predict(ef.signal).select(output_names)
        seg = _segment_for(len(target), segment_length)
        rms, prms = [], []
        acc = per_group.setdefault(ef.group, {})
        for name in output_names:
            p, y = pred.channel(name), target.channel(name)
            vals = {
                "rms": rms_error(p, y),
                "psd_rms": psd_rms_error(p, y, target.sample_rate, seg),
                "damage_ratio": fatigue.damage_ratio(p, y, woehler),
            }
            rms.append(vals["rms"])
            prms.append(vals["psd_rms"])
            for metric, v in vals.items():
                report.rows.append((ef.group, ef.name, name, metric, v))
                acc.setdefault((name, metric), []).append(v)
        for metric, v in (("rms_mean", float(np.mean(rms))), ("psd_rms_mean", float(np.mean(prms)))):
            report.rows.append((ef.group, ef.name, "*", metric, v))
            acc.setdefault(("*", metric), []).append(v)
        for trip in triples:
            try:
                mr = fatigue.multirain_ratio(pred.select(trip).data, target.select(trip).data,
                                             directions, woehler)
            except ValueError:
                mr = float("nan")
            label = ",".join(trip)
            report.rows.append((ef.group, ef.name, label, "multirain", mr))
            acc.setdefault((label, "multirain"), []).append(mr)
    for group, acc in per_group.items():
        for (channel, metric), vals in acc.items():
            report.rows.append((group, "*", channel, metric, float(np.mean(vals))))
    return report
