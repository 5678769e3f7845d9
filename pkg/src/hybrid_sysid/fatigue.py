"""Rainflow counting and fictitious fatigue damage.

Cycles are counted with the 4-point rule. Whatever residual remains is closed
by counting the residual concatenated with itself, i.e. the load history is
treated as repeating. Damage follows the elementary Palmgren-Miner rule on a
power-law Woehler curve ``N = K * S_a**-k`` with no endurance limit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True, eq=False)
class CycleSet:
    amplitudes: np.ndarray
    means: np.ndarray
    counts: np.ndarray

    def __len__(self) -> int:
        return self.amplitudes.size

    def as_tuples(self) -> list[tuple[float, float, float]]:
        return list(zip(self.amplitudes.tolist(), self.means.tolist(), self.counts.tolist()))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["amplitude", "mean", "count"])
            for row in self.as_tuples():
                w.writerow([repr(v) for v in row])


@dataclass(frozen=True)
class WoehlerParams:
    k: float = 5.0
    K: float = 1e7

    def __post_init__(self):
        if self.k <= 0 or self.K <= 0:
            raise ValueError("Woehler exponent and constant must be positive")


def turning_points(samples) -> np.ndarray:
    """Alternating local extrema, first and last sample included, plateaus collapsed."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        return x
    if x.size == 1:
        return np.array([x[0], x[0]])
    # drop repeated values so every remaining step has a direction
    keep = np.concatenate([[True], np.diff(x) != 0])
    y = x[keep]
    if y.size == 1:
        return np.array([x[0], x[-1]])
    d = np.sign(np.diff(y))
    interior = np.flatnonzero(d[1:] != d[:-1]) + 1
    return y[np.concatenate([[0], interior, [y.size - 1]])]


def _four_point(points: Sequence[float]) -> tuple[list[tuple[float, float]], list[float]]:
    """Extract ``(range, mean)`` pairs; returns them with the residual stack."""
    stack: list[float] = []
    cycles: list[tuple[float, float]] = []
    for p in points:
        stack.append(p)
        while len(stack) >= 4:
            p1, p2, p3, p4 = stack[-4:]
            inner = abs(p2 - p3)
            if inner <= abs(p1 - p2) and inner <= abs(p3 - p4):
                cycles.append((inner, 0.5 * (p2 + p3)))
                del stack[-3:-1]
            else:
                break
    return cycles, stack


def rainflow_4pt(points) -> CycleSet:
    """Full cycles of a turning-point sequence by the 4-point rule.

    A residual of three or more points is closed by counting it concatenated
    with itself; every cycle closed there counts as a full cycle.
    """
    tp = turning_points(points)
    cycles, residual = _four_point(tp.tolist())
    if len(residual) >= 3:
        closed, _ = _four_point(turning_points(residual + residual).tolist())
        cycles += closed
    if not cycles:
        empty = np.zeros(0)
        return CycleSet(empty, empty.copy(), empty.copy())
    arr = np.asarray(cycles)
    return CycleSet(arr[:, 0] / 2, arr[:, 1], np.ones(len(cycles)))


def damage(cycles: CycleSet, woehler: WoehlerParams = WoehlerParams()) -> float:
    """Palmgren-Miner sum ``sum(n_i * S_a,i**k / K)``."""
    if len(cycles) == 0:
        return 0.0
    return float(np.sum(cycles.counts * cycles.amplitudes ** woehler.k) / woehler.K)


def signal_damage(samples, woehler: WoehlerParams = WoehlerParams()) -> float:
    return damage(rainflow_4pt(turning_points(samples)), woehler)


def damage_ratio(prediction, target, woehler: WoehlerParams = WoehlerParams()) -> float:
    """``d(prediction) / d(target)``; NaN when the target accumulates no damage."""
    d_target = signal_damage(target, woehler)
    if d_target == 0:
        return float("nan")
    return signal_damage(prediction, woehler) / d_target


@dataclass(frozen=True, eq=False)
class DirectionSet:
    vectors: np.ndarray     # (n, 3) unit vectors

    def __len__(self) -> int:
        return self.vectors.shape[0]


def generate_directions(count: int = 500, scheme: str = "fibonacci") -> DirectionSet:
    """Deterministic, near-uniform directions over the full unit sphere."""
    if count < 1:
        raise ValueError("need at least one direction")
    if scheme != "fibonacci":
        raise ValueError(f"unknown direction scheme {scheme!r}")
    i = np.arange(count, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / count
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = i * np.pi * (3.0 - np.sqrt(5.0))
    v = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return DirectionSet(v)


def directional_damages(signal3, directions: DirectionSet,
                        woehler: WoehlerParams = WoehlerParams()) -> np.ndarray:
    """Damage of ``psi_x s_x + psi_y s_y + psi_z s_z`` for every direction."""
    s = np.asarray(signal3, dtype=float)
    if s.ndim != 2 or s.shape[1] != 3:
        raise ValueError(f"expected a (n, 3) signal, got shape {s.shape}")
    # explicit sum rather than a matrix product, so results do not depend on BLAS rounding
    return np.array([signal_damage(project(s, psi), woehler) for psi in directions.vectors])


def project(signal3, psi) -> np.ndarray:
    """``psi_x s_x + psi_y s_y + psi_z s_z``."""
    s = np.asarray(signal3, dtype=float)
    return psi[0] * s[:, 0] + psi[1] * s[:, 1] + psi[2] * s[:, 2]


def multirain_ratio(prediction, target, directions: DirectionSet | None = None,
                    woehler: WoehlerParams = WoehlerParams()) -> float:
    """Worst-direction damage of the prediction over that of the target."""
    if directions is None:
        directions = generate_directions()
    d_target = directional_damages(target, directions, woehler).max()
    if d_target == 0:
        raise ValueError("target accumulates no damage in any direction")
    return float(directional_damages(prediction, directions, woehler).max() / d_target)
