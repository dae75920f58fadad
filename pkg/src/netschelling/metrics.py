"""Fragmentation measures and ensemble-vs-mean-field comparison."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class MetricSeries:
    """Per-step observables of one run. ``provenance`` is a replica id or "meanfield"."""

    t: np.ndarray
    x_hat: np.ndarray
    mean_degree: np.ndarray
    n_similar: np.ndarray
    n_dissimilar: np.ndarray
    provenance: int | str = "meanfield"
    skipped: np.ndarray | None = None
    rewired: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t)
        self.x_hat = np.asarray(self.x_hat, dtype=float)
        if len(self.t) != len(self.x_hat):
            raise ValueError("t and x_hat differ in length")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("t must be strictly increasing")
        if np.any((self.x_hat < 0.0) | (self.x_hat > 1.0)):
            raise ValueError("x_hat must lie in [0, 1]")

    def __len__(self):
        return len(self.t)

    @classmethod
    def from_trajectory(cls, traj) -> "MetricSeries":
        return cls(
            t=traj.t,
            x_hat=traj.x,
            mean_degree=np.array([s.D for s in traj.states]),
            n_similar=np.array([s.E_s for s in traj.states]),
            n_dissimilar=np.array([s.E_d for s in traj.states]),
            provenance="meanfield",
        )


def cross_edge_fraction(state) -> float:
    """Dissimilar edges over all edges of a network state."""
    total = state.n_similar + state.n_dissimilar
    if total == 0:
        raise ValueError("cross-edge fraction undefined on an empty edge set")
    return state.n_dissimilar / total


def _series_xt(series) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(series, MetricSeries):
        return series.t, series.x_hat
    if hasattr(series, "states"):
        return series.t, series.x
    x = np.asarray(series, dtype=float)
    return np.arange(len(x)), x


def fragmentation_time(series, eps: float = 0.01) -> int | None:
    """First t with x_t < eps, or None. Accepts series, trajectories or plain sequences."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    t, x = _series_xt(series)
    hits = np.flatnonzero(x < eps)
    return int(t[hits[0]]) if hits.size else None


@dataclass
class ComparisonReport:
    t: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    meanfield: np.ndarray
    rmse: float
    coverage: float
    band: float = 3.0

    def summary(self) -> str:
        return (
            f"steps={len(self.t)} rmse={self.rmse:.6g} "
            f"coverage({self.band:g}SE)={self.coverage:.4f}"
        )


def compare_to_meanfield(ensemble: Sequence[MetricSeries], mf, band: float = 3.0) -> ComparisonReport:
    if len(ensemble) < 2:
        raise ValueError("comparison needs at least two replicas")
    mf_t, mf_x = _series_xt(mf)
    for s in ensemble:
        if len(s) != len(mf_x) or not np.array_equal(s.t, mf_t):
            raise ValueError(
                f"horizon mismatch: replica {s.provenance} has {len(s)} steps, "
                f"mean field has {len(mf_x)}"
            )
    xs = np.vstack([s.x_hat for s in ensemble])
    # sort each column so the statistics do not depend on replica order
    xs = np.sort(xs, axis=0)
    mean = xs.mean(axis=0)
    se = xs.std(axis=0, ddof=1) / math.sqrt(xs.shape[0])
    diff = mean - mf_x
    rmse = float(np.sqrt(np.mean(diff**2)))
    coverage = float(np.mean(np.abs(diff) <= band * se))
    return ComparisonReport(np.asarray(mf_t), mean, se, np.asarray(mf_x), rmse, coverage, band)


@dataclass(frozen=True)
class SlowdownResult:
    ratio: float | None
    time_a: int | None
    time_b: int | None

    @property
    def status(self) -> str:
        if self.ratio is None:
            return "no slowdown measurable"
        return f"{self.ratio:.6g}"


def slowdown_ratio(traj_a, traj_b, eps: float = 0.01) -> SlowdownResult:
    """fragmentation_time(b) / fragmentation_time(a); ratio None when either never crosses."""
    ta = fragmentation_time(traj_a, eps)
    tb = fragmentation_time(traj_b, eps)
    if ta is None or tb is None:
        return SlowdownResult(None, ta, tb)
    if ta == 0:
        return SlowdownResult(1.0 if tb == 0 else math.inf, ta, tb)
    return SlowdownResult(tb / ta, ta, tb)
