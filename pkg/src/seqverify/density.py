"""One-dimensional loop/non-loop distance densities and log-likelihood ratios.

Distances collected from labeled loop (H1) and non-loop (H0) pairs are fit
with Gaussian-kernel density estimates on a shared uniform grid.  Lookups
interpolate the tabulated log densities, so a per-observation evidence value
``llr(x) = log f1(x) - log f0(x)`` costs O(1) and is bounded by the grid
boundary values for out-of-range queries.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import InsufficientSamplesError

H0 = 0
H1 = 1

#: Minimum bandwidth, as a fraction of the pooled sample range.
MIN_BANDWIDTH_FRACTION = 1e-4
#: Absolute bandwidth fallback when the pooled sample range is zero.
MIN_BANDWIDTH_ABSOLUTE = 1e-4

MIN_SAMPLES_PER_LABEL = 10


@dataclass(frozen=True)
class DistanceSample:
    """A scalar descriptor distance tagged with its hypothesis label."""

    distance: float
    label: int

    def __post_init__(self):
        if not (math.isfinite(self.distance) and self.distance >= 0.0):
            raise ValueError(f"distance must be finite and >= 0, got {self.distance}")
        if self.label not in (H0, H1):
            raise ValueError(f"label must be {H0} (H0) or {H1} (H1), got {self.label}")


@dataclass(frozen=True)
class DensityPair:
    """Tabulated log densities for the loop and non-loop hypotheses.

    Attributes
    ----------
    grid : ndarray
        Strictly increasing distance abscissae (uniform spacing).
    log_f1, log_f0 : ndarray
        Log density values on ``grid`` for H1 (loop) and H0 (non-loop).
    bandwidth_h1, bandwidth_h0 : float
        Gaussian kernel bandwidths used for each label.
    floor : float
        Probability-density floor applied before taking logs; guarantees
        every tabulated density value is at least ``floor``.
    """

    grid: np.ndarray
    log_f1: np.ndarray
    log_f0: np.ndarray
    bandwidth_h1: float
    bandwidth_h0: float
    floor: float

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.ndim != 1 or grid.size < 2:
            raise ValueError("grid must be a 1-D array with at least 2 nodes")
        if not np.all(np.diff(grid) > 0):
            raise ValueError("grid must be strictly increasing")
        for name in ("log_f1", "log_f0"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != grid.shape:
                raise ValueError(f"{name} must match the grid shape")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "grid", grid)

    def llr(self, x):
        return llr(self, x)

    def to_json_dict(self) -> dict:
        return {
            "grid": self.grid.tolist(),
            "log_f1": self.log_f1.tolist(),
            "log_f0": self.log_f0.tolist(),
            "bandwidth_h1": self.bandwidth_h1,
            "bandwidth_h0": self.bandwidth_h0,
            "floor": self.floor,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "DensityPair":
        return cls(
            grid=np.asarray(doc["grid"], dtype=np.float64),
            log_f1=np.asarray(doc["log_f1"], dtype=np.float64),
            log_f0=np.asarray(doc["log_f0"], dtype=np.float64),
            bandwidth_h1=float(doc["bandwidth_h1"]),
            bandwidth_h0=float(doc["bandwidth_h0"]),
            floor=float(doc["floor"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "DensityPair":
        return cls.from_json_dict(json.loads(Path(path).read_text()))


def silverman_bandwidth(values: np.ndarray) -> float:
    """Silverman's rule-of-thumb bandwidth: 0.9 min(std, IQR/1.34) n^(-1/5)."""
    std = float(np.std(values))
    q75, q25 = np.percentile(values, [75, 25])
    spread = min(std, (q75 - q25) / 1.34)
    return 0.9 * spread * len(values) ** (-0.2)


def fit_density_pair(
    samples: Iterable[DistanceSample],
    grid_size: int = 512,
    floor: float = 1e-9,
) -> DensityPair:
    """Fit loop/non-loop distance densities from labeled samples.

    Each label gets a Gaussian KDE with its Silverman bandwidth (clamped to a
    small minimum so identical samples do not degenerate), evaluated on one
    shared uniform grid spanning the pooled data range padded by three
    bandwidths.  Densities are clamped at ``floor``, renormalized to unit
    trapezoid integral, and stored as logs.

    Raises
    ------
    InsufficientSamplesError
        If either label has fewer than 10 samples.
    """
    if grid_size < 16:
        raise ValueError(f"grid_size must be >= 16, got {grid_size}")
    if floor <= 0:
        raise ValueError(f"floor must be positive, got {floor}")

    samples = list(samples)
    # Sorting makes the fit invariant to sample order (bit-identical refits).
    x1 = np.sort([s.distance for s in samples if s.label == H1])
    x0 = np.sort([s.distance for s in samples if s.label == H0])
    if len(x1) < MIN_SAMPLES_PER_LABEL or len(x0) < MIN_SAMPLES_PER_LABEL:
        raise InsufficientSamplesError(
            f"need >= {MIN_SAMPLES_PER_LABEL} samples per label, "
            f"got {len(x1)} (H1) and {len(x0)} (H0)"
        )

    pooled_range = float(max(x1[-1], x0[-1]) - min(x1[0], x0[0]))
    min_bw = MIN_BANDWIDTH_FRACTION * pooled_range if pooled_range > 0 else MIN_BANDWIDTH_ABSOLUTE
    bw1 = max(silverman_bandwidth(x1), min_bw)
    bw0 = max(silverman_bandwidth(x0), min_bw)

    # A shared, label-symmetric grid keeps label-swap an exact negation of llr.
    pad = 3.0 * max(bw1, bw0)
    lo = min(x1[0], x0[0]) - pad
    hi = max(x1[-1], x0[-1]) + pad
    grid = np.linspace(lo, hi, grid_size)

    log_f1 = _tabulate_log_density(grid, x1, bw1, floor)
    log_f0 = _tabulate_log_density(grid, x0, bw0, floor)
    return DensityPair(
        grid=grid, log_f1=log_f1, log_f0=log_f0,
        bandwidth_h1=bw1, bandwidth_h0=bw0, floor=floor,
    )


def _tabulate_log_density(grid: np.ndarray, values: np.ndarray, bw: float, floor: float) -> np.ndarray:
    z = (grid[:, None] - values[None, :]) / bw
    dens = np.exp(-0.5 * z * z).mean(axis=1) / (bw * math.sqrt(2.0 * math.pi))
    dens = np.maximum(dens, floor)
    dens = dens / np.trapezoid(dens, grid)
    # Renormalization can push clamped tails fractionally below the floor;
    # restoring it costs at most floor * span of integral mass.
    dens = np.maximum(dens, floor)
    return np.log(dens)


def llr(dp: DensityPair, x):
    """Per-observation log-likelihood ratio log f1(x) - log f0(x).

    Linear interpolation of the tabulated log densities; queries outside the
    grid return the boundary value, so evidence per step is bounded.
    Accepts scalars or arrays.
    """
    v1 = np.interp(x, dp.grid, dp.log_f1)
    v0 = np.interp(x, dp.grid, dp.log_f0)
    out = v1 - v0
    return float(out) if np.isscalar(x) or np.ndim(x) == 0 else out


def kl_divergence(dp: DensityPair, of: int = H1) -> float:
    """Per-step KL divergence KL(f1 || f0) (or KL(f0 || f1) with of=H0)."""
    if of == H1:
        f = np.exp(dp.log_f1)
        delta = dp.log_f1 - dp.log_f0
    else:
        f = np.exp(dp.log_f0)
        delta = dp.log_f0 - dp.log_f1
    return float(np.trapezoid(f * delta, dp.grid))


def sample_distances(dp: DensityPair, label: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n i.i.d. values from the tabulated density of the given label.

    The tabulated density is treated as piecewise linear between grid nodes
    (the same shape the trapezoid normalization integrates), and sampled by
    exact inverse-CDF inversion within each cell.
    """
    logf = dp.log_f1 if label == H1 else dp.log_f0
    f = np.exp(logf)
    g = dp.grid
    widths = np.diff(g)
    cell_mass = 0.5 * (f[:-1] + f[1:]) * widths
    cdf = np.concatenate([[0.0], np.cumsum(cell_mass)])
    total = cdf[-1]

    u = rng.uniform(0.0, total, size=n)
    cells = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, len(widths) - 1)
    rem = u - cdf[cells]

    f_lo = f[cells]
    slope = (f[cells + 1] - f[cells]) / widths[cells]
    # Solve 0.5*slope*t^2 + f_lo*t = rem for t in [0, width].
    with np.errstate(invalid="ignore", divide="ignore"):
        disc = np.sqrt(np.maximum(f_lo * f_lo + 2.0 * slope * rem, 0.0))
        t = np.where(np.abs(slope) > 1e-300, (disc - f_lo) / slope, rem / f_lo)
    t = np.clip(t, 0.0, widths[cells])
    return g[cells] + t
