"""Candidate retrieval and near-diagonal distance stream construction.

Retrieval proposes a gated top-M candidate set per query from a descriptor
table.  For each surviving (query, candidate) pair, a short look-ahead stream
of descriptor distances is built along an adaptive alignment

    x_i = dist(d[q+i], d[t+k_i]),   k_i = floor(nu_i * i + delta_i),

where the stride nu_i (velocity hypothesis) and jitter delta_i are chosen
greedily per step to maximize the instantaneous log-likelihood ratio.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .density import DensityPair, llr
from .errors import EmptyStreamError

METRICS = ("euclidean", "cosine", "manhattan")

DEFAULT_NU_SET = (0.5, 0.75, 1.0, 1.25, 1.5, 2.0)
DEFAULT_DELTA_MAX = 2


@dataclass(frozen=True)
class DescriptorTable:
    """Dense table of per-keyframe descriptor vectors with a native metric."""

    descriptors: np.ndarray
    metric: str = "euclidean"

    def __post_init__(self):
        arr = np.asarray(self.descriptors, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("descriptors must be a non-empty (N, D) array")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        object.__setattr__(self, "descriptors", arr)

    def __len__(self) -> int:
        return self.descriptors.shape[0]

    @property
    def dim(self) -> int:
        return self.descriptors.shape[1]

    def distance(self, i: int, j: int) -> float:
        return float(self.distances(i, np.asarray([j]))[0])

    def distances(self, i: int, js: np.ndarray) -> np.ndarray:
        """Distances from keyframe i to each keyframe index in js."""
        a = self.descriptors[i]
        b = self.descriptors[js]
        if self.metric == "euclidean":
            return np.sqrt(np.sum((b - a) ** 2, axis=1))
        if self.metric == "manhattan":
            return np.sum(np.abs(b - a), axis=1)
        denom = np.maximum(np.linalg.norm(b, axis=1) * np.linalg.norm(a), 1e-300)
        return 1.0 - (b @ a) / denom

    def distances_to_all(self, i: int) -> np.ndarray:
        return self.distances(i, np.arange(len(self)))

    def to_csv(self, path: str | Path) -> None:
        np.savetxt(path, self.descriptors, delimiter=",", fmt="%.17g")

    @classmethod
    def from_csv(cls, path: str | Path, metric: str = "euclidean") -> "DescriptorTable":
        """Load one descriptor row per keyframe; columns are vector components."""
        arr = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
        return cls(descriptors=arr, metric=metric)


@dataclass(frozen=True)
class CandidateSet:
    """Gated retrieval output for one query keyframe."""

    query: int
    candidates: tuple  # of (index, retrieval distance) pairs, nearest first

    @property
    def indices(self) -> list[int]:
        return [t for t, _ in self.candidates]

    def __len__(self) -> int:
        return len(self.candidates)


class StreamObs(NamedTuple):
    i: int
    k: int
    x: float


@dataclass(frozen=True)
class DistanceStream:
    """Ordered distance observations for one (query, candidate) pair."""

    query: int
    candidate: int
    observations: tuple  # of StreamObs
    nu_trace: tuple
    delta_trace: tuple

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def distances(self) -> np.ndarray:
        return np.asarray([o.x for o in self.observations])

    @property
    def alignment(self) -> list[int]:
        return [o.k for o in self.observations]


def retrieve(
    table: DescriptorTable,
    q: int,
    budget: int,
    exclusion: int,
    exclusivity: int,
    ratio: float | None = None,
) -> CandidateSet:
    """Top-`budget` nearest keyframes to q under temporal and cluster gating.

    Gates, applied in nearest-first order with ascending-index tie-break:
      - temporal exclusion: drop t with |q - t| <= exclusion;
      - exclusivity span: drop t within `exclusivity` indices of an already
        retained (nearer) candidate;
      - ratio gate: drop t whose distance exceeds ratio * (best retained
        distance); disabled when ratio is None.

    Returns an empty set when nothing survives.
    """
    if q < 0 or q >= len(table):
        raise ValueError(f"query index {q} out of range for table of {len(table)}")
    d = table.distances_to_all(q)
    order = np.lexsort((np.arange(len(table)), d))
    kept: list[tuple[int, float]] = []
    for t in order:
        t = int(t)
        if abs(q - t) <= exclusion:
            continue
        if kept and ratio is not None and d[t] > ratio * kept[0][1]:
            break  # distances are sorted; nothing further can pass
        if any(abs(t - s) < exclusivity for s, _ in kept):
            continue
        kept.append((t, float(d[t])))
        if len(kept) >= budget:
            break
    return CandidateSet(query=q, candidates=tuple(kept))


def build_stream(
    table: DescriptorTable,
    dp: DensityPair,
    q: int,
    t: int,
    nu_set: Sequence[float] = DEFAULT_NU_SET,
    delta_max: int = DEFAULT_DELTA_MAX,
    n_max: int = 13,
    nu_mode: str = "per_step",
) -> DistanceStream:
    """Build the greedy adaptive distance stream for the pair (q, t).

    At each step i the tracker evaluates every (nu, delta) combination with a
    valid database index and keeps the one maximizing llr(dp, x); ties break
    toward the least-warped alignment (smallest |delta|, then smallest nu,
    then smallest delta).  The stream stops at n_max steps or at the first
    step with no valid index pair.

    nu_mode "per_step" re-selects nu at every step; "per_stream" evaluates a
    full stream per velocity hypothesis (jitter still greedy per step) and
    keeps the hypothesis with the largest cumulative llr.
    """
    if not nu_set:
        raise ValueError("nu_set must be non-empty")
    if nu_mode == "per_stream":
        return _build_stream_per_stream(table, dp, q, t, nu_set, delta_max, n_max)
    if nu_mode != "per_step":
        raise ValueError(f"unknown nu_mode {nu_mode!r}")
    return _build_stream_greedy(table, dp, q, t, tuple(nu_set), delta_max, n_max)


def _step_candidates(n_frames: int, t: int, i: int, nu_set, delta_max):
    """All (nu, delta, k) with a valid database index at step i."""
    out = []
    for nu in nu_set:
        base = nu * i
        for delta in range(-delta_max, delta_max + 1):
            k = math.floor(base + delta)
            if 0 <= t + k < n_frames:
                out.append((nu, delta, k))
    return out


def _build_stream_greedy(table, dp, q, t, nu_set, delta_max, n_max) -> DistanceStream:
    n_frames = len(table)
    obs, nu_trace, delta_trace = [], [], []
    for i in range(n_max):
        if q + i >= n_frames:
            break
        combos = _step_candidates(n_frames, t, i, nu_set, delta_max)
        if not combos:
            break
        ks = np.asarray(sorted({k for _, _, k in combos}))
        xs = table.distances(q + i, t + ks)
        ls = llr(dp, xs)
        by_k = {int(k): (float(x), float(l)) for k, x, l in zip(ks, xs, ls)}
        best = max(combos, key=lambda c: (by_k[c[2]][1], -abs(c[1]), -c[0], -c[1]))
        nu, delta, k = best
        obs.append(StreamObs(i=i, k=k, x=by_k[k][0]))
        nu_trace.append(nu)
        delta_trace.append(delta)
    if not obs:
        raise EmptyStreamError(f"no valid observation for pair (q={q}, t={t})")
    return DistanceStream(
        query=q, candidate=t, observations=tuple(obs),
        nu_trace=tuple(nu_trace), delta_trace=tuple(delta_trace),
    )


def _build_stream_per_stream(table, dp, q, t, nu_set, delta_max, n_max) -> DistanceStream:
    best_stream, best_total = None, -math.inf
    for nu in sorted(nu_set):
        try:
            s = _build_stream_greedy(table, dp, q, t, (nu,), delta_max, n_max)
        except EmptyStreamError:
            continue
        total = float(np.sum(llr(dp, s.distances)))
        if total > best_total:
            best_stream, best_total = s, total
    if best_stream is None:
        raise EmptyStreamError(f"no valid observation for pair (q={q}, t={t})")
    return best_stream
