"""Exact selection of a maximum-score set of non-overlapping loop segments.

Accepted segments from different candidates can overlap in their query or
database index ranges; only a mutually non-overlapping subset may become
pose-graph constraints.  Pools are small (windowed), so the selection is an
exact maximum-weight independent set over the pairwise conflict graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from .errors import WindowOverflowError
from .sprt import LoopSegment

DEFAULT_WINDOW_CAP = 32


@dataclass
class SegmentPool:
    """Segments pending resolution within the current window."""

    segments: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.segments)


def _spans_overlap(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]  # closed intervals


def segments_conflict(a: LoopSegment, b: LoopSegment) -> bool:
    """Two segments conflict if they overlap on either index axis."""
    return _spans_overlap(a.query_span, b.query_span) or _spans_overlap(a.db_span, b.db_span)


def _segment_sort_key(s: LoopSegment):
    return (s.query_span, s.db_span, -s.score, s.query, s.candidate)


def resolve(pool, cap: int = DEFAULT_WINDOW_CAP) -> list[LoopSegment]:
    """Maximum-total-score subset of mutually non-overlapping segments.

    Exact branch-and-bound over the conflict graph; deterministic ties go to
    the subset found first under lexicographic segment ordering with the
    include-branch explored first.

    Raises WindowOverflowError when the pool exceeds `cap`.
    """
    segments = pool.segments if isinstance(pool, SegmentPool) else list(pool)
    if len(segments) > cap:
        raise WindowOverflowError(f"pool of {len(segments)} exceeds window cap {cap}")
    if not segments:
        return []

    segs = sorted(segments, key=_segment_sort_key)
    n = len(segs)
    weights = [s.score for s in segs]
    neighbors = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if segments_conflict(segs[i], segs[j]):
                neighbors[i] |= 1 << j
                neighbors[j] |= 1 << i

    memo: dict[int, tuple[float, int]] = {}

    def best(mask: int) -> tuple[float, int]:
        if mask == 0:
            return 0.0, 0
        hit = memo.get(mask)
        if hit is not None:
            return hit
        v = (mask & -mask).bit_length() - 1
        bit = 1 << v
        take_score, take_set = best(mask & ~bit & ~neighbors[v])
        take = (take_score + weights[v], take_set | bit)
        skip = best(mask & ~bit)
        out = take if take[0] >= skip[0] else skip
        memo[mask] = out
        return out

    _, chosen = best((1 << n) - 1)
    return [segs[i] for i in range(n) if chosen & (1 << i)]


class WindowedResolver:
    """Sliding-window conflict resolution as queries advance.

    A window flushes once a new segment's anchor query exceeds the window's
    last committed query span by more than `flush_gap` frames (typically the
    truncation horizon).  Overlap is enforced only within a window; any
    overlap between a newly resolved segment and previously emitted ones is
    recorded for audit rather than suppressed.
    """

    def __init__(self, flush_gap: int, cap: int = DEFAULT_WINDOW_CAP):
        self.flush_gap = flush_gap
        self.cap = cap
        self._pending: list[LoopSegment] = []
        self._window_end = None  # max query-span end in the pending window
        self.resolved: list[LoopSegment] = []
        self.cross_window_overlaps: list[tuple[LoopSegment, LoopSegment]] = []

    def add(self, segment: LoopSegment) -> None:
        if self._window_end is not None and segment.query > self._window_end + self.flush_gap:
            self.flush()
        if len(self._pending) >= self.cap:
            self.flush()
        self._pending.append(segment)
        end = segment.query_span[1]
        self._window_end = end if self._window_end is None else max(self._window_end, end)

    def flush(self) -> None:
        if not self._pending:
            return
        kept = resolve(self._pending, cap=self.cap)
        for seg in kept:
            for prev in self.resolved:
                if segments_conflict(seg, prev):
                    self.cross_window_overlaps.append((prev, seg))
        self.resolved.extend(kept)
        self._pending = []
        self._window_end = None

    def finish(self) -> list[LoopSegment]:
        self.flush()
        return self.resolved
