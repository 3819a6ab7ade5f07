"""Ground-truth labeling and the three-tier evaluation metrics.

Tier 1: pair-wise precision/recall/F1 over loop pairs under a small index
tolerance.  Tier 2: segment-level K-hit precision/recall, crediting short
temporally coherent match runs.  Tier 3: decision metrics of the sequential
policy (average samples to decision and detection delay).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .sprt import LoopSegment, SprtVerdict, longest_hit_run

Pair = tuple[int, int]


@dataclass(frozen=True)
class GtParams:
    """Gates for ground-truth loop labeling over a planar trajectory."""

    translation_gate: float = 0.5        # meters
    rotation_gate_deg: float = 12.0      # geodesic heading distance
    min_separation: int = 30             # keyframes
    near_duplicate_radius: int = 10      # db-index clustering radius per query
    segment_gap_tolerance: int = 1       # frames, for near-diagonal grouping


@dataclass(frozen=True)
class GtSegment:
    """One connected near-diagonal run of ground-truth loop pairs."""

    pairs: tuple  # of (q, t), sorted

    @property
    def query_span(self) -> tuple[int, int]:
        qs = [p[0] for p in self.pairs]
        return min(qs), max(qs)

    @property
    def db_span(self) -> tuple[int, int]:
        ts = [p[1] for p in self.pairs]
        return min(ts), max(ts)

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class GroundTruth:
    loop_pairs: frozenset
    gt_segments: tuple
    params: GtParams

    def to_json_dict(self) -> dict:
        return {
            "loop_pairs": sorted([list(p) for p in self.loop_pairs]),
            "gt_segments": [[list(p) for p in seg.pairs] for seg in self.gt_segments],
            "params": {
                "translation_gate": self.params.translation_gate,
                "rotation_gate_deg": self.params.rotation_gate_deg,
                "min_separation": self.params.min_separation,
                "near_duplicate_radius": self.params.near_duplicate_radius,
                "segment_gap_tolerance": self.params.segment_gap_tolerance,
            },
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "GroundTruth":
        params = GtParams(**doc["params"])
        return cls(
            loop_pairs=frozenset(tuple(p) for p in doc["loop_pairs"]),
            gt_segments=tuple(GtSegment(pairs=tuple(tuple(p) for p in seg)) for seg in doc["gt_segments"]),
            params=params,
        )


def wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    out = np.mod(np.asarray(theta) + np.pi, 2.0 * np.pi) - np.pi
    out = np.where(out == -np.pi, np.pi, out)
    return float(out) if np.ndim(theta) == 0 else out


def label_ground_truth(poses: np.ndarray, params: GtParams = GtParams()) -> GroundTruth:
    """Label loop pairs and GT segments from a planar pose trajectory.

    A pair (q, t) with q > t is a loop when horizontal separation is below
    the translation gate, heading difference below the rotation gate, and
    temporal separation at least `min_separation`.  Near-duplicate database
    matches of the same query are suppressed to the temporally nearest match
    per revisit cluster, and the survivors are grouped into connected
    near-diagonal runs.
    """
    poses = np.asarray(poses, dtype=np.float64)
    n = poses.shape[0]
    xy = poses[:, :2]
    theta = poses[:, 2]
    rot_gate = math.radians(params.rotation_gate_deg)

    pairs: list[Pair] = []
    for q in range(params.min_separation, n):
        ts = np.arange(0, q - params.min_separation + 1)
        d = np.linalg.norm(xy[ts] - xy[q], axis=1)
        dth = np.abs(wrap_angle(theta[ts] - theta[q]))
        ok = (d < params.translation_gate) & (dth < rot_gate)
        hit_ts = ts[ok]
        if hit_ts.size == 0:
            continue
        # Suppress near-duplicates: cluster this query's matches by db index
        # and keep the temporally nearest match within each cluster.
        clusters = _cluster_indices(hit_ts, params.near_duplicate_radius)
        for cluster in clusters:
            t_keep = int(cluster[np.argmin(q - cluster)])
            pairs.append((q, t_keep))

    segments = segments_from_pairs(pairs, params.segment_gap_tolerance)
    return GroundTruth(
        loop_pairs=frozenset(pairs),
        gt_segments=tuple(segments),
        params=params,
    )


def _cluster_indices(sorted_idx: np.ndarray, radius: int) -> list[np.ndarray]:
    breaks = np.where(np.diff(sorted_idx) > radius)[0] + 1
    return np.split(sorted_idx, breaks)


def segments_from_pairs(pairs: Iterable[Pair], gap_tolerance: int = 1) -> list[GtSegment]:
    """Group (q, t) pairs into connected near-diagonal runs.

    Two pairs are connected when both index offsets are within
    1 + gap_tolerance (Chebyshev adjacency on the pairwise grid).
    """
    pairs = sorted(set(pairs))
    if not pairs:
        return []
    reach = 1 + gap_tolerance
    parent = list(range(len(pairs)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    for i, (q, t) in enumerate(pairs):
        j = i + 1
        while j < len(pairs) and pairs[j][0] - q <= reach:
            if abs(pairs[j][1] - t) <= reach:
                union(i, j)
            j += 1

    groups: dict[int, list[Pair]] = {}
    for i, p in enumerate(pairs):
        groups.setdefault(find(i), []).append(p)
    return [GtSegment(pairs=tuple(sorted(g))) for _, g in sorted(groups.items())]


@dataclass(frozen=True)
class PairwiseResult:
    precision: Optional[float]
    recall: Optional[float]
    f1: Optional[float]
    tp: int
    fp: int
    fn: int
    gt_pairs: int = 0


def _pair_matches(pair: Pair, gt_pairs: frozenset, tol: int) -> bool:
    q, t = pair
    for dq in range(-tol, tol + 1):
        for dt in range(-tol, tol + 1):
            if (q + dq, t + dt) in gt_pairs:
                return True
    return False


def _matched_gt(pair: Pair, gt_pairs: frozenset, tol: int) -> list[Pair]:
    q, t = pair
    out = []
    for dq in range(-tol, tol + 1):
        for dt in range(-tol, tol + 1):
            cand = (q + dq, t + dt)
            if cand in gt_pairs:
                out.append(cand)
    return out


def _f1(p: Optional[float], r: Optional[float]) -> Optional[float]:
    if p is None or r is None:
        return None
    if p + r == 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


def pairwise_pr(predicted: Iterable[Pair], gt: GroundTruth, tol: int = 2) -> PairwiseResult:
    """Pair-wise precision/recall/F1 under a +/- tol frame match tolerance.

    Precision counts predicted pairs matching some GT pair; recall counts
    distinct GT pairs matched by some prediction (bounded by 1 even when
    several predictions hit the same GT pair).  Precision is reported as
    absent (None) when there are no predictions.
    """
    predicted = sorted(set(predicted))
    gt_pairs = gt.loop_pairs
    tp = 0
    matched_gt: set[Pair] = set()
    for p in predicted:
        hits = _matched_gt(p, gt_pairs, tol)
        if hits:
            tp += 1
            matched_gt.update(hits)
    fp = len(predicted) - tp
    fn = len(gt_pairs) - len(matched_gt)
    precision = tp / len(predicted) if predicted else None
    recall = len(matched_gt) / len(gt_pairs) if gt_pairs else None
    return PairwiseResult(precision=precision, recall=recall, f1=_f1(precision, recall),
                          tp=tp, fp=fp, fn=fn, gt_pairs=len(gt_pairs))


@dataclass(frozen=True)
class KhitResult:
    p_at_khit: Optional[float]
    r_at_khit: Optional[float]
    f1_at_khit: Optional[float]
    k: int
    k_hits: int
    predicted_segments: int
    gt_segments: int
    gt_segments_hit: int = 0


def longest_match_run(pred_pairs: Sequence[Pair], gt_seg: GtSegment, tol: int,
                      gap_tolerance: int) -> int:
    """L_run: longest gap-tolerant run of prediction steps matching gt_seg."""
    gt_set = frozenset(gt_seg.pairs)
    flags = [_pair_matches(p, gt_set, tol) for p in pred_pairs]
    return longest_hit_run(flags, gap_tolerance)


def _segment_pairs(seg) -> list[Pair]:
    if isinstance(seg, (GtSegment, LoopSegment)):
        return list(seg.pairs)
    return list(seg)


def khit_pr(predicted_segments: Sequence, gt: GroundTruth, k: int = 5,
            gap_tolerance: int = 1, tol: int = 2) -> KhitResult:
    """Segment-level K-hit precision and recall.

    A predicted segment is a K-hit when its longest coherent match run with
    some GT segment reaches K steps.  P@Khit is the K-hit fraction of
    predicted segments; R@Khit is the fraction of GT segments achieving a
    K-hit from some prediction.
    """
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    pred_pair_lists = [_segment_pairs(s) for s in predicted_segments]
    k_hits = 0
    gt_hit = [False] * len(gt.gt_segments)
    for pairs in pred_pair_lists:
        best = 0
        for gi, gseg in enumerate(gt.gt_segments):
            run = longest_match_run(pairs, gseg, tol, gap_tolerance)
            if run >= k:
                gt_hit[gi] = True
            best = max(best, run)
        if best >= k:
            k_hits += 1
    p = k_hits / len(pred_pair_lists) if pred_pair_lists else None
    r = sum(gt_hit) / len(gt_hit) if gt_hit else None
    return KhitResult(p_at_khit=p, r_at_khit=r, f1_at_khit=_f1(p, r), k=k,
                      k_hits=k_hits, predicted_segments=len(pred_pair_lists),
                      gt_segments=len(gt.gt_segments), gt_segments_hit=sum(gt_hit))


@dataclass(frozen=True)
class DecisionTierResult:
    asn_acc: Optional[float]
    asn_rej: Optional[float]
    delay_frames: Optional[float]


def decision_tier(verdicts: Sequence[SprtVerdict], gt: GroundTruth,
                  tol: int = 2) -> DecisionTierResult:
    """Average samples to decision and detection delay for true accepts.

    Delay is measured in query frames from the stream's first frame (the
    anchor query) to the decision frame, averaged over accepted pairs that
    are true loops under the match tolerance.  Fields with no contributing
    verdicts are reported absent rather than zero.
    """
    if not verdicts:
        raise ValueError("decision_tier needs at least one verdict")
    acc = [v.tau for v in verdicts if v.accepted]
    rej = [v.tau for v in verdicts if not v.accepted]
    delays = [
        float(v.tau - 1) for v in verdicts
        if v.accepted and _pair_matches((v.query, v.candidate), gt.loop_pairs, tol)
    ]
    return DecisionTierResult(
        asn_acc=float(np.mean(acc)) if acc else None,
        asn_rej=float(np.mean(rej)) if rej else None,
        delay_frames=float(np.mean(delays)) if delays else None,
    )


@dataclass(frozen=True)
class EvalReport:
    """Three-tier metrics for one (sequence, descriptor, policy) run."""

    pairwise: PairwiseResult
    khit: KhitResult
    decision: DecisionTierResult
    ate_rmse: Optional[float] = None
    rpe_rmse: Optional[float] = None

    def to_json_dict(self) -> dict:
        return {
            "pairwise": {
                "precision": self.pairwise.precision,
                "recall": self.pairwise.recall,
                "f1": self.pairwise.f1,
            },
            "khit": {
                "p_at_khit": self.khit.p_at_khit,
                "r_at_khit": self.khit.r_at_khit,
                "f1_at_khit": self.khit.f1_at_khit,
                "K": self.khit.k,
            },
            "decision_tier": {
                "asn_acc": self.decision.asn_acc,
                "asn_rej": self.decision.asn_rej,
                "delay_frames": self.decision.delay_frames,
            },
            "counts": {
                "tp": self.pairwise.tp,
                "fp": self.pairwise.fp,
                "fn": self.pairwise.fn,
                "predicted_segments": self.khit.predicted_segments,
                "gt_segments": self.khit.gt_segments,
                "k_hits": self.khit.k_hits,
                "gt_segments_hit": self.khit.gt_segments_hit,
                "gt_pairs": self.pairwise.gt_pairs,
            },
            "trajectory": {
                "ate_rmse": self.ate_rmse,
                "rpe_rmse": self.rpe_rmse,
            },
        }

    CSV_COLUMNS = ("p_at_khit", "r_at_khit", "f1_at_khit",
                   "precision", "recall", "f1", "ate_rmse", "rpe_rmse")

    def csv_values(self) -> list:
        return [
            self.khit.p_at_khit, self.khit.r_at_khit, self.khit.f1_at_khit,
            self.pairwise.precision, self.pairwise.recall, self.pairwise.f1,
            self.ate_rmse, self.rpe_rmse,
        ]
