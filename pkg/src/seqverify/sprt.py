"""Truncated sequential probability ratio test for loop verification.

Evidence from a distance stream is accumulated as a cumulative log-likelihood
ratio S_n and compared against Wald thresholds A = ln((1-beta)/alpha) and
B = ln(beta/(1-alpha)).  Rejection is allowed from the first sample;
acceptance is deferred until a minimum horizon, and an undecided stream at
the truncation horizon is conservatively rejected.  Upon acceptance, the
maximal-sum contiguous sub-segment of the LLR history is committed, subject
to a minimum run of positive-evidence steps (with a small gap tolerance).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .density import DensityPair, llr
from .errors import DomainError, EmptyHistoryError, EmptyStreamError

ACCEPT = "ACCEPT"
REJECT = "REJECT"

REASON_ACCEPT_BOUNDARY = "accept_boundary"
REASON_REJECT_BOUNDARY = "reject_boundary"
REASON_TRUNCATION = "truncation"
REASON_RUN_GUARD = "run_guard_failed"


def thresholds(alpha: float, beta: float) -> tuple[float, float]:
    """Wald decision thresholds (A, B) for target error rates (alpha, beta).

    A = ln((1-beta)/alpha) > 0 > B = ln(beta/(1-alpha)).
    """
    if not (0.0 < alpha < 0.5):
        raise DomainError(f"alpha must be in (0, 0.5), got {alpha}")
    if not (0.0 < beta < 0.5):
        raise DomainError(f"beta must be in (0, 0.5), got {beta}")
    return math.log((1.0 - beta) / alpha), math.log(beta / (1.0 - alpha))


@dataclass(frozen=True)
class SprtConfig:
    """Hyperparameters of the truncated test and the segment commit stage.

    accept_override / reject_override replace the derived Wald thresholds
    when set (used e.g. to collapse the test to a one-step LLR threshold).
    """

    alpha: float = 1e-5
    beta: float = 0.009
    n_min: int = 6
    n_max: int = 13
    min_run: int = 3
    gap_tolerance: int = 1
    llr_step_threshold: float = 0.0
    length_bonus: float = 0.25
    accept_override: Optional[float] = None
    reject_override: Optional[float] = None

    def __post_init__(self):
        thresholds(self.alpha, self.beta)  # validates the (0, 0.5) domains
        if not (1 <= self.n_min <= self.n_max):
            raise DomainError(f"need 1 <= n_min <= n_max, got ({self.n_min}, {self.n_max})")
        if self.min_run < 1 or self.gap_tolerance < 0:
            raise DomainError("min_run must be >= 1 and gap_tolerance >= 0")

    @property
    def boundaries(self) -> tuple[float, float]:
        a, b = thresholds(self.alpha, self.beta)
        if self.accept_override is not None:
            a = self.accept_override
        if self.reject_override is not None:
            b = self.reject_override
        return a, b


@dataclass(frozen=True)
class LoopSegment:
    """A committed near-diagonal run of (query, database) pairs."""

    query_span: tuple[int, int]
    db_span: tuple[int, int]
    llr_sum: float
    length: int
    score: float
    pairs: tuple = ()      # per-step (query idx, database idx) pairs
    query: int = -1        # anchor query of the originating stream
    candidate: int = -1    # anchor candidate of the originating stream

    def to_json_dict(self) -> dict:
        return {
            "query_span": list(self.query_span),
            "db_span": list(self.db_span),
            "llr_sum": self.llr_sum,
            "length": self.length,
            "score": self.score,
            "pairs": [list(p) for p in self.pairs],
            "query": self.query,
            "candidate": self.candidate,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "LoopSegment":
        return cls(
            query_span=tuple(doc["query_span"]),
            db_span=tuple(doc["db_span"]),
            llr_sum=float(doc["llr_sum"]),
            length=int(doc["length"]),
            score=float(doc["score"]),
            pairs=tuple(tuple(p) for p in doc.get("pairs", [])),
            query=int(doc.get("query", -1)),
            candidate=int(doc.get("candidate", -1)),
        )


@dataclass(frozen=True)
class SprtVerdict:
    """Terminal decision for one (query, candidate) pair."""

    decision: str
    tau: int
    cumulative_llr: float
    llr_history: tuple
    reason: str
    committed: Optional[LoopSegment] = None
    query: int = -1
    candidate: int = -1

    @property
    def accepted(self) -> bool:
        return self.decision == ACCEPT

    def to_json_dict(self) -> dict:
        doc = {
            "query": self.query,
            "candidate": self.candidate,
            "decision": self.decision,
            "tau": self.tau,
            "reason": self.reason,
            "S": self.cumulative_llr,
            "llr_history": list(self.llr_history),
            "committed": self.committed.to_json_dict() if self.committed else None,
        }
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SprtVerdict":
        committed = doc.get("committed")
        return cls(
            decision=doc["decision"],
            tau=int(doc["tau"]),
            cumulative_llr=float(doc["S"]),
            llr_history=tuple(doc.get("llr_history", ())),
            reason=doc["reason"],
            committed=LoopSegment.from_json_dict(committed) if committed else None,
            query=int(doc["query"]),
            candidate=int(doc["candidate"]),
        )


def max_subsegment(history: Sequence[float]) -> tuple[int, int, float]:
    """Contiguous sub-segment (j, k, sum) of maximal sum, by Kadane scan.

    Ties break toward the smallest j, then the smallest k; an all-negative
    history returns its single largest entry.
    """
    n = len(history)
    if n == 0:
        raise EmptyHistoryError("max_subsegment of empty history")
    best_j = best_k = 0
    best = cur = float(history[0])
    cur_start = 0
    for i in range(1, n):
        h = float(history[i])
        if cur < 0.0:
            cur = h
            cur_start = i
        else:
            cur += h
        if cur > best:
            best, best_j, best_k = cur, cur_start, i
    return best_j, best_k, best


def longest_hit_run(hits: Sequence[bool], gap_tolerance: int) -> int:
    """Longest run of hit steps, allowing internal gaps of at most
    `gap_tolerance` consecutive misses.  The run length counts hit steps
    only; gaps neither extend nor break it while within tolerance.
    """
    best = cur = 0
    gap = None  # misses since the last hit; None before any hit
    for h in hits:
        if h:
            if gap is not None and gap > gap_tolerance:
                cur = 0
            cur += 1
            gap = 0
            if cur > best:
                best = cur
        elif gap is not None:
            gap += 1
    return best


def verify(stream_source, dp: DensityPair, cfg: SprtConfig) -> SprtVerdict:
    """Run the truncated SPRT on one observation stream.

    `stream_source` must expose `query`, `candidate`, and an iterable
    `observations` of (i, k, x) triples (a DistanceStream, or any incremental
    source with the same surface).  Observations are consumed one at a time,
    at most cfg.n_max of them.
    """
    a_thresh, b_thresh = cfg.boundaries
    q, t = stream_source.query, stream_source.candidate
    history: list[float] = []
    ks: list[int] = []
    s = 0.0

    for obs in stream_source.observations:
        i, k, x = obs
        step = llr(dp, x)
        s += step
        history.append(step)
        ks.append(k)
        consumed = len(history)

        if s <= b_thresh:
            return SprtVerdict(
                decision=REJECT, tau=consumed, cumulative_llr=s,
                llr_history=tuple(history), reason=REASON_REJECT_BOUNDARY,
                query=q, candidate=t,
            )
        if consumed >= cfg.n_min and s >= a_thresh:
            j, kk, smax = max_subsegment(history)
            hits = [h > cfg.llr_step_threshold for h in history[j:kk + 1]]
            if longest_hit_run(hits, cfg.gap_tolerance) >= cfg.min_run:
                seg = _commit(q, t, ks, history, j, kk, smax, cfg.length_bonus)
                return SprtVerdict(
                    decision=ACCEPT, tau=consumed, cumulative_llr=s,
                    llr_history=tuple(history), reason=REASON_ACCEPT_BOUNDARY,
                    committed=seg, query=q, candidate=t,
                )
            return SprtVerdict(
                decision=REJECT, tau=consumed, cumulative_llr=s,
                llr_history=tuple(history), reason=REASON_RUN_GUARD,
                query=q, candidate=t,
            )
        if consumed >= cfg.n_max:
            break

    if not history:
        raise EmptyStreamError(f"stream for (q={q}, t={t}) yielded no observation")
    return SprtVerdict(
        decision=REJECT, tau=len(history), cumulative_llr=s,
        llr_history=tuple(history), reason=REASON_TRUNCATION,
        query=q, candidate=t,
    )


def _commit(q, t, ks, history, j, k, smax, length_bonus) -> LoopSegment:
    length = k - j + 1
    db_lo, db_hi = t + ks[j], t + ks[k]
    return LoopSegment(
        query_span=(q + j, q + k),
        db_span=(min(db_lo, db_hi), max(db_lo, db_hi)),
        llr_sum=smax,
        length=length,
        score=smax + length_bonus * length,
        pairs=tuple((q + m, t + ks[m]) for m in range(j, k + 1)),
        query=q,
        candidate=t,
    )
