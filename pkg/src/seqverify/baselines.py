"""Comparison verification policies under a common interface.

All policies consume the same retrieval output and, where applicable, the
same adaptive distance streams as the sequential verifier, so evaluations
are like-for-like.  Accept boundaries are inclusive at equality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .density import DensityPair, llr
from .sprt import ACCEPT, REJECT, LoopSegment, SprtConfig, SprtVerdict, verify
from .stream import DistanceStream

POLICY_KINDS = ("single", "single_geom", "single_llr", "n_of_m",
                "fixed_batch", "seq_sprt", "seq_sprt_geom")


def verify_single(x0: float, threshold: float) -> bool:
    """One-shot native-distance threshold: accept iff x0 <= threshold."""
    return x0 <= threshold


def verify_single_llr(x0: float, dp: DensityPair, threshold: float) -> bool:
    """One-shot evidence threshold: accept iff llr(x0) >= threshold."""
    return llr(dp, x0) >= threshold


def verify_n_of_m(stream: DistanceStream, dp: DensityPair, n: int, m: int,
                  step_threshold: float) -> bool:
    """Accept iff at least n of the first m per-step LLRs exceed the step
    threshold.  Streams shorter than m reject (padding-as-reject)."""
    if n > m:
        raise ValueError(f"need n <= m, got ({n}, {m})")
    if len(stream) < m:
        return False
    steps = llr(dp, stream.distances[:m])
    return int(np.sum(steps > step_threshold)) >= n


def verify_fixed_batch(stream: DistanceStream, dp: DensityPair, m: int,
                       mean_threshold: float) -> bool:
    """Accept iff the mean of the first m per-step LLRs reaches the
    threshold.  Streams shorter than m reject (padding-as-reject)."""
    if len(stream) < m:
        return False
    steps = llr(dp, stream.distances[:m])
    return float(np.mean(steps)) >= mean_threshold


@dataclass(frozen=True)
class GeomCheckParams:
    """Synthetic registration oracle settings.

    Registration succeeds (high fitness) within the true-pose gate; aliased
    pairs in geometrically identical cells pass with probability p_alias;
    everything else sits at the fitness floor.  Gaussian fitness noise of
    scale sigma_fit is always added.
    """

    gate_translation: float = 1.0    # meters
    gate_rotation_deg: float = 20.0
    sigma_fit: float = 0.05
    p_alias: float = 0.3


def geometric_check(q: int, t: int, world, fitness_threshold: float = 0.5,
                    params: GeomCheckParams = GeomCheckParams(),
                    salt: int = 0) -> bool:
    """Simulated registration fitness check for the pair (q, t).

    Deterministic given (world.seed, q, t, salt); vary `salt` to Monte Carlo
    the aliased-pass probability.
    """
    rng = np.random.default_rng([int(world.seed) & 0x7FFFFFFF, q, t, salt])
    pose_q, pose_t = world.gt_poses[q], world.gt_poses[t]
    trans_err = float(np.hypot(pose_q[0] - pose_t[0], pose_q[1] - pose_t[1]))
    rot_err = abs(float((pose_q[2] - pose_t[2] + math.pi) % (2 * math.pi) - math.pi))

    if trans_err <= params.gate_translation and rot_err <= math.radians(params.gate_rotation_deg):
        base = 1.0
    elif world.is_alias_pair(q, t):
        base = 1.0 if rng.uniform() < params.p_alias else 0.0
    else:
        base = 0.0
    fitness = base + params.sigma_fit * rng.standard_normal()
    return fitness > fitness_threshold


@dataclass(frozen=True)
class PolicyDecision:
    """Uniform outcome of any verification policy for one (q, t) pair."""

    accepted: bool
    tau: int
    reason: str
    score: float
    committed: Optional[LoopSegment] = None
    llr_history: tuple = ()

    def to_verdict(self, q: int, t: int) -> SprtVerdict:
        return SprtVerdict(
            decision=ACCEPT if self.accepted else REJECT,
            tau=self.tau, cumulative_llr=self.score,
            llr_history=self.llr_history, reason=self.reason,
            committed=self.committed, query=q, candidate=t,
        )


@dataclass(frozen=True)
class PolicyParams:
    """Threshold set for the baseline policies (unused fields ignored)."""

    score_threshold: float = 0.5       # single: native distance
    llr_threshold: float = 0.0         # single_llr
    n: int = 6                         # n_of_m
    m: int = 13                        # n_of_m / fixed_batch stream length
    step_threshold: float = 0.0        # n_of_m
    mean_threshold: float = 0.0        # fixed_batch
    fitness_threshold: float = 0.5     # geometric oracle
    geom: GeomCheckParams = GeomCheckParams()


def decide(kind: str, q: int, t: int, retrieval_distance: float,
           stream: Optional[DistanceStream], dp: DensityPair,
           sprt_cfg: SprtConfig, params: PolicyParams,
           world=None) -> PolicyDecision:
    """Evaluate one policy on one candidate pair.

    `stream` may be None for the single-frame policies; `world` is required
    only for the geometric-oracle variants.
    """
    if kind == "single":
        ok = verify_single(retrieval_distance, params.score_threshold)
        return PolicyDecision(ok, 1, "policy_threshold", -retrieval_distance)
    if kind == "single_geom":
        ok = verify_single(retrieval_distance, params.score_threshold)
        if ok:
            ok = geometric_check(q, t, world, params.fitness_threshold, params.geom)
        return PolicyDecision(ok, 1, "policy_threshold", -retrieval_distance)
    if kind == "single_llr":
        l0 = llr(dp, retrieval_distance)
        ok = l0 >= params.llr_threshold
        return PolicyDecision(ok, 1, "policy_threshold", l0, llr_history=(l0,))
    if kind == "n_of_m":
        ok = verify_n_of_m(stream, dp, params.n, params.m, params.step_threshold)
        hist = tuple(llr(dp, stream.distances[:params.m])) if len(stream) >= params.m else ()
        return PolicyDecision(ok, min(len(stream), params.m), "policy_threshold",
                              float(sum(hist)), llr_history=hist)
    if kind == "fixed_batch":
        ok = verify_fixed_batch(stream, dp, params.m, params.mean_threshold)
        hist = tuple(llr(dp, stream.distances[:params.m])) if len(stream) >= params.m else ()
        return PolicyDecision(ok, min(len(stream), params.m), "policy_threshold",
                              float(sum(hist)), llr_history=hist)
    if kind in ("seq_sprt", "seq_sprt_geom"):
        verdict = verify(stream, dp, sprt_cfg)
        accepted = verdict.accepted
        committed = verdict.committed
        reason = verdict.reason
        if accepted and kind == "seq_sprt_geom":
            if not geometric_check(q, t, world, params.fitness_threshold, params.geom):
                accepted, committed, reason = False, None, "geom_check_failed"
        return PolicyDecision(accepted, verdict.tau, reason, verdict.cumulative_llr,
                              committed=committed, llr_history=verdict.llr_history)
    raise ValueError(f"unknown policy kind {kind!r}")
