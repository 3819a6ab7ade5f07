"""End-to-end orchestration: config, stages, artifacts, sweeps.

A run executes: world load/generation -> density fit (or load) -> per-query
retrieval -> per-candidate stream construction -> policy verification ->
windowed conflict resolution -> pose-graph optimization -> three-tier
metrics -> report, verdict log, trajectory, graph, and figure artifacts.

All stages are deterministic given the config and seed; every artifact
embeds the config hash.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import figures
from .baselines import GeomCheckParams, PolicyParams, decide
from .conflict import WindowedResolver
from .density import DensityPair, fit_density_pair, llr
from .errors import ConfigError, EmptyStreamError
from .metrics import (
    DecisionTierResult,
    EvalReport,
    decision_tier,
    khit_pr,
    pairwise_pr,
    segments_from_pairs,
)
from .pgo import LoopNoise, ate_rpe, build_graph, optimize, save_g2o
from .sprt import LoopSegment, SprtConfig
from .stream import DEFAULT_DELTA_MAX, DEFAULT_NU_SET, DescriptorTable, build_stream, retrieve
from .synth import SyntheticWorld, WorldConfig, generate_scan_descriptors, generate_world, \
    sample_distance_datasets

SCHEMA_VERSION = 1

POLICIES = ("single", "single_geom", "single_llr", "n_of_m",
            "fixed_batch", "seq_sprt", "seq_sprt_geom")
SEGMENT_POLICIES = ("seq_sprt", "seq_sprt_geom")


@dataclass(frozen=True)
class RetrievalConfig:
    budget: int = 5
    exclusion: int = 30
    exclusivity: int = 5
    ratio: Optional[float] = 1.5


@dataclass(frozen=True)
class StreamConfig:
    nu_set: tuple = DEFAULT_NU_SET
    delta_max: int = DEFAULT_DELTA_MAX
    nu_mode: str = "per_step"


@dataclass(frozen=True)
class DensityConfig:
    grid_size: int = 512
    floor: float = 1e-9
    n_per_class: int = 200
    include_alias: bool = True
    alias_fraction: float = 0.5
    scope: str = "pooled"  # "per_sequence" fits on each run's own world


@dataclass(frozen=True)
class MetricsConfig:
    k: int = 5
    gap_tolerance: int = 1
    pair_tolerance: int = 2
    average: str = "macro"


@dataclass(frozen=True)
class PgoConfig:
    edge_stride: int = 3
    loop_sigma_xy: float = 0.02
    loop_sigma_theta_deg: float = 0.5
    odom_info: tuple = (50.0, 50.0, 100.0)
    loop_info: tuple = (20.0, 20.0, 40.0)
    max_iters: int = 50
    tol: float = 1e-9
    rpe_delta: int = 10
    huber_delta: Optional[float] = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    world: WorldConfig = WorldConfig()
    world_dir: Optional[str] = None
    descriptor: str = "latent"          # or "scan"
    metric: str = "euclidean"
    retrieval: RetrievalConfig = RetrievalConfig()
    stream: StreamConfig = StreamConfig()
    policy: str = "seq_sprt"
    policy_params: PolicyParams = PolicyParams()
    sprt: SprtConfig = SprtConfig()
    density: DensityConfig = DensityConfig()
    densities_file: Optional[str] = None
    metrics: MetricsConfig = MetricsConfig()
    pgo: PgoConfig = PgoConfig()
    conflict_window_cap: int = 32
    output_dir: Optional[str] = None
    workers: int = 1
    render_figures: bool = True

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; pick one of {POLICIES}")
        if self.descriptor not in ("latent", "scan"):
            raise ConfigError(f"descriptor must be 'latent' or 'scan', got {self.descriptor!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.density.scope not in ("pooled", "per_sequence"):
            raise ConfigError("density scope must be 'pooled' or 'per_sequence'")

    def to_json_dict(self) -> dict:
        doc = _dataclass_to_dict(self)
        doc["schema_version"] = SCHEMA_VERSION
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        version = doc.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION}")
        return _dataclass_from_dict(cls, doc)

    def config_hash(self) -> str:
        doc = self.to_json_dict()
        # Only result-affecting fields participate in the hash.
        for key in ("output_dir", "render_figures", "workers"):
            doc.pop(key, None)
        blob = json.dumps(doc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _dataclass_to_dict(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        out = {}
        for f in dataclasses.fields(obj):
            out[f.name] = _dataclass_to_dict(getattr(obj, f.name))
        return out
    if isinstance(obj, (list, tuple)):
        return [_dataclass_to_dict(v) for v in obj]
    if isinstance(obj, dict):
        return {str(k): _dataclass_to_dict(v) for k, v in obj.items()}
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


_NESTED_FIELDS = {
    "world": WorldConfig.from_json_dict,
    "retrieval": lambda d: RetrievalConfig(**d),
    "stream": lambda d: StreamConfig(nu_set=tuple(d.pop("nu_set", DEFAULT_NU_SET)), **d),
    "policy_params": lambda d: PolicyParams(
        geom=GeomCheckParams(**d.pop("geom")) if "geom" in d else GeomCheckParams(), **d),
    "sprt": lambda d: SprtConfig(**d),
    "density": lambda d: DensityConfig(**d),
    "metrics": lambda d: MetricsConfig(**d),
    "pgo": lambda d: PgoConfig(
        odom_info=tuple(d.pop("odom_info", (50.0, 50.0, 100.0))),
        loop_info=tuple(d.pop("loop_info", (20.0, 20.0, 40.0))), **d),
}


def _dataclass_from_dict(cls, doc: dict) -> "RunConfig":
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in doc.items():
        if key in _NESTED_FIELDS and isinstance(value, dict):
            try:
                kwargs[key] = _NESTED_FIELDS[key](dict(value))
            except TypeError as exc:
                raise ConfigError(f"invalid '{key}' config section: {exc}") from exc
        else:
            kwargs[key] = value
    return cls(**kwargs)


def set_config_value(cfg: RunConfig, path: str, value) -> RunConfig:
    """Return a copy of cfg with the dotted `path` field replaced."""
    doc = cfg.to_json_dict()
    node = doc
    parts = path.split(".")
    for part in parts[:-1]:
        if part not in node:
            raise ConfigError(f"unknown config path {path!r}")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config path {path!r}")
    node[parts[-1]] = value
    return RunConfig.from_json_dict(doc)


# -- front end shared by every policy --------------------------------------


@dataclass
class FrontEnd:
    """Retrieval output and candidate streams, identical across policies."""

    world: SyntheticWorld
    table: DescriptorTable
    dp: DensityPair
    candidates: list          # (q, t, retrieval distance), query-ordered
    streams: dict             # (q, t) -> DistanceStream

    def stream_hash(self) -> str:
        h = hashlib.sha256()
        for q, t, d in self.candidates:
            h.update(f"{q},{t},{d!r};".encode())
            s = self.streams.get((q, t))
            if s is not None:
                for o in s.observations:
                    h.update(f"{o.i},{o.k},{o.x!r};".encode())
        return h.hexdigest()[:16]


def load_world(cfg: RunConfig) -> SyntheticWorld:
    if cfg.world_dir:
        return SyntheticWorld.load(cfg.world_dir, metric=cfg.metric)
    world_cfg = replace(cfg.world, seed=cfg.seed)
    return generate_world(world_cfg)


def descriptor_table_for(cfg: RunConfig, world: SyntheticWorld) -> DescriptorTable:
    if cfg.descriptor == "scan":
        table = generate_scan_descriptors(world)
        return DescriptorTable(table.descriptors, metric=cfg.metric)
    return DescriptorTable(world.descriptor_table.descriptors, metric=cfg.metric)


def fit_densities(cfg: RunConfig, world: SyntheticWorld,
                  table: Optional[DescriptorTable] = None) -> DensityPair:
    if cfg.densities_file:
        return DensityPair.load(cfg.densities_file)
    table = table if table is not None else descriptor_table_for(cfg, world)
    samples = sample_distance_datasets(
        world, cfg.density.n_per_class, seed=cfg.seed,
        include_alias=cfg.density.include_alias,
        alias_fraction=cfg.density.alias_fraction,
    )
    if table is not world.descriptor_table:
        # Re-measure the sampled pairs under the active front-end.
        samples = _resample_with_table(world, samples, table, cfg)
    return fit_density_pair(samples, grid_size=cfg.density.grid_size,
                            floor=cfg.density.floor)


def _resample_with_table(world, samples, table, cfg):
    # sample_distance_datasets measures on the world's native table; for an
    # alternate front-end, redraw the same pair population on `table`.
    from .density import H0, H1, DistanceSample

    rng = np.random.default_rng(cfg.seed)
    loops = sorted(world.labels.loop_pairs)
    n = cfg.density.n_per_class
    picked = rng.choice(len(loops), size=min(n, len(loops)), replace=False)
    out = [DistanceSample(table.distance(*loops[int(i)]), H1) for i in sorted(picked)]
    aliases = sorted(world.alias_pairs)
    n_alias = min(int(round(cfg.density.alias_fraction * n)), n) if aliases else 0
    if n_alias:
        idx = rng.choice(len(aliases), size=n_alias, replace=n_alias > len(aliases))
        out += [DistanceSample(table.distance(*aliases[int(i)]), H0) for i in sorted(idx)]
    min_sep = world.labels.params.min_separation
    drawn = n_alias
    while drawn < n:
        u = int(rng.integers(min_sep, world.n_keyframes))
        v = int(rng.integers(0, u - min_sep + 1))
        if (u, v) in world.labels.loop_pairs:
            continue
        out.append(DistanceSample(table.distance(u, v), H0))
        drawn += 1
    return out


def build_front_end(cfg: RunConfig, world: SyntheticWorld,
                    table: Optional[DescriptorTable] = None,
                    dp: Optional[DensityPair] = None) -> FrontEnd:
    table = table if table is not None else descriptor_table_for(cfg, world)
    dp = dp if dp is not None else fit_densities(cfg, world, table)
    r = cfg.retrieval
    candidates = []
    for q in range(world.n_keyframes):
        cs = retrieve(table, q, r.budget, r.exclusion, r.exclusivity, ratio=r.ratio)
        for t, d in cs.candidates:
            if t < q:  # verify queries against the earlier database only
                candidates.append((q, t, d))

    def make_stream(item):
        q, t, _ = item
        try:
            return build_stream(table, dp, q, t, nu_set=cfg.stream.nu_set,
                                delta_max=cfg.stream.delta_max,
                                n_max=cfg.sprt.n_max, nu_mode=cfg.stream.nu_mode)
        except EmptyStreamError:
            return None

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            built = list(pool.map(make_stream, candidates))
    else:
        built = [make_stream(it) for it in candidates]
    streams = {(q, t): s for (q, t, _), s in zip(candidates, built) if s is not None}
    return FrontEnd(world=world, table=table, dp=dp,
                    candidates=candidates, streams=streams)


# -- policy evaluation ------------------------------------------------------


@dataclass
class PolicyOutcome:
    verdicts: list            # SprtVerdict per candidate pair
    accepted_pairs: list      # anchor (q, t) accepts
    segments: list            # resolved LoopSegments (segment policies)
    predicted_segments: list  # segments used for K-hit scoring
    cross_window_overlaps: int = 0


def run_policy(cfg: RunConfig, fe: FrontEnd) -> PolicyOutcome:
    """Evaluate the configured policy over the shared front end."""
    policy = cfg.policy
    params = cfg.policy_params
    verdicts, accepted_pairs = [], []
    resolver = WindowedResolver(flush_gap=cfg.sprt.n_max, cap=cfg.conflict_window_cap)

    live = [(q, t, dist) for q, t, dist in fe.candidates if (q, t) in fe.streams]

    def decide_one(item):
        q, t, dist = item
        return decide(policy, q, t, dist, fe.streams[(q, t)], fe.dp, cfg.sprt,
                      params, world=fe.world)

    if cfg.workers > 1:
        # Per-candidate decisions are pure; map preserves candidate order, so
        # the sequential resolution below stays deterministic.
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            decisions = list(pool.map(decide_one, live))
    else:
        decisions = [decide_one(item) for item in live]

    for (q, t, dist), d in zip(live, decisions):
        verdicts.append(d.to_verdict(q, t))
        if d.accepted:
            accepted_pairs.append((q, t))
            if policy in SEGMENT_POLICIES and d.committed is not None:
                resolver.add(d.committed)

    if policy in SEGMENT_POLICIES:
        segments = resolver.finish()
        predicted_segments = segments
    else:
        segments = []
        predicted_segments = segments_from_pairs(
            accepted_pairs, gap_tolerance=cfg.metrics.gap_tolerance)
    return PolicyOutcome(
        verdicts=verdicts, accepted_pairs=accepted_pairs, segments=segments,
        predicted_segments=predicted_segments,
        cross_window_overlaps=len(resolver.cross_window_overlaps),
    )


def evaluate_outcome(cfg: RunConfig, fe: FrontEnd, outcome: PolicyOutcome):
    """Three metric tiers plus post-PGO trajectory errors."""
    world = fe.world
    m = cfg.metrics
    pw = pairwise_pr(outcome.accepted_pairs, world.labels, tol=m.pair_tolerance)
    kh = khit_pr(outcome.predicted_segments, world.labels, k=m.k,
                 gap_tolerance=m.gap_tolerance, tol=m.pair_tolerance)
    dt = decision_tier(outcome.verdicts, world.labels, tol=m.pair_tolerance) \
        if outcome.verdicts else DecisionTierResult(None, None, None)

    if cfg.policy in SEGMENT_POLICIES:
        graph_segments = outcome.segments
    else:
        graph_segments = [
            LoopSegment(query_span=(q, q), db_span=(t, t), llr_sum=0.0, length=1,
                        score=0.0, pairs=((q, t),), query=q, candidate=t)
            for q, t in outcome.accepted_pairs
        ]
    graph = build_graph(
        world, graph_segments,
        loop_noise=LoopNoise(cfg.pgo.loop_sigma_xy, cfg.pgo.loop_sigma_theta_deg),
        edge_stride=cfg.pgo.edge_stride,
        odom_info=cfg.pgo.odom_info, loop_info=cfg.pgo.loop_info,
        rng=np.random.default_rng(cfg.seed),
    )
    result = optimize(graph, max_iters=cfg.pgo.max_iters, tol=cfg.pgo.tol,
                      huber_delta=cfg.pgo.huber_delta)
    err = ate_rpe(result.poses, world.gt_poses, rpe_delta=cfg.pgo.rpe_delta)
    report = EvalReport(pairwise=pw, khit=kh, decision=dt,
                        ate_rmse=err.ate_rmse, rpe_rmse=err.rpe_rmse)
    return report, graph, result


@dataclass
class RunResult:
    report: EvalReport
    report_doc: dict
    outcome: PolicyOutcome
    front_end: FrontEnd
    optimized_poses: np.ndarray
    output_dir: Optional[Path]


def run_experiment(cfg: RunConfig) -> RunResult:
    """Execute all stages and write artifacts when an output dir is set."""
    out_dir = Path(cfg.output_dir) if cfg.output_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    try:
        world = load_world(cfg)
        fe = build_front_end(cfg, world)
        outcome = run_policy(cfg, fe)
        report, graph, opt = evaluate_outcome(cfg, fe, outcome)
    except Exception:
        if out_dir:
            (out_dir / "report.json").write_text(json.dumps(
                {"status": "incomplete", "config_hash": cfg.config_hash()},
                sort_keys=True, indent=1))
        raise

    doc = report.to_json_dict()
    doc["status"] = "complete"
    doc["policy"] = cfg.policy
    doc["descriptor"] = cfg.descriptor
    doc["seed"] = cfg.seed
    doc["config_hash"] = cfg.config_hash()
    doc["stream_hash"] = fe.stream_hash()
    doc["trajectory"]["ate_odom"] = ate_rpe(world.odom_poses, world.gt_poses,
                                            rpe_delta=cfg.pgo.rpe_delta).ate_rmse
    doc["counts"]["candidates"] = len(fe.candidates)
    doc["counts"]["accepted_pairs"] = len(outcome.accepted_pairs)
    doc["counts"]["cross_window_overlaps"] = outcome.cross_window_overlaps

    if out_dir:
        _write_artifacts(cfg, out_dir, doc, world, fe, outcome, graph, opt)
    return RunResult(report=report, report_doc=doc, outcome=outcome, front_end=fe,
                     optimized_poses=opt.poses, output_dir=out_dir)


def _write_artifacts(cfg, out_dir, doc, world, fe, outcome, graph, opt):
    # Every artifact embeds the config hash and seed: JSON artifacts as
    # fields, JSON-lines as a leading meta record, plain-text matrices as a
    # leading comment line.
    meta = {"config_hash": cfg.config_hash(), "seed": cfg.seed}
    stamp = f"# config_hash={meta['config_hash']} seed={cfg.seed}\n"

    (out_dir / "report.json").write_text(json.dumps(doc, sort_keys=True, indent=1))
    write_report_csv(out_dir / "report.csv",
                     [(f"seed{cfg.seed}", cfg.descriptor, cfg.policy, doc)],
                     stamp=stamp)
    with (out_dir / "verdicts.jsonl").open("w") as fh:
        fh.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        for v in outcome.verdicts:
            fh.write(json.dumps(v.to_json_dict(), sort_keys=True) + "\n")
        for seg in outcome.segments:
            rec = seg.to_json_dict()
            rec["resolved"] = True
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    header = "keyframe,x,y,theta"
    rows = np.column_stack([np.arange(world.n_keyframes), opt.poses])
    with (out_dir / "trajectory_optimized.csv").open("w") as fh:
        fh.write(stamp)
        np.savetxt(fh, rows, delimiter=",", header=header, comments="",
                   fmt=["%d"] + ["%.17g"] * 3)
    save_g2o(graph, out_dir / "graph.g2o", comment=stamp.strip("\n# "))
    dens = fe.dp.to_json_dict()
    dens.update(meta)
    (out_dir / "densities.json").write_text(json.dumps(dens))
    with (out_dir / "segments.json").open("w") as fh:
        json.dump({"meta": meta,
                   "segments": [s.to_json_dict() for s in outcome.segments]},
                  fh, sort_keys=True)
    if cfg.render_figures:
        fig_dir = out_dir / "figures"
        figures.render_run_figures(fig_dir, world, fe, outcome, opt.poses)


def write_report_csv(path: Path, rows: Sequence[tuple], stamp: str = "") -> None:
    """One CSV row per (sequence, descriptor, policy) with the standard
    metric column layout."""
    with Path(path).open("w", newline="") as fh:
        if stamp:
            fh.write(stamp)
        w = csv.writer(fh)
        w.writerow(["sequence", "descriptor", "policy",
                    "p_at_khit", "r_at_khit", "f1_at_khit",
                    "precision", "recall", "f1", "ate_rmse", "rpe_rmse"])
        for sequence, descriptor, policy, doc in rows:
            w.writerow([
                sequence, descriptor, policy,
                _fmt(doc["khit"]["p_at_khit"]), _fmt(doc["khit"]["r_at_khit"]),
                _fmt(doc["khit"]["f1_at_khit"]), _fmt(doc["pairwise"]["precision"]),
                _fmt(doc["pairwise"]["recall"]), _fmt(doc["pairwise"]["f1"]),
                _fmt(doc["trajectory"]["ate_rmse"]), _fmt(doc["trajectory"]["rpe_rmse"]),
            ])


def _fmt(value) -> str:
    return "" if value is None else f"{value:.6f}"


def sweep(cfg_template: RunConfig, axis: str, values: Sequence) -> list[tuple]:
    """One run per value of the dotted config `axis`, shared seed.

    Returns a list of (value, report_doc) in input order.
    """
    out = []
    for value in values:
        cfg = set_config_value(cfg_template, axis, value)
        cfg = replace(cfg, output_dir=None, render_figures=False)
        result = run_experiment(cfg)
        out.append((value, result.report_doc))
    return out


# -- multi-seed policy comparison ------------------------------------------


def tune_baseline(kind: str, cfg: RunConfig, fe: FrontEnd) -> PolicyParams:
    """Grid-search the policy threshold on a held-out front end, maximizing
    segment-level F1@Khit.  Deterministic given the front end."""
    params = cfg.policy_params
    if kind in ("seq_sprt", "seq_sprt_geom"):
        return params

    dists = np.array([d for _, _, d in fe.candidates])
    l0 = llr(fe.dp, dists)

    def score(policy_kind, candidate_params):
        trial = replace(cfg, policy=policy_kind, policy_params=candidate_params)
        outcome = run_policy(trial, fe)
        kh = khit_pr(outcome.predicted_segments, fe.world.labels, k=cfg.metrics.k,
                     gap_tolerance=cfg.metrics.gap_tolerance,
                     tol=cfg.metrics.pair_tolerance)
        return kh.f1_at_khit if kh.f1_at_khit is not None else -1.0

    best, best_score = params, -2.0
    if kind in ("single", "single_geom"):
        grid = np.quantile(dists, np.linspace(0.02, 0.7, 15))
        for thr in grid:
            cand = replace(params, score_threshold=float(thr))
            s = score(kind, cand)
            if s > best_score:
                best, best_score = cand, s
    elif kind == "single_llr":
        grid = np.quantile(l0, np.linspace(0.3, 0.98, 15))
        for thr in grid:
            cand = replace(params, llr_threshold=float(thr))
            s = score(kind, cand)
            if s > best_score:
                best, best_score = cand, s
    elif kind == "n_of_m":
        for n in (3, 4, 5, 6, 7, 8, 9, 10):
            cand = replace(params, n=n, m=cfg.sprt.n_max)
            s = score(kind, cand)
            if s > best_score:
                best, best_score = cand, s
    elif kind == "fixed_batch":
        for thr in np.linspace(-1.0, 1.5, 11):
            cand = replace(params, m=cfg.sprt.n_max, mean_threshold=float(thr))
            s = score(kind, cand)
            if s > best_score:
                best, best_score = cand, s
    else:
        raise ConfigError(f"unknown policy kind {kind!r}")
    return best


def compare_policies(cfg: RunConfig, policies: Sequence[str], seeds: Sequence[int],
                     tune_seed: Optional[int] = None) -> dict:
    """Run every policy on every seed over a shared front end per seed.

    Baseline thresholds are tuned on a held-out world (`tune_seed`, the
    sequence before the evaluation seeds by default) maximizing F1@Khit.
    Returns {policy: {"per_seed": [report_doc...], "macro": averaged dict}}.
    """
    tune_seed = seeds[0] - 1 if tune_seed is None else tune_seed
    tune_cfg = replace(cfg, seed=tune_seed, output_dir=None, render_figures=False)
    tune_fe = build_front_end(tune_cfg, load_world(tune_cfg))
    tuned = {kind: tune_baseline(kind, tune_cfg, tune_fe) for kind in policies}
    # Pooled scope: densities learned once, on the held-out sequence.
    shared_dp = tune_fe.dp if cfg.density.scope == "pooled" else None

    table: dict = {kind: {"per_seed": []} for kind in policies}
    for seed in seeds:
        seed_cfg = replace(cfg, seed=seed, output_dir=None, render_figures=False)
        fe = build_front_end(seed_cfg, load_world(seed_cfg), dp=shared_dp)
        for kind in policies:
            run_cfg = replace(seed_cfg, policy=kind, policy_params=tuned[kind])
            outcome = run_policy(run_cfg, fe)
            report, _, _ = evaluate_outcome(run_cfg, fe, outcome)
            doc = report.to_json_dict()
            doc["seed"] = seed
            table[kind]["per_seed"].append(doc)
    for kind in policies:
        docs = table[kind]["per_seed"]
        table[kind]["macro"] = aggregate_reports(docs, cfg.metrics.average)
        table[kind]["params"] = _dataclass_to_dict(tuned[kind])
    return table


def macro_average(docs: Sequence[dict]) -> dict:
    """Field-wise mean over report documents, skipping absent values."""
    def collect(path):
        vals = []
        for d in docs:
            node = d
            for p in path:
                node = node[p]
            if node is not None:
                vals.append(node)
        return float(np.mean(vals)) if vals else None

    return {
        "pairwise": {k: collect(("pairwise", k)) for k in ("precision", "recall", "f1")},
        "khit": {k: collect(("khit", k)) for k in ("p_at_khit", "r_at_khit", "f1_at_khit")},
        "decision_tier": {k: collect(("decision_tier", k))
                          for k in ("asn_acc", "asn_rej", "delay_frames")},
        "trajectory": {k: collect(("trajectory", k)) for k in ("ate_rmse", "rpe_rmse")},
    }


def micro_average(docs: Sequence[dict]) -> dict:
    """Pooled-count aggregation of the pairwise and K-hit tiers.

    Decision-tier and trajectory metrics have no meaningful pooled counts
    and keep their per-sequence means.
    """
    def total(key):
        return sum(d["counts"][key] for d in docs)

    tp, fp, fn = total("tp"), total("fp"), total("fn")
    n_pred = tp + fp
    n_gt_pairs = total("gt_pairs")
    precision = tp / n_pred if n_pred else None
    recall = (n_gt_pairs - fn) / n_gt_pairs if n_gt_pairs else None
    k_hits, n_segs = total("k_hits"), total("predicted_segments")
    gt_hit, gt_segs = total("gt_segments_hit"), total("gt_segments")
    p_k = k_hits / n_segs if n_segs else None
    r_k = gt_hit / gt_segs if gt_segs else None

    def f1(p, r):
        if p is None or r is None:
            return None
        return 0.0 if p + r == 0 else 2 * p * r / (p + r)

    out = macro_average(docs)
    out["pairwise"] = {"precision": precision, "recall": recall, "f1": f1(precision, recall)}
    out["khit"] = {"p_at_khit": p_k, "r_at_khit": r_k, "f1_at_khit": f1(p_k, r_k)}
    return out


def aggregate_reports(docs: Sequence[dict], mode: str = "macro") -> dict:
    if mode == "macro":
        return macro_average(docs)
    if mode == "micro":
        return micro_average(docs)
    raise ConfigError(f"unknown averaging mode {mode!r}")
