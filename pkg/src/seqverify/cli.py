"""Command-line interface.

Subcommands mirror the pipeline stages: `generate` a synthetic world,
`fit` distance densities, `verify` candidates under a policy, `pgo` the
accepted segments, `evaluate` a verdict log, `run` all stages, and `sweep`
a config axis.  Flags address RunConfig fields by dotted path via --set.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .density import fit_density_pair
from .metrics import decision_tier, khit_pr, pairwise_pr, segments_from_pairs
from .pgo import LoopNoise, ate_rpe, build_graph, optimize, save_g2o
from .pipeline import (
    POLICIES,
    RunConfig,
    build_front_end,
    load_world,
    run_experiment,
    run_policy,
    set_config_value,
    sweep,
    write_report_csv,
)
from .sprt import ACCEPT, LoopSegment, SprtVerdict
from .synth import SyntheticWorld, generate_world, sample_distance_datasets


def _parse_set_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = RunConfig.from_json_dict(json.loads(Path(args.config).read_text()))
    else:
        cfg = RunConfig()
    for item in getattr(args, "set", None) or []:
        path, _, raw = item.partition("=")
        if not _:
            raise SystemExit(f"--set expects path=value, got {item!r}")
        cfg = set_config_value(cfg, path, _parse_set_value(raw))
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "out", None):
        cfg = replace(cfg, output_dir=str(args.out))
    return cfg


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    world_cfg = replace(cfg.world, seed=cfg.seed)
    world = generate_world(world_cfg)
    world.save(args.out)
    print(f"world: {world.n_keyframes} keyframes, "
          f"{len(world.labels.loop_pairs)} loop pairs, "
          f"{len(world.labels.gt_segments)} gt segments, "
          f"{len(world.alias_pairs)} alias pairs -> {args.out}")
    return 0


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    world = SyntheticWorld.load(args.world, metric=cfg.metric)
    samples = sample_distance_datasets(
        world, args.n_per_class, seed=cfg.seed,
        include_alias=cfg.density.include_alias,
        alias_fraction=cfg.density.alias_fraction)
    dp = fit_density_pair(samples, grid_size=cfg.density.grid_size,
                          floor=cfg.density.floor)
    dp.save(args.out)
    print(f"densities: grid {len(dp.grid)}, bandwidths "
          f"({dp.bandwidth_h1:.4g}, {dp.bandwidth_h0:.4g}) -> {args.out}")
    return 0


def cmd_verify(args) -> int:
    cfg = _load_config(args)
    cfg = replace(cfg, world_dir=str(args.world), policy=args.policy,
                  densities_file=str(args.densities) if args.densities else None)
    world = load_world(cfg)
    fe = build_front_end(cfg, world)
    outcome = run_policy(cfg, fe)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"config_hash": cfg.config_hash(), "seed": cfg.seed}
    with (out / "verdicts.jsonl").open("w") as fh:
        fh.write(json.dumps({"meta": meta}, sort_keys=True) + "\n")
        for v in outcome.verdicts:
            fh.write(json.dumps(v.to_json_dict(), sort_keys=True) + "\n")
        for seg in outcome.segments:
            rec = seg.to_json_dict()
            rec["resolved"] = True
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    (out / "segments.json").write_text(json.dumps(
        {"meta": meta, "segments": [s.to_json_dict() for s in outcome.segments]},
        sort_keys=True))
    n_acc = len(outcome.accepted_pairs)
    print(f"verify[{cfg.policy}]: {len(outcome.verdicts)} candidates, "
          f"{n_acc} accepts, {len(outcome.segments)} resolved segments -> {out}")
    return 0


def cmd_pgo(args) -> int:
    cfg = _load_config(args)
    world = SyntheticWorld.load(args.world, metric=cfg.metric)
    seg_doc = json.loads(Path(args.segments).read_text())
    seg_list = seg_doc["segments"] if isinstance(seg_doc, dict) else seg_doc
    segments = [LoopSegment.from_json_dict(doc) for doc in seg_list]
    graph = build_graph(
        world, segments,
        loop_noise=LoopNoise(cfg.pgo.loop_sigma_xy, cfg.pgo.loop_sigma_theta_deg),
        edge_stride=cfg.pgo.edge_stride, odom_info=cfg.pgo.odom_info,
        loop_info=cfg.pgo.loop_info, rng=np.random.default_rng(cfg.seed))
    result = optimize(graph, max_iters=cfg.pgo.max_iters, tol=cfg.pgo.tol,
                      huber_delta=cfg.pgo.huber_delta)
    err = ate_rpe(result.poses, world.gt_poses, rpe_delta=cfg.pgo.rpe_delta)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = np.column_stack([np.arange(world.n_keyframes), result.poses])
    np.savetxt(out / "trajectory_optimized.csv", rows, delimiter=",",
               header="keyframe,x,y,theta", comments="", fmt=["%d"] + ["%.17g"] * 3)
    save_g2o(graph, out / "graph.g2o")
    (out / "pgo.json").write_text(json.dumps(
        {"ate_rmse": err.ate_rmse, "rpe_rmse": err.rpe_rmse,
         "chi2": result.chi2, "iterations": result.iterations},
        sort_keys=True, indent=1))
    print(f"pgo: {len(graph.loop_edges)} loop edges, chi2={result.chi2:.4g}, "
          f"ATE={err.ate_rmse:.4f} m, RPE={err.rpe_rmse:.4f} m -> {out}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    world = SyntheticWorld.load(args.world, metric=cfg.metric)
    verdicts = []
    with Path(args.verdicts).open() as fh:
        for line in fh:
            doc = json.loads(line)
            if "meta" in doc or doc.get("resolved"):
                continue
            verdicts.append(SprtVerdict.from_json_dict(doc))
    accepted = [(v.query, v.candidate) for v in verdicts if v.decision == ACCEPT]
    if args.segments:
        seg_doc = json.loads(Path(args.segments).read_text())
        seg_list = seg_doc["segments"] if isinstance(seg_doc, dict) else seg_doc
        predicted = [LoopSegment.from_json_dict(doc) for doc in seg_list]
        if not predicted:
            predicted = segments_from_pairs(accepted, cfg.metrics.gap_tolerance)
    else:
        predicted = segments_from_pairs(accepted, cfg.metrics.gap_tolerance)
    m = cfg.metrics
    pw = pairwise_pr(accepted, world.labels, tol=m.pair_tolerance)
    kh = khit_pr(predicted, world.labels, k=m.k, gap_tolerance=m.gap_tolerance,
                 tol=m.pair_tolerance)
    dt = decision_tier(verdicts, world.labels, tol=m.pair_tolerance)
    from .metrics import EvalReport

    report = EvalReport(pairwise=pw, khit=kh, decision=dt)
    doc = report.to_json_dict()
    doc["config_hash"] = cfg.config_hash()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(doc, sort_keys=True, indent=1))
    write_report_csv(out / "report.csv", [(Path(args.world).name, cfg.descriptor,
                                           cfg.policy, doc)])
    print(f"evaluate: P={_s(pw.precision)} R={_s(pw.recall)} "
          f"F1@Khit={_s(kh.f1_at_khit)} -> {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    result = run_experiment(cfg)
    doc = result.report_doc
    print(f"run[{cfg.policy}] seed={cfg.seed}: "
          f"P={_s(doc['pairwise']['precision'])} R={_s(doc['pairwise']['recall'])} "
          f"F1@Khit={_s(doc['khit']['f1_at_khit'])} "
          f"ATE={_s(doc['trajectory']['ate_rmse'])} m "
          f"(odom {_s(doc['trajectory']['ate_odom'])} m)"
          + (f" -> {result.output_dir}" if result.output_dir else ""))
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    values = json.loads(args.values)
    rows = sweep(cfg, args.axis, values)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    collated = [(f"{args.axis}={value}", cfg.descriptor, cfg.policy, doc)
                for value, doc in rows]
    write_report_csv(out / "sweep.csv", collated)
    (out / "sweep.json").write_text(json.dumps(
        [{"value": v, "report": d} for v, d in rows], sort_keys=True, indent=1))
    for value, doc in rows:
        print(f"  {args.axis}={value}: F1@Khit={_s(doc['khit']['f1_at_khit'])} "
              f"ATE={_s(doc['trajectory']['ate_rmse'])}")
    print(f"sweep: {len(rows)} runs -> {out}")
    return 0


def _s(v) -> str:
    return "n/a" if v is None else f"{v:.3f}"


def _add_common(p, seed_required=False):
    p.add_argument("--config", type=Path, help="RunConfig JSON document")
    p.add_argument("--set", action="append", metavar="PATH=VALUE",
                   help="override a config field by dotted path (repeatable)")
    p.add_argument("--seed", type=int, required=seed_required,
                   help="run seed" + (" (required)" if seed_required else ""))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="seqverify",
        description="Sequential multi-frame loop-closure verification toolkit")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic world directory")
    _add_common(p, seed_required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="fit loop/non-loop distance densities")
    _add_common(p)
    p.add_argument("--world", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--n-per-class", type=int, default=200)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("verify", help="verify candidates under a policy")
    _add_common(p)
    p.add_argument("--world", type=Path, required=True)
    p.add_argument("--densities", type=Path)
    p.add_argument("--policy", choices=POLICIES, default="seq_sprt")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("pgo", help="optimize a pose graph from segments")
    _add_common(p)
    p.add_argument("--world", type=Path, required=True)
    p.add_argument("--segments", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_pgo)

    p = sub.add_parser("evaluate", help="score a verdict log against labels")
    _add_common(p)
    p.add_argument("--world", type=Path, required=True)
    p.add_argument("--verdicts", type=Path, required=True)
    p.add_argument("--segments", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="all stages: world, fit, verify, pgo, report")
    _add_common(p, seed_required=True)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="one run per value of a config axis")
    _add_common(p)
    p.add_argument("--axis", required=True, help="dotted config path, e.g. sprt.alpha")
    p.add_argument("--values", required=True, help="JSON list of values")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
