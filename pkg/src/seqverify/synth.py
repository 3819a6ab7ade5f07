"""Synthetic aliasing-heavy worlds: aisle grids, revisit trajectories, and
descriptor tables with controlled loop/alias/non-loop distance regimes.

The environment is a grid of parallel aisles (plus connecting corridors)
traversed by a serpentine base pass and a configurable revisit plan.  Place
descriptors are latent vectors over quantized trajectory cells:

  - cells in aisles of the same structural class share a class mean and a
    per-bin profile, so aligned cells of two same-class aisles differ only
    by a small per-cell deviation (the aliasing channel);
  - the per-cell deviation scale is drawn per cell, so some aliased cells
    are near-perfect copies while others deviate, which keeps single-frame
    thresholds genuinely ambiguous;
  - per-keyframe observation noise has a slowly varying AR(1) component, so
    revisits of the *same* cells stay temporally coherent along a stream
    while aliased streams decohere (each step lands on a fresh cell pair).

Distances between descriptors then fall into three regimes: true loop (low,
coherent), aliased (low-to-medium, decoherent), non-loop (high).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .density import H0, H1, DistanceSample
from .errors import ConfigError, InsufficientPairsError
from .metrics import GroundTruth, GtParams, label_ground_truth, wrap_angle
from .stream import DescriptorTable

DEFAULT_REVISIT_PLAN = ((0, 1, 1.0), (2, 1, 1.25), (1, 1, 1.0), (4, 1, 0.75))


@dataclass(frozen=True)
class WorldConfig:
    n_aisles: int = 6
    aisle_length: float = 16.0
    aisle_spacing: float = 2.0
    n_keyframes: int = 0              # 0 = derived from the traversal plan
    keyframe_spacing: float = 0.5
    revisit_plan: tuple = DEFAULT_REVISIT_PLAN   # (aisle, direction, speed)
    alias_classes: Optional[dict] = None         # aisle -> class id; default a % 2
    seed: int = 0

    # Latent descriptor model
    descriptor_dim: int = 32
    class_separation: float = 1.0
    profile_sigma: float = 0.5        # per-component bin-profile std
    cell_dev_sigma: float = 0.25      # per-cell deviation scale (half-normal)
    obs_sigma_ar: float = 0.09        # AR(1) observation drift, stationary std
    obs_sigma_iid: float = 0.045
    ar_phi: float = 0.9
    # Per-keyframe noise scale exp(g_k), g AR(1): widens the loop-distance
    # distribution into the alias regime while keeping streams coherent.
    noise_logscale_sigma: float = 0.5
    noise_logscale_phi: float = 0.95

    # Odometry noise per step, tuned for an odometry-only ATE around
    # 0.2-0.3 m on default-size worlds.
    odom_sigma_trans: float = 0.012   # meters
    odom_sigma_rot_deg: float = 0.15

    gt: GtParams = GtParams()

    def __post_init__(self):
        if self.n_aisles < 1:
            raise ConfigError("n_aisles must be >= 1")
        if self.aisle_spacing <= 1.0:
            raise ConfigError("aisle_spacing must exceed 1.0 m so the ground-truth "
                              "translation gate cannot bridge adjacent aisles")
        if self.aisle_length <= 0 or self.keyframe_spacing <= 0:
            raise ConfigError("aisle_length and keyframe_spacing must be positive")
        for entry in self.revisit_plan:
            aisle, direction, speed = entry
            if not (0 <= aisle < self.n_aisles):
                raise ConfigError(f"revisit aisle {aisle} out of range")
            if direction not in (1, -1):
                raise ConfigError(f"revisit direction must be +1 or -1, got {direction}")
            if not (0.5 <= speed <= 2.0):
                raise ConfigError(f"speed factor {speed} outside [0.5, 2.0]")
        if self.alias_classes is not None:
            for aisle in self.alias_classes:
                if not (0 <= int(aisle) < self.n_aisles):
                    raise ConfigError(f"alias_classes key {aisle} out of range")

    def aisle_class(self, aisle: int) -> int:
        if self.alias_classes is not None and aisle in self.alias_classes:
            return int(self.alias_classes[aisle])
        if self.alias_classes is not None and str(aisle) in self.alias_classes:
            return int(self.alias_classes[str(aisle)])
        return aisle % 2

    def to_json_dict(self) -> dict:
        return {
            "n_aisles": self.n_aisles,
            "aisle_length": self.aisle_length,
            "aisle_spacing": self.aisle_spacing,
            "n_keyframes": self.n_keyframes,
            "keyframe_spacing": self.keyframe_spacing,
            "revisit_plan": [list(e) for e in self.revisit_plan],
            "alias_classes": ({str(k): v for k, v in self.alias_classes.items()}
                              if self.alias_classes is not None else None),
            "seed": self.seed,
            "descriptor_dim": self.descriptor_dim,
            "class_separation": self.class_separation,
            "profile_sigma": self.profile_sigma,
            "cell_dev_sigma": self.cell_dev_sigma,
            "obs_sigma_ar": self.obs_sigma_ar,
            "obs_sigma_iid": self.obs_sigma_iid,
            "ar_phi": self.ar_phi,
            "noise_logscale_sigma": self.noise_logscale_sigma,
            "noise_logscale_phi": self.noise_logscale_phi,
            "odom_sigma_trans": self.odom_sigma_trans,
            "odom_sigma_rot_deg": self.odom_sigma_rot_deg,
            "gt": {
                "translation_gate": self.gt.translation_gate,
                "rotation_gate_deg": self.gt.rotation_gate_deg,
                "min_separation": self.gt.min_separation,
                "near_duplicate_radius": self.gt.near_duplicate_radius,
                "segment_gap_tolerance": self.gt.segment_gap_tolerance,
            },
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "WorldConfig":
        doc = dict(doc)
        gt = GtParams(**doc.pop("gt")) if "gt" in doc else GtParams()
        plan = tuple(tuple(e) for e in doc.pop("revisit_plan", DEFAULT_REVISIT_PLAN))
        aliases = doc.pop("alias_classes", None)
        if aliases is not None:
            aliases = {int(k): int(v) for k, v in aliases.items()}
        return cls(revisit_plan=plan, alias_classes=aliases, gt=gt, **doc)


@dataclass(frozen=True)
class _Leg:
    p0: tuple
    p1: tuple
    speed: float
    aisle: int      # -1 for corridor legs
    direction: int  # traversal sign along the aisle axis; 0 for corridors


@dataclass
class SyntheticWorld:
    config: WorldConfig
    seed: int
    gt_poses: np.ndarray        # (N, 3): x, y, theta
    odom_poses: np.ndarray      # (N, 3)
    descriptor_table: DescriptorTable
    labels: GroundTruth
    alias_pairs: frozenset      # canonical (u, v) with u > v
    aisle_ids: np.ndarray       # (N,), -1 for corridor keyframes
    bin_ids: np.ndarray         # (N,), longitudinal cell bin (aisle frames)
    class_ids: np.ndarray       # (N,), structural class, -1 for corridor

    @property
    def n_keyframes(self) -> int:
        return self.gt_poses.shape[0]

    def is_alias_pair(self, q: int, t: int) -> bool:
        u, v = (q, t) if q > t else (t, q)
        return (u, v) in self.alias_pairs

    def alias_projection(self, q: int, t: int) -> np.ndarray:
        """Pose that t would have if its cell really were in q's aisle.

        For an aliased pair this is t's pose shifted onto the query's aisle
        axis; for any other false association the claimed pose collapses to
        the query pose (the data association asserts "same place").
        """
        if self.is_alias_pair(q, t):
            dx = (self.aisle_ids[q] - self.aisle_ids[t]) * self.config.aisle_spacing
            pose = self.gt_poses[t].copy()
            pose[0] += dx
            return pose
        return self.gt_poses[q].copy()

    # -- serialization ----------------------------------------------------

    def save(self, directory: str | Path) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        header = "keyframe,gt_x,gt_y,gt_theta,odom_x,odom_y,odom_theta"
        n = self.n_keyframes
        rows = np.column_stack([np.arange(n), self.gt_poses, self.odom_poses])
        np.savetxt(d / "poses.csv", rows, delimiter=",", header=header, comments="",
                   fmt=["%d"] + ["%.17g"] * 6)
        self.descriptor_table.to_csv(d / "descriptors.csv")
        labels_doc = self.labels.to_json_dict()
        labels_doc["alias_pairs"] = sorted([list(p) for p in self.alias_pairs])
        labels_doc["aisle_ids"] = self.aisle_ids.tolist()
        labels_doc["bin_ids"] = self.bin_ids.tolist()
        labels_doc["class_ids"] = self.class_ids.tolist()
        labels_doc["seed"] = self.seed
        (d / "labels.json").write_text(json.dumps(labels_doc))
        (d / "config.json").write_text(json.dumps(self.config.to_json_dict()))

    @classmethod
    def load(cls, directory: str | Path, metric: str = "euclidean") -> "SyntheticWorld":
        """Load a world directory.

        The layout doubles as the ingestion format for externally exported
        descriptor logs: with only poses.csv and descriptors.csv present,
        labels are derived from the poses and the synthetic metadata
        (aliases, aisle structure) stays empty.
        """
        d = Path(directory)
        rows = np.loadtxt(d / "poses.csv", delimiter=",", skiprows=1, ndmin=2)
        gt_poses = rows[:, 1:4]
        odom_poses = rows[:, 4:7] if rows.shape[1] >= 7 else gt_poses.copy()
        table = DescriptorTable.from_csv(d / "descriptors.csv", metric=metric)
        n = gt_poses.shape[0]

        config_path = d / "config.json"
        config = WorldConfig.from_json_dict(json.loads(config_path.read_text())) \
            if config_path.exists() else WorldConfig()

        labels_path = d / "labels.json"
        if labels_path.exists():
            doc = json.loads(labels_path.read_text())
            labels = GroundTruth.from_json_dict(doc)
            seed = int(doc["seed"])
            alias_pairs = frozenset(tuple(p) for p in doc["alias_pairs"])
            aisle_ids = np.asarray(doc["aisle_ids"], dtype=int)
            bin_ids = np.asarray(doc["bin_ids"], dtype=int)
            class_ids = np.asarray(doc["class_ids"], dtype=int)
        else:
            labels = label_ground_truth(gt_poses, config.gt)
            seed = config.seed
            alias_pairs = frozenset()
            aisle_ids = np.full(n, -1, dtype=int)
            bin_ids = np.full(n, -1, dtype=int)
            class_ids = np.full(n, -1, dtype=int)
        return cls(
            config=config, seed=seed,
            gt_poses=gt_poses, odom_poses=odom_poses,
            descriptor_table=table, labels=labels,
            alias_pairs=alias_pairs, aisle_ids=aisle_ids,
            bin_ids=bin_ids, class_ids=class_ids,
        )


def _plan_legs(cfg: WorldConfig) -> list[_Leg]:
    s, length = cfg.aisle_spacing, cfg.aisle_length
    legs: list[_Leg] = []

    def aisle_leg(aisle: int, direction: int, speed: float) -> _Leg:
        x = aisle * s
        y0, y1 = (0.0, length) if direction == 1 else (length, 0.0)
        return _Leg((x, y0), (x, y1), speed, aisle, direction)

    # Base serpentine pass: every aisle once, alternating direction.
    for a in range(cfg.n_aisles):
        direction = 1 if a % 2 == 0 else -1
        legs.append(aisle_leg(a, direction, 1.0))
        if a + 1 < cfg.n_aisles:
            y = length if direction == 1 else 0.0
            legs.append(_Leg((a * s, y), ((a + 1) * s, y), 1.0, -1, 0))

    # Revisit passes, routed around the grid edge to avoid unplanned passes.
    for aisle, direction, speed in cfg.revisit_plan:
        target = aisle_leg(aisle, direction, speed)
        cur = legs[-1].p1
        legs.extend(_transit_legs(cfg, cur, target.p0))
        legs.append(target)
    return [leg for leg in legs if _leg_length(leg) > 1e-12]


def _leg_length(leg: _Leg) -> float:
    return math.hypot(leg.p1[0] - leg.p0[0], leg.p1[1] - leg.p0[1])


def _transit_legs(cfg: WorldConfig, cur: tuple, dst: tuple) -> list[_Leg]:
    legs = []

    def corridor(p0, p1):
        if math.hypot(p1[0] - p0[0], p1[1] - p0[1]) > 1e-12:
            legs.append(_Leg(p0, p1, 1.0, -1, 0))

    if abs(cur[1] - dst[1]) < 1e-9:
        corridor(cur, dst)
        return legs
    left = -cfg.aisle_spacing
    right = cfg.n_aisles * cfg.aisle_spacing
    x_edge = left if abs(cur[0] - left) + abs(dst[0] - left) <= \
        abs(cur[0] - right) + abs(dst[0] - right) else right
    corridor(cur, (x_edge, cur[1]))
    corridor((x_edge, cur[1]), (x_edge, dst[1]))
    corridor((x_edge, dst[1]), dst)
    return legs


def _sample_keyframes(cfg: WorldConfig, legs: list[_Leg]):
    """Walk the legs, emitting keyframes every keyframe_spacing * leg speed."""
    xs, ys, thetas = [], [], []
    aisle_ids, bins = [], []
    for li, leg in enumerate(legs):
        seg_len = _leg_length(leg)
        ux = (leg.p1[0] - leg.p0[0]) / seg_len
        uy = (leg.p1[1] - leg.p0[1]) / seg_len
        heading = math.atan2(uy, ux)
        step = cfg.keyframe_spacing * leg.speed
        start = 0.0 if li == 0 else step
        dist = start
        while dist <= seg_len + 1e-9:
            x = leg.p0[0] + ux * dist
            y = leg.p0[1] + uy * dist
            xs.append(x)
            ys.append(y)
            thetas.append(heading)
            aisle_ids.append(leg.aisle)
            if leg.aisle >= 0:
                bins.append(int(round(y / cfg.keyframe_spacing)))
            else:
                bins.append(-1)
            dist += step
    poses = np.column_stack([xs, ys, thetas])
    if cfg.n_keyframes > 0:
        poses = poses[:cfg.n_keyframes]
        aisle_ids = aisle_ids[:cfg.n_keyframes]
        bins = bins[:cfg.n_keyframes]
    return poses, np.asarray(aisle_ids, dtype=int), np.asarray(bins, dtype=int)


def _cell_keys(cfg: WorldConfig, poses, aisle_ids, bins):
    keys = []
    cell = cfg.keyframe_spacing
    for i in range(poses.shape[0]):
        if aisle_ids[i] >= 0:
            keys.append(("aisle", int(aisle_ids[i]), int(bins[i])))
        else:
            keys.append(("corr", int(round(poses[i, 0] / cell)), int(round(poses[i, 1] / cell))))
    return keys


def _latent_descriptors(cfg: WorldConfig, keys, aisle_ids, rng) -> np.ndarray:
    d = cfg.descriptor_dim
    n = len(keys)
    comp_scale = cfg.class_separation / math.sqrt(2 * d)

    classes = sorted({cfg.aisle_class(a) for a in range(cfg.n_aisles)})
    class_mean = {c: rng.normal(0.0, comp_scale, size=d) for c in classes}
    corridor_mean = rng.normal(0.0, comp_scale, size=d)

    profile: dict = {}    # (class, bin) -> shared per-bin profile
    cell_dev: dict = {}   # cell key -> per-cell deviation
    corr_cell: dict = {}  # corridor cell key -> latent

    out = np.empty((n, d))
    for i, key in enumerate(keys):
        if key[0] == "aisle":
            aisle, b = key[1], key[2]
            c = cfg.aisle_class(aisle)
            pk = (c, b)
            if pk not in profile:
                profile[pk] = rng.normal(0.0, cfg.profile_sigma, size=d)
            if key not in cell_dev:
                scale = abs(rng.normal(0.0, cfg.cell_dev_sigma))
                cell_dev[key] = rng.normal(0.0, 1.0, size=d) * scale
            out[i] = class_mean[c] + profile[pk] + cell_dev[key]
        else:
            if key not in corr_cell:
                corr_cell[key] = corridor_mean + rng.normal(0.0, cfg.profile_sigma, size=d)
            out[i] = corr_cell[key]
    return out


def _ar1_series(rng, n: int, dim: int, sigma: float, phi: float) -> np.ndarray:
    out = np.empty((n, dim))
    out[0] = rng.normal(0.0, sigma, size=dim)
    innov = sigma * math.sqrt(max(1.0 - phi ** 2, 0.0))
    for i in range(1, n):
        out[i] = phi * out[i - 1] + rng.normal(0.0, innov, size=dim)
    return out


def _observation_noise(cfg: WorldConfig, n: int, rng) -> np.ndarray:
    d = cfg.descriptor_dim
    ar = _ar1_series(rng, n, d, cfg.obs_sigma_ar, cfg.ar_phi)
    iid = rng.normal(0.0, cfg.obs_sigma_iid, size=(n, d))
    scale = np.exp(_ar1_series(rng, n, 1, cfg.noise_logscale_sigma,
                               cfg.noise_logscale_phi))
    return (ar + iid) * scale


def _drifted_odometry(cfg: WorldConfig, gt_poses: np.ndarray, rng) -> np.ndarray:
    n = gt_poses.shape[0]
    odom = np.empty_like(gt_poses)
    odom[0] = gt_poses[0]
    sig_r = math.radians(cfg.odom_sigma_rot_deg)
    for i in range(1, n):
        # True relative pose in the frame of pose i-1, with additive noise.
        dx, dy = gt_poses[i, :2] - gt_poses[i - 1, :2]
        c, s = math.cos(gt_poses[i - 1, 2]), math.sin(gt_poses[i - 1, 2])
        rel = np.array([c * dx + s * dy, -s * dx + c * dy,
                        wrap_angle(gt_poses[i, 2] - gt_poses[i - 1, 2])])
        rel += rng.normal(0.0, [cfg.odom_sigma_trans, cfg.odom_sigma_trans, sig_r])
        c, s = math.cos(odom[i - 1, 2]), math.sin(odom[i - 1, 2])
        odom[i, 0] = odom[i - 1, 0] + c * rel[0] - s * rel[1]
        odom[i, 1] = odom[i - 1, 1] + s * rel[0] + c * rel[1]
        odom[i, 2] = wrap_angle(odom[i - 1, 2] + rel[2])
    return odom


def _alias_pairs(cfg: WorldConfig, aisle_ids, bins, class_ids, min_separation) -> frozenset:
    groups: dict = {}
    for i in range(len(aisle_ids)):
        if aisle_ids[i] < 0:
            continue
        groups.setdefault((int(class_ids[i]), int(bins[i])), []).append(i)
    pairs = set()
    for members in groups.values():
        for ai in range(len(members)):
            for bi in range(ai + 1, len(members)):
                u, v = members[bi], members[ai]
                if aisle_ids[u] != aisle_ids[v] and u - v >= min_separation:
                    pairs.add((u, v))
    return frozenset(pairs)


def generate_world(cfg: WorldConfig) -> SyntheticWorld:
    """Generate a seeded synthetic world (bit-identical per seed)."""
    rng = np.random.default_rng(cfg.seed)
    legs = _plan_legs(cfg)
    gt_poses, aisle_ids, bins = _sample_keyframes(cfg, legs)
    keys = _cell_keys(cfg, gt_poses, aisle_ids, bins)
    class_ids = np.asarray(
        [cfg.aisle_class(a) if a >= 0 else -1 for a in aisle_ids], dtype=int)

    latents = _latent_descriptors(cfg, keys, aisle_ids, rng)
    noise = _observation_noise(cfg, gt_poses.shape[0], rng)
    table = DescriptorTable(descriptors=latents + noise, metric="euclidean")

    odom = _drifted_odometry(cfg, gt_poses, rng)
    labels = label_ground_truth(gt_poses, cfg.gt)
    aliases = _alias_pairs(cfg, aisle_ids, bins, class_ids, cfg.gt.min_separation)
    aliases = frozenset(p for p in aliases if p not in labels.loop_pairs)

    return SyntheticWorld(
        config=cfg, seed=cfg.seed, gt_poses=gt_poses, odom_poses=odom,
        descriptor_table=table, labels=labels, alias_pairs=aliases,
        aisle_ids=aisle_ids, bin_ids=bins, class_ids=class_ids,
    )


def sample_distance_datasets(world: SyntheticWorld, n_per_class: int,
                             seed: Optional[int] = None,
                             include_alias: bool = True,
                             alias_fraction: float = 0.5) -> list[DistanceSample]:
    """Draw labeled distance samples for density fitting.

    H1 distances come from labeled loop pairs.  H0 distances come from
    non-loop pairs with at least the ground-truth temporal separation, as a
    mixture of aliased pairs (fraction `alias_fraction`, matching the
    retrieval-heavy population the verifier actually faces) and uniformly
    drawn non-loop pairs.  include_alias=False excludes aliased pairs from
    H0 entirely.
    """
    rng = np.random.default_rng(world.seed if seed is None else seed)
    table = world.descriptor_table
    n = world.n_keyframes
    min_sep = world.labels.params.min_separation

    loops = sorted(world.labels.loop_pairs)
    m = n - min_sep
    total_separated = m * (m + 1) // 2
    if len(loops) < n_per_class or total_separated - len(loops) < n_per_class:
        raise InsufficientPairsError(
            f"world provides {len(loops)} loop and ~{total_separated - len(loops)} "
            f"non-loop pairs; {n_per_class} per class requested")

    picked = rng.choice(len(loops), size=n_per_class, replace=False)
    samples = [
        DistanceSample(distance=table.distance(*loops[i]), label=H1)
        for i in sorted(int(i) for i in picked)
    ]

    aliases = sorted(world.alias_pairs)
    n_alias = 0
    if include_alias and aliases:
        n_alias = min(int(round(alias_fraction * n_per_class)), n_per_class)
        idx = rng.choice(len(aliases), size=n_alias, replace=n_alias > len(aliases))
        for i in sorted(int(i) for i in idx):
            samples.append(DistanceSample(distance=table.distance(*aliases[i]), label=H0))

    drawn = n_alias
    while drawn < n_per_class:
        u = int(rng.integers(min_sep, n))
        v = int(rng.integers(0, u - min_sep + 1))
        if (u, v) in world.labels.loop_pairs:
            continue
        if not include_alias and (u, v) in world.alias_pairs:
            continue
        samples.append(DistanceSample(distance=table.distance(u, v), label=H0))
        drawn += 1
    return samples


# -- optional scan-grid descriptor front-end ------------------------------

def world_wall_segments(cfg: WorldConfig) -> np.ndarray:
    """Shelf and boundary wall segments (x0, y0, x1, y1) of the aisle grid."""
    s, length = cfg.aisle_spacing, cfg.aisle_length
    walls = []
    for a in range(cfg.n_aisles):
        for side in (-0.5, 0.5):
            x = a * s + side * s
            walls.append((x, 0.0, x, length))
    lo_x, hi_x = -1.5 * s, (cfg.n_aisles + 0.5) * s
    lo_y, hi_y = -s, length + s
    walls += [(lo_x, lo_y, hi_x, lo_y), (hi_x, lo_y, hi_x, hi_y),
              (hi_x, hi_y, lo_x, hi_y), (lo_x, hi_y, lo_x, lo_y)]
    return np.asarray(walls)


def generate_scan_descriptors(world: SyntheticWorld, n_rays: int = 64,
                              max_range: float = 6.0,
                              noise_sigma: float = 0.02,
                              seed: Optional[int] = None) -> DescriptorTable:
    """Range-scan descriptor per keyframe from simulated 2D LiDAR rays.

    Rays are cast in the sensor frame, so this front-end is heading
    dependent, giving a second, structurally different aliasing profile
    than the latent-vector model.
    """
    rng = np.random.default_rng(world.seed if seed is None else seed)
    walls = world_wall_segments(world.config)
    p0 = walls[:, 0:2]
    d_wall = walls[:, 2:4] - p0
    poses = world.gt_poses
    n = poses.shape[0]
    angles = np.linspace(0.0, 2.0 * math.pi, n_rays, endpoint=False)
    out = np.empty((n, n_rays))
    for i in range(n):
        origin = poses[i, :2]
        dirs = np.column_stack([np.cos(poses[i, 2] + angles), np.sin(poses[i, 2] + angles)])
        out[i] = _ray_ranges(origin, dirs, p0, d_wall, max_range)
    out += rng.normal(0.0, noise_sigma, size=out.shape)
    return DescriptorTable(descriptors=out, metric="euclidean")


def _ray_ranges(origin, dirs, p0, d_wall, max_range) -> np.ndarray:
    # Intersections of rays origin + t*dir with segments p0 + u*d_wall.
    rel = p0 - origin                                   # (M, 2)
    denom = dirs[:, 0:1] * d_wall[None, :, 1] - dirs[:, 1:2] * d_wall[None, :, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (rel[None, :, 0] * d_wall[None, :, 1] - rel[None, :, 1] * d_wall[None, :, 0]) / denom
        u = (rel[None, :, 0] * dirs[:, 1:2] - rel[None, :, 1] * dirs[:, 0:1]) / denom
    valid = (np.abs(denom) > 1e-12) & (t > 1e-9) & (u >= 0.0) & (u <= 1.0)
    t = np.where(valid, t, np.inf)
    ranges = t.min(axis=1)
    return np.minimum(ranges, max_range)
