"""Figure rendering for run reports.

Each run with figures enabled writes PNGs next to the CSV/JSON artifacts:
the trajectory overlay (ground truth, odometry, optimized), the fitted
distance densities with the LLR curve, and the single-frame PR sweep that
documents the aliasing regime of the world.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .density import llr


def render_run_figures(fig_dir: Path, world, front_end, outcome, optimized_poses) -> list[Path]:
    fig_dir = Path(fig_dir)
    fig_dir.mkdir(parents=True, exist_ok=True)
    written = [
        plot_trajectories(fig_dir / "trajectory.png", world, optimized_poses, outcome),
        plot_densities(fig_dir / "densities.png", front_end.dp),
        plot_single_frame_pr(fig_dir / "pr_sweep.png", world, front_end),
    ]
    return written


def plot_trajectories(path: Path, world, optimized_poses, outcome=None) -> Path:
    fig, ax = plt.subplots(figsize=(7, 6))
    ax.plot(world.gt_poses[:, 0], world.gt_poses[:, 1], "-", color="0.3",
            lw=1.0, label="ground truth")
    ax.plot(world.odom_poses[:, 0], world.odom_poses[:, 1], "--", color="tab:orange",
            lw=0.9, label="odometry")
    ax.plot(optimized_poses[:, 0], optimized_poses[:, 1], "-", color="tab:blue",
            lw=0.9, label="optimized")
    if outcome is not None:
        for q, t in outcome.accepted_pairs:
            ax.plot([world.gt_poses[q, 0], world.gt_poses[t, 0]],
                    [world.gt_poses[q, 1], world.gt_poses[t, 1]],
                    color="tab:green", alpha=0.25, lw=0.6)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title("Trajectories and accepted loop pairs")
    ax.axis("equal")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def plot_densities(path: Path, dp) -> Path:
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(dp.grid, np.exp(dp.log_f1), label="loop (H1)", color="tab:blue")
    ax1.plot(dp.grid, np.exp(dp.log_f0), label="non-loop (H0)", color="tab:red")
    ax1.set_ylabel("density")
    ax1.legend(fontsize=8)
    ax1.set_title("Fitted distance densities and per-step evidence")
    ax2.plot(dp.grid, llr(dp, dp.grid), color="0.2")
    ax2.axhline(0.0, color="0.7", lw=0.8)
    ax2.set_xlabel("descriptor distance")
    ax2.set_ylabel("llr(x)")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)


def plot_single_frame_pr(path: Path, world, front_end, tol: int = 2) -> Path:
    """Precision/recall sweep of the one-shot distance threshold policy."""
    pairs = front_end.candidates
    truth = world.labels.loop_pairs

    def hits(q, t):
        return [(q + dq, t + dt) for dq in range(-tol, tol + 1)
                for dt in range(-tol, tol + 1) if (q + dq, t + dt) in truth]

    ds = np.array([d for _, _, d in pairs])
    matched = [hits(q, t) for q, t, _ in pairs]
    precisions, recalls = [], []
    for thr in np.quantile(ds, np.linspace(0.01, 1.0, 100)):
        sel = ds <= thr
        if not sel.any():
            continue
        tp = sum(1 for ok, m in zip(sel, matched) if ok and m)
        covered = set()
        for ok, m in zip(sel, matched):
            if ok:
                covered.update(m)
        precisions.append(tp / sel.sum())
        recalls.append(len(covered) / max(len(truth), 1))
    fig, ax = plt.subplots(figsize=(6, 5))
    ax.plot(recalls, precisions, "-o", ms=2.5, color="tab:red", label="single-frame sweep")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_title("Single-frame PR under aliasing")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return Path(path)
