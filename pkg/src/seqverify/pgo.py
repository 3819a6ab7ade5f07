"""SE(2) pose graphs: construction from accepted loops, Gauss-Newton
optimization with analytic Jacobians, and trajectory error scoring.

The optimizer deliberately carries no robust kernel on loop edges by
default, so the trajectory error acts as a stress test of the verification
policy: one aliased constraint visibly distorts the solution.  A Huber
option exists behind a flag for diagnostics only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import SingularSystemError
from .metrics import wrap_angle
from .sprt import LoopSegment

DEFAULT_ODOM_INFO = (50.0, 50.0, 100.0)
DEFAULT_LOOP_INFO = (20.0, 20.0, 40.0)


def v2t(pose: np.ndarray) -> np.ndarray:
    """(x, y, theta) -> 3x3 homogeneous transform."""
    x, y, th = pose
    c, s = math.cos(th), math.sin(th)
    return np.array([[c, -s, x], [s, c, y], [0.0, 0.0, 1.0]])


def t2v(T: np.ndarray) -> np.ndarray:
    return np.array([T[0, 2], T[1, 2], math.atan2(T[1, 0], T[0, 0])])


def se2_relative(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Relative pose of b expressed in the frame of a."""
    dx, dy = b[0] - a[0], b[1] - a[1]
    c, s = math.cos(a[2]), math.sin(a[2])
    return np.array([c * dx + s * dy, -s * dx + c * dy, wrap_angle(b[2] - a[2])])


@dataclass(frozen=True)
class Edge2:
    i: int
    j: int
    z: np.ndarray               # relative pose measurement (3,)
    info: np.ndarray            # information matrix (3, 3)
    source_id: int = -1         # originating segment, -1 for odometry

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        info = np.asarray(self.info, dtype=np.float64)
        if z.shape != (3,) or info.shape != (3, 3):
            raise ValueError("edge needs a (3,) measurement and (3,3) information")
        if not np.allclose(info, info.T, atol=1e-9) or np.any(np.linalg.eigvalsh(info) <= 0):
            raise ValueError("information matrix must be symmetric positive definite")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "info", info)


@dataclass
class PoseGraph2:
    nodes: np.ndarray           # (N, 3) initial poses
    odom_edges: list
    loop_edges: list

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.float64)
        n = self.nodes.shape[0]
        chain = sorted((e.i, e.j) for e in self.odom_edges)
        if chain != [(i, i + 1) for i in range(n - 1)]:
            raise ValueError("odometry edges must form the chain (i, i+1) over all nodes")

    @property
    def edges(self) -> list:
        return list(self.odom_edges) + list(self.loop_edges)


class OptimizeResult(NamedTuple):
    poses: np.ndarray
    chi2: float
    iterations: int
    converged: bool
    chi2_history: tuple = ()  # chi2 after each accepted iteration


@dataclass(frozen=True)
class LoopNoise:
    sigma_xy: float = 0.02
    sigma_theta_deg: float = 0.5


def build_graph(world, accepted: Sequence[LoopSegment],
                loop_noise: LoopNoise = LoopNoise(),
                edge_stride: int = 3,
                odom_info: tuple = DEFAULT_ODOM_INFO,
                loop_info: tuple = DEFAULT_LOOP_INFO,
                true_gate_translation: float = 1.0,
                true_gate_rotation_deg: float = 20.0,
                rng: Optional[np.random.Generator] = None) -> PoseGraph2:
    """Pose graph from odometry plus loop edges along accepted segments.

    One loop edge is created per `edge_stride` committed steps.  True pairs
    (within the registration gate) measure the ground-truth relative pose
    plus noise; false pairs measure the relative pose implied by the wrong
    data association (the alias-projected pose), which is what makes false
    accepts damaging downstream.
    """
    rng = rng if rng is not None else np.random.default_rng(world.seed)
    odom = world.odom_poses
    gt = world.gt_poses
    n = odom.shape[0]
    info_o = np.diag(odom_info)
    info_l = np.diag(loop_info)
    sig_th = math.radians(loop_noise.sigma_theta_deg)
    rot_gate = math.radians(true_gate_rotation_deg)

    odom_edges = [
        Edge2(i, i + 1, se2_relative(odom[i], odom[i + 1]), info_o)
        for i in range(n - 1)
    ]

    loop_edges = []
    for sid, seg in enumerate(accepted):
        pairs = seg.pairs if seg.pairs else ((seg.query_span[0], seg.db_span[0]),)
        for qq, tt in pairs[::edge_stride]:
            if not (0 <= qq < n and 0 <= tt < n):
                continue
            d = math.hypot(gt[qq, 0] - gt[tt, 0], gt[qq, 1] - gt[tt, 1])
            dth = abs(wrap_angle(gt[qq, 2] - gt[tt, 2]))
            if d <= true_gate_translation and dth <= rot_gate:
                target = gt[tt]
            else:
                target = world.alias_projection(qq, tt)
            z = se2_relative(gt[qq], target)
            z[:2] += rng.normal(0.0, loop_noise.sigma_xy, size=2)
            z[2] = wrap_angle(z[2] + rng.normal(0.0, sig_th))
            loop_edges.append(Edge2(int(qq), int(tt), z, info_l, source_id=sid))

    return PoseGraph2(nodes=odom.copy(), odom_edges=odom_edges, loop_edges=loop_edges)


def edge_residual(xi: np.ndarray, xj: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Residual of one edge: measurement frame error of the predicted
    relative pose, with the angle wrapped to (-pi, pi]."""
    pred = se2_relative(xi, xj)
    cz, sz = math.cos(z[2]), math.sin(z[2])
    dt = pred[:2] - z[:2]
    return np.array([cz * dt[0] + sz * dt[1],
                     -sz * dt[0] + cz * dt[1],
                     wrap_angle(pred[2] - z[2])])


def edge_jacobians(xi: np.ndarray, xj: np.ndarray, z: np.ndarray):
    """Analytic Jacobians of edge_residual w.r.t. xi and xj."""
    ci, si = math.cos(xi[2]), math.sin(xi[2])
    cz, sz = math.cos(z[2]), math.sin(z[2])
    Ri = np.array([[ci, -si], [si, ci]])
    Rz = np.array([[cz, -sz], [sz, cz]])
    dRiT = np.array([[-si, ci], [-ci, -si]])  # d(Ri^T)/dtheta_i
    dt = xj[:2] - xi[:2]

    A = np.zeros((3, 3))
    A[:2, :2] = -Rz.T @ Ri.T
    A[:2, 2] = Rz.T @ (dRiT @ dt)
    A[2, 2] = -1.0

    B = np.zeros((3, 3))
    B[:2, :2] = Rz.T @ Ri.T
    B[2, 2] = 1.0
    return A, B


def chi2(poses: np.ndarray, edges: Sequence[Edge2], huber_delta: Optional[float] = None) -> float:
    total = 0.0
    for e in edges:
        r = edge_residual(poses[e.i], poses[e.j], e.z)
        c = float(r @ e.info @ r)
        total += _huber_rho(c, huber_delta)
    return total


def _huber_rho(c: float, delta: Optional[float]) -> float:
    if delta is None or c <= delta * delta:
        return c
    return 2.0 * delta * math.sqrt(c) - delta * delta


def _huber_weight(c: float, delta: Optional[float]) -> float:
    if delta is None or c <= delta * delta:
        return 1.0
    return delta / math.sqrt(c)


def _solve_gauged(H_red: sp.spmatrix, b_red: np.ndarray) -> np.ndarray:
    """Solve the gauge-reduced normal equations, raising SingularSystemError
    on rank deficiency."""
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            delta = spla.spsolve(H_red, -b_red)
        except spla.MatrixRankWarning as exc:
            raise SingularSystemError("normal equations are singular beyond the gauge") from exc
        except RuntimeError as exc:
            raise SingularSystemError(str(exc)) from exc
    if not np.all(np.isfinite(delta)):
        raise SingularSystemError("normal equations are singular beyond the gauge")
    return delta


def optimize(graph: PoseGraph2, max_iters: int = 50, tol: float = 1e-9,
             huber_delta: Optional[float] = None) -> OptimizeResult:
    """Gauss-Newton with Levenberg damping fallback, node 0 fixed as gauge.

    Iterations stop when the relative chi2 improvement drops below `tol`
    or `max_iters` is reached; chi2 never increases across accepted steps.

    Raises SingularSystemError when the gauged normal equations are rank
    deficient.
    """
    poses = graph.nodes.copy()
    edges = graph.edges
    n = poses.shape[0]
    lam = 0.0
    current = chi2(poses, edges, huber_delta)
    history = [current]
    iterations = 0
    converged = False

    for _ in range(max_iters):
        iterations += 1
        H_rows, H_cols, H_vals = [], [], []
        b = np.zeros(3 * n)
        for e in edges:
            r = edge_residual(poses[e.i], poses[e.j], e.z)
            A, B = edge_jacobians(poses[e.i], poses[e.j], e.z)
            w = _huber_weight(float(r @ e.info @ r), huber_delta)
            info = w * e.info
            for (bi, Ji) in ((e.i, A), (e.j, B)):
                b[3 * bi:3 * bi + 3] += Ji.T @ info @ r
                for (bj, Jj) in ((e.i, A), (e.j, B)):
                    block = Ji.T @ info @ Jj
                    for ri in range(3):
                        for ci in range(3):
                            H_rows.append(3 * bi + ri)
                            H_cols.append(3 * bj + ci)
                            H_vals.append(block[ri, ci])
        H = sp.csr_matrix((H_vals, (H_rows, H_cols)), shape=(3 * n, 3 * n))

        # Remove the gauge freedom by eliminating node 0.
        free = np.arange(3, 3 * n)
        H_red = H[free][:, free].tocsc()
        b_red = b[free]

        improved = False
        for _attempt in range(8):
            H_try = H_red if lam == 0.0 else H_red + lam * sp.diags(H_red.diagonal())
            delta = _solve_gauged(H_try, b_red)
            candidate = poses.copy()
            candidate[1:, :] += delta.reshape(-1, 3)
            candidate[:, 2] = wrap_angle(candidate[:, 2])
            trial = chi2(candidate, edges, huber_delta)
            if trial <= current + 1e-15:
                improved = True
                break
            lam = 1e-4 if lam == 0.0 else lam * 10.0
        if not improved:
            converged = True
            break

        gain = current - trial
        poses, current = candidate, trial
        history.append(current)
        lam = 0.0 if lam == 0.0 else lam / 10.0
        if gain <= tol * max(current, 1e-300):
            converged = True
            break

    return OptimizeResult(poses=poses, chi2=current, iterations=iterations,
                          converged=converged, chi2_history=tuple(history))


@dataclass(frozen=True)
class TrajectoryError:
    ate_rmse: float
    rpe_rmse: float
    aligned: bool = True


def align_2d(est_xy: np.ndarray, gt_xy: np.ndarray):
    """Least-squares rigid 2D alignment (rotation + translation) of est onto gt."""
    mu_e = est_xy.mean(axis=0)
    mu_g = gt_xy.mean(axis=0)
    cov = (gt_xy - mu_g).T @ (est_xy - mu_e)
    U, _, Vt = np.linalg.svd(cov)
    S = np.diag([1.0, np.sign(np.linalg.det(U @ Vt))])
    R = U @ S @ Vt
    t = mu_g - R @ mu_e
    return R, t


def ate_rpe(optimized: np.ndarray, gt: np.ndarray, rpe_delta: int = 10) -> TrajectoryError:
    """Absolute and relative trajectory error of a planar pose sequence.

    ATE is the translational RMSE after optimal rigid 2D alignment.  RPE is
    the RMSE of relative-pose translational error over all frame pairs
    separated by rpe_delta.
    """
    optimized = np.asarray(optimized, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if optimized.shape != gt.shape:
        raise ValueError("optimized and ground-truth trajectories must match in shape")
    R, t = align_2d(optimized[:, :2], gt[:, :2])
    aligned_xy = optimized[:, :2] @ R.T + t
    ate = float(np.sqrt(np.mean(np.sum((aligned_xy - gt[:, :2]) ** 2, axis=1))))

    n = optimized.shape[0]
    errs = []
    for i in range(n - rpe_delta):
        rel_est = se2_relative(optimized[i], optimized[i + rpe_delta])
        rel_gt = se2_relative(gt[i], gt[i + rpe_delta])
        # Error transform inv(rel_gt) o rel_est, translational part.
        c, s = math.cos(rel_gt[2]), math.sin(rel_gt[2])
        dx, dy = rel_est[0] - rel_gt[0], rel_est[1] - rel_gt[1]
        errs.append((c * dx + s * dy) ** 2 + (-s * dx + c * dy) ** 2)
    rpe = float(np.sqrt(np.mean(errs))) if errs else 0.0
    return TrajectoryError(ate_rmse=ate, rpe_rmse=rpe)


# -- g2o-style plain text I/O ---------------------------------------------

def save_g2o(graph: PoseGraph2, path: str | Path, comment: str = "") -> None:
    lines = [f"# {comment}"] if comment else []
    for i, pose in enumerate(graph.nodes):
        lines.append(f"VERTEX_SE2 {i} {pose[0]:.17g} {pose[1]:.17g} {pose[2]:.17g}")
    for e in graph.edges:
        m = e.info
        upper = (m[0, 0], m[0, 1], m[0, 2], m[1, 1], m[1, 2], m[2, 2])
        vals = " ".join(f"{v:.17g}" for v in (*e.z, *upper))
        lines.append(f"EDGE_SE2 {e.i} {e.j} {vals}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_g2o(path: str | Path) -> PoseGraph2:
    nodes = {}
    odom_edges, loop_edges = [], []
    odom_starts: set[int] = set()
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "VERTEX_SE2":
            nodes[int(parts[1])] = [float(v) for v in parts[2:5]]
        elif parts[0] == "EDGE_SE2":
            i, j = int(parts[1]), int(parts[2])
            z = np.array([float(v) for v in parts[3:6]])
            u = [float(v) for v in parts[6:12]]
            info = np.array([[u[0], u[1], u[2]], [u[1], u[3], u[4]], [u[2], u[4], u[5]]])
            edge = Edge2(i, j, z, info)
            # The format does not mark edge kinds; the first consecutive-index
            # edge per start node is the odometry edge, later ones are loops.
            if j == i + 1 and i not in odom_starts:
                odom_starts.add(i)
                odom_edges.append(edge)
            else:
                loop_edges.append(edge)
    ordered = np.array([nodes[i] for i in sorted(nodes)])
    return PoseGraph2(nodes=ordered, odom_edges=odom_edges, loop_edges=loop_edges)
