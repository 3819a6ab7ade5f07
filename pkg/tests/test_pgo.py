import math

import numpy as np
import pytest

from seqverify.errors import SingularSystemError
from seqverify.metrics import wrap_angle
from seqverify.pgo import (
    Edge2,
    PoseGraph2,
    ate_rpe,
    chi2,
    edge_jacobians,
    edge_residual,
    load_g2o,
    optimize,
    save_g2o,
    se2_relative,
    v2t,
    t2v,
)


def random_graph(rng, n_nodes=8, n_loops=3, consistent=False):
    gt = np.column_stack([
        np.cumsum(rng.uniform(0.3, 1.0, size=n_nodes)),
        np.cumsum(rng.uniform(-0.3, 0.3, size=n_nodes)),
        rng.uniform(-math.pi, math.pi, size=n_nodes),
    ])
    noise = 0.0 if consistent else 0.05
    info = np.diag([30.0, 30.0, 60.0])
    odom = [
        Edge2(i, i + 1, se2_relative(gt[i], gt[i + 1]) + rng.normal(0, noise, 3), info)
        for i in range(n_nodes - 1)
    ]
    loops = []
    for _ in range(n_loops):
        i = int(rng.integers(0, n_nodes - 1))
        j = int(rng.integers(i + 1, n_nodes))
        loops.append(Edge2(i, j, se2_relative(gt[i], gt[j]) + rng.normal(0, noise, 3), info))
    init = gt + rng.normal(0, 0.1, size=gt.shape)
    init[0] = gt[0]
    return PoseGraph2(nodes=init, odom_edges=odom, loop_edges=loops), gt


class TestJacobians:
    def test_match_central_differences_100_graphs(self):
        rng = np.random.default_rng(0)
        h = 1e-6
        for _ in range(100):
            xi = rng.uniform(-5, 5, size=3)
            xj = rng.uniform(-5, 5, size=3)
            z = rng.uniform(-1, 1, size=3)
            A, B = edge_jacobians(xi, xj, z)
            for var, J in ((0, A), (1, B)):
                num = np.zeros((3, 3))
                for c in range(3):
                    dp = np.zeros(3)
                    dp[c] = h
                    if var == 0:
                        rp = edge_residual(xi + dp, xj, z)
                        rm = edge_residual(xi - dp, xj, z)
                    else:
                        rp = edge_residual(xi, xj + dp, z)
                        rm = edge_residual(xi, xj - dp, z)
                    num[:, c] = (rp - rm) / (2 * h)
                scale = max(1.0, np.abs(J).max())
                assert np.abs(J - num).max() / scale < 1e-5


class TestOptimize:
    def test_consistent_chain_is_fixed_point(self):
        rng = np.random.default_rng(1)
        graph, _ = random_graph(rng, n_loops=0, consistent=True)
        # Initialize exactly at the odometry solution: zero residuals.
        poses = graph.nodes.copy()
        poses[0] = graph.nodes[0]
        chain = [graph.nodes[0]]
        for e in graph.odom_edges:
            prev = chain[-1]
            c, s = math.cos(prev[2]), math.sin(prev[2])
            chain.append(np.array([
                prev[0] + c * e.z[0] - s * e.z[1],
                prev[1] + s * e.z[0] + c * e.z[1],
                wrap_angle(prev[2] + e.z[2]),
            ]))
        graph.nodes = np.array(chain)
        result = optimize(graph)
        assert result.chi2 == pytest.approx(0.0, abs=1e-18)
        np.testing.assert_allclose(result.poses, graph.nodes, atol=1e-12)

    def test_chi2_non_increasing(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            graph, _ = random_graph(rng)
            before = chi2(graph.nodes, graph.edges)
            result = optimize(graph)
            assert result.chi2 <= before + 1e-12

    def test_perfect_loop_improves_ate(self):
        # Noisy odometry initialization; a perfect loop edge pulls the chain
        # back toward ground truth.
        rng = np.random.default_rng(3)
        n = 40
        gt = np.column_stack([
            np.linspace(0, 20, n),
            np.zeros(n),
            np.zeros(n),
        ])
        info = np.diag([50.0, 50.0, 100.0])
        odom_edges = [
            Edge2(i, i + 1, se2_relative(gt[i], gt[i + 1]) + rng.normal(0, 0.03, 3), info)
            for i in range(n - 1)
        ]
        init = [gt[0]]
        for e in odom_edges:
            prev = init[-1]
            c, s = math.cos(prev[2]), math.sin(prev[2])
            init.append(np.array([
                prev[0] + c * e.z[0] - s * e.z[1],
                prev[1] + s * e.z[0] + c * e.z[1],
                wrap_angle(prev[2] + e.z[2]),
            ]))
        init = np.array(init)
        loop = [Edge2(0, n - 1, se2_relative(gt[0], gt[n - 1]), np.diag([20.0, 20.0, 40.0]))]
        graph = PoseGraph2(nodes=init.copy(), odom_edges=odom_edges, loop_edges=loop)
        before = ate_rpe(init, gt).ate_rmse
        result = optimize(graph)
        after = ate_rpe(result.poses, gt).ate_rmse
        assert after < before

    def test_gauge_invariance(self):
        rng = np.random.default_rng(4)
        graph, gt = random_graph(rng)
        res_a = optimize(graph)
        ate_a = ate_rpe(res_a.poses, gt).ate_rmse

        # Rigidly transform initial poses and ground truth; measurements are
        # relative and unchanged.
        ang, tx, ty = 0.7, 5.0, -3.0
        c, s = math.cos(ang), math.sin(ang)

        def rigid(poses):
            out = poses.copy()
            out[:, 0] = c * poses[:, 0] - s * poses[:, 1] + tx
            out[:, 1] = s * poses[:, 0] + c * poses[:, 1] + ty
            out[:, 2] = wrap_angle(poses[:, 2] + ang)
            return out

        graph_b = PoseGraph2(nodes=rigid(graph.nodes),
                             odom_edges=graph.odom_edges,
                             loop_edges=graph.loop_edges)
        res_b = optimize(graph_b)
        ate_b = ate_rpe(res_b.poses, rigid(gt)).ate_rmse
        assert abs(ate_a - ate_b) < 1e-9

    def test_singular_system_raises(self):
        # Valid SPD edges on a full odometry chain cannot produce a singular
        # gauged system, so the detection path is exercised directly.
        import scipy.sparse as sp
        from seqverify.pgo import _solve_gauged

        H = sp.csc_matrix(np.diag([10.0, 10.0, 0.0]))
        with pytest.raises(SingularSystemError):
            _solve_gauged(H, np.array([1.0, 2.0, 0.5]))
        with pytest.raises(SingularSystemError):
            _solve_gauged(H, np.zeros(3))


def test_false_edge_damage_regression():
    # Fixed-seed scenario: adding one aliased loop edge with an offset of
    # at least 5 m never decreases ATE and lifts it by >= 0.5 m.
    from seqverify.pgo import build_graph
    from seqverify.sprt import LoopSegment
    from seqverify.synth import WorldConfig, generate_world

    world = generate_world(WorldConfig(seed=0))

    def one_pair_segment(q, t):
        return LoopSegment(query_span=(q, q), db_span=(t, t), llr_sum=5.0,
                           length=1, score=5.0, pairs=((q, t),),
                           query=q, candidate=t)

    true_segs = [one_pair_segment(q, t)
                 for q, t in sorted(world.labels.loop_pairs)[::30]]
    base = optimize(build_graph(world, true_segs))
    ate_base = ate_rpe(base.poses, world.gt_poses).ate_rmse

    offset = world.config.aisle_spacing
    far_alias = [(q, t) for q, t in sorted(world.alias_pairs)
                 if abs(int(world.aisle_ids[q]) - int(world.aisle_ids[t])) * offset >= 5.0]
    q, t = far_alias[len(far_alias) // 2]
    damaged = optimize(build_graph(world, true_segs + [one_pair_segment(q, t)]))
    ate_damaged = ate_rpe(damaged.poses, world.gt_poses).ate_rmse

    assert ate_damaged >= ate_base
    assert ate_damaged - ate_base >= 0.5


class TestAteRpe:
    def test_identical_trajectories_zero(self):
        rng = np.random.default_rng(5)
        poses = rng.uniform(-5, 5, size=(30, 3))
        err = ate_rpe(poses, poses)
        assert err.ate_rmse == pytest.approx(0.0, abs=1e-12)
        assert err.rpe_rmse == pytest.approx(0.0, abs=1e-12)

    def test_alignment_invariance(self):
        rng = np.random.default_rng(6)
        gt = rng.uniform(-5, 5, size=(25, 3))
        ang, tx, ty = math.radians(30.0), 2.0, -1.0
        c, s = math.cos(ang), math.sin(ang)
        moved = gt.copy()
        moved[:, 0] = c * gt[:, 0] - s * gt[:, 1] + tx
        moved[:, 1] = s * gt[:, 0] + c * gt[:, 1] + ty
        moved[:, 2] = wrap_angle(gt[:, 2] + ang)
        assert ate_rpe(moved, gt).ate_rmse == pytest.approx(0.0, abs=1e-12)

    def test_constant_bias_rpe_closed_form(self):
        n = 50
        gt = np.column_stack([np.linspace(0, 10, n), np.zeros(n), np.zeros(n)])
        bias = 0.07
        est = gt.copy()
        est[:, 0] += bias * np.arange(n)
        err = ate_rpe(est, gt, rpe_delta=1)
        assert err.rpe_rmse == pytest.approx(bias, rel=1e-9)


def test_se2_helpers_compose():
    rng = np.random.default_rng(7)
    a = rng.uniform(-3, 3, size=3)
    b = rng.uniform(-3, 3, size=3)
    rel = se2_relative(a, b)
    recomposed = t2v(v2t(a) @ v2t(rel))
    np.testing.assert_allclose(recomposed[:2], b[:2], atol=1e-12)
    assert wrap_angle(recomposed[2] - b[2]) == pytest.approx(0.0, abs=1e-12)


def test_g2o_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    graph, _ = random_graph(rng)
    path = tmp_path / "graph.g2o"
    save_g2o(graph, path)
    back = load_g2o(path)
    np.testing.assert_allclose(back.nodes, graph.nodes, atol=1e-15)
    assert len(back.odom_edges) == len(graph.odom_edges)
    assert len(back.loop_edges) == len(graph.loop_edges)
    for e1, e2 in zip(back.loop_edges, graph.loop_edges):
        np.testing.assert_allclose(e1.z, e2.z, atol=1e-15)
        np.testing.assert_allclose(e1.info, e2.info, atol=1e-15)
