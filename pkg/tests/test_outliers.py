import numpy as np
import pytest

from voxreg.correspondences import CorrespondenceSet
from voxreg.exceptions import (
    ConsensusTooSmall,
    DegenerateEdge,
    NoFeasibleNode,
    TooFewCorrespondences,
)
from voxreg.geometry import exp_se3, rotation_about_axis
from voxreg.outliers import (
    RemovalParams,
    loose_constraint_f1,
    node_reliabilities,
    node_weight,
    remove_outliers,
    select_top_nodes,
    theta_consensus,
    tight_constraint_f2,
)
from voxreg.synthetic import SyntheticSpec, generate

from oracles import brute_node_reliabilities, grid_theta_consensus

ELL = 0.05
EPS = 2 * ELL


def exact_pair_set(rng, n, transform=None, scale=2.0):
    """Noise-free correspondences under one rigid motion."""
    if transform is None:
        transform = exp_se3([0.4, -0.2, 0.1, 0.2, 0.1, -0.3])
    p = rng.uniform(0.0, scale, size=(n, 3))
    q = transform.inverse().apply(p)
    return CorrespondenceSet(p, q), transform


def test_node_weight_values():
    assert node_weight(0.0, ELL) == 1.0
    assert node_weight(np.sqrt(0.6 * ELL), ELL) == pytest.approx(np.exp(-1.0))
    arr = node_weight(np.array([0.0, 0.1]), ELL)
    assert arr[0] == 1.0 and 0 < arr[1] < 1


def test_two_exact_correspondences_reliability_one():
    rng = np.random.default_rng(0)
    corr, _ = exact_pair_set(rng, 2)
    rel = node_reliabilities(corr, RemovalParams(ELL, 3))
    np.testing.assert_allclose(rel, [1.0, 1.0])


def test_gross_outlier_scores_zero():
    rng = np.random.default_rng(1)
    corr, transform = exact_pair_set(rng, 5)
    p = np.vstack([corr.p, [[0.5, 0.5, 0.5]]])
    q = np.vstack([corr.q, transform.inverse().apply([0.5, 0.5, 0.5]) + 5.0])
    corr6 = CorrespondenceSet(p, q)
    rel = node_reliabilities(corr6, RemovalParams(ELL, 3))
    assert rel[5] == 0.0
    np.testing.assert_allclose(rel[:5], 4.0)  # 4 exact partners each, weight 1


def test_reliabilities_match_brute_force_exactly():
    rng = np.random.default_rng(2)
    params = RemovalParams(ELL, 3)
    for _ in range(50):
        k = int(rng.integers(2, 13))
        corr = CorrespondenceSet(
            rng.uniform(0, 1, size=(k, 3)), rng.uniform(0, 1, size=(k, 3))
        )
        rel = node_reliabilities(corr, params)
        brute = brute_node_reliabilities(corr.p, corr.q, ELL, EPS)
        assert np.array_equal(rel, brute)


def test_reliabilities_requires_two():
    corr = CorrespondenceSet(np.zeros((1, 3)), np.zeros((1, 3)))
    with pytest.raises(TooFewCorrespondences):
        node_reliabilities(corr, RemovalParams(ELL, 3))


def test_select_top_nodes_identity_and_ties():
    rng = np.random.default_rng(3)
    corr, _ = exact_pair_set(rng, 6)
    rel = np.array([5.0, 1.0, 3.0, 3.0, 2.0, 4.0])
    full = select_top_nodes(corr, rel, 6)
    assert np.array_equal(full.source_index, corr.source_index)
    ties = select_top_nodes(corr, np.ones(6), 3)
    assert ties.source_index.tolist() == [0, 1, 2]  # tie-break: lower index
    top3 = select_top_nodes(corr, rel, 3)
    assert top3.source_index.tolist() == [0, 2, 5]


def test_selection_raises_inlier_fraction():
    scene = generate(
        SyntheticSpec(
            n_points=6000, inliers=86, outlier_rate=0.957, noise_sigma=0.01, seed=5
        )
    )
    corr, labels = scene.correspondences, scene.labels
    params = RemovalParams(ELL, int(0.7 * len(corr)))
    rel = node_reliabilities(corr, params)
    selected = select_top_nodes(corr, rel, params.k_opt)
    by_index = dict(zip(corr.source_index.tolist(), labels.tolist()))
    sel_labels = np.array([by_index[i] for i in selected.source_index.tolist()])
    assert sel_labels.mean() > labels.mean()


def _edge_and_node(corr, i, j, k):
    return (
        (corr.p[i], corr.p[j]),
        (corr.q[i], corr.q[j]),
        corr.p[k],
        corr.q[k],
    )


def test_f1_exact_inliers_hit_minus_epsilon():
    rng = np.random.default_rng(4)
    corr, _ = exact_pair_set(rng, 5)
    edge_p, edge_q, node_p, node_q = _edge_and_node(corr, 0, 1, 2)
    assert loose_constraint_f1(edge_p, edge_q, node_p, node_q, EPS) == pytest.approx(
        -EPS, abs=1e-12
    )


def test_f1_displacement_along_edge():
    p_i, p_j = np.zeros(3), np.array([1.0, 0.0, 0.0])
    node = np.array([0.3, 0.4, 0.0])
    value = loose_constraint_f1(
        (p_i, p_j), (p_i, p_j), node, node + [2 * EPS, 0.0, 0.0], EPS
    )
    assert value == pytest.approx(EPS, abs=1e-12)


def test_f1_matches_explicit_projection_recomputation():
    rng = np.random.default_rng(5)
    for _ in range(100):
        pts = rng.normal(size=(6, 3))
        qts = rng.normal(size=(6, 3))
        value = loose_constraint_f1((pts[0], pts[1]), (qts[0], qts[1]), pts[2], qts[2], EPS)
        ep, eq = pts[1] - pts[0], qts[1] - qts[0]
        proj_p = abs(np.dot(pts[2] - pts[0], ep / np.linalg.norm(ep)))
        proj_q = abs(np.dot(qts[2] - qts[0], eq / np.linalg.norm(eq)))
        assert value == pytest.approx(abs(proj_p - proj_q) - EPS, abs=1e-12)


def test_f1_degenerate_edge():
    z = np.zeros(3)
    with pytest.raises(DegenerateEdge):
        loose_constraint_f1((z, z), (z, np.ones(3)), np.ones(3), np.ones(3), EPS)


def test_f2_exact_inliers_and_chord_formula():
    # Construct directly in the aligned frame: q side pre-rolled by -theta
    # about z, so rolling by theta must cancel exactly.
    theta = 0.7
    a = np.array([0.6, 0.3, 0.4])
    roll = rotation_about_axis(-theta, [0.0, 0.0, 1.0])
    edge_p = (np.zeros(3), np.array([0.0, 0.0, 1.0]))
    edge_q = (np.zeros(3), np.array([0.0, 0.0, 1.0]))
    value = tight_constraint_f2(edge_p, edge_q, a, roll @ a, theta, EPS)
    assert value == pytest.approx(-EPS, abs=1e-12)

    # Off by pi at radius 1: residual is the full chord 2*r*sin(pi/2).
    b = np.array([1.0, 0.0, 0.5])
    value = tight_constraint_f2(edge_p, edge_q, b, b, np.pi, EPS)
    assert value == pytest.approx(2.0 * 1.0 * np.sin(np.pi / 2) - EPS, abs=1e-12)


def test_f2_pass_implies_f1_pass():
    # Half the instances are rolled-with-jitter so the tight constraint
    # actually fires; the implication must hold whenever it does.
    rng = np.random.default_rng(6)
    hits = 0
    for trial in range(300):
        pts = rng.normal(size=(6, 3))
        if trial % 2:
            roll = rotation_about_axis(rng.uniform(-np.pi, np.pi), [0.0, 0.0, 1.0])
            qts = pts @ roll.T + rng.normal(scale=0.05, size=(6, 3))
        else:
            qts = rng.normal(size=(6, 3))
        theta = rng.uniform(-np.pi, np.pi)
        f2 = tight_constraint_f2((pts[0], pts[1]), (qts[0], qts[1]), pts[2], qts[2], theta, 0.5)
        if f2 < 0:
            hits += 1
            f1 = loose_constraint_f1((pts[0], pts[1]), (qts[0], qts[1]), pts[2], qts[2], 0.5)
            assert f1 < 0
    assert hits > 10  # the implication was actually exercised


def _rolled_cluster(rng, theta, n, axis_z=True):
    pts = rng.uniform(-1.0, 1.0, size=(n, 3))
    pts[:, 2] = rng.uniform(0.1, 0.9, size=n)
    roll = rotation_about_axis(-theta, [0.0, 0.0, 1.0])
    return pts, pts @ roll.T


def test_theta_consensus_exact_inliers_recover_roll():
    rng = np.random.default_rng(7)
    theta_true = -1.234
    nodes_p, nodes_q = _rolled_cluster(rng, theta_true, 12)
    edge = (np.zeros(3), np.array([0.0, 0.0, 1.0]))
    theta_star, consensus = theta_consensus(edge, edge, nodes_p, nodes_q, EPS)
    assert consensus.size == 12
    assert theta_star == pytest.approx(theta_true, abs=1e-6)


def test_theta_consensus_largest_cluster_wins():
    rng = np.random.default_rng(8)
    eps = 0.05
    pa, qa = _rolled_cluster(rng, 0.5, 3)
    pb, qb = _rolled_cluster(rng, -1.5, 3)
    pc, qc = _rolled_cluster(rng, 2.2, 5)
    nodes_p = np.vstack([pa, pb, pc])
    nodes_q = np.vstack([qa, qb, qc])
    edge = (np.zeros(3), np.array([0.0, 0.0, 1.0]))
    theta_star, consensus = theta_consensus(edge, edge, nodes_p, nodes_q, eps)
    assert sorted(consensus.tolist()) == [6, 7, 8, 9, 10]
    assert theta_star == pytest.approx(2.2, abs=0.05)
    size, theta_grid = grid_theta_consensus(edge, edge, nodes_p, nodes_q, eps)
    assert size == consensus.size
    assert theta_grid == pytest.approx(theta_star, abs=0.05)


def test_theta_consensus_axis_node_always_feasible():
    rng = np.random.default_rng(9)
    nodes_p, nodes_q = _rolled_cluster(rng, 1.0, 3)
    axis_node = np.array([[0.0, 0.0, 0.4]])
    edge = (np.zeros(3), np.array([0.0, 0.0, 1.0]))
    _, consensus = theta_consensus(
        edge, edge, np.vstack([nodes_p, axis_node]), np.vstack([nodes_q, axis_node]), EPS
    )
    assert 3 in consensus.tolist()
    assert consensus.size == 4


def test_theta_consensus_no_feasible_node():
    edge = (np.zeros(3), np.array([0.0, 0.0, 1.0]))
    nodes_p = np.array([[0.0, 0.0, 5.0]])  # axial mismatch far beyond epsilon
    nodes_q = np.array([[0.0, 0.0, -5.0]])
    with pytest.raises(NoFeasibleNode):
        theta_consensus(edge, edge, nodes_p, nodes_q, EPS)


def test_theta_consensus_matches_grid_oracle_on_random_instances():
    rng = np.random.default_rng(10)
    edge = (np.zeros(3), np.array([0.0, 0.0, 1.0]))
    for _ in range(100):
        k = int(rng.integers(3, 13))
        nodes_p = rng.uniform(-1, 1, size=(k, 3))
        nodes_q = rng.uniform(-1, 1, size=(k, 3))
        eps = 0.3
        try:
            _, consensus = theta_consensus(edge, edge, nodes_p, nodes_q, eps)
            size = consensus.size
        except NoFeasibleNode:
            size = 0
        grid_size, _ = grid_theta_consensus(edge, edge, nodes_p, nodes_q, eps)
        assert size == grid_size


def test_remove_outliers_keeps_all_exact_inliers():
    rng = np.random.default_rng(11)
    corr, _ = exact_pair_set(rng, 100)
    c2 = remove_outliers(corr, RemovalParams(ELL, 100))
    assert len(c2) == 100
    assert c2.stage == "C2"


def test_remove_outliers_on_95_percent_synthetic():
    for seed in (0, 1, 2):
        scene = generate(
            SyntheticSpec(
                n_points=6000, inliers=30, outlier_rate=0.95, noise_sigma=0.01, seed=seed
            )
        )
        corr, labels = scene.correspondences, scene.labels
        c2 = remove_outliers(corr, RemovalParams(ELL, int(0.7 * len(corr))))
        by_index = dict(zip(corr.source_index.tolist(), labels.tolist()))
        c2_labels = np.array([by_index[i] for i in c2.source_index.tolist()])
        precision = c2_labels.mean()
        recall = c2_labels.sum() / labels.sum()
        assert precision >= 0.99, (seed, precision)
        assert recall >= 0.90, (seed, recall)


def test_remove_outliers_monotone_subsets():
    scene = generate(
        SyntheticSpec(n_points=6000, inliers=50, outlier_rate=0.8, noise_sigma=0.01, seed=3)
    )
    corr = scene.correspondences
    params = RemovalParams(ELL, int(0.7 * len(corr)))
    rel = node_reliabilities(corr, params)
    selected = select_top_nodes(corr, rel, params.k_opt)
    c2 = remove_outliers(corr, params)
    assert set(c2.source_index) <= set(selected.source_index) <= set(corr.source_index)


def test_halving_resolution_never_grows_consensus():
    for seed in range(6):
        scene = generate(
            SyntheticSpec(
                n_points=6000, inliers=40, outlier_rate=0.9, noise_sigma=0.01, seed=seed
            )
        )
        corr = scene.correspondences
        k = int(0.7 * len(corr))
        big = remove_outliers(corr, RemovalParams(ELL, k))
        small = remove_outliers(corr, RemovalParams(ELL / 2, k))
        assert len(small) <= len(big)


def test_rigid_invariance_of_constraints():
    rng = np.random.default_rng(12)
    corr, _ = exact_pair_set(rng, 8)
    motion = exp_se3([0.3, 0.5, -0.2, 0.4, -0.1, 0.6])
    moved = CorrespondenceSet(motion.apply(corr.p), motion.apply(corr.q))
    params = RemovalParams(ELL, 8)
    np.testing.assert_allclose(
        node_reliabilities(corr, params), node_reliabilities(moved, params), atol=1e-9
    )
    for args in ((0, 1, 2), (2, 4, 6), (1, 5, 7)):
        f1_a = loose_constraint_f1(*_edge_and_node(corr, *args), EPS)
        f1_b = loose_constraint_f1(*_edge_and_node(moved, *args), EPS)
        assert f1_a == pytest.approx(f1_b, abs=1e-9)
        f2_a = tight_constraint_f2(*_edge_and_node(corr, *args), 0.3, EPS)
        f2_b = tight_constraint_f2(*_edge_and_node(moved, *args), 0.3, EPS)
        assert f2_a == pytest.approx(f2_b, abs=1e-9)


def test_remove_outliers_requires_three():
    corr = CorrespondenceSet(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(TooFewCorrespondences):
        remove_outliers(corr, RemovalParams(ELL, 3))


def test_remove_outliers_all_degenerate_edges():
    corr = CorrespondenceSet(np.zeros((4, 3)), np.zeros((4, 3)))
    with pytest.raises(ConsensusTooSmall):
        remove_outliers(corr, RemovalParams(ELL, 4))
