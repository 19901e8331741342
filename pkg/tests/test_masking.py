import numpy as np
import pytest

from crossmask.engine import ShapeError, Tensor
from crossmask.geometry import BallPoint, Curvature, hyperbolic_similarity, poincare_distance
from crossmask.masking import (
    MOTION, SPATIAL, TEMPORAL_S1, TEMPORAL_S2,
    CriteriaField, MaskPlan, attention_correlation, cross_group,
    extract_and_concat, gumbel_unmask, hierarchy_scores,
    motion_intensity_scores, temporal_scores_attention,
    temporal_scores_hyperbolic, unmask_count,
)
from crossmask.refine import SkeletonSequence, TokenGrid
from crossmask.data import PARENTS

C1 = Curvature(-1.0)


def ball_grid(rng, frames, joints, dim, scale=0.3):
    pts = rng.normal(size=(frames, joints, dim))
    return pts / (1.0 + np.linalg.norm(pts, axis=-1, keepdims=True) / scale) * scale


# -- cross grouping ---------------------------------------------------------------

def test_cross_group_shapes():
    grid = TokenGrid(values=Tensor(np.arange(24 * 18 * 2, dtype=float).reshape(24, 18, 2)),
                     frame_origin=tuple((3 * k, 3 * k + 2) for k in range(24)))
    odd, even = cross_group(grid)
    assert odd.values.shape == (12, 18, 2)
    assert even.values.shape == (12, 18, 2)
    assert odd.frame_origin[0] == (3, 5)
    assert even.frame_origin[0] == (0, 2)


def test_cross_group_round_trip():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(8, 3, 4))
    odd, even = cross_group(TokenGrid(values=Tensor(v)))
    rebuilt = np.empty_like(v)
    rebuilt[1::2] = odd.values.data
    rebuilt[0::2] = even.values.data
    assert np.array_equal(rebuilt, v)


def test_cross_group_constant_grid():
    v = np.full((6, 2, 3), 1.5)
    odd, even = cross_group(TokenGrid(values=Tensor(v)))
    assert np.array_equal(odd.values.data, even.values.data)


def test_cross_group_odd_frames_rejected():
    with pytest.raises(ShapeError):
        cross_group(TokenGrid(values=Tensor(np.zeros((5, 2, 3)))))


# -- spatial hierarchy ---------------------------------------------------------------

def test_hierarchy_all_joints_at_root():
    root = np.zeros((4, 3))
    part = np.zeros((4, 5, 3))
    field = hierarchy_scores(part, root, C1)
    assert field.kind == SPATIAL
    assert np.array_equal(field.scores, np.zeros((4, 5)))


def test_hierarchy_coincident_joints_off_root():
    rng = np.random.default_rng(1)
    joint = rng.normal(size=3) * 0.1
    part = np.tile(joint, (4, 5, 1))
    root = np.zeros((4, 3))
    field = hierarchy_scores(part, root, C1)
    d = poincare_distance(BallPoint(joint, C1), BallPoint(np.zeros(3), C1))
    assert np.allclose(field.scores, d, atol=1e-10)


def test_hierarchy_three_joint_hand_case():
    # frame of 3 collinear joints; brute-force pairwise oracle
    joints = np.array([[0.0, 0.0], [0.5, 0.0], [0.8, 0.0]])
    part = joints[None]
    root = np.zeros((1, 2))
    field = hierarchy_scores(part, root, C1)
    expected = np.zeros(3)
    pts = [BallPoint(j, C1) for j in joints]
    origin = BallPoint(np.zeros(2), C1)
    for i in range(3):
        expected[i] = poincare_distance(pts[i], origin)
        for j in range(3):
            expected[i] += poincare_distance(pts[i], pts[j])
    assert np.allclose(field.scores[0], expected, atol=1e-10)


def test_hierarchy_permutation_equivariance():
    rng = np.random.default_rng(2)
    part = ball_grid(rng, 3, 6, 4)
    root = ball_grid(rng, 3, 1, 4)[:, 0]
    base = hierarchy_scores(part, root, C1).scores
    perm = rng.permutation(6)
    permuted = hierarchy_scores(part[:, perm], root, C1).scores
    assert np.allclose(permuted, base[:, perm], atol=1e-12)


# -- temporal strategy 1 ----------------------------------------------------------------

def test_strategy1_static_joint_zero():
    part = np.tile(np.array([0.2, 0.1]), (6, 3, 1))  # all frames identical
    field = temporal_scores_hyperbolic(part, C1)
    assert field.kind == TEMPORAL_S1
    assert np.array_equal(field.scores, np.zeros((3, 6)))


def test_strategy1_two_frame_case():
    a, b = np.array([0.1, 0.0]), np.array([0.4, 0.2])
    part = np.stack([a, b])[:, None, :]             # 2 frames, 1 joint
    field = temporal_scores_hyperbolic(part, C1)
    s = hyperbolic_similarity(BallPoint(a, C1), BallPoint(b, C1))
    assert np.allclose(field.scores, [[s, s]], atol=1e-12)


def test_strategy1_diagonal_zero_and_nonpositive():
    rng = np.random.default_rng(3)
    part = ball_grid(rng, 5, 4, 3)
    field = temporal_scores_hyperbolic(part, C1)
    assert np.all(field.scores <= 0.0)


# -- temporal strategy 2 ----------------------------------------------------------------

def test_strategy2_zero_maps_uniform():
    rng = np.random.default_rng(4)
    part = rng.normal(size=(6, 3, 5))
    z = np.zeros((5, 5))
    field = temporal_scores_attention(part, z, np.zeros(5), z, np.zeros(5))
    assert field.kind == TEMPORAL_S2
    assert np.allclose(field.scores, 1.0, atol=1e-12)  # uniform rows sum to 1


def test_strategy2_rows_sum_to_one():
    rng = np.random.default_rng(5)
    part = rng.normal(size=(8, 4, 6))
    w = rng.normal(size=(6, 6))
    gcm = attention_correlation(part, w, np.zeros(6), w.T, np.zeros(6))
    assert gcm.shape == (4, 8, 8)
    assert np.all(np.abs(gcm.sum(axis=-1) - 1.0) < 1e-12)


def test_strategy2_hand_computed_scalar_case():
    # 2 frames, 1 joint, 1 channel, scalar maps psi=2, phi=3
    part = np.array([[[1.0]], [[2.0]]])
    field = temporal_scores_attention(part, np.array([[2.0]]), np.zeros(1),
                                      np.array([[3.0]]), np.zeros(1), axis="first")
    q = np.array([2.0, 4.0])
    k = np.array([3.0, 6.0])
    logits = np.outer(q, k) / 1.0
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    gcm = e / e.sum(axis=1, keepdims=True)
    assert np.allclose(field.scores[0], gcm.sum(axis=0), atol=1e-12)


# -- motion intensity -------------------------------------------------------------------

def seq_from(coords):
    return SkeletonSequence(coords=coords, joint_tree=np.array(PARENTS))


def test_motion_static_zero():
    coords = np.ones((12, 25, 3))
    f = motion_intensity_scores(seq_from(coords), r=3, parity="odd")
    assert f.kind == MOTION
    assert np.array_equal(f.scores, np.zeros((2, 25)))


def test_motion_uniform_translation():
    coords = np.zeros((12, 25, 3))
    coords += np.arange(12)[:, None, None] * 0.1
    for parity in ("odd", "even"):
        f = motion_intensity_scores(seq_from(coords), r=3, parity=parity)
        # every joint sees the same displacement, row by row
        assert np.allclose(f.scores, f.scores[:, :1], atol=1e-12)


def test_motion_single_moving_joint():
    coords = np.zeros((12, 25, 3))
    coords[:, 5, 0] = np.arange(12) * 0.2
    for parity in ("odd", "even"):
        f = motion_intensity_scores(seq_from(coords), r=3, parity=parity)
        nonzero = np.nonzero(f.scores.sum(axis=0))[0]
        assert np.array_equal(nonzero, [5])


def test_motion_needs_two_frames():
    with pytest.raises(ValueError):
        motion_intensity_scores(seq_from(np.zeros((1, 25, 3))), r=1, parity="odd")


# -- gumbel-max sampling -----------------------------------------------------------------

def test_gumbel_near_argmax_limit():
    scores = np.array([10.0, 0.0, 0.0, 0.0])
    rng = np.random.default_rng(0)
    hits = sum(gumbel_unmask(scores, 1, 0.01, rng)[0] == 0 for _ in range(1000))
    assert hits >= 990


def test_gumbel_uniform_distribution_chi2():
    from scipy.stats import chi2
    l, draws = 6, 10000
    counts = np.zeros(l)
    scores = np.ones(l)
    rng = np.random.default_rng(12345)
    for _ in range(draws):
        counts[gumbel_unmask(scores, 1, 0.9, rng)[0]] += 1
    expected = draws / l
    stat = float(np.sum((counts - expected) ** 2 / expected))
    assert stat < chi2.ppf(0.99, df=l - 1), f"chi2 stat {stat}"


def test_gumbel_m_equals_l():
    idx = gumbel_unmask(np.array([3.0, 1.0, 2.0]), 3, 0.5, np.random.default_rng(0))
    assert np.array_equal(idx, [0, 1, 2])


def test_gumbel_zero_scores_uniform_fallback():
    counts = np.zeros(4)
    rng = np.random.default_rng(6)
    for _ in range(2000):
        counts[gumbel_unmask(np.zeros(4), 1, 0.9, rng)[0]] += 1
    assert counts.min() > 2000 / 4 * 0.7


def test_gumbel_scale_invariance_of_selection():
    rng_scores = np.random.default_rng(7)
    scores = rng_scores.random(20) * 5
    for seed in (0, 1, 2, 3):
        base = gumbel_unmask(scores, 4, 0.01, np.random.default_rng(seed))
        for k in (0.001, 7.0, 1234.5):
            scaled = gumbel_unmask(scores * k, 4, 0.01, np.random.default_rng(seed))
            assert np.array_equal(base, scaled)


def test_gumbel_negative_scores_shifted():
    # strategy-1 style scores are <= 0; shifting must keep them usable
    scores = np.array([-5.0, -1.0, -3.0, 0.0])
    idx = gumbel_unmask(scores, 1, 0.01, np.random.default_rng(0))
    assert idx[0] == 3       # the largest (least negative) wins at low tau


def test_gumbel_invert_flag():
    scores = np.array([9.0, 1.0, 1.0, 1.0])
    picks = set()
    rng = np.random.default_rng(1)
    for _ in range(50):
        picks.add(int(gumbel_unmask(scores, 1, 0.01, rng, invert=True)[0]))
    assert 0 not in picks    # the dominant score becomes the most masked


def test_gumbel_deterministic_top_m():
    scores = np.array([0.3, 0.9, 0.1, 0.8, 0.5])
    idx = gumbel_unmask(scores, 2, 0.9, np.random.default_rng(0), use_gumbel=False)
    assert np.array_equal(idx, [1, 3])


def test_gumbel_validation_errors():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        gumbel_unmask(np.ones(3), 4, 0.9, rng)
    with pytest.raises(ValueError):
        gumbel_unmask(np.ones(3), 1, 0.0, rng)


def test_gumbel_reproducible_given_seed():
    scores = np.random.default_rng(3).random(30)
    a = gumbel_unmask(scores, 5, 0.9, np.random.default_rng(42))
    b = gumbel_unmask(scores, 5, 0.9, np.random.default_rng(42))
    assert np.array_equal(a, b)


# -- extraction and the mask plan -------------------------------------------------------

def test_unmask_count_examples():
    assert unmask_count(216, 0.9) == 22
    assert unmask_count(6, 0.9) == 1
    assert unmask_count(54, 0.5) == 27


def test_extract_no_masking_preserves_order():
    rng = np.random.default_rng(8)
    p_o = Tensor(rng.normal(size=(2, 3, 4)))
    p_e = Tensor(rng.normal(size=(2, 3, 4)))
    idx = np.arange(6)
    tokens, plan = extract_and_concat(p_o, p_e, idx, idx)
    assert tokens.shape == (12, 4)
    assert np.array_equal(tokens.data[:6], p_o.data.reshape(6, 4))
    assert np.array_equal(tokens.data[6:], p_e.data.reshape(6, 4))
    assert np.array_equal(plan.idx_umask, np.arange(12))


def test_extract_default_config_shapes():
    rng = np.random.default_rng(9)
    p_o = Tensor(rng.normal(size=(12, 18, 8)))
    p_e = Tensor(rng.normal(size=(12, 18, 8)))
    m = unmask_count(216, 0.9)
    idx_t = np.sort(rng.choice(216, size=m, replace=False))
    idx_s = np.sort(rng.choice(216, size=m, replace=False))
    tokens, plan = extract_and_concat(p_o, p_e, idx_t, idx_s)
    assert tokens.shape == (44, 8)
    assert plan.binary_masks["odd"].sum() == 22
    assert plan.binary_masks["even"].sum() == 22
    assert len(np.unique(plan.idx_umask)) == 44
    assert np.all(plan.idx_umask[m:] >= 216)


def test_extract_gathers_expected_rows():
    p_o = Tensor(np.arange(12, dtype=float).reshape(6, 2))
    p_e = Tensor(np.arange(12, 24, dtype=float).reshape(6, 2))
    tokens, plan = extract_and_concat(p_o, p_e, [1, 4], [0, 5])
    assert np.array_equal(tokens.data, [[2, 3], [8, 9], [12, 13], [22, 23]])
    assert np.array_equal(plan.idx_umask, [1, 4, 6, 11])


def test_extract_duplicate_indices_rejected():
    p = Tensor(np.zeros((6, 2)))
    with pytest.raises(ValueError):
        extract_and_concat(p, p, [1, 1], [0, 2])


def test_mask_plan_offset_rule_sweep():
    rng = np.random.default_rng(10)
    for l in (54, 216):
        for ratio in (0.5, 0.75, 0.9):
            m = unmask_count(l, ratio)
            idx_t = np.sort(rng.choice(l, size=m, replace=False))
            idx_s = np.sort(rng.choice(l, size=m, replace=False))
            plan = MaskPlan(M=m, l=l, idx_umask_t=idx_t, idx_umask_s=idx_s)
            assert len(plan.idx_umask) == 2 * m
            assert len(np.unique(plan.idx_umask)) == 2 * m
            assert np.all(plan.idx_umask[:m] < l)
            assert np.all(plan.idx_umask[m:] >= l)
            assert len(plan.masked_idx) == 2 * (l - m)


def test_criteria_field_flatten_orientation():
    spatial = CriteriaField(scores=np.arange(6).reshape(2, 3), kind=SPATIAL)
    assert np.array_equal(spatial.flat(), [0, 1, 2, 3, 4, 5])
    temporal = CriteriaField(scores=np.arange(6).reshape(3, 2), kind=TEMPORAL_S1)
    # [J', F] transposes to frame-major order
    assert np.array_equal(temporal.flat(), [0, 2, 4, 1, 3, 5])
