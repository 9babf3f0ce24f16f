import math

import numpy as np
import pytest

from vmoba.errors import ShapeMismatchError
from vmoba.partition import LatentGeometry, PartitionSpec, Scheme, build_layout
from vmoba.selection import (
    Rule,
    Scope,
    SelectionMask,
    SelectionPolicy,
    SimilarityMatrix,
    select,
    select_global_threshold,
    select_global_topk,
    select_local_threshold,
    select_local_topk,
    similarity,
)
from vmoba.tensor import softmax


def make_uniform_layout(s, blocks):
    """1D layout with `blocks` temporal blocks of s // blocks tokens."""
    frames = blocks
    return build_layout(LatentGeometry(frames, 1, s // frames), PartitionSpec.temporal(1))


def brute_force_global_threshold(scores, tau):
    flat = scores.reshape(-1)
    probs = np.exp(flat - flat.max())
    probs /= probs.sum()
    pairs = sorted(range(flat.size), key=lambda i: (-flat[i], i))
    chosen, total = [], 0.0
    for i in pairs:
        if total >= tau - 1e-12:
            break
        chosen.append(i)
        total += probs[i]
    mask = np.zeros(flat.size, dtype=bool)
    mask[chosen] = True
    return mask.reshape(scores.shape)


# --- POLICY ---
def test_policy_validation():
    with pytest.raises(ValueError):
        SelectionPolicy.global_threshold(0.0)
    with pytest.raises(ValueError):
        SelectionPolicy.local_threshold(1.5)
    with pytest.raises(ValueError):
        SelectionPolicy.local_topk(0)
    assert SelectionPolicy.global_threshold().label == "threshold + global"


def test_policy_per_scheme_k():
    policy = SelectionPolicy(
        Scope.LOCAL, Rule.TOPK, k_per_scheme=((Scheme.TEMPORAL_1D, 2), (Scheme.SPATIAL_2D, 6))
    )
    assert policy.for_scheme(Scheme.SPATIAL_2D).k == 6
    with pytest.raises(ValueError):
        policy.for_scheme(Scheme.SPATIO_TEMPORAL_3D)


# --- SIMILARITY ---
def test_zero_query_gives_zero_scores():
    S = similarity(np.zeros((4, 3)), np.ones((2, 3)))
    assert np.all(S.scores == 0)


def test_orthonormal_means_give_basis_rows():
    means = np.eye(4)[:3]
    S = similarity(means[[1]], means, scaled=False)
    np.testing.assert_array_equal(S.scores, [[0.0, 1.0, 0.0]])


def test_similarity_scaling_and_oracle():
    rng = np.random.default_rng(0)
    q, means = rng.standard_normal((6, 16)), rng.standard_normal((3, 16))
    expected = np.array([[sum(q[i, p] * means[j, p] for p in range(16)) for j in range(3)] for i in range(6)])
    np.testing.assert_allclose(similarity(q, means, scaled=False).scores, expected, atol=1e-6)
    np.testing.assert_allclose(similarity(q, means).scores, expected / 4.0, atol=1e-6)


def test_similarity_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        similarity(np.zeros((4, 3)), np.zeros((2, 5)))


def test_similarity_matrix_rejects_non_finite():
    with pytest.raises(ValueError):
        SimilarityMatrix(np.array([[np.inf, 0.0]]), scaled=True)


# --- GLOBAL THRESHOLD ---
def test_global_threshold_uniform_scores():
    layout = make_uniform_layout(20, 5)
    S = SimilarityMatrix(np.zeros((20, 5)), scaled=True)
    assert select_global_threshold(S, 0.25, layout, include_self=False).selected_count == 25


def test_global_threshold_single_dominant_pair():
    layout = make_uniform_layout(20, 5)
    # one pair carries mass 0.3, the rest share 0.7 evenly
    rest = 0.7 / 99
    scores = np.full((20, 5), math.log(rest))
    scores[7, 2] = math.log(0.3)
    mask = select_global_threshold(SimilarityMatrix(scores, True), 0.25, layout, include_self=False)
    assert mask.selected_count == 1
    assert mask.mask[7, 2]


def test_global_threshold_full_mass_selects_everything():
    layout = make_uniform_layout(8, 4)
    S = SimilarityMatrix(np.random.default_rng(1).standard_normal((8, 4)), True)
    assert np.all(select_global_threshold(S, 1.0, layout, include_self=False).mask)


def test_global_threshold_matches_brute_force():
    layout = make_uniform_layout(24, 6)
    scores = np.random.default_rng(2).standard_normal((24, 6))
    for tau in (0.15, 0.25, 0.5, 0.9):
        mask = select_global_threshold(SimilarityMatrix(scores, True), tau, layout, include_self=False)
        np.testing.assert_array_equal(mask.mask, brute_force_global_threshold(scores, tau))


def test_global_threshold_sparsity_bound_and_monotone():
    layout = make_uniform_layout(48, 8)
    scores = np.random.default_rng(3).standard_normal((48, 8)) * 2
    S = SimilarityMatrix(scores, True)
    previous = None
    for tau in (0.15, 0.25, 0.35, 0.5):
        mask = select_global_threshold(S, tau, layout, include_self=False)
        assert mask.selected_count <= math.ceil(tau * S.num_pairs)
        if previous is not None:
            assert previous.is_subset_of(mask)
        previous = mask


def test_self_block_is_force_included():
    layout = make_uniform_layout(24, 6)
    scores = np.random.default_rng(4).standard_normal((24, 6))
    mask = select_global_threshold(SimilarityMatrix(scores, True), 0.1, layout)
    assert mask.includes_self(layout)
    assert not mask.has_empty_rows()


# --- GLOBAL TOP-K ---
def test_global_topk_exhaustive():
    layout = make_uniform_layout(8, 4)
    S = SimilarityMatrix(np.random.default_rng(5).standard_normal((8, 4)), True)
    assert np.all(select_global_topk(S, 32, layout).mask)


def test_global_topk_picks_largest_entries():
    layout = make_uniform_layout(8, 4)
    scores = np.random.default_rng(6).permutation(32).reshape(8, 4).astype(float)
    mask = select_global_topk(SimilarityMatrix(scores, True), 3, layout, include_self=False)
    expected = scores >= np.sort(scores.reshape(-1))[-3]
    np.testing.assert_array_equal(mask.mask, expected)


def test_global_topk_ties_prefer_lower_index():
    layout = make_uniform_layout(4, 2)
    scores = np.zeros((4, 2))
    scores[1, 0] = scores[3, 1] = 5.0
    mask = select_global_topk(SimilarityMatrix(scores, True), 1, layout, include_self=False)
    assert mask.pairs() == [{"head": 0, "query": 1, "block": 0}]


def test_global_topk_rejects_out_of_range_k():
    layout = make_uniform_layout(4, 2)
    with pytest.raises(ValueError):
        select_global_topk(SimilarityMatrix(np.zeros((4, 2)), True), 9, layout)


# --- LOCAL TOP-K ---
def test_local_topk_row_cardinality():
    layout = build_layout(LatentGeometry(21, 2, 2), PartitionSpec.temporal(3))
    S = SimilarityMatrix(np.random.default_rng(7).standard_normal((84, 7)), True)
    mask = select_local_topk(S, 2, layout)
    assert layout.num_blocks == 7
    assert np.all(mask.blocks_per_query == 2)
    assert mask.includes_self(layout)


def test_local_topk_full_k_and_oracle():
    layout = make_uniform_layout(12, 4)
    scores = np.random.default_rng(8).standard_normal((12, 4))
    assert np.all(select_local_topk(SimilarityMatrix(scores, True), 4, layout).mask)
    mask = select_local_topk(SimilarityMatrix(scores, True), 2, layout, include_self=False)
    for row, selected in zip(scores, mask.mask):
        assert set(np.flatnonzero(selected)) == set(np.argsort(-row)[:2])


def test_local_topk_rejects_k_above_block_count():
    layout = make_uniform_layout(12, 4)
    with pytest.raises(ValueError):
        select_local_topk(SimilarityMatrix(np.zeros((12, 4)), True), 5, layout)


# --- LOCAL THRESHOLD ---
def test_local_threshold_uniform_row():
    layout = make_uniform_layout(16, 8)
    mask = select_local_threshold(SimilarityMatrix(np.zeros((16, 8)), True), 0.25, layout, include_self=False)
    assert np.all(mask.blocks_per_query == 2)


def test_local_threshold_dominant_block():
    layout = make_uniform_layout(16, 8)
    scores = np.zeros((16, 8))
    scores[:, 3] = 20.0
    mask = select_local_threshold(SimilarityMatrix(scores, True), 0.5, layout, include_self=False)
    assert np.all(mask.mask[:, 3]) and np.all(mask.blocks_per_query == 1)


def test_local_threshold_matches_per_row_oracle():
    layout = make_uniform_layout(12, 6)
    scores = np.random.default_rng(9).standard_normal((12, 6))
    mask = select_local_threshold(SimilarityMatrix(scores, True), 0.6, layout, include_self=False)
    probs = softmax(scores, axis=1)
    for row, selected in zip(probs, mask.mask):
        order = np.argsort(-row, kind="stable")
        count = int(np.searchsorted(np.cumsum(row[order]), 0.6 - 1e-12) + 1)
        assert set(np.flatnonzero(selected)) == set(order[:count])


# --- PROPERTIES ---
@pytest.mark.parametrize("c", [0.1, 3.0, 100.0])
def test_topk_masks_are_scale_invariant(c):
    layout = make_uniform_layout(24, 6)
    rng = np.random.default_rng(10)
    q, means = rng.standard_normal((24, 8)), rng.standard_normal((6, 8))
    base, scaled = similarity(q, means), similarity(q * c, means)
    assert np.array_equal(select_global_topk(base, 30, layout).mask, select_global_topk(scaled, 30, layout).mask)
    assert np.array_equal(select_local_topk(base, 3, layout).mask, select_local_topk(scaled, 3, layout).mask)


def assert_nested(masks):
    for smaller, larger in zip(masks, masks[1:]):
        assert smaller.is_subset_of(larger)


@pytest.mark.parametrize("include_self", [True, False])
@pytest.mark.parametrize("seed", [13, 14, 15])
def test_global_topk_grows_with_k(seed, include_self):
    layout = make_uniform_layout(24, 6)
    S = SimilarityMatrix(np.random.default_rng(seed).standard_normal((24, 6)), True)
    assert_nested([select_global_topk(S, k, layout, include_self) for k in (1, 5, 12, 30, 60, 144)])


@pytest.mark.parametrize("include_self", [True, False])
@pytest.mark.parametrize("seed", [13, 14, 15])
def test_local_topk_grows_with_k(seed, include_self):
    layout = make_uniform_layout(24, 6)
    S = SimilarityMatrix(np.random.default_rng(seed).standard_normal((24, 6)), True)
    assert_nested([select_local_topk(S, k, layout, include_self) for k in range(1, 7)])


@pytest.mark.parametrize("include_self", [True, False])
@pytest.mark.parametrize("seed", [13, 14, 15])
def test_local_threshold_grows_with_tau(seed, include_self):
    layout = make_uniform_layout(24, 6)
    S = SimilarityMatrix(np.random.default_rng(seed).standard_normal((24, 6)) * 2, True)
    assert_nested([select_local_threshold(S, tau, layout, include_self) for tau in (0.1, 0.25, 0.5, 0.75, 0.9)])


def test_local_topk_own_block_takes_last_slot():
    layout = make_uniform_layout(24, 6)
    scores = np.random.default_rng(16).standard_normal((24, 6))
    own = layout.token_to_block
    scores[np.arange(24), own] = -10.0
    mask = select_local_topk(SimilarityMatrix(scores, True), 3, layout)
    assert np.all(mask.blocks_per_query == 3)
    assert mask.includes_self(layout)
    for row, block, selected in zip(scores, own, mask.mask):
        assert set(np.flatnonzero(selected)) == set(np.argsort(-row)[:2]) | {block}


def test_permuting_blocks_permutes_columns():
    layout = make_uniform_layout(12, 4)
    scores = np.random.default_rng(11).standard_normal((12, 4))
    perm = np.array([2, 0, 3, 1])
    a = select_global_threshold(SimilarityMatrix(scores, True), 0.3, layout, include_self=False)
    b = select_global_threshold(SimilarityMatrix(scores[:, perm], True), 0.3, layout, include_self=False)
    np.testing.assert_array_equal(a.mask[:, perm], b.mask)


def test_dispatcher_routes_every_policy():
    layout = make_uniform_layout(12, 4)
    S = SimilarityMatrix(np.random.default_rng(12).standard_normal((12, 4)), True)
    cases = [
        (SelectionPolicy.global_threshold(0.3), select_global_threshold(S, 0.3, layout)),
        (SelectionPolicy.local_threshold(0.3), select_local_threshold(S, 0.3, layout)),
        (SelectionPolicy.global_topk(10), select_global_topk(S, 10, layout)),
        (SelectionPolicy.local_topk(2), select_local_topk(S, 2, layout)),
    ]
    for policy, expected in cases:
        np.testing.assert_array_equal(select(S, policy, layout).mask, expected.mask)


# --- MASK EXPORTS ---
def test_mask_copies_read_only_view():
    base = np.zeros((3, 2), dtype=bool)
    view = base.view()
    view.setflags(write=False)
    mask = SelectionMask(view)
    base[0, 0] = True
    assert not mask.mask[0, 0]


def test_mask_exports():
    mask = SelectionMask.from_pairs(3, 2, [0, 2], [1, 0])
    assert mask.pairs(head=4) == [{"head": 4, "query": 0, "block": 1}, {"head": 4, "query": 2, "block": 0}]
    np.testing.assert_array_equal(mask.to_tensor().data, [[0, 1], [0, 0], [1, 0]])
    np.testing.assert_array_equal(mask.empty_rows(), [1])
