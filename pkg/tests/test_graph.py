import numpy as np
import pytest

from rewardprop import (
    DistanceConfig,
    Slice,
    ShapingParams,
    StateActionRecord,
    build_weight_matrix,
    dump_weight_matrix,
    factor_distances,
    load_weight_matrix,
    shaping_value,
)
from rewardprop.errors import DegenerateSlice, LengthMismatch
from rewardprop.graph import row_stochastic_from_dissimilarity

from conftest import make_slice


class TestShapingValue:
    def test_unit_weights(self):
        assert shaping_value(ShapingParams([1.0, 1.0]), np.array([3.0, 4.0])) == 25.0

    def test_zero_distance(self):
        assert shaping_value(ShapingParams([2.0, -1.0, 0.3]), np.zeros(3)) == 0.0

    def test_hand_computed(self):
        # 2^2*1^2 + 0.5^2*2^2 + 1^2*3^2 = 4 + 1 + 9 = 14
        got = shaping_value(ShapingParams([2.0, 0.5, 1.0]), np.array([1.0, 2.0, 3.0]))
        assert got == pytest.approx(14.0, abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            shaping_value(ShapingParams([1.0, 1.0]), np.array([1.0, 2.0, 3.0]))

    def test_nonneg_on_random_inputs(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            theta = ShapingParams(rng.normal(size=4))
            assert shaping_value(theta, np.abs(rng.normal(size=4))) >= 0.0


def naive_weight_matrix(slice_, params, config=DistanceConfig()):
    """Direct double-loop evaluation of the edge-weight formula."""
    order = np.concatenate([slice_.labeled_positions, slice_.unlabeled_positions])
    records = [slice_.records[i] for i in order]
    n = len(records)
    f = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                ell = factor_distances(records[i], records[j], slice_.schema, config)
                f[i, j] = shaping_value(params, ell)
    w = np.zeros((n, n))
    for i in range(n):
        shift = min(f[i, j] for j in range(n) if j != i)
        denom = sum(np.exp(-(f[i, j] - shift)) for j in range(n) if j != i)
        for j in range(n):
            if j != i:
                w[i, j] = np.exp(-(f[i, j] - shift)) / denom
    return w


class TestBuildWeightMatrix:
    def test_two_nodes_regardless_of_theta(self, small_schema):
        rng = np.random.default_rng(1)
        sl = make_slice(small_schema, 2, [0], rng)
        for theta in ([1.0, 1.0], [0.0, 5.0], [-3.0, 0.2]):
            g = build_weight_matrix(sl, ShapingParams(theta))
            assert np.array_equal(g.weights, np.array([[0.0, 1.0], [1.0, 0.0]]))

    def test_three_identical_records(self, small_schema):
        rec = StateActionRecord([1.0, 2.0], [3.0], 1.0)
        sl = Slice.from_records(small_schema, [rec, rec, rec])
        g = build_weight_matrix(sl, ShapingParams.uniform(2))
        expected = np.full((3, 3), 0.5)
        np.fill_diagonal(expected, 0.0)
        np.testing.assert_allclose(g.weights, expected, atol=1e-15)

    def test_matches_double_loop_oracle(self, schema):
        rng = np.random.default_rng(2)
        sl = make_slice(schema, 5, [0, 2], rng)
        params = ShapingParams(rng.normal(1.0, 0.3, 4))
        g = build_weight_matrix(sl, params)
        np.testing.assert_allclose(g.weights, naive_weight_matrix(sl, params), atol=1e-12)

    def test_degenerate_slice(self, small_schema):
        rng = np.random.default_rng(3)
        sl = make_slice(small_schema, 1, [0], rng)
        with pytest.raises(DegenerateSlice):
            build_weight_matrix(sl, ShapingParams.uniform(2))

    def test_params_length_checked(self, schema):
        rng = np.random.default_rng(4)
        sl = make_slice(schema, 4, [0], rng)
        with pytest.raises(LengthMismatch):
            build_weight_matrix(sl, ShapingParams.uniform(2))


class TestGraphInvariants:
    @pytest.mark.parametrize("seed", range(8))
    def test_row_stochastic_on_random_slices(self, schema, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 30))
        sl = make_slice(schema, n, rng.choice(n, max(1, n // 3), replace=False), rng)
        g = build_weight_matrix(sl, ShapingParams(rng.normal(1.0, 0.5, 4)))
        assert np.abs(g.weights.sum(axis=1) - 1.0).max() < 1e-12
        assert np.array_equal(np.diag(g.weights), np.zeros(n))
        assert (g.weights >= 0).all() and (g.weights <= 1).all()

    def test_near_duplicates_and_far_outliers(self, small_schema):
        # a tight clump, an exact duplicate pair, and a node 1e6 away
        base = np.array([0.5, -0.2])
        records = [StateActionRecord(base + 1e-12 * i, [0.1], float(i)) for i in range(4)]
        records.append(StateActionRecord(base, [0.1], None))  # exact duplicate of node 0
        records.append(StateActionRecord([1e6, -1e6], [2e5], None))
        sl = Slice.from_records(small_schema, records)
        g = build_weight_matrix(sl, ShapingParams.uniform(2))
        assert np.isfinite(g.weights).all()
        assert np.abs(g.weights.sum(axis=1) - 1.0).max() < 1e-12
        assert np.array_equal(np.diag(g.weights), np.zeros(6))

    def test_shift_invariance(self):
        rng = np.random.default_rng(5)
        f = np.abs(rng.normal(2.0, 1.0, (7, 7)))
        w0 = row_stochastic_from_dissimilarity(f)
        for c in (0.5, -1.0, 300.0):
            wc = row_stochastic_from_dissimilarity(f + c)
            np.testing.assert_allclose(wc, w0, atol=1e-12)

    def test_locality_ordering(self, schema):
        rng = np.random.default_rng(6)
        sl = make_slice(schema, 12, [0, 1], rng)
        params = ShapingParams(rng.normal(1.0, 0.2, 4))
        g = build_weight_matrix(sl, params)
        order = np.concatenate([sl.labeled_positions, sl.unlabeled_positions])
        records = [sl.records[i] for i in order]
        for i in range(12):
            f_row = [
                shaping_value(params, factor_distances(records[i], records[j], schema))
                for j in range(12)
            ]
            for j in range(12):
                for k in range(12):
                    if i not in (j, k) and f_row[j] < f_row[k]:
                        assert g.weights[i, j] > g.weights[i, k]

    def test_block_views_restitch_exactly(self, schema):
        rng = np.random.default_rng(7)
        sl = make_slice(schema, 9, [0, 3, 5], rng)
        g = build_weight_matrix(sl, ShapingParams.uniform(4))
        assert g.num_labeled == 3 and g.num_unlabeled == 6
        restitched = np.hstack([g.w_ul, g.w_uu])
        assert np.array_equal(restitched, g.weights[3:, :])
        assert np.array_equal(np.vstack([g.w_ll, g.w_ul]), g.weights[:, :3])


class TestSparsification:
    def test_top_k_keeps_k_and_renormalizes(self, schema):
        rng = np.random.default_rng(8)
        sl = make_slice(schema, 10, [0, 1], rng)
        g = build_weight_matrix(sl, ShapingParams.uniform(4), top_k=3)
        assert ((g.weights > 0).sum(axis=1) == 3).all()
        assert np.abs(g.weights.sum(axis=1) - 1.0).max() < 1e-12

    def test_top_k_larger_than_row_is_noop(self, schema):
        rng = np.random.default_rng(9)
        sl = make_slice(schema, 5, [0], rng)
        dense = build_weight_matrix(sl, ShapingParams.uniform(4))
        sparse = build_weight_matrix(sl, ShapingParams.uniform(4), top_k=10)
        assert np.array_equal(dense.weights, sparse.weights)


def test_dump_and_load_round_trip(tmp_path, schema):
    rng = np.random.default_rng(10)
    sl = make_slice(schema, 8, [0, 2], rng)
    g = build_weight_matrix(sl, ShapingParams.uniform(4))
    path = tmp_path / "weights.bin"
    dump_weight_matrix(g, path)
    back = load_weight_matrix(path)
    assert np.array_equal(back.weights, g.weights)
    assert np.array_equal(back.node_order, g.node_order)
    assert back.num_labeled == g.num_labeled
