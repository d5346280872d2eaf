import numpy as np
import pytest

from rewardprop import (
    InferenceConfig,
    PartiallyLabeledDataset,
    ShapingParams,
    Slice,
    StateActionRecord,
    TrainConfig,
    build_weight_matrix,
    infer_rewards,
    iterate_blocks,
    propagate_iterative,
    solve_blocks,
    solve_fixed_point,
)
from rewardprop.errors import (
    MaxItersExceeded,
    NoLabeledNodes,
    NotContractive,
    NoUnlabeledNodes,
    SingularSystem,
    SliceWithoutLabels,
)
from rewardprop.graph import RewardGraph

from conftest import make_records, make_slice


def random_graph(rng, schema, z=None, z_l=None, scale=1.0):
    z = z or int(rng.integers(3, 30))
    z_l = z_l or int(rng.integers(1, z))
    sl = make_slice(schema, z, rng.choice(z, z_l, replace=False), rng, scale=scale)
    return build_weight_matrix(sl, ShapingParams.uniform(schema.num_factors)), sl


class TestSolvers:
    def test_zero_coupling_converges_in_one_step(self):
        w_uu = np.zeros((3, 3))
        w_ul = np.array([[0.5, 0.5], [1.0, 0.0], [0.25, 0.75]])
        labels = np.array([2.0, 6.0])
        r, iters = iterate_blocks(w_uu, w_ul, labels)
        np.testing.assert_array_equal(r, w_ul @ labels)
        assert iters <= 2  # step 2 only confirms the fixed point
        np.testing.assert_allclose(solve_blocks(w_uu, w_ul, labels), w_ul @ labels, atol=1e-15)

    def test_one_labeled_one_unlabeled(self, small_schema):
        records = [
            StateActionRecord([0.0, 0.0], [0.0], 7.0),
            StateActionRecord([1.0, 1.0], [1.0], None),
        ]
        sl = Slice.from_records(small_schema, records)
        g = build_weight_matrix(sl, ShapingParams.uniform(2))
        for result in (
            propagate_iterative(g, np.array([7.0])),
            solve_fixed_point(g, np.array([7.0])),
        ):
            np.testing.assert_allclose(result.rewards_u, [7.0], atol=1e-12)
            assert result.contraction_bound == 0.0

    def test_iterative_matches_direct(self, schema):
        rng = np.random.default_rng(0)
        sl = make_slice(schema, 5, [0, 1, 2], rng)
        g = build_weight_matrix(sl, ShapingParams.uniform(4))
        labels = sl.labels()
        it = propagate_iterative(g, labels)
        direct = solve_fixed_point(g, labels)
        assert np.max(np.abs(it.rewards_u - direct.rewards_u)) < 1e-8
        assert it.iterations_used > 0 and direct.iterations_used == 0

    def test_residual_below_tolerance(self, schema):
        rng = np.random.default_rng(1)
        sl = make_slice(schema, 8, rng.choice(8, 4, replace=False), rng)
        g = build_weight_matrix(sl, ShapingParams.uniform(4))
        result = solve_fixed_point(g, sl.labels())
        assert result.residual < 1e-10

    def test_iterate_equals_truncated_geometric_series(self, schema):
        # from a zero start, iterate t equals sum_{i<t} W_UU^i (W_UL R_L)
        rng = np.random.default_rng(2)
        g, sl = random_graph(rng, schema, z=12, z_l=5)
        labels = sl.labels()
        source = g.w_ul @ labels
        r = np.zeros_like(source)
        for t in range(1, 10):
            r = g.w_uu @ r + source
            series = sum(
                np.linalg.matrix_power(g.w_uu, i) @ source for i in range(t)
            )
            np.testing.assert_allclose(r, series, atol=1e-12)

    def test_max_iters_exceeded(self):
        w_uu = np.array([[0.0, 0.999], [0.999, 0.0]])
        w_ul = np.array([[0.001], [0.001]])
        with pytest.raises(MaxItersExceeded):
            iterate_blocks(w_uu, w_ul, np.array([1.0]), max_iters=3, tol=1e-12)

    def test_not_contractive_rejected(self):
        w = np.array([[0.0, 1.0], [1.0, 0.0]])
        graph = RewardGraph(
            weights=np.block(
                [[np.zeros((1, 1)), np.zeros((1, 2))], [np.zeros((2, 1)), w]]
            ),
            node_order=np.arange(3),
            num_labeled=1,
        )
        with pytest.raises(NotContractive):
            propagate_iterative(graph, np.array([1.0]))

    def test_singular_system_rejected(self):
        w_uu = np.array([[0.0, 1.0], [1.0, 0.0]])  # exact island
        w_ul = np.zeros((2, 1))
        with pytest.raises(SingularSystem):
            solve_blocks(w_uu, w_ul, np.array([1.0]))

    def test_partition_errors(self, schema):
        rng = np.random.default_rng(3)
        sl_all = make_slice(schema, 4, range(4), rng)
        g_all = build_weight_matrix(sl_all, ShapingParams.uniform(4))
        with pytest.raises(NoUnlabeledNodes):
            solve_fixed_point(g_all, sl_all.labels())
        sl_none = make_slice(schema, 4, [], rng)
        g_none = build_weight_matrix(sl_none, ShapingParams.uniform(4))
        with pytest.raises(NoLabeledNodes):
            propagate_iterative(g_none, np.array([]))


class TestLinearityAndBounds:
    def test_linearity_in_labels(self, schema):
        rng = np.random.default_rng(4)
        for _ in range(10):
            g, sl = random_graph(rng, schema)
            if g.num_unlabeled == 0:
                continue
            la = rng.normal(size=g.num_labeled)
            lb = rng.normal(size=g.num_labeled)
            ra = solve_blocks(g.w_uu, g.w_ul, la)
            rb = solve_blocks(g.w_uu, g.w_ul, lb)
            r_scaled = solve_blocks(g.w_uu, g.w_ul, 2.5 * la)
            r_sum = solve_blocks(g.w_uu, g.w_ul, la + lb)
            scale = max(1.0, np.abs(ra).max())
            assert np.max(np.abs(r_scaled - 2.5 * ra)) < 1e-12 * scale * 2.5
            assert np.max(np.abs(r_sum - (ra + rb))) < 1e-12 * max(1.0, np.abs(ra + rb).max())

    def test_convex_hull_in_fully_stochastic_regime(self, schema):
        rng = np.random.default_rng(5)
        for _ in range(20):
            g, sl = random_graph(rng, schema)
            if g.num_unlabeled == 0:
                continue
            labels = rng.normal(size=g.num_labeled)
            result = solve_fixed_point(g, labels)
            assert result.rewards_u.min() >= labels.min() - 1e-10
            assert result.rewards_u.max() <= labels.max() + 1e-10

    def test_exceedance_with_substochastic_blocks(self):
        # coupling blocks treated as free variables: inferred rewards can leave
        # the labeled range entirely
        labels = np.array([1.0, 2.0, 3.0])
        exceeded = False
        for w_uu_val in np.linspace(0.01, 0.99, 25):
            for w_ul_val in np.linspace(0.01, 0.99, 25):
                r = solve_blocks(
                    np.array([[w_uu_val]]), np.full((1, 3), w_ul_val), labels
                )
                if r.max() > labels.max():
                    exceeded = True
        assert exceeded

    def test_paper_style_scalar_blocks(self):
        # (I - W_UU) = 0.01 against W_UL entries 0.09 amplifies far past max(R_L)
        r = solve_blocks(np.array([[0.99]]), np.full((1, 3), 0.09), np.array([1.0, 2.0, 3.0]))
        assert r[0] == pytest.approx(0.09 * 6.0 / 0.01, rel=1e-10)
        assert r[0] > 3.0


class TestPipeline:
    def test_fully_labeled_dataset_is_noop(self, schema):
        rng = np.random.default_rng(6)
        ds = PartiallyLabeledDataset(schema, tuple(make_records(schema, 10, range(10), rng)))
        out, reports = infer_rewards(ds, slice_size=5)
        assert all(r.skipped for r in reports)
        assert all(a.reward == b.reward for a, b in zip(ds.records, out.records))

    def test_end_to_end_fills_all_rewards(self, schema):
        rng = np.random.default_rng(7)
        labeled = rng.choice(100, 15, replace=False)
        ds = PartiallyLabeledDataset(schema, tuple(make_records(schema, 100, labeled, rng)))
        out, reports = infer_rewards(ds, slice_size=50)
        assert len(reports) == 2
        assert out.num_labeled == 100
        for i in ds.labeled_indices:
            assert out.records[i].reward == ds.records[i].reward  # bit-identical
        for rep in reports:
            assert rep.inference.residual < 1e-10
            assert rep.inference.contraction_bound < 1.0
            assert rep.train_report is not None

    def test_slice_error_names_the_slice(self, schema):
        rng = np.random.default_rng(8)
        ds = PartiallyLabeledDataset(schema, tuple(make_records(schema, 12, [0, 1], rng)))
        with pytest.raises(SliceWithoutLabels, match="slice 1"):
            infer_rewards(ds, slice_size=6)

    def test_borrowing_rescues_unlabeled_slice(self, schema):
        rng = np.random.default_rng(9)
        ds = PartiallyLabeledDataset(schema, tuple(make_records(schema, 12, [0, 1, 2], rng)))
        out, reports = infer_rewards(ds, slice_size=6, borrow_k=2)
        assert out.num_labeled == 12
        assert reports[1].borrowed == 2
        assert reports[1].train_report is None  # borrowed slices infer with uniform weights

    def test_single_label_slice_skips_training(self, schema):
        rng = np.random.default_rng(10)
        ds = PartiallyLabeledDataset(schema, tuple(make_records(schema, 8, [0, 4], rng)))
        out, reports = infer_rewards(ds, slice_size=4)
        assert out.num_labeled == 8
        assert all(r.train_report is None for r in reports)

    def test_methods_agree_through_pipeline(self, schema):
        rng = np.random.default_rng(11)
        ds = PartiallyLabeledDataset(
            schema, tuple(make_records(schema, 40, rng.choice(40, 10, replace=False), rng))
        )
        out_d, _ = infer_rewards(ds, slice_size=20, inference_config=InferenceConfig(method="direct"))
        out_i, _ = infer_rewards(ds, slice_size=20, inference_config=InferenceConfig(method="iterative"))
        rewards_d = np.array([r.reward for r in out_d.records])
        rewards_i = np.array([r.reward for r in out_i.records])
        assert np.max(np.abs(rewards_d - rewards_i)) < 1e-8

    def test_auto_method_switches_on_size(self, schema):
        rng = np.random.default_rng(12)
        ds = PartiallyLabeledDataset(
            schema, tuple(make_records(schema, 30, rng.choice(30, 10, replace=False), rng))
        )
        _, reports = infer_rewards(
            ds, slice_size=30, inference_config=InferenceConfig(method="auto", direct_size_cap=5)
        )
        assert reports[0].method == "iterative"
        _, reports = infer_rewards(
            ds, slice_size=30, inference_config=InferenceConfig(method="auto", direct_size_cap=4096)
        )
        assert reports[0].method == "direct"

    def test_parallel_jobs_bitwise_equal(self, schema):
        rng = np.random.default_rng(13)
        ds = PartiallyLabeledDataset(
            schema, tuple(make_records(schema, 60, range(0, 60, 4), rng))
        )
        out1, _ = infer_rewards(ds, slice_size=15, jobs=1)
        out4, _ = infer_rewards(ds, slice_size=15, jobs=4)
        assert all(a.reward == b.reward for a, b in zip(out1.records, out4.records))

    def test_report_serializes(self, schema):
        rng = np.random.default_rng(14)
        ds = PartiallyLabeledDataset(
            schema, tuple(make_records(schema, 20, rng.choice(20, 6, replace=False), rng))
        )
        _, reports = infer_rewards(ds, slice_size=20)
        doc = reports[0].to_json_dict()
        assert doc["range"] == [0, 20]
        assert doc["inference"]["residual"] < 1e-10
        assert "build_s" in doc["timings"]
