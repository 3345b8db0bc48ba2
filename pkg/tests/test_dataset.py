import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import ndtri

from tschain.dataset import (
    OrdinalSeriesDataset,
    VarKind,
    compute_bounds,
    empirical_cdf,
    estimate_marginals,
    load_dataset,
)


def write_long(tmp_path, rows, header="sample_id,time_index,variable_id,value", name="data.csv"):
    path = tmp_path / name
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


class TestLoadDataset:
    def test_dense_shape_bookkeeping(self, tmp_path):
        rows = [
            f"s{i},{t},v{j},{(i + t + j) % 2}"
            for i in range(2)
            for t in range(3)
            for j in range(2)
        ]
        ds = load_dataset(write_long(tmp_path, rows))
        assert (ds.n, ds.T, ds.p) == (2, 3, 2)
        assert not np.isnan(ds.values).any()

    def test_empty_value_is_missing(self, tmp_path):
        rows = ["a,0,v0,", "a,0,v1,1", "a,1,v0,0", "a,1,v1,0", "b,0,v0,1", "b,0,v1,0", "b,1,v0,0", "b,1,v1,1"]
        ds = load_dataset(write_long(tmp_path, rows))
        assert np.isnan(ds.values[0, 0, 0])
        assert np.isnan(ds.values).sum() == 1

    def test_na_token_is_missing(self, tmp_path):
        rows = ["a,0,v0,NA", "a,0,v1,1", "a,1,v0,0", "a,1,v1,0", "b,0,v0,1", "b,0,v1,0", "b,1,v0,0", "b,1,v1,1"]
        ds = load_dataset(write_long(tmp_path, rows))
        assert np.isnan(ds.values[0, 0, 0])

    def test_small_integer_range_becomes_ordinal(self, tmp_path):
        # 0..3 coding: four categories.
        rows = []
        codes = [0, 1, 2, 3, 1, 2]
        k = 0
        for i in range(3):
            for t in range(2):
                rows.append(f"s{i},{t},item,{codes[k]}")
                k += 1
        ds = load_dataset(write_long(tmp_path, rows))
        assert ds.var_kinds[0] == VarKind("ordinal", 4)

    def test_schema_overrides_inference(self, tmp_path):
        rows = [f"s{i},{t},x,{i + t}" for i in range(2) for t in range(2)]
        ds = load_dataset(write_long(tmp_path, rows), schema={"x": "continuous"})
        assert ds.var_kinds[0].kind == "continuous"

    def test_duplicate_triple_rejected(self, tmp_path):
        rows = ["a,0,v,1", "a,0,v,2", "a,1,v,0", "b,0,v,0", "b,1,v,1"]
        with pytest.raises(ValueError, match="duplicate"):
            load_dataset(write_long(tmp_path, rows))

    def test_non_contiguous_times_rejected(self, tmp_path):
        rows = ["a,0,v,1", "a,2,v,0", "b,0,v,0", "b,2,v,1"]
        with pytest.raises(ValueError, match="contiguous"):
            load_dataset(write_long(tmp_path, rows))

    def test_single_level_variable_rejected(self, tmp_path):
        rows = ["a,0,v,1", "a,1,v,1", "b,0,v,1", "b,1,v,1"]
        with pytest.raises(ValueError, match="two observed levels"):
            load_dataset(write_long(tmp_path, rows))

    def test_tab_delimited(self, tmp_path):
        rows = ["a\t0\tv\t1", "a\t1\tv\t0", "b\t0\tv\t0", "b\t1\tv\t1"]
        path = write_long(tmp_path, rows, header="sample_id\ttime_index\tvariable_id\tvalue")
        ds = load_dataset(path)
        assert (ds.n, ds.T, ds.p) == (2, 2, 1)


class TestEmpiricalCdf:
    def test_interior_query(self):
        assert empirical_cdf(np.array([1.2, 0.5, 0.9]), 0.5) == pytest.approx(0.25)

    def test_max_query(self):
        assert empirical_cdf(np.array([1.2, 0.5, 0.9]), 1.2) == pytest.approx(0.75)

    def test_singleton(self):
        assert empirical_cdf(np.array([7.0]), 7.0) == pytest.approx(0.5)

    def test_all_missing_rejected(self):
        with pytest.raises(ValueError):
            empirical_cdf(np.array([np.nan, np.nan]), 1.0)

    @given(
        st.lists(st.floats(-10, 10), min_size=1, max_size=30),
        st.integers(0, 29),
        st.floats(0, 2),
    )
    def test_monotone_and_open_on_observed_values(self, values, idx, dq):
        # Evaluated at any observed value the shrunk CDF stays inside (0, 1);
        # moving the query up never decreases it.
        vals = np.array(values)
        q = values[idx % len(values)]
        lo = empirical_cdf(vals, q)
        hi = empirical_cdf(vals, q + dq)
        assert 0.0 < lo < 1.0
        assert lo <= hi


def make_ordinal_dataset(codes, n_categories):
    codes = np.asarray(codes, dtype=float)
    return OrdinalSeriesDataset(codes, [VarKind("ordinal", n_categories)] * codes.shape[2])


class TestComputeBounds:
    def test_cutpoint_values_from_shrunk_counts(self):
        # Category counts (1, 1, 2) over n=4: cumulative 1/5, 2/5.
        codes = np.array([0, 1, 2, 2], dtype=float).reshape(4, 1, 1)
        codes = np.repeat(codes, 2, axis=1)  # T must be >= 2
        ds = make_ordinal_dataset(codes, 3)
        marg = estimate_marginals(ds)
        cuts = marg.cutpoints[0][0]
        assert cuts[0] == -np.inf and cuts[-1] == np.inf
        # Oracle: high-precision inverse normal CDF of 0.2 and 0.4.
        assert cuts[1] == pytest.approx(-0.8416212335729143, abs=1e-9)
        assert cuts[2] == pytest.approx(-0.2533471031357997, abs=1e-9)

    def test_boundary_codes_hit_infinite_cutpoints(self):
        codes = np.array([0, 1, 2, 2], dtype=float).reshape(4, 1, 1)
        codes = np.repeat(codes, 2, axis=1)
        ds = make_ordinal_dataset(codes, 3)
        bounds = compute_bounds(ds, estimate_marginals(ds))
        assert bounds.lower[0, 0, 0] == -np.inf  # code 0
        assert np.isposinf(bounds.upper[2, 0, 0])  # top code

    def test_missing_cell_unbounded(self):
        vals = np.array([[0.0, 1.0], [1.0, np.nan], [0.0, 0.0]], dtype=float).reshape(3, 2, 1)
        ds = make_ordinal_dataset(vals, 2)
        bounds = compute_bounds(ds, estimate_marginals(ds))
        assert bounds.lower[1, 1, 0] == -np.inf
        assert bounds.upper[1, 1, 0] == np.inf

    def test_continuous_cells_degenerate_at_normal_scores(self):
        vals = np.array([0.3, -1.2, 2.6, 0.9]).reshape(4, 1, 1)
        vals = np.concatenate([vals, vals + 0.1], axis=1)
        ds = OrdinalSeriesDataset(vals, [VarKind("continuous")])
        bounds = compute_bounds(ds, estimate_marginals(ds))
        assert np.all(bounds.lower == bounds.upper)
        # Largest value at time 0 maps to Phi^-1(4/5).
        assert bounds.lower[2, 0, 0] == pytest.approx(ndtri(0.8))

    def test_rank_monotonicity_across_codes(self, rng):
        codes = rng.integers(0, 4, size=(30, 2, 1)).astype(float)
        ds = make_ordinal_dataset(codes, 4)
        bounds = compute_bounds(ds, estimate_marginals(ds))
        for t in range(2):
            col = codes[:, t, 0]
            lo = bounds.lower[:, t, 0]
            hi = bounds.upper[:, t, 0]
            order = np.argsort(col)
            for a, b in zip(order, order[1:]):
                if col[a] < col[b]:
                    assert lo[a] <= lo[b] and hi[a] <= hi[b]
                    assert hi[a] <= lo[b] + 1e-12

    def test_bounds_invariant_under_increasing_transform(self, rng):
        raw = rng.normal(size=(12, 3, 1))
        ds1 = OrdinalSeriesDataset(raw, [VarKind("continuous")])
        transformed = np.exp(raw) + raw ** 3  # strictly increasing
        ds2 = OrdinalSeriesDataset(transformed, [VarKind("continuous")])
        b1 = compute_bounds(ds1, estimate_marginals(ds1))
        b2 = compute_bounds(ds2, estimate_marginals(ds2))
        np.testing.assert_allclose(b1.lower, b2.lower, atol=1e-12)

    def test_pooled_marginals_share_tables(self):
        codes = np.array(
            [[0, 1], [1, 2], [2, 0], [1, 1]], dtype=float
        ).reshape(4, 2, 1)
        ds = make_ordinal_dataset(codes, 3)
        pooled = estimate_marginals(ds, pool_times=True)
        assert pooled.cutpoints[0][0] is pooled.cutpoints[1][0]

    def test_finite_cutpoints_strictly_increasing_for_observed(self, rng):
        codes = rng.integers(0, 5, size=(40, 2, 2)).astype(float)
        ds = make_ordinal_dataset(codes, 5)
        marg = estimate_marginals(ds)
        for t in range(2):
            for j in range(2):
                cuts = marg.cutpoints[t][j]
                finite = cuts[np.isfinite(cuts)]
                assert np.all(np.diff(finite) > 0)
