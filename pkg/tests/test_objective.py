import numpy as np
import pytest

from bopdp import objective as ob
from bopdp import space as sp
from bopdp.errors import ContractError

from conftest import svm_config, xgboost_config


def st_1d(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x**4 - 16.0 * x**2 + 5.0 * x)


class TestStyblinskiTang:
    def test_zero_at_origin(self):
        for d in (1, 2, 5):
            st = ob.styblinski_tang(d)
            c = sp.Config({n: 0.0 for n in st.space.names})
            assert st(c) == 0.0

    def test_hand_value_at_one(self):
        st = ob.styblinski_tang(1)
        assert st(sp.Config({"x1": 1.0})) == pytest.approx((1 - 16 + 5) / 2)

    def test_global_minimum_matches_grid_search_oracle(self):
        # dense 1-D grid oracle; the function is separable so the 2-D minimum
        # is twice the per-dimension minimum
        xs = np.linspace(-5, 5, 200_001)
        oracle_min = st_1d(xs).min()
        st = ob.styblinski_tang(2)
        val = st(sp.Config({"x1": -2.903534, "x2": -2.903534}))
        assert val == pytest.approx(2 * oracle_min, abs=1e-4)
        assert val == pytest.approx(-78.332, abs=1e-3)

    def test_plus_form_flips_quadratic_term(self):
        plus = ob.styblinski_tang(1, plus_form=True)
        assert plus(sp.Config({"x1": 1.0})) == pytest.approx((1 + 16 + 5) / 2)
        # the printed form is a single-well function: no second basin near -3
        xs = np.linspace(-5, 5, 1001)
        vals = plus.evaluate_matrix(xs[:, None])
        assert np.argmin(vals) > len(xs) // 4

    def test_matrix_and_config_paths_agree(self, rng):
        st = ob.styblinski_tang(3)
        x = rng.uniform(-5, 5, size=(50, 3))
        batch = st.evaluate_matrix(x)
        single = [st(sp.Config(dict(zip(st.space.names, row)))) for row in x]
        assert np.allclose(batch, single, atol=0)

    def test_dimension_must_be_positive(self):
        with pytest.raises(ContractError):
            ob.styblinski_tang(0)


class TestTableObjective:
    def make_rows(self):
        space = sp.continuous_space([(0.0, 1.0), (0.0, 1.0)])
        rows = [
            (sp.Config({"x1": 0.0, "x2": 0.0}), 0.0),
            (sp.Config({"x1": 1.0, "x2": 1.0}), 1.0),
            (sp.Config({"x1": 0.0, "x2": 1.0}), 3.0),
        ]
        return rows, space

    def test_exact_match_returns_stored_cost(self):
        rows, space = self.make_rows()
        obj = ob.table_objective(rows, space, k=2)
        assert obj(rows[1][0]) == 1.0

    def test_single_row_is_constant(self):
        space = sp.continuous_space([(0.0, 1.0)])
        obj = ob.table_objective([(sp.Config({"x1": 0.25}), 7.5)], space, k=3)
        assert obj(sp.Config({"x1": 0.9})) == pytest.approx(7.5, rel=1e-15)
        assert obj(sp.Config({"x1": 0.0})) == pytest.approx(7.5, rel=1e-15)

    def test_equidistant_two_rows_average(self):
        space = sp.continuous_space([(0.0, 1.0)])
        rows = [(sp.Config({"x1": 0.0}), 0.0), (sp.Config({"x1": 1.0}), 1.0)]
        obj = ob.table_objective(rows, space, k=2)
        assert obj(sp.Config({"x1": 0.5})) == pytest.approx(0.5)

    def test_idempotent_on_training_rows(self, rng):
        space = sp.continuous_space([(0.0, 1.0)] * 3)
        configs = sp.sample_uniform(space, 20, seed=8)
        rows = [(c, float(rng.normal())) for c in configs]
        obj = ob.table_objective(rows, space, k=4)
        for c, cost in rows:
            assert obj(c) == cost

    def test_query_outside_bounds_rejected(self):
        rows, space = self.make_rows()
        obj = ob.table_objective(rows, space, k=1)
        with pytest.raises(ContractError):
            obj(sp.Config({"x1": 2.0, "x2": 0.0}))

    def test_hierarchical_rows(self, figure_a_space):
        rows = [
            (xgboost_config(k=2, eta=0.01, nrounds=100), 1.0),
            (xgboost_config(k=7, eta=0.1, nrounds=300), 2.0),
            (svm_config(k=3, c=1.0), 3.0),
        ]
        obj = ob.table_objective(rows, figure_a_space, k=2)
        assert obj(rows[2][0]) == 3.0

    def test_csv_round_trip(self, tmp_path):
        space = sp.continuous_space([(0.0, 1.0), (0.0, 2.0)])
        path = tmp_path / "table.csv"
        path.write_text("x1,x2,cost\n0.1,0.2,5.0\n0.9,1.5,9.0\n", encoding="utf-8")
        obj = ob.table_objective_from_csv(path, space, k=1)
        assert obj(sp.Config({"x1": 0.1, "x2": 0.2})) == 5.0

    def test_csv_requires_cost_column(self, tmp_path):
        space = sp.continuous_space([(0.0, 1.0)])
        path = tmp_path / "bad.csv"
        path.write_text("x1,value\n0.1,5.0\n", encoding="utf-8")
        with pytest.raises(ContractError):
            ob.table_objective_from_csv(path, space, k=1)


class TestTruePd:
    def test_constant_objective_gives_constant_marginal(self):
        space = sp.continuous_space([(0.0, 1.0)] * 2)
        rows = [(sp.Config({"x1": 0.5, "x2": 0.5}), 4.0)]
        obj = ob.table_objective(rows, space, k=1)
        grid = sp.make_grid(space, 0, 5)
        marg = ob.true_pd(obj, space, 0, grid, n_mc=50, seed=1)
        assert np.allclose(marg.values, 4.0)

    def test_additive_objective_marginal_is_shifted_univariate(self):
        # the shared complement sample makes the difference exactly constant
        st = ob.styblinski_tang(3)
        grid = sp.make_grid(st.space, 0, 12)
        marg = ob.true_pd(st, st.space, 0, grid, n_mc=4000, seed=2)
        diff = marg.values - st_1d(np.array(grid.points))
        assert np.ptp(diff) < 1e-8

    def test_boundary_value_against_independent_mc_oracle(self, rng):
        # grid point x1 = -5 of d=3: re-estimate with a second, independent
        # Monte Carlo oracle and require agreement within 3 standard errors
        st = ob.styblinski_tang(3)
        grid = sp.Grid(0, (-5.0,))
        n = 100_000
        marg = ob.true_pd(st, st.space, 0, grid, n_mc=n, seed=11)
        comp = rng.uniform(-5, 5, size=(n, 2))
        vals = st_1d(np.full(n, -5.0)) + st_1d(comp[:, 0]) + st_1d(comp[:, 1])
        se = vals.std(ddof=1) / np.sqrt(n)
        assert abs(marg.values[0] - vals.mean()) < 3 * (2 * se)

    def test_hierarchical_marginal_averages_only_valid(self, figure_a_space):
        costs = {"svm": 2.0, "xgboost": 10.0}

        class ByAlgorithm:
            def __call__(self, config):
                return costs[config["algorithm"]]

        obj = ob.Objective(fn=ByAlgorithm(), space=figure_a_space)
        s = figure_a_space.index("algorithm")
        grid = sp.make_grid(figure_a_space, s, 2)
        marg = ob.true_pd(obj, figure_a_space, s, grid, n_mc=400, seed=3)
        assert marg.values[list(grid.points).index("svm")] == pytest.approx(2.0)
        assert marg.values[list(grid.points).index("xgboost")] == pytest.approx(10.0)

    def test_marginal_length_matches_grid(self):
        st = ob.styblinski_tang(2)
        grid = sp.make_grid(st.space, 1, 7)
        marg = ob.true_pd(st, st.space, 1, grid, n_mc=10, seed=0)
        assert len(marg.values) == len(grid) == 7
