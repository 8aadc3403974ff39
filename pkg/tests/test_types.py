import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scqr.types import (
    CqrModel,
    Dataset,
    DegenerateColumnError,
    ParameterError,
    QuantileConfig,
    SolveReport,
    SupportVector,
    Termination,
    pinball_loss,
    standardize,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)
taus = st.floats(0.01, 0.99)


class TestPinball:
    def test_positive_residual(self):
        assert pinball_loss(2.0, 0.25) == 0.5

    def test_negative_residual(self):
        assert pinball_loss(-2.0, 0.25) == 1.5

    def test_zero_residual(self):
        assert pinball_loss(0.0, 0.9) == 0.0

    @pytest.mark.parametrize("tau", [0.0, 1.0, -0.1, 1.5])
    def test_tau_outside_unit_interval(self, tau):
        with pytest.raises(ParameterError):
            pinball_loss(1.0, tau)

    def test_vectorized(self):
        out = pinball_loss(np.array([2.0, -2.0, 0.0]), 0.25)
        np.testing.assert_allclose(out, [0.5, 1.5, 0.0])

    @given(finite, finite, st.floats(0, 1), taus)
    def test_convex(self, u1, u2, lam, tau):
        mid = pinball_loss(lam * u1 + (1 - lam) * u2, tau)
        assert mid <= lam * pinball_loss(u1, tau) + (1 - lam) * pinball_loss(u2, tau) + 1e-9

    @given(finite)
    def test_median_is_half_abs(self, u):
        assert pinball_loss(u, 0.5) == pytest.approx(0.5 * abs(u))

    @given(finite, taus)
    def test_nonnegative(self, u, tau):
        assert pinball_loss(u, tau) >= 0.0


class TestDataset:
    def test_shapes(self):
        ds = Dataset(np.ones((3, 2)), [1, 2, 3])
        assert (ds.n, ds.d) == (3, 2)
        assert ds.names() == ("x0", "x1")

    def test_vector_x_becomes_column(self):
        assert Dataset([1.0, 2.0, 3.0], [0, 1, 2]).d == 1

    @pytest.mark.parametrize("X, y", [
        (np.ones((1, 2)), [1.0]),
        (np.ones((3, 2)), [1.0, 2.0]),
        (np.array([[1.0], [np.nan]]), [1.0, 2.0]),
        (np.ones((2, 1)), [1.0, np.inf]),
    ])
    def test_rejects_bad_input(self, X, y):
        with pytest.raises(ParameterError):
            Dataset(X, y)

    def test_names_length(self):
        with pytest.raises(ParameterError):
            Dataset(np.ones((3, 2)), [1, 2, 3], feature_names=("a",))

    def test_immutable_arrays(self):
        ds = Dataset(np.ones((3, 2)), [1, 2, 3])
        with pytest.raises(ValueError):
            ds.X[0, 0] = 5.0

    def test_negated(self):
        ds = Dataset(np.arange(6.0).reshape(3, 2), [1.0, 2.0, 4.0])
        np.testing.assert_array_equal(ds.negated().y, [-1.0, -2.0, -4.0])


class TestStandardize:
    def test_column_example(self):
        ds = standardize(Dataset(np.array([[1.0], [2.0], [3.0]]), [1.0, 0.0, 2.0]))
        r = 1 / math.sqrt(2)
        np.testing.assert_allclose(ds.X[:, 0], [-r, 0.0, r], atol=1e-15)

    def test_constant_column(self):
        X = np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]])
        with pytest.raises(DegenerateColumnError, match="x0"):
            standardize(Dataset(X, [1.0, 2.0, 4.0]))

    def test_constant_response(self):
        with pytest.raises(DegenerateColumnError):
            standardize(Dataset(np.array([[1.0], [2.0], [3.0]]), [2.0, 2.0, 2.0]))

    def test_invariants(self, rng):
        ds = standardize(Dataset(rng.normal(3.0, 2.0, (40, 4)), rng.normal(size=40)))
        assert ds.standardized
        assert np.all(np.abs(ds.X.mean(axis=0)) <= 1e-10)
        assert np.all(np.abs(np.linalg.norm(ds.X, axis=0) - 1) <= 1e-10)
        assert abs(ds.y.mean()) <= 1e-10 and abs(np.linalg.norm(ds.y) - 1) <= 1e-10

    @given(st.integers(0, 2**32 - 1))
    def test_idempotent(self, seed):
        r = np.random.default_rng(seed)
        once = standardize(Dataset(r.normal(1.0, 3.0, (12, 3)), r.exponential(size=12)))
        twice = standardize(once)
        np.testing.assert_allclose(twice.X, once.X, atol=1e-12)
        np.testing.assert_allclose(twice.y, once.y, atol=1e-12)
        np.testing.assert_allclose(twice.centers, once.centers, atol=1e-12)
        np.testing.assert_allclose(twice.scales, once.scales, rtol=1e-12)

    def test_round_trip_to_raw_units(self, rng):
        raw = Dataset(rng.normal(5.0, 2.0, (10, 2)), rng.normal(7.0, 3.0, 10))
        ds = standardize(raw)
        np.testing.assert_allclose(ds.transform_X(raw.X), ds.X, atol=1e-12)
        np.testing.assert_allclose(ds.inverse_y(ds.y), raw.y, atol=1e-12)


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        {"tau": 0.0}, {"tau": 1.0}, {"C": 0.0}, {"epsilon": -1.0}, {"tol": 0.0},
        {"qp_eps": 0.0}, {"max_cp_iters": 0}, {"initial_pool": "all"}, {"qp_method": "simplex"},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ParameterError):
            QuantileConfig(**kwargs)

    def test_with(self):
        cfg = QuantileConfig().with_(C=3.0)
        assert cfg.C == 3.0 and cfg.tau == 0.5


class TestSupportVector:
    def test_from_indices_and_bits(self):
        z = SupportVector.from_indices([0, 2], 4, 3)
        assert z.bits() == "1010" and z.indices == (0, 2) and z.k == 3
        assert SupportVector.from_bits("1010", 3) == z

    def test_cardinality(self):
        with pytest.raises(ParameterError):
            SupportVector(np.array([1, 1, 1]), 2)

    def test_binary(self):
        with pytest.raises(ParameterError):
            SupportVector(np.array([0.5, 0.0]), 2)

    def test_hamming(self):
        a = SupportVector.from_bits("1100", 2)
        b = SupportVector.from_bits("0110", 2)
        assert a.hamming(b) == 2

    def test_hashable(self):
        assert len({SupportVector.from_bits("10", 1), SupportVector.from_bits("10", 1)}) == 1


class TestReports:
    def test_negative_fields(self):
        with pytest.raises(ParameterError):
            SolveReport(iterations=-1, wall_time=0.0, objective=0.0, primal_infeasibility=0.0,
                        termination=Termination.CONVERGED)

    def test_to_dict(self):
        rep = SolveReport(3, 0.1, 2.0, 0.0, Termination.ITER_LIMIT)
        assert rep.to_dict()["termination"] == "IterLimit"

    def test_model_mu_arrays(self):
        m = CqrModel(theta=[0.0, 1.0], beta=[[0.0], [1.0]], xi=[0, 0], xi_star=[0, 0],
                     anchors=[[0.0], [1.0]], objective=0.0, mu={(0, 1): 0.5})
        I, J, V = m.mu_arrays()
        assert list(I) == [0] and list(J) == [1] and list(V) == [0.5]
