import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from scqr.synth import (
    QV_MEDIAN,
    QV_SUPPORT,
    DgpSpec,
    correlation_matrix,
    gen_dgp,
    rng_stream,
    split_indices,
    train_test_split,
)
from scqr.types import ParameterError


class TestSpec:
    @pytest.mark.parametrize("kw", [
        dict(sigma=None, snr=None),
        dict(sigma=1.0, snr=2.0),
        dict(sigma=-1.0),
        dict(sigma=1.0, rho=1.0),
        dict(sigma=1.0, rho=-0.1),
        dict(sigma=1.0, n=1),
        dict(sigma=1.0, support=(0, 0)),
        dict(sigma=1.0, support=(9,)),
        dict(snr=0.0),
    ])
    def test_invalid(self, kw):
        base = dict(kind="QuadraticGaussian", n=10, d=3)
        base.update(kw)
        with pytest.raises(ParameterError):
            DgpSpec(**base)

    def test_quantile_varying_needs_d26(self):
        with pytest.raises(ParameterError):
            DgpSpec("QuantileVarying", n=10, d=25, sigma=0.5)

    def test_dgp2_needs_three_columns(self):
        with pytest.raises(ParameterError):
            DgpSpec("DgpII", n=10, d=2, sigma=1.0)


class TestGenerators:
    def test_dgp1_formula(self):
        data, truth = gen_dgp(DgpSpec("DgpI", n=200, sigma=0.0, seed=1))
        X = data.X
        np.testing.assert_allclose(data.y, 3 + X[:, 0] ** 0.2 + X[:, 1] ** 0.3)
        assert X.min() >= 1.0 and X.max() <= 10.0
        assert truth.support == (0, 1) and truth.sigma_used == 0.0

    def test_dgp2_formula(self):
        data, _ = gen_dgp(DgpSpec("DgpII", n=50, d=3, sigma=0.0, seed=2))
        X = data.X
        np.testing.assert_allclose(data.y, 3 + X[:, 0] ** 0.05 + X[:, 1] ** 0.15 + X[:, 2] ** 0.3)

    def test_noise_std(self):
        a, _ = gen_dgp(DgpSpec("DgpI", n=20000, sigma=0.0, seed=3))
        b, _ = gen_dgp(DgpSpec("DgpI", n=20000, sigma=2.0, seed=3))
        np.testing.assert_array_equal(a.X, b.X)
        assert np.std(b.y - a.y) == pytest.approx(2.0, rel=0.03)

    @given(st.integers(0, 10**6), st.floats(0.2, 20.0))
    def test_snr_calibration_exact(self, seed, snr):
        data, truth = gen_dgp(DgpSpec("QuadraticGaussian", n=40, d=4, k=2, snr=snr, seed=seed))
        mu = truth.f_true(data.X)
        assert np.var(mu, ddof=1) / truth.sigma_used ** 2 == pytest.approx(snr, rel=1e-12)

    def test_fixed_support(self):
        data, truth = gen_dgp(DgpSpec("QuadraticGaussian", n=30, d=5, sigma=0.0, support=(3, 1)))
        assert truth.support == (1, 3)
        np.testing.assert_allclose(data.y, data.X[:, 1] ** 2 + data.X[:, 3] ** 2)

    def test_random_support_size(self):
        _, truth = gen_dgp(DgpSpec("QuadraticGaussian", n=10, d=30, k=5, snr=3.0, seed=4))
        assert len(truth.support) == 5 and list(truth.support) == sorted(truth.support)

    def test_rho_zero_uncorrelated(self):
        data, _ = gen_dgp(DgpSpec("QuadraticGaussian", n=5000, d=5, sigma=1.0, rho=0.0, seed=5))
        C = np.corrcoef(data.X.T)
        assert np.max(np.abs(C - np.eye(5))) <= 0.1

    def test_correlation_structure(self):
        data, _ = gen_dgp(DgpSpec("QuadraticGaussian", n=20000, d=4, sigma=1.0, rho=0.5, seed=6))
        np.testing.assert_allclose(np.corrcoef(data.X.T), correlation_matrix(4, 0.5), atol=0.03)

    @given(st.integers(2, 40), st.floats(0.0, 0.999))
    def test_correlation_matrix_pd(self, d, rho):
        np.linalg.cholesky(correlation_matrix(d, rho))

    def test_quantile_varying_truth(self):
        data, truth = gen_dgp(DgpSpec("QuantileVarying", n=50, d=30, sigma=0.5, seed=0))
        assert truth.support == QV_SUPPORT and truth.median_support == QV_MEDIAN
        assert data.d == 30

    def test_quantile_varying_median(self):
        data, truth = gen_dgp(DgpSpec("QuantileVarying", n=2000, d=30, sigma=0.5, seed=8))
        above = int(np.sum(data.y > truth.f_true(data.X)))
        assert stats.binomtest(above, data.n, 0.5).pvalue > 0.01

    def test_deterministic(self):
        spec = DgpSpec("QuadraticGaussian", n=25, d=6, k=3, snr=3.0, rho=0.2, seed=11)
        a, ta = gen_dgp(spec)
        b, tb = gen_dgp(spec)
        assert a.X.tobytes() == b.X.tobytes() and a.y.tobytes() == b.y.tobytes()
        assert ta.to_dict() == tb.to_dict()

    def test_streams_independent(self):
        x = rng_stream(5, 0).standard_normal(4)
        y = rng_stream(5, 1).standard_normal(4)
        assert not np.allclose(x, y)
        np.testing.assert_array_equal(x, rng_stream(5, 0).standard_normal(4))


class TestSplit:
    def test_repeatable(self):
        data, _ = gen_dgp(DgpSpec("DgpI", n=10, sigma=1.0))
        a = train_test_split(data, 0.3, 4)
        b = train_test_split(data, 0.3, 4)
        np.testing.assert_array_equal(a[1].y, b[1].y)
        assert a[1].n == 3 and a[0].n == 7

    @given(st.integers(2, 300), st.floats(0.01, 0.99), st.integers(0, 1000))
    def test_partition(self, n, frac, seed):
        tr, te = split_indices(n, frac, seed)
        assert len(np.intersect1d(tr, te)) == 0
        assert sorted(np.concatenate([tr, te]).tolist()) == list(range(n))
        assert len(te) == int(np.floor(n * frac))

    def test_half(self):
        tr, te = split_indices(100, 0.5, 0)
        assert len(tr) == len(te) == 50

    @pytest.mark.parametrize("frac", [0.0, 1.0, -0.2])
    def test_invalid_fraction(self, frac):
        data, _ = gen_dgp(DgpSpec("DgpI", n=10, sigma=1.0))
        with pytest.raises(ParameterError):
            train_test_split(data, frac, 0)
