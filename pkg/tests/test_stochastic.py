import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from hybridcavi.errors import DomainError, InvalidCorrelationError, InvalidCovarianceError
from hybridcavi.stochastic import (
    copula_transform,
    gaussian_copula_sample,
    load_dataset,
    mvn_logpdf,
    mvn_sample,
    quadrature_rule,
    save_dataset,
    t_cdf,
    t_logpdf,
    t_quantile,
)

# scipy.stats.t.logpdf(0, 8)
T_LOGPDF_0_8 = -0.9501086121502307
# scipy.stats.t.ppf(0.975, 50)
T_QUANTILE_975_50 = 2.008559112100761


def test_mvn_sample_mean_converges():
    x = mvn_sample(1, [0.0, 0.0], np.eye(2), 10000)
    assert x.shape == (10000, 2)
    assert np.all(np.abs(x.mean(axis=0)) < 4 / math.sqrt(10000))


def test_mvn_sample_accepts_study_covariance():
    x = mvn_sample(2, [27.0, 13.0], [[38.0, 0.8], [0.8, 4.0]], 100)
    assert x.shape == (100, 2)


def test_mvn_sample_rejects_indefinite_covariance():
    with pytest.raises(InvalidCovarianceError):
        mvn_sample(0, [0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]], 10)


def test_mvn_sample_rejects_asymmetric_covariance():
    with pytest.raises(InvalidCovarianceError):
        mvn_sample(0, [0.0, 0.0], [[1.0, 0.1], [0.0, 1.0]], 10)


def test_mvn_sample_is_deterministic_and_streams_differ():
    a = mvn_sample(7, [0.0], [[1.0]], 50)
    b = mvn_sample(7, [0.0], [[1.0]], 50)
    c = mvn_sample(7, [0.0], [[1.0]], 50, stream=1)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_mvn_logpdf_values():
    assert mvn_logpdf([0.0, 0.0], [0.0, 0.0], np.eye(2)) == pytest.approx(-math.log(2 * math.pi), abs=1e-12)
    assert mvn_logpdf([1.0, 0.0], [0.0, 0.0], np.eye(2)) == pytest.approx(-1.8378770664093453 - 0.5, abs=1e-12)
    cov = np.array([[2.0, 0.3], [0.3, 0.5]])
    mean = np.array([1.0, -2.0])
    expected = -0.5 * math.log((2 * math.pi) ** 2 * np.linalg.det(cov))
    assert mvn_logpdf(mean, mean, cov) == pytest.approx(expected, abs=1e-12)


def test_mvn_logpdf_matches_scipy():
    cov = np.array([[2.0, 0.3], [0.3, 0.5]])
    x, mean = np.array([0.4, 1.1]), np.array([1.0, -2.0])
    assert mvn_logpdf(x, mean, cov) == pytest.approx(stats.multivariate_normal(mean, cov).logpdf(x), abs=1e-12)


def test_mvn_logpdf_dimension_mismatch():
    from hybridcavi.errors import DimensionError

    with pytest.raises(DimensionError):
        mvn_logpdf([0.0, 0.0, 0.0], [0.0, 0.0], np.eye(2))


def test_t_logpdf_oracle():
    assert t_logpdf(0.0, 8.0) == pytest.approx(T_LOGPDF_0_8, abs=1e-12)


@pytest.mark.parametrize("df", [0.5, 1.0, 3.0, 8.0, 50.0, 1e4])
def test_t_quantile_median_is_zero(df):
    assert t_quantile(0.5, df) == 0.0


def test_t_quantile_oracle():
    assert t_quantile(0.975, 50.0) == pytest.approx(T_QUANTILE_975_50, abs=1e-10)


@pytest.mark.parametrize("u", [0.0, 1.0, -0.1, 1.5])
def test_t_quantile_domain(u):
    with pytest.raises(DomainError):
        t_quantile(u, 5.0)


@pytest.mark.parametrize("df", [0.0, -1.0])
def test_t_nonpositive_df(df):
    with pytest.raises(DomainError):
        t_quantile(0.3, df)
    with pytest.raises(DomainError):
        t_logpdf(0.0, df)


@pytest.mark.parametrize("df", [0.7, 2.0, 8.0, 50.0, 300.0])
def test_t_quantile_round_trip_grid(df):
    u = np.linspace(0.01, 0.99, 99)
    assert np.max(np.abs(t_cdf(t_quantile(u, df), df) - u)) < 1e-10


@settings(max_examples=200, deadline=None)
@given(u=st.floats(1e-9, 1 - 1e-9), df=st.floats(0.3, 1e3))
def test_t_quantile_round_trip_property(u, df):
    assert abs(float(t_cdf(t_quantile(u, df), df)) - u) < 1e-10


def test_copula_transform_medians():
    assert np.array_equal(copula_transform(np.zeros((1, 2)), [8.0, 50.0]), np.zeros((1, 2)))


def test_copula_identity_is_uncorrelated():
    x = gaussian_copula_sample(3, np.eye(2), [8.0, 50.0], 20000)
    assert abs(np.corrcoef(x.T)[0, 1]) < 0.03


def test_copula_study_shape():
    x = gaussian_copula_sample(4, [[1.0, 0.5], [0.5, 1.0]], [8.0, 50.0], 100)
    assert x.shape == (100, 2)
    assert np.all(np.isfinite(x))


def test_copula_rejects_non_unit_diagonal():
    with pytest.raises(InvalidCorrelationError):
        gaussian_copula_sample(0, [[2.0, 0.5], [0.5, 1.0]], [8.0, 50.0], 10)


def test_copula_marginal_fidelity():
    dfs = [8.0, 50.0]
    x = gaussian_copula_sample(5, [[1.0, 0.5], [0.5, 1.0]], dfs, 50000)
    for j, df in enumerate(dfs):
        ks = stats.kstest(x[:, j], stats.t(df).cdf).statistic
        assert ks < 0.02


def test_copula_deterministic():
    corr = [[1.0, 0.5], [0.5, 1.0]]
    assert np.array_equal(gaussian_copula_sample(9, corr, [8, 50], 30), gaussian_copula_sample(9, corr, [8, 50], 30))


def test_hermite_one_node():
    rule = quadrature_rule("hermite", 1)
    assert rule.nodes.tolist() == [0.0]
    assert rule.weights[0] == pytest.approx(math.sqrt(math.pi), abs=1e-15)


def test_hermite_second_moment():
    rule = quadrature_rule("hermite", 5)
    assert rule.integrate(lambda t: t ** 2) == pytest.approx(math.sqrt(math.pi) / 2, abs=1e-12)


@pytest.mark.parametrize("n", [1, 2, 8, 32, 64])
def test_hermite_weights_sum(n):
    rule = quadrature_rule("hermite", n)
    assert np.all(rule.weights > 0)
    assert abs(rule.weights.sum() - math.sqrt(math.pi)) < 1e-10


def test_hermite_polynomial_exactness():
    n = 6
    rule = quadrature_rule("hermite", n)
    for k in range(0, 2 * n, 2):
        exact = math.gamma((k + 1) / 2)
        assert rule.integrate(lambda t, k=k: t ** k) == pytest.approx(exact, rel=1e-12)


def test_grid_integrates_normal_pdf():
    rule = quadrature_rule("grid", 1000, center=0.0, half_width=8.0)
    assert abs(rule.integrate(stats.norm.pdf) - 1.0) < 1e-6


def test_quadrature_rule_errors():
    with pytest.raises(DomainError):
        quadrature_rule("hermite", 0)
    with pytest.raises(DomainError):
        quadrature_rule("grid", 10, half_width=0.0)


def test_dataset_csv_round_trip(tmp_path):
    x = mvn_sample(11, [1.0, 2.0, 3.0], np.eye(3), 20)
    path = save_dataset(x, tmp_path / "data.csv")
    assert path.read_text().splitlines()[0] == "x1,x2,x3"
    assert np.array_equal(load_dataset(path), x)
