import numpy as np
import pytest

from hybridcavi.errors import (
    ConfigurationError,
    DegenerateMomentsError,
    InsufficientSamplesError,
    InvalidInitializationError,
)
from hybridcavi.mcmc import (
    Chain,
    MHConfig,
    chain_moments,
    export_chain_csv,
    export_chain_summary,
    load_chain_csv,
    metropolis_hastings,
    require_nondegenerate,
)
from hybridcavi.models import GaussianMeanModel, TDegreesModel, conjugate_posterior
from hybridcavi.stochastic import mvn_sample


def std_normal(z):
    z = np.asarray(z)
    return -0.5 * np.sum(z * z, axis=-1)


def test_one_dimensional_normal_target():
    chain = metropolis_hastings(std_normal, [0.0], MHConfig(50000, 5000, (2.4,), seed=1))
    post = chain.post_burn_in[:, 0]
    assert abs(post.mean()) < 0.05
    assert 0.9 <= post.var(ddof=1) <= 1.1


def test_outside_support_init_errors():
    model = TDegreesModel(np.array([[0.1, 0.2], [0.3, -0.4]]))
    with pytest.raises(InvalidInitializationError):
        metropolis_hastings(model, [1.0, 1.0], MHConfig(10, 0, (1.0,)))


def test_config_validation():
    with pytest.raises(ConfigurationError):
        MHConfig(10, 10, (1.0,))
    with pytest.raises(ConfigurationError):
        MHConfig(10, -1, (1.0,))
    with pytest.raises(ConfigurationError):
        MHConfig(10, 0, (0.0,))


def test_tiny_steps_almost_always_accepted():
    chain = metropolis_hastings(std_normal, [0.3, -0.2], MHConfig(2000, 0, (1e-8,), seed=2))
    assert chain.acceptance_rate > 0.999


@pytest.mark.parametrize("seed", range(5))
def test_acceptance_strictly_between_zero_and_one(seed):
    chain = metropolis_hastings(std_normal, [0.0, 0.0], MHConfig(1000, 0, (3.0,), seed=seed))
    assert 0.0 < chain.acceptance_rate < 1.0
    assert chain.acceptance_rate == chain.accepted.mean()


def test_reproducible():
    cfg = MHConfig(500, 100, (0.7, 1.3), seed=5)
    a = metropolis_hastings(std_normal, [1.0, 1.0], cfg)
    b = metropolis_hastings(std_normal, [1.0, 1.0], cfg)
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.accepted, b.accepted)


def test_rejected_points_outside_support_keep_chain_valid():
    model = TDegreesModel(np.array([[0.1, 0.2], [1.3, -0.4], [-0.5, 0.9]]))
    chain = metropolis_hastings(model, [2.5, 2.5], MHConfig(2000, 0, (1.0,), seed=3))
    assert np.all(chain.samples > 2.0)


def test_nan_proposals_are_rejected():
    def target(z):
        z = np.asarray(z)
        return np.where(z[..., 0] > 1.0, np.nan, -0.5 * np.sum(z * z, axis=-1))
    chain = metropolis_hastings(target, [0.0], MHConfig(2000, 0, (1.0,), seed=4))
    assert np.all(chain.samples <= 1.0)


def test_chain_length_and_burn_in():
    chain = metropolis_hastings(std_normal, [0.0], MHConfig(300, 120, (1.0,), seed=0))
    assert chain.samples.shape == (300, 1)
    assert chain.post_burn_in.shape == (180, 1)


def test_two_point_moments():
    chain = Chain(np.array([[9.0, 9.0], [1.0, 1.0], [3.0, 3.0]]), np.ones(3, bool), 1, 1.0)
    mom = chain_moments(chain)
    assert np.array_equal(mom.means, [2.0, 2.0])
    assert np.array_equal(mom.variances, [2.0, 2.0])
    assert not mom.degenerate


def test_constant_chain_is_degenerate():
    chain = Chain(np.ones((5, 2)), np.zeros(5, bool), 0, 0.0)
    mom = chain_moments(chain)
    assert mom.degenerate and np.all(mom.variances == 0)
    with pytest.raises(DegenerateMomentsError):
        require_nondegenerate(mom)


def test_moments_need_two_samples():
    with pytest.raises(InsufficientSamplesError):
        chain_moments(Chain(np.ones((5, 1)), np.zeros(5, bool), 4, 0.0))


def test_conjugate_chain_moments_match_posterior():
    sigma = np.array([[38.0, 0.8], [0.8, 4.0]])
    model = GaussianMeanModel(mvn_sample(20240101, [27.0, 13.0], sigma, 100), sigma)
    post = conjugate_posterior(model)
    steps = tuple(2.4 / np.sqrt(2) * np.sqrt(np.diag(sigma) / 100))
    chain = metropolis_hastings(model, [10.0, 10.0], MHConfig(20000, 15000, steps, seed=1))
    mom = chain_moments(chain)
    assert np.all(np.abs(mom.means - post.mean) < 0.1)
    assert np.all(np.abs(mom.variances / np.diag(post.cov) - 1) < 0.3)


def test_chain_csv_round_trip(tmp_path):
    chain = metropolis_hastings(std_normal, [0.0, 0.0], MHConfig(50, 10, (1.0,), seed=8))
    path = export_chain_csv(chain, tmp_path / "chain.csv")
    assert path.read_text().splitlines()[0] == "step,z1,z2,accepted"
    back = load_chain_csv(path, burn_in=10)
    assert np.array_equal(back.samples, chain.samples)
    assert np.array_equal(back.accepted, chain.accepted)
    assert back.acceptance_rate == chain.acceptance_rate


def test_chain_summary_json(tmp_path):
    import json

    chain = metropolis_hastings(std_normal, [0.0], MHConfig(50, 10, (1.0,), seed=8))
    summary = json.loads(export_chain_summary(chain, tmp_path / "s.json").read_text())
    assert set(summary) >= {"acceptance_rate", "burn_in", "moments"}
    assert summary["burn_in"] == 10
