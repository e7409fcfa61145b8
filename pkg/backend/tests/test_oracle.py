import math

import numpy as np
import pytest
from scipy import stats

from errors import AccuracyError, DomainError
from models.configs import QuadratureConfig
from models.dataset import HierarchicalDataset
from models.reports import PmpVector
from services.oracle import (
    bayes_factor,
    group_log_density_normal,
    log_marginal_normal,
    network_to_bf,
    oracle_pmps,
    pmps_from_logml,
    posterior_odds,
)

REFERENCE = HierarchicalDataset(groups=[[0.3, -0.5, 1.1], [0.9, 1.4, 0.2]])


def _mc_log_mean(log_w):
    """log of the mean of exp(log_w) and the standard error of that log."""
    shift = log_w.max()
    w = np.exp(log_w - shift)
    mean = w.mean()
    return math.log(mean) + shift, w.std(ddof=1) / math.sqrt(w.size) / mean


# --- group level ---

def test_independence_limit(rng):
    x = rng.normal(size=7)
    expected = stats.norm.logpdf(x, 0.4, math.sqrt(1.7)).sum()
    assert group_log_density_normal(x, 0.4, 0.0, 1.7) == pytest.approx(expected, rel=1e-12)


def test_single_observation(rng):
    assert group_log_density_normal([0.8], -0.2, 0.6, 1.1) == pytest.approx(
        stats.norm.logpdf(0.8, -0.2, math.sqrt(1.7)), rel=1e-12
    )


def test_group_density_matches_monte_carlo(rng):
    x, mu, tau2, sigma2 = rng.normal(size=4), 0.3, 0.8, 0.6
    theta = rng.normal(mu, math.sqrt(tau2), size=1_000_000)
    log_w = stats.norm.logpdf(x[None, :], theta[:, None], math.sqrt(sigma2)).sum(axis=1)
    estimate, se = _mc_log_mean(log_w)
    assert abs(group_log_density_normal(x, mu, tau2, sigma2) - estimate) < 3 * se


@pytest.mark.parametrize("tau2, sigma2", [(0.5, 0.0), (0.5, -1.0), (-0.1, 1.0)])
def test_group_density_domain(tau2, sigma2):
    with pytest.raises(DomainError):
        group_log_density_normal([1.0, 2.0], 0.0, tau2, sigma2)


# --- quadrature ---

@pytest.mark.parametrize("model", ["normal-M1", "normal-M2"])
def test_quadrature_matches_monte_carlo(model, rng):
    n = 2_000_000
    tau2 = np.abs(rng.standard_normal(n))
    sigma2 = np.abs(rng.standard_normal(n))
    mu = rng.standard_normal(n) if model == "normal-M2" else np.zeros(n)
    log_w = np.zeros(n)
    for g in REFERENCE.groups:
        theta = rng.normal(mu, np.sqrt(tau2))
        log_w += stats.norm.logpdf(g[:, 0][None, :], theta[:, None], np.sqrt(sigma2)[:, None]).sum(axis=1)
    estimate, se = _mc_log_mean(log_w)
    value = log_marginal_normal(REFERENCE, model).value
    assert abs(value - estimate) < 3 * se + 1e-3


def test_node_doubling_is_stable():
    coarse = log_marginal_normal(REFERENCE, "normal-M2", QuadratureConfig(nodes=32)).value
    fine = log_marginal_normal(REFERENCE, "normal-M2", QuadratureConfig(nodes=64)).value
    assert abs(coarse - fine) < 1e-3


def test_unconverged_quadrature_raises():
    with pytest.raises(AccuracyError):
        log_marginal_normal(REFERENCE, "M1", QuadratureConfig(nodes=16, zoom_iterations=0, tolerance=1e-15))


def test_model_index_defaults_to_variant():
    assert log_marginal_normal(REFERENCE, "M1").model_index == 0
    assert log_marginal_normal(REFERENCE, "normal-M2").model_index == 1
    assert log_marginal_normal(REFERENCE, "normal-M2", model_index=5).model_index == 5


def test_oracle_rejects_other_families():
    with pytest.raises(DomainError):
        log_marginal_normal(REFERENCE, "sdt")
    with pytest.raises(DomainError):
        log_marginal_normal(HierarchicalDataset(groups=[np.ones((2, 2))]), "M1")


def _log_bf21(data):
    return log_marginal_normal(data, "M2").value - log_marginal_normal(data, "M1").value


def test_common_offset_favours_free_location(rng):
    data = HierarchicalDataset(groups=[5.0 + 0.5 * rng.standard_normal(6) for _ in range(8)])
    assert _log_bf21(data) > 0


def test_log_bf_grows_with_offset(rng):
    base = [0.5 * rng.standard_normal(6) for _ in range(6)]
    bfs = [_log_bf21(HierarchicalDataset(groups=[g + c for g in base])) for c in (0.0, 1.5, 3.0)]
    assert bfs[0] < bfs[1] < bfs[2]


def test_oracle_pmps(rng):
    datasets = [REFERENCE, HierarchicalDataset(groups=[rng.normal(size=4) for _ in range(3)])]
    logmls, pmps = oracle_pmps(datasets, ["normal-M1", "normal-M2"])
    assert logmls.shape == pmps.shape == (2, 2)
    np.testing.assert_allclose(pmps.sum(axis=1), 1.0, atol=1e-12)
    assert logmls[0, 0] == pytest.approx(log_marginal_normal(REFERENCE, "M1").value)
    with pytest.raises(DomainError):
        oracle_pmps(datasets, ["normal-M1", "sdt"])


# --- evidence algebra ---

def test_pmps_from_logml():
    np.testing.assert_allclose(pmps_from_logml([1.0, 1.0, 1.0]).probs, 1 / 3)
    np.testing.assert_allclose(pmps_from_logml([0.0, math.log(3)]).probs, [0.25, 0.75], atol=1e-15)
    shifted = pmps_from_logml([-1200.0, -1200.0 + math.log(3)]).probs
    np.testing.assert_allclose(shifted, [0.25, 0.75], atol=1e-12)


def test_pmps_need_a_proper_prior():
    with pytest.raises(DomainError):
        pmps_from_logml([0.0, 1.0], prior=[0.7, 0.7])


def test_bayes_factor_of_a_model_with_itself():
    assert bayes_factor(-12.3, -12.3) == 1.0


def test_posterior_odds_identity(rng):
    for _ in range(20):
        logmls = rng.normal(scale=3.0, size=3)
        prior = rng.dirichlet(np.ones(3))
        pmp = pmps_from_logml(logmls, prior).probs
        for j in range(3):
            for k in range(3):
                expected = bayes_factor(logmls[j], logmls[k]) * prior[j] / prior[k]
                assert posterior_odds(pmp[j], pmp[k]) == pytest.approx(expected, rel=1e-12)


def test_uniform_prior_odds_equal_bayes_factor():
    logmls = [-3.0, -4.5]
    pmp = pmps_from_logml(logmls).probs
    assert posterior_odds(pmp[0], pmp[1]) == pytest.approx(bayes_factor(*logmls), rel=1e-12)


@pytest.mark.parametrize("probs, bf01", [([0.5, 0.5], 1.0), ([0.75, 0.25], 3.0)])
def test_network_to_bf(probs, bf01):
    bf = network_to_bf(PmpVector(probs=probs))
    assert bf.values[0, 1] == pytest.approx(bf01)
    assert bf.values[1, 0] == pytest.approx(1 / bf01)
    np.testing.assert_allclose(np.diag(bf.values), 1.0)
    assert not bf.saturated


def test_network_to_bf_uses_prior():
    bf = network_to_bf(PmpVector(probs=[0.5, 0.5]), prior=[0.25, 0.75])
    assert bf.values[0, 1] == pytest.approx(3.0)


def test_network_to_bf_saturates():
    bf = network_to_bf(PmpVector(probs=[1.0, 0.0]))
    assert bf.saturated
    assert bf.values[0, 1] == 1e12
    assert bf.values[1, 0] == 1e-12
