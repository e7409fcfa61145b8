import numpy as np
import pytest
from scipy import stats

from errors import DomainError, SimulationError
from models.model_spec import EAM_FAMILIES, FAMILIES, FEATURE_DIMS, EamParams, model_spec
from services.simulators import (
    MODEL_SETS,
    default_model_set,
    sample_eam_person_params,
    simulate_dataset,
    simulate_eam_dataset,
    simulate_eam_trial,
    simulate_eam_trials,
    simulate_mpt,
    simulate_noise,
    simulate_normal,
    simulate_sdt,
    trial_table,
    two_high_threshold_rates,
)


# --- every family ---

@pytest.mark.parametrize("family", FAMILIES)
def test_family_shapes_and_meta(family, rng):
    data = simulate_dataset(family, 3, [2, 5, 4], rng, model_index=1, seed=99)
    assert data.group_sizes == [2, 5, 4]
    assert data.feature_dim == FEATURE_DIMS[family]
    assert data.meta.family == family
    assert data.meta.model_index == 1
    assert data.meta.seed == 99


@pytest.mark.parametrize("family", FAMILIES)
def test_same_seed_same_dataset(family):
    a = simulate_dataset(family, 2, 6, np.random.default_rng(5))
    b = simulate_dataset(family, 2, 6, np.random.default_rng(5))
    for ga, gb in zip(a.groups, b.groups):
        assert ga.tobytes() == gb.tobytes()


def test_unknown_family_carries_model_index(rng):
    with pytest.raises(SimulationError) as info:
        simulate_dataset("lba", 2, 3, rng, model_index=4)
    assert info.value.model_index == 4


def test_simulator_domain_errors_are_wrapped(rng):
    with pytest.raises(SimulationError) as info:
        simulate_dataset("sdt", 0, 3, rng, model_index=0)
    assert info.value.family == "sdt"


def test_model_sets():
    for name, families in MODEL_SETS.items():
        specs = default_model_set(name)
        assert [s.family for s in specs] == list(families)
        assert len({s.feature_dim for s in specs}) == 1
    with pytest.raises(KeyError):
        default_model_set("nope")


def test_model_spec_dims():
    assert model_spec("normal-M2").feature_dim == 1
    assert model_spec("mpt").feature_dim == 2
    assert model_spec("eam-full-levy").feature_dim == 3
    assert "alpha_m" in model_spec("eam-basic-levy").prior_table


# --- hierarchical normal ---

@pytest.mark.parametrize("model, mu", [("normal-M1", None), ("normal-M2", 1.3)])
def test_degenerate_variances_collapse_to_mu(model, mu, rng):
    data = simulate_normal(model, 4, 6, rng, tau2=0.0, sigma2=0.0, mu=mu)
    expected = 0.0 if mu is None else mu
    for g in data.groups:
        np.testing.assert_array_equal(g, expected)


def test_group_means_converge_to_theta(rng):
    theta = [-1.0, 0.5, 2.0]
    n = 100_000
    data = simulate_normal("normal-M1", 3, n, rng, sigma2=1.0, theta=theta)
    for g, t in zip(data.groups, theta):
        assert abs(g.mean() - t) < 4 / np.sqrt(n)


def test_pooled_variance_matches_prior(rng):
    second_moments = [
        np.mean(np.concatenate(simulate_normal("normal-M1", 2, 5, rng).groups) ** 2) for _ in range(10_000)
    ]
    expected = 2 * np.sqrt(2 / np.pi)
    assert np.mean(second_moments) == pytest.approx(expected, rel=0.02)


def test_normal_rejects_unknown_variant(rng):
    with pytest.raises(DomainError):
        simulate_normal("normal-M3", 2, 2, rng)


# --- SDT / MPT ---

def _hit_and_fa(data):
    rows = np.concatenate(data.groups)
    return rows[rows[:, 0] == 1, 1].mean(), rows[rows[:, 0] == 0, 1].mean()


def test_perfect_observer(rng):
    data = simulate_sdt(3, 20, rng, h=1.0, f=0.0)
    for g in data.groups:
        np.testing.assert_array_equal(g[:, 1], g[:, 0])


def test_stimulus_types_are_balanced(rng):
    data = simulate_sdt(2, 10, rng)
    for g in data.groups:
        assert g[:, 0].sum() == 5


def test_zero_probit_gives_chance_hits(rng):
    data = simulate_sdt(4, 20_000, rng, h_prime=0.0, f_prime=0.0)
    hit, fa = _hit_and_fa(data)
    assert hit == pytest.approx(0.5, abs=0.01)
    assert fa == pytest.approx(0.5, abs=0.01)


def test_sdt_prior_predictive_hit_rate(rng):
    hits = [_hit_and_fa(simulate_sdt(4, 20, rng))[0] for _ in range(5000)]
    oracle = np.random.default_rng(11)
    mu = oracle.normal(1.0, 0.5, size=200_000)
    sigma = oracle.gamma(1.0, 1.0, size=200_000)
    expected = stats.norm.cdf(mu / np.sqrt(1.0 + sigma ** 2)).mean()
    assert np.mean(hits) == pytest.approx(expected, rel=0.02)


def test_two_high_threshold_algebra(rng):
    d, g = rng.random(1000), rng.random(1000)
    h, f = two_high_threshold_rates(d, g)
    np.testing.assert_allclose(h - f, d, atol=1e-15)
    assert np.all(h >= f)
    np.testing.assert_array_equal(two_high_threshold_rates(1.0, g)[0], 1.0)
    np.testing.assert_array_equal(two_high_threshold_rates(1.0, g)[1], 0.0)
    h0, f0 = two_high_threshold_rates(0.0, g)
    np.testing.assert_array_equal(h0, g)
    np.testing.assert_array_equal(f0, g)


def test_mpt_perfect_detection(rng):
    data = simulate_mpt(3, 30, rng, d=1.0)
    for g in data.groups:
        np.testing.assert_array_equal(g[:, 1], g[:, 0])


def test_mpt_pure_guessing_ignores_stimulus(rng):
    data = simulate_mpt(2, 40_000, rng, d=0.0, g=0.3)
    hit, fa = _hit_and_fa(data)
    assert hit == pytest.approx(0.3, abs=0.01)
    assert fa == pytest.approx(0.3, abs=0.01)


# --- noise ---

def test_noise_cells_are_fair_and_independent(rng):
    data = simulate_noise(100, 10_000, rng)
    rows = np.concatenate(data.groups)
    assert rows.shape == (1_000_000, 2)
    for column in rows.T:
        assert 0.498 <= column.mean() <= 0.502
    assert abs(np.corrcoef(rows[:, 0], rows[:, 1])[0, 1]) < 0.01


# --- evidence accumulation ---

def _person(**kw):
    base = dict(a=1.0, zr=0.5, v0=-0.5, v1=0.5, t0=0.3, alpha=2.0, sv=0.0, sz=0.0, st=0.0)
    return EamParams(**{**base, **kw})


def _many(person, n, stimulus, rng, dt=1e-3):
    return simulate_eam_trials(trial_table([person], [n]), np.full(n, stimulus), rng, dt=dt)


def test_rt_exceeds_non_decision_time(rng):
    rt, response = _many(_person(t0=0.4), 2000, 1, rng)
    assert np.all(rt > 0.4)
    assert set(np.unique(response)) <= {0.0, 1.0}


def test_strong_drift_hits_upper_boundary(rng):
    _, response = _many(_person(v1=100.0), 10_000, 1, rng)
    assert response.mean() > 0.999


def test_single_trial_view(rng):
    rt, response = simulate_eam_trial(_person(alpha=1.5), 0, rng)
    assert rt > 0.3
    assert response in (0, 1)


def test_invalid_trial_parameters(rng):
    with pytest.raises(DomainError):
        simulate_eam_trials(trial_table([_person()], [2]), np.ones(2), rng, dt=0.0)


@pytest.mark.slow
def test_gaussian_noise_matches_wiener_hitting_probability(rng):
    n, v, a, zr = 50_000, 0.5, 1.0, 0.5
    _, response = _many(_person(v1=v, a=a, zr=zr), n, 1, rng, dt=1e-4)
    # unit diffusion constant
    expected = (1 - np.exp(-2 * v * zr * a)) / (1 - np.exp(-2 * v * a))
    assert abs(response.mean() - expected) < 3 * np.sqrt(expected * (1 - expected) / n)


@pytest.mark.slow
def test_halving_dt_barely_moves_mean_rt(rng):
    person = _person(v1=1.0)
    coarse, _ = _many(person, 50_000, 1, rng, dt=1e-3)
    fine, _ = _many(person, 50_000, 1, rng, dt=5e-4)
    assert abs(coarse.mean() - fine.mean()) / fine.mean() < 0.02


@pytest.mark.parametrize("family", EAM_FAMILIES)
def test_person_draws_follow_family(family, rng):
    persons = sample_eam_person_params(family, 5, rng)
    for p in persons:
        assert p.v0 < 0 < p.v1
        assert 1.0 <= p.alpha <= 2.0
        if family.endswith("-dm"):
            assert p.alpha == 2.0
        if family.startswith("eam-basic"):
            assert p.sv == p.sz == p.st == 0.0


def test_eam_rows(rng):
    data = simulate_eam_dataset("eam-full-levy", 3, 10, rng)
    for g in data.groups:
        assert g.shape == (10, 3)
        assert set(np.unique(g[:, 1])) <= {0.0, 1.0}
        assert g[:, 2].sum() == 5
        assert np.all(g[:, 0] > 0)


def _eam_pair(first, second, overrides, seed=17):
    a = simulate_eam_dataset(first, 3, 8, np.random.default_rng(seed), overrides=overrides)
    b = simulate_eam_dataset(second, 3, 8, np.random.default_rng(seed), overrides=overrides)
    return np.concatenate(a.groups), np.concatenate(b.groups)


def test_full_model_without_variability_is_basic_model():
    full, basic = _eam_pair("eam-full-dm", "eam-basic-dm", {"sv": 0.0, "sz": 0.0, "st": 0.0})
    np.testing.assert_array_equal(full, basic)


def test_levy_model_with_gaussian_noise_is_diffusion_model():
    levy, dm = _eam_pair("eam-basic-levy", "eam-basic-dm", {"alpha": 2.0})
    np.testing.assert_array_equal(levy, dm)


def test_prior_predictive_alpha(rng):
    alphas = [p.alpha for _ in range(2000) for p in sample_eam_person_params("eam-basic-levy", 5, rng)]
    oracle = np.random.default_rng(3)
    mu = oracle.normal(1.65, 0.15, size=50_000)
    sigma = stats.truncnorm.rvs(-0.3 / 0.1, np.inf, loc=0.3, scale=0.1, size=50_000, random_state=oracle)
    expected = stats.truncnorm.mean((1.0 - mu) / sigma, (2.0 - mu) / sigma, loc=mu, scale=sigma).mean()
    assert np.mean(alphas) == pytest.approx(expected, rel=0.01)
