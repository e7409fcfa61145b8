# services/simulators.py
# Forward generative programs for every model family, plus the registry used by training
# and the CLI. Each simulator is a pure function of its arguments and an RNG handle.

import logging
from collections import Counter
from typing import Sequence

import numpy as np
from scipy import special, stats

from errors import DomainError, SimulationError
from models.dataset import DatasetMeta, HierarchicalDataset
from models.model_spec import EAM_FAMILIES, EamParams, ModelSpec, model_spec
from services.samplers import (
    sample_alpha_stable,
    sample_gamma_mean_sd,
    sample_half_normal,
    sample_inverse_wishart,
    sample_truncated_normal,
)

logger = logging.getLogger(__name__)

# incremented alongside the matching log call
DIAGNOSTICS: Counter = Counter()

EAM_DT = 1e-3
EAM_T_MAX = 10.0
EAM_NOISE_SCALE = 1.0 / np.sqrt(2.0)
_MAX_RESAMPLES = 100

MODEL_SETS: dict[str, tuple[str, ...]] = {
    "normal": ("normal-M1", "normal-M2"),
    "sdt-mpt": ("sdt", "mpt"),
    "eam": EAM_FAMILIES,
}


def default_model_set(name: str) -> list[ModelSpec]:
    """Preset candidate model sets: normal, sdt-mpt, eam."""
    if name not in MODEL_SETS:
        raise KeyError(f"unknown model set {name!r} (choose from {', '.join(MODEL_SETS)})")
    return [model_spec(f) for f in MODEL_SETS[name]]


def _group_sizes(n_groups: int, n_obs) -> list[int]:
    if n_groups < 1:
        raise DomainError("need at least one group")
    sizes = [int(n_obs)] * n_groups if np.ndim(n_obs) == 0 else [int(n) for n in n_obs]
    if len(sizes) != n_groups:
        raise DomainError(f"got {len(sizes)} group sizes for {n_groups} groups")
    if min(sizes) < 1:
        raise DomainError("every group needs at least one observation")
    return sizes


def _injected(value, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=np.float64), (n,)).copy()


# --- hierarchical normal ---

def simulate_normal(
    model: str,
    n_groups: int,
    n_obs,
    rng: np.random.Generator,
    *,
    tau2: float | None = None,
    sigma2: float | None = None,
    mu: float | None = None,
    theta=None,
) -> HierarchicalDataset:
    """
    tau2, sigma2 ~ Normal+(0, 1); mu = 0 (M1) or Normal(0, 1) (M2);
    theta_m ~ Normal(mu, sqrt(tau2)); x_mn ~ Normal(theta_m, sqrt(sigma2)).
    Keyword arguments replace the corresponding draw.
    """
    variant = model.removeprefix("normal-")
    if variant not in ("M1", "M2"):
        raise DomainError(f"unknown normal model {model!r}")
    sizes = _group_sizes(n_groups, n_obs)
    t2 = abs(rng.standard_normal()) if tau2 is None else float(tau2)
    s2 = abs(rng.standard_normal()) if sigma2 is None else float(sigma2)
    if variant == "M1":
        loc = 0.0 if mu is None else float(mu)
    else:
        loc = rng.standard_normal() if mu is None else float(mu)
    if t2 < 0 or s2 < 0:
        raise DomainError("variances must be non-negative")
    th = rng.normal(loc, np.sqrt(t2), size=n_groups)
    if theta is not None:
        th = _injected(theta, n_groups)
    groups = [rng.normal(th[m], np.sqrt(s2), size=n) for m, n in enumerate(sizes)]
    return HierarchicalDataset(groups=groups, meta=DatasetMeta(family=f"normal-{variant}"))


# --- binary recognition data ---

def _stimulus_types(n: int, rng: np.random.Generator) -> np.ndarray:
    """Half of the trials of type 0, half of type 1, in random order."""
    return rng.permutation(np.arange(n) % 2).astype(np.float64)


def _binary_trials(hit, false_alarm, sizes: list[int], rng: np.random.Generator) -> list[np.ndarray]:
    groups = []
    for m, n in enumerate(sizes):
        s = _stimulus_types(n, rng)
        p = np.where(s == 1, hit[m], false_alarm[m])
        response = (rng.random(n) < p).astype(np.float64)
        groups.append(np.column_stack([s, response]))
    return groups


def sdt_hit_rates(n_groups: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-person probit-scale (h', f') from the equal-variance SDT hierarchy."""
    mu_h = rng.normal(1.0, 0.5)
    sigma_h = rng.gamma(1.0, 1.0)
    mu_f = rng.normal(-1.0, 0.5)
    sigma_f = rng.gamma(1.0, 1.0)
    return rng.normal(mu_h, sigma_h, size=n_groups), rng.normal(mu_f, sigma_f, size=n_groups)


def simulate_sdt(
    n_groups: int,
    n_obs,
    rng: np.random.Generator,
    *,
    h=None,
    f=None,
    h_prime=None,
    f_prime=None,
) -> HierarchicalDataset:
    """Rows are (stimulus type, response); response ~ Bernoulli(h_m) on type 1, Bernoulli(f_m) on type 0."""
    sizes = _group_sizes(n_groups, n_obs)
    hp, fp = sdt_hit_rates(n_groups, rng)
    if h_prime is not None:
        hp = _injected(h_prime, n_groups)
    if f_prime is not None:
        fp = _injected(f_prime, n_groups)
    hit = stats.norm.cdf(hp) if h is None else _injected(h, n_groups)
    fa = stats.norm.cdf(fp) if f is None else _injected(f, n_groups)
    return HierarchicalDataset(groups=_binary_trials(hit, fa, sizes, rng), meta=DatasetMeta(family="sdt"))


def two_high_threshold_rates(d, g) -> tuple[np.ndarray, np.ndarray]:
    """Hit and false-alarm rates of the two-high-threshold model: h = d + (1-d)g, f = (1-d)g."""
    d = np.asarray(d, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    return d + (1.0 - d) * g, (1.0 - d) * g


def _mpt_covariance(rng: np.random.Generator) -> np.ndarray:
    for _ in range(_MAX_RESAMPLES):
        lam = rng.uniform(0.0, 2.0, size=2)
        q = sample_inverse_wishart(3, np.eye(2), rng)
        sigma = np.diag(lam) @ q @ np.diag(lam)
        try:
            np.linalg.cholesky(sigma)
            return sigma
        except np.linalg.LinAlgError:
            DIAGNOSTICS["mpt_covariance_resampled"] += 1
            logger.debug("Resampling MPT covariance: not positive definite")
    raise SimulationError("could not draw a positive definite covariance", family="mpt")


def simulate_mpt(
    n_groups: int,
    n_obs,
    rng: np.random.Generator,
    *,
    d=None,
    g=None,
) -> HierarchicalDataset:
    """Latent-trait two-high-threshold model; same row layout as simulate_sdt."""
    sizes = _group_sizes(n_groups, n_obs)
    mean = rng.normal(0.0, 0.25, size=2)
    sigma = _mpt_covariance(rng)
    latent = mean + rng.standard_normal((n_groups, 2)) @ np.linalg.cholesky(sigma).T
    det = stats.norm.cdf(latent[:, 0]) if d is None else _injected(d, n_groups)
    guess = stats.norm.cdf(latent[:, 1]) if g is None else _injected(g, n_groups)
    hit, fa = two_high_threshold_rates(det, guess)
    return HierarchicalDataset(groups=_binary_trials(hit, fa, sizes, rng), meta=DatasetMeta(family="mpt"))


# --- evidence accumulation ---

def _check_trial_table(table: dict[str, np.ndarray], dt: float, t_max: float) -> None:
    if dt <= 0:
        raise DomainError("dt must be positive")
    checks = {
        "a": table["a"] > 0,
        "zr": (table["zr"] > 0) & (table["zr"] < 1),
        "t0": (table["t0"] > 0) & (table["t0"] < t_max),
        "alpha": (table["alpha"] >= 1) & (table["alpha"] <= 2),
        "sv": table["sv"] >= 0,
        "sz": table["sz"] >= 0,
        "st": table["st"] >= 0,
    }
    for name, ok in checks.items():
        if not np.all(ok):
            raise DomainError(f"EAM parameter {name} out of range")


def _first_passage(
    drift: np.ndarray,
    start: np.ndarray,
    a: np.ndarray,
    alpha: np.ndarray,
    window: np.ndarray,
    dt: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Euler-Maruyama paths x += v dt + sigma dt^(1/alpha) xi, advanced in chunks of steps.
    Returns (decision time, response, absorbed flag); unabsorbed trials have absorbed = False.
    """
    n = drift.shape[0]
    x = start.copy()
    limit = np.ceil(window / dt).astype(np.int64)
    decision = np.full(n, np.nan)
    response = np.zeros(n)
    absorbed = np.zeros(n, dtype=bool)
    active = np.arange(n)
    step = 0
    noise_dt = EAM_NOISE_SCALE * dt ** (1.0 / alpha)
    while active.size:
        width = int(max(1, min(1024, 4_000_000 // active.size)))
        xi = sample_alpha_stable(np.broadcast_to(alpha[active, None], (active.size, width)), 1.0, rng)
        paths = x[active, None] + np.cumsum(drift[active, None] * dt + noise_dt[active, None] * xi, axis=1)
        lower = paths <= 0.0
        upper = paths >= a[active, None]
        crossed = lower | upper
        hit = crossed.any(axis=1)
        first = np.argmax(crossed, axis=1)
        hit_steps = step + first + 1
        in_time = hit & (hit_steps <= limit[active])
        done = active[in_time]
        decision[done] = hit_steps[in_time] * dt
        response[done] = upper[in_time, first[in_time]]
        absorbed[done] = True
        x[active] = paths[:, -1]
        step += width
        keep = ~hit & (step < limit[active])
        active = active[keep]
    return decision, response, absorbed


def simulate_eam_trials(
    table: dict[str, np.ndarray],
    stimulus: np.ndarray,
    rng: np.random.Generator,
    dt: float = EAM_DT,
    t_max: float = EAM_T_MAX,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Simulate one trial per entry of `stimulus`. `table` maps every EamParams field to a
    per-trial array. Trials that are not absorbed within t_max - t0 are simulated again.
    """
    table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}
    stimulus = np.asarray(stimulus)
    _check_trial_table(table, dt, t_max)
    n = stimulus.shape[0]
    rt = np.zeros(n)
    response = np.zeros(n)
    todo = np.arange(n)
    for _ in range(_MAX_RESAMPLES):
        p = {k: v[todo] for k, v in table.items()}
        k = todo.size
        drift = np.where(stimulus[todo] == 1, p["v1"], p["v0"]) + p["sv"] * rng.standard_normal(k)
        start = np.clip(p["zr"] + p["sz"] * (rng.random(k) - 0.5), 0.01, 0.99) * p["a"]
        ter = np.maximum(p["t0"] + p["st"] * (rng.random(k) - 0.5), 1e-6)
        window = np.maximum(t_max - ter, dt)
        decision, resp, absorbed = _first_passage(drift, start, p["a"], p["alpha"], window, dt, rng)
        done = todo[absorbed]
        rt[done] = decision[absorbed] + ter[absorbed]
        response[done] = resp[absorbed]
        todo = todo[~absorbed]
        if not todo.size:
            return rt, response
        DIAGNOSTICS["eam_trial_timeouts"] += int(todo.size)
        logger.debug("Resampling %d EAM trials that timed out", todo.size)
    raise SimulationError(f"{todo.size} trials never reached a boundary before t_max={t_max}")


def trial_table(persons: Sequence[EamParams], n_trials: Sequence[int]) -> dict[str, np.ndarray]:
    """Repeat each person's parameters once per trial."""
    counts = np.asarray(n_trials)
    return {
        name: np.repeat([getattr(p, name) for p in persons], counts).astype(np.float64)
        for name in EamParams.model_fields
    }


def simulate_eam_trial(
    params: EamParams,
    stimulus: int,
    rng: np.random.Generator,
    dt: float = EAM_DT,
    t_max: float = EAM_T_MAX,
) -> tuple[float, int]:
    """Single-trial view of simulate_eam_trials: (rt in seconds, response)."""
    rt, response = simulate_eam_trials(trial_table([params], [1]), np.array([stimulus]), rng, dt, t_max)
    return float(rt[0]), int(response[0])


def _eam_hyperdraws(rng: np.random.Generator) -> dict[str, float]:
    return {
        "mu_a": rng.normal(5.0, 1.0), "sigma_a": sample_half_normal(0.4, 0.15, rng),
        "mu_zr": rng.normal(0.0, 0.25), "sigma_zr": sample_half_normal(0.0, 0.05, rng),
        "mu_v0": rng.normal(5.0, 1.0), "sigma_v0": sample_half_normal(0.5, 0.25, rng),
        "mu_v1": rng.normal(5.0, 1.0), "sigma_v1": sample_half_normal(0.5, 0.25, rng),
        "mu_t0": rng.normal(5.0, 1.0), "sigma_t0": sample_half_normal(0.1, 0.05, rng),
        "mu_alpha": rng.normal(1.65, 0.15), "sigma_alpha": sample_half_normal(0.3, 0.1, rng),
    }


def sample_eam_person_params(
    family: str,
    n_groups: int,
    rng: np.random.Generator,
    t_max: float = EAM_T_MAX,
    overrides: dict[str, float] | None = None,
) -> list[EamParams]:
    """
    Hyperdraws then person draws for an EAM family. All families consume the same draws;
    basic models zero the variabilities and diffusion models fix alpha = 2 afterwards.
    Invalid hyperdraws are resampled.
    """
    if family not in EAM_FAMILIES:
        raise DomainError(f"{family!r} is not an EAM family")
    for _ in range(_MAX_RESAMPLES):
        hyper = _eam_hyperdraws(rng)
        means = [hyper[k] for k in ("mu_a", "mu_v0", "mu_v1", "mu_t0")]
        if min(means) <= 0 or hyper["mu_t0"] >= t_max:
            DIAGNOSTICS["eam_hyperdraw_resampled"] += 1
            logger.debug("Resampling EAM hyperdraw with invalid group mean")
            continue
        person = {
            "a": sample_gamma_mean_sd(hyper["mu_a"], hyper["sigma_a"], rng, size=n_groups),
            "zr": special.expit(rng.normal(hyper["mu_zr"], hyper["sigma_zr"], size=n_groups)),
            "v0": -sample_gamma_mean_sd(hyper["mu_v0"], hyper["sigma_v0"], rng, size=n_groups),
            "v1": sample_gamma_mean_sd(hyper["mu_v1"], hyper["sigma_v1"], rng, size=n_groups),
            "t0": sample_gamma_mean_sd(hyper["mu_t0"], hyper["sigma_t0"], rng, size=n_groups),
            "alpha": sample_truncated_normal(hyper["mu_alpha"], hyper["sigma_alpha"], 1.0, 2.0, rng, size=n_groups),
            "sz": rng.beta(1.0, 3.0, size=n_groups),
            "sv": sample_half_normal(0.0, 2.0, rng, size=n_groups),
            "st": sample_half_normal(0.0, 0.3, rng, size=n_groups),
        }
        if family.startswith("eam-basic"):
            for k in ("sv", "sz", "st"):
                person[k] = np.zeros(n_groups)
        if family.endswith("-dm"):
            person["alpha"] = np.full(n_groups, 2.0)
        for k, v in (overrides or {}).items():
            person[k] = np.full(n_groups, float(v))
        valid = (
            (person["a"] > 0) & (person["zr"] > 0) & (person["zr"] < 1)
            & (person["v0"] < 0) & (person["v1"] > 0)
            & (person["t0"] > 0) & (person["t0"] + person["st"] / 2 < t_max)
        )
        if not np.all(valid):
            DIAGNOSTICS["eam_hyperdraw_resampled"] += 1
            logger.debug("Resampling EAM hyperdraw with invalid person draws")
            continue
        return [EamParams(**{k: float(v[m]) for k, v in person.items()}) for m in range(n_groups)]
    raise SimulationError("no valid hyperdraw found", family=family)


def simulate_eam_dataset(
    family: str,
    n_groups: int,
    n_trials,
    rng: np.random.Generator,
    *,
    dt: float = EAM_DT,
    t_max: float = EAM_T_MAX,
    overrides: dict[str, float] | None = None,
) -> HierarchicalDataset:
    """Rows are (rt, response, stimulus type), trials split evenly across the two stimulus types."""
    sizes = _group_sizes(n_groups, n_trials)
    persons = sample_eam_person_params(family, n_groups, rng, t_max=t_max, overrides=overrides)
    stimulus = np.concatenate([_stimulus_types(n, rng) for n in sizes])
    rt, response = simulate_eam_trials(trial_table(persons, sizes), stimulus, rng, dt=dt, t_max=t_max)
    rows = np.column_stack([rt, response, stimulus])
    cuts = np.cumsum(sizes)[:-1]
    return HierarchicalDataset(groups=np.split(rows, cuts), meta=DatasetMeta(family=family))


# --- M-open noise ---

def simulate_noise(n_groups: int, n_obs, rng: np.random.Generator) -> HierarchicalDataset:
    """Both columns i.i.d. Bernoulli(0.5)."""
    sizes = _group_sizes(n_groups, n_obs)
    groups = [rng.integers(0, 2, size=(n, 2)).astype(np.float64) for n in sizes]
    return HierarchicalDataset(groups=groups, meta=DatasetMeta(family="noise"))


# --- registry ---

def simulate_dataset(
    spec: ModelSpec | str,
    n_groups: int,
    n_obs,
    rng: np.random.Generator,
    model_index: int | None = None,
    seed: int | None = None,
) -> HierarchicalDataset:
    """Dispatch on family and stamp the dataset meta. Failures carry the model index."""
    family = spec if isinstance(spec, str) else spec.family
    try:
        if family in ("normal-M1", "normal-M2"):
            data = simulate_normal(family, n_groups, n_obs, rng)
        elif family == "sdt":
            data = simulate_sdt(n_groups, n_obs, rng)
        elif family == "mpt":
            data = simulate_mpt(n_groups, n_obs, rng)
        elif family in EAM_FAMILIES:
            data = simulate_eam_dataset(family, n_groups, n_obs, rng)
        elif family == "noise":
            data = simulate_noise(n_groups, n_obs, rng)
        else:
            raise DomainError(f"unknown model family {family!r}")
    except SimulationError as e:
        raise SimulationError(e.reason, model_index=model_index, family=family) from e
    except (DomainError, ValueError, FloatingPointError) as e:
        raise SimulationError(str(e), model_index=model_index, family=family) from e
    data.meta = DatasetMeta(family=family, model_index=model_index, seed=seed)
    return data
