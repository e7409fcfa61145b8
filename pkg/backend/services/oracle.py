# services/oracle.py
# Reference marginal likelihoods for the hierarchical normal models and the algebra that turns
# log evidences into Bayes factors, posterior odds and posterior model probabilities.

import logging
from concurrent.futures import Executor
from typing import Sequence

import numpy as np
from scipy import special, stats

from errors import AccuracyError, DomainError
from models.configs import QuadratureConfig
from models.dataset import HierarchicalDataset
from models.reports import BayesFactorMatrix, LogMarginal, PmpVector

logger = logging.getLogger(__name__)

BF_CLAMP = 1e12
_LOG_2PI = np.log(2.0 * np.pi)


# --- group level ---

def _group_stats(x) -> tuple[int, float, float]:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    xbar = x.mean()
    return x.size, float(xbar), float(((x - xbar) ** 2).sum())


def _group_log_density(n: int, xbar: float, ss: float, mu, tau2, sigma2):
    """Compound-symmetry normal log density from the group's sufficient statistics (broadcasts)."""
    total_var = sigma2 + n * tau2
    logdet = (n - 1) * np.log(sigma2) + np.log(total_var)
    quad = ss / sigma2 + n * (xbar - mu) ** 2 / total_var
    return -0.5 * (n * _LOG_2PI + logdet + quad)


def group_log_density_normal(x_m, mu: float, tau2: float, sigma2: float) -> float:
    """
    log N(x_m | mu 1, sigma2 I + tau2 11^T), i.e. the group likelihood with theta_m
    integrated out analytically.
    """
    if sigma2 <= 0:
        raise DomainError("sigma2 must be positive")
    if tau2 < 0:
        raise DomainError("tau2 must be non-negative")
    n, xbar, ss = _group_stats(x_m)
    if n == 0:
        raise DomainError("group has no observations")
    return float(_group_log_density(n, xbar, ss, mu, tau2, sigma2))


# --- quadrature ---

def _prior_bounds(model: str, prior_mass: float) -> list[tuple[float, float]]:
    q = float(stats.norm.ppf(0.5 + prior_mass / 2.0))
    bounds = [(0.0, q), (0.0, q)]
    if model == "M2":
        bounds.append((-q, q))
    return bounds


def _axis(lo: float, hi: float, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(nodes)
    half = 0.5 * (hi - lo)
    return lo + half * (x + 1.0), np.log(w * half)


def _log_prior(points: list[np.ndarray], model: str) -> list[np.ndarray]:
    half_normal = lambda t: np.log(2.0) + stats.norm.logpdf(t)
    out = [half_normal(points[0]), half_normal(points[1])]
    if model == "M2":
        out.append(stats.norm.logpdf(points[2]))
    return out


def _log_terms(group_stats: list[tuple[int, float, float]], model: str, bounds, nodes: int):
    """Log integrand + log weight on the tensor grid; returns (terms, axis points)."""
    axes = [_axis(lo, hi, nodes) for lo, hi in bounds]
    points = [a[0] for a in axes]
    grids = np.meshgrid(*points, indexing="ij")
    tau2, sigma2 = grids[0], grids[1]
    mu = grids[2] if model == "M2" else 0.0
    terms = np.zeros(grids[0].shape)
    for n, xbar, ss in group_stats:
        terms += _group_log_density(n, xbar, ss, mu, tau2, sigma2)
    for k, (lp, (_, lw)) in enumerate(zip(_log_prior(points, model), axes)):
        shape = [1] * len(axes)
        shape[k] = nodes
        terms = terms + (lp + lw).reshape(shape)
    return terms, points


def _zoom(terms: np.ndarray, points: list[np.ndarray], bounds, nats: float):
    """Per axis, shrink to the node range whose log integrand is within `nats` of the maximum."""
    keep = terms >= terms.max() - nats
    new = []
    for k, (lo, hi) in enumerate(bounds):
        other = tuple(i for i in range(terms.ndim) if i != k)
        hits = np.flatnonzero(keep.any(axis=other))
        first, last = hits[0] - 1, hits[-1] + 1
        n = points[k].size
        new.append((lo if first < 0 else float(points[k][first]), hi if last >= n else float(points[k][last])))
    return new


def _normal_model(model: str) -> str:
    variant = model.removeprefix("normal-")
    if variant not in ("M1", "M2"):
        raise DomainError(f"the oracle covers normal-M1 and normal-M2, not {model!r}")
    return variant


def log_marginal_normal(
    data: HierarchicalDataset,
    model: str,
    qc: QuadratureConfig | None = None,
    model_index: int | None = None,
) -> LogMarginal:
    """
    log p(x | M) for normal-M1 (2-D over tau2, sigma2) or normal-M2 (3-D, adds mu) by
    tensor-product Gauss-Legendre on zoomed bounds, checked against twice the nodes.
    """
    qc = qc or QuadratureConfig()
    variant = _normal_model(model)
    if data.feature_dim != 1:
        raise DomainError("the normal oracle needs one feature per observation")
    group_stats = [_group_stats(data.observed(m)) for m in range(data.n_groups)]
    bounds = _prior_bounds(variant, qc.prior_mass)
    for _ in range(qc.zoom_iterations):
        terms, points = _log_terms(group_stats, variant, bounds, qc.nodes)
        bounds = _zoom(terms, points, bounds, qc.zoom_nats)
    coarse = special.logsumexp(_log_terms(group_stats, variant, bounds, qc.nodes)[0])
    fine = special.logsumexp(_log_terms(group_stats, variant, bounds, 2 * qc.nodes)[0])
    if not np.isfinite(fine) or abs(fine - coarse) > qc.tolerance:
        raise AccuracyError(
            f"quadrature for {model} did not converge: {coarse:.6f} vs {fine:.6f} with {qc.nodes}/{2 * qc.nodes} nodes"
        )
    return LogMarginal(value=float(fine), model_index=model_index if model_index is not None else int(variant == "M2"))


# --- evidence algebra ---

def _prior(prior: Sequence[float] | None, n: int) -> np.ndarray:
    p = np.full(n, 1.0 / n) if prior is None else np.asarray(prior, dtype=np.float64)
    if p.shape != (n,) or np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-9:
        raise DomainError("model prior must be a positive probability vector of length J")
    return p


def pmps_from_logml(logmls: Sequence[float], prior: Sequence[float] | None = None) -> PmpVector:
    """softmax(log p(x|M_j) + log p(M_j))."""
    logmls = np.asarray(logmls, dtype=np.float64)
    z = logmls + np.log(_prior(prior, logmls.size))
    return PmpVector(probs=np.exp(z - special.logsumexp(z)))


def bayes_factor(logml_j: float, logml_k: float) -> float:
    return float(np.exp(logml_j - logml_k))


def posterior_odds(pmp_j: float, pmp_k: float) -> float:
    return float(pmp_j / pmp_k)


def network_to_bf(pmp: PmpVector, prior: Sequence[float] | None = None) -> BayesFactorMatrix:
    """BF_jk = (pi_j / pi_k) * (p(M_k) / p(M_j)), clamped to [1e-12, 1e12]."""
    pi = pmp.probs
    p = _prior(prior, pi.size)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = (pi[:, None] / pi[None, :]) * (p[None, :] / p[:, None])
    raw = np.where(np.isnan(raw), 1.0, raw)
    values = np.clip(raw, 1.0 / BF_CLAMP, BF_CLAMP)
    saturated = bool(np.any(values != raw) or np.any(pi > 1.0 - 1.0 / BF_CLAMP))
    return BayesFactorMatrix(values=values, saturated=saturated)


def _oracle_row(job: tuple) -> np.ndarray:
    data, families, qc = job
    return np.array([log_marginal_normal(data, f, qc, model_index=j).value for j, f in enumerate(families)])


def oracle_pmps(
    datasets: Sequence[HierarchicalDataset],
    families: Sequence[str],
    qc: QuadratureConfig | None = None,
    prior: Sequence[float] | None = None,
    executor: Executor | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-dataset log marginals (S x J) and the matching PMPs (S x J)."""
    qc = qc or QuadratureConfig()
    for f in families:
        _normal_model(f)
    jobs = [(d, list(families), qc) for d in datasets]
    rows = list(executor.map(_oracle_row, jobs)) if executor is not None else [_oracle_row(j) for j in jobs]
    logmls = np.array(rows).reshape(len(datasets), len(families))
    pmps = np.array([pmps_from_logml(row, prior).probs for row in logmls]).reshape(logmls.shape)
    logger.info("Oracle evaluated %d datasets", len(datasets))
    return logmls, pmps
