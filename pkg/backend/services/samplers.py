# services/samplers.py
# Low-level random variate generators used by the simulators.
# Every sampler takes an explicit numpy Generator and an optional `size`.

import numpy as np
from scipy import stats

from errors import DomainError


def sample_alpha_stable(alpha, scale, rng: np.random.Generator, size=None) -> np.ndarray | float:
    """
    Symmetric alpha-stable draws (beta = 0, location 0) by Chambers-Mallows-Stuck.

    X = scale * sin(alpha U) / cos(U)^(1/alpha) * (cos((1 - alpha) U) / W)^((1 - alpha) / alpha)
    with U ~ Uniform(-pi/2, pi/2), W ~ Exp(1). The same formula is used at alpha = 2,
    where it reduces to 2 sin(U) sqrt(W) (a normal with variance 2 scale^2).
    `alpha` may be an array broadcastable to `size`.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(~(alpha > 0)) or np.any(alpha > 2):
        raise DomainError(f"alpha must lie in (0, 2], got {alpha.min()}..{alpha.max()}")
    if size is None and alpha.ndim > 0:
        size = alpha.shape
    u = rng.uniform(-np.pi / 2, np.pi / 2, size=size)
    w = rng.standard_exponential(size=size)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        x = (np.sin(alpha * u) / np.cos(u) ** (1.0 / alpha)
             * (np.cos((1.0 - alpha) * u) / w) ** ((1.0 - alpha) / alpha))
    x = scale * x
    return float(x) if np.ndim(x) == 0 else x


def sample_inverse_wishart(df: float, scale, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """
    Inverse-Wishart(df, scale) as the inverse of a Wishart(df, scale^-1) draw,
    the Wishart built with the Bartlett decomposition. Returns p x p, or size x p x p.
    """
    scale = np.atleast_2d(np.asarray(scale, dtype=np.float64))
    p = scale.shape[0]
    if scale.shape != (p, p):
        raise DomainError("scale must be a square matrix")
    if df <= p - 1:
        raise DomainError(f"df must exceed dim - 1 = {p - 1}, got {df}")
    try:
        chol = np.linalg.cholesky(np.linalg.inv(scale))
    except np.linalg.LinAlgError as e:
        raise DomainError("scale must be positive definite") from e

    n = 1 if size is None else int(size)
    bartlett = np.zeros((n, p, p))
    rows, cols = np.tril_indices(p, k=-1)
    bartlett[:, rows, cols] = rng.standard_normal((n, rows.size))
    bartlett[:, np.arange(p), np.arange(p)] = np.sqrt(rng.chisquare(df - np.arange(p), size=(n, p)))
    la = chol @ bartlett
    wishart = la @ np.swapaxes(la, 1, 2)
    draws = np.linalg.inv(wishart)
    draws = 0.5 * (draws + np.swapaxes(draws, 1, 2))
    return draws[0] if size is None else draws


def sample_truncated_normal(mean, sd, low, high, rng: np.random.Generator, size=None) -> np.ndarray | float:
    """Normal(mean, sd) restricted to [low, high]; use low=0, high=inf for Normal+."""
    mean = np.asarray(mean, dtype=np.float64)
    sd = np.asarray(sd, dtype=np.float64)
    if np.any(sd <= 0):
        raise DomainError("truncated normal needs sd > 0")
    a = (low - mean) / sd
    b = (high - mean) / sd
    draws = stats.truncnorm.rvs(a, b, loc=mean, scale=sd, size=size, random_state=rng)
    return float(draws) if np.ndim(draws) == 0 else draws


def sample_half_normal(mean, sd, rng: np.random.Generator, size=None) -> np.ndarray | float:
    """Normal+(mean, sd): a normal truncated below at zero."""
    return sample_truncated_normal(mean, sd, 0.0, np.inf, rng, size=size)


def gamma_shape_rate(mean, sd) -> tuple[np.ndarray, np.ndarray]:
    """Mean/sd parameterisation -> (shape, rate)."""
    mean = np.asarray(mean, dtype=np.float64)
    sd = np.asarray(sd, dtype=np.float64)
    return (mean / sd) ** 2, mean / sd ** 2


def sample_gamma_mean_sd(mean, sd, rng: np.random.Generator, size=None) -> np.ndarray | float:
    """Gamma draws with the given mean and standard deviation."""
    if np.any(np.asarray(mean) <= 0) or np.any(np.asarray(sd) <= 0):
        raise DomainError("gamma mean and sd must be positive")
    shape, rate = gamma_shape_rate(mean, sd)
    return rng.gamma(shape, 1.0 / rate, size=size)
