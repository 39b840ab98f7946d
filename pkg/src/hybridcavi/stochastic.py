"""Seeded random generation, density kernels, copula data and quadrature rules.

Random streams come from numpy's PCG64 bit generator keyed by
``SeedSequence(seed, spawn_key=(stream,))``. PCG64 output is bit-stable
across platforms, so a (seed, stream) pair always reproduces the same draws.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy import special

from .errors import (
    DimensionError,
    DomainError,
    InvalidCorrelationError,
    InvalidCovarianceError,
)

SYMMETRY_TOL = 1e-12
QUANTILE_TOL = 1e-12


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Return an independent PCG64 generator for ``(seed, stream)``."""
    if seed < 0 or stream < 0:
        raise DomainError("seed and stream must be non-negative integers")
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


def as_cov(cov, dim: int | None = None) -> np.ndarray:
    """Validate a covariance matrix and return it as a float array.

    Raises :class:`InvalidCovarianceError` when the matrix is not square,
    not symmetric to within 1e-12, or not positive definite.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise InvalidCovarianceError(f"covariance must be square, got shape {cov.shape}")
    if dim is not None and cov.shape[0] != dim:
        raise DimensionError(f"covariance has dimension {cov.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(cov)):
        raise InvalidCovarianceError("covariance has non-finite entries")
    if np.max(np.abs(cov - cov.T)) > SYMMETRY_TOL:
        raise InvalidCovarianceError("covariance is not symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise InvalidCovarianceError("covariance is not positive definite") from exc
    return cov


def as_corr(corr, dim: int | None = None) -> np.ndarray:
    corr = as_cov(corr, dim)
    if np.max(np.abs(np.diag(corr) - 1.0)) > SYMMETRY_TOL:
        raise InvalidCorrelationError("copula correlation must have a unit diagonal")
    return corr


def check_dataset(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 1:
        raise DimensionError(f"dataset must be an n x d array with n >= 1, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("dataset has non-finite entries")
    return x


def mvn_sample(seed: int, mean, cov, n: int, stream: int = 0) -> np.ndarray:
    """Draw ``n`` i.i.d. rows from ``N(mean, cov)``."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = as_cov(cov, mean.size)
    if n < 1:
        raise DomainError("n must be at least 1")
    chol = np.linalg.cholesky(cov)
    eps = make_rng(seed, stream).standard_normal((n, mean.size))
    return mean + eps @ chol.T


def mvn_logpdf(x, mean, cov) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if x.shape != mean.shape:
        raise DimensionError(f"x has shape {x.shape}, mean has shape {mean.shape}")
    cov = as_cov(cov, mean.size)
    chol = np.linalg.cholesky(cov)
    white = np.linalg.solve(chol, x - mean)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return float(-0.5 * (mean.size * np.log(2 * np.pi) + logdet + white @ white))


def _check_df(df) -> np.ndarray:
    df = np.asarray(df, dtype=float)
    if np.any(~(df > 0)):
        raise DomainError("degrees of freedom must be positive")
    return df


def t_logpdf(x, df):
    """Log density of the standard Student-t distribution (vectorised)."""
    df = _check_df(df)
    x = np.asarray(x, dtype=float)
    return (
        special.gammaln(0.5 * (df + 1.0))
        - special.gammaln(0.5 * df)
        - 0.5 * np.log(df * np.pi)
        - 0.5 * (df + 1.0) * np.log1p(x * x / df)
    )


def _t_cdf(x, df):
    # Two incomplete-beta forms: the first is accurate near zero, the second in the tails.
    x2 = x * x
    near = x2 < df
    with np.errstate(invalid="ignore", divide="ignore"):
        centre = 0.5 * special.betainc(0.5, 0.5 * df, x2 / (df + x2))
        tail = 0.5 * special.betainc(0.5 * df, 0.5, df / (df + x2))
    lower = np.where(near, 0.5 - centre, tail)
    return np.where(x <= 0, lower, 1.0 - lower)


def t_cdf(x, df):
    df = _check_df(df)
    return _t_cdf(np.asarray(x, dtype=float), df)


def _t_lower_quantile(p, df, max_iter: int = 200):
    """Solve ``cdf(x) = p`` for ``x <= 0`` given ``0 < p <= 0.5``.

    Safeguarded Newton: the root is kept inside a bracket ``[lo, hi]`` and any
    Newton step that leaves the bracket is replaced by bisection.
    """
    p, df = np.broadcast_arrays(np.asarray(p, dtype=float), np.asarray(df, dtype=float))
    p = p.astype(float).copy()
    df = df.astype(float).copy()
    hi = np.zeros_like(p)
    lo = -np.ones_like(p)
    for _ in range(2100):
        low_side = _t_cdf(lo, df) > p
        if not np.any(low_side):
            break
        lo = np.where(low_side, 2.0 * lo, lo)
    x = np.clip(special.ndtri(p), lo, hi)
    done = np.zeros(p.shape, dtype=bool)
    for _ in range(max_iter):
        f = _t_cdf(x, df) - p
        hi = np.where(f > 0, x, hi)
        lo = np.where(f < 0, x, lo)
        dens = np.exp(t_logpdf(x, df))
        with np.errstate(divide="ignore", invalid="ignore"):
            step = x - f / dens
        bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
        new = np.where(bad, 0.5 * (lo + hi), step)
        new = np.where(f == 0, x, new)
        conv = np.abs(new - x) <= QUANTILE_TOL * np.maximum(1.0, np.abs(x))
        x = np.where(done, x, new)
        done |= conv
        if np.all(done):
            break
    return x


def t_quantile(u, df):
    """Inverse CDF of the standard Student-t distribution.

    Parameters
    ----------
    u : array_like
        Probabilities strictly inside (0, 1).
    df : array_like
        Positive degrees of freedom, broadcast against ``u``.
    """
    df = _check_df(df)
    u = np.asarray(u, dtype=float)
    if np.any(~((u > 0) & (u < 1))):
        raise DomainError("quantile level must lie in (0, 1)")
    p = np.minimum(u, 1.0 - u)
    x = _t_lower_quantile(p, df)
    out = np.where(u > 0.5, -x, x)
    return out if out.ndim else float(out)


def copula_transform(z, marginal_dfs) -> np.ndarray:
    """Map latent standard-normal rows to Student-t marginals.

    Equivalent to ``t_quantile(Phi(z), df)`` but evaluated through the lower
    tail so that ``|z|`` beyond ~8 does not round ``Phi(z)`` to 1.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    dfs = _check_df(np.atleast_1d(marginal_dfs))
    if z.shape[-1] != dfs.size:
        raise DimensionError(f"{z.shape[-1]} latent columns but {dfs.size} marginals")
    p = special.ndtr(-np.abs(z))
    x = _t_lower_quantile(p, np.broadcast_to(dfs, z.shape))
    return np.where(z > 0, -x, x)


def gaussian_copula_sample(seed: int, corr, marginal_dfs, n: int, stream: int = 0) -> np.ndarray:
    """Sample ``n`` rows from a Gaussian copula with Student-t marginals."""
    dfs = _check_df(np.atleast_1d(np.asarray(marginal_dfs, dtype=float)))
    corr = as_corr(corr, dfs.size)
    z = mvn_sample(seed, np.zeros(dfs.size), corr, n, stream=stream)
    return copula_transform(z, dfs)


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    kind: str

    def integrate(self, f) -> float:
        return float(np.sum(self.weights * f(self.nodes)))


def quadrature_rule(kind: str, node_count: int, center: float = 0.0, half_width: float = 1.0) -> QuadratureRule:
    """Build a one-dimensional quadrature rule.

    ``hermite`` returns Gauss-Hermite nodes ``center + half_width * t`` with the
    raw weights for the ``exp(-t**2)`` kernel, so the weights sum to sqrt(pi).
    ``grid`` is the uniform midpoint rule on ``[center - half_width, center + half_width]``.
    """
    if node_count < 1:
        raise DomainError("node_count must be at least 1")
    if kind == "hermite":
        t, w = hermgauss(node_count)
        return QuadratureRule(center + half_width * t, w, kind)
    if kind == "grid":
        if not half_width > 0:
            raise DomainError("grid half_width must be positive")
        h = 2.0 * half_width / node_count
        nodes = center - half_width + h * (np.arange(node_count) + 0.5)
        return QuadratureRule(nodes, np.full(node_count, h), kind)
    raise DomainError(f"unknown quadrature kind {kind!r}")


def save_dataset(x, path) -> Path:
    x = check_dataset(x)
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j + 1}" for j in range(x.shape[1])])
        for row in x:
            writer.writerow([repr(float(v)) for v in row])
    return path


def load_dataset(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    x = np.asarray(rows, dtype=float).reshape(-1, len(header))
    return check_dataset(x)
