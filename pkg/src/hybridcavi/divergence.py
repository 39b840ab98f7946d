"""KL divergences KL(q || p) used to score fitted posteriors.

Three routes: exact Gaussian-Gaussian, a Riemann sum for a mean-field ``q``
against a Gaussian ``p``, and a binned estimate against MCMC samples.
All results are clamped at zero from below.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cavi import MeanFieldPosterior
from .errors import CoverageError, DimensionError, DomainError, InsufficientSamplesError
from .mcmc import Chain
from .models import GaussianDensity

COVERAGE_TOL = 1e-6
MIN_REFERENCE_SAMPLES = 100
# An unvisited cell holding more than this much q-mass is always a support
# contradiction, however few effective draws the reference has.
MAX_EMPTY_MASS = 0.5


@dataclass(frozen=True)
class KLValue:
    nats: float
    method: str

    def __float__(self) -> float:
        return self.nats

    @property
    def finite(self) -> bool:
        return math.isfinite(self.nats)


def _as_rows(samples) -> np.ndarray:
    """Samples as an ``(N, m)`` array; a 1-D input is one coordinate."""
    samples = np.asarray(samples, dtype=float)
    return samples.reshape(-1, 1) if samples.ndim == 1 else samples


def _kl(nats: float, method: str) -> KLValue:
    nats = float(nats)
    if math.isnan(nats):
        raise DomainError(f"{method} KL evaluated to nan")
    return KLValue(max(nats, 0.0), method)


@dataclass(frozen=True)
class GridSpec:
    lower: tuple
    upper: tuple
    bins: tuple

    def __post_init__(self):
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        bins = tuple(int(b) for b in np.atleast_1d(self.bins))
        if len(bins) == 1 and len(lower) > 1:
            bins = bins * len(lower)
        if not len(lower) == len(upper) == len(bins):
            raise DimensionError("grid lower/upper/bins lengths differ")
        for lo, hi, b in zip(lower, upper, bins):
            if not lo < hi:
                raise DomainError(f"grid range [{lo}, {hi}] is empty")
            if b < 2:
                raise DomainError("grid needs at least 2 bins per dimension")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "bins", bins)

    @property
    def dim(self) -> int:
        return len(self.bins)

    def edges(self) -> list:
        return [np.linspace(lo, hi, b + 1) for lo, hi, b in zip(self.lower, self.upper, self.bins)]

    def centers(self) -> list:
        return [0.5 * (e[1:] + e[:-1]) for e in self.edges()]

    @property
    def cell_volume(self) -> float:
        return float(np.prod([(hi - lo) / b for lo, hi, b in zip(self.lower, self.upper, self.bins)]))

    def mesh(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.centers(), indexing="ij"), axis=-1)

    @classmethod
    def from_samples(cls, samples, widen: float = 0.10, bins: int = 30) -> "GridSpec":
        """Sample min/max per dimension, widened by ``widen`` of the range (half on each side)."""
        samples = _as_rows(samples)
        lo, hi = samples.min(axis=0), samples.max(axis=0)
        span = np.where(hi > lo, hi - lo, np.maximum(np.abs(lo), 1.0))
        pad = 0.5 * widen * span
        return cls(tuple(lo - pad), tuple(hi + pad), (bins,) * samples.shape[1])

    @classmethod
    def around(cls, q: MeanFieldPosterior, sds: float = 8.0, bins: int = 400) -> "GridSpec":
        means, var = q.means(), q.variances()
        half = sds * np.sqrt(var)
        return cls(tuple(means - half), tuple(means + half), (bins,) * q.dim)


def _as_density(d) -> GaussianDensity:
    if isinstance(d, GaussianDensity):
        return d
    if isinstance(d, MeanFieldPosterior):
        return d.as_gaussian()
    raise TypeError(f"expected a Gaussian density, got {type(d).__name__}")


def kl_gaussian(q, p) -> KLValue:
    """Closed-form KL between two multivariate normals.

    ``q`` and ``p`` are :class:`GaussianDensity` objects; an all-Gaussian
    :class:`MeanFieldPosterior` is accepted and embedded with diagonal covariance.
    """
    q, p = _as_density(q), _as_density(p)
    if q.dim != p.dim:
        raise DimensionError(f"dimension mismatch: {q.dim} vs {p.dim}")
    chol_p = np.linalg.cholesky(p.cov)
    a = np.linalg.solve(chol_p, q.cov)
    trace = float(np.trace(np.linalg.solve(chol_p.T, a)))
    diff = np.linalg.solve(chol_p, p.mean - q.mean)
    logdet_p = 2.0 * np.sum(np.log(np.diag(chol_p)))
    logdet_q = np.linalg.slogdet(q.cov)[1]
    return _kl(0.5 * (trace + diff @ diff - q.dim + logdet_p - logdet_q), "closed-form")


def _gaussian_logpdf_rows(x: np.ndarray, p: GaussianDensity) -> np.ndarray:
    chol = np.linalg.cholesky(p.cov)
    diff = (x - p.mean).reshape(-1, p.dim)
    white = np.linalg.solve(chol, diff.T)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    out = -0.5 * (p.dim * np.log(2 * np.pi) + logdet + np.sum(white * white, axis=0))
    return out.reshape(x.shape[:-1])


def kl_quadrature(q: MeanFieldPosterior, p: GaussianDensity, grid: GridSpec | None = None) -> KLValue:
    """Midpoint-rule KL of a mean-field ``q`` against a Gaussian ``p``.

    Raises :class:`CoverageError` if the grid holds less than ``1 - 1e-6``
    of ``q``'s mass.
    """
    grid = grid or GridSpec.around(q)
    if grid.dim != q.dim or p.dim != q.dim:
        raise DimensionError("q, p and grid dimensions differ")
    mass = 1.0
    for f, lo, hi in zip(q.factors, grid.lower, grid.upper):
        mass *= float(f.cdf(hi) - f.cdf(lo))
    if mass < 1.0 - COVERAGE_TOL:
        raise CoverageError(f"grid covers only {mass:.8f} of q's mass")
    pts = grid.mesh()
    log_q = q.logpdf(pts)
    log_p = _gaussian_logpdf_rows(pts, p)
    ok = np.isfinite(log_q)
    integrand = np.exp(log_q[ok]) * (log_q[ok] - log_p[ok])
    return _kl(np.sum(integrand) * grid.cell_volume, "quadrature")


def discrete_kl_masses(q_mass, p_mass, empty_tol: float = 0.0) -> float:
    """``sum_b q_b log(q_b / p_b)`` over bins with ``q_b > 0``.

    Bins with ``p_b == 0`` return infinity when ``q_b > empty_tol``. Otherwise
    they are dropped and ``q`` is renormalised over the remaining bins, so
    the result stays nonnegative.
    """
    q_mass = np.asarray(q_mass, dtype=float).ravel()
    p_mass = np.asarray(p_mass, dtype=float).ravel()
    if q_mass.shape != p_mass.shape:
        raise DimensionError("mass arrays differ in size")
    empty = p_mass <= 0
    if np.any(empty & (q_mass > empty_tol)):
        return math.inf
    kept = q_mass[~empty].sum()
    if kept <= 0:
        return math.inf
    use = (q_mass > 0) & ~empty
    q_use = q_mass[use] / kept
    return float(np.sum(q_use * np.log(q_use / p_mass[use])))


def effective_size(samples) -> float:
    """Smallest per-coordinate effective sample size (Geyer initial positive sequence)."""
    samples = _as_rows(samples)
    n = samples.shape[0]
    sizes = []
    for col in samples.T:
        c = col - col.mean()
        if not np.any(c):
            sizes.append(1.0)
            continue
        fft = np.fft.rfft(c, 2 * n)
        acf = np.fft.irfft(fft * np.conj(fft))[:n]
        acf = acf / acf[0]
        tau = -1.0
        for k in range(0, n - 1, 2):
            pair = acf[k] + acf[k + 1]
            if pair < 0:
                break
            tau += 2.0 * pair
        sizes.append(min(float(n), n / max(tau, 1.0 / n)))
    return min(sizes)


def kl_discrete(q: MeanFieldPosterior, reference, grid: GridSpec | None = None,
                min_expected_count: float = 10.0) -> KLValue:
    """Binned KL of ``q`` against an MCMC reference.

    Parameters
    ----------
    q
        Fitted mean-field posterior.
    reference
        A :class:`Chain` (its post-burn-in samples are used) or an ``(N, m)``
        array of independent draws.
    grid
        Bins; defaults to :meth:`GridSpec.from_samples` on the reference.
    min_expected_count
        A bin the reference never visited makes the result infinite only if
        ``q`` expects at least this many effective reference draws there
        (``q_b * N_eff > min_expected_count``). Lighter empty bins are dropped
        and ``q`` is renormalised over the bins the reference visited.
        ``N_eff`` is :func:`effective_size` for a chain and ``N`` for an array.

    Notes
    -----
    ``q_b`` is ``q``'s density at the bin centre times the cell volume, scaled
    so the cells sum to ``q``'s exact in-grid mass (a product of factor CDF
    differences). The mass outside the grid is one extra cell with zero
    reference mass. The empty-cell threshold is capped at 0.5.
    """
    samples = _as_rows(reference.post_burn_in if isinstance(reference, Chain) else reference)
    n = samples.shape[0]
    if n < MIN_REFERENCE_SAMPLES:
        raise InsufficientSamplesError(f"reference has {n} samples, need at least {MIN_REFERENCE_SAMPLES}")
    if samples.shape[1] != q.dim:
        raise DimensionError(f"reference has dimension {samples.shape[1]}, q has {q.dim}")
    n_eff = effective_size(samples) if isinstance(reference, Chain) else float(n)
    grid = grid or GridSpec.from_samples(samples)
    counts, _ = np.histogramdd(samples, bins=grid.edges())
    inside = counts.sum()
    if inside == 0:
        return KLValue(math.inf, "discrete")
    p_mass = counts.ravel() / inside
    n_eff *= inside / n
    empty_tol = min(min_expected_count / n_eff, MAX_EMPTY_MASS)

    in_grid = 1.0
    for f, lo, hi in zip(q.factors, grid.lower, grid.upper):
        in_grid *= float(f.cdf(hi) - f.cdf(lo))
    q_raw = np.exp(q.logpdf(grid.mesh())).ravel() * grid.cell_volume
    total = q_raw.sum()
    if not (total > 0 and in_grid > 0):
        return KLValue(math.inf, "discrete")
    # the region outside the grid acts as one more cell the reference never visited
    q_mass = np.append(q_raw * (in_grid / total), max(1.0 - in_grid, 0.0))
    p_mass = np.append(p_mass, 0.0)
    return _kl(discrete_kl_masses(q_mass, p_mass, empty_tol), "discrete")
