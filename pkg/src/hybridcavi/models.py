"""Target models exposing vectorised log-joint evaluators.

Every model has ``dim`` (latent dimension) and ``log_joint(z)`` which accepts
an array of shape ``(..., dim)`` and returns an array of shape ``(...)``.
``log_joint_grid(axes)`` evaluates the log joint on the tensor product of the
given 1-D node arrays; the ELBO quadrature uses it when available.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special

from .errors import ConfigurationError, DimensionError
from .stochastic import as_corr, as_cov, load_dataset, mvn_logpdf, t_logpdf, _t_cdf

LIKELIHOOD_MODES = ("marginal-product", "full-copula")


@dataclass(frozen=True)
class GaussianDensity:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", as_cov(self.cov, mean.size))

    @property
    def dim(self) -> int:
        return self.mean.size

    def logpdf(self, x) -> float:
        return mvn_logpdf(x, self.mean, self.cov)


@dataclass(frozen=True)
class GaussianMeanModel:
    """Gaussian data with known covariance and an isotropic Gaussian prior on the mean."""

    data: np.ndarray
    data_cov: np.ndarray
    prior_var: float = 50.0
    prior_mean: np.ndarray | None = None
    _stats: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cov = as_cov(self.data_cov)
        d = cov.shape[0]
        data = np.asarray(self.data, dtype=float).reshape(-1, d) if np.size(self.data) else np.zeros((0, d))
        if not np.all(np.isfinite(data)):
            raise DimensionError("data has non-finite entries")
        prior_mean = np.zeros(d) if self.prior_mean is None else np.asarray(self.prior_mean, dtype=float)
        if prior_mean.shape != (d,):
            raise DimensionError("prior_mean dimension does not match data_cov")
        if not self.prior_var > 0:
            raise ConfigurationError("prior_var must be positive")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "data_cov", cov)
        object.__setattr__(self, "prior_mean", prior_mean)

        n = data.shape[0]
        prec = np.linalg.inv(cov)
        xbar = data.mean(axis=0) if n else np.zeros(d)
        _, logdet = np.linalg.slogdet(cov)
        object.__setattr__(self, "_stats", {
            "n": n,
            "prec": prec,
            "xbar": xbar,
            "sum_xPx": float(np.einsum("ki,ij,kj->", data, prec, data)) if n else 0.0,
            "const": -0.5 * n * (d * np.log(2 * np.pi) + logdet)
                     - 0.5 * d * np.log(2 * np.pi * self.prior_var),
        })

    @property
    def dim(self) -> int:
        return self.data_cov.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def posterior_precision(self) -> np.ndarray:
        s = self._stats
        return s["n"] * s["prec"] + np.eye(self.dim) / self.prior_var

    @property
    def precision_times_mean(self) -> np.ndarray:
        """Linear coefficient ``b`` of the log joint, ``log p = -z'Lz/2 + b'z + c``."""
        s = self._stats
        return s["n"] * s["prec"] @ s["xbar"] + self.prior_mean / self.prior_var

    def log_joint(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.dim:
            raise DimensionError(f"latent point has dimension {z.shape[-1]}, expected {self.dim}")
        s = self._stats
        zPz = np.einsum("...i,ij,...j->...", z, s["prec"], z)
        quad = s["sum_xPx"] - 2.0 * s["n"] * (z @ (s["prec"] @ s["xbar"])) + s["n"] * zPz
        dz = z - self.prior_mean
        prior = np.sum(dz * dz, axis=-1) / self.prior_var
        return s["const"] - 0.5 * quad - 0.5 * prior


def log_joint_gaussian(model: GaussianMeanModel, mu) -> float:
    return float(model.log_joint(np.asarray(mu, dtype=float)))


def conjugate_posterior(model: GaussianMeanModel) -> GaussianDensity:
    """Exact posterior of the mean: ``N(S (n P xbar + m0/tau2), S)`` with ``S = (n P + I/tau2)^-1``."""
    cov = np.linalg.inv(model.posterior_precision)
    cov = 0.5 * (cov + cov.T)
    return GaussianDensity(cov @ model.precision_times_mean, cov)


@dataclass(frozen=True)
class TDegreesModel:
    """Degrees of freedom of two standard Student-t marginals.

    Prior: ``1/nu_i ~ Uniform(0, 1/2)`` independently, i.e. density ``2/nu**2``
    on ``nu > 2``. The likelihood either multiplies the two marginal t
    densities (``marginal-product``) or additionally includes the Gaussian
    copula density at a fixed correlation (``full-copula``).
    """

    data: np.ndarray
    likelihood_mode: str = "marginal-product"
    copula_corr: np.ndarray | None = None
    _copula: dict | None = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 1:
            raise DimensionError(f"t-degrees model needs an n x 2 dataset, got shape {data.shape}")
        object.__setattr__(self, "data", data)
        if self.likelihood_mode not in LIKELIHOOD_MODES:
            raise ConfigurationError(f"unknown likelihood_mode {self.likelihood_mode!r}")
        if self.likelihood_mode == "full-copula":
            if self.copula_corr is None:
                raise ConfigurationError("full-copula mode requires copula_corr")
            corr = as_corr(self.copula_corr, 2)
            inv = np.linalg.inv(corr)
            object.__setattr__(self, "copula_corr", corr)
            object.__setattr__(self, "_copula", {
                "A": inv - np.eye(2),
                "logdet": float(np.linalg.slogdet(corr)[1]),
            })

    dim = 2

    def _column_terms(self, nu, j: int) -> np.ndarray:
        """Log prior plus marginal log likelihood of column ``j``, for each value in ``nu``."""
        nu = np.asarray(nu, dtype=float)
        safe = np.where(nu > 2, nu, 3.0)
        x = self.data[:, j]
        ll = t_logpdf(x, safe[..., None]).sum(axis=-1)
        return np.where(nu > 2, np.log(2.0) - 2.0 * np.log(safe) + ll, -np.inf)

    def _normal_scores(self, nu, j: int) -> np.ndarray:
        nu = np.asarray(nu, dtype=float)
        safe = np.where(nu > 2, nu, 3.0)[..., None]
        x = self.data[:, j]
        # lower-tail evaluation keeps |score| accurate when the cdf is close to 1
        p = _t_cdf(-np.abs(x), safe)
        s = -special.ndtri(p)
        return np.where(x < 0, -s, s)

    def log_joint(self, nu) -> np.ndarray:
        nu = np.asarray(nu, dtype=float)
        if nu.shape[-1] != 2:
            raise DimensionError(f"latent point has dimension {nu.shape[-1]}, expected 2")
        out = self._column_terms(nu[..., 0], 0) + self._column_terms(nu[..., 1], 1)
        if self._copula is not None:
            z1 = self._normal_scores(nu[..., 0], 0)
            z2 = self._normal_scores(nu[..., 1], 1)
            A = self._copula["A"]
            quad = A[0, 0] * z1 * z1 + 2 * A[0, 1] * z1 * z2 + A[1, 1] * z2 * z2
            cop = -0.5 * self.data.shape[0] * self._copula["logdet"] - 0.5 * quad.sum(axis=-1)
            out = np.where(np.isfinite(out), out + cop, out)
        return out

    def log_joint_grid(self, axes) -> np.ndarray:
        a, b = (np.asarray(ax, dtype=float) for ax in axes)
        out = self._column_terms(a, 0)[:, None] + self._column_terms(b, 1)[None, :]
        if self._copula is not None:
            z1 = self._normal_scores(a, 0)
            z2 = self._normal_scores(b, 1)
            A = self._copula["A"]
            cop = (
                -0.5 * self.data.shape[0] * self._copula["logdet"]
                - 0.5 * A[0, 0] * np.sum(z1 * z1, axis=1)[:, None]
                - 0.5 * A[1, 1] * np.sum(z2 * z2, axis=1)[None, :]
                - A[0, 1] * (z1 @ z2.T)
            )
            out = np.where(np.isfinite(out), out + cop, out)
        return out


def log_joint_tdf(model: TDegreesModel, nu) -> float:
    return float(model.log_joint(np.asarray(nu, dtype=float)))


def as_log_joint(target):
    """Return a vectorised callable for a model object or a plain function."""
    return target.log_joint if hasattr(target, "log_joint") else target


def evaluate_on_grid(target, axes) -> np.ndarray:
    """Evaluate the log joint on the tensor product of ``axes``."""
    if hasattr(target, "log_joint_grid"):
        return np.asarray(target.log_joint_grid(axes), dtype=float)
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.asarray(as_log_joint(target)(np.stack(mesh, axis=-1)), dtype=float)


def load_model_config(path) -> dict:
    with Path(path).open() as fh:
        return json.load(fh)


def model_from_config(cfg: dict, base_dir=None):
    """Build a model from a config mapping.

    Recognised keys: ``model`` (``gaussian-mean`` or ``t-degrees``),
    ``data_file``, ``data_cov``, ``prior_var``, ``likelihood_mode``,
    ``copula_corr``. A ``data`` key holding inline rows is accepted in place
    of ``data_file``.
    """
    kind = cfg.get("model")
    if "data" in cfg:
        data = np.asarray(cfg["data"], dtype=float)
    elif "data_file" in cfg:
        path = Path(cfg["data_file"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        data = load_dataset(path)
    else:
        raise ConfigurationError("model config needs data_file or data")
    if kind == "gaussian-mean":
        if "data_cov" not in cfg:
            raise ConfigurationError("gaussian-mean model needs data_cov")
        return GaussianMeanModel(data, np.asarray(cfg["data_cov"], dtype=float),
                                 prior_var=float(cfg.get("prior_var", 50.0)))
    if kind == "t-degrees":
        corr = cfg.get("copula_corr")
        return TDegreesModel(data, likelihood_mode=cfg.get("likelihood_mode", "marginal-product"),
                             copula_corr=None if corr is None else np.asarray(corr, dtype=float))
    raise ConfigurationError(f"unknown model kind {kind!r}")
