"""Mean-field variational families, quadrature ELBO and coordinate ascent.

Two CAVI drivers are provided. :func:`cavi_closed_form` applies the exact
Gaussian coordinate updates of the conjugate mean model. :func:`cavi_numerical`
treats each factor's two parameters as one block and maximises the
quadrature ELBO over that block with a bounded truncated-Newton (Newton-CG)
method, holding the remaining factors fixed.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy import optimize, special

from .errors import ConfigurationError, DimensionError, InvalidInitializationError
from .models import GaussianDensity, GaussianMeanModel, evaluate_on_grid

# Value substituted for a -inf (or nan) log joint at a quadrature node with
# positive weight. Finite, so the weighted sum stays finite and never nan.
LOG_ZERO_SENTINEL = -1e12

_SQRT_PI = math.sqrt(math.pi)


@dataclass(frozen=True)
class QuadratureSettings:
    hermite_nodes: int = 32
    gamma_nodes: int = 256
    gamma_tail: float = 1e-6
    # "log" integrates log p directly. "density" evaluates log(exp(log p)) in
    # double precision, so joints below about -745 underflow to log(0); only
    # useful for studying how naive density-space integration stalls CAVI.
    integrand: str = "log"

    def __post_init__(self):
        if self.integrand not in ("log", "density"):
            raise ConfigurationError(f"unknown integrand {self.integrand!r}")
        if self.hermite_nodes < 1 or self.gamma_nodes < 1:
            raise ConfigurationError("quadrature node counts must be at least 1")
        if not 0 < self.gamma_tail < 0.5:
            raise ConfigurationError("gamma_tail must lie in (0, 0.5)")


@dataclass(frozen=True)
class GaussianFactor:
    mean: float
    variance: float

    family = "gaussian"
    param_names = ("mean", "variance")

    def __post_init__(self):
        if not self.variance > 0:
            raise ConfigurationError(f"Gaussian factor variance must be positive, got {self.variance}")
        object.__setattr__(self, "mean", float(self.mean))
        object.__setattr__(self, "variance", float(self.variance))

    @property
    def params(self) -> tuple:
        return (self.mean, self.variance)

    def unconstrained(self) -> np.ndarray:
        return np.array([self.mean, math.log(self.variance)])

    def from_unconstrained(self, theta) -> "GaussianFactor":
        return GaussianFactor(float(theta[0]), math.exp(float(theta[1])))

    def moments(self) -> tuple:
        return self.mean, self.variance

    def logpdf(self, z):
        z = np.asarray(z, dtype=float)
        return -0.5 * (np.log(2 * np.pi * self.variance) + (z - self.mean) ** 2 / self.variance)

    def cdf(self, z):
        return special.ndtr((np.asarray(z, dtype=float) - self.mean) / math.sqrt(self.variance))

    def nodes(self, quad: QuadratureSettings):
        t, w = hermgauss(quad.hermite_nodes)
        return self.mean + math.sqrt(2.0 * self.variance) * t, w / _SQRT_PI

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mean + math.sqrt(self.variance) * rng.standard_normal(n)


@dataclass(frozen=True)
class ShiftedGammaFactor:
    """``z - shift ~ Gamma(shape, scale)``."""

    shape: float
    scale: float
    shift: float = 2.0

    family = "shifted-gamma"
    param_names = ("shape", "scale")

    def __post_init__(self):
        if not (self.shape > 0 and self.scale > 0):
            raise ConfigurationError(
                f"shifted-Gamma shape and scale must be positive, got ({self.shape}, {self.scale})"
            )
        for name in ("shape", "scale", "shift"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def params(self) -> tuple:
        return (self.shape, self.scale)

    def unconstrained(self) -> np.ndarray:
        return np.array([math.log(self.shape), math.log(self.scale)])

    def from_unconstrained(self, theta) -> "ShiftedGammaFactor":
        return ShiftedGammaFactor(math.exp(float(theta[0])), math.exp(float(theta[1])), self.shift)

    def moments(self) -> tuple:
        return self.shift + self.shape * self.scale, self.shape * self.scale ** 2

    def logpdf(self, z):
        y = np.asarray(z, dtype=float) - self.shift
        k, s = self.shape, self.scale
        pos = y > 0
        safe = np.where(pos, y, 1.0)
        val = (k - 1.0) * np.log(safe) - safe / s - special.gammaln(k) - k * math.log(s)
        return np.where(pos, val, -np.inf)

    def cdf(self, z):
        y = np.maximum(np.asarray(z, dtype=float) - self.shift, 0.0)
        return special.gammainc(self.shape, y / self.scale)

    def support_range(self, tail: float) -> tuple:
        lo = self.scale * special.gammaincinv(self.shape, tail)
        hi = self.scale * special.gammainccinv(self.shape, tail)
        return self.shift + lo, self.shift + hi

    def nodes(self, quad: QuadratureSettings):
        lo, hi = self.support_range(quad.gamma_tail)
        n = quad.gamma_nodes
        h = (hi - lo) / n
        z = lo + h * (np.arange(n) + 0.5)
        w = np.exp(self.logpdf(z)) * h
        total = w.sum()
        if not total > 0:
            w = np.full(n, 1.0 / n)
        else:
            w = w / total
        return z, w

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.shift + rng.gamma(self.shape, self.scale, n)


FACTOR_TYPES = {"gaussian": GaussianFactor, "shifted-gamma": ShiftedGammaFactor}


def factor_entropy(factor) -> float:
    """Differential entropy of a single variational factor (closed form)."""
    if isinstance(factor, GaussianFactor):
        return 0.5 * math.log(2 * math.pi * math.e * factor.variance)
    if isinstance(factor, ShiftedGammaFactor):
        k, s = factor.shape, factor.scale
        return float(k + math.log(s) + special.gammaln(k) + (1.0 - k) * special.digamma(k))
    raise TypeError(f"unsupported factor type {type(factor).__name__}")


@dataclass(frozen=True)
class MeanFieldPosterior:
    factors: tuple

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        if not self.factors:
            raise DimensionError("a mean-field posterior needs at least one factor")

    @property
    def dim(self) -> int:
        return len(self.factors)

    def replace(self, j: int, factor) -> "MeanFieldPosterior":
        fs = list(self.factors)
        fs[j] = factor
        return MeanFieldPosterior(tuple(fs))

    def means(self) -> np.ndarray:
        return np.array([f.moments()[0] for f in self.factors])

    def variances(self) -> np.ndarray:
        return np.array([f.moments()[1] for f in self.factors])

    def logpdf(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.dim:
            raise DimensionError(f"point has dimension {z.shape[-1]}, expected {self.dim}")
        return sum(f.logpdf(z[..., j]) for j, f in enumerate(self.factors))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.column_stack([f.sample(rng, n) for f in self.factors])

    def as_gaussian(self) -> GaussianDensity:
        """Embed an all-Gaussian mean-field posterior as a diagonal-covariance Gaussian."""
        if not all(isinstance(f, GaussianFactor) for f in self.factors):
            raise TypeError("as_gaussian needs Gaussian factors")
        return GaussianDensity(self.means(), np.diag(self.variances()))

    def to_dict(self) -> list:
        out = []
        for f in self.factors:
            d = {"family": f.family}
            d.update(zip(f.param_names, f.params))
            if isinstance(f, ShiftedGammaFactor):
                d["shift"] = f.shift
            out.append(d)
        return out

    @classmethod
    def from_dict(cls, rows) -> "MeanFieldPosterior":
        factors = []
        for row in rows:
            row = dict(row)
            kind = FACTOR_TYPES[row.pop("family")]
            factors.append(kind(**row))
        return cls(tuple(factors))


def gaussian_mean_field(pairs) -> MeanFieldPosterior:
    return MeanFieldPosterior(tuple(GaussianFactor(m, v) for m, v in pairs))


def shifted_gamma_mean_field(pairs, shift: float = 2.0) -> MeanFieldPosterior:
    return MeanFieldPosterior(tuple(ShiftedGammaFactor(a, b, shift) for a, b in pairs))


def expected_log_joint(logjoint, q: MeanFieldPosterior, quad: QuadratureSettings) -> float:
    axes, weights = zip(*(f.nodes(quad) for f in q.factors))
    vals = evaluate_on_grid(logjoint, axes)
    if quad.integrand == "density":
        with np.errstate(divide="ignore", over="ignore"):
            vals = np.log(np.exp(vals))
    vals = np.where(np.isfinite(vals), vals, LOG_ZERO_SENTINEL)
    w = weights[0]
    for wj in weights[1:]:
        w = np.multiply.outer(w, wj)
    return float(np.sum(w * vals))


def elbo(logjoint, q: MeanFieldPosterior, quad: QuadratureSettings | None = None) -> float:
    """Tensor-product quadrature estimate of ``E_q[log p(z, x)] + H[q]``.

    Gaussian factors use Gauss-Hermite nodes; shifted-Gamma factors use a
    uniform midpoint grid spanning the factor's ``[tail, 1 - tail]``
    quantiles with weights renormalised to one. A non-finite log joint at a
    node is replaced by :data:`LOG_ZERO_SENTINEL`.
    """
    quad = quad or QuadratureSettings()
    return expected_log_joint(logjoint, q, quad) + sum(factor_entropy(f) for f in q.factors)


@dataclass(frozen=True)
class OptimizerConfig:
    max_sweeps: int = 500
    elbo_rel_tol: float = 1e-8
    inner_tol: float = 1e-10
    param_tol: float = 1e-12
    fd_rel_step: float = 1e-5
    coordinate_bounds: dict = field(default_factory=lambda: {
        "mean": (-math.inf, math.inf),
        "variance": (1e-6, 1e6),
        "shape": (1e-4, 1e4),
        "scale": (1e-4, 1e4),
    })

    def __post_init__(self):
        if self.max_sweeps < 1:
            raise ConfigurationError("max_sweeps must be positive")
        if not (self.elbo_rel_tol > 0 and self.inner_tol > 0 and self.param_tol > 0):
            raise ConfigurationError("tolerances must be positive")

    def bounds_for(self, factor) -> list:
        """Bounds on the optimiser's coordinates: identity for means, log for positive parameters."""
        out = []
        for name in factor.param_names:
            lo, hi = self.coordinate_bounds[name]
            if name == "mean":
                out.append((None if math.isinf(lo) else lo, None if math.isinf(hi) else hi))
            else:
                out.append((math.log(lo), math.log(hi)))
        return out

    def check(self, factor) -> None:
        for name, val in zip(factor.param_names, factor.params):
            lo, hi = self.coordinate_bounds[name]
            if not lo <= val <= hi:
                raise InvalidInitializationError(f"{name}={val} outside bounds [{lo}, {hi}]")


@dataclass
class CaviTrace:
    elbo_per_sweep: list = field(default_factory=list)
    sweeps: int = 0
    converged: bool = False
    wall_time: float = 0.0
    bound_hits: list = field(default_factory=list)
    inner_evaluations: int = 0

    @property
    def clamped(self) -> bool:
        return bool(self.bound_hits)

    def to_dict(self, q: MeanFieldPosterior | None = None) -> dict:
        out = {
            "elbo_per_sweep": list(self.elbo_per_sweep),
            "sweeps": self.sweeps,
            "converged": self.converged,
            "wall_time_s": self.wall_time,
            "bound_hits": [list(h) for h in self.bound_hits],
        }
        if q is not None:
            out["fitted"] = q.to_dict()
        return out


def export_trace_json(q: MeanFieldPosterior, trace: CaviTrace, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(trace.to_dict(q), indent=2) + "\n")
    return path


def _rel_change(new: float, old: float) -> float:
    return abs(new - old) / max(abs(old), 1e-300)


def cavi_closed_form(model: GaussianMeanModel, init: MeanFieldPosterior,
                     cfg: OptimizerConfig | None = None,
                     quad: QuadratureSettings | None = None):
    """Exact coordinate ascent for the conjugate Gaussian-mean model.

    With ``L`` the posterior precision and ``b = L @ posterior_mean``, the
    optimal Gaussian factor for coordinate ``j`` given the others has
    variance ``1 / L[j, j]`` and mean ``(b[j] - sum_{k != j} L[j, k] m[k]) / L[j, j]``.

    Stops once the relative ELBO change falls below ``cfg.elbo_rel_tol`` and
    no parameter moved by more than ``cfg.param_tol`` in the last sweep.

    Returns
    -------
    (MeanFieldPosterior, CaviTrace)
    """
    cfg = cfg or OptimizerConfig()
    quad = quad or QuadratureSettings()
    if not all(isinstance(f, GaussianFactor) for f in init.factors):
        raise TypeError("closed-form CAVI needs Gaussian factors")
    if init.dim != model.dim:
        raise DimensionError(f"{init.dim} factors for a {model.dim}-dimensional model")
    start = time.perf_counter()
    L = model.posterior_precision
    b = model.precision_times_mean
    means = init.means().astype(float)
    variances = init.variances().astype(float)
    q = init
    trace = CaviTrace(elbo_per_sweep=[elbo(model, q, quad)])
    for _ in range(cfg.max_sweeps):
        old = np.concatenate([means, variances])
        for j in range(model.dim):
            variances[j] = 1.0 / L[j, j]
            means[j] = (b[j] - L[j] @ means + L[j, j] * means[j]) / L[j, j]
        q = gaussian_mean_field(zip(means, variances))
        trace.elbo_per_sweep.append(elbo(model, q, quad))
        trace.sweeps += 1
        moved = np.max(np.abs(np.concatenate([means, variances]) - old))
        if _rel_change(trace.elbo_per_sweep[-1], trace.elbo_per_sweep[-2]) < cfg.elbo_rel_tol \
                and moved < cfg.param_tol:
            trace.converged = True
            break
    trace.wall_time = time.perf_counter() - start
    return q, trace


def _central_gradient(fun, theta: np.ndarray, rel_step: float) -> np.ndarray:
    grad = np.empty_like(theta)
    for i in range(theta.size):
        h = rel_step * max(1.0, abs(theta[i]))
        up = theta.copy()
        dn = theta.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (fun(up) - fun(dn)) / (2.0 * h)
    return grad


def _clamp(theta: np.ndarray, bounds, tol: float = 1e-8) -> tuple:
    """Snap coordinates at or within ``tol`` of a bound onto it and report which ones."""
    out = theta.copy()
    hit = []
    for i, (lo, hi) in enumerate(bounds):
        if lo is not None and out[i] <= lo + tol * max(1.0, abs(lo)):
            out[i] = lo
            hit.append(i)
        elif hi is not None and out[i] >= hi - tol * max(1.0, abs(hi)):
            out[i] = hi
            hit.append(i)
    return out, hit


def cavi_numerical(logjoint, init: MeanFieldPosterior,
                   quad: QuadratureSettings | None = None,
                   cfg: OptimizerConfig | None = None):
    """Block coordinate ascent on the quadrature ELBO.

    Each factor's parameter pair is optimised jointly with scipy's bounded
    truncated-Newton method (TNC) on ``(mean, log variance)`` or
    ``(log shape, log scale)``, using central-difference gradients. A block
    update is kept only if it does not lower the ELBO, so the per-sweep trace
    is nondecreasing. Results landing on a bound are clamped and logged in
    ``trace.bound_hits`` as ``(sweep, factor, parameter)``.

    Returns
    -------
    (MeanFieldPosterior, CaviTrace)
        The best ELBO seen and the trace, whose first entry is the ELBO at ``init``.
    """
    quad = quad or QuadratureSettings()
    cfg = cfg or OptimizerConfig()
    for f in init.factors:
        cfg.check(f)
    start = time.perf_counter()
    q = init
    axes = [f.nodes(quad)[0] for f in q.factors]
    if not np.any(np.isfinite(evaluate_on_grid(logjoint, axes))):
        raise InvalidInitializationError("log joint is not finite at any quadrature node of the initial factors")
    current = elbo(logjoint, q, quad)
    if not np.isfinite(current):
        raise InvalidInitializationError(f"ELBO at the initial factors is {current}")
    trace = CaviTrace(elbo_per_sweep=[current])
    best_q, best = q, current

    for sweep in range(1, cfg.max_sweeps + 1):
        for j, factor in enumerate(q.factors):
            rest = q

            def objective(theta, j=j, factor=factor, rest=rest):
                trace.inner_evaluations += 1
                try:
                    cand = factor.from_unconstrained(theta)
                except (ConfigurationError, OverflowError):
                    return -LOG_ZERO_SENTINEL
                val = elbo(logjoint, rest.replace(j, cand), quad)
                return -val if np.isfinite(val) else -LOG_ZERO_SENTINEL

            bounds = cfg.bounds_for(factor)
            theta0 = factor.unconstrained()
            res = optimize.minimize(
                objective, theta0, method="TNC", bounds=bounds,
                jac=lambda th, fun=objective: _central_gradient(fun, th, cfg.fd_rel_step),
                options={"ftol": cfg.inner_tol, "xtol": cfg.inner_tol, "gtol": cfg.inner_tol,
                         "maxfun": 200},
            )
            theta, hits = _clamp(np.asarray(res.x, dtype=float), bounds)
            for i in hits:
                trace.bound_hits.append((sweep, j, factor.param_names[i]))
            cand = q.replace(j, factor.from_unconstrained(theta))
            val = elbo(logjoint, cand, quad)
            if np.isfinite(val) and val >= current:
                q, current = cand, val
        trace.elbo_per_sweep.append(current)
        trace.sweeps = sweep
        if current > best:
            best_q, best = q, current
        if _rel_change(trace.elbo_per_sweep[-1], trace.elbo_per_sweep[-2]) < cfg.elbo_rel_tol:
            trace.converged = True
            break
    trace.wall_time = time.perf_counter() - start
    return best_q, trace
