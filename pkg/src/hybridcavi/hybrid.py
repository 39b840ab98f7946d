"""Hybrid CAVI: a short Metropolis-Hastings run seeds CAVI by moment matching."""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cavi import (
    CaviTrace,
    GaussianFactor,
    MeanFieldPosterior,
    OptimizerConfig,
    QuadratureSettings,
    ShiftedGammaFactor,
    cavi_closed_form,
    cavi_numerical,
)
from .errors import ConfigurationError, DegenerateMomentsError, SupportViolationError
from .mcmc import Chain, ChainMoments, MHConfig, chain_moments, metropolis_hastings
from .models import GaussianMeanModel

FAMILIES = ("gaussian", "shifted-gamma")


class MomentFallbackWarning(UserWarning):
    """A method-of-moments estimate was replaced by a default factor."""


def mom_gaussian(moments: ChainMoments) -> list:
    """A normal is parameterised by its first two moments, so they are used as-is."""
    var = np.asarray(moments.variances, dtype=float)
    if np.any(var <= 0):
        raise DegenerateMomentsError(f"cannot match zero variance: {var.tolist()}")
    return [GaussianFactor(float(m), float(v)) for m, v in zip(moments.means, var)]


def mom_shifted_gamma(moments: ChainMoments, shift: float = 2.0) -> list:
    """Match mean ``shift + shape*scale`` and variance ``shape*scale**2``.

    Gives ``shape = (m - shift)**2 / s2`` and ``scale = s2 / (m - shift)``.
    """
    out = []
    for m, s2 in zip(np.asarray(moments.means, dtype=float), np.asarray(moments.variances, dtype=float)):
        if s2 <= 0:
            raise DegenerateMomentsError(f"cannot match zero variance at mean {m}")
        excess = m - shift
        if excess <= 0:
            raise SupportViolationError(
                f"sample mean {m} is not above the shift {shift}; a shifted Gamma cannot match it"
            )
        out.append(ShiftedGammaFactor(excess * excess / s2, s2 / excess, shift))
    return out


@dataclass(frozen=True)
class HybridConfig:
    mcmc: MHConfig
    cavi: OptimizerConfig = field(default_factory=OptimizerConfig)
    factor_family: str = "gaussian"
    quad: QuadratureSettings = field(default_factory=QuadratureSettings)
    closed_form: bool = False
    shift: float = 2.0

    def __post_init__(self):
        if self.factor_family not in FAMILIES:
            raise ConfigurationError(f"unknown factor family {self.factor_family!r}")
        if self.mcmc.total_steps - self.mcmc.burn_in < 2:
            raise ConfigurationError("hybrid CAVI needs at least 2 post-burn-in MCMC samples")


@dataclass
class HybridResult:
    posterior: MeanFieldPosterior
    trace: CaviTrace
    chain: Chain
    moments: ChainMoments
    mom_init: MeanFieldPosterior
    wall_time: dict
    notes: list = field(default_factory=list)

    def to_report(self) -> dict:
        return {
            "mcmc": self.chain.summary(),
            "mom_init": self.mom_init.to_dict(),
            "cavi": self.trace.to_dict(),
            "fitted": self.posterior.to_dict(),
            "wall_time_s": dict(self.wall_time),
            "notes": list(self.notes),
        }


def _gamma_init(moments: ChainMoments, shift: float, notes: list) -> list:
    factors = []
    for i, (m, s2) in enumerate(zip(moments.means, moments.variances)):
        single = ChainMoments(np.array([m]), np.array([s2]))
        try:
            factors.extend(mom_shifted_gamma(single, shift))
        except SupportViolationError as exc:
            fallback = ShiftedGammaFactor(1.0, max(math.sqrt(s2), 0.5), shift)
            msg = f"coordinate {i}: {exc}; using shape=1, scale={fallback.scale:g}"
            warnings.warn(msg, MomentFallbackWarning, stacklevel=3)
            notes.append(msg)
            factors.append(fallback)
    return factors


def _clip_to_bounds(q: MeanFieldPosterior, cfg: OptimizerConfig, notes: list) -> MeanFieldPosterior:
    factors = []
    for i, f in enumerate(q.factors):
        params = []
        for name, val in zip(f.param_names, f.params):
            lo, hi = cfg.coordinate_bounds[name]
            clipped = min(max(val, lo), hi)
            if clipped != val:
                msg = f"coordinate {i}: moment-matched {name}={val:g} clipped to {clipped:g}"
                warnings.warn(msg, MomentFallbackWarning, stacklevel=3)
                notes.append(msg)
            params.append(clipped)
        factors.append(type(f)(*params) if isinstance(f, GaussianFactor)
                       else ShiftedGammaFactor(params[0], params[1], f.shift))
    return MeanFieldPosterior(tuple(factors))


def hybrid_cavi(model, init, cfg: HybridConfig) -> HybridResult:
    """Run MCMC for ``cfg.mcmc.total_steps`` steps, moment-match, then run CAVI.

    Moments come from the post-burn-in part of the single chain. Shifted-Gamma
    coordinates whose sample mean is not above the shift fall back to
    ``shape=1, scale=max(s, 0.5)`` with a :class:`MomentFallbackWarning`;
    moment-matched values outside the optimiser bounds are clipped the same way.
    """
    notes: list = []
    t0 = time.perf_counter()
    chain = metropolis_hastings(model, init, cfg.mcmc)
    t1 = time.perf_counter()
    moments = chain_moments(chain)
    if cfg.factor_family == "gaussian":
        factors = mom_gaussian(moments)
    else:
        if np.any(moments.variances <= 0):
            raise DegenerateMomentsError(f"zero sample variance in {moments.variances.tolist()}")
        factors = _gamma_init(moments, cfg.shift, notes)
    mom_init = _clip_to_bounds(MeanFieldPosterior(tuple(factors)), cfg.cavi, notes)
    t2 = time.perf_counter()
    if cfg.closed_form:
        if not isinstance(model, GaussianMeanModel) or cfg.factor_family != "gaussian":
            raise ConfigurationError("closed-form hand-off needs the conjugate Gaussian model")
        posterior, trace = cavi_closed_form(model, mom_init, cfg.cavi, cfg.quad)
    else:
        posterior, trace = cavi_numerical(model, mom_init, cfg.quad, cfg.cavi)
    t3 = time.perf_counter()
    wall = {"mcmc": t1 - t0, "moments": t2 - t1, "cavi": t3 - t2, "total": t3 - t0}
    return HybridResult(posterior, trace, chain, moments, mom_init, wall, notes)
