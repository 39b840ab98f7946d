"""Random-walk Metropolis-Hastings with burn-in handling."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateMomentsError,
    InsufficientSamplesError,
    InvalidInitializationError,
)
from .models import as_log_joint
from .stochastic import make_rng


@dataclass(frozen=True)
class MHConfig:
    total_steps: int
    burn_in: int
    step_sizes: tuple
    seed: int = 0
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "step_sizes", tuple(float(s) for s in np.atleast_1d(self.step_sizes)))
        if self.total_steps < 1:
            raise ConfigurationError("total_steps must be positive")
        if not 0 <= self.burn_in < self.total_steps:
            raise ConfigurationError(
                f"burn_in must satisfy 0 <= burn_in < total_steps, got {self.burn_in} / {self.total_steps}"
            )
        if any(not s > 0 for s in self.step_sizes):
            raise ConfigurationError("step sizes must be positive")


@dataclass(frozen=True)
class Chain:
    """Stored sample path.

    ``samples[t]`` is the state after step ``t + 1``; the initial point is
    not stored. ``accepted[t]`` records whether that step's proposal was taken.
    """

    samples: np.ndarray
    accepted: np.ndarray
    burn_in: int
    acceptance_rate: float

    @property
    def post_burn_in(self) -> np.ndarray:
        return self.samples[self.burn_in:]

    @property
    def total_steps(self) -> int:
        return self.samples.shape[0]

    def summary(self) -> dict:
        out = {"acceptance_rate": self.acceptance_rate, "burn_in": self.burn_in,
               "total_steps": self.total_steps}
        try:
            mom = chain_moments(self)
            out["moments"] = {"means": mom.means.tolist(), "variances": mom.variances.tolist(),
                              "degenerate": mom.degenerate}
        except InsufficientSamplesError as exc:
            out["moments"] = None
            out["moments_error"] = str(exc)
        return out


@dataclass(frozen=True)
class ChainMoments:
    means: np.ndarray
    variances: np.ndarray
    degenerate: bool = False


def metropolis_hastings(logjoint, init, cfg: MHConfig) -> Chain:
    """Run a symmetric Gaussian random-walk Metropolis-Hastings chain.

    Parameters
    ----------
    logjoint
        Model with a ``log_joint`` method, or a callable mapping an m-vector to
        a log density. ``-inf`` marks points outside the support; proposals
        there are always rejected.
    init
        Starting point; its log density must be finite.
    cfg
        Step budget, burn-in, per-coordinate proposal standard deviations and seed.
    """
    f = as_log_joint(logjoint)
    z = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    m = z.size
    if len(cfg.step_sizes) == 1 and m > 1:
        steps = np.full(m, cfg.step_sizes[0])
    elif len(cfg.step_sizes) == m:
        steps = np.asarray(cfg.step_sizes)
    else:
        raise ConfigurationError(f"{len(cfg.step_sizes)} step sizes for a {m}-dimensional target")

    cur = float(f(z))
    if not np.isfinite(cur):
        raise InvalidInitializationError(f"log joint at the initial point is {cur}")

    rng = make_rng(cfg.seed, cfg.stream)
    moves = rng.standard_normal((cfg.total_steps, m)) * steps
    log_u = np.log(rng.random(cfg.total_steps))

    samples = np.empty((cfg.total_steps, m))
    accepted = np.zeros(cfg.total_steps, dtype=bool)
    for t in range(cfg.total_steps):
        prop = z + moves[t]
        new = float(f(prop))
        # nan compares False, so a nan proposal is rejected like -inf
        if new - cur >= log_u[t]:
            z, cur = prop, new
            accepted[t] = True
        samples[t] = z
    return Chain(samples, accepted, cfg.burn_in, float(accepted.mean()))


def chain_moments(chain: Chain) -> ChainMoments:
    """Means and unbiased variances of the post-burn-in samples."""
    post = chain.post_burn_in
    if post.shape[0] < 2:
        raise InsufficientSamplesError(
            f"need at least 2 post-burn-in samples, have {post.shape[0]}"
        )
    var = post.var(axis=0, ddof=1)
    return ChainMoments(post.mean(axis=0), var, bool(np.any(var == 0)))


def require_nondegenerate(moments: ChainMoments) -> ChainMoments:
    if moments.degenerate:
        raise DegenerateMomentsError(f"zero sample variance in moments {moments.variances.tolist()}")
    return moments


def export_chain_csv(chain: Chain, path) -> Path:
    path = Path(path)
    m = chain.samples.shape[1]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step"] + [f"z{j + 1}" for j in range(m)] + ["accepted"])
        for t, (row, acc) in enumerate(zip(chain.samples, chain.accepted), start=1):
            writer.writerow([t] + [repr(float(v)) for v in row] + [int(acc)])
    return path


def load_chain_csv(path, burn_in: int = 0) -> Chain:
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]
    m = len(header) - 2
    samples = np.array([[float(v) for v in row[1:1 + m]] for row in rows]).reshape(-1, m)
    accepted = np.array([row[-1] == "1" for row in rows], dtype=bool)
    rate = float(accepted.mean()) if accepted.size else 0.0
    return Chain(samples, accepted, burn_in, rate)


def export_chain_summary(chain: Chain, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(chain.summary(), indent=2, sort_keys=True) + "\n")
    return path
