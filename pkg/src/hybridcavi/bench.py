"""Benchmark harness for the two simulation studies.

``run_experiment_conjugate`` compares closed-form CAVI, numerical CAVI,
Metropolis-Hastings and Hybrid CAVI on the bivariate Gaussian-mean model,
scoring each fit by closed-form KL against the analytic posterior.
``run_experiment_tdf`` does the same for the t degrees-of-freedom model
against a long reference chain, using the binned KL.

Each row gets its own RNG stream, so rows are independent of execution order.
A row that raises a library error records the message in ``notes`` and the
remaining rows still run.
"""
from __future__ import annotations

import copy
import csv
import json
import math
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cavi import (
    OptimizerConfig,
    QuadratureSettings,
    cavi_closed_form,
    cavi_numerical,
    gaussian_mean_field,
    shifted_gamma_mean_field,
)
from .divergence import GridSpec, kl_discrete, kl_gaussian
from .errors import ConfigurationError, HybridCaviError
from .hybrid import HybridConfig, hybrid_cavi
from .mcmc import MHConfig, chain_moments, metropolis_hastings
from .models import GaussianDensity, GaussianMeanModel, TDegreesModel, conjugate_posterior
from .stochastic import gaussian_copula_sample, mvn_sample

EXPERIMENTS = ("conjugate", "tdf")
REPORT_COLUMNS = ("algorithm", "init", "wall_time_s", "params", "kl_nats", "kl_method", "notes")
ERROR_PREFIX = "error: "

# RNG stream ids; row i of a family uses base + i
DATA_STREAM = 0
REFERENCE_STREAM = 1
MCMC_STREAM = 100
HYBRID_STREAM = 200

_ROW_ERRORS = (HybridCaviError, np.linalg.LinAlgError, FloatingPointError)

_DEFAULTS = {
    "conjugate": {
        "seed": 20240101,
        "data": {"n": 100, "mean": [27.0, 13.0], "cov": [[38.0, 0.8], [0.8, 4.0]], "prior_var": 50.0},
        "budgets": {
            "mcmc_steps": 20000, "mcmc_burn_in": 15000,
            "hybrid_steps": 1000, "hybrid_burn_in": 900,
            "max_sweeps": 500,
        },
        "inits": {
            "cavi": {
                "lambda1": [[10.0, 1.0], [10.0, 1.0]],
                "lambda2": [[25.0, 1.0], [10.0, 1.0]],
                "lambda3": [[10.0, 1.0], [20.0, 1.0]],
            },
            "point": {"mu1": [10.0, 10.0], "mu2": [25.0, 10.0], "mu3": [10.0, 20.0]},
        },
        "quadrature": {"hermite_nodes": 32},
    },
    "tdf": {
        "seed": 20240202,
        "data": {"n": 100, "corr": [[1.0, 0.5], [0.5, 1.0]], "dfs": [8.0, 50.0],
                 "likelihood_mode": "marginal-product"},
        "budgets": {
            "reference_steps": 20000, "reference_burn_in": 2000, "reference_step": 1.0,
            "hybrid_steps": 500, "hybrid_burn_in": 400, "hybrid_step": 1.0,
            "max_sweeps": 500, "kl_bins": 30,
        },
        "inits": {
            "reference": [4.0, 4.0],
            "cavi": {
                "lambda1": [[10.0, 10.0], [10.0, 10.0]],
                "lambda2": [[3.2, 0.6], [1.7, 6.9]],
                "lambda3": [[1.7, 6.9], [3.2, 0.6]],
            },
            "point": {"nu1": [4.0, 4.0], "nu2": [30.0, 30.0]},
        },
        "quadrature": {"gamma_nodes": 256},
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class ExperimentConfig:
    """Run matrix for one study.

    ``budgets``, ``inits``, ``data`` and ``quadrature`` are plain mappings;
    :meth:`default` fills them with the reference run matrix and
    :meth:`from_dict` overlays user settings on top. Mappings are merged key
    by key, except that each list under ``inits`` replaces its default.
    """

    experiment: str
    seed: int
    budgets: dict
    inits: dict
    data: dict = field(default_factory=dict)
    quadrature: dict = field(default_factory=dict)
    output_dir: Path | None = None

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if not self.inits.get("cavi") or not self.inits.get("point"):
            raise ConfigurationError("experiment needs nonempty 'cavi' and 'point' initialisation lists")
        for key, val in self.budgets.items():
            if not (isinstance(val, (int, float)) and val > 0):
                if key.endswith("burn_in") and val == 0:
                    continue
                raise ConfigurationError(f"budget {key} must be positive, got {val!r}")
        if self.output_dir is not None:
            self.output_dir = Path(self.output_dir)

    @classmethod
    def default(cls, experiment: str, **overrides) -> "ExperimentConfig":
        if experiment not in _DEFAULTS:
            raise ConfigurationError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
        return cls.from_dict({"experiment": experiment, **overrides})

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        experiment = raw.get("experiment")
        if experiment not in _DEFAULTS:
            raise ConfigurationError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
        user = {k: v for k, v in raw.items() if k != "experiment"}
        merged = _merge(_DEFAULTS[experiment], {k: v for k, v in user.items() if k != "inits"})
        # a named initialisation list replaces the default list rather than extending it
        merged["inits"] = {**merged["inits"], **copy.deepcopy(user.get("inits", {}))}
        unknown = set(merged) - {"seed", "data", "budgets", "inits", "quadrature", "output_dir"}
        if unknown:
            raise ConfigurationError(f"unknown experiment config keys: {sorted(unknown)}")
        return cls(experiment=experiment, seed=int(merged["seed"]), budgets=merged["budgets"],
                   inits=merged["inits"], data=merged["data"], quadrature=merged["quadrature"],
                   output_dir=merged.get("output_dir"))

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(max_sweeps=int(self.budgets["max_sweeps"]))

    def quad(self) -> QuadratureSettings:
        return QuadratureSettings(**self.quadrature)


@dataclass
class ReportRow:
    algorithm: str
    init: str
    wall_time_s: float | None
    params: object
    kl_nats: float
    kl_method: str
    notes: str = ""

    @property
    def failed(self) -> bool:
        return any(part.startswith(ERROR_PREFIX) for part in self.notes.split("; "))

    def to_record(self, with_time: bool = True) -> dict:
        return {
            "algorithm": self.algorithm,
            "init": self.init,
            "wall_time_s": self.wall_time_s if with_time else None,
            "params": self.params,
            "kl_nats": _encode_float(self.kl_nats),
            "kl_method": self.kl_method,
            "notes": self.notes,
        }


@dataclass
class Report:
    experiment: str
    rows: list = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return any(r.failed for r in self.rows)

    def find(self, algorithm: str, init: str) -> ReportRow:
        for r in self.rows:
            if r.algorithm == algorithm and r.init == init:
                return r
        raise KeyError((algorithm, init))

    def select(self, algorithm: str) -> list:
        return [r for r in self.rows if r.algorithm == algorithm]


def _encode_float(x):
    if x is None:
        return None
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return x


def _decode_float(x):
    if x is None or x == "":
        return None
    return float(x)


def _join_notes(*parts) -> str:
    return "; ".join(p for p in parts if p)


def _run_row(algorithm: str, init: str, kl_method: str, body) -> ReportRow:
    """Time ``body()`` and turn library errors into a failed row.

    ``body`` returns ``(params, kl_callable, notes)``; the KL is computed
    after the clock stops.
    """
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            t0 = time.perf_counter()
            params, kl_fn, notes = body()
            wall = time.perf_counter() - t0
            kl = kl_fn()
        except _ROW_ERRORS as exc:
            return ReportRow(algorithm, init, None, None, math.nan, kl_method,
                             f"{ERROR_PREFIX}{type(exc).__name__}: {exc}")
    extra = [str(w.message) for w in caught if str(w.message) not in notes]
    return ReportRow(algorithm, init, wall, params, float(kl), kl_method, _join_notes(*notes, *extra))


def _trace_notes(trace) -> list:
    notes = [] if trace.converged else [f"not converged after {trace.sweeps} sweeps"]
    if trace.clamped:
        notes.append(f"{len(trace.bound_hits)} bound hits")
    return notes


# --- conjugate study -----------------------------------------------------------

def conjugate_dataset(cfg: ExperimentConfig) -> np.ndarray:
    d = cfg.data
    return mvn_sample(cfg.seed, d["mean"], d["cov"], int(d["n"]), stream=DATA_STREAM)


def conjugate_step_sizes(data_cov, n: int) -> tuple:
    """Random-walk scale ``2.4/sqrt(d)`` times the per-coordinate sd of the sample mean."""
    data_cov = np.asarray(data_cov, dtype=float)
    d = data_cov.shape[0]
    return tuple(2.4 / math.sqrt(d) * np.sqrt(np.diag(data_cov) / n))


def run_experiment_conjugate(cfg: ExperimentConfig) -> Report:
    """Closed-form CAVI, numerical CAVI, MCMC and Hybrid CAVI on the Gaussian-mean model.

    Rows are ordered by algorithm then initialisation name; there are
    ``4 * 3`` rows with the default run matrix.
    """
    if cfg.experiment != "conjugate":
        raise ConfigurationError(f"expected a conjugate config, got {cfg.experiment!r}")
    data = conjugate_dataset(cfg)
    model = GaussianMeanModel(data, np.asarray(cfg.data["cov"], dtype=float),
                              prior_var=float(cfg.data["prior_var"]))
    truth = conjugate_posterior(model)
    opt, quad, b = cfg.optimizer(), cfg.quad(), cfg.budgets
    steps = tuple(b["step_sizes"]) if "step_sizes" in b else conjugate_step_sizes(cfg.data["cov"], model.n)
    report = Report("conjugate")

    cavi_inits = sorted(cfg.inits["cavi"].items())
    points = sorted(cfg.inits["point"].items())

    for name, pairs in cavi_inits:
        def body(pairs=pairs):
            q, trace = cavi_closed_form(model, gaussian_mean_field(pairs), opt, quad)
            return q.to_dict(), lambda: kl_gaussian(q, truth).nats, _trace_notes(trace)
        report.rows.append(_run_row("cavi-closed-form", name, "closed-form", body))

    for name, pairs in cavi_inits:
        def body(pairs=pairs):
            q, trace = cavi_numerical(model, gaussian_mean_field(pairs), quad, opt)
            return q.to_dict(), lambda: kl_gaussian(q, truth).nats, _trace_notes(trace)
        report.rows.append(_run_row("cavi-numerical", name, "closed-form", body))

    for i, (name, point) in enumerate(points):
        mh = MHConfig(int(b["mcmc_steps"]), int(b["mcmc_burn_in"]), steps, seed=cfg.seed, stream=MCMC_STREAM + i)

        def body(point=point, mh=mh):
            chain = metropolis_hastings(model, point, mh)
            post = chain.post_burn_in
            fit = GaussianDensity(post.mean(axis=0), np.cov(post, rowvar=False))
            params = {"mean": fit.mean.tolist(), "cov": fit.cov.tolist(),
                      "acceptance_rate": chain.acceptance_rate}
            return params, lambda: kl_gaussian(fit, truth).nats, []
        report.rows.append(_run_row("mcmc", name, "closed-form", body))

    for i, (name, point) in enumerate(points):
        hcfg = HybridConfig(
            MHConfig(int(b["hybrid_steps"]), int(b["hybrid_burn_in"]), steps, seed=cfg.seed,
                     stream=HYBRID_STREAM + i),
            cavi=opt, factor_family="gaussian", quad=quad,
        )

        def body(point=point, hcfg=hcfg):
            res = hybrid_cavi(model, point, hcfg)
            q = res.posterior
            return q.to_dict(), lambda: kl_gaussian(q, truth).nats, res.notes + _trace_notes(res.trace)
        report.rows.append(_run_row("hybrid-cavi", name, "closed-form", body))
    return report


# --- t degrees-of-freedom study ------------------------------------------------

def tdf_dataset(cfg: ExperimentConfig) -> np.ndarray:
    d = cfg.data
    return gaussian_copula_sample(cfg.seed, d["corr"], d["dfs"], int(d["n"]), stream=DATA_STREAM)


def tdf_model(cfg: ExperimentConfig, data: np.ndarray) -> TDegreesModel:
    mode = cfg.data.get("likelihood_mode", "marginal-product")
    corr = np.asarray(cfg.data["corr"], dtype=float) if mode == "full-copula" else None
    return TDegreesModel(data, likelihood_mode=mode, copula_corr=corr)


def run_experiment_tdf(cfg: ExperimentConfig) -> Report:
    """Reference MCMC, Hybrid CAVI and cold CAVI on the t degrees-of-freedom model.

    The reference chain's row has KL 0 by definition; every other row is
    scored with :func:`kl_discrete` against it on one shared grid.
    """
    if cfg.experiment != "tdf":
        raise ConfigurationError(f"expected a tdf config, got {cfg.experiment!r}")
    model = tdf_model(cfg, tdf_dataset(cfg))
    opt, quad, b = cfg.optimizer(), cfg.quad(), cfg.budgets
    report = Report("tdf")

    ref_init = cfg.inits["reference"]
    ref_cfg = MHConfig(int(b["reference_steps"]), int(b["reference_burn_in"]),
                       (float(b["reference_step"]),), seed=cfg.seed, stream=REFERENCE_STREAM)
    holder = {}

    def ref_body():
        chain = metropolis_hastings(model, ref_init, ref_cfg)
        holder["chain"] = chain
        mom = chain_moments(chain)
        params = {"means": mom.means.tolist(), "variances": mom.variances.tolist(),
                  "acceptance_rate": chain.acceptance_rate}
        return params, lambda: 0.0, []
    ref_row = _run_row("mcmc", _point_label(ref_init), "reference", ref_body)
    report.rows.append(ref_row)

    chain = holder.get("chain")
    grid = None
    if chain is not None:
        grid = GridSpec.from_samples(chain.post_burn_in, bins=int(b["kl_bins"]))

    def scorer(q):
        if chain is None:
            raise ConfigurationError("reference chain unavailable; cannot compute discrete KL")
        return lambda: kl_discrete(q, chain, grid).nats

    for i, (name, point) in enumerate(sorted(cfg.inits["point"].items())):
        hcfg = HybridConfig(
            MHConfig(int(b["hybrid_steps"]), int(b["hybrid_burn_in"]), (float(b["hybrid_step"]),),
                     seed=cfg.seed, stream=HYBRID_STREAM + i),
            cavi=opt, factor_family="shifted-gamma", quad=quad,
        )

        def body(point=point, hcfg=hcfg):
            res = hybrid_cavi(model, point, hcfg)
            return res.posterior.to_dict(), scorer(res.posterior), res.notes + _trace_notes(res.trace)
        report.rows.append(_run_row("hybrid-cavi", name, "discrete", body))

    for name, pairs in sorted(cfg.inits["cavi"].items()):
        def body(pairs=pairs):
            q, trace = cavi_numerical(model, shifted_gamma_mean_field(pairs), quad, opt)
            return q.to_dict(), scorer(q), _trace_notes(trace)
        report.rows.append(_run_row("cavi-numerical", name, "discrete", body))

    for row in report.rows:
        if math.isinf(row.kl_nats):
            row.notes = _join_notes(row.notes, "q puts mass where the reference chain never went")
    return report


def _point_label(point) -> str:
    return "(" + ",".join(f"{float(v):g}" for v in point) + ")"


def run_experiment(cfg: ExperimentConfig) -> Report:
    runner = {"conjugate": run_experiment_conjugate, "tdf": run_experiment_tdf}[cfg.experiment]
    return runner(cfg)


# --- serialisation ---------------------------------------------------------------

def timing_sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".timing.json")


def emit_report(report: Report, fmt: str, path, timing_sidecar: bool | None = None) -> Path:
    """Write ``report`` as CSV or JSON.

    Infinite KL values are written as the string ``"inf"``. With
    ``timing_sidecar`` (the default for JSON) wall times go to
    ``<stem>.timing.json`` and the main file holds ``null`` in their place,
    so repeated runs produce byte-identical reports.
    """
    if fmt not in ("csv", "json"):
        raise ConfigurationError(f"unknown report format {fmt!r}")
    path = Path(path)
    sidecar = (fmt == "json") if timing_sidecar is None else timing_sidecar
    records = [r.to_record(with_time=not sidecar) for r in report.rows]
    try:
        if fmt == "json":
            path.write_text(json.dumps(records, indent=2) + "\n")
        else:
            with path.open("w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
                writer.writeheader()
                for rec in records:
                    rec = dict(rec)
                    rec["params"] = json.dumps(rec["params"], separators=(",", ":"))
                    for key in ("wall_time_s", "kl_nats"):
                        rec[key] = "" if rec[key] is None else (
                            repr(rec[key]) if isinstance(rec[key], float) else rec[key])
                    writer.writerow(rec)
        if sidecar:
            times = [{"algorithm": r.algorithm, "init": r.init, "wall_time_s": r.wall_time_s}
                     for r in report.rows]
            timing_sidecar_path(path).write_text(json.dumps(times, indent=2) + "\n")
    except OSError as exc:
        raise OSError(f"could not write report to {path}: {exc}") from exc
    return path


def load_report(path, experiment: str = "") -> Report:
    """Parse a report written by :func:`emit_report`, merging a timing sidecar if present."""
    path = Path(path)
    if path.suffix == ".json":
        records = json.loads(path.read_text())
    else:
        with path.open(newline="") as fh:
            records = list(csv.DictReader(fh))
        for rec in records:
            rec["params"] = json.loads(rec["params"])
    rows = [ReportRow(rec["algorithm"], rec["init"], _decode_float(rec["wall_time_s"]), rec["params"],
                      float(rec["kl_nats"]), rec["kl_method"], rec["notes"]) for rec in records]
    side = timing_sidecar_path(path)
    if side.exists():
        for row, t in zip(rows, json.loads(side.read_text())):
            row.wall_time_s = t["wall_time_s"]
    return Report(experiment, rows)
