"""Command-line entry point: ``hybridcavi <command> [options]``.

Commands
--------
gen-data     write a simulated dataset (conjugate or tdf study) as CSV
mcmc         run Metropolis-Hastings on a configured model
cavi         run closed-form or numerical CAVI on a configured model
hybrid       run Hybrid CAVI on a configured model
kl           score a fitted posterior against a reference chain or the analytic posterior
experiment   run a whole study (``conjugate`` or ``tdf``) and write its report

Model commands read a JSON config (``--config``) with the model keys
accepted by :func:`hybridcavi.models.model_from_config` plus optional
``init``, ``family``, ``mcmc`` and ``quadrature`` sections.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench
from .cavi import (
    FACTOR_TYPES,
    MeanFieldPosterior,
    OptimizerConfig,
    QuadratureSettings,
    cavi_closed_form,
    cavi_numerical,
    export_trace_json,
)
from .divergence import kl_discrete, kl_gaussian
from .errors import ConfigurationError, HybridCaviError
from .hybrid import HybridConfig, hybrid_cavi
from .mcmc import MHConfig, export_chain_csv, export_chain_summary, load_chain_csv, metropolis_hastings
from .models import GaussianMeanModel, conjugate_posterior, load_model_config, model_from_config
from .stochastic import save_dataset

log = logging.getLogger("hybridcavi")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="RNG seed (overrides the config)")
    p.add_argument("--config", type=Path, default=None, help="JSON config file")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
    p.add_argument("--format", choices=("csv", "json"), default="json", help="report format")
    p.add_argument("--strict", action="store_true", help="exit nonzero if any report row errored")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="hybridcavi", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="simulate a study dataset")
    p.add_argument("experiment", choices=bench.EXPERIMENTS)

    p = sub.add_parser("mcmc", parents=[common], help="run Metropolis-Hastings")
    p.add_argument("--init", type=float, nargs="+", help="starting point")
    p.add_argument("--steps", type=int, help="total steps")
    p.add_argument("--burn-in", type=int, help="burn-in steps")
    p.add_argument("--step-size", type=float, nargs="+", help="proposal sd (one or per coordinate)")

    p = sub.add_parser("cavi", parents=[common], help="run CAVI")
    p.add_argument("--init", type=str, help='factor parameters as JSON, e.g. "[[10,1],[10,1]]"')
    p.add_argument("--family", choices=tuple(FACTOR_TYPES), help="variational factor family")
    p.add_argument("--closed-form", action="store_true", help="closed-form updates (conjugate model only)")

    p = sub.add_parser("hybrid", parents=[common], help="run Hybrid CAVI")
    p.add_argument("--init", type=float, nargs="+", help="MCMC starting point")
    p.add_argument("--steps", type=int, help="total MCMC steps")
    p.add_argument("--burn-in", type=int, help="burn-in steps")
    p.add_argument("--step-size", type=float, nargs="+")
    p.add_argument("--family", choices=tuple(FACTOR_TYPES))
    p.add_argument("--closed-form", action="store_true")

    p = sub.add_parser("kl", parents=[common], help="KL of a fitted posterior")
    p.add_argument("fitted", type=Path, help="JSON file with a 'fitted' entry (cavi/hybrid output)")
    p.add_argument("--reference", type=Path, help="chain CSV to score against (discrete KL)")
    p.add_argument("--burn-in", type=int, default=0, help="burn-in of the reference chain")

    p = sub.add_parser("experiment", parents=[common], help="run a full study")
    p.add_argument("experiment", choices=bench.EXPERIMENTS)
    return parser


def _load_config(args) -> dict:
    return load_model_config(args.config) if args.config else {}


def _model(args, cfg: dict):
    if "model" not in cfg:
        raise ConfigurationError("this command needs --config with a 'model' entry")
    base = args.config.parent if args.config else None
    return model_from_config(cfg, base_dir=base)


def _mh_config(args, cfg: dict, dim: int) -> MHConfig:
    mc = cfg.get("mcmc", {})
    steps = args.steps if args.steps is not None else mc.get("total_steps", 1000)
    burn = args.burn_in if args.burn_in is not None else mc.get("burn_in", 0)
    sizes = args.step_size if args.step_size else mc.get("step_sizes", [1.0] * dim)
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    return MHConfig(int(steps), int(burn), tuple(sizes), seed=int(seed))


def _point(args, cfg: dict) -> np.ndarray:
    point = args.init if args.init else cfg.get("init")
    if point is None:
        raise ConfigurationError("no starting point: pass --init or set 'init' in the config")
    return np.asarray(point, dtype=float)


def _quad(cfg: dict) -> QuadratureSettings:
    return QuadratureSettings(**cfg.get("quadrature", {}))


def _optimizer(cfg: dict) -> OptimizerConfig:
    return OptimizerConfig(max_sweeps=int(cfg.get("max_sweeps", 500)))


def _write_json(path: Path, payload) -> Path:
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def cmd_gen_data(args) -> int:
    overrides = {} if args.seed is None else {"seed": args.seed}
    if args.config:
        overrides = {**load_model_config(args.config), **overrides}
    ecfg = bench.ExperimentConfig.default(args.experiment, **overrides)
    data = bench.conjugate_dataset(ecfg) if args.experiment == "conjugate" else bench.tdf_dataset(ecfg)
    path = save_dataset(data, args.out / f"{args.experiment}_data.csv")
    print(path)
    return 0


def cmd_mcmc(args) -> int:
    cfg = _load_config(args)
    model = _model(args, cfg)
    chain = metropolis_hastings(model, _point(args, cfg), _mh_config(args, cfg, model.dim))
    print(export_chain_csv(chain, args.out / "chain.csv"))
    print(export_chain_summary(chain, args.out / "chain_summary.json"))
    return 0


def cmd_cavi(args) -> int:
    cfg = _load_config(args)
    model = _model(args, cfg)
    raw = json.loads(args.init) if args.init else cfg.get("init")
    if raw is None:
        raise ConfigurationError("no initial factors: pass --init or set 'init' in the config")
    family = args.family or cfg.get("family", "gaussian")
    kind = FACTOR_TYPES[family]
    init = MeanFieldPosterior(tuple(kind(*p) for p in raw))
    if args.closed_form:
        if not isinstance(model, GaussianMeanModel):
            raise ConfigurationError("--closed-form needs the gaussian-mean model")
        q, trace = cavi_closed_form(model, init, _optimizer(cfg), _quad(cfg))
    else:
        q, trace = cavi_numerical(model, init, _quad(cfg), _optimizer(cfg))
    print(export_trace_json(q, trace, args.out / "cavi_trace.json"))
    return 0


def cmd_hybrid(args) -> int:
    cfg = _load_config(args)
    model = _model(args, cfg)
    hcfg = HybridConfig(_mh_config(args, cfg, model.dim), cavi=_optimizer(cfg),
                        factor_family=args.family or cfg.get("family", "gaussian"),
                        quad=_quad(cfg), closed_form=args.closed_form)
    res = hybrid_cavi(model, _point(args, cfg), hcfg)
    print(_write_json(args.out / "hybrid_report.json", res.to_report()))
    return 0


def cmd_kl(args) -> int:
    fitted = json.loads(args.fitted.read_text())
    q = MeanFieldPosterior.from_dict(fitted["fitted"] if isinstance(fitted, dict) else fitted)
    if args.reference:
        kl = kl_discrete(q, load_chain_csv(args.reference, burn_in=args.burn_in))
    else:
        cfg = _load_config(args)
        model = _model(args, cfg)
        if not isinstance(model, GaussianMeanModel):
            raise ConfigurationError("without --reference the model must be gaussian-mean")
        kl = kl_gaussian(q, conjugate_posterior(model))
    payload = {"kl_nats": bench._encode_float(kl.nats), "kl_method": kl.method}
    print(json.dumps(payload))
    _write_json(args.out / "kl.json", payload)
    return 0


def cmd_experiment(args) -> int:
    raw = load_model_config(args.config) if args.config else {}
    raw = {**raw, "experiment": args.experiment}
    if args.seed is not None:
        raw["seed"] = args.seed
    ecfg = bench.ExperimentConfig.from_dict(raw)
    out = Path(ecfg.output_dir) if ecfg.output_dir and args.out == Path(".") else args.out
    report = bench.run_experiment(ecfg)
    path = bench.emit_report(report, args.format, out / f"{args.experiment}_report.{args.format}")
    print(path)
    for row in report.rows:
        if row.failed:
            log.warning("%s %s: %s", row.algorithm, row.init, row.notes)
    return 1 if (args.strict and report.failed) else 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "mcmc": cmd_mcmc,
    "cavi": cmd_cavi,
    "hybrid": cmd_hybrid,
    "kl": cmd_kl,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](args)
    except (HybridCaviError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"hybridcavi {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
