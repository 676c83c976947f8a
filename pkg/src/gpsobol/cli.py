"""Command-line front end: ``gpsobol {lhs,fit,sobol,bench} --config run.json``.

Exit codes: 0 success, 1 computation error, 2 invalid configuration or
input file, 3 a requested computation did not converge.  On failure a JSON
error document is printed to stderr and written to ``<out>/error.json``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from . import bench
from .effects import SimulationConfig, build_main_effect, convergence_check, simulate_index, write_samples_csv
from .errors import GpSobolError, NotConvergedError
from .gp import FitOptions, fit, load_model, loo_q2
from .inputs import Design, InputSpace, lhs_sample
from .quadrature import build_table, refine_until_stable
from .sobol import SobolEstimate, global_decomposition, predictor_decomposition, write_estimates_csv

log = logging.getLogger("gpsobol")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NONCONVERGED = 0, 1, 2, 3


class ConfigError(Exception):
    pass


_NUM = {"type": "number"}
_DIST = {
    "type": "object",
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["uniform", "weibull", "trapezoidal"]},
        "name": {"type": "string"},
        **{k: _NUM for k in ("a", "b", "c", "d", "shape", "scale", "location")},
    },
    "additionalProperties": False,
}
_SPACE = {"oneOf": [{"type": "array", "items": _DIST, "minItems": 1}, {"type": "string"}]}
_FIT = {
    "type": "object",
    "properties": {
        "theta": {"type": "array", "items": _NUM},
        "p": {"oneOf": [_NUM, {"type": "array", "items": _NUM}]},
        "estimate_p": {"type": "boolean"},
        "nugget": {"type": "number", "minimum": 0},
        "n_starts": {"type": "integer", "minimum": 1},
        "step_tol": {"type": "number", "exclusiveMinimum": 0},
        "theta_range": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "max_evals": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}
_SIM = {
    "type": "object",
    "properties": {
        "n_dis": {"type": "integer", "minimum": 8},
        "k_sim": {"type": "integer", "minimum": 100},
        "jitter": {"type": "number", "minimum": 0},
    },
    "additionalProperties": False,
}
_SIZES = {"type": "array", "items": {"type": "integer", "minimum": 3}, "minItems": 1}

SCHEMAS = {
    "lhs": {
        "type": "object",
        "required": ["space", "n"],
        "properties": {
            "space": _SPACE,
            "n": {"type": "integer", "minimum": 1},
            "function": {"enum": ["gsobol", "ishigami"]},
        },
        "additionalProperties": False,
    },
    "fit": {
        "type": "object",
        "required": ["space", "design"],
        "properties": {
            "space": _SPACE,
            "design": {"type": "string"},
            "trend": {"enum": ["constant", "linear"]},
            "fit": _FIT,
        },
        "additionalProperties": False,
    },
    "sobol": {
        "type": "object",
        "required": ["model"],
        "properties": {
            "model": {"type": "string"},
            "space": _SPACE,
            "level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "quadrature": {
                "type": "object",
                "properties": {
                    "tol": {"type": "number", "exclusiveMinimum": 0},
                    "start": {"type": "integer", "minimum": 2},
                    "max_nodes": {"type": "integer", "minimum": 2},
                },
                "additionalProperties": False,
            },
            "simulation": _SIM,
            "export_samples": {"type": "boolean"},
        },
        "additionalProperties": False,
    },
    "bench": {
        "type": "object",
        "required": ["profile", "function"],
        "properties": {
            "profile": {"enum": ["ci", "full"]},
            "function": {"enum": ["gsobol", "ishigami"]},
            "a": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
            "sizes": _SIZES,
            "replicates": {"type": "integer", "minimum": 10},
            "coverage_sizes": _SIZES,
            "coverage_replicates": {"type": "integer", "minimum": 10},
            "level": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "n_test": {"type": "integer", "minimum": 10},
            "n_nodes": {"type": "integer", "minimum": 2},
            "trend": {"enum": ["constant", "linear"]},
            "fit": _FIT,
            "simulation": _SIM,
        },
        "additionalProperties": False,
    },
}

PROFILES = {
    ("ci", "gsobol"): {"sizes": [25, 55, 95], "replicates": 20, "coverage_sizes": [20, 35, 50], "coverage_replicates": 20},
    ("ci", "ishigami"): {"sizes": [30, 80, 130], "replicates": 20, "coverage_sizes": [30, 80, 130], "coverage_replicates": 20},
    ("full", "gsobol"): {"sizes": list(range(25, 96, 10)), "replicates": 100, "coverage_sizes": [20, 30, 40, 50],
                         "coverage_replicates": 100},
    ("full", "ishigami"): {"sizes": list(range(30, 131, 20)), "replicates": 100, "coverage_sizes": list(range(30, 131, 20)),
                           "coverage_replicates": 100},
}


def load_config(path, command: str) -> tuple[dict, Path]:
    path = Path(path)
    try:
        config = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        jsonschema.validate(config, SCHEMAS[command])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema error at {where}: {exc.message}") from exc
    return config, path.parent


def _resolve(base: Path, name: str) -> Path:
    p = Path(name)
    return p if p.is_absolute() else base / p


def _space(value, base: Path) -> InputSpace:
    try:
        if isinstance(value, str):
            value = json.loads(_resolve(base, value).read_text(encoding="utf-8"))
        return InputSpace.from_list(value)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"invalid input space: {exc}") from exc


def read_design_csv(path, d: int) -> tuple[Design, list[str]]:
    """Read ``d`` input columns followed by one response column, with a header row."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read design {path}: {exc}") from exc
    if len(rows) < 2:
        raise ConfigError(f"schema error: design {path} needs a header row and data rows")
    header, body = rows[0], [r for r in rows[1:] if r]
    if len(header) != d + 1:
        raise ConfigError(f"schema error: design has {len(header)} columns, expected {d} inputs + 1 response")
    try:
        data = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise ConfigError(f"schema error: non-numeric value in design: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != d + 1:
        raise ConfigError("schema error: ragged design rows")
    return Design(data[:, :d], data[:, d]), header


def write_design_csv(path, design: Design, names) -> None:
    columns = list(names) + (["y"] if design.responses is not None else [])
    rows = []
    for k in range(design.n):
        vals = list(design.points[k]) + ([design.responses[k]] if design.responses is not None else [])
        rows.append(dict(zip(columns, (float(v) for v in vals))))
    bench.write_csv(path, rows, columns)


def dump_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def cmd_lhs(config, base, args) -> int:
    space = _space(config["space"], base)
    design = lhs_sample(space, config["n"], args.seed)
    if "function" in config:
        f = bench.FUNCTIONS[config["function"]]()
        if f.d != space.d:
            raise ConfigError(f"{f.name} takes {f.d} inputs, space has {space.d}")
        design = design.with_responses(f(design.points))
    write_design_csv(args.out / "design.csv", design, space.names)
    return EXIT_OK


def cmd_fit(config, base, args) -> int:
    space = _space(config["space"], base)
    design, _ = read_design_csv(_resolve(base, config["design"]), space.d)
    if not space.contains(design.points):
        raise ConfigError("design points fall outside the support of the input space")
    options = FitOptions.from_dict({**config.get("fit", {}), "seed": args.seed})
    gp = fit(design, space, config.get("trend", "linear"), options)
    gp.save(args.out / "model.json", space)
    loo = loo_q2(gp)
    report = {
        "n": gp.n, "d": gp.d, "trend": gp.trend.kind, "loglik": gp.loglik,
        "theta": gp.params.theta.tolist(), "p": gp.params.p.tolist(), "sigma2": gp.sigma2,
        "beta": gp.beta.tolist(), "nugget": gp.nugget, "validation": loo.to_dict(),
        "starts": [{"start_loglik": r.start_loglik, "end_loglik": r.end_loglik, "n_evals": r.n_evals} for r in gp.trace],
    }
    dump_json(args.out / "fit_report.json", report)
    print(f"LOO Q2 = {loo.q2:.4f}")
    return EXIT_OK


def cmd_sobol(config, base, args) -> int:
    try:
        gp, model_space = load_model(_resolve(base, config["model"]))
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load model: {exc}") from exc
    space = _space(config["space"], base) if "space" in config else model_space
    if space is None:
        raise ConfigError("model file carries no input space; give 'space' in the config")
    level = config.get("level", 0.9)
    quad = config.get("quadrature", {})
    sim = SimulationConfig(**config.get("simulation", {}))
    converged = True
    try:
        table = refine_until_stable(gp, space, quad.get("tol", 1e-8), quad.get("start", 32), quad.get("max_nodes", 4096))
        quad_status = {"converged": True, "n_nodes": table.n_nodes}
    except NotConvergedError as exc:
        if not args.allow_nonconverged:
            raise
        table = build_table(gp, space, quad.get("max_nodes", 4096))
        quad_status = {"converged": False, "n_nodes": table.n_nodes, **exc.detail}
        converged = False

    pred = predictor_decomposition(gp, table)
    glob = global_decomposition(gp, table)
    seeds = np.random.SeedSequence(args.seed).generate_state(gp.d)
    rows, inputs, dists, estimates = [], [], [], []
    for i in range(gp.d):
        cfg = replace(sim, seed=int(seeds[i]))
        effect = build_main_effect(gp, space, table, i, cfg.n_dis)
        sigma = float(np.sqrt(effect.moments()[1])) / glob.total_variance
        dist = simulate_index(effect, glob.total_variance, cfg)
        lo, hi = dist.ci(level)
        check = convergence_check(gp, space, table, i, glob.total_variance, cfg)
        converged &= check.converged
        name = space.names[i]
        rows.append({"input": name, "S": float(pred.indices[i]), "mu": float(glob.indices[i]), "sigma": sigma,
                     "ci_lo": lo, "ci_hi": hi})
        inputs.append({"input": name, "predictor_only": float(pred.indices[i]), "global_mean": float(glob.indices[i]),
                       "global_std": sigma, "ci": {"level": level, "lower": lo, "upper": hi},
                       "simulated_mean": dist.mean, "simulated_std": dist.std, "convergence": check.to_dict()})
        dists.append(dist)
        estimates += [SobolEstimate(i, "predictor_only", float(pred.indices[i])),
                      SobolEstimate(i, "global_model", float(glob.indices[i]), sigma, (level, lo, hi))]
    bench.write_csv(args.out / "sobol.csv", rows, ["input", "S", "mu", "sigma", "ci_lo", "ci_hi"])
    doc = {
        "predictor_variance": pred.total_variance, "expected_total_variance": glob.total_variance,
        "quadrature": quad_status, "simulation": {"n_dis": sim.n_dis, "k_sim": sim.k_sim, "seed": args.seed},
        "inputs": inputs, "converged": converged,
    }
    dump_json(args.out / "sobol.json", doc)
    write_estimates_csv(args.out / "estimates.csv", estimates, space.names)
    if config.get("export_samples"):
        write_samples_csv(args.out / "samples.csv", dists, space.names)
    if not converged and not args.allow_nonconverged:
        raise NotConvergedError("simulation convergence check failed", {"inputs": [x["convergence"] for x in inputs]})
    return EXIT_OK


def cmd_bench(config, base, args) -> int:
    settings = {**PROFILES[(config["profile"], config["function"])], **config}
    maker = bench.FUNCTIONS[config["function"]]
    f = maker(settings["a"]) if "a" in settings and config["function"] == "gsobol" else maker()
    cfg = bench.default_config(f.name)
    if "fit" in settings:
        cfg.fit = FitOptions.from_dict({**cfg.fit.__dict__, **settings["fit"]})
    cfg.trend = settings.get("trend", cfg.trend)
    cfg.n_test = settings.get("n_test", cfg.n_test)
    cfg.n_nodes = settings.get("n_nodes", cfg.n_nodes)
    sim = SimulationConfig(**settings.get("simulation", {}))
    threads = args.threads or os.cpu_count() or 1
    conv = bench.convergence_study(f, settings["sizes"], settings["replicates"], cfg, args.seed, threads)
    cov = bench.coverage_study(f, settings["coverage_sizes"], settings["coverage_replicates"], settings.get("level", 0.9),
                               replace(cfg, simulation=sim), args.seed, threads)
    for path in bench.write_study_csvs(args.out, conv, cov):
        print(path)
    return EXIT_OK


COMMANDS = {"lhs": cmd_lhs, "fit": cmd_fit, "sobol": cmd_sobol, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gpsobol", description="Sobol indices of Gaussian-process metamodels")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON run configuration")
    common.add_argument("--seed", type=int, default=0, help="seed for all randomness")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--allow-nonconverged", action="store_true",
                        help="write results and exit 0 even if a convergence check fails")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("lhs", parents=[common], help="generate a Latin hypercube design")
    sub.add_parser("fit", parents=[common], help="fit a metamodel to a design CSV")
    sub.add_parser("sobol", parents=[common], help="Sobol indices and confidence intervals of a fitted model")
    sub.add_parser("bench", parents=[common], help="run the benchmark studies")
    return parser


def _fail(out: Path, code: int, exc: Exception) -> int:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    detail = getattr(exc, "detail", None)
    if detail:
        doc["detail"] = detail
    text = json.dumps(doc, sort_keys=True, default=str)
    print(text, file=sys.stderr)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(text + "\n", encoding="utf-8")
    except OSError:
        pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=os.environ.get("GPSOBOL_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config, base = load_config(args.config, args.command)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](config, base, args)
    except ConfigError as exc:
        return _fail(args.out, EXIT_CONFIG, exc)
    except NotConvergedError as exc:
        return _fail(args.out, EXIT_NONCONVERGED, exc)
    except (GpSobolError, ValueError, ArithmeticError) as exc:
        return _fail(args.out, EXIT_FAIL, exc)


if __name__ == "__main__":
    sys.exit(main())
