"""Command-line interface: chain runs, sandwich estimation, adjustment,
coverage simulation, reporting, and the hierarchical Poisson demo.

All computation is configured through a JSON document validated against a
strict schema (unknown keys are rejected). Exit codes: 0 success, 1
runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import chainio
from .coverage import (
    DEFAULT_ALPHA_GRID,
    ExperimentConfig,
    SCENARIOS,
    build_scenario,
    coverage_report,
    read_coverage_csv,
    run_coverage_experiment,
)
from .exceptions import ConfigError, OfsError
from .gptaper import read_gp_dataset, write_gp_dataset
from .model import Dataset
from .pairwise import read_replicates, write_replicates
from .poisson_demo import PoissonDemo, PoissonDemoConfig
from .samplers import AdaptConfig, ChainConfig, quasi_bayes_estimate, rw_metropolis, sub_seed
from .sandwich import (
    adjustment_from_dict,
    adjustment_to_dict,
    assemble_omega,
    estimate_sandwich,
    ofs_adjust,
)

_ADAPT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "enabled": {"type": "boolean"},
        "target_acceptance": {"type": ["number", "null"]},
        "window": {"type": "integer", "minimum": 1},
    },
}

_CHAIN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "iterations": {"type": "integer", "minimum": 2},
        "burn_in": {"type": "integer", "minimum": 0},
        "thin": {"type": "integer", "minimum": 1},
        "proposal_scale": {
            "anyOf": [
                {"type": "number", "exclusiveMinimum": 0},
                {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
            ]
        },
        "seed": {"type": "integer"},
        "adapt": _ADAPT_SCHEMA,
    },
}

_COMBO_SCHEMA = {
    "type": "array",
    "minItems": 2,
    "maxItems": 2,
    "prefixItems": [
        {"enum": ["moment", "plugin", "bootstrap"]},
        {"enum": ["chain_cov", "hessian", "plugin"]},
    ],
    "items": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["scenario"],
    "properties": {
        "scenario": {"enum": list(SCENARIOS)},
        "model": {"type": "object"},
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "seed": {"type": "integer"},
                "path": {"type": "string"},
            },
        },
        "chain": _CHAIN_SCHEMA,
        "sandwich": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "combos": {"type": "array", "items": _COMBO_SCHEMA, "minItems": 1},
                "bootstrap_k": {"type": "integer", "minimum": 2},
                "exclude": {"type": "array", "items": {"type": "string"}},
            },
        },
        "coverage": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_datasets": {"type": "integer", "minimum": 1},
                "alpha_grid": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                    "minItems": 1,
                },
                "methods": {
                    "type": "array",
                    "items": {"enum": ["raw", "ofs", "curvature"]},
                    "minItems": 1,
                },
                "curvature_combo": {
                    "anyOf": [{"const": "all"}, {"type": "integer", "minimum": 0}]
                },
            },
        },
        "demo": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_spatial": {"type": "integer", "minimum": 2},
                "n_times": {"type": "integer", "minimum": 1},
                "domain": {"type": "number", "exclusiveMinimum": 0},
                "time_step": {"type": "number", "exclusiveMinimum": 0},
                "spatial_taper_range": {"type": "number", "exclusiveMinimum": 0},
                "temporal_taper_range": {"type": "number", "exclusiveMinimum": 0},
                "theta0": {"type": "array", "items": {"type": "number"}},
                "beta0": {"type": "array", "items": {"type": "number"}},
                "prior_scale": {"type": "number", "exclusiveMinimum": 0},
                "beta_prior_scale": {"type": "number", "exclusiveMinimum": 0},
                "iterations": {"type": "integer", "minimum": 2},
                "burn_in": {"type": "integer", "minimum": 0},
                "thin": {"type": "integer", "minimum": 1},
                "exclude": {"type": "array", "items": {"type": "string"}},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "prefix": {"type": "string"},
            },
        },
        "seed": {"type": "integer"},
    },
}


def load_config(path):
    """Parse and schema-validate a JSON config; raises ConfigError."""
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(
            f"{path}:{err.lineno}:{err.colno}: invalid JSON: {err.msg}"
        ) from err
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{path}: config key {where}: {err.message}")
    return doc


def _out_dir(doc, args):
    out = args.out_dir or doc.get("output", {}).get("dir", ".")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _prefix(doc):
    return doc.get("output", {}).get("prefix", doc["scenario"])


def _master_seed(doc, args):
    if getattr(args, "seed_override", None) is not None:
        return int(args.seed_override)
    return int(doc.get("seed", 0))


def _load_or_simulate_data(doc, bundle, master_seed):
    data_cfg = doc.get("data", {})
    if "path" in data_cfg:
        path = data_cfg["path"]
        if doc["scenario"] == "pairwise_gaussian":
            return read_replicates(path)
        if doc["scenario"] in ("tapered_gp", "tapered_gp_linear_gibbs"):
            return read_gp_dataset(path)
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=1)
        return Dataset(observations=np.asarray(rows, dtype=float).reshape(-1, 1))
    seed = data_cfg.get("seed", sub_seed(master_seed, 0))
    return bundle.simulate(seed)


def write_dataset(doc, data, path):
    if doc["scenario"] == "pairwise_gaussian":
        return write_replicates(data, path)
    if doc["scenario"] in ("tapered_gp", "tapered_gp_linear_gibbs"):
        return write_gp_dataset(data, path)
    path = Path(path)
    with open(path, "w") as fh:
        fh.write("value\n")
        for v in np.asarray(data.observations).ravel():
            fh.write(repr(float(v)) + "\n")
    return path


def _chain_config(doc, bundle, master_seed):
    chain_cfg = doc.get("chain", {})
    scale = chain_cfg.get("proposal_scale")
    if scale is None:
        scale = bundle.proposal_scale
    else:
        scale = np.asarray(scale, dtype=float)
    adapt_cfg = chain_cfg.get("adapt", {})
    return ChainConfig(
        iterations=chain_cfg.get("iterations", 12000),
        burn_in=chain_cfg.get("burn_in", 2000),
        initial=bundle.theta0,
        proposal_scale=scale,
        thin=chain_cfg.get("thin", 1),
        adapt=AdaptConfig(
            enabled=adapt_cfg.get("enabled", True),
            target_acceptance=adapt_cfg.get("target_acceptance"),
            window=adapt_cfg.get("window", 100),
        ),
        seed=chain_cfg.get("seed", sub_seed(master_seed, 1)),
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_run_chain(args):
    doc = load_config(args.config)
    bundle = build_scenario(doc["scenario"], doc.get("model"))
    if bundle.spatial is not None:
        raise OfsError(
            "run-chain drives the plain Metropolis sampler; the Gibbs "
            "scenario runs through simulate-coverage or the library API"
        )
    master_seed = _master_seed(doc, args)
    data = _load_or_simulate_data(doc, bundle, master_seed)
    config = _chain_config(doc, bundle, master_seed)
    chain = rw_metropolis(bundle.model, bundle.prior, data, config)
    out = _out_dir(doc, args)
    prefix = _prefix(doc)
    csv_path, meta_path = chainio.write_chain(chain, out / f"{prefix}_chain.csv")
    data_path = write_dataset(doc, data, out / f"{prefix}_data.csv")
    print(f"chain: {csv_path}")
    print(f"metadata: {meta_path}")
    print(f"data: {data_path}")
    print(f"acceptance_rate: {chain.acceptance_rate:.4f}")
    return 0


def cmd_sandwich(args):
    doc = load_config(args.config)
    bundle = build_scenario(doc["scenario"], doc.get("model"))
    chain = chainio.read_chain(args.chain)
    if chain.adjusted != "raw":
        raise OfsError(
            f"chain {args.chain} is already adjusted ({chain.adjusted}); "
            "sandwich estimation needs the unadjusted quasi-posterior sample"
        )
    master_seed = _master_seed(doc, args)
    data = _load_or_simulate_data(doc, bundle, master_seed)
    sandwich_cfg = doc.get("sandwich", {})
    combos = [tuple(c) for c in sandwich_cfg.get("combos", [["plugin", "plugin"]])]
    exclude = tuple(sandwich_cfg.get("exclude", ()))
    theta_qb = quasi_bayes_estimate(chain)
    out = _out_dir(doc, args)
    prefix = _prefix(doc)
    for idx, (p_m, q_m) in enumerate(combos):
        estimate = estimate_sandwich(
            bundle.model,
            data,
            theta_qb,
            p_method=p_m,
            q_method=q_m,
            chain=chain,
            bootstrap_k=sandwich_cfg.get("bootstrap_k", 500),
            seed=sub_seed(master_seed, 7, idx),
            provenance=f"chain {Path(args.chain).name}",
        )
        omega = assemble_omega(estimate, theta_qb, exclude=exclude)
        path = out / f"{prefix}_omega_{p_m}_{q_m}.json"
        with open(path, "w") as fh:
            json.dump(adjustment_to_dict(omega), fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"omega[{p_m}, {q_m}]: {path}")
    return 0


def cmd_adjust(args):
    chain = chainio.read_chain(args.chain)
    with open(args.omega) as fh:
        omega = adjustment_from_dict(json.load(fh))
    adjusted = ofs_adjust(chain, omega)
    out = Path(args.out_dir) if args.out_dir else Path(args.chain).parent
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.chain).name
    if stem.endswith(".csv"):
        stem = stem[: -len(".csv")]
    csv_path, meta_path = chainio.write_chain(adjusted, out / f"{stem}_ofs.csv")
    print(f"adjusted chain: {csv_path}")
    print(f"metadata: {meta_path}")
    print(f"support_violations: {adjusted.support_violations}")
    return 0


def cmd_simulate_coverage(args):
    doc = load_config(args.config)
    cov_cfg = doc.get("coverage", {})
    chain_cfg = doc.get("chain", {})
    sandwich_cfg = doc.get("sandwich", {})
    config = ExperimentConfig(
        scenario=doc["scenario"],
        scenario_params=doc.get("model", {}),
        n_datasets=cov_cfg.get("n_datasets", 200),
        alpha_grid=tuple(cov_cfg.get("alpha_grid", DEFAULT_ALPHA_GRID)),
        methods=tuple(cov_cfg.get("methods", ["raw", "ofs"])),
        combos=tuple(tuple(c) for c in sandwich_cfg.get("combos", [["plugin", "plugin"]])),
        curvature_combo=cov_cfg.get("curvature_combo", "all"),
        iterations=chain_cfg.get("iterations", 12000),
        burn_in=chain_cfg.get("burn_in", 2000),
        thin=chain_cfg.get("thin", 1),
        bootstrap_k=sandwich_cfg.get("bootstrap_k", 500),
        master_seed=_master_seed(doc, args),
        workers=args.threads,
    )
    table = run_coverage_experiment(config)
    out = _out_dir(doc, args)
    prefix = _prefix(doc)
    csv_path, curve_path = coverage_report(
        table, out / f"{prefix}_coverage.csv", out / f"{prefix}_curves.csv"
    )
    print(f"coverage table: {csv_path}")
    print(f"curve file: {curve_path}")
    return 0


def cmd_demo_poisson(args):
    doc = load_config(args.config)
    demo_cfg = dict(doc.get("demo", {}))
    for key in ("theta0", "beta0", "exclude"):
        if key in demo_cfg:
            demo_cfg[key] = tuple(demo_cfg[key])
    config = PoissonDemoConfig(seed=_master_seed(doc, args), **demo_cfg)
    demo = PoissonDemo(config)
    result = demo.run()
    out = _out_dir(doc, args)
    prefix = doc.get("output", {}).get("prefix", "poisson_demo")
    raw_path, _ = chainio.write_chain(result.raw_chain, out / f"{prefix}_raw_chain.csv")
    adj_path, _ = chainio.write_chain(
        result.adjusted_chain, out / f"{prefix}_adjusted_chain.csv"
    )
    summary_path = out / f"{prefix}_summary.json"
    with open(summary_path, "w") as fh:
        json.dump(result.summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"raw chain: {raw_path}")
    print(f"adjusted chain: {adj_path}")
    print(f"summary: {summary_path}")
    for name, rate in result.summary["raw_block_acceptance"].items():
        print(f"acceptance[{name}]: {rate:.3f}")
    for name, width in result.summary["interval_widths_90"].items():
        print(f"width_ratio[{name}]: {width['ratio']:.3f}")
    return 0


def cmd_report(args):
    table = read_coverage_csv(args.table)
    out = Path(args.out_dir) if args.out_dir else Path(args.table).parent
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.table).name
    if stem.endswith(".csv"):
        stem = stem[: -len(".csv")]
    _, curve_path = coverage_report(table, out / f"{stem}_echo.csv", out / f"{stem}_curves.csv")
    print(f"curve file: {curve_path}")
    by_method = {}
    for row in table.rows:
        by_method.setdefault(row.method, []).append(abs(row.empirical - row.nominal))
    for method in sorted(by_method):
        devs = by_method[method]
        print(
            f"{method}: mean |empirical - nominal| = "
            f"{sum(devs) / len(devs):.4f} over {len(devs)} rows"
        )
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def make_parser():
    parser = argparse.ArgumentParser(
        prog="ofs",
        description="Open-faced sandwich adjustment of quasi-posterior MCMC samples",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out-dir", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker pool size")
        p.add_argument(
            "--seed-override", type=int, default=None, help="override the master seed"
        )

    p = sub.add_parser("run-chain", help="simulate data and run the sampler")
    add_common(p)
    p.set_defaults(func=cmd_run_chain)

    p = sub.add_parser("sandwich", help="estimate adjustment matrices from a chain")
    p.add_argument("chain", help="chain CSV written by run-chain")
    add_common(p)
    p.set_defaults(func=cmd_sandwich)

    p = sub.add_parser("adjust", help="apply an adjustment matrix to a chain")
    p.add_argument("chain", help="raw chain CSV")
    p.add_argument("omega", help="adjustment matrix JSON")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_adjust)

    p = sub.add_parser("simulate-coverage", help="run a coverage experiment")
    add_common(p)
    p.set_defaults(func=cmd_simulate_coverage)

    p = sub.add_parser("demo-poisson", help="hierarchical Poisson demo, two passes")
    add_common(p)
    p.set_defaults(func=cmd_demo_poisson)

    p = sub.add_parser("report", help="summarize a coverage table CSV")
    p.add_argument("table", help="coverage CSV")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (OfsError, OSError, ValueError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
