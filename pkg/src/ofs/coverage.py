"""Frequentist-calibration experiments: simulate, sample, adjust, tabulate.

For each simulated dataset the pipeline runs the quasi-posterior sampler,
estimates the sandwich components with the configured estimator pairs,
produces raw / post-hoc adjusted / curvature-adjusted intervals over a
grid of levels, and tabulates how often each interval covers the
generating parameter. Datasets are independent tasks with seeds split
from the master seed; failed estimates are excluded from the effective
count and reported, never retried.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (
    CapabilityError,
    EstimationError,
    IllConditionedError,
    NotPositiveDefiniteError,
    OfsError,
)
from .gptaper import ExponentialFamily, TaperSpec, TaperedGpModel, grid_locations, simulate_gp
from .model import ParamVec, PriorSpec, half_cauchy, normal
from .models import GaussianIidModel, QuadraticToyModel
from .pairwise import PairwiseGaussianModel
from .samplers import (
    AdaptConfig,
    ChainConfig,
    curvature_metropolis,
    quasi_bayes_estimate,
    rw_metropolis,
    sub_seed,
)
from .sandwich import (
    assemble_omega,
    credible_interval,
    curvature_matrix,
    estimate_sandwich,
    ofs_adjust,
)
from .spatial import SpatialLinearModel

SCENARIOS = (
    "exact_gaussian_oracle",
    "tapered_gp",
    "pairwise_gaussian",
    "tapered_gp_linear_gibbs",
    "toy_quadratic",
)

METHODS = ("raw", "ofs", "curvature")

DEFAULT_ALPHA_GRID = (0.01, 0.05, 0.10, 0.20, 0.33, 0.50)
DEFAULT_N_DATASETS = 200
DEFAULT_ITERATIONS = 12000
DEFAULT_BURN_IN = 2000

_ESTIMATION_ERRORS = (
    EstimationError,
    NotPositiveDefiniteError,
    IllConditionedError,
    CapabilityError,
)


# ---------------------------------------------------------------------------
# Scenario construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioBundle:
    """Everything a per-dataset task needs, reconstructible in a worker."""

    name: str
    model: object
    prior: PriorSpec
    theta0: ParamVec
    proposal_scale: np.ndarray
    simulate: object  # seed -> Dataset
    spatial: SpatialLinearModel | None = None
    beta0: np.ndarray | None = None


def _merge_defaults(params, defaults):
    params = dict(params or {})
    unknown = set(params) - set(defaults)
    if unknown:
        raise ValueError(f"unknown scenario parameters: {sorted(unknown)}")
    for key, value in defaults.items():
        params.setdefault(key, value)
    return params


def build_scenario(name, params=None):
    """Instantiate the model, prior, truth, and simulator for a scenario."""
    if name == "exact_gaussian_oracle":
        p = _merge_defaults(
            params, {"n_obs": 100, "theta0": (0.0, 1.0), "prior_scale": 5.0}
        )
        model = GaussianIidModel(p["n_obs"])
        theta0 = model.make_params(p["theta0"])
        prior = PriorSpec((normal(0.0, 10.0), half_cauchy(p["prior_scale"])))
        return ScenarioBundle(
            name=name,
            model=model,
            prior=prior,
            theta0=theta0,
            proposal_scale=np.array([0.2, 0.3]),
            simulate=lambda seed: model.simulate(theta0, seed),
        )

    if name == "tapered_gp":
        p = _merge_defaults(
            params,
            {
                "grid": 15,
                "spacing": 1.0,
                "taper_range": 4.0,
                "theta0": (1.0, 0.2),
                "prior_scale": 5.0,
                "mode": "auto",
            },
        )
        family = ExponentialFamily()
        locations = grid_locations(p["grid"], p["spacing"])
        taper = TaperSpec(spatial_range=p["taper_range"])
        model = TaperedGpModel(family, taper, locations, mode=p["mode"])
        theta0 = model.make_params(p["theta0"])
        prior = PriorSpec(
            (half_cauchy(p["prior_scale"]), half_cauchy(p["prior_scale"]))
        )
        sim_chol = np.linalg.cholesky(model.kernel.full_cov(theta0.values))
        return ScenarioBundle(
            name=name,
            model=model,
            prior=prior,
            theta0=theta0,
            proposal_scale=np.array([0.15, 0.05]),
            simulate=lambda seed: simulate_gp(
                family, theta0.values, locations, seed=seed, chol=sim_chol
            ),
        )

    if name == "pairwise_gaussian":
        p = _merge_defaults(
            params,
            {"grid": 5, "replicates": 50, "theta0": (1.0, 0.2), "prior_scale": 5.0},
        )
        locations = grid_locations(p["grid"])
        model = PairwiseGaussianModel(locations, p["replicates"])
        theta0 = model.make_params(p["theta0"])
        prior = PriorSpec(
            (half_cauchy(p["prior_scale"]), half_cauchy(p["prior_scale"]))
        )
        return ScenarioBundle(
            name=name,
            model=model,
            prior=prior,
            theta0=theta0,
            proposal_scale=np.array([0.01, 0.004]),
            simulate=lambda seed: model.simulate(theta0, seed),
        )

    if name == "tapered_gp_linear_gibbs":
        p = _merge_defaults(
            params,
            {
                "grid": 10,
                "spacing": 1.0,
                "taper_range": 4.0,
                "theta0": (1.0, 0.2),
                "beta0": (-0.5, 0.0, 0.5),
                "design_seed": 2024,
                "beta_prior_sd": 100.0,
                "prior_scale": 5.0,
                "mode": "auto",
            },
        )
        family = ExponentialFamily()
        locations = grid_locations(p["grid"], p["spacing"])
        taper = TaperSpec(spatial_range=p["taper_range"])
        beta0 = np.asarray(p["beta0"], dtype=float)
        design = np.random.default_rng(p["design_seed"]).standard_normal(
            (locations.shape[0], beta0.size)
        )
        prior = PriorSpec(
            (half_cauchy(p["prior_scale"]), half_cauchy(p["prior_scale"]))
        )
        spatial = SpatialLinearModel(
            family,
            taper,
            locations,
            design,
            theta_prior=prior,
            beta_prior_sd=p["beta_prior_sd"],
            mode=p["mode"],
        )
        theta0 = spatial.initial(p["theta0"], beta0)
        sim_chol = np.linalg.cholesky(
            spatial.kernel.full_cov(np.asarray(p["theta0"], dtype=float))
        )
        return ScenarioBundle(
            name=name,
            model=None,
            prior=prior,
            theta0=theta0,
            proposal_scale=np.array([0.15, 0.05]),
            simulate=lambda seed: simulate_gp(
                family,
                np.asarray(p["theta0"], dtype=float),
                locations,
                design=design,
                beta=beta0,
                seed=seed,
                chol=sim_chol,
            ),
            spatial=spatial,
            beta0=beta0,
        )

    if name == "toy_quadratic":
        p = _merge_defaults(
            params, {"center": (0.0,), "q_matrix": ((1.0,),), "p_matrix": None}
        )
        model = QuadraticToyModel(
            center=p["center"], q_matrix=p["q_matrix"], p_matrix=p["p_matrix"]
        )
        theta0 = model.make_params(model.center)
        prior = PriorSpec(tuple(normal(0.0, 100.0) for _ in model.param_names))
        return ScenarioBundle(
            name=name,
            model=model,
            prior=prior,
            theta0=theta0,
            proposal_scale=np.full(theta0.dim, 1.0),
            simulate=lambda seed: model.dataset(),
        )

    raise ValueError(f"unknown scenario {name!r}; choose from {SCENARIOS}")


# ---------------------------------------------------------------------------
# Experiment configuration and rows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    scenario_params: dict = field(default_factory=dict)
    n_datasets: int = DEFAULT_N_DATASETS
    alpha_grid: tuple = DEFAULT_ALPHA_GRID
    methods: tuple = ("raw", "ofs")
    combos: tuple = (("plugin", "plugin"),)
    curvature_combo: object = "all"  # "all" or an index into combos
    iterations: int = DEFAULT_ITERATIONS
    burn_in: int = DEFAULT_BURN_IN
    thin: int = 1
    bootstrap_k: int = 500
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.n_datasets < 1:
            raise ValueError("n_datasets must be at least 1")
        for alpha in self.alpha_grid:
            if not 0.0 < alpha < 1.0:
                raise ValueError(f"alpha {alpha} outside (0, 1)")
        for method in self.methods:
            if method not in METHODS:
                raise ValueError(f"unknown method {method!r}")
        for p_m, q_m in self.combos:
            if p_m not in ("moment", "plugin", "bootstrap"):
                raise ValueError(f"unknown p_method {p_m!r}")
            if q_m not in ("chain_cov", "hessian", "plugin"):
                raise ValueError(f"unknown q_method {q_m!r}")
        if self.curvature_combo != "all":
            if not 0 <= int(self.curvature_combo) < len(self.combos):
                raise ValueError("curvature_combo index out of range")


@dataclass(frozen=True)
class CoverageRow:
    scenario: str
    coordinate: str
    method: str
    p_method: str
    q_method: str
    nominal: float
    empirical: float
    mc_stderr: float
    n_effective: int
    failures: int


@dataclass(frozen=True)
class CoverageTable:
    rows: tuple

    def __len__(self):
        return len(self.rows)

    def select(self, **criteria):
        out = [
            r
            for r in self.rows
            if all(getattr(r, key) == value for key, value in criteria.items())
        ]
        return CoverageTable(tuple(out))

    def single(self, **criteria):
        rows = self.select(**criteria).rows
        if len(rows) != 1:
            raise ValueError(f"expected one row for {criteria}, found {len(rows)}")
        return rows[0]


def mc_stderr(p_hat, n):
    """Binomial Monte Carlo standard error sqrt(p (1-p) / n)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return math.sqrt(p_hat * (1.0 - p_hat) / n)


# ---------------------------------------------------------------------------
# Per-dataset tasks
# ---------------------------------------------------------------------------

def _chain_config(config, bundle, seed):
    return ChainConfig(
        iterations=config.iterations,
        burn_in=config.burn_in,
        initial=bundle.theta0,
        proposal_scale=bundle.proposal_scale,
        thin=config.thin,
        adapt=AdaptConfig(),
        seed=seed,
    )


def _covers(chain, theta0, alpha_grid):
    out = {}
    for name in theta0.names:
        truth = theta0.get(name)
        for alpha in alpha_grid:
            interval = credible_interval(chain, name, alpha)
            out[(name, alpha)] = bool(interval.covers(truth))
    return out


def _curvature_combos(config):
    if config.curvature_combo == "all":
        return set(range(len(config.combos)))
    return {int(config.curvature_combo)}


def _coverage_task(args):
    config, k = args
    bundle = build_scenario(config.scenario, config.scenario_params)
    result = {"k": k}
    try:
        data = bundle.simulate(sub_seed(config.master_seed, k, 0))
        if bundle.spatial is not None:
            result["records"] = _gibbs_dataset(config, bundle, data, k)
        else:
            result["records"] = _metropolis_dataset(config, bundle, data, k)
    except OfsError as err:
        result["dataset_failure"] = f"{type(err).__name__}: {err}"
    return result


def _metropolis_dataset(config, bundle, data, k):
    records = {}
    chain = rw_metropolis(
        bundle.model, bundle.prior, data, _chain_config(config, bundle, sub_seed(config.master_seed, k, 1))
    )
    theta_qb = quasi_bayes_estimate(chain)
    if "raw" in config.methods:
        records[("raw", "", "")] = _covers(chain, bundle.theta0, config.alpha_grid)
    curvature_set = _curvature_combos(config)
    for c_idx, (p_m, q_m) in enumerate(config.combos):
        try:
            estimate = estimate_sandwich(
                bundle.model,
                data,
                theta_qb,
                p_method=p_m,
                q_method=q_m,
                chain=chain,
                bootstrap_k=config.bootstrap_k,
                seed=sub_seed(config.master_seed, k, 2, c_idx),
                provenance=f"dataset {k}",
            )
        except _ESTIMATION_ERRORS as err:
            if "ofs" in config.methods:
                records[("ofs", p_m, q_m)] = f"failed: {err}"
            if "curvature" in config.methods and c_idx in curvature_set:
                records[("curvature", p_m, q_m)] = f"failed: {err}"
            continue
        if "ofs" in config.methods:
            try:
                adjusted = ofs_adjust(chain, assemble_omega(estimate, theta_qb))
                records[("ofs", p_m, q_m)] = _covers(
                    adjusted, bundle.theta0, config.alpha_grid
                )
            except _ESTIMATION_ERRORS as err:
                records[("ofs", p_m, q_m)] = f"failed: {err}"
        if "curvature" in config.methods and c_idx in curvature_set:
            try:
                transform = curvature_matrix(estimate, theta_qb)
                curv_chain = curvature_metropolis(
                    bundle.model,
                    bundle.prior,
                    data,
                    theta_qb,
                    transform,
                    _chain_config(config, bundle, sub_seed(config.master_seed, k, 3, c_idx)),
                )
                records[("curvature", p_m, q_m)] = _covers(
                    curv_chain, bundle.theta0, config.alpha_grid
                )
            except (_ESTIMATION_ERRORS + (OfsError,)) as err:
                records[("curvature", p_m, q_m)] = f"failed: {err}"
    return records


def _gibbs_dataset(config, bundle, data, k):
    records = {}
    spatial = bundle.spatial
    cfg_raw = ChainConfig(
        iterations=config.iterations,
        burn_in=config.burn_in,
        initial=bundle.theta0,
        proposal_scale=np.concatenate(
            [bundle.proposal_scale, np.ones(spatial.q)]
        ),
        thin=config.thin,
        adapt=AdaptConfig(),
        seed=sub_seed(config.master_seed, k, 1),
    )
    cfg_adj = ChainConfig(
        iterations=config.iterations,
        burn_in=config.burn_in,
        initial=bundle.theta0,
        proposal_scale=cfg_raw.proposal_scale,
        thin=config.thin,
        adapt=AdaptConfig(),
        seed=sub_seed(config.master_seed, k, 2),
    )
    raw, adjusted, _ = spatial.two_pass(data, cfg_raw, cfg_adj)
    if "raw" in config.methods:
        records[("raw", "", "")] = _covers(raw, bundle.theta0, config.alpha_grid)
    if "ofs" in config.methods:
        for p_m, q_m in config.combos:
            records[("ofs", p_m, q_m)] = _covers(
                adjusted, bundle.theta0, config.alpha_grid
            )
    return records


# ---------------------------------------------------------------------------
# Experiment driver
# ---------------------------------------------------------------------------

def run_coverage_experiment(config):
    """Run the full simulation study; deterministic given the master seed."""
    bundle = build_scenario(config.scenario, config.scenario_params)
    tasks = [(config, k) for k in range(config.n_datasets)]
    workers = max(1, int(config.workers))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            raw_results = list(pool.map(_coverage_task, tasks, chunksize=1))
    else:
        raw_results = [_coverage_task(t) for t in tasks]
    raw_results.sort(key=lambda r: r["k"])

    keys = []
    if "raw" in config.methods:
        for p_m, q_m in config.combos:
            keys.append(("raw", p_m, q_m))
    curvature_set = _curvature_combos(config)
    for c_idx, (p_m, q_m) in enumerate(config.combos):
        if "ofs" in config.methods:
            keys.append(("ofs", p_m, q_m))
        if "curvature" in config.methods and c_idx in curvature_set:
            keys.append(("curvature", p_m, q_m))

    coords = bundle.theta0.names
    tallies = {
        key: {
            "n": 0,
            "failures": 0,
            "covers": {(c, a): 0 for c in coords for a in config.alpha_grid},
        }
        for key in keys
    }
    for result in raw_results:
        if "dataset_failure" in result:
            for key in keys:
                tallies[key]["failures"] += 1
            continue
        records = result["records"]
        for key in keys:
            method, p_m, q_m = key
            rec_key = ("raw", "", "") if method == "raw" else key
            rec = records.get(rec_key)
            if rec is None or isinstance(rec, str):
                tallies[key]["failures"] += 1
                continue
            tallies[key]["n"] += 1
            for ck, covered in rec.items():
                tallies[key]["covers"][ck] += int(covered)

    rows = []
    for key in keys:
        method, p_m, q_m = key
        tally = tallies[key]
        for coord in coords:
            for alpha in config.alpha_grid:
                n_eff = tally["n"]
                covered = tally["covers"][(coord, alpha)]
                empirical = covered / n_eff if n_eff else float("nan")
                rows.append(
                    CoverageRow(
                        scenario=config.scenario,
                        coordinate=coord,
                        method=method,
                        p_method=p_m,
                        q_method=q_m,
                        nominal=1.0 - alpha,
                        empirical=empirical,
                        mc_stderr=mc_stderr(empirical, n_eff) if n_eff else float("nan"),
                        n_effective=n_eff,
                        failures=tally["failures"],
                    )
                )
    return CoverageTable(tuple(rows))


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

CSV_COLUMNS = (
    "scenario",
    "coordinate",
    "method",
    "p_method",
    "q_method",
    "nominal",
    "empirical",
    "mc_stderr",
    "n_effective",
    "failures",
)


def write_coverage_csv(table, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in table.rows:
            writer.writerow(
                [
                    r.scenario,
                    r.coordinate,
                    r.method,
                    r.p_method,
                    r.q_method,
                    repr(r.nominal),
                    repr(r.empirical),
                    repr(r.mc_stderr),
                    r.n_effective,
                    r.failures,
                ]
            )
    return path


def read_coverage_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected coverage CSV header {header}")
        for rec in reader:
            rows.append(
                CoverageRow(
                    scenario=rec[0],
                    coordinate=rec[1],
                    method=rec[2],
                    p_method=rec[3],
                    q_method=rec[4],
                    nominal=float(rec[5]),
                    empirical=float(rec[6]),
                    mc_stderr=float(rec[7]),
                    n_effective=int(rec[8]),
                    failures=int(rec[9]),
                )
            )
    return CoverageTable(tuple(rows))


def coverage_report(table, csv_path, curve_path=None):
    """Write the coverage table CSV and, optionally, a plot-ready curve file
    of (nominal, empirical) points per coordinate/method/estimator combo."""
    write_coverage_csv(table, csv_path)
    if curve_path is None:
        return csv_path, None
    curve_path = Path(curve_path)
    curve_path.parent.mkdir(parents=True, exist_ok=True)
    ordered = sorted(
        table.rows,
        key=lambda r: (r.coordinate, r.method, r.p_method, r.q_method, r.nominal),
    )
    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["coordinate", "method", "p_method", "q_method", "nominal", "empirical", "mc_stderr"]
        )
        for r in ordered:
            writer.writerow(
                [
                    r.coordinate,
                    r.method,
                    r.p_method,
                    r.q_method,
                    repr(r.nominal),
                    repr(r.empirical),
                    repr(r.mc_stderr),
                ]
            )
    return csv_path, curve_path
