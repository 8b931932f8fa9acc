"""Sandwich-component estimation and the open-faced sandwich adjustment.

Every P and Q estimate is expressed on the total-data scale: Q as minus the
Hessian of the full log objective, P as the covariance of the full-data
score. The moment estimator of P is rescaled internally so that mixing
estimator routes cannot corrupt the adjustment matrix by powers of the
replicate count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import linalg
from .exceptions import EstimationError
from .model import CAP_ANALYTIC_P, CAP_ANALYTIC_Q, CAP_SCORE, CAP_SIMULATE, ParamVec
from .samplers import Chain, derive_seed

P_METHODS = ("moment", "plugin", "bootstrap")
Q_METHODS = ("chain_cov", "hessian", "plugin")

DEFAULT_BOOTSTRAP_K = 500


@dataclass(frozen=True)
class SandwichEstimate:
    """A (P_hat, Q_hat) pair with method labels on the total-data scale."""

    names: tuple
    p_hat: np.ndarray
    q_hat: np.ndarray
    p_method: str
    q_method: str
    scale: str = "total_data"
    provenance: str = ""

    def __post_init__(self):
        if self.p_method not in P_METHODS:
            raise ValueError(f"unknown p_method {self.p_method!r}")
        if self.q_method not in Q_METHODS:
            raise ValueError(f"unknown q_method {self.q_method!r}")
        if self.scale != "total_data":
            raise ValueError("only the total_data scale convention is supported")
        p_hat = linalg.certify_spd(self.p_hat, "P_hat")
        q_hat = linalg.certify_spd(self.q_hat, "Q_hat")
        if p_hat.shape != q_hat.shape:
            raise ValueError("P_hat and Q_hat must have the same dimension")
        if len(self.names) != p_hat.shape[0]:
            raise ValueError("names must match the matrix dimension")
        p_hat.setflags(write=False)
        q_hat.setflags(write=False)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "p_hat", p_hat)
        object.__setattr__(self, "q_hat", q_hat)

    @property
    def dim(self):
        return self.p_hat.shape[0]


@dataclass(frozen=True)
class AdjustmentMatrix:
    """A chain-adjustment matrix (not generally symmetric) with its center."""

    omega: np.ndarray
    center: ParamVec
    source: SandwichEstimate | None = None
    kind: str = "ofs"  # ofs | curvature
    excluded: tuple = ()

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=float)
        p = self.center.dim
        if omega.shape != (p, p):
            raise ValueError(
                f"omega shape {omega.shape} does not match center dimension {p}"
            )
        if not np.all(np.isfinite(omega)):
            raise ValueError("omega contains non-finite entries")
        if abs(np.linalg.det(omega)) <= 0.0:
            raise ValueError("omega must be invertible")
        if self.kind not in ("ofs", "curvature"):
            raise ValueError(f"unknown adjustment kind {self.kind!r}")
        omega.setflags(write=False)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "excluded", tuple(self.excluded))

    @property
    def dim(self):
        return self.omega.shape[0]

    def inverse(self):
        return np.linalg.inv(self.omega)


@dataclass(frozen=True)
class CredibleInterval:
    coordinate: str
    level: float
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise ValueError("interval endpoints out of order")

    def covers(self, value):
        return self.lo <= value <= self.hi

    @property
    def width(self):
        return self.hi - self.lo


def q_from_chain(chain):
    """Q_hat I: inverse of the sample covariance of an unadjusted chain."""
    if chain.adjusted != "raw":
        raise ValueError(
            "q_from_chain requires an unadjusted quasi-posterior chain, got "
            f"adjusted={chain.adjusted!r}"
        )
    if len(chain) < chain.dim + 1:
        raise ValueError(
            f"chain length {len(chain)} too short for dimension {chain.dim}"
        )
    cov = linalg.sample_covariance(chain.draws)
    return linalg.spd_inverse(cov)


def q_from_hessian(model, data, theta_hat, prior=None, h=None):
    """Q_hat II: minus the numerical Hessian of the log objective at theta_hat.

    When ``prior`` is supplied its log density is included, matching the
    curvature of the log quasi-posterior rather than the bare objective.
    """
    template = theta_hat

    def f(values):
        theta = template.replace(values)
        value = float(model.log_objective(theta, data))
        if prior is not None:
            from .model import log_prior

            value += log_prior(prior, theta)
        return value

    hess = linalg.numerical_hessian(f, theta_hat.values, h=h)
    q_hat = linalg.symmetrize(-hess)
    eigvals = np.linalg.eigvalsh(q_hat)
    if eigvals[0] <= linalg.PD_RTOL * max(eigvals[-1], 0.0):
        raise EstimationError(
            "Hessian-based Q estimate is not positive definite; eigenvalues "
            f"of -H are {eigvals.tolist()}"
        )
    return q_hat


def q_plugin(model, theta_hat):
    """Q_hat III: the model's analytic Q formula evaluated at theta_hat."""
    model.require(CAP_ANALYTIC_Q, "q_plugin")
    return linalg.certify_spd(np.asarray(model.analytic_Q(theta_hat), float), "Q")


def p_plugin(model, theta_hat):
    """P_hat II: the model's analytic P formula evaluated at theta_hat."""
    model.require(CAP_ANALYTIC_P, "p_plugin")
    return linalg.certify_spd(np.asarray(model.analytic_P(theta_hat), float), "P")


def p_moment(model, data, theta_hat):
    """P_hat I: moment estimator from per-replicate scores, total-data scale.

    The per-replicate average (1/n) sum s_i s_i' estimates the single-
    replicate score covariance; multiplying by n expresses it on the
    total-data scale shared by every Q estimator.
    """
    model.require(CAP_SCORE, "p_moment")
    n = data.replicate_count
    if n < 2:
        raise EstimationError(
            "p_moment needs independent replicates (replicate_count >= 2); a "
            "single stochastic-process realization does not provide a viable "
            "moment estimate of P"
        )
    dim = theta_hat.dim
    acc = np.zeros((dim, dim))
    for r in range(n):
        s = np.asarray(model.score(theta_hat, data, r), dtype=float)
        acc += np.outer(s, s)
    # acc / n is the per-replicate estimate; times n again is total scale.
    return linalg.symmetrize(acc)


def _bootstrap_gram(args):
    model, theta_hat, seed = args
    sim = model.simulate(theta_hat, seed)
    g = model.total_score(theta_hat, sim)
    return np.outer(g, g)


def p_bootstrap(model, theta_hat, k=DEFAULT_BOOTSTRAP_K, seed=0, workers=1):
    """P_hat boot: parametric bootstrap of the full-data score covariance.

    Simulates k datasets at theta_hat with seeds split from ``seed`` and
    averages the outer products of the full-data gradients (analytic when
    the model declares a score, finite differences otherwise).
    """
    model.require(CAP_SIMULATE, "p_bootstrap")
    dim = theta_hat.dim
    if k < dim + 1:
        raise ValueError(f"bootstrap needs k >= dim+1 = {dim + 1}, got {k}")
    tasks = [(model, theta_hat, derive_seed(seed, j)) for j in range(k)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            grams = list(pool.map(_bootstrap_gram, tasks, chunksize=max(1, k // (4 * workers))))
    else:
        grams = [_bootstrap_gram(t) for t in tasks]
    acc = np.zeros((dim, dim))
    for g in grams:
        acc += g
    return linalg.symmetrize(acc / k)


def _excluded_indices(names, exclude):
    indices = []
    for name in exclude:
        if name not in names:
            raise ValueError(f"excluded coordinate {name!r} not in {names}")
        indices.append(names.index(name))
    return sorted(set(indices))


def _ofs_formula(p_hat, q_hat):
    return linalg.spd_inverse(q_hat) @ linalg.spd_sqrt(p_hat) @ linalg.spd_sqrt(q_hat)


def _curvature_formula(p_hat, q_hat):
    return linalg.spd_inv_sqrt(q_hat) @ linalg.spd_inv_sqrt(p_hat) @ q_hat


def _embed_with_exclusion(formula, p_hat, q_hat, center, exclude):
    """Assemble on the kept sub-block and embed identity rows for the rest.

    Cross blocks of P and Q coupling excluded to kept coordinates are
    dropped before assembly, so excluded coordinates pass through the
    adjustment untouched.
    """
    excluded = _excluded_indices(center.names, exclude)
    dim = center.dim
    if not excluded:
        return formula(p_hat, q_hat), ()
    kept = [i for i in range(dim) if i not in excluded]
    if not kept:
        return np.eye(dim), tuple(center.names[i] for i in excluded)
    sub = np.ix_(kept, kept)
    p_kept = linalg.certify_spd(p_hat[sub], "P_hat (kept block)")
    q_kept = linalg.certify_spd(q_hat[sub], "Q_hat (kept block)")
    omega = np.eye(dim)
    omega[np.ix_(kept, kept)] = formula(p_kept, q_kept)
    return omega, tuple(center.names[i] for i in excluded)


def assemble_omega(estimate, center, exclude=()):
    """Open-faced sandwich matrix Q^{-1} P^{1/2} Q^{1/2}.

    ``exclude`` names coordinates left unadjusted: the adjustment is
    assembled on the remaining sub-block of P and Q and the excluded
    coordinates map through the identity.
    """
    if estimate.dim != center.dim:
        raise ValueError("estimate and center dimensions differ")
    omega, excluded = _embed_with_exclusion(
        _ofs_formula, estimate.p_hat, estimate.q_hat, center, exclude
    )
    return AdjustmentMatrix(
        omega=omega, center=center, source=estimate, kind="ofs", excluded=excluded
    )


def curvature_matrix(estimate, center, exclude=()):
    """Transform matrix for the curvature-adjusted sampler.

    Uses C = Q^{-1/2} P^{-1/2} Q, the inverse of the open-faced sandwich
    matrix, which satisfies C' Q C = Q P^{-1} Q exactly, so a chain whose
    objective is evaluated at the transformed points has limiting
    covariance equal to the inverse sandwich matrix.
    """
    if estimate.dim != center.dim:
        raise ValueError("estimate and center dimensions differ")
    omega, excluded = _embed_with_exclusion(
        _curvature_formula, estimate.p_hat, estimate.q_hat, center, exclude
    )
    return AdjustmentMatrix(
        omega=omega, center=center, source=estimate, kind="curvature", excluded=excluded
    )


def partial_adjustment(p_hat, q_hat, center, exclude, provenance=""):
    """Adjustment from raw P/Q matrices when only a sub-block is usable.

    For weakly identified coordinates the full plug-in Q may be singular
    or indefinite; this certifies positive definiteness only on the kept
    sub-block, leaving the excluded coordinates unadjusted.
    """
    p_hat = linalg.symmetrize(np.asarray(p_hat, dtype=float))
    q_hat = linalg.symmetrize(np.asarray(q_hat, dtype=float))
    if p_hat.shape != (center.dim, center.dim) or q_hat.shape != p_hat.shape:
        raise ValueError("P and Q must be square and match the center dimension")
    omega, excluded = _embed_with_exclusion(_ofs_formula, p_hat, q_hat, center, exclude)
    kept = [i for i in range(center.dim) if center.names[i] not in excluded]
    sub = np.ix_(kept, kept)
    source = SandwichEstimate(
        names=tuple(center.names[i] for i in kept),
        p_hat=p_hat[sub],
        q_hat=q_hat[sub],
        p_method="plugin",
        q_method="plugin",
        provenance=provenance,
    )
    return AdjustmentMatrix(
        omega=omega, center=center, source=source, kind="ofs", excluded=excluded
    )


def ofs_adjust(chain, adjustment):
    """Affine post-hoc adjustment of every retained draw.

    Draws map to center + Omega (draw - center). Adjusted draws may leave
    the declared support; they are counted and reported, never clamped.
    """
    if chain.adjusted != "raw":
        raise ValueError(
            f"refusing to adjust a chain already flagged {chain.adjusted!r}; "
            "adjusting twice is invalid"
        )
    if adjustment.dim != chain.dim:
        raise ValueError(
            f"adjustment dimension {adjustment.dim} does not match chain "
            f"dimension {chain.dim}"
        )
    if len(chain) == 0:
        raise ValueError("cannot adjust an empty chain")
    center = adjustment.center.values
    adjusted = center + (chain.draws - center) @ adjustment.omega.T
    template = chain.template()
    violations = sum(0 if template.admissible(row) else 1 for row in adjusted)
    return Chain(
        names=chain.names,
        support=chain.support,
        draws=adjusted,
        log_values=chain.log_values.copy(),
        acceptance_rate=chain.acceptance_rate,
        config=chain.config,
        adjusted="ofs",
        support_violations=int(violations),
        block_acceptance=chain.block_acceptance,
    )


def credible_interval(chain, coordinate, alpha):
    """Equi-tailed credible interval from empirical quantiles."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    column = chain.column(coordinate)
    lo = linalg.empirical_quantile(column, alpha / 2.0)
    hi = linalg.empirical_quantile(column, 1.0 - alpha / 2.0)
    return CredibleInterval(coordinate=coordinate, level=1.0 - alpha, lo=lo, hi=hi)


def estimate_sandwich(
    model,
    data,
    theta_hat,
    p_method,
    q_method,
    chain=None,
    bootstrap_k=DEFAULT_BOOTSTRAP_K,
    seed=0,
    provenance="",
    workers=1,
):
    """Dispatch to the requested estimator pair and bundle the result."""
    if q_method == "chain_cov":
        if chain is None:
            raise ValueError("q_method 'chain_cov' requires the chain")
        q_hat = q_from_chain(chain)
    elif q_method == "hessian":
        q_hat = q_from_hessian(model, data, theta_hat)
    elif q_method == "plugin":
        q_hat = q_plugin(model, theta_hat)
    else:
        raise ValueError(f"unknown q_method {q_method!r}")

    if p_method == "moment":
        p_hat = p_moment(model, data, theta_hat)
    elif p_method == "plugin":
        p_hat = p_plugin(model, theta_hat)
    elif p_method == "bootstrap":
        p_hat = p_bootstrap(model, theta_hat, k=bootstrap_k, seed=seed, workers=workers)
    else:
        raise ValueError(f"unknown p_method {p_method!r}")

    return SandwichEstimate(
        names=theta_hat.names,
        p_hat=p_hat,
        q_hat=q_hat,
        p_method=p_method,
        q_method=q_method,
        provenance=provenance,
    )


def estimate_to_dict(estimate):
    return {
        "names": list(estimate.names),
        "p_hat": estimate.p_hat.tolist(),
        "q_hat": estimate.q_hat.tolist(),
        "p_method": estimate.p_method,
        "q_method": estimate.q_method,
        "scale": estimate.scale,
        "provenance": estimate.provenance,
    }


def estimate_from_dict(doc):
    return SandwichEstimate(
        names=tuple(doc["names"]),
        p_hat=np.asarray(doc["p_hat"], dtype=float),
        q_hat=np.asarray(doc["q_hat"], dtype=float),
        p_method=doc["p_method"],
        q_method=doc["q_method"],
        scale=doc["scale"],
        provenance=doc.get("provenance", ""),
    )


def adjustment_to_dict(adjustment):
    return {
        "omega": adjustment.omega.tolist(),
        "center": {
            "names": list(adjustment.center.names),
            "values": adjustment.center.values.tolist(),
            "support": list(adjustment.center.support),
        },
        "kind": adjustment.kind,
        "excluded": list(adjustment.excluded),
        "source": None if adjustment.source is None else estimate_to_dict(adjustment.source),
    }


def adjustment_from_dict(doc):
    center = ParamVec(
        tuple(doc["center"]["names"]),
        np.asarray(doc["center"]["values"], dtype=float),
        tuple(doc["center"]["support"]),
    )
    source = None if doc.get("source") is None else estimate_from_dict(doc["source"])
    return AdjustmentMatrix(
        omega=np.asarray(doc["omega"], dtype=float),
        center=center,
        source=source,
        kind=doc.get("kind", "ofs"),
        excluded=tuple(doc.get("excluded", ())),
    )
