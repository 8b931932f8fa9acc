"""Parameter vectors, datasets, priors, and the pluggable objective model.

An ObjectiveModel supplies the log objective that replaces a log likelihood
inside MCMC. Capabilities (per-replicate score, simulator, analytic P/Q) are
declared explicitly; requesting an undeclared capability raises instead of
silently falling back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import CapabilityError
from .linalg import numerical_gradient

SUPPORT_KINDS = ("real", "positive", "unit")

CAP_SCORE = "per_replicate_score"
CAP_ANALYTIC_P = "analytic_P"
CAP_ANALYTIC_Q = "analytic_Q"
CAP_SIMULATE = "simulate"


def _in_support(value, kind):
    if kind == "real":
        return True
    if kind == "positive":
        return value >= 0.0
    if kind == "unit":
        return 0.0 <= value <= 1.0
    raise ValueError(f"unknown support kind {kind!r}")


@dataclass(frozen=True)
class ParamVec:
    """Ordered, named real parameter vector with per-coordinate supports."""

    names: tuple
    values: np.ndarray
    support: tuple = ()

    def __post_init__(self):
        names = tuple(str(n) for n in self.names)
        values = np.array(self.values, dtype=float).ravel()
        support = tuple(self.support) if self.support else ("real",) * len(names)
        if len(names) != values.size:
            raise ValueError(
                f"{len(names)} names for {values.size} values"
            )
        if len(support) != len(names):
            raise ValueError("support must have one entry per coordinate")
        for kind in support:
            if kind not in SUPPORT_KINDS:
                raise ValueError(f"unknown support kind {kind!r}")
        for name, value, kind in zip(names, values, support):
            if not _in_support(value, kind):
                raise ValueError(
                    f"coordinate {name}={value:g} violates {kind} support"
                )
        values.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "support", support)

    def __len__(self):
        return len(self.names)

    @property
    def dim(self):
        return len(self.names)

    def index(self, name):
        return self.names.index(name)

    def get(self, name):
        return float(self.values[self.index(name)])

    def replace(self, values):
        """New ParamVec with the same names/support and fresh values."""
        return ParamVec(self.names, np.asarray(values, dtype=float), self.support)

    def admissible(self, values):
        """True when every entry of ``values`` lies in its declared support."""
        values = np.asarray(values, dtype=float).ravel()
        if values.size != self.dim:
            return False
        return all(
            _in_support(v, kind) for v, kind in zip(values, self.support)
        ) and bool(np.all(np.isfinite(values)))

    def as_dict(self):
        return dict(zip(self.names, self.values.tolist()))


@dataclass(frozen=True)
class Dataset:
    """Observations plus optional coordinates, times, and design matrix.

    ``observations`` is a vector for a single realization or a matrix of
    shape (replicates, locations) for replicated designs.
    """

    observations: np.ndarray
    locations: np.ndarray | None = None
    times: np.ndarray | None = None
    design: np.ndarray | None = None

    def __post_init__(self):
        obs = np.array(self.observations, dtype=float)
        if obs.ndim not in (1, 2):
            raise ValueError("observations must be a vector or a matrix")
        obs.setflags(write=False)
        object.__setattr__(self, "observations", obs)
        n_sites = obs.shape[-1]
        for attr in ("locations", "times", "design"):
            value = getattr(self, attr)
            if value is None:
                continue
            value = np.array(value, dtype=float)
            if value.shape[0] != n_sites:
                raise ValueError(
                    f"{attr} has {value.shape[0]} rows for {n_sites} sites"
                )
            value.setflags(write=False)
            object.__setattr__(self, attr, value)

    @property
    def replicate_count(self):
        return 1 if self.observations.ndim == 1 else self.observations.shape[0]

    @property
    def n_sites(self):
        return self.observations.shape[-1]

    def replicate(self, index):
        """Row ``index`` as a vector; a single realization is replicate 0."""
        if self.observations.ndim == 1:
            if index != 0:
                raise IndexError("single-realization dataset has one replicate")
            return self.observations
        return self.observations[index]


@dataclass(frozen=True)
class Prior:
    """One-coordinate prior: half_cauchy(scale), uniform(lo, hi),
    normal(mean, sd), or flat."""

    kind: str
    params: tuple = ()

    def log_density(self, x):
        if self.kind == "half_cauchy":
            (scale,) = self.params
            if x < 0.0:
                return -math.inf
            return math.log(2.0 / (math.pi * scale * (1.0 + (x / scale) ** 2)))
        if self.kind == "uniform":
            lo, hi = self.params
            if x < lo or x > hi:
                return -math.inf
            return -math.log(hi - lo)
        if self.kind == "normal":
            mean, sd = self.params
            z = (x - mean) / sd
            return -0.5 * z * z - math.log(sd) - 0.5 * math.log(2.0 * math.pi)
        if self.kind == "flat":
            return 0.0
        raise ValueError(f"unknown prior kind {self.kind!r}")


def half_cauchy(scale=1.0):
    if scale <= 0:
        raise ValueError("half_cauchy scale must be positive")
    return Prior("half_cauchy", (float(scale),))


def uniform(lo, hi):
    if not hi > lo:
        raise ValueError("uniform needs hi > lo")
    return Prior("uniform", (float(lo), float(hi)))


def normal(mean=0.0, sd=1.0):
    if sd <= 0:
        raise ValueError("normal sd must be positive")
    return Prior("normal", (float(mean), float(sd)))


def flat():
    return Prior("flat")


@dataclass(frozen=True)
class PriorSpec:
    """Independent per-coordinate priors, keyed positionally."""

    priors: tuple

    def __post_init__(self):
        object.__setattr__(self, "priors", tuple(self.priors))
        for p in self.priors:
            if not isinstance(p, Prior):
                raise TypeError("PriorSpec entries must be Prior instances")

    @property
    def dim(self):
        return len(self.priors)


def log_prior(prior, theta):
    """Sum of per-coordinate log prior densities; -inf outside support."""
    if prior.dim != theta.dim:
        raise ValueError(
            f"prior has {prior.dim} coordinates, theta has {theta.dim}"
        )
    total = 0.0
    for p, x in zip(prior.priors, theta.values):
        term = p.log_density(float(x))
        if term == -math.inf:
            return -math.inf
        total += term
    return total


class ObjectiveModel:
    """Base class for pluggable quasi-likelihood objective functions.

    Subclasses implement ``log_objective`` and may declare extra
    capabilities by overriding the corresponding method and adding its flag
    to ``capabilities``.
    """

    capabilities: frozenset = frozenset()

    # Parameter metadata so scenario code can build ParamVecs.
    param_names: tuple = ()
    param_support: tuple = ()

    def make_params(self, values):
        return ParamVec(self.param_names, values, self.param_support)

    def log_objective(self, theta, data):
        raise NotImplementedError

    def has(self, capability):
        return capability in self.capabilities

    def require(self, capability, estimator):
        if not self.has(capability):
            raise CapabilityError(
                f"{estimator} requires the {capability!r} capability, which "
                f"{type(self).__name__} does not declare"
            )

    def score(self, theta, data, replicate_index):
        """Gradient of the log objective restricted to one replicate."""
        self.require(CAP_SCORE, "score")
        raise NotImplementedError

    def simulate(self, theta, seed):
        """Draw a full dataset from the model at theta, deterministically."""
        self.require(CAP_SIMULATE, "simulate")
        raise NotImplementedError

    def analytic_P(self, theta):
        """Score covariance on the total-data scale."""
        self.require(CAP_ANALYTIC_P, "analytic_P")
        raise NotImplementedError

    def analytic_Q(self, theta):
        """Expected negative Hessian on the total-data scale."""
        self.require(CAP_ANALYTIC_Q, "analytic_Q")
        raise NotImplementedError

    def total_score(self, theta, data, h=None):
        """Full-data gradient of the log objective at theta.

        Sums per-replicate scores when declared, otherwise falls back to
        central finite differences (admissible per the estimator contracts).
        """
        if self.has(CAP_SCORE):
            total = np.zeros(theta.dim)
            for r in range(data.replicate_count):
                total += self.score(theta, data, r)
            return total
        return numerical_gradient(
            lambda v: self.log_objective(theta.replace(v), data),
            theta.values,
            h=h,
        )


def log_quasi_posterior(model, prior, theta, data):
    """log objective + log prior; -inf outside prior support, error on model bugs."""
    lp = log_prior(prior, theta)
    if lp == -math.inf:
        return -math.inf
    lobj = float(model.log_objective(theta, data))
    if not np.isfinite(lobj):
        raise ValueError(
            f"log_objective returned non-finite value {lobj} at in-support "
            f"theta {theta.values.tolist()}; this indicates a model bug"
        )
    return lobj + lp


def log_quasi_posterior_at(model, prior, template, values, data):
    """log_quasi_posterior at raw coordinate values.

    Returns -inf (rather than raising) when ``values`` violates the
    template's declared support, so samplers can reject out-of-support
    proposals without constructing an invalid ParamVec.
    """
    if not template.admissible(values):
        return -math.inf
    return log_quasi_posterior(model, prior, template.replace(values), data)
