"""Random-walk Metropolis samplers for quasi-posteriors.

Both the plain and the curvature-adjusted sampler share one loop so that an
identity adjustment reproduces the plain trajectory bitwise. Every sampler
is a pure function of its inputs and the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import SamplerDiagnosticError
from .model import ParamVec, log_prior, log_quasi_posterior_at

TARGET_ACCEPTANCE_MULTIVARIATE = 0.234
TARGET_ACCEPTANCE_UNIVARIATE = 0.44


def derive_seed(master_seed, index):
    """Counter-based seed split: independent stream for task ``index``."""
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))


def sub_seed(master_seed, *key):
    """Deterministic 64-bit integer seed for the task addressed by ``key``."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in key))
    lo, hi = seq.generate_state(2)
    return (int(hi) << 32) | int(lo)


@dataclass(frozen=True)
class AdaptConfig:
    enabled: bool = True
    target_acceptance: float | None = None  # None: 0.44 if p == 1 else 0.234
    window: int = 100

    def target_for(self, dim):
        if self.target_acceptance is not None:
            return self.target_acceptance
        return (
            TARGET_ACCEPTANCE_UNIVARIATE
            if dim == 1
            else TARGET_ACCEPTANCE_MULTIVARIATE
        )


@dataclass(frozen=True)
class ChainConfig:
    iterations: int
    burn_in: int
    initial: ParamVec
    proposal_scale: float | np.ndarray = 1.0
    thin: int = 1
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    seed: int = 0

    def __post_init__(self):
        if self.burn_in < 0 or self.burn_in >= self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        scale = np.asarray(self.proposal_scale, dtype=float)
        if np.any(scale <= 0):
            raise ValueError("proposal_scale must be positive")

    def scale_vector(self):
        scale = np.asarray(self.proposal_scale, dtype=float).ravel()
        if scale.size == 1:
            return np.full(self.initial.dim, float(scale[0]))
        if scale.size != self.initial.dim:
            raise ValueError("proposal_scale length must match dimension")
        return scale.copy()

    def retained(self):
        return -(-(self.iterations - self.burn_in) // self.thin)


@dataclass(frozen=True)
class Chain:
    """Retained MCMC draws plus log values and acceptance bookkeeping."""

    names: tuple
    support: tuple
    draws: np.ndarray
    log_values: np.ndarray
    acceptance_rate: float
    config: ChainConfig
    adjusted: str = "raw"  # raw | ofs | curvature
    support_violations: int = 0
    block_acceptance: tuple = ()  # ((block name, rate), ...) for Gibbs chains

    def __post_init__(self):
        draws = np.asarray(self.draws, dtype=float)
        draws.setflags(write=False)
        object.__setattr__(self, "draws", draws)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "support", tuple(self.support))
        object.__setattr__(
            self,
            "block_acceptance",
            tuple((str(n), float(r)) for n, r in self.block_acceptance),
        )

    def __len__(self):
        return self.draws.shape[0]

    @property
    def dim(self):
        return self.draws.shape[1]

    def column(self, name):
        return self.draws[:, self.names.index(name)]

    def template(self):
        return ParamVec(self.names, self.draws[0], self.support)


def adapt_proposal(log_factor, recent_acceptance, target, step):
    """Robbins-Monro update of the log proposal-scale factor."""
    return log_factor + step * (recent_acceptance - target)


def _adapt_step(window_index):
    # Large early steps recover quickly from a badly scaled start; the decay
    # keeps later windows from over-correcting.
    return min(2.0, 4.0 / math.sqrt(window_index))


def _run_metropolis(log_target, config, adjusted_flag, violation_counter=None):
    """Shared Metropolis loop.

    ``log_target(values)`` returns the log target density at raw coordinate
    values (-inf to reject). Consumes exactly dim+1 random variates per
    iteration so variants with the same seed stay aligned.
    """
    template = config.initial
    p = template.dim
    rng = np.random.default_rng(config.seed)
    base_scale = config.scale_vector()
    target_rate = config.adapt.target_for(p)
    window = max(1, config.adapt.window)

    current = template.values.copy()
    current_log = log_target(current)
    if not np.isfinite(current_log):
        raise ValueError(
            "initial point has non-finite log quasi-posterior "
            f"({current_log}) at {current.tolist()}"
        )

    retained = np.empty((config.retained(), p))
    retained_log = np.empty(config.retained())
    accepted_total = 0
    log_factor = 0.0
    window_index = 0
    window_accepts = 0
    window_finite = 0
    row = 0

    for it in range(config.iterations):
        z = rng.standard_normal(p)
        u = rng.random()
        proposal = current + math.exp(log_factor) * base_scale * z
        proposal_log = log_target(proposal)
        if np.isfinite(proposal_log):
            window_finite += 1
        delta = proposal_log - current_log
        if delta >= 0.0 or u < math.exp(delta):
            current = proposal
            current_log = proposal_log
            accepted_total += 1
            window_accepts += 1

        adapting = config.adapt.enabled and it < config.burn_in
        if adapting and (it + 1) % window == 0:
            window_index += 1
            if window_finite == 0:
                raise SamplerDiagnosticError(
                    f"no finite log-target evaluations in adaptation window "
                    f"{window_index} (scale factor {math.exp(log_factor):.3g})"
                )
            if window_accepts == 0:
                raise SamplerDiagnosticError(
                    f"all proposals rejected in adaptation window "
                    f"{window_index} (scale factor {math.exp(log_factor):.3g})"
                )
            log_factor = adapt_proposal(
                log_factor,
                window_accepts / window,
                target_rate,
                _adapt_step(window_index),
            )
            window_accepts = 0
            window_finite = 0

        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            retained[row] = current
            retained_log[row] = current_log
            row += 1

    return Chain(
        names=template.names,
        support=template.support,
        draws=retained,
        log_values=retained_log,
        acceptance_rate=accepted_total / config.iterations,
        config=config,
        adjusted=adjusted_flag,
        support_violations=0 if violation_counter is None else violation_counter[0],
    )


def rw_metropolis(model, prior, data, config):
    """Gaussian random-walk Metropolis on the quasi-posterior."""
    template = config.initial

    def log_target(values):
        return log_quasi_posterior_at(model, prior, template, values, data)

    return _run_metropolis(log_target, config, "raw")


def curvature_metropolis(model, prior, data, theta_hat, omega, config):
    """Metropolis with the acceptance ratio evaluated at adjusted points.

    The objective is evaluated at ``theta_hat + omega (v - theta_hat)``
    while the prior is evaluated at the untransformed point. ``omega`` may
    be an AdjustmentMatrix or a plain square matrix. Transformed points that
    leave the parameter support reject the proposal and are counted.
    """
    template = config.initial
    matrix = np.asarray(getattr(omega, "omega", omega), dtype=float)
    center = np.asarray(theta_hat.values, dtype=float)
    if matrix.shape != (template.dim, template.dim):
        raise ValueError(
            f"adjustment matrix shape {matrix.shape} does not match "
            f"dimension {template.dim}"
        )
    identity = np.array_equal(matrix, np.eye(template.dim))
    violations = [0]

    def log_target(values):
        if not template.admissible(values):
            return -math.inf
        lp = log_prior(prior, template.replace(values))
        if lp == -math.inf:
            return -math.inf
        if identity:
            transformed = values
        else:
            transformed = center + matrix @ (np.asarray(values) - center)
            if not template.admissible(transformed):
                violations[0] += 1
                return -math.inf
        lobj = float(model.log_objective(template.replace(transformed), data))
        if not np.isfinite(lobj):
            raise ValueError(
                f"log_objective returned non-finite value {lobj} at "
                f"adjusted point {np.asarray(transformed).tolist()}"
            )
        return lobj + lp

    return _run_metropolis(log_target, config, "curvature", violations)


def quasi_bayes_estimate(chain):
    """Coordinatewise posterior mean (squared-error-loss point estimate)."""
    if len(chain) == 0:
        raise ValueError("cannot take the quasi-Bayes estimate of an empty chain")
    mean = chain.draws.mean(axis=0)
    return ParamVec(chain.names, mean, chain.support)
