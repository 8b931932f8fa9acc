"""Block Gibbs sampling with optional within-sampler adjustment hooks.

Quasi blocks (those whose full conditional involves the quasi objective)
are updated by random-walk Metropolis; conjugate blocks draw exactly from
a Gaussian full conditional. The adjusted variants transform each quasi
block draw before recording it and before any downstream conditional sees
it; adjusted values that leave the declared support reject that scan's
block draw (counted, never clamped).

Each quasi block's Metropolis kernel evolves on the raw (untransformed)
draw so the block keeps targeting its own full conditional; the adjusted
copy is what the rest of the scan and the recorded chain observe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import EstimationError, NotPositiveDefiniteError, SamplerDiagnosticError
from .samplers import Chain, _adapt_step, adapt_proposal

UPDATE_KINDS = ("metropolis_quasi", "conjugate_draw")


@dataclass(frozen=True)
class GibbsBlockSpec:
    """One block of the partitioned parameter vector.

    log_conditional(full_values, data) evaluates the block's conditional
    log density with the block's candidate already substituted into
    ``full_values``. conjugate(full_values, data) returns (mean, cov) of a
    Gaussian full conditional.
    """

    name: str
    indices: tuple
    kind: str
    log_conditional: object = None
    conjugate: object = None
    proposal_scale: float | np.ndarray = 1.0
    quasi: bool = False

    def __post_init__(self):
        if self.kind not in UPDATE_KINDS:
            raise ValueError(f"unknown block update kind {self.kind!r}")
        indices = tuple(int(i) for i in self.indices)
        if len(indices) == 0 or len(set(indices)) != len(indices):
            raise ValueError("block indices must be non-empty and distinct")
        if self.kind == "metropolis_quasi" and self.log_conditional is None:
            raise ValueError(f"block {self.name!r} needs a log_conditional")
        if self.kind == "conjugate_draw" and self.conjugate is None:
            raise ValueError(f"block {self.name!r} needs a conjugate callback")
        object.__setattr__(self, "indices", indices)

    @property
    def dim(self):
        return len(self.indices)

    def scale_vector(self):
        scale = np.asarray(self.proposal_scale, dtype=float).ravel()
        if scale.size == 1:
            return np.full(self.dim, float(scale[0]))
        if scale.size != self.dim:
            raise ValueError(f"block {self.name!r} proposal_scale length mismatch")
        return scale.copy()


def _check_partition(blocks, dim):
    covered = sorted(i for b in blocks for i in b.indices)
    if covered != list(range(dim)):
        raise ValueError(
            f"blocks must partition all {dim} coordinates, got indices {covered}"
        )
    names = [b.name for b in blocks]
    if len(set(names)) != len(names):
        raise ValueError("block names must be unique")


class _BlockState:
    """Per-block Metropolis bookkeeping (adaptation and raw draw)."""

    def __init__(self, block, initial_values, adapt):
        self.block = block
        self.scale = block.scale_vector()
        self.target = adapt.target_for(block.dim)
        self.log_factor = 0.0
        self.window_index = 0
        self.window_accepts = 0
        self.window_finite = 0
        self.accepted = 0
        self.proposals = 0
        self.raw = initial_values[list(block.indices)].copy()


def _run_gibbs(blocks, data, config, adjust_provider=None, adjusted_flag="raw"):
    template = config.initial
    dim = template.dim
    _check_partition(blocks, dim)
    rng = np.random.default_rng(config.seed)
    adapt = config.adapt
    window = max(1, adapt.window)

    state = template.values.copy()
    if not template.admissible(state):
        raise ValueError("initial point violates parameter support")
    block_states = {
        b.name: _BlockState(b, state, adapt)
        for b in blocks
        if b.kind == "metropolis_quasi"
    }
    violations = 0

    retained = np.empty((config.retained(), dim))
    retained_log = np.empty(config.retained())
    accepted = 0
    proposals = 0
    row = 0

    for it in range(config.iterations):
        scan_log = 0.0
        for block in blocks:
            idx = list(block.indices)
            if block.kind == "conjugate_draw":
                mean, cov = block.conjugate(state, data)
                mean = np.asarray(mean, dtype=float).ravel()
                cov = np.asarray(cov, dtype=float)
                try:
                    chol = np.linalg.cholesky(cov)
                except np.linalg.LinAlgError as err:
                    raise NotPositiveDefiniteError(
                        f"conjugate conditional covariance for block "
                        f"{block.name!r} is not positive definite"
                    ) from err
                z = rng.standard_normal(block.dim)
                draw = mean + chol @ z
                candidate = state.copy()
                candidate[idx] = draw
                if not template.admissible(candidate):
                    raise ValueError(
                        f"conjugate draw for block {block.name!r} left the "
                        "declared parameter support"
                    )
                state = candidate
                scan_log += (
                    -0.5 * float(z @ z)
                    - float(np.log(np.diag(chol)).sum())
                    - 0.5 * block.dim * math.log(2.0 * math.pi)
                )
                continue

            bs = block_states[block.name]
            z = rng.standard_normal(block.dim)
            u = rng.random()
            proposals += 1
            bs.proposals += 1

            current_full = state.copy()
            current_full[idx] = bs.raw
            if template.admissible(current_full):
                lp_cur = block.log_conditional(current_full, data)
            else:
                lp_cur = -math.inf
            proposal = bs.raw + math.exp(bs.log_factor) * bs.scale * z
            proposal_full = state.copy()
            proposal_full[idx] = proposal
            if template.admissible(proposal_full):
                lp_prop = block.log_conditional(proposal_full, data)
            else:
                lp_prop = -math.inf
            if np.isfinite(lp_prop):
                bs.window_finite += 1
            delta = lp_prop - lp_cur
            if (np.isfinite(lp_prop) and delta >= 0.0) or u < math.exp(
                delta if np.isfinite(delta) else -math.inf
            ):
                new_raw = proposal
                accepted += 1
                bs.window_accepts += 1
                bs.accepted += 1
                scan_log += lp_prop
            else:
                new_raw = bs.raw
                scan_log += lp_cur if np.isfinite(lp_cur) else 0.0

            adjust = (
                adjust_provider(block, state, it) if adjust_provider is not None else None
            )
            if adjust is None:
                bs.raw = new_raw
                state[idx] = new_raw
            else:
                center, omega = adjust
                if omega is None:
                    bs.raw = new_raw
                    state[idx] = new_raw
                else:
                    transformed = center + omega @ (new_raw - center)
                    candidate = state.copy()
                    candidate[idx] = transformed
                    if template.admissible(candidate):
                        bs.raw = new_raw
                        state = candidate
                    else:
                        # Clamp-free rejection: keep the previous block value.
                        violations += 1

            adapting = adapt.enabled and it < config.burn_in
            if adapting and (it + 1) % window == 0:
                bs.window_index += 1
                if bs.window_finite == 0:
                    raise SamplerDiagnosticError(
                        f"block {block.name!r}: no finite conditional "
                        f"evaluations in adaptation window {bs.window_index}"
                    )
                if bs.window_accepts == 0:
                    raise SamplerDiagnosticError(
                        f"block {block.name!r}: all proposals rejected in "
                        f"adaptation window {bs.window_index}"
                    )
                bs.log_factor = adapt_proposal(
                    bs.log_factor,
                    bs.window_accepts / window,
                    bs.target,
                    _adapt_step(bs.window_index),
                )
                bs.window_accepts = 0
                bs.window_finite = 0

        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            retained[row] = state
            retained_log[row] = scan_log
            row += 1

    return Chain(
        names=template.names,
        support=template.support,
        draws=retained,
        log_values=retained_log,
        acceptance_rate=accepted / proposals if proposals else 0.0,
        config=config,
        adjusted=adjusted_flag,
        support_violations=violations,
        block_acceptance=tuple(
            (name, bs.accepted / bs.proposals if bs.proposals else 0.0)
            for name, bs in block_states.items()
        ),
    )


def gibbs_run(blocks, data, config):
    """Systematic-scan Gibbs sampler without adjustment."""
    return _run_gibbs(blocks, data, config)


def marginal_ofs_gibbs(blocks, omega_map, theta_qb, data, config):
    """Gibbs with a constant per-block adjustment applied inside each scan.

    ``omega_map`` maps quasi-block names to AdjustmentMatrix objects whose
    centers are the block coordinates of the unadjusted-run estimate
    ``theta_qb``. Every quasi block must have an entry.
    """
    quasi_names = {b.name for b in blocks if b.quasi}
    missing = quasi_names - set(omega_map)
    if missing:
        raise ValueError(f"omega_map missing quasi blocks: {sorted(missing)}")
    qb = np.asarray(theta_qb.values, dtype=float)
    centers = {}
    matrices = {}
    for block in blocks:
        if block.name not in omega_map:
            continue
        adj = omega_map[block.name]
        omega = np.asarray(adj.omega, dtype=float)
        center = np.asarray(adj.center.values, dtype=float)
        if center.size != block.dim:
            center = qb[list(block.indices)]
        # Exact identity adjustments are skipped so the trajectory matches
        # the unadjusted sampler bitwise.
        matrices[block.name] = None if np.array_equal(omega, np.eye(block.dim)) else omega
        centers[block.name] = center

    def provider(block, state, iteration):
        if not block.quasi or block.name not in matrices:
            return None
        return centers[block.name], matrices[block.name]

    return _run_gibbs(blocks, data, config, provider, adjusted_flag="ofs")


def conditional_ofs_gibbs(blocks, data, config, omega_estimator):
    """Gibbs with the block adjustment re-estimated at every iteration.

    ``omega_estimator(block, full_values, data, iteration)`` returns an
    AdjustmentMatrix for the block given the current values of the other
    coordinates. Estimation failures abort with the iteration index.
    """

    def provider(block, state, iteration):
        if not block.quasi:
            return None
        try:
            adj = omega_estimator(block, state, data, iteration)
        except Exception as err:
            raise EstimationError(
                f"conditional adjustment estimation failed for block "
                f"{block.name!r} at iteration {iteration}: {err}"
            ) from err
        omega = np.asarray(adj.omega, dtype=float)
        center = np.asarray(adj.center.values, dtype=float)
        if np.array_equal(omega, np.eye(block.dim)):
            return center, None
        return center, omega

    return _run_gibbs(blocks, data, config, provider, adjusted_flag="ofs")
