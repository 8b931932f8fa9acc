"""Gaussian-process objectives with covariance tapering.

The tapered log objective replaces the full Gaussian log likelihood

    -n/2 log 2pi - 1/2 log|Sigma| - 1/2 y' Sigma^{-1} y

by the sparse form with A = Sigma o T (elementwise product with a
compactly supported taper T):

    -n/2 log 2pi - 1/2 log|A| - 1/2 y' (A^{-1} o T) y.

A dense LAPACK route (Cholesky + in-place inverse) and a sparse SuperLU
route are both provided; the dense route is the reference for differential
testing and the default at desk scale.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg.lapack import dpotrf, dpotri
from scipy.sparse.linalg import splu

from .exceptions import EstimationError, NotPositiveDefiniteError
from .linalg import HESSIAN_STEP_EXPONENT, numerical_hessian, symmetrize
from .model import (
    CAP_ANALYTIC_P,
    CAP_ANALYTIC_Q,
    CAP_SIMULATE,
    Dataset,
    ObjectiveModel,
)

DENSE_SIZE_LIMIT = 600
SPARSE_FILL_LIMIT = 0.10


# ---------------------------------------------------------------------------
# Covariance families
# ---------------------------------------------------------------------------

def cov_exponential(sigma2, c, h):
    """Exponential covariance sigma2 * exp(-(c/sigma2) * h).

    The decay rate is c/sigma2, so the two parameters are coupled.
    """
    if sigma2 <= 0 or c <= 0:
        raise ValueError(f"need sigma2 > 0 and c > 0, got ({sigma2}, {c})")
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("distances must be nonnegative")
    return sigma2 * np.exp(-(c / sigma2) * h)


def cov_gneiting(sigma2, a, c, sep, h, u, alpha=1.0, gamma=0.5):
    """Nonseparable space-time covariance.

    C(h, u) = sigma2 / (a u^{2 alpha} + 1)^2
              * exp(-(c/sigma2) h^{2 gamma} / (a u^{2 alpha} + 1)^{sep*gamma})

    sep in [0, 1] controls separability: at sep = 0 the function factors
    into a purely temporal term and a purely spatial exponential term.
    """
    if sigma2 <= 0 or a <= 0 or c <= 0:
        raise ValueError(f"need sigma2, a, c > 0, got ({sigma2}, {a}, {c})")
    if not 0.0 <= sep <= 1.0:
        raise ValueError(f"separability parameter must be in [0, 1], got {sep}")
    if not (0.0 < alpha <= 1.0 and 0.0 < gamma <= 1.0):
        raise ValueError("smoothness parameters must lie in (0, 1]")
    h = np.asarray(h, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(h < 0) or np.any(u < 0):
        raise ValueError("lags must be nonnegative")
    d = a * u ** (2.0 * alpha) + 1.0
    return sigma2 / d**2 * np.exp(-(c / sigma2) * h ** (2.0 * gamma) / d ** (sep * gamma))


class ExponentialFamily:
    """Isotropic exponential covariance, theta = (sigma2, c[, nugget])."""

    def __init__(self, nugget=False):
        self.has_nugget = bool(nugget)
        base = ("sigma2", "c")
        self.names = base + (("nugget",) if self.has_nugget else ())
        self.support = ("positive",) * len(self.names)
        self.uses_time = False

    @property
    def dim(self):
        return len(self.names)

    def smooth_value(self, theta, h, u=None):
        sigma2, c = theta[0], theta[1]
        return cov_exponential(sigma2, c, h)

    def smooth_deriv(self, theta, h, u=None):
        sigma2, c = theta[0], theta[1]
        if sigma2 <= 0 or c <= 0:
            raise ValueError(f"need sigma2 > 0 and c > 0, got ({sigma2}, {c})")
        h = np.asarray(h, dtype=float)
        e = np.exp(-(c / sigma2) * h)
        d_sigma2 = e * (1.0 + (c / sigma2) * h)
        d_c = -h * e
        return np.stack([d_sigma2, d_c])


class GneitingFamily:
    """Space-time covariance of cov_gneiting with fixed smoothness.

    theta = (sigma2, a, c, sep[, nugget]); alpha and gamma are fixed at
    construction (defaults 1 and 0.5).
    """

    def __init__(self, alpha=1.0, gamma=0.5, nugget=False):
        self.alpha = float(alpha)
        self.gamma = float(gamma)
        self.has_nugget = bool(nugget)
        base = ("sigma2", "a", "c", "sep")
        self.names = base + (("nugget",) if self.has_nugget else ())
        self.support = ("positive", "positive", "positive", "unit") + (
            ("positive",) if self.has_nugget else ()
        )
        self.uses_time = True

    @property
    def dim(self):
        return len(self.names)

    def smooth_value(self, theta, h, u):
        sigma2, a, c, sep = theta[0], theta[1], theta[2], theta[3]
        return cov_gneiting(sigma2, a, c, sep, h, u, self.alpha, self.gamma)

    def smooth_deriv(self, theta, h, u):
        sigma2, a, c, sep = theta[0], theta[1], theta[2], theta[3]
        h = np.asarray(h, dtype=float)
        u = np.asarray(u, dtype=float)
        d = a * u ** (2.0 * self.alpha) + 1.0
        hg = h ** (2.0 * self.gamma)
        dpow = d ** (sep * self.gamma)
        value = sigma2 / d**2 * np.exp(-(c / sigma2) * hg / dpow)
        d_sigma2 = value / sigma2 * (1.0 + (c / sigma2) * hg / dpow)
        d_c = value * (-hg / (sigma2 * dpow))
        dd = u ** (2.0 * self.alpha)
        d_a = dd * value * (
            -2.0 / d + (c / sigma2) * sep * self.gamma * hg * d ** (-sep * self.gamma - 1.0)
        )
        d_sep = value * (c / sigma2) * self.gamma * hg * np.log(d) / dpow
        return np.stack([d_sigma2, d_a, d_c, d_sep])


# ---------------------------------------------------------------------------
# Tapers
# ---------------------------------------------------------------------------

def _wendland(d, r):
    x = np.minimum(np.asarray(d, dtype=float) / r, 1.0)
    return (1.0 - x) ** 4 * (4.0 * x + 1.0)


@dataclass(frozen=True)
class TaperSpec:
    """Compactly supported correlation taper.

    kernel 'wendland' is (1 - d/r)^4_+ (4 d/r + 1), a valid correlation in
    up to three dimensions; 'cutoff' is the indicator of d < r, useful for
    exact reductions to the untapered likelihood when r covers the domain.
    """

    spatial_range: float
    temporal_range: float | None = None
    kernel: str = "wendland"

    def __post_init__(self):
        if self.spatial_range <= 0:
            raise ValueError("spatial_range must be positive")
        if self.temporal_range is not None and self.temporal_range <= 0:
            raise ValueError("temporal_range must be positive")
        if self.kernel not in ("wendland", "cutoff"):
            raise ValueError(f"unknown taper kernel {self.kernel!r}")

    def _kernel_value(self, d, r):
        d = np.asarray(d, dtype=float)
        if self.kernel == "wendland":
            return np.where(d < r, _wendland(d, r), 0.0)
        return np.where(d < r, 1.0, 0.0)


def taper_value(spec, h, u=None):
    """Taper at spatial lag h (and temporal lag u when configured)."""
    value = spec._kernel_value(h, spec.spatial_range)
    if spec.temporal_range is not None:
        if u is None:
            raise ValueError("space-time taper needs a temporal lag")
        value = value * spec._kernel_value(u, spec.temporal_range)
    return value


# ---------------------------------------------------------------------------
# Pattern, sparse matrix, and the evaluation kernel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SparseSymMatrix:
    """Symmetric sparse values on an upper-triangle pattern (diagonal included)."""

    dim: int
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    @property
    def fill_fraction(self):
        nnz_full = 2 * self.rows.size - np.count_nonzero(self.rows == self.cols)
        return nnz_full / float(self.dim) ** 2

    def to_dense(self):
        a = np.zeros((self.dim, self.dim))
        a[self.rows, self.cols] = self.values
        a[self.cols, self.rows] = self.values
        return a

    def to_csc(self):
        off = self.rows != self.cols
        r = np.concatenate([self.rows, self.cols[off]])
        c = np.concatenate([self.cols, self.rows[off]])
        v = np.concatenate([self.values, self.values[off]])
        return sp.coo_matrix((v, (r, c)), shape=(self.dim, self.dim)).tocsc()


class TaperedKernel:
    """Precomputed taper pattern for one design; evaluates the tapered
    objective, its score, and the plug-in P/Q at any parameter value."""

    def __init__(self, family, taper, locations, times=None):
        locations = np.asarray(locations, dtype=float)
        if locations.ndim != 2:
            raise ValueError("locations must be an (n, d) array")
        n = locations.shape[0]
        if family.uses_time and times is None:
            raise ValueError(f"{type(family).__name__} needs observation times")
        if times is not None:
            times = np.asarray(times, dtype=float).ravel()
            if times.size != n:
                raise ValueError("times length must match locations")

        diff = locations[:, None, :] - locations[None, :, :]
        h = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        u = None
        if times is not None:
            u = np.abs(times[:, None] - times[None, :])
        t_full = taper_value(taper, h, u)
        iu, ju = np.triu_indices(n)
        keep = t_full[iu, ju] > 0.0
        self.family = family
        self.taper = taper
        self.locations = locations
        self.times = times
        self.n = n
        self.rows = iu[keep]
        self.cols = ju[keep]
        self.h_pat = h[self.rows, self.cols]
        self.u_pat = u[self.rows, self.cols] if u is not None else None
        self.t_pat = t_full[self.rows, self.cols]
        self.diag_mask = self.rows == self.cols
        # Off-diagonal pattern entries appear twice in full-matrix sums.
        self.weights = np.where(self.diag_mask, 1.0, 2.0)
        self._h_full = h
        self._u_full = u

    @property
    def fill_fraction(self):
        nnz_full = 2 * self.rows.size - np.count_nonzero(self.diag_mask)
        return nnz_full / float(self.n) ** 2

    # -- parameter handling -------------------------------------------------

    def _nugget(self, theta):
        return float(theta[-1]) if self.family.has_nugget else 0.0

    def _smooth(self, theta):
        return theta[: len(theta) - 1] if self.family.has_nugget else theta

    def pattern_cov(self, theta):
        """Untapered covariance values on the pattern (nugget on diagonal)."""
        vals = np.asarray(
            self.family.smooth_value(self._smooth(theta), self.h_pat, self.u_pat),
            dtype=float,
        ).copy()
        nug = self._nugget(theta)
        if nug:
            vals[self.diag_mask] += nug
        return vals

    def pattern_cov_derivs(self, theta):
        """Rows: derivative of the pattern covariance per parameter."""
        smooth = np.asarray(
            self.family.smooth_deriv(self._smooth(theta), self.h_pat, self.u_pat),
            dtype=float,
        )
        if not self.family.has_nugget:
            return smooth
        nug_row = np.where(self.diag_mask, 1.0, 0.0)[None, :]
        return np.concatenate([smooth, nug_row], axis=0)

    def tapered_values(self, theta):
        return self.pattern_cov(theta) * self.t_pat

    def sparse_matrix(self, theta):
        return SparseSymMatrix(
            dim=self.n, rows=self.rows, cols=self.cols, values=self.tapered_values(theta)
        )

    def dense_matrix(self, theta):
        return self.sparse_matrix(theta).to_dense()

    def full_cov(self, theta):
        """Dense untapered covariance matrix at theta."""
        sigma = np.asarray(
            self.family.smooth_value(self._smooth(theta), self._h_full, self._u_full),
            dtype=float,
        )
        nug = self._nugget(theta)
        if nug:
            sigma = sigma + nug * np.eye(self.n)
        return symmetrize(sigma)

    # -- factorization routes ------------------------------------------------

    def _factor_dense(self, theta):
        vals = self.tapered_values(theta)
        a = np.zeros((self.n, self.n))
        a[self.rows, self.cols] = vals
        a[self.cols, self.rows] = vals
        chol, info = dpotrf(a, lower=1, overwrite_a=1)
        if info != 0:
            raise NotPositiveDefiniteError(
                f"tapered covariance Cholesky failed at pivot {info} for "
                f"theta {np.asarray(theta).tolist()}"
            )
        logdet = 2.0 * float(np.log(np.diag(chol)).sum())
        inv, info = dpotri(chol, lower=1, overwrite_c=1)
        if info != 0:
            raise NotPositiveDefiniteError(
                f"tapered covariance inversion failed (dpotri info {info})"
            )
        # inv holds the lower triangle; pattern entries have rows <= cols.
        ainv_pat = inv[self.cols, self.rows]
        return logdet, ainv_pat, inv, "lower"

    def _factor_sparse(self, theta):
        a = self.sparse_matrix(theta).to_csc()
        try:
            lu = splu(a, permc_spec="MMD_AT_PLUS_A", options={"SymmetricMode": True})
        except RuntimeError as err:
            raise NotPositiveDefiniteError(
                f"sparse factorization failed for theta "
                f"{np.asarray(theta).tolist()}: {err}"
            ) from err
        diag_u = lu.U.diagonal()
        if np.any(diag_u == 0.0):
            raise NotPositiveDefiniteError("sparse factor has a zero pivot")
        logdet = float(np.log(np.abs(diag_u)).sum())
        inv = lu.solve(np.eye(self.n))
        inv = 0.5 * (inv + inv.T)
        ainv_pat = inv[self.rows, self.cols]
        return logdet, ainv_pat, inv, "full"

    def _route(self, mode):
        if mode == "auto":
            if self.n <= DENSE_SIZE_LIMIT or self.fill_fraction > SPARSE_FILL_LIMIT:
                return "dense"
            return "sparse"
        if mode not in ("dense", "sparse"):
            raise ValueError(f"unknown evaluation mode {mode!r}")
        return mode

    def factorize(self, theta, mode="auto"):
        """(log det A, A^{-1} on the pattern, A^{-1} storage, storage kind)."""
        if self._route(mode) == "dense":
            return self._factor_dense(theta)
        return self._factor_sparse(theta)

    # -- objective, score, plug-in P/Q ---------------------------------------

    def quad_weights(self, y):
        """Per-pattern-entry weights of the quadratic form y' (A^{-1} o T) y."""
        y = np.asarray(y, dtype=float)
        return self.weights * self.t_pat * y[self.rows] * y[self.cols]

    def loglik(self, theta, y, mode="auto"):
        logdet, ainv_pat, _, _ = self.factorize(theta, mode)
        quad = float(ainv_pat @ self.quad_weights(y))
        return -0.5 * self.n * math.log(2.0 * math.pi) - 0.5 * logdet - 0.5 * quad

    def loglik_fn(self, y, mode="auto"):
        """Fast closure over fixed data for samplers."""
        qw = self.quad_weights(y)
        const = -0.5 * self.n * math.log(2.0 * math.pi)
        factor = (
            self._factor_dense if self._route(mode) == "dense" else self._factor_sparse
        )

        def fn(theta):
            logdet, ainv_pat, _, _ = factor(theta)
            return const - 0.5 * logdet - 0.5 * float(ainv_pat @ qw)

        return fn

    def score(self, theta, y, mode="auto"):
        """Analytic gradient of the tapered objective.

        With A = Sigma o T, B = A^{-1} o T and D_m = (d Sigma/d theta_m) o T:
        d l / d theta_m = -1/2 tr(A^{-1} D_m) + 1/2 tr(D_m A^{-1} W A^{-1})
        where W = T o y y'.
        """
        y = np.asarray(y, dtype=float)
        _, ainv_pat, inv, kind = self.factorize(theta, mode)
        ainv = _as_full(inv, kind)
        w = np.zeros((self.n, self.n))
        wv = self.t_pat * y[self.rows] * y[self.cols]
        w[self.rows, self.cols] = wv
        w[self.cols, self.rows] = wv
        v = ainv @ w @ ainv
        v_pat = v[self.rows, self.cols]
        derivs = self.pattern_cov_derivs(theta) * self.t_pat[None, :]
        return 0.5 * derivs @ (self.weights * (v_pat - ainv_pat))

    def expected_objective_fn(self, theta, mode="auto"):
        """Expected tapered objective (up to constants) as a function of
        the working parameter, with data generated at ``theta``:

            q(t) = -1/2 log|A(t)| - 1/2 tr(B(t) Sigma(theta)).
        """
        sigma_pat = self.pattern_cov(theta)

        def q(t):
            logdet, ainv_pat, _, _ = self.factorize(t, mode)
            trace = float((self.weights * ainv_pat * self.t_pat) @ sigma_pat)
            return -0.5 * logdet - 0.5 * trace

        return q

    def analytic_pq(self, theta, mode="auto", certify=True):
        """Plug-in P and Q at theta on the total-data scale.

        P entries come from the Gaussian quadratic-form covariance identity
        P_ml = 1/2 tr(M_m Sigma M_l Sigma) with M_m = dB/d theta_m; Q is
        minus the numerical Hessian of the exact expected objective.
        ``certify=False`` skips the positive-definiteness gate so callers
        may certify a sub-block after excluding unidentified coordinates.
        """
        theta = np.asarray(theta, dtype=float)
        p = theta.size
        _, _, inv, kind = self.factorize(theta, mode)
        ainv = _as_full(inv, kind)
        sigma = self.full_cov(theta)
        derivs = self.pattern_cov_derivs(theta) * self.t_pat[None, :]
        g_mats = []
        for m in range(p):
            d_m = np.zeros((self.n, self.n))
            d_m[self.rows, self.cols] = derivs[m]
            d_m[self.cols, self.rows] = derivs[m]
            v_m = ainv @ d_m @ ainv
            m_m = np.zeros((self.n, self.n))
            vals = -v_m[self.rows, self.cols] * self.t_pat
            m_m[self.rows, self.cols] = vals
            m_m[self.cols, self.rows] = vals
            g_mats.append(m_m @ sigma)
        p_mat = np.empty((p, p))
        for m in range(p):
            for l in range(m, p):
                val = 0.5 * float(np.sum(g_mats[m] * g_mats[l].T))
                p_mat[m, l] = val
                p_mat[l, m] = val
        q_fn = self.expected_objective_fn(theta, mode)
        steps = np.maximum(np.abs(theta), 1.0) * np.finfo(float).eps**HESSIAN_STEP_EXPONENT
        q_mat = symmetrize(-numerical_hessian(q_fn, theta, h=steps))
        if certify:
            eigvals = np.linalg.eigvalsh(q_mat)
            if eigvals[0] <= 0.0:
                raise EstimationError(
                    f"plug-in Q at theta {theta.tolist()} is not positive "
                    f"definite; eigenvalues {eigvals.tolist()}"
                )
        return symmetrize(p_mat), q_mat


def _as_full(inv, kind):
    """dpotri returns only the lower triangle; mirror it when needed."""
    if kind == "full":
        return inv
    low = np.tril(inv)
    return low + np.tril(low, -1).T


# ---------------------------------------------------------------------------
# Module-level operations
# ---------------------------------------------------------------------------

def grid_locations(m, spacing=1.0):
    """Regular m-by-m grid of locations with the given spacing."""
    if m < 1:
        raise ValueError("grid size must be at least 1")
    axis = np.arange(m, dtype=float) * spacing
    xx, yy = np.meshgrid(axis, axis, indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel()])


def build_tapered_matrix(family, theta, taper, locations, times=None):
    """Sparse symmetric matrix of (Sigma(theta) o T) entries."""
    kernel = TaperedKernel(family, taper, locations, times)
    return kernel.sparse_matrix(np.asarray(theta, dtype=float))


def dense_covariance(family, theta, locations, times=None):
    """Dense untapered covariance matrix at theta (nugget on the diagonal)."""
    theta = np.asarray(theta, dtype=float)
    locations = np.asarray(locations, dtype=float)
    diff = locations[:, None, :] - locations[None, :, :]
    h = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    u = None
    if times is not None:
        times = np.asarray(times, dtype=float).ravel()
        u = np.abs(times[:, None] - times[None, :])
    if family.uses_time and u is None:
        raise ValueError(f"{type(family).__name__} needs observation times")
    smooth = theta[:-1] if family.has_nugget else theta
    sigma = np.asarray(family.smooth_value(smooth, h, u), dtype=float)
    if family.has_nugget and theta[-1]:
        sigma = sigma + theta[-1] * np.eye(locations.shape[0])
    return symmetrize(sigma)


def full_gaussian_loglik(family, theta, data, beta=None):
    """Dense untapered Gaussian log likelihood (mean X beta when given)."""
    sigma = dense_covariance(family, theta, data.locations, data.times)
    y = data.observations.ravel().astype(float).copy()
    if beta is not None:
        if data.design is None:
            raise ValueError("beta given but dataset has no design matrix")
        y = y - data.design @ np.asarray(beta, dtype=float)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as err:
        raise NotPositiveDefiniteError(
            f"full covariance is not positive definite at theta "
            f"{np.asarray(theta, dtype=float).tolist()}"
        ) from err
    n = y.size
    z = sla.solve_triangular(chol, y, lower=True)
    logdet = 2.0 * float(np.log(np.diag(chol)).sum())
    return -0.5 * n * math.log(2.0 * math.pi) - 0.5 * logdet - 0.5 * float(z @ z)


def tapered_loglik(family, theta, taper, data, beta=None, mode="auto"):
    """Tapered Gaussian log objective; subtracts X beta from y when given."""
    kernel = TaperedKernel(family, taper, data.locations, data.times)
    y = data.observations.ravel().astype(float).copy()
    if beta is not None:
        if data.design is None:
            raise ValueError("beta given but dataset has no design matrix")
        y = y - data.design @ np.asarray(beta, dtype=float)
    return kernel.loglik(np.asarray(theta, dtype=float), y, mode)


def tapered_score(family, theta, taper, data, beta=None, mode="auto"):
    """Analytic gradient of the tapered log objective at theta."""
    kernel = TaperedKernel(family, taper, data.locations, data.times)
    y = data.observations.ravel().astype(float).copy()
    if beta is not None:
        if data.design is None:
            raise ValueError("beta given but dataset has no design matrix")
        y = y - data.design @ np.asarray(beta, dtype=float)
    return kernel.score(np.asarray(theta, dtype=float), y, mode)


def analytic_PQ_tapered(family, taper, locations, theta, times=None, mode="auto"):
    """Plug-in (P, Q) of the tapered objective at theta, total-data scale."""
    kernel = TaperedKernel(family, taper, locations, times)
    return kernel.analytic_pq(np.asarray(theta, dtype=float), mode)


def simulate_gp(
    family, theta, locations, times=None, design=None, beta=None, seed=0, chol=None
):
    """Draw one realization y = X beta + L z with L the full-covariance factor."""
    theta = np.asarray(theta, dtype=float)
    locations = np.asarray(locations, dtype=float)
    if chol is None:
        sigma = dense_covariance(family, theta, locations, times)
        try:
            chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as err:
            raise NotPositiveDefiniteError(
                f"covariance not positive definite at theta {theta.tolist()}"
            ) from err
    rng = np.random.default_rng(seed)
    y = chol @ rng.standard_normal(locations.shape[0])
    if beta is not None:
        if design is None:
            raise ValueError("beta given but no design matrix")
        y = y + np.asarray(design, dtype=float) @ np.asarray(beta, dtype=float)
    return Dataset(observations=y, locations=locations, times=times, design=design)


class TaperedGpModel(ObjectiveModel):
    """Objective model wrapping a TaperedKernel for one fixed design.

    A single stochastic-process realization: no per-replicate score, but
    the total score is analytic and plug-in P/Q formulas are available.
    """

    capabilities = frozenset({CAP_SIMULATE, CAP_ANALYTIC_P, CAP_ANALYTIC_Q})

    def __init__(self, family, taper, locations, times=None, mode="auto"):
        self.kernel = TaperedKernel(family, taper, locations, times)
        self.family = family
        self.taper = taper
        self.mode = mode
        self.param_names = tuple(family.names)
        self.param_support = tuple(family.support)
        self._sim_chol = {}

    def log_objective(self, theta, data):
        return self.kernel.loglik(theta.values, data.observations.ravel(), self.mode)

    def loglik_fn(self, data):
        return self.kernel.loglik_fn(data.observations.ravel(), self.mode)

    def total_score(self, theta, data, h=None):
        return self.kernel.score(theta.values, data.observations.ravel(), self.mode)

    def analytic_P(self, theta):
        p_mat, _ = self._pq(theta)
        return p_mat

    def analytic_Q(self, theta):
        _, q_mat = self._pq(theta)
        return q_mat

    def _pq(self, theta):
        return self.kernel.analytic_pq(theta.values, self.mode)

    def simulate(self, theta, seed):
        key = tuple(np.asarray(theta.values, dtype=float).tolist())
        chol = self._sim_chol.get(key)
        if chol is None:
            sigma = self.kernel.full_cov(theta.values)
            chol = np.linalg.cholesky(sigma)
            if len(self._sim_chol) > 4:
                self._sim_chol.clear()
            self._sim_chol[key] = chol
        return simulate_gp(
            self.family,
            theta.values,
            self.kernel.locations,
            times=self.kernel.times,
            seed=seed,
            chol=chol,
        )


# ---------------------------------------------------------------------------
# Dataset CSV
# ---------------------------------------------------------------------------

def write_gp_dataset(data, path):
    """CSV columns: x, y[, t], value[, covariate columns x1..xq]."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ["x", "y"]
    if data.times is not None:
        header.append("t")
    header.append("value")
    q = 0 if data.design is None else data.design.shape[1]
    header += [f"x{j + 1}" for j in range(q)]
    y = data.observations.ravel()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(y.size):
            row = [repr(float(data.locations[i, 0])), repr(float(data.locations[i, 1]))]
            if data.times is not None:
                row.append(repr(float(data.times[i])))
            row.append(repr(float(y[i])))
            row += [repr(float(data.design[i, j])) for j in range(q)]
            writer.writerow(row)
    return path


def read_gp_dataset(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    arr = np.asarray(rows, dtype=float)
    has_time = "t" in header
    value_col = header.index("value")
    locations = arr[:, 0:2]
    times = arr[:, 2] if has_time else None
    values = arr[:, value_col]
    design = arr[:, value_col + 1 :] if arr.shape[1] > value_col + 1 else None
    if design is not None and design.shape[1] == 0:
        design = None
    return Dataset(observations=values, locations=locations, times=times, design=design)
