"""Dense symmetric linear algebra and numerical differentiation primitives.

All functions are pure and operate on plain numpy arrays. Symmetric matrices
are certified on entry; positive definiteness is checked against a relative
eigenvalue floor and failures raise instead of silently regularizing.
"""

from __future__ import annotations

import numpy as np

from .exceptions import IllConditionedError, NotPositiveDefiniteError

# Relative eigenvalue floor for PD certification: lambda_min must exceed
# PD_RTOL * lambda_max.
PD_RTOL = 1e-12

# Condition-number ceiling for spd_inverse, stricter than the PD floor so
# that barely-positive-definite input fails as ill-conditioned, not as
# non-PD.
COND_MAX = 1e10

_EPS = float(np.finfo(float).eps)

GRADIENT_STEP_EXPONENT = 1.0 / 3.0
HESSIAN_STEP_EXPONENT = 1.0 / 4.0


def check_symmetric(a, name="matrix"):
    """Return ``a`` as an exactly symmetric square 2-d float array.

    Round-off level asymmetry (relative to the matrix scale) is averaged
    away; anything larger is rejected.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    if a.shape[0] == 0:
        raise ValueError(f"{name} must have positive dimension")
    skew = np.max(np.abs(a - a.T))
    if skew > 1e-8 * max(np.max(np.abs(a)), 1e-300):
        raise ValueError(f"{name} is not symmetric (max |A - A'| = {skew:g})")
    if skew != 0.0:
        a = 0.5 * (a + a.T)
    return a


def symmetrize(a):
    """Force symmetry by averaging with the transpose."""
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def certify_spd(a, name="matrix"):
    """Check that a symmetric matrix is positive definite.

    Returns the eigenvalue floor used, raising NotPositiveDefiniteError with
    the offending eigenvalue when the smallest eigenvalue is at or below
    PD_RTOL times the largest.
    """
    a = check_symmetric(a, name)
    eigvals = np.linalg.eigvalsh(a)
    lo, hi = eigvals[0], eigvals[-1]
    floor = PD_RTOL * max(hi, 0.0)
    if hi <= 0.0 or lo <= floor:
        raise NotPositiveDefiniteError(
            f"{name} is not positive definite: smallest eigenvalue {lo:.6g} "
            f"(floor {floor:.6g}, largest {hi:.6g})",
            eigenvalue=lo,
        )
    return a


def spd_sqrt(a):
    """Symmetric square root O D^{1/2} O' of an SPD matrix A = O D O'."""
    a = check_symmetric(a, "spd_sqrt input")
    eigvals, vecs = np.linalg.eigh(a)
    lo, hi = eigvals[0], eigvals[-1]
    floor = PD_RTOL * max(hi, 0.0)
    if hi <= 0.0 or lo <= floor:
        raise NotPositiveDefiniteError(
            f"spd_sqrt requires a positive definite input: smallest "
            f"eigenvalue {lo:.6g} (floor {floor:.6g})",
            eigenvalue=lo,
        )
    root = (vecs * np.sqrt(eigvals)) @ vecs.T
    return symmetrize(root)


def spd_inverse(a):
    """Inverse of an SPD matrix via eigendecomposition.

    Refuses near-singular input (condition number above COND_MAX) so that
    downstream sandwich assembly fails loudly instead of amplifying noise.
    """
    a = check_symmetric(a, "spd_inverse input")
    eigvals, vecs = np.linalg.eigh(a)
    lo, hi = eigvals[0], eigvals[-1]
    floor = PD_RTOL * max(hi, 0.0)
    if hi <= 0.0 or lo <= floor:
        raise NotPositiveDefiniteError(
            f"spd_inverse requires a positive definite input: smallest "
            f"eigenvalue {lo:.6g} (floor {floor:.6g})",
            eigenvalue=lo,
        )
    cond = hi / lo
    if cond > COND_MAX:
        raise IllConditionedError(
            f"spd_inverse refused: condition number estimate {cond:.3g} "
            f"exceeds {COND_MAX:.0e}",
            condition_number=cond,
        )
    inv = (vecs / eigvals) @ vecs.T
    return symmetrize(inv)


def spd_inv_sqrt(a):
    """Inverse symmetric square root O D^{-1/2} O' of an SPD matrix."""
    a = check_symmetric(a, "spd_inv_sqrt input")
    eigvals, vecs = np.linalg.eigh(a)
    lo, hi = eigvals[0], eigvals[-1]
    floor = PD_RTOL * max(hi, 0.0)
    if hi <= 0.0 or lo <= floor:
        raise NotPositiveDefiniteError(
            f"spd_inv_sqrt requires a positive definite input: smallest "
            f"eigenvalue {lo:.6g} (floor {floor:.6g})",
            eigenvalue=lo,
        )
    inv_root = (vecs / np.sqrt(eigvals)) @ vecs.T
    return symmetrize(inv_root)


def sample_covariance(draws):
    """Unbiased sample covariance (divisor J-1) of J rows by p columns."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    if draws.ndim != 2:
        raise ValueError(f"draws must be 2-d, got shape {draws.shape}")
    n_rows = draws.shape[0]
    if n_rows < 2:
        raise ValueError(f"sample covariance needs at least 2 rows, got {n_rows}")
    centered = draws - draws.mean(axis=0)
    cov = centered.T @ centered / (n_rows - 1)
    return symmetrize(cov)


def default_steps(theta, exponent):
    """Per-coordinate finite-difference steps max(|theta_i|, 1) * eps^exponent."""
    theta = np.asarray(theta, dtype=float)
    return np.maximum(np.abs(theta), 1.0) * _EPS**exponent


def _eval_finite(f, point):
    value = float(f(point))
    if not np.isfinite(value):
        raise ValueError(
            f"non-finite objective value {value} at evaluation point "
            f"{np.asarray(point).tolist()}"
        )
    return value


def numerical_gradient(f, theta, h=None):
    """Central-difference gradient of a scalar function at theta."""
    theta = np.asarray(theta, dtype=float)
    if h is None:
        h = default_steps(theta, GRADIENT_STEP_EXPONENT)
    else:
        h = np.broadcast_to(np.asarray(h, dtype=float), theta.shape).copy()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        step = np.zeros_like(theta)
        step[i] = h[i]
        grad[i] = (_eval_finite(f, theta + step) - _eval_finite(f, theta - step)) / (
            2.0 * h[i]
        )
    return grad


def numerical_hessian(f, theta, h=None):
    """Central second-difference Hessian, symmetrized as (H + H')/2."""
    theta = np.asarray(theta, dtype=float)
    p = theta.size
    if h is None:
        h = default_steps(theta, HESSIAN_STEP_EXPONENT)
    else:
        h = np.broadcast_to(np.asarray(h, dtype=float), theta.shape).copy()
    hess = np.empty((p, p))
    f0 = _eval_finite(f, theta)
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = h[i]
        fpp = _eval_finite(f, theta + ei)
        fmm = _eval_finite(f, theta - ei)
        hess[i, i] = (fpp - 2.0 * f0 + fmm) / h[i] ** 2
        for j in range(i + 1, p):
            ej = np.zeros(p)
            ej[j] = h[j]
            fij = (
                _eval_finite(f, theta + ei + ej)
                - _eval_finite(f, theta + ei - ej)
                - _eval_finite(f, theta - ei + ej)
                + _eval_finite(f, theta - ei - ej)
            ) / (4.0 * h[i] * h[j])
            hess[i, j] = fij
            hess[j, i] = fij
    return symmetrize(hess)


def empirical_quantile(samples, p):
    """Linear-interpolation (type 7) empirical quantile."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("empirical_quantile requires a non-empty sample")
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"quantile probability must be in [0, 1], got {p}")
    return float(np.quantile(samples, p))
