"""Small reference objective models used by tests, oracles, and the CLI.

GaussianIidModel is an exact likelihood (information identity holds, the
adjustment is asymptotically the identity), which makes it the calibration
oracle for samplers and estimators. QuadraticToyModel is a data-free
Gaussian-shaped objective with wired-in P and Q for exact algebra checks.
"""

from __future__ import annotations

import math

import numpy as np

from .linalg import certify_spd
from .model import (
    CAP_ANALYTIC_P,
    CAP_ANALYTIC_Q,
    CAP_SCORE,
    CAP_SIMULATE,
    Dataset,
    ObjectiveModel,
)


class GaussianIidModel(ObjectiveModel):
    """iid N(mu, sigma2) observations; theta = (mu, sigma2).

    Observations are stored as an (n, 1) matrix so each draw is a replicate.
    """

    capabilities = frozenset(
        {CAP_SCORE, CAP_SIMULATE, CAP_ANALYTIC_P, CAP_ANALYTIC_Q}
    )
    param_names = ("mu", "sigma2")
    param_support = ("real", "positive")

    def __init__(self, n_obs):
        if n_obs < 1:
            raise ValueError("n_obs must be at least 1")
        self.n_obs = int(n_obs)

    def log_objective(self, theta, data):
        mu, sigma2 = theta.values
        y = data.observations.ravel()
        n = y.size
        resid = y - mu
        return -0.5 * n * math.log(2.0 * math.pi * sigma2) - 0.5 * float(
            resid @ resid
        ) / sigma2

    def score(self, theta, data, replicate_index):
        mu, sigma2 = theta.values
        y = float(data.replicate(replicate_index)[0])
        r = y - mu
        return np.array([r / sigma2, (r * r - sigma2) / (2.0 * sigma2**2)])

    def simulate(self, theta, seed):
        mu, sigma2 = theta.values
        rng = np.random.default_rng(seed)
        y = mu + math.sqrt(sigma2) * rng.standard_normal(self.n_obs)
        return Dataset(observations=y[:, None])

    def _fisher(self, theta):
        sigma2 = theta.values[1]
        return self.n_obs * np.diag([1.0 / sigma2, 1.0 / (2.0 * sigma2**2)])

    def analytic_P(self, theta):
        return self._fisher(theta)

    def analytic_Q(self, theta):
        return self._fisher(theta)


class QuadraticToyModel(ObjectiveModel):
    """Data-free objective -(theta - center)' Q (theta - center) / 2.

    The quasi-posterior under a flat prior is exactly N(center, Q^{-1}).
    P is wired independently so sandwich algebra can be tested against
    closed forms.
    """

    capabilities = frozenset({CAP_ANALYTIC_P, CAP_ANALYTIC_Q})

    def __init__(self, center, q_matrix, p_matrix=None, names=None):
        self.center = np.asarray(center, dtype=float).ravel()
        self.q_matrix = certify_spd(np.asarray(q_matrix, dtype=float), "Q")
        if p_matrix is None:
            p_matrix = self.q_matrix
        self.p_matrix = certify_spd(np.asarray(p_matrix, dtype=float), "P")
        p = self.center.size
        if self.q_matrix.shape != (p, p) or self.p_matrix.shape != (p, p):
            raise ValueError("P and Q must match the center dimension")
        self.param_names = tuple(names) if names else tuple(
            f"x{i + 1}" for i in range(p)
        )
        self.param_support = ("real",) * p

    def log_objective(self, theta, data):
        d = theta.values - self.center
        return -0.5 * float(d @ self.q_matrix @ d)

    def analytic_P(self, theta):
        return self.p_matrix.copy()

    def analytic_Q(self, theta):
        return self.q_matrix.copy()

    def dataset(self):
        """Placeholder dataset; the objective ignores data."""
        return Dataset(observations=np.zeros(1))
