"""Shared test fixtures: tiny models and oracle implementations."""

import math

import numpy as np
from scipy.stats import multivariate_normal

from ofs.model import (
    CAP_ANALYTIC_P,
    CAP_ANALYTIC_Q,
    CAP_SCORE,
    CAP_SIMULATE,
    Dataset,
    ObjectiveModel,
)


def random_spd(rng, dim, spread=1.0):
    a = rng.standard_normal((dim, dim))
    return a @ a.T + spread * np.eye(dim)


def random_orthogonal(rng, dim):
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q


class FixedVarGaussianModel(ObjectiveModel):
    """iid N(mu, 1) with known variance; theta = (mu,). Fisher info = n."""

    capabilities = frozenset({CAP_SCORE, CAP_SIMULATE, CAP_ANALYTIC_P, CAP_ANALYTIC_Q})
    param_names = ("mu",)
    param_support = ("real",)

    def __init__(self, n_obs):
        self.n_obs = n_obs

    def log_objective(self, theta, data):
        y = data.observations.ravel()
        r = y - theta.values[0]
        return -0.5 * y.size * math.log(2.0 * math.pi) - 0.5 * float(r @ r)

    def score(self, theta, data, replicate_index):
        y = float(data.replicate(replicate_index)[0])
        return np.array([y - theta.values[0]])

    def simulate(self, theta, seed):
        rng = np.random.default_rng(seed)
        y = theta.values[0] + rng.standard_normal(self.n_obs)
        return Dataset(observations=y[:, None])

    def analytic_P(self, theta):
        return np.array([[float(self.n_obs)]])

    def analytic_Q(self, theta):
        return np.array([[float(self.n_obs)]])


class ZeroScoreModel(ObjectiveModel):
    """Constant objective: the score vanishes identically."""

    capabilities = frozenset({CAP_SCORE, CAP_SIMULATE})
    param_names = ("a", "b")
    param_support = ("real", "real")

    def log_objective(self, theta, data):
        return 0.0

    def score(self, theta, data, replicate_index):
        return np.zeros(2)

    def simulate(self, theta, seed):
        return Dataset(observations=np.zeros((3, 1)))


class BuggyModel(ObjectiveModel):
    """Returns NaN inside the declared support (a model bug)."""

    param_names = ("x",)
    param_support = ("real",)

    def log_objective(self, theta, data):
        return float("nan")


def brute_force_pairwise_loglik(locations, theta, observations):
    """Triple-loop oracle: replicates x pairs x bivariate normal logpdf."""
    sigma2, c = theta
    obs = np.atleast_2d(observations)
    m = locations.shape[0]
    total = 0.0
    for r in range(obs.shape[0]):
        for i in range(m):
            for j in range(i + 1, m):
                h = float(np.linalg.norm(locations[i] - locations[j]))
                cov = sigma2 * math.exp(-(c / sigma2) * h)
                block = np.array([[sigma2, cov], [cov, sigma2]])
                total += multivariate_normal.logpdf(
                    [obs[r, i], obs[r, j]], mean=[0.0, 0.0], cov=block
                )
    return total
