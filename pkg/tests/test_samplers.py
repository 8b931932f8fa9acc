import math

import numpy as np
import pytest
from scipy.stats import chi2, norm

from ofs.exceptions import SamplerDiagnosticError
from ofs.model import ParamVec, PriorSpec, flat, half_cauchy, normal
from ofs.models import GaussianIidModel, QuadraticToyModel
from ofs.samplers import (
    AdaptConfig,
    Chain,
    ChainConfig,
    adapt_proposal,
    curvature_metropolis,
    derive_seed,
    quasi_bayes_estimate,
    rw_metropolis,
    sub_seed,
)
from ofs.sandwich import SandwichEstimate, assemble_omega, curvature_matrix

from helpers import random_spd


def flat_prior(dim):
    return PriorSpec(tuple(flat() for _ in range(dim)))


def quadratic_setup(seed=0, dim=2):
    rng = np.random.default_rng(seed)
    q = random_spd(rng, dim)
    center = rng.standard_normal(dim)
    model = QuadraticToyModel(center, q)
    return model, model.make_params(center), q


class TestRwMetropolis:
    def test_gaussian_target_mean(self):
        # Conjugate oracle: flat prior + Gaussian-shaped objective has an
        # exact N(center, Q^{-1}) quasi-posterior.
        model, template, q = quadratic_setup(1)
        config = ChainConfig(
            iterations=30000, burn_in=3000, initial=template, proposal_scale=1.0, seed=7
        )
        chain = rw_metropolis(model, flat_prior(2), model.dataset(), config)
        sd = np.sqrt(np.diag(np.linalg.inv(q)))
        # Autocorrelation-inflated Monte Carlo error bound for a tuned RW chain.
        tol = 3.0 * sd * math.sqrt(25.0 / len(chain))
        assert np.all(np.abs(chain.draws.mean(axis=0) - model.center) < tol)

    def test_determinism(self):
        model, template, _ = quadratic_setup(2)
        config = ChainConfig(
            iterations=2000, burn_in=500, initial=template, proposal_scale=1.0, seed=11
        )
        a = rw_metropolis(model, flat_prior(2), model.dataset(), config)
        b = rw_metropolis(model, flat_prior(2), model.dataset(), config)
        assert np.array_equal(a.draws, b.draws)
        assert np.array_equal(a.log_values, b.log_values)
        assert a.acceptance_rate == b.acceptance_rate

    def test_small_scale_accepts_everything(self):
        model, template, _ = quadratic_setup(3)
        config = ChainConfig(
            iterations=2000,
            burn_in=100,
            initial=template,
            proposal_scale=1e-8,
            adapt=AdaptConfig(enabled=False),
            seed=5,
        )
        chain = rw_metropolis(model, flat_prior(2), model.dataset(), config)
        assert chain.acceptance_rate > 0.999

    def test_initial_must_be_finite(self):
        from ofs.model import uniform

        model, template, _ = quadratic_setup(12)
        prior = PriorSpec((flat(), uniform(-1.0, 1.0)))
        off_prior = template.replace([template.values[0], 50.0])
        bad = ChainConfig(iterations=100, burn_in=10, initial=off_prior, seed=0)
        with pytest.raises(ValueError, match="initial point"):
            rw_metropolis(model, prior, model.dataset(), bad)

    def test_all_rejected_window_diagnostic(self):
        model, template, _ = quadratic_setup(4)
        config = ChainConfig(
            iterations=2000,
            burn_in=1000,
            initial=template,
            proposal_scale=1e7,
            adapt=AdaptConfig(window=100),
            seed=13,
        )
        with pytest.raises(SamplerDiagnosticError, match="rejected"):
            rw_metropolis(model, flat_prior(2), model.dataset(), config)

    def test_no_finite_evaluation_diagnostic(self):
        # A tight prior plus an enormous proposal scale leaves every
        # proposal outside the prior support for the whole window.
        from ofs.model import uniform

        model = QuadraticToyModel([0.0], [[1.0]])
        template = model.make_params([0.0])
        prior = PriorSpec((uniform(-0.1, 0.1),))
        config = ChainConfig(
            iterations=2000,
            burn_in=1000,
            initial=template,
            proposal_scale=1e9,
            adapt=AdaptConfig(window=100),
            seed=13,
        )
        with pytest.raises(SamplerDiagnosticError, match="finite"):
            rw_metropolis(model, prior, model.dataset(), config)

    def test_burn_in_and_thin_counts(self):
        model, template, _ = quadratic_setup(5)
        config = ChainConfig(
            iterations=1000, burn_in=200, thin=3, initial=template, seed=1
        )
        chain = rw_metropolis(model, flat_prior(2), model.dataset(), config)
        assert len(chain) == math.ceil((1000 - 200) / 3)

    def test_detailed_balance_smoke(self):
        # Binned 1-d chain matches the standard normal target by chi-square.
        model = QuadraticToyModel([0.0], [[1.0]])
        template = model.make_params([0.0])
        config = ChainConfig(
            iterations=120000, burn_in=5000, thin=25, initial=template, seed=3
        )
        chain = rw_metropolis(model, flat_prior(1), model.dataset(), config)
        draws = chain.draws.ravel()
        edges = np.array([-np.inf, -2, -1.5, -1, -0.5, 0, 0.5, 1, 1.5, 2, np.inf])
        observed, _ = np.histogram(draws, bins=edges)
        probs = np.diff(norm.cdf(edges))
        expected = probs * draws.size
        stat = float(((observed - expected) ** 2 / expected).sum())
        assert stat < chi2.ppf(0.999, df=len(probs) - 1)

    def test_chain_covariance_matches_curvature_inverse(self):
        model, template, q = quadratic_setup(6)
        config = ChainConfig(
            iterations=60000, burn_in=5000, initial=template, seed=17
        )
        chain = rw_metropolis(model, flat_prior(2), model.dataset(), config)
        cov = np.cov(chain.draws, rowvar=False)
        target = np.linalg.inv(q)
        assert np.max(np.abs(cov - target) / np.abs(target)) < 0.10


class TestAdaptProposal:
    def test_increases_when_accepting(self):
        assert adapt_proposal(0.0, 1.0, 0.234, 0.5) > 0.0

    def test_decreases_when_rejecting(self):
        assert adapt_proposal(0.0, 0.0, 0.234, 0.5) < 0.0

    def test_fixed_point_at_target(self):
        assert adapt_proposal(0.3, 0.234, 0.234, 0.5) == pytest.approx(0.3)


class TestCurvatureMetropolis:
    def test_identity_reduces_to_plain(self):
        model, template, q = quadratic_setup(7)
        est = SandwichEstimate(
            names=template.names, p_hat=q, q_hat=q, p_method="plugin", q_method="plugin"
        )
        omega = assemble_omega(est, template)
        config = ChainConfig(
            iterations=4000, burn_in=500, initial=template, seed=23
        )
        plain = rw_metropolis(model, flat_prior(2), model.dataset(), config)
        curved = curvature_metropolis(
            model, flat_prior(2), model.dataset(), template, omega, config
        )
        assert np.array_equal(plain.draws, curved.draws)
        assert curved.adjusted == "curvature"

    def test_chain_covariance_hits_sandwich_inverse(self):
        rng = np.random.default_rng(8)
        q = np.array([[2.0, 0.5], [0.5, 1.5]])
        p = np.array([[4.0, -0.6], [-0.6, 0.8]])
        model = QuadraticToyModel([0.0, 0.0], q, p)
        template = model.make_params([0.0, 0.0])
        est = SandwichEstimate(
            names=template.names, p_hat=p, q_hat=q, p_method="plugin", q_method="plugin"
        )
        transform = curvature_matrix(est, template)
        config = ChainConfig(
            iterations=150000, burn_in=10000, initial=template, seed=29
        )
        chain = curvature_metropolis(
            model, flat_prior(2), model.dataset(), template, transform, config
        )
        j_inv = np.linalg.inv(q) @ p @ np.linalg.inv(q)
        cov = np.cov(chain.draws, rowvar=False)
        assert np.max(np.abs(cov - j_inv) / np.abs(j_inv)) < 0.10

    def test_support_violations_counted(self):
        model = GaussianIidModel(50)
        theta = model.make_params([0.0, 1.0])
        data = model.simulate(theta, 2)
        prior = PriorSpec((normal(0, 10), half_cauchy(5.0)))
        # Reflecting sigma2 through 1.2 maps draws above 2.4 to negative
        # values, so some transformed proposals leave the support.
        omega = np.array([[1.0, 0.0], [0.0, -1.0]])
        center = model.make_params([0.0, 1.2])
        config = ChainConfig(
            iterations=3000,
            burn_in=500,
            initial=theta,
            proposal_scale=np.array([0.2, 0.5]),
            adapt=AdaptConfig(enabled=False),
            seed=31,
        )
        chain = curvature_metropolis(model, prior, data, center, omega, config)
        assert chain.support_violations > 0


class TestQuasiBayesEstimate:
    def _chain(self, draws):
        draws = np.asarray(draws, dtype=float)
        config = ChainConfig(
            iterations=max(draws.shape[0], 1),
            burn_in=0,
            initial=ParamVec(("a",), [0.0]),
            seed=0,
        )
        return Chain(
            names=("a",),
            support=("real",),
            draws=draws,
            log_values=np.zeros(draws.shape[0]),
            acceptance_rate=0.5,
            config=config,
        )

    def test_constant_chain(self):
        chain = self._chain([[2.5]] * 10)
        assert quasi_bayes_estimate(chain).values[0] == pytest.approx(2.5)

    def test_symmetric_two_point(self):
        chain = self._chain([[-3.0], [3.0]])
        assert quasi_bayes_estimate(chain).values[0] == pytest.approx(0.0)

    def test_empty_chain_rejected(self):
        chain = self._chain(np.zeros((0, 1)))
        with pytest.raises(ValueError):
            quasi_bayes_estimate(chain)


class TestSeeds:
    def test_derive_seed_deterministic(self):
        a = np.random.default_rng(derive_seed(5, 3)).random(4)
        b = np.random.default_rng(derive_seed(5, 3)).random(4)
        assert np.array_equal(a, b)

    def test_sub_seed_distinct(self):
        seeds = {sub_seed(0, i, j) for i in range(20) for j in range(5)}
        assert len(seeds) == 100
