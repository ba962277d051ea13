"""Model layer: links, likelihood, priors, dynamics."""
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smcbandits.errors import ContractError, InvalidInputError
from smcbandits.model import (
    LOG_FLOOR,
    HierarchicalNormalPrior,
    IndependentNormalPrior,
    InteractionRecord,
    Link,
    ObservationModel,
    ParamVector,
    RandomWalkDynamics,
    dynamics_propagate,
    expected_reward,
    link_eval,
    link_inverse,
    log_likelihood,
    model_from_dict,
    prior_logdensity,
    prior_sample,
)


def _phi(x):
    """Standard normal CDF from mpmath's erf (independent of scipy)."""
    return float(0.5 * (1 + mpmath.erf(mpmath.mpf(x) / mpmath.sqrt(2))))


def _params(beta):
    return ParamVector(np.atleast_2d(np.asarray(beta, dtype=float)))


class TestLinkEval:
    def test_probit_zero(self):
        assert link_eval(Link.PROBIT, 0.0) == 0.5

    def test_logit_zero(self):
        assert link_eval(Link.LOGIT, 0.0) == 0.5

    def test_probit_one_matches_erf_oracle(self):
        assert link_eval(Link.PROBIT, 1.0) == pytest.approx(0.841345, abs=1e-5)
        assert link_eval(Link.PROBIT, 1.0) == pytest.approx(_phi(1.0), abs=1e-12)

    @pytest.mark.parametrize("u", [-8.0, -2.5, -0.3, 0.7, 3.1, 6.0])
    def test_probit_accuracy(self, u):
        # accuracy contract: |error| < 1e-9
        assert abs(link_eval(Link.PROBIT, u) - _phi(u)) < 1e-9

    def test_logit_formula(self):
        u = np.linspace(-5, 5, 11)
        np.testing.assert_allclose(link_eval(Link.LOGIT, u), 1 / (1 + np.exp(-u)), rtol=1e-14)

    @pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
    def test_non_finite_rejected(self, bad):
        with pytest.raises(InvalidInputError):
            link_eval(Link.PROBIT, bad)

    @given(st.floats(-30, 30), st.floats(-30, 30), st.sampled_from(list(Link)))
    def test_monotone(self, a, b, link):
        if a == b:
            return
        lo, hi = min(a, b), max(a, b)
        assert link_eval(link, lo) <= link_eval(link, hi)
        if hi - lo > 1e-6 and hi < 8:
            assert link_eval(link, lo) < link_eval(link, hi)

    def test_accepts_string_kind(self):
        assert link_eval("probit", 0.0) == 0.5


class TestLinkInverse:
    def test_probit_half(self):
        assert link_inverse(Link.PROBIT, 0.5) == 0.0

    def test_probit_975(self):
        assert link_inverse(Link.PROBIT, 0.975) == pytest.approx(1.959964, abs=1e-4)

    def test_logit_inverse_of_logistic_one(self):
        assert link_inverse(Link.LOGIT, 0.731058) == pytest.approx(1.0, abs=1e-4)

    @pytest.mark.parametrize("link", list(Link))
    def test_round_trip_grid(self, link):
        p = np.linspace(1e-6, 1 - 1e-6, 2001)
        assert np.max(np.abs(link_eval(link, link_inverse(link, p)) - p)) <= 1e-10

    @pytest.mark.parametrize("bad", [-0.1, 1.2, math.nan])
    def test_outside_unit_interval_rejected(self, bad):
        with pytest.raises(InvalidInputError):
            link_inverse(Link.PROBIT, bad)

    def test_poles_are_clamped(self):
        lo, hi = link_inverse(Link.PROBIT, np.array([0.0, 1.0]))
        assert np.isfinite(lo) and np.isfinite(hi) and lo < -7 and hi > 7


class TestExpectedReward:
    def setup_method(self):
        self.model = ObservationModel(K=2, d=3)

    def test_zero_coefficients(self):
        p = _params(np.zeros((2, 3)))
        assert expected_reward(self.model, p, 1, [1.0, 0.3, -2.0]) == 0.5

    def test_only_zeroed_covariates_active(self):
        p = _params([[0, 1, 1], [0, 0, 0]])
        assert expected_reward(self.model, p, 1, [1.0, 0.0, 0.0]) == 0.5

    def test_erf_oracle(self):
        p = _params([[0.2, -0.5, 1.0], [0, 0, 0]])
        got = expected_reward(self.model, p, 1, [1.0, 1.0, 1.0])
        assert got == pytest.approx(0.758036, abs=1e-5)
        assert got == pytest.approx(_phi(0.7), abs=1e-12)

    def test_dimension_mismatch(self):
        p = _params(np.zeros((2, 3)))
        with pytest.raises(InvalidInputError):
            expected_reward(self.model, p, 1, [1.0, 0.0])

    def test_arm_out_of_range(self):
        p = _params(np.zeros((2, 3)))
        with pytest.raises(InvalidInputError):
            expected_reward(self.model, p, 3, [1.0, 0.0, 0.0])

    def test_intercept_slot_enforced(self):
        p = _params(np.zeros((2, 3)))
        with pytest.raises(InvalidInputError):
            expected_reward(self.model, p, 1, [0.5, 0.0, 0.0])

    def test_shared_coefficients_enter_predictor(self):
        model = ObservationModel(K=2, d=2, shared_dim=1)
        p = ParamVector(np.zeros((2, 2)), np.array([0.7]))
        assert expected_reward(model, p, 2, [1.0, 5.0]) == pytest.approx(_phi(0.7), abs=1e-12)


class TestLogLikelihood:
    def setup_method(self):
        self.model = ObservationModel(K=1, d=3)

    def test_half_success(self):
        rec = InteractionRecord([1.0, 0.0, 0.0], 1, 1)
        assert log_likelihood(self.model, _params([[0, 0, 0]]), rec) == pytest.approx(math.log(0.5))

    def test_half_failure(self):
        rec = InteractionRecord([1.0, 0.0, 0.0], 1, 0)
        assert log_likelihood(self.model, _params([[0, 0, 0]]), rec) == pytest.approx(math.log(0.5))

    def test_failure_at_0758(self):
        rec = InteractionRecord([1.0, 1.0, 1.0], 1, 0)
        got = log_likelihood(self.model, _params([[0.2, -0.5, 1.0]]), rec)
        assert got == pytest.approx(-1.4189, abs=1e-3)
        assert got == pytest.approx(math.log(1 - _phi(0.7)), abs=1e-12)

    def test_far_tail_is_not_clamped_early(self):
        # 1 - Phi(5) ~ 2.9e-7 sits above the floor; the symmetric form keeps it exact
        rec = InteractionRecord([1.0, 0.0, 0.0], 1, 0)
        got = log_likelihood(self.model, _params([[5.0, 0, 0]]), rec)
        assert got == pytest.approx(float(mpmath.log(mpmath.ncdf(-5))), rel=1e-9)

    @pytest.mark.parametrize("eta,y", [(60.0, 0), (-60.0, 1)])
    def test_clamped_floor(self, eta, y):
        rec = InteractionRecord([1.0, 0.0, 0.0], 1, y)
        got = log_likelihood(self.model, _params([[eta, 0, 0]]), rec)
        assert got == pytest.approx(LOG_FLOOR)

    @settings(max_examples=200)
    @given(
        st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3),
        st.floats(-100, 100),
        st.floats(-100, 100),
        st.integers(0, 1),
        st.sampled_from(list(Link)),
    )
    def test_never_nan_or_minus_inf(self, beta, x1, x2, y, link):
        model = ObservationModel(K=1, d=3, link=link)
        got = log_likelihood(model, _params([beta]), InteractionRecord([1.0, x1, x2], 1, y))
        assert math.isfinite(got) and LOG_FLOOR - 1e-9 <= got <= 0.0


class TestRecordsAndParams:
    def test_record_validation(self):
        with pytest.raises(InvalidInputError):
            InteractionRecord([1.0], 0, 1)
        with pytest.raises(InvalidInputError):
            InteractionRecord([1.0], 1, 2)
        with pytest.raises(InvalidInputError):
            InteractionRecord([1.0], 1, 1, time_index=0)
        with pytest.raises(InvalidInputError):
            InteractionRecord([math.nan], 1, 1)

    def test_param_vector_is_read_only(self):
        p = _params([[1.0, 2.0]])
        with pytest.raises(ValueError):
            p.beta[0, 0] = 3.0

    def test_param_shape_checked_by_model(self):
        model = ObservationModel(K=2, d=2)
        with pytest.raises(InvalidInputError):
            model.check_params(_params(np.zeros((3, 2))))
        with pytest.raises(InvalidInputError):
            model.check_params(ParamVector(np.zeros((2, 2)), np.zeros(1)))

    def test_non_finite_params_rejected(self):
        with pytest.raises(InvalidInputError):
            _params([[math.inf]])

    def test_model_invariants(self):
        with pytest.raises(InvalidInputError):
            ObservationModel(K=0, d=1)
        with pytest.raises(InvalidInputError):
            ObservationModel(K=1, d=0)

    def test_model_round_trips_through_dict(self):
        model = ObservationModel(
            3, 2, Link.LOGIT, HierarchicalNormalPrior(slope_columns=(1,), sigma2=0.5), RandomWalkDynamics(0.2)
        )
        again = model_from_dict(model.to_dict())
        assert again == model and again.digest() == model.digest()


class TestPriors:
    def test_independent_moments(self):
        model = ObservationModel(K=1, d=1, prior=IndependentNormalPrior(0.0, 10.0))
        beta, _, _ = model.prior.sample_batch(1, 1, 0, 100_000, np.random.default_rng(0))
        assert abs(beta.mean()) < 0.05
        assert abs(beta.var() - 10.0) < 0.5

    def test_prior_sample_returns_valid_params(self):
        model = ObservationModel(K=3, d=2)
        p = prior_sample(model.prior, model, np.random.default_rng(1))
        assert model.check_params(p) is p

    @pytest.mark.parametrize("variance", [0.0, -1.0, (1.0, 0.0), (0.0, 0.0)])
    def test_non_positive_variance_rejected(self, variance):
        with pytest.raises(InvalidInputError):
            IndependentNormalPrior(0.0, variance)

    def test_hierarchical_variance_vanishing_rejected(self):
        with pytest.raises(InvalidInputError):
            HierarchicalNormalPrior(sigma2=0.0)

    @pytest.mark.parametrize("log_var", [None, 0.3])
    def test_hierarchical_law_of_total_variance(self, log_var):
        prior = HierarchicalNormalPrior(slope_columns=(1,), nu_variance=0.5, sigma2=2.0, log_sigma2_variance=log_var)
        beta, _, phi = prior.sample_batch(2, 2, 0, 200_000, np.random.default_rng(2))
        slopes = beta[:, 0, 1]
        e_sigma2 = 2.0 if log_var is None else 2.0 * math.exp(log_var / 2)
        expected = e_sigma2 + 0.5
        se = expected * math.sqrt(2 / slopes.size) * 3  # generous for the heavier-tailed mixture
        assert abs(slopes.var() - expected) < 3 * se
        assert phi.shape == (200_000, 2)

    def test_standard_normal_mode(self):
        p = _params([[0.0]])
        assert prior_logdensity(IndependentNormalPrior(0.0, 1.0), p) == pytest.approx(-0.5 * math.log(2 * math.pi))

    def test_variance_ten_mode(self):
        p = _params([[0.0]])
        assert prior_logdensity(IndependentNormalPrior(0.0, 10.0), p) == pytest.approx(-0.5 * math.log(20 * math.pi))

    @given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-50, 50))
    def test_translation(self, x, m, c):
        a = prior_logdensity(IndependentNormalPrior(m + c, 3.0), _params([[x + c]]))
        b = prior_logdensity(IndependentNormalPrior(m, 3.0), _params([[x]]))
        assert a == pytest.approx(b, rel=1e-9, abs=1e-9)

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            prior_logdensity(IndependentNormalPrior(0.0, (1.0, 2.0)), _params([[0.0, 0.0, 0.0]]))
        with pytest.raises(InvalidInputError):
            prior_logdensity(HierarchicalNormalPrior(), _params([[0.0, 0.0]]))

    def test_hierarchical_density_matches_components(self):
        prior = HierarchicalNormalPrior(slope_columns=(1,), nu_variance=2.0, sigma2=0.5, log_sigma2_variance=1.0)
        p = ParamVector(np.array([[0.3, -0.2], [1.0, 0.4]]), np.zeros(0), np.array([0.1, math.log(0.7)]))

        def lpdf(x, m, v):
            return -0.5 * (math.log(2 * math.pi * v) + (x - m) ** 2 / v)

        expected = (
            lpdf(0.1, 0.0, 2.0)
            + lpdf(math.log(0.7), math.log(0.5), 1.0)
            + lpdf(-0.2, 0.1, 0.7)
            + lpdf(0.4, 0.1, 0.7)
            + lpdf(0.3, 0.0, 10.0)
            + lpdf(1.0, 0.0, 10.0)
        )
        assert prior_logdensity(prior, p) == pytest.approx(expected, rel=1e-12)

    def test_importance_sampling_consistency(self):
        # E_prior[beta^2] estimated by self-normalised IS from a wider proposal
        rng = np.random.default_rng(3)
        prior = IndependentNormalPrior(0.5, 2.0)
        proposal_var = 6.0
        x = 0.5 + math.sqrt(proposal_var) * rng.standard_normal(40_000)
        logq = -0.5 * (np.log(2 * np.pi * proposal_var) + (x - 0.5) ** 2 / proposal_var)
        logp = np.array([prior_logdensity(prior, _params([[v]])) for v in x[:4000]])
        w = np.exp(logp - logq[:4000])
        is_est = np.sum(w * x[:4000] ** 2) / np.sum(w)
        beta, _, _ = prior.sample_batch(1, 1, 0, 4000, rng)
        direct = beta.ravel() ** 2
        se = math.sqrt(direct.var() / direct.size + np.var(w * (x[:4000] ** 2 - is_est)) / w.mean() ** 2 / w.size)
        assert abs(is_est - direct.mean()) < 3 * se


class TestDynamics:
    def test_zero_variance_coordinate_unchanged(self):
        dyn = RandomWalkDynamics((0.0, 1.0))
        p = _params([[0.3, -0.4]])
        out = dynamics_propagate(dyn, p, np.random.default_rng(0))
        assert out.beta[0, 0] == 0.3 and out.beta[0, 1] != -0.4

    def test_unit_step_variance(self):
        dyn = RandomWalkDynamics(1.0)
        beta = np.zeros((100_000, 1, 1))
        out, _, _ = dyn.propagate_batch(beta, np.zeros((100_000, 0)), np.zeros((100_000, 0)), np.random.default_rng(1))
        assert abs(out.var() - 1.0) < 0.02

    def test_two_steps_accumulate(self):
        dyn = RandomWalkDynamics(1.0)
        rng = np.random.default_rng(2)
        empty = np.zeros((100_000, 0))
        one, _, _ = dyn.propagate_batch(np.zeros((100_000, 1, 1)), empty, empty, rng)
        two, _, _ = dyn.propagate_batch(one, empty, empty, rng)
        assert abs(two.var() - 2.0) < 0.04

    def test_scalar_variance_leaves_shared_and_hyper_static(self):
        model = ObservationModel(2, 2, prior=HierarchicalNormalPrior(), dynamics=RandomWalkDynamics(1.0), shared_dim=1)
        p = prior_sample(model.prior, model, np.random.default_rng(3))
        out = dynamics_propagate(model.dynamics, p, np.random.default_rng(4))
        np.testing.assert_array_equal(out.tau, p.tau)
        np.testing.assert_array_equal(out.phi, p.phi)
        assert not np.array_equal(out.beta, p.beta)

    def test_without_dynamics_is_contract_error(self):
        with pytest.raises(ContractError):
            dynamics_propagate(None, _params([[0.0]]), np.random.default_rng(0))

    def test_negative_variance_rejected(self):
        with pytest.raises(InvalidInputError):
            RandomWalkDynamics(-1.0)

    def test_vector_length_checked(self):
        with pytest.raises(InvalidInputError):
            ObservationModel(2, 2, dynamics=RandomWalkDynamics((1.0, 1.0, 1.0)))
