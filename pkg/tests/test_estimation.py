"""Two-stage composite-likelihood estimation and sandwich-information tests.

The fit fixtures are session-scoped because a full two-stage fit with
standard errors is the most expensive object in the suite; every test
that only inspects the result shares one fit.
"""

import dataclasses
import json

import numpy as np
import pytest
from scipy import optimize, special

from mixcop.copula import CorrelationStructure, MixtureCopulaSpec
from mixcop.data import LongitudinalDataset
from mixcop.estimation import (
    DECAY_BOUNDS,
    WEIGHT_BOUNDS,
    CopulaConfig,
    FitResult,
    UniformScores,
    claic_clbic,
    composite_loglik,
    fit_two_stage,
    godambe_covariance,
)
from mixcop.marginals import count_pmf, fit_marginal
from mixcop.simulate import StudyConfig, simulate_dataset

TRUE_SPEC = MixtureCopulaSpec(
    family="gaussian",
    weights=(0.25, 0.75),
    structures=(CorrelationStructure("ar1", 0.3), CorrelationStructure("ex", 0.7)),
)


def _simulated(m=150, seed=71001, spec=TRUE_SPEC, beta=(1.0, 0.5, 0.5, -0.5)):
    cfg = StudyConfig(spec=spec, beta=beta, family="poisson", m=m, n_visits=4, seed=seed)
    return simulate_dataset(cfg, replicate=0)


@pytest.fixture(scope="session")
def gauss_data():
    return _simulated()


@pytest.fixture(scope="session")
def gauss_fit(gauss_data):
    return fit_two_stage(gauss_data, "poisson", CopulaConfig(family="gaussian"))


@pytest.fixture(scope="session")
def gauss_scores(gauss_data, gauss_fit):
    return UniformScores.from_marginal(gauss_fit.marginal, gauss_data)


class TestCompositeLoglik:
    def test_independence_factorizes(self, gauss_data):
        # with the correlation pushed to ~0 each pairwise mass is the
        # product of the marginal pmfs, so every visit is counted once
        # per pair it belongs to: (n_i - 1) times for balanced data
        marg = fit_marginal(gauss_data, "poisson")
        scores = UniformScores.from_marginal(marg, gauss_data)
        spec = MixtureCopulaSpec(
            family="gaussian",
            weights=(1.0,),
            structures=(CorrelationStructure("ar1", 49.0),),
        )
        ll = composite_loglik(scores, spec)
        mu = marg.mu(gauss_data)
        logf = np.log(count_pmf(gauss_data.y, mu, "poisson"))
        assert ll == pytest.approx(3.0 * logf.sum(), abs=1e-6)

    def test_duplicate_components_collapse(self, gauss_scores):
        one = MixtureCopulaSpec(
            family="gaussian",
            weights=(1.0,),
            structures=(CorrelationStructure("ex", 0.5),),
        )
        two = MixtureCopulaSpec(
            family="gaussian",
            weights=(0.3, 0.7),
            structures=(
                CorrelationStructure("ex", 0.5),
                CorrelationStructure("ex", 0.5),
            ),
        )
        assert composite_loglik(gauss_scores, one) == pytest.approx(
            composite_loglik(gauss_scores, two), abs=1e-9
        )

    def test_finite_for_t_family(self, gauss_scores):
        spec = MixtureCopulaSpec(
            family="t",
            weights=(0.5, 0.5),
            structures=(
                CorrelationStructure("ar1", 0.3),
                CorrelationStructure("ex", 0.7),
            ),
            df=4.0,
        )
        assert np.isfinite(composite_loglik(gauss_scores, spec))


class TestFitTwoStage:
    def test_recovers_truth_region(self, gauss_fit):
        # m = 150 is noisy; just pin the neighbourhood
        assert gauss_fit.converged
        assert abs(gauss_fit.marginal.beta[0] - 1.0) < 0.3
        assert 0.02 < gauss_fit.weights[0] < 0.65
        assert len(gauss_fit.param_names) == len(gauss_fit.params) == 7

    def test_optimal_over_random_feasible_points(self, gauss_fit, gauss_scores):
        rng = np.random.default_rng(5)
        best = gauss_fit.comp_loglik
        for _ in range(100):
            w1 = rng.uniform(*WEIGHT_BOUNDS)
            xi = np.exp(rng.uniform(np.log(DECAY_BOUNDS[0]), np.log(DECAY_BOUNDS[1]), 2))
            spec = MixtureCopulaSpec(
                family="gaussian",
                weights=(w1, 1.0 - w1),
                structures=(
                    CorrelationStructure("ar1", xi[0]),
                    CorrelationStructure("ex", xi[1]),
                ),
            )
            assert composite_loglik(gauss_scores, spec) <= best + 1e-8

    def test_matches_unconstrained_reparameterization(self, gauss_fit, gauss_scores):
        # optimizing in (logit pi, log xi) needs no boxes at all; the
        # box-penalized fit should land on the same optimum
        def neg(t):
            w1 = special.expit(t[0])
            spec = MixtureCopulaSpec(
                family="gaussian",
                weights=(w1, 1.0 - w1),
                structures=(
                    CorrelationStructure("ar1", np.exp(t[1])),
                    CorrelationStructure("ex", np.exp(t[2])),
                ),
            )
            return -composite_loglik(gauss_scores, spec)

        x0 = np.array(
            [
                special.logit(gauss_fit.weights[0]),
                np.log(gauss_fit.decays[0]),
                np.log(gauss_fit.decays[1]),
            ]
        )
        res = optimize.minimize(neg, x0, method="Nelder-Mead",
                                options={"xatol": 1e-7, "fatol": 1e-9})
        assert -res.fun == pytest.approx(gauss_fit.comp_loglik, abs=1e-4)

    def test_single_component_fit(self):
        spec = MixtureCopulaSpec(
            family="gaussian",
            weights=(1.0,),
            structures=(CorrelationStructure("ex", 0.5),),
        )
        data = _simulated(m=120, seed=71002, spec=spec)
        fit = fit_two_stage(
            data, "poisson",
            CopulaConfig(family="gaussian", structures=("ex",), compute_se=False),
        )
        assert fit.converged
        assert fit.n_components == 1
        np.testing.assert_array_equal(fit.weights, [1.0])
        assert abs(fit.decays[0] - 0.5) < 0.2

    def test_component_order_is_canonical(self, gauss_fit):
        assert gauss_fit.structures == ("ar1", "ex")

    def test_deterministic(self, gauss_data, gauss_fit):
        again = fit_two_stage(
            gauss_data, "poisson", CopulaConfig(family="gaussian", compute_se=False)
        )
        np.testing.assert_array_equal(again.params[:5], gauss_fit.params[:5])
        assert again.comp_loglik == gauss_fit.comp_loglik

    def test_nb_margin_supported(self):
        cfg = StudyConfig(
            spec=TRUE_SPEC, beta=(1.0, 0.5, 0.5, -0.5), family="nb",
            dispersion=4.0, m=80, n_visits=4, seed=71003,
        )
        data = simulate_dataset(cfg, replicate=0)
        fit = fit_two_stage(
            data, "nb", CopulaConfig(family="gaussian", compute_se=False)
        )
        assert fit.marginal.dispersion > 0
        assert "psi" in fit.param_names
        assert len(fit.params) == 8


@pytest.fixture(scope="session")
def t_fit():
    spec = dataclasses.replace(TRUE_SPEC, family="t", df=4.0)
    data = _simulated(m=100, seed=71004, spec=spec)
    return fit_two_stage(
        data, "poisson",
        CopulaConfig(family="t", nu_grid=(4, 8), compute_se=False),
    )


class TestStudentTFit:
    def test_df_profiled_over_grid(self, t_fit):
        assert t_fit.df in (4.0, 8.0)
        assert [nu for nu, _ in t_fit.nu_profile] == [4, 8]

    def test_profile_maximized_at_selected_df(self, t_fit):
        lls = dict(t_fit.nu_profile)
        assert t_fit.comp_loglik == pytest.approx(max(lls.values()))
        assert lls[int(t_fit.df)] == pytest.approx(t_fit.comp_loglik)


class TestGodambe:
    def test_se_shapes_and_positivity(self, gauss_fit):
        se = gauss_fit.standard_errors
        assert se is not None and se.shape == (7,)
        assert np.all(se > 0)

    def test_duplicating_subjects_halves_variance(self, gauss_data, gauss_fit):
        # scores at the same parameter value are literally duplicated, so
        # M and D both double and the sandwich variance exactly halves
        n = gauss_data.n_subjects
        doubled = LongitudinalDataset(
            subject_ids=np.r_[gauss_data.subject_ids, gauss_data.subject_ids + n],
            times=np.r_[gauss_data.times, gauss_data.times],
            y=np.r_[gauss_data.y, gauss_data.y],
            X=np.vstack([gauss_data.X, gauss_data.X]),
            covariate_names=gauss_data.covariate_names,
        )
        g1 = godambe_covariance(gauss_data, gauss_fit)
        g2 = godambe_covariance(doubled, gauss_fit)
        np.testing.assert_allclose(g2.se, g1.se / np.sqrt(2.0), rtol=1e-8)

    def test_step_halving_stability(self, gauss_data, gauss_fit):
        g1 = godambe_covariance(gauss_data, gauss_fit, step=1e-5)
        g2 = godambe_covariance(gauss_data, gauss_fit, step=5e-6)
        np.testing.assert_allclose(g1.se, g2.se, rtol=1e-2)

    def test_information_matrix_symmetric(self, gauss_data, gauss_fit):
        g = godambe_covariance(gauss_data, gauss_fit)
        np.testing.assert_allclose(g.J, g.J.T, atol=1e-10)
        assert not g.pinv_used

    def test_penalty_positive_and_bounded(self, gauss_fit):
        p = len(gauss_fit.params)
        assert 0.0 < gauss_fit.penalty < 10.0 * p

    def test_claic_clbic_ordering(self, gauss_fit):
        claic, clbic = claic_clbic(gauss_fit)
        assert claic == pytest.approx(gauss_fit.claic)
        assert clbic == pytest.approx(gauss_fit.clbic)
        # log(150) > 2, so the BIC penalty is the stiffer one
        assert clbic > claic


class TestFitResultSerialization:
    def test_json_round_trip(self, gauss_fit, tmp_path):
        path = tmp_path / "fit.json"
        gauss_fit.to_json(path)
        back = FitResult.from_json(path)
        np.testing.assert_allclose(back.params, gauss_fit.params, rtol=0, atol=0)
        np.testing.assert_allclose(
            back.standard_errors, gauss_fit.standard_errors, rtol=0, atol=0
        )
        assert back.param_names == gauss_fit.param_names
        assert back.spec() == gauss_fit.spec()
        assert back.claic == gauss_fit.claic

    def test_schema_version_present(self, gauss_fit):
        payload = json.loads(gauss_fit.to_json())
        assert payload["schema_version"] == 1

    def test_unknown_schema_rejected(self, gauss_fit):
        payload = json.loads(gauss_fit.to_json())
        payload["schema_version"] = 99
        with pytest.raises(ValueError, match="schema"):
            FitResult.from_dict(payload)


class TestConfigValidation:
    def test_unknown_family(self):
        with pytest.raises(ValueError):
            CopulaConfig(family="clayton")

    def test_nu_grid_rejected_for_gaussian(self):
        with pytest.raises(ValueError):
            CopulaConfig(family="gaussian", nu_grid=(4, 8))

    def test_t_gets_default_grid(self):
        cfg = CopulaConfig(family="t")
        assert cfg.nu_grid == tuple(range(3, 31))

    def test_bad_structure_kind(self):
        with pytest.raises(ValueError):
            CopulaConfig(family="gaussian", structures=("ar1", "toeplitz"))
