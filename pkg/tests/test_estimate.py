import numpy as np
import pytest
from scipy.optimize import minimize

from sslmix import (
    CanonicalTwoClass,
    ContractError,
    EmptyClassError,
    Form,
    MissingnessParams,
    MixtureParams,
    PartialSample,
    UnsupportedError,
    align_components,
    fit_cc,
    fit_full,
    fit_ig,
    fit_xi_profile,
    init_strategy,
    loglik_cc,
    loglik_full,
    loglik_ig,
    loglik_miss,
    sample_mixture,
    simulate_missing_flags,
)
from conftest import fuzz_rng, random_mixture


def make_partial(theta, xi, n, seed):
    sample = sample_mixture(theta, n, seed)
    partial, truth = simulate_missing_flags(theta, xi, sample, seed + 1)
    return sample, partial, truth


def param_distance(a: MixtureParams, b: MixtureParams) -> float:
    return max(
        np.abs(a.weights - b.weights).max(),
        np.abs(a.means - b.means).max(),
        np.abs(a.covariances - b.covariances).max(),
    )


class TestLoglikCC:
    def test_single_point_value(self):
        theta = MixtureParams([0.5, 0.5], [[0.0], [0.0]], [np.eye(1)] * 2)
        sample = PartialSample.fully_labeled([[0.0]], [1])
        expected = np.log(0.5) - 0.5 * np.log(2 * np.pi)
        assert expected == pytest.approx(-1.61209, abs=1e-5)
        assert loglik_cc(theta, sample) == pytest.approx(expected, rel=1e-12)

    def test_duplication_doubles(self):
        rng = fuzz_rng(30)
        theta = random_mixture(rng, 2, 2)
        sample = sample_mixture(theta, 40, 4)
        doubled = PartialSample.fully_labeled(
            np.vstack([sample.features, sample.features]),
            np.concatenate([sample.labels, sample.labels]),
        )
        assert loglik_cc(theta, doubled) == pytest.approx(2 * loglik_cc(theta, sample), rel=1e-12)

    def test_empty_sum(self):
        theta = random_mixture(fuzz_rng(31), 2, 1)
        empty = PartialSample.fully_labeled(np.empty((0, 1)), np.empty(0, dtype=int))
        assert loglik_cc(theta, empty) == 0.0

    def test_missing_label_rejected(self, canonical2):
        partial = PartialSample(np.zeros((1, 1)), [0], [True])
        with pytest.raises(ContractError):
            loglik_cc(canonical2, partial)


class TestLoglikIg:
    def test_equals_cc_when_fully_labeled(self):
        theta = random_mixture(fuzz_rng(32), 3, 2)
        sample = sample_mixture(theta, 60, 5)
        assert loglik_ig(theta, sample) == pytest.approx(loglik_cc(theta, sample), rel=1e-15)

    def test_all_missing_is_pure_mixture_term(self):
        from sslmix import log_mixture_density
        theta = random_mixture(fuzz_rng(33), 2, 2)
        feats = fuzz_rng(34).normal(0, 2, (30, 2))
        partial = PartialSample(feats, np.zeros(30, dtype=int), np.ones(30, dtype=bool))
        assert loglik_ig(theta, partial) == pytest.approx(
            float(np.sum(log_mixture_density(theta, feats))), rel=1e-12)

    def test_two_point_hand_computation(self):
        theta = MixtureParams([0.3, 0.7], [[-1.0], [1.0]], [np.eye(1), 4.0 * np.eye(1)])
        feats = np.array([[0.5], [-0.2]])
        partial = PartialSample(feats, [2, 0], [False, True])
        phi = lambda z, m, v: np.exp(-0.5 * (z - m) ** 2 / v) / np.sqrt(2 * np.pi * v)
        expected = np.log(0.7 * phi(0.5, 1, 4)) + np.log(
            0.3 * phi(-0.2, -1, 1) + 0.7 * phi(-0.2, 1, 4))
        assert loglik_ig(theta, partial) == pytest.approx(expected, rel=1e-12)


class TestLoglikMiss:
    def test_fair_coin_mechanism(self, canonical2):
        _, partial, _ = make_partial(canonical2, MissingnessParams(0.0, 0.0), 64, 6)
        assert loglik_miss(canonical2, MissingnessParams(0.0, 0.0), partial) == pytest.approx(
            64 * np.log(0.5), rel=1e-12)

    def test_saturation_near_zero(self, canonical2):
        sample = sample_mixture(canonical2, 50, 7)
        assert abs(loglik_miss(canonical2, MissingnessParams(-30.0, 0.0), sample)) < 1e-10

    def test_pointwise_bernoulli_oracle(self, canonical2):
        from sslmix import missing_prob
        xi = MissingnessParams(1.0, 0.5)
        _, partial, _ = make_partial(canonical2, xi, 80, 8)
        q = missing_prob(canonical2, xi, partial.features)
        expected = np.sum(np.where(partial.missing_flags, np.log(q), np.log1p(-q)))
        assert loglik_miss(canonical2, xi, partial) == pytest.approx(expected, rel=1e-12)


class TestLoglikFull:
    def test_decomposition_identity_fuzz(self):
        rng = fuzz_rng(35)
        for i in range(25):
            theta = random_mixture(rng, int(rng.integers(2, 4)), int(rng.integers(1, 3)))
            xi = MissingnessParams(rng.normal(), rng.normal(),
                                   rng.choice([Form.ENTROPY]))
            _, partial, _ = make_partial(theta, xi, 50, 900 + i)
            lhs = loglik_full(theta, xi, partial)
            rhs = loglik_ig(theta, partial) + loglik_miss(theta, xi, partial)
            assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_saturated_mechanism_recovers_cc(self, canonical2):
        xi = MissingnessParams(-30.0, 0.0)
        sample = sample_mixture(canonical2, 60, 9)
        full = loglik_full(canonical2, xi, sample)
        assert full == pytest.approx(loglik_cc(canonical2, sample), abs=1e-8)

    def test_single_classified_point_terms(self, canonical2):
        from sslmix import missing_prob
        xi = MissingnessParams(0.3, 1.2)
        sample = PartialSample.fully_labeled([[0.4]], [1])
        q = missing_prob(canonical2, xi, [0.4])
        phi = lambda z, m: np.exp(-0.5 * (z - m) ** 2) / np.sqrt(2 * np.pi)
        expected = np.log(0.5 * phi(0.4, 1.0)) + np.log(1 - q)
        assert loglik_full(canonical2, xi, sample) == pytest.approx(expected, rel=1e-12)


class TestFitCC:
    def test_exact_sample_moments(self):
        rng = fuzz_rng(36)
        feats = np.vstack([rng.normal(0, 1, (30, 2)), rng.normal(3, 2, (40, 2))])
        labels = np.array([1] * 30 + [2] * 40)
        sample = PartialSample.fully_labeled(feats, labels)
        fit = fit_cc(sample, 2)
        assert fit.converged and fit.iterations == 0
        assert fit.theta_hat.weights[0] == pytest.approx(30 / 70, rel=1e-12)
        assert np.allclose(fit.theta_hat.means[0], feats[:30].mean(axis=0))
        d0 = feats[:30] - feats[:30].mean(axis=0)
        assert np.allclose(fit.theta_hat.covariances[0], d0.T @ d0 / 30)

    def test_consistency_large_sample(self):
        theta = random_mixture(fuzz_rng(37), 2, 2)
        sample = sample_mixture(theta, 50_000, 10)
        fit = fit_cc(sample, 2)
        assert param_distance(fit.theta_hat, theta) < 0.05

    def test_pooled_covariance_is_count_weighted_average(self):
        rng = fuzz_rng(38)
        theta = random_mixture(rng, 2, 2)
        sample = sample_mixture(theta, 500, 11)
        plain = fit_cc(sample, 2)
        pooled = fit_cc(sample, 2, equal_covariance=True)
        counts = np.bincount(sample.labels, minlength=3)[1:]
        expected = np.einsum("i,ijk->jk", counts / 500, plain.theta_hat.covariances)
        assert np.allclose(pooled.theta_hat.covariances[0], expected, atol=1e-12)
        assert np.allclose(pooled.theta_hat.covariances[0], pooled.theta_hat.covariances[1])

    def test_underpopulated_class(self):
        sample = PartialSample.fully_labeled(np.random.default_rng(1).normal(size=(10, 3)),
                                             [1] * 8 + [2] * 2)
        with pytest.raises(EmptyClassError):
            fit_cc(sample, 2)

    def test_closed_form_matches_numerical_maximizer(self):
        # generic numerical optimization of the complete-data likelihood,
        # parametrized independently of the estimator's internals
        theta = random_mixture(fuzz_rng(39), 2, 2)
        sample = sample_mixture(theta, 50, 12)
        fit = fit_cc(sample, 2)

        def unpack(v):
            w1 = 1 / (1 + np.exp(-v[0]))
            means = v[1:5].reshape(2, 2)
            covs = []
            for k in (5, 8):
                low = np.array([[np.exp(v[k]), 0.0], [v[k + 1], np.exp(v[k + 2])]])
                covs.append(low @ low.T)
            return MixtureParams([w1, 1 - w1], means, covs)

        def neg(v):
            try:
                return -loglik_cc(unpack(v), sample)
            except ContractError:
                return 1e30

        def pack(t):
            v = np.empty(11)
            v[0] = np.log(t.weights[0] / t.weights[1])
            v[1:5] = t.means.ravel()
            for k, low in zip((5, 8), t.cholesky_factors):
                v[k] = np.log(low[0, 0]); v[k + 1] = low[1, 0]; v[k + 2] = np.log(low[1, 1])
            return v

        # start the generic maximizer away from the closed form and let it
        # find the optimum on its own
        rng = fuzz_rng(46)
        v0 = pack(fit.theta_hat) + rng.normal(0, 0.25, 11)
        res = minimize(neg, v0, method="Nelder-Mead",
                       options={"maxiter": 40000, "maxfev": 40000,
                                "xatol": 1e-12, "fatol": 1e-14})
        assert res.fun <= -loglik_cc(fit.theta_hat, sample) + 1e-6
        assert param_distance(unpack(res.x), fit.theta_hat) < 1e-3


class TestFitIg:
    def test_fully_labeled_reproduces_cc(self):
        theta = random_mixture(fuzz_rng(40), 2, 2)
        sample = sample_mixture(theta, 200, 13)
        cc = fit_cc(sample, 2)
        ig = fit_ig(sample, cc.theta_hat)
        assert param_distance(ig.theta_hat, cc.theta_hat) < 1e-12

    def test_monotone_trace_and_convergence(self, canonical2):
        xi = MissingnessParams(3.0, 1.0)
        _, partial, _ = make_partial(canonical2, xi, 400, 14)
        init, _ = init_strategy(partial, 2)
        fit = fit_ig(partial, init)
        assert fit.converged
        assert np.all(np.diff(fit.loglik_trace) >= -1e-9)

    def test_consistency_moderate_missingness(self):
        theta = CanonicalTwoClass(3.0, p=2).to_mixture()
        xi = MissingnessParams(3.0, 4.0)
        _, partial, _ = make_partial(theta, xi, 5000, 15)
        init, _ = init_strategy(partial, 2)
        fit = fit_ig(partial, init)
        assert param_distance(fit.theta_hat, theta) < 0.1


class TestFitFull:
    def test_ascent_over_init_fuzz(self):
        rng = fuzz_rng(41)
        for i in range(6):
            theta = random_mixture(rng, 2, 1)
            xi = MissingnessParams(0.5, 1.0)
            _, partial, _ = make_partial(theta, xi, 120, 700 + i)
            init_t, init_x = init_strategy(partial, 2)
            fit = fit_full(partial, init_t, init_x)
            assert fit.final_loglik >= loglik_full(init_t, init_x, partial) - 1e-9

    def test_saturated_mechanism_matches_cc(self, canonical2):
        sample = sample_mixture(canonical2, 400, 16)
        cc = fit_cc(sample, 2)
        xi_off = MissingnessParams(-30.0, 0.0)
        fit = fit_full(sample, cc.theta_hat, xi_off)
        assert param_distance(fit.theta_hat, cc.theta_hat) < 1e-4

    def test_mechanism_recovery_median_of_replications(self):
        theta = CanonicalTwoClass(2.0, p=1).to_mixture()
        xi = MissingnessParams(3.0, 4.0)
        xi0s, xi1s = [], []
        for b in range(20):
            _, partial, _ = make_partial(theta, xi, 5000, 3000 + 17 * b)
            init_t, init_x = init_strategy(partial, 2, equal_covariance=True)
            ig = fit_ig(partial, init_t, equal_covariance=True)
            fit = fit_full(partial, ig.theta_hat, init_x, equal_covariance=True, seed=b)
            xi0s.append(fit.xi_hat.xi0)
            xi1s.append(fit.xi_hat.xi1)
        assert abs(np.median(xi0s) - 3.0) < 0.5
        assert abs(np.median(xi1s) - 4.0) < 0.5

    def test_discriminant_form_needs_pooling(self, canonical2):
        sample = sample_mixture(canonical2, 100, 18)
        with pytest.raises(UnsupportedError):
            fit_full(sample, canonical2, MissingnessParams(1.0, -1.0, Form.DISCRIMINANT))

    def test_full_beats_ig_profile(self, canonical2):
        # fitted full likelihood must be at least the ig fit plus a profiled
        # mechanism term on the same sample
        xi = MissingnessParams(3.0, 4.0)
        _, partial, _ = make_partial(canonical2, xi, 1000, 19)
        init_t, init_x = init_strategy(partial, 2)
        ig = fit_ig(partial, init_t)
        xi_prof = fit_xi_profile(ig.theta_hat, partial)
        full = fit_full(partial, ig.theta_hat, init_x)
        assert full.final_loglik >= loglik_full(ig.theta_hat, xi_prof, partial) - 1e-6


class TestInitStrategy:
    def test_fully_labeled_equals_cc(self):
        theta = random_mixture(fuzz_rng(42), 2, 2)
        sample = sample_mixture(theta, 300, 20)
        cc = fit_cc(sample, 2)
        init_t, _ = init_strategy(sample, 2)
        assert param_distance(init_t, cc.theta_hat) < 1e-12

    def test_xi_slope_sign_recovered(self, canonical2):
        xi = MissingnessParams(3.0, 1.0)
        _, partial, _ = make_partial(canonical2, xi, 4000, 21)
        _, init_x = init_strategy(partial, 2)
        assert init_x.xi1 > 0

    def test_no_labels_unsupported(self):
        feats = fuzz_rng(43).normal(size=(20, 1))
        partial = PartialSample(feats, np.zeros(20, dtype=int), np.ones(20, dtype=bool))
        with pytest.raises(UnsupportedError):
            init_strategy(partial, 2)

    def test_unobserved_class_kmeans_fallback(self):
        theta = MixtureParams([0.5, 0.5], [[-3.0], [3.0]], [np.eye(1)] * 2)
        sample = sample_mixture(theta, 200, 22)
        # hide every class-2 label
        flags = sample.labels == 2
        partial = PartialSample(sample.features, np.where(flags, 0, sample.labels), flags)
        init_t, _ = init_strategy(partial, 2)
        assert init_t.means[1, 0] == pytest.approx(3.0, abs=1.0)


class TestAlignComponents:
    def test_identity_when_aligned(self):
        theta = random_mixture(fuzz_rng(44), 2, 2)
        sample = sample_mixture(theta, 100, 23)
        aligned = align_components(theta, sample)
        assert param_distance(aligned, theta) == 0.0

    def test_recovers_manual_swap(self):
        theta = MixtureParams([0.4, 0.6], [[-2.0], [2.0]], [np.eye(1)] * 2)
        sample = sample_mixture(theta, 100, 24)
        swapped = theta.permuted([1, 0])
        aligned = align_components(swapped, sample)
        assert param_distance(aligned, theta) < 1e-12

    def test_three_component_exhaustive(self):
        import itertools
        rng = fuzz_rng(45)
        theta = MixtureParams([0.3, 0.3, 0.4], [[-4.0], [0.0], [4.0]], [np.eye(1)] * 3)
        sample = sample_mixture(theta, 150, 25)
        for perm in itertools.permutations(range(3)):
            scrambled = theta.permuted(list(perm))
            # oracle: best permutation by direct search over all 6 candidates
            best, best_ll = None, -np.inf
            for q in itertools.permutations(range(3)):
                cand = scrambled.permuted(list(q))
                ll = loglik_cc(cand, sample)
                if ll > best_ll:
                    best, best_ll = cand, ll
            aligned = align_components(scrambled, sample)
            assert param_distance(aligned, best) == 0.0

    def test_too_many_components(self):
        theta = MixtureParams(np.full(7, 1 / 7), np.arange(7.0)[:, None], [np.eye(1)] * 7)
        sample = sample_mixture(theta, 70, 26)
        with pytest.raises(UnsupportedError):
            align_components(theta, sample)


class TestFitResultOrdering:
    def test_full_fit_dominates_ig_profile_combination(self, canonical2):
        xi = MissingnessParams(2.0, 2.0)
        _, partial, _ = make_partial(canonical2, xi, 800, 27)
        init_t, init_x = init_strategy(partial, 2)
        ig = fit_ig(partial, init_t)
        full = fit_full(partial, ig.theta_hat, init_x)
        xi_prof = fit_xi_profile(ig.theta_hat, partial)
        assert full.final_loglik >= loglik_full(ig.theta_hat, xi_prof, partial) - 1e-6
