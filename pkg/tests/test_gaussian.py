import numpy as np
import pytest
from scipy.special import expit, logit

from tempz.core import TemperatureLadder
from tempz.gaussian import (TARGET_ACCEPT, GmmModel, GmmTarget,
                            HmcAcceptModel, adapt_hmc, appendix_mixture,
                            eps_opt, fit_accept_model, gmm_analytic_log_z,
                            gmm_grad_log_f, gmm_log_f, hmc_step, leapfrog,
                            tune_endpoint_stepsizes, write_eps_csv)


@pytest.fixture
def gmm():
    return GmmModel(appendix_mixture())


class TestTarget:
    def test_analytic_log_z(self):
        target = appendix_mixture()
        assert gmm_analytic_log_z(target) == pytest.approx(
            np.log(2.0) + 5.0 * np.log(np.pi), abs=1e-12)

    def test_single_gaussian_log_z(self):
        target = GmmTarget(np.zeros((1, 3)), 2.0, np.ones(1), 10.0)
        assert gmm_analytic_log_z(target) == pytest.approx(
            1.5 * np.log(2.0 * np.pi * 2.0), abs=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            GmmTarget(np.zeros((1, 2)), -1.0, np.ones(1), 1.0)
        with pytest.raises(ValueError):
            GmmTarget(np.zeros((1, 2)), 1.0, np.zeros(1), 1.0)
        with pytest.raises(ValueError):
            GmmTarget(np.zeros((2, 2)), 1.0, np.ones(3), 1.0)

    def test_base_is_normalized(self, gmm):
        """Monte Carlo check that exp(log_p1) integrates to 1."""
        rng = np.random.default_rng(0)
        # importance-sample against the known sampler: E[1] = 1 trivially;
        # instead check the density formula at the mode
        d = gmm.target.dim
        s2 = gmm.target.prior_s2
        assert gmm.log_p1(np.zeros(d)) == pytest.approx(
            -0.5 * d * np.log(2.0 * np.pi * s2), abs=1e-12)
        x = gmm.sample_p1(rng)
        assert x.shape == (d,)


class TestGradients:
    def test_grad_matches_finite_differences(self, gmm):
        rng = np.random.default_rng(1)
        h = 1e-6
        for _ in range(100):
            x = rng.normal(0.0, 3.0, gmm.target.dim)
            beta = rng.random()
            g = gmm.grad_log_q(x, beta)
            for i in rng.choice(gmm.target.dim, size=3, replace=False):
                e = np.zeros_like(x)
                e[i] = h
                fd = (gmm.log_q(x + e, beta) - gmm.log_q(x - e, beta)) / (2 * h)
                assert g[i] == pytest.approx(fd, rel=1e-6, abs=1e-6)

    def test_grad_log_f_mixture_responsibility(self):
        target = appendix_mixture()
        x = np.zeros(10)
        g = gmm_grad_log_f(target, x)
        # at the first mode the second kernel is ~exp(-25) suppressed
        assert np.max(np.abs(g)) < 1e-8


class TestLeapfrog:
    def test_reversibility(self, gmm):
        rng = np.random.default_rng(2)
        x = rng.normal(size=10)
        p = rng.normal(size=10)
        grad = lambda y: gmm.grad_log_q(y, 0.7)
        x1, p1 = leapfrog(grad, x, p, 0.2, 15)
        x2, p2 = leapfrog(grad, x1, -p1, 0.2, 15)
        np.testing.assert_allclose(x2, x, atol=1e-12)
        np.testing.assert_allclose(-p2, p, atol=1e-12)

    def test_volume_preservation_1d(self):
        """|det| of the numerical Jacobian of one step is 1 within 1e-6 on
        a 1-d Gaussian."""
        grad = lambda y: -y  # unit Gaussian
        eps, h = 0.3, 1e-6

        def step(z):
            x, p = leapfrog(grad, z[:1], z[1:], eps, 1)
            return np.concatenate([x, p])

        z0 = np.array([0.37, -1.2])
        J = np.empty((2, 2))
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            J[:, i] = (step(z0 + e) - step(z0 - e)) / (2 * h)
        assert abs(abs(np.linalg.det(J)) - 1.0) < 1e-6

    def test_energy_error_vanishes_with_step(self, gmm):
        rng = np.random.default_rng(3)
        x = rng.normal(size=10)
        p = rng.normal(size=10)
        beta = 0.5
        h_of = lambda xx, pp: -gmm.log_q(xx, beta) + 0.5 * pp @ pp
        errs = []
        for eps in (0.2, 0.1, 0.05):
            x1, p1 = leapfrog(lambda y: gmm.grad_log_q(y, beta), x, p, eps, 5)
            errs.append(abs(h_of(x1, p1) - h_of(x, p)))
        assert errs[2] < errs[0]


class TestHmcStep:
    def test_rejects_bad_eps(self, gmm):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            hmc_step(lambda y: gmm.log_q(y, 0.5),
                     lambda y: gmm.grad_log_q(y, 0.5),
                     np.zeros(10), 0.0, 5, rng)

    def test_tiny_step_always_accepts(self, gmm):
        rng = np.random.default_rng(4)
        x = gmm.sample_p1(rng)
        accepted = 0
        for _ in range(50):
            x, acc = hmc_step(lambda y: gmm.log_q(y, 0.3),
                              lambda y: gmm.grad_log_q(y, 0.3),
                              x, 1e-5, 5, rng)
            accepted += acc
        assert accepted == 50

    def test_huge_step_mostly_rejects(self, gmm):
        rng = np.random.default_rng(5)
        x = np.zeros(10)
        accepted = 0
        for _ in range(50):
            x, acc = hmc_step(lambda y: gmm.log_q(y, 1.0),
                              lambda y: gmm.grad_log_q(y, 1.0),
                              x, 50.0, 5, rng)
            accepted += acc
        assert accepted <= 5

    def test_preserves_gaussian_moments(self):
        target = GmmTarget(np.zeros((1, 2)), 1.0, np.ones(1), 1.0)
        model = GmmModel(target)
        rng = np.random.default_rng(6)
        x = np.zeros(2)
        xs = []
        for _ in range(4000):
            x, _ = hmc_step(lambda y: model.log_q(y, 1.0),
                            lambda y: model.grad_log_q(y, 1.0),
                            x, 0.8, 10, rng)
            xs.append(x)
        xs = np.array(xs[500:])
        assert np.abs(xs.mean(axis=0)).max() < 0.15
        assert abs(xs.var(axis=0).mean() - 1.0) < 0.15


class TestAcceptModel:
    def _synthetic_records(self, w0, w1, betas, eps_min, eps_max, n, seed):
        rng = np.random.default_rng(seed)
        bins = rng.integers(len(betas), size=n)
        eps = rng.uniform(eps_min, eps_max, size=n)
        p = expit(w0[bins] + w1[bins] * eps)
        y = rng.random(n) < p
        return bins, eps, y

    def test_recovers_known_coefficients(self):
        betas = np.array([0.0, 1.0])
        w0_true = np.array([1.0, 1.0])
        w1_true = np.array([-2.0, -2.0])
        bins, eps, y = self._synthetic_records(w0_true, w1_true, betas,
                                               0.05, 2.0, 40000, 7)
        fit = fit_accept_model(bins, eps, y, betas, 0.05, 2.0)
        assert np.all(np.abs(fit.w0 - 1.0) < 0.2)
        assert np.all(np.abs(fit.w1 + 2.0) < 0.2)

    def test_monotonic_in_beta_at_endpoints(self):
        betas = np.linspace(0.0, 1.0, 5)
        rng = np.random.default_rng(8)
        # deliberately non-monotone truth; the projection must restore order
        w0_true = np.array([0.5, 2.0, 0.3, 1.5, -0.5])
        w1_true = np.array([-1.0, -0.2, -2.0, -0.5, -1.5])
        bins, eps, y = self._synthetic_records(w0_true, w1_true, betas,
                                               0.1, 1.5, 20000, 9)
        fit = fit_accept_model(bins, eps, y, betas, 0.1, 1.5)
        for e in (0.1, 1.5):
            vals = fit.w0 + fit.w1 * e
            assert np.all(np.diff(vals) <= 1e-12)
        assert np.all(fit.w1 <= 0)

    def test_degenerate_bins_flagged(self):
        betas = np.array([0.0, 1.0])
        bins = np.array([0, 0, 0, 1, 1, 1])
        eps = np.array([0.1, 0.5, 0.9, 0.1, 0.5, 0.9])
        y = np.array([1, 1, 1, 1, 0, 0])
        fit = fit_accept_model(bins, eps, y, betas, 0.1, 0.9, max_iters=2000)
        assert fit.degenerate[0] and not fit.degenerate[1]

    def test_requires_full_coverage(self):
        with pytest.raises(ValueError):
            fit_accept_model([0, 0], [0.1, 0.2], [1, 0],
                             np.array([0.0, 1.0]), 0.1, 0.9)


class TestEpsOpt:
    def test_solves_logistic(self):
        model = HmcAcceptModel(np.array([0.0, 1.0]),
                               np.array([1.0, 1.0]), np.array([-2.0, -2.0]),
                               0.05, 2.0)
        # logit(0.651) ~ 0.6234; eps = (0.6234 - 1) / -2 ~ 0.1883
        expected = (logit(TARGET_ACCEPT) - 1.0) / -2.0
        assert eps_opt(model, 0) == pytest.approx(expected, abs=1e-10)

    def test_projection_to_interval(self):
        model = HmcAcceptModel(np.array([0.0, 1.0]),
                               np.array([10.0, -10.0]), np.array([-0.1, -0.1]),
                               0.2, 1.0)
        assert eps_opt(model, 0) == 1.0   # solution far right -> clamp
        assert eps_opt(model, 1) == 0.2   # solution far left -> clamp

    def test_flat_curve_fallback(self):
        model = HmcAcceptModel(np.array([0.0, 1.0]),
                               np.array([5.0, -5.0]), np.array([0.0, 0.0]),
                               0.2, 1.0)
        assert eps_opt(model, 0) == 1.0   # always accepts -> biggest step
        assert eps_opt(model, 1) == 0.2


class TestAdaptation:
    def test_endpoint_tuning_hits_target(self, gmm):
        rng = np.random.default_rng(10)
        eps_min, eps_max, info = tune_endpoint_stepsizes(gmm, rng)
        assert 0 < eps_min < eps_max
        # re-measure acceptance at the tuned step sizes with a sample big
        # enough that binomial noise is below the tolerance
        for beta, eps in ((0.0, eps_max), (1.0, eps_min)):
            x = gmm.sample_p1(rng)
            acc = 0
            for _ in range(400):
                x, a = hmc_step(lambda y: gmm.log_q(y, beta),
                                lambda y: gmm.grad_log_q(y, beta),
                                x, eps, gmm.n_steps, rng)
                acc += a
            assert abs(acc / 400 - TARGET_ACCEPT) < 0.12

    def test_full_pipeline_installs_table(self, gmm):
        lad = TemperatureLadder.make(10)
        rng = np.random.default_rng(11)
        fit, table, rates = adapt_hmc(gmm, lad, rng, pilot_per_bin=30)
        assert table.shape == (10,)
        assert np.all((table >= fit.eps_min) & (table <= fit.eps_max))
        assert gmm.eps_for(0.0) == table[0]
        assert gmm.eps_for(1.0) == table[-1]
        # colder rungs never get larger optimal steps than beta = 0
        assert table[-1] <= table[0] + 1e-12

    def test_eps_csv(self, tmp_path, gmm):
        lad = TemperatureLadder.make(4)
        path = tmp_path / "eps.csv"
        write_eps_csv(path, lad, np.array([1.0, 0.8, 0.6, 0.4]),
                      np.array([0.7, 0.66, 0.64, 0.6]))
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "k,beta,eps_opt,pilot_accept_rate"
        assert len(lines) == 5


@pytest.mark.slow
class TestAdaptiveVersusFixed:
    def test_adaptive_not_worse_than_best_fixed_grid(self):
        """Adaptive step sizes must match the best single fixed step size
        from a 5-point grid, comparing mean |log Z error| over repeats."""
        from tempz.estimators import rts
        from tempz.tempering import init_iterations, run_chains

        target = appendix_mixture()
        truth = gmm_analytic_log_z(target)
        lad0 = TemperatureLadder.make(100)
        grid = [0.1, 0.3, 0.6, 1.0, 1.5]
        n_reps = 5

        def one_error(model, seed):
            lad, _, states = init_iterations(model, lad0, n_iters_max=6,
                                             sweeps_per_iter=40, n_chains=20,
                                             seed=seed)
            stats, _ = run_chains(model, lad, 20, 300, seed=seed, stream=(2,),
                                  init_states=[s.x for s in states])
            return abs(rts(lad, stats).log_z[-1] - truth)

        model_a = GmmModel(target)
        adapt_hmc(model_a, lad0, np.random.default_rng(0), pilot_per_bin=30)
        adaptive = np.mean([one_error(model_a, 100 + r) for r in range(n_reps)])

        fixed_means = []
        for eps in grid:
            model_f = GmmModel(target, default_eps=eps)
            fixed_means.append(np.mean([one_error(model_f, 100 + r)
                                        for r in range(n_reps)]))
        # comparison at matched budgets; the slack absorbs the Monte Carlo
        # noise of a 5-repeat mean and the winner's-curse of taking a min
        assert adaptive <= min(fixed_means) + 0.25
