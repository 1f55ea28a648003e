import math

import numpy as np
import pytest

from mildsde.analysis import (INCONCLUSIVE, PASS, _solve_ensemble, compensator_experiment,
                              contraction_experiment, coupling_uniqueness_experiment, fit_order,
                              generalized_solution_cauchy, h2_norm, poisson_isometry_experiment,
                              regularization_identity_experiment, resolvent_algebra_check,
                              stability_estimate_experiment, weak_residual_experiment,
                              weak_solution_residual, wiener_isometry_experiment,
                              yosida_convergence_experiment, yosida_coupling_bound)
from mildsde.errors import ConfigurationError, HypothesisError
from mildsde.model import (DiffusionCoefficient, EquationSpec, JumpCoefficient, MarkSpace,
                           Nonlinearity)
from mildsde.noise import POISSON_SEED_OFFSET, TimeGrid, sample_poisson, sample_wiener
from mildsde.solver import solve_resolvent_implicit, solve_scheme
from mildsde.space import HilbertSpace, SpectralOperator, dirichlet_laplacian

from conftest import make_cubic_spec, make_linear_spec

DTS = [2.0**-7, 2.0**-8, 2.0**-9, 2.0**-10]


class TestFitOrder:
    def test_recovers_known_slope(self):
        x = np.array([0.1, 0.05, 0.025, 0.0125])
        assert fit_order(x, 3.0 * x**1.5) == pytest.approx(1.5, abs=1e-12)

    def test_zero_values_mean_infinite_order(self):
        assert fit_order([0.1, 0.05, 0.025], [0.0, 0.0, 0.0]) == math.inf


class TestCouplingExperiment:
    def test_identical_scheme_pair_gives_zero_gaps(self, cubic_spec):
        report = coupling_uniqueness_experiment(cubic_spec, 3, DTS,
                                                ("exp_euler", "exp_euler"))
        assert np.all(report.gaps == 0.0)
        assert report.verdict == PASS
        assert report.fitted_order == math.inf

    def test_linear_additive_first_order(self):
        spec = make_linear_spec(n=7, jump_amp=0.05)
        report = coupling_uniqueness_experiment(spec, 5, DTS)
        assert report.verdict == PASS
        assert 0.9 <= report.fitted_order <= 1.2

    def test_cubic_reaction_diffusion(self, cubic_spec):
        report = coupling_uniqueness_experiment(cubic_spec, 7, DTS)
        assert report.verdict == PASS
        assert np.all(np.diff(report.gaps) < 0.0)
        assert report.fitted_order >= 0.9
        assert np.all(np.isfinite(report.integrability))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    @pytest.mark.filterwarnings("ignore::mildsde.errors.StiffnessWarning")
    def test_blow_up_is_inconclusive_never_pass(self):
        A = SpectralOperator.diagonal([0.0, 0.0])
        spec = EquationSpec(A=A, F=Nonlinearity((0.0, 0.0, 0.0, -40.0)),
                            B=DiffusionCoefficient.zero(2), G=JumpCoefficient.zero(2),
                            u0=np.array([3.0, -3.0]), T=1.0)
        report = coupling_uniqueness_experiment(spec, 1, [0.25, 0.125, 0.0625])
        assert report.verdict == INCONCLUSIVE

    def test_requires_three_dyadic_steps(self, cubic_spec):
        with pytest.raises(ConfigurationError):
            coupling_uniqueness_experiment(cubic_spec, 1, [0.25, 0.125])
        with pytest.raises(ConfigurationError):
            coupling_uniqueness_experiment(cubic_spec, 1, [0.25, 0.1, 0.05])

    def test_report_is_reproducible(self, cubic_spec):
        a = coupling_uniqueness_experiment(cubic_spec, 11, DTS)
        b = coupling_uniqueness_experiment(cubic_spec, 11, DTS)
        assert np.array_equal(a.gaps, b.gaps)
        assert a.fitted_order == b.fitted_order
        assert a.verdict == b.verdict


def linear_contraction_spec(slope=1.0, alpha=None):
    # A = 0 so the pathwise gap has the closed form (1 - slope*dt)^n |du0|
    A = SpectralOperator.diagonal([0.0, 0.0])
    B = DiffusionCoefficient.constant(0.2 * np.eye(2), np.ones(2))
    G = JumpCoefficient.constant(0.05 * np.ones((2, 2)), MarkSpace((-1.0, 1.0), (1.0, 1.0)))
    return EquationSpec(A=A, F=Nonlinearity.linear(slope), B=B, G=G,
                        u0=np.array([0.5, -0.5]), T=1.0,
                        alpha=slope if alpha is None else alpha)


class TestContractionExperiment:
    def test_equal_starts_give_zero_gap(self, cubic_spec):
        spec = cubic_spec.with_data(F=Nonlinearity((0.0, 0.5, 0.0, 1.0)), alpha=0.9)
        report = contraction_experiment(spec, spec.u0, spec.u0, 50, 3, dt=2.0**-6)
        assert np.all(report.mean_sq == 0.0)
        assert report.verdict == PASS

    def test_linear_flow_matches_closed_form(self):
        # declared alpha = slope: the squared gap meets exp(-2 alpha t) with
        # near equality from below, since (1 - slope*dt)^2n <= exp(-2 slope t)
        slope, dt = 1.0, 2.0**-7
        spec = linear_contraction_spec(slope)
        du0 = np.array([0.3, 0.1])
        report = contraction_experiment(spec, spec.u0, spec.u0 + du0, 20, 5, dt=dt)
        steps = np.arange(report.times.size)
        closed = (1.0 - slope * dt) ** (2 * steps) * spec.space.sq_norms(du0)
        assert np.allclose(report.mean_sq, closed, rtol=1e-10)
        assert np.all(report.stderr < 1e-12)
        assert report.verdict == PASS
        # the discrete decay sits just below the envelope
        assert report.mean_sq[-1] > 0.8 * report.envelope[-1]

    def test_dissipative_cubic_bound(self):
        spec = make_cubic_spec(n=9, T=1.0, f_coeffs=(0.0, 0.5, 0.0, 1.0), eta=0.0,
                               alpha=0.9, multiplicative=True)
        u0_b = spec.u0 + 0.2 * spec.A.eigenvectors[:, 1]
        report = contraction_experiment(spec, spec.u0, u0_b, 300, 7, dt=2.0**-7)
        assert report.verdict == PASS
        assert report.margin >= 0.0

    def test_refuses_unmet_hypothesis(self):
        # anti-monotone linear drift: the sampled ratio is exactly -2 for
        # every pair, below any nonnegative declared margin
        spec = linear_contraction_spec(slope=-1.0, alpha=0.0)
        with pytest.raises(HypothesisError):
            contraction_experiment(spec, spec.u0, spec.u0, 10, 1, dt=2.0**-6)

    def test_gap_scaling_is_exactly_linear(self):
        # pathwise linearity of the synchronous gap for a linear drift
        spec = linear_contraction_spec(0.7)
        du0 = np.array([0.2, -0.1])
        r1 = contraction_experiment(spec, spec.u0, spec.u0 + du0, 30, 9, dt=2.0**-6)
        r2 = contraction_experiment(spec, spec.u0, spec.u0 + 3.0 * du0, 30, 9, dt=2.0**-6)
        assert np.allclose(r2.mean_sq, 9.0 * r1.mean_sq, rtol=1e-11)


def additive_pair(n=9, delta_amp=0.05, slope=None):
    spec1 = make_cubic_spec(n=n, T=1.0, f_coeffs=(0.0, 0.5, 0.0, 1.0), eta=0.0,
                            multiplicative=False)
    delta = np.zeros(spec1.B.base.shape)
    delta[:, 0] = delta_amp * spec1.A.eigenvectors[:, 0]
    b2 = DiffusionCoefficient.constant(spec1.B.base + delta, spec1.B.q)
    return spec1, spec1.with_data(B=b2), delta


class TestStabilityExperiment:
    def test_identical_specs_report_zero(self, cubic_spec):
        spec = cubic_spec.with_data()
        report = stability_estimate_experiment(spec, spec, 20, 3, dt=2.0**-6)
        assert np.all(report.n_values[np.isfinite(report.n_values)] == 0.0)
        assert report.verdict == INCONCLUSIVE

    def test_dissipative_cubic_envelope(self):
        spec1, spec2, _ = additive_pair()
        report = stability_estimate_experiment(spec1, spec2, 400, 5, dt=2.0**-7)
        assert report.verdict == PASS
        vals = report.n_values[np.isfinite(report.n_values)]
        assert np.all(vals <= report.envelope[np.isfinite(report.n_values)] + 3 * 1e-2)

    def test_gaussian_closed_form(self):
        # linear drift, additive noise: the difference is the discrete
        # stochastic convolution of the coefficient difference, so its
        # variance has an exact per-mode recursion
        n, lam_f, dt = 3, 0.5, 2.0**-6
        A = SpectralOperator.diagonal([0.3, 1.0, 2.0])
        q = np.array([1.0])
        b1 = np.array([[0.2], [0.1], [0.05]])
        delta = np.array([[0.08], [0.0], [0.02]])
        spec1 = EquationSpec(A=A, F=Nonlinearity.linear(lam_f),
                             B=DiffusionCoefficient.constant(b1, q),
                             G=JumpCoefficient.zero(3),
                             u0=np.zeros(3), T=1.0)
        spec2 = spec1.with_data(B=DiffusionCoefficient.constant(b1 + delta, q))
        members = 4000
        report = stability_estimate_experiment(spec1, spec2, members, 11, dt=dt)
        steps = round(1.0 / dt)
        decay = np.exp(-dt * A.eigenvalues)
        v = np.zeros(3)
        variances = [0.0]
        for _ in range(steps):
            v = decay**2 * ((1.0 - lam_f * dt) ** 2 * v + dt * delta[:, 0] ** 2)
            variances.append(v.sum())  # weight = 1
        exact_n = np.array(variances) / np.maximum(report.times * (delta[:, 0] ** 2).sum(), 1e-300)
        got = report.n_values[1:]
        want = exact_n[1:]
        se = report.n_stderr[1:]
        assert np.all(np.abs(got - want) <= 3.0 * se + 1e-12)

    def test_rejects_mismatched_frames(self):
        spec1 = make_cubic_spec(n=9, multiplicative=False)
        spec2 = make_cubic_spec(n=9, multiplicative=False, f_coeffs=(0.0, 1.0))
        with pytest.raises(ConfigurationError):
            stability_estimate_experiment(spec1, spec2, 10, 1, dt=2.0**-6)

    def test_rejects_distinct_multiplicative_noise(self):
        # identical coefficient objects cancel exactly and are fine; two
        # different state-dependent coefficients have no well-defined
        # deterministic data distance
        spec1 = make_cubic_spec(n=9, multiplicative=True)
        other_b = DiffusionCoefficient.affine(1.1 * spec1.B.base, spec1.B.state_scale,
                                              spec1.B.q)
        spec2 = spec1.with_data(B=other_b)
        with pytest.raises(ConfigurationError):
            stability_estimate_experiment(spec1, spec2, 10, 1, dt=2.0**-6)


class TestCauchyExperiment:
    def test_constant_sequence_is_all_zero(self):
        spec1, _, _ = additive_pair()
        seq = [(spec1.u0, spec1.B, spec1.G)] * 3
        report = generalized_solution_cauchy(spec1, seq, 3, ensemble_size=20, dt=2.0**-6)
        assert np.all(report.solution_dists == 0.0)
        assert report.verdict == PASS

    def test_geometric_data_sequence(self):
        spec1, _, delta = additive_pair(n=9)
        seq = []
        for k in range(5):
            b_k = DiffusionCoefficient.constant(spec1.B.base + 2.0**-k * delta, spec1.B.q)
            seq.append((spec1.u0, b_k, spec1.G))
        report = generalized_solution_cauchy(spec1, seq, 5, ensemble_size=400, dt=2.0**-7)
        assert report.verdict == PASS
        assert 0.15 <= report.mean_ratio <= 0.35
        assert np.all(np.diff(report.solution_dists) < 0.0)

    def test_mollified_initial_data(self):
        # u0_n = (I + A/(n+1))^{-1} u0 converges at the resolvent rate
        spec1, _, _ = additive_pair(n=9)
        A = spec1.A
        seq = []
        for k in range(4):
            eps = 1.0 / (k + 1)
            u0_k = A.synthesize(A.resolvent_factors(eps) * A.coords(spec1.u0))
            seq.append((u0_k, spec1.B, spec1.G))
        report = generalized_solution_cauchy(spec1, seq, 7, ensemble_size=100, dt=2.0**-6)
        assert report.verdict == PASS
        assert np.all(np.diff(report.solution_dists) < 0.0)

    def test_rejects_nondecreasing_data(self):
        spec1, _, delta = additive_pair(n=9)
        worse = DiffusionCoefficient.constant(spec1.B.base + delta, spec1.B.q)
        better = DiffusionCoefficient.constant(spec1.B.base + 0.5 * delta, spec1.B.q)
        seq = [(spec1.u0, better, spec1.G), (spec1.u0, worse, spec1.G)]
        with pytest.raises(ConfigurationError):
            generalized_solution_cauchy(spec1, seq, 1, ensemble_size=5, dt=2.0**-6)


class TestH2Norm:
    def test_zero_and_constant(self):
        space = HilbertSpace(3, 0.25)
        zeros = np.zeros((4, 5, 3))
        assert h2_norm(zeros, space) == 0.0
        const = np.ones((4, 5, 3))
        assert h2_norm(const, space) == pytest.approx(0.75)

    def test_trajectory_list_interface(self):
        spec = make_linear_spec(n=5)
        dt = 2.0**-5
        grid = TimeGrid(spec.T, round(spec.T / dt))
        trajs = []
        for s in range(3):
            wiener = sample_wiener(spec.B.q, grid, s)
            poisson = sample_poisson(spec.marks, spec.T, s + POISSON_SEED_OFFSET)
            trajs.append(solve_scheme(spec, (wiener, poisson), dt, "exp_euler"))
        direct = h2_norm(np.stack([t.states for t in trajs]), spec.space)
        assert h2_norm(trajs, spec.space) == direct

    def test_ornstein_uhlenbeck_moment(self):
        # discrete OU closed form: the scheme's second moment has an exact
        # geometric recursion, the ensemble estimate must match within 3 SE
        a, sigma, dt, steps = 1.0, 0.4, 2.0**-6, 64
        A = SpectralOperator.diagonal([a])
        spec = EquationSpec(A=A, F=Nonlinearity.zero(),
                            B=DiffusionCoefficient.constant(sigma * np.ones((1, 1)),
                                                            np.array([1.0])),
                            G=JumpCoefficient.zero(1), u0=np.array([0.8]), T=1.0)
        grid = TimeGrid(1.0, steps)
        states = _solve_ensemble(spec, grid, dt, "exp_euler", 13, 4000)
        decay = np.exp(-a * dt)
        second = [0.8**2]
        for _ in range(steps):
            second.append(decay**2 * (second[-1] + sigma**2 * dt))
        exact_sup = max(second)
        got = h2_norm(states, spec.space)
        sq = spec.space.sq_norms(states)
        se = sq.std(axis=0, ddof=1).max() / np.sqrt(4000)
        assert abs(got - exact_sup) <= 3 * se

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            h2_norm([], HilbertSpace(2))


class TestWeakResidual:
    def make_setup(self, dt=2.0**-7, spec=None):
        spec = spec if spec is not None else make_cubic_spec(n=9)
        grid = TimeGrid(spec.T, round(spec.T / dt))
        wiener = sample_wiener(spec.B.q, grid, 3)
        poisson = sample_poisson(spec.marks, spec.T, 3 + POISSON_SEED_OFFSET)
        traj = solve_resolvent_implicit(spec, (wiener, poisson), dt)
        return spec, traj, (wiener, poisson)

    def test_matches_per_mode_recursion_defect(self):
        # oracle: the scalar one-step recursion is telescoped directly
        spec, traj, noise = self.make_setup()
        dt = traj.grid.dt
        A = spec.A
        residual = weak_solution_residual(traj, spec, noise, epsilon=0.1, k_max=6)
        wiener, poisson = noise
        from mildsde.noise import jump_cell_counts
        counts = jump_cell_counts(poisson, traj.grid)
        u_hat = A.coords(traj.states)
        b_hat = np.empty((traj.grid.steps, A.dim))
        for n in range(traj.grid.steps):
            t = traj.grid.times[n]
            u_n = traj.states[n]
            inc = (spec.B(t, u_n) @ wiener.increments[n]
                   + spec.G(t, u_n) @ counts[n]
                   - dt * (spec.G(t, u_n) @ spec.marks.weight_array))
            b_hat[n] = A.coords(-dt * spec.F(u_n) + inc)
        lam = A.eigenvalues
        r = 1.0 / (1.0 + dt * lam)
        defect = (lam * dt * (1.0 - r) * u_hat[:-1].sum(axis=0)
                  - lam * dt * r * b_hat.sum(axis=0))
        tilde = 1.0 / (1.0 + 0.1 * lam)
        oracle = np.abs(tilde * defect)[:6]
        assert np.allclose(residual, oracle, atol=1e-12)

    def test_noise_free_semigroup_quadrature_error(self):
        # with F = B = G = 0 and the exponential scheme, the residual per
        # mode is exactly the left-rule quadrature error of lam * int e^{-lam s}
        n = 6
        A = dirichlet_laplacian(n)
        u0 = A.eigenvectors @ (0.7 ** np.arange(n))
        spec = EquationSpec(A=A, F=Nonlinearity.zero(),
                            B=DiffusionCoefficient.zero(n), G=JumpCoefficient.zero(n),
                            u0=u0, T=0.5)
        dt = 2.0**-6
        grid = TimeGrid(0.5, round(0.5 / dt))
        wiener = sample_wiener(spec.B.q, grid, 1)
        poisson = sample_poisson(spec.marks, 0.5, 2)
        traj = solve_scheme(spec, (wiener, poisson), dt, "exp_euler")
        eps = 0.1
        residual = weak_solution_residual(traj, spec, (wiener, poisson), eps, k_max=n)
        lam = A.eigenvalues
        u0_hat = A.coords(u0)
        left_sum = np.array([
            lam[k] * dt * np.sum(np.exp(-lam[k] * grid.times[:-1])) for k in range(n)])
        exact = 1.0 - np.exp(-lam * 0.5)
        oracle = np.abs((left_sum - exact) * u0_hat / (1.0 + eps * lam))
        assert np.allclose(residual, oracle, atol=1e-11)

    def test_mollification_parameter_rescales_modes(self):
        spec, traj, noise = self.make_setup()
        lam = spec.A.eigenvalues[:5]
        r1 = weak_solution_residual(traj, spec, noise, epsilon=0.1, k_max=5)
        r2 = weak_solution_residual(traj, spec, noise, epsilon=0.4, k_max=5)
        assert np.allclose(r2, r1 * (1.0 + 0.1 * lam) / (1.0 + 0.4 * lam), rtol=1e-12)

    def test_rejects_bad_mode_count(self):
        spec, traj, noise = self.make_setup()
        with pytest.raises(ValueError):
            weak_solution_residual(traj, spec, noise, k_max=spec.A.dim + 1)

    def test_experiment_orders(self, cubic_spec):
        report = weak_residual_experiment(cubic_spec, 9, DTS, k_max=6)
        assert report.verdict == PASS
        assert np.all(report.orders >= 0.9)


class TestYosidaExperiments:
    def test_convergence_slope(self):
        spec = make_linear_spec(n=9, noise_amp=0.15)
        # rescale the spectrum so eps*lam stays small over the sweep
        A = spec.A.scaled(0.5 / spec.A.eigenvalues[0])
        spec = EquationSpec(A=A, F=spec.F, B=spec.B, G=spec.G, u0=spec.u0, T=spec.T)
        report = yosida_convergence_experiment(spec, 3, 2.0**-9,
                                               [2.0**-j for j in range(1, 7)])
        assert report.verdict == PASS
        assert 0.9 <= report.slope <= 1.1
        assert np.all(np.diff(report.gaps) < 0.0)

    def test_coupling_bound_holds_along_trajectory(self):
        spec = make_cubic_spec(n=9, T=0.5, f_coeffs=(0.0, 0.0, 0.0, 1.0), eta=0.0,
                               multiplicative=False)
        u0_b = spec.u0 + 0.3 * spec.A.eigenvectors[:, 1]
        out = yosida_coupling_bound(spec, spec.u0, u0_b, 5, dt=2.0**-8, epsilon=0.05)
        assert out["ok"]
        assert np.all(out["lhs"] <= out["rhs"] * (1 + 1e-9) + 1e-9)

    def test_coupling_bound_rejects_multiplicative(self):
        spec = make_cubic_spec(n=9, multiplicative=True)
        with pytest.raises(ConfigurationError):
            yosida_coupling_bound(spec, spec.u0, spec.u0, 1, dt=2.0**-6, epsilon=0.1)


class TestCheckExperiments:
    def test_resolvent_algebra(self):
        report = resolvent_algebra_check(dirichlet_laplacian(31), 100, 3)
        assert report.verdict == PASS

    def test_wiener_isometry(self):
        space = HilbertSpace(5, 1.0 / 6.0)
        grid = TimeGrid(1.0, 8)
        phi = 0.5 * np.random.default_rng(1).standard_normal((8, 5, 2))
        report = wiener_isometry_experiment(phi, np.array([1.0, 0.5]), grid, 1.0,
                                            4000, 3, space)
        assert report.verdict == PASS
        assert report.summary["relative_error"] < 0.05

    def test_poisson_isometry_and_compensator(self):
        space = HilbertSpace(5, 1.0 / 6.0)
        grid = TimeGrid(1.0, 8)
        marks = MarkSpace((-1.0, 1.0), (2.0, 2.0))
        g = 0.5 * np.random.default_rng(2).standard_normal((8, 5, 2))
        r1 = poisson_isometry_experiment(g, marks, grid, 1.0, 4000, 5, space)
        assert r1.verdict == PASS
        r2 = compensator_experiment(g, marks, grid, 1.0, 4000, 5, space)
        assert r2.verdict == PASS

    def test_regularization_identity(self):
        A = dirichlet_laplacian(8)
        marks = MarkSpace((-1.0, 1.0), (2.0, 2.0))
        report = regularization_identity_experiment(A, marks, np.array([1.0, 0.5]),
                                                    10, 3, dt=2.0**-5, T=0.25, epsilon=0.3)
        assert report.verdict == PASS
        assert max(report.summary.values()) <= 1e-9


class TestReportSerialization:
    def test_stability_records_skip_undefined_times(self):
        spec1, spec2, _ = additive_pair(n=7)
        report = stability_estimate_experiment(spec1, spec2, 30, 3, dt=2.0**-6)
        labels = [rec.label for rec in report.records()]
        assert labels.count("N") == int(np.isfinite(report.n_values).sum())

    def test_contraction_records_carry_per_time_verdicts(self):
        spec = make_cubic_spec(n=7, T=0.5, f_coeffs=(0.0, 0.5, 0.0, 1.0), eta=0.0,
                               alpha=0.8)
        u0_b = spec.u0 + 0.1 * spec.A.eigenvectors[:, 1]
        report = contraction_experiment(spec, spec.u0, u0_b, 20, 3, dt=2.0**-6)
        rows = [rec for rec in report.records() if rec.label == "mean_sq_gap"]
        assert len(rows) == report.times.size
        assert all(rec.verdict in (PASS, "FAIL") for rec in rows)
