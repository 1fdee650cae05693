import numpy as np
import pytest
from numpy.testing import assert_allclose

from gibbslab import exact
from gibbslab import lattice as lt
from gibbslab.errors import (
    BudgetExceededError,
    NotPositiveDefiniteError,
    SolverDivergedError,
)

GRID2 = exact.GridSpec(half_width=6.0, points_per_site=96)


def _measure(model, **kw):
    return exact.build_grid_measure(model, exact.GridSpec(**kw))


class TestGridMeasure:
    def test_single_site_variance(self, single_site_ou):
        gm = _measure(single_site_ou, half_width=8.0, points_per_site=256)
        assert_allclose(exact.variance(gm, 0), 1.0, atol=1e-3)

    def test_two_site_covariance(self, gaussian_2site):
        gm = _measure(gaussian_2site, half_width=6.0, points_per_site=96)
        assert_allclose(exact.cov(gm, 0, 1), 0.2 / (2 * 0.96), atol=1e-3)

    def test_field_shift_keeps_normalization(self, gaussian_2site):
        shifted = lt.make_model(
            gaussian_2site.lattice,
            gaussian_2site.potentials,
            gaussian_2site.interaction,
            field=[0.7, 0.0],
        )
        gm = _measure(shifted, half_width=6.0, points_per_site=64)
        assert_allclose(gm.weights.sum(), 1.0, atol=1e-12)
        assert gm.weights.min() >= 0.0

    def test_budget(self, gaussian_2site):
        with pytest.raises(BudgetExceededError):
            _measure(gaussian_2site, half_width=6.0, points_per_site=512,
                     max_states=1000)

    def test_default_half_width_from_margin(self, gaussian_2site):
        spec = exact.GridSpec(points_per_site=32)
        assert_allclose(spec.resolved_half_width(gaussian_2site),
                        6.0 / np.sqrt(0.8))


class TestMoments:
    def test_symmetric_model_mean_zero(self, gaussian_3site):
        gm = _measure(gaussian_3site, half_width=6.0, points_per_site=48)
        for s in gaussian_3site.lattice.sites():
            assert abs(exact.moments(gm, s)) <= 1e-10

    def test_three_site_long_covariance(self, gaussian_3site):
        gm = _measure(gaussian_3site, half_width=6.0, points_per_site=48)
        assert_allclose(exact.cov(gm, 0, 2), 0.04 / (2 * 0.92), atol=1e-3)

    def test_two_site_variance(self, gaussian_2site):
        gm = _measure(gaussian_2site, half_width=6.0, points_per_site=96)
        assert_allclose(exact.variance(gm, 0), 0.5 / 0.96, atol=1e-3)

    def test_mean_with_field(self):
        model = lt.make_model(
            lt.Lattice.box((1,)), lt.GAUSSIAN, [[0.5]], field=[0.3]
        )
        gm = _measure(model, half_width=9.0, points_per_site=256)
        # mean = -(2M)^-1 s = -0.3
        assert_allclose(exact.moments(gm, 0), -0.3, atol=1e-3)

    def test_two_dim_site_naming(self):
        lam = lt.Lattice.box((2, 1))
        model = lt.make_model(lam, lt.GAUSSIAN, [[1.0, -0.2], [-0.2, 1.0]])
        gm = _measure(model, half_width=6.0, points_per_site=64)
        # a lone coordinate tuple names one site; a pair of tuples, two
        second = exact.moments(gm, ((0, 0), (1, 0)))
        assert_allclose(second, 0.2 / (2 * 0.96), atol=1e-3)
        assert_allclose(exact.moments(gm, (0, 0)), 0.0, atol=1e-10)


class TestGenerator:
    def test_constant_has_zero_energy(self, gaussian_2site):
        gm = _measure(gaussian_2site, half_width=6.0, points_per_site=48)
        gen = exact.build_generator(gm)
        const = np.ones_like(gm.weights)
        assert exact.dirichlet(gen, const) == 0.0

    def test_coordinate_energy_is_one(self, single_site_ou):
        gm = _measure(single_site_ou, half_width=8.0, points_per_site=256)
        gen = exact.build_generator(gm)
        f = exact.coordinate(gm, 0)
        assert_allclose(exact.dirichlet(gen, f), 1.0, atol=5e-3)

    def test_sum_coordinate_energy(self, gaussian_2site):
        gm = _measure(gaussian_2site, half_width=6.0, points_per_site=96)
        gen = exact.build_generator(gm)
        f = exact.coordinate(gm, 0) + exact.coordinate(gm, 1)
        assert_allclose(exact.dirichlet(gen, f), 2.0, atol=2e-2)

    def test_stiffness_matches_dirichlet(self, gaussian_2site):
        gm = _measure(gaussian_2site, half_width=6.0, points_per_site=24)
        gen = exact.build_generator(gm)
        rng = np.random.default_rng(1)
        f = rng.normal(size=gm.weights.shape)
        g = rng.normal(size=gm.weights.shape)
        assert_allclose(
            float((g * exact.apply_stiffness(gen, f)).sum()),
            exact.dirichlet(gen, f, g),
            rtol=1e-10,
        )


class TestSpectralGap:
    def test_single_site_ou(self, single_site_ou):
        gm = _measure(single_site_ou, half_width=8.0, points_per_site=256)
        est = exact.spectral_gap(exact.build_generator(gm))
        assert abs(est.gap - 1.0) <= 0.01

    def test_two_site(self, gaussian_2site):
        gm = _measure(gaussian_2site, half_width=6.0, points_per_site=96)
        est = exact.spectral_gap(exact.build_generator(gm))
        assert abs(est.gap - 1.6) <= 0.02 * 1.6

    def test_tensorization(self):
        model = lt.make_model(
            lt.Lattice.box((2,)), lt.GAUSSIAN, [[0.5, 0.0], [0.0, 2.0]]
        )
        gm = _measure(model, half_width=8.0, points_per_site=64)
        est = exact.spectral_gap(exact.build_generator(gm))
        # product measure: the gap is the smaller of the two site gaps
        assert_allclose(est.gap, 1.0, rtol=0.02)

    def test_three_axis_grid_uses_deflated_solver(self, gaussian_3site):
        gm = _measure(gaussian_3site, half_width=5.5, points_per_site=20)
        est = exact.spectral_gap(exact.build_generator(gm))
        assert est.method == "eigensolve-lobpcg"
        oracle = exact.gaussian_oracle_for_model(gaussian_3site).gap
        assert abs(est.gap - oracle) <= 0.10 * oracle  # coarse-grid tolerance

    def test_convergence_under_doubling(self, gaussian_2site):
        gaps = []
        for n in (24, 48, 96):
            gm = _measure(gaussian_2site, half_width=6.0, points_per_site=n)
            gaps.append(exact.spectral_gap(exact.build_generator(gm)).gap)
        errs = [abs(g - 1.6) for g in gaps]
        assert errs[1] <= 0.6 * errs[0]
        assert errs[2] <= 0.6 * errs[1]


class TestPoisson:
    def test_constant_rhs_gives_zero(self, gaussian_2site):
        gm = _measure(gaussian_2site, half_width=6.0, points_per_site=48)
        gen = exact.build_generator(gm)
        sol = exact.solve_poisson(gen, np.full_like(gm.weights, 3.3))
        assert_allclose(sol.phi, 0.0)
        assert sol.iterations == 0

    def test_linear_solution_coefficients(self, gaussian_2site):
        gm = _measure(gaussian_2site, half_width=6.0, points_per_site=128)
        gen = exact.build_generator(gm)
        sol = exact.solve_poisson(gen, exact.coordinate(gm, 0))
        de = exact.directional_energies(gen, sol)
        # for f = x_0 the potential is linear with coefficients (2M)^-1 e_0
        c = np.linalg.inv(2 * gaussian_2site.interaction)[:, 0]
        assert_allclose(de, c**2, atol=1e-2)

    def test_directional_examples(self, gaussian_2site):
        gm = _measure(gaussian_2site, half_width=6.0, points_per_site=128)
        gen = exact.build_generator(gm)
        sol = exact.solve_poisson(gen, exact.coordinate(gm, 0))
        de = exact.directional_energies(gen, sol)
        assert_allclose(de, [0.271267, 0.010851], atol=1e-2)
        assert_allclose(de.sum(), exact.dirichlet(gen, sol.phi), rtol=1e-10)

    def test_linearity(self, gaussian_2site):
        gm = _measure(gaussian_2site, half_width=6.0, points_per_site=48)
        gen = exact.build_generator(gm)
        f1 = exact.coordinate(gm, 0)
        f2 = exact.coordinate(gm, 1) ** 2
        s1 = exact.solve_poisson(gen, f1, tol=1e-12)
        s2 = exact.solve_poisson(gen, f2, tol=1e-12)
        s12 = exact.solve_poisson(gen, f1 + f2, tol=1e-12)
        diff = s12.phi - (s1.phi + s2.phi)
        err = float(np.sqrt((gm.weights * diff * diff).sum()))
        assert err <= 1e-8

    def test_mean_zero_invariant(self, gaussian_2site):
        gm = _measure(gaussian_2site, half_width=6.0, points_per_site=48)
        gen = exact.build_generator(gm)
        sol = exact.solve_poisson(gen, exact.coordinate(gm, 0))
        assert abs(float((gm.weights * sol.phi).sum())) <= 1e-10

    def test_diverged_reports(self, gaussian_2site):
        gm = _measure(gaussian_2site, half_width=6.0, points_per_site=48)
        gen = exact.build_generator(gm)
        with pytest.raises(SolverDivergedError):
            exact.solve_poisson(gen, exact.coordinate(gm, 0), tol=1e-10,
                                max_iterations=2)


class TestRepresentationIdentity:
    def test_random_pairs(self, gaussian_2site):
        gm = _measure(gaussian_2site, half_width=6.0, points_per_site=48)
        gen = exact.build_generator(gm)
        x0 = exact.coordinate(gm, 0)
        x1 = exact.coordinate(gm, 1)
        rng = np.random.default_rng(7)
        for _ in range(10):
            cf = rng.normal(size=4)
            cg = rng.normal(size=4)
            f = cf[0] * x0 + cf[1] * x1 + cf[2] * x0 * x1 + cf[3] * x0**2
            g = cg[0] * x0 + cg[1] * x1 + cg[2] * x1 * x1 + cg[3] * x0 * x1
            sol = exact.solve_poisson(gen, f, tol=1e-12)
            lhs = exact.cov_functions(gm, f, g)
            rhs = exact.dirichlet(gen, sol.phi, g)
            assert abs(lhs - rhs) <= 1e-8 * abs(lhs)

    def test_resolution_independent(self, gaussian_2site):
        for n in (24, 48):
            gm = _measure(gaussian_2site, half_width=6.0, points_per_site=n)
            gen = exact.build_generator(gm)
            f = exact.coordinate(gm, 0) ** 2
            g = exact.coordinate(gm, 1) ** 2
            sol = exact.solve_poisson(gen, f, tol=1e-12)
            lhs = exact.cov_functions(gm, f, g)
            rhs = exact.dirichlet(gen, sol.phi, g)
            assert lhs > 0.0
            assert abs(lhs - rhs) <= 1e-8 * abs(lhs)


class TestPoincareForms:
    def test_variance_bound_and_dual(self, gaussian_2site):
        gm = _measure(gaussian_2site, half_width=6.0, points_per_site=64)
        gen = exact.build_generator(gm)
        est = exact.spectral_gap(gen)
        x0 = exact.coordinate(gm, 0)
        x1 = exact.coordinate(gm, 1)
        rng = np.random.default_rng(3)
        for _ in range(8):
            c = rng.normal(size=3)
            f = c[0] * x0 + c[1] * x1 + c[2] * x0 * x1
            var_f = exact.cov_functions(gm, f, f)
            e_f = exact.dirichlet(gen, f)
            assert var_f <= e_f / est.gap + 1e-9
            sol = exact.solve_poisson(gen, f, tol=1e-12)
            assert exact.dirichlet(gen, sol.phi) <= e_f / est.gap**2 + 1e-9

    def test_equality_at_gap_eigenfunction(self, gaussian_2site):
        gm = _measure(gaussian_2site, half_width=6.0, points_per_site=64)
        gen = exact.build_generator(gm)
        est = exact.spectral_gap(gen)
        f = est.eigenfunction
        var_f = exact.cov_functions(gm, f, f)
        e_f = exact.dirichlet(gen, f)
        assert_allclose(var_f * est.gap / e_f, 1.0, atol=1e-8)


class TestGaussianOracle:
    def test_identity_case(self):
        orc = exact.gaussian_oracle(0.5 * np.eye(3))
        assert_allclose(orc.covariance, np.eye(3))
        assert_allclose(orc.gap, 1.0)

    def test_two_site_values(self):
        orc = exact.gaussian_oracle([[1.0, -0.2], [-0.2, 1.0]])
        assert_allclose(orc.covariance[0, 1], 0.104167, atol=1e-6)
        assert_allclose(orc.gap, 1.6)

    def test_mean(self):
        orc = exact.gaussian_oracle([[0.5, 0.0], [0.0, 0.5]], s=[1.0, -2.0])
        assert_allclose(orc.mean, [-1.0, 2.0])

    def test_ferromagnetic_tridiagonal_covariance_nonnegative(self):
        n = 64
        m = np.eye(n)
        for i in range(n - 1):
            m[i, i + 1] = m[i + 1, i] = -0.2
        orc = exact.gaussian_oracle(m)
        assert orc.covariance.min() >= 0.0

    def test_not_positive_definite(self):
        with pytest.raises(NotPositiveDefiniteError):
            exact.gaussian_oracle([[1.0, -1.0], [-1.0, 1.0]])

    def test_directional_energies(self):
        orc = exact.gaussian_oracle([[1.0, -0.2], [-0.2, 1.0]])
        assert_allclose(
            orc.directional_energies(0), orc.covariance[:, 0] ** 2
        )


class TestFerromagneticDomination:
    def test_random_sign_three_site(self):
        rng = np.random.default_rng(5)
        lam = lt.Lattice.box((3,))
        for _ in range(4):
            off01, off02, off12 = rng.uniform(-0.25, 0.25, size=3)
            m = np.array(
                [[1.0, off01, off02], [off01, 1.0, off12], [off02, off12, 1.0]]
            )
            model = lt.make_model(lam, lt.GAUSSIAN, m)
            fer = lt.ferromagnetize(model)
            gm = _measure(model, half_width=6.0, points_per_site=40)
            gm_f = _measure(fer, half_width=6.0, points_per_site=40)
            for a in range(3):
                for b in range(3):
                    sa, sb = (a,), (b,)
                    assert abs(exact.cov(gm, sa, sb)) <= exact.cov(
                        gm_f, sa, sb
                    ) + 1e-8


class TestUniformVariance:
    def test_boundary_family_on_quartic_pair(self):
        lam = lt.Lattice.box((2,))
        base = lt.make_model(
            lam,
            lt.QUARTIC,
            [[1.0, -0.15], [-0.15, 1.0]],
            ext_sites=[(-1,), (2,)],
            ext_interaction=[[-0.1, 0.0], [0.0, -0.1]],
            boundary=[0.0, 0.0],
        )
        rng = np.random.default_rng(9)
        variances = []
        for _ in range(12):
            omega = rng.uniform(-10.0, 10.0, size=2)
            model = lt.make_model(
                lam,
                lt.QUARTIC,
                base.interaction,
                ext_sites=base.ext_sites,
                ext_interaction=base.ext_interaction,
                boundary=omega,
            )
            gm = _measure(model, half_width=8.0, points_per_site=72)
            variances.extend([exact.variance(gm, (0,)), exact.variance(gm, (1,))])
        variances = np.array(variances)
        assert variances.max() / np.median(variances) <= 4.0


class TestGridRefinement:
    def test_moments_converge(self, gaussian_2site):
        vals = []
        for n in (16, 32, 64, 128):
            gm = _measure(gaussian_2site, half_width=6.0, points_per_site=n)
            vals.append(exact.cov(gm, 0, 1))
        errs = [abs(v - 0.2 / (2 * 0.96)) for v in vals]
        assert errs[-1] <= errs[0]
        assert errs[-1] <= 1e-6
