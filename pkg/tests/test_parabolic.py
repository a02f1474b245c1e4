import math

import mpmath
import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp

import robinlab.assembly as asm
import robinlab.parabolic as par
from robinlab.coeff import constant_field, sgn_drift_field
from robinlab.mesh import build_interval_mesh, build_polygon_mesh

SQUARE = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]


def linear_drift_field(d=0.2, beta=0.1):
    """b = (0.3 x1, 0): Lipschitz drift with |b| <= 0.3 and div b = 0.3 on the square."""
    from robinlab.coeff import CoefficientField

    return CoefficientField(
        dim=2,
        a=lambda x: np.eye(2),
        b=lambda x: np.array([0.3 * x[0], 0.0]),
        c=lambda x: np.zeros(2),
        d=lambda x: d,
        beta=lambda x: beta,
        sup_bounds={"a": 1.0, "b": 0.3, "c": 0.0, "d": d, "beta": beta},
        b_lipschitz=0.3,
        name="linear_drift",
    )


@pytest.fixture(scope="module")
def heat_form():
    mesh = build_interval_mesh(0.0, 1.0, 32)
    return asm.assemble_robin_form(mesh, constant_field(1))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            par.EvolutionConfig("rk4", 0.1, 1.0)
        with pytest.raises(ValueError):
            par.EvolutionConfig("euler", 0.0, 1.0)
        with pytest.raises(ValueError):
            par.EvolutionConfig("euler", 0.1, 0.05)
        with pytest.raises(ValueError):
            par.EvolutionConfig("euler", 0.1, 1.0, boundary_model="dirichlet")

    def test_theta_values(self):
        assert par.EvolutionConfig("euler", 0.1, 1.0).theta == 1.0
        assert par.EvolutionConfig("cn", 0.1, 1.0).theta == 0.5


class TestStep:
    def test_constants_stationary(self, heat_form):
        cfg = par.EvolutionConfig("euler", 0.01, 0.1)
        one = np.ones(heat_form.n_dofs)
        out = par.step(heat_form, heat_form.M_interior, one, cfg)
        assert np.abs(out - 1.0).max() <= 1e-12

    def test_mass_conservation_divergence_form(self, heat_form, rng):
        cfg = par.EvolutionConfig("euler", 0.05, 0.1)
        u = rng.standard_normal(heat_form.n_dofs)
        out = par.step(heat_form, heat_form.M_interior, u, cfg)
        one = np.ones_like(u)
        before = one @ (heat_form.M_interior @ u)
        after = one @ (heat_form.M_interior @ out)
        assert abs(before - after) <= 1e-12 * max(abs(before), 1.0)

    def test_eigenvector_decay_factor(self, heat_form):
        # oracle: generalized eigensolve of the (A, M) pencil
        cfg = par.EvolutionConfig("euler", 0.01, 0.1)
        lam, V = sla.eigh(heat_form.A.toarray(), heat_form.M_interior.toarray())
        lam1, v1 = lam[1], V[:, 1]
        out = par.step(heat_form, heat_form.M_interior, v1, cfg)
        assert np.abs(out - v1 / (1.0 + cfg.dt * lam1)).max() <= 1e-10

    def test_crank_nicolson_eigen_factor(self, heat_form):
        cfg = par.EvolutionConfig("cn", 0.01, 0.1)
        lam, V = sla.eigh(heat_form.A.toarray(), heat_form.M_interior.toarray())
        lam2, v2 = lam[2], V[:, 2]
        out = par.step(heat_form, heat_form.M_interior, v2, cfg)
        expected = v2 * (1.0 - 0.5 * cfg.dt * lam2) / (1.0 + 0.5 * cfg.dt * lam2)
        assert np.abs(out - expected).max() <= 1e-10


class TestEvolve:
    def test_shifted_coercive_system_decays(self, heat_form):
        cfg = par.EvolutionConfig("euler", 0.05, 8.0)
        u0 = np.sin(np.linspace(0.0, 3.0, heat_form.n_dofs))
        traj = par.evolve(heat_form, cfg, u0, shifted_generator=True, shift=1.0)
        norms = traj.l2_norms()
        assert norms[-1] <= 1e-3 * norms[0]

    def test_wentzell_constant_trajectory(self):
        mesh = build_polygon_mesh(SQUARE, 0.25)
        form = asm.assemble_robin_form(mesh, constant_field(2))
        cfg = par.EvolutionConfig("euler", 0.02, 0.2, boundary_model="wentzell")
        traj = par.evolve(form, cfg, np.ones(form.n_dofs))
        assert np.abs(traj.states - 1.0).max() <= 1e-11

    def test_discrete_semigroup_property(self, heat_form, rng):
        u0 = rng.standard_normal(heat_form.n_dofs)
        cfg_half = par.EvolutionConfig("euler", 0.02, 0.1)
        cfg_full = par.EvolutionConfig("euler", 0.02, 0.2)
        first = par.evolve(heat_form, cfg_half, u0)
        second = par.evolve(heat_form, cfg_half, first.final)
        both = par.evolve(heat_form, cfg_full, u0)
        assert np.abs(second.final - both.final).max() <= 1e-12

    def test_l2_dissipativity_every_step(self, rng):
        mesh = build_interval_mesh(0.0, 1.0, 40)
        field = constant_field(1, b=0.4, c=-0.2, d=-0.3, beta=-0.6)
        form = asm.assemble_robin_form(mesh, field)
        omega = asm.find_coercivity_shift(form, 0.05)
        cfg = par.EvolutionConfig("euler", 0.02, 0.5)
        for _ in range(5):
            u0 = rng.standard_normal(form.n_dofs)
            traj = par.evolve(form, cfg, u0, shifted_generator=True, shift=omega)
            norms = traj.l2_norms()
            assert np.all(np.diff(norms) <= 1e-12 * norms[0])


class TestPositivity:
    def test_is_m_matrix_classifier(self):
        good = sp.csr_matrix(np.array([[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]]))
        assert par.is_m_matrix(good)
        bad_sign = sp.csr_matrix(np.array([[2.0, 0.5], [-1.0, 2.0]]))
        assert not par.is_m_matrix(bad_sign)
        bad_diag = sp.csr_matrix(np.array([[-1.0, 0.0], [0.0, 2.0]]))
        assert not par.is_m_matrix(bad_diag)
        singular = sp.csr_matrix(np.array([[1.0, -1.0], [-1.0, 1.0]]))
        assert not par.is_m_matrix(singular)

    def test_threshold_unbounded_for_pure_diffusion(self, heat_form):
        assert par.positivity_dt_threshold(heat_form) == 1e6

    def test_threshold_zero_for_strong_convection(self):
        mesh = build_interval_mesh(0.0, 1.0, 16)
        form = asm.assemble_robin_form(mesh, constant_field(1, b=100.0, b_lipschitz=0.0))
        assert par.positivity_dt_threshold(form) == 0.0

    @pytest.mark.parametrize("model", ["robin", "wentzell"])
    def test_lumped_euler_preserves_positivity(self, model, rng):
        mesh = build_polygon_mesh(SQUARE, 0.25)
        field = constant_field(2, d=0.1, beta=0.2)
        form = asm.assemble_robin_form(mesh, field)
        thr = par.positivity_dt_threshold(form, boundary_model=model)
        dt = min(0.9 * thr, 0.05)
        cfg = par.EvolutionConfig("euler", dt, 20 * dt, boundary_model=model)
        assert par.positivity_step_certified(form, cfg)
        for _ in range(10):
            u0 = rng.uniform(0.0, 1.0, size=form.n_dofs)
            traj = par.evolve(form, cfg, u0, lumped=True)
            assert traj.states.min() >= -1e-12 * np.abs(u0).max()

    def test_crank_nicolson_threshold_is_finite(self, heat_form):
        thr = par.positivity_dt_threshold(heat_form, scheme="cn")
        assert 0.0 < thr < 1e6
        cfg_ok = par.EvolutionConfig("cn", 0.9 * thr, 1.8 * thr)
        assert par.positivity_step_certified(heat_form, cfg_ok)
        cfg_bad = par.EvolutionConfig("cn", 4.0 * thr, 8.0 * thr)
        assert not par.positivity_step_certified(heat_form, cfg_bad)


class TestLinftyContraction:
    def test_neumann_heat_flow_contracts(self, heat_form, rng):
        cfg = par.EvolutionConfig("euler", 0.01, 0.3)
        growth = par.check_linfty_contraction(heat_form, cfg, omega=0.0, trials=5, rng=rng)
        assert growth <= 1.0 + 1e-8

    def test_submarkovian_shift_controls_growth(self, rng):
        mesh = build_polygon_mesh(SQUARE, 1.0 / 16)
        field = linear_drift_field()
        form = asm.assemble_robin_form(mesh, field)
        cfg = par.EvolutionConfig("euler", 0.01, 0.5, boundary_model="wentzell")
        growth = par.check_linfty_contraction(form, cfg, trials=5, rng=rng)
        assert growth <= 1.0 + 10.0 * cfg.dt
        # the derived shift is max(0.2 + 0.3, 0.1 + 0.3)
        assert par._submarkovian_shift(field) == 0.5

    def test_missing_lipschitz_bound_raises(self, rng):
        mesh = build_interval_mesh(-1.0, 1.0, 32)
        form = asm.assemble_robin_form(mesh, sgn_drift_field())
        cfg = par.EvolutionConfig("euler", 0.01, 0.1, boundary_model="wentzell")
        with pytest.raises(ValueError):
            par.check_linfty_contraction(form, cfg, trials=1, rng=rng)

    def test_sgn_drift_defeats_every_tested_shift(self):
        # the discrete L-infinity growth rate at the drift kink scales like
        # 2/h, so a fine mesh defeats each fixed shift
        mesh = build_interval_mesh(-1.0, 1.0, 800)
        form = asm.assemble_robin_form(mesh, sgn_drift_field())
        cfg = par.EvolutionConfig("euler", 1e-5, 3e-5, boundary_model="wentzell")
        for omega in (1.0, 10.0, 100.0):
            factor, witness = par.linfty_step_growth(form, cfg, omega=omega)
            assert factor > 1.0 + 1e-3
            growth = par.check_linfty_contraction(
                form, cfg, omega=omega, initial_states=[witness]
            )
            assert growth > 1.0 + 1e-3


class TestLpContraction:
    def test_symmetric_submarkovian_case(self, rng):
        mesh = build_interval_mesh(0.0, 1.0, 32)
        form = asm.assemble_robin_form(mesh, constant_field(1, d=0.0, beta=0.0))
        cfg = par.EvolutionConfig("euler", 0.02, 0.4)
        rows, omega2 = par.check_lp_contraction(form, cfg, [1.5, 3.0, 4.0], trials=5, rng=rng)
        assert omega2 <= 1e-8
        for row in rows:
            assert row.omega_fitted <= 1e-8
            assert row.within_envelope

    def test_coercive_shifted_rate_near_zero(self, rng):
        mesh = build_interval_mesh(0.0, 1.0, 32)
        form = asm.assemble_robin_form(mesh, constant_field(1, d=1.0, beta=0.5))
        cfg = par.EvolutionConfig("euler", 0.02, 0.4)
        _, omega2 = par.check_lp_contraction(form, cfg, [2.0], trials=5, rng=rng)
        assert omega2 <= 1e-8

    def test_p_validation(self, heat_form, rng):
        cfg = par.EvolutionConfig("euler", 0.02, 0.1)
        with pytest.raises(ValueError):
            par.check_lp_contraction(heat_form, cfg, [1.0], trials=1, rng=rng)


class TestKernelProbe:
    def test_symmetric_kernel(self):
        mesh = build_interval_mesh(0.0, 1.0, 24)
        form = asm.assemble_robin_form(mesh, constant_field(1, beta=0.3))
        cfg = par.EvolutionConfig("euler", 0.005, 1.0)
        y1, y2 = 5, 17
        p1 = par.probe_kernel(form, cfg, y1, [0.05], 0.5)
        p2 = par.probe_kernel(form, cfg, y2, [0.05], 0.5)
        assert abs(p1.columns[0].values[y2] - p2.columns[0].values[y1]) <= 1e-8

    def test_positive_columns_and_conservation(self):
        mesh = build_interval_mesh(0.0, 1.0, 24)
        form = asm.assemble_robin_form(mesh, constant_field(1))
        cfg = par.EvolutionConfig("euler", 0.005, 1.0)
        probe = par.probe_kernel(form, cfg, 12, [0.02, 0.1, 0.3], 0.5)
        for col, mass in zip(probe.columns, probe.mass_integrals):
            assert col.values.min() >= -1e-12
            assert abs(mass - 1.0) <= 1e-10
        assert probe.modulus_bounded
        assert probe.holder_modulus[0] >= probe.holder_modulus[-1]

    def test_time_zero_rejected(self, heat_form):
        cfg = par.EvolutionConfig("euler", 0.005, 1.0)
        with pytest.raises(ValueError):
            par.probe_kernel(heat_form, cfg, 3, [0.0, 0.1], 0.5)


class TestCounterexample:
    def test_alpha_sequence(self):
        assert abs(par.alpha_n(1) - math.sqrt(0.5)) <= 1e-15
        vals = [par.alpha_n(n) for n in range(1, 50)]
        assert all(a > b for a, b in zip(vals[:-1], vals[1:]))

    def test_bump_boundary_values_exact(self):
        for n in (1, 3, 10, 277):
            a = par.alpha_n(n)
            assert abs(par._bump(n, np.array([a]))[0] - 1.0) <= 1e-12
            assert par._bump(n, np.array([0.0]))[0] == 2.0

    def test_escalation_reaches_n3_at_omega_one(self):
        (rep,) = par.verify_counterexample([1.0])
        assert rep.n == 3
        assert abs(rep.alpha_n - math.sqrt(1.0 - 2.0 ** (-1.0 / 3.0))) <= 1e-15
        assert rep.bound == -2.0 + 4.0 * rep.alpha_n
        assert rep.verdict == "violated"

    def test_omega_ten_index_matches_asymptotics(self):
        (rep,) = par.verify_counterexample([10.0])
        # asymptotically alpha_n ~ sqrt(ln 2 / n) puts n near 277
        assert rep.n == 277
        assert par.alpha_n(rep.n) < 0.05 <= par.alpha_n(rep.n - 1)
        assert rep.form_value < 0.0

    def test_quadrature_against_mpmath_oracle(self):
        # independent oracle: high-precision quadrature of the truncation functional
        omega, n = 1.0, 3
        a = par.alpha_n(n)
        with mpmath.workdps(40):
            u = lambda x: 2 * (1 - x * x) ** n
            up = lambda x: -4 * n * x * (1 - x * x) ** (n - 1)
            exact = mpmath.quad(lambda x: up(x) + omega * u(x), [0, a])
            exact = 2 * float(exact)
        (rep,) = par.verify_counterexample([omega])
        assert abs(rep.form_value - exact) <= 1e-10

    def test_sign_part_telescopes_to_minus_two(self):
        # int sgn(x) u_n'(x) over [-a, a] equals 2 (u_n(a) - u_n(0)) = -2
        for omega in (1.0, 10.0):
            (rep,) = par.verify_counterexample([omega])
            (rep0,) = par.verify_counterexample([0.0])
            assert abs(rep0.form_value + 2.0) <= 1e-10

    def test_all_shifts_violated_within_bound(self):
        reports = par.verify_counterexample([1.0, 10.0, 100.0])
        for rep in reports:
            assert 4.0 * rep.omega * rep.alpha_n < 2.0
            assert rep.form_value <= rep.bound + 1e-8
            assert rep.form_value < 0.0
            assert rep.verdict == "violated"

    def test_absurd_omega_exceeds_cap(self):
        with pytest.raises(ValueError):
            par.verify_counterexample([10000.0])


class TestInvarianceFormValue:
    def test_submarkovian_pairs_nonnegative(self, rng):
        mesh = build_interval_mesh(0.0, 1.0, 64)
        form = asm.assemble_robin_form(mesh, constant_field(1, d=0.2, beta=0.1))
        omega = 0.5
        for _ in range(20):
            u = rng.uniform(0.0, 3.0, size=form.n_dofs)
            val = par.invariance_form_value(form, u, omega, boundary_model="wentzell")
            assert val >= -1e-10

    def test_sgn_drift_pair_goes_negative(self):
        mesh = build_interval_mesh(-1.0, 1.0, 2000)
        form = asm.assemble_robin_form(mesh, sgn_drift_field())
        omega = 1.0
        n = 3
        u = par._bump(n, mesh.vertices[:, 0])
        val = par.invariance_form_value(form, u, omega, boundary_model="wentzell")
        (rep,) = par.verify_counterexample([omega])
        # the form value on the truncation pair is the reduced functional
        # minus omega * measure of the superlevel set
        continuum = rep.form_value - 2.0 * omega * rep.alpha_n
        assert val < 0.0
        assert abs(val - continuum) <= 0.05
