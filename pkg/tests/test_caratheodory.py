"""Running-cost integration along fixed curves.

Closed-form oracles: decoupled constant integrands, the scalar linear ODE
u' = l - u, and tanh for the separable nonlinear case; the propagator and
RK4 paths cross-check each other on random linear systems.
"""

import numpy as np
import pytest

from hjweave.caratheodory import (
    GeneralCoupledLagrangian,
    Trajectory,
    integrate_general,
    integrate_linear,
)
from hjweave.coupling import CouplingMatrix, matrix_exponential
from hjweave.errors import AccuracyError, InvalidInputError
from hjweave.lagrangians import quadratic_kinetic

from conftest import random_cooperative_irreducible

RNG_SEED = 13


def random_trajectory(rng, t, n, dim, scale=1.0):
    """Smooth random curve (low Fourier modes + drift, velocities O(scale))."""
    lam = np.linspace(0.0, 1.0, n + 1)[:, None]
    start = rng.normal(scale=scale, size=dim)
    end = rng.normal(scale=scale, size=dim)
    nodes = (1 - lam) * start + lam * end
    for k in range(1, 5):
        coeff = rng.normal(scale=scale / k**2, size=dim)
        nodes = nodes + np.sin(np.pi * k * lam) * coeff
    return Trajectory(t=t, nodes=nodes)


# ======================================================================
#  Trajectory container
# ======================================================================

class TestTrajectory:
    def test_straight_line_velocities(self):
        traj = Trajectory.straight_line([0.0], [2.0], t=4.0, n_segments=8)
        np.testing.assert_allclose(traj.velocities, 0.5)
        np.testing.assert_allclose(traj.at(1.0), [0.5])

    def test_rejects_single_node(self):
        with pytest.raises(InvalidInputError):
            Trajectory(t=1.0, nodes=np.zeros((1, 1)))

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidInputError):
            Trajectory(t=1.0, nodes=np.array([[0.0], [np.inf]]))


# ======================================================================
#  integrate_linear — propagator path
# ======================================================================

class TestIntegrateLinear:
    def test_constant_curve_decoupled(self):
        # A = 0, constant curve: u_i(s) = a_i + L^i(x0, 0) s exactly
        lags = (quadratic_kinetic(1, potential="harmonic", omega2=2.0),
                quadratic_kinetic(1, potential="cosine", amplitude=0.5, wavenumber=[1.0]))
        x0 = 0.8
        traj = Trajectory.straight_line([x0], [x0], t=2.0, n_segments=50)
        a = np.array([1.0, -0.5])
        state = integrate_linear(np.zeros((2, 2)), lags, traj, a)
        levels = np.array([lag.value(np.array([x0]), np.array([0.0])) for lag in lags])
        expected = a[None, :] + state.times[:, None] * levels[None, :]
        np.testing.assert_allclose(state.samples, expected, atol=1e-13)

    def test_scalar_linear_ode_closed_form(self):
        # u' = l - u from u(0) = a: u(s) = l + (a - l) e^{-s}
        lag = quadratic_kinetic(1)  # kinetic only: constant along a straight line
        traj = Trajectory.straight_line([0.0], [2.0], t=1.0, n_segments=1000)
        level = float(lag.value(np.zeros(1), traj.velocities[0]))
        a = np.array([3.0])
        state = integrate_linear(np.array([[1.0]]), (lag,), traj, a)
        exact = level + (a[0] - level) * np.exp(-state.times)
        assert np.max(np.abs(state.samples[:, 0] - exact)) < 1e-6

    def test_propagator_vs_rk4_random_system(self):
        # kinetic-only forcing is constant per segment, so the midpoint
        # propagator and aligned RK4 agree to the documented 1e-8
        rng = np.random.default_rng(RNG_SEED)
        mat = random_cooperative_irreducible(rng, 2, scale=1.0)
        lags = (quadratic_kinetic(1, mass=1.0), quadratic_kinetic(1, mass=2.5))
        traj = random_trajectory(rng, t=0.5, n=1000, dim=1, scale=0.25)
        a = rng.normal(size=2)
        state = integrate_linear(mat, lags, traj, a)
        equations = [GeneralCoupledLagrangian.linear(lags[i], mat.entries[i])
                     for i in range(2)]
        rk4 = integrate_general(equations, (traj, traj), a)
        assert np.max(np.abs(state.samples - rk4.samples)) < 1e-8

    def test_linearity_in_boundary_data(self):
        rng = np.random.default_rng(RNG_SEED)
        mat = random_cooperative_irreducible(rng, 3, scale=2.0)
        lags = tuple(quadratic_kinetic(1, mass=m) for m in (1.0, 2.0, 0.5))
        traj = random_trajectory(rng, t=1.0, n=64, dim=1)
        a = rng.normal(size=3)
        with_a = integrate_linear(mat, lags, traj, a)
        base = integrate_linear(mat, lags, traj, np.zeros(3))
        for k, s in enumerate(with_a.times):
            shift = matrix_exponential(mat, -s) @ a
            assert np.max(np.abs(with_a.samples[k] - base.samples[k] - shift)) < 1e-10

    def test_forward_backward_duality(self, symmetric_coupling, free_particles):
        rng = np.random.default_rng(RNG_SEED)
        traj = random_trajectory(rng, t=1.0, n=128, dim=1)
        a = np.array([0.7, -0.2])
        forward = integrate_linear(symmetric_coupling, free_particles, traj, a)
        back = integrate_linear(symmetric_coupling, free_particles, traj,
                                forward.terminal, mode="terminal")
        assert np.max(np.abs(back.initial - a)) < 1e-8

    def test_grid_refinement_second_order(self, symmetric_coupling):
        # harmonic potential makes the forcing vary along segments
        lags = (quadratic_kinetic(1, potential="harmonic", omega2=1.0),) * 2
        a = np.array([0.3, 0.6])

        def terminal_value(n):
            traj = Trajectory.straight_line([-1.0], [1.5], t=1.0, n_segments=n)
            return integrate_linear(symmetric_coupling, lags, traj, a).terminal

        reference = terminal_value(4096)
        errs = [np.max(np.abs(terminal_value(n) - reference)) for n in (64, 128, 256)]
        rates = [errs[i] / errs[i + 1] for i in range(2)]
        assert all(3.3 < r < 4.7 for r in rates)

    def test_dimension_mismatch(self, symmetric_coupling):
        traj = Trajectory.straight_line([0.0], [1.0], t=1.0, n_segments=4)
        with pytest.raises(InvalidInputError):
            integrate_linear(symmetric_coupling, (quadratic_kinetic(1),), traj, [0.0, 0.0])
        with pytest.raises(InvalidInputError):
            integrate_linear(symmetric_coupling,
                             (quadratic_kinetic(2), quadratic_kinetic(2)), traj, [0.0, 0.0])


# ======================================================================
#  integrate_general — nonlinear couplings by RK4
# ======================================================================

class TestIntegrateGeneral:
    def test_tanh_closed_form(self):
        # u' = 1 - u^2, u(0) = 0: u(s) = tanh(s); curve is irrelevant
        eq = GeneralCoupledLagrangian(dim=1, value=lambda x, v, u: 1.0 - u[0] ** 2,
                                      k_coupling=2.0)
        traj = Trajectory.straight_line([0.0], [1.0], t=2.0, n_segments=100)
        state = integrate_general([eq], [traj], [0.0])
        assert np.max(np.abs(state.samples[:, 0] - np.tanh(state.times))) < 1e-7

    def test_linear_reduction_matches_propagator(self, symmetric_coupling):
        rng = np.random.default_rng(RNG_SEED)
        lags = (quadratic_kinetic(1), quadratic_kinetic(1, mass=2.0))
        traj = random_trajectory(rng, t=0.5, n=2000, dim=1, scale=0.2)
        a = np.array([0.4, -0.1])
        equations = [GeneralCoupledLagrangian.linear(lags[i], symmetric_coupling.entries[i])
                     for i in range(2)]
        general = integrate_general(equations, (traj, traj), a)
        linear = integrate_linear(symmetric_coupling, lags, traj, a)
        assert np.max(np.abs(general.samples - linear.samples)) < 1e-8

    def test_distinct_curves_per_equation(self):
        # each equation integrates its own curve's kinetic energy
        rng = np.random.default_rng(RNG_SEED)
        lag = quadratic_kinetic(1)
        eqs = [GeneralCoupledLagrangian(1, lambda x, v, u: 0.5 * float(v @ v), 0.0)
               for _ in range(2)]
        trajs = [random_trajectory(rng, t=1.0, n=40, dim=1) for _ in range(2)]
        state = integrate_general(eqs, trajs, [0.0, 0.0])
        for i in range(2):
            action = 0.5 * np.sum(trajs[i].velocities**2) * trajs[i].step
            assert abs(state.terminal[i] - action) < 1e-10

    def test_rk4_order_four(self):
        # error against tanh shrinks ~16x per step halving
        from hjweave.caratheodory import _rk4_pass

        eq = GeneralCoupledLagrangian(dim=1, value=lambda x, v, u: 1.0 - u[0] ** 2,
                                      k_coupling=2.0)
        traj = Trajectory.straight_line([0.0], [1.0], t=2.0, n_segments=8)
        exact = np.tanh(2.0)
        errs = [abs(_rk4_pass([eq], [traj], np.zeros(1), sub)[-1, 0] - exact)
                for sub in (1, 2, 4)]
        rates = [errs[i] / errs[i + 1] for i in range(2)]
        assert all(10.0 < r < 22.0 for r in rates)

    def test_accuracy_error_when_budget_exhausted(self):
        eq = GeneralCoupledLagrangian(dim=1, value=lambda x, v, u: 1.0 - u[0] ** 2,
                                      k_coupling=2.0)
        traj = Trajectory.straight_line([0.0], [1.0], t=2.0, n_segments=4)
        with pytest.raises(AccuracyError):
            integrate_general([eq], [traj], [0.0], tol=0.0)

    def test_shape_mismatches(self):
        eq = GeneralCoupledLagrangian(dim=1, value=lambda x, v, u: 0.0, k_coupling=0.0)
        traj = Trajectory.straight_line([0.0], [1.0], t=1.0, n_segments=4)
        other = Trajectory.straight_line([0.0], [1.0], t=1.0, n_segments=8)
        with pytest.raises(InvalidInputError):
            integrate_general([eq, eq], [traj, other], [0.0, 0.0])
        with pytest.raises(InvalidInputError):
            integrate_general([eq], [traj], [0.0, 0.0])
