import math

import numpy as np
import pytest

from tubeplan.models import AuvParams, DisturbanceBounds, TisiWave, TvsdWave, TvsiWave
from tubeplan.reachability import (
    AuvRelativeDynamics,
    CflError,
    EmptySublevelError,
    Grid,
    InputBounds,
    ValueFunction,
    cfl_limit,
    dissipation_coefficients,
    hamiltonian,
    min_level,
    optimal_tracking_input,
    pde_residual,
    solve_value_function,
    step_backward,
    teb_radii_sd_batch,
    teb_radius_si,
    terminal_value,
)

PARAMS = AuvParams()
ZERO_WAVE = TisiWave(V_box=(0.0, 0.0), A_box=(0.0, 0.0))


def small_grid(horizon=1.0, steps=5):
    return Grid(lo=(-0.2, -0.2, -0.2, -0.2), hi=(0.2, 0.2, 0.2, 0.2),
                shape=(11, 11, 9, 9), horizon=horizon, time_steps=steps)


def zero_disturbance():
    return DisturbanceBounds(d_x=(0, 0), d_z=(0, 0), d_ur=(0, 0), d_wr=(0, 0))


def base_bounds(dist=None):
    return InputBounds(thrust_a=(-70.0, 70.0), thrust_b=(-70.0, 70.0),
                       planner_x=(-0.02, 0.02), planner_z=(-0.02, 0.02),
                       disturbance=dist or DisturbanceBounds())


class ZeroDynamics:
    dim = 4
    channels = ()

    def drift(self, mesh, t):
        return [np.zeros_like(m) for m in mesh]


class ContractiveDynamics:
    """edot = -e, auxiliary states frozen: the value stays at l analytically."""

    dim = 4
    channels = ()

    def drift(self, mesh, t):
        return [-mesh[0], -mesh[1], np.zeros_like(mesh[2]), np.zeros_like(mesh[3])]


class TestGrid:
    def test_invariants(self):
        with pytest.raises(ValueError):
            Grid((-1, -1, -1, -1), (1, 1, 1, 1), (2, 5, 5, 5), 1.0, 5)
        with pytest.raises(ValueError):
            Grid((-1, -1, -1), (1, 1, 1), (5, 5, 5), 1.0, 5)
        with pytest.raises(ValueError):
            Grid((-1, -1, -1, 1), (1, 1, 1, -1), (5, 5, 5, 5), 1.0, 5)

    def test_spacing_and_times(self):
        g = small_grid(horizon=2.0, steps=4)
        np.testing.assert_allclose(g.spacing, [0.04, 0.04, 0.05, 0.05])
        np.testing.assert_allclose(g.times, [0, 0.5, 1.0, 1.5, 2.0])


class TestTerminalValue:
    def test_zero_at_origin(self):
        g = small_grid()
        l = terminal_value(g)
        assert l[5, 5, 0, 0] == 0.0

    def test_three_four_five(self):
        g = Grid((-0.3, -0.4, -1, -1), (0.3, 0.4, 1, 1), (3, 3, 3, 3), 1.0, 2)
        l = terminal_value(g)
        assert l[0, 0, 0, 0] == pytest.approx(0.5)

    def test_minimum_is_min_error_norm(self):
        g = small_grid()
        l = terminal_value(g)
        assert np.min(l) == pytest.approx(0.0)


class TestHamiltonian:
    def test_zero_gradient(self):
        g = small_grid()
        dyn = AuvRelativeDynamics(ZERO_WAVE, PARAMS, base_bounds())
        grads = [np.zeros(g.shape) for _ in range(4)]
        H = hamiltonian(dyn, g.sparse_mesh(), grads, 0.0)
        np.testing.assert_array_equal(H, 0.0)

    def test_sign_rule_error_row(self):
        # gradV = e_x unit: planner worst case 0.02 plus d_x worst case 0.001
        # on top of the eta_u drift of each node
        g = small_grid()
        dyn = AuvRelativeDynamics(ZERO_WAVE, PARAMS, base_bounds())
        grads = [np.zeros(g.shape) for _ in range(4)]
        grads[0][:] = 1.0
        H = hamiltonian(dyn, g.sparse_mesh(), grads, 0.0)
        eta_u = g.axes[2]
        expect = eta_u[None, None, :, None] + 0.021
        np.testing.assert_allclose(H, np.broadcast_to(expect, g.shape), atol=1e-14)

    def test_gradient_flip_identity(self):
        # drift part is odd in the gradient, channel part even
        g = small_grid()
        dyn = AuvRelativeDynamics(ZERO_WAVE, PARAMS, base_bounds())
        rng = np.random.default_rng(0)
        grads = [rng.normal(size=g.shape) for _ in range(4)]
        mesh = g.sparse_mesh()
        Hp = hamiltonian(dyn, mesh, grads, 0.0)
        Hm = hamiltonian(dyn, mesh, [-q for q in grads], 0.0)
        zero = hamiltonian(dyn, mesh, [np.zeros(g.shape)] * 4, 0.0)
        drift_p = hamiltonian(ZeroChannelView(dyn), mesh, grads, 0.0)
        np.testing.assert_allclose(Hp + Hm, (Hp - drift_p) * 2, atol=1e-12)
        np.testing.assert_array_equal(zero, 0.0)


class ZeroChannelView:
    """Same drift as the wrapped dynamics, all input channels removed."""

    def __init__(self, dyn):
        self._dyn = dyn
        self.dim = dyn.dim
        self.channels = ()

    def drift(self, mesh, t):
        return self._dyn.drift(mesh, t)


class TestStepBackward:
    def test_zero_dynamics_slice_unchanged(self):
        g = small_grid()
        l = terminal_value(g)
        V = l + 0.3
        V2 = step_backward(V, l, 1.0, 0.1, g, ZeroDynamics())
        np.testing.assert_array_equal(V2, V)

    def test_cfl_violation_raises(self):
        g = small_grid()
        l = terminal_value(g)
        dyn = AuvRelativeDynamics(ZERO_WAVE, PARAMS, base_bounds())
        alphas = dissipation_coefficients(dyn, g.sparse_mesh(), 1.0)
        limit = cfl_limit(g, alphas, 0.8)
        with pytest.raises(CflError):
            step_backward(l.copy(), l, 1.0, 2.0 * limit, g, dyn)

    def test_freeze_keeps_value_above_terminal(self):
        g = small_grid()
        l = terminal_value(g)
        dyn = AuvRelativeDynamics(ZERO_WAVE, PARAMS, base_bounds())
        alphas = dissipation_coefficients(dyn, g.sparse_mesh(), 1.0)
        dt = 0.5 * cfl_limit(g, alphas, 0.8)
        V = step_backward(l.copy(), l, 1.0, dt, g, dyn)
        assert np.min(V - l) >= 0.0

    def test_contractive_dynamics_stays_at_terminal(self):
        g = small_grid(horizon=1.0, steps=4)
        vf = solve_value_function(g, ZERO_WAVE, PARAMS, base_bounds(),
                                  dynamics=ContractiveDynamics())
        l = terminal_value(g)
        max_dev = max(float(np.max(np.abs(vf.values[k] - l)))
                      for k in range(len(vf.times)))
        assert max_dev <= g.spacing[0]


class TestSolve:
    def test_full_authority_zero_disturbance_holds_origin(self):
        g = small_grid(horizon=2.0, steps=8)
        vf = solve_value_function(g, ZERO_WAVE, PARAMS, base_bounds(zero_disturbance()))
        v0 = vf.value(np.zeros(4), 0.0)
        assert v0 <= 2.0 * np.max(g.spacing)
        assert vf.meta["substeps"] > 0

    def test_monotone_in_input_sets(self):
        # pointwise flux monotonicity in the input boxes makes the discrete
        # solutions ordered exactly (same grid, 4D: fully separable scheme)
        g = Grid((-0.15, -0.15, -0.15, -0.15), (0.15, 0.15, 0.15, 0.15),
                 (9, 9, 7, 7), horizon=1.0, time_steps=4)
        bigger_d = InputBounds((-70, 70), (-70, 70), (-0.02, 0.02), (-0.02, 0.02),
                               DisturbanceBounds(d_x=(-0.01, 0.01), d_z=(-0.01, 0.01),
                                                 d_ur=(-0.01, 0.01), d_wr=(-0.01, 0.01)))
        smaller_us = InputBounds((-7, 7), (-7, 7), (-0.02, 0.02), (-0.02, 0.02),
                                 DisturbanceBounds())
        base, vd, vu = (solve_value_function(g, ZERO_WAVE, PARAMS, b)
                        for b in (base_bounds(), bigger_d, smaller_us))
        tol = 1e-12
        assert np.min(vd.values - base.values) >= -tol
        assert np.min(vu.values - base.values) >= -tol

    def test_pde_residual_at_dissipation_scale(self):
        g = small_grid(horizon=1.0, steps=4)
        vf = solve_value_function(g, ZERO_WAVE, PARAMS, base_bounds())
        dyn = AuvRelativeDynamics(ZERO_WAVE, PARAMS, base_bounds())
        alphas = dissipation_coefficients(dyn, g.sparse_mesh(), 0.5)
        # dissipation magnitude scale: sum_i alpha_i * (max curvature ~ 1/dx)
        scale = sum(float(np.max(a)) for a in alphas)
        assert pde_residual(vf, 1) <= 2.0 * scale + 1e-9


def synthetic_vf(grid, offset=0.0, slices=None):
    l = terminal_value(grid)
    n = len(grid.times)
    if slices is None:
        values = np.repeat((l + offset)[None], n, axis=0)
        values[-1] = l
    else:
        values = slices
    return ValueFunction(grid, grid.times.copy(), values, base_bounds(),
                         ZERO_WAVE, PARAMS)


class TestMinLevelAndRadii:
    def test_min_level_of_terminal(self):
        g = small_grid()
        vf = synthetic_vf(g)
        vf.values[:] = terminal_value(g)[None]
        assert min_level(vf, [0.0, 0.0]) == pytest.approx(0.0, abs=1e-12)

    def test_min_level_constant_shift(self):
        g = small_grid()
        vf = synthetic_vf(g, offset=0.07)
        assert min_level(vf, [0.0, 0.0]) == pytest.approx(0.07, abs=1e-12)

    def test_min_level_outside_grid_rejected(self):
        g = small_grid()
        vf = synthetic_vf(g)
        with pytest.raises(ValueError):
            min_level(vf, [0.5, 0.0])

    def test_radius_zero_at_zero_level(self):
        g = small_grid()
        vf = synthetic_vf(g)
        vf.values[:] = terminal_value(g)[None]
        assert teb_radius_si(vf, 0.0, 0.0) == pytest.approx(0.0)

    def test_radius_monotone_in_level(self):
        g = small_grid()
        vf = synthetic_vf(g)
        vf.values[:] = terminal_value(g)[None]
        radii = [teb_radius_si(vf, v, 0.0) for v in (0.02, 0.05, 0.1, 0.2)]
        assert all(b >= a for a, b in zip(radii, radii[1:]))

    def test_empty_sublevel_raises(self):
        g = small_grid()
        vf = synthetic_vf(g, offset=0.5)
        with pytest.raises(EmptySublevelError):
            teb_radius_si(vf, 0.1, 0.0)

    def test_sd_radius_tracks_depth_dependence(self):
        # synthetic 6D value: l + c(z), radius shrinks where c grows
        g6 = Grid((-0.2, -0.2, -0.1, -0.1, 0.0, 2.0), (0.2, 0.2, 0.1, 0.1, 1.0, 3.0),
                  (9, 9, 3, 3, 5, 5), horizon=1.0, time_steps=2)
        l = terminal_value(g6)
        z_pen = (g6.sparse_mesh()[5] - 2.0) * 0.05
        values = np.repeat((l + z_pen)[None], len(g6.times), axis=0)
        vf = ValueFunction(g6, g6.times.copy(), values, base_bounds(),
                           TvsdWave(0.05, math.pi, 1.0061), PARAMS)
        shallow, deep = teb_radii_sd_batch(vf, 0.08, [0.5, 0.5], [2.0, 2.9], 0.0)
        assert deep <= shallow
        direct = teb_radii_sd_batch(vf, 0.08, [0.5], [2.0], 0.0)[0]
        assert shallow == pytest.approx(direct)


class TestOptimalInput:
    def test_bang_bang_sign_rule(self):
        g = small_grid()
        vf = synthetic_vf(g)
        mesh = g.sparse_mesh()
        # V increasing in eta_u, decreasing in eta_w
        vf.values[:] = np.broadcast_to(mesh[2] - mesh[3], g.shape)[None]
        u = optimal_tracking_input(vf, np.zeros(4), 0.0)
        assert u[0] == vf.bounds.thrust_a[0]
        assert u[1] == vf.bounds.thrust_b[1]

    def test_zero_gradient_gives_center(self):
        g = small_grid()
        vf = synthetic_vf(g)
        vf.values[:] = 1.0
        u = optimal_tracking_input(vf, np.zeros(4), 0.0)
        np.testing.assert_allclose(u, [0.0, 0.0])

    def test_batched_states(self):
        g = small_grid()
        vf = synthetic_vf(g)
        mesh = g.sparse_mesh()
        vf.values[:] = np.broadcast_to(mesh[2], g.shape)[None]
        pts = np.zeros((5, 4))
        u = optimal_tracking_input(vf, pts, 0.0)
        assert u.shape == (5, 2)
        np.testing.assert_allclose(u[:, 0], vf.bounds.thrust_a[0])


def test_value_function_roundtrip(tmp_path):
    g = small_grid(horizon=0.5, steps=2)
    vf = solve_value_function(g, TvsiWave(A_v=0.0167, A_a=0.0523, omega=math.pi,
                                          d_fv=(-0.007, 0.007), d_fa=(-0.02, 0.02)),
                              PARAMS, base_bounds())
    vf.save(tmp_path / "vf")
    back = ValueFunction.load(tmp_path / "vf")
    np.testing.assert_array_equal(back.values, vf.values)
    np.testing.assert_array_equal(back.times, vf.times)
    assert back.grid == vf.grid
    assert back.wave == vf.wave
    assert back.bounds.thrust_a == vf.bounds.thrust_a
