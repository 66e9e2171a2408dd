import math

import numpy as np
import pytest

from tubeplan.collision import Ellipsoid, Polytope, primal_distance_ep
from tubeplan.nlp import SolverOptions
from tubeplan.planner import (
    MpcNlp,
    Solution,
    Scenario,
    VehicleSpec,
    assemble_nlp,
    audit_solution,
    plan_tvsd,
    plan_tvsi,
    reach_time,
    solve_nlp,
)
from tubeplan.tebmap import TebTable


def open_scenario(N=10, start=(-0.08, 2.1), u=0.02, margin=0.0, obstacles=(),
                  M=1, shape=None, region=((-10.0, 10.0), (-8.0, 12.0)),
                  goal=((-9.0, 9.0), (-7.0, 11.0)), reference=(0.1, 2.35)):
    shape = shape or Ellipsoid.point()
    starts = [np.asarray(start) + np.array([0.3 * i, 0.0]) for i in range(M)]
    vehicles = [VehicleSpec(tuple(s), shape, ((-u, u), (-u, u))) for s in starts]
    return Scenario(vehicles=vehicles, region=region, goal=goal,
                    reference=reference, obstacles=list(obstacles), N=N, T_s=0.2,
                    margin=margin, l_max=5)


def lq_oracle(scenario):
    """Closed-form KKT solution of the unconstrained-but-dynamics QP."""
    N = scenario.N
    Q = np.diag(list(scenario.Q))
    R = np.diag(list(scenario.R))
    ref = np.asarray(scenario.reference)
    start = np.asarray(scenario.vehicles[0].start)
    n_p, n_u = 2 * (N + 1), 2 * N
    n = n_p + n_u
    H = np.zeros((n, n))
    f = np.zeros(n)
    for k in range(N + 1):
        H[2 * k:2 * k + 2, 2 * k:2 * k + 2] = 2 * Q
        f[2 * k:2 * k + 2] = -2 * Q @ ref
    for k in range(N):
        o = n_p + 2 * k
        H[o:o + 2, o:o + 2] = 2 * R
    m = 2 * N + 2
    A = np.zeros((m, n))
    b = np.zeros(m)
    for k in range(N):
        A[2 * k:2 * k + 2, 2 * (k + 1):2 * (k + 1) + 2] = np.eye(2)
        A[2 * k:2 * k + 2, 2 * k:2 * k + 2] = -np.eye(2)
        A[2 * k:2 * k + 2, n_p + 2 * k:n_p + 2 * k + 2] = -scenario.T_s * np.eye(2)
    A[2 * N:, 0:2] = np.eye(2)
    b[2 * N:] = start
    KKT = np.block([[H, A.T], [A, np.zeros((m, m))]])
    rhs = np.concatenate([-f, b])
    sol = np.linalg.solve(KKT, rhs)
    return sol[:n_p].reshape(N + 1, 2), sol[n_p:n].reshape(N, 2)


class TestAssembly:
    def test_single_vehicle_counts(self):
        sc = open_scenario(N=10)
        nlp = assemble_nlp(sc, np.zeros(11))
        assert nlp.m_eq == 0
        assert nlp.m_ineq == 4 * 10   # position box rows only
        assert nlp.n == 2 * 10

    def test_dual_variable_count_formula(self):
        obstacle = Polytope.from_rect((0.0, 0.1), (2.2, 2.3))
        l = len(obstacle.b)
        sc = open_scenario(N=7, M=3, obstacles=[obstacle],
                           shape=Ellipsoid(np.diag([0.12, 0.03])))
        nlp = assemble_nlp(sc, np.zeros((3, 8)))
        M, Mo, Np1, n = 3, 1, 8, 2
        dual_count = M * Mo * Np1 * (1 + l + n) + 3 * Np1 * (2 + n)
        assert nlp.n == M * 2 * 7 + dual_count

    def test_gradients_match_directional_differences(self):
        obstacle = Polytope.from_rect((0.0, 0.1), (2.2, 2.3))
        sc = open_scenario(N=4, M=2, obstacles=[obstacle],
                           shape=Ellipsoid(np.diag([0.02, 0.01])), margin=0.01)
        nlp = assemble_nlp(sc, 0.01 * np.ones((2, 5)))
        rng = np.random.default_rng(1)
        x = rng.uniform(-0.5, 0.5, nlp.n)
        h = 1e-6
        for func, vjp, m in ((nlp.eq, nlp.eq_vjp, nlp.m_eq),
                             (nlp.ineq, nlp.ineq_vjp, nlp.m_ineq)):
            for _ in range(5):
                w = rng.normal(size=m)
                v = rng.normal(size=nlp.n)
                fd = (w @ func(x + h * v) - w @ func(x - h * v)) / (2 * h)
                an = vjp(x, w) @ v
                assert abs(fd - an) / max(1.0, abs(fd)) < 1e-5
        f0, g0 = nlp.objective(x)
        for _ in range(5):
            v = rng.normal(size=nlp.n)
            fd = (nlp.objective(x + h * v)[0] - nlp.objective(x - h * v)[0]) / (2 * h)
            assert abs(fd - g0 @ v) / max(1.0, abs(fd)) < 1e-5


class TestSolve:
    def test_matches_lq_oracle(self):
        sc = open_scenario(N=10, u=1.0)
        sol = solve_nlp(assemble_nlp(sc, np.zeros(11)))
        p_star, u_star = lq_oracle(sc)
        assert sol.status == "optimal"
        assert np.max(np.abs(sol.positions(0) - p_star)) < 1e-6
        assert np.max(np.abs(sol.inputs(0) - u_star)) < 1e-6

    def test_warm_start_fixed_point(self):
        sc = open_scenario(N=8)
        nlp = assemble_nlp(sc, np.zeros(9))
        sol = solve_nlp(nlp)
        sol2 = solve_nlp(nlp, warm=sol.x)
        assert sol2.iterations <= 2
        assert np.max(np.abs(sol2.x - sol.x)) < 1e-8

    def test_deterministic(self):
        obstacle = Polytope.from_rect((0.0, 0.06), (2.05, 2.2))
        sc = open_scenario(N=12, obstacles=[obstacle], margin=0.002,
                           region=((-0.25, 0.25), (2.0, 2.5)),
                           goal=((-0.045, 0.245), (2.205, 2.495)))
        a = solve_nlp(assemble_nlp(sc, 0.01 * np.ones(13)))
        b = solve_nlp(assemble_nlp(sc, 0.01 * np.ones(13)))
        assert np.array_equal(a.x, b.x)
        assert a.objective == b.objective

    def test_obstacle_forces_clearance(self):
        obstacle = Polytope.from_rect((-0.02, 0.06), (2.1, 2.3))
        sc = Scenario(
            vehicles=[VehicleSpec((-0.08, 2.1), Ellipsoid.point(),
                                  ((-0.02, 0.02), (-0.02, 0.02)))],
            region=((-0.25, 0.25), (2.0, 2.5)),
            goal=((-0.045, 0.245), (2.205, 2.495)),
            reference=(0.1, 2.35), obstacles=[obstacle], N=60, T_s=0.2,
            margin=0.003)
        radius = 0.01
        sol = solve_nlp(assemble_nlp(sc, radius * np.ones(61)))
        assert sol.feasible, sol.status
        dmin = min(primal_distance_ep(Ellipsoid.ball(radius), p, obstacle)
                   for p in sol.positions(0))
        assert dmin >= -1e-5
        audit = audit_solution(sc, sol)
        assert audit["min_obstacle_distance"] >= -1e-5


class TestTvsiPlanning:
    def test_zero_radii_reduce_to_unaugmented(self):
        sc = open_scenario(N=10)
        direct = solve_nlp(assemble_nlp(sc, np.zeros(11)))
        via = plan_tvsi(sc, np.zeros(11))
        np.testing.assert_allclose(via.x, direct.x, atol=1e-12)

    def test_larger_radius_weakly_larger_objective(self):
        sc = Scenario(
            vehicles=[VehicleSpec((-0.08, 2.1), Ellipsoid.point(),
                                  ((-0.02, 0.02), (-0.02, 0.02)))],
            region=((-0.25, 0.25), (2.0, 2.5)),
            goal=((-0.045, 0.245), (2.205, 2.495)),
            reference=(0.1, 2.35), N=40, T_s=0.2)
        small = plan_tvsi(sc, 0.005 * np.ones(41))
        large = plan_tvsi(sc, 0.05 * np.ones(41))
        assert large.objective >= small.objective - 1e-8


class TestTvsdPlanning:
    def make_table(self, radius_fn, N=10):
        xs = np.linspace(-0.2, 0.2, 5)
        zs = np.linspace(2.05, 2.45, 5)
        ts = np.linspace(0, N * 0.2, N + 1)
        radii = np.empty((5, 5, N + 1))
        for j, z in enumerate(zs):
            radii[:, j, :] = radius_fn(z)
        return TebTable(xs, zs, ts, radii)

    def scenario(self, N=10):
        # start already inside every eroded goal so short horizons stay feasible
        return Scenario(
            vehicles=[VehicleSpec((0.0, 2.25), Ellipsoid.point(),
                                  ((-0.02, 0.02), (-0.02, 0.02)))],
            region=((-0.25, 0.25), (2.0, 2.5)),
            goal=((-0.045, 0.245), (2.205, 2.495)),
            reference=(0.1, 2.35), N=N, T_s=0.2, l_max=5)

    def test_uniform_table_converges_second_iteration(self):
        table = self.make_table(lambda z: 0.012)
        sols = plan_tvsd(self.scenario(), table)
        assert len(sols) == 2
        np.testing.assert_allclose(sols[0].radii, 0.012)
        assert np.max(np.abs(sols[1].x - sols[0].x)) < 1e-6

    def test_depth_varying_table_shrinks_radii(self):
        table = self.make_table(lambda z: 0.03 - 0.05 * (z - 2.05))
        sols = plan_tvsd(self.scenario(), table)
        assert len(sols) <= 5
        assert np.all(sols[-1].radii <= sols[0].radii + 1e-12)
        assert sols[-1].feasible


class TestReachTime:
    def test_start_inside_goal(self):
        sc = open_scenario(N=5, start=(0.0, 2.3),
                           region=((-1.0, 1.0), (1.5, 3.0)),
                           goal=((-0.5, 0.5), (2.0, 2.6)))
        sol = solve_nlp(assemble_nlp(sc, np.zeros(6)))
        assert reach_time(sol, sc)[0] == 0.0

    def test_never_reaches(self):
        # hand-built stationary plan far from the goal box
        sc = open_scenario(N=5, start=(-0.08, 2.1), u=0.001,
                           region=((-0.25, 0.25), (2.0, 2.5)),
                           goal=((0.2, 0.245), (2.4, 2.495)))
        nlp = assemble_nlp(sc, np.zeros(6))
        sol = Solution(x=np.zeros(nlp.n), layout=nlp.layout, radii=nlp.radii,
                       objective=0.0, max_violation=0.0, status="optimal",
                       iterations=1, goal_boxes=nlp.goal_boxes)
        assert reach_time(sol, sc)[0] is None

    def test_goal_erosion_delays_arrival(self):
        sc = Scenario(
            vehicles=[VehicleSpec((-0.08, 2.1), Ellipsoid.point(),
                                  ((-0.02, 0.02), (-0.02, 0.02)))],
            region=((-0.25, 0.25), (2.0, 2.5)),
            goal=((-0.045, 0.245), (2.205, 2.495)),
            reference=(0.1, 2.35), N=80, T_s=0.2)
        t_small = reach_time(plan_tvsi(sc, 0.002 * np.ones(81)), sc)[0]
        t_large = reach_time(plan_tvsi(sc, 0.03 * np.ones(81)), sc)[0]
        assert t_small is not None and t_large is not None
        assert t_large >= t_small
