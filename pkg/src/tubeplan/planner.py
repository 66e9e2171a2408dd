"""Multi-vehicle MPC assembly and the offline/online planning algorithms.

The planning problem minimizes quadratic tracking/effort costs subject to
single-integrator dynamics, eroded workspace/goal boxes and collision
constraints written as dual-feasibility residual blocks (one block per
vehicle/obstacle/step and per vehicle-pair/step).  State-independent wave
models need a single solve; the state-dependent model runs the iterative
replanning loop that shrinks the error-bound radii using the previous
iteration's footprints.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .collision import (
    Ellipsoid,
    Polytope,
    best_dual_obstacle,
    best_dual_pairwise,
    primal_distance_ee,
    primal_distance_ep,
    smooth_norm,
    smooth_norm_grad,
)
from .nlp import BoxNlp, NlpResult, SolverOptions, solve_augmented_lagrangian
from .tebmap import TebTable, augment_vehicle, erode_box, footprint_bbox, update_radii

log = logging.getLogger(__name__)

Box2 = tuple[tuple[float, float], tuple[float, float]]


@dataclass(frozen=True)
class VehicleSpec:
    start: tuple[float, float]
    shape: Ellipsoid
    u_box: Box2 = ((-0.02, 0.02), (-0.02, 0.02))


@dataclass
class Scenario:
    """Static description of one planning problem."""

    vehicles: list[VehicleSpec]
    region: Box2
    goal: Box2
    reference: tuple[float, float]
    obstacles: list[Polytope] = field(default_factory=list)
    N: int = 100
    T_s: float = 0.2
    Q: tuple[float, float] = (1.0, 1.0)
    R: tuple[float, float] = (10.0, 10.0)
    margin: float = 0.0
    l_max: int = 5
    replan_tol: float = 1e-4

    def __post_init__(self):
        if self.N < 1 or self.T_s <= 0:
            raise ValueError("need N >= 1 and T_s > 0")
        if min(self.Q) < 0 or min(self.R) <= 0:
            raise ValueError("Q must be PSD and R PD")
        if not self.vehicles:
            raise ValueError("need at least one vehicle")

    @property
    def M(self) -> int:
        return len(self.vehicles)

    @property
    def horizon(self) -> float:
        return self.N * self.T_s

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.N + 1)


class DecisionLayout:
    """Flat-vector offsets for inputs and dual blocks.

    The single-integrator states are condensed out: positions are the exact
    zero-order-hold rollout of the inputs from the fixed start, so the
    dynamics constraints hold identically and the chain of state equalities
    never enters the solver.
    """

    def __init__(self, M: int, N: int, obstacle_rows: list[int],
                 starts: np.ndarray, T_s: float):
        self.M, self.N = M, N
        self.n_steps = N + 1
        self.obstacle_rows = list(obstacle_rows)
        self.starts = np.asarray(starts, float).reshape(M, 2)
        self.T_s = float(T_s)
        self.pairs = [(i, j) for i in range(M) for j in range(i + 1, M)]
        off = 0
        self.inp = []
        for _ in range(M):
            self.inp.append(off)
            off += 2 * N
        self.obs = {}
        for i in range(M):
            for q, rows in enumerate(self.obstacle_rows):
                lam = off
                off += self.n_steps
                mu = off
                off += self.n_steps * rows
                z = off
                off += self.n_steps * 2
                self.obs[(i, q)] = (lam, mu, z)
        self.pair = {}
        for pr in self.pairs:
            lam_i = off
            off += self.n_steps
            lam_j = off
            off += self.n_steps
            z = off
            off += self.n_steps * 2
            self.pair[pr] = (lam_i, lam_j, z)
        self.total = off

    def inputs(self, x: np.ndarray, i: int) -> np.ndarray:
        o = self.inp[i]
        return x[o:o + 2 * self.N].reshape(self.N, 2)

    def positions(self, x: np.ndarray, i: int) -> np.ndarray:
        u = self.inputs(x, i)
        p = np.empty((self.n_steps, 2))
        p[0] = self.starts[i]
        np.cumsum(self.T_s * u, axis=0, out=p[1:])
        p[1:] += self.starts[i]
        return p

    def scatter_position_grad(self, out: np.ndarray, i: int,
                              pos_grad: np.ndarray) -> None:
        """Accumulate an (n_steps, 2) gradient w.r.t. positions into the
        input slots via the rollout chain rule."""
        tail = np.cumsum(pos_grad[::-1], axis=0)[::-1]
        o = self.inp[i]
        out[o:o + 2 * self.N] += (self.T_s * tail[1:]).ravel()

    def obs_duals(self, x: np.ndarray, i: int, q: int):
        lam, mu, z = self.obs[(i, q)]
        rows = self.obstacle_rows[q]
        return (x[lam:lam + self.n_steps],
                x[mu:mu + self.n_steps * rows].reshape(self.n_steps, rows),
                x[z:z + self.n_steps * 2].reshape(self.n_steps, 2))

    def pair_duals(self, x: np.ndarray, pr):
        lam_i, lam_j, z = self.pair[pr]
        return (x[lam_i:lam_i + self.n_steps], x[lam_j:lam_j + self.n_steps],
                x[z:z + self.n_steps * 2].reshape(self.n_steps, 2))


class MpcNlp(BoxNlp):
    """The transcribed planning problem for one fixed set of radii.

    Decision variables: planner inputs (positions condensed out of the
    single integrator) and the dual certificates of every collision block.
    Position workspace/goal boxes become inequality rows; input boxes and
    dual sign/normalization bounds stay variable bounds.
    """

    def __init__(self, scenario: Scenario, radii: np.ndarray):
        self.scenario = scenario
        self.radii = np.asarray(radii, float)
        M, N = scenario.M, scenario.N
        if self.radii.shape != (M, N + 1):
            raise ValueError(f"radii must be (M, N+1), got {self.radii.shape}")
        starts = np.array([v.start for v in scenario.vehicles])
        self.layout = DecisionLayout(M, N, [len(o.b) for o in scenario.obstacles],
                                     starts, scenario.T_s)
        self.n = self.layout.total

        # per (vehicle, step) augmented shape square roots and extents
        self.S = np.empty((M, N + 1, 2, 2))
        self.extents = np.empty((M, N + 1, 2))
        for i, veh in enumerate(scenario.vehicles):
            for k in range(N + 1):
                aug = augment_vehicle(veh.shape, float(self.radii[i, k]))
                self.S[i, k] = aug.sqrt_P
                self.extents[i, k] = aug.extents()
        self.goal_boxes = [self._erode_or_raise(scenario.goal, i, N) for i in range(M)]
        self.path_boxes = [[self._erode_or_raise(scenario.region, i, k)
                            for k in range(N + 1)] for i in range(M)]
        self._grace = self._grace_steps()
        self.box_lo, self.box_hi = self._position_boxes()

        self.m_eq = M * len(scenario.obstacles) * (N + 1) * 2
        n_box_ineq = M * N * 4
        n_obs_ineq = M * len(scenario.obstacles) * (N + 1) * 3
        n_pair_ineq = len(self.layout.pairs) * (N + 1) * 4
        self.m_ineq = n_box_ineq + n_obs_ineq + n_pair_ineq
        self._lb, self._ub = self._build_bounds()

    def _erode_or_raise(self, box: Box2, i: int, k: int) -> Box2:
        return erode_box(box, float(self.radii[i, k]), self.extents[i, k])

    def _grace_steps(self) -> list[int]:
        """Steps granted to vehicles that start outside their eroded region
        box before the box binds (the reported start positions sit closer to
        the walls than the eroded sets allow)."""
        out = []
        for i, veh in enumerate(self.scenario.vehicles):
            box = self.path_boxes[i][0]
            need = 0.0
            for a in range(2):
                gap = max(box[a][0] - veh.start[a], veh.start[a] - box[a][1], 0.0)
                vmax = max(abs(veh.u_box[a][0]), abs(veh.u_box[a][1]))
                if gap > 0 and vmax > 0:
                    need = max(need, gap / (vmax * self.scenario.T_s))
            out.append(min(2 * int(math.ceil(need)), self.scenario.N))
        return out

    def _position_boxes(self):
        """Per-vehicle per-step box arrays (n_steps, 2) honoring goal,
        erosion and the start grace period."""
        sc = self.scenario
        lo = np.empty((sc.M, sc.N + 1, 2))
        hi = np.empty((sc.M, sc.N + 1, 2))
        for i, veh in enumerate(sc.vehicles):
            for k in range(sc.N + 1):
                box = self.path_boxes[i][k]
                if k == sc.N:
                    g = self.goal_boxes[i]
                    box = tuple((max(g[a][0], box[a][0]), min(g[a][1], box[a][1]))
                                for a in range(2))
                for a in range(2):
                    l, h = box[a]
                    if k == 0:
                        l = h = veh.start[a]
                    elif k < self._grace[i]:
                        pad = sc.T_s * max(abs(veh.u_box[a][0]), abs(veh.u_box[a][1]))
                        l = min(l, veh.start[a] - pad)
                        h = max(h, veh.start[a] + pad)
                    lo[i, k, a] = l
                    hi[i, k, a] = h
        return lo, hi

    def _build_bounds(self):
        lb = np.full(self.n, -np.inf)
        ub = np.full(self.n, np.inf)
        lay = self.layout
        sc = self.scenario
        for i, veh in enumerate(sc.vehicles):
            o = lay.inp[i]
            inp_lb = lb[o:o + 2 * sc.N].reshape(sc.N, 2)
            inp_ub = ub[o:o + 2 * sc.N].reshape(sc.N, 2)
            for a in range(2):
                inp_lb[:, a] = veh.u_box[a][0]
                inp_ub[:, a] = veh.u_box[a][1]
        for (i, q), (lam, mu, z) in lay.obs.items():
            rows = lay.obstacle_rows[q]
            lb[lam:lam + lay.n_steps] = 0.0
            lb[mu:mu + lay.n_steps * rows] = 0.0
            lb[z:z + lay.n_steps * 2] = -1.0
            ub[z:z + lay.n_steps * 2] = 1.0
        for pr, (lam_i, lam_j, z) in lay.pair.items():
            lb[lam_i:lam_i + lay.n_steps] = 0.0
            lb[lam_j:lam_j + lay.n_steps] = 0.0
            lb[z:z + lay.n_steps * 2] = -1.0
            ub[z:z + lay.n_steps * 2] = 1.0
        return lb, ub

    def bounds(self):
        return self._lb.copy(), self._ub.copy()

    # ---- objective -------------------------------------------------------

    def objective(self, x):
        sc = self.scenario
        Q = np.asarray(sc.Q)
        R = np.asarray(sc.R)
        ref = np.asarray(sc.reference)
        f = 0.0
        grad = np.zeros(self.n)
        lay = self.layout
        for i in range(sc.M):
            p = lay.positions(x, i)
            u = lay.inputs(x, i)
            dp = p - ref
            f += np.sum(dp * dp * Q) + np.sum(u * u * R)
            o = lay.inp[i]
            grad[o:o + 2 * sc.N] = (2.0 * u * R).ravel()
            lay.scatter_position_grad(grad, i, 2.0 * dp * Q)
        return f, grad

    # ---- equality constraints (dual certificate structure) ---------------

    def eq(self, x):
        sc = self.scenario
        lay = self.layout
        parts = []
        for i in range(sc.M):
            for q, poly in enumerate(sc.obstacles):
                _, mu, z = lay.obs_duals(x, i, q)
                parts.append((mu @ poly.A - z).ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def eq_vjp(self, x, w):
        sc = self.scenario
        lay = self.layout
        out = np.zeros(self.n)
        off = 0
        for i in range(sc.M):
            for q, poly in enumerate(sc.obstacles):
                rows = lay.obstacle_rows[q]
                wk = w[off:off + 2 * lay.n_steps].reshape(lay.n_steps, 2)
                off += 2 * lay.n_steps
                lam, mu, z = lay.obs[(i, q)]
                out[mu:mu + lay.n_steps * rows] += (wk @ poly.A.T).ravel()
                out[z:z + lay.n_steps * 2] += (-wk).ravel()
        return out

    # ---- inequality constraints ------------------------------------------

    def ineq(self, x):
        sc = self.scenario
        lay = self.layout
        parts = []
        for i in range(sc.M):
            p = lay.positions(x, i)
            parts.append((p[1:] - self.box_lo[i, 1:]).ravel())
            parts.append((self.box_hi[i, 1:] - p[1:]).ravel())
        for i in range(sc.M):
            p = lay.positions(x, i)
            for q, poly in enumerate(sc.obstacles):
                lam, mu, z = lay.obs_duals(x, i, q)
                Stz = np.einsum("kji,kj->ki", self.S[i], z)
                g1 = -lam - mu @ poly.b + np.sum(z * p, axis=1) - sc.margin
                g2 = lam - smooth_norm(Stz)
                g4 = 1.0 - smooth_norm(z)
                parts.extend([g1, g2, g4])
        for (i, j) in lay.pairs:
            p_i = lay.positions(x, i)
            p_j = lay.positions(x, j)
            lam_i, lam_j, z = lay.pair_duals(x, (i, j))
            Siz = np.einsum("kji,kj->ki", self.S[i], z)
            Sjz = np.einsum("kji,kj->ki", self.S[j], z)
            g1 = -lam_i - lam_j + np.sum(z * (p_i - p_j), axis=1) - sc.margin
            g2 = lam_i - smooth_norm(Siz)
            g3 = lam_j - smooth_norm(Sjz)
            g4 = 1.0 - smooth_norm(z)
            parts.extend([g1, g2, g3, g4])
        return np.concatenate(parts) if parts else np.zeros(0)

    def ineq_vjp(self, x, w):
        sc = self.scenario
        lay = self.layout
        out = np.zeros(self.n)
        ns = lay.n_steps
        pos_grads = [np.zeros((ns, 2)) for _ in range(sc.M)]
        off = 0
        for i in range(sc.M):
            w_lo = w[off:off + 2 * sc.N].reshape(sc.N, 2); off += 2 * sc.N
            w_hi = w[off:off + 2 * sc.N].reshape(sc.N, 2); off += 2 * sc.N
            pos_grads[i][1:] += w_lo - w_hi
        for i in range(sc.M):
            p = lay.positions(x, i)
            for q, poly in enumerate(sc.obstacles):
                lam_o, mu_o, z_o = lay.obs[(i, q)]
                rows = lay.obstacle_rows[q]
                lam, mu, z = lay.obs_duals(x, i, q)
                w1 = w[off:off + ns]; off += ns
                w2 = w[off:off + ns]; off += ns
                w4 = w[off:off + ns]; off += ns
                lam_grad = out[lam_o:lam_o + ns]
                mu_grad = out[mu_o:mu_o + ns * rows].reshape(ns, rows)
                z_grad = out[z_o:z_o + ns * 2].reshape(ns, 2)
                # g1 terms
                pos_grads[i] += w1[:, None] * z
                lam_grad -= w1
                mu_grad -= w1[:, None] * poly.b
                z_grad += w1[:, None] * p
                # g2 terms
                Stz = np.einsum("kji,kj->ki", self.S[i], z)
                nrm = smooth_norm_grad(Stz)
                lam_grad += w2
                z_grad -= w2[:, None] * np.einsum("kij,kj->ki", self.S[i], nrm)
                # g4 terms
                z_grad -= w4[:, None] * smooth_norm_grad(z)
        for (i, j) in lay.pairs:
            p_i = lay.positions(x, i)
            p_j = lay.positions(x, j)
            lam_io, lam_jo, z_o = lay.pair[(i, j)]
            lam_i, lam_j, z = lay.pair_duals(x, (i, j))
            w1 = w[off:off + ns]; off += ns
            w2 = w[off:off + ns]; off += ns
            w3 = w[off:off + ns]; off += ns
            w4 = w[off:off + ns]; off += ns
            lam_i_grad = out[lam_io:lam_io + ns]
            lam_j_grad = out[lam_jo:lam_jo + ns]
            z_grad = out[z_o:z_o + ns * 2].reshape(ns, 2)
            pos_grads[i] += w1[:, None] * z
            pos_grads[j] -= w1[:, None] * z
            lam_i_grad -= w1
            lam_j_grad -= w1
            z_grad += w1[:, None] * (p_i - p_j)
            Siz = np.einsum("kji,kj->ki", self.S[i], z)
            Sjz = np.einsum("kji,kj->ki", self.S[j], z)
            lam_i_grad += w2
            z_grad -= w2[:, None] * np.einsum("kij,kj->ki", self.S[i], smooth_norm_grad(Siz))
            lam_j_grad += w3
            z_grad -= w3[:, None] * np.einsum("kij,kj->ki", self.S[j], smooth_norm_grad(Sjz))
            z_grad -= w4[:, None] * smooth_norm_grad(z)
        for i in range(sc.M):
            lay.scatter_position_grad(out, i, pos_grads[i])
        return out

    # ---- certificate refresh ----------------------------------------------

    def refresh_duals(self, x):
        """Re-optimize every dual block in closed form for the current
        trajectory (the certificates maximize the dual objective given the
        positions); leaves the inputs untouched."""
        sc = self.scenario
        lay = self.layout
        out = np.asarray(x, float).copy()
        for i in range(sc.M):
            p = lay.positions(x, i)
            for q, poly in enumerate(sc.obstacles):
                lam_o, mu_o, z_o = lay.obs[(i, q)]
                rows = lay.obstacle_rows[q]
                lam = out[lam_o:lam_o + lay.n_steps]
                mu = out[mu_o:mu_o + lay.n_steps * rows].reshape(lay.n_steps, rows)
                z = out[z_o:z_o + lay.n_steps * 2].reshape(lay.n_steps, 2)
                for k in range(lay.n_steps):
                    _, lam[k], mu[k], z[k] = best_dual_obstacle(poly, self.S[i, k], p[k])
        for (i, j) in lay.pairs:
            p_i = lay.positions(x, i)
            p_j = lay.positions(x, j)
            lam_io, lam_jo, z_o = lay.pair[(i, j)]
            lam_i = out[lam_io:lam_io + lay.n_steps]
            lam_j = out[lam_jo:lam_jo + lay.n_steps]
            z = out[z_o:z_o + lay.n_steps * 2].reshape(lay.n_steps, 2)
            for k in range(lay.n_steps):
                _, lam_i[k], lam_j[k], z[k] = best_dual_pairwise(
                    self.S[i, k], self.S[j, k], p_i[k], p_j[k])
        return out


@dataclass
class Solution:
    """One solved MPC instance plus the radii it was solved with."""

    x: np.ndarray
    layout: DecisionLayout
    radii: np.ndarray
    objective: float
    max_violation: float
    status: str
    iterations: int
    goal_boxes: list[Box2]

    def positions(self, i: int) -> np.ndarray:
        return self.layout.positions(self.x, i)

    def inputs(self, i: int) -> np.ndarray:
        return self.layout.inputs(self.x, i)

    @property
    def feasible(self) -> bool:
        return self.status in ("optimal", "feasible-suboptimal")


def assemble_nlp(scenario: Scenario, radii) -> MpcNlp:
    """Build the transcription for fixed per-vehicle per-step radii."""
    radii = np.asarray(radii, float)
    if radii.ndim == 1:
        radii = np.tile(radii, (scenario.M, 1))
    return MpcNlp(scenario, radii)


def solve_nlp(nlp: MpcNlp, warm: np.ndarray | None = None,
              options: SolverOptions | None = None) -> Solution:
    """Solve one transcription to first-order stationarity."""
    # zero start: inputs hold the vehicles at their start points, duals at 0
    # (certificate blocks are re-optimized in closed form between rounds)
    x0 = np.zeros(nlp.n) if warm is None else np.asarray(warm, float).copy()
    res = solve_augmented_lagrangian(nlp, x0, options, refresh=nlp.refresh_duals)
    post = _posterior_violation(nlp, res.x)
    return Solution(x=res.x, layout=nlp.layout, radii=nlp.radii.copy(),
                    objective=res.objective,
                    max_violation=max(res.max_violation, post),
                    status=res.status, iterations=res.outer_iterations,
                    goal_boxes=list(nlp.goal_boxes))


def _posterior_violation(nlp: MpcNlp, x) -> float:
    viol = 0.0
    c = nlp.eq(x)
    if len(c):
        viol = max(viol, float(np.max(np.abs(c))))
    g = nlp.ineq(x)
    if len(g):
        viol = max(viol, float(max(0.0, -np.min(g))))
    return viol


def plan_tvsi(scenario: Scenario, teb_radii, options=None) -> Solution:
    """Single-solve planning for time-indexed (state-independent) radii.

    teb_radii: (N+1,) radii at the sample times, shared by all vehicles.
    """
    sol = solve_nlp(assemble_nlp(scenario, teb_radii), options=options)
    return sol


def plan_tvsd(scenario: Scenario, table: TebTable, options=None,
              l_max: int | None = None) -> list[Solution]:
    """Iterative replanning for the state-dependent wave model.

    Iteration 1 uses the per-time table maximum (most conservative); later
    iterations recompute radii over the previous augmented footprints,
    warm-starting each solve from the previous solution.  Stops at l_max or
    when both radii and trajectory change less than the tolerance.
    """
    M, N = scenario.M, scenario.N
    l_max = scenario.l_max if l_max is None else l_max
    if len(table.times) != N + 1:
        raise ValueError("table time samples must match the planning steps")
    radii = np.tile([table.max_at_time(k) for k in range(N + 1)], (M, 1))
    solutions: list[Solution] = []
    warm = None
    for it in range(1, l_max + 1):
        nlp = assemble_nlp(scenario, radii)
        sol = solve_nlp(nlp, warm=warm, options=options)
        solutions.append(sol)
        if not sol.feasible:
            log.warning("replanning iteration %d ended with status %s "
                        "(max violation %.2e)", it, sol.status, sol.max_violation)
        if len(solutions) >= 2:
            prev = solutions[-2]
            d_traj = max(float(np.max(np.abs(sol.positions(i) - prev.positions(i))))
                         for i in range(M))
            d_rad = float(np.max(np.abs(sol.radii - prev.radii)))
            if d_traj < scenario.replan_tol and d_rad < scenario.replan_tol:
                break
        if it == l_max:
            break
        new_radii = np.empty_like(radii)
        for i, veh in enumerate(scenario.vehicles):
            new_radii[i] = update_radii(table, sol.positions(i), veh.shape, radii[i])
        warm = sol.x
        radii = new_radii
    return solutions


def reach_time(solution: Solution, scenario: Scenario) -> list[float | None]:
    """First sample time at which each augmented vehicle sits inside the goal."""
    out = []
    for i, veh in enumerate(scenario.vehicles):
        p = solution.positions(i)
        t_hit = None
        for k in range(scenario.N + 1):
            aug = augment_vehicle(veh.shape, float(solution.radii[i, k]))
            try:
                box = erode_box(scenario.goal, 0.0, aug.extents())
            except Exception:
                continue
            if (box[0][0] - 1e-9 <= p[k, 0] <= box[0][1] + 1e-9
                    and box[1][0] - 1e-9 <= p[k, 1] <= box[1][1] + 1e-9):
                t_hit = k * scenario.T_s
                break
        out.append(t_hit)
    return out


def audit_solution(scenario: Scenario, solution: Solution,
                   stride: int = 1) -> dict:
    """Post-hoc primal distances of the augmented shapes along the plan."""
    min_obs = math.inf
    min_pair = math.inf
    for k in range(0, scenario.N + 1, stride):
        shapes = []
        for i, veh in enumerate(scenario.vehicles):
            shapes.append(augment_vehicle(veh.shape, float(solution.radii[i, k])))
        for i in range(scenario.M):
            p_i = solution.positions(i)[k]
            for poly in scenario.obstacles:
                min_obs = min(min_obs, primal_distance_ep(shapes[i], p_i, poly))
            for j in range(i + 1, scenario.M):
                p_j = solution.positions(j)[k]
                min_pair = min(min_pair, primal_distance_ee(shapes[i], p_i,
                                                            shapes[j], p_j))
    return {"min_obstacle_distance": None if math.isinf(min_obs) else min_obs,
            "min_pairwise_distance": None if math.isinf(min_pair) else min_pair}
