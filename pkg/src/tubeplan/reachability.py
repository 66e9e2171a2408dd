"""Backward Hamilton-Jacobi solve for the tracking-error game.

The variational inequality

    max{ dV/dt + min_{u_s} max_{u_p, d} <dV/dr, g(r, u_s, u_p, d, t)>,
         l(r) - V(r, t) } = 0,      V(r, T) = l(r),  l(r) = ||e||

is integrated backward on a dense uniform grid.  The relative dynamics
are affine in every input channel, so the inner min/max lands on box
vertices; channels that touch a single gradient component make the
Hamiltonian separable per dimension, H_i(q) = a_i q + b_i |q|, which a
first-order Godunov upwind flux handles exactly (plain Lax-Friedrichs
smears the terminal cone away over long horizons at desk-scale grids).
The few cross-dimension channels of the 6-state system keep a local
Lax-Friedrichs dissipation term sized by their box halfwidths.

The solved value function yields the minimum level, the tracking error
bounds (projected sublevel-set radii) and the optimal tracking input.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import (
    AuvParams,
    DisturbanceBounds,
    Interval,
    TisiWave,
    TvsdWave,
    TvsiWave,
    WaveModel,
    eval_wave_tvsd,
    eval_wave_tvsi,
)

log = logging.getLogger(__name__)


class CflError(ValueError):
    """Requested time step violates the CFL bound of the explicit scheme."""


class EmptySublevelError(RuntimeError):
    """No grid node lies inside the requested value sublevel set."""


@dataclass(frozen=True)
class Grid:
    """Uniform node grid over the relative state space plus the time horizon."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    shape: tuple[int, ...]
    horizon: float
    time_steps: int

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        if len(self.lo) != len(self.hi) or len(self.lo) != len(self.shape):
            raise ValueError("lo, hi, shape must have equal lengths")
        if self.dim not in (4, 6):
            raise ValueError("relative-state grids are 4- or 6-dimensional")
        if any(n < 3 for n in self.shape):
            raise ValueError("need at least 3 nodes per dimension")
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError("upper bounds must exceed lower bounds")
        if self.horizon <= 0 or self.time_steps < 1:
            raise ValueError("horizon and time_steps must be positive")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(h - l) / (n - 1)
                         for l, h, n in zip(self.lo, self.hi, self.shape)])

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(l, h, n)
                for l, h, n in zip(self.lo, self.hi, self.shape)]

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.time_steps + 1)

    def sparse_mesh(self) -> list[np.ndarray]:
        return list(np.meshgrid(*self.axes, indexing="ij", sparse=True))

    def error_norm(self) -> np.ndarray:
        """||e|| over the grid, broadcastable to the full shape."""
        mesh = self.sparse_mesh()
        return np.hypot(mesh[0], mesh[1])

    def error_norm_2d(self) -> np.ndarray:
        """||e|| over the leading two (error) axes only."""
        ax = self.axes
        return np.hypot(ax[0][:, None], ax[1][None, :])

    def contains(self, r) -> bool:
        r = np.asarray(r, float)
        return bool(np.all(r >= np.array(self.lo) - 1e-12)
                    and np.all(r <= np.array(self.hi) + 1e-12))


@dataclass(frozen=True)
class InputBounds:
    """Boxes of the three players: tracker thrust, planner speed, disturbance."""

    thrust_a: Interval
    thrust_b: Interval
    planner_x: Interval
    planner_z: Interval
    disturbance: DisturbanceBounds = field(default_factory=DisturbanceBounds)

    def __post_init__(self):
        for name in ("thrust_a", "thrust_b", "planner_x", "planner_z"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: empty box")


@dataclass(frozen=True)
class Channel:
    """One scalar input channel entering the dynamics affinely.

    coeffs maps state dimensions to the constant factor the channel carries
    in that row.  Control channels are minimized, adversarial ones
    (planner, disturbance, wave boxes) maximized.
    """

    name: str
    coeffs: tuple[tuple[int, float], ...]
    box: Interval
    adversarial: bool

    @property
    def center(self) -> float:
        return 0.5 * (self.box[0] + self.box[1])

    @property
    def halfwidth(self) -> float:
        return 0.5 * (self.box[1] - self.box[0])


class AuvRelativeDynamics:
    """Affine-channel form of the relative (tracker minus planner) dynamics."""

    def __init__(self, wave: WaveModel, params: AuvParams, bounds: InputBounds):
        self.wave = wave
        self.params = params
        self.bounds = bounds
        self.dim = 6 if isinstance(wave, TvsdWave) else 4
        c_u = params.wave_accel_coeff_u
        c_w = params.wave_accel_coeff_w
        d = bounds.disturbance
        ch = [
            Channel("T_A", ((2, 1.0 / params.eff_mass_u),), bounds.thrust_a, False),
            Channel("T_B", ((3, 1.0 / params.eff_mass_w),), bounds.thrust_b, False),
            Channel("u_px", ((0, -1.0),), bounds.planner_x, True),
            Channel("u_pz", ((1, -1.0),), bounds.planner_z, True),
        ]
        if self.dim == 6:
            ch += [
                Channel("d_x", ((0, 1.0), (4, 1.0)), d.d_x, True),
                Channel("d_z", ((1, 1.0), (5, 1.0)), d.d_z, True),
            ]
        else:
            ch += [
                Channel("d_x", ((0, 1.0),), d.d_x, True),
                Channel("d_z", ((1, 1.0),), d.d_z, True),
            ]
        ch += [
            Channel("d_ur", ((2, 1.0),), d.d_ur, True),
            Channel("d_wr", ((3, 1.0),), d.d_wr, True),
        ]
        if isinstance(wave, TvsiWave):
            ch += [
                Channel("d_fvx", ((0, 1.0),), wave.d_fv, True),
                Channel("d_fvz", ((1, 1.0),), wave.d_fv, True),
                Channel("d_fax", ((2, c_u),), wave.d_fa, True),
                Channel("d_faz", ((3, c_w),), wave.d_fa, True),
            ]
        elif isinstance(wave, TisiWave):
            ch += [
                Channel("V_fx", ((0, 1.0),), wave.V_box, True),
                Channel("V_fz", ((1, 1.0),), wave.V_box, True),
                Channel("A_fx", ((2, c_u),), wave.A_box, True),
                Channel("A_fz", ((3, c_w),), wave.A_box, True),
            ]
        self.channels: tuple[Channel, ...] = tuple(ch)

    def drift(self, mesh: list[np.ndarray], t: float) -> list[np.ndarray]:
        """Input-free part of the dynamics, broadcastable over the grid."""
        p = self.params
        eta_u, eta_w = mesh[2], mesh[3]
        damp_u = -(p.X_u + p.X_uu * np.abs(eta_u)) * eta_u / p.eff_mass_u
        damp_w = (-(p.Z_w + p.Z_ww * np.abs(eta_w)) * eta_w / p.eff_mass_w
                  + p.buoyancy_accel)
        if isinstance(self.wave, TvsdWave):
            W, Wdot = eval_wave_tvsd(mesh[4], mesh[5], t, self.wave)
            vfx, vfz = W[..., 0], W[..., 1]
            afx, afz = Wdot[..., 0], Wdot[..., 1]
        elif isinstance(self.wave, TvsiWave):
            W, Wdot = eval_wave_tvsi(t, self.wave)
            vfx, vfz = W[..., 0], W[..., 1]
            afx, afz = Wdot[..., 0], Wdot[..., 1]
        else:
            vfx = vfz = afx = afz = 0.0
        rows = [
            eta_u + vfx,
            eta_w + vfz,
            damp_u + p.wave_accel_coeff_u * afx,
            damp_w + p.wave_accel_coeff_w * afz,
        ]
        if self.dim == 6:
            rows += [eta_u + vfx, eta_w + vfz]
        return rows


def terminal_value(grid: Grid) -> np.ndarray:
    """Terminal cost l(r) = ||e|| as a full dense array."""
    return np.broadcast_to(grid.error_norm(), grid.shape).copy()


def _one_sided_differences(V: np.ndarray, axis: int, dx: float):
    """Left/right difference arrays; boundary uses the adjacent interior slope."""
    dV = np.diff(V, axis=axis) / dx
    first = np.take(dV, [0], axis=axis)
    last = np.take(dV, [-1], axis=axis)
    D_minus = np.concatenate([first, dV], axis=axis)
    D_plus = np.concatenate([dV, last], axis=axis)
    return D_minus, D_plus


def hamiltonian(dynamics, mesh, grads: list[np.ndarray], t: float) -> np.ndarray:
    """min-max of <grad, g> with the extremum taken at box vertices.

    Each affine channel with coefficient kappa contributes kappa*center -
    |kappa|*halfwidth when minimized (tracker) and + |kappa|*halfwidth when
    maximized (planner/disturbance); a zero coefficient leaves the channel
    at its box center.
    """
    drift = dynamics.drift(mesh, t)
    H = np.zeros(np.broadcast_shapes(*(g.shape for g in grads)))
    for q, d in zip(grads, drift):
        H += q * d
    for ch in dynamics.channels:
        kappa = None
        for dim, a in ch.coeffs:
            term = a * grads[dim]
            kappa = term if kappa is None else kappa + term
        if ch.center != 0.0:
            H += ch.center * kappa
        sign = 1.0 if ch.adversarial else -1.0
        if ch.halfwidth != 0.0:
            H += sign * ch.halfwidth * np.abs(kappa)
    return H


def dissipation_coefficients(dynamics, mesh, t: float) -> list[np.ndarray]:
    """Per-dimension bound max |g_i| over the input boxes (exact for affine g)."""
    drift = dynamics.drift(mesh, t)
    centered = [np.asarray(d, float).copy() for d in drift]
    spread = [np.zeros_like(c) for c in centered]
    for ch in dynamics.channels:
        for dim, a in ch.coeffs:
            if ch.center != 0.0:
                centered[dim] = centered[dim] + a * ch.center
            spread[dim] = spread[dim] + abs(a) * ch.halfwidth
    return [np.abs(c) + s for c, s in zip(centered, spread)]


def cfl_limit(grid: Grid, alphas, cfl: float = 0.8) -> float:
    total = 0.0
    for a, dx in zip(alphas, grid.spacing):
        total = total + np.max(a) / dx
    if total == 0.0:
        return math.inf
    return cfl / float(total)


def _channel_split(dynamics):
    """(per-dim |q| coefficients, per-dim center shifts, coupled channels).

    Single-dimension channels fold into the separable flux: adversarial
    boxes add halfwidth * |coef| to b_i, control boxes subtract; centers
    shift the drift.  Channels spanning several dimensions are returned
    for central evaluation with local dissipation.
    """
    b = np.zeros(dynamics.dim)
    centers = np.zeros(dynamics.dim)
    coupled = []
    for ch in dynamics.channels:
        if len(ch.coeffs) == 1:
            (dim, coef), = ch.coeffs
            sign = 1.0 if ch.adversarial else -1.0
            b[dim] += sign * abs(coef) * ch.halfwidth
            centers[dim] += coef * ch.center
        else:
            coupled.append(ch)
    return b, centers, coupled


def step_backward(V: np.ndarray, l, t: float, dt: float, grid: Grid, dynamics,
                  cfl: float = 0.8, alphas=None) -> np.ndarray:
    """One explicit backward step t -> t - dt of the variational inequality.

    Godunov upwind flux on the separable Hamiltonian parts, local
    Lax-Friedrichs on the coupled channels, then the node-wise freeze
    V <- max(V, l).
    """
    mesh = grid.sparse_mesh()
    if alphas is None:
        alphas = dissipation_coefficients(dynamics, mesh, t)
    limit = cfl_limit(grid, alphas, cfl)
    if dt > limit * (1.0 + 1e-9):
        raise CflError(f"dt={dt:.3e} exceeds CFL limit {limit:.3e} at t={t:.3f}")
    b, centers, coupled = _channel_split(dynamics)
    drift = dynamics.drift(mesh, t)
    H = np.zeros_like(V)
    coupled_grads = {dim for ch in coupled for dim, _ in ch.coeffs}
    grads = {}
    for i in range(grid.dim):
        D_minus, D_plus = _one_sided_differences(V, i, grid.spacing[i])
        a = drift[i] + centers[i]
        # extrema of a*q + b*|q| over the interval spanned by the one-sided
        # slopes sit at the endpoints or at the kink q = 0
        h_lo = a * D_minus + b[i] * np.abs(D_minus)
        h_hi = a * D_plus + b[i] * np.abs(D_plus)
        inside = (np.minimum(D_minus, D_plus) <= 0.0) & (np.maximum(D_minus, D_plus) >= 0.0)
        h_max = np.maximum(h_lo, h_hi)
        np.maximum(h_max, 0.0, out=h_max, where=inside)
        h_min = np.minimum(h_lo, h_hi)
        np.minimum(h_min, 0.0, out=h_min, where=inside)
        H += np.where(D_minus <= D_plus, h_max, h_min)
        if coupled:
            if i in coupled_grads:
                grads[i] = 0.5 * (D_minus + D_plus)
            # coupled-channel dissipation, sized by their halfwidths only
            alpha_c = sum(abs(dict(ch.coeffs).get(i, 0.0)) * ch.halfwidth
                          for ch in coupled)
            if alpha_c:
                H += 0.5 * alpha_c * (D_plus - D_minus)
    for ch in coupled:
        kappa = None
        for dim, a in ch.coeffs:
            term = a * grads[dim]
            kappa = term if kappa is None else kappa + term
        if ch.center != 0.0:
            H += ch.center * kappa
        sign = 1.0 if ch.adversarial else -1.0
        if ch.halfwidth != 0.0:
            H += sign * ch.halfwidth * np.abs(kappa)
    V_new = V + dt * H
    np.maximum(V_new, l, out=V_new)
    if not np.all(np.isfinite(V_new)):
        raise FloatingPointError(f"non-finite values in backward step at t={t:.3f}")
    return V_new


@dataclass
class ValueFunction:
    """Dense value array over stored time slices, plus query helpers."""

    grid: Grid
    times: np.ndarray
    values: np.ndarray     # (len(times), *grid.shape)
    bounds: InputBounds
    wave: WaveModel
    params: AuvParams
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self._grad_cache: dict[int, list[np.ndarray]] = {}
        self._eta_min_cache: dict[int, np.ndarray] = {}
        self._radius_cache: dict = {}

    @property
    def dim(self) -> int:
        return self.grid.dim

    def slice_at(self, k: int) -> np.ndarray:
        return self.values[k]

    def _bracket(self, t: float) -> tuple[int, int, float]:
        times = self.times
        t = float(np.clip(t, times[0], times[-1]))
        k = int(np.searchsorted(times, t, side="right") - 1)
        k = min(max(k, 0), len(times) - 2)
        w = (t - times[k]) / (times[k + 1] - times[k])
        return k, k + 1, float(np.clip(w, 0.0, 1.0))

    def _cell_index(self, pts: np.ndarray):
        idx, frac = [], []
        oob = np.zeros(pts.shape[:-1], bool)
        for i in range(self.grid.dim):
            x = (pts[..., i] - self.grid.lo[i]) / self.grid.spacing[i]
            j = np.clip(np.floor(x).astype(int), 0, self.grid.shape[i] - 2)
            w = x - j
            oob |= (w < -1e-9) | (w > 1.0 + 1e-9)
            idx.append(j)
            frac.append(np.clip(w, 0.0, 1.0))
        return idx, frac, oob

    def _interp_slice(self, arr: np.ndarray, pts: np.ndarray) -> np.ndarray:
        idx, frac, _ = self._cell_index(pts)
        out = np.zeros(pts.shape[:-1])
        for corner in itertools.product((0, 1), repeat=self.grid.dim):
            w = np.ones(pts.shape[:-1])
            sel = []
            for i, c in enumerate(corner):
                w = w * (frac[i] if c else 1.0 - frac[i])
                sel.append(idx[i] + c)
            out += w * arr[tuple(sel)]
        return out

    def value(self, r, t: float):
        """Multilinearly interpolated V(r, t); out-of-grid queries saturate."""
        pts = np.asarray(r, float)
        k0, k1, w = self._bracket(t)
        v0 = self._interp_slice(self.values[k0], pts)
        v1 = self._interp_slice(self.values[k1], pts)
        return (1.0 - w) * v0 + w * v1

    def _slice_gradients(self, k: int) -> list[np.ndarray]:
        if k not in self._grad_cache:
            if len(self._grad_cache) > 6:
                self._grad_cache.pop(next(iter(self._grad_cache)))
            V = self.values[k]
            grads = []
            for i in range(self.grid.dim):
                D_minus, D_plus = _one_sided_differences(V, i, self.grid.spacing[i])
                grads.append(0.5 * (D_minus + D_plus))
            self._grad_cache[k] = grads
        return self._grad_cache[k]

    def gradient(self, r, t: float) -> np.ndarray:
        """Interpolated spatial gradient dV/dr at (r, t), shape (..., dim)."""
        pts = np.asarray(r, float)
        k0, k1, w = self._bracket(t)
        out = np.empty(pts.shape)
        g0 = self._slice_gradients(k0)
        g1 = self._slice_gradients(k1)
        for i in range(self.grid.dim):
            a = self._interp_slice(g0[i], pts)
            b = self._interp_slice(g1[i], pts)
            out[..., i] = (1.0 - w) * a + w * b
        return out

    def eta_min(self, k: int) -> np.ndarray:
        """Slice k minimized over the auxiliary velocity axes (2, 3)."""
        if k not in self._eta_min_cache:
            self._eta_min_cache[k] = np.min(self.values[k], axis=(2, 3))
        return self._eta_min_cache[k]

    def save(self, prefix) -> tuple[Path, Path]:
        """Persist as metadata JSON plus raw little-endian float64 slices."""
        prefix = Path(prefix)
        meta = {
            "grid": {"lo": list(self.grid.lo), "hi": list(self.grid.hi),
                     "shape": list(self.grid.shape), "horizon": self.grid.horizon,
                     "time_steps": self.grid.time_steps},
            "times": self.times.tolist(),
            "bounds": {
                "thrust_a": list(self.bounds.thrust_a),
                "thrust_b": list(self.bounds.thrust_b),
                "planner_x": list(self.bounds.planner_x),
                "planner_z": list(self.bounds.planner_z),
                "disturbance": {k: list(getattr(self.bounds.disturbance, k))
                                for k in ("d_x", "d_z", "d_ur", "d_wr", "d_fv", "d_fa")},
            },
            "wave": _wave_to_dict(self.wave),
            "params": {k: getattr(self.params, k)
                       for k in ("m", "m_bar", "X_udot", "Z_wdot", "X_u", "Z_w",
                                 "X_uu", "Z_ww", "g")},
            "meta": self.meta,
        }
        json_path = prefix.with_suffix(".json")
        bin_path = prefix.with_suffix(".f64")
        json_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
        self.values.astype("<f8").tofile(bin_path)
        return json_path, bin_path

    @staticmethod
    def load(prefix) -> "ValueFunction":
        prefix = Path(prefix)
        meta = json.loads(prefix.with_suffix(".json").read_text())
        g = meta["grid"]
        grid = Grid(tuple(g["lo"]), tuple(g["hi"]), tuple(g["shape"]),
                    g["horizon"], g["time_steps"])
        times = np.array(meta["times"])
        raw = np.fromfile(prefix.with_suffix(".f64"), dtype="<f8")
        values = raw.reshape((len(times),) + grid.shape)
        b = meta["bounds"]
        dist = DisturbanceBounds(**{k: tuple(v) for k, v in b["disturbance"].items()})
        bounds = InputBounds(tuple(b["thrust_a"]), tuple(b["thrust_b"]),
                             tuple(b["planner_x"]), tuple(b["planner_z"]), dist)
        return ValueFunction(grid, times, values, bounds,
                             _wave_from_dict(meta["wave"]),
                             AuvParams(**meta["params"]), meta.get("meta", {}))


def _wave_to_dict(wave: WaveModel) -> dict:
    if isinstance(wave, TvsdWave):
        return {"kind": "tvsd", "A": wave.A, "omega": wave.omega, "k": wave.k}
    if isinstance(wave, TvsiWave):
        return {"kind": "tvsi", "A_v": wave.A_v, "A_a": wave.A_a,
                "phi_v": wave.phi_v, "phi_a": wave.phi_a, "omega": wave.omega,
                "d_fv": list(wave.d_fv), "d_fa": list(wave.d_fa)}
    return {"kind": "tisi", "V_box": list(wave.V_box), "A_box": list(wave.A_box)}


def _wave_from_dict(d: dict) -> WaveModel:
    kind = d["kind"]
    if kind == "tvsd":
        return TvsdWave(A=d["A"], omega=d["omega"], k=d["k"])
    if kind == "tvsi":
        return TvsiWave(A_v=d["A_v"], A_a=d["A_a"], phi_v=d["phi_v"],
                        phi_a=d["phi_a"], omega=d["omega"],
                        d_fv=tuple(d["d_fv"]), d_fa=tuple(d["d_fa"]))
    return TisiWave(V_box=tuple(d["V_box"]), A_box=tuple(d["A_box"]))


def solve_value_function(grid: Grid, wave: WaveModel, params: AuvParams,
                         bounds: InputBounds, *, cfl: float = 0.8,
                         dynamics=None, progress: bool = False) -> ValueFunction:
    """Integrate the variational inequality from t = T down to t = 0.

    Slices are stored at the grid's sample times; the solver substeps
    between them at the CFL-limited step size.  Slice-to-slice sup changes
    are recorded as convergence diagnostics.
    """
    if dynamics is None:
        dynamics = AuvRelativeDynamics(wave, params, bounds)
    if dynamics.dim != grid.dim:
        raise ValueError(f"grid dim {grid.dim} != dynamics dim {dynamics.dim}")
    mesh = grid.sparse_mesh()
    l = np.broadcast_to(grid.error_norm(), grid.shape)
    times = grid.times
    n_store = len(times)
    values = np.empty((n_store,) + grid.shape)
    values[-1] = l
    V = values[-1].copy()
    diag_changes = []
    substeps = 0
    for k in range(n_store - 2, -1, -1):
        t_hi, t_lo = times[k + 1], times[k]
        t = t_hi
        prev = V.copy()
        while t > t_lo + 1e-12:
            alphas = dissipation_coefficients(dynamics, mesh, t)
            dt = min(cfl_limit(grid, alphas, cfl), t - t_lo)
            V = step_backward(V, l, t, dt, grid, dynamics, cfl=cfl, alphas=alphas)
            t -= dt
            substeps += 1
        values[k] = V
        diag_changes.append(float(np.max(np.abs(V - prev))))
        if progress:
            log.info("slice t=%.2f stored, max change %.3e", t_lo, diag_changes[-1])
    meta = {"cfl": cfl, "substeps": substeps,
            "slice_changes": diag_changes[::-1], "scheme": "godunov-upwind"}
    return ValueFunction(grid, times.copy(), values, bounds, wave, params, meta)


def min_level(V: ValueFunction, eta0) -> float:
    """Smallest level whose t = 0 sublevel set contains some [e, eta0].

    eta0 holds the non-error coordinates: (eta_u, eta_w) for the 4D system,
    (eta_u, eta_w, x, z) for the 6D one; interpolation is multilinear.
    """
    eta0 = np.asarray(eta0, float).ravel()
    n_aux = V.grid.dim - 2
    if eta0.shape != (n_aux,):
        raise ValueError(f"eta0 must have {n_aux} components")
    for i, v in enumerate(eta0):
        if not (V.grid.lo[2 + i] - 1e-12 <= v <= V.grid.hi[2 + i] + 1e-12):
            raise ValueError(f"eta0 component {i} outside grid")
    arr = V.values[0]
    for dim in range(V.grid.dim - 1, 1, -1):
        arr = _lerp_axis(arr, dim, V.grid, eta0[dim - 2])
    return float(np.min(arr))


def _lerp_axis(arr: np.ndarray, dim: int, grid: Grid, x: float) -> np.ndarray:
    pos = (x - grid.lo[dim]) / grid.spacing[dim]
    j = int(np.clip(math.floor(pos), 0, grid.shape[dim] - 2))
    w = float(np.clip(pos - j, 0.0, 1.0))
    lo = np.take(arr, j, axis=dim)
    hi = np.take(arr, j + 1, axis=dim)
    return (1.0 - w) * lo + w * hi


def _sublevel_radius(W: np.ndarray, vbar: float, grid: Grid) -> float:
    mask = W <= vbar + 1e-12
    if not np.any(mask):
        raise EmptySublevelError(
            f"level {vbar:.6g} below the minimum value {float(np.min(W)):.6g}")
    return float(np.max(grid.error_norm_2d()[mask]))


def teb_radius_si(V: ValueFunction, vbar: float, t: float) -> float:
    """Radius of the error-space projection of the vbar-sublevel at time t.

    Radii are computed at stored slices and interpolated linearly in t.
    """
    key = ("si", round(vbar, 12))
    if key not in V._radius_cache:
        radii = np.array([_sublevel_radius(V.eta_min(k), vbar, V.grid)
                          for k in range(len(V.times))])
        V._radius_cache[key] = radii
    radii = V._radius_cache[key]
    return float(np.interp(t, V.times, radii))


def teb_radii_si(V: ValueFunction, vbar: float, ts) -> np.ndarray:
    return np.array([teb_radius_si(V, vbar, float(t)) for t in np.atleast_1d(ts)])


def teb_radius_sd(V: ValueFunction, vbar: float, x: float, z: float, t: float) -> float:
    """State-dependent radius at true position (x, z) and time t."""
    return float(teb_radii_sd_batch(V, vbar, np.array([x]), np.array([z]), t)[0])


def teb_radii_sd_batch(V: ValueFunction, vbar: float, xs, zs, t: float,
                       on_empty: str = "raise") -> np.ndarray:
    """Vectorized teb_radius_sd over aligned position arrays at one time.

    The eta-minimized slice (axes e_x, e_z, x, z) is interpolated
    bilinearly in (x, z) for every query point; radii at the two bracketing
    stored times blend linearly.

    Cells whose whole error slice exceeds the level carry no admissible
    error at that time (typically early-time cells far from the start);
    on_empty selects between raising and recording a zero radius.
    """
    if V.dim != 6:
        raise ValueError("state-dependent radii need the 6D value function")
    xs = np.asarray(xs, float).ravel()
    zs = np.asarray(zs, float).ravel()
    if xs.shape != zs.shape:
        raise ValueError("xs and zs must align")
    k0, k1, w = V._bracket(t)
    e_norm = V.grid.error_norm_2d()

    def interp_xz(W: np.ndarray) -> np.ndarray:
        # W has axes (e_x, e_z, x, z); returns (npts, e_x, e_z)
        jx, wx = _axis_locate(xs, 4, V.grid)
        jz, wz = _axis_locate(zs, 5, V.grid)
        # aligned fancy indexing gathers one (e_x, e_z) plane per query point
        g = lambda dx, dz: np.moveaxis(W[:, :, jx + dx, jz + dz], -1, 0)
        out = ((1 - wx) * (1 - wz))[:, None, None] * g(0, 0) \
            + (wx * (1 - wz))[:, None, None] * g(1, 0) \
            + ((1 - wx) * wz)[:, None, None] * g(0, 1) \
            + (wx * wz)[:, None, None] * g(1, 1)
        return out

    def radii_from(W: np.ndarray) -> np.ndarray:
        cuts = interp_xz(W)
        out = np.empty(len(xs))
        for n in range(len(xs)):
            mask = cuts[n] <= vbar + 1e-12
            if not np.any(mask):
                if on_empty == "zero":
                    out[n] = 0.0
                    continue
                raise EmptySublevelError(
                    f"level {vbar:.6g} below minimum value "
                    f"{float(np.min(cuts[n])):.6g} at (x={xs[n]:.3f}, z={zs[n]:.3f})")
            else:
                out[n] = np.max(e_norm[mask])
        return out

    r0 = radii_from(V.eta_min(k0))
    if w == 0.0:
        return r0
    r1 = radii_from(V.eta_min(k1))
    return (1.0 - w) * r0 + w * r1


def _axis_locate(x: np.ndarray, dim: int, grid: Grid):
    pos = (np.asarray(x, float) - grid.lo[dim]) / grid.spacing[dim]
    j = np.clip(np.floor(pos).astype(int), 0, grid.shape[dim] - 2)
    w = np.clip(pos - j, 0.0, 1.0)
    return j, w


def optimal_tracking_input(V: ValueFunction, r, t: float,
                           bounds: InputBounds | None = None) -> np.ndarray:
    """Thrust minimizing <dV/dr, g>: bang-bang per channel, center on ties.

    Out-of-grid states saturate to the boundary (logged once per call site
    pattern); returns shape (..., 2).
    """
    if bounds is None:
        bounds = V.bounds
    pts = np.asarray(r, float)
    _, _, oob = V._cell_index(pts)
    if np.any(oob):
        log.warning("optimal_tracking_input: %d state(s) outside grid, saturating",
                    int(np.sum(oob)))
    q = V.gradient(pts, t)
    out = np.empty(pts.shape[:-1] + (2,))
    for col, (box, coeff) in enumerate((
            (bounds.thrust_a, 1.0 / V.params.eff_mass_u),
            (bounds.thrust_b, 1.0 / V.params.eff_mass_w))):
        kappa = q[..., 2 + col] * coeff
        center = 0.5 * (box[0] + box[1])
        out[..., col] = np.where(kappa > 0.0, box[0],
                                 np.where(kappa < 0.0, box[1], center))
    return out


def pde_residual(V: ValueFunction, k: int, dynamics=None) -> float:
    """Sup-norm of the variational-inequality residual between slices k, k+1.

    The residual uses the central-difference Hamiltonian without the
    artificial dissipation, so it measures how far the stored solution is
    from the ideal scheme; it should vanish at the dissipation scale.
    """
    if dynamics is None:
        dynamics = AuvRelativeDynamics(V.wave, V.params, V.bounds)
    grid = V.grid
    mesh = grid.sparse_mesh()
    dt = V.times[k + 1] - V.times[k]
    Vk = V.values[k]
    l = np.broadcast_to(grid.error_norm(), grid.shape)
    grads = []
    for i in range(grid.dim):
        D_minus, D_plus = _one_sided_differences(Vk, i, grid.spacing[i])
        grads.append(0.5 * (D_minus + D_plus))
    H = hamiltonian(dynamics, mesh, grads, V.times[k])
    dvdt = (V.values[k + 1] - Vk) / dt
    resid = np.maximum(dvdt + H, l - Vk)
    interior = tuple(slice(1, -1) for _ in range(grid.dim))
    return float(np.max(np.abs(resid[interior])))
