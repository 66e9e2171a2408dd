"""Vehicle, planner and relative dynamics plus the three wave-disturbance models.

The tracking system is a planar (x-z) AUV with relative surge/heave
velocities driven by two thrusters; the planning system is a 2D single
integrator.  Relative dynamics come in two flavours: a 4-state variant for
state-independent waves and a 6-state variant that carries the true
vehicle position so a state-dependent wave field can be evaluated.

Everything here is a pure function of its arguments; all array arguments
broadcast over leading dimensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

Interval = tuple[float, float]


def _check_interval(name: str, iv: Interval, contain_zero: bool = True) -> Interval:
    lo, hi = float(iv[0]), float(iv[1])
    if not (lo <= hi) or not (math.isfinite(lo) and math.isfinite(hi)):
        raise ValueError(f"{name}: invalid interval [{lo}, {hi}]")
    if contain_zero and not (lo <= 0.0 <= hi):
        raise ValueError(f"{name}: interval [{lo}, {hi}] must contain 0")
    return (lo, hi)


@dataclass(frozen=True)
class AuvParams:
    """Physical parameters of the planar AUV model.

    Added-mass coefficients are negative by hydrodynamic convention; the
    effective masses m - X_udot and m - Z_wdot must stay positive.
    """

    m: float = 116.0
    m_bar: float = 116.2
    X_udot: float = -167.7
    Z_wdot: float = -383.0
    X_u: float = 26.9
    Z_w: float = 0.0
    X_uu: float = 241.3
    Z_ww: float = 265.6
    g: float = 9.81

    def __post_init__(self):
        if self.m <= 0 or self.g <= 0:
            raise ValueError("mass and gravity must be positive")
        if self.m - self.X_udot <= 0 or self.m - self.Z_wdot <= 0:
            raise ValueError("effective masses must be positive")

    @property
    def eff_mass_u(self) -> float:
        return self.m - self.X_udot

    @property
    def eff_mass_w(self) -> float:
        return self.m - self.Z_wdot

    @property
    def wave_accel_coeff_u(self) -> float:
        """Coefficient of the wave acceleration A_fx in the surge equation."""
        return (self.m_bar - self.m) / self.eff_mass_u

    @property
    def wave_accel_coeff_w(self) -> float:
        return (self.m_bar - self.m) / self.eff_mass_w

    @property
    def buoyancy_accel(self) -> float:
        """Constant heave acceleration from the weight/buoyancy imbalance."""
        return self.g * (self.m - self.m_bar) / self.eff_mass_w


@dataclass(frozen=True)
class TrackingState:
    x: float
    z: float
    u_r: float
    w_r: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.z, self.u_r, self.w_r])

    @staticmethod
    def from_array(a) -> "TrackingState":
        x, z, u_r, w_r = (float(v) for v in a)
        return TrackingState(x, z, u_r, w_r)


@dataclass(frozen=True)
class TrackingInput:
    T_A: float
    T_B: float

    def as_array(self) -> np.ndarray:
        return np.array([self.T_A, self.T_B])


@dataclass(frozen=True)
class PlanningState:
    x_p: float
    z_p: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x_p, self.z_p])


@dataclass(frozen=True)
class PlanningInput:
    u_px: float
    u_pz: float

    def as_array(self) -> np.ndarray:
        return np.array([self.u_px, self.u_pz])


@dataclass(frozen=True)
class DisturbanceBounds:
    """Symmetric-ish per-channel bounds on the additive model noise.

    d_fv / d_fa are only meaningful with the TVSI wave model (slack of the
    spatially-collapsed wave approximation); both act per axis.
    """

    d_x: Interval = (-0.001, 0.001)
    d_z: Interval = (-0.001, 0.001)
    d_ur: Interval = (-0.001, 0.001)
    d_wr: Interval = (-0.001, 0.001)
    d_fv: Interval = (0.0, 0.0)
    d_fa: Interval = (0.0, 0.0)

    def __post_init__(self):
        for name in ("d_x", "d_z", "d_ur", "d_wr", "d_fv", "d_fa"):
            object.__setattr__(self, name, _check_interval(name, getattr(self, name)))

    def base_lo(self) -> np.ndarray:
        return np.array([self.d_x[0], self.d_z[0], self.d_ur[0], self.d_wr[0]])

    def base_hi(self) -> np.ndarray:
        return np.array([self.d_x[1], self.d_z[1], self.d_ur[1], self.d_wr[1]])


@dataclass(frozen=True)
class TvsdWave:
    """Deep-water linear wave field: amplitude decays as exp(-k z)."""

    A: float
    omega: float
    k: float

    def __post_init__(self):
        if self.A < 0 or self.omega <= 0 or self.k <= 0:
            raise ValueError("TVSD wave needs A >= 0, omega > 0, k > 0")

    @staticmethod
    def from_frequency(A: float, omega: float, g: float = 9.81) -> "TvsdWave":
        return TvsdWave(A=A, omega=omega, k=omega * omega / g)


@dataclass(frozen=True)
class TvsiWave:
    """Spatially collapsed wave: known sinusoid plus bounded slack."""

    A_v: float
    A_a: float
    phi_v: float = 0.0
    phi_a: float = 0.0
    omega: float = math.pi
    d_fv: Interval = (0.0, 0.0)
    d_fa: Interval = (0.0, 0.0)

    def __post_init__(self):
        if self.A_v < 0 or self.A_a < 0 or self.omega <= 0:
            raise ValueError("TVSI wave needs A_v, A_a >= 0 and omega > 0")
        object.__setattr__(self, "d_fv", _check_interval("d_fv", self.d_fv))
        object.__setattr__(self, "d_fa", _check_interval("d_fa", self.d_fa))


@dataclass(frozen=True)
class TisiWave:
    """Time-invariant wave envelope: pure velocity/acceleration boxes."""

    V_box: Interval
    A_box: Interval

    def __post_init__(self):
        object.__setattr__(self, "V_box", _check_interval("V_box", self.V_box))
        object.__setattr__(self, "A_box", _check_interval("A_box", self.A_box))


WaveModel = TvsdWave | TvsiWave | TisiWave


def augmentation_matrix() -> np.ndarray:
    """4x2 lift taking planner positions into tracking-state coordinates."""
    M = np.zeros((4, 2))
    M[0, 0] = 1.0
    M[1, 1] = 1.0
    return M


def eval_wave_tvsd(x, z, t, wave: TvsdWave):
    """Wave velocity and acceleration of the state-dependent model.

    Returns (V_f, A_f), each with trailing axis (x, z).  Inputs broadcast.
    """
    x, z, t = np.asarray(x, float), np.asarray(z, float), np.asarray(t, float)
    phase = wave.k * x - wave.omega * t
    decay = wave.A * wave.omega * np.exp(-wave.k * z)
    V = np.stack(np.broadcast_arrays(decay * np.cos(phase), -decay * np.sin(phase)), axis=-1)
    A = np.stack(np.broadcast_arrays(wave.omega * decay * np.sin(phase),
                                     wave.omega * decay * np.cos(phase)), axis=-1)
    return V, A


def eval_wave_tvsi(t, wave: TvsiWave, slack=None):
    """Wave velocity and acceleration of the state-independent model.

    slack is a 4-vector (d_fvx, d_fvz, d_fax, d_faz); components must lie
    within the wave's slack bounds.  None means zero slack.
    """
    t = np.asarray(t, float)
    if slack is None:
        slack = np.zeros(4)
    slack = np.asarray(slack, float)
    for i, iv in ((0, wave.d_fv), (1, wave.d_fv), (2, wave.d_fa), (3, wave.d_fa)):
        s = slack[..., i]
        if np.any(s < iv[0] - 1e-12) or np.any(s > iv[1] + 1e-12):
            raise ValueError(f"slack component {i} outside bounds {iv}")
    V = np.stack(np.broadcast_arrays(
        wave.A_v * np.cos(wave.phi_v - wave.omega * t) + slack[..., 0],
        -wave.A_v * np.sin(wave.phi_v - wave.omega * t) + slack[..., 1]), axis=-1)
    A = np.stack(np.broadcast_arrays(
        wave.A_a * np.sin(wave.phi_a - wave.omega * t) + slack[..., 2],
        wave.A_a * np.cos(wave.phi_a - wave.omega * t) + slack[..., 3]), axis=-1)
    return V, A


def tisi_from_tvsd(wave: TvsdWave, x_range: Interval, z_range: Interval,
                   horizon: float) -> TisiWave:
    """Tightest time-invariant boxes containing the TVSD field on a region.

    The field magnitude is A*omega*exp(-k z) (velocity) and
    A*omega^2*exp(-k z) (acceleration), monotone decreasing in depth, and
    the phase sweeps the full circle over any horizon, so the extrema sit
    at the shallow edge of the region.
    """
    if x_range[0] > x_range[1] or z_range[0] > z_range[1]:
        raise ValueError("empty region")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    peak_v = wave.A * wave.omega * math.exp(-wave.k * z_range[0])
    peak_a = peak_v * wave.omega
    return TisiWave(V_box=(-peak_v, peak_v), A_box=(-peak_a, peak_a))


def tracking_rhs(s, u, d, wave_vel, wave_acc, params: AuvParams) -> np.ndarray:
    """Right-hand side of the tracking dynamics.

    s = (x, z, u_r, w_r), u = (T_A, T_B), d = (d_x, d_z, d_ur, d_wr),
    wave_vel/wave_acc = (x, z) components of the wave field at the vehicle.
    All arguments broadcast over leading axes (trailing axis = components).
    """
    s = np.asarray(s, float)
    u = np.asarray(u, float)
    d = np.asarray(d, float)
    wv = np.asarray(wave_vel, float)
    wa = np.asarray(wave_acc, float)
    u_r = s[..., 2]
    w_r = s[..., 3]
    dm = params.m_bar - params.m
    xdot = u_r + wv[..., 0] + d[..., 0]
    zdot = w_r + wv[..., 1] + d[..., 1]
    urdot = (dm * wa[..., 0] - (params.X_u + params.X_uu * np.abs(u_r)) * u_r
             + u[..., 0]) / params.eff_mass_u + d[..., 2]
    wrdot = (dm * wa[..., 1] + params.g * (params.m - params.m_bar)
             - (params.Z_w + params.Z_ww * np.abs(w_r)) * w_r
             + u[..., 1]) / params.eff_mass_w + d[..., 3]
    return np.stack(np.broadcast_arrays(xdot, zdot, urdot, wrdot), axis=-1)


def planning_rhs(p, u_p) -> np.ndarray:
    """Single-integrator planner: pdot = u_p."""
    p = np.asarray(p, float)
    return np.broadcast_to(np.asarray(u_p, float), p.shape).copy()


def discretize_planner(p, u_p, T_s: float) -> np.ndarray:
    """Exact zero-order-hold step of the single integrator."""
    if T_s <= 0:
        raise ValueError("T_s must be positive")
    return np.asarray(p, float) + T_s * np.asarray(u_p, float)


def relative_rhs(r, u, u_p, d, t, wave: WaveModel, params: AuvParams,
                 wave_sample=None) -> np.ndarray:
    """Right-hand side of the relative (tracker minus lifted planner) system.

    4-state r = (e_x, e_z, eta_u, eta_w) pairs with TVSI/TISI waves;
    6-state r additionally carries the true position (x, z) and pairs with
    the TVSD wave, evaluated at that position.  For the box-valued models
    a concrete realization may be passed as wave_sample = (V_f, A_f);
    otherwise TVSI uses zero slack and TISI uses a zero sample.
    """
    r = np.asarray(r, float)
    dim = r.shape[-1]
    if dim == 4:
        if isinstance(wave, TvsdWave):
            raise ValueError("4-state relative system needs a state-independent wave")
        if wave_sample is not None:
            wv, wa = (np.asarray(a, float) for a in wave_sample)
            if isinstance(wave, TisiWave):
                for comp, box in ((wv, wave.V_box), (wa, wave.A_box)):
                    if np.any(comp < box[0] - 1e-12) or np.any(comp > box[1] + 1e-12):
                        raise ValueError("TISI wave sample outside boxes")
        elif isinstance(wave, TvsiWave):
            wv, wa = eval_wave_tvsi(t, wave)
        else:
            wv = np.zeros(r.shape[:-1] + (2,))
            wa = np.zeros_like(wv)
    elif dim == 6:
        if not isinstance(wave, TvsdWave):
            raise ValueError("6-state relative system needs the TVSD wave")
        wv, wa = eval_wave_tvsd(r[..., 4], r[..., 5], t, wave)
    else:
        raise ValueError(f"relative state must have 4 or 6 components, got {dim}")

    u_p = np.asarray(u_p, float)
    # velocity rows reuse the tracking dynamics with eta in the u_r/w_r slots
    s_like = np.concatenate([np.zeros(r.shape[:-1] + (2,)), r[..., 2:4]], axis=-1)
    f = tracking_rhs(s_like, u, d, wv, wa, params)
    e_dot = np.stack(np.broadcast_arrays(f[..., 0] - u_p[..., 0],
                                         f[..., 1] - u_p[..., 1]), axis=-1)
    parts = [e_dot, f[..., 2:4]]
    if dim == 6:
        parts.append(f[..., 0:2])
    lead = np.broadcast_shapes(*(a.shape[:-1] for a in parts))
    return np.concatenate([np.broadcast_to(a, lead + a.shape[-1:]) for a in parts], axis=-1)
