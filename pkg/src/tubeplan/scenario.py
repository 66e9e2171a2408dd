"""Scenario configuration: YAML schema, validation and object assembly.

One config file describes a full run: vehicle physics, wave model, game
input boxes, the planning problem, HJ grid resolutions and simulation
settings.  Loading is strict; inconsistent fields raise ConfigError, which
the command line maps to its config-error exit code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .collision import Ellipsoid, Polytope
from .models import (
    AuvParams,
    DisturbanceBounds,
    TisiWave,
    TvsdWave,
    TvsiWave,
    WaveModel,
    tisi_from_tvsd,
)
from .planner import Scenario, VehicleSpec
from .reachability import Grid, InputBounds


class ConfigError(ValueError):
    """Invalid or inconsistent scenario configuration."""


@dataclass
class HjSettings:
    e_range: tuple[float, float] = (-0.06, 0.06)
    e_nodes: int = 21
    eta_range: tuple[float, float] = (-0.12, 0.12)
    eta_nodes: int = 13
    x_nodes: int = 11
    z_nodes: int = 11
    cfl: float = 0.8
    time_steps: int | None = None    # stored slices; defaults to N


@dataclass
class SimSettings:
    dt_divisor: int = 20
    seeds: int = 100
    slack_cells: float = 1.0


@dataclass
class RunConfig:
    name: str
    path: Path
    raw_bytes: bytes
    params: AuvParams
    wave: WaveModel
    wave_truth: WaveModel
    scenario: Scenario
    teb_bounds: InputBounds       # game boxes used for the HJ solve
    runtime_thrust: tuple[tuple[float, float], tuple[float, float]]
    hj: HjSettings
    table_cells: tuple[int, int] = (31, 31)
    sim: SimSettings = field(default_factory=SimSettings)
    eta0: tuple[float, float] = (0.0, 0.0)

    @property
    def is_state_dependent(self) -> bool:
        return isinstance(self.wave, TvsdWave)

    def grid(self) -> Grid:
        hj = self.hj
        steps = hj.time_steps if hj.time_steps is not None else self.scenario.N
        lo = [hj.e_range[0], hj.e_range[0], hj.eta_range[0], hj.eta_range[0]]
        hi = [hj.e_range[1], hj.e_range[1], hj.eta_range[1], hj.eta_range[1]]
        shape = [hj.e_nodes, hj.e_nodes, hj.eta_nodes, hj.eta_nodes]
        if self.is_state_dependent:
            (x_lo, x_hi), (z_lo, z_hi) = self.scenario.region
            lo += [x_lo, z_lo]
            hi += [x_hi, z_hi]
            shape += [hj.x_nodes, hj.z_nodes]
        return Grid(tuple(lo), tuple(hi), tuple(shape),
                    horizon=self.scenario.horizon, time_steps=steps)


def _interval(node, name) -> tuple[float, float]:
    try:
        lo, hi = float(node[0]), float(node[1])
    except Exception as exc:
        raise ConfigError(f"{name}: expected [lo, hi]") from exc
    if lo > hi:
        raise ConfigError(f"{name}: lo > hi")
    return lo, hi


def _box(node, name):
    if not isinstance(node, dict) or "x" not in node or "z" not in node:
        raise ConfigError(f"{name}: expected mapping with x and z intervals")
    return (_interval(node["x"], f"{name}.x"), _interval(node["z"], f"{name}.z"))


def _shape(node) -> Ellipsoid:
    if node in (None, "point"):
        return Ellipsoid.point()
    if isinstance(node, dict) and "P" in node:
        P = np.asarray(node["P"], float)
        if P.ndim == 1:
            P = np.diag(P)
        return Ellipsoid(P)
    raise ConfigError(f"vehicle shape: expected 'point' or {{P: ...}}, got {node!r}")


def _wave(node, region, horizon, g) -> tuple[WaveModel, WaveModel]:
    """Returns (model used for the bounds, physical truth for simulation)."""
    if not isinstance(node, dict) or "kind" not in node:
        raise ConfigError("wave: expected mapping with a 'kind'")
    kind = node["kind"]
    if kind == "tvsd":
        w = TvsdWave.from_frequency(A=float(node["A"]), omega=float(node["omega"]), g=g)
        return w, w
    if kind == "tvsi":
        w = TvsiWave(A_v=float(node["A_v"]), A_a=float(node["A_a"]),
                     phi_v=float(node.get("phi_v", 0.0)),
                     phi_a=float(node.get("phi_a", 0.0)),
                     omega=float(node["omega"]),
                     d_fv=_interval(node.get("slack_v", (0, 0)), "wave.slack_v"),
                     d_fa=_interval(node.get("slack_a", (0, 0)), "wave.slack_a"))
        return w, w
    if kind == "tisi":
        src = node.get("source")
        if src is not None:
            source = TvsdWave.from_frequency(A=float(src["A"]),
                                             omega=float(src["omega"]), g=g)
            w = tisi_from_tvsd(source, region[0], region[1], horizon)
            truth = source
        else:
            w = TisiWave(V_box=_interval(node["V_box"], "wave.V_box"),
                         A_box=_interval(node["A_box"], "wave.A_box"))
            truth = w
        return w, truth
    raise ConfigError(f"wave.kind must be tvsd|tvsi|tisi, got {kind!r}")


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw_bytes = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(raw_bytes)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")
    try:
        return _parse(doc, path, raw_bytes)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _parse(doc: dict, path: Path, raw_bytes: bytes) -> RunConfig:
    name = doc.get("name", path.stem)
    params = AuvParams(**doc.get("vehicle_params", {}))

    plan = doc["planning"]
    N = int(plan["N"])
    T_s = float(plan["T_s"])
    if "T" in plan and abs(float(plan["T"]) - N * T_s) > 1e-9:
        raise ConfigError(f"planning.T = {plan['T']} != N * T_s = {N * T_s}")
    region = _box(doc["region"], "region")
    goal = _box(doc["goal"], "goal")
    u_box = _box(plan.get("u_box", {"x": (-0.02, 0.02), "z": (-0.02, 0.02)}),
                 "planning.u_box")

    vehicles = []
    for v in doc["vehicles"]:
        start = (float(v["start"][0]), float(v["start"][1]))
        vehicles.append(VehicleSpec(start=start, shape=_shape(v.get("shape")),
                                    u_box=_box(v["u_box"], "vehicle.u_box")
                                    if "u_box" in v else u_box))

    obstacles = []
    for idx, o in enumerate(doc.get("obstacles", [])):
        if "rect" in o:
            (x_lo, x_hi), (z_lo, z_hi) = _box(o["rect"], f"obstacles[{idx}].rect")
            obstacles.append(Polytope.from_rect((x_lo, x_hi), (z_lo, z_hi)))
        elif "vertices" in o:
            obstacles.append(Polytope.from_vertices(np.asarray(o["vertices"], float)))
        elif "halfplanes" in o:
            A = np.asarray(o["halfplanes"]["A"], float)
            b = np.asarray(o["halfplanes"]["b"], float)
            obstacles.append(Polytope(A, b))
        else:
            raise ConfigError(f"obstacles[{idx}]: need rect, vertices or halfplanes")

    scenario = Scenario(
        vehicles=vehicles, region=region, goal=goal,
        reference=tuple(float(v) for v in plan["reference"]),
        obstacles=obstacles, N=N, T_s=T_s,
        Q=tuple(float(v) for v in plan.get("Q", (1.0, 1.0))),
        R=tuple(float(v) for v in plan.get("R", (10.0, 10.0))),
        margin=float(plan.get("margin", 0.0)),
        l_max=int(plan.get("l_max", 5)),
        replan_tol=float(plan.get("replan_tol", 1e-4)))

    wave, wave_truth = _wave(doc["wave"], region, scenario.horizon, params.g)

    dist = DisturbanceBounds(**{k: _interval(v, f"disturbance.{k}")
                                for k, v in doc.get("disturbance", {}).items()})
    thrust = doc.get("thrust", {})
    runtime_thrust = (_interval(thrust.get("T_A", (-70, 70)), "thrust.T_A"),
                      _interval(thrust.get("T_B", (-70, 70)), "thrust.T_B"))
    teb_thrust = doc.get("teb_thrust", thrust)
    # the planner adversary in the game covers the widest vehicle input box
    px = (min(v.u_box[0][0] for v in vehicles), max(v.u_box[0][1] for v in vehicles))
    pz = (min(v.u_box[1][0] for v in vehicles), max(v.u_box[1][1] for v in vehicles))
    teb_bounds = InputBounds(
        thrust_a=_interval(teb_thrust.get("T_A", (-70, 70)), "teb_thrust.T_A"),
        thrust_b=_interval(teb_thrust.get("T_B", (-70, 70)), "teb_thrust.T_B"),
        planner_x=px, planner_z=pz, disturbance=dist)
    for a, (rt, tb) in enumerate(zip(runtime_thrust,
                                     (teb_bounds.thrust_a, teb_bounds.thrust_b))):
        if tb[0] < rt[0] - 1e-12 or tb[1] > rt[1] + 1e-12:
            raise ConfigError("teb_thrust must lie within the runtime thrust box")

    hj_doc = doc.get("hj", {})
    hj = HjSettings(
        e_range=_interval(hj_doc.get("e_range", (-0.06, 0.06)), "hj.e_range"),
        e_nodes=int(hj_doc.get("e_nodes", 21)),
        eta_range=_interval(hj_doc.get("eta_range", (-0.12, 0.12)), "hj.eta_range"),
        eta_nodes=int(hj_doc.get("eta_nodes", 13)),
        x_nodes=int(hj_doc.get("x_nodes", 11)),
        z_nodes=int(hj_doc.get("z_nodes", 11)),
        cfl=float(hj_doc.get("cfl", 0.8)),
        time_steps=hj_doc.get("time_steps"))
    if hj.time_steps is not None:
        hj.time_steps = int(hj.time_steps)
        if scenario.N % hj.time_steps:
            raise ConfigError("hj.time_steps must divide planning.N")

    table_doc = doc.get("table", {})
    table_cells = (int(table_doc.get("x_cells", 31)), int(table_doc.get("z_cells", 31)))

    sim_doc = doc.get("simulation", {})
    sim = SimSettings(dt_divisor=int(sim_doc.get("dt_divisor", 20)),
                      seeds=int(sim_doc.get("seeds", 100)),
                      slack_cells=float(sim_doc.get("slack_cells", 1.0)))

    eta0 = tuple(float(v) for v in doc.get("eta0", (0.0, 0.0)))
    if len(eta0) != 2:
        raise ConfigError("eta0 must have two velocity components")

    return RunConfig(name=name, path=path, raw_bytes=raw_bytes, params=params,
                     wave=wave, wave_truth=wave_truth, scenario=scenario,
                     teb_bounds=teb_bounds, runtime_thrust=runtime_thrust,
                     hj=hj, table_cells=table_cells, sim=sim, eta0=eta0)
