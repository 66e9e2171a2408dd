"""Tracking-error-bound lookup table, vehicle augmentation and box erosion.

The state-dependent error bound is approximated per planner cell and
sample time by the radius of the projected value sublevel set; vehicles
are grown by that radius (outer Minkowski approximation) and workspace
boxes are shrunk by the grown shape so that planner-feasible positions
keep the true vehicle inside the workspace.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .collision import Ellipsoid
from .reachability import ValueFunction, teb_radii_sd_batch


class InfeasibleScenarioError(ValueError):
    """Erosion emptied a required feasible set."""


@dataclass
class TebTable:
    """Radius table R(x_d, z_d, t_k) over uniform planner cells."""

    x_centers: np.ndarray
    z_centers: np.ndarray
    times: np.ndarray
    radii: np.ndarray           # (nx, nz, nt)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x_centers = np.asarray(self.x_centers, float)
        self.z_centers = np.asarray(self.z_centers, float)
        self.times = np.asarray(self.times, float)
        self.radii = np.asarray(self.radii, float)
        expect = (len(self.x_centers), len(self.z_centers), len(self.times))
        if self.radii.shape != expect:
            raise ValueError(f"radii shape {self.radii.shape} != {expect}")
        if np.any(self.radii < 0) or not np.all(np.isfinite(self.radii)):
            raise ValueError("radii must be finite and nonnegative")

    @property
    def cell_halfwidth(self) -> tuple[float, float]:
        hx = 0.5 * (self.x_centers[1] - self.x_centers[0]) if len(self.x_centers) > 1 else 0.0
        hz = 0.5 * (self.z_centers[1] - self.z_centers[0]) if len(self.z_centers) > 1 else 0.0
        return hx, hz

    def time_index(self, k) -> int:
        k = int(k)
        if not 0 <= k < len(self.times):
            raise IndexError(f"time index {k} out of range")
        return k

    def max_at_time(self, k: int) -> float:
        return float(np.max(self.radii[:, :, self.time_index(k)]))

    def radius_at(self, x: float, z: float, k: int) -> float:
        """Radius of the cell containing (x, z), clamped to the table."""
        i = int(np.argmin(np.abs(self.x_centers - x)))
        j = int(np.argmin(np.abs(self.z_centers - z)))
        return float(self.radii[i, j, self.time_index(k)])

    def to_csv(self, path) -> Path:
        path = Path(path)
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["x_d", "z_d", "t_k", "radius"])
        for i, x in enumerate(self.x_centers):
            for j, z in enumerate(self.z_centers):
                for k, t in enumerate(self.times):
                    writer.writerow([repr(float(x)), repr(float(z)),
                                     repr(float(t)), repr(float(self.radii[i, j, k]))])
        path.write_text(buf.getvalue())
        meta_path = path.with_suffix(".meta.json")
        meta = dict(self.meta)
        meta.update({"nx": len(self.x_centers), "nz": len(self.z_centers),
                     "nt": len(self.times)})
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
        return path

    @staticmethod
    def from_csv(path) -> "TebTable":
        path = Path(path)
        meta_path = path.with_suffix(".meta.json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        xs, zs, ts, rs = [], [], [], []
        with path.open() as f:
            reader = csv.reader(f)
            next(reader)
            for row in reader:
                xs.append(float(row[0]))
                zs.append(float(row[1]))
                ts.append(float(row[2]))
                rs.append(float(row[3]))
        x_centers = np.unique(xs)
        z_centers = np.unique(zs)
        times = np.unique(ts)
        radii = np.asarray(rs).reshape(len(x_centers), len(z_centers), len(times))
        return TebTable(x_centers, z_centers, times, radii, meta)


def build_table(V: ValueFunction, vbar: float, x_range, z_range,
                x_cells: int, z_cells: int, times) -> TebTable:
    """Evaluate the state-dependent radius at every cell center and time."""
    if V.dim != 6:
        raise ValueError("table build needs the 6D (state-dependent) value function")
    x_centers = _cell_centers(x_range, x_cells)
    z_centers = _cell_centers(z_range, z_cells)
    times = np.asarray(times, float)
    X, Z = np.meshgrid(x_centers, z_centers, indexing="ij")
    radii = np.empty((x_cells, z_cells, len(times)))
    for k, t in enumerate(times):
        radii[:, :, k] = teb_radii_sd_batch(V, vbar, X.ravel(), Z.ravel(),
                                            float(t)).reshape(x_cells, z_cells)
    meta = {"vbar": vbar, "x_range": list(map(float, x_range)),
            "z_range": list(map(float, z_range))}
    return TebTable(x_centers, z_centers, times, radii, meta)


def _cell_centers(rng, n: int) -> np.ndarray:
    lo, hi = float(rng[0]), float(rng[1])
    if hi <= lo or n < 1:
        raise ValueError("invalid cell range")
    w = (hi - lo) / n
    return lo + w * (np.arange(n) + 0.5)


def max_radius(table: TebTable, region_bbox, k: int) -> float:
    """Largest table radius over cells overlapping an axis-aligned region.

    region_bbox = ((x_lo, x_hi), (z_lo, z_hi)).  A cell counts as
    overlapping when its closed square meets the bounding box, which errs
    on the side of including more cells (larger radius, safe).
    """
    (x_lo, x_hi), (z_lo, z_hi) = region_bbox
    if x_lo > x_hi or z_lo > z_hi:
        raise ValueError("empty region")
    hx, hz = table.cell_halfwidth
    in_x = (table.x_centers + hx >= x_lo) & (table.x_centers - hx <= x_hi)
    in_z = (table.z_centers + hz >= z_lo) & (table.z_centers - hz <= z_hi)
    if not np.any(in_x) or not np.any(in_z):
        # region entirely off the table: fall back to the nearest cells
        in_x = np.abs(table.x_centers - np.clip(0.5 * (x_lo + x_hi),
                                                table.x_centers[0], table.x_centers[-1])) <= hx + 1e-12
        in_z = np.abs(table.z_centers - np.clip(0.5 * (z_lo + z_hi),
                                                table.z_centers[0], table.z_centers[-1])) <= hz + 1e-12
    sub = table.radii[np.ix_(np.flatnonzero(in_x), np.flatnonzero(in_z),
                             [table.time_index(k)])]
    return float(np.max(sub))


def augment_vehicle(shape: Ellipsoid, rho: float) -> Ellipsoid:
    """Outer ellipsoidal approximation of the Minkowski sum shape + ball(rho).

    Uses P_out = (1 + 1/s) P + (1 + s) rho^2 I with the trace-optimal
    s = sqrt(tr P / (2 rho^2)), a guaranteed superset of the exact sum for
    any s > 0 (naive per-axis inflation of the semi-axes is NOT a superset
    off the principal axes).  Exact for balls and point masses.
    """
    if rho < 0:
        raise ValueError("radius must be nonnegative")
    if rho == 0.0:
        return shape
    tr = float(np.trace(shape.P))
    if tr <= 0.0:
        return Ellipsoid.ball(rho)
    s = math.sqrt(tr / (2.0 * rho * rho))
    return Ellipsoid((1.0 + 1.0 / s) * shape.P + (1.0 + s) * rho * rho * np.eye(2))


def erode_box(box, rho: float, extents) -> tuple[tuple[float, float], tuple[float, float]]:
    """Minkowski-difference of an axis-aligned box with the augmented shape's
    bounding box: every side moves inward by (extent + rho)."""
    (x_lo, x_hi), (z_lo, z_hi) = box
    ex, ez = (float(v) for v in extents)
    if rho < 0 or ex < 0 or ez < 0:
        raise ValueError("negative erosion")
    out = ((x_lo + ex + rho, x_hi - ex - rho), (z_lo + ez + rho, z_hi - ez - rho))
    if out[0][0] > out[0][1] - 1e-12 or out[1][0] > out[1][1] - 1e-12:
        raise InfeasibleScenarioError(
            f"erosion by {(ex + rho, ez + rho)} empties box {box}")
    return out


def footprint_bbox(center, shape: Ellipsoid, rho: float):
    """Bounding box of the augmented vehicle at a trajectory point."""
    ext = augment_vehicle(shape, rho).extents()
    cx, cz = float(center[0]), float(center[1])
    return ((cx - ext[0], cx + ext[0]), (cz - ext[1], cz + ext[1]))


def update_radii(table: TebTable, centers: np.ndarray, shape: Ellipsoid,
                 prev_radii: np.ndarray) -> np.ndarray:
    """Per-step worst-case radii over the previous augmented footprints.

    centers: (N+1, 2) planned positions of one vehicle; prev_radii: (N+1,)
    radii used for that plan.  The occupied region at step k is the
    augmented footprint around centers[k].
    """
    centers = np.asarray(centers, float)
    prev_radii = np.asarray(prev_radii, float)
    if centers.shape[0] != len(prev_radii) or centers.shape[0] != len(table.times):
        raise ValueError("need one center and radius per table time sample")
    out = np.empty(len(prev_radii))
    for k in range(len(prev_radii)):
        bbox = footprint_bbox(centers[k], shape, float(prev_radii[k]))
        out[k] = max_radius(table, bbox, k)
    return out
