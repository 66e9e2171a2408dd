"""Run manifests and the delimited trajectory interchange format."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from pathlib import Path

import numpy as np

from .planner import Scenario, Solution


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class RunManifest:
    """Records config hash, seeds, artifacts and timings for one command."""

    def __init__(self, command: str, config_path, config_bytes: bytes, seeds=None):
        from . import __version__

        self.data = {
            "command": command,
            "config": str(config_path),
            "config_sha256": hashlib.sha256(config_bytes).hexdigest(),
            "seeds": list(seeds) if seeds is not None else [],
            "artifacts": {},
            "timings_s": {},
            "versions": {"tubeplan": __version__, "numpy": np.__version__},
        }
        self._t0 = time.perf_counter()

    def add(self, key: str, path) -> None:
        self.data["artifacts"][key] = {
            "path": str(path), "sha256": sha256_file(path)}

    def time(self, key: str) -> "_Timer":
        return _Timer(self, key)

    def write(self, path) -> Path:
        path = Path(path)
        self.data["timings_s"]["total"] = round(time.perf_counter() - self._t0, 3)
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True))
        return path


class _Timer:
    def __init__(self, manifest: RunManifest, key: str):
        self.manifest = manifest
        self.key = key

    def __enter__(self):
        self._t = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.manifest.data["timings_s"][self.key] = round(
            time.perf_counter() - self._t, 3)
        return False


def write_trajectory_csv(path, scenario: Scenario, solution: Solution) -> Path:
    """Canonical plan interchange: one row per (vehicle, step)."""
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["vehicle", "k", "t", "x", "z", "u_x", "u_z", "radius"])
    for i in range(scenario.M):
        p = solution.positions(i)
        u = solution.inputs(i)
        for k in range(scenario.N + 1):
            ux, uz = (u[k] if k < scenario.N else (0.0, 0.0))
            w.writerow([i, k, repr(k * scenario.T_s),
                        repr(float(p[k, 0])), repr(float(p[k, 1])),
                        repr(float(ux)), repr(float(uz)),
                        repr(float(solution.radii[i, k]))])
    path.write_text(buf.getvalue())
    return path


def read_trajectory_csv(path):
    """Returns (positions (M, N+1, 2), inputs (M, N, 2), radii (M, N+1))."""
    rows = []
    with Path(path).open() as f:
        reader = csv.reader(f)
        next(reader)
        for row in reader:
            rows.append([float(v) for v in row])
    arr = np.asarray(rows)
    M = int(arr[:, 0].max()) + 1
    steps = int(arr[:, 1].max()) + 1
    pos = np.empty((M, steps, 2))
    inp = np.empty((M, steps - 1, 2))
    radii = np.empty((M, steps))
    for row in arr:
        i, k = int(row[0]), int(row[1])
        pos[i, k] = row[3:5]
        if k < steps - 1:
            inp[i, k] = row[5:7]
        radii[i, k] = row[7]
    return pos, inp, radii


def write_radii_csv(path, times, radii) -> Path:
    """Time-indexed (state-independent) radius profile."""
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "radius"])
    for t, r in zip(times, radii):
        w.writerow([repr(float(t)), repr(float(r))])
    path.write_text(buf.getvalue())
    return path


def read_radii_csv(path):
    rows = []
    with Path(path).open() as f:
        reader = csv.reader(f)
        next(reader)
        for row in reader:
            rows.append((float(row[0]), float(row[1])))
    arr = np.asarray(rows)
    return arr[:, 0], arr[:, 1]
