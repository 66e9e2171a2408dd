import math
from pathlib import Path

import numpy as np

from tubeplan.collision import Ellipsoid, Polytope

REPO_ROOT = Path(__file__).resolve().parents[1]
CONFIG_DIR = REPO_ROOT / "configs"


def random_polytope(rng: np.random.Generator, center=None, scale=0.5) -> Polytope:
    """Random convex polygon around center, as a halfplane polytope."""
    if center is None:
        center = rng.uniform(-1.0, 1.0, 2)
    n = int(rng.integers(3, 8))
    pts = np.asarray(center) + rng.uniform(-scale, scale, (n + 4, 2))
    return Polytope.from_vertices(pts)


def random_ellipsoid(rng: np.random.Generator, max_axis=0.5) -> Ellipsoid:
    """Random SPD shape matrix with semi-axes in (0.05, max_axis)."""
    axes = rng.uniform(0.05, max_axis, 2)
    th = rng.uniform(0.0, 2 * math.pi)
    c, s = math.cos(th), math.sin(th)
    V = np.array([[c, -s], [s, c]])
    return Ellipsoid(V @ np.diag(axes ** 2) @ V.T)
