"""Convex shape types, exact minimum-distance oracles and the smooth
dual-feasibility residuals used as collision constraints in the NLP.

A polytope {w : Aw <= b} stands for an obstacle; an ellipsoid
{p + y : ||P^(-1/2) y|| <= 1} (rotation fixed to identity) stands for a
vehicle.  ``dist >= margin`` constraints are replaced by the existence of
dual variables whose residuals g1..g4 are all satisfied; weak duality makes
any feasible dual certificate a lower bound on the true distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

NORM_EPS = 1e-9  # smoothing of Euclidean norms at the origin


class ConvergenceError(RuntimeError):
    """Raised when an iterative geometric routine fails to converge."""


def smooth_norm(v: np.ndarray, axis: int = -1):
    """sqrt(||v||^2 + eps^2) - eps: equals ||v|| up to eps, smooth at 0."""
    sq = np.sum(v * v, axis=axis)
    return np.sqrt(sq + NORM_EPS ** 2) - NORM_EPS


def smooth_norm_grad(v: np.ndarray, axis: int = -1):
    sq = np.sum(v * v, axis=axis, keepdims=True)
    return v / np.sqrt(sq + NORM_EPS ** 2)


@dataclass(frozen=True)
class Polytope:
    """Bounded 2D polytope in halfplane form with normalized rows.

    Vertices are enumerated at construction (counter-clockwise); empty or
    unbounded inputs are rejected.
    """

    A: np.ndarray
    b: np.ndarray
    vertices: np.ndarray = field(init=False)

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, float))
        b = np.asarray(self.b, float).ravel()
        if A.shape[0] != b.shape[0] or A.shape[1] != 2:
            raise ValueError("A must be (l, 2) matching b of length l")
        norms = np.linalg.norm(A, axis=1)
        if np.any(norms < 1e-12):
            raise ValueError("zero row in A")
        A = A / norms[:, None]
        b = b / norms
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "vertices", _enumerate_vertices(A, b))

    @staticmethod
    def from_rect(x_iv, z_iv) -> "Polytope":
        A = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        b = np.array([x_iv[1], -x_iv[0], z_iv[1], -z_iv[0]])
        return Polytope(A, b)

    @staticmethod
    def from_vertices(pts) -> "Polytope":
        pts = np.asarray(pts, float)
        hull = _convex_hull(pts)
        A_rows, b_rows = [], []
        n = len(hull)
        for i in range(n):
            p0, p1 = hull[i], hull[(i + 1) % n]
            edge = p1 - p0
            normal = np.array([edge[1], -edge[0]])  # outward for CCW hull
            normal /= np.linalg.norm(normal)
            A_rows.append(normal)
            b_rows.append(normal @ p0)
        return Polytope(np.array(A_rows), np.array(b_rows))

    def contains(self, pt, tol: float = 1e-12) -> bool:
        return bool(np.all(self.A @ np.asarray(pt, float) <= self.b + tol))

    def support(self, z) -> float:
        """max_{w in O} z.w over the vertex set."""
        return float(np.max(self.vertices @ np.asarray(z, float)))

    def project(self, pt) -> np.ndarray:
        """Euclidean projection onto the polytope."""
        pt = np.asarray(pt, float)
        if self.contains(pt):
            return pt.copy()
        best, best_d2 = None, np.inf
        verts = self.vertices
        n = len(verts)
        for i in range(n):
            p0 = verts[i]
            seg = verts[(i + 1) % n] - p0
            L2 = seg @ seg
            s = 0.0 if L2 == 0.0 else float(np.clip((pt - p0) @ seg / L2, 0.0, 1.0))
            cand = p0 + s * seg
            d2 = float(np.sum((pt - cand) ** 2))
            if d2 < best_d2:
                best, best_d2 = cand, d2
        return best


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain, CCW order."""
    pts = np.unique(np.asarray(pts, float), axis=0)
    if len(pts) < 3:
        raise ValueError("need at least 3 distinct points")
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2:
                u, v = out[-1] - out[-2], p - out[-2]
                if u[0] * v[1] - u[1] * v[0] > 1e-15:
                    break
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        raise ValueError("points are collinear")
    return hull


def _enumerate_vertices(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    l = A.shape[0]
    pts = []
    for i in range(l):
        for j in range(i + 1, l):
            M = np.array([A[i], A[j]])
            det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
            if abs(det) < 1e-12:
                continue
            v = np.linalg.solve(M, np.array([b[i], b[j]]))
            if np.all(A @ v <= b + 1e-9):
                pts.append(v)
    if not pts:
        raise ValueError("polytope is empty or degenerate")
    pts = np.unique(np.round(np.asarray(pts), 12), axis=0)
    if len(pts) < 3:
        raise ValueError("polytope has empty interior")
    # bounded iff the outward normals positively span the plane: no angular
    # gap of pi or more between consecutive normals
    ang = np.sort(np.arctan2(A[:, 1], A[:, 0]))
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * math.pi]]))
    if np.max(gaps) >= math.pi - 1e-12:
        raise ValueError("polytope is unbounded")
    center = pts.mean(axis=0)
    order = np.argsort(np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0]))
    return pts[order]


@dataclass(frozen=True)
class Ellipsoid:
    """Origin-centered ellipsoid ||P^(-1/2) y|| <= 1 with P symmetric PSD.

    P = 0 models a point-mass vehicle; augmentation by a positive radius
    makes it a proper ball again.
    """

    P: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, float).reshape(2, 2)
        if not np.allclose(P, P.T, atol=1e-12):
            raise ValueError("P must be symmetric")
        w = np.linalg.eigvalsh(P)
        if np.any(w < -1e-12):
            raise ValueError("P must be positive semidefinite")
        object.__setattr__(self, "P", P)

    @staticmethod
    def point() -> "Ellipsoid":
        return Ellipsoid(np.zeros((2, 2)))

    @staticmethod
    def ball(radius: float) -> "Ellipsoid":
        return Ellipsoid(radius ** 2 * np.eye(2))

    @property
    def sqrt_P(self) -> np.ndarray:
        """Symmetric PSD square root (this is R P^(1/2) with R = I)."""
        w, V = np.linalg.eigh(self.P)
        return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T

    @property
    def principal(self) -> tuple[np.ndarray, np.ndarray]:
        """(semi_axes, rotation) with columns of rotation the axis directions."""
        w, V = np.linalg.eigh(self.P)
        return np.sqrt(np.clip(w, 0.0, None)), V

    def extents(self) -> np.ndarray:
        """Axis-aligned bounding halfwidths sqrt(diag P)."""
        return np.sqrt(np.clip(np.diag(self.P), 0.0, None))

    def is_point(self) -> bool:
        return bool(np.all(self.P == 0.0))

    def project(self, y) -> np.ndarray:
        """Euclidean projection of y onto the (origin-centered) ellipsoid."""
        y = np.asarray(y, float)
        if self.is_point():
            return np.zeros(2)
        axes, V = self.principal
        q = V.T @ y
        return V @ _project_onto_aligned_ellipse(axes, q)

    def boundary(self, n: int = 128) -> np.ndarray:
        """n boundary points, for plots and sampling checks."""
        th = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
        circ = np.stack([np.cos(th), np.sin(th)], axis=-1)
        return circ @ self.sqrt_P.T


def _project_onto_aligned_ellipse(axes: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Nearest point of {x: sum (x_i/a_i)^2 <= 1} to q, principal frame.

    Degenerate axes collapse that coordinate to 0.  For exterior points the
    secular equation f(t) = sum (a_i q_i / (t + a_i^2))^2 = 1 has a unique
    root t > 0, found by bisection.
    """
    a = np.asarray(axes, float)
    live = a > 1e-15
    if not np.all(live):
        out = np.zeros(2)
        if np.any(live):
            i = int(np.argmax(live))
            out[i] = np.clip(q[i], -a[i], a[i])
        return out
    if np.sum((q / a) ** 2) <= 1.0:
        return q.copy()
    aq2 = (a * q) ** 2
    lo = 0.0
    hi = max(float(np.linalg.norm(a * q)), 1e-30)
    while np.sum(aq2 / (hi + a ** 2) ** 2) > 1.0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.sum(aq2 / (mid + a ** 2) ** 2) > 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, hi):
            break
    t = 0.5 * (lo + hi)
    return a ** 2 * q / (t + a ** 2)


def _alternating_projection(proj_a, proj_b, start, tol=1e-9, max_iter=10_000,
                            grazing_tol=1e-4):
    """Minimum distance between two convex sets via alternating projection.

    Converges geometrically for separated or overlapping sets; for (near)
    tangent pairs progress stalls with a tiny residual gap, which is
    returned as-is when below grazing_tol instead of raising.
    """
    u = np.asarray(start, float)
    w = proj_b(u)
    u = proj_a(w)
    for _ in range(max_iter):
        w_new = proj_b(u)
        u_new = proj_a(w_new)
        step = max(np.max(np.abs(w_new - w)), np.max(np.abs(u_new - u)))
        u, w = u_new, w_new
        if step < tol:
            return float(np.linalg.norm(u - w))
    gap = float(np.linalg.norm(u - w))
    if gap < grazing_tol:
        return gap
    raise ConvergenceError(f"alternating projection stalled with gap {gap:.3e}")


def primal_distance_ep(ellipsoid: Ellipsoid, p, polytope: Polytope,
                       tol: float = 1e-9, max_iter: int = 10_000) -> float:
    """Exact distance between the ellipsoid centered at p and the polytope."""
    p = np.asarray(p, float)
    return _alternating_projection(
        lambda w: p + ellipsoid.project(w - p),
        polytope.project,
        polytope.vertices.mean(axis=0),
        tol=tol, max_iter=max_iter)


def primal_distance_ee(ell_i: Ellipsoid, p_i, ell_j: Ellipsoid, p_j,
                       tol: float = 1e-9, max_iter: int = 10_000) -> float:
    """Exact distance between two positioned ellipsoids."""
    p_i = np.asarray(p_i, float)
    p_j = np.asarray(p_j, float)
    return _alternating_projection(
        lambda w: p_i + ell_i.project(w - p_i),
        lambda w: p_j + ell_j.project(w - p_j),
        p_j,
        tol=tol, max_iter=max_iter)


def obstacle_constraint_residuals(p, lam, mu, z, polytope: Polytope, S,
                                  margin: float = 0.0, with_grad: bool = False):
    """Residuals of the dual feasibility block for one vehicle/obstacle pair.

    p (..., 2) vehicle position, lam (...,), mu (..., l), z (..., 2);
    S (2, 2) or (..., 2, 2) is the shape square root P^(1/2) of the
    (augmented) vehicle.  Returns a dict with
      g1 = -lam - mu.b + z.p - margin        (require >= 0)
      g2 = lam - ||S^T z||                   (>= 0)
      g3 = A^T mu - z (..., 2)               (= 0)
      g4 = 1 - ||z||                         (>= 0)
    and, when with_grad, the nonconstant first derivatives.
    """
    p = np.asarray(p, float)
    lam = np.asarray(lam, float)
    mu = np.asarray(mu, float)
    z = np.asarray(z, float)
    S = np.asarray(S, float)
    A, b = polytope.A, polytope.b
    Stz = np.einsum("...ji,...j->...i", S, z)
    g1 = -lam - mu @ b + np.sum(z * p, axis=-1) - margin
    g2 = lam - smooth_norm(Stz)
    g3 = mu @ A - z
    g4 = 1.0 - smooth_norm(z)
    out = {"g1": g1, "g2": g2, "g3": g3, "g4": g4}
    if with_grad:
        nS = smooth_norm_grad(Stz)
        out["grad"] = {
            "g1_p": z, "g1_lam": -np.ones_like(lam), "g1_mu": np.broadcast_to(-b, mu.shape),
            "g1_z": p,
            "g2_lam": np.ones_like(lam),
            "g2_z": -np.einsum("...ij,...j->...i", S, nS),
            "g3_mu": A,      # dg3_j/dmu_i = A[i, j]
            "g4_z": -smooth_norm_grad(z),
        }
    return out


def pairwise_constraint_residuals(p_i, p_j, lam_i, lam_j, z, S_i, S_j,
                                  margin: float = 0.0, with_grad: bool = False):
    """Residuals of the dual feasibility block for a vehicle pair.

      g1 = -lam_i - lam_j + z.(p_i - p_j) - margin   (>= 0)
      g2 = lam_i - ||S_i^T z||                       (>= 0)
      g3 = lam_j - ||S_j^T z||                       (>= 0)
      g4 = 1 - ||z||                                 (>= 0)
    """
    p_i = np.asarray(p_i, float)
    p_j = np.asarray(p_j, float)
    z = np.asarray(z, float)
    lam_i = np.asarray(lam_i, float)
    lam_j = np.asarray(lam_j, float)
    S_i = np.asarray(S_i, float)
    S_j = np.asarray(S_j, float)
    Siz = np.einsum("...ji,...j->...i", S_i, z)
    Sjz = np.einsum("...ji,...j->...i", S_j, z)
    g1 = -lam_i - lam_j + np.sum(z * (p_i - p_j), axis=-1) - margin
    out = {
        "g1": g1,
        "g2": lam_i - smooth_norm(Siz),
        "g3": lam_j - smooth_norm(Sjz),
        "g4": 1.0 - smooth_norm(z),
    }
    if with_grad:
        out["grad"] = {
            "g1_pi": z, "g1_pj": -z, "g1_lami": -np.ones_like(lam_i),
            "g1_lamj": -np.ones_like(lam_j), "g1_z": p_i - p_j,
            "g2_lami": np.ones_like(lam_i),
            "g2_z": -np.einsum("...ij,...j->...i", S_i, smooth_norm_grad(Siz)),
            "g3_lamj": np.ones_like(lam_j),
            "g3_z": -np.einsum("...ij,...j->...i", S_j, smooth_norm_grad(Sjz)),
            "g4_z": -smooth_norm_grad(z),
        }
    return out


def _max_over_directions(score, n_angles: int = 2048, refine: int = 80):
    """Globally maximize a positively homogeneous dual objective over the
    closed unit disc of z; returns (value, angle) on the unit circle.

    The objective is linear in the scale of z, so the maximum sits either at
    z = 0 (value 0) or on the unit circle; the circle is scanned densely and
    the best bracket polished by golden-section ascent.
    """
    th = np.linspace(0.0, 2 * math.pi, n_angles, endpoint=False)
    vals = score(th)
    k = int(np.argmax(vals))
    span = 2 * math.pi / n_angles
    best_v, best_t = float(vals[k]), float(th[k])
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = th[k] - span, th[k] + span
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc = float(score(np.array([c]))[0])
    fd = float(score(np.array([d]))[0])
    for _ in range(refine):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = float(score(np.array([c]))[0])
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = float(score(np.array([d]))[0])
    for v, t in ((fc, c), (fd, d)):
        if v > best_v:
            best_v, best_t = v, t
    return best_v, best_t


def _obstacle_score(polytope: Polytope, S: np.ndarray, p: np.ndarray):
    verts = polytope.vertices

    def score(th):
        z = np.stack([np.cos(th), np.sin(th)], axis=-1)
        supp = np.max(verts @ z.T, axis=0)
        return z @ p - np.linalg.norm(z @ S, axis=-1) - supp

    return score


def max_dual_obstacle(polytope: Polytope, ellipsoid: Ellipsoid, p) -> float:
    """Maximum of the obstacle dual objective over all feasible duals.

    For fixed unit z the remaining variables optimize in closed form
    (lam = ||S^T z||, mu the support LP of the polytope), leaving a 1D
    ascent over directions.  Equals the primal distance under strong
    duality; zero duals are always feasible, so the maximum is at least 0.
    """
    val, _ = _max_over_directions(
        _obstacle_score(polytope, ellipsoid.sqrt_P, np.asarray(p, float)))
    return max(0.0, val)


def best_dual_obstacle(polytope: Polytope, S, p):
    """Maximizing dual certificate (value, lam, mu, z) for one obstacle block.

    mu solves the polytope support LP for the best direction via
    nonnegative least squares on A^T mu = z.
    """
    from scipy.optimize import nnls

    p = np.asarray(p, float)
    S = np.asarray(S, float)
    val, th = _max_over_directions(_obstacle_score(polytope, S, p), refine=40)
    z = np.array([math.cos(th), math.sin(th)])
    lam = float(np.linalg.norm(S.T @ z))
    mu, _ = nnls(polytope.A.T, z)
    return val, lam, mu, z


def _pair_score(S_i: np.ndarray, S_j: np.ndarray, dp: np.ndarray):
    def score(th):
        z = np.stack([np.cos(th), np.sin(th)], axis=-1)
        return (z @ dp - np.linalg.norm(z @ S_i, axis=-1)
                - np.linalg.norm(z @ S_j, axis=-1))

    return score


def max_dual_pairwise(ell_i: Ellipsoid, p_i, ell_j: Ellipsoid, p_j) -> float:
    """Maximum of the inter-vehicle dual objective over feasible duals."""
    dp = np.asarray(p_i, float) - np.asarray(p_j, float)
    val, _ = _max_over_directions(_pair_score(ell_i.sqrt_P, ell_j.sqrt_P, dp))
    return max(0.0, val)


def best_dual_pairwise(S_i, S_j, p_i, p_j):
    """Maximizing dual certificate (value, lam_i, lam_j, z) for a pair block."""
    S_i = np.asarray(S_i, float)
    S_j = np.asarray(S_j, float)
    dp = np.asarray(p_i, float) - np.asarray(p_j, float)
    val, th = _max_over_directions(_pair_score(S_i, S_j, dp), refine=40)
    z = np.array([math.cos(th), math.sin(th)])
    return val, float(np.linalg.norm(S_i.T @ z)), float(np.linalg.norm(S_j.T @ z)), z
