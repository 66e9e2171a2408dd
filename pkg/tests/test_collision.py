import math

import numpy as np
import pytest
from conftest import random_ellipsoid, random_polytope

from tubeplan.collision import (
    Ellipsoid,
    Polytope,
    max_dual_obstacle,
    max_dual_pairwise,
    obstacle_constraint_residuals,
    pairwise_constraint_residuals,
    primal_distance_ee,
    primal_distance_ep,
    smooth_norm,
)

BOX_X_GE_2 = Polytope.from_rect((2.0, 4.0), (-1.0, 1.0))


class TestPolytope:
    def test_rows_normalized_and_vertices_found(self):
        poly = Polytope(np.array([[2.0, 0.0], [-1.0, 0.0], [0.0, 3.0], [0.0, -1.0]]),
                        np.array([2.0, 0.0, 3.0, 0.0]))
        np.testing.assert_allclose(np.linalg.norm(poly.A, axis=1), 1.0)
        assert len(poly.vertices) == 4
        assert poly.contains([0.5, 0.5])
        assert not poly.contains([1.5, 0.5])

    def test_unbounded_rejected(self):
        with pytest.raises(ValueError):
            Polytope(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([1.0, 1.0]))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            Polytope(np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]),
                     np.array([-1.0, -1.0, 1.0, 1.0]))

    def test_from_vertices_roundtrip(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            poly = random_polytope(rng)
            for v in poly.vertices:
                assert poly.contains(v, tol=1e-8)
            inner = poly.vertices.mean(axis=0)
            assert poly.contains(inner)

    def test_projection(self):
        np.testing.assert_allclose(BOX_X_GE_2.project([0.0, 0.0]), [2.0, 0.0])
        np.testing.assert_allclose(BOX_X_GE_2.project([3.0, 0.0]), [3.0, 0.0])
        np.testing.assert_allclose(BOX_X_GE_2.project([5.0, 2.0]), [4.0, 1.0])


class TestEllipsoid:
    def test_projection_disc(self):
        disc = Ellipsoid(np.eye(2))
        np.testing.assert_allclose(disc.project([2.0, 0.0]), [1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(disc.project([0.3, 0.2]), [0.3, 0.2])

    def test_projection_matches_angle_scan(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            ell = random_ellipsoid(rng)
            q = rng.uniform(-2, 2, 2)
            proj = ell.project(q)
            # independent check: dense scan of the boundary
            pts = ell.boundary(20000)
            d_scan = np.min(np.linalg.norm(pts - q, axis=1))
            d_proj = np.linalg.norm(proj - q)
            if np.sum(np.linalg.solve(ell.P + 1e-18 * np.eye(2), q) * q) <= 1.0:
                assert d_proj == 0.0
            else:
                assert d_proj <= d_scan + 1e-6
                assert abs(d_proj - d_scan) < 1e-3

    def test_point_mass(self):
        pt = Ellipsoid.point()
        assert pt.is_point()
        np.testing.assert_array_equal(pt.project([1.0, 2.0]), [0.0, 0.0])


class TestPrimalDistances:
    def test_disc_to_box(self):
        assert primal_distance_ep(Ellipsoid(np.eye(2)), [0.0, 0.0], BOX_X_GE_2) == pytest.approx(1.0, abs=1e-7)

    def test_intersecting_is_zero(self):
        assert primal_distance_ep(Ellipsoid(np.eye(2)), [1.5, 0.0], BOX_X_GE_2) == pytest.approx(0.0, abs=1e-7)

    def test_tangent_is_zero(self):
        assert primal_distance_ep(Ellipsoid(np.eye(2)), [1.0, 0.0], BOX_X_GE_2) == pytest.approx(0.0, abs=1e-4)

    def test_two_unit_discs(self):
        d = primal_distance_ee(Ellipsoid(np.eye(2)), [0.0, 0.0],
                               Ellipsoid(np.eye(2)), [3.0, 0.0])
        assert d == pytest.approx(1.0, abs=1e-7)

    def test_coincident_centers(self):
        d = primal_distance_ee(Ellipsoid(np.eye(2)), [0.5, 0.5],
                               Ellipsoid(np.eye(2)), [0.5, 0.5])
        assert d == pytest.approx(0.0, abs=1e-9)

    def test_auv_shape_pair(self):
        shape = Ellipsoid(np.diag([0.12, 0.03]))
        d = primal_distance_ee(shape, [0.0, 0.0], shape, [1.0, 0.0])
        assert d == pytest.approx(1.0 - 2.0 * math.sqrt(0.12), abs=1e-7)
        assert abs(d - 0.30718) < 1e-5

    def test_point_to_polytope(self):
        d = primal_distance_ep(Ellipsoid.point(), [0.0, 0.0], BOX_X_GE_2)
        assert d == pytest.approx(2.0, abs=1e-9)


class TestResiduals:
    def test_origin_duals(self):
        res = obstacle_constraint_residuals(
            np.zeros(2), 0.0, np.zeros(4), np.zeros(2), BOX_X_GE_2,
            Ellipsoid(np.eye(2)).sqrt_P, margin=0.25)
        assert res["g1"] == pytest.approx(-0.25)
        np.testing.assert_allclose(res["g3"], np.zeros(2))
        assert res["g4"] == pytest.approx(1.0)

    def test_feasible_dual_bounds_distance(self):
        # weak duality against the primal oracle on random feasible duals
        rng = np.random.default_rng(5)
        ell = Ellipsoid(np.eye(2))
        for _ in range(50):
            p = np.array([rng.uniform(-1.5, 1.0), rng.uniform(-1, 1)])
            dist = primal_distance_ep(ell, p, BOX_X_GE_2)
            mu = rng.uniform(0, 1, 4)
            z = mu @ BOX_X_GE_2.A
            nz = np.linalg.norm(z)
            if nz > 1.0:
                mu /= nz
                z /= nz
            lam = np.linalg.norm(ell.sqrt_P.T @ z)
            res = obstacle_constraint_residuals(p, lam, mu, z, BOX_X_GE_2, ell.sqrt_P)
            assert res["g2"] >= -1e-9 and res["g4"] >= -1e-12
            np.testing.assert_allclose(res["g3"], 0.0, atol=1e-12)
            assert res["g1"] <= dist + 1e-7

    def test_pair_swap_antisymmetry(self):
        rng = np.random.default_rng(6)
        S = Ellipsoid(np.diag([0.12, 0.03])).sqrt_P
        for _ in range(20):
            pi, pj = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
            li, lj = rng.uniform(0, 1, 2)
            z = rng.uniform(-0.7, 0.7, 2)
            a = pairwise_constraint_residuals(pi, pj, li, lj, z, S, S)
            b = pairwise_constraint_residuals(pj, pi, lj, li, -z, S, S)
            assert a["g1"] == pytest.approx(b["g1"], abs=1e-14)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(7)
        ell = random_ellipsoid(rng)
        poly = random_polytope(rng, center=[1.5, 0.0])
        S = ell.sqrt_P
        l = len(poly.b)
        h = 1e-7

        def pack_obstacle(v):
            p, lam, mu, z = v[:2], v[2], v[3:3 + l], v[3 + l:5 + l]
            return obstacle_constraint_residuals(p, lam, mu, z, poly, S, with_grad=True)

        for _ in range(40):
            v0 = np.concatenate([rng.uniform(-1, 1, 2), [rng.uniform(0, 1)],
                                 rng.uniform(0, 1, l), rng.uniform(-0.9, 0.9, 2)])
            res = pack_obstacle(v0)
            g = res["grad"]
            analytic = {
                "g1": np.concatenate([g["g1_p"], [g["g1_lam"]], g["g1_mu"], g["g1_z"]]),
                "g2": np.concatenate([np.zeros(2), [g["g2_lam"]], np.zeros(l), g["g2_z"]]),
                "g4": np.concatenate([np.zeros(3 + l), g["g4_z"]]),
            }
            for name, grad in analytic.items():
                for idx in range(len(v0)):
                    vp, vm = v0.copy(), v0.copy()
                    vp[idx] += h
                    vm[idx] -= h
                    fd = (pack_obstacle(vp)[name] - pack_obstacle(vm)[name]) / (2 * h)
                    scale = max(1.0, abs(fd))
                    assert abs(fd - grad[idx]) / scale < 1e-5, (name, idx)

    def test_residuals_finite_at_zero(self):
        res = obstacle_constraint_residuals(
            np.zeros(2), 0.0, np.zeros(4), np.zeros(2), BOX_X_GE_2,
            np.zeros((2, 2)), with_grad=True)
        for key in ("g1", "g2", "g3", "g4"):
            assert np.all(np.isfinite(res[key]))
        for arr in res["grad"].values():
            assert np.all(np.isfinite(arr))


class TestStrongDuality:
    def test_obstacle_pairs(self):
        rng = np.random.default_rng(42)
        checked = 0
        while checked < 100:
            ell = random_ellipsoid(rng)
            poly = random_polytope(rng, center=rng.uniform(-2, 2, 2))
            p = rng.uniform(-2.5, 2.5, 2)
            dist = primal_distance_ep(ell, p, poly)
            if dist < 1e-2:
                continue
            dual = max_dual_obstacle(poly, ell, p)
            assert abs(dual - dist) < 1e-5
            checked += 1

    def test_pairwise_pairs(self):
        rng = np.random.default_rng(43)
        checked = 0
        while checked < 100:
            ei, ej = random_ellipsoid(rng), random_ellipsoid(rng)
            pi, pj = rng.uniform(-2, 2, 2), rng.uniform(-2, 2, 2)
            dist = primal_distance_ee(ei, pi, ej, pj)
            if dist < 1e-2:
                continue
            dual = max_dual_pairwise(ei, pi, ej, pj)
            assert abs(dual - dist) < 1e-5
            checked += 1

    def test_intersecting_dual_is_zero(self):
        rng = np.random.default_rng(44)
        for _ in range(30):
            poly = random_polytope(rng)
            inner = poly.vertices.mean(axis=0)
            ell = random_ellipsoid(rng)
            assert max_dual_obstacle(poly, ell, inner) <= 1e-6
            assert max_dual_pairwise(ell, inner, random_ellipsoid(rng), inner) <= 1e-6

    def test_separated_discs_value(self):
        dual = max_dual_pairwise(Ellipsoid(np.eye(2)), [0.0, 0.0],
                                 Ellipsoid(np.eye(2)), [3.0, 0.0])
        assert abs(dual - 1.0) < 1e-6


def test_smooth_norm_close_to_euclidean():
    v = np.array([0.3, -0.4])
    assert abs(smooth_norm(v) - 0.5) < 2e-9
    assert smooth_norm(np.zeros(2)) == 0.0
