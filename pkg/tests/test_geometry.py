"""Tests for halfspace-polytope primitives."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ramp.geometry import (
    EmptyPolytopeError,
    GeometryError,
    HPolytope,
    IntervalBox,
    UnsupportedDimensionError,
    bounding_box,
    bounding_box_2d,
    chebyshev_center,
    is_empty,
    max_contractive_set,
    remove_redundant,
    support,
    vertices_2d,
)
from oracles import brute_support_2d, brute_vertices_2d, random_feasible_points


def _random_polygon(rng, k=None):
    """Bounded random 2-D polytope containing the origin."""
    if k is None:
        k = int(rng.integers(4, 10))
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=k))
    H = np.column_stack([np.cos(angles), np.sin(angles)])
    h = rng.uniform(0.5, 2.0, size=k)
    # box rows keep the set bounded whatever the sampled normals are
    box = HPolytope.from_box([-3.0, -3.0], [3.0, 3.0])
    return HPolytope(np.vstack([H, box.H]), np.concatenate([h, box.h]))


UNIT_BOX_2D = HPolytope.from_box([-0.5, -0.5], [0.5, 0.5])


class TestSupport:
    def test_unit_box(self):
        assert support(UNIT_BOX_2D, [1.0, 0.0]) == pytest.approx(0.5, abs=1e-9)

    def test_scalar_disturbance_interval(self):
        dist = HPolytope(np.array([[1.0], [-1.0]]), np.array([0.2, 0.2]))
        assert support(dist, [1.0]) == pytest.approx(0.2, abs=1e-9)

    def test_matches_vertex_enumeration(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            poly = _random_polygon(rng)
            d = rng.standard_normal(2)
            assert support(poly, d) == pytest.approx(
                brute_support_2d(poly.H, poly.h, d), abs=1e-7)

    def test_empty_raises(self):
        empty = HPolytope(np.array([[1.0], [-1.0]]), np.array([1.0, -2.0]))
        with pytest.raises(EmptyPolytopeError):
            support(empty, [1.0])

    def test_unbounded_direction_raises(self):
        half = HPolytope(np.array([[-1.0, 0.0]]), np.array([0.0]))
        with pytest.raises(GeometryError):
            support(half, [1.0, 0.0])

    def test_dominates_random_feasible_points(self):
        rng = np.random.default_rng(13)
        poly = _random_polygon(rng, k=7)
        pts = random_feasible_points(poly.H, poly.h, 1000, rng, radius=3.0)
        for _ in range(5):
            d = rng.standard_normal(2)
            val = support(poly, d)
            assert np.all(pts @ d <= val + 1e-9)


class TestBoundingBox:
    def test_unit_hypercube(self):
        box = bounding_box(UNIT_BOX_2D)
        np.testing.assert_allclose(box.lower, [-0.5, -0.5], atol=1e-9)
        np.testing.assert_allclose(box.upper, [0.5, 0.5], atol=1e-9)

    def test_cut_square_keeps_full_box(self):
        H = np.vstack([UNIT_BOX_2D.H, [[1.0, 1.0]]])
        h = np.concatenate([UNIT_BOX_2D.h, [0.0]])
        box = bounding_box(HPolytope(H, h))
        lo, up = np.array([-0.5, -0.5]), np.array([0.5, 0.5])
        verts = brute_vertices_2d(H, h)
        np.testing.assert_allclose(box.lower, verts.min(axis=0), atol=1e-9)
        np.testing.assert_allclose(box.upper, verts.max(axis=0), atol=1e-9)
        np.testing.assert_allclose(box.lower, lo, atol=1e-9)
        np.testing.assert_allclose(box.upper, up, atol=1e-9)

    def test_simplex(self):
        H = np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]])
        h = np.array([0.0, 0.0, 1.0])
        box = bounding_box(HPolytope(H, h))
        np.testing.assert_allclose(box.lower, [0.0, 0.0], atol=1e-9)
        np.testing.assert_allclose(box.upper, [1.0, 1.0], atol=1e-9)

    def test_empty_raises_with_evidence(self):
        empty = HPolytope(np.array([[1.0], [-1.0]]), np.array([1.0, -2.0]))
        with pytest.raises(EmptyPolytopeError, match="infeasibility"):
            bounding_box(empty)

    def test_idempotent(self):
        rng = np.random.default_rng(31)
        for _ in range(10):
            poly = _random_polygon(rng)
            box = bounding_box(poly)
            again = bounding_box(box.as_polytope())
            np.testing.assert_allclose(again.lower, box.lower, atol=1e-9)
            np.testing.assert_allclose(again.upper, box.upper, atol=1e-9)

    def test_clipping_route_agrees_with_lp_route(self):
        rng = np.random.default_rng(37)
        for _ in range(30):
            poly = _random_polygon(rng)
            lp_box = bounding_box(poly)
            seed = IntervalBox(np.full(2, -5.0), np.full(2, 5.0))
            clip_box = bounding_box_2d(poly, seed)
            np.testing.assert_allclose(clip_box.lower, lp_box.lower, atol=1e-9)
            np.testing.assert_allclose(clip_box.upper, lp_box.upper, atol=1e-9)

    def test_clipping_empty_raises(self):
        empty = HPolytope(np.array([[1.0, 0.0], [-1.0, 0.0]]),
                          np.array([1.0, -2.0]))
        seed = IntervalBox(np.full(2, -5.0), np.full(2, 5.0))
        with pytest.raises(EmptyPolytopeError):
            bounding_box_2d(empty, seed)


class TestIsEmpty:
    def test_contradictory_rows(self):
        assert is_empty(HPolytope(np.array([[1.0], [-1.0]]),
                                  np.array([1.0, -2.0])))

    def test_unit_box(self):
        assert not is_empty(UNIT_BOX_2D)

    def test_prior_cut_by_consistent_halfspace(self):
        # a parameter box intersected with a halfspace built to contain
        # the true parameter stays nonempty
        theta_star = np.array([1.0, -1.0])
        prior = HPolytope.from_box([-1.0, -1.0], [1.0, 1.0])
        rng = np.random.default_rng(41)
        for _ in range(10):
            g = rng.standard_normal(2)
            cut_h = float(g @ theta_star) + rng.uniform(0.01, 0.5)
            poly = HPolytope(np.vstack([prior.H, g[None, :]]),
                             np.concatenate([prior.h, [cut_h]]))
            assert not is_empty(poly)


class TestRemoveRedundant:
    def test_duplicates_collapse(self):
        poly = HPolytope(np.array([[1.0], [1.0], [-1.0]]),
                         np.array([1.0, 1.0, 0.0]))
        red = remove_redundant(poly)
        assert red.nrows == 2

    def test_dominated_row_dropped(self):
        poly = HPolytope(np.array([[1.0], [1.0], [-1.0]]),
                         np.array([1.0, 2.0, 0.0]))
        red = remove_redundant(poly)
        assert red.nrows == 2
        assert support(red, [1.0]) == pytest.approx(1.0, abs=1e-9)

    def test_augmented_square_reduces_to_four_rows(self):
        rng = np.random.default_rng(43)
        base_H, base_h = UNIT_BOX_2D.H, UNIT_BOX_2D.h
        for _ in range(10):
            extra = []
            extra_h = []
            for _ in range(6):
                d = rng.standard_normal(2)
                val = brute_support_2d(base_H, base_h, d)
                extra.append(d)
                extra_h.append(val + rng.uniform(0.01, 1.0))
            poly = HPolytope(np.vstack([base_H, np.array(extra)]),
                             np.concatenate([base_h, np.array(extra_h)]))
            red = remove_redundant(poly)
            assert red.nrows == 4

    def test_set_unchanged(self):
        rng = np.random.default_rng(47)
        poly = _random_polygon(rng, k=9)
        red = remove_redundant(poly)
        for _ in range(40):
            d = rng.standard_normal(2)
            assert support(red, d) == pytest.approx(
                support(poly, d), abs=1e-8)


class TestMaxContractiveSet:
    def test_zero_dynamics_returns_base(self):
        box = HPolytope.from_box([-1.0, -1.0], [1.0, 1.0])
        out = max_contractive_set([np.zeros((2, 2))], box, 0.5)
        for d in np.vstack([np.eye(2), -np.eye(2)]):
            assert support(out, d) == pytest.approx(1.0, abs=1e-9)

    def test_scalar_half_contraction(self):
        box = HPolytope(np.array([[1.0], [-1.0]]), np.array([1.0, 1.0]))
        out = max_contractive_set([np.array([[0.5]])], box, 0.5)
        assert support(out, [1.0]) == pytest.approx(1.0, abs=1e-9)
        assert support(out, [-1.0]) == pytest.approx(1.0, abs=1e-9)

    def test_unstable_vertex_rejected(self):
        box = HPolytope(np.array([[1.0], [-1.0]]), np.array([1.0, 1.0]))
        with pytest.raises(GeometryError):
            max_contractive_set([np.array([[0.9]])], box, 0.5)

    def test_contraction_invariant_on_random_members(self):
        # rotation-contraction dynamics; sampled members must map into
        # the rho-scaled set for every vertex matrix
        rng = np.random.default_rng(53)
        ang = 0.4
        R = np.array([[np.cos(ang), -np.sin(ang)],
                      [np.sin(ang), np.cos(ang)]])
        mats = [0.6 * R, 0.55 * R.T]
        base = HPolytope.from_box([-1.0, -1.0], [1.0, 1.0])
        out = max_contractive_set(mats, base, 0.75)
        assert np.all(out.h == 1.0)
        pts = random_feasible_points(out.H, out.h, 1000, rng, radius=1.5)
        for A in mats:
            assert np.max((pts @ A.T) @ out.H.T) <= 0.75 + 1e-7

    def test_result_inside_base(self):
        rng = np.random.default_rng(59)
        base = HPolytope.from_box([-1.0, -2.0], [1.5, 2.0])
        A = np.array([[0.5, 0.3], [-0.2, 0.6]])
        out = max_contractive_set([A], base, 0.8)
        pts = random_feasible_points(out.H, out.h, 200, rng, radius=3.0)
        assert np.all((pts @ base.H.T) <= base.h + 1e-7)


class TestVertices2D:
    def test_unit_square(self):
        verts = vertices_2d(UNIT_BOX_2D)
        assert verts.shape == (4, 2)
        expected = {(-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)}
        got = {tuple(np.round(v, 9)) for v in verts}
        assert got == expected

    def test_triangle(self):
        H = np.array([[-1.0, 0.0], [0.0, -1.0], [1.0, 1.0]])
        h = np.array([0.0, 0.0, 1.0])
        verts = vertices_2d(HPolytope(H, h))
        assert verts.shape == (3, 2)

    def test_counterclockwise_order(self):
        rng = np.random.default_rng(61)
        for _ in range(10):
            poly = _random_polygon(rng)
            verts = vertices_2d(poly)
            if verts.shape[0] < 3:
                continue
            area2 = 0.0
            for i in range(verts.shape[0]):
                a = verts[i]
                b = verts[(i + 1) % verts.shape[0]]
                area2 += a[0] * b[1] - b[0] * a[1]
            assert area2 > 0

    def test_vertices_feasible_and_hull_reproduces_supports(self):
        rng = np.random.default_rng(67)
        for _ in range(15):
            poly = _random_polygon(rng)
            verts = vertices_2d(poly)
            assert np.all(verts @ poly.H.T <= poly.h + 1e-8)
            for _ in range(20):
                d = rng.standard_normal(2)
                assert np.max(verts @ d) == pytest.approx(
                    support(poly, d), abs=1e-7)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(71)
        for _ in range(15):
            poly = _random_polygon(rng)
            mine = vertices_2d(poly)
            ref = brute_vertices_2d(poly.H, poly.h)
            assert mine.shape == ref.shape
            # same point sets up to ordering
            for v in ref:
                assert np.min(np.linalg.norm(mine - v, axis=1)) < 1e-7

    def test_segment_polytope(self):
        seg = HPolytope.from_box([0.0, -0.02], [0.0, 0.02])
        verts = vertices_2d(seg)
        assert verts.shape[0] == 2
        got = sorted(float(v[1]) for v in verts)
        assert got == pytest.approx([-0.02, 0.02], abs=1e-9)

    def test_wrong_dimension_raises(self):
        with pytest.raises(UnsupportedDimensionError):
            vertices_2d(HPolytope.from_box([0.0], [1.0]))
        with pytest.raises(UnsupportedDimensionError):
            vertices_2d(HPolytope.from_box([0.0] * 3, [1.0] * 3))


class TestSerialization:
    def test_json_round_trip(self):
        poly = UNIT_BOX_2D
        text = poly.to_json()
        back = HPolytope.from_json(text)
        np.testing.assert_array_equal(back.H, poly.H)
        np.testing.assert_array_equal(back.h, poly.h)

    def test_schema_keys(self):
        import json
        data = json.loads(UNIT_BOX_2D.to_json())
        assert set(data.keys()) == {"H", "h"}


class TestChebyshevCenter:
    def test_unit_box_center(self):
        x, r = chebyshev_center(UNIT_BOX_2D)
        np.testing.assert_allclose(x, [0.0, 0.0], atol=1e-9)
        assert r == pytest.approx(0.5, abs=1e-9)

    def test_interior_point(self):
        rng = np.random.default_rng(73)
        for _ in range(10):
            poly = _random_polygon(rng)
            x, r = chebyshev_center(poly)
            assert r > 0
            assert np.all(poly.H @ x <= poly.h - 0.5 * r * np.linalg.norm(
                poly.H, axis=1) + 1e-9)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10.0, 10.0), min_size=2, max_size=5),
       st.lists(st.floats(0.01, 5.0), min_size=2, max_size=5),
       st.integers(0, 10 ** 6))
def test_box_support_closed_form(center, widths, seed):
    """Support of an axis box is sum_i d_i * (upper if d_i > 0 else lower)."""
    n = min(len(center), len(widths))
    center = np.array(center[:n])
    widths = np.array(widths[:n])
    lower = center - widths / 2
    upper = center + widths / 2
    poly = HPolytope.from_box(lower, upper)
    d = np.random.default_rng(seed).standard_normal(n)
    expected = float(np.sum(np.where(d > 0, d * upper, d * lower)))
    assert support(poly, d) == pytest.approx(expected, abs=1e-7)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_clip_and_lp_boxes_agree_on_random_windows(seed):
    """Box-plus-random-cuts polytopes: both box routes must agree."""
    rng = np.random.default_rng(seed)
    lo = rng.uniform(-2.0, -0.1, size=2)
    up = rng.uniform(0.1, 2.0, size=2)
    rows = [HPolytope.from_box(lo, up).H]
    rhs = [HPolytope.from_box(lo, up).h]
    interior = rng.uniform(lo / 2, up / 2)
    for _ in range(rng.integers(1, 8)):
        g = rng.standard_normal(2)
        rows.append(g[None, :])
        rhs.append(np.array([float(g @ interior) + rng.uniform(0.0, 1.0)]))
    poly = HPolytope(np.vstack(rows), np.concatenate(rhs))
    lp_box = bounding_box(poly)
    clip_box = bounding_box_2d(poly, IntervalBox(lo, up))
    np.testing.assert_allclose(clip_box.lower, lp_box.lower, atol=1e-9)
    np.testing.assert_allclose(clip_box.upper, lp_box.upper, atol=1e-9)
