"""Halfspace-polytope primitives.

Polytopes are stored as ``{x | H x <= h}`` with rows kept unnormalized;
the tube cross-section produced by :func:`max_contractive_set` is the one
object normalized to ``h = 1``, because every tube formula downstream
assumes rows of the form ``H_i x <= 1``.

Operations are pure functions over immutable data; everything reduces to
small LPs solved through :mod:`ramp.solvers`, except the exact 2-D
routines (:func:`vertices_2d`, :func:`bounding_box_2d`) which work on the
polygon directly.
"""

import json
import numpy as np
from dataclasses import dataclass

from .solvers import LinearProgram, solve_lp

__all__ = [
    "HPolytope",
    "IntervalBox",
    "GeometryError",
    "EmptyPolytopeError",
    "UnsupportedDimensionError",
    "support",
    "bounding_box",
    "bounding_box_2d",
    "is_empty",
    "remove_redundant",
    "max_contractive_set",
    "vertices_2d",
    "chebyshev_center",
]


class GeometryError(RuntimeError):
    """Geometric computation failed (unboundedness, non-convergence, ...)."""


class EmptyPolytopeError(GeometryError):
    """An operation requiring a nonempty polytope met an empty one."""


class UnsupportedDimensionError(GeometryError):
    """Operation only available in a fixed small dimension."""


@dataclass(frozen=True)
class HPolytope:
    """Halfspace representation {x | H x <= h}.

    Parameters
    ----------
    H : ndarray, shape (r, n)
        One row per halfspace, r >= 1.
    h : ndarray, shape (r,)
        Right-hand sides.
    """

    H: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        h = np.atleast_1d(np.asarray(self.h, dtype=float))
        if H.shape[0] < 1 or H.shape[0] != h.shape[0]:
            raise ValueError("polytope needs r >= 1 consistent rows")
        if not (np.all(np.isfinite(H)) and np.all(np.isfinite(h))):
            raise ValueError("polytope data must be finite")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "h", h)

    @property
    def nrows(self):
        return self.H.shape[0]

    @property
    def dim(self):
        return self.H.shape[1]

    def contains(self, x, tol=1e-9):
        """Membership check with absolute slack tolerance."""
        return bool(np.all(self.H @ np.asarray(x, dtype=float) <= self.h + tol))

    @staticmethod
    def from_box(lower, upper):
        """Axis-aligned box as a polytope (rows: +I then -I)."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        n = lower.shape[0]
        H = np.vstack([np.eye(n), -np.eye(n)])
        h = np.concatenate([upper, -lower])
        return HPolytope(H, h)

    def to_json(self):
        return json.dumps({"H": self.H.tolist(), "h": self.h.tolist()})

    @staticmethod
    def from_json(text):
        data = json.loads(text)
        return HPolytope(np.array(data["H"], dtype=float),
                         np.array(data["h"], dtype=float))


@dataclass(frozen=True)
class IntervalBox:
    """Componentwise interval [lower, upper]."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape:
            raise ValueError("bounds must share a shape")
        if np.any(lower > upper + 1e-12):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def widths(self):
        return self.upper - self.lower

    def as_polytope(self):
        return HPolytope.from_box(self.lower, self.upper)


def support(poly, direction):
    """Support value ``max {direction . x | x in poly}``.

    Raises
    ------
    EmptyPolytopeError
        If the polytope is empty.
    GeometryError
        If the polytope is unbounded in the given direction.
    """
    direction = np.asarray(direction, dtype=float)
    lp = LinearProgram(direction, ineq=(poly.H, poly.h), sense="max")
    res = solve_lp(lp)
    if res.status == "optimal":
        return float(res.objective)
    if res.status == "infeasible":
        raise EmptyPolytopeError("support of an empty polytope")
    if res.status == "unbounded":
        raise GeometryError("polytope unbounded in direction %s" % direction)
    raise GeometryError("support LP failed: %s" % res.extra)


def bounding_box(poly):
    """Componentwise tight bounding box via 2n support LPs."""
    n = poly.dim
    lower = np.empty(n)
    upper = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        try:
            upper[i] = support(poly, e)
            lower[i] = -support(poly, -e)
        except EmptyPolytopeError:
            raise EmptyPolytopeError(
                "bounding box of an empty polytope (infeasibility detected "
                "while maximizing coordinate %d over %d rows)" % (i, poly.nrows))
    return IntervalBox(np.minimum(lower, upper), upper)


def _clip_polygon(points, normal, offset, tol=1e-12):
    """Sutherland-Hodgman clip of a convex polygon against normal.x <= offset."""
    if len(points) == 0:
        return points
    out = []
    k = len(points)
    side = [float(normal @ p) - offset for p in points]
    for i in range(k):
        j = (i + 1) % k
        ini, inj = side[i] <= tol, side[j] <= tol
        if ini:
            out.append(points[i])
        if ini != inj:
            denom = side[i] - side[j]
            if abs(denom) > 0:
                t = side[i] / denom
                out.append(points[i] + t * (points[j] - points[i]))
    return out


def bounding_box_2d(poly, seed_box):
    """Exact bounding box of a 2-D polytope by incremental polygon clipping.

    ``seed_box`` must be an :class:`IntervalBox` known to contain the
    polytope (so clipping its rectangle by every row yields the exact
    intersection).  This is the fast alternative to :func:`bounding_box`
    for two-dimensional sets; the two routes are interchangeable and are
    cross-checked in the test suite.

    Raises
    ------
    EmptyPolytopeError
        If the clipped polygon vanishes.
    UnsupportedDimensionError
        If the polytope is not two-dimensional.
    """
    if poly.dim != 2:
        raise UnsupportedDimensionError("polygon clipping requires n = 2")
    lo, up = seed_box.lower, seed_box.upper
    pts = [np.array([lo[0], lo[1]]), np.array([up[0], lo[1]]),
           np.array([up[0], up[1]]), np.array([lo[0], up[1]])]
    for row, rhs in zip(poly.H, poly.h):
        pts = _clip_polygon(pts, row, rhs)
        if not pts:
            raise EmptyPolytopeError("polygon clipping emptied the polytope")
    arr = np.array(pts)
    return IntervalBox(arr.min(axis=0), arr.max(axis=0))


def is_empty(poly):
    """LP feasibility verdict for the polytope."""
    lp = LinearProgram(np.zeros(poly.dim), ineq=(poly.H, poly.h), sense="min")
    res = solve_lp(lp)
    if res.status == "optimal":
        return False
    if res.status == "infeasible":
        return True
    raise GeometryError("feasibility LP failed: %s" % res.status)


def _dedupe_rows(H, h):
    """Collapse rows that describe the same halfspace (up to scaling)."""
    norms = np.linalg.norm(H, axis=1)
    keep = []
    seen = []
    for i in range(H.shape[0]):
        if norms[i] < 1e-14:
            # zero row: vacuous if h >= 0, else the set is empty; keep as is
            keep.append(i)
            continue
        key = np.concatenate([H[i] / norms[i], [h[i] / norms[i]]])
        if any(np.max(np.abs(key - s)) < 1e-9 for s in seen):
            continue
        seen.append(key)
        keep.append(i)
    return H[keep], h[keep]


def remove_redundant(poly):
    """Drop rows implied by the others.

    A row is retained exactly when maximizing it over the remaining rows
    exceeds its own right-hand side minus 1e-9 (equality-touching rows
    stay).  Exact duplicates are collapsed first so ties cannot keep two
    copies alive.
    """
    if is_empty(poly):
        raise EmptyPolytopeError("redundancy removal needs a nonempty polytope")
    H, h = _dedupe_rows(poly.H, poly.h)
    active = list(range(H.shape[0]))
    i = 0
    while i < len(active):
        row = active[i]
        others = [r for r in active if r != row]
        if not others:
            break
        # bound the LP by the row itself shifted out so it stays finite
        A = np.vstack([H[others], H[row][None, :]])
        b = np.concatenate([h[others], [h[row] + 1.0]])
        lp = LinearProgram(H[row], ineq=(A, b), sense="max")
        res = solve_lp(lp)
        if res.status == "optimal" and res.objective <= h[row] - 1e-9:
            active.pop(i)
        else:
            i += 1
    return HPolytope(H[active], h[active])


def max_contractive_set(Acl_vertices, base, rho, max_iter=200, tol=1e-9):
    """Largest set S inside ``base`` with ``H_i A x <= rho h_i`` on S for
    every vertex dynamics matrix A.

    Computed by the standard backward recursion: map every current row
    through each vertex matrix, add the pre-image rows not already
    implied (support above ``rho + tol`` in normalized form), prune
    redundancy, and repeat until a sweep adds nothing.  The result is
    normalized to ``h = 1``, which requires the base set to contain the
    origin in its interior.

    Raises
    ------
    GeometryError
        If a vertex matrix is not Schur stable after scaling by 1/rho, or
        the recursion fails to converge within ``max_iter`` sweeps (the
        error message carries the per-sweep row counts).
    """
    if not (0.0 < rho <= 1.0):
        raise ValueError("rho must lie in (0, 1]")
    mats = [np.asarray(A, dtype=float) for A in Acl_vertices]
    for A in mats:
        radius = float(np.max(np.abs(np.linalg.eigvals(A))))
        if radius > rho * (1.0 + 1e-9):
            raise GeometryError(
                "vertex dynamics has spectral radius %.6f, not stable at "
                "contraction %.3f" % (radius, rho))
    if np.any(base.h <= 0):
        raise GeometryError("base set must contain the origin strictly")
    # normalized form: rows g with g x <= 1
    G = base.H / base.h[:, None]
    poly = remove_redundant(HPolytope(G, np.ones(G.shape[0])))
    frontier = poly.H.copy()
    counts = [poly.nrows]
    for _ in range(max_iter):
        fresh = []
        for A in mats:
            for row in frontier:
                cand = (row @ A) / rho
                if np.linalg.norm(cand) < 1e-14:
                    continue
                if support(poly, cand) <= 1.0 + tol:
                    continue
                fresh.append(cand)
        if not fresh:
            return poly
        Hnew = np.vstack([poly.H, np.array(fresh)])
        pruned = remove_redundant(HPolytope(Hnew, np.ones(Hnew.shape[0])))
        # rows that survived pruning and were not present before form the
        # next frontier; comparison up to the dedupe tolerance
        old = {tuple(np.round(r, 9)) for r in poly.H}
        frontier = np.array([r for r in pruned.H
                             if tuple(np.round(r, 9)) not in old])
        poly = pruned
        counts.append(poly.nrows)
        if frontier.size == 0:
            return poly
    raise GeometryError(
        "contractive set recursion did not converge in %d sweeps; row "
        "counts per sweep: %s" % (max_iter, counts))


def vertices_2d(poly, tol=1e-8):
    """Counterclockwise vertices of a bounded 2-D polytope.

    Rows are pruned to an irredundant description, sorted by normal
    angle, and consecutive rows intersected; every intersection point is
    verified feasible.  Degenerate (segment) polytopes are handled by
    the final dedupe.

    Raises
    ------
    UnsupportedDimensionError
        If the polytope dimension is not 2.
    """
    if poly.dim != 2:
        raise UnsupportedDimensionError(
            "vertex enumeration implemented only for n = 2")
    bounding_box(poly)  # raises on empty / unbounded input
    red = remove_redundant(poly)
    order = np.argsort(np.arctan2(red.H[:, 1], red.H[:, 0]))
    H = red.H[order]
    h = red.h[order]
    r = H.shape[0]
    verts = []
    for i in range(r):
        j = (i + 1) % r
        M = np.vstack([H[i], H[j]])
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        v = np.linalg.solve(M, np.array([h[i], h[j]]))
        if np.all(poly.H @ v <= poly.h + tol):
            verts.append(v)
    out = []
    for v in verts:
        if not any(np.linalg.norm(v - w) < 1e-9 for w in out):
            out.append(v)
    if not out:
        raise GeometryError("no vertices found; polytope may be degenerate")
    return np.array(out)


def chebyshev_center(poly):
    """Center and radius of the largest inscribed ball.

    Returns a point strictly inside whenever the polytope has interior
    (radius > 0); used to seed interior-point style computations.
    """
    norms = np.linalg.norm(poly.H, axis=1)
    A = np.column_stack([poly.H, norms])
    c = np.zeros(poly.dim + 1)
    c[-1] = 1.0
    lp = LinearProgram(c, ineq=(A, poly.h), sense="max")
    res = solve_lp(lp)
    if res.status == "infeasible":
        raise EmptyPolytopeError("chebyshev center of an empty polytope")
    if res.status != "optimal":
        raise GeometryError("chebyshev LP failed: %s" % res.status)
    return res.primal[:-1], float(res.primal[-1])
