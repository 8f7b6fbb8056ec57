"""Brute-force reference computations used as independent test oracles.

Everything here is deliberately naive: vertex enumeration by pairwise row
intersection, support values by maximizing over enumerated vertices, grids
instead of optimization.  Slow but with no machinery shared with the
package, so agreement is meaningful.
"""

import numpy as np


def brute_vertices_2d(H, h, tol=1e-9):
    """All vertices of {x in R^2 | Hx <= h} by pairwise row intersection."""
    H = np.asarray(H, dtype=float)
    h = np.asarray(h, dtype=float)
    r = H.shape[0]
    pts = []
    for i in range(r):
        for j in range(i + 1, r):
            M = np.vstack([H[i], H[j]])
            if abs(np.linalg.det(M)) < 1e-12:
                continue
            v = np.linalg.solve(M, np.array([h[i], h[j]]))
            if np.all(H @ v <= h + tol):
                pts.append(v)
    if not pts:
        return np.zeros((0, 2))
    pts = np.array(pts)
    # dedupe
    keep = []
    for v in pts:
        if not any(np.linalg.norm(v - w) < 1e-7 for w in keep):
            keep.append(v)
    pts = np.array(keep)
    center = pts.mean(axis=0)
    order = np.argsort(np.arctan2(pts[:, 1] - center[1], pts[:, 0] - center[0]))
    return pts[order]


def brute_support_2d(H, h, direction):
    """Support function of a bounded 2-D polytope via enumerated vertices."""
    verts = brute_vertices_2d(H, h)
    if verts.shape[0] == 0:
        raise ValueError("empty polytope")
    return float(np.max(verts @ np.asarray(direction, dtype=float)))


def brute_box_2d(H, h):
    """Componentwise min/max of a bounded 2-D polytope via its vertices."""
    verts = brute_vertices_2d(H, h)
    return verts.min(axis=0), verts.max(axis=0)


def random_feasible_points(H, h, count, rng, radius=10.0):
    """Rejection-sample points of {Hx <= h} from a centered cube."""
    n = H.shape[1]
    out = []
    while len(out) < count:
        cand = rng.uniform(-radius, radius, size=(4 * count, n))
        ok = np.all(cand @ H.T <= h + 1e-12, axis=1)
        out.extend(cand[ok])
    return np.array(out[:count])


def hypercube_vertices(center, eta):
    """Corners of center + eta * [-1/2, 1/2]^p."""
    center = np.asarray(center, dtype=float)
    p = center.shape[0]
    corners = []
    for mask in range(2 ** p):
        offs = np.array([0.5 if mask & (1 << i) else -0.5 for i in range(p)])
        corners.append(center + eta * offs)
    return np.array(corners)
