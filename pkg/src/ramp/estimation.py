"""Online parameter identification.

Two estimators run side by side and share one state object:

* a set-membership estimator keeping a hypercube outer bound of the
  parameters, updated from a moving window of non-falsified sets (each
  one the exact polytope of parameters consistent with one observed
  transition and the disturbance support), and
* a projected least-mean-squares point estimate, clamped onto the
  current hypercube after every gradient step.

The hypercube update never grows the set and never loses a parameter
vector consistent with the data; the point estimate stays inside the
hypercube by construction.
"""

from collections import deque

import numpy as np
from dataclasses import dataclass, field

from . import geometry
from .geometry import HPolytope
from .model import ParamHypercube, eval_dynamics, regressor

__all__ = [
    "NonFalsifiedSet",
    "EstimatorState",
    "InconsistentDataError",
    "nonfalsified",
    "hypercube_update",
    "lms_update",
    "mu_bound",
]


class InconsistentDataError(RuntimeError):
    """Observed data cannot be explained by any admissible parameter."""


@dataclass(frozen=True)
class NonFalsifiedSet:
    """Parameters consistent with one transition: a polytope in R^p."""

    poly: HPolytope


@dataclass
class EstimatorState:
    """Shared state of the set-membership and LMS estimators.

    Parameters
    ----------
    model : UncertainModel
        Needed to evaluate predictions and regressors.
    theta_set : ParamHypercube
        Current hypercube outer bound of the parameters.
    theta_hat : ndarray
        Current point estimate; must lie inside ``theta_set``.
    mu : float
        LMS step size; choose ``mu <= 1 / mu_bound(model, Z)``.
    M : int
        Window length; the window keeps the last M + 2 non-falsified
        sets.
    """

    model: object
    theta_set: ParamHypercube
    theta_hat: np.ndarray
    mu: float
    M: int = 10
    window: deque = field(default=None)
    last_residual: np.ndarray = field(default=None)

    def __post_init__(self):
        self.theta_hat = np.atleast_1d(np.asarray(self.theta_hat, dtype=float))
        if self.mu <= 0:
            raise ValueError("step size mu must be positive")
        if not self.theta_set.contains(self.theta_hat, tol=1e-9):
            raise ValueError("theta_hat must start inside theta_set")
        if self.window is None:
            self.window = deque(maxlen=self.M + 2)
        elif self.window.maxlen != self.M + 2:
            raise ValueError("window capacity must be M + 2")


def nonfalsified(model, x_prev, u_prev, x_next, dist_set):
    """Polytope of parameters consistent with one observed transition.

    theta belongs to the result iff
    ``x_next - A(theta) x_prev - B(theta) u_prev`` lies in the
    disturbance set.  With ``H_d d <= h_d`` describing that set and
    ``resid = x_next - A_0 x_prev - B_0 u_prev`` this is
    ``(-H_d D(x_prev, u_prev)) theta <= h_d - H_d resid``.
    """
    x_prev = np.atleast_1d(np.asarray(x_prev, dtype=float))
    u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
    x_next = np.atleast_1d(np.asarray(x_next, dtype=float))
    D = regressor(model, x_prev, u_prev)
    resid = x_next - model.A[0] @ x_prev - model.B[0] @ u_prev
    Hp = dist_set.poly.H
    hp = dist_set.poly.h
    return NonFalsifiedSet(HPolytope(-Hp @ D, hp - Hp @ resid))


def _window_intersection_box(state, method):
    """Bounding box of prior hypercube cut by every windowed set."""
    prior = state.theta_set
    prior_box = geometry.IntervalBox(prior.center - prior.eta / 2,
                                     prior.center + prior.eta / 2)
    rows = [delta.poly.H for delta in state.window]
    rhs = [delta.poly.h for delta in state.window]
    if method == "clip" and prior.p == 2:
        poly = HPolytope(np.vstack(rows), np.concatenate(rhs))
        return geometry.bounding_box_2d(poly, prior_box)
    rows.insert(0, prior_box.as_polytope().H)
    rhs.insert(0, prior_box.as_polytope().h)
    poly = HPolytope(np.vstack(rows), np.concatenate(rhs))
    return geometry.bounding_box(poly)


def hypercube_update(state, new_delta, method="auto"):
    """Moving-window hypercube update; returns the new hypercube.

    Steps, in order: push the new non-falsified set into the window
    (evicting the oldest when full), intersect the previous hypercube
    with every windowed set, take the componentwise bounding box, set
    the new center to the box midpoints and the new side length to the
    largest box width, then clamp the center into the box around the
    previous center with half-width ``(eta_prev - eta_new) / 2`` so the
    new hypercube stays inside the previous one.

    ``method`` selects the box computation: ``"lp"`` for the support-LP
    route, ``"clip"`` for exact 2-D polygon clipping, ``"auto"`` to pick
    clipping when the parameter dimension is 2.  The routes agree to LP
    tolerance and are cross-checked in tests.

    Raises
    ------
    InconsistentDataError
        If the intersection is empty, meaning no admissible parameter
        explains the windowed data.
    """
    if method == "auto":
        method = "clip" if state.theta_set.p == 2 else "lp"
    state.window.append(new_delta)
    prev = state.theta_set
    try:
        box = _window_intersection_box(state, method)
    except geometry.EmptyPolytopeError as exc:
        raise InconsistentDataError(
            "window intersection is empty; observed data violate the "
            "model assumptions (%s)" % exc)
    widths = np.maximum(box.widths, 0.0)
    eta = float(min(np.max(widths, initial=0.0), prev.eta))
    center = box.center
    half_slack = (prev.eta - eta) / 2.0
    center = np.clip(center,
                     prev.center - half_slack,
                     prev.center + half_slack)
    state.theta_set = ParamHypercube(center, eta)
    return state.theta_set


def lms_update(state, x_prev, u_prev, x_next):
    """Projected least-mean-squares step; returns the new point estimate.

    The prediction residual is computed with the pre-update estimate,
    the gradient step is ``mu * D(x_prev, u_prev)' residual``, and the
    result is clamped componentwise onto the current hypercube (the
    Euclidean projection onto a box).
    """
    x_prev = np.atleast_1d(np.asarray(x_prev, dtype=float))
    u_prev = np.atleast_1d(np.asarray(u_prev, dtype=float))
    x_next = np.atleast_1d(np.asarray(x_next, dtype=float))
    A_hat, B_hat = eval_dynamics(state.model, state.theta_hat)
    residual = x_next - A_hat @ x_prev - B_hat @ u_prev
    D = regressor(state.model, x_prev, u_prev)
    raw = state.theta_hat + state.mu * (D.T @ residual)
    state.theta_hat = state.theta_set.clamp(raw)
    state.last_residual = residual
    return state.theta_hat


def mu_bound(model, Z):
    """Supremum of the squared regressor spectral norm over Z.

    The maximand ``||D(x, u)||^2`` is convex in (x, u) because D is a
    linear map of the point, so the maximum over the compact polytope Z
    is attained at a vertex; vertices are enumerated exactly.  Callers
    must pick ``mu <= 1 / result`` (any positive mu if the result is 0).
    """
    poly = Z.as_polytope()
    dim = poly.dim
    if dim == 1:
        box = geometry.bounding_box(poly)
        verts = np.array([[box.lower[0]], [box.upper[0]]])
    else:
        from scipy.spatial import HalfspaceIntersection

        center, radius = geometry.chebyshev_center(poly)
        if radius <= 0:
            raise geometry.GeometryError(
                "constraint set has no interior; cannot enumerate vertices")
        halfspaces = np.column_stack([poly.H, -poly.h])
        verts = HalfspaceIntersection(halfspaces, center).intersections
    n = model.n
    best = 0.0
    for v in verts:
        D = regressor(model, v[:n], v[n:])
        if D.size:
            best = max(best, float(np.linalg.norm(D, 2) ** 2))
    return best
