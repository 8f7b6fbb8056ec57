"""Uncertain affine-in-parameter system descriptions.

The plant family is ``x+ = A(theta) x + B(theta) u + d`` with

    A(theta) = A_0 + sum_i theta_i A_i,
    B(theta) = B_0 + sum_i theta_i B_i,

parameters living in a hypercube ``center + eta * [-1/2, 1/2]^p``, state
and input jointly constrained by ``F x + G u <= 1``, and an additive
disturbance confined to a compact polytope.
"""

import warnings
import numpy as np
from dataclasses import dataclass

from . import geometry
from .geometry import HPolytope

__all__ = [
    "UncertainModel",
    "ParamHypercube",
    "ConstraintSet",
    "DisturbanceSet",
    "eval_dynamics",
    "regressor",
    "mass_spring_damper",
]


@dataclass(frozen=True)
class UncertainModel:
    """Affine parameterization of the system matrices.

    Parameters
    ----------
    A : list of ndarray
        p + 1 matrices of shape (n, n): the nominal A_0 followed by the
        parameter directions A_1 .. A_p.
    B : list of ndarray
        p + 1 matrices of shape (n, m), same layout.
    """

    A: tuple
    B: tuple

    def __post_init__(self):
        A = tuple(np.asarray(M, dtype=float) for M in self.A)
        B = tuple(np.asarray(M, dtype=float) for M in self.B)
        if len(A) != len(B) or len(A) < 1:
            raise ValueError("need p + 1 matrices in both A and B")
        n = A[0].shape[0]
        m = B[0].shape[1]
        for M in A:
            if M.shape != (n, n):
                raise ValueError("every A_i must be %d x %d" % (n, n))
        for M in B:
            if M.shape != (n, m):
                raise ValueError("every B_i must be %d x %d" % (n, m))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self):
        return self.A[0].shape[0]

    @property
    def m(self):
        return self.B[0].shape[1]

    @property
    def p(self):
        return len(self.A) - 1

    @property
    def input_is_certain(self):
        """True when every B_i beyond B_0 vanishes."""
        return all(np.all(M == 0.0) for M in self.B[1:])


@dataclass(frozen=True)
class ParamHypercube:
    """Hypercube ``center + eta * [-1/2, 1/2]^p`` of parameter vectors."""

    center: np.ndarray
    eta: float

    def __post_init__(self):
        center = np.atleast_1d(np.asarray(self.center, dtype=float))
        eta = float(self.eta)
        if eta < 0:
            raise ValueError("side length eta must be nonnegative")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "eta", eta)

    @property
    def p(self):
        return self.center.shape[0]

    def contains(self, theta, tol=1e-12):
        theta = np.asarray(theta, dtype=float)
        return bool(np.max(np.abs(theta - self.center), initial=0.0)
                    <= self.eta / 2 + tol)

    def vertices(self):
        """All 2^p corner parameter vectors."""
        p = self.p
        corners = np.empty((2 ** p, p))
        for mask in range(2 ** p):
            offs = np.array([0.5 if mask & (1 << i) else -0.5
                             for i in range(p)])
            corners[mask] = self.center + self.eta * offs
        return corners

    def clamp(self, theta):
        """Componentwise projection of theta onto the hypercube."""
        theta = np.asarray(theta, dtype=float)
        half = self.eta / 2
        return np.clip(theta, self.center - half, self.center + half)

    def as_polytope(self):
        half = self.eta / 2
        return HPolytope.from_box(self.center - half, self.center + half)


@dataclass(frozen=True)
class ConstraintSet:
    """Joint state-input constraints ``F x + G u <= 1`` (compact)."""

    F: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        G = np.atleast_2d(np.asarray(self.G, dtype=float))
        if F.shape[0] != G.shape[0]:
            raise ValueError("F and G must have matching row counts")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "G", G)
        # compactness check: bounded in all 2(n+m) coordinate directions
        stacked = HPolytope(np.hstack([F, G]), np.ones(F.shape[0]))
        try:
            geometry.bounding_box(stacked)
        except geometry.GeometryError as exc:
            raise ValueError("constraint set must be compact: %s" % exc)

    @property
    def q(self):
        return self.F.shape[0]

    def as_polytope(self):
        return HPolytope(np.hstack([self.F, self.G]), np.ones(self.q))

    def satisfied(self, x, u, tol=1e-9):
        return bool(np.all(self.F @ x + self.G @ u <= 1.0 + tol))


@dataclass(frozen=True)
class DisturbanceSet:
    """Compact polytopic disturbance support."""

    poly: HPolytope

    def __post_init__(self):
        try:
            geometry.bounding_box(self.poly)
        except geometry.EmptyPolytopeError:
            raise ValueError("disturbance set must be nonempty")
        except geometry.GeometryError as exc:
            raise ValueError("disturbance set must be compact: %s" % exc)
        if not self.poly.contains(np.zeros(self.poly.dim)):
            warnings.warn("disturbance set does not contain the origin",
                          stacklevel=2)

    @property
    def dim(self):
        return self.poly.dim

    @staticmethod
    def from_box(lower, upper):
        return DisturbanceSet(HPolytope.from_box(lower, upper))


def eval_dynamics(model, theta):
    """System matrices at a parameter vector.

    Returns ``(A_0 + sum_i theta_i A_i, B_0 + sum_i theta_i B_i)``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if theta.shape[0] != model.p:
        raise ValueError("theta must have length %d" % model.p)
    A = model.A[0].copy()
    B = model.B[0].copy()
    for i in range(model.p):
        A += theta[i] * model.A[i + 1]
        B += theta[i] * model.B[i + 1]
    return A, B


def regressor(model, x, u):
    """Parameter-direction matrix D(x, u) with columns ``A_i x + B_i u``.

    Satisfies the exact identity
    ``A(theta) x + B(theta) u = A(tb) x + B(tb) u + D(x, u)(theta - tb)``
    for every theta and tb.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    cols = [model.A[i + 1] @ x + model.B[i + 1] @ u for i in range(model.p)]
    if not cols:
        return np.zeros((model.n, 0))
    return np.column_stack(cols)


def mass_spring_damper(ts=0.1, mass=1.0,
                       damping_range=(0.1, 0.3),
                       stiffness_range=(0.5, 1.5)):
    """Euler-discretized mass-spring-damper with interval uncertainty.

    The continuous plant is ``m x'' = -k x - c x' + u + d`` with damping
    c and stiffness k only known to intervals.  Both intervals map onto
    normalized parameters through their midpoint and half-width, so the
    prior hypercube is ``0 + 2 * [-1/2, 1/2]^2`` (theta in [-1, 1]^2):

        c = c_mid + c_half * theta_1,
        k = k_mid + k_half * theta_2.

    Returns
    -------
    (UncertainModel, callable)
        The model and a map ``theta_of(c, k)`` to normalized parameters.
    """
    c_mid = 0.5 * (damping_range[0] + damping_range[1])
    c_half = 0.5 * (damping_range[1] - damping_range[0])
    k_mid = 0.5 * (stiffness_range[0] + stiffness_range[1])
    k_half = 0.5 * (stiffness_range[1] - stiffness_range[0])
    a = ts / mass
    A0 = np.array([[1.0, ts], [-a * k_mid, 1.0 - a * c_mid]])
    A1 = np.array([[0.0, 0.0], [0.0, -a * c_half]])
    A2 = np.array([[0.0, 0.0], [-a * k_half, 0.0]])
    B0 = np.array([[0.0], [a]])
    Z = np.zeros((2, 1))
    model = UncertainModel((A0, A1, A2), (B0, Z, Z))

    def theta_of(c, k):
        return np.array([(c - c_mid) / c_half, (k - k_mid) / k_half])

    return model, theta_of
