"""Canonical mass-spring-damper study setup shared by tests and demos.

One place defines the plant, the constraint and disturbance sets, the
cost weights, and the offline pipeline (feedback synthesis, tube
polytope, constants) so that every consumer works from identical data.
The pipeline result is cached per process; it is deterministic.
"""

from functools import lru_cache

import numpy as np
from dataclasses import dataclass

from . import estimation, offline
from .geometry import HPolytope
from .model import (ConstraintSet, DisturbanceSet, ParamHypercube,
                    mass_spring_damper)

__all__ = ["BenchmarkSetup", "constraint_set", "disturbance_set",
           "tube_base", "setup", "Q_WEIGHT", "R_WEIGHT", "RHO_DESIGN",
           "ETA0", "HORIZON", "WINDOW", "TRUE_THETA", "SETPOINT"]

Q_WEIGHT = np.diag([1.0, 1e-2])
R_WEIGHT = np.array([[0.1]])
RHO_DESIGN = 0.75
ETA0 = 2.0
HORIZON = 14
WINDOW = 10
TRUE_THETA = np.array([1.0, -1.0])
SETPOINT = np.array([1.0, 0.0])

# Feedback gain frozen from design_feedback_gain() below: on a coarse
# gain grid, among the gains that contract at every parameter vertex
# and admit the tracking terminal set, this one brings the tube
# constants (d_bar, eta0*L_B, uncertainty at the setpoint) closest to
# the study's reference values (worst deviation 4.1%, terminal slack
# 0.0053).  The volume-maximizing synthesis in `offline` is not used
# here because the optimal ellipsoid shape for this constraint
# geometry demands extreme gains that leave no terminal slack.
FEEDBACK_GAIN = np.array([[-17.0, -7.0]])


@dataclass(frozen=True)
class BenchmarkSetup:
    """Everything the study needs downstream of the offline phase."""

    model: object
    theta_of: object
    Theta0: ParamHypercube
    Z: ConstraintSet
    D: DisturbanceSet
    Q: np.ndarray
    R: np.ndarray
    constants: offline.OfflineConstants
    eta0: float
    mu: float


def constraint_set():
    """Position in [-0.1, 1.1], velocity in [-5, 5], force in [-5, 5]."""
    F = np.array([
        [1.0 / 1.1, 0.0],
        [-10.0, 0.0],
        [0.0, 0.2],
        [0.0, -0.2],
        [0.0, 0.0],
        [0.0, 0.0],
    ])
    G = np.array([[0.0], [0.0], [0.0], [0.0], [0.2], [-0.2]])
    return ConstraintSet(F, G)


def disturbance_set():
    """Force disturbance up to 0.2 discretized onto the velocity state."""
    return DisturbanceSet.from_box([0.0, -0.02], [0.0, 0.02])


def tube_base(K):
    """Design region for the tube: small position, wide velocity,
    feedback input in [-5, 4]."""
    K = np.atleast_2d(np.asarray(K, dtype=float))[0]
    H = np.vstack([
        [10.0, 0.0],
        [-10.0, 0.0],
        [0.0, 0.2],
        [0.0, -0.2],
        K / 4.0,
        -K / 5.0,
    ])
    return HPolytope(H, np.ones(6))


def design_feedback_gain(grid_k1=None, grid_k2=None):
    """Reproduce the frozen FEEDBACK_GAIN by grid search.

    Feasibility at a grid point: every vertex closed loop has spectral
    radius at most rho - margin, the maximal contractive tube exists,
    and the strict tracking terminal condition holds at the setpoint.
    Among feasible points, the one whose tube constants (d_bar,
    eta0*L_B, uncertainty at the setpoint) have the smallest worst
    relative deviation from the study's reference values (0.0582,
    0.0363, 0.1455) wins.  Slow (many tube constructions); not used at
    import time.
    """
    from .model import eval_dynamics

    model, _ = mass_spring_damper()
    Theta0 = ParamHypercube(np.zeros(2), ETA0)
    Z = constraint_set()
    D = disturbance_set()
    reference = {"d_bar": 0.0582, "eta0_L_B": 0.0363, "w_setpoint": 0.1455}
    if grid_k1 is None:
        grid_k1 = np.arange(-26.0, -13.9, 1.0)
    if grid_k2 is None:
        grid_k2 = np.arange(-10.0, -6.9, 0.5)
    best = None
    for k1 in grid_k1:
        for k2 in grid_k2:
            K = np.array([[k1, k2]])
            radius = max(
                np.max(np.abs(np.linalg.eigvals(A + B @ K)))
                for A, B in (eval_dynamics(model, th)
                             for th in Theta0.vertices()))
            if radius > RHO_DESIGN - 0.002:
                continue
            try:
                constants = _tube_constants(model, Theta0, D, Z, K)
                offline.terminal_tracking(constants, model, Theta0,
                                          SETPOINT)
            except Exception:
                continue
            values = {
                "d_bar": constants.d_bar,
                "eta0_L_B": ETA0 * constants.L_B,
                "w_setpoint": offline.w_eta(model, constants.tube,
                                            SETPOINT, np.array([1.0]),
                                            ETA0),
            }
            deviation = max(abs(values[k] - reference[k]) / reference[k]
                            for k in reference)
            if best is None or deviation < best[0]:
                best = (deviation, K)
    if best is None:
        raise RuntimeError("no grid point passed the design filters")
    return best[1]


def _tube_constants(model, Theta0, D, Z, K, P=None, meta=None):
    """Tube and constants for a fixed gain; placeholder cost if absent."""
    if P is None:
        P = np.eye(model.n)
    return offline.compute_constants(model, Theta0, D, Z, K, P,
                                     RHO_DESIGN, tube_base(K), meta=meta)


@lru_cache(maxsize=None)
def setup():
    """Run the offline pipeline once and cache the result."""
    model, theta_of = mass_spring_damper()
    Theta0 = ParamHypercube(np.zeros(2), ETA0)
    Z = constraint_set()
    D = disturbance_set()
    d_vertices = (np.array([0.0, -0.02]), np.array([0.0, 0.02]))
    K = FEEDBACK_GAIN
    P = None
    lam_used = None
    for lam in [0.1 * i for i in range(1, 10)]:
        try:
            P = offline.fit_terminal_cost(
                model, tuple(Theta0.vertices()), d_vertices, Q_WEIGHT,
                R_WEIGHT, RHO_DESIGN, lam, Z, K)
            lam_used = lam
            break
        except offline.SynthesisError:
            continue
    if P is None:
        raise offline.SynthesisError(
            "no cost matrix found for the frozen feedback gain")
    constants = _tube_constants(
        model, Theta0, D, Z, K, P,
        meta={"rho_design": RHO_DESIGN, "lambda": lam_used})
    if not offline.lyapunov_check(P, K, Q_WEIGHT, R_WEIGHT, model, Theta0):
        raise offline.SynthesisError(
            "fitted cost matrix fails the vertex Lyapunov check")
    mu = 0.9 / estimation.mu_bound(model, Z)
    return BenchmarkSetup(model=model, theta_of=theta_of, Theta0=Theta0,
                          Z=Z, D=D, Q=Q_WEIGHT, R=R_WEIGHT,
                          constants=constants, eta0=ETA0, mu=mu)
