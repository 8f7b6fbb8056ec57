"""Constants and sets computed before the control loop.

Given a stabilizing feedback ``K`` and cost matrix ``P`` (synthesized
here via semidefinite programming, or supplied externally), this module
computes the tube cross-section polytope, its contraction rate, the
parameter Lipschitz constant ``L_B``, the disturbance bound ``d_bar``,
the per-row constraint margins ``c_j``, the uncertainty function
``w_eta``, and the terminal sets for regulation to the origin or to a
nonzero setpoint.  Verification probes for the contraction/Lipschitz
inequalities and the Lyapunov condition live here as well.
"""

import json

import numpy as np
from dataclasses import dataclass, field

from . import geometry
from .geometry import HPolytope
from .model import eval_dynamics, regressor
from .solvers import SolverUnavailableError, require_sdp, solve_sdp_problem

__all__ = [
    "OfflineConstants",
    "TerminalSet",
    "AffineMap",
    "TerminalInfeasibleError",
    "SynthesisError",
    "contraction_rate",
    "contraction_rate_fast",
    "param_lipschitz",
    "disturbance_bound",
    "w_eta",
    "constraint_margins",
    "check_prop1",
    "check_prop2",
    "lyapunov_check",
    "lyapunov_report",
    "lmi_synthesis",
    "lmi_synthesis_grid",
    "compute_constants",
    "terminal_origin",
    "terminal_tracking",
    "steady_input_map",
]


class TerminalInfeasibleError(RuntimeError):
    """The terminal-set existence condition fails; carries diagnostics."""

    def __init__(self, message, **quantities):
        super().__init__(message)
        self.quantities = quantities


class SynthesisError(RuntimeError):
    """Feedback synthesis failed; names the violated constraint block."""


@dataclass(frozen=True)
class AffineMap:
    """Affine map ``theta -> offset + coef @ theta``."""

    offset: np.ndarray
    coef: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "offset",
                           np.atleast_1d(np.asarray(self.offset, dtype=float)))
        object.__setattr__(self, "coef",
                           np.atleast_2d(np.asarray(self.coef, dtype=float)))

    def __call__(self, theta):
        return self.offset + self.coef @ np.atleast_1d(
            np.asarray(theta, dtype=float))


@dataclass(frozen=True)
class OfflineConstants:
    """Feedback, cost, tube polytope, and tube propagation constants.

    Invariants enforced on construction: P positive definite, the
    contraction rate inside [0, 1), and every scalar constant
    nonnegative.
    """

    K: np.ndarray
    P: np.ndarray
    tube: HPolytope
    rho_bar: float
    L_B: float
    d_bar: float
    c: np.ndarray
    c_max: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        P = np.asarray(self.P, dtype=float)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "P", 0.5 * (P + P.T))
        object.__setattr__(self, "c",
                           np.atleast_1d(np.asarray(self.c, dtype=float)))
        try:
            np.linalg.cholesky(self.P)
        except np.linalg.LinAlgError:
            raise ValueError("P must be positive definite")
        if not (0.0 <= self.rho_bar < 1.0):
            raise ValueError("contraction rate must lie in [0, 1)")
        if self.L_B < 0 or self.d_bar < 0 or np.any(self.c < 0):
            raise ValueError("tube constants must be nonnegative")

    def to_json(self):
        data = {
            "K": self.K.tolist(),
            "P": self.P.tolist(),
            "tube": {"H": self.tube.H.tolist(), "h": self.tube.h.tolist()},
            "rho_bar": self.rho_bar,
            "L_B": self.L_B,
            "d_bar": self.d_bar,
            "c": self.c.tolist(),
            "c_max": self.c_max,
            "meta": self.meta,
        }
        return json.dumps(data, indent=2)

    @staticmethod
    def from_json(text):
        data = json.loads(text)
        return OfflineConstants(
            K=np.array(data["K"], dtype=float),
            P=np.array(data["P"], dtype=float),
            tube=HPolytope(np.array(data["tube"]["H"], dtype=float),
                           np.array(data["tube"]["h"], dtype=float)),
            rho_bar=float(data["rho_bar"]),
            L_B=float(data["L_B"]),
            d_bar=float(data["d_bar"]),
            c=np.array(data["c"], dtype=float),
            c_max=float(data["c_max"]),
            meta=data.get("meta", {}),
        )


@dataclass(frozen=True)
class TerminalSet:
    """Terminal constraint on the pair (state, tube size).

    ``kind == "origin"`` encodes ``c_max (s + H_i x) <= 1`` for all tube
    rows; ``kind == "tracking"`` encodes ``s + H_i (x - x_s) <= f_lower``.
    Both are the unified row family ``s + H_i (x - x_s) <= f_lower`` with
    ``x_s = 0`` and ``f_lower = 1 / c_max`` in the origin case.
    """

    kind: str
    c_max: float
    f_lower: float
    x_s: np.ndarray
    u_s_map: AffineMap = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("origin", "tracking"):
            raise ValueError("kind must be 'origin' or 'tracking'")
        object.__setattr__(self, "x_s",
                           np.atleast_1d(np.asarray(self.x_s, dtype=float)))

    def contains(self, tube_H, x, s, tol=1e-9):
        """Membership of (x, s) with respect to the tube rows."""
        vals = s + tube_H @ (np.asarray(x, dtype=float) - self.x_s)
        return bool(np.max(vals) <= self.f_lower + tol)

    def to_json(self):
        data = {
            "kind": self.kind,
            "c_max": self.c_max,
            "f_lower": self.f_lower,
            "x_s": self.x_s.tolist(),
            "u_s_map": None if self.u_s_map is None else {
                "offset": self.u_s_map.offset.tolist(),
                "coef": self.u_s_map.coef.tolist(),
            },
            "meta": self.meta,
        }
        return json.dumps(data, indent=2)

    @staticmethod
    def from_json(text):
        data = json.loads(text)
        u_s_map = None
        if data.get("u_s_map") is not None:
            u_s_map = AffineMap(np.array(data["u_s_map"]["offset"]),
                                np.array(data["u_s_map"]["coef"]))
        return TerminalSet(kind=data["kind"], c_max=float(data["c_max"]),
                           f_lower=float(data["f_lower"]),
                           x_s=np.array(data["x_s"], dtype=float),
                           u_s_map=u_s_map, meta=data.get("meta", {}))


def contraction_rate(tube, A_cl):
    """Worst-row contraction of the tube under one closed loop.

    ``max_i max_{x in tube} H_i A x`` via r support LPs; the tube must
    be normalized to h = 1 for the value to be a contraction factor.
    """
    A_cl = np.asarray(A_cl, dtype=float)
    return max(geometry.support(tube, row @ A_cl) for row in tube.H)


def contraction_rate_fast(tube_H, tube_vertices, A_cl):
    """Same value as :func:`contraction_rate` via precomputed vertices.

    Exact for a fixed polytope because every support LP is attained at a
    vertex; used in the per-step loop and cross-checked against the LP
    route in tests.
    """
    vals = tube_H @ np.asarray(A_cl, dtype=float) @ tube_vertices.T
    return float(np.max(vals))


def _unit_hypercube_vertices(p):
    """Corners of [-1/2, 1/2]^p."""
    out = np.empty((2 ** p, p))
    for mask in range(2 ** p):
        out[mask] = [0.5 if mask & (1 << i) else -0.5 for i in range(p)]
    return out


def param_lipschitz(tube, model, K):
    """Tube-wide bound on the parameter sensitivity of the closed loop.

    ``max_{i, l} max_{x in tube} H_i D(x, Kx) e_l`` over the 2^p corner
    directions ``e_l`` of the unit hypercube: one support LP per (row,
    corner) pair, using that D(x, Kx) is linear in x.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    corners = _unit_hypercube_vertices(model.p)
    best = 0.0
    for e in corners:
        # column combination of (A_c + B_c K) weighted by the corner
        M = sum(e[c] * (model.A[c + 1] + model.B[c + 1] @ K)
                for c in range(model.p))
        for row in tube.H:
            best = max(best, geometry.support(tube, row @ M))
    return best


def disturbance_bound(tube, dist_set):
    """Largest tube-row value reachable by an admissible disturbance."""
    return max(geometry.support(dist_set.poly, row) for row in tube.H)


def w_eta(model, tube, z, v, eta):
    """Uncertainty contribution of one predicted point.

    ``eta * max_{i,l} H_i D(z, v) e_l`` with ``e_l`` the corners of the
    unit hypercube; direct evaluation, no optimization.
    """
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    D = regressor(model, z, v)
    corners = _unit_hypercube_vertices(model.p)
    vals = tube.H @ D @ corners.T
    return float(eta * np.max(vals, initial=0.0))


def constraint_margins(tube, Z, K):
    """Per-row tightening constants ``c_j = max_{x in tube} [F + GK]_j x``."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    rows = Z.F + Z.G @ K
    return np.array([geometry.support(tube, row) for row in rows])


def check_prop1(model, tube, K, theta, dtheta, eta,
                lipschitz=None, tube_vertices=None, tol=1e-9):
    """Probe: contraction at a perturbed parameter is Lipschitz-bounded.

    Verifies ``rho(theta + dtheta) <= rho(theta) + eta * L_B + tol`` for
    ``||dtheta||_inf <= eta / 2``.  Always true mathematically; exposed
    as a property test, not control logic.  Pass precomputed tube
    vertices to replace the support LPs with exact vertex maxima when
    probing many draws.
    """
    theta = np.asarray(theta, dtype=float)
    dtheta = np.asarray(dtheta, dtype=float)
    if np.max(np.abs(dtheta), initial=0.0) > eta / 2 + 1e-12:
        raise ValueError("dtheta must satisfy ||dtheta||_inf <= eta / 2")
    if lipschitz is None:
        lipschitz = param_lipschitz(tube, model, K)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    A1, B1 = eval_dynamics(model, theta)
    A2, B2 = eval_dynamics(model, theta + dtheta)
    if tube_vertices is not None:
        rho1 = contraction_rate_fast(tube.H, tube_vertices, A1 + B1 @ K)
        rho2 = contraction_rate_fast(tube.H, tube_vertices, A2 + B2 @ K)
    else:
        rho1 = contraction_rate(tube, A1 + B1 @ K)
        rho2 = contraction_rate(tube, A2 + B2 @ K)
    return rho2 <= rho1 + eta * lipschitz + tol


def check_prop2(model, tube, K, x, z, v, eta, lipschitz=None, tol=1e-9):
    """Probe: the uncertainty function is Lipschitz in the tube gauge.

    Verifies ``w_eta(x, v + K(x - z)) <= w_eta(z, v)
    + eta * L_B * max_i H_i (x - z) + tol``.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if lipschitz is None:
        lipschitz = param_lipschitz(tube, model, K)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    lhs = w_eta(model, tube, x, v + K @ (x - z), eta)
    gauge = float(np.max(tube.H @ (x - z)))
    rhs = w_eta(model, tube, z, v, eta) + eta * lipschitz * gauge
    return lhs <= rhs + tol


def lyapunov_report(P, K, Q, R, model, Theta0, samples=10 ** 4, rng=None):
    """Worst Lyapunov residuals at the hypercube vertices and interior.

    The residual is the largest eigenvalue of
    ``A_cl' P A_cl + Q + K' R K - P``; nonpositive (up to tolerance)
    means the quadratic cost decrease holds at that parameter.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    cost = Q + K.T @ R @ K

    def residual(theta):
        A, B = eval_dynamics(model, theta)
        Acl = A + B @ K
        return float(np.linalg.eigvalsh(Acl.T @ P @ Acl + cost - P)[-1])

    vertex_worst = max(residual(v) for v in Theta0.vertices())
    interior_worst = -np.inf
    if samples:
        rng = np.random.default_rng(0 if rng is None else rng)
        half = Theta0.eta / 2
        draws = rng.uniform(-half, half, size=(samples, Theta0.p))
        interior_worst = max(residual(Theta0.center + d) for d in draws)
    return {"vertex_worst": vertex_worst, "interior_worst": interior_worst}


def lyapunov_check(P, K, Q, R, model, Theta0, tol=1e-8):
    """True iff the quadratic cost decrease holds at every vertex.

    For closed loops affine in the parameter the residual is convex
    along each coordinate, so vertex checking covers the hypercube; an
    interior sample report is available via :func:`lyapunov_report`.
    """
    report = lyapunov_report(P, K, Q, R, model, Theta0, samples=0)
    return report["vertex_worst"] <= tol


def _psd_sqrt(M):
    M = np.asarray(M, dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    vals = np.clip(vals, 0.0, None)
    return vecs @ np.diag(np.sqrt(vals)) @ vecs.T


def _lmi_blocks(cp, X, Y, model, theta_vertices, D_vertices, Q, R, rho, lam, Z):
    """The four LMI families, labeled so infeasibility can be attributed."""
    n = model.n
    m = model.m
    Qh = _psd_sqrt(Q)
    Rh = _psd_sqrt(R)
    Znn = np.zeros((n, n))
    Znm = np.zeros((n, m))
    blocks = {"lyapunov": [], "contraction": [], "constraints": [], "rpi": []}
    for th in theta_vertices:
        A, B = eval_dynamics(model, th)
        M = A @ X + B @ Y
        blocks["lyapunov"].append(cp.bmat([
            [X, M.T, X @ Qh, Y.T @ Rh],
            [M, X, Znn, Znm],
            [Qh @ X, Znn, np.eye(n), Znm],
            [Rh @ Y, Znm.T, Znm.T, np.eye(m)],
        ]) >> 0)
        blocks["contraction"].append(
            cp.bmat([[rho * X, M.T], [M, rho * X]]) >> 0)
        for d in D_vertices:
            d = np.asarray(d, dtype=float).reshape(1, n)
            blocks["rpi"].append(cp.bmat([
                [lam * X, np.zeros((n, 1)), M.T],
                [np.zeros((1, n)), np.array([[1.0 - lam]]), d],
                [M, d.T, X],
            ]) >> 0)
    for j in range(Z.q):
        row = Z.F[j:j + 1, :] @ X + Z.G[j:j + 1, :] @ Y
        blocks["constraints"].append(
            cp.bmat([[np.eye(1), row], [row.T, X]]) >> 0)
    return blocks


def lmi_synthesis(model, Theta0_vertices, D_vertices, Q, R, rho, lam, Z):
    """Feedback and cost synthesis by log-det semidefinite programming.

    Maximizes ``log det X`` subject to, at every parameter vertex: the
    quadratic cost decrease (Lyapunov), ellipsoidal contraction at rate
    ``rho``, inclusion of the ellipsoid inside every constraint row, and
    robust invariance against every disturbance vertex (S-procedure
    scalar ``lam``).  Returns ``(P, K) = (X^-1, Y X^-1)``; the result is
    post-inflated minimally so the vertex Lyapunov check holds with
    numerical margin.

    Raises
    ------
    SynthesisError
        Infeasible problem (the message names the violated block family)
        or solver breakdown.
    SolverUnavailableError
        No semidefinite backend importable; supply (P, K) externally.
    """
    cp = require_sdp()
    if not (0.0 < rho < 1.0):
        raise ValueError("rho must lie in (0, 1)")
    if not (0.0 <= lam < 1.0):
        raise ValueError("lambda must lie in [0, 1)")
    n = model.n
    X = cp.Variable((n, n), symmetric=True)
    Y = cp.Variable((model.m, n))
    blocks = _lmi_blocks(cp, X, Y, model, Theta0_vertices, D_vertices,
                         Q, R, rho, lam, Z)
    cons = [X >> 1e-9 * np.eye(n)]
    for fam in blocks.values():
        cons.extend(fam)
    problem = cp.Problem(cp.Maximize(cp.log_det(X)), cons)
    status = solve_sdp_problem(problem)
    if status not in ("optimal", "optimal_inaccurate"):
        # attribute the failure to a block family if one is singly infeasible
        for name, fam in blocks.items():
            sub = cp.Problem(cp.Maximize(cp.log_det(X)),
                             [X >> 1e-9 * np.eye(n), X << 1e6 * np.eye(n)]
                             + fam)
            if solve_sdp_problem(sub) not in ("optimal",
                                              "optimal_inaccurate"):
                raise SynthesisError(
                    "synthesis infeasible: the '%s' block family cannot be "
                    "satisfied alone (rho=%.3f, lambda=%.3f)"
                    % (name, rho, lam))
        raise SynthesisError(
            "synthesis infeasible for rho=%.3f, lambda=%.3f (no single "
            "block family is infeasible alone; the combination is)"
            % (rho, lam))
    X_star = np.asarray(X.value)
    X_star = 0.5 * (X_star + X_star.T)
    Y_star = np.asarray(Y.value).copy()
    # the objective fixes X but not Y: any feedback compatible with the
    # optimal shape is accepted, so solvers can return extreme gains;
    # re-solve for the minimum-gain feedback at (nearly) this shape
    P_star = np.linalg.inv(X_star)
    shrink = (1.0 - 1e-6) * X_star
    blocks2 = _lmi_blocks(cp, shrink, Y, model, Theta0_vertices,
                          D_vertices, Q, R, rho, lam, Z)
    cons2 = [c for fam in blocks2.values() for c in fam]
    refine = cp.Problem(cp.Minimize(cp.sum_squares(Y @ P_star)), cons2)
    if solve_sdp_problem(refine) in ("optimal", "optimal_inaccurate"):
        return _finalize_synthesis(model, Theta0_vertices, Q, R,
                                   shrink, np.asarray(Y.value))
    return _finalize_synthesis(model, Theta0_vertices, Q, R, X_star, Y_star)


def _finalize_synthesis(model, theta_vertices, Q, R, Xv, Yv):
    """Extract (P, K) and inflate P minimally so the vertex Lyapunov
    inequality holds with numerical margin."""
    from scipy.linalg import eigh as generalized_eigh

    P = np.linalg.inv(0.5 * (Xv + Xv.T))
    P = 0.5 * (P + P.T)
    K = Yv @ P
    cost = Q + K.T @ R @ K
    gamma = 1.0
    for th in theta_vertices:
        A, B = eval_dynamics(model, th)
        Acl = A + B @ K
        S = P - Acl.T @ P @ Acl
        vals = generalized_eigh(cost, S, eigvals_only=True)
        gamma = max(gamma, float(vals[-1]))
    if gamma > 1.0:
        P = P * gamma * (1.0 + 1e-9)
    return P, K


def fit_terminal_cost(model, Theta0_vertices, D_vertices, Q, R, rho, lam,
                      Z, K):
    """Cost matrix P for an externally chosen feedback K.

    Same block families as :func:`lmi_synthesis` with the feedback
    substituted (Y = K X), maximizing log det X; returns P = X^-1 after
    the same minimal Lyapunov inflation.

    Raises
    ------
    SynthesisError
        No P exists for this feedback at the given (rho, lam).
    """
    cp = require_sdp()
    K = np.atleast_2d(np.asarray(K, dtype=float))
    n = model.n
    X = cp.Variable((n, n), symmetric=True)
    blocks = _lmi_blocks(cp, X, K @ X, model, Theta0_vertices, D_vertices,
                         Q, R, rho, lam, Z)
    cons = [X >> 1e-9 * np.eye(n)]
    for fam in blocks.values():
        cons.extend(fam)
    problem = cp.Problem(cp.Maximize(cp.log_det(X)), cons)
    if solve_sdp_problem(problem) not in ("optimal", "optimal_inaccurate"):
        raise SynthesisError(
            "no cost matrix exists for the supplied feedback at "
            "rho=%.3f, lambda=%.3f" % (rho, lam))
    Xv = np.asarray(X.value)
    Yv = K @ np.asarray(X.value)
    P, _ = _finalize_synthesis(model, Theta0_vertices, Q, R, Xv, Yv)
    return P


def lmi_synthesis_grid(model, Theta0_vertices, D_vertices, Q, R, Z,
                       rho_target=None):
    """Scan the (rho, lambda) grid and return the first feasible triple.

    rho runs over {0.5, 0.55, ..., 0.95} (or just ``rho_target``),
    lambda over {0.1, ..., 0.9}.  Returns ``(P, K, rho, lam)``.
    """
    rhos = ([rho_target] if rho_target is not None
            else [0.5 + 0.05 * i for i in range(10)])
    lams = [0.1 * i for i in range(1, 10)]
    last_error = None
    for rho in rhos:
        for lam in lams:
            try:
                P, K = lmi_synthesis(model, Theta0_vertices, D_vertices,
                                     Q, R, rho, lam, Z)
                return P, K, rho, lam
            except SynthesisError as exc:
                last_error = exc
    raise SynthesisError("no feasible (rho, lambda) grid point: %s"
                         % last_error)


def compute_constants(model, Theta0, dist_set, Z, K, P, rho, tube_base,
                      meta=None):
    """Assemble OfflineConstants from a feedback and a tube base set.

    The tube polytope is the maximal rho-contractive subset of
    ``tube_base`` under the closed loops at every vertex of the prior
    hypercube; all scalar constants are then LP optima over it.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Acl_list = []
    for th in Theta0.vertices():
        A, B = eval_dynamics(model, th)
        Acl_list.append(A + B @ K)
    tube = geometry.max_contractive_set(Acl_list, tube_base, rho)
    A_c, B_c = eval_dynamics(model, Theta0.center)
    rho_bar = contraction_rate(tube, A_c + B_c @ K)
    L_B = param_lipschitz(tube, model, K)
    d_bar = disturbance_bound(tube, dist_set)
    c = constraint_margins(tube, Z, K)
    per_row = [geometry.support(dist_set.poly, row) for row in tube.H]
    full_meta = {"F": Z.F.tolist(), "G": Z.G.tolist(), "d_rows": per_row}
    full_meta.update(meta or {})
    return OfflineConstants(K=K, P=P, tube=tube, rho_bar=rho_bar, L_B=L_B,
                            d_bar=d_bar, c=c, c_max=float(np.max(c)),
                            meta=full_meta)


def terminal_origin(constants, eta0):
    """Terminal set for regulation to the origin.

    Requires ``rho_bar + eta0 * L_B + c_max * d_bar <= 1``; on success
    the terminal region is ``c_max (s + H_i x) <= 1`` for every tube
    row.

    Raises
    ------
    TerminalInfeasibleError
        Condition violated; the error carries the three addends and the
        slack.
    """
    total = (constants.rho_bar + eta0 * constants.L_B
             + constants.c_max * constants.d_bar)
    slack = 1.0 - total
    if slack < 0:
        raise TerminalInfeasibleError(
            "origin terminal condition violated: rho=%.4f + eta0*L_B=%.4f "
            "+ c_max*d_bar=%.4f = %.4f > 1"
            % (constants.rho_bar, eta0 * constants.L_B,
               constants.c_max * constants.d_bar, total),
            rho_bar=constants.rho_bar,
            eta_L_B=eta0 * constants.L_B,
            c_max_d_bar=constants.c_max * constants.d_bar,
            slack=slack)
    return TerminalSet(kind="origin", c_max=constants.c_max,
                       f_lower=1.0 / constants.c_max,
                       x_s=np.zeros(constants.tube.dim),
                       meta={"slack": slack})


def steady_input_map(model, x_s, tol=1e-9):
    """Affine map theta -> u_s with ``x_s = A(th) x_s + B(th) u_s(th)``.

    Solved coordinatewise: the offset from the nominal pair, each
    column from the corresponding parameter direction; any cross terms
    ``B_i U_j`` must vanish for an affine solution to exist.

    Raises
    ------
    TerminalInfeasibleError
        ``x_s`` is not a steady state for every admissible parameter.
    ValueError
        The steady input exists but is not affine in the parameter.
    """
    x_s = np.atleast_1d(np.asarray(x_s, dtype=float))
    B0 = model.B[0]
    rhs0 = (np.eye(model.n) - model.A[0]) @ x_s
    u0, *_ = np.linalg.lstsq(B0, rhs0, rcond=None)
    if np.max(np.abs(B0 @ u0 - rhs0), initial=0.0) > tol:
        raise TerminalInfeasibleError(
            "x_s is not a steady state of the nominal dynamics",
            x_s=x_s)
    cols = []
    for i in range(model.p):
        rhs_i = -(model.A[i + 1] @ x_s + model.B[i + 1] @ u0)
        ui, *_ = np.linalg.lstsq(B0, rhs_i, rcond=None)
        if np.max(np.abs(B0 @ ui - rhs_i), initial=0.0) > tol:
            raise TerminalInfeasibleError(
                "x_s cannot be held at parameter direction %d" % (i + 1),
                x_s=x_s)
        cols.append(ui)
    U = np.column_stack(cols) if cols else np.zeros((model.m, 0))
    # affine consistency: quadratic terms B_i U_j must vanish
    for i in range(model.p):
        Bi = model.B[i + 1]
        if np.max(np.abs(Bi @ U), initial=0.0) > tol:
            raise ValueError(
                "steady input is not affine in the parameters for this "
                "model; unsupported")
    return AffineMap(u0, U)


def terminal_tracking(constants, model, Theta, x_s, rho_bar=None, Z=None):
    """Terminal set for tracking a nonzero setpoint.

    Computes the per-parameter constraint slack ``f`` (minimum over
    rows of ``(1 - F_j x_s - G_j u_s) / c_j``), its minimum over the
    hypercube, the uncertainty level ``w`` at the setpoint, its maximum
    over the hypercube (both extrema are attained at vertices because f
    is concave and w is convex along the affine steady-input map), and
    verifies

        eta * w_max + d_bar <= f_min * (1 - rho_bar - eta * L_B).

    ``rho_bar`` defaults to the offline value; pass the current rate
    when re-deriving the terminal set mid-run after the hypercube has
    shrunk.  The constraint rows come from ``Z`` if given, otherwise
    from the constants' metadata (stored by :func:`compute_constants`).

    Raises
    ------
    TerminalInfeasibleError
        Condition violated (all four quantities attached), ``x_s`` not
        a steady state, or ``x_s`` outside the tightenable constraints.
    """
    if rho_bar is None:
        rho_bar = constants.rho_bar
    x_s = np.atleast_1d(np.asarray(x_s, dtype=float))
    if Z is not None:
        F = np.atleast_2d(np.asarray(Z.F, dtype=float))
        G = np.atleast_2d(np.asarray(Z.G, dtype=float))
    elif "F" in constants.meta and "G" in constants.meta:
        F = np.array(constants.meta["F"], dtype=float)
        G = np.array(constants.meta["G"], dtype=float)
    else:
        raise ValueError("constraint rows unavailable: pass Z or build the "
                         "constants with compute_constants")
    u_map = steady_input_map(model, x_s)
    eta = Theta.eta
    c = constants.c
    f_min = np.inf
    w_max = 0.0
    for th in Theta.vertices():
        u_s = u_map(th)
        numer = 1.0 - F @ x_s - G @ u_s
        if np.any(numer < -1e-12):
            raise TerminalInfeasibleError(
                "setpoint violates the constraints at a parameter vertex",
                x_s=x_s, theta=np.asarray(th, dtype=float),
                worst_row=int(np.argmin(numer)))
        f_th = np.inf
        for j in range(c.shape[0]):
            # rows the tube cannot reach impose no slack requirement
            if c[j] > 1e-12:
                f_th = min(f_th, numer[j] / c[j])
            elif numer[j] < -1e-12:
                f_th = -np.inf
        f_min = min(f_min, f_th)
        w_max = max(w_max, w_eta(model, constants.tube, x_s, u_s, 1.0))
    lhs = eta * w_max + constants.d_bar
    rhs = f_min * (1.0 - rho_bar - eta * constants.L_B)
    if not np.isfinite(f_min) or lhs > rhs:
        raise TerminalInfeasibleError(
            "tracking terminal condition violated: eta*w_max + d_bar = %.4f "
            "> f_min*(1 - rho - eta*L_B) = %.4f (f_min=%.4f, w_max=%.4f)"
            % (lhs, rhs, f_min, w_max),
            f_min=f_min, w_max=w_max, lhs=lhs, rhs=rhs)
    return TerminalSet(kind="tracking", c_max=constants.c_max,
                       f_lower=float(f_min), x_s=x_s, u_s_map=u_map,
                       meta={"w_max": w_max, "lhs": lhs, "rhs": rhs,
                             "slack": rhs - lhs})
