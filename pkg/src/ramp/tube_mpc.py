"""Online tube controller: condensed QP, candidate shifting, tube variants.

Each control step solves one quadratic program over the input sequence
and the per-stage uncertainty bounds.  Two trajectories are predicted
from the measured state: a nominal one rolled out at the hypercube
center, which carries the tightened constraints and the tube, and a
point-estimate one rolled out at the least-squares estimate, which
carries the cost.  The tube is a scalar scaling of a fixed polytope
around the nominal trajectory; its growth per stage is a decision
variable bounded below by the uncertainty at the predicted point, so
the whole program stays linear-quadratic.

States and tube sizes are eliminated by forward substitution, leaving a
small dense program.  After a solve the stored solution is re-tightened
by propagating the uncertainty bounds at equality, which never
increases any tube size and leaves the cost unchanged.

The alternative propagation formulas used for benchmarking (per-row
disturbance bounds inside the maximum, the cheaper split bound through
the origin, and the per-step scaling-matrix programs) are implemented
as standalone propagators over a fixed trajectory, plus one comparison
driver that runs all of them along the same plan.
"""

import numpy as np
from dataclasses import dataclass

from . import geometry
from .model import eval_dynamics, regressor
from .offline import contraction_rate, contraction_rate_fast, w_eta
from .solvers import LinearProgram, QuadraticProgram, solve_lp, solve_qp

__all__ = [
    "FORMULATIONS",
    "MPCConfig",
    "TubeSolution",
    "CandidateSolution",
    "QPInfeasibleError",
    "qp_accounting",
    "build_qp",
    "solve_step",
    "solution_residuals",
    "candidate",
    "contraction_at",
    "tube_sizes_w2",
    "tube_sizes_w1",
    "tube_sizes_w3",
    "tube_sizes_homothetic",
    "tube_comparison",
]

FORMULATIONS = ("w2", "w1", "w3")


class QPInfeasibleError(RuntimeError):
    """The per-step program could not be solved; carries the program."""

    def __init__(self, message, qp=None, result=None):
        super().__init__(message)
        self.qp = qp
        self.result = result


@dataclass(frozen=True, eq=False)
class MPCConfig:
    """Everything fixed across control steps.

    ``formulation`` selects the uncertainty bound family: ``"w2"`` is
    the default scalar-disturbance bound, ``"w1"`` moves the per-row
    disturbance bounds inside the maximum, ``"w3"`` uses the cheaper
    split bound with an auxiliary per-stage state-extent variable.
    ``backend`` names the QP solver; the default is the faster of the
    available dense interfaces on programs of this family's size
    (tens of variables, around a thousand rows).
    """

    model: object
    N: int
    Q: np.ndarray
    R: np.ndarray
    constants: object
    terminal: object
    formulation: str = "w2"
    backend: str = "cvxopt"

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon N must be at least 1")
        if self.formulation not in FORMULATIONS:
            raise ValueError("formulation must be one of %r" % (FORMULATIONS,))
        Q = np.asarray(self.Q, dtype=float)
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        for name, M in (("Q", Q), ("R", R)):
            try:
                np.linalg.cholesky(0.5 * (M + M.T))
            except np.linalg.LinAlgError:
                raise ValueError("%s must be positive definite" % name)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    def workspace(self):
        """Step-independent precomputed arrays, built once per config."""
        ws = getattr(self, "_ws", None)
        if ws is None:
            ws = _Workspace(self)
            object.__setattr__(self, "_ws", ws)
        return ws


@dataclass(frozen=True, eq=False)
class TubeSolution:
    """One optimal (or re-tightened) solution of the per-step program.

    ``xbar``/``xhat`` hold N+1 states row-wise, ``v`` the N feedforward
    inputs, ``s`` the N+1 tube sizes with ``s[0] = 0``, ``w`` the N
    per-stage uncertainty bounds, and ``objective`` the point-estimate
    tracking cost.
    """

    xbar: np.ndarray
    xhat: np.ndarray
    v: np.ndarray
    s: np.ndarray
    w: np.ndarray
    objective: float


@dataclass(frozen=True, eq=False)
class CandidateSolution(TubeSolution):
    """A shifted solution plus the auxiliary tube that certifies it.

    ``s_tilde[k]`` bounds ``max_i H_i (xbar[k] - xbar_prev[k+1])``, the
    drift between this candidate and the previous optimum.
    ``x_prev_ext``/``s_prev_ext`` extend the previous plan one stage
    past its horizon with the terminal controller, so nestedness of the
    candidate tube inside the previous one can be checked at every
    stage including the last.
    """

    s_tilde: np.ndarray = None
    x_prev_ext: np.ndarray = None
    s_prev_ext: float = None


class _Workspace:
    """Arrays that depend only on the configuration, not on the step."""

    def __init__(self, config):
        model = config.model
        constants = config.constants
        K = constants.K
        H = constants.tube.H
        n, m, p = model.n, model.m, model.p
        N = int(config.N)

        self.K = K
        self.H = H
        self.r = H.shape[0]
        self.n, self.m, self.p, self.N = n, m, p, N
        self.vertices = (geometry.vertices_2d(constants.tube)
                         if n == 2 else None)

        # corner directions of the unit parameter hypercube
        corners = np.empty((2 ** p, p))
        for mask in range(2 ** p):
            corners[mask] = [0.5 if mask & (1 << i) else -0.5
                             for i in range(p)]
        self.corners = corners
        # per corner: tube rows applied to the parameter-direction maps
        self.HA = np.empty((2 ** p, self.r, n))
        self.HB = np.empty((2 ** p, self.r, m))
        for l, e in enumerate(corners):
            MA = sum((e[c] * (model.A[c + 1] + model.B[c + 1] @ K)
                      for c in range(p)), np.zeros((n, n)))
            MB = sum((e[c] * model.B[c + 1] for c in range(p)),
                     np.zeros((n, m)))
            self.HA[l] = H @ MA
            self.HB[l] = H @ MB

        # corner subset for the scalar-bound family: when every tube
        # row has an exactly negated partner, the row -H_i at corner e
        # duplicates the row H_i at corner -e, so one corner of each
        # +/- pair already carries the complete constraint set
        negated = {tuple(row): idx for idx, row in enumerate((-H).tolist())}
        paired = all(tuple(row) in negated for row in H.tolist())
        if paired and p >= 1:
            self.w2_corners = np.array([l for l in range(2 ** p)
                                        if not l & 1])
        else:
            self.w2_corners = np.arange(2 ** p)

        # parameter coordinates that reach the input matrix
        self.b_coords = [c for c in range(p)
                         if np.any(model.B[c + 1] != 0.0)]
        self.p_B = len(self.b_coords)
        reduced = []
        for mask in range(2 ** self.p_B):
            MB = np.zeros((n, m))
            for i, c in enumerate(self.b_coords):
                MB += (0.5 if mask & (1 << i) else -0.5) * model.B[c + 1]
            reduced.append(H @ MB)
        self.HB_reduced = np.stack(reduced)

        F = np.array(constants.meta["F"], dtype=float)
        G = np.array(constants.meta["G"], dtype=float)
        self.F, self.G = F, G
        self.FGK = F + G @ K
        self.q = F.shape[0]
        self.d_rows = np.asarray(constants.meta.get("d_rows", []),
                                 dtype=float)

        self.Qblk = np.kron(np.eye(N), config.Q)
        self.Rblk = np.kron(np.eye(N), config.R)
        self.Kblk = np.kron(np.eye(N), K)
        self.P = constants.P

    def rollout_maps(self, A_cl, B):
        """Stacked state maps: states = offset_map @ x_t + input_map @ V."""
        n, m, N = self.n, self.m, self.N
        powers = [np.eye(n)]
        for _ in range(N):
            powers.append(A_cl @ powers[-1])
        offset = np.vstack(powers)
        inputs = np.zeros(((N + 1) * n, N * m))
        for k in range(1, N + 1):
            for j in range(k):
                inputs[k * n:(k + 1) * n, j * m:(j + 1) * m] = \
                    powers[k - 1 - j] @ B
        return offset, inputs

    def size_map(self, rate):
        """Lower-triangular map from per-stage growth to tube sizes."""
        N = self.N
        L = np.zeros((N + 1, N))
        for k in range(1, N + 1):
            for j in range(k):
                L[k, j] = rate ** (k - 1 - j)
        return L

    def require_d_rows(self):
        if self.d_rows.shape[0] != self.r:
            raise ValueError("per-row disturbance bounds unavailable: "
                             "rebuild the constants or pass dist_set")
        return self.d_rows


def qp_accounting(formulation, N, r, p, p_B=0, q=6, m=1, r_v=None):
    """Decision-variable and stage-row counts of the condensed program.

    Returns ``(variables, rows)`` under the conventional bookkeeping
    for this construction: the terminal state pair counts as two extra
    variables, and the row count covers the per-stage families only
    (uncertainty lower bounds plus tightened state-input rows);
    terminal membership rows are excluded.  :func:`build_qp` eliminates
    the bookkeeping variables by substitution and appends the terminal
    rows, so the assembled matrix is slightly narrower and taller;
    both shapes are intentional.

    ``"w3"`` with no parameter-dependent input matrix substitutes the
    uncertainty bound away entirely, leaving only the r state-extent
    epigraph rows per stage; with ``p_B > 0`` it keeps the bound rows,
    giving ``r * (1 + 2**p_B)`` rows per stage.  ``"nominal"`` drops
    the tube.  ``"homothetic"`` needs the tube vertex count ``r_v``
    and counts the per-stage scaling matrices (``r * r_v * 2p`` extra
    variables and ``3 * r * r_v`` extra rows per stage).
    """
    if formulation in ("w2", "w1"):
        return (N * (m + 1) + 2, N * r * 2 ** p + N * q)
    if formulation == "w3":
        if p_B == 0:
            return (N * (m + 1) + 2, N * r + N * q)
        return (N * (m + 2) + 2, N * r * (1 + 2 ** p_B) + N * q)
    if formulation == "nominal":
        return (N * m, N * q)
    if formulation == "homothetic":
        if r_v is None:
            raise ValueError("homothetic accounting needs the tube vertex "
                             "count r_v")
        return (N * (m + 1 + r * r_v * 2 * p) + 2,
                N * (q + 3 * r * r_v))
    raise ValueError("unknown formulation %r" % (formulation,))


def _setpoint(config, theta):
    """Stage references: state setpoint and matching steady input."""
    terminal = config.terminal
    x_s = np.asarray(terminal.x_s, dtype=float)
    if terminal.u_s_map is not None:
        u_s = np.atleast_1d(np.asarray(terminal.u_s_map(theta), dtype=float))
    else:
        u_s = np.zeros(config.model.m)
    return x_s, u_s


def build_qp(config, x_t, Theta_t, theta_hat, rho_bar_t):
    """Assemble the per-step program at the current estimates.

    Decision vector layout: the N feedforward inputs first, then the N
    per-stage auxiliaries (uncertainty bounds for ``"w2"``/``"w1"``,
    state-extent epigraph variables for ``"w3"``, plus the bounds again
    when an input matrix depends on the parameters).  States and tube
    sizes are substituted out.  Inequality rows in order: per-stage
    uncertainty lower bounds, tightened state-input rows, terminal
    membership rows.
    """
    qp, _ = _assemble(config, x_t, Theta_t, theta_hat, rho_bar_t)
    return qp


def _assemble(config, x_t, Theta_t, theta_hat, rho_bar_t):
    ws = config.workspace()
    model = config.model
    constants = config.constants
    N, n, m, r = ws.N, ws.n, ws.m, ws.r
    x_t = np.atleast_1d(np.asarray(x_t, dtype=float))
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    if x_t.shape[0] != n:
        raise ValueError("state must have dimension %d" % n)
    if theta_hat.shape[0] != ws.p or Theta_t.p != ws.p:
        raise ValueError("parameter vectors must have dimension %d" % ws.p)
    eta = float(Theta_t.eta)
    theta_bar = Theta_t.center
    L_B = constants.L_B
    d_bar = constants.d_bar
    rho = float(rho_bar_t)

    A_bar, B_bar = eval_dynamics(model, theta_bar)
    A_hat, B_hat = eval_dynamics(model, theta_hat)
    bar_off, bar_in = ws.rollout_maps(A_bar + B_bar @ ws.K, B_bar)
    hat_off, hat_in = ws.rollout_maps(A_hat + B_hat @ ws.K, B_hat)

    # cost on the point-estimate trajectory, shifted to the setpoint
    x_s, u_s = _setpoint(config, theta_hat)
    stage_rows = slice(0, N * n)
    Gx = hat_in
    ax = hat_off @ x_t - np.tile(x_s, N + 1)
    Gu = np.eye(N * m) + ws.Kblk @ hat_in[stage_rows]
    au = ws.Kblk @ (hat_off @ x_t)[stage_rows] - np.tile(u_s, N)
    Qfull = np.zeros(((N + 1) * n, (N + 1) * n))
    Qfull[:N * n, :N * n] = ws.Qblk
    Qfull[N * n:, N * n:] = ws.P
    Hv = 2.0 * (Gx.T @ Qfull @ Gx + Gu.T @ ws.Rblk @ Gu)
    gv = 2.0 * (Gx.T @ Qfull @ ax + Gu.T @ ws.Rblk @ au)
    cost_const = float(ax @ Qfull @ ax + au @ ws.Rblk @ au)

    # auxiliary-variable layout and tube-size substitution
    form = config.formulation
    if form in ("w2", "w1"):
        if form == "w1":
            ws.require_d_rows()
        n_aux = N
        s_of_aux = ws.size_map(rho)
        s_const = np.zeros(N + 1)
    else:
        L = ws.size_map(rho + eta * L_B)
        if ws.p_B == 0:
            n_aux = N
            s_of_aux = L * (eta * L_B)
            s_const = L @ np.full(N, d_bar)
        else:
            n_aux = 2 * N
            s_of_aux = np.hstack([np.zeros((N + 1, N)), ws.size_map(rho)])
            s_const = np.zeros(N + 1)

    n_z = N * m + n_aux
    blocks = []
    rhs = []
    bar_states = bar_off @ x_t
    # per-stage views: inputs-to-state maps and offset states for k < N
    bar3 = bar_in[:N * n].reshape(N, n, N * m)
    off2 = bar_states[:N * n].reshape(N, n)
    ks = np.arange(N)
    growth = eta * L_B * s_of_aux[:N]
    drift = eta * L_B * s_const[:N]

    if form in ("w2", "w1"):
        # w_k at least the uncertainty at the predicted point:
        # eta * (tube row of D(xbar_k, ubar_k) at corner l) plus
        # eta*L_B*s_k plus the disturbance bound (per-row for "w1");
        # the scalar bound drops exactly duplicated (row, corner)
        # pairs, the per-row bound keeps every corner
        if form == "w2":
            HA, HB = ws.HA[ws.w2_corners], ws.HB[ws.w2_corners]
        else:
            HA, HB = ws.HA, ws.HB
        C = HA.shape[0]
        A_w = np.empty((C, N, r, n_z))
        A_w[..., :N * m] = eta * (HA[:, None] @ bar3[None])
        for j in range(m):
            # fancy-index pairs (corner slice kept) address shape (N, C, r)
            A_w[:, ks, :, ks * m + j] += eta * HB[None, :, :, j]
        A_w[..., N * m:] = np.broadcast_to(growth[:, None, :],
                                           (C, N, r, n_aux))
        A_w[:, ks, :, N * m + ks] -= 1.0
        base = -d_bar if form == "w2" else -ws.d_rows[None, None, :]
        b_w = (base - eta * np.einsum("crn,kn->ckr", HA, off2)
               - drift[None, :, None])
        blocks.append(A_w.reshape(C * N * r, n_z))
        rhs.append(np.broadcast_to(b_w, (C, N, r)).reshape(-1))
    else:
        # state-extent epigraph: m_k at least H_i xbar_k
        A_e = np.zeros((N, r, n_z))
        A_e[..., :N * m] = ws.H[None] @ bar3
        A_e[ks, :, N * m + ks] = -1.0
        blocks.append(A_e.reshape(N * r, n_z))
        rhs.append((-(off2 @ ws.H.T)).reshape(-1))
        if ws.p_B > 0:
            # w_k at least d_bar + eta*(L_B*(s_k + m_k) + input-term row)
            C_B = ws.HB_reduced.shape[0]
            A_w = np.zeros((C_B, N, r, n_z))
            for j in range(m):
                A_w[:, ks, :, ks * m + j] = eta * ws.HB_reduced[None, :, :, j]
            A_w[..., N * m:] = np.broadcast_to(growth[:, None, :],
                                               (C_B, N, r, n_aux))
            A_w[:, ks, :, N * m + ks] += eta * L_B
            A_w[:, ks, :, N * m + N + ks] -= 1.0
            blocks.append(A_w.reshape(C_B * N * r, n_z))
            rhs.append(np.broadcast_to(-d_bar - drift[:, None],
                                       (C_B, N, r)).reshape(-1))

    # tightened stage rows: F xbar_k + G ubar_k + c s_k <= 1
    A_s = np.empty((N, ws.q, n_z))
    A_s[..., :N * m] = ws.FGK[None] @ bar3
    for j in range(m):
        A_s[ks, :, ks * m + j] += ws.G[:, j]
    A_s[..., N * m:] = constants.c[None, :, None] * s_of_aux[:N, None, :]
    blocks.append(A_s.reshape(N * ws.q, n_z))
    rhs.append((1.0 - off2 @ ws.FGK.T
                - np.outer(s_const[:N], constants.c)).reshape(-1))

    # terminal membership: s_N + H_i (xbar_N - x_s) <= f_lower
    xN_in = bar_in[N * n:]
    xN_off = bar_states[N * n:]
    A_T = np.empty((r, n_z))
    A_T[:, :N * m] = ws.H @ xN_in
    A_T[:, N * m:] = s_of_aux[N]
    blocks.append(A_T)
    rhs.append(config.terminal.f_lower - ws.H @ (xN_off - x_s)
               - s_const[N])

    A_ineq = np.vstack(blocks)
    b_ineq = np.concatenate(rhs)
    H_full = np.zeros((n_z, n_z))
    H_full[:N * m, :N * m] = Hv
    g_full = np.zeros(n_z)
    g_full[:N * m] = gv
    qp = QuadraticProgram(H_full, g_full, ineq=(A_ineq, b_ineq))
    info = {
        "cost_const": cost_const,
        "eta": eta,
        "rho": rho,
        "theta_bar": theta_bar,
        "theta_hat": theta_hat,
        "x_t": x_t,
    }
    return qp, info


def _tight_bound(config, x, u, s, eta):
    """Exact per-stage uncertainty lower bound for the configured family."""
    model = config.model
    constants = config.constants
    tube = constants.tube
    L_B = constants.L_B
    if config.formulation == "w2":
        return (constants.d_bar + eta * L_B * s
                + w_eta(model, tube, x, u, eta))
    if config.formulation == "w1":
        ws = config.workspace()
        d_rows = ws.require_d_rows()
        D = regressor(model, x, u)
        vals = eta * (tube.H @ D @ ws.corners.T) + d_rows[:, None]
        return float(eta * L_B * s + np.max(vals))
    # split bound: state contribution through the tube extent at the origin
    ws = config.workspace()
    v = u - ws.K @ x
    extent = float(np.max(tube.H @ x))
    return (constants.d_bar + eta * L_B * (s + extent)
            + w_eta(model, tube, np.zeros(model.n), v, eta))


def _roll_solution(config, x_t, Theta_t, theta_hat, rho, v, objective=None):
    """Forward-substitute an input plan: states, tight bounds, cost."""
    model = config.model
    ws = config.workspace()
    N = ws.N
    eta = float(Theta_t.eta)
    A_bar, B_bar = eval_dynamics(model, Theta_t.center)
    A_hat, B_hat = eval_dynamics(model, np.asarray(theta_hat, dtype=float))
    v = np.asarray(v, dtype=float).reshape(N, ws.m)
    xbar = np.empty((N + 1, ws.n))
    xhat = np.empty((N + 1, ws.n))
    xbar[0] = xhat[0] = np.asarray(x_t, dtype=float)
    s = np.zeros(N + 1)
    w = np.zeros(N)
    for k in range(N):
        ubar = v[k] + ws.K @ xbar[k]
        w[k] = _tight_bound(config, xbar[k], ubar, s[k], eta)
        s[k + 1] = rho * s[k] + w[k]
        xbar[k + 1] = A_bar @ xbar[k] + B_bar @ ubar
        xhat[k + 1] = A_hat @ xhat[k] + B_hat @ (v[k] + ws.K @ xhat[k])
    if objective is None:
        objective = _trajectory_cost(config, xhat, v, theta_hat)
    return TubeSolution(xbar=xbar, xhat=xhat, v=v, s=s, w=w,
                        objective=float(objective))


def _trajectory_cost(config, xhat, v, theta_hat):
    """Tracking cost of the point-estimate trajectory."""
    ws = config.workspace()
    x_s, u_s = _setpoint(config, theta_hat)
    total = 0.0
    for k in range(ws.N):
        dx = xhat[k] - x_s
        du = v[k] + ws.K @ xhat[k] - u_s
        total += dx @ config.Q @ dx + du @ config.R @ du
    dN = xhat[ws.N] - x_s
    return float(total + dN @ ws.P @ dN)


def solve_step(config, x_t, Theta_t, theta_hat, rho_bar_t):
    """One control step: solve, re-tighten, return the applied input.

    Returns ``(u_t, TubeSolution)`` with ``u_t`` the first feedforward
    input plus the feedback term at the measured state.  The stored
    solution has every uncertainty bound at its exact lower bound given
    the optimal input sequence, which never loosens any constraint and
    leaves the cost unchanged.

    Raises
    ------
    QPInfeasibleError
        The program was infeasible or the backend failed; the error
        carries the assembled program and the solver result.
    """
    qp, info = _assemble(config, x_t, Theta_t, theta_hat, rho_bar_t)
    result = solve_qp(qp, backend=config.backend)
    if not result.ok:
        raise QPInfeasibleError(
            "per-step program returned status %r" % result.status,
            qp=qp, result=result)
    ws = config.workspace()
    v = result.primal[:ws.N * ws.m].reshape(ws.N, ws.m)
    sol = _roll_solution(config, info["x_t"], Theta_t, info["theta_hat"],
                         info["rho"], v)
    u_t = v[0] + ws.K @ info["x_t"]
    return u_t, sol


def solution_residuals(config, sol, x_t, Theta_t, theta_hat, rho_bar_t):
    """Worst violation of each constraint family, evaluated directly.

    This is an independent check route: every family is evaluated from
    the stored trajectories with the plain formulas, not through the
    condensed matrices.  Returns a dict of per-family maxima; all
    values below a small tolerance mean the solution is feasible for
    the program at these estimates.
    """
    ws = config.workspace()
    constants = config.constants
    N = ws.N
    eta = float(Theta_t.eta)
    A_bar, B_bar = eval_dynamics(config.model, Theta_t.center)
    A_hat, B_hat = eval_dynamics(config.model,
                                 np.asarray(theta_hat, dtype=float))
    x_t = np.asarray(x_t, dtype=float)
    dyn = max(float(np.max(np.abs(sol.xbar[0] - x_t))),
              float(np.max(np.abs(sol.xhat[0] - x_t))),
              abs(float(sol.s[0])))
    w_gap = -np.inf
    stage = -np.inf
    for k in range(N):
        ubar = sol.v[k] + ws.K @ sol.xbar[k]
        uhat = sol.v[k] + ws.K @ sol.xhat[k]
        dyn = max(dyn, float(np.max(np.abs(
            sol.xbar[k + 1] - A_bar @ sol.xbar[k] - B_bar @ ubar))))
        dyn = max(dyn, float(np.max(np.abs(
            sol.xhat[k + 1] - A_hat @ sol.xhat[k] - B_hat @ uhat))))
        dyn = max(dyn, abs(float(
            sol.s[k + 1] - rho_bar_t * sol.s[k] - sol.w[k])))
        bound = _tight_bound(config, sol.xbar[k], ubar, sol.s[k], eta)
        w_gap = max(w_gap, float(bound - sol.w[k]))
        stage = max(stage, float(np.max(
            ws.F @ sol.xbar[k] + ws.G @ ubar
            + constants.c * sol.s[k] - 1.0)))
    terminal = float(np.max(
        sol.s[N] + ws.H @ (sol.xbar[N] - config.terminal.x_s)
        - config.terminal.f_lower))
    return {"dynamics": dyn, "w_bound": w_gap, "stage": stage,
            "terminal": terminal}


def contraction_at(config, theta):
    """Tube contraction rate of the closed loop at one parameter."""
    ws = config.workspace()
    A, B = eval_dynamics(config.model, theta)
    A_cl = A + B @ ws.K
    if ws.vertices is not None:
        return contraction_rate_fast(ws.H, ws.vertices, A_cl)
    return contraction_rate(config.constants.tube, A_cl)


def candidate(prev, Theta_next, Theta_prev, x_next, config):
    """Shift the previous optimum one stage and certify it.

    The previous plan is extended by one stage with the terminal
    controller, shifted, and rolled out from the new measured state at
    the new hypercube center.  The auxiliary sizes ``s_tilde`` bound
    the drift between the shifted nominal trajectory and the previous
    optimal one; together with the tube recursion they certify that
    the candidate satisfies every constraint of the next step's
    program.

    Raises
    ------
    ValueError
        ``Theta_next`` is not contained in ``Theta_prev``.
    """
    tol = 1e-9
    d_eta = float(Theta_prev.eta) - float(Theta_next.eta)
    center_shift = float(np.max(
        np.abs(Theta_next.center - Theta_prev.center), initial=0.0))
    if d_eta < -tol or center_shift > d_eta / 2 + tol:
        raise ValueError("the updated hypercube must be contained in the "
                         "previous one")
    ws = config.workspace()
    model = config.model
    constants = config.constants
    N = ws.N
    eta_prev = float(Theta_prev.eta)
    rho_prev = contraction_at(config, Theta_prev.center)
    rho_next = contraction_at(config, Theta_next.center)

    # one-stage extension of the previous plan: the terminal controller
    # holds the setpoint, so the extra feedforward input is constant
    x_s, u_hold = _setpoint(config, Theta_prev.center)
    v_ext = u_hold - ws.K @ x_s
    A_prev, B_prev = eval_dynamics(model, Theta_prev.center)
    u_ext = v_ext + ws.K @ prev.xbar[N]
    x_ext = A_prev @ prev.xbar[N] + B_prev @ u_ext
    w_ext = (constants.d_bar + eta_prev * constants.L_B * prev.s[N]
             + w_eta(model, constants.tube, prev.xbar[N], u_ext, eta_prev))
    s_ext = rho_prev * prev.s[N] + w_ext

    v_shift = np.vstack([prev.v[1:], v_ext[None, :]])
    shifted = _roll_solution(config, x_next, Theta_next,
                             Theta_next.center, rho_next, v_shift)

    # auxiliary tube: drift of the shifted plan from the previous
    # optimum, seeded by the first-stage tube size
    prev_states = np.vstack([prev.xbar, x_ext[None, :]])
    prev_inputs = np.vstack([prev.v, v_ext[None, :]])
    s_tilde = np.empty(N + 1)
    s_tilde[0] = prev.w[0]
    for k in range(N):
        u_prev = prev_inputs[k + 1] + ws.K @ prev_states[k + 1]
        s_tilde[k + 1] = rho_next * s_tilde[k] + w_eta(
            model, constants.tube, prev_states[k + 1], u_prev, d_eta)
    return CandidateSolution(xbar=shifted.xbar, xhat=shifted.xhat,
                             v=shifted.v, s=shifted.s, w=shifted.w,
                             objective=shifted.objective, s_tilde=s_tilde,
                             x_prev_ext=x_ext, s_prev_ext=float(s_ext))


def _stage_inputs(traj, K):
    return traj.v + traj.xbar[:-1] @ K.T


def tube_sizes_w2(traj, model, constants, eta, rho=None):
    """Tube sizes along a fixed plan, scalar disturbance bound."""
    if rho is None:
        rho = constants.rho_bar
    s = np.zeros(traj.v.shape[0] + 1)
    for k, (x, u) in enumerate(zip(traj.xbar[:-1],
                                   _stage_inputs(traj, constants.K))):
        w = (constants.d_bar + eta * constants.L_B * s[k]
             + w_eta(model, constants.tube, x, u, eta))
        s[k + 1] = rho * s[k] + w
    return s


def tube_sizes_w1(traj, model, constants, eta, rho=None, dist_set=None):
    """Tube sizes with per-row disturbance bounds inside the maximum.

    The per-row bounds come from the constants' metadata (stored when
    the constants were assembled) unless ``dist_set`` is given.
    """
    if rho is None:
        rho = constants.rho_bar
    tube = constants.tube
    if dist_set is not None:
        d_rows = np.array([geometry.support(dist_set.poly, row)
                           for row in tube.H])
    else:
        d_rows = np.asarray(constants.meta.get("d_rows", []), dtype=float)
        if d_rows.shape[0] != tube.H.shape[0]:
            raise ValueError("per-row disturbance bounds unavailable: "
                             "rebuild the constants or pass dist_set")
    p = model.p
    corners = np.empty((2 ** p, p))
    for mask in range(2 ** p):
        corners[mask] = [0.5 if mask & (1 << i) else -0.5 for i in range(p)]
    s = np.zeros(traj.v.shape[0] + 1)
    for k, (x, u) in enumerate(zip(traj.xbar[:-1],
                                   _stage_inputs(traj, constants.K))):
        D = regressor(model, x, u)
        vals = eta * (tube.H @ D @ corners.T) + d_rows[:, None]
        w = eta * constants.L_B * s[k] + float(np.max(vals))
        s[k + 1] = rho * s[k] + w
    return s


def tube_sizes_w3(traj, model, constants, eta, rho=None):
    """Tube sizes with the split bound through the origin."""
    if rho is None:
        rho = constants.rho_bar
    K = constants.K
    tube = constants.tube
    s = np.zeros(traj.v.shape[0] + 1)
    for k, (x, u) in enumerate(zip(traj.xbar[:-1], _stage_inputs(traj, K))):
        v = u - K @ x
        w = (constants.d_bar
             + eta * constants.L_B * (s[k] + float(np.max(tube.H @ x)))
             + w_eta(model, tube, np.zeros(model.n), v, eta))
        s[k + 1] = rho * s[k] + w
    return s


def tube_sizes_homothetic(traj, model, constants, Theta, dist_set):
    """Tube sizes from per-step scaling-matrix programs.

    At each stage one linear program finds the smallest next size such
    that nonnegative row matrices certify, for every tube row and
    every tube vertex, that the propagated uncertain state stays
    inside the scaled tube around the given plan.  Needs a planar
    state so the tube vertices can be enumerated.

    Raises
    ------
    RuntimeError
        A per-step program failed, which valid data cannot produce.
    """
    if model.n != 2:
        raise ValueError("vertex enumeration requires a planar state")
    tube = constants.tube
    K = constants.K
    Zv = geometry.vertices_2d(tube)
    H = tube.H
    r, V, p = H.shape[0], Zv.shape[0], model.p
    d_rows = np.array([geometry.support(dist_set.poly, row) for row in H])
    A0_cl = model.A[0] + model.B[0] @ K
    theta_rows = np.vstack([np.eye(p), -np.eye(p)])
    half = float(Theta.eta) / 2.0
    theta_rhs = np.concatenate([Theta.center + half, -Theta.center + half])
    # per-vertex data reused at every stage
    Dz = [regressor(model, z, K @ z) for z in Zv]
    HAz = H @ A0_cl @ Zv.T

    inputs = _stage_inputs(traj, K)
    n_lam = r * V * 2 * p
    s = np.zeros(traj.v.shape[0] + 1)
    for k in range(traj.v.shape[0]):
        x, u = traj.xbar[k], inputs[k]
        x_plus = traj.xbar[k + 1]
        Dxu = regressor(model, x, u)
        base = H @ (model.A[0] @ x + model.B[0] @ u - x_plus)
        E = np.zeros((r * V * p, n_lam + 1))
        f = np.zeros(r * V * p)
        A_in = np.zeros((r * V, n_lam + 1))
        b_in = np.zeros(r * V)
        for i in range(r):
            for j in range(V):
                blk = (i * V + j) * 2 * p
                row0 = (i * V + j) * p
                E[row0:row0 + p, blk:blk + 2 * p] = theta_rows.T
                f[row0:row0 + p] = H[i] @ (Dxu + s[k] * Dz[j])
                A_in[i * V + j, blk:blk + 2 * p] = theta_rhs
                A_in[i * V + j, -1] = -1.0
                b_in[i * V + j] = -(base[i] + s[k] * HAz[i, j] + d_rows[i])
        nonneg = np.hstack([-np.eye(n_lam), np.zeros((n_lam, 1))])
        A_full = np.vstack([A_in, nonneg])
        b_full = np.concatenate([b_in, np.zeros(n_lam)])
        obj = np.zeros(n_lam + 1)
        obj[-1] = 1.0
        res = solve_lp(LinearProgram(obj, ineq=(A_full, b_full), eq=(E, f)))
        if not res.ok:
            raise RuntimeError("scaling-matrix propagation failed at "
                               "stage %d: %s" % (k, res.status))
        s[k + 1] = max(float(res.primal[-1]), 0.0)
    return s


def tube_comparison(config, x_t, Theta_t, theta_hat, rho_bar_t, dist_set):
    """Solve one step and propagate every tube variant along its plan.

    Returns ``(solution, sizes)`` where ``sizes`` maps variant names to
    full tube-size vectors over the horizon, all computed along the
    same optimal plan so only the propagation formulas differ.
    """
    _, sol = solve_step(config, x_t, Theta_t, theta_hat, rho_bar_t)
    model = config.model
    constants = config.constants
    eta = float(Theta_t.eta)
    sizes = {
        "w2": tube_sizes_w2(sol, model, constants, eta, rho=rho_bar_t),
        "w1": tube_sizes_w1(sol, model, constants, eta, rho=rho_bar_t,
                            dist_set=dist_set),
        "w3": tube_sizes_w3(sol, model, constants, eta, rho=rho_bar_t),
        "homothetic": tube_sizes_homothetic(sol, model, constants,
                                            Theta_t, dist_set),
    }
    return sol, sizes
