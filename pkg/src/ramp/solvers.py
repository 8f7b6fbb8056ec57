"""Linear and quadratic programming behind one small interface.

Every optimization problem in the package is stated declaratively as a
:class:`LinearProgram` or :class:`QuadraticProgram` and handed to
:func:`solve_lp` / :func:`solve_qp`.  Linear programs run on the HiGHS
backend shipped with scipy; quadratic programs run on cvxopt's interior
point method by default, with OSQP available as an alternative.  A zero
Hessian is accepted by :func:`solve_qp`, so LPs can be routed through the
QP backend when a single backend is desired.

Semidefinite solving is an optional capability: :func:`require_sdp`
returns the cvxpy module when a conic backend is importable and raises
:class:`SolverUnavailableError` otherwise, so the rest of the package can
run without it.
"""

import numpy as np
from dataclasses import dataclass, field
from typing import Optional

__all__ = [
    "LinearProgram",
    "QuadraticProgram",
    "SolveResult",
    "SolverUnavailableError",
    "solve_lp",
    "solve_qp",
    "require_sdp",
    "solve_sdp_problem",
]

# Statuses reported by both solve_lp and solve_qp.
OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"

FEAS_TOL = 1e-8
STATIONARITY_TOL = 1e-6


class SolverUnavailableError(RuntimeError):
    """An optional solver capability was requested but is not importable."""


@dataclass
class LinearProgram:
    """min/max ``objective @ x`` subject to ``A x <= b`` and ``E x = f``.

    Parameters
    ----------
    objective : ndarray, shape (n,)
        Cost vector.
    ineq : tuple (A, b) or None
        Inequality system ``A x <= b``.
    eq : tuple (E, f) or None
        Equality system ``E x = f``.
    sense : str
        Either ``"min"`` or ``"max"``.
    """

    objective: np.ndarray
    ineq: Optional[tuple] = None
    eq: Optional[tuple] = None
    sense: str = "min"

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        n = self.objective.shape[0]
        if self.ineq is not None:
            A, b = self.ineq
            A = np.asarray(A, dtype=float)
            b = np.asarray(b, dtype=float)
            if A.ndim != 2 or A.shape[1] != n or A.shape[0] != b.shape[0]:
                raise ValueError("inequality dimensions inconsistent")
            if not np.all(np.isfinite(b)):
                raise ValueError("inequality right-hand side must be finite")
            self.ineq = (A, b)
        if self.eq is not None:
            E, f = self.eq
            E = np.asarray(E, dtype=float)
            f = np.asarray(f, dtype=float)
            if E.ndim != 2 or E.shape[1] != n or E.shape[0] != f.shape[0]:
                raise ValueError("equality dimensions inconsistent")
            if not np.all(np.isfinite(f)):
                raise ValueError("equality right-hand side must be finite")
            self.eq = (E, f)


@dataclass
class QuadraticProgram:
    """min ``0.5 x' H x + g' x`` subject to ``A x <= b`` and ``E x = f``.

    The Hessian must be symmetric (within 1e-10) and positive
    semidefinite (eigenvalues above -1e-8); a zero matrix is accepted.
    """

    hessian: np.ndarray
    linear: np.ndarray
    ineq: Optional[tuple] = None
    eq: Optional[tuple] = None

    def __post_init__(self):
        H = np.asarray(self.hessian, dtype=float)
        g = np.asarray(self.linear, dtype=float)
        if H.shape != (g.shape[0], g.shape[0]):
            raise ValueError("hessian/linear dimensions inconsistent")
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-10:
            raise ValueError("hessian must be symmetric")
        # Cheap PSD screen; exact for the diagonal-plus-Gram matrices used here.
        ev_min = float(np.linalg.eigvalsh(H)[0]) if H.size else 0.0
        if ev_min < -1e-8:
            raise ValueError("hessian must be positive semidefinite")
        self.hessian = H
        self.linear = g
        n = g.shape[0]
        for name in ("ineq", "eq"):
            sys = getattr(self, name)
            if sys is not None:
                M, v = sys
                M = np.asarray(M, dtype=float)
                v = np.asarray(v, dtype=float)
                if M.ndim != 2 or M.shape[1] != n or M.shape[0] != v.shape[0]:
                    raise ValueError("%s dimensions inconsistent" % name)
                setattr(self, name, (M, v))


@dataclass
class SolveResult:
    """Outcome of one solve.

    ``primal`` is present exactly when ``status == "optimal"``;
    ``objective`` then carries the optimal value in the problem's own
    sense (a maximization reports the maximum).
    """

    status: str
    primal: Optional[np.ndarray] = None
    objective: Optional[float] = None
    dual_ineq: Optional[np.ndarray] = None
    dual_eq: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.status == OPTIMAL


def solve_lp(lp, tol=1e-9):
    """Solve a linear program with the HiGHS backend.

    Parameters
    ----------
    lp : LinearProgram
    tol : float
        Primal/dual feasibility tolerance handed to the backend.

    Returns
    -------
    SolveResult
        Status is one of ``optimal``, ``infeasible``, ``unbounded`` or
        ``numerical-failure``; infeasibility and unboundedness are
        reported through the status, never by raising.
    """
    from scipy.optimize import linprog

    c = lp.objective if lp.sense == "min" else -lp.objective
    A_ub, b_ub = lp.ineq if lp.ineq is not None else (None, None)
    A_eq, b_eq = lp.eq if lp.eq is not None else (None, None)
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=(None, None),
        method="highs",
        options={"primal_feasibility_tolerance": tol,
                 "dual_feasibility_tolerance": tol},
    )
    if res.status == 0:
        x = np.asarray(res.x, dtype=float)
        obj = float(lp.objective @ x)
        dual_ineq = None
        dual_eq = None
        if res.ineqlin is not None and A_ub is not None:
            dual_ineq = -np.asarray(res.ineqlin.marginals, dtype=float)
        if res.eqlin is not None and A_eq is not None:
            dual_eq = -np.asarray(res.eqlin.marginals, dtype=float)
        return SolveResult(OPTIMAL, x, obj, dual_ineq, dual_eq)
    if res.status == 2:
        return SolveResult(INFEASIBLE)
    if res.status == 3:
        return SolveResult(UNBOUNDED)
    return SolveResult(NUMERICAL_FAILURE, extra={"message": res.message})


def _solve_qp_cvxopt(qp, tighten):
    from cvxopt import matrix, solvers as cvx_solvers

    opts = {"show_progress": False, "maxiters": 200,
            "abstol": 1e-9, "reltol": 1e-9, "feastol": 1e-9}
    if tighten:
        opts.update({"abstol": 1e-11, "reltol": 1e-11, "feastol": 1e-10})
    n = qp.linear.shape[0]
    P = matrix(qp.hessian)
    q = matrix(qp.linear)
    G = h = A = b = None
    if qp.ineq is not None:
        G = matrix(qp.ineq[0])
        h = matrix(qp.ineq[1])
    else:
        # coneqp needs at least one cone; a vacuous row keeps it well posed
        G = matrix(np.zeros((1, n)))
        h = matrix(np.ones(1))
    if qp.eq is not None:
        A = matrix(qp.eq[0])
        b = matrix(qp.eq[1])
    try:
        sol = cvx_solvers.qp(P, q, G, h, A, b, options=opts)
    except (ValueError, ArithmeticError) as exc:
        return SolveResult(NUMERICAL_FAILURE, extra={"message": str(exc)})
    status = sol["status"]
    if status == "optimal":
        x = np.array(sol["x"]).ravel()
        z = np.array(sol["z"]).ravel()
        y = np.array(sol["y"]).ravel() if A is not None else None
        obj = float(0.5 * x @ qp.hessian @ x + qp.linear @ x)
        return SolveResult(OPTIMAL, x, obj, z if qp.ineq is not None else None, y)
    if status in ("primal infeasible",):
        return SolveResult(INFEASIBLE)
    if status in ("dual infeasible",):
        return SolveResult(UNBOUNDED)
    return SolveResult(NUMERICAL_FAILURE, extra={"message": status})


def _solve_qp_osqp(qp, tighten):
    import osqp
    import scipy.sparse as sp

    n = qp.linear.shape[0]
    rows = []
    lbs = []
    ubs = []
    if qp.ineq is not None:
        rows.append(qp.ineq[0])
        lbs.append(np.full(qp.ineq[0].shape[0], -np.inf))
        ubs.append(qp.ineq[1])
    if qp.eq is not None:
        rows.append(qp.eq[0])
        lbs.append(qp.eq[1])
        ubs.append(qp.eq[1])
    if rows:
        A = sp.csc_matrix(np.vstack(rows))
        l = np.concatenate(lbs)
        u = np.concatenate(ubs)
    else:
        A = sp.csc_matrix((0, n))
        l = np.zeros(0)
        u = np.zeros(0)
    eps = 1e-10 if tighten else 1e-9
    prob = osqp.OSQP()
    prob.setup(
        P=sp.csc_matrix(np.triu(qp.hessian)),
        q=qp.linear,
        A=A,
        l=l,
        u=u,
        eps_abs=eps,
        eps_rel=eps,
        eps_prim_inf=1e-10,
        eps_dual_inf=1e-10,
        max_iter=200000,
        polishing=True,
        verbose=False,
    )
    res = prob.solve(raise_error=False)
    status = res.info.status
    if status in ("solved", "solved inaccurate"):
        x = np.asarray(res.x, dtype=float)
        dual = np.asarray(res.y, dtype=float)
        n_ineq = qp.ineq[0].shape[0] if qp.ineq is not None else 0
        obj = float(0.5 * x @ qp.hessian @ x + qp.linear @ x)
        return SolveResult(
            OPTIMAL,
            x,
            obj,
            dual[:n_ineq] if n_ineq else None,
            dual[n_ineq:] if qp.eq is not None else None,
        )
    if "infeasible" in status and "dual" not in status:
        return SolveResult(INFEASIBLE)
    if "dual infeasible" in status:
        return SolveResult(UNBOUNDED)
    return SolveResult(NUMERICAL_FAILURE, extra={"message": status})


def _classify_backend_failure(qp):
    """Distinguish infeasible / unbounded from numerical failure.

    The interior-point backend reports non-convergence without a
    certificate, so the constraint system is re-examined with an LP:
    emptiness means infeasible; for a zero Hessian (an LP in disguise)
    the cost itself is re-minimized to detect unboundedness.
    """
    n = qp.linear.shape[0]
    feas = LinearProgram(np.zeros(n), ineq=qp.ineq, eq=qp.eq, sense="min")
    res = solve_lp(feas)
    if res.status == INFEASIBLE:
        return INFEASIBLE
    if res.status == OPTIMAL and np.max(np.abs(qp.hessian), initial=0.0) == 0.0:
        lp = LinearProgram(qp.linear, ineq=qp.ineq, eq=qp.eq, sense="min")
        if solve_lp(lp).status == UNBOUNDED:
            return UNBOUNDED
    return None


def _stationarity_residual(qp, result):
    """Infinity norm of the KKT gradient at the reported solution."""
    grad = qp.hessian @ result.primal + qp.linear
    if qp.ineq is not None and result.dual_ineq is not None:
        grad = grad + qp.ineq[0].T @ result.dual_ineq
    if qp.eq is not None and result.dual_eq is not None:
        grad = grad + qp.eq[0].T @ result.dual_eq
    return float(np.max(np.abs(grad), initial=0.0))


def solve_qp(qp, backend="cvxopt"):
    """Solve a convex quadratic program.

    Parameters
    ----------
    qp : QuadraticProgram
    backend : str
        ``"cvxopt"`` (interior point, default) or ``"osqp"`` (ADMM with
        polishing).  Both accept a zero Hessian, so linear programs can
        be routed here unchanged.

    Returns
    -------
    SolveResult
        When optimal, the KKT stationarity residual has been checked to
        be at most 1e-6 (one tightened re-solve is attempted first if
        the initial pass misses it); otherwise the result is downgraded
        to ``numerical-failure``.
    """
    solvers_by_name = {"cvxopt": _solve_qp_cvxopt, "osqp": _solve_qp_osqp}
    if backend not in solvers_by_name:
        raise ValueError("unknown QP backend %r" % backend)
    run = solvers_by_name[backend]
    result = run(qp, tighten=False)
    if result.status == NUMERICAL_FAILURE:
        verdict = _classify_backend_failure(qp)
        if verdict is not None:
            return SolveResult(verdict, extra=result.extra)
    if result.status != OPTIMAL:
        return result
    resid = _stationarity_residual(qp, result)
    if resid > STATIONARITY_TOL:
        retry = run(qp, tighten=True)
        if retry.status == OPTIMAL:
            retry_resid = _stationarity_residual(qp, retry)
            if retry_resid <= resid:
                result, resid = retry, retry_resid
    result.extra["stationarity"] = resid
    if resid > STATIONARITY_TOL:
        return SolveResult(NUMERICAL_FAILURE,
                           extra={"message": "stationarity %.2e" % resid})
    return result


def require_sdp():
    """Return the cvxpy module, or raise if no semidefinite backend exists.

    Semidefinite synthesis is optional: callers that can consume an
    externally supplied solution should catch
    :class:`SolverUnavailableError` and fall back.
    """
    try:
        import cvxpy
    except ImportError as exc:  # pragma: no cover - environment dependent
        raise SolverUnavailableError(
            "semidefinite solving requires cvxpy with a conic backend"
        ) from exc
    return cvxpy


def solve_sdp_problem(problem):
    """Run a cvxpy problem on the first working conic backend.

    Tries Clarabel, then SCS.  Returns the terminal status string;
    raises :class:`SolverUnavailableError` if every backend errors out.
    """
    cvxpy = require_sdp()
    last_exc = None
    for name in ("CLARABEL", "SCS"):
        try:
            problem.solve(solver=name, verbose=False)
            return problem.status
        except (cvxpy.error.SolverError, ValueError) as exc:
            last_exc = exc
    raise SolverUnavailableError("no conic backend succeeded: %s" % last_exc)
