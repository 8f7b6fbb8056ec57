"""Closed-loop simulation: scenarios, traces, disturbances, batches.

A scenario fixes the plant (true parameters, disturbance support), the
prior parameter hypercube, the initial state, the number of steps, the
setpoint schedule, and how disturbances are generated.  ``run`` plays
the adaptive loop: measure the state, shrink the hypercube with the
newest transition, move the point estimate, refresh the contraction
rate, solve the tube program, apply its first input.  The recorded
trace carries every per-step quantity the reports need, and the CSV and
JSON writers produce byte-reproducible files for a fixed seed.
"""

import dataclasses
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import geometry, offline, tube_mpc
from .estimation import (EstimatorState, InconsistentDataError,
                         hypercube_update, lms_update, nonfalsified)
from .model import eval_dynamics
from .offline import TerminalInfeasibleError
from .tube_mpc import QPInfeasibleError

__all__ = [
    "Scenario",
    "RunTrace",
    "run",
    "run_batch",
    "disturbance_sampler",
    "sample_disturbance",
    "l2_gain_report",
    "write_trace_csv",
    "write_summary_json",
    "DISTURBANCE_MODES",
]

logger = logging.getLogger(__name__)

DISTURBANCE_MODES = ("zero", "uniform", "vertex-adversarial",
                     "seeded-sequence")

# beyond this dimension a box has too many corners to enumerate
_MAX_CORNER_DIM = 12


@dataclass
class Scenario:
    """Everything that defines one closed-loop experiment.

    Parameters
    ----------
    model : UncertainModel
        The uncertain plant; the simulated truth uses ``theta_true``.
    theta_true : ndarray
        True parameters; must lie inside ``Theta0``.
    D : DisturbanceSet
        Support of the additive disturbance, shared by the plant and
        the estimator.
    Theta0 : ParamHypercube
        Prior parameter set; the point estimate starts at its center.
    x0 : ndarray
        Initial state.
    T : int
        Number of closed-loop steps.
    mu : float
        Identifier step size.
    M : int
        Identifier window length.
    setpoints : list of (int, ndarray), optional
        Schedule of (start step, setpoint) pairs with strictly
        increasing start steps, the first at step 0.  ``None`` keeps
        the controller configuration's terminal pair for the whole run.
    disturbance_mode : str
        One of ``DISTURBANCE_MODES``.  ``"zero"`` disables the
        disturbance, ``"uniform"`` draws uniformly from the support,
        ``"vertex-adversarial"`` picks extreme points uniformly, and
        ``"seeded-sequence"`` replays the uniform draw stream of the
        named seed.
    seed : int
        Seed of the run's random generator; recorded in the trace so
        any run can be replayed bit for bit.
    """

    model: object
    theta_true: np.ndarray
    D: object
    Theta0: object
    x0: np.ndarray
    T: int
    mu: float
    M: int = 10
    setpoints: list = None
    disturbance_mode: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        self.theta_true = np.atleast_1d(np.asarray(self.theta_true,
                                                   dtype=float))
        self.x0 = np.atleast_1d(np.asarray(self.x0, dtype=float))
        if self.T < 1:
            raise ValueError("the run needs at least one step")
        if self.disturbance_mode not in DISTURBANCE_MODES:
            raise ValueError("unknown disturbance mode %r; expected one of %s"
                             % (self.disturbance_mode,
                                ", ".join(DISTURBANCE_MODES)))
        if not self.Theta0.contains(self.theta_true, tol=1e-9):
            raise ValueError("theta_true must lie inside the prior set")
        if self.setpoints is not None:
            schedule = []
            for start, x_s in self.setpoints:
                schedule.append((int(start),
                                 np.atleast_1d(np.asarray(x_s, dtype=float))))
            starts = [start for start, _ in schedule]
            if starts != sorted(set(starts)):
                raise ValueError("setpoint start steps must be strictly "
                                 "increasing")
            if starts[0] != 0:
                raise ValueError("the setpoint schedule must start at step 0")
            self.setpoints = schedule


@dataclass(eq=False)
class RunTrace:
    """Closed-loop history plus run metadata.

    Per-step arrays hold one row per executed step; an aborted run
    keeps the completed prefix.  ``x`` has one extra row, the state
    after the final applied input.  ``prediction_error`` is the
    one-step residual ``x_{t+1} - A(th_hat_t) x_t - B(th_hat_t) u_t``,
    the quantity the identifier's summed error bound controls.
    ``solutions`` and ``theta_sets`` hold the per-step plan and
    hypercube objects when the run recorded them, else ``None``.
    """

    x: np.ndarray
    u: np.ndarray
    d: np.ndarray
    theta_bar: np.ndarray
    eta: np.ndarray
    theta_hat: np.ndarray
    s: np.ndarray
    objective: np.ndarray
    feasible: np.ndarray
    violation: np.ndarray
    stage_cost: np.ndarray
    prediction_error: np.ndarray
    x_s: np.ndarray
    u_s_true: np.ndarray
    rho: np.ndarray
    seed: int
    rng_name: str
    disturbance_mode: str
    adapt: bool
    aborted: bool = False
    abort_reason: str = None
    solutions: list = None
    theta_sets: list = None

    @property
    def steps(self):
        """Number of executed closed-loop steps."""
        return self.u.shape[0]

    def summary(self):
        """Aggregate run statistics as a JSON-ready dictionary."""
        steps = self.steps
        err = self.x[:steps] - self.x_s
        return {
            "steps": int(steps),
            "seed": int(self.seed),
            "rng_name": self.rng_name,
            "disturbance_mode": self.disturbance_mode,
            "adapt": bool(self.adapt),
            "aborted": bool(self.aborted),
            "abort_reason": self.abort_reason,
            "cumulative_cost": float(np.sum(self.stage_cost)),
            "sum_sq_error": float(np.sum(err * err)),
            "sum_sq_prediction_error": float(
                np.sum(self.prediction_error * self.prediction_error)),
            "sum_sq_disturbance": float(np.sum(self.d * self.d)),
            "violations": int(np.count_nonzero(self.violation)),
            "infeasible_steps": int(np.count_nonzero(~self.feasible)),
            "eta_final": float(self.eta[-1]) if steps else None,
            "theta_hat_final": ([float(v) for v in self.theta_hat[-1]]
                                if steps else None),
        }


def _corners(lower, upper):
    """All corners of the box [lower, upper], duplicates removed."""
    masks = np.array(list(itertools.product((0.0, 1.0),
                                            repeat=lower.size)))
    corners = lower + masks * (upper - lower)
    return np.unique(corners, axis=0)


def disturbance_sampler(D, mode):
    """Build a draw function for repeated sampling from one set.

    The returned callable maps a numpy ``Generator`` to one
    disturbance vector.  The set analysis (bounding box, corner or
    vertex list, interior point) runs once here, so each draw costs a
    few vector operations; ``sample_disturbance`` wraps this for
    one-off draws.  Boxes, including degenerate ones, are sampled
    exactly per coordinate; other full-dimensional polytopes use a
    fixed-length hit-and-run walk from the incenter.
    """
    if mode not in DISTURBANCE_MODES:
        raise ValueError("unknown disturbance mode %r; expected one of %s"
                         % (mode, ", ".join(DISTURBANCE_MODES)))
    poly = D.poly if hasattr(D, "poly") else D
    dim = poly.dim
    if mode == "zero":
        return lambda rng: np.zeros(dim)
    try:
        box = geometry.bounding_box(poly)
    except geometry.EmptyPolytopeError as exc:
        raise ValueError("cannot sample from an empty disturbance set") \
            from exc
    lower, upper = box.lower, box.upper
    is_box = False
    if dim <= _MAX_CORNER_DIM:
        corners = _corners(lower, upper)
        is_box = all(poly.contains(c, tol=1e-9) for c in corners)
    if mode == "vertex-adversarial":
        if is_box:
            verts = corners
        elif dim == 2:
            verts = geometry.vertices_2d(poly)
        else:
            raise ValueError("vertex sampling needs a box or a planar set")
        return lambda rng: verts[rng.integers(len(verts))].copy()
    # uniform and seeded-sequence draw from the same uniform law; the
    # latter only names the intent of replaying one fixed seed
    if is_box:
        return lambda rng: rng.uniform(lower, upper)
    start, radius = geometry.chebyshev_center(poly)
    if radius <= 1e-12:
        raise ValueError("uniform sampling needs a box or a set with "
                         "interior")
    H, h = poly.H, poly.h

    def draw(rng):
        x = start.copy()
        for _ in range(32):
            direction = rng.standard_normal(dim)
            direction /= np.linalg.norm(direction)
            along = H @ direction
            slack = h - H @ x
            pos = along > 1e-14
            neg = along < -1e-14
            t_hi = np.min(slack[pos] / along[pos]) if np.any(pos) else 0.0
            t_lo = np.max(slack[neg] / along[neg]) if np.any(neg) else 0.0
            x = x + rng.uniform(t_lo, t_hi) * direction
        return x

    return draw


def sample_disturbance(D, mode, rng):
    """Draw one disturbance vector from the set under the given mode."""
    return disturbance_sampler(D, mode)(rng)


def _constraint_rows(constants):
    """Joint constraint rows F, G stored with the offline constants."""
    F = constants.meta.get("F")
    G = constants.meta.get("G")
    if F is None or G is None:
        raise ValueError("constants must carry the constraint rows F and G "
                         "in meta to account for violations")
    return np.atleast_2d(np.asarray(F, dtype=float)), \
        np.atleast_2d(np.asarray(G, dtype=float))


def run(scenario, config, adapt=True, record_solutions=False):
    """Play one closed loop and return its trace.

    Each step measures the state, shrinks the parameter hypercube with
    the newest transition, moves the point estimate by a projected
    gradient step (both skipped at step 0, and frozen at the prior for
    the whole run when ``adapt`` is false), refreshes the contraction
    rate at the new center, solves the tube program, and applies its
    first input.  A setpoint change re-derives the terminal pair from
    the current hypercube and contraction rate.  When the program
    reports infeasible, the shifted previous plan is applied instead
    and the step is flagged; the run aborts with a partial trace when
    no such fallback exists, when a setpoint change admits no terminal
    set, or when the estimator window becomes inconsistent.

    ``record_solutions`` additionally keeps each step's full plan and
    parameter hypercube on the trace, for plan-level checks such as
    the shifted-candidate nesting inequalities.
    """
    model = scenario.model
    rng = np.random.default_rng(scenario.seed)
    rng_name = type(rng.bit_generator).__name__
    draw = disturbance_sampler(scenario.D, scenario.disturbance_mode)
    state = EstimatorState(model=model, theta_set=scenario.Theta0,
                           theta_hat=scenario.Theta0.center.copy(),
                           mu=scenario.mu, M=scenario.M)
    K = np.atleast_2d(config.constants.K)
    F, G = _constraint_rows(config.constants)
    n = scenario.x0.size
    m = K.shape[0]
    p = scenario.Theta0.p
    T = scenario.T
    N = config.N

    switch_at = {}
    if scenario.setpoints is not None:
        switch_at = {start: x_s for start, x_s in scenario.setpoints}

    x = np.empty((T + 1, n))
    u = np.empty((T, m))
    d = np.empty((T, n))
    theta_bar = np.empty((T, p))
    eta = np.empty(T)
    theta_hat = np.empty((T, p))
    s_plan = np.empty((T, N + 1))
    objective = np.empty(T)
    feasible = np.ones(T, dtype=bool)
    violation = np.zeros(T, dtype=bool)
    stage_cost = np.empty(T)
    pred_err = np.empty((T, n))
    x_s_log = np.empty((T, n))
    u_s_log = np.empty((T, m))
    rho_log = np.empty(T)
    solutions = [] if record_solutions else None
    theta_sets = [] if record_solutions else None

    x[0] = scenario.x0
    A_true, B_true = eval_dynamics(model, scenario.theta_true)
    active = config
    u_s_true = _terminal_steady_input(active.terminal, scenario.theta_true, m)
    prev_sol = None
    prev_set = None
    aborted = False
    abort_reason = None
    steps = 0

    for t in range(T):
        if t > 0 and adapt:
            delta = nonfalsified(model, x[t - 1], u[t - 1], x[t], scenario.D)
            try:
                hypercube_update(state, delta)
            except InconsistentDataError as exc:
                aborted, abort_reason = True, "estimator-inconsistent: %s" % exc
                break
            lms_update(state, x[t - 1], u[t - 1], x[t])
        rho_t = tube_mpc.contraction_at(active, state.theta_set.center)
        if t in switch_at and (t > 0 or _setpoint_differs(
                active.terminal.x_s, switch_at[t])):
            try:
                terminal = offline.terminal_tracking(
                    config.constants, model, state.theta_set, switch_at[t],
                    rho_bar=rho_t)
            except TerminalInfeasibleError as exc:
                aborted = True
                abort_reason = "terminal-infeasible at step %d: %s" % (t, exc)
                break
            active = dataclasses.replace(config, terminal=terminal)
            u_s_true = _terminal_steady_input(active.terminal,
                                              scenario.theta_true, m)
            # the shifted plan certifies the previous program, not the
            # one with the new terminal pair
            prev_sol = None
        try:
            u_t, sol = tube_mpc.solve_step(active, x[t], state.theta_set,
                                           state.theta_hat, rho_t)
        except QPInfeasibleError:
            if prev_sol is None:
                aborted = True
                abort_reason = "infeasible at step %d with no fallback" % t
                break
            try:
                sol = tube_mpc.candidate(prev_sol, state.theta_set, prev_set,
                                         x[t], active)
            except ValueError as exc:
                aborted = True
                abort_reason = "infeasible at step %d, fallback failed: %s" \
                    % (t, exc)
                break
            u_t = sol.v[0] + K @ x[t]
            feasible[t] = False
            logger.warning("step %d: program infeasible, applying the "
                           "shifted previous plan", t)
        u[t] = u_t
        violation[t] = bool(np.any(F @ x[t] + G @ u[t] > 1.0 + 1e-9))
        d[t] = draw(rng)
        x[t + 1] = A_true @ x[t] + B_true @ u[t] + d[t]
        A_fit, B_fit = eval_dynamics(model, state.theta_hat)
        pred_err[t] = x[t + 1] - A_fit @ x[t] - B_fit @ u[t]

        theta_bar[t] = state.theta_set.center
        eta[t] = state.theta_set.eta
        theta_hat[t] = state.theta_hat
        s_plan[t] = sol.s
        objective[t] = sol.objective
        x_s_log[t] = active.terminal.x_s
        u_s_log[t] = u_s_true
        rho_log[t] = rho_t
        x_err = x[t] - active.terminal.x_s
        u_err = u[t] - u_s_true
        stage_cost[t] = float(x_err @ config.Q @ x_err
                              + u_err @ config.R @ u_err)
        if record_solutions:
            solutions.append(sol)
            theta_sets.append(state.theta_set)
        prev_sol = sol
        prev_set = state.theta_set
        steps = t + 1

    return RunTrace(
        x=x[:steps + 1], u=u[:steps], d=d[:steps],
        theta_bar=theta_bar[:steps], eta=eta[:steps],
        theta_hat=theta_hat[:steps], s=s_plan[:steps],
        objective=objective[:steps], feasible=feasible[:steps],
        violation=violation[:steps], stage_cost=stage_cost[:steps],
        prediction_error=pred_err[:steps], x_s=x_s_log[:steps],
        u_s_true=u_s_log[:steps], rho=rho_log[:steps],
        seed=scenario.seed, rng_name=rng_name,
        disturbance_mode=scenario.disturbance_mode, adapt=adapt,
        aborted=aborted, abort_reason=abort_reason,
        solutions=solutions, theta_sets=theta_sets)


def _setpoint_differs(x_s_active, x_s_new):
    return bool(np.max(np.abs(x_s_active - x_s_new), initial=0.0) > 1e-9)


def _terminal_steady_input(terminal, theta, m):
    """Steady input of the active terminal pair at given parameters."""
    if terminal.u_s_map is None:
        return np.zeros(m)
    return np.atleast_1d(terminal.u_s_map(theta))


def _run_indexed(args):
    index, scenario, config, adapt, record = args
    return index, run(scenario, config, adapt, record)


def run_batch(scenario, config, seeds, adapt=True, workers=1,
              record_solutions=False):
    """Run one scenario under many seeds; traces in seed order.

    Every run gets its own estimator state and random generator, so
    the batch is embarrassingly parallel; with ``workers > 1`` runs
    execute in a process pool and results are merged back in
    submission order, keeping the output deterministic.
    """
    scenarios = [dataclasses.replace(scenario, seed=int(seed))
                 for seed in seeds]
    if workers <= 1:
        return [run(item, config, adapt, record_solutions)
                for item in scenarios]
    jobs = [(i, item, config, adapt, record_solutions)
            for i, item in enumerate(scenarios)]
    traces = [None] * len(jobs)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        for index, trace in pool.map(_run_indexed, jobs):
            traces[index] = trace
    return traces


def l2_gain_report(trace, mu, theta_true):
    """Prefix gain ratios of the regulation error against its drivers.

    For each prefix length ``t >= 1`` the ratio compares accumulated
    squared error to the initial conditions plus accumulated squared
    disturbances,

        sum_{k=1..t} |x_k - x_s|^2
        ------------------------------------------------------------,
        |x_0 - x_s|^2 + |th_hat_0 - th*|^2 / mu + sum_{k<t} |d_k|^2

    the parameter mismatch entering with the identifier's step-size
    weight.  Returns the ratio sequence, the unweighted variant (no
    ``1/mu``), the maximum, its prefix index, whether every ratio is
    finite, and whether the maximum falls in the first half of the
    run.  A trace with no steps yields empty ratios and ``None``
    markers instead of raising.
    """
    steps = trace.steps
    theta_true = np.atleast_1d(np.asarray(theta_true, dtype=float))
    if steps == 0:
        return {"ratios": np.empty(0), "ratios_unweighted": np.empty(0),
                "max_ratio": None, "argmax": None, "bounded": True,
                "peak_in_first_half": True}
    x_s = np.vstack([trace.x_s, trace.x_s[-1]])
    err = trace.x - x_s
    sq_err = np.sum(err * err, axis=1)
    sq_dist = np.sum(trace.d * trace.d, axis=1)
    numerator = np.cumsum(sq_err[1:])
    mismatch = float(np.sum((trace.theta_hat[0] - theta_true) ** 2))
    # the prefix through x_t was driven by d_0 .. d_{t-1}
    base = sq_err[0] + np.cumsum(sq_dist)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = _safe_ratio(numerator, base + mismatch / mu)
        plain = _safe_ratio(numerator, base + mismatch)
    argmax = int(np.argmax(ratios))
    return {
        "ratios": ratios,
        "ratios_unweighted": plain,
        "max_ratio": float(ratios[argmax]),
        "argmax": argmax,
        "bounded": bool(np.all(np.isfinite(ratios))),
        "peak_in_first_half": bool(argmax + 1 <= (steps + 1) // 2),
    }


def _safe_ratio(numerator, denominator):
    """Elementwise ratio with 0/0 -> 0 and x/0 -> inf for x > 0."""
    out = np.full(numerator.shape, np.inf)
    zero = numerator == 0.0
    out[zero] = 0.0
    good = denominator > 0.0
    out[good] = numerator[good] / denominator[good]
    return out


def _fmt(value):
    """Shortest 17-significant-digit decimal form of a float."""
    return format(float(value), ".17g")


def write_trace_csv(trace, path):
    """Write the per-step trace as CSV with a fixed header.

    Columns: t, the state, input, disturbance, hypercube center,
    side length, point estimate, objective, feasibility flag.  Floats
    carry 17 significant digits with a point decimal separator, rows
    end with a bare newline, so identical traces give identical bytes.
    """
    steps = trace.steps
    n = trace.x.shape[1]
    m = trace.u.shape[1]
    p = trace.theta_bar.shape[1]
    header = (["t"]
              + ["x%d" % (i + 1) for i in range(n)]
              + ["u%d" % (i + 1) for i in range(m)]
              + ["d%d" % (i + 1) for i in range(n)]
              + ["theta_bar%d" % (i + 1) for i in range(p)]
              + ["eta"]
              + ["theta_hat%d" % (i + 1) for i in range(p)]
              + ["obj", "feasible"])
    lines = [",".join(header)]
    for t in range(steps):
        row = [str(t)]
        row += [_fmt(v) for v in trace.x[t]]
        row += [_fmt(v) for v in trace.u[t]]
        row += [_fmt(v) for v in trace.d[t]]
        row += [_fmt(v) for v in trace.theta_bar[t]]
        row.append(_fmt(trace.eta[t]))
        row += [_fmt(v) for v in trace.theta_hat[t]]
        row.append(_fmt(trace.objective[t]))
        row.append(str(int(trace.feasible[t])))
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_summary_json(trace, path):
    """Write the run summary as pretty-printed, key-sorted JSON."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(trace.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")
