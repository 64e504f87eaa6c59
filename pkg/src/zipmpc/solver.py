"""Contouring MPC solver: iLQR with box-constrained inputs and soft state
constraints, plus the receding-horizon lap harness.

The nonconvex problem is solved by repeated quadratic approximation: at
each iterate the dynamics are linearized and the stage costs quadratized,
a Riccati sweep with exact per-stage box QPs yields feedforward steps and
feedback gains, and a backtracking line search on the total objective
accepts the update.  Failures raise the Levenberg regularization on the
value-function Hessian by 10x.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels as kernels
from .costs import DEFAULT_Q_MIN, NO_PENALTY, CostSchedule, PenaltySpec
from .dynamics import FrenetSingularityError, KinematicModel, PacejkaModel, linearize

DEFAULT_TIGHTENING = 0.85  # omega_tight / omega


class SolverError(RuntimeError):
    pass


class InfeasibleError(SolverError):
    """The rollout left the model's validity region."""


class KernelRuntime:
    """Vehicle-model runtime backed by the selected kernel backend."""

    def __init__(self, spec, analytic=None, fd_step=1e-6):
        self.spec = spec
        self.n = spec.n
        self.m = spec.m
        # analytic Jacobians exist for the kinematic kind only
        self.analytic = (spec.kind == kernels.KIND_KINEMATIC) if analytic is None else analytic
        self.fd_step = fd_step

    def rollout(self, x0, U):
        return kernels.rollout(self.spec, x0, U)

    def rollout_feedback(self, Xref, Uref, kff, K, alpha, lo, hi):
        return kernels.rollout_feedback(self.spec, Xref, Uref, kff, K, alpha, lo, hi)

    def linearize(self, X, U):
        A, B, status = kernels.linearize_traj(
            self.spec, X, U, h=self.fd_step, analytic=self.analytic
        )
        if status != 0:
            raise InfeasibleError("linearization left the model validity region")
        return A, B

    def step(self, x, u):
        return kernels.step(self.spec, x, u)


class CallableRuntime:
    """Runtime over arbitrary python dynamics (tests, LTI problems)."""

    def __init__(self, step, n, m, jacobians=None, fd_step=1e-6):
        self._step = step
        self.n = n
        self.m = m
        self._jacobians = jacobians
        self.fd_step = fd_step

    def step(self, x, u):
        try:
            return np.asarray(self._step(x, u), dtype=float), 0
        except FrenetSingularityError:
            return np.full(self.n, np.nan), 1

    def rollout(self, x0, U):
        X = np.empty((U.shape[0] + 1, self.n))
        X[0] = x0
        for i in range(U.shape[0]):
            xn, status = self.step(X[i], U[i])
            if status != 0:
                return X, status
            X[i + 1] = xn
        return X, 0

    def rollout_feedback(self, Xref, Uref, kff, K, alpha, lo, hi):
        X = np.empty_like(Xref)
        U = np.empty_like(Uref)
        X[0] = Xref[0]
        for i in range(Uref.shape[0]):
            du = alpha * kff[i] + K[i] @ (X[i] - Xref[i])
            U[i] = np.clip(Uref[i] + du, lo, hi)
            xn, status = self.step(X[i], U[i])
            if status != 0:
                return X, U, status
            X[i + 1] = xn
        return X, U, 0

    def linearize(self, X, U):
        N1 = U.shape[0]
        A = np.empty((N1, self.n, self.n))
        B = np.empty((N1, self.n, self.m))
        for i in range(N1):
            if self._jacobians is not None:
                A[i], B[i] = self._jacobians(X[i], U[i])
            else:
                A[i], B[i] = linearize(
                    lambda x, u: self.step(x, u)[0], X[i], U[i], h=self.fd_step
                )
        return A, B


class AugmentedVehicleModel:
    """Vehicle model in the augmented state [physical..., sigma0, sigma_delta].

    sigma0 stays constant over a prediction and sigma_delta = sigma - sigma0,
    so progress-reward terms act on within-horizon progress only.
    """

    def __init__(self, model, track):
        if isinstance(model, KinematicModel):
            kind = kernels.KIND_KINEMATIC
        elif isinstance(model, PacejkaModel):
            kind = (
                kernels.KIND_PACEJKA_SIM
                if model.variant == "sim"
                else kernels.KIND_PACEJKA_HW
            )
        else:
            raise TypeError(f"unsupported model {type(model).__name__}")
        self.model = model
        self.track = track
        self.kind = kind
        self.n_phys = model.n
        self.n = model.n + 2
        self.m = model.m
        self.state_names = model.state_names + ("sigma0", "sigma_delta")
        self.input_names = model.input_names
        self.sigma_index = 0
        self.d_index = model.d_index
        self.speed_index = model.speed_index
        self.spec = kernels.spec_for(kind, model.params, track)

    def runtime(self):
        return KernelRuntime(self.spec)

    def augment(self, x_phys):
        x = np.asarray(x_phys, dtype=float)
        return np.concatenate([x, [x[0], 0.0]])

    def step_py(self, x_aug, u):
        """Pure-python mirror of the kernel step (cross-check path)."""
        kappa = self.track.curvature(x_aug[0])
        xp = self.model.step(x_aug[: self.n_phys], u, kappa)
        return np.concatenate([xp, [x_aug[self.n_phys], xp[0] - x_aug[self.n_phys]]])


@dataclass(frozen=True)
class MpcProblem:
    """One finite-horizon problem family: model runtime + cost + constraints."""

    runtime: object
    horizon: int
    cost: CostSchedule
    u_lo: np.ndarray
    u_hi: np.ndarray
    penalty: PenaltySpec = NO_PENALTY
    sigma_index: int | None = None
    q_min: float = DEFAULT_Q_MIN
    tol_obj: float = 1e-7
    max_iter: int = 100
    reg_max: float = 1e8
    ls_steps: int = 11
    model: object = None  # AugmentedVehicleModel when built via mpcc_problem

    def __post_init__(self):
        if self.horizon < 1:
            raise SolverError("horizon must be >= 1")
        if self.cost.horizon != self.horizon:
            raise SolverError(
                f"cost schedule has {self.cost.horizon + 1} stages, "
                f"horizon {self.horizon} needs {self.horizon + 1}"
            )
        if self.cost.dim != self.runtime.n + self.runtime.m:
            raise SolverError("cost dimension does not match state+input size")
        if self.penalty.d_index >= 0 and not self.penalty.d_limit > 0:
            raise SolverError("penalty d_limit must be positive")

    def with_cost(self, cost):
        return replace(self, cost=cost)


def mpcc_problem(model, track, cost, horizon, mu=2e4, tightening=DEFAULT_TIGHTENING,
                 **solver_opts):
    """Contouring problem for a vehicle model on a track."""
    aug = AugmentedVehicleModel(model, track)
    lo, hi = model.input_bounds()
    penalty = PenaltySpec(
        mu=mu,
        d_index=aug.d_index,
        d_limit=tightening * track.half_width,
        v_index=aug.speed_index,
        v_limit=model.params.v_max,
    )
    return MpcProblem(
        runtime=aug.runtime(),
        horizon=horizon,
        cost=cost,
        u_lo=lo,
        u_hi=hi,
        penalty=penalty,
        sigma_index=aug.sigma_index,
        model=aug,
        **solver_opts,
    )


@dataclass
class SolveRecord:
    """Solution plus the solver internals the gradient pass consumes."""

    X: np.ndarray  # (N+2, n)
    U: np.ndarray  # (N+1, m)
    converged: bool
    reason: str
    iterations: int
    objective: float
    A: np.ndarray
    B: np.ndarray
    hx: np.ndarray
    hu: np.ndarray
    gx: np.ndarray
    gu: np.ndarray
    kff: np.ndarray
    K: np.ndarray
    mask: np.ndarray  # (N+1, m) uint8: 1 where the input sits on a bound
    reg: float
    q_mask: np.ndarray  # d q_eff / d q indicator per stage entry
    violation: float  # max soft-constraint overshoot along the solution
    penalty: PenaltySpec
    q_eff: np.ndarray
    p: np.ndarray


def _soft_violation(X, penalty):
    mu, d_idx, d_lim, v_idx, v_lim = penalty.as_tuple()
    worst = 0.0
    body = X[:-1]
    if d_idx >= 0:
        worst = max(worst, float(np.max(np.abs(body[:, d_idx])) - d_lim))
    if v_idx >= 0:
        worst = max(worst, float(np.max(body[:, v_idx]) - v_lim))
    return max(worst, 0.0)


def solve(problem: MpcProblem, x0, warm_start=None, cost=None, force_steps=0) -> SolveRecord:
    """Run iLQR to a fixed point of the quadratic approximation.

    Terminates when the expected objective decrease falls below tol_obj
    (converged) or on max_iter / exhausted line search (converged=False,
    best iterate returned).  Raises InfeasibleError when the initial
    rollout leaves the model validity region.

    force_steps > 0 makes the first iterations take the full Newton step
    even when its objective decrease is below float resolution; gradient
    checks warm-started at a neighboring optimum need this, since the
    re-solve must track fixed-point shifts far smaller than tol_obj.
    """
    rt = problem.runtime
    schedule = problem.cost if cost is None else cost
    if schedule.horizon != problem.horizon:
        raise SolverError("cost override has wrong horizon")
    N1 = problem.horizon + 1
    m = rt.m
    x0 = np.ascontiguousarray(x0, dtype=float)
    if x0.shape != (rt.n,):
        raise SolverError(f"x0 must have shape ({rt.n},)")

    q_eff, q_mask = schedule.effective_q(problem.sigma_index, problem.q_min)
    q_eff = np.ascontiguousarray(q_eff)
    p = np.ascontiguousarray(schedule.p)
    pen = problem.penalty.as_tuple()
    lo = np.ascontiguousarray(problem.u_lo, dtype=float)
    hi = np.ascontiguousarray(problem.u_hi, dtype=float)

    if warm_start is None:
        U = np.zeros((N1, m))
    else:
        U = np.clip(np.asarray(warm_start, dtype=float).reshape(N1, m), lo, hi)
    X, status = rt.rollout(x0, U)
    if status != 0:
        raise InfeasibleError(f"initial rollout failed (status {status})")
    J = kernels.eval_cost(X, U, q_eff, p, pen)
    if not math.isfinite(J):
        raise InfeasibleError("initial objective not finite")

    reg = 0.0
    alphas = 0.5 ** np.arange(problem.ls_steps)
    converged = False
    reason = "max-iter"
    iterations = 0
    quad = None

    def prepare(X, U, reg):
        A, B = rt.linearize(X, U)
        hx, hu, gx, gu = kernels.quadratize(X, U, q_eff, p, pen)
        while True:
            kff, K, mask, dv, st = kernels.backward_sweep(
                A, B, hx, hu, gx, gu, U, lo, hi, reg
            )
            if st == 0:
                return (A, B, hx, hu, gx, gu, kff, K, mask, dv), reg
            reg = max(reg * 10.0, 1e-6)
            if reg > problem.reg_max:
                return None, reg

    while iterations < max(problem.max_iter, 1):
        iterations += 1
        quad_new, reg = prepare(X, U, reg)
        if quad_new is None:
            if quad is None:
                raise SolverError("stage Hessian not positive definite at any regularization")
            reason = "hessian-not-pd"
            break
        quad = quad_new
        A, B, hx, hu, gx, gu, kff, K, mask, dv = quad
        expected = -(dv[0] + dv[1])
        forcing = iterations <= force_steps
        if expected < problem.tol_obj and not forcing:
            converged = True
            reason = "stationary"
            break

        accepted = False
        slack = 1e-13 * max(1.0, abs(J)) if forcing else 0.0
        for alpha in alphas:
            Xn, Un, st = rt.rollout_feedback(X, U, kff, K, alpha, lo, hi)
            if st != 0:
                continue
            Jn = kernels.eval_cost(Xn, Un, q_eff, p, pen)
            if math.isfinite(Jn) and Jn < J + slack:
                accepted = True
                break
        if not accepted:
            reg = max(reg * 10.0, 1e-6)
            if reg > problem.reg_max:
                reason = "line-search"
                break
            continue

        dJ = J - Jn
        X, U, J = Xn, Un, Jn
        reg = reg * 0.1 if reg > 1e-12 else 0.0
        if dJ < problem.tol_obj:
            # refresh the quadratization at the accepted iterate so the
            # stored fixed point matches the returned trajectory
            quad_new, reg = prepare(X, U, reg)
            if quad_new is not None:
                quad = quad_new
                converged = True
                reason = "small-decrease"
            else:
                reason = "hessian-not-pd"
            break

    A, B, hx, hu, gx, gu, kff, K, mask, dv = quad
    return SolveRecord(
        X=X, U=U, converged=converged, reason=reason, iterations=iterations,
        objective=J, A=A, B=B, hx=hx, hu=hu, gx=gx, gu=gu, kff=kff, K=K,
        mask=mask, reg=reg, q_mask=q_mask, violation=_soft_violation(X, problem.penalty),
        penalty=problem.penalty, q_eff=q_eff, p=p,
    )


# -- closed loop --------------------------------------------------------


@dataclass
class LapResult:
    completed: bool
    reason: str
    lap_time: float
    steps: int
    t: np.ndarray
    states: np.ndarray  # physical states per step, (steps+1, n_phys)
    inputs: np.ndarray  # (steps, m)
    solve_ms: np.ndarray  # per-step controller wall time, ms
    max_abs_d: float
    off_track_steps: int  # closed-loop states with |d| > half width
    nonconverged_steps: int
    extras: dict = field(default_factory=dict)

    @property
    def mean_solve_ms(self):
        return float(np.mean(self.solve_ms)) if len(self.solve_ms) else float("nan")


def run_lap(problem: MpcProblem, x0_phys, max_steps=2000, cost_fn=None,
            extra_fn=None) -> LapResult:
    """Receding-horizon lap: apply u0*, shift the warm start, re-solve.

    cost_fn(x_phys) may return a per-step CostSchedule (the learned-cost
    path); its evaluation time is charged to the per-step controller time.
    extra_fn(cost) -> dict of scalars is recorded per step outside the
    timed section.
    """
    aug = problem.model
    if aug is None:
        raise SolverError("run_lap needs a problem built by mpcc_problem")
    track = aug.track
    rt = aug.runtime()
    T = aug.model.params.T
    x = np.asarray(x0_phys, dtype=float).copy()
    target = x[0] + track.total_length

    rows_x = [x.copy()]
    rows_u = []
    times = []
    solve_ms = []
    extras = {}
    warm = None
    nonconverged = 0
    completed = False
    reason = "step-budget"
    lap_time = float("nan")
    steps = 0

    for k in range(max_steps):
        x_aug = aug.augment(x)
        t0 = time.perf_counter()
        step_cost = cost_fn(x) if cost_fn is not None else None
        try:
            rec = solve(problem, x_aug, warm_start=warm, cost=step_cost)
        except InfeasibleError:
            reason = "solver-infeasible"
            break
        solve_ms.append((time.perf_counter() - t0) * 1e3)
        if not rec.converged:
            nonconverged += 1
        if extra_fn is not None and step_cost is not None:
            for key, val in extra_fn(step_cost).items():
                extras.setdefault(key, []).append(val)
        u0 = rec.U[0]
        x_next_aug, status = rt.step(x_aug, u0)
        if status != 0:
            reason = "dynamics-infeasible"
            break
        x_new = x_next_aug[: aug.n_phys]
        warm = np.vstack([rec.U[1:], rec.U[-1:]])
        rows_u.append(u0.copy())
        times.append(k * T)
        steps = k + 1
        if x_new[0] >= target:
            frac = (target - x[0]) / (x_new[0] - x[0])
            lap_time = (k + frac) * T
            completed = True
            reason = "lap"
            x = x_new
            rows_x.append(x.copy())
            break
        x = x_new
        rows_x.append(x.copy())

    states = np.array(rows_x)
    inputs = np.array(rows_u) if rows_u else np.zeros((0, aug.m))
    d_col = np.abs(states[:, aug.d_index])
    return LapResult(
        completed=completed,
        reason=reason,
        lap_time=lap_time,
        steps=steps,
        t=np.array(times),
        states=states,
        inputs=inputs,
        solve_ms=np.array(solve_ms),
        max_abs_d=float(d_col.max()) if len(d_col) else 0.0,
        off_track_steps=int(np.sum(d_col > track.half_width)),
        nonconverged_steps=nonconverged,
        extras={k: np.array(v) for k, v in extras.items()},
    )


def run_policy_lap(policy, model, track, x0_phys, max_steps=2000) -> LapResult:
    """Closed loop under a direct state->input policy (no online solver)."""
    aug = AugmentedVehicleModel(model, track)
    rt = aug.runtime()
    T = model.params.T
    lo, hi = model.input_bounds()
    x = np.asarray(x0_phys, dtype=float).copy()
    target = x[0] + track.total_length

    rows_x = [x.copy()]
    rows_u = []
    times = []
    solve_ms = []
    completed = False
    reason = "step-budget"
    lap_time = float("nan")
    steps = 0
    for k in range(max_steps):
        t0 = time.perf_counter()
        u = np.clip(np.asarray(policy(x), dtype=float), lo, hi)
        solve_ms.append((time.perf_counter() - t0) * 1e3)
        x_next_aug, status = rt.step(aug.augment(x), u)
        if status != 0:
            reason = "dynamics-infeasible"
            break
        x_new = x_next_aug[: aug.n_phys]
        rows_u.append(u.copy())
        times.append(k * T)
        steps = k + 1
        if x_new[0] >= target:
            frac = (target - x[0]) / (x_new[0] - x[0])
            lap_time = (k + frac) * T
            completed = True
            reason = "lap"
            x = x_new
            rows_x.append(x.copy())
            break
        x = x_new
        rows_x.append(x.copy())

    states = np.array(rows_x)
    d_col = np.abs(states[:, aug.d_index])
    return LapResult(
        completed=completed, reason=reason, lap_time=lap_time, steps=steps,
        t=np.array(times), states=states,
        inputs=np.array(rows_u) if rows_u else np.zeros((0, aug.m)),
        solve_ms=np.array(solve_ms),
        max_abs_d=float(d_col.max()) if len(d_col) else 0.0,
        off_track_steps=int(np.sum(d_col > track.half_width)),
        nonconverged_steps=0,
    )
