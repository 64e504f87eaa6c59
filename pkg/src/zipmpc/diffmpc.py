"""Gradients of the solver's fixed point with respect to cost weights.

At convergence the trajectory satisfies the stationarity conditions of the
final quadratic approximation; differentiating that system (an LQR solve
with the upstream gradient injected as linear terms, clamped inputs
frozen) gives the sensitivity of the solution to every per-stage (q, p)
entry without unrolling solver iterations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels as kernels
from .solver import MpcProblem, SolverError, solve


@dataclass
class CostGradient:
    """d loss / d (q, p); shapes mirror the cost schedule exactly."""

    dq: np.ndarray  # (N+1, n+m)
    dp: np.ndarray  # (N+1, n+m)


def backward(record, dX, dU) -> CostGradient:
    """Map an upstream gradient on (X*, U*) to cost-weight gradients.

    dX has a row per state including the terminal one (N+2 rows), dU one
    per input (N+1).  Refuses non-converged records: the stationarity
    system being differentiated only exists at a fixed point.
    """
    if not record.converged:
        raise SolverError("gradient of a non-converged solve is undefined")
    N1, n, m = record.B.shape
    dX = np.ascontiguousarray(dX, dtype=float)
    dU = np.ascontiguousarray(dU, dtype=float)
    if dX.shape != (N1 + 1, n) or dU.shape != (N1, m):
        raise ValueError(
            f"upstream shapes must be ({N1 + 1},{n}) and ({N1},{m}), "
            f"got {dX.shape} and {dU.shape}"
        )
    dXs, dUs, status = kernels.lqr_adjoint(
        record.A, record.B, record.hx, record.hu, record.mask, dX, dU, record.reg
    )
    if status != 0:
        raise SolverError("adjoint sweep failed (singular stage Hessian)")
    dq = np.empty((N1, n + m))
    dp = np.empty((N1, n + m))
    dp[:, :n] = dXs[:N1]
    dp[:, n:] = dUs
    dq[:, :n] = 2.0 * record.X[:N1] * dXs[:N1]
    dq[:, n:] = 2.0 * record.U * dUs
    dq *= record.q_mask  # entries pinned or floored by the effective-weight rule
    return CostGradient(dq=dq, dp=dp)


def input_norm_loss(record):
    """loss = ||U*||^2; a simple convex probe for gradient checks."""
    value = float(np.sum(record.U**2))
    dX = np.zeros_like(record.X)
    dU = 2.0 * record.U
    return value, dX, dU


def tracking_loss(reference_X, reference_U):
    """loss = sum of squared deviations from fixed reference trajectories."""

    def loss(record):
        ex = record.X - reference_X
        eu = record.U - reference_U
        return float(np.sum(ex**2) + np.sum(eu**2)), 2.0 * ex, 2.0 * eu

    return loss


@dataclass
class GradcheckRow:
    stage: int
    entry: int
    kind: str  # "q" | "p"
    analytic: float
    fd: float
    rel_err: float


@dataclass
class GradcheckReport:
    max_rel_err: float
    rows: list
    failures: int  # perturbed solves that did not converge

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["kind", "stage", "entry", "analytic", "fd", "rel_err"])
            for r in self.rows:
                writer.writerow([r.kind, r.stage, r.entry, r.analytic, r.fd, r.rel_err])


def gradcheck(problem: MpcProblem, x0, loss="input-norm", h=1e-5, seed=0) -> GradcheckReport:
    """Compare `backward` against central differences over all (q, p) entries.

    Deterministic given the seed (only the 'tracking' loss draws a random
    reference).  Perturbed problems are re-solved warm-started from the
    base optimum at a tightened tolerance so finite differences see the
    fixed point, not solver slack.
    """
    if not h > 0:
        raise ValueError("finite-difference step h must be positive")
    # perturbations of size h move the objective by O(h^2) near the optimum;
    # the re-solves must resolve decreases that small or differences vanish
    tight = replace(problem, tol_obj=min(problem.tol_obj, 1e-14), max_iter=300)
    base = solve(tight, x0)
    if not base.converged:
        raise SolverError("gradcheck base problem did not converge")

    if loss == "input-norm":
        loss_fn = input_norm_loss
    elif loss == "tracking":
        rng = np.random.default_rng(seed)
        ref_X = base.X + 0.1 * rng.standard_normal(base.X.shape)
        ref_U = base.U + 0.1 * rng.standard_normal(base.U.shape)
        loss_fn = tracking_loss(ref_X, ref_U)
    elif callable(loss):
        loss_fn = loss
    else:
        raise ValueError(f"unknown loss spec {loss!r}")

    _, gX, gU = loss_fn(base)
    grad = backward(base, gX, gU)

    schedule = problem.cost
    N1, dim = schedule.q.shape
    fd_vals = {"q": np.full((N1, dim), np.nan), "p": np.full((N1, dim), np.nan)}
    failures = 0
    for kind in ("q", "p"):
        base_mat = schedule.q if kind == "q" else schedule.p
        for i in range(N1):
            for j in range(dim):
                vals = []
                ok = True
                for sgn in (+1.0, -1.0):
                    mat = base_mat.copy()
                    mat[i, j] += sgn * h
                    pert = (
                        schedule.__class__(mat, schedule.p)
                        if kind == "q"
                        else schedule.__class__(schedule.q, mat)
                    )
                    try:
                        rec = solve(tight, x0, warm_start=base.U, cost=pert, force_steps=2)
                    except SolverError:
                        ok = False
                        break
                    if not rec.converged:
                        ok = False
                        break
                    vals.append(loss_fn(rec)[0])
                if not ok:
                    failures += 1
                    continue
                fd_vals[kind][i, j] = (vals[0] - vals[1]) / (2.0 * h)

    rows = []
    all_fd = np.concatenate([fd_vals["q"].ravel(), fd_vals["p"].ravel()])
    scale = max(1.0, float(np.nanmax(np.abs(all_fd))) if np.isfinite(all_fd).any() else 1.0)
    floor = 1e-6 * scale
    max_rel = 0.0
    for kind, amat in (("q", grad.dq), ("p", grad.dp)):
        for i in range(N1):
            for j in range(dim):
                fd = fd_vals[kind][i, j]
                if not np.isfinite(fd):
                    continue
                a = amat[i, j]
                rel = abs(a - fd) / max(abs(a), abs(fd), floor)
                rows.append(GradcheckRow(i, j, kind, a, fd, rel))
                max_rel = max(max_rel, rel)
    return GradcheckReport(max_rel_err=max_rel, rows=rows, failures=failures)
