"""Per-stage quadratic cost schedules for the contouring controller.

A schedule holds N+1 pairs (q_i, p_i) over the stacked stage vector
z = [x, u]; the stage cost is sum_j q_j z_j^2 + p_j z_j.  The solver works
on *effective* weights: entries are floored at q_min so stage Hessians
stay positive definite, except the absolute-progress entry which is
pinned to zero so solutions depend only on progress *within* the horizon,
not on where on the track it starts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_Q_MIN = 1e-4


class CostError(ValueError):
    pass


@dataclass(frozen=True)
class PenaltySpec:
    """Soft state constraints: squared hinge on |d| and on the speed."""

    mu: float = 0.0
    d_index: int = -1
    d_limit: float = 0.0
    v_index: int = -1
    v_limit: float = 0.0

    def as_tuple(self):
        return (self.mu, self.d_index, self.d_limit, self.v_index, self.v_limit)


NO_PENALTY = PenaltySpec()


class CostSchedule:
    """N+1 stage weight pairs; immutable after construction."""

    def __init__(self, q, p):
        q = np.atleast_2d(np.asarray(q, dtype=float))
        p = np.atleast_2d(np.asarray(p, dtype=float))
        if q.shape != p.shape:
            raise CostError(f"q shape {q.shape} != p shape {p.shape}")
        if not (np.isfinite(q).all() and np.isfinite(p).all()):
            raise CostError("cost weights must be finite")
        self.q = q
        self.p = p
        self.q.setflags(write=False)
        self.p.setflags(write=False)

    @property
    def horizon(self):
        return self.q.shape[0] - 1

    @property
    def dim(self):
        return self.q.shape[1]

    def with_delta(self, dq, dp):
        """Schedule shifted by a correction of matching shape."""
        return CostSchedule(self.q + dq, self.p + dp)

    def effective_q(self, sigma_index=None, q_min=DEFAULT_Q_MIN):
        """(q_eff, mask): floored weights and the d q_eff/d q indicator."""
        q_eff = np.maximum(self.q, q_min)
        mask = (self.q > q_min).astype(float)
        if sigma_index is not None:
            q_eff[:, sigma_index] = 0.0
            mask[:, sigma_index] = 0.0
        return q_eff, mask


def expand_cost(q_vec, p_vec, horizon) -> CostSchedule:
    """Repeat one weight pair across every stage of a horizon."""
    q_vec = np.asarray(q_vec, dtype=float)
    p_vec = np.asarray(p_vec, dtype=float)
    if q_vec.ndim != 1 or q_vec.shape != p_vec.shape:
        raise CostError("expand needs two equal-length weight vectors")
    reps = horizon + 1
    return CostSchedule(np.tile(q_vec, (reps, 1)), np.tile(p_vec, (reps, 1)))


def stage_cost(cost: CostSchedule, stage, x, u, penalty=NO_PENALTY,
               sigma_index=None, q_min=DEFAULT_Q_MIN):
    """(value, gradient, diagonal Hessian) of one stage at z = [x, u]."""
    if stage > cost.horizon:
        raise CostError(f"stage {stage} beyond horizon {cost.horizon}")
    z = np.concatenate([np.asarray(x, dtype=float), np.asarray(u, dtype=float)])
    if len(z) != cost.dim:
        raise CostError(f"z has {len(z)} entries, schedule expects {cost.dim}")
    q_eff, _ = cost.effective_q(sigma_index=sigma_index, q_min=q_min)
    qi = q_eff[stage]
    pi = cost.p[stage]
    value = float(qi @ (z * z) + pi @ z)
    grad = 2.0 * qi * z + pi
    hess = 2.0 * qi.copy()
    mu, d_idx, d_lim, v_idx, v_lim = penalty.as_tuple()
    if d_idx >= 0:
        e = abs(z[d_idx]) - d_lim
        if e > 0.0:
            value += mu * e * e
            grad[d_idx] += 2.0 * mu * e * np.sign(z[d_idx])
            hess[d_idx] += 2.0 * mu
    if v_idx >= 0:
        e = z[v_idx] - v_lim
        if e > 0.0:
            value += mu * e * e
            grad[v_idx] += 2.0 * mu * e
            hess[v_idx] += 2.0 * mu
    return value, grad, hess


# manually designed weight pairs for the bundled vehicle setups; the
# augmented stage vector orders are
#   kinematic: [sigma, d, phi, v, sigma0, sigma_delta, a, delta]
#   Pacejka:   [sigma, d, phi, r, v_x, v_y, sigma0, sigma_delta, tau, delta]

def kinematic_manual_cost():
    q = np.array([0.0, 3.0, 1.0, 0.01, 0.01, 0.01, 0.01, 1.0])
    p = np.array([0.0, 0.0, 0.0, 0.0, 0.0, -8.0, 0.0, 0.0])
    return q, p


def pacejka_manual_cost():
    q = np.array([0.0, 50.0, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1])
    p = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -8.0, 0.0, 0.0])
    return q, p


def pacejka_hw_manual_cost(horizon):
    n = float(horizon)
    q = np.array([0.0, 500.0, 5.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 100.0]) / n
    p = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -40.0, 0.0, 0.0]) / n
    return q, p


def manual_cost_for(model_name):
    if model_name == "kinematic":
        return kinematic_manual_cost()
    if model_name in ("pacejka", "pacejka_sim"):
        return pacejka_manual_cost()
    raise CostError(f"no built-in manual cost for model {model_name!r}")
