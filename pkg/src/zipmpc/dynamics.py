"""Discrete-time Frenet-frame vehicle models (Euler integration).

Three variants: a kinematic bicycle (states sigma, d, phi, v; inputs a,
delta) and two Pacejka tire models (states sigma, d, phi, r, v_x, v_y;
inputs tau, delta) in the simulation and hardware parameterizations.
Slip-angle and force expressions follow the published model forms,
including their sign conventions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


class FrenetSingularityError(ValueError):
    """1 - kappa*d reached zero: the Frenet transform is singular here."""


class LowSpeedError(ValueError):
    """|v_x| below the validity threshold of the Pacejka model."""


@dataclass(frozen=True)
class ModelParams:
    """Geometry, tire, drivetrain and bound parameters (SI units)."""

    l_r: float
    l_f: float
    T: float
    omega: float  # track half width used for constraint defaults
    mass: float = 0.0
    I_z: float = 27.8e-6  # unpublished; rigid-body order estimate, override via config
    gamma: float = 0.0  # front/rear drive split of the hardware variant
    D_f: float = 0.0
    C_f: float = 0.0
    B_f: float = 0.0
    D_r: float = 0.0
    C_r: float = 0.0
    B_r: float = 0.0
    C_m1: float = 0.0
    C_m2: float = 0.0
    C_d: float = 0.0  # quadratic drag of the simulation variant
    C_d0: float = 0.0
    C_d1: float = 0.0
    C_d2: float = 0.0
    C_roll: float = 0.0
    a_max: float = 1.0
    tau_max: float = 1.0
    delta_max: float = 0.4
    v_max: float = 1.8
    v_eps: float = 0.05  # low-speed guard for the slip-angle expressions


def kinematic_sim_params(**overrides) -> ModelParams:
    p = ModelParams(l_r=0.05, l_f=0.05, T=0.03, omega=0.2, a_max=1.0, delta_max=0.4, v_max=1.8)
    return replace(p, **overrides) if overrides else p


def pacejka_sim_params(**overrides) -> ModelParams:
    p = ModelParams(
        l_r=0.05, l_f=0.05, T=0.03, omega=0.2, mass=0.200,
        D_f=0.43, C_f=1.4, B_f=0.5, D_r=0.6, C_r=1.7, B_r=0.5,
        C_m1=0.9803, C_m2=0.0181, C_d=0.0275, C_roll=0.085,
        tau_max=1.0, delta_max=0.5, v_max=1.8,
    )
    return replace(p, **overrides) if overrides else p


def pacejka_hw_params(**overrides) -> ModelParams:
    p = ModelParams(
        l_r=0.038, l_f=0.052, T=0.026, omega=0.2, mass=0.181,
        D_f=0.65, C_f=1.5, B_f=5.2, D_r=1.0, C_r=1.45, B_r=8.5,
        C_m1=0.9803, C_m2=0.0181, C_d0=0.085, C_d1=0.01, C_d2=0.0275,
        tau_max=1.0, delta_max=0.4, v_max=2.0,
    )
    return replace(p, **overrides) if overrides else p


def _check_denominator(kappa, d):
    den = 1.0 - kappa * d
    if den <= 1e-9:
        raise FrenetSingularityError(f"1 - kappa*d = {den:.3e} <= 0")
    return den


def step_kinematic(x, u, kappa, p: ModelParams):
    """One Euler step of the kinematic bicycle; x = (sigma, d, phi, v)."""
    sigma, d, phi, v = x
    a, delta = u
    den = _check_denominator(kappa, d)
    beta = math.atan(p.l_r / (p.l_f + p.l_r) * math.tan(delta))
    c = math.cos(phi + beta)
    return np.array(
        [
            sigma + p.T * v * c / den,
            d + p.T * v * math.sin(phi + beta),
            phi + p.T * (v / p.l_f * math.sin(beta) - kappa * v * c / den),
            v + p.T * a,
        ]
    )


def _slip_angles(v_x, v_y, r, delta, p: ModelParams):
    # as published: both numerators use l_f, with the double-negative form
    alpha_f = -math.atan2(-v_y - p.l_f * r, abs(v_x)) + delta
    alpha_r = -math.atan2(-v_y + p.l_f * r, abs(v_x))
    return alpha_f, alpha_r


def step_pacejka(x, u, kappa, p: ModelParams, variant="sim"):
    """One Euler step of the Pacejka model; x = (sigma, d, phi, r, v_x, v_y)."""
    sigma, d, phi, r, v_x, v_y = x
    tau, delta = u
    if abs(v_x) <= p.v_eps:
        raise LowSpeedError(f"|v_x|={abs(v_x):.3f} <= v_eps={p.v_eps}")
    den = _check_denominator(kappa, d)
    alpha_f, alpha_r = _slip_angles(v_x, v_y, r, delta, p)

    s_num = v_x * math.cos(phi) - v_y * math.sin(phi)
    sigma_n = sigma + p.T * s_num / den
    d_n = d + p.T * (v_x * math.sin(phi) + v_y * math.cos(phi))
    phi_n = phi + p.T * (r - kappa * s_num / den)

    if variant == "sim":
        F_f = -p.D_f * math.sin(p.C_f * math.atan(p.B_f * alpha_f))
        F_r = -p.D_r * math.sin(p.C_r * math.atan(p.B_r * alpha_r))
        F_m = (p.C_m1 - p.C_m2 * v_x) * tau - p.C_d * v_x * v_x - p.C_roll
        r_n = r + p.T / p.I_z * (F_f * p.l_f * math.cos(delta) - F_r * p.l_r)
        vx_n = v_x + p.T / p.mass * (F_m - F_f * math.sin(delta) + p.mass * v_y * r)
        vy_n = v_y + p.T / p.mass * (F_r + F_f * math.cos(delta) - p.mass * v_x * r)
    elif variant == "hardware":
        F_fr = math.copysign(1.0, v_x) * (-p.C_d0 - p.C_d1 * v_x - p.C_d2 * v_x * v_x)
        F_m = (p.C_m1 - p.C_m2 * v_x) * tau
        F_fx = F_m * (1.0 - p.gamma)
        F_rx = F_m * p.gamma
        F_fy = p.D_f * math.sin(p.C_f * math.atan(p.B_f * alpha_f))
        F_ry = p.D_r * math.sin(p.C_r * math.atan(p.B_r * alpha_r))
        r_n = r + p.T / p.I_z * (
            F_fy * p.l_f * math.cos(delta) + F_fx * p.l_f * math.sin(delta) - F_ry * p.l_r
        )
        vx_n = v_x + p.T * (
            (F_m - F_fy * math.sin(delta) + F_fx * math.cos(delta) + p.mass * v_y * r) / p.mass
            + F_fr
        )
        vy_n = v_y + p.T / p.mass * (
            F_ry + F_fy * math.cos(delta) + F_fx * math.sin(delta) - p.mass * v_x * r
        )
    else:
        raise ValueError(f"unknown Pacejka variant {variant!r}")
    return np.array([sigma_n, d_n, phi_n, r_n, vx_n, vy_n])


class KinematicModel:
    n = 4
    m = 2
    state_names = ("sigma", "d", "phi", "v")
    input_names = ("a", "delta")
    d_index = 1
    speed_index = 3

    def __init__(self, params: ModelParams | None = None):
        self.params = params or kinematic_sim_params()

    def step(self, x, u, kappa):
        return step_kinematic(x, u, kappa, self.params)

    def input_bounds(self):
        p = self.params
        return (np.array([-p.a_max, -p.delta_max]), np.array([p.a_max, p.delta_max]))


class PacejkaModel:
    n = 6
    m = 2
    state_names = ("sigma", "d", "phi", "r", "v_x", "v_y")
    input_names = ("tau", "delta")
    d_index = 1
    speed_index = 4

    def __init__(self, params: ModelParams | None = None, variant="sim"):
        if variant not in ("sim", "hardware"):
            raise ValueError(f"unknown Pacejka variant {variant!r}")
        self.variant = variant
        default = pacejka_sim_params() if variant == "sim" else pacejka_hw_params()
        self.params = params or default

    def step(self, x, u, kappa):
        return step_pacejka(x, u, kappa, self.params, variant=self.variant)

    def input_bounds(self):
        p = self.params
        return (np.array([-p.tau_max, -p.delta_max]), np.array([p.tau_max, p.delta_max]))


def linearize(step, x, u, h=1e-6):
    """Jacobians (A, B) of a one-step map by central finite differences.

    `step` is any callable (x, u) -> x_next; curvature dependence must be
    baked in (e.g. lambda x, u: model.step(x, u, track.curvature(x[0]))) so
    the sigma column includes the kappa(sigma) sensitivity.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    n, m = len(x), len(u)
    fx = np.asarray(step(x, u), dtype=float)
    A = np.empty((len(fx), n))
    B = np.empty((len(fx), m))
    for j in range(n):
        dx = np.zeros(n)
        dx[j] = h
        A[:, j] = (step(x + dx, u) - step(x - dx, u)) / (2 * h)
    for j in range(m):
        du = np.zeros(m)
        du[j] = h
        B[:, j] = (step(x, u + du) - step(x, u - du)) / (2 * h)
    return A, B


def kinematic_jacobians(x, u, kappa, kappa_slope, p: ModelParams):
    """Closed-form Jacobians of step_kinematic, including d kappa/d sigma."""
    _, d, phi, v = x
    _, delta = u
    den = _check_denominator(kappa, d)
    rho = p.l_r / (p.l_f + p.l_r)
    t = math.tan(delta)
    beta = math.atan(rho * t)
    dbeta = rho * (1.0 + t * t) / (1.0 + rho * rho * t * t)
    c = math.cos(phi + beta)
    s = math.sin(phi + beta)
    T = p.T

    A = np.eye(4)
    B = np.zeros((4, 2))
    # sigma row
    A[0, 0] += T * v * c * d * kappa_slope / den**2
    A[0, 1] = T * v * c * kappa / den**2
    A[0, 2] = -T * v * s / den
    A[0, 3] = T * c / den
    B[0, 1] = -T * v * s * dbeta / den
    # d row
    A[1, 2] = T * v * c
    A[1, 3] = T * s
    B[1, 1] = T * v * c * dbeta
    # phi row (uses den + kappa*d == 1 to collapse the sigma sensitivity)
    A[2, 0] = -T * v * c * kappa_slope / den**2
    A[2, 1] = -T * v * c * kappa * kappa / den**2
    A[2, 2] += T * kappa * v * s / den
    A[2, 3] = T * (math.sin(beta) / p.l_f - kappa * c / den)
    B[2, 1] = T * v * (math.cos(beta) / p.l_f + kappa * s / den) * dbeta
    # v row
    B[3, 0] = T
    return A, B
