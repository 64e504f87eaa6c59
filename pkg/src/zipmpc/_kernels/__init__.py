"""Kernel backend selection and thin allocation wrappers.

The hot loops (dynamics rollouts, Jacobians, Riccati sweeps, cost sums)
exist twice: a compiled Cython extension (`_core`) and a pure-numpy
reference (`_pyref`).  The compiled one is preferred when importable;
set ZIPMPC_BACKEND=python or =cython to force a choice.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import _pyref

KIND_KINEMATIC = 0
KIND_PACEJKA_SIM = 1
KIND_PACEJKA_HW = 2

_choice = os.environ.get("ZIPMPC_BACKEND", "").strip().lower()
if _choice not in ("", "python", "cython"):
    raise ImportError(f"ZIPMPC_BACKEND must be 'python' or 'cython', got {_choice!r}")

_impl = None
if _choice != "python":
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = None
        if _choice == "cython":
            raise ImportError(
                "ZIPMPC_BACKEND=cython but the compiled extension is not available; "
                "reinstall with Cython present or unset ZIPMPC_BACKEND"
            )
if _impl is None:
    _impl = _pyref

BACKEND = "cython" if _impl is not _pyref else "python"


def implementation(name=None):
    """Return a backend module by name (None -> the active one)."""
    if name is None:
        return _impl
    if name == "python":
        return _pyref
    if name == "cython":
        from . import _core  # noqa: F811

        return _core
    raise ValueError(f"unknown backend {name!r}")


def pack_params(p) -> np.ndarray:
    """Flatten a dynamics.ModelParams into the kernel parameter vector."""
    out = np.zeros(_pyref.N_PARAMS)
    out[_pyref.P_T] = p.T
    out[_pyref.P_LR] = p.l_r
    out[_pyref.P_LF] = p.l_f
    out[_pyref.P_MASS] = p.mass
    out[_pyref.P_IZ] = p.I_z
    out[_pyref.P_GAMMA] = p.gamma
    out[_pyref.P_DF] = p.D_f
    out[_pyref.P_CF] = p.C_f
    out[_pyref.P_BF] = p.B_f
    out[_pyref.P_DR] = p.D_r
    out[_pyref.P_CR] = p.C_r
    out[_pyref.P_BR] = p.B_r
    out[_pyref.P_CM1] = p.C_m1
    out[_pyref.P_CM2] = p.C_m2
    out[_pyref.P_CD] = p.C_d
    out[_pyref.P_CD0] = p.C_d0
    out[_pyref.P_CD1] = p.C_d1
    out[_pyref.P_CD2] = p.C_d2
    out[_pyref.P_CROLL] = p.C_roll
    out[_pyref.P_VEPS] = p.v_eps
    return out


@dataclass(frozen=True)
class KernelSpec:
    """Everything a backend needs to evaluate one vehicle model on one track."""

    kind: int
    params: np.ndarray
    table: np.ndarray
    spacing: float
    seam: float
    length: float

    @property
    def n(self):
        return 6 if self.kind == KIND_KINEMATIC else 8

    @property
    def m(self):
        return 2


def spec_for(kind, params, track) -> KernelSpec:
    return KernelSpec(
        kind=kind,
        params=pack_params(params),
        table=np.ascontiguousarray(track.table, dtype=np.float64),
        spacing=track.table_spacing,
        seam=track._seam,
        length=track.total_length,
    )


def step(spec, x, u, impl=None):
    impl = impl or _impl
    out = np.empty(spec.n)
    status = impl.step(
        spec.kind, spec.params, spec.table, spec.spacing, spec.seam, spec.length, x, u, out
    )
    return out, status


def rollout(spec, x0, U, impl=None):
    impl = impl or _impl
    X = np.empty((U.shape[0] + 1, spec.n))
    status = impl.rollout(
        spec.kind, spec.params, spec.table, spec.spacing, spec.seam, spec.length,
        np.ascontiguousarray(x0, dtype=np.float64), U, X,
    )
    return X, status


def rollout_feedback(spec, Xref, Uref, kff, K, alpha, lo, hi, impl=None):
    impl = impl or _impl
    X = np.empty_like(Xref)
    U = np.empty_like(Uref)
    status = impl.rollout_feedback(
        spec.kind, spec.params, spec.table, spec.spacing, spec.seam, spec.length,
        Xref, Uref, kff, K, alpha, lo, hi, X, U,
    )
    return X, U, status


def linearize_traj(spec, X, U, h=1e-6, analytic=True, impl=None):
    impl = impl or _impl
    N1 = U.shape[0]
    A = np.empty((N1, spec.n, spec.n))
    B = np.empty((N1, spec.n, spec.m))
    status = impl.linearize_traj(
        spec.kind, spec.params, spec.table, spec.spacing, spec.seam, spec.length,
        X, U, h, 1 if analytic else 0, A, B,
    )
    return A, B, status


def eval_cost(X, U, q, p, penalty, impl=None):
    impl = impl or _impl
    mu, d_idx, w_tight, v_idx, v_cap = penalty
    return impl.eval_cost(X, U, q, p, mu, d_idx, w_tight, v_idx, v_cap)


def quadratize(X, U, q, p, penalty, impl=None):
    impl = impl or _impl
    mu, d_idx, w_tight, v_idx, v_cap = penalty
    N1, m = U.shape
    n = X.shape[1]
    hx = np.empty((N1, n))
    hu = np.empty((N1, m))
    gx = np.empty((N1, n))
    gu = np.empty((N1, m))
    impl.quadratize(X, U, q, p, mu, d_idx, w_tight, v_idx, v_cap, hx, hu, gx, gu)
    return hx, hu, gx, gu


def backward_sweep(A, B, hx, hu, gx, gu, U, lo, hi, reg, impl=None):
    impl = impl or _impl
    N1, n, m = B.shape
    kff = np.empty((N1, m))
    K = np.empty((N1, m, n))
    mask = np.empty((N1, m), dtype=np.uint8)
    dv = np.zeros(2)
    status = impl.backward_sweep(A, B, hx, hu, gx, gu, U, lo, hi, reg, kff, K, mask, dv)
    return kff, K, mask, dv, status


def lqr_adjoint(A, B, hx, hu, mask, gX, gU, reg, impl=None):
    impl = impl or _impl
    N1, n, m = B.shape
    dX = np.empty((N1 + 1, n))
    dU = np.empty((N1, m))
    status = impl.lqr_adjoint(A, B, hx, hu, mask, gX, gU, reg, dX, dU)
    return dX, dU, status
