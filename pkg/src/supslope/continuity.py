"""Continuity method F[u_bar + phi_t] = exp(psi_t + c_t), psi_t = (1-t) psi_bar + t psi.

Each level t is solved by damped inexact Newton on the bordered system for
(phi, c) with mean(phi) = 0; the Krylov solver is preconditioned by the
constant-coefficient operator with averaged coefficients (diagonal in
Fourier space).
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from . import operators as ops
from .errors import AdmissibilityError, ContinuityFailure, NewtonFailure

log = logging.getLogger(__name__)


@dataclass
class SolverOptions:
    tol: float = 1e-10
    dt0: float = 0.1
    min_dt: float = 1e-4
    max_newton: int = 30
    lin_iters: int = 400
    krylov_factor: float = 1e-2
    beta_min: float = 2.0**-12
    margin_floor: float = 1e-8


@dataclass
class ContinuityState:
    t: float
    phi: np.ndarray
    c: float
    residual: float
    margin: float


@dataclass
class StepRecord:
    t: float
    c: float
    newton_iters: int
    residual: float
    margin: float
    damping_min: float


@dataclass
class ContinuityTrace:
    steps: List[StepRecord] = field(default_factory=list)
    total_newton: int = 0
    rejected: int = 0

    @property
    def ts(self):
        return np.array([s.t for s in self.steps])

    @property
    def cs(self):
        return np.array([s.c for s in self.steps])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "c_t", "newton_iters", "residual", "margin", "damping_min"])
        for s in self.steps:
            w.writerow([repr(s.t), repr(s.c), s.newton_iters, repr(s.residual), repr(s.margin), repr(s.damping_min)])
        return buf.getvalue()


@dataclass
class ContinuityPath:
    """The homotopy from the seed u_bar (solved at t = 0) to the target psi."""

    inst: ops.ProblemInstance
    u_bar: np.ndarray
    psi_bar: np.ndarray

    @classmethod
    def from_seed(cls, inst, u0):
        u0 = np.asarray(u0, dtype=float)
        ok, margin = ops.admissible(inst, u0)
        if not ok or margin <= ops.DEGENERATE_MARGIN:
            p = ops.pointwise(inst, u0, values=False, check=False)
            node, worst = ops._worst(p.margin)
            raise AdmissibilityError(node, worst)
        return cls(inst, u0, np.log(ops.apply_F(inst, u0)))

    def psi_t(self, t):
        return (1.0 - t) * self.psi_bar + t * self.inst.psi

    def residual(self, phi, c, t, F=None):
        """r = F / exp(psi_t + c) - 1 and its max norm."""
        if F is None:
            F = ops.apply_F(self.inst, self.u_bar + phi)
        r = F * np.exp(-self.psi_t(t) - c) - 1.0
        return r, float(np.max(np.abs(r)))

    def initial_state(self):
        phi = np.zeros_like(self.u_bar)
        _, margin = ops.admissible(self.inst, self.u_bar)
        _, res = self.residual(phi, 0.0, 0.0)
        return ContinuityState(0.0, phi, 0.0, res, margin)


def _bordered_solve(path, P, E, r, opts, res):
    """Solve (1/E) L dphi - dc = -r, mean(dphi) = 0 by preconditioned GMRES."""
    inst = path.inst
    op = ops.linear_operator(inst, P)
    shape = inst.grid.shape
    m = inst.grid.size
    inv_E = 1.0 / E
    sym = op.mean_symbol(inv_E)[..., : shape[-1] // 2 + 1]
    sym.flat[0] = 1.0
    inv_sym = 1.0 / sym
    inv_sym.flat[0] = 0.0
    axes = tuple(range(len(shape)))

    def matvec(x):
        dphi = x[:m].reshape(shape)
        out = np.empty(m + 1)
        out[:m] = (inv_E * op(dphi)).ravel() - x[m]
        out[m] = dphi.mean()
        return out

    def precond(y):
        rr = y[:m].reshape(shape)
        rbar = rr.mean()
        dphi = np.fft.irfftn(np.fft.rfftn(rr - rbar) * inv_sym, s=shape, axes=axes) + y[m]
        out = np.empty(m + 1)
        out[:m] = dphi.ravel()
        out[m] = -rbar
        return out

    A = LinearOperator((m + 1, m + 1), matvec=matvec, dtype=float)
    M = LinearOperator((m + 1, m + 1), matvec=precond, dtype=float)
    rhs = np.concatenate([-r.ravel(), [0.0]])
    rtol = min(0.1, max(opts.krylov_factor * res, 1e-13))
    x, info = gmres(A, rhs, M=M, rtol=rtol, atol=0.0, restart=60, maxiter=max(1, opts.lin_iters // 60))
    true_res = np.linalg.norm(matvec(x) - rhs) / max(np.linalg.norm(rhs), 1e-300)
    if info != 0 and true_res > 10 * rtol:
        raise NewtonFailure(f"Krylov solve stalled (relative residual {true_res:.2e})", reason="linear")
    return x[:m].reshape(shape), float(x[m])


def newton_step(path: ContinuityPath, state: ContinuityState, opts: SolverOptions):
    """One damped Newton update at fixed t; returns (new_state, damping)."""
    inst = path.inst
    u = path.u_bar + state.phi
    pw = ops.pointwise(inst, u, derivative=True)
    E = np.exp(path.psi_t(state.t) + state.c)
    r, res = path.residual(state.phi, state.c, state.t, F=pw.F)
    if res <= opts.tol:
        return replace(state, residual=res), 1.0
    dphi, dc = _bordered_solve(path, pw.P, E, r, opts, res)
    beta = 1.0
    while beta >= opts.beta_min:
        phi = state.phi + beta * dphi
        phi -= phi.mean()
        c = state.c + beta * dc
        ok, margin = ops.admissible(inst, path.u_bar + phi)
        if ok and margin >= opts.margin_floor:
            _, new_res = path.residual(phi, c, state.t)
            if new_res <= (1.0 - 1e-4 * beta) * res:
                return ContinuityState(state.t, phi, c, new_res, margin), beta
        beta *= 0.5
    raise NewtonFailure(f"no admissible damping >= {opts.beta_min:g} reduces the residual {res:.3e}", reason="damping")


def solve_level(path, state, t, opts):
    """Newton iteration at level t starting from ``state``; returns (state, iters, damping_min)."""
    cur = replace(state, t=t)
    _, cur.residual = path.residual(cur.phi, cur.c, t)
    damping_min = 1.0
    for it in range(opts.max_newton + 1):
        if cur.residual <= opts.tol:
            return cur, it, damping_min
        if it == opts.max_newton:
            break
        try:
            cur, beta = newton_step(path, cur, opts)
        except NewtonFailure as exc:
            exc.iterations = it + 1
            raise
        damping_min = min(damping_min, beta)
    raise NewtonFailure(f"Newton did not converge in {opts.max_newton} iterations (residual {cur.residual:.3e})",
                        iterations=opts.max_newton, reason="budget")


@dataclass
class Solution:
    u: np.ndarray
    c: float
    trace: ContinuityTrace
    state: ContinuityState
    path: ContinuityPath

    def __iter__(self):
        # (u, c, trace) unpacking
        return iter((self.u, self.c, self.trace))


def solve(inst: ops.ProblemInstance, u0=None, opts: Optional[SolverOptions] = None) -> Solution:
    """Follow the continuity path from the seed u0 to t = 1.

    Raises ContinuityFailure (carrying the last good state and the trace)
    when the step size falls below ``opts.min_dt``.
    """
    opts = opts or SolverOptions()
    u0 = inst.zero() if u0 is None else np.asarray(u0, dtype=float)
    path = ContinuityPath.from_seed(inst, u0)
    state = path.initial_state()
    trace = ContinuityTrace()
    trace.steps.append(StepRecord(0.0, 0.0, 0, state.residual, state.margin, 1.0))
    dt = opts.dt0
    clean_streak = 0
    while state.t < 1.0:
        # jump straight to t = 1 if the current state already solves it
        _, res1 = path.residual(state.phi, state.c, 1.0)
        t_new = 1.0 if res1 <= opts.tol else min(1.0, state.t + dt)
        try:
            new, iters, damping_min = solve_level(path, state, t_new, opts)
        except (NewtonFailure, AdmissibilityError) as exc:
            trace.total_newton += getattr(exc, "iterations", 0)
            trace.rejected += 1
            dt *= 0.5
            clean_streak = 0
            log.debug("step to t=%.6g rejected (%s); dt -> %.3g", t_new, exc, dt)
            if dt < opts.min_dt:
                raise ContinuityFailure(
                    f"continuity step underflow at t={state.t:.6g} (last failure: {exc})", state, trace
                ) from exc
            continue
        trace.total_newton += iters
        trace.steps.append(StepRecord(new.t, new.c, iters, new.residual, new.margin, damping_min))
        state = new
        if damping_min == 1.0:
            clean_streak += 1
            if clean_streak >= 2:
                dt = min(2 * dt, 1.0)
                clean_streak = 0
        else:
            clean_streak = 0
    return Solution(path.u_bar + state.phi, state.c, trace, state, path)


def c_bar(inst: ops.ProblemInstance, u0) -> float:
    """log max e^{-psi} F[u0], the upper constant of the super-solution seed."""
    return float(np.log(np.max(ops.normalized_values(inst, u0))))


def c_lower(inst: ops.ProblemInstance, u0) -> float:
    """||psi_bar||_inf + ||psi||_inf with psi_bar = log F[u0]."""
    psi_bar = np.log(ops.apply_F(inst, u0))
    return float(np.max(np.abs(psi_bar)) + np.max(np.abs(inst.psi)))


def verify_ct_bounds(trace: ContinuityTrace, cbar: float, C_lower: float, tol: float = 1e-6) -> bool:
    """Check -C_lower - tol <= c_t <= t*cbar + tol for every snapshot."""
    return all(-C_lower - tol <= s.c <= s.t * cbar + tol for s in trace.steps)


def ct_tolerance(grid) -> float:
    """Slack for the c_t bounds: solver tolerance plus discretization error."""
    return 1e-6 + 10 * grid.h**2


@dataclass(frozen=True)
class UniquenessProbe:
    deviation: float
    delta_c: float


def uniqueness_probe(inst, u0_a, u0_b, opts=None, c_tol=1e-8) -> UniquenessProbe:
    """Solve from two seeds; the solutions must differ by a constant."""
    a = solve(inst, u0_a, opts)
    b = solve(inst, u0_b, opts)
    diff = a.u - b.u
    dev = float(np.max(np.abs(diff - diff.mean())))
    dc = abs(a.c - b.c)
    if not dc <= c_tol:
        raise AssertionError(f"normalizing constants differ by {dc:.3e} > {c_tol:g}")
    return UniquenessProbe(dev, dc)


def sup_normalized(phi):
    """Report-side normalization sup phi = 0."""
    return phi - np.max(phi)


def solution_oscillation(inst, u) -> float:
    """Relative oscillation of e^{-psi} F[u] (zero for an exact solution)."""
    v = ops.normalized_values(inst, u)
    return float((v.max() - v.min()) / v.mean())

