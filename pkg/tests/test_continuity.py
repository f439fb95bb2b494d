import dataclasses
import math

import numpy as np
import pytest
from conftest import real_instance

from supslope import continuity as co
from supslope import exprparse as ex
from supslope import geometry as geo
from supslope import operators as ops
from supslope import symfunc as sf
from supslope.errors import AdmissibilityError, ContinuityFailure

AMP = 0.02  # largest round amplitude keeping I + hess(u*) inside Gamma_2


def manufactured(N, amp=AMP, fspec=None, discrete=False):
    grid = geo.TorusGrid("real", 2, N)
    fspec = sf.sigma_k(2, 2) if fspec is None else fspec
    u_star = amp * ex.field("sin(2*pi*x1)*cos(2*pi*x2)", grid)
    base = ops.ProblemInstance(grid, np.eye(2), np.eye(2), 0.0, fspec)
    if discrete:
        psi = np.log(ops.apply_F(base, u_star))
    else:
        psi = ops.manufactured_psi(grid, np.eye(2), np.eye(2), fspec, u_star)
    return base.with_psi(psi), u_star


def recovery_error(sol, u_star):
    d = sol.u - u_star
    return float(np.abs(d - d.mean()).max())


def test_trivial_instance():
    inst = real_instance()
    sol = co.solve(inst)
    assert np.all(sol.u == 0) and sol.c == 0.0
    assert [s.t for s in sol.trace.steps] == [0.0, 1.0]
    assert sol.trace.total_newton == 0


def test_manufactured_recovery_and_order():
    errs = []
    for N in (64, 128):
        inst, u_star = manufactured(N)
        sol = co.solve(inst)
        assert abs(np.mean(sol.u)) <= 1e-12
        errs.append(recovery_error(sol, u_star))
    assert errs[0] <= 5e-3
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.15)


def test_discrete_manufactured_is_exact():
    inst, u_star = manufactured(32, discrete=True)
    sol = co.solve(inst)
    assert recovery_error(sol, u_star) <= 1e-10
    assert abs(sol.c) <= 1e-10


def test_solution_properties():
    inst, _ = manufactured(32)
    opts = co.SolverOptions()
    sol = co.solve(inst, opts=opts)
    ts = sol.trace.ts
    assert ts[-1] == 1.0 and np.all(np.diff(ts) > 0)
    # path consistency at every snapshot
    assert all(s.residual <= opts.tol for s in sol.trace.steps)
    assert all(s.margin >= opts.margin_floor for s in sol.trace.steps)
    # e^{-psi} F[u] is constant and equals e^c
    v = ops.normalized_values(inst, sol.u)
    assert np.abs(v / math.exp(sol.c) - 1).max() <= opts.tol
    assert co.solution_oscillation(inst, sol.u) <= 2 * opts.tol
    u, c, trace = sol
    assert c == sol.c and trace is sol.trace


def test_newton_identity_step():
    inst = real_instance()
    path = co.ContinuityPath.from_seed(inst, inst.zero())
    state = path.initial_state()
    new, beta = co.newton_step(path, state, co.SolverOptions())
    assert np.all(new.phi == 0) and new.c == 0.0 and beta == 1.0


def test_newton_linear_problem_one_step():
    inst, _ = manufactured(32, fspec=sf.sigma_k(1, 2), discrete=True)
    path = co.ContinuityPath.from_seed(inst, inst.zero())
    state = dataclasses.replace(path.initial_state(), t=1.0)
    _, state.residual = path.residual(state.phi, state.c, 1.0)
    opts = co.SolverOptions(krylov_factor=0.0)  # Krylov tolerance at its 1e-13 floor
    new, beta = co.newton_step(path, state, opts)
    assert beta == 1.0
    assert new.residual <= 1e-11


def test_newton_quadratic_tail():
    inst, _ = manufactured(32)
    path = co.ContinuityPath.from_seed(inst, inst.zero())
    state = dataclasses.replace(path.initial_state(), t=1.0)
    _, state.residual = path.residual(state.phi, state.c, 1.0)
    opts = co.SolverOptions()
    res = [state.residual]
    while state.residual > opts.tol:
        state, _ = co.newton_step(path, state, opts)
        res.append(state.residual)
    pairs = [(a, b) for a, b in zip(res, res[1:]) if a <= 1e-3 and b > 1e-13]
    assert pairs
    assert all(b <= 10 * a * a for a, b in pairs)


def test_linearization_is_positive_definite():
    inst, u_star = manufactured(16)
    P = ops.linearize(inst, u_star)
    assert np.all(np.linalg.eigvalsh(P) > 0)


# --- c_t bounds ---------------------------------------------------------------

def test_ct_bounds_trivial():
    inst = real_instance()
    sol = co.solve(inst)
    assert co.verify_ct_bounds(sol.trace, co.c_bar(inst, inst.zero()), co.c_lower(inst, inst.zero()), 0.0)


def test_ct_bounds_manufactured_and_corrupted():
    inst, _ = manufactured(32)
    u0 = inst.zero()
    sol = co.solve(inst)
    cbar, clow = co.c_bar(inst, u0), co.c_lower(inst, u0)
    tol = co.ct_tolerance(inst.grid)
    assert tol == pytest.approx(1e-6 + 10 / 32**2)
    assert co.verify_ct_bounds(sol.trace, cbar, clow, tol)
    bad = co.ContinuityTrace(list(sol.trace.steps))
    last = bad.steps[-1]
    bad.steps[-1] = dataclasses.replace(last, c=last.c + 2 * abs(cbar) + 1.0)
    assert not co.verify_ct_bounds(bad, cbar, clow, tol)


def test_trace_csv():
    inst, _ = manufactured(16)
    text = co.solve(inst).trace.to_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "t,c_t,newton_iters,residual,margin,damping_min"
    assert float(lines[-1].split(",")[0]) == 1.0


# --- uniqueness ---------------------------------------------------------------

def test_uniqueness_probe():
    inst, _ = manufactured(32)
    z = inst.zero()
    same = co.uniqueness_probe(inst, z, z)
    assert same.deviation <= 1e-12 and same.delta_c == 0.0
    bump = 0.05 * ex.field("sin(2*pi*x2)", inst.grid)
    # 0.05 sin is outside Gamma_2 against theta = I, so use a smaller admissible bump
    with pytest.raises(AdmissibilityError):
        co.solve(inst, bump)
    probe = co.uniqueness_probe(inst, z, 0.2 * bump)
    assert probe.deviation <= 1e-6 and probe.delta_c <= 1e-8
    shifted = co.uniqueness_probe(inst, z, z + 3.0)
    assert shifted.deviation <= 1e-12 and shifted.delta_c <= 1e-12


# --- failure ------------------------------------------------------------------

def test_failure_carries_state_and_trace():
    # a tall localized right-hand side closes the gap between sup F and inf F_inf
    bump = "((1+cos(2*pi*(x1-0.5)))/2)^4*((1+cos(2*pi*(x2-0.5)))/2)^4"
    inst = real_instance(N=8, theta=np.diag([0.2, 1.0]), psi=f"log(1 + 1e6*{bump})", fspec=sf.j_quotient(2))
    with pytest.raises(ContinuityFailure) as err:
        co.solve(inst, opts=co.SolverOptions(min_dt=1e-2))
    exc = err.value
    assert exc.state.t < 1.0
    assert exc.trace.steps and exc.trace.steps[0].t == 0.0
    assert exc.trace.rejected > 0


def test_inadmissible_seed_rejected():
    inst = real_instance(N=16)
    with pytest.raises(AdmissibilityError):
        co.solve(inst, 0.05 * ex.field("cos(2*pi*x1)", inst.grid))
