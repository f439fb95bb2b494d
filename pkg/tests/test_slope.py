import json
import math

import numpy as np
import pytest
from conftest import j_quotient_instance, real_instance

from supslope import continuity as co
from supslope import exprparse as ex
from supslope import operators as ops
from supslope import slope
from supslope import symfunc as sf
from supslope.errors import AdmissibilityError

PSI = "0.3*sin(2*pi*x1)"


def test_trivial_instance_has_slope_one():
    inst = real_instance(fspec=sf.sigma_k(2, 2))
    assert slope.supslope_minimax(inst, 60) <= 1 + 1e-6
    assert slope.supslope_maximin(inst, 60) >= 1 - 1e-6


def test_constant_shift_scales_by_exp():
    a = slope.supslope_minimax(real_instance(psi=PSI), 60)
    b = slope.supslope_minimax(real_instance(psi=PSI + " + 0.7"), 60)
    assert b / a == pytest.approx(math.exp(-0.7), rel=1e-10)
    a = slope.supslope_maximin(real_instance(psi=PSI), 60)
    b = slope.supslope_maximin(real_instance(psi=PSI + " - 1.3"), 60)
    assert b / a == pytest.approx(math.exp(1.3), rel=1e-10)


def test_brackets_solver_constant():
    inst = real_instance(N=16, psi=PSI)
    sol = co.solve(inst)
    rep = slope.slope_report(inst, 100, solution=sol.u)
    ec = math.exp(sol.c)
    assert rep.sigma_maximin_lower <= rep.sigma_minimax_upper + 1e-9
    assert rep.sigma_maximin_lower * (1 - 1e-3) <= ec <= rep.sigma_minimax_upper * (1 + 1e-3)
    assert rep.sigma_from_solution == pytest.approx(ec, rel=1e-8)
    assert rep.gap == pytest.approx(abs(rep.sigma_from_solution - rep.sigma_minimax_upper))


def test_minimax_monotone_in_budget():
    inst = real_instance(N=16, psi=PSI)
    vals = [slope.supslope_minimax(inst, b) for b in (0, 5, 20, 60)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    est = slope.optimize_slope(inst, +1, 60)
    assert all(b <= a for a, b in zip(est.history, est.history[1:]))


def test_estimators_bounded_by_seed():
    inst = real_instance(N=16, psi=PSI)
    v0 = ops.normalized_values(inst, inst.zero())
    assert slope.supslope_minimax(inst, 20) <= v0.max()
    assert slope.supslope_maximin(inst, 20) >= v0.min()


def test_best_point_certifies_value():
    inst = real_instance(N=16, psi=PSI)
    est = slope.optimize_slope(inst, +1, 40)
    assert est.value == pytest.approx(ops.normalized_values(inst, est.u).max(), rel=1e-12)


def test_restarts_never_worse():
    inst = real_instance(N=16, psi=PSI)
    one = slope.supslope_minimax(inst, 30)
    three = slope.supslope_minimax(inst, 30, restarts=3, rng_seed=4)
    assert three <= one


def test_j_quotient_slope():
    inst = j_quotient_instance(N=16, psi="0.2*cos(2*pi*x2)")
    sol = co.solve(inst)
    rep = slope.slope_report(inst, 100, solution=sol.u)
    assert rep.sigma_maximin_lower * (1 - 1e-3) <= math.exp(sol.c) <= rep.sigma_minimax_upper * (1 + 1e-3)


def test_inadmissible_seed_raises():
    inst = real_instance(N=16)
    with pytest.raises(AdmissibilityError):
        slope.supslope_minimax(inst, 10, seed=0.05 * ex.field("cos(2*pi*x1)", inst.grid))


def test_report_json_shape():
    rep = slope.SlopeReport(1.2, 0.9, None, 4, 50)
    d = rep.to_dict()
    assert set(d) >= {"sigma_from_solution", "sigma_minimax_upper", "sigma_maximin_lower", "gap"}
    assert d["gap"] == pytest.approx(0.3)
    json.dumps(d)
    assert slope.SlopeReport(math.inf, 1.0).to_dict()["sigma_minimax_upper"] == "inf"


def test_fourier_family_adjoint():
    inst = real_instance(N=16)
    fam = slope.FourierFamily(inst.grid, 3)
    rng = np.random.default_rng(0)
    z = rng.normal(size=fam.size)
    G = rng.normal(size=inst.grid.shape)
    # <G, synth(z)> = <pullback(G), z> for the real-linear synthesis map
    assert np.sum(G * fam.synth(z)) == pytest.approx(float(fam.pullback(G) @ z), rel=1e-10)
