"""Built-in property suites run by ``supslope selftest``.

Each suite returns a list of Check records; all sampling uses an explicit seed.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import List

import numpy as np

from . import exprparse as ex
from . import geometry as geo
from . import jequation as jq
from . import symfunc as sf


@dataclass
class Check:
    name: str
    worst: float
    limit: float
    passed: bool

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark} {self.name}: worst {self.worst:.3e} (limit {self.limit:.0e})"


def variants(n: int):
    """Every SigmaK and Quotient variant in dimension n."""
    out = [sf.sigma_k(k, n) for k in range(1, n + 1)]
    out += [sf.quotient(k, l, n) for k in range(1, n + 1) for l in range(0, k)]
    return out


def cone_points(rng, k: int, n: int, count: int, min_margin=0.05):
    """Random points of Gamma_k with min_i S_i >= min_margin (descending order)."""
    pts = []
    while len(pts) < count:
        lam = rng.normal(size=(4 * count, n)) * rng.uniform(0.3, 2.0, size=(4 * count, 1))
        lam += rng.uniform(0.0, 2.5, size=(4 * count, 1))
        _, margin = sf.in_cone(k, lam)
        pts.extend(lam[margin >= min_margin])
    return sf.as_eigentuple(np.array(pts[:count]))


def symfunc_suite(points=1000, dims=(2, 3, 4), seed=0) -> List[Check]:
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(["symmetry", "monotonicity", "concavity", "gradient", "f_infty", "dichotomy"], 0.0)
    mono_ok = True
    for n in dims:
        perms = list(itertools.permutations(range(n)))
        for spec in variants(n):
            lam = cone_points(rng, spec.cone, n, points)
            f, grad = sf.eval_with_grad(spec, lam)
            # symmetry under a random permutation per point
            pidx = np.array([perms[i] for i in rng.integers(len(perms), size=points)])
            fp = sf.eval_f(spec, np.take_along_axis(lam, pidx, 1))
            worst["symmetry"] = max(worst["symmetry"], float(np.max(np.abs(fp - f) / np.abs(f))))
            # strict monotonicity: positive gradient and increase along each axis
            mono_ok &= bool(np.all(grad > 0))
            for i in range(n):
                step = lam.copy()
                step[:, i] += 1e-3
                mono_ok &= bool(np.all(sf.eval_f(spec, step) > f))
            # midpoint concavity on pairs inside the cone
            other = cone_points(rng, spec.cone, n, points)
            mid = sf.eval_f(spec, 0.5 * (lam + other))
            slack = 0.5 * (f + sf.eval_f(spec, other)) - mid
            worst["concavity"] = max(worst["concavity"], float(np.max(slack)))
            # five-point central differences
            for i in range(n):
                h = 2e-5 * (1.0 + np.abs(lam[:, i]))

                def at(m):
                    x = lam.copy()
                    x[:, i] += m * h
                    return sf.eval_f(spec, x)

                fd = (at(-2) - 8 * at(-1) + 8 * at(1) - at(2)) / (12 * h)
                rel = np.abs(fd - grad[:, i]) / np.maximum(np.abs(grad[:, i]), 1e-300)
                worst["gradient"] = max(worst["gradient"], float(np.max(rel)))
            finite = sf.dichotomy_classify(spec) == sf.FINITE
            closed = sf.f_infty(spec, lam)
            if finite:
                numeric = sf.f_infty_numeric(spec, lam)
                rel = np.abs(closed - numeric) / np.abs(closed)
                worst["f_infty"] = max(worst["f_infty"], float(np.max(rel)))
            consistent = np.all(np.isfinite(closed)) if finite else np.all(np.isinf(closed))
            if not consistent:
                worst["dichotomy"] = 1.0
    limits = {"symmetry": 1e-12, "concavity": 1e-10, "gradient": 1e-6, "f_infty": 1e-6, "dichotomy": 0.5}
    checks = [Check(f"symfunc {k}", worst[k], lim, worst[k] <= lim) for k, lim in limits.items()]
    checks.append(Check("symfunc monotonicity", 0.0 if mono_ok else 1.0, 0.5, mono_ok))
    return checks


def _random_ast(rng, depth):
    if depth == 0 or rng.random() < 0.3:
        r = rng.integers(3)
        if r == 0:
            return ex.Num(float(rng.integers(0, 20)) / 4)
        if r == 1:
            return ex.Var(int(rng.integers(1, 4)))
        return ex.Pi()
    r = rng.integers(4)
    if r == 0:
        return ex.Neg(_random_ast(rng, depth - 1))
    if r == 1:
        return ex.Call(str(rng.choice(["sin", "cos", "exp", "abs"])), _random_ast(rng, depth - 1))
    return ex.BinOp(str(rng.choice(list("+-*/^"))), _random_ast(rng, depth - 1), _random_ast(rng, depth - 1))


def exprparse_suite(count=500, seed=0) -> List[Check]:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(count):
        node = _random_ast(rng, 4)
        text = ex.to_text(node)
        if ex.parse(text) != node or ex.to_text(ex.parse(text)) != text:
            bad += 1
    return [Check("exprparse round trip", float(bad), 0.5, bad == 0)]


def geometry_suite(seed=0) -> List[Check]:
    rng = np.random.default_rng(seed)
    checks = []
    worst = 0.0
    for n, cplx in ((2, False), (3, False), (2, True), (3, True)):
        M = rng.normal(size=(500, n, n)) + (1j * rng.normal(size=(500, n, n)) if cplx else 0)
        A = M + np.conj(np.swapaxes(M, -1, -2))
        lam, V = geo.jacobi_eigh(A)
        rec = V @ (lam[..., None] * np.conj(np.swapaxes(V, -1, -2)))
        worst = max(worst, float(np.abs(rec - A).max()))
    checks.append(Check("jacobi reconstruction", worst, 1e-12, worst <= 1e-12))
    grid = geo.TorusGrid("complex", 1, 16)
    u = rng.normal(size=grid.shape)
    H = geo.complex_hessian(grid, u)
    herm = float(np.abs(H - np.conj(np.swapaxes(H, -1, -2))).max())
    checks.append(Check("complex hessian hermitian", herm, 1e-14, herm <= 1e-14))
    return checks


def wedge_suite(seed=0) -> List[Check]:
    """Reciprocity of the wedge ratio against the coefficient of t in det(chi + t omega)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n in (1, 2, 3):
        for _ in range(50):
            X = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
            Y = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
            chi = X @ X.conj().T + 0.5 * np.eye(n)
            omega = Y @ Y.conj().T + 0.5 * np.eye(n)
            ts = np.arange(n + 1, dtype=float)
            dets = [np.linalg.det(chi + t * omega).real for t in ts]
            coeffs = np.polyfit(ts, dets, n)
            ratio = coeffs[-2] / (n * coeffs[-1])
            lam = geo.generalized_eigs(chi[None], omega[None])[0]
            q = sf.eval_f(sf.j_quotient(n), lam)
            worst = max(worst, abs(ratio * q - 1.0))
            worst = max(worst, abs(jq.wedge_ratio_from_eigs(lam) * q - 1.0))
    return [Check("wedge reciprocity", worst, 1e-10, worst <= 1e-10)]


def run_all(seed=0) -> List[Check]:
    return symfunc_suite(seed=seed) + exprparse_suite(seed=seed) + geometry_suite(seed) + wedge_suite(seed)


def summarize(checks) -> bool:
    return all(c.passed for c in checks) and not any(math.isnan(c.worst) for c in checks)
