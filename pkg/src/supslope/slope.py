"""Two-sided numerical estimates of the sup-slope.

The minimax side minimizes max e^{-psi} F[u] and the maximin side maximizes
min e^{-psi} F[u], both over u = seed + (trigonometric polynomial with
frequencies <= ``modes`` per axis). The max/min is replaced by a log-sum-exp
on log scale whose sharpness doubles every ``sharpen_every`` iterations
(or earlier, once the smoothed problem stops improving);
descent is L-BFGS with Armijo backtracking that rejects inadmissible points.
Every admissible iterate is a feasible point, so the best value seen is a
valid upper (resp. lower) bound.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import operators as ops
from .errors import AdmissibilityError


@dataclass
class SlopeReport:
    sigma_minimax_upper: float
    sigma_maximin_lower: float
    sigma_from_solution: Optional[float] = None
    modes: int = 0
    budget: int = 0

    @property
    def gap(self) -> float:
        if self.sigma_from_solution is not None:
            return abs(self.sigma_from_solution - self.sigma_minimax_upper)
        return self.sigma_minimax_upper - self.sigma_maximin_lower

    def to_dict(self):
        return {
            "sigma_from_solution": None if self.sigma_from_solution is None else ops._num(self.sigma_from_solution),
            "sigma_minimax_upper": ops._num(self.sigma_minimax_upper),
            "sigma_maximin_lower": ops._num(self.sigma_maximin_lower),
            "gap": ops._num(self.gap),
            "semistability_gap": ops._num(self.sigma_minimax_upper - self.sigma_maximin_lower),
            "modes": self.modes,
            "budget": self.budget,
        }


@dataclass
class SlopeEstimate:
    value: float
    u: np.ndarray
    history: list = field(default_factory=list)


class FourierFamily:
    """u = seed + Re sum_k C_k exp(2 pi i k.x) over |k_a| <= modes."""

    def __init__(self, grid, modes):
        self.grid = grid
        self.K = max(0, min(int(modes), grid.N // 2 - 1))
        d = grid.dim
        k = np.arange(-self.K, self.K + 1)
        self.idx = np.ix_(*([k % grid.N] * d))
        kk = np.meshgrid(*([k] * d), indexing="ij")
        knorm2 = sum(ki.astype(float) ** 2 for ki in kk)
        self.scale = 1.0 / (1.0 + (2 * np.pi) ** 2 * knorm2)
        self.cshape = (2 * self.K + 1,) * d

    @property
    def size(self):
        return 2 * int(np.prod(self.cshape))

    def coeffs(self, z):
        m = self.size // 2
        return (z[:m] + 1j * z[m:]).reshape(self.cshape) * self.scale

    def synth(self, z):
        S = np.zeros(self.grid.shape, dtype=complex)
        S[self.idx] = self.coeffs(z)
        return np.fft.ifftn(S).real * self.grid.size

    def pullback(self, G):
        """Gradient with respect to z of a functional with gradient G in u."""
        Z = np.fft.ifftn(G)[self.idx] * self.grid.size
        gc = np.conj(Z) * self.scale
        return np.concatenate([gc.real.ravel(), gc.imag.ravel()])


def _lse(z, beta):
    zmax = z.max()
    e = np.exp(beta * (z - zmax))
    s = e.sum()
    return zmax + math.log(s / z.size) / beta, e / s


def optimize_slope(inst, sign, budget=200, modes=4, seed=None, beta0=20.0, sharpen_every=50,
                   beta_max=1e7, memory=8, max_halvings=30, z0=None) -> SlopeEstimate:
    """Smoothed-extremum descent; sign=+1 estimates inf max, sign=-1 sup min."""
    seed = inst.zero() if seed is None else np.asarray(seed, dtype=float)
    fam = FourierFamily(inst.grid, modes)
    try:
        base = ops.pointwise(inst, seed)
    except AdmissibilityError as exc:
        raise AdmissibilityError(exc.node, exc.margin) from None
    m0 = np.log(base.F) - inst.psi
    zref = float(np.max(sign * m0))

    def evaluate(z, beta):
        u = seed + fam.synth(z)
        try:
            pw = ops.pointwise(inst, u, derivative=True)
        except AdmissibilityError:
            return None
        m = np.log(pw.F) - inst.psi
        zz = sign * m - zref
        J, w = _lse(zz, beta)
        op = ops.linear_operator(inst, pw.P)
        G = sign * op.adjoint(w / pw.F)
        cert = float(np.max(m) if sign > 0 else np.min(m))
        return J, fam.pullback(G), cert, u

    z = np.zeros(fam.size) if z0 is None else np.asarray(z0, dtype=float).copy()
    beta = beta0
    best = float(np.max(m0) if sign > 0 else np.min(m0))
    best_u = seed
    history = [math.exp(best)]

    def better(a, b):
        return a < b if sign > 0 else a > b

    cur = evaluate(z, beta)
    mem = deque(maxlen=memory)
    since = 0
    stalled = False
    for it in range(budget):
        # sharpen on schedule, or early once the current smoothing has converged
        if (since >= sharpen_every or stalled) and beta < beta_max:
            beta = min(2 * beta, beta_max)
            cur = evaluate(z, beta)
            mem.clear()
            since = 0
        since += 1
        stalled = False
        J, g, _, _ = cur
        d = _two_loop(g, mem)
        slope = float(g @ d)
        if not slope < 0:
            mem.clear()
            d = -g
            slope = -float(g @ g)
        if slope == 0:
            stalled = True
            history.append(math.exp(best))
            continue
        alpha = 1.0 if mem else min(1.0, 0.1 / max(np.abs(d).sum(), 1e-300))
        accepted = None
        for _ in range(max_halvings):
            trial = evaluate(z + alpha * d, beta)
            if trial is not None:
                if better(trial[2], best):
                    best, best_u = trial[2], trial[3]
                if trial[0] <= J + 1e-4 * alpha * slope:
                    accepted = trial
                    break
            alpha *= 0.5
        if accepted is None or J - accepted[0] <= 1e-13 * max(1.0, abs(J)):
            stalled = True
        if accepted is None:
            mem.clear()
            history.append(math.exp(best))
            continue
        s = alpha * d
        y = accepted[1] - g
        if float(s @ y) > 1e-12 * float(np.sqrt((s @ s) * (y @ y))):
            mem.append((s, y))
        z = z + s
        cur = accepted
        history.append(math.exp(best))
    return SlopeEstimate(math.exp(best), best_u, history)


def _two_loop(g, mem):
    q = g.copy()
    alphas = []
    for s, y in reversed(mem):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        alphas.append((a, rho, s, y))
        q -= a * y
    if mem:
        s, y = mem[-1]
        q *= float(s @ y) / float(y @ y)
    for a, rho, s, y in reversed(alphas):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def _restarted(inst, sign, budget, modes, seed, restarts, rng_seed):
    """Best value over restarts: the first from seed, later ones from random coefficients."""
    fam_size = FourierFamily(inst.grid, modes).size
    rng = np.random.default_rng(rng_seed)
    best = None
    for r in range(max(1, restarts)):
        z0 = None if r == 0 else 1e-2 * rng.standard_normal(fam_size)
        try:
            est = optimize_slope(inst, sign, budget, modes, seed, z0=z0)
        except AdmissibilityError:
            if r == 0:
                raise
            continue
        if best is None or (est.value < best.value if sign > 0 else est.value > best.value):
            best = est
    return best


def supslope_minimax(inst, budget=200, modes=4, seed=None, restarts=1, rng_seed=0) -> float:
    """Upper estimate of the sup-slope: best max e^{-psi} F[u] found."""
    return _restarted(inst, +1, budget, modes, seed, restarts, rng_seed).value


def supslope_maximin(inst, budget=200, modes=4, seed=None, restarts=1, rng_seed=0) -> float:
    """Lower estimate: best min e^{-psi} F[u] found."""
    return _restarted(inst, -1, budget, modes, seed, restarts, rng_seed).value


def slope_report(inst, budget=200, modes=4, seed=None, solution=None, restarts=1, rng_seed=0) -> SlopeReport:
    upper = supslope_minimax(inst, budget, modes, seed, restarts, rng_seed)
    lower = supslope_maximin(inst, budget, modes, seed, restarts, rng_seed)
    from_sol = None
    if solution is not None:
        from_sol = float(np.max(ops.normalized_values(inst, solution)))
    return SlopeReport(upper, lower, from_sol, modes, budget)
