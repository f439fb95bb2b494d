"""The J-equation chi_u^{n-1} ^ omega / chi_u^n = e^{psi + c} and Monge-Ampere helpers.

With lambda the eigenvalues of chi_u relative to omega the wedge ratio is
S_{n-1}(lambda) / (n S_n(lambda)), the reciprocal of the quotient
n S_n / S_{n-1}. The J-equation is therefore solved as the quotient
equation with right-hand side exponent -psi, and c_J = -c_quotient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import continuity as co
from . import geometry as geo
from . import operators as ops
from . import slope
from . import symfunc as sf
from .errors import GridError, MetricError


@dataclass(frozen=True, eq=False)
class JInstance:
    grid: geo.TorusGrid
    omega: np.ndarray
    chi: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        if not self.grid.complex:
            raise GridError("the J-equation lives on a complex torus")
        object.__setattr__(self, "omega", geo.tensor_field(self.grid, self.omega, metric=True))
        object.__setattr__(self, "chi", geo.tensor_field(self.grid, self.chi, metric=True))
        psi = np.array(np.broadcast_to(np.asarray(self.psi, dtype=float), self.grid.shape))
        if not np.all(np.isfinite(psi)):
            raise ValueError("psi must be finite")
        object.__setattr__(self, "psi", psi)

    @property
    def n(self) -> int:
        return self.grid.n


def reduce_to_quotient(j: JInstance) -> ops.ProblemInstance:
    """The equivalent instance n S_n / S_{n-1}(lambda(chi_u | omega)) = e^{-psi - c}."""
    return ops.ProblemInstance(j.grid, j.omega, j.chi, -j.psi, sf.j_quotient(j.n))


def wedge_ratio_from_eigs(lam) -> np.ndarray:
    """S_{n-1} / (n S_n) for relative eigenvalues in the positive cone."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    s = sf.elementary_all(lam, n)
    sf._check_cone(n, s)
    return s[..., n - 1] / (n * s[..., n])


def wedge_ratio(j: JInstance, u) -> np.ndarray:
    """chi_u^{n-1} ^ omega / chi_u^n at every node."""
    A = j.chi + geo.complex_hessian(j.grid, u)
    return wedge_ratio_from_eigs(geo.generalized_eigs(A, j.omega))


@dataclass
class JSolution:
    u: np.ndarray
    c: float
    trace: co.ContinuityTrace
    reduced: co.Solution

    def __iter__(self):
        return iter((self.u, self.c, self.trace))


def solve_j(j: JInstance, u0=None, opts: Optional[co.SolverOptions] = None) -> JSolution:
    """Solve the J-equation; c is returned in the J normalization."""
    sol = co.solve(reduce_to_quotient(j), u0, opts)
    return JSolution(sol.u, -sol.c, sol.trace, sol)


def j_residual(j: JInstance, u, c) -> float:
    """max |e^{-psi-c} wedge_ratio - 1|."""
    return float(np.max(np.abs(np.exp(-j.psi - c) * wedge_ratio(j, u) - 1.0)))


def j_slope(j: JInstance, budget=200, modes=4, seed=None) -> float:
    """Lower estimate of xi = sup_u min e^{-psi} wedge ratio.

    On the reduced instance e^{-psi} wedge = 1 / (e^{-psi_red} F), so the
    best max of the reduced problem gives the best min here.
    """
    return 1.0 / slope.supslope_minimax(reduce_to_quotient(j), budget, modes, seed)


def manufactured_j_psi(j: JInstance, u) -> np.ndarray:
    """psi with log of the continuum wedge ratio of chi_u, so u solves with c = 0."""
    F = ops.continuum_values(j.grid, j.omega, j.chi, sf.j_quotient(j.n), u)
    return -np.log(F)


# --- Monge-Ampere in det form ------------------------------------------------

def ma_instance(grid: geo.TorusGrid, psi, theta=None, g=None) -> ops.ProblemInstance:
    """det(theta_u)/det(g) = e^{psi + c}, posed as S_n^{1/n} = e^{(psi + c)/n}."""
    g = np.eye(grid.n) if g is None else g
    theta = g if theta is None else theta
    return ops.ProblemInstance(grid, g, theta, np.asarray(psi, dtype=float) / grid.n, sf.sigma_k(grid.n, grid.n))


def solve_ma(grid: geo.TorusGrid, psi, theta=None, g=None, u0=None, opts=None):
    """(u, c, trace) for the det-form equation; c undoes the 1/n scaling."""
    sol = co.solve(ma_instance(grid, psi, theta, g), u0, opts)
    return sol.u, grid.n * sol.c, sol.trace


def kahler_ma_constant_oracle(grid: geo.TorusGrid, omega, psi) -> float:
    """c with e^c = int omega^n / int e^psi omega^n; needs constant omega."""
    omega = geo.tensor_field(grid, omega, metric=True)
    flat = omega.reshape(-1, grid.n, grid.n)
    if not np.array_equal(flat, np.broadcast_to(flat[0], flat.shape)):
        raise MetricError("closed-form constant needs a constant (Kahler) omega")
    det = np.linalg.det(omega).real
    return float(np.log(geo.integrate(det) / geo.integrate(np.exp(psi) * det)))


def real_ma_constant_oracle(grid: geo.TorusGrid, psi) -> float:
    """-log int e^psi: with theta = g = I the gradient map has unit total Jacobian."""
    psi = np.broadcast_to(np.asarray(psi, dtype=float), grid.shape)
    return float(-np.log(geo.integrate(np.exp(psi))))
