"""The global operators F[u] = f(lambda(theta_u)) and F_inf[u], plus certificates."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional

import numpy as np

from . import geometry as geo
from . import symfunc as sf
from .errors import AdmissibilityError, SubsolutionFailure

# strict inequalities of the theory are tested with this slack on log scale
STRICTNESS_TOL = 1e-6
# potentials closer than this to the cone boundary are rejected
DEGENERATE_MARGIN = 1e-10


class _AllInfinite:
    """Marker returned by apply_Finfty when f_inf is identically +inf."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "AllInfinite"

    def min(self):
        return math.inf


ALL_INFINITE = _AllInfinite()


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Everything needed to evaluate F and F_inf on a torus grid.

    ``g`` is the metric (omega on complex grids), ``theta`` the background
    tensor (chi), ``psi`` the right-hand side exponent.
    """

    grid: geo.TorusGrid
    g: np.ndarray
    theta: np.ndarray
    psi: np.ndarray
    fspec: sf.SymmetricFunctionSpec

    def __post_init__(self):
        grid = self.grid
        if self.fspec.dim != grid.n:
            raise ValueError(f"function dimension {self.fspec.dim} != grid n {grid.n}")
        object.__setattr__(self, "g", geo.tensor_field(grid, self.g, metric=True))
        object.__setattr__(self, "theta", geo.tensor_field(grid, self.theta))
        psi = np.array(np.broadcast_to(np.asarray(self.psi, dtype=float), grid.shape))
        if not np.all(np.isfinite(psi)):
            raise ValueError("psi must be finite")
        object.__setattr__(self, "psi", psi)

    @cached_property
    def frame(self):
        return geo.metric_frame(self.g)

    @cached_property
    def flat_identity(self) -> bool:
        return bool(np.array_equal(self.g, np.broadcast_to(np.eye(self.grid.n), self.g.shape)))

    def with_psi(self, psi) -> "ProblemInstance":
        return dataclasses.replace(self, psi=psi)

    def zero(self) -> np.ndarray:
        return np.zeros(self.grid.shape)


class Pointwise(NamedTuple):
    lam: np.ndarray
    margin: np.ndarray
    F: Optional[np.ndarray] = None
    P: Optional[np.ndarray] = None


def tensor_u(inst: ProblemInstance, u) -> np.ndarray:
    """theta_u = theta + nabla^2 u (real) or theta + ddbar u (complex)."""
    return inst.theta + geo.potential_hessian(inst.grid, u)


def _eigs(inst, A, vectors):
    if inst.flat_identity:
        if not vectors:
            return geo.jacobi_eigh(A, vectors=False)[..., ::-1], None
        lam, V = geo.jacobi_eigh(A)
        return lam[..., ::-1], V[..., ::-1]
    out = geo.generalized_eigs(A, inst.g, vectors=vectors, frame=inst.frame)
    return out if vectors else (out, None)


def _worst(margin):
    node = np.unravel_index(int(np.argmin(margin)), margin.shape)
    return tuple(int(i) for i in node), float(margin[node])


def pointwise(inst: ProblemInstance, u, *, values=True, derivative=False, check=True) -> Pointwise:
    """Eigenvalues, cone margin and optionally F and its coefficient field dF/dA."""
    lam, V = _eigs(inst, tensor_u(inst, u), derivative)
    _, margin = sf.in_cone(inst.fspec.cone, lam)
    if check and (values or derivative):
        node, worst = _worst(margin)
        if worst <= DEGENERATE_MARGIN:
            raise AdmissibilityError(node, worst)
    F = P = None
    if derivative:
        F, df = sf.eval_with_grad(inst.fspec, lam)
        P = (V * df[..., None, :]) @ np.conj(np.swapaxes(V, -1, -2))
        if not inst.grid.complex:
            P = P.real
    elif values:
        F = sf.eval_f(inst.fspec, lam)
    return Pointwise(lam, margin, F, P)


def admissible(inst: ProblemInstance, u):
    """(every node in the cone, worst cone margin over the grid)."""
    p = pointwise(inst, u, values=False, check=False)
    worst = float(p.margin.min())
    return worst > 0, worst


def apply_F(inst: ProblemInstance, u) -> np.ndarray:
    return pointwise(inst, u).F


def apply_Finfty(inst: ProblemInstance, u):
    """f_inf(lambda(theta_u)) per node, or ALL_INFINITE."""
    p = pointwise(inst, u, values=False)
    node, worst = _worst(p.margin)
    if worst <= DEGENERATE_MARGIN:
        raise AdmissibilityError(node, worst)
    if sf.dichotomy_classify(inst.fspec) == sf.INFINITE:
        return ALL_INFINITE
    return sf.f_infty(inst.fspec, p.lam)


def linearize(inst: ProblemInstance, u) -> np.ndarray:
    """dF/dA per node: sum_i f'_i v_i v_i^H in the g-orthonormal eigenframe."""
    return pointwise(inst, u, derivative=True).P


def real_coefficients(grid: geo.TorusGrid, P) -> np.ndarray:
    """Real coefficients a_ab with tr(P . hess u) = sum_ab a_ab d_a d_b u.

    On complex grids P is hermitian acting on ddbar u; the result is its
    realification over (x_1, y_1, ..., x_n, y_n) divided by four.
    """
    if not grid.complex:
        return np.asarray(P, dtype=float)
    n = grid.n
    A = np.empty(P.shape[:-2] + (2 * n, 2 * n))
    Pr, Pi = P.real, P.imag
    A[..., 0::2, 0::2] = 0.25 * Pr
    A[..., 1::2, 1::2] = 0.25 * Pr
    A[..., 0::2, 1::2] = 0.25 * Pi
    A[..., 1::2, 0::2] = -0.25 * Pi
    return A


class EllipticOperator:
    """h -> sum_ab a_ab D_ab h with the grid's second-difference stencils."""

    def __init__(self, grid: geo.TorusGrid, coeff):
        self.grid = grid
        self.coeff = coeff
        d = grid.dim
        self.weights = []
        for a in range(d):
            for b in range(a, d):
                w = coeff[..., a, b] if a == b else coeff[..., a, b] + coeff[..., b, a]
                # realified hermitian forms have vanishing (x_i, y_i) weights
                if np.any(w):
                    self.weights.append((a, b, np.ascontiguousarray(w)))

    def _pairs(self):
        return iter(self.weights)

    def __call__(self, h):
        grid = self.grid
        out = np.zeros(grid.shape)
        first = {}
        for a, b, w in self.weights:
            if a == b:
                out += w * geo.second_difference(h, a, a, grid.h, grid.order)
            else:
                if b not in first:
                    first[b] = geo._d1(h, b, grid.h, grid.order)
                out += w * geo._d1(first[b], a, grid.h, grid.order)
        return out

    def adjoint(self, g):
        grid = self.grid
        out = np.zeros(grid.shape)
        for a, b, w in self.weights:
            out += geo.second_difference(w * g, a, b, grid.h, grid.order)
        return out

    def mean_symbol(self, weight=None):
        """Fourier symbol of the constant-coefficient operator with averaged coefficients."""
        sym = np.zeros(self.grid.shape)
        for a, b, w in self._pairs():
            wbar = float(np.mean(w if weight is None else w * weight))
            sym += wbar * self.grid.symbols[(a, b)]
        return sym


def linear_operator(inst: ProblemInstance, P) -> EllipticOperator:
    return EllipticOperator(inst.grid, real_coefficients(inst.grid, P))


def normalized_values(inst: ProblemInstance, u) -> np.ndarray:
    """e^{-psi} F[u]."""
    return np.exp(-inst.psi) * apply_F(inst, u)


def continuum_values(grid, g, theta, fspec, u) -> np.ndarray:
    """f(lambda(theta + D^2 u)) with the spectral (not finite-difference) hessian.

    Right-hand sides manufactured this way make the discrete solution differ
    from ``u`` by the truncation error only.
    """
    g = geo.tensor_field(grid, g, metric=True)
    A = geo.tensor_field(grid, theta) + geo.spectral_potential_hessian(grid, np.asarray(u, dtype=float))
    return sf.eval_f(fspec, geo.generalized_eigs(A, g))


def manufactured_psi(grid, g, theta, fspec, u) -> np.ndarray:
    """psi = log f(lambda(theta_u)) so that u solves the equation with c = 0."""
    return np.log(continuum_values(grid, g, theta, fspec, u))


@dataclass
class SubsolutionReport:
    margin: float
    c_params: Optional[tuple] = None
    gap_delta: float = math.inf
    verdict: bool = False

    def to_dict(self):
        return {
            "margin": _num(self.margin),
            "c_params": None if self.c_params is None else {"r": _num(self.c_params[0]), "R": _num(self.c_params[1])},
            "gap_delta": _num(self.gap_delta),
            "verdict": bool(self.verdict),
        }


def _num(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def subsolution_check(inst: ProblemInstance, u, sigma: float) -> SubsolutionReport:
    """Margin of min e^{-psi} F_inf[u] over sigma.

    The verdict is strict on log scale: log(min e^{-psi}F_inf) - log(sigma)
    must exceed STRICTNESS_TOL.
    """
    Finf = apply_Finfty(inst, u)
    if Finf is ALL_INFINITE:
        return SubsolutionReport(math.inf, None, math.inf, True)
    low = float(np.min(np.exp(-inst.psi) * Finf))
    margin = low - sigma
    delta = low / sigma - 1.0
    verdict = math.log(low) - math.log(sigma) > STRICTNESS_TOL
    return SubsolutionReport(margin, None, delta, verdict)


def condition_three(inst: ProblemInstance, u):
    """(max e^{-psi}F[u], min e^{-psi}F_inf[u]) for the strict gap test."""
    top = float(np.max(normalized_values(inst, u)))
    Finf = apply_Finfty(inst, u)
    low = math.inf if Finf is ALL_INFINITE else float(np.min(np.exp(-inst.psi) * Finf))
    return top, low


def _cone_distance(k, lam, iters=80):
    """sup{r >= 0 : lam - r*1 in Gamma_k} per point, by bisection."""
    lo = np.zeros(lam.shape[:-1])
    hi = lam.sum(axis=-1) / lam.shape[-1]
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        ok, _ = sf.in_cone(k, lam - mid[..., None])
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    return lo


def c_subsolution_params(inst: ProblemInstance, u, h, iters=80):
    """Find (r, R) making u a C_{h,r,R}-subsolution.

    r: half the largest shift s with lam - s*1 in the cone and
    f_inf(lam - s*1) > h at every node, so lam - 2r*1 keeps both properties.
    R: bound on |mu + V| over V >= 0 with f(mu + V) = h, mu = lam - r*1;
    by monotonicity each V_i is at most the root t_i of f(mu + t e_i) = h.
    """
    spec = inst.fspec
    p = pointwise(inst, u, values=False)
    node, worst = _worst(p.margin)
    if worst <= DEGENERATE_MARGIN:
        raise AdmissibilityError(node, worst)
    lam = p.lam.reshape(-1, spec.dim)
    h = np.broadcast_to(np.asarray(h, dtype=float), inst.grid.shape).reshape(-1)
    shape = inst.grid.shape
    finite = sf.dichotomy_classify(spec) == sf.FINITE

    r_cone = float(_cone_distance(spec.cone, lam, iters).min())
    if finite:
        base = sf.f_infty(spec, lam)
        bad = ~(base > h)
        if bad.any():
            j = int(np.argmax(bad))
            raise SubsolutionFailure(
                f"f_inf = {base[j]:.6g} does not exceed h = {h[j]:.6g}",
                tuple(int(i) for i in np.unravel_index(j, shape)),
            )

        def feasible(s):
            shifted = lam - s
            ok, _ = sf.in_cone(spec.cone, shifted)
            if not ok.all():
                return False
            return bool(np.all(sf.f_infty(spec, shifted) > h))

        lo, hi = 0.0, r_cone
        if feasible(hi):
            lo = hi
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if feasible(mid):
                lo = mid
            else:
                hi = mid
        r_hat = lo
    else:
        r_hat = r_cone
    r = 0.5 * r_hat
    if not r > 0:
        raise SubsolutionFailure("no positive shift r keeps the subsolution inequality")

    mu = lam - r
    roots = np.zeros_like(mu)
    for i in range(spec.dim):
        e = np.zeros(spec.dim)
        e[i] = 1.0

        def g(t):
            return sf.eval_f(spec, mu + t[:, None] * e) - h

        need = g(np.zeros(len(mu))) < 0
        lo = np.zeros(len(mu))
        hi = np.ones(len(mu))
        for _ in range(200):
            short = need & (g(hi) < 0)
            if not short.any():
                break
            lo = np.where(short, hi, lo)
            hi = np.where(short, 2 * hi, hi)
        else:
            raise SubsolutionFailure("root bracketing did not terminate")
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            below = g(mid) < 0
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        roots[:, i] = np.where(need, hi, 0.0)
    R = float(np.max(np.linalg.norm(roots, axis=1) + np.linalg.norm(mu, axis=1)))
    return r, R
