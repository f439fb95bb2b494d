"""Periodic grids, finite-difference hessians and pointwise eigenproblems.

Fields are plain numpy arrays: scalar fields have shape ``grid.shape``,
tensor fields ``grid.shape + (n, n)`` (real symmetric or complex hermitian).
Complex grids order their real axes as (x_1, y_1, ..., x_n, y_n).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import GridError, MetricError

REAL = "real"
COMPLEX = "complex"

DEFAULT_MAX_NODES = 2**26
SYM_TOL = 1e-12


@dataclass(frozen=True)
class TorusGrid:
    """Uniform node-centered grid on the unit torus, x_i = index_i / N."""

    kind: str
    n: int
    N: int
    order: int = 2
    max_nodes: int = DEFAULT_MAX_NODES

    def __post_init__(self):
        if self.kind not in (REAL, COMPLEX):
            raise GridError(f"grid kind must be 'real' or 'complex', got {self.kind!r}")
        if self.n < 1:
            raise GridError("n must be >= 1")
        if self.N < 8:
            raise GridError(f"resolution N={self.N} below minimum 8")
        if self.order not in (2, 4):
            raise GridError(f"stencil order must be 2 or 4, got {self.order}")
        if self.N**self.dim > self.max_nodes:
            raise GridError(f"{self.N}^{self.dim} nodes exceeds cap {self.max_nodes}")

    @property
    def complex(self) -> bool:
        return self.kind == COMPLEX

    @property
    def dim(self) -> int:
        """Real dimension of the torus."""
        return 2 * self.n if self.complex else self.n

    @property
    def shape(self):
        return (self.N,) * self.dim

    @property
    def size(self) -> int:
        return self.N**self.dim

    @property
    def h(self) -> float:
        return 1.0 / self.N

    def coords(self):
        x = np.arange(self.N) / self.N
        return np.meshgrid(*([x] * self.dim), indexing="ij", sparse=True)

    @cached_property
    def symbols(self):
        """Fourier symbols of the second-difference stencils, keyed by (a, b), a <= b."""
        delta = np.zeros(self.shape)
        delta[(0,) * self.dim] = 1.0
        return {
            (a, b): np.fft.fftn(second_difference(delta, a, b, self.h, self.order)).real
            for a in range(self.dim)
            for b in range(a, self.dim)
        }


def _d1(u, axis, h, order):
    if order == 2:
        return (np.roll(u, -1, axis) - np.roll(u, 1, axis)) / (2 * h)
    return (
        -np.roll(u, -2, axis) + 8 * np.roll(u, -1, axis) - 8 * np.roll(u, 1, axis) + np.roll(u, 2, axis)
    ) / (12 * h)


def second_difference(u, a, b, h, order=2):
    """Periodic central approximation of d^2 u / dx_a dx_b.

    Mixed derivatives are compositions of central first differences.
    """
    if a == b:
        if order == 2:
            return (np.roll(u, -1, a) - 2 * u + np.roll(u, 1, a)) / h**2
        return (
            -np.roll(u, -2, a) + 16 * np.roll(u, -1, a) - 30 * u
            + 16 * np.roll(u, 1, a) - np.roll(u, 2, a)
        ) / (12 * h**2)
    return _d1(_d1(u, b, h, order), a, h, order)


def _hessian_parts(grid: TorusGrid, u):
    """Dict (a, b) -> D_ab u for a <= b, sharing first differences."""
    d, h, order = grid.dim, grid.h, grid.order
    first = [_d1(u, b, h, order) for b in range(d)]
    parts = {}
    for a in range(d):
        parts[(a, a)] = second_difference(u, a, a, h, order)
        for b in range(a + 1, d):
            parts[(a, b)] = _d1(first[b], a, h, order)
    return parts


def real_hessian(grid: TorusGrid, u) -> np.ndarray:
    """All second differences over the real axes, shape ``grid.shape + (d, d)``."""
    d = grid.dim
    parts = _hessian_parts(grid, u)
    out = np.empty((d, d) + grid.shape)
    for (a, b), v in parts.items():
        out[a, b] = v
        out[b, a] = v
    return np.moveaxis(out, (0, 1), (-2, -1))


def hessian(grid: TorusGrid, u) -> np.ndarray:
    """Coordinate hessian of u on a real torus (exactly symmetric)."""
    if grid.complex:
        raise GridError("hessian needs a real grid; use complex_hessian")
    return real_hessian(grid, u)


def complex_from_real(H: np.ndarray) -> np.ndarray:
    """(ddbar u)_{i jbar} from the real hessian over (x_1, y_1, ..., x_n, y_n)."""
    xx = H[..., 0::2, 0::2]
    yy = H[..., 1::2, 1::2]
    xy = H[..., 0::2, 1::2]
    re = 0.25 * (xx + yy)
    im = 0.25 * (xy - np.swapaxes(xy, -1, -2))
    return re + 1j * im


def complex_hessian(grid: TorusGrid, u) -> np.ndarray:
    """Hermitian field (ddbar u)_{i jbar} = 1/4[(u_xx + u_yy) + i(u_xy - u_yx)]."""
    if not grid.complex:
        raise GridError("complex_hessian needs a complex grid")
    parts = _hessian_parts(grid, u)
    n = grid.n

    def D(a, b):
        return parts[(a, b)] if a <= b else parts[(b, a)]

    out = np.empty((n, n) + grid.shape, dtype=complex)
    for i in range(n):
        for j in range(i, n):
            re = 0.25 * (D(2 * i, 2 * j) + D(2 * i + 1, 2 * j + 1))
            im = 0.25 * (D(2 * i, 2 * j + 1) - D(2 * i + 1, 2 * j))
            out[i, j] = re + 1j * im
            out[j, i] = re - 1j * im
    return np.moveaxis(out, (0, 1), (-2, -1))


def potential_hessian(grid: TorusGrid, u) -> np.ndarray:
    """nabla^2 u on a real grid, ddbar u on a complex grid."""
    return complex_hessian(grid, u) if grid.complex else hessian(grid, u)


def spectral_real_hessian(grid: TorusGrid, u) -> np.ndarray:
    """Exact second derivatives of the trigonometric interpolant of u.

    Independent of the finite-difference stencils; used to manufacture
    right-hand sides from a prescribed potential.
    """
    N, d = grid.N, grid.dim
    uh = np.fft.fftn(u)
    k = np.fft.fftfreq(N, 1.0 / N)
    nyq = N % 2 == 0
    out = np.empty(grid.shape + (d, d))
    for a in range(d):
        for b in range(a, d):
            ka = k.reshape([-1 if i == a else 1 for i in range(d)])
            kb = k.reshape([-1 if i == b else 1 for i in range(d)])
            mult = -(2 * np.pi) ** 2 * ka * kb
            if a != b and nyq:
                mult = mult * (np.abs(ka) != N // 2) * (np.abs(kb) != N // 2)
            out[..., a, b] = np.fft.ifftn(uh * mult).real
            out[..., b, a] = out[..., a, b]
    return out


def spectral_potential_hessian(grid: TorusGrid, u) -> np.ndarray:
    H = spectral_real_hessian(grid, u)
    return complex_from_real(H) if grid.complex else H


def tensor_field(grid: TorusGrid, values, *, metric=False) -> np.ndarray:
    """Validate a symmetric/hermitian tensor field; optionally require SPD.

    ``values`` may be a single n x n matrix (broadcast to every node) or a
    full field. Deviations from symmetry above 1e-12 are rejected; smaller
    ones are removed.
    """
    n = grid.n
    dtype = complex if grid.complex else float
    arr = np.asarray(values)
    if not grid.complex and np.iscomplexobj(arr):
        if np.any(arr.imag != 0):
            raise MetricError("complex entries in a real tensor field")
        arr = arr.real
    arr = np.array(np.broadcast_to(arr, grid.shape + (n, n)), dtype=dtype)
    herm = np.conj(np.swapaxes(arr, -1, -2))
    asym = np.abs(arr - herm).max() if arr.size else 0.0
    scale = max(1.0, float(np.abs(arr).max()))
    if asym > SYM_TOL * scale:
        raise MetricError(f"tensor field not symmetric/hermitian (deviation {asym:.2e})")
    arr = 0.5 * (arr + herm)
    if metric:
        low = np.linalg.eigvalsh(arr)[..., 0]
        if np.any(low <= 0):
            node = tuple(int(i) for i in np.unravel_index(int(np.argmin(low)), low.shape))
            raise MetricError("metric not positive definite", node)
    if not np.all(np.isfinite(arr)):
        raise MetricError("non-finite tensor entries")
    return arr


def constant_tensor(grid: TorusGrid, matrix, *, metric=False) -> np.ndarray:
    return tensor_field(grid, np.asarray(matrix), metric=metric)


def identity_tensor(grid: TorusGrid) -> np.ndarray:
    return constant_tensor(grid, np.eye(grid.n))


def metric_frame(g) -> np.ndarray:
    """Inverse Cholesky factor L^{-1} with g = L L^H, per node."""
    try:
        L = np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        low = np.linalg.eigvalsh(g)[..., 0]
        node = tuple(int(i) for i in np.unravel_index(int(np.argmin(low)), low.shape))
        raise MetricError("metric not positive definite", node) from None
    return np.linalg.inv(L)


def jacobi_eigh(a, *, vectors=True, max_sweeps=30):
    """Batched cyclic Jacobi for symmetric/hermitian matrices on the last two axes.

    Every node sees the same sequence of rotations, so the result does not
    depend on the LAPACK build. Returns eigenvalues ascending (and the
    unitary eigenvector matrix with eigenvectors as columns).
    """
    a = np.asarray(a)
    cplx = np.iscomplexobj(a)
    n = a.shape[-1]
    # component-major copy: A[p][q] is a contiguous field
    A = np.ascontiguousarray(np.moveaxis(a, (-2, -1), (0, 1)), dtype=complex if cplx else float)
    V = None
    if vectors:
        V = np.zeros_like(A)
        for i in range(n):
            V[i, i] = 1.0
    scale = max(float(np.abs(A).max(initial=0.0)), 1e-300)
    tol = 4 * np.finfo(float).eps * scale
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for _ in range(max_sweeps):
            off = max((float(np.abs(A[p, q]).max(initial=0.0)) for p in range(n) for q in range(p + 1, n)), default=0.0)
            if off <= tol:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = A[p, q]
                    if cplx:
                        r = np.abs(apq)
                        # rotate the phase out of a_pq first
                        ph = np.where(r > 0, apq / np.where(r > 0, r, 1.0), 1.0)
                        A[:, q] *= np.conj(ph)
                        A[q, :] *= ph
                        if vectors:
                            V[:, q] *= np.conj(ph)
                        apq = r
                    else:
                        apq = apq.copy()
                    nz = apq != 0
                    theta = (A[q, q].real - A[p, p].real) / (2 * np.where(nz, apq, 1.0))
                    t = np.where(theta == 0, 1.0, np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1)))
                    t = np.where(nz & np.isfinite(theta), t, 0.0)
                    c = 1 / np.sqrt(t * t + 1)
                    s = t * c
                    Ap, Aq = A[:, p].copy(), A[:, q].copy()
                    A[:, p] = c * Ap - s * Aq
                    A[:, q] = s * Ap + c * Aq
                    Ap, Aq = A[p, :].copy(), A[q, :].copy()
                    A[p, :] = c * Ap - s * Aq
                    A[q, :] = s * Ap + c * Aq
                    A[p, q] = 0
                    A[q, p] = 0
                    if vectors:
                        Vp, Vq = V[:, p].copy(), V[:, q].copy()
                        V[:, p] = c * Vp - s * Vq
                        V[:, q] = s * Vp + c * Vq
    lam = np.stack([A[i, i].real for i in range(n)])
    if n == 2:
        swap = lam[0] > lam[1]
        lam = np.stack([np.where(swap, lam[1], lam[0]), np.where(swap, lam[0], lam[1])])
        if vectors:
            V = np.stack([np.where(swap, V[:, 1], V[:, 0]), np.where(swap, V[:, 0], V[:, 1])], axis=1)
    elif n > 2:
        order = np.argsort(lam, axis=0, kind="stable")
        lam = np.take_along_axis(lam, order, 0)
        if vectors:
            V = np.take_along_axis(V, order[None], 1)
    lam = np.moveaxis(lam, 0, -1)
    if not vectors:
        return lam
    return lam, np.moveaxis(V, (0, 1), (-2, -1))


def generalized_eigs(a, g, *, vectors=False, frame=None):
    """Eigenvalues of ``a`` relative to ``g`` per node, sorted descending.

    Solved as the standard problem for L^{-1} a L^{-H} (g = L L^H) by
    batched Jacobi. With ``vectors=True`` also returns generalized
    eigenvectors v_k (columns, g-orthonormal) so that a v_k = lambda_k g v_k.
    """
    Linv = metric_frame(g) if frame is None else frame
    red = Linv @ a @ np.conj(np.swapaxes(Linv, -1, -2))
    red = 0.5 * (red + np.conj(np.swapaxes(red, -1, -2)))
    if not vectors:
        return jacobi_eigh(red, vectors=False)[..., ::-1]
    lam, W = jacobi_eigh(red)
    V = np.conj(np.swapaxes(Linv, -1, -2)) @ W
    return lam[..., ::-1], V[..., ::-1]


def integrate(values) -> float:
    """Trapezoidal rule on the unit torus: the mean over nodes.

    Summation is pairwise along a fixed axis order, so results are
    reproducible.
    """
    return float(np.mean(np.asarray(values, dtype=float)))


# --- field dumps -----------------------------------------------------------

MAGIC = b"SLOPE1"
_HEADER = struct.Struct("<6sBBIIQ")
_KIND_CODE = {REAL: 0, COMPLEX: 1}
_CODE_KIND = {v: k for k, v in _KIND_CODE.items()}


def write_field(path, grid: TorusGrid, values) -> None:
    """Write ``values`` as header + row-major float64 little-endian payload.

    Header: magic "SLOPE1", kind (u8), complex-payload flag (u8), n (u32),
    N (u32), payload length in float64 words (u64).
    """
    arr = np.ascontiguousarray(values)
    is_complex = np.iscomplexobj(arr)
    payload = arr.astype("<c16" if is_complex else "<f8").view("<f8").ravel()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, _KIND_CODE[grid.kind], int(is_complex), grid.n, grid.N, payload.size))
        fh.write(payload.tobytes())


def read_field(path):
    """Inverse of write_field; returns (kind, n, N, flat float64 or complex array)."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, kind, cflag, n, N, count = _HEADER.unpack(head)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        data = np.frombuffer(fh.read(8 * count), dtype="<f8")
    if data.size != count:
        raise ValueError(f"{path}: truncated payload")
    if cflag:
        data = data.view("<c16")
    return _CODE_KIND[kind], n, N, data
