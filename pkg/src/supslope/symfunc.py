"""Symmetric functions of eigenvalues: S_k, the admissible family f, and f_inf.

All evaluators are vectorized over leading axes: ``lam`` has shape ``(..., n)``
and results have shape ``(...)`` (or ``(..., n)`` for gradients).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ConeViolationError, SpecError

MAX_DIM = 8

SIGMA_K = "sigma_k"
QUOTIENT = "quotient"

FINITE = "Finite"
INFINITE = "Infinite"


@dataclass(frozen=True)
class SymmetricFunctionSpec:
    """One member of the closed family of admissible functions.

    ``sigma_k``:  f = S_k^(1/k) on the cone Gamma_k.
    ``quotient``: f = scale * (S_k / S_l)^exponent on Gamma_k, exponent = 1/(k-l).
    """

    kind: str
    dim: int
    k: int
    l: int = 0
    exponent: Fraction = Fraction(1)
    scale: float = 1.0

    def __post_init__(self):
        n, k, l = self.dim, self.k, self.l
        if not 1 <= n <= MAX_DIM:
            raise SpecError(f"dimension n={n} outside supported range 1..{MAX_DIM}")
        if self.kind == SIGMA_K:
            if not 1 <= k <= n:
                raise SpecError(f"sigma_k needs 1 <= k <= n, got k={k}, n={n}")
            if l != 0 or self.exponent != Fraction(1, k) or self.scale != 1.0:
                raise SpecError("sigma_k takes no l, exponent or scale")
        elif self.kind == QUOTIENT:
            if not 0 <= l < k <= n:
                raise SpecError(f"quotient needs 0 <= l < k <= n, got k={k}, l={l}, n={n}")
            if self.exponent != Fraction(1, k - l):
                raise SpecError(
                    f"quotient(k={k}, l={l}) requires exponent 1/{k - l}, got {self.exponent}"
                )
            if not (math.isfinite(self.scale) and self.scale > 0):
                raise SpecError(f"scale must be positive and finite, got {self.scale}")
        else:
            raise SpecError(f"unknown variant {self.kind!r}")

    @property
    def cone(self) -> int:
        """Index k of the Garding cone Gamma_k the function lives on."""
        return self.k

    def __str__(self):
        if self.kind == SIGMA_K:
            return f"sigma_k(k={self.k})"
        return (
            f"quotient(k={self.k},l={self.l},exponent={self.exponent},"
            f"scale={self.scale:g})"
        )


def sigma_k(k: int, dim: int) -> SymmetricFunctionSpec:
    return SymmetricFunctionSpec(SIGMA_K, dim, k, 0, Fraction(1, k), 1.0)


def quotient(k: int, l: int, dim: int, scale: float = 1.0, exponent=None) -> SymmetricFunctionSpec:
    if exponent is None:
        if not 0 <= l < k:
            raise SpecError(f"quotient needs 0 <= l < k <= n, got k={k}, l={l}, n={dim}")
        exponent = Fraction(1, k - l)
    return SymmetricFunctionSpec(QUOTIENT, dim, k, l, Fraction(exponent), float(scale))


def j_quotient(dim: int) -> SymmetricFunctionSpec:
    """n S_n / S_{n-1}, the hessian quotient equivalent to the J-equation."""
    return quotient(dim, dim - 1, dim, scale=dim, exponent=1)


_SPEC_RE = re.compile(r"^(sigma_k|quotient)\((.*)\)$")


def parse_spec(text: str, dim: int) -> SymmetricFunctionSpec:
    """Parse ``sigma_k(k=2)`` or ``quotient(k=2,l=1,exponent=1,scale=2)``.

    Case-insensitive; all whitespace is ignored.
    """
    src = re.sub(r"\s+", "", text).lower()
    m = _SPEC_RE.match(src)
    if not m:
        raise SpecError(f"cannot parse function spec {text!r}")
    kind, body = m.groups()
    args = {}
    for item in filter(None, body.split(",")):
        key, sep, val = item.partition("=")
        if not sep or not val:
            raise SpecError(f"malformed argument {item!r} in {text!r}")
        if key in args:
            raise SpecError(f"duplicate argument {key!r} in {text!r}")
        args[key] = val
    allowed = {"k"} if kind == SIGMA_K else {"k", "l", "exponent", "scale"}
    unknown = set(args) - allowed
    if unknown:
        raise SpecError(f"unknown argument(s) {sorted(unknown)} for {kind}")
    try:
        k = int(args["k"])
        if kind == SIGMA_K:
            return sigma_k(k, dim)
        l = int(args.get("l", 0))
        exponent = Fraction(args["exponent"]) if "exponent" in args else None
        scale = float(Fraction(args.get("scale", "1")))
    except KeyError as exc:
        raise SpecError(f"missing argument {exc.args[0]!r} in {text!r}") from None
    except (ValueError, ZeroDivisionError) as exc:
        raise SpecError(f"bad numeric argument in {text!r}: {exc}") from None
    return quotient(k, l, dim, scale=scale, exponent=exponent)


def as_eigentuple(values) -> np.ndarray:
    """Validate and sort an eigenvalue tuple (last axis) in descending order."""
    lam = np.asarray(values, dtype=float)
    if lam.ndim == 0:
        lam = lam[None]
    if not np.all(np.isfinite(lam)):
        raise ValueError("eigenvalues must be finite")
    return -np.sort(-lam, axis=-1)


def elementary_all(lam, kmax: int) -> np.ndarray:
    """Return S_0..S_kmax of ``lam`` stacked on a new last axis.

    Uses S_j(l_1..l_m) = S_j(l_1..l_{m-1}) + l_m S_{j-1}(l_1..l_{m-1}).
    """
    lam = np.asarray(lam, dtype=float)
    out = np.zeros(lam.shape[:-1] + (kmax + 1,))
    out[..., 0] = 1.0
    for m in range(lam.shape[-1]):
        x = lam[..., m, None]
        out[..., 1:] = out[..., 1:] + x * out[..., :-1]
    return out


def elementary_symmetric(lam, k: int):
    """S_k(lam); S_0 = 1."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    if not 0 <= k <= n:
        raise ValueError(f"k={k} out of range 0..{n}")
    return elementary_all(lam, k)[..., k]


def elementary_deleted(lam, kmax: int) -> np.ndarray:
    """S_j(lam with entry i removed) for j = 0..kmax, shape ``(..., n, kmax+1)``."""
    lam = np.asarray(lam, dtype=float)
    n = lam.shape[-1]
    out = np.empty(lam.shape[:-1] + (n, kmax + 1))
    for i in range(n):
        rest = np.delete(lam, i, axis=-1)
        out[..., i, :] = elementary_all(rest, kmax)
    return out


def in_cone(k: int, lam):
    """Membership in the open cone Gamma_k and its margin min_{i<=k} S_i."""
    s = elementary_all(lam, k)[..., 1:]
    margin = s.min(axis=-1)
    return margin > 0, margin


def _check_cone(k: int, s: np.ndarray):
    """Raise if any point leaves Gamma_k; ``s`` holds S_0..S_k."""
    pos = s[..., 1:] > 0
    if np.all(pos):
        return
    margin = s[..., 1:].min(axis=-1)
    node = np.unravel_index(int(np.argmin(margin)), margin.shape) if margin.ndim else ()
    first = int(np.argmin(pos[node])) + 1
    raise ConeViolationError(first, float(margin[node]), tuple(int(j) for j in node))


def _f_from_s(spec: SymmetricFunctionSpec, s):
    if spec.kind == SIGMA_K:
        return s[..., spec.k] ** (1.0 / spec.k)
    ratio = s[..., spec.k] / s[..., spec.l]
    return spec.scale * ratio ** float(spec.exponent)


def _grad_from_s(spec: SymmetricFunctionSpec, lam, s, f):
    d = elementary_deleted(lam, spec.k - 1)
    k, l = spec.k, spec.l
    if spec.kind == SIGMA_K:
        return s[..., k, None] ** (1.0 / k - 1.0) * d[..., k - 1] / k
    dlog = d[..., k - 1] / s[..., k, None]
    if l > 0:
        dlog = dlog - d[..., l - 1] / s[..., l, None]
    return f[..., None] * float(spec.exponent) * dlog


def eval_f(spec: SymmetricFunctionSpec, lam):
    lam = np.asarray(lam, dtype=float)
    s = elementary_all(lam, spec.k)
    _check_cone(spec.k, s)
    return _f_from_s(spec, s)


def grad_f(spec: SymmetricFunctionSpec, lam):
    """Partial derivatives df/dlam_i via dS_k/dlam_i = S_{k-1}(lam without i)."""
    return eval_with_grad(spec, lam)[1]


def eval_with_grad(spec: SymmetricFunctionSpec, lam):
    """(f, df/dlam) sharing one evaluation of the elementary polynomials."""
    lam = np.asarray(lam, dtype=float)
    s = elementary_all(lam, spec.k)
    _check_cone(spec.k, s)
    f = _f_from_s(spec, s)
    return f, _grad_from_s(spec, lam, s, f)


def _limit_dropped(spec: SymmetricFunctionSpec, rest: np.ndarray):
    """Closed-form limit of f as the dropped coordinate tends to +inf."""
    if spec.kind == SIGMA_K or spec.l == 0:
        return np.full(rest.shape[:-1], np.inf)
    s = elementary_all(rest, spec.k - 1)
    ratio = s[..., spec.k - 1] / s[..., spec.l - 1]
    return spec.scale * ratio ** float(spec.exponent)


def f_infty_i(spec: SymmetricFunctionSpec, lam, i: int):
    """lim_{R->inf} f(lam with entry i replaced by R); may be +inf."""
    lam = np.asarray(lam, dtype=float)
    _check_cone(spec.k, elementary_all(lam, spec.k))
    return _limit_dropped(spec, np.delete(lam, i, axis=-1))


def f_infty(spec: SymmetricFunctionSpec, lam):
    """min over i of f_infty_i; equal to dropping the largest entry."""
    lam = np.asarray(lam, dtype=float)
    _check_cone(spec.k, elementary_all(lam, spec.k))
    if dichotomy_classify(spec) == INFINITE:
        return np.full(lam.shape[:-1], np.inf)
    n = lam.shape[-1]
    per_i = np.stack([_limit_dropped(spec, np.delete(lam, i, axis=-1)) for i in range(n)], axis=-1)
    value = per_i.min(axis=-1)
    if __debug__:
        jmax = np.argmax(lam, axis=-1)[..., None]
        drop_max = np.take_along_axis(per_i, jmax, axis=-1)[..., 0]
        assert np.allclose(value, drop_max, rtol=1e-10, atol=0.0)
    return value


def f_infty_numeric(spec: SymmetricFunctionSpec, lam, R: float = 1e8):
    """min_i f(lam with entry i set to R): the large-R cross-check of f_infty."""
    lam = np.asarray(lam, dtype=float)
    vals = []
    for i in range(lam.shape[-1]):
        probe = lam.copy()
        probe[..., i] = R
        vals.append(eval_f(spec, probe))
    return np.min(np.stack(vals, axis=-1), axis=-1)


def dichotomy_classify(spec: SymmetricFunctionSpec) -> str:
    if spec.kind == QUOTIENT and spec.l >= 1:
        return FINITE
    return INFINITE
