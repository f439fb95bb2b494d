"""Run configuration: an INI-style ``key = value`` file with a strict schema.

See README.md for the grammar. Keys are case-sensitive (``n`` and ``N`` are
different keys), ``#`` and ``;`` start comments, and unknown sections or
keys are rejected.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from . import exprparse as ex
from . import geometry as geo
from . import jequation as jq
from . import operators as ops
from . import symfunc as sf
from .continuity import SolverOptions
from .errors import ConfigError, SupSlopeError

J_EQUATION = "j-equation"
MONGE_AMPERE = "monge-ampere"

DUMPABLE = ("u", "psi", "residual", "eigenvalues")

DEFAULTS = {
    "grid": {"order": "2"},
    "fields": {"psi": "0", "seed_u": "0", "psi_from_reference": "false"},
    "equation": {},
    "solver": {
        "tol": "1e-10",
        "dt0": "0.1",
        "min_dt": "1e-4",
        "max_newton": "30",
        "lin_iters": "400",
        "budget": "200",
        "modes": "4",
        "seed": "0",
        "restarts": "1",
        "perturb": "0.01*sin(2*pi*x1)",
        "corrupt_trace": "false",
    },
    "outputs": {"directory": ".", "dump": ""},
}
REQUIRED = {"grid": ("kind", "n", "N"), "equation": ("f",)}
_TENSOR_KEY = re.compile(r"^(theta|g|chi|omega)(?:_([1-9])([1-9])(_im)?)?$")
_FIELD_KEYS = {"psi", "seed_u", "reference", "psi_from_reference"}


def _bool(section, key, text):
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: expected a boolean, got {text!r}")


def _num(section, key, text, kind=float):
    try:
        return kind(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected {kind.__name__}, got {text!r}") from None


@dataclass
class Built:
    """Numerical objects assembled from a config."""

    grid: geo.TorusGrid
    instance: ops.ProblemInstance
    jinstance: Optional[jq.JInstance]
    seed_u: np.ndarray
    reference: Optional[np.ndarray]
    perturb: np.ndarray
    c_factor: float = 1.0  # reported c = c_factor * solver c

    @property
    def is_j(self) -> bool:
        return self.jinstance is not None


@dataclass
class RunConfig:
    sections: Dict[str, Dict[str, str]] = field(default_factory=dict)
    present: frozenset = frozenset()

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(
            delimiters=("=",),
            comment_prefixes=("#", ";"),
            inline_comment_prefixes=("#", ";"),
            interpolation=None,
            strict=True,
            empty_lines_in_values=False,
        )
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"config syntax: {exc}") from None
        if cp.defaults():
            raise ConfigError("[DEFAULT] section is not allowed")
        unknown = set(cp.sections()) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown section(s): {sorted(unknown)}")
        sections = {}
        for name, defaults in DEFAULTS.items():
            given = dict(cp[name]) if cp.has_section(name) else {}
            sections[name] = {**defaults, **{k: v.strip() for k, v in given.items()}}
        for name, keys in REQUIRED.items():
            for key in keys:
                if key not in sections[name]:
                    raise ConfigError(f"[{name}] missing required key {key!r}")
        cfg = cls(sections, frozenset(cp.sections()))
        cfg._check_keys()
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        return cls.from_text(text)

    def _check_keys(self):
        for name in ("grid", "solver", "outputs", "equation"):
            allowed = set(DEFAULTS[name]) | set(REQUIRED.get(name, ()))
            extra = set(self.sections[name]) - allowed
            if extra:
                raise ConfigError(f"[{name}] unknown key(s): {sorted(extra)}")
        for key in self.sections["fields"]:
            if key not in _FIELD_KEYS and not _TENSOR_KEY.match(key):
                raise ConfigError(f"[fields] unknown key {key!r}")

    def get(self, section, key):
        return self.sections[section][key]

    def resolved(self) -> Dict[str, Dict[str, str]]:
        """Every section with defaults filled in, keys sorted."""
        return {s: dict(sorted(v.items())) for s, v in self.sections.items()}

    @property
    def has_solver(self) -> bool:
        return "solver" in self.present

    # --- typed accessors ------------------------------------------------

    def grid(self) -> geo.TorusGrid:
        g = self.sections["grid"]
        kind = g["kind"].lower()
        try:
            return geo.TorusGrid(kind, _num("grid", "n", g["n"], int), _num("grid", "N", g["N"], int),
                                 _num("grid", "order", g["order"], int))
        except SupSlopeError as exc:
            raise ConfigError(f"[grid] {exc}") from None

    def solver_options(self) -> SolverOptions:
        s = self.sections["solver"]
        return SolverOptions(
            tol=_num("solver", "tol", s["tol"]),
            dt0=_num("solver", "dt0", s["dt0"]),
            min_dt=_num("solver", "min_dt", s["min_dt"]),
            max_newton=_num("solver", "max_newton", s["max_newton"], int),
            lin_iters=_num("solver", "lin_iters", s["lin_iters"], int),
        )

    def slope_params(self):
        s = self.sections["solver"]
        return {
            "budget": _num("solver", "budget", s["budget"], int),
            "modes": _num("solver", "modes", s["modes"], int),
            "seed": _num("solver", "seed", s["seed"], int),
            "restarts": _num("solver", "restarts", s["restarts"], int),
        }

    def corrupt_trace(self) -> bool:
        return _bool("solver", "corrupt_trace", self.get("solver", "corrupt_trace"))

    def dumps(self):
        items = [d.strip() for d in self.get("outputs", "dump").split(",") if d.strip()]
        bad = [d for d in items if d not in DUMPABLE]
        if bad:
            raise ConfigError(f"[outputs] dump: unknown field(s) {bad}; choose from {list(DUMPABLE)}")
        return items

    def equation_kind(self):
        text = self.get("equation", "f").strip()
        low = text.lower()
        if low in (J_EQUATION, MONGE_AMPERE):
            return low
        return text

    # --- assembly -------------------------------------------------------

    def _scalar(self, grid, key, text):
        try:
            return ex.field(text, grid)
        except ex.UnknownIdentifierError as exc:
            raise ConfigError(f"[fields] {key}: unknown identifier {exc.name!r} "
                              f"(grid has x1..x{grid.dim})") from None
        except SupSlopeError as exc:
            raise ConfigError(f"[fields] {key}: {exc}") from None

    def _tensor(self, grid, name, default):
        f = self.sections["fields"]
        entries = {k: v for k, v in f.items() if _TENSOR_KEY.match(k) and _TENSOR_KEY.match(k).group(1) == name}
        n = grid.n
        if not entries:
            return default
        if name in entries:
            if len(entries) > 1:
                raise ConfigError(f"[fields] {name}: give either {name} or its entries, not both")
            text = entries[name]
            if text.strip().lower() == "identity":
                return np.eye(n)
            s = self._scalar(grid, name, text)
            return s[..., None, None] * np.eye(n)
        dtype = complex if grid.complex else float
        T = np.array(np.broadcast_to(np.eye(n), grid.shape + (n, n)), dtype=dtype)
        for key, text in sorted(entries.items()):
            _, i, j, im = _TENSOR_KEY.match(key).groups()
            i, j = int(i) - 1, int(j) - 1
            if i >= n or j >= n:
                raise ConfigError(f"[fields] {key}: index out of range for n={n}")
            if i > j:
                raise ConfigError(f"[fields] {key}: give the upper triangle (i <= j) only")
            val = self._scalar(grid, key, text)
            if im:
                if not grid.complex:
                    raise ConfigError(f"[fields] {key}: imaginary parts need a complex grid")
                if i == j:
                    raise ConfigError(f"[fields] {key}: diagonal entries of a hermitian form are real")
                T[..., i, j] = T[..., i, j].real + 1j * val
            else:
                T[..., i, j] = val + (1j * T[..., i, j].imag if grid.complex else 0)
        for i in range(n):
            for j in range(i + 1, n):
                T[..., j, i] = np.conj(T[..., i, j])
        return T

    def build(self) -> Built:
        grid = self.grid()
        f = self.sections["fields"]
        kind = self.equation_kind()
        names = ("chi", "omega") if grid.complex else ("theta", "g")
        for key in f:
            m = _TENSOR_KEY.match(key)
            if m and m.group(1) not in names:
                raise ConfigError(f"[fields] {key}: {grid.kind} grids use {names[0]} and {names[1]}")
        if kind == J_EQUATION and not grid.complex:
            raise ConfigError("[equation] j-equation needs a complex grid")
        metric = self._tensor(grid, names[1], np.eye(grid.n))
        background = self._tensor(grid, names[0], metric if kind == MONGE_AMPERE else np.eye(grid.n))
        seed_u = self._scalar(grid, "seed_u", f["seed_u"])
        reference = self._scalar(grid, "reference", f["reference"]) if "reference" in f else None
        perturb = self._scalar(grid, "perturb", self.get("solver", "perturb"))
        from_ref = _bool("fields", "psi_from_reference", f["psi_from_reference"])
        if from_ref and reference is None:
            raise ConfigError("[fields] psi_from_reference needs a reference expression")
        if from_ref and "psi" in f and f["psi"] != DEFAULTS["fields"]["psi"]:
            raise ConfigError("[fields] give psi or psi_from_reference, not both")
        try:
            if kind == J_EQUATION:
                jinst = jq.JInstance(grid, metric, background, 0.0)
                psi = jq.manufactured_j_psi(jinst, reference) if from_ref else self._scalar(grid, "psi", f["psi"])
                jinst = jq.JInstance(grid, metric, background, psi)
                return Built(grid, jq.reduce_to_quotient(jinst), jinst, seed_u, reference, perturb, -1.0)
            if kind == MONGE_AMPERE:
                fspec = sf.sigma_k(grid.n, grid.n)
                factor = float(grid.n)
            else:
                fspec = sf.parse_spec(kind, grid.n)
                factor = 1.0
            if from_ref:
                psi = ops.manufactured_psi(grid, metric, background, fspec, reference) * factor
            else:
                psi = self._scalar(grid, "psi", f["psi"])
            inst = ops.ProblemInstance(grid, metric, background, psi / factor, fspec)
        except ConfigError:
            raise
        except (SupSlopeError, ValueError) as exc:
            raise ConfigError(f"invalid problem: {exc}") from None
        return Built(grid, inst, None, seed_u, reference, perturb, factor)
