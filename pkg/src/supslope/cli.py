"""Command line entry point: solve / verify / slope / finfty / selftest.

Exit codes: 0 success, 1 a verification verdict failed, 2 continuity
failure, 3 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import continuity as co
from . import geometry as geo
from . import jequation as jq
from . import operators as ops
from . import selftest
from . import slope
from . import symfunc as sf
from .config import MONGE_AMPERE, RunConfig
from .errors import AdmissibilityError, ConfigError, ContinuityFailure, SupSlopeError

EXIT_OK = 0
EXIT_VERDICT = 1
EXIT_CONTINUITY = 2
EXIT_CONFIG = 3

SCHEMA = 1
UNIQUENESS_TOL = 1e-6
UNIQUENESS_C_TOL = 1e-8

log = logging.getLogger("supslope")


def _clean(obj):
    """JSON-safe copy: numpy scalars to python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def write_report(outdir: Path, report: dict) -> Path:
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "report.json"
    text = json.dumps(_clean(report), indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def write_trace(outdir: Path, trace: co.ContinuityTrace) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "trace.csv").write_text(trace.to_csv(), encoding="utf-8")


def _base_report(cfg: RunConfig, command: str) -> dict:
    return {"schema": SCHEMA, "command": command, "config": cfg.resolved()}


def _run_solve(built, opts):
    """Solve the configured problem; returns the solver-form Solution."""
    return co.solve(built.instance, built.seed_u, opts)


def _oracle_c(cfg, built):
    """Closed-form constant when one applies, in the reported normalization."""
    if cfg.equation_kind() != MONGE_AMPERE:
        return None
    inst, grid = built.instance, built.grid
    psi = inst.psi * grid.n
    if grid.complex:
        try:
            return jq.kahler_ma_constant_oracle(grid, inst.g, psi)
        except SupSlopeError:
            return None
    eye = np.broadcast_to(np.eye(grid.n), inst.g.shape)
    if np.array_equal(inst.g, eye) and np.array_equal(inst.theta, eye):
        return jq.real_ma_constant_oracle(grid, psi)
    return None


def _solution_block(cfg, built, sol) -> dict:
    inst = built.instance
    c = built.c_factor * sol.c
    out = {
        "c": c,
        "c_solver": sol.c,
        "residual": sol.state.residual,
        "cone_margin": sol.state.margin,
        "sigma_from_solution": float(np.max(ops.normalized_values(inst, sol.u))),
        "trace": {"steps": len(sol.trace.steps), "total_newton": sol.trace.total_newton,
                  "rejected": sol.trace.rejected},
    }
    cbar = co.c_bar(inst, built.seed_u)
    clow = co.c_lower(inst, built.seed_u)
    tol = co.ct_tolerance(built.grid)
    out["ct_bounds"] = {"c_bar": cbar, "C_lower": clow, "tolerance": tol,
                        "pass": co.verify_ct_bounds(sol.trace, cbar, clow, tol)}
    if built.reference is not None:
        d = sol.u - built.reference
        out["manufactured_error"] = float(np.max(np.abs(d - d.mean())))
    oracle = _oracle_c(cfg, built)
    if oracle is not None:
        out["oracle_c"] = oracle
    if built.is_j:
        out["j_residual"] = jq.j_residual(built.jinstance, sol.u, c)
    return out


def _dump_fields(cfg, built, sol, outdir: Path):
    inst = built.instance
    written = []
    for name in cfg.dumps():
        if name == "u":
            data = sol.u
        elif name == "psi":
            data = built.c_factor * inst.psi
        elif name == "residual":
            data = sol.path.residual(sol.state.phi, sol.c, 1.0)[0]
        else:
            data = ops.pointwise(inst, sol.u, values=False).lam
        geo.write_field(outdir / f"{name}.slf", built.grid, data)
        written.append(f"{name}.slf")
    return written


def cmd_solve(cfg: RunConfig, outdir: Path) -> int:
    built = cfg.build()
    opts = cfg.solver_options()
    report = _base_report(cfg, "solve")
    try:
        sol = _run_solve(built, opts)
    except ContinuityFailure as exc:
        write_trace(outdir, exc.trace)
        report.update(status="continuity_failure", message=str(exc), last_t=exc.state.t,
                      trace={"steps": len(exc.trace.steps), "total_newton": exc.trace.total_newton,
                             "rejected": exc.trace.rejected})
        write_report(outdir, report)
        print(f"continuity failure: {exc}", file=sys.stderr)
        return EXIT_CONTINUITY
    write_trace(outdir, sol.trace)
    report.update(status="ok", **_solution_block(cfg, built, sol))
    if built.is_j:
        p = cfg.slope_params()
        report["xi_estimate"] = None
        if p["budget"] > 0:
            report["xi_estimate"] = jq.j_slope(built.jinstance, p["budget"], p["modes"], built.seed_u)
    report["dumps"] = _dump_fields(cfg, built, sol, outdir)
    write_report(outdir, report)
    print(f"c = {report['c']!r}  residual = {report['residual']:.3e}")
    return EXIT_OK


def _verdict(passed, **info):
    return {"pass": bool(passed), **info}


def cmd_verify(cfg: RunConfig, outdir: Path) -> int:
    built = cfg.build()
    inst = built.instance
    opts = cfg.solver_options()
    report = _base_report(cfg, "verify")
    try:
        sol = _run_solve(built, opts)
    except ContinuityFailure as exc:
        write_trace(outdir, exc.trace)
        report.update(status="continuity_failure", message=str(exc), last_t=exc.state.t)
        write_report(outdir, report)
        print(f"continuity failure: {exc}", file=sys.stderr)
        return EXIT_CONTINUITY
    trace = sol.trace
    if cfg.corrupt_trace():
        # test mode: plant a snapshot that violates c_t <= t c_bar
        trace = replace(trace, steps=list(trace.steps))
        last = trace.steps[-1]
        cbar = co.c_bar(inst, built.seed_u)
        trace.steps.append(replace(last, c=last.t * cbar + 1.0))
    write_trace(outdir, trace)
    verdicts = {}

    top, low = ops.condition_three(inst, sol.u)
    gap = math.inf if math.isinf(low) else math.log(low) - math.log(top)
    verdicts["condition_3"] = _verdict(gap > ops.STRICTNESS_TOL, max_F=top, min_Finf=low, log_margin=gap)

    p = cfg.slope_params()
    kw = dict(budget=p["budget"], modes=p["modes"], seed=built.seed_u, restarts=p["restarts"], rng_seed=p["seed"])
    upper = slope.supslope_minimax(inst, **kw)
    lower = slope.supslope_maximin(inst, **kw)
    sub_up = ops.subsolution_check(inst, sol.u, upper)
    sub_lo = ops.subsolution_check(inst, sol.u, lower)
    try:
        sub_up.c_params = ops.c_subsolution_params(inst, sol.u, np.exp(inst.psi) * upper)
    except SupSlopeError as exc:
        log.info("no C-subsolution parameters: %s", exc)
    verdicts["subsolution"] = _verdict(sub_up.verdict and sub_lo.verdict, sigma_minimax_upper=upper,
                                       sigma_maximin_lower=lower, against_upper=sub_up.to_dict(),
                                       against_lower=sub_lo.to_dict())

    cbar = co.c_bar(inst, built.seed_u)
    clow = co.c_lower(inst, built.seed_u)
    tol = co.ct_tolerance(built.grid)
    verdicts["ct_bounds"] = _verdict(co.verify_ct_bounds(trace, cbar, clow, tol), c_bar=cbar, C_lower=clow,
                                     tolerance=tol)

    try:
        probe = co.uniqueness_probe(inst, built.seed_u, built.seed_u + built.perturb, opts, c_tol=UNIQUENESS_C_TOL)
        verdicts["uniqueness"] = _verdict(probe.deviation <= UNIQUENESS_TOL, deviation=probe.deviation,
                                          delta_c=probe.delta_c)
    except (AssertionError, ContinuityFailure, AdmissibilityError) as exc:
        verdicts["uniqueness"] = _verdict(False, message=str(exc))

    verdicts["solve"] = _verdict(sol.state.residual <= opts.tol, residual=sol.state.residual)
    ok = all(v["pass"] for v in verdicts.values())
    report.update(status="ok" if ok else "failed", verdicts=verdicts, **_solution_block(cfg, built, sol))
    write_report(outdir, report)
    for name in ("solve", "condition_3", "subsolution", "ct_bounds", "uniqueness"):
        print(f"{'PASS' if verdicts[name]['pass'] else 'FAIL'} {name}")
    return EXIT_OK if ok else EXIT_VERDICT


def cmd_slope(cfg: RunConfig, outdir: Path) -> int:
    built = cfg.build()
    inst = built.instance
    p = cfg.slope_params()
    report = _base_report(cfg, "slope")
    u_sol = None
    if cfg.has_solver:
        try:
            sol = _run_solve(built, cfg.solver_options())
        except ContinuityFailure as exc:
            write_trace(outdir, exc.trace)
            report.update(status="continuity_failure", message=str(exc))
            write_report(outdir, report)
            print(f"continuity failure: {exc}", file=sys.stderr)
            return EXIT_CONTINUITY
        write_trace(outdir, sol.trace)
        u_sol = sol.u
        report["c"] = built.c_factor * sol.c
        report["c_solver"] = sol.c
    rep = slope.slope_report(inst, p["budget"], p["modes"], built.seed_u, u_sol, p["restarts"], p["seed"])
    report.update(status="ok", slope=rep.to_dict())
    if built.is_j:
        report["xi_estimate"] = 1.0 / rep.sigma_minimax_upper
    write_report(outdir, report)
    print(json.dumps(_clean(rep.to_dict()), sort_keys=True))
    return EXIT_OK


def cmd_finfty(spec_text: str, lam_text: str) -> int:
    try:
        lam = np.array([float(v) for v in lam_text.split(",")])
    except ValueError:
        print(f"error: cannot parse eigenvalues {lam_text!r}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        spec = sf.parse_spec(spec_text, lam.size)
        lam = sf.as_eigentuple(lam)
    except (SupSlopeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    inside, margin = sf.in_cone(spec.cone, lam)
    out = {"spec": str(spec), "lambda": lam.tolist(), "in_cone": bool(inside), "cone_margin": float(margin),
           "dichotomy": sf.dichotomy_classify(spec)}
    if inside:
        f, grad = sf.eval_with_grad(spec, lam)
        out.update(f=float(f), grad=grad.tolist(), f_infty=float(sf.f_infty(spec, lam)))
    print(json.dumps(_clean(out), sort_keys=True))
    return EXIT_OK


def cmd_selftest(seed: int) -> int:
    checks = selftest.run_all(seed)
    for c in checks:
        print(c.line())
    return EXIT_OK if selftest.summarize(checks) else EXIT_VERDICT


def _thread_limit():
    raw = os.environ.get("SLOPE_THREADS")
    if not raw:
        return nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"SLOPE_THREADS must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="supslope", description="Hessian-type equations on tori: solve, verify, slopes.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, text in (("solve", "run the continuity method"), ("verify", "run the verification battery"),
                       ("slope", "estimate the sup-slope from both sides")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config", help="path to the run configuration")
        p.add_argument("--out", help="output directory (overrides [outputs] directory)")
    p = sub.add_parser("finfty", help="evaluate f, grad f and f_inf at one eigenvalue tuple")
    p.add_argument("spec", help="e.g. 'sigma_k(k=2)' or 'quotient(k=2,l=1)'")
    p.add_argument("lam", help="comma separated eigenvalues")
    p = sub.add_parser("selftest", help="run the built-in property suites")
    p.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        with _thread_limit():
            if args.command == "finfty":
                return cmd_finfty(args.spec, args.lam)
            if args.command == "selftest":
                return cmd_selftest(args.seed)
            cfg = RunConfig.from_file(args.config)
            outdir = Path(args.out if args.out else cfg.get("outputs", "directory"))
            cfg.dumps()
            return {"solve": cmd_solve, "verify": cmd_verify, "slope": cmd_slope}[args.command](cfg, outdir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AdmissibilityError as exc:
        print(f"config error: seed potential {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
