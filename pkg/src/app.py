# src/app.py
"""
Command line front end.

    python -m src.app parse table2_case3
    python -m src.app check-symmetry --bvp table2_case3 --operator T
    python -m src.app classify-verify --table 2 --case 3 7
    python -m src.app reduce --bvp power_flux --operator "T+v*X1" --names x1=y
    python -m src.app validate lambda-scan --q0 -2
    python -m src.app geometry --list

Exit status: 0 when every check passes, 1 when a check fails, 2 on errors.
"""

import argparse
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import sympy as sp

from .core.classification import verify_all
from .core.config import Settings, load_config
from .core.domain_geometry import (BASIS, SUBALGEBRAS, absolute_invariant, check_catalogue,
                                   check_domain_invariance, generic_domains, polygon, subalgebra)
from .core.errors import BvpSymError, ConstructionError
from .core.expr_core import dsl_str
from .core.invariance import INVARIANT, check_bvp, load_library
from .core.numerics import (asymptote_deviation, derive_boundary_function, example2_solution,
                            implicit_residual, integrate_profile, lambda_scan, mol_solve, residual_on_grid)
from .core.pde_dsl import BvpSpec, load, load_document, parse_expression, parse_field, serialize
from .core.prolongation import VectorField, linear_combination
from .core.reduction import (change_dependent, kirchhoff_linearize, liouville_substitute, polar_ansatz,
                             reduce_bvp)
from .core.report_writer import (emit, header, reduced_dict, render_report, render_verification,
                                 report_dict, settings_dict, to_json, verification_dict, write_table)
from .core.transforms import check_transform

logger = logging.getLogger(__name__)

OK, FAILED, ERROR = 0, 1, 2


@dataclass
class RunConfig:
    command: str
    settings: Settings
    options: Dict[str, Any] = field(default_factory=dict)
    fmt: str = "text"
    verbosity: int = 0
    output: Optional[str] = None

    def get(self, key: str, default=None):
        value = self.options.get(key)
        return default if value is None else value


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def parse_assignments(items: Optional[Sequence[str]]) -> Dict[str, str]:
    """['k=-2', 'x1=y'] -> {'k': '-2', 'x1': 'y'} (comma-separated items allowed)"""
    out = {}
    for item in items or ():
        for part in item.split(","):
            if not part.strip():
                continue
            if "=" not in part:
                raise ConstructionError(f"expected name=value, got '{part}'")
            key, value = part.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def load_bvp(name: str, settings: Settings, assignments: Optional[Dict[str, str]] = None) -> BvpSpec:
    path = settings.data_path(name)
    bvp = load(path)
    if not isinstance(bvp, BvpSpec):
        raise ConstructionError(f"{path} does not define a boundary value problem")
    if assignments:
        bvp = bvp.with_parameters(**{k: sp.sympify(v) for k, v in assignments.items()})
    return bvp


def resolve_operator(text: str, bvp: BvpSpec) -> VectorField:
    """A named operator, a combination like 'T+v*X1', or an explicit field 'd/dt + ...'"""
    text = text.strip()
    if text in bvp.operators:
        return bvp.operators[text]
    ctx = bvp.ctx
    if "d/d" in text:
        return parse_field(text, ctx, name=text)
    names = [n for n in bvp.operators if n.isidentifier() and not ctx.is_registered(n)]
    local = ctx.derive(extra_parameters=names, time=ctx.time)
    expr = sp.expand(parse_expression(text, local))
    terms, rest = [], expr
    for n in names:
        sym = local.symbol(n)
        c = expr.coeff(sym)
        if c != 0:
            terms.append((ctx.rebind(c), bvp.operators[n]))
            rest -= c * sym
    if not terms or sp.expand(rest) != 0:
        known = ", ".join(bvp.operators) or "none"
        raise ConstructionError(f"'{text}' is not a combination of the operators of {bvp.name} ({known})")
    return linear_combination(terms, name=text.replace(" ", ""))


def find_transform(name: Optional[str], bvp: BvpSpec, settings: Settings):
    if not name:
        return None
    found = bvp.transforms.get(name) or next((tr for tr in load_library(settings) if tr.name == name), None)
    if found is None:
        raise ConstructionError(f"unknown transform '{name}'")
    check_transform(found, settings.seed)
    return found


def _floats(text: Optional[str]) -> Optional[List[float]]:
    """'0.05:1.5:0.05' (start:stop:step, inclusive) or '0.5,1,1.5'"""
    if not text:
        return None
    if ":" in text:
        start, stop, step = (float(v) for v in text.split(":"))
        count = int(round((stop - start) / step)) + 1
        return [start + i * step for i in range(count)]
    return [float(v) for v in text.split(",")]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_parse(config: RunConfig) -> Tuple[int, str]:
    doc = load_document(config.settings.data_path(config.get("file")))
    if doc.bvp is not None:
        parts = [serialize(doc.bvp)]
    else:
        parts = [serialize(X, doc.ctx) for X in doc.operators.values()]
        parts += [serialize(tr) for tr in doc.transforms.values()]
    if config.fmt == "json":
        bvp = doc.bvp
        payload = {
            "bvp": bvp.name if bvp else None,
            "operators": sorted(doc.operators),
            "transforms": sorted(doc.transforms),
            "text": "\n\n".join(parts),
        }
        return OK, to_json(payload)
    return OK, "\n\n".join(parts)


def cmd_check_symmetry(config: RunConfig) -> Tuple[int, str]:
    settings = config.settings
    bvp = load_bvp(config.get("bvp"), settings, parse_assignments(config.get("set")))
    names = config.get("operator") or list(bvp.operators)
    if not names:
        raise ConstructionError(f"{bvp.name} defines no operators; pass --operator")
    transform = find_transform(config.get("transform"), bvp, settings)
    reports = []
    for text in names:
        X = resolve_operator(text, bvp)
        reports.append(check_bvp(X, bvp, transform=transform, settings=settings, variant=config.get("variant")))
    status = OK if all(r.overall == INVARIANT for r in reports) else FAILED
    if config.get("allow_constraints") and all(r.passed for r in reports):
        status = OK
    if config.fmt == "json":
        payload = [report_dict(r, settings) for r in reports]
        return status, to_json(payload[0] if len(payload) == 1 else payload)
    return status, "\n\n".join(render_report(r, settings) for r in reports)


def cmd_classify_verify(config: RunConfig) -> Tuple[int, str]:
    settings = config.settings
    table = int(config.get("table"))
    kwargs = {}
    if table == 2:
        kwargs["variants"] = tuple(config.get("variants", "gradient,flux").split(","))
        kwargs["epsilons"] = tuple(int(e) for e in config.get("epsilons", "1,2").split(","))
    results = verify_all(table, settings, config.get("case"), **kwargs)
    status = OK if all(r.passed for r in results) else FAILED
    if config.fmt == "json":
        return status, to_json({"table": table, "rows": [verification_dict(r, settings) for r in results],
                                "settings": settings_dict(settings)})
    lines = header(settings, f"📄 Table {table}: {len(results)} row(s)")
    lines += [render_verification(r) for r in results]
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} rows verified")
    return status, "\n".join(lines)


def cmd_reduce(config: RunConfig) -> Tuple[int, str]:
    settings = config.settings
    bvp = load_bvp(config.get("bvp"), settings, parse_assignments(config.get("set")))
    if config.get("kirchhoff"):
        problem = kirchhoff_linearize(bvp, settings=settings)
    else:
        if not config.get("operator"):
            raise ConstructionError("reduce needs --operator (or --kirchhoff)")
        X = resolve_operator(config.get("operator"), bvp)
        verified = check_bvp(X, bvp, settings=settings) if config.get("verify") else None
        ansatz = polar_ansatz(X, bvp.resolved().ctx) if config.get("polar") else None
        problem = reduce_bvp(X, bvp, ansatz=ansatz, settings=settings, verified=verified,
                             names=parse_assignments(config.get("names")) or None,
                             orientation=int(config.get("orientation", 1)),
                             keep_rules=bool(config.get("keep_rules")))
        if config.get("liouville"):
            problem = liouville_substitute(problem, settings=settings)
        elif config.get("dependent_power"):
            power = sp.sympify(config.get("dependent_power"))
            problem = change_dependent(problem, "w", lambda w: w ** power)
    if config.fmt == "json":
        return OK, to_json(reduced_dict(problem))
    return OK, serialize(problem.to_bvp())


def _validate_residual(config: RunConfig) -> Tuple[int, Dict[str, Any]]:
    settings = config.settings
    bvp = load_bvp(config.get("bvp", "example2"), settings)
    values = {"m": -0.5, "lam1": 1.0, "lam2": 1.0}
    values.update({k: float(sp.sympify(v)) for k, v in parse_assignments(config.get("set")).items()})
    C0, C1 = float(config.get("C0", 2.0)), float(config.get("C1", 1.0))
    solution = example2_solution(bvp.ctx, C0, C1)
    n = int(config.get("n", 10))
    grid = {"t": np.linspace(0.0, 1.0, n), "x": np.linspace(0.0, 2.0, n)}
    result = residual_on_grid(solution, bvp, grid, values)
    threshold = float(config.get("threshold", 1e-10))
    flux = derive_boundary_function(solution, bvp, "phi")
    return (OK if result.max_abs < threshold else FAILED), {
        "check": "residual",
        "solution": dsl_str(solution),
        "boundary_function": dsl_str(flux),
        "max_abs": result.max_abs,
        "evaluated": result.evaluated,
        "singular": result.singular,
        "threshold": threshold,
        "values": values,
    }


def _validate_ode(config: RunConfig) -> Tuple[int, Dict[str, Any]]:
    q0, lam = float(config.get("q0", -2.0)), float(config.get("lam", 0.5))
    start = (float(config.get("start", 0.1)), float(config.get("phi0", 1.0)))
    tol = float(config.get("ode_tol", 1e-8))
    profile = integrate_profile(q0, lam, start, float(config.get("end", 50.0)), tol)
    deviation = implicit_residual(profile)
    payload = {"check": "ode", "q0": q0, "lam": lam, "start": list(start), "implicit_deviation": deviation,
               "C": profile.C, "roots": list(profile.roots.roots), "ode_tol": tol}
    try:
        payload["asymptote_deviation"] = asymptote_deviation(profile)
    except BvpSymError as exc:
        payload["asymptote_deviation"] = None
        payload["note"] = str(exc)
    if config.get("table"):
        write_table(config.get("table"), *profile.table())
    return (OK if deviation < 1e-6 else FAILED), payload


def _validate_lambda_scan(config: RunConfig) -> Tuple[int, Dict[str, Any]]:
    q0 = float(config.get("q0", -2.0))
    scan = lambda_scan(q0, _floats(config.get("grid")), tol=float(config.get("ode_tol", 1e-8)),
                       show_progress=config.settings.show_progress)
    ok = abs(scan.best - scan.target) <= 0.01 * scan.target
    if config.get("table"):
        write_table(config.get("table"), *scan.table())
    return (OK if ok else FAILED), {"check": "lambda-scan", "q0": q0, "best": scan.best, "target": scan.target,
                                    "blowups": scan.blowups}


def _validate_conservation(config: RunConfig) -> Tuple[int, Dict[str, Any]]:
    q0 = float(config.get("q0", -1.0))
    solution = mol_solve(q0, n=int(config.get("n", 200)), delta=float(config.get("delta", 1e-2)),
                         t_end=float(config.get("t_end", 0.5)))
    rate = solution.mass_rate()
    ok = abs(rate + q0) <= 0.05 * max(abs(q0), 1.0)
    if config.get("table"):
        write_table(config.get("table"), *solution.table())
    return (OK if ok else FAILED), {"check": "conservation", "q0": q0, "mass_rate": rate, "expected": -q0,
                                    "metadata": solution.metadata}


VALIDATORS = {
    "residual": _validate_residual,
    "ode": _validate_ode,
    "lambda-scan": _validate_lambda_scan,
    "conservation": _validate_conservation,
}


def cmd_validate(config: RunConfig) -> Tuple[int, str]:
    status, payload = VALIDATORS[config.get("check")](config)
    payload["passed"] = status == OK
    payload["settings"] = settings_dict(config.settings)
    if config.fmt == "json":
        return status, to_json(payload)
    lines = header(config.settings, f"📐 validate {payload['check']}")
    for key, value in payload.items():
        if key in ("check", "settings"):
            continue
        if isinstance(value, float):
            value = f"{value:.6g}" if math.isfinite(value) else str(value)
        lines.append(f"  {key}: {value}")
    return status, "\n".join(lines)


def cmd_geometry(config: RunConfig) -> Tuple[int, str]:
    beta = float(config.get("beta", 0.3))
    seed = config.settings.seed
    if config.get("list"):
        rows = []
        for sub_id in SUBALGEBRAS:
            domains = ", ".join(d.text() for d in generic_domains(sub_id, beta))
            rows.append({"subalgebra": sub_id, "invariant": dsl_str(absolute_invariant(sub_id)),
                         "domains": domains})
        if config.fmt == "json":
            return OK, to_json(rows)
        return OK, "\n".join(f"<{r['subalgebra']}>  I = {r['invariant']}  domains: {r['domains']}" for r in rows)

    sub_id = config.get("subalgebra")
    if sub_id:
        verdicts = [check_domain_invariance(d, g, seed=seed)
                    for d in generic_domains(sub_id, beta) for g in subalgebra(sub_id, beta)]
        controls = []
    else:
        verdicts = check_catalogue(beta, seed=seed)
        triangle = polygon()
        controls = [check_domain_invariance(triangle, g, seed=seed) for g in BASIS.values()]
    ok = all(v.invariant for v in verdicts) and not any(v.invariant for v in controls)
    if config.fmt == "json":
        payload = {"checks": [vars(v) for v in verdicts], "controls": [vars(v) for v in controls],
                   "passed": ok, "settings": settings_dict(config.settings)}
        return (OK if ok else FAILED), to_json(payload)
    lines = header(config.settings, "📐 domain invariance")
    lines += [v.text() for v in verdicts]
    if controls:
        lines.append("negative control (triangle):")
        lines += [v.text() for v in controls]
    return (OK if ok else FAILED), "\n".join(lines)


COMMANDS = {
    "parse": cmd_parse,
    "check-symmetry": cmd_check_symmetry,
    "classify-verify": cmd_classify_verify,
    "reduce": cmd_reduce,
    "validate": cmd_validate,
    "geometry": cmd_geometry,
}


def run(config: RunConfig) -> Tuple[int, str]:
    """Execute one subcommand; errors become exit status 2 with the message as output"""
    try:
        return COMMANDS[config.command](config)
    except BvpSymError as exc:
        logger.error(f"❌ {exc}")
        return ERROR, f"error: {exc}"


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--epsilon", type=int, help="exponent of the power-decay transform")
    common.add_argument("--tol", type=float, help="equality tolerance")
    common.add_argument("--seed", type=int, help="random seed for sampling")
    common.add_argument("--samples", type=int, help="random points per equality test")
    common.add_argument("--format", dest="fmt", choices=("text", "json"), default="text")
    common.add_argument("--output", "-o", help="write the report here instead of stdout")
    common.add_argument("--data-dir", help="directory of bundled .bvp files")
    common.add_argument("--no-progress", action="store_true", help="hide progress bars")
    common.add_argument("--verbose", "-v", action="count", default=0)

    parser = argparse.ArgumentParser(prog="bvpsym", description="Symmetries of boundary value problems")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", parents=[common], help="parse a .bvp file and print its canonical form")
    p.add_argument("file")

    p = sub.add_parser("check-symmetry", parents=[common], help="run the six-item invariance check")
    p.add_argument("--bvp", required=True)
    p.add_argument("--operator", action="append", help="name, combination (T+v*X1) or field (d/dt + ...)")
    p.add_argument("--transform", help="change of variables for the conditions at infinity")
    p.add_argument("--variant", help="alternative condition at infinity, e.g. flux")
    p.add_argument("--set", action="append", help="fix parameters, e.g. k=-2")
    p.add_argument("--allow-constraints", action="store_true", help="exit 0 for invariance under constraints")

    p = sub.add_parser("classify-verify", parents=[common], help="verify classification table rows")
    p.add_argument("--table", type=int, choices=(1, 2), required=True)
    p.add_argument("--case", nargs="*")
    p.add_argument("--variants", help="comma-separated, default gradient,flux")
    p.add_argument("--epsilons", help="comma-separated, default 1,2")

    p = sub.add_parser("reduce", parents=[common], help="symmetry reduction")
    p.add_argument("--bvp", required=True)
    p.add_argument("--operator")
    p.add_argument("--names", action="append", help="rename invariants, e.g. x1=y")
    p.add_argument("--set", action="append", help="fix parameters, e.g. k=-2")
    p.add_argument("--orientation", type=int, choices=(1, -1))
    p.add_argument("--polar", action="store_true", help="polar ansatz u = v(t, theta)/r")
    p.add_argument("--liouville", action="store_true", help="follow with phi = exp(psi)")
    p.add_argument("--dependent-power", help="follow with phi = w^p")
    p.add_argument("--kirchhoff", action="store_true", help="Kirchhoff substitution of a stationary problem")
    p.add_argument("--keep-rules", action="store_true")
    p.add_argument("--verify", action="store_true", help="check the operator before reducing")

    p = sub.add_parser("validate", parents=[common], help="numerical validation")
    p.add_argument("check", choices=tuple(VALIDATORS))
    p.add_argument("--bvp")
    p.add_argument("--set", action="append")
    p.add_argument("--C0", type=float)
    p.add_argument("--C1", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--q0", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--start", type=float)
    p.add_argument("--phi0", type=float)
    p.add_argument("--end", type=float)
    p.add_argument("--ode-tol", type=float)
    p.add_argument("--grid", help="start:stop:step or comma-separated values")
    p.add_argument("--delta", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--table", help="write the solution table (CSV) here")

    p = sub.add_parser("geometry", parents=[common], help="invariant plane domains")
    p.add_argument("--list", action="store_true")
    p.add_argument("--subalgebra", choices=SUBALGEBRAS)
    p.add_argument("--beta", type=float)
    return parser


def config_from_args(args: argparse.Namespace, settings: Optional[Settings] = None) -> RunConfig:
    settings = settings or load_config()
    overrides = {k: getattr(args, k) for k in ("epsilon", "tol", "seed", "samples") if getattr(args, k) is not None}
    if args.data_dir:
        overrides["data_dir"] = Path(args.data_dir)
    if args.no_progress:
        overrides["show_progress"] = False
    settings = replace(settings, **overrides)
    skip = {"command", "fmt", "output", "verbose", "epsilon", "tol", "seed", "samples", "data_dir", "no_progress"}
    options = {k: v for k, v in vars(args).items() if k not in skip}
    return RunConfig(args.command, settings, options, args.fmt, args.verbose, args.output)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = load_config()
    level = settings.log_level
    if args.verbose:
        level = "DEBUG" if args.verbose > 1 else "INFO"
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    config = config_from_args(args, settings)
    status, text = run(config)
    if status == ERROR:
        print(text, file=sys.stderr)
    else:
        emit(text, config.output, sys.stdout)
    return status


if __name__ == "__main__":
    sys.exit(main())
