# src/core/classification.py
"""
Equivalence transformations of the diffusion class and verification of the
two symmetry tables.

Rows of the tables live in data/table{1,2}_case*.bvp: each file carries the
problem, its operators, and `expect:` / `control:` lines naming the operators
that must pass and those that must fail.
"""

import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import sympy as sp
from sympy.calculus.accumulationbounds import AccumBounds
from tqdm import tqdm

from .config import Settings
from .errors import BvpSymError, ConstructionError, DegenerateTransformError
from .expr_core import VariableContext, dsl_str, equivalent, is_zero
from .invariance import INVARIANT, InvarianceReport, check_bvp
from .pde_dsl import BvpSpec, ChangeOfVariables, FiniteBoundaryCondition, InfinityCondition, load
from .prolongation import VectorField
from .transforms import JetMap, pushforward

logger = logging.getLogger(__name__)

PARAMETER_NAMES = ("alpha", "beta", "delta", "gamma0", "gamma1", "gamma2", "gamma_u", "theta")


# ---------------------------------------------------------------------------
# Equivalence group
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EquivalenceTransform:
    """
    t~ = alpha t + gamma0,  x~ = beta R(theta) x + gamma,  u~ = delta u + gamma_u
    with d~ = (beta^2/alpha) d and, for the boundary value problem, q~ = (beta delta/alpha) q.

    `restricted` marks the subgroup that keeps the half-plane x2 > 0 and the
    flux condition on x2 = 0: no rotation, gamma2 = 0, alpha > 0, beta > 0.
    """
    alpha: sp.Expr = sp.S.One
    beta: sp.Expr = sp.S.One
    delta: sp.Expr = sp.S.One
    gamma0: sp.Expr = sp.S.Zero
    gamma1: sp.Expr = sp.S.Zero
    gamma2: sp.Expr = sp.S.Zero
    gamma_u: sp.Expr = sp.S.Zero
    theta: sp.Expr = sp.S.Zero
    restricted: bool = False

    def __post_init__(self):
        for name in PARAMETER_NAMES:
            object.__setattr__(self, name, sp.sympify(getattr(self, name)))

    def validate(self):
        if sp.simplify(self.alpha * self.beta * self.delta) == 0:
            raise DegenerateTransformError(
                f"alpha*beta*delta must not vanish (alpha={self.alpha}, beta={self.beta}, delta={self.delta})")
        if self.restricted:
            if self.theta != 0 or self.gamma2 != 0:
                raise DegenerateTransformError("the boundary-preserving subgroup has no rotation and gamma2 = 0")
            if not (self.alpha.is_positive and self.beta.is_positive):
                raise DegenerateTransformError("the boundary-preserving subgroup needs alpha > 0 and beta > 0")

    @property
    def diffusivity_factor(self) -> sp.Expr:
        return self.beta ** 2 / self.alpha

    @property
    def flux_factor(self) -> sp.Expr:
        return self.beta * self.delta / self.alpha

    def _rotate(self, a, b, angle):
        c, s = sp.cos(angle), sp.sin(angle)
        return c * a - s * b, s * a + c * b

    def map_point(self, t, x1, x2, u) -> Tuple[sp.Expr, sp.Expr, sp.Expr, sp.Expr]:
        r1, r2 = self._rotate(x1, x2, self.theta)
        return (self.alpha * t + self.gamma0, self.beta * r1 + self.gamma1,
                self.beta * r2 + self.gamma2, self.delta * u + self.gamma_u)

    def compose(self, other: "EquivalenceTransform") -> "EquivalenceTransform":
        """self after other"""
        g1, g2 = self._rotate(other.gamma1, other.gamma2, self.theta)
        return EquivalenceTransform(
            alpha=self.alpha * other.alpha,
            beta=self.beta * other.beta,
            delta=self.delta * other.delta,
            gamma0=self.alpha * other.gamma0 + self.gamma0,
            gamma1=self.beta * g1 + self.gamma1,
            gamma2=self.beta * g2 + self.gamma2,
            gamma_u=self.delta * other.gamma_u + self.gamma_u,
            theta=self.theta + other.theta,
            restricted=self.restricted and other.restricted,
        )

    def inverse(self) -> "EquivalenceTransform":
        self.validate()
        g1, g2 = self._rotate(self.gamma1, self.gamma2, -self.theta)
        return EquivalenceTransform(
            alpha=1 / self.alpha, beta=1 / self.beta, delta=1 / self.delta,
            gamma0=-self.gamma0 / self.alpha, gamma1=-g1 / self.beta, gamma2=-g2 / self.beta,
            gamma_u=-self.gamma_u / self.delta, theta=-self.theta, restricted=self.restricted,
        )

    def induced_diffusivity(self, d: sp.Expr, u: sp.Symbol) -> sp.Expr:
        """d~(u~) as an expression in u~ (written with the same symbol u)"""
        return sp.simplify(self.diffusivity_factor * sp.sympify(d).subs(u, (u - self.gamma_u) / self.delta))

    def induced_flux(self, q: sp.Expr, t: sp.Symbol) -> sp.Expr:
        return sp.simplify(self.flux_factor * sp.sympify(q).subs(t, (t - self.gamma0) / self.alpha))

    def as_change_of_variables(self, ctx: VariableContext, name: str = "equivalence") -> ChangeOfVariables:
        """The point transform on the variables of ctx, new variables keep the old names"""
        if len(ctx.space) != 2 or not ctx.time:
            raise ConstructionError(f"equivalence transforms act on (t, x1, x2; u), got {ctx!r}")
        self.validate()
        t, (x1, x2), u = ctx.t, ctx.space_symbols, ctx.u
        new_t, new_x1, new_x2, new_u = self.map_point(t, x1, x2, u)
        inv = self.inverse()
        old_t, old_x1, old_x2, old_u = inv.map_point(t, x1, x2, u)
        names = (ctx.time, *ctx.space, ctx.dependent)
        forward = dict(zip(names, (new_t, new_x1, new_x2, new_u)))
        inverse = dict(zip(names, (old_t, old_x1, old_x2, old_u)))
        return ChangeOfVariables(name, ctx, ctx, forward, inverse, ())

    def text(self) -> str:
        parts = [f"{n}={dsl_str(getattr(self, n))}" for n in PARAMETER_NAMES]
        return ("restricted " if self.restricted else "") + ", ".join(parts)


def _primitive(expr: sp.Expr) -> sp.Expr:
    coeff, rest = sp.factor_terms(sp.sympify(expr)).as_coeff_Mul()
    return rest if coeff != 0 else expr


def _evolution_normalized(residual: sp.Expr, ctx: VariableContext) -> sp.Expr:
    ut = ctx.jet((ctx.time,))
    c = sp.expand(residual).coeff(ut)
    if c != 0 and not c.free_symbols:
        return sp.expand(residual / c)
    return residual


def apply_equivalence(tr: EquivalenceTransform, bvp: BvpSpec) -> BvpSpec:
    """Rewrite the whole problem (and its operators) in the transformed variables"""
    tr.validate()
    source = bvp.resolved()
    ctx = source.ctx
    cov = tr.as_change_of_variables(ctx)
    jets = JetMap.for_transform(cov)

    equations = tuple(_evolution_normalized(jets.to_new(e), ctx) for e in source.equations)
    finite = tuple(FiniteBoundaryCondition(_primitive(jets.to_new_coordinates(bc.locus)),
                                           sp.expand(tr.flux_factor * jets.to_new(bc.relation)))
                   for bc in source.finite_bcs)

    def at_infinity(conditions):
        return tuple(InfinityCondition(_primitive(jets.to_new_coordinates(c.direction)),
                                       _primitive(jets.to_new(c.relation))) for c in conditions)

    operators = {name: pushforward(X, cov, jets).renamed(name) for name, X in source.operators.items()}
    logger.info(f"📐 applied equivalence transform ({tr.text()}) to {bvp.name}")
    metadata = dict(source.metadata)
    metadata["name"] = f"{bvp.name} (transformed)"
    return replace(
        source,
        equations=equations,
        finite_bcs=finite,
        infinity_bcs=at_infinity(source.infinity_bcs),
        variants={k: at_infinity(v) for k, v in source.variants.items()},
        name=metadata["name"],
        metadata=metadata,
        operators=operators,
        transforms={},
    )


# ---------------------------------------------------------------------------
# Table rows
# ---------------------------------------------------------------------------

@dataclass
class TableRow:
    table: int
    case: str
    path: Path
    bvp: BvpSpec
    expected: List[str]
    controls: List[str]
    note: str = ""

    @property
    def constraints(self) -> List[str]:
        return [a.text() for a in self.bvp.ctx.declared_assumptions]

    def operator(self, name: str) -> VectorField:
        if name not in self.bvp.operators:
            raise ConstructionError(f"Table {self.table} case {self.case} does not define operator {name}")
        return self.bvp.operators[name]


def _names(text: str) -> List[str]:
    return [n.strip() for n in text.split(",") if n.strip()]


def case_key(case: str) -> Tuple[int, str]:
    m = re.match(r"(\d+)(.*)", case)
    return (int(m.group(1)), m.group(2)) if m else (10 ** 6, case)


def _row_from(path: Path, table: int) -> TableRow:
    bvp = load(path)
    if not isinstance(bvp, BvpSpec):
        raise ConstructionError(f"{path.name} does not describe a boundary value problem")
    case = bvp.metadata.get("case") or path.stem.split("_case", 1)[-1]
    return TableRow(table, case, path, bvp, _names(bvp.metadata.get("expect", "")),
                    _names(bvp.metadata.get("control", "")), bvp.metadata.get("note", ""))


def load_table(table: int, settings: Optional[Settings] = None) -> List[TableRow]:
    settings = settings or Settings()
    paths = list(settings.data_dir.glob(f"table{table}_case*.bvp"))
    rows = [_row_from(p, table) for p in paths]
    rows.sort(key=lambda r: case_key(r.case))
    logger.info(f"📄 Table {table}: {len(rows)} rows")
    return rows


def find_row(table: int, case: str, settings: Optional[Settings] = None) -> TableRow:
    settings = settings or Settings()
    path = settings.data_dir / f"table{table}_case{case}.bvp"
    if not path.exists():
        raise ConstructionError(f"Table {table} has no case {case}")
    return _row_from(path, table)


# ---------------------------------------------------------------------------
# Harmonic pairs (case 11 of the boundary value problem table)
# ---------------------------------------------------------------------------

@dataclass
class HarmonicCheck:
    """Conditions on A + iB analytic in the half-plane that keep the no-flux problem invariant"""
    cauchy_riemann: bool
    boundary: bool
    growth: bool
    flags: List[str] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return self.cauchy_riemann and self.boundary and self.growth


def _bounded_at_infinity(expr: sp.Expr, x1: sp.Symbol, x2: sp.Symbol, flags: List[str]) -> bool:
    try:
        lim = sp.limit(expr, x2, sp.oo)
    except (NotImplementedError, ValueError, TypeError):
        lim = None
    if lim is not None:
        if isinstance(lim, AccumBounds):
            flags.append(f"{dsl_str(expr)} oscillates as x2 -> inf")
            return True
        if lim.has(sp.oo, -sp.oo, sp.zoo, sp.nan):
            return False
        if lim.is_finite:
            return True
    # numeric probe along a vertical ray
    f = sp.lambdify(x2, expr.subs(x1, sp.Rational(7, 10)), modules="mpmath")
    try:
        values = [abs(complex(f(10 ** k))) for k in range(2, 9)]
    except (ZeroDivisionError, ValueError, OverflowError):
        return False
    flags.append("growth decided on a numeric ray")
    return max(values) <= 10 * values[0] + 1


def check_harmonic_pair(A: sp.Expr, B: sp.Expr, ctx: Optional[VariableContext] = None,
                        settings: Optional[Settings] = None) -> HarmonicCheck:
    """
    A_x1 = B_x2, A_x2 = -B_x1 (Cauchy-Riemann), B(x1, 0) = 0, and B/x2, B_x2
    bounded as x2 -> inf.
    """
    settings = settings or Settings()
    ctx = ctx or VariableContext(("t", "x1", "x2"))
    x1, x2 = ctx.symbol("x1"), ctx.symbol("x2")
    A, B = ctx.rebind(sp.sympify(A)), ctx.rebind(sp.sympify(B))
    kw = dict(seed=settings.seed, samples=settings.samples)

    cr = bool(equivalent(sp.diff(A, x1), sp.diff(B, x2), ctx, **kw)) and \
        bool(equivalent(sp.diff(A, x2), -sp.diff(B, x1), ctx, **kw))
    on_boundary = sp.simplify(B.subs(x2, 0))
    boundary = on_boundary == 0 or (not on_boundary.has(sp.zoo, sp.nan) and is_zero(on_boundary, ctx, **kw))
    flags: List[str] = []
    growth = all(_bounded_at_infinity(e, x1, x2, flags) for e in (B / x2, sp.diff(B, x2)))
    check = HarmonicCheck(cr, boundary, growth, flags)
    logger.debug(f"🔍 harmonic pair A={dsl_str(A)}, B={dsl_str(B)}: {check}")
    return check


def harmonic_instances(ctx: Optional[VariableContext] = None, n_max: int = 3
                       ) -> List[Tuple[str, sp.Expr, sp.Expr, bool]]:
    """(label, A, B, expected) for A + iB = z^-n (admissible) and i z^-n (fails on x2 = 0)"""
    ctx = ctx or VariableContext(("t", "x1", "x2"))
    x1, x2 = ctx.symbol("x1"), ctx.symbol("x2")
    z = x1 + sp.I * x2
    out = []
    for n in range(1, n_max + 1):
        for label, f, expected in ((f"z^-{n}", z ** -n, True), (f"i*z^-{n}", sp.I * z ** -n, False)):
            g = sp.expand_complex(f)
            out.append((label, sp.simplify(sp.re(g)), sp.simplify(sp.im(g)), expected))
    return out


def harmonic_operator(A: sp.Expr, B: sp.Expr, ctx: VariableContext, name: str = "Xinf") -> VectorField:
    """A d/dx1 + B d/dx2 - 2 A_x1 u d/du"""
    x1 = ctx.space_symbols[0]
    return VectorField(sp.S.Zero, (A, B), -2 * sp.diff(A, x1) * ctx.u, False, name)


# ---------------------------------------------------------------------------
# Row verification
# ---------------------------------------------------------------------------

@dataclass
class OperatorCheck:
    operator: str
    expected: bool
    report: InvarianceReport
    variant: str = "gradient"
    epsilon: Optional[int] = None

    @property
    def ok(self) -> bool:
        invariant = self.report.overall == INVARIANT
        return invariant if self.expected else not invariant


@dataclass
class HarmonicOutcome:
    label: str
    check: HarmonicCheck
    expected: bool

    @property
    def ok(self) -> bool:
        return self.check.holds == self.expected


@dataclass
class RowVerification:
    row: TableRow
    checks: List[OperatorCheck] = field(default_factory=list)
    harmonic: List[HarmonicOutcome] = field(default_factory=list)
    errors: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.errors and all(c.ok for c in self.checks) and all(h.ok for h in self.harmonic)

    @property
    def failures(self) -> List[str]:
        out = [f"{c.operator} [{c.variant}, eps={c.epsilon}]: {c.report.overall}"
               for c in self.checks if not c.ok]
        out += [f"{h.label}: harmonic conditions {'fail' if h.expected else 'hold'}"
                for h in self.harmonic if not h.ok]
        return out + self.errors


def _run_check(result: RowVerification, name: str, expected: bool, settings: Settings,
               transform: Optional[ChangeOfVariables] = None, variant: Optional[str] = None,
               epsilon: Optional[int] = None):
    row = result.row
    try:
        X = row.operator(name)
        report = check_bvp(X, row.bvp, transform=transform, settings=settings, variant=variant)
    except BvpSymError as exc:
        logger.error(f"❌ Table {row.table} case {row.case}, {name}: {exc}")
        result.errors.append(f"{name}: {exc}")
        return
    check = OperatorCheck(name, expected, report, variant or "gradient", epsilon)
    icon = "✅" if check.ok else "❌"
    logger.info(f"{icon} case {row.case} {name} ({check.variant}, eps={epsilon}): {report.overall}")
    result.checks.append(check)


def verify_table1(case: str, settings: Optional[Settings] = None) -> RowVerification:
    """Every listed operator is a Lie symmetry of the equation; the control is not"""
    settings = settings or Settings()
    row = find_row(1, case, settings)
    result = RowVerification(row)
    for name in row.expected:
        _run_check(result, name, True, settings)
    for name in row.controls:
        _run_check(result, name, False, settings)
    return result


def verify_table2(case: str, settings: Optional[Settings] = None,
                  transform: Optional[ChangeOfVariables] = None,
                  variants: Sequence[str] = ("gradient", "flux"),
                  epsilons: Sequence[int] = (1, 2)) -> RowVerification:
    """
    Full six-item check of each listed operator, for both forms of the
    condition at infinity and for each exponent eps of the power-decay map.
    Controls run once with the declared condition.
    """
    settings = settings or Settings()
    row = find_row(2, case, settings)
    result = RowVerification(row)
    for variant in variants:
        if variant != "gradient" and variant not in row.bvp.variants:
            logger.debug(f"case {row.case} has no '{variant}' variant")
            continue
        for eps in epsilons:
            local = replace(settings, epsilon=eps)
            for name in row.expected:
                _run_check(result, name, True, local, transform, variant, eps)
    for name in row.controls:
        _run_check(result, name, False, settings, transform, None, settings.epsilon)

    if any(name.startswith("Xinf") for name in row.expected):
        ctx = row.bvp.ctx
        for name in row.expected + row.controls:
            X = row.bvp.operators.get(name)
            if X is None or X.xi0 != 0 or (name not in row.controls and not name.startswith("Xinf")):
                continue
            check = check_harmonic_pair(X.xi[0], X.xi[1], ctx, settings)
            result.harmonic.append(HarmonicOutcome(name, check, name in row.expected))
        for label, A, B, expected in harmonic_instances(ctx):
            result.harmonic.append(HarmonicOutcome(label, check_harmonic_pair(A, B, ctx, settings), expected))
    return result


def verify_all(table: int, settings: Optional[Settings] = None, cases: Optional[Sequence[str]] = None,
               **kwargs) -> List[RowVerification]:
    settings = settings or Settings()
    rows = [r.case for r in load_table(table, settings)]
    if cases:
        missing = [c for c in cases if c not in rows]
        if missing:
            raise ConstructionError(f"Table {table} has no case(s) {', '.join(missing)}")
        rows = [c for c in rows if c in cases]
    verify = verify_table1 if table == 1 else verify_table2
    results = []
    for case in tqdm(rows, desc=f"Table {table}", disable=not settings.show_progress):
        results.append(verify(case, settings, **kwargs))
    failed = [r.row.case for r in results if not r.passed]
    if failed:
        logger.warning(f"⚠️ Table {table}: case(s) {', '.join(failed)} failed")
    else:
        logger.info(f"✅ Table {table}: all {len(results)} rows verified")
    return results


# ---------------------------------------------------------------------------
# Principal algebra
# ---------------------------------------------------------------------------

def standard_basis(ctx: VariableContext) -> Dict[str, VectorField]:
    """Time translation, space translations, the scaling D and the rotations"""
    space = list(ctx.space)
    basis = {}
    if ctx.time:
        basis["T"] = VectorField.from_coefficients(ctx, {ctx.time: 1}, name="T")
    for i, v in enumerate(space, start=1):
        label = f"X{i}" if len(space) > 1 else "X"
        basis[label] = VectorField.from_coefficients(ctx, {v: 1}, name=label)
    if ctx.time:
        coefficients = {ctx.time: 2 * ctx.t}
        coefficients.update({v: ctx.symbol(v) for v in space})
        basis["D"] = VectorField.from_coefficients(ctx, coefficients, name="D")
    for i in range(len(space)):
        for j in range(i + 1, len(space)):
            label = f"J{i + 1}{j + 1}"
            a, b = space[i], space[j]
            basis[label] = VectorField.from_coefficients(
                ctx, {a: -ctx.symbol(b), b: ctx.symbol(a)}, name=label)
    return basis


def principal_algebra(bvp: BvpSpec, settings: Optional[Settings] = None,
                      candidates: Optional[Dict[str, VectorField]] = None) -> List[str]:
    """Names of the candidate operators that leave bvp invariant without any constraint"""
    settings = settings or Settings()
    candidates = candidates or standard_basis(bvp.ctx)
    passing = []
    for name, X in candidates.items():
        try:
            report = check_bvp(X, bvp, settings=settings)
        except BvpSymError as exc:
            logger.warning(f"⚠️ {name} on {bvp.name}: {exc}")
            continue
        if report.overall == INVARIANT:
            passing.append(name)
    logger.info(f"📐 principal algebra of {bvp.name}: <{', '.join(passing)}>")
    return passing
