# src/core/invariance.py
"""
Invariance of a boundary value problem under a Lie or Q-conditional operator.

The check walks six items:
  (a) the governing equation is invariant (Lie) or conditionally invariant (Q)
  (b) the operator is tangent to every boundary locus s_a = 0
  (c) the prolonged operator annihilates each boundary relation on its locus
  (d) a change of variables maps every manifold at infinity to a finite one
      of the same dimensionality
  (e) the pushed operator is tangent to the image locus
  (f) the pushed operator annihilates the image relation there

Residuals that do not vanish are turned into constraints: conditions on
parameters, functional conditions on opaque functions, or limit conditions
that must hold as the finite manifold is approached.
"""

import logging
import random
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import mpmath
import sympy as sp
from sympy.core.function import AppliedUndef

from .config import Settings
from .errors import BvpSymError, ConstructionError, IndeterminateError, UnsupportedError
from .expr_core import (VariableContext, dsl_str, equivalent, instantiate_functions, normalize, proportional,
                        substitute, total_derivative_multi)
from .pde_dsl import (BvpSpec, ChangeOfVariables, InfinityCondition, ManifoldSpec, Relation,
                      load_document)
from .prolongation import VectorField, apply_prolonged, prolong
from .transforms import JetMap, bind_transform, pushforward

logger = logging.getLogger(__name__)

ITEMS = ("a", "b", "c", "d", "e", "f")

SATISFIED = "satisfied"
VIOLATED = "violated"
CONSTRAINT = "constraint"
NOT_APPLICABLE = "not-applicable"
UNSUPPORTED = "unsupported"
INDETERMINATE = "indeterminate"

INVARIANT = "invariant"
UNDER_CONSTRAINTS = "invariant-under-constraints"
NOT_INVARIANT = "not-invariant"

# constraint kinds
PARAMETER = "parameter"
FUNCTIONAL = "functional"
LIMIT = "limit"
CONTRADICTION = "contradiction"

LIBRARY_FILES = ("transforms_1d.bvp", "transforms_2d.bvp")
RAY_STEPS = 12
AE_SAMPLES = 20


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constraint:
    expr: sp.Expr
    kind: str
    origin: str
    note: str = ""

    def text(self) -> str:
        if self.kind == LIMIT:
            return self.note or f"{dsl_str(self.expr)} -> 0"
        return f"{dsl_str(self.expr)} = 0"


@dataclass
class ConstraintSet:
    """Conditions that must hold for the operator to leave the problem invariant"""
    constraints: List[Constraint] = field(default_factory=list)

    def add(self, constraint: Constraint):
        if sp.sympify(constraint.expr) == 0 and constraint.kind != LIMIT:
            return
        if all(c.expr != constraint.expr or c.kind != constraint.kind for c in self.constraints):
            self.constraints.append(constraint)

    def extend(self, constraints: Iterable[Constraint]):
        for c in constraints:
            self.add(c)

    def of_kind(self, kind: str) -> List[Constraint]:
        return [c for c in self.constraints if c.kind == kind]

    @property
    def parameters(self) -> List[Constraint]:
        return self.of_kind(PARAMETER)

    @property
    def functional(self) -> List[Constraint]:
        return self.of_kind(FUNCTIONAL)

    @property
    def limits(self) -> List[Constraint]:
        return self.of_kind(LIMIT)

    @property
    def contradicted(self) -> bool:
        return bool(self.of_kind(CONTRADICTION))

    def expressions(self, kind: Optional[str] = None) -> List[sp.Expr]:
        return [c.expr for c in self.constraints if kind is None or c.kind == kind]

    def matches(self, expected: Sequence[sp.Expr], ctx: VariableContext, seed: int = 20240611) -> bool:
        """Same conditions up to nonzero constant factors, in any order"""
        mine = [c.expr for c in self.constraints if c.kind != LIMIT]
        if len(mine) != len(expected):
            return False
        remaining = list(mine)
        for e in expected:
            hit = next((m for m in remaining if proportional(m, e, ctx, seed=seed)), None)
            if hit is None:
                return False
            remaining.remove(hit)
        return True

    def separate(self, ctx: VariableContext, constant: str = "q1", integration: str = "q0") -> "ConstraintSet":
        """
        Split functional conditions f(t) + g(x) = 0 into g = const and the ODE f = -const.

        The spatial part must be a multiple of one function value; the time
        part is solved with dsolve and its integration constant renamed.
        """
        out = ConstraintSet()
        for c in self.constraints:
            parts = _separable_parts(c.expr, ctx) if c.kind == FUNCTIONAL else None
            if parts is None:
                out.add(c)
                continue
            time_part, space_part = parts
            atoms = _function_atoms(space_part)
            if len(atoms) != 1:
                out.add(c)
                continue
            atom = atoms[0]
            coef = sp.simplify(space_part / atom)
            if coef.free_symbols & set(ctx.independent_symbols) or coef.atoms(AppliedUndef):
                out.add(c)
                continue
            for name in (constant, integration):
                if not ctx.is_registered(name):
                    ctx.add_parameter(name)
            C, C0 = ctx.symbol(constant), ctx.symbol(integration)
            out.add(Constraint(atom - C, FUNCTIONAL, c.origin, "separated"))

            unknowns = sorted(time_part.atoms(AppliedUndef), key=str)
            if len(unknowns) != 1:
                out.add(Constraint(time_part + coef * C, FUNCTIONAL, c.origin, "separated"))
                continue
            func = unknowns[0]
            solution = sp.dsolve(sp.Eq(time_part + coef * C, 0), func)
            rhs = solution.rhs
            integration_constants = sorted(rhs.free_symbols - set(ctx.independent_symbols) - {C}
                                           - {ctx.symbol(p) for p in ctx.parameters}, key=str)
            if integration_constants:
                rhs = rhs.subs(integration_constants[0], C0)
            out.add(Constraint(func - sp.expand(rhs), FUNCTIONAL, c.origin, "integrated"))
            logger.info(f"📐 separated {dsl_str(c.expr)} into {dsl_str(atom)} = {constant}, "
                        f"{dsl_str(func)} = {dsl_str(sp.expand(rhs))}")
        return out

    def texts(self) -> List[str]:
        return [c.text() for c in self.constraints]

    def __iter__(self):
        return iter(self.constraints)

    def __len__(self):
        return len(self.constraints)


@dataclass
class ItemVerdict:
    item: str
    status: str
    detail: str = ""
    residual: Optional[sp.Expr] = None
    constraints: List[Constraint] = field(default_factory=list)
    flags: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status in (SATISFIED, NOT_APPLICABLE)


@dataclass
class FiniteManifold:
    """One condition at infinity and its image under a change of variables"""
    condition: InfinityCondition
    original: ManifoldSpec
    image: ManifoldSpec
    coordinate: sp.Symbol
    target: sp.Expr
    relation: sp.Expr            # Gamma* in the new variables
    approach: Dict[sp.Symbol, sp.Expr]
    flags: Tuple[str, ...] = ()


@dataclass
class FiniteIzation:
    transform: ChangeOfVariables
    manifolds: List[FiniteManifold]
    pushed: Optional[VectorField]
    problems: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems and bool(self.manifolds)


@dataclass
class InvarianceReport:
    operator: str
    operator_text: str
    bvp: str
    items: Dict[str, ItemVerdict]
    overall: str
    transform: Optional[str] = None
    pushed_operator: Optional[str] = None
    manifolds: List[str] = field(default_factory=list)
    constraints: ConstraintSet = field(default_factory=ConstraintSet)
    restricted_operator: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.overall in (INVARIANT, UNDER_CONSTRAINTS)

    def item(self, letter: str) -> ItemVerdict:
        return self.items[letter]


# ---------------------------------------------------------------------------
# Residual analysis helpers
# ---------------------------------------------------------------------------

def _function_atoms(expr: sp.Expr) -> List[sp.Expr]:
    """Outermost opaque-function nodes: applications, derivatives and Subs of them"""
    found = []

    def walk(node):
        if isinstance(node, (sp.Subs, sp.Derivative)) and node.atoms(AppliedUndef):
            found.append(node)
            return
        if isinstance(node, AppliedUndef):
            found.append(node)
            return
        for arg in node.args:
            walk(arg)

    walk(sp.sympify(expr))
    unique = []
    for f in found:
        if f not in unique:
            unique.append(f)
    return unique


def _separable_parts(expr: sp.Expr, ctx: VariableContext) -> Optional[Tuple[sp.Expr, sp.Expr]]:
    if not ctx.time:
        return None
    t = ctx.t
    space = set(ctx.space_symbols)
    time_part, space_part = sp.S.Zero, sp.S.Zero
    for term in sp.Add.make_args(sp.expand(expr)):
        symbols = term.free_symbols
        if symbols & space and t in symbols:
            return None
        if symbols & space:
            space_part += term
        else:
            time_part += term
    if space_part == 0 or not time_part.atoms(AppliedUndef) or not space_part.atoms(AppliedUndef):
        return None
    return time_part, space_part


def split_conditions(expr: sp.Expr, variables: Sequence[sp.Symbol]) -> List[sp.Expr]:
    """Coefficients of the distinct monomials in `variables`; each must vanish separately"""
    expr = sp.expand(expr, power_exp=False, power_base=False, log=False)
    if not variables:
        return [expr] if expr != 0 else []
    groups: Dict[sp.Expr, sp.Expr] = {}
    for term in sp.Add.make_args(expr):
        coeff, key = term.as_independent(*variables, as_Add=False)
        groups[key] = groups.get(key, sp.S.Zero) + coeff
    return [sp.factor_terms(c) for c in groups.values() if sp.expand(c) != 0]


def determining_conditions(residual: sp.Expr, ctx: VariableContext) -> List[sp.Expr]:
    """Split by jets, then (where no opaque function is involved) by the base variables"""
    jets = ctx.jet_atoms(residual)
    first = split_conditions(residual, jets) if jets else [residual]
    out = []
    params = {ctx.symbol(p) for p in ctx.parameters}
    for c in first:
        if c.atoms(AppliedUndef):
            out.append(c)
        else:
            base = sorted(c.free_symbols - params, key=lambda s: s.name)
            out += split_conditions(c, base)
    return out


def _respects(solution: Dict[sp.Symbol, sp.Expr], ctx: VariableContext) -> bool:
    for sym, value in solution.items():
        if not value.is_number:
            continue
        try:
            x = float(value)
        except TypeError:
            return False
        if not all(a.holds(x) for a in ctx.assumptions_for(sym.name)):
            return False
    return True


def _solve_parameters(conditions: List[sp.Expr], ctx: VariableContext) -> Optional[List[Dict]]:
    """Admissible parameter solutions; None when sympy cannot solve the system"""
    symbols = sorted(set().union(*(c.free_symbols for c in conditions)), key=lambda s: s.name)
    if not symbols:
        return []
    try:
        solutions = sp.solve(conditions, symbols, dict=True)
    except (NotImplementedError, TypeError):
        return None
    return [s for s in solutions if _respects(s, ctx)]


def classify_conditions(item: str, conditions: Iterable[sp.Expr], ctx: VariableContext) -> List[Constraint]:
    out, params = [], []
    for e in conditions:
        e = normalize(e, ctx)
        if e == 0:
            continue
        if e.atoms(AppliedUndef):
            out.append(Constraint(e, FUNCTIONAL, item))
        elif e.is_number:
            out.append(Constraint(e, CONTRADICTION, item, "nonzero constant"))
        else:
            params.append(e)
    if params:
        solutions = _solve_parameters(params, ctx)
        if solutions is not None and not solutions:
            out += [Constraint(p, CONTRADICTION, item, "no admissible parameter values") for p in params]
        else:
            out += [Constraint(p, PARAMETER, item) for p in params]
    return out


def _verdict(item: str, constraints: List[Constraint], residual=None, detail: str = "",
             flags: Sequence[str] = ()) -> ItemVerdict:
    if any(c.kind == CONTRADICTION for c in constraints):
        status = VIOLATED
    elif constraints:
        status = CONSTRAINT
    else:
        status = SATISFIED
    if not detail:
        detail = "; ".join(c.text() for c in constraints) if constraints else "residual vanishes"
    return ItemVerdict(item, status, detail, residual, list(constraints), list(flags))


def _zero_test(residual: sp.Expr, ctx: VariableContext, settings: Settings):
    return equivalent(residual, 0, ctx, seed=settings.seed, samples=settings.samples, tol=settings.tol)


def _residual_verdict(item: str, residual: sp.Expr, ctx: VariableContext, settings: Settings) -> ItemVerdict:
    try:
        verdict = _zero_test(residual, ctx, settings)
    except IndeterminateError as exc:
        return ItemVerdict(item, INDETERMINATE, str(exc), residual, flags=["singular samples"])
    if verdict:
        return ItemVerdict(item, SATISFIED, f"residual vanishes, {verdict.describe()}", sp.S.Zero)
    constraints = classify_conditions(item, determining_conditions(residual, ctx), ctx)
    if not constraints:
        # symbolic split cancelled what sampling could not
        return ItemVerdict(item, SATISFIED, "residual vanishes after splitting", sp.S.Zero)
    return _verdict(item, constraints, residual)


def sign_of(expr: sp.Expr, ctx: VariableContext, seed: int = 20240611, samples: int = 24) -> Optional[int]:
    """+1, 0 or -1 when decidable from sympy assumptions or bounded parameter ranges, else None"""
    expr = sp.sympify(expr)
    if expr.is_zero:
        return 0
    if expr.is_number:
        value = complex(expr)
        if abs(value.imag) > 1e-14:
            return None
        return 1 if value.real > 0 else (-1 if value.real < 0 else 0)
    if expr.is_positive:
        return 1
    if expr.is_negative:
        return -1
    names = {s.name for s in expr.free_symbols}
    if not names <= set(ctx.parameters):
        return None
    bounded = {a.target for a in ctx.assumptions if a.relation in ("in", ">", "<", ">=", "<=")}
    if not names <= bounded:
        return None
    rng = random.Random(seed)
    signs = set()
    symbols = sorted(expr.free_symbols, key=lambda s: s.name)
    f = sp.lambdify(symbols, expr, modules="mpmath")
    for _ in range(samples):
        values = [ctx.sample_value(s.name, rng) for s in symbols]
        v = f(*values)
        signs.add(0 if abs(v) < 1e-14 else (1 if v > 0 else -1))
    return signs.pop() if len(signs) == 1 else None


# ---------------------------------------------------------------------------
# Item (a): governing equation
# ---------------------------------------------------------------------------

def _bind_field(X: VectorField, ctx: VariableContext) -> VectorField:
    return VectorField(ctx.rebind(sp.sympify(X.xi0)), tuple(ctx.rebind(sp.sympify(c)) for c in X.xi),
                       ctx.rebind(sp.sympify(X.eta)), X.conditional, X.name)


def _pde_parts(pde, ctx: Optional[VariableContext]) -> Tuple[sp.Expr, VariableContext]:
    """(F, ctx) from a BvpSpec or a residual u_t - F"""
    if isinstance(pde, BvpSpec):
        bvp = pde.resolved()
        return bvp.evolution_rhs(), bvp.ctx
    if ctx is None:
        raise ConstructionError("a bare residual needs its VariableContext")
    probe = BvpSpec(ctx=ctx, equations=(sp.sympify(pde),))
    return probe.evolution_rhs(), ctx


def _restrict_time_jets(expr: sp.Expr, G: sp.Expr, ctx: VariableContext) -> sp.Expr:
    """Replace u_t by G and mixed jets u_{t J} by D_J G"""
    bindings = {}
    for s in ctx.dependent_atoms(expr):
        index = ctx.jet_index(s)
        n_t = sum(1 for v in index if v == ctx.time)
        if n_t == 0:
            continue
        if n_t > 1:
            raise UnsupportedError(f"second time derivative {s} cannot be restricted")
        bindings[s] = total_derivative_multi(G, [v for v in index if v != ctx.time], ctx)
    return substitute(expr, bindings, ctx) if bindings else normalize(expr, ctx)


def check_pde_lie(X: VectorField, pde, ctx: Optional[VariableContext] = None,
                  settings: Optional[Settings] = None) -> ItemVerdict:
    """Item (a) for a Lie operator: X_k(u_t - F) = 0 on solutions of u_t = F"""
    settings = settings or Settings()
    F, ctx = _pde_parts(pde, ctx)
    X = _bind_field(X, ctx)
    if X.depends_on_u(ctx):
        raise ConstructionError(f"{X.name}: a Lie operator needs xi independent of u")
    E = ctx.jet((ctx.time,)) - F
    k = max(ctx.spatial_order(E), 1)
    residual = apply_prolonged(prolong(X, k, ctx), E, ctx)
    residual = _restrict_time_jets(residual, F, ctx)
    verdict = _residual_verdict("a", residual, ctx, settings)
    logger.debug(f"🔍 item (a) for {X.name}: {verdict.status}")
    return verdict


def _top_jet(expr: sp.Expr, ctx: VariableContext, prefer: Optional[str] = None) -> Optional[sp.Symbol]:
    jets = ctx.jet_atoms(expr)
    if not jets:
        return None
    if prefer:
        pure = [s for s in jets if set(ctx.jet_index(s)) == {prefer}]
        if pure:
            return max(pure, key=lambda s: len(ctx.jet_index(s)))
    return max(jets, key=lambda s: (len(ctx.jet_index(s)), ctx.jet_index(s)))


def _solve_for(expr: sp.Expr, target: sp.Symbol) -> sp.Expr:
    """expr = 0 solved for target; linear case first, else the first sympy root"""
    expanded = sp.expand(expr)
    a = sp.diff(expanded, target)
    if a != 0 and not a.has(target):
        return sp.cancel(-(expanded - a * target) / a)
    roots = sp.solve(expr, target)
    if not roots:
        raise UnsupportedError(f"cannot solve {dsl_str(expr)} = 0 for {target}")
    return roots[0]


def check_pde_conditional(Q: VectorField, pde, ctx: Optional[VariableContext] = None,
                          settings: Optional[Settings] = None) -> ItemVerdict:
    """Item (a) for a conditional operator: Q_k(u_t - F) = 0 on u_t = F and Q(u) = 0"""
    settings = settings or Settings()
    F, ctx = _pde_parts(pde, ctx)
    Q = _bind_field(Q, ctx)
    if ctx.time is None or sp.simplify(Q.xi0) == 0:
        return ItemVerdict("a", UNSUPPORTED, f"{Q.name}: conditional operators with xi0 = 0 are not handled",
                           flags=["xi0 = 0"])
    Q = Q.normalized_time(ctx)
    ut = ctx.jet((ctx.time,))
    G = normalize(ut - Q.invariant_surface(ctx), ctx)  # u_t from Q(u) = 0
    E = ut - F
    k = max(ctx.spatial_order(E), 1)
    residual = apply_prolonged(prolong(Q, k, ctx), E, ctx)
    residual = _restrict_time_jets(residual, G, ctx)

    # u_t = F and u_t = G together: eliminate the top pure derivative of the last spatial variable
    top = _top_jet(F - G, ctx, prefer=ctx.space[-1])
    if top is not None:
        residual = substitute(residual, {top: _solve_for(F - G, top)}, ctx)
    verdict = _residual_verdict("a", residual, ctx, settings)
    logger.debug(f"🔍 item (a) for {Q.name} (conditional): {verdict.status}")
    return verdict


# ---------------------------------------------------------------------------
# Items (b), (c): finite boundary conditions
# ---------------------------------------------------------------------------

def solve_locus(locus: sp.Expr, ctx: VariableContext) -> Tuple[sp.Symbol, sp.Expr]:
    """s(t, x) = 0 as coordinate = value, trying the last spatial variable first"""
    candidates = list(reversed(ctx.space_symbols)) + ([ctx.t] if ctx.time else [])
    for sym in candidates:
        if not locus.has(sym):
            continue
        try:
            roots = sp.solve(locus, sym)
        except NotImplementedError:
            continue
        if len(roots) == 1 and not roots[0].has(sym):
            return sym, roots[0]
    raise UnsupportedError(f"boundary locus {dsl_str(locus)} = 0 cannot be solved for one coordinate")


def _guard_nonvanishing(X: VectorField, coordinate: sp.Symbol, value: sp.Expr, ctx: VariableContext):
    on_locus = [sp.simplify(sp.sympify(c).subs(coordinate, value)) for c in (X.xi0, *X.xi, X.eta)]
    if all(c == 0 for c in on_locus):
        raise ConstructionError(f"{X.name} vanishes on the boundary {coordinate} = {dsl_str(value)}")


def _restrict_to_relation(expr: sp.Expr, relation: sp.Expr, coordinate: sp.Symbol, value: sp.Expr,
                          ctx: VariableContext) -> sp.Expr:
    top = _top_jet(relation, ctx)
    target = top if top is not None else (ctx.u if relation.has(ctx.u) else None)
    if target is not None:
        expr = substitute(expr, {target: _solve_for(relation, target)}, ctx, normal=False)
    expr = expr.subs(coordinate, value)
    return normalize(expr, ctx)


def _solve_item_b(constraints: List[Constraint], ctx: VariableContext) -> Dict[sp.Symbol, sp.Expr]:
    params = [c.expr for c in constraints if c.kind == PARAMETER]
    if not params:
        return {}
    solutions = _solve_parameters(params, ctx)
    if solutions and len(solutions) == 1:
        return solutions[0]
    return {}


def check_finite_bcs(X: VectorField, bvp: BvpSpec, settings: Optional[Settings] = None
                     ) -> Tuple[ItemVerdict, ItemVerdict, VectorField]:
    """Items (b) and (c); returns the operator after the parameter conditions of (b) are imposed"""
    settings = settings or Settings()
    bvp = bvp.resolved()
    ctx = bvp.ctx
    X = _bind_field(X, ctx)
    if not bvp.finite_bcs:
        na = "no finite boundary conditions"
        return ItemVerdict("b", NOT_APPLICABLE, na), ItemVerdict("c", NOT_APPLICABLE, na), X

    loci = []
    b_constraints: List[Constraint] = []
    for bc in bvp.finite_bcs:
        coordinate, value = solve_locus(bc.locus, ctx)
        _guard_nonvanishing(X, coordinate, value, ctx)
        loci.append((bc, coordinate, value))
        tangency = normalize(X.apply(bc.locus, ctx).subs(coordinate, value), ctx)
        if tangency != 0:
            b_constraints += classify_conditions("b", determining_conditions(tangency, ctx), ctx)
    item_b = _verdict("b", b_constraints, detail="" if b_constraints else "operator is tangent to every locus")

    fixed = _solve_item_b(b_constraints, ctx)
    if fixed:
        X = X.subs(fixed).simplified(ctx)
        logger.info(f"📐 item (b) fixes {', '.join(f'{k} = {dsl_str(v)}' for k, v in fixed.items())}")

    c_constraints: List[Constraint] = []
    residuals = []
    flags = []
    Xc = X.normalized_time(ctx) if X.conditional and ctx.time and X.xi0 != 0 else X
    for bc, coordinate, value in loci:
        k_a = max(ctx.spatial_order(bc.relation), 1)
        action = apply_prolonged(prolong(Xc, k_a, ctx), bc.relation, ctx)
        if ctx.time_order(action):
            if not Xc.conditional:
                action = _restrict_time_jets(action, bvp.evolution_rhs(), ctx)
            else:
                G = normalize(ctx.jet((ctx.time,)) - Xc.invariant_surface(ctx), ctx)
                action = _restrict_time_jets(action, G, ctx)
        restricted = _restrict_to_relation(action, bc.relation, coordinate, value, ctx)
        residuals.append(restricted)
        try:
            vanishes = bool(_zero_test(restricted, ctx, settings))
        except IndeterminateError as exc:
            flags.append(str(exc))
            vanishes = False
        if not vanishes:
            c_constraints += classify_conditions("c", determining_conditions(restricted, ctx), ctx)
    residual = residuals[0] if len(residuals) == 1 else sp.Tuple(*residuals)
    item_c = _verdict("c", c_constraints, residual, flags=flags)
    return item_b, item_c, X


# ---------------------------------------------------------------------------
# Item (d): finite-ization of conditions at infinity
# ---------------------------------------------------------------------------

def _strip_nonvanishing(relation: sp.Expr, bvp: BvpSpec) -> sp.Expr:
    """Drop factors declared nonzero (nonzero d(u)) or positive powers of u, before and after definitions"""
    ctx = bvp.ctx
    declared = {t.replace(" ", "") for t in ctx.nonvanishing()}

    def keep(factor):
        if isinstance(factor, AppliedUndef) and dsl_str(factor).replace(" ", "") in declared:
            return False
        if factor.is_Pow and factor.base == ctx.u and ctx.dependent_positive:
            return False
        if isinstance(factor, sp.exp) and not ctx.jet_atoms(factor):
            return False
        return True

    def strip(expr):
        factored = sp.factor_terms(expr)
        if not factored.is_Mul:
            return factored
        kept = [f for f in factored.args if keep(f) and not f.is_number]
        return sp.Mul(*kept) if kept else factored

    return strip(bvp.resolve(strip(relation)))


def monomial_split(term: sp.Expr, variables: Sequence[sp.Symbol]) -> Tuple[Dict[sp.Symbol, sp.Expr], sp.Expr]:
    """term = rest * prod(v^e_v): exponents of the factors whose base is one of `variables`"""
    exps: Dict[sp.Symbol, sp.Expr] = {}
    rest = []
    for factor in sp.Mul.make_args(term):
        base, e = factor.as_base_exp()
        if base in variables:
            exps[base] = exps.get(base, sp.S.Zero) + e
        else:
            rest.append(factor)
    return {v: e for v, e in exps.items() if e != 0}, sp.Mul(*rest)


def _leading_part(expr: sp.Expr, var: sp.Symbol, ctx: VariableContext) -> Optional[sp.Expr]:
    """Sum of the terms with the lowest power of var (var -> 0+); None when not a power series"""
    parts = []
    for term in sp.Add.make_args(normalize(expr, ctx)):
        exps, c = monomial_split(term, [var])
        if c.has(var):
            return None
        parts.append((exps.get(var, sp.S.Zero), c))
    if not parts:
        return None
    lowest = parts[0][0]
    for e, _ in parts[1:]:
        s = sign_of(e - lowest, ctx)
        if s is None:
            return None
        if s < 0:
            lowest = e
    return normalize(sum((c for e, c in parts if sp.simplify(e - lowest) == 0), sp.S.Zero), ctx)


def _approach_value(relation: sp.Expr, w: sp.Symbol, ctx: VariableContext) -> Optional[sp.Expr]:
    """Value of w on relation = 0"""
    if not relation.has(w):
        return None
    exps, c = monomial_split(sp.factor_terms(relation), [w])
    if not c.has(w) and w in exps:
        return sp.S.Zero if sign_of(exps[w], ctx) != -1 else None
    try:
        roots = sp.solve(relation, w)
    except NotImplementedError:
        return None
    real = [r for r in roots if r.is_real is not False]
    return real[0] if real else None


def finite_ize(bvp: BvpSpec, transform: ChangeOfVariables, X: Optional[VectorField] = None,
               strip: Optional[bool] = None) -> FiniteIzation:
    """
    Map each condition at infinity through `transform`.

    The direction must become a finite value of one new coordinate; the
    relation is rewritten in new jets and its lowest-order part in that
    coordinate is kept. strip=None strips nonvanishing factors first and
    falls back to the full relation.
    """
    tr = transform
    jets = JetMap.for_transform(tr)
    old_ctx, new_ctx = tr.old_ctx, tr.new_ctx
    manifolds, problems = [], []
    ambient_old = tuple(old_ctx.independents) + (old_ctx.dependent,)
    ambient_new = tuple(new_ctx.independents) + (new_ctx.dependent,)
    w = new_ctx.u

    for cond in bvp.infinity_bcs:
        direction = old_ctx.rebind(cond.direction)
        if not isinstance(direction, sp.Symbol):
            problems.append(f"direction {dsl_str(direction)} is not a coordinate")
            continue
        coordinate, target = None, None
        for name, expr in tr.forward.items():
            if name in (new_ctx.dependent, new_ctx.time) or not expr.has(direction):
                continue
            limit = sp.limit(expr, direction, sp.oo)
            if limit.is_finite:
                coordinate, target = new_ctx.symbol(name), limit
                break
        if coordinate is None:
            problems.append(f"{tr.name} does not bring {direction} -> inf to a finite value")
            continue

        attempts = []
        stripped = _strip_nonvanishing(cond.relation, bvp)
        full = bvp.resolve(cond.relation)
        if strip is None:
            attempts = [(stripped, "stripped nonvanishing factors")] if stripped != full else []
            attempts.append((full, ""))
        elif strip:
            attempts = [(stripped, "stripped nonvanishing factors")]
        else:
            attempts = [(full, "")]

        found = None
        for relation, note in attempts:
            new_relation = normalize(jets.to_new(old_ctx.rebind(relation)), new_ctx)
            local = coordinate if target == 0 else sp.Symbol(f"_s_{coordinate.name}", positive=True)
            shifted = new_relation if target == 0 else new_relation.subs(coordinate, target + local)
            star = _leading_part(shifted, local, new_ctx)
            if star is None:
                problems.append(f"{dsl_str(new_relation)} has no leading power in {coordinate}")
                continue
            star = sp.factor_terms(star)
            if new_ctx.jet_atoms(star):
                problems.append(f"relation at infinity becomes {dsl_str(star)}, which still involves derivatives")
                continue
            if star.is_number:
                problems.append(f"relation at infinity degenerates to {dsl_str(star)}")
                continue
            found = (relation, star, note)
            break
        if found is None:
            continue

        relation, star, note = found
        original = ManifoldSpec((Relation(direction, "to_inf"), Relation(old_ctx.rebind(relation))), ambient_old)
        image = ManifoldSpec((Relation(coordinate - target), Relation(star)), ambient_new)
        if original.dimensionality != image.dimensionality:
            problems.append(f"dimensionality {original.dimensionality} != {image.dimensionality}")
            continue
        approach = {coordinate: target}
        w0 = _approach_value(star, w, new_ctx)
        if w0 is not None:
            approach[w] = w0
        manifolds.append(FiniteManifold(cond, original, image, coordinate, target, star, approach,
                                        (note,) if note else ()))
        logger.info(f"📐 {tr.name}: {original.text()} -> {image.text()}")

    Y = pushforward(X, tr, jets) if X is not None and not problems else None
    return FiniteIzation(tr, manifolds, Y, problems)


# ---------------------------------------------------------------------------
# Items (e), (f): behaviour on the finite manifold
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LimitOutcome:
    status: str                       # zero | finite | blowup | constraint | indeterminate
    value: sp.Expr = sp.S.Zero
    pending: Tuple[str, ...] = ()     # limit conditions that could not be decided
    flags: Tuple[str, ...] = ()


def _coefficient_limit(coeff: sp.Expr, variables: Sequence[sp.Symbol]):
    """('value', v) | ('infinite', None) | ('bounded?', expr) | ('unknown', None)"""
    if any(app.free_symbols & set(variables) for app in coeff.atoms(AppliedUndef)):
        # opaque function evaluated towards the manifold: only boundedness can be asked for
        return "bounded?", coeff
    value = coeff
    try:
        for v in variables:
            value = sp.limit(value, v, 0, "+")
    except (NotImplementedError, ValueError, TypeError):
        return "unknown", None
    if isinstance(value, sp.AccumBounds):
        return "value", value
    if value.has(sp.Limit) or any(a.has(sp.oo, sp.zoo, -sp.oo) for a in value.atoms(AppliedUndef)):
        return "bounded?", coeff
    if value in (sp.oo, -sp.oo, sp.zoo) or value.has(sp.zoo):
        return "infinite", None
    if value.has(sp.nan):
        return "unknown", None
    return "value", value


def _ray_limit(term: sp.Expr, local: Sequence[sp.Symbol], ctx: VariableContext, seed: int):
    """Numeric limit along rays v = c_v * s, s = 10^-j; returns (status, value, flags)"""
    rng = random.Random(seed)
    (f,) = instantiate_functions([term], rng)
    others = sorted(f.free_symbols - set(local), key=lambda s: s.name)
    point = {}
    for s in others:
        point[s] = ctx.sample_value(s.name, rng) if s.name in ctx.parameters else rng.uniform(0.3, 2.0)
    weights = {v: rng.uniform(0.5, 2.0) for v in local}
    symbols = list(local) + others
    g = sp.lambdify(symbols, f, modules="mpmath")
    values = []
    with mpmath.workdps(40):
        for j in range(2, 2 + RAY_STEPS):
            s = mpmath.mpf(10) ** (-j)
            try:
                v = g(*([weights[x] * s for x in local] + [point[x] for x in others]))
                values.append(complex(v).real)
            except (ZeroDivisionError, ValueError, OverflowError):
                values.append(float("inf"))
    tail = values[-4:]
    flags = []
    if any(abs(a) == float("inf") for a in tail) or abs(tail[-1]) > 1e8 * (1 + abs(values[0])):
        return "blowup", None, flags
    signs = {1 if v > 0 else -1 for v in tail if abs(v) > 1e-12}
    if len(signs) > 1:
        flags.append("oscillatory")
    if max(abs(v) for v in tail) < 1e-8 * (1 + max(abs(v) for v in values)):
        return "zero", 0.0, flags
    if abs(tail[-1] - tail[-2]) < 1e-6 * (1 + abs(tail[-1])):
        return "finite", tail[-1], flags
    if flags:
        return "finite", max(abs(v) for v in tail), flags
    return "indeterminate", None, flags


def restrict_limit(expr: sp.Expr, approach: Dict[sp.Symbol, sp.Expr], ctx: VariableContext,
                   seed: int = 20240611) -> LimitOutcome:
    """
    Behaviour of expr as the variables of `approach` tend to their targets (from above).

    Monomial terms c * prod(v^e_v) are decided from the signs of the exponents;
    remaining coefficients go through sympy limits and finally numeric rays.
    """
    local, shift = [], {}
    for var, target in approach.items():
        if target == 0:
            local.append(var)
        else:
            s = sp.Symbol(f"_s_{var.name}", positive=True)
            shift[var] = target + s
            local.append(s)
    expr = normalize(sp.sympify(expr).subs(shift), ctx) if shift else normalize(expr, ctx)
    if expr == 0:
        return LimitOutcome("zero")

    survivors, pending, flags = sp.S.Zero, [], []
    blowup = False
    names = ", ".join(v.name for v in approach)
    targets = ", ".join(dsl_str(t) for t in approach.values())

    for term in sp.Add.make_args(expr):
        exps, rest = monomial_split(term, local)
        nonmono = [v for v in local if rest.has(v)]
        kind, value = ("value", rest) if not nonmono else _coefficient_limit(rest, nonmono)
        signs = [sign_of(e, ctx) for e in exps.values()]
        if any(s is None for s in signs):
            shape = "mixed"
        elif any(s > 0 for s in signs) and all(s >= 0 for s in signs):
            shape = "vanishing"
        elif not signs or all(s == 0 for s in signs):
            shape = "constant"
        elif all(s <= 0 for s in signs):
            shape = "growing"
        else:
            shape = "mixed"
        monomial = sp.Mul(*[v ** e for v, e in exps.items()])

        if kind == "unknown":
            status, number, ray_flags = _ray_limit(term, local, ctx, seed)
            flags += ray_flags + ["sampled along rays"]
            if status == "blowup":
                blowup = True
            elif status == "finite":
                survivors += sp.Float(number)
            elif status == "indeterminate":
                pending.append(f"{dsl_str(term)} -> 0 as ({names}) -> ({targets})")
            continue
        if kind == "value":
            if isinstance(value, sp.AccumBounds):
                flags.append("oscillatory")
                if shape == "vanishing":
                    continue
                pending.append(f"{dsl_str(term)} has a bounded oscillating limit")
                continue
            if value == 0 and shape in ("vanishing", "constant"):
                continue
            if shape == "constant":
                survivors += value
            elif shape == "vanishing":
                continue
            elif shape == "growing":
                blowup = True
            else:
                pending.append(f"{dsl_str(monomial)} -> 0 as ({names}) -> ({targets})")
            continue
        if kind == "bounded?":
            detail = ", ".join(dsl_str(a) for a in _function_atoms(rest)) or dsl_str(rest)
            if shape == "vanishing":
                pending.append(f"{detail} bounded as ({names}) -> ({targets})")
            else:
                pending.append(f"{dsl_str(term)} -> 0 as ({names}) -> ({targets})")
            continue
        # infinite coefficient
        if shape == "vanishing":
            pending.append(f"{dsl_str(term)} -> 0 as ({names}) -> ({targets})")
        else:
            blowup = True

    if blowup:
        return LimitOutcome("blowup", flags=tuple(flags))
    survivors = normalize(survivors, ctx)
    if pending:
        return LimitOutcome("constraint", survivors, tuple(pending), tuple(flags))
    if survivors != 0:
        return LimitOutcome("finite", survivors, flags=tuple(flags))
    return LimitOutcome("zero", flags=tuple(flags))


def _limit_verdict(item: str, expr: sp.Expr, approach: Dict[sp.Symbol, sp.Expr], ctx: VariableContext,
                   settings: Settings) -> ItemVerdict:
    outcome = restrict_limit(expr, approach, ctx, seed=settings.seed)
    flags = list(outcome.flags)
    if outcome.status == "blowup":
        return ItemVerdict(item, VIOLATED, f"{dsl_str(expr)} is unbounded on the manifold", expr, flags=flags)
    constraints = []
    if outcome.value != 0:
        constraints += classify_conditions(item, determining_conditions(outcome.value, ctx), ctx)
    constraints += [Constraint(expr, LIMIT, item, note) for note in outcome.pending]
    return _verdict(item, constraints, expr, flags=flags)


def _defined_almost_everywhere(Y: VectorField, manifold: FiniteManifold, ctx: VariableContext,
                               seed: int) -> bool:
    """Coefficients finite at sampled points just off the image manifold"""
    rng = random.Random(seed)
    coefficients = instantiate_functions([sp.sympify(c) for c in (Y.xi0, *Y.xi, Y.eta)], rng)
    symbols = sorted(set().union(*(c.free_symbols for c in coefficients)), key=lambda s: s.name)
    params = [s for s in symbols if s.name in ctx.parameters]
    finite = 0
    for _ in range(AE_SAMPLES):
        point = {s: ctx.sample_value(s.name, rng) for s in params}
        for s in symbols:
            if s in point:
                continue
            if s in manifold.approach:
                base = complex(sp.sympify(manifold.approach[s]).subs(point)).real
                point[s] = base + 1e-6 * rng.uniform(0.5, 2.0)
            else:
                point[s] = rng.uniform(0.3, 2.0)
        try:
            with mpmath.workdps(30):
                values = [complex(sp.lambdify(symbols, c, modules="mpmath")(*[point[s] for s in symbols]))
                          for c in coefficients]
            ok = all(v == v and abs(v) != float("inf") for v in values)
        except (TypeError, ValueError, ZeroDivisionError, OverflowError):
            ok = False
        finite += ok
    return finite >= 0.9 * AE_SAMPLES


def check_infinity_conditions(fin: FiniteIzation, settings: Optional[Settings] = None
                              ) -> Tuple[ItemVerdict, ItemVerdict]:
    """Items (e) and (f) for a successful finite-ization"""
    settings = settings or Settings()
    Y = fin.pushed
    ctx = fin.transform.new_ctx
    e_items, f_items = [], []
    for m in fin.manifolds:
        flags = list(m.flags)
        flags.append("defined a.e." if _defined_almost_everywhere(Y, m, ctx, settings.seed)
                     else "singular on manifold")
        tangency = Y.apply(m.coordinate - m.target, ctx)
        e_items.append(_limit_verdict("e", tangency, {m.coordinate: m.target}, ctx, settings))
        action = Y.apply(m.relation, ctx)
        verdict = _limit_verdict("f", action, m.approach, ctx, settings)
        verdict.flags = flags + verdict.flags
        f_items.append(verdict)
    return _merge("e", e_items), _merge("f", f_items)


def _merge(item: str, verdicts: List[ItemVerdict]) -> ItemVerdict:
    if len(verdicts) == 1:
        return verdicts[0]
    constraints = [c for v in verdicts for c in v.constraints]
    flags = [f for v in verdicts for f in v.flags]
    if any(v.status == VIOLATED for v in verdicts):
        bad = next(v for v in verdicts if v.status == VIOLATED)
        return ItemVerdict(item, VIOLATED, bad.detail, bad.residual, constraints, flags)
    return _verdict(item, constraints, flags=flags)


# ---------------------------------------------------------------------------
# Transform library
# ---------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _library_from(paths: Tuple[str, ...]) -> Tuple[ChangeOfVariables, ...]:
    out = []
    for path in paths:
        if Path(path).exists():
            out += list(load_document(path).transforms.values())
        else:
            logger.warning(f"⚠️ transform library file {path} is missing")
    return tuple(out)


def load_library(settings: Optional[Settings] = None) -> List[ChangeOfVariables]:
    settings = settings or Settings()
    return list(_library_from(tuple(str(settings.data_dir / name) for name in LIBRARY_FILES)))


def candidate_transforms(bvp: BvpSpec, transform: Optional[ChangeOfVariables],
                         settings: Settings) -> List[ChangeOfVariables]:
    """User transform, then those declared in the problem file, then the library; bound and instantiated"""
    raw = ([transform] if transform is not None else []) + list(bvp.transforms.values()) + load_library(settings)
    out, seen = [], set()
    for tr in raw:
        if tr.name in seen:
            continue
        seen.add(tr.name)
        try:
            bound = bind_transform(tr, bvp.ctx)
        except UnsupportedError:
            continue
        foreign = [p for p in bound.parameters if p != "eps" and p not in bvp.ctx.parameters]
        if foreign:
            logger.debug(f"skipping {tr.name}: needs parameters {', '.join(foreign)}")
            continue
        if "eps" in bound.parameters:
            bound = bound.instantiate(eps=settings.epsilon)
        out.append(bound)
    return out


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------

def overall_verdict(items: Dict[str, ItemVerdict]) -> str:
    statuses = [v.status for v in items.values()]
    if VIOLATED in statuses:
        return NOT_INVARIANT
    if UNSUPPORTED in statuses:
        return UNSUPPORTED
    if INDETERMINATE in statuses:
        return INDETERMINATE
    if CONSTRAINT in statuses:
        return UNDER_CONSTRAINTS
    return INVARIANT


def _items_abc(X: VectorField, bvp: BvpSpec, settings: Settings) -> Tuple[Dict[str, ItemVerdict], VectorField]:
    a = check_pde_conditional(X, bvp, settings=settings) if X.conditional else check_pde_lie(X, bvp, settings=settings)
    b, c, restricted = check_finite_bcs(X, bvp, settings)
    return {"a": a, "b": b, "c": c}, restricted


def check_definition1(X: VectorField, bvp: BvpSpec, settings: Optional[Settings] = None) -> Dict[str, ItemVerdict]:
    """Items (a)-(c) only: the definition for problems without conditions at infinity"""
    items, _ = _items_abc(X, bvp, settings or Settings())
    return items


def check_bvp(X: VectorField, bvp: BvpSpec, transform: Optional[ChangeOfVariables] = None,
              settings: Optional[Settings] = None, variant: Optional[str] = None,
              strip: Optional[bool] = None) -> InvarianceReport:
    """Full six-item check of X on bvp"""
    settings = settings or Settings()
    bvp = bvp.with_variant(variant)
    ctx = bvp.ctx
    X = _bind_field(X, ctx)
    if X.is_zero():
        raise ConstructionError(f"{X.name} is the zero operator")
    logger.info(f"🔍 checking {X.name} = {X.text(ctx)} on {bvp.name}")

    items, X_restricted = _items_abc(X, bvp, settings)
    report = InvarianceReport(operator=X.name, operator_text=X.text(ctx), bvp=bvp.name, items=items,
                              overall="")
    if X_restricted != X:
        report.restricted_operator = X_restricted.text(ctx)

    if not bvp.infinity_bcs:
        for letter in "def":
            items[letter] = ItemVerdict(letter, NOT_APPLICABLE, "no conditions at infinity")
    else:
        _check_at_infinity(X_restricted, bvp, transform, settings, strip, report)

    constraints = ConstraintSet()
    for letter in ITEMS:
        constraints.extend(items[letter].constraints)
    report.constraints = constraints
    report.overall = overall_verdict(items)
    icon = "✅" if report.overall == INVARIANT else ("⚠️" if report.passed else "❌")
    logger.info(f"{icon} {X.name} on {bvp.name}: {report.overall}")
    return report


def _check_at_infinity(X: VectorField, bvp: BvpSpec, transform: Optional[ChangeOfVariables],
                       settings: Settings, strip: Optional[bool], report: InvarianceReport):
    items = report.items
    problems = []
    fallback = None
    for tr in candidate_transforms(bvp, transform, settings):
        try:
            fin = finite_ize(bvp, tr, X, strip)
        except BvpSymError as exc:
            problems.append(f"{tr.name}: {exc}")
            continue
        if not fin.ok:
            problems += [f"{tr.name}: {p}" for p in fin.problems]
            continue
        e, f = check_infinity_conditions(fin, settings)
        d = ItemVerdict("d", SATISFIED, "; ".join(f"{m.original.text()} -> {m.image.text()}" for m in fin.manifolds),
                        flags=[flag for m in fin.manifolds for flag in m.flags])
        outcome = (fin, d, e, f)
        if e.ok and f.ok:
            fallback = outcome
            break
        if fallback is None:
            fallback = outcome

    if fallback is None:
        items["d"] = ItemVerdict("d", VIOLATED, "; ".join(problems) or "no transform available")
        for letter in "ef":
            items[letter] = ItemVerdict(letter, NOT_APPLICABLE, "item (d) failed")
        return
    fin, d, e, f = fallback
    items["d"], items["e"], items["f"] = d, e, f
    report.transform = fin.transform.name
    report.pushed_operator = fin.pushed.text(fin.transform.new_ctx)
    report.manifolds = [f"{m.original.text()} -> {m.image.text()}" for m in fin.manifolds]
