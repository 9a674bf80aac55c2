# src/core/reduction.py
"""
Symmetry reductions of a boundary value problem.

An operator with affine coefficients (or eta = c u^p) is integrated along
its characteristics to give invariants and an ansatz u = U(t, x, phi).
Substituting the ansatz through a JetMap leaves one variable (the group
parameter direction) that must drop out: either it factors off every term
or the residual splits into pieces by its powers. Loci and conditions at
infinity are mapped the same way.

Also here: the polar ansatz for the scaling operator, the Kirchhoff
substitution of stationary problems and the Liouville substitution.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import sympy as sp
from sympy.core.function import AppliedUndef

from .config import Settings
from .errors import ConstructionError, UnsupportedError
from .expr_core import (Assumption, VariableContext, dsl_str, equivalent, is_zero, normalize,
                        total_derivative)
from .invariance import InvarianceReport
from .pde_dsl import BvpSpec, FiniteBoundaryCondition, InfinityCondition
from .prolongation import VectorField
from .transforms import JetMap, positive_simplify

logger = logging.getLogger(__name__)

PARABOLIC = "parabolic"
ELLIPTIC = "elliptic"
ODE = "ode"


# ---------------------------------------------------------------------------
# Ansatz
# ---------------------------------------------------------------------------

@dataclass
class Ansatz:
    """
    u = U(old variables, phi(invariants)).

    invariants  new name -> expression in the old variables
    inverse     old variable -> expression in the new variables and `extra`
    extra       the direction along the orbits; it must drop out of the reduced problem
    """
    operator: VectorField
    parent: VariableContext
    ctx: VariableContext
    invariants: Dict[str, sp.Expr]
    U: sp.Expr
    inverse: Dict[sp.Symbol, sp.Expr]
    extra: sp.Symbol
    orientation: int = 1
    far_field: Tuple[InfinityCondition, ...] = ()

    def jet_map(self) -> JetMap:
        return JetMap(self.parent, self.ctx, self.invariants, self.U, self.inverse)

    def check(self, settings: Optional[Settings] = None) -> List[str]:
        """X annihilates every invariant and X(U) = eta(U)"""
        settings = settings or Settings()
        ctx, X = self.parent, self.operator
        kw = dict(seed=settings.seed, samples=settings.samples)
        failures = []
        for name, expr in self.invariants.items():
            if not is_zero(X.apply(expr, ctx), ctx, **kw):
                failures.append(f"{X.name}({name}) = {dsl_str(sp.simplify(X.apply(expr, ctx)))} != 0")
        lhs = X.apply(self.U, ctx)
        rhs = sp.sympify(X.eta).subs(ctx.u, self.U)
        if not equivalent(lhs, rhs, ctx, **kw):
            failures.append(f"{X.name}(U) differs from eta(U) for U = {dsl_str(self.U)}")
        return failures

    def text(self) -> str:
        parts = [f"{self.parent.dependent} = {dsl_str(self.U)}"]
        parts += [f"{name} = {dsl_str(expr)}" for name, expr in self.invariants.items()
                  if expr != self.ctx.symbol(name)]
        return ", ".join(parts)


def _affine(c: sp.Expr, var: sp.Symbol, frozen: set) -> Optional[Tuple[sp.Expr, sp.Expr]]:
    """c = a*var + b with a, b free of the moving variables (var among them)"""
    c = sp.sympify(c)
    a = sp.simplify(sp.diff(c, var))
    b = sp.simplify(c - a * var)
    if (a.free_symbols | b.free_symbols) & (frozen | {var}):
        return None
    return a, b


def _power(eta: sp.Expr, u: sp.Symbol, frozen: set) -> Optional[Tuple[sp.Expr, sp.Expr]]:
    """eta = c*u^p with c free of the moving variables and p != 1"""
    c, rest = sp.sympify(eta).as_independent(u, as_Add=False)
    base, p = rest.as_base_exp()
    if base != u or p == 1 or p.free_symbols or (c.free_symbols & frozen):
        return None
    return c, p


def _characteristic_text(X: VectorField, ctx: VariableContext) -> str:
    pairs = [f"d{var}/({dsl_str(c)})" for var, c in X.coefficients(ctx).items()]
    return " = ".join(pairs)


def invariants_of(X: VectorField, ctx: VariableContext, names: Optional[Dict[str, str]] = None,
                  dependent: str = "phi", reference: Optional[str] = None, orientation: int = 1,
                  keep_rules: bool = False) -> Ansatz:
    """
    Ansatz from the characteristic system of X.

    Every moving coordinate z needs xi_z = a z + b; the dependent variable
    needs eta = a u + b or eta = c u^p. The reference variable (t when it
    moves, else the first moving space variable) is eliminated; `orientation`
    picks the branch when it may be negative.
    """
    names = dict(names or {})
    coefficients = X.coefficients(ctx)
    moving = [v for v in ctx.independents if sp.simplify(coefficients.get(v, 0)) != 0]
    if not moving:
        raise UnsupportedError(f"{X.name} does not move any independent variable")
    if dependent in ctx.functions or ctx.is_registered(dependent):
        raise ConstructionError(f"'{dependent}' is already used in {ctx!r}; pick another name")
    r_name = reference or moving[0]
    if r_name not in moving:
        raise ConstructionError(f"reference variable {r_name} is not moved by {X.name}")
    frozen = {ctx.symbol(v) for v in moving} | {ctx.u}

    unsupported = UnsupportedError(
        f"{X.name}: characteristic system outside the supported families, integrate by hand: "
        f"{_characteristic_text(X, ctx)}")
    affine = {}
    for v in moving:
        sym = ctx.symbol(v)
        pair = _affine(coefficients[v], sym, frozen)
        if pair is None:
            raise unsupported
        affine[v] = pair

    r = ctx.symbol(r_name)
    a_r, b_r = affine[r_name]
    if a_r == 0:
        s = r / b_r

        def growth(c):
            return sp.exp(c * s)
    else:
        base = r + b_r / a_r
        sign = 1 if base.is_positive else orientation
        s = sp.log(sign * base) / a_r

        def growth(c):
            e = sp.simplify(c / a_r)
            return base ** e if e.is_integer else (sign * base) ** e

    new_names, invariants, inverse_old = [], {}, {}
    index = {v: i for i, v in enumerate(ctx.space, start=1)}
    for v in ctx.independents:
        if v == r_name:
            continue
        sym = ctx.symbol(v)
        if v not in moving:
            expr = sym
        else:
            a, b = affine[v]
            expr = sym - b * s if a == 0 else (sym + b / a) * growth(-a)
            expr = positive_simplify(expr)
        default = v if expr == sym else ("tau" if v == ctx.time else f"omega{index[v]}")
        name = names.get(v, default)
        new_names.append(name)
        invariants[name] = expr

    time = "t" if "t" in new_names and invariants.get("t") == ctx.t else None
    new_ctx = ctx.derive(independents=new_names, dependent=dependent, time=time, keep_rules=keep_rules)
    phi = new_ctx.u
    renamed = {ctx.symbol(v): new_ctx.symbol(n) for v, n in zip([w for w in ctx.independents if w != r_name],
                                                                  new_names)}

    for v, name in zip([w for w in ctx.independents if w != r_name], new_names):
        sym, omega = ctx.symbol(v), new_ctx.symbol(name)
        if v not in moving:
            inverse_old[sym] = omega
            continue
        a, b = affine[v]
        value = omega + b * s if a == 0 else omega * growth(a) - b / a
        inverse_old[sym] = sp.sympify(value).xreplace({k: w for k, w in renamed.items() if k != sym})
    inverse_old[r] = r

    eta = sp.sympify(X.eta)
    pair = _affine(eta, ctx.u, frozen)
    if pair is not None:
        a_u, b_u = pair
        if a_u == 0:
            U = phi + b_u * s
        else:
            U = growth(a_u) * (phi + b_u / a_u) - b_u / a_u
    else:
        power = _power(eta, ctx.u, frozen)
        if power is None:
            raise unsupported
        c, p = power
        U = ((1 - p) * c * s + phi) ** (1 / (1 - p))
    U = positive_simplify(U)

    ansatz = Ansatz(X, ctx, new_ctx, invariants, U, inverse_old, r, orientation)
    logger.info(f"📐 ansatz from {X.name}: {ansatz.text()}")
    return ansatz


def polar_ansatz(X: VectorField, ctx: VariableContext, dependent: str = "v",
                 keep_rules: bool = False) -> Ansatz:
    """
    u = v(t, theta)/r, theta = atan(x2/x1), for the scaling -x_a d/dx_a + u d/du
    on x1 > 0; the far-field condition becomes cos(theta) v_theta / v -> 1 as theta -> pi/2.
    """
    if len(ctx.space) != 2:
        raise UnsupportedError("the polar ansatz needs two space variables")
    x1, x2 = ctx.space_symbols
    r = sp.Symbol("r", positive=True)
    independents = ((ctx.time,) if ctx.time else ()) + ("theta",)
    new_ctx = ctx.derive(independents=independents, dependent=dependent, time=ctx.time, keep_rules=keep_rules)
    new_ctx.add_assumption(Assumption("theta", "in", (-sp.pi / 2, sp.pi / 2)))
    theta, v = new_ctx.symbol("theta"), new_ctx.u

    invariants = {"theta": sp.atan(x2 / x1)}
    inverse = {x1: r * sp.cos(theta), x2: r * sp.sin(theta)}
    if ctx.time:
        invariants = {ctx.time: ctx.t, **invariants}
        inverse[ctx.t] = new_ctx.t
    U = v / sp.sqrt(x1 ** 2 + x2 ** 2)
    far = InfinityCondition(1 / (sp.pi / 2 - theta), sp.cos(theta) * new_ctx.jet(("theta",)) / v - 1)
    ansatz = Ansatz(X, ctx, new_ctx, invariants, U, inverse, r, 1, (far,))
    logger.info(f"📐 polar ansatz from {X.name}: {ansatz.text()}")
    return ansatz


# ---------------------------------------------------------------------------
# Reduced problems
# ---------------------------------------------------------------------------

@dataclass
class ReducedProblem:
    ctx: VariableContext
    equations: Tuple[sp.Expr, ...]
    finite_bcs: Tuple[FiniteBoundaryCondition, ...]
    infinity_bcs: Tuple[InfinityCondition, ...]
    tag: str
    ansatz: Optional[Ansatz] = None
    parent: str = ""
    name: str = "reduced"
    kirchhoff: Optional[sp.Expr] = None
    notes: List[str] = field(default_factory=list)

    def to_bvp(self) -> BvpSpec:
        metadata = {"name": self.name}
        if self.notes:
            metadata["note"] = "; ".join(self.notes)
        return BvpSpec(self.ctx, tuple(self.equations), tuple(self.finite_bcs), tuple(self.infinity_bcs),
                       name=self.name, metadata=metadata)


def _tag(ctx: VariableContext) -> str:
    if ctx.time:
        return PARABOLIC
    return ODE if len(ctx.independents) == 1 else ELLIPTIC


def _primitive(expr: sp.Expr) -> sp.Expr:
    coeff, rest = sp.factor_terms(sp.sympify(expr)).as_coeff_Mul()
    return rest if coeff != 0 else expr


def _orbit_free(E: sp.Expr, r: sp.Symbol, ctx: VariableContext) -> Optional[List[sp.Expr]]:
    """Pieces of E free of r: divide by a common factor, else split by the pure-r monomials"""
    E = normalize(E, ctx)
    if not E.has(r):
        return [E]
    factors = [sp.S.One]
    for term in sp.Add.make_args(sp.expand(E)):
        f = term.as_independent(r, as_Add=False)[1]
        if f not in factors:
            factors.append(f)
    for f in factors[1:]:
        Q = normalize(sp.powsimp(sp.expand(E / f), force=True), ctx)
        if not Q.has(r):
            logger.debug(f"🔍 common factor {dsl_str(f)}")
            return [Q]
    for f in factors:
        Q = normalize(sp.powsimp(sp.expand(E / f), force=True), ctx)
        keys = {}
        for term in sp.Add.make_args(Q):
            coeff, key = term.as_independent(r, as_Add=False)
            if key.free_symbols - {r} or key.atoms(AppliedUndef):
                break
            keys[key] = keys.get(key, sp.S.Zero) + coeff
        else:
            pieces = [normalize(c, ctx) for c in keys.values()]
            pieces = [p for p in pieces if p != 0]
            logger.debug(f"🔍 split into {len(pieces)} piece(s) by powers of {r}")
            return pieces
    return None


def _reduce_relation(E: sp.Expr, r: sp.Symbol, ctx: VariableContext, what: str) -> List[sp.Expr]:
    pieces = _orbit_free(E, r, ctx)
    if pieces is None:
        num, _ = sp.fraction(sp.cancel(sp.together(E)))
        pieces = _orbit_free(num, r, ctx)
    if pieces is None:
        offending = [t for t in sp.Add.make_args(sp.expand(E)) if t.has(r)]
        raise ConstructionError(
            f"{what} still depends on {r} after substitution (reduction inconsistent); "
            f"offending term: {dsl_str(offending[0]) if offending else dsl_str(E)}")
    return [p for p in pieces if not is_zero(p, ctx)] if len(pieces) > 1 else pieces


def _drop_orbit_factors(expr: sp.Expr, ansatz: Ansatz, what: str) -> Tuple[sp.Expr, int]:
    """Remove factors depending only on the extra variable; returns the rest and the sign removed"""
    r = ansatz.extra
    variables = set(ansatz.ctx.independent_symbols)
    sign, kept = 1, []
    for factor in sp.Mul.make_args(sp.factor_terms(positive_simplify(expr))):
        if factor.is_number:
            sign *= 1 if factor > 0 else -1
            continue
        if not factor.free_symbols & variables:
            base, e = factor.as_base_exp()
            even = e.is_integer and e.is_even
            if factor.has(r) and not (even or factor.is_positive or base.is_positive):
                sign *= ansatz.orientation
            continue
        if factor.has(r):
            raise ConstructionError(f"{what} {dsl_str(expr)} is not invariant: it depends on {r}")
        kept.append(factor)
    if not kept:
        raise ConstructionError(f"{what} {dsl_str(expr)} collapses under the ansatz")
    return sp.Mul(*kept), sign


def _locus_root(locus: sp.Expr, ctx: VariableContext) -> sp.Expr:
    """Replace a transcendental locus f(v) = 0 by v - v0 when it has one root in the range of v"""
    variables = [s for s in ctx.independent_symbols if locus.has(s)]
    if len(variables) != 1:
        return locus
    v = variables[0]
    if locus.is_polynomial(v) and sp.degree(locus, v) == 1:
        return locus
    domain = sp.S.Reals
    for a in ctx.assumptions_for(v.name):
        if a.relation == "in":
            domain = sp.Interval(a.value[0], a.value[1], True, True)
    roots = sp.solveset(locus, v, domain)
    if isinstance(roots, sp.FiniteSet) and len(roots) == 1:
        root = next(iter(roots))
        return v - root if root != 0 else v
    return locus


def _on_locus(relation: sp.Expr, locus: sp.Expr, ctx: VariableContext) -> sp.Expr:
    variables = [s for s in ctx.independent_symbols if locus.has(s)]
    if len(variables) != 1:
        return relation
    v = variables[0]
    roots = sp.solve(locus, v)
    if len(roots) != 1:
        return relation
    value = relation.subs(v, roots[0])
    if value.atoms(sp.Subs) or value == 0:
        return relation
    return value


def _evolution_normalized(residual: sp.Expr, ctx: VariableContext) -> sp.Expr:
    if not ctx.time:
        return residual
    ut = ctx.jet((ctx.time,))
    c = sp.expand(residual).coeff(ut)
    if c != 0 and not ctx.jet_atoms(c) and not c.has(ctx.u):
        return normalize(residual / c, ctx)
    return residual


def _bound(X: VectorField, ctx: VariableContext) -> VectorField:
    return VectorField(ctx.rebind(sp.sympify(X.xi0)), tuple(ctx.rebind(sp.sympify(c)) for c in X.xi),
                       ctx.rebind(sp.sympify(X.eta)), X.conditional, X.name)


def reduce_bvp(X: VectorField, bvp: BvpSpec, ansatz: Optional[Ansatz] = None,
               settings: Optional[Settings] = None, verified: Optional[InvarianceReport] = None,
               keep_rules: bool = False, names: Optional[Dict[str, str]] = None,
               orientation: int = 1) -> ReducedProblem:
    """Substitute the ansatz of X into the equation and every condition of bvp"""
    settings = settings or Settings()
    source = bvp.resolved()
    ctx = source.ctx
    X = _bound(X, ctx)
    if verified is None:
        logger.warning(f"⚠️ {X.name} has not been checked on {bvp.name}; reducing anyway")
    elif not verified.passed:
        logger.warning(f"⚠️ {X.name} is {verified.overall} on {bvp.name}; the reduction may be meaningless")

    ansatz = ansatz or invariants_of(X, ctx, names=names, orientation=orientation, keep_rules=keep_rules)
    failures = ansatz.check(settings)
    if failures:
        raise ConstructionError(f"ansatz is not invariant under {X.name}: " + "; ".join(failures))
    jets = ansatz.jet_map()
    new_ctx, r = ansatz.ctx, ansatz.extra

    logger.info(f"[Step 1/3] substituting {ansatz.text()} into the equation")
    equations = []
    for e in source.equations:
        pieces = _reduce_relation(jets.to_new(e), r, new_ctx, "equation")
        equations += [_evolution_normalized(_primitive(p), new_ctx) for p in pieces]

    logger.info("[Step 2/3] mapping boundary conditions")
    finite = []
    for bc in source.finite_bcs:
        locus, _ = _drop_orbit_factors(jets.to_new_coordinates(bc.locus), ansatz, "boundary locus")
        locus = _locus_root(locus, new_ctx)
        for piece in _reduce_relation(jets.to_new(bc.relation), r, new_ctx, "boundary condition"):
            finite.append(FiniteBoundaryCondition(locus, _on_locus(_primitive(piece), locus, new_ctx)))

    logger.info("[Step 3/3] mapping conditions at infinity")
    infinity = list(ansatz.far_field)
    if not infinity:
        for cond in source.infinity_bcs:
            direction, sign = _drop_orbit_factors(jets.to_new_coordinates(cond.direction), ansatz,
                                                  "direction at infinity")
            for piece in _reduce_relation(jets.to_new(cond.relation), r, new_ctx, "condition at infinity"):
                infinity.append(InfinityCondition(sign * direction, _primitive(piece)))

    if len(new_ctx.independents) != len(ctx.independents) - 1:
        raise ConstructionError("reduction must remove exactly one independent variable")
    reduced = ReducedProblem(new_ctx, tuple(equations), tuple(finite), tuple(infinity), _tag(new_ctx),
                             ansatz=ansatz, parent=bvp.name, name=f"{bvp.name} reduced by {X.name}",
                             notes=[ansatz.text()])
    logger.info(f"✅ {reduced.name}: {reduced.tag}, {len(equations)} equation(s) in "
                f"({', '.join(new_ctx.independents)})")
    return reduced


# ---------------------------------------------------------------------------
# Substitutions of the dependent variable
# ---------------------------------------------------------------------------

def _strip_positive(expr: sp.Expr, ctx: VariableContext) -> sp.Expr:
    """Drop numeric factors, exponentials, powers of the dependent variable and declared nonzero functions"""
    declared = {t.replace(" ", "") for t in ctx.nonvanishing()}
    factored = sp.factor_terms(expr)
    kept = []
    for f in sp.Mul.make_args(factored):
        base, _ = f.as_base_exp()
        if f.is_number or isinstance(f, sp.exp) and not ctx.jet_atoms(f):
            continue
        if base == ctx.u or isinstance(base, sp.exp) and not ctx.jet_atoms(base):
            continue
        if isinstance(base, AppliedUndef) and dsl_str(base).replace(" ", "") in declared:
            continue
        kept.append(f)
    return sp.Mul(*kept) if kept else factored


def change_dependent(problem: ReducedProblem, name: str, value: Callable[[sp.Symbol], sp.Expr]) -> ReducedProblem:
    """Write the problem for a new unknown: old dependent = value(new dependent)"""
    ctx = problem.ctx
    new_ctx = ctx.derive(dependent=name, time=ctx.time, keep_rules=False)
    identity = {v: ctx.symbol(v) for v in ctx.independents}
    jets = JetMap(ctx, new_ctx, identity, value(new_ctx.u),
                  {ctx.symbol(v): new_ctx.symbol(v) for v in ctx.independents})

    def convert(e):
        return _strip_positive(normalize(jets.to_new(e), new_ctx), new_ctx)

    return ReducedProblem(
        new_ctx,
        tuple(convert(e) for e in problem.equations),
        tuple(FiniteBoundaryCondition(bc.locus, convert(bc.relation)) for bc in problem.finite_bcs),
        tuple(InfinityCondition(c.direction, convert(c.relation)) for c in problem.infinity_bcs),
        _tag(new_ctx), problem.ansatz, problem.parent, problem.name, problem.kirchhoff,
        list(problem.notes),
    )


def laplacian(w: sp.Symbol, ctx: VariableContext) -> sp.Expr:
    return sum((ctx.jet((v, v)) for v in ctx.space), sp.S.Zero)


def _drift(reduced: ReducedProblem) -> Optional[sp.Expr]:
    """lambda*phi_{x1} + ... left over from phi - (phi^-1 phi_a)_a = 0, or None for any other remainder"""
    ctx = reduced.ctx
    phi = ctx.u
    base = phi - sum((total_derivative(ctx.jet((a,)) / phi, a, ctx) for a in ctx.space), sp.S.Zero)
    firsts = [ctx.jet((a,)) for a in ctx.space]
    for sign in (1, -1):
        rest = sp.expand(normalize(sign * reduced.equations[0] - base, ctx))
        coeffs = [rest.coeff(j) for j in firsts]
        if any(ctx.jet_atoms(c) or c.has(phi) for c in coeffs):
            continue
        if is_zero(sp.expand(rest - sum(c * j for c, j in zip(coeffs, firsts))), ctx):
            return sum((c * j for c, j in zip(coeffs, firsts)), sp.S.Zero)
    return None


def liouville_substitute(reduced: ReducedProblem, name: str = "psi",
                         settings: Optional[Settings] = None) -> ReducedProblem:
    """phi = exp(psi) turns phi = (phi^-1 phi_a)_a into Liouville's equation exp(psi) = Laplacian(psi)"""
    settings = settings or Settings()
    if reduced.ctx.time or len(reduced.ctx.space) != 2:
        raise UnsupportedError("the Liouville substitution needs a stationary problem in two variables")
    drift = _drift(reduced)
    if drift is not None and not is_zero(drift, reduced.ctx):
        raise ConstructionError(f"the Liouville substitution needs lambda = 0, "
                                f"found the drift term {dsl_str(drift)}")
    out = change_dependent(reduced, name, sp.exp)
    ctx = out.ctx
    target = sp.exp(ctx.u) - laplacian(ctx.u, ctx)
    kw = dict(seed=settings.seed, samples=settings.samples)
    E = out.equations[0]
    if equivalent(E, -target, ctx, **kw):
        E = -E
    elif not equivalent(E, target, ctx, **kw):
        leftover = normalize(E - target, ctx)
        raise ConstructionError(f"not Liouville's equation: {dsl_str(leftover)} remains "
                                f"(a first-order term survives unless the drift vanishes)")
    out.equations = (target,)
    out.name = f"{reduced.name}, {reduced.ctx.dependent} = exp({name})"
    out.notes.append(f"{reduced.ctx.dependent} = exp({name})")
    logger.info(f"✅ Liouville form: {dsl_str(target)} = 0")
    return out


def kirchhoff_linearize(bvp: BvpSpec, diffusivity: Optional[sp.Expr] = None, name: str = "W",
                        settings: Optional[Settings] = None) -> ReducedProblem:
    """
    W = integral of d(u) du turns div(d(u) grad u) = 0 into the Laplace
    equation; first-order conditions are rewritten with u_a = W_a / d(u).
    """
    settings = settings or Settings()
    if bvp.ctx.time:
        raise UnsupportedError(f"{bvp.name}: the Kirchhoff substitution needs a stationary problem")
    source = bvp.resolved()
    ctx = source.ctx
    u = ctx.u
    residual = source.equation
    space = list(ctx.space)
    if diffusivity is None:
        c = sp.expand(residual).coeff(ctx.jet((space[0], space[0])))
        diffusivity = -c if c.could_extract_minus_sign() else c
    d = ctx.rebind(source.resolve(sp.sympify(diffusivity)))
    if ctx.jet_atoms(d) or d.free_symbols & set(ctx.space_symbols):
        raise UnsupportedError(f"{bvp.name}: diffusivity {dsl_str(d)} is not a function of u alone")

    divergence = sum((total_derivative(d * ctx.jet((a,)), a, ctx) for a in space), sp.S.Zero)
    kw = dict(seed=settings.seed, samples=settings.samples)
    if not (equivalent(residual, divergence, ctx, **kw) or equivalent(residual, -divergence, ctx, **kw)):
        raise UnsupportedError(f"{bvp.name}: equation is not div(d(u) grad u) = 0")

    W = sp.integrate(d, u, conds="none")
    if W.has(sp.Integral):
        W = None
    else:
        lap = sum((total_derivative(total_derivative(W, a, ctx), a, ctx) for a in space), sp.S.Zero)
        if not equivalent(lap, divergence, ctx, **kw):
            raise ConstructionError(f"Laplacian of W = {dsl_str(W)} differs from div(d grad u)")

    new_ctx = ctx.derive(dependent=name, time=None)
    bindings = {ctx.jet((a,)): new_ctx.jet((a,)) / d for a in space}

    def convert(relation: sp.Expr, what: str) -> sp.Expr:
        if ctx.spatial_order(relation) > 1:
            raise UnsupportedError(f"{what} {dsl_str(relation)} is not first order")
        out = _strip_positive(sp.factor_terms(sp.cancel(relation.subs(bindings))), ctx)
        if out.has(u):
            raise UnsupportedError(f"{what} {dsl_str(relation)} cannot be written through {name} alone")
        return new_ctx.rebind(out)

    finite = tuple(FiniteBoundaryCondition(bc.locus, convert(bc.relation, "boundary condition"))
                   for bc in source.finite_bcs)
    infinity = tuple(InfinityCondition(c.direction, convert(c.relation, "condition at infinity"))
                     for c in source.infinity_bcs)
    W_text = dsl_str(W) if W is not None else f"integral of {dsl_str(d)} d{ctx.dependent}"
    reduced = ReducedProblem(new_ctx, (laplacian(new_ctx.u, new_ctx),), finite, infinity, ELLIPTIC,
                             parent=bvp.name, name=f"{bvp.name}, Kirchhoff form", kirchhoff=W,
                             notes=[f"{name} = {W_text}"])
    logger.info(f"✅ Kirchhoff substitution {name} = {W_text}")
    return reduced
