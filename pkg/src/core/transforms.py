# src/core/transforms.py
"""
Chain-rule machinery shared by changes of variables and ansatz substitution.

A JetMap knows the new independent variables as functions of the old ones
and the old dependent variable as U(old variables, w). Old jets are built
in a mixed representation (old coordinates, new jets) by repeated old
total derivatives, then moved to new coordinates with the inverse map.
"""

import logging
from typing import Dict, Iterable, Optional, Tuple

import sympy as sp

from .errors import ConstructionError, UnsupportedError
from .expr_core import VariableContext, cancel_exponents, normalize
from .pde_dsl import ChangeOfVariables
from .prolongation import VectorField

logger = logging.getLogger(__name__)

TRIG = (sp.sin, sp.cos, sp.tan, sp.atan)


def positive_simplify(expr: sp.Expr) -> sp.Expr:
    """Simplification valid on a declared positive domain: split and denest powers, cancel exponents"""
    expr = sp.sympify(expr)
    if expr.has(*TRIG):
        expr = expr.replace(lambda x: x.is_Pow and x.base.has(sp.sin, sp.cos),
                            lambda p: sp.Pow(sp.trigsimp(sp.factor(p.base)), p.exp))
        expr = expr.replace(lambda x: isinstance(x, sp.atan) and isinstance(x.args[0], sp.tan),
                            lambda a: a.args[0].args[0])
    expr = sp.expand_power_base(expr, force=True)
    expr = sp.powdenest(expr, force=True)
    expr = sp.powsimp(expr, combine="exp", force=True)
    return cancel_exponents(expr)


class JetMap:
    """
    Old jets expressed through new jets.

    forward   new independent name -> expression in old independents
    dependent U: the old dependent variable in old coordinates and the new dependent
    inverse   old independent symbol -> expression in new (and extra) coordinates
    """

    def __init__(self, old_ctx: VariableContext, new_ctx: VariableContext, forward: Dict[str, sp.Expr],
                 dependent: sp.Expr, inverse: Dict[sp.Symbol, sp.Expr]):
        self.old_ctx = old_ctx
        self.new_ctx = new_ctx
        self.forward = dict(forward)
        self.U = dependent
        self.inverse = dict(inverse)
        self._jacobian: Dict[Tuple[str, str], sp.Expr] = {}
        for i in old_ctx.independents:
            xi = old_ctx.symbol(i)
            for a, g in self.forward.items():
                self._jacobian[(i, a)] = sp.diff(g, xi)
        self._mixed: Dict[Tuple[str, ...], sp.Expr] = {(): dependent}

    @classmethod
    def for_transform(cls, tr: ChangeOfVariables) -> "JetMap":
        new_dep = tr.new_ctx.dependent
        forward = {n: e for n, e in tr.forward.items() if n != new_dep}
        to_old = {tr.new_ctx.symbol(n): e for n, e in forward.items()}
        U = positive_simplify(tr.inverse[tr.old_ctx.dependent].subs(to_old, simultaneous=True))
        inverse = {tr.old_ctx.symbol(n): e for n, e in tr.inverse.items() if n != tr.old_ctx.dependent}
        return cls(tr.old_ctx, tr.new_ctx, forward, U, inverse)

    def old_total(self, E: sp.Expr, i: str) -> sp.Expr:
        """Old total derivative D_i of a mixed expression"""
        result = sp.diff(E, self.old_ctx.symbol(i))
        for s in self.new_ctx.dependent_atoms(E):
            dE = sp.diff(E, s)
            if dE == 0:
                continue
            for a in self.forward:
                J = self._jacobian[(i, a)]
                if J != 0:
                    result += dE * J * self.new_ctx.raise_jet(s, a)
        return result

    def mixed(self, index: Iterable[str]) -> sp.Expr:
        index = self.old_ctx.sort_index(index)
        if index not in self._mixed:
            self._mixed[index] = self.old_total(self.mixed(index[:-1]), index[-1])
        return self._mixed[index]

    def to_new_coordinates(self, expr: sp.Expr) -> sp.Expr:
        return positive_simplify(sp.sympify(expr).subs(self.inverse, simultaneous=True))

    def jet(self, index: Iterable[str]) -> sp.Expr:
        return self.to_new_coordinates(self.mixed(index))

    def to_mixed(self, expr: sp.Expr) -> sp.Expr:
        """Replace u and its old jets by U and its derivatives (still in old coordinates)"""
        expr = self.old_ctx.rebind(sp.sympify(expr))
        bindings = {}
        for s in self.old_ctx.dependent_atoms(expr):
            bindings[s] = self.mixed(self.old_ctx.jet_index(s))
        return expr.subs(bindings, simultaneous=True) if bindings else expr

    def to_new(self, expr: sp.Expr) -> sp.Expr:
        return self.to_new_coordinates(self.to_mixed(expr))


def pushforward(X: VectorField, tr: ChangeOfVariables, jets: Optional[JetMap] = None) -> VectorField:
    """The operator X written in the new coordinates of tr"""
    jets = jets or JetMap.for_transform(tr)
    old_ctx, new_ctx = tr.old_ctx, tr.new_ctx
    X = VectorField(old_ctx.rebind(sp.sympify(X.xi0)), tuple(old_ctx.rebind(sp.sympify(c)) for c in X.xi),
                    old_ctx.rebind(sp.sympify(X.eta)), X.conditional, X.name)
    coefficients = {}
    for name, expr in tr.forward.items():
        action = X.apply(expr, old_ctx)
        coefficients[name] = normalize(jets.to_new(action), new_ctx)
    Y = VectorField.from_coefficients(new_ctx, coefficients, conditional=X.conditional, name=f"{X.name}*")
    logger.debug(f"🔍 pushed {X.name} through {tr.name}: {Y.text(new_ctx)}")
    return Y


def transform_expression(expr: sp.Expr, tr: ChangeOfVariables, jets: Optional[JetMap] = None) -> sp.Expr:
    jets = jets or JetMap.for_transform(tr)
    return jets.to_new(expr)


def identity_transform(ctx: VariableContext, name: str = "identity") -> ChangeOfVariables:
    forward = {v: ctx.symbol(v) for v in ctx.independents}
    forward[ctx.dependent] = ctx.u
    inverse = dict(forward)
    return ChangeOfVariables(name, ctx, ctx, forward, inverse, ())


def check_transform(tr: ChangeOfVariables, seed: int = 20240611):
    if not tr.check_bijective(seed):
        raise ConstructionError(f"{tr.name}: forward and inverse maps do not compose to the identity")


def bind_transform(tr: ChangeOfVariables, ctx: VariableContext) -> ChangeOfVariables:
    """Re-express a library transform over the parameters, functions and assumptions of ctx"""
    if tuple(tr.old_ctx.independents) != tuple(ctx.independents) or tr.old_ctx.dependent != ctx.dependent:
        raise UnsupportedError(
            f"{tr.name}: written for ({', '.join(tr.old_ctx.independents)}; {tr.old_ctx.dependent}), "
            f"problem uses ({', '.join(ctx.independents)}; {ctx.dependent})")
    extra = [p for p in tr.old_ctx.parameters if p not in ctx.parameters]
    base = ctx.derive(extra_parameters=extra, time=ctx.time)
    for a in tr.old_ctx.assumptions:
        if a.target in extra:
            base.add_assumption(a)

    old_ctx = base.derive(positive={a.target for a in tr.domain if a.implies_positive}, time=ctx.time)
    for a in tr.domain:
        old_ctx.add_assumption(a)
    new_ctx = base.derive(independents=tr.new_ctx.independents, dependent=tr.new_ctx.dependent,
                          positive=tr.new_ctx.positive_names, time=tr.new_ctx.time)
    forward = {n: old_ctx.rebind(e) for n, e in tr.forward.items()}
    inverse = {n: new_ctx.rebind(e) for n, e in tr.inverse.items()}
    return ChangeOfVariables(tr.name, old_ctx, new_ctx, forward, inverse, tr.domain)
