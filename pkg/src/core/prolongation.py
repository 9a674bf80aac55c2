# src/core/prolongation.py
"""
Vector fields on (t, x, u) and their prolongation to jet space.

A field X = xi0 d/dt + xi^i d/dx_i + eta d/du is prolonged with the
recursive formula

    sigma_{J,i} = D_i sigma_J - sum_a u_{J,a} D_i xi^a,   sigma_() = eta

where a runs over t and the spatial variables. Spatial multi-indices up to
the requested order are computed, plus the single u_t slot.
"""

import logging
from dataclasses import dataclass, field, replace
from itertools import combinations_with_replacement
from typing import Dict, Iterable, Optional, Sequence, Tuple

import sympy as sp

from .errors import ConstructionError
from .expr_core import VariableContext, dsl_str, normalize, total_derivative

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VectorField:
    """Symmetry operator X (Lie) or Q (conditional); xi0 is 0 when there is no time variable"""
    xi0: sp.Expr
    xi: Tuple[sp.Expr, ...]
    eta: sp.Expr
    conditional: bool = False
    name: str = "X"

    @classmethod
    def from_coefficients(cls, ctx: VariableContext, coefficients: Dict[str, sp.Expr],
                          conditional: bool = False, name: str = "X") -> "VectorField":
        """Build from {'t': ..., 'x1': ..., 'u': ...}; missing coefficients are 0"""
        unknown = set(coefficients) - set(ctx.independents) - {ctx.dependent}
        if unknown:
            raise ConstructionError(f"no such coordinate(s): {sorted(unknown)}")
        xi0 = sp.sympify(coefficients.get(ctx.time, 0)) if ctx.time else sp.S.Zero
        xi = tuple(sp.sympify(coefficients.get(v, 0)) for v in ctx.space)
        eta = sp.sympify(coefficients.get(ctx.dependent, 0))
        X = cls(xi0, xi, eta, conditional, name)
        X.validate(ctx)
        return X

    @classmethod
    def zero(cls, ctx: VariableContext, name: str = "X") -> "VectorField":
        return cls(sp.S.Zero, tuple(sp.S.Zero for _ in ctx.space), sp.S.Zero, False, name)

    # -- access ------------------------------------------------------------

    def coefficients(self, ctx: VariableContext) -> Dict[str, sp.Expr]:
        out = {}
        if ctx.time:
            out[ctx.time] = self.xi0
        for v, c in zip(ctx.space, self.xi):
            out[v] = c
        out[ctx.dependent] = self.eta
        return out

    def coefficient(self, var: str, ctx: VariableContext) -> sp.Expr:
        return self.coefficients(ctx).get(var, sp.S.Zero)

    def base_coefficients(self, ctx: VariableContext) -> Dict[sp.Symbol, sp.Expr]:
        """{t: xi0, x_i: xi^i} keyed by symbol (time slot skipped when absent)"""
        out = {}
        if ctx.time:
            out[ctx.t] = self.xi0
        for sym, c in zip(ctx.space_symbols, self.xi):
            out[sym] = c
        return out

    def is_zero(self) -> bool:
        return all(sp.simplify(c) == 0 for c in (self.xi0, *self.xi, self.eta))

    def depends_on_u(self, ctx: VariableContext) -> bool:
        return any(ctx.dependent_atoms(c) for c in (self.xi0, *self.xi))

    def validate(self, ctx: VariableContext):
        for c in (self.xi0, *self.xi, self.eta):
            ctx.check_registered(c)
            if ctx.jet_atoms(c):
                raise ConstructionError(f"{self.name}: coefficients must not depend on derivatives of u")
        if not self.conditional and self.depends_on_u(ctx):
            raise ConstructionError(f"{self.name}: a Lie operator needs xi independent of u")

    # -- algebra -----------------------------------------------------------

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.xi0 + other.xi0, tuple(a + b for a, b in zip(self.xi, other.xi)),
                           self.eta + other.eta, self.conditional or other.conditional,
                           f"{self.name}+{other.name}")

    def scale(self, c) -> "VectorField":
        c = sp.sympify(c)
        return VectorField(c * self.xi0, tuple(c * x for x in self.xi), c * self.eta,
                           self.conditional, self.name)

    def __mul__(self, c):
        return self.scale(c)

    __rmul__ = __mul__

    def __neg__(self):
        return self.scale(-1)

    def __sub__(self, other):
        return self + (-other)

    def renamed(self, name: str) -> "VectorField":
        return replace(self, name=name)

    def subs(self, mapping) -> "VectorField":
        return VectorField(sp.sympify(self.xi0).subs(mapping), tuple(sp.sympify(x).subs(mapping) for x in self.xi),
                           sp.sympify(self.eta).subs(mapping), self.conditional, self.name)

    def simplified(self, ctx: Optional[VariableContext] = None) -> "VectorField":
        def tidy(c):
            return sp.factor_terms(normalize(c, ctx))
        return VectorField(tidy(self.xi0), tuple(tidy(x) for x in self.xi), tidy(self.eta),
                           self.conditional, self.name)

    def normalized_time(self, ctx: VariableContext) -> "VectorField":
        """Divide by xi0 (conditional criterion works with xi0 = 1)"""
        if self.xi0 == 0:
            raise ConstructionError(f"{self.name}: xi0 vanishes")
        return VectorField(sp.S.One, tuple(normalize(x / self.xi0, ctx) for x in self.xi),
                           normalize(self.eta / self.xi0, ctx), self.conditional, self.name)

    # -- action ------------------------------------------------------------

    def apply(self, expr: sp.Expr, ctx: VariableContext) -> sp.Expr:
        """Unprolonged action on a function of (t, x, u)"""
        expr = sp.sympify(expr)
        result = sp.S.Zero
        for sym, c in self.base_coefficients(ctx).items():
            if c != 0:
                result += c * sp.diff(expr, sym)
        if self.eta != 0:
            result += self.eta * sp.diff(expr, ctx.u)
        return result

    def invariant_surface(self, ctx: VariableContext) -> sp.Expr:
        """Q(u) = xi0 u_t + xi^i u_{x_i} - eta"""
        result = -self.eta
        if ctx.time:
            result += self.xi0 * ctx.jet((ctx.time,))
        for v, c in zip(ctx.space, self.xi):
            result += c * ctx.jet((v,))
        return result

    def characteristic(self, ctx: VariableContext) -> sp.Expr:
        return -self.invariant_surface(ctx)

    def text(self, ctx: VariableContext) -> str:
        terms = []
        for var, c in self.coefficients(ctx).items():
            c = sp.sympify(c)
            if c == 0:
                continue
            if c == 1:
                terms.append(f"d/d{var}")
            else:
                terms.append(f"({dsl_str(c)})*d/d{var}")
        return " + ".join(terms) if terms else "0"

    def __repr__(self):
        return f"VectorField({self.name}: xi0={self.xi0}, xi={self.xi}, eta={self.eta})"


@dataclass(frozen=True)
class ProlongedField:
    base: VectorField
    order: int
    sigma: Dict[Tuple[str, ...], sp.Expr] = field(default_factory=dict)

    def coefficient(self, index: Sequence[str], ctx: VariableContext) -> sp.Expr:
        key = ctx.sort_index(index)
        if key not in self.sigma:
            raise ConstructionError(f"no prolongation slot for {ctx.jet_name(key)} at order {self.order}")
        return self.sigma[key]


def spatial_indices(ctx: VariableContext, order: int):
    for n in range(1, order + 1):
        for index in combinations_with_replacement(ctx.space, n):
            yield ctx.sort_index(index)


def prolong(X: VectorField, order: int, ctx: VariableContext) -> ProlongedField:
    """Prolongation coefficients over spatial multi-indices up to `order` plus the u_t slot"""
    if order < 1:
        raise ConstructionError("prolongation order must be >= 1")
    if X.conditional and X.xi0 == 0 and ctx.time:
        logger.warning(f"⚠️ {X.name}: conditional operator with xi0 = 0 cannot be restricted to the manifold")

    base = X.base_coefficients(ctx)
    variables = [ctx.time] if ctx.time else []
    variables += list(ctx.space)
    coef_by_name = {sym.name: c for sym, c in base.items()}

    def step(sigma_j: sp.Expr, index: Tuple[str, ...], i: str) -> sp.Expr:
        value = total_derivative(sigma_j, i, ctx)
        for a in variables:
            xi_a = coef_by_name.get(a, sp.S.Zero)
            if xi_a == 0:
                continue
            d_xi = total_derivative(xi_a, i, ctx)
            if d_xi != 0:
                value -= ctx.jet(index + (a,)) * d_xi
        return normalize(value, ctx)

    sigma: Dict[Tuple[str, ...], sp.Expr] = {}
    eta = sp.sympify(X.eta)
    if ctx.time:
        sigma[(ctx.time,)] = step(eta, (), ctx.time)
    for index in spatial_indices(ctx, order):
        prefix, i = index[:-1], index[-1]
        sigma_prefix = sigma[prefix] if prefix else eta
        sigma[index] = step(sigma_prefix, prefix, i)
    logger.debug(f"🔍 prolonged {X.name} to order {order}: {len(sigma)} slots")
    return ProlongedField(X, order, sigma)


def apply_prolonged(Xk: ProlongedField, e: sp.Expr, ctx: VariableContext) -> sp.Expr:
    """Action of the prolonged field on an expression of order <= Xk.order"""
    e = sp.sympify(e)
    ctx.check_registered(e)
    if ctx.spatial_order(e) > Xk.order:
        raise ConstructionError(
            f"order mismatch: expression has order {ctx.spatial_order(e)}, field prolonged to {Xk.order}")
    result = Xk.base.apply(e, ctx)
    for s in ctx.jet_atoms(e):
        index = ctx.jet_index(s)
        if index not in Xk.sigma:
            raise ConstructionError(f"order mismatch: no prolongation slot for {s}")
        result += Xk.sigma[index] * sp.diff(e, s)
    return normalize(result, ctx)


def linear_combination(terms: Iterable[Tuple[sp.Expr, VectorField]], name: str = "X") -> VectorField:
    terms = list(terms)
    if not terms:
        raise ConstructionError("empty combination")
    total = None
    for c, X in terms:
        total = X.scale(c) if total is None else total + X.scale(c)
    return total.renamed(name)
