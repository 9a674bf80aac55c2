# src/core/pde_dsl.py
"""
Reader and writer for the .bvp text format.

A document is a list of stanzas, one per line:

    name: power flux problem
    independent: t, x1, x2
    dependent: u
    parameters: k, q0
    function: d(u), q(t)
    assume k != -2
    define d(u) = u^k
    equation: u_t = D(d(u)*u_{x1}, x1) + D(d(u)*u_{x2}, x2)
    bc: x2 = 0 : d(u)*u_{x2} = q(t)
    bc_inf: x2 -> inf : u_{x2} = 0
    variant flux: x2 -> inf : d(u)*u_{x2} = 0
    operator D: 2*t*d/dt + x1*d/dx1 + x2*d/dx2
    transform T31: tau = t, y1 = x1, y2 = x2^(-eps), w = u/x2 ; inverse: ... ; domain: x2 > 0

Expressions are infix with ^ (right-associative), * / + -, unary minus
binding below ^, function application, jets u_t and u_{x1 x2}, D(e, v)
for total derivatives, diff(e, v[, n]) for partial derivatives and
subs(e, v, value). Numbers are exact rationals.

The dependent variable is taken positive unless the document says
"assume u real".
"""

import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import pyparsing as pp
import sympy as sp
from sympy.core.function import AppliedUndef

from .errors import BvpSymError, ConstructionError, ParseError, UnsupportedError
from .expr_core import (BUILTIN_FUNCTIONS, Assumption, DerivativeRule, VariableContext, dsl_str,
                        substitute, total_derivative)
from .prolongation import VectorField

logger = logging.getLogger(__name__)

DEFAULT_INDEPENDENTS = ("t", "x1", "x2")
METADATA_KEYS = ("name", "table", "case", "expect", "control", "note")
DECLARATION_KEYS = ("independent", "dependent", "parameters", "function")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FiniteBoundaryCondition:
    locus: sp.Expr      # s_a(t, x) = 0
    relation: sp.Expr   # B_a = 0

    def text(self) -> str:
        return f"bc: {dsl_str(self.locus)} = 0 : {dsl_str(self.relation)} = 0"


@dataclass(frozen=True)
class InfinityCondition:
    direction: sp.Expr  # gamma_c(t, x) -> inf
    relation: sp.Expr   # Gamma_c = 0 in the limit

    def text(self, keyword: str = "bc_inf") -> str:
        return f"{keyword}: {dsl_str(self.direction)} -> inf : {dsl_str(self.relation)} = 0"


@dataclass(frozen=True)
class Relation:
    expr: sp.Expr
    kind: str = "eq"  # "eq": expr = 0, "to_inf": expr -> inf, "to_zero": expr -> 0

    def text(self) -> str:
        if self.kind == "to_inf":
            return f"{dsl_str(self.expr)} -> inf"
        if self.kind == "to_zero":
            return f"{dsl_str(self.expr)} -> 0"
        return f"{dsl_str(self.expr)} = 0"


@dataclass(frozen=True)
class ManifoldSpec:
    relations: Tuple[Relation, ...]
    ambient: Tuple[str, ...]

    @property
    def dimensionality(self) -> int:
        dim = len(self.ambient) - len(self.relations)
        if dim < 0:
            raise ConstructionError("manifold has more relations than ambient variables")
        return dim

    def text(self) -> str:
        rels = ", ".join(r.text() for r in self.relations)
        return f"{{{rels}}} in ({', '.join(self.ambient)}), D={self.dimensionality}"


@dataclass
class ChangeOfVariables:
    """Bijective map (tau, y, w) = (f(t, x), g(t, x), h(t, x, u)) with its inverse"""
    name: str
    old_ctx: VariableContext
    new_ctx: VariableContext
    forward: Dict[str, sp.Expr]
    inverse: Dict[str, sp.Expr]
    domain: Tuple[Assumption, ...] = ()

    @property
    def new_names(self) -> Tuple[str, ...]:
        return tuple(self.forward)

    @property
    def parameters(self) -> List[str]:
        used = set()
        for e in list(self.forward.values()) + list(self.inverse.values()):
            used |= {s.name for s in e.free_symbols}
        return [p for p in self.old_ctx.parameters if p in used]

    def forward_symbol_map(self) -> Dict[sp.Symbol, sp.Expr]:
        return {self.new_ctx.symbol(n): e for n, e in self.forward.items()}

    def inverse_symbol_map(self) -> Dict[sp.Symbol, sp.Expr]:
        return {self.old_ctx.symbol(n): e for n, e in self.inverse.items()}

    def check_bijective(self, seed: int = 20240611) -> bool:
        """forward(inverse(new)) = new and inverse(forward(old)) = old, coordinate-wise"""
        from .expr_core import equivalent
        inv = self.inverse_symbol_map()
        fwd = self.forward_symbol_map()
        for name, expr in self.forward.items():
            back = sp.powdenest(expr.subs(inv, simultaneous=True), force=True)
            if not equivalent(back, self.new_ctx.symbol(name), self.new_ctx, seed=seed):
                return False
        for name, expr in self.inverse.items():
            back = sp.powdenest(expr.subs(fwd, simultaneous=True), force=True)
            if not equivalent(back, self.old_ctx.symbol(name), self.old_ctx, seed=seed):
                return False
        return True

    def instantiate(self, **values) -> "ChangeOfVariables":
        """Fix parameters such as eps to numbers"""
        def bind(e, ctx):
            return e.subs({ctx.symbol(k): sp.nsimplify(v) for k, v in values.items() if ctx.is_registered(k)})
        label = ",".join(f"{k}={v}" for k, v in values.items())
        return replace(
            self,
            name=f"{self.name}[{label}]" if label else self.name,
            forward={n: bind(e, self.old_ctx) for n, e in self.forward.items()},
            inverse={n: bind(e, self.new_ctx) for n, e in self.inverse.items()},
        )

    def text(self) -> str:
        fwd = ", ".join(f"{n} = {dsl_str(e)}" for n, e in self.forward.items())
        inv = ", ".join(f"{n} = {dsl_str(e)}" for n, e in self.inverse.items())
        out = f"transform {self.name}: {fwd} ; inverse: {inv}"
        if self.domain:
            out += " ; domain: " + ", ".join(a.text() for a in self.domain)
        return out


@dataclass
class BvpSpec:
    """Evolution PDE (residual form) with finite and infinity boundary conditions"""
    ctx: VariableContext
    equations: Tuple[sp.Expr, ...]
    finite_bcs: Tuple[FiniteBoundaryCondition, ...] = ()
    infinity_bcs: Tuple[InfinityCondition, ...] = ()
    definitions: Dict[str, Tuple[sp.Expr, sp.Expr]] = field(default_factory=dict)
    name: str = "bvp"
    metadata: Dict[str, str] = field(default_factory=dict)
    operators: Dict[str, VectorField] = field(default_factory=dict)
    transforms: Dict[str, ChangeOfVariables] = field(default_factory=dict)
    variants: Dict[str, Tuple[InfinityCondition, ...]] = field(default_factory=dict)

    @property
    def equation(self) -> sp.Expr:
        return self.equations[0]

    @property
    def order(self) -> int:
        return self.ctx.spatial_order(self.equation)

    @property
    def is_evolution(self) -> bool:
        if not self.ctx.time:
            return False
        return _evolution_rhs(self.equation, self.ctx) is not None

    def evolution_rhs(self) -> sp.Expr:
        """F in u_t = F"""
        rhs = _evolution_rhs(self.equation, self.ctx) if self.ctx.time else None
        if rhs is None:
            raise UnsupportedError(f"{self.name}: governing equation is not of evolution form u_t = F")
        return rhs

    def definition_bindings(self) -> Dict[sp.Expr, sp.Expr]:
        return {app: value for app, value in self.definitions.values()}

    def resolve(self, expr: sp.Expr) -> sp.Expr:
        """Replace defined functions (d(u) = u^k etc.) by their definitions"""
        if not self.definitions:
            return expr
        return substitute(expr, self.definition_bindings(), self.ctx, normal=False)

    def resolved(self) -> "BvpSpec":
        return replace(
            self,
            equations=tuple(self.resolve(e) for e in self.equations),
            finite_bcs=tuple(FiniteBoundaryCondition(b.locus, self.resolve(b.relation)) for b in self.finite_bcs),
            infinity_bcs=tuple(InfinityCondition(c.direction, self.resolve(c.relation)) for c in self.infinity_bcs),
            variants={k: tuple(InfinityCondition(c.direction, self.resolve(c.relation)) for c in v)
                      for k, v in self.variants.items()},
            definitions={},
        )

    def with_variant(self, variant: Optional[str]) -> "BvpSpec":
        """Swap in an alternative set of infinity conditions ('gradient' is the declared one)"""
        if variant in (None, "gradient", "default"):
            return self
        if variant not in self.variants:
            raise UnsupportedError(f"{self.name}: no infinity-condition variant '{variant}'")
        return replace(self, infinity_bcs=self.variants[variant])

    def with_parameters(self, **values) -> "BvpSpec":
        """Fix parameters to numbers (k=-2); operators that stop making sense are dropped"""
        if not values:
            return self
        ctx = self.ctx
        fixed = {}
        for name, value in values.items():
            if name not in ctx.parameters:
                raise ConstructionError(f"'{name}' is not a parameter of {self.name}")
            number = sp.nsimplify(value)
            for a in ctx.assumptions_for(name):
                if not a.holds(float(number)):
                    raise ConstructionError(f"{name} = {dsl_str(number)} violates 'assume {a.text()}'")
            fixed[name] = number

        new_ctx = VariableContext(
            independents=ctx.independents, dependent=ctx.dependent,
            parameters=[p for p in ctx.parameters if p not in fixed],
            functions=dict(ctx.functions),
            assumptions=[a for a in ctx.assumptions if a.target not in fixed],
            rules=list(ctx.rules), positive=ctx.positive_names - set(fixed), time=ctx.time,
            positive_dependent=ctx.dependent_positive)
        mapping = {ctx.symbol(n): v for n, v in fixed.items()}

        def bind(e):
            return new_ctx.rebind(sp.sympify(e).subs(mapping))

        operators = {}
        for name, X in self.operators.items():
            Y = X.subs(mapping)
            coefficients = (Y.xi0, *Y.xi, Y.eta)
            if any(sp.sympify(c).has(sp.zoo, sp.nan, sp.oo, -sp.oo) for c in coefficients):
                logger.warning(f"⚠️ dropping operator {name}: undefined at {values}")
                continue
            Y = VectorField(bind(Y.xi0), tuple(bind(c) for c in Y.xi), bind(Y.eta), Y.conditional, Y.name)
            if Y.is_zero():
                logger.warning(f"⚠️ dropping operator {name}: vanishes at {values}")
                continue
            operators[name] = Y

        label = ",".join(f"{k}={dsl_str(v)}" for k, v in fixed.items())
        metadata = dict(self.metadata)
        metadata["name"] = f"{self.name}[{label}]"
        return replace(
            self,
            ctx=new_ctx,
            equations=tuple(bind(e) for e in self.equations),
            finite_bcs=tuple(FiniteBoundaryCondition(bind(b.locus), bind(b.relation)) for b in self.finite_bcs),
            infinity_bcs=tuple(InfinityCondition(bind(c.direction), bind(c.relation)) for c in self.infinity_bcs),
            variants={k: tuple(InfinityCondition(bind(c.direction), bind(c.relation)) for c in v)
                      for k, v in self.variants.items()},
            definitions={k: (bind(app), bind(value)) for k, (app, value) in self.definitions.items()},
            name=metadata["name"],
            metadata=metadata,
            operators=operators,
            transforms={},
        )


def _evolution_rhs(residual: sp.Expr, ctx: VariableContext) -> Optional[sp.Expr]:
    ut = ctx.jet((ctx.time,))
    expanded = sp.expand(residual)
    c = expanded.coeff(ut)
    if c == 0 or c.free_symbols:
        return None
    rest = expanded - c * ut
    if ctx.time_order(rest) > 0:
        return None
    return sp.expand(-rest / c)


@dataclass
class Document:
    ctx: VariableContext
    bvp: Optional[BvpSpec] = None
    operators: Dict[str, VectorField] = field(default_factory=dict)
    transforms: Dict[str, ChangeOfVariables] = field(default_factory=dict)
    metadata: Dict[str, str] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Expression grammar
# ---------------------------------------------------------------------------

class ExpressionParser:
    """
    Infix grammar built on pyparsing:

        expr   :: term [ ('+' | '-') term ]*
        term   :: unary [ ('*' | '/') unary ]*
        unary  :: ('+' | '-') unary | power
        power  :: atom [ '^' unary ]
        atom   :: d/dv | number | name '(' expr [, expr]* ')' | jet | name | '(' expr ')'

    One grammar per instance, so parsers never share state.
    """

    def __init__(self, ctx: VariableContext, allow_basis: bool = False):
        self.ctx = ctx
        self.allow_basis = allow_basis
        self.basis: Dict[str, sp.Symbol] = {}
        self._line = 0
        self._offset = 0
        self.grammar = self._build()

    def _error(self, message: str, loc: int) -> ParseError:
        return ParseError(message, self._line, self._offset + loc + 1)

    def _build(self):
        lpar, rpar = pp.Suppress("("), pp.Suppress(")")
        expr = pp.Forward()
        unary = pp.Forward()

        number = pp.Regex(r"\d+(\.\d*)?([eE][-+]?\d+)?")
        number.set_parse_action(lambda s, loc, toks: sp.Rational(toks[0]))

        basis = pp.Regex(r"d/d[A-Za-z][A-Za-z0-9]*")
        basis.set_parse_action(self._on_basis)

        jet = pp.Regex(r"[A-Za-z][A-Za-z0-9]*_(\{[A-Za-z0-9 ]+\}|[A-Za-z][A-Za-z0-9]*)")
        jet.set_parse_action(self._on_jet)

        fname = pp.Regex(r"[A-Za-z][A-Za-z0-9]*")
        call = fname + lpar + pp.Group(pp.delimited_list(expr)) + rpar
        call.set_parse_action(self._on_call)

        ident = pp.Regex(r"[A-Za-z][A-Za-z0-9]*")
        ident.set_parse_action(self._on_ident)

        atom = basis | number | call | jet | ident | (lpar + expr + rpar)

        power = atom + pp.Optional(pp.Suppress("^") + unary)
        power.set_parse_action(lambda toks: toks[0] ** toks[1] if len(toks) == 2 else toks[0])

        unary <<= (pp.one_of("+ -") + unary) | power
        unary.set_parse_action(lambda toks: -toks[1] if len(toks) == 2 and toks[0] == "-"
                               else (toks[1] if len(toks) == 2 else toks[0]))

        term = unary + pp.ZeroOrMore(pp.one_of("* /") + unary)
        term.set_parse_action(self._fold)
        expr <<= term + pp.ZeroOrMore(pp.one_of("+ -") + term)
        expr.set_parse_action(self._fold)
        return expr

    @staticmethod
    def _fold(toks):
        value = toks[0]
        for op, rhs in zip(toks[1::2], toks[2::2]):
            if op == "+":
                value = value + rhs
            elif op == "-":
                value = value - rhs
            elif op == "*":
                value = value * rhs
            else:
                value = value / rhs
        return value

    def _on_basis(self, s, loc, toks):
        var = toks[0][3:]
        if not self.allow_basis:
            raise self._error(f"'d/d{var}' is only allowed in operator definitions", loc)
        if var not in self.ctx.independents and var != self.ctx.dependent:
            raise self._error(f"unknown coordinate '{var}'", loc)
        if var not in self.basis:
            self.basis[var] = sp.Symbol(f"__basis_{var}", commutative=True)
        return self.basis[var]

    def _on_jet(self, s, loc, toks):
        name = toks[0]
        index = self.ctx.parse_jet_name(name)
        if index is None:
            raise self._error(f"unknown symbol '{name}'", loc)
        return self.ctx.jet(index)

    def _on_ident(self, s, loc, toks):
        name = toks[0]
        if name == "pi":
            return sp.pi
        if name == "E":
            return sp.E
        if name == "inf":
            return sp.oo
        if name == "I":
            return sp.I
        if not self.ctx.is_registered(name):
            raise self._error(f"unknown symbol '{name}'", loc)
        return self.ctx.symbol(name)

    def _on_call(self, s, loc, toks):
        name, args = toks[0], list(toks[1])
        try:
            if name == "D":
                return self._total(args, loc)
            if name == "diff":
                if len(args) < 2:
                    raise self._error("diff needs an expression and a variable", loc)
                return sp.diff(args[0], *args[1:])
            if name == "subs":
                if len(args) < 3 or len(args) % 2 == 0:
                    raise self._error("subs needs an expression and variable/value pairs", loc)
                return sp.Subs(args[0], tuple(args[1::2]), tuple(args[2::2]))
            if name in BUILTIN_FUNCTIONS:
                return BUILTIN_FUNCTIONS[name](*args)
            if name not in self.ctx.functions:
                raise self._error(f"unknown function '{name}'", loc)
            expected = len(self.ctx.functions[name])
            if len(args) != expected:
                raise self._error(f"arity mismatch: '{name}' takes {expected} argument(s), got {len(args)}", loc)
            return self.ctx.apply(name, *args)
        except ConstructionError as exc:
            raise self._error(str(exc), loc)
        except TypeError as exc:
            raise self._error(f"bad call to '{name}': {exc}", loc)

    def _total(self, args, loc):
        if len(args) not in (2, 3) or not isinstance(args[1], sp.Symbol):
            raise self._error("D needs an expression, a variable and an optional count", loc)
        count = int(args[2]) if len(args) == 3 else 1
        value = args[0]
        for _ in range(count):
            value = total_derivative(value, args[1].name, self.ctx)
        return value

    def parse(self, text: str, line: int = 0, offset: int = 0) -> sp.Expr:
        self._line, self._offset = line, offset
        try:
            result = self.grammar.parse_string(text, parse_all=True)
        except pp.ParseBaseException as exc:
            raise ParseError(f"syntax error: {exc.msg}", line, offset + exc.loc + 1)
        return sp.sympify(result[0])


def parse_expression(text: str, ctx: VariableContext) -> sp.Expr:
    return ExpressionParser(ctx).parse(text)


def parse_field(text: str, ctx: VariableContext, name: str = "X", conditional: bool = False,
                line: int = 0, offset: int = 0) -> VectorField:
    """'2*t*d/dt + x1*d/dx1' -> VectorField"""
    parser = ExpressionParser(ctx, allow_basis=True)
    expr = sp.expand(parser.parse(text, line, offset))
    coefficients = {}
    rest = expr
    for var, sym in parser.basis.items():
        c = expr.coeff(sym)
        coefficients[var] = c
        rest -= c * sym
    rest = sp.expand(rest)
    if rest != 0:
        raise ParseError(f"operator term without d/d...: '{dsl_str(rest)}'", line, offset + 1)
    try:
        return VectorField.from_coefficients(ctx, coefficients, conditional=conditional, name=name)
    except ConstructionError as exc:
        raise ParseError(str(exc), line, offset + 1)


# ---------------------------------------------------------------------------
# Document parser
# ---------------------------------------------------------------------------

_STANZA = re.compile(r"^(?P<key>[A-Za-z_]+)\s*:\s*(?P<body>.*)$")
_OPERATOR = re.compile(r"^operator\s+(?P<name>[^\s:(]+)\s*(\((?P<flag>[a-z]+)\))?\s*:\s*(?P<body>.*)$")
_BARE_FIELD = re.compile(r"^(?P<name>[A-Za-z][A-Za-z0-9_+\-]*)\s*=\s*(?P<body>.*)$")
_TRANSFORM = re.compile(r"^transform\s+(?P<name>[^\s:]+)\s*:\s*(?P<body>.*)$")
_VARIANT = re.compile(r"^variant\s+(?P<name>[A-Za-z]+)\s*:\s*(?P<body>.*)$")
_DEFINE = re.compile(r"^define\s+(?P<lhs>[^=]+)=(?P<rhs>.*)$")
_ASSUME = re.compile(r"^assume\s+(?P<body>.*)$")
_CMP = re.compile(r"^(?P<target>[A-Za-z][A-Za-z0-9]*)\s*(?P<op>!=|>=|<=|>|<)\s*(?P<value>.+)$")
_IN = re.compile(r"^(?P<target>[A-Za-z][A-Za-z0-9]*)\s+in\s+\((?P<lo>[^,]+),(?P<hi>[^)]+)\)$")
_NONZERO = re.compile(r"^nonzero\s+(?P<target>.+)$")
_REAL = re.compile(r"^(?P<target>[A-Za-z][A-Za-z0-9]*)\s+real$")


def _split_top(text: str, sep: str) -> List[str]:
    """Split on sep outside parentheses and braces"""
    parts, depth, current = [], 0, []
    for ch in text:
        if ch in "({":
            depth += 1
        elif ch in ")}":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    parts.append("".join(current))
    return parts


def _col(line_text: str, fragment: str) -> int:
    idx = line_text.find(fragment.strip())
    return max(idx, 0)


def _number(text: str) -> sp.Expr:
    text = text.strip()
    if text in ("inf", "+inf"):
        return sp.oo
    if text == "-inf":
        return -sp.oo
    return sp.nsimplify(sp.Rational(text)) if re.fullmatch(r"-?\d+(\.\d*)?([eE][-+]?\d+)?", text) \
        else sp.sympify(text.replace("^", "**"), rational=True)


def _parse_assumption(body: str, line: int, col: int) -> Assumption:
    body = body.strip()
    try:
        m = _NONZERO.match(body)
        if m:
            return Assumption(re.sub(r"\s+", "", m.group("target")), "nonzero")
        m = _REAL.match(body)
        if m:
            return Assumption(m.group("target"), "real")
        m = _IN.match(body)
        if m:
            return Assumption(m.group("target"), "in", (_number(m.group("lo")), _number(m.group("hi"))))
        m = _CMP.match(body)
        if m:
            return Assumption(m.group("target"), m.group("op"), _number(m.group("value")))
    except (TypeError, ValueError, sp.SympifyError) as exc:
        raise ParseError(f"bad assumption value: {exc}", line, col + 1)
    raise ParseError(f"cannot read assumption '{body}'", line, col + 1)


def _parse_function_decl(body: str, line: int, col: int) -> List[Tuple[str, Tuple[str, ...]]]:
    decls = []
    for part in _split_top(body, ","):
        m = re.fullmatch(r"\s*([A-Za-z][A-Za-z0-9]*)\s*\(([^)]*)\)\s*", part)
        if not m:
            raise ParseError(f"bad function declaration '{part.strip()}'", line, col + 1)
        args = tuple(a.strip() for a in m.group(2).split(",") if a.strip())
        decls.append((m.group(1), args))
    return decls


class DocumentParser:
    """Two passes: declarations build the VariableContext, then expressions are read against it"""

    def __init__(self, path: Optional[str] = None):
        self.path = path

    def parse(self, source: str) -> Document:
        try:
            return self._parse(source)
        except ParseError as exc:
            exc.path = self.path
            raise

    def _parse(self, source: str) -> Document:
        lines = []
        for number, raw in enumerate(source.splitlines(), start=1):
            text = raw.split("#", 1)[0].rstrip()
            if text.strip():
                lines.append((number, text))

        # pass 1: declarations
        independents, dependent = DEFAULT_INDEPENDENTS, "u"
        parameters, functions, assumption_lines, metadata = [], [], [], {}
        expression_lines = []
        for number, text in lines:
            stripped = text.strip()
            m = _STANZA.match(stripped)
            key = m.group("key") if m else None
            if key == "independent":
                independents = tuple(v.strip() for v in m.group("body").split(",") if v.strip())
            elif key == "dependent":
                dependent = m.group("body").strip()
            elif key == "parameters":
                parameters += [p.strip() for p in m.group("body").split(",") if p.strip()]
            elif key == "function":
                functions += _parse_function_decl(m.group("body"), number, _col(text, m.group("body")))
            elif key in METADATA_KEYS:
                metadata[key] = m.group("body").strip()
            elif _ASSUME.match(stripped):
                assumption_lines.append((number, text, _ASSUME.match(stripped).group("body")))
            else:
                expression_lines.append((number, text))

        try:
            ctx = VariableContext(independents=independents, dependent=dependent, parameters=parameters,
                                  functions=dict(functions),
                                  time="t" if "t" in independents else None)
        except ConstructionError as exc:
            raise ParseError(str(exc), 1, 1)
        for number, text, body in assumption_lines:
            assumption = _parse_assumption(body, number, _col(text, body))
            if assumption.relation != "nonzero" and not ctx.is_registered(assumption.target):
                raise ParseError(f"assumption on unknown symbol '{assumption.target}'", number,
                                 _col(text, assumption.target) + 1)
            ctx.add_assumption(assumption)

        # pass 2: expressions; rules first so equations see every declaration
        doc = Document(ctx=ctx, metadata=metadata)
        equations, finite, infinity, definitions = [], [], [], {}
        variants: Dict[str, List[InfinityCondition]] = {}
        located: List[Tuple[int, sp.Expr]] = []
        for number, text in expression_lines:
            if _STANZA.match(text.strip()) and _STANZA.match(text.strip()).group("key") == "rule":
                self._parse_rule(ctx, number, text)
        parser = ExpressionParser(ctx)
        for number, text in expression_lines:
            stripped = text.strip()
            m = _STANZA.match(stripped)
            key = m.group("key") if m else None
            if key == "rule":
                continue
            if key == "equation":
                equations.append(self._parse_equation(parser, ctx, number, text, m.group("body")))
            elif key == "bc":
                finite.append(self._parse_bc(parser, number, text, m.group("body")))
                located.append((number, finite[-1].relation))
            elif key == "bc_inf":
                infinity.append(self._parse_bc_inf(parser, number, text, m.group("body")))
                located.append((number, infinity[-1].relation))
            elif _VARIANT.match(stripped):
                vm = _VARIANT.match(stripped)
                variants.setdefault(vm.group("name"), []).append(
                    self._parse_bc_inf(parser, number, text, vm.group("body")))
                located.append((number, variants[vm.group("name")][-1].relation))
            elif _DEFINE.match(stripped):
                dm = _DEFINE.match(stripped)
                fname, value = self._parse_define(parser, ctx, number, text, dm.group("lhs"), dm.group("rhs"))
                definitions[fname] = value
            elif _OPERATOR.match(stripped):
                om = _OPERATOR.match(stripped)
                conditional = om.group("flag") == "conditional"
                doc.operators[om.group("name")] = parse_field(
                    om.group("body"), ctx, om.group("name"), conditional, number, _col(text, om.group("body")))
            elif _TRANSFORM.match(stripped):
                tm = _TRANSFORM.match(stripped)
                doc.transforms[tm.group("name")] = self._parse_transform(ctx, number, text, tm.group("name"),
                                                                          tm.group("body"))
            elif _BARE_FIELD.match(stripped):
                fm = _BARE_FIELD.match(stripped)
                doc.operators[fm.group("name")] = parse_field(
                    fm.group("body"), ctx, fm.group("name"), False, number, _col(text, fm.group("body")))
            else:
                raise ParseError(f"unknown stanza '{stripped.split()[0]}'", number, _col(text, stripped) + 1)

        if equations:
            order = max(ctx.spatial_order(e) for e in equations)
            for number, relation in located:
                k_a = ctx.spatial_order(relation)
                if k_a >= order:
                    raise ParseError(f"boundary relation order {k_a} must be below the equation order {order}",
                                     number, 1)
            doc.bvp = BvpSpec(
                ctx=ctx,
                equations=tuple(equations),
                finite_bcs=tuple(finite),
                infinity_bcs=tuple(infinity),
                definitions=definitions,
                name=metadata.get("name", "bvp"),
                metadata=metadata,
                operators=doc.operators,
                transforms=doc.transforms,
                variants={k: tuple(v) for k, v in variants.items()},
            )
        elif finite or infinity or definitions:
            raise ParseError("boundary conditions without an equation", lines[0][0] if lines else 0, 1)
        return doc

    # -- stanzas -----------------------------------------------------------

    def _parse_rule(self, ctx, number, text):
        body = _STANZA.match(text.strip()).group("body")
        parts = _split_top(body, "=")
        if len(parts) != 2:
            raise ParseError("rule needs 'lhs = rhs'", number, _col(text, body) + 1)
        parser = ExpressionParser(ctx)
        lhs = parser.parse(parts[0].strip(), number, _col(text, parts[0]))
        rhs = parser.parse(parts[1].strip(), number, _col(text, parts[1]))
        if not isinstance(lhs, sp.Derivative) or not isinstance(lhs.expr, AppliedUndef):
            raise ParseError("rule left-hand side must be a derivative of a declared function",
                             number, _col(text, parts[0]) + 1)
        ctx.add_rule(DerivativeRule(lhs, rhs))

    def _parse_equation(self, parser, ctx, number, text, body) -> sp.Expr:
        parts = _split_top(body, "=")
        if len(parts) != 2:
            raise ParseError("equation needs exactly one '='", number, _col(text, body) + 1)
        lhs = parser.parse(parts[0].strip(), number, _col(text, parts[0]))
        rhs = parser.parse(parts[1].strip(), number, _col(text, parts[1]))
        residual = lhs - rhs
        if ctx.time and _evolution_rhs(residual, ctx) is None:
            raise ParseError(f"governing equation must be of evolution form {ctx.jet_name((ctx.time,))} = F",
                             number, _col(text, body) + 1)
        if ctx.time and ctx.space and ctx.spatial_order(residual) < 2:
            raise ParseError("governing equation must be at least second order in space",
                             number, _col(text, body) + 1)
        return residual

    def _parse_bc(self, parser, number, text, body) -> FiniteBoundaryCondition:
        pieces = _split_top(body, ":")
        if len(pieces) != 2:
            raise ParseError("bc needs 'locus : relation'", number, _col(text, body) + 1)
        locus = self._parse_relation(parser, number, text, pieces[0])
        if parser.ctx.dependent_atoms(locus):
            raise ParseError("boundary locus must not depend on u", number, _col(text, pieces[0]) + 1)
        relation = self._parse_relation(parser, number, text, pieces[1])
        return FiniteBoundaryCondition(locus, relation)

    def _parse_bc_inf(self, parser, number, text, body) -> InfinityCondition:
        pieces = _split_top(body, ":")
        if len(pieces) != 2 or "->" not in pieces[0]:
            raise ParseError("bc_inf needs 'direction -> inf : relation'", number, _col(text, body) + 1)
        direction_text, target = pieces[0].split("->", 1)
        if target.strip() not in ("inf", "+inf"):
            raise ParseError("infinity conditions must use '-> inf'", number, _col(text, target) + 1)
        direction = parser.parse(direction_text.strip(), number, _col(text, direction_text))
        if parser.ctx.dependent_atoms(direction):
            raise ParseError("infinity direction must not depend on u", number, _col(text, direction_text) + 1)
        relation = self._parse_relation(parser, number, text, pieces[1])
        return InfinityCondition(direction, relation)

    def _parse_relation(self, parser, number, text, fragment) -> sp.Expr:
        parts = _split_top(fragment, "=")
        if len(parts) != 2:
            raise ParseError("relation needs 'lhs = rhs'", number, _col(text, fragment) + 1)
        lhs = parser.parse(parts[0].strip(), number, _col(text, parts[0]))
        rhs = parser.parse(parts[1].strip(), number, _col(text, parts[1]))
        return lhs - rhs

    def _parse_define(self, parser, ctx, number, text, lhs_text, rhs_text):
        lhs = parser.parse(lhs_text.strip(), number, _col(text, lhs_text))
        if not isinstance(lhs, AppliedUndef):
            raise ParseError("define needs a declared function on the left", number, _col(text, lhs_text) + 1)
        name = lhs.func.__name__
        if lhs != ctx.declared_application(name):
            raise ParseError(f"define {name} with its declared arguments", number, _col(text, lhs_text) + 1)
        rhs = parser.parse(rhs_text.strip(), number, _col(text, rhs_text))
        return name, (lhs, rhs)

    def _parse_transform(self, ctx: VariableContext, number, text, name, body) -> ChangeOfVariables:
        sections = [s.strip() for s in _split_top(body, ";")]
        forward_text = sections[0]
        inverse_text, domain_text = None, ""
        for section in sections[1:]:
            key, _, rest = section.partition(":")
            if key.strip() == "inverse":
                inverse_text = rest
            elif key.strip() == "domain":
                domain_text = rest
            else:
                raise ParseError(f"unknown transform section '{key.strip()}'", number, _col(text, section) + 1)
        if inverse_text is None:
            raise ParseError("transform needs an inverse section", number, _col(text, body) + 1)

        domain = tuple(_parse_assumption(d, number, _col(text, d))
                       for d in _split_top(domain_text, ",") if d.strip())
        positive = {a.target for a in domain if a.implies_positive}
        old_ctx = ctx.derive(positive=positive, time=ctx.time)
        for a in domain:
            old_ctx.add_assumption(a)

        old_parser = ExpressionParser(old_ctx)
        forward: Dict[str, sp.Expr] = {}
        for item in _split_top(forward_text, ","):
            lhs, _, rhs = item.partition("=")
            if not rhs.strip():
                raise ParseError("map needs 'new = expression'", number, _col(text, item) + 1)
            forward[lhs.strip()] = old_parser.parse(rhs.strip(), number, _col(text, rhs))
        expected = len(ctx.independents) + 1
        if len(forward) != expected:
            raise ParseError(f"transform needs {expected} forward maps", number, _col(text, forward_text) + 1)

        names = list(forward)
        new_time = names[0] if ctx.time else None
        new_positive = {n for n, e in forward.items() if e.is_positive}
        new_ctx = ctx.derive(independents=names[:-1], dependent=names[-1], positive=new_positive, time=new_time)

        new_parser = ExpressionParser(new_ctx)
        inverse: Dict[str, sp.Expr] = {}
        for item in _split_top(inverse_text, ","):
            lhs, _, rhs = item.partition("=")
            if lhs.strip() not in ctx.independents and lhs.strip() != ctx.dependent:
                raise ParseError(f"inverse map for unknown variable '{lhs.strip()}'", number, _col(text, item) + 1)
            inverse[lhs.strip()] = new_parser.parse(rhs.strip(), number, _col(text, rhs))
        if len(inverse) != expected:
            raise ParseError(f"transform needs {expected} inverse maps", number, _col(text, inverse_text) + 1)
        return ChangeOfVariables(name, old_ctx, new_ctx, forward, inverse, domain)


# ---------------------------------------------------------------------------
# Public surface
# ---------------------------------------------------------------------------

def parse_document(source: str, path: Optional[str] = None) -> Document:
    return DocumentParser(path).parse(source)


def parse(source: str, path: Optional[str] = None) -> Union[BvpSpec, VectorField, ChangeOfVariables]:
    """The main object of a document: the BVP, else its single operator, else its transform"""
    return primary_object(parse_document(source, path), path)


def primary_object(doc: Document, path: Optional[str] = None):
    if doc.bvp is not None:
        return doc.bvp
    if doc.operators:
        return next(iter(doc.operators.values()))
    if doc.transforms:
        return next(iter(doc.transforms.values()))
    raise ParseError("document defines nothing", 1, 1, path)


def load_document(path: Union[str, Path]) -> Document:
    path = Path(path)
    try:
        source = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise BvpSymError(f"cannot read {path}: {exc}")
    logger.info(f"📄 Reading {path.name}")
    return parse_document(source, str(path))


def load(path: Union[str, Path]):
    return primary_object(load_document(path), str(path))


def _header(ctx: VariableContext, default_ok: bool = False) -> List[str]:
    if default_ok and ctx.independents == DEFAULT_INDEPENDENTS and ctx.dependent == "u" \
            and not ctx.parameters and not ctx.functions and not ctx.declared_assumptions:
        return []
    out = [f"independent: {', '.join(ctx.independents)}", f"dependent: {ctx.dependent}"]
    if ctx.parameters:
        out.append(f"parameters: {', '.join(ctx.parameters)}")
    if ctx.functions:
        out.append("function: " + ", ".join(f"{n}({', '.join(a)})" for n, a in ctx.functions.items()))
    out += [f"assume {a.text()}" for a in ctx.declared_assumptions]
    out += [f"rule: {dsl_str(r.lhs)} = {dsl_str(r.replacement)}" for r in ctx.rules]
    return out


def _equation_text(residual: sp.Expr, ctx: VariableContext) -> str:
    if ctx.time:
        ut = ctx.jet((ctx.time,))
        expanded = sp.expand(residual)
        if expanded.coeff(ut) == 1 and ctx.time_order(expanded - ut) == 0:
            return f"equation: {dsl_str(ut)} = {dsl_str(ut - residual)}"
    return f"equation: {dsl_str(residual)} = 0"


def serialize(obj, ctx: Optional[VariableContext] = None) -> str:
    """Deterministic canonical text; parse(serialize(x)) rebuilds x"""
    if isinstance(obj, VectorField):
        if ctx is None:
            ctx = VariableContext()
        head = _header(ctx, default_ok=True)
        flag = " (conditional)" if obj.conditional else ""
        if not head and not flag:
            return f"{obj.name} = {obj.text(ctx)}"
        return "\n".join(head + [f"operator {obj.name}{flag}: {obj.text(ctx)}"])
    if isinstance(obj, ChangeOfVariables):
        base = obj.old_ctx.derive(positive=(), time=obj.old_ctx.time)
        base.assumptions = [a for a in obj.old_ctx.assumptions if a not in obj.domain]
        return "\n".join(_header(base) + [obj.text()])
    if isinstance(obj, BvpSpec):
        ctx = obj.ctx
        out = [f"{key}: {obj.metadata[key]}" for key in METADATA_KEYS if key in obj.metadata]
        if "name" not in obj.metadata and obj.name != "bvp":
            out.insert(0, f"name: {obj.name}")
        out += _header(ctx)
        for name, (app, value) in obj.definitions.items():
            out.append(f"define {dsl_str(app)} = {dsl_str(value)}")
        out += [_equation_text(e, ctx) for e in obj.equations]
        out += [bc.text() for bc in obj.finite_bcs]
        out += [c.text() for c in obj.infinity_bcs]
        for variant, conds in obj.variants.items():
            out += [c.text(f"variant {variant}") for c in conds]
        for name, X in obj.operators.items():
            flag = " (conditional)" if X.conditional else ""
            out.append(f"operator {name}{flag}: {X.text(ctx)}")
        for tr in obj.transforms.values():
            out.append(tr.text())
        return "\n".join(out)
    if isinstance(obj, sp.Basic):
        return dsl_str(obj)
    raise ConstructionError(f"cannot serialize {type(obj).__name__}")
