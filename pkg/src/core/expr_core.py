# src/core/expr_core.py
"""
Expression kernel for the symmetry toolkit.

Expressions are plain sympy trees. What this module adds on top of sympy:
  - a VariableContext that registers independent variables, the dependent
    variable, parameters, opaque functions, assumptions and rewrite rules
  - jet coordinates u, u_t, u_{x1}, u_{x1 x2} as registered symbols with
    sorted multi-indices
  - total derivatives, simultaneous substitution, a canonical normal form
  - an equality test that tries symbolic cancellation first and falls back
    to seeded random evaluation with mpmath
"""

import logging
import random
from collections import Counter
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import mpmath
import sympy as sp
from sympy.core.function import AppliedUndef
from sympy.printing.str import StrPrinter

from .errors import ConstructionError, IndeterminateError

logger = logging.getLogger(__name__)

BUILTIN_FUNCTIONS = {
    "exp": sp.exp,
    "log": sp.log,
    "sqrt": sp.sqrt,
    "sin": sp.sin,
    "cos": sp.cos,
    "tan": sp.tan,
    "atan": sp.atan,
    "sinh": sp.sinh,
    "cosh": sp.cosh,
    "tanh": sp.tanh,
    "Abs": sp.Abs,
    "re": sp.re,
    "im": sp.im,
}

MAX_NORMALIZE_PASSES = 6
MAX_REWRITE_PASSES = 25
DEFAULT_SAMPLE_RANGE = (0.3, 2.0)


# ---------------------------------------------------------------------------
# Assumptions and rewrite rules
# ---------------------------------------------------------------------------

def _bound_text(value) -> str:
    if value in (sp.oo, float("inf")):
        return "inf"
    if value in (-sp.oo, float("-inf")):
        return "-inf"
    return dsl_str(sp.nsimplify(value))


@dataclass(frozen=True)
class Assumption:
    """A declared constraint: 'k != -2', 'm in (-1, 0)', 'eps > 0', 'nonzero d(u)', 'u real'"""
    target: str
    relation: str  # one of != > < >= <= in nonzero real
    value: Any = None

    def text(self) -> str:
        if self.relation == "nonzero":
            return f"nonzero {self.target}"
        if self.relation == "real":
            return f"{self.target} real"
        if self.relation == "in":
            lo, hi = self.value
            return f"{self.target} in ({_bound_text(lo)}, {_bound_text(hi)})"
        return f"{self.target} {self.relation} {_bound_text(self.value)}"

    def holds(self, x: float) -> bool:
        if self.relation == "!=":
            return abs(x - float(self.value)) > 1e-12
        if self.relation == ">":
            return x > float(self.value)
        if self.relation == "<":
            return x < float(self.value)
        if self.relation == ">=":
            return x >= float(self.value)
        if self.relation == "<=":
            return x <= float(self.value)
        if self.relation == "in":
            lo, hi = self.value
            return float(lo) < x < float(hi)
        return True

    @property
    def implies_positive(self) -> bool:
        if self.relation in (">", ">="):
            return float(self.value) >= 0 and not (self.relation == ">=" and float(self.value) == 0)
        if self.relation == "in":
            return float(self.value[0]) >= 0
        return False


@dataclass(frozen=True)
class DerivativeRule:
    """Rewrite a derivative of an opaque function, e.g. diff(h, x2, 2) -> h^2 - diff(h, x1, 2)"""
    lhs: sp.Derivative
    replacement: sp.Expr

    @property
    def function(self) -> str:
        return self.lhs.expr.func.__name__

    @property
    def pattern(self) -> Counter:
        counts = Counter()
        for var, n in self.lhs.variable_count:
            counts[var.name] += int(n)
        return counts


# ---------------------------------------------------------------------------
# Variable context
# ---------------------------------------------------------------------------

class VariableContext:
    """
    Registry of every symbol an expression may use.

    Independent variables come first (t, x1, x2 by default), then the
    dependent variable with its jets, then parameters. Opaque functions are
    stored with their argument names. Symbols are created lazily and cached;
    t and u are positive, a parameter is positive when an assumption says
    so, every other symbol is real.
    """

    def __init__(self, independents: Sequence[str] = ("t", "x1", "x2"), dependent: str = "u",
                 parameters: Iterable[str] = (), functions: Optional[Dict[str, Sequence[str]]] = None,
                 assumptions: Iterable[Assumption] = (), rules: Iterable[DerivativeRule] = (),
                 positive: Iterable[str] = (), time: Optional[str] = "t", positive_dependent: bool = True):
        self.independents: Tuple[str, ...] = tuple(independents)
        self.dependent = dependent
        self.time = time if time in self.independents else None
        self.parameters: List[str] = []
        self.functions: Dict[str, Tuple[str, ...]] = {}
        self.assumptions: List[Assumption] = []
        self.rules: List[DerivativeRule] = []
        self.positive_names = set(positive)
        if self.time:
            self.positive_names.add(self.time)
        self.positive_names.discard(dependent)
        self._symbols: Dict[str, sp.Symbol] = {}
        self._jets: Dict[Tuple[str, ...], sp.Symbol] = {}
        self._jet_index: Dict[sp.Symbol, Tuple[str, ...]] = {}

        for name in parameters:
            self.add_parameter(name)
        self.add_assumption(Assumption(dependent, ">", 0) if positive_dependent else Assumption(dependent, "real"))
        for name, args in (functions or {}).items():
            self.add_function(name, args)
        for assumption in assumptions:
            self.add_assumption(assumption)
        for rule in rules:
            self.add_rule(rule)

    # -- registration ------------------------------------------------------

    def add_parameter(self, name: str):
        if name in self.independents or name == self.dependent:
            raise ConstructionError(f"'{name}' is already a variable")
        if name not in self.parameters:
            self.parameters.append(name)

    def add_function(self, name: str, args: Sequence[str]):
        if name in BUILTIN_FUNCTIONS:
            raise ConstructionError(f"'{name}' is a built-in function")
        self.functions[name] = tuple(args)

    def add_assumption(self, assumption: Assumption):
        if assumption.relation == "real":
            # replaces any positivity entry on the same name
            self.assumptions = [a for a in self.assumptions
                                if not (a.target == assumption.target and a.implies_positive)]
            self.positive_names.discard(assumption.target)
            if assumption.target in self._symbols and self._symbols[assumption.target].is_positive:
                logger.warning(f"⚠️ '{assumption.target}' was created positive before it was declared real")
        elif assumption.implies_positive:
            self.assumptions = [a for a in self.assumptions
                                if not (a.target == assumption.target and a.relation == "real")]
        if assumption not in self.assumptions:
            self.assumptions.append(assumption)
        if assumption.implies_positive:
            if assumption.target in self._symbols and not self._symbols[assumption.target].is_positive:
                logger.warning(f"⚠️ '{assumption.target}' was created before it was declared positive")
            self.positive_names.add(assumption.target)

    def add_rule(self, rule: DerivativeRule):
        if rule.function not in self.functions:
            raise ConstructionError(f"rule for undeclared function '{rule.function}'")
        self.rules.append(rule)

    def derive(self, independents: Optional[Sequence[str]] = None, dependent: Optional[str] = None,
               extra_parameters: Iterable[str] = (), positive: Iterable[str] = (),
               time: Optional[str] = "t", keep_rules: bool = True) -> "VariableContext":
        """A new context that inherits parameters, functions, assumptions and rules"""
        independents = tuple(independents or self.independents)
        dependent = dependent or self.dependent
        parameters = [p for p in self.parameters if p not in independents and p != dependent]
        parameters += [p for p in extra_parameters if p not in parameters]
        same_dependent = dependent == self.dependent
        return VariableContext(
            independents=independents,
            dependent=dependent,
            parameters=parameters,
            functions=dict(self.functions),
            assumptions=[a for a in self.assumptions if same_dependent or a.target != self.dependent],
            rules=list(self.rules) if keep_rules else (),
            positive=set(positive) | (self.positive_names - {self.dependent}),
            time=time,
            positive_dependent=self.dependent_positive if same_dependent else True,
        )

    # -- symbols -----------------------------------------------------------

    def is_registered(self, name: str) -> bool:
        return (name in self.independents or name == self.dependent
                or name in self.parameters or self.parse_jet_name(name) is not None)

    def symbol(self, name: str) -> sp.Symbol:
        if name in self._symbols:
            return self._symbols[name]
        index = self.parse_jet_name(name)
        if index is not None:
            return self.jet(index)
        if not self.is_registered(name):
            raise ConstructionError(f"unregistered symbol '{name}'")
        if name in self.positive_names:
            sym = sp.Symbol(name, positive=True)
        else:
            sym = sp.Symbol(name, real=True)
        self._symbols[name] = sym
        return sym

    def symbols(self, *names: str) -> Tuple[sp.Symbol, ...]:
        return tuple(self.symbol(n) for n in names)

    @property
    def u(self) -> sp.Symbol:
        return self.symbol(self.dependent)

    @property
    def t(self) -> Optional[sp.Symbol]:
        return self.symbol(self.time) if self.time else None

    @property
    def space(self) -> Tuple[str, ...]:
        return tuple(v for v in self.independents if v != self.time)

    @property
    def space_symbols(self) -> Tuple[sp.Symbol, ...]:
        return tuple(self.symbol(v) for v in self.space)

    @property
    def independent_symbols(self) -> Tuple[sp.Symbol, ...]:
        return tuple(self.symbol(v) for v in self.independents)

    @property
    def dependent_positive(self) -> bool:
        return self.dependent in self.positive_names

    @property
    def declared_assumptions(self) -> List[Assumption]:
        """Assumptions without the default 'u > 0' entry"""
        default = Assumption(self.dependent, ">", 0)
        return [a for a in self.assumptions if a != default]

    def function(self, name: str):
        if name in BUILTIN_FUNCTIONS:
            return BUILTIN_FUNCTIONS[name]
        if name not in self.functions:
            raise ConstructionError(f"unregistered function '{name}'")
        return sp.Function(name)

    def apply(self, name: str, *args) -> sp.Expr:
        if name in self.functions and len(args) != len(self.functions[name]):
            raise ConstructionError(
                f"'{name}' takes {len(self.functions[name])} argument(s), got {len(args)}")
        return self.function(name)(*args)

    def declared_application(self, name: str) -> sp.Expr:
        """d -> d(u), h -> h(x1, x2): the function applied to its declared arguments"""
        return self.apply(name, *[self.symbol(a) for a in self.functions[name]])

    # -- jets --------------------------------------------------------------

    def sort_index(self, index: Iterable[str]) -> Tuple[str, ...]:
        order = {v: i for i, v in enumerate(self.independents)}
        index = tuple(index)
        for v in index:
            if v not in order:
                raise ConstructionError(f"'{v}' is not an independent variable")
        return tuple(sorted(index, key=order.__getitem__))

    def jet_name(self, index: Tuple[str, ...]) -> str:
        if len(index) == 1 and len(index[0]) == 1:
            return f"{self.dependent}_{index[0]}"
        return f"{self.dependent}_{{{' '.join(index)}}}"

    def parse_jet_name(self, name: str) -> Optional[Tuple[str, ...]]:
        prefix = self.dependent + "_"
        if not name.startswith(prefix):
            return None
        rest = name[len(prefix):]
        if rest.startswith("{") and rest.endswith("}"):
            parts = rest[1:-1].split()
        else:
            parts = [rest]
        if not parts or any(p not in self.independents for p in parts):
            return None
        return self.sort_index(parts)

    def jet(self, index: Iterable[str]) -> sp.Symbol:
        index = self.sort_index(index)
        if not index:
            return self.u
        if index not in self._jets:
            sym = sp.Symbol(self.jet_name(index), real=True)
            self._jets[index] = sym
            self._jet_index[sym] = index
            self._symbols[sym.name] = sym
        return self._jets[index]

    def jet_index(self, sym: sp.Basic) -> Optional[Tuple[str, ...]]:
        if sym == self.u:
            return ()
        if sym in self._jet_index:
            return self._jet_index[sym]
        if isinstance(sym, sp.Symbol):
            index = self.parse_jet_name(sym.name)
            if index is not None:
                self.jet(index)
            return index
        return None

    def raise_jet(self, sym: sp.Symbol, var: str) -> sp.Symbol:
        index = self.jet_index(sym)
        if index is None:
            raise ConstructionError(f"'{sym}' is not a jet coordinate")
        return self.jet(index + (var,))

    def dependent_atoms(self, expr: sp.Basic) -> List[sp.Symbol]:
        atoms = [s for s in expr.free_symbols if self.jet_index(s) is not None]
        return sorted(atoms, key=lambda s: (len(self.jet_index(s)), s.name))

    def jet_atoms(self, expr: sp.Basic) -> List[sp.Symbol]:
        """Jets of order >= 1 (u itself excluded)"""
        return [s for s in self.dependent_atoms(expr) if s != self.u]

    def spatial_order(self, expr: sp.Basic) -> int:
        orders = [sum(1 for v in self.jet_index(s) if v != self.time) for s in self.dependent_atoms(expr)]
        return max(orders, default=0)

    def time_order(self, expr: sp.Basic) -> int:
        orders = [sum(1 for v in self.jet_index(s) if v == self.time) for s in self.dependent_atoms(expr)]
        return max(orders, default=0)

    # -- validation --------------------------------------------------------

    def check_registered(self, expr: sp.Basic):
        for sym in expr.free_symbols:
            if not self.is_registered(sym.name):
                raise ConstructionError(f"unregistered symbol '{sym.name}'")
        for app in expr.atoms(AppliedUndef):
            name = app.func.__name__
            if name not in self.functions:
                raise ConstructionError(f"unregistered function '{name}'")
            if len(app.args) != len(self.functions[name]):
                raise ConstructionError(f"arity mismatch for '{name}'")

    def rebind(self, expr: sp.Basic) -> sp.Basic:
        """Swap every free symbol for this context's symbol of the same name"""
        mapping = {}
        for sym in expr.free_symbols:
            if self.is_registered(sym.name):
                own = self.symbol(sym.name)
                if own is not sym:
                    mapping[sym] = own
        return expr.xreplace(mapping) if mapping else expr

    # -- sampling ----------------------------------------------------------

    def assumptions_for(self, name: str) -> List[Assumption]:
        return [a for a in self.assumptions if a.target == name]

    def nonvanishing(self) -> List[str]:
        return [a.target for a in self.assumptions if a.relation == "nonzero"]

    def sampling_range(self, name: str) -> Tuple[float, float]:
        lo, hi = DEFAULT_SAMPLE_RANGE
        for a in self.assumptions_for(name):
            if a.relation == "in":
                a_lo, a_hi = float(a.value[0]), float(a.value[1])
                if a_lo == float("-inf"):
                    a_lo = a_hi - 3.0
                if a_hi == float("inf"):
                    a_hi = a_lo + 3.0
                margin = 0.1 * (a_hi - a_lo)
                lo, hi = a_lo + margin, a_hi - margin
            elif a.relation in (">", ">="):
                lo = max(lo, float(a.value) + 0.1)
                hi = max(hi, lo + 1.5)
            elif a.relation in ("<", "<="):
                hi = min(hi, float(a.value) - 0.1)
                lo = min(lo, hi - 1.5)
        return lo, hi

    def sample_value(self, name: str, rng: random.Random) -> float:
        lo, hi = self.sampling_range(name)
        checks = self.assumptions_for(name)
        for _ in range(100):
            x = rng.uniform(lo, hi)
            if all(a.holds(x) and (a.relation != "!=" or abs(x - float(a.value)) > 1e-2) for a in checks):
                return x
        raise IndeterminateError(f"cannot sample '{name}' inside its assumptions")

    def copy(self) -> "VariableContext":
        return self.derive(time=self.time)

    def __repr__(self):
        return (f"VariableContext(independents={self.independents}, dependent={self.dependent!r}, "
                f"parameters={self.parameters}, functions={list(self.functions)})")


# ---------------------------------------------------------------------------
# Printing in DSL syntax
# ---------------------------------------------------------------------------

class DslPrinter(StrPrinter):
    """sympy StrPrinter that writes ^, diff(...) and subs(...) the way the DSL reads them"""

    def doprint(self, expr):
        return super().doprint(expr).replace("**", "^")

    def _print_Derivative(self, expr):
        parts = [self._print(expr.expr)]
        for var, n in expr.variable_count:
            parts.append(self._print(var))
            if n != 1:
                parts.append(str(n))
        return "diff(%s)" % ", ".join(parts)

    def _print_Subs(self, expr):
        inner, old, new = expr.args
        pairs = ", ".join(f"{self._print(o)}, {self._print(n)}" for o, n in zip(old, new))
        return f"subs({self._print(inner)}, {pairs})"

    def _print_Exp1(self, expr):
        return "E"

    def _print_Pi(self, expr):
        return "pi"

    def _print_Infinity(self, expr):
        return "inf"

    def _print_NegativeInfinity(self, expr):
        return "-inf"

    def _print_ImaginaryUnit(self, expr):
        return "I"


def dsl_str(expr) -> str:
    return DslPrinter().doprint(sp.sympify(expr))


# ---------------------------------------------------------------------------
# Core operations
# ---------------------------------------------------------------------------

def total_derivative(e: sp.Expr, v, ctx: VariableContext) -> sp.Expr:
    """D_v e with u and its jets treated as functions of the independent variables"""
    name = v if isinstance(v, str) else v.name
    if name not in ctx.independents:
        raise ConstructionError(f"'{name}' is not an independent variable")
    e = sp.sympify(e)
    ctx.check_registered(e)
    var = ctx.symbol(name)
    result = sp.diff(e, var)
    for s in ctx.dependent_atoms(e):
        result += sp.diff(e, s) * ctx.raise_jet(s, name)
    return result


def total_derivative_multi(e: sp.Expr, index: Iterable[str], ctx: VariableContext) -> sp.Expr:
    for v in index:
        e = total_derivative(e, v, ctx)
    return e


def _is_substitutable_application(key) -> bool:
    return (isinstance(key, AppliedUndef) and all(isinstance(a, sp.Symbol) for a in key.args)
            and len(set(key.args)) == len(key.args))


def substitute(e: sp.Expr, bindings: Dict[Any, Any], ctx: Optional[VariableContext] = None,
               normal: bool = True) -> sp.Expr:
    """
    Simultaneous replacement of atoms.

    Symbols and jets go through sympy subs(simultaneous=True); function
    applications like d(u) are replaced for every argument via a Lambda;
    derivative and Subs nodes are swapped structurally.
    """
    e = sp.sympify(e)
    symbol_map, node_map, function_map = {}, {}, []
    for key, value in bindings.items():
        key = sp.sympify(key)
        value = sp.sympify(value)
        if isinstance(key, sp.Symbol):
            symbol_map[key] = value
        elif isinstance(key, (sp.Derivative, sp.Subs)):
            node_map[key] = value
        elif _is_substitutable_application(key):
            function_map.append((key, value))
        else:
            raise ConstructionError(f"cannot bind non-atom '{dsl_str(key)}'")

    result = e.xreplace(node_map) if node_map else e
    for key, value in function_map:
        result = result.replace(key.func, sp.Lambda(key.args, value))
    if function_map:
        result = result.doit()
    if symbol_map:
        result = result.subs(symbol_map, simultaneous=True)
    return normalize(result, ctx) if normal else result


def cancel_exponents(e: sp.Expr) -> sp.Expr:
    def is_symbolic_power(x):
        return x.is_Pow and not x.exp.is_Number and x.exp.free_symbols

    def rebuild(p):
        exponent = sp.cancel(sp.together(p.exp))
        return p if exponent == p.exp else sp.Pow(p.base, exponent)

    return e.replace(is_symbolic_power, rebuild)


def normalize(e: sp.Expr, ctx: Optional[VariableContext] = None) -> sp.Expr:
    """Canonical polynomial-like form: expanded, like terms and like powers collected"""
    e = sp.sympify(e)
    if ctx is not None and ctx.rules:
        e = apply_rules(e, ctx)
    for _ in range(MAX_NORMALIZE_PASSES):
        previous = e
        e = cancel_exponents(e)
        e = sp.expand(e, power_exp=False, power_base=False, log=False)
        e = sp.powsimp(e, combine="exp")
        e = sp.powdenest(e)
        if e == previous:
            break
    return e


def apply_rules(e: sp.Expr, ctx: VariableContext) -> sp.Expr:
    """Rewrite derivatives of opaque functions with the context's rules until none applies"""
    if not ctx.rules:
        return e
    for _ in range(MAX_REWRITE_PASSES):
        mapping = {}
        for node in e.atoms(sp.Derivative):
            new = _rewrite_derivative(node, ctx.rules)
            if new is not None:
                mapping[node] = new
        if not mapping:
            return e
        e = e.xreplace(mapping)
    raise IndeterminateError("rewrite rules did not reach a fixed point")


def _rewrite_derivative(node: sp.Derivative, rules: Sequence[DerivativeRule]) -> Optional[sp.Expr]:
    base = node.expr
    if not isinstance(base, AppliedUndef):
        return None
    counts = Counter()
    variables = {}
    for var, n in node.variable_count:
        counts[var.name] += int(n)
        variables[var.name] = var
    for rule in rules:
        if rule.function != base.func.__name__:
            continue
        need = rule.pattern
        if any(counts[v] < n for v, n in need.items()):
            continue
        rule_base = rule.lhs.expr
        result = rule.replacement
        if rule_base.args != base.args:
            result = result.subs(dict(zip(rule_base.args, base.args)), simultaneous=True)
        for name, n in (counts - need).items():
            result = sp.diff(result, variables[name], n)
        return result
    return None


# ---------------------------------------------------------------------------
# Equality
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EqualityVerdict:
    equal: bool
    method: str  # "symbolic" or "randomized"
    trials: int = 0

    def __bool__(self):
        return self.equal

    def describe(self) -> str:
        if self.method == "symbolic":
            return "equal (symbolic)" if self.equal else "different (symbolic)"
        if self.equal:
            return f"probably-equal ({self.trials} random trials)"
        return f"different (counterexample after {self.trials} trials)"


def _symbolic_zero(diff: sp.Expr, ctx: Optional[VariableContext]) -> Optional[bool]:
    d = normalize(diff, ctx)
    if d == 0:
        return True
    if d.is_Rational:
        return False
    size = sp.count_ops(d)
    if size < 400:
        try:
            if sp.cancel(sp.together(d)) == 0:
                return True
        except (sp.PolynomialError, TypeError):
            pass
    if size < 80:
        if sp.simplify(d) == 0:
            return True
    return None


def _random_function(arity: int, rng: random.Random) -> sp.Lambda:
    """Smooth function that stays positive on the positive orthant"""
    zs = sp.symbols(f"_z0:{arity}", positive=True)

    def coef(lo, hi):
        return sp.Rational(rng.randint(int(lo * 97), int(hi * 97)), 97)

    lin = sum(coef(0.2, 1.0) * z for z in zs)
    body = coef(0.5, 1.5) + coef(0.1, 0.5) * lin + coef(0.05, 0.3) * lin ** 2 + coef(0.1, 0.4) * sp.exp(-lin)
    if arity > 1:
        body += coef(0.05, 0.2) * sp.Mul(*zs)
    return sp.Lambda(zs, body)


def instantiate_functions(exprs: Sequence[sp.Expr], rng: random.Random) -> List[sp.Expr]:
    """Replace every opaque function by one shared random smooth function"""
    apps = set()
    for e in exprs:
        apps |= sp.sympify(e).atoms(AppliedUndef)
    funcs = {}
    for app in sorted(apps, key=str):
        if app.func not in funcs:
            funcs[app.func] = _random_function(len(app.args), rng)
    out = []
    for e in exprs:
        e = sp.sympify(e)
        for func, lam in funcs.items():
            e = e.replace(func, lam)
        out.append(e.doit() if funcs else e)
    return out


def _sample_point(symbols: Sequence[sp.Symbol], ctx: Optional[VariableContext], rng: random.Random):
    values = []
    for s in symbols:
        if ctx is not None and s.name in ctx.parameters:
            values.append(ctx.sample_value(s.name, rng))
        else:
            values.append(rng.uniform(*DEFAULT_SAMPLE_RANGE))
    return values


def evaluate(expr: sp.Expr, point: Dict[sp.Symbol, float], dps: int = 30):
    """High-precision numeric value of expr at point (mpmath); raises ZeroDivisionError/ValueError on singularities"""
    symbols = sorted(expr.free_symbols, key=lambda s: s.name)
    f = sp.lambdify(symbols, expr, modules="mpmath")
    with mpmath.workdps(dps):
        value = f(*[mpmath.mpf(point[s]) for s in symbols])
        if mpmath.isnan(value) or mpmath.isinf(value):
            raise ValueError("non-finite value")
        return value


def equivalent(a, b, ctx: Optional[VariableContext] = None, seed: int = 20240611,
               samples: int = 50, tol: float = 1e-9, max_retries: Optional[int] = None) -> EqualityVerdict:
    """
    Decide a == b.

    The symbolic path is authoritative when it proves a - b = 0. Otherwise
    both sides are evaluated at `samples` random points respecting the
    assumption map, after applying rewrite rules and instantiating opaque
    functions; the answer is then probably-equal or a counterexample.
    """
    a, b = sp.sympify(a), sp.sympify(b)
    if ctx is not None and ctx.rules:
        a, b = apply_rules(a, ctx), apply_rules(b, ctx)
    verdict = _symbolic_zero(a - b, ctx)
    if verdict is not None:
        return EqualityVerdict(verdict, "symbolic")

    rng = random.Random(seed)
    fa, fb = instantiate_functions([a, b], rng)
    symbols = sorted(fa.free_symbols | fb.free_symbols, key=lambda s: s.name)
    ga = sp.lambdify(symbols, fa, modules="mpmath")
    gb = sp.lambdify(symbols, fb, modules="mpmath")

    max_retries = max_retries if max_retries is not None else 3 * samples
    trials, failures = 0, 0
    with mpmath.workdps(30):
        while trials < samples:
            values = [mpmath.mpf(v) for v in _sample_point(symbols, ctx, rng)]
            try:
                va, vb = ga(*values), gb(*values)
                if any(mpmath.isnan(x) or mpmath.isinf(x) for x in (va, vb)):
                    raise ValueError("non-finite value")
            except (ZeroDivisionError, ValueError, OverflowError, TypeError):
                failures += 1
                if failures > max_retries:
                    raise IndeterminateError(
                        "equality undecided: too many singular sample points",
                        {"trials": trials, "singular": failures, "expression": dsl_str(a - b)})
                continue
            trials += 1
            if abs(va - vb) >= tol * (1 + abs(va)):
                logger.debug(f"🔍 counterexample at {dict(zip(symbols, values))}")
                return EqualityVerdict(False, "randomized", trials)
    return EqualityVerdict(True, "randomized", trials)


def is_zero(e, ctx: Optional[VariableContext] = None, **kwargs) -> bool:
    return bool(equivalent(e, 0, ctx, **kwargs))


def proportional(a, b, ctx: Optional[VariableContext] = None, seed: int = 20240611) -> bool:
    """True when a = c*b for a nonzero constant c (free of variables and jets)"""
    a, b = sp.sympify(a), sp.sympify(b)
    if ctx is not None and ctx.rules:
        a, b = apply_rules(a, ctx), apply_rules(b, ctx)
    if is_zero(b, ctx, seed=seed):
        return is_zero(a, ctx, seed=seed)
    ratio = sp.cancel(sp.together(normalize(a, ctx) / normalize(b, ctx)))
    variables = set(ctx.independent_symbols) | set(ctx.dependent_atoms(ratio)) if ctx else set()
    if not ratio.free_symbols & variables and not ratio.atoms(AppliedUndef):
        return ratio != 0
    # pick the constant from one random point, then test a == c*b
    rng = random.Random(seed)
    fa, fb = instantiate_functions([a, b], rng)
    symbols = sorted(fa.free_symbols | fb.free_symbols, key=lambda s: s.name)
    for _ in range(20):
        point = dict(zip(symbols, _sample_point(symbols, ctx, rng)))
        try:
            vb = evaluate(fb, point)
            if abs(vb) < 1e-12:
                continue
            c = evaluate(fa, point) / vb
        except (ZeroDivisionError, ValueError, OverflowError):
            continue
        c = sp.nsimplify(float(mpmath.re(c)), rational=True, tolerance=1e-12)
        if c == 0:
            return False
        return bool(equivalent(a, c * b, ctx, seed=seed + 1))
    raise IndeterminateError("proportionality undecided")
