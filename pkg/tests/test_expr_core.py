# tests/test_expr_core.py
import random

import pytest
import sympy as sp

from src.core.errors import ConstructionError
from src.core.expr_core import (Assumption, VariableContext, dsl_str, equivalent, is_zero, normalize,
                                proportional, substitute, total_derivative)


@pytest.fixture
def ctx():
    return VariableContext(("t", "x1", "x2"), parameters=["k"], functions={"d": ("u",)})


def test_jets_are_sorted_and_cached(ctx):
    mixed = ctx.jet(("x2", "x1"))
    assert mixed.name == "u_{x1 x2}"
    assert mixed is ctx.jet(("x1", "x2"))
    assert ctx.jet(("t",)).name == "u_t"
    assert ctx.jet_index(ctx.symbol("u_{x2 x2}")) == ("x2", "x2")
    assert ctx.jet(()) == ctx.u


def test_unregistered_symbol_is_rejected(ctx):
    with pytest.raises(ConstructionError):
        ctx.symbol("y")
    with pytest.raises(ConstructionError):
        ctx.jet(("y",))


def test_u_and_t_are_positive(ctx):
    assert ctx.u.is_positive
    assert ctx.t.is_positive
    assert ctx.symbol("x1").is_real and ctx.symbol("x1").is_positive is None


def test_total_derivative_of_flux(ctx):
    u, ux = ctx.u, ctx.jet(("x1",))
    d = ctx.declared_application("d")
    result = total_derivative(d * ux, "x1", ctx)
    expected = sp.diff(d, u) * ux ** 2 + d * ctx.jet(("x1", "x1"))
    assert equivalent(result, expected, ctx)


def test_symbolic_equality_is_authoritative(ctx):
    x1 = ctx.symbol("x1")
    verdict = equivalent((x1 ** 2 - 1) / (x1 - 1), x1 + 1, ctx)
    assert verdict and verdict.method == "symbolic"
    assert equivalent(sp.sin(x1) ** 2 + sp.cos(x1) ** 2, 1, ctx)


def test_randomized_path_finds_counterexample(ctx):
    d = ctx.declared_application("d")
    verdict = equivalent(d, d + sp.Rational(1, 10 ** 6) * ctx.u, ctx)
    assert not verdict
    assert verdict.method == "randomized"
    assert "different" in verdict.describe()


def test_equality_with_opaque_functions_is_probably_equal(ctx):
    u = ctx.u
    d = ctx.declared_application("d")
    lhs = sp.diff(d * u, u)
    rhs = d + u * sp.diff(d, u)
    assert equivalent(lhs, rhs, ctx)


def test_substitute_function_application(ctx):
    u, ux, k = ctx.u, ctx.jet(("x1",)), ctx.symbol("k")
    d = ctx.declared_application("d")
    out = substitute(d * ux, {d: u ** k}, ctx)
    assert is_zero(out - u ** k * ux, ctx)


def test_substitute_is_simultaneous(ctx):
    x1, x2 = ctx.symbols("x1", "x2")
    assert substitute(x1 - x2, {x1: x2, x2: x1}, ctx) == x2 - x1


def test_substitute_rejects_non_atoms(ctx):
    x1, x2 = ctx.symbols("x1", "x2")
    with pytest.raises(ConstructionError):
        substitute(x1 + x2, {x1 + x2: 1}, ctx)


def test_proportional(ctx):
    ux = ctx.jet(("x1",))
    x1 = ctx.symbol("x1")
    assert proportional(-3 * ux * ctx.u, ux * ctx.u, ctx)
    assert not proportional(x1 * ux, ux, ctx)


def test_normalize_collects_powers(ctx):
    u, k = ctx.u, ctx.symbol("k")
    assert normalize(u ** k * u ** (1 - k)) == u


def test_dsl_printer():
    x = sp.Symbol("x1")
    assert dsl_str(x ** 2) == "x1^2"
    assert dsl_str(sp.pi) == "pi"
    assert dsl_str(sp.Derivative(sp.Function("h")(x), x)) == "diff(h(x1), x1)"


def test_sampling_respects_assumptions():
    ctx = VariableContext(("t", "x"), parameters=["m"], assumptions=[Assumption("m", "in", (-1, 0))])
    rng = random.Random(7)
    values = [ctx.sample_value("m", rng) for _ in range(50)]
    assert all(-1 < v < 0 for v in values)


def test_positive_assumption_makes_positive_symbol():
    ctx = VariableContext(("t", "x"), parameters=["eps"], assumptions=[Assumption("eps", ">", 0)])
    assert ctx.symbol("eps").is_positive


def test_rewrite_rules_reach_fixed_point(bundled):
    ctx = bundled("section5").ctx
    x1, x2 = ctx.symbols("x1", "x2")
    h = ctx.declared_application("h")
    assert normalize(sp.diff(h, x2, 2) + sp.diff(h, x1, 2), ctx) == h ** 2


def test_dependent_positivity_is_an_assumption():
    ctx = VariableContext(("t", "x"))
    assert Assumption("u", ">", 0) in ctx.assumptions
    assert ctx.dependent_positive
    assert ctx.declared_assumptions == []
    assert sp.sqrt(ctx.u ** 2) == ctx.u


def test_sign_indefinite_dependent_is_not_simplified():
    ctx = VariableContext(("t", "x"), positive_dependent=False)
    assert not ctx.dependent_positive
    assert [a.text() for a in ctx.declared_assumptions] == ["u real"]
    assert sp.sqrt(ctx.u ** 2) != ctx.u
    assert not ctx.derive().dependent_positive
    assert ctx.derive(dependent="w").dependent_positive
