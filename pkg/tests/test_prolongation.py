# tests/test_prolongation.py
import random

import pytest

from src.core.errors import ConstructionError, ParseError
from src.core.expr_core import VariableContext, equivalent, evaluate, total_derivative_multi
from src.core.pde_dsl import parse_field
from src.core.prolongation import VectorField, apply_prolonged, linear_combination, prolong


@pytest.fixture
def ctx():
    return VariableContext(("t", "x1", "x2"), parameters=["k"])


OPERATORS = [
    "2*t*d/dt + x1*d/dx1 + x2*d/dx2",
    "x1*d/dx2 - x2*d/dx1",
    "(k+2)*t*d/dt + (k+1)*(x1*d/dx1 + x2*d/dx2) + u*d/du",
    "x1/(x1^2+x2^2)*d/dx1 - x2/(x1^2+x2^2)*d/dx2 + 2*(x1^2-x2^2)/(x1^2+x2^2)^2*u*d/du",
    "t*d/dt + exp(x1)*u^2*d/du",
]


def characteristic_formula(X, index, ctx):
    """sigma_J = D_J(eta - xi^a u_a) + xi^a u_{J a}"""
    coefficients = X.base_coefficients(ctx)
    Q = X.eta - sum(c * ctx.jet((s.name,)) for s, c in coefficients.items())
    value = total_derivative_multi(Q, index, ctx)
    for s, c in coefficients.items():
        value += c * ctx.jet(tuple(index) + (s.name,))
    return value


@pytest.mark.parametrize("text", OPERATORS)
def test_recursion_matches_characteristic_form(ctx, text):
    X = parse_field(text, ctx)
    prolonged = prolong(X, 2, ctx)
    for index, sigma in prolonged.sigma.items():
        assert equivalent(sigma, characteristic_formula(X, index, ctx), ctx), index


@pytest.mark.parametrize("text", OPERATORS)
def test_random_point_agreement(ctx, text):
    X = parse_field(text, ctx)
    prolonged = prolong(X, 2, ctx)
    rng = random.Random(11)
    for index, sigma in prolonged.sigma.items():
        diff = sigma - characteristic_formula(X, index, ctx)
        symbols = sorted(diff.free_symbols, key=lambda s: s.name)
        for _ in range(100):
            point = {s: rng.uniform(0.3, 2.0) for s in symbols}
            assert abs(evaluate(diff, point)) < 1e-6


def test_scaling_coefficients_in_one_dimension():
    ctx = VariableContext(("t", "x"))
    D = parse_field("2*t*d/dt + x*d/dx", ctx)
    sigma = prolong(D, 2, ctx).sigma
    assert sigma[("t",)] == -2 * ctx.jet(("t",))
    assert sigma[("x",)] == -ctx.jet(("x",))
    assert sigma[("x", "x")] == -2 * ctx.jet(("x", "x"))


def test_apply_prolonged_checks_order(ctx):
    X = parse_field("d/dx1", ctx)
    first = prolong(X, 1, ctx)
    with pytest.raises(ConstructionError, match="order mismatch"):
        apply_prolonged(first, ctx.jet(("x1", "x1")), ctx)
    assert apply_prolonged(first, ctx.symbol("x1") * ctx.jet(("x1",)), ctx) == ctx.jet(("x1",))


def test_lie_operator_must_not_move_with_u(ctx):
    with pytest.raises(ParseError, match="independent of u"):
        parse_field("u*d/dx1", ctx)
    Q = parse_field("d/dt + u*d/dx1", ctx, conditional=True)
    assert Q.conditional and Q.depends_on_u(ctx)


def test_linear_combination(ctx):
    T = parse_field("d/dt", ctx, name="T")
    X1 = parse_field("d/dx1", ctx, name="X1")
    v = ctx.symbol("k")
    combo = linear_combination([(1, T), (v, X1)], name="T+kX1")
    assert combo.name == "T+kX1"
    assert combo.xi0 == 1 and combo.xi == (v, 0)
    with pytest.raises(ConstructionError):
        linear_combination([])


def test_invariant_surface(ctx):
    Q = parse_field("d/dt + 2*u*d/du", ctx, conditional=True)
    assert Q.invariant_surface(ctx) == ctx.jet(("t",)) - 2 * ctx.u
    assert Q.characteristic(ctx) == 2 * ctx.u - ctx.jet(("t",))


def test_zero_field():
    ctx = VariableContext(("t", "x"))
    assert VectorField.zero(ctx).is_zero()
    assert not parse_field("d/dx", ctx).is_zero()
