# tests/test_pde_dsl.py
import pytest
import sympy as sp
from sympy.core.function import AppliedUndef

from src.core.errors import BvpSymError, ConstructionError, ParseError, UnsupportedError
from src.core.expr_core import VariableContext, equivalent
from src.core.pde_dsl import load, parse, parse_document, parse_expression, parse_field, serialize


HALF_LINE = """\
name: half line
independent: t, x
parameters: a
assume a > 0
equation: u_t = D(u^a*u_x, x)
bc: x = 0 : u_x = 1
bc_inf: x -> inf : u = 0
"""


def test_load_bundled_problem(bundled):
    bvp = bundled("table2_case3")
    assert bvp.name == "arbitrary diffusivity, constant flux"
    assert bvp.ctx.parameters == ["q0"]
    assert set(bvp.operators) == {"X1", "T", "D"}
    assert len(bvp.finite_bcs) == 1 and len(bvp.infinity_bcs) == 1
    assert "flux" in bvp.variants
    assert bvp.metadata["expect"] == "X1, T"


def test_evolution_rhs():
    bvp = parse(HALF_LINE)
    ctx = bvp.ctx
    u, ux, uxx, a = ctx.u, ctx.jet(("x",)), ctx.jet(("x", "x")), ctx.symbol("a")
    assert bvp.is_evolution
    assert bvp.order == 2
    assert equivalent(bvp.evolution_rhs(), a * u ** (a - 1) * ux ** 2 + u ** a * uxx, ctx)


def test_definitions_resolve(bundled):
    bvp = bundled("table2_case7").resolved()
    ctx = bvp.ctx
    u, k = ctx.u, ctx.symbol("k")
    assert not bvp.definitions
    assert not any(f.func.__name__ == "d" for f in bvp.equation.atoms(AppliedUndef))
    assert bvp.finite_bcs[0].relation.has(u ** k)


def test_infix_precedence():
    ctx = VariableContext(("t", "x"))
    x = ctx.symbol("x")
    assert parse_expression("-x^2", ctx) == -x ** 2
    assert parse_expression("2^3^2", ctx) == 2 ** 9
    assert parse_expression("x/2*3", ctx) == sp.Rational(3, 2) * x
    assert parse_expression("0.5*x", ctx) == x / 2


def test_unknown_symbol_reports_location():
    source = HALF_LINE.replace("equation: u_t = D(u^a*u_x, x)", "equation: u_t = D(u^a*u_x, x) + zz")
    with pytest.raises(ParseError) as info:
        parse_document(source, "half.bvp")
    err = info.value
    assert err.line == 5
    assert err.col > 1
    assert "unknown symbol 'zz'" in str(err)
    assert str(err).startswith("half.bvp:5:")


def test_arity_mismatch():
    source = "independent: t, x\nfunction: d(u)\nequation: u_t = D(d(u, x)*u_x, x)\n"
    with pytest.raises(ParseError, match="arity"):
        parse_document(source)


def test_boundary_relation_order_is_checked():
    source = HALF_LINE.replace("bc: x = 0 : u_x = 1", "bc: x = 0 : u_{x x} = 1")
    with pytest.raises(ParseError, match="below the equation order"):
        parse_document(source)


def test_non_evolution_equation_is_rejected():
    source = "independent: t, x\nequation: u_t*u = D(u_x, x)\n"
    with pytest.raises(ParseError, match="evolution form"):
        parse_document(source)


def test_operator_basis_only_inside_operators():
    ctx = VariableContext(("t", "x"))
    with pytest.raises(ParseError):
        parse_expression("x*d/dx", ctx)
    X = parse_field("2*t*d/dt + x*d/dx", ctx, name="D")
    assert X.xi0 == 2 * ctx.t
    assert X.xi == (ctx.symbol("x"),)
    assert X.eta == 0


def test_operator_needs_basis_in_every_term():
    ctx = VariableContext(("t", "x"))
    with pytest.raises(ParseError, match="without d/d"):
        parse_field("d/dt + x", ctx)


def test_serialize_then_parse_keeps_meaning(bundled):
    bvp = bundled("power_flux")
    again = parse(serialize(bvp))
    assert again.name == bvp.name
    assert set(again.operators) == set(bvp.operators)
    assert again.ctx.parameters == bvp.ctx.parameters
    assert equivalent(again.resolved().equation, bvp.resolved().equation, bvp.ctx)


def test_transform_library(settings):
    from src.core.invariance import load_library
    library = {tr.name: tr for tr in load_library(settings)}
    assert library
    for tr in library.values():
        assert len(tr.forward) == len(tr.old_ctx.independents) + 1
        assert len(tr.inverse) == len(tr.forward)


def test_with_parameters_respects_assumptions(bundled):
    bvp = bundled("table2_case7")
    with pytest.raises(ConstructionError, match="violates"):
        bvp.with_parameters(k=-2)
    fixed = bvp.with_parameters(k=-1)
    assert "k" not in fixed.ctx.parameters
    assert fixed.name.endswith("[k=-1]")


def test_with_variant(bundled):
    bvp = bundled("table2_case3")
    flux = bvp.with_variant("flux")
    assert flux.infinity_bcs != bvp.infinity_bcs
    assert bvp.with_variant("gradient") is bvp
    with pytest.raises(UnsupportedError):
        bvp.with_variant("robin")


def test_missing_file_is_a_toolkit_error(tmp_path):
    with pytest.raises(BvpSymError):
        load(tmp_path / "absent.bvp")


def test_real_dependent_survives_serialization():
    bvp = parse(HALF_LINE.replace("assume a > 0", "assume a > 0\nassume u real"))
    assert not bvp.ctx.dependent_positive
    assert not bvp.ctx.u.is_positive
    text = serialize(bvp)
    assert "assume u real" in text
    assert not parse(text).ctx.dependent_positive
    assert "assume u" not in serialize(parse(HALF_LINE))
