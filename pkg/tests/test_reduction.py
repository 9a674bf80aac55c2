# tests/test_reduction.py
import pytest
import sympy as sp

from src.core.errors import ConstructionError, UnsupportedError
from src.core.expr_core import VariableContext, equivalent, proportional, total_derivative
from src.core.pde_dsl import parse, parse_field
from src.core.reduction import (ELLIPTIC, PARABOLIC, ReducedProblem, invariants_of, kirchhoff_linearize,
                                laplacian, liouville_substitute, polar_ansatz, reduce_bvp)


def divergence(coefficient, ctx):
    return sum((total_derivative(coefficient * ctx.jet((a,)), a, ctx) for a in ctx.space), sp.S.Zero)


def test_time_translation_gives_stationary_problem(bundled, settings):
    bvp = bundled("power_flux")
    reduced = reduce_bvp(bvp.operators["T"], bvp, settings=settings)
    ctx = reduced.ctx
    phi, k, q0 = ctx.u, ctx.symbol("k"), ctx.symbol("q0")
    assert reduced.tag == ELLIPTIC
    assert ctx.independents == ("x1", "x2") and ctx.dependent == "phi"
    assert len(reduced.equations) == 1
    assert proportional(reduced.equations[0], divergence(phi ** k, ctx), ctx)
    (bc,) = reduced.finite_bcs
    assert bc.locus == ctx.symbol("x2")
    assert proportional(bc.relation, phi ** k * ctx.jet(("x2",)) - q0, ctx)
    assert len(reduced.infinity_bcs) == 1


def test_boundary_translation_keeps_time(bundled, settings):
    bvp = bundled("power_flux")
    reduced = reduce_bvp(bvp.operators["X1"], bvp, settings=settings)
    ctx = reduced.ctx
    phi, k = ctx.u, ctx.symbol("k")
    assert reduced.tag == PARABOLIC
    assert ctx.independents == ("t", "x2")
    expected = ctx.jet(("t",)) - total_derivative(phi ** k * ctx.jet(("x2",)), "x2", ctx)
    assert equivalent(reduced.equations[0], expected, ctx)


def test_scaling_ansatz_is_invariant(bundled, settings):
    bvp = bundled("power_flux").resolved()
    ansatz = invariants_of(bvp.operators["Dk0"], bvp.ctx)
    assert ansatz.check(settings) == []
    assert set(ansatz.invariants) == {"omega1", "omega2"}
    assert ansatz.extra == bvp.ctx.t


def test_ansatz_names_can_be_chosen(bundled):
    bvp = bundled("power_flux").resolved()
    ansatz = invariants_of(bvp.operators["Dk0"], bvp.ctx, names={"x1": "y1", "x2": "y2"}, dependent="w")
    assert ansatz.ctx.independents == ("y1", "y2")
    assert ansatz.ctx.dependent == "w"


def test_dependent_name_must_be_fresh(bundled):
    bvp = bundled("power_flux").resolved()
    with pytest.raises(ConstructionError):
        invariants_of(bvp.operators["T"], bvp.ctx, dependent="q0")


def test_characteristics_outside_supported_families():
    ctx = VariableContext(("t", "x"))
    X = parse_field("x^2*d/dx", ctx)
    with pytest.raises(UnsupportedError, match="integrate by hand"):
        invariants_of(X, ctx)
    with pytest.raises(UnsupportedError):
        invariants_of(parse_field("u*d/du", ctx), ctx)


def test_polar_ansatz(bundled, settings):
    bvp = bundled("power_flux").resolved()
    ansatz = polar_ansatz(bvp.operators["Dratio"], bvp.ctx)
    assert ansatz.check(settings) == []
    assert ansatz.ctx.independents == ("t", "theta")
    assert len(ansatz.far_field) == 1


def test_polar_ansatz_needs_two_space_variables():
    ctx = VariableContext(("t", "x"))
    with pytest.raises(UnsupportedError):
        polar_ansatz(parse_field("-x*d/dx + u*d/du", ctx), ctx)


def test_kirchhoff_substitution(bundled, settings):
    bvp = bundled("stationary")
    reduced = kirchhoff_linearize(bvp, settings=settings)
    ctx = reduced.ctx
    assert reduced.tag == ELLIPTIC and ctx.dependent == "W"
    assert reduced.equations == (laplacian(ctx.u, ctx),)
    (bc,) = reduced.finite_bcs
    assert equivalent(bc.relation, ctx.jet(("x2",)) - ctx.symbol("q0"), ctx)
    assert equivalent(reduced.infinity_bcs[0].relation, ctx.jet(("x2",)), ctx)
    assert reduced.kirchhoff is None


SQUARE_DIFFUSIVITY = """\
independent: x1, x2
function: d(u)
define d(u) = u^2
equation: 0 = D(d(u)*u_{x1}, x1) + D(d(u)*u_{x2}, x2)
bc: x2 = 0 : d(u)*u_{x2} = 1
"""


def test_kirchhoff_with_power_diffusivity(settings):
    bvp = parse(SQUARE_DIFFUSIVITY)
    u = bvp.ctx.u
    reduced = kirchhoff_linearize(bvp, settings=settings)
    assert sp.simplify(reduced.kirchhoff - u ** 3 / 3) == 0
    assert equivalent(reduced.finite_bcs[0].relation, reduced.ctx.jet(("x2",)) - 1, reduced.ctx)


def test_kirchhoff_rejects_evolution_problems(bundled, settings):
    with pytest.raises(UnsupportedError):
        kirchhoff_linearize(bundled("power_flux"), settings=settings)


def _stationary_problem(extra=None, parameters=()):
    ctx = VariableContext(("x1", "x2"), dependent="phi", parameters=parameters)
    phi = ctx.u
    E = phi - divergence(1 / phi, ctx)
    if extra is not None:
        E += extra(ctx)
    return ReducedProblem(ctx, (E,), (), (), ELLIPTIC, name="exponential scaling")


def test_liouville_substitution(settings):
    out = liouville_substitute(_stationary_problem(), settings=settings)
    ctx = out.ctx
    psi = ctx.u
    assert ctx.dependent == "psi"
    assert out.equations == (sp.exp(psi) - laplacian(psi, ctx),)
    assert "phi = exp(psi)" in out.notes


@pytest.mark.parametrize("drift", [lambda ctx: ctx.jet(("x1",)), lambda ctx: -ctx.symbol("lam") * ctx.jet(("x1",))])
def test_liouville_substitution_needs_zero_lambda(settings, drift):
    with pytest.raises(ConstructionError, match="lambda = 0"):
        liouville_substitute(_stationary_problem(drift, parameters=["lam"]), settings=settings)


def test_liouville_substitution_rejects_other_terms(settings):
    with pytest.raises(ConstructionError, match="not Liouville"):
        liouville_substitute(_stationary_problem(lambda ctx: ctx.u ** 2), settings=settings)


def test_liouville_needs_a_stationary_problem(bundled, settings):
    bvp = bundled("power_flux")
    reduced = reduce_bvp(bvp.operators["X1"], bvp, settings=settings)
    with pytest.raises(UnsupportedError):
        liouville_substitute(reduced, settings=settings)
