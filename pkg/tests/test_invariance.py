# tests/test_invariance.py
import pytest
import sympy as sp

from src.core.errors import ConstructionError, UnsupportedError
from src.core.expr_core import VariableContext, equivalent, proportional
from src.core.invariance import (CONSTRAINT, FUNCTIONAL, INVARIANT, NOT_APPLICABLE, SATISFIED, UNSUPPORTED,
                                 ConstraintSet, Constraint, candidate_transforms, check_bvp, check_definition1,
                                 check_finite_bcs, check_infinity_conditions, check_pde_conditional, check_pde_lie,
                                 determining_conditions, finite_ize, load_library, solve_locus, split_conditions)
from src.core.pde_dsl import parse_field
from src.core.prolongation import VectorField


def test_time_translation_of_arbitrary_diffusion(bundled, settings):
    bvp = bundled("table1_case1")
    verdict = check_pde_lie(bvp.operators["T"], bvp, settings=settings)
    assert verdict.status == SATISFIED


def test_rotation_of_arbitrary_diffusion(bundled, settings):
    bvp = bundled("table1_case1")
    assert check_pde_lie(bvp.operators["J12"], bvp, settings=settings).ok


def test_scaling_of_u_needs_a_condition_on_d(bundled, settings):
    bvp = bundled("table1_case1")
    verdict = check_pde_lie(bvp.operators["S"], bvp, settings=settings)
    assert verdict.status == CONSTRAINT
    assert all(c.kind == FUNCTIONAL for c in verdict.constraints)


def test_bare_residual_needs_context():
    ctx = VariableContext(("t", "x"))
    X = VectorField.from_coefficients(ctx, {"x": 1})
    residual = ctx.jet(("t",)) - ctx.jet(("x", "x"))
    with pytest.raises(ConstructionError):
        check_pde_lie(X, residual)
    assert check_pde_lie(X, residual, ctx).status == SATISFIED


def test_heat_equation_galilei_operator_is_not_a_point_symmetry_without_u_term():
    ctx = VariableContext(("t", "x"))
    residual = ctx.jet(("t",)) - ctx.jet(("x", "x"))
    bare = parse_field("2*t*d/dx", ctx)
    full = parse_field("2*t*d/dx - x*u*d/du", ctx)
    assert not check_pde_lie(bare, residual, ctx).ok
    assert check_pde_lie(full, residual, ctx).status == SATISFIED


def test_conditional_operator_without_time_component_is_unsupported():
    ctx = VariableContext(("t", "x"))
    residual = ctx.jet(("t",)) - ctx.jet(("x", "x"))
    Q = parse_field("d/dx + u*d/du", ctx, conditional=True)
    assert check_pde_conditional(Q, residual, ctx).status == UNSUPPORTED


def test_split_conditions_by_jets():
    ctx = VariableContext(("t", "x"), parameters=["k"])
    k, ux, uxx = ctx.symbol("k"), ctx.jet(("x",)), ctx.jet(("x", "x"))
    parts = split_conditions((k + 2) * ux ** 2 + (k - 1) * uxx, [ux, uxx])
    assert sorted(parts, key=str) == sorted([k + 2, k - 1], key=str)
    assert determining_conditions(sp.S.Zero, ctx) == []


def test_solve_locus():
    ctx = VariableContext(("t", "x1", "x2"))
    x1, x2 = ctx.space_symbols
    assert solve_locus(x2, ctx) == (x2, 0)
    assert solve_locus(x2 - 2 * x1, ctx) == (x2, 2 * x1)
    with pytest.raises(UnsupportedError):
        solve_locus(x1 ** 2 + x2 ** 2 - 1, ctx)


def test_tangency_fails_for_normal_translation(bundled, settings):
    bvp = bundled("table2_case3")
    ctx = bvp.ctx
    X2 = VectorField.from_coefficients(ctx, {"x2": 1}, name="X2")
    b, c, _ = check_finite_bcs(X2, bvp, settings)
    assert not b.ok


def test_full_check_constant_flux(bundled, settings):
    bvp = bundled("table2_case3")
    report = check_bvp(bvp.operators["T"], bvp, settings=settings)
    assert report.overall == INVARIANT
    assert all(report.item(letter).ok for letter in "abcdef")
    assert report.transform is not None
    assert report.manifolds


def test_scaling_breaks_constant_flux(bundled, settings):
    bvp = bundled("table2_case3")
    report = check_bvp(bvp.operators["D"], bvp, settings=settings)
    assert report.overall != INVARIANT


def test_flux_variant_at_infinity(bundled, settings):
    bvp = bundled("table2_case3")
    report = check_bvp(bvp.operators["X1"], bvp, settings=settings, variant="flux")
    assert report.overall == INVARIANT


def test_problem_without_conditions_at_infinity(bundled, settings):
    bvp = bundled("table1_case1")
    report = check_bvp(bvp.operators["D"], bvp, settings=settings)
    assert report.overall == INVARIANT
    assert report.item("d").status == NOT_APPLICABLE


def test_zero_operator_is_rejected(bundled, settings):
    bvp = bundled("table2_case3")
    with pytest.raises(ConstructionError):
        check_bvp(VectorField.zero(bvp.ctx), bvp, settings=settings)


def test_conditional_symmetry_derives_boundary_ode(bundled, settings):
    bvp = bundled("example2")
    ctx = bvp.ctx
    report = check_bvp(bvp.operators["Q"], bvp, settings=settings)
    assert report.item("a").status == SATISFIED
    assert report.passed
    phi = ctx.declared_application("phi")
    m, lam2 = ctx.symbols("m", "lam2")
    expected = sp.diff(phi, ctx.t) + m * lam2 * phi * ctx.u ** (-m - 1)
    boundary = report.item("c").constraints
    assert len(boundary) == 1 and boundary[0].kind == FUNCTIONAL
    assert proportional(boundary[0].expr, expected, ctx)


def test_conditional_symmetry_outside_exponent_range(bundled, settings):
    bvp = bundled("example2_positive_m")
    report = check_bvp(bvp.operators["Q"], bvp, settings=settings)
    assert report.overall != INVARIANT


def test_inverse_diffusivity_special_operator(bundled, settings):
    bvp = bundled("example3")
    report = check_bvp(bvp.operators["X"], bvp, settings=settings)
    assert report.overall == INVARIANT
    assert report.pushed_operator


def test_flux_constraint_separates(bundled, settings):
    bvp = bundled("section5")
    ctx = bvp.ctx
    report = check_bvp(bvp.operators["Q"], bvp, settings=settings)
    assert report.item("a").status == SATISFIED
    separated = report.constraints.separate(ctx)
    integrated = [c for c in separated if c.note == "integrated"]
    assert len(integrated) == 1
    q = ctx.declared_application("q")
    q0, q1 = ctx.symbols("q0", "q1")
    assert equivalent(integrated[0].expr, q - q0 - 2 * q1 * ctx.t, ctx)
    assert any(c.note == "separated" and c.expr.has(sp.Subs) for c in separated)


def test_constraint_set_matching():
    ctx = VariableContext(("t", "x"), parameters=["k"])
    k = ctx.symbol("k")
    constraints = ConstraintSet()
    constraints.add(Constraint(2 * k + 4, "parameter", "a"))
    constraints.add(Constraint(2 * k + 4, "parameter", "c"))
    constraints.add(Constraint(sp.S.Zero, "parameter", "c"))
    assert len(constraints) == 1
    assert constraints.matches([k + 2], ctx)
    assert not constraints.matches([k - 2], ctx)
    assert constraints.texts() == ["2*k + 4 = 0"]
    assert not constraints.contradicted
    constraints.add(Constraint(sp.Integer(3), "contradiction", "c"))
    assert constraints.contradicted


def test_transform_library_loads(settings):
    names = [tr.name for tr in load_library(settings)]
    assert len(names) == len(set(names))


def test_three_item_check_without_infinity(bundled, settings):
    bvp = bundled("table2_case3")
    items = check_definition1(bvp.operators["T"], bvp, settings)
    assert sorted(items) == ["a", "b", "c"]
    assert all(v.ok for v in items.values())
    items = check_definition1(bvp.operators["D"], bvp, settings)
    assert items["a"].ok and items["b"].ok
    assert not items["c"].ok


def test_condition_at_infinity_moves_to_the_origin(bundled, settings):
    bvp = bundled("example1")
    tr = next(t for t in candidate_transforms(bvp, None, settings) if t.name == "inversion")
    fin = finite_ize(bvp, tr, bvp.operators["D"])
    assert fin.ok, fin.problems
    [manifold] = fin.manifolds
    new = tr.new_ctx
    assert manifold.coordinate == new.symbol("y")
    assert manifold.target == 0
    assert proportional(manifold.relation, new.u - new.symbol("uinf"), new)
    e, f = check_infinity_conditions(fin, settings)
    assert e.ok and f.ok
