# tests/test_numerics.py
import math

import numpy as np
import pytest
import sympy as sp

from src.core.errors import ConstructionError, NumericalError
from src.core.expr_core import VariableContext, total_derivative
from src.core.numerics import (asymptote_deviation, default_lambda_grid, derive_boundary_function,
                               example2_solution, group_spot_check, holds_on_solution, implicit_residual,
                               integrate_profile, lambda_scan, lift_residual, mol_solve, phi_infinity,
                               residual_on_grid, solve_inner_ode)
from src.core.pde_dsl import parse_field
from src.core.reduction import invariants_of

EXAMPLE2_VALUES = {"m": -0.5, "lam1": 1.0, "lam2": 1.0}
GRID = {"t": np.linspace(0.0, 1.0, 10), "x": np.linspace(0.0, 2.0, 10)}


def test_closed_form_solution_on_grid(bundled):
    bvp = bundled("example2")
    result = residual_on_grid(example2_solution(bvp.ctx, 2, 1), bvp, GRID, EXAMPLE2_VALUES)
    assert result.max_abs < 1e-10
    assert result.evaluated == 100 and result.singular == 0


def test_perturbed_solution_is_caught(bundled):
    bvp = bundled("example2")
    x = bvp.ctx.space_symbols[0]
    perturbed = example2_solution(bvp.ctx, 2, 1) + x / 10
    assert float(residual_on_grid(perturbed, bvp, GRID, EXAMPLE2_VALUES)) > 1e-3


def test_grid_needs_every_variable_and_parameter(bundled):
    bvp = bundled("example2")
    solution = example2_solution(bvp.ctx)
    with pytest.raises(ConstructionError, match="grid has no values"):
        residual_on_grid(solution, bvp, {"t": [0.0, 1.0]}, EXAMPLE2_VALUES)
    with pytest.raises(ConstructionError, match="unbound"):
        residual_on_grid(solution, bvp, GRID, {"m": -0.5, "lam2": 1.0})


def test_boundary_function_of_closed_form_solution(bundled):
    bvp = bundled("example2")
    ctx = bvp.ctx
    solution = example2_solution(ctx, 2, 1)
    x = ctx.space_symbols[0]
    phi = derive_boundary_function(solution, bvp, "phi")
    assert sp.simplify(phi - sp.diff(solution, x).subs(x, 0)) == 0
    relation = bvp.finite_bcs[0].relation
    assert holds_on_solution(relation, solution, ctx, functions={"phi": phi}, locus=bvp.finite_bcs[0].locus)


def test_far_field_roots():
    roots = phi_infinity(-2.0, 0.5)
    assert roots.positive == pytest.approx(2 - math.sqrt(2))
    assert roots.negative == ()
    repeated = phi_infinity(-2.0, 1.0)
    assert repeated.repeated and repeated.roots == (1.0,)
    assert phi_infinity(-2.0, 0.0).roots == (0.5,)
    with pytest.raises(NumericalError):
        phi_infinity(-2.0, 2.0)


def test_first_integral_is_constant():
    profile = integrate_profile(-2.0, 0.5, (0.1, 1.0), 50.0, tol=1e-8)
    assert profile.bounded
    assert implicit_residual(profile) < 1e-6
    assert profile.C is not None


@pytest.mark.parametrize("q0, lam", [(-2.0, 0.0), (0.0, -1.0), (-2.0, 1.0)])
def test_first_integral_special_cases(q0, lam):
    profile = integrate_profile(q0, lam, (0.1, 1.0), 20.0)
    assert implicit_residual(profile) < 1e-6


def test_zero_lambda_profile_is_separable():
    profile = integrate_profile(-2.0, 0.0, (0.1, 1.0), 50.0)
    exact = 1.0 / (1.0 + 2.0 * (profile.omega - 0.1))
    assert np.allclose(profile.phi, exact, rtol=1e-7)


def test_first_integral_does_not_depend_on_the_start():
    first = integrate_profile(-2.0, 0.5, (0.1, 1.0), 50.0)
    second = integrate_profile(-2.0, 0.5, (1.0, float(first.value(1.0))), 50.0)
    assert abs(first.C - second.C) < 1e-6


def test_profile_approaches_far_field_root():
    profile = integrate_profile(-2.0, 0.5, (0.1, 5.0), 50.0)
    assert asymptote_deviation(profile) < 1e-2


def test_profile_rejects_bad_start():
    with pytest.raises(NumericalError):
        integrate_profile(-2.0, 0.5, (0.1, -1.0))
    with pytest.raises(NumericalError):
        integrate_profile(-2.0, 0.5, (1.0, 1.0), end=0.5)


def test_dense_profile_range():
    profile = integrate_profile(-2.0, 0.5, (0.1, 1.0), 50.0)
    assert float(profile.value(0.1)) == pytest.approx(1.0)
    with pytest.raises(NumericalError):
        profile.value(80.0)


def test_default_lambda_grid_contains_target():
    assert np.any(np.isclose(default_lambda_grid(-1.0), 0.25))


def test_lambda_scan_finds_quarter_square():
    scan = lambda_scan(-1.0)
    assert scan.best == pytest.approx(0.25)
    assert scan.target == 0.25


def test_inner_profile_far_field_mismatch():
    matched = solve_inner_ode(-1.0, 0.25)
    assert matched.bounded
    assert math.isfinite(matched.far_field_mismatch)
    assert matched.far_field_mismatch <= solve_inner_ode(-1.0, 0.5).far_field_mismatch


def test_inner_profile_at_repeated_root_converges_slowly():
    # psi_s = psi (psi - 1)^2 reaches psi = 1 only like 1/log(y)
    matched = solve_inner_ode(-2.0, 1.0)
    assert matched.bounded
    assert matched.far_field_mismatch < 0.01
    short = solve_inner_ode(-2.0, 1.0, y_range=(1e-6, 50.0))
    assert short.bounded
    assert short.far_field_mismatch == pytest.approx(0.259, abs=0.01)


def test_inner_profile_blowup_is_reported():
    profile = solve_inner_ode(-2.0, 1.5)
    assert not profile.bounded
    assert profile.far_field_mismatch == math.inf


def test_lambda_scan_single_node():
    assert lambda_scan(-2.0, [1.0]).best == 1.0


def test_lambda_scan_keeps_its_answer_on_longer_range():
    grid = [0.5, 1.0, 1.5]
    assert lambda_scan(-2.0, grid, y_range=(1e-6, 1e30)).best == 1.0
    assert lambda_scan(-2.0, grid, y_range=(1e-6, 1e60)).best == 1.0


@pytest.mark.slow
def test_lambda_scan_on_fine_grid():
    scan = lambda_scan(-2.0, np.arange(1, 31) * 0.05)
    assert scan.best == pytest.approx(1.0)


def test_lifted_profile_solves_parent_equation():
    ctx = VariableContext(("t", "x"), parameters=["lam"])
    u = ctx.u
    equation = ctx.jet(("t",)) - total_derivative(u ** -2 * ctx.jet(("x",)), "x", ctx)
    ansatz = invariants_of(parse_field("(1/lam)*d/dt - x*d/dx + u*d/du", ctx), ctx)
    profile = integrate_profile(-2.0, 0.5, (0.1, 1.0), 50.0)
    points = {"t": np.linspace(0.0, 0.5, 6), "x": np.linspace(0.5, 2.0, 6)}
    assert lift_residual(ansatz, equation, profile.value, points, {"lam": 0.5}) < 1e-4
    assert lift_residual(ansatz, equation, profile.value, points, {"lam": 0.7}) > 1e-3


def test_mol_rejects_bad_grid():
    with pytest.raises(NumericalError):
        mol_solve(-1.0, n=2)


@pytest.mark.slow
def test_mol_mass_grows_with_flux():
    solution = mol_solve(-1.0, n=100, t_end=0.5)
    assert solution.mass_rate() == pytest.approx(1.0, rel=0.05)


@pytest.mark.slow
def test_mol_mass_without_flux():
    solution = mol_solve(0.0, n=100, t_end=0.5)
    assert abs(solution.mass_rate()) < 0.05


@pytest.mark.slow
def test_mol_mass_rate_is_grid_converged():
    coarse = mol_solve(-1.0, n=100, delta=1e-2, t_end=0.5).mass_rate()
    fine = mol_solve(-1.0, n=200, delta=5e-3, t_end=0.5).mass_rate()
    assert abs(fine - coarse) < 0.01 * abs(coarse)


def test_group_flow_keeps_boundary_manifold(bundled):
    bvp = bundled("table2_case3")
    d = {"d": 1 + bvp.ctx.u ** 2}
    for name in ("T", "X1"):
        assert group_spot_check(bvp.operators[name], bvp, {"q0": 1.0}, d).passed
    assert not group_spot_check(bvp.operators["D"], bvp, {"q0": 1.0}, d).passed


def test_group_flow_for_power_scaling(bundled):
    bvp = bundled("table2_case7").with_parameters(k=1)
    values = {name: 1.0 for name in bvp.ctx.parameters}
    assert group_spot_check(bvp.operators["Dk0"], bvp, values).passed
