# tests/test_classification.py
import pytest
import sympy as sp

from src.core.classification import (EquivalenceTransform, apply_equivalence, case_key, check_harmonic_pair,
                                     find_row, harmonic_instances, harmonic_operator, load_table,
                                     principal_algebra, standard_basis, verify_all, verify_table1, verify_table2)
from src.core.errors import ConstructionError, DegenerateTransformError
from src.core.expr_core import VariableContext, equivalent, proportional
from src.core.pde_dsl import parse


TABLE2_CASES = ["1", "2", "3", "4", "5", "6+", "6-", "7", "8", "9", "10", "11", "12", "13+", "13-", "14", "15"]


def test_tables_are_complete(settings):
    assert [r.case for r in load_table(1, settings)] == ["1", "2", "3", "4"]
    assert [r.case for r in load_table(2, settings)] == TABLE2_CASES


def test_case_ordering():
    assert sorted(["10", "6-", "2", "6+"], key=case_key) == ["2", "6+", "6-", "10"]


def test_missing_row(settings):
    with pytest.raises(ConstructionError):
        find_row(2, "99", settings)
    with pytest.raises(ConstructionError):
        verify_all(1, settings, cases=["99"])


def test_row_lists_expected_and_control_operators(settings):
    row = find_row(2, "3", settings)
    assert row.expected == ["X1", "T"]
    assert row.controls == ["D"]
    with pytest.raises(ConstructionError):
        row.operator("J12")


@pytest.mark.parametrize("case", ["1", "2", "3", "4"])
def test_table1_rows(settings, case):
    result = verify_table1(case, settings)
    assert result.passed, result.failures


def test_table2_constant_flux_row(settings):
    result = verify_table2("3", settings, epsilons=(1,))
    assert result.passed, result.failures
    assert {c.variant for c in result.checks} == {"gradient", "flux"}


def test_table2_inverse_square_row(settings):
    result = verify_table2("9", settings, epsilons=(1,))
    assert result.passed, result.failures


@pytest.mark.slow
@pytest.mark.parametrize("case", TABLE2_CASES)
def test_table2_rows(settings, case):
    result = verify_table2(case, settings)
    assert result.passed, result.failures


def test_equivalence_compose_with_inverse_is_identity():
    a, b, d = sp.symbols("a b d", positive=True)
    g = sp.Symbol("g")
    tr = EquivalenceTransform(alpha=a, beta=b, delta=d, gamma0=g, gamma1=1, gamma_u=3)
    identity = tr.compose(tr.inverse())
    t, x1, x2, u = sp.symbols("t x1 x2 u")
    for got, want in zip(identity.map_point(t, x1, x2, u), (t, x1, x2, u)):
        assert sp.simplify(got - want) == 0


def test_induced_diffusivity_and_flux():
    u, t, k, q0 = sp.symbols("u t k q0", positive=True)
    tr = EquivalenceTransform(alpha=2, beta=2, delta=3)
    assert sp.simplify(tr.induced_diffusivity(u ** k, u) - 2 * (u / 3) ** k) == 0
    assert tr.induced_flux(q0, t) == 3 * q0


def test_stretching_rescales_diffusivity_and_flux(bundled):
    bvp = bundled("table2_case7")
    stretched = apply_equivalence(EquivalenceTransform(beta=2, restricted=True), bvp)
    ctx = stretched.ctx
    u, k, q0 = ctx.u, ctx.symbol("k"), ctx.symbol("q0")
    j = ctx.jet
    divergence = (k * u ** (k - 1) * (j(("x1",)) ** 2 + j(("x2",)) ** 2)
                  + u ** k * (j(("x1", "x1")) + j(("x2", "x2"))))
    assert proportional(stretched.equations[0], j(("t",)) - 4 * divergence, ctx)
    bc = stretched.finite_bcs[0]
    assert bc.locus == ctx.symbol("x2")
    assert proportional(bc.relation, 2 * u ** k * j(("x2",)) - q0, ctx)
    assert stretched.operators["X1"].xi == (2, 0)
    assert stretched.name.endswith("(transformed)")


SHIFTED_FLUX = """\
name: square diffusivity, flux decaying from t = -lam0/2
independent: t, x1, x2
parameters: q0, lam0, lam1
assume lam0 > 0
assume q0 != 0
equation: u_t = D(u^2*u_{x1}, x1) + D(u^2*u_{x2}, x2)
bc: x2 = 0 : u^2*u_{x2} = q0*(t + lam0/2)^(-1/2)
bc_inf: x2 -> inf : u_{x2} = 0
Y = lam0*d/dt + lam1*d/dx1 + 2*t*d/dt + x1*d/dx1 + x2*d/dx2
"""


def _fields_agree(A, B, ctx):
    return all(equivalent(a, b, ctx) for a, b in zip((A.xi0, *A.xi, A.eta), (B.xi0, *B.xi, B.eta)))


def test_identity_parameters_keep_the_problem(bundled):
    bvp = bundled("table2_case7")
    same = apply_equivalence(EquivalenceTransform(), bvp)
    source = bvp.resolved()
    ctx = same.ctx
    assert equivalent(same.equations[0], source.equations[0], ctx)
    for mine, theirs in zip(same.finite_bcs, source.finite_bcs):
        assert mine.locus == theirs.locus
        assert equivalent(mine.relation, theirs.relation, ctx)
    for mine, theirs in zip(same.infinity_bcs, source.infinity_bcs):
        assert mine.direction == theirs.direction
        assert proportional(mine.relation, theirs.relation, ctx)
    assert set(same.operators) == set(source.operators)
    for name, X in source.operators.items():
        assert _fields_agree(same.operators[name], X, ctx), name


def test_time_shift_removes_flux_offset():
    bvp = parse(SHIFTED_FLUX)
    ctx = bvp.ctx
    t, u, q0 = ctx.t, ctx.u, ctx.symbol("q0")
    shifted = apply_equivalence(EquivalenceTransform(gamma0=ctx.symbol("lam0") / 2, restricted=True), bvp)
    bc = shifted.finite_bcs[0]
    assert bc.locus == ctx.symbol("x2")
    assert equivalent(bc.relation, u ** 2 * ctx.jet(("x2",)) - q0 / sp.sqrt(t), ctx)
    x1, x2 = ctx.space_symbols
    Y = shifted.operators["Y"]
    assert equivalent(Y.xi0, 2 * t, ctx)
    assert equivalent(Y.xi[0], ctx.symbol("lam1") + x1, ctx)
    assert equivalent(Y.xi[1], x2, ctx)
    assert Y.eta == 0


def test_degenerate_transforms():
    with pytest.raises(DegenerateTransformError):
        EquivalenceTransform(delta=0).validate()
    with pytest.raises(DegenerateTransformError):
        EquivalenceTransform(theta=sp.pi / 2, restricted=True).validate()
    with pytest.raises(DegenerateTransformError):
        EquivalenceTransform(alpha=-1, restricted=True).validate()
    EquivalenceTransform(alpha=2, beta=3, gamma1=5, restricted=True).validate()


def test_harmonic_instances(settings):
    for label, A, B, expected in harmonic_instances():
        assert check_harmonic_pair(A, B, settings=settings).holds == expected, label


def test_harmonic_pair_conditions_separately(settings):
    ctx = VariableContext(("t", "x1", "x2"))
    x1, x2 = ctx.space_symbols
    not_analytic = check_harmonic_pair(x1 * x2, x2, ctx, settings)
    assert not not_analytic.cauchy_riemann
    growing = check_harmonic_pair(x1 ** 3 - 3 * x1 * x2 ** 2, 3 * x1 ** 2 * x2 - x2 ** 3, ctx, settings)
    assert growing.cauchy_riemann and growing.boundary
    assert not growing.growth


def test_harmonic_operator_reproduces_inverse_diffusivity_operator(bundled):
    bvp = bundled("example3")
    ctx = bvp.ctx
    x1, x2 = ctx.space_symbols
    r2 = x1 ** 2 + x2 ** 2
    built = harmonic_operator(x1 / r2, -x2 / r2, ctx)
    listed = bvp.operators["X"]
    for mine, theirs in zip((built.xi0, *built.xi, built.eta), (listed.xi0, *listed.xi, listed.eta)):
        assert equivalent(mine, theirs, ctx)


def test_standard_basis_names():
    ctx = VariableContext(("t", "x1", "x2"))
    assert list(standard_basis(ctx)) == ["T", "X1", "X2", "D", "J12"]
    assert list(standard_basis(VariableContext(("t", "x")))) == ["T", "X", "D"]


@pytest.mark.slow
def test_principal_algebra_of_constant_flux_problem(bundled, settings):
    assert principal_algebra(bundled("table2_case3"), settings) == ["T", "X1"]
