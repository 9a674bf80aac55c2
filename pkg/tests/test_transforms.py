# tests/test_transforms.py
import pytest
import sympy as sp

from src.core.errors import ConstructionError, UnsupportedError
from src.core.expr_core import VariableContext, equivalent
from src.core.invariance import load_library
from src.core.pde_dsl import ChangeOfVariables, parse_field
from src.core.transforms import (JetMap, bind_transform, check_transform, identity_transform,
                                 positive_simplify, pushforward, transform_expression)


@pytest.fixture
def inversion():
    """tau = t, y = 1/x, w = u x"""
    old = VariableContext(("t", "x"))
    new = VariableContext(("tau", "y"), dependent="w", time="tau")
    t, x, u = old.t, old.symbol("x"), old.u
    tau, y, w = new.t, new.symbol("y"), new.u
    return ChangeOfVariables("inversion", old, new, {"tau": t, "y": 1 / x, "w": u * x},
                             {"t": tau, "x": 1 / y, "u": w * y})


def test_library_transforms_are_bijective(settings):
    for tr in load_library(settings):
        check_transform(tr)


def test_broken_inverse_is_rejected(inversion):
    broken = ChangeOfVariables("broken", inversion.old_ctx, inversion.new_ctx, inversion.forward,
                               {**inversion.inverse, "x": 2 / inversion.new_ctx.symbol("y")})
    with pytest.raises(ConstructionError):
        check_transform(broken)


def test_first_jet_through_inversion(inversion):
    new = inversion.new_ctx
    y, w = new.symbol("y"), new.u
    jets = JetMap.for_transform(inversion)
    assert equivalent(jets.jet(("x",)), -y ** 3 * new.jet(("y",)) - y ** 2 * w, new)
    assert equivalent(jets.jet(("t",)), y * new.jet(("tau",)), new)


def test_pushforward_of_scaling(inversion):
    X = parse_field("x*d/dx", inversion.old_ctx, name="S")
    Y = pushforward(X, inversion)
    new = inversion.new_ctx
    assert Y.name == "S*"
    assert Y.xi0 == 0
    assert equivalent(Y.xi[0], -new.symbol("y"), new)
    assert equivalent(Y.eta, new.u, new)


def test_identity_transform_leaves_jets():
    ctx = VariableContext(("t", "x"))
    jets = JetMap.for_transform(identity_transform(ctx))
    assert jets.to_new(ctx.jet(("x", "x"))) == ctx.jet(("x", "x"))


def test_positive_simplify_denests():
    x = sp.Symbol("x", positive=True)
    assert positive_simplify(sp.sqrt(x ** 2)) == x
    assert positive_simplify((x ** 4) ** sp.Rational(1, 4)) == x


def test_binding_needs_matching_variables(settings):
    library = {tr.name: tr for tr in load_library(settings)}
    two_d = next(tr for tr in library.values() if len(tr.old_ctx.independents) == 3)
    with pytest.raises(UnsupportedError):
        bind_transform(two_d, VariableContext(("t", "x")))
    bound = bind_transform(two_d, VariableContext(("t", "x1", "x2"), parameters=["q0"]))
    assert {"q0", "eps", "k"} <= set(bound.old_ctx.parameters)


def test_expressions_move_to_new_variables(inversion):
    old, new = inversion.old_ctx, inversion.new_ctx
    assert equivalent(transform_expression(old.u * old.symbol("x"), inversion), new.u, new)
    moved = transform_expression(old.jet(("x",)), inversion)
    assert equivalent(moved, JetMap.for_transform(inversion).jet(("x",)), new)
