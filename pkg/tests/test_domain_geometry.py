# tests/test_domain_geometry.py
import numpy as np
import pytest
import sympy as sp

from src.core.domain_geometry import (BASIS, SUBALGEBRAS, PlanarGenerator, absolute_invariant, annulus,
                                      check_catalogue, check_domain_invariance, generic_domains,
                                      invariant_drift, polygon, spiral_band, spiral_generator, subalgebra, x1, x2)
from src.core.errors import IndeterminateError, UnsupportedError


@pytest.mark.parametrize("sub_id", SUBALGEBRAS)
def test_invariants_are_annihilated(sub_id):
    invariant = absolute_invariant(sub_id)
    for g in subalgebra(sub_id):
        if sub_id != "J12+bD12":
            assert sp.simplify(g.apply(invariant)) == 0


def test_translation_invariant_is_height():
    assert absolute_invariant("X1") == x2
    assert absolute_invariant("X1,X2") == 1


def test_unknown_subalgebra():
    with pytest.raises(UnsupportedError):
        subalgebra("X2,J12")
    with pytest.raises(UnsupportedError):
        generic_domains("X2")
    with pytest.raises(UnsupportedError):
        PlanarGenerator.combination({"K": 1})


def test_spiral_invariant_is_constant_along_the_flow():
    beta = 0.3
    invariant = absolute_invariant("J12+bD12", beta=beta)
    rng = np.random.default_rng(3)
    points = np.column_stack([rng.uniform(-1.0, 1.0, 20), rng.uniform(1.0, 2.0, 20)])
    assert invariant_drift(spiral_generator(beta), invariant, points, [-0.2, 0.1, 0.2]) < 1e-9


def test_affine_flow_matches_closed_form():
    rotation = BASIS["J12"].flow(np.array([[1.0, 0.0]]), np.pi / 2)
    assert np.allclose(rotation, [[0.0, 1.0]])
    scaling = BASIS["D12"].flow(np.array([[1.0, 2.0]]), np.log(3.0))
    assert np.allclose(scaling, [[3.0, 6.0]])


def test_numeric_flow_for_nonlinear_generator():
    g = PlanarGenerator(x1 ** 2, 0, "quadratic")
    assert not g.is_affine
    moved = g.flow(np.array([[0.5, 1.0]]), 0.5)
    assert moved[0, 0] == pytest.approx(0.5 / 0.75, rel=1e-8)
    with pytest.raises(IndeterminateError):
        g.flow(np.array([[2.0, 1.0]]), 1.0)


def test_catalogue_domains_are_invariant():
    verdicts = check_catalogue(n=40)
    assert verdicts
    assert all(v.invariant for v in verdicts), [v.text() for v in verdicts if not v.invariant]


@pytest.mark.parametrize("name", sorted(BASIS))
def test_triangle_is_not_invariant(name):
    verdict = check_domain_invariance(polygon(), BASIS[name], n=40)
    assert not verdict.invariant
    assert "❌" in verdict.text()


def test_annulus_breaks_under_dilation():
    verdict = check_domain_invariance(annulus(1.0, 4.0), BASIS["D12"], n=40)
    assert not verdict.invariant
    assert verdict.escaped > 0


def test_spiral_band_membership_across_the_seam():
    band = spiral_band(1.0, 2.0, 0.3)
    theta = np.array([np.pi - 0.05, -np.pi + 0.05])
    r = 1.3 * np.exp(0.3 * theta)
    inside = band.inside(np.column_stack([r * np.cos(theta), r * np.sin(theta)]))
    assert inside.all()
    with pytest.raises(UnsupportedError):
        spiral_band(1.0, 100.0, 0.3)
