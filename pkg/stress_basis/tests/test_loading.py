"""Unit tests for loadings and their resultants"""
import os
import sys
import numpy as np
import pytest
from numpy.polynomial.legendre import leggauss
from stress_basis.loading import (
    LoadingSpec,
    RadialTraction,
    annulus_m1_loading,
    band_loading,
    band_profile,
    gravity_loading,
    no_loading,
    pressurized_annulus,
    uniform_pressure_loading,
)
from stress_basis.meshes import Annulus, Rectangle, build_radial_grid, build_rectangle_mesh

tests_path = os.path.dirname(os.path.abspath(__file__))
src_path = tests_path + "/../"
sys.path.insert(0, src_path)

SQUARE = Rectangle(1.0, 1.0)
ANNULUS = Annulus(0.1, 0.3)


def _integrate(function, low, high, n_points=8):
    xi, wi = leggauss(n_points)
    half = 0.5 * (high - low)
    return half * float(np.dot(wi, function(low + half * (xi + 1.0))))


# fmt: off
profile_cases = [
    ("uniform", 1.0),
    ("discontinuous", 0.5),
    ("quartic", 4.0 / 15.0),
]
# fmt: on


@pytest.mark.parametrize("name,total", profile_cases)
def test_band_profile_totals(name, total):
    """Pressure per unit p carried by each edge"""
    profile = band_profile(name)
    integral = sum(
        _integrate(profile, low, high) for low, high in ((0, 0.25), (0.25, 0.75), (0.75, 1))
    )
    assert integral == pytest.approx(total, rel=1e-12), f"{name} integrates to {integral}"


def test_band_profile_shape():
    quartic = band_profile("quartic")
    assert quartic(np.array([0.5]))[0] == pytest.approx(1.0)
    np.testing.assert_allclose(quartic(np.array([0.1, 0.25, 0.75, 0.9])), 0.0, atol=1e-15)
    discontinuous = band_profile("discontinuous", lx=2.0)
    np.testing.assert_allclose(discontinuous(np.array([0.4, 1.0, 1.6])), [0.0, 1.0, 0.0])
    with pytest.raises(ValueError):
        band_profile("triangular")


@pytest.mark.parametrize("profile", ["discontinuous", "quartic", "uniform"])
def test_band_loading_is_balanced(profile):
    loading = band_loading(SQUARE, 1.0, profile)
    np.testing.assert_allclose(loading.resultants(), 0.0, atol=1e-12)
    expected_lines = () if profile == "uniform" else (("x", 0.25), ("x", 0.75))
    assert loading.jump_lines == expected_lines
    top = loading.traction("top", np.array([[0.5, 1.0]]))
    np.testing.assert_allclose(top, [[0.0, -1.0]])
    np.testing.assert_allclose(loading.traction("left", np.array([[0.0, 0.5]])), [[0.0, 0.0]])


def test_gravity_loading_balances_body_force():
    loading = gravity_loading(SQUARE, 1.0, 3.0, 1.0)
    np.testing.assert_allclose(loading.resultants(), 0.0, atol=1e-12)
    assert loading.jump_lines == (("y", 0.5),)
    points = np.array([[0.5, 0.25], [0.5, 0.75]])
    np.testing.assert_allclose(loading.body_force(points), [[0.0, -3.0], [0.0, -1.0]])
    # potential is continuous across the density interface
    below = loading.body_force.potential(np.array([[0.5, 0.5 - 1e-12]]))
    above = loading.body_force.potential(np.array([[0.5, 0.5]]))
    assert below[0] == pytest.approx(above[0], abs=1e-10)


def test_hydrostatic_and_free_loadings():
    np.testing.assert_allclose(uniform_pressure_loading(SQUARE, 2.0).resultants(), 0.0, atol=1e-12)
    free = no_loading(SQUARE)
    assert free.resultants() == (0.0, 0.0, 0.0)
    assert free.hole_resultants() == []


def test_unbalanced_loading_rejected():
    def push(points):
        return np.column_stack([np.zeros(len(points)), -np.ones(len(points))])

    with pytest.raises(ValueError) as excinfo:
        LoadingSpec(SQUARE, tractions={"top": push}, name="push")
    assert "push" in str(excinfo.value)
    with pytest.raises(ValueError):
        LoadingSpec(SQUARE, tractions={"roof": push})


def test_pressurized_annulus():
    loading = pressurized_annulus(ANNULUS, 1.0)
    np.testing.assert_allclose(loading.resultants(), 0.0, atol=1e-12)
    assert not loading.has_hole_net_force()
    mesh = build_radial_grid(ANNULUS, 8)
    values = loading.boundary_values(mesh.boundary, (0, "cos"))
    np.testing.assert_allclose(values, [[-1.0, 0.0], [0.0, 0.0]])
    # another wavenumber sees no load
    np.testing.assert_allclose(loading.boundary_values(mesh.boundary, (1, "cos")), 0.0)


def test_annulus_m1_hole_force():
    """srr = cos(t) on the hole pulls it with net force -pi r_a along x"""
    loading = annulus_m1_loading(ANNULUS)
    np.testing.assert_allclose(loading.resultants(), 0.0, atol=1e-12)
    assert loading.has_hole_net_force()
    (hole,) = loading.hole_resultants()
    assert hole["force"][0] == pytest.approx(-0.1 * np.pi, rel=1e-12)
    assert hole["force"][1] == pytest.approx(0.0, abs=1e-12)
    assert loading.describe()["holes"][0]["hole"] == "inner"


def test_annulus_loading_errors():
    with pytest.raises(ValueError):
        LoadingSpec(ANNULUS, tractions={"top": lambda p: np.zeros((len(p), 2))})
    with pytest.raises(ValueError):
        LoadingSpec(SQUARE, radial=(RadialTraction("inner", 0, "cos", -1.0),))
    with pytest.raises(ValueError):
        RadialTraction("middle", 0, "cos", 1.0)
    with pytest.raises(ValueError):
        # a lone inner pressure is balanced, a lone m = 1 pull is not
        LoadingSpec(ANNULUS, radial=(RadialTraction("inner", 1, "cos", 1.0),))


def test_rectangle_boundary_values():
    mesh = build_rectangle_mesh(SQUARE, 4, 4, [("x", 0.25), ("x", 0.75)])
    loading = band_loading(SQUARE, 2.0, "discontinuous")
    values = loading.boundary_values(mesh.boundary)
    top = mesh.boundary.tags == "top"
    inside = top & (np.abs(mesh.boundary.points[:, 0] - 0.5) < 0.25)
    np.testing.assert_allclose(values[inside], [[0.0, -2.0]] * int(np.sum(inside)))
    np.testing.assert_allclose(values[top & ~inside], 0.0)
