"""Unit tests for field containers, inner products and equilibrium diagnostics"""
import os
import sys
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from stress_basis.exceptions import MeshError
from stress_basis.fields import (
    FunctionSampler,
    QuadratureRule,
    ScalarField,
    SymTensorField2,
    angular_weights,
    check_jump_alignment,
    equilibrium_residual,
    h1_inner_tensor,
    l2_inner_scalar,
    l2_inner_tensor,
    planar_trace,
    write_field_csv,
)
from stress_basis.meshes import Annulus, Rectangle, build_radial_grid, build_rectangle_mesh

tests_path = os.path.dirname(os.path.abspath(__file__))
src_path = tests_path + "/../"
sys.path.insert(0, src_path)

component = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)
triple = st.tuples(component, component, component)


@pytest.fixture(name="square_mesh", scope="module")
def fixture_square_mesh():
    return build_rectangle_mesh(Rectangle(1.0, 1.0), 4, 4)


@pytest.fixture(name="radial_mesh", scope="module")
def fixture_radial_mesh():
    return build_radial_grid(Annulus(0.1, 0.3), 16)


def linear_field(mesh):
    """sxx = x, sxy = -y: divergence free, not traction free"""

    def values(points):
        return np.column_stack([points[:, 0], np.zeros(len(points)), -points[:, 1]])

    def gradients(points):
        grad = np.zeros((len(points), 3, 2))
        grad[:, 0, 0] = 1.0
        grad[:, 2, 1] = -1.0
        return grad

    return SymTensorField2(mesh, FunctionSampler(values, gradients))


# fmt: off
rule_cases = [
    (4, 1, lambda p: p[:, 0] ** 6, 2.0 / 7.0),
    (2, 1, lambda p: p[:, 0] ** 2, 2.0 / 3.0),
    (3, 2, lambda p: p[:, 0] ** 4 * p[:, 1] ** 2, 4.0 / 15.0),
    (1, 2, lambda p: np.ones(len(p)), 4.0),
]
# fmt: on


@pytest.mark.parametrize("n_points,dim,function,expected", rule_cases)
def test_gauss_rule_exactness(n_points, dim, function, expected):
    rule = QuadratureRule.gauss(n_points, dim)
    assert rule.degree == 2 * n_points - 1
    assert rule.integrate(function) == pytest.approx(expected, rel=1e-13)


def test_gauss_rule_errors():
    with pytest.raises(ValueError):
        QuadratureRule.gauss(0)
    with pytest.raises(ValueError):
        QuadratureRule.gauss(2, dim=3)


@settings(max_examples=25, deadline=None)
@given(a=triple, b=triple)
def test_l2_inner_constant_fields(square_mesh, a, b):
    """Constant fields on the unit square: shear counted twice"""
    field_a = SymTensorField2.constant(square_mesh, a)
    field_b = SymTensorField2.constant(square_mesh, b)
    expected = a[0] * b[0] + a[1] * b[1] + 2.0 * a[2] * b[2]
    assert l2_inner_tensor(field_a, field_b) == pytest.approx(expected, rel=1e-12, abs=1e-10)
    assert l2_inner_tensor(field_a, field_b) == pytest.approx(
        l2_inner_tensor(field_b, field_a), rel=1e-14, abs=1e-12
    )


@settings(max_examples=25, deadline=None)
@given(scale=component, a=triple, b=triple)
def test_l2_inner_is_bilinear(square_mesh, scale, a, b):
    field_a = SymTensorField2.constant(square_mesh, a)
    field_b = SymTensorField2.constant(square_mesh, b)
    field_c = linear_field(square_mesh)
    combined = SymTensorField2.combine([field_a, field_b], [scale, 1.0])
    left = l2_inner_tensor(combined, field_c)
    right = scale * l2_inner_tensor(field_a, field_c) + l2_inner_tensor(field_b, field_c)
    assert left == pytest.approx(right, rel=1e-10, abs=1e-9)


def test_h1_inner_of_linear_field(square_mesh):
    field = linear_field(square_mesh)
    assert h1_inner_tensor(field, field) == pytest.approx(3.0, rel=1e-13)
    constant = SymTensorField2.constant(square_mesh, (1.0, 2.0, 3.0))
    assert h1_inner_tensor(constant, constant) == 0.0


def test_radial_inner_products(radial_mesh):
    """Angular factors integrate to 2 pi (m = 0) and pi (m > 0)"""
    assert angular_weights(0, "cos") == (2.0 * np.pi, 0.0)
    assert angular_weights(2, "sin") == (np.pi, np.pi)
    field = SymTensorField2.constant(radial_mesh, (1.0, 1.0, 0.0), wavenumber=0, parity="cos")
    assert l2_inner_tensor(field, field) == pytest.approx(0.16 * np.pi, rel=1e-12)
    # isotropic constant stress has no gradient
    assert h1_inner_tensor(field, field) == pytest.approx(0.0, abs=1e-12)
    # e_r (x) e_r rotates with t: |grad|^2 = 2 / r^2
    radial_only = SymTensorField2.constant(
        radial_mesh, (1.0, 0.0, 0.0), wavenumber=0, parity="cos"
    )
    assert h1_inner_tensor(radial_only, radial_only) == pytest.approx(
        4.0 * np.pi * np.log(3.0), rel=1e-6
    )


def test_scalar_inner_and_trace(square_mesh, radial_mesh):
    trace = planar_trace(SymTensorField2.constant(square_mesh, (1.0, 2.0, 5.0)))
    np.testing.assert_allclose(trace.values, 3.0)
    assert l2_inner_scalar(trace, trace) == pytest.approx(9.0, rel=1e-13)
    one = ScalarField.constant(radial_mesh, 1.0, wavenumber=1, parity="cos")
    assert l2_inner_scalar(one, one) == pytest.approx(np.pi * 0.04, rel=1e-12)


def test_tag_mismatch_errors(square_mesh, radial_mesh):
    m0 = SymTensorField2.constant(radial_mesh, (1.0, 1.0, 0.0), wavenumber=0, parity="cos")
    m1 = SymTensorField2.constant(radial_mesh, (1.0, 1.0, 0.0), wavenumber=1, parity="cos")
    with pytest.raises(ValueError):
        l2_inner_tensor(m0, m1)
    with pytest.raises(ValueError):
        SymTensorField2.constant(radial_mesh, (1.0, 1.0, 0.0))
    with pytest.raises(ValueError):
        SymTensorField2.constant(square_mesh, (1.0, 1.0, 0.0), wavenumber=0, parity="cos")
    with pytest.raises(ValueError):
        SymTensorField2.constant(radial_mesh, (1.0, 1.0, 0.0), wavenumber=1, parity="tan")
    other = build_rectangle_mesh(Rectangle(1.0, 1.0), 8, 8)
    with pytest.raises(ValueError):
        l2_inner_tensor(
            SymTensorField2.constant(square_mesh, (1.0, 0.0, 0.0)),
            SymTensorField2.constant(other, (1.0, 0.0, 0.0)),
        )


def test_field_arithmetic(square_mesh):
    field = linear_field(square_mesh)
    doubled = field + field
    np.testing.assert_allclose(doubled.values, 2.0 * field.values)
    np.testing.assert_allclose((doubled - field).values, field.values)
    np.testing.assert_allclose((-field).values, -field.values)
    np.testing.assert_allclose((0.5 * doubled).at([0.2, 0.7]), [[0.2, 0.0, -0.7]])
    with pytest.raises(ValueError):
        SymTensorField2.combine([], [])


def test_equilibrium_residual(square_mesh, radial_mesh):
    residual = equilibrium_residual(linear_field(square_mesh))
    assert residual.interior_norm < 1e-13, f"interior residual {residual.interior_norm}"
    # the linear field loads the right and top edges
    assert residual.boundary_mismatch > 0.5
    free = equilibrium_residual(SymTensorField2.constant(square_mesh, (0.0, 0.0, 0.0)))
    assert free.interior_norm == 0.0
    assert free.boundary_mismatch == 0.0
    hydrostatic = SymTensorField2.constant(
        radial_mesh, (1.0, 1.0, 0.0), wavenumber=0, parity="cos"
    )
    radial_residual = equilibrium_residual(hydrostatic)
    assert radial_residual.interior_norm < 1e-13
    assert radial_residual.boundary_mismatch == pytest.approx(1.0)


def test_jump_alignment(square_mesh):
    aligned = SymTensorField2.constant(square_mesh, (0.0, 1.0, 0.0), jump_lines=[("x", 0.25)])
    check_jump_alignment(aligned)
    misaligned = SymTensorField2.constant(square_mesh, (0.0, 1.0, 0.0), jump_lines=[("x", 0.3)])
    with pytest.raises(MeshError):
        check_jump_alignment(misaligned)
    with pytest.raises(MeshError):
        equilibrium_residual(misaligned)


def test_non_finite_values_rejected(square_mesh):
    with pytest.raises(ValueError):
        SymTensorField2.constant(square_mesh, (np.nan, 0.0, 0.0))


def test_write_field_csv(square_mesh, radial_mesh, tmp_path):
    path = tmp_path.joinpath("sigma.csv")
    write_field_csv(linear_field(square_mesh), path, "unit test")
    lines = path.read_text(encoding="utf8").splitlines()
    assert lines[0] == "# unit test"
    assert lines[1] == "x,y,sxx,syy,sxy"
    assert len(lines) == 2 + square_mesh.n_nodes
    x, y, sxx, syy, sxy = (float(v) for v in lines[-1].split(","))
    assert (x, y) == (1.0, 1.0)
    assert (sxx, syy, sxy) == (1.0, 0.0, -1.0)

    radial_path = tmp_path.joinpath("radial.csv")
    field = SymTensorField2.constant(radial_mesh, (1.0, 2.0, 0.0), wavenumber=3, parity="sin")
    write_field_csv(field, radial_path)
    lines = radial_path.read_text(encoding="utf8").splitlines()
    assert lines[0] == "r,m,srr,stt,srt"
    assert lines[1].split(",")[1] == "3"
    assert len(lines) == 1 + radial_mesh.n_nodes
