"""Unit tests for the eigenbasis backends, verification and the basis cache"""
import os
import sys
from dataclasses import replace
import numpy as np
import pytest
import mock
from stress_basis.basis import (
    EigenSolveConfig,
    airy_bump_basis,
    cache_path,
    cached_basis,
    load_basis,
    orthonormalize,
    projection_residual,
    require_verified,
    save_basis,
    solve_basis_annulus,
    solve_basis_rectangle,
    verify_basis,
)
from stress_basis.config import Config
from stress_basis.exceptions import NumericalError
from stress_basis.fields import SymTensorField2, equilibrium_residual
from stress_basis.meshes import Annulus, Rectangle, build_radial_grid, build_rectangle_mesh

tests_path = os.path.dirname(os.path.abspath(__file__))
src_path = tests_path + "/../"
sys.path.insert(0, src_path)


@pytest.fixture(name="rectangle_mesh", scope="module")
def fixture_rectangle_mesh():
    return build_rectangle_mesh(Rectangle(1.0, 1.01), 8, 8)


@pytest.fixture(name="rectangle_basis", scope="module")
def fixture_rectangle_basis(rectangle_mesh):
    return solve_basis_rectangle(rectangle_mesh, EigenSolveConfig(6))


@pytest.fixture(name="radial_mesh", scope="module")
def fixture_radial_mesh():
    return build_radial_grid(Annulus(0.1, 0.3), 32)


@pytest.fixture(name="annulus_basis", scope="module")
def fixture_annulus_basis(radial_mesh):
    return solve_basis_annulus(radial_mesh, [0, 1, 2], EigenSolveConfig(8))


@pytest.fixture(name="tmp_cache")
def fixture_tmp_cache(tmp_path):
    """Points the basis cache at a temporary directory"""
    with mock.patch.object(Config, "CACHE_DIR", tmp_path):
        yield tmp_path


@pytest.mark.parametrize("which", ["rectangle_basis", "annulus_basis"])
def test_basis_passes_verification(which, request):
    basis = request.getfixturevalue(which)
    report = verify_basis(basis)
    assert report.passed, f"{which} failed verification: {report.to_dict()}"
    np.testing.assert_allclose(basis.gram_l2, np.eye(basis.size), atol=1e-8)
    # traction-free equilibrated fields have equal trace and tensor Gram matrices
    np.testing.assert_allclose(basis.trace_gram, basis.gram_l2, atol=1e-6)


@pytest.mark.parametrize("which", ["rectangle_basis", "annulus_basis"])
def test_eigenvalues_ascending(which, request):
    basis = request.getfixturevalue(which)
    assert np.all(np.diff(basis.eigenvalues) >= -1e-9 * basis.eigenvalues[1:])
    assert np.all(basis.eigenvalues > 0)


def test_modes_are_residual_stresses(rectangle_basis):
    for index, mode in enumerate(rectangle_basis.modes):
        residual = equilibrium_residual(mode)
        assert residual.interior_norm < 1e-8, f"mode {index}: {residual.interior_norm}"
        assert residual.boundary_mismatch < 1e-8, f"mode {index}: {residual.boundary_mismatch}"


def test_annulus_families(annulus_basis):
    tags = annulus_basis.tags
    assert (0, "sin") not in tags, "the m = 0 shear family has no traction-free member"
    for m in (1, 2):
        cos_values = [v for v, t in zip(annulus_basis.eigenvalues, tags) if t == (m, "cos")]
        sin_values = [v for v, t in zip(annulus_basis.eigenvalues, tags) if t == (m, "sin")]
        # every m >= 1 eigenvalue comes as a cos/sin pair
        for cos_value, sin_value in zip(cos_values, sin_values):
            assert cos_value == pytest.approx(sin_value, rel=1e-12)
    only_cos = solve_basis_annulus(
        annulus_basis.mesh, [1], EigenSolveConfig(3, parities=("cos",))
    )
    assert only_cos.tags == [(1, "cos")] * 3


def test_sign_normalization_is_deterministic(rectangle_mesh, rectangle_basis):
    again = solve_basis_rectangle(rectangle_mesh, EigenSolveConfig(6))
    for first, second in zip(rectangle_basis.modes, again.modes):
        np.testing.assert_allclose(first.values, second.values, atol=1e-10)
        nodal = first.nodal_values().ravel()
        assert nodal[np.argmax(np.abs(nodal))] > 0
    assert again.digest == rectangle_basis.digest


def test_leading_and_restricted(annulus_basis):
    leading = annulus_basis.leading(3)
    assert leading.size == 3
    np.testing.assert_array_equal(leading.eigenvalues, annulus_basis.eigenvalues[:3])
    with pytest.raises(ValueError):
        annulus_basis.leading(annulus_basis.size + 1)
    axisymmetric = annulus_basis.restricted_to((0, "cos"))
    assert set(axisymmetric.tags) <= {(0, "cos")}


def test_projection_residual(rectangle_basis):
    first, fourth = rectangle_basis.modes[0], rectangle_basis.modes[3]
    assert projection_residual(rectangle_basis, first) < 1e-10
    combined = first + fourth
    assert projection_residual(rectangle_basis, combined, n=1) == pytest.approx(1.0, rel=1e-8)
    assert projection_residual(rectangle_basis, combined, n=4) < 1e-10


def test_orthonormalize_cluster(rectangle_basis):
    """Modes sharing an eigenvalue are orthogonalized, repeated modes are rank deficient"""
    first, second = rectangle_basis.modes[0], rectangle_basis.modes[1]
    mixed = replace(
        rectangle_basis,
        modes=(first * 2.0, first + second),
        eigenvalues=np.array([50.0, 50.0]),
        coefficients=tuple(rectangle_basis.coefficients[:2]),
    )
    fixed = orthonormalize(mixed)
    np.testing.assert_allclose(fixed.gram_l2, np.eye(2), atol=1e-10)
    repeated = replace(mixed, modes=(first, first * 2.0))
    with pytest.raises(NumericalError):
        orthonormalize(repeated)
    # well separated eigenvalues are only normalized
    separated = orthonormalize(replace(repeated, eigenvalues=np.array([50.0, 80.0])))
    assert separated.gram_l2[0, 1] == pytest.approx(1.0, rel=1e-10)


# fmt: off
bad_configs = [
    {"n_modes": 0},
    {"n_modes": 3, "parities": ("tan",)},
    {"n_modes": 3, "parities": ()},
]
# fmt: on


@pytest.mark.parametrize("kwargs", bad_configs)
def test_eigen_solve_config_errors(kwargs):
    with pytest.raises(ValueError):
        EigenSolveConfig(**kwargs)


def test_too_many_modes():
    coarse = build_rectangle_mesh(Rectangle(1.0, 1.0), 4, 4)
    # 3 x 3 clamped splines
    with pytest.raises(ValueError):
        solve_basis_rectangle(coarse, EigenSolveConfig(20))
    with pytest.raises(ValueError):
        solve_basis_rectangle(build_radial_grid(Annulus(0.1, 0.3), 8), EigenSolveConfig(2))
    with pytest.raises(ValueError):
        solve_basis_annulus(Rectangle(1.0, 1.0), [0], EigenSolveConfig(2))


def test_airy_bump_basis(rectangle_mesh):
    basis = airy_bump_basis(rectangle_mesh, 6)
    assert basis.size == 6
    assert basis.backend == "airy-bump"
    np.testing.assert_allclose(basis.gram_l2, np.eye(6), atol=1e-10)
    report = verify_basis(basis)
    for check in ("l2_orthogonality", "l2_normalization", "equilibrium", "traction_free"):
        assert report.checks[check], f"airy bump {check}: {report.to_dict()}"
    with pytest.raises(ValueError):
        airy_bump_basis(build_radial_grid(Annulus(0.1, 0.3), 8), 3)


@pytest.mark.parametrize("which", ["rectangle_basis", "annulus_basis"])
def test_save_load_round_trip(which, request, tmp_path):
    basis = request.getfixturevalue(which)
    path = tmp_path.joinpath("basis.npz")
    save_basis(basis, path)
    loaded = load_basis(path)
    assert loaded.backend == basis.backend
    assert loaded.tags == basis.tags
    assert loaded.mesh.fingerprint == basis.mesh.fingerprint
    np.testing.assert_array_equal(loaded.eigenvalues, basis.eigenvalues)
    for original, restored in zip(basis.modes, loaded.modes):
        np.testing.assert_allclose(restored.values, original.values, rtol=1e-12, atol=1e-12)


def test_load_rejects_other_mesh(rectangle_basis, tmp_path):
    path = tmp_path.joinpath("basis.npz")
    save_basis(rectangle_basis, path)
    with pytest.raises(ValueError):
        load_basis(path, build_rectangle_mesh(Rectangle(1.0, 1.01), 4, 4))


@pytest.mark.usefixtures("tmp_cache")
def test_cached_basis_builds_once(rectangle_mesh):
    build = mock.Mock(side_effect=lambda: solve_basis_rectangle(rectangle_mesh, EigenSolveConfig(4)))
    first = cached_basis(rectangle_mesh, "eigen-rectangle", 4, build)
    second = cached_basis(rectangle_mesh, "eigen-rectangle", 4, build)
    assert build.call_count == 1
    assert cache_path(rectangle_mesh, "eigen-rectangle", 4).exists()
    np.testing.assert_array_equal(first.eigenvalues, second.eigenvalues)
    assert second.provenance["cache"] == str(cache_path(rectangle_mesh, "eigen-rectangle", 4))


@pytest.mark.usefixtures("tmp_cache")
def test_unreadable_cache_is_rebuilt(rectangle_mesh, caplog):
    path = cache_path(rectangle_mesh, "eigen-rectangle", 4)
    path.write_bytes(b"not an archive")
    build = mock.Mock(side_effect=lambda: solve_basis_rectangle(rectangle_mesh, EigenSolveConfig(4)))
    basis = cached_basis(rectangle_mesh, "eigen-rectangle", 4, build)
    assert build.call_count == 1
    assert basis.size == 4
    assert "Ignoring unreadable basis cache" in caplog.text


@pytest.mark.usefixtures("tmp_cache")
def test_cached_basis_stores_verification(rectangle_mesh):
    build = mock.Mock(side_effect=lambda: solve_basis_rectangle(rectangle_mesh, EigenSolveConfig(4)))
    first = cached_basis(rectangle_mesh, "eigen-rectangle", 4, build)
    assert first.provenance["verification"]["passed"] is True
    # the stored report is trusted on later loads
    with mock.patch("stress_basis.basis.verify_basis", side_effect=AssertionError("re-verified")):
        second = cached_basis(rectangle_mesh, "eigen-rectangle", 4, build)
    assert second.provenance["verification"] == first.provenance["verification"]


@pytest.mark.usefixtures("tmp_cache")
def test_failing_basis_is_rejected(rectangle_mesh):
    failing = mock.Mock(
        passed=False, checks={"rayleigh": False, "equilibrium": True}, max_offdiag_h1=0.0
    )
    build = mock.Mock(side_effect=lambda: solve_basis_rectangle(rectangle_mesh, EigenSolveConfig(4)))
    with mock.patch("stress_basis.basis.verify_basis", return_value=failing):
        with pytest.raises(NumericalError) as excinfo:
            cached_basis(rectangle_mesh, "eigen-rectangle", 4, build)
        with pytest.raises(NumericalError):
            require_verified(build())
    assert "rayleigh" in str(excinfo.value)
    assert "equilibrium" not in str(excinfo.value)
    assert not cache_path(rectangle_mesh, "eigen-rectangle", 4).exists()


# fmt: off
default_resolution_cases = [
    ([0], ("cos",), 60),
    ([1], ("cos",), 120),
    (range(7), ("cos", "sin"), 40),
]
# fmt: on


@pytest.mark.parametrize("wavenumbers,parities,n_modes", default_resolution_cases)
def test_annulus_basis_verifies_at_default_resolution(wavenumbers, parities, n_modes):
    cfg = EigenSolveConfig(n_modes, resolution=Config.ANNULUS_ELEMENTS, parities=parities)
    basis = solve_basis_annulus(Annulus(0.1, 0.3), wavenumbers, cfg)
    assert basis.mesh.shape == (Config.ANNULUS_ELEMENTS,)
    report = verify_basis(basis)
    assert report.passed, f"m={list(wavenumbers)} failed verification: {report.to_dict()}"
    assert report.max_rayleigh_error <= 1e-10
    assert report.max_offdiag_h1 <= 1e-8


def test_rectangle_basis_verifies_at_default_resolution():
    elements = Config.RECTANGLE_ELEMENTS
    mesh = build_rectangle_mesh(Rectangle(1.0, 1.0), elements, elements)
    report = verify_basis(solve_basis_rectangle(mesh, EigenSolveConfig(20)))
    assert report.passed, f"rectangle failed verification: {report.to_dict()}"


def test_rectangle_eigenvalues():
    """Lowest eigenvalues of the 1 x 1.01 rectangle at the default resolution"""
    rectangle = Rectangle(1.0, 1.01)
    spectra = {
        elements: solve_basis_rectangle(
            build_rectangle_mesh(rectangle, elements, elements), EigenSolveConfig(3)
        ).eigenvalues
        for elements in (12, 24, 48)
    }
    np.testing.assert_allclose(spectra[48], [58.54, 102.37, 103.54], rtol=0.01)
    # halving the element size nests the spline spaces, so eigenvalues can only drop
    assert np.all(spectra[24] <= spectra[12] * (1.0 + 1e-9))
    assert np.all(spectra[48] <= spectra[24] * (1.0 + 1e-9))
    # the drift shrinks roughly fourfold per halving, a few 1e-3 between 24 and 48
    coarse_drift = (spectra[12] - spectra[24]) / spectra[24]
    drift = (spectra[24] - spectra[48]) / spectra[48]
    assert np.all(drift <= 1e-2), f"refinement drift {drift}"
    assert np.all(drift < coarse_drift), f"drift {drift} against {coarse_drift}"


def test_annulus_eigenvalues():
    """Merged spectrum of the 0.1 < r < 0.3 annulus: one eigenvalue, then a degenerate pair"""
    basis = solve_basis_annulus(Annulus(0.1, 0.3), range(7), EigenSolveConfig(3, resolution=128))
    assert basis.mesh.shape == (128,)
    assert basis.eigenvalues[0] == pytest.approx(293.34, rel=0.01)
    assert basis.eigenvalues[1] == pytest.approx(348.76, rel=0.01)
    gap = abs(basis.eigenvalues[2] - basis.eigenvalues[1]) / basis.eigenvalues[1]
    assert gap <= 1e-6, f"pair gap {gap}"
    pair = basis.leading(3).gram_l2[1, 2]
    assert abs(pair) <= 1e-10, f"pair overlap {pair}"


def test_uniform_stress_orthogonal_to_span(rectangle_basis):
    """Residual stresses average to zero, so a uniform stress projects to nothing"""
    uniform = SymTensorField2.constant(rectangle_basis.mesh, (1.0, 0.0, 0.0))
    assert projection_residual(rectangle_basis, uniform) == pytest.approx(
        np.sqrt(1.01), rel=1e-8
    )
