"""Equilibrated particular stresses for the supported loadings.

Each constructor returns a ParticularStress that has already been checked against its loading.
"""
import logging
from dataclasses import dataclass

import numpy as np

from stress_basis.fields import (
    FunctionSampler,
    ScalarField,
    SymTensorField2,
    equilibrium_residual,
    l2_inner_tensor,
)
from stress_basis.loading import (
    annulus_m1_loading,
    band_loading,
    band_profile,
    gravity_loading,
    pressurized_annulus,
)

logger = logging.getLogger(__name__)

PARTICULAR_TOL = 1e-8
RECIPES = ("axisym_airy", "band", "gravity", "annulus_m1", "oracle")
_M1_RADII = (0.1, 0.3)


@dataclass(frozen=True, eq=False)
class ParticularStress:
    """A stress in equilibrium with a loading, not necessarily compatible"""

    field: SymTensorField2
    loading: object
    construction: str

    def describe(self):
        return {"construction": self.construction, "loading": self.loading.describe()}


def _norm(field):
    return float(np.sqrt(l2_inner_tensor(field, field)))


def _validated(field, loading, construction, tol=PARTICULAR_TOL):
    """Wrap a field after checking interior equilibrium and boundary tractions"""
    result = equilibrium_residual(field, loading)
    scale = max(_norm(field), 1.0)
    if result.interior_norm > tol * scale or result.boundary_mismatch > tol * scale:
        raise ValueError(
            f"Field does not equilibrate loading '{loading.name}': interior residual "
            f"{result.interior_norm:.3e}, boundary mismatch {result.boundary_mismatch:.3e}"
        )
    logger.debug(
        "Particular stress %s: interior residual %.2e, boundary mismatch %.2e",
        construction,
        result.interior_norm,
        result.boundary_mismatch,
    )
    return ParticularStress(field, loading, construction)


def _radial_field(mesh, profiles, derivatives, wavenumber, jump_lines=()):
    """Cos-family radial field from closed-form profiles r -> (a, b, c)"""

    def values(points):
        return np.column_stack(profiles(points[:, 0]))

    def gradients(points):
        return np.column_stack(derivatives(points[:, 0]))[:, :, None]

    return SymTensorField2(
        mesh,
        FunctionSampler(values, gradients),
        wavenumber=wavenumber,
        parity="cos",
        jump_lines=jump_lines,
    )


def _require(mesh, kind):
    if mesh.domain.kind != kind:
        raise ValueError(f"Expected a {kind} mesh, got a {mesh.domain.kind}")


def axisym_airy_particular(mesh, p_in, p_out=0.0):
    """Airy potential c1 r + c2 r^2 matching the inner and outer pressures"""
    _require(mesh, "annulus")
    r_a, r_b = mesh.domain.r_a, mesh.domain.r_b
    c1 = (p_out - p_in) * r_a * r_b / (r_b - r_a)
    c2 = 0.5 * (-p_out - c1 / r_b)

    def profiles(r):
        return c1 / r + 2.0 * c2, np.full_like(r, 2.0 * c2), np.zeros_like(r)

    def derivatives(r):
        return -c1 / r**2, np.zeros_like(r), np.zeros_like(r)

    field = _radial_field(mesh, profiles, derivatives, 0)
    return _validated(
        field, pressurized_annulus(mesh.domain, p_in, p_out), "axisym_airy"
    )


def band_pressure_particular(mesh, p, profile="discontinuous"):
    """Columns of vertical stress carrying the band pressure straight through the block"""
    _require(mesh, "rectangle")
    loading = band_loading(mesh.domain, p, profile)
    shape = band_profile(profile, mesh.domain.lx)
    lx = mesh.domain.lx

    def slope(x):
        s = x / lx
        inside = (s >= 0.25) & (s <= 0.75)
        if profile != "quartic":
            return np.zeros_like(s)
        return np.where(
            inside, 512.0 * (s - 0.25) * (s - 0.75) * (2.0 * s - 1.0) / lx, 0.0
        )

    def values(points):
        column = -p * shape(points[:, 0])
        return np.column_stack([np.zeros_like(column), column, np.zeros_like(column)])

    def gradients(points):
        out = np.zeros((len(points), 3, 2))
        out[:, 1, 0] = -p * slope(points[:, 0])
        return out

    field = SymTensorField2(
        mesh, FunctionSampler(values, gradients), jump_lines=loading.jump_lines
    )
    return _validated(field, loading, f"band_{profile}")


def gravity_particular(mesh, rho1, rho2, g):
    """Vertical stress carrying the weight of both layers down to the table"""
    _require(mesh, "rectangle")
    loading = gravity_loading(mesh.domain, rho1, rho2, g)
    ly = mesh.domain.ly
    half = 0.5 * ly

    def values(points):
        y = points[:, 1]
        syy = np.where(
            y < half, rho2 * g * y - g * (rho1 + rho2) * half, rho1 * g * (y - ly)
        )
        return np.column_stack([np.zeros_like(y), syy, np.zeros_like(y)])

    def gradients(points):
        y = points[:, 1]
        out = np.zeros((len(points), 3, 2))
        out[:, 1, 1] = np.where(y < half, rho2 * g, rho1 * g)
        return out

    field = SymTensorField2(
        mesh, FunctionSampler(values, gradients), jump_lines=loading.jump_lines
    )
    return _validated(field, loading, "gravity")


def body_potential(mesh, loading):
    """Body-force potential V of a loading as a scalar field, zero without a body force"""
    if loading.body_force is None:
        return ScalarField.constant(mesh, 0.0)
    force = loading.body_force

    def values(points):
        return np.asarray(force.potential(points), dtype=float)

    def gradients(points):
        return np.asarray(force.gradient(points), dtype=float)

    return ScalarField(
        mesh, FunctionSampler(values, gradients), jump_lines=force.jump_lines
    )


def annulus_m1_particular(mesh):
    """Wavenumber-one particular stress for srr = cos(t) on the hole and cos(t) / 3 outside"""
    _require(mesh, "annulus")
    radii = (mesh.domain.r_a, mesh.domain.r_b)
    if not np.allclose(radii, _M1_RADII, rtol=0.0, atol=1e-12):
        raise ValueError(
            f"The wavenumber-one particular stress is only tabulated for radii {_M1_RADII}, "
            f"got {radii}"
        )

    def profiles(r):
        shear = r / 3.0 - 13.0 / 120.0 + 0.003 / (4.0 * r**2)
        return shear + 0.1 / r, r - 13.0 / 60.0, shear

    def derivatives(r):
        shear = 1.0 / 3.0 - 0.003 / (2.0 * r**3)
        return shear - 0.1 / r**2, np.ones_like(r), shear

    field = _radial_field(mesh, profiles, derivatives, 1)
    return _validated(field, annulus_m1_loading(mesh.domain), "annulus_m1")


def oracle_as_particular(field, loading, tol=PARTICULAR_TOL):
    """Reuse an externally computed equilibrated field as the particular stress"""
    return _validated(field, loading, "oracle", tol)


def particular_from_dict(mesh, spec, oracle_field=None):
    """Build the particular stress named by a config block"""
    recipe = spec.get("recipe")
    if recipe == "axisym_airy":
        return axisym_airy_particular(
            mesh, float(spec.get("p_in", 1.0)), float(spec.get("p_out", 0.0))
        )
    if recipe == "band":
        return band_pressure_particular(
            mesh, float(spec.get("p", 1.0)), spec.get("profile", "discontinuous")
        )
    if recipe == "gravity":
        return gravity_particular(
            mesh,
            float(spec.get("rho1", 1.0)),
            float(spec.get("rho2", 3.0)),
            float(spec.get("g", 1.0)),
        )
    if recipe == "annulus_m1":
        return annulus_m1_particular(mesh)
    if recipe == "oracle":
        if oracle_field is None:
            raise ValueError("The oracle recipe needs an oracle field")
        return oracle_as_particular(
            oracle_field.field, oracle_field.loading, float(spec.get("tol", PARTICULAR_TOL))
        )
    raise ValueError(f"Unknown particular recipe '{recipe}', choose from {RECIPES}")
