"""Plane-strain constitutive laws and the strain-energy products they induce.

Compliance matrices act on the stored components (s11, s22, s12) and return (e11, e22, e12),
so the energy density is e11 s11 + e22 s22 + 2 e12 s12.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np

from stress_basis.fields import (
    FunctionSampler,
    SymTensorField2,
    component_weights,
)

logger = logging.getLogger(__name__)

MAX_POISSON = 0.49
YOUNGS_PROFILES = ("constant", "discontinuous", "ramp")
_PROBE = np.linspace(0.0, 1.0, 17)


@dataclass(frozen=True)
class YoungsProfile:
    """Young's modulus varying with y: `y_low` below the interface, `y_high` above it.

    The ramp profile blends linearly over [interface - zeta, interface + zeta].
    """

    name: str
    y_low: float = 3.0
    y_high: float = 1.0
    interface: float = 0.5
    zeta: float = 0.0

    def __post_init__(self):
        if self.name not in YOUNGS_PROFILES:
            raise ValueError(f"Unknown Young's modulus profile '{self.name}'")
        if self.name == "ramp" and not self.zeta > 0:
            raise ValueError(f"The ramp profile needs zeta > 0, got {self.zeta}")

    def __call__(self, points):
        y = np.atleast_2d(points)[:, -1]
        if self.name == "constant":
            return np.full(len(y), self.y_high)
        if self.name == "discontinuous":
            return np.where(y < self.interface, self.y_low, self.y_high)
        ramp = (self.y_high - self.y_low) / (2.0 * self.zeta) * (y - self.interface) + 0.5 * (
            self.y_high + self.y_low
        )
        out = np.where(y <= self.interface - self.zeta, self.y_low, ramp)
        return np.where(y >= self.interface + self.zeta, self.y_high, out)

    @property
    def jump_lines(self):
        if self.name == "discontinuous":
            return (("y", self.interface),)
        return ()

    def to_dict(self):
        return {
            "profile": self.name,
            "Y2": self.y_low,
            "Y1": self.y_high,
            "interface": self.interface,
            "zeta": self.zeta,
        }


@dataclass(frozen=True)
class Material:
    """Isotropic (possibly inhomogeneous Y) or homogeneous orthotropic plane-strain material"""

    kind: str
    youngs: Union[float, Callable] = 1.0
    nu: float = 0.33
    orthotropic_constants: Optional[Tuple[float, float, float, float]] = None

    def __post_init__(self):
        if self.kind == "isotropic":
            if not 0.0 <= self.nu < 0.5:
                raise ValueError(f"Poisson's ratio must lie in [0, 0.5), got {self.nu}")
            if self.nu > MAX_POISSON:
                logger.warning("Capping Poisson's ratio %s to %s", self.nu, MAX_POISSON)
                object.__setattr__(self, "nu", MAX_POISSON)
        elif self.kind == "orthotropic":
            y_x, y_y, nu_xy, g_xy = self.orthotropic_constants
            if min(y_x, y_y, g_xy) <= 0:
                raise ValueError("Orthotropic moduli must be positive")
            if not 0.0 <= nu_xy <= MAX_POISSON:
                raise ValueError(f"nu_xy must lie in [0, {MAX_POISSON}], got {nu_xy}")
        else:
            raise ValueError(f"Unknown material kind '{self.kind}'")
        self._check_positive_definite()

    @classmethod
    def isotropic(cls, youngs=1.0, nu=0.33):
        return cls("isotropic", youngs=youngs, nu=nu)

    @classmethod
    def orthotropic(cls, y_x, y_y, nu_xy, g_xy):
        return cls("orthotropic", orthotropic_constants=(y_x, y_y, nu_xy, g_xy))

    @property
    def homogeneous(self):
        return not callable(self.youngs)

    @property
    def jump_lines(self):
        return getattr(self.youngs, "jump_lines", ())

    def youngs_at(self, points):
        points = np.atleast_2d(points)
        if callable(self.youngs):
            return np.asarray(self.youngs(points), dtype=float)
        return np.full(len(points), float(self.youngs))

    def compliance_at(self, points):
        """Compliance matrices, shape (n, 3, 3)"""
        points = np.atleast_2d(points)
        out = np.zeros((len(points), 3, 3))
        if self.kind == "isotropic":
            youngs = self.youngs_at(points)
            nu = self.nu
            out[:, 0, 0] = out[:, 1, 1] = (1.0 - nu**2) / youngs
            out[:, 0, 1] = out[:, 1, 0] = -nu * (1.0 + nu) / youngs
            out[:, 2, 2] = (1.0 + nu) / youngs
            return out
        y_x, y_y, nu_xy, g_xy = self.orthotropic_constants
        out[:, 0, 0] = (1.0 - nu_xy**2) / y_x
        out[:, 1, 1] = (1.0 - nu_xy**2) / y_y
        # symmetrized cross term, see DESIGN.md
        out[:, 0, 1] = out[:, 1, 0] = -nu_xy * (1.0 + nu_xy) / y_y
        out[:, 2, 2] = 1.0 / (2.0 * g_xy)
        return out

    def _check_positive_definite(self):
        grid_x, grid_y = np.meshgrid(_PROBE, _PROBE, indexing="ij")
        points = np.column_stack([grid_x.ravel(), grid_y.ravel()])
        if self.kind == "isotropic" and np.any(self.youngs_at(points) <= 0):
            raise ValueError("Young's modulus must be positive everywhere")
        energy = self.compliance_at(points) * np.array([1.0, 1.0, 2.0])[None, :, None]
        if np.min(np.linalg.eigvalsh(energy)) <= 0:
            raise ValueError("Compliance is not positive definite")

    def norm_bounds(self, points):
        """Constants c1, c2 with c1 |s|^2 <= energy density <= c2 |s|^2 at the given points"""
        eigenvalues = np.linalg.eigvals(self.compliance_at(points)).real
        return float(eigenvalues.min()), float(eigenvalues.max())

    def to_dict(self):
        if self.kind == "orthotropic":
            y_x, y_y, nu_xy, g_xy = self.orthotropic_constants
            return {"kind": "orthotropic", "Yx": y_x, "Yy": y_y, "nu_xy": nu_xy, "Gxy": g_xy}
        youngs = self.youngs.to_dict() if callable(self.youngs) else self.youngs
        return {"kind": "isotropic", "Y": youngs, "nu": self.nu}


def material_from_dict(spec):
    """Build a material from its config block"""
    kind = spec.get("kind", "isotropic")
    if kind == "orthotropic":
        return Material.orthotropic(
            float(spec["Yx"]), float(spec["Yy"]), float(spec["nu_xy"]), float(spec["Gxy"])
        )
    youngs = spec.get("Y", 1.0)
    if isinstance(youngs, str):
        youngs = YoungsProfile(
            youngs,
            y_low=float(spec.get("Y2", 3.0)),
            y_high=float(spec.get("Y1", 1.0)),
            interface=float(spec.get("interface", 0.5)),
            zeta=float(spec.get("zeta", 0.0)),
        )
    elif isinstance(youngs, dict):
        youngs = YoungsProfile(
            youngs["profile"],
            y_low=float(youngs.get("Y2", 3.0)),
            y_high=float(youngs.get("Y1", 1.0)),
            interface=float(youngs.get("interface", 0.5)),
            zeta=float(youngs.get("zeta", 0.0)),
        )
    else:
        youngs = float(youngs)
    return Material.isotropic(youngs, float(spec.get("nu", 0.33)))


def _check_support(material, field):
    if field.mesh.radial and material.kind != "isotropic":
        raise ValueError("Radial fields only support isotropic materials")


def compliance_qp(material, mesh):
    """Compliance matrices at the quadrature points of a mesh"""
    return material.compliance_at(mesh.qp_points)


def compliance_apply(material, sigma):
    """Strain field of a stress field"""
    _check_support(material, sigma)
    values = np.einsum("qij,qj->qi", compliance_qp(material, sigma.mesh), sigma.values)

    def strain(points):
        return np.einsum("qij,qj->qi", material.compliance_at(points), sigma.sampler(points))

    gradient = None
    if material.homogeneous:
        constant = material.compliance_at(np.zeros((1, sigma.mesh.dim)))[0]

        def gradient(points):
            return np.einsum("ij,qjd->qid", constant, sigma.sampler(points, 1))

    return SymTensorField2(
        sigma.mesh,
        FunctionSampler(strain, gradient),
        values=values,
        wavenumber=sigma.wavenumber,
        parity=sigma.parity,
        jump_lines=set(sigma.jump_lines) | set(material.jump_lines),
    )


def energy_inner(material, a, b):
    """<C^-1 A, B>"""
    _check_support(material, a)
    a._check_compatible(b)
    strain = np.einsum("qij,qj->qi", compliance_qp(material, a.mesh), a.values)
    weights = a.mesh.qp_weights[:, None] * component_weights(a)
    return float(np.sum(weights * strain * b.values))


def strain_energy(material, sigma):
    """Squared strain-energy norm <C^-1 sigma, sigma>"""
    return energy_inner(material, sigma, sigma)
