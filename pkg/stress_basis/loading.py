"""Prescribed boundary tractions and body forces, with their resultants.

Rectangle tractions are callables `points -> (n, 2)` per side. Annulus tractions are amplitude
entries of one wavenumber and trigonometric family on the inner or outer circle, prescribing
srr and srt in the same convention as radial fields.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

from stress_basis.meshes import RADIAL_SIDES, RECTANGLE_SIDES

logger = logging.getLogger(__name__)

EQUILIBRIUM_TOL = 1e-10
BAND_PROFILES = ("discontinuous", "quartic", "uniform")
_GAUSS = 8
_SEGMENTS = 16
_ANGLES = 64


@dataclass(frozen=True)
class RadialTraction:
    """srr and srt amplitudes of one wavenumber and family on one circle"""

    boundary: str
    wavenumber: int
    parity: str
    srr: float
    srt: float = 0.0

    def __post_init__(self):
        if self.boundary not in RADIAL_SIDES:
            raise ValueError(f"Radial traction boundary must be in {RADIAL_SIDES}")
        if self.parity not in ("cos", "sin"):
            raise ValueError(f"Radial traction parity must be cos or sin, got {self.parity}")

    @property
    def tag(self):
        return (self.wavenumber, self.parity)

    def polar_components(self, theta):
        """(srr, srt) as functions of the angle"""
        m = self.wavenumber
        if self.parity == "cos":
            return self.srr * np.cos(m * theta), self.srt * np.sin(m * theta)
        return -self.srr * np.sin(m * theta), self.srt * np.cos(m * theta)


@dataclass(frozen=True)
class BodyForce:
    """Conservative body force b = -grad V"""

    potential: Callable
    gradient: Callable
    jump_lines: Tuple[Tuple[str, float], ...] = ()

    def __call__(self, points):
        return -np.asarray(self.gradient(points), dtype=float)


def _segments(length, cuts):
    """Composite Gauss nodes on [0, length] with element breaks at `cuts`"""
    xi, wi = leggauss(_GAUSS)
    breaks = np.unique(np.concatenate([np.linspace(0.0, length, _SEGMENTS + 1), cuts]))
    half = 0.5 * np.diff(breaks)
    mid = 0.5 * (breaks[1:] + breaks[:-1])
    return (mid[:, None] + half[:, None] * xi).ravel(), (half[:, None] * wi).ravel()


@dataclass(frozen=True, eq=False)
class LoadingSpec:
    """Loading of one domain. Construction checks global self-equilibration."""

    domain: object
    tractions: Mapping[str, Callable] = field(default_factory=dict)
    radial: Tuple[RadialTraction, ...] = ()
    body_force: Optional[BodyForce] = None
    jump_lines: Tuple[Tuple[str, float], ...] = ()
    name: str = "custom"

    def __post_init__(self):
        radial = self.domain.kind == "annulus"
        if radial and (self.tractions or self.body_force is not None):
            raise ValueError("Annulus loadings are given as radial traction entries only")
        if not radial and self.radial:
            raise ValueError("Radial traction entries need an annulus domain")
        unknown = set(self.tractions) - set(RECTANGLE_SIDES)
        if unknown:
            raise ValueError(f"Unknown rectangle sides {sorted(unknown)}")
        force_x, force_y, moment = self.resultants()
        if max(abs(force_x), abs(force_y), abs(moment)) > EQUILIBRIUM_TOL:
            raise ValueError(
                f"Loading '{self.name}' is not self-equilibrated: net force "
                f"({force_x:.3e}, {force_y:.3e}), net moment {moment:.3e}"
            )

    @property
    def body_force_vector(self):
        return self.body_force

    def traction(self, side, points):
        """Traction vectors on a rectangle side"""
        function = self.tractions.get(side)
        if function is None:
            return np.zeros((len(points), 2))
        return np.asarray(function(np.atleast_2d(points)), dtype=float)

    def boundary_values(self, boundary, tag=(None, None)):
        """Prescribed values matching `fields.boundary_traction` at the mesh boundary points"""
        if self.domain.kind == "annulus":
            out = np.zeros((len(boundary.points), 2))
            for entry in self.radial:
                if entry.tag == tag:
                    row = RADIAL_SIDES.index(entry.boundary)
                    out[row] += (entry.srr, entry.srt)
            return out
        out = np.zeros((len(boundary.points), 2))
        for side in RECTANGLE_SIDES:
            mask = boundary.tags == side
            if np.any(mask):
                out[mask] = self.traction(side, boundary.points[mask])
        return out

    def _side_points(self, side):
        lx, ly = self.domain.lx, self.domain.ly
        axis = "x" if side in ("bottom", "top") else "y"
        length = lx if axis == "x" else ly
        cuts = [value for line_axis, value in self.jump_lines if line_axis == axis]
        s, w = _segments(length, cuts)
        fixed = {"bottom": 0.0, "top": ly, "left": 0.0, "right": lx}[side]
        if axis == "x":
            return np.column_stack([s, np.full_like(s, fixed)]), w
        return np.column_stack([np.full_like(s, fixed), s]), w

    def _boundary_resultant(self, side):
        points, weights = self._side_points(side)
        traction = self.traction(side, points)
        force = weights @ traction
        moment = weights @ (points[:, 0] * traction[:, 1] - points[:, 1] * traction[:, 0])
        return force[0], force[1], moment

    def _body_resultant(self):
        x_cuts = [v for a, v in self.body_force.jump_lines if a == "x"]
        y_cuts = [v for a, v in self.body_force.jump_lines if a == "y"]
        xs, wx = _segments(self.domain.lx, x_cuts)
        ys, wy = _segments(self.domain.ly, y_cuts)
        grid_x, grid_y = np.meshgrid(xs, ys, indexing="ij")
        points = np.column_stack([grid_x.ravel(), grid_y.ravel()])
        weights = np.outer(wx, wy).ravel()
        force = self.body_force(points)
        moment = weights @ (points[:, 0] * force[:, 1] - points[:, 1] * force[:, 0])
        return (weights @ force)[0], (weights @ force)[1], moment

    def _circle_resultant(self, entries, boundary):
        radius = self.domain.r_a if boundary == "inner" else self.domain.r_b
        sign = -1.0 if boundary == "inner" else 1.0
        theta = 2.0 * np.pi * np.arange(_ANGLES) / _ANGLES
        weight = radius * 2.0 * np.pi / _ANGLES
        t_r = np.zeros_like(theta)
        t_t = np.zeros_like(theta)
        for entry in entries:
            if entry.boundary == boundary:
                srr, srt = entry.polar_components(theta)
                t_r += sign * srr
                t_t += sign * srt
        force_x = weight * np.sum(t_r * np.cos(theta) - t_t * np.sin(theta))
        force_y = weight * np.sum(t_r * np.sin(theta) + t_t * np.cos(theta))
        moment = weight * radius * np.sum(t_t)
        return force_x, force_y, moment

    def resultants(self):
        """Net force and moment of all tractions and body forces"""
        totals = np.zeros(3)
        if self.domain.kind == "annulus":
            for boundary in RADIAL_SIDES:
                totals += self._circle_resultant(self.radial, boundary)
            return tuple(totals)
        for side in self.tractions:
            totals += self._boundary_resultant(side)
        if self.body_force is not None:
            totals += self._body_resultant()
        return tuple(totals)

    def hole_resultants(self):
        """Net force and moment on each internal hole"""
        if self.domain.kind != "annulus":
            return []
        force_x, force_y, moment = self._circle_resultant(self.radial, "inner")
        return [{"hole": "inner", "force": (force_x, force_y), "moment": moment}]

    def has_hole_net_force(self, tol=EQUILIBRIUM_TOL):
        return any(np.hypot(*hole["force"]) > tol for hole in self.hole_resultants())

    def describe(self):
        return {
            "name": self.name,
            "domain": self.domain.to_dict(),
            "holes": [
                {"hole": h["hole"], "force": list(h["force"]), "moment": h["moment"]}
                for h in self.hole_resultants()
            ],
        }


def no_loading(domain):
    """Traction-free boundary without body force"""
    return LoadingSpec(domain, name="traction_free")


def pressurized_annulus(domain, p_in, p_out=0.0):
    """Uniform pressure on the inner and outer circles"""
    entries = (
        RadialTraction("inner", 0, "cos", -float(p_in)),
        RadialTraction("outer", 0, "cos", -float(p_out)),
    )
    return LoadingSpec(domain, radial=entries, name=f"pressure_{p_in:g}_{p_out:g}")


def annulus_m1_loading(domain):
    """srr = cos(t) on the hole, srr = cos(t) / 3 outside, no shear"""
    entries = (
        RadialTraction("inner", 1, "cos", 1.0),
        RadialTraction("outer", 1, "cos", domain.r_a / domain.r_b),
    )
    return LoadingSpec(domain, radial=entries, name="annulus_m1")


def band_profile(name, lx=1.0):
    """Normalized pressure distribution of the band loading"""
    if name not in BAND_PROFILES:
        raise ValueError(f"Unknown band profile '{name}', choose from {BAND_PROFILES}")

    def profile(x):
        s = np.asarray(x, dtype=float) / lx
        inside = (s >= 0.25) & (s <= 0.75)
        if name == "uniform":
            return np.ones_like(s)
        if name == "discontinuous":
            return inside.astype(float)
        return np.where(inside, 256.0 * (s - 0.25) ** 2 * (s - 0.75) ** 2, 0.0)

    return profile


def band_loading(domain, p, profile="discontinuous"):
    """Pressure p * profile(x) on the top and bottom edges"""
    shape = band_profile(profile, domain.lx)

    def top(points):
        return np.column_stack([np.zeros(len(points)), -p * shape(points[:, 0])])

    def bottom(points):
        return np.column_stack([np.zeros(len(points)), p * shape(points[:, 0])])

    jumps = () if profile == "uniform" else (("x", 0.25 * domain.lx), ("x", 0.75 * domain.lx))
    return LoadingSpec(
        domain,
        tractions={"top": top, "bottom": bottom},
        jump_lines=jumps,
        name=f"band_{profile}",
    )


def uniform_pressure_loading(domain, p):
    """Pressure p on all four sides of a rectangle"""

    def side(normal):
        def traction(points):
            return np.tile(-p * np.asarray(normal, dtype=float), (len(points), 1))

        return traction

    normals = {"bottom": (0, -1), "right": (1, 0), "top": (0, 1), "left": (-1, 0)}
    return LoadingSpec(
        domain,
        tractions={name: side(normal) for name, normal in normals.items()},
        name="hydrostatic",
    )


def gravity_loading(domain, rho1, rho2, g):
    """Two-density block on a frictionless table, densities rho2 below y = Ly/2, rho1 above"""
    half = 0.5 * domain.ly

    def potential(points):
        y = points[:, 1]
        return np.where(y < half, rho2 * g * y, (rho2 - rho1) * g * half + rho1 * g * y)

    def gradient(points):
        y = points[:, 1]
        return np.column_stack([np.zeros_like(y), np.where(y < half, rho2 * g, rho1 * g)])

    reaction = g * (rho1 + rho2) * half

    def bottom(points):
        return np.column_stack([np.zeros(len(points)), np.full(len(points), reaction)])

    body = BodyForce(potential, gradient, jump_lines=(("y", half),))
    return LoadingSpec(
        domain,
        tractions={"bottom": bottom},
        body_force=body,
        jump_lines=(("y", half),),
        name="gravity",
    )
