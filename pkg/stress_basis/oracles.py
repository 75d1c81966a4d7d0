"""Reference solutions, error metrics and the Cesaro integral diagnostic."""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.integrate

from stress_basis.constitutive import strain_energy
from stress_basis.exceptions import NumericalError
from stress_basis.fem import solve_displacement
from stress_basis.fields import (
    FunctionSampler,
    SymTensorField2,
    equilibrium_residual,
    planar_trace,
    scalar_weight,
)
from stress_basis.loading import annulus_m1_loading, pressurized_annulus

logger = logging.getLogger(__name__)

BVP_NODES = 200
BVP_TOL = 1e-10
LOOP_POINTS = 512
METHODS = ("analytic", "ode-bvp", "displacement-fem")


@dataclass(frozen=True, eq=False)
class OracleSolution:
    """A reference stress with the loading it answers"""

    field: SymTensorField2
    method: str
    loading: object
    metadata: dict = field(default_factory=dict)

    def describe(self):
        return {"method": self.method, **self.metadata}


def _isotropic_constants(material):
    if material is None:
        return None
    if material.kind != "isotropic" or not material.homogeneous:
        raise ValueError("This oracle needs a homogeneous isotropic material")
    return float(material.youngs), float(material.nu)


def _cos_radial_field(mesh, values, gradients, wavenumber):
    return SymTensorField2(
        mesh,
        FunctionSampler(values, gradients),
        wavenumber=wavenumber,
        parity="cos",
    )


def lame_oracle(mesh, p, material=None, p_out=0.0):
    """Thick-walled cylinder under inner pressure p and outer pressure p_out"""
    _isotropic_constants(material)
    r_a, r_b = mesh.domain.r_a, mesh.domain.r_b
    spread = r_b**2 - r_a**2
    a_const = (p * r_a**2 - p_out * r_b**2) / spread
    b_const = -(p - p_out) * r_a**2 * r_b**2 / spread

    def values(points):
        r = points[:, 0]
        return np.column_stack(
            [a_const + b_const / r**2, a_const - b_const / r**2, np.zeros_like(r)]
        )

    def gradients(points):
        r = points[:, 0]
        slope = -2.0 * b_const / r**3
        return np.column_stack([slope, -slope, np.zeros_like(r)])[:, :, None]

    oracle_field = _cos_radial_field(mesh, values, gradients, 0)
    return OracleSolution(
        oracle_field,
        "analytic",
        pressurized_annulus(mesh.domain, p, p_out),
        {"A": a_const, "B": b_const},
    )


def _m1_rhs(r, y):
    """First-order form in (srr, srt, stt, stt') of equilibrium and trace harmonicity"""
    srr, srt, stt, dstt = y
    dsrr = -(srt + srr - stt) / r
    dsrt = -(2.0 * srt - stt) / r
    d2srr = -(dsrt + dsrr - dstt) / r + (srt + srr - stt) / r**2
    d2stt = -d2srr - (dsrr + dstt) / r + (srr + stt) / r**2
    return np.array([dsrr, dsrt, dstt, d2stt])


def _m1_conditions(ya, yb, r_a, r_b, nu):
    """Hole tractions, the Cesaro condition on the hole and the outer tractions, in that order"""
    srr_a, srt_a, stt_a, dstt_a = ya
    dsrr_a = -(srt_a + srr_a - stt_a) / r_a
    # the common factor (1 + nu) / Y is dropped
    e_rr = (1.0 - nu) * srr_a - nu * stt_a
    e_rt = srt_a
    de_tt = (1.0 - nu) * dstt_a - nu * dsrr_a
    return np.array(
        [
            srr_a - 1.0,
            srt_a,
            2.0 * e_rt + e_rr - r_a * de_tt,
            yb[0] - r_a / r_b,
            yb[1],
        ]
    )


def _m1_condition_rank(r_a, r_b, nu):
    """Rank of the five boundary conditions on the four-dimensional solution space"""
    grid = np.linspace(r_a, r_b, BVP_NODES)
    linear = np.zeros((5, 4))
    offset = _m1_conditions(np.zeros(4), np.zeros(4), r_a, r_b, nu)
    for k in range(4):
        start = np.zeros(4)
        start[k] = 1.0
        solution = scipy.integrate.solve_ivp(
            _m1_rhs, (r_a, r_b), start, t_eval=grid, rtol=1e-12, atol=1e-14
        )
        linear[:, k] = _m1_conditions(start, solution.y[:, -1], r_a, r_b, nu) - offset
    rank = int(np.linalg.matrix_rank(linear, tol=1e-8 * np.abs(linear).max()))
    augmented = int(
        np.linalg.matrix_rank(
            np.column_stack([linear, -offset]), tol=1e-8 * np.abs(linear).max()
        )
    )
    return rank, augmented


def annulus_m1_oracle(mesh, nu=0.33, youngs=1.0):
    """Wavenumber-one annulus stress with srr = cos(t) on the hole, by collocation"""
    r_a, r_b = mesh.domain.r_a, mesh.domain.r_b
    rank, augmented = _m1_condition_rank(r_a, r_b, nu)
    if rank != 4 or augmented != 4:
        raise NumericalError(
            f"Wavenumber-one boundary conditions have rank {rank} (augmented {augmented}), "
            "expected 4"
        )

    def conditions(ya, yb):
        # the outer radial traction follows from global equilibrium and is checked afterwards
        return _m1_conditions(ya, yb, r_a, r_b, nu)[[0, 1, 2, 4]]

    grid = np.linspace(r_a, r_b, BVP_NODES)
    guess = np.zeros((4, BVP_NODES))
    guess[0] = np.interp(grid, [r_a, r_b], [1.0, r_a / r_b])
    result = scipy.integrate.solve_bvp(
        _m1_rhs, conditions, grid, guess, tol=BVP_TOL, max_nodes=100000
    )
    if not result.success:
        raise NumericalError(f"Wavenumber-one BVP did not converge: {result.message}")
    outer = float(result.sol(r_b)[0] - r_a / r_b)
    if abs(outer) > 1e-6:
        raise NumericalError(f"Dropped outer traction condition misses by {outer:.2e}", outer)

    def values(points):
        y = result.sol(points[:, 0])
        return np.column_stack([y[0], y[2], y[1]])

    def gradients(points):
        r = points[:, 0]
        derivative = _m1_rhs(r, result.sol(r))
        return np.column_stack([derivative[0], derivative[2], derivative[1]])[:, :, None]

    oracle_field = _cos_radial_field(mesh, values, gradients, 1)
    logger.info(
        "Wavenumber-one oracle: %d collocation nodes, outer traction check %.2e",
        len(result.x),
        outer,
    )
    return OracleSolution(
        oracle_field,
        "ode-bvp",
        annulus_m1_loading(mesh.domain),
        {
            "nodes": int(len(result.x)),
            "condition_rank": rank,
            "dropped_condition": "outer srr",
            "dropped_condition_residual": outer,
            "nu": nu,
            "Y": youngs,
        },
    )


def displacement_fem_oracle(mesh, loading, material, refinement=2):
    """Displacement finite-element stress, evaluated on the quadrature points of `mesh`"""
    if mesh.radial:
        raise ValueError("The displacement oracle needs a rectangle mesh")
    if refinement < 1:
        raise ValueError(f"refinement must be at least 1, got {refinement}")
    nx, ny = mesh.shape
    solution = solve_displacement(
        mesh.domain,
        loading,
        material,
        refinement * nx,
        refinement * ny,
        feature_lines=mesh.feature_lines,
    )
    gradient = solution.stress_gradient if material.homogeneous else None
    jump_lines = set(loading.jump_lines) | set(material.jump_lines)
    oracle_field = SymTensorField2(
        mesh, FunctionSampler(solution.stress, gradient), jump_lines=jump_lines
    )
    return OracleSolution(
        oracle_field,
        "displacement-fem",
        loading,
        {
            "mesh": solution.mesh.describe(),
            "refinement": refinement,
            "solve_residual": solution.residual,
            "energy": solution.strain_energy(),
        },
    )


def oracle_residual(oracle):
    """Equilibrium residual of an oracle against its loading"""
    return equilibrium_residual(oracle.field, oracle.loading)


def approximation_error(sigma_true, sigma_n, material):
    """Relative strain-energy error ||sigma - sigma_N|| / ||sigma||"""
    denominator = strain_energy(material, sigma_true)
    if not denominator > 0:
        raise ValueError("Reference stress has zero strain energy")
    return float(np.sqrt(strain_energy(material, sigma_true - sigma_n) / denominator))


def trace_energy(sigma):
    """Squared L2 norm of the planar trace"""
    trace = planar_trace(sigma)
    return scalar_weight(sigma) * float(np.dot(sigma.mesh.qp_weights, trace.values**2))


@dataclass(frozen=True)
class CesaroLoop:
    """Closed loop given by points, tangents dx/dt and quadrature weights in t"""

    points: np.ndarray
    tangents: np.ndarray
    weights: np.ndarray
    reference: tuple = (0.0, 0.0)
    vertices: Optional[np.ndarray] = None

    @classmethod
    def circle(cls, radius, n_points=LOOP_POINTS, center=(0.0, 0.0), reference=(0.0, 0.0)):
        """Counter-clockwise circle sampled with the periodic trapezoidal rule"""
        t = 2.0 * np.pi * np.arange(n_points) / n_points
        points = np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)])
        tangents = radius * np.column_stack([-np.sin(t), np.cos(t)])
        return cls(points, tangents, np.full(n_points, 2.0 * np.pi / n_points), tuple(reference))

    @classmethod
    def polygon(cls, vertices, reference=(0.0, 0.0), n_gauss=8):
        """Closed polyline through the vertices, Gauss points on every segment"""
        vertices = np.asarray(vertices, dtype=float)
        if not np.allclose(vertices[0], vertices[-1]):
            raise ValueError("Loop is not closed: first and last vertex differ")
        xi, wi = np.polynomial.legendre.leggauss(n_gauss)
        s = 0.5 * (xi + 1.0)
        starts, ends = vertices[:-1], vertices[1:]
        points = (starts[:, None, :] + s[None, :, None] * (ends - starts)[:, None, :]).reshape(-1, 2)
        tangents = np.repeat(ends - starts, n_gauss, axis=0)
        weights = np.tile(0.5 * wi, len(starts))
        return cls(points, tangents, weights, tuple(reference), vertices)

    def winding_number(self, center=(0.0, 0.0)):
        """Turns of the loop around center, summed exactly over polygon edges"""
        if self.vertices is not None:
            rel = self.vertices - np.asarray(center)
            cross = rel[:-1, 0] * rel[1:, 1] - rel[:-1, 1] * rel[1:, 0]
            dot = np.sum(rel[:-1] * rel[1:], axis=1)
            return float(np.sum(np.arctan2(cross, dot)) / (2.0 * np.pi))
        rel = self.points - np.asarray(center)
        angle_rate = (rel[:, 0] * self.tangents[:, 1] - rel[:, 1] * self.tangents[:, 0]) / np.sum(
            rel**2, axis=1
        )
        return float(np.dot(self.weights, angle_rate) / (2.0 * np.pi))

    def check(self, domain):
        """Raise ValueError unless the loop is closed, counter-clockwise and around the hole"""
        length = float(np.dot(self.weights, np.linalg.norm(self.tangents, axis=1)))
        gap = np.linalg.norm(self.weights @ self.tangents)
        if gap > 1e-9 * max(length, 1.0):
            raise ValueError(f"Loop is not closed, endpoints differ by {gap:.2e}")
        if domain.kind == "annulus":
            radii = np.linalg.norm(self.points, axis=1)
            if radii.min() <= domain.r_a or radii.max() >= domain.r_b:
                raise ValueError("Loop leaves the annulus")
        if abs(self.winding_number() - 1.0) > 1e-6:
            raise ValueError("Loop must wind once counter-clockwise around the hole")


def _rotation(theta):
    return np.cos(theta), np.sin(theta)


def _to_cartesian(srr, stt, srt, theta):
    c, s = _rotation(theta)
    return np.column_stack(
        [
            srr * c**2 + stt * s**2 - 2.0 * srt * s * c,
            srr * s**2 + stt * c**2 + 2.0 * srt * s * c,
            (srr - stt) * s * c + srt * (c**2 - s**2),
        ]
    )


def _to_cartesian_dtheta(srr, stt, srt, theta):
    """Derivative of the rotation coefficients of _to_cartesian at fixed polar components"""
    c, s = _rotation(theta)
    return np.column_stack(
        [
            -2.0 * srr * s * c + 2.0 * stt * s * c - 2.0 * srt * (c**2 - s**2),
            2.0 * srr * s * c - 2.0 * stt * s * c + 2.0 * srt * (c**2 - s**2),
            (srr - stt) * (c**2 - s**2) - 4.0 * srt * s * c,
        ]
    )


def cartesian_stress(sigma, points):
    """Cartesian stress components and their x, y gradients at planar points"""
    points = np.atleast_2d(points)
    if not sigma.mesh.radial:
        return sigma.sampler(points), sigma.sampler(points, 1)
    m = sigma.wavenumber
    r = np.hypot(points[:, 0], points[:, 1])
    theta = np.arctan2(points[:, 1], points[:, 0])
    profiles = sigma.sampler(r[:, None])
    slopes = sigma.sampler(r[:, None], 1)[:, :, 0]
    if sigma.parity == "cos":
        primary, secondary = np.cos(m * theta), np.sin(m * theta)
        d_primary, d_secondary = -m * secondary, m * primary
    else:
        primary, secondary = -np.sin(m * theta), np.cos(m * theta)
        d_primary, d_secondary = -m * np.cos(m * theta), -m * np.sin(m * theta)

    def polar(values, f, g):
        return values[:, 0] * f, values[:, 1] * f, values[:, 2] * g

    cartesian = _to_cartesian(*polar(profiles, primary, secondary), theta)
    d_r = _to_cartesian(*polar(slopes, primary, secondary), theta)
    d_theta = _to_cartesian(*polar(profiles, d_primary, d_secondary), theta) + _to_cartesian_dtheta(
        *polar(profiles, primary, secondary), theta
    )
    c, s = _rotation(theta)
    d_x = c[:, None] * d_r - (s / r)[:, None] * d_theta
    d_y = s[:, None] * d_r + (c / r)[:, None] * d_theta
    return cartesian, np.stack([d_x, d_y], axis=-1)


def cesaro_diagnostic(sigma, loop, material):
    """The two in-plane Cesaro loop integrals F_i = loop integral of U_ij dx_j"""
    _isotropic_constants(material)
    loop.check(sigma.mesh.domain)
    stress, gradient = cartesian_stress(sigma, loop.points)
    compliance = material.compliance_at(loop.points)
    strain = np.einsum("nij,nj->ni", compliance, stress)
    strain_gradient = np.einsum("nij,njd->nid", compliance, gradient)

    def tensor(components):
        xx, yy, xy = components[:, 0], components[:, 1], components[:, 2]
        return np.stack([np.stack([xx, xy], -1), np.stack([xy, yy], -1)], -2)

    eps = tensor(strain)
    # deps[n, i, j, l] = eps_ij,l
    deps = np.stack([tensor(strain_gradient[:, :, l]) for l in range(2)], axis=-1)
    # incompatibility[n, i, l, j] = eps_ij,l - eps_lj,i
    incompatibility = np.transpose(deps, (0, 1, 3, 2)) - np.einsum("nlji->nilj", deps)
    offset = np.asarray(loop.reference)[None, :] - loop.points
    u = eps + np.einsum("nl,nilj->nij", offset, incompatibility)
    integrand = np.einsum("nij,nj->ni", u, loop.tangents)
    f_1, f_2 = loop.weights @ integrand
    return float(f_1), float(f_2)


def trace_laplacian(sigma, points=None, step=1e-6):
    """Laplacian of the planar trace at the given points (quadrature points by default).

    Second derivatives are central differences of the exact trace gradient.
    """
    mesh = sigma.mesh
    points = mesh.qp_points if points is None else np.atleast_2d(points)

    def trace_gradient(at):
        gradient = sigma.sampler(at, 1)
        return gradient[:, 0, :] + gradient[:, 1, :]

    if mesh.radial:
        m = sigma.wavenumber
        r = points[:, 0]
        values = sigma.sampler(points)
        trace = values[:, 0] + values[:, 1]
        slope = trace_gradient(points)[:, 0]
        curvature = (
            trace_gradient((r + step)[:, None])[:, 0] - trace_gradient((r - step)[:, None])[:, 0]
        ) / (2.0 * step)
        return curvature + slope / r - m**2 * trace / r**2
    total = np.zeros(len(points))
    for axis in range(2):
        shift = np.zeros(2)
        shift[axis] = step
        total += (
            trace_gradient(points + shift)[:, axis] - trace_gradient(points - shift)[:, axis]
        ) / (2.0 * step)
    return total


def expected_trace_cesaro(loading, material):
    """-(1 + nu) / Y times the loop integral of the x traction on the hole"""
    youngs, nu = _isotropic_constants(material)
    hole = loading.domain.r_a
    theta = 2.0 * np.pi * np.arange(LOOP_POINTS) / LOOP_POINTS
    t_r = np.zeros_like(theta)
    t_t = np.zeros_like(theta)
    for entry in loading.radial:
        if entry.boundary == "inner":
            srr, srt = entry.polar_components(theta)
            # the outward normal of the body points into the hole
            t_r -= srr
            t_t -= srt
    t_x = t_r * np.cos(theta) - t_t * np.sin(theta)
    integral = hole * 2.0 * np.pi / LOOP_POINTS * float(np.sum(t_x))
    return -(1.0 + nu) / youngs * integral


def oracle_from_dict(mesh, spec, loading, material) -> Optional[OracleSolution]:
    """Build the oracle named by a config block, None for "none" """
    kind = spec.get("kind", "none") if isinstance(spec, dict) else spec
    if kind in (None, "none"):
        return None
    if kind == "lame":
        return lame_oracle(
            mesh, float(spec.get("p", 1.0)), material, float(spec.get("p_out", 0.0))
        )
    if kind == "annulus_m1":
        youngs, nu = _isotropic_constants(material)
        return annulus_m1_oracle(mesh, nu, youngs)
    if kind == "fem":
        return displacement_fem_oracle(
            mesh, loading, material, int(spec.get("refinement", 2))
        )
    raise ValueError(f"Unknown oracle '{kind}', choose from lame, annulus_m1, fem, none")
