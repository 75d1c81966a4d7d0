"""Field containers, quadrature, inner products and equilibrium diagnostics.

A field is a sampler (points -> components or component gradients) bound to a mesh. Component
values are evaluated once at the mesh quadrature points, gradients on first use. Planar fields
store (sxx, syy, sxy); radial fields store the amplitude profiles (srr, stt, srt) of one azimuthal
wavenumber m and one trigonometric family:

    cos family: srr = a(r) cos(m t), stt = b(r) cos(m t), srt = c(r) sin(m t)
    sin family: srr = -a(r) sin(m t), stt = -b(r) sin(m t), srt = c(r) cos(m t)
"""
import logging
from collections import namedtuple
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.polynomial.legendre import leggauss

from stress_basis.exceptions import MeshError
from stress_basis.files import atomic_write_text

logger = logging.getLogger(__name__)

PARITIES = ("cos", "sin")
EquilibriumResidual = namedtuple(
    "EquilibriumResidual", ["interior_norm", "boundary_mismatch", "loading"]
)


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule on the reference element [-1, 1]^dim."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __post_init__(self):
        if np.any(self.weights <= 0.0):
            raise ValueError("Quadrature weights must be positive")
        dim = self.points.shape[1]
        if abs(self.weights.sum() - 2.0**dim) > 1e-12:
            raise ValueError(
                f"Quadrature weights sum to {self.weights.sum()}, expected {2.0**dim}"
            )

    @classmethod
    def gauss(cls, n_points, dim=1):
        """Tensor Gauss-Legendre rule with `n_points` per direction, exact to degree 2n-1"""
        if n_points < 1:
            raise ValueError(f"Need at least one quadrature point, got {n_points}")
        xi, wi = leggauss(n_points)
        if dim == 1:
            return cls(xi[:, None], wi, 2 * n_points - 1)
        if dim != 2:
            raise ValueError(f"Unsupported reference dimension {dim}")
        # local index q = iy * n + ix
        eta, xsi = np.meshgrid(xi, xi, indexing="ij")
        points = np.column_stack([xsi.ravel(), eta.ravel()])
        return cls(points, np.outer(wi, wi).ravel(), 2 * n_points - 1)

    @property
    def dim(self):
        return self.points.shape[1]

    def integrate(self, function):
        """Integrate `function(points)` over the reference element"""
        return float(np.dot(self.weights, function(self.points)))


class Sampler:
    """Evaluates field components (nu=0) or their spatial gradients (nu=1) at points."""

    merge_key = None

    def __call__(self, points, nu=0):
        raise NotImplementedError

    def on_grid(self, xs, ys, nu=0):
        """Evaluate on the tensor grid xs x ys, result indexed [ix, iy, ...]"""
        grid_x, grid_y = np.meshgrid(xs, ys, indexing="ij")
        out = self(np.column_stack([grid_x.ravel(), grid_y.ravel()]), nu)
        return out.reshape(len(xs), len(ys), *out.shape[1:])


class FunctionSampler(Sampler):
    """Sampler backed by closed-form callables."""

    def __init__(self, function, gradient=None):
        self.function = function
        self.gradient = gradient

    def __call__(self, points, nu=0):
        points = np.asarray(points, dtype=float)
        if nu == 0:
            return np.asarray(self.function(points), dtype=float)
        if self.gradient is None:
            raise ValueError("Field was built without a gradient and cannot be differentiated")
        return np.asarray(self.gradient(points), dtype=float)


class CombinationSampler(Sampler):
    """Linear combination of samplers. Samplers sharing a merge_key are folded into one."""

    def __init__(self, samplers, coefficients):
        terms = []
        for sampler, coefficient in zip(samplers, coefficients):
            if isinstance(sampler, CombinationSampler):
                terms.extend((s, coefficient * c) for s, c in sampler.terms)
            else:
                terms.append((sampler, float(coefficient)))

        groups = {}
        plain = []
        for sampler, coefficient in terms:
            if sampler.merge_key is None:
                plain.append((sampler, coefficient))
            else:
                groups.setdefault(sampler.merge_key, []).append((sampler, coefficient))
        for group in groups.values():
            if len(group) == 1:
                plain.append(group[0])
            else:
                plain.append((type(group[0][0]).merge(group), 1.0))
        self.terms = tuple(plain)

    def __call__(self, points, nu=0):
        total = None
        for sampler, coefficient in self.terms:
            part = coefficient * sampler(points, nu)
            total = part if total is None else total + part
        return total

    def on_grid(self, xs, ys, nu=0):
        total = None
        for sampler, coefficient in self.terms:
            part = coefficient * sampler.on_grid(xs, ys, nu)
            total = part if total is None else total + part
        return total


class _Field:
    """Shared state of scalar and tensor fields."""

    n_components = 1

    def __init__(
        self, mesh, sampler, values=None, wavenumber=None, parity=None, jump_lines=()
    ):
        if mesh.radial != (wavenumber is not None):
            raise ValueError("A wavenumber tag is required on radial meshes and only there")
        if wavenumber is not None:
            if int(wavenumber) < 0:
                raise ValueError(f"Wavenumber must be non-negative, got {wavenumber}")
            if parity not in PARITIES:
                raise ValueError(f"Parity must be one of {PARITIES}, got {parity}")
        self.mesh = mesh
        self.sampler = sampler
        self.wavenumber = None if wavenumber is None else int(wavenumber)
        self.parity = parity if wavenumber is not None else None
        self.jump_lines = tuple(sorted(set(jump_lines)))
        if values is None:
            values = mesh.sample(sampler, 0)
        values = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(values)):
            raise ValueError("Field values must be finite")
        values.setflags(write=False)
        self.values = values

    @property
    def tag(self):
        return (self.wavenumber, self.parity)

    @cached_property
    def gradients(self):
        """Component gradients at the quadrature points, shape (n_qp, n_components, dim)"""
        grads = self.mesh.sample(self.sampler, 1)
        grads.setflags(write=False)
        return grads

    def _check_compatible(self, other):
        if not same_mesh(self.mesh, other.mesh):
            raise ValueError("Fields live on different meshes")
        if self.tag != other.tag:
            raise ValueError(
                f"Wavenumber mismatch: {self.tag} against {other.tag}"
            )

    @classmethod
    def combine(cls, fields, coefficients):
        """Return sum(c_i * f_i) over fields sharing a mesh and tag"""
        fields = list(fields)
        coefficients = [float(c) for c in coefficients]
        if not fields or len(fields) != len(coefficients):
            raise ValueError("combine needs matching, non-empty fields and coefficients")
        first = fields[0]
        values = np.zeros_like(first.values)
        jump_lines = set()
        for field, coefficient in zip(fields, coefficients):
            first._check_compatible(field)
            values += coefficient * field.values
            jump_lines.update(field.jump_lines)
        sampler = CombinationSampler([f.sampler for f in fields], coefficients)
        return cls(
            first.mesh,
            sampler,
            values=values,
            wavenumber=first.wavenumber,
            parity=first.parity,
            jump_lines=jump_lines,
        )

    def __add__(self, other):
        return self.combine([self, other], [1.0, 1.0])

    def __sub__(self, other):
        return self.combine([self, other], [1.0, -1.0])

    def __mul__(self, scalar):
        return self.combine([self], [scalar])

    __rmul__ = __mul__

    def __neg__(self):
        return self.combine([self], [-1.0])

    def at(self, points):
        """Evaluate the field at arbitrary points"""
        return self.sampler(np.atleast_2d(points))

    def nodal_values(self):
        return self.sampler(self.mesh.nodes)


class ScalarField(_Field):
    """Scalar field such as the planar trace or a body-force potential."""

    def __init__(self, mesh, sampler, values=None, **tags):
        super().__init__(mesh, sampler, values, **tags)
        if self.values.ndim != 1:
            raise ValueError("Scalar field values must be one value per quadrature point")

    @classmethod
    def constant(cls, mesh, value, **tags):
        def values(points):
            return np.full(len(points), float(value))

        def gradients(points):
            return np.zeros((len(points), mesh.dim))

        return cls(mesh, FunctionSampler(values, gradients), **tags)


class SymTensorField2(_Field):
    """Symmetric 2x2 tensor field stored as three components."""

    n_components = 3

    def __init__(self, mesh, sampler, values=None, **tags):
        super().__init__(mesh, sampler, values, **tags)
        if self.values.ndim != 2 or self.values.shape[1] != 3:
            raise ValueError("Tensor field values must have three components")

    @classmethod
    def constant(cls, mesh, components, **tags):
        components = np.asarray(components, dtype=float)

        def values(points):
            return np.tile(components, (len(points), 1))

        def gradients(points):
            return np.zeros((len(points), 3, mesh.dim))

        return cls(mesh, FunctionSampler(values, gradients), **tags)

    @classmethod
    def zero_like(cls, field):
        return cls.constant(
            field.mesh, (0.0, 0.0, 0.0), wavenumber=field.wavenumber, parity=field.parity
        )


def same_mesh(mesh_a, mesh_b):
    return mesh_a is mesh_b or mesh_a.fingerprint == mesh_b.fingerprint


def angular_weights(wavenumber, parity):
    """Integrals over t of the primary and secondary trigonometric factors squared.

    The primary factor multiplies srr and stt, the secondary factor multiplies srt.
    """
    cos_sq = 2.0 * np.pi if wavenumber == 0 else np.pi
    sin_sq = 0.0 if wavenumber == 0 else np.pi
    if parity == "cos":
        return cos_sq, sin_sq
    return sin_sq, cos_sq


def component_weights(field):
    """Per-component weights so that sum(w * A * B) integrates A:B against dA"""
    if not field.mesh.radial:
        return np.array([1.0, 1.0, 2.0])
    primary, secondary = angular_weights(field.wavenumber, field.parity)
    return np.array([primary, primary, 2.0 * secondary])


def scalar_weight(field):
    if not field.mesh.radial:
        return 1.0
    return angular_weights(field.wavenumber, field.parity)[0]


def l2_inner_tensor(a, b):
    """L2 inner product of two tensor fields, the shear term counted twice"""
    a._check_compatible(b)
    weights = a.mesh.qp_weights[:, None] * component_weights(a)
    return float(np.sum(weights * a.values * b.values))


def l2_inner_scalar(f, g):
    """L2 inner product of two scalar fields"""
    f._check_compatible(g)
    return scalar_weight(f) * float(np.dot(f.mesh.qp_weights, f.values * g.values))


def h1_inner_tensor(a, b):
    """H1 seminorm inner product, integral of grad(A) : grad(B)"""
    a._check_compatible(b)
    mesh = a.mesh
    if not mesh.radial:
        products = np.sum(a.gradients * b.gradients, axis=2)
        weights = mesh.qp_weights[:, None] * component_weights(a)
        return float(np.sum(weights * products))

    m = a.wavenumber
    primary, secondary = angular_weights(m, a.parity)
    r = mesh.qp_points[:, 0]
    da, db = a.gradients[:, :, 0], b.gradients[:, :, 0]
    va, vb = a.values, b.values
    radial = primary * (da[:, 0] * db[:, 0] + da[:, 1] * db[:, 1]) + (
        2.0 * secondary * da[:, 2] * db[:, 2]
    )
    normal_a = (m * va[:, 0] + 2 * va[:, 2], m * va[:, 1] - 2 * va[:, 2])
    normal_b = (m * vb[:, 0] + 2 * vb[:, 2], m * vb[:, 1] - 2 * vb[:, 2])
    shear_a = m * va[:, 2] + va[:, 0] - va[:, 1]
    shear_b = m * vb[:, 2] + vb[:, 0] - vb[:, 1]
    angular = (
        secondary * (normal_a[0] * normal_b[0] + normal_a[1] * normal_b[1])
        + 2.0 * primary * shear_a * shear_b
    ) / r**2
    return float(np.dot(mesh.qp_weights, radial + angular))


def planar_trace(field):
    """Sum of the two in-plane normal components"""

    class _TraceSampler(Sampler):
        def __call__(self, points, nu=0):
            out = field.sampler(points, nu)
            return out[:, 0] + out[:, 1]

        def on_grid(self, xs, ys, nu=0):
            out = field.sampler.on_grid(xs, ys, nu)
            return out[:, :, 0] + out[:, :, 1]

    return ScalarField(
        field.mesh,
        _TraceSampler(),
        values=field.values[:, 0] + field.values[:, 1],
        wavenumber=field.wavenumber,
        parity=field.parity,
        jump_lines=field.jump_lines,
    )


def check_jump_alignment(field):
    """Raise MeshError when a declared discontinuity is not on an element edge"""
    for axis, value in field.jump_lines:
        if not field.mesh.has_edge_line(axis, value):
            raise MeshError(
                f"Discontinuity {axis}={value} is not aligned with the element edges"
            )


def _divergence(field, body_force=None):
    """Pointwise equilibrium residual at the quadrature points with its area weights"""
    mesh = field.mesh
    grads = field.gradients
    if not mesh.radial:
        res_x = grads[:, 0, 0] + grads[:, 2, 1]
        res_y = grads[:, 2, 0] + grads[:, 1, 1]
        if body_force is not None:
            force = body_force(mesh.qp_points)
            res_x = res_x + force[:, 0]
            res_y = res_y + force[:, 1]
        return np.column_stack([res_x, res_y]), np.array([1.0, 1.0])

    if body_force is not None:
        raise ValueError("Body forces are only supported on planar meshes")
    m = field.wavenumber
    r = mesh.qp_points[:, 0]
    a, b, c = field.values.T
    res_r = grads[:, 0, 0] + (a - b) / r + m * c / r
    res_t = grads[:, 2, 0] + 2.0 * c / r - m * b / r
    primary, secondary = angular_weights(m, field.parity)
    return np.column_stack([res_r, res_t]), np.array([primary, secondary])


def equilibrium_residual(field, loading=None, body_force=None):
    """Interior divergence norm and worst boundary traction mismatch of a tensor field.

    Without a loading the boundary is checked against zero traction.
    """
    check_jump_alignment(field)
    if body_force is None and loading is not None:
        body_force = loading.body_force_vector
    residual, weights = _divergence(field, body_force)
    interior = float(
        np.sqrt(np.sum(field.mesh.qp_weights[:, None] * weights * residual**2))
    )
    mismatch = boundary_mismatch(field, loading)
    return EquilibriumResidual(interior, mismatch, loading)


def boundary_traction(field):
    """Traction-like boundary values of the field at the mesh boundary points.

    Planar meshes give sigma.n. Radial meshes give the (srr, srt) amplitudes at each radius.
    """
    boundary = field.mesh.boundary
    values = field.sampler(boundary.points)
    if field.mesh.radial:
        return values[:, [0, 2]]
    nx, ny = boundary.normals[:, 0], boundary.normals[:, 1]
    return np.column_stack(
        [
            values[:, 0] * nx + values[:, 2] * ny,
            values[:, 2] * nx + values[:, 1] * ny,
        ]
    )


def boundary_mismatch(field, loading=None):
    actual = boundary_traction(field)
    if loading is None:
        expected = np.zeros_like(actual)
    else:
        expected = loading.boundary_values(field.mesh.boundary, field.tag)
    if field.mesh.radial:
        # a family with a vanishing angular factor carries no traction for that component
        primary, secondary = angular_weights(field.wavenumber, field.parity)
        mask = np.array([primary > 0, secondary > 0], dtype=float)
        return float(np.max(np.abs(actual - expected) * mask))
    return float(np.max(np.linalg.norm(actual - expected, axis=1)))


def field_rows(field):
    """Header and rows of nodal values for the CSV dump"""
    values = field.nodal_values()
    if field.mesh.radial:
        header = "r,m,srr,stt,srt"
        coords = np.column_stack(
            [field.mesh.nodes[:, 0], np.full(len(values), field.wavenumber)]
        )
    else:
        header = "x,y,sxx,syy,sxy"
        coords = field.mesh.nodes
    rows = []
    for coord, value in zip(coords, values):
        if field.mesh.radial:
            cells = [f"{coord[0]:.17g}", str(int(coord[1]))]
        else:
            cells = [f"{coord[0]:.17g}", f"{coord[1]:.17g}"]
        cells.extend(f"{v:.17g}" for v in value)
        rows.append(",".join(cells))
    return header, rows


def write_field_csv(field, path, provenance=None):
    """Write the nodal field dump, optionally led by a `# provenance` comment line"""
    header, rows = field_rows(field)
    lines = [] if provenance is None else [f"# {provenance}"]
    lines.append(header)
    lines.extend(rows)
    atomic_write_text(path, "\n".join(lines) + "\n")
    logger.debug("Wrote field dump %s", path)
