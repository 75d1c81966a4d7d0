"""Biquadratic displacement finite elements for plane strain on structured rectangle meshes.

Serves as the reference solution where no closed form exists. Stresses are evaluated directly
from the displacement interpolant at arbitrary points.
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from numpy.polynomial.legendre import leggauss

from stress_basis.exceptions import NumericalError
from stress_basis.meshes import build_rectangle_mesh

logger = logging.getLogger(__name__)

ELEMENT_GAUSS = 3
EDGE_GAUSS = 4
SOLVE_TOL = 1e-8
_ENGINEERING = np.diag([1.0, 1.0, 2.0])
# local node indices along each side, ordered along the side
_SIDE_NODES = {
    "bottom": (0, 1, 2),
    "right": (2, 5, 8),
    "top": (6, 7, 8),
    "left": (0, 3, 6),
}


def _lagrange(xi, derivative=0):
    """Quadratic Lagrange functions on the nodes -1, 0, 1, shape (len(xi), 3)"""
    xi = np.asarray(xi, dtype=float)
    if derivative == 0:
        return np.column_stack([0.5 * xi * (xi - 1.0), 1.0 - xi**2, 0.5 * xi * (xi + 1.0)])
    if derivative == 1:
        return np.column_stack([xi - 0.5, -2.0 * xi, xi + 0.5])
    ones = np.ones_like(xi)
    return np.column_stack([ones, -2.0 * ones, ones])


def _shape_derivatives(local, hx, hy, order=1):
    """Physical derivatives of the nine shape functions at local points, per element size.

    order=1 gives (dN/dx, dN/dy), order=2 gives (d2N/dx2, d2N/dxdy, d2N/dy2), each (n, 9).
    """
    xi, eta = local[:, 0], local[:, 1]
    sx, sy = (2.0 / hx)[:, None], (2.0 / hy)[:, None]

    def tensor(fx, fy):
        return (fy[:, :, None] * fx[:, None, :]).reshape(len(xi), 9)

    if order == 1:
        return (
            tensor(_lagrange(xi, 1), _lagrange(eta)) * sx,
            tensor(_lagrange(xi), _lagrange(eta, 1)) * sy,
        )
    return (
        tensor(_lagrange(xi, 2), _lagrange(eta)) * sx**2,
        tensor(_lagrange(xi, 1), _lagrange(eta, 1)) * sx * sy,
        tensor(_lagrange(xi), _lagrange(eta, 2)) * sy**2,
    )


def _strain_operator(dndx, dndy):
    """Engineering strain matrices B, shape (n, 3, 18) for dofs ordered (u0, v0, u1, ...)"""
    b = np.zeros((len(dndx), 3, 18))
    b[:, 0, 0::2] = dndx
    b[:, 1, 1::2] = dndy
    b[:, 2, 0::2] = dndy
    b[:, 2, 1::2] = dndx
    return b


def elasticity_matrices(material, points):
    """Stiffness D mapping engineering strain to (sxx, syy, sxy), shape (n, 3, 3)"""
    return np.linalg.inv(_ENGINEERING @ material.compliance_at(points))


def _element_geometry(mesh):
    x_edges, y_edges = mesh.breakpoints
    nx, ny = mesh.shape
    i = np.tile(np.arange(nx), ny)
    j = np.repeat(np.arange(ny), nx)
    hx = np.diff(x_edges)[i]
    hy = np.diff(y_edges)[j]
    return x_edges[i], y_edges[j], hx, hy


def _element_dofs(mesh):
    nodes = mesh.elements
    dofs = np.empty((len(nodes), 18), dtype=np.int64)
    dofs[:, 0::2] = 2 * nodes
    dofs[:, 1::2] = 2 * nodes + 1
    return dofs


def assemble_stiffness(mesh, material):
    """Global stiffness matrix in CSR format"""
    x0, y0, hx, hy = _element_geometry(mesh)
    xi, wi = leggauss(ELEMENT_GAUSS)
    local_k = np.zeros((mesh.n_elements, 18, 18))
    for a, wa in zip(xi, wi):
        for b, wb in zip(xi, wi):
            local = np.tile([a, b], (mesh.n_elements, 1))
            points = np.column_stack([x0 + 0.5 * hx * (a + 1.0), y0 + 0.5 * hy * (b + 1.0)])
            dndx, dndy = _shape_derivatives(local, hx, hy)
            strain = _strain_operator(dndx, dndy)
            stiffness = elasticity_matrices(material, points)
            jacobian = 0.25 * hx * hy * wa * wb
            local_k += jacobian[:, None, None] * np.einsum(
                "eki,ekl,elj->eij", strain, stiffness, strain
            )
    dofs = _element_dofs(mesh)
    rows = np.repeat(dofs, 18, axis=1).ravel()
    cols = np.tile(dofs, (1, 18)).ravel()
    size = 2 * mesh.n_nodes
    matrix = scipy.sparse.coo_matrix((local_k.ravel(), (rows, cols)), shape=(size, size))
    return matrix.tocsr()


def _side_elements(mesh, side):
    nx, ny = mesh.shape
    if side == "bottom":
        return np.arange(nx)
    if side == "top":
        return (ny - 1) * nx + np.arange(nx)
    if side == "left":
        return np.arange(ny) * nx
    return np.arange(ny) * nx + nx - 1


def assemble_load_vector(mesh, loading):
    """Consistent nodal forces of the boundary tractions and the body force"""
    size = 2 * mesh.n_nodes
    load = np.zeros(size)
    x0, y0, hx, hy = _element_geometry(mesh)
    s, ws = leggauss(EDGE_GAUSS)
    shape = _lagrange(s)
    lx, ly = mesh.domain.lx, mesh.domain.ly
    for side, local_nodes in _SIDE_NODES.items():
        if side not in loading.tractions:
            continue
        for element in _side_elements(mesh, side):
            if side in ("bottom", "top"):
                fixed = 0.0 if side == "bottom" else ly
                points = np.column_stack(
                    [x0[element] + 0.5 * hx[element] * (s + 1.0), np.full_like(s, fixed)]
                )
                half = 0.5 * hx[element]
            else:
                fixed = 0.0 if side == "left" else lx
                points = np.column_stack(
                    [np.full_like(s, fixed), y0[element] + 0.5 * hy[element] * (s + 1.0)]
                )
                half = 0.5 * hy[element]
            traction = loading.traction(side, points)
            forces = half * shape.T @ (ws[:, None] * traction)
            nodes = mesh.elements[element][list(local_nodes)]
            np.add.at(load, 2 * nodes, forces[:, 0])
            np.add.at(load, 2 * nodes + 1, forces[:, 1])

    if loading.body_force is not None:
        xi, wi = leggauss(ELEMENT_GAUSS)
        dofs = _element_dofs(mesh)
        for a, wa in zip(xi, wi):
            for b, wb in zip(xi, wi):
                points = np.column_stack(
                    [x0 + 0.5 * hx * (a + 1.0), y0 + 0.5 * hy * (b + 1.0)]
                )
                shape_2d = (_lagrange([b])[0][:, None] * _lagrange([a])[0][None, :]).ravel()
                force = loading.body_force(points) * (0.25 * hx * hy * wa * wb)[:, None]
                np.add.at(load, dofs[:, 0::2], force[:, 0:1] * shape_2d)
                np.add.at(load, dofs[:, 1::2], force[:, 1:2] * shape_2d)
    return load


def _constrained_dofs(mesh):
    """Pin the lower-left corner and the vertical motion of the lower-right corner"""
    nodes = mesh.nodes
    lower_left = int(np.argmin(np.hypot(nodes[:, 0], nodes[:, 1])))
    lower_right = int(np.argmin(np.hypot(nodes[:, 0] - mesh.domain.lx, nodes[:, 1])))
    return np.array([2 * lower_left, 2 * lower_left + 1, 2 * lower_right + 1])


@dataclass(frozen=True, eq=False)
class DisplacementSolution:
    """Nodal displacements on a Q2 mesh with direct stress evaluation"""

    mesh: object
    material: object
    displacement: np.ndarray
    residual: float

    def _local(self, points):
        points = np.atleast_2d(points)
        elements, local = self.mesh.locate(points)
        _, _, hx, hy = _element_geometry(self.mesh)
        u = self.displacement[_element_dofs(self.mesh)[elements]]
        return points, local, hx[elements], hy[elements], u

    def stress(self, points):
        """(sxx, syy, sxy) at arbitrary points"""
        points, local, hx, hy, u = self._local(points)
        dndx, dndy = _shape_derivatives(local, hx, hy)
        strain = np.einsum("nij,nj->ni", _strain_operator(dndx, dndy), u)
        return np.einsum("nij,nj->ni", elasticity_matrices(self.material, points), strain)

    def stress_gradient(self, points):
        """Stress gradients, shape (n, 3, 2); homogeneous materials only"""
        if not self.material.homogeneous:
            raise ValueError("Stress gradients need a homogeneous material")
        points, local, hx, hy, u = self._local(points)
        dxx, dxy, dyy = _shape_derivatives(local, hx, hy, order=2)
        ux, vx = u[:, 0::2], u[:, 1::2]
        u_xx, u_xy, u_yy = (np.sum(d * ux, axis=1) for d in (dxx, dxy, dyy))
        v_xx, v_xy, v_yy = (np.sum(d * vx, axis=1) for d in (dxx, dxy, dyy))
        strain_x = np.column_stack([u_xx, v_xy, u_xy + v_xx])
        strain_y = np.column_stack([u_xy, v_yy, u_yy + v_xy])
        stiffness = elasticity_matrices(self.material, points)
        return np.stack(
            [
                np.einsum("nij,nj->ni", stiffness, strain_x),
                np.einsum("nij,nj->ni", stiffness, strain_y),
            ],
            axis=-1,
        )

    def strain_energy(self):
        """Twice the stored energy, u . K u"""
        stiffness = assemble_stiffness(self.mesh, self.material)
        return float(self.displacement @ (stiffness @ self.displacement))


def solve_displacement(domain, loading, material, nx, ny, feature_lines=()):
    """Displacement solve on an nx x ny mesh whose edges carry every discontinuity"""
    lines = set(feature_lines) | set(loading.jump_lines) | set(material.jump_lines)
    if loading.body_force is not None:
        lines |= set(loading.body_force.jump_lines)
    mesh = build_rectangle_mesh(domain, nx, ny, tuple(lines))
    stiffness = assemble_stiffness(mesh, material)
    load = assemble_load_vector(mesh, loading)
    fixed = _constrained_dofs(mesh)
    free = np.setdiff1d(np.arange(2 * mesh.n_nodes), fixed)
    reduced = stiffness[free][:, free].tocsc()
    logger.debug("Displacement solve: %d unknowns, %d nonzeros", len(free), reduced.nnz)
    displacement = np.zeros(2 * mesh.n_nodes)
    displacement[free] = scipy.sparse.linalg.spsolve(reduced, load[free])
    if not np.all(np.isfinite(displacement)):
        raise NumericalError("Displacement system is singular")
    residual = float(
        np.linalg.norm(reduced @ displacement[free] - load[free])
        / max(np.linalg.norm(load[free]), 1e-300)
    )
    if residual > SOLVE_TOL:
        raise NumericalError(f"Displacement solve residual {residual:.2e}", residual)
    logger.info("Displacement solution on %s, relative residual %.2e", mesh.describe(), residual)
    return DisplacementSolution(mesh, material, displacement, residual)
