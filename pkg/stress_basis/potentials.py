"""Stress potential spaces.

Every stress built here comes from an Airy-type potential and is divergence-free by construction.

Rectangle: psi(x, y) = sum A_jk X_j(x) Y_k(y) with sxx = psi_yy, syy = psi_xx, sxy = -psi_xy.
Clamping psi and its gradient on the boundary makes the stress traction-free.

Annulus: Phi = phi(r) cos(m t) gives the cos-family profiles
    a = phi'/r - m^2 phi/r^2,  b = phi'',  c = m (phi'/r - phi/r^2)
and the traction-free conditions become linear conditions on phi at both radii.
"""
import logging

import numpy as np
import scipy.linalg
from numpy.polynomial import Legendre, Polynomial
from scipy.interpolate import BSpline

from stress_basis.fields import Sampler

logger = logging.getLogger(__name__)

SPLINE_DEGREE = 3


class SplineSpace1D:
    """Clamped B-splines on a breakpoint vector."""

    kind = "spline"

    def __init__(self, edges, degree=SPLINE_DEGREE):
        edges = np.asarray(edges, dtype=float)
        self.edges = edges
        self.degree = degree
        self.knots = np.concatenate([[edges[0]] * degree, edges, [edges[-1]] * degree])
        self.size = len(self.knots) - degree - 1
        self._spline = BSpline(self.knots, np.eye(self.size), degree)

    def design(self, x, nu=0):
        """Values of the nu-th derivative of every basis function, shape (len(x), size)"""
        x = np.asarray(x, dtype=float)
        if nu > self.degree:
            return np.zeros((len(x), self.size))
        return self._spline(x, nu=nu)

    def clamped_nullspace(self):
        """Orthonormal coefficient basis of splines with f = f' = 0 at both ends"""
        ends = np.array([self.edges[0], self.edges[-1]])
        constraints = np.vstack([self.design(ends, 0), self.design(ends, 1)])
        return scipy.linalg.null_space(constraints)


class BumpSpace1D:
    """Polynomials s^2 (1 - s)^2 P_j(2 s - 1) on [0, length], P_j the Legendre polynomials."""

    kind = "bump"

    def __init__(self, length, count):
        self.length = float(length)
        self.size = count
        bump = Polynomial([0.0, 0.0, 1.0, -2.0, 1.0])
        shift = Polynomial([-1.0, 2.0])
        self.polynomials = [
            bump * Legendre.basis(j).convert(kind=Polynomial)(shift) for j in range(count)
        ]

    def design(self, x, nu=0):
        s = np.asarray(x, dtype=float) / self.length
        scale = self.length ** (-nu)
        return np.column_stack([p.deriv(nu)(s) * scale if nu else p(s) for p in self.polynomials])

    def clamped_nullspace(self):
        return np.eye(self.size)


def _gram_1d(space, points, weights, p, q):
    return space.design(points, p).T @ (weights[:, None] * space.design(points, q))


class AirySpace:
    """Tensor-product potential space on a rectangle, restricted to clamped potentials."""

    def __init__(self, space_x, space_y):
        self.space_x = space_x
        self.space_y = space_y
        self.reduce_x = space_x.clamped_nullspace()
        self.reduce_y = space_y.clamped_nullspace()

    @property
    def dimension(self):
        return self.reduce_x.shape[1] * self.reduce_y.shape[1]

    def expand(self, reduced):
        """Full coefficient matrix from a reduced coefficient vector"""
        shape = (self.reduce_x.shape[1], self.reduce_y.shape[1])
        return self.reduce_x @ np.reshape(reduced, shape) @ self.reduce_y.T

    def energy_matrices(self, mesh):
        """L2 Gram and H1 stiffness of the reduced space under the mesh quadrature"""
        (xs, wx), (ys, wy) = mesh.qp_axes
        mx = {
            (p, q): self.reduce_x.T @ _gram_1d(self.space_x, xs, wx, p, q) @ self.reduce_x
            for p, q in ((0, 0), (1, 1), (2, 2), (3, 3))
        }
        my = {
            (p, q): self.reduce_y.T @ _gram_1d(self.space_y, ys, wy, p, q) @ self.reduce_y
            for p, q in ((0, 0), (1, 1), (2, 2), (3, 3))
        }
        gram = (
            np.kron(mx[0, 0], my[2, 2])
            + np.kron(mx[2, 2], my[0, 0])
            + 2.0 * np.kron(mx[1, 1], my[1, 1])
        )
        stiffness = (
            3.0 * np.kron(mx[1, 1], my[2, 2])
            + np.kron(mx[0, 0], my[3, 3])
            + np.kron(mx[3, 3], my[0, 0])
            + 3.0 * np.kron(mx[2, 2], my[1, 1])
        )
        return gram, stiffness

    def _derivatives(self, coefficients, x_designs, y_designs, pairs, pointwise):
        out = {}
        for p, q in pairs:
            if pointwise:
                out[p, q] = np.sum((x_designs[p] @ coefficients) * y_designs[q], axis=1)
            else:
                out[p, q] = x_designs[p] @ coefficients @ y_designs[q].T
        return out

    def stress(self, coefficients, xs, ys, nu=0, pointwise=True):
        """Stress components (nu=0) or gradients (nu=1) of the potential"""
        orders = range(4) if nu else range(3)
        x_designs = {d: self.space_x.design(xs, d) for d in orders}
        y_designs = {d: self.space_y.design(ys, d) for d in orders}
        if nu == 0:
            psi = self._derivatives(
                coefficients, x_designs, y_designs, ((0, 2), (2, 0), (1, 1)), pointwise
            )
            return np.stack([psi[0, 2], psi[2, 0], -psi[1, 1]], axis=-1)
        psi = self._derivatives(
            coefficients,
            x_designs,
            y_designs,
            ((1, 2), (0, 3), (3, 0), (2, 1)),
            pointwise,
        )
        return np.stack(
            [
                np.stack([psi[1, 2], psi[0, 3]], axis=-1),
                np.stack([psi[3, 0], psi[2, 1]], axis=-1),
                np.stack([-psi[2, 1], -psi[1, 2]], axis=-1),
            ],
            axis=-2,
        )


class AiryModeSampler(Sampler):
    """Stress of one potential of an AirySpace."""

    def __init__(self, space, coefficients):
        self.space = space
        self.coefficients = np.asarray(coefficients, dtype=float)
        self.merge_key = ("airy", id(space))

    @classmethod
    def merge(cls, group):
        total = sum(weight * sampler.coefficients for sampler, weight in group)
        return cls(group[0][0].space, total)

    def __call__(self, points, nu=0):
        points = np.atleast_2d(points)
        return self.space.stress(self.coefficients, points[:, 0], points[:, 1], nu)

    def on_grid(self, xs, ys, nu=0):
        return self.space.stress(self.coefficients, xs, ys, nu, pointwise=False)


class RadialSpace:
    """Radial potentials phi(r) of one wavenumber with traction-free, gauge-fixed conditions."""

    def __init__(self, edges, wavenumber, degree=SPLINE_DEGREE):
        self.spline = SplineSpace1D(edges, degree)
        self.wavenumber = int(wavenumber)
        self.reduce = scipy.linalg.null_space(self._constraints())

    @property
    def dimension(self):
        return self.reduce.shape[1]

    def _constraints(self):
        r_a, r_b = self.spline.edges[0], self.spline.edges[-1]
        ends = np.array([r_a, r_b])
        phi = self.spline.design(ends, 0)
        dphi = self.spline.design(ends, 1)
        m = self.wavenumber
        if m == 0:
            return np.vstack([dphi[0], dphi[1], phi[0]])
        if m == 1:
            return np.vstack([phi[0], dphi[0], r_b * dphi[1] - phi[1]])
        return np.vstack([phi, dphi])

    def profile_operators(self, r, nu=0):
        """Matrices mapping spline coefficients to (a, b, c) or (a', b', c') at radii r"""
        r = np.asarray(r, dtype=float)[:, None]
        m = self.wavenumber
        d0, d1, d2, d3 = (self.spline.design(r[:, 0], d) for d in range(4))
        if nu == 0:
            return (
                d1 / r - m**2 * d0 / r**2,
                d2,
                m * (d1 / r - d0 / r**2),
            )
        return (
            d2 / r - d1 / r**2 - m**2 * d1 / r**2 + 2.0 * m**2 * d0 / r**3,
            d3,
            m * (d2 / r - 2.0 * d1 / r**2 + 2.0 * d0 / r**3),
        )

    def energy_matrices(self, mesh):
        """L2 Gram and H1 stiffness per unit angular factor in the reduced space"""
        r = mesh.qp_points[:, 0]
        w = mesh.qp_weights[:, None]
        m = self.wavenumber
        a, b, c = (op @ self.reduce for op in self.profile_operators(r, 0))
        da, db, dc = (op @ self.reduce for op in self.profile_operators(r, 1))

        def product(left, right):
            return left.T @ (w * right)

        gram = product(a, a) + product(b, b) + 2.0 * product(c, c)
        w_r = w / r[:, None] ** 2
        normal_1 = m * a + 2.0 * c
        normal_2 = m * b - 2.0 * c
        shear = m * c + a - b
        stiffness = (
            product(da, da)
            + product(db, db)
            + 2.0 * product(dc, dc)
            + normal_1.T @ (w_r * normal_1)
            + normal_2.T @ (w_r * normal_2)
            + 2.0 * shear.T @ (w_r * shear)
        )
        return gram, stiffness

    def profiles(self, coefficients, r, nu=0):
        operators = self.profile_operators(r, nu)
        return np.column_stack([op @ coefficients for op in operators])


class RadialModeSampler(Sampler):
    """Amplitude profiles of one radial potential."""

    def __init__(self, space, coefficients):
        self.space = space
        self.coefficients = np.asarray(coefficients, dtype=float)
        self.merge_key = ("radial", id(space))

    @classmethod
    def merge(cls, group):
        total = sum(weight * sampler.coefficients for sampler, weight in group)
        return cls(group[0][0].space, total)

    def __call__(self, points, nu=0):
        r = np.atleast_2d(points)[:, 0]
        out = self.space.profiles(self.coefficients, r, nu)
        return out[:, :, None] if nu else out
