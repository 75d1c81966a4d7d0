"""Expansion coefficients from the strain-energy and planar-trace principles.

Solutions are sigma_N = sigma_p + sum_j a_j phi_j over the basis modes sharing the tag of
sigma_p. Coefficients for every reported N come out of one pass: leading blocks of the energy
system for the strain-energy principle, prefixes of independent projections for the trace
principles.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Tuple

import numpy as np
import scipy.linalg

from stress_basis.constitutive import compliance_qp
from stress_basis.exceptions import NumericalError
from stress_basis.fields import (
    SymTensorField2,
    component_weights,
    planar_trace,
    scalar_weight,
)

logger = logging.getLogger(__name__)

PRINCIPLES = ("SE", "PT", "PT_body")
SYMMETRY_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class Approximation:
    """Coefficients and objective values of one principle for every reported N"""

    principle: str
    particular: object
    modes: Tuple[SymTensorField2, ...]
    coefficients: Dict[int, np.ndarray]
    objectives: Dict[int, float]
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self):
        return max(self.coefficients)

    @property
    def steps(self):
        return sorted(self.coefficients)

    @property
    def a(self):
        return self.coefficients[self.n]

    def field_at(self, n):
        """sigma_n rebuilt from the particular stress and the first n modes"""
        coefficients = self.coefficients[n]
        sigma_p = self.particular.field
        if n == 0:
            return sigma_p
        return SymTensorField2.combine(
            [sigma_p, *self.modes[:n]], [1.0, *coefficients]
        )

    @cached_property
    def sigma_n(self):
        return self.field_at(self.n)

    @cached_property
    def sigma_h(self):
        """The homogeneous part sigma_N - sigma_p"""
        if self.n == 0:
            return SymTensorField2.zero_like(self.particular.field)
        return SymTensorField2.combine(list(self.modes[: self.n]), self.a)

    def energies(self, material):
        """Strain energy of every sigma_n, from Gram products of the stored fields"""
        stack = _energy_stack(material, self.particular.field, self.modes[: self.n])
        base = stack.inner(self.particular.field.values, self.particular.field.values)
        cross = stack.modes_against(self.particular.field.values)
        out = {}
        for n in self.steps:
            a = self.coefficients[n]
            out[n] = float(
                base + 2.0 * a @ cross[:n] + a @ stack.gram[:n, :n] @ a
            )
        return out

    def errors(self, material, truth):
        """Relative strain-energy error of every sigma_n against a reference field"""
        truth_values = truth.values
        stack = _energy_stack(material, self.particular.field, self.modes[: self.n])
        difference = truth_values - self.particular.field.values
        denominator = stack.inner(truth_values, truth_values)
        if not denominator > 0:
            raise ValueError("Reference field has zero strain energy")
        base = stack.inner(difference, difference)
        cross = stack.modes_against(difference)
        out = {}
        for n in self.steps:
            a = self.coefficients[n]
            squared = base - 2.0 * a @ cross[:n] + a @ stack.gram[:n, :n] @ a
            out[n] = float(np.sqrt(max(squared, 0.0) / denominator))
        return out

    def rows(self, material=None, truth=None):
        """One record per reported N with the last coefficient and diagnostics"""
        energies = self.energies(material) if material is not None else {}
        errors = self.errors(material, truth) if truth is not None else {}
        out = []
        for n in self.steps:
            out.append(
                {
                    "N": n,
                    "a_N": float(self.coefficients[n][-1]) if n else 0.0,
                    "objective": self.objectives[n],
                    "energy": energies.get(n),
                    "E_N": errors.get(n),
                }
            )
        return out


class _EnergyStack:
    """Modes and strain weights at the quadrature points of one tag"""

    def __init__(self, material, reference, modes):
        mesh = reference.mesh
        self.compliance = compliance_qp(material, mesh)
        self.weights = mesh.qp_weights[:, None] * component_weights(reference)
        if modes:
            values = np.array([mode.values for mode in modes])
            self.strains = np.einsum("qij,nqj->nqi", self.compliance, values)
            flat_strain = (self.strains * self.weights).reshape(len(modes), -1)
            self.flat_modes = values.reshape(len(modes), -1)
            self.gram = flat_strain @ self.flat_modes.T
        else:
            self.strains = np.zeros((0,) + reference.values.shape)
            self.flat_modes = np.zeros((0, reference.values.size))
            self.gram = np.zeros((0, 0))

    def inner(self, left, right):
        strain = np.einsum("qij,qj->qi", self.compliance, left)
        return float(np.sum(self.weights * strain * right))

    def modes_against(self, values):
        """<C^-1 phi_i, values> for every mode"""
        weighted = (self.strains * self.weights).reshape(len(self.strains), values.size)
        return weighted @ values.ravel()


def _energy_stack(material, reference, modes):
    return _EnergyStack(material, reference, list(modes))


def _matching_modes(basis, particular, n):
    """Leading n modes with the tag of the particular stress"""
    tag = particular.field.tag
    modes = [mode for mode in basis.modes if mode.tag == tag]
    if not modes:
        raise ValueError(f"Basis has no modes with tag {tag}")
    if n > len(modes):
        logger.warning(
            "Requested N=%d but the basis holds %d modes with tag %s, capping N",
            n,
            len(modes),
            tag,
        )
        n = len(modes)
    if n < 0:
        raise ValueError(f"N must be non-negative, got {n}")
    return tuple(modes[:n])


def _schedule(n, report_every):
    if report_every < 1:
        raise ValueError(f"report_every must be at least 1, got {report_every}")
    steps = list(range(0, n + 1, report_every))
    if steps[-1] != n:
        steps.append(n)
    return steps


def assemble_se_system(basis, particular, material, n):
    """Energy matrix M(i, j) = <C^-1 phi_j, phi_i> and load f(i) = -<C^-1 sigma_p, phi_i>"""
    modes = _matching_modes(basis, particular, n)
    stack = _energy_stack(material, particular.field, modes)
    matrix = stack.gram
    load = -stack.modes_against(particular.field.values)
    asymmetry = np.max(np.abs(matrix - matrix.T), initial=0.0)
    if asymmetry > SYMMETRY_TOL * max(np.max(np.abs(matrix), initial=0.0), 1.0):
        raise NumericalError(f"Energy matrix is not symmetric: {asymmetry:.2e}", asymmetry)
    matrix = 0.5 * (matrix + matrix.T)
    if not np.all(np.isfinite(load)):
        raise NumericalError("Energy load vector is not finite")
    return matrix, load


def _cholesky_solve(matrix, load, n):
    try:
        factor = scipy.linalg.cho_factor(matrix, lower=True)
    except np.linalg.LinAlgError as err:
        raise NumericalError(
            f"Energy matrix of size {n} is not positive definite: {err}"
        ) from err
    return scipy.linalg.cho_solve(factor, load)


def solve_strain_energy(particular, basis, material, n, report_every=1):
    """Minimize the strain energy over sigma_p plus the span of the first n modes"""
    modes = _matching_modes(basis, particular, n)
    n = len(modes)
    matrix, load = assemble_se_system(basis, particular, material, n)
    base = _energy_stack(material, particular.field, ()).inner(
        particular.field.values, particular.field.values
    )
    coefficients, objectives, conditions, galerkin = {}, {}, {}, {}
    for k in _schedule(n, report_every):
        if k == 0:
            coefficients[0] = np.zeros(0)
            objectives[0] = base
            continue
        block, rhs = matrix[:k, :k], load[:k]
        a = _cholesky_solve(block, rhs, k)
        coefficients[k] = a
        objectives[k] = float(base - 2.0 * rhs @ a + a @ block @ a)
        conditions[k] = float(np.linalg.cond(block))
        galerkin[k] = float(np.max(np.abs(block @ a - rhs)))
        logger.debug("SE N=%d: cond %.3e, Galerkin residual %.2e", k, conditions[k], galerkin[k])
    logger.info("Strain-energy solve: N=%d, final objective %.10g", n, objectives[n])
    return Approximation(
        principle="SE",
        particular=particular,
        modes=modes,
        coefficients=coefficients,
        objectives=objectives,
        diagnostics={"condition": conditions, "galerkin_residual": galerkin},
    )


def _warn_hole_force(particular):
    loading = particular.loading
    if loading.has_hole_net_force():
        logger.warning(
            "Loading '%s' puts a net force on a hole: the planar trace principle does not "
            "give the true stress here",
            loading.name,
        )


def _trace_projection(target, modes, n, report_every, principle, particular, extra=None):
    """Coefficients a_i = -<target, trace(phi_i)> and the trace objective for every step"""
    weight = scalar_weight(particular.field)
    quadrature = particular.field.mesh.qp_weights
    traces = np.zeros((len(modes), len(target)))
    for i, mode in enumerate(modes):
        traces[i] = planar_trace(mode).values
    projections = -weight * traces @ (quadrature * target)
    coefficients, objectives = {}, {}
    for k in _schedule(n, report_every):
        a = projections[:k]
        residual = target + a @ traces[:k]
        coefficients[k] = a.copy()
        objectives[k] = float(weight * np.dot(quadrature, residual**2))
    logger.info("%s solve: N=%d, final objective %.10g", principle, n, objectives[n])
    return Approximation(
        principle=principle,
        particular=particular,
        modes=modes,
        coefficients=coefficients,
        objectives=objectives,
        diagnostics=extra or {},
    )


def solve_planar_trace(particular, basis, n, report_every=1):
    """Minimize the squared planar trace; never reads the material"""
    _warn_hole_force(particular)
    modes = _matching_modes(basis, particular, n)
    target = planar_trace(particular.field).values
    return _trace_projection(target, modes, len(modes), report_every, "PT", particular)


def solve_planar_trace_body(particular, basis, potential, nu, n, report_every=1):
    """Planar trace principle with a conservative body force b = -grad V"""
    if not 0.0 <= nu < 0.5:
        raise ValueError(f"Poisson's ratio must lie in [0, 0.5), got {nu}")
    _warn_hole_force(particular)
    modes = _matching_modes(basis, particular, n)
    target = planar_trace(particular.field).values - potential.values / (1.0 - nu)
    return _trace_projection(
        target, modes, len(modes), report_every, "PT_body", particular, {"nu": nu}
    )


def solve(principle, particular, basis, n, material=None, potential=None, report_every=1):
    """Dispatch on the principle name used in experiment configs"""
    if principle == "SE":
        return solve_strain_energy(particular, basis, material, n, report_every)
    if principle == "PT":
        return solve_planar_trace(particular, basis, n, report_every)
    if principle == "PT_body":
        return solve_planar_trace_body(
            particular, basis, potential, material.nu, n, report_every
        )
    raise ValueError(f"Unknown principle '{principle}', choose from {PRINCIPLES}")


__all__ = [
    "Approximation",
    "assemble_se_system",
    "solve",
    "solve_planar_trace",
    "solve_planar_trace_body",
    "solve_strain_energy",
]
