"""Residual-stress eigenbases: construction, orthonormalization, verification and caching.

Modes minimize the H1 seminorm over unit-L2, divergence-free, traction-free stresses. Both
constraints are built into the potential spaces, so each backend solves a symmetric-definite
generalized eigenproblem K c = lambda G c on the reduced coefficient space.
"""
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Tuple

import numpy as np
import scipy.linalg

from stress_basis.config import Config
from stress_basis.exceptions import NumericalError
from stress_basis.fields import (
    SymTensorField2,
    boundary_traction,
    component_weights,
    equilibrium_residual,
    h1_inner_tensor,
    l2_inner_tensor,
    planar_trace,
    scalar_weight,
)
from stress_basis.files import atomic_savez
from stress_basis.meshes import Annulus, Rectangle, build_radial_grid, build_rectangle_mesh
from stress_basis.potentials import (
    AiryModeSampler,
    AirySpace,
    BumpSpace1D,
    RadialModeSampler,
    RadialSpace,
    SplineSpace1D,
)

logger = logging.getLogger(__name__)

CACHE_HEADER = "SBBASIS 1"
BACKENDS = ("eigen-rectangle", "eigen-annulus", "airy-bump")
EIGEN_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class EigenSolveConfig:
    """Settings of one basis solve"""

    n_modes: int
    resolution: int = None
    degenerate_gap: float = None
    residual_tolerance: float = EIGEN_RESIDUAL_TOL
    parities: Tuple[str, ...] = ("cos", "sin")

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError(f"n_modes must be at least 1, got {self.n_modes}")
        if self.degenerate_gap is None:
            object.__setattr__(self, "degenerate_gap", Config.DEGENERATE_GAP)
        if not set(self.parities) <= {"cos", "sin"} or not self.parities:
            raise ValueError(f"Unknown parities {self.parities}")


@dataclass(frozen=True, eq=False)
class BasisSet:
    """Ordered modes with their eigenvalues (Rayleigh quotients for the bump backend)."""

    mesh: object
    modes: Tuple[SymTensorField2, ...]
    eigenvalues: np.ndarray
    backend: str
    coefficients: Tuple[np.ndarray, ...]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.modes) != len(self.eigenvalues) or len(self.modes) != len(self.coefficients):
            raise ValueError("Modes, eigenvalues and coefficients must have equal length")

    @property
    def size(self):
        return len(self.modes)

    @property
    def tags(self):
        return [mode.tag for mode in self.modes]

    def leading(self, n):
        """The first n modes as a new basis"""
        if n > self.size:
            raise ValueError(f"Requested {n} modes from a basis of {self.size}")
        return replace(
            self,
            modes=self.modes[:n],
            eigenvalues=self.eigenvalues[:n],
            coefficients=self.coefficients[:n],
        )

    def restricted_to(self, tag):
        """Modes carrying one wavenumber tag"""
        keep = [i for i, mode in enumerate(self.modes) if mode.tag == tag]
        return replace(
            self,
            modes=tuple(self.modes[i] for i in keep),
            eigenvalues=self.eigenvalues[keep],
            coefficients=tuple(self.coefficients[i] for i in keep),
        )

    @cached_property
    def gram_l2(self):
        return _gram(self.modes, l2_inner_tensor)

    @cached_property
    def trace_gram(self):
        traces = [planar_trace(mode) for mode in self.modes]
        values = np.array([t.values for t in traces])
        weights = self.mesh.qp_weights
        gram = np.zeros((self.size, self.size))
        for tag in set(self.tags):
            idx = [i for i, t in enumerate(self.tags) if t == tag]
            block = values[idx] * weights
            gram[np.ix_(idx, idx)] = scalar_weight(self.modes[idx[0]]) * block @ values[idx].T
        return gram

    @property
    def fingerprint(self):
        return f"{self.backend}:{self.mesh.fingerprint[:16]}:{self.size}"

    @cached_property
    def digest(self):
        """sha256 over the backend, mesh, eigenvalues and potential coefficients"""
        digest = hashlib.sha256()
        digest.update(self.backend.encode())
        digest.update(self.mesh.fingerprint.encode())
        digest.update(np.ascontiguousarray(self.eigenvalues, dtype=float).tobytes())
        for coefficient in self.coefficients:
            digest.update(np.ascontiguousarray(coefficient, dtype=float).tobytes())
        return digest.hexdigest()


def _gram(modes, inner):
    """Pairwise inner products, zero across different wavenumber tags"""
    size = len(modes)
    tags = [mode.tag for mode in modes]
    if len(set(tags)) == 1 and inner is l2_inner_tensor:
        values = np.array([mode.values for mode in modes])
        weights = modes[0].mesh.qp_weights[:, None] * component_weights(modes[0])
        flat = values.reshape(size, -1)
        return (flat * weights.ravel()) @ flat.T
    gram = np.zeros((size, size))
    for i in range(size):
        for j in range(i, size):
            if tags[i] == tags[j]:
                gram[i, j] = gram[j, i] = inner(modes[i], modes[j])
    return gram


def _sign_normalized(vector, sampler_factory, mesh):
    """Flip the mode so its largest-magnitude nodal component is positive"""
    nodal = sampler_factory(vector)(mesh.nodes)
    flat = nodal.ravel()
    if flat[np.argmax(np.abs(flat))] < 0:
        return -vector
    return vector


def _generalized_eigh(stiffness, gram, n_modes, label, tolerance):
    """Lowest pairs of K c = lambda G c after diagonal scaling and whitening of G"""
    dimension = gram.shape[0]
    if n_modes > dimension:
        raise ValueError(
            f"{label}: {n_modes} modes requested but the discrete space has {dimension}"
        )
    diagonal = np.diag(gram)
    if not np.all(diagonal > 0):
        raise NumericalError(f"{label}: Gram matrix has a non-positive diagonal")
    scale = 1.0 / np.sqrt(diagonal)
    scaled_gram = gram * np.outer(scale, scale)
    scaled_stiffness = stiffness * np.outer(scale, scale)
    try:
        weights, rotation = scipy.linalg.eigh(scaled_gram)
        if weights[0] <= dimension * np.finfo(float).eps * weights[-1]:
            raise NumericalError(
                f"{label}: Gram matrix is singular (condition {weights[-1] / weights[0]:.2e})"
            )
        whitening = rotation / np.sqrt(weights)
        reduced = whitening.T @ scaled_stiffness @ whitening
        values, reduced_vectors = scipy.linalg.eigh(
            0.5 * (reduced + reduced.T), subset_by_index=[0, n_modes - 1]
        )
    except (np.linalg.LinAlgError, ValueError) as err:
        raise NumericalError(f"{label}: generalized eigensolve failed: {err}") from err
    logger.debug("%s: scaled Gram condition %.2e", label, weights[-1] / weights[0])
    vectors = scale[:, None] * (whitening @ reduced_vectors)
    residual = stiffness @ vectors - (gram @ vectors) * values
    norm = np.linalg.norm(stiffness, ord=1) * np.max(np.abs(vectors))
    worst = float(np.max(np.abs(residual)) / norm)
    if worst > tolerance:
        raise NumericalError(f"{label}: eigen residual {worst:.2e} above {tolerance}", worst)
    logger.debug("%s: %d modes, relative eigen residual %.2e", label, n_modes, worst)
    return values, vectors


def _rectangle_space(mesh):
    x_edges, y_edges = mesh.breakpoints
    return AirySpace(SplineSpace1D(x_edges), SplineSpace1D(y_edges))


def _airy_mode(mesh, space, coefficients):
    return SymTensorField2(mesh, AiryModeSampler(space, coefficients))


def solve_basis_rectangle(mesh, cfg):
    """Lowest eigenmodes on a rectangle mesh"""
    if mesh.radial:
        raise ValueError("solve_basis_rectangle needs a rectangle mesh")
    space = _rectangle_space(mesh)
    gram, stiffness = space.energy_matrices(mesh)
    values, vectors = _generalized_eigh(
        stiffness, gram, cfg.n_modes, "rectangle eigenproblem", cfg.residual_tolerance
    )

    def factory(vector):
        return AiryModeSampler(space, space.expand(vector))

    modes, coefficients = [], []
    for k in range(cfg.n_modes):
        vector = _sign_normalized(vectors[:, k], factory, mesh)
        full = space.expand(vector)
        modes.append(_airy_mode(mesh, space, full))
        coefficients.append(full)
    basis = BasisSet(
        mesh=mesh,
        modes=tuple(modes),
        eigenvalues=np.asarray(values),
        backend="eigen-rectangle",
        coefficients=tuple(coefficients),
        provenance=_provenance(mesh, cfg, "eigen-rectangle", space.dimension),
    )
    logger.info(
        "Rectangle basis: %d modes on %s, lowest eigenvalues %s",
        basis.size,
        mesh.describe(),
        np.array2string(basis.eigenvalues[:3], precision=2),
    )
    return _finished(basis, cfg)


def _provenance(mesh, cfg, backend, dimension):
    return {
        "backend": backend,
        "mesh": mesh.fingerprint,
        "mesh_description": mesh.describe(),
        "discrete_dimension": int(dimension),
        "degenerate_gap": cfg.degenerate_gap,
        "residual_tolerance": cfg.residual_tolerance,
        "quadrature_points": mesh.n_gauss,
    }


def _radial_mode(mesh, space, coefficients, parity):
    return SymTensorField2(
        mesh,
        RadialModeSampler(space, coefficients),
        wavenumber=space.wavenumber,
        parity=parity,
    )


def _radial_spaces(mesh):
    spaces = {}

    def get(m):
        if m not in spaces:
            spaces[m] = RadialSpace(mesh.breakpoints[0], m)
        return spaces[m]

    return get


def solve_basis_annulus(domain, wavenumbers, cfg):
    """Lowest eigenmodes on an annulus merged over wavenumbers and families.

    `domain` is an annulus (a radial grid of cfg.resolution elements is built) or a radial mesh.
    """
    if getattr(domain, "radial", False):
        mesh = domain
    else:
        if domain.kind != "annulus":
            raise ValueError("solve_basis_annulus needs an annulus")
        mesh = build_radial_grid(domain, cfg.resolution or Config.ANNULUS_ELEMENTS)
    wavenumbers = sorted({int(m) for m in wavenumbers})
    if not wavenumbers or wavenumbers[0] < 0:
        raise ValueError(f"Wavenumbers must be non-negative, got {wavenumbers}")

    space_for = _radial_spaces(mesh)
    candidates = []
    dimension = 0
    for m in wavenumbers:
        space = space_for(m)
        # the m = 0 shear family has no traction-free member
        parities = [p for p in cfg.parities if not (m == 0 and p == "sin")]
        if not parities:
            continue
        gram, stiffness = space.energy_matrices(mesh)
        count = min(cfg.n_modes, space.dimension)
        values, vectors = _generalized_eigh(
            stiffness, gram, count, f"annulus eigenproblem m={m}", cfg.residual_tolerance
        )
        dimension += space.dimension * len(parities)
        for k in range(count):
            full = space.reduce @ vectors[:, k]
            for parity in parities:
                candidates.append((values[k], m, parity, full, space))
    if cfg.n_modes > len(candidates):
        raise ValueError(
            f"{cfg.n_modes} modes requested but only {len(candidates)} are available"
        )

    order = sorted(
        range(len(candidates)),
        key=lambda i: (candidates[i][0], candidates[i][1], candidates[i][2]),
    )[: cfg.n_modes]
    modes, coefficients, values = [], [], []
    for i in order:
        value, m, parity, full, space = candidates[i]

        def factory(vector, space=space):
            return RadialModeSampler(space, vector)

        full = _sign_normalized(full, factory, mesh)
        modes.append(_radial_mode(mesh, space, full, parity))
        coefficients.append(full)
        values.append(value)
    basis = BasisSet(
        mesh=mesh,
        modes=tuple(modes),
        eigenvalues=np.array(values),
        backend="eigen-annulus",
        coefficients=tuple(coefficients),
        provenance={
            **_provenance(mesh, cfg, "eigen-annulus", dimension),
            "wavenumbers": wavenumbers,
            "parities": list(cfg.parities),
        },
    )
    logger.info(
        "Annulus basis: %d modes over m=%s, lowest eigenvalues %s",
        basis.size,
        wavenumbers,
        np.array2string(basis.eigenvalues[:3], precision=2),
    )
    return _finished(basis, cfg)


def _rayleigh_ritz(basis):
    """Re-diagonalize each wavenumber block in the field L2 and H1 inner products"""
    modes = list(basis.modes)
    coefficients = list(basis.coefficients)
    values = np.array(basis.eigenvalues, dtype=float)
    for tag in dict.fromkeys(basis.tags):
        idx = [i for i, mode in enumerate(basis.modes) if mode.tag == tag]
        block = [basis.modes[i] for i in idx]
        stacked = np.array([basis.coefficients[i] for i in idx])
        gram = _gram(block, l2_inner_tensor)
        stiffness = _gram(block, h1_inner_tensor)
        try:
            ritz, rotation = scipy.linalg.eigh(stiffness, gram)
        except (np.linalg.LinAlgError, ValueError) as err:
            raise NumericalError(f"Rayleigh-Ritz pass failed for {tag}: {err}") from err
        for k, i in enumerate(idx):
            column = rotation[:, k]
            mode = SymTensorField2.combine(block, column)
            nodal = mode.nodal_values().ravel()
            if nodal[np.argmax(np.abs(nodal))] < 0:
                column = -column
                mode = -mode
            modes[i] = mode
            coefficients[i] = np.tensordot(column, stacked, axes=1)
            values[i] = ritz[k]
    return replace(basis, modes=tuple(modes), coefficients=tuple(coefficients), eigenvalues=values)


def _with_rayleigh_quotients(basis):
    """Eigenvalues replaced by the H1 / L2 quotients of the final modes"""
    quotients = np.array(
        [h1_inner_tensor(mode, mode) / l2_inner_tensor(mode, mode) for mode in basis.modes]
    )
    drift = np.max(np.abs(quotients - basis.eigenvalues) / np.abs(basis.eigenvalues))
    logger.debug("%s: eigenvalue drift to Rayleigh quotients %.2e", basis.fingerprint, drift)
    return replace(basis, eigenvalues=quotients)


def _finished(basis, cfg):
    return _with_rayleigh_quotients(orthonormalize(_rayleigh_ritz(basis), cfg.degenerate_gap))


def _clusters(eigenvalues, gap):
    clusters, current = [], [0]
    for i in range(1, len(eigenvalues)):
        reference = max(abs(eigenvalues[current[0]]), 1e-300)
        if abs(eigenvalues[i] - eigenvalues[current[0]]) <= gap * reference:
            current.append(i)
        else:
            clusters.append(current)
            current = [i]
    clusters.append(current)
    return clusters


def _rebuild(basis, modes, coefficients):
    return replace(basis, modes=tuple(modes), coefficients=tuple(coefficients))


def orthonormalize(basis, degenerate_gap=None):
    """Unit L2 norms, then Gram-Schmidt inside each cluster of nearly equal eigenvalues"""
    gap = Config.DEGENERATE_GAP if degenerate_gap is None else degenerate_gap
    modes = list(basis.modes)
    coefficients = list(basis.coefficients)
    for i, mode in enumerate(modes):
        norm = np.sqrt(l2_inner_tensor(mode, mode))
        if not norm > 0:
            raise NumericalError(f"Mode {i} has zero norm")
        modes[i] = mode * (1.0 / norm)
        coefficients[i] = coefficients[i] / norm

    for cluster in _clusters(basis.eigenvalues, gap):
        if len(cluster) < 2:
            continue
        # larger trace norm first, original order breaks ties
        trace_norms = {
            i: _trace_norm_sq(modes[i]) for i in cluster
        }
        ordered = sorted(cluster, key=lambda i: (-round(trace_norms[i], 12), i))
        done = []
        for i in ordered:
            mode, coefficient = modes[i], coefficients[i]
            for j in done:
                if modes[j].tag != mode.tag:
                    continue
                overlap = l2_inner_tensor(mode, modes[j])
                mode = mode - overlap * modes[j]
                coefficient = coefficient - overlap * coefficients[j]
            norm = np.sqrt(l2_inner_tensor(mode, mode))
            if norm < 1e-8:
                raise NumericalError(
                    f"Rank deficiency in eigenvalue cluster {cluster}: mode {i} is dependent",
                    norm,
                )
            modes[i] = mode * (1.0 / norm)
            coefficients[i] = coefficient / norm
            done.append(i)
        logger.debug("Orthogonalized eigenvalue cluster %s", cluster)
    return _rebuild(basis, modes, coefficients)


def _trace_norm_sq(mode):
    trace = planar_trace(mode)
    return scalar_weight(mode) * float(np.dot(mode.mesh.qp_weights, trace.values**2))


def _bump_pairs(n):
    pairs = []
    total = 0
    while len(pairs) < n:
        for j in range(total + 1):
            pairs.append((j, total - j))
        total += 1
    return pairs[:n]


def airy_bump_basis(mesh, n):
    """n orthonormal stresses from clamped polynomial Airy potentials f_j(x) f_k(y)"""
    if mesh.radial:
        raise ValueError("The Airy bump basis needs a simply-connected rectangle")
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    pairs = _bump_pairs(n)
    degree = max(max(pair) for pair in pairs) + 1
    space = AirySpace(
        BumpSpace1D(mesh.domain.lx, degree), BumpSpace1D(mesh.domain.ly, degree)
    )
    raw_coefficients = []
    for j, k in pairs:
        coefficient = np.zeros((degree, degree))
        coefficient[j, k] = 1.0
        raw_coefficients.append(coefficient)
    raw = [_airy_mode(mesh, space, c) for c in raw_coefficients]

    modes, coefficients = [], []
    for index, (mode, coefficient) in enumerate(zip(raw, raw_coefficients)):
        original = np.sqrt(l2_inner_tensor(mode, mode))
        # two sweeps keep the set orthogonal to machine precision
        for _ in range(2):
            for previous, previous_coefficient in zip(modes, coefficients):
                overlap = l2_inner_tensor(mode, previous)
                mode = mode - overlap * previous
                coefficient = coefficient - overlap * previous_coefficient
        norm = np.sqrt(l2_inner_tensor(mode, mode))
        if norm < 1e-7 * original:
            logger.warning(
                "Airy bump basis lost rank at mode %d of %d, truncating", index, n
            )
            break
        modes.append(mode * (1.0 / norm))
        coefficients.append(coefficient / norm)

    quotients = np.array(
        [h1_inner_tensor(mode, mode) / l2_inner_tensor(mode, mode) for mode in modes]
    )
    return BasisSet(
        mesh=mesh,
        modes=tuple(modes),
        eigenvalues=quotients,
        backend="airy-bump",
        coefficients=tuple(coefficients),
        provenance={
            "backend": "airy-bump",
            "mesh": mesh.fingerprint,
            "mesh_description": mesh.describe(),
            "requested": n,
            "polynomial_degree": degree + 3,
        },
    )


@dataclass(frozen=True)
class VerificationReport:
    """Orthogonality and equilibrium checks of a basis"""

    max_offdiag_l2: float
    max_diag_error_l2: float
    max_offdiag_h1: float
    max_interior_residual: float
    max_boundary_traction: float
    max_trace_gram_error: float
    max_rayleigh_error: float
    tolerances: dict
    checks: dict

    @property
    def passed(self):
        return all(self.checks.values())

    def to_dict(self):
        return {
            "max_offdiag_l2": self.max_offdiag_l2,
            "max_diag_error_l2": self.max_diag_error_l2,
            "max_offdiag_h1": self.max_offdiag_h1,
            "max_interior_residual": self.max_interior_residual,
            "max_boundary_traction": self.max_boundary_traction,
            "max_trace_gram_error": self.max_trace_gram_error,
            "max_rayleigh_error": self.max_rayleigh_error,
            "tolerances": self.tolerances,
            "checks": self.checks,
            "passed": self.passed,
        }


def verify_basis(basis, l2_tol=None, h1_tol=None, residual_tol=None):
    """Orthogonality, Rayleigh-quotient and equilibrium report of a basis"""
    l2_tol = Config.L2_TOLERANCE if l2_tol is None else l2_tol
    h1_tol = Config.H1_TOLERANCE if h1_tol is None else h1_tol
    residual_tol = Config.RESIDUAL_TOLERANCE if residual_tol is None else residual_tol

    gram = basis.gram_l2
    offdiag = gram - np.diag(np.diag(gram))
    h1 = _gram(basis.modes, h1_inner_tensor)
    scale = np.sqrt(np.outer(np.diag(h1), np.diag(h1)))
    h1_offdiag = np.abs(h1 - np.diag(np.diag(h1))) / np.where(scale > 0, scale, 1.0)

    interior, boundary = 0.0, 0.0
    for mode in basis.modes:
        result = equilibrium_residual(mode)
        peak = max(float(np.max(np.abs(mode.values))), 1e-300)
        interior = max(interior, result.interior_norm)
        boundary = max(boundary, float(np.max(np.abs(boundary_traction(mode)))) / peak)

    trace_error = float(np.max(np.abs(basis.trace_gram - gram)))
    rayleigh = 0.0
    if basis.backend != "airy-bump":
        rayleigh = float(
            np.max(np.abs(np.diag(h1) / np.diag(gram) - basis.eigenvalues) / basis.eigenvalues)
        )

    checks = {
        "l2_orthogonality": bool(np.max(np.abs(offdiag), initial=0.0) <= l2_tol),
        "l2_normalization": bool(np.max(np.abs(np.diag(gram) - 1.0)) <= 1e-10),
        "h1_orthogonality": bool(
            basis.backend == "airy-bump" or np.max(h1_offdiag, initial=0.0) <= h1_tol
        ),
        "equilibrium": bool(interior <= residual_tol),
        "traction_free": bool(boundary <= residual_tol),
        "trace_gram": bool(trace_error <= 1e-6),
        "rayleigh": bool(rayleigh <= 1e-6),
    }
    report = VerificationReport(
        max_offdiag_l2=float(np.max(np.abs(offdiag), initial=0.0)),
        max_diag_error_l2=float(np.max(np.abs(np.diag(gram) - 1.0))),
        max_offdiag_h1=float(np.max(h1_offdiag, initial=0.0)),
        max_interior_residual=interior,
        max_boundary_traction=boundary,
        max_trace_gram_error=trace_error,
        max_rayleigh_error=rayleigh,
        tolerances={"l2": l2_tol, "h1": h1_tol, "residual": residual_tol},
        checks=checks,
    )
    level = logging.INFO if report.passed else logging.WARNING
    logger.log(level, "Basis verification %s: %s", basis.fingerprint, checks)
    return report


def projection_residual(basis, target, n=None):
    """L2 distance of `target` from the span of the first n modes of an orthonormal basis"""
    modes = basis.modes if n is None else basis.modes[:n]
    remainder = target.values.copy()
    weights = target.mesh.qp_weights[:, None] * component_weights(target)
    for mode in modes:
        if mode.tag != target.tag:
            continue
        remainder -= float(np.sum(weights * remainder * mode.values)) * mode.values
    return float(np.sqrt(np.sum(weights * remainder**2)))


def _mesh_parameters(mesh):
    if mesh.radial:
        return np.array([mesh.domain.r_a, mesh.domain.r_b, mesh.shape[0]], dtype=float)
    return np.array([mesh.domain.lx, mesh.domain.ly, *mesh.shape], dtype=float)


def save_basis(basis, path):
    """Write the basis as a versioned npz archive"""
    tags = basis.tags
    atomic_savez(
        path,
        header=np.array(CACHE_HEADER),
        backend=np.array(basis.backend),
        mesh_fingerprint=np.array(basis.mesh.fingerprint),
        mesh_kind=np.array(basis.mesh.domain.kind),
        mesh_parameters=_mesh_parameters(basis.mesh),
        feature_lines=np.array(
            [f"{axis}={value!r}" for axis, value in basis.mesh.feature_lines], dtype=str
        ),
        eigenvalues=basis.eigenvalues,
        wavenumbers=np.array([-1 if m is None else m for m, _ in tags]),
        parities=np.array(["" if p is None else p for _, p in tags]),
        coefficients=np.array(basis.coefficients),
        polynomial_degree=np.array(basis.provenance.get("polynomial_degree", 0)),
        verification=np.array(json.dumps(basis.provenance.get("verification"), sort_keys=True)),
    )
    logger.info("Saved basis %s to %s", basis.fingerprint, path)


def _mesh_from_archive(archive):
    kind = str(archive["mesh_kind"])
    params = archive["mesh_parameters"]
    if kind == "annulus":
        return build_radial_grid(Annulus(float(params[0]), float(params[1])), int(params[2]))
    lines = []
    for entry in archive["feature_lines"]:
        axis, value = str(entry).split("=")
        lines.append((axis, float(value)))
    return build_rectangle_mesh(
        Rectangle(float(params[0]), float(params[1])), int(params[2]), int(params[3]), lines
    )


def load_basis(path, mesh=None):
    """Read a basis archive, rebuilding modes from their potential coefficients"""
    with np.load(path, allow_pickle=False) as archive:
        if str(archive["header"]) != CACHE_HEADER:
            raise ValueError(f"{path} is not a {CACHE_HEADER} archive")
        mesh = _mesh_from_archive(archive) if mesh is None else mesh
        if str(archive["mesh_fingerprint"]) != mesh.fingerprint:
            raise ValueError(f"{path} was built on a different mesh")
        backend = str(archive["backend"])
        eigenvalues = archive["eigenvalues"]
        wavenumbers = archive["wavenumbers"]
        parities = archive["parities"]
        coefficients = archive["coefficients"]
        degree = int(archive["polynomial_degree"])
        verification = (
            json.loads(str(archive["verification"])) if "verification" in archive.files else None
        )

    modes = []
    if backend == "eigen-annulus":
        space_for = _radial_spaces(mesh)
        for m, parity, coefficient in zip(wavenumbers, parities, coefficients):
            modes.append(_radial_mode(mesh, space_for(int(m)), coefficient, str(parity)))
    else:
        if backend == "airy-bump":
            size = coefficients.shape[1]
            space = AirySpace(
                BumpSpace1D(mesh.domain.lx, size), BumpSpace1D(mesh.domain.ly, size)
            )
        else:
            space = _rectangle_space(mesh)
        modes = [_airy_mode(mesh, space, coefficient) for coefficient in coefficients]
    logger.info("Loaded %d %s modes from %s", len(modes), backend, path)
    return BasisSet(
        mesh=mesh,
        modes=tuple(modes),
        eigenvalues=eigenvalues,
        backend=backend,
        coefficients=tuple(coefficients),
        provenance={
            "backend": backend,
            "mesh": mesh.fingerprint,
            "mesh_description": mesh.describe(),
            "cache": str(path),
            "polynomial_degree": degree,
            "verification": verification,
        },
    )


def require_verified(basis):
    """Return the basis with its verification report attached, or raise NumericalError.

    A report stored with a cached basis is reused when it passed.
    """
    stored = basis.provenance.get("verification")
    if stored is not None and stored.get("passed"):
        return basis
    report = verify_basis(basis)
    if not report.passed:
        failed = sorted(name for name, ok in report.checks.items() if not ok)
        raise NumericalError(
            f"Basis {basis.fingerprint} failed verification: {', '.join(failed)}",
            report.max_offdiag_h1,
        )
    return replace(basis, provenance={**basis.provenance, "verification": report.to_dict()})


def cache_path(mesh, backend, n_modes, extra=""):
    suffix = f"-{extra}" if extra else ""
    return Config.CACHE_DIR.joinpath(
        f"basis-{backend}-{mesh.fingerprint[:16]}-{n_modes}{suffix}.npz"
    )


def cached_basis(mesh, backend, n_modes, build, extra=""):
    """Load a cached basis when present, otherwise build, verify and store it.

    A cached basis that fails verification is rebuilt. Built bases that fail raise
    NumericalError and are never written to the cache.
    """
    path = cache_path(mesh, backend, n_modes, extra)
    if path.exists():
        try:
            basis = load_basis(path, mesh)
        except (ValueError, KeyError, OSError) as err:
            logger.warning("Ignoring unreadable basis cache %s: %s", path, err)
        else:
            try:
                checked = require_verified(basis)
            except NumericalError as err:
                logger.warning("Rebuilding basis cache %s: %s", path, err)
            else:
                if checked is not basis:
                    save_basis(checked, path)
                return checked
    basis = require_verified(build())
    save_basis(basis, path)
    # later runs read the archive, so this one does too
    return load_basis(path, mesh)


__all__ = [
    "BasisSet",
    "EigenSolveConfig",
    "VerificationReport",
    "airy_bump_basis",
    "cached_basis",
    "load_basis",
    "orthonormalize",
    "projection_residual",
    "require_verified",
    "save_basis",
    "solve_basis_annulus",
    "solve_basis_rectangle",
    "verify_basis",
]
