"""Computational domains and structured meshes.

Rectangles use biquadratic 9-node elements on a tensor grid of breakpoints, annuli use a radial
grid of quadratic 3-node elements (the angular direction is handled analytically per wavenumber).
Node ids on a rectangle are J * (2 nx + 1) + I for node column I and row J, element ids are
j * nx + i, and the local node order inside an element is 3 * row + column.
"""
import hashlib
import logging
from collections import namedtuple
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import ClassVar, Tuple

import numpy as np

from stress_basis.exceptions import MeshError
from stress_basis.fields import QuadratureRule
from stress_basis.files import atomic_write_text

logger = logging.getLogger(__name__)

MESH_HEADER = "SBMESH 1"
RECTANGLE_SIDES = ("bottom", "right", "top", "left")
RADIAL_SIDES = ("inner", "outer")
GAUSS_POINTS = 4
_RELATIVE_TOL = 1e-12

BoundaryPoints = namedtuple("BoundaryPoints", ["points", "normals", "tags", "weights"])


@dataclass(frozen=True)
class Rectangle:
    """Rectangle [0, lx] x [0, ly]"""

    lx: float = 1.0
    ly: float = 1.0
    kind: ClassVar[str] = "rectangle"

    def __post_init__(self):
        if not (self.lx > 0 and self.ly > 0):
            raise ValueError(f"Rectangle sides must be positive, got {self.lx} x {self.ly}")

    @property
    def area(self):
        return self.lx * self.ly

    def to_dict(self):
        return {"kind": self.kind, "Lx": self.lx, "Ly": self.ly}


@dataclass(frozen=True)
class Annulus:
    """Annulus r_a <= r <= r_b centred on the origin"""

    r_a: float = 0.1
    r_b: float = 0.3
    kind: ClassVar[str] = "annulus"

    def __post_init__(self):
        if not 0 < self.r_a < self.r_b:
            raise ValueError(f"Annulus needs 0 < r_a < r_b, got {self.r_a}, {self.r_b}")

    @property
    def area(self):
        return np.pi * (self.r_b**2 - self.r_a**2)

    def to_dict(self):
        return {"kind": self.kind, "r_a": self.r_a, "r_b": self.r_b}


def domain_from_dict(spec):
    """Build a domain from its config block"""
    kind = spec.get("kind")
    if kind == "rectangle":
        return Rectangle(float(spec.get("Lx", 1.0)), float(spec.get("Ly", 1.0)))
    if kind == "annulus":
        return Annulus(float(spec.get("r_a", 0.1)), float(spec.get("r_b", 0.3)))
    raise ValueError(f"Unknown domain kind '{kind}'")


def _line_key(axis, value):
    return (axis, float(value))


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable structured mesh with its quadrature."""

    domain: object
    nodes: np.ndarray
    elements: np.ndarray
    boundary_edges: Tuple[Tuple[int, int, str], ...]
    breakpoints: Tuple[np.ndarray, ...]
    feature_lines: Tuple[Tuple[str, float], ...] = field(default=())
    n_gauss: int = GAUSS_POINTS

    def __post_init__(self):
        for array in (self.nodes, self.elements, *self.breakpoints):
            array.setflags(write=False)

    @property
    def radial(self):
        return self.domain.kind == "annulus"

    @property
    def dim(self):
        return 1 if self.radial else 2

    @property
    def shape(self):
        """Element counts per direction"""
        return tuple(len(edges) - 1 for edges in self.breakpoints)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def measure(self):
        """|Omega| for rectangles, the radial measure of r dr per unit angle for annuli"""
        if self.radial:
            return 0.5 * (self.domain.r_b**2 - self.domain.r_a**2)
        return self.domain.area

    @cached_property
    def fingerprint(self):
        digest = hashlib.sha256()
        digest.update(repr(sorted(self.domain.to_dict().items())).encode())
        digest.update(np.ascontiguousarray(self.nodes, dtype=float).tobytes())
        digest.update(np.ascontiguousarray(self.elements, dtype=np.int64).tobytes())
        digest.update(repr(self.feature_lines).encode())
        digest.update(str(self.n_gauss).encode())
        return digest.hexdigest()

    @cached_property
    def element_areas(self):
        if self.radial:
            edges = self.breakpoints[0]
            return 0.5 * (edges[1:] ** 2 - edges[:-1] ** 2)
        hx = np.diff(self.breakpoints[0])
        hy = np.diff(self.breakpoints[1])
        return np.outer(hy, hx).ravel()

    def _axis_quadrature(self, edges):
        rule = QuadratureRule.gauss(self.n_gauss)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        points = (mid[:, None] + half[:, None] * rule.points[None, :, 0]).ravel()
        weights = (half[:, None] * rule.weights[None, :]).ravel()
        return points, weights

    @cached_property
    def qp_axes(self):
        """Quadrature abscissae and weights per direction, element by element"""
        return tuple(self._axis_quadrature(edges) for edges in self.breakpoints)

    def grid_to_qp(self, grid):
        """Map an array indexed [ix, iy, ...] on the quadrature grid to quadrature-point order"""
        nx, ny = self.shape
        ng = self.n_gauss
        rest = grid.shape[2:]
        blocks = grid.reshape(nx, ng, ny, ng, *rest)
        order = (2, 0, 3, 1) + tuple(range(4, 4 + len(rest)))
        return blocks.transpose(order).reshape(nx * ny * ng * ng, *rest)

    @cached_property
    def qp_points(self):
        if self.radial:
            return self.qp_axes[0][0][:, None]
        (xs, _), (ys, _) = self.qp_axes
        grid = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)
        return self.grid_to_qp(grid)

    @cached_property
    def qp_weights(self):
        """Area weights of the quadrature points, including r for radial grids"""
        if self.radial:
            rs, ws = self.qp_axes[0]
            return ws * rs
        (_, wx), (_, wy) = self.qp_axes
        return self.grid_to_qp(np.outer(wx, wy))

    def sample(self, sampler, nu=0):
        """Evaluate a sampler at every quadrature point"""
        if self.radial:
            return np.asarray(sampler(self.qp_points, nu), dtype=float)
        (xs, _), (ys, _) = self.qp_axes
        return self.grid_to_qp(np.asarray(sampler.on_grid(xs, ys, nu), dtype=float))

    @cached_property
    def boundary(self):
        """Gauss points on every tagged boundary edge with outward normals"""
        if self.radial:
            return BoundaryPoints(
                np.array([[self.domain.r_a], [self.domain.r_b]]),
                np.array([[-1.0], [1.0]]),
                np.array(RADIAL_SIDES),
                np.array([self.domain.r_a, self.domain.r_b]),
            )
        (xs, wx), (ys, wy) = self.qp_axes
        lx, ly = self.domain.lx, self.domain.ly
        sides = {
            "bottom": (np.column_stack([xs, np.zeros_like(xs)]), (0.0, -1.0), wx),
            "right": (np.column_stack([np.full_like(ys, lx), ys]), (1.0, 0.0), wy),
            "top": (np.column_stack([xs, np.full_like(xs, ly)]), (0.0, 1.0), wx),
            "left": (np.column_stack([np.zeros_like(ys), ys]), (-1.0, 0.0), wy),
        }
        points, normals, tags, weights = [], [], [], []
        for tag in RECTANGLE_SIDES:
            side_points, normal, side_weights = sides[tag]
            points.append(side_points)
            normals.append(np.tile(normal, (len(side_points), 1)))
            tags.append(np.full(len(side_points), tag))
            weights.append(side_weights)
        return BoundaryPoints(
            np.vstack(points), np.vstack(normals), np.concatenate(tags), np.concatenate(weights)
        )

    def has_edge_line(self, axis, value):
        axes = ("r",) if self.radial else ("x", "y")
        if axis not in axes:
            return False
        edges = self.breakpoints[axes.index(axis)]
        scale = max(abs(edges[0]), abs(edges[-1]), 1.0)
        return bool(np.min(np.abs(edges - value)) <= _RELATIVE_TOL * scale)

    def locate(self, points):
        """Element index and reference coordinates in [-1, 1]^dim of each point"""
        points = np.atleast_2d(points)
        indices, local = [], []
        for axis, edges in enumerate(self.breakpoints):
            coords = points[:, axis]
            idx = np.clip(np.searchsorted(edges, coords, side="right") - 1, 0, len(edges) - 2)
            h = edges[idx + 1] - edges[idx]
            indices.append(idx)
            local.append(2.0 * (coords - edges[idx]) / h - 1.0)
        if self.radial:
            return indices[0], np.column_stack(local)
        return indices[1] * self.shape[0] + indices[0], np.column_stack(local)

    def describe(self):
        if self.radial:
            return (
                f"radial grid {self.shape[0]} elements on "
                f"[{self.domain.r_a}, {self.domain.r_b}]"
            )
        return (
            f"rectangle {self.shape[0]}x{self.shape[1]} elements, {self.n_nodes} nodes, "
            f"{self.domain.lx} x {self.domain.ly}"
        )


def _refined(edges):
    """Breakpoints with element midpoints inserted, i.e. the quadratic node coordinates"""
    nodes = np.empty(2 * len(edges) - 1)
    nodes[0::2] = edges
    nodes[1::2] = 0.5 * (edges[1:] + edges[:-1])
    return nodes


def _rectangle_connectivity(nx, ny):
    columns = 2 * nx + 1
    elements = np.empty((nx * ny, 9), dtype=np.int64)
    for j in range(ny):
        for i in range(nx):
            ids = [
                (2 * j + row) * columns + 2 * i + col for row in range(3) for col in range(3)
            ]
            elements[j * nx + i] = ids
    return elements


def _rectangle_boundary(nx, ny):
    columns = 2 * nx + 1
    top_row = 2 * ny
    edges = []
    for i in range(nx):
        edges.append((2 * i, 2 * i + 2, "bottom"))
    for j in range(ny):
        edges.append(((2 * j) * columns + 2 * nx, (2 * j + 2) * columns + 2 * nx, "right"))
    for i in range(nx):
        edges.append((top_row * columns + 2 * i, top_row * columns + 2 * i + 2, "top"))
    for j in range(ny):
        edges.append(((2 * j) * columns, (2 * j + 2) * columns, "left"))
    return tuple(edges)


def _check_feature_lines(domain, feature_lines):
    lines = []
    for axis, value in feature_lines:
        length = {"x": domain.lx, "y": domain.ly}.get(axis)
        if length is None:
            raise MeshError(f"Feature line axis must be 'x' or 'y', got '{axis}'")
        if not 0.0 < value < length:
            raise MeshError(f"Feature line {axis}={value} lies outside the domain")
        lines.append(_line_key(axis, value))
    return tuple(sorted(set(lines)))


def build_rectangle_mesh(domain, nx, ny, feature_lines=()):
    """Uniform structured Q2 mesh whose element edges contain every feature line"""
    if domain.kind != "rectangle":
        raise ValueError(f"build_rectangle_mesh needs a rectangle, got {domain.kind}")
    if nx < 4 or ny < 4:
        raise MeshError(f"Rectangle meshes need nx, ny >= 4, got {nx} x {ny}")
    lines = _check_feature_lines(domain, feature_lines)
    x_edges = np.linspace(0.0, domain.lx, nx + 1)
    y_edges = np.linspace(0.0, domain.ly, ny + 1)
    breakpoints = {"x": x_edges, "y": y_edges}
    for axis, value in lines:
        edges = breakpoints[axis]
        if np.min(np.abs(edges - value)) > _RELATIVE_TOL * max(edges[-1], 1.0):
            raise MeshError(
                f"Feature line {axis}={value} does not fall on an element edge of a "
                f"{nx}x{ny} mesh; choose a resolution that contains it"
            )
    node_x, node_y = np.meshgrid(_refined(x_edges), _refined(y_edges), indexing="xy")
    mesh = Mesh(
        domain=domain,
        nodes=np.column_stack([node_x.ravel(), node_y.ravel()]),
        elements=_rectangle_connectivity(nx, ny),
        boundary_edges=_rectangle_boundary(nx, ny),
        breakpoints=(x_edges, y_edges),
        feature_lines=lines,
    )
    logger.debug("Built %s", mesh.describe())
    return mesh


def build_radial_grid(domain, nr):
    """Uniform grid of quadratic elements on [r_a, r_b]"""
    if domain.kind != "annulus":
        raise ValueError(f"build_radial_grid needs an annulus, got {domain.kind}")
    if nr < 4:
        raise MeshError(f"Radial grids need nr >= 4, got {nr}")
    edges = np.linspace(domain.r_a, domain.r_b, nr + 1)
    elements = np.array([[2 * k, 2 * k + 1, 2 * k + 2] for k in range(nr)], dtype=np.int64)
    last = 2 * nr
    mesh = Mesh(
        domain=domain,
        nodes=_refined(edges)[:, None],
        elements=elements,
        boundary_edges=((0, 0, "inner"), (last, last, "outer")),
        breakpoints=(edges,),
    )
    logger.debug("Built %s", mesh.describe())
    return mesh


def save_mesh(mesh, path):
    """Write a mesh in the versioned text format"""
    domain = mesh.domain
    if mesh.radial:
        lines = [MESH_HEADER, f"domain annulus {domain.r_a!r} {domain.r_b!r}"]
    else:
        lines = [MESH_HEADER, f"domain rectangle {domain.lx!r} {domain.ly!r}"]
    lines.append(f"nodes {mesh.n_nodes}")
    lines.extend(" ".join(f"{c:.17g}" for c in node) for node in mesh.nodes)
    lines.append(f"elements {mesh.n_elements}")
    lines.extend(" ".join(str(n) for n in element) for element in mesh.elements)
    lines.append(f"boundary {len(mesh.boundary_edges)}")
    lines.extend(f"edge {n1} {n2} {tag}" for n1, n2, tag in mesh.boundary_edges)
    if mesh.feature_lines:
        lines.append(f"features {len(mesh.feature_lines)}")
        lines.extend(f"line {axis} {value!r}" for axis, value in mesh.feature_lines)
    atomic_write_text(path, "\n".join(lines) + "\n")


class _Reader:
    """Line cursor over a mesh file that reports line numbers in errors."""

    def __init__(self, path):
        self.path = path
        with open(path, "r", encoding="utf8") as mesh_file:
            self.lines = [
                (number, line.split())
                for number, line in enumerate(mesh_file, start=1)
                if line.strip()
            ]
        self.position = 0

    def done(self):
        return self.position >= len(self.lines)

    def next(self, expected=None):
        if self.done():
            raise MeshError(f"{self.path}: unexpected end of file, expected {expected}")
        number, tokens = self.lines[self.position]
        self.position += 1
        return number, tokens

    def section(self, name):
        number, tokens = self.next(name)
        if len(tokens) != 2 or tokens[0] != name:
            raise MeshError(f"{self.path}:{number}: expected '{name} <count>'")
        try:
            return int(tokens[1])
        except ValueError as err:
            raise MeshError(f"{self.path}:{number}: bad count '{tokens[1]}'") from err

    def numbers(self, count, convert, expected):
        number, tokens = self.next(expected)
        if len(tokens) != count:
            raise MeshError(f"{self.path}:{number}: expected {count} values for {expected}")
        try:
            return [convert(token) for token in tokens]
        except ValueError as err:
            raise MeshError(f"{self.path}:{number}: malformed {expected}") from err


def _unique_sorted(values, scale):
    values = np.sort(values)
    keep = np.concatenate([[True], np.diff(values) > _RELATIVE_TOL * scale])
    return values[keep]


def _validate_rectangle(domain, nodes, elements):
    """Check conformity and return the breakpoints and the canonical element order"""
    scale = max(domain.lx, domain.ly, 1.0)
    corners = nodes[elements[:, [0, 2, 6, 8]]]
    x_edges = _unique_sorted(corners[:, :, 0].ravel(), scale)
    y_edges = _unique_sorted(corners[:, :, 1].ravel(), scale)
    if abs(x_edges[0]) > 1e-12 * scale or abs(x_edges[-1] - domain.lx) > 1e-12 * scale:
        raise MeshError("Mesh x extent does not match the domain")
    if abs(y_edges[0]) > 1e-12 * scale or abs(y_edges[-1] - domain.ly) > 1e-12 * scale:
        raise MeshError("Mesh y extent does not match the domain")
    nx, ny = len(x_edges) - 1, len(y_edges) - 1
    if len(elements) != nx * ny:
        raise MeshError(
            f"Nonconforming mesh: {len(elements)} elements for a {nx}x{ny} breakpoint grid"
        )

    order = np.full(nx * ny, -1, dtype=np.int64)
    for index, element in enumerate(elements):
        coords = nodes[element]
        i = int(np.argmin(np.abs(x_edges - coords[0, 0])))
        j = int(np.argmin(np.abs(y_edges - coords[0, 1])))
        if i >= nx or j >= ny:
            raise MeshError(f"Nonconforming element {index}: first node is not a lower-left corner")
        xs = (x_edges[i], 0.5 * (x_edges[i] + x_edges[i + 1]), x_edges[i + 1])
        ys = (y_edges[j], 0.5 * (y_edges[j] + y_edges[j + 1]), y_edges[j + 1])
        expected = np.array([(x, y) for y in ys for x in xs])
        if np.max(np.abs(coords - expected)) > 1e-9 * scale:
            raise MeshError(f"Nonconforming element {index}: nodes do not form a Q2 cell")
        if order[j * nx + i] >= 0:
            raise MeshError(f"Nonconforming element {index}: overlaps element {order[j * nx + i]}")
        order[j * nx + i] = index
    return (x_edges, y_edges), order


def _expected_boundary_edges(elements, breakpoints):
    x_edges, y_edges = breakpoints
    nx = len(x_edges) - 1
    ny = len(y_edges) - 1
    bottom = [(elements[i][0], elements[i][2]) for i in range(nx)]
    right = [(elements[j * nx + nx - 1][2], elements[j * nx + nx - 1][8]) for j in range(ny)]
    top = [(elements[(ny - 1) * nx + i][6], elements[(ny - 1) * nx + i][8]) for i in range(nx)]
    left = [(elements[j * nx][0], elements[j * nx][6]) for j in range(ny)]
    return [tuple(sorted(map(int, edge))) for edge in bottom + right + top + left]


def load_mesh(path):
    """Read and validate a mesh file written by save_mesh or an external generator"""
    path = Path(path)
    reader = _Reader(path)
    if reader.done():
        raise MeshError(f"{path}: empty mesh file")
    number, tokens = reader.next("header")
    if " ".join(tokens) != MESH_HEADER:
        raise MeshError(f"{path}:{number}: expected header '{MESH_HEADER}'")
    number, tokens = reader.next("domain")
    if len(tokens) != 4 or tokens[0] != "domain":
        raise MeshError(f"{path}:{number}: expected 'domain <kind> <a> <b>'")
    try:
        if tokens[1] == "rectangle":
            domain = Rectangle(float(tokens[2]), float(tokens[3]))
        elif tokens[1] == "annulus":
            domain = Annulus(float(tokens[2]), float(tokens[3]))
        else:
            raise MeshError(f"{path}:{number}: unknown domain kind '{tokens[1]}'")
    except ValueError as err:
        raise MeshError(f"{path}:{number}: {err}") from err

    radial = domain.kind == "annulus"
    dim, per_element = (1, 3) if radial else (2, 9)
    n_nodes = reader.section("nodes")
    nodes = np.array(
        [reader.numbers(dim, float, "node coordinates") for _ in range(n_nodes)], dtype=float
    ).reshape(n_nodes, dim)
    n_elements = reader.section("elements")
    elements = np.array(
        [reader.numbers(per_element, int, "element connectivity") for _ in range(n_elements)],
        dtype=np.int64,
    ).reshape(n_elements, per_element)
    if n_nodes == 0 or n_elements == 0:
        raise MeshError(f"{path}: mesh has no nodes or no elements")
    if not np.all(np.isfinite(nodes)):
        raise MeshError(f"{path}: non-finite node coordinates")
    if elements.min() < 0 or elements.max() >= n_nodes:
        raise MeshError(f"{path}: element connectivity refers to missing nodes")

    n_boundary = reader.section("boundary")
    tagged = {}
    allowed = RADIAL_SIDES if radial else RECTANGLE_SIDES
    for _ in range(n_boundary):
        number, tokens = reader.next("boundary edge")
        if len(tokens) != 4 or tokens[0] != "edge":
            raise MeshError(f"{path}:{number}: expected 'edge <n1> <n2> <tag>'")
        if tokens[3] not in allowed:
            raise MeshError(f"{path}:{number}: unknown boundary tag '{tokens[3]}'")
        tagged[tuple(sorted((int(tokens[1]), int(tokens[2]))))] = tokens[3]

    features = []
    if not reader.done():
        for _ in range(reader.section("features")):
            number, tokens = reader.next("feature line")
            if len(tokens) != 3 or tokens[0] != "line":
                raise MeshError(f"{path}:{number}: expected 'line <axis> <value>'")
            features.append(_line_key(tokens[1], float(tokens[2])))
    if not reader.done():
        number, _ = reader.next()
        raise MeshError(f"{path}:{number}: trailing content")

    if radial:
        order = np.argsort(nodes[elements[:, 0], 0], kind="stable")
        elements = elements[order]
        edges = np.concatenate([nodes[elements[:, 0], 0], [nodes[elements[-1, 2], 0]]])
        if np.any(np.diff(edges) <= 0) or np.any(
            np.abs(nodes[elements[:, 1], 0] - 0.5 * (edges[1:] + edges[:-1])) > 1e-9
        ):
            raise MeshError(f"{path}: nonconforming radial elements")
        if np.any(nodes[elements[1:, 0], 0] != nodes[elements[:-1, 2], 0]):
            raise MeshError(f"{path}: radial elements do not share end nodes")
        breakpoints = (edges,)
        first, last = int(elements[0, 0]), int(elements[-1, 2])
        expected = [(first, first), (last, last)]
    else:
        breakpoints, order = _validate_rectangle(domain, nodes, elements)
        elements = elements[order]
        expected = _expected_boundary_edges(elements, breakpoints)

    for edge in expected:
        if edge not in tagged:
            raise MeshError(f"{path}: boundary edge {edge[0]} {edge[1]} has no tag")
    boundary_edges = tuple((n1, n2, tagged[(n1, n2)]) for n1, n2 in expected)

    mesh = Mesh(
        domain=domain,
        nodes=nodes,
        elements=elements,
        boundary_edges=boundary_edges,
        breakpoints=breakpoints,
        feature_lines=tuple(sorted(set(features))),
    )
    for axis, value in mesh.feature_lines:
        if not mesh.has_edge_line(axis, value):
            raise MeshError(f"{path}: feature line {axis}={value} is not on an element edge")
    logger.info("Loaded %s from %s", mesh.describe(), path)
    return mesh
