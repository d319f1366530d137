"""Structured meshes on rectangles with boundary segment tagging.

The grid is a uniform decomposition of a rectangle into bilinear
quadrilaterals (default) or, optionally, into linear triangles obtained by
splitting every cell along the (i,j)->(i+1,j+1) diagonal.  Nodes are ordered
lexicographically, y-major (row j, then column i), which fixes the sparsity
pattern of every assembled operator.

Boundary classification follows the recharge benchmark geometry: a Dirichlet
strip on the top edge, a Dirichlet strip on the lower part of the right edge,
and no-flow everywhere else.  Junction nodes resolve Dirichlet-first, with
the right-edge segment winning over the top segment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TAG_D1 = "D1"
TAG_D2 = "D2"
TAG_N = "N"


@dataclass(frozen=True)
class Domain2D:
    """Axis-aligned rectangle (x_min, x_max) x (y_min, y_max)."""

    x_min: float = 0.0
    x_max: float = 2.0
    y_min: float = 0.0
    y_max: float = 3.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate domain: {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True, eq=False)
class GridMesh:
    """Uniform structured mesh, quadrilateral or triangulated."""

    domain: Domain2D
    nx: int
    ny: int
    element_type: str  # "quad" | "tri"
    nodes: np.ndarray = field(repr=False)  # (n_nodes, 2)
    conn: np.ndarray = field(repr=False)  # (n_elements, 4 or 3), counterclockwise
    h: float = 0.0  # max element diameter

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.conn.shape[0]

    @property
    def dx(self) -> float:
        return self.domain.width / self.nx

    @property
    def dy(self) -> float:
        return self.domain.height / self.ny

    def node_index(self, i: int, j: int) -> int:
        return j * (self.nx + 1) + i

    def element_areas(self) -> np.ndarray:
        """Shoelace area per element (positive for counterclockwise conn)."""
        x = self.nodes[self.conn, 0]
        y = self.nodes[self.conn, 1]
        xs = np.roll(x, -1, axis=1)
        ys = np.roll(y, -1, axis=1)
        return 0.5 * np.sum(x * ys - xs * y, axis=1)


def build_grid(domain: Domain2D, nx: int, ny: int, element_type: str = "quad") -> GridMesh:
    """Build the uniform grid with nx*ny cells and lexicographic node order."""
    if nx < 1 or ny < 1:
        raise ValueError(f"element counts must be >= 1, got nx={nx}, ny={ny}")
    if element_type not in ("quad", "tri"):
        raise ValueError(f"unknown element type {element_type!r}")

    xs = np.linspace(domain.x_min, domain.x_max, nx + 1)
    ys = np.linspace(domain.y_min, domain.y_max, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # Y-major: row j holds y = ys[j]
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    a = idx[:-1, :-1].ravel()  # (i, j)
    b = idx[:-1, 1:].ravel()  # (i+1, j)
    c = idx[1:, 1:].ravel()  # (i+1, j+1)
    d = idx[1:, :-1].ravel()  # (i, j+1)
    if element_type == "quad":
        conn = np.column_stack([a, b, c, d])
    else:
        lower = np.column_stack([a, b, c])
        upper = np.column_stack([a, c, d])
        conn = np.empty((2 * nx * ny, 3), dtype=np.int64)
        conn[0::2] = lower
        conn[1::2] = upper

    dx = domain.width / nx
    dy = domain.height / ny
    h = float(np.hypot(dx, dy))  # cell diagonal, also the triangle hypotenuse
    return GridMesh(
        domain=domain,
        nx=nx,
        ny=ny,
        element_type=element_type,
        nodes=nodes,
        conn=np.ascontiguousarray(conn, dtype=np.int64),
        h=h,
    )


@dataclass(frozen=True, eq=False)
class BoundaryTags:
    """Tags for boundary nodes and boundary edges; one of D1, D2, N each."""

    boundary_nodes: np.ndarray  # (nb,) node indices, sorted
    node_tags: np.ndarray  # (nb,) strings from {D1, D2, N}
    edges: np.ndarray  # (ne, 2) node index pairs
    edge_tags: np.ndarray  # (ne,)

    def nodes_with(self, tag: str) -> np.ndarray:
        return self.boundary_nodes[self.node_tags == tag]

    @property
    def dirichlet_nodes(self) -> np.ndarray:
        keep = (self.node_tags == TAG_D1) | (self.node_tags == TAG_D2)
        return self.boundary_nodes[keep]


def classify_boundary(
    mesh: GridMesh,
    domain: Domain2D | None = None,
    d1_x_max: float = 1.0,
    d2_y_max: float = 1.0,
) -> BoundaryTags:
    """Tag boundary nodes and edges.

    D1 is the top-edge strip x in [x_min, d1_x_max], D2 the right-edge strip
    y in [y_min, d2_y_max]; the rest of the boundary is N.  A point matching
    both Dirichlet segments resolves to D2.
    """
    if domain is None:
        domain = mesh.domain
    x = mesh.nodes[:, 0]
    y = mesh.nodes[:, 1]
    tol = 1e-12 * max(domain.width, domain.height)

    on_left = np.abs(x - domain.x_min) <= tol
    on_right = np.abs(x - domain.x_max) <= tol
    on_bottom = np.abs(y - domain.y_min) <= tol
    on_top = np.abs(y - domain.y_max) <= tol
    on_boundary = on_left | on_right | on_bottom | on_top

    boundary_nodes = np.flatnonzero(on_boundary)

    def tag_points(px, py):
        in_d2 = (np.abs(px - domain.x_max) <= tol) & (py <= d2_y_max + tol)
        in_d1 = (np.abs(py - domain.y_max) <= tol) & (px <= d1_x_max + tol)
        tags = np.full(px.shape, TAG_N, dtype="<U2")
        tags[in_d1] = TAG_D1
        tags[in_d2] = TAG_D2  # D2 wins at an overlap
        return tags

    node_tags = tag_points(x[boundary_nodes], y[boundary_nodes])

    idx = np.arange(mesh.n_nodes).reshape(mesh.ny + 1, mesh.nx + 1)
    eb = np.column_stack([idx[0, :-1], idx[0, 1:]])  # bottom
    et = np.column_stack([idx[-1, :-1], idx[-1, 1:]])  # top
    el = np.column_stack([idx[:-1, 0], idx[1:, 0]])  # left
    er = np.column_stack([idx[:-1, -1], idx[1:, -1]])  # right
    edges = np.vstack([eb, et, el, er])
    mids = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
    edge_tags = tag_points(mids[:, 0], mids[:, 1])

    return BoundaryTags(
        boundary_nodes=boundary_nodes,
        node_tags=node_tags,
        edges=edges,
        edge_tags=edge_tags,
    )
