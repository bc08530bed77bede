"""Triangle meshes with boundary markers: construction, deformation, quality, VTK export.

Meshes are immutable: every operation that changes geometry returns a new mesh
sharing connectivity arrays where possible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MeshInversionError(RuntimeError):
    """A deformation produced a triangle with nonpositive signed area."""

    def __init__(self, triangle: int, area: float):
        super().__init__(
            f"deformation inverts triangle {triangle} (signed area {area:.3e})"
        )
        self.triangle = triangle
        self.area = area


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Mesh2D:
    """Triangulated planar domain with marked boundary edges.

    nodes: (n, 2) float coordinates.
    triangles: (m, 3) node indices, counterclockwise.
    boundary_edges: (k, 2) node-index pairs lying on the domain boundary.
    boundary_markers: (k,) small-integer marker per boundary edge.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_markers: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", _readonly(np.asarray(self.nodes, dtype=float)))
        object.__setattr__(self, "triangles", _readonly(np.asarray(self.triangles, dtype=np.int64)))
        object.__setattr__(self, "boundary_edges", _readonly(np.asarray(self.boundary_edges, dtype=np.int64)))
        object.__setattr__(self, "boundary_markers", _readonly(np.asarray(self.boundary_markers, dtype=np.int64)))

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def signed_areas(self) -> np.ndarray:
        return signed_areas(self.nodes, self.triangles)

    def marker_set(self) -> set[int]:
        return set(int(m) for m in np.unique(self.boundary_markers))

    def nodes_on(self, markers) -> np.ndarray:
        """Sorted unique node indices lying on boundary edges with the given markers."""
        markers = np.atleast_1d(np.asarray(markers, dtype=np.int64))
        mask = np.isin(self.boundary_markers, markers)
        return np.unique(self.boundary_edges[mask])

    def validate(self) -> None:
        """Raise ValueError if any mesh invariant is violated."""
        n = self.n_nodes
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise ValueError("nodes must be an (n, 2) array")
        if not np.all(np.isfinite(self.nodes)):
            raise ValueError("node coordinates must be finite")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= n):
            raise ValueError("triangle index out of range")
        if self.boundary_edges.size and (self.boundary_edges.min() < 0 or self.boundary_edges.max() >= n):
            raise ValueError("boundary edge index out of range")
        areas = self.signed_areas()
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise ValueError(f"triangle {bad} has nonpositive signed area {areas[bad]:.3e}")
        # Each boundary edge must belong to exactly one triangle.
        counts = {}
        for tri in self.triangles:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(a, b), max(a, b))
                counts[key] = counts.get(key, 0) + 1
        for a, b in self.boundary_edges:
            key = (min(a, b), max(a, b))
            if counts.get(key, 0) != 1:
                raise ValueError(f"boundary edge ({a}, {b}) is in {counts.get(key, 0)} triangles")
        # Every edge owned by a single triangle must be a boundary edge, and the
        # boundary edges must form closed loops (every endpoint has degree 2).
        single = set(k for k, c in counts.items() if c == 1)
        declared = set((min(a, b), max(a, b)) for a, b in self.boundary_edges)
        if single != declared:
            raise ValueError("boundary edges do not match the triangulation boundary")
        degree = np.zeros(n, dtype=np.int64)
        for a, b in self.boundary_edges:
            degree[a] += 1
            degree[b] += 1
        used = np.unique(self.boundary_edges)
        if used.size and not np.all(degree[used] == 2):
            raise ValueError("boundary edges do not form closed polygonal loops")


def signed_areas(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = nodes[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def unit_square(n: int) -> Mesh2D:
    """Structured crisscross mesh of [0,1]^2 with (n+1)^2 nodes and 2 n^2 triangles.

    Boundary markers: 1 left, 2 right, 3 bottom, 4 top.
    """
    if n < 1:
        raise ValueError(f"unit_square requires n >= 1, got {n}")
    xs = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(xs, xs, indexing="xy")
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    def idx(ix, iy):
        return iy * (n + 1) + ix

    triangles = []
    for iy in range(n):
        for ix in range(n):
            v00 = idx(ix, iy)
            v10 = idx(ix + 1, iy)
            v01 = idx(ix, iy + 1)
            v11 = idx(ix + 1, iy + 1)
            triangles.append((v00, v10, v11))
            triangles.append((v00, v11, v01))

    edges = []
    markers = []
    for iy in range(n):  # left / right
        edges.append((idx(0, iy), idx(0, iy + 1)))
        markers.append(1)
        edges.append((idx(n, iy), idx(n, iy + 1)))
        markers.append(2)
    for ix in range(n):  # bottom / top
        edges.append((idx(ix, 0), idx(ix + 1, 0)))
        markers.append(3)
        edges.append((idx(ix, n), idx(ix + 1, n)))
        markers.append(4)

    return Mesh2D(nodes, np.array(triangles), np.array(edges), np.array(markers))


# Channel template: rectangle [0,3]x[0,1] plus three outlet stubs of width 0.4
# centered at x = 0.7, 1.5, 2.3 reaching up to y = 1.6.  All template coordinates
# are multiples of 0.1, so lattice construction with spacing 0.1/resolution is
# exact and needs no floating-point node deduplication.
_CHANNEL_STUBS = ((0.5, 0.9), (1.3, 1.7), (2.1, 2.5))


def three_outlet_channel(resolution: int) -> Mesh2D:
    """Channel with one inlet and three outlet stubs of differing path lengths.

    Markers: 1 inlet (x=0), 2/3/4 the outlet openings at y=1.6 (left to right),
    5 all remaining walls.  Triangle count grows ~4x per resolution doubling.
    """
    if resolution < 1:
        raise ValueError(f"three_outlet_channel requires resolution >= 1, got {resolution}")
    r = int(resolution)
    # Lattice units: one template unit of 0.1 spans r cells.
    nx, ny = 30 * r, 16 * r
    h = 0.1 / r

    stubs = ((5 * r, 9 * r), (13 * r, 17 * r), (21 * r, 25 * r))

    def inside(i, j):
        if i < 0 or j < 0 or j >= ny:
            return False
        if j < 10 * r:
            return i < 30 * r
        return any(lo <= i < hi for lo, hi in stubs)

    node_id = {}
    nodes = []

    def get_node(i, j):
        key = (i, j)
        if key not in node_id:
            node_id[key] = len(nodes)
            nodes.append((i * h, j * h))
        return node_id[key]

    triangles = []
    for j in range(ny):
        for i in range(nx):
            if not inside(i, j):
                continue
            v00 = get_node(i, j)
            v10 = get_node(i + 1, j)
            v01 = get_node(i, j + 1)
            v11 = get_node(i + 1, j + 1)
            triangles.append((v00, v10, v11))
            triangles.append((v00, v11, v01))

    # Boundary = lattice edges adjacent to exactly one included cell.
    edges = []
    markers = []

    def classify(xm, ym):
        if xm == 0.0 and ym <= 1.0:
            return 1
        if ym == 1.6:
            for k, (lo, hi) in enumerate(_CHANNEL_STUBS):
                if lo <= xm <= hi:
                    return 2 + k
        return 5

    for j in range(ny):
        for i in range(nx):
            if not inside(i, j):
                continue
            # left, right, bottom, top neighbours
            if not inside(i - 1, j):
                edges.append((get_node(i, j), get_node(i, j + 1)))
                markers.append(classify(i * h, (j + 0.5) * h))
            if not inside(i + 1, j):
                edges.append((get_node(i + 1, j), get_node(i + 1, j + 1)))
                markers.append(classify((i + 1) * h, (j + 0.5) * h))
            if not inside(i, j - 1):
                edges.append((get_node(i, j), get_node(i + 1, j)))
                markers.append(classify((i + 0.5) * h, j * h))
            if not inside(i, j + 1):
                edges.append((get_node(i, j + 1), get_node(i + 1, j + 1)))
                markers.append(classify((i + 0.5) * h, (j + 1) * h))

    return Mesh2D(np.array(nodes), np.array(triangles), np.array(edges), np.array(markers))


def disk(n: int) -> Mesh2D:
    """Hexagonal-ring triangulation of the unit disk, n concentric rings.

    1 + 3n(n+1) nodes, 6 n^2 triangles.  Whole boundary carries marker 1.
    """
    if n < 1:
        raise ValueError(f"disk requires n >= 1, got {n}")
    nodes = [(0.0, 0.0)]
    ring_start = [0]  # index of first node of ring k (ring 0 is the center)
    for k in range(1, n + 1):
        ring_start.append(len(nodes))
        m = 6 * k
        ang = 2.0 * np.pi * np.arange(m) / m
        rad = k / n
        for a in ang:
            nodes.append((rad * np.cos(a), rad * np.sin(a)))

    triangles = []
    # Innermost fan around the center.
    s1 = ring_start[1]
    for j in range(6):
        triangles.append((0, s1 + j, s1 + (j + 1) % 6))
    # Stitch consecutive rings: compare angular fractions with integer products
    # so node pairing is exact and deterministic.
    for k in range(2, n + 1):
        mi, mo = 6 * (k - 1), 6 * k
        si, so = ring_start[k - 1], ring_start[k]
        i = o = 0
        while i < mi or o < mo:
            adv_outer = o < mo and (i == mi or (o + 1) * mi <= (i + 1) * mo)
            if adv_outer:
                triangles.append((so + o % mo, so + (o + 1) % mo, si + i % mi))
                o += 1
            else:
                triangles.append((so + o % mo, si + (i + 1) % mi, si + i % mi))
                i += 1

    so, mo = ring_start[n], 6 * n
    edges = [(so + j, so + (j + 1) % mo) for j in range(mo)]
    markers = [1] * mo
    return Mesh2D(np.array(nodes), np.array(triangles), np.array(edges), np.array(markers))


def deform(mesh: Mesh2D, field: np.ndarray) -> Mesh2D:
    """Translate every node by the given (n, 2) displacement field.

    Raises MeshInversionError (naming the first offending triangle) if any
    triangle ends up with nonpositive signed area.
    """
    field = np.asarray(field, dtype=float)
    if field.shape != mesh.nodes.shape:
        raise ValueError(f"deformation field shape {field.shape} != nodes shape {mesh.nodes.shape}")
    new_nodes = mesh.nodes + field
    areas = signed_areas(new_nodes, mesh.triangles)
    if np.any(areas <= 0.0):
        bad = int(np.argmin(areas))
        raise MeshInversionError(bad, float(areas[bad]))
    return Mesh2D(new_nodes, mesh.triangles, mesh.boundary_edges, mesh.boundary_markers)


def triangle_quality(coords: np.ndarray) -> float:
    """Radius-ratio quality 2*r_in/r_circ of one triangle: 1 equilateral, 0 degenerate."""
    coords = np.asarray(coords, dtype=float)
    a = np.linalg.norm(coords[1] - coords[0])
    b = np.linalg.norm(coords[2] - coords[1])
    c = np.linalg.norm(coords[0] - coords[2])
    d1 = coords[1] - coords[0]
    d2 = coords[2] - coords[0]
    area = 0.5 * abs(d1[0] * d2[1] - d1[1] * d2[0])
    if area == 0.0:
        return 0.0
    # 2*(area/s) / (abc/(4*area)) with s the semiperimeter
    return 16.0 * area * area / ((a + b + c) * a * b * c)


def min_quality(mesh: Mesh2D) -> float:
    """Minimum radius-ratio quality over all triangles."""
    p = mesh.nodes[mesh.triangles]
    a = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    b = np.linalg.norm(p[:, 2] - p[:, 1], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 2], axis=1)
    area = np.abs(signed_areas(mesh.nodes, mesh.triangles))
    q = np.where(area > 0.0, 16.0 * area * area / ((a + b + c) * a * b * c), 0.0)
    return float(q.min())


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_vtk(mesh: Mesh2D, path, point_data: dict | None = None, title: str = "pdeopt mesh") -> None:
    """Write the mesh as VTK legacy ASCII (unstructured grid, cell type 5).

    point_data maps field names to per-node scalars (n,) or vectors (n, 2);
    vectors are padded with a zero z component.
    """
    lines = [
        "# vtk DataFile Version 3.0",
        title,
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_nodes} double",
    ]
    for x, y in mesh.nodes:
        lines.append(f"{_fmt(x)} {_fmt(y)} 0")
    m = mesh.n_triangles
    lines.append(f"CELLS {m} {4 * m}")
    for a, b, c in mesh.triangles:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {m}")
    lines.extend(["5"] * m)
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_nodes}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if values.ndim == 1:
                lines.append(f"SCALARS {name} double 1")
                lines.append("LOOKUP_TABLE default")
                lines.extend(_fmt(v) for v in values)
            elif values.ndim == 2 and values.shape[1] == 2:
                lines.append(f"VECTORS {name} double")
                lines.extend(f"{_fmt(vx)} {_fmt(vy)} 0" for vx, vy in values)
            else:
                raise ValueError(f"point_data field {name!r} must be (n,) or (n, 2)")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_vtk(path) -> tuple[Mesh2D | None, dict[str, np.ndarray]]:
    """Read back a VTK file written by write_vtk.  Returns (mesh, point_data).

    Only the subset emitted by write_vtk is understood; boundary edges are not
    stored in VTK, so the returned mesh carries empty boundary data.
    """
    with open(path, encoding="utf-8") as fh:
        tokens = fh.read().split("\n")
    i = 0
    nodes = tris = None
    data: dict[str, np.ndarray] = {}
    while i < len(tokens):
        line = tokens[i].split()
        if not line:
            i += 1
            continue
        if line[0] == "POINTS":
            count = int(line[1])
            nodes = np.array([[float(v) for v in tokens[i + 1 + j].split()[:2]] for j in range(count)])
            i += 1 + count
        elif line[0] == "CELLS":
            count = int(line[1])
            tris = np.array([[int(v) for v in tokens[i + 1 + j].split()[1:4]] for j in range(count)])
            i += 1 + count
        elif line[0] == "SCALARS":
            name = line[1]
            count = nodes.shape[0]
            data[name] = np.array([float(tokens[i + 2 + j]) for j in range(count)])
            i += 2 + count
        elif line[0] == "VECTORS":
            name = line[1]
            count = nodes.shape[0]
            data[name] = np.array([[float(v) for v in tokens[i + 1 + j].split()[:2]] for j in range(count)])
            i += 1 + count
        else:
            i += 1
    mesh = None
    if nodes is not None and tris is not None:
        mesh = Mesh2D(nodes, tris, np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64))
    return mesh, data
