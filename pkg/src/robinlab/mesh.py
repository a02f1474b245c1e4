"""Simplicial meshes for Lipschitz domains: intervals (1D) and polygons (2D).

A mesh carries vertices, simplex cells, and tagged boundary facets with
outward unit normals and surface measure (counting measure on the two
endpoints in 1D, edge length in 2D).  Boundary charts of graph type
``(y, psi(y) + s)`` with a piecewise-linear ``psi`` table live here too,
together with the nodal trace operator and a line-oriented mesh file
format.

Meshes are treated as immutable after construction; the coordinate and
connectivity arrays are marked read-only so they can be shared freely
between assembly workers.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy.spatial import Delaunay
from shapely.geometry import Polygon as _ShapelyPolygon


class MeshError(Exception):
    """Invalid mesh topology or geometry."""


class ChartError(Exception):
    """Invalid chart table, or a point outside the chart cylinder."""


GEOMETRY_TOL = 1e-10
ORTHOGONALITY_TOL = 1e-12


@dataclass(frozen=True)
class BoundaryFacet:
    """One boundary facet: a vertex in 1D, an edge in 2D.

    ``measure`` is 1.0 in 1D (counting measure on the endpoints) and the
    edge length in 2D.  ``cell`` is the unique owning cell.
    """

    vertices: tuple
    normal: np.ndarray
    measure: float
    cell: int


@dataclass(eq=False)
class Mesh:
    dim: int
    vertices: np.ndarray  # (nv, dim)
    cells: np.ndarray  # (nc, dim + 1), int
    boundary_facets: tuple
    vertex_is_boundary: np.ndarray  # (nv,), bool
    _cache: dict = field(default_factory=dict, repr=False)

    # -- construction ------------------------------------------------------

    @classmethod
    def from_arrays(cls, dim, vertices, cells):
        """Build a mesh from raw vertex/cell arrays.

        Cell orientation is normalized (positive length/area), boundary
        facets are extracted from the cell incidence structure, and the
        full invariant set is checked.
        """
        vertices = np.ascontiguousarray(np.atleast_2d(np.asarray(vertices, dtype=float)))
        if vertices.shape[0] == dim and vertices.shape[1] != dim:
            vertices = vertices.T
        cells = np.ascontiguousarray(np.asarray(cells, dtype=np.intp))
        if vertices.ndim != 2 or vertices.shape[1] != dim:
            raise MeshError(f"vertex array must be (nv, {dim})")
        if cells.ndim != 2 or cells.shape[1] != dim + 1:
            raise MeshError(f"cell array must be (nc, {dim + 1})")
        cells = _fix_orientation(dim, vertices, cells)
        facets, vflag = _extract_boundary(dim, vertices, cells)
        vertices.setflags(write=False)
        cells.setflags(write=False)
        vflag.setflags(write=False)
        mesh = cls(dim, vertices, cells, facets, vflag)
        mesh.validate()
        return mesh

    # -- derived geometry ---------------------------------------------------

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_cells(self):
        return self.cells.shape[0]

    def cell_volumes(self):
        if "volumes" not in self._cache:
            self._cache["volumes"] = _cell_volumes(self.dim, self.vertices, self.cells)
        return self._cache["volumes"]

    def barycenters(self):
        if "barycenters" not in self._cache:
            self._cache["barycenters"] = self.vertices[self.cells].mean(axis=1)
        return self._cache["barycenters"]

    def p1_gradients(self):
        """Constant gradients of the nodal basis, shape (nc, dim+1, dim)."""
        if "grads" not in self._cache:
            self._cache["grads"] = _p1_gradients(self.dim, self.vertices, self.cells)
        return self._cache["grads"]

    def h_max(self):
        pts = self.vertices[self.cells]
        if self.dim == 1:
            return float(np.abs(pts[:, 1, 0] - pts[:, 0, 0]).max())
        d01 = np.linalg.norm(pts[:, 0] - pts[:, 1], axis=1)
        d02 = np.linalg.norm(pts[:, 0] - pts[:, 2], axis=1)
        d12 = np.linalg.norm(pts[:, 1] - pts[:, 2], axis=1)
        return float(np.max([d01, d02, d12]))

    def boundary_vertex_indices(self):
        if "bidx" not in self._cache:
            idx = np.flatnonzero(self.vertex_is_boundary)
            idx.setflags(write=False)
            self._cache["bidx"] = idx
        return self._cache["bidx"]

    def boundary_measure(self):
        return float(sum(f.measure for f in self.boundary_facets))

    def volume(self):
        return float(self.cell_volumes().sum())

    def facet_midpoints(self):
        if "fmid" not in self._cache:
            mids = np.array(
                [self.vertices[list(f.vertices)].mean(axis=0) for f in self.boundary_facets]
            )
            self._cache["fmid"] = mids
        return self._cache["fmid"]

    # -- invariants ----------------------------------------------------------

    def validate(self):
        """Check the mesh invariant set; raise MeshError on violation."""
        vols = _cell_volumes(self.dim, self.vertices, self.cells)
        if np.any(vols <= 0.0):
            raise MeshError("cell with nonpositive measure after orientation fix")
        counts = _facet_counts(self.dim, self.cells)
        bad = [k for k, v in counts.items() if v > 2]
        if bad:
            raise MeshError(f"facet shared by more than two cells: {bad[:3]}")
        boundary_keys = {tuple(sorted(f.vertices)) for f in self.boundary_facets}
        for key, count in counts.items():
            if count == 1 and key not in boundary_keys:
                raise MeshError(f"untagged boundary facet {key}")
            if count == 2 and key in boundary_keys:
                raise MeshError(f"interior facet tagged as boundary: {key}")
        for f in self.boundary_facets:
            if abs(np.linalg.norm(f.normal) - 1.0) > ORTHOGONALITY_TOL:
                raise MeshError(f"non-unit normal on facet {f.vertices}")
        if not _cells_connected(self.n_vertices, self.cells):
            raise MeshError("cell union is not connected")

    # -- file format ----------------------------------------------------------

    def save(self, path):
        """Write the plain-text mesh format (17 significant digits)."""
        lines = [str(self.dim)]
        for v in self.vertices:
            lines.append("v " + " ".join(_fmt(x) for x in v))
        for c in self.cells:
            lines.append("c " + " ".join(str(int(i)) for i in c))
        for f in self.boundary_facets:
            idx = " ".join(str(int(i)) for i in f.vertices)
            nrm = " ".join(_fmt(x) for x in f.normal)
            lines.append(f"bf {idx} {nrm}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        """Read the plain-text mesh format written by :meth:`save`."""
        with open(path) as fh:
            raw = [ln.strip() for ln in fh if ln.strip()]
        if not raw:
            raise MeshError("empty mesh file")
        try:
            dim = int(raw[0])
        except ValueError as exc:
            raise MeshError("first line must be the dimension") from exc
        if dim not in (1, 2):
            raise MeshError(f"unsupported dimension {dim}")
        verts, cells, bfs = [], [], []
        for ln in raw[1:]:
            tag, *toks = ln.split()
            if tag == "v":
                if len(toks) != dim:
                    raise MeshError(f"bad vertex line: {ln!r}")
                verts.append([float(t) for t in toks])
            elif tag == "c":
                if len(toks) != dim + 1:
                    raise MeshError(f"bad cell line: {ln!r}")
                cells.append([int(t) for t in toks])
            elif tag == "bf":
                if len(toks) != 2 * dim:
                    raise MeshError(f"bad boundary facet line: {ln!r}")
                bfs.append(
                    (tuple(int(t) for t in toks[:dim]), np.array([float(t) for t in toks[dim:]]))
                )
            else:
                raise MeshError(f"unknown record {tag!r}")
        mesh = cls.from_arrays(dim, np.array(verts), np.array(cells))
        computed = {tuple(sorted(f.vertices)): f for f in mesh.boundary_facets}
        if len(bfs) != len(computed):
            raise MeshError("boundary facet list inconsistent with cell structure")
        for idx, nrm in bfs:
            f = computed.get(tuple(sorted(idx)))
            if f is None:
                raise MeshError(f"facet {idx} is not a boundary facet of the cell structure")
            if np.max(np.abs(f.normal - nrm)) > 1e-12:
                raise MeshError(f"stored normal for facet {idx} disagrees with geometry")
        return mesh


def _fmt(x):
    return format(float(x), ".17g")


def _fix_orientation(dim, vertices, cells):
    cells = cells.copy()
    if dim == 1:
        flip = vertices[cells[:, 0], 0] > vertices[cells[:, 1], 0]
        cells[flip] = cells[flip][:, ::-1]
        return cells
    p = vertices[cells]
    cross = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 1, 1] - p[:, 0, 1]
    ) * (p[:, 2, 0] - p[:, 0, 0])
    flip = cross < 0
    cells[flip] = cells[flip][:, [0, 2, 1]]
    return cells


def _cell_volumes(dim, vertices, cells):
    p = vertices[cells]
    if dim == 1:
        return p[:, 1, 0] - p[:, 0, 0]
    cross = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
        p[:, 1, 1] - p[:, 0, 1]
    ) * (p[:, 2, 0] - p[:, 0, 0])
    return 0.5 * cross


def _p1_gradients(dim, vertices, cells):
    p = vertices[cells]
    n = cells.shape[0]
    if dim == 1:
        h = (p[:, 1, 0] - p[:, 0, 0])[:, None, None]
        g = np.broadcast_to(np.array([[-1.0], [1.0]]), (n, 2, 1)) / h
        return np.ascontiguousarray(g)
    vol2 = 2.0 * _cell_volumes(2, vertices, cells)
    g = np.empty((n, 3, 2))
    for loc, (j, k) in enumerate(((1, 2), (2, 0), (0, 1))):
        g[:, loc, 0] = p[:, j, 1] - p[:, k, 1]
        g[:, loc, 1] = p[:, k, 0] - p[:, j, 0]
    return g / vol2[:, None, None]


def _facet_counts(dim, cells):
    counts = {}
    if dim == 1:
        for c in cells:
            for v in c:
                key = (int(v),)
                counts[key] = counts.get(key, 0) + 1
        return counts
    for c in cells:
        for j, k in ((0, 1), (1, 2), (2, 0)):
            key = tuple(sorted((int(c[j]), int(c[k]))))
            counts[key] = counts.get(key, 0) + 1
    return counts


def _extract_boundary(dim, vertices, cells):
    counts = {}
    owner = {}
    if dim == 1:
        for ci, c in enumerate(cells):
            for v in c:
                key = (int(v),)
                counts[key] = counts.get(key, 0) + 1
                owner[key] = ci
    else:
        for ci, c in enumerate(cells):
            for j, k in ((0, 1), (1, 2), (2, 0)):
                key = tuple(sorted((int(c[j]), int(c[k]))))
                counts[key] = counts.get(key, 0) + 1
                owner[key] = ci
    facets = []
    vflag = np.zeros(vertices.shape[0], dtype=bool)
    for key, count in sorted(counts.items()):
        if count != 1:
            continue
        ci = owner[key]
        if dim == 1:
            (v,) = key
            cell = cells[ci]
            other = int(cell[0]) if int(cell[1]) == v else int(cell[1])
            sign = 1.0 if vertices[v, 0] > vertices[other, 0] else -1.0
            facets.append(BoundaryFacet((v,), np.array([sign]), 1.0, ci))
            vflag[v] = True
        else:
            i, j = key
            edge = vertices[j] - vertices[i]
            length = float(np.linalg.norm(edge))
            if length <= 0.0:
                raise MeshError(f"degenerate boundary edge {key}")
            n = np.array([edge[1], -edge[0]]) / length
            opp = [int(v) for v in cells[ci] if int(v) not in key][0]
            mid = 0.5 * (vertices[i] + vertices[j])
            if np.dot(n, vertices[opp] - mid) > 0.0:
                n = -n
            facets.append(BoundaryFacet((int(i), int(j)), n, length, ci))
            vflag[i] = vflag[j] = True
    for f in facets:
        f.normal.setflags(write=False)
    return tuple(facets), vflag


def _cells_connected(n_vertices, cells):
    if cells.shape[0] == 0:
        return False
    parent = list(range(n_vertices))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for c in cells:
        r = find(int(c[0]))
        for v in c[1:]:
            rv = find(int(v))
            if rv != r:
                parent[rv] = r
    used = np.unique(cells)
    roots = {find(int(v)) for v in used}
    return len(roots) == 1


# -- builders -----------------------------------------------------------------


def build_interval_mesh(a, b, n_cells):
    """Uniform 1D mesh of (a, b) with endpoint facets carrying normals -1, +1."""
    if not a < b:
        raise ValueError(f"degenerate interval: a={a} must be < b={b}")
    if n_cells < 1:
        raise ValueError("n_cells must be >= 1")
    verts = np.linspace(a, b, n_cells + 1)[:, None]
    cells = np.column_stack([np.arange(n_cells), np.arange(1, n_cells + 1)])
    return Mesh.from_arrays(1, verts, cells)


def build_polygon_mesh(polygon, target_h):
    """Conforming triangulation of a simple polygon.

    Delaunay over a structured seed grid clipped to the polygon, with the
    boundary subdivided exactly along the polygon edges so that total
    boundary measure equals the polygon perimeter to rounding accuracy.
    Max cell diameter is checked against ``2 * target_h``.
    """
    poly = np.asarray(polygon, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
        raise MeshError("polygon must be a list of at least 3 (x, y) vertices")
    if target_h <= 0:
        raise ValueError("target_h must be positive")
    shp = _ShapelyPolygon(poly)
    if not shp.is_valid or shp.area <= 0:
        raise MeshError("polygon must be simple (non-self-intersecting) with positive area")
    if not shp.exterior.is_ccw:
        poly = poly[::-1]
        shp = _ShapelyPolygon(poly)

    bpts = []
    seg_max = 0.0
    m = poly.shape[0]
    for i in range(m):
        v0, v1 = poly[i], poly[(i + 1) % m]
        length = float(np.linalg.norm(v1 - v0))
        nseg = max(1, math.ceil(length / target_h - 1e-12))
        seg_max = max(seg_max, length / nseg)
        for k in range(nseg):
            bpts.append(v0 + (k / nseg) * (v1 - v0))
    bpts = np.array(bpts)

    xmin, ymin = poly.min(axis=0)
    xmax, ymax = poly.max(axis=0)
    nx = max(1, int(round((xmax - xmin) / target_h)))
    ny = max(1, int(round((ymax - ymin) / target_h)))
    gx = xmin + (xmax - xmin) * np.arange(nx + 1) / nx
    gy = ymin + (ymax - ymin) * np.arange(ny + 1) / ny
    gpts = np.array(np.meshgrid(gx, gy)).reshape(2, -1).T
    inside = shapely.contains_xy(shp, gpts[:, 0], gpts[:, 1])
    gpts = gpts[inside]
    if gpts.size:
        dist = shapely.distance(shapely.points(gpts), shp.exterior)
        gpts = gpts[dist > 0.51 * seg_max]

    pts = np.vstack([bpts, gpts]) if gpts.size else bpts
    tri = Delaunay(pts)
    cent = pts[tri.simplices].mean(axis=1)
    keep = shapely.contains_xy(shp, cent[:, 0], cent[:, 1])
    cells = tri.simplices[keep]
    used = np.unique(cells)
    remap = -np.ones(pts.shape[0], dtype=np.intp)
    remap[used] = np.arange(used.size)
    mesh = Mesh.from_arrays(2, pts[used], remap[cells])

    if abs(mesh.boundary_measure() - shp.length) > GEOMETRY_TOL:
        raise MeshError(
            "triangulation boundary does not match the polygon; "
            f"expected perimeter {shp.length}, got {mesh.boundary_measure()}"
        )
    if abs(mesh.volume() - shp.area) > GEOMETRY_TOL:
        raise MeshError("triangulated area does not match the polygon area")
    if mesh.h_max() > 2.0 * target_h + GEOMETRY_TOL:
        raise MeshError(f"max cell diameter {mesh.h_max()} exceeds 2*target_h")
    return mesh


# -- trace ---------------------------------------------------------------------


def trace(mesh, values):
    """Restrict nodal values to the boundary vertices (exact P1 trace)."""
    vals = np.asarray(getattr(values, "values", values), dtype=float)
    if vals.shape != (mesh.n_vertices,):
        raise ValueError(
            f"value vector has shape {vals.shape}, expected ({mesh.n_vertices},)"
        )
    return vals[mesh.boundary_vertex_indices()]


# -- boundary charts -------------------------------------------------------------


@dataclass
class BoundaryChart:
    """Graph chart of a Lipschitz boundary piece.

    Chart coordinates are ``xi = rotation @ (x - anchor)``; the boundary is
    the graph ``xi_2 = psi(xi_1)`` and the domain side is ``xi_2 > psi(xi_1)``.
    ``psi`` is a piecewise-linear table, so the chart map is exactly
    piecewise-affine and the reflection Jacobian is piecewise-constant.
    """

    anchor: np.ndarray
    rotation: np.ndarray
    radius: float
    psi_y: np.ndarray
    psi_v: np.ndarray
    lipschitz_constant: float

    def __post_init__(self):
        self.anchor = np.asarray(self.anchor, dtype=float).reshape(2)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(2, 2)
        self.psi_y = np.asarray(self.psi_y, dtype=float)
        self.psi_v = np.asarray(self.psi_v, dtype=float)
        self.validate()

    def validate(self):
        o = self.rotation
        if np.max(np.abs(o @ o.T - np.eye(2))) > ORTHOGONALITY_TOL:
            raise ChartError("rotation is not orthogonal")
        if self.radius <= 0:
            raise ChartError("chart radius must be positive")
        if self.psi_y.ndim != 1 or self.psi_y.shape != self.psi_v.shape:
            raise ChartError("psi table must be two equal-length 1D arrays")
        if self.psi_y.size < 2 or np.any(np.diff(self.psi_y) <= 0):
            raise ChartError("psi breakpoints must be strictly increasing")
        if self.psi_y[0] > -self.radius or self.psi_y[-1] < self.radius:
            raise ChartError("psi table must cover [-radius, radius]")
        slopes = np.diff(self.psi_v) / np.diff(self.psi_y)
        if np.any(np.abs(slopes) > self.lipschitz_constant + 1e-12):
            raise ChartError("psi table violates the declared Lipschitz constant")

    def psi(self, y):
        return np.interp(y, self.psi_y, self.psi_v)

    def slope(self, y, warn=True):
        """Left-limit slope of psi at y (a.e. derivative; breakpoints flagged)."""
        k = int(np.searchsorted(self.psi_y, y, side="left")) - 1
        k = min(max(k, 0), self.psi_y.size - 2)
        on_break = bool(np.any(np.abs(self.psi_y[1:-1] - y) == 0.0))
        if on_break and warn:
            warnings.warn(
                f"psi slope evaluated exactly on a breakpoint y={y}; "
                "returning the left-limit value",
                RuntimeWarning,
                stacklevel=2,
            )
        return float((self.psi_v[k + 1] - self.psi_v[k]) / (self.psi_y[k + 1] - self.psi_y[k]))

    def to_chart(self, x):
        return self.rotation @ (np.asarray(x, dtype=float) - self.anchor)

    def to_domain(self, xi):
        return self.anchor + self.rotation.T @ np.asarray(xi, dtype=float)

    def contains(self, x, tol=0.0):
        y, s = chart_inverse_T(self, x, check=False)
        return abs(y) < self.radius + tol and abs(s) < self.radius + tol


def chart_map_T(chart, y, s, check=True):
    """Map chart parameters (y, s) to the domain point of (y, psi(y)+s)."""
    if check and (abs(y) >= chart.radius or abs(s) >= chart.radius):
        raise ChartError(
            f"(y, s)=({y}, {s}) outside the chart cylinder of radius {chart.radius}"
        )
    return chart.to_domain(np.array([y, chart.psi(y) + s]))


def chart_inverse_T(chart, x, check=True):
    """Invert the chart map: returns (y, s) with x = T(y, s)."""
    xi = chart.to_chart(x)
    y = float(xi[0])
    s = float(xi[1] - chart.psi(y))
    if check and (abs(y) >= chart.radius or abs(s) >= chart.radius):
        raise ChartError(f"point {x} outside the chart cylinder")
    return y, s


def flat_chart(radius=1.0, anchor=(0.0, 0.0), rotation=None):
    """Chart with psi = 0 (flat boundary piece)."""
    rot = np.eye(2) if rotation is None else rotation
    return BoundaryChart(
        anchor, rot, radius, np.array([-radius, radius]), np.zeros(2), 0.0
    )


def slope_chart(slope, radius=1.0, anchor=(0.0, 0.0), rotation=None):
    """Chart with psi(y) = slope * y (single-slope Lipschitz graph)."""
    rot = np.eye(2) if rotation is None else rotation
    ys = np.array([-radius, radius])
    return BoundaryChart(anchor, rot, radius, ys, slope * ys, abs(float(slope)))


def abs_chart(slope, radius=1.0, anchor=(0.0, 0.0), rotation=None):
    """Chart with psi(y) = slope * |y| (Lipschitz but not C1 at y = 0)."""
    rot = np.eye(2) if rotation is None else rotation
    ys = np.array([-radius, 0.0, radius])
    return BoundaryChart(
        anchor, rot, radius, ys, slope * np.abs(ys), abs(float(slope))
    )


def chart_matches_domain(chart, polygon, rng, n_samples=400):
    """Point-membership check that the chart cylinder splits along the graph.

    Samples (y, s) in the cylinder and verifies s > 0 lands inside the
    polygon and s < 0 outside.  Returns the number of agreeing samples.
    """
    shp = _ShapelyPolygon(np.asarray(polygon, dtype=float))
    good = 0
    for _ in range(n_samples):
        y = rng.uniform(-chart.radius, chart.radius) * 0.98
        s = rng.uniform(-chart.radius, chart.radius) * 0.98
        if abs(s) < 1e-9:
            continue
        x = chart_map_T(chart, y, s, check=False)
        inside = bool(shapely.contains_xy(shp, x[0], x[1]))
        if inside == (s > 0):
            good += 1
        else:
            return good
    return good
