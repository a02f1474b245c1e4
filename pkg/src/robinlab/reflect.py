"""Boundary reflection across a Lipschitz graph chart, as executable code.

Inside a chart the reflection is S(T(y, s)) = T(y, -s).  Its Jacobian is
the piecewise-constant block matrix [[I, 0], [2 psi'(y), -1]] in chart
coordinates: an involution with determinant -1 that equals its own
inverse.  Conjugating the operator data by this Jacobian extends an
elliptic operator from the domain side U of the chart to the mirror side
V while preserving strict ellipticity, and even extension of a Neumann
solution turns the boundary-value problem into an interior one on the
doubled region, with the boundary datum reappearing at weight 2 on the
interface.

The extended region is meshed by mirroring a structured chart-parameter
mesh vertex-by-vertex through S, so interface vertices are shared and
the discrete trace identity holds exactly.  Slope-table breakpoints are
inserted into the parameter grid, which keeps every cell inside a single
affine piece of S.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import assembly as asm
from .coeff import CoefficientField, certify_ellipticity
from .mesh import ChartError, Mesh, chart_inverse_T


@dataclass
class ReflectionOperator:
    """Reflection across the boundary graph of a chart, in domain coordinates."""

    chart: object

    def reflect(self, x, check=True):
        y, s = chart_inverse_T(self.chart, x, check=check)
        return self.chart.to_domain(np.array([y, self.chart.psi(y) - s]))

    def jacobian(self, x, check=True, warn=True):
        """S'(x) = O^T [[1, 0], [2 psi'(y), -1]] O; constant in s, so S'(Sx) = S'(x)."""
        y, _ = chart_inverse_T(self.chart, x, check=check)
        g = self.chart.slope(y, warn=warn)
        w_chart = np.array([[1.0, 0.0], [2.0 * g, -1.0]])
        o = self.chart.rotation
        return o.T @ w_chart @ o


def reflect_point(op, x):
    """S(x) = T(y, -s) for x = T(y, s); fixed points are exactly the graph."""
    return op.reflect(x)


def jacobian_S(op, x):
    """The a.e. Jacobian of the reflection at x (left-limit at table breakpoints)."""
    return op.jacobian(x)


def _w_norm_sq(slope_bound):
    """Spectral norm squared of [[1,0],[w,-1]] for |w| <= 2*slope_bound."""
    w = 2.0 * slope_bound
    return 0.5 * (2.0 + w * w + math.sqrt(w**4 + 4.0 * w * w))


def pushforward_coefficients(op, field, side_of=None):
    """Transport (a, b, c, d) across the reflection: identity on U, conjugation on V.

    On the mirror side V: a -> S' a(Sx) S'^T, b -> S' b(Sx), c -> S' c(Sx),
    d -> d(Sx).  ``side_of`` may override the U/V classification (signed
    distance callable); by default the chart's own s-coordinate decides.
    """
    chart = op.chart

    def side(x):
        _, s = chart_inverse_T(chart, x, check=False)
        return s

    if side_of is not None:
        side = side_of

    def a_hat(x):
        if side(x) >= 0.0:
            return field.a_at(np.asarray(x)[None, :])[0]
        w = op.jacobian(x, check=False, warn=False)
        sx = op.reflect(x, check=False)
        return w @ field.a_at(sx[None, :])[0] @ w.T

    def b_hat(x):
        if side(x) >= 0.0:
            return field.b_at(np.asarray(x)[None, :])[0]
        w = op.jacobian(x, check=False, warn=False)
        return w @ field.b_at(op.reflect(x, check=False)[None, :])[0]

    def c_hat(x):
        if side(x) >= 0.0:
            return field.c_at(np.asarray(x)[None, :])[0]
        w = op.jacobian(x, check=False, warn=False)
        return w @ field.c_at(op.reflect(x, check=False)[None, :])[0]

    def d_hat(x):
        if side(x) >= 0.0:
            return float(field.d_at(np.asarray(x)[None, :])[0])
        return float(field.d_at(op.reflect(x, check=False)[None, :])[0])

    slope_bound = float(np.max(np.abs(np.diff(chart.psi_v) / np.diff(chart.psi_y))))
    factor = _w_norm_sq(slope_bound)
    bounds = dict(field.sup_bounds)
    for key, fac in (("a", factor), ("b", math.sqrt(factor)), ("c", math.sqrt(factor))):
        if key in bounds:
            bounds[key] = bounds[key] * fac
    return CoefficientField(
        dim=2,
        a=a_hat,
        b=b_hat,
        c=c_hat,
        d=d_hat,
        beta=lambda x: 0.0,
        sup_bounds=bounds,
        b_lipschitz=None,
        vectorized=False,
        name=f"pushforward({field.name})",
    )


@dataclass
class ExtendedProblem:
    """Mirrored chart mesh with transported coefficients.

    ``mesh_U`` discretizes the domain-side half, ``mesh_G`` the doubled
    region; every V-vertex of mesh_G is the exact reflection of a
    U-vertex and interface vertices are shared.  ``u_to_g`` embeds
    mesh_U's numbering into mesh_G; ``mirror_vertex`` is the vertex-level
    involution of mesh_G.
    """

    chart: object
    operator: ReflectionOperator
    mesh_U: Mesh
    mesh_G: Mesh
    u_to_g: np.ndarray
    mirror_vertex: np.ndarray
    g_source_in_U: np.ndarray
    interface_vertices: np.ndarray
    interface_segments: tuple
    field: object
    field_hat: object


def build_extended_problem(chart, field, n_y=8, n_s=4, y_extent=None, s_depth=None):
    """Mesh U and its mirror image V conformingly and transport the coefficients.

    The parameter rectangle [-y_extent, y_extent] x [0, s_depth] is
    triangulated on a structured grid (psi breakpoints inserted), mapped
    through the chart, and mirrored through the reflection.
    """
    y_extent = chart.radius if y_extent is None else float(y_extent)
    s_depth = chart.radius if s_depth is None else float(s_depth)
    if not 0 < y_extent <= chart.radius or not 0 < s_depth <= chart.radius:
        raise ChartError("mesh extent must fit inside the chart cylinder")

    ys = np.linspace(-y_extent, y_extent, n_y + 1)
    inner = chart.psi_y[(chart.psi_y > -y_extent) & (chart.psi_y < y_extent)]
    ys = np.unique(np.concatenate([ys, inner]))
    ss = np.linspace(0.0, s_depth, n_s + 1)
    ny = ys.size - 1
    ns = ss.size - 1

    def gid(i, j):
        return (j + ns) * (ny + 1) + i

    n_g = (2 * ns + 1) * (ny + 1)
    coords = np.empty((n_g, 2))
    src = np.empty(n_g, dtype=np.intp)
    mirror = np.empty(n_g, dtype=np.intp)
    for j in range(-ns, ns + 1):
        s = ss[abs(j)] * (1 if j >= 0 else -1)
        for i in range(ny + 1):
            y = ys[i]
            coords[gid(i, j)] = chart.to_domain(np.array([y, chart.psi(y) + s]))
            src[gid(i, j)] = gid(i, abs(j))
            mirror[gid(i, j)] = gid(i, -j)

    upper_cells = []
    for j in range(ns):
        for i in range(ny):
            upper_cells.append((gid(i, j), gid(i + 1, j), gid(i + 1, j + 1)))
            upper_cells.append((gid(i, j), gid(i + 1, j + 1), gid(i, j + 1)))
    upper_cells = np.array(upper_cells, dtype=np.intp)
    lower_cells = mirror[upper_cells]
    mesh_G = Mesh.from_arrays(2, coords, np.vstack([upper_cells, lower_cells]))

    u_to_g = np.array([gid(i, j) for j in range(ns + 1) for i in range(ny + 1)])
    uid = -np.ones(n_g, dtype=np.intp)
    uid[u_to_g] = np.arange(u_to_g.size)
    mesh_U = Mesh.from_arrays(2, coords[u_to_g], uid[upper_cells])
    g_source_in_U = uid[src]

    op = ReflectionOperator(chart)
    field_hat = pushforward_coefficients(op, field)
    interface = np.array([gid(i, 0) for i in range(ny + 1)])
    segments = tuple((gid(i, 0), gid(i + 1, 0)) for i in range(ny))
    return ExtendedProblem(
        chart=chart,
        operator=op,
        mesh_U=mesh_U,
        mesh_G=mesh_G,
        u_to_g=u_to_g,
        mirror_vertex=mirror,
        g_source_in_U=g_source_in_U,
        interface_vertices=interface,
        interface_segments=segments,
        field=field,
        field_hat=field_hat,
    )


def certify_extended_ellipticity(ext, samples_per_cell=1):
    """Sampled ellipticity certificate of the transported coefficients on G.

    Must be strictly positive whenever the input field is strictly
    elliptic; a NonElliptic outcome would falsify the preservation
    property and is treated as a test failure.
    """
    return certify_ellipticity(ext.field_hat, ext.mesh_G, samples_per_cell)


def extend_function(ext, u):
    """Even extension across the interface: w~(x) = w(Sx) on the mirror side.

    Nodal values at interface vertices are shared, so the traces of both
    sides agree exactly.
    """
    from .elliptic import FemFunction

    vals = np.asarray(getattr(u, "values", u), dtype=float)
    if vals.shape != (ext.mesh_U.n_vertices,):
        raise ValueError("value vector does not match mesh_U")
    return FemFunction(ext.mesh_G, vals[ext.g_source_in_U])


@dataclass
class ExtendedRhs:
    """Transported right-hand side on the doubled region.

    ``f0_tilde`` is the even extension of f0; ``fj_hat(x) = S'(x) f*(x)``
    on the mirror side; the boundary datum g survives as an interface
    functional with weight 2.
    """

    ext: object
    f0_tilde: object
    fj_hat: object
    g: object
    boundary_weight: float = 2.0

    def assemble(self):
        rhs = asm.assemble_rhs(self.ext.mesh_G, f0=self.f0_tilde, fj=self.fj_hat)
        vec = rhs.vector.copy()
        if self.g is not None:
            vec += asm.assemble_segment_functional(
                self.ext.mesh_G, self.ext.interface_segments, self.g, self.boundary_weight
            )
        return vec


def transform_rhs(ext, f0=None, fj=None, g=None):
    """Transport (f0, f_1..f_N, g) through the reflection.

    Scalar data extend evenly; the vector data picks up the Jacobian row
    contraction; g keeps its trace pairing but doubles its weight since
    both sides of the fold contribute.
    """
    chart = ext.chart
    op = ext.operator

    def side(x):
        _, s = chart_inverse_T(chart, x, check=False)
        return s

    f0_tilde = None
    if f0 is not None:

        def f0_tilde(x):
            if side(x) >= 0.0:
                return float(f0(x))
            return float(f0(op.reflect(x, check=False)))

    fj_hat = None
    if fj is not None:

        def fj_hat(x):
            if side(x) >= 0.0:
                return np.asarray(fj(x), dtype=float)
            w = op.jacobian(x, check=False, warn=False)
            return w @ np.asarray(fj(op.reflect(x, check=False)), dtype=float)

    return ExtendedRhs(ext, f0_tilde, fj_hat, g)
