"""Operator data (a, b, c, d, beta) as bounded measurable fields.

A coefficient field is a bundle of point-evaluable callables, sampled
only at quadrature points during assembly: that is the faithful finite
realization of "measurable" -- discontinuities land between samples
without special casing.  Strict ellipticity is certified by sampling the
least eigenvalue of the symmetrized diffusion matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield
from typing import Callable, Optional

import numpy as np
from scipy.spatial import cKDTree


class NonElliptic(Exception):
    """Sampled diffusion matrix with nonpositive least eigenvalue."""

    def __init__(self, point, lambda_min):
        self.point = np.asarray(point, dtype=float)
        self.lambda_min = float(lambda_min)
        super().__init__(
            f"diffusion matrix not elliptic at x={self.point.tolist()}: "
            f"lambda_min={self.lambda_min:.6g}"
        )


@dataclass
class CoefficientField:
    """Bundle (a, b, c, d, beta) of coefficient callables on dimension-N points.

    ``a`` maps a point to an (N, N) matrix, ``b`` and ``c`` to N-vectors,
    ``d`` to a scalar, and ``beta`` maps boundary points to a scalar.
    ``sup_bounds`` records the intended L-infinity bounds per piece and is
    spot-checkable against samples.  ``b_lipschitz`` is present exactly when
    the drift is claimed Lipschitz (needed by the submarkovian shift).

    Callables must be pure; with ``vectorized=True`` they accept point
    stacks of shape (m, N) and return batched values.
    """

    dim: int
    a: Callable
    b: Callable
    c: Callable
    d: Callable
    beta: Callable
    sup_bounds: dict = dfield(default_factory=dict)
    b_lipschitz: Optional[float] = None
    vectorized: bool = False
    name: str = "custom"

    # batched evaluation ------------------------------------------------------

    def a_at(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.vectorized:
            out = np.asarray(self.a(pts), dtype=float)
            return np.broadcast_to(out, (pts.shape[0], self.dim, self.dim)).copy()
        return np.array([np.asarray(self.a(p), dtype=float) for p in pts])

    def b_at(self, pts):
        return self._vec_at(self.b, pts)

    def c_at(self, pts):
        return self._vec_at(self.c, pts)

    def d_at(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.vectorized:
            out = np.asarray(self.d(pts), dtype=float)
            return np.broadcast_to(out, (pts.shape[0],)).copy()
        return np.array([float(self.d(p)) for p in pts])

    def beta_at(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.vectorized:
            out = np.asarray(self.beta(pts), dtype=float)
            return np.broadcast_to(out, (pts.shape[0],)).copy()
        return np.array([float(self.beta(p)) for p in pts])

    def _vec_at(self, fn, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.vectorized:
            out = np.asarray(fn(pts), dtype=float)
            return np.broadcast_to(out, (pts.shape[0], self.dim)).copy()
        return np.array([np.asarray(fn(p), dtype=float) for p in pts])

    # invariants ------------------------------------------------------------

    def spot_check(self, mesh, rng=None, n_boundary=64):
        """Verify sup_bounds on quadrature samples and the drift Lipschitz claim."""
        pts = mesh.barycenters()
        checks = [
            ("a", np.abs(self.a_at(pts)).max(axis=(1, 2))),
            ("b", np.abs(self.b_at(pts)).max(axis=1)),
            ("c", np.abs(self.c_at(pts)).max(axis=1)),
            ("d", np.abs(self.d_at(pts))),
        ]
        if mesh.boundary_facets:
            checks.append(("beta", np.abs(self.beta_at(mesh.facet_midpoints()))))
        for key, observed in checks:
            bound = self.sup_bounds.get(key)
            if bound is not None and observed.max() > bound + 1e-12:
                raise ValueError(
                    f"coefficient {key!r} exceeds its recorded bound: "
                    f"{observed.max():.6g} > {bound:.6g}"
                )
        if self.b_lipschitz is not None:
            rng = np.random.default_rng(0) if rng is None else rng
            idx = rng.integers(0, pts.shape[0], size=(min(200, pts.shape[0]), 2))
            p, q = pts[idx[:, 0]], pts[idx[:, 1]]
            dist = np.linalg.norm(p - q, axis=1)
            ok = dist > 1e-12
            quot = np.linalg.norm(self.b_at(p) - self.b_at(q), axis=1)[ok] / dist[ok]
            if quot.size and quot.max() > self.b_lipschitz + 1e-9:
                raise ValueError(
                    f"drift difference quotient {quot.max():.6g} exceeds "
                    f"b_lipschitz={self.b_lipschitz:.6g}"
                )


@dataclass(frozen=True)
class EllipticityCertificate:
    """Sampled lower ellipticity bound: alpha = min observed lambda_min > 0."""

    alpha: float
    sample_count: int
    min_observed: float


def _sample_points(mesh, samples_per_cell):
    """Quadrature sample points per cell: barycenter, or 3-point (2D edge midpoints)."""
    verts = mesh.vertices[mesh.cells]
    if samples_per_cell == 1:
        return mesh.barycenters()
    if samples_per_cell == 3:
        if mesh.dim == 2:
            mids = [0.5 * (verts[:, i] + verts[:, j]) for i, j in ((0, 1), (1, 2), (2, 0))]
            return np.concatenate(mids, axis=0)
        a, b = verts[:, 0], verts[:, 1]
        return np.concatenate([a + t * (b - a) for t in (0.25, 0.5, 0.75)], axis=0)
    raise ValueError("samples_per_cell must be 1 or 3")


def certify_ellipticity(field, mesh, samples_per_cell=1):
    """Sample lambda_min((a + a^T)/2) over the mesh and certify it positive.

    Raises NonElliptic naming the worst sample if any lambda_min <= 0.
    """
    if samples_per_cell < 1:
        raise ValueError("samples_per_cell must be >= 1")
    pts = _sample_points(mesh, samples_per_cell)
    amat = field.a_at(pts)
    sym = 0.5 * (amat + np.swapaxes(amat, 1, 2))
    lam = np.linalg.eigvalsh(sym)[:, 0]
    k = int(np.argmin(lam))
    if lam[k] <= 0.0:
        raise NonElliptic(pts[k], lam[k])
    return EllipticityCertificate(float(lam[k]), int(lam.size), float(lam[k]))


# -- built-in families ------------------------------------------------------------


def _const_matrix(dim, value):
    value = np.asarray(value, dtype=float)
    if value.ndim == 0:
        return float(value) * np.eye(dim)
    return value.reshape(dim, dim)


def constant_field(dim, a=1.0, b=0.0, c=0.0, d=0.0, beta=0.0, b_lipschitz=None):
    """Spatially constant coefficients; scalars broadcast (a to a * I)."""
    amat = _const_matrix(dim, a)
    bvec = np.broadcast_to(np.asarray(b, dtype=float), (dim,)).astype(float)
    cvec = np.broadcast_to(np.asarray(c, dtype=float), (dim,)).astype(float)
    dval, betaval = float(d), float(beta)
    return CoefficientField(
        dim=dim,
        a=lambda x: amat,
        b=lambda x: bvec,
        c=lambda x: cvec,
        d=lambda x: np.full(np.atleast_2d(x).shape[0], dval) if np.ndim(x) > 1 else dval,
        beta=lambda x: np.full(np.atleast_2d(x).shape[0], betaval) if np.ndim(x) > 1 else betaval,
        sup_bounds={
            "a": float(np.abs(amat).max()),
            "b": float(np.abs(bvec).max(initial=0.0)),
            "c": float(np.abs(cvec).max(initial=0.0)),
            "d": abs(dval),
            "beta": abs(betaval),
        },
        b_lipschitz=0.0 if b_lipschitz is None else b_lipschitz,
        vectorized=False,
        name="constant",
    )


def checkerboard_coefficients(contrast, tiles, dim=2):
    """a = lambda(x) * I alternating between 1 and ``contrast`` on a tile grid.

    Tiles partition the unit square (unit interval in 1D); b = c = 0,
    d = 0, beta = 0.  The stress input for merely measurable diffusion.
    """
    if contrast < 1.0:
        raise ValueError("contrast must be >= 1")
    if tiles < 1:
        raise ValueError("tiles must be >= 1")
    contrast = float(contrast)
    tiles = int(tiles)

    def lam(pts):
        pts = np.atleast_2d(pts)
        idx = np.floor(pts * tiles).astype(np.int64).sum(axis=1)
        return np.where(idx % 2 == 0, 1.0, contrast)

    eye = np.eye(dim)
    return CoefficientField(
        dim=dim,
        a=lambda x: lam(x)[:, None, None] * eye,
        b=lambda x: np.zeros((np.atleast_2d(x).shape[0], dim)),
        c=lambda x: np.zeros((np.atleast_2d(x).shape[0], dim)),
        d=lambda x: np.zeros(np.atleast_2d(x).shape[0]),
        beta=lambda x: np.zeros(np.atleast_2d(x).shape[0]),
        sup_bounds={"a": contrast, "b": 0.0, "c": 0.0, "d": 0.0, "beta": 0.0},
        b_lipschitz=0.0,
        vectorized=True,
        name=f"checkerboard(contrast={contrast:g}, tiles={tiles})",
    )


def sgn_drift_field(beta=0.0):
    """The 1D non-contraction stress field: a = 1, b = c = sgn(x), d = 0.

    The drift is bounded measurable but not Lipschitz, so no b_lipschitz
    is recorded.
    """
    betaval = float(beta)
    return CoefficientField(
        dim=1,
        a=lambda x: np.ones((np.atleast_2d(x).shape[0], 1, 1)),
        b=lambda x: np.sign(np.atleast_2d(x)),
        c=lambda x: np.sign(np.atleast_2d(x)),
        d=lambda x: np.zeros(np.atleast_2d(x).shape[0]),
        beta=lambda x: np.full(np.atleast_2d(x).shape[0], betaval),
        sup_bounds={"a": 1.0, "b": 1.0, "c": 1.0, "d": 0.0, "beta": abs(betaval)},
        b_lipschitz=None,
        vectorized=True,
        name="sgn_drift",
    )


def table_field(mesh, values, beta=0.0):
    """Scalar diffusion a = lambda(x) * I with one lambda value per mesh cell.

    Points are matched to cells by nearest barycenter, which is exact at
    the quadrature points used by assembly.
    """
    values = np.asarray(values, dtype=float)
    if values.shape != (mesh.n_cells,):
        raise ValueError(
            f"table has {values.shape} entries, mesh has {mesh.n_cells} cells"
        )
    if values.min() <= 0.0:
        raise ValueError("table diffusion values must be positive")
    tree = cKDTree(mesh.barycenters())
    dim = mesh.dim
    betaval = float(beta)

    def lam(pts):
        _, idx = tree.query(np.atleast_2d(pts))
        return values[idx]

    eye = np.eye(dim)
    return CoefficientField(
        dim=dim,
        a=lambda x: lam(x)[:, None, None] * eye,
        b=lambda x: np.zeros((np.atleast_2d(x).shape[0], dim)),
        c=lambda x: np.zeros((np.atleast_2d(x).shape[0], dim)),
        d=lambda x: np.zeros(np.atleast_2d(x).shape[0]),
        beta=lambda x: np.full(np.atleast_2d(x).shape[0], betaval),
        sup_bounds={
            "a": float(values.max()),
            "b": 0.0,
            "c": 0.0,
            "d": 0.0,
            "beta": abs(betaval),
        },
        b_lipschitz=0.0,
        vectorized=True,
        name="custom_table",
    )


#: Families addressable by name from configuration files.
FAMILY_NAMES = ("constant", "checkerboard", "sgn_drift", "custom_table")
