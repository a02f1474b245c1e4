"""P1 Galerkin assembly of the Robin form, mass matrices, and functionals.

The bilinear form carries five terms: diffusion a, the two first-order
terms (b under the test gradient, c under the trial gradient), the
zeroth-order d term, and the boundary beta term.  Coefficients are
sampled at cell barycenters and facet midpoints (one-point quadrature);
the polynomial factors are integrated exactly, so assembly is
quadrature-exact whenever the sampled coefficients are piecewise
constant.  b and c are kept distinct throughout; symmetry is never
assumed.

Besides the consistent matrices, a lumped variant is assembled in the
same pass: interior/boundary mass lumped to the diagonal and the
zeroth-order (d, beta) form terms lumped likewise.  The lumped operator
is what the positivity-certified time stepping uses; the consistent one
is the Galerkin reference everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


_REF_MASS = {
    1: np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0,
    2: np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0,
}


@dataclass
class AssembledForm:
    """Sparse realization of the Robin bilinear form and its mass matrices.

    ``A[i, j] = a(phi_j, phi_i)``; ``shifted(omega) = A + omega * M_interior``
    realizes the shifted form.  ``M_boundary`` is the facet-lumped
    (diagonal) surface mass; in 1D it is exactly the counting measure on
    the endpoints.  ``terms`` keeps the five form terms separately for
    structural checks.  The vertex-to-dof map is the identity for P1.
    """

    mesh: object
    field: object
    A: sp.csr_matrix
    M_interior: sp.csr_matrix
    M_interior_lumped: sp.csr_matrix
    M_boundary: sp.csr_matrix
    A_lumped: sp.csr_matrix
    terms: dict
    omega: float = 0.0
    dof_map: np.ndarray = dfield(default=None, repr=False)

    def __post_init__(self):
        if self.dof_map is None:
            self.dof_map = np.arange(self.mesh.n_vertices)

    @property
    def n_dofs(self):
        return self.A.shape[0]

    def shifted(self, omega=None):
        """A + omega * M_interior (the shifted form; omega acts on the interior)."""
        w = self.omega if omega is None else omega
        return (self.A + w * self.M_interior).tocsr()

    def shifted_lumped(self, omega=None):
        w = self.omega if omega is None else omega
        return (self.A_lumped + w * self.M_interior_lumped).tocsr()

    def form_value(self, u, v, omega=0.0, boundary_mass=False):
        """Evaluate the (shifted) form on coefficient vectors: a^omega(u, v).

        With ``boundary_mass=True`` the shift also charges the boundary
        dofs, i.e. the product-space shift used by the Wentzell form.
        """
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        val = float(v @ (self.A @ u) + omega * (v @ (self.M_interior @ u)))
        if boundary_mass:
            val += omega * float(v @ (self.M_boundary @ u))
        return val


@dataclass
class RhsFunctional:
    """Dof vector realizing v -> int f0 v + sum_j int f_j D_j v + int_bnd g v."""

    mesh: object
    vector: np.ndarray
    f0_cell: np.ndarray
    fj_cell: np.ndarray
    g_facet: np.ndarray

    def pair(self, v):
        return float(np.asarray(v, dtype=float) @ self.vector)


@dataclass
class ProductState:
    """State (u, u|boundary) of the product space L2(interior) + L2(boundary).

    Boundary dofs are shared with interior dofs; a consistent state has
    ``boundary`` exactly equal to the trace of ``interior``.
    """

    interior: np.ndarray
    boundary: np.ndarray
    consistent: bool

    @classmethod
    def from_interior(cls, mesh, values):
        values = np.asarray(values, dtype=float)
        return cls(values, values[mesh.boundary_vertex_indices()], True)


def _scatter(n, rows, cols, vals):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()


def assemble_robin_form(mesh, field):
    """Assemble the five-term Robin form and the interior/boundary masses."""
    n = mesh.n_vertices
    nc = mesh.n_cells
    loc = mesh.dim + 1
    vols = mesh.cell_volumes()
    grads = mesh.p1_gradients()
    bary = mesh.barycenters()

    a_s = field.a_at(bary)
    b_s = field.b_at(bary)
    c_s = field.c_at(bary)
    d_s = field.d_at(bary)

    # diffusion: vol * g_r . (a^T g_c); first-order terms are rank-one in
    # the other index because the P1 basis integrates to vol/(dim+1).
    e_diff = np.einsum("n,nij,nci,nrj->nrc", vols, a_s, grads, grads)
    conv_w = vols / loc
    e_b = np.einsum("n,ni,nri->nr", conv_w, b_s, grads)[:, :, None] * np.ones((1, 1, loc))
    e_c = np.einsum("n,ni,nci->nc", conv_w, c_s, grads)[:, None, :] * np.ones((1, loc, 1))
    ref = _REF_MASS[mesh.dim]
    e_mass = vols[:, None, None] * ref[None, :, :]
    e_d = d_s[:, None, None] * e_mass

    rows = np.repeat(mesh.cells, loc, axis=1)
    cols = np.tile(mesh.cells, (1, loc))
    e_flat = lambda e: e.reshape(nc, loc * loc)

    stiff = _scatter(n, rows, cols, e_flat(e_diff))
    conv_b = _scatter(n, rows, cols, e_flat(e_b))
    conv_c = _scatter(n, rows, cols, e_flat(e_c))
    mass_d = _scatter(n, rows, cols, e_flat(e_d))
    M_int = _scatter(n, rows, cols, e_flat(e_mass))
    M_int_lumped = sp.diags(np.asarray(M_int.sum(axis=1)).ravel()).tocsr()
    mass_d_lumped = sp.diags(np.asarray(mass_d.sum(axis=1)).ravel()).tocsr()

    # boundary terms: facet midpoint sampling; consistent edge mass for the
    # beta form term, lumped (diagonal) for the surface mass matrix.
    bnd_rows, bnd_cols, bnd_vals = [], [], []
    lump_idx, lump_vals = [], []
    if mesh.boundary_facets:
        mids = mesh.facet_midpoints()
        betas = field.beta_at(mids)
        for f, beta in zip(mesh.boundary_facets, betas):
            idx = list(f.vertices)
            if mesh.dim == 1:
                bnd_rows.append([idx[0]])
                bnd_cols.append([idx[0]])
                bnd_vals.append([beta * f.measure])
                lump_idx.extend(idx)
                lump_vals.append(f.measure)
            else:
                em = beta * f.measure * np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
                bnd_rows.append([idx[0], idx[0], idx[1], idx[1]])
                bnd_cols.append([idx[0], idx[1], idx[0], idx[1]])
                bnd_vals.append(em.ravel())
                lump_idx.extend(idx)
                lump_vals.extend([0.5 * f.measure, 0.5 * f.measure])
    if bnd_rows:
        bnd_beta = sp.coo_matrix(
            (np.concatenate(bnd_vals), (np.concatenate(bnd_rows), np.concatenate(bnd_cols))),
            shape=(n, n),
        ).tocsr()
        surf = np.zeros(n)
        np.add.at(surf, np.asarray(lump_idx, dtype=np.intp), np.asarray(lump_vals))
        M_bnd = sp.diags(surf).tocsr()
        beta_diag = np.zeros(n)
        bw = np.repeat(betas, 1 if mesh.dim == 1 else 2)
        np.add.at(beta_diag, np.asarray(lump_idx, dtype=np.intp), bw * np.asarray(lump_vals))
        bnd_beta_lumped = sp.diags(beta_diag).tocsr()
    else:
        bnd_beta = sp.csr_matrix((n, n))
        M_bnd = sp.csr_matrix((n, n))
        bnd_beta_lumped = sp.csr_matrix((n, n))

    A = (stiff + conv_b + conv_c + mass_d + bnd_beta).tocsr()
    A_lumped = (stiff + conv_b + conv_c + mass_d_lumped + bnd_beta_lumped).tocsr()
    terms = {
        "stiffness": stiff,
        "conv_b": conv_b,
        "conv_c": conv_c,
        "mass_d": mass_d,
        "boundary_beta": bnd_beta,
    }
    return AssembledForm(
        mesh=mesh,
        field=field,
        A=A,
        M_interior=M_int,
        M_interior_lumped=M_int_lumped,
        M_boundary=M_bnd,
        A_lumped=A_lumped,
        terms=terms,
    )


def assemble_wentzell_system(mesh, field):
    """Robin stiffness plus the product-space evolution mass M_interior + M_boundary.

    Boundary dofs carry surface mass: the discrete realization of the
    product space with trace-consistent states.
    """
    form = assemble_robin_form(mesh, field)
    return form, (form.M_interior + form.M_boundary).tocsr()


def assemble_rhs(mesh, f0=None, fj=None, g=None):
    """Assemble v -> int f0 v + sum int f_j D_j v + int_bnd g v.

    ``f0`` and ``g`` are scalar callables, ``fj`` maps a point to the
    dim-vector (f_1 .. f_N).  Data are sampled at barycenters / facet
    midpoints; pairing with the constant 1 returns int f0 + int_bnd g
    exactly since D_j 1 = 0.
    """
    n = mesh.n_vertices
    loc = mesh.dim + 1
    vols = mesh.cell_volumes()
    bary = mesh.barycenters()
    vec = np.zeros(n)

    f0_cell = np.zeros(mesh.n_cells)
    if f0 is not None:
        f0_cell = np.array([float(f0(p)) for p in bary])
        np.add.at(vec, mesh.cells, (f0_cell * vols / loc)[:, None] * np.ones((1, loc)))

    fj_cell = np.zeros((mesh.n_cells, mesh.dim))
    if fj is not None:
        fj_cell = np.array([np.asarray(fj(p), dtype=float) for p in bary])
        contrib = np.einsum("n,ni,nri->nr", vols, fj_cell, mesh.p1_gradients())
        np.add.at(vec, mesh.cells, contrib)

    g_facet = np.zeros(len(mesh.boundary_facets))
    if g is not None and mesh.boundary_facets:
        mids = mesh.facet_midpoints()
        g_facet = np.array([float(g(p)) for p in mids])
        for f, gv in zip(mesh.boundary_facets, g_facet):
            share = f.measure / len(f.vertices)
            for v in f.vertices:
                vec[v] += gv * share

    return RhsFunctional(mesh, vec, f0_cell, fj_cell, g_facet)


def assemble_segment_functional(mesh, segments, g, weight=1.0):
    """Dof vector of v -> weight * sum over segments of int g v ds.

    ``segments`` are (i, j) vertex-index pairs; they need not be boundary
    facets (interface edges of an extended mesh, for instance).  Midpoint
    sampling, exact for constants.
    """
    vec = np.zeros(mesh.n_vertices)
    for i, j in segments:
        pi, pj = mesh.vertices[i], mesh.vertices[j]
        if mesh.dim == 1:
            raise ValueError("segment functionals are 2D constructs")
        length = float(np.linalg.norm(pj - pi))
        gv = float(g(0.5 * (pi + pj)))
        vec[i] += weight * gv * length / 2.0
        vec[j] += weight * gv * length / 2.0
    return vec


def h1_matrix(mesh):
    """Discrete H1 inner product: unit stiffness plus consistent mass."""
    from .coeff import constant_field

    form = assemble_robin_form(mesh, constant_field(mesh.dim))
    return (form.terms["stiffness"] + form.M_interior).tocsr()


def find_coercivity_shift(form, eta, max_doublings=60, rel_tol=1e-6):
    """Smallest omega >= 0 with sym(A) + omega*M - eta*H positive semidefinite.

    Doubling search followed by bisection to ``rel_tol`` relative accuracy
    on omega.  Returns 0.0 when the form is already coercive with
    constant eta.  Dense Cholesky predicate; desk scale only.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    n = form.n_dofs
    if n > 4000:
        raise ValueError("coercivity shift search is dense; mesh too large")
    sym = 0.5 * (form.A + form.A.T).toarray()
    M = form.M_interior.toarray()
    H = h1_matrix(form.mesh).toarray()
    base = sym - eta * H
    scale = max(np.abs(base).max(), np.abs(M).max(), 1.0)

    def feasible(w):
        K = base + w * M
        try:
            np.linalg.cholesky(K + (1e-12 * scale) * np.eye(n))
            return True
        except np.linalg.LinAlgError:
            return False

    if feasible(0.0):
        return 0.0
    lo, hi = 0.0, 1.0
    for _ in range(max_doublings):
        if feasible(hi):
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise RuntimeError(f"no coercivity shift found below {hi:g} (eta={eta:g})")
    while hi - lo > rel_tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def discrete_trace_constant(mesh):
    """Best constant in ||trace u||_L2(bnd) <= C ||u||_H1, by generalized eigensolve."""
    import scipy.linalg as sla

    from .coeff import constant_field

    form = assemble_robin_form(mesh, constant_field(mesh.dim))
    H = h1_matrix(mesh).toarray()
    B = form.M_boundary.toarray()
    lam = sla.eigh(B, H, eigvals_only=True)
    return float(np.sqrt(max(lam.max(), 0.0)))


def dump_matrix(matrix, path):
    """Write a sparse matrix in coordinate (row, col, value) text format."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"# shape {coo.shape[0]} {coo.shape[1]} nnz {coo.nnz}\n")
        order = np.lexsort((coo.col, coo.row))
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {format(v, '.17g')}\n")


def solve_sparse(B, rhs):
    """LU solve with backward-error check; raises on (near-)singular systems."""
    from .elliptic import SingularSystem

    B = sp.csc_matrix(B)
    try:
        lu = spla.splu(B)
    except RuntimeError as exc:
        raise SingularSystem(f"factorization failed: {exc}") from exc
    x = lu.solve(rhs)
    if not np.all(np.isfinite(x)):
        raise SingularSystem("solver produced non-finite values")
    norm_B = spla.norm(B, np.inf)
    denom = max(np.abs(rhs).max(initial=0.0), norm_B * np.abs(x).max(initial=0.0), 1e-300)
    res = np.abs(B @ x - rhs).max(initial=0.0) / denom
    if res > 1e-10:
        x = x + lu.solve(rhs - B @ x)
        res = np.abs(B @ x - rhs).max(initial=0.0) / denom
        if res > 1e-10:
            raise SingularSystem(f"relative residual {res:.3g} exceeds 1e-10")
    # cheap condition probe: near-singular pencils slip through LU with a
    # small backward error but a huge inverse.
    inv_op = spla.LinearOperator(
        B.shape,
        matvec=lu.solve,
        rmatvec=lambda b: lu.solve(b, trans="T"),
    )
    cond = spla.onenormest(inv_op) * norm_B
    if cond > 1e13:
        raise SingularSystem(f"system is numerically singular (cond ~ {cond:.3g})")
    return x
