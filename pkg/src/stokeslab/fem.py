"""Low-level P2/P1 finite element machinery on triangle meshes.

Continuous quadratic scalar space (vertices + edge midpoints) with a
continuous linear pressure space on the same mesh.  Assembly is
vectorized over triangles with a degree-4 quadrature rule, which is
exact for every product assembled here (P2 mass is degree 4).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .mesh import Mesh, boundary_chain

# 6-point degree-4 rule on the reference triangle (weights sum to 1/2)
_A1, _W1 = 0.445948490915965, 0.223381589678011
_A2, _W2 = 0.091576213509771, 0.109951743655322
TRI_QUAD_XY = np.array([
    [_A1, _A1], [1 - 2 * _A1, _A1], [_A1, 1 - 2 * _A1],
    [_A2, _A2], [1 - 2 * _A2, _A2], [_A2, 1 - 2 * _A2],
])
TRI_QUAD_W = 0.5 * np.array([_W1, _W1, _W1, _W2, _W2, _W2])

# 4-point Gauss-Legendre on [0, 1] (degree 7)
_G = np.array([-0.8611363115940526, -0.3399810435848563,
               0.3399810435848563, 0.8611363115940526])
EDGE_QUAD_X = 0.5 * (_G + 1.0)
EDGE_QUAD_W = 0.5 * np.array([0.3478548451374538, 0.6521451548625461,
                              0.6521451548625461, 0.3478548451374538])


def p2_basis(xy):
    """P2 shape values at reference points ``xy`` (n, 2) -> (n, 6)."""
    x, y = xy[:, 0], xy[:, 1]
    l0, l1, l2 = 1.0 - x - y, x, y
    return np.stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1,
    ], axis=1)


def p2_grad(xy):
    """Reference gradients at ``xy`` -> (n, 6, 2)."""
    x, y = xy[:, 0], xy[:, 1]
    l0, l1, l2 = 1.0 - x - y, x, y
    g = np.empty((len(xy), 6, 2))
    g[:, 0, 0] = -(4 * l0 - 1)
    g[:, 0, 1] = -(4 * l0 - 1)
    g[:, 1, 0] = 4 * l1 - 1
    g[:, 1, 1] = 0.0
    g[:, 2, 0] = 0.0
    g[:, 2, 1] = 4 * l2 - 1
    g[:, 3, 0] = 4 * l2
    g[:, 3, 1] = 4 * l1
    g[:, 4, 0] = -4 * l2
    g[:, 4, 1] = 4 * (l0 - l2)
    g[:, 5, 0] = 4 * (l0 - l1)
    g[:, 5, 1] = -4 * l1
    return g


def p1_basis(xy):
    x, y = xy[:, 0], xy[:, 1]
    return np.stack([1.0 - x - y, x, y], axis=1)


P1_GRAD = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


@dataclass(eq=False)
class P2Space:
    """Quadratic nodal space on a mesh, plus its P1 vertex subspace tables."""

    mesh: Mesh

    def __post_init__(self):
        mesh = self.mesh
        tris = mesh.triangles
        edges = {}
        tri_edges = np.empty((len(tris), 3), dtype=np.int64)
        for t_idx, t in enumerate(tris):
            # local edge k is opposite vertex k
            for k, (i, j) in enumerate(((t[1], t[2]), (t[2], t[0]), (t[0], t[1]))):
                key = (min(i, j), max(i, j))
                e = edges.get(key)
                if e is None:
                    e = len(edges)
                    edges[key] = e
                tri_edges[t_idx, k] = e
        self.edge_index = edges
        self.n_vertices = mesh.n_nodes
        self.n_edges = len(edges)
        self.ndof = self.n_vertices + self.n_edges
        self.tri_dofs = np.hstack([tris, self.n_vertices + tri_edges])

        coords = np.empty((self.ndof, 2))
        coords[:self.n_vertices] = mesh.nodes
        for (i, j), e in edges.items():
            coords[self.n_vertices + e] = 0.5 * (mesh.nodes[i] + mesh.nodes[j])
        self.dof_coords = coords

        # affine maps
        p = mesh.nodes[tris]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)
        self.detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
        self.Jinv = np.empty_like(J)
        self.Jinv[:, 0, 0] = J[:, 1, 1] / self.detJ
        self.Jinv[:, 0, 1] = -J[:, 0, 1] / self.detJ
        self.Jinv[:, 1, 0] = -J[:, 1, 0] / self.detJ
        self.Jinv[:, 1, 1] = J[:, 0, 0] / self.detJ
        self.tri_origin = p[:, 0]
        self._J = J

        # quadrature tables
        self.quad_phi = p2_basis(TRI_QUAD_XY)                   # (q, 6)
        self.quad_psi = p1_basis(TRI_QUAD_XY)                   # (q, 3)
        gref = p2_grad(TRI_QUAD_XY)                             # (q, 6, 2)
        # physical gradients: (t, q, 6, 2)
        self.quad_grad = np.einsum("qia,tab->tqib", gref, self.Jinv)
        self.quad_w = TRI_QUAD_W[None, :] * self.detJ[:, None]  # (t, q)
        self.quad_points = (self.tri_origin[:, None, :]
                            + np.einsum("qa,tba->tqb", TRI_QUAD_XY, J))

        # boundary edge -> (adjacent triangle, local edge)
        edge_tri = {}
        for t_idx, t in enumerate(tris):
            for k, (i, j) in enumerate(((t[1], t[2]), (t[2], t[0]), (t[0], t[1]))):
                edge_tri.setdefault((min(i, j), max(i, j)), []).append((t_idx, k))
        self.bedge_tri = np.empty(len(mesh.boundary_edges), dtype=np.int64)
        self.bedge_mid = np.empty(len(mesh.boundary_edges), dtype=np.int64)
        for r, (i, j) in enumerate(mesh.boundary_edges):
            owners = edge_tri[(min(i, j), max(i, j))]
            if len(owners) != 1:
                raise ValueError("tagged edge is not a hull edge")
            self.bedge_tri[r] = owners[0][0]
            self.bedge_mid[r] = self.n_vertices + self.edge_index[(min(i, j), max(i, j))]

        self._locator = None

    # -- dof helpers ---------------------------------------------------------

    def edge_dof(self, i, j):
        return self.n_vertices + self.edge_index[(min(i, j), max(i, j))]

    def boundary_dofs(self, *tags):
        """All P2 dofs (vertices and midpoints) on edges with the given tags."""
        mesh = self.mesh
        rows = np.where(np.isin(mesh.edge_tags, tags))[0] if tags else \
            np.arange(len(mesh.edge_tags))
        dofs = set()
        for r in rows:
            i, j = mesh.boundary_edges[r]
            dofs.update((int(i), int(j), int(self.bedge_mid[r])))
        return np.array(sorted(dofs), dtype=np.int64)

    def interpolate(self, func):
        """Nodal interpolation of ``func(x, y) -> value or (n,) array``."""
        vals = func(self.dof_coords[:, 0], self.dof_coords[:, 1])
        return np.broadcast_to(np.asarray(vals, dtype=float), (self.ndof,)).copy()

    def interpolate_vector(self, func):
        """func(x, y) -> (n, 2); returns stacked [ux, uy] dof vector."""
        v = np.asarray(func(self.dof_coords[:, 0], self.dof_coords[:, 1]), dtype=float)
        if v.shape != (self.ndof, 2):
            v = np.broadcast_to(v, (self.ndof, 2))
        return np.concatenate([v[:, 0], v[:, 1]])

    # -- assembly ------------------------------------------------------------

    def _scatter(self, blocks, rows_dofs, cols_dofs, shape):
        ii = np.repeat(rows_dofs, cols_dofs.shape[1], axis=1).ravel()
        jj = np.repeat(cols_dofs[:, None, :], rows_dofs.shape[1], axis=1).ravel()
        mat = sparse.coo_matrix((blocks.ravel(), (ii, jj)), shape=shape)
        return mat.tocsr()

    def scalar_mass(self):
        blocks = np.einsum("tq,qi,qj->tij", self.quad_w, self.quad_phi, self.quad_phi)
        return self._scatter(blocks, self.tri_dofs, self.tri_dofs,
                             (self.ndof, self.ndof))

    def scalar_stiffness(self):
        blocks = np.einsum("tq,tqia,tqja->tij", self.quad_w,
                           self.quad_grad, self.quad_grad)
        return self._scatter(blocks, self.tri_dofs, self.tri_dofs,
                             (self.ndof, self.ndof))

    def partial_stiffness(self, a, b):
        """K_ab[i, j] = integral of (d_a phi_i)(d_b phi_j)."""
        blocks = np.einsum("tq,tqi,tqj->tij", self.quad_w,
                           self.quad_grad[:, :, :, a], self.quad_grad[:, :, :, b])
        return self._scatter(blocks, self.tri_dofs, self.tri_dofs,
                             (self.ndof, self.ndof))

    def vector_mass(self):
        M = self.scalar_mass()
        return sparse.block_diag([M, M]).tocsr()

    def vector_stiffness(self):
        K = self.scalar_stiffness()
        return sparse.block_diag([K, K]).tocsr()

    def sym_grad_stiffness(self):
        """Matrix of (grad u + grad u^T) : grad v on stacked [ux, uy] dofs."""
        kxx = self.partial_stiffness(0, 0)
        kyy = self.partial_stiffness(1, 1)
        kxy = self.partial_stiffness(0, 1)   # rows d_x, cols d_y
        return sparse.bmat([[2 * kxx + kyy, kxy.T],
                            [kxy, kxx + 2 * kyy]]).tocsr()

    def div_coupling(self, pressure="p1"):
        """D = [Dx, Dy] with D_a[q, i] = integral of q * d_a(phi_i).

        Pressure rows are P1 vertex dofs by default; ``pressure='p2'`` uses
        the full quadratic space (needed by the projection with quadratic
        potentials).
        """
        if pressure == "p1":
            psi, rows, np_ = self.quad_psi, self.mesh.triangles, self.n_vertices
        else:
            psi, rows, np_ = self.quad_phi, self.tri_dofs, self.ndof
        out = []
        for a in (0, 1):
            blocks = np.einsum("tq,qi,tqj->tij", self.quad_w, psi,
                               self.quad_grad[:, :, :, a])
            out.append(self._scatter(blocks, rows, self.tri_dofs,
                                     (np_, self.ndof)))
        return sparse.hstack(out).tocsr()

    def p1_mass(self):
        blocks = np.einsum("tq,qi,qj->tij", self.quad_w, self.quad_psi, self.quad_psi)
        return self._scatter(blocks, self.mesh.triangles, self.mesh.triangles,
                             (self.n_vertices, self.n_vertices))

    def integral_vector(self, pressure="p1"):
        """Vector of integrals of each pressure basis function."""
        if pressure == "p1":
            blocks = np.einsum("tq,qi->ti", self.quad_w, self.quad_psi)
            rows = self.mesh.triangles
            n = self.n_vertices
        else:
            blocks = np.einsum("tq,qi->ti", self.quad_w, self.quad_phi)
            rows = self.tri_dofs
            n = self.ndof
        out = np.zeros(n)
        np.add.at(out, rows.ravel(), blocks.ravel())
        return out

    def load_vector(self, func):
        """Vector load integral of f . phi for f(x, y) -> (n, 2)."""
        pts = self.quad_points.reshape(-1, 2)
        f = np.asarray(func(pts[:, 0], pts[:, 1]), dtype=float).reshape(
            self.quad_points.shape)
        out = np.zeros(2 * self.ndof)
        for c in (0, 1):
            blocks = np.einsum("tq,tq,qi->ti", self.quad_w, f[:, :, c], self.quad_phi)
            np.add.at(out, c * self.ndof + self.tri_dofs.ravel(), blocks.ravel())
        return out

    # -- pointwise evaluation --------------------------------------------------

    def _build_locator(self):
        cent = self.mesh.nodes[self.mesh.triangles].mean(axis=1)
        self._locator = cKDTree(cent)

    def locate(self, points, k=16):
        """Triangle index and barycentric-ish reference coords per point (-1 if outside)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self._locator is None:
            self._build_locator()
        kq = min(k, self.mesh.n_triangles)
        _, cand = self._locator.query(points, k=kq)
        cand = np.atleast_2d(cand)
        tri_idx = np.full(len(points), -1, dtype=np.int64)
        ref = np.zeros((len(points), 2))
        tol = 1e-10
        for p_idx, p in enumerate(points):
            for t in cand[p_idx]:
                xi = self.Jinv[t] @ (p - self.tri_origin[t])
                if xi[0] >= -tol and xi[1] >= -tol and xi[0] + xi[1] <= 1 + tol:
                    tri_idx[p_idx] = t
                    ref[p_idx] = xi
                    break
        return tri_idx, ref

    def eval_scalar(self, dofs, points):
        tri_idx, ref = self.locate(points)
        ok = tri_idx >= 0
        vals = np.full(len(tri_idx), np.nan)
        if ok.any():
            phi = p2_basis(ref[ok])
            vals[ok] = np.einsum("ni,ni->n", phi, dofs[self.tri_dofs[tri_idx[ok]]])
        return vals

    def eval_vector(self, u, points):
        tri_idx, ref = self.locate(points)
        ok = tri_idx >= 0
        vals = np.full((len(tri_idx), 2), np.nan)
        if ok.any():
            phi = p2_basis(ref[ok])
            td = self.tri_dofs[tri_idx[ok]]
            vals[ok, 0] = np.einsum("ni,ni->n", phi, u[:self.ndof][td])
            vals[ok, 1] = np.einsum("ni,ni->n", phi, u[self.ndof:][td])
        return vals

    def grad_at_ref(self, u, tri_idx, ref):
        """Velocity gradient tensor (n, 2, 2) at reference coords in given triangles."""
        gref = p2_grad(ref)
        gphys = np.einsum("nia,nab->nib", gref, self.Jinv[tri_idx])
        td = self.tri_dofs[tri_idx]
        ux, uy = u[:self.ndof][td], u[self.ndof:][td]
        out = np.empty((len(tri_idx), 2, 2))
        out[:, 0, :] = np.einsum("ni,nib->nb", ux, gphys)
        out[:, 1, :] = np.einsum("ni,nib->nb", uy, gphys)
        return out

    # -- boundary chains -------------------------------------------------------

    def chain(self, *tags):
        """TraceChain along the boundary edges carrying the given tags."""
        return TraceChain(self, tags)

    def outward_edge_normals(self, edge_rows):
        """Outward unit normal per boundary edge, robust for holes."""
        mesh = self.mesh
        e = mesh.boundary_edges[edge_rows]
        a, b = mesh.nodes[e[:, 0]], mesh.nodes[e[:, 1]]
        t = b - a
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        cent = mesh.nodes[mesh.triangles[self.bedge_tri[edge_rows]]].mean(axis=1)
        flip = np.einsum("ij,ij->i", n, cent - 0.5 * (a + b)) > 0
        n[flip] *= -1
        return n

    def boundary_flux(self, vals):
        """Flux of the quadratic interpolant through the whole boundary.

        ``vals`` holds (ndof, 2) nodal values; Simpson per edge is exact
        for the P2 trace, so this is the discrete compatibility measure
        seen by the divergence constraint rows.
        """
        mesh = self.mesh
        rows = np.arange(len(mesh.boundary_edges))
        normals = self.outward_edge_normals(rows)
        total = 0.0
        for r, (i, j) in enumerate(mesh.boundary_edges):
            m = self.bedge_mid[r]
            L = np.linalg.norm(mesh.nodes[j] - mesh.nodes[i])
            vn = (vals[i] @ normals[r], vals[j] @ normals[r], vals[m] @ normals[r])
            total += L * (vn[0] + vn[1] + 4.0 * vn[2]) / 6.0
        return float(total)

    def boundary_measure(self):
        mesh = self.mesh
        d = mesh.nodes[mesh.boundary_edges[:, 1]] - mesh.nodes[mesh.boundary_edges[:, 0]]
        return float(np.linalg.norm(d, axis=1).sum())

    def boundary_dof_normals(self):
        """Averaged outward normal per dof over the whole boundary (zeros
        at interior dofs)."""
        rows = np.arange(len(self.mesh.boundary_edges))
        normals = self.outward_edge_normals(rows)
        acc = np.zeros((self.ndof, 2))
        for r, (i, j) in enumerate(self.mesh.boundary_edges):
            for d in (i, j, self.bedge_mid[r]):
                acc[d] += normals[r]
        nrm = np.linalg.norm(acc, axis=1, keepdims=True)
        nrm[nrm == 0] = 1.0
        return acc / nrm

    def project_zero_flux(self, vals):
        """Remove the discrete boundary flux from nodal data exactly.

        A multiple of the outward normal field, supported on the dofs that
        already carry data (all boundary dofs when the data vanishes), is
        subtracted; the coefficient comes from the correction field's own
        discrete flux, so the result has exactly zero flux.
        """
        vals = np.array(vals, dtype=float)
        flux = self.boundary_flux(vals)
        if flux == 0.0:
            return vals
        nu = self.boundary_dof_normals()
        mask = (np.abs(vals).sum(axis=1) > 0)
        if not mask.any():
            mask = np.linalg.norm(nu, axis=1) > 0
        corr = np.where(mask[:, None], nu, 0.0)
        cflux = self.boundary_flux(corr)
        if cflux == 0.0:
            raise ValueError("flux correction field has zero flux itself")
        return vals - (flux / cflux) * corr


class TraceChain:
    """Trace of the P2 space along one tagged boundary chain.

    Provides the 1D quadratic mass/stiffness matrices over the chain, the
    dof mapping into the parent space, and arclength coordinates of the
    trace dofs (vertex, midpoint alternating along the chain).
    """

    def __init__(self, space: P2Space, tags):
        self.space = space
        self.tags = tuple(tags)
        mesh = space.mesh
        chain_nodes, edge_rows = boundary_chain(mesh, *tags)
        self.edge_rows = edge_rows
        self.closed = chain_nodes[0] == chain_nodes[-1]
        # global dof per trace dof: v0, m0, v1, m1, ..., v_last
        gdofs = []
        for k, r in enumerate(edge_rows):
            i, j = chain_nodes[k], chain_nodes[k + 1]
            gdofs.append(int(i))
            gdofs.append(int(space.edge_dof(i, j)))
        if not self.closed:
            gdofs.append(int(chain_nodes[-1]))
        self.gdofs = np.array(gdofs, dtype=np.int64)
        self.n = len(self.gdofs)

        # arclength positions (straight chords)
        pts = mesh.nodes[chain_nodes]
        seglen = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        self.edge_len = seglen
        s = [0.0]
        for L in seglen:
            s.append(s[-1] + 0.5 * L)
            s.append(s[-1] + 0.5 * L)
        if self.closed:
            s = s[:-1]
        self.s = np.array(s)
        self.total_length = float(seglen.sum())
        self.chain_nodes = chain_nodes

        # local (end0, end1, mid) indices into the trace dof list per edge
        self.local = np.empty((len(edge_rows), 3), dtype=np.int64)
        for k in range(len(edge_rows)):
            e0 = 2 * k
            e1 = (2 * k + 2) % self.n if self.closed else 2 * k + 2
            self.local[k] = (e0, e1, 2 * k + 1)

    def restrict(self, full):
        """Extract trace values from a stacked vector dof array or scalar array."""
        full = np.asarray(full)
        nd = self.space.ndof
        if full.shape[-1] == 2 * nd:
            return np.stack([full[..., :nd][..., self.gdofs],
                             full[..., nd:][..., self.gdofs]], axis=-1)
        return full[..., self.gdofs]

    def mass(self):
        return self._matrix(kind="mass")

    def stiffness(self):
        return self._matrix(kind="stiffness")

    def _matrix(self, kind):
        n = self.n
        M = np.zeros((n, n))
        for k, L in enumerate(self.edge_len):
            if kind == "mass":
                loc = L / 30.0 * np.array([[4.0, -1.0, 2.0],
                                           [-1.0, 4.0, 2.0],
                                           [2.0, 2.0, 16.0]])
            else:
                loc = 1.0 / (3.0 * L) * np.array([[7.0, 1.0, -8.0],
                                                  [1.0, 7.0, -8.0],
                                                  [-8.0, -8.0, 16.0]])
            idx = self.local[k]
            M[np.ix_(idx, idx)] += loc
        return M

    def scatter(self, trace_vec, ncomp=2):
        """Spread a trace vector (n,) or (n, 2) back to full stacked dofs."""
        nd = self.space.ndof
        trace_vec = np.asarray(trace_vec)
        if trace_vec.ndim == 1:
            out = np.zeros(nd)
            out[self.gdofs] = trace_vec
            return out
        out = np.zeros(2 * nd)
        out[self.gdofs] = trace_vec[:, 0]
        out[nd + self.gdofs] = trace_vec[:, 1]
        return out

    def normals_at_dofs(self):
        """Outward normal at each trace dof (averaged at shared vertices)."""
        en = self.space.outward_edge_normals(self.edge_rows)
        acc = np.zeros((self.n, 2))
        for k in range(len(self.edge_rows)):
            e0, e1, m = self.local[k]
            acc[e0] += en[k]
            acc[e1] += en[k]
            acc[m] += en[k]
        norms = np.linalg.norm(acc, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return acc / norms

    def flux(self, trace_vals):
        """Boundary flux integral of v . nu over the chain for trace values (n, 2)."""
        en = self.space.outward_edge_normals(self.edge_rows)
        total = 0.0
        for k, L in enumerate(self.edge_len):
            e0, e1, m = self.local[k]
            vn = trace_vals[[e0, e1, m]] @ en[k]
            # Simpson on the quadratic trace: exact
            total += L * (vn[0] + vn[1] + 4.0 * vn[2]) / 6.0
        return float(total)

    def interpolate(self, func):
        """Evaluate func(x, y) -> (n,) or (n, 2) at trace dof coordinates."""
        coords = self.space.dof_coords[self.gdofs]
        return np.asarray(func(coords[:, 0], coords[:, 1]), dtype=float)

    def resample_on(self, other, values):
        """Interpolate trace values (n, ...) onto another chain by arclength.

        Both chains must parametrize the same geometric arc (same start);
        used to compare traces across meshes of different resolution.
        """
        values = np.asarray(values, dtype=float)
        s_from = self.s / self.total_length
        s_to = other.s / other.total_length
        if values.ndim == 1:
            return np.interp(s_to, s_from, values)
        return np.stack([np.interp(s_to, s_from, values[:, c])
                         for c in range(values.shape[1])], axis=1)
