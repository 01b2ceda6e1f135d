"""Mixed Taylor-Hood (P2/P1) solver for the steady Stokes system.

Solves  div(grad u + grad u^T - p I) = f,  div u = 0  with Dirichlet
velocity data on every tagged boundary and unit viscosity.  The pressure
is gauged to zero mean with one scalar constraint row; the saddle system
is factored once per (mesh, Dirichlet pattern) and reused across data,
so solving many boundary data on one mesh is cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from . import norms
from .fem import P2Space
from .mesh import GAMMA, OBSTACLE, OUTER_REST, BOX, Mesh


class SolveError(RuntimeError):
    """Raised on incompatible data or a failed saddle-point solve."""


@dataclass(eq=False)
class BodyForce:
    """Body force given analytically; ``func(x, y) -> (n, 2)`` array."""

    func: object
    label: str = "body-force"

    def __call__(self, x, y):
        vals = np.asarray(self.func(x, y), dtype=float)
        if not np.isfinite(vals).all():
            raise SolveError(f"{self.label}: non-finite values at quadrature points")
        return vals


@dataclass(eq=False)
class StokesSolution:
    """Velocity/pressure pair on a mesh with the zero-mean pressure gauge."""

    space: P2Space
    u: np.ndarray          # stacked [ux, uy], length 2*ndof
    p: np.ndarray          # P1 vertex dofs
    residual_rel: float
    div_residual: float
    operator: object = None      # StokesOperator that produced the solve
    body_force: object = None
    _grad_cache: object = field(default=None, repr=False)

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    def pressure_mean(self):
        w = self.space.integral_vector("p1")
        return float(w @ self.p) / float(w.sum())

    def velocity_at(self, points):
        return self.space.eval_vector(self.u, points)

    def pressure_at(self, points):
        tri_idx, ref = self.space.locate(points)
        ok = tri_idx >= 0
        from .fem import p1_basis
        vals = np.full(len(tri_idx), np.nan)
        if ok.any():
            psi = p1_basis(ref[ok])
            vals[ok] = np.einsum("ni,ni->n", psi, self.p[self.mesh.triangles[tri_idx[ok]]])
        return vals

    def quad_gradients(self):
        """Velocity gradient (T, q, 2, 2) at the assembly quadrature points."""
        if self._grad_cache is None:
            sp = self.space
            td = sp.tri_dofs
            ux, uy = self.u[:sp.ndof][td], self.u[sp.ndof:][td]
            g = np.empty(sp.quad_grad.shape[:2] + (2, 2))
            g[:, :, 0, :] = np.einsum("ti,tqib->tqb", ux, sp.quad_grad)
            g[:, :, 1, :] = np.einsum("ti,tqib->tqb", uy, sp.quad_grad)
            object.__setattr__(self, "_grad_cache", g)
        return self._grad_cache

    def grad_energy_density(self):
        """|grad u|^2 at quadrature points, shape (T, q)."""
        g = self.quad_gradients()
        return np.einsum("tqcb,tqcb->tq", g, g)

    def total_grad_energy(self):
        return float((self.space.quad_w * self.grad_energy_density()).sum())

    def velocity_l2(self, rho0=1.0):
        M = self.space.scalar_mass()
        nd = self.space.ndof
        val = self.u[:nd] @ (M @ self.u[:nd]) + self.u[nd:] @ (M @ self.u[nd:])
        return float(np.sqrt(val / rho0 ** 2))

    def velocity_h1(self, rho0=1.0):
        nd = self.space.ndof
        M = self.space.scalar_mass()
        K = self.space.scalar_stiffness()
        val = 0.0
        for c in (0, 1):
            uc = self.u[c * nd:(c + 1) * nd]
            val += uc @ (M @ uc) + rho0 ** 2 * (uc @ (K @ uc))
        return float(np.sqrt(val / rho0 ** 2))


def save_solution(path, sol: StokesSolution):
    """ASCII 'dof value' tables for velocity components and pressure."""
    nd = sol.space.ndof
    with open(path, "w") as fh:
        fh.write(f"velocity_dofs {nd} pressure_dofs {len(sol.p)}\n")
        for i in range(nd):
            fh.write(f"{i} {sol.u[i]:.17g} {sol.u[nd + i]:.17g}\n")
        for i, v in enumerate(sol.p):
            fh.write(f"{i} {v:.17g}\n")


class StokesOperator:
    """Assembled Stokes saddle operator on one mesh, reusable across data."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.space = P2Space(mesh)
        sp = self.space
        self.A = sp.sym_grad_stiffness()
        self.D = sp.div_coupling("p1")          # rows: integral of q * div(phi)
        self.B = (-self.D).tocsr()
        self.gauge = sp.integral_vector("p1")
        self._factor = None
        self._fixed = None

    # -- Dirichlet bookkeeping ------------------------------------------------

    def dirichlet_dofs(self):
        bd = self.space.boundary_dofs()
        return np.concatenate([bd, self.space.ndof + bd])

    def boundary_values(self, g):
        """Dof values on the boundary from g given per tag or globally.

        ``g`` may be a callable (x, y) -> (n, 2), a dict tag->callable/const,
        or None.  Untagged parts default to no-slip zero.
        """
        sp = self.space
        vals = np.zeros((sp.ndof, 2))
        if g is None:
            pass
        elif isinstance(g, np.ndarray):
            if g.shape != (sp.ndof, 2):
                raise SolveError("precomputed boundary values must be (ndof, 2)")
            vals = g.copy()
        elif callable(g):
            bd = sp.boundary_dofs()
            coords = sp.dof_coords[bd]
            vals[bd] = np.asarray(g(coords[:, 0], coords[:, 1]), dtype=float)
        else:
            for tag in (OUTER_REST, BOX, OBSTACLE, GAMMA):
                if tag not in g:
                    continue
                data = g[tag]
                tags_present = set(self.mesh.edge_tags.tolist())
                if tag not in tags_present:
                    continue
                bd = sp.boundary_dofs(tag)
                coords = sp.dof_coords[bd]
                if callable(data):
                    vals[bd] = np.asarray(data(coords[:, 0], coords[:, 1]), dtype=float)
                else:
                    vals[bd] = np.asarray(data, dtype=float)
        return vals

    def boundary_flux(self, vals):
        return self.space.boundary_flux(vals)

    def boundary_measure(self):
        return self.space.boundary_measure()

    # -- solve ------------------------------------------------------------------

    def _factorize(self, fixed):
        if self._factor is not None and np.array_equal(fixed, self._fixed):
            return
        sp = self.space
        n = 2 * sp.ndof
        free = np.setdiff1d(np.arange(n), fixed)
        A_ff = self.A[np.ix_(free, free)]
        # the constant-pressure null mode is removed by pinning dof 0 (its
        # constraint row is redundant for flux-compatible data); the mean-zero
        # gauge is restored after the solve.  A Lagrange gauge row would be
        # dense and ruins the sparse factorization.
        B_f = self.B[:, free].tocsr()
        keep = np.arange(1, B_f.shape[0])
        B_k = B_f[keep]
        K = sparse.bmat([[A_ff, B_k.T], [B_k, None]], format="csc")
        try:
            self._factor = splinalg.splu(K)
        except RuntimeError as exc:
            raise SolveError(f"singular saddle system: {exc}") from exc
        self._fixed = fixed
        self._free = free
        self._keep = keep
        self._K = K

    def solve(self, g=None, f=None, flux_tol=1e-8) -> StokesSolution:
        """Dirichlet solve; raises on incompatible boundary flux.

        A tiny residual flux (relative magnitude below ``flux_tol``) is
        repaired by subtracting a uniform multiple of the outward normal
        from the data; anything larger is rejected with the measured value.
        """
        sp = self.space
        vals = self.boundary_values(g)
        flux = self.boundary_flux(vals)
        scale = float(np.abs(vals).max()) * self.boundary_measure()
        if scale == 0.0:
            scale = 1.0
        if abs(flux) > flux_tol * scale:
            raise SolveError(
                f"incompatible boundary data: flux {flux:.3e} exceeds "
                f"{flux_tol:.1e} * scale {scale:.3e}")
        if abs(flux) > 0:
            vals = sp.project_zero_flux(vals)
        fixed_scalar = sp.boundary_dofs()
        fixed = np.concatenate([fixed_scalar, sp.ndof + fixed_scalar])
        self._factorize(fixed)
        free = self._free

        u = np.zeros(2 * sp.ndof)
        u[fixed_scalar] = vals[fixed_scalar, 0]
        u[sp.ndof + fixed_scalar] = vals[fixed_scalar, 1]

        F = -sp.load_vector(f) if f is not None else np.zeros(2 * sp.ndof)
        rhs = np.concatenate([
            F[free] - self.A[np.ix_(free, fixed)] @ u[fixed],
            (-self.B[:, fixed] @ u[fixed])[self._keep],
        ])
        z = self._factor.solve(rhs)
        nrm = float(np.linalg.norm(rhs))
        residual = float(np.linalg.norm(self._K @ z - rhs)) / (nrm if nrm > 0 else 1.0)

        nfree = len(free)
        u[free] = z[:nfree]
        p = np.zeros(self.B.shape[0])
        p[self._keep] = z[nfree:]
        w = self.gauge
        p -= (w @ p) / w.sum()

        div_res = float(np.abs(self.D @ u).max())
        sol = StokesSolution(sp, u, p, residual, div_res, operator=self,
                             body_force=f)
        h1 = sol.velocity_h1()
        if h1 > 0 and div_res > 1e-8 * h1:
            raise SolveError(f"divergence residual {div_res:.3e} too large vs |u|_1 {h1:.3e}")
        return sol


def solve_dirichlet(mesh: Mesh, g=None, f=None) -> StokesSolution:
    """One-shot Dirichlet Stokes solve (see StokesOperator for reuse)."""
    return StokesOperator(mesh).solve(g=g, f=f)


# ---------------------------------------------------------------------------
# energy estimate probe


def energy_estimate_check(sol: StokesSolution, g_trace_norm, f=None, rho0=1.0):
    """Observed ratio (|u|_1 + rho0 |p - p_E|_0) / (rho0 |f|_-1 + |g|_1/2).

    ``g_trace_norm`` is the precomputed scaled H^1/2 norm of the boundary
    data over the whole boundary; the constant in the continuous estimate
    is never asserted, only measured and returned.
    """
    sp = sol.space
    num = sol.velocity_h1(rho0)
    Mq = sp.p1_mass()
    w = sp.integral_vector("p1")
    p0 = sol.p - (w @ sol.p) / w.sum()
    num += rho0 * float(np.sqrt(p0 @ (Mq @ p0) / rho0 ** 2))

    den = float(g_trace_norm)
    if f is not None:
        func_vec = sp.load_vector(f)
        den += rho0 * norms.h_minus_one_norm(sp, func_vec, rho0)
    if den == 0.0:
        if num > 1e-10:
            raise SolveError("zero data produced a nonzero solution")
        return 0.0
    return num / den


# ---------------------------------------------------------------------------
# discrete Leray (Helmholtz) projection


@dataclass(eq=False)
class LerayParts:
    """L2-orthogonal split v = h_part + grad_part at the quadrature points.

    ``grad_part`` is the gradient of the quadratic ``potential``; ``h_part``
    is L2-orthogonal to every discrete gradient, i.e. weakly divergence
    free with weakly vanishing boundary trace.  Fields are stored as
    (T, q, 2) quadrature-point arrays.
    """

    space: P2Space
    h_part: np.ndarray
    grad_part: np.ndarray
    potential: np.ndarray
    orthogonality: float
    constraint_residual: float

    def l2(self, field):
        return float(np.sqrt(np.einsum(
            "tq,tqb,tqb->", self.space.quad_w, field, field)))


def _as_quad_field(sp: P2Space, v):
    """Accept a stacked P2 dof vector, a callable, or a quad-point array."""
    if callable(v):
        pts = sp.quad_points.reshape(-1, 2)
        vals = np.asarray(v(pts[:, 0], pts[:, 1]), dtype=float)
        return vals.reshape(sp.quad_points.shape)
    v = np.asarray(v, dtype=float)
    if v.shape == sp.quad_points.shape:
        return v
    if v.shape == (2 * sp.ndof,):
        td = sp.tri_dofs
        out = np.empty(sp.quad_points.shape)
        out[:, :, 0] = np.einsum("qi,ti->tq", sp.quad_phi, v[:sp.ndof][td])
        out[:, :, 1] = np.einsum("qi,ti->tq", sp.quad_phi, v[sp.ndof:][td])
        return out
    raise SolveError("velocity field must be a dof vector, callable, or quad field")


def leray_project(mesh_or_space, v) -> LerayParts:
    """Discrete Helmholtz-Weyl split of a velocity field.

    The gradient component is fitted in the conforming subspace of exact
    quadratic-potential gradients (a scalar SPD least-squares solve), so
    any input that is itself such a gradient comes back with zero h_part,
    and any field orthogonal to all gradients keeps grad_part = 0; the
    decomposition residual is zero by construction and the orthogonality
    defect equals the linear-solve residual.
    """
    sp = mesh_or_space if isinstance(mesh_or_space, P2Space) else P2Space(mesh_or_space)
    vq = _as_quad_field(sp, v)
    if not np.isfinite(vq).all():
        raise SolveError("velocity field has non-finite values")
    K = sp.scalar_stiffness().tocsc()
    rhs = np.zeros(sp.ndof)
    blocks = np.einsum("tq,tqb,tqib->ti", sp.quad_w, vq, sp.quad_grad)
    np.add.at(rhs, sp.tri_dofs.ravel(), blocks.ravel())
    # potential defined up to a constant: pin dof 0, shift to zero mean after
    keep = np.arange(1, sp.ndof)
    lu = splinalg.splu(K[np.ix_(keep, keep)].tocsc())
    q = np.zeros(sp.ndof)
    q[keep] = lu.solve(rhs[keep])
    w = sp.integral_vector("p2")
    q -= (w @ q) / w.sum()
    grad = np.einsum("ti,tqib->tqb", q[sp.tri_dofs], sp.quad_grad)
    h = vq - grad
    ortho = float(np.einsum("tq,tqb,tqb->", sp.quad_w, h, grad))
    cres = float(np.abs(rhs - K @ q).max())
    return LerayParts(sp, h, grad, q, ortho, cres)


# ---------------------------------------------------------------------------
# Poincare eigenvalue probe


def poincare_constant(mesh: Mesh, clamped_tags, rho0=1.0, dense=False):
    """Smallest eigenvalue of the Dirichlet form over fields vanishing on
    the clamped edges, and the resulting Poincare constant 1/(rho0 sqrt(l1)).

    Returns (lambda1, constant).
    """
    if isinstance(clamped_tags, str):
        clamped_tags = (clamped_tags,)
    sp = P2Space(mesh)
    clamped = sp.boundary_dofs(*clamped_tags)
    if len(clamped) == 0:
        raise SolveError("empty clamped edge set: Poincare constant is infinite")
    K = sp.scalar_stiffness()
    M = sp.scalar_mass()
    free = np.setdiff1d(np.arange(sp.ndof), clamped)
    K_ff = K[np.ix_(free, free)]
    M_ff = M[np.ix_(free, free)]
    if dense or len(free) < 400:
        from scipy.linalg import eigh
        lam = eigh(K_ff.toarray(), M_ff.toarray(), eigvals_only=True,
                   subset_by_index=[0, 0])[0]
    else:
        lam = splinalg.eigsh(K_ff.tocsc(), k=1, M=M_ff.tocsc(), sigma=0,
                             which="LM", return_eigenvectors=False)[0]
    lam = float(lam)
    return lam, 1.0 / (rho0 * np.sqrt(lam))
