"""Boundary stress measurement and the Cauchy-data discrepancy.

The traction psi = (grad u + grad u^T - p I) . nu on the accessible arc is
recovered variationally (consistent boundary flux): psi is the boundary
mass Riesz representative of the discrete residual functional restricted
to arc traces.  Pointwise gradient sampling of the mixed solution would
be an order noisier and would pollute the discrepancy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import norms
from .fem import TraceChain
from .mesh import GAMMA
from .stokes import StokesSolution, SolveError


class CauchyError(RuntimeError):
    pass


@dataclass(eq=False)
class TraceField:
    """Vector field on a boundary chain: values[k] at arclength chain.s[k]."""

    chain: TraceChain
    values: np.ndarray   # (n, 2)

    @property
    def s(self):
        return self.chain.s

    def save(self, path):
        """ASCII 's psi_x psi_y' along the chain arclength."""
        with open(path, "w") as fh:
            for s, (vx, vy) in zip(self.chain.s, self.values):
                fh.write(f"{s:.17g} {vx:.17g} {vy:.17g}\n")


@dataclass(eq=False)
class CauchyData:
    """Measured pair (g, psi) on the accessible arc with frequency ratio F."""

    g: TraceField
    psi: TraceField
    frequency: float
    rho0: float

    def check(self, flux_tol=1e-10):
        """Support and compatibility invariants of the assigned data."""
        chain = self.g.chain
        vals = self.g.values
        scale = float(np.abs(vals).max())
        if scale == 0.0:
            raise CauchyError("zero boundary data")
        if not chain.closed:
            ends = np.abs(vals[[0, -1]]).max()
            if ends > 1e-10 * scale:
                raise CauchyError("data support touches the arc endpoints")
        flux = chain.flux(vals)
        if abs(flux) > flux_tol * scale * chain.total_length:
            raise CauchyError(f"data flux {flux:.3e} not compatible")
        return True


def residual_functional(sol: StokesSolution):
    """Dof vector of a(u, .) + b(., p) + (f, .), the boundary-flux functional.

    Vanishes on interior test functions up to the solver residual; its
    restriction to boundary traces is the consistent traction.
    """
    op = getattr(sol, "operator", None)
    if op is None:
        raise CauchyError("solution carries no operator reference")
    r = op.A @ sol.u + op.B.T @ sol.p
    if getattr(sol, "body_force", None) is not None:
        r = r + op.space.load_vector(sol.body_force)
    return r


def stress_trace(sol: StokesSolution, tags=(GAMMA,)) -> TraceField:
    """Consistent traction on the chain tagged ``tags``.

    At chain endpoints the nodal lifting leaks onto the adjacent edge, so
    the two endpoint dofs absorb that flux; compare away from them.
    """
    if isinstance(tags, str):
        tags = (tags,)
    sp = sol.space
    present = set(sol.mesh.edge_tags.tolist())
    if not set(tags) & present:
        raise CauchyError(f"no boundary edges tagged {tags}")
    chain = sp.chain(*tags)
    r = residual_functional(sol)
    nd = sp.ndof
    R = np.stack([r[:nd][chain.gdofs], r[nd:][chain.gdofs]], axis=1)
    M = chain.mass()
    psi = np.linalg.solve(M, R)
    return TraceField(chain, psi)


def measure(sol: StokesSolution, rho0, tags=(GAMMA,)) -> CauchyData:
    """Package the Cauchy pair (velocity trace, traction) on the arc."""
    if isinstance(tags, str):
        tags = (tags,)
    chain = sol.space.chain(*tags)
    g_vals = chain.restrict(sol.u)
    psi = stress_trace(sol, tags)
    bop = norms.boundary_operator(sol.space, *tags)
    F = norms.frequency_ratio(bop, g_vals, rho0)
    return CauchyData(TraceField(chain, g_vals), psi, F, rho0)


def epsilon_discrepancy(sol1: StokesSolution, sol2: StokesSolution, rho0,
                        tags=(GAMMA,), g_tol=1e-8) -> float:
    """rho0-scaled H^(-1/2) norm of the traction gap on the arc.

    Both solutions must carry the same Dirichlet data on the arc; traces
    living on different discretizations are interpolated onto the coarser
    of the two by arclength before differencing.
    """
    if isinstance(tags, str):
        tags = (tags,)
    psi1 = stress_trace(sol1, tags)
    psi2 = stress_trace(sol2, tags)
    c1, c2 = psi1.chain, psi2.chain

    g1 = c1.restrict(sol1.u)
    g2 = c2.restrict(sol2.u)
    scale = max(float(np.abs(g1).max()), 1e-300)
    if c1.n == c2.n and np.allclose(c1.s, c2.s, rtol=0, atol=1e-9 * c1.total_length):
        if float(np.abs(g1 - g2).max()) > g_tol * scale:
            raise CauchyError("solutions do not share the boundary data g")
        target, v1, v2 = c1, psi1.values, psi2.values
        target_space = sol1.space
    else:
        # interpolate onto the coarser trace space
        if c1.n <= c2.n:
            target, target_space = c1, sol1.space
            v1 = psi1.values
            v2 = c2.resample_on(c1, psi2.values)
            g2r = c2.resample_on(c1, g2)
            gdiff = float(np.abs(g1 - g2r).max())
        else:
            target, target_space = c2, sol2.space
            v1 = c1.resample_on(c2, psi1.values)
            v2 = psi2.values
            g1r = c1.resample_on(c2, g1)
            gdiff = float(np.abs(g1r - g2).max())
        if gdiff > 100 * g_tol * scale:
            raise CauchyError("solutions do not share the boundary data g")
    bop = norms.boundary_operator(target_space, *tags)
    return rho0 * bop.h_minus_half(v1 - v2, rho0)
