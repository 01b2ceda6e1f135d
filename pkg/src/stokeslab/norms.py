"""Scaled Sobolev norms, realized discretely.

All norms carry the dimensional normalization that makes them invariant
under joint rescaling of the domain and the length unit rho0 (and reduce
to the usual norms at rho0 = 1):

* domain L2:   (rho0^-2 integral u^2)^(1/2)          [n = 2 throughout]
* domain H1:   (rho0^-2 (integral u^2 + rho0^2 integral |grad u|^2))^(1/2)
* boundary L2: (rho0^-1 integral_G u^2)^(1/2)
* boundary H^(1/2) / H^(-1/2): spectral interpolation built from the
  generalized eigenpairs of the boundary stiffness/mass pair on the arc,
  with exponent +-1/2 applied to (1 + rho0^2 lambda_k),
* domain H^-1: Riesz norm of the clamped Poisson preimage.

Vector-valued objects use componentwise coefficients summed quadratically.
Eigendecompositions are cached per (space, tag set); evaluation is pure.
"""

from __future__ import annotations

import weakref
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh

from .fem import P2Space, TraceChain

_BOP_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


class NormError(ValueError):
    pass


@dataclass(frozen=True)
class NormReport:
    kind: str
    value: float
    rho0: float
    label: str = ""


class BoundaryNormOperator:
    """Spectral trace-norm operator on one tagged boundary chain."""

    def __init__(self, space: P2Space, tags):
        self.chain = TraceChain(space, tags if not isinstance(tags, str) else (tags,))
        M = self.chain.mass()
        K = self.chain.stiffness()
        lams, vecs = eigh(K, M)
        self.lams = np.maximum(lams, 0.0)
        self.vecs = vecs                  # columns M-orthonormal
        self.M = M
        self.tags = tuple(tags) if not isinstance(tags, str) else (tags,)

    @property
    def n(self):
        return self.chain.n

    def coefficients(self, trace_vals):
        """Eigenbasis coefficients; trace_vals shape (n,) or (n, ncomp)."""
        vals = np.asarray(trace_vals, dtype=float)
        if vals.shape[0] != self.n:
            raise NormError(f"trace length {vals.shape[0]} does not match chain {self.n}")
        return self.vecs.T @ (self.M @ vals)

    def sobolev(self, trace_vals, exponent, rho0):
        c = self.coefficients(trace_vals)
        weights = (1.0 + rho0 ** 2 * self.lams) ** exponent
        if c.ndim == 1:
            total = float(weights @ c ** 2)
        else:
            total = float(weights @ (c ** 2).sum(axis=1))
        return float(np.sqrt(total / rho0))

    def l2(self, trace_vals, rho0):
        return self.sobolev(trace_vals, 0.0, rho0)

    def h_half(self, trace_vals, rho0):
        return self.sobolev(trace_vals, 0.5, rho0)

    def h_minus_half(self, trace_vals, rho0):
        return self.sobolev(trace_vals, -0.5, rho0)

    def pairing(self, psi_vals, v_vals, rho0):
        """Scaled duality pairing rho0^-1 integral psi . v over the chain."""
        psi_vals = np.asarray(psi_vals, dtype=float)
        v_vals = np.asarray(v_vals, dtype=float)
        raw = float(np.sum(psi_vals * (self.M @ v_vals)))
        return raw / rho0


def boundary_operator(space: P2Space, *tags) -> BoundaryNormOperator:
    """Cached spectral operator for the chain tagged ``tags``."""
    key = tuple(sorted(tags))
    cache = _BOP_CACHE.setdefault(space, {})
    if key not in cache:
        cache[key] = BoundaryNormOperator(space, tags)
    return cache[key]


# ---------------------------------------------------------------------------
# domain norms


def _split(space, dofs):
    dofs = np.asarray(dofs, dtype=float)
    if dofs.shape[-1] == 2 * space.ndof:
        return [dofs[..., :space.ndof], dofs[..., space.ndof:]]
    if dofs.shape[-1] == space.ndof:
        return [dofs]
    raise NormError("dof vector length matches neither scalar nor vector space")


def l2_norm(space: P2Space, dofs, rho0):
    M = space.scalar_mass()
    total = sum(float(c @ (M @ c)) for c in _split(space, dofs))
    return float(np.sqrt(total / rho0 ** 2))


def h1_norm(space: P2Space, dofs, rho0):
    M = space.scalar_mass()
    K = space.scalar_stiffness()
    total = 0.0
    for c in _split(space, dofs):
        total += float(c @ (M @ c)) + rho0 ** 2 * float(c @ (K @ c))
    return float(np.sqrt(total / rho0 ** 2))


def h1_seminorm(space: P2Space, dofs, rho0):
    K = space.scalar_stiffness()
    total = sum(float(c @ (K @ c)) for c in _split(space, dofs))
    return float(np.sqrt(total))  # rho0^(2-n) = 1 for n = 2


def h_minus_one_norm(space: P2Space, functional, rho0):
    """Dual norm via the clamped Poisson Riesz map.

    ``functional`` is the dof vector of the linear form (its action on each
    nodal basis function); components beyond the zero-trace space are
    ignored, matching an H^-1 functional on the clamped space.
    """
    from scipy.sparse.linalg import splu

    K = space.scalar_stiffness().tocsc()
    bd = space.boundary_dofs()
    free = np.setdiff1d(np.arange(space.ndof), bd)
    lu = splu(K[np.ix_(free, free)].tocsc())
    total = 0.0
    for f in _split(space, np.asarray(functional, dtype=float)):
        z = lu.solve(f[free])
        total += float(z @ f[free])
    return float(np.sqrt(total)) / rho0 ** 2


# ---------------------------------------------------------------------------
# dispatcher


KINDS = ("L2", "H1", "H_half_boundary", "H_minus_half_boundary", "H_minus_one")


def norm(kind, obj, region, rho0, label="") -> NormReport:
    """Uniform entry point: ``region`` is a P2Space for domain kinds or a
    BoundaryNormOperator for trace kinds."""
    if kind == "L2" and isinstance(region, BoundaryNormOperator):
        value = region.l2(obj, rho0)
    elif kind == "L2":
        value = l2_norm(region, obj, rho0)
    elif kind == "H1":
        value = h1_norm(region, obj, rho0)
    elif kind == "H_half_boundary":
        value = region.h_half(obj, rho0)
    elif kind == "H_minus_half_boundary":
        value = region.h_minus_half(obj, rho0)
    elif kind == "H_minus_one":
        value = h_minus_one_norm(region, obj, rho0)
    else:
        raise NormError(f"unknown norm kind {kind!r}")
    return NormReport(kind, value, rho0, label)


# ---------------------------------------------------------------------------
# frequency ratio and arc/loop equivalence


def frequency_ratio(bop: BoundaryNormOperator, trace_vals, rho0):
    """|g|_(1/2) / |g|_0 on the chain; >= 1 by construction, scale free."""
    l2 = bop.l2(trace_vals, rho0)
    if l2 == 0.0:
        raise NormError("frequency ratio undefined for zero data")
    return bop.h_half(trace_vals, rho0) / l2


@dataclass(frozen=True)
class EquivalenceReport:
    arc_value: float
    loop_value: float
    constant: float
    support_touches_ends: bool


def equivalence_check(space: P2Space, gamma_trace_vals, rho0,
                      gamma_tags=("GAMMA",), loop_tags=("GAMMA", "OUTER_REST")):
    """Compare the arc H^(1/2) norm with the full-loop norm of the
    zero-extension and report the measured equivalence constant."""
    arc = boundary_operator(space, *gamma_tags)
    loop = boundary_operator(space, *loop_tags)
    vals = np.asarray(gamma_trace_vals, dtype=float)

    ends = [0, arc.chain.n - 1] if not arc.chain.closed else []
    touches = bool(ends) and bool(np.abs(vals[ends]).max() > 1e-12 * max(np.abs(vals).max(), 1e-300))

    arc_value = arc.h_half(vals, rho0)
    if set(arc.chain.gdofs) == set(loop.chain.gdofs):
        return EquivalenceReport(arc_value, arc_value, 1.0, touches)

    pos = {int(d): i for i, d in enumerate(loop.chain.gdofs)}
    ext = np.zeros((loop.chain.n,) + vals.shape[1:])
    for i, d in enumerate(arc.chain.gdofs):
        ext[pos[int(d)]] = vals[i]
    loop_value = loop.h_half(ext, rho0)
    constant = loop_value / arc_value if arc_value > 0 else float("nan")
    return EquivalenceReport(arc_value, loop_value, constant, touches)
