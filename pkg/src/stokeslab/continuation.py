"""Numerical probes of quantitative unique continuation.

Three-spheres log-convexity reports, interior and up-to-boundary
propagation of smallness, gradient energy confined between two obstacle
boundaries, and the sup-interpolation inequality constant.

Ball gradient energies are computed by clipping-free quadrature: the
assembly quadrature points are weighted by a smooth step of width ~h in
the signed ball distance.  Three-spheres energies additionally calibrate
the smoothed ball area against pi r^2 so constant-gradient fields give
exact area ratios; monotonicity probes keep the raw (monotone-in-r)
smoothed sums.  An independent subdivision quadrature with sharp in/out
classification serves as the oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import BoundaryCurve, DomainSpec

THETA_STAR_MAX = math.exp(-0.5)
THETA_STAR_DEFAULT = 0.6 * THETA_STAR_MAX
MARGIN_MULTIPLIER_DEFAULT = 2.0


class ProbeError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# ball energies


def _smooth_step(m):
    """C^1 ramp: 0 for m <= -1/2, 1 for m >= 1/2, cubic in between."""
    t = np.clip(m + 0.5, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def ball_energy(sol, center, r, width=None, calibrated=False):
    """Gradient energy over B_r(center) by smooth-indicator quadrature.

    ``calibrated=True`` rescales by the exact over smoothed ball area, so
    constant densities integrate to exactly density * pi r^2; the raw
    variant is monotone nondecreasing in r for any nonnegative density.
    """
    sp = sol.space
    if width is None:
        width = sol.mesh.h_max
    pts = sp.quad_points
    d = np.hypot(pts[..., 0] - center[0], pts[..., 1] - center[1])
    s = _smooth_step((r - d) / width)
    dens = sol.grad_energy_density()
    raw = float((sp.quad_w * s * dens).sum())
    if not calibrated:
        return raw
    smooth_area = float((sp.quad_w * s).sum())
    if smooth_area == 0.0:
        return 0.0
    return raw * (math.pi * r * r) / smooth_area


def _leaf_energy(sol, tri, ref):
    """Exact integral of |grad u|^2 over sub-triangles given in reference
    coords of their parent triangles (the density is quadratic there)."""
    mids = 0.5 * (ref + np.roll(ref, -1, axis=1))          # (n, 3, 2)
    flat_tri = np.repeat(tri, 3)
    g = sol.space.grad_at_ref(sol.u, flat_tri, mids.reshape(-1, 2))
    dens = np.einsum("ncb,ncb->n", g, g).reshape(len(tri), 3)
    e1 = ref[:, 1] - ref[:, 0]
    e2 = ref[:, 2] - ref[:, 0]
    ref_area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    area = ref_area * np.abs(sol.space.detJ[tri])
    return float((area * dens.mean(axis=1)).sum())


def _subdivide_energy(sol, classify, depth, candidates=None):
    """Sharp-indicator energy by level-wise subdivision.

    ``classify(tri, world_verts) -> codes``: +1 fully inside, 0 fully
    outside, -1 straddling.  Straddlers are split 1:4 until ``depth``;
    leftover leaves count by centroid membership.
    """
    sp = sol.space
    tris = np.arange(sp.mesh.n_triangles) if candidates is None else np.asarray(candidates)
    ref0 = np.tile(np.array([[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]]), (len(tris), 1, 1))
    total = 0.0
    tri, ref = tris, ref0
    for level in range(depth + 1):
        if len(tri) == 0:
            break
        world = (sp.tri_origin[tri][:, None, :]
                 + np.einsum("nva,nba->nvb", ref, sp._J[tri]))
        codes = classify(tri, world)
        inside = codes == 1
        if inside.any():
            total += _leaf_energy(sol, tri[inside], ref[inside])
        strad = codes == -1
        if level == depth:
            if strad.any():
                cent = world[strad].mean(axis=1)
                ccodes = classify(tri[strad], cent[:, None, :])
                pick = ccodes != 0
                if pick.any():
                    total += _leaf_energy(sol, tri[strad][pick], ref[strad][pick])
            break
        tri = np.repeat(tri[strad], 4)
        r = ref[strad]
        m01 = 0.5 * (r[:, 0] + r[:, 1])
        m12 = 0.5 * (r[:, 1] + r[:, 2])
        m20 = 0.5 * (r[:, 2] + r[:, 0])
        ref = np.concatenate([
            np.stack([r[:, 0], m01, m20], axis=1)[:, None],
            np.stack([r[:, 1], m12, m01], axis=1)[:, None],
            np.stack([r[:, 2], m20, m12], axis=1)[:, None],
            np.stack([m01, m12, m20], axis=1)[:, None],
        ], axis=1).reshape(-1, 3, 2)
    return total


def ball_energy_fine(sol, center, r, depth=6):
    """Oracle gradient energy over the ball: sharp subdivision quadrature."""
    center = np.asarray(center, dtype=float)

    def classify(tri, world):
        d = np.linalg.norm(world - center, axis=2)
        if world.shape[1] == 1:
            return (d[:, 0] <= r).astype(int)
        all_in = (d <= r).all(axis=1)
        # fully outside iff the triangle's distance to the center exceeds r
        codes = np.full(len(tri), -1, dtype=int)
        codes[all_in] = 1
        maybe_out = ~all_in
        if maybe_out.any():
            dmin = _point_tri_distance(center, world[maybe_out])
            sub = np.where(maybe_out)[0]
            codes[sub[dmin >= r]] = 0
        return codes

    return _subdivide_energy(sol, classify, depth)


def _point_tri_distance(point, tris):
    """Distance from one point to each triangle (n, 3, 2); 0 if inside."""
    n = len(tris)
    d = np.full(n, np.inf)
    for k in range(3):
        a = tris[:, k]
        b = tris[:, (k + 1) % 3]
        ab = b - a
        denom = np.einsum("ij,ij->i", ab, ab)
        denom[denom == 0] = 1.0
        t = np.clip(np.einsum("ij,ij->i", point - a, ab) / denom, 0.0, 1.0)
        proj = a + t[:, None] * ab
        d = np.minimum(d, np.linalg.norm(point - proj, axis=1))
    # inside test via sign of cross products
    s0 = _cross(tris[:, 1] - tris[:, 0], point - tris[:, 0])
    s1 = _cross(tris[:, 2] - tris[:, 1], point - tris[:, 1])
    s2 = _cross(tris[:, 0] - tris[:, 2], point - tris[:, 2])
    inside = ((s0 >= 0) & (s1 >= 0) & (s2 >= 0)) | ((s0 <= 0) & (s1 <= 0) & (s2 <= 0))
    d[inside] = 0.0
    return d


def _cross(a, b):
    return a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]


def region_energy(sol, inside_fn, depth=4, candidates=None):
    """Sharp-indicator gradient energy over {x : inside_fn(x)}.

    Leaves are classified by their vertices, so features smaller than the
    finest leaf can be missed; keep depth commensurate with the geometry.
    """

    def classify(tri, world):
        flags = inside_fn(world.reshape(-1, 2)).reshape(world.shape[:2])
        if world.shape[1] == 1:
            return flags[:, 0].astype(int)
        codes = np.full(len(tri), -1, dtype=int)
        codes[flags.all(axis=1)] = 1
        codes[~flags.any(axis=1)] = 0
        return codes

    return _subdivide_energy(sol, classify, depth, candidates=candidates)


# ---------------------------------------------------------------------------
# three spheres


@dataclass(frozen=True)
class ThreeSpheresReport:
    center: tuple
    r1: float
    r2: float
    r3: float
    n1: float
    n2: float
    n3: float
    delta_hat: float


def boundary_clearance(mesh, center):
    """Distance from a point to the mesh boundary polyline."""
    center = np.asarray(center, dtype=float)
    e = mesh.boundary_edges
    a = mesh.nodes[e[:, 0]]
    b = mesh.nodes[e[:, 1]]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom[denom == 0] = 1.0
    t = np.clip(np.einsum("j,ij->i", center, ab) - np.einsum("ij,ij->i", a, ab), 0, None)
    t = np.clip(t / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return float(np.linalg.norm(proj - center, axis=1).min())


def three_spheres_probe(sol, center, r1, r2, r3, rho0=1.0,
                        theta_star=THETA_STAR_DEFAULT, margin=None,
                        width=None) -> ThreeSpheresReport:
    """Log-convexity exponent of gradient energies on concentric balls.

    delta_hat = log(N3/N2) / log(N3/N1) is the exponent that makes the
    three-ball inequality an equality with constant one; over a family of
    solutions its minimum is the empirical log-convexity exponent.
    """
    if not 0.0 < theta_star < THETA_STAR_MAX:
        raise ProbeError(f"theta_star must lie in (0, {THETA_STAR_MAX:.4f})")
    if not (0 < r1 < r2 < theta_star * r3):
        raise ProbeError(
            f"radii must satisfy r1 < r2 < theta_star * r3 "
            f"(= {theta_star * r3:.4g}); got {r1}, {r2}, {r3}")
    if margin is None:
        margin = sol.mesh.h_max
    clearance = boundary_clearance(sol.mesh, center)
    if clearance < r3 + margin:
        raise ProbeError(
            f"ball of radius {r3} at {tuple(center)} leaves the domain "
            f"(clearance {clearance:.4g} < r3 + margin {r3 + margin:.4g})")
    scale = 1.0 / rho0 ** 2   # n = 2 normalization of the L2 gradient norm
    n1 = scale * ball_energy(sol, center, r1, width=width, calibrated=True)
    n2 = scale * ball_energy(sol, center, r2, width=width, calibrated=True)
    n3 = scale * ball_energy(sol, center, r3, width=width, calibrated=True)
    if n3 <= 0.0:
        raise ProbeError("outer ball energy vanishes: trivial solution")
    if n1 <= 0.0:
        raise ProbeError("inner ball energy vanishes")
    delta_hat = math.log(n3 / n2) / math.log(n3 / n1) if n3 > n1 else 1.0
    return ThreeSpheresReport(tuple(np.asarray(center, dtype=float)),
                              float(r1), float(r2), float(r3),
                              n1, n2, n3, float(delta_hat))


# ---------------------------------------------------------------------------
# propagation of smallness


@dataclass(frozen=True)
class SmallnessReport:
    center: tuple
    rho: float
    ratio: float


@dataclass(frozen=True)
class SmallnessFit:
    amplitude: float      # A in log(1/R) ~ A (rho0/rho)^B
    exponent: float       # B
    r_squared: float


def _fit_loglog(rho, ratio, rho0):
    x = np.log(rho0 / np.asarray(rho))
    y = np.log(np.log(1.0 / np.asarray(ratio)))
    A = np.stack([np.ones_like(x), x], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = float(((y - pred) ** 2).sum())
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return SmallnessFit(float(np.exp(coef[0])), float(coef[1]), r2)


def smallness_probe(sol, domain: DomainSpec, rho_grid, center_grid,
                    margin_multiplier=MARGIN_MULTIPLIER_DEFAULT):
    """Local-to-global gradient energy ratios over a (center, rho) grid.

    Ratios use the raw smoothed ball quadrature, hence are monotone in rho
    at fixed center.  The worst (smallest) ratio per rho is fitted to the
    stretched-log form log(1/R) = A (rho0/rho)^B.
    """
    rho_grid = list(rho_grid)
    center_grid = [np.asarray(c, dtype=float) for c in center_grid]
    if not rho_grid or not center_grid:
        raise ProbeError("empty probe grids")
    total = sol.total_grad_energy()
    if total <= 0:
        raise ProbeError("zero total gradient energy")
    reports = []
    worst = {}
    for rho in rho_grid:
        for c in center_grid:
            if domain.boundary_distance(c[None, :])[0] <= margin_multiplier * rho:
                continue
            R = ball_energy(sol, c, rho) / total
            R = min(R, 1.0)
            reports.append(SmallnessReport(tuple(c), float(rho), float(R)))
            worst[rho] = min(worst.get(rho, 1.0), R)
    if not reports:
        raise ProbeError("no probe ball satisfies the margin condition")
    usable = {r: v for r, v in worst.items() if 0.0 < v < 1.0}
    if len(usable) >= 2:
        fit = _fit_loglog(list(usable.keys()), list(usable.values()), domain.rho0)
    else:
        fit = SmallnessFit(float("nan"), float("nan"), float("nan"))
    return reports, fit


def boundary_smallness_probe(sol, domain: DomainSpec, rho_grid, center_grid,
                             g_half_norm,
                             margin_multiplier=MARGIN_MULTIPLIER_DEFAULT):
    """Ball gradient energies measured against the boundary-data norm.

    Entries are integral_{B_rho} |grad u|^2 / |g|_{1/2}^2 (the n = 2 form);
    the margin uses the stricter (s+1) rho clearance.
    """
    if g_half_norm <= 0:
        raise ProbeError("boundary data norm must be positive")
    rows = []
    for rho in rho_grid:
        for c in center_grid:
            c = np.asarray(c, dtype=float)
            if domain.boundary_distance(c[None, :])[0] <= (margin_multiplier + 1) * rho:
                continue
            val = ball_energy(sol, c, rho) / g_half_norm ** 2
            rows.append(SmallnessReport(tuple(c), float(rho), float(val)))
    if not rows:
        raise ProbeError("no probe ball satisfies the margin condition")
    return rows


# ---------------------------------------------------------------------------
# energy confined between two obstacles


def energy_in_difference(sol, inner_curve: BoundaryCurve,
                         outer_curve: BoundaryCurve, rho0=1.0, depth=4):
    """Gradient energy of ``sol`` over (inside outer_curve) minus
    (inside inner_curve), the region swept between two obstacle boundaries.

    ``sol`` lives on the complement of the inner obstacle, so quadrature
    runs over its own mesh restricted by the indicator.
    """
    lo = outer_curve.samples.min(axis=0) - 2 * sol.mesh.h_max
    hi = outer_curve.samples.max(axis=0) + 2 * sol.mesh.h_max
    cent = sol.mesh.nodes[sol.mesh.triangles].mean(axis=1)
    cand = np.where((cent[:, 0] >= lo[0]) & (cent[:, 0] <= hi[0])
                    & (cent[:, 1] >= lo[1]) & (cent[:, 1] <= hi[1]))[0]
    if len(cand) == 0:
        return 0.0

    def inside(pts):
        return outer_curve.contains(pts) & ~inner_curve.contains(pts)

    return region_energy(sol, inside, depth=depth, candidates=cand) / rho0 ** 2


# ---------------------------------------------------------------------------
# sup interpolation constant


@dataclass(frozen=True)
class InterpolationReport:
    c_min: float
    sup_value: float
    term_mixed: float
    term_l2: float


def disk_quadrature(center, t, nr=32, ntheta=64):
    """Tensor quadrature on a disk: Gauss in the radial area variable,
    uniform in angle.  Returns (points (n, 2), weights (n,))."""
    xi, wxi = np.polynomial.legendre.leggauss(nr)
    xi = 0.5 * (xi + 1.0)
    wxi = 0.5 * wxi
    theta = 2.0 * np.pi * np.arange(ntheta) / ntheta
    wth = 2.0 * np.pi / ntheta
    r = t * np.sqrt(xi)
    pts = np.stack([
        center[0] + np.outer(r, np.cos(theta)).ravel(),
        center[1] + np.outer(r, np.sin(theta)).ravel()], axis=1)
    w = (t * t / 2.0) * np.outer(wxi, np.full(ntheta, wth)).ravel()
    return pts, w


def interpolation_probe(value_fn, grad_fn, center, t,
                        nr=32, ntheta=64) -> InterpolationReport:
    """Smallest constant making the sup-interpolation bound hold on B_t.

    For scalar or vector fields v the bound compares sup |v| against
    (integral v^2)^(1/4) |grad v|_sup^(1/2) + t^(-1) (integral v^2)^(1/2),
    the n = 2 exponents.  Vanishing fields are skipped by the caller.
    """
    center = np.asarray(center, dtype=float)
    pts, w = disk_quadrature(center, t, nr, ntheta)
    vals = np.asarray(value_fn(pts), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    sq = (vals ** 2).sum(axis=1)
    l2sq = float((w * sq).sum())
    sup = float(np.sqrt(sq.max()))
    grads = np.asarray(grad_fn(pts), dtype=float)
    gsup = float(np.sqrt((grads.reshape(len(pts), -1) ** 2).sum(axis=1).max()))
    if sup == 0.0:
        raise ProbeError("zero field: inequality is trivial")
    term1 = l2sq ** 0.25 * gsup ** 0.5
    term2 = l2sq ** 0.5 / t
    return InterpolationReport(sup / (term1 + term2), sup, term1, term2)


def solution_field(sol):
    """(value_fn, grad_fn) closures evaluating a discrete solution."""

    def value_fn(pts):
        return sol.space.eval_vector(sol.u, pts)

    def grad_fn(pts):
        tri_idx, ref = sol.space.locate(pts)
        if (tri_idx < 0).any():
            raise ProbeError("evaluation point outside the mesh")
        return sol.space.grad_at_ref(sol.u, tri_idx, ref)

    return value_fn, grad_fn
