"""Planar domain geometry: closed boundary curves, obstacle domains,
Hausdorff distance, outward offset (regularized) curves, cones and
ball chains.

Curves are stored as dense parametric samples with optional analytic
family metadata (circle / ellipse / radial cosine modes).  All values
are immutable after construction and every operation here is a pure
function, so concurrent evaluation is safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial import cKDTree


class GeometryError(ValueError):
    """Raised when a curve or domain violates a structural invariant."""


# ---------------------------------------------------------------------------
# point / segment primitives


def _cross2(a, b):
    """z-component of the 2D cross product, broadcasting over rows."""
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def point_segment_distance(points, a, b):
    """Distance from each row of ``points`` to the segment [a, b]."""
    points = np.atleast_2d(points)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def points_to_polyline_distance(points, verts, chunk=512):
    """Distance from each point to a polyline given by consecutive ``verts``.

    Exhaustive over all segments, vectorized in blocks to bound memory.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    a = verts[:-1]
    b = verts[1:]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom[denom == 0.0] = 1.0
    out = np.empty(len(points))
    for lo in range(0, len(points), chunk):
        p = points[lo:lo + chunk]
        ap = p[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("pij,ij->pi", ap, ab) / denom, 0.0, 1.0)
        proj = a[None, :, :] + t[:, :, None] * ab[None, :, :]
        d = np.linalg.norm(p[:, None, :] - proj, axis=2)
        out[lo:lo + chunk] = d.min(axis=1)
    return out


def segments_intersect(p1, p2, q1, q2, eps=1e-14):
    """Proper or touching intersection test for segments [p1,p2], [q1,q2]."""
    d1 = _cross2(q2 - q1, p1 - q1)
    d2 = _cross2(q2 - q1, p2 - q1)
    d3 = _cross2(p2 - p1, q1 - p1)
    d4 = _cross2(p2 - p1, q2 - p1)
    if ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)) and \
       ((d3 > eps and d4 < -eps) or (d3 < -eps and d4 > eps)):
        return True
    return False


def points_in_polygon(points, verts):
    """Winding-number containment test (boundary points unreliable).

    ``verts`` is a closed polygon with verts[0] == verts[-1].
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = points[:, 0], points[:, 1]
    xa, ya = verts[:-1, 0], verts[:-1, 1]
    xb, yb = verts[1:, 0], verts[1:, 1]
    wind = np.zeros(len(points), dtype=int)
    for i in range(len(xa)):
        upward = (ya[i] <= y) & (yb[i] > y)
        downward = (ya[i] > y) & (yb[i] <= y)
        if not (upward.any() or downward.any()):
            continue
        cross = (xb[i] - xa[i]) * (y - ya[i]) - (x - xa[i]) * (yb[i] - ya[i])
        wind[upward & (cross > 0)] += 1
        wind[downward & (cross < 0)] -= 1
    return wind != 0


# ---------------------------------------------------------------------------
# boundary curves


_FAMILIES = ("circle", "ellipse", "radial", "polygon")


def _family_point(family, params, t):
    t = np.asarray(t, dtype=float)
    if family == "circle":
        c = np.asarray(params["center"], dtype=float)
        r = params["radius"]
        return np.stack([c[0] + r * np.cos(t), c[1] + r * np.sin(t)], axis=-1)
    if family == "ellipse":
        c = np.asarray(params["center"], dtype=float)
        return np.stack([c[0] + params["a"] * np.cos(t),
                         c[1] + params["b"] * np.sin(t)], axis=-1)
    if family == "radial":
        c = np.asarray(params["center"], dtype=float)
        r = params["r0"] * np.ones_like(t)
        for k, amp in params.get("modes", []):
            r = r + params["r0"] * amp * np.cos(k * t + params.get("phase", 0.0))
        return np.stack([c[0] + r * np.cos(t), c[1] + r * np.sin(t)], axis=-1)
    raise GeometryError(f"unknown analytic family {family!r}")


@dataclass(frozen=True, eq=False)
class BoundaryCurve:
    """Closed, simple, positively oriented planar curve.

    Stored as dense parameter samples ``params`` / ``samples`` with
    ``samples[0] == samples[-1]``; analytic families keep their metadata so
    points can be re-evaluated exactly (mesh projection relies on this).
    """

    samples: np.ndarray            # (n+1, 2), closed
    params: np.ndarray             # (n+1,), increasing parameter values
    family: str | None = None
    family_params: dict = field(default_factory=dict)
    arclength: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        params = np.asarray(self.params, dtype=float)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "params", params)
        if samples.ndim != 2 or samples.shape[1] != 2 or len(samples) < 4:
            raise GeometryError("curve needs at least 3 distinct samples")
        diam = self.diameter()
        if diam <= 0:
            raise GeometryError("degenerate curve: zero diameter")
        if np.linalg.norm(samples[0] - samples[-1]) > 1e-12 * diam:
            raise GeometryError("curve is not closed")
        seg = np.diff(samples, axis=0)
        lens = np.hypot(seg[:, 0], seg[:, 1])
        if (lens <= 0).any():
            raise GeometryError("curve has repeated consecutive samples")
        arc = np.concatenate([[0.0], np.cumsum(lens)])
        object.__setattr__(self, "arclength", arc)
        if self.signed_area() <= 0:
            raise GeometryError("curve must be positively oriented (CCW)")
        if not self.is_simple():
            raise GeometryError("curve is self-intersecting")
        self.samples.setflags(write=False)
        self.params.setflags(write=False)
        self.arclength.setflags(write=False)

    # -- constructors ------------------------------------------------------

    @staticmethod
    def from_family(family, n_samples=1024, t_range=(0.0, 2.0 * np.pi), **family_params):
        t = np.linspace(t_range[0], t_range[1], n_samples + 1)
        pts = _family_point(family, family_params, t)
        pts[-1] = pts[0]
        return BoundaryCurve(pts, t, family=family, family_params=family_params)

    @staticmethod
    def circle(center=(0.0, 0.0), radius=1.0, n_samples=1024):
        return BoundaryCurve.from_family("circle", n_samples,
                                         center=tuple(center), radius=float(radius))

    @staticmethod
    def ellipse(center=(0.0, 0.0), a=1.0, b=0.5, n_samples=1024):
        return BoundaryCurve.from_family("ellipse", n_samples,
                                         center=tuple(center), a=float(a), b=float(b))

    @staticmethod
    def radial(center=(0.0, 0.0), r0=1.0, modes=((3, 0.1),), phase=0.0, n_samples=1024):
        return BoundaryCurve.from_family("radial", n_samples, center=tuple(center),
                                         r0=float(r0), modes=tuple(modes), phase=float(phase))

    @staticmethod
    def from_points(points):
        """Closed polygonal curve through the given vertex list (CCW)."""
        pts = np.asarray(points, dtype=float)
        if np.linalg.norm(pts[0] - pts[-1]) > 0:
            pts = np.vstack([pts, pts[0]])
        t = np.arange(len(pts), dtype=float)
        return BoundaryCurve(pts, t, family=None)

    # -- basic measures ----------------------------------------------------

    def diameter(self):
        lo = self.samples.min(axis=0)
        hi = self.samples.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def signed_area(self):
        x, y = self.samples[:, 0], self.samples[:, 1]
        return 0.5 * float(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))

    def total_arclength(self):
        return float(self.arclength[-1])

    def is_simple(self):
        """Segment-segment self-intersection test over the samples.

        Candidate pairs are pruned with a KD-tree on segment midpoints so
        dense smooth curves stay cheap.
        """
        v = self.samples
        n = len(v) - 1
        mids = 0.5 * (v[:-1] + v[1:])
        seg = v[1:] - v[:-1]
        maxlen = np.linalg.norm(seg, axis=1).max()
        tree = cKDTree(mids)
        pairs = tree.query_pairs(r=1.01 * maxlen, output_type="ndarray")
        for i, j in pairs:
            if abs(i - j) <= 1 or (i == 0 and j == n - 1):
                continue
            if segments_intersect(v[i], v[i + 1], v[j], v[j + 1]):
                return False
        return True

    # -- evaluation --------------------------------------------------------

    def point(self, t):
        """Point(s) on the curve at parameter ``t`` (analytic when possible)."""
        if self.family is not None:
            return _family_point(self.family, self.family_params, t)
        t = np.asarray(t, dtype=float)
        return np.stack([np.interp(t, self.params, self.samples[:, 0]),
                         np.interp(t, self.params, self.samples[:, 1])], axis=-1)

    def tangent(self, t):
        """Unit tangent via central differencing of ``point`` (analytic families)
        or of the sample polyline."""
        t = np.asarray(t, dtype=float)
        dt = 1e-6 * (self.params[-1] - self.params[0])
        p_plus = self.point(t + dt)
        p_minus = self.point(t - dt)
        d = p_plus - p_minus
        norms = np.linalg.norm(d, axis=-1, keepdims=True)
        return d / norms

    def outward_normal(self, t):
        """Outward unit normal; CCW orientation puts it at tangent rotated -90 deg."""
        tg = self.tangent(t)
        return np.stack([tg[..., 1], -tg[..., 0]], axis=-1)

    def curvature_samples(self):
        """Discrete curvature at each sample (periodic central differences)."""
        v = self.samples[:-1]
        nxt = np.roll(v, -1, axis=0)
        prv = np.roll(v, 1, axis=0)
        d1 = (nxt - prv) / 2.0
        d2 = nxt - 2 * v + prv
        num = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        den = np.linalg.norm(d1, axis=1) ** 3
        den[den == 0] = np.inf
        return num / den

    def max_curvature(self):
        return float(self.curvature_samples().max())

    def project(self, point):
        """Parameter, foot point and distance of the closest curve point.

        Polyline projection seeded by the nearest sample; analytic families
        refine the parameter with a bounded 1D minimization so foot points
        land on the true curve (needed by mesh boundary projection).
        """
        point = np.asarray(point, dtype=float)
        d2 = np.einsum("ij,ij->i", self.samples - point, self.samples - point)
        k = int(np.argmin(d2))
        if self.family is not None:
            t0 = self.params[max(k - 2, 0)]
            t1 = self.params[min(k + 2, len(self.params) - 1)]
            res = minimize_scalar(
                lambda t: float(np.sum((self.point(t) - point) ** 2)),
                bounds=(t0, t1), method="bounded",
                options={"xatol": 1e-15})
            t = float(res.x)
            foot = self.point(t)
            return t, foot, float(np.linalg.norm(foot - point))
        best = (self.params[k], self.samples[k], math.sqrt(d2[k]))
        for i in (k - 1, k):
            if i < 0 or i + 1 >= len(self.samples):
                continue
            a, b = self.samples[i], self.samples[i + 1]
            ab = b - a
            denom = float(ab @ ab)
            s = np.clip(float((point - a) @ ab) / denom, 0.0, 1.0)
            foot = a + s * ab
            dist = float(np.linalg.norm(foot - point))
            if dist < best[2]:
                t = self.params[i] + s * (self.params[i + 1] - self.params[i])
                best = (t, foot, dist)
        return best

    def distance_to(self, points):
        return points_to_polyline_distance(points, self.samples)

    def contains(self, points):
        return points_in_polygon(points, self.samples)

    def resample(self, n_samples):
        """Uniform-parameter resampling with the same family metadata."""
        t = np.linspace(self.params[0], self.params[-1], n_samples + 1)
        pts = self.point(t)
        pts[-1] = pts[0]
        return BoundaryCurve(pts, t, family=self.family, family_params=self.family_params)

    def transformed(self, rotation=0.0, translation=(0.0, 0.0), scale=1.0):
        """Rigid motion plus uniform scaling applied to the sample set."""
        R = np.array([[np.cos(rotation), -np.sin(rotation)],
                      [np.sin(rotation), np.cos(rotation)]])
        pts = scale * (self.samples @ R.T) + np.asarray(translation, dtype=float)
        return BoundaryCurve(pts, self.params.copy(), family=None)


def save_curve(path, curve):
    """Write a curve as plain-text ``t x y`` lines."""
    with open(path, "w") as fh:
        for t, (x, y) in zip(curve.params, curve.samples):
            fh.write(f"{t:.17g} {x:.17g} {y:.17g}\n")


def load_curve(path):
    data = np.loadtxt(path)
    if data.ndim != 2 or data.shape[1] != 3:
        raise GeometryError(f"{path}: expected 't x y' rows")
    return BoundaryCurve(data[:, 1:3], data[:, 0])


# ---------------------------------------------------------------------------
# cones


@dataclass(frozen=True, eq=False)
class Cone:
    """Open cone with apex ``vertex``, axis ``direction`` and given half angle."""

    vertex: np.ndarray
    direction: np.ndarray
    half_angle: float

    def __post_init__(self):
        v = np.asarray(self.vertex, dtype=float)
        d = np.asarray(self.direction, dtype=float)
        object.__setattr__(self, "vertex", v)
        object.__setattr__(self, "direction", d)
        if abs(np.linalg.norm(d) - 1.0) > 1e-14:
            raise GeometryError("cone direction must be a unit vector")
        if not 0.0 < self.half_angle < np.pi / 2:
            raise GeometryError("cone half angle must lie in (0, pi/2)")

    def contains(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        rel = points - self.vertex
        norms = np.linalg.norm(rel, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            cosang = (rel @ self.direction) / norms
        inside = cosang > np.cos(self.half_angle)
        inside[norms == 0] = False
        return inside


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True, eq=False)
class DomainSpec:
    """Flow container with an optional interior obstacle.

    ``gamma_span`` marks the accessible arc on the outer curve as a closed
    parameter interval; ``p0`` anchors the measurement chart.  The scalars
    ``rho0``, ``m0``, ``m1`` are the configuration's declared regularity /
    size constants, validated by :func:`validate_domain`.
    """

    outer: BoundaryCurve
    obstacle: BoundaryCurve | None
    gamma_span: tuple
    p0: np.ndarray
    rho0: float
    m0: float
    m1: float
    alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float))
        if self.rho0 <= 0 or self.m0 <= 0 or self.m1 <= 0:
            raise GeometryError("rho0, m0, m1 must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise GeometryError("alpha must lie in (0, 1]")
        if self.gamma_span[1] <= self.gamma_span[0]:
            raise GeometryError("gamma_span must be a nontrivial interval")

    def in_gamma(self, t):
        t = np.asarray(t, dtype=float)
        lo, hi = self.gamma_span
        period = self.outer.params[-1] - self.outer.params[0]
        tt = (t - lo) % period
        return tt <= (hi - lo) + 1e-12

    def area(self):
        a = self.outer.signed_area()
        if self.obstacle is not None:
            a -= self.obstacle.signed_area()
        return a

    def contains(self, points):
        """True for points inside the outer curve and outside the obstacle."""
        inside = self.outer.contains(points)
        if self.obstacle is not None:
            inside &= ~self.obstacle.contains(points)
        return inside

    def boundary_distance(self, points):
        d = self.outer.distance_to(points)
        if self.obstacle is not None:
            d = np.minimum(d, self.obstacle.distance_to(points))
        return d


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    margin: float
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def table(self):
        lines = [f"{'check':28s} {'status':6s} {'margin':>12s}  detail"]
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            lines.append(f"{c.name:28s} {status:6s} {c.margin:12.5g}  {c.detail}")
        return "\n".join(lines)


def _curve_curve_distance(a: BoundaryCurve, b: BoundaryCurve):
    """min distance between two polylines (dense sample-to-segment, both ways)."""
    d1 = points_to_polyline_distance(a.samples, b.samples).min()
    d2 = points_to_polyline_distance(b.samples, a.samples).min()
    return float(min(d1, d2))


def validate_domain(spec: DomainSpec) -> ValidationReport:
    """Check the configuration hypotheses and report margins.

    Each a-priori requirement (connected boundaries, curvature class,
    area bound, accessible-arc cover, obstacle containment/separation)
    becomes one named pass/fail row with its measured slack.
    """
    checks = []
    outer = spec.outer

    checks.append(CheckResult(
        "outer_boundary_connected", True, 0.0, "single closed simple curve"))

    # discrete curvature carries an O(dt^2) sampling bias, hence the slack
    kappa_bound = spec.m0 / spec.rho0
    kappa_tol = 1 + 1e-4
    kmax = outer.max_curvature()
    checks.append(CheckResult(
        "outer_curvature_class", kmax <= kappa_bound * kappa_tol,
        kappa_bound - kmax,
        f"max curvature {kmax:.4g} vs M0/rho0 = {kappa_bound:.4g}"))

    area = spec.area()
    area_bound = spec.m1 * spec.rho0 ** 2
    checks.append(CheckResult(
        "area_bound", area <= area_bound,
        area_bound - area, f"|domain| = {area:.4g} vs M1 rho0^2 = {area_bound:.4g}"))

    # the rho0-ball around p0 must only meet the accessible arc
    t0, foot, dist_p0 = outer.project(spec.p0)
    on_gamma = bool(spec.in_gamma(t0))
    outside = ~spec.in_gamma(outer.params[:-1])
    if outside.any():
        d_out = np.linalg.norm(outer.samples[:-1][outside] - spec.p0, axis=1).min()
    else:
        d_out = np.inf
    cover_ok = on_gamma and dist_p0 <= 1e-8 * outer.diameter() and d_out > spec.rho0
    checks.append(CheckResult(
        "accessible_arc_cover", cover_ok, d_out - spec.rho0,
        f"anchor on arc: {on_gamma}, nearest non-arc boundary point at {d_out:.4g}"))

    if spec.obstacle is None:
        checks.append(CheckResult("obstacle_absent", True, 0.0, "no obstacle configured"))
        return ValidationReport(tuple(checks))

    obst = spec.obstacle
    checks.append(CheckResult(
        "obstacle_boundary_connected", True, 0.0, "single closed simple curve"))

    inside = outer.contains(obst.samples[:-1])
    contained = bool(inside.all())
    checks.append(CheckResult(
        "obstacle_contained", contained, float(inside.mean()) - 1.0,
        "all obstacle samples inside the outer curve" if contained
        else "obstacle reaches or crosses the outer boundary"))

    komax = obst.max_curvature()
    checks.append(CheckResult(
        "obstacle_curvature_class", komax <= kappa_bound * kappa_tol,
        kappa_bound - komax,
        f"max curvature {komax:.4g} vs M0/rho0 = {kappa_bound:.4g}"))

    if contained:
        sep = _curve_curve_distance(outer, obst)
    else:
        sep = 0.0
    checks.append(CheckResult(
        "obstacle_separation", sep >= spec.rho0, sep - spec.rho0,
        f"dist(obstacle, outer) = {sep:.4g} vs rho0 = {spec.rho0:.4g}"))

    checks.append(CheckResult(
        "complement_connected", contained, 0.0,
        "one obstacle strictly inside keeps the complement connected"))

    return ValidationReport(tuple(checks))


# ---------------------------------------------------------------------------
# Hausdorff distance


def directed_hausdorff_polyline(a: BoundaryCurve, b: BoundaryCurve, n_samples):
    """sup over a-samples of the distance to the b polyline."""
    pts = a.resample(n_samples).samples[:-1] if n_samples != len(a.samples) - 1 \
        else a.samples[:-1]
    return float(points_to_polyline_distance(pts, b.samples).max())


@dataclass(frozen=True)
class HausdorffResult:
    value: float
    directed_ab: float
    directed_ba: float


def hausdorff_distance(a: BoundaryCurve, b: BoundaryCurve, n_samples=4096):
    """Hausdorff distance between two closed curves by dense sampling.

    Each curve is resampled to ``n_samples`` points and measured against
    the other curve's segment polyline; the result is symmetric by
    construction (max of the two directed values).
    """
    if n_samples < 64:
        raise GeometryError("hausdorff_distance needs n_samples >= 64")
    d_ab = directed_hausdorff_polyline(a, b, n_samples)
    d_ba = directed_hausdorff_polyline(b, a, n_samples)
    return HausdorffResult(max(d_ab, d_ba), d_ab, d_ba)


# ---------------------------------------------------------------------------
# offset (regularized) boundaries


@dataclass(frozen=True, eq=False)
class RegularizedBoundary:
    base: BoundaryCurve
    h: float
    offset_curve: BoundaryCurve
    dist_min: float
    dist_max: float

    @property
    def gamma0(self):
        return self.dist_min / self.h if self.h > 0 else float("nan")

    @property
    def gamma1(self):
        return self.dist_max / self.h if self.h > 0 else float("nan")

    @property
    def area_growth(self):
        return self.offset_curve.signed_area() - self.base.signed_area()


def estimate_reach(curve: BoundaryCurve):
    """Conservative offset budget: min(1/kappa_max, half min self distance), x0.8.

    Self distance is measured between sample points whose indices are far
    apart along the curve, which catches necks of non-convex shapes.
    """
    kmax = curve.max_curvature()
    r_curv = 1.0 / kmax if kmax > 0 else np.inf
    v = curve.samples[:-1]
    n = len(v)
    tree = cKDTree(v)
    step = max(1, n // 256)
    probe = v[::step]
    idx_probe = np.arange(0, n, step)
    k = min(32, n)
    dists, idxs = tree.query(probe, k=k)
    skip = max(4, n // 16)
    r_self = np.inf
    for row, i in enumerate(idx_probe):
        sep = np.minimum(np.abs(idxs[row] - i), n - np.abs(idxs[row] - i))
        far = sep > skip
        if far.any():
            r_self = min(r_self, dists[row][far].min())
    return 0.8 * min(r_curv, r_self / 2.0)


def offset_boundary(base: BoundaryCurve, h: float) -> RegularizedBoundary:
    """Outward normal offset of a closed curve at distance ``h``.

    The offset is taken pointwise along discrete outward normals, guarded
    by the reach estimate and a self-intersection test; the recorded
    ``dist_min``/``dist_max`` come from projecting every offset sample back
    onto the base polyline.
    """
    if h < 0:
        raise GeometryError("offset distance must be nonnegative")
    if h == 0:
        return RegularizedBoundary(base, 0.0, base, 0.0, 0.0)
    reach = estimate_reach(base)
    if h >= reach:
        raise GeometryError(
            f"offset {h:.4g} exceeds the estimated reach; max admissible h ~ {reach:.4g}")
    t = base.params
    normals = base.outward_normal(t)
    pts = base.point(t) + h * normals
    pts[-1] = pts[0]
    try:
        offset_curve = BoundaryCurve(pts, t.copy())
    except GeometryError as exc:
        raise GeometryError(
            f"offset {h:.4g} self-intersects; max admissible h ~ {reach:.4g}") from exc
    d = points_to_polyline_distance(offset_curve.samples[:-1], base.samples)
    return RegularizedBoundary(base, float(h), offset_curve,
                               float(d.min()), float(d.max()))


def offset_nesting_holds(reg1: RegularizedBoundary, reg2: RegularizedBoundary):
    """True when the smaller-offset curve lies inside the larger-offset curve."""
    inner, outer = (reg1, reg2) if reg1.h <= reg2.h else (reg2, reg1)
    return bool(outer.offset_curve.contains(inner.offset_curve.samples[:-1]).all())


def normal_deviation(reg: RegularizedBoundary):
    """max |normal(offset sample) - normal(base foot point)| over the offset.

    This is the measured counterpart of the offset-family normal alignment
    property; the caller turns it into a gamma coefficient.
    """
    base, off = reg.base, reg.offset_curve
    t = off.params[:-1]
    n_off = off.outward_normal(t)
    devs = np.empty(len(t))
    for i, p in enumerate(off.samples[:-1]):
        tb, foot, _ = base.project(p)
        n_base = base.outward_normal(tb)
        devs[i] = np.linalg.norm(n_off[i] - n_base)
    return float(devs.max())


# ---------------------------------------------------------------------------
# ball chains


@dataclass(frozen=True, eq=False)
class BallChain:
    centers: np.ndarray
    radius: float
    spacing: float

    @property
    def count(self):
        return len(self.centers)

    def max_count_bound(self, m1, rho0):
        """Area-packing bound on the chain length for disjoint balls."""
        return m1 * rho0 ** 2 / (np.pi * self.radius ** 2)


def build_ball_chain(path, radius, domain: DomainSpec, margin,
                     spacing_factor=1.0) -> BallChain:
    """Chain of equal balls marching along ``path`` at spacing 2*radius*k.

    Centers are consecutive points of the polyline at Euclidean distance
    ``spacing`` from the previous center (crossings resolved by linear
    interpolation).  Every ball must stay inside the domain eroded by
    ``margin``; the first offending arclength is reported otherwise.
    """
    path = np.atleast_2d(np.asarray(path, dtype=float))
    if len(path) < 1:
        raise GeometryError("empty path")
    spacing = 2.0 * radius * spacing_factor
    seg_len = np.linalg.norm(np.diff(path, axis=0), axis=1) if len(path) > 1 else np.zeros(0)
    seg_acc = np.concatenate([[0.0], np.cumsum(seg_len)])
    centers = [path[0]]
    arcs = [0.0]
    current = path[0]
    i = 0
    while i < len(path) - 1:
        a, b = path[i], path[i + 1]
        if np.linalg.norm(b - current) < spacing - 1e-14:
            i += 1
            continue
        # crossing of |x - current| = spacing within [a, b]
        lo, hi = 0.0, 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if np.linalg.norm(a + mid * (b - a) - current) < spacing:
                lo = mid
            else:
                hi = mid
        current = a + hi * (b - a)
        centers.append(current)
        arcs.append(seg_acc[i] + hi * seg_len[i])
        # do not advance i: several steps may land on one long segment
        if np.linalg.norm(b - current) < spacing:
            i += 1
    centers = np.array(centers)
    clearance = radius + margin
    dists = domain.boundary_distance(centers)
    inside = domain.contains(centers)
    bad = (~inside) | (dists < clearance - 1e-12)
    if bad.any():
        k = int(np.argmax(bad))
        raise GeometryError(
            f"ball {k} (center {centers[k]}, arclength {arcs[k]:.4g}) leaves the "
            f"margin-eroded domain")
    return BallChain(centers, float(radius), float(spacing))
