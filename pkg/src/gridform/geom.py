"""
NURBS kernel: basis functions, curve and surface evaluation, derivatives,
curvature/tangent extraction, sampling, lofting and grid extraction.

Conventions
-----------
Knot spans are right-continuous at interior knots; the last span is closed at
the upper end of the domain so that ``u == b`` evaluates the final control
point of a clamped curve.  Surfaces index their control net as
``points[i, j]`` with ``i`` running along ``u`` (degree ``degree_u``) and
``j`` along ``v`` (degree ``degree_v``).
"""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy.spatial import cKDTree

SINGULAR_TOL = 1e-9
DEGENERATE_TOL = 1e-9


class GeometryError(ValueError):
    """Base class for invalid or unevaluable geometry."""


class DomainError(GeometryError):
    pass


class CompatibilityError(GeometryError):
    pass


class DegeneracyError(GeometryError):
    pass


class SingularParametrizationError(GeometryError):
    def __init__(self, u, speed):
        super().__init__(f"vanishing first derivative |C'|={speed:.3e} at u={u!r}")
        self.u = u
        self.speed = speed


# ---------------------------------------------------------------------------
# knot vectors and basis functions
# ---------------------------------------------------------------------------

def clamped_knots(n_ctrl: int, degree: int, a: float = 0.0, b: float = 1.0) -> np.ndarray:
    """Uniform clamped knot vector for ``n_ctrl`` control points on [a, b]."""
    if n_ctrl < degree + 1:
        raise GeometryError(f"need at least {degree + 1} control points for degree {degree}")
    n_inner = n_ctrl - degree - 1
    inner = [a + (b - a) * k / (n_inner + 1) for k in range(1, n_inner + 1)]
    return np.array([a] * (degree + 1) + inner + [b] * (degree + 1), dtype=float)


def check_knots(knots, degree: int, n_ctrl: int | None = None) -> np.ndarray:
    knots = np.asarray(knots, dtype=float)
    if knots.ndim != 1:
        raise GeometryError("knot vector must be one-dimensional")
    if degree < 1:
        raise GeometryError(f"degree must be >= 1, got {degree}")
    if not np.all(np.isfinite(knots)):
        raise GeometryError("knot vector contains non-finite values")
    if np.any(np.diff(knots) < 0):
        raise GeometryError("knot vector must be non-decreasing")
    if n_ctrl is not None and len(knots) != n_ctrl + degree + 1:
        raise GeometryError(
            f"len(knots)={len(knots)} but {n_ctrl} control points of degree {degree} "
            f"need {n_ctrl + degree + 1}")
    if len(knots) < 2 * (degree + 1):
        raise GeometryError("knot vector too short for degree")
    if knots[degree] >= knots[len(knots) - degree - 1]:
        raise GeometryError("knot vector has an empty domain")
    return knots


def knot_domain(knots, degree: int) -> tuple[float, float]:
    return float(knots[degree]), float(knots[len(knots) - degree - 1])


def _check_param(u, knots, degree):
    a, b = knot_domain(knots, degree)
    u = float(u)
    tol = 1e-12 * max(1.0, b - a)
    if not (a - tol <= u <= b + tol):
        raise DomainError(f"parameter {u!r} outside domain [{a!r}, {b!r}]")
    return min(max(u, a), b)


def find_span(u: float, degree: int, knots) -> int:
    n = len(knots) - degree - 2  # index of the last control point
    span = bisect_right(knots, u) - 1
    return min(max(span, degree), n)


def _basis_ders(span: int, u: float, p: int, knots, n_ders: int) -> np.ndarray:
    """Nonzero basis values and derivatives, shape (n_ders + 1, p + 1)."""
    kn = knots.tolist() if isinstance(knots, np.ndarray) else list(knots)
    ndu = [[0.0] * (p + 1) for _ in range(p + 1)]
    left = [0.0] * (p + 1)
    right = [0.0] * (p + 1)
    ndu[0][0] = 1.0
    for j in range(1, p + 1):
        left[j] = u - kn[span + 1 - j]
        right[j] = kn[span + j] - u
        saved = 0.0
        for r in range(j):
            ndu[j][r] = right[r + 1] + left[j - r]
            temp = ndu[r][j - 1] / ndu[j][r]
            ndu[r][j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j][j] = saved

    ders = [[0.0] * (p + 1) for _ in range(n_ders + 1)]
    ders[0] = [ndu[r][p] for r in range(p + 1)]
    for r in range(p + 1):
        s1, s2 = 0, 1
        a = [[0.0] * (p + 1), [0.0] * (p + 1)]
        a[0][0] = 1.0
        for k in range(1, n_ders + 1):
            d = 0.0
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk]
                d = a[s2][0] * ndu[rk][pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j]
                d += a[s2][j] * ndu[rk + j][pk]
            if r <= pk:
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r]
                d += a[s2][k] * ndu[r][pk]
            ders[k][r] = d
            s1, s2 = s2, s1
    out = np.array(ders)
    factor = float(p)
    for k in range(1, n_ders + 1):
        out[k] *= factor
        factor *= p - k
    return out


def basis_functions(u: float, degree: int, knots) -> list[tuple[int, float]]:
    """The ``degree + 1`` basis functions that may be nonzero at ``u``.

    Returns ``(index, value)`` pairs; values lie in [0, 1] and sum to one.
    Raises :class:`DomainError` when ``u`` is outside ``[knots[p], knots[-p-1]]``.
    """
    knots = np.asarray(knots, dtype=float)
    u = _check_param(u, knots, degree)
    span = find_span(u, degree, knots)
    vals = _basis_ders(span, u, degree, knots, 0)[0]
    return [(span - degree + r, float(vals[r])) for r in range(degree + 1)]


def collocation_matrix(params, degree: int, knots) -> np.ndarray:
    knots = np.asarray(knots, dtype=float)
    n_ctrl = len(knots) - degree - 1
    mat = np.zeros((len(params), n_ctrl))
    for row, u in enumerate(params):
        for i, val in basis_functions(u, degree, knots):
            mat[row, i] = val
    return mat


def basis_matrix(params, degree: int, knots, n_ders: int = 0) -> np.ndarray:
    """Dense basis values/derivatives at many parameters, shape
    ``(n_ders + 1, len(params), n_ctrl)``."""
    knots = np.asarray(knots, dtype=float)
    n_ctrl = len(knots) - degree - 1
    out = np.zeros((n_ders + 1, len(params), n_ctrl))
    for row, u in enumerate(params):
        u = _check_param(u, knots, degree)
        span = find_span(u, degree, knots)
        out[:, row, span - degree:span + 1] = _basis_ders(span, u, degree, knots, n_ders)
    return out


def greville(knots, degree: int) -> np.ndarray:
    knots = np.asarray(knots, dtype=float)
    n_ctrl = len(knots) - degree - 1
    return np.array([knots[i + 1:i + degree + 1].mean() for i in range(n_ctrl)])


def averaged_knots(params, degree: int) -> np.ndarray:
    """Clamped knot vector by averaging interpolation parameters."""
    params = np.asarray(params, dtype=float)
    m = len(params)
    inner = [params[j:j + degree].mean() for j in range(1, m - degree)]
    return np.array([params[0]] * (degree + 1) + inner + [params[-1]] * (degree + 1))


def interpolate(params, values, degree: int, knots=None) -> tuple[np.ndarray, np.ndarray]:
    """Control values of the degree-``degree`` spline through ``values`` at ``params``.

    ``values`` has shape (m, ...) and the knot vector, when not supplied, is
    built by averaging.  Returns ``(control_values, knots)``.
    """
    params = np.asarray(params, dtype=float)
    values = np.asarray(values, dtype=float)
    if knots is None:
        knots = averaged_knots(params, degree)
    knots = check_knots(knots, degree, len(params))
    mat = collocation_matrix(params, degree, knots)
    ctrl = np.linalg.solve(mat, values.reshape(len(params), -1))
    return ctrl.reshape(values.shape), knots


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------

def _frozen(arr, dtype=float):
    arr = np.array(arr, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class NurbsCurve:
    degree: int
    points: np.ndarray
    weights: np.ndarray
    knots: np.ndarray

    def __post_init__(self):
        pts = _frozen(self.points)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise GeometryError(f"control points must have shape (n, 3), got {pts.shape}")
        w = _frozen(self.weights)
        if w.shape != (len(pts),):
            raise GeometryError("one weight per control point required")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(w)):
            raise GeometryError("non-finite control data")
        if np.any(w <= 0):
            raise GeometryError("weights must be positive")
        knots = check_knots(self.knots, int(self.degree), len(pts))
        object.__setattr__(self, "degree", int(self.degree))
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "knots", _frozen(knots))

    @classmethod
    def clamped(cls, points, degree: int = 3, weights=None) -> "NurbsCurve":
        points = np.asarray(points, dtype=float)
        if weights is None:
            weights = np.ones(len(points))
        return cls(degree, points, weights, clamped_knots(len(points), degree))

    @property
    def n_ctrl(self) -> int:
        return len(self.points)

    @property
    def domain(self) -> tuple[float, float]:
        return knot_domain(self.knots, self.degree)

    def replace(self, *, points=None, weights=None) -> "NurbsCurve":
        return NurbsCurve(self.degree,
                          self.points if points is None else points,
                          self.weights if weights is None else weights,
                          self.knots)

    def to_dict(self) -> dict:
        return {"degree": self.degree,
                "knots": self.knots.tolist(),
                "points": self.points.tolist(),
                "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NurbsCurve":
        try:
            return cls(int(d["degree"]), d["points"], d["weights"], d["knots"])
        except (KeyError, TypeError) as exc:
            raise GeometryError(f"malformed curve record: {exc!r}") from None


def _curve_homogeneous_ders(curve: NurbsCurve, u: float, n_ders: int):
    u = _check_param(u, curve.knots, curve.degree)
    p = curve.degree
    span = find_span(u, p, curve.knots)
    nd = _basis_ders(span, u, p, curve.knots, n_ders)
    sl = slice(span - p, span + 1)
    w = curve.weights[sl]
    wp = curve.points[sl] * w[:, None]
    return nd @ wp, nd @ w


def curve_point(curve: NurbsCurve, u: float) -> np.ndarray:
    aders, wders = _curve_homogeneous_ders(curve, u, 0)
    return aders[0] / wders[0]


def _rational_ders(aders, wders):
    out = [aders[0] / wders[0]]
    for k in range(1, len(aders)):
        v = aders[k].copy()
        for i in range(1, k + 1):
            v -= math.comb(k, i) * wders[i] * out[k - i]
        out.append(v / wders[0])
    return out


def curve_derivatives(curve: NurbsCurve, u: float, order: int = 1) -> np.ndarray:
    """First (and second) parametric derivatives, shape ``(order, 3)``."""
    if order not in (1, 2):
        raise ValueError(f"unsupported derivative order {order}; only 1 and 2 are available")
    ders = _rational_ders(*_curve_homogeneous_ders(curve, u, order))
    return np.array(ders[1:])


def curvature_and_tangent(curve: NurbsCurve, u: float) -> tuple[float, np.ndarray]:
    d1, d2 = curve_derivatives(curve, u, 2)
    speed = float(np.linalg.norm(d1))
    if speed < SINGULAR_TOL:
        raise SingularParametrizationError(u, speed)
    kappa = float(np.linalg.norm(np.cross(d1, d2))) / speed ** 3
    return kappa, d1 / speed


def curve_ders_many(curve: NurbsCurve, params, n_ders: int = 2) -> np.ndarray:
    """Points and derivatives at many parameters, shape ``(len(params), n_ders + 1, 3)``."""
    B = basis_matrix(params, curve.degree, curve.knots, n_ders)
    aders = B @ (curve.points * curve.weights[:, None])     # (k, m, 3)
    wders = B @ curve.weights                                 # (k, m)
    out = [aders[0] / wders[0][:, None]]
    for k in range(1, n_ders + 1):
        v = aders[k].copy()
        for i in range(1, k + 1):
            v -= math.comb(k, i) * wders[i][:, None] * out[k - i]
        out.append(v / wders[0][:, None])
    return np.stack(out, axis=1)


def curvatures_and_tangents(curve: NurbsCurve, params):
    """Vectorized :func:`curvature_and_tangent`; returns ``(points, kappa, tangents)``."""
    params = np.asarray(params, dtype=float)
    ders = curve_ders_many(curve, params, 2)
    d1, d2 = ders[:, 1], ders[:, 2]
    speed = np.linalg.norm(d1, axis=1)
    bad = np.flatnonzero(speed < SINGULAR_TOL)
    if len(bad):
        raise SingularParametrizationError(float(params[bad[0]]), float(speed[bad[0]]))
    kappa = np.linalg.norm(np.cross(d1, d2), axis=1) / speed ** 3
    return ders[:, 0], kappa, d1 / speed[:, None]


class CurveSample(NamedTuple):
    position: np.ndarray
    u: float
    curvature: float
    tangent: np.ndarray


def sample_params(domain: tuple[float, float], n_segments: int) -> np.ndarray:
    a, b = domain
    us = a + (b - a) * np.arange(n_segments + 1) / n_segments
    us[-1] = b
    return us


def sample_curve(curve: NurbsCurve, n_segments: int) -> list[CurveSample]:
    """Evaluate position, curvature and unit tangent at ``n_segments + 1``
    uniformly spaced parameters spanning the whole domain."""
    if n_segments < 1:
        raise ValueError("n_segments must be >= 1")
    us = sample_params(curve.domain, n_segments)
    pts, kappa, tang = curvatures_and_tangents(curve, us)
    return [CurveSample(pts[k], float(us[k]), float(kappa[k]), tang[k]) for k in range(len(us))]


def refit_to_knots(curve: NurbsCurve, knots) -> NurbsCurve:
    """Re-express ``curve`` over a richer knot vector of the same degree.

    Interpolates the homogeneous curve at the Greville abscissae of ``knots``;
    the result is exact whenever the target spline space contains the source
    one (same degree and domain, knots a superset of the source knots).
    """
    p = curve.degree
    knots = check_knots(knots, p)
    if not np.allclose(knot_domain(knots, p), curve.domain, rtol=0, atol=1e-12):
        raise CompatibilityError("target knot vector has a different domain")
    params = greville(knots, p)
    if np.all(curve.weights == curve.weights[0]):
        # polynomial curve: interpolate the points and keep the constant weight
        pts = np.array([curve_point(curve, u) for u in params])
        ctrl, _ = interpolate(params, pts, p, knots)
        return NurbsCurve(p, ctrl, np.full(len(ctrl), curve.weights[0]), knots)
    hom = []
    for u in params:
        aders, wders = _curve_homogeneous_ders(curve, u, 0)
        hom.append(np.append(aders[0], wders[0]))
    ctrl, _ = interpolate(params, np.array(hom), p, knots)
    w = ctrl[:, 3]
    if np.any(w <= 0):
        raise CompatibilityError("refitted weights are not positive")
    return NurbsCurve(p, ctrl[:, :3] / w[:, None], w, knots)


# ---------------------------------------------------------------------------
# surfaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class NurbsSurface:
    degree_u: int
    degree_v: int
    points: np.ndarray    # (n_u, n_v, 3)
    weights: np.ndarray   # (n_u, n_v)
    knots_u: np.ndarray
    knots_v: np.ndarray

    def __post_init__(self):
        try:
            pts = _frozen(self.points)
        except ValueError:
            raise GeometryError("control net is not rectangular") from None
        if pts.ndim != 3 or pts.shape[2] != 3:
            raise GeometryError(f"control net must have shape (n_u, n_v, 3), got {pts.shape}")
        try:
            w = _frozen(self.weights)
        except ValueError:
            raise GeometryError("weight grid is not rectangular") from None
        if w.shape != pts.shape[:2]:
            raise GeometryError("weight grid must match the control net")
        if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(w)):
            raise GeometryError("non-finite control data")
        if np.any(w <= 0):
            raise GeometryError("weights must be positive")
        ku = check_knots(self.knots_u, int(self.degree_u), pts.shape[0])
        kv = check_knots(self.knots_v, int(self.degree_v), pts.shape[1])
        object.__setattr__(self, "degree_u", int(self.degree_u))
        object.__setattr__(self, "degree_v", int(self.degree_v))
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "knots_u", _frozen(ku))
        object.__setattr__(self, "knots_v", _frozen(kv))

    @property
    def domain_u(self):
        return knot_domain(self.knots_u, self.degree_u)

    @property
    def domain_v(self):
        return knot_domain(self.knots_v, self.degree_v)

    def to_dict(self) -> dict:
        return {"degree": self.degree_u,
                "knots": self.knots_u.tolist(),
                "points": self.points.tolist(),
                "weights": self.weights.tolist(),
                "degree_v": self.degree_v,
                "knots_v": self.knots_v.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NurbsSurface":
        try:
            return cls(int(d["degree"]), int(d["degree_v"]), d["points"], d["weights"],
                       d["knots"], d["knots_v"])
        except (KeyError, TypeError) as exc:
            raise GeometryError(f"malformed surface record: {exc!r}") from None


def surface_point(surface: NurbsSurface, u: float, v: float) -> np.ndarray:
    p, q = surface.degree_u, surface.degree_v
    u = _check_param(u, surface.knots_u, p)
    v = _check_param(v, surface.knots_v, q)
    su = find_span(u, p, surface.knots_u)
    sv = find_span(v, q, surface.knots_v)
    nu = _basis_ders(su, u, p, surface.knots_u, 0)[0]
    nv = _basis_ders(sv, v, q, surface.knots_v, 0)[0]
    w = surface.weights[su - p:su + 1, sv - q:sv + 1]
    pts = surface.points[su - p:su + 1, sv - q:sv + 1]
    coeff = np.outer(nu, nv) * w
    return np.einsum("ij,ijk->k", coeff, pts) / coeff.sum()


def surface_points(surface: NurbsSurface, us, vs) -> np.ndarray:
    """Surface evaluated on the tensor lattice ``us`` x ``vs``, shape (len(us), len(vs), 3)."""
    Bu = basis_matrix(us, surface.degree_u, surface.knots_u)[0]
    Bv = basis_matrix(vs, surface.degree_v, surface.knots_v)[0]
    w = surface.weights
    num = np.einsum("ai,bj,ij,ijk->abk", Bu, Bv, w, surface.points)
    den = Bu @ w @ Bv.T
    return num / den[..., None]


def isocurve(surface: NurbsSurface, t: float, direction: str = "u") -> NurbsCurve:
    """Exact iso-parametric curve.

    ``direction="u"`` gives the curve running along ``u`` at ``v = t``;
    ``direction="v"`` the curve along ``v`` at ``u = t``.
    """
    if direction == "u":
        q, knots = surface.degree_v, surface.knots_v
        pts, w = surface.points, surface.weights
        degree, out_knots = surface.degree_u, surface.knots_u
    elif direction == "v":
        q, knots = surface.degree_u, surface.knots_u
        pts, w = surface.points.transpose(1, 0, 2), surface.weights.T
        degree, out_knots = surface.degree_v, surface.knots_v
    else:
        raise ValueError(f"direction must be 'u' or 'v', got {direction!r}")
    t = _check_param(t, knots, q)
    span = find_span(t, q, knots)
    basis = _basis_ders(span, t, q, knots, 0)[0]
    wsl = w[:, span - q:span + 1] * basis
    cw = wsl.sum(axis=1)
    cp = np.einsum("ij,ijk->ik", wsl, pts[:, span - q:span + 1]) / cw[:, None]
    return NurbsCurve(degree, cp, cw, out_knots)


def loft_surface(sections: Sequence[NurbsCurve], q: int = 2) -> NurbsSurface:
    """Skin compatible section curves into a surface of v-degree ``q``.

    Each column of homogeneous section control points is interpolated by a
    clamped degree-``q`` curve at uniformly spaced ``v``; the surface passes
    exactly through every section at those stations.
    """
    sections = list(sections)
    if q < 1:
        raise GeometryError("v-degree must be >= 1")
    if len(sections) < q + 1:
        raise CompatibilityError(f"need at least {q + 1} sections for v-degree {q}, got {len(sections)}")
    ref = sections[0]
    for k, s in enumerate(sections[1:], start=1):
        if s.degree != ref.degree or s.n_ctrl != ref.n_ctrl:
            raise CompatibilityError(f"section {k} differs in degree or control-point count")
        if s.knots.shape != ref.knots.shape or not np.allclose(s.knots, ref.knots, rtol=0, atol=1e-12):
            raise CompatibilityError(f"section {k} has a different knot vector")
    n_sec = len(sections)
    params = np.arange(n_sec) / (n_sec - 1)
    hom = np.stack([np.concatenate([s.points * s.weights[:, None], s.weights[:, None]], axis=1)
                    for s in sections])              # (n_sec, n_u, 4)
    ctrl, knots_v = interpolate(params, hom, q)       # (n_v = n_sec, n_u, 4)
    ctrl = ctrl.transpose(1, 0, 2)
    w = ctrl[..., 3]
    if np.any(w <= 0):
        raise GeometryError("lofted weights are not positive; sections too dissimilar")
    return NurbsSurface(ref.degree, q, ctrl[..., :3] / w[..., None], w, ref.knots, knots_v)


# ---------------------------------------------------------------------------
# grid extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GridSkeleton:
    """Nodes and iso-line edges of a surface sampled on a parameter lattice.

    Node ``(i, j)`` (``i`` along u, ``j`` along v) has index ``i * (nv + 1) + j``.
    """
    nodes: np.ndarray
    edges: np.ndarray
    boundary: np.ndarray
    params: np.ndarray
    shape: tuple[int, int]
    edge_direction: np.ndarray = field(default=None)

    @property
    def n_nodes(self):
        return len(self.nodes)


def node_index(i: int, j: int, nv: int) -> int:
    return i * (nv + 1) + j


def extract_grid(surface: NurbsSurface, nu: int, nv: int) -> GridSkeleton:
    if nu < 1 or nv < 1:
        raise ValueError("nu and nv must be >= 1")
    us = sample_params(surface.domain_u, nu)
    vs = sample_params(surface.domain_v, nv)
    nodes = surface_points(surface, us, vs).reshape(-1, 3)
    ii, jj = np.meshgrid(np.arange(nu + 1), np.arange(nv + 1), indexing="ij")
    params = np.column_stack([us[ii.ravel()], vs[jj.ravel()]])
    boundary = ((ii == 0) | (ii == nu) | (jj == 0) | (jj == nv)).ravel()
    close = cKDTree(nodes).query_pairs(DEGENERATE_TOL)
    if close:
        a, b = min(close)
        raise DegeneracyError(f"grid nodes {a} and {b} coincide")
    edges, direction = [], []
    for i in range(nu + 1):
        for j in range(nv + 1):
            if i < nu:
                edges.append((node_index(i, j, nv), node_index(i + 1, j, nv)))
                direction.append(0)
            if j < nv:
                edges.append((node_index(i, j, nv), node_index(i, j + 1, nv)))
                direction.append(1)
    return GridSkeleton(nodes, np.array(edges, dtype=int), boundary, params, (nu, nv),
                        np.array(direction, dtype=int))


def iso_line_curvatures(surface: NurbsSurface, ts, direction: str, n_segments: int) -> np.ndarray:
    """Curvature along several iso-lines at once, shape ``(len(ts), n_segments + 1)``.

    Same values as sampling :func:`isocurve` for each ``t``, but every line
    shares one basis evaluation.
    """
    if direction == "u":
        hom = np.concatenate([surface.points * surface.weights[..., None], surface.weights[..., None]], axis=-1)
        deg_t, knots_t, deg, knots = surface.degree_v, surface.knots_v, surface.degree_u, surface.knots_u
    elif direction == "v":
        hom = np.concatenate([surface.points * surface.weights[..., None], surface.weights[..., None]],
                             axis=-1).transpose(1, 0, 2)
        deg_t, knots_t, deg, knots = surface.degree_u, surface.knots_u, surface.degree_v, surface.knots_v
    else:
        raise ValueError(f"direction must be 'u' or 'v', got {direction!r}")
    Bt = basis_matrix(ts, deg_t, knots_t)[0]                   # (lines, n_t)
    lines = np.einsum("lj,ijc->lic", Bt, hom)                   # (lines, n_ctrl, 4)
    B = basis_matrix(sample_params(knot_domain(knots, deg), n_segments), deg, knots, 2)
    A = np.einsum("kmi,lic->klmc", B, lines)                    # (3, lines, m, 4)
    w0, w1, w2 = A[0, ..., 3:], A[1, ..., 3:], A[2, ..., 3:]
    c0 = A[0, ..., :3] / w0
    c1 = (A[1, ..., :3] - w1 * c0) / w0
    c2 = (A[2, ..., :3] - 2.0 * w1 * c1 - w2 * c0) / w0
    speed = np.linalg.norm(c1, axis=-1)
    if speed.min() < SINGULAR_TOL:
        raise SingularParametrizationError(float("nan"), float(speed.min()))
    return np.linalg.norm(np.cross(c1, c2), axis=-1) / speed ** 3


def max_grid_curvature(surface: NurbsSurface, nu: int, nv: int, per_segment: int = 2) -> float:
    """Largest iso-line curvature along the lines of an ``nu`` x ``nv`` grid.

    Each grid line is the exact iso-curve of the surface; it is probed
    ``per_segment`` times per grid segment.
    """
    ku = iso_line_curvatures(surface, sample_params(surface.domain_v, nv), "u", nu * per_segment)
    kv = iso_line_curvatures(surface, sample_params(surface.domain_u, nu), "v", nv * per_segment)
    return float(max(ku.max(), kv.max()))
