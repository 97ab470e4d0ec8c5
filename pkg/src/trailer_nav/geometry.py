"""Convex polygons, rigid transforms and point-to-polygon distances.

Two independent routes to the distance between a point and a convex polygon
live here:

* :func:`closed_form_distance` projects onto every edge segment (the oracle);
* :func:`solve_dual_bcd` solves the penalized dual problem over the edge
  multipliers ``mu`` and the direction multiplier ``lambda`` by block
  coordinate descent.

Interior points get a negative distance equal to the penetration depth.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numba
import numpy as np

from .exceptions import DegeneratePolygon, EmptyCloud, InvalidPenalty, NonConvex

DEDUP_TOL = 1e-9

DEFAULT_PENALTY = 100.0
DEFAULT_MAX_ITER = 200
DEFAULT_TOL = 1e-6


def rot(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    """Half-space form ``G x <= h`` plus the counter-clockwise vertex list.

    Row ``k`` of ``G`` is the unit outward normal of the edge running from
    ``vertices[k]`` to ``vertices[k + 1]``.
    """

    G: np.ndarray
    h: np.ndarray
    vertices: np.ndarray

    @property
    def edge_count(self) -> int:
        return int(self.h.shape[0])

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    @property
    def circumradius(self) -> float:
        """Largest vertex distance from :attr:`centroid`."""
        return float(np.max(np.linalg.norm(self.vertices - self.centroid, axis=1)))

    @property
    def area(self) -> float:
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))

    @property
    def id_hash(self) -> bytes:
        """32-byte digest identifying the polygon, stored in weight files."""
        data = np.ascontiguousarray(self.vertices, dtype="<f8").tobytes()
        return hashlib.sha256(data).digest()

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all(pts @ self.G.T <= self.h, axis=1)

    def __eq__(self, other):
        if not isinstance(other, ConvexPolygon):
            return NotImplemented
        return self.vertices.shape == other.vertices.shape and np.array_equal(
            self.vertices, other.vertices
        )

    def __hash__(self):
        return hash(self.id_hash)

    def __repr__(self):
        return f"ConvexPolygon(vertices={self.vertices.tolist()})"


@dataclass(frozen=True, eq=False)
class Pose2D:
    R: np.ndarray
    t: np.ndarray

    @classmethod
    def from_xytheta(cls, x: float, y: float, theta: float) -> "Pose2D":
        return cls(rot(theta), np.array([x, y], dtype=float))

    @classmethod
    def identity(cls) -> "Pose2D":
        return cls(np.eye(2), np.zeros(2))

    @property
    def theta(self) -> float:
        return float(np.arctan2(self.R[1, 0], self.R[0, 0]))

    def to_local(self, points) -> np.ndarray:
        """Map world points (``(2,)`` or ``(M, 2)``) into this frame."""
        p = np.asarray(points, dtype=float)
        return (p - self.t) @ self.R

    def to_world(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.R.T + self.t

    def compose(self, other: "Pose2D") -> "Pose2D":
        """Pose of ``other`` (expressed in this frame) in the parent frame."""
        return Pose2D(self.R @ other.R, self.R @ other.t + self.t)

    def __eq__(self, other):
        if not isinstance(other, Pose2D):
            return NotImplemented
        return np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t)

    __hash__ = None


@dataclass
class DualSolution:
    """Result of :func:`solve_dual_bcd`.

    ``mu`` is rescaled onto the exact dual feasible set, so ``lam`` has unit
    norm for exterior points and ``distance == mu @ (G p - h)``.
    ``objective`` is the penalized objective at the unscaled iterate.
    """

    mu: np.ndarray
    lam: np.ndarray
    distance: float
    converged: bool
    iterations: int
    objective: float = float("nan")
    history: np.ndarray = field(default_factory=lambda: np.empty(0))


def make_polygon(vertices) -> ConvexPolygon:
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2:
        raise DegeneratePolygon(f"expected an (n, 2) vertex array, got shape {v.shape}")
    keep = []
    for p in v:
        if not keep or np.linalg.norm(p - keep[-1]) > DEDUP_TOL:
            keep.append(p)
    while len(keep) > 1 and np.linalg.norm(keep[0] - keep[-1]) <= DEDUP_TOL:
        keep.pop()
    if len(keep) < 3:
        raise DegeneratePolygon(f"need at least 3 distinct vertices, got {len(keep)}")
    v = np.array(keep)

    edges = np.roll(v, -1, axis=0) - v
    lengths = np.linalg.norm(edges, axis=1)
    nxt = np.roll(edges, -1, axis=0)
    cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
    scale = lengths * np.roll(lengths, -1)
    if np.any(cross < -DEDUP_TOL * scale):
        raise NonConvex("vertices must form a counter-clockwise convex polygon")
    if np.any(np.abs(cross) <= DEDUP_TOL * scale):
        raise DegeneratePolygon("collinear consecutive vertices")
    turning = np.arctan2(cross, np.einsum("ij,ij->i", edges, nxt)).sum()
    if abs(turning - 2.0 * np.pi) > 1e-6:
        raise NonConvex("self-intersecting vertex sequence")

    G = np.column_stack([edges[:, 1], -edges[:, 0]]) / lengths[:, None]
    h = np.einsum("ij,ij->i", G, v)
    for arr in (G, h, v):
        arr.setflags(write=False)
    return ConvexPolygon(G=G, h=h, vertices=v)


def rectangle(x_min: float, x_max: float, y_min: float, y_max: float) -> ConvexPolygon:
    return make_polygon([(x_min, y_min), (x_max, y_min), (x_max, y_max), (x_min, y_max)])


def transform_point_to_local(p, pose: Pose2D) -> np.ndarray:
    return pose.to_local(p)


def transform_point_to_world(p, pose: Pose2D) -> np.ndarray:
    return pose.to_world(p)


def _segment_distances(poly: ConvexPolygon, pts: np.ndarray):
    """Distances from ``pts`` (M, 2) to every edge segment: (M, l) and feet (M, l, 2)."""
    a = poly.vertices
    e = np.roll(a, -1, axis=0) - a
    ee = np.einsum("ij,ij->i", e, e)
    rel = pts[:, None, :] - a[None, :, :]
    s = np.clip(np.einsum("mlj,lj->ml", rel, e) / ee, 0.0, 1.0)
    feet = a[None, :, :] + s[..., None] * e[None, :, :]
    return np.linalg.norm(pts[:, None, :] - feet, axis=2), feet


def signed_distances(poly: ConvexPolygon, points_local) -> np.ndarray:
    """Vectorized signed distance of local-frame points, shape ``(M,)``."""
    pts = np.atleast_2d(np.asarray(points_local, dtype=float))
    slack = pts @ poly.G.T - poly.h
    worst = slack.max(axis=1)
    inside = worst <= 0.0
    out = worst.copy()
    if np.any(~inside):
        seg, _ = _segment_distances(poly, pts[~inside])
        out[~inside] = np.maximum(seg.min(axis=1), worst[~inside])
    return out


def closed_form_distance(poly: ConvexPolygon, p_local) -> tuple[float, np.ndarray]:
    """Signed distance and closest boundary point for one local-frame point.

    Ties between equidistant edges resolve to the lowest edge index.
    """
    p = np.asarray(p_local, dtype=float).reshape(2)
    slack = poly.G @ p - poly.h
    if np.all(slack <= 0.0):
        k = int(np.argmax(slack))
        return float(slack[k]), p - slack[k] * poly.G[k]
    seg, feet = _segment_distances(poly, p[None, :])
    k = int(np.argmin(seg[0]))
    return float(max(seg[0, k], slack.max())), feet[0, k]


# --- block coordinate descent on the penalized dual -----------------------


@numba.njit(cache=True)
def _mu_step(G, c, q, w):
    """Exact minimizer of ``-c.mu + w |G^T mu - q|^2`` over ``mu >= 0``.

    The inner problem is a QP whose solution can always be taken with at most
    two nonzero entries (``G^T`` has two rows), so every support of size 0, 1
    and 2 is enumerated and the best nonnegative candidate kept.
    """
    n = G.shape[0]
    best = w * (q[0] * q[0] + q[1] * q[1])
    ia, ib = -1, -1
    ma, mb = 0.0, 0.0
    inv2w = 0.5 / w
    for a in range(n):
        ga0, ga1 = G[a, 0], G[a, 1]
        ra = ga0 * q[0] + ga1 * q[1] + c[a] * inv2w
        if ra > 0.0:
            z0, z1 = ra * ga0 - q[0], ra * ga1 - q[1]
            obj = -c[a] * ra + w * (z0 * z0 + z1 * z1)
            if obj < best:
                best, ia, ib, ma, mb = obj, a, -1, ra, 0.0
        for b in range(a + 1, n):
            gb0, gb1 = G[b, 0], G[b, 1]
            cab = ga0 * gb0 + ga1 * gb1
            det = 1.0 - cab * cab
            if det < 1e-12:
                continue
            rb = gb0 * q[0] + gb1 * q[1] + c[b] * inv2w
            xa = (ra - cab * rb) / det
            xb = (rb - cab * ra) / det
            if xa > 0.0 and xb > 0.0:
                z0 = xa * ga0 + xb * gb0 - q[0]
                z1 = xa * ga1 + xb * gb1 - q[1]
                obj = -c[a] * xa - c[b] * xb + w * (z0 * z0 + z1 * z1)
                if obj < best:
                    best, ia, ib, ma, mb = obj, a, b, xa, xb
    mu = np.zeros(n)
    if ia >= 0:
        mu[ia] = ma
    if ib >= 0:
        mu[ib] = mb
    return mu


@numba.njit(cache=True)
def _penalized_objective(G, c, mu, nu, w):
    z0 = nu[0]
    z1 = nu[1]
    lin = 0.0
    for k in range(G.shape[0]):
        z0 += mu[k] * G[k, 0]
        z1 += mu[k] * G[k, 1]
        lin -= mu[k] * c[k]
    return lin + w * (z0 * z0 + z1 * z1)


@numba.njit(cache=True)
def _bcd_stage(G, c, mu, nu, w, max_iter, tol, history, offset):
    """Alternate exact mu and nu block updates at fixed penalty ``w``."""
    it = 0
    resid = np.inf
    while it < max_iter:
        q = -nu
        new_mu = _mu_step(G, c, q, w)
        z0 = 0.0
        z1 = 0.0
        for k in range(G.shape[0]):
            z0 += new_mu[k] * G[k, 0]
            z1 += new_mu[k] * G[k, 1]
        scale = max(1.0, np.sqrt(z0 * z0 + z1 * z1))
        new_nu = np.array([-z0 / scale, -z1 / scale])
        resid = max(np.max(np.abs(new_mu - mu)), np.max(np.abs(new_nu - nu)))
        mu = new_mu
        nu = new_nu
        if offset + it < history.shape[0]:
            history[offset + it] = _penalized_objective(G, c, mu, nu, w)
        it += 1
        if resid < tol:
            break
    return mu, nu, it, resid


@numba.njit(cache=True)
def _solve_dual(G, h, p, w, max_iter, tol, warm_start, history):
    n = G.shape[0]
    c = np.empty(n)
    cmax = -np.inf
    for k in range(n):
        c[k] = G[k, 0] * p[0] + G[k, 1] * p[1] - h[k]
        cmax = max(cmax, c[k])
    mu = np.zeros(n)
    nu = np.zeros(2)
    if cmax <= 0.0:
        # interior or boundary: the dual optimum is mu = 0
        return mu, nu, 0.0, True, 0, _penalized_objective(G, c, mu, nu, w)

    iters = 0
    w_warm = 1e-2 * cmax
    if warm_start and w_warm < w:
        # the penalized optimum is a positive rescaling of the exact dual
        # optimum for every w, and its direction settles fastest when w is
        # small relative to the distance
        mu, nu, it, _ = _bcd_stage(G, c, mu, nu, w_warm, max_iter, tol, history, 0)
        iters += it
    mu, nu, it, resid = _bcd_stage(G, c, mu, nu, w, max_iter, tol, history, iters)
    iters += it
    objective = _penalized_objective(G, c, mu, nu, w)

    z0 = 0.0
    z1 = 0.0
    for k in range(n):
        z0 += mu[k] * G[k, 0]
        z1 += mu[k] * G[k, 1]
    norm = np.sqrt(z0 * z0 + z1 * z1)
    if norm > 1.0:
        mu = mu / norm
    dist = 0.0
    z0 = 0.0
    z1 = 0.0
    for k in range(n):
        dist += mu[k] * c[k]
        z0 += mu[k] * G[k, 0]
        z1 += mu[k] * G[k, 1]
    nu = np.array([-z0, -z1])
    return mu, nu, dist, resid < tol, iters, objective


@numba.njit(cache=True)
def _solve_dual_batch(G, h, pts, w, max_iter, tol, warm_start):
    m = pts.shape[0]
    mus = np.zeros((m, G.shape[0]))
    dists = np.zeros(m)
    conv = np.zeros(m, dtype=np.bool_)
    iters = np.zeros(m, dtype=np.int64)
    history = np.empty(0)
    for j in range(m):
        mu, _, d, ok, it, _ = _solve_dual(G, h, pts[j], w, max_iter, tol, warm_start, history)
        mus[j] = mu
        dists[j] = d
        conv[j] = ok
        iters[j] = it
    return mus, dists, conv, iters


def _check_penalty(w_p):
    if not w_p > 0:
        raise InvalidPenalty(f"penalty weight must be positive, got {w_p}")


def solve_dual_bcd(
    poly: ConvexPolygon,
    p_local,
    pose: Pose2D | None = None,
    w_p: float = DEFAULT_PENALTY,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    warm_start: bool = True,
    record_history: bool = False,
) -> DualSolution:
    """Point-to-polygon distance from the penalized dual problem.

    Minimizes ``mu.(h - G p) + w_p |G^T mu + R^T lam|^2`` subject to
    ``mu >= 0`` and ``|lam| <= 1`` by alternating exact block updates.
    With ``warm_start`` a first pass runs at a penalty proportional to the
    largest constraint violation, then the iterate is refined at ``w_p``.

    ``max_iter`` bounds each of the (at most two) passes.
    """
    _check_penalty(w_p)
    pose = Pose2D.identity() if pose is None else pose
    p = np.asarray(p_local, dtype=float).reshape(2)
    history = np.full(2 * max_iter if record_history else 0, np.nan)
    mu, nu, dist, ok, iters, obj = _solve_dual(
        np.ascontiguousarray(poly.G), np.ascontiguousarray(poly.h), p,
        float(w_p), int(max_iter), float(tol), bool(warm_start), history,
    )
    return DualSolution(
        mu=mu,
        lam=pose.R @ nu,
        distance=float(dist),
        converged=bool(ok),
        iterations=int(iters),
        objective=float(obj),
        history=history[: iters if record_history else 0],
    )


def solve_dual_bcd_batch(
    poly: ConvexPolygon,
    points_local,
    w_p: float = DEFAULT_PENALTY,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    warm_start: bool = True,
):
    """Batch form of :func:`solve_dual_bcd` for many local-frame points.

    Returns ``(mu, distance, converged, iterations)`` arrays.
    """
    _check_penalty(w_p)
    pts = np.ascontiguousarray(np.atleast_2d(points_local), dtype=float)
    return _solve_dual_batch(
        np.ascontiguousarray(poly.G), np.ascontiguousarray(poly.h), pts,
        float(w_p), int(max_iter), float(tol), bool(warm_start),
    )


def recover_lambda(mu, poly: ConvexPolygon, pose: Pose2D | None = None) -> np.ndarray:
    """Direction multiplier implied by the dual equality constraint.

    ``G^T mu + R^T lam = 0`` gives ``lam = -R G^T mu``. Works row-wise on
    a batch ``(M, l)`` too.
    """
    mu = np.asarray(mu, dtype=float)
    R = np.eye(2) if pose is None else pose.R
    return -(mu @ poly.G) @ R.T


def cloud_points(cloud) -> np.ndarray:
    pts = getattr(cloud, "points", cloud)
    return np.asarray(pts, dtype=float).reshape(-1, 2)


def min_distance_to_cloud(poly: ConvexPolygon, pose: Pose2D, cloud, method: str = "exact", encoder=None) -> float:
    """Minimum signed distance between a posed polygon and a point cloud."""
    pts = cloud_points(cloud)
    if pts.shape[0] == 0:
        raise EmptyCloud("point cloud is empty")
    if method == "exact":
        return float(signed_distances(poly, pose.to_local(pts)).min())
    if method == "encoder":
        if encoder is None:
            raise ValueError("method='encoder' needs a trained encoder")
        from .encoder import predict_distance

        return predict_distance(encoder, poly, pose, pts)[1]
    raise ValueError(f"unknown distance method {method!r}")
