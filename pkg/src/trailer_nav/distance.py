"""Body-to-cloud distance models used inside MPPI rollouts.

Both models are callables ``model(footprint, cloud) -> float`` and can also
hand packed arrays to the compiled rollout kernel, which prunes points whose
centroid distance rules them out before any per-point evaluation.
"""
from __future__ import annotations

import math

import numba
import numpy as np

from .encoder import EncoderNetwork, load_weights, predict_distance, _KIND_TAG
from .exceptions import DimensionMismatch, EmptyCloud
from .geometry import cloud_points, signed_distances
from .vehicle import trailer_pose_kernel

MODE_EXACT = 0
MODE_ENCODER = 1


class BodyPack:
    """Polygon arrays of one vehicle, padded to a common edge count."""

    def __init__(self, params):
        polys = params.polygons
        n_tractor = len(params.body_polygons_tractor)
        lmax = max(p.edge_count for p in polys)
        P = len(polys)
        self.G = np.zeros((P, lmax, 2))
        self.h = np.zeros((P, lmax))
        self.verts = np.zeros((P, lmax, 2))
        self.n_edges = np.zeros(P, dtype=np.int64)
        self.body = np.zeros(P, dtype=np.int64)
        self.centroid = np.zeros((P, 2))
        self.radius = np.zeros(P)
        for i, p in enumerate(polys):
            n = p.edge_count
            self.G[i, :n] = p.G
            self.h[i, :n] = p.h
            self.verts[i, :n] = p.vertices
            self.n_edges[i] = n
            self.body[i] = 0 if i < n_tractor else 1
            self.centroid[i] = p.centroid
            self.radius[i] = p.circumradius


def pack_networks(networks: list[EncoderNetwork]):
    """Flatten encoder layers into ``(meta, n_layers, flat, width)``.

    ``meta[i, j] = (kind_tag, rows, cols, weight_offset, bias_offset)``.
    """
    n_layers = np.array([len(n.layers) for n in networks], dtype=np.int64)
    meta = np.zeros((len(networks), max(n_layers), 5), dtype=np.int64)
    chunks = []
    off = 0
    width = 2
    for i, net in enumerate(networks):
        for j, layer in enumerate(net.layers):
            rows, cols = layer.weight.shape
            width = max(width, rows, cols)
            meta[i, j] = (_KIND_TAG[layer.kind], rows, cols, off, off + rows * cols)
            chunks += [layer.weight.ravel(), layer.bias.ravel()]
            off += rows * cols + layer.bias.size
    flat = np.concatenate(chunks) if chunks else np.zeros(0)
    return meta, n_layers, flat, width


@numba.njit(cache=True)
def _net_eval(meta, n_layers, flat, x0, x1, buf):
    """Raw network output for one point; result lives in ``buf[cur, :width]``."""
    cur = 0
    buf[0, 0] = x0
    buf[0, 1] = x1
    width = 2
    for li in range(n_layers):
        kind = meta[li, 0]
        rows = meta[li, 1]
        cols = meta[li, 2]
        woff = meta[li, 3]
        boff = meta[li, 4]
        if kind == 0:
            # row-major sweep keeps weight reads contiguous; each output still
            # accumulates bias + x_0 w_0j + x_1 w_1j + ... in the same order
            nxt = 1 - cur
            for j in range(cols):
                buf[nxt, j] = flat[boff + j]
            for i in range(rows):
                xi = buf[cur, i]
                row = woff + i * cols
                for j in range(cols):
                    buf[nxt, j] += xi * flat[row + j]
            cur = nxt
            width = cols
        elif kind == 1:
            mean = 0.0
            for i in range(width):
                mean += buf[cur, i]
            mean /= width
            var = 0.0
            for i in range(width):
                c = buf[cur, i] - mean
                var += c * c
            inv = 1.0 / math.sqrt(var / width + 1e-5)
            for i in range(width):
                buf[cur, i] = (buf[cur, i] - mean) * inv * flat[woff + i] + flat[boff + i]
        elif kind == 2:
            for i in range(width):
                buf[cur, i] = math.tanh(buf[cur, i])
        else:
            for i in range(width):
                if buf[cur, i] < 0.0:
                    buf[cur, i] = 0.0
    return cur


@numba.njit(cache=True)
def _max_slack(i, lx, ly, G, h, n_edges):
    worst = -np.inf
    for k in range(n_edges[i]):
        s = G[i, k, 0] * lx + G[i, k, 1] * ly - h[i, k]
        if s > worst:
            worst = s
    return worst


@numba.njit(cache=True)
def _wedge_bound(i, lx, ly, G, h, n_edges):
    """Distance to the wedge cut out by the two most violated edges.

    The wedge contains the polygon, so this never exceeds the true distance;
    it is exact whenever the nearest feature is one of those edges or their
    shared vertex. Inside the polygon it returns the (negative) max slack.
    """
    s1 = -np.inf
    s2 = -np.inf
    k1 = 0
    k2 = 0
    for k in range(n_edges[i]):
        s = G[i, k, 0] * lx + G[i, k, 1] * ly - h[i, k]
        if s > s1:
            s2, k2 = s1, k1
            s1, k1 = s, k
        elif s > s2:
            s2, k2 = s, k
    if s2 <= 0.0:
        return s1
    c = G[i, k1, 0] * G[i, k2, 0] + G[i, k1, 1] * G[i, k2, 1]
    if s2 - c * s1 <= 0.0 or 1.0 - c * c < 1e-12:
        return s1
    return math.sqrt((s1 * s1 - 2.0 * c * s1 * s2 + s2 * s2) / (1.0 - c * c))


@numba.njit(cache=True)
def _point_distance(i, lx, ly, G, h, verts, n_edges, mode, meta, n_layers, flat, buf):
    n = n_edges[i]
    worst = _max_slack(i, lx, ly, G, h, n_edges)
    if worst <= 0.0:
        return worst
    if mode == MODE_EXACT:
        best = np.inf
        for k in range(n):
            ax, ay = verts[i, k, 0], verts[i, k, 1]
            kn = k + 1 if k + 1 < n else 0
            ex, ey = verts[i, kn, 0] - ax, verts[i, kn, 1] - ay
            rx, ry = lx - ax, ly - ay
            s = (rx * ex + ry * ey) / (ex * ex + ey * ey)
            s = min(max(s, 0.0), 1.0)
            dx, dy = rx - s * ex, ry - s * ey
            d2 = dx * dx + dy * dy
            if d2 < best:
                best = d2
        return max(math.sqrt(best), worst)
    cur = _net_eval(meta[i], n_layers[i], flat, lx, ly, buf)
    d = 0.0
    for k in range(n):
        m = buf[cur, k]
        if m > 0.0:
            d += m * (G[i, k, 0] * lx + G[i, k, 1] * ly - h[i, k])
    return d


@numba.njit(cache=True)
def body_cloud_distance(x, y, th, ph, L1, Lh, G, h, verts, n_edges, body, centroid, radius,
                        cloud, sentinel, mode, margin, meta, n_layers, flat, buf):
    """Minimum signed distance between every body polygon and the cloud."""
    m = cloud.shape[0]
    if m == 0:
        return sentinel
    x1, y1, th1 = trailer_pose_kernel(x, y, th, ph, L1, Lh)
    best = np.inf
    for i in range(G.shape[0]):
        if body[i] == 0:
            c, s, tx, ty = math.cos(th), math.sin(th), x, y
        else:
            c, s, tx, ty = math.cos(th1), math.sin(th1), x1, y1
        cx = c * centroid[i, 0] - s * centroid[i, 1] + tx
        cy = s * centroid[i, 0] + c * centroid[i, 1] + ty
        # seed with the point of smallest lower bound, it is almost always
        # the nearest one, then evaluate only points that could beat it
        jseed = -1
        lb_min = np.inf
        for j in range(m):
            dx, dy = cloud[j, 0] - cx, cloud[j, 1] - cy
            reach = best + margin + radius[i]
            if reach > 0.0 and dx * dx + dy * dy < reach * reach:
                rx, ry = cloud[j, 0] - tx, cloud[j, 1] - ty
                lb = _wedge_bound(i, c * rx + s * ry, -s * rx + c * ry, G, h, n_edges)
                if lb < lb_min:
                    lb_min, jseed = lb, j
        if jseed < 0 or lb_min >= best + margin:
            continue
        rx, ry = cloud[jseed, 0] - tx, cloud[jseed, 1] - ty
        d = _point_distance(i, c * rx + s * ry, -s * rx + c * ry, G, h, verts, n_edges,
                            mode, meta, n_layers, flat, buf)
        if d < best:
            best = d
        for j in range(m):
            if j == jseed:
                continue
            dx, dy = cloud[j, 0] - cx, cloud[j, 1] - cy
            reach = best + margin + radius[i]
            if reach > 0.0 and dx * dx + dy * dy < reach * reach:
                rx, ry = cloud[j, 0] - tx, cloud[j, 1] - ty
                lx, ly = c * rx + s * ry, -s * rx + c * ry
                if _wedge_bound(i, lx, ly, G, h, n_edges) >= best + margin:
                    continue
                d = _point_distance(i, lx, ly, G, h, verts, n_edges, mode, meta, n_layers,
                                    flat, buf)
                if d < best:
                    best = d
    return best


class ExactDistance:
    """Closed-form signed distance, minimized over polygons and points."""

    mode = MODE_EXACT
    margin = 0.0

    def __call__(self, footprint, cloud) -> float:
        pts = cloud_points(cloud)
        if pts.shape[0] == 0:
            raise EmptyCloud("point cloud is empty")
        return min(float(signed_distances(poly, pose.to_local(pts)).min()) for poly, pose in footprint)

    def per_polygon(self, footprint, cloud) -> list[float]:
        pts = cloud_points(cloud)
        return [float(signed_distances(poly, pose.to_local(pts)).min()) for poly, pose in footprint]

    def networks_pack(self, params):
        meta = np.zeros((len(params.polygons), 1, 5), dtype=np.int64)
        return meta, np.zeros(len(params.polygons), dtype=np.int64), np.zeros(1), 2


class EncoderDistance:
    """Distances reconstructed from one trained encoder per body polygon.

    ``networks`` follow :attr:`VehicleParams.polygons` order. A point is
    skipped when its slack lower bound exceeds the best distance so far by
    ``margin``; the default sits above the 99th percentile of a desk-trained
    encoder's error.
    """

    mode = MODE_ENCODER

    def __init__(self, networks: list[EncoderNetwork], margin: float = 0.02):
        self.networks = list(networks)
        self.margin = margin
        self._pack = pack_networks(self.networks)

    @classmethod
    def from_files(cls, paths, params, margin: float = 0.02) -> "EncoderDistance":
        nets = []
        for path, poly in zip(paths, params.polygons):
            with open(path, "rb") as fh:
                nets.append(load_weights(fh.read(), poly))
        return cls(nets, margin)

    def __call__(self, footprint, cloud) -> float:
        return min(self.per_polygon(footprint, cloud))

    def per_polygon(self, footprint, cloud) -> list[float]:
        if len(footprint) != len(self.networks):
            raise DimensionMismatch(f"{len(self.networks)} encoders for {len(footprint)} polygons")
        return [predict_distance(net, poly, pose, cloud)[1]
                for net, (poly, pose) in zip(self.networks, footprint)]

    def networks_pack(self, params):
        if len(params.polygons) != len(self.networks):
            raise DimensionMismatch(f"{len(self.networks)} encoders for {len(params.polygons)} polygons")
        for net, poly in zip(self.networks, params.polygons):
            if net.output_dim != poly.edge_count:
                raise DimensionMismatch("encoder output width does not match polygon edge count")
        return self._pack
