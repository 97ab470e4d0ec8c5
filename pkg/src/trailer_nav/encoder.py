"""Learned dual multipliers for fast point-to-polygon distances.

A small MLP maps a point in a polygon's local frame to the edge multipliers
``mu``; the distance then follows as ``mu . (G p - h)``. One network is
trained per polygon on labels produced by :func:`geometry.solve_dual_bcd_batch`.

Backpropagation and Adam are written out by hand so the gradients can be
checked against finite differences.
"""
from __future__ import annotations

import io
import logging
import struct
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import (
    CorruptWeights,
    DimensionMismatch,
    EmptyCloud,
    NonFiniteLoss,
    PolygonMismatch,
    SolverFailure,
)
from .geometry import ConvexPolygon, Pose2D, solve_dual_bcd_batch

logger = logging.getLogger(__name__)

LN_EPS = 1e-5
SAMPLE_RANGE = 30.0

KINDS = ("linear", "layernorm", "tanh", "relu")
_KIND_TAG = {k: i for i, k in enumerate(KINDS)}

MAGIC = b"TNEN"
VERSION = 1


@dataclass
class Layer:
    kind: str
    weight: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    bias: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def learnable(self) -> bool:
        return self.kind in ("linear", "layernorm")


@dataclass
class EncoderNetwork:
    layers: list
    polygon_hash: bytes = b"\x00" * 32

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def depth_blocks(self) -> int:
        return sum(1 for layer in self.layers if layer.kind == "layernorm")

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            if layer.learnable:
                out += [layer.weight, layer.bias]
        return out

    def copy(self) -> "EncoderNetwork":
        return EncoderNetwork(
            [Layer(l.kind, l.weight.copy(), l.bias.copy()) for l in self.layers],
            self.polygon_hash,
        )


@dataclass
class TrainingDataset:
    points: np.ndarray
    labels_mu: np.ndarray
    polygon_id: bytes

    def __len__(self):
        return self.points.shape[0]


@dataclass
class TrainConfig:
    epochs: int = 2000
    batch_size: int = 256
    learning_rate: float = 3e-3
    adam_betas: tuple = (0.9, 0.999)
    split: float = 0.8
    seed: int = 0
    hidden_dim: int = 16
    depth_blocks: int = 2
    final_lr_fraction: float = 0.01
    input_scale: float = 1.0 / SAMPLE_RANGE

    def __post_init__(self):
        if not 0.0 < self.split < 1.0:
            raise ValueError(f"split must lie in (0, 1), got {self.split}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


@dataclass
class TrainHistory:
    epoch: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    distance_mse: list = field(default_factory=list)
    best_epoch: int = -1
    seconds: float = 0.0

    def to_csv(self) -> str:
        rows = ["epoch,train_loss,test_loss,distance_mse"]
        for row in zip(self.epoch, self.train_loss, self.test_loss, self.distance_mse):
            rows.append("%d,%.10e,%.10e,%.10e" % row)
        return "\n".join(rows) + "\n"


def build_network(output_dim: int, hidden_dim: int = 16, depth_blocks: int = 2,
                  seed: int = 0, input_dim: int = 2) -> EncoderNetwork:
    """Stack ``depth_blocks`` pairs of [linear, layernorm, tanh] and [linear, relu]."""
    rng = np.random.default_rng(seed)

    def linear(n_in, n_out):
        bound = np.sqrt(6.0 / (n_in + n_out))
        return Layer("linear", rng.uniform(-bound, bound, (n_in, n_out)), np.zeros(n_out))

    layers = []
    n_in = input_dim
    for _ in range(depth_blocks):
        layers += [
            linear(n_in, hidden_dim),
            Layer("layernorm", np.ones((1, hidden_dim)), np.zeros(hidden_dim)),
            Layer("tanh"),
            linear(hidden_dim, hidden_dim),
            Layer("relu"),
        ]
        n_in = hidden_dim
    layers.append(linear(n_in, output_dim))
    return EncoderNetwork(layers)


def zero_network(output_dim: int, hidden_dim: int = 16, depth_blocks: int = 2) -> EncoderNetwork:
    net = build_network(output_dim, hidden_dim, depth_blocks)
    for layer in net.layers:
        if layer.kind == "linear":
            layer.weight[:] = 0.0
            layer.bias[:] = 0.0
    return net


# --- forward / backward -----------------------------------------------------


def _forward_raw(net: EncoderNetwork, X: np.ndarray, keep: bool = False):
    caches = []
    a = X
    for layer in net.layers:
        if layer.kind == "linear":
            out = a @ layer.weight + layer.bias
            cache = a
        elif layer.kind == "layernorm":
            mean = a.mean(axis=1, keepdims=True)
            centered = a - mean
            inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + LN_EPS)
            xhat = centered * inv_std
            out = xhat * layer.weight[0] + layer.bias
            cache = (xhat, inv_std)
        elif layer.kind == "tanh":
            out = np.tanh(a)
            cache = out
        elif layer.kind == "relu":
            out = np.maximum(a, 0.0)
            cache = a
        else:
            raise ValueError(f"unknown layer kind {layer.kind!r}")
        if keep:
            caches.append(cache)
        a = out
    return a, caches


def _backward(net: EncoderNetwork, caches, grad_out: np.ndarray) -> list[np.ndarray]:
    """Gradients for :meth:`EncoderNetwork.params`, in the same order."""
    grads = []
    g = grad_out
    for layer, cache in zip(reversed(net.layers), reversed(caches)):
        if layer.kind == "linear":
            grads += [g.sum(axis=0), cache.T @ g]
            g = g @ layer.weight.T
        elif layer.kind == "layernorm":
            xhat, inv_std = cache
            grads += [g.sum(axis=0), (g * xhat).sum(axis=0, keepdims=True)]
            gx = g * layer.weight[0]
            g = inv_std * (gx - gx.mean(axis=1, keepdims=True)
                           - xhat * (gx * xhat).mean(axis=1, keepdims=True))
        elif layer.kind == "tanh":
            g = g * (1.0 - cache * cache)
        else:
            g = g * (cache > 0.0)
    grads.reverse()
    return grads


def _check_input(net: EncoderNetwork, points) -> np.ndarray:
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != net.input_dim:
        raise DimensionMismatch(f"expected points of shape (M, {net.input_dim}), got {X.shape}")
    return X


def forward(net: EncoderNetwork, points) -> np.ndarray:
    """Predicted multipliers ``(M, l)``, clamped to be nonnegative."""
    out, _ = _forward_raw(net, _check_input(net, points))
    return np.maximum(out, 0.0)


def constraint_slack(poly: ConvexPolygon, points_local: np.ndarray) -> np.ndarray:
    return points_local @ poly.G.T - poly.h


def dual_loss(mu_hat: np.ndarray, mu_star: np.ndarray, slack: np.ndarray):
    """Mean over the batch of ``|mu_hat - mu*|^2 + (mu_hat.c - mu*.c)^2``.

    Returns the loss and its gradient with respect to ``mu_hat``.
    """
    diff = mu_hat - mu_star
    ddist = np.einsum("ij,ij->i", diff, slack)
    n = mu_hat.shape[0]
    loss = (np.einsum("ij,ij->", diff, diff) + ddist @ ddist) / n
    grad = 2.0 / n * (diff + ddist[:, None] * slack)
    return loss, grad


def served_loss(raw: np.ndarray, mu_star: np.ndarray, slack: np.ndarray):
    """Training loss: multiplier term on the raw outputs, distance term on the
    clamped outputs that :func:`forward` serves.

    Returns the loss and its gradient with respect to ``raw``.
    """
    n = raw.shape[0]
    diff = raw - mu_star
    active = raw > 0.0
    ddist = np.einsum("ij,ij->i", np.maximum(raw, 0.0) - mu_star, slack)
    loss = (np.einsum("ij,ij->", diff, diff) + ddist @ ddist) / n
    grad = 2.0 / n * (diff + ddist[:, None] * slack * active)
    return loss, grad


def loss_and_grads(net: EncoderNetwork, X, mu_star, slack):
    out, caches = _forward_raw(net, X, keep=True)
    loss, g = served_loss(out, mu_star, slack)
    return loss, _backward(net, caches, g)


# --- data and training ------------------------------------------------------


def generate_dataset(poly: ConvexPolygon, n_samples: int, seed: int = 0,
                     sample_range: float = SAMPLE_RANGE) -> TrainingDataset:
    """Uniform points on ``[-r, r]^2`` labelled with dual-optimal multipliers."""
    rng = np.random.default_rng(seed)
    points = np.empty((0, 2))
    labels = np.empty((0, poly.edge_count))
    attempts = 0
    while points.shape[0] < n_samples:
        need = n_samples - points.shape[0]
        if attempts + need > 3 * n_samples:
            raise SolverFailure(f"dual solver failed to converge on too many of {attempts} samples")
        cand = rng.uniform(-sample_range, sample_range, size=(need, 2))
        attempts += need
        mu, _, ok, _ = solve_dual_bcd_batch(poly, cand)
        points = np.vstack([points, cand[ok]])
        labels = np.vstack([labels, mu[ok]])
    return TrainingDataset(points, labels, poly.id_hash)


def _split(n: int, cfg: TrainConfig):
    perm = np.random.default_rng(cfg.seed).permutation(n)
    n_train = int(round(cfg.split * n))
    return perm[:n_train], perm[n_train:]


def evaluate(net: EncoderNetwork, poly: ConvexPolygon, X: np.ndarray, mu_star: np.ndarray):
    """Held-out ``(loss, distance_mse)``; the distance term uses served outputs."""
    return _evaluate(net, X, mu_star, constraint_slack(poly, X))


def _evaluate(net, X, mu_star, slack):
    raw, _ = _forward_raw(net, X)
    loss, _ = served_loss(raw, mu_star, slack)
    mu_hat = np.maximum(raw, 0.0)
    ddist = np.einsum("ij,ij->i", mu_hat - mu_star, slack)
    return float(loss), float(np.mean(ddist * ddist))


def train(poly: ConvexPolygon, data: TrainingDataset, cfg: TrainConfig | None = None,
          history: TrainHistory | None = None, time_budget: float | None = None) -> EncoderNetwork:
    """Fit an encoder with Adam; returns the weights with the best held-out loss.

    The step size follows a cosine schedule from ``learning_rate`` down to
    ``final_lr_fraction * learning_rate``. Inputs are multiplied by
    ``input_scale`` during optimization and the factor is folded into the
    first layer afterwards, so the returned network takes raw local points.
    Pass a :class:`TrainHistory` to collect per-epoch loss curves.
    """
    cfg = cfg or TrainConfig()
    if data.polygon_id != poly.id_hash:
        raise PolygonMismatch("dataset was generated for a different polygon")
    if data.labels_mu.shape[1] != poly.edge_count:
        raise DimensionMismatch("label width does not match polygon edge count")
    history = history if history is not None else TrainHistory()
    t0 = time.perf_counter()

    tr, te = _split(len(data), cfg)
    Ctr = constraint_slack(poly, data.points[tr])
    Cte = constraint_slack(poly, data.points[te])
    Xtr, Ytr = data.points[tr] * cfg.input_scale, data.labels_mu[tr]
    Xte, Yte = data.points[te] * cfg.input_scale, data.labels_mu[te]

    net = build_network(poly.edge_count, cfg.hidden_dim, cfg.depth_blocks, seed=cfg.seed)
    net.polygon_hash = poly.id_hash
    params = net.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    b1, b2 = cfg.adam_betas
    rng = np.random.default_rng(cfg.seed + 1)
    best, best_loss = net.copy(), np.inf
    if len(te):
        best_loss, _ = _evaluate(net, Xte, Yte, Cte)
    n_train = Xtr.shape[0]
    t = 0
    for epoch in range(cfg.epochs):
        frac = epoch / max(cfg.epochs - 1, 1)
        lr = cfg.learning_rate * (cfg.final_lr_fraction
                                  + (1 - cfg.final_lr_fraction) * 0.5 * (1 + np.cos(np.pi * frac)))
        order = rng.permutation(n_train)
        total = 0.0
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(net, Xtr[idx], Ytr[idx], Ctr[idx])
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss} at epoch {epoch}")
            total += loss * len(idx)
            t += 1
            corr1 = 1.0 - b1 ** t
            corr2 = 1.0 - b2 ** t
            for p, g, mm, vv in zip(params, grads, m, v):
                mm *= b1
                mm += (1.0 - b1) * g
                vv *= b2
                vv += (1.0 - b2) * g * g
                p -= lr * (mm / corr1) / (np.sqrt(vv / corr2) + 1e-8)
        test_loss, dmse = _evaluate(net, Xte, Yte, Cte) if len(te) else (np.nan, np.nan)
        history.epoch.append(epoch)
        history.train_loss.append(total / n_train)
        history.test_loss.append(test_loss)
        history.distance_mse.append(dmse)
        if test_loss < best_loss:
            best_loss = test_loss
            best = net.copy()
            history.best_epoch = epoch
        if time_budget is not None and time.perf_counter() - t0 > time_budget:
            logger.warning("training stopped by time budget after %d epochs", epoch + 1)
            break
    history.seconds = time.perf_counter() - t0
    if not len(te):
        best = net
    best.layers[0].weight *= cfg.input_scale
    return best


def predict_distance(net: EncoderNetwork, poly: ConvexPolygon, pose: Pose2D, world_points):
    """Per-point signed distances and their minimum.

    Points inside the polygon use the exact penetration depth; the network
    is only trusted outside.
    """
    pts = np.asarray(getattr(world_points, "points", world_points), dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise EmptyCloud("point cloud is empty")
    if net.output_dim != poly.edge_count:
        raise DimensionMismatch(f"network outputs {net.output_dim} multipliers, polygon has {poly.edge_count} edges")
    local = pose.to_local(pts)
    slack = constraint_slack(poly, local)
    d = np.einsum("ij,ij->i", forward(net, local), slack)
    worst = slack.max(axis=1)
    inside = worst <= 0.0
    d[inside] = worst[inside]
    return d, float(d.min())


# --- serialization ----------------------------------------------------------


def save_weights(net: EncoderNetwork) -> bytes:
    """Little-endian: magic, u16 version, 32-byte polygon hash, u32 layer count,
    then per layer u8 kind tag, u32 rows, u32 cols, rows*cols f8 weights
    (row-major) and cols f8 bias."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", VERSION))
    buf.write(net.polygon_hash.ljust(32, b"\x00")[:32])
    buf.write(struct.pack("<I", len(net.layers)))
    for layer in net.layers:
        rows, cols = layer.weight.shape
        buf.write(struct.pack("<BII", _KIND_TAG[layer.kind], rows, cols))
        buf.write(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return buf.getvalue()


def load_weights(data: bytes, poly: ConvexPolygon | None = None) -> EncoderNetwork:
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CorruptWeights("weight stream is truncated")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise CorruptWeights("bad magic bytes")
    (version,) = struct.unpack("<H", take(2))
    if version != VERSION:
        raise CorruptWeights(f"unsupported weight file version {version}")
    phash = bytes(take(32))
    (n_layers,) = struct.unpack("<I", take(4))
    layers = []
    for _ in range(n_layers):
        tag, rows, cols = struct.unpack("<BII", take(9))
        if tag >= len(KINDS):
            raise CorruptWeights(f"unknown layer tag {tag}")
        w = np.frombuffer(take(8 * rows * cols), dtype="<f8").reshape(rows, cols).astype(float)
        b = np.frombuffer(take(8 * cols), dtype="<f8").astype(float)
        layers.append(Layer(KINDS[tag], w, b))
    if pos != len(view):
        raise CorruptWeights("trailing bytes after last layer")
    if not layers or layers[-1].kind != "linear":
        raise CorruptWeights("network must end with a linear layer")
    net = EncoderNetwork(layers, phash)
    if poly is not None:
        if net.output_dim != poly.edge_count:
            raise DimensionMismatch(f"weights output {net.output_dim} multipliers, polygon has {poly.edge_count} edges")
        if phash != poly.id_hash:
            raise PolygonMismatch("weights were trained for a different polygon")
    return net


# --- estimator facade -------------------------------------------------------


class DualEncoder(RegressorMixin, BaseEstimator):
    """Scikit-learn style wrapper: ``fit(points, mu_labels)`` then ``predict``.

    ``predict`` returns clamped multipliers; :meth:`predict_distance` turns
    local-frame points into signed distances.
    """

    def __init__(self, polygon=None, hidden_dim=16, depth_blocks=2, epochs=2000,
                 batch_size=256, learning_rate=3e-3, beta1=0.9, beta2=0.999,
                 validation_fraction=0.2, random_state=0):
        self.polygon = polygon
        self.hidden_dim = hidden_dim
        self.depth_blocks = depth_blocks
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
            adam_betas=(self.beta1, self.beta2), split=1.0 - self.validation_fraction,
            seed=self.random_state, hidden_dim=self.hidden_dim, depth_blocks=self.depth_blocks,
        )

    def fit(self, X, y=None):
        if self.polygon is None:
            raise ValueError("DualEncoder needs a polygon to fit")
        X = check_array(X)
        if y is None:
            data = generate_dataset(self.polygon, X.shape[0], seed=self.random_state)
            X, y = data.points, data.labels_mu
        y = check_array(y)
        if X.shape[1] != 2 or y.shape != (X.shape[0], self.polygon.edge_count):
            raise DimensionMismatch("expected X (M, 2) and y (M, edge_count)")
        self.history_ = TrainHistory()
        data = TrainingDataset(X, y, self.polygon.id_hash)
        self.network_ = train(self.polygon, data, self._config(), self.history_)
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        return forward(self.network_, check_array(X))

    def predict_distance(self, X):
        check_is_fitted(self, "network_")
        d, _ = predict_distance(self.network_, self.polygon, Pose2D.identity(), check_array(X))
        return d

    @classmethod
    def from_network(cls, network: EncoderNetwork, polygon: ConvexPolygon) -> "DualEncoder":
        est = cls(polygon=polygon, hidden_dim=network.hidden_dim, depth_blocks=network.depth_blocks)
        est.network_ = network
        est.n_features_in_ = 2
        return est
