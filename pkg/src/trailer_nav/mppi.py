"""Model predictive path integral control for the tractor-trailer.

Each control step samples ``K`` perturbed copies of the nominal control
sequence, rolls them out through the kinematic model, scores them with goal,
effort, smoothness, articulation, obstacle and terminal costs, and replaces
the nominal sequence by the exponentially weighted average of the samples.

Cost of one rollout with states ``s_0 .. s_N`` and controls ``u_0 .. u_{N-1}``::

    J = goal(s_0) + artic(s_0)
        + sum_tau running_cost(s_{tau+1}, u_tau, u_{tau-1}, d(s_{tau+1}))
        + terminal(s_N)

where ``u_{-1}`` is the control applied at the previous step.
"""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field

import numba
import numpy as np
from numba import prange
from sklearn.base import BaseEstimator

from .distance import BodyPack, body_cloud_distance
from .exceptions import DegenerateWeights
from .geometry import cloud_points
from .vehicle import (
    ControlInput,
    VehicleParams,
    VehicleState,
    footprint,
    step,
    step_kernel,
    wrap_angle,
)

logger = logging.getLogger(__name__)

WORKERS_ENV = "TRAILER_NAV_WORKERS"

GOAL_WEIGHTS = (1.0, 1.0, 0.5, 0.5, 0.0, 0.0)


def _diag(values, n):
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 2:
        arr = np.diag(arr)
    if arr.shape != (n,):
        raise ValueError(f"expected {n} diagonal weights, got shape {arr.shape}")
    return arr


@dataclass
class MppiConfig:
    """Controller hyperparameters; weight matrices are stored as diagonals."""

    horizon: int = 50
    samples: int = 1000
    dt: float = 0.1
    sigma_w: tuple = (2.0, 2.0)
    lambda_temp: float = 1.0
    W_g: tuple = GOAL_WEIGHTS
    W_u: tuple = (0.1, 0.1)
    W_du: tuple = (0.1, 0.1)
    w_phi: float = 1.0
    w_obs: float = 5.0
    w_coll: float = 50.0
    W_T: tuple = tuple(10.0 * w for w in GOAL_WEIGHTS)
    epsilon_bar: float = 0.01
    empty_distance: float = 20.0
    seed: int = 0

    def __post_init__(self):
        for name, n in (("W_g", 6), ("W_T", 6), ("W_u", 2), ("W_du", 2), ("sigma_w", 2)):
            setattr(self, name, tuple(float(v) for v in _diag(getattr(self, name), n)))
        if self.horizon < 1 or self.samples < 1:
            raise ValueError("horizon and samples must be >= 1")
        if not self.lambda_temp > 0:
            raise ValueError("lambda_temp must be positive")
        if not self.epsilon_bar > 0:
            raise ValueError("epsilon_bar must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        weights = self.W_g + self.W_T + self.W_u + self.W_du + self.sigma_w
        if min(weights) < 0 or min(self.w_phi, self.w_obs, self.w_coll) < 0:
            raise ValueError("weights and noise variances must be nonnegative")

    def cost_vector(self) -> np.ndarray:
        """Packed weights for the compiled cost: W_g, W_u, W_du, W_T, scalars."""
        return np.array(self.W_g + self.W_u + self.W_du + self.W_T
                        + (self.w_phi, self.w_obs, self.w_coll, self.epsilon_bar))


@dataclass
class Rollout:
    states: list
    controls: list
    min_dists: np.ndarray
    cost: float


@dataclass
class ControllerState:
    nominal_controls: np.ndarray
    t: int = 0
    last_control: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @classmethod
    def zeros(cls, horizon: int) -> "ControllerState":
        return cls(np.zeros((horizon, 2)))


def set_workers(n: int | None = None) -> int:
    """Thread count for rollout kernels; defaults to ``$TRAILER_NAV_WORKERS``."""
    if n is None:
        env = os.environ.get(WORKERS_ENV)
        if not env:
            return numba.get_num_threads()
        n = int(env)
    n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(n)
    return n


# --- noise ------------------------------------------------------------------


def sample_noise_block(cfg: MppiConfig, t: int = 0, samples: int | None = None) -> np.ndarray:
    """All perturbations of control step ``t``, shape ``(K, N, 2)``.

    Entry ``[k, tau]`` depends only on ``(cfg.seed, t, k, tau)`` for a fixed
    sample count.
    """
    K = cfg.samples if samples is None else samples
    rng = np.random.default_rng([cfg.seed, t])
    z = rng.standard_normal((K, cfg.horizon, 2))
    return z * np.sqrt(np.asarray(cfg.sigma_w))


def sample_noise(cfg: MppiConfig, k: int, tau: int, t: int = 0) -> np.ndarray:
    return sample_noise_block(cfg, t)[k, tau]


# --- costs ------------------------------------------------------------------


@numba.njit(cache=True)
def _goal_cost(x, y, th, ph, v, ps, goal, w):
    e0 = x - goal[0]
    e1 = y - goal[1]
    e2 = wrap_angle(th - goal[2])
    e3 = wrap_angle(ph - goal[3])
    e4 = v - goal[4]
    e5 = ps - goal[5]
    return w[0] * e0 * e0 + w[1] * e1 * e1 + w[2] * e2 * e2 + w[3] * e3 * e3 + w[4] * e4 * e4 + w[5] * e5 * e5


@numba.njit(cache=True)
def _obstacle_cost(d, w_obs, w_coll, eps):
    if d > 0.0:
        return w_obs / (d + eps)
    return w_coll * abs(d)


@numba.njit(cache=True)
def _running_cost(x, y, th, ph, v, ps, a, z, pa, pz, d, goal, cw):
    c = _goal_cost(x, y, th, ph, v, ps, goal, cw[0:6])
    c += cw[6] * a * a + cw[7] * z * z
    da = a - pa
    dz = z - pz
    c += cw[8] * da * da + cw[9] * dz * dz
    c += cw[16] * ph * ph
    c += _obstacle_cost(d, cw[17], cw[18], cw[19])
    return c


def obstacle_cost(d: float, cfg: MppiConfig) -> float:
    return float(_obstacle_cost(float(d), cfg.w_obs, cfg.w_coll, cfg.epsilon_bar))


def goal_cost(state: VehicleState, goal, weights) -> float:
    return float(_goal_cost(*state.to_array(), np.asarray(goal, dtype=float), np.asarray(weights, dtype=float)))


def terminal_cost(state: VehicleState, goal, cfg: MppiConfig) -> float:
    return goal_cost(state, goal, cfg.W_T)


def running_cost(state: VehicleState, u: ControlInput, prev_u: ControlInput, min_dist: float,
                 goal, cfg: MppiConfig) -> float:
    """Goal, effort, smoothness, articulation and obstacle terms for one step.

    Angle residuals are wrapped before weighting. The terminal term is not
    included.
    """
    if not np.isfinite(min_dist) and min_dist < 0:
        raise ValueError("min_dist must not be -inf")
    return float(_running_cost(*state.to_array(), float(u.a), float(u.zeta), float(prev_u.a),
                               float(prev_u.zeta), float(min_dist),
                               np.asarray(goal, dtype=float), cfg.cost_vector()))


# --- rollouts ---------------------------------------------------------------


@numba.njit(parallel=True, cache=True)
def _rollouts_kernel(s0, controls, u_prev, dt, kin, goal, cw, G, h, verts, n_edges, body,
                     centroid, radius, cloud, sentinel, mode, margin, meta, n_layers, flat, width):
    K, N = controls.shape[0], controls.shape[1]
    costs = np.empty(K)
    dists = np.empty((K, N))
    states = np.empty((K, N + 1, 6))
    L1, Lh = kin[1], kin[2]
    for k in prange(K):
        buf = np.empty((2, width))
        x, y, th, ph, v, ps = s0[0], s0[1], s0[2], s0[3], s0[4], s0[5]
        states[k, 0, :] = s0
        J = _goal_cost(x, y, th, ph, v, ps, goal, cw[0:6]) + cw[16] * ph * ph
        pa, pz = u_prev[0], u_prev[1]
        for tau in range(N):
            a = controls[k, tau, 0]
            z = controls[k, tau, 1]
            x, y, th, ph, v, ps = step_kernel(x, y, th, ph, v, ps, a, z, dt, kin)
            states[k, tau + 1, 0] = x
            states[k, tau + 1, 1] = y
            states[k, tau + 1, 2] = th
            states[k, tau + 1, 3] = ph
            states[k, tau + 1, 4] = v
            states[k, tau + 1, 5] = ps
            d = body_cloud_distance(x, y, th, ph, L1, Lh, G, h, verts, n_edges, body, centroid,
                                    radius, cloud, sentinel, mode, margin, meta, n_layers, flat, buf)
            dists[k, tau] = d
            J += _running_cost(x, y, th, ph, v, ps, a, z, pa, pz, d, goal, cw)
            pa, pz = a, z
        J += _goal_cost(x, y, th, ph, v, ps, goal, cw[10:16])
        costs[k] = J
    return costs, dists, states


def clamp_controls(controls: np.ndarray, params: VehicleParams) -> np.ndarray:
    out = np.array(controls, dtype=float, copy=True)
    np.clip(out[..., 0], -params.a_limit, params.a_limit, out=out[..., 0])
    np.clip(out[..., 1], -params.zeta_limit, params.zeta_limit, out=out[..., 1])
    return out


def batch_rollouts(initial: VehicleState, controls: np.ndarray, goal, cfg: MppiConfig,
                   distance_fn, params: VehicleParams, cloud, prev_control=None):
    """Costs ``(K,)``, per-step distances ``(K, N)`` and states ``(K, N+1, 6)``
    for already clamped control samples ``(K, N, 2)``, via the compiled kernel."""
    pack = BodyPack(params)
    meta, n_layers, flat, width = distance_fn.networks_pack(params)
    prev = np.zeros(2) if prev_control is None else np.asarray(prev_control, dtype=float)
    return _rollouts_kernel(
        initial.to_array(), np.ascontiguousarray(controls, dtype=float), prev, float(cfg.dt),
        params.kin, np.asarray(goal, dtype=float), cfg.cost_vector(), pack.G, pack.h, pack.verts,
        pack.n_edges, pack.body, pack.centroid, pack.radius,
        np.ascontiguousarray(cloud_points(cloud)), float(cfg.empty_distance),
        int(distance_fn.mode), float(distance_fn.margin), meta, n_layers, flat, int(width),
    )


def evaluate_rollout(initial: VehicleState, controls, goal, cfg: MppiConfig, distance_fn,
                     params: VehicleParams, cloud, prev_control=None) -> Rollout:
    """Reference (uncompiled) rollout of one control sequence.

    ``distance_fn(footprint, cloud)`` supplies the signed body clearance; an
    empty cloud uses ``cfg.empty_distance`` instead.
    """
    goal = np.asarray(goal, dtype=float)
    controls = [c if isinstance(c, ControlInput) else ControlInput(*map(float, c)) for c in controls]
    prev = ControlInput() if prev_control is None else (
        prev_control if isinstance(prev_control, ControlInput) else ControlInput(*map(float, prev_control)))
    empty = cloud_points(cloud).shape[0] == 0
    s = initial
    states = [s]
    dists = np.empty(len(controls))
    J = goal_cost(s, goal, cfg.W_g) + cfg.w_phi * s.phi ** 2
    for tau, u in enumerate(controls):
        s = step(s, u, cfg.dt, params)
        states.append(s)
        d = cfg.empty_distance if empty else float(distance_fn(footprint(s, params), cloud))
        dists[tau] = d
        J += running_cost(s, u, prev, d, goal, cfg)
        prev = u
    J += terminal_cost(s, goal, cfg)
    return Rollout(states, controls, dists, float(J))


def importance_weights(costs, lambda_temp: float) -> np.ndarray:
    """Normalized ``exp(-(J - min J) / lambda)`` weights."""
    J = np.asarray(costs, dtype=float)
    J = np.where(np.isnan(J), np.inf, J)
    finite = np.isfinite(J)
    if not finite.any():
        raise DegenerateWeights("every rollout cost is infinite")
    w = np.zeros_like(J)
    w[finite] = np.exp(-(J[finite] - J[finite].min()) / lambda_temp)
    return w / w.sum()


def update_controls(costs, sampled_controls: np.ndarray, cfg: MppiConfig,
                    params: VehicleParams | None = None):
    """Weighted average of the sampled control sequences.

    Returns ``(nominal (N, 2), weights (K,))``. The sum over samples runs in
    index order, so the result does not depend on how the rollouts were
    scheduled.
    """
    w = importance_weights(costs, cfg.lambda_temp)
    nominal = np.tensordot(w, np.asarray(sampled_controls, dtype=float), axes=(0, 0))
    if params is not None:
        nominal = clamp_controls(nominal, params)
    return nominal, w


def shift(nominal: np.ndarray) -> np.ndarray:
    out = np.empty_like(nominal)
    out[:-1] = nominal[1:]
    out[-1] = nominal[-1]
    return out


def control_step(ctrl: ControllerState, current: VehicleState, cloud, goal, cfg: MppiConfig,
                 distance_fn, params: VehicleParams):
    """One MPPI update; returns the control to apply and a diagnostics dict.

    ``ctrl`` is advanced in place: its nominal sequence is replaced by the
    updated one shifted left by a step.
    """
    t0 = time.perf_counter()
    noise = sample_noise_block(cfg, ctrl.t)
    samples = clamp_controls(ctrl.nominal_controls[None, :, :] + noise, params)
    if hasattr(distance_fn, "networks_pack"):
        costs, dists, states = batch_rollouts(current, samples, goal, cfg, distance_fn, params,
                                              cloud, ctrl.last_control)
    else:
        rolls = [evaluate_rollout(current, samples[k], goal, cfg, distance_fn, params, cloud,
                                  ctrl.last_control) for k in range(samples.shape[0])]
        costs = np.array([r.cost for r in rolls])
        dists = np.array([r.min_dists for r in rolls])
        states = np.array([[s.to_array() for s in r.states] for r in rolls])
    nominal, weights = update_controls(costs, samples, cfg, params)
    u = ControlInput(float(nominal[0, 0]), float(nominal[0, 1]))
    best = int(np.argmin(costs))
    diagnostics = {
        "best_cost": float(costs[best]),
        "mean_cost": float(np.mean(costs)),
        "min_dist": float(dists[best].min()),
        "wall_ms": 1e3 * (time.perf_counter() - t0),
        "weights": weights,
        "costs": costs,
        "states": states,
        "nominal": nominal,
        "best": best,
    }
    ctrl.nominal_controls = shift(nominal)
    ctrl.last_control = nominal[0].copy()
    ctrl.t += 1
    return u, diagnostics


class MPPIController(BaseEstimator):
    """Receding-horizon wrapper holding the nominal sequence between calls."""

    def __init__(self, config=None, params=None, distance_fn=None):
        self.config = config
        self.params = params
        self.distance_fn = distance_fn

    def reset(self):
        cfg = self.config or MppiConfig()
        self.state_ = ControllerState.zeros(cfg.horizon)
        return self

    def control(self, current: VehicleState, cloud, goal):
        if not hasattr(self, "state_"):
            self.reset()
        return control_step(self.state_, current, cloud, goal, self.config or MppiConfig(),
                            self.distance_fn, self.params or VehicleParams())
