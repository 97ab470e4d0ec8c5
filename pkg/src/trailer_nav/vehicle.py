"""Kinematics of a tractor towing one off-axle hitched trailer.

State ``[x, y, theta, phi, v, psi]``: tractor rear-axle position, tractor
heading, articulation angle (trailer heading minus tractor heading),
longitudinal speed and steering angle. Inputs are acceleration ``a`` and
steering rate ``zeta``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .exceptions import ConfigError, SteeringSingularity
from .geometry import ConvexPolygon, Pose2D, make_polygon, rectangle


@numba.njit(cache=True)
def wrap_angle(a):
    """Wrap to ``(-pi, pi]``; angles already in range come back unchanged."""
    if -math.pi < a <= math.pi:
        return a
    return math.pi - (math.pi - a) % (2.0 * math.pi)


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0
    phi: float = 0.0
    v: float = 0.0
    psi: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.phi, self.v, self.psi], dtype=float)

    @classmethod
    def from_array(cls, s) -> "VehicleState":
        s = np.asarray(s, dtype=float).reshape(6)
        return cls(*(float(v) for v in s))

    @property
    def pose(self) -> Pose2D:
        return Pose2D.from_xytheta(self.x, self.y, self.theta)


@dataclass(frozen=True)
class ControlInput:
    a: float = 0.0
    zeta: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array([self.a, self.zeta], dtype=float)


def default_tractor_polygons() -> list[ConvexPolygon]:
    # 3.35 m long, 1.48 m wide; rear axle 0.8 m ahead of the rear edge
    return [rectangle(-0.8, 2.55, -0.74, 0.74)]


def default_trailer_polygons(L1: float = 1.5) -> list[ConvexPolygon]:
    # trailer frame origin at the trailer axle, hitch at (L1, 0)
    front = L1 - 0.5
    box = rectangle(front - 3.6, front, -0.6, 0.6)
    connector = make_polygon([(front, -0.4), (L1, 0.0), (front, 0.4)])
    return [box, connector]


@dataclass
class VehicleParams:
    L0: float = 1.9
    L1: float = 1.5
    Lh: float = 0.5
    body_polygons_tractor: list = field(default_factory=default_tractor_polygons)
    body_polygons_trailer: list = field(default_factory=default_trailer_polygons)
    v_limits: tuple = (-2.0, 3.0)
    psi_limit: float = 0.6
    a_limit: float = 1.5
    zeta_limit: float = 1.0
    phi_limit: float = 1.4

    def __post_init__(self):
        if not (self.L0 > 0 and self.L1 > 0 and self.Lh >= 0):
            raise ConfigError("need L0 > 0, L1 > 0 and Lh >= 0")
        lo, hi = self.v_limits
        if not lo <= hi:
            raise ConfigError(f"empty speed interval {self.v_limits}")
        for name in ("psi_limit", "a_limit", "zeta_limit", "phi_limit"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if not self.body_polygons_tractor or not self.body_polygons_trailer:
            raise ConfigError("each body needs at least one polygon")

    @property
    def polygons(self) -> list[ConvexPolygon]:
        return list(self.body_polygons_tractor) + list(self.body_polygons_trailer)

    @property
    def kin(self) -> np.ndarray:
        """Packed scalars for the compiled step kernel."""
        return np.array([
            self.L0, self.L1, self.Lh, self.v_limits[0], self.v_limits[1],
            self.psi_limit, self.a_limit, self.zeta_limit,
        ])


@numba.njit(cache=True)
def _rates(theta, phi, v, psi, L0, L1, Lh):
    tp = math.tan(psi)
    return (
        v * math.cos(theta),
        v * math.sin(theta),
        v / L0 * tp,
        v * (-math.sin(phi) / L1 - tp / L0 - Lh * math.cos(phi) * tp / (L0 * L1)),
    )


@numba.njit(cache=True)
def step_kernel(x, y, th, ph, v, ps, a, zeta, dt, kin):
    """Euler step of the augmented state; returns the six new components.

    Order: clamp the input, integrate pose with the current ``(v, psi)``,
    integrate ``(v, psi)``, clamp them, wrap the angles.
    """
    L0, L1, Lh = kin[0], kin[1], kin[2]
    a = min(max(a, -kin[6]), kin[6])
    zeta = min(max(zeta, -kin[7]), kin[7])
    dx, dy, dth, dph = _rates(th, ph, v, ps, L0, L1, Lh)
    nx = x + dx * dt
    ny = y + dy * dt
    nth = th + dth * dt
    nph = ph + dph * dt
    nv = min(max(v + a * dt, kin[3]), kin[4])
    nps = min(max(ps + zeta * dt, -kin[5]), kin[5])
    return nx, ny, wrap_angle(nth), wrap_angle(nph), nv, nps


@numba.njit(cache=True)
def trailer_pose_kernel(x, y, th, ph, L1, Lh):
    th1 = th + ph
    xh = x - Lh * math.cos(th)
    yh = y - Lh * math.sin(th)
    return xh - L1 * math.cos(th1), yh - L1 * math.sin(th1), th1


def derivatives(state: VehicleState, params: VehicleParams) -> np.ndarray:
    """Rates ``(x', y', theta', phi')`` of the continuous-time model."""
    if abs(state.psi) >= math.pi / 2:
        raise SteeringSingularity(f"|psi| = {abs(state.psi)} reaches pi/2")
    return np.array(_rates(state.theta, state.phi, state.v, state.psi, params.L0, params.L1, params.Lh))


def step(state: VehicleState, u: ControlInput, dt: float, params: VehicleParams) -> VehicleState:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if abs(state.psi) >= math.pi / 2:
        raise SteeringSingularity(f"|psi| = {abs(state.psi)} reaches pi/2")
    out = step_kernel(state.x, state.y, state.theta, state.phi, state.v, state.psi,
                      float(u.a), float(u.zeta), float(dt), params.kin)
    return VehicleState(*out)


def hitch_point(state: VehicleState, params: VehicleParams) -> np.ndarray:
    return np.array([state.x - params.Lh * math.cos(state.theta),
                     state.y - params.Lh * math.sin(state.theta)])


def trailer_pose(state: VehicleState, params: VehicleParams) -> Pose2D:
    x1, y1, th1 = trailer_pose_kernel(state.x, state.y, state.theta, state.phi, params.L1, params.Lh)
    return Pose2D.from_xytheta(x1, y1, th1)


def footprint(state: VehicleState, params: VehicleParams) -> list[tuple[ConvexPolygon, Pose2D]]:
    """Every body polygon paired with its world pose, tractor first."""
    tractor = state.pose
    trailer = trailer_pose(state, params)
    return [(p, tractor) for p in params.body_polygons_tractor] + [
        (p, trailer) for p in params.body_polygons_trailer
    ]


def footprint_world(state: VehicleState, params: VehicleParams) -> list[np.ndarray]:
    return [pose.to_world(poly.vertices) for poly, pose in footprint(state, params)]
