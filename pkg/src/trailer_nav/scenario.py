"""Scenario files: world, vehicle, sensor and controller settings in YAML.

Units are meters, radians and seconds throughout. A world can list its
obstacles explicitly or describe a seeded obstacle field; the field is
expanded at load time so a loaded scenario always holds concrete polygons.
"""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from .encoder import TrainConfig
from .exceptions import ConfigError, GeometryError
from .geometry import Pose2D, make_polygon
from .mppi import MppiConfig
from .perception import LidarConfig, Obstacle, World
from .vehicle import VehicleParams, VehicleState

DESK = "desk"
PAPER = "paper"

PAPER_START = (10.0, 42.0, 0.0, 0.0, 0.0, 0.0)
PAPER_GOAL = (40.0, 12.0, -0.5, 0.0, 0.0, 0.0)


@dataclass
class GoalTolerance:
    position: float = 0.5
    heading: float = 0.2


@dataclass
class EncoderSettings:
    n_samples: int = 20000
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class Scenario:
    world: World = field(default_factory=World)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    mppi: MppiConfig = field(default_factory=lambda: MppiConfig(samples=256))
    start: tuple = PAPER_START
    goal: tuple = PAPER_GOAL
    max_steps: int = 1200
    distance_mode: str = "exact"
    tolerance: GoalTolerance = field(default_factory=GoalTolerance)
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    encoder_dir: str = "encoders"
    voxel: float = 0.0
    name: str = "scenario"

    def __post_init__(self):
        self.start = tuple(float(v) for v in self.start)
        self.goal = tuple(float(v) for v in self.goal)
        if len(self.start) != 6 or len(self.goal) != 6:
            raise ConfigError("start and goal must be 6-vectors [x, y, theta, phi, v, psi]")
        if self.distance_mode not in ("exact", "encoder"):
            raise ConfigError(f"distance_mode must be 'exact' or 'encoder', not {self.distance_mode!r}")

    @property
    def start_state(self) -> VehicleState:
        return VehicleState(*self.start)

    def validate(self) -> None:
        """Check that start and goal lie in bounds and the start pose is collision-free."""
        from .sim import footprint_clearance

        x0, x1, y0, y1 = self.world.bounds
        for name, s in (("start", self.start), ("goal", self.goal)):
            if not (x0 <= s[0] <= x1 and y0 <= s[1] <= y1):
                raise ConfigError(f"{name} position lies outside the world bounds")
        if self.world.obstacles and footprint_clearance(self.start_state, self) <= 0.0:
            raise ConfigError("start footprint overlaps an obstacle")

    def with_profile(self, profile: str) -> "Scenario":
        """Copy with the desk-scale or paper-scale sample counts."""
        out = copy.deepcopy(self)
        if profile == PAPER:
            out.mppi = replace(out.mppi, samples=1000)
            out.encoder.n_samples = 100000
            out.encoder.train = replace(out.encoder.train, epochs=5000)
        elif profile == DESK:
            out.mppi = replace(out.mppi, samples=256)
            out.encoder.n_samples = 20000
            out.encoder.train = replace(out.encoder.train, epochs=2000)
        else:
            raise ConfigError(f"unknown profile {profile!r}")
        return out


# --- obstacle field ---------------------------------------------------------


def _point_segment_distance(p, a, b):
    ab = b - a
    s = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return float(np.linalg.norm(p - (a + s * ab)))


def generate_obstacle_field(seed: int = 0, count: int = 40, bounds=(0.0, 50.0, 0.0, 50.0),
                            radius=(0.8, 2.0), gap: float = 0.6, corridor=None,
                            corridor_width: float = 6.0, keepout=(), keepout_radius: float = 6.0,
                            max_tries: int = 20000) -> list[Obstacle]:
    """Seeded, non-overlapping convex obstacles with a guaranteed free corridor.

    Each obstacle is a random convex polygon inscribed in a circle whose
    radius is drawn from ``radius``. Circles keep ``gap`` meters from each
    other, ``corridor_width / 2`` from the ``corridor`` polyline and
    ``keepout_radius`` from every ``keepout`` point.
    """
    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = bounds
    corridor = [np.asarray(p, dtype=float) for p in (corridor or [])]
    keepout = [np.asarray(p, dtype=float)[:2] for p in keepout]
    circles: list[tuple[np.ndarray, float]] = []
    obstacles = []
    tries = 0
    while len(obstacles) < count and tries < max_tries:
        tries += 1
        r = rng.uniform(*radius)
        c = np.array([rng.uniform(x0 + r, x1 - r), rng.uniform(y0 + r, y1 - r)])
        if any(np.linalg.norm(c - oc) < r + orad + gap for oc, orad in circles):
            continue
        if any(_point_segment_distance(c, a, b) < r + corridor_width / 2
               for a, b in zip(corridor[:-1], corridor[1:])):
            continue
        if any(np.linalg.norm(c - k) < r + keepout_radius for k in keepout):
            continue
        n = int(rng.integers(4, 8))
        angles = np.sort(rng.uniform(0.0, 2 * np.pi, n))
        gaps = np.diff(np.concatenate([angles, angles[:1] + 2 * np.pi]))
        if gaps.max() > np.pi * 0.9:
            continue
        verts = c + r * np.column_stack([np.cos(angles), np.sin(angles)])
        try:
            poly = make_polygon(np.round(verts, 3))
        except GeometryError:
            continue
        circles.append((c, r))
        obstacles.append(Obstacle(poly))
    return obstacles


# --- (de)serialization ------------------------------------------------------


def _f(v):
    return [float(x) for x in v]


def _polys_to_yaml(polys):
    return [[_f(p) for p in poly.vertices] for poly in polys]


def _polys_from_yaml(data, what):
    try:
        return [make_polygon(v) for v in data]
    except GeometryError as exc:
        raise ConfigError(f"bad {what} polygon: {exc}") from exc


def _build(cls, data, what, **extra):
    data = dict(data or {})
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    data.update(extra)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {what} section: {exc}") from exc


def _world_from_yaml(data) -> World:
    data = dict(data or {})
    bounds = tuple(float(b) for b in data.pop("bounds", (0.0, 50.0, 0.0, 50.0)))
    obstacles = []
    for entry in data.pop("obstacles", []) or []:
        verts = np.asarray(entry["vertices"], dtype=float)
        if "pose" in entry:
            x, y, th = entry["pose"]
            verts = Pose2D.from_xytheta(x, y, th).to_world(verts)
        obstacles += [Obstacle(p) for p in _polys_from_yaml([verts], "obstacle")]
    gen = data.pop("generator", None)
    if gen:
        gen = dict(gen)
        gen.setdefault("bounds", bounds)
        try:
            obstacles += generate_obstacle_field(**gen)
        except TypeError as exc:
            raise ConfigError(f"invalid obstacle generator: {exc}") from exc
    if data:
        raise ConfigError(f"unknown world keys: {sorted(data)}")
    try:
        return World(obstacles, bounds)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def scenario_from_dict(data: dict) -> Scenario:
    data = dict(data)
    world = _world_from_yaml(data.pop("world", {}))
    veh = dict(data.pop("vehicle", {}) or {})
    polys = {}
    if "tractor_polygons" in veh:
        polys["body_polygons_tractor"] = _polys_from_yaml(veh.pop("tractor_polygons"), "tractor")
    if "trailer_polygons" in veh:
        polys["body_polygons_trailer"] = _polys_from_yaml(veh.pop("trailer_polygons"), "trailer")
    if "v_limits" in veh:
        veh["v_limits"] = tuple(float(v) for v in veh["v_limits"])
    vehicle = _build(VehicleParams, veh, "vehicle", **polys)
    lid = dict(data.pop("lidar", {}) or {})
    if "mount_offset" in lid:
        lid["mount_offset"] = tuple(float(v) for v in lid["mount_offset"])
    lidar = _build(LidarConfig, lid, "lidar")
    mppi_data = dict(data.pop("mppi", {}) or {})
    mppi_data.setdefault("empty_distance", lidar.max_range)
    mppi = _build(MppiConfig, mppi_data, "mppi")
    enc = dict(data.pop("encoder", {}) or {})
    train_data = dict(enc.pop("train", {}) or {})
    if "adam_betas" in train_data:
        train_data["adam_betas"] = tuple(float(b) for b in train_data["adam_betas"])
    encoder = _build(EncoderSettings, enc, "encoder", train=_build(TrainConfig, train_data, "encoder.train"))
    tol = _build(GoalTolerance, data.pop("tolerance", {}), "tolerance")
    return _build(Scenario, data, "scenario", world=world, vehicle=vehicle, lidar=lidar,
                  mppi=mppi, encoder=encoder, tolerance=tol)


def scenario_to_dict(sc: Scenario) -> dict:
    veh = sc.vehicle
    return {
        "name": sc.name,
        "start": _f(sc.start),
        "goal": _f(sc.goal),
        "max_steps": int(sc.max_steps),
        "distance_mode": sc.distance_mode,
        "encoder_dir": sc.encoder_dir,
        "voxel": float(sc.voxel),
        "tolerance": asdict(sc.tolerance),
        "world": {
            "bounds": _f(sc.world.bounds),
            "obstacles": [{"vertices": [_f(p) for p in ob.world_vertices]} for ob in sc.world.obstacles],
        },
        "vehicle": {
            "L0": float(veh.L0), "L1": float(veh.L1), "Lh": float(veh.Lh),
            "v_limits": _f(veh.v_limits), "psi_limit": float(veh.psi_limit),
            "a_limit": float(veh.a_limit), "zeta_limit": float(veh.zeta_limit),
            "phi_limit": float(veh.phi_limit),
            "tractor_polygons": _polys_to_yaml(veh.body_polygons_tractor),
            "trailer_polygons": _polys_to_yaml(veh.body_polygons_trailer),
        },
        "lidar": {
            "n_beams": int(sc.lidar.n_beams), "fov": float(sc.lidar.fov),
            "max_range": float(sc.lidar.max_range), "mount_offset": _f(sc.lidar.mount_offset),
            "noise_sigma": float(sc.lidar.noise_sigma),
        },
        "mppi": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(sc.mppi).items()},
        "encoder": {
            "n_samples": int(sc.encoder.n_samples),
            "train": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(sc.encoder.train).items()},
        },
    }


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"scenario {path} must be a mapping")
    return scenario_from_dict(data)


def dump_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False)


def save_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(dump_scenario(sc))


def shipped_scenario_path(name: str = "paper") -> Path:
    return Path(__file__).with_name("data") / f"{name}.yaml"


def paper_scenario(profile: str = DESK) -> Scenario:
    sc = load_scenario(shipped_scenario_path("paper"))
    return sc.with_profile(profile) if profile != DESK else sc


def empty_scenario(goal_ahead: float = 5.0) -> Scenario:
    start = (10.0, 25.0, 0.0, 0.0, 0.0, 0.0)
    goal = (10.0 + goal_ahead, 25.0, 0.0, 0.0, 0.0, 0.0)
    return Scenario(start=start, goal=goal, max_steps=300, name="empty")
