"""Closed-loop runs, encoder training and distance benchmarks for scenarios."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from shapely.geometry import Polygon as ShapelyPolygon

from .distance import EncoderDistance, ExactDistance
from .encoder import TrainHistory, generate_dataset, load_weights, predict_distance, save_weights, train
from .exceptions import EncoderMissing
from .geometry import signed_distances, solve_dual_bcd, solve_dual_bcd_batch
from .mppi import ControllerState, control_step, set_workers
from .perception import downsample, scan
from .scenario import Scenario
from .vehicle import ControlInput, VehicleState, footprint, footprint_world, step, wrap_angle

logger = logging.getLogger(__name__)

TRAJECTORY_HEADER = ["step", "x", "y", "theta", "phi", "v", "psi", "a", "zeta", "min_dist"]
DIAGNOSTICS_HEADER = ["t", "x", "y", "theta", "phi", "v", "psi", "a", "zeta", "min_dist",
                      "best_J", "mean_J", "wall_ms"]


@dataclass
class StepRecord:
    step: int
    state: VehicleState
    control: ControlInput
    min_dist: float
    wall_ms: float
    best_cost: float = float("nan")
    mean_cost: float = float("nan")


@dataclass
class RunResult:
    trajectory: list = field(default_factory=list)
    success: bool = False
    steps_used: int = 0
    min_clearance: float = float("inf")
    final_error: tuple = (float("inf"), float("inf"))
    final_state: VehicleState | None = None
    rollout_snapshot: np.ndarray | None = None

    def summary(self) -> dict:
        wall = [r.wall_ms for r in self.trajectory]
        return {
            "success": self.success,
            "steps_used": self.steps_used,
            "min_clearance": self.min_clearance,
            "final_position_error": self.final_error[0],
            "final_heading_error": self.final_error[1],
            "final_state": list(self.final_state.to_array()) if self.final_state else None,
            "mean_wall_ms": float(np.mean(wall)) if wall else None,
        }

    def trajectory_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for r in self.trajectory:
            s = r.state
            w.writerow([r.step] + [repr(float(v)) for v in
                                   (s.x, s.y, s.theta, s.phi, s.v, s.psi, r.control.a, r.control.zeta, r.min_dist)])
        return buf.getvalue()

    def diagnostics_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(DIAGNOSTICS_HEADER)
        for r in self.trajectory:
            s = r.state
            w.writerow([r.step] + ["%.9g" % v for v in
                                   (s.x, s.y, s.theta, s.phi, s.v, s.psi, r.control.a, r.control.zeta,
                                    r.min_dist, r.best_cost, r.mean_cost, r.wall_ms)])
        return buf.getvalue()


def goal_error(state: VehicleState, goal) -> tuple[float, float]:
    return (math.hypot(state.x - goal[0], state.y - goal[1]),
            abs(float(wrap_angle(state.theta - goal[2]))))


def _shapely(vertices) -> ShapelyPolygon:
    return ShapelyPolygon([tuple(p) for p in vertices])


def footprint_clearance(state: VehicleState, scenario: Scenario) -> float:
    """Exact distance between the whole body and the obstacle polygons.

    Zero means touching or overlapping. Independent of the LiDAR and of the
    point-distance code.
    """
    if not scenario.world.obstacles:
        return float("inf")
    body = [_shapely(v) for v in footprint_world(state, scenario.vehicle)]
    obs = [_shapely(o.world_vertices) for o in scenario.world.obstacles]
    return min(b.distance(o) for b in body for o in obs)


def audit_clearance(result: RunResult, scenario: Scenario) -> np.ndarray:
    states = [r.state for r in result.trajectory]
    if result.final_state is not None:
        states.append(result.final_state)
    return np.array([footprint_clearance(s, scenario) for s in states])


def encoder_paths(scenario: Scenario, out_dir) -> list[Path]:
    d = Path(out_dir)
    return [d / f"encoder_{i}.bin" for i in range(len(scenario.vehicle.polygons))]


def make_distance_fn(scenario: Scenario, encoder_dir=None):
    if scenario.distance_mode == "exact":
        return ExactDistance()
    paths = encoder_paths(scenario, encoder_dir or scenario.encoder_dir)
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise EncoderMissing(f"encoder weights not found: {', '.join(missing)}")
    return EncoderDistance.from_files(paths, scenario.vehicle)


def sense(scenario: Scenario, state: VehicleState, stamp: int):
    cloud = scan(scenario.world, state.pose, scenario.lidar, seed=scenario.mppi.seed, stamp=stamp)
    if scenario.voxel > 0:
        cloud = downsample(cloud, scenario.voxel)
    return cloud


def simulate(scenario: Scenario, distance_fn=None, encoder_dir=None, callback=None) -> RunResult:
    """Sense, plan, act until the goal tolerance is met or ``max_steps`` runs out."""
    scenario.validate()
    distance_fn = distance_fn or make_distance_fn(scenario, encoder_dir)
    cfg = scenario.mppi
    goal = np.asarray(scenario.goal)
    exact = ExactDistance()
    ctrl = ControllerState.zeros(cfg.horizon)
    state = scenario.start_state
    result = RunResult()
    for t in range(scenario.max_steps):
        cloud = sense(scenario, state, t)
        u, diag = control_step(ctrl, state, cloud, goal, cfg, distance_fn, scenario.vehicle)
        d_now = exact(footprint(state, scenario.vehicle), cloud) if len(cloud) else cfg.empty_distance
        result.trajectory.append(StepRecord(t, state, u, float(d_now), diag["wall_ms"],
                                            diag["best_cost"], diag["mean_cost"]))
        if t == 0:
            order = np.argsort(diag["costs"], kind="stable")[:64]
            result.rollout_snapshot = diag["states"][order]
        if callback is not None:
            callback(t, state, u, diag)
        state = step(state, u, cfg.dt, scenario.vehicle)
        pos_err, head_err = goal_error(state, goal)
        if pos_err < scenario.tolerance.position and head_err < scenario.tolerance.heading:
            result.success = True
            break
    result.final_state = state
    result.steps_used = len(result.trajectory)
    result.final_error = goal_error(state, goal)
    result.min_clearance = min(r.min_dist for r in result.trajectory)
    return result


def run_scenario(scenario: Scenario, out_dir, encoder_dir=None, plots: bool = True) -> RunResult:
    """:func:`simulate` plus trajectory, diagnostics, summary and plot files."""
    set_workers()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = simulate(scenario, encoder_dir=encoder_dir)
    (out / "trajectory.csv").write_text(result.trajectory_csv())
    (out / "diagnostics.csv").write_text(result.diagnostics_csv())
    summary = result.summary()
    audit = audit_clearance(result, scenario)
    summary["audit_min_clearance"] = float(audit.min()) if audit.size else None
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if plots:
        from .plots import render_plots

        render_plots(result, scenario, out)
    return result


def train_encoders(scenario: Scenario, out_dir, time_budget: float | None = None,
                   histories: list | None = None) -> list[Path]:
    """One encoder per body polygon; writes weights and loss-curve CSVs.

    Pass a list as ``histories`` to receive each :class:`TrainHistory`.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = encoder_paths(scenario, out)
    cfg = scenario.encoder.train
    for i, (poly, path) in enumerate(zip(scenario.vehicle.polygons, paths)):
        logger.info("training encoder %d (%d edges)", i, poly.edge_count)
        data = generate_dataset(poly, scenario.encoder.n_samples, seed=cfg.seed + i)
        hist = TrainHistory()
        net = train(poly, data, cfg, hist, time_budget=time_budget)
        path.write_bytes(save_weights(net))
        path.with_name(f"encoder_{i}_loss.csv").write_text(hist.to_csv())
        if histories is not None:
            histories.append(hist)
        logger.info("encoder %d: best epoch %d, test loss %.3e, distance mse %.3e, %.0f s",
                    i, hist.best_epoch, hist.test_loss[hist.best_epoch],
                    hist.distance_mse[hist.best_epoch], hist.seconds)
    return paths


def load_encoders(scenario: Scenario, encoder_dir) -> list:
    nets = []
    for path, poly in zip(encoder_paths(scenario, encoder_dir), scenario.vehicle.polygons):
        if not path.exists():
            raise EncoderMissing(f"encoder weights not found: {path}")
        nets.append(load_weights(path.read_bytes(), poly))
    return nets


BENCH_HEADER = ["method", "queries", "mean_ms", "mean_abs_err", "max_abs_err"]


def benchmark_distance(scenario: Scenario, n_queries: int, encoder_dir=None, n_points: int = 360,
                       seed: int = 0) -> list[dict]:
    """Time and compare the point-distance routes on random queries.

    A query is one random vehicle state plus ``n_points`` points scattered
    within 15 m of it and outside the body; each method reports the minimum
    body distance. ``dual_bcd`` calls :func:`solve_dual_bcd` once per point,
    ``dual_bcd_batch`` runs the compiled batch solver, ``encoder`` evaluates
    the trained networks. Errors are measured against the closed form.
    """
    nets = load_encoders(scenario, encoder_dir or scenario.encoder_dir)
    rng = np.random.default_rng(seed)
    x0, x1, y0, y1 = scenario.world.bounds
    queries = []
    for _ in range(n_queries):
        st = VehicleState(rng.uniform(x0, x1), rng.uniform(y0, y1), rng.uniform(-np.pi, np.pi),
                          rng.uniform(-0.8, 0.8))
        fp = footprint(st, scenario.vehicle)
        cloud = np.empty((0, 2))
        while cloud.shape[0] < n_points:
            cand = np.column_stack([st.x, st.y]) + rng.uniform(-15, 15, (n_points, 2))
            outside = np.all([signed_distances(p, pose.to_local(cand)) > 0 for p, pose in fp], axis=0)
            cloud = np.vstack([cloud, cand[outside]])
        queries.append((fp, cloud[:n_points]))

    def closed(fp, cloud):
        return min(signed_distances(p, pose.to_local(cloud)).min() for p, pose in fp)

    def dual(fp, cloud):
        best = np.inf
        for p, pose in fp:
            for q in pose.to_local(cloud):
                best = min(best, solve_dual_bcd(p, q).distance)
        return best

    def dual_batch(fp, cloud):
        return min(solve_dual_bcd_batch(p, pose.to_local(cloud))[1].min() for p, pose in fp)

    def enc(fp, cloud):
        return min(predict_distance(n, p, pose, cloud)[1] for n, (p, pose) in zip(nets, fp))

    # compile outside the timer
    solve_dual_bcd(queries[0][0][0][0], np.array([5.0, 5.0]))
    solve_dual_bcd_batch(queries[0][0][0][0], np.array([[5.0, 5.0]]))
    truth = None
    rows = []
    for name, fn in (("closed_form", closed), ("dual_bcd", dual), ("dual_bcd_batch", dual_batch),
                     ("encoder", enc)):
        vals = np.empty(n_queries)
        t0 = time.perf_counter()
        for i, (fp, cloud) in enumerate(queries):
            vals[i] = fn(fp, cloud)
        elapsed = time.perf_counter() - t0
        if truth is None:
            truth = vals
        err = np.abs(vals - truth)
        rows.append({"method": name, "queries": n_queries, "mean_ms": 1e3 * elapsed / n_queries,
                     "mean_abs_err": float(err.mean()), "max_abs_err": float(err.max())})
    return rows


def bench_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=BENCH_HEADER, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def load_trajectory(path) -> RunResult:
    """Rebuild a :class:`RunResult` from a trajectory CSV (wall times are not stored)."""
    result = RunResult()
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        state = VehicleState(*(float(row[k]) for k in ("x", "y", "theta", "phi", "v", "psi")))
        u = ControlInput(float(row["a"]), float(row["zeta"]))
        result.trajectory.append(StepRecord(int(row["step"]), state, u, float(row["min_dist"]), float("nan")))
    result.steps_used = len(result.trajectory)
    if result.trajectory:
        result.min_clearance = min(r.min_dist for r in result.trajectory)
    return result
