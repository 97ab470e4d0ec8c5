import csv
import re
from dataclasses import replace

import numpy as np
import pytest

from trailer_nav.cli import main
from trailer_nav.encoder import load_weights
from trailer_nav.exceptions import EncoderMissing
from trailer_nav.plots import SERIES_FILE, WORLD_FILE, render_plots
from trailer_nav.scenario import empty_scenario, paper_scenario, save_scenario
from trailer_nav.sim import (
    BENCH_HEADER,
    DIAGNOSTICS_HEADER,
    TRAJECTORY_HEADER,
    audit_clearance,
    bench_csv,
    benchmark_distance,
    load_trajectory,
    run_scenario,
    simulate,
    train_encoders,
)


def tiny(sc):
    sc.encoder.n_samples = 400
    sc.encoder.train = replace(sc.encoder.train, epochs=2)
    return sc


@pytest.fixture(scope="module")
def empty_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("empty")
    sc = empty_scenario()
    return sc, run_scenario(sc, out), out


def test_empty_world_reaches_goal_straight(empty_run):
    sc, result, _ = empty_run
    assert result.success and result.steps_used < sc.max_steps
    pos, head = result.final_error
    assert pos < sc.tolerance.position and head < sc.tolerance.heading
    ys = np.array([r.state.y for r in result.trajectory])
    assert np.abs(ys - 25.0).max() < 1.0
    assert result.min_clearance == sc.mppi.empty_distance


def test_run_outputs(empty_run):
    sc, result, out = empty_run
    with open(out / "trajectory.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == TRAJECTORY_HEADER and len(rows) == result.steps_used + 1
    with open(out / "diagnostics.csv") as fh:
        assert next(csv.reader(fh)) == DIAGNOSTICS_HEADER
    assert (out / "summary.json").read_text().count('"success": true') == 1
    for name in (WORLD_FILE, SERIES_FILE):
        assert (out / name).stat().st_size > 0
    back = load_trajectory(out / "trajectory.csv")
    assert [r.state for r in back.trajectory] == [r.state for r in result.trajectory]
    assert back.min_clearance == result.min_clearance


def test_plot_annotation_matches_min_clearance(tmp_path):
    sc = empty_scenario()
    sc.world = paper_scenario().world
    sc.start = (10.0, 42.0, 0.0, 0.0, 0.0, 0.0)
    sc.goal = (14.0, 42.0, 0.0, 0.0, 0.0, 0.0)
    result = simulate(sc)
    render_plots(result, sc, tmp_path)
    text = (tmp_path / SERIES_FILE).read_text()
    shown = float(re.search(r"min (-?[0-9.]+) m", text).group(1))
    assert shown == pytest.approx(result.min_clearance, abs=5e-5)
    audit = audit_clearance(result, sc)
    assert audit.min() <= result.min_clearance + 1e-9


def test_single_step_plot(tmp_path):
    sc = empty_scenario()
    sc.max_steps = 1
    result = simulate(sc)
    assert result.steps_used == 1
    paths = render_plots(result, sc, tmp_path)
    assert all(p.stat().st_size > 0 for p in paths)


def test_encoder_mode_needs_weights(tmp_path):
    sc = empty_scenario()
    sc.distance_mode = "encoder"
    with pytest.raises(EncoderMissing):
        run_scenario(sc, tmp_path / "out", encoder_dir=tmp_path / "none")


def test_train_encoders_files_and_determinism(tmp_path):
    sc = tiny(empty_scenario())
    a = train_encoders(sc, tmp_path / "a")
    b = train_encoders(sc, tmp_path / "b")
    assert [p.name for p in a] == ["encoder_0.bin", "encoder_1.bin", "encoder_2.bin"]
    assert [p.read_bytes() for p in a] == [p.read_bytes() for p in b]
    assert (tmp_path / "a" / "encoder_2_loss.csv").exists()
    widths = [load_weights(p.read_bytes(), poly).output_dim for p, poly in zip(a, sc.vehicle.polygons)]
    assert widths == [4, 4, 3]


def test_benchmark_schema(tmp_path):
    sc = tiny(empty_scenario())
    train_encoders(sc, tmp_path)
    rows = benchmark_distance(sc, 3, encoder_dir=tmp_path, n_points=20)
    assert [r["method"] for r in rows] == ["closed_form", "dual_bcd", "dual_bcd_batch", "encoder"]
    assert rows[0]["max_abs_err"] == 0.0
    assert rows[1]["max_abs_err"] < 1e-5 and rows[2]["max_abs_err"] < 1e-5
    assert all(r["queries"] == 3 and r["mean_ms"] > 0 for r in rows)
    assert bench_csv(rows).splitlines()[0] == ",".join(BENCH_HEADER)


def test_cli_verbs(tmp_path, capsys):
    sc = tiny(empty_scenario())
    path = tmp_path / "empty.yaml"
    save_scenario(sc, path)
    enc = tmp_path / "enc"
    assert main(["train", "--scenario", str(path), "--out", str(enc)]) == 0
    assert len(list(enc.glob("encoder_*.bin"))) == 3
    assert main(["bench", "--scenario", str(path), "--out", str(tmp_path / "bench"),
                 "--encoder-dir", str(enc), "--queries", "2"]) == 0
    assert (tmp_path / "bench" / "bench.csv").exists()
    run_dir = tmp_path / "run"
    assert main(["run", "--scenario", str(path), "--out", str(run_dir), "--seed", "1",
                 "--distance", "exact"]) == 0
    assert main(["run", "--scenario", str(path), "--out", str(tmp_path / "short"),
                 "--max-steps", "3", "--no-plots"]) == 1
    (run_dir / WORLD_FILE).unlink()
    assert main(["plot", "--scenario", str(path), str(run_dir)]) == 0
    assert (run_dir / WORLD_FILE).exists()
    assert main(["run", "--scenario", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "x")]) == 2
    capsys.readouterr()
