import numpy as np
import pytest
import yaml

from trailer_nav.exceptions import ConfigError
from trailer_nav.geometry import rectangle
from trailer_nav.perception import Obstacle, World
from trailer_nav.scenario import (
    PAPER,
    Scenario,
    dump_scenario,
    empty_scenario,
    generate_obstacle_field,
    load_scenario,
    paper_scenario,
    save_scenario,
    scenario_from_dict,
    scenario_to_dict,
)


def test_shipped_scenario_has_paper_values():
    sc = paper_scenario()
    assert sc.start == (10.0, 42.0, 0.0, 0.0, 0.0, 0.0)
    assert sc.goal == (40.0, 12.0, -0.5, 0.0, 0.0, 0.0)
    m = sc.mppi
    assert (m.horizon, m.samples, m.dt, m.lambda_temp) == (50, 256, 0.1, 1.0)
    assert m.sigma_w == (2.0, 2.0)
    assert m.W_g == (1.0, 1.0, 0.5, 0.5, 0.0, 0.0)
    assert m.W_T == tuple(10 * w for w in m.W_g)
    assert (m.W_u, m.W_du, m.w_phi, m.w_obs, m.w_coll) == ((0.1, 0.1), (0.1, 0.1), 1.0, 5.0, 50.0)
    assert sc.max_steps == 1200
    assert len(sc.vehicle.polygons) == 3
    assert len(sc.world.obstacles) >= 60
    sc.validate()


def test_profiles():
    desk = paper_scenario()
    paper = paper_scenario(PAPER)
    assert (desk.mppi.samples, desk.encoder.n_samples) == (256, 20000)
    assert (paper.mppi.samples, paper.encoder.n_samples, paper.encoder.train.epochs) == (1000, 100000, 5000)
    with pytest.raises(ConfigError):
        desk.with_profile("huge")


def test_round_trip(tmp_path):
    sc = paper_scenario()
    text = dump_scenario(sc)
    again = scenario_from_dict(yaml.safe_load(text))
    assert dump_scenario(again) == text
    assert scenario_to_dict(again) == scenario_to_dict(sc)
    path = tmp_path / "s.yaml"
    save_scenario(sc, path)
    assert dump_scenario(load_scenario(path)) == text


def test_generator_is_seeded_and_respects_corridor():
    corridor = [(10.0, 42.0), (25.0, 27.0), (40.0, 12.0)]
    a = generate_obstacle_field(seed=3, count=50, corridor=corridor, corridor_width=4.0)
    b = generate_obstacle_field(seed=3, count=50, corridor=corridor, corridor_width=4.0)
    assert [o.polygon for o in a] == [o.polygon for o in b]
    from shapely.geometry import LineString, Polygon

    line = LineString(corridor)
    for ob in a:
        assert Polygon(ob.world_vertices).distance(line) >= 2.0 - 1e-9


def test_pose_in_yaml_obstacle():
    data = {"world": {"obstacles": [{"vertices": [[-1, -1], [1, -1], [1, 1], [-1, 1]], "pose": [20, 20, 0.5]}]},
            "start": [5, 5, 0, 0, 0, 0], "goal": [45, 45, 0, 0, 0, 0]}
    sc = scenario_from_dict(data)
    assert np.allclose(sc.world.obstacles[0].world_vertices.mean(axis=0), (20, 20))


@pytest.mark.parametrize("data", [
    {"start": [1, 2, 3]},
    {"distance_mode": "psychic"},
    {"mppi": {"horizon": 0}},
    {"mppi": {"temperature": 1.0}},
    {"vehicle": {"L0": -1.0}},
    {"lidar": {"n_beams": 0}},
    {"world": {"obstacles": [{"vertices": [[0, 0], [0, 1], [1, 1], [1, 0]]}]}},
    {"world": {"colour": "red"}},
    {"world": {"bounds": [0, 10, 0, 10], "obstacles": [{"vertices": [[20, 20], [21, 20], [21, 21]]}]}},
])
def test_bad_configs(data):
    with pytest.raises(ConfigError):
        scenario_from_dict(data)


def test_bad_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("- just\n- a list\n")
    with pytest.raises(ConfigError):
        load_scenario(p)
    with pytest.raises(ConfigError):
        load_scenario(tmp_path / "missing.yaml")


def test_validation():
    blocked = Scenario(world=World([Obstacle(rectangle(9.0, 11.0, 41.0, 43.0))]))
    with pytest.raises(ConfigError):
        blocked.validate()
    outside = Scenario(goal=(60.0, 12.0, 0.0, 0.0, 0.0, 0.0))
    with pytest.raises(ConfigError):
        outside.validate()
    empty_scenario().validate()
