import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trailer_nav.exceptions import ConfigError, SteeringSingularity
from trailer_nav.vehicle import (
    ControlInput,
    VehicleParams,
    VehicleState,
    derivatives,
    footprint,
    footprint_world,
    hitch_point,
    step,
    trailer_pose,
)

P = VehicleParams()


def test_rates_examples():
    assert np.allclose(derivatives(VehicleState(v=1.0), P), (1, 0, 0, 0))
    assert np.allclose(derivatives(VehicleState(theta=1.0, phi=-0.4, psi=0.3), P), 0.0)
    r = derivatives(VehicleState(v=1.0, phi=math.pi / 2), P)
    assert r[3] == pytest.approx(-1 / 1.5)


def test_singular_steering():
    with pytest.raises(SteeringSingularity):
        derivatives(VehicleState(psi=math.pi / 2), P)
    with pytest.raises(SteeringSingularity):
        step(VehicleState(psi=-2.0), ControlInput(), 0.1, P)


def test_step_examples():
    s = step(VehicleState(v=1.0), ControlInput(0, 0), 0.1, P)
    assert np.allclose(s.to_array(), (0.1, 0, 0, 0, 1, 0))
    s = step(VehicleState(), ControlInput(1.0, 0.0), 0.1, P)
    assert s.v == pytest.approx(0.1)
    assert (s.x, s.y) == (0.0, 0.0)
    with pytest.raises(ValueError):
        step(VehicleState(), ControlInput(), 0.0, P)


def test_limits_are_clamped():
    s = VehicleState(v=2.95, psi=0.59)
    for _ in range(5):
        s = step(s, ControlInput(100.0, 100.0), 0.1, P)
    assert s.v == P.v_limits[1]
    assert s.psi == P.psi_limit
    # input clamp: a is limited to a_limit before integrating
    s = step(VehicleState(), ControlInput(100.0, 0.0), 0.1, P)
    assert s.v == pytest.approx(P.a_limit * 0.1)


def test_trailer_pose_examples():
    tp = trailer_pose(VehicleState(), P)
    assert np.allclose(tp.t, (-2.0, 0.0)) and tp.theta == pytest.approx(0.0)
    tp = trailer_pose(VehicleState(theta=math.pi / 2), P)
    assert np.allclose(tp.t, (0.0, -2.0), atol=1e-12) and tp.theta == pytest.approx(math.pi / 2)
    s = VehicleState(phi=math.pi / 2)
    assert np.allclose(hitch_point(s, P), (-0.5, 0.0))
    tp = trailer_pose(s, P)
    assert np.allclose(tp.t, (-0.5, -1.5)) and tp.theta == pytest.approx(math.pi / 2)


def test_footprint_layout():
    fp = footprint(VehicleState(), P)
    assert len(fp) == 3
    assert [p.edge_count for p, _ in fp] == [4, 4, 3]
    tractor = fp[0][0]
    w = tractor.vertices.max(axis=0) - tractor.vertices.min(axis=0)
    assert np.allclose(w, (3.35, 1.48))
    box = fp[1][0]
    w = box.vertices.max(axis=0) - box.vertices.min(axis=0)
    assert np.allclose(w, (3.6, 1.2))
    # the connector reaches the hitch
    hitch_local = fp[2][1].to_local(hitch_point(VehicleState(), P))
    assert np.min(np.linalg.norm(fp[2][0].vertices - hitch_local, axis=1)) < 1e-12


def test_footprint_translation_and_articulation():
    a = footprint_world(VehicleState(), P)
    b = footprint_world(VehicleState(x=3.0, y=-2.0), P)
    for va, vb in zip(a, b):
        assert np.allclose(vb - va, (3.0, -2.0))
    c = footprint_world(VehicleState(phi=0.5), P)
    assert np.allclose(a[0], c[0])
    assert not np.allclose(a[1], c[1]) and not np.allclose(a[2], c[2])


def test_bad_params():
    with pytest.raises(ConfigError):
        VehicleParams(L0=-1.0)
    with pytest.raises(ConfigError):
        VehicleParams(v_limits=(3.0, -2.0))


def test_circle():
    R = P.L0 / math.tan(0.3)
    s = VehicleState(v=1.0, psi=0.3)
    err = 0.0
    for _ in range(1000):
        s = step(s, ControlInput(), 0.01, P)
        err = max(err, abs(math.hypot(s.x, s.y - R) - R))
    assert err < 1e-2


def test_zero_input_at_rest_is_identity():
    s = VehicleState(1.0, 2.0, 0.3, -0.2, 0.0, 0.1)
    n = step(s, ControlInput(), 0.1, P)
    assert n == s


def test_articulation_equilibrium():
    s = step(VehicleState(v=2.0), ControlInput(), 0.1, P)
    assert s.phi == 0.0


states = st.builds(
    VehicleState,
    x=st.floats(-50, 50), y=st.floats(-50, 50), theta=st.floats(-math.pi, math.pi),
    phi=st.floats(-1.4, 1.4), v=st.floats(-2, 3), psi=st.floats(-0.6, 0.6),
)
inputs = st.builds(ControlInput, a=st.floats(-5, 5), zeta=st.floats(-5, 5))


@given(states, inputs, st.floats(0.001, 0.5))
def test_step_invariants(s, u, dt):
    n = step(s, u, dt, P)
    assert -math.pi < n.theta <= math.pi
    assert -math.pi < n.phi <= math.pi
    assert P.v_limits[0] <= n.v <= P.v_limits[1]
    assert abs(n.psi) <= P.psi_limit
    tp = trailer_pose(n, P)
    from_trailer = tp.t + P.L1 * np.array([math.cos(tp.theta), math.sin(tp.theta)])
    assert np.allclose(from_trailer, hitch_point(n, P), atol=1e-12, rtol=0)
