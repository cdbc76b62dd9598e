import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from vntraj.scene import DT, AgentTrack, Crosswalk, Lane, Scene, ShiftConfig, State, generate_synthetic
from vntraj.vectorize import (Frame, PolylineKind, agent_frame_transform, bbox_filter, clip_polyline,
                              invert_polyline, pack_features, resample_polyline, vectorize_scene)


def _walk(points, s):
    """Point at arclength ``s`` found by stepping through the segments."""
    points = [np.asarray(p, float) for p in points]
    for a, b in zip(points, points[1:]):
        seg = float(np.linalg.norm(b - a))
        if s <= seg + 1e-12:
            return a + (b - a) * (s / seg)
        s -= seg
    return points[-1]


def _target(x, y, yaw, n=2):
    states = tuple(State(t, x, y, 0.0, 0.0, 0.0, 0.0, yaw) for t in range(-n + 1, 1))
    return AgentTrack(0, states, True)


def test_identity_frame_leaves_scene_unchanged():
    s = Scene("id", (_target(0.0, 0.0, 0.0),), (Lane(((1.0, 2.0), (3.0, -4.0)), 10.0, 1, True),))
    local, frame = agent_frame_transform(s)
    assert local == s
    assert frame == Frame((0.0, 0.0), 0.0)


def test_frame_fixture_5_5_quarter_turn():
    s = Scene("f", (_target(5.0, 5.0, math.pi / 2),), (Lane(((5.0, 6.0), (5.0, 8.0)), 10.0, 1, True),))
    local, frame = agent_frame_transform(s)
    np.testing.assert_allclose(local.lanes[0].points[0], (1.0, 0.0), atol=1e-9)
    np.testing.assert_allclose(frame.to_world([[1.0, 0.0]])[0], (5.0, 6.0), atol=1e-9)
    last = local.target.states[-1]
    assert (last.x, last.y, last.yaw) == (0.0, 0.0, 0.0)


@given(st.floats(-500, 500), st.floats(-500, 500), st.floats(-3.1, 3.1),
       hnp.arrays(np.float64, (4, 2), elements=st.floats(-100, 100)))
def test_transform_is_isometry(x, y, yaw, pts):
    lane_pts = tuple(map(tuple, pts.tolist()))
    s = Scene("iso", (_target(x, y, yaw),), (Lane(lane_pts, 10.0, 1, True),))
    local, frame = agent_frame_transform(s)
    a, b = np.array(lane_pts), np.array(local.lanes[0].points)
    da = np.linalg.norm(a[:, None] - a[None], axis=-1)
    db = np.linalg.norm(b[:, None] - b[None], axis=-1)
    np.testing.assert_allclose(db, da, atol=1e-9)
    np.testing.assert_allclose(frame.to_world(b), a, atol=1e-9)


def test_clipped_lane_fixture():
    pieces = clip_polyline([(-70.0, 0.0), (70.0, 0.0)])
    assert len(pieces) == 1
    np.testing.assert_allclose(pieces[0], [[-60.0, 0.0], [60.0, 0.0]], atol=1e-9)


def test_box_is_closed_and_outside_dropped():
    s = Scene("b", (AgentTrack(0, (State(-1, 0.0, 0.0, 0, 0, 0, 0, 0), State(0, 0.0, 0.0, 0, 0, 0, 0, 0)), True),
                    AgentTrack(1, (State(-1, 60.0, 60.0, 0, 0, 0, 0, 0), State(0, 61.0, 0.0, 0, 0, 0, 0, 0)))),
              (Lane(((61.5, 0.0), (80.0, 0.0)), 10.0, 1, True),))
    boxed = bbox_filter(s)
    assert boxed.lanes == ()
    assert [(st_.x, st_.y) for st_ in boxed.tracks[1].states] == [(60.0, 60.0)]


def test_reentrant_lane_is_split():
    pieces = clip_polyline([(-50, 0), (-50, 80), (50, 80), (50, 0)])
    assert len(pieces) == 2
    np.testing.assert_allclose(pieces[0][-1], (-50, 60))
    np.testing.assert_allclose(pieces[1][0], (50, 60))


def test_clipped_crosswalk_becomes_open_chain():
    s = Scene("c", (_target(0.0, 0.0, 0.0),), (),
              (Crosswalk(((55.0, -2.0), (65.0, -2.0), (65.0, 2.0), (55.0, 2.0))),))
    cw = bbox_filter(s).crosswalks
    assert len(cw) == 1 and not cw[0].closed
    assert np.max(np.abs(np.array(cw[0].polygon))) <= 60.0


def test_resample_six_points():
    out = resample_polyline([(0.0, 0.0), (10.0, 0.0)])
    np.testing.assert_allclose(out, [[x, 0.0] for x in (0, 2, 4, 6, 8, 10)], atol=1e-9)


def test_resample_l_shape_against_walker():
    pts = [(0.0, 0.0), (0.0, 3.0), (4.0, 3.0)]
    out = resample_polyline(pts)
    assert len(out) == 5
    expected = np.array([_walk(pts, 1.75 * i) for i in range(5)])
    np.testing.assert_allclose(out, expected, atol=1e-9)


def test_resample_short_segment_and_degenerate():
    np.testing.assert_array_equal(resample_polyline([(0, 0), (1, 0)]), [[0, 0], [1, 0]])
    with pytest.raises(ValueError):
        resample_polyline([(1, 1), (1, 1)])


@given(hnp.arrays(np.float64, st.tuples(st.integers(2, 6), st.just(2)), elements=st.floats(-50, 50)),
       st.floats(0.5, 5.0))
def test_resample_properties(pts, d):
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if seg.sum() <= 1e-3 or np.any(seg < 1e-6):
        return
    out = resample_polyline(pts, d)
    assert np.array_equal(out[0], pts[0]) and np.array_equal(out[-1], pts[-1])
    total = seg.sum()
    n = len(out) - 1
    assert n == math.ceil(total / d - 1e-9)
    expected = np.array([_walk(pts, total * i / n) for i in range(n + 1)])
    np.testing.assert_allclose(out, expected, atol=1e-9)


def test_pack_features_layouts():
    np.testing.assert_array_equal(pack_features(PolylineKind.CROSSWALK), np.zeros(9))
    np.testing.assert_array_equal(pack_features(PolylineKind.LANE, maxspeed=15, priority=1, available=True),
                                  [0, 0, 0, 0, 0, 0, 15, 1, 1])
    f = pack_features(PolylineKind.OTHER_AGENT, t=-0.2, vx=3, vy=0, ax=0, ay=0, yaw=0.1)
    np.testing.assert_array_equal(f, [-0.2, 3, 0, 0, 0, 0.1, 0, 0, 0])
    with pytest.raises(ValueError):
        pack_features(PolylineKind.LANE, maxspeed=math.nan, priority=1, available=True)


def test_invert_counts():
    sg = invert_polyline(np.arange(8.0).reshape(4, 2), PolylineKind.LANE, np.zeros(9))
    assert sg.num_nodes == 3
    assert sg.num_nodes * (sg.num_nodes - 1) == 6
    one = invert_polyline([(0, 0), (1, 0)], PolylineKind.CROSSWALK, np.zeros(9))
    assert one.num_nodes == 1
    with pytest.raises(ValueError):
        invert_polyline([(0, 0)], PolylineKind.LANE, np.zeros(9))


def test_agent_nodes_carry_end_state_features():
    scene = generate_synthetic(ShiftConfig(4, 1, 0.0))[0]
    local, _ = agent_frame_transform(scene)
    vs = vectorize_scene(scene)
    sg = vs.subgraphs[vs.target_index]
    states = bbox_filter(local).target.states
    assert sg.num_nodes == len(states) - 1 == 24
    for i, node in enumerate(sg.nodes):
        e = states[i + 1]
        assert node.p_start == (states[i].x, states[i].y) and node.p_end == (e.x, e.y)
        np.testing.assert_array_equal(node.f, [e.t * DT, e.vx, e.vy, e.ax, e.ay, e.yaw, 0, 0, 0])


def test_minimal_scene_one_node():
    vs = vectorize_scene(Scene("min", (AgentTrack(0, (State(-1, 1, 1, 1, 0, 0, 0, 0), State(0, 2, 1, 1, 0, 0, 0, 0)), True),)))
    assert len(vs.subgraphs) == 1 and vs.subgraphs[0].num_nodes == 1 and vs.target_index == 0


@pytest.mark.parametrize("seed", range(5))
def test_generated_scene_invariants(seed):
    for scene in generate_synthetic(ShiftConfig(seed, 4, 0.5)):
        local, _ = agent_frame_transform(scene)
        boxed = bbox_filter(local)
        vs = vectorize_scene(scene)
        kinds = [sg.kind for sg in vs.subgraphs]
        assert kinds.count(PolylineKind.TARGET_AGENT) == 1
        assert vs.subgraphs[vs.target_index].kind == PolylineKind.TARGET_AGENT
        n_agents = sum(len(tr.states) >= 2 for tr in boxed.tracks)
        assert len(vs.subgraphs) == n_agents + len(boxed.lanes) + len(boxed.crosswalks)
        for sg in vs.subgraphs:
            assert np.all(np.abs(sg.p_start) <= 60.0) and np.all(np.abs(sg.p_end) <= 60.0)
            lo, hi = {PolylineKind.LANE: (6, 9), PolylineKind.CROSSWALK: (0, 0)}.get(sg.kind, (0, 6))
            mask = np.ones(9, bool)
            mask[lo:hi] = False
            assert not np.any(sg.features[:, mask])
            if sg.kind == PolylineKind.LANE:
                gaps = np.linalg.norm(sg.p_end - sg.p_start, axis=1)
                # chords of bent pieces are shorter than the arclength step
                assert gaps.max() <= 2.0 + 1e-9
        json_dump = vs.to_json()
        assert vs.scene_id in json_dump
