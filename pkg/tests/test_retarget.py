import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faceretarget import fitting as ft
from faceretarget import morphable_model as mm
from faceretarget import retarget as rt
from faceretarget.errors import InvalidInputError
from helpers import random_params


def test_identity_mapping_copies_weights(rng):
    p = random_params(rng)
    pose = rt.map_to_rig(p, rt.RigMapping.identity())
    assert len(pose.weights) == 46
    assert pose.weights["blendshape_07"] == p.w_free[6]
    np.testing.assert_array_equal(pose.rotation, mm.canonical_quat(p.quat))


def test_gain_and_clamp():
    p = mm.FaceParams.neutral()
    p.w_free[2] = 0.4
    mapping = rt.RigMapping([rt.RigEntry(3, "jawOpen", gain=2.0), rt.RigEntry(4, "smile", clamp=(0.2, 0.5))],
                            pass_pose=False)
    pose = rt.map_to_rig(p, mapping)
    assert pose.weights == {"jawOpen": 0.8, "smile": 0.2}
    np.testing.assert_array_equal(pose.rotation, [1, 0, 0, 0])
    p.w_free[2] = 0.7
    assert rt.map_to_rig(p, mapping).weights["jawOpen"] == 1.0


def test_mapping_validation():
    with pytest.raises(InvalidInputError):
        rt.RigMapping([rt.RigEntry(1, "a"), rt.RigEntry(1, "b")])
    with pytest.raises(InvalidInputError):
        rt.RigEntry(0, "a")
    with pytest.raises(InvalidInputError):
        rt.RigEntry(1, "a", clamp=(0.5, 0.2))
    p = mm.FaceParams.neutral()
    with pytest.raises(InvalidInputError):
        rt.map_to_rig(p, rt.RigMapping([rt.RigEntry(1, "a"), rt.RigEntry(2, "a")]))


def test_mapping_json_round_trip(tmp_path):
    m = rt.RigMapping([rt.RigEntry(5, "brow", 1.5, (0.0, 0.9))], pass_pose=False)
    path = tmp_path / "rig.json"
    path.write_text(json.dumps(m.to_dict()))
    assert rt.RigMapping.load(path) == m


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), gain=st.floats(0, 5), d=st.floats(0, 0.5))
def test_rig_weight_is_monotone_in_expression(seed, gain, d):
    rng = np.random.default_rng(seed)
    p = random_params(rng)
    mapping = rt.RigMapping([rt.RigEntry(1, "x", gain)])
    lo = rt.map_to_rig(p, mapping).weights["x"]
    q = p.copy()
    q.w_free[0] += d
    assert rt.map_to_rig(q, mapping).weights["x"] >= lo
    assert 0.0 <= lo <= 1.0


def test_rig_ignores_identity_translation_and_focal(rng):
    p = random_params(rng)
    q = p.copy()
    q.w_id = rng.normal(size=50)
    q.t = np.array([12.0, -7.0, 0.0])
    q.f = 3.3
    a, b = rt.map_to_rig(p, rt.RigMapping.identity()), rt.map_to_rig(q, rt.RigMapping.identity())
    assert a.weights == b.weights
    np.testing.assert_array_equal(a.rotation, b.rotation)


def test_track_box_example():
    pts = np.zeros((68, 2))
    pts[:, 0] = np.linspace(10, 20, 68)
    pts[:, 1] = np.linspace(30, 50, 68)
    box = rt.track_next_bbox(pts, 0.1)
    assert (box.x0, box.y0, box.x1, box.y1) == pytest.approx((8, 28, 22, 52))


def test_track_box_contains_landmarks(rng):
    pts = rng.uniform(0, 200, (68, 2))
    box = rt.track_next_bbox(pts, 0.0)
    assert all(box.contains(x, y) for x, y in pts)


def test_track_rejects_degenerate():
    with pytest.raises(InvalidInputError):
        rt.track_next_bbox(np.ones((68, 2)))
    with pytest.raises(InvalidInputError):
        rt.track_next_bbox(np.zeros((68, 2)) + np.arange(68)[:, None], margin=-0.1)


def test_tracking_a_drifting_face(tensor, rng):
    p = random_params(rng)
    init = None
    for frame in range(3):
        p.t = p.t + np.array([2.0, -1.5, 0.0])
        obs = mm.project_landmarks(tensor, p)
        if init is not None:
            box = rt.track_next_bbox(prev)
            assert all(box.contains(x, y) for x, y in obs)
        res = ft.fit_params(tensor, obs, init)
        assert res.final_rmse <= 1e-6
        pose = rt.map_to_rig(res.params, rt.RigMapping.identity())
        assert len(pose.weights) == 46
        init, prev = res.params, mm.project_landmarks(tensor, res.params)
