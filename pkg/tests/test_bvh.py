import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tagforge.bvh import (BvhParseError, DEFAULT_JOINT_MAP, load_bvh, parse_bvh, pose_from_frame,
                          sample_bvh_text, write_bvh)
from tagforge.scene_model import JOINTS, builtin_pose

TWO_JOINT = """HIERARCHY
ROOT Hips
{
  OFFSET 0.0 0.0 0.0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  JOINT Spine
  {
    OFFSET 0.0 10.0 0.0
    CHANNELS 3 Zrotation Xrotation Yrotation
    End Site
    {
      OFFSET 0.0 5.0 0.0
    }
  }
}
MOTION
Frames: 2
Frame Time: 0.0333333
0.0 90.0 0.0   0.0 0.0 0.0   0.0 0.0 0.0
1.5 91.0 -2.0  12.5 -7.0 30.0   4.0 5.0 6.0
"""


def test_two_joint_fixture():
    doc = parse_bvh(TWO_JOINT)
    assert doc.frame_count == 2
    assert doc.channel_count == 9
    assert [j.name for j in doc.joints] == ["Hips", "Spine"]
    assert doc.root.children[0].end_site == (0.0, 5.0, 0.0)
    assert doc.frame_time_s == pytest.approx(0.0333333)


def test_frame_one_maps_pelvis():
    pose = pose_from_frame(parse_bvh(TWO_JOINT), 1, {"Hips": "pelvis"})
    assert pose["pelvis"] == (12.5, -7.0, 30.0)
    stand = builtin_pose("stand")
    for joint in JOINTS:
        if joint != "pelvis":
            assert pose[joint] == stand[joint]


def test_zero_frame_gives_stand_elsewhere():
    pose = pose_from_frame(parse_bvh(TWO_JOINT), 0, {"Hips": "pelvis", "Spine": "spine"})
    assert pose["pelvis"] == (0.0, 0.0, 0.0) and pose["spine"] == (0.0, 0.0, 0.0)
    assert pose["l_shoulder"] == builtin_pose("stand")["l_shoulder"]


def test_frame_index_bounds():
    doc = parse_bvh(TWO_JOINT)
    with pytest.raises(IndexError):
        pose_from_frame(doc, doc.frame_count, {"Hips": "pelvis"})
    with pytest.raises(IndexError):
        pose_from_frame(doc, -1, {"Hips": "pelvis"})


def test_absent_joint_named():
    with pytest.raises(KeyError, match="LeftArm"):
        pose_from_frame(parse_bvh(TWO_JOINT), 0, {"Hips": "pelvis", "LeftArm": "l_shoulder"})


def _rot(axis, deg):
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return {"X": np.array([[1, 0, 0], [0, c, -s], [0, s, c]]),
            "Y": np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]]),
            "Z": np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])}[axis]


def test_other_channel_order_converted_to_zxy():
    text = TWO_JOINT.replace("CHANNELS 3 Zrotation Xrotation Yrotation", "CHANNELS 3 Xrotation Yrotation Zrotation")
    doc = parse_bvh(text)
    rz, rx, ry = pose_from_frame(doc, 1, {"Spine": "spine"})["spine"]
    # channels as written: X=4, Y=5, Z=6; BVH applies them left to right
    expected = _rot("X", 4.0) @ _rot("Y", 5.0) @ _rot("Z", 6.0)
    got = _rot("Z", rz) @ _rot("X", rx) @ _rot("Y", ry)
    np.testing.assert_allclose(got, expected, atol=1e-12)


@pytest.mark.parametrize("text,needle", [
    ("", "missing HIERARCHY"),
    ("   \n\n", "missing HIERARCHY"),
    (TWO_JOINT.replace("MOTION", "MOTON"), "MOTION"),
    (TWO_JOINT.replace("CHANNELS 3 Zrotation Xrotation Yrotation", "CHANNELS 2 Zrotation Xrotation"), "channel"),
    (TWO_JOINT.replace("Xposition Yposition Zposition", "Xposition Yposition Wposition"), "channel"),
    (TWO_JOINT.replace("Frames: 2", "Frames: 3"), "line"),
    (TWO_JOINT.replace("4.0 5.0 6.0", "4.0 five 6.0"), "line 20"),
    (TWO_JOINT.replace("4.0 5.0 6.0", "4.0 nan 6.0"), "line 20"),
])
def test_parse_errors(text, needle):
    with pytest.raises(BvhParseError, match=needle):
        parse_bvh(text)


def test_wrong_arity_names_line():
    bad = TWO_JOINT.replace("4.0 5.0 6.0\n", "4.0 5.0\n")
    with pytest.raises(BvhParseError) as err:
        parse_bvh(bad)
    assert err.value.line == 20


def test_whitespace_tolerant():
    messy = "\n\n".join("\t " + ln.replace(" ", "  \t") + "   " for ln in TWO_JOINT.splitlines())
    assert parse_bvh(messy) == parse_bvh(TWO_JOINT)


@pytest.mark.parametrize("text", [TWO_JOINT, sample_bvh_text()])
def test_round_trip(text):
    doc = parse_bvh(text)
    assert parse_bvh(write_bvh(doc)) == doc


def test_shipped_sample():
    doc = parse_bvh(sample_bvh_text())
    assert set(DEFAULT_JOINT_MAP) <= {j.name for j in doc.joints}
    for f in range(doc.frame_count):
        pose_from_frame(doc, f)


def test_load_bvh(tmp_path):
    p = tmp_path / "clip.bvh"
    p.write_text(TWO_JOINT)
    assert load_bvh(p) == parse_bvh(TWO_JOINT)


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=400))
def test_fuzz_bytes_never_crash(data):
    try:
        parse_bvh(data)
    except BvhParseError:
        pass


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet=st.sampled_from(list("{}\n 0123456789.-ROOTJINSEndiHYCAMFrms:eXYZpoti")), max_size=300))
def test_fuzz_token_soup(text):
    try:
        parse_bvh("HIERARCHY\n" + text)
    except BvhParseError:
        pass
