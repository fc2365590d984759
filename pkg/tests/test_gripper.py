import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_obb_indices, rotation_from_quaternion
from uncgrasp.cloud import PointCloud, RigidTransform, apply_transform, axis_angle
from uncgrasp.errors import NoCandidatesError, ParseError, SchemaError, TooFewPointsError
from uncgrasp.gripper import (
    GraspCandidate,
    GraspPose,
    GripperModel,
    SamplerConfig,
    closing_region,
    contact_points,
    estimate_normals,
    export_grasps,
    finger_slabs,
    grasps_from_json,
    import_grasps,
    pose_distance,
    read_grasps,
    sample_grasps,
)
from uncgrasp.scene import sample_shape

SMALL = GripperModel(max_opening=0.08, finger_depth=0.04, finger_width=0.02)
IDENTITY = GraspPose(RigidTransform.identity())

quats = st.tuples(*[st.floats(-1, 1) for _ in range(4)]).filter(
    lambda q: sum(v * v for v in q) > 1e-3)
vec3 = st.tuples(*[st.floats(-1, 1) for _ in range(3)])


def test_default_gripper_dimensions():
    g = GripperModel()
    assert g.max_opening == 0.085  # 2F-85 stroke
    assert (g.finger_depth, g.finger_width) == (0.037, 0.022)


def test_contacts_at_identity():
    got = {tuple(np.round(p, 12)) for p in contact_points(SMALL, IDENTITY)}
    want = set(itertools.product((-0.02, 0.02), (-0.04, 0.04), (-0.01, 0.01)))
    assert got == want


def test_contacts_translated():
    p = GraspPose(RigidTransform(np.eye(3), [0.1, 0.0, 0.0]))
    shift = contact_points(SMALL, p) - contact_points(SMALL, IDENTITY)
    assert np.allclose(shift, [0.1, 0.0, 0.0], atol=1e-15)


def test_contacts_quarter_turn():
    t = RigidTransform(axis_angle([0, 0, 1], math.pi / 2), np.zeros(3))
    got = contact_points(SMALL, GraspPose(t))
    ref = apply_transform(PointCloud(contact_points(SMALL, IDENTITY)), t).points
    assert np.max(np.abs(got - ref)) <= 1e-15


def test_contacts_mirror_symmetric_about_closing_plane(rng):
    p = GraspPose(RigidTransform.random(rng))
    local = (contact_points(SMALL, p) - p.center) @ p.pose.rotation
    mirrored = local * [1, -1, 1]
    assert {tuple(np.round(v, 12)) for v in local} == {tuple(np.round(v, 12)) for v in mirrored}
    assert np.allclose(np.abs(local[:, 1]), 0.04)


def test_closing_region_identity():
    box = closing_region(SMALL, IDENTITY)
    assert np.allclose(box.half_extents, [0.02, 0.04, 0.01])
    assert np.array_equal(box.axes, np.eye(3))


@given(quats, vec3)
def test_region_and_contacts_are_equivariant(q, t):
    tr = RigidTransform(rotation_from_quaternion(*q), t)
    moved = GraspPose(tr)
    box = closing_region(SMALL, moved)
    assert box.volume == pytest.approx(0.04 * 0.08 * 0.02, rel=1e-12)
    c = contact_points(SMALL, moved)
    assert np.allclose(c, tr.apply(contact_points(SMALL, IDENTITY)), atol=1e-9)
    assert brute_obb_indices(c, box.center, box.axes, box.half_extents) == list(range(8))
    # the contact set is the box's corner set
    corners = {tuple(np.round(v, 9)) for v in box.corners()}
    assert corners == {tuple(np.round(v, 9)) for v in c}


def test_finger_slabs_flank_the_region():
    g = GripperModel()
    a, b = finger_slabs(g, IDENTITY)
    for slab, sign in ((a, -1), (b, 1)):
        assert slab.center[1] == pytest.approx(sign * (g.max_opening + g.finger_thickness) / 2)
        lo = slab.center - slab.half_extents
        hi = slab.center + slab.half_extents
        assert lo[0] == pytest.approx(-g.finger_depth / 2 - g.finger_length)
        assert hi[0] == pytest.approx(g.finger_depth / 2)
        assert 2 * slab.half_extents[2] == pytest.approx(g.finger_width)
        # slabs touch the closing region but do not overlap its interior
        assert min(abs(lo[1]), abs(hi[1])) == pytest.approx(g.max_opening / 2)


def test_normals_on_a_plane_face_the_viewpoint(rng):
    pts = np.column_stack([rng.uniform(-0.1, 0.1, (200, 2)), np.zeros(200)])
    n = estimate_normals(pts, viewpoint=[0, 0, -1])
    assert np.allclose(n, [0, 0, -1], atol=1e-9)


def test_pose_distance_treats_flip_as_same_grasp(rng):
    a = RigidTransform.random(rng)
    flip = RigidTransform(np.diag([1.0, -1.0, -1.0]), np.zeros(3))
    assert pose_distance(a, a @ flip) == pytest.approx(0.0, abs=1e-7)
    b = RigidTransform(a.rotation, a.translation + [0.03, 0, 0])
    assert pose_distance(a, b) == pytest.approx(0.03)


@pytest.fixture(scope="module")
def thin_box():
    rng = np.random.default_rng(2)
    pts, _ = sample_shape({"kind": "box", "dims": [0.03, 0.12, 0.15]}, 3000, rng)
    return PointCloud(pts)


def test_thin_box_gets_narrow_axis_grasp(thin_box):
    cands = sample_grasps(thin_box, GripperModel(), k=15, seed=0)
    angles = [math.degrees(math.acos(min(1.0, abs(c.grasp.closing[0])))) for c in cands]
    assert min(angles) <= 10.0


def test_sampler_output_contract(thin_box):
    g = GripperModel()
    cands = sample_grasps(thin_box, g, k=15, seed=3, up=[0, 0, 1])
    assert 1 <= len(cands) <= 15
    scores = [c.score for c in cands]
    assert all(math.isfinite(s) for s in scores)
    assert scores == sorted(scores, reverse=True)
    for c in cands:
        box = closing_region(g, c.grasp)
        inside = brute_obb_indices(thin_box.points, box.center, box.axes, box.half_extents)
        assert len(inside) == c.closure_count >= 1
        assert c.score == pytest.approx(c.quality * c.closure_count)
        for slab in finger_slabs(g, c.grasp):
            assert not brute_obb_indices(thin_box.points, slab.center, slab.axes, slab.half_extents)
        assert c.grasp.approach @ [0, 0, 1] <= 0.2 + 1e-12
    for a, b in itertools.combinations(cands, 2):
        assert pose_distance(a.grasp.pose, b.grasp.pose) > 0.02


def test_unit_scores(thin_box):
    cands = sample_grasps(thin_box, GripperModel(), seed=3, config=SamplerConfig(score_mode="unit"))
    assert cands[0].score == 1.0
    assert all(0 < c.score <= 1 for c in cands)


def test_sampler_is_deterministic(thin_box):
    a = sample_grasps(thin_box, GripperModel(), seed=11)
    b = sample_grasps(thin_box, GripperModel(), seed=11)
    assert [(c.grasp.pose, c.score) for c in a] == [(c.grasp.pose, c.score) for c in b]


def test_big_sphere_has_no_candidates():
    rng = np.random.default_rng(0)
    pts, _ = sample_shape({"kind": "sphere", "radius": 0.2}, 3000, rng)
    with pytest.raises(NoCandidatesError):
        sample_grasps(PointCloud(pts), GripperModel())


def test_too_few_points():
    with pytest.raises(TooFewPointsError):
        sample_grasps(PointCloud(np.random.default_rng(0).normal(size=(49, 3))), GripperModel())


def test_export_import_round_trip(tmp_path, thin_box):
    cands = sample_grasps(thin_box, GripperModel(), seed=5)
    path = export_grasps(cands, tmp_path / "g.json")
    back = import_grasps(path)
    assert len(back) == len(cands)
    for a, b in zip(cands, back):
        assert b.source == "imported"
        assert b.score == a.score
        assert np.max(np.abs(a.grasp.pose.rotation - b.grasp.pose.rotation)) <= 1e-12
        assert np.max(np.abs(a.grasp.pose.translation - b.grasp.pose.translation)) <= 1e-12


def entry(rot=None, score=1.0):
    r = np.eye(3) if rot is None else np.asarray(rot)
    return {"rotation": r.reshape(-1).tolist(), "translation": [0.0, 0.0, 0.0], "score": score}


def test_fifteen_entries():
    doc = {"grasps": [entry(score=float(i)) for i in range(15)]}
    cands, header = grasps_from_json(doc)
    assert [c.score for c in cands] == list(range(15))
    assert header["score_scale"] == "unnormalized"


def test_non_orthonormal_entry_is_named():
    bad = np.eye(3)
    bad[0, 1] = 2e-6
    doc = {"grasps": [entry(), entry(), entry(bad)]}
    with pytest.raises(SchemaError) as exc:
        grasps_from_json(doc)
    assert exc.value.to_dict()["context"]["entry"] == 2


def test_near_orthonormal_entry_is_repaired():
    r = np.eye(3)
    r[0, 1] = 1e-8
    (c,), _ = grasps_from_json({"grasps": [entry(r)]})
    rr = c.grasp.pose.rotation
    assert np.max(np.abs(rr.T @ rr - np.eye(3))) < 1e-14


def test_schema_errors(tmp_path):
    for doc, idx in (({"grasps": [entry(), {"rotation": [1] * 9}]}, 1),
                     ({"grasps": [entry(score=float("nan"))]}, 0),
                     ({"grasps": ["x"]}, 0)):
        with pytest.raises(SchemaError) as exc:
            grasps_from_json(doc)
        assert exc.value.to_dict()["context"]["entry"] == idx
    with pytest.raises(SchemaError):
        grasps_from_json({"grasps": [], "score_scale": "percent"})
    p = tmp_path / "bad.json"
    p.write_text("{\n  grasps: []\n}")
    with pytest.raises(ParseError):
        read_grasps(p)


def test_candidate_rejects_nan_score():
    with pytest.raises(Exception):
        GraspCandidate(IDENTITY, float("nan"))


def test_json_is_plain(tmp_path, thin_box):
    cands = sample_grasps(thin_box, GripperModel(), k=3, seed=1)
    doc = json.loads(export_grasps(cands, tmp_path / "g.json", score_scale="unnormalized").read_text())
    assert set(doc) == {"gripper", "grasps", "score_scale"}
    assert len(doc["grasps"][0]["rotation"]) == 9
