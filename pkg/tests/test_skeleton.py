import numpy as np
import pytest

from weaklift.errors import InvalidImageDims, MissingRequiredJoints
from weaklift.skeleton import (INTERPOLATION_TABLE, NUM_BONES, NUM_JOINTS, PARTS, SKELETON, JointId,
                               KinematicTree, bone_lengths, bone_vectors, convert_external_joints,
                               denormalize_2d, kcs, normalize_2d)

from conftest import random_pose, random_rotation


def test_tree_shape_and_validity():
    SKELETON.validate()
    assert NUM_JOINTS == 16 and NUM_BONES == 15
    assert SKELETON.parents[JointId.Pelvis] == -1
    # bone k ends at joint k + 1
    assert list(SKELETON.children) == list(range(1, 16))
    assert sorted(b for p in PARTS for b in SKELETON.part_bones(p)) == list(range(15))


def test_bone_vector_of_single_bone():
    pose = np.zeros((16, 3))
    pose[JointId.Spine] = (0, 0, 450)
    b = bone_vectors(pose)
    spine_bone = list(SKELETON.children).index(JointId.Spine)
    np.testing.assert_array_equal(b[spine_bone], [0, 0, 450])


def test_coincident_joints_give_zero_bones():
    assert not bone_vectors(np.full((16, 3), 7.0)).any()


def test_bone_vectors_translation_invariant(rng):
    p = random_pose(rng)
    np.testing.assert_allclose(bone_vectors(p + rng.normal(size=3) * 1e3), bone_vectors(p), atol=1e-9)


def test_bone_vectors_2d(rng):
    assert bone_vectors(rng.normal(size=(16, 2))).shape == (15, 2)


def test_kcs_single_bone_length_100():
    pose = np.zeros((16, 3))
    pose[JointId.RHip] = (100, 0, 0)
    pose[JointId.RKnee] = pose[JointId.RAnkle] = pose[JointId.RHip]
    full = kcs(pose).full
    assert full[0, 0] == pytest.approx(10000.0)
    assert np.count_nonzero(full) == 1


def test_kcs_zero_pose():
    assert not kcs(np.zeros((16, 3))).full.any()


def test_kcs_rigid_invariance_100_poses(rng):
    for _ in range(100):
        p = random_pose(rng)
        q = p @ random_rotation(rng).T + rng.normal(size=3) * 500
        a, b = kcs(p).full, kcs(q).full
        assert np.linalg.norm(a - b) <= 1e-6 * np.linalg.norm(a)


def test_kcs_diagonal_is_squared_bone_length(rng):
    for _ in range(20):
        p = random_pose(rng)
        lengths = np.array([np.linalg.norm(p[c] - p[SKELETON.parents[c]]) for c in SKELETON.children])
        np.testing.assert_allclose(np.diag(kcs(p).full), lengths**2, rtol=1e-9)
        np.testing.assert_allclose(bone_lengths(p), lengths, rtol=1e-12)


def test_kcs_blocks_match_full(rng):
    k = kcs(random_pose(rng))
    for part in PARTS:
        idx = SKELETON.part_bones(part)
        np.testing.assert_array_equal(k.blocks[part], k.full[np.ix_(idx, idx)])
    assert k.flat_blocks().size == sum(len(SKELETON.part_bones(p)) ** 2 for p in PARTS)


def test_invalid_tree_rejected():
    parents = list(SKELETON.parents)
    parents[3] = 5
    parents[5] = 3  # cycle
    with pytest.raises(ValueError):
        KinematicTree(tuple(parents), SKELETON.children, SKELETON.part_of_bone).validate()


def test_pelvis_interpolated_from_hips():
    pts = {"l_hip": (1, 0), "r_hip": (-1, 0), "l_shoulder": (1, 5), "r_shoulder": (-1, 5)}
    coords, valid = convert_external_joints(pts, "mpii")
    np.testing.assert_array_equal(coords[JointId.Pelvis], [0, 0])
    assert valid[JointId.Pelvis] and valid[JointId.Neck] and valid[JointId.Spine]
    np.testing.assert_array_equal(coords[JointId.Spine], [0, 2.5])


def test_canonical_input_is_identity(rng):
    p = rng.normal(size=(16, 2))
    coords, valid = convert_external_joints({j.name: p[j] for j in JointId}, "h36m")
    assert valid.all()
    np.testing.assert_array_equal(coords, p)


def test_missing_head_masked_others_converted(rng):
    p = rng.normal(size=(16, 2))
    pts = {j.name: p[j] for j in JointId if j != JointId.Head}
    coords, valid = convert_external_joints(pts, "h36m")
    assert not valid[JointId.Head] and valid.sum() == 15
    np.testing.assert_array_equal(coords[JointId.Head], [0, 0])
    keep = np.arange(16) != JointId.Head
    np.testing.assert_array_equal(coords[keep], p[keep])


def test_coco_conversion_walks_interpolation_table(rng):
    names = ["left_shoulder", "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
             "left_hip", "right_hip", "left_knee", "right_knee", "left_ankle", "right_ankle"]
    pts = {n: rng.normal(size=2) for n in names}
    coords, valid = convert_external_joints(pts, "coco")
    # every interpolated target is valid; the head has no source and stays masked
    assert all(valid[t] for t, _ in INTERPOLATION_TABLE)
    assert not valid[JointId.Head] and valid.sum() == 15
    np.testing.assert_allclose(coords[JointId.Neck], (pts["left_shoulder"] + pts["right_shoulder"]) / 2)


def test_conversion_requires_hips_and_shoulders():
    with pytest.raises(MissingRequiredJoints):
        convert_external_joints({"l_hip": (0, 0), "r_hip": (1, 0)}, "mpii")
    with pytest.raises(ValueError):
        convert_external_joints({}, "nope")


def test_reconversion_of_canonical_output_is_identity(rng):
    pts = {"l_hip": (1, 0), "r_hip": (-1, 0), "l_shoulder": (1, 5), "r_shoulder": (-1, 5), "head_top": (0, 7)}
    coords, valid = convert_external_joints(pts, "mpii")
    again, valid2 = convert_external_joints({j.name: coords[j] for j in JointId if valid[j]}, "h36m")
    np.testing.assert_array_equal(valid2, valid)
    np.testing.assert_array_equal(again[valid], coords[valid])


def test_normalize_centre_and_corners():
    np.testing.assert_array_equal(normalize_2d([320, 240], 640, 480), [0, 0])
    np.testing.assert_array_equal(normalize_2d([[0, 0], [640, 480]], 640, 480), [[-1, -1], [1, 1]])


def test_normalize_round_trip(rng):
    p = rng.uniform(-200, 1200, size=(100, 16, 2))
    np.testing.assert_allclose(denormalize_2d(normalize_2d(p, 1000, 700), 1000, 700), p, atol=1e-12)
    c = rng.uniform(-1, 1, size=(16, 2))
    np.testing.assert_allclose(normalize_2d(denormalize_2d(c, 1000, 700), 1000, 700), c, atol=1e-12)


def test_normalize_rejects_bad_dims():
    with pytest.raises(InvalidImageDims):
        normalize_2d(np.zeros(2), 0, 10)
    with pytest.raises(InvalidImageDims):
        denormalize_2d(np.zeros(2), 10, -1)
