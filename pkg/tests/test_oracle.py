import numpy as np
import pytest

from granet.geometry import PointCloud, assemble_rotation
from granet.oracle import (MU_MAX, GripperModel, annotations_from_dict, annotations_to_dict,
                           collision_check, contact_mu, evaluate_grasps, gripper_boxes)
from granet.scenes import Primitive, SyntheticScene


def single(kind, dims, center=(0.0, 0.0, 0.0)):
    prim = Primitive(kind, dims, np.eye(3), np.asarray(center, dtype=np.float64))
    cloud = PointCloud(np.zeros((1, 3)), np.zeros(1, dtype=np.int64))
    return SyntheticScene(seed=0, primitives=[prim], plane_extent=0.2, cloud=cloud, meta={})


def frame_with_closing(closing, approach):
    closing = np.asarray(closing, float) / np.linalg.norm(closing)
    approach = np.asarray(approach, float) / np.linalg.norm(approach)
    return np.column_stack([approach, closing, np.cross(approach, closing)])


def test_sphere_diametric_contacts_need_no_friction():
    scene = single("sphere", [0.03])
    R = assemble_rotation([0.0, 0.0, -1.0], 0.3)
    mu, c1, c2, target = contact_mu(scene, R, np.zeros(3), 0.08)
    assert mu[0] == pytest.approx(0.0, abs=1e-12)
    assert target[0] == 1
    assert np.linalg.norm(c1[0]) == pytest.approx(0.03)


def test_box_parallel_faces():
    scene = single("box", [0.04, 0.06, 0.05])
    R = frame_with_closing([1, 0, 0], [0, 0, -1])
    mu, *_ = contact_mu(scene, R, np.array([0.0, 0.01, 0.0]), 0.06)
    assert mu[0] == pytest.approx(0.0, abs=1e-12)


def test_tilted_closing_line_friction_and_score():
    scene = single("box", [0.04, 0.5, 0.05])
    a = np.radians(17)
    R = frame_with_closing([np.cos(a), np.sin(a), 0], [0, 0, -1])
    mu, *_ = contact_mu(scene, R, np.zeros(3), 0.08)
    assert mu[0] == pytest.approx(np.tan(a), abs=1e-12)
    assert mu[0] == pytest.approx(0.3057, abs=1e-4)
    assert (MU_MAX - mu[0]) / MU_MAX == pytest.approx(0.7452, abs=1e-4)


def test_line_missing_or_too_wide_is_invalid():
    scene = single("sphere", [0.03])
    R = assemble_rotation([0.0, 0.0, -1.0], 0.0)
    mu, *_ = contact_mu(scene, R, np.array([0.5, 0.5, 0.5]), 0.08)
    assert np.isinf(mu[0])
    mu, *_ = contact_mu(scene, R, np.zeros(3), 0.05)  # object wider than the gap
    assert np.isinf(mu[0])


def test_collision_cases():
    g = GripperModel()
    R = np.eye(3)
    T = np.zeros(3)
    w, d = 0.06, 0.02
    boxes = gripper_boxes(np.array([w]), np.array([d]), g)[0]
    centre = boxes[0].mean(axis=0)
    assert not collision_check(np.array([[1.0, 1.0, 1.0]]), R, T, w, d)
    assert collision_check(centre[None], R, T, w, d)
    outside = centre.copy()
    outside[1] = boxes[0, 0, 1] - 0.001  # 1 mm beyond the outer face of the finger
    assert not collision_check(outside[None], R, T, w, d)
    # points near the contacts are ignored
    assert not collision_check(centre[None], R, T, w, d, contacts=(centre, centre))


def test_annotations_are_consistent_with_oracle(annotated_scene):
    scene, ann = annotated_scene
    assert len(ann) > 1000
    assert np.all((ann.score > 0) & (ann.score <= 1))
    assert np.all((ann.mu >= 0) & (ann.mu <= MU_MAX))
    assert np.all(ann.width <= 0.1)
    R = assemble_rotation_batch(ann.approach, ann.angle)
    T = scene.points[ann.point] + ann.depth[:, None] * ann.approach
    res = evaluate_grasps(scene, R, T, ann.width, ann.depth)
    assert np.abs(res["mu"] - ann.mu).max() < 1e-9
    assert not res["collision"].any()
    np.testing.assert_array_equal(res["target"], scene.object_ids[ann.point])


def assemble_rotation_batch(approach, angle):
    return np.array([assemble_rotation(a / np.linalg.norm(a), t) for a, t in zip(approach, angle)])


def test_annotation_file_roundtrip(annotated_scene, lattice):
    scene, ann = annotated_scene
    back = annotations_from_dict(annotations_to_dict(ann, scene.seed), lattice)
    np.testing.assert_array_equal(back.point, ann.point)
    np.testing.assert_array_equal(back.view, ann.view)
    np.testing.assert_array_equal(back.angle_bin, ann.angle_bin)
    np.testing.assert_array_equal(back.depth_bin, ann.depth_bin)
    np.testing.assert_allclose(back.score, ann.score, rtol=1e-8)


def test_best_per_point_tie_break():
    from granet.oracle import GraspAnnotationSet
    z = np.zeros(4)
    ann = GraspAnnotationSet(point=np.array([3, 3, 1, 3]), approach=np.zeros((4, 3)), angle=z,
                             depth=z, width=z, mu=z, score=np.array([0.5, 0.9, 0.2, 0.9]))
    assert ann.best_per_point() == {1: 2, 3: 1}
