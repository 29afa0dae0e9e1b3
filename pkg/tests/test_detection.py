import io
import json

import numpy as np
import pytest

from corrvote.detection import (Detection, DetectionParams, coverage, detect, export_detection_ply, icp_refine,
                                overlap, write_detections_csv, write_detections_json)
from corrvote.geometry import PointCloud, RigidTransform, estimate_normals, estimate_resolution, random_rotation
from corrvote.plyio import read_ply
from corrvote.synthetic import VIEWPOINT, make_blob, make_scene


def rotation_error_deg(a: np.ndarray, b: np.ndarray) -> float:
    c = (np.trace(a.T @ b) - 1) / 2
    return float(np.degrees(np.arccos(np.clip(c, -1, 1))))


def scene_with_normals(**kw):
    scene, poses = make_scene(**kw)
    return estimate_normals(scene, 0.01, viewpoint=VIEWPOINT), poses


@pytest.fixture(scope="module")
def model():
    return estimate_normals(make_blob(10000, seed=0), 0.01)


class TestIcp:
    def test_fixed_point(self, blob2k):
        res = icp_refine(blob2k, blob2k, RigidTransform.identity(), 10)
        np.testing.assert_allclose(res.pose.as_matrix(), np.eye(4), atol=1e-9)
        assert not res.starved and len(res.rmse) == 10

    def test_converges_from_one_resolution_offset(self, blob2k):
        r = estimate_resolution(blob2k)
        rng = np.random.default_rng(0)
        offset = rng.normal(size=3)
        offset *= r / np.linalg.norm(offset)
        scene = PointCloud(blob2k.points + offset)
        res = icp_refine(blob2k, scene, RigidTransform.identity(), 10, max_corr_dist=5 * r)
        assert np.linalg.norm(res.pose.translation - offset) < 0.1 * r
        assert res.rmse[-1] < res.rmse[0]

    def test_starved_when_nothing_in_reach(self, blob2k):
        far = RigidTransform(np.eye(3), [10.0, 0, 0])
        res = icp_refine(blob2k, blob2k, far, 10, max_corr_dist=0.01)
        assert res.starved
        assert res.pose is far

    def test_zero_iterations_is_identity_map(self, blob2k):
        T = RigidTransform(random_rotation(np.random.default_rng(1)), [0.1, 0, 0])
        assert icp_refine(blob2k, blob2k, T, 0).pose is T


class TestCoverage:
    def test_full(self, blob2k):
        assert coverage(blob2k, blob2k, RigidTransform.identity(), 1e-6) == 1.0

    def test_none(self, blob2k):
        assert coverage(blob2k, blob2k, RigidTransform(np.eye(3), [1.0, 0, 0]), 0.01) == 0.0

    def test_half_occluded(self, blob2k):
        # keep the half facing +z
        front = PointCloud(blob2k.points[blob2k.normals[:, 2] > 0])
        c = coverage(blob2k, front, RigidTransform.identity(), 1e-6)
        assert c == len(front) / len(blob2k)
        assert 0.4 < c < 0.6

    def test_invalid_tolerance(self, blob2k):
        with pytest.raises(ValueError):
            coverage(blob2k, blob2k, RigidTransform.identity(), 0.0)


class TestOverlap:
    def test_same_pose(self, blob2k):
        assert overlap(blob2k, RigidTransform.identity(), RigidTransform.identity(), 1e-6) == 1.0

    def test_separated_poses(self, blob2k):
        assert overlap(blob2k, RigidTransform.identity(), RigidTransform(np.eye(3), [1.0, 0, 0]), 0.01) == 0.0


class TestParams:
    @pytest.mark.parametrize("kw", [dict(top_n=0), dict(overlap_max=1.5), dict(coverage_min=-0.1),
                                    dict(icp_iterations=-1), dict(radius=0), dict(dist_tol=0.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            DetectionParams(**kw)

    def test_coverage_range(self):
        with pytest.raises(ValueError):
            Detection(RigidTransform.identity(), 1.5, 0, 0, True)

    def test_needs_normals(self, blob2k):
        with pytest.raises(ValueError):
            detect(PointCloud(blob2k.points), blob2k)


@pytest.fixture(scope="module")
def single(model):
    scene, poses = scene_with_normals(shape_seed=0, seed=0)
    params = DetectionParams()
    return scene, poses, params, detect(model, scene, params)


def check_accepted(detections, params):
    accepted = [d for d in detections if d.accepted]
    for d in accepted:
        assert d.coverage >= params.coverage_min
    return accepted


@pytest.mark.slow
class TestEndToEnd:
    def test_single_instance_found(self, single):
        scene, poses, params, dets = single
        (d,) = check_accepted(dets, params)
        res = estimate_resolution(scene)
        assert np.linalg.norm(d.pose.translation - poses[0].translation) < 2 * res
        assert rotation_error_deg(d.pose.rotation, poses[0].rotation) < 5

    def test_deterministic(self, model, single):
        scene, _, params, dets = single
        again = detect(model, scene, params)
        assert [d.pose.as_matrix().tolist() for d in again] == [d.pose.as_matrix().tolist() for d in dets]

    def test_clutter_only_rejected(self, model):
        scene, poses = scene_with_normals(shape_seed=0, seed=0, include_object=False)
        assert poses == []
        dets = detect(model, scene, DetectionParams())
        assert not any(d.accepted for d in dets)

    def test_two_instances(self, model):
        scene, poses = scene_with_normals(shape_seed=0, seed=1, n_instances=2)
        params = DetectionParams(top_n=100)
        dets = detect(model, scene, params)
        accepted = check_accepted(dets, params)
        assert len(accepted) == 2
        for i, a in enumerate(accepted):
            for b in accepted[i + 1:]:
                assert overlap(model, a.pose, b.pose, 2 * estimate_resolution(scene)) <= params.overlap_max
        found = sorted(int(np.argmin([np.linalg.norm(d.pose.translation - p.translation) for p in poses]))
                       for d in accepted)
        assert found == [0, 1]

    def test_outputs(self, model, single, tmp_path):
        scene, _, _, dets = single
        buf = io.StringIO()
        write_detections_csv(buf, dets, "top_n=1")
        lines = buf.getvalue().splitlines()
        assert lines[0] == "# top_n=1" and lines[1].startswith("rank,source_correspondence,accepted,coverage")
        assert len(lines) == 2 + len(dets)
        buf = io.StringIO()
        write_detections_json(buf, dets, {"seed": 0})
        doc = json.loads(buf.getvalue())
        assert len(doc["detections"][0]["pose"]) == 12
        export_detection_ply(tmp_path / "d.ply", model, dets[0])
        moved = read_ply(tmp_path / "d.ply")
        np.testing.assert_allclose(moved.points, dets[0].pose.apply(model.points), atol=1e-12)
