"""Object detection from voted correspondences.

Top-ranked correspondences are turned into pose hypotheses through their
reference frames. Each hypothesis is refined with point-to-point ICP and
accepted when the aligned model is sufficiently covered by scene points and
does not coincide with an earlier accepted detection.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .correspondence import CorrespondenceSet, match_features
from .descriptor import DETECTION_RADIUS, Features, compute_all_features
from .geometry import PointCloud, RigidTransform, estimate_resolution, fit_rigid, pairwise_distance
from .plyio import write_ply
from .voting import VoteTally, VotingParams, correspondence_poses, rank, vote

__all__ = [
    "COVERAGE_MIN",
    "OVERLAP_MAX",
    "Detection",
    "IcpResult",
    "DetectionParams",
    "icp_refine",
    "coverage",
    "overlap",
    "detect",
    "detect_from_tally",
    "write_detections_csv",
    "write_detections_json",
    "export_detection_ply",
]

COVERAGE_MIN = 0.05
OVERLAP_MAX = 0.10
DIST_TOL_RESOLUTIONS = 2.0
ICP_DIST_RESOLUTIONS = 5.0


@dataclass(frozen=True)
class Detection:
    pose: RigidTransform
    coverage: float
    source_correspondence: int  # position in the correspondence set
    rank: int  # position of that correspondence in the final ranking
    accepted: bool
    icp_starved: bool = False

    def __post_init__(self):
        if not 0.0 <= self.coverage <= 1.0:
            raise ValueError("coverage must lie in [0, 1]")


@dataclass(frozen=True)
class IcpResult:
    pose: RigidTransform
    starved: bool
    rmse: tuple  # RMSE over the pairs of each iteration, measured before its update


@dataclass(frozen=True)
class DetectionParams:
    """Detection knobs. Distances left as ``None`` scale with scene resolution."""

    voting: VotingParams = field(default_factory=VotingParams)
    top_n: int = 1
    overlap_max: float = OVERLAP_MAX
    coverage_min: float = COVERAGE_MIN
    icp_iterations: int = 10
    radius: float = DETECTION_RADIUS
    dist_tol: Optional[float] = None
    max_corr_dist: Optional[float] = None

    def __post_init__(self):
        if self.top_n < 1:
            raise ValueError("top_n must be >= 1")
        if not 0.0 <= self.overlap_max <= 1.0:
            raise ValueError("overlap_max must lie in [0, 1]")
        if not 0.0 <= self.coverage_min <= 1.0:
            raise ValueError("coverage_min must lie in [0, 1]")
        if self.icp_iterations < 0:
            raise ValueError("icp_iterations must be >= 0")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        for name in ("dist_tol", "max_corr_dist"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")


def icp_refine(object: PointCloud, scene: PointCloud, initial: RigidTransform,
               iterations: int = 10, max_corr_dist: float = np.inf, workers: int = 1) -> IcpResult:
    """Point-to-point ICP; runs exactly ``iterations`` rounds.

    Every round pairs each moved object point with its nearest scene point
    (pairs farther than ``max_corr_dist`` are dropped) and composes the
    closed-form rigid fit of the pairs onto the current pose. A round without
    any pair stops the refinement and sets ``starved``.
    """
    pose = initial
    history = []
    for _ in range(iterations):
        moved = pose.apply(object.points)
        dist, idx = scene.tree.query(moved, k=1, distance_upper_bound=max_corr_dist, workers=workers)
        keep = np.isfinite(dist)
        if not np.any(keep):
            return IcpResult(pose, True, tuple(history))
        target = scene.points[idx[keep]]
        history.append(float(np.sqrt(np.mean(pairwise_distance(moved[keep], target) ** 2))))
        step = fit_rigid(moved[keep], target)
        pose = (step @ pose).orthonormalized()
    return IcpResult(pose, False, tuple(history))


def coverage(object: PointCloud, scene: PointCloud, pose: RigidTransform, dist_tol: float,
             workers: int = 1) -> float:
    """Fraction of object points landing within ``dist_tol`` of some scene point."""
    if dist_tol <= 0:
        raise ValueError("dist_tol must be positive")
    if len(object) == 0 or len(scene) == 0:
        return 0.0
    dist, _ = scene.tree.query(pose.apply(object.points), k=1, distance_upper_bound=dist_tol,
                               workers=workers)
    return float(np.mean(dist < dist_tol))


def overlap(object: PointCloud, a: RigidTransform, b: RigidTransform, dist_tol: float) -> float:
    """Fraction of object points mapped within ``dist_tol`` of each other by ``a`` and ``b``."""
    if len(object) == 0:
        return 0.0
    return float(np.mean(pairwise_distance(a.apply(object.points), b.apply(object.points)) < dist_tol))


def detect_from_tally(object: PointCloud, scene: PointCloud, cs: CorrespondenceSet, tally: VoteTally,
                      object_features: Features, scene_features: Features,
                      params: DetectionParams = DetectionParams(), scene_resolution: Optional[float] = None,
                      workers: int = 1) -> list[Detection]:
    """Hypothesis loop over an already voted correspondence set.

    Hypotheses are taken in final-score rank order; those whose frames are
    invalid are skipped without counting towards ``top_n``. Returns every
    refined hypothesis, accepted or not.
    """
    if len(cs) == 0:
        return []
    if scene_resolution is None:
        scene_resolution = estimate_resolution(scene)
    dist_tol = params.dist_tol or DIST_TOL_RESOLUTIONS * scene_resolution
    max_corr = params.max_corr_dist or ICP_DIST_RESOLUTIONS * scene_resolution

    R, t, pose_ok = correspondence_poses(cs, object_features.frames, scene_features.frames)
    order = rank(tally.s_final, tally.s_ratio, cs.object_index)
    detections: list[Detection] = []
    for r, i in enumerate(order):
        if len(detections) >= params.top_n:
            break
        if not pose_ok[i]:
            continue
        initial = RigidTransform(R[i], t[i]).orthonormalized()
        icp = icp_refine(object, scene, initial, params.icp_iterations, max_corr, workers)
        cov = coverage(object, scene, icp.pose, dist_tol, workers)
        ok = cov >= params.coverage_min and all(
            overlap(object, icp.pose, d.pose, dist_tol) <= params.overlap_max
            for d in detections if d.accepted)
        detections.append(Detection(icp.pose, cov, int(i), r, bool(ok), icp.starved))
    return detections


def detect(object: PointCloud, scene: PointCloud, params: DetectionParams = DetectionParams(),
           workers: int = 1) -> list[Detection]:
    """Full pipeline: features, dense matching, voting and the hypothesis loop.

    Both clouds must carry normals.
    """
    if object.normals is None or scene.normals is None:
        raise ValueError("detection needs normals on both clouds")
    fo = compute_all_features(object, params.radius, workers=workers)
    fs = compute_all_features(scene, params.radius, workers=workers)
    if not np.any(fo.valid):
        return []
    cs = match_features(fo, fs, object, scene, workers=workers)
    res = estimate_resolution(scene)
    tally = vote(cs, fo.frames, fs.frames, params.voting, workers=workers, scene_resolution=res)
    return detect_from_tally(object, scene, cs, tally, fo, fs, params, res, workers)


_FIELDS = ["rank", "source_correspondence", "accepted", "coverage", "icp_starved"] + \
    [f"m{a}{b}" for a in range(3) for b in range(4)]


def _rows(detections: Sequence[Detection]):
    for d in detections:
        yield [d.rank, d.source_correspondence, int(d.accepted), repr(d.coverage), int(d.icp_starved)] + \
            [repr(float(v)) for v in d.pose.as_matrix()[:3].ravel()]


def write_detections_csv(path_or_file, detections: Sequence[Detection], header_comment: str | None = None) -> None:
    """One row per hypothesis; the pose is the top 3x4 block of its matrix, row-major."""
    def _write(fh):
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(_FIELDS)
        w.writerows(_rows(detections))

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with Path(path_or_file).open("w", newline="") as fh:
            _write(fh)


def write_detections_json(path_or_file, detections: Sequence[Detection], meta: dict | None = None) -> None:
    doc = {
        "meta": meta or {},
        "detections": [
            {"rank": d.rank, "source_correspondence": d.source_correspondence, "accepted": d.accepted,
             "coverage": d.coverage, "icp_starved": d.icp_starved,
             "pose": [float(v) for v in d.pose.as_matrix()[:3].ravel()]}
            for d in detections
        ],
    }
    if hasattr(path_or_file, "write"):
        json.dump(doc, path_or_file, indent=2)
    else:
        Path(path_or_file).write_text(json.dumps(doc, indent=2))


def export_detection_ply(path, object: PointCloud, detection: Detection, binary: bool = False) -> None:
    """The object model moved into the scene by the detected pose."""
    write_ply(path, object.transformed(detection.pose), binary=binary,
              comments=(f"detection rank {detection.rank} coverage {detection.coverage:.4f}",))
