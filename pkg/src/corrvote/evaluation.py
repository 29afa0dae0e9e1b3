"""Ground-truth labeling, precision/recall evaluation and synthetic experiments.

The controlled experiment pairs a noise-free model with noisy copies of
itself (co-registered unless a rigid offset is requested), computes features
on both, matches them densely, votes, thresholds with Otsu and scores the
result against the known correspondence.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .correspondence import CorrespondenceSet, match_features, ratio_scores
from .descriptor import DEFAULT_RADIUS, Features, compute_all_features
from .geometry import PointCloud, RigidTransform, estimate_normals, estimate_resolution, pairwise_distance
from .synthetic import make_blob
from .thresholding import DEFAULT_BINS, decide
from .voting import VoteTally, VotingParams, vote

__all__ = [
    "NOISE_LEVELS_MM",
    "DEFAULT_NORMAL_RADIUS",
    "GroundTruth",
    "EvaluationReport",
    "PreparedPair",
    "label_inliers",
    "pr_curve",
    "make_noisy_pair",
    "controlled_correspondences",
    "prepare_pair",
    "evaluate",
    "SweepConfig",
    "sweep",
    "write_report_csv",
    "write_curve_csv",
]

NOISE_LEVELS_MM = tuple(0.5 * k for k in range(1, 16))
DEFAULT_NORMAL_RADIUS = 0.01
GT_RESOLUTIONS = 2.0


@dataclass(frozen=True, eq=False)
class GroundTruth:
    transform: RigidTransform
    tolerance: float

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


@dataclass(eq=False)
class EvaluationReport:
    labels: np.ndarray
    inlier_fraction: float
    curve: np.ndarray  # rows of (threshold, precision, recall), thresholds descending
    max_f1: float
    f1_at_decision: float
    precision_at_decision: float
    recall_at_decision: Optional[float]
    decision_threshold: float
    accepted: int
    degenerate: bool = False
    params: dict = field(default_factory=dict)
    wall_time_ms: float = 0.0

    @property
    def n_inliers(self) -> int:
        return int(self.labels.sum())


def label_inliers(cs: CorrespondenceSet, gt: GroundTruth) -> np.ndarray:
    """True where the ground-truth pose moves the object point strictly within tolerance of its match."""
    moved = gt.transform.apply(cs.object_points)
    return pairwise_distance(moved, cs.scene_points) < gt.tolerance


def _f1(p, r):
    p = np.asarray(p, dtype=float)
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p + r > 0, 2 * p * r / (p + r), 0.0)


def pr_curve(labels, scores, threshold: Optional[float] = None, bins: int = DEFAULT_BINS) -> EvaluationReport:
    """Precision/recall swept over every distinct score, plus the Otsu decision point.

    With ``threshold=None`` the decision threshold comes from Otsu's method
    on ``scores``. If there are no inliers, recall is undefined: the report is
    flagged ``degenerate`` and ``recall_at_decision`` is ``None``.
    """
    labels = np.asarray(labels, dtype=bool)
    scores = np.asarray(scores, dtype=float)
    n_pos = int(labels.sum())
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    tp = np.cumsum(labels[order])
    # the last index of each run of equal scores marks one threshold
    last = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    accepted = last + 1
    tps = tp[last]
    precision = tps / accepted
    recall = tps / n_pos if n_pos else np.full(len(last), np.nan)
    curve = np.column_stack([s_sorted[last], precision, recall]) if len(last) else np.empty((0, 3))
    max_f1 = float(np.max(_f1(precision, recall))) if n_pos and len(last) else 0.0

    if threshold is None:
        mask, threshold = decide(scores, bins=bins, on_degenerate="none")
    else:
        mask = scores >= threshold
    acc = int(mask.sum())
    tp_d = int((mask & labels).sum())
    p_d = tp_d / acc if acc else 0.0
    r_d = tp_d / n_pos if n_pos else None
    f1_d = float(_f1(p_d, r_d)) if r_d is not None else 0.0
    frac = n_pos / len(labels) if len(labels) else 0.0
    return EvaluationReport(labels, frac, curve, max_f1, f1_d, p_d, r_d, float(threshold), acc,
                            degenerate=n_pos == 0)


def make_noisy_pair(cloud: PointCloud, sigma: float, seed: int,
                    transform: Optional[RigidTransform] = None
                    ) -> tuple[PointCloud, PointCloud, GroundTruth]:
    """Noise-free object plus a noisy, optionally moved copy as the scene.

    Each scene point is the object point with the same index displaced by
    isotropic Gaussian noise (``sigma`` per axis, meters), then moved by
    ``transform``. The ground-truth tolerance is two scene resolutions.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    rng = np.random.default_rng(seed)
    noisy = cloud.points + rng.normal(scale=sigma, size=cloud.points.shape) if sigma > 0 else cloud.points.copy()
    transform = transform or RigidTransform.identity()
    scene = PointCloud(transform.apply(noisy))
    obj = PointCloud(cloud.points, cloud.normals, cloud.unreliable)
    res = estimate_resolution(scene)
    return obj, scene, GroundTruth(transform, GT_RESOLUTIONS * res)


def controlled_correspondences(obj: PointCloud, scene: PointCloud, gt: GroundTruth,
                               inlier_fraction: float, seed: int) -> CorrespondenceSet:
    """Dense identity matching with outliers injected at a chosen rate.

    ``scene`` must be index-aligned with ``obj`` (as from :func:`make_noisy_pair`).
    A random ``1 - inlier_fraction`` share of object points is re-targeted
    to random scene points outside the ground-truth tolerance. Feature
    distances are drawn so that ratio scores are uniform on [0, 1] for inliers
    and outliers alike, leaving the voting as the only source of evidence.
    """
    rng = np.random.default_rng(seed)
    n = len(obj)
    target = np.arange(n)
    n_out = int(round((1.0 - inlier_fraction) * n))
    out = rng.choice(n, size=n_out, replace=False)
    moved = gt.transform.apply(obj.points)
    for i in out:
        while True:
            j = int(rng.integers(n))
            if pairwise_distance(moved[i], scene.points[j]) >= gt.tolerance:
                target[i] = j
                break
    d2 = np.ones(n)
    d1 = rng.uniform(0.0, 1.0, size=n)
    return CorrespondenceSet(np.arange(n), target, d1, d2, ratio_scores(d1, d2), obj, scene)


@dataclass(eq=False)
class PreparedPair:
    """Everything up to and including feature matching, reusable across voting runs."""

    object: PointCloud
    scene: PointCloud
    gt: GroundTruth
    object_features: Features
    scene_features: Features
    correspondences: CorrespondenceSet
    labels: np.ndarray
    scene_resolution: float
    info: dict = field(default_factory=dict)


def prepare_pair(cloud: PointCloud, sigma: float, seed: int, radius: float = DEFAULT_RADIUS,
                 normal_radius: float = DEFAULT_NORMAL_RADIUS, transform: Optional[RigidTransform] = None,
                 inherit_normals: bool = False, workers: int = 1) -> PreparedPair:
    """Noisy pair, normals, features and dense matches for one noise level.

    Scene normals are re-estimated from the noisy points unless
    ``inherit_normals`` is set, in which case the object normals are carried
    over (rotated by the ground-truth pose).
    """
    obj, scene, gt = make_noisy_pair(cloud, sigma, seed, transform)
    if obj.normals is None:
        obj = estimate_normals(obj, normal_radius, workers=workers)
    if inherit_normals:
        scene = scene.with_normals(obj.normals @ gt.transform.rotation.T, obj.unreliable)
    else:
        scene = estimate_normals(scene, normal_radius, workers=workers)
    fo = compute_all_features(obj, radius, workers=workers)
    fs = compute_all_features(scene, radius, workers=workers)
    cs = match_features(fo, fs, obj, scene, workers=workers)
    labels = label_inliers(cs, gt)
    return PreparedPair(obj, scene, gt, fo, fs, cs, labels, gt.tolerance / GT_RESOLUTIONS,
                        {"noise_sigma": sigma, "seed": seed, "radius": radius})


def evaluate(pair: PreparedPair, params: VotingParams = VotingParams(), bins: int = DEFAULT_BINS,
             workers: int = 1) -> tuple[VoteTally, EvaluationReport]:
    """Vote on a prepared pair and score the result."""
    t0 = time.perf_counter()
    tally = vote(pair.correspondences, pair.object_features.frames, pair.scene_features.frames,
                 params, workers=workers, scene_resolution=pair.scene_resolution)
    elapsed = (time.perf_counter() - t0) * 1000.0
    report = pr_curve(pair.labels, tally.s_final, bins=bins)
    report.wall_time_ms = elapsed
    report.params = dict(pair.info, kappa=params.kappa, sigma_sim=params.sigma_sim,
                         t_ratio=params.t_ratio, delta=tally.delta)
    return tally, report


@dataclass
class SweepConfig:
    """One-dimensional experiment grid.

    ``kind`` is ``"noise"`` (values in mm), ``"kappa"`` or ``"sigma_sim"``.
    Non-swept parameters come from ``params`` and ``noise_mm``.
    """

    kind: str = "noise"
    values: Sequence[float] = NOISE_LEVELS_MM
    params: VotingParams = field(default_factory=VotingParams)
    noise_mm: float = 2.5
    n_points: int = 10000
    shape_seed: int = 0
    seed: int = 0
    radius: float = DEFAULT_RADIUS
    normal_radius: float = DEFAULT_NORMAL_RADIUS
    bins: int = DEFAULT_BINS
    # noisy copies keep the noise-free normals rather than re-estimating them
    inherit_normals: bool = True

    def __post_init__(self):
        if self.kind not in ("noise", "kappa", "sigma_sim"):
            raise ValueError(f"unknown sweep kind {self.kind!r}")
        if len(self.values) == 0:
            raise ValueError("sweep needs at least one value")


def sweep(config: SweepConfig, workers: int = 1, cloud: Optional[PointCloud] = None) -> list[EvaluationReport]:
    """Run the grid; each report's ``params`` records the swept value and seed."""
    if cloud is None:
        cloud = make_blob(config.n_points, seed=config.shape_seed)
    reports = []
    if config.kind == "noise":
        for k, mm in enumerate(config.values):
            pair = prepare_pair(cloud, mm / 1000.0, config.seed + k, config.radius,
                                config.normal_radius, inherit_normals=config.inherit_normals,
                                workers=workers)
            _, rep = evaluate(pair, config.params, config.bins, workers)
            rep.params.update(sweep=config.kind, value=mm)
            reports.append(rep)
        return reports
    pair = prepare_pair(cloud, config.noise_mm / 1000.0, config.seed, config.radius,
                        config.normal_radius, inherit_normals=config.inherit_normals, workers=workers)
    for v in config.values:
        if config.kind == "kappa":
            params = VotingParams(int(v), config.params.sigma_sim, config.params.delta, config.params.t_ratio)
        else:
            params = VotingParams(config.params.kappa, float(v), config.params.delta, config.params.t_ratio)
        _, rep = evaluate(pair, params, config.bins, workers)
        rep.params.update(sweep=config.kind, value=v)
        reports.append(rep)
    return reports


REPORT_FIELDS = ["sweep", "value", "noise_sigma", "seed", "kappa", "sigma_sim", "t_ratio", "delta",
                 "inlier_fraction", "precision", "recall", "f1", "max_f1", "decision_threshold",
                 "accepted", "wall_time_ms"]


def write_report_csv(path_or_file, reports: Sequence[EvaluationReport], header_comment: str | None = None) -> None:
    def _write(fh):
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(REPORT_FIELDS)
        for r in reports:
            p = r.params
            w.writerow([p.get("sweep", ""), p.get("value", ""), p.get("noise_sigma", ""), p.get("seed", ""),
                        p.get("kappa", ""), p.get("sigma_sim", ""), p.get("t_ratio", ""), p.get("delta", ""),
                        f"{r.inlier_fraction:.6g}", f"{r.precision_at_decision:.6g}",
                        "" if r.recall_at_decision is None else f"{r.recall_at_decision:.6g}",
                        f"{r.f1_at_decision:.6g}", f"{r.max_f1:.6g}", f"{r.decision_threshold:.6g}",
                        r.accepted, f"{r.wall_time_ms:.1f}"])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with Path(path_or_file).open("w", newline="") as fh:
            _write(fh)


def write_curve_csv(path_or_file, report: EvaluationReport) -> None:
    def _write(fh):
        w = csv.writer(fh)
        w.writerow(["threshold", "precision", "recall"])
        for t, p, r in report.curve:
            w.writerow([f"{t:.10g}", f"{p:.10g}", f"{r:.10g}"])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with Path(path_or_file).open("w", newline="") as fh:
            _write(fh)
