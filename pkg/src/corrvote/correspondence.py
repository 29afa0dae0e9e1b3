"""Dense feature matching and the baseline correspondence scores."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .descriptor import Features
from .geometry import PointCloud, knn_bruteforce

__all__ = [
    "DEFAULT_T_RATIO",
    "MatchingError",
    "Correspondence",
    "CorrespondenceSet",
    "match_features",
    "score_l2",
    "score_ratio",
    "ratio_scores",
    "ratio_set",
    "write_correspondences_csv",
    "read_correspondences_csv",
]

DEFAULT_T_RATIO = 0.2


class MatchingError(ValueError):
    pass


@dataclass(frozen=True)
class Correspondence:
    object_index: int
    scene_index: int
    feature_distance_1: float
    feature_distance_2: float
    score: float


@dataclass(eq=False)
class CorrespondenceSet:
    """Putative correspondences stored column-wise, ordered by ``object_index``.

    ``score`` holds the currently active score (the ratio score after
    matching). ``object`` and ``scene`` are the matched clouds.
    """

    object_index: np.ndarray
    scene_index: np.ndarray
    feature_distance_1: np.ndarray
    feature_distance_2: np.ndarray
    score: np.ndarray
    object: Optional[PointCloud] = field(default=None, repr=False)
    scene: Optional[PointCloud] = field(default=None, repr=False)

    def __post_init__(self):
        self.object_index = np.asarray(self.object_index, dtype=np.intp)
        self.scene_index = np.asarray(self.scene_index, dtype=np.intp)
        self.feature_distance_1 = np.asarray(self.feature_distance_1, dtype=float)
        self.feature_distance_2 = np.asarray(self.feature_distance_2, dtype=float)
        self.score = np.asarray(self.score, dtype=float)
        n = len(self.object_index)
        for name in ("scene_index", "feature_distance_1", "feature_distance_2", "score"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length differs from object_index")
        if len(np.unique(self.object_index)) != n:
            raise ValueError("at most one correspondence per object point")
        if self.object is not None and n and not (0 <= self.object_index.min() and self.object_index.max() < len(self.object)):
            raise ValueError("object_index out of range")
        if self.scene is not None and n and not (0 <= self.scene_index.min() and self.scene_index.max() < len(self.scene)):
            raise ValueError("scene_index out of range")

    def __len__(self) -> int:
        return len(self.object_index)

    def __getitem__(self, i: int) -> Correspondence:
        return Correspondence(int(self.object_index[i]), int(self.scene_index[i]),
                              float(self.feature_distance_1[i]), float(self.feature_distance_2[i]),
                              float(self.score[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def object_points(self) -> np.ndarray:
        return self.object.points[self.object_index]

    @property
    def scene_points(self) -> np.ndarray:
        return self.scene.points[self.scene_index]

    def with_clouds(self, object: PointCloud, scene: PointCloud) -> "CorrespondenceSet":
        return CorrespondenceSet(self.object_index, self.scene_index, self.feature_distance_1,
                                 self.feature_distance_2, self.score, object, scene)


def score_l2(c: Correspondence) -> float:
    """Negative closest feature distance."""
    return -c.feature_distance_1


def ratio_scores(d1, d2) -> np.ndarray:
    """``1 - d1/d2`` elementwise; 0 where both distances vanish (duplicate features)."""
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = 1.0 - d1 / d2
    return np.clip(np.where(d2 > 0, s, 0.0), 0.0, 1.0)


def score_ratio(c: Correspondence) -> float:
    """Lowe ratio score in [0, 1]; 1 for an exact unique match."""
    return float(ratio_scores(c.feature_distance_1, c.feature_distance_2))


def ratio_set(cs: CorrespondenceSet, t_ratio: float = DEFAULT_T_RATIO) -> np.ndarray:
    """Boolean mask of correspondences whose ratio score is at least ``t_ratio``."""
    return ratio_scores(cs.feature_distance_1, cs.feature_distance_2) >= t_ratio


def match_features(object_features: Features, scene_features: Features,
                   object: PointCloud | None = None, scene: PointCloud | None = None,
                   workers: int = 1) -> CorrespondenceSet:
    """Match every valid object descriptor to its nearest valid scene descriptor.

    Uses an exact brute-force search in descriptor space (k=2). The second-closest
    distance feeds the ratio score, which becomes the active ``score``.
    Equal-distance scene candidates resolve to the lower scene index.
    ``workers`` is accepted for interface symmetry; the dense distance
    products already run on the BLAS thread pool.
    """
    if len(object_features) == 0 or len(scene_features) == 0:
        raise MatchingError("feature lists must be non-empty")
    scene_ids = np.flatnonzero(scene_features.valid)
    if len(scene_ids) < 2:
        raise MatchingError(f"need at least 2 valid scene features, got {len(scene_ids)}")
    obj_ids = np.flatnonzero(object_features.valid)
    sdesc = np.ascontiguousarray(scene_features.descriptors[scene_ids])
    odesc = object_features.descriptors[obj_ids]
    if len(obj_ids) == 0:
        empty = np.empty(0)
        return CorrespondenceSet(np.empty(0, np.intp), np.empty(0, np.intp), empty, empty, empty,
                                 object, scene)
    idx, dist = knn_bruteforce(sdesc, odesc, 2)
    d1 = dist[:, 0]
    d2 = dist[:, 1]
    return CorrespondenceSet(obj_ids, scene_ids[idx[:, 0]], d1, d2, ratio_scores(d1, d2), object, scene)


_CSV_FIELDS = ["object_index", "scene_index", "feature_distance_1", "feature_distance_2", "score"]


def write_correspondences_csv(path_or_file, cs: CorrespondenceSet, header_comment: str | None = None) -> None:
    def _write(fh):
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(_CSV_FIELDS)
        for i in range(len(cs)):
            w.writerow([int(cs.object_index[i]), int(cs.scene_index[i]),
                        repr(float(cs.feature_distance_1[i])), repr(float(cs.feature_distance_2[i])),
                        repr(float(cs.score[i]))])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with Path(path_or_file).open("w", newline="") as fh:
            _write(fh)


def read_correspondences_csv(path, object: PointCloud | None = None,
                             scene: PointCloud | None = None) -> CorrespondenceSet:
    """Load correspondences, validating indices against the clouds when given.

    Rows are re-sorted by ``object_index``. Errors name the offending row.
    """
    rows = []
    with Path(path).open(newline="") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        reader = csv.DictReader(lines)
        missing = [f for f in _CSV_FIELDS[:4] if f not in (reader.fieldnames or [])]
        if missing:
            raise MatchingError(f"{path}: missing columns {missing}")
        seen = set()
        for rowno, row in enumerate(reader, start=1):
            try:
                oi, si = int(row["object_index"]), int(row["scene_index"])
                d1, d2 = float(row["feature_distance_1"]), float(row["feature_distance_2"])
            except (TypeError, ValueError):
                raise MatchingError(f"{path}: row {rowno}: unparsable values") from None
            if object is not None and not 0 <= oi < len(object):
                raise MatchingError(f"{path}: row {rowno}: object_index {oi} out of range [0, {len(object)})")
            if scene is not None and not 0 <= si < len(scene):
                raise MatchingError(f"{path}: row {rowno}: scene_index {si} out of range [0, {len(scene)})")
            if not (0 <= d1 <= d2) or not np.isfinite(d2):
                raise MatchingError(f"{path}: row {rowno}: need 0 <= feature_distance_1 <= feature_distance_2")
            if oi in seen:
                raise MatchingError(f"{path}: row {rowno}: duplicate object_index {oi}")
            seen.add(oi)
            rows.append((oi, si, d1, d2))
    data = sorted(rows)
    oi = np.array([r[0] for r in data], dtype=np.intp)
    si = np.array([r[1] for r in data], dtype=np.intp)
    d1 = np.array([r[2] for r in data], dtype=float)
    d2 = np.array([r[3] for r in data], dtype=float)
    return CorrespondenceSet(oi, si, d1, d2, ratio_scores(d1, d2), object, scene)
