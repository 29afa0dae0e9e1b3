"""Local reference frames and a compact normal-deviation shape descriptor.

Each point gets a rigid frame built from the distance-weighted covariance of
its support sphere (z = least-variance direction, sign matched to the point
normal; x = greatest-variance direction, sign chosen by majority of neighbor
projections). The descriptor splits the support sphere into the 8 octants of
that frame and histograms, per octant, the cosine between each neighbor's
normal and the frame's z-axis (8 bins, linear interpolation between adjacent
bins, unweighted counts). The result is 64-dimensional and normalized
to unit length.

Everything is computed in batch over flattened neighbor lists; the single
point functions are thin wrappers around the batch code so both paths agree
bit-for-bit.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import PointCloud, pairwise_distance, radius_neighbors

__all__ = [
    "DESCRIPTOR_DIM",
    "MIN_NEIGHBORS",
    "DEFAULT_RADIUS",
    "DETECTION_RADIUS",
    "InvalidFrameError",
    "LocalReferenceFrame",
    "Descriptor",
    "ReferenceFrames",
    "Features",
    "compute_rf",
    "compute_descriptor",
    "compute_all_features",
    "save_features_csv",
    "load_features_csv",
]

N_OCTANTS = 8
N_COS_BINS = 8
DESCRIPTOR_DIM = N_OCTANTS * N_COS_BINS
MIN_NEIGHBORS = 5
DEFAULT_RADIUS = 0.015
DETECTION_RADIUS = 0.03

class InvalidFrameError(ValueError):
    """The support neighborhood is too small to define a reference frame."""


@dataclass(frozen=True, eq=False)
class LocalReferenceFrame:
    origin: np.ndarray
    axes: np.ndarray  # columns are the x, y, z axes

    def to_world(self, local) -> np.ndarray:
        return np.asarray(local, dtype=float) @ self.axes.T + self.origin

    def to_local(self, world) -> np.ndarray:
        return (np.asarray(world, dtype=float) - self.origin) @ self.axes


@dataclass(frozen=True, eq=False)
class Descriptor:
    values: np.ndarray
    valid: bool


@dataclass(frozen=True, eq=False)
class ReferenceFrames:
    """Frames for a whole cloud: ``origins (n,3)``, ``axes (n,3,3)``, ``valid (n,)``."""

    origins: np.ndarray
    axes: np.ndarray
    valid: np.ndarray

    def __len__(self) -> int:
        return len(self.origins)

    def __getitem__(self, i) -> LocalReferenceFrame:
        if not self.valid[i]:
            raise InvalidFrameError(f"point {i} has no valid reference frame")
        return LocalReferenceFrame(self.origins[i], self.axes[i])

    def transformed(self, transform) -> "ReferenceFrames":
        return ReferenceFrames(
            transform.apply(self.origins),
            np.einsum("ij,njk->nik", transform.rotation, self.axes),
            self.valid,
        )


@dataclass(frozen=True, eq=False)
class Features:
    """Dense per-point features: one descriptor and one frame per cloud point."""

    descriptors: np.ndarray
    valid: np.ndarray
    frames: ReferenceFrames

    def __len__(self) -> int:
        return len(self.descriptors)

    def __getitem__(self, i) -> Descriptor:
        return Descriptor(self.descriptors[i], bool(self.valid[i]))


def _neighborhoods(cloud: PointCloud, centers: np.ndarray, radius: float, workers: int):
    """Radius neighbors of ``cloud.points[centers]``, excluding the center itself."""
    rows, cols = radius_neighbors(cloud.tree, cloud.points[centers], radius, workers=workers)
    keep = cols != centers[rows]
    return rows[keep], cols[keep]


def _disambiguate(proj: np.ndarray, rows: np.ndarray, n: int) -> np.ndarray:
    """Sign (+1/-1) per row such that most projections in the row are positive.

    Ties in the count fall back to the sign of the projection sum, then to
    making the first (lowest-index) neighbor's projection non-negative.
    """
    vote = np.bincount(rows, weights=np.sign(proj), minlength=n)
    total = np.bincount(rows, weights=proj, minlength=n)
    first = np.zeros(n)
    starts = np.flatnonzero(np.r_[True, rows[1:] != rows[:-1]]) if len(rows) else np.empty(0, int)
    first[rows[starts]] = proj[starts]
    sign = np.where(vote != 0, np.sign(vote), np.where(total != 0, np.sign(total), np.where(first < 0, -1.0, 1.0)))
    return sign


def _frames(cloud: PointCloud, centers: np.ndarray, rows, cols, radius: float):
    n = len(centers)
    pts = cloud.points
    origin = pts[centers]
    d = pairwise_distance(pts[cols], origin[rows])
    w = radius - d
    wsum = np.bincount(rows, weights=w, minlength=n)
    center = np.stack([np.bincount(rows, weights=w * pts[cols, a], minlength=n) for a in range(3)], axis=1)
    center /= np.where(wsum > 0, wsum, 1.0)[:, None]
    diff = pts[cols] - center[rows]
    cov = np.empty((n, 3, 3))
    for a in range(3):
        for b in range(a, 3):
            s = np.bincount(rows, weights=w * diff[:, a] * diff[:, b], minlength=n)
            cov[:, a, b] = s
            cov[:, b, a] = s
    count = np.bincount(rows, minlength=n)
    valid = count >= MIN_NEIGHBORS
    cov[~valid] = np.eye(3)
    _, vecs = np.linalg.eigh(cov)
    z = vecs[:, :, 0].copy()
    x = vecs[:, :, 2].copy()

    zs = _disambiguate(np.sum(diff * z[rows], axis=1), rows, n)
    if cloud.normals is not None:
        dn = np.sum(z * cloud.normals[centers], axis=1)
        usable = dn != 0
        if cloud.unreliable is not None:
            usable &= ~cloud.unreliable[centers]
        zs = np.where(usable, np.where(dn < 0, -1.0, 1.0), zs)
    z *= zs[:, None]
    x *= _disambiguate(np.sum(diff * x[rows], axis=1), rows, n)[:, None]
    y = np.cross(z, x)
    axes = np.stack([x, y, z], axis=2)
    axes[~valid] = np.eye(3)
    return ReferenceFrames(origin, axes, valid)


def _histograms(cloud: PointCloud, centers, rows, cols, axes, radius: float):
    n = len(centers)
    pts = cloud.points
    if cloud.normals is None:
        raise ValueError("descriptor computation needs normals")
    local = np.einsum("mk,mkj->mj", pts[cols] - pts[centers][rows], axes[rows])
    octant = (local[:, 0] >= 0) * 4 + (local[:, 1] >= 0) * 2 + (local[:, 2] >= 0)
    cosv = np.clip(np.sum(cloud.normals[cols] * axes[rows, :, 2], axis=1), -1.0, 1.0)
    # plain counts; inverse-distance weights amplified sensor noise on the nearest neighbors
    w = np.ones(len(rows))

    u = (cosv + 1.0) * 0.5 * N_COS_BINS - 0.5
    lo = np.floor(u)
    frac = u - lo
    lo = lo.astype(np.intp)
    hi = lo + 1
    wl = np.where(lo < 0, 0.0, 1.0 - frac)
    wh = np.where(hi >= N_COS_BINS, 0.0, frac)
    # mass falling off either end stays in the end bin
    wl = np.where(hi >= N_COS_BINS, 1.0, wl)
    wh = np.where(lo < 0, 1.0, wh)
    lo = np.clip(lo, 0, N_COS_BINS - 1)
    hi = np.clip(hi, 0, N_COS_BINS - 1)

    base = rows * DESCRIPTOR_DIM + octant * N_COS_BINS
    flat = np.bincount(base + lo, weights=w * wl, minlength=n * DESCRIPTOR_DIM)
    flat += np.bincount(base + hi, weights=w * wh, minlength=n * DESCRIPTOR_DIM)
    desc = flat.reshape(n, DESCRIPTOR_DIM)
    norm = np.linalg.norm(desc, axis=1)
    count = np.bincount(rows, minlength=n)
    valid = (count >= MIN_NEIGHBORS) & (norm > 0)
    desc[valid] /= norm[valid][:, None]
    desc[~valid] = 0.0
    return desc, valid


def compute_rf(cloud: PointCloud, point_index: int, radius: float) -> LocalReferenceFrame:
    """Reference frame of one point from its ``radius`` neighborhood."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    centers = np.array([point_index])
    rows, cols = _neighborhoods(cloud, centers, radius, 1)
    frames = _frames(cloud, centers, rows, cols, radius)
    if not frames.valid[0]:
        raise InvalidFrameError(
            f"point {point_index} has {len(cols)} neighbors within {radius}, need {MIN_NEIGHBORS}")
    return frames[0]


def compute_descriptor(cloud: PointCloud, point_index: int, rf: LocalReferenceFrame,
                       radius: float) -> Descriptor:
    if radius <= 0:
        raise ValueError("radius must be positive")
    centers = np.array([point_index])
    rows, cols = _neighborhoods(cloud, centers, radius, 1)
    desc, valid = _histograms(cloud, centers, rows, cols, rf.axes[None], radius)
    return Descriptor(desc[0], bool(valid[0]))


def compute_all_features(cloud: PointCloud, radius: float = DEFAULT_RADIUS,
                         workers: int = 1) -> Features:
    """Descriptors and frames for every point, in cloud order.

    Points with fewer than ``MIN_NEIGHBORS`` neighbors are kept but flagged
    invalid (zero descriptor, identity frame).
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    centers = np.arange(len(cloud))
    rows, cols = _neighborhoods(cloud, centers, radius, workers)
    frames = _frames(cloud, centers, rows, cols, radius)
    desc, dvalid = _histograms(cloud, centers, rows, cols, frames.axes, radius)
    valid = dvalid & frames.valid
    desc[~valid] = 0.0
    return Features(desc, valid, ReferenceFrames(frames.origins, frames.axes, valid))


def save_features_csv(path, features: Features) -> None:
    """One row per point: index, valid, descriptor values, 9 rotation values (row-major), origin."""
    dim = features.descriptors.shape[1]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "valid"] + [f"f{i}" for i in range(dim)]
                   + [f"r{a}{b}" for a in range(3) for b in range(3)] + ["ox", "oy", "oz"])
        for i in range(len(features)):
            w.writerow([i, int(features.valid[i])]
                       + [repr(float(v)) for v in features.descriptors[i]]
                       + [repr(float(v)) for v in features.frames.axes[i].ravel()]
                       + [repr(float(v)) for v in features.frames.origins[i]])


def load_features_csv(path) -> Features:
    """Inverse of :func:`save_features_csv`; also accepts externally computed features."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 2 - 12
        if dim <= 0:
            raise ValueError(f"{path}: header has too few columns")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}: row {lineno} has {len(row)} columns, expected {len(header)}")
            if int(row[0]) != len(rows):
                raise ValueError(f"{path}: row {lineno} index {row[0]} out of order")
            rows.append([float(v) for v in row[1:]])
    data = np.array(rows, dtype=float).reshape(-1, 1 + dim + 12)
    valid = data[:, 0] != 0
    desc = data[:, 1:1 + dim]
    axes = data[:, 1 + dim:1 + dim + 9].reshape(-1, 3, 3)
    origins = data[:, 1 + dim + 9:]
    return Features(desc, valid, ReferenceFrames(origins, axes, valid))
