"""Geometric primitives: point clouds, rigid transforms, exact neighbor search.

Point arrays are ``(n, 3)`` float64 numpy arrays throughout. Spatial queries go
through :class:`scipy.spatial.cKDTree`; the results are post-processed so that
neighbor ordering is fully deterministic (ascending distance, then ascending
point index) regardless of how the tree breaks ties internally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "DegenerateCloudError",
    "PointCloud",
    "RigidTransform",
    "l2_distance",
    "pairwise_distance",
    "knn",
    "knn_many",
    "knn_bruteforce",
    "radius_neighbors",
    "estimate_resolution",
    "estimate_normals",
    "fit_rigid",
    "random_rotation",
]

_TIE_RTOL = 1e-9


class DegenerateCloudError(ValueError):
    """Raised when a cloud is too small for the requested operation."""


def l2_distance(a, b) -> float:
    """Euclidean distance between two equal-length vectors (scaled, so tiny differences stay nonzero)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return math.hypot(*(a - b).ravel().tolist())


def pairwise_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean distance between broadcastable ``(..., d)`` arrays.

    Every distance in the package that feeds a comparison goes through this
    function so that brute-force checks reproduce the same floating point.
    """
    diff = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return np.sqrt(np.sum(diff * diff, axis=-1))


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Immutable point set with optional unit normals and a lazily built k-d tree.

    ``unreliable`` marks points whose normal could not be estimated (too few
    neighbors); those points carry the placeholder normal ``(0, 0, 1)``.
    """

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    unreliable: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (n, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.ascontiguousarray(self.normals, dtype=float)
            if nrm.shape != pts.shape:
                raise ValueError("normals must match points in shape")
            lengths = np.linalg.norm(nrm, axis=1)
            if len(nrm) and np.max(np.abs(lengths - 1.0)) > 1e-6:
                raise ValueError("normals must have unit length")
            nrm.setflags(write=False)
            object.__setattr__(self, "normals", nrm)
        if self.unreliable is not None:
            flags = np.asarray(self.unreliable, dtype=bool).copy()
            if flags.shape != (len(pts),):
                raise ValueError("unreliable flags must have one entry per point")
            flags.setflags(write=False)
            object.__setattr__(self, "unreliable", flags)

    def __len__(self) -> int:
        return len(self.points)

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.points)

    def transformed(self, transform: "RigidTransform") -> "PointCloud":
        """Return the cloud moved by ``transform`` (normals rotated along)."""
        normals = None if self.normals is None else self.normals @ transform.rotation.T
        return PointCloud(transform.apply(self.points), normals, self.unreliable)

    def subset(self, index) -> "PointCloud":
        index = np.asarray(index)
        normals = None if self.normals is None else self.normals[index]
        unreliable = None if self.unreliable is None else self.unreliable[index]
        return PointCloud(self.points[index], normals, unreliable)

    def with_normals(self, normals, unreliable=None) -> "PointCloud":
        return PointCloud(self.points, normals, unreliable)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """An element of SE(3): ``x -> rotation @ x + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("transform entries must be finite")
        if np.max(np.abs(R.T @ R - np.eye(3))) > 1e-6 or abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValueError("rotation must be orthonormal with determinant +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, matrix) -> "RigidTransform":
        m = np.asarray(matrix, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        """Transform a single point ``(3,)`` or an array of points ``(n, 3)``."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def orthonormalized(self) -> "RigidTransform":
        """Project the rotation back onto SO(3) (removes accumulated drift)."""
        U, _, Vt = np.linalg.svd(self.rotation)
        R = U @ Vt
        if np.linalg.det(R) < 0:
            U[:, -1] = -U[:, -1]
            R = U @ Vt
        return RigidTransform(R, self.translation)

    def rotation_angle(self) -> float:
        """Rotation magnitude in radians."""
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.arccos(np.clip(c, -1.0, 1.0)))

    def __repr__(self) -> str:
        return f"RigidTransform(angle={np.degrees(self.rotation_angle()):.3f}deg, t={self.translation})"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def invert(t: RigidTransform) -> RigidTransform:
    return t.inverse()


def apply(t: RigidTransform, p) -> np.ndarray:
    return t.apply(p)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation matrix (unit quaternion sampling)."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


# --------------------------------------------------------------------------
# neighbor search


def knn_many(tree: cKDTree, points: np.ndarray, queries: np.ndarray, k: int,
             workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Exact k nearest neighbors for many queries, ties broken by index.

    Returns ``(index, distance)`` arrays of shape ``(m, min(k, n))``.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    n = len(points)
    m = len(queries)
    k = min(int(k), n)
    if k <= 0 or m == 0:
        return np.empty((m, 0), dtype=np.intp), np.empty((m, 0))
    kq = min(k + 1, n)
    _, idx = tree.query(queries, k=kq, workers=workers)
    idx = np.asarray(idx, dtype=np.intp).reshape(m, kq)
    dist = pairwise_distance(points[idx], queries[:, None, :])
    order = np.lexsort((idx, dist), axis=-1)
    idx = np.take_along_axis(idx, order, axis=1)
    dist = np.take_along_axis(dist, order, axis=1)
    if kq > k:
        # a point tied with the k-th neighbor may have been left out by the tree
        kth = dist[:, k - 1]
        tied = np.nonzero(dist[:, k] <= kth * (1 + _TIE_RTOL) + 1e-300)[0]
        for row in tied:
            r = kth[row] * (1 + 2 * _TIE_RTOL) + 1e-300
            cand = np.asarray(tree.query_ball_point(queries[row], r), dtype=np.intp)
            cd = pairwise_distance(points[cand], queries[row])
            o = np.lexsort((cand, cd))[:k]
            idx[row, :k] = cand[o]
            dist[row, :k] = cd[o]
    return idx[:, :k], dist[:, :k]


def knn_bruteforce(points: np.ndarray, queries: np.ndarray, k: int,
                   chunk: int = 1024) -> tuple[np.ndarray, np.ndarray]:
    """Exact k nearest neighbors by dense linear algebra, for high dimensions.

    Candidates come from the expanded form of the squared distance (a matrix
    product); they are then re-measured with :func:`pairwise_distance`. A row
    is kept only when its k-th exact distance is provably below every
    non-candidate; other rows are recomputed against all points. The result
    equals a full linear scan with ties broken by index.
    """
    points = np.asarray(points, dtype=float)
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    n, m = len(points), len(queries)
    k = min(int(k), n)
    if k <= 0 or m == 0:
        return np.empty((m, 0), dtype=np.intp), np.empty((m, 0))
    c = min(k + 6, n)
    pn = np.sum(points * points, axis=1)
    out_idx = np.empty((m, k), dtype=np.intp)
    out_dist = np.empty((m, k))
    for lo in range(0, m, chunk):
        q = queries[lo:lo + chunk]
        qn = np.sum(q * q, axis=1)
        approx = pn[None, :] - 2.0 * (q @ points.T) + qn[:, None]
        if c < n:
            part = np.argpartition(approx, c, axis=1)
            cand = part[:, :c]
            bound = np.take_along_axis(approx, part[:, c:c + 1], axis=1)[:, 0]
        else:
            cand = np.broadcast_to(np.arange(n), (len(q), n)).copy()
            bound = np.full(len(q), np.inf)
        dist = pairwise_distance(points[cand], q[:, None, :])
        order = np.lexsort((cand, dist), axis=-1)[:, :k]
        idx = np.take_along_axis(cand, order, axis=1)
        dist = np.take_along_axis(dist, order, axis=1)
        # rounding error of the expanded form, with a wide safety factor
        err = 1e-10 * (qn + pn.max()) + 1e-300
        unsure = np.flatnonzero(~(dist[:, -1] ** 2 < bound - err))
        for row in unsure:
            full = pairwise_distance(points, q[row])
            o = np.lexsort((np.arange(n), full))[:k]
            idx[row] = o
            dist[row] = full[o]
        out_idx[lo:lo + len(q)] = idx
        out_dist[lo:lo + len(q)] = dist
    return out_idx, out_dist


def knn(cloud: PointCloud, query, k: int) -> list[tuple[int, float]]:
    """The ``k`` nearest points of ``cloud`` to ``query`` as ``(index, distance)``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(cloud) == 0:
        return []
    idx, dist = knn_many(cloud.tree, cloud.points, np.asarray(query, dtype=float)[None], k)
    return [(int(i), float(d)) for i, d in zip(idx[0], dist[0])]


def radius_neighbors(tree: cKDTree, queries: np.ndarray, radius: float,
                     workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Flattened radius neighborhoods as ``(row, neighbor)`` index arrays.

    Rows are grouped in query order and neighbors sorted ascending within
    each row. Query points that are themselves in the tree appear in their
    own neighborhood.
    """
    lists = tree.query_ball_point(queries, radius, workers=workers, return_sorted=True)
    counts = np.fromiter((len(x) for x in lists), dtype=np.intp, count=len(lists))
    rows = np.repeat(np.arange(len(lists)), counts)
    cols = np.fromiter((j for x in lists for j in x), dtype=np.intp, count=int(counts.sum()))
    return rows, cols


def estimate_resolution(cloud: PointCloud) -> float:
    """Median distance from each point to its nearest other point."""
    if len(cloud) < 2:
        raise DegenerateCloudError("resolution needs at least 2 points")
    _, idx = cloud.tree.query(cloud.points, k=2)
    d = pairwise_distance(cloud.points[idx[:, 1]], cloud.points)
    # coincident duplicates may come back in either column
    d0 = pairwise_distance(cloud.points[idx[:, 0]], cloud.points)
    d = np.where(idx[:, 1] == np.arange(len(cloud)), d0, d)
    return float(np.median(d))


def _batched_weighted_cov(points, rows, cols, weights, n, centers):
    """Per-row weighted scatter matrices of ``points[cols] - centers[rows]``."""
    diff = points[cols] - centers[rows]
    cov = np.empty((n, 3, 3))
    for a in range(3):
        for b in range(a, 3):
            s = np.bincount(rows, weights=weights * diff[:, a] * diff[:, b], minlength=n)
            cov[:, a, b] = s
            cov[:, b, a] = s
    return cov


def estimate_normals(cloud: PointCloud, radius: float, viewpoint=None,
                     workers: int = 1) -> PointCloud:
    """PCA normals from the radius neighborhood of every point.

    Normals are oriented away from the cloud centroid, or toward ``viewpoint``
    when one is given. Points with fewer than 3 neighbors (self included) get
    the normal ``(0, 0, 1)`` and are flagged in ``unreliable``.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = cloud.points
    n = len(pts)
    rows, cols = radius_neighbors(cloud.tree, pts, radius, workers=workers)
    counts = np.bincount(rows, minlength=n).astype(float)
    mean = np.stack([np.bincount(rows, weights=pts[cols, a], minlength=n) for a in range(3)], axis=1)
    mean /= np.maximum(counts, 1)[:, None]
    cov = _batched_weighted_cov(pts, rows, cols, np.ones(len(rows)), n, mean)
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]
    if viewpoint is None:
        outward = pts - pts.mean(axis=0)
    else:
        outward = np.asarray(viewpoint, dtype=float) - pts
    flip = np.sum(normals * outward, axis=1) < 0
    normals[flip] = -normals[flip]
    unreliable = counts < 3
    normals[unreliable] = (0.0, 0.0, 1.0)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return PointCloud(pts, normals, unreliable)


def fit_rigid(source: np.ndarray, target: np.ndarray, weights=None) -> RigidTransform:
    """Least-squares rigid transform taking ``source`` onto ``target`` (Kabsch)."""
    src = np.asarray(source, dtype=float)
    dst = np.asarray(target, dtype=float)
    w = np.ones(len(src)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    cs = w @ src
    cd = w @ dst
    H = (src - cs).T @ ((dst - cd) * w[:, None])
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    if d == 0:
        d = 1.0
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return RigidTransform(R, cd - R @ cs)
