"""Seeded synthetic shapes and scenes standing in for scanned models."""
from __future__ import annotations

from typing import Optional

import numpy as np

from .geometry import PointCloud, RigidTransform, estimate_normals, random_rotation

__all__ = ["make_blob", "make_scene", "random_transform", "BUNNY_SCALE", "VIEWPOINT"]

# half-extent of the synthetic model, comparable to the Stanford bunny (~0.15 m across)
BUNNY_SCALE = 0.075
# sensor position used by make_scene
VIEWPOINT = np.array([0.0, 0.0, 1.0])


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    theta = np.pi * (1 + 5 ** 0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)


def make_blob(n_points: int = 10000, scale: float = BUNNY_SCALE, seed: int = 0,
              n_bumps: int = 60, amplitude: float = 0.25, jitter: float = 0.3,
              max_frequency: float = 8.0, stretch=(1.0, 0.8, 0.65),
              sample_seed: Optional[int] = None) -> PointCloud:
    """A closed, bumpy, asymmetric surface sampled with ``n_points`` points.

    The surface is a star-shaped radial deformation of an ellipsoid by a sum
    of random plane waves, fixed by ``seed`` (and ``n_points``). Sample
    directions come from a jittered Fibonacci lattice. The jitter is drawn
    from ``sample_seed`` when given, so different sample seeds give
    independent samplings of the same surface.
    """
    rng = np.random.default_rng(seed)
    dirs = _fibonacci_sphere(n_points)
    noise = rng.normal(scale=jitter * np.sqrt(4 * np.pi / n_points), size=dirs.shape)
    if sample_seed is not None:
        noise = np.random.default_rng(sample_seed).normal(
            scale=jitter * np.sqrt(4 * np.pi / n_points), size=dirs.shape)
    dirs = dirs + noise
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    freq = rng.normal(size=(n_bumps, 3)) * rng.uniform(1.0, max_frequency, size=(n_bumps, 1))
    phase = rng.uniform(0, 2 * np.pi, size=n_bumps)
    amp = amplitude * rng.uniform(0.3, 1.0, size=n_bumps) / np.sqrt(n_bumps / 4)
    radial = 1.0 + np.sin(dirs @ freq.T + phase) @ amp
    return PointCloud(scale * dirs * radial[:, None] * np.asarray(stretch, dtype=float))


def random_transform(rng: np.random.Generator, max_translation: float = 0.1) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.uniform(-max_translation, max_translation, 3))


def _front_facing(points: np.ndarray, normal_radius: float, viewpoint: np.ndarray) -> np.ndarray:
    """Mask of points whose outward normal faces ``viewpoint``."""
    cloud = estimate_normals(PointCloud(points), normal_radius)
    return np.sum(cloud.normals * (viewpoint - points), axis=1) > 0


def make_scene(shape_seed: int, seed: int, n_points: int = 10000, clutter_ratio: float = 2.0,
               include_object: bool = True, n_instances: int = 1, separation: float = 0.3,
               n_clutter_blobs: int = 40, clutter_extent: float = 0.3,
               clutter_gap: float = 0.02, noise: float = 0.0, normal_radius: float = 0.01,
               viewpoint=VIEWPOINT) -> tuple[PointCloud, list[RigidTransform]]:
    """Single-view scene of ``make_blob(n_points, seed=shape_seed)`` among clutter.

    Each instance is an independent resampling of the model surface under a
    random rotation, and only the half facing ``viewpoint`` is kept (about
    50% self-occlusion). Clutter is ``n_clutter_blobs`` small unrelated
    blobs seen from the same viewpoint, totalling about ``clutter_ratio``
    times the visible instance points, scattered within ``clutter_extent``
    of the instances and kept ``clutter_gap`` apart from everything else. With ``include_object=False`` the
    instances are generated but left out, so the clutter is unchanged.
    Returns the scene and the true object-to-scene poses.
    """
    rng = np.random.default_rng(seed)
    viewpoint = np.asarray(viewpoint, dtype=float)
    parts = []
    poses = []
    centers = []
    n_visible = 0
    for k in range(n_instances):
        surface = make_blob(n_points, seed=shape_seed, sample_seed=int(rng.integers(1 << 31)))
        offset = (k - (n_instances - 1) / 2) * separation
        pose = RigidTransform(random_rotation(rng), np.array([offset, 0.0, 0.0]))
        pts = pose.apply(surface.points)
        pts = pts[_front_facing(pts, normal_radius, viewpoint)]
        centers.append(pose.translation)
        n_visible += len(pts)
        if include_object:
            parts.append(pts)
            poses.append(pose)

    # a whole clutter blob loses about half its points to self-occlusion
    per_blob = int(round(2 * clutter_ratio * n_visible / n_clutter_blobs))
    # same sampling density as the model
    area_per_point = 4 * np.pi * BUNNY_SCALE ** 2 * 0.8 / n_points
    scale = np.sqrt(per_blob * area_per_point / (4 * np.pi * 0.8))
    placed = [(c, BUNNY_SCALE) for c in centers]
    for b in range(n_clutter_blobs):
        blob = make_blob(per_blob, scale=scale, seed=int(rng.integers(1 << 31)), n_bumps=20,
                         amplitude=0.3, max_frequency=4.0, stretch=rng.uniform(0.7, 1.0, 3))
        anchor = centers[b % len(centers)]
        # scattered across the view with a gap between any two shapes
        size = 1.3 * scale
        for _ in range(1000):
            direction = rng.normal(size=3) * np.array([1.0, 1.0, 0.3])
            direction /= np.linalg.norm(direction)
            center = anchor + direction * rng.uniform(BUNNY_SCALE + size, clutter_extent)
            if all(np.linalg.norm(center - c) > r + size + clutter_gap for c, r in placed):
                break
        else:
            raise RuntimeError("could not place clutter; increase clutter_extent")
        placed.append((center, size))
        pts = blob.points @ random_rotation(rng).T + center
        parts.append(pts[_front_facing(pts, normal_radius, viewpoint)])
    scene = np.vstack(parts)
    if noise > 0:
        scene = scene + rng.normal(scale=noise, size=scene.shape)
    return PointCloud(scene), poses
