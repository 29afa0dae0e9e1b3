"""Two-stage correspondence voting.

Stage 1 (local, invariant): every correspondence is paired with the
correspondences of its ``kappa`` nearest object points. Neighbors that pass the
ratio test are voters; a voter votes positively when the pairwise distance
ratio between object and scene exceeds ``sigma_sim``.

Stage 2 (global, covariant): the ``kappa`` best correspondences of stage 1 vote
for everybody. Each votee hypothesizes a pose from its two reference frames; a
voter votes positively if it passes the stage-1 distance-ratio test *and* its
object point lands within ``delta`` of its scene point under that pose. The
final score accumulates the votes of both stages.

All per-correspondence work is vectorized over numpy arrays. With
``workers > 1`` stage 2 is split over a thread pool in fixed-size chunks; the
result does not depend on the number of workers.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .correspondence import DEFAULT_T_RATIO, Correspondence, CorrespondenceSet, ratio_scores
from .descriptor import ReferenceFrames
from .geometry import RigidTransform, estimate_resolution, knn_many, pairwise_distance

__all__ = [
    "DEFAULT_KAPPA",
    "DEFAULT_SIGMA_SIM",
    "DELTA_RESOLUTIONS",
    "VotingParams",
    "LocalTally",
    "VoteTally",
    "distance_ratio",
    "local_compatibility",
    "local_neighbors",
    "local_voting_stage",
    "pose_from_correspondence",
    "correspondence_poses",
    "global_compatibility",
    "global_voters",
    "global_voting_stage",
    "rank",
    "vote",
    "write_tally_csv",
]

DEFAULT_KAPPA = 250
DEFAULT_SIGMA_SIM = 0.9
DELTA_RESOLUTIONS = 5.0

# votee rows per stage-2 chunk
_CHUNK = 512


@dataclass(frozen=True)
class VotingParams:
    """Voting parameters. ``delta=None`` means 5x the scene resolution."""

    kappa: int = DEFAULT_KAPPA
    sigma_sim: float = DEFAULT_SIGMA_SIM
    delta: Optional[float] = None
    t_ratio: float = DEFAULT_T_RATIO

    def __post_init__(self):
        if int(self.kappa) != self.kappa or self.kappa < 1:
            raise ValueError(f"kappa must be a positive integer, got {self.kappa}")
        if not 0.0 <= self.sigma_sim < 1.0:
            raise ValueError(f"sigma_sim must lie in [0, 1), got {self.sigma_sim}")
        if self.delta is not None and not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if not np.isfinite(self.t_ratio):
            raise ValueError("t_ratio must be finite")

    def describe(self) -> str:
        delta = "5*resolution" if self.delta is None else repr(self.delta)
        return f"kappa={self.kappa} sigma={self.sigma_sim} t_ratio={self.t_ratio} delta={delta}"


@dataclass(eq=False)
class LocalTally:
    neighbors: np.ndarray  # (n, k) correspondence positions, self excluded
    in_ratio_set: np.ndarray
    local_voters: np.ndarray
    local_votes: np.ndarray
    s_local: np.ndarray


@dataclass(eq=False)
class VoteTally:
    """Per-correspondence vote counts and scores, aligned with the input set."""

    s_ratio: np.ndarray
    local_voters: np.ndarray
    local_votes: np.ndarray
    global_voters: np.ndarray
    global_votes: np.ndarray
    s_local: np.ndarray
    s_final: np.ndarray
    voter_set: np.ndarray  # positions of the shared global voters
    delta: float

    def __len__(self) -> int:
        return len(self.s_final)

    def record(self, i: int) -> dict:
        return {
            "local_voters": int(self.local_voters[i]),
            "local_votes": int(self.local_votes[i]),
            "global_voters": int(self.global_voters[i]),
            "global_votes": int(self.global_votes[i]),
            "s_local": float(self.s_local[i]),
            "s_final": float(self.s_final[i]),
        }


# --------------------------------------------------------------------------
# compatibilities


def distance_ratio(d_object, d_scene) -> np.ndarray:
    """``min(d/d', d'/d)``, with 0 wherever either distance is zero."""
    d = np.asarray(d_object, dtype=float)
    dp = np.asarray(d_scene, dtype=float)
    ok = (d > 0) & (dp > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(d < dp, d / dp, dp / d)
    return np.where(ok, r, 0.0)


def local_compatibility(p1, p2, q1, q2):
    """Distance-ratio compatibility of correspondences ``(p1, q1)`` and ``(p2, q2)``.

    ``p`` are object points, ``q`` their scene matches. Accepts single points
    or broadcastable arrays of points.
    """
    r = distance_ratio(pairwise_distance(p1, p2), pairwise_distance(q1, q2))
    return float(r) if np.ndim(r) == 0 else r


def global_compatibility(pose: RigidTransform, p2, q2):
    """Distance between ``p2`` moved by ``pose`` and its match ``q2``."""
    d = pairwise_distance(pose.apply(p2), q2)
    return float(d) if np.ndim(d) == 0 else d


# --------------------------------------------------------------------------
# stage 1


def local_neighbors(object_points: np.ndarray, kappa: int, workers: int = 1) -> np.ndarray:
    """The ``kappa`` nearest other correspondences of each one, on the object side.

    ``object_points`` are the object points of the correspondences, in set
    order. Returns positions into that order, shape ``(n, min(kappa, n-1))``,
    sorted by distance with ties broken by position.
    """
    n = len(object_points)
    k = min(int(kappa), n - 1)
    if k <= 0:
        return np.empty((n, 0), dtype=np.intp)
    tree = cKDTree(object_points)
    idx, _ = knn_many(tree, object_points, object_points, k + 1, workers=workers)
    is_self = idx == np.arange(n)[:, None]
    # coincident points can push self out of the k+1 list; then drop the farthest
    missing = ~is_self.any(axis=1)
    is_self[missing, -1] = True
    return idx[~is_self].reshape(n, k)


def local_voting_stage(cs: CorrespondenceSet, params: VotingParams,
                       neighbors: Optional[np.ndarray] = None, workers: int = 1) -> LocalTally:
    s_ratio = ratio_scores(cs.feature_distance_1, cs.feature_distance_2)
    in_ratio = s_ratio >= params.t_ratio
    P = cs.object_points
    Q = cs.scene_points
    if neighbors is None:
        neighbors = local_neighbors(P, params.kappa, workers=workers)
    n = len(cs)
    n_voters = np.zeros(n, dtype=np.intp)
    n_votes = np.zeros(n, dtype=np.intp)
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        nb = neighbors[lo:hi]
        voter = in_ratio[nb]
        compat = distance_ratio(pairwise_distance(P[lo:hi, None, :], P[nb]),
                                pairwise_distance(Q[lo:hi, None, :], Q[nb]))
        n_voters[lo:hi] = voter.sum(axis=1)
        n_votes[lo:hi] = (voter & (compat > params.sigma_sim)).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_local = np.where(n_voters > 0, n_votes / n_voters, 0.0)
    return LocalTally(neighbors, in_ratio, n_voters, n_votes, s_local)


# --------------------------------------------------------------------------
# stage 2


def pose_from_correspondence(c: Correspondence, rfs_object: ReferenceFrames,
                             rfs_scene: ReferenceFrames) -> RigidTransform:
    """Object-to-scene pose hypothesized by the two frames of ``c``.

    Frames map local coordinates to world coordinates (``x -> A x + o``); the
    pose is the scene frame composed with the inverse object frame, so the
    object point lands exactly on its scene match.
    """
    fo = rfs_object[c.object_index]
    fs = rfs_scene[c.scene_index]
    R = fs.axes @ fo.axes.T
    return RigidTransform(R, fs.origin - R @ fo.origin)


def correspondence_poses(cs: CorrespondenceSet, rfs_object: ReferenceFrames,
                         rfs_scene: ReferenceFrames) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch version of :func:`pose_from_correspondence`: ``(R, t, valid)``."""
    Ao = rfs_object.axes[cs.object_index]
    As = rfs_scene.axes[cs.scene_index]
    R = As @ np.transpose(Ao, (0, 2, 1))
    t = rfs_scene.origins[cs.scene_index] - np.einsum("nij,nj->ni", R, rfs_object.origins[cs.object_index])
    valid = rfs_object.valid[cs.object_index] & rfs_scene.valid[cs.scene_index]
    return R, t, valid


def rank(scores, s_ratio=None, object_index=None) -> np.ndarray:
    """Positions sorted by descending score, then descending ratio score,
    then ascending object index; remaining ties keep input order."""
    scores = np.asarray(scores, dtype=float)
    keys = [np.arange(len(scores))]
    if object_index is not None:
        keys.append(np.asarray(object_index))
    if s_ratio is not None:
        keys.append(-np.asarray(s_ratio, dtype=float))
    keys.append(-scores)
    return np.lexsort(keys)


def global_voters(s_local, s_ratio, object_index, kappa: int) -> np.ndarray:
    """The shared global voter set: top ``kappa`` positions by stage-1 rank."""
    return rank(s_local, s_ratio, object_index)[:kappa]


def _global_chunk(lo, hi, P, Q, R, t, pose_ok, G, sigma_sim, delta):
    Pc, Qc = P[lo:hi], Q[lo:hi]
    Pg, Qg = P[G], Q[G]
    compat = distance_ratio(pairwise_distance(Pc[:, None, :], Pg[None]),
                            pairwise_distance(Qc[:, None, :], Qg[None]))
    moved = np.einsum("mij,kj->mki", R[lo:hi], Pg) + t[lo:hi, None, :]
    resid = pairwise_distance(moved, Qg[None])
    ok = (compat > sigma_sim) & (resid < delta)
    ok &= G[None, :] != np.arange(lo, hi)[:, None]
    ok &= pose_ok[lo:hi, None]
    return ok.sum(axis=1)


def global_voting_stage(cs: CorrespondenceSet, local: LocalTally, rfs_object: ReferenceFrames,
                        rfs_scene: ReferenceFrames, params: VotingParams, delta: float,
                        workers: int = 1) -> VoteTally:
    """Covariant voting by the ``kappa`` best stage-1 correspondences.

    A votee without a valid pose (missing frame on either side) receives no
    global voters and keeps its stage-1 score. A correspondence never votes
    for itself.
    """
    n = len(cs)
    s_ratio = ratio_scores(cs.feature_distance_1, cs.feature_distance_2)
    G = global_voters(local.s_local, s_ratio, cs.object_index, params.kappa)
    P, Q = cs.object_points, cs.scene_points
    R, t, pose_ok = correspondence_poses(cs, rfs_object, rfs_scene)

    bounds = [(lo, min(lo + _CHUNK, n)) for lo in range(0, n, _CHUNK)]
    args = (P, Q, R, t, pose_ok, G, params.sigma_sim, delta)
    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda b: _global_chunk(b[0], b[1], *args), bounds))
    else:
        parts = [_global_chunk(lo, hi, *args) for lo, hi in bounds]
    g_votes = np.concatenate(parts) if parts else np.zeros(0, dtype=np.intp)

    in_g = np.zeros(n, dtype=bool)
    in_g[G] = True
    g_voters = np.where(pose_ok, len(G) - in_g, 0)
    num = local.local_votes + g_votes
    den = local.local_voters + g_voters
    with np.errstate(divide="ignore", invalid="ignore"):
        s_final = np.where(den > 0, num / den, 0.0)
    return VoteTally(s_ratio, local.local_voters, local.local_votes, g_voters, g_votes,
                     local.s_local, s_final, G, float(delta))


def vote(cs: CorrespondenceSet, rfs_object: ReferenceFrames, rfs_scene: ReferenceFrames,
         params: VotingParams = VotingParams(), workers: int = 1,
         scene_resolution: Optional[float] = None) -> VoteTally:
    """Run both voting stages on ``cs`` (which must carry its clouds)."""
    if cs.object is None or cs.scene is None:
        raise ValueError("correspondence set must reference its object and scene clouds")
    delta = params.delta
    if delta is None:
        if scene_resolution is None:
            scene_resolution = estimate_resolution(cs.scene)
        delta = DELTA_RESOLUTIONS * scene_resolution
    if len(cs) == 0:
        z = np.zeros(0)
        zi = np.zeros(0, dtype=np.intp)
        return VoteTally(z, zi, zi, zi, zi, z, z, zi, float(delta))
    local = local_voting_stage(cs, params, workers=workers)
    return global_voting_stage(cs, local, rfs_object, rfs_scene, params, delta, workers=workers)


def write_tally_csv(path_or_file, cs: CorrespondenceSet, tally: VoteTally,
                    header_comment: str | None = None) -> None:
    fields = ["object_index", "scene_index", "s_ratio", "local_voters", "local_votes",
              "s_local", "global_voters", "global_votes", "s_final"]

    def _write(fh):
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh)
        w.writerow(fields)
        for i in range(len(cs)):
            w.writerow([int(cs.object_index[i]), int(cs.scene_index[i]), repr(float(tally.s_ratio[i])),
                        int(tally.local_voters[i]), int(tally.local_votes[i]), repr(float(tally.s_local[i])),
                        int(tally.global_voters[i]), int(tally.global_votes[i]), repr(float(tally.s_final[i]))])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with Path(path_or_file).open("w", newline="") as fh:
            _write(fh)
