"""Two-stage correspondence voting for 3D feature matching.

Putative matches between an object and a scene point cloud are scored first
by local distance-ratio agreement with their object-space neighbors, then by
pose agreement with the globally best local candidates. An Otsu threshold on
the final score separates likely inliers.
"""
from .geometry import (DegenerateCloudError, PointCloud, RigidTransform, estimate_normals,
                       estimate_resolution, fit_rigid, knn)
from .plyio import PlyError, read_ply, write_ply
from .descriptor import (Features, InvalidFrameError, LocalReferenceFrame, ReferenceFrames,
                         compute_all_features, compute_descriptor, compute_rf)
from .correspondence import (Correspondence, CorrespondenceSet, MatchingError, match_features,
                             ratio_set, read_correspondences_csv, score_ratio,
                             write_correspondences_csv)
from .voting import VoteTally, VotingParams, pose_from_correspondence, rank, vote
from .thresholding import DegenerateScoresError, decide, otsu_threshold
from .evaluation import EvaluationReport, GroundTruth, SweepConfig, label_inliers, pr_curve, sweep
from .detection import Detection, DetectionParams, coverage, detect, icp_refine
from .synthetic import make_blob, make_scene

__version__ = "0.1.0"
