"""``corrvote`` command line: match, vote, eval, detect, bench and synth.

Every output file starts with a ``#`` header line holding the full parameter
set and seed of the run. Exit codes: 0 success, 1 runtime failure, 2 usage or
input validation error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .correspondence import (DEFAULT_T_RATIO, MatchingError, match_features, read_correspondences_csv,
                             write_correspondences_csv)
from .descriptor import DEFAULT_RADIUS, DETECTION_RADIUS, compute_all_features
from .detection import (COVERAGE_MIN, OVERLAP_MAX, DetectionParams, detect_from_tally, export_detection_ply,
                        write_detections_csv, write_detections_json)
from .evaluation import DEFAULT_NORMAL_RADIUS, NOISE_LEVELS_MM, SweepConfig, sweep, write_report_csv
from .geometry import DegenerateCloudError, PointCloud, estimate_normals, estimate_resolution
from .plyio import PlyError, read_ply, write_ply
from .synthetic import VIEWPOINT, make_blob, make_scene
from .thresholding import DEFAULT_BINS, DegenerateScoresError, decide
from .voting import (DEFAULT_KAPPA, DEFAULT_SIGMA_SIM, VotingParams, global_voting_stage, local_voting_stage,
                     vote, write_tally_csv)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad input detected after argument parsing (missing file, invalid CSV row...)."""


# --------------------------------------------------------------------------
# argument types


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {v}")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not (np.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _unit_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return v


def _open_unit_float(text: str) -> float:
    v = _unit_float(text)
    if v == 0.0 or v == 1.0:
        raise argparse.ArgumentTypeError(f"must lie strictly between 0 and 1, got {text}")
    return v


# --------------------------------------------------------------------------
# shared flags


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="seed for any randomness (default 0)")
    p.add_argument("--threads", type=_positive_int, default=1, help="worker threads (output does not depend on it)")


def _add_features(p: argparse.ArgumentParser, radius: float) -> None:
    p.add_argument("--radius", type=_positive_float, default=radius,
                   help=f"descriptor support radius in model units (default {radius})")
    p.add_argument("--normal-radius", type=_positive_float, default=DEFAULT_NORMAL_RADIUS,
                   help="radius for normal estimation when a PLY has no normals")
    p.add_argument("--viewpoint", type=float, nargs=3, metavar=("X", "Y", "Z"),
                   help="orient estimated scene normals toward this sensor position "
                        "(default: away from the scene centroid)")


def _add_voting(p: argparse.ArgumentParser) -> None:
    p.add_argument("--kappa", type=_positive_int, default=DEFAULT_KAPPA, help="voters per stage (default 250)")
    p.add_argument("--sigma-sim", type=_open_unit_float, default=DEFAULT_SIGMA_SIM,
                   help="distance-ratio similarity threshold (default 0.9)")
    p.add_argument("--t-ratio", type=_unit_float, default=DEFAULT_T_RATIO,
                   help="minimum ratio score of local voters (default 0.2)")
    p.add_argument("--delta", type=_positive_float, default=None,
                   help="global alignment tolerance (default 5 x scene resolution)")
    p.add_argument("--bins", type=_positive_int, default=DEFAULT_BINS, help="Otsu histogram bins (default 100)")


def _voting_params(args) -> VotingParams:
    return VotingParams(args.kappa, args.sigma_sim, args.delta, args.t_ratio)


def _header(command: str, args, extra: dict | None = None) -> str:
    """Single line with every parameter of the run, in argument order."""
    skip = {"func", "command", "output", "json", "export_ply", "config"}
    parts = [f"corrvote {__version__} {command}"]
    if hasattr(args, "kappa"):
        parts.append(_voting_params(args).describe())
        skip |= {"kappa", "sigma_sim", "t_ratio", "delta"}
    for key, value in vars(args).items():
        if key in skip:
            continue
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        parts.append(f"{key}={value}")
    for key, value in (extra or {}).items():
        parts.append(f"{key}={value}")
    return " ".join(parts)


# --------------------------------------------------------------------------
# inputs


def _load_cloud(path: str, normal_radius: float, viewpoint=None, workers: int = 1) -> PointCloud:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    try:
        cloud = read_ply(p)
    except PlyError as exc:
        raise UsageError(f"{path}: {exc}") from None
    if cloud.normals is None:
        cloud = estimate_normals(cloud, normal_radius, viewpoint=viewpoint, workers=workers)
    return cloud


def _load_pair(args):
    obj = _load_cloud(args.object, args.normal_radius, workers=args.threads)
    scene = _load_cloud(args.scene, args.normal_radius, args.viewpoint, workers=args.threads)
    return obj, scene


def _features(obj, scene, args):
    fo = compute_all_features(obj, args.radius, workers=args.threads)
    fs = compute_all_features(scene, args.radius, workers=args.threads)
    return fo, fs


def _emit(text: str) -> None:
    print(text, flush=True)


# --------------------------------------------------------------------------
# subcommands


def cmd_match(args) -> int:
    obj, scene = _load_pair(args)
    fo, fs = _features(obj, scene, args)
    cs = match_features(fo, fs, obj, scene, workers=args.threads)
    header = _header("match", args)
    _emit(f"# {header}")
    write_correspondences_csv(args.output, cs, header)
    _emit(f"correspondences: {len(cs)} -> {args.output}")
    return EXIT_OK


def cmd_vote(args) -> int:
    params = _voting_params(args)
    obj, scene = _load_pair(args)
    fo, fs = _features(obj, scene, args)
    if args.correspondences:
        if not Path(args.correspondences).is_file():
            raise UsageError(f"no such file: {args.correspondences}")
        try:
            cs = read_correspondences_csv(args.correspondences, obj, scene)
        except MatchingError as exc:
            raise UsageError(str(exc)) from None
    else:
        cs = match_features(fo, fs, obj, scene, workers=args.threads)
    tally = vote(cs, fo.frames, fs.frames, params, workers=args.threads)
    mask, threshold = decide(tally.s_final, args.bins)
    header = _header("vote", args, {"resolved_delta": repr(tally.delta)})
    _emit(f"# {header}")
    write_tally_csv(args.output, cs, tally, header)
    _emit(f"threshold: {threshold:.4f}" if np.isfinite(threshold) else "threshold: none (degenerate scores)")
    _emit(f"accepted: {int(mask.sum())} of {len(cs)}")
    return EXIT_OK


def _sweep_config(args) -> SweepConfig:
    conf: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"no such file: {args.config}")
        try:
            conf = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON: {exc}") from None
        if not isinstance(conf, dict):
            raise UsageError(f"{args.config}: expected a JSON object")
        known = {"kind", "values", "noise_mm", "n_points", "shape_seed", "seed", "radius", "normal_radius",
                 "bins", "inherit_normals", "kappa", "sigma_sim", "t_ratio", "delta"}
        unknown = sorted(set(conf) - known)
        if unknown:
            raise UsageError(f"{args.config}: unknown keys {unknown}")
    kind = args.sweep or conf.get("kind", "noise")
    default_values = {"noise": NOISE_LEVELS_MM, "kappa": (50, 100, 150, 200, 250, 300, 350, 400, 450, 500),
                      "sigma_sim": (0.5, 0.6, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)}
    if kind not in default_values:
        raise UsageError(f"unknown sweep kind {kind!r}; expected noise, kappa or sigma_sim")
    values = args.values or conf.get("values") or default_values[kind]

    def pick(name, default):
        # explicit flags win over the config file
        flag = getattr(args, name, None)
        if flag is not None and flag != default:
            return flag
        return conf.get(name, default)

    try:
        params = VotingParams(int(pick("kappa", DEFAULT_KAPPA)), float(pick("sigma_sim", DEFAULT_SIGMA_SIM)),
                              pick("delta", None), float(pick("t_ratio", DEFAULT_T_RATIO)))
        return SweepConfig(kind=kind, values=list(values), params=params,
                           noise_mm=float(pick("noise_mm", 2.5)), n_points=int(pick("n_points", 10000)),
                           shape_seed=int(pick("shape_seed", 0)), seed=int(pick("seed", 0)),
                           radius=float(pick("radius", DEFAULT_RADIUS)),
                           normal_radius=float(pick("normal_radius", DEFAULT_NORMAL_RADIUS)),
                           bins=int(pick("bins", DEFAULT_BINS)),
                           inherit_normals=bool(conf.get("inherit_normals", not args.estimate_normals)))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid sweep configuration: {exc}") from None


def cmd_eval(args) -> int:
    config = _sweep_config(args)
    header = (f"corrvote {__version__} eval sweep={config.kind} values={','.join(str(v) for v in config.values)} "
              f"{config.params.describe()} bins={config.bins} noise_mm={config.noise_mm} "
              f"n_points={config.n_points} shape_seed={config.shape_seed} seed={config.seed} "
              f"radius={config.radius} normal_radius={config.normal_radius} "
              f"inherit_normals={config.inherit_normals} threads={args.threads}")
    _emit(f"# {header}")
    reports = sweep(config, workers=args.threads)
    write_report_csv(args.output, reports, header)
    if args.curve:
        with Path(args.curve).open("w", newline="") as fh:
            fh.write(f"# {header}\n")
            w = csv.writer(fh)
            w.writerow(["sweep", "value", "threshold", "precision", "recall"])
            for rep in reports:
                for t, p, r in rep.curve:
                    w.writerow([config.kind, rep.params["value"], f"{t:.10g}", f"{p:.10g}", f"{r:.10g}"])
    for rep in reports:
        recall = "n/a" if rep.recall_at_decision is None else f"{rep.recall_at_decision:.3f}"
        _emit(f"{config.kind}={rep.params['value']}: inliers={rep.inlier_fraction:.3f} "
              f"precision={rep.precision_at_decision:.3f} recall={recall} "
              f"f1={rep.f1_at_decision:.3f} max_f1={rep.max_f1:.3f}")
    return EXIT_OK


def cmd_detect(args) -> int:
    params = DetectionParams(_voting_params(args), args.top_n, args.overlap_max, args.coverage_min,
                             args.icp_iters, args.radius, args.dist_tol, args.max_corr_dist)
    obj, scene = _load_pair(args)
    fo, fs = _features(obj, scene, args)
    cs = match_features(fo, fs, obj, scene, workers=args.threads)
    res = estimate_resolution(scene)
    tally = vote(cs, fo.frames, fs.frames, params.voting, workers=args.threads, scene_resolution=res)
    detections = detect_from_tally(obj, scene, cs, tally, fo, fs, params, res, args.threads)
    header = _header("detect", args, {"scene_resolution": repr(res)})
    _emit(f"# {header}")
    write_detections_csv(args.output, detections, header)
    if args.json:
        write_detections_json(args.json, detections, {"header": header})
    accepted = [d for d in detections if d.accepted]
    if args.export_ply:
        out = Path(args.export_ply)
        out.mkdir(parents=True, exist_ok=True)
        for d in accepted:
            export_detection_ply(out / f"detection_{d.rank:04d}.ply", obj, d)
    for d in accepted:
        _emit(f"detection rank={d.rank} coverage={d.coverage:.3f} t={np.round(d.pose.translation, 5).tolist()}")
    _emit(f"accepted: {len(accepted)} of {len(detections)} hypotheses")
    return EXIT_OK


def cmd_bench(args) -> int:
    header = _header("bench", args)
    _emit(f"# {header}")
    params = _voting_params(args)
    rows = []
    prev = None
    for n in args.sizes:
        cloud = estimate_normals(make_blob(n, seed=args.seed), args.normal_radius * np.sqrt(10000 / n))
        features = compute_all_features(cloud, args.radius * np.sqrt(10000 / n), workers=args.threads)
        cs = match_features(features, features, cloud, cloud)
        res = estimate_resolution(cloud)
        delta = params.delta or 5.0 * res
        t_local, t_global = [], []
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            local = local_voting_stage(cs, params, workers=args.threads)
            t1 = time.perf_counter()
            global_voting_stage(cs, local, features.frames, features.frames, params, delta, workers=args.threads)
            t2 = time.perf_counter()
            t_local.append(t1 - t0)
            t_global.append(t2 - t1)
        total = float(np.median(np.add(t_local, t_global)))
        ratio = "" if prev is None else f"{total / prev:.3f}"
        rows.append([n, len(cs), f"{np.median(t_local) * 1000:.2f}", f"{np.median(t_global) * 1000:.2f}",
                     f"{total * 1000:.2f}", ratio])
        _emit(f"n={n}: local={np.median(t_local) * 1000:.1f} ms global={np.median(t_global) * 1000:.1f} ms "
              f"total={total * 1000:.1f} ms ratio={ratio or '-'}")
        prev = total
    with Path(args.output).open("w", newline="") as fh:
        fh.write(f"# {header}\n")
        w = csv.writer(fh)
        w.writerow(["n_points", "n_correspondences", "local_ms", "global_ms", "total_ms", "ratio"])
        w.writerows(rows)
    return EXIT_OK


def cmd_synth(args) -> int:
    header = _header("synth", args)
    model = make_blob(args.n_points, seed=args.shape_seed)
    write_ply(args.output, estimate_normals(model, args.normal_radius), comments=(header,))
    _emit(f"model: {len(model)} points -> {args.output}")
    if args.scene:
        scene, poses = make_scene(args.shape_seed, args.seed, n_points=args.n_points,
                                  clutter_ratio=args.clutter_ratio, include_object=not args.clutter_only,
                                  n_instances=args.instances, noise=args.noise)
        scene = estimate_normals(scene, args.normal_radius, viewpoint=VIEWPOINT)
        write_ply(args.scene, scene, comments=(header,) + tuple(
            "pose " + " ".join(repr(float(v)) for v in p.as_matrix()[:3].ravel()) for p in poses))
        _emit(f"scene: {len(scene)} points, {len(poses)} instance(s) -> {args.scene}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corrvote", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"corrvote {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", help="dense feature matching of two PLY clouds")
    p.add_argument("object")
    p.add_argument("scene")
    p.add_argument("-o", "--output", default="correspondences.csv")
    _add_features(p, DEFAULT_RADIUS)
    _add_common(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("vote", help="score correspondences and threshold them")
    p.add_argument("object")
    p.add_argument("scene")
    p.add_argument("correspondences", nargs="?", help="correspondence CSV (default: match the clouds)")
    p.add_argument("-o", "--output", default="tallies.csv")
    _add_features(p, DEFAULT_RADIUS)
    _add_voting(p)
    _add_common(p)
    p.set_defaults(func=cmd_vote)

    p = sub.add_parser("eval", help="synthetic noise / kappa / sigma-sim sweeps")
    p.add_argument("config", nargs="?", help="JSON sweep configuration")
    p.add_argument("--sweep", choices=("noise", "kappa", "sigma_sim"))
    p.add_argument("--values", type=float, nargs="+")
    p.add_argument("--noise-mm", dest="noise_mm", type=_positive_float, default=2.5,
                   help="noise level for kappa / sigma-sim sweeps (default 2.5)")
    p.add_argument("--n-points", dest="n_points", type=_positive_int, default=10000)
    p.add_argument("--shape-seed", dest="shape_seed", type=int, default=0)
    p.add_argument("--radius", type=_positive_float, default=DEFAULT_RADIUS)
    p.add_argument("--normal-radius", type=_positive_float, default=DEFAULT_NORMAL_RADIUS)
    p.add_argument("--estimate-normals", action="store_true",
                   help="re-estimate normals on noisy copies instead of keeping the noise-free ones")
    p.add_argument("-o", "--output", default="report.csv")
    p.add_argument("--curve", help="also write every precision/recall curve to this CSV")
    _add_voting(p)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("detect", help="detect an object model in a scene")
    p.add_argument("object")
    p.add_argument("scene")
    p.add_argument("-o", "--output", default="detections.csv")
    p.add_argument("--json", help="also write detections as JSON")
    p.add_argument("--export-ply", help="directory for transformed models of accepted detections")
    p.add_argument("--top-n", type=_positive_int, default=1, help="hypotheses to refine (default 1)")
    p.add_argument("--overlap-max", type=_unit_float, default=OVERLAP_MAX)
    p.add_argument("--coverage-min", type=_unit_float, default=COVERAGE_MIN)
    p.add_argument("--icp-iters", type=_nonneg_int, default=10)
    p.add_argument("--dist-tol", type=_positive_float, default=None,
                   help="coverage and overlap tolerance (default 2 x scene resolution)")
    p.add_argument("--max-corr-dist", type=_positive_float, default=None,
                   help="ICP pairing distance (default 5 x scene resolution)")
    _add_features(p, DETECTION_RADIUS)
    _add_voting(p)
    _add_common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("bench", help="voting wall time on synthetic clouds of increasing size")
    p.add_argument("--sizes", type=_positive_int, nargs="+", default=[10000, 20000, 40000])
    p.add_argument("--repeats", type=_positive_int, default=5)
    p.add_argument("--radius", type=_positive_float, default=DEFAULT_RADIUS,
                   help="descriptor radius at 10k points; scaled with point spacing")
    p.add_argument("--normal-radius", type=_positive_float, default=DEFAULT_NORMAL_RADIUS)
    p.add_argument("-o", "--output", default="timing.csv")
    _add_voting(p)
    _add_common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("synth", help="write a synthetic model (and optionally a scene) as PLY")
    p.add_argument("-o", "--output", default="model.ply")
    p.add_argument("--scene", help="also write a single-view scene to this path")
    p.add_argument("--n-points", dest="n_points", type=_positive_int, default=10000)
    p.add_argument("--shape-seed", dest="shape_seed", type=int, default=0)
    p.add_argument("--instances", type=_positive_int, default=1)
    p.add_argument("--clutter-ratio", type=float, default=2.0)
    p.add_argument("--clutter-only", action="store_true")
    p.add_argument("--noise", type=float, default=0.0, help="scene noise sigma in model units")
    p.add_argument("--normal-radius", type=_positive_float, default=DEFAULT_NORMAL_RADIUS)
    _add_common(p)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"corrvote {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MatchingError, DegenerateCloudError, DegenerateScoresError, ValueError, OSError) as exc:
        print(f"corrvote {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
