"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
failure. Logs go to standard error; data goes to files or standard output.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .. import gait as gait_mod
from ..camera import CameraModel, calibration_to_dict, load_calibration
from ..errors import DataError, FormatError, MouseLiftError, NumericFailure, StageMissingError
from ..keypoints import KeypointFrame
from ..metrics import oks_accuracy_table, registered_3d_error
from ..optimizer import FitConfig, fit_pose
from ..prior import fit_gmm, load_prior
from ..skeleton import CHAIN_JOINTS, Skeleton, default_skeleton, forward_kinematics, load_skeleton, normalize_pose
from ..triangulation import triangulate_pose
from .features import REPRESENTATIONS, export_features
from .io import FrameRecord, MultiviewLabels, TrackFile, read_json, read_track, write_json, write_track
from .synth import LAYOUTS, SynthSpec, synth_generate

log = logging.getLogger("mouselift")

CONFIG_ENV = "MOUSELIFT_CONFIG"
EXIT_USAGE = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _emit(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _fmt(v: float) -> str:
    return "" if v is None or not np.isfinite(v) else repr(float(v))


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _skeleton(args) -> Skeleton:
    return load_skeleton(args.skeleton) if getattr(args, "skeleton", None) else default_skeleton()


def _frame_seed(seed: int, frame: int) -> int:
    return int(np.random.SeedSequence([seed, frame]).generate_state(1)[0])


def _ordered_map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---- subcommands ----------------------------------------------------------

def cmd_synth(args) -> None:
    occlusion: float | dict = args.occlusion
    if args.occlusion_table:
        occlusion = json.loads(Path(args.occlusion_table).read_text())
    spec = SynthSpec(seed=args.seed, frames=args.frames, fps=args.fps, gait_frequency=args.gait_frequency,
                     belt_speed=args.belt_speed, noise_px=args.noise, occlusion=occlusion, layout=args.layout,
                     camera_distance=args.distance, pose_jitter_deg=args.jitter)
    result = synth_generate(spec, _skeleton(args))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_track(out / "truth.json", result.truth)
    write_track(out / "observed.json", result.observed)
    write_json(out / "calibration.json", calibration_to_dict(result.cameras))
    if len(result.cameras) > 1:
        ids = tuple(c.camera_id for c in result.cameras)
        frames = {
            i: {cid: result.views[cid].frames[i].keypoints for cid in ids}
            for i in range(spec.frames)
        }
        write_json(out / "labels.json", MultiviewLabels(frames, ids).to_dict())
    log.info("wrote %d frames to %s", spec.frames, out)


def _pose_samples(paths: Sequence[str]) -> np.ndarray:
    rows = []
    for p in paths:
        track = read_track(p)
        for rec in track.frames:
            if rec.pose is not None and rec.pose.valid.all():
                rows.append(normalize_pose(rec.pose))
    if not rows:
        raise StageMissingError("no complete 3D poses found in the given files")
    return np.array(rows)


def cmd_fit_prior(args) -> None:
    X = _pose_samples(args.poses)
    gmm = fit_gmm(X, args.components, seed=args.seed, covariance_type=args.covariance,
                  tol=args.tol, max_iter=args.max_iter)
    log.info("fitted %d components on %d poses; EM converged=%s", args.components, len(X), gmm.converged)
    write_json(args.out, gmm.to_dict())


def _camera(args, track: TrackFile) -> CameraModel:
    if args.calibration:
        cams = load_calibration(args.calibration)
        want = args.camera or track.camera_id
        for c in cams:
            if c.camera_id == want:
                return c
        if args.camera:
            raise DataError(f"camera {args.camera!r} not in calibration")
        return cams[0]
    if not args.image_size:
        raise DataError("give --calibration or --image-size for the field-of-view default")
    w, h = args.image_size
    log.warning("no calibration: assuming a pinhole camera with %g degree horizontal field of view", args.fov)
    return CameraModel.from_fov(w, h, args.fov, camera_id=track.camera_id)


def cmd_fit_pose(args) -> None:
    skeleton = _skeleton(args)
    track = read_track(args.keypoints)
    camera = _camera(args, track)
    gmm = load_prior(args.prior) if args.prior else None
    if gmm is None and args.prior_weight > 0:
        raise DataError("a prior file is required unless --prior-weight is 0")
    base = dict(prior_weight=args.prior_weight, camera_distance=args.distance, max_iterations=args.max_iter,
                restarts=args.restarts, visibility_threshold=args.visibility)
    frames = [r for r in track.frames if r.keypoints is not None]
    if not frames:
        raise StageMissingError("keypoint track has no 2D keypoints")

    def work(rec: FrameRecord) -> FrameRecord:
        cfg = FitConfig(seed=_frame_seed(args.seed, rec.index), **base)
        try:
            res = fit_pose(skeleton, camera, rec.keypoints, gmm, cfg)
        except MouseLiftError as exc:
            return FrameRecord(rec.index, rec.keypoints, diagnostics={"error": f"{type(exc).__name__}: {exc}"})
        diag = {"objective": res.objective, "reprojection_rms": res.reprojection_rms,
                "iterations": res.iterations, "converged": res.converged}
        if res.prior_log_likelihood is not None:
            diag["prior_log_likelihood"] = res.prior_log_likelihood
        return FrameRecord(rec.index, rec.keypoints, res.params, forward_kinematics(skeleton, res.params), diag)

    records = _ordered_map(work, frames, args.threads)
    failed = [r for r in records if r.params is None]
    for r in failed:
        log.warning("frame %d not fitted (%s)", r.index, r.diagnostics["error"])
    if len(failed) == len(records):
        raise NumericFailure("no frame could be fitted")
    write_track(args.out, TrackFile(records, track.fps, camera.camera_id, skeleton.digest()))


def cmd_triangulate(args) -> None:
    cams = load_calibration(args.calibration)
    labels = MultiviewLabels.from_dict(read_json(args.labels))
    items = sorted(labels.frames.items())

    def work(item) -> FrameRecord:
        idx, views = item
        try:
            tp = triangulate_pose(cams, views)
        except MouseLiftError as exc:
            return FrameRecord(idx, diagnostics={"error": f"{type(exc).__name__}: {exc}"})
        diag = {"rms": {n: (float(r) if np.isfinite(r) else None) for n, r in zip(CHAIN_JOINTS, tp.rms)}}
        if tp.failures:
            diag["failures"] = dict(sorted(tp.failures.items()))
        return FrameRecord(idx, pose=tp.pose, diagnostics=diag)

    records = _ordered_map(work, items, args.threads)
    if all(r.pose is None for r in records):
        raise NumericFailure("no frame could be triangulated")
    write_track(args.out, TrackFile(records, args.fps, "world", default_skeleton().digest()))
    if args.rms_csv:
        rows = []
        for r in records:
            rms = r.diagnostics.get("rms", {})
            rows.append([r.index] + [_fmt(rms.get(n)) for n in CHAIN_JOINTS])
        _emit(_csv(["frame", *CHAIN_JOINTS], rows), args.rms_csv)


def _pairs(pred: TrackFile, truth: TrackFile, attr: str) -> list:
    p = {r.index: getattr(r, attr) for r in pred.frames if getattr(r, attr) is not None}
    t = {r.index: getattr(r, attr) for r in truth.frames if getattr(r, attr) is not None}
    common = sorted(set(p) & set(t))
    if not common:
        raise StageMissingError(f"prediction and truth share no frames with {attr}")
    return [(p[i], t[i]) for i in common]


def cmd_eval_oks(args) -> None:
    pairs = _pairs(read_track(args.pred), read_track(args.truth), "keypoints")
    table = oks_accuracy_table(pairs)
    _emit(table.to_csv(), args.out)


def cmd_eval_3d(args) -> None:
    pairs = _pairs(read_track(args.pred), read_track(args.truth), "pose")
    errs = np.array([registered_3d_error(p, t)[0] for p, t in pairs])
    rows = []
    for j, name in enumerate(CHAIN_JOINTS):
        col = errs[:, j][np.isfinite(errs[:, j])]
        rows.append([name, _fmt(col.mean()) if len(col) else "", len(col)])
    finite = errs[np.isfinite(errs)]
    rows.append(["all", _fmt(finite.mean()), len(finite)])
    _emit(_csv(["joint", "mean_error_mm", "count"], rows), args.out)


def _trace_from_track(args) -> gait_mod.FootTrace:
    track = read_track(args.track)
    if args.joint not in CHAIN_JOINTS:
        raise DataError(f"unknown joint {args.joint!r}")
    j = CHAIN_JOINTS.index(args.joint)
    root, neck = CHAIN_JOINTS.index("tail_base"), CHAIN_JOINTS.index("neck_base")
    poses = [r.pose for r in track.frames if r.pose is not None]
    if not poses:
        raise StageMissingError("track has no 3D poses")
    idx = [r.index for r in track.frames if r.pose is not None]
    if np.any(np.diff(idx) != 1):
        raise DataError("gait analysis needs consecutive frames")
    P = np.array([p.positions for p in poses])
    if args.axis == "body":
        heading = P[:, neck] - P[:, root]
        heading /= np.linalg.norm(heading, axis=1, keepdims=True)
        values = np.einsum("tc,tc->t", P[:, j] - P[:, root], heading)
    else:
        values = P[:, j, "xyz".index(args.axis)]
    return gait_mod.FootTrace(values, track.fps, args.joint, args.belt_speed)


def _trace_from_csv(args) -> gait_mod.FootTrace:
    if not args.fps:
        raise DataError("--fps is required for a delimited trace")
    with open(args.trace, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError("trace file is empty")
    header, body = rows[0], rows[1:]
    try:
        float(header[-1])
        header, body = None, rows
    except ValueError:
        pass
    col = header.index(args.column) if header and args.column in header else -1
    try:
        values = [float(r[col]) for r in body if r]
    except (ValueError, IndexError) as exc:
        raise FormatError(f"trace is not numeric: {exc}") from exc
    return gait_mod.FootTrace(values, args.fps, args.joint, args.belt_speed)


def cmd_gait(args) -> None:
    if bool(args.track) == bool(args.trace):
        raise UsageError("give exactly one of --track or --trace")
    trace = _trace_from_track(args) if args.track else _trace_from_csv(args)
    rep = gait_mod.stride_report(trace, args.sigma)
    rows = []
    for k, (d, l, o) in enumerate(zip(rep.durations, rep.lengths, rep.outliers)):
        rows.append([k, int(rep.peaks[k]), int(rep.peaks[k + 1]), _fmt(d), _fmt(l), int(o)])
    belt = rep.belt_speed
    rows.append(["dominant", "", "", _fmt(rep.dominant_duration), _fmt(rep.aggregate_length), ""])
    rows.append(["inlier_mean", "", "", _fmt(rep.inlier_mean / belt if belt else float("nan")),
                 _fmt(rep.inlier_mean), ""])
    rows.append(["inlier_std", "", "", _fmt(rep.inlier_std / belt if belt else float("nan")),
                 _fmt(rep.inlier_std), ""])
    _emit(_csv(["stride", "start_frame", "end_frame", "duration_s", "length_cm", "outlier"], rows), args.out)
    if args.series:
        peaks = set(rep.peaks.tolist())
        series = [[i, _fmt(i / trace.sample_rate), _fmt(v), int(i in peaks)] for i, v in enumerate(trace.values)]
        _emit(_csv(["sample", "time_s", "value", "peak"], series), args.series)
    if args.spectrum:
        f, m = gait_mod.spectrum(trace)
        _emit(_csv(["frequency_hz", "magnitude"], [[_fmt(a), _fmt(b)] for a, b in zip(f, m)]), args.spectrum)


def cmd_export_features(args) -> None:
    windows = export_features(read_track(args.track), args.representation, args.window)
    log.info("exported %d windows", len(windows.data))
    _emit(windows.to_csv(), args.out)


# ---- parser ---------------------------------------------------------------

GLOBAL_OPTIONS = ("config", "seed", "threads", "verbose")


def _global_options(suppress: bool) -> argparse.ArgumentParser:
    # subcommands suppress their defaults so a flag given before the subcommand survives
    def d(value):
        return argparse.SUPPRESS if suppress else value

    common = _Parser(add_help=False)
    common.add_argument("--config", default=d(None), help=f"JSON file of option defaults (else ${CONFIG_ENV})")
    common.add_argument("--seed", type=int, default=d(0))
    common.add_argument("--threads", type=int, default=d(1))
    common.add_argument("-v", "--verbose", action="store_true", default=d(False))
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _global_options(suppress=True)
    parser = _Parser(prog="mouselift", description="Lift 2D mouse keypoints to 3D poses.",
                     parents=[_global_options(suppress=False)])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name: str, fn: Callable, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_, parents=[common])
        p.set_defaults(func=fn)
        return p

    p = add("synth", cmd_synth, "generate a synthetic dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--frames", type=int, default=240)
    p.add_argument("--fps", type=float, default=24.0)
    p.add_argument("--gait-frequency", type=float, default=3.0)
    p.add_argument("--belt-speed", type=float, default=20.0)
    p.add_argument("--noise", type=float, default=0.0, help="pixel noise sigma")
    p.add_argument("--occlusion", type=float, default=0.0)
    p.add_argument("--occlusion-table", help="JSON mapping keypoint name to occlusion probability")
    p.add_argument("--layout", choices=LAYOUTS, default="top-down")
    p.add_argument("--distance", type=float, default=400.0)
    p.add_argument("--jitter", type=float, default=8.0, help="pose variation in degrees")
    p.add_argument("--skeleton")

    p = add("fit-prior", cmd_fit_prior, "fit the Gaussian-mixture pose prior")
    p.add_argument("poses", nargs="+", help="track files with 3D poses")
    p.add_argument("--out", required=True)
    p.add_argument("--components", type=int, default=5)
    p.add_argument("--covariance", choices=("diag", "full"), default="diag")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=500)

    p = add("fit-pose", cmd_fit_pose, "lift a 2D keypoint track to 3D")
    p.add_argument("--keypoints", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--calibration")
    p.add_argument("--camera")
    p.add_argument("--image-size", type=int, nargs=2, metavar=("W", "H"))
    p.add_argument("--fov", type=float, default=60.0)
    p.add_argument("--prior")
    p.add_argument("--prior-weight", type=float, default=1.0)
    p.add_argument("--distance", type=float, default=400.0)
    p.add_argument("--max-iter", type=int, default=300)
    p.add_argument("--restarts", type=int, default=4)
    p.add_argument("--visibility", type=float, default=0.2)
    p.add_argument("--skeleton")

    p = add("triangulate", cmd_triangulate, "triangulate multiview labels")
    p.add_argument("--labels", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fps", type=float, default=24.0)
    p.add_argument("--rms-csv")

    p = add("eval-oks", cmd_eval_oks, "OKS accuracy table")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")

    p = add("eval-3d", cmd_eval_3d, "registered per-joint 3D error")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")

    p = add("gait", cmd_gait, "stride analysis")
    p.add_argument("--track")
    p.add_argument("--trace", help="delimited file with one numeric column")
    p.add_argument("--column", default="value")
    p.add_argument("--fps", type=float)
    p.add_argument("--joint", default="left_ankle")
    p.add_argument("--axis", choices=("body", "x", "y", "z"), default="body")
    p.add_argument("--belt-speed", type=float, default=20.0, help="cm/s")
    p.add_argument("--sigma", type=float, default=2.3)
    p.add_argument("--out")
    p.add_argument("--series")
    p.add_argument("--spectrum")

    p = add("export-features", cmd_export_features, "windowed feature matrices")
    p.add_argument("--track", required=True)
    p.add_argument("--representation", choices=REPRESENTATIONS, required=True)
    p.add_argument("--window", type=float, default=10.0, help="seconds")
    p.add_argument("--out")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    """Config values become parser defaults; explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    path = known.config or os.environ.get(CONFIG_ENV)
    if not path:
        return
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise FormatError("config must be a JSON object")
    flat = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    parser.set_defaults(**{k: v for k, v in flat.items() if k in GLOBAL_OPTIONS})
    for name, sp in subs.choices.items():
        section = doc.get(name, {})
        merged = {k.replace("-", "_"): v for k, v in {**flat, **section}.items()}
        sp.set_defaults(**{k: v for k, v in merged.items() if k not in GLOBAL_OPTIONS})
        if name in argv:
            parser.set_defaults(**{k: v for k, v in section.items() if k in GLOBAL_OPTIONS})


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
    except UsageError as exc:
        print(f"mouselift: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MouseLiftError as exc:
        print(f"mouselift: error: {exc}", file=sys.stderr)
        return exc.exit_code
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"mouselift: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MouseLiftError as exc:
        print(f"mouselift: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"mouselift: error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
