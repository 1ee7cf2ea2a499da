"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data/parse error, 3 numerical
failure (degenerate geometry, or no convergence under ``--strict``).
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from . import io
from .calibration import (
    CalibrationParams,
    CalibrationProblem,
    OptimizerConfig,
    calibration_matrix,
    landmark_rmse,
    solve,
)
from .errors import DegenerateGeometry, IoError, IvusCalError
from .phantom import DEFAULT_SPEC, PhantomSpec, build_phantom
from .recon import COMPOUNDING_MODES, FrameImage, paste_frames, plan_volume
from .sim import DEFAULT_BOUNDS, AcquisitionSpec, random_calibration, render_frame, simulate_acquisition

log = logging.getLogger("ivuscal")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive(name, value):
    if not value > 0:
        raise UsageError(f"{name} must be positive, got {value}")


def _non_negative(name, value):
    if not value >= 0:
        raise UsageError(f"{name} must be non-negative, got {value}")


# -- subcommands -------------------------------------------------------------


def cmd_phantom_gen(args):
    _positive("--radius-mm", args.radius_mm)
    spec = PhantomSpec(
        cluster_angles=args.angles,
        needles_per_cluster=len(args.lengths_mm),
        needle_lengths=args.lengths_mm,
        cavity_radius=args.radius_mm,
        axial_offsets=args.offsets_mm,
    )
    try:
        phantom = build_phantom(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.out:
        io.save_phantom(phantom, args.out)
        print(f"wrote {len(phantom)} landmarks to {args.out}")
    else:
        sys.stdout.write(io.phantom_csv(phantom))
    return EXIT_OK


def cmd_simulate(args):
    if args.poses < 1:
        raise UsageError(f"--poses must be at least 1, got {args.poses}")
    for name in ("noise_px", "noise_pose_mm", "noise_pose_deg"):
        _non_negative("--" + name.replace("_", "-"), getattr(args, name))
    _positive("--depth-mm", args.depth_mm)
    _positive("--slab-mm", args.slab_mm)
    lo, hi = args.gt_scale
    if not 0 < lo <= hi:
        raise UsageError("--gt-scale needs 0 < low <= high")

    phantom = io.load_phantom(args.phantom)
    ang = math.radians(args.gt_angle_deg)
    bounds = {n: (-ang, ang) for n in ("roll", "pitch", "yaw")}
    bounds.update({n: (-args.gt_trans_mm, args.gt_trans_mm) for n in ("tx", "ty", "tz")})
    bounds["scale"] = (lo, hi)
    gt = random_calibration(bounds, seed=args.seed)
    spec = AcquisitionSpec(
        pose_count=args.poses,
        sweep=args.sweep_deg,
        depth_mm=args.depth_mm,
        pixel_noise_sigma=args.noise_px,
        pose_translation_noise_sigma=args.noise_pose_mm,
        pose_rotation_noise_sigma=args.noise_pose_deg,
        slab_half_thickness=args.slab_mm,
        seed=args.seed,
        image_size=tuple(args.frame_size),
        annotate_sweep=args.annotate_sweep,
    )
    seq = simulate_acquisition(phantom, gt, spec)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.save_poses(seq.poses, out / "poses.csv")
    io.save_observations(seq.observations, out / "observations.csv")
    frames_dir = None
    if args.frames:
        frames_dir = out / "frames"
        frames_dir.mkdir(exist_ok=True)
        for frame, pose in seq.true_poses.items():
            img = render_frame(
                phantom,
                gt,
                pose,
                image_size=spec.image_size,
                depth_mm=spec.depth_mm,
                slab_half_thickness=spec.slab_half_thickness,
                world_offset=seq.world_offset,
            )
            io.write_pgm(frames_dir / io.frame_filename(frame), img)
    gt_out = Path(args.gt_out) if args.gt_out else out / "ground_truth.cal"
    io.save_calibration(
        io.StoredCalibration(gt, calibration_matrix(gt), 0.0, 0, True, args.depth_mm), gt_out, depth_mm=args.depth_mm
    )
    io.save_manifest(
        io.Manifest(
            poses="poses.csv",
            observations="observations.csv",
            frames="frames" if frames_dir else None,
            depth_mm=args.depth_mm,
            notes=f"simulated, seed {args.seed}",
        ),
        out / "manifest.json",
    )
    print(f"poses: {len(seq.poses)}")
    print(f"observations: {len(seq.observations)}")
    print(f"ground truth: {gt_out}")
    return EXIT_OK


def _load_problem(args):
    phantom = io.load_phantom(args.phantom)
    observations = io.load_observations(args.observations)
    poses = io.load_poses(args.poses)
    return CalibrationProblem(phantom, observations, poses)


def cmd_calibrate(args):
    _positive("--lr", args.lr)
    _non_negative("--epsilon", args.epsilon)
    if args.max_iters < 1:
        raise UsageError("--max-iters must be at least 1")
    if args.restarts < 0:
        raise UsageError("--restarts must be non-negative")

    problem = _load_problem(args)
    config = OptimizerConfig(
        learning_rate=args.lr,
        epsilon=args.epsilon,
        max_iters=args.max_iters,
        registration=args.registration,
        restarts=args.restarts,
        restart_seed=args.seed,
    )
    result = solve(problem, config, CalibrationParams())
    io.save_calibration(result, args.out, depth_mm=args.depth_mm)
    print(f"iterations: {result.iterations}")
    print(f"final_error_mm2: {result.final_error:.6g}")
    print(f"rmse_mm: {result.rmse:.6g}")
    print(f"converged: {'yes' if result.converged else 'no'}")
    if args.strict and not result.converged:
        print("error: calibration did not reach --epsilon", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_evaluate(args):
    calib = io.load_calibration(args.calib)
    problem = _load_problem(args)
    rmse = landmark_rmse(problem, calib.params)
    depth = args.depth_mm if args.depth_mm is not None else calib.depth_mm
    depth_text = "" if depth is None else format(depth, "g")
    print(f"{depth_text},{rmse:.9g},{len(problem)}")
    return EXIT_OK


def cmd_reconstruct(args):
    _positive("--spacing-mm", args.spacing_mm)
    _non_negative("--padding-mm", args.padding_mm)
    calib = io.load_calibration(args.calib)
    poses = io.load_poses(args.poses)
    frames_dir = Path(args.frames)
    if not frames_dir.is_dir():
        raise IoError(f"frames directory {frames_dir} does not exist")
    frames = []
    for frame in sorted(poses):
        path = frames_dir / io.frame_filename(frame)
        frames.append(FrameImage(io.read_pgm(path), poses[frame]))
    matrix = calib.matrix
    plan = plan_volume(frames, matrix, args.spacing_mm, args.padding_mm)
    volume, dropped = paste_frames(frames, matrix, plan, args.compound)
    io.save_volume(volume, args.out)
    nx, ny, nz = volume.dims
    print(f"dims: {nx} {ny} {nz}")
    print(f"spacing_mm: {volume.spacing:g}")
    print(f"dropped_pixels: {dropped}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser():
    parser = _Parser(prog="ivuscal", description="IVUS probe calibration toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom-gen", help="write a phantom landmark CSV")
    p.add_argument("--out", help="output CSV (default: standard output)")
    p.add_argument("--angles", type=float, nargs="+", default=list(DEFAULT_SPEC.cluster_angles),
                   help="cluster angles in degrees (default: 60 90 120)")
    p.add_argument("--radius-mm", type=float, default=DEFAULT_SPEC.cavity_radius,
                   help="cavity radius in mm (default: 65)")
    p.add_argument("--lengths-mm", type=float, nargs="+", default=list(DEFAULT_SPEC.needle_lengths),
                   help="needle lengths within a cluster, mm (default: 10 30 50 20 40)")
    p.add_argument("--offsets-mm", type=float, nargs="+", default=list(DEFAULT_SPEC.axial_offsets),
                   help="axial offsets within a cluster, mm (default: -10 -5 0 5 10)")
    p.set_defaults(func=cmd_phantom_gen)

    p = sub.add_parser("simulate", help="simulate a tracked acquisition with known calibration")
    p.add_argument("--phantom", required=True, help="phantom CSV")
    p.add_argument("--seed", type=int, required=True, help="random seed for calibration, offset and noise")
    p.add_argument("--poses", type=int, default=150, help="number of poses (default: 150)")
    p.add_argument("--sweep-deg", type=float, default=360.0, help="clockwise sweep in degrees (default: 360)")
    p.add_argument("--depth-mm", type=float, default=90.0, help="ultrasound depth in mm (default: 90)")
    p.add_argument("--noise-px", type=float, default=0.0, help="annotation noise sigma in px")
    p.add_argument("--noise-pose-mm", type=float, default=0.0, help="pose translation noise sigma in mm")
    p.add_argument("--noise-pose-deg", type=float, default=0.0, help="pose rotation noise sigma in degrees")
    p.add_argument("--slab-mm", type=float, default=1.0, help="visibility slab half-thickness in mm (default: 1)")
    p.add_argument("--annotate-sweep", action="store_true",
                   help="also annotate tips seen by sweep poses (off-plane by up to the slab)")
    p.add_argument("--gt-angle-deg", type=float, default=20.0, help="ground-truth angle bound (default: 20)")
    p.add_argument("--gt-trans-mm", type=float, default=10.0, help="ground-truth translation bound (default: 10)")
    p.add_argument("--gt-scale", type=float, nargs=2, default=list(DEFAULT_BOUNDS["scale"]),
                   metavar=("LOW", "HIGH"), help="ground-truth scale range in mm/px (default: 0.5 1.5)")
    p.add_argument("--frames", action="store_true", help="render PGM frames for every pose")
    p.add_argument("--frame-size", type=int, nargs=2, default=[680, 480], metavar=("W", "H"),
                   help="frame size in px (default: 680 480)")
    p.add_argument("--out-dir", default=".", help="output directory (default: current)")
    p.add_argument("--gt-out", help="ground-truth calibration file (default: OUT_DIR/ground_truth.cal)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="estimate the calibration matrix")
    p.add_argument("--phantom", required=True, help="phantom CSV")
    p.add_argument("--observations", required=True, help="observation CSV")
    p.add_argument("--poses", required=True, help="pose CSV")
    p.add_argument("--lr", type=float, default=0.05, help="Adam learning rate (default: 0.05)")
    p.add_argument("--epsilon", type=float, default=1e-4, help="stop when E_MSE <= this, mm^2 (default: 1e-4)")
    p.add_argument("--max-iters", type=int, default=10000, help="iteration cap (default: 10000)")
    p.add_argument("--restarts", type=int, default=0, help="jittered restarts if not converged (default: 0)")
    p.add_argument("--seed", type=int, default=0, help="seed for restart jitter (default: 0)")
    p.add_argument("--registration", choices=("kabsch", "icp"), default="kabsch",
                   help="labelled (kabsch) or nearest-neighbour (icp) registration")
    p.add_argument("--depth-mm", type=float, help="depth recorded in the calibration file")
    p.add_argument("--strict", action="store_true", help="exit 3 if epsilon is not reached")
    p.add_argument("--out", required=True, help="output calibration file")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="landmark RMSE of a stored calibration")
    p.add_argument("--calib", required=True, help="calibration file")
    p.add_argument("--phantom", required=True, help="phantom CSV")
    p.add_argument("--observations", required=True, help="observation CSV")
    p.add_argument("--poses", required=True, help="pose CSV")
    p.add_argument("--depth-mm", type=float, help="depth to report (default: from the calibration file)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reconstruct", help="paste tracked frames into a voxel volume")
    p.add_argument("--calib", required=True, help="calibration file")
    p.add_argument("--poses", required=True, help="pose CSV")
    p.add_argument("--frames", required=True, help="directory of frame_NNNNN.pgm files")
    p.add_argument("--spacing-mm", type=float, default=0.25, help="voxel spacing in mm (default: 0.25)")
    p.add_argument("--compound", choices=COMPOUNDING_MODES, default="mean", help="compounding mode (default: mean)")
    p.add_argument("--padding-mm", type=float, default=5.0, help="bounding-box padding in mm (default: 5)")
    p.add_argument("--out", required=True, help="output prefix for .json/.raw")
    p.set_defaults(func=cmd_reconstruct)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ivuscal {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DegenerateGeometry as exc:
        print(f"ivuscal {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except IvusCalError as exc:
        print(f"ivuscal {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
