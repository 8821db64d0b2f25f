"""``gmmfield`` command line: build, query, eval, localize, simulate, bench.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _backend
from .config import Settings, load_settings
from .fitter import ConfigError
from .pointcloud import (
    DataFormatError,
    file_digest,
    load_cloud,
    load_imu,
    load_scan,
    load_trajectory,
    scan_files,
    write_imu,
    write_scan,
    write_trajectory,
)
from .registration import Pose6D, RegistrationError, Setup, run_localization, trajectory_rmse
from .serde import MapFormatError, load_map, save_map

log = logging.getLogger("gmmfield")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
BUILTIN_SCENES = ("sphere", "box-room")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers ------------------------------------------------------------------------


def _require(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"input not found: {p}")
    return p


def _load_scene_arg(arg: str):
    """Builtin scene name, scene spec file (``.scene``) or ``None`` for clouds."""
    from .scene import box_room_scene, load_scene, sphere_scene

    if arg in BUILTIN_SCENES:
        return sphere_scene() if arg == "sphere" else box_room_scene()
    p = _require(arg)
    return load_scene(p) if p.suffix == ".scene" else None


def _inputs(*paths) -> dict:
    return {str(p): file_digest(p) for p in paths if p is not None and Path(p).is_file()}


def _write_manifest(args, settings: Settings, inputs: dict, outputs: list, timing: dict, extra=None) -> Path | None:
    target = args.manifest or (f"{args.out}.manifest.json" if args.out else None)
    if target is None:
        return None
    doc = {
        "tool": "gmmfield",
        "version": __version__,
        "backend": _backend.BACKEND,
        "command": args.command,
        "argv": args.argv,
        "seed": settings.run.seed,
        "config": settings.snapshot(),
        "inputs": inputs,
        "outputs": {str(p): file_digest(p) for p in outputs if Path(p).is_file()},
        "timing": timing,
    }
    if extra:
        doc.update(extra)
    Path(target).write_text(json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n")
    return Path(target)


def _settings(args, overrides: dict) -> Settings:
    overrides = dict(overrides)
    overrides["run.seed"] = args.seed
    overrides["run.threads"] = args.threads
    return load_settings(args.config, overrides)


# -- verbs --------------------------------------------------------------------------


def cmd_build(args) -> int:
    from .sparse_map import build_map

    s = _settings(
        args,
        {
            "map.block_size": args.block_size,
            "map.overlap_margin": args.overlap_margin,
            "fit.mae_tolerance": args.tolerance,
        },
    )
    if not args.out:
        raise UsageError("build needs --out for the map file")
    scene = _load_scene_arg(args.input)
    points = scene.points() if scene is not None else load_cloud(args.input)
    t0 = time.perf_counter()
    gmap = build_map(points, s.map, workers=s.run.threads)
    secs = time.perf_counter() - t0
    size = save_map(gmap, args.out)
    print(f"blocks        {len(gmap)}")
    print(f"kernels       {gmap.total_kernels}")
    print(f"global_mae    {gmap.global_mae:.4f} m")
    print(f"flagged       {len(gmap.flagged_blocks)}")
    print(f"bytes         {size}")
    print(f"build_time    {secs:.2f} s")
    _write_manifest(
        args,
        s,
        _inputs(None if args.input in BUILTIN_SCENES else args.input, args.config),
        [args.out],
        {"build_s": secs},
        {"input": args.input, "blocks": len(gmap), "total_kernels": gmap.total_kernels, "global_mae": gmap.global_mae},
    )
    return EXIT_OK


def _emit_rows(fh, xs, batch) -> None:
    fh.write("x,y,z,d,gx,gy,gz,valid\n")
    for x, d, g, v in zip(xs.tolist(), batch.values.tolist(), batch.gradients.tolist(), batch.valid.tolist()):
        fh.write(f"{x[0]!r},{x[1]!r},{x[2]!r},{d!r},{g[0]!r},{g[1]!r},{g[2]!r},{int(v)}\n")


def cmd_query(args) -> int:
    s = _settings(args, {})
    gmap = load_map(_require(args.map))
    if args.xyz is not None:
        xs = np.array([args.xyz], dtype=float)
    elif args.points:
        xs = load_cloud(_require(args.points))
    else:
        raise UsageError("query needs --xyz or --points")
    t0 = time.perf_counter()
    batch = gmap.query_batch(xs)
    secs = time.perf_counter() - t0
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            _emit_rows(fh, xs, batch)
    else:
        _emit_rows(sys.stdout, xs, batch)
    _write_manifest(args, s, _inputs(args.map, args.points, args.config), [args.out] if args.out else [], {"query_s": secs})
    return EXIT_OK


def _slice_csv(path, gmap, z: float, step: float) -> None:
    from .sparse_map import probe_grid

    b = np.array(gmap.bounds, dtype=float).copy()
    b[:, 2] = [z - 0.5 * step, z + 0.5 * step]
    xs = probe_grid(b, step)
    xs[:, 2] = z
    res = gmap.query_batch(xs)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x,y,z,d,grad_norm,valid\n")
        for x, d, g, v in zip(xs, res.values, res.gradients, res.valid):
            fh.write(f"{x[0]:.6f},{x[1]:.6f},{x[2]:.6f},{d:.6f},{np.linalg.norm(g):.6f},{int(v)}\n")


def cmd_eval(args) -> int:
    from .sparse_map import eval_reconstruction

    s = _settings(args, {"eval.probe_step": args.probe_step, "eval.outlier_trim": args.trim})
    gmap = load_map(_require(args.map))
    scene = _load_scene_arg(args.truth)
    kw = {"truth_fn": scene.distance} if scene is not None else {"truth_points": load_cloud(args.truth)}
    t0 = time.perf_counter()
    m = eval_reconstruction(
        gmap, probe_step=s.eval.probe_step, outlier_trim=s.eval.outlier_trim, grad_min_distance=args.grad_min_distance, **kw
    )
    secs = time.perf_counter() - t0
    print("mae      median   std      grad_mean grad_std probes")
    print(f"{m.mae:<8.4f} {m.median:<8.4f} {m.std:<8.4f} {m.grad_mean:<9.4f} {m.grad_std:<8.4f} {m.probes}")
    outputs = []
    if args.out:
        Path(args.out).write_text(json.dumps(m.as_dict(), indent=2, sort_keys=True) + "\n")
        outputs.append(args.out)
    if args.slice_csv:
        _slice_csv(args.slice_csv, gmap, args.slice_z, args.slice_step)
        outputs.append(args.slice_csv)
    _write_manifest(
        args,
        s,
        _inputs(args.map, None if args.truth in BUILTIN_SCENES else args.truth, args.config),
        outputs,
        {"eval_s": secs},
        {"metrics": m.as_dict(), "outlier_trim": s.eval.outlier_trim, "probe_step": s.eval.probe_step},
    )
    return EXIT_OK


def cmd_localize(args) -> int:
    s = _settings(
        args,
        {
            "localize.setup": args.setup,
            "localize.sigma_t": args.sigma_t,
            "localize.sigma_yaw": args.sigma_yaw,
            "localize.scan_voxel": args.scan_voxel,
        },
    )
    lc = s.localize
    try:
        setup = Setup.parse(lc.setup, lc.sigma_t, lc.sigma_yaw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not args.out:
        raise UsageError("localize needs --out for the trajectory")
    gmap = load_map(_require(args.map))
    files = scan_files(_require(args.scans))
    if not files:
        raise DataFormatError(f"no .scan files in {args.scans}")
    scans = sorted((load_scan(f) for f in files), key=lambda sc: sc.stamp)
    imu = load_imu(_require(args.imu)) if args.imu else None
    truth = load_trajectory(_require(args.truth)) if args.truth else None
    init = None
    if args.initial:
        init = Pose6D(np.array(args.initial[:3]), np.array(args.initial[3:]))
    elif truth:
        first = min(truth, key=lambda t: abs(t.stamp - scans[0].stamp))
        init = Pose6D(first.position, first.orientation)
    v0 = None
    if truth and len(truth) > 1:
        a, b = truth[0], truth[1]
        v0 = (b.position - a.position) / (b.stamp - a.stamp)
    res = run_localization(
        gmap, scans, imu, setup, init, s.run.seed, cfg=s.registration, scan_voxel=lc.scan_voxel, initial_velocity=v0
    )
    write_trajectory(args.out, res.trajectory)
    timing_path = Path(args.out).with_suffix(".timing.csv")
    with open(timing_path, "w", encoding="utf-8") as fh:
        fh.write("scan,stamp,ms,cost,failed,iters_coarse,iters_fine\n")
        for n, (smp, ms, c, f, it) in enumerate(zip(res.trajectory, res.timings_ms, res.costs, res.failed, res.iterations)):
            fh.write(f"{n},{smp.stamp:.9f},{ms:.3f},{c:.9g},{int(f)},{it[0]},{it[1]}\n")
    mean_ms = float(np.mean(res.timings_ms))
    summary = {"mean_ms": mean_ms, "failed": int(res.failed.sum()), "scans": len(scans)}
    if truth:
        pos, rot = trajectory_rmse(res.trajectory, truth)
        summary.update(pos_rmse_m=pos, rot_rmse_deg=rot)
        print("setup     pos_rmse_m rot_rmse_deg mean_ms failed")
        print(f"{setup.kind:<9} {pos:<10.4f} {rot:<12.4f} {mean_ms:<7.2f} {summary['failed']}")
    else:
        print(f"mean_ms {mean_ms:.2f}  failed {summary['failed']}")
    _write_manifest(
        args,
        s,
        _inputs(args.map, args.imu, args.truth, args.config, *files),
        [args.out],  # timing CSV is wall-clock and deliberately not digested
        {"mean_ms": mean_ms, "total_s": float(np.sum(res.timings_ms)) / 1e3},
        {"setup": {"kind": setup.kind, "sigma_t": setup.sigma_t, "sigma_yaw": setup.sigma_yaw}, "summary": summary},
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .synthetic import make_sequence

    s = _settings(args, {})
    if not args.out:
        raise UsageError("simulate needs --out for the output directory")
    scene = _load_scene_arg(args.scene)
    if scene is None:
        raise UsageError("simulate needs a builtin scene name or a .scene file")
    seq = make_sequence(scene, args.scans, seed=s.run.seed, range_noise=args.range_noise)
    out = Path(args.out)
    (out / "scans").mkdir(parents=True, exist_ok=True)
    written = []
    for n, sc in enumerate(seq.scans):
        p = out / "scans" / f"{n:05d}.scan"
        write_scan(p, sc)
        written.append(p)
    write_imu(out / "imu.txt", seq.imu)
    write_trajectory(out / "truth.tum", seq.truth)
    written += [out / "imu.txt", out / "truth.tum"]
    print(f"wrote {len(seq.scans)} scans, {len(seq.imu)} IMU samples to {out}")
    args.manifest = args.manifest or str(out / "manifest.json")
    _write_manifest(args, s, _inputs(None if args.scene in BUILTIN_SCENES else args.scene), written, {})
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import format_rows, run_benchmark

    s = _settings(args, {})
    t0 = time.perf_counter()
    text = format_rows(run_benchmark(repeat=args.repeat, scale=args.scale, seed=s.run.seed))
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    _write_manifest(args, s, _inputs(args.config), [args.out] if args.out else [], {"bench_s": time.perf_counter() - t0})
    return EXIT_OK


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="layered INI config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None, help="worker processes for map building")
    common.add_argument("--out", help="primary output path")
    common.add_argument("--manifest", help="manifest path (default: <out>.manifest.json)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="gmmfield", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"gmmfield {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("build", parents=[common], help="fit a map from a cloud or scene spec")
    b.add_argument("input", help="point cloud (.ply/.xyz), scene spec (.scene) or builtin: sphere, box-room")
    b.add_argument("--block-size", type=float)
    b.add_argument("--overlap-margin", type=float)
    b.add_argument("--tolerance", type=float, help="per-block MAE tolerance (m)")
    b.set_defaults(func=cmd_build)

    q = sub.add_parser("query", parents=[common], help="evaluate distance and gradient")
    q.add_argument("map")
    q.add_argument("--points", help="cloud file of query points")
    q.add_argument("--xyz", type=float, nargs=3, metavar=("X", "Y", "Z"))
    q.set_defaults(func=cmd_query)

    e = sub.add_parser("eval", parents=[common], help="reconstruction metrics on a probe lattice")
    e.add_argument("map")
    e.add_argument("truth", help="truth cloud, scene spec (.scene) or builtin scene")
    e.add_argument("--probe-step", type=float)
    e.add_argument("--trim", type=float, help="fraction of largest errors dropped")
    e.add_argument("--grad-min-distance", type=float, default=0.3)
    e.add_argument("--slice-csv", help="write a z-plane cross-section CSV")
    e.add_argument("--slice-z", type=float, default=0.0)
    e.add_argument("--slice-step", type=float, default=0.05)
    e.set_defaults(func=cmd_eval)

    lo = sub.add_parser("localize", parents=[common], help="replay scans against a map")
    lo.add_argument("map")
    lo.add_argument("scans", help="directory of .scan files")
    lo.add_argument("--imu")
    lo.add_argument("--truth", help="TUM ground truth for RMSE")
    lo.add_argument("--setup", type=str.lower, choices=("inertial", "noimu", "low", "high", "noise"))
    lo.add_argument("--sigma-t", type=float)
    lo.add_argument("--sigma-yaw", type=float)
    lo.add_argument("--scan-voxel", type=float)
    lo.add_argument("--initial", type=float, nargs=7, metavar="V", help="x y z qw qx qy qz")
    lo.set_defaults(func=cmd_localize)

    sm = sub.add_parser("simulate", parents=[common], help="write a synthetic scan/IMU/truth sequence")
    sm.add_argument("scene", help="builtin scene or .scene file")
    sm.add_argument("--scans", type=int, default=200)
    sm.add_argument("--range-noise", type=float, default=0.0)
    sm.set_defaults(func=cmd_simulate)

    be = sub.add_parser("bench", parents=[common], help="compiled vs fallback kernel timings")
    be.add_argument("--repeat", type=int, default=3)
    be.add_argument("--scale", type=int, default=1)
    be.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"gmmfield {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, DataFormatError, MapFormatError, ValueError, OSError) as exc:
        print(f"gmmfield {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (RegistrationError, np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"gmmfield {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
