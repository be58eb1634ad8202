"""Command-line front end: segment scans, evaluate sequences, benchmark,
generate synthetic scenes, export visualizations.

Exit codes are a stable scripting contract: 0 success, 2 I/O or data error,
64 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from types import SimpleNamespace
from typing import Optional, Sequence

from . import evaluation, io_kitti, synth
from .freespace import RigidTransform, rotate_normals, segment
from .io_kitti import RunConfig
from .normals import GradientKernel, estimate_normals
from .projection import ProjectionModel, build_staggered_image

EXIT_OK = 0
EXIT_DATA = 2
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors mapped onto exit code 64."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(path: Optional[str]) -> RunConfig:
    return io_kitti.load_config(path) if path else RunConfig()


def _collect_scans(inputs: Sequence[str]) -> list[Path]:
    scans: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            scans.extend(sorted(p.glob("*.bin")))
        elif p.is_file():
            scans.append(p)
        else:
            raise FileNotFoundError(f"no such scan or directory: {p}")
    if not scans:
        raise FileNotFoundError(f"no .bin scans found under {list(inputs)}")
    return scans


def _atomic_write(path: Path, write_fn) -> None:
    """Write through a temp file so a crash never leaves a partial output."""
    tmp = path.with_name(path.name + ".tmp")
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _segment_one(scan: Path, cfg: RunConfig, out_dir: Optional[Path], want_ply: bool):
    cloud = io_kitti.read_point_cloud(scan)
    start = time.perf_counter()
    result = segment(cloud, cfg)
    ms = (time.perf_counter() - start) * 1e3

    target_dir = out_dir if out_dir is not None else scan.parent
    target_dir.mkdir(parents=True, exist_ok=True)
    pred_path = target_dir / (scan.stem + ".pred")
    _atomic_write(pred_path, lambda p: io_kitti.write_prediction(p, result))
    if want_ply:
        normals, _ = _vehicle_normals(cloud, cfg)
        ply_path = target_dir / (scan.stem + ".ply")
        _atomic_write(ply_path, lambda p: io_kitti.export_ply(p, cloud, result, normals))

    og = int(result.og_mask.sum())
    invalid = int((result.point_labels == io_kitti.PointClass.INVALID).sum())
    return f"{scan.name}: |G|={result.num_ground} |OG|={og} invalid_points={invalid} {ms:.1f} ms"


def _vehicle_normals(cloud, cfg: RunConfig):
    """Vehicle-frame normals plus the pixel-to-point map, for PLY export."""
    model = ProjectionModel.from_fov(cfg.height, cfg.width, cfg.fov_up_deg, cfg.fov_down_deg)
    img = build_staggered_image(cloud, model)
    normals = estimate_normals(img, GradientKernel.from_name(cfg.gradient_kernel))
    return rotate_normals(normals, RigidTransform.from_config(cfg)), img.source_index


def cmd_segment(args) -> int:
    cfg = _load_config(args.config)
    scans = _collect_scans(args.inputs)
    out_dir = Path(args.out_dir) if args.out_dir else None
    threads = args.threads or os.cpu_count() or 1
    if threads > 1 and len(scans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            lines = list(pool.map(lambda s: _segment_one(s, cfg, out_dir, args.ply), scans))
    else:
        lines = [_segment_one(s, cfg, out_dir, args.ply) for s in scans]
    for line in lines:
        print(line)
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    report = evaluation.evaluate_dataset(args.root, args.sequences, cfg, limit=args.limit)
    print(report.to_text())
    if args.json:
        Path(args.json).write_text(report.to_json(), encoding="utf-8")
        print(f"report written to {args.json}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_config(args.config)
    scans = _collect_scans(args.inputs)
    clouds = [io_kitti.read_point_cloud(s) for s in scans]
    stats = evaluation.benchmark(clouds, cfg, warmup=args.warmup, repeat=args.repeat)
    print(f"scans: {len(clouds)}  samples: {stats.num_samples}  warmup: {stats.warmup}")
    print(f"mean:   {stats.mean_hz:8.1f} Hz  ({1e3 / stats.mean_hz:.2f} ms/scan)")
    print(f"median: {stats.median_hz:8.1f} Hz")
    total = sum(stats.stage_seconds.values())
    if total > 0:
        print("stage breakdown:")
        for name, sec in stats.stage_seconds.items():
            per_scan_ms = 1e3 * sec / stats.num_samples
            print(f"  {name:<12} {per_scan_ms:7.2f} ms/scan  ({100 * sec / total:5.1f} %)")
    return EXIT_OK


def _parse_box(text: str) -> synth.Box:
    try:
        parts = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--box wants 6 numbers, got {text!r}") from None
    if len(parts) != 6:
        raise argparse.ArgumentTypeError(
            f"--box wants cx,cy,cz,ex,ey,ez (6 numbers), got {text!r}"
        )
    return synth.Box(center=tuple(parts[:3]), extents=tuple(parts[3:]))


def cmd_synth(args) -> int:
    if args.grade < 0 or args.noise < 0 or args.sensor_height <= 0:
        print("hfsd synth: error: grade/noise must be >= 0 and sensor height > 0",
              file=sys.stderr)
        return EXIT_USAGE
    model = ProjectionModel.from_fov(args.height, args.width, args.fov_up, args.fov_down)
    boxes: tuple[synth.Box, ...] = ()
    if args.scene == "plane_with_boxes":
        if args.box:
            boxes = tuple(args.box)
        else:
            z0 = -args.sensor_height
            boxes = (
                synth.Box(center=(3.0, 0.5, z0 + 0.6), extents=(1.2, 1.2, 1.2)),
                synth.Box(center=(-2.5, -2.0, z0 + 0.5), extents=(1.0, 1.0, 1.0)),
            )
    spec = synth.SceneSpec(
        kind=args.scene,
        model=model,
        sensor_height=args.sensor_height,
        grade=args.grade,
        boxes=boxes,
        wall_distance=args.wall_distance,
        noise_sigma=args.noise,
        rng_seed=args.seed,
    )
    cloud, gt = synth.generate(spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    bin_path, label_path = synth.write_scene(out_dir / f"{args.scene}.bin", cloud, gt)
    n_ground = int(gt.is_ground.sum())
    print(
        f"{args.scene}: {len(cloud)} points ({n_ground} ground, "
        f"{len(cloud) - n_ground} off-ground) -> {bin_path}, {label_path}"
    )
    return EXIT_OK


def cmd_export(args) -> int:
    cfg = _load_config(args.config)
    scan = Path(args.scan)
    cloud = io_kitti.read_point_cloud(scan)

    source_index = None
    if args.pred:
        point_labels = io_kitti.read_prediction(args.pred)
        if len(point_labels) != len(cloud):
            raise ValueError(
                f"{args.pred} has {len(point_labels)} labels but scan has {len(cloud)} points"
            )
    else:
        result = segment(cloud, cfg)
        point_labels = result.point_labels
        source_index = result.source_index

    normals = None
    if args.normals:
        normals, source_index = _vehicle_normals(cloud, cfg)

    payload = SimpleNamespace(point_labels=point_labels, source_index=source_index)
    out = Path(args.out) if args.out else scan.with_suffix(".ply")
    _atomic_write(out, lambda p: io_kitti.export_ply(p, cloud, payload, normals))
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="hfsd", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p_seg = sub.add_parser("segment", help="segment scans into free/off-ground/invalid")
    p_seg.add_argument("inputs", nargs="+", help=".bin scans or directories of scans")
    p_seg.add_argument("--config", help="JSON run configuration")
    p_seg.add_argument("-o", "--out-dir", help="output directory (default: next to each scan)")
    p_seg.add_argument("--ply", action="store_true", help="also export a colorized PLY per scan")
    p_seg.add_argument("--threads", type=int, default=0, help="scan-level parallelism (0 = auto)")
    p_seg.set_defaults(func=cmd_segment)

    p_eval = sub.add_parser("eval", help="evaluate against Semantic KITTI style labels")
    p_eval.add_argument("root", help="dataset root containing sequences/<NN>/")
    p_eval.add_argument("sequences", nargs="*", help="sequence names, e.g. 08")
    p_eval.add_argument("--config", help="JSON run configuration")
    p_eval.add_argument("--limit", type=int, help="evaluate at most N scans")
    p_eval.add_argument("--json", help="also write the report as JSON to this path")
    p_eval.set_defaults(func=cmd_eval)

    p_bench = sub.add_parser("bench", help="measure segmentation throughput (single thread)")
    p_bench.add_argument("inputs", nargs="+", help=".bin scans or directories of scans")
    p_bench.add_argument("--config", help="JSON run configuration")
    p_bench.add_argument("--repeat", type=int, default=1, help="timed passes over the scans")
    p_bench.add_argument("--warmup", type=int, default=3, help="unmeasured warm-up runs")
    p_bench.set_defaults(func=cmd_bench)

    p_synth = sub.add_parser("synth", help="generate a synthetic scene with ground truth")
    p_synth.add_argument("--scene", choices=synth.SCENE_KINDS, default="plane")
    p_synth.add_argument("--out-dir", default=".", help="directory for the .bin/.label pair")
    p_synth.add_argument("--sensor-height", type=float, default=1.8)
    p_synth.add_argument("--grade", type=float, default=0.12, help="ramp rise per unit run")
    p_synth.add_argument("--wall-distance", type=float, default=5.0)
    p_synth.add_argument(
        "--box", action="append", type=_parse_box, help="cx,cy,cz,ex,ey,ez (repeatable)"
    )
    p_synth.add_argument("--noise", type=float, default=0.0, help="range noise sigma, meters")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--height", type=int, default=64)
    p_synth.add_argument("--width", type=int, default=1024)
    p_synth.add_argument("--fov-up", type=float, default=2.0)
    p_synth.add_argument("--fov-down", type=float, default=-24.8)
    p_synth.set_defaults(func=cmd_synth)

    p_exp = sub.add_parser("export", help="export a colorized PLY for a scan")
    p_exp.add_argument("scan", help=".bin scan")
    p_exp.add_argument("--pred", help="existing .pred sidecar (default: segment now)")
    p_exp.add_argument("--config", help="JSON run configuration")
    p_exp.add_argument("--normals", action="store_true", help="include per-vertex normals")
    p_exp.add_argument("-o", "--out", help="output path (default: <scan>.ply)")
    p_exp.set_defaults(func=cmd_export)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "command", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.command == "eval" and not args.sequences:
        print("hfsd eval: error: at least one sequence is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"hfsd: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
