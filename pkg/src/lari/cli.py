"""Command-line front end: ``lari render | views | filter | eval | mask-eval``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import curation
from ._parallel import default_workers
from .errors import EmptyCorpus, LariError, ParseError, ShapeMismatch, UnsupportedFormat
from .fileio import (PoseConvention, _atomic_write, convert_pose, load_mesh, load_point_cloud,
                     read_lari, write_lari)
from .geometry import build_bvh
from .metrics import (DEFAULT_THRESHOLDS, REGIONS, evaluate_view_aligned, mask_metrics,
                      normalization_scale, sample_indices, default_samples)
from .registration import canonical_register
from .render import DEFAULT_LAYERS, DEFAULT_SIZE, PinholeCamera, look_at, mask_from_index, render_lari

log = logging.getLogger("lari")


class UsageError(LariError):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _regions(text: str) -> list[str]:
    out = [r.strip() for r in text.split(",") if r.strip()]
    bad = [r for r in out if r not in REGIONS]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"regions must be drawn from {','.join(REGIONS)}")
    return out


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _dump(rec) -> str:
    return json.dumps(rec, sort_keys=False, separators=(", ", ": "))


# ------------------------------------------------------------- cameras


def camera_to_record(cam_id: str, cam: PinholeCamera) -> dict:
    return {"id": cam_id, "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "width": cam.width, "height": cam.height, "pose": cam.pose.tolist()}


def load_camera_manifest(path) -> list[tuple[str, PinholeCamera]]:
    """Cameras from a JSON manifest (a list, or ``{"cameras": [...]}``).

    Each entry holds intrinsics, image size and a 4x4 ``pose``; an optional
    ``convention`` object (axes / side / direction) describes the pose,
    which defaults to camera-to-world, x-right/y-down/z-forward.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError("no such file", path) from None
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path, exc.lineno) from None
    entries = doc["cameras"] if isinstance(doc, dict) else doc
    cams = []
    for k, e in enumerate(entries):
        try:
            pose = np.asarray(e.get("pose", np.eye(4)), dtype=np.float64)
            if "convention" in e:
                pose = convert_pose(pose, PoseConvention(**e["convention"]), PoseConvention())
            cam = PinholeCamera(float(e["fx"]), float(e["fy"]), float(e["cx"]), float(e["cy"]),
                                int(e["width"]), int(e["height"]), pose)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"camera {k}: {exc}", path) from None
        cams.append((str(e.get("id", f"{k:04d}")), cam))
    return cams


def _cameras_from_args(args, mesh) -> list[tuple[str, PinholeCamera]]:
    if args.manifest:
        return load_camera_manifest(args.manifest)
    size = args.size
    if args.views:
        center, radius = _frame(args, mesh)
        views = curation.sample_views(args.elevations, args.n_azimuth, args.radius)
        return [(f"el{v.elevation:03.0f}_az{v.azimuth:05.1f}",
                 curation.view_camera(v, center, radius, size, args.fov)) for v in views]
    if args.pose is not None:
        pose = np.asarray(args.pose, dtype=np.float64).reshape(4, 4)
    elif args.eye is not None:
        pose = look_at(args.eye, args.look_at, args.up)
    else:
        pose = np.eye(4)
    base = PinholeCamera.from_fov(size, size, args.fov, pose)
    cam = PinholeCamera(args.fx or base.fx, args.fy or args.fx or base.fy,
                        args.cx if args.cx is not None else base.cx,
                        args.cy if args.cy is not None else base.cy, size, size, pose)
    return [("view", cam)]


def _frame(args, mesh):
    if getattr(args, "frame", "object") == "fixed":
        return np.zeros(3), args.frame_radius
    return mesh.bounding_sphere()


# ------------------------------------------------------------- commands


def cmd_render(args) -> int:
    mesh = load_mesh(args.mesh)
    cams = _cameras_from_args(args, mesh)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    bvh = build_bvh(mesh)
    overflow = total = 0
    stem = Path(args.mesh).stem
    for cam_id, cam in cams:
        lari, index = render_lari(mesh, bvh, cam, args.layers, workers=args.workers)
        write_lari(lari, index, out / f"{stem}_{cam_id}.lari")
        log.info("%s: %d pixels hit, %d overflow", cam_id, int((index > 0).sum()), lari.overflow_pixels)
        overflow += lari.overflow_pixels
        total += cam.width * cam.height
    _atomic_write(out / f"{stem}_cameras.json",
                  (json.dumps({"cameras": [camera_to_record(i, c) for i, c in cams]}, indent=1) + "\n")
                  .encode("utf-8"))
    print(f"rendered {len(cams)} view(s) of {stem} ({mesh.n_triangles} triangles, "
          f"{mesh.n_degenerate} degenerate dropped); overflow pixel fraction {overflow / max(total, 1):.6f}")
    return 0


def cmd_views(args) -> int:
    mesh = load_mesh(args.mesh)
    args.views, args.manifest = True, None
    cams = _cameras_from_args(args, mesh)
    _atomic_write(Path(args.out), (json.dumps({"cameras": [camera_to_record(i, c) for i, c in cams]},
                                              indent=1) + "\n").encode("utf-8"))
    print(f"wrote {len(cams)} cameras to {args.out}")
    return 0


def _corpus(src: Path) -> list[tuple[str, Path]]:
    if src.is_dir():
        items = [(p.stem, p) for p in sorted(src.iterdir()) if p.suffix.lower() in (".obj", ".ply")]
    elif src.is_file():
        items = []
        for lineno, line in enumerate(src.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                p = Path(rec["path"])
                items.append((str(rec.get("id", p.stem)), p if p.is_absolute() else src.parent / p))
            except (json.JSONDecodeError, KeyError, TypeError):
                raise ParseError("bad manifest record", src, lineno) from None
    else:
        raise ParseError("no such file or directory", src)
    if not items:
        raise EmptyCorpus(f"no meshes found in {src}")
    return sorted(items)


def _filter_one(item, args, views):
    obj_id, path = item
    rec = {"id": obj_id, "path": str(path)}
    try:
        mesh = load_mesh(path)
        frame = ((np.zeros(3), args.frame_radius) if args.frame == "fixed" else None)
        stats = curation.layer_occupancy(mesh, views, args.layers, args.size, frame=frame,
                                         workers=args.workers)
        verdict = curation.filter_object(stats, args.max_deep_fraction, args.min_coverage, args.aggregate)
        rec["stats"] = stats.to_record()
        rec.update(verdict.to_record())
    except LariError as exc:
        rec["error"] = {"code": exc.code, "message": str(exc)}
    return rec


def _read_records(path: Path) -> list[dict]:
    if not path.is_file():
        return []
    return [json.loads(x) for x in path.read_text(encoding="utf-8").splitlines() if x.strip()]


def cmd_filter(args) -> int:
    items = _corpus(Path(args.input))
    out = Path(args.out)
    done = {r["id"]: r for r in _read_records(out) if "error" not in r}
    views = curation.sample_views(args.elevations, args.n_azimuth, args.radius)
    todo = [it for it in items if it[0] not in done]
    for it in todo:
        done[it[0]] = _filter_one(it, args, views)
        log.info("%s: %s", it[0], "error" if "error" in done[it[0]] else done[it[0]]["accepted"])
    records = [done[k] for k in sorted(done)]
    _atomic_write(out, "".join(_dump(r) + "\n" for r in records).encode("utf-8"))
    acc = sum(1 for r in records if r.get("accepted"))
    err = sum(1 for r in records if "error" in r)
    print(f"{acc} accepted, {len(records) - acc - err} rejected, {err} failed "
          f"({len(todo)} processed, {len(items) - len(todo)} reused)")
    return 0


def _eval_inputs(pred: Path, gt: Path) -> list[tuple[str, Path, Path]]:
    if pred.is_dir() != gt.is_dir():
        raise UsageError("--pred and --gt must both be files or both be directories")
    if not pred.is_dir():
        for p in (pred, gt):
            if not p.is_file():
                raise ParseError("no such file", p)
        return [(gt.stem, pred, gt)]
    gts = {p.stem: p for p in gt.iterdir() if p.suffix.lower() in (".lari", ".ply")}
    pairs = [(p.stem, p, gts[p.stem]) for p in sorted(pred.iterdir())
             if p.suffix.lower() in (".lari", ".ply") and p.stem in gts]
    if not pairs:
        raise EmptyCorpus("no prediction / ground-truth pairs with matching names")
    return pairs


def _load_gt_cloud(path: Path):
    if path.suffix.lower() == ".lari":
        lari, index = read_lari(path)
        return lari.points[mask_from_index(index, lari.layers)].astype(np.float64)
    pts, _ = load_point_cloud(path)
    return pts


def _eval_pair(pair, args) -> list[dict]:
    image_id, pred_path, gt_path = pair
    suffix = pred_path.suffix.lower()
    if suffix not in (".lari", ".ply"):
        raise UnsupportedFormat(f"prediction {pred_path.name!r} is neither .lari nor .ply")
    if args.mode == "canonical":
        gt = _load_gt_cloud(gt_path)
        pred = _load_gt_cloud(pred_path)
        n = args.samples or default_samples(len(pred), len(gt))
        scale = normalization_scale(gt)
        gt_s = gt[sample_indices(len(gt), n, args.seed)] * scale
        pred_s = pred[sample_indices(len(pred), n, args.seed)] * scale
        tf, rep = canonical_register(pred_s, gt_s, seed=args.seed, thresholds=args.thresholds)
        rep.image_id = image_id
        rec = rep.to_record()
        rec["alignment"] = {"s": tf.scale, "t": None}
        return [rec]
    if gt_path.suffix.lower() != ".lari":
        raise UnsupportedFormat("view-aligned evaluation needs a .lari ground truth")
    gt, gt_index = read_lari(gt_path)
    gt = type(gt)(gt.points.astype(np.float64))
    if suffix == ".lari":
        pred, pred_index = read_lari(pred_path)
        pred = type(pred)(pred.points.astype(np.float64))
        kw = {"pred_index": pred_index}
    else:
        pred, layers = load_point_cloud(pred_path)
        kw = {"pred_layers": layers}
    out = []
    for region in args.region:
        rep = evaluate_view_aligned(pred, gt, gt_index, region, n_samples=args.samples,
                                    thresholds=args.thresholds, seed=args.seed,
                                    fixed_samples=args.fixed_samples, **kw)
        rep.image_id = image_id
        out.append(rep.to_record())
    return out


def _safe_eval(pair, args):
    try:
        return pair, _eval_pair(pair, args), None
    except LariError as exc:
        return pair, None, exc


def cmd_eval(args) -> int:
    pairs = _eval_inputs(Path(args.pred), Path(args.gt))
    out = Path(args.out) if args.out else None
    done = set()
    if out is not None:
        done = {r["image_id"] for r in _read_records(out) if "error" not in r}
    todo = [p for p in pairs if p[0] not in done]
    failures = 0
    records = []
    with ThreadPoolExecutor(max_workers=max(1, args.workers or 1)) as pool:
        for pair, recs, exc in pool.map(lambda p: _safe_eval(p, args), todo):
            if exc is not None:
                failures += 1
                recs = [{"image_id": pair[0], "error": {"code": exc.code, "message": str(exc)}}]
            records.extend(recs)
            if out is not None:
                with open(out, "a", encoding="utf-8") as fh:
                    fh.write("".join(_dump(r) + "\n" for r in recs))
    if out is None:
        for r in records:
            print(_dump(r))
    ok = [r for r in records if "error" not in r]
    regions = sorted({r["region"] for r in ok}, key=REGIONS.index)
    for region in regions:
        rows = [r for r in ok if r["region"] == region]
        cds = [r["cd"] for r in rows if r["cd"] is not None]
        parts = [f"region={region}", f"n={len(rows)}",
                 f"cd={np.mean(cds):.6g}" if cds else "cd=nan"]
        for t in args.thresholds:
            parts.append(f"fs@{t:g}={np.mean([r[f'fs@{t:g}'] for r in rows]):.4f}")
        print("mean " + " ".join(parts))
    if failures:
        print(f"{failures} of {len(todo)} pair(s) failed", file=sys.stderr)
    return 1 if todo and failures == len(todo) else 0


def cmd_mask_eval(args) -> int:
    pred, pred_index = read_lari(args.pred)
    gt, gt_index = read_lari(args.gt)
    if pred.shape != gt.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs ground truth {gt.shape}")
    miou, dice = mask_metrics(mask_from_index(pred_index, pred.layers),
                              mask_from_index(gt_index, gt.layers))
    rec = {"pred": str(args.pred), "gt": str(args.gt), "miou": miou, "dice": dice}
    if args.out:
        with open(args.out, "a", encoding="utf-8") as fh:
            fh.write(_dump(rec) + "\n")
    print(_dump(rec))
    return 0


# -------------------------------------------------------------- parser


def _add_views(p, elevations=curation.DEFAULT_ELEVATIONS):
    p.add_argument("--elevations", type=_floats, default=list(elevations), help="degrees, comma separated")
    p.add_argument("--n-azimuth", type=_positive_int, default=curation.DEFAULT_AZIMUTHS)
    p.add_argument("--radius", type=float, default=curation.DEFAULT_RADIUS,
                   help="camera distance in framing-sphere radii")
    p.add_argument("--fov", type=float, default=curation.DEFAULT_FOV, help="vertical field of view, degrees")
    p.add_argument("--frame", choices=("object", "fixed"), default="object",
                   help="orbit the mesh's bounding sphere or a fixed sphere at the origin")
    p.add_argument("--frame-radius", type=float, default=1.0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lari", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--workers", type=_positive_int, default=None,
                        help="worker threads (default: $LARI_WORKERS or all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render LaRI ground truth for one mesh")
    p.add_argument("mesh")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--layers", type=_positive_int, default=DEFAULT_LAYERS)
    p.add_argument("--size", type=_positive_int, default=DEFAULT_SIZE)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--manifest", help="camera manifest (JSON)")
    src.add_argument("--views", action="store_true", help="orbit views (see --elevations, --n-azimuth)")
    src.add_argument("--pose", type=float, nargs=16, help="4x4 camera-to-world matrix, row major")
    src.add_argument("--eye", type=float, nargs=3)
    p.add_argument("--look-at", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    p.add_argument("--up", type=float, nargs=3, default=[0.0, 1.0, 0.0])
    for k in ("fx", "fy", "cx", "cy"):
        p.add_argument(f"--{k}", type=float)
    _add_views(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("views", help="write an orbit camera manifest for a mesh")
    p.add_argument("mesh")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=_positive_int, default=DEFAULT_SIZE)
    _add_views(p)
    p.set_defaults(func=cmd_views)

    p = sub.add_parser("filter", help="layer statistics and accept/reject verdicts")
    p.add_argument("input", help="directory of .obj/.ply meshes or a JSON-lines manifest")
    p.add_argument("--out", required=True, help="verdict manifest (JSON lines)")
    p.add_argument("--max-deep-fraction", type=float, default=curation.MAX_DEEP_FRACTION)
    p.add_argument("--min-coverage", type=float, default=curation.MIN_COVERAGE)
    p.add_argument("--aggregate", choices=("mean", "max"), default="mean")
    p.add_argument("--layers", type=_positive_int, default=curation.STATS_LAYERS)
    p.add_argument("--size", type=_positive_int, default=curation.STATS_RESOLUTION)
    _add_views(p)
    p.set_defaults(func=cmd_filter, frame="fixed")

    p = sub.add_parser("eval", help="Chamfer / F-score evaluation")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mode", choices=("view-aligned", "canonical"), default="view-aligned")
    p.add_argument("--region", type=_regions, default=["overall"], help="comma list of visible,unseen,overall")
    p.add_argument("--samples", type=_positive_int, default=None)
    p.add_argument("--thresholds", type=_floats, default=list(DEFAULT_THRESHOLDS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fixed-samples", action="store_true",
                   help="draw one sample set over all layers and split it by region")
    p.add_argument("--out", help="append records to this JSON-lines report")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("mask-eval", help="mIoU / DICE of two stopping-index maps")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mask_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers is None:
        args.workers = default_workers()
    if getattr(args, "thresholds", None) is not None and any(t <= 0 for t in args.thresholds):
        parser.error("thresholds must be positive")
    try:
        return args.func(args)
    except LariError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": "IoError", "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
