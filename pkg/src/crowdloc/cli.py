"""Command-line front end.

Machine-readable results go to stdout as one JSON object per line; a failure
prints a single ``{"error": ..., "message": ...}`` line and exits 1.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import augment, evaluate, groundtruth, grid, localize, losses
from .errors import CrowdlocError, ValidationError


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _emit(obj, out=None):
    (out or sys.stdout).write(json.dumps(obj, sort_keys=True) + "\n")


def _deltas(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise CliError(f"bad delta list {text!r}")
    return tuple(int(v) if v.is_integer() else v for v in vals)


def _sigma_policy(args) -> groundtruth.SigmaPolicy:
    spec = args.sigma
    if spec.startswith("fixed"):
        _, _, val = spec.partition(":")
        try:
            return groundtruth.SigmaPolicy.fixed(float(val) if val else 15.0)
        except ValueError:
            raise CliError(f"bad sigma spec {spec!r}")
    if spec != "adaptive":
        raise CliError(f"sigma must be 'adaptive' or 'fixed[:value]', got {spec!r}")
    return groundtruth.SigmaPolicy(
        beta=args.beta, k_neighbors=args.k_neighbors, fallback_sigma=args.fallback_sigma
    )


def _add_sigma_flags(p):
    p.add_argument("--sigma", default="adaptive", help="'adaptive' or 'fixed:<pixels>'")
    p.add_argument("--beta", type=float, default=0.3)
    p.add_argument("--k-neighbors", type=int, default=3)
    p.add_argument("--fallback-sigma", type=float, default=15.0)


def _add_localize_flags(p):
    p.add_argument("--expansion", type=float, default=localize.DEFAULT_EXPANSION)
    p.add_argument("--epsilon", type=float, default=5.0)
    p.add_argument("--min-weight", type=int, default=5)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--n-init", type=int, default=8, help="seeded k-means++ starts per fit")
    p.add_argument("--seed", type=int, default=0)


def _run_localizer(method, dmap, args):
    kp = localize.KMeansParams(max_iters=args.max_iters, tol=args.tol, seed=args.seed, n_init=args.n_init)
    if method == "kmeans":
        return localize.localize_kmeans(dmap, args.expansion, kp)
    dp = localize.DbscanParams(epsilon=args.epsilon, min_weight=args.min_weight)
    return localize.isolated_kmeans(dmap, args.expansion, dp, kp)


def cmd_gen(args):
    ann = grid.load_annotations(args.annotations)
    dmap = groundtruth.generate_density_map(ann, _sigma_policy(args))
    grid.write_density_map(dmap, args.out)
    _emit({"integral": grid.integral_count(dmap), "n": ann.n})


def cmd_attention(args):
    if (args.annotations is None) == (args.density is None):
        raise CliError("give exactly one of --annotations (window mode) or --density (threshold mode)")
    if args.annotations is not None:
        att = groundtruth.generate_attention_window(grid.load_annotations(args.annotations), args.window)
        mode = "window"
    else:
        att = groundtruth.generate_attention_threshold(grid.read_density_map(args.density), args.quantile)
        mode = "threshold"
    grid.write_density_map(grid.DensityMap(att.values), args.out)
    _emit({"mode": mode, "foreground": int(att.values.sum()), "pixels": int(att.values.size)})


def cmd_localize(args):
    dmap = grid.read_density_map(args.density)
    res = _run_localizer(args.method, dmap, args)
    doc = {
        "K": res.K,
        "method": args.method,
        "width": dmap.width,
        "height": dmap.height,
        "integral": grid.integral_count(dmap),
        "centers": [[float(x), float(y), float(m)] for x, y, m in res.centers],
    }
    Path(args.out).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
    _emit({"K": res.K, "integral": doc["integral"], "method": args.method})


def _load_centers(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed centers JSON: {exc}") from exc
    if not isinstance(doc, dict) or "centers" not in doc:
        raise ValidationError("centers document must be an object with a 'centers' list")
    rows = doc["centers"]
    if not isinstance(rows, list) or any(not isinstance(r, list) or len(r) != 3 for r in rows):
        raise ValidationError("each center must be [x, y, mass]")
    return doc, np.array(rows, dtype=np.float64).reshape(-1, 3)


def cmd_eval(args):
    doc, centers = _load_centers(args.centers)
    ann = grid.load_annotations(args.annotations)
    if "width" in doc and "height" in doc and (doc["width"], doc["height"]) != (ann.width, ann.height):
        raise ValidationError(
            f"frame mismatch: centers {doc['width']}x{doc['height']}, annotations {ann.width}x{ann.height}"
        )
    cfg = evaluate.EvalConfig(deltas=_deltas(args.deltas), iou_threshold=args.iou_threshold)
    reports = evaluate.match_and_ap(centers, ann, cfg)
    _emit({
        "ap": {str(d): r.ap for d, r in reports.items()},
        "count_est": float(doc.get("integral", len(centers))),
        "count_gt": ann.n,
    })


def _scene_config(args, seed):
    return groundtruth.SceneConfig(
        width=args.width,
        height=args.height,
        head_count_range=(args.min_heads, args.max_heads),
        placement=args.placement,
        components=args.components,
        noise_sigma=args.noise,
        noise_relative=args.noise_relative,
        seed=seed,
        sigma=_sigma_policy(args),
    )


def run_bench(args):
    """Returns ``(summary, csv_text)`` for ``args.trials`` seeded scenes."""
    if args.trials < 1:
        raise CliError("trials must be >= 1")
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in ("kmeans", "isolated"):
            raise CliError(f"unknown method {m!r}")
    cfg = evaluate.EvalConfig(deltas=_deltas(args.deltas), iou_threshold=args.iou_threshold)
    # build every config up front so a bad flag fails before any work
    scenes = [_scene_config(args, args.seed + t) for t in range(args.trials)]

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["trial", "seed", "method", "n_gt", "K"] + [f"ap_{d}" for d in cfg.deltas])
    aps = {m: {d: [] for d in cfg.deltas} for m in methods}
    counts = {m: [] for m in methods}
    for t, scene in enumerate(scenes):
        ann, _, noisy = groundtruth.synth_scene(scene)
        for m in methods:
            res = _run_localizer(m, noisy, args)
            reports = evaluate.match_and_ap(res, ann, cfg)
            writer.writerow([t, scene.seed, m, ann.n, res.K] + [repr(reports[d].ap) for d in cfg.deltas])
            for d in cfg.deltas:
                aps[m][d].append(reports[d].ap)
            counts[m].append((res.K, ann.n))
    summary = {"trials": args.trials, "methods": {}}
    for m in methods:
        mae, rmse = evaluate.counting_metrics(counts[m])
        summary["methods"][m] = {
            "ap": {str(d): float(np.mean(aps[m][d])) for d in cfg.deltas},
            "mae": mae,
            "rmse": rmse,
        }
    return summary, buf.getvalue()


def cmd_bench(args):
    summary, text = run_bench(args)
    if args.csv:
        Path(args.csv).write_text(text, encoding="utf-8")
    _emit(summary)


def render_pgm(dmap: grid.DensityMap, centers=None) -> bytes:
    v = dmap.values
    peak = v.max()
    img = np.zeros(v.shape, dtype=np.uint8) if peak == 0 else np.floor(v / peak * 255 + 0.5).astype(np.uint8)
    if centers is not None:
        h, w = img.shape
        for x, y in np.asarray(centers, dtype=np.float64).reshape(-1, 3)[:, :2]:
            cx, cy = int(np.floor(x + 0.5)), int(np.floor(y + 0.5))
            for dx, dy in ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)):
                if 0 <= cx + dx < w and 0 <= cy + dy < h:
                    img[cy + dy, cx + dx] = 255
    return f"P5\n{v.shape[1]} {v.shape[0]}\n255\n".encode("ascii") + img.tobytes()


def cmd_viz(args):
    dmap = grid.read_density_map(args.density)
    centers = _load_centers(args.centers)[1] if args.centers else None
    Path(args.out).write_bytes(render_pgm(dmap, centers))
    _emit({"width": dmap.width, "height": dmap.height, "out": str(args.out)})


def cmd_losses(args):
    pred = grid.read_density_map(args.pred)
    gt = grid.read_density_map(args.gt)
    names = ("mse", "sal", "msdlc", "ssim", "patch") if args.loss == "all" else (args.loss,)
    out = {}
    for name in names:
        if name == "mse":
            out["mse"] = losses.mse_loss([pred], [gt])
        elif name == "sal":
            out["sal"] = losses.sal_loss(pred, gt, args.sal_levels, args.sal_pooling)
        elif name == "msdlc":
            out["msdlc"] = losses.msdlc_loss(pred, gt)
        elif name == "ssim":
            out["ssim"] = losses.ssim_loss(pred, gt)
        elif name == "patch":
            out["patch_count_pred"] = augment.patch_count(pred)
            out["patch_count_gt"] = augment.patch_count(gt)
    if args.curriculum_epoch is not None:
        w = losses.curriculum_weights(gt, args.curriculum_epoch)
        out["curriculum_mse"] = losses.weighted_mse_loss([pred], [gt], [w])
    if args.pred_att or args.gt_att:
        if not (args.pred_att and args.gt_att):
            raise CliError("--pred-att and --gt-att go together")
        patt = grid.read_density_map(args.pred_att).values
        gatt = grid.read_density_map(args.gt_att).values
        out["attention"] = losses.attention_loss(patt, gatt)
        out["total"] = losses.total_loss(pred, gt, patt, gatt, losses.LossWeights(args.lambda_att))
    _emit(out)


def build_parser():
    p = _Parser(prog="crowdloc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="density map from head annotations")
    g.add_argument("--annotations", required=True)
    g.add_argument("--out", required=True)
    _add_sigma_flags(g)
    g.set_defaults(func=cmd_gen)

    a = sub.add_parser("attention", help="ground-truth attention mask")
    a.add_argument("--annotations")
    a.add_argument("--density")
    a.add_argument("--window", type=int, default=25)
    a.add_argument("--quantile", type=float, default=0.40)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_attention)

    lo = sub.add_parser("localize", help="head centers from a density map")
    lo.add_argument("--density", required=True)
    lo.add_argument("--method", choices=("kmeans", "isolated"), default="isolated")
    lo.add_argument("--out", required=True)
    _add_localize_flags(lo)
    lo.set_defaults(func=cmd_localize)

    e = sub.add_parser("eval", help="AP of centers against annotations")
    e.add_argument("--centers", required=True)
    e.add_argument("--annotations", required=True)
    e.add_argument("--deltas", default="10,20,40")
    e.add_argument("--iou-threshold", type=float, default=0.5)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="both localizers on seeded synthetic scenes")
    b.add_argument("--width", type=int, default=256)
    b.add_argument("--height", type=int, default=256)
    b.add_argument("--min-heads", type=int, default=50)
    b.add_argument("--max-heads", type=int, default=300)
    b.add_argument("--placement", choices=("uniform", "mixture"), default="uniform")
    b.add_argument("--components", type=int, default=4)
    b.add_argument("--noise", type=float, default=0.0)
    b.add_argument("--noise-relative", action="store_true", help="--noise is a fraction of each map's peak")
    b.add_argument("--trials", type=int, default=10)
    b.add_argument("--methods", default="kmeans,isolated")
    b.add_argument("--deltas", default="10,20,40")
    b.add_argument("--iou-threshold", type=float, default=0.5)
    b.add_argument("--csv")
    _add_sigma_flags(b)
    _add_localize_flags(b)
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("viz", help="render a density map (and centers) as PGM")
    v.add_argument("--density", required=True)
    v.add_argument("--centers")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_viz)

    ls = sub.add_parser("losses", help="losses between two density maps")
    ls.add_argument("--pred", required=True)
    ls.add_argument("--gt", required=True)
    ls.add_argument("--loss", choices=("all", "mse", "sal", "msdlc", "ssim", "patch"), default="all")
    ls.add_argument("--sal-levels", type=int, default=3)
    ls.add_argument("--sal-pooling", choices=("avg", "max"), default="avg")
    ls.add_argument("--curriculum-epoch", type=float)
    ls.add_argument("--pred-att")
    ls.add_argument("--gt-att")
    ls.add_argument("--lambda-att", type=float, default=0.5)
    ls.set_defaults(func=cmd_losses)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except (CliError, CrowdlocError, OSError, ValueError) as exc:
        _emit({"error": type(exc).__name__, "message": str(exc)})
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
