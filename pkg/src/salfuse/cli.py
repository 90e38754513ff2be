"""Command line entry point: ``salfuse slic|rbd|fuse-train|fuse-infer|mssf|eval|run|plot``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 quality gate failed
(more than 10% of manifest entries skipped).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import __version__
from .bench import (
    DatasetManifest,
    EvalReport,
    PipelineConfig,
    evaluate_dataset,
    pr_curve_svg,
    run_pipeline,
)
from .errors import DataError, SalfuseError
from .fusion import FusionParams, TrainConfig, fuse_forward, train
from .image_core import Provenance, ensure_lab, load_image, load_map, resize_bilinear, save_gray
from .mssf import ScaleSet, mssf_refine
from .rbd import RBDParams, rbd_map
from .superpixel import slic

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_GATE = 0, 1, 2, 3

log = logging.getLogger("salfuse")

_RBD_KEYS = {f.name for f in fields(RBDParams)}
_TRAIN_KEYS = {"base_lr", "momentum", "power", "max_iter", "batch"}
_OTHER_KEYS = {"scales", "weights", "work_size", "model", "seed", "jobs"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_value(text: str):
    text = text.strip()
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    if text.startswith("[") and text.endswith("]"):
        text = text[1:-1]
        return [_parse_value(p) for p in text.split(",") if p.strip()]
    if "," in text:
        return [_parse_value(p) for p in text.split(",") if p.strip()]
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    return text


def load_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment, [section] lines are ignored."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]") and "=" not in line):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in _RBD_KEYS | _TRAIN_KEYS | _OTHER_KEYS:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _parse_value(value)
    return out


def _as_list(v):
    return v if isinstance(v, list) else [v]


def _settings(args) -> dict:
    """Config file values overlaid with explicitly given command-line flags."""
    cfg = load_config(args.config) if getattr(args, "config", None) else {}
    for key in _RBD_KEYS | _TRAIN_KEYS | _OTHER_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _rbd_params(cfg: dict) -> RBDParams:
    return RBDParams(**{k: cfg[k] for k in _RBD_KEYS if k in cfg})


def _scale_set(cfg: dict) -> ScaleSet:
    scales = _as_list(cfg["scales"]) if "scales" in cfg else None
    weights = _as_list(cfg["weights"]) if "weights" in cfg else None
    if scales is None:
        return ScaleSet(weights=weights)
    return ScaleSet(scales, weights)


def _csv_numbers(cast):
    def parse(text):
        try:
            return [cast(p) for p in text.split(",") if p.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")

    return parse


# -- subcommands -------------------------------------------------------------


def cmd_slic(args) -> int:
    cfg = _settings(args)
    img = load_image(args.image)
    seg = slic(ensure_lab(img), args.n, cfg.get("compactness", 10.0), cfg.get("iters", 10))
    if seg.num_superpixels > 65535:
        raise DataError("too many superpixels for a 16-bit label map")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(seg.labels.astype(np.uint16)).save(out, format="PNG")
    sidecar = {
        "image": str(args.image),
        "height": seg.shape[0],
        "width": seg.shape[1],
        "n_target": args.n,
        "grid_interval": seg.grid_interval,
        "num_superpixels": seg.num_superpixels,
        "superpixels": [
            {
                "id": k,
                "area_px": int(seg.area_px[k]),
                "centroid": seg.centroid[k].tolist(),
                "mean_lab": seg.mean_lab[k].tolist(),
                "touches_boundary": bool(seg.touches_boundary[k]),
            }
            for k in range(seg.num_superpixels)
        ],
    }
    out.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")
    print(f"{seg.num_superpixels} superpixels -> {out}")
    return EXIT_OK


def cmd_rbd(args) -> int:
    cfg = _settings(args)
    sal = rbd_map(load_image(args.image), params=_rbd_params(cfg))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_gray(sal, args.out)
    return EXIT_OK


def cmd_fuse_train(args) -> int:
    cfg = _settings(args)
    manifest = DatasetManifest.load(args.manifest)
    n = int(cfg.get("work_size", 224))
    rbd_params = _rbd_params(cfg)
    dataset = []
    for e in manifest.entries:
        if e.deep is None:
            raise DataError(f"training entry {e.id!r} has no deep map")
        deep = resize_bilinear(load_map(e.deep, Provenance.DEEP), n, n)
        if e.rbd is not None:
            rbd = load_map(e.rbd, Provenance.RBD)
        else:
            rbd = rbd_map(load_image(e.image), params=rbd_params)
        gt = resize_bilinear(load_map(e.gt), n, n)
        dataset.append((deep, resize_bilinear(rbd, n, n), gt))
    tc = TrainConfig(**{k: cfg[k] for k in _TRAIN_KEYS | {"seed"} if k in cfg})
    params, losses = train(dataset, tc)
    Path(args.model_out).parent.mkdir(parents=True, exist_ok=True)
    params.save(args.model_out)
    if args.loss_csv:
        lines = ["iter,loss"] + [f"{i},{loss!r}" for i, loss in enumerate(losses)]
        Path(args.loss_csv).write_text("\n".join(lines) + "\n")
    print(f"trained {tc.max_iter} iterations, final loss {losses[-1]:.6f} -> {args.model_out}")
    return EXIT_OK


def cmd_fuse_infer(args) -> int:
    cfg = _settings(args)
    params = FusionParams.load(args.model)
    deep = load_map(args.deep, Provenance.DEEP)
    rbd = load_map(args.rbd, Provenance.RBD)
    n = int(cfg.get("work_size", 224))
    fused = fuse_forward(params, resize_bilinear(deep, n, n), resize_bilinear(rbd, n, n))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_gray(resize_bilinear(fused, *rbd.shape), args.out)
    return EXIT_OK


def cmd_mssf(args) -> int:
    cfg = _settings(args)
    img = load_image(args.image)
    sal = resize_bilinear(load_map(args.map, Provenance.FUSED), *img.shape)
    rp = _rbd_params(cfg)
    out = mssf_refine(sal, img, _scale_set(cfg), rp.compactness, rp.iters)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_gray(out, args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    report = evaluate_dataset(manifest, args.pred_dir, method=args.method or "")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report.write_json(out / f"{report.method}.json")
    report.write_csv(out / f"{report.method}_pr.csv")
    print(f"{report.name} {report.method}: MAE {report.mean_mae:.4f} over {report.counts['evaluated']} images")
    total = report.counts["evaluated"] + report.counts["skipped"]
    return EXIT_GATE if report.counts["skipped"] > 0.10 * total else EXIT_OK


def cmd_run(args) -> int:
    cfg = _settings(args)
    manifest = DatasetManifest.load(args.manifest)
    model = cfg.get("model")
    pc = PipelineConfig(
        out_dir=Path(args.out_dir),
        model_path=Path(model) if model else None,
        work_size=int(cfg.get("work_size", 224)),
        rbd=_rbd_params(cfg),
        scales=_scale_set(cfg),
        jobs=int(cfg.get("jobs", 1)),
    )
    result = run_pipeline(manifest, pc)
    for stage, report in result.reports.items():
        print(f"{stage:>4}: MAE {report.mean_mae:.4f} ({report.counts['evaluated']} images)")
    if result.failed:
        print(f"skipped {len(result.failed)} of {len(manifest.entries)} entries", file=sys.stderr)
    return EXIT_GATE if result.quality_gate_failed else EXIT_OK


def cmd_plot(args) -> int:
    curves = {}
    for path in args.reports:
        report = EvalReport.read_json(path)
        if report.pr_curve is None:
            raise DataError(f"{path}: report has no PR curve")
        curves[f"{report.method} ({report.name})"] = report.pr_curve
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(pr_curve_svg(curves, title=args.title))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    rbd_opts = argparse.ArgumentParser(add_help=False)
    rbd_opts.add_argument("--n-seg", dest="n_seg", type=int)
    rbd_opts.add_argument("--sigma-clr", dest="sigma_clr", type=float)
    rbd_opts.add_argument("--sigma-bnd", dest="sigma_bnd", type=float)
    rbd_opts.add_argument("--sigma-spa", dest="sigma_spa", type=float)
    rbd_opts.add_argument("--mu", type=float)
    rbd_opts.add_argument("--compactness", type=float)
    rbd_opts.add_argument("--iters", type=int)

    scale_opts = argparse.ArgumentParser(add_help=False)
    scale_opts.add_argument("--scales", type=_csv_numbers(int), help="e.g. 100,200,300,400")
    scale_opts.add_argument("--weights", type=_csv_numbers(float))

    parser = _Parser(prog="salfuse", description="Saliency fusion pipeline and benchmark harness.")
    parser.add_argument("--version", action="version", version=f"salfuse {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("slic", parents=[common], help="SLIC label map + JSON statistics")
    p.add_argument("image")
    p.add_argument("--n", type=int, default=200, help="target number of superpixels")
    p.add_argument("--compactness", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--out", required=True, help="16-bit label PNG; sidecar written next to it")
    p.set_defaults(func=cmd_slic)

    p = sub.add_parser("rbd", parents=[common, rbd_opts], help="boundary-connectivity saliency")
    p.add_argument("image")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rbd)

    p = sub.add_parser("fuse-train", parents=[common, rbd_opts], help="train the fusion network")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--loss-csv")
    p.add_argument("--base-lr", dest="base_lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--power", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--work-size", dest="work_size", type=int)
    p.set_defaults(func=cmd_fuse_train)

    p = sub.add_parser("fuse-infer", parents=[common], help="fuse a deep map and an RBD map")
    p.add_argument("--model", required=True)
    p.add_argument("--deep", required=True)
    p.add_argument("--rbd", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--work-size", dest="work_size", type=int)
    p.set_defaults(func=cmd_fuse_infer)

    p = sub.add_parser("mssf", parents=[common, scale_opts], help="multi-scale superpixel refinement")
    p.add_argument("image")
    p.add_argument("map")
    p.add_argument("--out", required=True)
    p.add_argument("--compactness", type=float)
    p.add_argument("--iters", type=int)
    p.set_defaults(func=cmd_mssf)

    p = sub.add_parser("eval", parents=[common], help="MAE and PR curve for a directory of maps")
    p.add_argument("--manifest", required=True)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--method")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", parents=[common, rbd_opts, scale_opts], help="full pipeline + reports")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--model", help="fusion model file; without it only RBD runs")
    p.add_argument("--work-size", dest="work_size", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("plot", parents=[common], help="PR curves from JSON reports as SVG")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--title", default="Precision-Recall")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"salfuse: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SalfuseError, OSError, ValueError) as exc:
        print(f"salfuse: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
