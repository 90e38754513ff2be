"""Dataset manifests, MAE / precision-recall evaluation and the end-to-end pipeline."""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, SalfuseError, ShapeError
from .fusion import FusionParams, fuse_forward
from .image_core import (
    Provenance,
    SaliencyMap,
    binarize_gt,
    load_image,
    load_map,
    quantize,
    resize_array,
    resize_bilinear,
    save_gray,
)
from .mssf import ScaleSet, mssf_refine
from .rbd import RBDParams, rbd_map

log = logging.getLogger(__name__)

NUM_THRESHOLDS = 256
SKIP_LIMIT = 0.10
STAGES = ("rbd", "deep", "ds", "dsm")


class EmptyGroundTruthError(DataError, ValueError):
    """The ground-truth mask has no salient pixel, so recall is undefined."""


# -- manifests ---------------------------------------------------------------


@dataclass
class ManifestEntry:
    id: str
    image: Path
    gt: Path
    deep: Path | None = None
    rbd: Path | None = None


@dataclass
class DatasetManifest:
    name: str
    entries: list
    root: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path, check_exists: bool = True) -> "DatasetManifest":
        """Read a JSON manifest; relative paths resolve against its directory.

        Format::

            {"name": "ecssd-mini",
             "entries": [{"id": "0001", "image": "img/0001.jpg",
                          "gt": "gt/0001.png", "deep": "deep/0001.png"}]}

        ``id`` defaults to the image file stem; ``deep`` and ``rbd``
        (a precomputed RBD map) are optional.
        """
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except FileNotFoundError:
            raise DataError(f"manifest not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict) or not isinstance(raw.get("entries"), list):
            raise DataError(f"{path}: manifest needs an 'entries' list")
        root = path.resolve().parent
        entries, seen = [], set()
        for i, item in enumerate(raw["entries"]):
            if not isinstance(item, dict) or "image" not in item or "gt" not in item:
                raise DataError(f"{path}: entry {i} needs 'image' and 'gt'")

            def resolve(key):
                value = item.get(key)
                if value is None:
                    return None
                p = Path(value)
                return p if p.is_absolute() else root / p

            image = resolve("image")
            entry = ManifestEntry(
                id=str(item.get("id", image.stem)),
                image=image,
                gt=resolve("gt"),
                deep=resolve("deep"),
                rbd=resolve("rbd"),
            )
            if entry.id in seen:
                raise DataError(f"{path}: duplicate entry id {entry.id!r}")
            seen.add(entry.id)
            if check_exists:
                for key in ("image", "gt", "deep", "rbd"):
                    p = getattr(entry, key)
                    if p is not None and not p.exists():
                        raise DataError(f"{path}: entry {entry.id!r} {key} file missing: {p}")
            entries.append(entry)
        return cls(str(raw.get("name", path.stem)), entries, root)

    def save(self, path) -> None:
        path = Path(path)
        base = path.resolve().parent

        def rel(p):
            if p is None:
                return None
            try:
                return os.path.relpath(p, base)
            except ValueError:
                return str(p)

        entries = []
        for e in self.entries:
            item = {"id": e.id, "image": rel(e.image), "gt": rel(e.gt)}
            if e.deep is not None:
                item["deep"] = rel(e.deep)
            if e.rbd is not None:
                item["rbd"] = rel(e.rbd)
            entries.append(item)
        path.write_text(json.dumps({"name": self.name, "entries": entries}, indent=2) + "\n")


# -- metrics -----------------------------------------------------------------


def _values(x) -> np.ndarray:
    return x.values if isinstance(x, SaliencyMap) else np.asarray(x, dtype=np.float64)


def mae(s, gt) -> float:
    """Mean absolute difference between a saliency map and the ground truth."""
    a, b = _values(s), _values(gt)
    if a.shape != b.shape:
        raise ShapeError(f"map {a.shape} and ground truth {b.shape} differ in size")
    a, b = a.ravel(), b.ravel()
    ge = a >= b
    # |a - b| split into its float operands so fsum sees exact differences;
    # the sum is then correctly rounded and independent of layout.
    terms = np.concatenate([a[ge], -b[ge], b[~ge], -a[~ge]])
    return math.fsum(terms.tolist()) / a.size


def confusion_counts(s, gt) -> np.ndarray:
    """Per-threshold (tp, fp, fn, tn) pixel counts, shape 256 x 4.

    A pixel is detected at threshold t when round(s * 255) >= t.
    """
    q = quantize(_values(s)).ravel()
    mask = np.asarray(_values(gt)).ravel()
    if q.shape != mask.shape:
        raise ShapeError("map and ground truth differ in size")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("ground truth must be a binary mask")
    pos = mask == 1
    npos = int(pos.sum())
    if npos == 0:
        raise EmptyGroundTruthError("ground truth has no salient pixel")
    det_hist = np.bincount(q, minlength=NUM_THRESHOLDS)
    tp_hist = np.bincount(q[pos], minlength=NUM_THRESHOLDS)
    detected = np.cumsum(det_hist[::-1])[::-1]
    tp = np.cumsum(tp_hist[::-1])[::-1]
    fp = detected - tp
    fn = npos - tp
    tn = q.size - detected - fn
    return np.stack([tp, fp, fn, tn], axis=1).astype(np.int64)


def pr_points(s, gt) -> np.ndarray:
    """Precision and recall at the 256 thresholds t = 0..255.

    Returns a 256 x 3 array of (threshold, precision, recall); precision is
    1 when nothing is detected.
    """
    counts = confusion_counts(s, gt)
    tp, fp, fn = counts[:, 0], counts[:, 1], counts[:, 2]
    detected = tp + fp
    npos = tp[0] + fn[0]
    precision = np.ones(NUM_THRESHOLDS)
    nz = detected > 0
    precision[nz] = tp[nz] / detected[nz]
    recall = tp / npos
    return np.stack([np.arange(NUM_THRESHOLDS, dtype=np.float64), precision, recall], axis=1)


# -- reports -----------------------------------------------------------------


@dataclass
class EvalReport:
    name: str
    method: str
    per_image: list  # [(id, mae)] in manifest order
    mean_mae: float
    pr_curve: np.ndarray | None  # 256 x 3 (threshold, precision, recall)
    counts: dict
    notes: dict = field(default_factory=dict)

    @property
    def per_image_mae(self) -> list:
        return [m for _, m in self.per_image]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "method": self.method,
            "mean_mae": self.mean_mae,
            "per_image": [{"id": i, "mae": m} for i, m in self.per_image],
            "pr_curve": None
            if self.pr_curve is None
            else [
                {"threshold": int(t), "precision": p, "recall": r}
                for t, p, r in self.pr_curve.tolist()
            ],
            "counts": dict(self.counts),
            "notes": dict(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        curve = d.get("pr_curve")
        arr = (
            None
            if curve is None
            else np.array([[c["threshold"], c["precision"], c["recall"]] for c in curve], float)
        )
        return cls(
            d["name"],
            d["method"],
            [(p["id"], p["mae"]) for p in d["per_image"]],
            d["mean_mae"],
            arr,
            d["counts"],
            d.get("notes", {}),
        )

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def read_json(cls, path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def write_csv(self, path) -> None:
        lines = ["threshold,precision,recall"]
        if self.pr_curve is not None:
            lines += [f"{int(t)},{p!r},{r!r}" for t, p, r in self.pr_curve.tolist()]
        Path(path).write_text("\n".join(lines) + "\n")


def load_gt_mask(path) -> np.ndarray:
    return binarize_gt(load_map(path).values)


def evaluate_dataset(manifest: DatasetManifest, output_dir, method: str = "") -> EvalReport:
    """Score ``<output_dir>/<id>.png`` against each entry's ground truth.

    Predictions are resized to the ground-truth resolution. Missing outputs
    are counted as skipped; images whose mask is empty still get an MAE but
    do not enter the PR average.
    """
    output_dir = Path(output_dir)
    per_image = []
    precisions, recalls = [], []
    skipped = pr_skipped = 0
    for entry in manifest.entries:
        pred_path = output_dir / f"{entry.id}.png"
        if not pred_path.exists():
            log.warning("no output for %s in %s", entry.id, output_dir)
            skipped += 1
            continue
        gt = load_gt_mask(entry.gt)
        pred = load_map(pred_path).values
        if pred.shape != gt.shape:
            pred = resize_array(pred, *gt.shape)
        per_image.append((entry.id, mae(pred, gt)))
        try:
            curve = pr_points(pred, gt)
        except EmptyGroundTruthError:
            pr_skipped += 1
            continue
        precisions.append(curve[:, 1])
        recalls.append(curve[:, 2])
    if not per_image:
        raise DataError(f"no image of {manifest.name!r} could be evaluated in {output_dir}")

    total = 0.0
    for _, m in per_image:
        total += m
    curve = None
    if precisions:
        p = np.zeros(NUM_THRESHOLDS)
        r = np.zeros(NUM_THRESHOLDS)
        for pi, ri in zip(precisions, recalls):
            p += pi
            r += ri
        curve = np.stack(
            [np.arange(NUM_THRESHOLDS, dtype=np.float64), p / len(precisions), r / len(recalls)],
            axis=1,
        )
    return EvalReport(
        name=manifest.name,
        method=method or output_dir.name,
        per_image=per_image,
        mean_mae=total / len(per_image),
        pr_curve=curve,
        counts={"evaluated": len(per_image), "skipped": skipped, "pr_skipped": pr_skipped},
        notes={
            "resolution": "predictions resized to ground-truth resolution",
            "gt_binarization": "8-bit value >= 128",
            "pr_pooling": "per-threshold mean over images",
        },
    )


# -- pipeline ----------------------------------------------------------------


@dataclass
class PipelineConfig:
    out_dir: Path = Path("out")
    model_path: Path | None = None
    work_size: int = 224
    rbd: RBDParams = field(default_factory=RBDParams)
    scales: ScaleSet = field(default_factory=ScaleSet)
    jobs: int = 1


@dataclass
class PipelineResult:
    reports: dict  # stage -> EvalReport
    processed: list
    failed: list  # [(id, message)]

    @property
    def skip_fraction(self) -> float:
        total = len(self.processed) + len(self.failed)
        return len(self.failed) / total if total else 0.0

    @property
    def quality_gate_failed(self) -> bool:
        return self.skip_fraction > SKIP_LIMIT


def _process_entry(entry: ManifestEntry, cfg: PipelineConfig, model: FusionParams | None):
    img = load_image(entry.image)
    h, w = img.shape
    if entry.rbd is not None:
        s_rbd = load_map(entry.rbd, Provenance.RBD)
        s_rbd = resize_bilinear(s_rbd, h, w)
    else:
        s_rbd = rbd_map(img, params=cfg.rbd)
    maps = {"rbd": s_rbd}
    if entry.deep is not None:
        s_deep = load_map(entry.deep, Provenance.DEEP)
        maps["deep"] = resize_bilinear(s_deep, h, w)
        if model is not None:
            n = cfg.work_size
            ds_work = fuse_forward(
                model, resize_bilinear(s_deep, n, n), resize_bilinear(s_rbd, n, n)
            )
            s_ds = resize_bilinear(ds_work, h, w)
            maps["ds"] = s_ds
            maps["dsm"] = mssf_refine(s_ds, img, cfg.scales, cfg.rbd.compactness, cfg.rbd.iters)
    for stage, m in maps.items():
        save_gray(m, Path(cfg.out_dir) / stage / f"{entry.id}.png")
    return sorted(maps)


def _run_one(args):
    entry, cfg, model = args
    try:
        return entry.id, _process_entry(entry, cfg, model), None
    except (SalfuseError, OSError, ValueError) as exc:
        return entry.id, None, f"{type(exc).__name__}: {exc}"


def run_pipeline(manifest: DatasetManifest, cfg: PipelineConfig) -> PipelineResult:
    """RBD -> (fusion with the supplied deep map) -> MSSF for every entry, then evaluate.

    Maps go to ``<out_dir>/<stage>/<id>.png`` and reports to
    ``<out_dir>/reports/<stage>.json`` plus a PR-curve CSV per stage. The
    fusion and MSSF stages run only when a model file is configured and the
    entry has a deep map.
    """
    out = Path(cfg.out_dir)
    for stage in STAGES:
        (out / stage).mkdir(parents=True, exist_ok=True)
    model = FusionParams.load(cfg.model_path) if cfg.model_path else None

    tasks = [(e, cfg, model) for e in manifest.entries]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]

    processed, failed, stages_seen = [], [], set()
    for entry_id, stages, err in results:
        if err is not None:
            log.warning("skipping %s: %s", entry_id, err)
            failed.append((entry_id, err))
        else:
            processed.append(entry_id)
            stages_seen.update(stages)

    reports = {}
    report_dir = out / "reports"
    report_dir.mkdir(exist_ok=True)
    for stage in STAGES:
        if stage not in stages_seen:
            continue
        report = evaluate_dataset(manifest, out / stage, method=stage)
        reports[stage] = report
        report.write_json(report_dir / f"{stage}.json")
        report.write_csv(report_dir / f"{stage}_pr.csv")

    result = PipelineResult(reports, processed, failed)
    summary = {
        "dataset": manifest.name,
        "processed": len(processed),
        "failed": [{"id": i, "error": e} for i, e in failed],
        "mean_mae": {stage: r.mean_mae for stage, r in reports.items()},
        "config": {
            "work_size": cfg.work_size,
            "rbd": asdict(cfg.rbd),
            "scales": cfg.scales.scales,
            "weights": cfg.scales.weights,
            "model": None if cfg.model_path is None else Path(cfg.model_path).name,
        },
    }
    (report_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return result


# -- plotting ----------------------------------------------------------------


def pr_curve_svg(curves: dict, title: str = "Precision-Recall", size: int = 480) -> str:
    """Render {label: 256x3 curve} as a standalone SVG line chart."""
    palette = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]
    pad = 56
    span = size - 2 * pad

    def xy(r, p):
        return pad + r * span, size - pad - p * span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}" font-family="sans-serif" font-size="12">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<text x="{size / 2}" y="24" text-anchor="middle" font-size="14">{title}</text>',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>',
    ]
    for i in range(6):
        v = i / 5
        x, y = xy(v, v)
        parts.append(f'<line x1="{x:.1f}" y1="{size - pad}" x2="{x:.1f}" y2="{size - pad + 5}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{size - pad + 18}" text-anchor="middle">{v:.1f}</text>')
        parts.append(f'<line x1="{pad - 5}" y1="{y:.1f}" x2="{pad}" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{pad - 8}" y="{y + 4:.1f}" text-anchor="end">{v:.1f}</text>')
    parts.append(f'<text x="{size / 2}" y="{size - 16}" text-anchor="middle">Recall</text>')
    parts.append(
        f'<text x="16" y="{size / 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {size / 2})">Precision</text>'
    )
    for idx, (label, curve) in enumerate(curves.items()):
        color = palette[idx % len(palette)]
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in (xy(r, p) for _, p, r in np.asarray(curve)))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = pad + 16 + 16 * idx
        parts.append(f'<line x1="{pad + 10}" y1="{ly - 4}" x2="{pad + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{pad + 36}" y="{ly}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
