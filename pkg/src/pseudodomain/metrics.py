"""Detection metrics (IoU, AP, mAP, mPC) and a kernel two-sample statistic."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import Annotation, BoundingBox, DomainDataset, iou
from .errors import DatasetFormatError, ValidationError

__all__ = [
    "Detection",
    "EvalReport",
    "iou",
    "average_precision",
    "mean_ap",
    "mpc",
    "mmd2",
    "evaluate",
    "load_detections",
    "dump_detections",
]


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    category: str
    confidence: float
    image_id: str

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"detection confidence {self.confidence} outside [0, 1]")


def _match(dets: Sequence[Detection], gts: Mapping[str, Sequence[Annotation | BoundingBox]], iou_thresh: float):
    """Greedy matching in rank order; returns the ranked list of TP flags."""
    order = sorted(range(len(dets)), key=lambda k: (-dets[k].confidence, dets[k].image_id, k))
    gt_boxes = {
        img: [g.box if isinstance(g, Annotation) else g for g in boxes] for img, boxes in gts.items()
    }
    used = {img: [False] * len(boxes) for img, boxes in gt_boxes.items()}
    flags = []
    for k in order:
        det = dets[k]
        best, best_iou = -1, -1.0
        for j, box in enumerate(gt_boxes.get(det.image_id, ())):
            if used[det.image_id][j]:
                continue
            overlap = iou(det.box, box)
            if overlap >= iou_thresh and overlap > best_iou:
                best, best_iou = j, overlap
        if best >= 0:
            used[det.image_id][best] = True
        flags.append(best >= 0)
    return flags


def average_precision(
    dets: Sequence[Detection],
    gts: Mapping[str, Sequence[Annotation | BoundingBox]],
    iou_thresh: float = 0.5,
) -> float:
    """All-point interpolated AP for one category.

    ``gts`` maps image id to that image's ground-truth boxes. Detections are
    ranked by confidence (ties: image id, then input order); each takes the
    unmatched ground truth of highest IoU >= ``iou_thresh``, else it is a false
    positive. With no ground truth, AP is 1 if there are no detections and 0
    otherwise.
    """
    n_gt = sum(len(v) for v in gts.values())
    if n_gt == 0:
        return 1.0 if not dets else 0.0
    if not dets:
        return 0.0
    # exact rational sum, rounded once: the result is the correctly rounded AP
    tp = 0
    points = []
    for rank, hit in enumerate(_match(dets, gts, iou_thresh), 1):
        tp += hit
        points.append((tp, Fraction(tp, rank)))
    total = Fraction(0)
    best = Fraction(0)
    # walk from the deepest rank up, carrying the precision envelope
    for k in range(len(points) - 1, -1, -1):
        tp_k, prec = points[k]
        best = max(best, prec)
        prev_tp = points[k - 1][0] if k else 0
        if tp_k != prev_tp:
            total += Fraction(tp_k - prev_tp, n_gt) * best
    return float(total)


def mean_ap(per_class: Mapping[str, float]) -> float:
    if not per_class:
        raise ValidationError("mean AP over an empty set of categories")
    return float(sum(per_class.values()) / len(per_class))


def mpc(per_domain_map: Mapping[str, float], exclude: str | Iterable[str] | None = None) -> float:
    """Unweighted mean of per-domain mAP, leaving out the source domain(s)."""
    if exclude is None:
        excluded: set[str] = set()
    elif isinstance(exclude, str):
        excluded = {exclude}
    else:
        excluded = set(exclude)
    values = [v for d, v in per_domain_map.items() if d not in excluded]
    if not values:
        raise ValidationError("no domains left after excluding the source domain")
    return float(sum(values) / len(values))


def mmd2(set_a, set_b, gamma: float) -> float:
    """Biased (V-statistic) squared MMD with kernel ``exp(-gamma * ||x - y||^2)``."""
    a = np.atleast_2d(np.asarray(set_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(set_b, dtype=np.float64))
    if a.size == 0 or b.size == 0:
        raise ValidationError("mmd2 needs two non-empty sets")
    if a.shape[1] != b.shape[1]:
        raise ValidationError(f"embedding dimension mismatch: {a.shape[1]} vs {b.shape[1]}")

    def kmean(x, y):
        d2 = ((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=-1)
        return np.exp(-gamma * d2).mean()

    value = kmean(a, a) + kmean(b, b) - 2.0 * kmean(a, b)
    return max(float(value), 0.0)


# -- reports -----------------------------------------------------------------


@dataclass
class EvalReport:
    """Fractions in [0, 1]; ``per_class_ap`` pools detections over all domains."""

    per_class_ap: dict[str, float]
    map: float
    per_domain_map: dict[str, float]
    mpc: float | None
    per_domain_class_ap: dict[str, dict[str, float]] = field(default_factory=dict)
    iou_threshold: float = 0.5
    source_domain: str | None = None

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "iou_threshold": self.iou_threshold,
            "source_domain": self.source_domain,
            "map": self.map,
            "mpc": self.mpc,
            "per_class_ap": self.per_class_ap,
            "per_domain_map": self.per_domain_map,
            "per_domain_class_ap": self.per_domain_class_ap,
        }

    def csv_rows(self) -> list[list[str]]:
        rows = [["schema_version", "scope", "domain", "category", "value"]]
        for cat, ap in sorted(self.per_class_ap.items()):
            rows.append(["1", "class", "", cat, repr(ap)])
        for dom, classes in sorted(self.per_domain_class_ap.items()):
            for cat, ap in sorted(classes.items()):
                rows.append(["1", "domain_class", dom, cat, repr(ap)])
        for dom, m in sorted(self.per_domain_map.items()):
            rows.append(["1", "domain", dom, "", repr(m)])
        rows.append(["1", "map", "", "", repr(self.map)])
        rows.append(["1", "mpc", "", "", "" if self.mpc is None else repr(self.mpc)])
        return rows


def _class_aps(dets: Sequence[Detection], gts: Mapping[str, list[Annotation]], iou_thresh: float) -> dict[str, float]:
    present = sorted({a.category for anns in gts.values() for a in anns})
    out = {}
    for cat in present:
        cat_gts = {img: [a for a in anns if a.category == cat] for img, anns in gts.items()}
        cat_dets = [d for d in dets if d.category == cat]
        out[cat] = average_precision(cat_dets, cat_gts, iou_thresh)
    return out


def evaluate(
    datasets: Sequence[DomainDataset],
    detections: Sequence[Detection],
    iou_thresh: float = 0.5,
    source_domain: str | None = None,
) -> EvalReport:
    """Per-domain mAP and mPC over ground-truth datasets.

    Detection image ids are qualified as ``"<domain>/<image id>"``. Only
    categories with at least one ground-truth box enter a mean.
    """
    by_domain: dict[str, list[Detection]] = defaultdict(list)
    known = {ds.domain for ds in datasets}
    for det in detections:
        domain, sep, _ = det.image_id.partition("/")
        if not sep or domain not in known:
            raise ValidationError(f"detection image id {det.image_id!r} does not name a known domain")
        by_domain[domain].append(det)

    pooled_gts: dict[str, list[Annotation]] = {}
    per_domain_class: dict[str, dict[str, float]] = {}
    per_domain_map: dict[str, float] = {}
    for ds in datasets:
        gts = {f"{ds.domain}/{img.id}": list(img.annotations) for img in ds.images}
        pooled_gts.update(gts)
        aps = _class_aps(by_domain.get(ds.domain, []), gts, iou_thresh)
        if aps:
            per_domain_class[ds.domain] = aps
            per_domain_map[ds.domain] = mean_ap(aps)
    per_class = _class_aps(list(detections), pooled_gts, iou_thresh)
    unseen = [d for d in per_domain_map if d != source_domain]
    return EvalReport(
        per_class_ap=per_class,
        map=mean_ap(per_class) if per_class else 0.0,
        per_domain_map=per_domain_map,
        mpc=mpc(per_domain_map, source_domain) if unseen else None,
        per_domain_class_ap=per_domain_class,
        iou_threshold=iou_thresh,
        source_domain=source_domain,
    )


def load_detections(path: str | Path) -> list[Detection]:
    """Read JSON lines ``{image_id, category, bbox, confidence}``; blank lines are skipped."""
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
        for key in ("image_id", "category", "bbox", "confidence"):
            if key not in obj:
                raise DatasetFormatError(f"{path}:{lineno}: missing field {key!r}")
        bbox = obj["bbox"]
        if not isinstance(bbox, list) or len(bbox) != 4:
            raise DatasetFormatError(f"{path}:{lineno}: bbox must be four numbers")
        conf = float(obj["confidence"])
        if not math.isfinite(conf):
            raise DatasetFormatError(f"{path}:{lineno}: confidence must be finite")
        out.append(Detection(BoundingBox(*(float(v) for v in bbox)), str(obj["category"]), conf, str(obj["image_id"])))
    return out


def dump_detections(detections: Iterable[Detection], path: str | Path) -> None:
    lines = [
        json.dumps(
            {"image_id": d.image_id, "category": d.category, "bbox": d.box.as_list(), "confidence": d.confidence},
            sort_keys=True,
        )
        for d in detections
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
