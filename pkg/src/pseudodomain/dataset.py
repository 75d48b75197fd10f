"""Annotated image datasets: data model, canonical JSON persistence, toy scenes.

Pixels are float32 in [0, 1], stored channel-major with shape ``(3, H, W)``.
Box coordinates are real pixel coordinates with the origin at the top-left.
"""

from __future__ import annotations

import base64
import json
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import DatasetFormatError, ValidationError
from .rng import keyed_stream

__all__ = [
    "BoundingBox",
    "Annotation",
    "ImageRaster",
    "LabeledImage",
    "DomainDataset",
    "SynthWarning",
    "load_dataset",
    "save_dataset",
    "dumps_dataset",
    "synth_toy_dataset",
    "merge_datasets",
    "crop",
    "iou",
]


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return max(self.width, 0.0) * max(self.height, 0.0)

    def as_list(self) -> list[float]:
        return [float(self.x_min), float(self.y_min), float(self.x_max), float(self.y_max)]

    def problems(self, width: int, height: int) -> list[str]:
        """Return every invariant this box violates inside a ``width`` x ``height`` image."""
        out = []
        coords = self.as_list()
        if not all(math.isfinite(c) for c in coords):
            return [f"non-finite coordinates {coords}"]
        if not self.x_min < self.x_max:
            out.append(f"x_min {self.x_min} >= x_max {self.x_max}")
        if not self.y_min < self.y_max:
            out.append(f"y_min {self.y_min} >= y_max {self.y_max}")
        for name, value, upper in (
            ("x_min", self.x_min, width),
            ("x_max", self.x_max, width),
            ("y_min", self.y_min, height),
            ("y_max", self.y_max, height),
        ):
            if not 0 <= value <= upper:
                out.append(f"{name} {value} outside [0, {upper}]")
        return out

    def pixel_bounds(self, width: int, height: int) -> tuple[int, int, int, int]:
        """Integer (x0, y0, x1, y1): floor of the min corner, ceil of the max, clipped."""
        x0 = min(max(math.floor(self.x_min), 0), width)
        y0 = min(max(math.floor(self.y_min), 0), height)
        x1 = min(max(math.ceil(self.x_max), 0), width)
        y1 = min(max(math.ceil(self.y_max), 0), height)
        return x0, y0, x1, y1


@dataclass(frozen=True)
class Annotation:
    box: BoundingBox
    category: str
    instance_prompt: str | None = None


@dataclass(eq=False)
class ImageRaster:
    pixels: np.ndarray

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.float32)

    @classmethod
    def filled(cls, width: int, height: int, color: Sequence[float]) -> ImageRaster:
        px = np.empty((3, height, width), dtype=np.float32)
        px[:] = np.asarray(color, dtype=np.float32)[:, None, None]
        return cls(px)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[2])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[1])

    def problems(self) -> list[str]:
        px = self.pixels
        if px.ndim != 3 or px.shape[0] != 3:
            return [f"pixel array must have shape (3, H, W), got {px.shape}"]
        out = []
        if px.shape[1] < 1 or px.shape[2] < 1:
            out.append(f"non-positive raster size {px.shape[2]}x{px.shape[1]}")
        if not np.all(np.isfinite(px)):
            out.append("non-finite pixel values")
        elif px.size and (px.min() < 0.0 or px.max() > 1.0):
            out.append(f"pixel values outside [0, 1] (min {px.min()}, max {px.max()})")
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageRaster):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(np.array_equal(self.pixels, other.pixels))

    def __repr__(self) -> str:
        return f"ImageRaster({self.width}x{self.height})"


@dataclass
class LabeledImage:
    id: str
    raster: ImageRaster
    annotations: list[Annotation] = field(default_factory=list)
    domain: str = "source"

    def problems(self, categories: Iterable[str] | None = None) -> list[str]:
        out = [f"image {self.id!r}: {p}" for p in self.raster.problems()]
        if out:
            return out
        registry = set(categories) if categories is not None else None
        for k, ann in enumerate(self.annotations):
            where = f"image {self.id!r} annotation {k}"
            out.extend(f"{where}: {p}" for p in ann.box.problems(self.raster.width, self.raster.height))
            if registry is not None and ann.category not in registry:
                out.append(f"{where}: category {ann.category!r} not in registry")
        return out


@dataclass
class DomainDataset:
    domain: str
    categories: list[str]
    images: list[LabeledImage] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    def __iter__(self):
        return iter(self.images)

    def by_id(self) -> dict[str, LabeledImage]:
        return {img.id: img for img in self.images}

    def problems(self) -> list[str]:
        out = []
        if len(set(self.categories)) != len(self.categories):
            out.append("duplicate entries in category registry")
        seen: set[str] = set()
        for img in self.images:
            if img.id in seen:
                out.append(f"duplicate image id {img.id!r}")
            seen.add(img.id)
            if img.domain != self.domain:
                out.append(f"image {img.id!r}: domain {img.domain!r} != dataset domain {self.domain!r}")
            out.extend(img.problems(self.categories))
        return out

    def validate(self) -> DomainDataset:
        problems = self.problems()
        if problems:
            raise ValidationError(problems)
        return self

    def annotation_count(self) -> int:
        return sum(len(img.annotations) for img in self.images)


# -- persistence -------------------------------------------------------------


def _encode_pixels(px: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(px, dtype="<f4").tobytes()).decode("ascii")


def _image_to_json(img: LabeledImage) -> dict[str, Any]:
    anns = []
    for ann in img.annotations:
        d: dict[str, Any] = {"bbox": ann.box.as_list(), "category": ann.category}
        if ann.instance_prompt is not None:
            d["instance_prompt"] = ann.instance_prompt
        anns.append(d)
    return {
        "id": img.id,
        "width": img.raster.width,
        "height": img.raster.height,
        "pixels": _encode_pixels(img.raster.pixels),
        "annotations": anns,
    }


def dumps_dataset(ds: DomainDataset) -> str:
    """Canonical JSON text: sorted keys, no whitespace, shortest round-trip floats."""
    doc = {
        "domain": ds.domain,
        "categories": list(ds.categories),
        "images": [_image_to_json(img) for img in ds.images],
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False) + "\n"


def save_dataset(ds: DomainDataset, path: str | Path) -> None:
    ds.validate()
    text = dumps_dataset(ds)
    Path(path).write_text(text, encoding="ascii")


def _require(obj: Any, key: str, kind: type | tuple[type, ...], where: str) -> Any:
    if not isinstance(obj, dict):
        raise DatasetFormatError(f"{where}: expected an object")
    if key not in obj:
        raise DatasetFormatError(f"{where}.{key}: missing field")
    value = obj[key]
    # bool is an int subclass and never a valid number here
    if isinstance(value, bool) or not isinstance(value, kind):
        raise DatasetFormatError(f"{where}.{key}: expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    return value


def _parse_image(obj: Any, domain: str, where: str) -> LabeledImage:
    image_id = _require(obj, "id", str, where)
    width = _require(obj, "width", int, where)
    height = _require(obj, "height", int, where)
    if width < 1 or height < 1:
        raise DatasetFormatError(f"{where}.width/height: must be positive, got {width}x{height}")
    encoded = _require(obj, "pixels", str, where)
    try:
        raw = base64.b64decode(encoded, validate=True)
    except ValueError as exc:
        raise DatasetFormatError(f"{where}.pixels: invalid base64 ({exc})") from None
    expected = width * height * 3 * 4
    if len(raw) != expected:
        raise DatasetFormatError(f"{where}.pixels: {len(raw)} bytes, expected {expected} for {width}x{height}x3 float32")
    pixels = np.frombuffer(raw, dtype="<f4").reshape(3, height, width).astype(np.float32)

    annotations = []
    for k, a in enumerate(_require(obj, "annotations", list, where)):
        awhere = f"{where}.annotations[{k}]"
        bbox = _require(a, "bbox", list, awhere)
        if len(bbox) != 4 or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in bbox):
            raise DatasetFormatError(f"{awhere}.bbox: expected four numbers")
        category = _require(a, "category", str, awhere)
        prompt = a.get("instance_prompt")
        if prompt is not None and not isinstance(prompt, str):
            raise DatasetFormatError(f"{awhere}.instance_prompt: expected string")
        annotations.append(Annotation(BoundingBox(*(float(v) for v in bbox)), category, prompt))
    return LabeledImage(image_id, ImageRaster(pixels), annotations, domain)


def loads_dataset(text: str) -> DomainDataset:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    domain = _require(doc, "domain", str, "dataset")
    categories = _require(doc, "categories", list, "dataset")
    for k, c in enumerate(categories):
        if not isinstance(c, str):
            raise DatasetFormatError(f"dataset.categories[{k}]: expected string")
    images = [
        _parse_image(obj, domain, f"images[{k}]")
        for k, obj in enumerate(_require(doc, "images", list, "dataset"))
    ]
    return DomainDataset(domain, list(categories), images).validate()


def load_dataset(path: str | Path) -> DomainDataset:
    return loads_dataset(Path(path).read_text(encoding="utf-8"))


# -- operations --------------------------------------------------------------


class SynthWarning(UserWarning):
    pass


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def synth_toy_dataset(
    seed: int,
    n_images: int,
    width: int = 64,
    height: int = 64,
    boxes_per_image: int | tuple[int, int] = (2, 3),
    categories: Sequence[str] = ("car", "person"),
    domain: str = "daytime-sunny",
    max_retries: int = 50,
) -> DomainDataset:
    """Flat-colored scenes with solid rectangles as objects, one annotation per rectangle.

    Each image is drawn from its own random stream keyed by ``(seed, index)``, so
    the output does not depend on call order. No two rectangles in an image
    overlap with IoU above 0.3; if a box cannot be placed within ``max_retries``
    attempts the image keeps fewer boxes and a :class:`SynthWarning` is issued.
    """
    if isinstance(boxes_per_image, int):
        boxes_per_image = (boxes_per_image, boxes_per_image)
    lo, hi = boxes_per_image
    problems = []
    if width < 16 or height < 16:
        problems.append(f"width/height must be >= 16, got {width}x{height}")
    if lo < 1 or hi < lo:
        problems.append(f"boxes_per_image must satisfy 1 <= min <= max, got {boxes_per_image}")
    if n_images < 0:
        problems.append(f"n_images must be >= 0, got {n_images}")
    if not categories:
        problems.append("category registry is empty")
    if problems:
        raise ValidationError(problems)

    images = []
    for index in range(n_images):
        rng = keyed_stream(seed, "synth", index)
        background = rng.uniform(0.3, 0.7, size=3)
        px = np.empty((3, height, width), dtype=np.float32)
        px[:] = background.astype(np.float32)[:, None, None]
        wanted = int(rng.integers(lo, hi + 1))
        boxes: list[BoundingBox] = []
        for _ in range(wanted):
            for _attempt in range(max_retries):
                bw = int(rng.integers(max(4, width // 8), width // 2 + 1))
                bh = int(rng.integers(max(4, height // 8), height // 2 + 1))
                x0 = int(rng.integers(0, width - bw + 1))
                y0 = int(rng.integers(0, height - bh + 1))
                cand = BoundingBox(float(x0), float(y0), float(x0 + bw), float(y0 + bh))
                if all(iou(cand, b) <= 0.3 for b in boxes):
                    boxes.append(cand)
                    break
            else:
                break
        if len(boxes) < wanted:
            warnings.warn(
                f"image {index}: placed {len(boxes)} of {wanted} boxes after {max_retries} retries",
                SynthWarning,
                stacklevel=2,
            )
        annotations = []
        for box in boxes:
            color = rng.uniform(0.0, 1.0, size=3).astype(np.float32)
            x0, y0, x1, y1 = box.pixel_bounds(width, height)
            px[:, y0:y1, x0:x1] = color[:, None, None]
            category = categories[int(rng.integers(len(categories)))]
            annotations.append(Annotation(box, category))
        images.append(LabeledImage(f"img{index:04d}", ImageRaster(px), annotations, domain))
    return DomainDataset(domain, list(categories), images)


def merge_datasets(datasets: Sequence[DomainDataset], domain: str = "merged") -> DomainDataset:
    """Concatenate datasets into one training set; ids become ``"<source domain>/<id>"``."""
    if not datasets:
        raise ValidationError("nothing to merge")
    registry = list(datasets[0].categories)
    for ds in datasets[1:]:
        if set(ds.categories) != set(registry):
            diff = sorted(set(ds.categories) ^ set(registry))
            raise ValidationError(
                f"category registry of {ds.domain!r} differs from {datasets[0].domain!r}: {', '.join(diff)}"
            )
    images = [
        LabeledImage(f"{ds.domain}/{img.id}", img.raster, list(img.annotations), domain)
        for ds in datasets
        for img in ds.images
    ]
    return DomainDataset(domain, registry, images).validate()


def crop(raster: ImageRaster, box: BoundingBox) -> ImageRaster:
    x0, y0, x1, y1 = box.pixel_bounds(raster.width, raster.height)
    if x1 <= x0 or y1 <= y0:
        raise ValidationError(f"box {box.as_list()} has zero area after rounding to pixels")
    return ImageRaster(raster.pixels[:, y0:y1, x0:x1].copy())


def annotation_multiset(annotations: Iterable[Annotation]) -> Counter:
    """(box, category) multiset, ignoring instance prompts."""
    return Counter((a.box, a.category) for a in annotations)
