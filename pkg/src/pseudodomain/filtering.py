"""RBF-kernel filtering of generated objects.

For each annotated box we embed the region in the real source image and in a
pseudo-source image (the source regenerated in its own domain style), then
score the pair with ``exp(-gamma * ||a - b||^2)``. Boxes whose objects did not
survive regeneration are dropped from every pseudo-domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np

from .dataset import Annotation, BoundingBox, DomainDataset, ImageRaster, LabeledImage, crop
from .errors import ValidationError
from .generation import (
    SOURCE_DOMAIN,
    Generator,
    GeneratorConfig,
    StyleDomainSpec,
    generate_pseudo_domain,
)
from .prompts import DescriptorSets

__all__ = [
    "FilterConfig",
    "Embedder",
    "StubEmbedder",
    "EMBEDDERS",
    "get_embedder",
    "embed_region",
    "rbf_similarity",
    "build_pseudo_source",
    "box_similarities",
    "retain_mask",
    "filter_boxes",
    "apply_filter_to_domains",
]

MODES = ("intent", "paper-literal")


@dataclass(frozen=True)
class FilterConfig:
    """Kernel spread ``gamma``, threshold ``tau`` and the comparison direction.

    ``intent`` keeps boxes with similarity >= tau. ``paper-literal`` keeps
    similarity <= tau, the inequality as printed next to a similarity kernel.
    A similarity exactly equal to tau is kept in both modes.
    """

    gamma: float = 0.5
    tau: float = 0.8
    mode: str = "intent"

    def __post_init__(self):
        problems = []
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            problems.append(f"filter.gamma must be > 0, got {self.gamma}")
        if self.mode not in MODES:
            problems.append(f"filter.mode must be one of {MODES}, got {self.mode!r}")
        elif self.mode == "intent" and not 0 < self.tau <= 1:
            problems.append(f"filter.tau must be in (0, 1] in intent mode, got {self.tau}")
        if not math.isfinite(self.tau):
            problems.append("filter.tau must be finite")
        if problems:
            raise ValidationError(problems)


class Embedder(Protocol):
    name: str
    dim: int

    def embed(self, raster: ImageRaster) -> np.ndarray: ...


class StubEmbedder:
    """Hand-crafted 18-d region descriptor.

    Per channel: mean, population std, a 3-bin histogram over [0, 1/3),
    [1/3, 2/3), [2/3, 1] as fractions, and the mean squared forward
    difference (horizontal plus vertical) as a gradient energy. All entries
    are averages, so the descriptor does not depend on crop resolution.
    """

    name = "stub"
    dim = 18

    def embed(self, raster: ImageRaster) -> np.ndarray:
        px = raster.pixels.astype(np.float64)
        flat = px.reshape(3, -1)
        means = flat.mean(axis=1)
        stds = flat.std(axis=1)
        bins = np.minimum((flat * 3.0).astype(np.int64), 2)
        hist = np.stack([(bins == k).mean(axis=1) for k in range(3)], axis=1).reshape(-1)
        energy = np.zeros(3)
        if px.shape[2] > 1:
            energy += (np.diff(px, axis=2) ** 2).reshape(3, -1).mean(axis=1)
        if px.shape[1] > 1:
            energy += (np.diff(px, axis=1) ** 2).reshape(3, -1).mean(axis=1)
        return np.concatenate([means, stds, hist, energy])


EMBEDDERS = {"stub": StubEmbedder}


def get_embedder(embedder_id: str) -> Embedder:
    try:
        return EMBEDDERS[embedder_id]()
    except KeyError:
        raise ValidationError(
            f"unknown embedder {embedder_id!r}; known: {', '.join(sorted(EMBEDDERS))}"
        ) from None


def embed_region(image: LabeledImage, box: BoundingBox, embedder: Embedder) -> np.ndarray:
    vec = np.asarray(embedder.embed(crop(image.raster, box)), dtype=np.float64)
    if vec.shape != (embedder.dim,) or not np.all(np.isfinite(vec)):
        raise ValidationError(
            f"embedder {embedder.name!r} returned shape {vec.shape} (declared dim {embedder.dim}) or non-finite values"
        )
    return vec


def rbf_similarity(a: np.ndarray, b: np.ndarray, gamma: float) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"embedding dimension mismatch: {a.shape} vs {b.shape}")
    if not gamma > 0:
        raise ValidationError(f"gamma must be > 0, got {gamma}")
    diff = a - b
    return math.exp(-gamma * float(diff @ diff))


def build_pseudo_source(
    source: DomainDataset,
    descriptor_sets: DescriptorSets,
    generator: Generator,
    cfg: GeneratorConfig,
    spec: StyleDomainSpec | None = None,
    workers: int = 1,
) -> DomainDataset:
    """Regenerate the source in its own style (same scene, same boxes)."""
    spec = spec or StyleDomainSpec(
        f"pseudo-{source.domain}",
        SOURCE_DOMAIN.domain_tags,
        SOURCE_DOMAIN.gain,
        SOURCE_DOMAIN.bias,
        SOURCE_DOMAIN.gamma,
        SOURCE_DOMAIN.fog_alpha,
        SOURCE_DOMAIN.noise_sigma,
    )
    return generate_pseudo_domain(source, spec, descriptor_sets, generator, cfg, workers=workers)


def _check_same_boxes(a: LabeledImage, b: LabeledImage) -> None:
    ka = [(x.box, x.category) for x in a.annotations]
    kb = [(x.box, x.category) for x in b.annotations]
    if a.id != b.id or ka != kb:
        raise ValidationError(f"annotation lists of {a.id!r} and {b.id!r} differ; cannot compare regions")


def box_similarities(
    source_img: LabeledImage, pseudo_source_img: LabeledImage, gamma: float, embedder: Embedder
) -> np.ndarray:
    _check_same_boxes(source_img, pseudo_source_img)
    return np.array(
        [
            rbf_similarity(
                embed_region(source_img, ann.box, embedder),
                embed_region(pseudo_source_img, ann.box, embedder),
                gamma,
            )
            for ann in source_img.annotations
        ],
        dtype=np.float64,
    )


def retain_mask(similarities: Sequence[float], tau: float, mode: str = "intent") -> np.ndarray:
    s = np.asarray(similarities, dtype=np.float64)
    if mode == "intent":
        return s >= tau
    if mode == "paper-literal":
        return s <= tau
    raise ValidationError(f"unknown filter mode {mode!r}")


def filter_boxes(
    source_img: LabeledImage, pseudo_source_img: LabeledImage, cfg: FilterConfig, embedder: Embedder
) -> list[Annotation]:
    sims = box_similarities(source_img, pseudo_source_img, cfg.gamma, embedder)
    keep = retain_mask(sims, cfg.tau, cfg.mode)
    return [ann for ann, k in zip(source_img.annotations, keep) if k]


def apply_filter_to_domains(
    pseudo_domains: Sequence[DomainDataset], retained: Mapping[str, Sequence[Annotation]]
) -> list[DomainDataset]:
    """Replace each image's annotations with the retained list for its source image.

    Images whose list is empty are kept with no annotations. Rasters are shared,
    not copied.
    """
    out = []
    for ds in pseudo_domains:
        ids = {img.id for img in ds.images}
        missing = sorted(ids - set(retained))
        extra = sorted(set(retained) - ids)
        if missing or extra:
            raise ValidationError(
                f"{ds.domain}: image ids without retained lists {missing}; retained lists without images {extra}"
            )
        images = [LabeledImage(img.id, img.raster, list(retained[img.id]), img.domain) for img in ds.images]
        out.append(DomainDataset(ds.domain, list(ds.categories), images).validate())
    return out
