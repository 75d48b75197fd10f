"""Annotation-preserving pseudo-domain generation.

A generator receives a source image, a global prompt and one instance
condition per annotated box and returns a new raster of the same size.
Annotations are copied from the source untouched, so every generated image
is labeled for free. Two generators ship: ``identity`` and ``procedural``, a
parametric stylizer standing in for an instance-conditioned diffusion model.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Protocol, Sequence

import numpy as np

from .dataset import Annotation, BoundingBox, DomainDataset, ImageRaster, LabeledImage
from .errors import ContractViolation, GenerationError, PseudoDomainError, ValidationError
from .prompts import (
    DescriptorSets,
    GlobalPrompt,
    InstancePrompt,
    StubTagger,
    Tagger,
    TagSet,
    augment_tags,
    decode_prompt,
    extract_tags,
    gen_instance_prompt,
)
from .rng import derive_seed, stable_hash, stream

__all__ = [
    "InstanceCondition",
    "StyleDomainSpec",
    "GeneratorConfig",
    "Generator",
    "IdentityGenerator",
    "ProceduralGenerator",
    "GENERATORS",
    "get_generator",
    "TARGET_DOMAINS",
    "SOURCE_DOMAIN",
    "procedural_stylize",
    "generate_image",
    "plan_image",
    "generate_pseudo_domain",
    "generate_pseudo_domain_with_manifest",
]


@dataclass(frozen=True)
class InstanceCondition:
    prompt: InstancePrompt
    box: BoundingBox


@dataclass(frozen=True)
class StyleDomainSpec:
    """Target-domain identity plus the procedural stylizer's parameters.

    ``gain`` is per channel (R, G, B); the remaining parameters are scalars.
    """

    name: str
    domain_tags: TagSet = field(default_factory=TagSet)
    gain: tuple[float, float, float] = (1.0, 1.0, 1.0)
    bias: float = 0.0
    gamma: float = 1.0
    fog_alpha: float = 0.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "domain_tags", TagSet(self.domain_tags))
        gain = tuple(float(g) for g in self.gain)
        if len(gain) == 1:
            gain = gain * 3
        object.__setattr__(self, "gain", gain)
        problems = []
        if not self.name:
            problems.append("style domain name is empty")
        if len(gain) != 3 or not all(g > 0 and math.isfinite(g) for g in gain):
            problems.append(f"{self.name}: gain must be three positive numbers, got {self.gain}")
        if not math.isfinite(self.bias):
            problems.append(f"{self.name}: bias must be finite")
        if not self.gamma > 0:
            problems.append(f"{self.name}: gamma must be > 0, got {self.gamma}")
        if not 0.0 <= self.fog_alpha <= 1.0:
            problems.append(f"{self.name}: fog_alpha must be in [0, 1], got {self.fog_alpha}")
        if not self.noise_sigma >= 0:
            problems.append(f"{self.name}: noise_sigma must be >= 0, got {self.noise_sigma}")
        if problems:
            raise ValidationError(problems)

    def is_identity(self) -> bool:
        return (
            self.gain == (1.0, 1.0, 1.0)
            and self.bias == 0.0
            and self.gamma == 1.0
            and self.fog_alpha == 0.0
            and self.noise_sigma == 0.0
        )


# Hand-calibrated stand-ins for the four unseen weather domains; not measured values.
TARGET_DOMAINS: dict[str, StyleDomainSpec] = {
    spec.name: spec
    for spec in (
        StyleDomainSpec("night-sunny", TagSet(["night", "dark", "clear"]), (0.35, 0.35, 0.4), 0.0, 1.2, 0.0, 0.01),
        StyleDomainSpec("night-rainy", TagSet(["night", "dark", "rainy"]), (0.3, 0.32, 0.42), 0.0, 1.2, 0.1, 0.05),
        StyleDomainSpec("daytime-foggy", TagSet(["daytime", "foggy"]), (1.0, 1.0, 1.0), 0.0, 1.0, 0.5, 0.01),
        StyleDomainSpec("dusk-rainy", TagSet(["dusk", "rainy"]), (0.6, 0.58, 0.72), 0.02, 1.1, 0.05, 0.05),
    )
}

# Used to build the pseudo-source image for object filtering.
SOURCE_DOMAIN = StyleDomainSpec("daytime-sunny", TagSet(["daytime", "sunny"]), noise_sigma=0.01)


@dataclass(frozen=True)
class GeneratorConfig:
    generator_id: str
    seed: int = 0
    parameters: dict[str, Any] = field(default_factory=dict)


class Generator(Protocol):
    name: str
    thread_safe: bool

    def generate(
        self,
        source: LabeledImage,
        global_prompt: GlobalPrompt,
        conditions: Sequence[InstanceCondition],
        cfg: GeneratorConfig,
    ) -> ImageRaster: ...


class IdentityGenerator:
    name = "identity"
    thread_safe = True

    def generate(self, source, global_prompt, conditions, cfg):
        return source.raster


def _hue_rotation(angle: float) -> np.ndarray:
    """3x3 rotation about the gray axis (1, 1, 1)/sqrt(3)."""
    c, s = math.cos(angle), math.sin(angle)
    k = np.full((3, 3), 1.0 / 3.0)
    cross = np.array([[0.0, -1.0, 1.0], [1.0, 0.0, -1.0], [-1.0, 1.0, 0.0]]) / math.sqrt(3.0)
    return c * np.eye(3) + s * cross + (1.0 - c) * k


def _local_style(prompt_text: str) -> tuple[np.ndarray, float, np.ndarray, float]:
    rng = stream(stable_hash(prompt_text))
    rotation = _hue_rotation(float(rng.uniform(-0.6, 0.6)))
    contrast = float(rng.uniform(0.7, 1.3))
    target = rng.uniform(0.0, 1.0, size=3)
    strength = float(rng.uniform(0.15, 0.35))
    return rotation, contrast, target, strength


def procedural_stylize(
    raster: ImageRaster,
    boxes: Sequence[BoundingBox],
    spec: StyleDomainSpec,
    instance_prompts: Sequence[InstancePrompt | str],
    seed: int,
) -> ImageRaster:
    """Global photometric restyle followed by per-box local restyle.

    Globally ``clip(((gain*p + bias)^gamma)*(1 - fog) + 0.5*fog + noise, 0, 1)``,
    with Gaussian noise of scale ``noise_sigma`` drawn from a stream keyed by
    ``seed`` (one draw per pixel index). Each box region then gets a hue
    rotation, contrast change and tint keyed only by its prompt text, so
    different prompts restyle objects differently while pixels outside every
    box are unaffected.
    """
    if len(boxes) != len(instance_prompts):
        raise ValidationError(f"{len(boxes)} boxes but {len(instance_prompts)} instance prompts")
    px = raster.pixels.astype(np.float64)
    gain = np.asarray(spec.gain, dtype=np.float64)[:, None, None]
    out = np.maximum(gain * px + spec.bias, 0.0) ** spec.gamma
    out = out * (1.0 - spec.fog_alpha) + 0.5 * spec.fog_alpha
    if spec.noise_sigma > 0:
        out = out + spec.noise_sigma * stream(seed).standard_normal(out.shape)
    out = np.clip(out, 0.0, 1.0)

    h, w = raster.height, raster.width
    for box, prompt in zip(boxes, instance_prompts):
        text = prompt.text if isinstance(prompt, InstancePrompt) else str(prompt)
        x0, y0, x1, y1 = box.pixel_bounds(w, h)
        if x1 <= x0 or y1 <= y0:
            continue
        region = out[:, y0:y1, x0:x1]
        rotation, contrast, target, strength = _local_style(text)
        mean = region.reshape(3, -1).mean(axis=1)[:, None, None]
        styled = np.einsum("ij,jhw->ihw", rotation, region - mean) * contrast + mean
        styled = (1.0 - strength) * styled + strength * target[:, None, None]
        out[:, y0:y1, x0:x1] = np.clip(styled, 0.0, 1.0)
    return ImageRaster(out.astype(np.float32))


class ProceduralGenerator:
    """Runs :func:`procedural_stylize` with the style from ``cfg.parameters['style']``."""

    name = "procedural"
    thread_safe = True

    def generate(self, source, global_prompt, conditions, cfg):
        spec = cfg.parameters.get("style")
        if not isinstance(spec, StyleDomainSpec):
            raise ValidationError("procedural generator needs a StyleDomainSpec in parameters['style']")
        return procedural_stylize(
            source.raster,
            [c.box for c in conditions],
            spec,
            [c.prompt for c in conditions],
            cfg.seed,
        )


GENERATORS = {"identity": IdentityGenerator, "procedural": ProceduralGenerator}


def get_generator(generator_id: str) -> Generator:
    try:
        return GENERATORS[generator_id]()
    except KeyError:
        raise ValidationError(
            f"unknown generator {generator_id!r}; known: {', '.join(sorted(GENERATORS))}"
        ) from None


def generate_image(
    source: LabeledImage,
    global_prompt: GlobalPrompt,
    conditions: Sequence[InstanceCondition],
    generator: Generator,
    cfg: GeneratorConfig,
    domain: str | None = None,
) -> LabeledImage:
    """Generate one image and carry the source annotations over verbatim.

    Raises :class:`ContractViolation` if the generator returns a raster whose
    size differs from the source; the output is never cropped or padded.
    """
    w, h = source.raster.width, source.raster.height
    if len(conditions) != len(source.annotations):
        raise ValidationError(
            f"image {source.id!r}: {len(conditions)} conditions for {len(source.annotations)} annotations"
        )
    bad = [p for c in conditions for p in c.box.problems(w, h)]
    if bad:
        raise ValidationError([f"image {source.id!r}: condition box {p}" for p in bad])
    try:
        raster = generator.generate(source, global_prompt, conditions, cfg)
    except PseudoDomainError:
        raise
    except Exception as exc:
        raise GenerationError(cfg.generator_id, source.id, exc) from exc
    if not isinstance(raster, ImageRaster):
        raise ContractViolation(f"generator {cfg.generator_id!r} returned {type(raster).__name__}, not ImageRaster")
    if (raster.width, raster.height) != (w, h) or raster.pixels.shape[0] != 3:
        raise ContractViolation(
            f"generator {cfg.generator_id!r} returned {raster.width}x{raster.height} for "
            f"{w}x{h} image {source.id!r}"
        )
    problems = raster.problems()
    if problems:
        raise ContractViolation(f"generator {cfg.generator_id!r} on image {source.id!r}: {'; '.join(problems)}")
    return LabeledImage(source.id, raster, list(source.annotations), domain or source.domain)


@dataclass(frozen=True)
class ImagePlan:
    """Everything needed to regenerate one image in isolation."""

    image_id: str
    seed: int
    tags: TagSet
    global_prompt: GlobalPrompt
    prompt_seeds: tuple[int, ...]
    conditions: tuple[InstanceCondition, ...]

    def to_record(self) -> dict[str, Any]:
        return {
            "image_id": self.image_id,
            "seed": self.seed,
            "tags": list(self.tags),
            "global_prompt": self.global_prompt.text,
            "instances": [
                {
                    "box_index": k,
                    "category": c.prompt.category,
                    "seed": s,
                    "prompt": c.prompt.text,
                }
                for k, (c, s) in enumerate(zip(self.conditions, self.prompt_seeds))
            ],
        }


def plan_image(
    image: LabeledImage,
    spec: StyleDomainSpec,
    descriptor_sets: DescriptorSets,
    global_seed: int,
    tagger: Tagger | None = None,
) -> ImagePlan:
    tagger = tagger or StubTagger()
    tags = augment_tags(extract_tags(image, tagger), spec.domain_tags)
    prompt = decode_prompt(tags)
    seeds = tuple(derive_seed(global_seed, spec.name, image.id, k) for k in range(len(image.annotations)))
    conditions = tuple(
        InstanceCondition(gen_instance_prompt(descriptor_sets, ann.category, s), ann.box)
        for ann, s in zip(image.annotations, seeds)
    )
    return ImagePlan(image.id, derive_seed(global_seed, spec.name, image.id), tags, prompt, seeds, conditions)


def generate_pseudo_domain_with_manifest(
    source: DomainDataset,
    spec: StyleDomainSpec,
    descriptor_sets: DescriptorSets,
    generator: Generator,
    cfg: GeneratorConfig,
    tagger: Tagger | None = None,
    workers: int = 1,
) -> tuple[DomainDataset, list[dict[str, Any]]]:
    """Like :func:`generate_pseudo_domain` but also returns one provenance record per image."""
    source.validate()
    tagger = tagger or StubTagger()

    def work(image: LabeledImage) -> tuple[LabeledImage, dict[str, Any]]:
        try:
            plan = plan_image(image, spec, descriptor_sets, cfg.seed, tagger)
        except ValidationError as exc:
            raise ValidationError([f"image {image.id!r}: {p}" for p in exc.problems]) from exc
        image_cfg = dataclasses.replace(
            cfg, seed=plan.seed, parameters={**cfg.parameters, "style": spec}
        )
        out = generate_image(image, plan.global_prompt, plan.conditions, generator, image_cfg, spec.name)
        return out, plan.to_record()

    if workers > 1 and getattr(generator, "thread_safe", False):
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, source.images))
    else:
        results = [work(img) for img in source.images]
    dataset = DomainDataset(spec.name, list(source.categories), [img for img, _ in results])
    return dataset, [rec for _, rec in results]


def generate_pseudo_domain(
    source: DomainDataset,
    spec: StyleDomainSpec,
    descriptor_sets: DescriptorSets,
    generator: Generator,
    cfg: GeneratorConfig,
    tagger: Tagger | None = None,
    workers: int = 1,
) -> DomainDataset:
    """One generated image per source image, labeled with the source annotations."""
    dataset, _ = generate_pseudo_domain_with_manifest(
        source, spec, descriptor_sets, generator, cfg, tagger, workers
    )
    return dataset
