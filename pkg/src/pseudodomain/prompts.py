"""Image-level and object-level prompt construction.

Image-level prompts come from tags: a tagger extracts tags from the source
image, domain descriptor tags are appended, and a keyword-bucket decoder
turns the union into one sentence. Object-level prompts fill a fixed
template with descriptors drawn at random from per-slot sets.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from .dataset import LabeledImage
from .errors import ValidationError
from .rng import stream

__all__ = [
    "TagSet",
    "DescriptorSets",
    "GlobalPrompt",
    "InstancePrompt",
    "Tagger",
    "StubTagger",
    "TAGGERS",
    "KEYWORD_BUCKETS",
    "extract_tags",
    "augment_tags",
    "decode_prompt",
    "gen_instance_prompt",
    "default_descriptor_sets",
]


class TagSet(tuple):
    """Ordered, de-duplicated set of lowercase tags."""

    def __new__(cls, tags: Iterable[str] = ()):
        seen: dict[str, None] = {}
        for tag in tags:
            tag = str(tag).strip().lower()
            if not tag:
                raise ValidationError("empty tag")
            seen.setdefault(tag, None)
        return super().__new__(cls, seen)

    def __or__(self, other: Iterable[str]) -> TagSet:  # type: ignore[override]
        return TagSet((*self, *other))

    def __repr__(self) -> str:
        return f"TagSet({list(self)!r})"


@dataclass(frozen=True)
class GlobalPrompt:
    text: str
    source_tags: TagSet


@dataclass(frozen=True)
class InstancePrompt:
    text: str
    object: str
    action: str
    weather: str
    scene: str
    time: str
    category: str


@dataclass
class DescriptorSets:
    """Descriptor pools for the object-level template.

    ``consistency`` maps each annotation category to the object descriptors
    allowed for it, so a ``car`` box may become "yellow taxi" but never "bus".
    """

    objects: list[str]
    actions: list[str]
    weather: list[str]
    scenes: list[str]
    times: list[str]
    consistency: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        empty = [
            name
            for name in ("objects", "actions", "weather", "scenes", "times")
            if not getattr(self, name)
        ]
        if empty:
            raise ValidationError([f"descriptor set {name!r} is empty" for name in empty])

    def objects_for(self, category: str) -> list[str]:
        allowed = set(self.consistency.get(category, ()))
        return [o for o in self.objects if o in allowed]


# -- tagging -----------------------------------------------------------------


class Tagger(Protocol):
    def __call__(self, image: LabeledImage) -> TagSet: ...


_HUE_NAMES = (
    (15, "red"),
    (45, "orange"),
    (70, "yellow"),
    (160, "green"),
    (200, "cyan"),
    (260, "blue"),
    (290, "purple"),
    (335, "magenta"),
    (360, "red"),
)


def _color_name(rgb: np.ndarray) -> str:
    h, s, v = colorsys.rgb_to_hsv(*(float(c) for c in rgb))
    if s < 0.15 or v < 0.1:
        if v >= 0.8:
            return "white"
        if v <= 0.2:
            return "black"
        return "gray"
    degrees = h * 360.0
    for upper, name in _HUE_NAMES:
        if degrees < upper:
            return name
    return "red"


class StubTagger:
    """Rule-based stand-in for a captioning tagger.

    Emits a lighting tag from mean luminance, a color tag from the mean color,
    and always "street".
    """

    name = "stub"

    def __call__(self, image: LabeledImage) -> TagSet:
        px = image.raster.pixels.astype(np.float64)
        mean_rgb = px.reshape(3, -1).mean(axis=1)
        luminance = 0.299 * mean_rgb[0] + 0.587 * mean_rgb[1] + 0.114 * mean_rgb[2]
        lighting = "bright" if luminance >= 0.5 else "dim"
        return TagSet([lighting, _color_name(mean_rgb), "street"])


TAGGERS = {"stub": StubTagger}


def extract_tags(image: LabeledImage, tagger: Tagger) -> TagSet:
    return TagSet(tagger(image))


def augment_tags(source: Iterable[str], domain: Iterable[str]) -> TagSet:
    """Union of source and domain tags; source order first, then unseen domain tags."""
    return TagSet(source) | TagSet(domain)


# -- decoding ----------------------------------------------------------------

KEYWORD_BUCKETS: dict[str, frozenset[str]] = {
    "style": frozenset(
        {"cityscapes", "urban", "suburban", "rural", "realistic", "cinematic", "vintage", "dashcam"}
    ),
    "place": frozenset(
        {"street", "road", "highway", "city", "intersection", "alley", "bridge", "tunnel", "crossroad", "avenue"}
    ),
    "lighting": frozenset(
        {
            "dark", "bright", "dim", "sunny", "clear", "foggy", "misty", "hazy", "rainy",
            "wet", "snowy", "cloudy", "overcast", "stormy",
        }
    ),
    "time": frozenset(
        {"night", "day", "daytime", "dusk", "dawn", "evening", "morning", "sunset", "sunrise", "noon", "twilight"}
    ),
}


def decode_prompt(tags: Sequence[str]) -> GlobalPrompt:
    """Template decoder: ``a {style} photo of a {lighting} {place} during {time}``.

    Tags are sorted into buckets by a fixed keyword map. An empty bucket drops
    its slot (no style gives "a photo", no place gives "scene", no time drops
    the "during" clause). Tags in no bucket follow as a comma list.

    >>> decode_prompt(TagSet(["cityscapes", "street", "night", "dark"])).text
    'a cityscapes photo of a dark street during night'
    """
    tags = TagSet(tags)
    if not tags:
        raise ValidationError("cannot decode an empty tag set")
    buckets: dict[str, list[str]] = {name: [] for name in KEYWORD_BUCKETS}
    rest = []
    for tag in tags:
        for name, words in KEYWORD_BUCKETS.items():
            if tag in words:
                buckets[name].append(tag)
                break
        else:
            rest.append(tag)

    head = f"a {' '.join(buckets['style'])} photo" if buckets["style"] else "a photo"
    subject = " ".join(buckets["lighting"] + (buckets["place"] or ["scene"]))
    text = f"{head} of a {subject}"
    if buckets["time"]:
        text += f" during {' and '.join(buckets['time'])}"
    if rest:
        text += ", " + ", ".join(rest)
    return GlobalPrompt(text, tags)


# -- object-level prompts ----------------------------------------------------

INSTANCE_TEMPLATE = "A {object} is {action} in a {weather} {scene} during {time}."


def gen_instance_prompt(sets: DescriptorSets, category: str, rng_seed: int) -> InstancePrompt:
    allowed = sets.objects_for(category)
    if not allowed:
        raise ValidationError(f"no object descriptor registered as consistent with category {category!r}")
    rng = stream(rng_seed)
    picks = {
        "object": allowed[int(rng.integers(len(allowed)))],
        "action": sets.actions[int(rng.integers(len(sets.actions)))],
        "weather": sets.weather[int(rng.integers(len(sets.weather)))],
        "scene": sets.scenes[int(rng.integers(len(sets.scenes)))],
        "time": sets.times[int(rng.integers(len(sets.times)))],
    }
    return InstancePrompt(INSTANCE_TEMPLATE.format(**picks), category=category, **picks)


_DEFAULT_CONSISTENCY: Mapping[str, Sequence[str]] = {
    "car": ("black car", "white car", "yellow taxi", "red sedan", "silver hatchback"),
    "person": ("person", "pedestrian in a raincoat", "woman with an umbrella", "man in a dark coat"),
    "bus": ("red bus", "city bus", "double-decker bus"),
    "truck": ("delivery truck", "white van", "dump truck"),
    "bike": ("bicycle", "parked bicycle"),
    "motor": ("motorcycle", "scooter"),
    "rider": ("cyclist", "motorcyclist with a helmet"),
}


def default_descriptor_sets() -> DescriptorSets:
    """Descriptor pools covering the toy categories and the seven street-scene classes."""
    objects = [o for group in _DEFAULT_CONSISTENCY.values() for o in group]
    return DescriptorSets(
        objects=objects,
        actions=["parked", "moving", "waiting", "turning", "crossing"],
        weather=["foggy", "rainy", "snowy", "sunny"],
        scenes=["street", "road", "city", "highway"],
        times=["the night", "the day", "dusk", "dawn"],
        consistency={k: list(v) for k, v in _DEFAULT_CONSISTENCY.items()},
    )
