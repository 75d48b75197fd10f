"""Pipeline configuration: a sectioned key/value file read with :mod:`configparser`.

Grammar (every section and key is optional; defaults in brackets)::

    [run]
    seed = 0                       ; overridden by $GODIFF_SEED, then by --seed
    out = out                      ; output directory
    source = source.json           ; relative paths resolve against `out`
    generator = procedural         ; identity | procedural
    embedder = stub
    workers = 1                    ; 0 means one worker per CPU
    domains = night-sunny, night-rainy, daytime-foggy, dusk-rainy

    [synth]
    n_images = 16
    width = 64
    height = 64
    boxes_min = 2
    boxes_max = 3
    categories = car, person
    domain = daytime-sunny

    [domain.NAME]                  ; overrides or defines a style domain
    tags = night, dark
    gain = 0.35, 0.35, 0.4         ; one value or three (R, G, B)
    bias = 0
    gamma = 1.2
    fog_alpha = 0
    noise_sigma = 0.01

    [descriptors]                  ; comma-separated lists
    objects = ...
    actions = ...
    weather = ...
    scenes = ...
    times = ...

    [consistency]                  ; category = allowed object descriptors
    car = black car, yellow taxi

    [filter]
    gamma = 0.5
    tau = 0.8
    mode = intent                  ; intent | paper-literal

    [csn]
    probability = 0.1
    max_active = 2
    epsilon = 1e-5

    [train]
    batch_size = 4
    steps = 4

    [eval]
    iou_threshold = 0.5
    source_domain =                ; defaults to synth.domain

    [mmd]
    gamma = 0.5
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .csn import CsnPolicy
from .errors import ConfigError, ValidationError
from .filtering import EMBEDDERS, FilterConfig
from .generation import GENERATORS, TARGET_DOMAINS, StyleDomainSpec
from .prompts import DescriptorSets, TagSet, default_descriptor_sets

__all__ = ["PipelineConfig", "load_config", "SEED_ENV"]

SEED_ENV = "GODIFF_SEED"


def _split(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


@dataclass
class PipelineConfig:
    seed: int = 0
    out: Path = Path("out")
    source: Path = Path("source.json")
    generator: str = "procedural"
    embedder: str = "stub"
    workers: int = 1
    domains: list[StyleDomainSpec] = field(default_factory=lambda: list(TARGET_DOMAINS.values()))
    n_images: int = 16
    width: int = 64
    height: int = 64
    boxes_per_image: tuple[int, int] = (2, 3)
    categories: list[str] = field(default_factory=lambda: ["car", "person"])
    source_domain: str = "daytime-sunny"
    descriptors: DescriptorSets = field(default_factory=default_descriptor_sets)
    filter: FilterConfig = field(default_factory=FilterConfig)
    csn: CsnPolicy = field(default_factory=CsnPolicy)
    batch_size: int = 4
    steps: int = 4
    iou_threshold: float = 0.5
    mmd_gamma: float = 0.5

    @property
    def source_path(self) -> Path:
        return self.source if self.source.is_absolute() else self.out / self.source

    @property
    def worker_count(self) -> int:
        return self.workers if self.workers > 0 else (os.cpu_count() or 1)

    def validate(self) -> PipelineConfig:
        problems = []
        if self.generator not in GENERATORS:
            problems.append(f"run.generator: unknown generator {self.generator!r}")
        if self.embedder not in EMBEDDERS:
            problems.append(f"run.embedder: unknown embedder {self.embedder!r}")
        if self.workers < 0:
            problems.append(f"run.workers: must be >= 0, got {self.workers}")
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            problems.append("run.domains: duplicate domain names")
        if self.source_domain in names:
            problems.append(f"run.domains: {self.source_domain!r} is the source domain")
        if self.width < 16 or self.height < 16:
            problems.append(f"synth.width/height: must be >= 16, got {self.width}x{self.height}")
        if self.n_images < 0:
            problems.append(f"synth.n_images: must be >= 0, got {self.n_images}")
        lo, hi = self.boxes_per_image
        if lo < 1 or hi < lo:
            problems.append(f"synth.boxes_min/boxes_max: need 1 <= min <= max, got {lo}..{hi}")
        missing = [c for c in self.categories if not self.descriptors.objects_for(c)]
        if missing:
            problems.append(f"consistency: no object descriptors for categories {missing}")
        if self.batch_size < 2 or self.batch_size % 2:
            problems.append(f"train.batch_size: must be even and >= 2, got {self.batch_size}")
        if self.steps < 0:
            problems.append(f"train.steps: must be >= 0, got {self.steps}")
        if not 0 < self.iou_threshold <= 1:
            problems.append(f"eval.iou_threshold: must be in (0, 1], got {self.iou_threshold}")
        if not self.mmd_gamma > 0:
            problems.append(f"mmd.gamma: must be > 0, got {self.mmd_gamma}")
        if problems:
            raise ConfigError(problems)
        return self


def _get(parser: configparser.ConfigParser, section: str, key: str, kind, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        if kind is bool:
            return parser.getboolean(section, key)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {raw!r} as {kind.__name__}") from None


def _domain_spec(parser: configparser.ConfigParser, name: str) -> StyleDomainSpec:
    section = f"domain.{name}"
    base = TARGET_DOMAINS.get(name)
    if base is None and not parser.has_section(section):
        raise ConfigError(f"run.domains: unknown style domain {name!r} and no [{section}] section")
    base = base or StyleDomainSpec(name)
    if not parser.has_section(section):
        return base
    try:
        gain = tuple(float(g) for g in _split(parser.get(section, "gain"))) if parser.has_option(section, "gain") else base.gain
        return StyleDomainSpec(
            name,
            TagSet(_split(parser.get(section, "tags"))) if parser.has_option(section, "tags") else base.domain_tags,
            gain,
            _get(parser, section, "bias", float, base.bias),
            _get(parser, section, "gamma", float, base.gamma),
            _get(parser, section, "fog_alpha", float, base.fog_alpha),
            _get(parser, section, "noise_sigma", float, base.noise_sigma),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        problems = exc.problems if isinstance(exc, ValidationError) else [str(exc)]
        raise ConfigError([f"[{section}] {p}" for p in problems]) from None


def _descriptors(parser: configparser.ConfigParser) -> DescriptorSets:
    base = default_descriptor_sets()
    fields: dict[str, Any] = {}
    for name in ("objects", "actions", "weather", "scenes", "times"):
        fields[name] = _split(parser.get("descriptors", name)) if parser.has_option("descriptors", name) else getattr(base, name)
    consistency = dict(base.consistency)
    if parser.has_section("consistency"):
        for category, value in parser.items("consistency"):
            consistency[category] = _split(value)
    try:
        return DescriptorSets(consistency=consistency, **fields)
    except ValidationError as exc:
        raise ConfigError([f"descriptors: {p}" for p in exc.problems]) from None


def load_config(path: str | Path | None = None, **overrides: Any) -> PipelineConfig:
    """Read a config file (or defaults when ``path`` is None) and apply overrides.

    Precedence for the seed: keyword override, then ``$GODIFF_SEED``, then file.
    Overrides with value None are ignored.
    """
    # keys are case-sensitive: category names are data
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str  # type: ignore[assignment]
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None

    cfg = PipelineConfig()
    cfg.seed = _get(parser, "run", "seed", int, cfg.seed)
    cfg.out = Path(_get(parser, "run", "out", str, str(cfg.out)))
    cfg.source = Path(_get(parser, "run", "source", str, str(cfg.source)))
    cfg.generator = _get(parser, "run", "generator", str, cfg.generator)
    cfg.embedder = _get(parser, "run", "embedder", str, cfg.embedder)
    cfg.workers = _get(parser, "run", "workers", int, cfg.workers)
    if parser.has_option("run", "domains"):
        cfg.domains = [_domain_spec(parser, name) for name in _split(parser.get("run", "domains"))]
    else:
        cfg.domains = [_domain_spec(parser, name) for name in TARGET_DOMAINS]

    cfg.n_images = _get(parser, "synth", "n_images", int, cfg.n_images)
    cfg.width = _get(parser, "synth", "width", int, cfg.width)
    cfg.height = _get(parser, "synth", "height", int, cfg.height)
    cfg.boxes_per_image = (
        _get(parser, "synth", "boxes_min", int, cfg.boxes_per_image[0]),
        _get(parser, "synth", "boxes_max", int, cfg.boxes_per_image[1]),
    )
    if parser.has_option("synth", "categories"):
        cfg.categories = _split(parser.get("synth", "categories"))
    cfg.source_domain = _get(parser, "synth", "domain", str, cfg.source_domain)
    cfg.descriptors = _descriptors(parser)

    try:
        cfg.filter = FilterConfig(
            _get(parser, "filter", "gamma", float, cfg.filter.gamma),
            _get(parser, "filter", "tau", float, cfg.filter.tau),
            _get(parser, "filter", "mode", str, cfg.filter.mode),
        )
        cfg.csn = CsnPolicy(
            _get(parser, "csn", "probability", float, cfg.csn.probability),
            _get(parser, "csn", "max_active", int, cfg.csn.max_active),
            _get(parser, "csn", "epsilon", float, cfg.csn.epsilon),
        )
    except ConfigError:
        raise
    except ValidationError as exc:
        raise ConfigError(exc.problems) from None
    cfg.batch_size = _get(parser, "train", "batch_size", int, cfg.batch_size)
    cfg.steps = _get(parser, "train", "steps", int, cfg.steps)
    cfg.iou_threshold = _get(parser, "eval", "iou_threshold", float, cfg.iou_threshold)
    src = _get(parser, "eval", "source_domain", str, "")
    if src and src != cfg.source_domain:
        raise ConfigError(f"eval.source_domain {src!r} differs from synth.domain {cfg.source_domain!r}")
    cfg.mmd_gamma = _get(parser, "mmd", "gamma", float, cfg.mmd_gamma)

    env_seed = os.environ.get(SEED_ENV)
    if env_seed:
        try:
            cfg.seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"${SEED_ENV}: cannot parse {env_seed!r} as int") from None

    filter_mode = overrides.pop("filter_mode", None)
    for key, value in overrides.items():
        if value is None:
            continue
        if not hasattr(cfg, key):
            raise ConfigError(f"unknown override {key!r}")
        setattr(cfg, key, Path(value) if key in ("out", "source") else value)
    if filter_mode is not None:
        try:
            cfg.filter = dataclasses.replace(cfg.filter, mode=filter_mode)
        except ValidationError as exc:
            raise ConfigError(exc.problems) from None
    return cfg.validate()
