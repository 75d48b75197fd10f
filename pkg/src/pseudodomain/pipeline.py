"""End-to-end orchestration: synth -> generate -> filter -> train-sim -> eval -> mmd.

Every step reads and writes files under ``cfg.out``::

    source.json                  toy source domain
    generated/<domain>.json      pseudo-domains, annotations copied from source
    generated/manifest.json      prompts and seeds for every generated image
    pseudo_source.json           source regenerated in its own style
    filtered/<domain>.json       pseudo-domains after object filtering
    filter_report.csv            one row per source box
    train_sim.csv                one row per CSN harness step
    eval.json, eval.csv          detection metrics
    mmd_<a>__<b>.csv             domain distance

Randomness is derived from (seed, item id) and files are written in canonical
form, so output bytes do not depend on ``cfg.workers``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from .config import PipelineConfig
from .csn import cml_loss, finite_diff_check, toy_backbone_forward
from .dataset import (
    BoundingBox,
    DomainDataset,
    load_dataset,
    merge_datasets,
    save_dataset,
    synth_toy_dataset,
)
from .errors import ValidationError
from .filtering import (
    apply_filter_to_domains,
    box_similarities,
    build_pseudo_source,
    embed_region,
    get_embedder,
    retain_mask,
)
from .generation import GeneratorConfig, generate_pseudo_domain_with_manifest, get_generator
from .metrics import Detection, EvalReport, dump_detections, evaluate, load_detections, mmd2
from .rng import derive_seed, keyed_stream

__all__ = [
    "cmd_synth",
    "cmd_generate",
    "cmd_filter",
    "cmd_train_sim",
    "cmd_eval",
    "cmd_mmd",
    "run_all",
    "simulate_detections",
    "resolve_domain_path",
]

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def _pmap(fn: Callable[[T], R], items: Sequence[T], workers: int) -> list[R]:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _write_csv(path: Path, rows: Iterable[Sequence[object]]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def _write_json(path: Path, doc: object) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _generated_dir(cfg: PipelineConfig) -> Path:
    return cfg.out / "generated"


def _filtered_dir(cfg: PipelineConfig) -> Path:
    return cfg.out / "filtered"


def cmd_synth(cfg: PipelineConfig) -> Path:
    ds = synth_toy_dataset(
        cfg.seed,
        cfg.n_images,
        cfg.width,
        cfg.height,
        cfg.boxes_per_image,
        cfg.categories,
        domain=cfg.source_domain,
    )
    path = cfg.source_path
    path.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, path)
    log.info("wrote %s (%d images)", path, len(ds))
    return path


def cmd_generate(cfg: PipelineConfig) -> list[Path]:
    source = load_dataset(cfg.source_path)
    generator = get_generator(cfg.generator)
    gen_cfg = GeneratorConfig(cfg.generator, cfg.seed)
    out_dir = _generated_dir(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(spec):
        return generate_pseudo_domain_with_manifest(
            source, spec, cfg.descriptors, generator, gen_cfg, workers=cfg.worker_count
        )

    results = _pmap(one, cfg.domains, cfg.worker_count)
    paths = []
    manifest = {"schema_version": 1, "seed": cfg.seed, "generator": cfg.generator, "domains": {}}
    for spec, (ds, records) in zip(cfg.domains, results):
        path = out_dir / f"{spec.name}.json"
        save_dataset(ds, path)
        paths.append(path)
        manifest["domains"][spec.name] = {
            "style": {
                "tags": list(spec.domain_tags),
                "gain": list(spec.gain),
                "bias": spec.bias,
                "gamma": spec.gamma,
                "fog_alpha": spec.fog_alpha,
                "noise_sigma": spec.noise_sigma,
            },
            "images": records,
        }
    _write_json(out_dir / "manifest.json", manifest)
    return paths


def cmd_filter(cfg: PipelineConfig) -> list[Path]:
    source = load_dataset(cfg.source_path)
    generator = get_generator(cfg.generator)
    embedder = get_embedder(cfg.embedder)
    pseudo_source = build_pseudo_source(
        source, cfg.descriptors, generator, GeneratorConfig(cfg.generator, cfg.seed), workers=cfg.worker_count
    )
    save_dataset(pseudo_source, cfg.out / "pseudo_source.json")

    pseudo_by_id = pseudo_source.by_id()
    sims = _pmap(
        lambda img: box_similarities(img, pseudo_by_id[img.id], cfg.filter.gamma, embedder),
        source.images,
        cfg.worker_count,
    )
    rows: list[list[object]] = [["schema_version", "image_id", "box_index", "similarity", "retained", "mode"]]
    retained = {}
    for img, s in zip(source.images, sims):
        keep = retain_mask(s, cfg.filter.tau, cfg.filter.mode)
        retained[img.id] = [a for a, k in zip(img.annotations, keep) if k]
        for k, (value, kept) in enumerate(zip(s, keep)):
            rows.append([1, img.id, k, repr(float(value)), int(kept), cfg.filter.mode])

    generated = [load_dataset(_generated_dir(cfg) / f"{spec.name}.json") for spec in cfg.domains]
    filtered = apply_filter_to_domains(generated, retained)
    out_dir = _filtered_dir(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for ds in filtered:
        path = out_dir / f"{ds.domain}.json"
        save_dataset(ds, path)
        paths.append(path)
    _write_csv(cfg.out / "filter_report.csv", rows)
    return paths


def _grad_check(features: np.ndarray, seed: int) -> float:
    fa, fb = features[0], features[1]
    if cml_loss(fa, fb).loss <= 1e-6:
        rng = keyed_stream(seed, "gradcheck")
        fa, fb = rng.standard_normal((2, 3, 3, 3))
    return finite_diff_check(fa, fb, 1e-5)


def cmd_train_sim(cfg: PipelineConfig) -> Path:
    """Run the CSN harness on seeded batches of source + filtered pseudo-domains."""
    source = load_dataset(cfg.source_path)
    pseudo = [load_dataset(_filtered_dir(cfg) / f"{spec.name}.json") for spec in cfg.domains]
    merged = merge_datasets([source, *pseudo])
    if len(merged) < cfg.batch_size:
        raise ValidationError(f"train.batch_size {cfg.batch_size} exceeds merged dataset size {len(merged)}")
    weights_seed = derive_seed(cfg.seed, "weights")
    rows: list[list[object]] = [
        ["schema_version", "step", "batch", "active_mask", "pair_losses", "total_cml", "grad_check_max_rel_err"]
    ]
    for step in range(cfg.steps):
        idx = keyed_stream(cfg.seed, "batch", step).choice(len(merged), cfg.batch_size, replace=False)
        batch = [merged.images[int(i)] for i in idx]
        out = toy_backbone_forward(
            [img.raster.pixels for img in batch], weights_seed, cfg.csn, derive_seed(cfg.seed, "pairing", step)
        )
        pair_losses = ";".join(
            f"L{layer}:{a}-{b}={loss!r}"
            for layer, losses in sorted(out.losses.items())
            for (a, b), loss in zip(out.pairs[layer], losses)
        )
        total = out.total_cml
        grad = repr(_grad_check(out.features[-1], cfg.seed)) if step == 0 else ""
        rows.append(
            [
                1,
                step,
                " ".join(img.id for img in batch),
                "".join("1" if m else "0" for m in out.active),
                pair_losses,
                "" if total is None else repr(total),
                grad,
            ]
        )
    path = cfg.out / "train_sim.csv"
    _write_csv(path, rows)
    return path


def resolve_domain_path(cfg: PipelineConfig, name: str) -> Path:
    """Map a domain name (or a dataset path) to the most processed file available."""
    as_path = Path(name)
    if as_path.suffix == ".json" and as_path.exists():
        return as_path
    if name in ("source", cfg.source_domain):
        return cfg.source_path
    if name in ("pseudo-source", "pseudo_source"):
        return cfg.out / "pseudo_source.json"
    for folder in (_filtered_dir(cfg), _generated_dir(cfg)):
        candidate = folder / f"{name}.json"
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"no dataset for domain {name!r} under {cfg.out}")


def ground_truth_datasets(cfg: PipelineConfig) -> list[DomainDataset]:
    return [load_dataset(cfg.source_path)] + [load_dataset(resolve_domain_path(cfg, s.name)) for s in cfg.domains]


def cmd_eval(cfg: PipelineConfig, detections_path: str | Path) -> EvalReport:
    detections = load_detections(detections_path)
    report = evaluate(ground_truth_datasets(cfg), detections, cfg.iou_threshold, cfg.source_domain)
    _write_json(cfg.out / "eval.json", report.to_json())
    _write_csv(cfg.out / "eval.csv", report.csv_rows())
    return report


def _embed_dataset(ds: DomainDataset, embedder) -> np.ndarray:
    vecs = [embed_region(img, ann.box, embedder) for img in ds.images for ann in img.annotations]
    if not vecs:
        raise ValidationError(f"dataset {ds.domain!r} has no annotated regions to embed")
    return np.stack(vecs)


def cmd_mmd(cfg: PipelineConfig, domain_a: str, domain_b: str) -> float:
    embedder = get_embedder(cfg.embedder)
    a = load_dataset(resolve_domain_path(cfg, domain_a))
    b = load_dataset(resolve_domain_path(cfg, domain_b))
    ea, eb = _embed_dataset(a, embedder), _embed_dataset(b, embedder)
    value = mmd2(ea, eb, cfg.mmd_gamma)
    safe = lambda s: Path(s).stem if s.endswith(".json") else s  # noqa: E731
    _write_csv(
        cfg.out / f"mmd_{safe(domain_a)}__{safe(domain_b)}.csv",
        [
            ["schema_version", "domain_a", "domain_b", "n_a", "n_b", "gamma", "embedder", "mmd2"],
            [1, a.domain, b.domain, len(ea), len(eb), repr(cfg.mmd_gamma), cfg.embedder, repr(value)],
        ],
    )
    return value


def simulate_detections(datasets: Sequence[DomainDataset], seed: int, miss_rate: float = 0.15,
                        jitter: float = 2.0, false_positives: float = 0.3) -> list[Detection]:
    """Deterministic noisy detector: jittered true boxes, misses and spurious boxes.

    Image ids are qualified as ``"<domain>/<id>"`` to match :func:`evaluate`.
    """
    out = []
    for ds in datasets:
        for img in ds.images:
            rng = keyed_stream(seed, "detector", ds.domain, img.id)
            w, h = img.raster.width, img.raster.height
            qid = f"{ds.domain}/{img.id}"
            for ann in img.annotations:
                if rng.random() < miss_rate:
                    continue
                d = rng.uniform(-jitter, jitter, size=4)
                b = ann.box
                x0 = min(max(b.x_min + d[0], 0.0), w - 1.0)
                y0 = min(max(b.y_min + d[1], 0.0), h - 1.0)
                x1 = min(max(b.x_max + d[2], x0 + 1.0), float(w))
                y1 = min(max(b.y_max + d[3], y0 + 1.0), float(h))
                conf = float(np.clip(rng.normal(0.75, 0.15), 0.0, 1.0))
                out.append(Detection(BoundingBox(x0, y0, x1, y1), ann.category, conf, qid))
            if ds.categories and rng.random() < false_positives:
                x0, y0 = rng.uniform(0, w - 8), rng.uniform(0, h - 8)
                cat = ds.categories[int(rng.integers(len(ds.categories)))]
                conf = float(np.clip(rng.normal(0.4, 0.15), 0.0, 1.0))
                out.append(Detection(BoundingBox(x0, y0, x0 + 8.0, y0 + 8.0), cat, conf, qid))
    return out


def run_all(cfg: PipelineConfig, detector_seed: int | None = None) -> dict[str, object]:
    """Run every stage with a simulated detector; returns the key scalars."""
    cmd_synth(cfg)
    cmd_generate(cfg)
    cmd_filter(cfg)
    cmd_train_sim(cfg)
    det_path = cfg.out / "detections.jsonl"
    seed = cfg.seed if detector_seed is None else detector_seed
    dump_detections(simulate_detections(ground_truth_datasets(cfg), seed), det_path)
    report = cmd_eval(cfg, det_path)
    distances = {spec.name: cmd_mmd(cfg, "source", spec.name) for spec in cfg.domains}
    return {"map": report.map, "mpc": report.mpc, "mmd": distances}
