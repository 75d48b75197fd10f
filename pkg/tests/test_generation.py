import numpy as np
import pytest

from pseudodomain.dataset import (
    BoundingBox,
    ImageRaster,
    LabeledImage,
    annotation_multiset,
    dumps_dataset,
    synth_toy_dataset,
)
from pseudodomain.errors import ContractViolation, GenerationError, ValidationError
from pseudodomain.generation import (
    TARGET_DOMAINS,
    GeneratorConfig,
    IdentityGenerator,
    InstanceCondition,
    ProceduralGenerator,
    StyleDomainSpec,
    generate_image,
    generate_pseudo_domain,
    generate_pseudo_domain_with_manifest,
    get_generator,
    plan_image,
    procedural_stylize,
)
from pseudodomain.prompts import GlobalPrompt, TagSet, default_descriptor_sets, gen_instance_prompt

SETS = default_descriptor_sets()


@pytest.fixture(scope="module")
def source():
    return synth_toy_dataset(5, 4, 48, 40, (2, 3), ["car", "person"])


def conditions_for(img, seed=0):
    return [
        InstanceCondition(gen_instance_prompt(SETS, a.category, seed + k), a.box)
        for k, a in enumerate(img.annotations)
    ]


def test_identity_generator_keeps_raster(source):
    img = source.images[0]
    out = generate_image(
        img, GlobalPrompt("x", TagSet(["x"])), conditions_for(img), IdentityGenerator(),
        GeneratorConfig("identity"), domain="night-sunny",
    )
    assert out.raster == img.raster
    assert out.annotations == img.annotations
    assert out.domain == "night-sunny" and out.id == img.id


@pytest.mark.parametrize("seed", [0, 1, 99])
def test_procedural_preserves_annotations(source, seed):
    img = source.images[1]
    cfg = GeneratorConfig("procedural", seed, {"style": TARGET_DOMAINS["dusk-rainy"]})
    out = generate_image(img, GlobalPrompt("x", TagSet(["x"])), conditions_for(img), ProceduralGenerator(), cfg)
    assert out.annotations == img.annotations
    assert (out.raster.width, out.raster.height) == (img.raster.width, img.raster.height)


def test_night_darkens_mid_gray():
    gray = LabeledImage("g", ImageRaster.filled(16, 16, (0.5, 0.5, 0.5)), [], "d")
    cfg = GeneratorConfig("procedural", 3, {"style": TARGET_DOMAINS["night-sunny"]})
    out = generate_image(gray, GlobalPrompt("x", TagSet(["x"])), [], ProceduralGenerator(), cfg)
    # analytically (0.35*0.5)^1.2 ~ 0.123 before noise, far below 0.5
    assert out.raster.pixels.mean() < gray.raster.pixels.mean()
    assert out.raster.pixels.mean() < 0.2


def test_identity_parameters_are_exact():
    px = np.random.default_rng(1).random((3, 9, 7)).astype(np.float32)
    spec = StyleDomainSpec("id")
    assert procedural_stylize(ImageRaster(px), [], spec, [], 5) == ImageRaster(px)


def test_full_fog_is_half_gray():
    px = np.random.default_rng(2).random((3, 9, 7))
    spec = StyleDomainSpec("fog", gain=(0.3, 2.0, 1.0), bias=0.1, gamma=2.0, fog_alpha=1.0)
    out = procedural_stylize(ImageRaster(px), [], spec, [], 5)
    assert np.all(out.pixels == np.float32(0.5))


def test_prompt_changes_only_box_region():
    px = np.random.default_rng(3).random((3, 20, 20))
    box = BoundingBox(4, 5, 12, 15)
    spec = TARGET_DOMAINS["night-rainy"]
    a = procedural_stylize(ImageRaster(px), [box], spec, ["A black car is parked in a foggy street during dusk."], 9)
    b = procedural_stylize(ImageRaster(px), [box], spec, ["A white car is parked in a foggy street during dusk."], 9)
    inside = np.zeros((20, 20), bool)
    inside[5:15, 4:12] = True
    diff = np.any(a.pixels != b.pixels, axis=0)
    assert diff[inside].any()
    assert not diff[~inside].any()


def test_stylize_rejects_count_mismatch():
    with pytest.raises(ValidationError):
        procedural_stylize(ImageRaster.filled(4, 4, (0, 0, 0)), [BoundingBox(0, 0, 1, 1)], StyleDomainSpec("x"), [], 0)


@pytest.mark.parametrize(
    "kwargs",
    [dict(gain=(0.0, 1.0, 1.0)), dict(gamma=0.0), dict(fog_alpha=1.5), dict(noise_sigma=-0.1)],
)
def test_spec_validation(kwargs):
    with pytest.raises(ValidationError):
        StyleDomainSpec("bad", **kwargs)


class ShrinkingGenerator:
    name = "shrink"
    thread_safe = True

    def generate(self, source, global_prompt, conditions, cfg):
        return ImageRaster(source.raster.pixels[:, :-1, :])


class FailingGenerator:
    name = "fail"
    thread_safe = True

    def generate(self, source, global_prompt, conditions, cfg):
        raise RuntimeError("boom")


def test_dimension_mismatch_is_contract_violation(source):
    img = source.images[0]
    with pytest.raises(ContractViolation, match="shrink"):
        generate_image(img, GlobalPrompt("x", TagSet(["x"])), conditions_for(img), ShrinkingGenerator(),
                       GeneratorConfig("shrink"))


def test_generator_failure_carries_ids(source):
    img = source.images[2]
    with pytest.raises(GenerationError) as exc:
        generate_image(img, GlobalPrompt("x", TagSet(["x"])), conditions_for(img), FailingGenerator(),
                       GeneratorConfig("fail"))
    assert exc.value.generator_id == "fail" and exc.value.image_id == img.id


def test_condition_count_must_match(source):
    img = source.images[0]
    with pytest.raises(ValidationError):
        generate_image(img, GlobalPrompt("x", TagSet(["x"])), conditions_for(img)[:-1], IdentityGenerator(),
                       GeneratorConfig("identity"))


def test_pseudo_domain_cardinality(source):
    ds = generate_pseudo_domain(source, TARGET_DOMAINS["daytime-foggy"], SETS, ProceduralGenerator(),
                                GeneratorConfig("procedural", 1))
    assert ds.domain == "daytime-foggy"
    assert len(ds) == len(source)
    for a, b in zip(source, ds):
        assert annotation_multiset(a.annotations) == annotation_multiset(b.annotations)
        assert a.raster != b.raster


def test_pseudo_domain_deterministic_and_thread_invariant(source):
    args = (source, TARGET_DOMAINS["night-rainy"], SETS, ProceduralGenerator(), GeneratorConfig("procedural", 4))
    serial = dumps_dataset(generate_pseudo_domain(*args))
    again = dumps_dataset(generate_pseudo_domain(*args))
    threaded = dumps_dataset(generate_pseudo_domain(*args, workers=4))
    assert serial == again == threaded


def test_four_target_domains(source):
    names = ["night-sunny", "night-rainy", "daytime-foggy", "dusk-rainy"]
    assert sorted(TARGET_DOMAINS) == sorted(names)
    outs = [generate_pseudo_domain(source, TARGET_DOMAINS[n], SETS, ProceduralGenerator(),
                                   GeneratorConfig("procedural", 0)) for n in names]
    assert [d.domain for d in outs] == names


def test_manifest_regenerates_image_in_isolation(source):
    spec = TARGET_DOMAINS["dusk-rainy"]
    ds, records = generate_pseudo_domain_with_manifest(
        source, spec, SETS, ProceduralGenerator(), GeneratorConfig("procedural", 8)
    )
    rec = records[2]
    img = source.by_id()[rec["image_id"]]
    conds = [
        InstanceCondition(gen_instance_prompt(SETS, inst["category"], inst["seed"]), img.annotations[k].box)
        for k, inst in enumerate(rec["instances"])
    ]
    assert [c.prompt.text for c in conds] == [inst["prompt"] for inst in rec["instances"]]
    again = generate_image(img, GlobalPrompt(rec["global_prompt"], TagSet(rec["tags"])), conds,
                           ProceduralGenerator(), GeneratorConfig("procedural", rec["seed"], {"style": spec}), spec.name)
    assert again == ds.by_id()[img.id]


def test_plan_prompt_includes_domain_tags(source):
    plan = plan_image(source.images[0], TARGET_DOMAINS["night-sunny"], SETS, 0)
    for tag in ("night", "dark", "clear"):
        assert tag in plan.global_prompt.text.replace(",", " ").split()


def test_registry():
    assert isinstance(get_generator("identity"), IdentityGenerator)
    with pytest.raises(ValidationError):
        get_generator("diffusion")
