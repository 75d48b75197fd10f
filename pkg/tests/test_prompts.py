from collections import Counter

import pytest
from hypothesis import given, strategies as st

from pseudodomain.dataset import ImageRaster, LabeledImage
from pseudodomain.errors import ValidationError
from pseudodomain.prompts import (
    KEYWORD_BUCKETS,
    DescriptorSets,
    StubTagger,
    TagSet,
    augment_tags,
    decode_prompt,
    default_descriptor_sets,
    extract_tags,
    gen_instance_prompt,
)

tag_text = st.text(alphabet="abcdefghij", min_size=1, max_size=6)
tag_lists = st.lists(tag_text, max_size=6)


def constant_image(color, size=8):
    return LabeledImage("c", ImageRaster.filled(size, size, color), [], "d")


def test_tagset_dedups_and_lowercases():
    assert list(TagSet(["Street", "street", "NIGHT"])) == ["street", "night"]
    with pytest.raises(ValidationError):
        TagSet(["ok", "  "])


def test_stub_tagger_white():
    # luminance 1.0 -> bright; zero saturation at full value -> white
    assert list(extract_tags(constant_image((1, 1, 1)), StubTagger())) == ["bright", "white", "street"]


@pytest.mark.parametrize(
    "color, expected",
    [
        ((0.0, 0.0, 0.0), ["dim", "black", "street"]),
        ((0.9, 0.1, 0.1), ["dim", "red", "street"]),  # luminance 0.339
        ((0.1, 0.9, 0.1), ["bright", "green", "street"]),  # luminance 0.569
        ((0.1, 0.1, 0.9), ["dim", "blue", "street"]),
    ],
)
def test_stub_tagger_rules(color, expected):
    assert list(extract_tags(constant_image(color), StubTagger())) == expected


def test_tagger_deterministic():
    img = constant_image((0.3, 0.6, 0.2))
    assert extract_tags(img, StubTagger()) == extract_tags(img, StubTagger())


def test_source_tags_are_legal():
    assert list(TagSet(["cityscapes", "street"])) == ["cityscapes", "street"]


def test_augment_example():
    out = augment_tags(TagSet(["cityscapes", "street"]), TagSet(["night", "dark"]))
    assert list(out) == ["cityscapes", "street", "night", "dark"]


def test_augment_identity_and_idempotent():
    t = TagSet(["a", "b"])
    assert augment_tags(t, TagSet()) == t
    assert list(augment_tags(TagSet(["a"]), TagSet(["a", "b"]))) == ["a", "b"]


@given(tag_lists, tag_lists, tag_lists)
def test_augment_union_laws(a, b, c):
    a, b, c = TagSet(a), TagSet(b), TagSet(c)
    assert set(augment_tags(a, b)) == set(a) | set(b)
    assert set(augment_tags(a, b)) == set(augment_tags(b, a))
    assert augment_tags(augment_tags(a, b), b) == augment_tags(a, b)
    assert set(augment_tags(augment_tags(a, b), c)) == set(augment_tags(a, augment_tags(b, c)))


def test_decode_night_street_example():
    assert decode_prompt(TagSet(["cityscapes", "street", "night", "dark"])).text == (
        "a cityscapes photo of a dark street during night"
    )


def test_decode_fallbacks():
    assert decode_prompt(TagSet(["street"])).text == "a photo of a street"
    assert decode_prompt(TagSet(["night"])).text == "a photo of a scene during night"
    assert decode_prompt(TagSet(["street", "white"])).text == "a photo of a street, white"


def test_decode_empty():
    with pytest.raises(ValidationError):
        decode_prompt(TagSet())


def test_decode_deterministic():
    tags = TagSet(["bright", "blue", "street", "dusk", "rainy"])
    assert decode_prompt(tags) == decode_prompt(tags)


vocab = sorted(set().union(*KEYWORD_BUCKETS.values())) + ["white", "taxi", "lamp"]


@given(st.lists(st.sampled_from(vocab), min_size=1, max_size=6), st.lists(st.sampled_from(vocab), max_size=4))
def test_decode_contains_every_injected_tag(source, domain):
    tags = augment_tags(TagSet(source), TagSet(domain))
    text = decode_prompt(tags).text
    words = set(text.replace(",", " ").split())
    for tag in domain:
        assert tag in words


def test_instance_prompt_template():
    sets = DescriptorSets(
        ["black car"], ["parked"], ["foggy"], ["street"], ["the night"], {"car": ["black car"]}
    )
    p = gen_instance_prompt(sets, "car", 0)
    assert p.text == "A black car is parked in a foggy street during the night."


def test_instance_prompt_deterministic():
    sets = default_descriptor_sets()
    assert gen_instance_prompt(sets, "car", 123) == gen_instance_prompt(sets, "car", 123)


def test_instance_prompt_unknown_category():
    with pytest.raises(ValidationError, match="tram"):
        gen_instance_prompt(default_descriptor_sets(), "tram", 1)


def test_weather_frequencies_uniform():
    sets = default_descriptor_sets()
    assert len(sets.weather) == 4
    counts = Counter(gen_instance_prompt(sets, "car", seed).weather for seed in range(10_000))
    for w in sets.weather:
        assert 0.23 <= counts[w] / 10_000 <= 0.27


@given(st.integers(0, 2**63), st.sampled_from(["car", "person", "bus", "truck", "bike", "motor", "rider"]))
def test_object_always_consistent(seed, category):
    sets = default_descriptor_sets()
    p = gen_instance_prompt(sets, category, seed)
    assert p.object in sets.consistency[category]
    assert p.category == category


def test_descriptor_sets_reject_empty():
    with pytest.raises(ValidationError, match="weather"):
        DescriptorSets(["a"], ["b"], [], ["c"], ["d"])
