import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pseudodomain.dataset import (
    Annotation,
    BoundingBox,
    ImageRaster,
    LabeledImage,
    dumps_dataset,
    synth_toy_dataset,
)
from pseudodomain.errors import ValidationError
from pseudodomain.filtering import (
    FilterConfig,
    StubEmbedder,
    apply_filter_to_domains,
    box_similarities,
    build_pseudo_source,
    embed_region,
    filter_boxes,
    rbf_similarity,
    retain_mask,
)
from pseudodomain.generation import (
    TARGET_DOMAINS,
    GeneratorConfig,
    IdentityGenerator,
    ProceduralGenerator,
    generate_pseudo_domain,
)
from pseudodomain.prompts import default_descriptor_sets

SETS = default_descriptor_sets()
vectors = arrays(np.float64, 6, elements=st.floats(-5, 5, allow_nan=False))


@pytest.fixture(scope="module")
def source():
    return synth_toy_dataset(21, 5, 48, 48, (2, 3), ["car", "person"])


def const(value, size=6):
    return LabeledImage("c", ImageRaster.filled(size, size, (value,) * 3), [], "d")


def test_embedding_deterministic(source):
    img = source.images[0]
    box = img.annotations[0].box
    e = StubEmbedder()
    np.testing.assert_array_equal(embed_region(img, box, e), embed_region(img, box, e))
    assert embed_region(img, box, e).shape == (18,)


def test_embedding_black_crop():
    v = embed_region(const(0.0), BoundingBox(1, 1, 5, 5), StubEmbedder())
    np.testing.assert_array_equal(v[:6], 0.0)
    np.testing.assert_array_equal(v[6:15].reshape(3, 3), [[1, 0, 0]] * 3)
    np.testing.assert_array_equal(v[15:], 0.0)


def test_embedding_brightness_only_moves_means():
    # both constants fall in histogram bin 0: only the mean entries may differ
    a = embed_region(const(0.1), BoundingBox(0, 0, 6, 6), StubEmbedder())
    b = embed_region(const(0.25), BoundingBox(0, 0, 6, 6), StubEmbedder())
    changed = np.flatnonzero(a != b)
    assert list(changed) == [0, 1, 2]


def test_embedding_degenerate_box():
    with pytest.raises(ValidationError):
        embed_region(const(0.5), BoundingBox(3, 3, 3, 4), StubEmbedder())


def test_rbf_worked_example():
    expected = float(mpmath.exp(-1))
    assert abs(rbf_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.5) - expected) < 1e-12


def test_rbf_dimension_mismatch():
    with pytest.raises(ValidationError):
        rbf_similarity(np.zeros(2), np.zeros(3), 1.0)


@given(vectors, st.floats(1e-3, 10))
def test_rbf_self_is_one(a, gamma):
    assert rbf_similarity(a, a, gamma) == 1.0


@given(vectors, vectors, st.floats(1e-3, 10))
def test_rbf_symmetric_and_bounded(a, b, gamma):
    s = rbf_similarity(a, b, gamma)
    assert s == rbf_similarity(b, a, gamma)
    assert 0.0 <= s <= 1.0


def test_rbf_decreasing_in_gamma():
    a, b = np.array([0.3, -0.1]), np.array([0.1, 0.2])
    values = [rbf_similarity(a, b, g) for g in (0.1, 0.5, 1.0, 2.0)]
    assert all(x > y for x, y in zip(values, values[1:]))


def test_worked_retention_example():
    s = [0.95, 0.60, 0.85]
    assert list(retain_mask(s, 0.8, "intent")) == [True, False, True]
    assert list(retain_mask(s, 0.8, "paper-literal")) == [False, True, False]


def test_ties_retained_in_both_modes():
    assert retain_mask([0.8], 0.8, "intent")[0]
    assert retain_mask([0.8], 0.8, "paper-literal")[0]


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.floats(0, 1.2), st.floats(0, 1.2))
def test_intent_monotone_in_tau(sims, t1, t2):
    lo, hi = sorted((t1, t2))
    assert np.all(retain_mask(sims, hi) <= retain_mask(sims, lo))
    assert retain_mask(sims, 0.0).all()
    assert not retain_mask(sims, 1.0001).any()


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.floats(0, 1))
def test_mode_duality(sims, tau):
    sims = [s for s in sims if s != tau]
    a = retain_mask(sims, tau, "intent")
    b = retain_mask(sims, tau, "paper-literal")
    assert np.all(a ^ b)


def test_filter_config_validation():
    with pytest.raises(ValidationError):
        FilterConfig(gamma=0.0)
    with pytest.raises(ValidationError):
        FilterConfig(tau=1.5)
    with pytest.raises(ValidationError):
        FilterConfig(mode="strict")
    FilterConfig(tau=1.5, mode="paper-literal")


def test_identity_pseudo_source_retains_all(source):
    ps = build_pseudo_source(source, SETS, IdentityGenerator(), GeneratorConfig("identity"))
    assert [img.raster for img in ps] == [img.raster for img in source]
    for img, pimg in zip(source, ps):
        np.testing.assert_array_equal(box_similarities(img, pimg, 0.5, StubEmbedder()), 1.0)
        assert filter_boxes(img, pimg, FilterConfig(tau=0.8), StubEmbedder()) == img.annotations


def test_procedural_pseudo_source_contract(source):
    cfg = GeneratorConfig("procedural", 2)
    ps = build_pseudo_source(source, SETS, ProceduralGenerator(), cfg)
    assert dumps_dataset(ps) == dumps_dataset(build_pseudo_source(source, SETS, ProceduralGenerator(), cfg))
    for img, pimg in zip(source, ps):
        assert pimg.annotations == img.annotations
        assert (pimg.raster.width, pimg.raster.height) == (img.raster.width, img.raster.height)


def test_filter_boxes_rejects_mismatched_images(source):
    a, b = source.images[0], source.images[1]
    with pytest.raises(ValidationError):
        filter_boxes(a, b, FilterConfig(), StubEmbedder())


def test_filter_is_ordered_subset(source):
    ps = build_pseudo_source(source, SETS, ProceduralGenerator(), GeneratorConfig("procedural", 2))
    for img, pimg in zip(source, ps):
        kept = filter_boxes(img, pimg, FilterConfig(), StubEmbedder())
        it = iter(img.annotations)
        assert all(any(k == a for a in it) for k in kept)


def test_apply_filter_broadcast(source):
    domains = [
        generate_pseudo_domain(source, TARGET_DOMAINS[n], SETS, ProceduralGenerator(), GeneratorConfig("procedural", 0))
        for n in ("night-sunny", "daytime-foggy")
    ]
    full = {img.id: img.annotations for img in source}
    assert apply_filter_to_domains(domains, full) == domains

    first = source.images[0]
    retained = dict(full)
    retained[first.id] = first.annotations[1:]
    retained[source.images[1].id] = []
    out = apply_filter_to_domains(domains, retained)
    for ds, orig in zip(out, domains):
        by_id = ds.by_id()
        assert len(ds) == len(orig)
        assert len(by_id[first.id].annotations) == len(first.annotations) - 1
        assert by_id[source.images[1].id].annotations == []
        assert all(a.raster is b.raster for a, b in zip(ds, orig))


def test_apply_filter_id_mismatch(source):
    ds = generate_pseudo_domain(source, TARGET_DOMAINS["night-sunny"], SETS, IdentityGenerator(),
                                GeneratorConfig("identity"))
    with pytest.raises(ValidationError):
        apply_filter_to_domains([ds], {"nope": []})


def test_similarity_matches_manual_formula(source):
    ps = build_pseudo_source(source, SETS, ProceduralGenerator(), GeneratorConfig("procedural", 2))
    img, pimg = source.images[0], ps.images[0]
    e = StubEmbedder()
    sims = box_similarities(img, pimg, 0.5, e)
    for ann, s in zip(img.annotations, sims):
        d = embed_region(img, ann.box, e) - embed_region(pimg, ann.box, e)
        assert s == pytest.approx(math.exp(-0.5 * sum(x * x for x in d)), rel=1e-14)
