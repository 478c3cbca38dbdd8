"""Synthetic scene corpus: rendering, unranking, generation invariants."""

import json

import numpy as np
import pytest

from visemb.adversary import build_candidate_set
from visemb.knowledge import DataError, load_kb
from visemb.lingua import annotate
from visemb.synth import (
    MAX_COUNT,
    SceneSpec,
    _decode_scene,
    generate,
    nearest_scene,
    render_caption,
    render_count_phrase,
    scene_space_size,
)
from visemb.vse import load_features

SMALL = dict(objects=("dog", "cat", "chair", "table"),
             relations=("on", "under"), counts=(1, 2), noise=0.0, seed=3)


@pytest.fixture(scope="module")
def kb():
    return load_kb()


# ------------------------------------------------------------- SceneSpec

def test_spec_validation():
    with pytest.raises(DataError, match="at least 4 objects"):
        SceneSpec(objects=("dog", "cat", "chair"))
    with pytest.raises(DataError, match="duplicate objects"):
        SceneSpec(objects=("dog", "dog", "cat", "chair"))
    with pytest.raises(DataError, match="distinct and non-empty"):
        SceneSpec(relations=())
    with pytest.raises(DataError, match="counts"):
        SceneSpec(counts=(0, 1))
    with pytest.raises(DataError, match="counts"):
        SceneSpec(counts=(1, MAX_COUNT + 1))
    with pytest.raises(DataError, match="overlap table"):
        SceneSpec(relations=("on", "alongside"))


def test_feature_dim_arithmetic():
    assert SceneSpec().feature_dim == 2 * 5 + 2 * 12 + 4
    assert SceneSpec(**SMALL).feature_dim == 2 * 5 + 2 * 4 + 2


def test_feature_of_sets_exactly_five_ones():
    spec = SceneSpec(**SMALL)
    scene = (2, "cat", "under", 1, "table")
    v = spec.feature_of(scene)
    assert v.sum() == 5.0 and set(np.unique(v)) == {0.0, 1.0}
    assert v[1] == 1.0                       # count1 = 2
    assert v[MAX_COUNT + 1] == 1.0           # obj1 = cat (index 1)
    assert v[MAX_COUNT + 4 + 1] == 1.0       # relation = under (index 1)
    assert v[MAX_COUNT + 4 + 2 + 0] == 1.0   # count2 = 1
    assert v[2 * MAX_COUNT + 4 + 2 + 3] == 1.0   # obj2 = table (index 3)


# ------------------------------------------------------------- rendering

def test_render_count_phrase(kb):
    assert render_count_phrase(1, "dog", kb) == "a dog"
    assert render_count_phrase(2, "dog", kb) == "two dogs"
    assert render_count_phrase(5, "box", kb) == "five boxes"


def test_render_caption_with_and_without_verb(kb):
    scene = (2, "dog", "on", 1, "chair")
    assert render_caption(scene, "", kb) == "two dogs on a chair"
    assert render_caption(scene, "sitting", kb) == "two dogs sitting on a chair"


# ------------------------------------------------------------- unranking

def test_scene_space_size_arithmetic():
    spec = SceneSpec(**SMALL)
    assert scene_space_size(spec) == 2 ** 2 * 4 * 3 * 2


def test_decode_scene_is_a_bijection_onto_valid_scenes():
    spec = SceneSpec(**SMALL)
    seen = set()
    for index in range(scene_space_size(spec)):
        scene = _decode_scene(spec, index)
        count1, obj1, relation, count2, obj2 = scene
        assert obj1 != obj2
        assert count1 in spec.counts and count2 in spec.counts
        assert relation in spec.relations
        seen.add(scene)
    assert len(seen) == scene_space_size(spec)


# ------------------------------------------------------------ generation

@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    spec = SceneSpec(**SMALL)
    return generate(spec, n_train=6, n_test=2, out_dir=tmp_path_factory.mktemp("synth"))


def test_generate_counts_and_ids(corpus):
    assert len(corpus.train) == 6 * 5 and len(corpus.test) == 2 * 5
    assert len(corpus.features) == 8 and len(corpus.scenes) == 8
    first = corpus.train[:5]
    assert [e["caption_id"] for e in first] == [f"img00000c{k}" for k in range(5)]
    assert {e["image_id"] for e in first} == {"img00000"}
    # the verbless variant plus four verb variants of the same scene
    texts = [e["text"].split() for e in first]
    assert len(texts[0]) + 1 == len(texts[1])


def test_generate_rejects_oversized_requests():
    spec = SceneSpec(**SMALL)
    size = scene_space_size(spec)
    with pytest.raises(DataError, match="distinct scenes"):
        generate(spec, n_train=size, n_test=1, out_dir="/tmp/never-written")


def test_scenes_are_sampled_without_replacement(corpus):
    assert len(set(corpus.scenes.values())) == len(corpus.scenes)


def test_features_file_round_trips(corpus):
    store = load_features(corpus.paths["features"])
    assert store.dim == corpus.spec.feature_dim
    for image_id, vec in corpus.features.items():
        np.testing.assert_array_equal(store.get(image_id), vec)


def test_scenes_json_matches_in_memory(corpus):
    on_disk = json.loads(corpus.paths["scenes"].read_text())
    assert {k: tuple(v) for k, v in on_disk.items()} == corpus.scenes


def test_noise_free_features_are_exact_one_hots(corpus):
    for image_id, scene in corpus.scenes.items():
        np.testing.assert_array_equal(corpus.features[image_id],
                                      corpus.spec.feature_of(scene))


def test_generate_is_deterministic(tmp_path):
    spec = SceneSpec(**SMALL)
    a = generate(spec, 4, 2, tmp_path / "a")
    b = generate(spec, 4, 2, tmp_path / "b")
    for key in ("captions_train", "captions_test", "features"):
        assert a.paths[key].read_bytes() == b.paths[key].read_bytes()


def test_every_caption_parses_with_the_emitted_kb(corpus):
    for entry in corpus.train + corpus.test:
        cap = annotate(entry["text"], corpus.kb,
                       caption_id=entry["caption_id"], image_id=entry["image_id"])
        assert len(cap.noun_phrases) == 2
        assert len(cap.numeral_positions) == 2
        assert len(cap.preposition_positions) == 1
        # numeral values recover the scene counts
        scene = corpus.scenes[entry["image_id"]]
        assert sorted(cap.numeral_positions.values()) == sorted([scene[0], scene[3]])


def test_emitted_kb_admits_all_four_adversary_kinds(corpus):
    entry = corpus.train[0]
    cap = annotate(entry["text"], corpus.kb, caption_id=entry["caption_id"])
    cs = build_candidate_set(cap, corpus.kb)
    for kind in ("noun", "numeral", "shuffle", "preposition"):
        assert cs.by_kind(kind), f"no {kind} candidates for {entry['text']!r}"


def test_nearest_scene_recovers_ground_truth_under_noise():
    spec = SceneSpec(**{**SMALL, "noise": 0.3, "seed": 11})
    rng = np.random.default_rng(5)
    for index in rng.integers(0, scene_space_size(spec), size=6):
        scene = _decode_scene(spec, int(index))
        noisy = spec.feature_of(scene) + rng.normal(0.0, spec.noise, spec.feature_dim)
        assert nearest_scene(spec, noisy) == scene
