import json
from pathlib import Path

import pytest

from visemb import lingua
from visemb.knowledge import DataError, load_kb
from visemb.lingua import (annotate, ingest_pretagged, head_lemmas,
                           load_captions, save_captions,
                           NOUN, DET, NUM, PREP, VERB, ADJ, OTHER)

KB_DIR = Path(__file__).parent / "data" / "kb"


@pytest.fixture(scope="module")
def kb():
    return load_kb(KB_DIR)


# ---------------------------------------------------------------------------
# tagging
# ---------------------------------------------------------------------------

def test_canonical_caption(kb):
    cap = annotate("A person feeding a cat with a banana.", kb,
                   caption_id="c1", image_id="i1")
    assert cap.token_texts() == ("a", "person", "feeding", "a", "cat",
                                 "with", "a", "banana", ".")
    assert [t.pos for t in cap.tokens] == [
        DET, NOUN, VERB, DET, NOUN, PREP, DET, NOUN, OTHER]
    assert [(p.start, p.end, p.head_index) for p in cap.noun_phrases] == [
        (0, 2, 1), (3, 5, 4), (6, 8, 7)]
    assert cap.numeral_positions == {0: 1, 3: 1, 6: 1}   # articles count as one
    assert cap.preposition_positions == [5]
    assert head_lemmas(cap) == ["person", "cat", "banana"]


def test_numeral_words_and_digits(kb):
    cap = annotate("two cats on 3 tables", kb)
    assert cap.numeral_positions == {0: 2, 3: 3}
    assert cap.tokens[0].pos == NUM and cap.tokens[3].pos == NUM
    # numerals stay outside the chunk pattern: the phrases are the nouns
    assert [(p.start, p.end) for p in cap.noun_phrases] == [(1, 2), (4, 5)]


def test_plural_noun_lemma_is_singular(kb):
    cap = annotate("five cats", kb)
    tok = cap.tokens[1]
    assert tok.text == "cats" and tok.lemma == "cat" and tok.pos == NOUN


def test_chunk_det_adj_noun_sequence(kb):
    cap = annotate("the big red cat sleeps", kb)
    poses = [t.pos for t in cap.tokens]
    assert poses[:4] == [DET, ADJ, ADJ, NOUN]
    assert [(p.start, p.end, p.head_index) for p in cap.noun_phrases] == [(0, 4, 3)]


def test_compound_noun_head_is_rightmost(kb):
    cap = annotate("a cat person", kb)
    (phrase,) = cap.noun_phrases
    assert (phrase.start, phrase.end, phrase.head_index) == (0, 3, 2)
    assert head_lemmas(cap) == ["person"]


def test_unknown_capitalized_word_midsentence_is_propn(kb):
    cap = annotate("the cat likes Fluffy", kb)
    assert cap.tokens[3].pos == "PROPN"


def test_verb_suffix_heuristic(kb):
    cap = annotate("a dog jumping", kb)
    assert cap.tokens[2].pos == VERB


def test_overlap_table_words_are_prepositions(kb):
    # "upon" comes from the fixture overlap table, not the bundled list
    assert "upon" in lingua.preposition_lexicon(kb)
    cap = annotate("a cat upon a table", kb)
    assert cap.tokens[2].pos == PREP
    assert cap.preposition_positions == [2]


def test_empty_caption_rejected(kb):
    with pytest.raises(DataError):
        annotate("   ", kb)


def test_noun_phrase_covers(kb):
    cap = annotate("a cat with a vase", kb)
    first = cap.noun_phrases[0]
    assert first.covers(first.start) and not first.covers(first.end)


# ---------------------------------------------------------------------------
# pre-tagged ingestion
# ---------------------------------------------------------------------------

def test_ingest_pretagged_maps_external_tags(kb):
    records = [
        {"text": "Two", "pos": "NUM"},
        {"text": "cats", "pos": "NOUN"},
        {"text": "sit", "pos": "VERB"},
        {"text": "on", "pos": "ADP"},        # Universal POS alias
        {"text": "a", "pos": "DET"},
        {"text": "mat", "pos": "NOUN"},
    ]
    cap = ingest_pretagged(records, kb, "c", "i")
    assert cap.tokens[3].pos == PREP
    assert cap.tokens[0].text == "two"       # lowercased
    assert cap.tokens[1].lemma == "cat"
    assert cap.numeral_positions == {0: 2, 4: 1}
    assert cap.preposition_positions == [3]
    assert [(p.start, p.end) for p in cap.noun_phrases] == [(1, 2), (4, 6)]


def test_ingest_pretagged_unknown_tag(kb):
    with pytest.raises(DataError, match="unknown tag"):
        ingest_pretagged([{"text": "cat", "pos": "WHATEVER"}], kb)


def test_ingest_pretagged_empty(kb):
    with pytest.raises(DataError):
        ingest_pretagged([], kb)


# ---------------------------------------------------------------------------
# captions.jsonl round trip
# ---------------------------------------------------------------------------

def test_load_captions_mixed(tmp_path, kb):
    path = tmp_path / "captions.jsonl"
    entries = [
        {"image_id": "i1", "caption_id": "c1", "text": "a cat with a vase"},
        {"image_id": "i1", "caption_id": "c2",
         "tokens": [{"text": "two", "pos": "NUM"}, {"text": "dogs", "pos": "NOUN"}]},
    ]
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps(e) + "\n")
    caps = load_captions(path, kb)
    assert [c.caption_id for c in caps] == ["c1", "c2"]
    assert caps[0].preposition_positions == [2]
    assert caps[1].tokens[1].lemma == "dog"


def test_load_captions_bad_json(tmp_path, kb):
    path = tmp_path / "captions.jsonl"
    path.write_text('{"image_id": "i", "caption_id": "c", "text": "a cat"}\n{oops\n')
    with pytest.raises(DataError, match=r":2"):
        load_captions(path, kb)


def test_load_captions_missing_field(tmp_path, kb):
    path = tmp_path / "captions.jsonl"
    path.write_text('{"caption_id": "c", "text": "a cat"}\n')
    with pytest.raises(DataError, match="image_id"):
        load_captions(path, kb)
    path.write_text('{"caption_id": "c", "image_id": "i"}\n')
    with pytest.raises(DataError, match="text"):
        load_captions(path, kb)


def test_save_then_load(tmp_path, kb):
    path = tmp_path / "captions.jsonl"
    save_captions(path, [{"image_id": "i", "caption_id": "c",
                          "text": "a cat with a banana"}])
    (cap,) = load_captions(path, kb)
    assert cap.text() == "a cat with a banana"
