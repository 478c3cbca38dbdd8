from pathlib import Path

import pytest

from visemb import knowledge
from visemb.knowledge import (DataError, KnowledgeConfig, load_kb, related,
                              related_direct, is_frequent_concrete_head,
                              prepositions_conflict, pluralize, singularize)

KB_DIR = Path(__file__).parent / "data" / "kb"


@pytest.fixture(scope="module")
def kb():
    return load_kb(KB_DIR)


CFG = KnowledgeConfig()


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def test_indexes_populated(kb):
    assert kb.hypernym_parents["cat"] == {"feline"}
    assert kb.synset_membership["sofa"] == {"couch.n.01"}
    assert kb.concreteness["vase"] == pytest.approx(0.85)
    assert kb.frequency["table"] == 800
    assert kb.overlap_sets["b"] == frozenset({"by", "with", "beside"})
    assert kb.word_to_overlap_sets["with"] == frozenset({"b", "e"})
    assert kb.singular_to_plural["mouse"] == "mice"
    assert kb.plural_to_singular["mice"] == "mouse"


def test_lexicon_words_union(kb):
    words = kb.lexicon_words()
    assert "cat" in words and "edgeword" in words


def test_missing_optional_files_empty(tmp_path):
    kb = load_kb(tmp_path)
    assert kb.hypernym_parents == {} and kb.concreteness == {}
    # overlap table and irregulars fall back to the bundled resources
    assert "on" in kb.word_to_overlap_sets
    assert kb.singular_to_plural.get("person") == "people"


def test_explicit_path_overrides_dir(tmp_path):
    (tmp_path / "freq.tsv").write_text("zebra\t999\n")
    kb = load_kb(KB_DIR, frequency=tmp_path / "freq.tsv")
    assert kb.frequency == {"zebra": 999}
    assert kb.concreteness["cat"] == pytest.approx(0.95)  # rest untouched


def test_frequency_accumulates_duplicates(tmp_path):
    (tmp_path / "frequency.tsv").write_text("cat\t10\ncat\t5\n")
    kb = load_kb(tmp_path)
    assert kb.frequency["cat"] == 15


def test_comments_and_blank_lines_skipped(tmp_path):
    (tmp_path / "hypernyms.tsv").write_text("# header\n\ncat\tfeline\n")
    kb = load_kb(tmp_path)
    assert kb.hypernym_parents == {"cat": {"feline"}}


def test_reflexive_hypernym_edge_dropped(tmp_path):
    (tmp_path / "hypernyms.tsv").write_text("cat\tcat\n")
    kb = load_kb(tmp_path)
    assert kb.hypernym_parents == {}


# ---------------------------------------------------------------------------
# malformed data -> DataError with file:line
# ---------------------------------------------------------------------------

def _expect_error(tmp_path, filename, content, fragment):
    (tmp_path / filename).write_text(content)
    with pytest.raises(DataError) as exc:
        load_kb(tmp_path)
    message = str(exc.value)
    assert fragment in message
    assert filename in message and ":2" in message


def test_wrong_field_count(tmp_path):
    _expect_error(tmp_path, "hypernyms.tsv", "cat\tfeline\ncat feline\n",
                  "expected 2 tab-separated fields")


def test_unparseable_concreteness(tmp_path):
    _expect_error(tmp_path, "concreteness.tsv", "cat\t0.9\ndog\thigh\n",
                  "unparseable concreteness")


def test_concreteness_out_of_range(tmp_path):
    _expect_error(tmp_path, "concreteness.tsv", "cat\t0.9\ndog\t1.5\n",
                  "out of range")


def test_conflicting_concreteness(tmp_path):
    _expect_error(tmp_path, "concreteness.tsv", "cat\t0.9\ncat\t0.8\n",
                  "conflicting concreteness")


def test_negative_frequency(tmp_path):
    _expect_error(tmp_path, "frequency.tsv", "cat\t10\ndog\t-1\n",
                  "negative frequency")


def test_conflicting_irregular_plural(tmp_path):
    _expect_error(tmp_path, "irregular_plurals.tsv",
                  "mouse\tmice\nmouse\tmouses\n", "conflicting plural")


def test_config_rejects_nonpositive_thresholds():
    with pytest.raises(ValueError):
        KnowledgeConfig(frequency_threshold=0)


# ---------------------------------------------------------------------------
# relatedness
# ---------------------------------------------------------------------------

def test_related_reflexive(kb):
    assert related(kb, "cat", "cat")


def test_related_transitive_both_directions(kb):
    assert related(kb, "cat", "animal")      # upward closure
    assert related(kb, "animal", "cat")      # and the reverse query
    assert related(kb, "kitten", "mammal")


def test_siblings_not_related(kb):
    assert not related(kb, "cat", "dog")     # common ancestor is not enough
    assert not related(kb, "table", "vase")


def test_related_via_shared_synset(kb):
    assert related(kb, "couch", "sofa")
    assert related(kb, "car", "automobile")
    assert not related(kb, "sofa", "car")


def test_related_direct_is_one_step(kb):
    assert related_direct(kb, "flower", "plant")
    assert related_direct(kb, "plant", "flower")
    assert not related_direct(kb, "flower", "organism")
    assert related(kb, "flower", "organism")


# ---------------------------------------------------------------------------
# eligibility and preposition conflicts
# ---------------------------------------------------------------------------

def test_frequent_concrete_gate(kb):
    assert is_frequent_concrete_head(kb, CFG, "cat")
    assert not is_frequent_concrete_head(kb, CFG, "idea")   # abstract
    assert not is_frequent_concrete_head(kb, CFG, "rock")   # rare
    assert not is_frequent_concrete_head(kb, CFG, "missing")


def test_thresholds_are_strict(kb):
    # edgeword sits exactly at both thresholds and must be rejected
    assert kb.frequency["edgeword"] == CFG.frequency_threshold
    assert kb.concreteness["edgeword"] == CFG.concreteness_threshold
    assert not is_frequent_concrete_head(kb, CFG, "edgeword")


def test_preposition_conflicts(kb):
    assert prepositions_conflict(kb, "in", "in")          # identity
    assert prepositions_conflict(kb, "in", "among")       # same set
    assert prepositions_conflict(kb, "with", "without")   # via second set
    assert not prepositions_conflict(kb, "on", "in")
    assert not prepositions_conflict(kb, "by", "without")
    assert not prepositions_conflict(kb, "on", "unknownword")


# ---------------------------------------------------------------------------
# inflection
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("singular,plural", [
    ("cat", "cats"),
    ("box", "boxes"),
    ("church", "churches"),
    ("dish", "dishes"),
    ("buzz", "buzzes"),
    ("fly", "flies"),
    ("day", "days"),        # vowel + y keeps the y
    ("person", "people"),   # irregular table first
    ("mouse", "mice"),
    ("sheep", "sheep"),
])
def test_pluralize(kb, singular, plural):
    assert pluralize(kb, singular) == plural


def test_singularize_inverts(kb):
    assert singularize(kb, "cats") == "cat"
    assert singularize(kb, "boxes") == "box"
    assert singularize(kb, "flies") == "fly"
    assert singularize(kb, "people") == "person"
    assert singularize(kb, "mice") == "mouse"


def test_singularize_prefers_lexicon_backed_candidate(kb):
    # "cheeses" matches both the -es and the -s suffix rules; the lexicon
    # entry for "cheese" must win over naive rule order
    assert singularize(kb, "cheeses") == "cheese"


def test_inflection_round_trip(kb):
    for word in sorted(kb.lexicon_words()):
        plural = pluralize(kb, word)
        if plural == word:      # invariant plurals (sheep) cannot round-trip
            continue
        assert singularize(kb, plural) == word, word
