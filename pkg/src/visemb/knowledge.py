"""Lexical resources: hypernym graph, synsets, concreteness, frequency,
preposition semantic-overlap sets, and English number inflection.

Everything is loaded once into an immutable :class:`LexicalKB`; all query
functions are pure, so concurrent readers are safe.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path


class DataError(ValueError):
    """Malformed or inconsistent resource data."""


@dataclass(frozen=True)
class KnowledgeConfig:
    frequency_threshold: int = 200
    concreteness_threshold: float = 0.6

    def __post_init__(self):
        if self.frequency_threshold <= 0 or self.concreteness_threshold <= 0:
            raise ValueError("thresholds must be strictly positive")


@dataclass
class LexicalKB:
    """Indexed lexical knowledge; immutable after load."""

    hypernym_parents: dict = field(default_factory=dict)   # lemma -> set of parent lemmas
    synset_membership: dict = field(default_factory=dict)  # lemma -> set of synset ids
    concreteness: dict = field(default_factory=dict)       # lemma -> score in [0, 1]
    frequency: dict = field(default_factory=dict)          # lemma -> count >= 0
    overlap_sets: dict = field(default_factory=dict)       # set id -> frozenset of words
    word_to_overlap_sets: dict = field(default_factory=dict)
    singular_to_plural: dict = field(default_factory=dict)
    plural_to_singular: dict = field(default_factory=dict)

    def lexicon_words(self):
        """Words known to the noun lexicons (concreteness/frequency files)."""
        return set(self.concreteness) | set(self.frequency)


def _bundled(name):
    return resources.files("visemb.data").joinpath(name)


def _read_tsv(path, n_fields, description):
    """Yield (lineno, fields) for each non-empty, non-comment line."""
    text = Path(path).read_text(encoding="utf-8") if isinstance(path, (str, Path)) \
        else path.read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.rstrip("\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != n_fields:
            raise DataError(f"{path}:{lineno}: expected {n_fields} tab-separated "
                            f"fields for {description}, got {len(fields)}")
        yield lineno, fields


def load_kb(kb_dir=None, config=None, *, hypernyms=None, synsets=None,
            concreteness=None, frequency=None, prep_overlap=None,
            irregular_plurals=None):
    """Load and index all lexical resources.

    Files are looked up inside `kb_dir` by their conventional names
    (hypernyms.tsv, synsets.tsv, concreteness.tsv, frequency.tsv,
    prep_overlap.tsv, irregular_plurals.tsv) unless given explicitly.
    A missing hypernym/synset/concreteness/frequency file yields an empty
    index; missing overlap/irregular files fall back to the bundled tables.
    """
    config = config or KnowledgeConfig()

    def locate(explicit, name, bundled_fallback=None):
        if explicit is not None:
            return explicit
        if kb_dir is not None:
            cand = Path(kb_dir) / name
            if cand.exists():
                return cand
        return _bundled(bundled_fallback) if bundled_fallback else None

    kb = LexicalKB()

    path = locate(hypernyms, "hypernyms.tsv")
    if path is not None:
        for _, (child, parent) in _read_tsv(path, 2, "hypernym edge"):
            if child == parent:
                continue  # reflexive edges are never stored
            kb.hypernym_parents.setdefault(child, set()).add(parent)

    path = locate(synsets, "synsets.tsv")
    if path is not None:
        for _, (lemma, synset_id) in _read_tsv(path, 2, "synset membership"):
            kb.synset_membership.setdefault(lemma, set()).add(synset_id)

    path = locate(concreteness, "concreteness.tsv")
    if path is not None:
        for lineno, (lemma, raw) in _read_tsv(path, 2, "concreteness entry"):
            try:
                score = float(raw)
            except ValueError:
                raise DataError(f"{path}:{lineno}: unparseable concreteness score {raw!r}")
            if not 0.0 <= score <= 1.0:
                raise DataError(f"{path}:{lineno}: score out of range [0,1]: {score}")
            if lemma in kb.concreteness and kb.concreteness[lemma] != score:
                raise DataError(f"{path}:{lineno}: conflicting concreteness for {lemma!r}")
            kb.concreteness[lemma] = score

    path = locate(frequency, "frequency.tsv")
    if path is not None:
        for lineno, (lemma, raw) in _read_tsv(path, 2, "frequency entry"):
            try:
                count = int(raw)
            except ValueError:
                raise DataError(f"{path}:{lineno}: unparseable frequency {raw!r}")
            if count < 0:
                raise DataError(f"{path}:{lineno}: negative frequency {count}")
            kb.frequency[lemma] = kb.frequency.get(lemma, 0) + count

    path = locate(prep_overlap, "prep_overlap.tsv", "prep_overlap.tsv")
    for _, (set_id, word) in _read_tsv(path, 2, "overlap membership"):
        kb.overlap_sets.setdefault(set_id, set()).add(word)
        kb.word_to_overlap_sets.setdefault(word, set()).add(set_id)
    kb.overlap_sets = {k: frozenset(v) for k, v in kb.overlap_sets.items()}
    kb.word_to_overlap_sets = {k: frozenset(v) for k, v in kb.word_to_overlap_sets.items()}

    path = locate(irregular_plurals, "irregular_plurals.tsv", "irregular_plurals.tsv")
    for lineno, (singular, plural) in _read_tsv(path, 2, "irregular plural"):
        if singular in kb.singular_to_plural and kb.singular_to_plural[singular] != plural:
            raise DataError(f"{path}:{lineno}: conflicting plural for {singular!r}")
        kb.singular_to_plural[singular] = plural
        kb.plural_to_singular[plural] = singular

    return kb


def frequency_from_corpus(annotated_captions):
    """Lemma counts over a corpus, for when no frequency file is supplied."""
    counts = {}
    for cap in annotated_captions:
        for tok in cap.tokens:
            counts[tok.lemma] = counts.get(tok.lemma, 0) + 1
    return counts


# ---------------------------------------------------------------------------
# queries
# ---------------------------------------------------------------------------

def _reaches(parents, start, goal):
    """True iff `goal` is reachable from `start` along hypernym edges."""
    seen = {start}
    queue = deque([start])
    while queue:
        node = queue.popleft()
        for parent in parents.get(node, ()):
            if parent == goal:
                return True
            if parent not in seen:
                seen.add(parent)
                queue.append(parent)
    return False


def _shares_synset(kb, a, b):
    sa = kb.synset_membership.get(a)
    sb = kb.synset_membership.get(b)
    return bool(sa and sb and sa & sb)


def related(kb, a, b):
    """True iff the lemmas are identical, synonymous, or linked by the
    transitive closure of hypernymy in either direction."""
    if a == b:
        return True
    if _shares_synset(kb, a, b):
        return True
    return _reaches(kb.hypernym_parents, a, b) or _reaches(kb.hypernym_parents, b, a)


def related_direct(kb, a, b):
    """One-step variant: identity, shared synset, or a direct hypernym edge."""
    if a == b:
        return True
    if _shares_synset(kb, a, b):
        return True
    return (b in kb.hypernym_parents.get(a, ()) or
            a in kb.hypernym_parents.get(b, ()))


def is_frequent_concrete_head(kb, config, lemma):
    """Eligibility gate for noun replacement: frequent and concrete."""
    return (kb.frequency.get(lemma, 0) > config.frequency_threshold and
            kb.concreteness.get(lemma, 0.0) > config.concreteness_threshold)


def prepositions_conflict(kb, a, b):
    """True iff the prepositions co-occur in any semantic-overlap set (a
    word may belong to several); identical words always conflict."""
    if a == b:
        return True
    sa = kb.word_to_overlap_sets.get(a)
    sb = kb.word_to_overlap_sets.get(b)
    return bool(sa and sb and sa & sb)


# ---------------------------------------------------------------------------
# number inflection
# ---------------------------------------------------------------------------

_SIBILANTS = ("s", "x", "z", "ch", "sh")
_VOWELS = "aeiou"


def pluralize(kb, noun):
    irregular = kb.singular_to_plural.get(noun)
    if irregular is not None:
        return irregular
    if noun.endswith(_SIBILANTS):
        return noun + "es"
    if noun.endswith("y") and len(noun) > 1 and noun[-2] not in _VOWELS:
        return noun[:-1] + "ies"
    return noun + "s"


def singularize(kb, noun):
    irregular = kb.plural_to_singular.get(noun)
    if irregular is not None:
        return irregular
    candidates = []
    if noun.endswith("ies") and len(noun) > 3:
        candidates.append(noun[:-3] + "y")
    if noun.endswith("es") and len(noun) > 2 and noun[:-2].endswith(_SIBILANTS):
        candidates.append(noun[:-2])
    if noun.endswith("s") and not noun.endswith("ss") and len(noun) > 1:
        candidates.append(noun[:-1])
    if not candidates:
        return noun
    # a candidate backed by the lexicon wins; otherwise rule order decides
    lexicon = kb.lexicon_words() | set(kb.singular_to_plural)
    for cand in candidates:
        if cand in lexicon:
            return cand
    return candidates[0]
