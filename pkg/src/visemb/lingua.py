"""Caption annotation: tokens, part-of-speech tags, noun-phrase chunks,
numeral and preposition detection.

The built-in tagger is lexicon-first and heuristic. It reads closed-class
word lists (determiners, numerals, prepositions from the overlap table
plus a bundled list, a small verb/adjective list) and treats words found
in the knowledge base's concreteness/frequency lexicons as nouns, with
suffix rules as a fallback. Pipelines that need gold tags should use
:func:`ingest_pretagged` instead.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .knowledge import DataError, singularize

NOUN = "NOUN"
PROPN = "PROPN"
ADJ = "ADJ"
DET = "DET"
NUM = "NUM"
PREP = "PREP"
VERB = "VERB"
OTHER = "OTHER"

TAGS = frozenset({NOUN, PROPN, ADJ, DET, NUM, PREP, VERB, OTHER})

# documented mapping for externally supplied tags (Universal POS aliases)
EXTERNAL_TAG_MAP = {
    "ADP": PREP, "AUX": VERB,
    "ADV": OTHER, "PRON": OTHER, "CCONJ": OTHER, "SCONJ": OTHER, "CONJ": OTHER,
    "PART": OTHER, "INTJ": OTHER, "PUNCT": OTHER, "SYM": OTHER, "X": OTHER,
}

DETERMINERS = frozenset({
    "a", "an", "the", "this", "that", "these", "those",
    "his", "her", "its", "their", "my", "your", "our", "some", "every", "each",
})

NUMERAL_WORDS = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10,
}

_ADJ_SUFFIXES = ("ous", "ful", "ive", "less", "able", "ish")
_NOUN_SUFFIXES = ("tion", "ment", "ness", "ity", "ship", "hood")

_TOKEN_RE = re.compile(r"[A-Za-z]+(?:'[A-Za-z]+)?|\d+|[^\sA-Za-z\d]")


def _wordlist(name):
    words = set()
    for line in resources.files("visemb.data").joinpath(name).read_text().splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line)
    return frozenset(words)

_BUNDLED_PREPOSITIONS = _wordlist("prepositions.txt")
_BUNDLED_ADJECTIVES = _wordlist("adjectives.txt")
_BUNDLED_VERBS = _wordlist("verbs.txt")


@dataclass(frozen=True)
class Token:
    text: str      # lowercase surface form
    lemma: str     # lowercase; singular form for nouns
    pos: str
    index: int


@dataclass(frozen=True)
class NounPhrase:
    start: int          # [start, end) token span
    end: int
    head_index: int     # rightmost noun of the chunk

    def covers(self, i):
        return self.start <= i < self.end


@dataclass
class AnnotatedCaption:
    caption_id: str = ""
    image_id: str = ""
    tokens: list = field(default_factory=list)
    noun_phrases: list = field(default_factory=list)
    numeral_positions: dict = field(default_factory=dict)   # index -> integer value
    preposition_positions: list = field(default_factory=list)

    def token_texts(self):
        return tuple(t.text for t in self.tokens)

    def text(self):
        return " ".join(t.text for t in self.tokens)


def preposition_lexicon(kb):
    """All words the tagger treats as prepositions."""
    return _BUNDLED_PREPOSITIONS | set(kb.word_to_overlap_sets)


def _tag_word(lower, original, index, kb, preps, noun_lexicon):
    if lower in DETERMINERS:
        return DET
    if lower in NUMERAL_WORDS or lower.isdigit():
        return NUM
    if lower in preps:
        return PREP
    if lower in _BUNDLED_VERBS:
        return VERB
    if lower in _BUNDLED_ADJECTIVES:
        return ADJ
    if len(lower) > 4 and (lower.endswith("ing") or lower.endswith("ed")):
        return VERB
    if lower in noun_lexicon or singularize(kb, lower) in noun_lexicon:
        return NOUN
    if lower.endswith(_ADJ_SUFFIXES):
        return ADJ
    if lower.endswith(_NOUN_SUFFIXES):
        return NOUN
    if index > 0 and original[:1].isupper():
        return PROPN
    return OTHER


def _lemma_for(lower, pos, kb):
    return singularize(kb, lower) if pos in (NOUN, PROPN) else lower


def _chunk(tokens):
    """Noun-phrase chunks by the pattern DET? ADJ* (NOUN|PROPN)+."""
    phrases = []
    n = len(tokens)
    i = 0
    while i < n:
        k = i
        if tokens[k].pos == DET:
            k += 1
        while k < n and tokens[k].pos == ADJ:
            k += 1
        first_noun = k
        while k < n and tokens[k].pos in (NOUN, PROPN):
            k += 1
        if k > first_noun:
            phrases.append(NounPhrase(start=i, end=k, head_index=k - 1))
            i = k
        else:
            i += 1
    return phrases


def _detect(tokens):
    numerals = {}
    preps = []
    for t in tokens:
        if t.text in ("a", "an"):
            numerals[t.index] = 1
        elif t.text in NUMERAL_WORDS:
            numerals[t.index] = NUMERAL_WORDS[t.text]
        elif t.text.isdigit() and int(t.text) >= 1:
            numerals[t.index] = int(t.text)
        if t.pos == PREP:
            preps.append(t.index)
    return numerals, preps


def _assemble(tokens, caption_id, image_id):
    numerals, preps = _detect(tokens)
    return AnnotatedCaption(
        caption_id=caption_id,
        image_id=image_id,
        tokens=tokens,
        noun_phrases=_chunk(tokens),
        numeral_positions=numerals,
        preposition_positions=preps,
    )


def annotate(text, kb, caption_id="", image_id=""):
    """Tokenize, tag, and chunk a raw caption string."""
    if not text or not text.strip():
        raise DataError("annotate: empty caption text")
    preps = preposition_lexicon(kb)
    noun_lexicon = kb.lexicon_words()
    tokens = []
    for index, match in enumerate(_TOKEN_RE.findall(text)):
        lower = match.lower()
        pos = _tag_word(lower, match, index, kb, preps, noun_lexicon)
        tokens.append(Token(text=lower, lemma=_lemma_for(lower, pos, kb),
                            pos=pos, index=index))
    return _assemble(tokens, caption_id, image_id)


def ingest_pretagged(records, kb, caption_id="", image_id=""):
    """Build an AnnotatedCaption from externally tagged tokens.

    Each record needs "text" and "pos"; native tags are accepted as-is and
    Universal POS tags via EXTERNAL_TAG_MAP. Chunking and detection then
    run on the supplied tags; no internal tagging happens.
    """
    records = list(records)
    if not records:
        raise DataError("ingest_pretagged: empty token list")
    tokens = []
    for index, rec in enumerate(records):
        raw_tag = rec["pos"]
        if raw_tag in TAGS:
            pos = raw_tag
        elif raw_tag in EXTERNAL_TAG_MAP:
            pos = EXTERNAL_TAG_MAP[raw_tag]
        else:
            raise DataError(f"ingest_pretagged: unknown tag {raw_tag!r}")
        lower = rec["text"].lower()
        tokens.append(Token(text=lower, lemma=_lemma_for(lower, pos, kb),
                            pos=pos, index=index))
    return _assemble(tokens, caption_id, image_id)


def head_lemmas(caption):
    """Lemmas of all noun-phrase heads, in order, duplicates preserved."""
    return [caption.tokens[np.head_index].lemma for np in caption.noun_phrases]


# ---------------------------------------------------------------------------
# captions.jsonl
# ---------------------------------------------------------------------------

def load_captions(path, kb):
    """Read captions.jsonl; entries with a "tokens" field are ingested
    pre-tagged, the rest go through the built-in annotator."""
    captions = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as err:
            raise DataError(f"{path}:{lineno}: invalid JSON ({err})")
        try:
            image_id = str(obj["image_id"])
            caption_id = str(obj["caption_id"])
        except KeyError as err:
            raise DataError(f"{path}:{lineno}: missing field {err}")
        if "tokens" in obj:
            cap = ingest_pretagged(obj["tokens"], kb, caption_id, image_id)
        else:
            if "text" not in obj:
                raise DataError(f"{path}:{lineno}: missing field 'text'")
            cap = annotate(obj["text"], kb, caption_id, image_id)
        captions.append(cap)
    return captions


def save_captions(path, entries):
    """Write captions.jsonl from {"image_id","caption_id","text"} dicts."""
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
