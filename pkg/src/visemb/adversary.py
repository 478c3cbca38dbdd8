"""Rule-based generation of contrastive (adversarial) captions.

Four edit families, all operating on annotated captions:

* noun      -- swap a noun-phrase head for an unrelated frequent, concrete
               noun, keeping grammatical number and fixing a preceding
               indefinite article.
* numeral   -- change a counting word to every other value in the numeral
               vocabulary, inflecting the governed noun to agree.
* shuffle   -- permute the order of the caption's noun phrases.
* preposition -- swap a preposition for a frequent one whose meaning does
               not overlap with the original.

Every candidate is a full token sequence; generation is deterministic
given the caption, the knowledge base, and the config.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path

from .knowledge import (
    DataError,
    KnowledgeConfig,
    is_frequent_concrete_head,
    pluralize,
    prepositions_conflict,
    related,
)
from .lingua import NOUN, PROPN, preposition_lexicon

KINDS = ("noun", "numeral", "shuffle", "preposition")

_VOWELS = "aeiou"


@dataclass(frozen=True)
class AdversarialCaption:
    tokens: tuple            # lowercase token texts
    kind: str
    source_caption_id: str = ""
    image_id: str = ""

    def text(self):
        return " ".join(self.tokens)


@dataclass
class GeneratorConfig:
    # word i renders the count value i+1
    numeral_words: tuple = ("one", "two", "three", "four", "five",
                            "six", "seven", "eight", "nine", "ten")
    cap_total: int = 1000
    # words whose article does not follow the first-letter vowel rule
    article_exceptions: dict = field(default_factory=dict)
    knowledge: KnowledgeConfig = field(default_factory=KnowledgeConfig)


def indefinite_article(word, exceptions=None):
    if exceptions and word in exceptions:
        return exceptions[word]
    return "an" if word[:1] in _VOWELS else "a"


def _make(tokens, kind, caption):
    return AdversarialCaption(tokens=tuple(tokens), kind=kind,
                              source_caption_id=caption.caption_id,
                              image_id=caption.image_id)


# ---------------------------------------------------------------------------
# noun
# ---------------------------------------------------------------------------

def noun_replacement_pool(kb, config):
    """Sorted lemmas eligible to replace a noun-phrase head."""
    return [w for w in sorted(kb.lexicon_words())
            if is_frequent_concrete_head(kb, config.knowledge, w)]


def gen_noun(caption, kb, config, pool=None):
    if pool is None:
        pool = noun_replacement_pool(kb, config)
    out = []
    texts = [t.text for t in caption.tokens]
    for np in caption.noun_phrases:
        head = caption.tokens[np.head_index]
        if head.pos not in (NOUN, PROPN):
            continue
        plural = head.text != head.lemma
        for lemma in pool:
            if lemma == head.lemma or related(kb, head.lemma, lemma):
                continue
            surface = pluralize(kb, lemma) if plural else lemma
            new = list(texts)
            new[np.head_index] = surface
            before = np.head_index - 1
            if before >= 0 and new[before] in ("a", "an"):
                new[before] = indefinite_article(surface, config.article_exceptions)
            out.append(_make(new, "noun", caption))
    return out


# ---------------------------------------------------------------------------
# numeral
# ---------------------------------------------------------------------------

def governed_noun_index(caption, position):
    """Index of the noun whose count a numeral at ``position`` controls.

    Preference: head of the noun phrase containing the numeral, then head
    of a noun phrase starting right after it, then the first noun that
    follows; None when the caption has no noun after the numeral.
    """
    for np in caption.noun_phrases:
        if np.covers(position):
            return np.head_index
    for np in caption.noun_phrases:
        if np.start == position + 1:
            return np.head_index
    for t in caption.tokens[position + 1:]:
        if t.pos in (NOUN, PROPN):
            return t.index
    return None


def gen_numeral(caption, kb, config):
    out = []
    texts = [t.text for t in caption.tokens]
    vocab = config.numeral_words
    for position in sorted(caption.numeral_positions):
        value = caption.numeral_positions[position]
        noun_at = governed_noun_index(caption, position)
        for other in range(1, len(vocab) + 1):
            if other == value:
                continue
            new = list(texts)
            if noun_at is not None:
                lemma = caption.tokens[noun_at].lemma
                new[noun_at] = lemma if other == 1 else pluralize(kb, lemma)
            if other == 1:
                if texts[position] in ("a", "an"):
                    new[position] = indefinite_article(
                        new[position + 1] if position + 1 < len(new) else "",
                        config.article_exceptions)
                else:
                    new[position] = "one"
            else:
                new[position] = vocab[other - 1]
            out.append(_make(new, "numeral", caption))
    return out


# ---------------------------------------------------------------------------
# shuffle
# ---------------------------------------------------------------------------

def gen_shuffle(caption, kb, config):
    """Every distinct reordering of the caption's noun phrases."""
    nps = caption.noun_phrases
    if len(nps) < 2:
        return []
    texts = [t.text for t in caption.tokens]
    spans = [tuple(texts[np.start:np.end]) for np in nps]
    if len(set(spans)) < 2:
        return []
    seen = set()
    out = []
    for perm in itertools.permutations(spans):
        if perm == tuple(spans) or perm in seen:
            continue
        seen.add(perm)
        new = []
        cursor = 0
        for np, span in zip(nps, perm):
            new.extend(texts[cursor:np.start])
            new.extend(span)
            cursor = np.end
        new.extend(texts[cursor:])
        out.append(_make(new, "shuffle", caption))
    return out


# ---------------------------------------------------------------------------
# preposition
# ---------------------------------------------------------------------------

def preposition_replacement_pool(kb, config):
    """Sorted prepositions frequent enough to swap in."""
    threshold = config.knowledge.frequency_threshold
    return [w for w in sorted(preposition_lexicon(kb))
            if kb.frequency.get(w, 0) > threshold]


def gen_preposition(caption, kb, config, pool=None):
    if pool is None:
        pool = preposition_replacement_pool(kb, config)
    out = []
    texts = [t.text for t in caption.tokens]
    for position in caption.preposition_positions:
        word = texts[position]
        for candidate in pool:
            if prepositions_conflict(kb, word, candidate):
                continue
            new = list(texts)
            new[position] = candidate
            out.append(_make(new, "preposition", caption))
    return out


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

@dataclass
class CandidateSet:
    caption_id: str
    image_id: str
    candidates: list

    def by_kind(self, kind):
        return [c for c in self.candidates if c.kind == kind]

    def __len__(self):
        return len(self.candidates)


def _interleave(lists):
    out = []
    for group in itertools.zip_longest(*lists):
        out.extend(item for item in group if item is not None)
    return out


def build_candidate_set(caption, kb, config=None, exclude=(),
                        noun_pool=None, prep_pool=None):
    """All adversarial candidates for one caption.

    The four generators run independently and their outputs are
    interleaved round-robin (noun, numeral, shuffle, preposition) so a
    truncated prefix still mixes edit kinds. Candidates equal to the
    source caption or to any token tuple in ``exclude`` are dropped, as
    are duplicates; at most ``config.cap_total`` survive.
    """
    if config is None:
        config = GeneratorConfig()
    merged = _interleave([
        gen_noun(caption, kb, config, pool=noun_pool),
        gen_numeral(caption, kb, config),
        gen_shuffle(caption, kb, config),
        gen_preposition(caption, kb, config, pool=prep_pool),
    ])
    banned = {caption.token_texts()}
    banned.update(tuple(t) for t in exclude)
    kept = []
    for cand in merged:
        if cand.tokens in banned:
            continue
        banned.add(cand.tokens)
        kept.append(cand)
        if len(kept) >= config.cap_total:
            break
    return CandidateSet(caption_id=caption.caption_id,
                        image_id=caption.image_id, candidates=kept)


def sample_negatives(candidates, n, rng):
    """Draw n candidates for a training pair; without replacement when the
    pool is big enough, with replacement otherwise, [] for an empty pool."""
    if n <= 0 or not candidates:
        return []
    idx = rng.choice(len(candidates), size=n, replace=len(candidates) < n)
    return [candidates[i] for i in idx]


# ---------------------------------------------------------------------------
# adversarial.jsonl
# ---------------------------------------------------------------------------

def save_adversarial(path, candidate_sets):
    with open(path, "w", encoding="utf-8") as fh:
        for cs in candidate_sets:
            for cand in cs.candidates:
                fh.write(json.dumps({
                    "source_caption_id": cand.source_caption_id,
                    "image_id": cand.image_id,
                    "kind": cand.kind,
                    "tokens": list(cand.tokens),
                }, sort_keys=True) + "\n")


def load_adversarial(path):
    """Read adversarial.jsonl into {source_caption_id: [AdversarialCaption]}."""
    grouped = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            cand = AdversarialCaption(
                tokens=tuple(obj["tokens"]),
                kind=obj["kind"],
                source_caption_id=str(obj["source_caption_id"]),
                image_id=str(obj.get("image_id", "")),
            )
        except (json.JSONDecodeError, KeyError) as err:
            raise DataError(f"{path}:{lineno}: bad adversarial record ({err})")
        if cand.kind not in KINDS:
            raise DataError(f"{path}:{lineno}: unknown kind {cand.kind!r}")
        grouped.setdefault(cand.source_caption_id, []).append(cand)
    return grouped
