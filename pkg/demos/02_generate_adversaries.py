"""Annotate a caption and enumerate its rule-based adversaries.

Four edit kinds, each constrained by the lexical knowledge base:

  noun         swap a head noun for an unrelated frequent-concrete noun
  numeral      change a count and re-inflect the governed noun
  preposition  swap a preposition for a non-overlapping one
  shuffle      permute the tokens (same bag of words, different order)

The point of the constraints is that every adversary stays grammatical and
contradicts the image, so ranking it above the true caption is always an
error.
"""

import tempfile
from collections import Counter
from pathlib import Path

from visemb import synth
from visemb.adversary import GeneratorConfig, build_candidate_set
from visemb.knowledge import (is_frequent_concrete_head, load_kb,
                              prepositions_conflict, related)
from visemb.lingua import annotate

corpus = synth.generate(synth.SceneSpec(noise=0.0, seed=11), 8, 0,
                        tempfile.mkdtemp(prefix="visemb_demo_"))
kb = corpus.kb
config = GeneratorConfig(numeral_words=("one", "two", "three", "four", "five",
                                        "six", "seven", "eight", "nine", "ten",
                                        "eleven", "twelve"))

entry = corpus.train[6]
caption = annotate(entry["text"], kb, caption_id=entry["caption_id"],
                   image_id=entry["image_id"])
print(f"caption: {caption.text()}")
print("tagged: ", " ".join(f"{t.text}/{t.pos}" for t in caption.tokens))
print(f"numeral slots {caption.numeral_positions}, "
      f"preposition slots {caption.preposition_positions}")

cs = build_candidate_set(caption, kb, config)
counts = Counter(a.kind for a in cs.candidates)
print(f"\n{len(cs.candidates)} adversaries: {dict(counts)}")
for kind in ("noun", "numeral", "preposition", "shuffle"):
    pool = cs.by_kind(kind)
    shown = [" ".join(a.tokens) for a in pool[:3]]
    print(f"  {kind:12s} {' | '.join(shown)}")

# the knowledge base is what keeps noun edits contradictory: a replacement
# must be an unrelated frequent-concrete head. The synthetic KB records no
# hypernym edges (objects are mutually unrelated by design); add one and
# the relatedness test lights up.
extra = Path(tempfile.mkdtemp(prefix="visemb_demo_")) / "hypernyms.tsv"
extra.write_text("horse\tanimal\nbird\tanimal\n")
rich_kb = load_kb(corpus.paths["kb_dir"], hypernyms=extra)
print(f"\nrelated('horse', 'animal') in the flat corpus KB: "
      f"{related(kb, 'horse', 'animal')}")
print(f"related('horse', 'animal') after adding the edge:  "
      f"{related(rich_kb, 'horse', 'animal')}")
print(f"siblings stay eligible: related('horse', 'bird') = "
      f"{related(rich_kb, 'horse', 'bird')}")
print(f"'animal' can still never appear as a replacement, it fails the "
      f"frequency/concreteness gate: is_frequent_concrete_head = "
      f"{is_frequent_concrete_head(rich_kb, config.knowledge, 'animal')}")

# preposition swaps must leave the spatial overlap set
old_prep = caption.tokens[caption.preposition_positions[0]].text
for other in ("past", "near"):
    print(f"prepositions_conflict('{old_prep}', '{other}') = "
          f"{prepositions_conflict(kb, old_prep, other)}")
