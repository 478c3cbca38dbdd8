"""Image-to-word retrieval with a trained interaction scorer.

A different probe of grounding: strip away sentence structure entirely and
ask, per image, which object words belong to it. Positives are the
frequent-concrete heads of the image's captions; negatives are every other
eligible object in the lexicon, minus anything related to a positive. The
scorer is a small MLP over the outer product of a (fixed, random) word
vector and the raw image feature, so all it can learn is the interaction.
"""

import tempfile

import numpy as np

from visemb import synth, tasks, vse
from visemb.lingua import annotate

corpus = synth.generate(synth.SceneSpec(noise=0.1, seed=4), 120, 0,
                        tempfile.mkdtemp(prefix="visemb_demo_"))
kb = corpus.kb
store = vse.load_features(corpus.paths["features"])
captions = [annotate(e["text"], kb, caption_id=e["caption_id"],
                     image_id=e["image_id"]) for e in corpus.train]

dataset = tasks.build_word_object_dataset(captions, kb, relation="closure")
entry = dataset.entries[0]
print(f"{len(dataset.entries)} images, {len(dataset.excluded)} excluded")
print(f"{entry.image_id}: positives {entry.positives}, "
      f"{len(entry.negatives)} negatives (e.g. {entry.negatives[:4]})")

# word identity is carried by fixed random vectors; only the MLP trains
words = sorted({w for e in dataset.entries for w in e.positives + e.negatives})
rng = np.random.default_rng(0)
vectors = {w: rng.normal(0.0, 1.0, 16) for w in words}

scorer, log = tasks.train_interaction_scorer(
    dataset, vectors, store, tasks.ScorerConfig(hidden=32, epochs=40, seed=0))
report = tasks.word_retrieval_map(scorer, dataset, vectors, store)
print(f"\ntrained {len(log)} epochs, final loss {log[-1]['loss']:.4f}")
print(f"MAP {report['map']:.4f} over {report['n_images']} images")

feat = store.get(entry.image_id)
scene = corpus.scenes[entry.image_id]
ranked = sorted(((scorer.score(vectors[w], feat), w)
                 for w in entry.positives + entry.negatives), reverse=True)
print(f"\n{entry.image_id} shows {scene}; top-scored words:")
for s, w in ranked[:5]:
    mark = "+" if w in entry.positives else " "
    print(f"  {mark} {w:8s} {s:+.2f}")
