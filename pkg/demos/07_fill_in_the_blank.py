"""Fill in the blank: delete a word, predict it from context plus image.

Every noun and preposition slot of every caption becomes a sample. A
forward GRU reads the prefix, a backward GRU reads the suffix, the image
feature joins them, and an MLP predicts a point in word-vector space; the
answer is whichever vocabulary word lies closest by cosine.

The corpus here is noise-free with all counts equal to one, so each blank
is fully determined by the image -- the model just has to find the
mapping. An untrained copy of the same architecture shows the floor.
"""

import tempfile

import numpy as np

from visemb import synth, tasks, vse
from visemb.lingua import annotate

corpus = synth.generate(synth.SceneSpec(noise=0.0, seed=7, counts=(1,)),
                        150, 30, tempfile.mkdtemp(prefix="visemb_demo_"))
kb = corpus.kb
store = vse.load_features(corpus.paths["features"])
ann = {s: [annotate(e["text"], kb, caption_id=e["caption_id"],
                    image_id=e["image_id"]) for e in getattr(corpus, s)]
       for s in ("train", "test")}

train_samples = tasks.build_fitb_dataset(ann["train"])
test_samples = tasks.build_fitb_dataset(ann["test"])
vocab = tasks.fitb_vocab(train_samples)
print(f"{len(train_samples)} training blanks, {len(test_samples)} test "
      f"blanks, answer vocabulary {len(vocab)}: {vocab}")

model, log = tasks.train_fitb(train_samples, store)
untrained = tasks.FitbModel(vocab, store.dim, tasks.FitbConfig())
print(f"trained {len(log)} epochs, final loss {log[-1]['loss']:.4f}\n")

for label, m in (("trained", model), ("untrained", untrained)):
    rep = tasks.fitb_eval(m, test_samples, store)
    print(f"{label:10s} R@1: noun {rep['noun']['r_at_1']:5.1f}  "
          f"preposition {rep['preposition']['r_at_1']:5.1f}  "
          f"all {rep['all']['r_at_1']:5.1f}")
print(f"(random guessing would give {100.0 / len(vocab):.1f})")

sample = test_samples[0]
scene = corpus.scenes[sample.image_id]
pred = model.predict_batch([sample], store).value[0]
sims = (pred / np.linalg.norm(pred)) @ model.word_table.T
top = np.argsort(-sims)[:3]
blanked = " ".join(sample.prefix + ["___"] + sample.suffix)
print(f"\nimage shows {scene}")
print(f"  {blanked}")
print("  guesses: " + ", ".join(f"{model.vocab[i]} ({sims[i]:+.2f})"
                                for i in top)
      + f"   (answer: {sample.target})")
