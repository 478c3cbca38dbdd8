"""Where does the similarity score come from?

Gradient saliency: differentiate s(image, caption) w.r.t. the word
embeddings and the raw image feature, take magnitudes, normalize. For a
contradicting caption, the blame should land on the token that was
manipulated -- that is the grounding story told as a picture.

Trains a small intra-pair model first (about 40s), then prints bar charts
for one true caption and two of its adversaries.
"""

import tempfile
import warnings

import numpy as np

from visemb import adversary, synth, tasks, vse
from visemb.adversary import GeneratorConfig, build_candidate_set
from visemb.lingua import annotate

config = GeneratorConfig(numeral_words=("one", "two", "three", "four", "five",
                                        "six", "seven", "eight", "nine", "ten",
                                        "eleven", "twelve"))
corpus = synth.generate(synth.SceneSpec(noise=0.1, seed=1), 300, 60,
                        tempfile.mkdtemp(prefix="visemb_demo_"))
kb = corpus.kb
store = vse.load_features(corpus.paths["features"])
train = [annotate(e["text"], kb, caption_id=e["caption_id"],
                  image_id=e["image_id"]) for e in corpus.train]
test = [annotate(e["text"], kb, caption_id=e["caption_id"],
                 image_id=e["image_id"]) for e in corpus.test]

noun_pool = adversary.noun_replacement_pool(kb, config)
prep_pool = adversary.preposition_replacement_pool(kb, config)
by_image = {}
for c in train:
    by_image.setdefault(c.image_id, []).append(c)
candidates = {}
for caps in by_image.values():
    positives = {c.token_texts() for c in caps}
    for c in caps:
        candidates[c.caption_id] = build_candidate_set(
            c, kb, config, exclude=positives - {c.token_texts()},
            noun_pool=noun_pool, prep_pool=prep_pool).candidates

tc = vse.TrainingConfig(loss="vsec", epochs=25, seed=1, batch_size=32,
                        model=vse.ModelConfig(d_image=store.dim))
with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    model, _ = vse.train(train, store, candidates, tc)


def show(label, smap):
    print(f"\n{label} (similarity {smap.similarity:+.3f})")
    for tok, score in zip(smap.tokens, smap.token_scores):
        bar = "#" * int(round(40 * score))
        print(f"  {tok:10s} {score:.3f} {bar}")


cap = test[0]
feature = store.get(cap.image_id)
scene = corpus.scenes[cap.image_id]
print(f"image {cap.image_id} shows {scene}")

show("true caption", tasks.saliency(model, feature, cap))
img_vec = vse.encode_image(model, feature).value
cs = build_candidate_set(cap, kb, config)
for kind in ("numeral", "noun", "preposition"):
    # the adversary this image disagrees with most
    adv = min(cs.by_kind(kind), key=lambda a: float(
        img_vec @ vse.encode_caption(model, a.tokens).value))
    smap = tasks.saliency(model, feature, adv)
    changed = [i for i, (a, b) in enumerate(zip(cap.token_texts(), adv.tokens))
               if a != b]
    show(f"{kind} adversary (changed: "
         f"{', '.join(adv.tokens[i] for i in changed)})", smap)
    mean = float(np.mean(smap.token_scores))
    flags = {f"{adv.tokens[i]}[{i}]": bool(smap.token_scores[i] > mean)
             for i in changed}
    print(f"  -> token mean {mean:.3f}; manipulated tokens above it: {flags}")

# one image is an anecdote; sweep a dozen and count how often the first
# changed token draws above-average saliency
hits = {k: [0, 0] for k in ("numeral", "noun", "preposition")}
for cap2 in test[:12]:
    feat2 = store.get(cap2.image_id)
    iv = vse.encode_image(model, feat2).value
    cs2 = build_candidate_set(cap2, kb, config)
    for kind in hits:
        pool = cs2.by_kind(kind)
        if not pool:
            continue
        emb = vse.encode_captions_array(model, [list(a.tokens) for a in pool])
        adv2 = pool[int(np.argmin(emb @ iv))]
        smap2 = tasks.saliency(model, feat2, adv2)
        pos = next(i for i, (a, b) in
                   enumerate(zip(cap2.token_texts(), adv2.tokens)) if a != b)
        hits[kind][0] += int(smap2.token_scores[pos] > smap2.token_scores.mean())
        hits[kind][1] += 1
print("\nfirst-changed-token above mean saliency, over 12 images:")
for kind, (h, n) in hits.items():
    print(f"  {kind:12s} {h}/{n}")
