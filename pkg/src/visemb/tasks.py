"""Evaluation protocols built on the embedding model.

* attack_eval: caption retrieval where each image's candidate pool is the
  full test split plus adversarial rewrites of its own captions.
* plural_split_eval: the same protocol restricted to images with plural
  nouns, attacked only through their plural numerals.
* saliency: gradient of the image-caption similarity w.r.t. the image
  feature and the word-embedding inputs.
* word-object retrieval: an interaction-space MLP scores (image, word)
  pairs; mean average precision over per-image object rankings.
* fill-in-the-blank: predict the word vector of a blanked noun or
  preposition from the caption context and the image feature.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from . import numerics as nm
from .adversary import (GeneratorConfig, gen_noun, gen_numeral, gen_preposition,
                        gen_shuffle, noun_replacement_pool,
                        preposition_replacement_pool, _interleave)
from .knowledge import (DataError, KnowledgeConfig, is_frequent_concrete_head,
                        related, related_direct)
from .lingua import NOUN, PREP, head_lemmas
from .metrics import (RankingResult, average_precision, best_rank_from_scores,
                      ranking_report, recall_at_k)
from .numerics import Tensor
from .vse import (_tokens_of, encode_captions_array, encode_images, gru_steps,
                  init_gru)


# ---------------------------------------------------------------------------
# adversarial attack evaluation
# ---------------------------------------------------------------------------

@dataclass
class AttackSpec:
    """Adversaries added per caption, by attack type.

    "relation" pools the shuffle and preposition generators. The base
    retrieval set is always the full caption list passed to attack_eval.
    """
    noun: int = 20
    numeral: int = 20
    relation: int = 20

    def __post_init__(self):
        if min(self.noun, self.numeral, self.relation) < 0:
            raise ValueError("adversary counts must be >= 0")


def _first_n_distinct(candidates, n, banned):
    out = []
    if n <= 0:
        return out
    seen = set(banned)
    for cand in candidates:
        if cand.tokens in seen:
            continue
        seen.add(cand.tokens)
        out.append(cand)
        if len(out) == n:
            break
    return out


def caption_attacks(caption, kb, spec, config, banned, noun_pool=None, prep_pool=None):
    """The per-type adversary lists for one caption, or None if any type
    cannot supply its count."""
    by_type = {
        "noun": _first_n_distinct(gen_noun(caption, kb, config, pool=noun_pool),
                                  spec.noun, banned),
        "numeral": _first_n_distinct(gen_numeral(caption, kb, config),
                                     spec.numeral, banned),
        "relation": _first_n_distinct(
            _interleave([gen_shuffle(caption, kb, config),
                         gen_preposition(caption, kb, config, pool=prep_pool)]),
            spec.relation, banned),
    }
    want = {"noun": spec.noun, "numeral": spec.numeral, "relation": spec.relation}
    for kind, adversaries in by_type.items():
        if len(adversaries) < want[kind]:
            warnings.warn(f"caption {caption.caption_id}: only {len(adversaries)} "
                          f"{kind} adversaries of {want[kind]} required")
            return None
    return by_type


def _group_by_image(captions):
    groups = {}
    for c in captions:
        groups.setdefault(c.image_id, []).append(c)
    return {i: sorted(caps, key=lambda c: c.caption_id)
            for i, caps in sorted(groups.items())}


def attack_eval(model, captions, store, kb, spec=None, gen_config=None):
    """Rank base + adversarial candidates for every test image.

    Returns a report with clean and attacked blocks plus a per-attack-type
    breakdown. Images whose captions cannot supply the per-type adversary
    counts are excluded (with a warning).
    """
    spec = spec or AttackSpec()
    gen_config = gen_config or GeneratorConfig()
    groups = _group_by_image(captions)
    base = [c for caps in groups.values() for c in caps]
    base_emb = encode_captions_array(model, base)
    image_ids = list(groups)
    img_emb = encode_images(model, store.matrix(image_ids)).value
    base_index = {c.caption_id: j for j, c in enumerate(base)}

    noun_pool = noun_replacement_pool(kb, gen_config)
    prep_pool = preposition_replacement_pool(kb, gen_config)

    kinds = ("noun", "numeral", "relation")
    ranks = {"clean": [], "attacked": []}
    type_ranks = {k: [] for k in kinds}
    excluded = []
    candidates_per_image = None
    for qi, image_id in enumerate(image_ids):
        own = groups[image_id]
        banned = {c.token_texts() for c in own}
        per_caption = [caption_attacks(c, kb, spec, gen_config, banned,
                                       noun_pool=noun_pool, prep_pool=prep_pool)
                       for c in own]
        if any(p is None for p in per_caption):
            warnings.warn(f"image {image_id}: excluded from the attack protocol")
            excluded.append(image_id)
            continue
        adv_blocks = {k: [a for p in per_caption for a in p[k]] for k in kinds}
        all_adv = [a for k in kinds for a in adv_blocks[k]]
        positives = [base_index[c.caption_id] for c in own]
        base_scores = img_emb[qi] @ base_emb.T
        ranks["clean"].append(best_rank_from_scores(base_scores, positives))
        if all_adv:
            adv_emb = encode_captions_array(model, all_adv)
            adv_scores = img_emb[qi] @ adv_emb.T
        else:
            adv_scores = np.zeros(0)
        candidates_per_image = base_scores.size + adv_scores.size
        ranks["attacked"].append(best_rank_from_scores(
            np.concatenate([base_scores, adv_scores]), positives))
        offset = 0
        for kind in kinds:
            block = adv_scores[offset:offset + len(adv_blocks[kind])]
            offset += len(adv_blocks[kind])
            type_ranks[kind].append(best_rank_from_scores(
                np.concatenate([base_scores, block]), positives))
    if not ranks["clean"]:
        raise DataError("attack_eval: every image was excluded")
    return {
        "clean": ranking_report(ranks["clean"]),
        "attacked": ranking_report(ranks["attacked"]),
        "by_type": {k: ranking_report(type_ranks[k]) for k in kinds},
        "n_images": len(ranks["clean"]),
        "excluded_images": excluded,
        "candidates_per_image": candidates_per_image,
        "spec": asdict(spec),
    }


# ---------------------------------------------------------------------------
# plural split
# ---------------------------------------------------------------------------

def has_plural_noun(caption):
    return any(t.pos == NOUN and t.text != t.lemma for t in caption.tokens)


def plural_numeral_attacks(caption, kb, config):
    """Numeral adversaries that only alter positions with plural values."""
    texts = [t.text for t in caption.tokens]
    kept = []
    for adv in gen_numeral(caption, kb, config):
        changed = [p for p in caption.numeral_positions if adv.tokens[p] != texts[p]]
        if changed and all(caption.numeral_positions[p] >= 2 for p in changed):
            kept.append(adv)
    return kept


def plural_split_eval(model, captions, store, kb, gen_config=None, count=10):
    """Attack only the plural numerals of images that have plural nouns."""
    gen_config = gen_config or GeneratorConfig()
    groups = {i: caps for i, caps in _group_by_image(captions).items()
              if any(has_plural_noun(c) for c in caps)}
    if not groups:
        raise DataError("plural_split_eval: no images with plural nouns")
    base = [c for caps in groups.values() for c in caps]
    base_emb = encode_captions_array(model, base)
    image_ids = list(groups)
    img_emb = encode_images(model, store.matrix(image_ids)).value
    base_index = {c.caption_id: j for j, c in enumerate(base)}

    clean_ranks, attacked_ranks, excluded = [], [], []
    for qi, image_id in enumerate(image_ids):
        own = groups[image_id]
        banned = {c.token_texts() for c in own}
        adversaries = []
        short = False
        for c in own:
            advs = _first_n_distinct(plural_numeral_attacks(c, kb, gen_config),
                                     count, banned)
            if len(advs) < count:
                warnings.warn(f"caption {c.caption_id}: only {len(advs)} plural "
                              f"numeral adversaries of {count} required")
                short = True
                break
            adversaries.extend(advs)
        if short:
            excluded.append(image_id)
            continue
        positives = [base_index[c.caption_id] for c in own]
        base_scores = img_emb[qi] @ base_emb.T
        clean_ranks.append(best_rank_from_scores(base_scores, positives))
        adv_scores = (img_emb[qi] @ encode_captions_array(model, adversaries).T
                      if adversaries else np.zeros(0))
        attacked_ranks.append(best_rank_from_scores(
            np.concatenate([base_scores, adv_scores]), positives))
    if not clean_ranks:
        raise DataError("plural_split_eval: every plural image was excluded")
    return {
        "clean": ranking_report(clean_ranks),
        "attacked": ranking_report(attacked_ranks),
        "n_images": len(clean_ranks),
        "excluded_images": excluded,
        "adversaries_per_caption": count,
    }


# ---------------------------------------------------------------------------
# saliency
# ---------------------------------------------------------------------------

@dataclass
class SaliencyMap:
    tokens: list
    token_scores: np.ndarray      # L1-normalized (sums to 1) unless zero
    image_scores: np.ndarray      # Linf-normalized (max is 1) unless zero
    similarity: float
    zero_image: bool = False
    zero_caption: bool = False

    def as_dict(self):
        return {
            "tokens": [{"text": t, "score": float(s)}
                       for t, s in zip(self.tokens, self.token_scores)],
            "image_dims": [float(x) for x in self.image_scores],
            "similarity": self.similarity,
            "zero_image": self.zero_image,
            "zero_caption": self.zero_caption,
        }


def _encode_caption_with_leaves(model, tokens):
    """Caption encoding where each input word vector is its own leaf."""
    p = model.params
    cfg = model.config
    emb = p["embedding"].value
    idx = model.embedding.indices(tokens)
    leaves = [Tensor(emb[i].copy()) for i in idx]
    if cfg.encoder == "average":
        acc = leaves[0]
        for leaf in leaves[1:]:
            acc = nm.add(acc, leaf)
        enc = nm.scale(acc, 1.0 / len(leaves))
    else:
        xs = [nm.reshape(leaf, (1, cfg.d_word)) for leaf in leaves]
        h = gru_steps(p, "gru_f", xs, 1, cfg.d_hidden)
        if cfg.bidirectional:
            hb = gru_steps(p, "gru_b", list(reversed(xs)), 1, cfg.d_hidden)
            h = nm.concat([h, hb], axis=1)
        enc = nm.reshape(h, (cfg.d_encoder,))
    out = nm.matmul(enc, p["caption_proj"])
    if cfg.normalize:
        out = nm.l2_normalize(out)
    return out, leaves


def saliency(model, feature, caption):
    """Gradient magnitudes of s(image, caption) w.r.t. the inputs."""
    tokens = _tokens_of(caption)
    if not tokens:
        raise DataError("saliency: empty caption")
    feat_leaf = Tensor(np.asarray(feature, dtype=np.float64).ravel())
    img_vec = nm.matmul(feat_leaf, model.params["image_proj"])
    if model.config.normalize:
        img_vec = nm.l2_normalize(img_vec)
    cap_vec, leaves = _encode_caption_with_leaves(model, tokens)
    score = nm.dot(img_vec, cap_vec)
    nm.backward(score)

    image_scores = np.abs(feat_leaf.grad)
    peak = image_scores.max()
    zero_image = bool(peak == 0.0)
    if not zero_image:
        image_scores = image_scores / peak

    token_scores = np.array([0.0 if leaf.grad is None
                             else float(np.linalg.norm(leaf.grad))
                             for leaf in leaves])
    total = token_scores.sum()
    zero_caption = bool(total == 0.0)
    if not zero_caption:
        token_scores = token_scores / total

    return SaliencyMap(tokens=tokens, token_scores=token_scores,
                       image_scores=image_scores, similarity=float(score.value),
                       zero_image=zero_image, zero_caption=zero_caption)


# ---------------------------------------------------------------------------
# word-object retrieval through the interaction space
# ---------------------------------------------------------------------------

@dataclass
class ImageObjects:
    image_id: str
    positives: list
    negatives: list


@dataclass
class WordObjectDataset:
    entries: list                 # ImageObjects with non-empty positives
    excluded: list = field(default_factory=list)
    frequency_threshold: int = 200


def build_word_object_dataset(captions, kb, config=None, relation="closure"):
    """Positive objects = frequent noun-phrase heads of an image's captions;
    negatives = frequent concrete objects unrelated to every positive."""
    config = config or KnowledgeConfig()
    related_fn = {"closure": related, "direct": related_direct}[relation]
    object_vocab = [w for w in sorted(kb.lexicon_words())
                    if is_frequent_concrete_head(kb, config, w)]
    entries, excluded = [], []
    for image_id, caps in _group_by_image(captions).items():
        heads = set()
        for c in caps:
            heads.update(head_lemmas(c))
        positives = sorted(h for h in heads
                           if kb.frequency.get(h, 0) > config.frequency_threshold)
        if not positives:
            excluded.append(image_id)
            continue
        negatives = [o for o in object_vocab if o not in positives
                     and all(not related_fn(kb, o, p) for p in positives)]
        entries.append(ImageObjects(image_id=image_id, positives=positives,
                                    negatives=negatives))
    return WordObjectDataset(entries=entries, excluded=excluded,
                             frequency_threshold=config.frequency_threshold)


@dataclass
class ScorerConfig:
    hidden: int = 64
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    base_lr: float = 1e-3


class InteractionScorer:
    """One-hidden-layer MLP over the flattened word-image outer product.

    The word vectors and image features are fixed inputs; only the MLP
    parameters train.
    """

    def __init__(self, d_word, d_image, config):
        rng = np.random.default_rng(config.seed)
        d_in = d_word * d_image
        r1 = np.sqrt(6.0 / (d_in + config.hidden))
        r2 = np.sqrt(6.0 / (config.hidden + 2))
        self.config = config
        self.d_word = d_word
        self.d_image = d_image
        self.params = {
            "w1": Tensor(rng.uniform(-r1, r1, (d_in, config.hidden)),
                         trainable=True, name="w1"),
            "b1": Tensor(np.zeros(config.hidden), trainable=True, name="b1"),
            # final column folds in the output bias via a constant 1 input
            "w2": Tensor(rng.uniform(-r2, r2, (config.hidden + 1, 1)),
                         trainable=True, name="w2"),
        }

    def interaction(self, word_vec, image_feat):
        return np.outer(word_vec, image_feat).ravel()

    def logits(self, interactions):
        """(B, d_in) constant block -> (B,) logit tensor."""
        x = Tensor(np.asarray(interactions, dtype=np.float64))
        h = nm.tanh(nm.add(nm.matmul(x, self.params["w1"]), self.params["b1"]))
        ones = Tensor(np.ones((h.value.shape[0], 1)))
        h1 = nm.concat([h, ones], axis=1)
        return nm.reshape(nm.matmul(h1, self.params["w2"]), (h.value.shape[0],))

    def score(self, word_vec, image_feat):
        return float(self.logits(self.interaction(word_vec, image_feat)[None, :]).value[0])


def _scorer_samples(dataset, word_vectors, store):
    samples = []
    for entry in dataset.entries:
        feat = store.get(entry.image_id)
        for w in entry.positives:
            samples.append((w, feat, 1.0))
        for w in entry.negatives:
            samples.append((w, feat, 0.0))
    if not any(label == 0.0 for _, _, label in samples):
        raise DataError("word-object dataset has no negatives")
    missing = sorted({w for w, _, _ in samples if w not in word_vectors})
    if missing:
        raise DataError(f"no word vector for: {missing[:5]}")
    return samples


def train_interaction_scorer(dataset, word_vectors, store, config=None):
    """Binary cross-entropy over (image, object word, label) triples."""
    config = config or ScorerConfig()
    samples = _scorer_samples(dataset, word_vectors, store)
    d_word = len(next(iter(word_vectors.values())))
    scorer = InteractionScorer(d_word, store.dim, config)
    interactions = np.stack([scorer.interaction(word_vectors[w], f)
                             for w, f, _ in samples])
    labels = np.array([label for _, _, label in samples])
    state = nm.AdamState(scorer.params, base_lr=config.base_lr)
    rng = np.random.default_rng(config.seed)
    log = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(samples))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            members = order[start:start + config.batch_size]
            loss = nm.bce_with_logits(scorer.logits(interactions[members]),
                                      labels[members])
            if not np.isfinite(loss.value):
                raise FloatingPointError("scorer training: non-finite loss")
            nm.backward(loss)
            grads = {k: t.grad for k, t in scorer.params.items()}
            nm.adam_step(state, scorer.params, grads, epoch)
            nm.zero_grads(scorer.params.values())
            epoch_loss += float(loss.value) * len(members)
        log.append({"epoch": epoch, "loss": epoch_loss / len(samples)})
    return scorer, log


def word_retrieval_map(scorer, dataset, word_vectors, store):
    """Rank each image's positive+negative objects; mean average precision."""
    per_image = {}
    for entry in dataset.entries:
        words = entry.positives + entry.negatives
        feat = store.get(entry.image_id)
        interactions = np.stack([scorer.interaction(word_vectors[w], feat)
                                 for w in words])
        scores = scorer.logits(interactions).value
        result = RankingResult.from_scores(entry.image_id, words, scores,
                                           entry.positives)
        per_image[entry.image_id] = average_precision(result)
    if not per_image:
        raise DataError("word_retrieval_map: empty dataset")
    return {"map": float(np.mean(list(per_image.values()))),
            "n_images": len(per_image),
            "per_image_ap": per_image}


# ---------------------------------------------------------------------------
# fill-in-the-blank
# ---------------------------------------------------------------------------

BLANK_CATEGORIES = {NOUN: "noun", PREP: "preposition"}


@dataclass
class FitbSample:
    image_id: str
    caption_id: str
    position: int
    prefix: list
    suffix: list
    target: str
    category: str


def build_fitb_dataset(captions):
    """One sample per noun or preposition token of each caption."""
    samples = []
    for cap in captions:
        texts = [t.text for t in cap.tokens]
        for t in cap.tokens:
            category = BLANK_CATEGORIES.get(t.pos)
            if category is None:
                continue
            samples.append(FitbSample(
                image_id=cap.image_id, caption_id=cap.caption_id,
                position=t.index, prefix=texts[:t.index],
                suffix=texts[t.index + 1:], target=t.text, category=category))
    return samples


@dataclass
class FitbConfig:
    d_word: int = 16
    d_hidden: int = 32
    mlp_hidden: int = 64
    epochs: int = 40
    batch_size: int = 32
    seed: int = 0
    base_lr: float = 1e-3
    lr_decay: float = 0.1
    lr_decay_every: int = 15


class FitbModel:
    """Forward GRU over the prefix, backward GRU over the suffix, image
    feature, two-layer MLP to a word-vector prediction.

    Word vectors are fixed (the prediction target must not be free to
    move); only the GRUs and the MLP train.
    """

    def __init__(self, vocab, d_image, config):
        rng = np.random.default_rng(config.seed)
        self.config = config
        self.vocab = list(vocab)
        self.word_index = {w: i for i, w in enumerate(self.vocab)}
        table = rng.normal(0.0, 1.0, (len(self.vocab), config.d_word))
        self.word_table = table / np.linalg.norm(table, axis=1, keepdims=True)
        self.d_image = d_image
        params = {}
        init_gru(params, "fwd", config.d_word, config.d_hidden, rng)
        init_gru(params, "bwd", config.d_word, config.d_hidden, rng)
        d_ctx = 2 * config.d_hidden + d_image
        r1 = np.sqrt(6.0 / (d_ctx + config.mlp_hidden))
        r2 = np.sqrt(6.0 / (config.mlp_hidden + config.d_word))
        params["mlp_w1"] = Tensor(rng.uniform(-r1, r1, (d_ctx, config.mlp_hidden)),
                                  trainable=True, name="mlp_w1")
        params["mlp_b1"] = Tensor(np.zeros(config.mlp_hidden), trainable=True,
                                  name="mlp_b1")
        params["mlp_w2"] = Tensor(rng.uniform(-r2, r2, (config.mlp_hidden, config.d_word)),
                                  trainable=True, name="mlp_w2")
        params["mlp_b2"] = Tensor(np.zeros(config.d_word), trainable=True,
                                  name="mlp_b2")
        self.params = params

    def indices(self, tokens):
        return [self.word_index.get(w, 0) for w in tokens]

    def predict_batch(self, samples, store):
        """(B, d_word) predictions for same-shape samples (equal prefix and
        suffix lengths)."""
        n = len(samples)
        cfg = self.config

        def side(token_lists, prefix, reverse):
            length = len(token_lists[0])
            if length == 0:
                return Tensor(np.zeros((n, cfg.d_hidden)))
            idx = np.array([self.indices(t) for t in token_lists], dtype=np.intp)
            order = range(length - 1, -1, -1) if reverse else range(length)
            xs = [Tensor(self.word_table[idx[:, t]]) for t in order]
            return gru_steps(self.params, prefix, xs, n, cfg.d_hidden)

        h_f = side([s.prefix for s in samples], "fwd", reverse=False)
        h_b = side([s.suffix for s in samples], "bwd", reverse=True)
        img = Tensor(np.stack([store.get(s.image_id) for s in samples]))
        ctx = nm.concat([h_f, h_b, img], axis=1)
        h = nm.tanh(nm.add(nm.matmul(ctx, self.params["mlp_w1"]), self.params["mlp_b1"]))
        return nm.add(nm.matmul(h, self.params["mlp_w2"]), self.params["mlp_b2"])


def fitb_vocab(samples):
    words = set()
    for s in samples:
        words.update(s.prefix)
        words.update(s.suffix)
        words.add(s.target)
    return sorted(words)


def _fitb_groups(samples):
    groups = {}
    for s in samples:
        groups.setdefault((len(s.prefix), len(s.suffix)), []).append(s)
    return [groups[k] for k in sorted(groups)]


def fitb_loss(model, samples, store):
    """Mean cosine distance between predictions and target word vectors."""
    pred = model.predict_batch(samples, store)
    terms = []
    for i, s in enumerate(samples):
        target = Tensor(model.word_table[model.word_index[s.target]])
        terms.append(nm.cosine_distance(nm.row(pred, i), target))
    return nm.scale(nm.sum_all(nm.stack_scalars(terms)), 1.0 / len(samples))


def train_fitb(samples, store, config=None):
    config = config or FitbConfig()
    samples = list(samples)
    if not samples:
        raise DataError("train_fitb: no samples")
    model = FitbModel(fitb_vocab(samples), store.dim, config)
    state = nm.AdamState(model.params, base_lr=config.base_lr,
                         decay=config.lr_decay, decay_every=config.lr_decay_every)
    rng = np.random.default_rng(config.seed)
    groups = _fitb_groups(samples)
    log = []
    for epoch in range(config.epochs):
        batches = []
        for group in groups:
            order = rng.permutation(len(group))
            for start in range(0, len(order), config.batch_size):
                batches.append([group[i] for i in order[start:start + config.batch_size]])
        rng.shuffle(batches)
        epoch_loss = 0.0
        for batch in batches:
            loss = fitb_loss(model, batch, store)
            if not np.isfinite(loss.value):
                raise FloatingPointError("fitb training: non-finite loss")
            nm.backward(loss)
            grads = {k: t.grad for k, t in model.params.items()}
            nm.adam_step(state, model.params, grads, epoch)
            nm.zero_grads(model.params.values())
            epoch_loss += float(loss.value) * len(batch)
        log.append({"epoch": epoch, "loss": epoch_loss / len(samples)})
    return model, log


def fitb_eval(model, samples, store):
    """Rank the vocabulary by cosine similarity to each prediction.

    Reports R@1/R@10 for noun blanks, preposition blanks, and all blanks.
    """
    samples = list(samples)
    if not samples:
        raise DataError("fitb_eval: no samples")
    table = model.word_table
    ranks = {"noun": [], "preposition": [], "all": []}
    for group in _fitb_groups(samples):
        pred = model.predict_batch(group, store).value
        norms = np.linalg.norm(pred, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        sims = (pred / norms) @ table.T
        for i, s in enumerate(group):
            rank = best_rank_from_scores(sims[i], [model.word_index[s.target]])
            ranks[s.category].append(rank)
            ranks["all"].append(rank)
    report = {}
    for category, rs in ranks.items():
        if rs:
            report[category] = {"r_at_1": recall_at_k(rs, 1),
                                "r_at_10": recall_at_k(rs, 10),
                                "n_blanks": len(rs)}
        else:
            report[category] = {"r_at_1": None, "r_at_10": None, "n_blanks": 0}
    return report
