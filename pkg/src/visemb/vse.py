"""Joint image-caption embedding model and its three ranking objectives.

Images arrive as precomputed feature vectors and are projected into the
joint space by a single linear map. Captions go through a word-embedding
table and either an averaging encoder or a single-layer (optionally
bidirectional) gated recurrent encoder, then their own linear projection.
Both projections are bias-free, so encodings are linear in their inputs
before the optional L2 normalization.

The objectives share one similarity matrix S over a batch of aligned
pairs (row i = image i, column j = caption j, diagonal = positives):

* sum-over-negatives hinge ("vse"): every off-diagonal entry of both
  contrast directions contributes.
* hardest-in-batch hinge ("vsepp"): per pair, only the worst offender in
  each direction contributes. The hinge is applied before the max so the
  per-pair term is never negative.
* "vsec": vsepp plus, per pair, the worst of N sampled adversarial
  captions generated for that specific pair.

All losses are sums over the batch.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import numerics as nm
from .knowledge import DataError
from .metrics import best_rank_from_scores
from .numerics import Tensor

UNK = "<unk>"


# ---------------------------------------------------------------------------
# vocabulary and embedding table
# ---------------------------------------------------------------------------

def build_vocab(token_seqs):
    """Sorted unique tokens with the UNK word at row 0."""
    words = set()
    for seq in token_seqs:
        words.update(_tokens_of(seq))
    words.discard(UNK)
    return [UNK] + sorted(words)


@dataclass
class EmbeddingTable:
    words: list
    word_index: dict
    tensor: Tensor            # (V, d_word)
    trainable: bool = True

    @classmethod
    def create(cls, words, d_word, rng, vectors=None, trainable=True):
        mat = rng.uniform(-0.08, 0.08, size=(len(words), d_word))
        if vectors:
            for i, w in enumerate(words):
                if w in vectors:
                    mat[i] = vectors[w]
        t = Tensor(mat, trainable=trainable, name="embedding")
        return cls(words=list(words), word_index={w: i for i, w in enumerate(words)},
                   tensor=t, trainable=trainable)

    def indices(self, tokens):
        return np.array([self.word_index.get(w, 0) for w in tokens], dtype=np.intp)


def load_word_vectors(path):
    """Text format: one word per line followed by its vector components."""
    vectors = {}
    dim = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) < 2:
            raise DataError(f"{path}:{lineno}: expected word followed by reals")
        try:
            vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric vector component")
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise DataError(f"{path}:{lineno}: dimension {vec.size} != {dim}")
        vectors[parts[0]] = vec
    if not vectors:
        raise DataError(f"{path}: no word vectors found")
    return vectors


# ---------------------------------------------------------------------------
# image feature store
# ---------------------------------------------------------------------------

_FEATURE_MAGIC = b"VSEF"


class ImageFeatureStore:
    """image_id -> fixed-dimension feature vector; immutable during training."""

    def __init__(self, features):
        self.features = {str(k): np.asarray(v, dtype=np.float64).ravel()
                         for k, v in features.items()}
        if not self.features:
            raise DataError("feature store: no features")
        dims = {v.size for v in self.features.values()}
        if len(dims) != 1:
            raise DataError(f"feature store: mixed dimensions {sorted(dims)}")
        self.dim = dims.pop()

    def __len__(self):
        return len(self.features)

    def __contains__(self, image_id):
        return str(image_id) in self.features

    def ids(self):
        return sorted(self.features)

    def get(self, image_id):
        try:
            return self.features[str(image_id)]
        except KeyError:
            raise DataError(f"feature store: unknown image id {image_id!r}")

    def matrix(self, image_ids):
        return np.stack([self.get(i) for i in image_ids])


def save_features_text(path, features):
    with open(path, "w", encoding="utf-8") as fh:
        for image_id in sorted(features):
            vec = np.asarray(features[image_id], dtype=np.float64).ravel()
            fh.write(str(image_id) + "\t" + " ".join(repr(float(x)) for x in vec) + "\n")


def save_features_binary(path, features):
    with open(path, "wb") as fh:
        ids = sorted(features)
        dim = np.asarray(features[ids[0]]).size
        fh.write(_FEATURE_MAGIC)
        fh.write(struct.pack("<II", len(ids), dim))
        for image_id in ids:
            raw = str(image_id).encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(np.asarray(features[image_id], dtype="<f4").ravel().tobytes())


def load_features(path):
    """Auto-detects the binary format by its magic; anything else is text."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == _FEATURE_MAGIC:
        return _load_features_binary(path, raw)
    features = {}
    for lineno, line in enumerate(raw.decode("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise DataError(f"{path}:{lineno}: expected image_id<TAB>values")
        image_id, rest = line.split("\t", 1)
        try:
            vec = np.array([float(x) for x in rest.split()], dtype=np.float64)
        except ValueError:
            raise DataError(f"{path}:{lineno}: non-numeric feature component")
        if vec.size == 0:
            raise DataError(f"{path}:{lineno}: empty feature vector")
        features[image_id] = vec
    return ImageFeatureStore(features)


def _load_features_binary(path, raw):
    try:
        count, dim = struct.unpack_from("<II", raw, 4)
        offset = 12
        features = {}
        for _ in range(count):
            (id_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            image_id = raw[offset:offset + id_len].decode("utf-8")
            offset += id_len
            vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=offset)
            offset += 4 * dim
            features[image_id] = vec.astype(np.float64)
    except (struct.error, UnicodeDecodeError) as err:
        raise DataError(f"{path}: corrupt binary feature file ({err})")
    if len(features) != count:
        raise DataError(f"{path}: duplicate image ids in binary feature file")
    return ImageFeatureStore(features)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass
class ModelConfig:
    d_image: int
    d_word: int = 16
    d_hidden: int = 32
    d_joint: int = 32
    encoder: str = "recurrent"        # {"average", "recurrent"}
    bidirectional: bool = False
    normalize: bool = True

    def __post_init__(self):
        if self.encoder not in ("average", "recurrent"):
            raise ValueError(f"unknown encoder kind {self.encoder!r}")

    @property
    def d_encoder(self):
        if self.encoder == "average":
            return self.d_word
        return self.d_hidden * (2 if self.bidirectional else 1)


_GRU_GATES = ("z", "r", "h")


class JointModel:
    def __init__(self, config, embedding, params):
        self.config = config
        self.embedding = embedding
        self.params = params      # name -> Tensor, includes the embedding

    @property
    def vocab(self):
        return self.embedding.words

    def trainable_params(self):
        return {k: t for k, t in self.params.items() if t.trainable}


def init_gru(params, prefix, d_in, d_h, rng):
    k = 1.0 / np.sqrt(d_h)
    for gate in _GRU_GATES:
        params[f"{prefix}_w{gate}"] = Tensor(rng.uniform(-k, k, (d_in, d_h)),
                                             trainable=True, name=f"{prefix}_w{gate}")
        params[f"{prefix}_u{gate}"] = Tensor(rng.uniform(-k, k, (d_h, d_h)),
                                             trainable=True, name=f"{prefix}_u{gate}")
        params[f"{prefix}_b{gate}"] = Tensor(np.zeros(d_h),
                                             trainable=True, name=f"{prefix}_b{gate}")


def _xavier(rng, d_in, d_out):
    r = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-r, r, (d_in, d_out))


def make_model(config, vocab, seed=0, word_vectors=None, train_embedding=True):
    rng = np.random.default_rng(seed)
    embedding = EmbeddingTable.create(vocab, config.d_word, rng,
                                      vectors=word_vectors, trainable=train_embedding)
    params = {"embedding": embedding.tensor}
    params["image_proj"] = Tensor(_xavier(rng, config.d_image, config.d_joint),
                                  trainable=True, name="image_proj")
    params["caption_proj"] = Tensor(_xavier(rng, config.d_encoder, config.d_joint),
                                    trainable=True, name="caption_proj")
    if config.encoder == "recurrent":
        init_gru(params, "gru_f", config.d_word, config.d_hidden, rng)
        if config.bidirectional:
            init_gru(params, "gru_b", config.d_word, config.d_hidden, rng)
    return JointModel(config, embedding, params)


# ---------------------------------------------------------------------------
# encoders
# ---------------------------------------------------------------------------

def _tokens_of(c):
    if hasattr(c, "token_texts"):
        return list(c.token_texts())
    if hasattr(c, "tokens"):
        return list(c.tokens)
    return list(c)


def encode_images(model, features):
    """Project a (B, d_image) feature block into the joint space."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim == 1:
        feats = feats[None, :]
    out = nm.matmul(Tensor(feats), model.params["image_proj"])
    if model.config.normalize:
        out = nm.l2_normalize_rows(out)
    return out


def encode_image(model, feature):
    return nm.row(encode_images(model, np.asarray(feature)), 0)


def gru_steps(params, prefix, xs, n_rows, d_hidden):
    """Run a gated recurrent cell over a list of (n_rows, d_in) inputs.

    Returns the final hidden state; an empty input list yields the zero
    state (used for empty prefixes/suffixes downstream).
    """
    h = Tensor(np.zeros((n_rows, d_hidden)))
    for x in xs:
        z = nm.sigmoid(nm.add(nm.add(nm.matmul(x, params[f"{prefix}_wz"]),
                                     nm.matmul(h, params[f"{prefix}_uz"])), params[f"{prefix}_bz"]))
        r = nm.sigmoid(nm.add(nm.add(nm.matmul(x, params[f"{prefix}_wr"]),
                                     nm.matmul(h, params[f"{prefix}_ur"])), params[f"{prefix}_br"]))
        hh = nm.tanh(nm.add(nm.add(nm.matmul(x, params[f"{prefix}_wh"]),
                                   nm.matmul(nm.mul(r, h), params[f"{prefix}_uh"])), params[f"{prefix}_bh"]))
        h = nm.add(h, nm.mul(z, nm.sub(hh, h)))   # (1-z)*h + z*hh
    return h


def _gru_direction(model, prefix, index_matrix, reverse):
    emb = model.params["embedding"]
    length = index_matrix.shape[1]
    steps = range(length - 1, -1, -1) if reverse else range(length)
    xs = [nm.gather_rows(emb, index_matrix[:, t]) for t in steps]
    return gru_steps(model.params, prefix, xs, index_matrix.shape[0],
                     model.config.d_hidden)


def _encode_group(model, index_matrix):
    """Encoder output for a block of same-length captions, (B, d_encoder)."""
    if model.config.encoder == "average":
        emb = model.params["embedding"]
        acc = nm.gather_rows(emb, index_matrix[:, 0])
        for t in range(1, index_matrix.shape[1]):
            acc = nm.add(acc, nm.gather_rows(emb, index_matrix[:, t]))
        return nm.scale(acc, 1.0 / index_matrix.shape[1])
    h = _gru_direction(model, "gru_f", index_matrix, reverse=False)
    if model.config.bidirectional:
        hb = _gru_direction(model, "gru_b", index_matrix, reverse=True)
        h = nm.concat([h, hb], axis=1)
    return h


def encode_captions(model, captions):
    """Joint-space encodings for a list of captions, rows in input order.

    Captions of equal length are encoded together; groups are stitched
    back into the original order afterwards.
    """
    seqs = [_tokens_of(c) for c in captions]
    if not seqs:
        raise DataError("encode_captions: empty caption list")
    for i, s in enumerate(seqs):
        if not s:
            raise DataError(f"encode_captions: caption {i} is empty")
    idx_seqs = [model.embedding.indices(s) for s in seqs]
    order = sorted(range(len(seqs)), key=lambda i: len(idx_seqs[i]))
    blocks = []
    start = 0
    while start < len(order):
        length = len(idx_seqs[order[start]])
        end = start
        while end < len(order) and len(idx_seqs[order[end]]) == length:
            end += 1
        members = order[start:end]
        matrix = np.stack([idx_seqs[i] for i in members])
        blocks.append(_encode_group(model, matrix))
        start = end
    stacked = blocks[0] if len(blocks) == 1 else nm.concat(blocks, axis=0)
    inverse = np.empty(len(order), dtype=np.intp)
    for position, original in enumerate(order):
        inverse[original] = position
    enc = nm.gather_rows(stacked, inverse)
    out = nm.matmul(enc, model.params["caption_proj"])
    if model.config.normalize:
        out = nm.l2_normalize_rows(out)
    return out


def encode_caption(model, caption):
    return nm.row(encode_captions(model, [caption]), 0)


def similarity(model, feature, caption):
    """Dot product of the two joint encodings; in [-1, 1] when normalized."""
    return nm.dot(encode_image(model, feature), encode_caption(model, caption)).item()


def similarity_matrix(image_emb, caption_emb):
    return nm.matmul(image_emb, nm.transpose(caption_emb))


def encode_captions_array(model, captions, chunk=512):
    """Forward-only encodings as a plain array, computed in chunks."""
    captions = list(captions)
    parts = []
    for start in range(0, len(captions), chunk):
        parts.append(encode_captions(model, captions[start:start + chunk]).value.copy())
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _contrast_matrices(scores, alpha):
    """Hinged contrast matrices with zeroed diagonals.

    caption side: [alpha - s(i,i) + s(i,j)]+  (contrast caption j for image i)
    image side:   [alpha - s(j,j) + s(i,j)]+  (contrast image i for caption j)
    """
    n = scores.shape[0]
    if n == 1:
        warnings.warn("contrastive loss over a batch of 1 pair is zero")
    d = nm.diag(scores)
    mask = Tensor(1.0 - np.eye(n))
    # subtracting d as a column vector = row-vector subtraction on the transpose
    cap = nm.transpose(nm.sub(nm.transpose(scores), d))
    img = nm.sub(scores, d)
    cap_h = nm.mul(nm.hinge(nm.shift(cap, alpha)), mask)
    img_h = nm.mul(nm.hinge(nm.shift(img, alpha)), mask)
    return cap_h, img_h


def loss_vse_from_scores(scores, alpha):
    cap_h, img_h = _contrast_matrices(scores, alpha)
    return nm.add(nm.sum_all(cap_h), nm.sum_all(img_h))


def loss_vsepp_from_scores(scores, alpha):
    cap_h, img_h = _contrast_matrices(scores, alpha)
    hardest_caption = nm.row_max(cap_h)                 # per image row
    hardest_image = nm.row_max(nm.transpose(img_h))     # per caption column
    return nm.add(nm.sum_all(hardest_caption), nm.sum_all(hardest_image))


def intra_term_from_scores(scores, candidate_scores, alpha):
    """Sum over pairs of the worst sampled intra-pair violation.

    ``candidate_scores`` holds one 1-D tensor of s(i, c'') values per pair
    (None or empty -> that pair contributes 0).
    """
    d = nm.diag(scores)
    terms = []
    for i, cand in enumerate(candidate_scores):
        if cand is None or cand.value.size == 0:
            terms.append(Tensor(0.0))
            continue
        s_pos = nm.at(d, i)
        rep = nm.stack_scalars([s_pos] * cand.value.size)
        viol = nm.hinge(nm.shift(nm.sub(cand, rep), alpha))
        terms.append(nm.vec_max(viol))
    return nm.sum_all(nm.stack_scalars(terms))


def _pair_scores(model, batch):
    features = np.stack([np.asarray(f, dtype=np.float64) for f, _ in batch])
    img = encode_images(model, features)
    cap = encode_captions(model, [c for _, c in batch])
    return img, similarity_matrix(img, cap)


def loss_vse(batch, model, alpha=0.2):
    """batch = list of (image feature, caption tokens) aligned pairs."""
    _, scores = _pair_scores(model, batch)
    return loss_vse_from_scores(scores, alpha)


def loss_vsepp(batch, model, alpha=0.2):
    _, scores = _pair_scores(model, batch)
    return loss_vsepp_from_scores(scores, alpha)


def _candidate_score_vectors(model, img, candidates):
    """Per-pair 1-D tensors of similarity to that pair's sampled candidates."""
    flat = []
    spans = []
    for per_pair in candidates:
        per_pair = list(per_pair)
        spans.append((len(flat), len(flat) + len(per_pair)))
        flat.extend(per_pair)
    if not flat:
        return [None] * len(candidates)
    emb = encode_captions(model, flat)
    out = []
    for i, (lo, hi) in enumerate(spans):
        if lo == hi:
            out.append(None)
            continue
        block = nm.gather_rows(emb, np.arange(lo, hi))
        out.append(nm.matmul(block, nm.row(img, i)))
    return out


def loss_vsec(batch, model, alpha=0.2, candidates=None):
    """vsepp plus the intra-pair term over sampled adversarial captions.

    ``candidates[i]`` is the list of candidate token sequences sampled for
    pair i; None or all-empty reduces exactly to loss_vsepp.
    """
    img, scores = _pair_scores(model, batch)
    total = loss_vsepp_from_scores(scores, alpha)
    if candidates is None or all(not list(c) for c in candidates):
        return total
    cand_scores = _candidate_score_vectors(model, img, candidates)
    return nm.add(total, intra_term_from_scores(scores, cand_scores, alpha))


def intra_term(batch, model, alpha=0.2, candidates=None):
    """The extra term of loss_vsec, computed on its own."""
    if candidates is None:
        return Tensor(0.0)
    img, scores = _pair_scores(model, batch)
    cand_scores = _candidate_score_vectors(model, img, candidates)
    return intra_term_from_scores(scores, cand_scores, alpha)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainingConfig:
    loss: str = "vsec"                 # {"vse", "vsepp", "vsec"}
    margin: float = 0.2
    intra_n: int = 8
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    base_lr: float = 1e-3
    lr_decay: float = 0.1
    lr_decay_every: int = 15
    model: ModelConfig = None

    def __post_init__(self):
        if self.loss not in ("vse", "vsepp", "vsec"):
            raise ValueError(f"unknown loss kind {self.loss!r}")
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.intra_n < 1:
            raise ValueError("intra_n must be >= 1")


def pairs_from_captions(captions, store):
    """(feature, tokens) training pairs; every image id must resolve."""
    return [(store.get(c.image_id), _tokens_of(c)) for c in captions]


def validation_r_at_1(model, captions, store):
    """Caption-retrieval R@1 over a held-out split (one query per image)."""
    ids = sorted({c.image_id for c in captions})
    img_emb = encode_images(model, store.matrix(ids)).value
    cap_emb = encode_captions_array(model, captions)
    scores = img_emb @ cap_emb.T
    by_image = {}
    for j, c in enumerate(captions):
        by_image.setdefault(c.image_id, []).append(j)
    hits = 0
    for qi, image_id in enumerate(ids):
        if best_rank_from_scores(scores[qi], by_image[image_id]) <= 1:
            hits += 1
    return 100.0 * hits / len(ids)


def train(corpus, store, candidate_sets, config, validation=None, log_fn=None):
    """Optimize a joint model on aligned (image, caption) pairs.

    corpus: list of annotated captions (image_id + tokens).
    store: ImageFeatureStore covering every image id in the corpus.
    candidate_sets: {caption_id: [AdversarialCaption]} or None (only used
    by the "vsec" loss; missing entries mean an empty pool).
    Returns (model, log) where log has one entry per epoch with the mean
    per-pair loss, the effective learning rate, and validation R@1 when a
    validation split is given. Deterministic for a fixed config.
    """
    corpus = list(corpus)
    if not corpus:
        raise DataError("train: empty corpus")
    candidate_sets = candidate_sets or {}
    vocab_sources = [_tokens_of(c) for c in corpus]
    for pool in candidate_sets.values():
        vocab_sources.extend(_tokens_of(a) for a in pool)
    vocab = build_vocab(vocab_sources)
    model_config = config.model or ModelConfig(d_image=store.dim)
    if model_config.d_image != store.dim:
        raise DataError(f"train: model expects d_image={model_config.d_image}, "
                        f"features have {store.dim}")
    model = make_model(model_config, vocab, seed=config.seed)
    params = model.trainable_params()
    state = nm.AdamState(params, base_lr=config.base_lr, decay=config.lr_decay,
                         decay_every=config.lr_decay_every)

    pairs = pairs_from_captions(corpus, store)
    pools = [list(candidate_sets.get(c.caption_id, ())) for c in corpus]
    rng_batches = np.random.default_rng(config.seed)
    rng_candidates = np.random.default_rng(config.seed + 0x5EED)

    log = []
    for epoch in range(config.epochs):
        order = rng_batches.permutation(len(pairs))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            members = order[start:start + config.batch_size]
            batch = [pairs[i] for i in members]
            if config.loss == "vse":
                loss = loss_vse(batch, model, config.margin)
            elif config.loss == "vsepp":
                loss = loss_vsepp(batch, model, config.margin)
            else:
                from .adversary import sample_negatives
                candidates = [[_tokens_of(a) for a in
                               sample_negatives(pools[i], config.intra_n, rng_candidates)]
                              for i in members]
                loss = loss_vsec(batch, model, config.margin, candidates)
            if not np.isfinite(loss.value):
                raise FloatingPointError(
                    f"train: non-finite loss at epoch {epoch} step {start // config.batch_size}")
            nm.backward(loss)
            grads = {k: t.grad for k, t in params.items()}
            nm.adam_step(state, params, grads, epoch)
            nm.zero_grads(params.values())
            epoch_loss += float(loss.value)
        entry = {"epoch": epoch,
                 "loss": epoch_loss / len(pairs),
                 "lr": state.effective_lr(epoch)}
        if validation:
            entry["val_r_at_1"] = validation_r_at_1(model, validation, store)
        log.append(entry)
        if log_fn:
            log_fn(entry)
    return model, log


# ---------------------------------------------------------------------------
# model checkpoints
# ---------------------------------------------------------------------------

def save_model(prefix, model):
    meta = {"config": asdict(model.config), "vocab": model.vocab,
            "train_embedding": model.embedding.trainable}
    nm.save_checkpoint(prefix, model.params, meta=meta)


def load_model(prefix):
    arrays, meta = nm.load_checkpoint(prefix)
    config = ModelConfig(**meta["config"])
    vocab = meta["vocab"]
    model = make_model(config, vocab, seed=0,
                       train_embedding=meta.get("train_embedding", True))
    for name, tensor in model.params.items():
        if name not in arrays:
            raise DataError(f"checkpoint {prefix}: missing tensor {name!r}")
        if tuple(arrays[name].shape) != tensor.value.shape:
            raise DataError(f"checkpoint {prefix}: shape mismatch for {name!r}")
        tensor.value = arrays[name].astype(np.float64)
    return model
