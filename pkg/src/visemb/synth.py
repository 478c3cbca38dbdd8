"""Synthetic grounded corpus: scenes of two counted objects in a spatial
relation, with feature vectors that encode the scene exactly (plus noise).

Each image is a tuple (count1, obj1, relation, count2, obj2). Its feature
vector concatenates one-hot encodings of both counts, both object
identities, and the relation, with Gaussian noise added. Five caption
variants per image differ only in an optional verb ("two dogs sitting on
a chair"), so every caption of an image is a true positive while the
grounded content words stay identical.

The generator also emits a matching lexical KB (objects fully concrete
and frequent, relations frequent, overlap sets restricted to the sets of
the chosen relations, no hypernym edges), so all four adversary kinds
apply to every caption.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adversary import indefinite_article
from .knowledge import DataError, load_kb, pluralize
from .vse import save_features_text

DEFAULT_OBJECTS = ("dog", "cat", "chair", "table", "car", "bird",
                   "horse", "boat", "ball", "box", "cup", "tree")
DEFAULT_RELATIONS = ("on", "under", "behind", "near")
VERB_SLOT = ("", "sitting", "resting", "standing", "lying")
COUNT_WORDS = ("one", "two", "three", "four", "five")
MAX_COUNT = 5

OBJECT_FREQUENCY = 1000
PREPOSITION_FREQUENCY = 1000


@dataclass
class SceneSpec:
    objects: tuple = DEFAULT_OBJECTS
    relations: tuple = DEFAULT_RELATIONS
    counts: tuple = (1, 2, 3, 4, 5)
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if len(self.objects) < 4:
            raise DataError("scene spec: need at least 4 objects")
        if len(set(self.objects)) != len(self.objects):
            raise DataError("scene spec: duplicate objects")
        if len(set(self.relations)) != len(self.relations) or not self.relations:
            raise DataError("scene spec: relations must be distinct and non-empty")
        if any(c < 1 or c > MAX_COUNT for c in self.counts):
            raise DataError(f"scene spec: counts must lie in 1..{MAX_COUNT}")
        bundled = load_kb()
        missing = [r for r in self.relations if r not in bundled.word_to_overlap_sets]
        if missing:
            raise DataError(f"scene spec: relations not in the overlap table: {missing}")

    @property
    def feature_dim(self):
        # counts are one-hot over the full 1..MAX_COUNT range, objects and
        # relations one-hot over their vocabularies
        return 2 * MAX_COUNT + 2 * len(self.objects) + len(self.relations)

    def feature_of(self, scene):
        count1, obj1, relation, count2, obj2 = scene
        v = np.zeros(self.feature_dim)
        base = 0
        v[base + count1 - 1] = 1.0
        base += MAX_COUNT
        v[base + self.objects.index(obj1)] = 1.0
        base += len(self.objects)
        v[base + self.relations.index(relation)] = 1.0
        base += len(self.relations)
        v[base + count2 - 1] = 1.0
        base += MAX_COUNT
        v[base + self.objects.index(obj2)] = 1.0
        return v


def render_count_phrase(count, obj, kb):
    """"a dog", "two dogs", ... matching the caption conventions."""
    if count == 1:
        return f"{indefinite_article(obj)} {obj}"
    return f"{COUNT_WORDS[count - 1]} {pluralize(kb, obj)}"


def render_caption(scene, verb, kb):
    count1, obj1, relation, count2, obj2 = scene
    left = render_count_phrase(count1, obj1, kb)
    right = render_count_phrase(count2, obj2, kb)
    middle = f"{verb} {relation}" if verb else relation
    return f"{left} {middle} {right}"


def _decode_scene(spec, index):
    """Mixed-radix unranking of a scene index; obj2 skips obj1."""
    n_counts = len(spec.counts)
    n_obj = len(spec.objects)
    n_rel = len(spec.relations)
    index, o2 = divmod(index, n_obj - 1)
    index, c2 = divmod(index, n_counts)
    index, r = divmod(index, n_rel)
    index, o1 = divmod(index, n_obj)
    c1 = index
    obj1 = spec.objects[o1]
    obj2 = spec.objects[o2 if o2 < o1 else o2 + 1]
    return (spec.counts[c1], obj1, spec.relations[r], spec.counts[c2], obj2)


def scene_space_size(spec):
    n = len(spec.objects)
    return len(spec.counts) ** 2 * n * (n - 1) * len(spec.relations)


@dataclass
class SynthCorpus:
    spec: SceneSpec
    train: list
    test: list
    features: dict           # image_id -> vector
    scenes: dict             # image_id -> scene tuple
    kb: object
    paths: dict = field(default_factory=dict)


def _write_kb(kb_dir, spec):
    kb_dir = Path(kb_dir)
    kb_dir.mkdir(parents=True, exist_ok=True)
    with open(kb_dir / "concreteness.tsv", "w") as fh:
        for obj in sorted(spec.objects):
            fh.write(f"{obj}\t1.0\n")
    bundled = load_kb()
    frequent_preps = sorted(_bundled_prep_list() | set(spec.relations))
    with open(kb_dir / "frequency.tsv", "w") as fh:
        for obj in sorted(spec.objects):
            fh.write(f"{obj}\t{OBJECT_FREQUENCY}\n")
        for prep in frequent_preps:
            fh.write(f"{prep}\t{PREPOSITION_FREQUENCY}\n")
    keep = {sid for r in spec.relations for sid in bundled.word_to_overlap_sets[r]}
    with open(kb_dir / "prep_overlap.tsv", "w") as fh:
        for sid in sorted(keep):
            for word in sorted(bundled.overlap_sets[sid]):
                fh.write(f"{sid}\t{word}\n")
    # objects are deliberately unrelated: empty relation graphs
    (kb_dir / "hypernyms.tsv").write_text("# no hypernym edges\n")
    (kb_dir / "synsets.tsv").write_text("# no synsets\n")


def _bundled_prep_list():
    from .lingua import _BUNDLED_PREPOSITIONS
    return set(_BUNDLED_PREPOSITIONS)


def generate(spec, n_train, n_test, out_dir):
    """Write a train/test corpus + features + KB under ``out_dir``.

    Scene tuples are sampled without replacement, so no two images share
    the same ground truth. Deterministic for a fixed spec.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    total = n_train + n_test
    space = scene_space_size(spec)
    if total > space:
        raise DataError(f"requested {total} images but only {space} distinct scenes exist")

    _write_kb(out_dir / "kb", spec)
    kb = load_kb(out_dir / "kb")

    rng = np.random.default_rng(spec.seed)
    picks = rng.choice(space, size=total, replace=False)
    entries = {"train": [], "test": []}
    features = {}
    scenes = {}
    for i, scene_index in enumerate(picks):
        image_id = f"img{i:05d}"
        scene = _decode_scene(spec, int(scene_index))
        scenes[image_id] = scene
        noise = rng.normal(0.0, spec.noise, spec.feature_dim) if spec.noise > 0 \
            else np.zeros(spec.feature_dim)
        features[image_id] = spec.feature_of(scene) + noise
        split = "train" if i < n_train else "test"
        for k, verb in enumerate(VERB_SLOT):
            entries[split].append({
                "image_id": image_id,
                "caption_id": f"{image_id}c{k}",
                "text": render_caption(scene, verb, kb),
            })

    paths = {
        "captions_train": out_dir / "captions_train.jsonl",
        "captions_test": out_dir / "captions_test.jsonl",
        "features": out_dir / "features.txt",
        "kb_dir": out_dir / "kb",
        "scenes": out_dir / "scenes.json",
    }
    for split, path_key in (("train", "captions_train"), ("test", "captions_test")):
        with open(paths[path_key], "w", encoding="utf-8") as fh:
            for entry in entries[split]:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    save_features_text(paths["features"], features)
    with open(paths["scenes"], "w", encoding="utf-8") as fh:
        json.dump({k: list(v) for k, v in sorted(scenes.items())}, fh,
                  indent=1, sort_keys=True)

    return SynthCorpus(spec=spec, train=entries["train"], test=entries["test"],
                       features=features, scenes=scenes, kb=kb, paths=paths)


def nearest_scene(spec, feature):
    """Ground-truth recovery: the scene whose clean feature is closest."""
    best = None
    best_dist = None
    for index in range(scene_space_size(spec)):
        scene = _decode_scene(spec, index)
        dist = float(np.sum((spec.feature_of(scene) - feature) ** 2))
        if best_dist is None or dist < best_dist:
            best, best_dist = scene, dist
    return best
