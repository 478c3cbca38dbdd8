"""Generate a small grounded corpus and poke at what came out.

Every image is a scene tuple (count_a, object_a, relation, count_b,
object_b) with a
deterministic feature vector; every caption verbalizes the tuple in one of
five surface variants. Noise perturbs the features, not the text, so at
noise=0 retrieval is solvable exactly.
"""

import tempfile
from pathlib import Path

import numpy as np

from visemb import synth, vse

out = Path(tempfile.mkdtemp(prefix="visemb_demo_"))
spec = synth.SceneSpec(noise=0.1, seed=7)
corpus = synth.generate(spec, n_train=20, n_test=5, out_dir=out)

print(f"wrote corpus to {out}")
for name, path in sorted(corpus.paths.items()):
    print(f"  {name:10s} {Path(path).relative_to(out)}")

print(f"\nscene space: {synth.scene_space_size(spec)} distinct tuples "
      f"({len(spec.objects)} objects, {len(spec.relations)} relations, "
      f"counts {spec.counts})")

entry = corpus.train[0]
scene = corpus.scenes[entry["image_id"]]
print(f"\nimage {entry['image_id']} ground truth: {scene}")
print("its five captions:")
for e in corpus.train[:5]:
    print(f"  {e['caption_id']}: {e['text']}")

store = vse.load_features(corpus.paths["features"])
feat = store.get(entry["image_id"])
clean = spec.feature_of(scene)
print(f"\nfeature dim {store.dim}, noise moved the vector by "
      f"{np.linalg.norm(feat - clean):.3f} "
      f"(clean norm {np.linalg.norm(clean):.3f})")
print(f"nearest clean scene to the noisy feature: {synth.nearest_scene(spec, feat)}")
