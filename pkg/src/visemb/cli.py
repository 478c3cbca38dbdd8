"""Command-line entry point.

Subcommands cover the full pipeline: synth-gen, annotate, gen-adv, train,
attack-eval, word-retrieval, fitb, saliency. Every run writes its primary
output plus a repro.json manifest (merged config + SHA-256 digests of the
inputs). Flags override values from an optional JSON --config file, which
in turn override the built-in defaults.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import adversary, lingua, metrics, synth, tasks, vse
from .knowledge import DataError, load_kb

log = logging.getLogger("visemb")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad flags; usage errors must be 1 here
    def error(self, message):
        raise UsageError(message)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_repro(out_path, command, config, inputs, outputs):
    manifest = {
        "command": command,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs if p and Path(p).exists()},
        "outputs": [str(o) for o in outputs],
    }
    repro = Path(out_path).parent / "repro.json"
    repro.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    log.info("wrote %s", repro)


def _merge(args, file_config, keys):
    """Effective config: CLI flag if given, else config-file value, else
    the parser default (stored under key+"_default")."""
    merged = {}
    for key, default in keys.items():
        cli_value = getattr(args, key, None)
        if cli_value is not None:
            merged[key] = cli_value
        elif key in file_config:
            merged[key] = file_config[key]
        else:
            merged[key] = default
    return merged


def _load_file_config(args):
    if getattr(args, "config", None) is None:
        return {}
    path = Path(args.config)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise DataError(f"{path}: invalid JSON ({err})")
    if not isinstance(obj, dict):
        raise DataError(f"{path}: config must be a JSON object")
    return obj


def _kb_from(args):
    return load_kb(args.kb) if getattr(args, "kb", None) else load_kb()


def _captions_from(path, kb):
    if not Path(path).exists():
        raise DataError(f"captions file not found: {path}")
    return lingua.load_captions(path, kb)


def _int_list(text, n, flag):
    parts = text.split(",")
    if len(parts) != n:
        raise UsageError(f"{flag} expects {n} comma-separated integers")
    try:
        return [int(p) for p in parts]
    except ValueError:
        raise UsageError(f"{flag}: non-integer value in {text!r}")


def _gen_config(merged):
    words = tuple(merged["numeral_words"].split(",")) if merged["numeral_words"] \
        else adversary.GeneratorConfig().numeral_words
    return adversary.GeneratorConfig(numeral_words=words,
                                     cap_total=merged["cap_total"])


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth_gen(args):
    file_config = _load_file_config(args)
    merged = _merge(args, file_config, {
        "n_train": 500, "n_test": 100, "noise": 0.1, "seed": 0,
        "objects": None, "relations": None,
    })
    spec_kwargs = {"noise": merged["noise"], "seed": merged["seed"]}
    if merged["objects"]:
        spec_kwargs["objects"] = tuple(merged["objects"].split(","))
    if merged["relations"]:
        spec_kwargs["relations"] = tuple(merged["relations"].split(","))
    spec = synth.SceneSpec(**spec_kwargs)
    out_dir = Path(args.out_dir or "synth")
    corpus = synth.generate(spec, merged["n_train"], merged["n_test"], out_dir)
    log.info("synth corpus: %d train / %d test captions under %s",
             len(corpus.train), len(corpus.test), out_dir)
    _write_repro(out_dir / "x", "synth-gen", merged, [],
                 sorted(str(p) for p in corpus.paths.values()))
    return EXIT_OK


def cmd_annotate(args):
    file_config = _load_file_config(args)
    merged = _merge(args, file_config, {})
    kb = _kb_from(args)
    captions = _captions_from(args.captions, kb)
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        for cap in captions:
            fh.write(json.dumps({
                "caption_id": cap.caption_id,
                "image_id": cap.image_id,
                "tokens": [{"text": t.text, "lemma": t.lemma, "pos": t.pos}
                           for t in cap.tokens],
                "noun_phrases": [{"start": p.start, "end": p.end,
                                  "head": p.head_index} for p in cap.noun_phrases],
                "numerals": {str(k): v for k, v in sorted(cap.numeral_positions.items())},
                "prepositions": cap.preposition_positions,
            }, sort_keys=True) + "\n")
    log.info("annotated %d captions -> %s", len(captions), out)
    _write_repro(out, "annotate", merged, [args.captions], [out])
    return EXIT_OK


def cmd_gen_adv(args):
    file_config = _load_file_config(args)
    merged = _merge(args, file_config, {
        "cap_total": 1000, "numeral_words": None, "seed": 0,
    })
    kb = _kb_from(args)
    captions = _captions_from(args.captions, kb)
    config = _gen_config(merged)
    by_image = {}
    for cap in captions:
        by_image.setdefault(cap.image_id, []).append(cap)
    noun_pool = adversary.noun_replacement_pool(kb, config)
    prep_pool = adversary.preposition_replacement_pool(kb, config)
    sets = []
    for image_id in sorted(by_image):
        positives = {c.token_texts() for c in by_image[image_id]}
        for cap in sorted(by_image[image_id], key=lambda c: c.caption_id):
            sets.append(adversary.build_candidate_set(
                cap, kb, config, exclude=positives - {cap.token_texts()},
                noun_pool=noun_pool, prep_pool=prep_pool))
    out = Path(args.out)
    adversary.save_adversarial(out, sets)
    total = sum(len(s) for s in sets)
    log.info("wrote %d adversarial captions for %d sources -> %s",
             total, len(sets), out)
    _write_repro(out, "gen-adv", merged, [args.captions], [out])
    return EXIT_OK


def cmd_train(args):
    file_config = _load_file_config(args)
    merged = _merge(args, file_config, {
        "loss": "vsec", "margin": 0.2, "intra_n": 8, "batch": 32,
        "epochs": 30, "seed": 0, "encoder": "recurrent",
        "bidirectional": False, "no_normalize": False,
        "dims": "16,32,32", "base_lr": 1e-3,
    })
    kb = _kb_from(args)
    captions = _captions_from(args.captions, kb)
    store = vse.load_features(args.features)
    d_word, d_hidden, d_joint = _int_list(merged["dims"], 3, "--dims")
    candidate_sets = None
    if args.candidates:
        candidate_sets = adversary.load_adversarial(args.candidates)
    elif merged["loss"] == "vsec":
        log.warning("loss vsec without --candidates behaves exactly like vsepp")
    try:
        config = vse.TrainingConfig(
            loss=merged["loss"], margin=merged["margin"], intra_n=merged["intra_n"],
            batch_size=merged["batch"], epochs=merged["epochs"], seed=merged["seed"],
            base_lr=merged["base_lr"],
            model=vse.ModelConfig(d_image=store.dim, d_word=d_word,
                                  d_hidden=d_hidden, d_joint=d_joint,
                                  encoder=merged["encoder"],
                                  bidirectional=merged["bidirectional"],
                                  normalize=not merged["no_normalize"]))
    except ValueError as err:
        raise UsageError(str(err))
    validation = _captions_from(args.val_captions, kb) if args.val_captions else None
    model, train_log = vse.train(captions, store, candidate_sets, config,
                                 validation=validation,
                                 log_fn=lambda e: log.info("%s", e))
    prefix = Path(args.checkpoint_out)
    vse.save_model(prefix, model)
    log_path = prefix.parent / (prefix.name + ".train_log.json")
    log_path.write_text(json.dumps(train_log, indent=1, sort_keys=True) + "\n")
    inputs = [args.captions, args.features, args.candidates, args.val_captions]
    _write_repro(prefix, "train", merged, inputs,
                 [prefix.with_suffix(".json"), prefix.with_suffix(".bin"), log_path])
    return EXIT_OK


def cmd_attack_eval(args):
    file_config = _load_file_config(args)
    merged = _merge(args, file_config, {
        "counts": "20,20,20", "numeral_words": None, "cap_total": 1000, "seed": 0,
    })
    kb = _kb_from(args)
    captions = _captions_from(args.captions, kb)
    store = vse.load_features(args.features)
    model = vse.load_model(args.checkpoint)
    n_noun, n_numeral, n_relation = _int_list(merged["counts"], 3, "--counts")
    spec = tasks.AttackSpec(noun=n_noun, numeral=n_numeral, relation=n_relation)
    report = tasks.attack_eval(model, captions, store, kb, spec=spec,
                               gen_config=_gen_config(merged))
    out = Path(args.out)
    metrics.save_report(out, report)
    log.info("attack-eval over %d images -> %s", report["n_images"], out)
    _write_repro(out, "attack-eval", merged,
                 [args.captions, args.features,
                  str(Path(args.checkpoint).with_suffix(".json")),
                  str(Path(args.checkpoint).with_suffix(".bin"))], [out])
    return EXIT_OK


def cmd_word_retrieval(args):
    file_config = _load_file_config(args)
    merged = _merge(args, file_config, {
        "hidden": 64, "epochs": 30, "seed": 0, "d_word": 16, "relation": "closure",
    })
    kb = _kb_from(args)
    captions = _captions_from(args.captions, kb)
    store = vse.load_features(args.features)
    dataset = tasks.build_word_object_dataset(captions, kb,
                                              relation=merged["relation"])
    words = sorted({w for e in dataset.entries for w in e.positives + e.negatives})
    if args.word_vectors:
        vectors = vse.load_word_vectors(args.word_vectors)
    else:
        rng = np.random.default_rng(merged["seed"])
        vectors = {w: rng.normal(0.0, 1.0, merged["d_word"]) for w in words}
    config = tasks.ScorerConfig(hidden=merged["hidden"], epochs=merged["epochs"],
                                seed=merged["seed"])
    scorer, train_log = tasks.train_interaction_scorer(dataset, vectors, store, config)
    report = tasks.word_retrieval_map(scorer, dataset, vectors, store)
    report["final_loss"] = train_log[-1]["loss"]
    out = Path(args.out)
    metrics.save_report(out, report)
    log.info("word retrieval MAP %.4f over %d images -> %s",
             report["map"], report["n_images"], out)
    _write_repro(out, "word-retrieval", merged,
                 [args.captions, args.features, args.word_vectors], [out])
    return EXIT_OK


def cmd_fitb(args):
    file_config = _load_file_config(args)
    merged = _merge(args, file_config, {
        "epochs": 40, "batch": 32, "seed": 0, "d_word": 16, "d_hidden": 32,
    })
    kb = _kb_from(args)
    train_caps = _captions_from(args.captions, kb)
    eval_caps = _captions_from(args.eval_captions, kb) if args.eval_captions \
        else train_caps
    store = vse.load_features(args.features)
    train_samples = tasks.build_fitb_dataset(train_caps)
    eval_samples = [s for s in tasks.build_fitb_dataset(eval_caps)
                    if s.target in set(tasks.fitb_vocab(train_samples))]
    config = tasks.FitbConfig(d_word=merged["d_word"], d_hidden=merged["d_hidden"],
                              epochs=merged["epochs"], batch_size=merged["batch"],
                              seed=merged["seed"])
    model, train_log = tasks.train_fitb(train_samples, store, config)
    report = tasks.fitb_eval(model, eval_samples, store)
    report["final_loss"] = train_log[-1]["loss"]
    out = Path(args.out)
    metrics.save_report(out, report)
    log.info("fitb all-blank R@1 %.1f -> %s", report["all"]["r_at_1"], out)
    _write_repro(out, "fitb", merged,
                 [args.captions, args.eval_captions, args.features], [out])
    return EXIT_OK


def cmd_saliency(args):
    file_config = _load_file_config(args)
    merged = _merge(args, file_config, {"seed": 0})
    kb = _kb_from(args)
    store = vse.load_features(args.features)
    model = vse.load_model(args.checkpoint)
    caption = lingua.annotate(args.text, kb)
    feature = store.get(args.image_id)
    smap = tasks.saliency(model, feature, caption)
    out = Path(args.out)
    metrics.save_report(out, smap.as_dict())
    log.info("saliency for image %s (similarity %.4f) -> %s",
             args.image_id, smap.similarity, out)
    _write_repro(out, "saliency", merged,
                 [args.features, str(Path(args.checkpoint).with_suffix(".json")),
                  str(Path(args.checkpoint).with_suffix(".bin"))], [out])
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--kb", help="directory of KB tsv files (default: bundled)")


def build_parser():
    parser = _Parser(prog="visemb", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="generate a synthetic corpus")
    _add_common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-train", type=int, dest="n_train")
    p.add_argument("--n-test", type=int, dest="n_test")
    p.add_argument("--noise", type=float)
    p.add_argument("--objects", help="comma-separated object vocabulary")
    p.add_argument("--relations", help="comma-separated relation vocabulary")
    p.set_defaults(fn=cmd_synth_gen)

    p = sub.add_parser("annotate", help="tokenize/tag/chunk captions")
    _add_common(p)
    p.add_argument("--captions", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_annotate)

    p = sub.add_parser("gen-adv", help="generate adversarial captions")
    _add_common(p)
    p.add_argument("--captions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--cap-total", type=int, dest="cap_total")
    p.add_argument("--numeral-words", dest="numeral_words",
                   help="comma-separated numeral vocabulary (value = position)")
    p.set_defaults(fn=cmd_gen_adv)

    p = sub.add_parser("train", help="train a joint embedding model")
    _add_common(p)
    p.add_argument("--captions", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--candidates", help="adversarial.jsonl for the vsec loss")
    p.add_argument("--val-captions", dest="val_captions")
    p.add_argument("--loss", choices=["vse", "vsepp", "vsec"])
    p.add_argument("--margin", type=float)
    p.add_argument("--intra-n", type=int, dest="intra_n")
    p.add_argument("--batch", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--encoder", choices=["average", "recurrent"])
    p.add_argument("--bidirectional", action="store_true", default=None)
    p.add_argument("--no-normalize", action="store_true", default=None,
                   dest="no_normalize")
    p.add_argument("--dims", help="d_word,d_hidden,d_joint")
    p.add_argument("--base-lr", type=float, dest="base_lr")
    p.add_argument("--checkpoint-out", required=True, dest="checkpoint_out")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("attack-eval", help="retrieval under adversarial attack")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--counts", help="noun,numeral,relation adversaries per caption")
    p.add_argument("--numeral-words", dest="numeral_words")
    p.add_argument("--cap-total", type=int, dest="cap_total")
    p.set_defaults(fn=cmd_attack_eval)

    p = sub.add_parser("word-retrieval", help="image-to-word retrieval MAP")
    _add_common(p)
    p.add_argument("--captions", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--word-vectors", dest="word_vectors")
    p.add_argument("--hidden", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--d-word", type=int, dest="d_word")
    p.add_argument("--relation", choices=["closure", "direct"])
    p.set_defaults(fn=cmd_word_retrieval)

    p = sub.add_parser("fitb", help="fill-in-the-blank evaluation")
    _add_common(p)
    p.add_argument("--captions", required=True)
    p.add_argument("--eval-captions", dest="eval_captions")
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--d-word", type=int, dest="d_word")
    p.add_argument("--d-hidden", type=int, dest="d_hidden")
    p.set_defaults(fn=cmd_fitb)

    p = sub.add_parser("saliency", help="similarity gradients for one pair")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--image-id", required=True, dest="image_id")
    p.add_argument("--text", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_saliency)

    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.WARNING if args.quiet else logging.INFO,
            format="%(message)s", stream=sys.stderr)
        return args.fn(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
