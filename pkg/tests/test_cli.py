"""End-to-end checks of the command-line interface.

Each subcommand runs in-process through cli.run so exit codes and artifacts
can be asserted directly; one subprocess test covers the installed script.
"""

import hashlib
import json
import shutil
import subprocess
import sys

import pytest

from visemb import adversary, vse
from visemb.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, run
from visemb.knowledge import load_kb
from visemb.lingua import load_captions


def run_ok(argv):
    assert run(argv) == EXIT_OK


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small generated corpus plus a trained checkpoint, built via the CLI."""
    root = tmp_path_factory.mktemp("cli")
    synth = root / "synth"
    run_ok(["synth-gen", "--out-dir", str(synth), "--n-train", "4",
            "--n-test", "2", "--noise", "0.0", "--quiet",
            "--objects", "dog,cat,chair,table", "--relations", "on,under"])
    run_ok(["gen-adv", "--captions", str(synth / "captions_train.jsonl"),
            "--kb", str(synth / "kb"), "--out", str(root / "adv.jsonl"),
            "--quiet"])
    run_ok(["train", "--captions", str(synth / "captions_train.jsonl"),
            "--features", str(synth / "features.txt"),
            "--candidates", str(root / "adv.jsonl"),
            "--kb", str(synth / "kb"), "--loss", "vsec", "--intra-n", "2",
            "--epochs", "2", "--batch", "8", "--dims", "8,8,8",
            "--checkpoint-out", str(root / "model"), "--quiet"])
    return root, synth


# -------------------------------------------------------------- exit codes

def test_missing_required_flag_is_a_usage_error(capsys):
    assert run(["synth-gen"]) == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_unknown_subcommand_is_a_usage_error():
    assert run(["frobnicate"]) == EXIT_USAGE


def test_malformed_int_list_is_a_usage_error(workspace, capsys):
    root, synth = workspace
    code = run(["train", "--captions", str(synth / "captions_train.jsonl"),
                "--features", str(synth / "features.txt"),
                "--kb", str(synth / "kb"), "--dims", "8,8",
                "--checkpoint-out", str(root / "m2"), "--quiet"])
    assert code == EXIT_USAGE
    assert "--dims expects 3" in capsys.readouterr().err


def test_missing_captions_file_is_a_data_error(tmp_path, capsys):
    code = run(["annotate", "--captions", str(tmp_path / "nope.jsonl"),
                "--out", str(tmp_path / "out.jsonl"), "--quiet"])
    assert code == EXIT_DATA
    assert "not found" in capsys.readouterr().err


def test_invalid_config_file_is_a_data_error(tmp_path):
    bad = tmp_path / "conf.json"
    bad.write_text("[1, 2]")
    assert run(["synth-gen", "--out-dir", str(tmp_path / "s"),
                "--config", str(bad), "--quiet"]) == EXIT_DATA
    bad.write_text("{nope")
    assert run(["synth-gen", "--out-dir", str(tmp_path / "s"),
                "--config", str(bad), "--quiet"]) == EXIT_DATA


def test_non_finite_features_are_a_numeric_failure(workspace, tmp_path, capsys):
    _, synth = workspace
    corrupted = tmp_path / "features.txt"
    lines = (synth / "features.txt").read_text().splitlines(keepends=True)
    image_id, rest = lines[0].split("\t", 1)
    values = rest.split()
    values[0] = "nan"
    lines[0] = image_id + "\t" + " ".join(values) + "\n"
    corrupted.write_text("".join(lines))
    code = run(["train", "--captions", str(synth / "captions_train.jsonl"),
                "--features", str(corrupted), "--kb", str(synth / "kb"),
                "--loss", "vsepp", "--epochs", "1", "--dims", "8,8,8",
                "--checkpoint-out", str(tmp_path / "m"), "--quiet"])
    assert code == EXIT_NUMERIC
    assert "numeric failure" in capsys.readouterr().err


# --------------------------------------------------------------- synth-gen

def test_synth_gen_is_byte_identical_across_runs(tmp_path):
    args = ["synth-gen", "--n-train", "3", "--n-test", "2", "--quiet"]
    run_ok(args + ["--out-dir", str(tmp_path / "a")])
    run_ok(args + ["--out-dir", str(tmp_path / "b")])
    for name in ("captions_train.jsonl", "captions_test.jsonl", "features.txt",
                 "scenes.json"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


def test_config_file_merging_and_flag_precedence(tmp_path):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"n_train": 5, "n_test": 2, "noise": 0.0}))
    out = tmp_path / "synth"
    # --n-train beats the config file; n_test comes from the file
    run_ok(["synth-gen", "--out-dir", str(out), "--config", str(conf),
            "--n-train", "3", "--quiet"])
    n_train = len((out / "captions_train.jsonl").read_text().splitlines())
    n_test = len((out / "captions_test.jsonl").read_text().splitlines())
    assert n_train == 3 * 5 and n_test == 2 * 5
    merged = json.loads((out / "repro.json").read_text())["config"]
    assert merged["n_train"] == 3 and merged["n_test"] == 2
    assert merged["noise"] == 0.0


def test_repro_manifest_contents(workspace):
    root, synth = workspace
    manifest = json.loads((root / "repro.json").read_text())
    assert manifest["command"] == "train"
    digest = hashlib.sha256((synth / "features.txt").read_bytes()).hexdigest()
    assert manifest["inputs"][str(synth / "features.txt")] == digest
    assert str(root / "model.bin") in manifest["outputs"]


# ---------------------------------------------------------------- pipeline

def test_annotate_writes_loadable_annotations(workspace, tmp_path):
    _, synth = workspace
    out = tmp_path / "annotated.jsonl"
    run_ok(["annotate", "--captions", str(synth / "captions_test.jsonl"),
            "--kb", str(synth / "kb"), "--out", str(out), "--quiet"])
    kb = load_kb(synth / "kb")
    annotated = load_captions(out, kb)
    raw = load_captions(synth / "captions_test.jsonl", kb)
    assert len(annotated) == len(raw) == 2 * 5
    for a, r in zip(annotated, raw):
        assert a.caption_id == r.caption_id
        assert a.token_texts() == r.token_texts()
        assert a.noun_phrases == r.noun_phrases
    first = json.loads(out.read_text().splitlines()[0])
    assert set(first) == {"caption_id", "image_id", "tokens", "noun_phrases",
                          "numerals", "prepositions"}


def test_gen_adv_output_loads_and_mixes_kinds(workspace):
    root, _ = workspace
    sets = adversary.load_adversarial(root / "adv.jsonl")
    assert len(sets) == 4 * 5
    kinds = {c.kind for cs in sets.values() for c in cs}
    assert kinds == {"noun", "numeral", "shuffle", "preposition"}


def test_train_writes_checkpoint_and_log(workspace):
    root, _ = workspace
    model = vse.load_model(root / "model")
    assert model.config.d_joint == 8
    log = json.loads((root / "model.train_log.json").read_text())
    assert [e["epoch"] for e in log] == [0, 1]


def test_attack_eval_report(workspace, tmp_path):
    root, synth = workspace
    out = tmp_path / "attack.json"
    run_ok(["attack-eval", "--checkpoint", str(root / "model"),
            "--captions", str(synth / "captions_test.jsonl"),
            "--features", str(synth / "features.txt"),
            "--kb", str(synth / "kb"), "--counts", "1,1,1",
            "--out", str(out), "--quiet"])
    report = json.loads(out.read_text())
    assert report["n_images"] == 2
    assert report["candidates_per_image"] == 10 + 3 * 5
    assert set(report["by_type"]) == {"noun", "numeral", "relation"}
    assert (tmp_path / "repro.json").exists()


def test_word_retrieval_report(workspace, tmp_path):
    root, synth = workspace
    out = tmp_path / "wr.json"
    run_ok(["word-retrieval", "--captions", str(synth / "captions_test.jsonl"),
            "--features", str(synth / "features.txt"),
            "--kb", str(synth / "kb"), "--epochs", "2", "--hidden", "8",
            "--d-word", "4", "--out", str(out), "--quiet"])
    report = json.loads(out.read_text())
    assert report["n_images"] == 2
    assert 0.0 <= report["map"] <= 1.0
    assert len(report["per_image_ap"]) == 2


def test_fitb_report(workspace, tmp_path):
    root, synth = workspace
    out = tmp_path / "fitb.json"
    run_ok(["fitb", "--captions", str(synth / "captions_train.jsonl"),
            "--eval-captions", str(synth / "captions_test.jsonl"),
            "--features", str(synth / "features.txt"),
            "--kb", str(synth / "kb"), "--epochs", "2",
            "--d-word", "4", "--d-hidden", "4", "--out", str(out), "--quiet"])
    report = json.loads(out.read_text())
    for category in ("noun", "preposition", "all"):
        assert report[category]["n_blanks"] > 0


def test_saliency_report(workspace, tmp_path):
    root, synth = workspace
    out = tmp_path / "sal.json"
    run_ok(["saliency", "--checkpoint", str(root / "model"),
            "--features", str(synth / "features.txt"),
            "--image-id", "img00000", "--text", "two dogs on a chair",
            "--kb", str(synth / "kb"), "--out", str(out), "--quiet"])
    report = json.loads(out.read_text())
    assert [t["text"] for t in report["tokens"]] == \
        ["two", "dogs", "on", "a", "chair"]
    assert len(report["image_dims"]) == 20
    assert not report["zero_image"]


def test_installed_script_smoke(tmp_path):
    exe = shutil.which("visemb")
    if exe is None:
        pytest.skip("console script not on PATH")
    proc = subprocess.run(
        [exe, "synth-gen", "--out-dir", str(tmp_path / "s"), "--n-train", "2",
         "--n-test", "1", "--quiet"],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "s" / "captions_train.jsonl").exists()
