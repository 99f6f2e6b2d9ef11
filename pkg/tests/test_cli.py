import json

import numpy as np
import pytest

from wclsm import cli
from wclsm import datakit as D

TRAIN_FLAGS = ["--epochs", "2", "--conv-dim", "16", "--sem-dim", "8", "--batch-size", "128"]


def run(capsys, *argv):
    code = cli.run([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def synth(tmp_path, capsys):
    log = tmp_path / "log.tsv"
    code, _, _ = run(capsys, "synth", "--queries", 600, "--alpha", 2, "--seed", 7, "--out", log)
    assert code == 0
    return tmp_path, log


class TestSynth:
    def test_files_and_manifest(self, synth):
        tmp, log = synth
        assert (tmp / "truth.tsv").exists()
        m = json.loads((tmp / "log.tsv.manifest.json").read_text())
        assert m["command"] == "synth" and m["seed"] == 7
        assert m["config"]["spec"]["n_queries"] == 600
        assert set(m["outputs"]) == {str(log), str(tmp / "truth.tsv")}
        for key in ("argv", "inputs", "version", "wall_time"):
            assert key in m

    def test_deterministic(self, synth, tmp_path, capsys):
        _, log = synth
        other = tmp_path / "again" / "log.tsv"
        other.parent.mkdir()
        run(capsys, "synth", "--queries", 600, "--alpha", 2, "--seed", 7, "--out", other)
        assert other.read_bytes() == log.read_bytes()
        assert (other.parent / "truth.tsv").read_bytes() == (tmp_path / "truth.tsv").read_bytes()

    def test_truth_override(self, tmp_path, capsys):
        code, _, _ = run(capsys, "synth", "--queries", 50, "--out", tmp_path / "a.tsv",
                         "--truth", tmp_path / "labels.tsv")
        assert code == 0 and (tmp_path / "labels.tsv").exists()

    def test_copurchase(self, tmp_path, capsys):
        code, _, _ = run(capsys, "synth", "--kind", "copurchase", "--docs", 80,
                         "--out", tmp_path / "products.tsv")
        assert code == 0
        g, titles, _ = D.read_copurchase(tmp_path / "products.tsv", tmp_path / "edges.tsv")
        assert len(titles) == 80


class TestWeigh:
    def test_ctr_rows(self, synth, capsys):
        tmp, log = synth
        code, _, _ = run(capsys, "weigh", "--strategy", "ctr", "--in", log, "--out", tmp / "p.tsv")
        assert code == 0
        src = [l.split("\t") for l in log.read_text().splitlines()]
        out = [l.split("\t") for l in (tmp / "p.tsv").read_text().splitlines()]
        assert len(src) == len(out)
        for s, o in zip(src, out):
            assert o[:2] == s[:2]
            assert o[2] == f"{int(s[3]) / int(s[2]):.6f}"

    def test_jaccard(self, tmp_path, capsys):
        (tmp_path / "p.tsv").write_text("P1\tone\nP2\ttwo\nA\ta\nB\tb\nC\tc\nD\td\n")
        edges = [("P1", x) for x in "ABC"] + [("P2", x) for x in "BCD"] + [("P1", "P2")]
        (tmp_path / "e.tsv").write_text("".join(f"{a}\t{b}\n" for a, b in edges))
        code, _, _ = run(capsys, "weigh", "--strategy", "jaccard", "--in", tmp_path / "p.tsv",
                         "--edges", tmp_path / "e.tsv", "--out", tmp_path / "w.tsv")
        assert code == 0
        rows = [l.split("\t") for l in (tmp_path / "w.tsv").read_text().splitlines()]
        w = {(a, b): float(c) for a, b, c in rows}
        # Nr(P1) = {A,B,C,P2}, Nr(P2) = {B,C,D,P1}: 2 shared of 6
        assert w["one", "two"] == pytest.approx(2 / 6, abs=1e-6)


class TestTrainEvalRetrieve:
    def test_pipeline(self, synth, capsys):
        tmp, log = synth
        ckpt = tmp / "m.bin"
        code, _, err = run(capsys, "train", "--data", log, "--regime", "weighted",
                           "--strategy", "ctr", *TRAIN_FLAGS, "--seed", 3, "--out", ckpt)
        assert code == 0, err
        assert len((tmp / "m.bin.log.jsonl").read_text().splitlines()) == 2

        code, out, _ = run(capsys, "eval", "--ckpt", ckpt, "--pairs", tmp / "truth.tsv")
        rep = json.loads(out)
        assert code == 0 and set(rep["ndcg"]) == {"1", "3", "5", "10"}

        docs = sorted({l.split("\t")[1] for l in log.read_text().splitlines()})
        (tmp / "corpus.tsv").write_text("".join(f"d{i}\t{d}\n" for i, d in enumerate(docs)))
        assert run(capsys, "index", "--ckpt", ckpt, "--corpus", tmp / "corpus.tsv",
                   "--out", tmp / "idx.bin")[0] == 0
        code, out, _ = run(capsys, "retrieve", "--index", tmp / "idx.bin", "--ckpt", ckpt,
                           "--query", docs[3], "-k", 5)
        lines = out.splitlines()
        assert code == 0 and len(lines) == 5 and lines[0].startswith("d3\t")

        code, out, _ = run(capsys, "trace", "--ckpt", ckpt, "--text", docs[0], "-n", 4)
        assert code == 0 and len(out.splitlines()) == 5

    def test_pairs_file_input(self, synth, capsys):
        tmp, log = synth
        run(capsys, "weigh", "--strategy", "nclicks", "--in", log, "--out", tmp / "p.tsv")
        code, _, err = run(capsys, "train", "--data", tmp / "p.tsv", *TRAIN_FLAGS,
                           "--out", tmp / "m.bin")
        assert code == 0, err

    def test_curated_needs_click_log(self, synth, capsys):
        tmp, log = synth
        run(capsys, "weigh", "--in", log, "--out", tmp / "p.tsv")
        code, _, _ = run(capsys, "train", "--data", tmp / "p.tsv", "--regime", "curated",
                         "--out", tmp / "m.bin")
        assert code == 1

    def test_fingerprint_refused(self, synth, capsys):
        tmp, log = synth
        for seed in (1, 2):
            run(capsys, "train", "--data", log, *TRAIN_FLAGS, "--seed", seed,
                "--out", tmp / f"m{seed}.bin")
        (tmp / "c.tsv").write_text("a\tfoo bar\n")
        run(capsys, "index", "--ckpt", tmp / "m1.bin", "--corpus", tmp / "c.tsv",
            "--out", tmp / "i.bin")
        code, _, err = run(capsys, "retrieve", "--index", tmp / "i.bin", "--ckpt", tmp / "m2.bin",
                           "--query", "foo")
        assert code == 2 and "checkpoint" in err


class TestReplay:
    def test_train_replay_identical(self, synth, capsys):
        tmp, log = synth
        run(capsys, "train", "--data", log, *TRAIN_FLAGS, "--out", tmp / "m.bin")
        code, out, _ = run(capsys, "replay", tmp / "m.bin.manifest.json", "--out-dir", tmp / "r")
        assert code == 0 and out.startswith("identical")
        assert (tmp / "r" / "m.bin").read_bytes() == (tmp / "m.bin").read_bytes()

    def test_changed_input_detected(self, synth, capsys):
        tmp, log = synth
        run(capsys, "weigh", "--in", log, "--out", tmp / "p.tsv")
        with open(log, "a") as fh:
            fh.write("new query\tnew doc\t3\t1\n")
        code, _, err = run(capsys, "replay", tmp / "p.tsv.manifest.json", "--out-dir", tmp / "r")
        assert code == 2 and "changed" in err


class TestConfigAndErrors:
    def test_show_config_precedence(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"epochs": 5, "lr": 0.3}))
        code, out, _ = run(capsys, "train", "--config", tmp_path / "c.json", "--epochs", 2,
                           "--show-config")
        cfg = json.loads(out)
        assert code == 0 and cfg["epochs"] == 2 and cfg["lr"] == 0.3
        assert cfg["batch_size"] == 1024 and cfg["negatives"] == 4

    def test_unknown_config_key(self, tmp_path, capsys):
        (tmp_path / "c.json").write_text(json.dumps({"epochz": 5}))
        assert run(capsys, "train", "--config", tmp_path / "c.json", "--show-config")[0] == 1

    @pytest.mark.parametrize("argv", [["frobnicate"], ["train", "--bogus"], [],
                                      ["train", "--epochs", "many"]])
    def test_usage_errors(self, capsys, argv):
        code, _, err = run(capsys, *argv)
        assert code == 1 and "usage" in err

    def test_data_error(self, tmp_path, capsys):
        (tmp_path / "bad.tsv").write_text("only\ttwo\n")
        assert run(capsys, "train", "--data", tmp_path / "bad.tsv", "--out", tmp_path / "m")[0] == 2
        assert run(capsys, "eval", "--ckpt", tmp_path / "nope", "--pairs", tmp_path / "x")[0] == 2

    def test_numerical_error(self, synth, capsys):
        tmp, log = synth
        code, _, err = run(capsys, "train", "--data", log, *TRAIN_FLAGS, "--lr", 1e308,
                           "--gamma", 1e300, "--out", tmp / "m.bin")
        assert code == 3 and "non-finite" in err

    def test_audit_table(self, tmp_path, capsys):
        (tmp_path / "spec.json").write_text(json.dumps({"seed": 2024}))
        code, out, _ = run(capsys, "audit", "--strategy", "ctr", "--strategy", "nclicks",
                           "--spec", tmp_path / "spec.json")
        lines = out.splitlines()
        assert code == 0
        assert lines[1].split() == ["ctr", "Y", "Y", "Y", "Y"]
        assert lines[2].split() == ["nclicks", "N", "Y", "N", "Y"]
