"""End-to-end tests of the command-line interface, run in process."""

import json
import re

import numpy as np
import pytest

from unisum import checkpoint, cli, config, corpus
from unisum.diffcore import FiniteDiffReport

FINGERPRINT_LINE = re.compile(r"resolved config fingerprint: ([0-9a-f]{16})")

SMALL_TRAIN = ["--embed-dim", "8", "--ext-hidden", "8", "--abs-hidden", "8",
               "--vocab-size", "48", "--batch-size", "2", "--eval-every", "2",
               "--seed", "0"]


def run(argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """A CLI-built workspace: corpus split, labels, vocab, checkpoints."""
    root = tmp_path_factory.mktemp("cli-ws")
    data = root / "data"
    assert run(["gen-synth", "--out", data, "--num-articles", "20",
                "--seed", "5"]) == 0
    paths = {
        "root": root,
        "train": data / "train.jsonl",
        "dev": data / "dev.jsonl",
        "test": data / "test.jsonl",
        "vocab": root / "vocab.txt",
        "labels": root / "train.labels",
        "ext": root / "ext.ckpt",
        "abs": root / "abs.ckpt",
        "e2e": root / "e2e.ckpt",
    }
    assert run(["make-labels", "--corpus", paths["train"],
                "--out", paths["labels"]]) == 0
    assert run(["pretrain-ext", "--corpus", paths["train"], "--val", paths["dev"],
                "--vocab", paths["vocab"], "--out", paths["ext"],
                "--labels", paths["labels"], "--iterations", "6",
                *SMALL_TRAIN]) == 0
    assert run(["pretrain-abs", "--corpus", paths["train"], "--val", paths["dev"],
                "--vocab", paths["vocab"], "--out", paths["abs"],
                "--iterations", "4", "--coverage-iterations", "2",
                *SMALL_TRAIN]) == 0
    assert run(["train-e2e", "--corpus", paths["train"], "--val", paths["dev"],
                "--vocab", paths["vocab"], "--ext", paths["ext"],
                "--abs", paths["abs"], "--out", paths["e2e"],
                "--iterations", "2", *SMALL_TRAIN]) == 0
    return paths


class TestDetokenize:
    def test_attaches_punctuation_and_capitalizes(self):
        tokens = ["the", "storm", "hit", ".", "people", "fled", "."]
        assert cli.detokenize(tokens) == "The storm hit. People fled."

    def test_commas_and_questions(self):
        tokens = ["well", ",", "why", "not", "?", "go", "!"]
        assert cli.detokenize(tokens) == "Well, why not? Go!"

    def test_non_alphabetic_start_kept(self):
        assert cli.detokenize(["3", "dogs"]) == "3 dogs"

    def test_empty(self):
        assert cli.detokenize([]) == ""


class TestGenSynth:
    def test_writes_split_and_prints_counts(self, tmp_path, capsys):
        out = tmp_path / "corpus"
        assert run(["gen-synth", "--out", out, "--num-articles", "10",
                    "--seed", "1"]) == 0
        counts = json.loads(capsys.readouterr().out)
        assert counts == {"train": 8, "dev": 1, "test": 1}
        for name, expected in counts.items():
            pairs = corpus.load_pairs(out / f"{name}.jsonl")
            assert len(pairs) == expected

    def test_seed_changes_corpus(self, tmp_path, capsys):
        a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
        for out, seed in ((a, 1), (b, 2), (c, 1)):
            assert run(["gen-synth", "--out", out, "--num-articles", "10",
                        "--seed", seed]) == 0
        capsys.readouterr()
        assert (a / "train.jsonl").read_text() == (c / "train.jsonl").read_text()
        assert (a / "train.jsonl").read_text() != (b / "train.jsonl").read_text()


class TestExitCodes:
    def test_missing_required_flag_is_usage_error(self, capsys):
        assert run(["decode"]) == 1
        err = capsys.readouterr().err
        assert "usage" in err

    def test_unknown_command(self, capsys):
        assert run(["summarize-everything"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_invalid_metric_choice(self, capsys):
        assert run(["score-rouge", "--candidate", "x", "--reference", "y",
                    "--metric", "3"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_nonexistent_corpus_is_data_error(self, tmp_path, capsys):
        assert run(["make-labels", "--corpus", tmp_path / "missing.jsonl",
                    "--out", tmp_path / "labels"]) == 2
        assert "data error" in capsys.readouterr().err

    def test_bad_config_file_value(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"batch_size": 0}', encoding="utf-8")
        assert run(["make-labels", "--corpus", tmp_path / "x.jsonl",
                    "--out", tmp_path / "labels", "--config", cfg]) == 1

    def test_gradcheck_failure_exits_numeric(self, monkeypatch, capsys):
        failing = FiniteDiffReport(epsilon=1e-5, tolerance=1e-3,
                                   max_rel_error=0.5, worst_param="abs.embed",
                                   worst_index=(0, 0),
                                   per_param={"abs.embed": 0.5})
        monkeypatch.setattr(cli.gradcheck, "check_all",
                            lambda **kw: {"L_ext": failing})
        assert run(["gradcheck"]) == 3
        captured = capsys.readouterr()
        assert "L_ext" in captured.out
        assert "numeric error" in captured.err

    def test_gradcheck_rejects_unknown_dims(self, capsys):
        assert run(["gradcheck", "--dims", "full"]) == 1


class TestConfigResolution:
    def test_fingerprint_printed_on_every_run(self, tmp_path, capsys):
        out = tmp_path / "c"
        assert run(["gen-synth", "--out", out, "--num-articles", "10"]) == 0
        assert FINGERPRINT_LINE.search(capsys.readouterr().err)

    def test_preset_flag_controls_fingerprint(self, tmp_path, capsys):
        cand = tmp_path / "cand.txt"
        ref = tmp_path / "ref.txt"
        cand.write_text("storm river\n", encoding="utf-8")
        ref.write_text("storm river\n", encoding="utf-8")
        assert run(["score-rouge", "--candidate", cand, "--reference", ref,
                    "--preset", "paper"]) == 0
        got = FINGERPRINT_LINE.search(capsys.readouterr().err).group(1)
        assert got == config.preset("paper", "pretrain-ext").fingerprint()

    def test_config_file_beats_preset(self, tmp_path, capsys):
        cand = tmp_path / "cand.txt"
        ref = tmp_path / "ref.txt"
        cand.write_text("storm\n", encoding="utf-8")
        ref.write_text("storm\n", encoding="utf-8")
        cfg = config.preset("desk", "e2e")
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(cfg.to_json(), encoding="utf-8")
        assert run(["score-rouge", "--candidate", cand, "--reference", ref,
                    "--config", cfg_path, "--preset", "paper"]) == 0
        got = FINGERPRINT_LINE.search(capsys.readouterr().err).group(1)
        assert got == cfg.fingerprint()

    def test_explicit_flag_overrides_config_file(self, tmp_path, capsys):
        cfg = config.preset("desk", "pretrain-ext")
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(cfg.to_json(), encoding="utf-8")
        labels = tmp_path / "labels"
        missing = tmp_path / "missing.jsonl"
        run(["make-labels", "--corpus", missing, "--out", labels,
             "--config", cfg_path, "--max-sentences", "3"])
        got = FINGERPRINT_LINE.search(capsys.readouterr().err).group(1)
        import dataclasses
        expected = dataclasses.replace(cfg, max_sentences=3).fingerprint()
        assert got == expected


class TestPipeline:
    def test_labels_file_matches_corpus(self, ws):
        labels = corpus.load_labels(ws["labels"])
        pairs = corpus.load_pairs(ws["train"])
        assert len(labels) == len(pairs)
        assert all(set(row) <= {0, 1} for row in labels)

    def test_vocab_file_was_built(self, ws):
        vocab = corpus.load_vocab(ws["vocab"])
        assert vocab.size == 48

    def test_checkpoints_hold_expected_networks(self, ws):
        ext = checkpoint.load(ws["ext"])
        assert ext.has_extractor() and not ext.has_abstracter()
        abs_ = checkpoint.load(ws["abs"])
        assert abs_.has_abstracter() and not abs_.has_extractor()
        e2e = checkpoint.load(ws["e2e"])
        assert e2e.has_extractor() and e2e.has_abstracter()

    def test_decode_writes_one_line_per_record(self, ws, capsys):
        assert run(["decode", "--corpus", ws["test"], "--vocab", ws["vocab"],
                    "--ckpt", ws["e2e"]]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == len(corpus.load_pairs(ws["test"]))

    def test_decode_out_file_and_max_len(self, ws, tmp_path_factory):
        out = tmp_path_factory.mktemp("decode") / "sums.txt"
        assert run(["decode", "--corpus", ws["test"], "--vocab", ws["vocab"],
                    "--ckpt", ws["e2e"], "--out", out, "--max-len", "3"]) == 0
        lines = out.read_text(encoding="utf-8").splitlines()
        assert len(lines) == len(corpus.load_pairs(ws["test"]))
        for line in lines:
            assert len(corpus.tokenize(line)) <= 3
            if line and line[0].isalpha():
                assert line[0].isupper()

    def test_decode_rejects_extractor_only_checkpoint(self, ws, capsys):
        assert run(["decode", "--corpus", ws["test"], "--vocab", ws["vocab"],
                    "--ckpt", ws["ext"]]) == 2
        assert "no abstracter" in capsys.readouterr().err

    def test_vocab_mismatch_is_data_error(self, ws, tmp_path_factory, capsys):
        other = tmp_path_factory.mktemp("vocab") / "small.txt"
        vocab = corpus.build_vocab([corpus.tokenize("storm river mountain")], 7)
        corpus.save_vocab(vocab, other)
        assert run(["decode", "--corpus", ws["test"], "--vocab", other,
                    "--ckpt", ws["e2e"]]) == 2
        assert "vocab" in capsys.readouterr().err.lower()

    def test_evaluate_emits_report(self, ws, capsys):
        assert run(["evaluate", "--corpus", ws["test"], "--vocab", ws["vocab"],
                    "--ckpt", ws["e2e"]]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["num_articles"] == len(corpus.load_pairs(ws["test"]))
        assert set(report["abstractive"]) == {"rouge_1", "rouge_2", "rouge_l"}
        assert report["fingerprint"]

    def test_mismatched_label_rows_rejected(self, ws, tmp_path_factory, capsys):
        scratch = tmp_path_factory.mktemp("labels")
        assert run(["pretrain-ext", "--corpus", ws["dev"], "--val", ws["dev"],
                    "--vocab", scratch / "v.txt", "--out", scratch / "m.ckpt",
                    "--labels", ws["labels"], "--iterations", "2",
                    *SMALL_TRAIN]) == 2
        assert "label rows" in capsys.readouterr().err

    def test_resume_matches_straight_run(self, ws, tmp_path_factory):
        scratch = tmp_path_factory.mktemp("resume")
        common = ["--corpus", ws["train"], "--val", ws["dev"],
                  "--vocab", ws["vocab"], "--labels", ws["labels"],
                  *SMALL_TRAIN]
        assert run(["pretrain-ext", *common, "--iterations", "8",
                    "--out", scratch / "straight.ckpt",
                    "--state-out", scratch / "straight-final.ckpt"]) == 0
        assert run(["pretrain-ext", *common, "--iterations", "4",
                    "--out", scratch / "half.ckpt",
                    "--state-out", scratch / "half-final.ckpt"]) == 0
        assert run(["pretrain-ext", *common, "--iterations", "8",
                    "--out", scratch / "resumed.ckpt",
                    "--state-out", scratch / "resumed-final.ckpt",
                    "--resume", scratch / "half-final.ckpt"]) == 0
        straight = checkpoint.load(scratch / "straight-final.ckpt")
        resumed = checkpoint.load(scratch / "resumed-final.ckpt")
        assert straight.iteration == resumed.iteration == 8
        for name in straight.params:
            assert np.array_equal(straight.params[name], resumed.params[name])


class TestScoreRouge:
    def write(self, tmp_path, cand_lines, ref_lines):
        cand = tmp_path / "cand.txt"
        ref = tmp_path / "ref.txt"
        cand.write_text("".join(l + "\n" for l in cand_lines), encoding="utf-8")
        ref.write_text("".join(l + "\n" for l in ref_lines), encoding="utf-8")
        return cand, ref

    def test_identical_lines_score_one(self, tmp_path, capsys):
        cand, ref = self.write(tmp_path, ["storm river mountain"] * 2,
                               ["storm river mountain"] * 2)
        assert run(["score-rouge", "--candidate", cand, "--reference", ref]) == 0
        score = json.loads(capsys.readouterr().out)
        assert score == {"precision": 1.0, "recall": 1.0, "f1": 1.0}

    def test_metric_selects_ngram_order(self, tmp_path, capsys):
        cand, ref = self.write(tmp_path, ["storm river harbor"],
                               ["storm river mountain"])
        assert run(["score-rouge", "--candidate", cand, "--reference", ref,
                    "--metric", "2"]) == 0
        score = json.loads(capsys.readouterr().out)
        assert score["recall"] == pytest.approx(0.5)

    def test_detokenized_and_plain_lines_score_alike(self, tmp_path, capsys):
        cand, ref = self.write(tmp_path, ["Storm river."], ["storm river ."])
        assert run(["score-rouge", "--candidate", cand, "--reference", ref]) == 0
        score = json.loads(capsys.readouterr().out)
        assert score["f1"] == 1.0

    def test_length_mismatch_is_data_error(self, tmp_path, capsys):
        cand, ref = self.write(tmp_path, ["a", "b"], ["a"])
        assert run(["score-rouge", "--candidate", cand, "--reference", ref]) == 2

    def test_empty_files_rejected(self, tmp_path, capsys):
        cand, ref = self.write(tmp_path, [], [])
        assert run(["score-rouge", "--candidate", cand, "--reference", ref]) == 2
