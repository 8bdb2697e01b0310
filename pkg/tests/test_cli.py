"""Command-line surface: config resolution and overrides, JSON reports,
end-to-end subcommand runs on a small synthetic corpus, byte-identical
determinism, and error reporting."""

import json
import re
from pathlib import Path

import pytest

from rnntkit.cli import Config, main, parse_config_file, resolve_config
from rnntkit.confidence import CSV_FIELDS, FEATURE_NAMES, WordFeatures, write_feature_csv
from rnntkit.corpus import (
    WORD_CTM_FILE,
    load_corpus_meta,
    load_manifest,
    tokenize_text,
)
from rnntkit.errors import ConfigurationError
from rnntkit.io_utils import read_ctm, read_json, read_jsonl
from rnntkit.splicer import load_inventory
from rnntkit.transducer import (
    Hypothesis,
    NBestList,
    load_checkpoint,
    read_nbest_jsonl,
    write_nbest_jsonl,
)
from rnntkit.transducer.model import encoder_layer_freeze_names, named_params


def run(argv, out_path=None):
    """Invoke the CLI; if out_path is given, return (code, parsed report)."""
    argv = list(argv)
    if out_path is not None:
        argv += ["--out", str(out_path)]
    code = main(argv)
    if out_path is None:
        return code, None
    return code, (read_json(out_path) if code == 0 else None)


def dir_bytes(root) -> dict:
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Corpus of 12 utterances, a briefly trained model, and its decode."""
    root = tmp_path_factory.mktemp("cliws")
    corpus = root / "corpus"
    model = root / "model"
    nbest = root / "nbest.jsonl"
    assert run(["make-corpus", "--out-dir", str(corpus), "--seed", "5",
                "--set", "num_utterances=12"])[0] == 0
    assert run(["train", "--corpus", str(corpus), "--out-dir", str(model),
                "--seed", "7", "--set", "steps=60"])[0] == 0
    assert run(["decode", "--corpus", str(corpus), "--model", str(model),
                "--nbest-out", str(nbest), "--seed", "0"])[0] == 0
    return {"root": root, "corpus": corpus, "model": model, "nbest": nbest}


class TestConfigResolution:
    def test_defaults(self):
        assert resolve_config() == Config()

    def test_file_values_applied(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("# comment\n\nsteps = 7\nlr=0.2\n")
        cfg = resolve_config(cfg_file)
        assert cfg.steps == 7
        assert cfg.lr == 0.2

    def test_set_beats_file_beats_default(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("steps = 5\nlr = 0.2\n")
        cfg = resolve_config(cfg_file, ["steps=9"])
        assert cfg.steps == 9  # --set wins
        assert cfg.lr == 0.2  # file beats default
        assert cfg.hidden_dim == Config().hidden_dim

    def test_unknown_file_key_names_the_line(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("steps = 5\nbogus = 1\n")
        with pytest.raises(ConfigurationError, match=r"run\.cfg:2.*bogus"):
            parse_config_file(cfg_file)

    def test_file_line_without_equals(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("steps\n")
        with pytest.raises(ConfigurationError, match="key=value"):
            parse_config_file(cfg_file)

    def test_unknown_set_key(self):
        with pytest.raises(ConfigurationError, match="bogus"):
            resolve_config(None, ["bogus=1"])

    def test_set_without_equals(self):
        with pytest.raises(ConfigurationError, match="key=value"):
            resolve_config(None, ["steps"])

    def test_bool_spellings(self):
        for raw, want in [("true", True), ("1", True), ("YES", True),
                          ("on", True), ("false", False), ("0", False),
                          ("no", False), ("OFF", False)]:
            cfg = resolve_config(None, [f"optional_silence={raw}"])
            assert cfg.optional_silence is want

    def test_bad_bool(self):
        with pytest.raises(ConfigurationError, match="boolean"):
            resolve_config(None, ["optional_silence=maybe"])

    def test_bad_int(self):
        with pytest.raises(ConfigurationError, match="int"):
            resolve_config(None, ["steps=ten"])

    def test_bad_float(self):
        with pytest.raises(ConfigurationError, match="float"):
            resolve_config(None, ["lr=fast"])

    @pytest.mark.parametrize("override", [
        "train_mode=sgd",
        "word_order=shuffled",
        "weight_mode=uniform",
        "nbest=0",
        "alpha=1.5",
        "freeze_lower=-1",
        "mix_ratio=-0.5",
    ])
    def test_invalid_values_rejected(self, override):
        with pytest.raises(ConfigurationError):
            resolve_config(None, [override])

    def test_beam_must_cover_nbest(self):
        with pytest.raises(ConfigurationError, match="beam_width"):
            resolve_config(None, ["beam_width=2", "nbest=4"])


class TestReports:
    def test_stdout_report_is_sorted_json(self, tmp_path, capsys):
        code = main(["make-corpus", "--out-dir", str(tmp_path / "c"),
                     "--seed", "0", "--set", "num_utterances=2"])
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert list(report) == sorted(report)
        assert report["utterances"] == 2

    def test_out_flag_writes_file(self, tmp_path):
        out = tmp_path / "report.json"
        code, report = run(["make-corpus", "--out-dir", str(tmp_path / "c"),
                            "--seed", "0", "--set", "num_utterances=2"], out)
        assert code == 0
        assert report["out_dir"] == str(tmp_path / "c")

    def test_run_config_logged(self, tmp_path, caplog):
        import logging

        with caplog.at_level(logging.INFO, logger="rnntkit"):
            main(["make-corpus", "--out-dir", str(tmp_path / "c"),
                  "--seed", "3", "--set", "num_utterances=2"])
        assert "command=make-corpus" in caplog.text
        assert "seed=3" in caplog.text
        assert "num_utterances=2" in caplog.text
        assert "beam_width=8" in caplog.text  # full resolved config


class TestMakeCorpusAndTrain:
    def test_make_corpus_deterministic(self, tmp_path):
        for sub in ("a", "b"):
            assert run(["make-corpus", "--out-dir", str(tmp_path / sub),
                        "--seed", "5", "--set", "num_utterances=4"])[0] == 0
        assert dir_bytes(tmp_path / "a") == dir_bytes(tmp_path / "b")

    def test_train_outputs(self, workspace, tmp_path):
        out = tmp_path / "report.json"
        model_dir = tmp_path / "model"
        code, report = run(["train", "--corpus", str(workspace["corpus"]),
                            "--out-dir", str(model_dir), "--seed", "7",
                            "--set", "steps=4"], out)
        assert code == 0
        assert report["steps"] == 4
        assert report["final_loss"] < report["first_loss"]
        load_checkpoint(model_dir)  # round-trips
        history = read_json(model_dir / "history.json")
        assert len(history["total_loss"]) == 4

    def test_train_deterministic(self, workspace, tmp_path):
        dirs = []
        for sub in ("a", "b"):
            model_dir = tmp_path / sub
            assert run(["train", "--corpus", str(workspace["corpus"]),
                        "--out-dir", str(model_dir), "--seed", "7",
                        "--set", "steps=4"])[0] == 0
            dirs.append(model_dir)
        assert dir_bytes(dirs[0]) == dir_bytes(dirs[1])


class TestDecode:
    def test_nbest_readable(self, workspace):
        nbests = read_nbest_jsonl(workspace["nbest"])
        assert len(nbests) == 12
        manifest_ids = [r["utt_id"] for r in load_manifest(workspace["corpus"])]
        assert [nb.utt_id for nb in nbests] == manifest_ids

    def test_repeat_and_parallel_runs_byte_identical(self, workspace, tmp_path):
        again = tmp_path / "again.jsonl"
        parallel = tmp_path / "parallel.jsonl"
        assert run(["decode", "--corpus", str(workspace["corpus"]),
                    "--model", str(workspace["model"]),
                    "--nbest-out", str(again), "--seed", "0"])[0] == 0
        assert run(["decode", "--corpus", str(workspace["corpus"]),
                    "--model", str(workspace["model"]),
                    "--nbest-out", str(parallel), "--seed", "0",
                    "--jobs", "2"])[0] == 0
        reference = workspace["nbest"].read_bytes()
        assert again.read_bytes() == reference
        assert parallel.read_bytes() == reference

    def test_explicit_manifest_matches_corpus_default(self, workspace, tmp_path):
        out = tmp_path / "explicit.jsonl"
        assert run(["decode", "--corpus", str(workspace["corpus"]),
                    "--manifest", str(workspace["corpus"] / "manifest.jsonl"),
                    "--model", str(workspace["model"]),
                    "--nbest-out", str(out), "--seed", "0"])[0] == 0
        assert out.read_bytes() == workspace["nbest"].read_bytes()


class TestWer:
    def test_report_consistent(self, workspace, tmp_path):
        out = tmp_path / "wer.json"
        code, report = run(["wer", "--nbest", str(workspace["nbest"]),
                            "--corpus", str(workspace["corpus"])], out)
        assert code == 0
        assert report["wer"] == report["errors"] / report["ref_words"]
        assert report["utterances"] == 12
        assert len(report["per_utt"]) == 12
        assert all(v >= 0.0 for v in report["per_utt"].values())


class TestAlign:
    def test_align_decoded_output(self, workspace, tmp_path):
        out = tmp_path / "align.json"
        ctm = tmp_path / "hyp.ctm"
        code, report = run(["align", "--corpus", str(workspace["corpus"]),
                            "--model", str(workspace["model"]),
                            "--nbest", str(workspace["nbest"]),
                            "--ctm-out", str(ctm)], out)
        assert code == 0
        assert report["utterances"] > 0
        rows = read_ctm(ctm)
        assert len(rows) == report["words"]
        manifest_ids = {r["utt_id"] for r in load_manifest(workspace["corpus"])}
        assert {r.utt_id for r in rows} <= manifest_ids
        assert all(r.duration > 0 for r in rows)
        pattern = re.compile(r"^\S+ 1 \d+\.\d{3} \d+\.\d{3} \S+$")
        for line in ctm.read_text().splitlines():
            assert pattern.match(line)

    def test_reference_words_align_per_utterance(self, workspace, tmp_path):
        """A hand-built N-best carrying the true transcripts aligns every
        utterance into its own CTM block, words intact."""
        meta = load_corpus_meta(workspace["corpus"])
        rows = load_manifest(workspace["corpus"])[:3]
        nbests = []
        for row in rows:
            ids = tokenize_text(row["text"].split(), meta.vocab)
            n = len(ids)
            hyp = Hypothesis(
                token_ids=ids, logp=-1.0, emit_frames=tuple(range(n)),
                wp_logp=(-0.1,) * n, neg_entropy=(-0.2,) * n,
                emitted_count=n + 4, hyp_logp=tuple(-0.3 * (i + 1) for i in range(n)),
                emitted_counts=tuple(i + 2 for i in range(n)))
            nbests.append(NBestList(utt_id=row["utt_id"], hyps=(hyp,)))
        nbest_path = tmp_path / "oracle.jsonl"
        write_nbest_jsonl(nbest_path, nbests, meta.vocab)
        ctm = tmp_path / "oracle.ctm"
        code, report = run(["align", "--corpus", str(workspace["corpus"]),
                            "--model", str(workspace["model"]),
                            "--nbest", str(nbest_path), "--ctm-out", str(ctm)],
                           tmp_path / "report.json")
        assert code == 0
        assert report["utterances"] == 3
        assert report["skipped"] == []
        by_utt = {}
        for r in read_ctm(ctm):
            by_utt.setdefault(r.utt_id, []).append(r.unit)
        assert len(by_utt) == 3
        for row in rows:
            assert by_utt[row["utt_id"]] == row["text"].split()


class TestTimingEval:
    def test_self_comparison_is_exact_zero(self, workspace, tmp_path):
        ref = workspace["corpus"] / WORD_CTM_FILE
        out = tmp_path / "report.json"
        code, report = run(["timing-eval", "--hyp", str(ref),
                            "--ref", str(ref)], out)
        assert code == 0
        assert report["ave_st_ms"] == 0.0
        assert report["ave_et_ms"] == 0.0
        assert report["pct_ws_lt_200"] == 100.0
        assert report["pct_we_lt_200"] == 100.0

    def test_hand_case(self, tmp_path):
        ref = tmp_path / "ref.ctm"
        hyp = tmp_path / "hyp.ctm"
        ref.write_text("utt1 1 1.000 1.000 w1\nutt1 1 3.000 1.000 w2\n")
        # start deltas 40, 60 ms; end deltas 150, 250 ms
        hyp.write_text("utt1 1 1.040 1.110 w1\nutt1 1 3.060 1.190 w2\n")
        code, report = run(["timing-eval", "--hyp", str(hyp), "--ref", str(ref)],
                           tmp_path / "report.json")
        assert code == 0
        assert report["ave_st_ms"] == pytest.approx(50.0)
        assert report["ave_et_ms"] == pytest.approx(200.0)
        assert report["pct_ws_lt_200"] == pytest.approx(100.0)
        assert report["pct_we_lt_200"] == pytest.approx(50.0)
        assert report["words"] == 2

    def test_mismatched_words_are_skipped(self, tmp_path, caplog):
        import logging

        ref = tmp_path / "ref.ctm"
        hyp = tmp_path / "hyp.ctm"
        ref.write_text("u1 1 0.000 1.000 ab\nu2 1 0.000 1.000 cd\n")
        hyp.write_text("u1 1 0.000 1.000 ab\nu2 1 0.000 1.000 ef\n")
        with caplog.at_level(logging.INFO, logger="rnntkit"):
            code, report = run(["timing-eval", "--hyp", str(hyp),
                                "--ref", str(ref)], tmp_path / "report.json")
        assert code == 0
        assert report["words"] == 1
        assert "skipping u2" in caplog.text

    def test_no_common_utterances_fails(self, tmp_path, capsys):
        ref = tmp_path / "ref.ctm"
        hyp = tmp_path / "hyp.ctm"
        ref.write_text("u1 1 0.000 1.000 ab\n")
        hyp.write_text("u9 1 0.000 1.000 ab\n")
        assert main(["timing-eval", "--hyp", str(hyp), "--ref", str(ref)]) == 1
        assert "rnntkit timing-eval: DataError" in capsys.readouterr().err


@pytest.fixture(scope="module")
def splice_setup(workspace, tmp_path_factory):
    root = tmp_path_factory.mktemp("splice")
    corpus = workspace["corpus"]
    inv_word = root / "inv_word.json"
    inv_phone = root / "inv_phone.json"
    assert run(["build-inventory", "--alignments", str(corpus / WORD_CTM_FILE),
                "--audio-dir", str(corpus / "wav"), "--level", "word",
                "--inventory-out", str(inv_word)])[0] == 0
    assert run(["build-inventory",
                "--alignments", str(corpus / "phone_alignments.ctm"),
                "--audio-dir", str(corpus / "wav"), "--level", "phone",
                "--inventory-out", str(inv_phone)])[0] == 0
    texts = root / "texts.txt"
    texts.write_text("ab cd\nef abcd\ncd ef\n")
    return {"root": root, "inv_word": inv_word, "inv_phone": inv_phone,
            "texts": texts}


def splice_args(workspace, setup, out_dir):
    return ["splice", "--inventory", str(setup["inv_word"]),
            str(setup["inv_phone"]), "--lexicon",
            str(workspace["corpus"] / "lexicon.txt"),
            "--texts", str(setup["texts"]),
            "--real-manifest", str(workspace["corpus"] / "manifest.jsonl"),
            "--out-dir", str(out_dir), "--seed", "3",
            "--set", "mix_ratio=0.5"]


class TestSpliceAndAdapt:
    def test_inventory_round_trips(self, splice_setup):
        inv = load_inventory(splice_setup["inv_word"])
        assert inv.word_map
        assert all(Path(ref.audio_path).is_absolute()
                   for refs in inv.word_map.values() for ref in refs)

    def test_splice_builds_mixed_manifest(self, workspace, splice_setup, tmp_path):
        out_dir = tmp_path / "adapt_set"
        code, report = run(splice_args(workspace, splice_setup, out_dir),
                           tmp_path / "report.json")
        assert code == 0
        assert report["spliced"] == 3
        assert report["real"] == 2  # round(0.5 * 3)
        assert report["skipped"] == []
        rows = read_jsonl(out_dir / "manifest.jsonl")
        origins = [r["origin"] for r in rows]
        assert origins.count("spliced") == 3
        assert origins.count("real") == 2
        for row in rows:
            if row["origin"] == "real":
                assert Path(row["audio_path"]).is_absolute()

    def test_splice_deterministic(self, workspace, splice_setup, tmp_path):
        dirs = []
        for sub in ("a", "b"):
            out_dir = tmp_path / sub
            assert run(splice_args(workspace, splice_setup, out_dir))[0] == 0
            dirs.append(out_dir)
        assert dir_bytes(dirs[0]) == dir_bytes(dirs[1])

    def test_adapt_freezes_lower_layers(self, workspace, splice_setup, tmp_path):
        adapt_set = tmp_path / "adapt_set"
        assert run(splice_args(workspace, splice_setup, adapt_set))[0] == 0
        adapted_dir = tmp_path / "adapted"
        code, report = run(["adapt", "--corpus", str(workspace["corpus"]),
                            "--manifest", str(adapt_set / "manifest.jsonl"),
                            "--model", str(workspace["model"]),
                            "--out-dir", str(adapted_dir), "--seed", "7",
                            "--set", "steps=4"], tmp_path / "report.json")
        assert code == 0
        assert report["frozen_lower_layers"] == 1
        base = load_checkpoint(workspace["model"])
        adapted = load_checkpoint(adapted_dir)
        base_params = named_params(base)
        new_params = named_params(adapted)
        prefixes = encoder_layer_freeze_names(base, 1)
        assert prefixes
        frozen = {n for n in base_params
                  if any(n.startswith(p + ".") for p in prefixes)}
        assert frozen
        for name in frozen:
            assert (base_params[name] == new_params[name]).all()
        assert any((base_params[n] != new_params[n]).any()
                   for n in base_params if n not in frozen)
        nbest = tmp_path / "adapted.jsonl"
        assert run(["decode", "--corpus", str(workspace["corpus"]),
                    "--model", str(adapted_dir),
                    "--nbest-out", str(nbest), "--seed", "0"])[0] == 0


class TestConfidenceCommands:
    def test_train_from_decode_and_eval_from_csv(self, workspace, tmp_path):
        clf_dir = tmp_path / "clf"
        csv_path = tmp_path / "features.csv"
        code, report = run(["conf-train", "--nbest", str(workspace["nbest"]),
                            "--corpus", str(workspace["corpus"]),
                            "--csv-out", str(csv_path),
                            "--out-dir", str(clf_dir), "--seed", "1"],
                           tmp_path / "train.json")
        assert code == 0
        assert report["positives"] > 0
        assert report["negatives"] > 0
        assert report["examples"] == report["positives"] + report["negatives"]
        header = csv_path.read_text().splitlines()[0]
        assert header == ",".join(CSV_FIELDS)
        code, report = run(["conf-eval", "--features", str(csv_path),
                            "--classifier", str(clf_dir)],
                           tmp_path / "eval.json")
        assert code == 0
        assert 0.0 <= report["aupr_correct"] <= 1.0
        assert 0.0 <= report["aupr_incorrect"] <= 1.0
        assert set(report["per_feature"]) == set(FEATURE_NAMES)

    def test_train_from_csv(self, tmp_path):
        rows = []
        for i in range(40):
            label = i % 2
            base = -0.2 if label else -2.0
            feats = WordFeatures(
                word="w", avg_hyp_prob=base + 0.01 * i, min_wp_prob=base,
                avg_wp_prob=base, min_neg_entropy=base, avg_neg_entropy=base,
                cn_prob=0.9 if label else 0.1, cn_norm_prob=0.9 if label else 0.1)
            rows.append((f"u{i:03d}", 0, feats, label))
        csv_path = tmp_path / "features.csv"
        write_feature_csv(csv_path, rows)
        clf_dir = tmp_path / "clf"
        code, report = run(["conf-train", "--features", str(csv_path),
                            "--out-dir", str(clf_dir), "--seed", "0"],
                           tmp_path / "train.json")
        assert code == 0
        assert report["examples"] == 40
        code, report = run(["conf-eval", "--features", str(csv_path),
                            "--classifier", str(clf_dir)],
                           tmp_path / "eval.json")
        assert code == 0
        assert report["aupr_incorrect"] > 0.9  # cleanly separable

    def test_sources_required(self, tmp_path, capsys):
        assert main(["conf-train", "--out-dir", str(tmp_path / "clf")]) == 1
        err = capsys.readouterr().err
        assert "rnntkit conf-train: ConfigurationError" in err
        assert "--features" in err


class TestErrorReporting:
    def test_missing_corpus_names_command_and_exception(self, tmp_path, capsys):
        assert main(["train", "--corpus", str(tmp_path / "nope"),
                     "--out-dir", str(tmp_path / "model")]) == 1
        err = capsys.readouterr().err
        assert err.splitlines()[-1].startswith("rnntkit train: ")

    def test_unknown_set_key_fails_cleanly(self, tmp_path, capsys):
        assert main(["make-corpus", "--out-dir", str(tmp_path / "c"),
                     "--set", "bogus=1"]) == 1
        assert "ConfigurationError" in capsys.readouterr().err

    def test_missing_model_fails(self, workspace, tmp_path, capsys):
        assert main(["decode", "--corpus", str(workspace["corpus"]),
                     "--model", str(tmp_path / "nope"),
                     "--nbest-out", str(tmp_path / "n.jsonl")]) == 1
        assert "rnntkit decode:" in capsys.readouterr().err
