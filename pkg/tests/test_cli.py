"""End-to-end command-line workflows on a miniature corpus."""

import json
import os

import numpy as np
import pytest

from speechinv.cli import main
from speechinv.corpus import load_manifest
from speechinv.tensorio import read_tensor

SMALL_CONFIG = {
    "model": {"hidden": 4, "dense": 8, "n_layers": 1},
    "synth": {"n_speakers": 3, "utterances_per_speaker": 4},
    "train": {"max_epochs": 2, "batch_size": 4, "patience": 10},
    "split": {"n_train_speakers": 1},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A corpus plus one multi-task and one single-task training run."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.json"
    config.write_text(json.dumps(SMALL_CONFIG))
    single = dict(SMALL_CONFIG, train=dict(SMALL_CONFIG["train"], algorithm="single_task"))
    config_single = root / "single.json"
    config_single.write_text(json.dumps(single))
    corpus = root / "corpus"
    multi_run = root / "multi"
    single_run = root / "single"
    assert main(["synth", "--out", str(corpus), "--config", str(config), "--seed", "1"]) == 0
    assert main([
        "train", "--corpus", str(corpus), "--out", str(multi_run),
        "--config", str(config), "--seed", "1",
    ]) == 0
    assert main([
        "train", "--corpus", str(corpus), "--out", str(single_run),
        "--config", str(config_single), "--seed", "1",
    ]) == 0
    return {
        "root": root,
        "config": config,
        "config_single": config_single,
        "corpus": corpus,
        "multi": multi_run,
        "single": single_run,
    }


class TestSynth:
    def test_corpus_layout(self, workspace):
        corpus = workspace["corpus"]
        assert (corpus / "corpus.json").exists()
        assert (corpus / "run.json").exists()
        utts, _, rate = load_manifest(corpus)
        assert len(utts) == 12
        assert rate == 22050

    def test_missing_out_flag_fails(self, workspace):
        assert main(["synth", "--config", str(workspace["config"])]) == 1

    def test_refuses_populated_directory(self, workspace, capsys):
        code = main(["synth", "--out", str(workspace["corpus"]), "--config", str(workspace["config"])])
        assert code == 1
        assert "overwrite" in capsys.readouterr().err

    def test_overwrite_flag_replaces(self, workspace, tmp_path):
        out = tmp_path / "c"
        args = ["synth", "--out", str(out), "--config", str(workspace["config"]), "--seed", "2"]
        assert main(args) == 0
        assert main(args + ["--overwrite"]) == 0

    def test_same_seed_same_bytes(self, workspace, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            code = main([
                "synth", "--out", str(out), "--config", str(workspace["config"]), "--seed", "5",
            ])
            assert code == 0
        for rel in ("corpus.json", "run.json", "audio/s00u000.f32", "tv/s00u000.atv"):
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

    def test_unknown_config_key_fails(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"synth": {"bogus": 1}}))
        assert main(["synth", "--out", str(tmp_path / "o"), "--config", str(bad)]) == 1
        assert "bogus" in capsys.readouterr().err

    def test_toml_config_accepted(self, tmp_path):
        cfg = tmp_path / "config.toml"
        cfg.write_text("[synth]\nn_speakers = 3\nutterances_per_speaker = 1\n")
        out = tmp_path / "toml-corpus"
        assert main(["synth", "--out", str(out), "--config", str(cfg)]) == 0
        utts, _, _ = load_manifest(out)
        assert len(utts) == 3


class TestParser:
    def test_unknown_verb_exits_one(self):
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code == 1

    def test_no_verb_prints_help(self, capsys):
        assert main([]) == 1
        assert "usage" in capsys.readouterr().out.lower()

    def test_bad_profile_exits_one(self, workspace):
        with pytest.raises(SystemExit) as err:
            main(["synth", "--out", "/tmp/x", "--profile", "huge"])
        assert err.value.code == 1


class TestFeaturize:
    def test_writes_one_tensor_per_utterance(self, workspace, tmp_path):
        out = tmp_path / "feats"
        code = main([
            "featurize", "--corpus", str(workspace["corpus"]), "--out", str(out),
            "--config", str(workspace["config"]),
        ])
        assert code == 0
        files = sorted(os.listdir(out / "features"))
        assert len(files) == 12
        feats = read_tensor(out / "features" / files[0], np.float32)
        assert feats.shape == (200, 13)

    def test_missing_corpus_fails(self, workspace, tmp_path):
        code = main([
            "featurize", "--corpus", str(tmp_path / "nowhere"), "--out", str(tmp_path / "o"),
        ])
        assert code == 1


class TestTrain:
    def test_outputs_present(self, workspace):
        run = workspace["multi"]
        for rel in ("split.json", "epochs.csv", "train_summary.json", "run.json"):
            assert (run / rel).exists(), rel
        assert (run / "checkpoint" / "checkpoint.json").exists()
        summary = json.loads((run / "train_summary.json").read_text())
        assert summary["algorithm"] == "mtl_algo2"
        assert summary["epochs_run"] == 2
        assert not summary["diverged"]

    def test_split_is_speaker_disjoint(self, workspace):
        split = json.loads((workspace["multi"] / "split.json").read_text())
        assert split["speaker_assignment"]["spk00"] == "train"
        parts = [set(split[k]) for k in ("train", "dev", "test")]
        assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
        assert sum(len(p) for p in parts) == 12

    def test_epochs_csv_has_header_and_rows(self, workspace):
        lines = (workspace["multi"] / "epochs.csv").read_text().strip().split("\n")
        assert lines[0].startswith("epoch,l_tv,l_ph,l_joint,val_loss,lr,")
        assert len(lines) == 3

    def test_run_record_structure(self, workspace):
        record = json.loads((workspace["multi"] / "run.json").read_text())
        assert record["command"] == "train"
        assert record["seed"] == 1
        assert set(record) == {
            "command", "version", "seed", "config", "config_hash",
            "input_hashes", "output_hashes",
        }
        assert "corpus.json" in record["input_hashes"]["corpus"]
        outputs = record["output_hashes"]
        assert "split.json" in outputs
        assert "checkpoint/checkpoint.json" in outputs
        assert "run.json" not in outputs
        assert "epochs.csv" not in outputs

    def test_deterministic_across_reruns(self, workspace, tmp_path):
        out = tmp_path / "rerun"
        code = main([
            "train", "--corpus", str(workspace["corpus"]), "--out", str(out),
            "--config", str(workspace["config"]), "--seed", "1",
        ])
        assert code == 0
        base = workspace["multi"]
        for rel in ("split.json", "train_summary.json", "run.json",
                    "checkpoint/checkpoint.json", "checkpoint/tv_w.atv"):
            assert (out / rel).read_bytes() == (base / rel).read_bytes(), rel

    def test_nan_corpus_exits_two(self, workspace, tmp_path, capsys):
        corrupted = tmp_path / "nan-corpus"
        code = main([
            "synth", "--out", str(corrupted), "--config", str(workspace["config"]), "--seed", "1",
        ])
        assert code == 0
        for name in os.listdir(corrupted / "audio"):
            np.full(2 * 22050, np.nan, dtype="<f4").tofile(corrupted / "audio" / name)
        code = main([
            "train", "--corpus", str(corrupted), "--out", str(tmp_path / "run"),
            "--config", str(workspace["config"]), "--seed", "1",
        ])
        assert code == 2
        assert "non-finite" in capsys.readouterr().err


class TestEval:
    def run_eval(self, workspace, out, extra=()):
        return main([
            "eval", "--corpus", str(workspace["corpus"]), "--out", str(out),
            "--checkpoint", str(workspace["multi"] / "checkpoint"),
            "--config", str(workspace["config"]), *extra,
        ])

    def test_report_files(self, workspace, tmp_path):
        out = tmp_path / "eval"
        assert self.run_eval(workspace, out) == 0
        payload = json.loads((out / "eval.json").read_text())
        assert payload["n_test_frames"] == 4 * 200
        assert payload["phoneme_accuracy_excl_pad"] is not None
        if payload["average_ppmc"] is not None:
            assert -1.0 <= payload["average_ppmc"] <= 1.0
        assert (out / "eval.txt").read_text().startswith("Metric")

    def test_split_seed_comes_from_checkpoint_header(self, workspace, tmp_path):
        implicit, explicit = tmp_path / "implicit", tmp_path / "explicit"
        assert self.run_eval(workspace, implicit) == 0
        assert self.run_eval(workspace, explicit, ("--seed", "1")) == 0
        assert (implicit / "eval.json").read_bytes() == (explicit / "eval.json").read_bytes()
        different = tmp_path / "different"
        assert self.run_eval(workspace, different, ("--seed", "3")) == 0
        assert (different / "eval.json").read_bytes() != (implicit / "eval.json").read_bytes()

    def test_missing_checkpoint_fails(self, workspace, tmp_path):
        code = main([
            "eval", "--corpus", str(workspace["corpus"]), "--out", str(tmp_path / "o"),
            "--checkpoint", str(tmp_path / "nowhere"),
        ])
        assert code == 1

    def test_single_task_checkpoint_evaluates(self, workspace, tmp_path):
        out = tmp_path / "eval-single"
        code = main([
            "eval", "--corpus", str(workspace["corpus"]), "--out", str(out),
            "--checkpoint", str(workspace["single"] / "checkpoint"),
            "--config", str(workspace["config"]),
        ])
        assert code == 0
        payload = json.loads((out / "eval.json").read_text())
        assert payload["phoneme_accuracy_excl_pad"] is None


class TestAblate:
    def test_two_point_sweep(self, workspace, tmp_path):
        cfg = dict(SMALL_CONFIG)
        cfg["ablate"] = {"alphas": [0.5, 0.0]}
        config = tmp_path / "ablate.json"
        config.write_text(json.dumps(cfg))
        out = tmp_path / "ablate"
        code = main([
            "ablate", "--corpus", str(workspace["corpus"]), "--out", str(out),
            "--config", str(config), "--seed", "1",
        ])
        assert code == 0
        lines = (out / "ablation.csv").read_text().strip().split("\n")
        assert lines[0] == "alpha,average_ppmc,phoneme_accuracy_pct,status"
        assert len(lines) == 3
        alphas = [float(line.split(",")[0]) for line in lines[1:]]
        assert alphas == [0.0, 0.5]
        assert all(line.split(",")[-1] == "ok" for line in lines[1:])
        assert (out / "ablation.txt").exists()


class TestGridSearch:
    def test_tiny_grid(self, workspace, tmp_path):
        cfg = dict(SMALL_CONFIG)
        cfg["gridsearch"] = {"lr_grid": [1e-3], "batch_grid": [4, 8]}
        config = tmp_path / "grid.json"
        config.write_text(json.dumps(cfg))
        out = tmp_path / "grid"
        code = main([
            "gridsearch", "--corpus", str(workspace["corpus"]), "--out", str(out),
            "--config", str(config), "--seed", "1",
        ])
        assert code == 0
        lines = (out / "grid.csv").read_text().strip().split("\n")
        assert len(lines) == 3
        best = json.loads((out / "best.json").read_text())
        assert best["lr"] == 1e-3
        assert best["batch_size"] in (4, 8)


class TestCompare:
    def test_three_rows_and_timings(self, workspace, tmp_path):
        out = tmp_path / "compare"
        code = main([
            "compare", "--corpus", str(workspace["corpus"]), "--out", str(out),
            "--config", str(workspace["config"]), "--seed", "1",
        ])
        assert code == 0
        lines = (out / "compare.csv").read_text().strip().split("\n")
        assert len(lines) == 4
        algorithms = [line.split(",")[0] for line in lines[1:]]
        assert algorithms == ["single_task", "mtl_algo1", "mtl_algo2"]
        params = [int(line.split(",")[-1]) for line in lines[1:]]
        assert params[0] < params[1] == params[2]
        timing_lines = (out / "timings.csv").read_text().strip().split("\n")
        assert len(timing_lines) == 4
        record = json.loads((out / "run.json").read_text())
        assert "timings.csv" not in record["output_hashes"]
        assert "compare.csv" in record["output_hashes"]


class TestPlotData:
    def test_trajectory_csv(self, workspace, tmp_path):
        out = tmp_path / "plot"
        split = json.loads((workspace["multi"] / "split.json").read_text())
        uid = split["test"][0]
        code = main([
            "plotdata", "--corpus", str(workspace["corpus"]), "--out", str(out),
            "--model-a", str(workspace["multi"] / "checkpoint"),
            "--model-b", str(workspace["single"] / "checkpoint"),
            "--utterance", uid, "--config", str(workspace["config"]),
        ])
        assert code == 0
        lines = (out / "plot.csv").read_text().strip().split("\n")
        assert lines[0] == "frame,tv_name,ground_truth,multi_task,single_task"
        assert len(lines) == 1 + 9 * 200

        utts, _, _ = load_manifest(workspace["corpus"])
        target = {u.id: u for u in utts}[uid].tv_targets
        row_frame42 = lines[1 + 42].split(",")  # first TV block, frame 42
        assert int(row_frame42[0]) == 42
        assert float(row_frame42[2]) == float(target[42, 0])

    def test_unknown_utterance_fails(self, workspace, tmp_path, capsys):
        code = main([
            "plotdata", "--corpus", str(workspace["corpus"]), "--out", str(tmp_path / "p"),
            "--model-a", str(workspace["multi"] / "checkpoint"),
            "--model-b", str(workspace["single"] / "checkpoint"),
            "--utterance", "sXXuXXX", "--config", str(workspace["config"]),
        ])
        assert code == 1
        assert "sXXuXXX" in capsys.readouterr().err

    def test_missing_flags_fail(self, workspace, tmp_path):
        code = main([
            "plotdata", "--corpus", str(workspace["corpus"]), "--out", str(tmp_path / "p"),
        ])
        assert code == 1
