import json
import shutil
import subprocess
import sys

import pytest

from hierclass.cli import build_config, main
from hierclass.ontology import parse_ontology

SMALL_SYNTH = {"pages_per_lang": 60, "langs": ["aa", "bb"], "seed": 5}
ENC = '{"d": 16, "seq": 16}'
LINEAR_TRAIN = ('{"head": "linear-leaf", "pooling": "CLS", "d": 16, "seq": 16, '
                '"first_k": 4, "epochs": 2, "batch_size": 8, "lr_max": 0.05, '
                '"warmup_steps": 5, "n_slices": 2}')


@pytest.fixture(scope="session")
def synth(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    rc = main(["gen-synthetic", "--set", f"out_dir={out}",
               "--set", f"synthetic={json.dumps(SMALL_SYNTH)}"])
    assert rc == 0
    return out


@pytest.fixture(scope="session")
def linear_run(tmp_path_factory, synth):
    out = tmp_path_factory.mktemp("linear_run")
    rc = main(["train",
               "--set", f"ontology={synth}/taxonomy.tsv",
               "--set", f"corpus={synth}/corpus.jsonl",
               "--set", f"out_dir={out}",
               "--set", f"encoder={ENC}",
               "--set", f"train={LINEAR_TRAIN}"])
    assert rc == 0
    return out


@pytest.fixture(scope="session")
def gru_run(tmp_path_factory, synth):
    out = tmp_path_factory.mktemp("gru_run")
    rc = main(["train",
               "--set", f"ontology={synth}/taxonomy.tsv",
               "--set", f"corpus={synth}/corpus.jsonl",
               "--set", f"out_dir={out}",
               "--set", 'langs=["aa"]',
               "--set", 'encoder={"d": 8, "seq": 8}',
               "--set", ('train={"head": "gru", "pooling": "CLS", "d": 8, '
                         '"seq": 8, "h": 8, "first_k": 2, "epochs": 1, '
                         '"batch_size": 8, "lr_max": 0.05, "warmup_steps": 2, '
                         '"n_slices": 2}')])
    assert rc == 0
    return out


def ckpt_args(synth, run_dir):
    return ["--set", f"ontology={synth}/taxonomy.tsv",
            "--set", f"corpus={synth}/corpus.jsonl",
            "--set", f"checkpoint={run_dir}/final.ckpt",
            "--set", f"encoder={ENC}"]


@pytest.fixture(scope="session")
def predictions(tmp_path_factory, synth, linear_run):
    path = tmp_path_factory.mktemp("preds") / "preds.jsonl"
    rc = main(["predict", *ckpt_args(synth, linear_run),
               "--set", f"predictions={path}"])
    assert rc == 0
    return path


class TestConfig:
    def test_defaults_validate(self):
        cfg = build_config(None, [])
        assert cfg["metric"] == "macroF1"
        assert cfg["strategy"] == {"kind": "MaxScore", "theta": None}
        assert cfg["encoder"]["kind"] == "hash"

    def test_unknown_top_level_key(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text('{"momentum": 1}')
        assert main(["train", "--config", str(path)]) == 1
        assert "unknown config key 'momentum'" in capsys.readouterr().err

    def test_unknown_nested_key_names_full_path(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text('{"train": {"momentum": 1}}')
        assert main(["train", "--config", str(path)]) == 1
        assert "train.momentum" in capsys.readouterr().err

    def test_unknown_set_key(self, capsys):
        assert main(["train", "--set", "train.momentum=0.9"]) == 1
        assert "train.momentum" in capsys.readouterr().err

    def test_set_beats_config_file(self, tmp_path):
        cfile = tmp_path / "c.json"
        cfile.write_text(json.dumps({
            "out_dir": str(tmp_path / "out"),
            "encoder": {"d": 8},
            "synthetic": {"pages_per_lang": 2, "langs": ["aa"]},
        }))
        rc = main(["gen-synthetic", "--config", str(cfile),
                   "--set", "encoder.d=12"])
        assert rc == 0
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["config"]["encoder"]["d"] == 12
        assert manifest["config"]["encoder"]["seq"] == 32  # default kept

    def test_set_needs_equals(self, capsys):
        assert main(["train", "--set", "threads"]) == 1
        assert "key=value" in capsys.readouterr().err

    def test_three_segment_path_rejected(self):
        assert main(["train", "--set", "train.opt.beta=1"]) == 1

    def test_config_file_must_be_json_object(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("not json at all {")
        assert main(["train", "--config", str(bad)]) == 1
        bad.write_text("[1, 2]")
        assert main(["train", "--config", str(bad)]) == 1

    @pytest.mark.parametrize("expr", [
        "threads=0",
        'threads="two"',
        "metric=accuracy",
        "split=test",
        'strategy={"kind": "Argmax"}',
        'strategy={"kind": "Threshold", "theta": "high"}',
        'encoder={"kind": "bert"}',
        'langs="aa"',
    ])
    def test_bad_values_exit_1(self, expr):
        assert main(["train", "--set", expr]) == 1

    def test_unparseable_set_value_falls_back_to_string(self):
        # macroF1 is not JSON, so it must survive as a plain string
        cfg = build_config(None, ["metric=macroF1"])
        assert cfg["metric"] == "macroF1"

    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "gen-synthetic" in capsys.readouterr().out

    def test_usage_error_exits_one(self):
        assert main(["frobnicate"]) == 1
        assert main([]) == 1


class TestGenSynthetic:
    def test_default_branching_tree_shape(self, tmp_path, capsys):
        rc = main(["gen-synthetic", "--set", f"out_dir={tmp_path}",
                   "--set", 'synthetic={"pages_per_lang": 2}'])
        assert rc == 0
        assert "93 labels (54 leaves)" in capsys.readouterr().out
        o = parse_ontology((tmp_path / "taxonomy.tsv").read_text())
        assert o.n_total == 3 + 9 + 27 + 54 == 93
        assert o.n_leaf == 54
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["taxonomy"]["n_total"] == 93
        assert manifest["config"]["synthetic"]["pages_per_lang"] == 2

    def test_requires_out_dir(self, capsys):
        assert main(["gen-synthetic"]) == 1
        assert "out_dir" in capsys.readouterr().err

    def test_deterministic_given_config(self, tmp_path):
        for sub in ("a", "b"):
            rc = main(["gen-synthetic", "--set", f"out_dir={tmp_path / sub}",
                       "--set", 'synthetic={"pages_per_lang": 5, "seed": 9}'])
            assert rc == 0
        assert ((tmp_path / "a" / "corpus.jsonl").read_bytes()
                == (tmp_path / "b" / "corpus.jsonl").read_bytes())

    def test_unknown_synthetic_key(self, capsys):
        assert main(["gen-synthetic", "--set", 'synthetic={"volume": 11}']) == 1
        assert "synthetic.volume" in capsys.readouterr().err


class TestTrain:
    def test_writes_artifacts(self, linear_run):
        assert (linear_run / "final.ckpt").exists()
        echoed = json.loads((linear_run / "config.json").read_text())
        assert echoed["config"]["train"]["head"] == "linear-leaf"
        rows = [json.loads(line) for line in
                (linear_run / "metrics.jsonl").read_text().splitlines()]
        assert rows and {"step", "lang", "macro_f1", "micro_f1"} <= set(rows[0])

    def test_missing_required_train_key(self, synth, tmp_path, capsys):
        rc = main(["train", "--set", f"corpus={synth}/corpus.jsonl",
                   "--set", f"ontology={synth}/taxonomy.tsv",
                   "--set", f"out_dir={tmp_path}",
                   "--set", 'train={"pooling": "CLS", "d": 16, "seq": 16}'])
        assert rc == 1
        assert "train.head" in capsys.readouterr().err

    def test_missing_corpus(self, tmp_path):
        rc = main(["train", "--set", f"out_dir={tmp_path}",
                   "--set", f"train={LINEAR_TRAIN}"])
        assert rc == 1

    def test_bad_head_value(self, synth, tmp_path):
        rc = main(["train", "--set", f"corpus={synth}/corpus.jsonl",
                   "--set", f"ontology={synth}/taxonomy.tsv",
                   "--set", f"out_dir={tmp_path}",
                   "--set", 'train={"head": "svm", "pooling": "CLS", "d": 4, "seq": 4}'])
        assert rc == 1

    def test_encoder_model_dim_mismatch(self, synth, tmp_path, capsys):
        rc = main(["train", "--set", f"corpus={synth}/corpus.jsonl",
                   "--set", f"ontology={synth}/taxonomy.tsv",
                   "--set", f"out_dir={tmp_path}",
                   "--set", 'encoder={"d": 8, "seq": 16}',
                   "--set", f"train={LINEAR_TRAIN}"])
        assert rc == 1
        assert "geometry" in capsys.readouterr().err


class TestPredict:
    def test_row_shape_and_config_echo(self, synth, predictions):
        rows = [json.loads(line) for line in predictions.read_text().splitlines()]
        assert rows
        o = parse_ontology((synth / "taxonomy.tsv").read_text())
        for row in rows:
            assert set(row) == {"page_id", "lang", "labels", "scores"}
            assert row["labels"] == sorted(row["labels"])
            assert set(row["scores"]) == set(row["labels"])
            assert all(o.is_leaf(lb) for lb in row["labels"])
        sidecar = json.loads((predictions.parent / (predictions.name + ".config.json"))
                             .read_text())
        assert sidecar["config"]["checkpoint"].endswith("final.ckpt")

    def test_gru_rows_are_single_leaves(self, synth, gru_run, tmp_path):
        path = tmp_path / "gru_preds.jsonl"
        rc = main(["predict",
                   "--set", f"ontology={synth}/taxonomy.tsv",
                   "--set", f"corpus={synth}/corpus.jsonl",
                   "--set", f"checkpoint={gru_run}/final.ckpt",
                   "--set", 'encoder={"d": 8, "seq": 8}',
                   "--set", 'langs=["aa"]',
                   "--set", f"predictions={path}"])
        assert rc == 0
        o = parse_ontology((synth / "taxonomy.tsv").read_text())
        rows = [json.loads(line) for line in path.read_text().splitlines()]
        assert rows
        for row in rows:
            assert len(row["labels"]) == 1
            assert o.is_leaf(row["labels"][0])

    def test_threshold_strategy_rejected_for_gru(self, synth, gru_run, tmp_path):
        rc = main(["predict",
                   "--set", f"ontology={synth}/taxonomy.tsv",
                   "--set", f"corpus={synth}/corpus.jsonl",
                   "--set", f"checkpoint={gru_run}/final.ckpt",
                   "--set", 'encoder={"d": 8, "seq": 8}',
                   "--set", 'strategy={"kind": "Threshold", "theta": 0.0}',
                   "--set", f"predictions={tmp_path}/p.jsonl"])
        assert rc == 1

    def test_missing_checkpoint(self, synth, tmp_path):
        rc = main(["predict",
                   "--set", f"ontology={synth}/taxonomy.tsv",
                   "--set", f"corpus={synth}/corpus.jsonl",
                   "--set", f"checkpoint={tmp_path}/nope.ckpt",
                   "--set", f"predictions={tmp_path}/p.jsonl"])
        assert rc == 1

    def test_corrupt_checkpoint(self, synth, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"JUNKJUNKJUNK")
        rc = main(["predict",
                   "--set", f"ontology={synth}/taxonomy.tsv",
                   "--set", f"corpus={synth}/corpus.jsonl",
                   "--set", f"checkpoint={bad}",
                   "--set", f"predictions={tmp_path}/p.jsonl"])
        assert rc == 1


class TestEval:
    def test_predictions_mode_matches_checkpoint_mode(self, synth, linear_run,
                                                      predictions, tmp_path):
        rc = main(["eval",
                   "--set", f"ontology={synth}/taxonomy.tsv",
                   "--set", f"corpus={synth}/corpus.jsonl",
                   "--set", f"predictions={predictions}",
                   "--set", f"report={tmp_path}/from_file.json"])
        assert rc == 0
        rc = main(["eval", *ckpt_args(synth, linear_run),
                   "--set", f"report={tmp_path}/from_ckpt.json"])
        assert rc == 0
        a = json.loads((tmp_path / "from_file.json").read_text())["rows"]
        b = json.loads((tmp_path / "from_ckpt.json").read_text())["rows"]
        assert a == b
        assert [r["lang"] for r in a] == ["aa", "bb", "all"]

    def test_empty_predictions_file_exits_1(self, synth, tmp_path, capsys):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        rc = main(["eval",
                   "--set", f"ontology={synth}/taxonomy.tsv",
                   "--set", f"corpus={synth}/corpus.jsonl",
                   "--set", f"predictions={empty}"])
        assert rc == 1
        assert "no (predicted, gold) pairs" in capsys.readouterr().err

    def test_prediction_for_unknown_page_exits_1(self, synth, tmp_path):
        rogue = tmp_path / "rogue.jsonl"
        rogue.write_text(json.dumps(
            {"page_id": 999999, "lang": "aa", "labels": ["1.1.1.1"]}) + "\n")
        rc = main(["eval",
                   "--set", f"ontology={synth}/taxonomy.tsv",
                   "--set", f"corpus={synth}/corpus.jsonl",
                   "--set", f"predictions={rogue}"])
        assert rc == 1

    def test_malformed_predictions_line_exits_1(self, synth, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"page_id": 1}\n')
        rc = main(["eval",
                   "--set", f"ontology={synth}/taxonomy.tsv",
                   "--set", f"corpus={synth}/corpus.jsonl",
                   "--set", f"predictions={bad}"])
        assert rc == 1

    def test_per_language_theta(self, synth, linear_run, tmp_path):
        rc = main(["eval", *ckpt_args(synth, linear_run),
                   "--set", ('strategy={"kind": "ThresholdWithMax", '
                             '"theta": {"aa": 0.0, "bb": -1.0}}'),
                   "--set", f"report={tmp_path}/r.json"])
        assert rc == 0
        rows = json.loads((tmp_path / "r.json").read_text())["rows"]
        assert [r["lang"] for r in rows] == ["aa", "bb", "all"]

    def test_theta_map_missing_language_exits_1(self, synth, linear_run, capsys):
        rc = main(["eval", *ckpt_args(synth, linear_run),
                   "--set", 'strategy={"kind": "Threshold", "theta": {"aa": 0.0}}'])
        assert rc == 1
        assert "bb" in capsys.readouterr().err

    def test_threshold_without_theta_exits_1(self, synth, linear_run):
        rc = main(["eval", *ckpt_args(synth, linear_run),
                   "--set", 'strategy={"kind": "Threshold"}'])
        assert rc == 1

    def test_report_embeds_effective_config(self, synth, linear_run, tmp_path):
        report = tmp_path / "r.json"
        rc = main(["eval", *ckpt_args(synth, linear_run),
                   "--set", "threads=2", "--set", f"report={report}"])
        assert rc == 0
        data = json.loads(report.read_text())
        assert data["config"]["threads"] == 2
        assert data["rows"][-1]["lang"] == "all"


class TestTuneThreshold:
    def test_emits_lang_steps_theta(self, synth, linear_run, tmp_path, capsys):
        report = tmp_path / "thetas.json"
        rc = main(["tune-threshold", *ckpt_args(synth, linear_run),
                   "--set", f"report={report}"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "lang" in out and "steps" in out and "theta" in out
        data = json.loads(report.read_text())
        metrics_rows = [json.loads(line) for line in
                        (linear_run / "metrics.jsonl").read_text().splitlines()]
        final_step = max(r["step"] for r in metrics_rows)
        assert [r["lang"] for r in data["rows"]] == ["aa", "bb"]
        for row in data["rows"]:
            assert set(row) == {"lang", "steps", "theta"}
            assert row["steps"] == final_step
            assert isinstance(row["theta"], float)

    def test_metric_choice_echoed(self, synth, linear_run, tmp_path):
        report = tmp_path / "thetas.json"
        rc = main(["tune-threshold", *ckpt_args(synth, linear_run),
                   "--set", "metric=microF1", "--set", f"report={report}"])
        assert rc == 0
        assert json.loads(report.read_text())["metric"] == "microF1"

    def test_rejects_gru_checkpoint(self, synth, gru_run, tmp_path, capsys):
        rc = main(["tune-threshold",
                   "--set", f"ontology={synth}/taxonomy.tsv",
                   "--set", f"corpus={synth}/corpus.jsonl",
                   "--set", f"checkpoint={gru_run}/final.ckpt",
                   "--set", 'encoder={"d": 8, "seq": 8}',
                   "--set", f"report={tmp_path}/t.json"])
        assert rc == 1
        assert "linear head" in capsys.readouterr().err


class TestErrorAnalysis:
    def test_rows_partition_samples(self, synth, predictions, tmp_path):
        report = tmp_path / "errors.json"
        rc = main(["error-analysis",
                   "--set", f"ontology={synth}/taxonomy.tsv",
                   "--set", f"corpus={synth}/corpus.jsonl",
                   "--set", f"predictions={predictions}",
                   "--set", f"report={report}"])
        assert rc == 0
        rows = json.loads(report.read_text())["rows"]
        assert [r["lang"] for r in rows] == ["aa", "bb", "all"]
        kinds = ["correct", "completely_incorrect", "over_predicted",
                 "under_predicted", "over_and_under"]
        for row in rows:
            assert sum(row[k] for k in kinds) == row["n_samples"]
        assert rows[-1]["n_samples"] == sum(r["n_samples"] for r in rows[:-1])

    def test_requires_predictions(self, synth):
        rc = main(["error-analysis",
                   "--set", f"ontology={synth}/taxonomy.tsv",
                   "--set", f"corpus={synth}/corpus.jsonl"])
        assert rc == 1


class TestGradCheck:
    def test_single_component(self, capsys):
        rc = main(["grad-check",
                   "--set", 'grad_check={"components": ["linear-head"], "trials": 2}'])
        assert rc == 0
        assert "linear-head" in capsys.readouterr().out

    def test_unknown_component(self, capsys):
        rc = main(["grad-check",
                   "--set", 'grad_check={"components": ["softmax-head"]}'])
        assert rc == 1
        assert "softmax-head" in capsys.readouterr().err

    def test_report_written(self, tmp_path):
        report = tmp_path / "gc.json"
        rc = main(["grad-check", "--set", f"report={report}",
                   "--set", 'grad_check={"components": ["pooling"], "trials": 2}'])
        assert rc == 0
        data = json.loads(report.read_text())
        assert data["reports"][0]["component"] == "pooling"
        assert data["reports"][0]["max_rel_error"] < 1e-4


class TestConsoleEntry:
    def test_subprocess_round_trip(self, tmp_path):
        script = shutil.which("hierclass")
        base = [script] if script else [sys.executable, "-m", "hierclass.cli"]
        out = tmp_path / "synth"
        proc = subprocess.run(
            [*base, "gen-synthetic", "--set", f"out_dir={out}",
             "--set", 'synthetic={"pages_per_lang": 2, "langs": ["aa"]}'],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert "93 labels" in proc.stdout
        assert (out / "manifest.json").exists()

    def test_subprocess_validation_exit_code(self):
        proc = subprocess.run(
            [sys.executable, "-m", "hierclass.cli", "train",
             "--set", "train.momentum=1"],
            capture_output=True, text=True)
        assert proc.returncode == 1
        assert "train.momentum" in proc.stderr
