import csv
import json

import numpy as np
import pytest

from faust_adapt.cli import main
from faust_adapt.harness import PRESET_ORDER


def run(argv):
    return main(argv)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data + pretrain once for the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    prefix = str(root / "moons")
    assert run([
        "gen-data", "--family", "two-moons", "--n", "400", "--rotation", "30",
        "--seed", "3", "--out", prefix,
    ]) == 0
    ckpt = str(root / "src.fckpt")
    assert run([
        "pretrain", "--data", f"{prefix}.source.fdat", "--epochs", "15",
        "--seed", "1", "--out", ckpt,
    ]) == 0
    return root, prefix, ckpt


class TestGenData:
    def test_writes_three_files_and_manifest(self, tmp_path):
        prefix = str(tmp_path / "blobs")
        assert run([
            "gen-data", "--family", "blobs", "--n", "300", "--seed", "2", "--out", prefix,
        ]) == 0
        for suffix in (".source.fdat", ".target.fdat", ".eval.fdat"):
            assert (tmp_path / f"blobs{suffix}").exists()
        manifest = json.loads((tmp_path / "blobs.manifest.json").read_text())
        assert manifest["command"] == "gen-data"
        assert manifest["seed"] == 2
        assert set(manifest["outputs"]) == {"source", "target", "eval"}

    def test_idempotent_given_seed(self, tmp_path):
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        for prefix in (a, b):
            run(["gen-data", "--family", "two-moons", "--n", "200", "--seed", "9", "--out", prefix])
        assert (tmp_path / "a.source.fdat").read_bytes() == (tmp_path / "b.source.fdat").read_bytes()

    def test_unknown_family_usage_error(self, tmp_path, capsys):
        code = run(["gen-data", "--family", "spirals", "--n", "200", "--out", str(tmp_path / "x")])
        assert code == 2
        err = capsys.readouterr().err
        assert err.startswith("error: usage:") and err.count("\n") == 1

    def test_too_small_n_runtime_error(self, tmp_path, capsys):
        code = run(["gen-data", "--family", "two-moons", "--n", "10", "--out", str(tmp_path / "x")])
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestAdaptEval:
    def test_adapt_then_eval(self, pipeline, capsys):
        root, prefix, ckpt = pipeline
        out = str(root / "adapted.fckpt")
        log = str(root / "run.jsonl")
        assert run([
            "adapt", "--source-ckpt", ckpt, "--target-data", f"{prefix}.target.fdat",
            "--epochs", "2", "--seed", "5", "--out", out, "--log", log,
        ]) == 0
        manifest = json.loads((root / "adapted.fckpt.manifest.json").read_text())
        assert manifest["config"]["max_epochs"] == 2
        assert manifest["inputs"]["source_ckpt"]["sha256"]
        lines = [json.loads(l) for l in open(log)]
        step_rows = [l for l in lines if "step" in l]
        assert {"step", "inter", "intra", "entropy", "epistemic", "total", "lr"} <= set(step_rows[0])
        capsys.readouterr()
        assert run([
            "eval", "--ckpt", out, "--data", f"{prefix}.eval.fdat", "--perturb", "none",
        ]) == 0
        out_line = capsys.readouterr().out.strip()
        assert out_line.startswith("accuracy=")
        acc = float(out_line.split("=")[1])
        assert 0.0 <= acc <= 1.0

    def test_gamma_out_of_range_exit_2(self, pipeline, capsys):
        root, prefix, ckpt = pipeline
        code = run([
            "adapt", "--source-ckpt", ckpt, "--target-data", f"{prefix}.target.fdat",
            "--gamma", "2", "--out", str(root / "x.fckpt"),
        ])
        assert code == 2
        assert "gamma" in capsys.readouterr().err

    def test_labeled_grid_selection_needs_eval_data(self, pipeline, capsys):
        root, prefix, ckpt = pipeline
        code = run([
            "adapt", "--source-ckpt", ckpt, "--target-data", f"{prefix}.target.fdat",
            "--grid", "--grid-select", "labeled", "--out", str(root / "x.fckpt"),
        ])
        assert code == 2
        assert "eval-data" in capsys.readouterr().err

    def test_missing_file_exit_1(self, pipeline, capsys):
        root, prefix, ckpt = pipeline
        code = run([
            "adapt", "--source-ckpt", str(root / "nope.fckpt"),
            "--target-data", f"{prefix}.target.fdat", "--out", str(root / "x.fckpt"),
        ])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_shape_mismatch_distinct_message(self, pipeline, tmp_path, capsys):
        root, prefix, ckpt = pipeline
        other = str(tmp_path / "digits")
        run(["gen-data", "--family", "tiny-digits", "--n", "500", "--seed", "1", "--out", other])
        code = run([
            "adapt", "--source-ckpt", ckpt, "--target-data", f"{other}.target.fdat",
            "--out", str(tmp_path / "x.fckpt"),
        ])
        assert code == 1
        assert "shape mismatch" in capsys.readouterr().err

    def test_eval_writes_no_files(self, pipeline, tmp_path):
        root, prefix, ckpt = pipeline
        before = set(root.iterdir()) | set(tmp_path.iterdir())
        run(["eval", "--ckpt", ckpt, "--data", f"{prefix}.eval.fdat"])
        assert set(root.iterdir()) | set(tmp_path.iterdir()) == before

    def test_unknown_flag_exit_2(self, pipeline, capsys):
        root, prefix, ckpt = pipeline
        code = run(["eval", "--ckpt", ckpt, "--data", f"{prefix}.eval.fdat", "--frobnicate"])
        assert code == 2

    def test_config_file_precedence(self, pipeline, tmp_path):
        root, prefix, ckpt = pipeline
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps({"alpha": 0.8, "max_epochs": 1}))
        out = str(tmp_path / "a.fckpt")
        assert run([
            "adapt", "--source-ckpt", ckpt, "--target-data", f"{prefix}.target.fdat",
            "--config", str(cfg_file), "--alpha", "0.2", "--out", out,
        ]) == 0
        manifest = json.loads((tmp_path / "a.fckpt.manifest.json").read_text())
        assert manifest["config"]["alpha"] == 0.2      # flag wins
        assert manifest["config"]["max_epochs"] == 1   # file beats default

    def test_determinism_same_seed_same_checkpoint(self, pipeline, tmp_path):
        root, prefix, ckpt = pipeline
        outs = []
        for name in ("r1.fckpt", "r2.fckpt"):
            out = str(tmp_path / name)
            run([
                "adapt", "--source-ckpt", ckpt, "--target-data", f"{prefix}.target.fdat",
                "--epochs", "1", "--seed", "11", "--out", out,
            ])
            outs.append((tmp_path / name).read_bytes())
        assert outs[0] == outs[1]


class TestReports:
    def test_ablate_all_presets_row_order(self, pipeline, tmp_path, capsys):
        root, prefix, ckpt = pipeline
        out = str(tmp_path / "ablation.csv")
        assert run([
            "ablate", "--source-ckpt", ckpt, "--target-data", f"{prefix}.target.fdat",
            "--eval-data", f"{prefix}.eval.fdat", "--repeats", "1", "--epochs", "1",
            "--task", "moons-rot30", "--out", out,
        ]) == 0
        rows = list(csv.DictReader(open(out)))
        assert [r["preset"] for r in rows] == list(PRESET_ORDER)
        assert all(0.0 <= float(r["accuracy_mean"]) <= 1.0 for r in rows)
        assert rows[0]["task"] == "moons-rot30"

    def test_ablate_single_preset(self, pipeline, tmp_path):
        root, prefix, ckpt = pipeline
        out = str(tmp_path / "one.csv")
        assert run([
            "ablate", "--source-ckpt", ckpt, "--target-data", f"{prefix}.target.fdat",
            "--eval-data", f"{prefix}.eval.fdat", "--preset", "faust", "--repeats", "1",
            "--epochs", "1", "--out", out,
        ]) == 0
        rows = list(csv.DictReader(open(out)))
        assert [r["preset"] for r in rows] == ["faust"]

    def test_ablate_unknown_preset_exit_2(self, pipeline, tmp_path, capsys):
        root, prefix, ckpt = pipeline
        code = run([
            "ablate", "--source-ckpt", ckpt, "--target-data", f"{prefix}.target.fdat",
            "--eval-data", f"{prefix}.eval.fdat", "--preset", "everything",
            "--out", str(tmp_path / "x.csv"),
        ])
        assert code == 2

    def test_sweep_views_range_syntax(self, pipeline, tmp_path):
        root, prefix, ckpt = pipeline
        out = str(tmp_path / "views.csv")
        assert run([
            "sweep-views", "--source-ckpt", ckpt, "--target-data", f"{prefix}.target.fdat",
            "--eval-data", f"{prefix}.eval.fdat", "--views", "1..3", "--repeats", "1",
            "--epochs", "1", "--out", out,
        ]) == 0
        rows = list(csv.DictReader(open(out)))
        assert [r["preset"] for r in rows] == ["v=1", "v=2", "v=3"]
        assert list(rows[0]) == ["task", "preset", "accuracy_mean", "accuracy_std"]

    def test_sweep_views_bad_spec_exit_2(self, pipeline, tmp_path):
        root, prefix, ckpt = pipeline
        code = run([
            "sweep-views", "--source-ckpt", ckpt, "--target-data", f"{prefix}.target.fdat",
            "--eval-data", f"{prefix}.eval.fdat", "--views", "zero", "--out", str(tmp_path / "x.csv"),
        ])
        assert code == 2


def test_missing_subcommand_exit_2(capsys):
    assert run([]) == 2
