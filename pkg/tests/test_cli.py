"""End-to-end command-line workflow: synth, validate, train, score, rank,
heatmap, eval, and the exit-code contract."""

import csv
import json
import subprocess
import sys

import pytest

from stylescout.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VALIDATION, main
from stylescout.gail import TrainingDiverged
from stylescout.schema import SchemaError

FAST_TRAIN_FLAGS = [
    "--epochs", "14", "--batch-size", "4",
    "--d-embed", "8", "--d-model", "16", "--n-layers", "1", "--n-heads", "2",
]
SYNTH_FLAGS = [
    "--seed", "3", "--alpha", "1.0",
    "--train-per-profile", "8", "--test-per-profile", "2", "--duration", "40",
]


def run(capsys, argv):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def run_json(capsys, argv):
    code, out, err = run(capsys, argv + ["--json"])
    return code, json.loads(out), err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One synth corpus with two trained models and a scored test set."""
    root = tmp_path_factory.mktemp("pipeline")
    corpus = root / "corpus"
    models = root / "models"
    scores = root / "scores"

    assert main(["synth", *SYNTH_FLAGS, "--out", str(corpus), "--json"]) == EXIT_OK
    for pro in ("entry_rusher", "awp_picker"):
        code = main([
            "train", "--pro", pro, "--manifest", str(corpus / "train_manifest.json"),
            "--seed", "0", *FAST_TRAIN_FLAGS, "--out", str(models), "--json",
        ])
        assert code == EXIT_OK
    code = main([
        "score", "--models", str(models),
        "--manifest", str(corpus / "test_manifest.json"), "--out", str(scores), "--json",
    ])
    assert code == EXIT_OK
    return {"root": root, "corpus": corpus, "models": models, "scores": scores}


# --------------------------------------------------------------- arg parsing


def test_no_command_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc_info:
        main([])
    assert exc_info.value.code == EXIT_USAGE


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc_info:
        main(["validate", "--manifest", "x.json", "--frobnicate"])
    assert exc_info.value.code == EXIT_USAGE


def test_rank_requires_target(capsys, pipeline):
    with pytest.raises(SystemExit) as exc_info:
        main([
            "rank", "--models", str(pipeline["models"]),
            "--manifest", str(pipeline["corpus"] / "test_manifest.json"),
            "--out", str(pipeline["root"] / "r"),
        ])
    assert exc_info.value.code == EXIT_USAGE
    assert "--target" in capsys.readouterr().err


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as exc_info:
        main(["--version"])
    assert exc_info.value.code == 0
    assert capsys.readouterr().out.startswith("stylescout ")


def test_console_script_installed():
    proc = subprocess.run(
        [sys.executable, "-c", "import stylescout.cli as c, sys; sys.exit(c.main(['--version']))"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout.startswith("stylescout ")


# --------------------------------------------------------------- error table


def test_exception_to_exit_code_table(capsys, monkeypatch, tmp_path):
    cases = [
        (SchemaError("bad clip"), EXIT_VALIDATION),
        (ValueError("bad value"), EXIT_VALIDATION),
        (FileNotFoundError("gone"), EXIT_VALIDATION),
        (TrainingDiverged("blew up", 3), EXIT_RUNTIME),
        (RuntimeError("internal"), EXIT_RUNTIME),
    ]
    for exc, expected in cases:
        def boom(_src, _exc=exc):
            raise _exc

        monkeypatch.setattr("stylescout.cli.load_pools", boom)
        code, report, _ = run_json(
            capsys, ["validate", "--manifest", str(tmp_path / "m.json")]
        )
        assert code == expected, f"{type(exc).__name__} -> {code}"
        assert str(exc) in report["error"]


def test_human_output_puts_errors_on_stderr(capsys, tmp_path):
    code, out, err = run(capsys, ["validate", "--manifest", str(tmp_path / "missing.json")])
    assert code == EXIT_VALIDATION
    assert out == ""
    assert "error:" in err


# --------------------------------------------------------------------- synth


def test_synth_emits_corpus_and_run_config(capsys, tmp_path):
    out_dir = tmp_path / "corpus"
    code, report, _ = run_json(capsys, ["synth", *SYNTH_FLAGS, "--out", str(out_dir)])
    assert code == EXIT_OK
    assert report["train_clips"] == 40 and report["test_clips"] == 10
    for key in ("train_manifest", "test_manifest", "truth", "spec"):
        assert (out_dir / json.loads(json.dumps(report["out"]))[key].split("/")[-1]).exists()
    config = json.loads((out_dir / "run_config.json").read_text())
    assert config["seed"] == 3
    assert config["alpha"] == 1.0
    assert "version" in config


def test_synth_rerun_is_byte_identical(capsys, tmp_path, pipeline):
    rerun = tmp_path / "corpus2"
    code, _, _ = run_json(capsys, ["synth", *SYNTH_FLAGS, "--out", str(rerun)])
    assert code == EXIT_OK
    original = pipeline["corpus"]
    names = sorted(
        p.relative_to(original).as_posix() for p in original.rglob("*") if p.is_file()
    )
    assert names == sorted(
        p.relative_to(rerun).as_posix() for p in rerun.rglob("*") if p.is_file()
    )
    for name in names:
        if name == "run_config.json":  # embeds the --out path
            continue
        assert (original / name).read_bytes() == (rerun / name).read_bytes(), name


# ------------------------------------------------------------------ validate


def test_validate_accepts_emitted_corpus(capsys, pipeline):
    code, report, _ = run_json(
        capsys, ["validate", "--manifest", str(pipeline["corpus"] / "train_manifest.json")]
    )
    assert code == EXIT_OK
    assert report["checked"] == report["valid"] == 40
    assert report["errors"] == []


def test_validate_reports_invalid_clip(capsys, tmp_path, pipeline):
    good = json.loads(
        (pipeline["corpus"] / "clips" / "test_0001.json").read_text()
    )
    bad = json.loads(json.dumps(good))
    bad["clip_id"] = "bad_clip"
    bad["events"][0]["action"] = "moonwalk"
    (tmp_path / "good.json").write_text(json.dumps(good))
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    manifest = [
        {"clip_id": good["clip_id"], "path": "good.json"},
        {"clip_id": "bad_clip", "path": "bad.json"},
    ]
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))

    code, report, _ = run_json(capsys, ["validate", "--manifest", str(tmp_path / "manifest.json")])
    assert code == EXIT_VALIDATION
    assert report["checked"] == 2 and report["valid"] == 1
    assert report["errors"][0]["clip_id"] == "bad_clip"
    assert "moonwalk" in report["errors"][0]["message"]


def test_validate_missing_manifest(capsys, tmp_path):
    code, report, _ = run_json(capsys, ["validate", "--manifest", str(tmp_path / "nope.json")])
    assert code == EXIT_VALIDATION
    assert "error" in report


# --------------------------------------------------------------------- train


def test_train_writes_model_log_and_config(capsys, pipeline):
    models = pipeline["models"]
    assert (models / "entry_rusher.esir.json").exists()
    assert (models / "awp_picker.esir.json").exists()
    log_lines = (models / "entry_rusher_train_log.jsonl").read_text().splitlines()
    assert len(log_lines) == 14 + 1  # one per epoch plus the final record
    assert json.loads(log_lines[-1])["event"] == "final"
    config = json.loads((models / "run_config.json").read_text())
    assert config["epochs"] == 14


def test_train_reports_separation(capsys, pipeline):
    code, report, _ = run_json(capsys, [
        "train", "--pro", "lurker",
        "--manifest", str(pipeline["corpus"] / "train_manifest.json"),
        "--seed", "0", *FAST_TRAIN_FLAGS,
        "--out", str(pipeline["root"] / "lurker_model"),
    ])
    assert code == EXIT_OK
    assert report["epochs_run"] == 14
    assert report["holdout_auc"] >= 0.8
    assert report["n_expert_train"] + report["n_negatives"] > 0


def test_train_rerun_reproduces_model_bytes(capsys, tmp_path, pipeline):
    code, report, _ = run_json(capsys, [
        "train", "--pro", "entry_rusher",
        "--manifest", str(pipeline["corpus"] / "train_manifest.json"),
        "--seed", "0", *FAST_TRAIN_FLAGS, "--out", str(tmp_path / "models2"),
    ])
    assert code == EXIT_OK
    original = (pipeline["models"] / "entry_rusher.esir.json").read_bytes()
    assert (tmp_path / "models2" / "entry_rusher.esir.json").read_bytes() == original


def test_train_unknown_pro(capsys, tmp_path, pipeline):
    code, report, _ = run_json(capsys, [
        "train", "--pro", "nobody",
        "--manifest", str(pipeline["corpus"] / "train_manifest.json"),
        "--out", str(tmp_path / "m"),
    ])
    assert code == EXIT_VALIDATION
    assert "nobody" in report["error"]


# --------------------------------------------------------------- score, rank


def test_score_writes_fit_reports(capsys, pipeline):
    path = pipeline["scores"] / "fit_reports.csv"
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["clip_id", "pro", "raw_score", "norm_score", "predicted"]
    body = rows[1:]
    assert len(body) == 10 * 2  # ten test clips, two models
    assert {r[1] for r in body} == {"entry_rusher", "awp_picker"}
    assert {r[0] for r in body} == {f"test_{i:04d}" for i in range(1, 11)}


def test_rank_orders_by_target_fit(capsys, tmp_path, pipeline):
    out_dir = tmp_path / "rank"
    code, report, _ = run_json(capsys, [
        "rank", "--models", str(pipeline["models"]),
        "--manifest", str(pipeline["corpus"] / "test_manifest.json"),
        "--target", "entry_rusher", "--out", str(out_dir),
    ])
    assert code == EXIT_OK
    assert len(report["top"]) == 5
    with (out_dir / "ranking_entry_rusher.csv").open(newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["pro"] == "entry_rusher"]
    scores = [float(r["norm_score"]) for r in rows]
    assert scores == sorted(scores, reverse=True)
    assert [r["clip_id"] for r in rows[:5]] == report["top"]


def test_rank_unknown_target(capsys, tmp_path, pipeline):
    code, report, _ = run_json(capsys, [
        "rank", "--models", str(pipeline["models"]),
        "--manifest", str(pipeline["corpus"] / "test_manifest.json"),
        "--target", "nobody", "--out", str(tmp_path / "r"),
    ])
    assert code == EXIT_VALIDATION
    assert "nobody" in report["error"]


# ------------------------------------------------------------------- heatmap


def test_heatmap_explains_one_clip(capsys, tmp_path, pipeline):
    out_dir = tmp_path / "heat"
    code, report, _ = run_json(capsys, [
        "heatmap", "--models", str(pipeline["models"]), "--pro", "entry_rusher",
        "--clip", "test_0001",
        "--manifest", str(pipeline["corpus"] / "test_manifest.json"),
        "--out", str(out_dir),
    ])
    assert code == EXIT_OK
    clip_doc = json.loads((pipeline["corpus"] / "clips" / "test_0001.json").read_text())
    assert report["timesteps"] == len(clip_doc["events"])
    with (out_dir / "heatmap_entry_rusher_test_0001.csv").open(newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["clip_id", "t", "timestamp_s", "reward", "reward_norm"]
    assert len(rows) == 1 + report["timesteps"]
    rewards = [float(r[3]) for r in rows[1:]]
    assert abs(sum(rewards) / len(rewards) - report["fit_score"]) < 1e-9


def test_heatmap_unknown_clip(capsys, tmp_path, pipeline):
    code, report, _ = run_json(capsys, [
        "heatmap", "--models", str(pipeline["models"]), "--pro", "entry_rusher",
        "--clip", "test_9999",
        "--manifest", str(pipeline["corpus"] / "test_manifest.json"),
        "--out", str(tmp_path / "h"),
    ])
    assert code == EXIT_VALIDATION
    assert "test_9999" in report["error"]


# ---------------------------------------------------------------------- eval


def write_ratings(path, clip_ids, anchors):
    """Three raters over four clips; r1 peaks on entry_rusher everywhere."""
    rows = ["participant_id,clip_id,anchor,score"]
    base = {a: 30 + 5 * i for i, a in enumerate(anchors)}
    for rater, bump in (("r1", 40), ("r2", 30), ("r3", 0)):
        for j, cid in enumerate(clip_ids):
            for a in anchors:
                score = base[a] + (bump if a == "entry_rusher" else 0) + 3 * j
                rows.append(f"{rater},{cid},{a},{score}")
    path.write_text("\n".join(rows) + "\n")


def test_eval_produces_summary_and_grids(capsys, tmp_path, pipeline):
    clip_ids = [f"test_{i:04d}" for i in range(1, 5)]
    anchors = ["anchor_holder", "awp_picker", "entry_rusher", "lurker", "util_support"]
    ratings = tmp_path / "ratings.csv"
    write_ratings(ratings, clip_ids, anchors)

    out_dir = tmp_path / "eval"
    code, report, _ = run_json(capsys, [
        "eval", "--ratings", str(ratings),
        "--truth", str(pipeline["corpus"] / "truth.csv"),
        "--scores", str(pipeline["scores"] / "fit_reports.csv"),
        "--out", str(out_dir),
    ])
    assert code == EXIT_OK
    assert report["command"] == "eval"

    summary = (out_dir / "summary.csv").read_text().splitlines()
    assert summary[0] == "rater,pearson_r,spearman_rho,mae_z,accuracy"
    raters = [line.split(",")[0] for line in summary[1:5]]
    assert raters == ["r1", "r2", "r3", "model"]
    assert any(line.startswith("icc_block,") for line in summary)

    topline = json.loads((out_dir / "topline.json").read_text())
    assert {row["rater"] for row in topline["rows"]} >= {"r1", "r2", "r3"}
    assert (out_dir / "similarity.csv").exists()
    assert (out_dir / "correctness.csv").exists()
    assert (out_dir / "run_config.json").exists()


def test_eval_rejects_malformed_ratings(capsys, tmp_path):
    bad = tmp_path / "ratings.csv"
    bad.write_text("who,what\nr1,10\n")
    code, report, _ = run_json(
        capsys, ["eval", "--ratings", str(bad), "--out", str(tmp_path / "e")]
    )
    assert code == EXIT_VALIDATION
    assert "error" in report


def test_eval_json_is_strict_with_nan_stats(capsys, tmp_path):
    """A single rater leaves every agreement stat undefined; the machine
    output must still be strict JSON (null, never a bare NaN token)."""
    ratings = tmp_path / "solo.csv"
    rows = ["participant_id,clip_id,anchor,score"]
    for j in range(3):
        for anchor in ("entry_rusher", "lurker"):
            rows.append(f"r1,clip_{j},{anchor},{40 + j}")
    ratings.write_text("\n".join(rows) + "\n")

    out_dir = tmp_path / "eval"
    code, out, _ = run(
        capsys, ["eval", "--ratings", str(ratings), "--out", str(out_dir), "--json"]
    )
    assert code == EXIT_OK

    def reject(token):
        raise AssertionError(f"non-finite token {token!r} in JSON output")

    report = json.loads(out, parse_constant=reject)
    assert report["rows"][0]["pearson_r"] is None
    json.loads((out_dir / "topline.json").read_text(), parse_constant=reject)


def test_study_report_joins_ratings_and_models(capsys, tmp_path, pipeline):
    clip_ids = [f"test_{i:04d}" for i in range(1, 5)]
    anchors = ["anchor_holder", "awp_picker", "entry_rusher", "lurker", "util_support"]
    ratings = tmp_path / "ratings.csv"
    write_ratings(ratings, clip_ids, anchors)

    out_dir = tmp_path / "study"
    code, report, _ = run_json(capsys, [
        "study-report", "--ratings", str(ratings),
        "--models", str(pipeline["models"]),
        "--manifest", str(pipeline["corpus"] / "test_manifest.json"),
        "--truth", str(pipeline["corpus"] / "truth.csv"),
        "--out", str(out_dir),
    ])
    assert code == EXIT_OK
    assert report["command"] == "study-report"
    assert (out_dir / "summary.csv").exists()
    assert (out_dir / "topline.json").exists()


def test_serve_needs_anchor_source(capsys, pipeline):
    code, report, _ = run_json(capsys, [
        "serve", "--manifest", str(pipeline["corpus"] / "test_manifest.json"),
    ])
    assert code == EXIT_VALIDATION
    assert "anchors" in report["error"]
