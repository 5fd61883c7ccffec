"""Command-line entry point for the full scouting workflow.

Subcommands: validate, synth, train, score, rank, heatmap, eval, serve,
study-report. Every run that writes artifacts also records its resolved
configuration next to them, and all randomness flows through explicit
--seed flags, so a recorded pipeline reruns byte for byte.

Exit codes: 0 success, 1 usage, 2 validation failure, 3 runtime or
numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

from . import __version__
from . import eval as evalmod
from .encoder import EncoderConfig
from .gail import TrainConfig, TrainingDiverged, train_style_model
from .numerics import NonFiniteGradientError
from .schema import SchemaError, ingest_corpus, load_manifest, load_pools
from .scout import (
    FitReport,
    Registry,
    StyleModel,
    rank_candidates,
    read_fit_reports_csv,
    score_clips,
    temporal_heatmap,
    write_fit_reports_csv,
    write_heatmap_csv,
)
from .service import Study, StudyConfig, create_app, export_ratings
from .synth import SynthSpec, load_truth, sample_corpus, emit_corpus

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _json_safe(value):
    """Strict-JSON form of a report: non-finite floats become null.

    json.dumps would otherwise emit bare NaN/Infinity tokens, which
    standard parsers reject."""
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def _record_run_config(out_dir: Path, args: argparse.Namespace) -> None:
    resolved = {
        k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"
    }
    resolved["version"] = __version__
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.json").write_text(
        json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _load_corpus(manifest_path: Path, pools):
    manifest = load_manifest(manifest_path)
    clips, report = ingest_corpus(manifest, pools, base_dir=manifest_path.parent)
    return manifest, clips, report


def _encoder_config(args) -> EncoderConfig:
    return EncoderConfig(
        d_embed=args.d_embed,
        d_model=args.d_model,
        n_layers=args.n_layers,
        n_heads=args.n_heads,
        max_events=args.max_events,
        branch_mode=args.branch_mode,
    )


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        mode=args.mode,
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        holdout_fraction=args.holdout_fraction,
        shuffle_negative_ratio=args.shuffle_ratio,
        disc_hidden=args.disc_hidden,
        seed=args.seed,
    )


# ---------------------------------------------------------------- commands


def cmd_validate(args) -> tuple[int, dict]:
    pools = load_pools(args.pools)
    manifest, clips, report = _load_corpus(args.manifest, pools)
    result = {
        "command": "validate",
        "pools_version": pools.version,
        "checked": len(manifest.entries),
        "valid": len(clips),
        "errors": [{"clip_id": cid, "message": msg} for cid, msg in report.errors],
    }
    return (EXIT_OK if report.ok else EXIT_VALIDATION), result


def cmd_synth(args) -> tuple[int, dict]:
    if args.spec is not None:
        spec = SynthSpec.from_json(Path(args.spec).read_text(encoding="utf-8"))
    else:
        pools = load_pools(args.pools)
        spec = SynthSpec.default(
            seed=args.seed,
            alpha=args.alpha,
            pools=pools,
            map_name=args.map,
            train_per_profile=args.train_per_profile,
            test_per_profile=args.test_per_profile,
            duration=args.duration,
        )
    corpus = sample_corpus(spec)
    paths = emit_corpus(corpus, args.out)
    _record_run_config(Path(args.out), args)
    return EXIT_OK, {
        "command": "synth",
        "profiles": [p.name for p in spec.profiles],
        "train_clips": sum(len(v) for v in corpus.train.values()),
        "test_clips": len(corpus.test),
        "out": {k: str(v) for k, v in paths.items()},
    }


def cmd_train(args) -> tuple[int, dict]:
    pools = load_pools(args.pools)
    _, clips, report = _load_corpus(args.manifest, pools)
    if not report.ok:
        return EXIT_VALIDATION, {
            "command": "train",
            "errors": [{"clip_id": c, "message": m} for c, m in report.errors],
        }
    experts = [c for c in clips if c.archetype_label == args.pro]
    negatives = [
        c for c in clips if c.archetype_label is not None and c.archetype_label != args.pro
    ]
    if not experts:
        raise SchemaError(f"manifest has no clips labeled {args.pro!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train_style_model(
        experts,
        negatives,
        pools=pools,
        encoder_config=_encoder_config(args),
        train_config=_train_config(args),
        log_path=out / f"{args.pro}_train_log.jsonl",
    )
    model = StyleModel.from_training(args.pro, result, pools.version)
    path = model.save(out / args.pro)
    _record_run_config(out, args)
    return EXIT_OK, {
        "command": "train",
        "pro": args.pro,
        "model": str(path),
        "epochs_run": result.report.epochs_run,
        "final_loss": result.report.final_loss,
        "holdout_auc": result.report.final_holdout_auc,
        "n_expert_train": result.report.n_expert_train,
        "n_negatives": result.report.n_negatives_real + result.report.n_negatives_shuffled,
    }


def _load_registry(models_dir) -> Registry:
    return Registry.load_dir(models_dir)


def cmd_score(args) -> tuple[int, dict]:
    pools = load_pools(args.pools)
    registry = _load_registry(args.models)
    _, clips, report = _load_corpus(args.manifest, pools)
    if not report.ok:
        return EXIT_VALIDATION, {
            "command": "score",
            "errors": [{"clip_id": c, "message": m} for c, m in report.errors],
        }
    reports = score_clips(registry, clips)
    out = Path(args.out)
    write_fit_reports_csv(reports, out / "fit_reports.csv")
    _record_run_config(out, args)
    return EXIT_OK, {
        "command": "score",
        "models": registry.players(),
        "clips": len(clips),
        "out": str(out / "fit_reports.csv"),
    }


def cmd_rank(args) -> tuple[int, dict]:
    pools = load_pools(args.pools)
    registry = _load_registry(args.models)
    if args.target not in registry:
        raise SchemaError(f"no model named {args.target!r} under {args.models}")
    _, clips, report = _load_corpus(args.manifest, pools)
    if not report.ok:
        return EXIT_VALIDATION, {
            "command": "rank",
            "errors": [{"clip_id": c, "message": m} for c, m in report.errors],
        }
    ranked = rank_candidates(registry, clips, args.target)
    out = Path(args.out)
    path = write_fit_reports_csv(ranked, out / f"ranking_{args.target}.csv")
    _record_run_config(out, args)
    return EXIT_OK, {
        "command": "rank",
        "target": args.target,
        "out": str(path),
        "top": [r.clip_id for r in ranked[:5]],
    }


def cmd_heatmap(args) -> tuple[int, dict]:
    pools = load_pools(args.pools)
    registry = _load_registry(args.models)
    if args.pro not in registry:
        raise SchemaError(f"no model named {args.pro!r} under {args.models}")
    _, clips, report = _load_corpus(args.manifest, pools)
    match = [c for c in clips if c.clip_id == args.clip]
    if not match:
        raise SchemaError(f"clip {args.clip!r} not found in manifest")
    rows = temporal_heatmap(registry.get(args.pro), match[0])
    out = Path(args.out)
    path = write_heatmap_csv(rows, out / f"heatmap_{args.pro}_{args.clip}.csv")
    _record_run_config(out, args)
    return EXIT_OK, {
        "command": "heatmap",
        "out": str(path),
        "timesteps": len(rows),
        "fit_score": sum(r["reward"] for r in rows) / len(rows),
    }


def _reports_from_scores_csv(path: Path) -> list[FitReport]:
    reports = read_fit_reports_csv(path)
    if not reports:
        raise SchemaError(f"no score rows in {path}")
    return reports


def _eval_outputs(out: Path, matrix, truth, model_reports, consensus: str) -> dict:
    predictions = None
    if model_reports is not None:
        matrix, predictions = evalmod.attach_model_row(matrix, model_reports)
    summary = evalmod.evaluate(matrix, truth=truth, consensus=consensus)
    paths = {"summary": summary.to_csv(out / "summary.csv")}
    (out / "topline.json").write_text(
        json.dumps(_json_safe(summary.to_dict()), indent=2, sort_keys=True, allow_nan=False)
        + "\n",
        encoding="utf-8",
    )
    paths["topline"] = out / "topline.json"
    if truth:
        grids = evalmod.agreement_matrices(matrix, None, truth)
        paths["similarity"] = grids.write_similarity_csv(out / "similarity.csv")
        paths["correctness"] = grids.write_correctness_csv(out / "correctness.csv")
        if predictions is not None:
            scored = {c: p for c, p in predictions.items() if c in truth}
            if scored:
                model_acc = sum(p == truth[c] for c, p in scored.items()) / len(scored)
                for row in summary.rows:
                    if row.rater == evalmod.MODEL_RATER:
                        row.accuracy = model_acc
                summary.to_csv(out / "summary.csv")
    report = summary.to_dict()
    report["outputs"] = {k: str(v) for k, v in paths.items()}
    return report


def cmd_eval(args) -> tuple[int, dict]:
    matrix = evalmod.RatingMatrix.from_csv(args.ratings)
    truth = load_truth(args.truth) if args.truth else None
    reports = _reports_from_scores_csv(Path(args.scores)) if args.scores else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = _eval_outputs(out, matrix, truth, reports, args.consensus)
    report["command"] = "eval"
    _record_run_config(out, args)
    return EXIT_OK, report


def cmd_study_report(args) -> tuple[int, dict]:
    pools = load_pools(args.pools)
    registry = _load_registry(args.models)
    _, clips, ingest = _load_corpus(args.manifest, pools)
    if not ingest.ok:
        return EXIT_VALIDATION, {
            "command": "study-report",
            "errors": [{"clip_id": c, "message": m} for c, m in ingest.errors],
        }
    matrix = evalmod.RatingMatrix.from_csv(args.ratings)
    rated = set(matrix.clip_ids())
    scored_clips = [c for c in clips if c.clip_id in rated] or clips
    reports = score_clips(registry, scored_clips)
    truth = load_truth(args.truth) if args.truth else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = _eval_outputs(out, matrix, truth, reports, args.consensus)
    report["command"] = "study-report"
    _record_run_config(out, args)
    return EXIT_OK, report


def cmd_serve(args) -> tuple[int, dict]:
    pools = load_pools(args.pools)
    manifest, clips, report = _load_corpus(args.manifest, pools)
    if not report.ok:
        return EXIT_VALIDATION, {
            "command": "serve",
            "errors": [{"clip_id": c, "message": m} for c, m in report.errors],
        }
    if args.anchors:
        anchors = tuple(a.strip() for a in args.anchors.split(",") if a.strip())
    elif args.models:
        anchors = tuple(_load_registry(args.models).players())
    else:
        raise SchemaError("serve needs --anchors or --models to name the anchor professionals")
    media_urls = {e.clip_id: e.media_url for e in manifest.entries if e.media_url}
    study = Study(
        StudyConfig(
            anchors=anchors,
            seed=args.seed,
            session_size=args.session_size,
            log_path=Path(args.log),
            media_root=Path(args.media_root) if args.media_root else None,
            ui_dir=Path(args.ui_dir) if args.ui_dir else None,
        ),
        clips,
        media_urls,
    )
    app = create_app(study)
    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK, {"command": "serve"}


# ------------------------------------------------------------------ parser


def build_parser() -> _Parser:
    p = _Parser(prog="stylescout", description=__doc__)
    p.add_argument("--version", action="version", version=f"stylescout {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--pools", default=None, help="value pools JSON (default: built-in)")
        sp.add_argument("--json", action="store_true", help="machine-readable report on stdout")
        if out_required:
            sp.add_argument("--out", required=True, type=Path, help="output directory")

    sp = sub.add_parser("validate", help="check a corpus manifest against the schema")
    sp.add_argument("--manifest", required=True, type=Path)
    common(sp, out_required=False)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("synth", help="sample a synthetic style corpus")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--train-per-profile", type=int, default=12)
    sp.add_argument("--test-per-profile", type=int, default=30)
    sp.add_argument("--duration", type=float, default=40.0)
    sp.add_argument("--map", default="de_mirage")
    sp.add_argument("--spec", default=None, help="full SynthSpec JSON (overrides other flags)")
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("train", help="train one professional's style model")
    sp.add_argument("--pro", required=True)
    sp.add_argument("--manifest", required=True, type=Path)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--mode", default="contrast_negatives", choices=["contrast_negatives", "learned_generator"])
    sp.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    sp.add_argument("--lr", type=float, default=TrainConfig.lr)
    sp.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    sp.add_argument("--holdout-fraction", type=float, default=TrainConfig.holdout_fraction)
    sp.add_argument("--shuffle-ratio", type=float, default=TrainConfig.shuffle_negative_ratio)
    sp.add_argument("--disc-hidden", type=int, default=TrainConfig.disc_hidden)
    sp.add_argument("--d-embed", type=int, default=EncoderConfig.d_embed)
    sp.add_argument("--d-model", type=int, default=EncoderConfig.d_model)
    sp.add_argument("--n-layers", type=int, default=EncoderConfig.n_layers)
    sp.add_argument("--n-heads", type=int, default=EncoderConfig.n_heads)
    sp.add_argument("--max-events", type=int, default=EncoderConfig.max_events)
    sp.add_argument("--branch-mode", default=EncoderConfig.branch_mode, choices=["telemetry_only", "commentary_only", "fused"])
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("score", help="score a manifest of clips under all models")
    sp.add_argument("--models", required=True, type=Path)
    sp.add_argument("--manifest", required=True, type=Path)
    common(sp)
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("rank", help="rank candidate clips")
    sp.add_argument("--models", required=True, type=Path)
    sp.add_argument("--manifest", required=True, type=Path)
    sp.add_argument("--target", required=True, help="professional to rank candidates for")
    common(sp)
    sp.set_defaults(func=cmd_rank)

    sp = sub.add_parser("heatmap", help="per-timestep reward explanation for one clip")
    sp.add_argument("--models", required=True, type=Path)
    sp.add_argument("--pro", required=True)
    sp.add_argument("--clip", required=True)
    sp.add_argument("--manifest", required=True, type=Path)
    common(sp)
    sp.set_defaults(func=cmd_heatmap)

    sp = sub.add_parser("eval", help="agreement statistics from a ratings CSV")
    sp.add_argument("--ratings", required=True, type=Path)
    sp.add_argument("--truth", default=None, type=Path)
    sp.add_argument("--scores", default=None, help="fit_reports.csv from the score command")
    sp.add_argument("--consensus", default="leave_one_out", choices=["leave_one_out", "all_raters"])
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("serve", help="run the rating-study HTTP service")
    sp.add_argument("--manifest", required=True, type=Path)
    sp.add_argument("--models", default=None, type=Path, help="derive anchors from a model directory")
    sp.add_argument("--anchors", default=None, help="comma-separated anchor names")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--session-size", type=int, default=50)
    sp.add_argument("--log", default="ratings.jsonl")
    sp.add_argument("--media-root", default=None)
    sp.add_argument("--ui-dir", default=None)
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8000)
    common(sp, out_required=False)
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("study-report", help="join ratings with model scores into the full report")
    sp.add_argument("--ratings", required=True, type=Path)
    sp.add_argument("--models", required=True, type=Path)
    sp.add_argument("--manifest", required=True, type=Path)
    sp.add_argument("--truth", default=None, type=Path)
    sp.add_argument("--consensus", default="leave_one_out", choices=["leave_one_out", "all_raters"])
    common(sp)
    sp.set_defaults(func=cmd_study_report)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code, report = args.func(args)
    except SchemaError as exc:
        code, report = EXIT_VALIDATION, {"command": args.command, "error": str(exc)}
    except (TrainingDiverged, NonFiniteGradientError) as exc:
        code, report = EXIT_RUNTIME, {"command": args.command, "error": str(exc)}
    except (ValueError, FileNotFoundError, OSError) as exc:
        code, report = EXIT_VALIDATION, {"command": args.command, "error": str(exc)}
    except Exception as exc:  # numeric or internal failure
        code, report = EXIT_RUNTIME, {"command": args.command, "error": f"{type(exc).__name__}: {exc}"}
    if args.json:
        print(json.dumps(_json_safe(report), indent=2, sort_keys=True, default=str, allow_nan=False))
    else:
        _print_human(report, code)
    return code


def _print_human(report: dict, code: int) -> None:
    if "error" in report:
        print(f"error: {report['error']}", file=sys.stderr)
        return
    for key, value in report.items():
        if key in ("rows", "notes", "icc"):
            continue
        print(f"{key}: {value}")
    for row in report.get("rows", []):
        print(
            "  rater={rater} n={n_items} r={pearson_r:.3f} rho={spearman_rho:.3f} "
            "mae_z={mae_z:.3f}".format(**row)
        )
    if code != EXIT_OK:
        print(f"exit code {code}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
