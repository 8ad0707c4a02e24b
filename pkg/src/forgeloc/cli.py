"""Command-line surface for the forgery localization pipeline.

Subcommands: synth | train | infer | eval | stats | gradcheck |
export-embeddings. Shared flags (given after the subcommand):

    --config PATH   JSON config document (see runconfig)
    --set K=V       dotted-path override, repeatable
    --seed N        master seed, overrides synth.seed and train.seed
    --threads N     parallel per-video work where supported
    --out PATH      output file or directory

Success output is one JSON line on stdout. Failures print one JSON line
{"error", "message"} on stderr and exit with 2 for configuration
problems, 3 for data or format problems, 4 for numeric problems.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from math import fsum
from pathlib import Path

from .core_data import (
    PredictionRecord,
    atomic_write,
    load_manifest,
    load_predictions,
    load_sample,
    save_feature_file,
    save_predictions,
    FeatureSequence,
)
from .errors import ConfigError, DomainError, FormatError, NumericError, ShapeError
from .metrics import accuracy, average_recall, map_grid
from .model import forward, infer
from .runconfig import RunConfig, apply_overrides, build_run_config, load_config_tree
from .synthgen import corpus_deviation_report, generate_video, write_corpus, _assign_labels
from .train import gradcheck, load_checkpoint, save_checkpoint, train_loop


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="JSON config document")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="PATH=VALUE",
        help="dotted-path config override, e.g. train.weights.phi=0",
    )
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out", default=None, help="output file or directory")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="forgeloc")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _common(p)

    p = sub.add_parser("train", help="train on a corpus manifest")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")

    p = sub.add_parser("infer", help="predict labels and segment proposals")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("eval", help="score predictions against a manifest")
    _common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("stats", help="per-class temporal deviation report")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--measure", default=None)

    p = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    _common(p)

    p = sub.add_parser("export-embeddings", help="write enhanced features per video")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)

    return parser


def _run_config(args) -> RunConfig:
    tree = load_config_tree(args.config)
    apply_overrides(tree, args.overrides)
    return build_run_config(tree, seed_flag=args.seed)


def _require_out(args, rc: RunConfig, path_key: str, what: str) -> Path:
    target = args.out or rc.paths.get(path_key)
    if target is None:
        raise ConfigError(f"no output given for {what}: pass --out or paths.{path_key}")
    return Path(target)


def _threads(args) -> int:
    if args.threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {args.threads}")
    return args.threads


def _parallel(fn, items, threads: int) -> list:
    if threads == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _emit(payload: dict, out: Path | None) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        with atomic_write(out, "w") as fh:
            fh.write(text)
        sys.stdout.write(json.dumps({"written": str(out)}) + "\n")


def _cmd_synth(args) -> int:
    rc = _run_config(args)
    out_dir = _require_out(args, rc, "out_dir", "the corpus directory")
    cfg = rc.synth
    labels = _assign_labels(cfg)
    samples = _parallel(
        lambda i: generate_video(cfg, i, labels[i]), range(cfg.num_videos), _threads(args)
    )
    write_corpus(samples, cfg, out_dir)
    manifest = out_dir / "manifest.jsonl"
    sys.stdout.write(
        json.dumps({"manifest": str(manifest), "videos": cfg.num_videos, "seed": cfg.seed})
        + "\n"
    )
    return 0


def _load_samples(manifest_path: str, threads: int = 1) -> list:
    entries = load_manifest(manifest_path)
    base = Path(manifest_path).parent
    return _parallel(lambda e: load_sample(e, base).align(), entries, threads)


def _cmd_train(args) -> int:
    rc = _run_config(args)
    out = _require_out(args, rc, "checkpoint", "the checkpoint")
    samples = _load_samples(args.manifest, _threads(args))
    resume = load_checkpoint(args.resume) if args.resume else None
    result = train_loop(samples, rc.train, resume=resume)
    save_checkpoint(result.checkpoint, out)
    sys.stdout.write(
        json.dumps(
            {
                "checkpoint": str(out),
                "epochs": result.checkpoint.epoch,
                "diverged": result.diverged,
                "seed": rc.train.seed,
                "epoch_logs": result.epoch_logs,
            },
            sort_keys=True,
        )
        + "\n"
    )
    return 0


def _cmd_infer(args) -> int:
    rc = _run_config(args)
    out = _require_out(args, rc, "predictions", "the predictions file")
    ckpt = load_checkpoint(args.checkpoint)
    samples = _load_samples(args.manifest, _threads(args))
    results = _parallel(lambda s: infer(s, ckpt.params), samples, _threads(args))
    records = [
        PredictionRecord(id=s.id, pred_label=r.pred_label, proposals=r.proposals)
        for s, r in zip(samples, results)
    ]
    save_predictions(records, out)
    with atomic_write(Path(str(out) + ".meta.json"), "w") as fh:
        json.dump({"seed": ckpt.config.seed, "checkpoint": str(args.checkpoint)}, fh)
        fh.write("\n")
    sys.stdout.write(
        json.dumps({"predictions": str(out), "videos": len(records), "seed": ckpt.config.seed})
        + "\n"
    )
    return 0


def _cmd_eval(args) -> int:
    rc = _run_config(args)
    entries = load_manifest(args.manifest, check_files=False)
    known = {e.id for e in entries}
    ground_truths = {
        e.id: [(s.start_s, s.end_s) for s in e.gt_segments] for e in entries
    }
    true_labels = {e.id: int(e.label) for e in entries}
    predictions = {e.id: [] for e in entries}
    pred_labels: dict[str, int] = {}
    for rec in load_predictions(args.predictions):
        if rec.id not in known:
            raise FormatError(f"prediction for unknown video {rec.id!r}")
        predictions[rec.id] = list(rec.proposals)
        pred_labels[rec.id] = int(rec.pred_label)

    cfg = rc.eval
    grid = map_grid(predictions, ground_truths, cfg)
    report_map = {f"{thr:g}": grid["per_iou"][thr] for thr in cfg.map_iou_grid}
    report_map["avg"] = grid["avg"]
    ar_values = {
        k: average_recall(predictions, ground_truths, k, cfg)
        for k in cfg.ar_proposal_counts
    }
    report_ar = {str(k): ar_values[k] for k in cfg.ar_proposal_counts}
    report_ar["avg"] = fsum(ar_values.values()) / len(ar_values)
    report = {
        "seed": rc.seed,
        "map": report_map,
        "ar": report_ar,
        "accuracy": accuracy(pred_labels, true_labels),
    }
    _emit(report, Path(args.out) if args.out else None)
    return 0


def _cmd_stats(args) -> int:
    rc = _run_config(args)
    measure = args.measure or rc.deviation.measure
    report = corpus_deviation_report(args.manifest, measure)
    report["seed"] = rc.seed
    _emit(report, Path(args.out) if args.out else None)
    return 0


def _cmd_gradcheck(args) -> int:
    rc = _run_config(args)
    seed = rc.seed if rc.seed is not None else rc.train.seed
    report = gradcheck(rc.train, seed=seed)
    _emit(report, Path(args.out) if args.out else None)
    return 0 if report["passed"] else 1


def _cmd_export(args) -> int:
    rc = _run_config(args)
    out_dir = _require_out(args, rc, "out_dir", "the embedding directory")
    ckpt = load_checkpoint(args.checkpoint)
    samples = _load_samples(args.manifest, _threads(args))
    outputs = _parallel(lambda s: forward(s, ckpt.params), samples, _threads(args))
    for sample, res in zip(samples, outputs):
        fps = sample.visual.fps
        save_feature_file(FeatureSequence(res.f_v2, fps), out_dir / f"{sample.id}_visual.ftr")
        save_feature_file(FeatureSequence(res.f_a2, fps), out_dir / f"{sample.id}_audio.ftr")
        save_feature_file(FeatureSequence(res.f_m, fps), out_dir / f"{sample.id}_multimodal.ftr")
    sys.stdout.write(
        json.dumps({"out_dir": str(out_dir), "videos": len(samples), "seed": ckpt.config.seed})
        + "\n"
    )
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "stats": _cmd_stats,
    "gradcheck": _cmd_gradcheck,
    "export-embeddings": _cmd_export,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail(exc, 2)
    except (FormatError, ShapeError, DomainError, OSError) as exc:
        return _fail(exc, 3)
    except NumericError as exc:
        return _fail(exc, 4)


def _fail(exc: Exception, code: int) -> int:
    sys.stderr.write(
        json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n"
    )
    return code


if __name__ == "__main__":
    sys.exit(main())
