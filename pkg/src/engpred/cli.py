"""Command-line pipeline: synth -> aggregate -> fit-norm -> train -> eval -> report.

Stage boundaries are files, so every stage is independently runnable and
re-runnable. Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .aggregate import CorpusAggregator, ParseFailure, parse_events
from .envelope import (
    EnvelopeModel,
    annotate_nawp,
    distribution_report,
    fit_envelope,
    metric_correlation,
)
from .errors import DataError, EngpredError, NumericError
from .metrics import evaluate_predictions
from .model import ALL_KINDS, ModelConfig
from .records import read_metas, read_records, write_events, write_records
from .serialize import read_manifest
from .synth import SynthConfig, analytic_correlation_targets, generate_events, generate_features
from .trainer import TrainConfig, compare_modes, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D102 - argparse hook
        raise UsageError(message)


def _load_json(path: str, what: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except OSError as exc:
        raise DataError(f"cannot open {what} {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON in {what} {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise DataError(f"{what} {path} must hold a JSON object")
    return payload


def _dump_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_synth(args) -> int:
    payload = _load_json(args.config, "synth config") if args.config else {}
    overrides = {
        "seed": args.seed,
        "n_videos": args.n_videos,
        "views_per_video": args.views,
        "frame_rate": args.frame_rate,
        "coupling": args.coupling,
        "feature_noise": args.feature_noise,
        "ecr_threshold_s": args.ecr_threshold,
    }
    for key, value in overrides.items():
        if value is not None:
            payload[key] = value
    cfg = SynthConfig.from_dict(payload)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = generate_events(cfg)
    with open(out / "events.jsonl", "w", encoding="utf-8") as f:
        write_events(f, corpus.events)
    with open(out / "metas.jsonl", "w", encoding="utf-8") as f:
        for meta in corpus.metas:
            f.write(
                json.dumps(
                    {
                        "video_id": meta.video_id,
                        "duration_s": meta.duration_s,
                        "frame_rate": meta.frame_rate,
                    },
                    separators=(",", ":"),
                )
            )
            f.write("\n")
    with open(out / "truth_records.jsonl", "w", encoding="utf-8") as f:
        write_records(f, corpus.truth_records)
    generate_features(corpus.truth, cfg, out_dir=out)
    _dump_json(
        out / "synth_summary.json",
        {
            "config": cfg.to_dict(),
            "reference_engagement_p": corpus.ref_p,
            "analytic_correlation": analytic_correlation_targets(corpus.truth),
        },
    )
    print(f"wrote corpus of {cfg.n_videos} videos to {out}")
    return EXIT_OK


def cmd_aggregate(args) -> int:
    try:
        with open(args.metas, "r", encoding="utf-8") as f:
            metas = read_metas(f)
    except OSError as exc:
        raise DataError(f"cannot open metas {args.metas}: {exc}") from exc
    if args.shards < 1:
        raise DataError("--shards must be >= 1")
    shards = [CorpusAggregator(metas, ecr_threshold_s=args.ecr_threshold) for _ in range(args.shards)]
    failures = 0
    try:
        stream = open(args.events, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open events {args.events}: {exc}") from exc
    with stream:
        for i, item in enumerate(parse_events(stream)):
            if isinstance(item, ParseFailure):
                failures += 1
                print(f"warning: line {item.line_no}: {item.message}", file=sys.stderr)
                continue
            shards[i % args.shards].add(item)
    agg = shards[0]
    for other in shards[1:]:
        agg.merge(other)
    if agg.unknown_events:
        print(
            f"warning: skipped {agg.unknown_events} events for "
            f"{len(agg.unknown_ids)} unknown video ids",
            file=sys.stderr,
        )
    for video_id, count in agg.warnings():
        print(f"warning: video {video_id}: {count} extreme watch times", file=sys.stderr)
    records = agg.finish(
        min_views=args.min_views,
        duration_range_s=(args.duration_min, args.duration_max),
    )
    with open(args.out, "w", encoding="utf-8") as f:
        write_records(f, records)
    print(f"aggregated {len(records)} videos ({failures} malformed lines skipped)")
    return EXIT_OK


def _read_records_file(path: str):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return read_records(f)
    except OSError as exc:
        raise DataError(f"cannot open records {path}: {exc}") from exc


def cmd_fit_norm(args) -> int:
    records = _read_records_file(args.records)
    env = fit_envelope(
        records,
        quantile_tau=args.quantile_tau,
        bin_width_s=args.bin_width,
        min_bin_count=args.min_bin_count,
    )
    _dump_json(Path(args.out_envelope), env.to_dict())
    if args.out_records:
        annotated = annotate_nawp(records, env)
        with open(args.out_records, "w", encoding="utf-8") as f:
            write_records(f, annotated)
    print(
        f"fitted ceiling {env.slope_a:.6f}*d + {env.intercept_b:.6f} "
        f"over {env.fit_stats.bins_used} bins"
    )
    return EXIT_OK


_TRAIN_KEYS = set(TrainConfig.__dataclass_fields__)
_MODEL_KEYS = set(ModelConfig.__dataclass_fields__)


def _train_configs(args) -> tuple[TrainConfig, ModelConfig]:
    payload = _load_json(args.config, "train config") if args.config else {}
    train_payload = {k: v for k, v in payload.items() if k in _TRAIN_KEYS}
    model_payload = {k: v for k, v in payload.items() if k in _MODEL_KEYS and k not in _TRAIN_KEYS}
    unknown = [k for k in payload if k not in _TRAIN_KEYS | _MODEL_KEYS]
    if unknown:
        raise DataError(f"unknown train config keys {unknown}")
    flag_overrides = {
        "seed": args.seed,
        "mode": args.mode,
        "target": args.target,
        "iterations": args.iterations,
        "batch_size": args.batch_size,
        "lr_max": args.lr_max,
        "lr_min": args.lr_min,
        "split_ratio": args.split_ratio,
        "eval_interval": args.eval_interval,
    }
    for key, value in flag_overrides.items():
        if value is not None:
            train_payload[key] = value
    if args.duration_as_input:
        train_payload["duration_as_input"] = True
    model_flags = {"d_model": args.d_model, "max_clips": args.max_clips}
    for key, value in model_flags.items():
        if value is not None:
            model_payload[key] = value
    if args.features is not None:
        kinds = tuple(k.strip() for k in args.features.split(",") if k.strip())
        model_payload["features"] = kinds
    if args.ecr_causal_mask:
        model_payload["ecr_causal_mask"] = True
    return TrainConfig.from_dict(train_payload), ModelConfig.from_dict(
        {**ModelConfig().to_dict(), **model_payload}
    )


def cmd_train(args) -> int:
    train_cfg, model_cfg = _train_configs(args)
    out_dir = Path(args.out_dir)
    if args.compare_modes:
        comparison = compare_modes(args.manifest, train_cfg, model_cfg, out_dir=out_dir)
        print(f"{'setting':<12} {'srcc_nawp':>10} {'srcc_ecr':>10}")
        for setting in ("separate", "joint"):
            row = comparison[setting]
            nawp_s = "n/a" if row["srcc_nawp"] is None else f"{row['srcc_nawp']:.4f}"
            ecr_s = "n/a" if row["srcc_ecr"] is None else f"{row['srcc_ecr']:.4f}"
            print(f"{setting:<12} {nawp_s:>10} {ecr_s:>10}")
        return EXIT_OK
    result = train(
        args.manifest,
        train_cfg,
        model_cfg,
        out_dir=out_dir,
        resume_from=args.resume,
    )
    nawp_s = "n/a" if result.final_srcc_nawp is None else f"{result.final_srcc_nawp:.4f}"
    ecr_s = "n/a" if result.final_srcc_ecr is None else f"{result.final_srcc_ecr:.4f}"
    print(
        f"trained {train_cfg.iterations} iterations "
        f"(held-out srcc nawp={nawp_s}, ecr={ecr_s})"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        with open(args.predictions, "r", encoding="utf-8") as f:
            pred_rows = [json.loads(line) for line in f if line.strip()]
    except OSError as exc:
        raise DataError(f"cannot open predictions {args.predictions}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid predictions JSON: {exc}") from exc
    manifest = read_manifest(args.manifest)
    labels = {row["video_id"]: row for row in manifest}
    ids, pred_nawp, pred_ecr, truth_nawp, truth_ecr, durations = [], [], [], [], [], []
    for row in pred_rows:
        vid = row.get("video_id")
        if vid not in labels:
            raise DataError(f"prediction for unknown video {vid!r}")
        ids.append(vid)
        pred_nawp.append(float(row["nawp_hat"]))
        pred_ecr.append(float(row["ecr_hat"]))
        truth_nawp.append(float(labels[vid]["nawp_label"]))
        truth_ecr.append(float(labels[vid]["ecr_label"]))
        durations.append(float(labels[vid]["duration_s"]))
    report = evaluate_predictions(
        pred_nawp,
        pred_ecr,
        truth_nawp,
        truth_ecr,
        ids=ids,
        durations=durations,
        k_percent=args.topk_percent,
        group_width_s=args.group_width,
    )
    _dump_json(Path(args.out), report.to_dict())
    print(
        f"evaluated {report.n} videos: "
        f"srcc nawp={report.nawp.srcc:.4f}, ecr={report.ecr.srcc:.4f}"
    )
    return EXIT_OK


def cmd_report(args) -> int:
    records = _read_records_file(args.records)
    if not records:
        raise DataError("no records to report on")
    nawp_values = [r.nawp for r in records]
    if any(v is None for v in nawp_values):
        raise DataError("records are missing nawp; run fit-norm first")
    payload = {
        "nawp": distribution_report(nawp_values, args.bins, metric_name="nawp").to_dict(),
        "ecr": distribution_report([r.ecr for r in records], args.bins, metric_name="ecr").to_dict(),
        "correlation": metric_correlation(records),
    }
    _dump_json(Path(args.out), payload)
    print(
        f"nawp bimodality={payload['nawp']['bimodality_coefficient']:.4f}, "
        f"ecr bimodality={payload['ecr']['bimodality_coefficient']:.4f}"
    )
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="engpred", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="SynthConfig JSON file")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-videos", type=int, dest="n_videos")
    p.add_argument("--views", type=int)
    p.add_argument("--frame-rate", type=float, dest="frame_rate")
    p.add_argument("--coupling", type=float)
    p.add_argument("--feature-noise", type=float, dest="feature_noise")
    p.add_argument("--ecr-threshold", type=float, dest="ecr_threshold")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("aggregate", help="aggregate an event log")
    p.add_argument("--events", required=True)
    p.add_argument("--metas", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-views", type=int, default=2000, dest="min_views")
    p.add_argument("--duration-min", type=float, default=10.0, dest="duration_min")
    p.add_argument("--duration-max", type=float, default=60.0, dest="duration_max")
    p.add_argument("--ecr-threshold", type=float, default=5.0, dest="ecr_threshold")
    p.add_argument("--shards", type=int, default=1, help="shard the aggregation then merge")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("fit-norm", help="fit the watch-time ceiling")
    p.add_argument("--records", required=True)
    p.add_argument("--out-envelope", required=True, dest="out_envelope")
    p.add_argument("--out-records", dest="out_records", help="write records with nawp filled")
    p.add_argument("--quantile-tau", type=float, default=0.97, dest="quantile_tau")
    p.add_argument("--bin-width", type=float, default=1.0, dest="bin_width")
    p.add_argument("--min-bin-count", type=int, default=30, dest="min_bin_count")
    p.set_defaults(func=cmd_fit_norm)

    p = sub.add_parser("train", help="train the fusion regressor")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.add_argument("--config", help="JSON with TrainConfig/ModelConfig fields")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=["joint", "nawp_only", "ecr_only"])
    p.add_argument("--target", choices=["nawp", "awt", "awp"])
    p.add_argument("--duration-as-input", action="store_true", dest="duration_as_input")
    p.add_argument("--iterations", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr-max", type=float, dest="lr_max")
    p.add_argument("--lr-min", type=float, dest="lr_min")
    p.add_argument("--split-ratio", type=float, dest="split_ratio")
    p.add_argument("--eval-interval", type=int, dest="eval_interval")
    p.add_argument("--d-model", type=int, dest="d_model")
    p.add_argument("--max-clips", type=int, dest="max_clips")
    p.add_argument("--features", help=f"comma list from {','.join(ALL_KINDS)}")
    p.add_argument("--ecr-causal-mask", action="store_true", dest="ecr_causal_mask")
    p.add_argument("--compare-modes", action="store_true", dest="compare_modes")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score predictions against labels")
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--topk-percent", type=float, default=10.0, dest="topk_percent")
    p.add_argument("--group-width", type=float, dest="group_width")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="distribution/correlation report")
    p.add_argument("--records", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=40)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except EngpredError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
