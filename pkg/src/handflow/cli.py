"""Command-line entry point.

Subcommands: make-synth, annotate-stages, train, sample, eval, stats, report.
Exit codes: 0 success, 1 usage error, 2 data validation failure, 3 numerical
failure (e.g. NaN loss).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataio, harness, tokens
from .dataio import (
    DatasetManifest,
    SplitSpec,
    SyntheticSpec,
    compute_manifest,
    dataset_stats,
    generate_qa,
    generate_synthetic,
    make_splits,
    read_samples,
    write_qa,
    write_samples,
)
from .harness import (
    DataValidationError,
    NumericalFailure,
    RunConfig,
    apply_overrides,
    default_output_root,
    make_predictor,
    make_provider,
)

USAGE_EXIT, DATA_EXIT, NUMERIC_EXIT = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(USAGE_EXIT)


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg = apply_overrides(cfg, args.set or [])
    if getattr(args, "dataset", None):
        cfg.dataset = args.dataset
    if getattr(args, "manifest", None):
        cfg.manifest = args.manifest
    if getattr(args, "splits", None):
        cfg.splits = args.splits
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _dataset_paths(out_dir: Path):
    return {
        "dataset": out_dir / "dataset.jsonl",
        "manifest": out_dir / "manifest.json",
        "splits": out_dir / "splits.json",
        "stats": out_dir / "stats.json",
        "qa": out_dir / "qa.jsonl",
    }


def cmd_make_synth(args):
    out_dir = Path(args.out)
    paths = _dataset_paths(out_dir)
    if paths["dataset"].exists() and not args.force:
        print(f"error: {paths['dataset']} exists; re-run with --force", file=sys.stderr)
        return DATA_EXIT
    out_dir.mkdir(parents=True, exist_ok=True)

    spec = SyntheticSpec(
        n_scenes=args.scenes,
        goals_per_scene=args.goals,
        noise_pos=args.noise_pos,
        past_len=args.past_len,
        max_future_steps=args.max_future,
    )
    samples = generate_synthetic(spec, seed=args.seed)
    write_samples(samples, paths["dataset"])

    split_spec = SplitSpec(args.frac_pretrain, args.frac_finetune, args.frac_test)
    splits = make_splits([s.scene_id for s in samples], split_spec, seed=args.seed)
    paths["splits"].write_text(json.dumps(splits, indent=2, sort_keys=True) + "\n")

    finetune = [s for s in samples if s.scene_id in set(splits["finetune"])]
    manifest = compute_manifest(finetune or samples, name=out_dir.name)
    manifest.save(paths["manifest"])

    stats = dataset_stats(samples)
    paths["stats"].write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    qa = [rec for s in samples for rec in generate_qa(s)]
    write_qa(qa, paths["qa"])

    print(
        f"wrote {len(samples)} samples, {len(qa)} QA records to {out_dir} "
        f"(splits: { {k: len(v) for k, v in splits.items()} })"
    )
    return 0


def cmd_annotate_stages(args):
    n_ok, n_fail = 0, 0
    with open(args.tracks, "r", encoding="utf-8") as fh, open(
        args.out, "w", encoding="utf-8"
    ) as out:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            track = tokens.ObjectTrack(
                timestamps=rec["timestamps"],
                positions=rec["positions"],
                visible=rec.get("visible", [True] * len(rec["timestamps"])),
            )
            result = {"track_id": rec.get("track_id", f"line{lineno}")}
            try:
                stages = tokens.infer_stages(
                    track,
                    motion_eps=args.motion_eps,
                    window=(args.window_min, args.window_max),
                    max_dist=args.max_dist,
                )
                result["manipulation"] = list(stages.manipulation)
                result["approach"] = None if stages.approach is None else list(stages.approach)
                n_ok += 1
            except tokens.NoMotionOnset as exc:
                result["error"] = f"no motion onset: {exc}"
                n_fail += 1
            out.write(json.dumps(result, sort_keys=True) + "\n")
    print(f"annotated {n_ok} tracks ({n_fail} without onset) -> {args.out}")
    return 0


def cmd_train(args):
    cfg = _load_config(args)
    run_dir = Path(args.run_dir) if args.run_dir else default_output_root() / "train"
    ckpt = harness.run_training(cfg, run_dir, resume=args.resume, quiet=args.quiet)
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_sample(args):
    cfg = _load_config(args)
    samples = harness.load_dataset(cfg, cfg.eval.split)
    if cfg.eval.max_samples:
        samples = samples[: cfg.eval.max_samples]
    provider = make_provider(cfg.provider, known_sample_ids={s.sample_id for s in samples})
    predictor = make_predictor("flow", checkpoint=args.checkpoint, euler_steps=cfg.eval.euler_steps)
    seed_seq = np.random.SeedSequence(cfg.eval.master_seed).spawn(2 * len(samples))
    with open(args.out, "w", encoding="utf-8") as fh:
        for i, s in enumerate(samples):
            bundle = provider(s, int(seed_seq[2 * i].generate_state(1)[0]))
            if bundle is None:
                continue
            trajs = predictor.predict(
                s, bundle, args.k, master_seed=int(seed_seq[2 * i + 1].generate_state(1)[0])
            )
            fh.write(
                json.dumps(
                    {
                        "sample_id": s.sample_id,
                        "trajectories": [
                            [dataio._state_rec(st) for st in traj] for traj in trajs
                        ],
                    }
                )
                + "\n"
            )
    print(f"wrote predictions for {len(samples)} samples -> {args.out}")
    return 0


def cmd_eval(args):
    cfg = _load_config(args)
    run_dir = Path(args.run_dir) if args.run_dir else default_output_root() / "eval"
    predictor = make_predictor(
        args.predictor, checkpoint=args.checkpoint, euler_steps=cfg.eval.euler_steps
    )
    report, wp_report, _ = harness.run_evaluation(cfg, predictor, run_dir=run_dir)
    harness._write_run_metadata(cfg, run_dir)
    print(report.to_csv())
    print(wp_report.to_csv())
    if args.with_static and args.predictor != "static":
        static_dir = run_dir.parent / (run_dir.name + "_static")
        harness.run_evaluation(cfg, harness.StaticPredictor(), run_dir=static_dir)
        print(f"static baseline reference written to {static_dir}")
    return 0


def cmd_stats(args):
    samples, violations = read_samples(args.dataset)
    if violations:
        print(f"{len(violations)} invalid records skipped", file=sys.stderr)
    stats = dataset_stats(samples)
    out = Path(args.out) if args.out else Path(args.dataset).with_suffix(".stats.json")
    out.write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    csv_path = out.with_suffix(".csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("metric,value\n")
        for key in ("n_samples", "frac_duration_gt", "frac_displacement_gt", "frac_rotation_gt"):
            fh.write(f"{key},{stats[key]}\n")
    print(json.dumps({k: stats[k] for k in ("n_samples", "frac_duration_gt", "frac_displacement_gt", "frac_rotation_gt")}, indent=2))
    return 0


def cmd_report(args):
    header, rows = harness.merge_reports(args.run_dirs)
    text = harness.format_table(header, rows)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(
            "\n".join(",".join(map(str, r)) for r in [header] + rows) + "\n"
        )
        (out / "report.txt").write_text(text)
    print(text)
    return 0


def _add_config_args(p):
    p.add_argument("--config", help="YAML run config; flags override file values")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override")
    p.add_argument("--dataset", help="dataset JSONL path")
    p.add_argument("--manifest", help="dataset manifest path")
    p.add_argument("--splits", help="splits JSON path")
    p.add_argument("--seed", type=int, help="run seed")


def build_parser():
    parser = _Parser(prog="handflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synth", help="generate a synthetic dataset + manifest + stats")
    p.add_argument("--out", required=True)
    p.add_argument("--scenes", type=int, default=200)
    p.add_argument("--goals", type=int, default=1, choices=(1, 2))
    p.add_argument("--noise-pos", type=float, default=0.0)
    p.add_argument("--past-len", type=int, default=5)
    p.add_argument("--max-future", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frac-pretrain", type=float, default=0.0)
    p.add_argument("--frac-finetune", type=float, default=0.7)
    p.add_argument("--frac-test", type=float, default=0.3)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_make_synth)

    p = sub.add_parser("annotate-stages", help="rule-based stage labels from object tracks")
    p.add_argument("--tracks", required=True, help="JSONL of object tracks")
    p.add_argument("--out", required=True)
    p.add_argument("--motion-eps", type=float, default=0.01)
    p.add_argument("--window-min", type=float, default=0.5)
    p.add_argument("--window-max", type=float, default=2.0)
    p.add_argument("--max-dist", type=float, default=1.0)
    p.set_defaults(func=cmd_annotate_stages)

    p = sub.add_parser("train", help="train the motion model")
    _add_config_args(p)
    p.add_argument("--run-dir", help="output run directory")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="write prediction JSONL from a checkpoint")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="evaluate a predictor; writes metric reports")
    _add_config_args(p)
    p.add_argument("--run-dir")
    p.add_argument("--predictor", default="flow", choices=("flow", "static", "copy_gt"))
    p.add_argument("--checkpoint")
    p.add_argument("--with-static", action="store_true", help="also evaluate the static baseline")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="dataset statistics report")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("report", help="merge run reports into one comparison table")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DataValidationError as exc:
        print(f"data validation failure: {exc}", file=sys.stderr)
        return DATA_EXIT
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return NUMERIC_EXIT


if __name__ == "__main__":
    sys.exit(main())
