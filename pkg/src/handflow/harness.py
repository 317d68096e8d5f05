"""Run orchestration: configuration, training loop, evaluation, reports.

Every run is driven by one YAML config (CLI flags override file values) and
lands in its own directory containing the fully resolved config, a version
string, the dataset manifest hash, per-step loss logs, checkpoints and
reports. Two runs with the same resolved config and seed produce bitwise-
identical reports.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__, flowmatch, metrics, tokens
from .dataio import (
    DatasetManifest,
    SplitSpec,
    compute_manifest,
    make_splits,
    manifest_hash,
    read_samples,
)
from .flowmatch import (
    MotionExpert,
    MotionExpertConfig,
    build_batch,
    load_model,
    predict_best_of_k,
    save_model,
    train_step,
)
from .losses import LossWeights
from .nn import AdamW, OptimizerConfig
from .trajectory import TrajectorySample

OUTPUT_ROOT_ENV = "HANDFLOW_OUTPUT_ROOT"


class DataValidationError(ValueError):
    """Input data failed validation (CLI exit code 2)."""


class NumericalFailure(RuntimeError):
    """Training produced a non-finite loss (CLI exit code 3)."""


@dataclass
class TrainParams:
    epochs: int = 60
    batch_size: int = 256
    split: str = "finetune"  # which scene split to train on; "all" disables filtering


@dataclass
class EvalParams:
    split: str = "test"
    k_list: tuple = (1, 5, 10)
    master_seed: int = 1234
    workers: int = 1
    euler_steps: int | None = None
    max_samples: int | None = None
    joint_selection: bool = False


@dataclass
class ProviderParams:
    kind: str = "oracle"  # oracle | noisy | file
    sigma_pos: float = 0.0
    sigma_time: float = 0.0
    sigma_rot: float = 0.0
    seed: int = 0
    path: str | None = None


@dataclass
class RunConfig:
    seed: int = 0
    dataset: str = ""
    manifest: str = ""
    splits: str = ""
    model: MotionExpertConfig = field(default_factory=MotionExpertConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optimizer_lr: float = 1e-4
    optimizer_weight_decay: float = 1e-4
    optimizer_warmup_fraction: float = 0.05
    train: TrainParams = field(default_factory=TrainParams)
    eval: EvalParams = field(default_factory=EvalParams)
    provider: ProviderParams = field(default_factory=ProviderParams)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["eval"]["k_list"] = list(self.eval.k_list)
        return d

    @staticmethod
    def from_dict(d):
        d = dict(d)
        for key, cls in (
            ("model", MotionExpertConfig),
            ("loss", LossWeights),
            ("train", TrainParams),
            ("eval", EvalParams),
            ("provider", ProviderParams),
        ):
            if key in d and isinstance(d[key], dict):
                d[key] = cls(**d[key])
        if isinstance(d.get("eval"), EvalParams):
            d["eval"] = dataclasses.replace(d["eval"], k_list=tuple(d["eval"].k_list))
        return RunConfig(**d)

    @staticmethod
    def load(path):
        with open(path, "r", encoding="utf-8") as fh:
            return RunConfig.from_dict(yaml.safe_load(fh) or {})

    def resolved_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def config_hash(self):
        return hashlib.sha256(self.resolved_yaml().encode("utf-8")).hexdigest()


def apply_overrides(cfg: RunConfig, overrides):
    """Apply dotted key=value overrides (e.g. model.hidden_dim=64) to a config."""
    d = cfg.to_dict()
    for item in overrides or []:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            if p not in node:
                raise KeyError(f"unknown config section {p!r} in override {item!r}")
            node = node[p]
        if parts[-1] not in node:
            raise KeyError(f"unknown config key {key!r}")
        node[parts[-1]] = value
    return RunConfig.from_dict(d)


def default_output_root():
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def code_version():
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=10,
        )
        git = desc.stdout.strip() if desc.returncode == 0 else "nogit"
    except (OSError, subprocess.SubprocessError):
        git = "nogit"
    return f"handflow {__version__} ({git})"


# -- dataset loading --------------------------------------------------------------

def load_dataset(cfg: RunConfig, split_name, strict=True):
    """Load samples for one scene split; violations are fatal when strict."""
    samples, violations = read_samples(cfg.dataset)
    if violations and strict:
        raise DataValidationError(
            f"{cfg.dataset}: {len(violations)} invalid records, first: {violations[0]}"
        )
    if split_name != "all":
        with open(cfg.splits, "r", encoding="utf-8") as fh:
            splits = json.load(fh)
        if split_name not in splits:
            raise DataValidationError(f"split {split_name!r} not in {cfg.splits}")
        keep = set(splits[split_name])
        samples = [s for s in samples if s.scene_id in keep]
    if not samples:
        raise DataValidationError(f"no samples in split {split_name!r}")
    return sorted(samples, key=lambda s: s.sample_id)


# -- providers --------------------------------------------------------------------

def make_provider(params: ProviderParams, known_sample_ids=None):
    """Resolve provider params to a callable (sample, per_sample_seed) -> bundle.

    The file provider returns None for samples without a stored prediction;
    callers skip and report those.
    """
    if params.kind == "oracle":
        return lambda sample, seed: tokens.oracle_provider(sample)
    if params.kind == "noisy":
        return lambda sample, seed: tokens.noisy_provider(
            sample,
            sigma_pos=params.sigma_pos,
            sigma_time=params.sigma_time,
            sigma_rot=params.sigma_rot,
            seed=seed,
        )
    if params.kind == "file":
        if not params.path:
            raise DataValidationError("file provider needs provider.path")
        bundles, violations = tokens.file_provider(params.path, known_sample_ids)
        provider = lambda sample, seed: bundles.get(sample.sample_id)
        provider.violations = violations
        return provider
    raise DataValidationError(f"unknown provider kind {params.kind!r}")


# -- predictors --------------------------------------------------------------------

class FlowPredictor:
    """Samples trajectories from a trained motion model."""

    def __init__(self, model: MotionExpert, euler_steps=None):
        self.model = model
        self.euler_steps = euler_steps

    def predict(self, sample, bundle, k, master_seed):
        return predict_best_of_k(
            self.model, sample, bundle, k, master_seed=master_seed, n_steps=self.euler_steps
        )


class StaticPredictor:
    """Repeats the last observed bi-hand pose across the future horizon."""

    def predict(self, sample, bundle, k, master_seed):
        last = sample.past[-1]
        traj = [
            dataclasses.replace(last, timestamp=st.timestamp) for st in sample.future
        ]
        return [traj] * k


class CopyGroundTruthPredictor:
    """Debug predictor returning the ground-truth future; all metrics must be 0."""

    def predict(self, sample, bundle, k, master_seed):
        return [list(sample.future)] * k


def make_predictor(name, checkpoint=None, euler_steps=None):
    if name == "flow":
        if checkpoint is None:
            raise DataValidationError("flow predictor needs a checkpoint")
        model, _, _ = load_model(checkpoint)
        return FlowPredictor(model, euler_steps=euler_steps)
    if name == "static":
        return StaticPredictor()
    if name == "copy_gt":
        return CopyGroundTruthPredictor()
    raise DataValidationError(f"unknown predictor {name!r}")


# -- training -----------------------------------------------------------------------

def _epoch_order(seed, epoch, n):
    return np.random.default_rng((seed + 1) * 1_000_003 + epoch).permutation(n)


def _epoch_noise_rng(seed, epoch):
    return np.random.default_rng((seed + 1) * 7_777_777 + epoch)


def run_training(cfg: RunConfig, run_dir, resume=False, quiet=False, stop_after=None):
    """Train the motion model on GT waypoint/semantics conditions.

    Writes a checkpoint per epoch plus a JSONL loss log with the per-term
    breakdown for every step. Per-epoch RNG streams make resuming from the
    latest checkpoint reproduce the uninterrupted run exactly. stop_after
    interrupts training after that many epochs without touching the
    learning-rate schedule (resume later with the same config).
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    train_samples = load_dataset(cfg, cfg.train.split)
    manifest = DatasetManifest.load(cfg.manifest)

    model = MotionExpert(cfg.model, manifest, seed=cfg.seed)
    steps_per_epoch = math.ceil(len(train_samples) / cfg.train.batch_size)
    total_steps = steps_per_epoch * cfg.train.epochs
    opt_cfg = OptimizerConfig(
        learning_rate=cfg.optimizer_lr,
        weight_decay=cfg.optimizer_weight_decay,
        warmup_fraction=cfg.optimizer_warmup_fraction,
        total_steps=total_steps,
    )
    opt = AdamW(model.named_parameters(), opt_cfg)

    start_epoch = 0
    ckpt_path = run_dir / "checkpoint.npz"
    if resume and ckpt_path.exists():
        model, opt_state, meta = load_model(ckpt_path)
        opt = AdamW(model.named_parameters(), opt_cfg)
        if opt_state is not None:
            opt.load_state_dict(opt_state)
        start_epoch = int(meta["extra"].get("epoch", 0))

    _write_run_metadata(cfg, run_dir)
    log_path = run_dir / "loss_log.jsonl"
    mode = "a" if (resume and start_epoch > 0) else "w"
    step = start_epoch * steps_per_epoch
    last_epoch = cfg.train.epochs if stop_after is None else min(stop_after, cfg.train.epochs)
    with open(log_path, mode, encoding="utf-8") as log:
        for epoch in range(start_epoch, last_epoch):
            order = _epoch_order(cfg.seed, epoch, len(train_samples))
            noise_rng = _epoch_noise_rng(cfg.seed, epoch)
            for lo in range(0, len(train_samples), cfg.train.batch_size):
                chunk = [train_samples[i] for i in order[lo : lo + cfg.train.batch_size]]
                bundles = [tokens.oracle_provider(s) for s in chunk]
                batch = build_batch(chunk, bundles, manifest, cfg.model)
                out = train_step(model, opt, batch, noise_rng, cfg.loss)
                step += 1
                if not np.isfinite(out["fm"]):
                    raise NumericalFailure(f"non-finite loss at step {step}: {out}")
                log.write(json.dumps({"step": step, "epoch": epoch, **out}) + "\n")
            save_model(
                ckpt_path,
                model,
                opt=opt,
                step=step,
                config_hash=cfg.config_hash(),
            )
            # epoch index rides along for resume
            _annotate_checkpoint_epoch(ckpt_path, epoch + 1)
            if not quiet:
                print(f"epoch {epoch + 1}/{cfg.train.epochs}: fm={out['fm']:.5f}")
    return ckpt_path


def _annotate_checkpoint_epoch(path, epoch):
    from .nn.checkpoint import load_checkpoint, save_checkpoint

    params, opt_state, meta = load_checkpoint(path)
    extra = dict(meta["extra"])
    extra["epoch"] = epoch
    save_checkpoint(
        path,
        params,
        opt_state=opt_state,
        step=meta["step"],
        config_hash=meta["config_hash"],
        rng_state=meta.get("rng_state"),
        extra=extra,
    )


def _write_run_metadata(cfg: RunConfig, run_dir):
    run_dir = Path(run_dir)
    (run_dir / "config.yaml").write_text(cfg.resolved_yaml(), encoding="utf-8")
    meta = {
        "version": code_version(),
        "config_hash": cfg.config_hash(),
        "manifest_hash": manifest_hash(cfg.manifest) if cfg.manifest else None,
    }
    (run_dir / "run_metadata.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


# -- evaluation --------------------------------------------------------------------

def _waypoint_errors(bundle, sample):
    pred_wps = bundle.waypoints()
    contact = metrics.contact_distance(pred_wps.contact, sample)
    traj = metrics.traj_warp_distance([pred_wps.contact, pred_wps.end], sample.future)
    loc, time_err, rot = metrics.waypoint_loc_time_rot(pred_wps, sample.waypoints)
    return {"contact": contact, "traj": traj, "loc": loc, "time": time_err, "rot": rot}


def _evaluate_chunk(args):
    predictor, items, k_list, joint = args
    rows = []
    for sample, bundle, seed in items:
        preds = predictor.predict(sample, bundle, max(k_list), master_seed=seed)
        preds = [p[: len(sample.future)] for p in preds]
        row = {
            "sample_id": sample.sample_id,
            "k": {
                str(k): metrics.best_of_k(preds, sample.future, k, joint_selection=joint)
                for k in k_list
            },
            "waypoints": _waypoint_errors(bundle, sample),
        }
        rows.append(row)
    return rows


def run_evaluation(cfg: RunConfig, predictor, run_dir=None, samples=None, provider=None):
    """Evaluate a predictor over a dataset split.

    Returns (MetricReport, WaypointReport, per_sample_rows). Samples are
    processed in sample_id order with per-sample seeds derived from the
    master seed, so reports are bitwise-stable for any worker count.
    """
    if samples is None:
        samples = load_dataset(cfg, cfg.eval.split)
    samples = sorted(samples, key=lambda s: s.sample_id)
    if cfg.eval.max_samples:
        samples = samples[: cfg.eval.max_samples]
    if provider is None:
        provider = make_provider(cfg.provider, known_sample_ids={s.sample_id for s in samples})

    seed_seq = np.random.SeedSequence(cfg.eval.master_seed).spawn(2 * len(samples))
    items, skipped = [], []
    for i, s in enumerate(samples):
        provider_seed = int(seed_seq[2 * i].generate_state(1)[0])
        sampler_seed = int(seed_seq[2 * i + 1].generate_state(1)[0])
        bundle = provider(s, provider_seed)
        if bundle is None:
            skipped.append(s.sample_id)
            continue
        items.append((s, bundle, sampler_seed))
    if not items:
        raise DataValidationError("no samples with a usable token bundle")

    k_list = sorted(cfg.eval.k_list)
    workers = max(1, int(cfg.eval.workers))
    if workers == 1:
        rows = _evaluate_chunk((predictor, items, k_list, cfg.eval.joint_selection))
    else:
        chunks = [
            (predictor, items[i::workers], k_list, cfg.eval.joint_selection)
            for i in range(workers)
        ]
        rows = []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_evaluate_chunk, chunks):
                rows.extend(part)
        rows.sort(key=lambda r: r["sample_id"])

    values = {
        m: {k: float(np.mean([r["k"][str(k)][m] for r in rows])) for k in k_list}
        for m in ("ade", "fde", "dtw", "rot")
    }
    report = metrics.MetricReport(values=values, n_samples=len(rows))
    report.metadata["skipped_samples"] = skipped
    wp_values = {
        name: float(np.mean([r["waypoints"][name] for r in rows]))
        for name in ("contact", "traj", "loc", "time", "rot")
    }
    wp_report = metrics.WaypointReport(n_samples=len(rows), **wp_values)

    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "metrics.json").write_text(report.to_json() + "\n", encoding="utf-8")
        (run_dir / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
        (run_dir / "waypoints.json").write_text(wp_report.to_json() + "\n", encoding="utf-8")
        (run_dir / "waypoints.csv").write_text(wp_report.to_csv(), encoding="utf-8")
        with open(run_dir / "per_sample.jsonl", "w", encoding="utf-8") as fh:
            for r in rows:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
    return report, wp_report, rows


# -- report merging -----------------------------------------------------------------

def merge_reports(run_dirs):
    """Combine per-run metric reports into one method x metric x K table.

    Returns (header, rows) where missing values appear as "n/a".
    """
    k_order = [1, 5, 10]
    header = ["method"] + [f"{m}@K={k}" for m in ("ade", "fde", "dtw", "rot") for k in k_order]
    rows = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        name = run_dir.name
        path = run_dir / "metrics.json"
        cells = []
        if path.exists():
            data = json.loads(path.read_text(encoding="utf-8"))
            for m in ("ade", "fde", "dtw", "rot"):
                for k in k_order:
                    v = data.get("metrics", {}).get(m, {}).get(str(k))
                    cells.append("n/a" if v is None else f"{v:.4f}")
        else:
            cells = ["n/a"] * 12
        rows.append([name] + cells)
    return header, rows


def format_table(header, rows):
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"
