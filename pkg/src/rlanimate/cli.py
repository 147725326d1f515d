"""Command-line entry point: ``rlanimate [--config F] [--seed N] [--out DIR] COMMAND``.

Commands: ``dataset``, ``train``, ``eval``, ``generate``. The output root is
taken from ``--out``, else the ``RLANIMATE_OUT`` environment variable, else the
config's ``output_dir``.

Exit codes: 0 success, 2 configuration or validation error, 3 I/O error,
4 signal-layout version mismatch, 5 numeric fault.
"""

from __future__ import annotations

import functools
import json
import math
import os
import sys
from dataclasses import dataclass, field, replace
from typing import Sequence

import click
import numpy as np

from . import __version__
from .agent import AgentConfig, atomic_write_bytes, load_checkpoint, rollout
from .errors import ConfigurationError, NumericFault, RLAnimateError, VersionMismatch
from .experiments import (
    ABLATION_KINDS,
    ReportEntry,
    ablation_configs,
    emit_report,
    flex_csv,
    flexibility_sweep,
    seen_clips,
)
from .kinematics import action_to_rotations, canonical_skeleton
from .motion import DatasetSpec, DatasetSplit, MotionClip, load_clip, make_dataset, save_clip, write_bvh
from .scoring import DEFAULT_ORDER, DEFAULT_WINDOW, evaluate_agent, relative_positions, roughness
from .signals import (
    ARM_CODES,
    BEHAVIOUR_CODES,
    DESCRIPTION_JOINTS,
    SIGNAL_LAYOUT_VERSION,
    signal_layout,
)
from .training import TrainConfig, log_csv, read_log_csv, train

OUT_ENV = "RLANIMATE_OUT"
EXIT_CONFIG, EXIT_IO, EXIT_VERSION, EXIT_NUMERIC = 2, 3, 4, 5


@dataclass(frozen=True)
class EvalConfig:
    window: int = DEFAULT_WINDOW
    order: int = DEFAULT_ORDER
    joint_set: tuple[str, ...] = DESCRIPTION_JOINTS

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigurationError("must be a positive odd integer", field="window")
        if not 0 <= self.order < self.window:
            raise ConfigurationError("must satisfy 0 <= order < window", field="order")
        unknown = set(self.joint_set) - set(canonical_skeleton().joint_names)
        if not self.joint_set or unknown:
            raise ConfigurationError(f"unknown joints {sorted(unknown)}", field="joint_set")

    def to_dict(self) -> dict:
        return {"window": self.window, "order": self.order, "joint_set": list(self.joint_set)}

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalConfig":
        extra = set(doc) - {"window", "order", "joint_set"}
        if extra:
            raise ConfigurationError(f"unknown fields {sorted(extra)}")
        doc = dict(doc)
        if "joint_set" in doc:
            doc["joint_set"] = tuple(doc["joint_set"])
        return cls(**doc)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a command needs, as one JSON document.

    ``seed`` is the master seed and overrides the seeds of the nested configs.
    """

    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    agent: AgentConfig = field(default_factory=AgentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "runs"
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigurationError("must be a non-negative integer", field="seed")
        object.__setattr__(self, "dataset", replace(self.dataset, seed=self.seed))
        object.__setattr__(self, "agent", replace(self.agent, seed=self.seed))
        object.__setattr__(self, "train", replace(self.train, seed=self.seed))

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset.to_dict(),
            "agent": self.agent.to_dict(),
            "train": self.train.to_dict(),
            "eval": self.eval.to_dict(),
            "output_dir": self.output_dir,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigurationError("experiment config must be a JSON object")
        extra = set(doc) - {"dataset", "agent", "train", "eval", "output_dir", "seed"}
        if extra:
            raise ConfigurationError(f"unknown fields {sorted(extra)}")
        if "seed" not in doc:
            raise ConfigurationError("an explicit seed is required", field="seed")
        parts = {}
        for key, kind in (("dataset", DatasetSpec), ("agent", AgentConfig), ("train", TrainConfig), ("eval", EvalConfig)):
            sub = doc.get(key, {})
            if not isinstance(sub, dict):
                raise ConfigurationError("must be an object", field=key)
            try:
                parts[key] = kind.from_dict(sub)
            except ConfigurationError as exc:
                raise ConfigurationError(_bare(exc), field=f"{key}.{exc.field}" if exc.field else key) from None
            except (TypeError, ValueError) as exc:
                raise ConfigurationError(str(exc), field=key) from None
        return cls(**parts, output_dir=str(doc.get("output_dir", "runs")), seed=doc["seed"])


def _bare(exc: ConfigurationError) -> str:
    msg = str(exc)
    prefix = f"{exc.field}: "
    return msg[len(prefix):] if exc.field and msg.startswith(prefix) else msg


def load_experiment(path, seed: int | None = None) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig()
    else:
        try:
            with open(path, encoding="utf-8") as f:
                doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"invalid JSON in {path}: {exc}") from None
        cfg = ExperimentConfig.from_dict(doc)
    if seed is not None:
        cfg = ExperimentConfig(cfg.dataset, cfg.agent, cfg.train, cfg.eval, cfg.output_dir, seed)
    return cfg


def _dump(doc) -> bytes:
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode()


# ---------------------------------------------------------------------- manifests


def write_dataset(cfg: ExperimentConfig, out_dir: str) -> str:
    """Write every clip plus ``manifest.json``; returns the manifest path."""
    split = make_dataset(cfg.dataset)
    clip_dir = os.path.join(out_dir, "clips")
    os.makedirs(clip_dir, exist_ok=True)
    for clip in split.train + split.test:
        save_clip(clip, os.path.join(clip_dir, f"{clip.id}.json"))
    manifest = {
        "signal_layout": signal_layout(),
        "dataset": cfg.dataset.to_dict(),
        "clips_dir": "clips",
        "train": [c.id for c in split.train],
        "test": [c.id for c in split.test],
    }
    path = os.path.join(out_dir, "manifest.json")
    atomic_write_bytes(path, _dump(manifest))
    return path


def read_manifest(path) -> tuple[dict, DatasetSplit]:
    with open(path, encoding="utf-8") as f:
        try:
            manifest = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"invalid manifest {path}: {exc}") from None
    base = os.path.join(os.path.dirname(os.path.abspath(path)), manifest.get("clips_dir", "clips"))

    def clips(ids):
        return tuple(load_clip(os.path.join(base, f"{i}.json")) for i in ids)

    return manifest, DatasetSplit(clips(manifest["train"]), clips(manifest["test"]))


def manifest_layout_version(manifest: dict) -> str:
    return str(manifest.get("signal_layout", {}).get("version", ""))


# ---------------------------------------------------------------------- click plumbing


def _parse_floats(text: str, name: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigurationError(f"expected comma-separated numbers, got {text!r}", field=name) from None


def _guard(fn):
    """Map package exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except VersionMismatch as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VERSION)
        except NumericFault as exc:
            click.echo(f"error: numeric fault: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)
        except (RLAnimateError, ValueError, KeyError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except OSError as exc:
            click.echo(f"error: I/O failure: {exc}", err=True)
            sys.exit(EXIT_IO)

    return wrapper


@click.group()
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Experiment config JSON (defaults when omitted).")
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Master seed; overrides the config.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help=f"Output root (beats ${OUT_ENV} and the config).")
@click.pass_context
def main(ctx, config_path, seed, out_dir):
    """Train and evaluate pointing/waving animation agents."""
    ctx.obj = {"config_path": config_path, "seed": seed, "out": out_dir}


def _setup(ctx) -> tuple[ExperimentConfig, str]:
    cfg = load_experiment(ctx.obj["config_path"], ctx.obj["seed"])
    root = ctx.obj["out"] or os.environ.get(OUT_ENV) or cfg.output_dir
    os.makedirs(root, exist_ok=True)
    return cfg, root


@main.command()
@click.pass_context
@_guard
def dataset(ctx):
    """Generate the synthetic clip corpus and its manifest."""
    cfg, root = _setup(ctx)
    path = write_dataset(cfg, os.path.join(root, "dataset"))
    atomic_write_bytes(os.path.join(root, "experiment.json"), _dump(cfg.to_dict()))
    click.echo(path)


@main.command("train")
@click.option("--ablation", type=click.Choice(ABLATION_KINDS), default="full", show_default=True)
@click.option("--manifest", type=click.Path(dir_okay=False), default=None,
              help="Dataset manifest (default: <out>/dataset/manifest.json).")
@click.pass_context
@_guard
def train_cmd(ctx, ablation, manifest):
    """Train an agent (or an ablation control) and write its checkpoint and log."""
    cfg, root = _setup(ctx)
    manifest = manifest or os.path.join(root, "dataset", "manifest.json")
    doc, split = read_manifest(manifest)
    if manifest_layout_version(doc) != SIGNAL_LAYOUT_VERSION:
        raise VersionMismatch(SIGNAL_LAYOUT_VERSION, manifest_layout_version(doc))
    tcfg, acfg = ablation_configs(ablation, cfg.train, cfg.agent)
    run_dir = os.path.join(root, "runs", ablation)
    os.makedirs(run_dir, exist_ok=True)
    atomic_write_bytes(os.path.join(run_dir, "experiment.json"), _dump(cfg.to_dict()))
    ckpt_path = os.path.join(run_dir, "checkpoint.rlack")

    def echo(row):
        held = "" if row.holdout_score is None else f" holdout {row.holdout_score:.3f}"
        click.echo(f"epoch {row.epoch} l1 {row.l1:.6f} l2 {row.l2:.6f} l3 {row.l3:.6f} total {row.total:.6f}{held}")

    _, rows = train(tcfg, acfg, split, checkpoint_path=ckpt_path, on_epoch=echo)
    atomic_write_bytes(os.path.join(run_dir, "log.csv"), log_csv(rows).encode())
    click.echo(ckpt_path)


@main.command("eval")
@click.option("--checkpoint", "checkpoint_path", type=click.Path(dir_okay=False), required=True)
@click.option("--manifest", type=click.Path(dir_okay=False), default=None)
@click.option("--split", type=click.Choice(["train", "test"]), default="test", show_default=True)
@click.option("--flex", default=None, help="Comma-separated time-warp factors, e.g. 0.5,1.0,1.5.")
@click.pass_context
@_guard
def eval_cmd(ctx, checkpoint_path, manifest, split, flex):
    """Score a checkpoint with deterministic rollouts and write CSV/SVG reports."""
    cfg, root = _setup(ctx)
    manifest = manifest or os.path.join(root, "dataset", "manifest.json")
    doc, data = read_manifest(manifest)
    ckpt = load_checkpoint(checkpoint_path)
    ckpt.check_layout(manifest_layout_version(doc))
    factors = _parse_floats(flex, "flex") if flex else []
    agent = ckpt.build_agent()
    behaviours = ("point", "wave")
    clips = list(data.test) if split == "test" else seen_clips(data, behaviours)
    ev = cfg.eval
    report = evaluate_agent(agent, clips, canonical_skeleton(), ev.window, ev.order, ev.joint_set)
    method = ckpt.agent_config.variant
    log_path = os.path.join(os.path.dirname(os.path.abspath(checkpoint_path)), "log.csv")
    rows = []
    if os.path.exists(log_path):
        with open(log_path, encoding="utf-8") as f:
            rows = read_log_csv(f.read())
    out_dir = os.path.join(root, "eval", f"{method}-{split}")
    entries = [ReportEntry(method, _behaviour_set(clips), split, report, rows)]
    files = emit_report(entries, out_dir)
    for b, (s, sm, n) in report.by_behaviour().items():
        click.echo(f"{method} {split} {b}: score {s:.3f} smoothness {sm:.3f} ({n} clips)")
    click.echo(f"{method} {split} all: score {report.mean_score:.3f} smoothness {report.mean_smoothness:.3f}")
    if factors:
        flex_rows = flexibility_sweep(ckpt, clips, factors, canonical_skeleton(),
                                      window=ev.window, order=ev.order, joint_set=ev.joint_set)
        files["flex"] = os.path.join(out_dir, "flex.csv")
        atomic_write_bytes(files["flex"], flex_csv(flex_rows).encode())
        for f in factors:
            vals = [r.smoothness for r in flex_rows if r.factor == f]
            click.echo(f"flex {f:g}: mean smoothness {np.mean(vals):.3f}")
    click.echo(files["report"])


def _behaviour_set(clips: Sequence[MotionClip]) -> str:
    kinds = sorted({c.behaviour for c in clips})
    return "both" if len(kinds) > 1 else (kinds[0] if kinds else "none")


@main.command()
@click.option("--checkpoint", "checkpoint_path", type=click.Path(dir_okay=False), required=True)
@click.option("--point", "point", default=None, help="Unit target direction x,y,z.")
@click.option("--wave", "wave", type=float, default=None, help="Wave exaggeration in [0, 1].")
@click.option("--arm", type=click.Choice(sorted(ARM_CODES)), default="right", show_default=True)
@click.option("--frames", type=click.IntRange(min=1), default=60, show_default=True)
@click.option("--normalize", is_flag=True, help="Scale a non-unit point target to unit length.")
@click.option("--bvh", is_flag=True, help="Also write a BVH file.")
@click.option("--name", default=None, help="Output file stem.")
@click.pass_context
@_guard
def generate(ctx, checkpoint_path, point, wave, arm, frames, normalize, bvh, name):
    """Synthesize one clip from a checkpoint for a point or wave objective."""
    _, root = _setup(ctx)
    if (point is None) == (wave is None):
        raise ConfigurationError("give exactly one of --point or --wave", field="behaviour")
    if point is not None:
        target = np.array(_parse_floats(point, "point"))
        if target.shape != (3,) or not np.all(np.isfinite(target)):
            raise ConfigurationError("needs three finite components", field="point")
        norm = float(np.linalg.norm(target))
        if norm == 0.0:
            raise ConfigurationError("target must be non-zero", field="point")
        if abs(norm - 1.0) > 1e-6:
            if not normalize:
                raise ConfigurationError(f"target has length {norm:g}; pass --normalize to rescale", field="point")
            target = target / norm
        behaviour, attrs = "point", tuple(float(v) for v in target)
    else:
        if not (math.isfinite(wave) and 0.0 <= wave <= 1.0):
            raise ConfigurationError("exaggeration must lie in [0, 1]", field="wave")
        behaviour, attrs = "wave", (float(wave),) * 3
    ckpt = load_checkpoint(checkpoint_path)
    agent = ckpt.build_agent()
    sk = canonical_skeleton()
    n = frames
    obj = np.array([[BEHAVIOUR_CODES[behaviour], ARM_CODES[arm], *attrs, t / n] for t in range(n)])
    ep = rollout(agent, obj, sk, "deterministic")
    stem = name or f"{behaviour}-{arm}-{n}"
    clip = MotionClip(stem, behaviour, arm, attrs, 30.0, action_to_rotations(sk, ep.a))
    out_dir = os.path.join(root, "generated")
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{stem}.json")
    save_clip(clip, path)
    if bvh:
        atomic_write_bytes(os.path.join(out_dir, f"{stem}.bvh"), write_bvh(clip, sk).encode())
    rough = roughness(relative_positions(sk, clip.frames)) if n >= DEFAULT_WINDOW else float("nan")
    click.echo(f"{path}: {n} frames, {behaviour} ({arm} arm), roughness {rough:.6f}")


if __name__ == "__main__":  # pragma: no cover
    main()
