"""Ablation runs, the time-warp flexibility sweep, and CSV/SVG report emission."""

from __future__ import annotations

import csv
import io
import math
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .agent import VARIANTS, AgentConfig, Checkpoint, atomic_write_bytes
from .errors import ContractViolation
from .kinematics import Skeleton, canonical_skeleton
from .motion import DatasetSplit, MotionClip, resample_clip
from .scoring import (
    DEFAULT_ORDER,
    DEFAULT_WINDOW,
    ScoreReport,
    agent_clip_for,
    error_trace,
    evaluate_agent,
    smoothness,
    total_error,
)
from .signals import DESCRIPTION_JOINTS
from .training import LogRow, TrainConfig, train

ABLATION_KINDS = VARIANTS
SUPERVISED_WEIGHTS = (0.0, 0.0, 1.0)
REPORT_COLUMNS = ("method", "behaviour_set", "split", "score", "smoothness", "n_clips")


@dataclass
class AblationResult:
    """Outcome of one ablation run: per-split reports plus the training log."""

    kind: str
    behaviour_set: str
    reports: dict[str, ScoreReport]
    log: list[LogRow] = field(default_factory=list)


DESK_TRAIN_OVERRIDES = {
    "epochs": 100,
    "behaviours": "both",
    "chunks_per_update": 16,
    "chunk_length": 60,
    "updates_per_epoch": 30,
    "learning_rate": 1e-3,
    "lr_schedule": "cosine",
}
DESK_AGENT_OVERRIDES: dict = {}


def desk_configs(seed: int = 0) -> tuple[TrainConfig, AgentConfig]:
    """Budget for the 100-epoch, both-behaviour runs on the default synthetic dataset.

    Whole 60-frame episodes per chunk and a larger, annealed step size than the
    library defaults; the defaults converge too slowly for a 100-epoch budget.
    """
    return (TrainConfig(**DESK_TRAIN_OVERRIDES, seed=seed),
            AgentConfig(**DESK_AGENT_OVERRIDES, seed=seed))


def ablation_configs(kind: str, train_config: TrainConfig, agent_config: AgentConfig) -> tuple[TrainConfig, AgentConfig]:
    """The configs actually trained for ``kind``; ``full`` returns its inputs unchanged."""
    if kind not in ABLATION_KINDS:
        raise ContractViolation(f"unknown ablation kind {kind!r}; expected one of {ABLATION_KINDS}")
    if kind == "full":
        return train_config, replace(agent_config, variant="full")
    if kind == "supervised_loss":
        train_config = replace(train_config, loss_weights=SUPERVISED_WEIGHTS)
    return train_config, replace(agent_config, variant=kind)


def seen_clips(dataset: DatasetSplit, behaviours: Sequence[str]) -> list[MotionClip]:
    """Training clips scored alongside the held-out set, matching its per-behaviour counts."""
    out = []
    for b in behaviours:
        k = len(dataset.by_behaviour(b, "test"))
        out.extend(dataset.by_behaviour(b, "train")[:k])
    return out


def run_ablation(kind: str, train_config: TrainConfig, agent_config: AgentConfig, dataset: DatasetSplit,
                 skeleton: Skeleton | None = None, *, window: int = DEFAULT_WINDOW, order: int = DEFAULT_ORDER,
                 joint_set: Sequence[str] = DESCRIPTION_JOINTS, checkpoint_path=None,
                 on_epoch=None) -> tuple[Checkpoint, AblationResult]:
    """Train one agent of the given kind and score it on seen and held-out clips."""
    skeleton = skeleton or canonical_skeleton()
    tcfg, acfg = ablation_configs(kind, train_config, agent_config)
    ckpt, rows = train(tcfg, acfg, dataset, skeleton, checkpoint_path=checkpoint_path, on_epoch=on_epoch)
    behaviours = ("point", "wave") if tcfg.behaviours == "both" else (tcfg.behaviours,)
    agent = ckpt.build_agent()
    reports = {
        "train": evaluate_agent(agent, seen_clips(dataset, behaviours), skeleton, window, order, joint_set),
        "test": evaluate_agent(agent, [c for c in dataset.test if c.behaviour in behaviours],
                               skeleton, window, order, joint_set),
    }
    return ckpt, AblationResult(kind, tcfg.behaviours, reports, rows)


# ---------------------------------------------------------------------- flexibility


@dataclass(frozen=True)
class FlexRow:
    clip_id: str
    factor: float
    n_frames: int
    score: float
    smoothness: float


def flexibility_sweep(checkpoint: Checkpoint, clips: Sequence[MotionClip] | DatasetSplit, factors: Sequence[float],
                      skeleton: Skeleton | None = None, *, window: int = DEFAULT_WINDOW, order: int = DEFAULT_ORDER,
                      joint_set: Sequence[str] = DESCRIPTION_JOINTS) -> list[FlexRow]:
    """Roll out each clip stretched by every factor and score it against the resampled reference.

    ``clips`` may be a :class:`DatasetSplit`, in which case its test clips are used.
    """
    skeleton = skeleton or canonical_skeleton()
    if isinstance(clips, DatasetSplit):
        clips = clips.test
    factors = [float(f) for f in factors]
    if not factors:
        raise ContractViolation("need at least one factor")
    agent = checkpoint.build_agent()
    rows = []
    for ref in clips:
        for f in factors:
            warped = resample_clip(ref, f)
            out = agent_clip_for(agent, ref, skeleton, n_frames=warped.n_frames)
            trace = error_trace(skeleton, out.frames, warped.frames, joint_set)
            rows.append(FlexRow(ref.id, f, warped.n_frames, 100.0 - total_error(trace) / out.n_frames,
                                smoothness(out, warped, skeleton, window, order, joint_set)))
    return rows


def flex_csv(rows: Sequence[FlexRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("clip_id", "factor", "n_frames", "score", "smoothness"))
    for r in rows:
        w.writerow((r.clip_id, repr(r.factor), r.n_frames, repr(r.score), repr(r.smoothness)))
    return buf.getvalue()


# ---------------------------------------------------------------------- reports


@dataclass
class ReportEntry:
    """One row of the comparison table, optionally with the training curve behind it."""

    method: str
    behaviour_set: str
    split: str
    report: ScoreReport
    log: list[LogRow] = field(default_factory=list)


def entries_from(result: AblationResult) -> list[ReportEntry]:
    return [ReportEntry(result.kind, result.behaviour_set, split, rep, result.log)
            for split, rep in result.reports.items()]


def report_csv(entries: Sequence[ReportEntry]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for e in entries:
        w.writerow((e.method, e.behaviour_set, e.split, repr(e.report.mean_score),
                    repr(e.report.mean_smoothness), len(e.report.scores)))
    return buf.getvalue()


def read_report_csv(text: str) -> list[dict]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append({"method": rec["method"], "behaviour_set": rec["behaviour_set"], "split": rec["split"],
                     "score": float(rec["score"]), "smoothness": float(rec["smoothness"]),
                     "n_clips": int(rec["n_clips"])})
    return rows


def clips_csv(entries: Sequence[ReportEntry]) -> str:
    """Per-clip detail behind :func:`report_csv`."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("method", "split", "clip_id", "behaviour", "score", "smoothness", "max_frame_error"))
    for e in entries:
        r = e.report
        for cid, b, s, sm, tr in zip(r.clip_ids, r.behaviours, r.scores, r.smoothness, r.error_traces):
            w.writerow((e.method, e.split, cid, b, repr(s), repr(sm), repr(float(np.max(tr)))))
    return buf.getvalue()


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def score_chart_svg(entries: Sequence[ReportEntry], width: int = 640, height: int = 400) -> str:
    """Held-out score against epoch, one polyline per method."""
    curves: dict[str, list[tuple[int, float]]] = {}
    for e in entries:
        pts = [(r.epoch, r.holdout_score) for r in e.log if r.holdout_score is not None]
        if pts and e.method not in curves:
            curves[e.method] = pts
    left, right, top, bottom = 60, 20, 20, 50
    pw, ph = width - left - right, height - top - bottom
    max_epoch = max([p[0] for pts in curves.values() for p in pts], default=1)
    ys = [p[1] for pts in curves.values() for p in pts]
    y_lo = min(0.0, math.floor(min(ys, default=0.0) / 10) * 10)
    y_hi = 100.0

    def sx(epoch):
        return left + pw * epoch / max(max_epoch, 1)

    def sy(value):
        v = min(max(value, y_lo), y_hi)
        return top + ph * (y_hi - v) / (y_hi - y_lo)

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(width), height=str(height),
                     viewBox=f"0 0 {width} {height}")
    axes = ET.SubElement(svg, "g", stroke="black", fill="none")
    ET.SubElement(axes, "line", x1=str(left), y1=str(top + ph), x2=str(left + pw), y2=str(top + ph))
    ET.SubElement(axes, "line", x1=str(left), y1=str(top), x2=str(left), y2=str(top + ph))
    for v in np.linspace(y_lo, y_hi, 5):
        t = ET.SubElement(svg, "text", x=str(left - 8), y=f"{sy(v) + 4:.1f}", **{"text-anchor": "end", "font-size": "11"})
        t.text = f"{v:g}"
    ET.SubElement(svg, "text", x=str(left + pw / 2), y=str(height - 12),
                  **{"text-anchor": "middle", "font-size": "13"}).text = "epoch"
    ET.SubElement(svg, "text", x="16", y=str(top + ph / 2),
                  transform=f"rotate(-90 16 {top + ph / 2})",
                  **{"text-anchor": "middle", "font-size": "13"}).text = "score"
    for i, (method, pts) in enumerate(sorted(curves.items())):
        colour = _PALETTE[i % len(_PALETTE)]
        ET.SubElement(svg, "polyline", fill="none", stroke=colour, **{"stroke-width": "2"},
                      points=" ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts))
        ET.SubElement(svg, "text", x=str(left + pw - 4), y=str(top + 14 + 14 * i), fill=colour,
                      **{"text-anchor": "end", "font-size": "12"}).text = method
    return ET.tostring(svg, encoding="unicode")


def emit_report(entries: Sequence[ReportEntry], path) -> dict[str, str]:
    """Write ``report.csv``, ``clips.csv`` and ``scores.svg`` under directory ``path``.

    Returns the written file paths by kind. I/O errors propagate as ``OSError``
    carrying the offending path.
    """
    if not entries:
        raise ContractViolation("need at least one report")
    path = os.fspath(path)
    os.makedirs(path, exist_ok=True)
    files = {
        "report": os.path.join(path, "report.csv"),
        "clips": os.path.join(path, "clips.csv"),
        "chart": os.path.join(path, "scores.svg"),
    }
    atomic_write_bytes(files["report"], report_csv(entries).encode())
    atomic_write_bytes(files["clips"], clips_csv(entries).encode())
    atomic_write_bytes(files["chart"], score_chart_svg(entries).encode())
    return files
