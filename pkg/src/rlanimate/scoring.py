"""Imitation score and smoothness metrics, and deterministic evaluation of agents."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .kinematics import PoseGeometry, Skeleton, action_to_rotations, canonical_skeleton, forward_kinematics_batch
from .motion import MotionClip
from .signals import DESCRIPTION_JOINTS, ROOT_JOINT, objective_sequence

PENALTY_BASE = 1.01
SMOOTHNESS_EPS = 1e-8
DEFAULT_WINDOW = 9
DEFAULT_ORDER = 3


def error_per_frame(agent_geometry: PoseGeometry, ref_geometry: PoseGeometry,
                    joint_set: Sequence[str] = DESCRIPTION_JOINTS) -> float:
    """Sum over joints of the L1 distance between root-relative positions."""
    total = 0.0
    a_root = agent_geometry.position(ROOT_JOINT)
    r_root = ref_geometry.position(ROOT_JOINT)
    for j in joint_set:
        d = (agent_geometry.position(j) - a_root) - (ref_geometry.position(j) - r_root)
        total += float(np.abs(d).sum())
    return total


def relative_positions(skeleton: Skeleton, frames: np.ndarray, joint_set: Sequence[str] = DESCRIPTION_JOINTS) -> np.ndarray:
    """Root-relative positions ``(F, len(joint_set), 3)`` for a stack of poses."""
    pos, _ = forward_kinematics_batch(skeleton, frames)
    idx = [skeleton.index(j) for j in joint_set]
    return pos[:, idx] - pos[:, skeleton.index(ROOT_JOINT)][:, None, :]


def error_trace(skeleton: Skeleton, agent_frames: np.ndarray, ref_frames: np.ndarray,
                joint_set: Sequence[str] = DESCRIPTION_JOINTS) -> np.ndarray:
    diff = relative_positions(skeleton, agent_frames, joint_set) - relative_positions(skeleton, ref_frames, joint_set)
    return np.abs(diff).sum(axis=(1, 2))


def total_error(per_frame_errors) -> float:
    """Sum of per-frame errors plus ``max(0, log_1.01(e))`` for every frame."""
    e = np.asarray(per_frame_errors, dtype=float)
    if np.any(e < 0) or not np.all(np.isfinite(e)):
        raise ContractViolation("per-frame errors must be finite and non-negative")
    total = 0.0
    for v in e:
        total += v
        if v > 1.0:
            total += math.log(v) / math.log(PENALTY_BASE)
    return total


def score(agent_clip: MotionClip, ref_clip: MotionClip, skeleton: Skeleton | None = None,
          joint_set: Sequence[str] = DESCRIPTION_JOINTS) -> float:
    """``100 - total_error / frames``; the reference is resampled when lengths differ. Not clamped."""
    skeleton = skeleton or canonical_skeleton()
    if agent_clip.n_frames == 0 or ref_clip.n_frames == 0:
        raise ContractViolation("clips must be non-empty")
    ref = _match_length(ref_clip, agent_clip.n_frames)
    errors = error_trace(skeleton, agent_clip.frames, ref.frames, joint_set)
    return 100.0 - total_error(errors) / agent_clip.n_frames


def _match_length(ref: MotionClip, n: int) -> MotionClip:
    if ref.n_frames == n:
        return ref
    if ref.n_frames == 1:
        return ref.with_frames(np.repeat(ref.frames, n, axis=0))
    src = np.arange(ref.n_frames)
    dst = np.linspace(0.0, ref.n_frames - 1, n)
    frames = np.stack([np.interp(dst, src, ref.frames[:, k]) for k in range(ref.frames.shape[1])], axis=1)
    return ref.with_frames(frames)


def savgol_coefficients(window: int, order: int) -> np.ndarray:
    """Centre-point smoothing weights of the least-squares polynomial fit over ``window`` samples."""
    if window < 1 or window % 2 == 0:
        raise ConfigurationError("window must be a positive odd integer", field="window")
    if not 0 <= order < window:
        raise ConfigurationError("order must satisfy 0 <= order < window", field="order")
    half = window // 2
    x = np.arange(-half, half + 1, dtype=float)
    vander = x[:, None] ** np.arange(order + 1)[None, :]
    # row 0 of the pseudo-inverse evaluates the fitted polynomial at x = 0
    return np.linalg.pinv(vander)[0]


def savitzky_golay(sequence, window: int = DEFAULT_WINDOW, order: int = DEFAULT_ORDER) -> np.ndarray:
    """Smooth each channel of ``(F,)`` or ``(F, ...)`` data; edges use mirror padding."""
    seq = np.asarray(sequence, dtype=float)
    coeffs = savgol_coefficients(window, order)
    if seq.shape[0] < window:
        raise ConfigurationError(f"sequence of {seq.shape[0]} frames is shorter than window {window}", field="window")
    flat = seq.reshape(seq.shape[0], -1)
    half = window // 2
    padded = np.pad(flat, ((half, half), (0, 0)), mode="reflect")
    out = np.zeros_like(flat)
    for k, c in enumerate(coeffs):
        out += c * padded[k : k + flat.shape[0]]
    return out.reshape(seq.shape)


def roughness(positions: np.ndarray, window: int = DEFAULT_WINDOW, order: int = DEFAULT_ORDER) -> float:
    """Total absolute deviation of a trajectory from its smoothed version."""
    return float(np.abs(positions - savitzky_golay(positions, window, order)).sum())


def smoothness(agent_clip: MotionClip, ref_clip: MotionClip, skeleton: Skeleton | None = None,
               window: int = DEFAULT_WINDOW, order: int = DEFAULT_ORDER,
               joint_set: Sequence[str] = DESCRIPTION_JOINTS) -> float:
    """``100 * min(1, D(ref) / D(agent))`` with D the joint-position roughness; in [0, 100]."""
    skeleton = skeleton or canonical_skeleton()
    d_ref = roughness(relative_positions(skeleton, ref_clip.frames, joint_set), window, order)
    d_agent = roughness(relative_positions(skeleton, agent_clip.frames, joint_set), window, order)
    return 100.0 * min(1.0, (d_ref + SMOOTHNESS_EPS) / (d_agent + SMOOTHNESS_EPS))


# ---------------------------------------------------------------------- agent evaluation


@dataclass
class ScoreReport:
    clip_ids: list[str] = field(default_factory=list)
    behaviours: list[str] = field(default_factory=list)
    scores: list[float] = field(default_factory=list)
    smoothness: list[float] = field(default_factory=list)
    error_traces: list[np.ndarray] = field(default_factory=list)

    def add(self, clip: MotionClip, score_value: float, smooth_value: float, trace: np.ndarray) -> None:
        self.clip_ids.append(clip.id)
        self.behaviours.append(clip.behaviour)
        self.scores.append(float(score_value))
        self.smoothness.append(float(smooth_value))
        self.error_traces.append(np.asarray(trace))

    @property
    def mean_score(self) -> float:
        return float(np.mean(self.scores)) if self.scores else float("nan")

    @property
    def mean_smoothness(self) -> float:
        return float(np.mean(self.smoothness)) if self.smoothness else float("nan")

    def by_behaviour(self) -> dict[str, tuple[float, float, int]]:
        """``{behaviour: (mean score, mean smoothness, n_clips)}``."""
        out = {}
        for b in sorted(set(self.behaviours)):
            idx = [i for i, x in enumerate(self.behaviours) if x == b]
            out[b] = (float(np.mean([self.scores[i] for i in idx])),
                      float(np.mean([self.smoothness[i] for i in idx])), len(idx))
        return out


def agent_clip_for(agent, ref_clip: MotionClip, skeleton: Skeleton, n_frames: int | None = None) -> MotionClip:
    """Deterministic rollout imitating ``ref_clip``, optionally time-warped to ``n_frames``."""
    from .agent import rollout

    ep = rollout(agent, objective_sequence(ref_clip, n_frames), skeleton, "deterministic")
    return ref_clip.with_frames(action_to_rotations(skeleton, ep.a), id=f"{ref_clip.id}-agent")


def evaluate_agent(agent, clips: Sequence[MotionClip], skeleton: Skeleton | None = None,
                   window: int = DEFAULT_WINDOW, order: int = DEFAULT_ORDER,
                   joint_set: Sequence[str] = DESCRIPTION_JOINTS) -> ScoreReport:
    skeleton = skeleton or canonical_skeleton()
    report = ScoreReport()
    for ref in clips:
        out = agent_clip_for(agent, ref, skeleton)
        trace = error_trace(skeleton, out.frames, ref.frames, joint_set)
        report.add(ref, 100.0 - total_error(trace) / out.n_frames,
                   smoothness(out, ref, skeleton, window, order, joint_set), trace)
    return report

