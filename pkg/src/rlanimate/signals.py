"""Objective and description signals: the two halves of the agent's state.

Objective (6 floats)::

    [type, arm, attr1, attr2, attr3, time]
    type  1.0 point | 2.0 wave
    arm   0.0 left  | 1.0 right
    attrs unit target vector (point) or the exaggeration repeated three times (wave)
    time  t / N

Description (42 floats): four effector unit directions followed by ten
joint positions relative to the root, in the order of ``EFFECTORS`` and
``DESCRIPTION_JOINTS``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ContractViolation, ValidationError
from .kinematics import PoseGeometry, canonical_skeleton, forward_kinematics, rest_rotations
from .motion import MotionClip

SIGNAL_LAYOUT_VERSION = "1"

OBJECTIVE_DIM = 6
BEHAVIOUR_CODES = {"point": 1.0, "wave": 2.0}
ARM_CODES = {"left": 0.0, "right": 1.0}

EFFECTORS = ("l_eye", "r_eye", "l_index", "r_index")
DESCRIPTION_JOINTS = (
    "l_collar", "r_collar",
    "l_shoulder", "r_shoulder",
    "l_elbow", "r_elbow",
    "l_wrist", "r_wrist",
    "l_index_base", "r_index_base",
)
EFFECTOR_DIM = 3 * len(EFFECTORS)
DESCRIPTION_DIM = EFFECTOR_DIM + 3 * len(DESCRIPTION_JOINTS)
ROOT_JOINT = "root"


def signal_layout() -> dict:
    """Machine-readable layout, embedded in checkpoints and manifests."""
    return {
        "version": SIGNAL_LAYOUT_VERSION,
        "objective": ["type", "arm", "attr1", "attr2", "attr3", "time"],
        "behaviour_codes": BEHAVIOUR_CODES,
        "arm_codes": ARM_CODES,
        "effectors": list(EFFECTORS),
        "joints": list(DESCRIPTION_JOINTS),
        "root": ROOT_JOINT,
    }


def objective_for(clip: MotionClip, t: int, n_frames_override: int | None = None) -> np.ndarray:
    n = clip.n_frames if n_frames_override is None else int(n_frames_override)
    if n < 1 or not 0 <= t < n:
        raise ContractViolation(f"frame index {t} outside [0, {n})")
    return np.array(
        [BEHAVIOUR_CODES[clip.behaviour], ARM_CODES[clip.arm], *clip.attributes, t / n],
        dtype=float,
    )


def objective_sequence(clip: MotionClip, n_frames_override: int | None = None) -> np.ndarray:
    n = clip.n_frames if n_frames_override is None else int(n_frames_override)
    return np.stack([objective_for(clip, t, n) for t in range(n)])


def check_objective(o) -> None:
    o = np.asarray(o, dtype=float)
    if o.shape != (OBJECTIVE_DIM,):
        raise ContractViolation(f"objective must have {OBJECTIVE_DIM} components")
    if o[0] not in (1.0, 2.0) or o[1] not in (0.0, 1.0) or not 0.0 <= o[5] <= 1.0:
        raise ValidationError(f"malformed objective {o.tolist()}")
    if o[0] == 1.0 and abs(np.linalg.norm(o[2:5]) - 1.0) > 1e-6:
        raise ValidationError("point objective needs a unit target vector")
    if o[0] == 2.0 and not (o[2] == o[3] == o[4] and 0.0 <= o[2] <= 1.0):
        raise ValidationError("wave objective needs one repeated exaggeration in [0, 1]")


def description_of(geometry: PoseGeometry) -> np.ndarray:
    root = geometry.position(ROOT_JOINT)
    parts = [geometry.direction(e) for e in EFFECTORS]
    parts += [geometry.position(j) - root for j in DESCRIPTION_JOINTS]
    return np.concatenate(parts)


def description_batch(joint_positions: np.ndarray, effector_directions: np.ndarray,
                      joint_names, effector_names) -> np.ndarray:
    """Vectorized :func:`description_of` over ``(F, J, 3)`` / ``(F, E, 3)`` arrays."""
    e_idx = [effector_names.index(e) for e in EFFECTORS]
    j_idx = [joint_names.index(j) for j in DESCRIPTION_JOINTS]
    root = joint_positions[:, joint_names.index(ROOT_JOINT)]
    rel = joint_positions[:, j_idx] - root[:, None, :]
    n = joint_positions.shape[0]
    return np.concatenate([effector_directions[:, e_idx].reshape(n, -1), rel.reshape(n, -1)], axis=1)


@lru_cache(maxsize=1)
def rest_description() -> np.ndarray:
    sk = canonical_skeleton()
    d = description_of(forward_kinematics(sk, rest_rotations(sk)))
    d.flags.writeable = False
    return d


def rest_effector_directions() -> np.ndarray:
    return rest_description()[:EFFECTOR_DIM].reshape(len(EFFECTORS), 3)


def renormalize_description(raw) -> np.ndarray:
    """Scale each effector block to unit length; zero blocks fall back to the rest direction."""
    raw = np.asarray(raw, dtype=float)
    if raw.shape[-1] != DESCRIPTION_DIM:
        raise ContractViolation(f"description must have {DESCRIPTION_DIM} components")
    if not np.all(np.isfinite(raw)):
        raise ValidationError("description must be finite")
    out = raw.copy()
    blocks = out[..., :EFFECTOR_DIM].reshape(raw.shape[:-1] + (len(EFFECTORS), 3))
    norms = np.linalg.norm(blocks, axis=-1, keepdims=True)
    zero = norms == 0.0
    blocks = np.where(zero, rest_effector_directions(), blocks / np.where(zero, 1.0, norms))
    out[..., :EFFECTOR_DIM] = blocks.reshape(raw.shape[:-1] + (EFFECTOR_DIM,))
    return out
