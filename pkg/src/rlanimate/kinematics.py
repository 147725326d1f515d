"""Skeleton definition and forward kinematics.

Coordinates are right-handed with +x to the character's right, +y forward and
+z up. Lengths are in meters, angles in radians. Each actuated joint carries
three intrinsic XYZ Euler angles, so its local rotation is ``Rx(a) @ Ry(b) @ Rz(c)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .errors import ContractViolation, ValidationError


@dataclass(frozen=True)
class Joint:
    name: str
    parent: int | None
    offset: tuple[float, float, float]
    # one (min, max) pair per Euler axis; None marks a joint that is not actuated
    limits: tuple[tuple[float, float], ...] | None = None

    @property
    def actuated(self) -> bool:
        return self.limits is not None


@dataclass(frozen=True)
class EffectorAnchor:
    name: str
    joint: int
    direction: tuple[float, float, float]


@dataclass(frozen=True, eq=False)
class Skeleton:
    """Immutable joint hierarchy in topological order."""

    joints: tuple[Joint, ...]
    effector_anchors: tuple[EffectorAnchor, ...] = ()
    name: str = "skeleton"
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        roots = [i for i, j in enumerate(self.joints) if j.parent is None]
        if len(roots) != 1:
            raise ValidationError(f"skeleton must have exactly one root joint, found {len(roots)}")
        for i, j in enumerate(self.joints):
            if j.parent is not None and not 0 <= j.parent < i:
                raise ValidationError(f"joint {j.name!r}: parent index {j.parent} must precede index {i}")
            if j.limits is not None:
                if len(j.limits) != 3:
                    raise ValidationError(f"joint {j.name!r}: expected 3 limit pairs")
                for lo, hi in j.limits:
                    if not (-math.pi <= lo < hi <= math.pi):
                        raise ValidationError(f"joint {j.name!r}: invalid limit [{lo}, {hi}]")
        index = {j.name: i for i, j in enumerate(self.joints)}
        if len(index) != len(self.joints):
            raise ValidationError("joint names must be unique")
        for a in self.effector_anchors:
            if not 0 <= a.joint < len(self.joints):
                raise ValidationError(f"anchor {a.name!r} refers to unknown joint {a.joint}")
            if np.linalg.norm(a.direction) == 0.0:
                raise ValidationError(f"anchor {a.name!r} has a zero direction")
        object.__setattr__(self, "_index", index)
        actuated = tuple(i for i, j in enumerate(self.joints) if j.actuated)
        limits = np.array([lim for i in actuated for lim in self.joints[i].limits], dtype=float).reshape(-1, 2)
        object.__setattr__(self, "actuated_indices", actuated)
        object.__setattr__(self, "lower", limits[:, 0].copy())
        object.__setattr__(self, "upper", limits[:, 1].copy())
        self.lower.flags.writeable = False
        self.upper.flags.writeable = False

    @property
    def joint_names(self) -> tuple[str, ...]:
        return tuple(j.name for j in self.joints)

    @property
    def actuated_names(self) -> tuple[str, ...]:
        return tuple(self.joints[i].name for i in self.actuated_indices)

    @property
    def action_dim(self) -> int:
        return 3 * len(self.actuated_indices)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown joint {name!r}") from None

    def axis_name(self, k: int) -> str:
        """Human-readable name of flat rotation component ``k`` (e.g. ``r_elbow.x``)."""
        return f"{self.joints[self.actuated_indices[k // 3]].name}.{'xyz'[k % 3]}"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "joints": [
                {
                    "name": j.name,
                    "parent": j.parent,
                    "offset": list(j.offset),
                    "limits": None if j.limits is None else [list(p) for p in j.limits],
                }
                for j in self.joints
            ],
            "effector_anchors": [
                {"name": a.name, "joint": self.joints[a.joint].name, "direction": list(a.direction)}
                for a in self.effector_anchors
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Skeleton":
        joints = []
        names = [j["name"] for j in doc["joints"]]
        for j in doc["joints"]:
            parent = j.get("parent")
            if isinstance(parent, str):
                parent = names.index(parent)
            limits = j.get("limits")
            joints.append(
                Joint(
                    name=j["name"],
                    parent=parent,
                    offset=tuple(float(v) for v in j["offset"]),
                    limits=None if limits is None else tuple((float(lo), float(hi)) for lo, hi in limits),
                )
            )
        anchors = []
        for a in doc.get("effector_anchors", []):
            joint = a["joint"]
            if isinstance(joint, str):
                if joint not in names:
                    raise ValidationError(f"anchor {a['name']!r} refers to unknown joint {joint!r}")
                joint = names.index(joint)
            anchors.append(EffectorAnchor(a["name"], int(joint), tuple(float(v) for v in a["direction"])))
        return cls(tuple(joints), tuple(anchors), doc.get("name", "skeleton"))


def load_skeleton(path) -> Skeleton:
    with open(path) as f:
        return Skeleton.from_dict(json.load(f))


_CANONICAL: Skeleton | None = None


def canonical_skeleton() -> Skeleton:
    """The bundled 18-joint upper-body skeleton (15 actuated joints, 45 action dims)."""
    global _CANONICAL
    if _CANONICAL is None:
        text = resources.files("rlanimate.data").joinpath("canonical_skeleton.json").read_text()
        _CANONICAL = Skeleton.from_dict(json.loads(text))
    return _CANONICAL


@dataclass(frozen=True)
class Pose:
    """Flat per-actuated-joint XYZ Euler angles, shape ``(3 * n_actuated,)``."""

    rotations: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotations, dtype=float)
        r.flags.writeable = False
        object.__setattr__(self, "rotations", r)


@dataclass(frozen=True)
class PoseGeometry:
    joint_names: tuple[str, ...]
    joint_positions: np.ndarray  # (J, 3) world frame
    effector_names: tuple[str, ...]
    effector_directions: np.ndarray  # (E, 3), unit length

    def position(self, name: str) -> np.ndarray:
        return self.joint_positions[self.joint_names.index(name)]

    def direction(self, name: str) -> np.ndarray:
        return self.effector_directions[self.effector_names.index(name)]


def euler_xyz_to_matrix(angles: np.ndarray) -> np.ndarray:
    """Intrinsic XYZ Euler angles ``(..., 3)`` to rotation matrices ``(..., 3, 3)``."""
    angles = np.asarray(angles, dtype=float)
    ca, cb, cc = np.cos(angles[..., 0]), np.cos(angles[..., 1]), np.cos(angles[..., 2])
    sa, sb, sc = np.sin(angles[..., 0]), np.sin(angles[..., 1]), np.sin(angles[..., 2])
    m = np.empty(angles.shape[:-1] + (3, 3))
    m[..., 0, 0] = cb * cc
    m[..., 0, 1] = -cb * sc
    m[..., 0, 2] = sb
    m[..., 1, 0] = sa * sb * cc + ca * sc
    m[..., 1, 1] = -sa * sb * sc + ca * cc
    m[..., 1, 2] = -sa * cb
    m[..., 2, 0] = -ca * sb * cc + sa * sc
    m[..., 2, 1] = ca * sb * sc + sa * cc
    m[..., 2, 2] = ca * cb
    return m


def matrix_to_euler_xyz(m: np.ndarray) -> np.ndarray:
    """Inverse of :func:`euler_xyz_to_matrix` on the branch with the middle angle in [-pi/2, pi/2]."""
    m = np.asarray(m, dtype=float)
    b = np.arcsin(np.clip(m[..., 0, 2], -1.0, 1.0))
    a = np.arctan2(-m[..., 1, 2], m[..., 2, 2])
    c = np.arctan2(-m[..., 0, 1], m[..., 0, 0])
    # gimbal lock: only a + c (or a - c) is defined, put it all on the first axis
    locked = np.hypot(m[..., 0, 0], m[..., 0, 1]) < 1e-9
    a = np.where(locked, np.arctan2(m[..., 2, 1], m[..., 1, 1]), a)
    c = np.where(locked, 0.0, c)
    return np.stack([a, b, c], axis=-1)


def _check_rotations(skeleton: Skeleton, rotations: np.ndarray) -> np.ndarray:
    rotations = np.asarray(rotations, dtype=float)
    if rotations.shape[-1] != skeleton.action_dim:
        raise ContractViolation(
            f"expected {skeleton.action_dim} rotation components, got {rotations.shape[-1]}"
        )
    bad = (rotations < skeleton.lower) | (rotations > skeleton.upper) | ~np.isfinite(rotations)
    if bad.any():
        k = int(np.argwhere(bad)[0][-1])
        raise ValidationError(
            f"joint {skeleton.axis_name(k)}: angle outside [{skeleton.lower[k]}, {skeleton.upper[k]}]"
        )
    return rotations


def forward_kinematics_batch(skeleton: Skeleton, rotations: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """FK for a stack of poses ``(F, action_dim)``.

    Returns world joint positions ``(F, J, 3)`` and unit effector directions ``(F, E, 3)``.
    """
    rotations = _check_rotations(skeleton, np.atleast_2d(rotations))
    n = rotations.shape[0]
    local = np.broadcast_to(np.eye(3), (n, len(skeleton.joints), 3, 3)).copy()
    local[:, list(skeleton.actuated_indices)] = euler_xyz_to_matrix(rotations.reshape(n, -1, 3))

    world_rot = np.empty_like(local)
    pos = np.empty((n, len(skeleton.joints), 3))
    for i, joint in enumerate(skeleton.joints):
        offset = np.asarray(joint.offset)
        if joint.parent is None:
            world_rot[:, i] = local[:, i]
            pos[:, i] = offset
        else:
            p = joint.parent
            world_rot[:, i] = world_rot[:, p] @ local[:, i]
            pos[:, i] = pos[:, p] + world_rot[:, p] @ offset

    if skeleton.effector_anchors:
        dirs = np.stack(
            [world_rot[:, a.joint] @ np.asarray(a.direction) for a in skeleton.effector_anchors], axis=1
        )
        dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    else:
        dirs = np.zeros((n, 0, 3))
    return pos, dirs


def forward_kinematics(skeleton: Skeleton, pose: Pose | np.ndarray) -> PoseGeometry:
    rotations = pose.rotations if isinstance(pose, Pose) else np.asarray(pose, dtype=float)
    if rotations.ndim != 1:
        raise ContractViolation("forward_kinematics takes a single pose; use forward_kinematics_batch")
    pos, dirs = forward_kinematics_batch(skeleton, rotations)
    return PoseGeometry(
        skeleton.joint_names,
        pos[0],
        tuple(a.name for a in skeleton.effector_anchors),
        dirs[0],
    )


def clamp_to_limits(skeleton: Skeleton, raw_rotations) -> Pose:
    raw = np.asarray(raw_rotations, dtype=float)
    if raw.shape != (skeleton.action_dim,):
        raise ContractViolation(f"expected shape ({skeleton.action_dim},), got {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise ValidationError("rotations must be finite")
    return Pose(np.clip(raw, skeleton.lower, skeleton.upper))


def action_to_pose(skeleton: Skeleton, unit_action) -> Pose:
    """Map a unit action in [0, 1]^D affinely onto the joint limits."""
    return Pose(action_to_rotations(skeleton, unit_action))


def action_to_rotations(skeleton: Skeleton, unit_action) -> np.ndarray:
    u = np.asarray(unit_action, dtype=float)
    if u.shape[-1] != skeleton.action_dim:
        raise ContractViolation(f"expected {skeleton.action_dim} action components, got {u.shape[-1]}")
    if not np.all((u >= 0.0) & (u <= 1.0)):
        raise ValidationError("unit action components must lie in [0, 1]")
    # clip guards the last ulp at the upper endpoint
    return np.clip(skeleton.lower + u * (skeleton.upper - skeleton.lower), skeleton.lower, skeleton.upper)


def rotations_to_action(skeleton: Skeleton, rotations) -> np.ndarray:
    """Inverse of :func:`action_to_rotations`."""
    r = np.asarray(rotations, dtype=float)
    return (r - skeleton.lower) / (skeleton.upper - skeleton.lower)


def rest_rotations(skeleton: Skeleton) -> np.ndarray:
    return np.clip(np.zeros(skeleton.action_dim), skeleton.lower, skeleton.upper)


def joint_rotation_slice(skeleton: Skeleton, name: str) -> slice:
    """Slice of the flat rotation vector holding ``name``'s three angles."""
    k = skeleton.actuated_indices.index(skeleton.index(name))
    return slice(3 * k, 3 * k + 3)

