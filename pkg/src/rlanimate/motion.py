"""Motion clips: native JSON I/O, a BVH subset, synthetic gestures and dataset splits."""

from __future__ import annotations

import json
import math
import re
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import (
    ConfigurationError,
    ContractViolation,
    GenerationError,
    MappingError,
    ParseError,
    ValidationError,
)
from .kinematics import (
    Pose,
    Skeleton,
    canonical_skeleton,
    joint_rotation_slice,
    matrix_to_euler_xyz,
)

BEHAVIOURS = ("point", "wave")
ARMS = ("left", "right")

DEFAULT_N_FRAMES = 60
DEFAULT_FPS = 30.0

# synthetic-gesture constants
POINT_RISE = 0.35  # fraction of the clip spent raising (and lowering) the arm
WAVE_RISE = 0.25
WAVE_SHOULDER = (1.35, -1.15, 0.0)  # right arm; the left arm mirrors y and z
WAVE_ELBOW = 1.5
WAVE_ELBOW_AMPLITUDE = 0.3
WAVE_WRIST_AMPLITUDE = 0.6
WAVE_PERIOD_FRAMES = 16
GAZE_FOLLOW = 0.5  # fraction of the target direction the head turns towards

# target cone sampled for pointing clips, degrees; azimuth is measured towards the pointing arm's side
POINT_AZIMUTH_RANGE = (-10.0, 50.0)
POINT_ELEVATION_RANGE = (-20.0, 20.0)
WAVE_EXAGGERATION_RANGE = (0.1, 1.0)


@dataclass(frozen=True, eq=False)
class MotionClip:
    id: str
    behaviour: str
    arm: str
    attributes: tuple[float, float, float]
    fps: float
    frames: np.ndarray  # (F, action_dim) joint angles in radians

    def __post_init__(self):
        frames = np.array(self.frames, dtype=float)
        if frames.ndim != 2 or frames.shape[0] == 0:
            raise ValidationError(f"clip {self.id!r}: frames must be a non-empty (F, D) array")
        if not np.all(np.isfinite(frames)):
            raise ValidationError(f"clip {self.id!r}: non-finite joint angles")
        frames.flags.writeable = False
        object.__setattr__(self, "frames", frames)
        attrs = tuple(float(a) for a in self.attributes)
        object.__setattr__(self, "attributes", attrs)
        if self.behaviour not in BEHAVIOURS:
            raise ValidationError(f"clip {self.id!r}: behaviour must be one of {BEHAVIOURS}")
        if self.arm not in ARMS:
            raise ValidationError(f"clip {self.id!r}: arm must be one of {ARMS}")
        if not self.fps > 0:
            raise ValidationError(f"clip {self.id!r}: fps must be positive")
        if len(attrs) != 3:
            raise ValidationError(f"clip {self.id!r}: attributes must have 3 components")
        if self.behaviour == "point":
            if abs(math.sqrt(sum(a * a for a in attrs)) - 1.0) > 1e-6:
                raise ValidationError(f"clip {self.id!r}: point target must be a unit vector")
        elif not (attrs[0] == attrs[1] == attrs[2] and 0.0 <= attrs[0] <= 1.0):
            raise ValidationError(f"clip {self.id!r}: wave attributes must repeat one exaggeration in [0, 1]")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def pose(self, t: int) -> Pose:
        return Pose(self.frames[t])

    def check_limits(self, skeleton: Skeleton) -> None:
        if self.frames.shape[1] != skeleton.action_dim:
            raise ContractViolation(f"clip {self.id!r} has {self.frames.shape[1]} channels, skeleton needs {skeleton.action_dim}")
        bad = (self.frames < skeleton.lower) | (self.frames > skeleton.upper)
        if bad.any():
            t, k = np.argwhere(bad)[0]
            raise ValidationError(f"clip {self.id!r} frame {t}: joint {skeleton.axis_name(int(k))} outside limits")

    def with_frames(self, frames: np.ndarray, id: str | None = None) -> "MotionClip":
        return MotionClip(id or self.id, self.behaviour, self.arm, self.attributes, self.fps, frames)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "behaviour": self.behaviour,
            "arm": self.arm,
            "attributes": list(self.attributes),
            "fps": self.fps,
            "frames": self.frames.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MotionClip":
        return cls(doc["id"], doc["behaviour"], doc["arm"], tuple(doc["attributes"]), float(doc["fps"]), np.asarray(doc["frames"], dtype=float))


def save_clip(clip: MotionClip, path) -> None:
    with open(path, "w") as f:
        json.dump(clip.to_dict(), f)


def load_clip(path) -> MotionClip:
    with open(path) as f:
        return MotionClip.from_dict(json.load(f))


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[MotionClip, ...]
    test: tuple[MotionClip, ...]

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "test", tuple(self.test))
        overlap = {c.id for c in self.train} & {c.id for c in self.test}
        if overlap:
            raise ValidationError(f"train and test share clip ids: {sorted(overlap)}")

    def by_behaviour(self, behaviour: str, split: str = "train") -> list[MotionClip]:
        return [c for c in getattr(self, split) if c.behaviour == behaviour]


# --------------------------------------------------------------------------- synthesis


def _ease(u):
    return 0.5 - 0.5 * np.cos(np.pi * np.clip(u, 0.0, 1.0))


def _envelope(n_frames: int, rise: float) -> np.ndarray:
    """Raise/hold/lower weight: 0 at both ends, exactly 1 across the middle."""
    u = np.arange(n_frames) / (n_frames - 1)
    w = np.ones(n_frames)
    up = u < rise
    down = u > 1.0 - rise
    w[up] = _ease(u[up] / rise)
    w[down] = _ease((1.0 - u[down]) / rise)
    return w


def _mirror(angles, arm: str):
    """Euler angles authored for the right arm, reflected through the sagittal plane for the left."""
    a, b, c = angles
    return (a, b, c) if arm == "right" else (a, -b, -c)


def _check_arm(arm: str) -> None:
    if arm not in ARMS:
        raise ValidationError(f"arm must be one of {ARMS}, got {arm!r}")


def point_apex_rotations(target, arm: str, skeleton: Skeleton | None = None) -> np.ndarray:
    """Pose whose index finger points along ``target``.

    The shoulder/elbow pair is solved in closed form: the elbow flexes just enough
    to keep the shoulder's forward raise inside its limit, and the shoulder's
    X/Y angles then rotate the bent forearm onto the target. The head turns part
    of the way towards the target.
    """
    skeleton = skeleton or canonical_skeleton()
    _check_arm(arm)
    t = np.asarray(target, dtype=float)
    if t.shape != (3,) or abs(np.linalg.norm(t) - 1.0) > 1e-6:
        raise ValidationError("target must be a unit 3-vector")
    t = t / np.linalg.norm(t)
    # solve for the right arm in a mirrored frame
    tx, ty, tz = (t[0], t[1], t[2]) if arm == "right" else (-t[0], t[1], t[2])
    side = arm[0]

    elbow = max(0.2, math.atan2(tz, ty) + 0.1)
    ce, se = math.cos(elbow), math.sin(elbow)
    if abs(tx) > ce:
        raise GenerationError(f"target {t.tolist()} outside the reachable cone of {side}_shoulder", joint=f"{side}_shoulder")
    b = math.asin(-tx / ce)
    cb = math.cos(b)
    a = math.atan2(tz, ty) - math.atan2(-cb * ce, se)
    a = math.atan2(math.sin(a), math.cos(a))

    rot = np.zeros(skeleton.action_dim)
    rot[joint_rotation_slice(skeleton, f"{side}_shoulder")] = _mirror((a, b, 0.0), arm)
    rot[joint_rotation_slice(skeleton, f"{side}_elbow").start] = elbow
    head = (
        GAZE_FOLLOW * math.atan2(t[2], math.hypot(t[0], t[1])),
        0.0,
        -GAZE_FOLLOW * math.atan2(t[0], t[1]),
    )
    rot[joint_rotation_slice(skeleton, "head")] = head

    bad = (rot < skeleton.lower) | (rot > skeleton.upper)
    if bad.any():
        k = int(np.argwhere(bad)[0][0])
        name = skeleton.axis_name(k)
        raise GenerationError(f"target {t.tolist()} needs {name}={rot[k]:.4f} outside its limits", joint=name.split(".")[0])
    return rot


def synth_point_clip(target, arm: str, n_frames: int = DEFAULT_N_FRAMES, fps: float = DEFAULT_FPS,
                     clip_id: str | None = None, skeleton: Skeleton | None = None) -> MotionClip:
    """Rest -> aim at ``target`` -> hold -> rest, with cosine easing."""
    if n_frames < 8:
        raise ContractViolation("n_frames must be at least 8")
    skeleton = skeleton or canonical_skeleton()
    apex = point_apex_rotations(target, arm, skeleton)
    frames = _envelope(n_frames, POINT_RISE)[:, None] * apex[None, :]
    t = np.asarray(target, dtype=float)
    t = t / np.linalg.norm(t)
    clip_id = clip_id or f"point-{arm}-{t[0]:+.3f}{t[1]:+.3f}{t[2]:+.3f}"
    return MotionClip(clip_id, "point", arm, tuple(t), fps, frames)


def _oscillation(n_frames: int, rise: float) -> np.ndarray:
    """Unit sine over a whole number of half periods inside the hold, zero elsewhere.

    Period lengths are multiples of 4 frames so the peaks land exactly on frames.
    """
    j0 = math.ceil(rise * (n_frames - 1))
    j1 = math.floor((1.0 - rise) * (n_frames - 1))
    span = j1 - j0
    period = WAVE_PERIOD_FRAMES
    while period > 4 and span < period:
        period //= 2
    osc = np.zeros(n_frames)
    half_periods = span // (period // 2)
    if half_periods == 0:
        return osc
    k = np.arange(half_periods * (period // 2) + 1)
    osc[j0 : j0 + len(k)] = np.sin(2 * np.pi * k / period)
    return osc


def synth_wave_clip(exaggeration: float, arm: str, n_frames: int = DEFAULT_N_FRAMES, fps: float = DEFAULT_FPS,
                    clip_id: str | None = None, skeleton: Skeleton | None = None) -> MotionClip:
    """Raise the arm, oscillate elbow and wrist with amplitude proportional to ``exaggeration``, lower."""
    if n_frames < 8:
        raise ContractViolation("n_frames must be at least 8")
    if not 0.0 <= exaggeration <= 1.0:
        raise ValidationError("exaggeration must lie in [0, 1]")
    _check_arm(arm)
    skeleton = skeleton or canonical_skeleton()
    side = arm[0]
    raised = np.zeros(skeleton.action_dim)
    raised[joint_rotation_slice(skeleton, f"{side}_shoulder")] = _mirror(WAVE_SHOULDER, arm)
    elbow_k = joint_rotation_slice(skeleton, f"{side}_elbow").start
    wrist_k = joint_rotation_slice(skeleton, f"{side}_wrist").start
    raised[elbow_k] = WAVE_ELBOW

    frames = _envelope(n_frames, WAVE_RISE)[:, None] * raised[None, :]
    osc = _oscillation(n_frames, WAVE_RISE)
    frames[:, elbow_k] += WAVE_ELBOW_AMPLITUDE * exaggeration * osc
    frames[:, wrist_k] += WAVE_WRIST_AMPLITUDE * exaggeration * osc
    frames = np.clip(frames, skeleton.lower, skeleton.upper)
    e = float(exaggeration)
    return MotionClip(clip_id or f"wave-{arm}-{e:.4f}", "wave", arm, (e, e, e), fps, frames)


def target_from_angles(azimuth_deg: float, elevation_deg: float, arm: str) -> np.ndarray:
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    sign = 1.0 if arm == "right" else -1.0
    return np.array([sign * math.cos(el) * math.sin(az), math.cos(el) * math.cos(az), math.sin(el)])


# --------------------------------------------------------------------------- datasets


@dataclass(frozen=True)
class DatasetSpec:
    n_train_point: int = 50
    n_train_wave: int = 50
    n_test_point: int = 6
    n_test_wave: int = 4
    n_frames: int = DEFAULT_N_FRAMES
    fps: float = DEFAULT_FPS
    seed: int = 0
    # parameter draws available per behaviour; defaults to exactly train + test
    pool_point: int | None = None
    pool_wave: int | None = None
    azimuth_range: tuple[float, float] = POINT_AZIMUTH_RANGE
    elevation_range: tuple[float, float] = POINT_ELEVATION_RANGE
    exaggeration_range: tuple[float, float] = WAVE_EXAGGERATION_RANGE

    def __post_init__(self):
        for name in ("n_train_point", "n_train_wave", "n_test_point", "n_test_wave"):
            if getattr(self, name) < 0:
                raise ConfigurationError("must be non-negative", field=name)
        if self.n_train_point + self.n_train_wave <= 0:
            raise ConfigurationError("at least one training clip is required", field="n_train_point")
        if self.n_frames < 8:
            raise ConfigurationError("must be at least 8", field="n_frames")
        if not self.fps > 0:
            raise ConfigurationError("must be positive", field="fps")
        lo, hi = self.exaggeration_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ConfigurationError("must satisfy 0 <= lo <= hi <= 1", field="exaggeration_range")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ConfigurationError(f"unknown fields {sorted(extra)}")
        doc = dict(doc)
        for key in ("azimuth_range", "elevation_range", "exaggeration_range"):
            if key in doc:
                doc[key] = tuple(doc[key])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None


def _arm_split(n: int) -> list[str]:
    # alternate arms so each side gets half (right takes the odd one)
    return [ARMS[(i + 1) % 2] for i in range(n)]


def make_dataset(spec: DatasetSpec, skeleton: Skeleton | None = None) -> DatasetSplit:
    """Generate a reproducible train/test split of synthetic point and wave clips.

    Parameters for each behaviour are drawn i.i.d. from one pool; the first
    ``n_test_*`` draws per arm form the test set, so held-out targets and
    exaggerations never coincide with training values.
    """
    skeleton = skeleton or canonical_skeleton()
    rng = np.random.default_rng(spec.seed)
    train, test = [], []

    for behaviour in BEHAVIOURS:
        n_train = getattr(spec, f"n_train_{behaviour}")
        n_test = getattr(spec, f"n_test_{behaviour}")
        pool = getattr(spec, f"pool_{behaviour}")
        pool = n_train + n_test if pool is None else pool
        if n_train + n_test > pool:
            raise ConfigurationError(
                f"requested {n_train} train + {n_test} test {behaviour} clips but the pool holds {pool}",
                field=f"n_test_{behaviour}",
            )
        arms = _arm_split(n_test) + _arm_split(n_train)
        params = []
        for arm in arms:
            if behaviour == "point":
                az = rng.uniform(*spec.azimuth_range)
                el = rng.uniform(*spec.elevation_range)
                params.append((arm, target_from_angles(az, el, arm)))
            else:
                params.append((arm, float(rng.uniform(*spec.exaggeration_range))))
        for i, (arm, value) in enumerate(params):
            split, k = ("test", i) if i < n_test else ("train", i - n_test)
            clip_id = f"{split}-{behaviour}-{k:03d}"
            if behaviour == "point":
                clip = synth_point_clip(value, arm, spec.n_frames, spec.fps, clip_id, skeleton)
            else:
                clip = synth_wave_clip(value, arm, spec.n_frames, spec.fps, clip_id, skeleton)
            (test if split == "test" else train).append(clip)

    train_values = {c.attributes for c in train}
    if any(c.attributes in train_values for c in test):
        raise ConfigurationError("test parameters collide with training parameters; change the seed", field="seed")
    return DatasetSplit(tuple(train), tuple(test))


def resample_clip(clip: MotionClip, factor: float) -> MotionClip:
    """Time-warp by linear interpolation of joint angles.

    The output has ``floor((n_frames - 1) * factor) + 1`` frames, so the
    interval between the first and last frame scales by ``factor`` and both
    endpoints are kept.
    """
    if not 0.1 <= factor <= 4.0:
        raise ContractViolation("factor must lie in [0.1, 4]")
    n = clip.n_frames
    m = int(math.floor((n - 1) * factor + 1e-9)) + 1
    if m == n:
        return clip
    if n == 1:
        return clip.with_frames(np.repeat(clip.frames, m, axis=0))
    src = np.arange(n)
    dst = np.linspace(0.0, n - 1, m)
    frames = np.stack([np.interp(dst, src, clip.frames[:, k]) for k in range(clip.frames.shape[1])], axis=1)
    frames[0], frames[-1] = clip.frames[0], clip.frames[-1]
    return clip.with_frames(frames)


# --------------------------------------------------------------------------- BVH

_AXES = {"Xrotation": "X", "Yrotation": "Y", "Zrotation": "Z"}
_POSITIONS = {"Xposition", "Yposition", "Zposition"}


@dataclass
class _BvhJoint:
    name: str
    parent: int | None
    offset: tuple[float, float, float]
    channels: list[str] = field(default_factory=list)
    channel_start: int = 0


def _tokenize(lines: Sequence[str], start: int, stop: int):
    for lineno in range(start, stop):
        for tok in re.findall(r"[{}]|[^\s{}]+", lines[lineno]):
            yield tok, lineno + 1


class _Tokens:
    def __init__(self, tokens):
        self.items = list(tokens)
        self.pos = 0

    def peek(self):
        return self.items[self.pos] if self.pos < len(self.items) else (None, self.items[-1][1] if self.items else 1)

    def next(self, expected: str | None = None):
        tok, line = self.peek()
        if tok is None:
            raise ParseError(f"unexpected end of HIERARCHY{f', expected {expected!r}' if expected else ''}", line)
        if expected is not None and tok != expected:
            raise ParseError(f"expected {expected!r}, found {tok!r}", line)
        self.pos += 1
        return tok, line

    def floats(self, n: int):
        out = []
        for _ in range(n):
            tok, line = self.next()
            try:
                out.append(float(tok))
            except ValueError:
                raise ParseError(f"expected a number, found {tok!r}", line) from None
        return out


def _parse_joint(toks: _Tokens, joints: list, parent: int | None, n_channels: list) -> None:
    name, _ = toks.next()
    toks.next("{")
    toks.next("OFFSET")
    offset = tuple(toks.floats(3))
    joint = _BvhJoint(name, parent, offset)
    idx = len(joints)
    joints.append(joint)
    tok, line = toks.peek()
    if tok == "CHANNELS":
        toks.next()
        count_tok, count_line = toks.next()
        try:
            count = int(count_tok)
        except ValueError:
            raise ParseError(f"bad channel count {count_tok!r}", count_line) from None
        for _ in range(count):
            ch, ch_line = toks.next()
            if ch not in _AXES and ch not in _POSITIONS:
                raise ParseError(f"unknown channel {ch!r}", ch_line)
            joint.channels.append(ch)
        joint.channel_start = n_channels[0]
        n_channels[0] += count
    while True:
        tok, line = toks.peek()
        if tok == "}":
            toks.next()
            return
        if tok == "JOINT":
            toks.next()
            _parse_joint(toks, joints, idx, n_channels)
        elif tok == "End":
            toks.next()
            toks.next("Site")
            toks.next("{")
            toks.next("OFFSET")
            toks.floats(3)
            toks.next("}")
        else:
            raise ParseError(f"unexpected token {tok!r} in joint {name!r}", line)


def parse_bvh(text: str, mapping: dict[str, str] | None = None, skeleton: Skeleton | None = None, *,
              behaviour: str = "wave", arm: str = "right", attributes=(0.0, 0.0, 0.0),
              clip_id: str = "bvh") -> MotionClip:
    """Read a BVH document into a clip on ``skeleton``.

    ``mapping`` maps BVH joint names to skeleton joint names (identity by default).
    Rotation channels in any declared order are converted through rotation
    matrices into intrinsic XYZ angles, then clamped to the joint limits.
    BVH joints without a mapping entry are skipped and reported through
    :mod:`warnings`. BVH carries no behaviour metadata, so it is passed in.
    """
    skeleton = skeleton or canonical_skeleton()
    lines = text.splitlines()
    try:
        h = next(i for i, ln in enumerate(lines) if ln.strip())
    except StopIteration:
        raise ParseError("empty document", 1) from None
    if lines[h].strip() != "HIERARCHY":
        raise ParseError("document must start with HIERARCHY", h + 1)
    try:
        m = next(i for i, ln in enumerate(lines) if ln.strip() == "MOTION")
    except StopIteration:
        raise ParseError("missing MOTION section", len(lines)) from None

    toks = _Tokens(_tokenize(lines, h + 1, m))
    tok, line = toks.next()
    if tok != "ROOT":
        raise ParseError(f"expected ROOT, found {tok!r}", line)
    joints: list[_BvhJoint] = []
    n_channels = [0]
    _parse_joint(toks, joints, None, n_channels)
    tok, line = toks.peek()
    if tok is not None:
        raise ParseError(f"unexpected token {tok!r} after the root joint", line)

    def header(i: int, key: str) -> tuple[str, int]:
        while i < len(lines) and not lines[i].strip():
            i += 1
        if i >= len(lines) or not lines[i].strip().startswith(key):
            raise ParseError(f"expected {key!r}", min(i, len(lines) - 1) + 1)
        return lines[i].strip()[len(key):].strip(), i

    frames_txt, i = header(m + 1, "Frames:")
    try:
        n_frames = int(frames_txt)
    except ValueError:
        raise ParseError(f"bad frame count {frames_txt!r}", i + 1) from None
    time_txt, i = header(i + 1, "Frame Time:")
    try:
        frame_time = float(time_txt)
    except ValueError:
        raise ParseError(f"bad frame time {time_txt!r}", i + 1) from None
    if frame_time <= 0:
        raise ParseError("frame time must be positive", i + 1)

    rows = []
    for j in range(i + 1, len(lines)):
        if not lines[j].strip():
            continue
        try:
            values = [float(v) for v in lines[j].split()]
        except ValueError:
            raise ParseError("non-numeric motion data", j + 1) from None
        if len(values) != n_channels[0]:
            raise ParseError(f"expected {n_channels[0]} channel values, found {len(values)}", j + 1)
        rows.append(values)
    if len(rows) != n_frames:
        raise ParseError(f"declared {n_frames} frames but found {len(rows)}", len(lines))
    if n_frames == 0:
        raise ParseError("clip has no frames", i + 1)
    data = np.asarray(rows, dtype=float)

    names = set(skeleton.joint_names)
    if mapping is None:
        mapping = {j.name: j.name for j in joints if j.name in names}
    for bvh_name, target in mapping.items():
        if target not in names:
            raise MappingError(f"BVH joint {bvh_name!r} maps to unknown skeleton joint {target!r}")

    out = np.zeros((n_frames, skeleton.action_dim))
    unmapped = []
    for joint in joints:
        target = mapping.get(joint.name)
        if target is None:
            unmapped.append(joint.name)
            continue
        if not skeleton.joints[skeleton.index(target)].actuated:
            continue
        rot_idx = [k for k, ch in enumerate(joint.channels) if ch in _AXES]
        if not rot_idx:
            continue
        seq = "".join(_AXES[joint.channels[k]] for k in rot_idx)
        cols = [joint.channel_start + k for k in rot_idx]
        mats = Rotation.from_euler(seq, data[:, cols], degrees=True).as_matrix()
        out[:, joint_rotation_slice(skeleton, target)] = matrix_to_euler_xyz(mats)
    if unmapped:
        warnings.warn(f"ignored unmapped BVH joints: {unmapped}", stacklevel=2)
    out = np.clip(out, skeleton.lower, skeleton.upper)
    return MotionClip(clip_id, behaviour, arm, tuple(attributes), 1.0 / frame_time, out)


def write_bvh(clip: MotionClip, skeleton: Skeleton | None = None) -> str:
    """Serialize a clip as BVH using the skeleton's own names, offsets and XYZ channel order."""
    skeleton = skeleton or canonical_skeleton()
    children: dict[int, list[int]] = {i: [] for i in range(len(skeleton.joints))}
    for i, j in enumerate(skeleton.joints):
        if j.parent is not None:
            children[j.parent].append(i)

    out = ["HIERARCHY"]
    order: list[int] = []  # joints that own channels, in file order

    def fmt(v) -> str:
        return " ".join(f"{x:.10g}" for x in v)

    def emit(i: int, depth: int) -> None:
        j = skeleton.joints[i]
        pad = "  " * depth
        if j.parent is not None and not j.actuated and not children[i]:
            out.extend([f"{pad}End Site", f"{pad}{{", f"{pad}  OFFSET {fmt(j.offset)}", f"{pad}}}"])
            return
        out.append(f"{pad}{'ROOT' if j.parent is None else 'JOINT'} {j.name}")
        out.append(f"{pad}{{")
        out.append(f"{pad}  OFFSET {fmt(j.offset)}")
        if j.parent is None:
            out.append(f"{pad}  CHANNELS 6 Xposition Yposition Zposition Xrotation Yrotation Zrotation")
        else:
            out.append(f"{pad}  CHANNELS 3 Xrotation Yrotation Zrotation")
        order.append(i)
        for c in children[i]:
            emit(c, depth + 1)
        out.append(f"{pad}}}")

    emit(0, 0)
    out.append("MOTION")
    out.append(f"Frames: {clip.n_frames}")
    out.append(f"Frame Time: {1.0 / clip.fps:.10g}")
    degrees = np.degrees(clip.frames)
    for t in range(clip.n_frames):
        row = []
        for i in order:
            j = skeleton.joints[i]
            if j.parent is None:
                row.extend(j.offset)
            if j.actuated:
                s = joint_rotation_slice(skeleton, j.name)
                row.extend(degrees[t, s])
            else:
                row.extend((0.0, 0.0, 0.0))
        out.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(out) + "\n"
