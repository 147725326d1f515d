"""Portrayal, behaviour and animation models, plus rollouts and checkpoints.

The behaviour model keeps two latents: a deterministic task state ``h``
updated from objectives, and a behaviour state with a deterministic feature
``b_det`` and a diagonal-Gaussian sample ``b``. The animation model maps
``(h, b)`` to a Beta policy over unit actions.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .episodes import EpisodeRecord
from .errors import ConfigurationError, ContractViolation, NumericFault, VersionMismatch
from .kinematics import (
    Skeleton,
    action_to_rotations,
    canonical_skeleton,
    forward_kinematics_batch,
    rest_rotations,
    rotations_to_action,
)
from .signals import (
    DESCRIPTION_DIM,
    EFFECTOR_DIM,
    EFFECTORS,
    OBJECTIVE_DIM,
    SIGNAL_LAYOUT_VERSION,
    description_batch,
    rest_description,
    rest_effector_directions,
)

VARIANTS = ("full", "single_state", "single_dynamics_space", "supervised_loss")
ACTIVATIONS = {"elu": nn.ELU, "silu": nn.SiLU, "tanh": nn.Tanh}
DTYPE = torch.float64


@dataclass(frozen=True)
class AgentConfig:
    h_dim: int = 64
    b_det_dim: int = 64
    b_stoch_dim: int = 16
    portrayal_hidden_dim: int = 128
    decoder_hidden_dim: int = 128
    policy_hidden_dim: int = 128
    min_stddev: float = 0.01
    seed: int = 0
    # which network wiring to build; the non-"full" values are the ablation controls
    variant: str = "full"
    # hidden-layer nonlinearity of every feed-forward head
    activation: str = "elu"
    action_dim: int = 45

    def __post_init__(self):
        for name in ("h_dim", "b_det_dim", "b_stoch_dim", "portrayal_hidden_dim",
                     "decoder_hidden_dim", "policy_hidden_dim", "action_dim"):
            if getattr(self, name) <= 0:
                raise ConfigurationError("must be positive", field=name)
        if not self.min_stddev > 0:
            raise ConfigurationError("must be positive", field="min_stddev")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"must be one of {VARIANTS}", field="variant")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"must be one of {tuple(ACTIVATIONS)}", field="activation")

    @property
    def merged(self) -> bool:
        return self.variant == "single_dynamics_space"

    @property
    def det_dim(self) -> int:
        """Width of the deterministic state the policy and decoder see."""
        return self.h_dim + self.b_det_dim if self.merged else self.h_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "AgentConfig":
        extra = set(doc) - set(cls.__dataclass_fields__)
        if extra:
            raise ConfigurationError(f"unknown fields {sorted(extra)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None


class Gaussian(NamedTuple):
    mean: torch.Tensor
    std: torch.Tensor


class BetaPolicyOutput(NamedTuple):
    alpha: torch.Tensor
    beta: torch.Tensor

    @property
    def mean(self) -> torch.Tensor:
        return self.alpha / (self.alpha + self.beta)

    @property
    def mode(self) -> torch.Tensor:
        return (self.alpha - 1.0) / (self.alpha + self.beta - 2.0)


class LatentState(NamedTuple):
    """Recurrent state carried between steps (batch-major tensors)."""

    portrayal: torch.Tensor
    h: torch.Tensor
    b_sample: torch.Tensor
    b_mean: torch.Tensor
    b_stddev: torch.Tensor
    b_det: torch.Tensor


class StepOutput(NamedTuple):
    state: LatentState
    d_hat: torch.Tensor | None
    prior: Gaussian
    posterior: Gaussian
    policy: BetaPolicyOutput


def _check(x: torch.Tensor, name: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise NumericFault("non-finite activations", where=name)
    return x


def _mlp(sizes: list[int], activation: str = "elu") -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(ACTIVATIONS[activation]())
    return nn.Sequential(*layers)


def renormalize_description_t(raw: torch.Tensor) -> torch.Tensor:
    """Differentiable per-block effector renormalization (zero blocks -> rest direction)."""
    blocks = raw[..., :EFFECTOR_DIM].reshape(raw.shape[:-1] + (len(EFFECTORS), 3))
    norms = blocks.norm(dim=-1, keepdim=True)
    zero = norms == 0.0
    rest = torch.tensor(rest_effector_directions(), dtype=raw.dtype)
    unit = torch.where(zero, rest, blocks / torch.where(zero, torch.ones_like(norms), norms))
    return torch.cat([unit.reshape(raw.shape[:-1] + (EFFECTOR_DIM,)), raw[..., EFFECTOR_DIM:]], dim=-1)


class Agent(nn.Module):
    """All learnable functions of the agent. Parameters are float64."""

    def __init__(self, config: AgentConfig):
        super().__init__()
        self.config = config
        c = config
        torch_gen_state = torch.random.get_rng_state()
        torch.manual_seed(c.seed)
        try:
            self.portrayal_cell = nn.GRUCell(OBJECTIVE_DIM, c.portrayal_hidden_dim)
            self.portrayal_head = _mlp([c.portrayal_hidden_dim, c.portrayal_hidden_dim, DESCRIPTION_DIM], c.activation)
            if c.merged:
                self.dynamics_embed = _mlp([OBJECTIVE_DIM + c.b_stoch_dim + c.action_dim, c.det_dim, c.det_dim], c.activation)
                self.dynamics_cell = nn.GRUCell(c.det_dim, c.det_dim)
                feat = c.det_dim
            else:
                self.task_cell = nn.GRUCell(OBJECTIVE_DIM, c.h_dim)
                self.behaviour_embed = _mlp([c.h_dim + c.b_stoch_dim + c.action_dim, c.b_det_dim, c.b_det_dim], c.activation)
                self.behaviour_cell = nn.GRUCell(c.b_det_dim, c.b_det_dim)
                feat = c.b_det_dim
            self.prior_head = _mlp([feat, feat, 2 * c.b_stoch_dim], c.activation)
            self.posterior_head = _mlp([feat + DESCRIPTION_DIM, feat, 2 * c.b_stoch_dim], c.activation)
            self.decoder = _mlp([c.det_dim + c.b_stoch_dim, c.decoder_hidden_dim, c.decoder_hidden_dim, DESCRIPTION_DIM], c.activation)
            self.policy = _mlp([c.det_dim + c.b_stoch_dim, c.policy_hidden_dim, c.policy_hidden_dim, 2 * c.action_dim], c.activation)
        finally:
            torch.random.set_rng_state(torch_gen_state)
        self.to(DTYPE)

    # ------------------------------------------------------------------ components

    def initial_state(self, batch: int = 1) -> LatentState:
        c = self.config
        z = lambda n: torch.zeros(batch, n, dtype=DTYPE)  # noqa: E731
        feat = c.det_dim if c.merged else c.b_det_dim
        return LatentState(z(c.portrayal_hidden_dim), z(c.det_dim), z(c.b_stoch_dim),
                           z(c.b_stoch_dim), torch.ones(batch, c.b_stoch_dim, dtype=DTYPE), z(feat))

    def portrayal_step(self, o_t: torch.Tensor, portrayal_state: torch.Tensor):
        """Self-describe the ideal next pose from the objective stream."""
        if portrayal_state.shape[-1] != self.config.portrayal_hidden_dim:
            raise ContractViolation("portrayal state has the wrong width")
        new_state = _check(self.portrayal_cell(o_t, portrayal_state), "portrayal_state")
        raw = _check(self.portrayal_head(new_state), "portrayal_output")
        return renormalize_description_t(raw), new_state

    def task_state_update(self, h_prev: torch.Tensor, o_t: torch.Tensor) -> torch.Tensor:
        if self.config.merged:
            raise ContractViolation("the merged-latent variant has no separate task state")
        return _check(self.task_cell(o_t, h_prev), "h")

    def _gaussian(self, raw: torch.Tensor, name: str) -> Gaussian:
        mean, pre_std = raw.chunk(2, dim=-1)
        std = F.softplus(pre_std) + self.config.min_stddev
        return Gaussian(_check(mean, f"{name}_mean"), _check(std, f"{name}_stddev"))

    def behaviour_prior(self, h_t: torch.Tensor, b_prev: torch.Tensor, a_prev: torch.Tensor,
                        b_det_prev: torch.Tensor | None = None):
        """Deterministic behaviour feature and prior over the stochastic behaviour state.

        Returns ``(b_det, Gaussian)``. With the separate latents, ``b_det`` is a
        second recurrence over ``(h_t, b_prev, a_prev)``; ``b_det_prev`` defaults
        to zeros.
        """
        if b_det_prev is None:
            b_det_prev = torch.zeros(h_t.shape[0], self.config.b_det_dim, dtype=DTYPE)
        x = self.behaviour_embed(torch.cat([h_t, b_prev, a_prev], dim=-1))
        b_det = _check(self.behaviour_cell(x, b_det_prev), "b_det")
        return b_det, self._gaussian(self.prior_head(b_det), "prior")

    def behaviour_posterior(self, b_det: torch.Tensor, d_t: torch.Tensor) -> Gaussian:
        return self._gaussian(self.posterior_head(torch.cat([b_det, d_t], dim=-1)), "posterior")

    def animation_step(self, h_t: torch.Tensor, b_sample: torch.Tensor) -> BetaPolicyOutput:
        raw = _check(self.policy(torch.cat([h_t, b_sample], dim=-1)), "policy")
        ra, rb = raw.chunk(2, dim=-1)
        return BetaPolicyOutput(1.0 + F.softplus(ra), 1.0 + F.softplus(rb))

    def decode_description(self, h_t: torch.Tensor, b_sample: torch.Tensor) -> torch.Tensor:
        return _check(self.decoder(torch.cat([h_t, b_sample], dim=-1)), "decoded_description")

    # ------------------------------------------------------------------ one step

    def step(self, o_t: torch.Tensor, state: LatentState, a_prev: torch.Tensor,
             d_real_prev: torch.Tensor | None = None, noise: torch.Tensor | None = None) -> StepOutput:
        """Advance every latent by one frame.

        The posterior is conditioned on the portrayal model's self-description,
        except in the ``single_state`` variant where the last real description
        ``d_real_prev`` takes its place. ``noise`` (standard normal) draws the
        behaviour sample; ``None`` uses the posterior mean.
        """
        c = self.config
        if c.variant == "single_state":
            if d_real_prev is None:
                raise ContractViolation("single_state agents need the previous real description")
            d_hat, portrayal = None, state.portrayal
            condition = d_real_prev
        else:
            d_hat, portrayal = self.portrayal_step(o_t, state.portrayal)
            condition = d_hat

        if c.merged:
            x = self.dynamics_embed(torch.cat([o_t, state.b_sample, a_prev], dim=-1))
            h = _check(self.dynamics_cell(x, state.h), "merged_state")
            b_det = h
            prior = self._gaussian(self.prior_head(b_det), "prior")
        else:
            h = self.task_state_update(state.h, o_t)
            b_det, prior = self.behaviour_prior(h, state.b_sample, a_prev, state.b_det)

        post = self.behaviour_posterior(b_det, condition)
        b = post.mean if noise is None else post.mean + post.std * noise
        policy = self.animation_step(h, b)
        new_state = LatentState(portrayal, h, b, post.mean, post.std, b_det)
        return StepOutput(new_state, d_hat, prior, post, policy)


# ---------------------------------------------------------------------- rollout


def rest_action(skeleton: Skeleton) -> np.ndarray:
    return rotations_to_action(skeleton, rest_rotations(skeleton))


def rollout(agent: Agent, objectives, skeleton: Skeleton | None = None, mode: str = "deterministic",
            seed=None) -> EpisodeRecord:
    """Generate an episode for an objective sequence.

    ``deterministic`` uses the posterior mean and the Beta mean; ``stochastic``
    samples both from a generator seeded by ``seed``. Poses are applied to the
    skeleton each frame and the measured descriptions recorded. A numeric fault
    is re-raised with the offending step index.
    """
    if mode not in ("deterministic", "stochastic"):
        raise ContractViolation(f"unknown rollout mode {mode!r}")
    skeleton = skeleton or canonical_skeleton()
    objectives = np.asarray(objectives, dtype=float)
    if objectives.ndim != 2 or objectives.shape[0] == 0 or objectives.shape[1] != OBJECTIVE_DIM:
        raise ContractViolation("objectives must be a non-empty (N, 6) array")
    rng = np.random.default_rng(seed) if mode == "stochastic" else None
    n = objectives.shape[0]
    c = agent.config

    actions = np.empty((n, skeleton.action_dim))
    d_real = np.empty((n, DESCRIPTION_DIM))
    d_pred = np.full((n, DESCRIPTION_DIM), np.nan)
    names = skeleton.joint_names
    eff_names = tuple(a.name for a in skeleton.effector_anchors)

    state = agent.initial_state(1)
    a_prev = torch.as_tensor(rest_action(skeleton), dtype=DTYPE)[None]
    d_prev = torch.tensor(rest_description(), dtype=DTYPE)[None]
    obj = torch.as_tensor(objectives, dtype=DTYPE)
    with torch.no_grad():
        for t in range(n):
            try:
                noise = None
                if rng is not None:
                    noise = torch.as_tensor(rng.standard_normal((1, c.b_stoch_dim)), dtype=DTYPE)
                out = agent.step(obj[t : t + 1], state, a_prev, d_prev, noise)
            except NumericFault as exc:
                raise NumericFault("rollout aborted", where=exc.where, step=t) from exc
            if rng is None:
                a = out.policy.mean[0].numpy()
            else:
                a = rng.beta(out.policy.alpha[0].numpy(), out.policy.beta[0].numpy())
            a = np.clip(a, 0.0, 1.0)
            pos, dirs = forward_kinematics_batch(skeleton, action_to_rotations(skeleton, a))
            d = description_batch(pos, dirs, names, eff_names)[0]
            actions[t] = a
            d_real[t] = d
            if out.d_hat is not None:
                d_pred[t] = out.d_hat[0].numpy()
            state = out.state
            a_prev = torch.as_tensor(a, dtype=DTYPE)[None]
            d_prev = torch.as_tensor(d, dtype=DTYPE)[None]
    return EpisodeRecord(objectives.copy(), actions, d_real, None, None, d_pred)


# ---------------------------------------------------------------------- checkpoints

CHECKPOINT_MAGIC = b"RLACKPT\x00"
CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    agent_config: AgentConfig
    parameters: dict[str, np.ndarray]
    seed: int
    signal_layout_version: str = SIGNAL_LAYOUT_VERSION
    train_config: dict | None = None
    metadata: dict = field(default_factory=dict)

    @classmethod
    def from_agent(cls, agent: Agent, seed: int, train_config: dict | None = None, metadata: dict | None = None):
        params = {k: v.detach().cpu().numpy().astype("<f8").copy() for k, v in agent.state_dict().items()}
        return cls(agent.config, params, seed, SIGNAL_LAYOUT_VERSION, train_config, dict(metadata or {}))

    def build_agent(self) -> Agent:
        agent = Agent(self.agent_config)
        expected = agent.state_dict()
        if set(expected) != set(self.parameters):
            missing = sorted(set(expected) - set(self.parameters))
            extra = sorted(set(self.parameters) - set(expected))
            raise ContractViolation(f"checkpoint tensors do not match config (missing {missing}, extra {extra})")
        loaded = {}
        for name, ref in expected.items():
            arr = self.parameters[name]
            if tuple(arr.shape) != tuple(ref.shape):
                raise ContractViolation(f"tensor {name}: shape {arr.shape} != expected {tuple(ref.shape)}")
            if not np.all(np.isfinite(arr)):
                raise NumericFault("non-finite parameter", where=name)
            loaded[name] = torch.as_tensor(arr, dtype=DTYPE)
        agent.load_state_dict(loaded)
        agent.eval()
        return agent

    def check_layout(self, version: str) -> None:
        if version != self.signal_layout_version:
            raise VersionMismatch(self.signal_layout_version, version)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    """Serialize a checkpoint.

    Layout (all integers little-endian)::

        0   8 bytes  magic b"RLACKPT\\0"
        8   uint32   format version (1)
        12  uint64   header length H
        20  H bytes  UTF-8 JSON header
        20+H         tensor payload, float64 little-endian, C order

    The header holds ``agent_config``, ``signal_layout_version``, ``seed``,
    ``train_config``, ``metadata`` and ``tensors``: a list of
    ``{"name", "shape", "offset"}`` where ``offset`` counts bytes from the
    start of the payload.
    """
    tensors, chunks, offset = [], [], 0
    for name in sorted(ckpt.parameters):
        arr = np.ascontiguousarray(ckpt.parameters[name], dtype="<f8")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "agent_config": ckpt.agent_config.to_dict(),
        "signal_layout_version": ckpt.signal_layout_version,
        "seed": ckpt.seed,
        "train_config": ckpt.train_config,
        "metadata": ckpt.metadata,
        "tensors": tensors,
    }
    head = json.dumps(header, sort_keys=True).encode()
    return CHECKPOINT_MAGIC + struct.pack("<IQ", CHECKPOINT_FORMAT_VERSION, len(head)) + head + b"".join(chunks)


def checkpoint_from_bytes(data: bytes) -> Checkpoint:
    if data[:8] != CHECKPOINT_MAGIC:
        raise ContractViolation("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<IQ", data[8:20])
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ContractViolation(f"unsupported checkpoint format version {version}")
    header = json.loads(data[20 : 20 + hlen].decode())
    payload = memoryview(data)[20 + hlen :]
    params = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=t["offset"]).reshape(t["shape"])
        params[t["name"]] = arr.astype(np.float64)
    return Checkpoint(
        AgentConfig.from_dict(header["agent_config"]),
        params,
        int(header["seed"]),
        header["signal_layout_version"],
        header.get("train_config"),
        header.get("metadata") or {},
    )


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    atomic_write_bytes(path, checkpoint_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        return checkpoint_from_bytes(f.read())
