"""Episode collection, composite loss and parameter updates.

Each epoch imitates one training clip per requested behaviour with a stochastic
rollout, stores the episodes, then runs a fixed number of updates on random
chunks. The loss is ``w1*L1 + w2*L2 + w3*L3``:

* L1: mean squared error between decoded and recorded descriptions,
* L2: KL(posterior || prior) of the behaviour state, summed over dimensions,
* L3: Huber loss between the policy's Beta mean and the clip's unit action.
"""

from __future__ import annotations

import csv
import math
import io
import logging
from dataclasses import asdict, dataclass, fields
from typing import Callable, NamedTuple, Sequence

import numpy as np
import torch

from .agent import DTYPE, Agent, AgentConfig, Checkpoint, Gaussian, rest_action, rollout, save_checkpoint
from .episodes import Chunk, EpisodeBuffer, EpisodeRecord, sample_chunks, stack_chunks
from .errors import ConfigurationError, ContractViolation, NumericFault
from .kinematics import Skeleton, canonical_skeleton, rotations_to_action
from .motion import DatasetSplit, MotionClip
from .signals import objective_sequence, rest_description

log = logging.getLogger(__name__)

BEHAVIOUR_MODES = ("point", "wave", "both")
LR_SCHEDULES = ("constant", "cosine")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    behaviours: str = "both"
    chunks_per_update: int = 8
    chunk_length: int = 24
    updates_per_epoch: int = 20
    learning_rate: float = 3e-4
    # "constant", or "cosine" annealing from learning_rate towards zero over the epoch budget
    lr_schedule: str = "constant"
    huber_delta: float = 0.1
    gradient_clip_norm: float = 10.0
    buffer_capacity: int = 500
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0
    # held-out scoring cadence in epochs (0 disables); the final epoch is always scored when enabled
    eval_every: int = 0
    checkpoint_every: int = 0
    # stop early once the held-out score reaches this value
    target_score: float | None = None

    def __post_init__(self):
        for name in ("epochs", "chunks_per_update", "updates_per_epoch", "buffer_capacity"):
            if getattr(self, name) <= 0:
                raise ConfigurationError("must be positive", field=name)
        if self.chunk_length < 2:
            raise ConfigurationError("must be at least 2", field="chunk_length")
        if self.behaviours not in BEHAVIOUR_MODES:
            raise ConfigurationError(f"must be one of {BEHAVIOUR_MODES}", field="behaviours")
        if not self.huber_delta > 0:
            raise ConfigurationError("must be positive", field="huber_delta")
        if not self.learning_rate >= 0:
            raise ConfigurationError("must be non-negative", field="learning_rate")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigurationError(f"must be one of {LR_SCHEDULES}", field="lr_schedule")
        if not self.gradient_clip_norm > 0:
            raise ConfigurationError("must be positive", field="gradient_clip_norm")
        if len(self.loss_weights) != 3 or any(w < 0 for w in self.loss_weights):
            raise ConfigurationError("need three non-negative weights", field="loss_weights")
        if self.eval_every < 0 or self.checkpoint_every < 0:
            raise ConfigurationError("cadences must be non-negative", field="eval_every")
        object.__setattr__(self, "loss_weights", tuple(float(w) for w in self.loss_weights))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        extra = set(doc) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigurationError(f"unknown fields {sorted(extra)}")
        doc = dict(doc)
        if "loss_weights" in doc:
            doc["loss_weights"] = tuple(doc["loss_weights"])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from None


def learning_rate_at(cfg: TrainConfig, epoch: int) -> float:
    """Step size used throughout ``epoch`` (1-based)."""
    if cfg.lr_schedule == "constant":
        return cfg.learning_rate
    return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * (epoch - 1) / cfg.epochs))


# ---------------------------------------------------------------------- losses


def _as_t(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x, dtype=float), dtype=DTYPE)


def _mask_for(x: torch.Tensor, mask) -> torch.Tensor:
    """Per-step weights broadcastable against ``x`` with trailing feature dimension."""
    if mask is None:
        return torch.ones(x.shape[:-1], dtype=x.dtype)
    m = _as_t(mask).to(x.dtype)
    if m.shape != x.shape[:-1]:
        raise ContractViolation(f"mask shape {tuple(m.shape)} does not match steps {tuple(x.shape[:-1])}")
    return m


def _masked_mean(per_elem: torch.Tensor, mask) -> torch.Tensor:
    m = _mask_for(per_elem, mask)
    n = m.sum() * per_elem.shape[-1]
    if n == 0:
        raise ContractViolation("no valid steps to average over")
    return (per_elem * m[..., None]).sum() / n


def loss_l1(decoded, d_real, mask=None) -> torch.Tensor:
    """Mean squared description reconstruction error over valid steps and components."""
    decoded, d_real = _as_t(decoded), _as_t(d_real)
    if decoded.shape != d_real.shape:
        raise ContractViolation(f"length/shape mismatch {tuple(decoded.shape)} vs {tuple(d_real.shape)}")
    return _masked_mean((decoded - d_real) ** 2, mask)


def gaussian_kl(q: Gaussian, p: Gaussian) -> torch.Tensor:
    """KL(q || p) for diagonal Gaussians, summed over the last dimension."""
    var_ratio = (q.std / p.std) ** 2
    mean_term = ((q.mean - p.mean) / p.std) ** 2
    return 0.5 * (var_ratio + mean_term - 1.0 - torch.log(var_ratio)).sum(-1)


def loss_l2(posterior: Gaussian, prior: Gaussian, mask=None, min_stddev: float | None = None) -> torch.Tensor:
    """Mean over valid steps of KL(posterior || prior)."""
    q = Gaussian(_as_t(posterior[0]), _as_t(posterior[1]))
    p = Gaussian(_as_t(prior[0]), _as_t(prior[1]))
    if q.mean.shape != p.mean.shape or q.std.shape != q.mean.shape or p.std.shape != p.mean.shape:
        raise ContractViolation("posterior and prior shapes differ")
    floor = 0.0 if min_stddev is None else min_stddev
    if (q.std <= 0).any() or (p.std <= 0).any() or (q.std < floor).any() or (p.std < floor).any():
        raise ContractViolation(f"standard deviations must be positive and >= {floor}")
    kl = gaussian_kl(q, p)
    m = _mask_for(kl[..., None], mask)
    if m.sum() == 0:
        raise ContractViolation("no valid steps to average over")
    return (kl * m).sum() / m.sum()


def huber(residual: torch.Tensor, delta: float) -> torch.Tensor:
    a = residual.abs()
    return torch.where(a <= delta, 0.5 * residual**2, delta * a - 0.5 * delta**2)


def loss_l3(generated, m, delta: float, mask=None) -> torch.Tensor:
    """Elementwise Huber loss between generated and clip unit actions, averaged."""
    if not delta > 0:
        raise ContractViolation("delta must be positive")
    generated, m = _as_t(generated), _as_t(m)
    if generated.shape != m.shape:
        raise ContractViolation(f"length/shape mismatch {tuple(generated.shape)} vs {tuple(m.shape)}")
    return _masked_mean(huber(generated - m, delta), mask)


class LossParts(NamedTuple):
    l1: torch.Tensor
    l2: torch.Tensor
    l3: torch.Tensor


def total_loss(parts, weights=(1.0, 1.0, 1.0)) -> torch.Tensor:
    parts = [_as_t(p) for p in parts]
    for name, p in zip(("l1", "l2", "l3"), parts):
        if not torch.isfinite(p).all():
            raise NumericFault("non-finite loss component", where=name)
    total = parts[0] * 0.0
    for w, p in zip(weights, parts):
        if w != 0.0:
            total = total + w * p
    return total


# ---------------------------------------------------------------------- updates


@dataclass(frozen=True)
class LossReport:
    l1: float
    l2: float
    l3: float
    total: float
    grad_norm: float


def chunk_losses(agent: Agent, batch: dict[str, np.ndarray], delta: float,
                 generator: torch.Generator | None = None) -> LossParts:
    """Unroll the agent over stacked chunks, teacher-forcing recorded actions and descriptions.

    ``generator`` drives the reparameterized behaviour samples; ``None`` uses
    posterior means.
    """
    o = _as_t(batch["o"])
    a = _as_t(batch["a"])
    d_real = _as_t(batch["d_real"])
    m = _as_t(batch["m"])
    mask = _as_t(batch["mask"])
    n_chunks, length = o.shape[:2]
    b_dim = agent.config.b_stoch_dim

    state = agent.initial_state(n_chunks)
    a_prev = _as_t(batch["a_prev"])
    d_prev = _as_t(batch["d_prev"])
    decoded, generated, q_mean, q_std, p_mean, p_std = [], [], [], [], [], []
    for t in range(length):
        noise = None
        if generator is not None:
            noise = torch.randn(n_chunks, b_dim, generator=generator, dtype=DTYPE)
        out = agent.step(o[:, t], state, a_prev, d_prev, noise)
        decoded.append(agent.decode_description(out.state.h, out.state.b_sample))
        generated.append(out.policy.mean)
        q_mean.append(out.posterior.mean)
        q_std.append(out.posterior.std)
        p_mean.append(out.prior.mean)
        p_std.append(out.prior.std)
        state = out.state
        a_prev = a[:, t]
        d_prev = d_real[:, t]

    def seq(xs):
        return torch.stack(xs, dim=1)

    l1 = loss_l1(seq(decoded), d_real, mask)
    l2 = loss_l2(Gaussian(seq(q_mean), seq(q_std)), Gaussian(seq(p_mean), seq(p_std)), mask)
    l3 = loss_l3(seq(generated), m, delta, mask)
    return LossParts(l1, l2, l3)


def make_optimizer(agent: Agent, config: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(agent.parameters(), lr=config.learning_rate)


def update_step(agent: Agent, optimizer: torch.optim.Optimizer, chunks: Sequence[Chunk], config: TrainConfig,
                noise_seed: int | None = None) -> LossReport:
    """One gradient step on ``chunks``. Raises :class:`NumericFault` (without updating) on bad gradients."""
    if not chunks:
        raise ContractViolation("update_step needs at least one chunk")
    generator = None
    if noise_seed is not None:
        generator = torch.Generator().manual_seed(int(noise_seed))
    agent.train()
    optimizer.zero_grad(set_to_none=True)
    parts = chunk_losses(agent, stack_chunks(list(chunks)), config.huber_delta, generator)
    total = total_loss(parts, config.loss_weights)
    total.backward()
    grads = [p.grad for p in agent.parameters() if p.grad is not None]
    grad_norm = torch.linalg.vector_norm(torch.stack([torch.linalg.vector_norm(g) for g in grads])) if grads else torch.zeros(())
    if not torch.isfinite(grad_norm):
        optimizer.zero_grad(set_to_none=True)
        raise NumericFault("non-finite gradient; update skipped", where="gradients")
    torch.nn.utils.clip_grad_norm_(agent.parameters(), config.gradient_clip_norm)
    optimizer.step()
    return LossReport(*(float(x.detach()) for x in (parts.l1, parts.l2, parts.l3, total)), float(grad_norm))


# ---------------------------------------------------------------------- training loop

LOG_COLUMNS = ("epoch", "l1", "l2", "l3", "total", "grad_norm", "holdout_score")


@dataclass(frozen=True)
class LogRow:
    epoch: int
    l1: float
    l2: float
    l3: float
    total: float
    grad_norm: float
    holdout_score: float | None = None

    def as_csv(self) -> list[str]:
        return [str(self.epoch)] + [repr(float(v)) for v in (self.l1, self.l2, self.l3, self.total, self.grad_norm)] + [
            "" if self.holdout_score is None else repr(float(self.holdout_score))
        ]


def log_csv(rows: Sequence[LogRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in rows:
        w.writerow(r.as_csv())
    return buf.getvalue()


def read_log_csv(text: str) -> list[LogRow]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        rows.append(LogRow(int(rec["epoch"]), float(rec["l1"]), float(rec["l2"]), float(rec["l3"]),
                           float(rec["total"]), float(rec["grad_norm"]),
                           float(rec["holdout_score"]) if rec["holdout_score"] else None))
    return rows


def clip_episode(agent: Agent, clip: MotionClip, skeleton: Skeleton, seed) -> EpisodeRecord:
    """Stochastic rollout imitating ``clip`` with the clip's unit actions attached as ``m``."""
    ep = rollout(agent, objective_sequence(clip), skeleton, "stochastic", seed)
    return ep.with_ideal(rotations_to_action(skeleton, clip.frames), clip.id)


def _requested(behaviours: str) -> tuple[str, ...]:
    return ("point", "wave") if behaviours == "both" else (behaviours,)


def train(train_config: TrainConfig, agent_config: AgentConfig, dataset: DatasetSplit,
          skeleton: Skeleton | None = None, *, checkpoint_path=None,
          on_epoch: Callable[[LogRow], None] | None = None) -> tuple[Checkpoint, list[LogRow]]:
    """Run the full training loop and return the final checkpoint and per-epoch log."""
    from .scoring import evaluate_agent  # scoring imports agent only; kept local to stay import-light

    skeleton = skeleton or canonical_skeleton()
    cfg = train_config
    requested = _requested(cfg.behaviours)
    pools = {b: dataset.by_behaviour(b, "train") for b in requested}
    for b, clips in pools.items():
        if not clips:
            raise ConfigurationError(f"dataset has no training clips for {b!r}", field="behaviours")
    holdout = [c for c in dataset.test if c.behaviour in requested]

    agent = Agent(agent_config)
    optimizer = make_optimizer(agent, cfg)
    buffer = EpisodeBuffer(cfg.buffer_capacity)
    seeds = np.random.SeedSequence(cfg.seed)
    rng = np.random.default_rng(seeds.spawn(1)[0])
    rest_a = rest_action(skeleton)
    rest_d = rest_description()
    rows: list[LogRow] = []

    def snapshot(epoch: int) -> Checkpoint:
        return Checkpoint.from_agent(agent, cfg.seed, cfg.to_dict(), {"epochs_completed": epoch})

    for epoch in range(1, cfg.epochs + 1):
        for group in optimizer.param_groups:
            group["lr"] = learning_rate_at(cfg, epoch)
        agent.eval()
        for b in requested:
            clip = pools[b][int(rng.integers(len(pools[b])))]
            try:
                buffer.add(clip_episode(agent, clip, skeleton, int(rng.integers(2**63))))
            except NumericFault as exc:
                raise NumericFault(f"epoch {epoch} rollout of {clip.id}", where=exc.where, step=exc.step) from exc

        reports = []
        for s in range(cfg.updates_per_epoch):
            chunks = sample_chunks(buffer, cfg.chunks_per_update, cfg.chunk_length, rng,
                                   rest_action=rest_a, rest_description=rest_d)
            try:
                reports.append(update_step(agent, optimizer, chunks, cfg, int(rng.integers(2**63))))
            except NumericFault as exc:
                raise NumericFault(f"epoch {epoch} update {s + 1}", where=exc.where) from exc

        score = None
        if cfg.eval_every and holdout and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            agent.eval()
            score = evaluate_agent(agent, holdout, skeleton).mean_score
        row = LogRow(
            epoch,
            float(np.mean([r.l1 for r in reports])),
            float(np.mean([r.l2 for r in reports])),
            float(np.mean([r.l3 for r in reports])),
            float(np.mean([r.total for r in reports])),
            float(np.mean([r.grad_norm for r in reports])),
            score,
        )
        rows.append(row)
        log.info("epoch %d total %.5f l1 %.5f l2 %.5f l3 %.5f", epoch, row.total, row.l1, row.l2, row.l3)
        if on_epoch is not None:
            on_epoch(row)
        if checkpoint_path is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_checkpoint(snapshot(epoch), checkpoint_path)
        if cfg.target_score is not None and score is not None and score >= cfg.target_score:
            break

    agent.eval()
    final = snapshot(rows[-1].epoch)
    if checkpoint_path is not None:
        save_checkpoint(final, checkpoint_path)
    return final, rows
