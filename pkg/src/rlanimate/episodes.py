"""Episode records, the bounded episode buffer and chunk sampling."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, StateError


@dataclass(frozen=True, eq=False)
class EpisodeRecord:
    """One rollout: per-step objective, unit action, real description and ideal unit action.

    ``m`` is ``None`` until the caller attaches the imitated clip. ``d_pred``
    keeps the portrayal model's self-descriptions for inspection; losses never
    read it.
    """

    o: np.ndarray  # (F, 6)
    a: np.ndarray  # (F, action_dim) in [0, 1]
    d_real: np.ndarray  # (F, 42)
    m: np.ndarray | None = None  # (F, action_dim)
    clip_id: str | None = None
    d_pred: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.o)
        if n < 1:
            raise ContractViolation("episode must have at least one step")
        seqs = [self.a, self.d_real] + ([self.m] if self.m is not None else [])
        if any(len(s) != n for s in seqs):
            raise ContractViolation("episode sequences must share one length")

    def __len__(self):
        return len(self.o)

    def with_ideal(self, m: np.ndarray, clip_id: str | None = None) -> "EpisodeRecord":
        return EpisodeRecord(self.o, self.a, self.d_real, np.asarray(m, dtype=float), clip_id or self.clip_id, self.d_pred)


class EpisodeBuffer:
    """Insertion-ordered store with oldest-first eviction."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ContractViolation("buffer capacity must be positive")
        self.capacity = capacity
        self._episodes: deque[EpisodeRecord] = deque(maxlen=capacity)

    def add(self, episode: EpisodeRecord) -> None:
        if episode.m is None:
            raise ContractViolation("buffered episodes need their ideal actions m")
        self._episodes.append(episode)

    def __len__(self):
        return len(self._episodes)

    def __getitem__(self, i) -> EpisodeRecord:
        return self._episodes[i]

    def __iter__(self):
        return iter(self._episodes)


@dataclass(frozen=True, eq=False)
class Chunk:
    """A window ``[start, start + L)`` of one episode, right-padded to ``L`` with ``mask`` False.

    ``a_prev`` and ``d_prev`` are the action and real description just before the
    window (the rest encodings when ``start == 0``); they seed the recurrences.
    """

    o: np.ndarray
    a: np.ndarray
    d_real: np.ndarray
    m: np.ndarray
    mask: np.ndarray
    a_prev: np.ndarray
    d_prev: np.ndarray
    episode: int
    start: int


def make_chunk(episode: EpisodeRecord, start: int, length: int, rest_action: np.ndarray,
               rest_description: np.ndarray, index: int = -1) -> Chunk:
    n = len(episode)
    take = min(length, n - start)
    pad = length - take

    def window(x):
        w = x[start : start + take]
        if pad:
            w = np.concatenate([w, np.repeat(w[-1:], pad, axis=0)])
        return w

    mask = np.zeros(length, dtype=bool)
    mask[:take] = True
    a_prev = episode.a[start - 1] if start > 0 else rest_action
    d_prev = episode.d_real[start - 1] if start > 0 else rest_description
    return Chunk(window(episode.o), window(episode.a), window(episode.d_real), window(episode.m),
                 mask, np.asarray(a_prev, float), np.asarray(d_prev, float), index, start)


def sample_chunks(buffer: EpisodeBuffer, n_chunks: int, length: int, rng, *,
                  rest_action: np.ndarray, rest_description: np.ndarray) -> list[Chunk]:
    """Draw ``n_chunks`` windows: a uniform episode, then a uniform start offset.

    Episodes shorter than ``length`` are taken whole and padded.
    ``rng`` is a :class:`numpy.random.Generator` or an integer seed.
    """
    if len(buffer) == 0:
        raise StateError("cannot sample from an empty episode buffer")
    if length < 2:
        raise ContractViolation("chunk length must be at least 2")
    rng = np.random.default_rng(rng)
    chunks = []
    for _ in range(n_chunks):
        i = int(rng.integers(len(buffer)))
        ep = buffer[i]
        start = int(rng.integers(len(ep) - length + 1)) if len(ep) > length else 0
        chunks.append(make_chunk(ep, start, length, rest_action, rest_description, i))
    return chunks


def stack_chunks(chunks: list[Chunk]) -> dict[str, np.ndarray]:
    """Batch-major arrays: sequences ``(C, L, ...)``, seeds ``(C, ...)``."""
    if not chunks:
        raise ContractViolation("need at least one chunk")
    lengths = {len(c.mask) for c in chunks}
    if len(lengths) != 1:
        raise ContractViolation("chunks must share one length")
    keys = ("o", "a", "d_real", "m", "mask", "a_prev", "d_prev")
    return {k: np.stack([getattr(c, k) for c in chunks]) for k in keys}
