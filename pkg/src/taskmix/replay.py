"""Episode replay memory serving context windows and RL batches.

All transitions live in one flat arena (rows are [s, a, r, s'] exactly
as the encoder consumes them) that grows by doubling. Episodes are
assigned whole to the encoder's train or validation stratum when
appended; RL sampling ignores the split. Context windows are gathered
fully vectorized: a window covers the T transitions ending at (and
including) its anchor, zero-padded with a mask before episode start.
Windows never cross an episode boundary.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from taskmix.errors import ConfigurationError, EmptyBufferError

_SNAP_MAGIC = b"TMB1"
_SNAP_VERSION = 1


@dataclass
class EpisodeRecord:
    """One roll-out; per-step task annotations support mid-episode switches."""
    s: np.ndarray        # (L, obs_dim)
    a: np.ndarray        # (L, action_dim)
    r: np.ndarray        # (L,)
    s_next: np.ndarray   # (L, obs_dim)
    base_label: np.ndarray  # (L,) int, index into the run's enabled bases
    target: np.ndarray   # (L,) float, active task target per step
    task_id: int

    def __len__(self) -> int:
        return len(self.r)


@dataclass
class ContextBatch:
    windows: np.ndarray      # (n, T, context_dim)
    mask: np.ndarray         # (n, T) bool
    labels: np.ndarray       # (n,) int
    targets: np.ndarray      # (n,) float
    anchors: np.ndarray      # (n,) global transition indices
    states: np.ndarray       # (n, obs_dim) anchor transition, split out
    actions: np.ndarray      # (n, action_dim)
    rewards: np.ndarray      # (n,)
    next_states: np.ndarray  # (n, obs_dim)


class ReplayBuffer:
    def __init__(self, obs_dim: int, action_dim: int, episode_cap: int,
                 rng: np.random.Generator, train_fraction: float = 0.8,
                 max_episodes: int | None = None):
        self.obs_dim = obs_dim
        self.action_dim = action_dim
        self.context_dim = 2 * obs_dim + action_dim + 1
        self.episode_cap = episode_cap
        self.train_fraction = train_fraction
        self.max_episodes = max_episodes
        self._rng = rng

        cap0 = 1024
        self._ctx = np.zeros((cap0, self.context_dim))
        self._label = np.zeros(cap0, dtype=np.int64)
        self._target = np.zeros(cap0)
        self._task_id = np.zeros(cap0, dtype=np.int64)
        self._step_index = np.zeros(cap0, dtype=np.int64)
        self._size = 0

        self._ep_start: list[int] = []
        self._ep_len: list[int] = []
        self._ep_train: list[bool] = []
        self._train_idx = np.zeros(0, dtype=np.int64)
        self._val_idx = np.zeros(0, dtype=np.int64)

    # ------------------------------------------------------------- state

    @property
    def size(self) -> int:
        return self._size

    @property
    def n_episodes(self) -> int:
        return len(self._ep_len)

    def stratum_size(self, stratum: str) -> int:
        return len(self._train_idx if stratum == "train" else self._val_idx)

    # ------------------------------------------------------------ writes

    def _grow_to(self, needed: int) -> None:
        cap = len(self._ctx)
        if needed <= cap:
            return
        while cap < needed:
            cap *= 2
        for name in ("_ctx", "_label", "_target", "_task_id", "_step_index"):
            old = getattr(self, name)
            new = np.zeros((cap,) + old.shape[1:], dtype=old.dtype)
            new[:self._size] = old[:self._size]
            setattr(self, name, new)

    def append(self, episode: EpisodeRecord) -> None:
        n = len(episode)
        if n == 0:
            raise ConfigurationError("cannot append an empty episode")
        if n > self.episode_cap:
            raise ConfigurationError(
                f"episode length {n} exceeds cap {self.episode_cap}")
        self._grow_to(self._size + n)
        start = self._size
        self._ctx[start:start + n, :self.obs_dim] = episode.s
        self._ctx[start:start + n, self.obs_dim:self.obs_dim + self.action_dim] = episode.a
        self._ctx[start:start + n, self.obs_dim + self.action_dim] = episode.r
        self._ctx[start:start + n, self.obs_dim + self.action_dim + 1:] = episode.s_next
        self._label[start:start + n] = episode.base_label
        self._target[start:start + n] = episode.target
        self._task_id[start:start + n] = episode.task_id
        self._step_index[start:start + n] = np.arange(n)
        self._size += n

        is_train = bool(self._rng.random() < self.train_fraction)
        self._ep_start.append(start)
        self._ep_len.append(n)
        self._ep_train.append(is_train)
        rows = np.arange(start, start + n, dtype=np.int64)
        if is_train:
            self._train_idx = np.concatenate([self._train_idx, rows])
        else:
            self._val_idx = np.concatenate([self._val_idx, rows])

        if self.max_episodes is not None and len(self._ep_len) > self.max_episodes:
            self._evict_oldest(len(self._ep_len) - self.max_episodes)

    def _evict_oldest(self, count: int) -> None:
        drop = sum(self._ep_len[:count])
        keep = self._size - drop
        for name in ("_ctx", "_label", "_target", "_task_id", "_step_index"):
            arr = getattr(self, name)
            arr[:keep] = arr[drop:self._size]
        self._size = keep
        self._ep_start = [s - drop for s in self._ep_start[count:]]
        self._ep_len = self._ep_len[count:]
        self._ep_train = self._ep_train[count:]
        self._train_idx = np.zeros(0, dtype=np.int64)
        self._val_idx = np.zeros(0, dtype=np.int64)
        for start, length, is_train in zip(self._ep_start, self._ep_len, self._ep_train):
            rows = np.arange(start, start + length, dtype=np.int64)
            if is_train:
                self._train_idx = np.concatenate([self._train_idx, rows])
            else:
                self._val_idx = np.concatenate([self._val_idx, rows])

    # ----------------------------------------------------------- sampling

    def _gather_windows(self, anchors: np.ndarray, T: int):
        offsets = np.arange(-T + 1, 1, dtype=np.int64)
        gidx = anchors[:, None] + offsets[None, :]
        ep_start = anchors - self._step_index[anchors]
        mask = gidx >= ep_start[:, None]
        safe = np.where(mask, gidx, anchors[:, None])
        windows = self._ctx[safe] * mask[:, :, None]
        return windows, mask

    def context_at(self, anchors: np.ndarray, T: int) -> ContextBatch:
        """Windows plus anchor annotations for explicit transition indices."""
        anchors = np.asarray(anchors, dtype=np.int64)
        if anchors.size and (anchors.min() < 0 or anchors.max() >= self._size):
            raise ConfigurationError(
                f"anchor indices must lie in [0, {self._size})")
        windows, mask = self._gather_windows(anchors, T)
        od, ad = self.obs_dim, self.action_dim
        rows = self._ctx[anchors]
        return ContextBatch(windows=windows, mask=mask,
                            labels=self._label[anchors].copy(),
                            targets=self._target[anchors].copy(),
                            anchors=anchors,
                            states=rows[:, :od].copy(),
                            actions=rows[:, od:od + ad].copy(),
                            rewards=rows[:, od + ad].copy(),
                            next_states=rows[:, od + ad + 1:].copy())

    def stratum_anchors(self, stratum: str) -> np.ndarray:
        return (self._train_idx if stratum == "train" else self._val_idx).copy()

    def sample_context_batch(self, n: int, T: int, stratum: str,
                             rng: np.random.Generator) -> ContextBatch:
        pool = self._train_idx if stratum == "train" else self._val_idx
        if len(pool) == 0:
            raise EmptyBufferError(
                f"no transitions in the {stratum} stratum; collect roll-outs first")
        anchors = pool[rng.integers(0, len(pool), size=n)]
        return self.context_at(anchors, T)

    def sample_rl_batch(self, n: int, T: int, rng: np.random.Generator) -> dict:
        if self._size == 0:
            raise EmptyBufferError("replay buffer is empty; collect roll-outs first")
        anchors = rng.integers(0, self._size, size=n)
        windows, mask = self._gather_windows(anchors, T)
        od, ad = self.obs_dim, self.action_dim
        rows = self._ctx[anchors]
        return {
            "s": rows[:, :od].copy(),
            "a": rows[:, od:od + ad].copy(),
            "r": rows[:, od + ad].copy(),
            "s_next": rows[:, od + ad + 1:].copy(),
            "windows": windows,
            "mask": mask,
            "task_id": self._task_id[anchors].copy(),
            "step_index": self._step_index[anchors].copy(),
            "anchors": anchors,
        }

    # ----------------------------------------------------------- snapshot

    def save_snapshot(self, path) -> None:
        header = {
            "version": _SNAP_VERSION,
            "obs_dim": self.obs_dim,
            "action_dim": self.action_dim,
            "episode_cap": self.episode_cap,
            "size": self._size,
            "ep_start": self._ep_start,
            "ep_len": self._ep_len,
            "ep_train": [int(t) for t in self._ep_train],
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        with open(path, "wb") as f:
            f.write(_SNAP_MAGIC)
            f.write(struct.pack("<Q", len(blob)))
            f.write(blob)
            f.write(np.ascontiguousarray(self._ctx[:self._size], dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(self._target[:self._size], dtype="<f8").tobytes())
            for name in ("_label", "_task_id", "_step_index"):
                arr = getattr(self, name)
                f.write(np.ascontiguousarray(arr[:self._size], dtype="<i8").tobytes())

    @classmethod
    def load_snapshot(cls, path, rng: np.random.Generator) -> "ReplayBuffer":
        with open(path, "rb") as f:
            if f.read(4) != _SNAP_MAGIC:
                raise ConfigurationError(f"not a buffer snapshot: {path}")
            (hlen,) = struct.unpack("<Q", f.read(8))
            header = json.loads(f.read(hlen).decode())
            if header["version"] != _SNAP_VERSION:
                raise ConfigurationError(
                    f"unsupported snapshot version {header['version']}")
            buf = cls(header["obs_dim"], header["action_dim"],
                      header["episode_cap"], rng)
            n = header["size"]
            cdim = buf.context_dim
            buf._grow_to(n)
            buf._ctx[:n] = np.frombuffer(f.read(n * cdim * 8), dtype="<f8").reshape(n, cdim)
            buf._target[:n] = np.frombuffer(f.read(n * 8), dtype="<f8")
            for name in ("_label", "_task_id", "_step_index"):
                getattr(buf, name)[:n] = np.frombuffer(f.read(n * 8), dtype="<i8")
            buf._size = n
        buf._ep_start = list(header["ep_start"])
        buf._ep_len = list(header["ep_len"])
        buf._ep_train = [bool(t) for t in header["ep_train"]]
        for start, length, is_train in zip(buf._ep_start, buf._ep_len, buf._ep_train):
            rows = np.arange(start, start + length, dtype=np.int64)
            if is_train:
                buf._train_idx = np.concatenate([buf._train_idx, rows])
            else:
                buf._val_idx = np.concatenate([buf._val_idx, rows])
        return buf
