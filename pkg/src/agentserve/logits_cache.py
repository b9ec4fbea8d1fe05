"""Host-memory store of per-state logits trajectories.

An entry keys on the 64-bit rolling hash of the full prompt and holds the
float32 logits emitted at every decode position together with the tokens
that were sampled from them. Entries are evicted least-recently-hit once the
byte budget is exceeded; pinned entries (a replay in progress) are never
evicted. The replay procedure itself lives in :mod:`agentserve.engine`.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ConfigError
from .mixing import hash_tokens
from .sampling import HotspotParams, SamplingConfig, identify_hotspots

#: Accounted bytes per stored token beyond the float32 logits row.
TOKEN_OVERHEAD_BYTES = 8


@dataclass(frozen=True)
class StateKey:
    digest: int

    @classmethod
    def of(cls, prompt_tokens) -> "StateKey":
        return cls(hash_tokens(prompt_tokens))


class ReplayPolicy(str, Enum):
    NONE = "none"
    STEP_WISE = "step_wise"
    HOTSPOT = "hotspot"


@dataclass
class CachedTrajectory:
    logits_seq: np.ndarray  # (n, vocab) float32
    token_seq: list[int]
    vocab_size: int
    created_round: int
    last_hit: int
    hotspots: dict[tuple, tuple[int, ...]] = field(default_factory=dict)
    pins: int = 0

    def __len__(self) -> int:
        return len(self.token_seq)

    @property
    def nbytes(self) -> int:
        return self.logits_seq.nbytes + TOKEN_OVERHEAD_BYTES * len(self.token_seq)


@dataclass
class ReplayOutcome:
    replayed_len: int
    diverged_at: int | None
    total_len: int
    forward_passes_saved: int

    @property
    def hit_ratio(self) -> float:
        if self.total_len == 0:
            return 0.0
        return self.replayed_len / self.total_len


class LogitsCache:
    def __init__(self, budget_bytes: int = 1 << 30):
        self.budget_bytes = budget_bytes
        self.entries: dict[int, CachedTrajectory] = {}
        self.total_bytes = 0
        self._hit_clock = 0
        self._prefetch_queue: deque[tuple[int, SamplingConfig, HotspotParams]] = deque()
        self.hotspot_computations = 0
        self.lookups = 0
        self.hits = 0

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, key: StateKey) -> CachedTrajectory | None:
        self.lookups += 1
        entry = self.entries.get(key.digest)
        if entry is not None:
            self._hit_clock += 1
            entry.last_hit = self._hit_clock
            self.hits += 1
        return entry

    def update(
        self,
        key: StateKey,
        logits_seq: np.ndarray,
        token_seq,
        round_index: int = 0,
        prefetch_config: tuple[SamplingConfig, HotspotParams] | None = None,
    ) -> CachedTrajectory:
        """Store or overwrite the trajectory for ``key``.

        Evicts least-recently-hit entries if the byte budget is exceeded and
        schedules a background prefetch task for this key.
        """
        logits_seq = np.asarray(logits_seq, dtype=np.float32)
        if logits_seq.ndim != 2 or logits_seq.shape[0] != len(token_seq):
            raise ConfigError(
                f"logits/token length mismatch: {logits_seq.shape} vs {len(token_seq)}"
            )
        old = self.entries.get(key.digest)
        if old is not None:
            self.total_bytes -= old.nbytes
        self._hit_clock += 1
        entry = CachedTrajectory(
            logits_seq=logits_seq,
            token_seq=list(token_seq),
            vocab_size=logits_seq.shape[1],
            created_round=round_index,
            last_hit=self._hit_clock,
        )
        self.entries[key.digest] = entry
        self.total_bytes += entry.nbytes
        self._evict_over_budget()
        if prefetch_config is not None:
            self._prefetch_queue.append((key.digest, *prefetch_config))
        return entry

    def _evict_over_budget(self) -> None:
        while self.total_bytes > self.budget_bytes and len(self.entries) > 1:
            victims = sorted(
                (e.last_hit, digest)
                for digest, e in self.entries.items()
                if e.pins == 0
            )
            if not victims:
                return
            _, digest = victims[0]
            entry = self.entries.pop(digest)
            self.total_bytes -= entry.nbytes

    def pin(self, entry: CachedTrajectory) -> None:
        entry.pins += 1

    def unpin(self, entry: CachedTrajectory) -> None:
        entry.pins -= 1

    # -- hotspot precomputation ------------------------------------------------

    def hotspots_for(
        self, entry: CachedTrajectory, cfg: SamplingConfig, params: HotspotParams
    ) -> tuple[int, ...]:
        """Hotspot positions of an entry, computed once per parameter set."""
        key = params.cache_key(cfg.temperature)
        cached = entry.hotspots.get(key)
        if cached is None:
            cached = identify_hotspots(entry.logits_seq, cfg, params)
            entry.hotspots[key] = cached
            self.hotspot_computations += 1
        return cached

    def prefetch(self, key: StateKey, cfg: SamplingConfig, params: HotspotParams) -> None:
        """Pre-materialize hotspot data for an entry; no-op if absent.

        Purely a latency optimization: replay results are identical whether
        or not this ran.
        """
        entry = self.entries.get(key.digest)
        if entry is None:
            return
        self.hotspots_for(entry, cfg, params)

    def drain_prefetch(self, limit: int | None = None) -> int:
        """Run queued prefetch tasks (deferrable; safe to drop under load)."""
        ran = 0
        while self._prefetch_queue and (limit is None or ran < limit):
            digest, cfg, params = self._prefetch_queue.popleft()
            self.prefetch(StateKey(digest), cfg, params)
            ran += 1
        return ran
