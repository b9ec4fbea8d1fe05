"""The serving engine: deterministic model + prefix-sharing KV store +
logits replay + per-agent profiling, with exact forward-pass accounting.

``generate`` implements replay-aware resampling: on a cache hit the request
is served from the stored logits trajectory (step-wise: resample every
position until the sampled token diverges from the cached continuation;
hotspot: resample only high-uncertainty positions and copy the rest), then a
single prefill over prompt-plus-replayed tokens resumes normal decoding, and
the refreshed trajectory is written back.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ConfigError
from .kv_cache import EvictionPolicy, PrefixTrie, TrieNode
from .logits_cache import CachedTrajectory, LogitsCache, ReplayOutcome, ReplayPolicy, StateKey
from .mixing import RngStream, fold_token, hash_tokens, mix2
from .model import CostReport, ModelConfig, logits_from_state
from .profiling import ContributionTracker, ContributionScore
from .sampling import HotspotParams, SamplingConfig, sample, softmax, truncate


@dataclass
class KvRef:
    """Handle to a materialized prefix; pins its tail while locked."""

    tokens: list[int]
    node: TrieNode
    digest: int
    owner: str
    locked: bool = True


@dataclass
class GenerateRequest:
    agent_id: str
    prompt_tokens: list[int]
    sampling: SamplingConfig
    replay_policy: ReplayPolicy = ReplayPolicy.NONE
    request_id: str = ""
    hotspot: HotspotParams | None = None


@dataclass
class GenerateResult:
    request_id: str
    agent_id: str
    tokens: list[int]
    outcome: ReplayOutcome
    was_revisit: bool
    prompt_len: int
    prefill_passes: int
    decode_passes: int
    prefill_tokens: int
    matched_tokens: int
    prefill_input: int
    wall_time_s: float


@dataclass
class RoundMetrics:
    round_index: int
    hotspot_hit_rate: float
    non_hotspot_hit_rate: float
    hotspot_matched: int
    hotspot_input: int
    non_hotspot_matched: int
    non_hotspot_input: int
    evicted_tokens: int
    evicted_hotspot_tokens: int
    resident_tokens: int
    scores: list[ContributionScore] = field(default_factory=list)


def _rate(matched: int, total: int) -> float:
    return matched / total if total > 0 else 0.0


class InferenceEngine:
    def __init__(
        self,
        model: ModelConfig,
        capacity_tokens: int = 1_000_000,
        eviction: EvictionPolicy = EvictionPolicy.LRU,
        logits_budget_bytes: int = 1 << 30,
        hotspot_params: HotspotParams | None = None,
        profile_window: int = 5,
        hotspot_agents: set[str] | frozenset[str] = frozenset(),
    ):
        self.model = model
        self.trie = PrefixTrie(capacity_tokens)
        self.eviction = eviction
        self.cache = LogitsCache(logits_budget_bytes)
        self.tracker = ContributionTracker(profile_window)
        self.hotspot_params = hotspot_params or HotspotParams()
        self.hotspot_agents = set(hotspot_agents)
        self.cost = CostReport()
        self.agents: set[str] = set()
        self.generate_count = 0
        self.decode_created = 0
        self.request_log: list[GenerateResult] = []
        self.round_rows: list[RoundMetrics] = []
        self._round_kv = {"hot_m": 0, "hot_i": 0, "non_m": 0, "non_i": 0}
        self._cum_kv = {"hot_m": 0, "hot_i": 0, "non_m": 0, "non_i": 0}
        self._round_evicted_base = 0
        self._round_evicted_hot_base = 0
        self._lock = threading.RLock()

    # -- agents and rounds -----------------------------------------------------

    def register_agent(self, agent_id: str) -> None:
        with self._lock:
            self.agents.add(agent_id)
            self.tracker.register_agent(agent_id)

    def note_concurrency(self, agent_id: str, in_flight: int) -> None:
        with self._lock:
            self.tracker.note_concurrency(agent_id, in_flight)

    def _evicted_hot(self) -> int:
        return sum(
            n for owner, n in self.trie.evicted_by_owner.items() if owner in self.hotspot_agents
        )

    def end_round(self) -> RoundMetrics:
        with self._lock:
            scores = self.tracker.end_round()
            kv = self._round_kv
            row = RoundMetrics(
                round_index=self.tracker.round_index,
                hotspot_hit_rate=_rate(kv["hot_m"], kv["hot_i"]),
                non_hotspot_hit_rate=_rate(kv["non_m"], kv["non_i"]),
                hotspot_matched=kv["hot_m"],
                hotspot_input=kv["hot_i"],
                non_hotspot_matched=kv["non_m"],
                non_hotspot_input=kv["non_i"],
                evicted_tokens=self.trie.evicted_tokens - self._round_evicted_base,
                evicted_hotspot_tokens=self._evicted_hot() - self._round_evicted_hot_base,
                resident_tokens=self.trie.resident_tokens,
                scores=scores,
            )
            self.round_rows.append(row)
            self._round_kv = {"hot_m": 0, "hot_i": 0, "non_m": 0, "non_i": 0}
            self._round_evicted_base = self.trie.evicted_tokens
            self._round_evicted_hot_base = self._evicted_hot()
            return row

    def cache_metrics(self) -> dict:
        """Run-cumulative KV hit rates partitioned by hotspot-agent membership."""
        kv = self._cum_kv
        return {
            "hotspot_hit_rate": _rate(kv["hot_m"], kv["hot_i"]),
            "non_hotspot_hit_rate": _rate(kv["non_m"], kv["non_i"]),
            "evicted_tokens": self.trie.evicted_tokens,
            "evicted_hotspot_tokens": self._evicted_hot(),
        }

    # -- capacity ----------------------------------------------------------------

    def _ensure_capacity(self, needed: int) -> None:
        if needed > self.trie.capacity_tokens:
            raise CapacityError(
                f"request needs {needed} tokens, capacity is {self.trie.capacity_tokens}"
            )
        shortfall = needed - self.trie.free_tokens
        if shortfall > 0:
            self.trie.evict(shortfall, self.eviction, self.tracker.scores)

    # -- prefill / decode ----------------------------------------------------------

    def prefill(self, agent_id: str, tokens) -> tuple[np.ndarray, KvRef]:
        """Materialize KV state for ``tokens`` (reusing any cached prefix) and
        return next-token logits plus a locked reference."""
        with self._lock:
            logits, ref, _ = self._prefill_internal(agent_id, list(tokens))
            return logits, ref

    def _prefill_internal(self, agent_id: str, tokens: list[int]) -> tuple[np.ndarray, KvRef, int]:
        if not tokens:
            raise ConfigError("prompt must be non-empty")
        mr = self.trie.match_prefix(tokens)
        needed = len(tokens) - mr.matched
        self.trie.lock(mr.node)
        try:
            self._ensure_capacity(needed)
            tail = self.trie.extend(mr.node, tokens[mr.matched :], agent_id)
        finally:
            self.trie.unlock(mr.node)
        self.trie.lock(tail)
        for provider, count in mr.providers.items():
            if provider != agent_id:
                self.tracker.note_reuse(provider, agent_id, count)
        self.cost.prefill_passes += 1
        self.cost.prefill_tokens += needed
        bucket = "hot" if agent_id in self.hotspot_agents else "non"
        for kv in (self._round_kv, self._cum_kv):
            kv[f"{bucket}_m"] += mr.matched
            kv[f"{bucket}_i"] += len(tokens)
        digest = hash_tokens(tokens)
        logits = logits_from_state(self.model, mix2(self.model.seed, digest))
        return logits, KvRef(list(tokens), tail, digest, agent_id), mr.matched

    def decode(self, agent_id: str, ref: KvRef, token: int) -> np.ndarray:
        """Append ``token`` to the reference and return logits for the
        extended prefix; transparently re-prefills an evicted reference."""
        with self._lock:
            return self._decode_internal(agent_id, ref, token)

    def _decode_internal(self, agent_id: str, ref: KvRef, token: int) -> np.ndarray:
        if not ref.node.resident:
            self._revive(ref)
        elif not ref.locked:
            self.trie.lock(ref.node)
            ref.locked = True
        if token not in ref.node.children:
            self._ensure_capacity(1)
        node, created = self.trie.append_token(ref.node, token, agent_id)
        self.trie.lock(node)
        self.trie.unlock(ref.node)
        ref.node = node
        ref.tokens.append(token)
        ref.digest = fold_token(ref.digest, token)
        self.cost.decode_passes += 1
        self.decode_created += int(created)
        return logits_from_state(self.model, mix2(self.model.seed, ref.digest))

    def _revive(self, ref: KvRef) -> None:
        """Re-materialize the evicted suffix of a reference (one prefill)."""
        mr = self.trie.match_prefix(ref.tokens)
        missing = len(ref.tokens) - mr.matched
        self.trie.lock(mr.node)
        try:
            self._ensure_capacity(missing)
            tail = self.trie.extend(mr.node, ref.tokens[mr.matched :], ref.owner)
        finally:
            self.trie.unlock(mr.node)
        self.trie.lock(tail)
        ref.node = tail
        ref.locked = True
        self.cost.prefill_passes += 1
        self.cost.prefill_tokens += missing
        self.cost.reprefill_tokens += missing

    def release(self, ref: KvRef) -> None:
        with self._lock:
            if ref.locked:
                self.trie.unlock(ref.node)
                ref.locked = False

    # -- generate (replay-aware) ---------------------------------------------------

    def _validate_prompt(self, prompt: list[int]) -> None:
        if not prompt:
            raise ConfigError("prompt must be non-empty")
        vocab = self.model.vocab_size
        for t in prompt:
            if not (0 <= t < vocab):
                raise ConfigError(f"token {t} outside vocabulary [0, {vocab})")

    def generate(self, request: GenerateRequest) -> GenerateResult:
        with self._lock:
            return self._generate(request)

    def _generate(self, request: GenerateRequest) -> GenerateResult:
        t0 = time.perf_counter()
        agent = request.agent_id
        if agent not in self.agents:
            raise ConfigError(f"unknown agent {agent!r}")
        prompt = list(request.prompt_tokens)
        self._validate_prompt(prompt)
        cfg = request.sampling
        policy = request.replay_policy
        hparams = request.hotspot or self.hotspot_params
        stream = RngStream(cfg.seed)
        key = StateKey.of(prompt)
        cost0 = self.cost.snapshot()
        self.generate_count += 1

        entry: CachedTrajectory | None = None
        if policy in (ReplayPolicy.STEP_WISE, ReplayPolicy.HOTSPOT):
            entry = self.cache.lookup(key)
            if entry is not None and entry.vocab_size != self.model.vocab_size:
                entry = None  # incompatible entry is a miss
        was_revisit = entry is not None

        out: list[int] = []
        replayed = 0
        diverged_at: int | None = None
        replayed_logits: np.ndarray | None = None
        if entry is not None:
            self.cache.pin(entry)
            try:
                limit = min(len(entry), cfg.max_tokens)
                if policy is ReplayPolicy.STEP_WISE:
                    for t in range(limit):
                        probs = truncate(
                            softmax(entry.logits_seq[t], cfg.temperature), cfg.top_k, cfg.top_p
                        )
                        y = sample(probs, stream)
                        out.append(y)
                        replayed = t + 1
                        if y != entry.token_seq[t]:
                            diverged_at = t
                            break
                else:
                    hotset = set(self.cache.hotspots_for(entry, cfg, hparams))
                    for t in range(limit):
                        if t in hotset:
                            probs = truncate(
                                softmax(entry.logits_seq[t], cfg.temperature),
                                cfg.top_k,
                                cfg.top_p,
                            )
                            y = sample(probs, stream)
                        else:
                            y = entry.token_seq[t]
                        out.append(y)
                        replayed = t + 1
                        if y != entry.token_seq[t]:
                            diverged_at = t
                            break
                if replayed:
                    replayed_logits = entry.logits_seq[:replayed]
            finally:
                self.cache.unpin(entry)

        new_rows: list[np.ndarray] = []
        prefill_input = 0
        matched = 0
        if len(out) < cfg.max_tokens:
            logits, ref, matched = self._prefill_internal(agent, prompt + out)
            prefill_input = len(prompt) + len(out)
            while True:
                new_rows.append(logits)
                probs = truncate(softmax(logits, cfg.temperature), cfg.top_k, cfg.top_p)
                y = sample(probs, stream)
                out.append(y)
                if len(out) >= cfg.max_tokens:
                    break
                logits = self._decode_internal(agent, ref, y)
            self.release(ref)

        if policy is not ReplayPolicy.NONE:
            if new_rows:
                z_new = np.stack(new_rows)
            else:
                z_new = np.empty((0, self.model.vocab_size), dtype=np.float32)
            merged = np.concatenate([replayed_logits, z_new]) if replayed else z_new
            self.cache.update(
                key,
                merged,
                out,
                round_index=self.tracker.round_index,
                prefetch_config=(cfg, hparams),
            )
            self.cache.drain_prefetch()

        cost1 = self.cost
        decode_req = cost1.decode_passes - cost0.decode_passes
        outcome = ReplayOutcome(
            replayed_len=replayed,
            diverged_at=diverged_at,
            total_len=len(out),
            forward_passes_saved=(len(out) - 1) - decode_req,
        )
        self.tracker.note_request(agent, len(prompt), len(out), prefill_input, matched)
        result = GenerateResult(
            request_id=request.request_id,
            agent_id=agent,
            tokens=out,
            outcome=outcome,
            was_revisit=was_revisit,
            prompt_len=len(prompt),
            prefill_passes=cost1.prefill_passes - cost0.prefill_passes,
            decode_passes=decode_req,
            prefill_tokens=cost1.prefill_tokens - cost0.prefill_tokens,
            matched_tokens=matched,
            prefill_input=prefill_input,
            wall_time_s=time.perf_counter() - t0,
        )
        self.request_log.append(result)
        return result
