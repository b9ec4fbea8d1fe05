"""Per-agent runtime profiling and contribution scoring.

Each agent accumulates a sliding window of per-round counters. Once per
round the tracker turns those into an intrinsic utility (activity, token
volume, cache efficiency, concurrency — product of min-max normalized
factors) and a collaborative utility (cross-agent KV reuse graph), then
publishes ``score = alpha * intrinsic + (1 - alpha) * collaborative`` to the
eviction policy.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

ALPHA = 0.4
#: Floor of the per-factor min-max normalization; keeps one weak factor from
#: zeroing the whole product.
FACTOR_FLOOR = 0.05
DEFAULT_WINDOW = 5


@dataclass
class RoundRecord:
    invocations: int = 0
    input_tokens: int = 0
    output_tokens: int = 0
    cached_prefix_tokens: int = 0
    total_input_tokens: int = 0
    concurrency_sum: int = 0
    concurrency_samples: int = 0
    peak_concurrency: int = 0

    @property
    def avg_concurrency(self) -> float:
        if self.concurrency_samples == 0:
            return 0.0
        return self.concurrency_sum / self.concurrency_samples


@dataclass
class AgentProfile:
    agent_id: str
    window_size: int = DEFAULT_WINDOW
    window: deque = field(default_factory=deque)
    current: RoundRecord = field(default_factory=RoundRecord)

    def roll(self) -> None:
        self.window.append(self.current)
        while len(self.window) > self.window_size:
            self.window.popleft()
        self.current = RoundRecord()


@dataclass
class RawFactors:
    activity: float
    workload: float
    efficiency: float
    concurrency: float


@dataclass
class ReuseEdge:
    provider: str
    consumer: str
    shared_tokens: int = 0
    events: int = 0


@dataclass
class ContributionScore:
    agent_id: str
    intrinsic: float
    collaborative: float
    score: float
    alpha: float = ALPHA


def raw_factors(profile: AgentProfile) -> RawFactors:
    """Window-aggregated raw factor values for one agent."""
    recs = list(profile.window)
    if not recs:
        return RawFactors(0.0, 0.0, 0.0, 0.0)
    activity = float(sum(r.invocations for r in recs))
    workload = float(sum(r.input_tokens + r.output_tokens for r in recs))
    cached = sum(r.cached_prefix_tokens for r in recs)
    total_in = sum(r.total_input_tokens for r in recs)
    efficiency = cached / max(1, total_in)
    avg_c = sum(r.avg_concurrency for r in recs) / len(recs)
    peak_c = float(max(r.peak_concurrency for r in recs))
    concurrency = (avg_c + peak_c) / 2.0
    return RawFactors(activity, workload, efficiency, concurrency)


def _minmax(value: float, lo: float, hi: float, floor: float = 0.0) -> float:
    """Min-max into [floor, 1]; a degenerate range maps to 1."""
    if hi == lo:
        return 1.0
    return floor + (1.0 - floor) * (value - lo) / (hi - lo)


def intrinsic_utility(profile: AgentProfile, all_profiles) -> float:
    """Normalized intrinsic utility of ``profile`` among ``all_profiles``."""
    factors = {p.agent_id: raw_factors(p) for p in all_profiles}
    products = {}
    for name in ("activity", "workload", "efficiency", "concurrency"):
        values = {a: getattr(f, name) for a, f in factors.items()}
        lo, hi = min(values.values()), max(values.values())
        for a, v in values.items():
            norm = _minmax(v, lo, hi, FACTOR_FLOOR)
            products[a] = products.get(a, 1.0) * norm
    lo, hi = min(products.values()), max(products.values())
    return _minmax(products[profile.agent_id], lo, hi)


def edge_weight(edge: ReuseEdge) -> float:
    """sqrt(shared tokens) damped volume times log(1 + events) repetition reward."""
    return math.sqrt(edge.shared_tokens) * math.log1p(edge.events)


def collaborative_raw(agent_ids, edges) -> dict[str, float]:
    """Unnormalized collaborative totals: reuse provided plus reuse received."""
    totals = {a: 0.0 for a in agent_ids}
    for edge in edges:
        if edge.provider == edge.consumer:
            continue
        w = edge_weight(edge)
        if edge.provider in totals:
            totals[edge.provider] += w
        if edge.consumer in totals:
            totals[edge.consumer] += w
    return totals


def collaborative_utility(agent_id: str, agent_ids, edges) -> float:
    """Min-max normalized collaborative utility among ``agent_ids``."""
    totals = collaborative_raw(agent_ids, edges)
    lo, hi = min(totals.values()), max(totals.values())
    return _minmax(totals[agent_id], lo, hi)


class ContributionTracker:
    """Collects per-round counters and reuse edges, and publishes scores."""

    def __init__(self, window_size: int = DEFAULT_WINDOW, alpha: float = ALPHA):
        self.window_size = window_size
        self.alpha = alpha
        self.profiles: dict[str, AgentProfile] = {}
        self.edges: dict[tuple[str, str], ReuseEdge] = {}
        self.round_index = 0
        self.scores: dict[str, float] = {}
        self.last_scores: list[ContributionScore] = []

    def register_agent(self, agent_id: str) -> None:
        if agent_id not in self.profiles:
            self.profiles[agent_id] = AgentProfile(agent_id, self.window_size)

    def note_request(
        self,
        agent_id: str,
        input_tokens: int,
        output_tokens: int,
        prefill_input: int,
        cached_prefix: int,
    ) -> None:
        self.register_agent(agent_id)
        rec = self.profiles[agent_id].current
        rec.invocations += 1
        rec.input_tokens += input_tokens
        rec.output_tokens += output_tokens
        rec.total_input_tokens += prefill_input
        rec.cached_prefix_tokens += cached_prefix

    def note_concurrency(self, agent_id: str, in_flight: int) -> None:
        self.register_agent(agent_id)
        rec = self.profiles[agent_id].current
        rec.concurrency_sum += in_flight
        rec.concurrency_samples += 1
        rec.peak_concurrency = max(rec.peak_concurrency, in_flight)

    def note_reuse(self, provider: str, consumer: str, shared_tokens: int) -> None:
        if provider == consumer or shared_tokens <= 0:
            return
        key = (provider, consumer)
        edge = self.edges.get(key)
        if edge is None:
            edge = self.edges[key] = ReuseEdge(provider, consumer)
        edge.shared_tokens += shared_tokens
        edge.events += 1

    def contribution_scores(self) -> list[ContributionScore]:
        """Score every registered agent from the current windows and edges."""
        profiles = list(self.profiles.values())
        if not profiles:
            return []
        agent_ids = [p.agent_id for p in profiles]
        edges = list(self.edges.values())
        out = []
        for p in profiles:
            u = intrinsic_utility(p, profiles)
            c = collaborative_utility(p.agent_id, agent_ids, edges)
            out.append(
                ContributionScore(
                    p.agent_id, u, c, self.alpha * u + (1 - self.alpha) * c, self.alpha
                )
            )
        return out

    def end_round(self) -> list[ContributionScore]:
        """Roll windows forward, recompute and publish scores."""
        for p in self.profiles.values():
            p.roll()
        self.round_index += 1
        self.last_scores = self.contribution_scores()
        self.scores = {s.agent_id: s.score for s in self.last_scores}
        return self.last_scores
