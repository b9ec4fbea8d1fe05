"""Prefix-sharing KV store: a token trie (page size 1) with per-token agent
ownership, logical-clock recency, and pluggable eviction.

Recency uses a logical clock (one tick per trie operation), not wall time,
so eviction order is reproducible. Eviction is leaf-first and never removes
a locked node; under ``agent_aware`` the victim order is
``(owner score, last_access, node_id)`` ascending, which degrades exactly to
LRU when all scores are equal.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from enum import Enum

from .errors import CapacityError


class EvictionPolicy(str, Enum):
    LRU = "lru"
    AGENT_AWARE = "agent_aware"


class TrieNode:
    __slots__ = (
        "token",
        "owner",
        "parent",
        "children",
        "last_access",
        "lock_ref",
        "node_id",
        "resident",
    )

    def __init__(self, token: int, owner: str | None, parent: "TrieNode | None", clock: int, node_id: int):
        self.token = token
        self.owner = owner
        self.parent = parent
        self.children: dict[int, TrieNode] = {}
        self.last_access = clock
        self.lock_ref = 0
        self.node_id = node_id
        self.resident = True


@dataclass
class MatchResult:
    matched: int
    node: TrieNode
    #: Matched-token counts per owning agent along the path.
    providers: dict[str, int] = field(default_factory=dict)


@dataclass
class EvictionEvent:
    node_id: int
    token: int
    owner: str | None
    clock: int


class PrefixTrie:
    def __init__(self, capacity_tokens: int):
        if capacity_tokens < 1:
            raise CapacityError(f"capacity_tokens must be >= 1, got {capacity_tokens}")
        self.capacity_tokens = capacity_tokens
        self.root = TrieNode(-1, None, None, 0, 0)
        self.root.lock_ref = 1  # never evictable
        self.clock = 0
        self._next_node_id = 1
        self.resident_tokens = 0
        self.inserted_tokens = 0
        self.evicted_tokens = 0
        self.evicted_by_owner: dict[str, int] = {}
        self.eviction_log: list[EvictionEvent] = []

    # -- clock ---------------------------------------------------------------

    def _tick(self) -> int:
        self.clock += 1
        return self.clock

    # -- queries -------------------------------------------------------------

    def match_prefix(self, tokens) -> MatchResult:
        """Longest resident root path equal to a prefix of ``tokens``.

        Refreshes ``last_access`` along the matched path (one clock tick for
        the whole operation).
        """
        now = self._tick()
        node = self.root
        providers: dict[str, int] = {}
        matched = 0
        for t in tokens:
            child = node.children.get(t)
            if child is None:
                break
            child.last_access = now
            node = child
            matched += 1
            if child.owner is not None:
                providers[child.owner] = providers.get(child.owner, 0) + 1
        return MatchResult(matched, node, providers)

    @property
    def free_tokens(self) -> int:
        return self.capacity_tokens - self.resident_tokens

    # -- mutation ------------------------------------------------------------

    def extend(self, node: TrieNode, tokens, owner: str) -> TrieNode:
        """Materialize ``tokens`` as a chain below ``node``; caller has
        already ensured capacity."""
        if len(tokens) > self.free_tokens:
            raise CapacityError(
                f"need {len(tokens)} tokens but only {self.free_tokens} free"
            )
        now = self._tick()
        for t in tokens:
            child = TrieNode(t, owner, node, now, self._next_node_id)
            self._next_node_id += 1
            node.children[t] = child
            node = child
        count = len(tokens)
        self.resident_tokens += count
        self.inserted_tokens += count
        return node

    def append_token(self, node: TrieNode, token: int, owner: str) -> tuple[TrieNode, bool]:
        """Single-token fast path used by decode.

        Returns ``(node, created)``; an already-resident identical
        continuation is shared rather than duplicated.
        """
        existing = node.children.get(token)
        now = self._tick()
        if existing is not None:
            existing.last_access = now
            return existing, False
        if self.free_tokens < 1:
            raise CapacityError("no free tokens for decode append")
        child = TrieNode(token, owner, node, now, self._next_node_id)
        self._next_node_id += 1
        node.children[token] = child
        self.resident_tokens += 1
        self.inserted_tokens += 1
        return child, True

    def lock(self, node: TrieNode) -> None:
        node.lock_ref += 1

    def unlock(self, node: TrieNode) -> None:
        if node.lock_ref <= 0:
            raise RuntimeError("unlock() on a node with no locks")
        node.lock_ref -= 1

    def path_tokens(self, node: TrieNode) -> list[int]:
        out = []
        while node is not self.root:
            out.append(node.token)
            node = node.parent
        out.reverse()
        return out

    # -- eviction ------------------------------------------------------------

    def _leaves(self):
        stack = list(self.root.children.values())
        while stack:
            node = stack.pop()
            if node.children:
                stack.extend(node.children.values())
            elif node.lock_ref == 0:
                yield node

    def evict(
        self,
        needed_tokens: int,
        policy: EvictionPolicy,
        scores: dict[str, float] | None = None,
    ) -> int:
        """Free at least ``needed_tokens`` by removing leaves.

        Raises ``CapacityError`` if not enough unlocked tokens exist.
        """
        if needed_tokens <= 0:
            return 0
        if needed_tokens > self.capacity_tokens:
            raise CapacityError(
                f"cannot free {needed_tokens} tokens from capacity {self.capacity_tokens}"
            )
        scores = scores or {}

        if policy is EvictionPolicy.AGENT_AWARE:
            def key(n: TrieNode):
                return (scores.get(n.owner, 0.0), n.last_access, n.node_id)
        else:
            def key(n: TrieNode):
                return (n.last_access, n.node_id)

        heap = [(key(n), n) for n in self._leaves()]
        heapq.heapify(heap)
        freed = 0
        now = self._tick()
        while freed < needed_tokens and heap:
            _, node = heapq.heappop(heap)
            self._remove_leaf(node, now)
            freed += 1
            parent = node.parent
            if parent is not self.root and not parent.children and parent.lock_ref == 0:
                heapq.heappush(heap, (key(parent), parent))
        if freed < needed_tokens:
            raise CapacityError(
                f"could free only {freed} of {needed_tokens} tokens (rest locked)"
            )
        return freed

    def _remove_leaf(self, node: TrieNode, clock: int) -> None:
        del node.parent.children[node.token]
        node.resident = False
        self.resident_tokens -= 1
        self.evicted_tokens += 1
        if node.owner is not None:
            self.evicted_by_owner[node.owner] = self.evicted_by_owner.get(node.owner, 0) + 1
        self.eviction_log.append(EvictionEvent(node.node_id, node.token, node.owner, clock))
