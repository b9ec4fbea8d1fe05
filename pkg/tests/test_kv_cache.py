from __future__ import annotations

import pytest

from agentserve.errors import CapacityError
from agentserve.kv_cache import EvictionPolicy, PrefixTrie


def test_match_empty_trie():
    trie = PrefixTrie(100)
    assert trie.match_prefix([1, 2, 3]).matched == 0


def test_match_common_prefix():
    trie = PrefixTrie(100)
    mr = trie.match_prefix([1, 2, 3])
    trie.extend(mr.node, [1, 2, 3], "a")
    assert trie.match_prefix([1, 2, 9]).matched == 2
    assert trie.match_prefix([1, 2, 3]).matched == 3
    assert trie.match_prefix([9]).matched == 0


def test_match_reports_providers():
    trie = PrefixTrie(100)
    tail = trie.extend(trie.root, [1, 2], "a")
    trie.extend(tail, [3, 4], "b")
    mr = trie.match_prefix([1, 2, 3, 4, 5])
    assert mr.matched == 4
    assert mr.providers == {"a": 2, "b": 2}


def test_resident_accounting_and_capacity():
    trie = PrefixTrie(5)
    trie.extend(trie.root, [1, 2, 3], "a")
    assert trie.resident_tokens == 3
    assert trie.free_tokens == 2
    with pytest.raises(CapacityError):
        trie.extend(trie.root.children[1], [9, 9, 9], "a")


def test_append_token_dedups():
    trie = PrefixTrie(10)
    tail = trie.extend(trie.root, [1, 2], "a")
    n1, created1 = trie.append_token(tail, 3, "a")
    n2, created2 = trie.append_token(tail, 3, "b")
    assert created1 and not created2
    assert n1 is n2
    assert n1.owner == "a"  # first materializer owns the token
    assert trie.resident_tokens == 3


def test_evict_lru_order_and_leaf_first():
    trie = PrefixTrie(100)
    a_tail = trie.extend(trie.root, [1, 2], "a")      # older
    b_tail = trie.extend(trie.root, [3, 4], "b")      # newer
    freed = trie.evict(1, EvictionPolicy.LRU)
    assert freed == 1
    # the oldest leaf (token 2 under agent a) went first
    assert trie.eviction_log[0].token == 2
    assert trie.eviction_log[0].owner == "a"
    # its parent (token 1) survived because leaf-first
    assert 1 in trie.root.children


def test_evict_cascades_to_parent():
    trie = PrefixTrie(100)
    trie.extend(trie.root, [1, 2, 3], "a")
    trie.evict(3, EvictionPolicy.LRU)
    assert trie.resident_tokens == 0
    assert [e.token for e in trie.eviction_log] == [3, 2, 1]


def test_evict_skips_locked_nodes():
    trie = PrefixTrie(100)
    tail = trie.extend(trie.root, [1, 2], "a")
    trie.lock(tail)
    with pytest.raises(CapacityError):
        trie.evict(1, EvictionPolicy.LRU)
    trie.unlock(tail)
    assert trie.evict(1, EvictionPolicy.LRU) == 1


def test_agent_aware_prefers_low_scores():
    trie = PrefixTrie(100)
    trie.extend(trie.root, [1], "good")
    trie.extend(trie.root, [2], "bad")
    scores = {"good": 0.9, "bad": 0.1}
    trie.evict(1, EvictionPolicy.AGENT_AWARE, scores)
    assert trie.eviction_log[0].owner == "bad"


def test_agent_aware_equal_scores_is_lru():
    def build():
        trie = PrefixTrie(100)
        trie.extend(trie.root, [1, 2, 5], "a")
        trie.extend(trie.root, [3], "b")
        trie.extend(trie.root, [4, 7], "c")
        trie.match_prefix([1, 2])  # refresh part of agent a's path
        return trie

    t1, t2 = build(), build()
    t1.evict(4, EvictionPolicy.LRU)
    t2.evict(4, EvictionPolicy.AGENT_AWARE, {"a": 0.5, "b": 0.5, "c": 0.5})
    log1 = [(e.node_id, e.token, e.owner) for e in t1.eviction_log]
    log2 = [(e.node_id, e.token, e.owner) for e in t2.eviction_log]
    assert log1 == log2


def test_eviction_marks_nodes_not_resident():
    trie = PrefixTrie(100)
    tail = trie.extend(trie.root, [1, 2], "a")
    trie.evict(2, EvictionPolicy.LRU)
    assert not tail.resident
    assert trie.evicted_tokens == 2
    assert trie.evicted_by_owner == {"a": 2}


def test_path_tokens_roundtrip():
    trie = PrefixTrie(100)
    tail = trie.extend(trie.root, [5, 6, 7], "a")
    assert trie.path_tokens(tail) == [5, 6, 7]


def test_resident_never_exceeds_capacity_under_churn():
    trie = PrefixTrie(16)
    for i in range(50):
        seq = [i % 7, (i * 3) % 11, (i * 5) % 13]
        mr = trie.match_prefix(seq)
        needed = len(seq) - mr.matched
        if needed > trie.free_tokens:
            trie.evict(needed - trie.free_tokens, EvictionPolicy.LRU)
        trie.extend(mr.node, seq[mr.matched:], f"agent{i % 3}")
        assert trie.resident_tokens <= 16
    assert trie.inserted_tokens - trie.evicted_tokens == trie.resident_tokens
