"""Synthetic workload generators.

Two workloads drive the experiments:

* ``tot_resample`` — independent puzzle-style prompts (mean length ~64.5
  tokens), each explored by the tree-search supervisor with a fixed output
  length per expansion, producing repeated resampling from shared states.
* ``r3a_workflow`` — a scripted five-agent repair loop (decision, patcher,
  viewer, summary, searcher) with a static invocation structure per round:
  the main path iterates decision -> patcher -> viewer (each extending the
  previous transcript), role contexts are re-touched once per round, and the
  searcher injects a large transient prompt consolidated by the summary
  agent. Invocations and token volume concentrate (>70%) in the hot agents.
"""

from __future__ import annotations

from dataclasses import dataclass

from .mixing import RngStream, mix2

#: Token id range used for synthetic "text" (kept below every vocab we ship).
_TOKEN_SPACE = 256

HOT_AGENTS = ("decision", "patcher", "viewer")
COLD_AGENTS = ("summary", "searcher")
R3A_AGENTS = HOT_AGENTS + COLD_AGENTS
#: Agents whose KV tokens the scheduler experiments treat as hotspot-owned.
R3A_HOTSPOT_AGENTS = frozenset({"patcher", "viewer"})


def _tokens(stream: RngStream, n: int, vocab: int = _TOKEN_SPACE) -> list[int]:
    return [int(stream.next_float() * vocab) for _ in range(n)]


# -- tree-search resampling workload ------------------------------------------------


@dataclass(frozen=True)
class ToTInstance:
    instance_id: int
    prompt_tokens: tuple[int, ...]


@dataclass(frozen=True)
class ToTWorkload:
    instances: tuple[ToTInstance, ...]
    branching: int = 3
    beam: int = 1
    max_depth: int = 2
    output_tokens: int = 500

    def solver_document(self) -> dict:
        """Workflow document for one puzzle: a chain of llm expansions."""
        states = []
        for d in range(1, self.max_depth + 1):
            nxt = f"expand_{d + 1}" if d < self.max_depth else "end"
            states.append({"name": f"expand_{d}", "action": "llm_call", "params": {}, "next": nxt})
        states.append({"name": "end", "action": "terminal", "params": {}})
        return {
            "schema_version": 1,
            "agents": [
                {
                    "name": "solver",
                    "initial": "expand_1",
                    "supervisor": {
                        "kind": "tot",
                        "branching": self.branching,
                        "beam": self.beam,
                        "max_depth": self.max_depth,
                    },
                    "states": states,
                }
            ],
        }


def gen_tot_workload(
    n_instances: int,
    seed: int,
    branching: int = 3,
    beam: int = 1,
    max_depth: int = 2,
    output_tokens: int = 500,
    vocab: int = _TOKEN_SPACE,
) -> ToTWorkload:
    """Puzzle prompts with lengths uniform in [49, 80] (mean 64.5)."""
    if n_instances < 1:
        raise ValueError("n_instances must be >= 1")
    instances = []
    for i in range(n_instances):
        stream = RngStream(mix2(seed, i))
        length = 49 + int(stream.next_float() * 32)
        instances.append(ToTInstance(i, tuple(_tokens(stream, length, vocab))))
    return ToTWorkload(tuple(instances), branching, beam, max_depth, output_tokens)


# -- scripted multi-agent workflow ----------------------------------------------------


@dataclass(frozen=True)
class ScriptedRequest:
    agent: str
    #: "tokens" -> literal prompt; "extend" -> previous full transcript of
    #: ``source`` agent, then ``extra`` tokens appended.
    kind: str
    extra: tuple[int, ...]
    source: str | None = None
    splice_output_of: str | None = None
    output_tokens: int = 32


@dataclass(frozen=True)
class R3aWorkload:
    rounds: tuple[tuple[ScriptedRequest, ...], ...]
    hotspot_agents: frozenset[str] = R3A_HOTSPOT_AGENTS
    agents: tuple[str, ...] = R3A_AGENTS


def gen_r3a_workload(
    rounds: int,
    seed: int,
    iterations_per_round: int = 3,
    searcher_chunk: int = 224,
    searcher_chunks: int = 3,
    task_pool: int = 3,
    decision_context: int = 320,
    patcher_context: int = 512,
    viewer_context: int = 640,
    decision_output: int = 48,
    patcher_output: int = 64,
    viewer_output: int = 48,
    vocab: int = _TOKEN_SPACE,
) -> R3aWorkload:
    """Static five-agent script over a revolving pool of repair tasks.

    Round ``r`` works on task ``r % task_pool``: the hot agents re-open that
    task's role contexts (last touched ``task_pool`` rounds ago) and iterate
    the decision -> patcher -> viewer loop on top of them. The searcher
    accumulates a retrieval spike over ``searcher_chunks`` self-extending
    requests; the summary consolidates it immediately, after which the whole
    spike is dead weight that a recency-only policy nevertheless retains.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    base = RngStream(mix2(seed, 0x52334))
    tasks = []
    for j in range(task_pool):
        tasks.append(
            {
                "decision": tuple(_tokens(base, decision_context, vocab)),
                "patcher": tuple(_tokens(base, patcher_context, vocab)),
                "viewer": tuple(_tokens(base, viewer_context, vocab)),
            }
        )
    script: list[tuple[ScriptedRequest, ...]] = []
    for r in range(rounds):
        ctx = tasks[r % task_pool]
        stream = RngStream(mix2(seed, r + 1))
        marker = tuple(_tokens(stream, 4, vocab))
        reqs: list[ScriptedRequest] = []
        # retrieval spike first: chunked accumulation, then consolidation
        for c in range(searcher_chunks):
            chunk = tuple(_tokens(stream, searcher_chunk, vocab))
            if c == 0:
                reqs.append(ScriptedRequest("searcher", "tokens", chunk, output_tokens=16))
            else:
                reqs.append(
                    ScriptedRequest("searcher", "extend", chunk, source="searcher", output_tokens=16)
                )
        reqs.append(
            ScriptedRequest(
                "summary", "extend", tuple(_tokens(stream, 8, vocab)),
                source="searcher", output_tokens=32,
            )
        )
        # task contexts re-opened for this round's task; these are the KV
        # states a recency-only policy loses to the dead-but-recent spike
        reqs.append(ScriptedRequest("patcher", "tokens", ctx["patcher"] + marker, output_tokens=16))
        reqs.append(ScriptedRequest("viewer", "tokens", ctx["viewer"] + marker, output_tokens=16))
        for i in range(iterations_per_round):
            state = tuple(_tokens(stream, 12, vocab))
            if i == 0:
                reqs.append(
                    ScriptedRequest(
                        "decision", "tokens", ctx["decision"] + marker + state,
                        output_tokens=decision_output,
                    )
                )
            else:
                reqs.append(
                    ScriptedRequest(
                        "decision",
                        "extend",
                        state,
                        source="decision",
                        splice_output_of="viewer",
                        output_tokens=decision_output,
                    )
                )
            reqs.append(
                ScriptedRequest(
                    "patcher", "extend", tuple(_tokens(stream, 8, vocab)),
                    source="decision", output_tokens=patcher_output,
                )
            )
            reqs.append(
                ScriptedRequest(
                    "viewer", "extend", tuple(_tokens(stream, 8, vocab)),
                    source="patcher", output_tokens=viewer_output,
                )
            )
        script.append(tuple(reqs))
    return R3aWorkload(tuple(script))


def script_token_stats(workload: R3aWorkload) -> dict:
    """Invocation and prompt-token shares of the hot agent subset."""
    hot_inv = cold_inv = 0
    hot_tokens = cold_tokens = 0.0
    for round_reqs in workload.rounds:
        transcripts: dict[str, float] = {}
        for req in round_reqs:
            if req.kind == "tokens":
                length = len(req.extra)
            else:
                length = transcripts.get(req.source, 0.0) + len(req.extra)
                if req.splice_output_of:
                    length += 24  # viewer output size
            transcripts[req.agent] = length + req.output_tokens
            hot = req.agent in HOT_AGENTS
            if hot:
                hot_inv += 1
                hot_tokens += length + req.output_tokens
            else:
                cold_inv += 1
                cold_tokens += length + req.output_tokens
    return {
        "hot_invocation_share": hot_inv / (hot_inv + cold_inv),
        "hot_token_share": hot_tokens / (hot_tokens + cold_tokens),
    }
