"""Agent flow graphs and the asynchronous scheduling runtime.

A workflow document (JSON, ``schema_version`` 1) declares agents as finite
state machines: each state carries one action and the state it transitions
to when that action completes. Supervisors drive execution through four
callbacks — ``init`` provides the initial states when an agent is spawned,
``fire`` picks states to execute, ``commit`` receives each completed
transition, and ``wake`` reactivates states that were sleeping on another
agent's yield, resume, or completion.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable

from .engine import GenerateRequest, InferenceEngine
from .errors import CompileError, ConfigError, DeadlockError
from .logits_cache import ReplayPolicy
from .mixing import hash_tokens, mix2, stream_u64
from .sampling import SamplingConfig

SCHEMA_VERSION = 1

ACTIONS = {
    "llm_call",
    "spawn",
    "yield_value",
    "await_value",
    "resume",
    "next",
    "tool_stub",
    "terminal",
}


@dataclass(frozen=True)
class StateSpec:
    name: str
    action: str
    params: dict
    next: str | None


@dataclass
class FlowGraph:
    name: str
    initial: str
    states: dict[str, StateSpec]
    supervisor: dict = field(default_factory=lambda: {"kind": "linear"})

    @property
    def transition_count(self) -> int:
        return sum(1 for s in self.states.values() if s.next is not None)


# -- compilation -----------------------------------------------------------------


def _params_ok(agent: str, state: dict) -> None:
    action = state["action"]
    params = state.get("params", {})
    name = state["name"]
    if action == "llm_call":
        template = params.get("template", [])
        for item in template:
            if isinstance(item, int):
                continue
            if isinstance(item, dict) and isinstance(item.get("slot"), str):
                continue
            raise CompileError(
                f"agent {agent!r} state {name!r}: template items must be token "
                f"ids or {{'slot': name}}, got {item!r}"
            )
    elif action in ("resume", "next") and not params.get("peer"):
        raise CompileError(f"agent {agent!r} state {name!r}: {action} requires a peer")
    elif action == "spawn" and not params.get("agent"):
        raise CompileError(f"agent {agent!r} state {name!r}: spawn requires an agent")
    elif action == "tool_stub" and not params.get("name"):
        raise CompileError(f"agent {agent!r} state {name!r}: tool_stub requires a name")


def compile_agent(doc: dict, peer_names: set[str]) -> FlowGraph:
    """Validate one agent description and build its graph."""
    name = doc.get("name")
    if not name:
        raise CompileError("agent description missing a name")
    states_doc = doc.get("states", [])
    if not states_doc:
        raise CompileError(f"agent {name!r} declares no states")
    states: dict[str, StateSpec] = {}
    for s in states_doc:
        sname = s.get("name")
        if not sname:
            raise CompileError(f"agent {name!r}: state without a name")
        if sname in states:
            raise CompileError(f"agent {name!r}: duplicate state {sname!r}")
        action = s.get("action")
        if action not in ACTIONS:
            raise CompileError(f"agent {name!r} state {sname!r}: unknown action {action!r}")
        _params_ok(name, s)
        nxt = s.get("next")
        if action == "terminal" and nxt is not None:
            raise CompileError(f"agent {name!r}: terminal state {sname!r} has an outgoing transition")
        if action != "terminal" and nxt is None:
            raise CompileError(f"agent {name!r}: state {sname!r} has no next state")
        states[sname] = StateSpec(sname, action, dict(s.get("params", {})), nxt)

    initial = doc.get("initial")
    if initial is None or initial not in states:
        raise CompileError(f"agent {name!r}: initial state {initial!r} is not defined")
    for s in states.values():
        if s.next is not None and s.next not in states:
            raise CompileError(
                f"agent {name!r}: state {s.name!r} transitions to undefined state {s.next!r}"
            )
        if s.action in ("resume", "next"):
            peer = s.params["peer"]
            if peer not in peer_names:
                raise CompileError(
                    f"agent {name!r} state {s.name!r}: unknown peer {peer!r}"
                )
        if s.action == "spawn" and s.params["agent"] not in peer_names:
            raise CompileError(
                f"agent {name!r} state {s.name!r}: spawns unknown agent {s.params['agent']!r}"
            )
    reachable = {initial}
    frontier = [initial]
    while frontier:
        nxt = states[frontier.pop()].next
        if nxt is not None and nxt not in reachable:
            reachable.add(nxt)
            frontier.append(nxt)
    unreachable = sorted(set(states) - reachable)
    if unreachable:
        raise CompileError(f"agent {name!r}: unreachable states {unreachable}")
    return FlowGraph(name, initial, states, dict(doc.get("supervisor", {"kind": "linear"})))


def compile_document(document: dict) -> dict[str, FlowGraph]:
    """Compile a workflow document into one graph per agent."""
    if not isinstance(document, dict):
        raise CompileError("workflow document must be an object")
    version = document.get("schema_version")
    if version != SCHEMA_VERSION:
        raise CompileError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    agents = document.get("agents")
    if not agents:
        raise CompileError("workflow document declares no agents")
    names = {a.get("name") for a in agents}
    graphs = {}
    for doc in agents:
        graph = compile_agent(doc, names)
        graphs[graph.name] = graph
    return graphs


# -- runtime data ------------------------------------------------------------------


@dataclass
class Branch:
    branch_id: int
    instance: "AgentInstance"
    state: str
    context: dict[str, Any]
    dialogue: list[int]
    depth: int = 0
    status: str = "pending"  # pending | running | sleeping | finished | pruned
    waiting_on: tuple | None = None
    score: float = 0.0

    def clone(self, branch_id: int) -> "Branch":
        return Branch(
            branch_id=branch_id,
            instance=self.instance,
            state=self.state,
            context=dict(self.context),
            dialogue=list(self.dialogue),
            depth=self.depth,
        )


class AgentInstance:
    def __init__(self, instance_id: int, graph: FlowGraph, supervisor, parent=None, runtime=None):
        self.instance_id = instance_id
        self.graph = graph
        self.supervisor = supervisor
        self.runtime = runtime
        self.parent: AgentInstance | None = parent
        self.agent_id = graph.name
        self.branches: list[Branch] = []
        self.children: dict[str, list[AgentInstance]] = {}
        #: Yield broadcast queues, one per registered consumer instance.
        self.consumers: dict[int, list] = {}
        self.resume_queue: list = []
        self.finished = False
        self.result_dialogue: list[int] = []

    @property
    def current_states(self) -> set[str]:
        return {b.state for b in self.branches if b.status in ("pending", "sleeping", "running")}

    @property
    def status(self) -> str:
        if self.finished:
            return "finished"
        if any(b.status in ("pending", "running") for b in self.branches):
            return "running"
        return "sleeping"

    def register_consumer(self, consumer_id: int) -> list:
        return self.consumers.setdefault(consumer_id, [])


@dataclass
class StepReport:
    fired: int = 0
    committed: int = 0
    woke: int = 0
    slept: int = 0
    finished: list[int] = field(default_factory=list)


# -- supervisors ------------------------------------------------------------------


class LinearSupervisor:
    """Runs one branch straight through the graph."""

    def __init__(self):
        self.pending: list[Branch] = []

    def init(self, instance: AgentInstance, root: Branch) -> list[Branch]:
        self.pending.append(root)
        return [root]

    def fire(self, instance: AgentInstance) -> list[Branch]:
        out = [b for b in self.pending if b.status == "pending"]
        self.pending = []
        return out

    def commit(self, runtime: "FlowRuntime", branch: Branch, completed: StateSpec) -> None:
        if completed.next is None:
            runtime.finish_instance(branch.instance, branch)
        else:
            branch.state = completed.next
            self.pending.append(branch)

    def wake(self, branch: Branch) -> None:
        self.pending.append(branch)


# -- runtime -----------------------------------------------------------------------


def default_tool_tokens(name: str, vocab_size: int) -> list[int]:
    """Canned, deterministic output for an unregistered tool stub."""
    h = hash_tokens(name.encode("utf-8"))
    return [stream_u64(h, i) % vocab_size for i in range(4)]


class FlowRuntime:
    """Cooperative scheduler executing agent graphs against one engine."""

    def __init__(
        self,
        engine: InferenceEngine,
        run_seed: int = 0,
        workers: int = 1,
        tools: dict[str, list[int]] | None = None,
        default_sampling: SamplingConfig | None = None,
        default_replay: ReplayPolicy = ReplayPolicy.NONE,
        max_concurrent_expansions: int | None = None,
        supervisor_factory: Callable[[FlowGraph], Any] | None = None,
    ):
        self.engine = engine
        self.run_seed = run_seed
        self.workers = max(1, workers)
        self.tools = dict(tools or {})
        self.default_sampling = default_sampling or SamplingConfig(max_tokens=16)
        self.default_replay = default_replay
        self.max_concurrent_expansions = max_concurrent_expansions
        self.graphs: dict[str, FlowGraph] = {}
        self.instances: dict[int, AgentInstance] = {}
        self._next_instance = 1
        self._next_branch = 1
        self.llm_calls = 0
        self._supervisor_factory = supervisor_factory
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None
        self._pending_wakes: list[tuple] = []

    # -- registration --------------------------------------------------------------

    def load_document(self, document: dict) -> None:
        self.graphs.update(compile_document(document))

    def register_graph(self, graph: FlowGraph) -> None:
        self.graphs[graph.name] = graph

    def next_branch_id(self) -> int:
        bid = self._next_branch
        self._next_branch += 1
        return bid

    def _make_supervisor(self, graph: FlowGraph):
        if self._supervisor_factory is not None:
            made = self._supervisor_factory(graph)
            if made is not None:
                return made
        spec = graph.supervisor or {"kind": "linear"}
        kind = spec.get("kind", "linear")
        if kind == "linear":
            return LinearSupervisor()
        if kind == "tot":
            from .tot import ToTConfig, ToTSupervisor

            cfg = ToTConfig(
                branching=spec.get("branching", 2),
                beam=spec.get("beam", 1),
                max_depth=spec.get("max_depth", 1),
            )
            return ToTSupervisor(cfg, max_concurrent=self.max_concurrent_expansions)
        raise ConfigError(f"unknown supervisor kind {kind!r}")

    def spawn(
        self,
        agent_ref: str,
        parent: AgentInstance | None = None,
        prompt_tokens: list[int] | None = None,
    ) -> AgentInstance:
        graph = self.graphs.get(agent_ref)
        if graph is None:
            raise ConfigError(f"unknown agent {agent_ref!r}")
        instance = AgentInstance(
            self._next_instance, graph, self._make_supervisor(graph), parent, runtime=self
        )
        self._next_instance += 1
        self.instances[instance.instance_id] = instance
        self.engine.register_agent(instance.agent_id)
        if parent is not None:
            parent.children.setdefault(agent_ref, []).append(instance)
            instance.register_consumer(parent.instance_id)
        root = Branch(
            branch_id=self.next_branch_id(),
            instance=instance,
            state=graph.initial,
            context={},
            dialogue=list(prompt_tokens or []),
        )
        instance.branches.append(root)
        instance.supervisor.init(instance, root)
        return instance

    # -- stepping --------------------------------------------------------------------

    @property
    def live_instances(self) -> list[AgentInstance]:
        return [i for i in self.instances.values() if not i.finished]

    def step(self) -> StepReport:
        report = StepReport()
        fired: list[Branch] = []
        for inst in sorted(self.live_instances, key=lambda i: i.instance_id):
            for branch in inst.supervisor.fire(inst):
                branch.status = "running"
                fired.append(branch)
        fired.sort(key=lambda b: (b.instance.instance_id, b.state, b.branch_id))
        report.fired = len(fired)
        if not fired:
            sleeping = [
                b
                for inst in self.live_instances
                for b in inst.branches
                if b.status == "sleeping"
            ]
            if sleeping:
                raise DeadlockError(self._describe_cycle(sleeping))
            return report

        # logical concurrency per agent for this scheduler iteration
        llm_counts: dict[str, int] = {}
        for b in fired:
            if b.instance.graph.states[b.state].action == "llm_call":
                llm_counts[b.instance.agent_id] = llm_counts.get(b.instance.agent_id, 0) + 1
        for agent_id, n in llm_counts.items():
            self.engine.note_concurrency(agent_id, n)

        self._execute_batch(fired, report)
        return report

    def run(self, max_steps: int = 100_000) -> int:
        steps = 0
        while self.live_instances:
            if steps >= max_steps:
                raise RuntimeError(f"workflow did not finish within {max_steps} steps")
            self.step()
            steps += 1
        return steps

    # -- execution -------------------------------------------------------------------

    def _execute_batch(self, fired: list[Branch], report: StepReport) -> None:
        # llm transitions of sibling clones can run on the worker pool; their
        # prompts depend only on the (already frozen) branch snapshots.
        llm_branches = [
            b for b in fired if b.instance.graph.states[b.state].action == "llm_call"
        ]
        prepared = {}
        for b in llm_branches:
            prepared[b.branch_id] = self._prepare_llm(b)
        if self._pool is not None and len(llm_branches) > 1:
            futures = {
                b.branch_id: self._pool.submit(self.engine.generate, prepared[b.branch_id])
                for b in llm_branches
            }
            results = {bid: f.result() for bid, f in futures.items()}
        else:
            results = {
                b.branch_id: self.engine.generate(prepared[b.branch_id]) for b in llm_branches
            }
        for branch in fired:
            if branch.instance.finished:
                branch.status = "pruned"
                continue
            spec = branch.instance.graph.states[branch.state]
            if spec.action == "llm_call":
                self._apply_llm(branch, spec, prepared[branch.branch_id], results[branch.branch_id])
                report.committed += 1
            else:
                completed = self._execute_action(branch, spec)
                if completed:
                    report.committed += 1
                else:
                    report.slept += 1
            if branch.instance.finished and branch.instance.instance_id not in report.finished:
                report.finished.append(branch.instance.instance_id)
        report.woke = self._deliver_wakes()

    # -- llm calls --------------------------------------------------------------------

    def _render_template(self, branch: Branch, template) -> list[int]:
        out: list[int] = []
        for item in template:
            if isinstance(item, int):
                out.append(item)
            else:
                value = branch.context.get(item["slot"], [])
                out.extend(value if isinstance(value, list) else [value])
        return out

    def _prepare_llm(self, branch: Branch) -> GenerateRequest:
        spec = branch.instance.graph.states[branch.state]
        params = spec.params
        prompt = list(branch.dialogue) + self._render_template(branch, params.get("template", []))
        if not prompt:
            raise ConfigError(
                f"agent {branch.instance.agent_id!r} state {spec.name!r}: empty prompt"
            )
        call_index = self.llm_calls
        self.llm_calls += 1
        sampling_doc = params.get("sampling")
        base = (
            sampling_from_dict(sampling_doc, self.default_sampling)
            if sampling_doc
            else self.default_sampling
        )
        sampling = SamplingConfig(
            temperature=base.temperature,
            top_k=base.top_k,
            top_p=base.top_p,
            max_tokens=base.max_tokens,
            seed=mix2(self.run_seed, call_index),
        )
        policy = ReplayPolicy(params.get("replay_policy", self.default_replay))
        return GenerateRequest(
            agent_id=branch.instance.agent_id,
            prompt_tokens=prompt,
            sampling=sampling,
            replay_policy=policy,
            request_id=f"{branch.instance.agent_id}/{branch.instance.instance_id}/{branch.branch_id}/{call_index}",
        )

    def _apply_llm(self, branch: Branch, spec: StateSpec, request: GenerateRequest, result) -> None:
        # the rendered prompt joins the dialogue so later calls share its prefix
        branch.dialogue = list(request.prompt_tokens) + list(result.tokens)
        store = spec.params.get("store")
        if store:
            branch.context[store] = list(result.tokens)
        branch.status = "pending"
        branch.instance.supervisor.commit(self, branch, spec)

    # -- non-llm actions ---------------------------------------------------------------

    def _resolve_peer(self, branch: Branch, name: str) -> AgentInstance:
        inst = branch.instance
        kids = inst.children.get(name)
        if kids:
            return kids[-1]
        if inst.parent is not None and inst.parent.graph.name == name:
            return inst.parent
        candidates = sorted(
            (i for i in self.instances.values() if i.graph.name == name),
            key=lambda i: i.instance_id,
        )
        if not candidates:
            raise ConfigError(f"agent {inst.agent_id!r}: no instance of peer {name!r}")
        return candidates[0]

    def _value_of(self, branch: Branch, params: dict) -> list[int]:
        if "value" in params:
            return list(params["value"])
        key = params.get("value_from")
        value = branch.context.get(key, []) if key else []
        return list(value) if isinstance(value, list) else [value]

    def _execute_action(self, branch: Branch, spec: StateSpec) -> bool:
        """Run a non-llm action; returns False if the branch went to sleep."""
        inst = branch.instance
        params = spec.params
        action = spec.action
        if action == "spawn":
            child = self.spawn(params["agent"], parent=inst, prompt_tokens=params.get("prompt"))
            store = params.get("store")
            if store:
                branch.context[store] = child.instance_id
        elif action == "tool_stub":
            tokens = self.tools.get(
                params["name"], default_tool_tokens(params["name"], self.engine.model.vocab_size)
            )
            store = params.get("store")
            if store:
                branch.context[store] = list(tokens)
        elif action == "yield_value":
            value = self._value_of(branch, params)
            for queue in inst.consumers.values():
                queue.append(list(value))
            self._wake_watchers(("yield", inst.instance_id))
        elif action == "resume":
            peer = self._resolve_peer(branch, params["peer"])
            peer.resume_queue.append(self._value_of(branch, params))
            self._wake_watchers(("resume", peer.instance_id))
        elif action == "await_value":
            if not inst.resume_queue:
                branch.status = "sleeping"
                branch.waiting_on = ("resume", inst.instance_id)
                return False
            branch.context[params.get("store", "resumed")] = inst.resume_queue.pop(0)
        elif action == "next":
            peer = self._resolve_peer(branch, params["peer"])
            queue = peer.register_consumer(inst.instance_id)
            if queue:
                branch.context[params.get("store", "received")] = queue.pop(0)
            elif peer.finished:
                branch.context[params.get("store", "received")] = []
            else:
                branch.status = "sleeping"
                branch.waiting_on = ("yield", peer.instance_id)
                return False
        elif action == "terminal":
            pass
        else:  # pragma: no cover - compile() rejects unknown actions
            raise ConfigError(f"unknown action {action!r}")
        branch.status = "pending"
        branch.waiting_on = None
        branch.instance.supervisor.commit(self, branch, spec)
        return True

    # -- wakeups and termination ----------------------------------------------------------

    def _wake_watchers(self, event: tuple) -> None:
        self._pending_wakes.append(event)

    def _deliver_wakes(self) -> int:
        events = self._pending_wakes
        self._pending_wakes = []
        woke = 0
        for event in events:
            for inst in self.instances.values():
                for branch in inst.branches:
                    if branch.status == "sleeping" and branch.waiting_on == event:
                        branch.status = "pending"
                        branch.waiting_on = None
                        inst.supervisor.wake(branch)
                        woke += 1
        return woke

    def finish_instance(self, instance: AgentInstance, best: Branch) -> None:
        instance.finished = True
        instance.result_dialogue = list(best.dialogue)
        best.status = "finished"
        # wake anyone blocked on this instance's yields or completion
        self._wake_watchers(("yield", instance.instance_id))
        self._wake_watchers(("resume", instance.instance_id))

    def _describe_cycle(self, sleeping: list[Branch]) -> str:
        edges = []
        for b in sleeping:
            kind, target = b.waiting_on
            target_name = self.instances[target].agent_id if target in self.instances else "?"
            edges.append(
                f"{b.instance.agent_id}.{b.state} waits on {kind} from {target_name}"
            )
        return "deadlock: all agents sleeping with no pending wake: " + "; ".join(sorted(edges))


def sampling_from_dict(doc: dict, default: SamplingConfig) -> SamplingConfig:
    """Build a SamplingConfig from a JSON object, filling absent fields."""
    return SamplingConfig(
        temperature=doc.get("temperature", default.temperature),
        top_k=doc.get("top_k", default.top_k),
        top_p=doc.get("top_p", default.top_p),
        max_tokens=doc.get("max_tokens", default.max_tokens),
        seed=doc.get("seed", default.seed),
    )
