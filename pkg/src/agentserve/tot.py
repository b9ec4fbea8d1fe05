"""Tree-search supervisor: branching resampling with beam pruning.

Every llm-call state commit at depth ``d < max_depth`` triggers ``branching``
resample expansions from that state's prompt (so expansions after the first
hit the logits cache), committed children are scored by a deterministic
evaluator, and the top ``beam`` per depth survive. The same flow graph runs
unchanged under the linear supervisor; this supervisor only multiplies and
prunes branches.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .errors import ConfigError
from .flow import AgentInstance, Branch, FlowRuntime, StateSpec
from .mixing import SCORE_SALT, avalanche64, hash_tokens, unit_float

Evaluator = Callable[[list[int]], "float | tuple[float, bool]"]


def hash_score_evaluator(dialogue: list[int]) -> float:
    """Deterministic transcript score in [0, 1) derived from the token hash."""
    return unit_float(avalanche64(hash_tokens(dialogue) ^ SCORE_SALT))


@dataclass(frozen=True)
class ToTConfig:
    branching: int = 2
    beam: int = 1
    max_depth: int = 1
    evaluator: Evaluator = hash_score_evaluator

    def __post_init__(self):
        if self.branching < 1 or self.beam < 1 or self.max_depth < 1:
            raise ConfigError("branching, beam and max_depth must all be >= 1")


class ToTSupervisor:
    """Four-callback supervisor implementing branch-evaluate-prune search."""

    def __init__(self, config: ToTConfig, max_concurrent: int | None = None):
        self.config = config
        self.max_concurrent = max_concurrent
        #: Kept branches waiting to be expanded (or passed through).
        self.frontier: list[Branch] = []
        #: Concrete executions scheduled but not yet fired.
        self.to_fire: list[Branch] = []
        self.expected_commits = 0
        self.level_buffer: list[Branch] = []
        self.depth_kept: list[int] = []

    # -- callbacks ---------------------------------------------------------------

    def init(self, instance: AgentInstance, root: Branch) -> list[Branch]:
        self.frontier.append(root)
        return [root]

    def fire(self, instance: AgentInstance) -> list[Branch]:
        if not self.to_fire and self.frontier and self.expected_commits == 0:
            self._schedule_level(instance)
        if not self.to_fire:
            return []
        cap = self.max_concurrent or len(self.to_fire)
        out = self.to_fire[:cap]
        self.to_fire = self.to_fire[cap:]
        return out

    def _schedule_level(self, instance: AgentInstance) -> None:
        expansions: list[Branch] = []
        passthrough: list[Branch] = []
        for branch in self.frontier:
            spec = branch.instance.graph.states[branch.state]
            if spec.action == "llm_call" and branch.depth < self.config.max_depth:
                for _ in range(self.config.branching):
                    clone = branch.clone(self._new_branch_id(branch))
                    branch.instance.branches.append(clone)
                    expansions.append(clone)
                branch.status = "pruned"
            else:
                passthrough.append(branch)
        self.frontier = []
        if expansions:
            self.expected_commits = len(expansions)
            self.level_buffer = []
            self.to_fire.extend(expansions)
        self.to_fire.extend(passthrough)

    def _new_branch_id(self, branch: Branch) -> int:
        # branch ids must stay globally unique and ordered; the runtime owns them
        return branch.instance.runtime.next_branch_id()

    def commit(self, runtime: FlowRuntime, branch: Branch, completed: StateSpec) -> None:
        if completed.action == "llm_call":
            branch.depth += 1
            self.level_buffer.append(branch)
            self.expected_commits -= 1
            if self.expected_commits == 0 and not self.to_fire:
                self._finalize_level(runtime, branch.instance)
            return
        if completed.next is None:
            self._finish(runtime, branch.instance, [branch])
        else:
            branch.state = completed.next
            self.frontier.append(branch)

    def wake(self, branch: Branch) -> None:
        self.frontier.append(branch)

    # -- pruning -------------------------------------------------------------------

    def _evaluate(self, branch: Branch) -> tuple[float, bool]:
        result = self.config.evaluator(branch.dialogue)
        if isinstance(result, tuple):
            return float(result[0]), bool(result[1])
        return float(result), False

    def _finalize_level(self, runtime: FlowRuntime, instance: AgentInstance) -> None:
        scored = []
        accepted = []
        for branch in self.level_buffer:
            score, accept = self._evaluate(branch)
            branch.score = score
            scored.append(branch)
            if accept:
                accepted.append(branch)
        self.level_buffer = []
        scored.sort(key=lambda b: (-b.score, b.branch_id))
        kept = scored[: self.config.beam]
        for branch in scored[self.config.beam :]:
            branch.status = "pruned"
        self.depth_kept.append(len(kept))
        if accepted:
            accepted.sort(key=lambda b: (-b.score, b.branch_id))
            self._finish(runtime, instance, accepted)
            return
        if not kept:
            self._finish(runtime, instance, scored or [])
            return
        if kept[0].depth >= self.config.max_depth:
            self._finish(runtime, instance, kept)
            return
        # survivors advance past the llm state they just completed
        for branch in kept:
            spec = instance.graph.states[branch.state]
            if spec.next is None:
                self._finish(runtime, instance, kept)
                return
            branch.state = spec.next
            self.frontier.append(branch)

    def _finish(self, runtime: FlowRuntime, instance: AgentInstance, candidates: list[Branch]) -> None:
        best = sorted(candidates, key=lambda b: (-b.score, b.branch_id))[0]
        runtime.finish_instance(instance, best)
