"""Experiment orchestration: config, cell execution, and reporting.

A run evaluates a grid of cells. For the resampling workload a cell is
``(replay policy, temperature, seed)``; for the multi-agent workflow it is
``(eviction policy, seed)``. Reports are written as CSV row files plus a
JSON summary whose statistics are recomputable from the rows; wall-clock
timings go to a sidecar file so the row files stay byte-identical across
reruns of the same config.
"""

from __future__ import annotations

import csv
import json
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

from .engine import GenerateRequest, GenerateResult, InferenceEngine, RoundMetrics
from .errors import ConfigError
from .flow import FlowRuntime
from .kv_cache import EvictionPolicy
from .logits_cache import ReplayPolicy
from .mixing import mix2
from .model import ModelConfig
from .sampling import HotspotParams, SamplingConfig
from .workloads import R3A_AGENTS, R3A_HOTSPOT_AGENTS, gen_r3a_workload, gen_tot_workload

SCHEMA_VERSION = 1

POLICY_ALIASES = {
    "none": ReplayPolicy.NONE,
    "step": ReplayPolicy.STEP_WISE,
    "step_wise": ReplayPolicy.STEP_WISE,
    "hotspot": ReplayPolicy.HOTSPOT,
}
EVICTION_ALIASES = {
    "lru": EvictionPolicy.LRU,
    "agent": EvictionPolicy.AGENT_AWARE,
    "agent_aware": EvictionPolicy.AGENT_AWARE,
}

REQUEST_COLUMNS = [
    "workload", "policy", "eviction", "temperature", "seed", "round",
    "request_id", "agent_id", "is_revisit", "excluded", "prompt_len",
    "total_len", "replayed_len", "hit_ratio", "diverged_at",
    "prefill_passes", "decode_passes", "prefill_tokens", "matched_tokens",
    "prefill_input", "forward_passes_saved", "speedup",
]
ROUND_COLUMNS = [
    "workload", "eviction", "temperature", "seed", "round",
    "hotspot_hit_rate", "non_hotspot_hit_rate", "hotspot_matched",
    "hotspot_input", "non_hotspot_matched", "non_hotspot_input",
    "evicted_tokens", "evicted_hotspot_tokens", "resident_tokens",
]
SCORE_COLUMNS = [
    "workload", "eviction", "seed", "round", "agent_id",
    "intrinsic", "collaborative", "score",
]
TIMING_COLUMNS = ["workload", "policy", "eviction", "temperature", "seed", "request_id", "wall_time_s"]


@dataclass
class ExperimentConfig:
    model: ModelConfig
    workload: str = "tot_resample"
    temperatures: tuple[float, ...] = (0.6,)
    policies: tuple[str, ...] = ("none", "step", "hotspot")
    evictions: tuple[str, ...] = ("lru", "agent")
    seeds: tuple[int, ...] = (1,)
    n_instances: int = 100
    rounds: int = 21
    capacity_tokens: int = 5000
    tot_capacity_tokens: int = 2_000_000
    logits_cache_mb: int = 2048
    hotspot: HotspotParams = field(default_factory=HotspotParams)
    branching: int = 3
    beam: int = 1
    max_depth: int = 2
    output_tokens: int = 500
    top_p: float = 1.0
    top_k: int | None = None
    workers: int = 1
    profile_window: int = 5

    def __post_init__(self):
        if self.workload not in ("tot_resample", "r3a_workflow"):
            raise ConfigError(f"unknown workload {self.workload!r}")
        if not self.temperatures:
            raise ConfigError("temperature grid must be non-empty")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.policies and self.workload == "tot_resample":
            raise ConfigError("at least one replay policy is required")
        if not self.evictions and self.workload == "r3a_workflow":
            raise ConfigError("at least one eviction policy is required")
        for p in self.policies:
            if p not in POLICY_ALIASES:
                raise ConfigError(f"unknown replay policy {p!r}")
        for e in self.evictions:
            if e not in EVICTION_ALIASES:
                raise ConfigError(f"unknown eviction policy {e!r}")
        longest = self._longest_request_bound()
        cap = self.capacity_tokens if self.workload == "r3a_workflow" else self.tot_capacity_tokens
        if cap <= longest:
            raise ConfigError(
                f"capacity_tokens {cap} must exceed the longest single request (~{longest})"
            )

    def _longest_request_bound(self) -> int:
        if self.workload == "tot_resample":
            return 81 + self.max_depth * self.output_tokens
        return 1024 + 64  # searcher spike prompt plus its consolidation

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        model_doc = doc.get("model", {})
        if "seed" not in model_doc:
            raise ConfigError("config.model.seed is required")
        hotspot_doc = doc.get("hotspot", {})
        known = {
            "workload", "temperatures", "policies", "evictions", "seeds",
            "n_instances", "rounds", "capacity_tokens", "tot_capacity_tokens",
            "logits_cache_mb", "branching", "beam", "max_depth",
            "output_tokens", "top_p", "top_k", "workers", "profile_window",
        }
        kwargs = {k: v for k, v in doc.items() if k in known}
        for key in ("temperatures", "policies", "evictions", "seeds"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(
            model=ModelConfig(**model_doc),
            hotspot=HotspotParams(
                decay=hotspot_doc.get("decay", 0.01),
                threshold=hotspot_doc.get("threshold", 0.6),
                max_hotspots=hotspot_doc.get("max_hotspots"),
            ),
            **kwargs,
        )

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc)


@dataclass
class RunReport:
    request_rows: list[dict] = field(default_factory=list)
    round_rows: list[dict] = field(default_factory=list)
    score_rows: list[dict] = field(default_factory=list)
    timing_rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / "requests.csv", REQUEST_COLUMNS, self.request_rows)
        _write_csv(out / "rounds.csv", ROUND_COLUMNS, self.round_rows)
        _write_csv(out / "scores.csv", SCORE_COLUMNS, self.score_rows)
        _write_csv(out / "timings.csv", TIMING_COLUMNS, self.timing_rows)
        (out / "summary.json").write_text(json.dumps(self.summary, indent=2, sort_keys=True))


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _fmt(value) -> object:
    if isinstance(value, float):
        return f"{value:.9g}"
    if value is None:
        return ""
    return value


def _request_row(cell: dict, res: GenerateResult, round_index: int) -> dict:
    total = res.outcome.total_len
    passes = res.prefill_passes + res.decode_passes
    excluded = res.was_revisit and res.outcome.hit_ratio == 1.0
    speedup = total / passes if passes > 0 else None
    row = {
        **cell,
        "round": round_index,
        "request_id": res.request_id,
        "agent_id": res.agent_id,
        "is_revisit": int(res.was_revisit),
        "excluded": int(excluded),
        "prompt_len": res.prompt_len,
        "total_len": total,
        "replayed_len": res.outcome.replayed_len,
        "hit_ratio": _fmt(res.outcome.hit_ratio),
        "diverged_at": _fmt(res.outcome.diverged_at),
        "prefill_passes": res.prefill_passes,
        "decode_passes": res.decode_passes,
        "prefill_tokens": res.prefill_tokens,
        "matched_tokens": res.matched_tokens,
        "prefill_input": res.prefill_input,
        "forward_passes_saved": res.outcome.forward_passes_saved,
        "speedup": _fmt(speedup),
    }
    return row


# -- cell drivers ---------------------------------------------------------------


def run_tot_cell(
    config: ExperimentConfig, policy_name: str, temperature: float, seed: int
) -> tuple[list[GenerateResult], dict]:
    policy = POLICY_ALIASES[policy_name]
    engine = InferenceEngine(
        config.model,
        capacity_tokens=config.tot_capacity_tokens,
        eviction=EvictionPolicy.LRU,
        logits_budget_bytes=config.logits_cache_mb << 20,
        hotspot_params=config.hotspot,
        profile_window=config.profile_window,
    )
    workload = gen_tot_workload(
        config.n_instances,
        seed,
        branching=config.branching,
        beam=config.beam,
        max_depth=config.max_depth,
        output_tokens=config.output_tokens,
        vocab=config.model.vocab_size,
    )
    sampling = SamplingConfig(
        temperature=temperature,
        top_k=config.top_k,
        top_p=config.top_p,
        max_tokens=config.output_tokens,
        seed=0,
    )
    runtime = FlowRuntime(
        engine,
        run_seed=mix2(seed, 0xCE11),
        workers=config.workers,
        default_sampling=sampling,
        default_replay=policy,
    )
    runtime.load_document(workload.solver_document())
    t0 = time.perf_counter()
    for instance in workload.instances:
        runtime.spawn("solver", prompt_tokens=list(instance.prompt_tokens))
        runtime.run()
        engine.end_round()
    wall = time.perf_counter() - t0
    stats = {
        "wall_seconds": wall,
        "llm_calls": engine.generate_count,
        "prefill_passes": engine.cost.prefill_passes,
        "decode_passes": engine.cost.decode_passes,
    }
    return list(engine.request_log), stats


def run_r3a_cell(
    config: ExperimentConfig, eviction_name: str, temperature: float, seed: int
) -> tuple[list[GenerateResult], list[RoundMetrics], dict]:
    eviction = EVICTION_ALIASES[eviction_name]
    engine = InferenceEngine(
        config.model,
        capacity_tokens=config.capacity_tokens,
        eviction=eviction,
        logits_budget_bytes=config.logits_cache_mb << 20,
        hotspot_params=config.hotspot,
        profile_window=config.profile_window,
        hotspot_agents=R3A_HOTSPOT_AGENTS,
    )
    for agent in R3A_AGENTS:
        engine.register_agent(agent)
    workload = gen_r3a_workload(config.rounds, seed, vocab=config.model.vocab_size)
    transcripts: dict[str, list[int]] = {}
    counter = 0
    t0 = time.perf_counter()
    for round_index, round_reqs in enumerate(workload.rounds):
        for sreq in round_reqs:
            if sreq.kind == "tokens":
                prompt = list(sreq.extra)
            else:
                prompt = list(transcripts[sreq.source])
                if sreq.splice_output_of:
                    prompt.extend(transcripts[sreq.splice_output_of][-24:])
                prompt.extend(sreq.extra)
            request = GenerateRequest(
                agent_id=sreq.agent,
                prompt_tokens=prompt,
                sampling=SamplingConfig(
                    temperature=temperature,
                    top_k=config.top_k,
                    top_p=config.top_p,
                    max_tokens=sreq.output_tokens,
                    seed=mix2(seed, counter),
                ),
                replay_policy=ReplayPolicy.NONE,
                request_id=f"r{round_index}/{counter}",
            )
            res = engine.generate(request)
            transcripts[sreq.agent] = prompt + res.tokens
            counter += 1
        engine.end_round()
    wall = time.perf_counter() - t0
    stats = {"wall_seconds": wall, **engine.cache_metrics()}
    return list(engine.request_log), list(engine.round_rows), stats


# -- summaries --------------------------------------------------------------------


def _mean(values):
    values = list(values)
    return sum(values) / len(values) if values else None

def _median(values):
    values = list(values)
    return statistics.median(values) if values else None


def summarize_request_rows(rows: list[dict]) -> dict:
    """Cell statistics from request rows (works on parsed CSV rows too)."""

    def f(row, key):
        return float(row[key])

    revisits = [r for r in rows if int(r["is_revisit"])]
    included = [r for r in revisits if not int(r["excluded"])]
    policy_none = rows and all(r["policy"] == "none" for r in rows)
    speedup_base = rows if policy_none else included
    speedups = [f(r, "speedup") for r in speedup_base if r["speedup"] not in ("", None)]
    tokens = sum(int(r["total_len"]) for r in rows)
    passes = sum(int(r["prefill_passes"]) + int(r["decode_passes"]) for r in rows)
    return {
        "n_requests": len(rows),
        "n_revisits": len(revisits),
        "n_excluded_full_hits": len(revisits) - len(included),
        "mean_hit_ratio": _mean(f(r, "hit_ratio") for r in included),
        "p50_hit_ratio": _median(f(r, "hit_ratio") for r in included),
        "mean_replayed_len": _mean(f(r, "replayed_len") for r in revisits),
        "mean_speedup": _mean(speedups),
        "p50_speedup": _median(speedups),
        "total_tokens": tokens,
        "total_passes": passes,
        "pass_tps_proxy": tokens / passes if passes else None,
    }


def summarize_round_rows(rows: list[dict]) -> dict:
    hot_m = sum(int(r["hotspot_matched"]) for r in rows)
    hot_i = sum(int(r["hotspot_input"]) for r in rows)
    non_m = sum(int(r["non_hotspot_matched"]) for r in rows)
    non_i = sum(int(r["non_hotspot_input"]) for r in rows)
    return {
        "hotspot_hit_rate": hot_m / hot_i if hot_i else None,
        "non_hotspot_hit_rate": non_m / non_i if non_i else None,
        "evicted_tokens": sum(int(r["evicted_tokens"]) for r in rows),
        "evicted_hotspot_tokens": sum(int(r["evicted_hotspot_tokens"]) for r in rows),
    }


# -- experiment -----------------------------------------------------------------------


def run_experiment(config: ExperimentConfig) -> RunReport:
    report = RunReport()
    errors: list[dict] = []
    cells: list[dict] = []
    if config.workload == "tot_resample":
        grid = [
            {"policy": p, "eviction": "lru", "temperature": t, "seed": s}
            for p in config.policies
            for t in config.temperatures
            for s in config.seeds
        ]
    else:
        grid = [
            {"policy": "none", "eviction": e, "temperature": config.temperatures[0], "seed": s}
            for e in config.evictions
            for s in config.seeds
        ]

    for cell_key in grid:
        cell = {"workload": config.workload, **cell_key}
        try:
            if config.workload == "tot_resample":
                results, stats = run_tot_cell(
                    config, cell_key["policy"], cell_key["temperature"], cell_key["seed"]
                )
                round_rows: list[RoundMetrics] = []
            else:
                results, round_rows, stats = run_r3a_cell(
                    config, cell_key["eviction"], cell_key["temperature"], cell_key["seed"]
                )
        except Exception as exc:  # partial failure: record and continue
            errors.append({"cell": cell, "error": f"{type(exc).__name__}: {exc}"})
            continue
        rows = []
        for res in results:
            round_index = int(res.request_id.split("/")[0][1:]) if res.request_id.startswith("r") else -1
            row = _request_row(cell, res, round_index)
            rows.append(row)
            report.timing_rows.append(
                {**cell, "request_id": res.request_id, "wall_time_s": f"{res.wall_time_s:.6f}"}
            )
        report.request_rows.extend(rows)
        cell_summary = {**cell, **summarize_request_rows(rows)}
        for rm in round_rows:
            report.round_rows.append(
                {
                    "workload": cell["workload"],
                    "eviction": cell["eviction"],
                    "temperature": cell["temperature"],
                    "seed": cell["seed"],
                    "round": rm.round_index,
                    "hotspot_hit_rate": _fmt(rm.hotspot_hit_rate),
                    "non_hotspot_hit_rate": _fmt(rm.non_hotspot_hit_rate),
                    "hotspot_matched": rm.hotspot_matched,
                    "hotspot_input": rm.hotspot_input,
                    "non_hotspot_matched": rm.non_hotspot_matched,
                    "non_hotspot_input": rm.non_hotspot_input,
                    "evicted_tokens": rm.evicted_tokens,
                    "evicted_hotspot_tokens": rm.evicted_hotspot_tokens,
                    "resident_tokens": rm.resident_tokens,
                }
            )
            for score in rm.scores:
                report.score_rows.append(
                    {
                        "workload": cell["workload"],
                        "eviction": cell["eviction"],
                        "seed": cell["seed"],
                        "round": rm.round_index,
                        "agent_id": score.agent_id,
                        "intrinsic": _fmt(score.intrinsic),
                        "collaborative": _fmt(score.collaborative),
                        "score": _fmt(score.score),
                    }
                )
        if round_rows:
            cell_summary.update(
                summarize_round_rows(report.round_rows[-len(round_rows):])
            )
        cell_summary["wall_seconds"] = stats.get("wall_seconds")
        cells.append(cell_summary)

    report.summary = {
        "schema_version": SCHEMA_VERSION,
        "cells": cells,
        "errors": errors,
    }
    return report


def resummarize(report_dir: str | Path) -> dict:
    """Recompute the summary from row files (the ``report`` subcommand)."""
    out = Path(report_dir)
    request_rows = _read_csv(out / "requests.csv")
    round_rows = _read_csv(out / "rounds.csv")
    cells = []
    keys = sorted({(r["workload"], r["policy"], r["eviction"], r["temperature"], r["seed"]) for r in request_rows})
    for key in keys:
        workload, policy, eviction, temperature, seed = key
        rows = [
            r
            for r in request_rows
            if (r["workload"], r["policy"], r["eviction"], r["temperature"], r["seed"]) == key
        ]
        cell = {
            "workload": workload,
            "policy": policy,
            "eviction": eviction,
            "temperature": float(temperature),
            "seed": int(seed),
            **summarize_request_rows(rows),
        }
        cell_rounds = [
            r
            for r in round_rows
            if (r["workload"], r["eviction"], r["seed"]) == (workload, eviction, seed)
        ]
        if cell_rounds:
            cell.update(summarize_round_rows(cell_rounds))
        cells.append(cell)
    return {"schema_version": SCHEMA_VERSION, "cells": cells, "errors": []}


def _read_csv(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with path.open() as fh:
        return list(csv.DictReader(fh))
