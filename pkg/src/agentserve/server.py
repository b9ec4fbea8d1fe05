"""Newline-delimited JSON request protocol over stdio or a local TCP socket.

Each connection owns one engine instance. Messages carry a ``type`` field:
``register_agent``, ``define_workflow``, ``generate``, ``run_workflow`` and
``metrics``. Responses echo ``request_id`` where present; malformed input
produces a structured error and keeps the connection open.
"""

from __future__ import annotations

import json
import socketserver
from dataclasses import dataclass, field

from .engine import GenerateRequest, InferenceEngine
from .errors import CapacityError, CompileError, ConfigError
from .flow import FlowRuntime, sampling_from_dict
from .harness import EVICTION_ALIASES, POLICY_ALIASES, summarize_request_rows, _request_row
from .kv_cache import EvictionPolicy
from .model import ModelConfig
from .sampling import HotspotParams, SamplingConfig

PROTOCOL_VERSION = 1


@dataclass
class ServerSettings:
    model: ModelConfig = field(default_factory=lambda: ModelConfig(seed=7))
    capacity_tokens: int = 1_000_000
    eviction: EvictionPolicy = EvictionPolicy.LRU
    logits_cache_mb: int = 1024
    hotspot: HotspotParams = field(default_factory=HotspotParams)
    default_sampling: SamplingConfig = field(default_factory=lambda: SamplingConfig(max_tokens=16))
    workers: int = 1

    @classmethod
    def from_dict(cls, doc: dict) -> "ServerSettings":
        model_doc = doc.get("model", {"seed": 7})
        hotspot_doc = doc.get("hotspot", {})
        sampling_doc = doc.get("sampling", {})
        return cls(
            model=ModelConfig(**model_doc),
            capacity_tokens=doc.get("capacity_tokens", 1_000_000),
            eviction=EVICTION_ALIASES[doc.get("eviction", "lru")],
            logits_cache_mb=doc.get("logits_cache_mb", 1024),
            hotspot=HotspotParams(
                decay=hotspot_doc.get("decay", 0.01),
                threshold=hotspot_doc.get("threshold", 0.6),
                max_hotspots=hotspot_doc.get("max_hotspots"),
            ),
            default_sampling=sampling_from_dict(sampling_doc, SamplingConfig(max_tokens=16)),
            workers=doc.get("workers", 1),
        )


def _error(code: str, message: str, request_id=None) -> dict:
    out = {"ok": False, "error": {"code": code, "message": message}}
    if request_id is not None:
        out["request_id"] = request_id
    return out


class EngineServer:
    """Protocol state for one connection."""

    def __init__(self, settings: ServerSettings | None = None):
        self.settings = settings or ServerSettings()
        self.engine = InferenceEngine(
            self.settings.model,
            capacity_tokens=self.settings.capacity_tokens,
            eviction=self.settings.eviction,
            logits_budget_bytes=self.settings.logits_cache_mb << 20,
            hotspot_params=self.settings.hotspot,
        )
        self.documents: list[dict] = []
        self.graphs: dict = {}

    # -- dispatch -------------------------------------------------------------

    def handle_line(self, line: str) -> dict:
        line = line.strip()
        if not line:
            return _error("malformed", "empty message")
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            return _error("malformed", f"invalid JSON: {exc}")
        if not isinstance(msg, dict):
            return _error("malformed", "message must be a JSON object")
        return self.handle(msg)

    def handle(self, msg: dict) -> dict:
        mtype = msg.get("type")
        handler = getattr(self, f"_handle_{mtype}", None) if isinstance(mtype, str) else None
        if handler is None:
            return _error("unknown_type", f"unsupported message type {mtype!r}", msg.get("request_id"))
        try:
            return handler(msg)
        except (ConfigError, CompileError, CapacityError) as exc:
            code = {
                CompileError: "compile_error",
                CapacityError: "capacity",
            }.get(type(exc), "invalid_request")
            return _error(code, str(exc), msg.get("request_id"))
        except Exception as exc:  # keep the connection alive
            return _error("internal", f"{type(exc).__name__}: {exc}", msg.get("request_id"))

    # -- handlers --------------------------------------------------------------

    def _handle_register_agent(self, msg: dict) -> dict:
        agent_id = msg.get("agent_id")
        if not isinstance(agent_id, str) or not agent_id:
            return _error("invalid_request", "register_agent requires agent_id")
        self.engine.register_agent(agent_id)
        return {"ok": True, "type": "register_agent", "agent_id": agent_id}

    def _handle_define_workflow(self, msg: dict) -> dict:
        from .flow import compile_document

        document = msg.get("document")
        graphs = compile_document(document)
        self.graphs.update(graphs)
        self.documents.append(document)
        return {"ok": True, "type": "define_workflow", "agents": sorted(graphs)}

    def _handle_generate(self, msg: dict) -> dict:
        request_id = msg.get("request_id")
        agent_id = msg.get("agent_id")
        if agent_id not in self.engine.agents:
            return _error("unknown_agent", f"unknown agent {agent_id!r}", request_id)
        prompt = msg.get("prompt_tokens")
        if not isinstance(prompt, list) or not prompt:
            return _error("invalid_request", "prompt_tokens must be a non-empty list", request_id)
        sampling = sampling_from_dict(msg.get("sampling", {}), self.settings.default_sampling)
        policy_name = msg.get("replay_policy", "none")
        if policy_name not in POLICY_ALIASES:
            return _error("invalid_request", f"unknown replay policy {policy_name!r}", request_id)
        hotspot = None
        if "hotspot" in msg:
            h = msg["hotspot"]
            hotspot = HotspotParams(
                decay=h.get("decay", self.settings.hotspot.decay),
                threshold=h.get("threshold", self.settings.hotspot.threshold),
                max_hotspots=h.get("max_hotspots"),
            )
        result = self.engine.generate(
            GenerateRequest(
                agent_id=agent_id,
                prompt_tokens=prompt,
                sampling=sampling,
                replay_policy=POLICY_ALIASES[policy_name],
                request_id=str(request_id or ""),
                hotspot=hotspot,
            )
        )
        return {
            "ok": True,
            "type": "generate",
            "request_id": request_id,
            "tokens": result.tokens,
            "hit_ratio": result.outcome.hit_ratio,
            "replayed_len": result.outcome.replayed_len,
            "diverged_at": result.outcome.diverged_at,
            "was_revisit": result.was_revisit,
            "prefill_passes": result.prefill_passes,
            "decode_passes": result.decode_passes,
            "forward_passes_saved": result.outcome.forward_passes_saved,
        }

    def _handle_run_workflow(self, msg: dict) -> dict:
        root = msg.get("root_agent")
        if root not in self.graphs:
            return _error("unknown_agent", f"workflow agent {root!r} not defined")
        runtime = FlowRuntime(
            self.engine,
            run_seed=int(msg.get("run_seed", 0)),
            workers=self.settings.workers,
            default_sampling=self.settings.default_sampling,
        )
        runtime.graphs.update(self.graphs)
        runtime.spawn(root, prompt_tokens=msg.get("prompt_tokens"))
        steps = runtime.run()
        transcripts = [
            {
                "instance": inst.instance_id,
                "agent": inst.agent_id,
                "dialogue": inst.result_dialogue,
            }
            for inst in sorted(runtime.instances.values(), key=lambda i: i.instance_id)
        ]
        return {"ok": True, "type": "run_workflow", "root_agent": root, "steps": steps, "transcripts": transcripts}

    def _handle_metrics(self, msg: dict) -> dict:
        cell = {"workload": "serve", "policy": "", "eviction": "", "temperature": "", "seed": ""}
        rows = [_request_row(cell, res, -1) for res in self.engine.request_log]
        summary = summarize_request_rows(rows) if rows else {"n_requests": 0}
        cost = self.engine.cost
        return {
            "ok": True,
            "type": "metrics",
            "protocol_version": PROTOCOL_VERSION,
            "summary": summary,
            "cost": {
                "prefill_passes": cost.prefill_passes,
                "prefill_tokens": cost.prefill_tokens,
                "decode_passes": cost.decode_passes,
                "reprefill_tokens": cost.reprefill_tokens,
            },
            "kv": self.engine.cache_metrics(),
        }


# -- transports ---------------------------------------------------------------------


def serve_stream(rfile, wfile, settings: ServerSettings | None = None) -> None:
    """Serve one connection over text streams (used for --stdio)."""
    server = EngineServer(settings)
    for line in rfile:
        if not line.strip():
            continue
        response = server.handle_line(line)
        wfile.write(json.dumps(response) + "\n")
        wfile.flush()


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        server = EngineServer(self.server.settings)  # type: ignore[attr-defined]
        for raw in self.rfile:
            line = raw.decode("utf-8", errors="replace")
            response = server.handle_line(line)
            payload = (json.dumps(response) + "\n").encode("utf-8")
            try:
                self.wfile.write(payload)
                self.wfile.flush()
            except (BrokenPipeError, ConnectionResetError):
                return


class TcpServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, address: tuple[str, int], settings: ServerSettings):
        super().__init__(address, _Handler)
        self.settings = settings


def serve_tcp(host: str, port: int, settings: ServerSettings | None = None) -> TcpServer:
    """Start a threading TCP server; caller drives serve_forever/shutdown."""
    return TcpServer((host, port), settings or ServerSettings())
