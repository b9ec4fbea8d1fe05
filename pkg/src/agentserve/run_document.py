"""Run a workflow document natively (no protocol) and print its transcript.

Produces exactly the ``transcripts`` payload of the protocol's
``run_workflow`` response, so protocol-driven and native executions can be
compared byte for byte:

    python -m agentserve.run_document --document flow.json --seed 5
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .flow import FlowRuntime
from .server import ServerSettings


def run_document(
    document: dict,
    root_agent: str,
    run_seed: int = 0,
    prompt_tokens: list[int] | None = None,
    settings: ServerSettings | None = None,
) -> dict:
    settings = settings or ServerSettings()
    from .engine import InferenceEngine

    engine = InferenceEngine(
        settings.model,
        capacity_tokens=settings.capacity_tokens,
        eviction=settings.eviction,
        logits_budget_bytes=settings.logits_cache_mb << 20,
        hotspot_params=settings.hotspot,
    )
    runtime = FlowRuntime(
        engine,
        run_seed=run_seed,
        workers=settings.workers,
        default_sampling=settings.default_sampling,
    )
    runtime.load_document(document)
    runtime.spawn(root_agent, prompt_tokens=prompt_tokens)
    steps = runtime.run()
    transcripts = [
        {"instance": inst.instance_id, "agent": inst.agent_id, "dialogue": inst.result_dialogue}
        for inst in sorted(runtime.instances.values(), key=lambda i: i.instance_id)
    ]
    return {"root_agent": root_agent, "steps": steps, "transcripts": transcripts}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="agentserve.run_document")
    parser.add_argument("--document", required=True)
    parser.add_argument("--root", required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--prompt", type=int, nargs="*", default=None)
    parser.add_argument("--config", help="engine settings JSON")
    args = parser.parse_args(argv)
    document = json.loads(Path(args.document).read_text())
    settings = None
    if args.config:
        settings = ServerSettings.from_dict(json.loads(Path(args.config).read_text()))
    result = run_document(document, args.root, args.seed, args.prompt, settings)
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
