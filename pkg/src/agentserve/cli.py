"""Command line interface: run experiments, serve the protocol, re-summarize."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agentserve")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run an experiment grid from a config file")
    run_p.add_argument("--config", required=True, help="experiment config JSON")
    run_p.add_argument("--out", required=True, help="output directory for the report")
    run_p.add_argument("--seed", type=int, action="append", help="override config seeds")
    run_p.add_argument(
        "--policy", action="append", choices=["none", "step", "hotspot"],
        help="override replay policies",
    )
    run_p.add_argument(
        "--eviction", action="append", choices=["lru", "agent"],
        help="override eviction policies",
    )
    run_p.add_argument("--workers", type=int, default=None)

    serve_p = sub.add_parser("serve", help="serve the NDJSON request protocol")
    mode = serve_p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--listen", help="TCP address HOST:PORT")
    mode.add_argument("--stdio", action="store_true", help="serve stdin/stdout")
    serve_p.add_argument("--config", help="engine settings JSON")

    report_p = sub.add_parser("report", help="recompute summary from report rows")
    report_p.add_argument("--in", dest="report_dir", required=True)
    return parser


def _cmd_run(args) -> int:
    from .harness import ExperimentConfig, run_experiment

    config = ExperimentConfig.from_json(args.config)
    overrides = {}
    if args.seed:
        overrides["seeds"] = tuple(args.seed)
    if args.policy:
        overrides["policies"] = tuple(args.policy)
    if args.eviction:
        overrides["evictions"] = tuple(args.eviction)
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        from dataclasses import replace

        config = replace(config, **overrides)
    report = run_experiment(config)
    report.write(args.out)
    print(f"report written to {args.out}")
    for cell in report.summary["cells"]:
        label = f"{cell['workload']} policy={cell['policy']} eviction={cell['eviction']} T={cell['temperature']} seed={cell['seed']}"
        hit = cell.get("mean_hit_ratio")
        speedup = cell.get("mean_speedup")
        print(
            f"  {label}: requests={cell['n_requests']}"
            + (f" mean_hit={hit:.4f}" if hit is not None else "")
            + (f" mean_speedup={speedup:.3f}" if speedup is not None else "")
        )
    if report.summary["errors"]:
        print(f"  {len(report.summary['errors'])} cell(s) failed; see summary.json", file=sys.stderr)
    return 0


def _cmd_serve(args) -> int:
    from .server import ServerSettings, serve_stream, serve_tcp

    settings = ServerSettings()
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        settings = ServerSettings.from_dict(doc)
    if args.stdio:
        serve_stream(sys.stdin, sys.stdout, settings)
        return 0
    host, _, port = args.listen.rpartition(":")
    if not host or not port.isdigit():
        raise ConfigError(f"--listen expects HOST:PORT, got {args.listen!r}")
    server = serve_tcp(host, int(port), settings)
    bound_host, bound_port = server.server_address[:2]
    print(f"listening on {bound_host}:{bound_port}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


def _cmd_report(args) -> int:
    from .harness import resummarize

    summary = resummarize(args.report_dir)
    out_path = Path(args.report_dir) / "summary.json"
    out_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "serve":
            return _cmd_serve(args)
        if args.command == "report":
            return _cmd_report(args)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 0
    except Exception as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
