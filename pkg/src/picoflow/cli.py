"""Single entry point for every service and utility.

Subcommands: ``watch``, ``transferd``, ``computed``, ``catalogd``,
``flow run``, ``analyze``, ``bench generate``, ``bench report``, ``mkemdl``.
Settings come from an INI config file (``--config`` or the PICOFLOW_CONFIG
environment variable) with command-line flags taking precedence.  Exit
codes: 0 success, 1 operational failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
import threading
from pathlib import Path

from . import analysis, bench, catalogd, computed, emdlite, flowcore, synth, transferd, watcher

log = logging.getLogger(__name__)

CONFIG_ENV = "PICOFLOW_CONFIG"

# section -> keys a config file may set; [auth] maps tokens to principals freely
_KNOWN_KEYS = {
    "auth": None,
    "watcher": {"watch_dir", "glob", "stability_window", "poll_period", "journal"},
    "transferd": {"host", "port", "root", "max_bytes_per_second"},
    "computed": {"host", "port", "data_root", "provision_delay", "idle_timeout"},
    "catalogd": {"host", "port", "log", "static_dir"},
    "flow": {"transfer_url", "compute_url", "catalog_url", "token", "kind",
             "visible_to", "run_log", "dest_root"},
    "bench": {"template", "period", "duration", "dest_dir"},
}


class ConfigError(Exception):
    pass


def load_config(path: str | None) -> dict[str, dict[str, str]]:
    """Parse the INI config, rejecting unknown sections and keys."""
    resolved = path or os.environ.get(CONFIG_ENV)
    if not resolved:
        return {}
    if not Path(resolved).is_file():
        raise ConfigError(f"config file not found: {resolved}")
    parser = configparser.ConfigParser()
    try:
        parser.read(resolved)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {resolved}: {exc}")
    config: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config section [{section}]")
        allowed = _KNOWN_KEYS[section]
        values = dict(parser.items(section))
        if allowed is not None:
            unknown = set(values) - allowed
            if unknown:
                raise ConfigError(
                    f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
        config[section] = values
    return config


def _setting(args, config, section: str, key: str, default=None, convert=str):
    """Flag value if given, else config value, else default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    raw = config.get(section, {}).get(key)
    if raw is None:
        return default
    try:
        return convert(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}")


def _auth_tokens(args, config) -> dict[str, str]:
    """token -> principal map from [auth] plus any --token flags."""
    tokens = dict(config.get("auth", {}))
    for pair in getattr(args, "token", None) or []:
        if "=" in pair:
            token, principal = pair.split("=", 1)
        else:
            token, principal = pair, pair
        tokens[token] = principal
    return tokens


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="picoflow",
        description="Instrument-to-HPC data flow services and utilities.")
    parser.add_argument("--config", help=f"INI config path (or ${CONFIG_ENV})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("watch", help="watch a directory and run a flow per new file")
    p.add_argument("--watch-dir")
    p.add_argument("--glob")
    p.add_argument("--stability-window", type=float, dest="stability_window")
    p.add_argument("--poll-period", type=float, dest="poll_period")
    p.add_argument("--journal")
    _add_flow_flags(p)

    p = sub.add_parser("transferd", help="run the transfer server")
    p.add_argument("--root")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--max-bytes-per-second", type=float, dest="max_bytes_per_second")
    p.add_argument("--token", action="append", help="accepted bearer token (repeatable)")

    p = sub.add_parser("computed", help="run the compute endpoint")
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--provision-delay", type=float, dest="provision_delay")
    p.add_argument("--idle-timeout", type=float, dest="idle_timeout")
    p.add_argument("--token", action="append")

    p = sub.add_parser("catalogd", help="run the metadata catalog")
    p.add_argument("--log")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--static-dir", dest="static_dir")
    p.add_argument("--token", action="append", help="token=principal (repeatable)")

    p = sub.add_parser("flow", help="flow operations")
    flow_sub = p.add_subparsers(dest="flow_command", required=True)
    p = flow_sub.add_parser("run", help="run one flow for a file and exit")
    p.add_argument("file")
    _add_flow_flags(p)

    p = sub.add_parser("analyze", help="analyze a file locally, no services")
    p.add_argument("file")
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench", help="benchmark utilities")
    bench_sub = p.add_subparsers(dest="bench_command", required=True)
    p = bench_sub.add_parser("generate", help="periodically drop template copies")
    p.add_argument("--template")
    p.add_argument("--period", type=float)
    p.add_argument("--duration", type=float)
    p.add_argument("--dest-dir", dest="dest_dir")
    p.add_argument("--same-name", action="store_true",
                   help="keep name and bytes identical across drops")
    p = bench_sub.add_parser("report", help="aggregate a run log into a report")
    p.add_argument("--run-log", dest="run_log", required=True)
    p.add_argument("--json", action="store_true", dest="as_json")

    p = sub.add_parser("mkemdl", help="synthesize a test .emdl file")
    p.add_argument("--kind", choices=["hyperspectral", "spatiotemporal"], required=True)
    p.add_argument("--shape", required=True,
                   help="W,H,E for hyperspectral; T,H,W for spatiotemporal")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--blobs", type=int, default=8)
    p.add_argument("--truth", help="also write ground-truth boxes JSON here")
    return parser


def _add_flow_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--transfer-url", dest="transfer_url")
    p.add_argument("--compute-url", dest="compute_url")
    p.add_argument("--catalog-url", dest="catalog_url")
    p.add_argument("--flow-token", dest="flow_token")
    p.add_argument("--kind", choices=["hyperspectral", "spatiotemporal"])
    p.add_argument("--visible-to", dest="visible_to",
                   help="comma-separated principals (default: public)")
    p.add_argument("--run-log", dest="run_log")
    p.add_argument("--dest-root", dest="dest_root")


def _flow_engine(args, config) -> flowcore.FlowEngine:
    def need(key):
        value = _setting(args, config, "flow", key)
        if value is None:
            raise ConfigError(f"missing required flow setting: {key}")
        return value

    token = getattr(args, "flow_token", None) or _setting(args, config, "flow", "token")
    if token is None:
        raise ConfigError("missing required flow setting: token")
    services = flowcore.FlowServices(
        transfer=transferd.TransferClient(need("transfer_url"), token),
        compute=computed.ComputeClient(need("compute_url"), token),
        catalog=catalogd.CatalogClient(need("catalog_url"), token),
    )
    visible = _setting(args, config, "flow", "visible_to", "public")
    run_log = flowcore.RunLog(need("run_log"))
    kind = flowcore.FlowKind(_setting(args, config, "flow", "kind", "hyperspectral"))
    dest_root = _setting(args, config, "flow", "dest_root", "")
    return flowcore.FlowEngine(
        services, run_log, flow_kind=kind, dest_root=dest_root,
        visible_to=tuple(p.strip() for p in visible.split(",") if p.strip()),
    )


def _cmd_watch(args, config) -> int:
    engine = _flow_engine(args, config)
    watch_dir = _setting(args, config, "watcher", "watch_dir")
    if watch_dir is None:
        raise ConfigError("missing required watcher setting: watch_dir")
    wconfig = watcher.WatchConfig(
        watch_dir=Path(watch_dir),
        glob=_setting(args, config, "watcher", "glob", "*.emdl"),
        stability_window=_setting(args, config, "watcher", "stability_window", 2.0, float),
        poll_period=_setting(args, config, "watcher", "poll_period", 1.0, float),
    )
    journal_path = _setting(args, config, "watcher", "journal",
                            str(wconfig.watch_dir / ".picoflow-journal.jsonl"))
    journal = watcher.CheckpointJournal(journal_path)
    stop = threading.Event()
    log.info("watching %s (glob %s)", wconfig.watch_dir, wconfig.glob)
    try:
        watcher.watch(wconfig, journal, lambda path: engine.trigger(path), stop)
    except KeyboardInterrupt:
        stop.set()
        engine.wait_idle(timeout=60)
    return 0


def _cmd_transferd(args, config) -> int:
    root = _setting(args, config, "transferd", "root")
    if root is None:
        raise ConfigError("missing required transferd setting: root")
    tokens = set(_auth_tokens(args, config))
    if not tokens:
        raise ConfigError("transferd needs at least one accepted token")
    rate = _setting(args, config, "transferd", "max_bytes_per_second", None, float)
    service = transferd.serve(
        root, tokens, transferd.ThrottleConfig(max_bytes_per_second=rate),
        host=_setting(args, config, "transferd", "host", "127.0.0.1"),
        port=_setting(args, config, "transferd", "port", 8081, int),
    )
    print(f"transferd listening on {service.base_url}", file=sys.stderr)
    return _serve_until_interrupt(service)


def _cmd_computed(args, config) -> int:
    data_root = _setting(args, config, "computed", "data_root")
    if data_root is None:
        raise ConfigError("missing required computed setting: data_root")
    tokens = set(_auth_tokens(args, config))
    if not tokens:
        raise ConfigError("computed needs at least one accepted token")
    server = computed.ComputeServer(
        data_root, tokens,
        provision_delay=_setting(args, config, "computed", "provision_delay", 60.0, float),
        idle_timeout=_setting(args, config, "computed", "idle_timeout", 300.0, float),
        host=_setting(args, config, "computed", "host", "127.0.0.1"),
        port=_setting(args, config, "computed", "port", 8082, int),
    )
    print(f"computed listening on {server.base_url}", file=sys.stderr)
    return _serve_until_interrupt(server)


def _cmd_catalogd(args, config) -> int:
    server = catalogd.CatalogServer(
        _setting(args, config, "catalogd", "log"),
        _auth_tokens(args, config),
        static_dir=_setting(args, config, "catalogd", "static_dir"),
        host=_setting(args, config, "catalogd", "host", "127.0.0.1"),
        port=_setting(args, config, "catalogd", "port", 8083, int),
    )
    print(f"catalogd listening on {server.base_url}", file=sys.stderr)
    return _serve_until_interrupt(server)


def _serve_until_interrupt(service) -> int:
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        try:
            service.stop()
        except Exception:
            pass
    return 0


def _cmd_flow_run(args, config) -> int:
    engine = _flow_engine(args, config)
    run = engine.run_one(args.file)
    print(json.dumps(run.to_dict(), indent=2))
    return 0 if run.state is flowcore.FlowState.SUCCEEDED else 1


def _cmd_analyze(args, config) -> int:
    result = computed.analyze_emdl(args.file, args.out)
    print(json.dumps(result["manifest"], indent=2))
    return 0


def _cmd_bench_generate(args, config) -> int:
    template = _setting(args, config, "bench", "template")
    dest = _setting(args, config, "bench", "dest_dir")
    if template is None or dest is None:
        raise ConfigError("bench generate needs template and dest_dir")
    gconfig = bench.GeneratorConfig(
        template_file=Path(template),
        period=_setting(args, config, "bench", "period", 30.0, float),
        duration=_setting(args, config, "bench", "duration", 3600.0, float),
        dest_dir=Path(dest),
        unique_names=not args.same_name,
    )
    count = bench.generate(gconfig)
    print(count)
    return 0


def _cmd_bench_report(args, config) -> int:
    report = bench.aggregate(args.run_log)
    if args.as_json:
        print(report.to_json())
    else:
        print(report.table_text(), end="")
    return 0


def _cmd_mkemdl(args, config) -> int:
    try:
        shape = tuple(int(part) for part in args.shape.split(","))
    except ValueError:
        print(f"error: --shape must be three comma-separated integers, got {args.shape!r}",
              file=sys.stderr)
        return 2
    if len(shape) != 3:
        print("error: --shape must have exactly three extents", file=sys.stderr)
        return 2
    file, truth = synth.make_file(args.kind, shape, args.seed, blob_count=args.blobs)
    size = emdlite.write_file(file, args.out)
    if args.truth:
        if truth is None:
            print("error: --truth applies to spatiotemporal files only", file=sys.stderr)
            return 2
        Path(args.truth).write_text(
            json.dumps([b.to_dict() for b in truth], separators=(",", ":")) + "\n",
            encoding="utf-8")
    print(json.dumps({"path": args.out, "bytes": size, "kind": args.kind,
                      "shape": list(shape), "seed": args.seed}))
    return 0


_COMMANDS = {
    "watch": _cmd_watch,
    "transferd": _cmd_transferd,
    "computed": _cmd_computed,
    "catalogd": _cmd_catalogd,
    "analyze": _cmd_analyze,
    "mkemdl": _cmd_mkemdl,
}


def dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stderr,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        config = load_config(args.config)
        if args.command == "flow":
            return _cmd_flow_run(args, config)
        if args.command == "bench":
            if args.bench_command == "generate":
                return _cmd_bench_generate(args, config)
            return _cmd_bench_report(args, config)
        return _COMMANDS[args.command](args, config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError, emdlite.EmdLiteError,
            analysis.AnalysisError, catalogd.CatalogError,
            watcher.JournalWriteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
