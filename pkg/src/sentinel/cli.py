"""Operator entry point: run the service, assess logs, query the KB.

    sentinel run      --config cfg.json          long-running service + watch dir
    sentinel assess   --config cfg.json LOGFILE  one-shot report (exit 3 on High)
    sentinel query    --config cfg.json QUERY    ad-hoc basic-graph-pattern query
    sentinel load-kb  --config cfg.json [FILE..] load/validate bundles and triples
    sentinel check-kb --config cfg.json [FILE..] consistency report (exit 1 on violations)

Exit codes: 0 clean, 2 usage/config error, 3 assess found a High verdict.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from . import classify, query
from .coa import CoaPolicy
from .kb import BundleError, KnowledgeBase
from .pipeline import Pipeline
from .service import ThreatService

log = logging.getLogger("sentinel.cli")


class ConfigError(Exception):
    def __init__(self, component: str, message: str):
        super().__init__(f"{component}: {message}")
        self.component = component


@dataclass
class Config:
    kb_bundles: list[str] = field(default_factory=list)
    kb_triples: list[str] = field(default_factory=list)
    policy: str = "default"
    coa_policy: str = "default"
    journal_dir: str = "journal"
    cache_ttl: int = 3600
    recheck_interval: int = 900
    listen: str = "127.0.0.1:8787"
    token: str = ""
    watch_dir: Optional[str] = None
    ui_dir: Optional[str] = None


_OVERRIDABLE = ("policy", "coa_policy", "journal_dir", "cache_ttl",
                "recheck_interval", "listen", "token", "watch_dir", "ui_dir")


def load_config(path: Optional[str], overrides: dict) -> Config:
    config = Config()
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError("config", f"no such file: {path}")
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc}")
        for key, value in raw.items():
            if not hasattr(config, key):
                raise ConfigError("config", f"unknown key: {key}")
            setattr(config, key, value)
    for key, value in overrides.items():
        if value is not None:
            setattr(config, key, value)
    config.cache_ttl = int(config.cache_ttl)
    config.recheck_interval = int(config.recheck_interval)
    return config


def _default_data(name: str) -> str:
    return resources.files("sentinel").joinpath("data", name).read_text(encoding="utf-8")


def build_kb(config: Config) -> KnowledgeBase:
    kb = KnowledgeBase()
    for bundle_path in config.kb_bundles:
        try:
            document = json.loads(Path(bundle_path).read_text(encoding="utf-8"))
            kb.load_bundle(document)
        except FileNotFoundError:
            raise ConfigError("kb", f"bundle not found: {bundle_path}")
        except (json.JSONDecodeError, BundleError) as exc:
            raise ConfigError("kb", f"{bundle_path}: {exc}")
    for triple_path in config.kb_triples:
        try:
            _, errors = kb.load_triples(Path(triple_path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError("kb", f"triple file not found: {triple_path}")
        if errors:
            lines = "; ".join(f"line {n}: {m}" for n, m in errors[:3])
            raise ConfigError("kb", f"{triple_path}: {lines}")
    return kb


def build_pipeline(config: Config) -> Pipeline:
    kb = build_kb(config)
    try:
        if config.policy == "default":
            policy = classify.load_policy(_default_data("default_policy.json"))
        else:
            policy = classify.load_policy(Path(config.policy).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("policy", f"no such file: {config.policy}")
    except classify.PolicyError as exc:
        raise ConfigError("policy", str(exc))
    try:
        if config.coa_policy == "default":
            coa_policy = CoaPolicy.load(_default_data("default_coa_policy.json"))
        else:
            coa_policy = CoaPolicy.load(Path(config.coa_policy).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("coa-policy", f"no such file: {config.coa_policy}")
    except Exception as exc:
        raise ConfigError("coa-policy", str(exc))
    return Pipeline(kb, policy, coa_policy,
                    journal_dir=config.journal_dir,
                    cache_ttl_s=config.cache_ttl,
                    recheck_interval_s=config.recheck_interval)


def _sniff_and_ingest(pipeline: Pipeline, path: Path) -> dict:
    text = path.read_text(encoding="utf-8", errors="replace")
    if text.lstrip().startswith("<"):
        return pipeline.ingest_xml(text)
    return pipeline.ingest_jsonl(text)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_assess(args) -> int:
    config = load_config(args.config, _overrides(args))
    pipeline = build_pipeline(config)
    path = Path(args.logfile)
    if not path.is_file():
        print(f"assess: no such file: {path}", file=sys.stderr)
        return 2
    try:
        counts = _sniff_and_ingest(pipeline, path)
    except Exception as exc:
        print(f"assess: unparseable file: {exc}", file=sys.stderr)
        return 2
    for detail in counts.get("error_details", []):
        print(f"parse error: {detail}", file=sys.stderr)

    rows = pipeline.final_verdicts()
    any_high = False
    for row in rows:
        if row["level"] == "High":
            any_high = True
        rules = ",".join(row["fired_rules"]) or "-"
        evidence = ",".join(row["evidence"]) or "-"
        print(f"{row['level']}\t{row['subject']}\t{rules}\t{evidence}")

    by_level: dict[str, int] = {}
    for row in rows:
        by_level[row["level"]] = by_level.get(row["level"], 0) + 1
    print("--")
    print(f"events: {counts['accepted']} accepted, {counts['skipped']} skipped, "
          f"{counts['errors']} errors")
    print("verdicts: " + ", ".join(f"{level}={count}" for level, count
                                   in sorted(by_level.items())) if by_level else "verdicts: none")
    print(f"query-engine invocations: {pipeline.meter.count}")
    return 3 if any_high else 0


def cmd_query(args) -> int:
    config = load_config(args.config, _overrides(args))
    kb = build_kb(config)
    raw = args.query
    if raw == "-":
        raw = sys.stdin.read()
    elif raw.startswith("@"):
        try:
            raw = Path(raw[1:]).read_text(encoding="utf-8")
        except FileNotFoundError:
            print(f"query: no such file: {raw[1:]}", file=sys.stderr)
            return 2
    try:
        document = json.loads(raw)
        parsed = query.parse_query(document)
        rows = query.execute(kb, parsed)
    except json.JSONDecodeError as exc:
        print(f"query: invalid JSON: {exc}", file=sys.stderr)
        return 2
    except query.QueryError as exc:
        print(f"query: {exc}", file=sys.stderr)
        return 2
    for row in rows:
        print(json.dumps(row, sort_keys=True))
    return 0


def cmd_load_kb(args) -> int:
    config = load_config(args.config, _overrides(args))
    kb = build_kb(config)
    totals: dict[str, int] = {}
    warnings: list[str] = []
    for extra in args.files:
        path = Path(extra)
        if not path.is_file():
            print(f"load-kb: no such file: {path}", file=sys.stderr)
            return 2
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".json":
            try:
                counts, warn = kb.load_bundle(json.loads(text))
            except (json.JSONDecodeError, BundleError) as exc:
                print(f"load-kb: {path}: {exc}", file=sys.stderr)
                return 1
            for kind, count in counts.items():
                totals[kind] = totals.get(kind, 0) + count
            warnings.extend(warn)
        else:
            inserted, errors = kb.load_triples(text)
            totals["triples"] = totals.get("triples", 0) + inserted
            for number, message in errors:
                print(f"load-kb: {path}:{number}: {message}", file=sys.stderr)
            if errors:
                return 1
    for kind in sorted(totals):
        print(f"{kind}\t{totals[kind]}")
    print(f"total-triples\t{len(kb)}")
    for warning in warnings:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


def cmd_check_kb(args) -> int:
    rc = cmd_load_kb_quiet(args)
    if rc is None:
        return 2
    kb, _ = rc
    violations = kb.check_consistency()
    for violation in violations:
        print(f"{violation.code}\t{violation.entity_id}\t{violation.detail}")
    print(f"violations: {len(violations)}", file=sys.stderr)
    return 1 if violations else 0


def cmd_load_kb_quiet(args):
    try:
        config = load_config(args.config, _overrides(args))
        kb = build_kb(config)
    except ConfigError as exc:
        print(f"check-kb: {exc}", file=sys.stderr)
        return None
    for extra in getattr(args, "files", []):
        path = Path(extra)
        if not path.is_file():
            print(f"check-kb: no such file: {path}", file=sys.stderr)
            return None
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".json":
            kb.load_bundle(json.loads(text))
        else:
            kb.load_triples(text)
    return kb, config


def cmd_run(args) -> int:
    config = load_config(args.config, _overrides(args))
    if not config.token:
        raise ConfigError("token", "service requires a bearer token in the config")
    pipeline = build_pipeline(config)
    host, _, port_text = config.listen.partition(":")
    try:
        port = int(port_text or 8787)
    except ValueError:
        raise ConfigError("listen", f"bad listen address: {config.listen}")

    service = ThreatService(pipeline, config.token, host=host or "127.0.0.1",
                            port=port, ui_dir=config.ui_dir)
    stop = threading.Event()

    def shutdown(signum, frame):
        stop.set()

    signal.signal(signal.SIGINT, shutdown)
    signal.signal(signal.SIGTERM, shutdown)

    watcher = None
    if config.watch_dir:
        watch_path = Path(config.watch_dir)
        watch_path.mkdir(parents=True, exist_ok=True)
        watcher = threading.Thread(
            target=_watch_loop, args=(pipeline, watch_path, stop), daemon=True)

    service.start()
    print(f"sentinel: listening on {service.address[0]}:{service.port}", flush=True)
    if watcher:
        watcher.start()
    rechecker = threading.Thread(
        target=_recheck_loop, args=(pipeline, config.recheck_interval, stop), daemon=True)
    rechecker.start()

    try:
        while not stop.is_set():
            stop.wait(0.2)
    finally:
        service.stop()
    print("sentinel: shut down cleanly", flush=True)
    return 0


def _watch_loop(pipeline: Pipeline, watch_dir: Path, stop: threading.Event) -> None:
    seen: set[tuple[str, float]] = set()
    while not stop.is_set():
        for path in sorted(watch_dir.glob("*")):
            if path.suffix.lower() not in (".jsonl", ".json", ".xml", ".log"):
                continue
            key = (path.name, path.stat().st_mtime)
            if key in seen:
                continue
            seen.add(key)
            try:
                counts = _sniff_and_ingest(pipeline, path)
                log.info("ingested %s: %s", path.name, counts)
            except Exception:
                log.exception("failed to ingest %s", path.name)
        stop.wait(0.5)


def _recheck_loop(pipeline: Pipeline, interval_s: int, stop: threading.Event) -> None:
    period = max(1.0, min(interval_s / 4, 60.0))
    while not stop.is_set():
        stop.wait(period)
        if stop.is_set():
            return
        try:
            changes = pipeline.reevaluate()
            if changes:
                log.info("re-evaluation changed %d verdicts", len(changes))
        except Exception:
            log.exception("re-evaluation pass failed")


# ---------------------------------------------------------------------------
# argparse wiring
# ---------------------------------------------------------------------------

def _overrides(args) -> dict:
    return {key: getattr(args, key, None) for key in _OVERRIDABLE}


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON configuration file")
    parser.add_argument("--policy", help="classification policy path (or 'default')")
    parser.add_argument("--coa-policy", dest="coa_policy", help="CoA disposition policy path")
    parser.add_argument("--journal-dir", dest="journal_dir", help="actuator journal directory")
    parser.add_argument("--cache-ttl", dest="cache_ttl", type=int, help="element cache TTL seconds")
    parser.add_argument("--recheck-interval", dest="recheck_interval", type=int,
                        help="unknown re-evaluation interval seconds")
    parser.add_argument("--listen", help="host:port for the service")
    parser.add_argument("--token", help="bearer token for the service API")
    parser.add_argument("--watch-dir", dest="watch_dir", help="directory watched for new logs")
    parser.add_argument("--ui-dir", dest="ui_dir", help="static analyst console directory")


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    parser = argparse.ArgumentParser(prog="sentinel")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the service and watch for logs")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_assess = sub.add_parser("assess", help="one-shot assessment of a log file")
    _add_common(p_assess)
    p_assess.add_argument("logfile")
    p_assess.set_defaults(func=cmd_assess)

    p_query = sub.add_parser("query", help="run a query (JSON, @file, or - for stdin)")
    _add_common(p_query)
    p_query.add_argument("query")
    p_query.set_defaults(func=cmd_query)

    p_load = sub.add_parser("load-kb", help="load and validate knowledge files")
    _add_common(p_load)
    p_load.add_argument("files", nargs="*")
    p_load.set_defaults(func=cmd_load_kb)

    p_check = sub.add_parser("check-kb", help="run consistency checks")
    _add_common(p_check)
    p_check.add_argument("files", nargs="*")
    p_check.set_defaults(func=cmd_check_kb)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"sentinel: {exc.component}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
