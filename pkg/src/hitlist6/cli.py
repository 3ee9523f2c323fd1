"""The `hitlist6` command: ingest, filter, probe, analyze, recommend.

Every subcommand restarts from serialized artifacts in the output
directory, so stages can be re-run independently. Exit codes: 0 success
(including partial results with warnings), 2 usage/config errors, 3 safety
refusals from the raw prober.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from . import __version__, analytics, artifacts, filtering, fixtures, ingest, probe
from .config import PipelineConfig, load_config
from .errors import (
    AuthorizationRequired,
    ConfigError,
    FatalFormat,
    Hitlist6Error,
    InsufficientPrivilege,
    UnknownScanType,
)

TARGETS = "targets.bin"
OBSERVATIONS = "observations.bin"
FILTERED = "targets_filtered.bin"
FILTER_REPORT = "filter_report.json"
MATRIX = "matrix.bin"
REPORTS = "reports"


class _Printer:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, *parts):
        if not self.quiet:
            print(*parts)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(cfg: PipelineConfig, command: str, inputs, outputs, counts, started):
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs if Path(p).exists()},
        "outputs": {str(p): _sha256(Path(p)) for p in outputs if Path(p).exists()},
        "counts": counts,
        "wall_seconds": round(time.monotonic() - started, 3),
    }
    artifacts.write_json(cfg.out_dir / f"{command}_manifest.json", manifest)


def _need(path: Path, producer: str) -> Path:
    if not path.exists():
        raise ConfigError(f"missing artifact {path}; run `hitlist6 {producer}` first")
    return path


def _load_prefix_set(path: Path | None) -> filtering.PrefixSet:
    if path is None:
        return filtering.PrefixSet()
    with open(path, encoding="utf-8") as fh:
        return filtering.load_cidr_set(fh)


def _load_routing(cfg: PipelineConfig) -> filtering.RoutingTable:
    path = cfg.filter_paths["pfx2as"]
    if path is None:
        raise ConfigError("filters.pfx2as is required for this command")
    with open(path, encoding="utf-8") as fh:
        return filtering.load_pfx2as(fh)


def _make_resolver(cfg: PipelineConfig):
    if cfg.dns.backend == "wire":
        return ingest.WireResolver(cfg.dns.server, cfg.dns.port, cfg.dns.timeout)
    if cfg.dns.fixture is None:
        raise ConfigError("dns.backend = stub requires dns.fixture")
    with open(cfg.dns.fixture, encoding="utf-8") as fh:
        return ingest.StubResolver.from_stream(fh)


def cmd_ingest(cfg: PipelineConfig, say: _Printer) -> int:
    started = time.monotonic()
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    self_prefixes = _load_prefix_set(cfg.filter_paths["self_prefixes"])
    default_ts = cfg.ingest_timestamp if cfg.ingest_timestamp is not None else int(time.time())
    resolver = None
    counts: dict[str, dict] = {}
    per_source: list[tuple[int, list[ingest.Observation]]] = []

    hop_specs = []
    for index, spec in enumerate(cfg.sources):
        tag = ingest.SourceTag(spec.kind, spec.name)
        if spec.format == "hops":
            hop_specs.append((index, spec, tag))
            continue
        with open(spec.path, encoding="utf-8") as fh:
            if spec.format == "flow":
                obs, report = ingest.ingest_flow_records(fh, tag, self_prefixes.prefixes)
                counts[tag.label()] = {
                    "rows": report.rows,
                    "malformed": report.malformed,
                    "self_filtered": report.self_filtered,
                    "observations": report.emitted,
                }
            elif spec.format == "addresses":
                obs, stats = ingest.ingest_address_list(fh, tag, default_ts)
                counts[tag.label()] = {
                    "lines": stats.lines,
                    "malformed": stats.malformed,
                    "observations": len(obs),
                }
            else:  # hostnames
                records, stats = ingest.read_hostname_list(fh, tag)
                if resolver is None:
                    resolver = _make_resolver(cfg)
                obs, rstats = ingest.resolve_hostnames(
                    records, resolver, default_ts, cfg.dns.concurrency
                )
                counts[tag.label()] = {
                    "names": rstats.names,
                    "answered": rstats.answered,
                    "nxdomain": rstats.nxdomain,
                    "observations": len(obs),
                }
        per_source.append((index, obs))
        say(f"  {tag.label()}: {len(obs)} observations")

    known = ingest.merge([obs for _, obs in per_source])
    for index, spec, tag in hop_specs:
        with open(spec.path, encoding="utf-8") as fh:
            obs, new_count, stats = ingest.ingest_traceroute_hops(fh, tag, known, default_ts)
        counts[tag.label()] = {
            "lines": stats.lines,
            "malformed": stats.malformed,
            "observations": len(obs),
            "new_ips": new_count,
        }
        per_source.append((index, obs))
        say(f"  {tag.label()}: {len(obs)} hops, {new_count} new IPs")

    per_source.sort(key=lambda pair: pair[0])
    all_lists = [obs for _, obs in per_source]
    observations = [o for obs in all_lists for o in obs]
    targets = ingest.merge(all_lists)

    artifacts.write_observations(cfg.out_dir / OBSERVATIONS, observations)
    artifacts.write_target_set(cfg.out_dir / TARGETS, targets)
    say(f"ingest: {len(observations)} observations, {len(targets)} unique targets")
    counts["total"] = {"observations": len(observations), "unique_targets": len(targets)}
    _write_manifest(
        cfg,
        "ingest",
        [s.path for s in cfg.sources],
        [cfg.out_dir / OBSERVATIONS, cfg.out_dir / TARGETS],
        counts,
        started,
    )
    return 0


def _filter_config(cfg: PipelineConfig) -> filtering.FilterConfig:
    return filtering.FilterConfig(
        self_prefixes=_load_prefix_set(cfg.filter_paths["self_prefixes"]),
        fullbogons=_load_prefix_set(cfg.filter_paths["fullbogons"]),
        iana_special=_load_prefix_set(cfg.filter_paths["iana_special"]),
        own_networks=_load_prefix_set(cfg.filter_paths["own_networks"]),
        routing=_load_routing(cfg),
        announced=_load_prefix_set(cfg.filter_paths["announced"]),
        blacklist=_load_prefix_set(cfg.filter_paths["blacklist"]),
    )


def _render_filter_table(report: filtering.StageReport) -> str:
    unique = report.remaining("dedup")
    lines = [
        f"{'stage':<22}{'removed':>12}{'remaining':>12}  share",
        f"{'observations':<22}{'':>12}{report.initial_observations:>12,}",
    ]
    for name, removed, remaining in report.stages:
        if name == "dedup":
            lines.append(f"{'unique addresses':<22}{-removed:>12,}{remaining:>12,}  (100%)")
            continue
        pct = probe.fmt_pct(removed, unique) if unique else "n/a"
        lines.append(f"{name:<22}{-removed:>12,}{remaining:>12,}  (-{pct}%)")
    final_pct = probe.fmt_pct(report.final_count, unique) if unique else "n/a"
    lines.append(f"{'final':<22}{'':>12}{report.final_count:>12,}  ({final_pct}%)")
    return "\n".join(lines)


def cmd_filter(cfg: PipelineConfig, say: _Printer) -> int:
    started = time.monotonic()
    targets_path = _need(cfg.out_dir / TARGETS, "ingest")
    targets = artifacts.read_target_set(targets_path)
    fcfg = _filter_config(cfg)
    filtered, report = filtering.apply_cascade(targets, fcfg, threads=cfg.threads)
    artifacts.write_target_set(cfg.out_dir / FILTERED, filtered)
    artifacts.write_json(cfg.out_dir / FILTER_REPORT, report.to_json_obj())
    say(_render_filter_table(report))
    _write_manifest(
        cfg,
        "filter",
        [targets_path] + [p for p in cfg.filter_paths.values() if p],
        [cfg.out_dir / FILTERED, cfg.out_dir / FILTER_REPORT],
        {"final": report.final_count},
        started,
    )
    return 0


def cmd_probe(cfg: PipelineConfig, say: _Printer, authorized_flag: bool) -> int:
    started = time.monotonic()
    filtered_path = _need(cfg.out_dir / FILTERED, "filter")
    filtered = artifacts.read_target_set(filtered_path)
    payloads = dict(probe.DEFAULT_UDP_PAYLOADS)
    payloads.update(cfg.probe.udp_payloads)
    plan = probe.build_plan(
        filtered,
        cfg.probe.intervals,
        udp_payloads=payloads,
        rate_limit=cfg.probe.rate_limit,
        jitter_frac=cfg.probe.jitter_frac,
    )
    blacklist = _load_prefix_set(cfg.filter_paths["blacklist"])
    if cfg.probe.backend == "raw":
        from .rawsock import RawProber

        prober = RawProber(
            cfg.probe.source_address,
            authorized=authorized_flag or cfg.probe.authorized,
            blacklist=blacklist if blacklist else None,
        )
    else:
        with open(cfg.probe.model, encoding="utf-8") as fh:
            model = probe.load_model(fh)
        prober = probe.SimulatedNetwork(model, cfg.probe.seed, cfg.probe.loss_rate)
    matrix = probe.execute(plan, prober, blacklist=blacklist if blacklist else None)
    artifacts.write_matrix(cfg.out_dir / MATRIX, matrix)
    say(
        f"probe: {len(plan.tasks)} tasks, {len(matrix.cells)} cells, "
        f"{len(matrix.policy_skips)} policy skips"
    )
    _write_manifest(
        cfg,
        "probe",
        [filtered_path],
        [cfg.out_dir / MATRIX],
        {"tasks": len(plan.tasks), "cells": len(matrix.cells), "skips": len(matrix.policy_skips)},
        started,
    )
    return 0


def _per_source_sets(filtered: ingest.TargetSet) -> dict[ingest.SourceTag, ingest.TargetSet]:
    out: dict[ingest.SourceTag, dict] = {}
    for address, entry in filtered.entries.items():
        for tag in entry.sources:
            out.setdefault(tag, {})[address] = entry
    return {tag: ingest.TargetSet(entries) for tag, entries in out.items()}


def cmd_analyze(cfg: PipelineConfig, say: _Printer) -> int:
    started = time.monotonic()
    obs_path = _need(cfg.out_dir / OBSERVATIONS, "ingest")
    filtered_path = _need(cfg.out_dir / FILTERED, "filter")
    observations = artifacts.read_observations(obs_path)
    filtered = artifacts.read_target_set(filtered_path)
    routing = _load_routing(cfg)
    if cfg.analytics.oui is not None:
        with open(cfg.analytics.oui, encoding="utf-8") as fh:
            oui = analytics.OuiDatabase.load(fh)
    else:
        oui = analytics.OuiDatabase({})

    reports_dir = cfg.out_dir / REPORTS
    reports_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def emit(name: str, obj) -> None:
        path = reports_dir / name
        artifacts.write_json(path, obj)
        written.append(path)

    per_source = _per_source_sets(filtered)
    kept_obs = [o for o in observations if o.address in filtered.entries]
    if not per_source:
        say("warning: filtered target set is empty; reports will be mostly empty")

    if per_source:
        cov = analytics.coverage(per_source, routing)
        emit("coverage.json", cov.to_json_obj())
    else:
        emit(
            "coverage.json",
            {
                "sources": {},
                "denominators": {"ases": routing.as_count, "prefixes": routing.prefix_count},
                "combined": {"as_count": 0, "prefix_count": 0},
            },
        )

    series = analytics.runup(kept_obs, routing, cfg.analytics.runup_bucket)
    emit("runup.json", {"bucket_seconds": cfg.analytics.runup_bucket, "series": series})
    runup_tsv = ["bucket_start\tcumulative_ips\tcumulative_ases\tcumulative_prefixes"]
    runup_tsv += [
        f"{r['bucket_start']}\t{r['cumulative_ips']}\t{r['cumulative_ases']}\t{r['cumulative_prefixes']}"
        for r in series
    ]
    (reports_dir / "fig_runup.tsv").write_text("".join(l + "\n" for l in runup_tsv))
    written.append(reports_dir / "fig_runup.tsv")

    flow_obs = [o for o in observations if o.source.kind == "PassiveFlow"]
    emit("port_breakdown.json", analytics.port_breakdown(flow_obs, 10))

    profile = analytics.iid_profile(
        per_source, oui, cfg.analytics.low_threshold, cfg.analytics.privacy_band
    )
    emit("iid_profile.json", profile.to_json_obj())

    labels = sorted(tag.label() for tag in per_source)
    histograms = {
        tag.label(): analytics.hamming_histogram(tag_set.packed()[1])
        for tag, tag_set in per_source.items()
    }
    combined = analytics.hamming_histogram(filtered.packed()[1])
    emit(
        "hamming_histogram.json",
        {
            "combined": combined.to_json_obj(),
            "per_source": {label: histograms[label].to_json_obj() for label in labels},
        },
    )
    hamming_tsv = ["weight\tcombined\t" + "\t".join(labels)]
    for w in range(65):
        row = [str(w), str(combined.counts[w])] + [str(histograms[l].counts[w]) for l in labels]
        hamming_tsv.append("\t".join(row))
    (reports_dir / "fig_hamming.tsv").write_text("".join(l + "\n" for l in hamming_tsv))
    written.append(reports_dir / "fig_hamming.tsv")

    agility_combined = analytics.prefix_agility(kept_obs)
    agility_eui = analytics.prefix_agility(kept_obs, eui64_only=True)
    per_source_agility = {}
    for tag in sorted(per_source):
        tag_obs = [o for o in kept_obs if o.source == tag]
        per_source_agility[tag.label()] = analytics.prefix_agility(tag_obs).to_json_obj()
    emit(
        "prefix_agility.json",
        {
            "combined": agility_combined.to_json_obj(),
            "combined_eui64_only": agility_eui.to_json_obj(),
            "per_source": per_source_agility,
        },
    )

    server_ports = frozenset(
        (s.kind, s.port) for s in map(probe.parse_scan_label, cfg.analytics.server_ports)
    )
    per_source_servers = {
        tag.label(): analytics.server_coverage(tag_set, routing, server_ports).to_json_obj()
        for tag, tag_set in sorted(per_source.items())
    }
    emit(
        "server_coverage.json",
        {
            "combined": analytics.server_coverage(filtered, routing, server_ports).to_json_obj(),
            "per_source": per_source_servers,
        },
    )

    matrix_path = cfg.out_dir / MATRIX
    if matrix_path.exists():
        matrix = artifacts.read_matrix(matrix_path)
        stable = analytics.stable_core(matrix, cfg.analytics.stable_window)
        from .addr import canonical_text

        emit(
            "stable_core.json",
            {
                "window_seconds": cfg.analytics.stable_window,
                "count": len(stable),
                "addresses": [canonical_text(a) for a in stable],
            },
        )
        table = probe.response_table(matrix)
        summary = probe.icmp_vs_inprotocol(matrix)
        emit("in_protocol.json", {"response_table": table, "icmp_vs_inprotocol": summary})
        decay_tsv = ["scan\toffset\ttargets\tresponsive\trate_pct"]
        for label in sorted(table):
            block = table[label]
            for row in block["offsets"]:
                decay_tsv.append(
                    f"{label}\t{row['offset']}\t{block['targets']}\t{row['responsive']}\t{row['rate_pct']}"
                )
        (reports_dir / "fig_decay.tsv").write_text("".join(l + "\n" for l in decay_tsv))
        written.append(reports_dir / "fig_decay.tsv")
    else:
        say("warning: matrix.bin absent; skipping stable core and in-protocol reports")

    say(f"analyze: wrote {len(written)} report files to {reports_dir}")
    _write_manifest(
        cfg,
        "analyze",
        [obs_path, filtered_path],
        written,
        {"reports": len(written)},
        started,
    )
    return 0


def cmd_recommend(cfg: PipelineConfig, say: _Printer, scan_type: str) -> int:
    started = time.monotonic()
    if scan_type not in analytics.SCAN_GOALS:
        print(
            f"unknown scan type {scan_type!r}; valid: {', '.join(analytics.SCAN_GOALS)}",
            file=sys.stderr,
        )
        return 2
    filtered_path = _need(cfg.out_dir / FILTERED, "filter")
    filtered = artifacts.read_target_set(filtered_path)
    routing = _load_routing(cfg)
    per_source = _per_source_sets(filtered)
    cov = analytics.coverage(per_source, routing) if per_source else None
    response_stats = None
    matrix_path = cfg.out_dir / MATRIX
    if matrix_path.exists():
        response_stats = probe.response_table(artifacts.read_matrix(matrix_path))
    available = {ingest.SourceTag(s.kind, s.name) for s in cfg.sources}
    rec = analytics.recommend(scan_type, available, cov, response_stats)
    say(f"recommended source order for {scan_type}:")
    for i, line in enumerate(rec.rationale, start=1):
        say(f"  {i}. {line}")
    for note in rec.notes:
        say(f"  note: {note}")
    out_path = cfg.out_dir / f"recommendation_{scan_type}.json"
    artifacts.write_json(out_path, rec.to_json_obj())
    _write_manifest(cfg, f"recommend_{scan_type}", [filtered_path], [out_path], {}, started)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hitlist6",
        description="IPv6 hitlist pipeline: ingest sources, filter, probe, analyze.",
    )
    parser.add_argument("--config", help="pipeline config (TOML)")
    parser.add_argument("--out", help="output directory (overrides run.out_dir)")
    parser.add_argument("--seed", type=int, help="seed override")
    parser.add_argument("--threads", type=int, help="worker threads for the filter stage")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", help="read all sources into the observation store")
    sub.add_parser("filter", help="run the filter cascade over ingested targets")
    p_probe = sub.add_parser("probe", help="execute the interval probe plan")
    p_probe.add_argument(
        "--i-am-authorized",
        action="store_true",
        help="acknowledge authorization for raw probing",
    )
    sub.add_parser("analyze", help="emit the report bundle")
    p_rec = sub.add_parser("recommend", help="per-scan-type source recommendation")
    p_rec.add_argument("scan_type")
    p_fix = sub.add_parser("fixture-gen", help="generate a synthetic fixture tree")
    p_fix.add_argument("--dir", required=True, help="fixture output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    say = _Printer(args.quiet)
    try:
        if args.command == "fixture-gen":
            counts = fixtures.generate(args.dir, seed=args.seed if args.seed is not None else 42)
            say(f"fixture-gen: wrote {counts['files']} files to {args.dir}")
            return 0
        if not args.config:
            print("--config is required for this command", file=sys.stderr)
            return 2
        cfg = load_config(args.config, out_dir=args.out, seed=args.seed, threads=args.threads)
        if args.command == "ingest":
            return cmd_ingest(cfg, say)
        if args.command == "filter":
            return cmd_filter(cfg, say)
        if args.command == "probe":
            return cmd_probe(cfg, say, args.i_am_authorized)
        if args.command == "analyze":
            return cmd_analyze(cfg, say)
        if args.command == "recommend":
            return cmd_recommend(cfg, say, args.scan_type)
        raise AssertionError(f"unhandled command {args.command}")
    except (AuthorizationRequired, InsufficientPrivilege) as err:
        print(f"refused: {err}", file=sys.stderr)
        return 3
    except (ConfigError, FatalFormat, UnknownScanType) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Hitlist6Error as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
