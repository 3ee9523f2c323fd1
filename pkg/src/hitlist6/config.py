"""Pipeline configuration: a TOML document plus path-only env overrides.

Relative paths resolve against the config file's directory. Validation is
all-or-nothing: every referenced file is checked up front and all missing
paths are reported together. Environment variables HITLIST6_<KEY> override
individual file paths (and only paths), e.g. HITLIST6_FULLBOGONS or
HITLIST6_MODEL; see README for the full key list.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError
from .ingest import SOURCE_KINDS

FILTER_KEYS = (
    "self_prefixes",
    "fullbogons",
    "iana_special",
    "own_networks",
    "pfx2as",
    "announced",
    "blacklist",
)

SOURCE_FORMATS = ("flow", "addresses", "hostnames", "hops")

DEFAULT_FORMAT_BY_KIND = {
    "PassiveFlow": "flow",
    "AlexaList": "hostnames",
    "ReverseDns": "hostnames",
    "ZoneFile": "hostnames",
    "DnsAny": "addresses",
    "CaidaDnsNames": "addresses",
    "Traceroute": "hops",
}

ENV_PREFIX = "HITLIST6_"


@dataclass
class SourceSpec:
    kind: str
    name: str
    path: Path
    format: str


@dataclass
class DnsConfig:
    backend: str = "stub"  # stub | wire
    fixture: Path | None = None
    server: str = ""
    port: int = 53
    concurrency: int = 8
    timeout: float = 2.0


@dataclass
class ProbeConfig:
    backend: str = "sim"  # sim | raw
    intervals: tuple[int, ...] = (60, 3600, 86_400, 604_800)
    rate_limit: float = 100_000.0
    jitter_frac: float = 0.01
    model: Path | None = None
    seed: int = 0
    loss_rate: float = 0.0
    udp_payloads: dict[int, bytes] = field(default_factory=dict)
    source_address: str = ""
    authorized: bool = False


@dataclass
class AnalyticsConfig:
    low_threshold: int = 16
    privacy_band: tuple[int, int] = (20, 44)
    server_ports: tuple[str, ...] = ("tcp80", "tcp443", "udp443")
    oui: Path | None = None
    runup_bucket: int = 86_400
    stable_window: int = 604_800


@dataclass
class PipelineConfig:
    base_dir: Path
    out_dir: Path
    seed: int
    threads: int
    sources: list[SourceSpec]
    filter_paths: dict[str, Path | None]
    ingest_timestamp: int | None
    dns: DnsConfig
    probe: ProbeConfig
    analytics: AnalyticsConfig
    raw: dict

    def config_hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, default=str).encode()
        return hashlib.sha256(canonical).hexdigest()


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def _env_path(key: str) -> str | None:
    return os.environ.get(ENV_PREFIX + key.upper())


def load_config(
    path,
    out_dir: str | None = None,
    seed: int | None = None,
    threads: int | None = None,
) -> PipelineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"{path}: {err}") from None
    base = path.parent
    problems: list[str] = []

    run = doc.get("run", {})
    cfg_out = out_dir if out_dir is not None else run.get("out_dir", "out")
    cfg_seed = seed if seed is not None else int(run.get("seed", 42))
    cfg_threads = threads if threads is not None else int(run.get("threads", 1))
    if cfg_threads < 1:
        problems.append("run.threads must be >= 1")

    sources: list[SourceSpec] = []
    seen_tags = set()
    for i, row in enumerate(doc.get("source", [])):
        kind = row.get("kind", "")
        name = row.get("name", "")
        if kind not in SOURCE_KINDS:
            problems.append(f"source[{i}]: unknown kind {kind!r}")
            continue
        if (kind, name) in seen_tags:
            problems.append(f"source[{i}]: duplicate tag {kind}:{name}")
        seen_tags.add((kind, name))
        fmt = row.get("format", DEFAULT_FORMAT_BY_KIND[kind])
        if fmt not in SOURCE_FORMATS:
            problems.append(f"source[{i}]: unknown format {fmt!r}")
            continue
        if "path" not in row:
            problems.append(f"source[{i}]: missing path")
            continue
        sources.append(SourceSpec(kind, name, _resolve(base, row["path"]), fmt))

    filters = doc.get("filters", {})
    filter_paths: dict[str, Path | None] = {}
    for key in FILTER_KEYS:
        override = _env_path(key)
        value = override if override is not None else filters.get(key)
        filter_paths[key] = _resolve(base, value) if value else None

    ingest_section = doc.get("ingest", {})
    ingest_timestamp = ingest_section.get("default_timestamp")
    if ingest_timestamp is not None:
        ingest_timestamp = int(ingest_timestamp)

    dns_section = doc.get("dns", {})
    dns_fixture = _env_path("dns_fixture") or dns_section.get("fixture")
    dns = DnsConfig(
        backend=dns_section.get("backend", "stub"),
        fixture=_resolve(base, dns_fixture) if dns_fixture else None,
        server=dns_section.get("server", ""),
        port=int(dns_section.get("port", 53)),
        concurrency=int(dns_section.get("concurrency", 8)),
        timeout=float(dns_section.get("timeout", 2.0)),
    )
    if dns.backend not in ("stub", "wire"):
        problems.append(f"dns.backend must be stub or wire, got {dns.backend!r}")
    if dns.backend == "wire" and not dns.server:
        problems.append("dns.backend = wire requires dns.server")

    probe_section = doc.get("probe", {})
    payloads: dict[int, bytes] = {}
    for port_text, hex_text in probe_section.get("udp_payloads", {}).items():
        try:
            payloads[int(port_text)] = bytes.fromhex(hex_text)
        except ValueError:
            problems.append(f"probe.udp_payloads.{port_text}: bad hex payload")
    model = _env_path("model") or probe_section.get("model")
    probe = ProbeConfig(
        backend=probe_section.get("backend", "sim"),
        intervals=tuple(int(x) for x in probe_section.get("intervals", (60, 3600, 86_400, 604_800))),
        rate_limit=float(probe_section.get("rate_limit", 100_000.0)),
        jitter_frac=float(probe_section.get("jitter_frac", 0.01)),
        model=_resolve(base, model) if model else None,
        seed=int(probe_section.get("seed", cfg_seed)),
        loss_rate=float(probe_section.get("loss_rate", 0.0)),
        udp_payloads=payloads,
        source_address=probe_section.get("source_address", ""),
        authorized=bool(probe_section.get("authorized", False)),
    )
    if probe.backend not in ("sim", "raw"):
        problems.append(f"probe.backend must be sim or raw, got {probe.backend!r}")
    if probe.backend == "sim" and probe.model is None:
        problems.append("probe.backend = sim requires probe.model")
    if probe.backend == "raw" and filter_paths["blacklist"] is None:
        problems.append("probe.backend = raw requires filters.blacklist")
    if probe.rate_limit < 1:
        problems.append("probe.rate_limit must be >= 1")

    analytics_section = doc.get("analytics", {})
    oui = _env_path("oui") or analytics_section.get("oui")
    band = analytics_section.get("privacy_band", (20, 44))
    analytics = AnalyticsConfig(
        low_threshold=int(analytics_section.get("low_threshold", 16)),
        privacy_band=(int(band[0]), int(band[1])),
        server_ports=tuple(analytics_section.get("server_ports", ("tcp80", "tcp443", "udp443"))),
        oui=_resolve(base, oui) if oui else None,
        runup_bucket=int(analytics_section.get("runup_bucket", 86_400)),
        stable_window=int(analytics_section.get("stable_window", 604_800)),
    )

    referenced = [s.path for s in sources]
    referenced += [p for p in filter_paths.values() if p is not None]
    for extra in (dns.fixture, probe.model, analytics.oui):
        if extra is not None:
            referenced.append(extra)
    missing = sorted({str(p) for p in referenced if not p.exists()})
    if missing:
        problems.append("missing input files: " + ", ".join(missing))
    if problems:
        raise ConfigError("; ".join(problems))

    return PipelineConfig(
        base_dir=base,
        out_dir=_resolve(Path.cwd(), cfg_out) if not Path(cfg_out).is_absolute() else Path(cfg_out),
        seed=cfg_seed,
        threads=cfg_threads,
        sources=sources,
        filter_paths=filter_paths,
        ingest_timestamp=ingest_timestamp,
        dns=dns,
        probe=probe,
        analytics=analytics,
        raw=doc,
    )
