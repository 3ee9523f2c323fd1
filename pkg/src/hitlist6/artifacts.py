"""Serialized pipeline artifacts: TargetSet, observation log, response matrix.

Intermediate artifacts are length-prefixed binary (named sections holding
little-endian columns) with a JSON sidecar describing the layout, so they
stay cheap at large scale while reports remain human-readable JSON. Writers
sort everything they emit: equal inputs produce byte-identical files.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FatalFormat
from .ingest import Observation, SourceTag, TargetEntry, TargetSet
from .probe import Cell, ResponseMatrix, RESPONSIVE_KINDS

MAGIC = b"HL6A"
VERSION = 1

LOW64 = (1 << 64) - 1

PROTO_CODES = {"tcp": 0, "udp": 1, "icmp6": 2, "unknown": 3}
PROTO_NAMES = {v: k for k, v in PROTO_CODES.items()}

REPLY_CODES = {"echo_reply": 0, "syn_ack": 1, "rst": 2, "udp_payload": 3, "icmp_error": 4, "none": 5}
REPLY_NAMES = {v: k for k, v in REPLY_CODES.items()}


def _write_sections(path, kind: str, sections: list[tuple[str, bytes]], sidecar: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        for name, payload in sections:
            raw_name = name.encode()
            fh.write(struct.pack("<H", len(raw_name)))
            fh.write(raw_name)
            fh.write(struct.pack("<Q", len(payload)))
            fh.write(payload)
    schema = {
        "format": "hitlist6-artifact",
        "version": VERSION,
        "kind": kind,
        "sections": sidecar,
    }
    write_json(str(path) + ".schema.json", schema)


def _read_sections(path) -> dict[str, bytes]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise FatalFormat(f"{path}: not a hitlist6 artifact")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != VERSION:
            raise FatalFormat(f"{path}: unsupported artifact version {version}")
        sections = {}
        while True:
            head = fh.read(2)
            if not head:
                break
            (name_len,) = struct.unpack("<H", head)
            name = fh.read(name_len).decode()
            (payload_len,) = struct.unpack("<Q", fh.read(8))
            sections[name] = fh.read(payload_len)
    return sections


def write_json(path, obj) -> None:
    """Byte-stable JSON: sorted keys, two-space indent, trailing newline."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def _source_table(tags) -> tuple[list[SourceTag], dict[SourceTag, int]]:
    ordered = sorted(set(tags))
    return ordered, {tag: i for i, tag in enumerate(ordered)}


def _col(values, dtype) -> bytes:
    return np.asarray(values, dtype=dtype).tobytes()


def write_target_set(path, targets: TargetSet) -> None:
    order = sorted(targets.entries)
    entries = [targets.entries[a] for a in order]
    tags, tag_ids = _source_table(t for e in entries for t in e.sources)

    pp_offsets = [0]
    pp_data = []
    src_offsets = [0]
    src_data = []
    for e in entries:
        for transport, port in sorted(
            e.port_protocols, key=lambda pp: (pp[0], -1 if pp[1] is None else pp[1])
        ):
            pp_data.append(PROTO_CODES[transport] << 20 | (0 if port is None else port + 1))
        pp_offsets.append(len(pp_data))
        for tag in sorted(e.sources):
            src_data.append(tag_ids[tag])
        src_offsets.append(len(src_data))

    meta = {
        "count": len(order),
        "sources": [[t.kind, t.name] for t in tags],
    }
    sections = [
        ("meta", json.dumps(meta, sort_keys=True).encode()),
        ("addr_hi", _col([a >> 64 for a in order], "<u8")),
        ("addr_lo", _col([a & LOW64 for a in order], "<u8")),
        ("first_seen", _col([e.first_seen for e in entries], "<i8")),
        ("last_seen", _col([e.last_seen for e in entries], "<i8")),
        ("obs_count", _col([e.observation_count for e in entries], "<u4")),
        ("pp_offsets", _col(pp_offsets, "<u4")),
        ("pp_data", _col(pp_data, "<u4")),
        ("src_offsets", _col(src_offsets, "<u4")),
        ("src_data", _col(src_data, "<u2")),
    ]
    sidecar = [
        {"name": "meta", "encoding": "json", "fields": ["count", "sources"]},
        {"name": "addr_hi", "encoding": "<u8", "description": "address bits 127..64"},
        {"name": "addr_lo", "encoding": "<u8", "description": "address bits 63..0"},
        {"name": "first_seen", "encoding": "<i8", "description": "epoch seconds"},
        {"name": "last_seen", "encoding": "<i8", "description": "epoch seconds"},
        {"name": "obs_count", "encoding": "<u4"},
        {"name": "pp_offsets", "encoding": "<u4", "description": "CSR offsets into pp_data"},
        {"name": "pp_data", "encoding": "<u4", "description": "proto<<20 | port+1 (0 = no port)"},
        {"name": "src_offsets", "encoding": "<u4", "description": "CSR offsets into src_data"},
        {"name": "src_data", "encoding": "<u2", "description": "index into meta.sources"},
    ]
    _write_sections(path, "target_set", sections, sidecar)


def read_target_set(path) -> TargetSet:
    sec = _read_sections(path)
    meta = json.loads(sec["meta"])
    tags = [SourceTag(kind, name) for kind, name in meta["sources"]]
    hi = np.frombuffer(sec["addr_hi"], dtype="<u8")
    lo = np.frombuffer(sec["addr_lo"], dtype="<u8")
    first = np.frombuffer(sec["first_seen"], dtype="<i8")
    last = np.frombuffer(sec["last_seen"], dtype="<i8")
    counts = np.frombuffer(sec["obs_count"], dtype="<u4")
    pp_offsets = np.frombuffer(sec["pp_offsets"], dtype="<u4")
    pp_data = np.frombuffer(sec["pp_data"], dtype="<u4")
    src_offsets = np.frombuffer(sec["src_offsets"], dtype="<u4")
    src_data = np.frombuffer(sec["src_data"], dtype="<u2")

    entries: dict[int, TargetEntry] = {}
    for i in range(meta["count"]):
        address = (int(hi[i]) << 64) | int(lo[i])
        pps = set()
        for raw in pp_data[pp_offsets[i] : pp_offsets[i + 1]]:
            raw = int(raw)
            port_part = raw & 0xFFFFF
            pps.add((PROTO_NAMES[raw >> 20], None if port_part == 0 else port_part - 1))
        sources = {tags[int(s)] for s in src_data[src_offsets[i] : src_offsets[i + 1]]}
        entries[address] = TargetEntry(int(first[i]), int(last[i]), pps, sources, int(counts[i]))
    return TargetSet(entries)


def write_observations(path, observations: list[Observation]) -> None:
    tags, tag_ids = _source_table(o.source for o in observations)
    meta = {"count": len(observations), "sources": [[t.kind, t.name] for t in tags]}
    sections = [
        ("meta", json.dumps(meta, sort_keys=True).encode()),
        ("addr_hi", _col([o.address >> 64 for o in observations], "<u8")),
        ("addr_lo", _col([o.address & LOW64 for o in observations], "<u8")),
        ("ts", _col([o.timestamp for o in observations], "<i8")),
        ("proto", _col([PROTO_CODES[o.transport] for o in observations], "<u1")),
        ("port", _col([-1 if o.port is None else o.port for o in observations], "<i4")),
        ("source", _col([tag_ids[o.source] for o in observations], "<u2")),
    ]
    sidecar = [
        {"name": "meta", "encoding": "json", "fields": ["count", "sources"]},
        {"name": "addr_hi", "encoding": "<u8"},
        {"name": "addr_lo", "encoding": "<u8"},
        {"name": "ts", "encoding": "<i8", "description": "epoch seconds"},
        {"name": "proto", "encoding": "<u1", "description": "0=tcp 1=udp 2=icmp6 3=unknown"},
        {"name": "port", "encoding": "<i4", "description": "-1 = no port"},
        {"name": "source", "encoding": "<u2", "description": "index into meta.sources"},
    ]
    _write_sections(path, "observations", sections, sidecar)


def read_observations(path) -> list[Observation]:
    sec = _read_sections(path)
    meta = json.loads(sec["meta"])
    tags = [SourceTag(kind, name) for kind, name in meta["sources"]]
    hi = np.frombuffer(sec["addr_hi"], dtype="<u8")
    lo = np.frombuffer(sec["addr_lo"], dtype="<u8")
    ts = np.frombuffer(sec["ts"], dtype="<i8")
    proto = np.frombuffer(sec["proto"], dtype="<u1")
    port = np.frombuffer(sec["port"], dtype="<i4")
    source = np.frombuffer(sec["source"], dtype="<u2")
    out = []
    for i in range(meta["count"]):
        p = int(port[i])
        out.append(
            Observation(
                (int(hi[i]) << 64) | int(lo[i]),
                int(ts[i]),
                PROTO_NAMES[int(proto[i])],
                None if p < 0 else p,
                tags[int(source[i])],
            )
        )
    return out


def write_matrix(path, matrix: ResponseMatrix) -> None:
    labels = sorted({key[1] for key in matrix.cells} | set(matrix.planned))
    label_ids = {label: i for i, label in enumerate(labels)}
    keys = sorted(matrix.cells)
    cells = [matrix.cells[k] for k in keys]
    meta = {
        "intervals": list(matrix.intervals),
        "planned": {label: matrix.planned.get(label, 0) for label in labels},
        "labels": labels,
        "rate_limit": matrix.rate_limit,
        "late_sends": matrix.late_sends,
        "count": len(keys),
        "skips": len(matrix.policy_skips),
    }
    sections = [
        ("meta", json.dumps(meta, sort_keys=True).encode()),
        ("addr_hi", _col([k[0] >> 64 for k in keys], "<u8")),
        ("addr_lo", _col([k[0] & LOW64 for k in keys], "<u8")),
        ("label", _col([label_ids[k[1]] for k in keys], "<u2")),
        ("offset", _col([k[2] for k in keys], "<i8")),
        ("sent_at", _col([c.sent_at for c in cells], "<f8")),
        ("reply", _col([REPLY_CODES[c.reply_kind] for c in cells], "<u1")),
        ("skip_hi", _col([k[0] >> 64 for k in matrix.policy_skips], "<u8")),
        ("skip_lo", _col([k[0] & LOW64 for k in matrix.policy_skips], "<u8")),
        ("skip_label", _col([label_ids[k[1]] for k in matrix.policy_skips], "<u2")),
        ("skip_offset", _col([k[2] for k in matrix.policy_skips], "<i8")),
    ]
    sidecar = [
        {"name": "meta", "encoding": "json", "fields": sorted(meta)},
        {"name": "addr_hi", "encoding": "<u8"},
        {"name": "addr_lo", "encoding": "<u8"},
        {"name": "label", "encoding": "<u2", "description": "index into meta.labels"},
        {"name": "offset", "encoding": "<i8", "description": "seconds after first_seen"},
        {"name": "sent_at", "encoding": "<f8"},
        {"name": "reply", "encoding": "<u1", "description": "0=echo_reply 1=syn_ack 2=rst 3=udp_payload 4=icmp_error 5=none"},
        {"name": "skip_hi", "encoding": "<u8"},
        {"name": "skip_lo", "encoding": "<u8"},
        {"name": "skip_label", "encoding": "<u2"},
        {"name": "skip_offset", "encoding": "<i8"},
    ]
    _write_sections(path, "response_matrix", sections, sidecar)


def read_matrix(path) -> ResponseMatrix:
    sec = _read_sections(path)
    meta = json.loads(sec["meta"])
    labels = meta["labels"]
    matrix = ResponseMatrix(meta["intervals"], meta["planned"], meta["rate_limit"])
    matrix.late_sends = meta["late_sends"]
    hi = np.frombuffer(sec["addr_hi"], dtype="<u8")
    lo = np.frombuffer(sec["addr_lo"], dtype="<u8")
    label = np.frombuffer(sec["label"], dtype="<u2")
    offset = np.frombuffer(sec["offset"], dtype="<i8")
    sent_at = np.frombuffer(sec["sent_at"], dtype="<f8")
    reply = np.frombuffer(sec["reply"], dtype="<u1")
    for i in range(meta["count"]):
        kind = REPLY_NAMES[int(reply[i])]
        key = ((int(hi[i]) << 64) | int(lo[i]), labels[int(label[i])], int(offset[i]))
        matrix.cells[key] = Cell(float(sent_at[i]), kind, kind in RESPONSIVE_KINDS)
    skip_hi = np.frombuffer(sec["skip_hi"], dtype="<u8")
    skip_lo = np.frombuffer(sec["skip_lo"], dtype="<u8")
    skip_label = np.frombuffer(sec["skip_label"], dtype="<u2")
    skip_offset = np.frombuffer(sec["skip_offset"], dtype="<i8")
    for i in range(meta["skips"]):
        matrix.policy_skips.append(
            ((int(skip_hi[i]) << 64) | int(skip_lo[i]), labels[int(skip_label[i])], int(skip_offset[i]))
        )
    return matrix
