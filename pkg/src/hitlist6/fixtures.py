"""Deterministic synthetic fixture generator (the `fixture-gen` subcommand).

Builds a small self-consistent world: an announced prefix plan with origin
ASes, passive flow captures from two vantage points, hostname and address
list sources, traceroute hops, a responder model for the simulated prober,
and a config file wiring it all together. Byte-identical for a given seed.
"""

from __future__ import annotations

import random
from pathlib import Path

from .addr import canonical_text, eui64_encode
from .probe import Responder, save_model

BASE_TS = 1_438_041_600  # 2015-07-28 00:00:00 UTC
DAY = 86_400

VENDOR_OUIS = [
    ("001632", "Samsung Electronics Co., Ltd", 31),
    ("0017f2", "Apple, Inc.", 12),
    ("0013a9", "Sony Corporation", 6),
    ("000e6d", "Murata Manufacturing Co., Ltd.", 5),
    ("001882", "Huawei Technologies Co., Ltd", 5),
    ("0012bf", "Arcadyan Technology Corporation", 4),
    ("00040e", "AVM GmbH", 3),
    ("00000c", "Cisco Systems, Inc", 3),
]

UL_BIT = 1 << 57
LOW64 = (1 << 64) - 1


def _block(k: int) -> int:
    """Announced /32 number k: 2a05:<k>::/32."""
    return (0x2A05 << 112) | (k << 96)


def _server_addr(k: int, i: int) -> int:
    return _block(k) | (0x53 << 64) | (i + 1)


def _privacy_iid(rng) -> int:
    while True:
        iid = rng.getrandbits(64) & ~UL_BIT
        if (iid >> 24) & 0xFFFF != 0xFFFE and iid >= 1 << 16:
            return iid


def _client_addr(rng, k: int, iid: int | None = None) -> int:
    subnet = rng.getrandbits(16) << 64
    if iid is None:
        iid = _privacy_iid(rng)
    return _block(k) | subnet | iid


def _pick_vendor(rng) -> str:
    total = sum(w for _, _, w in VENDOR_OUIS)
    roll = rng.randrange(total)
    for oui, _, weight in VENDOR_OUIS:
        roll -= weight
        if roll < 0:
            return oui
    return VENDOR_OUIS[0][0]


def _eui64_addr(rng, k: int) -> int:
    mac = bytes.fromhex(_pick_vendor(rng)) + bytes(rng.randrange(256) for _ in range(3))
    return _client_addr(rng, k, eui64_encode(mac))


def _write_lines(path: Path, lines) -> None:
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def generate(out_dir, seed: int = 42) -> dict:
    """Write the full fixture tree under out_dir; returns summary counts."""
    rng = random.Random(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    # Prefix and AS plan.
    pfx2as_rows = []
    announced = []
    for k in range(12):
        prefix = f"2a05:{k:x}::"
        pfx2as_rows.append(f"{prefix}\t32\t{64500 + k}")
        if k < 10:
            announced.append(f"{prefix}/32")
    pfx2as_rows.append("2a05:1:aa::\t48\t64513")
    pfx2as_rows.append("2a05:2:bb::\t48\t64514_64515")
    announced += ["2a05:1:aa::/48", "2a05:2:bb::/48"]
    _write_lines(out / "pfx2as.tsv", pfx2as_rows)
    _write_lines(out / "announced.txt", announced)
    _write_lines(out / "fullbogons.txt", ["# unallocated space", "100::/64", "2001:10::/28"])
    _write_lines(
        out / "iana_special.txt",
        ["fe80::/10", "fc00::/7", "ff00::/8", "2001:db8::/32", "::ffff:0:0/96"],
    )
    _write_lines(out / "own_networks.txt", ["2a05:0:aaaa::/48"])
    _write_lines(out / "self_prefixes.txt", ["2a05:0:ffff::/48"])
    _write_lines(out / "blacklist.txt", ["2a05:3:b1ac::/48"])

    oui_lines = ["OUI/MA-L            Organization", ""]
    for oui, vendor, _ in VENDOR_OUIS:
        dashed = "-".join(oui[i : i + 2].upper() for i in (0, 2, 4))
        oui_lines.append(f"{dashed}   (hex)\t\t{vendor}")
    _write_lines(out / "oui.txt", oui_lines)

    # Host populations.
    servers = []  # (address, transport, port)
    for i in range(40):
        k = i % 10
        port = [("tcp", 443), ("tcp", 443), ("tcp", 80), ("udp", 443), ("udp", 53)][i % 5]
        servers.append((_server_addr(k, i), *port))
    # Clients carry privacy or EUI-64 IIDs; roughly half roam across 2-3
    # /64 prefixes (same IID, new subnet), which feeds the agility report.
    clients = []
    for _ in range(250):
        k = rng.randrange(8)
        iid = _privacy_iid(rng)
        n_var = 1 if rng.random() < 0.5 else rng.randint(2, 3)
        for _ in range(n_var):
            clients.append(_block(k) | (rng.getrandbits(16) << 64) | iid)
    for _ in range(60):
        k = rng.randrange(8)
        mac = bytes.fromhex(_pick_vendor(rng)) + bytes(rng.randrange(256) for _ in range(3))
        iid = eui64_encode(mac)
        n_var = 2 if rng.random() < 0.2 else 1
        for _ in range(n_var):
            clients.append(_block(k) | (rng.getrandbits(16) << 64) | iid)
    bt_peers = sorted(_client_addr(rng, 4) for _ in range(200))
    dht_peers = sorted(_client_addr(rng, 5) for _ in range(40))
    routers = []
    for k in range(12):
        for sub in range(3):
            routers.append(_block(k) | ((0xC0 + sub) << 72) | (sub + 1))
    # Routers inside the /48 sub-allocations give the traceroute-derived
    # sources origin ASes nobody else covers: 2a05:1:aa::/48 appears only
    # in the CAIDA list, 2a05:2:bb::/48 only in our own traceroute hops.
    sub48_caida = [(0x2A05 << 112) | (1 << 96) | (0xAA << 80) | (0xE0 << 72) | (i + 1) for i in range(2)]
    sub48_trace = [(0x2A05 << 112) | (2 << 96) | (0xBB << 80) | (0xE0 << 72) | (i + 1) for i in range(2)]

    noise = (
        ["fe80::1", "fc00::1234", "100::1", "2001:db8::99", "2a05:0:aaaa::7"]
        + [f"2a05:a::{i:x}" for i in range(1, 4)]
        + ["2a05:3:b1ac::66"]
    )
    self_addr = "2a05:0:ffff::1"

    first_ts: dict[int, int] = {}

    def flow_rows(n_rows, vantage_rng, udp53_share):
        rows = []
        for _ in range(n_rows):
            ts = BASE_TS + vantage_rng.randrange(14 * DAY)
            roll = vantage_rng.random()
            if roll < 0.02:
                src = noise[vantage_rng.randrange(len(noise))]
                dst_addr, proto, port = servers[vantage_rng.randrange(len(servers))]
                rows.append(f"{ts},{src},{canonical_text(dst_addr)},{proto},{port}")
                first_ts[dst_addr] = min(first_ts.get(dst_addr, ts), ts)
                continue
            if roll < 0.03:
                dst_addr, proto, port = servers[vantage_rng.randrange(len(servers))]
                rows.append(f"{ts},{self_addr},{canonical_text(dst_addr)},{proto},{port}")
                first_ts[dst_addr] = min(first_ts.get(dst_addr, ts), ts)
                continue
            if roll < 0.08:
                a = bt_peers[vantage_rng.randrange(len(bt_peers))]
                b = bt_peers[vantage_rng.randrange(len(bt_peers))]
                rows.append(f"{ts},{canonical_text(a)},{canonical_text(b)},udp,49001")
                for x in (a, b):
                    first_ts[x] = min(first_ts.get(x, ts), ts)
                continue
            if roll < 0.10:
                a = dht_peers[vantage_rng.randrange(len(dht_peers))]
                b = dht_peers[vantage_rng.randrange(len(dht_peers))]
                rows.append(f"{ts},{canonical_text(a)},{canonical_text(b)},udp,51413")
                for x in (a, b):
                    first_ts[x] = min(first_ts.get(x, ts), ts)
                continue
            client = clients[vantage_rng.randrange(len(clients))]
            if roll < 0.10 + udp53_share:
                proto, port = "udp", 53
                server = next(s for s in servers if s[1] == "udp" and s[2] == 53)
            elif roll < 0.14 + udp53_share:
                proto, port = "icmp6", ""
                server = servers[vantage_rng.randrange(len(servers))]
            elif roll < 0.17 + udp53_share:
                proto, port = "tcp", vantage_rng.choice([25, 22, 993, 119, 5228])
                server = servers[vantage_rng.randrange(len(servers))]
            else:
                server = servers[vantage_rng.randrange(len(servers))]
                proto, port = server[1], server[2]
            rows.append(f"{ts},{canonical_text(client)},{canonical_text(server[0])},{proto},{port}")
            for a in (client, server[0]):
                first_ts[a] = min(first_ts.get(a, ts), ts)
        return rows

    # Seed rows guarantee every peer-to-peer endpoint is observed at least
    # once, so cohort-level statistics recover the configured fractions.
    seed_rows = []
    for pool, port in ((bt_peers, 49001), (dht_peers, 51413)):
        for i in range(0, len(pool), 2):
            ts = BASE_TS + (i * 977) % (14 * DAY)
            a, b = pool[i], pool[i + 1]
            seed_rows.append(f"{ts},{canonical_text(a)},{canonical_text(b)},udp,{port}")
            for x in (a, b):
                first_ts[x] = min(first_ts.get(x, ts), ts)

    ixp_rng = random.Random(rng.getrandbits(64))
    uplink_rng = random.Random(rng.getrandbits(64))
    _write_lines(
        out / "flows_ixp.csv",
        ["ts,src,dst,proto,port"] + seed_rows + flow_rows(3000, ixp_rng, 0.02),
    )
    _write_lines(out / "flows_uplink.csv", ["ts,src,dst,proto,port"] + flow_rows(1200, uplink_rng, 0.12))

    # Hostname sources plus the stub resolver map.
    stub_lines = []
    alexa_hosts = []
    for i in range(120):
        name = f"www{i}.site{i % 7}.example"
        alexa_hosts.append(name)
        if i % 9 == 8:
            continue  # nxdomain
        if i < 30:
            target = servers[i % len(servers)][0]
        else:
            target = _server_addr(5 + i % 5, 100 + i)
        stub_lines.append(f"{name} {canonical_text(target)}")
        if i % 11 == 0:
            stub_lines.append(f"{name} {canonical_text(target + 0x10000)}")
    _write_lines(out / "alexa_hosts.txt", alexa_hosts)

    rdns_hosts = []
    for i in range(150):
        name = f"ptr{i}.rev.example"
        rdns_hosts.append(name)
        if i % 6 == 5:
            continue
        target = servers[i % len(servers)][0] if i % 3 else _server_addr(6 + i % 4, 500 + i)
        stub_lines.append(f"{name} {canonical_text(target)}")
    _write_lines(out / "rdns_hosts.txt", rdns_hosts)
    _write_lines(out / "dns_aaaa.txt", stub_lines)

    dnsany = [canonical_text(s[0]) for s in servers[:20]]
    dnsany += [canonical_text(_server_addr(7 + i % 3, 800 + i)) for i in range(60)]
    dnsany += [canonical_text(clients[i]) for i in range(0, 40, 2)]
    dnsany += ["# stray comment", "2a05:a::dead"]  # unannounced block
    _write_lines(out / "dnsany_addrs.txt", dnsany)

    caida = [canonical_text(r) for r in routers + sub48_caida]
    _write_lines(out / "caida_addrs.txt", caida)

    hops = [canonical_text(routers[i]) for i in range(0, len(routers), 2)]
    new_routers = []
    for i in range(25):
        k = rng.randrange(10)
        new_routers.append(_block(k) | (0xD0 << 72) | rng.getrandbits(8) | (1 << 8))
    new_routers += sub48_trace
    hops += [canonical_text(r) for r in new_routers]
    _write_lines(out / "hops_traceroute.txt", hops)

    # Responder model: servers and peers stay up, clients decay, most
    # routers answer echo. 129/200 udp49001 peers drop ICMPv6 (64.5%).
    model: dict[int, Responder] = {}
    for address, transport, port in servers:
        model[address] = Responder(
            0, None, frozenset({"icmp6", f"{transport}{port}"}), False
        )
    for i, address in enumerate(bt_peers):
        model[address] = Responder(
            0, None, frozenset({"icmp6", "udp49001"}), drops_icmp=i < 129
        )
    for address in dht_peers:
        model[address] = Responder(0, None, frozenset({"icmp6", "udp51413"}), False)
    for address in clients:
        if rng.random() < 0.95:
            birth = first_ts.get(address, BASE_TS)
            model[address] = Responder(
                birth, rng.expovariate(1 / DAY), frozenset({"icmp6"}), False
            )
    for address in routers + sub48_caida + new_routers:
        if rng.random() < 0.9:
            model[address] = Responder(0, None, frozenset({"icmp6"}), False)
    with open(out / "model.json", "w", encoding="utf-8") as fh:
        save_model(fh, model)

    config_text = f"""\
[run]
out_dir = "out"
seed = {seed}
threads = 1

[[source]]
kind = "PassiveFlow"
name = "ixp"
path = "flows_ixp.csv"

[[source]]
kind = "PassiveFlow"
name = "uplink"
path = "flows_uplink.csv"

[[source]]
kind = "AlexaList"
name = "alexa1m"
path = "alexa_hosts.txt"

[[source]]
kind = "ReverseDns"
name = "rdns"
path = "rdns_hosts.txt"

[[source]]
kind = "DnsAny"
name = "dnsany"
path = "dnsany_addrs.txt"

[[source]]
kind = "CaidaDnsNames"
name = "caida"
path = "caida_addrs.txt"

[[source]]
kind = "Traceroute"
name = "muc"
path = "hops_traceroute.txt"

[filters]
self_prefixes = "self_prefixes.txt"
fullbogons = "fullbogons.txt"
iana_special = "iana_special.txt"
own_networks = "own_networks.txt"
pfx2as = "pfx2as.tsv"
announced = "announced.txt"
blacklist = "blacklist.txt"

[ingest]
default_timestamp = {BASE_TS}

[dns]
backend = "stub"
fixture = "dns_aaaa.txt"
concurrency = 8

[probe]
backend = "sim"
intervals = [60, 3600, 86400, 604800]
rate_limit = 1000000.0
model = "model.json"
seed = {seed}

[analytics]
low_threshold = 16
privacy_band = [20, 44]
server_ports = ["tcp80", "tcp443", "udp443"]
oui = "oui.txt"
stable_window = 604800
"""
    (out / "fixture.toml").write_text(config_text, encoding="utf-8")

    return {
        "servers": len(servers),
        "clients": len(clients),
        "bt_peers": len(bt_peers),
        "dht_peers": len(dht_peers),
        "routers": len(routers) + len(new_routers),
        "model_entries": len(model),
        "files": 18,
    }
