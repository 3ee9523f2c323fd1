from __future__ import annotations

import io
import random

import numpy as np
import pytest

from hitlist6 import filtering
from hitlist6.addr import MAX128, Prefix, parse_address, parse_prefix
from hitlist6.errors import FatalFormat, MalformedCidr, MalformedRow
from hitlist6.ingest import Observation, SourceTag, merge

TAG = SourceTag("CaidaDnsNames", "fixture")


def linear_lpm_oracle(prefixes, addresses):
    """Brute-force longest match: scan every entry for every address."""
    out = []
    masks = [(p.value, p.length, p.mask()) for p in prefixes]
    for a in addresses:
        best = None
        best_len = -1
        for value, length, mask in masks:
            if a & mask == value and length > best_len:
                best = (value, length)
                best_len = length
        out.append(best)
    return out


def member_oracle(address, prefixes):
    return any(address in p for p in prefixes)


def make_targets(addresses, ts=1000):
    return merge([[Observation(a, ts, "unknown", None, TAG) for a in addresses]])


def random_prefix(rng, min_len=8, max_len=96):
    length = rng.randint(min_len, max_len)
    return Prefix.make(rng.getrandbits(128), length)


def test_load_cidr_set_membership():
    ps = filtering.load_cidr_set(io.StringIO("2001:db8::/32\n"))
    assert parse_address("2001:db8:1::1") in ps
    assert parse_address("2001:db9::1") not in ps


def test_load_cidr_set_default_route():
    ps = filtering.load_cidr_set(io.StringIO("::/0\n"))
    assert parse_address("::") in ps
    assert parse_address("ffff:ffff:ffff:ffff:ffff:ffff:ffff:ffff") in ps


def test_load_cidr_set_duplicates_equivalent():
    single = filtering.load_cidr_set(io.StringIO("2001:db8::/32\n"))
    doubled = filtering.load_cidr_set(io.StringIO("2001:db8::/32\n2001:db8::/32\n"))
    probe = [parse_address("2001:db8::5"), parse_address("fe80::1")]
    for a in probe:
        assert (a in single) == (a in doubled)


def test_load_cidr_set_comments_and_errors():
    ps = filtering.load_cidr_set(io.StringIO("# comment\n\n2001:db8::/48\n"))
    assert len(ps) == 1
    with pytest.raises(MalformedCidr) as exc:
        filtering.load_cidr_set(io.StringIO("2001:db8::/32\nnot-a-cidr\n"))
    assert exc.value.line == 2
    with pytest.raises(MalformedCidr):
        filtering.load_cidr_set(io.StringIO("2001:db8::/129\n"))


def test_load_pfx2as_basic():
    table = filtering.load_pfx2as(io.StringIO("2001:db8::\t32\t64496\n"))
    matched = table.lookup(parse_address("2001:db8::1"))
    assert matched is not None
    prefix, ases = matched
    assert str(prefix) == "2001:db8::/32"
    assert ases == {64496}


def test_load_pfx2as_multi_origin():
    table = filtering.load_pfx2as(io.StringIO("2001:db8::\t32\t64496_64497\n"))
    _, ases = table.lookup(parse_address("2001:db8::1"))
    assert ases == {64496, 64497}
    table = filtering.load_pfx2as(io.StringIO("2001:db8::\t32\t64496,64497_64498\n"))
    _, ases = table.lookup(parse_address("2001:db8::1"))
    assert ases == {64496, 64497, 64498}


def test_load_pfx2as_longest_match_wins():
    table = filtering.load_pfx2as(
        io.StringIO("2001:db8::\t32\t64496\n2001:db8:aaaa::\t48\t64999\n")
    )
    _, ases = table.lookup(parse_address("2001:db8:aaaa::1"))
    assert ases == {64999}
    _, ases = table.lookup(parse_address("2001:db8:bbbb::1"))
    assert ases == {64496}


def test_load_pfx2as_errors():
    with pytest.raises(MalformedRow) as exc:
        filtering.load_pfx2as(io.StringIO("2001:db8::\t32\t64496\nbad row\n"))
    assert exc.value.line == 2
    with pytest.raises(FatalFormat):
        filtering.load_pfx2as(io.StringIO(""))
    with pytest.raises(MalformedRow):
        filtering.load_pfx2as(io.StringIO("2001:db8::\t32\tnot-an-as\n"))


def test_lookup_empty_table_absent():
    table = filtering.RoutingTable({})
    assert table.lookup(parse_address("2001:db8::1")) is None


def test_lookup_default_route_matches_everything():
    table = filtering.RoutingTable({parse_prefix("::/0"): frozenset({64496})})
    for text in ("::", "2001:db8::1", "ffff::1"):
        prefix, ases = table.lookup(parse_address(text))
        assert ases == {64496}
        assert prefix.length == 0


def test_lpm_matches_linear_scan_oracle():
    rng = random.Random(99)
    prefixes = {random_prefix(rng) for _ in range(300)}
    table = filtering.RoutingTable({p: frozenset({i}) for i, p in enumerate(sorted(prefixes))})
    addresses = [rng.getrandbits(128) for _ in range(500)]
    # Bias half the queries to land inside some prefix.
    plist = sorted(prefixes)
    for i in range(0, 500, 2):
        p = plist[rng.randrange(len(plist))]
        addresses[i] = p.value | (rng.getrandbits(128) & ~p.mask() & MAX128)
    expected = linear_lpm_oracle(plist, addresses)
    hi = np.fromiter((a >> 64 for a in addresses), dtype=np.uint64)
    lo = np.fromiter((a & filtering.LOW64 for a in addresses), dtype=np.uint64)
    got_idx = table.lookup_many(hi, lo)
    for j, a in enumerate(addresses):
        want = expected[j]
        scalar = table.lookup(a)
        if want is None:
            assert got_idx[j] == -1
            assert scalar is None
        else:
            assert (table.prefixes[got_idx[j]].value, table.prefixes[got_idx[j]].length) == want
            assert (scalar[0].value, scalar[0].length) == want


def cascade_oracle(addresses, cfg):
    """Independent set-algebra evaluation of the cascade on address sets."""
    t = set(addresses)
    counts = {}
    for stage, prefixes in (
        ("fullbogons", cfg.fullbogons.prefixes),
        ("iana_special", cfg.iana_special.prefixes),
        ("own_networks", cfg.own_networks.prefixes),
    ):
        hit = {a for a in t if member_oracle(a, prefixes)}
        counts[stage] = len(hit)
        t -= hit
    matched = {a for a in t if member_oracle(a, cfg.routing.prefixes)}
    counts["pfx2as_whitelist"] = len(t) - len(matched)
    t = matched
    if cfg.announced:
        ann = {a for a in t if member_oracle(a, cfg.announced.prefixes)}
        counts["announced_whitelist"] = len(t) - len(ann)
        t = ann
    else:
        counts["announced_whitelist"] = 0
    hit = {a for a in t if member_oracle(a, cfg.blacklist.prefixes)}
    counts["blacklist"] = len(hit)
    t -= hit
    return t, counts


def random_cascade_instance(rng):
    def pset(k, min_len=8, max_len=64):
        return filtering.PrefixSet(random_prefix(rng, min_len, max_len) for _ in range(k))

    routing_prefixes = {random_prefix(rng, 8, 48) for _ in range(rng.randint(3, 20))}
    cfg = filtering.FilterConfig(
        fullbogons=pset(rng.randint(0, 5)),
        iana_special=pset(rng.randint(0, 5)),
        own_networks=pset(rng.randint(0, 3)),
        routing=filtering.RoutingTable(
            {p: frozenset({i}) for i, p in enumerate(sorted(routing_prefixes))}
        ),
        announced=pset(rng.randint(0, 4)) if rng.random() < 0.7 else filtering.PrefixSet(),
        blacklist=pset(rng.randint(0, 3)),
    )
    addresses = set()
    pools = [list(routing_prefixes)]
    for ps in (cfg.fullbogons, cfg.iana_special, cfg.own_networks, cfg.announced, cfg.blacklist):
        if ps.prefixes:
            pools.append(list(ps.prefixes))
    for _ in range(rng.randint(50, 300)):
        if rng.random() < 0.75:
            pool = pools[rng.randrange(len(pools))]
            p = pool[rng.randrange(len(pool))]
            addresses.add(p.value | (rng.getrandbits(128) & ~p.mask() & MAX128))
        else:
            addresses.add(rng.getrandbits(128))
    return addresses, cfg


def test_cascade_drop_and_survive_examples():
    cfg = filtering.FilterConfig(
        fullbogons=filtering.PrefixSet([parse_prefix("100::/64")]),
        routing=filtering.RoutingTable({parse_prefix("2001:db8::/32"): frozenset({64496})}),
        announced=filtering.PrefixSet([parse_prefix("2001:db8::/32")]),
        blacklist=filtering.PrefixSet([parse_prefix("2001:db8:bad::/48")]),
    )
    bogon = parse_address("100::1")
    good = parse_address("2001:db8::1")
    listed = parse_address("2001:db8:bad::1")
    filtered, report = filtering.apply_cascade(make_targets([bogon, good, listed]), cfg)
    assert report.removed("fullbogons") == 1
    assert report.removed("blacklist") == 1
    assert set(filtered.entries) == {good}


def test_cascade_counts_match_set_algebra_oracle():
    rng = random.Random(2024)
    for _ in range(25):
        addresses, cfg = random_cascade_instance(rng)
        targets = make_targets(sorted(addresses))
        filtered, report = filtering.apply_cascade(targets, cfg)
        want_set, want_counts = cascade_oracle(addresses, cfg)
        assert set(filtered.entries) == want_set
        for stage, want in want_counts.items():
            assert report.removed(stage) == want, stage
        # Telescoping: initial unique - sum(removed after dedup) = final.
        removed_total = sum(r for name, r, _ in report.stages if name != "dedup")
        assert len(addresses) - removed_total == report.final_count == len(filtered)


def test_cascade_idempotent():
    rng = random.Random(7)
    for _ in range(5):
        addresses, cfg = random_cascade_instance(rng)
        filtered, _ = filtering.apply_cascade(make_targets(sorted(addresses)), cfg)
        again, report = filtering.apply_cascade(filtered, cfg)
        assert set(again.entries) == set(filtered.entries)
        for name, removed, _ in report.stages:
            if name != "dedup":
                assert removed == 0


def test_cascade_report_telescopes_and_orders():
    addresses, cfg = random_cascade_instance(random.Random(5))
    _, report = filtering.apply_cascade(make_targets(sorted(addresses)), cfg)
    assert [name for name, _, _ in report.stages] == list(filtering.STAGE_ORDER)
    prev_remaining = report.initial_observations
    for _, removed, remaining in report.stages:
        assert remaining == prev_remaining - removed
        prev_remaining = remaining


def test_cascade_threads_identical():
    addresses, cfg = random_cascade_instance(random.Random(11))
    targets = make_targets(sorted(addresses))
    f1, r1 = filtering.apply_cascade(targets, cfg, threads=1)
    f4, r4 = filtering.apply_cascade(targets, cfg, threads=4)
    assert set(f1.entries) == set(f4.entries)
    assert r1.stages == r4.stages


def test_empty_announced_disables_stage():
    cfg = filtering.FilterConfig(
        routing=filtering.RoutingTable({parse_prefix("::/0"): frozenset({1})})
    )
    targets = make_targets([parse_address("2001:db8::1")])
    filtered, report = filtering.apply_cascade(targets, cfg)
    assert report.removed("announced_whitelist") == 0
    assert len(filtered) == 1


def test_dedup_stage_counts_observation_collapse():
    obs = [
        Observation(1, 10, "unknown", None, TAG),
        Observation(1, 20, "unknown", None, TAG),
        Observation(2, 15, "unknown", None, TAG),
    ]
    cfg = filtering.FilterConfig(
        routing=filtering.RoutingTable({parse_prefix("::/0"): frozenset({1})})
    )
    _, report = filtering.apply_cascade(merge([obs]), cfg)
    assert report.initial_observations == 3
    assert report.removed("dedup") == 1
    assert report.remaining("dedup") == 2
