"""Acceptance criteria, one test each.  conftest prints a PASS/FAIL line per
criterion at the end of the run."""
import math
import os
import pickle
import random
import struct
import subprocess
import sys
import time
from collections import Counter
from pathlib import Path

from corpus import (
    Corpus,
    event_tree,
    naive_draw,
    naive_hist,
    random_draw_case,
    random_event,
    same_bins,
)
from rawscan import records
from nrt import container
from nrt.container import ObjectKey, decode_key_table, encode_key_table
from nrt.errors import NoMatchError, UnsupportedHandlerError
from nrt.hist import Hist1D, HistStack, merge, stack_totals
from nrt.plugin import PluginRegistry, load_config, open_any
from nrt.query import HistSpec, Query, parse
from nrt.refs import Ref, RefRegistry, assign_uid, resolve
from nrt.sched import PacketTask, WorkerSim, run, scenario_gen, trace_csv
from nrt.schema import (
    DynamicRecord,
    FieldDescriptor,
    Kind,
    SchemaRegistry,
    TypeDescriptor,
    decode_descriptor,
    read_emulated,
)
from nrt.tree import create_tree, open_tree
from nrt.xmlio import export_xml, import_xml

HERE = Path(__file__).parent
VALUE_TAG, DESCRIPTOR_TAG = 0xD6, 0xD5


def write_corpus(path: Path, seed: int, n: int = 1000):
    corpus = Corpus(seed)
    pairs = corpus.pairs(n)
    f = container.create(str(path), registry=corpus.registry)
    expected = []
    for i, (_, rec) in enumerate(pairs):
        f.put(f"r{i}", rec)
        expected.append((f"r{i}", rec))
    f.close()
    return expected


def test_c01_self_description_round_trip(tmp_path):
    path = tmp_path / "corpus.nrt"
    started = time.perf_counter()
    expected = write_corpus(path, seed=1001)
    with open(tmp_path / "expected.pkl", "wb") as fh:
        pickle.dump(expected, fh)
    proc = subprocess.run(
        [sys.executable, str(HERE / "read_back.py"), str(path), str(tmp_path / "expected.pkl")],
        capture_output=True, text=True, env={**os.environ, "PYTHONPATH": str(HERE)},
    )
    elapsed = time.perf_counter() - started
    assert proc.returncode == 0, proc.stdout + proc.stderr
    assert proc.stdout.split() == ["ok", "1000", "bad", "0"]
    assert elapsed < 30.0


def test_c02_emulated_read_without_native_bindings(tmp_path):
    path = tmp_path / "corpus.nrt"
    expected = dict(write_corpus(path, seed=1002))
    data = path.read_bytes()
    # descriptors straight from the raw bytes, into a registry with no bindings
    registry = SchemaRegistry()
    for tag, _, payload in records(data):
        if tag == DESCRIPTOR_TAG:
            registry.register(decode_descriptor(payload))
    by_offset = {off: payload for tag, off, payload in records(data) if tag == VALUE_TAG}
    dir_offset = struct.unpack_from("<Q", data, 8)[0]
    keys = decode_key_table(data[dir_offset:])
    assert len(keys) == 1000
    for key in keys:
        payload = by_offset[key.offset]
        body = payload[21:] if payload[0] & 1 else payload[1:]
        desc = registry.lookup(key.type_name, key.type_version)
        assert registry.binding(desc.name) is None
        assert read_emulated(body, desc, registry) == expected[key.name]


HIT = TypeDescriptor("Hit", 1, (FieldDescriptor("x", Kind.FLOAT64), FieldDescriptor("y", Kind.FLOAT64)))


def test_c03_rollover_naming_and_integrity(tmp_path):
    path = tmp_path / "f.nrt"
    f = container.create(str(path), max_size=64 * 1024, registry=SchemaRegistry([HIT]))
    t = create_tree(f, "T", HIT, basket_capacity=64)
    n = 0
    while not (tmp_path / "f_2.nrt").exists():
        t.fill(DynamicRecord("Hit", 1, {"x": float(n), "y": -float(n)}))
        n += 1
    for _ in range(500):
        t.fill(DynamicRecord("Hit", 1, {"x": float(n), "y": -float(n)}))
        n += 1
    t.finalize()
    t.close()
    names = sorted(p.name for p in tmp_path.iterdir())
    k = len(names)
    assert k >= 3
    assert names == sorted(["f.nrt"] + [f"f_{i}.nrt" for i in range(1, k)])
    u = open_tree(str(path), "T")
    assert u.entries == n
    assert [u.get_entry(i)["x"] for i in range(n)] == [float(i) for i in range(n)]


def test_c04_split_level_invariance():
    rng = random.Random(404)
    for k in range(50):
        events = [random_event(rng, i) for i in range(rng.randint(1, 30))]
        capacity = rng.randint(1, 8)
        expr, sel, _ = random_draw_case(rng)
        entries, hists = [], []
        for level in (0, 1, 3):
            t = event_tree(events, level, capacity, name=f"inv{k}_{level}")
            entries.append([t.get_entry(i) for i in range(t.entries)])
            hists.append(Query(t).draw(expr, sel, HistSpec(13)))
        assert entries[0] == entries[1] == entries[2] == events
        assert same_bins(hists[0], hists[1]) and same_bins(hists[1], hists[2]), (expr, sel)


C = TypeDescriptor("C", 1, (FieldDescriptor("v", Kind.INT64),))
A = TypeDescriptor("A", 1, (FieldDescriptor("i", Kind.INT64), FieldDescriptor("link", Kind.REF)))


def test_c05_reference_semantics(tmp_path):
    schemas = SchemaRegistry([C, A])
    target = DynamicRecord("C", 1, {"v": 99})
    uid = assign_uid(RefRegistry(), target)
    tpath, apath = tmp_path / "target.nrt", tmp_path / "refs.nrt"
    f = container.create(str(tpath), registry=schemas)
    f.put("C", target)
    f.close()
    g = container.create(str(apath), registry=schemas)
    for i in range(5):
        g.put(f"a{i}", DynamicRecord("A", 1, {"i": i, "link": uid}))
        g.put("C", target)
    g.close()

    reader = RefRegistry()
    ref = Ref(container.open_container(str(apath), RefRegistry()).get("a3")["link"])
    assert resolve(ref, reader) is None
    loaded = container.open_container(str(tpath), reader).get("C")
    assert resolve(ref, reader) == loaded == target

    payloads = [p for t, _, p in records(apath.read_bytes()) if t == VALUE_TAG]
    stored = [p for p in payloads if p[0] & 1 and p[1:21] == uid.to_bytes()]
    assert len(stored) == 1


def test_c06_histogram_algebra():
    rng = random.Random(606)
    for _ in range(50):
        a = [(rng.gauss(5, 3), rng.uniform(0, 3)) for _ in range(rng.randint(0, 300))]
        b = [(rng.gauss(5, 3), rng.uniform(0, 3)) for _ in range(rng.randint(0, 300))]
        hists = []
        for sample in (a, b, a + b):
            h = Hist1D("h", 20, 0.0, 10.0)
            for x, w in sample:
                h.fill(x, w)
            hists.append(h)
        m = merge(hists[:2])
        whole = hists[2]
        pairs = list(zip(m.contents, whole.contents)) + [(m.underflow, whole.underflow), (m.overflow, whole.overflow)]
        assert all(math.isclose(p, q, rel_tol=1e-9, abs_tol=1e-12) for p, q in pairs)
        assert m.entries == whole.entries

    labels = ["e", "mu", "tau", "gamma", "pi"]
    for _ in range(50):
        sample1 = [rng.choice(labels) for _ in range(rng.randint(0, 20))]
        sample2 = [rng.choice(labels) for _ in range(rng.randint(0, 20))]
        h1, h2 = Hist1D.labelled("l"), Hist1D.labelled("l")
        for s in sample1:
            h1.fill_label(s)
        for s in sample2:
            h2.fill_label(s)
        want = Counter(sample1 + sample2)
        for order in ([h1, h2], [h2, h1]):
            got = dict(merge(order).label_items())
            assert got == {k: float(v) for k, v in want.items()}

    for _ in range(50):
        members = []
        for j in range(rng.randint(1, 5)):
            h = Hist1D(f"m{j}", 8, -1.0, 1.0)
            for _ in range(rng.randint(0, 40)):
                h.fill(rng.uniform(-1.2, 1.2), rng.random())
            members.append(h)
        totals = stack_totals(HistStack("s", members))
        for k, total in enumerate(totals):
            for b in range(8):
                acc = members[0].contents[b]
                for m in members[1:k + 1]:
                    acc += m.contents[b]
                assert total.contents[b] == acc
        assert stack_totals(HistStack("s", members), nostack=True) == members


def _expected_loads(tree, entries, expr_text, sel_text, axis, capacity):
    touched: list[set] = []
    selection = parse(sel_text) if sel_text.strip() else None
    naive_draw(entries, parse(expr_text), selection, axis, touched)
    branches = set(tree.branch_names)

    def physical(name):
        return name if name in branches else name[:-2]

    need: dict[str, set] = {}
    for i, names in enumerate(touched):
        if axis is not None:
            names = names | {axis + "_n"}
        for name in names:
            need.setdefault(physical(name), set()).add(i // capacity)
    return set().union(*touched) if touched else set(), Counter({b: len(s) for b, s in need.items()})


def test_c07_lazy_reads():
    rng = random.Random(707)
    checked = 0
    while checked < 200:
        events = [random_event(rng, i) for i in range(rng.randint(1, 25))]
        capacity = rng.randint(1, 6)
        t = event_tree(events, level=3, capacity=capacity, name=f"lazy{checked}")
        for _ in range(10):
            expr, sel, axis = random_draw_case(rng)
            q = Query(t)
            q.draw(expr, sel, HistSpec(5, 0.0, 1.0))
            read_set, loads = _expected_loads(t, events, expr, sel, axis, capacity)
            assert q.read_set == read_set, (expr, sel)
            assert +q.trace.loads == loads, (expr, sel)
            checked += 1


def test_c08_draw_matches_naive_interpreter():
    rng = random.Random(808)
    for k in range(200):
        events = [random_event(rng, i) for i in range(rng.randint(0, 25))]
        t = event_tree(events, level=rng.choice([0, 1, 2, 3]), capacity=rng.randint(1, 9), name=f"naive{k}")
        expr, sel, axis = random_draw_case(rng)
        spec = rng.choice([HistSpec(), HistSpec(rng.randint(1, 30), -5.0, 5.0)])
        q = Query(t)
        got = q.draw(expr, sel, spec)
        want, skipped = naive_hist(events, expr, sel, spec, axis)
        assert same_bins(got, want), (expr, sel)
        assert q.nan_skipped == skipped


def test_c09_plugin_config_block():
    text = (HERE / "fixtures" / "plugins.cfg").read_text()
    specs = load_config(text)
    assert len(specs) == 2
    r = PluginRegistry()
    r.load(text)
    assert r.resolve("TFile", "rfio:/castor/x.nrt").handler == "TRFIOFile"
    assert r.resolve("TFile", "dcache:/pnfs/y").handler == "TDCacheFile"
    try:
        r.resolve("TFile", "http://example/z")
        raise AssertionError("expected NoMatch")
    except NoMatchError:
        pass
    try:
        open_any(r, "rfio:/x")
        raise AssertionError("expected UnsupportedHandler")
    except UnsupportedHandlerError as exc:
        assert "TRFIOFile" in str(exc)


def test_c10_scheduler_properties():
    rng = random.Random(1010)
    started = time.perf_counter()
    for seed in range(1000):
        ws, ps = scenario_gen(seed, rng.randint(1, 8), rng.randint(0, 60), rng.random(),
                              speed_jitter=rng.choice([0.0, 0.5]), remote_penalty=rng.uniform(1, 3))
        trace, summary = run(ws, ps, seed)
        assert sorted(pid for pid, *_ in summary.done) == [p.id for p in ps]
        assert summary.local + summary.remote == len(ps)
        times = [ev.time for ev in trace]
        assert times == sorted(times)
    assert time.perf_counter() - started < 60.0

    _, balanced = run(*scenario_gen(10, 4, 100, 1.0, balanced=True))
    assert balanced.remote == 0

    _, split = run([WorkerSim(0, 2.0), WorkerSim(1, 1.0)], [PacketTask(i, 10) for i in range(30)])
    assert abs(split.per_worker[0] - 20) <= 1 and abs(split.per_worker[1] - 10) <= 1

    first = trace_csv(run(*scenario_gen(42, 5, 80, 0.7, speed_jitter=0.4), seed=42)[0]).encode()
    second = trace_csv(run(*scenario_gen(42, 5, 80, 0.7, speed_jitter=0.4), seed=42)[0]).encode()
    assert first == second


def test_c11_xml_interchange(tmp_path):
    path = tmp_path / "corpus.nrt"
    expected = write_corpus(path, seed=1111, n=500)
    src = container.open_container(str(path))
    out = container.create(str(tmp_path / "again.nrt"))
    for name, _ in expected:
        registry = SchemaRegistry()
        out.put(name, import_xml(export_xml(src, name, with_descriptor=True), registry), registry)
    out.close()
    back = container.open_container(str(tmp_path / "again.nrt"))
    for name, rec in expected:
        got = back.get(name)
        assert got == rec and repr(got) == repr(rec)


def test_c12_64bit_offsets():
    key = ObjectKey("big", 3, "Hit", 1, (1 << 32) + 12345, (1 << 32) + 1, 0)
    assert decode_key_table(encode_key_table([key])) == [key]
    small = ObjectKey("s", 1, "Hit", 1, 32, 19, 0)
    assert decode_key_table(encode_key_table([small, key])) == [small, key]
