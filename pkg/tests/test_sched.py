import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nrt.errors import DuplicatePacketIdsError, NotInFlightError
from nrt.sched import (
    FifoPolicy,
    LocalityPolicy,
    MasterState,
    PacketTask,
    WorkerSim,
    assign,
    complete,
    run,
    scenario_gen,
    trace_csv,
)


def packets(n, entries=10, hosts=None):
    return [PacketTask(i, entries, frozenset(hosts[i]) if hosts else frozenset()) for i in range(n)]


def check_trace(trace, summary, all_ids):
    """Exactly-once, monotone times and Request -> Assign -> Complete ordering."""
    times = [ev.time for ev in trace]
    assert times == sorted(times)
    assert sorted(pid for pid, *_ in summary.done) == sorted(all_ids)
    asks = Counter()
    open_ = {}
    assigned = set()
    for ev in trace:
        if ev.kind == "Request":
            assert ev.worker not in open_
            asks[ev.worker] += 1
        elif ev.kind == "Assign":
            assert asks[ev.worker] > 0 and ev.worker not in open_
            assert ev.packet not in assigned
            asks[ev.worker] -= 1
            open_[ev.worker] = ev.packet
            assigned.add(ev.packet)
        elif ev.kind == "Complete":
            assert open_.pop(ev.worker) == ev.packet
    assert not open_ and assigned == set(all_ids)
    assert [ev.kind for ev in trace[-len(summary.per_worker):]] == ["Finish"] * len(summary.per_worker)


def test_single_worker_serial():
    trace, s = run([WorkerSim(0)], packets(4, hosts=[{0}] * 4))
    assert s.makespan == 40.0 and (s.local, s.remote) == (4, 0)
    check_trace(trace, s, range(4))


def test_alternating_locality_no_remote():
    ws = [WorkerSim(1, remote_penalty=2.0), WorkerSim(2, remote_penalty=2.0)]
    trace, s = run(ws, packets(4, hosts=[{1}, {2}, {1}, {2}]))
    assert s.remote == 0 and s.makespan == 20.0
    assigns = [(ev.time, ev.worker, ev.packet) for ev in trace if ev.kind == "Assign"]
    assert assigns == [(0.0, 1, 0), (0.0, 2, 1), (10.0, 1, 2), (10.0, 2, 3)]


def test_speed_split():
    _, s = run([WorkerSim(0, 2.0), WorkerSim(1, 1.0)], packets(30))
    assert abs(s.per_worker[0] - 20) <= 1 and abs(s.per_worker[1] - 10) <= 1
    assert s.per_worker[0] + s.per_worker[1] == 30


def test_rule_order():
    m = MasterState(packets(5, hosts=[{2}, set(), {1}, set(), {1}]), workers=[1, 2])
    assert assign(m, 1, 0.0).id == 2
    assert assign(m, 2, 0.0).id == 0
    m2 = MasterState(packets(3), workers=[1, 2])
    assert [assign(m2, w, 0.0).id for w in (2, 1)] == [0, 1]


def test_steal_guard_waits_for_idle_host():
    m = MasterState(packets(3, hosts=[{2}] * 3), workers=[1, 2])
    assert assign(m, 1, 0.0) is None
    assert assign(m, 2, 0.0).id == 0
    # host now busy: stealing allowed
    p = assign(m, 1, 0.0)
    assert p.id == 1 and m.trace[-1].local is False


def test_steal_guard_uses_response():
    m = MasterState(packets(4, hosts=[{2}] * 4), workers=[1, 2])
    m.response.update({1: 1.0, 2: 3.0})
    assert assign(m, 1, 0.0).id == 0
    m = MasterState(packets(4, hosts=[{2}] * 4), workers=[1, 2])
    m.response.update({1: 1.0, 2: 1.0})
    assert assign(m, 1, 0.0) is None


def test_steal_guard_requires_known_responses():
    m = MasterState(packets(2, hosts=[{2}, {2}]), workers=[1, 2])
    m.response[2] = 9.0
    assert assign(m, 1, 0.0) is None
    m.response[1] = 9.0
    assert assign(m, 1, 0.0) is None
    m.response[1] = 1.0
    assert assign(m, 1, 0.0).id == 0


def test_unknown_host_is_stealable():
    m = MasterState(packets(1, hosts=[{7}]), workers=[1])
    assert assign(m, 1, 0.0).id == 0


def test_ewma():
    m = MasterState([PacketTask(0, 1), PacketTask(1, 1)], workers=[0])
    assign(m, 0, 0.0)
    complete(m, 0, 0, 1.0)
    assert m.response[0] == 1.0
    assign(m, 0, 1.0)
    complete(m, 0, 1, 4.0)
    assert m.response[0] == 2.0


def test_errors():
    m = MasterState(packets(2), workers=[0])
    with pytest.raises(NotInFlightError):
        complete(m, 0, 0, 1.0)
    assign(m, 0, 0.0)
    with pytest.raises(NotInFlightError):
        complete(m, 0, 1, 1.0)
    with pytest.raises(DuplicatePacketIdsError):
        MasterState([PacketTask(0, 1), PacketTask(0, 2)])
    with pytest.raises(DuplicatePacketIdsError):
        run([WorkerSim(0)], [PacketTask(3, 1), PacketTask(3, 1)])
    with pytest.raises(ValueError):
        PacketTask(0, 0)
    with pytest.raises(ValueError):
        WorkerSim(0, speed=0)
    with pytest.raises(ValueError):
        WorkerSim(0, remote_penalty=0.5)


def test_partition_invariant_during_run():
    m = MasterState(packets(6, hosts=[{0}, {1}, set(), {0}, {1}, set()]), workers=[0, 1])
    all_ids = set(range(6))
    now = 0.0
    while m.pending or m.in_flight:
        for w in (0, 1):
            if not m.busy(w):
                assign(m, w, now)
        parts = [set(m.pending), {a.packet.id for a in m.in_flight.values()}, {d[0] for d in m.done}]
        assert set().union(*parts) == all_ids and sum(map(len, parts)) == 6
        now += 1.0
        w = min(m.in_flight)
        complete(m, w, m.in_flight[w].packet, now)


def test_fifo_policy_ignores_locality():
    _, s = run([WorkerSim(0), WorkerSim(1)], packets(4, hosts=[{1}] * 4), policy=FifoPolicy())
    assert s.per_worker == {0: 2, 1: 2}


def test_identical_seed_identical_trace():
    a = run(*scenario_gen(5, 3, 40, 0.6, speed_jitter=0.3))[0]
    b = run(*scenario_gen(5, 3, 40, 0.6, speed_jitter=0.3))[0]
    assert trace_csv(a) == trace_csv(b)
    assert trace_csv(a).splitlines()[0] == "time,kind,worker,packet,local"


def test_scenario_gen():
    assert scenario_gen(3, 2, 10, 0.5) == scenario_gen(3, 2, 10, 0.5)
    _, ps = scenario_gen(3, 4, 20, 0.0)
    assert all(not p.locations for p in ps)
    ws, ps = scenario_gen(7, 4, 100, 1.0)
    hosts = Counter(next(iter(p.locations)) for p in ps)
    assert sum(hosts.values()) == 100 and set(hosts) <= {w.id for w in ws}
    _, ps = scenario_gen(1, 4, 100, 1.0, balanced=True)
    assert Counter(next(iter(p.locations)) for p in ps) == {0: 25, 1: 25, 2: 25, 3: 25}
    with pytest.raises(ValueError):
        scenario_gen(1, 1, 1, 1.5)


def test_balanced_all_local_no_remote():
    _, s = run(*scenario_gen(2, 4, 100, 1.0, balanced=True))
    assert s.remote == 0 and s.packets == 100


@settings(max_examples=150, deadline=None)
@given(
    st.integers(0, 10_000), st.integers(1, 6), st.integers(0, 40),
    st.floats(0, 1), st.floats(0, 0.9), st.floats(1, 4),
)
def test_random_scenarios_terminate_exactly_once(seed, nw, np_, loc, jitter, penalty):
    ws, ps = scenario_gen(seed, nw, np_, loc, speed_jitter=jitter, remote_penalty=penalty)
    trace, s = run(ws, ps)
    check_trace(trace, s, [p.id for p in ps])
    assert s.local + s.remote == np_


def test_multi_host_packets():
    rng = random.Random(4)
    for _ in range(100):
        nw = rng.randint(1, 4)
        ps = [PacketTask(i, rng.randint(1, 20), frozenset(rng.sample(range(nw + 1), rng.randint(0, 2))))
              for i in range(rng.randint(0, 15))]
        ws = [WorkerSim(w, rng.uniform(0.5, 2), rng.uniform(1, 3)) for w in range(nw)]
        trace, s = run(ws, ps, policy=LocalityPolicy())
        check_trace(trace, s, [p.id for p in ps])


def test_summary_render():
    _, s = run([WorkerSim(0)], packets(4, hosts=[{0}] * 4))
    assert s.render() == (
        "workers=1\npackets=4\nmakespan=40.0\nlocal=4\nremote=0\nworker.0.packets=4\nworker.0.local=4\n"
    )
    assert s.render(tsv=True).splitlines()[0] == "workers\t1"
