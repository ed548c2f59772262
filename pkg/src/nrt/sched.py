"""Deterministic simulation of a pull-based master/worker packet scheduler.

Idle workers ask the master for a packet.  The default policy prefers, in
order: the lowest-id pending packet hosted on the requesting worker; the
lowest-id packet with no hosting information; and finally a packet hosted
elsewhere, which is only handed out when every host of every such packet is
busy or has a strictly slower per-entry response than the requester.
Worker response is an exponentially weighted mean (alpha 0.5) of observed
per-entry processing time.

Simultaneous events are ordered by (time, worker id, packet id).
"""
from __future__ import annotations

import heapq
import io
import random
from dataclasses import dataclass, field
from typing import Iterable, Protocol

from .errors import DuplicatePacketIdsError, NotInFlightError

EWMA_ALPHA = 0.5
NO_PACKET = -1


@dataclass(frozen=True)
class PacketTask:
    id: int
    entry_count: int
    locations: frozenset[int] = frozenset()

    def __post_init__(self):
        if self.entry_count <= 0:
            raise ValueError(f"packet {self.id}: entry_count must be positive")
        object.__setattr__(self, "locations", frozenset(self.locations))


@dataclass(frozen=True)
class WorkerSim:
    id: int
    speed: float = 1.0
    remote_penalty: float = 1.0

    def __post_init__(self):
        if not self.speed > 0:
            raise ValueError(f"worker {self.id}: speed must be positive")
        if not self.remote_penalty >= 1:
            raise ValueError(f"worker {self.id}: remote_penalty must be >= 1")

    def duration(self, packet: PacketTask) -> float:
        t = packet.entry_count / self.speed
        return t if self.id in packet.locations else t * self.remote_penalty


@dataclass(frozen=True)
class TraceEvent:
    time: float
    kind: str
    worker: int
    packet: int
    local: bool

    def csv(self) -> str:
        return f"{self.time!r},{self.kind},{self.worker},{self.packet},{int(self.local)}"


@dataclass
class Assignment:
    packet: PacketTask
    start: float
    local: bool


class Policy(Protocol):
    def choose(self, master: "MasterState", worker: int, now: float) -> PacketTask | None: ...


class MasterState:
    def __init__(self, packets: Iterable[PacketTask], workers: Iterable[int] = (), policy: Policy | None = None):
        packets = list(packets)
        ids = [p.id for p in packets]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DuplicatePacketIdsError(f"duplicate packet ids {dupes}")
        self.pending: dict[int, PacketTask] = {p.id: p for p in sorted(packets, key=lambda p: p.id)}
        self.in_flight: dict[int, Assignment] = {}
        self.done: list[tuple[int, int, float, float]] = []
        self.response: dict[int, float] = {}
        self.workers: set[int] = set(workers)
        self.policy: Policy = policy or LocalityPolicy()
        self.trace: list[TraceEvent] = []

    def busy(self, worker: int) -> bool:
        return worker in self.in_flight

    def emit(self, time: float, kind: str, worker: int, packet: int = NO_PACKET, local: bool = False) -> None:
        self.trace.append(TraceEvent(time, kind, worker, packet, local))


class LocalityPolicy:
    """Local first, then location-free, then guarded stealing."""

    def _unavailable_or_slower(self, master: MasterState, host: int, worker: int) -> bool:
        if host not in master.workers or master.busy(host):
            return True
        mine, theirs = master.response.get(worker), master.response.get(host)
        return mine is not None and theirs is not None and theirs > mine

    def choose(self, master: MasterState, worker: int, now: float) -> PacketTask | None:
        foreign = []
        for p in master.pending.values():
            if worker in p.locations:
                return p
        for p in master.pending.values():
            if not p.locations:
                return p
            foreign.append(p)
        for p in foreign:
            if not all(self._unavailable_or_slower(master, h, worker) for h in p.locations):
                return None
        return foreign[0] if foreign else None


class FifoPolicy:
    """Ignores locality: lowest pending id to whoever asks."""

    def choose(self, master: MasterState, worker: int, now: float) -> PacketTask | None:
        return next(iter(master.pending.values()), None)


def assign(master: MasterState, worker: int, now: float) -> PacketTask | None:
    if master.busy(worker):
        raise ValueError(f"worker {worker} already has packet {master.in_flight[worker].packet.id}")
    packet = master.policy.choose(master, worker, now)
    if packet is None:
        return None
    del master.pending[packet.id]
    local = worker in packet.locations
    master.in_flight[worker] = Assignment(packet, now, local)
    master.emit(now, "Assign", worker, packet.id, local)
    return packet


def complete(master: MasterState, worker: int, packet: int | PacketTask, now: float) -> None:
    pid = packet.id if isinstance(packet, PacketTask) else packet
    current = master.in_flight.get(worker)
    if current is None or current.packet.id != pid:
        raise NotInFlightError(f"packet {pid} is not in flight on worker {worker}")
    del master.in_flight[worker]
    master.done.append((pid, worker, current.start, now))
    per_entry = (now - current.start) / current.packet.entry_count
    prev = master.response.get(worker)
    master.response[worker] = per_entry if prev is None else EWMA_ALPHA * per_entry + (1 - EWMA_ALPHA) * prev
    master.emit(now, "Complete", worker, pid, current.local)


@dataclass
class Summary:
    makespan: float
    packets: int
    local: int
    remote: int
    per_worker: dict[int, int]
    per_worker_local: dict[int, int]
    done: list[tuple[int, int, float, float]] = field(default_factory=list, repr=False)

    def items(self) -> list[tuple[str, str]]:
        out = [
            ("workers", str(len(self.per_worker))),
            ("packets", str(self.packets)),
            ("makespan", repr(float(self.makespan))),
            ("local", str(self.local)),
            ("remote", str(self.remote)),
        ]
        for w in sorted(self.per_worker):
            out.append((f"worker.{w}.packets", str(self.per_worker[w])))
            out.append((f"worker.{w}.local", str(self.per_worker_local[w])))
        return out

    def render(self, tsv: bool = False) -> str:
        sep = "\t" if tsv else "="
        return "".join(f"{k}{sep}{v}\n" for k, v in self.items())


def run(workers: list[WorkerSim], packets: list[PacketTask], seed: int = 0,
        policy: Policy | None = None) -> tuple[list[TraceEvent], Summary]:
    """Simulate until every packet is done.

    ``seed`` is accepted for interface symmetry with :func:`scenario_gen`;
    the loop itself has no randomness.
    """
    by_id = {w.id: w for w in workers}
    if len(by_id) != len(workers):
        raise ValueError("duplicate worker ids")
    if not workers and packets:
        raise ValueError("cannot process packets without workers")
    master = MasterState(packets, by_id, policy)
    events: list[tuple[float, int, int]] = []
    waiting: set[int] = set()

    def poll(now: float) -> None:
        changed = True
        while changed:
            changed = False
            for wid in sorted(waiting):
                p = assign(master, wid, now)
                if p is not None:
                    waiting.discard(wid)
                    heapq.heappush(events, (now + by_id[wid].duration(p), wid, p.id))
                    changed = True

    for wid in sorted(by_id):
        master.emit(0.0, "Request", wid)
        waiting.add(wid)
    poll(0.0)
    now = 0.0
    while events:
        now, wid, pid = heapq.heappop(events)
        complete(master, wid, pid, now)
        if master.pending:
            master.emit(now, "Request", wid)
        waiting.add(wid)
        poll(now)
    if master.pending:
        raise RuntimeError(f"scheduler stalled with {len(master.pending)} pending packets")
    for wid in sorted(by_id):
        master.emit(now, "Finish", wid)

    where = {p.id: p.locations for p in packets}
    per_worker = {w: 0 for w in by_id}
    per_local = {w: 0 for w in by_id}
    for pid, wid, _, _ in master.done:
        per_worker[wid] += 1
        if wid in where[pid]:
            per_local[wid] += 1
    local = sum(per_local.values())
    summary = Summary(now, len(master.done), local, len(master.done) - local, per_worker, per_local,
                      list(master.done))
    return master.trace, summary


def trace_csv(trace: list[TraceEvent]) -> str:
    buf = io.StringIO()
    buf.write("time,kind,worker,packet,local\n")
    for ev in trace:
        buf.write(ev.csv() + "\n")
    return buf.getvalue()


def scenario_gen(seed: int, n_workers: int, n_packets: int, locality_fraction: float, *,
                 entries: int = 10, speed_jitter: float = 0.0, remote_penalty: float = 2.0,
                 balanced: bool = False) -> tuple[list[WorkerSim], list[PacketTask]]:
    """Seeded scenario.

    ``round(locality_fraction * n_packets)`` randomly chosen packets get
    exactly one host: a random worker, or round-robin when ``balanced``.
    ``speed_jitter`` draws each speed uniformly from [1 - j, 1 + j].
    """
    if not 0 <= locality_fraction <= 1:
        raise ValueError("locality_fraction must be in [0, 1]")
    if not 0 <= speed_jitter < 1:
        raise ValueError("speed_jitter must be in [0, 1)")
    if n_workers < 1 or n_packets < 0:
        raise ValueError("need at least one worker and a non-negative packet count")
    rng = random.Random(seed)
    workers = [
        WorkerSim(i, 1.0 + (rng.uniform(-speed_jitter, speed_jitter) if speed_jitter else 0.0), remote_penalty)
        for i in range(n_workers)
    ]
    n_local = round(locality_fraction * n_packets)
    if balanced:
        hosted = list(range(n_local))
    else:
        hosted = sorted(rng.sample(range(n_packets), n_local))
    hosts = {}
    for k, pid in enumerate(hosted):
        hosts[pid] = k % n_workers if balanced else rng.randrange(n_workers)
    packets = [
        PacketTask(pid, entries, frozenset({hosts[pid]}) if pid in hosts else frozenset())
        for pid in range(n_packets)
    ]
    return workers, packets
