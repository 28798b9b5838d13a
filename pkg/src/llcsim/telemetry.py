"""Raw event counters and the windowed rates derived from them.

The counters play the role of hardware performance counters: the cache model
and the workloads bump them, and once per controller tick the engine turns the
delta between two counter states into a :class:`RateSnapshot`.
"""

import copy
from dataclasses import dataclass, field


class WorkloadCounters:
    __slots__ = ("accesses", "mlc_hits", "mlc_misses", "llc_hits", "llc_misses",
                 "completed", "packet_wait", "dropped")

    def __init__(self):
        self.accesses = 0
        self.mlc_hits = 0
        self.mlc_misses = 0
        self.llc_hits = 0
        self.llc_misses = 0
        # finished packets or blocks, summed queueing epochs, ring overflows
        self.completed = 0
        self.packet_wait = 0
        self.dropped = 0

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__slots__}


class DeviceCounters:
    __slots__ = ("dma_lines_written", "dma_updates", "dma_allocations", "leak_events",
                 "dma_memory_writes", "consumed", "superseded", "pending")

    def __init__(self):
        self.dma_lines_written = 0
        self.dma_updates = 0
        self.dma_allocations = 0
        self.leak_events = 0
        self.dma_memory_writes = 0
        # life-cycle of each DMA-written line instance
        self.consumed = 0
        self.superseded = 0
        self.pending = 0

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__slots__}


class CounterSet:
    """Cumulative event tallies for one run."""

    def __init__(self):
        self.workloads = {}
        self.devices = {}
        self.memory_read_lines = 0
        self.memory_write_lines = 0
        self.inclusive_migrations = 0
        self.bloat_fills = 0

    def workload(self, wid):
        wc = self.workloads.get(wid)
        if wc is None:
            wc = self.workloads[wid] = WorkloadCounters()
        return wc

    def device(self, did):
        dc = self.devices.get(did)
        if dc is None:
            dc = self.devices[did] = DeviceCounters()
        return dc

    def copy(self):
        return copy.deepcopy(self)

    def reconciliation_errors(self):
        """Return a list of broken counter identities (empty when consistent)."""
        errors = []
        for wid, c in self.workloads.items():
            if c.mlc_hits + c.mlc_misses != c.accesses:
                errors.append(f"workload {wid}: mlc_hits + mlc_misses != accesses")
            if c.llc_hits + c.llc_misses != c.mlc_misses:
                errors.append(f"workload {wid}: llc_hits + llc_misses != mlc_misses")
        for did, c in self.devices.items():
            if c.dma_updates + c.dma_allocations + c.dma_memory_writes != c.dma_lines_written:
                errors.append(f"device {did}: updates + allocations + memory writes != lines written")
            if c.consumed + c.leak_events + c.superseded + c.pending != c.dma_lines_written:
                errors.append(f"device {did}: consumed + leaked + superseded + pending != lines written")
        return errors


@dataclass(frozen=True)
class AccessCosts:
    """Unitless per-access costs used by the latency proxy."""
    mlc_hit: float = 1.0
    llc_hit: float = 4.0
    memory: float = 20.0


def latency_proxy(mlc_hits, llc_hits, memory, costs=AccessCosts()):
    """Average access cost over a window; 0.0 when there were no accesses."""
    n = mlc_hits + llc_hits + memory
    if n == 0:
        return 0.0
    return (mlc_hits * costs.mlc_hit + llc_hits * costs.llc_hit + memory * costs.memory) / n


@dataclass(frozen=True)
class WorkloadRates:
    llc_hit_rate: float
    mlc_miss_rate: float
    llc_miss_rate: float
    io_throughput: float
    latency_proxy: float
    accesses: int
    empty: frozenset = frozenset()


@dataclass(frozen=True)
class DeviceRates:
    dca_leak_rate: float
    lines_written: int
    empty: frozenset = frozenset()


@dataclass(frozen=True)
class RateSnapshot:
    window: int
    workloads: dict = field(default_factory=dict)
    devices: dict = field(default_factory=dict)
    storage_write_share: float = 0.0
    memory_bandwidth: int = 0
    empty: frozenset = frozenset()


def _ratio(num, den):
    if den == 0:
        return 0.0, True
    return num / den, False


def snapshot(counters, prev, window=0, storage_devices=(), costs=AccessCosts(),
             dca_miss_metric="leak"):
    """Rates over the window between ``prev`` and ``counters``.

    A zero denominator yields a rate of 0 and puts the field name in the
    ``empty`` set of the affected entry.
    """
    if dca_miss_metric not in ("leak", "alloc_fraction"):
        raise ValueError(f"unknown dca_miss_metric {dca_miss_metric!r}")
    blank_w = WorkloadCounters()
    blank_d = DeviceCounters()

    workloads = {}
    for wid, cur in counters.workloads.items():
        old = prev.workloads.get(wid, blank_w)
        acc = cur.accesses - old.accesses
        mh = cur.mlc_hits - old.mlc_hits
        mm = cur.mlc_misses - old.mlc_misses
        lh = cur.llc_hits - old.llc_hits
        lm = cur.llc_misses - old.llc_misses
        empty = set()
        hit, e1 = _ratio(lh, lh + lm)
        miss, _ = _ratio(lm, lh + lm)
        mmiss, e2 = _ratio(mm, acc)
        if e1:
            empty.update(("llc_hit_rate", "llc_miss_rate"))
        if e2:
            empty.update(("mlc_miss_rate", "latency_proxy"))
        workloads[wid] = WorkloadRates(
            llc_hit_rate=hit,
            mlc_miss_rate=mmiss,
            llc_miss_rate=miss,
            io_throughput=float(cur.completed - old.completed),
            latency_proxy=latency_proxy(mh, lh, lm, costs),
            accesses=acc,
            empty=frozenset(empty),
        )

    devices = {}
    total_written = 0
    storage_written = 0
    storage_devices = set(storage_devices)
    for did, cur in counters.devices.items():
        old = prev.devices.get(did, blank_d)
        written = cur.dma_lines_written - old.dma_lines_written
        if dca_miss_metric == "leak":
            rate, e = _ratio(cur.leak_events - old.leak_events, written)
        else:
            rate, e = _ratio(cur.dma_allocations - old.dma_allocations, written)
        # leak events can trail the writes that caused them by a window
        rate = min(rate, 1.0)
        devices[did] = DeviceRates(dca_leak_rate=rate, lines_written=written,
                                   empty=frozenset({"dca_leak_rate"}) if e else frozenset())
        total_written += written
        if did in storage_devices:
            storage_written += written

    share, e = _ratio(storage_written, total_written)
    bw = (counters.memory_read_lines - prev.memory_read_lines
          + counters.memory_write_lines - prev.memory_write_lines)
    return RateSnapshot(
        window=window,
        workloads=workloads,
        devices=devices,
        storage_write_share=share,
        memory_bandwidth=bw,
        empty=frozenset({"storage_write_share"}) if e else frozenset(),
    )
