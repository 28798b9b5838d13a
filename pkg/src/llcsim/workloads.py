"""Synthetic workloads: network receive loops, direct-I/O storage streams and
memory streamers.

Each workload owns a disjoint address region. Within an epoch the engine first
asks every device's workload for its DMA lines (:meth:`dma_lines`) and only
then runs the CPU side of every workload (:meth:`cpu_step`).
"""

import random
from collections import deque
from dataclasses import dataclass, field, fields, replace

from llcsim.cache_model import ConfigError
from llcsim.io_path import DmaBatch

WORKLOAD_KINDS = ("net_rx", "storage_stream", "mem_stream")
DEVICE_KIND_FOR = {"net_rx": "network", "storage_stream": "storage"}

# 16-byte receive descriptors packed into a 64-byte line
DESCRIPTORS_PER_LINE = 4


@dataclass(frozen=True, kw_only=True)
class NetRxParams:
    ring_entries: int = 2048
    lines_per_packet: int = 16
    touch: bool = True
    packets_per_epoch: int = 0   # per core; 0 = keep pace with the device

    def check(self):
        if self.ring_entries <= 0:
            raise ConfigError("ring_entries must be > 0")
        if self.lines_per_packet <= 0:
            raise ConfigError("lines_per_packet must be > 0")
        if self.packets_per_epoch < 0:
            raise ConfigError("packets_per_epoch must be >= 0")


@dataclass(frozen=True, kw_only=True)
class StorageStreamParams:
    block_lines: int = 512
    queue_depth: int = 32
    fresh_buffers: bool = True
    process_reads_per_line: int = 1
    reads_per_epoch: int = 0     # per core; 0 = as many as the device delivers

    def check(self):
        if self.block_lines < 1:
            raise ConfigError("block_lines must be >= 1")
        if self.queue_depth < 1:
            raise ConfigError("queue_depth must be >= 1")
        if self.process_reads_per_line < 1:
            raise ConfigError("process_reads_per_line must be >= 1")
        if self.reads_per_epoch < 0:
            raise ConfigError("reads_per_epoch must be >= 0")


@dataclass(frozen=True, kw_only=True)
class MemStreamParams:
    working_set_lines: int = 4096
    pattern: str = "sequential"
    op: str = "read"
    accesses_per_epoch: int = 32  # per core

    def check(self):
        if self.working_set_lines < 1:
            raise ConfigError("working_set_lines must be >= 1")
        if self.pattern not in ("sequential", "random"):
            raise ConfigError(f"pattern must be sequential or random, got {self.pattern!r}")
        if self.op not in ("read", "write"):
            raise ConfigError(f"op must be read or write, got {self.op!r}")
        if self.accesses_per_epoch < 0:
            raise ConfigError("accesses_per_epoch must be >= 0")


PARAM_TYPES = {
    "net_rx": NetRxParams,
    "storage_stream": StorageStreamParams,
    "mem_stream": MemStreamParams,
}


@dataclass(frozen=True, kw_only=True)
class WorkloadSpec:
    id: str
    kind: str
    priority: str = "high"
    cores: tuple = ()
    device: object = None
    params: object = None
    mask: object = None      # static WayMask used when no controller manages the run
    active: bool = True

    def __post_init__(self):
        if self.kind not in WORKLOAD_KINDS:
            raise ConfigError(f"workload {self.id}: unknown kind {self.kind!r}")
        if self.priority not in ("high", "low"):
            raise ConfigError(f"workload {self.id}: priority must be high or low")
        if not self.cores:
            raise ConfigError(f"workload {self.id}: needs at least one core")
        if self.params is None:
            object.__setattr__(self, "params", PARAM_TYPES[self.kind]())
        if not isinstance(self.params, PARAM_TYPES[self.kind]):
            raise ConfigError(f"workload {self.id}: params do not match kind {self.kind}")
        self.params.check()
        if self.kind == "mem_stream" and self.device is not None:
            raise ConfigError(f"workload {self.id}: mem_stream takes no device")
        if self.kind != "mem_stream" and self.device is None:
            raise ConfigError(f"workload {self.id}: {self.kind} requires a device")

    @property
    def is_io(self):
        return self.kind != "mem_stream"


class Workload:
    """Runtime state shared by all workload kinds."""

    def __init__(self, spec, base, seed=0):
        self.spec = spec
        self.id = spec.id
        self.cores = tuple(spec.cores)
        self.base = base
        self.seed = seed
        self.params = spec.params
        self.active = spec.active

    def dma_lines(self, epoch, budget):
        return []

    def cpu_step(self, epoch, model):
        pass

    def update_param(self, name, value):
        valid = {f.name for f in fields(self.params)}
        if name not in valid:
            raise ConfigError(f"workload {self.id}: unknown parameter {name!r}")
        params = replace(self.params, **{name: value})
        params.check()
        self.params = params
        self._reconfigure()

    def _reconfigure(self):
        pass


class NetRx(Workload):
    """Per-core receive rings; the NIC fills slots round-robin across cores."""

    def __init__(self, spec, base, seed=0, device_budget=0):
        super().__init__(spec, base, seed)
        self.device_budget = device_budget
        self._reconfigure()

    def _reconfigure(self):
        p = self.params
        n = len(self.cores)
        self.entries = p.ring_entries
        self.lpp = p.lines_per_packet
        self.desc_lines = -(-p.ring_entries // DESCRIPTORS_PER_LINE)
        self.payload_base = [self.base + c * self.entries * self.lpp for c in range(n)]
        desc0 = self.base + n * self.entries * self.lpp
        self.desc_base = [desc0 + c * self.desc_lines for c in range(n)]
        if not hasattr(self, "queues"):
            self.head = [0] * n
            self.queues = [deque() for _ in range(n)]
            self.rr = 0
        else:
            # ring geometry changed: restart the rings
            self.head = [0] * n
            for q in self.queues:
                q.clear()
        if p.packets_per_epoch:
            self.consume = p.packets_per_epoch
        else:
            pkts = self.device_budget // (self.lpp + 1)
            self.consume = max(1, -(-pkts // n))

    @property
    def ring_lines(self):
        return len(self.cores) * (self.entries * self.lpp + self.desc_lines)

    def dma_lines(self, epoch, budget):
        per = self.lpp + 1
        n = len(self.cores)
        addrs = []
        counters = self._counters
        while budget >= per:
            for _ in range(n):
                c = self.rr
                self.rr = (self.rr + 1) % n
                if len(self.queues[c]) < self.entries:
                    break
            else:
                counters.dropped += budget // per
                break
            slot = self.head[c]
            self.head[c] = (slot + 1) % self.entries
            start = self.payload_base[c] + slot * self.lpp
            addrs.extend(range(start, start + self.lpp))
            addrs.append(self.desc_base[c] + slot // DESCRIPTORS_PER_LINE)
            self.queues[c].append((slot, epoch))
            budget -= per
        return addrs

    def cpu_step(self, epoch, model):
        access = model.cpu_access
        wid = self.id
        touch = self.params.touch
        lpp = self.lpp
        counters = self._counters
        for c, core in enumerate(self.cores):
            q = self.queues[c]
            pbase = self.payload_base[c]
            dbase = self.desc_base[c]
            for _ in range(self.consume):
                if not q:
                    break
                slot, arrived = q.popleft()
                access(core, dbase + slot // DESCRIPTORS_PER_LINE, "read", wid)
                if touch:
                    start = pbase + slot * lpp
                    for addr in range(start, start + lpp):
                        access(core, addr, "read", wid)
                counters.completed += 1
                counters.packet_wait += epoch - arrived


class _Block:
    __slots__ = ("base", "next")

    def __init__(self, base):
        self.base = base
        self.next = 0


class StorageStream(Workload):
    """Direct-I/O block reads with ``queue_depth`` blocks in flight.

    The device spreads its budget round-robin over the in-flight blocks; a block
    becomes visible to the cores only once all of its lines have landed.
    """

    def __init__(self, spec, base, seed=0, device_budget=0):
        super().__init__(spec, base, seed)
        self.device_budget = device_budget
        self.in_device = []
        self.ready = deque()
        self.current = [None] * len(self.cores)
        self.rr = 0
        self.issued = 0
        self._reconfigure()

    def _reconfigure(self):
        p = self.params
        self.block_lines = p.block_lines
        if p.reads_per_epoch:
            self.reads = p.reads_per_epoch
        else:
            self.reads = max(1, self.device_budget * p.process_reads_per_line)

    def outstanding(self):
        return len(self.in_device) + len(self.ready) + sum(c is not None for c in self.current)

    def _next_block_base(self):
        p = self.params
        n = self.issued
        self.issued += 1
        if p.fresh_buffers:
            return self.base + n * p.block_lines
        return self.base + (n % p.queue_depth) * p.block_lines

    def dma_lines(self, epoch, budget):
        qd = self.params.queue_depth
        # completed blocks are reaped before the device sees new submissions
        while self.outstanding() < qd:
            self.in_device.append(_Block(self._next_block_base()))
        blocks = self.in_device
        addrs = []
        bl = self.block_lines
        i = self.rr % len(blocks) if blocks else 0
        while budget > 0 and blocks:
            b = blocks[i]
            addrs.append(b.base + b.next)
            b.next += 1
            budget -= 1
            if b.next >= bl:
                blocks.pop(i)
                self.ready.append(b.base)
                if i >= len(blocks):
                    i = 0
            else:
                i = (i + 1) % len(blocks)
        self.rr = i
        return addrs

    def cpu_step(self, epoch, model):
        access = model.cpu_access
        wid = self.id
        repeats = self.params.process_reads_per_line
        bl = self.block_lines
        counters = self._counters
        for c, core in enumerate(self.cores):
            budget = self.reads
            cur = self.current[c]
            while budget > 0:
                if cur is None:
                    if not self.ready:
                        break
                    cur = [self.ready.popleft(), 0, 0]
                base, idx, rep = cur
                addr = base + idx
                while budget > 0 and rep < repeats:
                    access(core, addr, "read", wid)
                    rep += 1
                    budget -= 1
                if rep >= repeats:
                    idx += 1
                    rep = 0
                if idx >= bl:
                    counters.completed += 1
                    cur = None
                else:
                    cur = [base, idx, rep]
            self.current[c] = cur


class MemStream(Workload):
    """Each core walks its own slice of the working set."""

    def __init__(self, spec, base, seed=0):
        super().__init__(spec, base, seed)
        self.rngs = [random.Random(f"{seed}:{spec.id}:{c}") for c in range(len(self.cores))]
        self.pos = [0] * len(self.cores)
        self._reconfigure()

    def _reconfigure(self):
        p = self.params
        n = len(self.cores)
        self.slice = max(1, p.working_set_lines // n)
        self.slice_base = [self.base + c * self.slice for c in range(n)]
        self.pos = [x % self.slice for x in self.pos]

    def cpu_step(self, epoch, model):
        access = model.cpu_access
        wid = self.id
        p = self.params
        kind = p.op
        n = self.slice
        for c, core in enumerate(self.cores):
            base = self.slice_base[c]
            if p.pattern == "sequential":
                pos = self.pos[c]
                for _ in range(p.accesses_per_epoch):
                    access(core, base + pos, kind, wid)
                    pos += 1
                    if pos == n:
                        pos = 0
                self.pos[c] = pos
            else:
                rnd = self.rngs[c].randrange
                for _ in range(p.accesses_per_epoch):
                    access(core, base + rnd(n), kind, wid)
        self._counters.completed += p.accesses_per_epoch * len(self.cores)


def build_workload(spec, base, seed=0, device_budget=0):
    if spec.kind == "net_rx":
        w = NetRx(spec, base, seed, device_budget)
    elif spec.kind == "storage_stream":
        w = StorageStream(spec, base, seed, device_budget)
    else:
        w = MemStream(spec, base, seed)
    return w


def workload_step(workload, epoch, model, devices):
    """Run one epoch of a single workload: its device's DMA, then its cores.

    Returns the epoch's event record: DMA lines, accesses and completions.
    """
    bind_counters(workload, model)
    c = workload._counters
    acc0, done0 = c.accesses, c.completed
    dma = 0
    if workload.spec.device is not None:
        dev = devices[workload.spec.device]
        addrs = workload.dma_lines(epoch, dev.lines_per_epoch)
        if addrs:
            devices.issue_dma(dev.id, DmaBatch(dev.id, tuple(addrs), epoch), model)
        dma = len(addrs)
    workload.cpu_step(epoch, model)
    return {"dma_lines": dma, "accesses": c.accesses - acc0, "completed": c.completed - done0}


def bind_counters(workload, model):
    workload._counters = model.counters.workload(workload.id)
