"""Non-inclusive last-level cache with DCA ways, inclusive ways and private MLCs.

Way roles follow the Skylake-SP layout: the leftmost ``dca_way_count`` ways take
DMA write-allocations, the rightmost ``inclusive_way_count`` ways are the only
frames that may hold a line that is also present in some core's MLC. The LLC is
a victim cache for MLC evictions; demand misses fill the MLC only.

Replacement everywhere is LRU with the lowest-index invalid frame chosen first.
"""

from dataclasses import dataclass, field

from llcsim.telemetry import CounterSet

MLC_HIT = "mlc_hit"
LLC_HIT = "llc_hit"
MEMORY = "memory"

UPDATE_IN_PLACE = "update_in_place"
ALLOCATE_DCA = "allocate_dca"
MEMORY_WRITE = "memory_write"

READ_FROM_LLC = "read_from_llc"
READ_ALLOCATED_INCLUSIVE = "read_allocated_inclusive"
READ_FROM_MEMORY = "read_from_memory"


class ConfigError(ValueError):
    """Invalid geometry, mask or device reference."""


@dataclass(frozen=True, kw_only=True)
class CacheGeometry:
    llc_sets: int
    llc_ways: int = 11
    dca_way_count: int = 2
    inclusive_way_count: int = 2
    line_bytes: int = 64
    mlc_sets: int
    mlc_ways: int
    core_count: int

    def validate(self):
        for name in ("llc_sets", "llc_ways", "dca_way_count", "inclusive_way_count",
                     "line_bytes", "mlc_sets", "mlc_ways", "core_count"):
            v = getattr(self, name)
            if not isinstance(v, int) or v <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.dca_way_count + self.inclusive_way_count >= self.llc_ways:
            raise ConfigError(
                f"dca_way_count ({self.dca_way_count}) + inclusive_way_count "
                f"({self.inclusive_way_count}) leaves no standard ways out of {self.llc_ways}")
        if self.line_bytes & (self.line_bytes - 1):
            raise ConfigError(f"line_bytes must be a power of two, got {self.line_bytes}")
        return self

    @property
    def dca_ways(self):
        return range(0, self.dca_way_count)

    @property
    def inclusive_ways(self):
        return range(self.llc_ways - self.inclusive_way_count, self.llc_ways)

    @property
    def standard_ways(self):
        return range(self.dca_way_count, self.llc_ways - self.inclusive_way_count)

    @property
    def rightmost_standard_way(self):
        return self.llc_ways - self.inclusive_way_count - 1

    @property
    def llc_lines(self):
        return self.llc_sets * self.llc_ways


@dataclass(frozen=True, order=True)
class WayMask:
    """Contiguous inclusive way range ``[lo, hi]``."""
    lo: int
    hi: int

    def __post_init__(self):
        if not (isinstance(self.lo, int) and isinstance(self.hi, int)):
            raise ConfigError(f"way mask bounds must be integers: {self.lo!r}, {self.hi!r}")
        if self.lo < 0 or self.hi < self.lo:
            raise ConfigError(f"way mask [{self.lo},{self.hi}] is empty or negative")

    @classmethod
    def full(cls, geometry):
        return cls(0, geometry.llc_ways - 1)

    @classmethod
    def parse(cls, text):
        text = str(text).strip()
        if "-" in text:
            lo, hi = text.split("-", 1)
        else:
            lo = hi = text
        try:
            return cls(int(lo), int(hi))
        except ValueError:
            raise ConfigError(f"bad way mask {text!r}, expected 'lo-hi'") from None

    @classmethod
    def from_bits(cls, bits):
        """Build from a CAT capacity bitmask; non-contiguous masks are rejected."""
        if bits <= 0:
            raise ConfigError("empty capacity bitmask")
        lo = (bits & -bits).bit_length() - 1
        hi = bits.bit_length() - 1
        if bits != ((1 << (hi + 1)) - (1 << lo)):
            raise ConfigError(f"capacity bitmask {bits:#x} is not contiguous")
        return cls(lo, hi)

    def check(self, geometry):
        if self.hi >= geometry.llc_ways:
            raise ConfigError(f"way mask [{self.lo},{self.hi}] exceeds {geometry.llc_ways} ways")
        return self

    @property
    def width(self):
        return self.hi - self.lo + 1

    @property
    def bits(self):
        return ((1 << (self.hi + 1)) - 1) ^ ((1 << self.lo) - 1)

    def ways(self):
        return range(self.lo, self.hi + 1)

    def overlaps(self, other):
        return self.lo <= other.hi and other.lo <= self.hi

    def __contains__(self, way):
        return self.lo <= way <= self.hi

    def __str__(self):
        return f"{self.lo}-{self.hi}"


class Line:
    """One resident LLC frame's metadata."""
    __slots__ = ("addr", "owner", "io_origin", "dirty", "consumed")

    def __init__(self, addr, owner, io_origin=None, dirty=False, consumed=False):
        self.addr = addr
        self.owner = owner
        self.io_origin = io_origin
        self.dirty = dirty
        self.consumed = consumed


@dataclass(frozen=True)
class LineMeta:
    addr: int
    owner_class: object
    io_origin: object
    dirty: bool
    consumed: bool
    llc_state: str
    replacement_rank: int


@dataclass
class AccessOutcome:
    level: str
    migrated_to_inclusive: bool = False
    llc_way_filled: object = None
    evicted: list = field(default_factory=list)


@dataclass
class DmaWriteOutcome:
    outcome: str
    way: object = None
    leaks: list = field(default_factory=list)
    evicted: list = field(default_factory=list)


class CacheModel:
    """Mutable cache hierarchy state plus its event counters.

    ``migrate_non_io`` selects what an LLC hit on a non-I/O line in a
    non-inclusive way does: migrate it to an inclusive way (True) or hand it to
    the MLC and drop it from the LLC (False). I/O lines always migrate.
    """

    def __init__(self, geometry, migrate_non_io=True, debug=False):
        geometry.validate()
        g = self.geometry = geometry
        self.migrate_non_io = migrate_non_io
        self.debug = debug
        self._sets = g.llc_sets
        self._ways = g.llc_ways
        self._dca_hi = g.dca_way_count - 1
        self._incl_lo = g.llc_ways - g.inclusive_way_count
        self._mlc_sets = g.mlc_sets
        self._mlc_ways = g.mlc_ways
        self._full = (0, g.llc_ways - 1)

        self._frames = [[None] * g.llc_ways for _ in range(g.llc_sets)]
        self._stamps = [[0] * g.llc_ways for _ in range(g.llc_sets)]
        self._where = {}    # addr -> llc way
        # per core, per MLC set: addr -> (dirty, io_origin), insertion order is LRU order
        self._mlc = [[{} for _ in range(g.mlc_sets)] for _ in range(g.core_count)]
        self._holders = {}  # addr -> bitmask of cores holding it in MLC
        self._masks = {}
        self._devices = set()
        self._pending = {}  # addr -> device of the latest unconsumed DMA write
        self._clock = 0
        self.counters = CounterSet()

    # -- configuration -------------------------------------------------------

    def register_device(self, device):
        self._devices.add(device)
        self.counters.device(device)

    def set_way_mask(self, class_id, mask):
        if not isinstance(mask, WayMask):
            raise ConfigError(f"expected a WayMask, got {mask!r}")
        mask.check(self.geometry)
        self._masks[class_id] = (mask.lo, mask.hi)

    def way_mask(self, class_id):
        lo, hi = self._masks.get(class_id, self._full)
        return WayMask(lo, hi)

    # -- replacement -----------------------------------------------------------

    def _victim(self, s, lo, hi):
        frames = self._frames[s]
        stamps = self._stamps[s]
        best = lo
        best_stamp = None
        for w in range(lo, hi + 1):
            if frames[w] is None:
                return w
            st = stamps[w]
            if best_stamp is None or st < best_stamp:
                best, best_stamp = w, st
        return best

    def select_victim(self, set_index, allowed):
        return self._victim(set_index, allowed.lo, allowed.hi)

    def _evict(self, s, w, evicted):
        line = self._frames[s][w]
        if line is None:
            return
        self._frames[s][w] = None
        del self._where[line.addr]
        c = self.counters
        if line.io_origin is not None and not line.consumed:
            dev = self._pending.pop(line.addr, None)
            if dev is not None:
                dc = c.devices[dev]
                dc.leak_events += 1
                dc.pending -= 1
        if line.dirty:
            c.memory_write_lines += 1
            evicted.append((line.addr, "memory"))
        else:
            evicted.append((line.addr, "dropped"))

    def _place(self, s, w, line):
        self._frames[s][w] = line
        self._where[line.addr] = w
        self._clock += 1
        self._stamps[s][w] = self._clock

    # -- MLC helpers -----------------------------------------------------------

    def _drop_mlc_copies(self, addr, keep=-1):
        bits = self._holders.get(addr)
        if not bits:
            return
        ms = addr % self._mlc_sets
        core = 0
        b = bits
        while b:
            if b & 1 and core != keep:
                del self._mlc[core][ms][addr]
            b >>= 1
            core += 1
        if keep >= 0 and bits >> keep & 1:
            self._holders[addr] = 1 << keep
        else:
            del self._holders[addr]

    def _consume(self, addr):
        dev = self._pending.pop(addr, None)
        if dev is not None:
            dc = self.counters.devices[dev]
            dc.consumed += 1
            dc.pending -= 1

    def _mlc_install(self, core, addr, dirty, io, class_id, evicted):
        mset = self._mlc[core][addr % self._mlc_sets]
        if len(mset) >= self._mlc_ways:
            vaddr = next(iter(mset))
            vdirty, vio = mset.pop(vaddr)
            bits = self._holders[vaddr] & ~(1 << core)
            if bits:
                self._holders[vaddr] = bits
            else:
                del self._holders[vaddr]
            self._mlc_writeback(vaddr, vdirty, vio, bits, class_id, evicted)
        mset[addr] = (dirty, io)
        self._holders[addr] = self._holders.get(addr, 0) | (1 << core)

    def _mlc_writeback(self, addr, dirty, io, other_holders, class_id, evicted):
        s = addr % self._sets
        w = self._where.get(addr)
        if w is not None:
            # already resident (inclusive copy): it just loses its MLC sharer
            if dirty:
                self._frames[s][w].dirty = True
            evicted.append((addr, "llc"))
            return
        if other_holders:
            # another MLC still has it; write-invalidate keeps that copy the only dirty one
            evicted.append((addr, "dropped"))
            return
        lo, hi = self._masks.get(class_id, self._full)
        nw = self._victim(s, lo, hi)
        self._evict(s, nw, evicted)
        self._place(s, nw, Line(addr, class_id, io, dirty, io is not None))
        if io is not None:
            self.counters.bloat_fills += 1
        evicted.append((addr, "llc"))

    # -- operations ------------------------------------------------------------

    def cpu_access(self, core, addr, kind="read", class_id=None):
        write = kind == "write"
        wc = self.counters.workload(class_id)
        wc.accesses += 1
        mset = self._mlc[core][addr % self._mlc_sets]
        entry = mset.get(addr)
        if entry is not None:
            del mset[addr]
            mset[addr] = (entry[0] or write, entry[1])
            if write and self._holders[addr] != 1 << core:
                self._drop_mlc_copies(addr, keep=core)
            wc.mlc_hits += 1
            return AccessOutcome(MLC_HIT)

        wc.mlc_misses += 1
        evicted = []
        migrated = False
        filled = None
        s = addr % self._sets
        w = self._where.get(addr)
        if write and addr in self._holders:
            self._drop_mlc_copies(addr)
        if w is not None:
            wc.llc_hits += 1
            line = self._frames[s][w]
            io = line.io_origin
            if io is not None and not line.consumed:
                line.consumed = True
                self._consume(addr)
            if w >= self._incl_lo:
                self._clock += 1
                self._stamps[s][w] = self._clock
                mdirty = write
            elif io is not None or self.migrate_non_io:
                self._frames[s][w] = None
                del self._where[addr]
                nw = self._victim(s, self._incl_lo, self._ways - 1)
                self._evict(s, nw, evicted)
                self._place(s, nw, line)
                migrated = True
                filled = nw
                self.counters.inclusive_migrations += 1
                mdirty = write
            else:
                self._frames[s][w] = None
                del self._where[addr]
                mdirty = line.dirty or write
            level = LLC_HIT
        else:
            wc.llc_misses += 1
            self.counters.memory_read_lines += 1
            io = self._pending.get(addr)
            if io is not None:
                self._consume(addr)
            mdirty = write
            level = MEMORY
        self._mlc_install(core, addr, mdirty, io, class_id, evicted)
        if self.debug:
            self.check_invariants()
        return AccessOutcome(level, migrated, filled, evicted)

    def dma_write_line(self, device, addr, dca_enabled):
        if device not in self._devices:
            raise ConfigError(f"unknown device {device!r}")
        dc = self.counters.devices[device]
        dc.dma_lines_written += 1
        prev = self._pending.get(addr)
        if prev is not None:
            pc = self.counters.devices[prev]
            pc.superseded += 1
            pc.pending -= 1
        self._pending[addr] = device
        dc.pending += 1
        if addr in self._holders:
            self._drop_mlc_copies(addr)

        s = addr % self._sets
        w = self._where.get(addr)
        evicted = []
        if not dca_enabled:
            if w is not None:
                # overwritten in memory, so the stale copy is dropped without writeback
                self._frames[s][w] = None
                del self._where[addr]
            dc.dma_memory_writes += 1
            self.counters.memory_write_lines += 1
            result = DmaWriteOutcome(MEMORY_WRITE)
        elif w is not None:
            line = self._frames[s][w]
            line.dirty = True
            line.consumed = False
            line.io_origin = device
            self._clock += 1
            self._stamps[s][w] = self._clock
            dc.dma_updates += 1
            result = DmaWriteOutcome(UPDATE_IN_PLACE, w)
        else:
            nw = self._victim(s, 0, self._dca_hi)
            victim = self._frames[s][nw]
            leak = (victim is not None and victim.io_origin is not None
                    and not victim.consumed)
            self._evict(s, nw, evicted)
            self._place(s, nw, Line(addr, device, device, True, False))
            dc.dma_allocations += 1
            result = DmaWriteOutcome(ALLOCATE_DCA, nw, evicted=evicted)
            if leak:
                result.leaks.append((victim.addr, victim.io_origin))
        if self.debug:
            self.check_invariants()
        return result

    def dma_read_line(self, device, addr):
        if device not in self._devices:
            raise ConfigError(f"unknown device {device!r}")
        s = addr % self._sets
        w = self._where.get(addr)
        if w is not None:
            self._clock += 1
            self._stamps[s][w] = self._clock
            return READ_FROM_LLC
        bits = self._holders.get(addr)
        if bits:
            ms = addr % self._mlc_sets
            dirty = False
            core = 0
            b = bits
            while b:
                if b & 1:
                    d, io = self._mlc[core][ms][addr]
                    if d:
                        dirty = True
                        self._mlc[core][ms][addr] = (False, io)
                b >>= 1
                core += 1
            nw = self._victim(s, self._incl_lo, self._ways - 1)
            self._evict(s, nw, [])
            self._place(s, nw, Line(addr, None, None, dirty, False))
            if self.debug:
                self.check_invariants()
            return READ_ALLOCATED_INCLUSIVE
        self.counters.memory_read_lines += 1
        return READ_FROM_MEMORY

    # -- inspection ------------------------------------------------------------

    def llc_way(self, addr):
        return self._where.get(addr)

    def in_mlc(self, core, addr):
        return addr in self._mlc[core][addr % self._mlc_sets]

    def mlc_holders(self, addr):
        bits = self._holders.get(addr, 0)
        return [c for c in range(self.geometry.core_count) if bits >> c & 1]

    def line_meta(self, addr):
        s = addr % self._sets
        w = self._where.get(addr)
        if w is None:
            return None
        line = self._frames[s][w]
        state = "inclusive" if addr in self._holders else "exclusive-in-llc"
        # rank 0 = most recently used within the set
        rank = sum(1 for v, st in zip(self._frames[s], self._stamps[s])
                   if v is not None and st > self._stamps[s][w])
        return LineMeta(addr, line.owner, line.io_origin, line.dirty, line.consumed, state, rank)

    def resident_lines(self):
        return len(self._where)

    def pending_io(self):
        return dict(self._pending)

    def dump_lines(self):
        """One ``set,way,addr,state,owner,io_origin,consumed,dirty`` row per resident line."""
        rows = []
        for s in range(self._sets):
            for w, line in enumerate(self._frames[s]):
                if line is None:
                    continue
                state = "I" if line.addr in self._holders else "E"
                io = "" if line.io_origin is None else line.io_origin
                owner = "" if line.owner is None else line.owner
                rows.append(f"{s},{w},{line.addr},{state},{owner},{io},"
                            f"{int(line.consumed)},{int(line.dirty)}")
        return rows

    def check_invariants(self):
        for addr, bits in self._holders.items():
            if not bits:
                raise AssertionError(f"empty holder entry for {addr}")
            w = self._where.get(addr)
            if w is not None and w < self._incl_lo:
                raise AssertionError(
                    f"line {addr} is in an MLC and in LLC way {w}, which is not inclusive")
        for addr, w in self._where.items():
            line = self._frames[addr % self._sets][w]
            if line is None or line.addr != addr:
                raise AssertionError(f"LLC index out of sync for {addr}")
        for core, sets in enumerate(self._mlc):
            for mset in sets:
                if len(mset) > self._mlc_ways:
                    raise AssertionError(f"MLC set overflow on core {core}")
                for addr in mset:
                    if not self._holders.get(addr, 0) >> core & 1:
                        raise AssertionError(f"holder bit missing for {addr} on core {core}")
