import pytest
from hypothesis import given, settings, strategies as st

from llcsim.cache_model import (ALLOCATE_DCA, LLC_HIT, MEMORY, MEMORY_WRITE, MLC_HIT,
                                READ_ALLOCATED_INCLUSIVE, READ_FROM_LLC, READ_FROM_MEMORY,
                                UPDATE_IN_PLACE, CacheGeometry, CacheModel, ConfigError, WayMask)


def geo(sets=4, ways=11, dca=2, incl=2, mlc_sets=1, mlc_ways=1, cores=2):
    return CacheGeometry(llc_sets=sets, llc_ways=ways, dca_way_count=dca, inclusive_way_count=incl,
                         mlc_sets=mlc_sets, mlc_ways=mlc_ways, core_count=cores)


def model(**kw):
    m = CacheModel(geo(**kw), debug=True)
    m.register_device("nic")
    m.register_device("ssd")
    return m


def victim_fill(m, addr, way_mask, cls="a", core=0, spill=1000):
    """Place ``addr`` in the LLC through an MLC eviction under ``way_mask``."""
    m.set_way_mask(cls, way_mask)
    m.cpu_access(core, addr, "read", cls)
    # single-way MLC: the next access evicts addr into the LLC
    m.cpu_access(core, spill, "read", cls)
    return m.llc_way(addr)


# -- geometry ---------------------------------------------------------------------------

def test_default_geometry_way_roles():
    g = CacheGeometry(llc_sets=1024, mlc_sets=64, mlc_ways=8, core_count=16)
    CacheModel(g)
    assert list(g.dca_ways) == [0, 1]
    assert list(g.inclusive_ways) == [9, 10]
    assert g.rightmost_standard_way == 8


def test_geometry_without_standard_ways_rejected():
    with pytest.raises(ConfigError):
        CacheModel(geo(ways=11, dca=2, incl=9))


@pytest.mark.parametrize("field,value", [("llc_sets", 0), ("mlc_ways", -1), ("core_count", 0)])
def test_geometry_rejects_non_positive_counts(field, value):
    kw = dict(llc_sets=4, mlc_sets=1, mlc_ways=1, core_count=1)
    kw[field] = value
    with pytest.raises(ConfigError):
        CacheGeometry(**kw).validate()


def test_geometry_line_bytes_power_of_two():
    with pytest.raises(ConfigError):
        CacheGeometry(llc_sets=4, line_bytes=48, mlc_sets=1, mlc_ways=1, core_count=1).validate()


def test_tiny_oracle_geometry_is_valid():
    m = CacheModel(geo(sets=4, ways=4, dca=1, incl=1))
    assert m.resident_lines() == 0
    assert m.way_mask("anything") == WayMask(0, 3)


# -- way masks ------------------------------------------------------------------------------

def test_way_mask_parse_and_bits():
    assert WayMask.parse("5-6") == WayMask(5, 6)
    assert WayMask.parse("8") == WayMask(8, 8)
    assert WayMask(2, 4).bits == 0b11100
    assert WayMask.from_bits(0b1100000) == WayMask(5, 6)


@pytest.mark.parametrize("bad", ["", "x-2", "3-1", "-1"])
def test_way_mask_parse_rejects(bad):
    with pytest.raises(ConfigError):
        WayMask.parse(bad)


def test_way_mask_non_contiguous_bits_rejected():
    with pytest.raises(ConfigError):
        WayMask.from_bits(0b101)


def test_way_mask_out_of_range_rejected_by_model():
    m = model()
    with pytest.raises(ConfigError):
        m.set_way_mask("a", WayMask(9, 11))


@given(st.integers(0, 10), st.integers(0, 10))
def test_way_mask_bits_round_trip(a, b):
    lo, hi = min(a, b), max(a, b)
    mask = WayMask(lo, hi)
    assert WayMask.from_bits(mask.bits) == mask
    assert mask.width == bin(mask.bits).count("1")


# -- masks confine fills ----------------------------------------------------------------------

def test_fills_land_in_class_mask():
    m = model(sets=2)
    m.set_way_mask("a", WayMask(9, 10))
    for addr in range(0, 40):
        m.cpu_access(0, addr, "read", "a")
    rows = [r.split(",") for r in m.dump_lines()]
    assert rows
    assert {int(r[1]) for r in rows} <= {9, 10}


def test_full_mask_matches_default_sharing():
    a, b = model(), model()
    b.set_way_mask("a", WayMask(0, 10))
    for addr in [1, 5, 9, 1, 13, 17, 5, 21, 25, 29, 1]:
        a.cpu_access(0, addr, "read", "a")
        b.cpu_access(0, addr, "read", "a")
    assert a.dump_lines() == b.dump_lines()


def test_mask_change_does_not_move_resident_lines():
    m = model()
    assert victim_fill(m, 8, WayMask(5, 5)) == 5
    m.set_way_mask("a", WayMask(2, 3))
    assert m.llc_way(8) == 5
    out = m.cpu_access(1, 8, "read", "a")
    assert out.level == LLC_HIT


# -- cpu access -------------------------------------------------------------------------------

def test_cold_read_fills_mlc_only():
    m = model()
    out = m.cpu_access(0, 7, "read", "a")
    assert out.level == MEMORY
    assert m.in_mlc(0, 7)
    assert m.llc_way(7) is None
    assert m.line_meta(7) is None


def test_mlc_hit():
    m = model()
    m.cpu_access(0, 7, "read", "a")
    assert m.cpu_access(0, 7, "read", "a").level == MLC_HIT


def test_dma_line_migrates_to_inclusive_on_read():
    m = model()
    r = m.dma_write_line("nic", 4, True)
    assert r.outcome == ALLOCATE_DCA and r.way == 0
    out = m.cpu_access(0, 4, "read", "a")
    assert out.level == LLC_HIT and out.migrated_to_inclusive
    assert m.llc_way(4) in (9, 10)
    meta = m.line_meta(4)
    assert meta.consumed and meta.llc_state == "inclusive"


def test_migration_ignores_class_mask():
    m = model()
    m.set_way_mask("a", WayMask(2, 3))
    m.dma_write_line("nic", 4, True)
    m.cpu_access(0, 4, "read", "a")
    assert m.llc_way(4) in (9, 10)


def test_mlc_evictions_land_in_mask():
    m = model(sets=4, mlc_sets=1, mlc_ways=2)
    m.set_way_mask("a", WayMask(5, 6))
    for addr in range(0, 24):
        m.cpu_access(0, addr, "read", "a")
    ways = {int(r.split(",")[1]) for r in m.dump_lines()}
    assert ways and ways <= {5, 6}


def test_non_io_hit_dropped_when_migration_off():
    m = CacheModel(geo(), migrate_non_io=False, debug=True)
    assert victim_fill(m, 8, WayMask(4, 4)) == 4
    out = m.cpu_access(1, 8, "read", "a")
    assert out.level == LLC_HIT and not out.migrated_to_inclusive
    assert m.llc_way(8) is None


# -- DMA writes -------------------------------------------------------------------------------

def test_dma_update_in_place_in_inclusive_way():
    m = model()
    m.dma_write_line("nic", 4, True)
    m.cpu_access(0, 4, "read", "a")
    way = m.llc_way(4)
    r = m.dma_write_line("nic", 4, True)
    assert r.outcome == UPDATE_IN_PLACE and r.way == way
    assert not m.line_meta(4).consumed
    assert not m.in_mlc(0, 4)


def test_dma_leak_on_third_unconsumed_write():
    m = model()
    m.dma_write_line("ssd", 0, True)
    m.dma_write_line("ssd", 4, True)
    r = m.dma_write_line("ssd", 8, True)
    assert r.outcome == ALLOCATE_DCA
    assert r.leaks == [(0, "ssd")]
    dc = m.counters.devices["ssd"]
    assert dc.leak_events == 1 and dc.pending == 2


def test_dma_write_with_dca_off_invalidates():
    m = model()
    m.dma_write_line("nic", 4, True)
    r = m.dma_write_line("nic", 4, False)
    assert r.outcome == MEMORY_WRITE
    assert m.llc_way(4) is None
    assert m.counters.devices["nic"].dma_memory_writes == 1
    assert m.counters.devices["nic"].dma_allocations == 1


def test_dma_write_unknown_device():
    m = model()
    with pytest.raises(ConfigError):
        m.dma_write_line("gpu", 0, True)


def test_superseded_write_reconciles():
    m = model()
    m.dma_write_line("nic", 4, True)
    m.dma_write_line("nic", 4, True)
    dc = m.counters.devices["nic"]
    assert (dc.superseded, dc.pending) == (1, 1)
    assert not m.counters.reconciliation_errors()


# -- DMA reads ---------------------------------------------------------------------------------

def test_dma_read_from_mlc_allocates_inclusive():
    m = model()
    m.cpu_access(0, 7, "write", "a")
    assert m.dma_read_line("nic", 7) == READ_ALLOCATED_INCLUSIVE
    assert m.llc_way(7) in (9, 10)
    assert m.line_meta(7).llc_state == "inclusive"


def test_dma_read_untouched_goes_to_memory():
    m = model()
    before = m.dump_lines()
    assert m.dma_read_line("nic", 7) == READ_FROM_MEMORY
    assert m.dump_lines() == before


def test_dma_read_from_standard_way():
    m = model()
    assert victim_fill(m, 8, WayMask(5, 5)) == 5
    assert m.dma_read_line("nic", 8) == READ_FROM_LLC
    assert m.llc_way(8) == 5


# -- victim selection -------------------------------------------------------------------------

def test_select_victim_prefers_lowest_invalid():
    m = model()
    assert m.select_victim(0, WayMask(0, 1)) == 0


def test_select_victim_lru():
    m = model(sets=1)
    # way 10 then way 9 via read-allocations of MLC-resident lines
    m.cpu_access(0, 1, "read", "a")
    m.dma_read_line("nic", 1)
    m.cpu_access(1, 2, "read", "a")
    m.dma_read_line("nic", 2)
    assert (m.llc_way(1), m.llc_way(2)) == (9, 10)
    m.dma_read_line("nic", 1)       # touch way 9 after way 10
    assert m.select_victim(0, WayMask(9, 10)) == 10


# -- properties ---------------------------------------------------------------------------------

ops = st.lists(st.tuples(st.sampled_from(["r", "w", "dma", "dmaoff", "dread"]),
                         st.integers(0, 1), st.integers(0, 40)), max_size=120)


@settings(max_examples=60, deadline=None)
@given(ops)
def test_invariants_hold_on_arbitrary_traces(trace):
    m = CacheModel(geo(sets=4, mlc_sets=2, mlc_ways=2), debug=True)
    m.register_device("nic")
    for op, core, addr in trace:
        if op in ("r", "w"):
            resident = m.llc_way(addr) is not None
            out = m.cpu_access(core, addr, "read" if op == "r" else "write", "a")
            if out.level == MEMORY:
                # non-inclusive: a demand miss never allocates in the LLC
                assert not resident and m.llc_way(addr) is None
        elif op == "dma":
            r = m.dma_write_line("nic", addr, True)
            if r.outcome == ALLOCATE_DCA:
                assert r.way in (0, 1)
        elif op == "dmaoff":
            m.dma_write_line("nic", addr, False)
        else:
            m.dma_read_line("nic", addr)
    assert not m.counters.reconciliation_errors()
    dc = m.counters.devices["nic"]
    assert dc.pending == len(m.pending_io())


@settings(max_examples=25, deadline=None)
@given(ops)
def test_model_is_deterministic(trace):
    dumps = []
    for _ in range(2):
        m = CacheModel(geo(sets=4, mlc_sets=2, mlc_ways=2))
        m.register_device("nic")
        for op, core, addr in trace:
            if op in ("r", "w"):
                m.cpu_access(core, addr, "read" if op == "r" else "write", "a")
            elif op == "dread":
                m.dma_read_line("nic", addr)
            else:
                m.dma_write_line("nic", addr, op == "dma")
        dumps.append((m.dump_lines(), m.counters.devices["nic"].as_dict()))
    assert dumps[0] == dumps[1]
