"""Built-in desk-scale scenarios for the I/O contention experiments.

Scale: 1024 LLC sets x 11 ways (11264 lines) against 25 MiB on the reference
part, so one simulated line stands for roughly 36 real ones. Block sizes and
ring sizes below are scaled by that factor (a 2 MiB storage block is 900
lines, 128 KiB is 56 lines).

A builtin is a base scenario plus, for experiment families, a list of named
variants expressed as ``--set`` style overrides of the base.
"""

from dataclasses import dataclass

from llcsim.cache_model import ConfigError


@dataclass(frozen=True)
class Builtin:
    name: str
    description: str
    text: str
    variants: tuple = ()    # (label, (override, ...))

    def variant(self, label):
        for name, ovs in self.variants:
            if name == label:
                return ovs
        raise ConfigError(f"builtin {self.name} has no variant {label!r}")


_GEOMETRY = """
[llc]
sets = 1024
ways = 11
dca_ways = 2
inclusive_ways = 2
line_bytes = 64

[mlc]
sets = 64
ways = 8
cores = 16
"""

# Static-mask sweeps: controller off and non-I/O LLC hits leave the LLC, so a
# memory streamer only ever occupies the ways it is given.
_SWEEP_SIM = """
[sim]
epochs_per_tick = 20
total_ticks = 16
warmup_ticks = 6
summary_ticks = 10
seed = 1
controller = off
migrate_non_io = off
"""

_NET = """
[device nic]
kind = network
lines_per_epoch = 204
dca = on

[workload net]
kind = net_rx
priority = high
cores = 0-3
device = nic
mask = {net_mask}
ring_entries = 96
lines_per_packet = 16
touch = {touch}
"""

_XMEM = """
[workload xmem]
kind = mem_stream
priority = high
cores = 4-5
mask = {mask}
working_set_lines = 5120
pattern = random
op = read
accesses_per_epoch = 16
"""


def _sweep_variants():
    return tuple((f"m{m}", (f"workload.xmem.mask={m}-{m + 1}",)) for m in range(10))


FIG3A = Builtin(
    "fig3a_sweep",
    "non-touching net_rx on ways 5-6, 2-way mem_stream swept across the LLC",
    _SWEEP_SIM + _GEOMETRY + _NET.format(net_mask="5-6", touch="off") + _XMEM.format(mask="0-1"),
    _sweep_variants(),
)

FIG3B = Builtin(
    "fig3b_sweep",
    "touching net_rx on ways 5-6, 2-way mem_stream swept across the LLC",
    _SWEEP_SIM + _GEOMETRY + _NET.format(net_mask="5-6", touch="on") + _XMEM.format(mask="0-1"),
    _sweep_variants(),
)

FIG4 = Builtin(
    "fig4_dca_off",
    "fig3b with the network device's DCA disabled",
    _SWEEP_SIM + _GEOMETRY + _NET.format(net_mask="5-6", touch="on").replace("dca = on", "dca = off")
    + _XMEM.format(mask="9-10"),
    tuple((f"off_m{m}", (f"workload.xmem.mask={m}-{m + 1}",)) for m in (2, 3, 7, 8, 9))
    + (("on_m9", ("workload.xmem.mask=9-10", "device.nic.dca=on")),),
)

FIG5 = Builtin(
    "fig5_overlap_exclude",
    "touching net_rx given n ways excluding, or n+2 ways overlapping, the inclusive ways",
    _SWEEP_SIM + _GEOMETRY + _NET.format(net_mask="7-8", touch="on") + _XMEM.format(mask="2-3"),
    (("2-exclude", ("workload.net.mask=7-8",)), ("4-overlap", ("workload.net.mask=7-10",)),
     ("4-exclude", ("workload.net.mask=5-8",)), ("6-overlap", ("workload.net.mask=5-10",))),
)

_STORAGE = """
[device ssd]
kind = storage
lines_per_epoch = 1024
dca = {dca}

[workload fio]
kind = storage_stream
priority = low
cores = 6-8
device = ssd
{mask}block_lines = {block}
queue_depth = 32
fresh_buffers = on
process_reads_per_line = 1
"""

FIG6A = Builtin(
    "fig6a_selective_dca",
    "touching net_rx with a 128 KiB-block storage stream, DCA on for both vs storage DCA off",
    _SWEEP_SIM + _GEOMETRY + _NET.format(net_mask="0-10", touch="on")
    + _STORAGE.format(dca="on", mask="", block=56),
    (("net_alone", ("workload.fio.active=off",)), ("dca_on", ()),
     ("ssd_dca_off", ("device.ssd.dca=off",))),
)

FIG6B = Builtin(
    "fig6b_trash_shrink",
    "storage stream (DCA off) on ways 2..n beside a mem_stream fixed on ways 2-5",
    _SWEEP_SIM + _GEOMETRY + _NET.format(net_mask="0-10", touch="on")
    + _STORAGE.format(dca="off", mask="mask = 2-5\n", block=56) + _XMEM.format(mask="2-5"),
    tuple((f"n{n}", (f"workload.fio.mask=2-{n}",)) for n in (5, 4, 3, 2)),
)

_CONTROLLED_SIM = """
[sim]
epochs_per_tick = 100
total_ticks = 30
warmup_ticks = 8
summary_ticks = 10
seed = 1
controller = on
migrate_non_io = off
"""

_MIX_DEVICES = """
[device nic]
kind = network
lines_per_epoch = 204
dca = on

[device ssd_h]
kind = storage
lines_per_epoch = 1024
dca = on

[device ssd_l]
kind = storage
lines_per_epoch = 28
dca = on
"""

_NET_HPW = """
[workload net]
kind = net_rx
priority = high
cores = 0-3
device = nic
ring_entries = 96
lines_per_packet = 16
touch = on
"""

_FIO_H = """
[workload fio_h]
kind = storage_stream
priority = low
cores = 4-6
device = ssd_h
block_lines = 900
queue_depth = 32
fresh_buffers = on
"""

_FIO_L = """
[workload fio_l]
kind = storage_stream
priority = {priority}
cores = 7
device = ssd_l
block_lines = 14
queue_depth = 4
fresh_buffers = off
"""


def _mem(wid, priority, core, ws, pattern, acc):
    return f"""
[workload {wid}]
kind = mem_stream
priority = {priority}
cores = {core}
working_set_lines = {ws}
pattern = {pattern}
op = read
accesses_per_epoch = {acc}
"""


HPW_HEAVY = Builtin(
    "hpw_heavy",
    "mostly high-priority mix: net and cache-sensitive streams high, "
    "a heavy storage stream and a cache-thrashing stream low",
    _CONTROLLED_SIM + _GEOMETRY + _MIX_DEVICES + _NET_HPW + _FIO_H
    + _FIO_L.format(priority="high")
    + _mem("xm_a", "high", 8, 1536, "random", 32)
    + _mem("xm_b", "high", 9, 1536, "random", 32)
    + _mem("xm_c", "high", 10, 1024, "sequential", 32)
    + _mem("lbm", "low", 11, 90112, "random", 32)
    + _mem("x264", "low", 12, 768, "sequential", 16),
    (("controller_on", ()), ("controller_off", ("sim.controller=off",))),
)

LPW_HEAVY = Builtin(
    "lpw_heavy",
    "mostly low-priority mix with two cache-thrashing streams",
    _CONTROLLED_SIM + _GEOMETRY + _MIX_DEVICES + _NET_HPW + _FIO_H
    + _FIO_L.format(priority="low")
    + _mem("xm_a", "high", 8, 1536, "random", 32)
    + _mem("xm_c", "low", 10, 1024, "sequential", 32)
    + _mem("parest", "low", 9, 1536, "random", 32)
    + _mem("lbm", "low", 11, 90112, "random", 32)
    + _mem("bwaves", "low", 13, 90112, "random", 32)
    + _mem("x264", "low", 12, 768, "sequential", 16),
    (("controller_on", ()), ("controller_off", ("sim.controller=off",))),
)

BUILTINS = {b.name: b for b in (FIG3A, FIG3B, FIG4, FIG5, FIG6A, FIG6B, HPW_HEAVY, LPW_HEAVY)}


def get_builtin(name):
    try:
        return BUILTINS[name]
    except KeyError:
        raise ConfigError(f"unknown builtin {name!r}; choose from {', '.join(BUILTINS)}") from None


def builtin_scenario(name):
    """Scenario text of the named builtin's base configuration."""
    return get_builtin(name).text.lstrip()
