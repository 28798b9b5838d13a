"""Epoch loop: devices, then cores, then telemetry and the controller per tick."""

import math
from dataclasses import dataclass, field

from llcsim.a4_controller import (A4Controller, NO_ANTAGONIST, SetDca, SetMask, Thresholds,
                                  WorkloadInfo)
from llcsim.cache_model import CacheGeometry, CacheModel, ConfigError, WayMask
from llcsim.io_path import DeviceTable, DmaBatch, SimulationError
from llcsim.telemetry import AccessCosts, snapshot
from llcsim.workloads import DEVICE_KIND_FOR, bind_counters, build_workload

EVENT_ACTIONS = ("dca", "mask", "launch", "terminate", "reclassify", "set")

COLUMNS = ("tick", "entity", "kind", "llc_hit_rate", "mlc_miss_rate", "llc_miss_rate",
           "dca_leak_rate", "io_throughput", "latency_proxy", "mem_bw_lines", "mask_lo",
           "mask_hi", "dca_enabled", "priority", "antagonist", "phase")

# Address regions: one per workload, far enough apart that no buffer can spill
# into a neighbour even with fresh storage buffers over a long run.
REGION_LINES = 1 << 40


@dataclass(frozen=True)
class Event:
    tick: int
    action: str
    args: tuple
    line: int = field(default=0, compare=False)


@dataclass(kw_only=True)
class Scenario:
    geometry: CacheGeometry
    epochs_per_tick: int = 100
    total_ticks: int = 70
    warmup_ticks: int = 10
    summary_ticks: int = 10
    seed: int = 0
    devices: list = field(default_factory=list)
    workloads: list = field(default_factory=list)
    thresholds: Thresholds = Thresholds()
    controller_enabled: bool = True
    migrate_non_io: bool = True
    dca_miss_metric: str = "leak"
    costs: AccessCosts = AccessCosts()
    events: list = field(default_factory=list)

    def validate(self):
        """Raise ConfigError describing the first broken invariant."""
        self.geometry.validate()
        if self.epochs_per_tick < 1 or self.total_ticks < 1:
            raise ConfigError("epochs_per_tick and total_ticks must be positive")
        if not 0 <= self.warmup_ticks < self.total_ticks:
            raise ConfigError("warmup_ticks must be >= 0 and < total_ticks")
        if self.summary_ticks < 1:
            raise ConfigError("summary_ticks must be positive")
        if self.dca_miss_metric not in ("leak", "alloc_fraction"):
            raise ConfigError("dca_miss_metric must be leak or alloc_fraction")
        probs = self.thresholds.problems()
        if probs:
            raise ConfigError(probs[0])
        devs = {}
        for d in self.devices:
            if d.id in devs:
                raise ConfigError(f"duplicate device {d.id!r}")
            devs[d.id] = d
        seen_cores = {}
        bound = {}
        wids = set()
        for w in self.workloads:
            if w.id in wids:
                raise ConfigError(f"duplicate workload {w.id!r}")
            if w.id in devs:
                raise ConfigError(f"workload {w.id!r} shares its id with a device")
            wids.add(w.id)
            for c in w.cores:
                if not 0 <= c < self.geometry.core_count:
                    raise ConfigError(f"workload {w.id}: core {c} out of range")
                if c in seen_cores:
                    raise ConfigError(f"workload {w.id}: core {c} already used by {seen_cores[c]}")
                seen_cores[c] = w.id
            if w.device is not None:
                d = devs.get(w.device)
                if d is None:
                    raise ConfigError(f"workload {w.id}: unknown device {w.device!r}")
                if d.kind != DEVICE_KIND_FOR[w.kind]:
                    raise ConfigError(f"workload {w.id}: {w.kind} needs a {DEVICE_KIND_FOR[w.kind]} device")
                if w.device in bound:
                    raise ConfigError(f"device {w.device} is already bound to {bound[w.device]}")
                bound[w.device] = w.id
            if w.mask is not None:
                w.mask.check(self.geometry)
        for ev in self.events:
            check_event(ev, devs, {w.id: w for w in self.workloads}, self.geometry)
        return self


def check_event(ev, devs, wls, geometry):
    a = ev.action
    if a not in EVENT_ACTIONS:
        raise ConfigError(f"unknown event action {a!r}")
    if ev.tick < 0:
        raise ConfigError("event tick must be >= 0")
    nargs = {"dca": 2, "mask": 2, "launch": 1, "terminate": 1, "reclassify": 2, "set": 3}[a]
    if len(ev.args) != nargs:
        raise ConfigError(f"event {a} takes {nargs} arguments, got {len(ev.args)}")
    target = ev.args[0]
    if a == "dca":
        if target not in devs:
            raise ConfigError(f"event dca: unknown device {target!r}")
        if ev.args[1] not in ("on", "off"):
            raise ConfigError("event dca: expected on or off")
        return
    if target not in wls:
        raise ConfigError(f"event {a}: unknown workload {target!r}")
    if a == "mask":
        WayMask.parse(ev.args[1]).check(geometry)
    elif a == "reclassify" and ev.args[1] not in ("high", "low"):
        raise ConfigError("event reclassify: expected high or low")


@dataclass
class Report:
    columns: tuple = COLUMNS
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    actions: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    warmup_ticks: int = 0
    summary_ticks: int = 10

    def column(self, entity, name, ticks=None):
        """Values of ``name`` for ``entity`` as (tick, value) pairs, skipping blanks."""
        i = self.columns.index(name)
        out = []
        for r in self.rows:
            if r[1] == entity and r[i] != "" and (ticks is None or r[0] in ticks):
                out.append((r[0], r[i]))
        return out


def summarize(rows, total_ticks, warmup_ticks, summary_ticks, columns=COLUMNS):
    """Mean of every numeric column per entity over the summary window."""
    first = max(warmup_ticks, total_ticks - summary_ticks)
    numeric = [i for i, c in enumerate(columns)
               if c in ("llc_hit_rate", "mlc_miss_rate", "llc_miss_rate", "dca_leak_rate",
                        "io_throughput", "latency_proxy", "mem_bw_lines")]
    acc = {}
    for r in rows:
        if r[0] < first:
            continue
        for i in numeric:
            v = r[i]
            if v == "":
                continue
            acc.setdefault((r[1], columns[i]), []).append(v)
    return {k: sum(v) / len(v) for k, v in acc.items()}


def region_base(index, geometry):
    align = math.lcm(geometry.llc_sets, geometry.mlc_sets)
    stride = -(-REGION_LINES // align) * align
    return (index + 1) * stride


class Simulation:
    """One run's mutable state. Use :func:`run` unless stepping by hand."""

    def __init__(self, scenario):
        scenario.validate()
        self.sc = sc = scenario
        self.model = CacheModel(sc.geometry, migrate_non_io=sc.migrate_non_io)
        self.devices = DeviceTable(sc.devices, self.model)
        self.specs = {w.id: w for w in sc.workloads}
        self.workloads = {}
        self.active = {}
        for i, spec in enumerate(sc.workloads):
            budget = self.devices[spec.device].lines_per_epoch if spec.device else 0
            w = build_workload(spec, region_base(i, sc.geometry), sc.seed, budget)
            bind_counters(w, self.model)
            self.workloads[spec.id] = w
            self.active[spec.id] = spec.active
        self.device_owner = {w.device: w.id for w in sc.workloads if w.device is not None}
        self.priority = {w.id: w.priority for w in sc.workloads}
        self.events = {}
        for ev in sc.events:
            self.events.setdefault(ev.tick, []).append(ev)
        self.storage_devices = tuple(d.id for d in sc.devices if d.kind == "storage")
        self.controller = None
        self.actions_log = []
        if sc.controller_enabled:
            self.controller = A4Controller(
                sc.geometry, sc.thresholds,
                [self._info(w) for w in sc.workloads if w.active],
                {d.id: d.dca_enabled for d in sc.devices})
            self._apply(self.controller.start(), tick=0)
        else:
            for w in sc.workloads:
                self.model.set_way_mask(w.id, w.mask or WayMask.full(sc.geometry))
        self.prev = self.model.counters.copy()
        self.tick_index = 0

    def _info(self, spec):
        touch = getattr(self.workloads[spec.id].params, "touch", False) if spec.id in self.workloads else False
        return WorkloadInfo(id=spec.id, kind=spec.kind, priority=self.priority[spec.id],
                            device=spec.device, touch=touch)

    def _apply(self, actions, tick):
        for a in actions:
            if isinstance(a, SetMask):
                self.model.set_way_mask(a.target, a.mask)
            elif isinstance(a, SetDca):
                self.devices.set_dca_enabled(a.device, a.enabled)
            else:
                raise SimulationError(f"unknown controller action {a!r}")
            name, target, detail = a.log_fields()
            self.actions_log.append(f"{tick},{name},{target},{detail}")

    def _scripted(self, ev):
        a, args = ev.action, ev.args
        if a == "dca":
            self.devices.set_dca_enabled(args[0], args[1] == "on")
            if self.controller is not None:
                self.controller.dca[args[0]] = args[1] == "on"
            return
        wid = args[0]
        if a == "mask":
            self.model.set_way_mask(wid, WayMask.parse(args[1]))
        elif a == "set":
            self.workloads[wid].update_param(args[1], args[2])
        elif a in ("launch", "terminate"):
            on = a == "launch"
            if self.active[wid] == on:
                return
            self.active[wid] = on
            if self.controller is not None:
                self._apply(self.controller.on_workload_event(a, self._info(self.specs[wid])),
                            self.tick_index)
        elif a == "reclassify":
            self.priority[wid] = args[1]
            if self.controller is not None:
                self._apply(self.controller.on_workload_event(
                    a, self._info(self.specs[wid]), priority=args[1]), self.tick_index)

    def _epoch(self, epoch):
        model = self.model
        for dev in self.devices:
            wid = self.device_owner.get(dev.id)
            if wid is None or not self.active[wid]:
                continue
            addrs = self.workloads[wid].dma_lines(epoch, dev.lines_per_epoch)
            if addrs:
                self.devices.issue_dma(dev.id, DmaBatch(dev.id, tuple(addrs), epoch), model)
        for wid, w in self.workloads.items():
            if self.active[wid]:
                w.cpu_step(epoch, model)

    def step_tick(self):
        """Run one tick; returns (snapshot, rows)."""
        sc = self.sc
        t = self.tick_index
        for ev in self.events.get(t, ()):
            self._scripted(ev)
        base = t * sc.epochs_per_tick
        for e in range(sc.epochs_per_tick):
            self._epoch(base + e)
        counters = self.model.counters
        errors = counters.reconciliation_errors()
        if errors:
            raise SimulationError(f"tick {t}: " + "; ".join(errors))
        snap = snapshot(counters, self.prev, window=t, storage_devices=self.storage_devices,
                        costs=sc.costs, dca_miss_metric=sc.dca_miss_metric)
        self.prev = counters.copy()
        rows = self._rows(t, snap)
        if self.controller is not None:
            self._apply(self.controller.tick(snap), t)
        self.tick_index += 1
        return snap, rows

    def _rows(self, t, snap):
        ctl = self.controller
        rows = []
        for spec in self.sc.workloads:
            wid = spec.id
            r = snap.workloads.get(wid) if self.active[wid] else None
            mask = self.model.way_mask(wid)
            if ctl is not None and wid in ctl.workloads:
                st = ctl.workloads[wid]
                prio, ant = st.effective_priority, st.antagonist
            else:
                prio, ant = self.priority[wid], NO_ANTAGONIST
            if r is None:
                rates = ["", "", ""]
                tp = lat = ""
            else:
                rates = ["" if n in r.empty else round(getattr(r, n), 6)
                         for n in ("llc_hit_rate", "mlc_miss_rate", "llc_miss_rate")]
                tp = round(r.io_throughput, 6) if spec.device is not None else ""
                lat = "" if "latency_proxy" in r.empty else round(r.latency_proxy, 6)
            rows.append((t, wid, spec.kind, *rates, "", tp, lat, "", mask.lo, mask.hi, "",
                         prio, ant, ""))
        for dev in self.devices:
            d = snap.devices.get(dev.id)
            leak = "" if d is None or "dca_leak_rate" in d.empty else round(d.dca_leak_rate, 6)
            rows.append((t, dev.id, dev.kind, "", "", "", leak, "", "", "", "", "",
                         int(dev.dca_enabled), "", "", ""))
        phase = ctl.phase if ctl is not None else ""
        rows.append((t, "system", "global", "", "", "", "", "", "", snap.memory_bandwidth,
                     "", "", "", "", "", phase))
        return rows


def run(scenario, on_tick=None):
    """Run a scenario to completion and return its :class:`Report`."""
    sim = Simulation(scenario)
    report = Report(warmup_ticks=scenario.warmup_ticks, summary_ticks=scenario.summary_ticks)
    for _ in range(scenario.total_ticks):
        snap, rows = sim.step_tick()
        report.rows.extend(rows)
        report.snapshots.append(snap)
        if on_tick is not None:
            on_tick(sim, snap)
    report.actions = list(sim.actions_log)
    report.summary = summarize(report.rows, scenario.total_ticks, scenario.warmup_ticks,
                               scenario.summary_ticks)
    return report
