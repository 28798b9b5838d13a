"""Runtime LLC-management controller.

A pure state machine: the engine feeds it one :class:`RateSnapshot` per tick
and applies the mask and DCA actions it returns before the next tick starts.
It never touches the cache model.

Phases:

``searching``
    Priority zones are laid out from scratch and the low-priority zone grows
    one way to the left every ``expand_period`` ticks for as long as no
    high-priority workload loses more than ``hpw_llc_hit_thr`` of its hit rate.
``stable``
    Non-I/O antagonists are detected and squeezed into trash ways, phase
    changes of flagged workloads are watched, and every ``stable_interval``
    ticks a revert probe is scheduled.
``reverted``
    The initial allocation is applied for ``revert_interval`` ticks to see
    whether high-priority workloads could do better than they are now.
"""

from collections import deque
from dataclasses import dataclass, field, fields

from llcsim.cache_model import WayMask

SEARCHING = "searching"
STABLE = "stable"
REVERTED = "reverted"

NO_ANTAGONIST = "none"
STORAGE_ANTAGONIST = "storage_io"
NON_IO_ANTAGONIST = "non_io"

# Relative comparisons of near-zero rates are meaningless; differences below
# this absolute amount always count as "unchanged".
ABS_TOLERANCE = 0.01


@dataclass(frozen=True, kw_only=True)
class Thresholds:
    hpw_llc_hit_thr: float = 0.20
    dmalk_dca_ms_thr: float = 0.40
    dmalk_io_tp_thr: float = 0.35
    dmalk_llc_ms_thr: float = 0.40
    ant_cache_miss_thr: float = 0.90
    instability_thr: float = 0.10
    stable_interval: int = 10
    revert_interval: int = 1
    expand_period: int = 2
    # optional policies
    exclude_dca_for_nonio_hpw: bool = False
    net_bloat_to_trash: bool = False

    FRACTIONS = ("hpw_llc_hit_thr", "dmalk_dca_ms_thr", "dmalk_io_tp_thr",
                 "dmalk_llc_ms_thr", "ant_cache_miss_thr", "instability_thr")
    INTERVALS = ("stable_interval", "revert_interval", "expand_period")

    def problems(self):
        out = []
        for name in self.FRACTIONS:
            v = getattr(self, name)
            if not 0 < v <= 1:
                out.append(f"{name} must be in (0, 1], got {v}")
        for name in self.INTERVALS:
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                out.append(f"{name} must be an integer >= 1, got {v}")
        return out


THRESHOLD_KEYS = tuple(f.name for f in fields(Thresholds))


@dataclass(frozen=True)
class SetMask:
    target: str
    mask: WayMask

    def log_fields(self):
        return "set_mask", self.target, str(self.mask)


@dataclass(frozen=True)
class SetDca:
    device: str
    enabled: bool

    def log_fields(self):
        return "set_dca", self.device, "on" if self.enabled else "off"


@dataclass(frozen=True, kw_only=True)
class WorkloadInfo:
    """What the controller is told about a workload when it launches."""
    id: str
    kind: str
    priority: str
    device: object = None
    touch: bool = False

    @property
    def is_io(self):
        return self.device is not None

    @property
    def is_storage(self):
        return self.kind == "storage_stream"


@dataclass
class WorkloadState:
    info: WorkloadInfo
    declared_priority: str
    effective_priority: str
    antagonist: str = NO_ANTAGONIST
    baseline_hit_rate: object = None
    detect_ref: object = None     # miss rate or throughput at detection time
    # recent io_throughput samples; block completions arrive in clumps, so
    # throughput is judged over a short window rather than a single tick
    tp_window: deque = field(default_factory=deque)

    def throughput(self):
        if not self.tp_window:
            return None
        return sum(self.tp_window) / len(self.tp_window)

    @property
    def id(self):
        return self.info.id


@dataclass
class Zones:
    dca_zone: object
    hp_zone: WayMask
    lp_zone: object
    lp_initial: object
    lp_min_lo: int
    trash_ways: object = None


# -- detection conditions ------------------------------------------------------

def storage_antagonist_conditions(leak_rate, llc_miss_rate, storage_share, thr):
    """All three must strictly exceed their thresholds."""
    return (leak_rate > thr.dmalk_dca_ms_thr
            and llc_miss_rate > thr.dmalk_llc_ms_thr
            and storage_share > thr.dmalk_io_tp_thr)


def non_io_antagonist_conditions(mlc_miss_rate, llc_miss_rate, thr):
    return mlc_miss_rate > thr.ant_cache_miss_thr and llc_miss_rate > thr.ant_cache_miss_thr


def detect_storage_antagonist(snapshot, thresholds, storage_map):
    """Flag per storage workload; ``storage_map`` maps workload id to device id."""
    out = {}
    for wid, did in storage_map.items():
        w = snapshot.workloads.get(wid)
        d = snapshot.devices.get(did)
        if w is None or d is None or "llc_miss_rate" in w.empty or "dca_leak_rate" in d.empty:
            out[wid] = False
            continue
        out[wid] = storage_antagonist_conditions(
            d.dca_leak_rate, w.llc_miss_rate, snapshot.storage_write_share, thresholds)
    return out


def detect_non_io_antagonist(snapshot, thresholds, candidates):
    out = {}
    for wid in candidates:
        w = snapshot.workloads.get(wid)
        if w is None or w.empty:
            out[wid] = False
            continue
        out[wid] = non_io_antagonist_conditions(w.mlc_miss_rate, w.llc_miss_rate, thresholds)
    return out


def relative_change(ref, value):
    if abs(value - ref) < ABS_TOLERANCE:
        return 0.0
    if ref == 0:
        return float("inf")
    return abs(value - ref) / abs(ref)


def relative_drop(ref, value):
    if ref - value < ABS_TOLERANCE or ref <= 0:
        return 0.0
    return (ref - value) / ref


# -- controller -------------------------------------------------------------------

class A4Controller:
    def __init__(self, geometry, thresholds=Thresholds(), workloads=(), dca_enabled=None):
        self.geometry = geometry
        self.thr = thresholds
        self.workloads = {}
        for info in workloads:
            self.workloads[info.id] = WorkloadState(info, info.priority, info.priority)
        # device id -> current DCA flag as last commanded (or as configured)
        self.dca = dict(dca_enabled or {})
        self.masks = {}
        self.phase = SEARCHING
        self.ticks_in_phase = 0
        self.zones = None
        self.log = []
        self._tick = 0
        self._search = None
        self._shrink = None
        self._saved = None
        self._pre_revert = None
        self.detections = []      # (tick, workload id, kind)

    # -- registry ----------------------------------------------------------

    def start(self):
        """Initial partitions; call once before the first tick."""
        return self._begin_search()

    def on_workload_event(self, event, info, priority=None):
        actions = []
        if event == "launch":
            self.workloads[info.id] = WorkloadState(info, info.priority, info.priority)
        elif event == "terminate":
            st = self.workloads.pop(info.id, None)
            self.masks.pop(info.id, None)
            if st is not None and st.antagonist == STORAGE_ANTAGONIST:
                self.dca[st.info.device] = True
                actions.append(SetDca(st.info.device, True))
        elif event == "reclassify":
            st = self.workloads[info.id]
            st.declared_priority = priority
            if st.antagonist == NO_ANTAGONIST:
                st.effective_priority = priority
        else:
            raise ValueError(f"unknown workload event {event!r}")
        actions.extend(self._begin_search())
        self._record(actions)
        return actions

    # -- zone layout -------------------------------------------------------

    def _io_hpw_active(self):
        return any(st.info.is_io and st.effective_priority == "high"
                   for st in self.workloads.values())

    def _has_lpw(self):
        return any(st.effective_priority == "low" for st in self.workloads.values())

    def _layout(self):
        g = self.geometry
        W = g.llc_ways
        D = g.dca_way_count
        R = g.rightmost_standard_way
        if self._io_hpw_active():
            dca = WayMask(0, D - 1)
            hp = WayMask(D, W - 1)
            lp = WayMask(max(D, R - 1), R)
            lo_min = D
        else:
            dca = None
            hp = WayMask(0, W - 1)
            lp = WayMask(max(0, W - 2), W - 1)
            lo_min = 0
        return Zones(dca, hp, lp if self._has_lpw() else None, lp, lo_min)

    def _trash_start(self):
        R = self.geometry.rightmost_standard_way
        lp = self.zones.lp_zone
        lo = R if lp is None else min(lp.lo, R)
        return WayMask(lo, R)

    def _mask_for(self, st, lp, trash):
        z = self.zones
        if st.effective_priority == "high":
            if st.info.is_io:
                return WayMask(0, self.geometry.llc_ways - 1)
            hp = z.hp_zone
            if self.thr.exclude_dca_for_nonio_hpw:
                hp = WayMask(max(hp.lo, self.geometry.dca_way_count), hp.hi)
            return hp
        if st.antagonist != NO_ANTAGONIST and trash is not None:
            return trash
        if (self.thr.net_bloat_to_trash and trash is not None
                and st.info.kind == "net_rx" and st.info.touch):
            return trash
        return lp

    def _apply_masks(self, lp=None, trash=None, initial=False):
        """Diff the desired per-workload masks against what was last commanded."""
        if initial:
            lp = self.zones.lp_initial
            trash = None
        else:
            lp = self.zones.lp_zone if lp is None else lp
            trash = self.zones.trash_ways if trash is None else trash
        actions = []
        for wid, st in self.workloads.items():
            m = self._mask_for(st, lp, trash)
            if m is None:
                m = WayMask.full(self.geometry)
            if self.masks.get(wid) != m:
                self.masks[wid] = m
                actions.append(SetMask(wid, m))
        return actions

    # -- phases ------------------------------------------------------------

    def _begin_search(self):
        self.zones = self._layout()
        self.phase = SEARCHING
        self.ticks_in_phase = 0
        self._shrink = None
        self._saved = None
        self._pre_revert = None
        for st in self.workloads.values():
            st.baseline_hit_rate = None
        self._search = {"prev": None, "since": 0, "expanded": False, "waited": 0}
        actions = self._apply_masks()
        if self.zones.lp_zone is None:
            # nothing to expand into: settle straight away
            self._enter_stable()
        return actions

    def _enter_stable(self):
        self.phase = STABLE
        self.ticks_in_phase = 0
        # the last mask edit needs time to show up in the counters
        self._grace = self.thr.expand_period

    def _hpws(self):
        return [st for st in self.workloads.values() if st.effective_priority == "high"]

    def _hit(self, snapshot, wid):
        w = snapshot.workloads.get(wid)
        if w is None or "llc_hit_rate" in w.empty:
            return None
        return w.llc_hit_rate

    def _settled(self, prev, cur):
        if prev is None:
            return False
        for st in self._hpws():
            a = self._hit(prev, st.id)
            b = self._hit(cur, st.id)
            if a is None or b is None:
                continue
            if relative_change(a, b) > self.thr.instability_thr:
                return False
        return True

    def _record_baselines(self, snapshot):
        for st in self._hpws():
            st.baseline_hit_rate = self._hit(snapshot, st.id)

    def _hpw_degraded(self, snapshot, refs=None):
        for st in self._hpws():
            ref = st.baseline_hit_rate if refs is None else refs.get(st.id)
            cur = self._hit(snapshot, st.id)
            if ref is None or cur is None:
                continue
            if relative_drop(ref, cur) > self.thr.hpw_llc_hit_thr:
                return True
        return False

    def _hpw_deviates(self, snapshot, refs=None):
        for st in self._hpws():
            ref = st.baseline_hit_rate if refs is None else refs.get(st.id)
            cur = self._hit(snapshot, st.id)
            if ref is None or cur is None:
                continue
            if relative_change(ref, cur) > self.thr.hpw_llc_hit_thr:
                return True
        return False

    def _search_tick(self, snapshot):
        s = self._search
        z = self.zones
        prev = s["prev"]
        s["prev"] = snapshot
        s["since"] += 1
        settled = self._settled(prev, snapshot)
        if not settled:
            # a workload that never settles would stall the search forever
            s["waited"] += 1
            if s["waited"] < 4 * self.thr.expand_period:
                return []
        s["waited"] = 0
        if not s["expanded"]:
            self._record_baselines(snapshot)
            s["expanded"] = True
            return self._expand_or_settle()
        if s["since"] < self.thr.expand_period:
            return []
        if self._hpw_degraded(snapshot):
            z.lp_zone = WayMask(z.lp_zone.lo + 1, z.lp_zone.hi)
            self._enter_stable()
            return self._apply_masks()
        return self._expand_or_settle()

    def _expand_or_settle(self):
        z = self.zones
        self._search["since"] = 0
        if z.lp_zone is None or z.lp_zone.lo <= z.lp_min_lo:
            self._enter_stable()
            return []
        z.lp_zone = WayMask(z.lp_zone.lo - 1, z.lp_zone.hi)
        return self._apply_masks()

    def _antagonists(self):
        return [st for st in self.workloads.values() if st.antagonist != NO_ANTAGONIST]

    def _detect_storage(self, snapshot):
        storage = {st.id: st.info.device for st in self.workloads.values()
                   if st.info.is_storage and st.antagonist == NO_ANTAGONIST
                   and self.dca.get(st.info.device, True)}
        if not storage:
            return []
        flags = detect_storage_antagonist(snapshot, self.thr, storage)
        actions = []
        hit = False
        for wid, flagged in flags.items():
            if not flagged:
                continue
            st = self.workloads[wid]
            st.antagonist = STORAGE_ANTAGONIST
            st.effective_priority = "low"
            # throughput reference is taken once the controller settles again:
            # right after detection the stream may still be ramping up
            st.detect_ref = None
            self.dca[st.info.device] = False
            self.detections.append((self._tick, wid, STORAGE_ANTAGONIST))
            actions.append(SetDca(st.info.device, False))
            hit = True
        if hit:
            actions.extend(self._begin_search())
        return actions

    def _detect_non_io(self, snapshot):
        cands = [st.id for st in self.workloads.values()
                 if not st.info.is_io and st.antagonist == NO_ANTAGONIST]
        flags = detect_non_io_antagonist(snapshot, self.thr, cands)
        flagged = []
        for wid, f in flags.items():
            if not f:
                continue
            st = self.workloads[wid]
            st.antagonist = NON_IO_ANTAGONIST
            st.effective_priority = "low"
            st.detect_ref = snapshot.workloads[wid].llc_miss_rate
            self.detections.append((self._tick, wid, NON_IO_ANTAGONIST))
            flagged.append(st)
        if not flagged:
            return []
        if self.zones.lp_zone is None:
            # first low-priority workload: the zone layout itself changes
            return self._begin_search()
        return self._start_trash()

    def _start_trash(self):
        self.zones.trash_ways = self._trash_start()
        self._shrink = {"since": 0, "ref": None, "active": True, "prev_lo": None}
        return self._apply_masks()

    def _shrink_refs(self, snapshot):
        ref = {"bw": snapshot.memory_bandwidth}
        for st in self._antagonists():
            w = snapshot.workloads.get(st.id)
            if w is None:
                continue
            ref[st.id] = (w.llc_miss_rate, st.throughput())
        return ref

    def _shrink_unstable(self, ref, snapshot):
        thr = self.thr.instability_thr
        if relative_change(ref["bw"], snapshot.memory_bandwidth) > thr:
            return True
        for st in self._antagonists():
            w = snapshot.workloads.get(st.id)
            if w is None or st.id not in ref:
                continue
            miss, tp = ref[st.id]
            if relative_change(miss, w.llc_miss_rate) > thr:
                return True
            if st.antagonist == STORAGE_ANTAGONIST and relative_change(tp, st.throughput()) > thr:
                return True
        return False

    def _shrink_tick(self, snapshot):
        sh = self._shrink
        if sh is None or not sh["active"]:
            return []
        z = self.zones
        sh["since"] += 1
        if sh["since"] < self.thr.expand_period:
            return []
        sh["since"] = 0
        if sh["prev_lo"] is not None:
            if self._shrink_unstable(sh["ref"], snapshot):
                z.trash_ways = WayMask(sh["prev_lo"], z.trash_ways.hi)
                sh["active"] = False
                return self._apply_masks()
            sh["prev_lo"] = None
        if z.trash_ways.width <= 1:
            sh["active"] = False
            return []
        sh["ref"] = self._shrink_refs(snapshot)
        sh["prev_lo"] = z.trash_ways.lo
        z.trash_ways = WayMask(z.trash_ways.lo + 1, z.trash_ways.hi)
        return self._apply_masks()

    def _restore_checks(self, snapshot):
        """Phase-change handling; returns (actions, re-search requested)."""
        actions = []
        research = False
        thr = self.thr.instability_thr
        for st in list(self._antagonists()):
            w = snapshot.workloads.get(st.id)
            if w is None:
                continue
            if st.antagonist == NON_IO_ANTAGONIST:
                if "llc_miss_rate" in w.empty:
                    continue
                if relative_change(st.detect_ref, w.llc_miss_rate) > thr:
                    st.antagonist = NO_ANTAGONIST
                    st.effective_priority = st.declared_priority
                    if st.declared_priority == "high":
                        research = True
            elif st.antagonist == STORAGE_ANTAGONIST:
                if st.detect_ref is None:
                    st.detect_ref = st.throughput()
                elif relative_change(st.detect_ref, st.throughput()) > thr:
                    st.antagonist = NO_ANTAGONIST
                    st.effective_priority = st.declared_priority
                    self.dca[st.info.device] = True
                    actions.append(SetDca(st.info.device, True))
                    research = True
        if self._hpw_deviates(snapshot):
            research = True
        return actions, research

    def _stable_tick(self, snapshot):
        if any(st.baseline_hit_rate is None for st in self._hpws()):
            # settled without a search (no low-priority zone to grow)
            self._record_baselines(snapshot)
        actions = self._detect_non_io(snapshot)
        if self.phase != STABLE:
            return actions
        if self._grace > 0:
            self._grace -= 1
            restore, research = [], False
        else:
            restore, research = self._restore_checks(snapshot)
        actions.extend(restore)
        if research:
            actions.extend(self._begin_search())
            return actions
        if self._antagonists() and self.zones.trash_ways is None and self.zones.lp_zone is not None:
            actions.extend(self._start_trash())
        elif not self._antagonists() and self.zones.trash_ways is not None:
            self.zones.trash_ways = None
            self._shrink = None
        actions.extend(self._apply_masks())
        actions.extend(self._shrink_tick(snapshot))
        self.ticks_in_phase += 1
        if self.ticks_in_phase >= self.thr.stable_interval:
            actions.extend(self._begin_revert(snapshot))
        return actions

    def _begin_revert(self, snapshot):
        self._pre_revert = {st.id: self._hit(snapshot, st.id) for st in self._hpws()}
        self._saved = (self.zones.lp_zone, self.zones.trash_ways)
        self.phase = REVERTED
        self.ticks_in_phase = 0
        return self._apply_masks(initial=True)

    def _revert_tick(self, snapshot):
        self.ticks_in_phase += 1
        if self.ticks_in_phase < self.thr.revert_interval:
            return []
        if self._hpw_deviates(snapshot, self._pre_revert):
            return self._begin_search()
        lp, trash = self._saved
        self.zones.lp_zone, self.zones.trash_ways = lp, trash
        self._saved = None
        self._enter_stable()
        if self._shrink is not None:
            # the probe disturbed the counters; re-time any shrink step in flight
            self._shrink["since"] = 0
        return self._apply_masks()

    def tick(self, snapshot):
        """Consume one tick's snapshot; returns actions for the next tick."""
        self._tick = snapshot.window
        for st in self.workloads.values():
            w = snapshot.workloads.get(st.id)
            if st.info.is_io and w is not None:
                st.tp_window.append(w.io_throughput)
                while len(st.tp_window) > self.thr.expand_period:
                    st.tp_window.popleft()
        if self.phase == REVERTED:
            actions = self._revert_tick(snapshot)
        else:
            actions = self._detect_storage(snapshot)
            if not actions:
                if self.phase == SEARCHING:
                    actions = self._search_tick(snapshot)
                else:
                    actions = self._stable_tick(snapshot)
        self._record(actions)
        return actions

    def _record(self, actions):
        for a in actions:
            name, target, detail = a.log_fields()
            self.log.append(f"{self._tick},{name},{target},{detail}")

    # -- inspection --------------------------------------------------------

    def state_of(self, wid):
        return self.workloads.get(wid)

    def baselines(self):
        return {st.id: st.baseline_hit_rate for st in self.workloads.values()
                if st.baseline_hit_rate is not None}
