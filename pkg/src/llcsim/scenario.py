"""Line-oriented scenario files.

::

    # comment
    [sim]
    epochs_per_tick = 20
    [llc]
    sets = 1024
    [device nic0]
    kind = network
    lines_per_epoch = 204
    [workload net]
    kind = net_rx
    cores = 0-3
    device = nic0
    [events]
    30 = dca nic0 off

Parsing is strict by default: an unknown key is an error unless ``lenient`` is
set, in which case it becomes a warning. Every error carries the line number
it was detected on.
"""

import warnings
from dataclasses import fields

from llcsim.a4_controller import Thresholds
from llcsim.cache_model import CacheGeometry, ConfigError, WayMask
from llcsim.engine import Event, Scenario
from llcsim.io_path import DeviceSpec
from llcsim.telemetry import AccessCosts
from llcsim.workloads import PARAM_TYPES, WorkloadSpec


class ScenarioError(ConfigError):
    def __init__(self, message, line=None):
        self.line = line
        self.message = message
        where = f"line {line}: " if line else ""
        super().__init__(where + message)


class ScenarioSyntaxError(ScenarioError):
    pass


class UnknownKeyError(ScenarioError):
    pass


class UnresolvedReferenceError(ScenarioError):
    pass


class InvariantViolation(ScenarioError):
    pass


class ScenarioWarning(UserWarning):
    pass


# -- value coercion ------------------------------------------------------------

_TRUE = ("on", "true", "yes", "1")
_FALSE = ("off", "false", "no", "0")


def parse_bool(text):
    t = str(text).strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def parse_int(text):
    return int(str(text).strip(), 0)


def parse_cores(text):
    cores = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            a, b = int(a), int(b)
            if b < a:
                raise ValueError(f"bad core range {part!r}")
            cores.extend(range(a, b + 1))
        else:
            cores.append(int(part))
    if len(set(cores)) != len(cores):
        raise ValueError("core listed twice")
    return tuple(cores)


def format_cores(cores):
    cores = list(cores)
    if cores and cores == list(range(cores[0], cores[-1] + 1)) and len(cores) > 1:
        return f"{cores[0]}-{cores[-1]}"
    return ",".join(str(c) for c in cores)


def coerce(kind, text):
    if kind is bool:
        return parse_bool(text)
    if kind is int:
        return parse_int(text)
    if kind is float:
        return float(text)
    return str(text).strip()


def format_value(v):
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, float):
        return repr(v)
    return str(v)


# -- key tables ------------------------------------------------------------------

SIM_KEYS = {
    "epochs_per_tick": int, "total_ticks": int, "warmup_ticks": int, "summary_ticks": int,
    "seed": int, "controller": bool, "migrate_non_io": bool, "dca_miss_metric": str,
    "cost_mlc_hit": float, "cost_llc_hit": float, "cost_memory": float,
}
LLC_KEYS = {"sets": int, "ways": int, "dca_ways": int, "inclusive_ways": int, "line_bytes": int}
MLC_KEYS = {"sets": int, "ways": int, "cores": int}
THRESHOLD_TYPES = {f.name: f.type for f in fields(Thresholds)}
THRESHOLD_ALIASES = {"hwp_llc_hit_thr": "hpw_llc_hit_thr"}
DEVICE_KEYS = {"kind": str, "lines_per_epoch": int, "dca": bool}
WORKLOAD_KEYS = {"kind": str, "priority": str, "cores": str, "device": str, "mask": str,
                 "active": bool}
PARAM_KEYS = {kind: {f.name: f.type for f in fields(cls)} for kind, cls in PARAM_TYPES.items()}

# desk-scale defaults for the cache geometry
GEOMETRY_DEFAULTS = dict(llc_sets=1024, llc_ways=11, dca_way_count=2, inclusive_way_count=2,
                         line_bytes=64, mlc_sets=64, mlc_ways=8, core_count=16)
LLC_FIELD = {"sets": "llc_sets", "ways": "llc_ways", "dca_ways": "dca_way_count",
             "inclusive_ways": "inclusive_way_count", "line_bytes": "line_bytes"}
MLC_FIELD = {"sets": "mlc_sets", "ways": "mlc_ways", "cores": "core_count"}

SINGLE_SECTIONS = ("sim", "llc", "mlc", "thresholds", "events")
ID_SECTIONS = ("device", "workload")


class Section:
    def __init__(self, kind, ident, line):
        self.kind = kind
        self.id = ident
        self.line = line
        self.values = {}     # key -> (text, line)
        self.events = []     # (tick text, action text, line) for [events]

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v[0]

    def line_of(self, key):
        v = self.values.get(key)
        return self.line if v is None else v[1]


def split_sections(text):
    """First pass: sections and raw ``key = value`` text, no interpretation."""
    sections = []
    seen = set()
    cur = None
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ScenarioSyntaxError(f"unterminated section header {raw.strip()!r}", n)
            parts = line[1:-1].split()
            if not parts:
                raise ScenarioSyntaxError("empty section header", n)
            kind = parts[0].lower()
            if kind in SINGLE_SECTIONS:
                if len(parts) != 1:
                    raise ScenarioSyntaxError(f"section [{kind}] takes no id", n)
                ident = None
            elif kind in ID_SECTIONS:
                if len(parts) != 2:
                    raise ScenarioSyntaxError(f"section [{kind}] needs exactly one id", n)
                ident = parts[1]
            else:
                raise ScenarioSyntaxError(f"unknown section [{kind}]", n)
            if (kind, ident) in seen:
                label = kind if ident is None else f"{kind} {ident}"
                raise ScenarioSyntaxError(f"duplicate section [{label}]", n)
            seen.add((kind, ident))
            cur = Section(kind, ident, n)
            sections.append(cur)
            continue
        if "=" not in line:
            raise ScenarioSyntaxError(f"expected 'key = value', got {raw.strip()!r}", n)
        if cur is None:
            raise ScenarioSyntaxError("key outside of any section", n)
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ScenarioSyntaxError("missing key before '='", n)
        if cur.kind == "events":
            cur.events.append((key, value, n))
            continue
        key = key.lower()
        if key in cur.values:
            raise ScenarioSyntaxError(f"duplicate key {key!r}", n)
        cur.values[key] = (value, n)
    return sections


def apply_overrides(sections, overrides):
    """Apply ``section.key=value`` or ``workload.id.key=value`` overrides."""
    for ov in overrides:
        if "=" not in ov:
            raise ScenarioSyntaxError(f"override {ov!r} is not of the form section.key=value")
        path, value = (p.strip() for p in ov.split("=", 1))
        parts = path.split(".")
        if len(parts) == 2 and parts[0] in SINGLE_SECTIONS and parts[0] != "events":
            kind, ident, key = parts[0], None, parts[1]
        elif len(parts) == 3 and parts[0] in ID_SECTIONS:
            kind, ident, key = parts
        else:
            raise ScenarioSyntaxError(f"bad override path {path!r}")
        target = next((s for s in sections if s.kind == kind and s.id == ident), None)
        if target is None:
            if ident is not None:
                raise UnresolvedReferenceError(f"override targets unknown {kind} {ident!r}")
            target = Section(kind, None, 0)
            sections.append(target)
        target.values[key.lower()] = (value, 0)
    return sections


def _check_keys(section, allowed, lenient):
    for key, (_, n) in section.values.items():
        if key in allowed:
            continue
        label = section.kind if section.id is None else f"{section.kind} {section.id}"
        msg = f"unknown key {key!r} in [{label}]"
        if lenient:
            warnings.warn(f"line {n}: {msg}", ScenarioWarning, stacklevel=3)
        else:
            raise UnknownKeyError(msg, n)


def _typed(section, key, kind, default):
    if key not in section.values:
        return default
    text, n = section.values[key]
    try:
        return coerce(kind, text)
    except ValueError as e:
        raise ScenarioSyntaxError(f"bad value for {key}: {e}", n) from None


def parse_scenario(text, lenient=False, overrides=()):
    sections = apply_overrides(split_sections(text), overrides)
    by_kind = {}
    for s in sections:
        by_kind.setdefault(s.kind, []).append(s)
    empty = Section("", None, 0)

    def single(kind):
        return by_kind.get(kind, [empty])[0]

    # [sim]
    sim = single("sim")
    _check_keys(sim, SIM_KEYS, lenient)
    sim_vals = {k: _typed(sim, k, t, None) for k, t in SIM_KEYS.items()}

    # geometry
    geo_kw = dict(GEOMETRY_DEFAULTS)
    llc, mlc = single("llc"), single("mlc")
    _check_keys(llc, LLC_KEYS, lenient)
    _check_keys(mlc, MLC_KEYS, lenient)
    for key, f in LLC_FIELD.items():
        geo_kw[f] = _typed(llc, key, int, geo_kw[f])
    for key, f in MLC_FIELD.items():
        geo_kw[f] = _typed(mlc, key, int, geo_kw[f])
    geometry = CacheGeometry(**geo_kw)
    try:
        geometry.validate()
    except ConfigError as e:
        # point at the most specific key that took part in the violation
        culprit = next((k for k in ("dca_ways", "inclusive_ways", "ways", "sets", "line_bytes")
                        if k in llc.values), None)
        line = llc.line_of(culprit) if culprit else mlc.line
        raise InvariantViolation(str(e), line) from None

    # [thresholds]
    thr_sec = single("thresholds")
    thr_kw = {}
    for key, (text_v, n) in thr_sec.values.items():
        name = THRESHOLD_ALIASES.get(key, key)
        if name not in THRESHOLD_TYPES:
            _check_keys_one(thr_sec, key, n, lenient)
            continue
        if name in thr_kw:
            raise ScenarioSyntaxError(f"threshold {name} given twice", n)
        try:
            thr_kw[name] = coerce(THRESHOLD_TYPES[name], text_v)
        except ValueError as e:
            raise ScenarioSyntaxError(f"bad value for {key}: {e}", n) from None
    thresholds = Thresholds(**thr_kw)
    for problem in thresholds.problems():
        key = problem.split()[0]
        raise InvariantViolation(problem, thr_sec.line_of(key))

    # devices
    devices = []
    dev_lines = {}
    for s in by_kind.get("device", []):
        _check_keys(s, DEVICE_KEYS, lenient)
        kind = s.get("kind")
        if kind is None:
            raise InvariantViolation(f"device {s.id} needs a kind", s.line)
        lpe = _typed(s, "lines_per_epoch", int, None)
        if lpe is None:
            raise InvariantViolation(f"device {s.id} needs lines_per_epoch", s.line)
        try:
            devices.append(DeviceSpec(id=s.id, kind=kind, lines_per_epoch=lpe,
                                      dca_enabled=_typed(s, "dca", bool, True)))
        except ConfigError as e:
            raise InvariantViolation(str(e), s.line_of("kind" if "kind" in str(e) else "lines_per_epoch")) from None
        dev_lines[s.id] = s.line
    dev_ids = {d.id: d for d in devices}

    # workloads
    workloads = []
    for s in by_kind.get("workload", []):
        kind = s.get("kind")
        if kind is None:
            raise InvariantViolation(f"workload {s.id} needs a kind", s.line)
        if kind not in PARAM_KEYS:
            raise InvariantViolation(f"workload {s.id}: unknown kind {kind!r}", s.line_of("kind"))
        allowed = dict(WORKLOAD_KEYS)
        allowed.update(PARAM_KEYS[kind])
        _check_keys(s, allowed, lenient)
        params = {}
        for key, t in PARAM_KEYS[kind].items():
            v = _typed(s, key, t, None)
            if v is not None:
                params[key] = v
        try:
            cores = parse_cores(s.get("cores", ""))
        except ValueError as e:
            raise ScenarioSyntaxError(f"bad cores: {e}", s.line_of("cores")) from None
        device = s.get("device")
        if device is not None and device not in dev_ids:
            raise UnresolvedReferenceError(f"workload {s.id}: unknown device {device!r}",
                                           s.line_of("device"))
        mask = None
        if "mask" in s.values:
            try:
                mask = WayMask.parse(s.get("mask"))
            except ConfigError as e:
                raise ScenarioSyntaxError(str(e), s.line_of("mask")) from None
        try:
            spec = WorkloadSpec(id=s.id, kind=kind, priority=s.get("priority", "high"),
                                cores=cores, device=device,
                                params=PARAM_TYPES[kind](**params), mask=mask,
                                active=_typed(s, "active", bool, True))
        except ConfigError as e:
            msg = str(e)
            key = next((k for k in list(PARAM_KEYS[kind]) + ["priority", "cores", "device"]
                        if k in msg and k in s.values), None)
            raise InvariantViolation(msg, s.line_of(key) if key else s.line) from None
        workloads.append(spec)
    wl_ids = {w.id: w for w in workloads}

    # events
    events = []
    ev_sec = single("events")
    for tick_text, action_text, n in ev_sec.events:
        try:
            tick = parse_int(tick_text)
        except ValueError:
            raise ScenarioSyntaxError(f"event tick must be an integer, got {tick_text!r}", n) from None
        words = action_text.split()
        if not words:
            raise ScenarioSyntaxError("empty event", n)
        action, args = words[0].lower(), tuple(words[1:])
        if action == "dca" and args and args[0] not in dev_ids:
            raise UnresolvedReferenceError(f"event dca: unknown device {args[0]!r}", n)
        if action in ("mask", "launch", "terminate", "reclassify", "set") and args \
                and args[0] not in wl_ids:
            raise UnresolvedReferenceError(f"event {action}: unknown workload {args[0]!r}", n)
        if action == "set" and len(args) == 3:
            ptypes = PARAM_KEYS[wl_ids[args[0]].kind]
            if args[1] not in ptypes:
                raise UnknownKeyError(f"event set: {args[1]!r} is not a parameter of "
                                      f"{wl_ids[args[0]].kind}", n)
            try:
                args = (args[0], args[1], coerce(ptypes[args[1]], args[2]))
            except ValueError as e:
                raise ScenarioSyntaxError(f"event set: {e}", n) from None
        events.append(Event(tick, action, args, n))

    costs = AccessCosts(
        mlc_hit=_or(sim_vals["cost_mlc_hit"], AccessCosts.mlc_hit),
        llc_hit=_or(sim_vals["cost_llc_hit"], AccessCosts.llc_hit),
        memory=_or(sim_vals["cost_memory"], AccessCosts.memory))
    scenario = Scenario(
        geometry=geometry,
        epochs_per_tick=_or(sim_vals["epochs_per_tick"], 100),
        total_ticks=_or(sim_vals["total_ticks"], 70),
        warmup_ticks=_or(sim_vals["warmup_ticks"], 10),
        summary_ticks=_or(sim_vals["summary_ticks"], 10),
        seed=_or(sim_vals["seed"], 0),
        devices=devices,
        workloads=workloads,
        thresholds=thresholds,
        controller_enabled=_or(sim_vals["controller"], True),
        migrate_non_io=_or(sim_vals["migrate_non_io"], True),
        dca_miss_metric=_or(sim_vals["dca_miss_metric"], "leak"),
        costs=costs,
        events=events,
    )
    try:
        scenario.validate()
    except ConfigError as e:
        raise InvariantViolation(str(e), _blame(str(e), sim, by_kind, ev_sec)) from None
    return scenario


def _or(v, default):
    return default if v is None else v


def _check_keys_one(section, key, n, lenient):
    msg = f"unknown key {key!r} in [{section.kind}]"
    if lenient:
        warnings.warn(f"line {n}: {msg}", ScenarioWarning, stacklevel=3)
    else:
        raise UnknownKeyError(msg, n)


def _blame(message, sim, by_kind, ev_sec):
    """Best-effort line number for a whole-scenario validation failure."""
    for key in ("warmup_ticks", "total_ticks", "epochs_per_tick", "summary_ticks",
                "dca_miss_metric"):
        if key in message:
            return sim.line_of(key)
    for s in by_kind.get("workload", []) + by_kind.get("device", []):
        if f" {s.id}" in message or f"{s.id!r}" in message:
            for key in ("cores", "device", "mask"):
                if key in message and key in s.values:
                    return s.line_of(key)
            return s.line
    if "event" in message:
        return ev_sec.line
    return sim.line or None


def dump_scenario(sc):
    """Canonical text for ``sc``; parsing it yields an equal Scenario."""
    g = sc.geometry
    out = ["[sim]"]
    out += [f"epochs_per_tick = {sc.epochs_per_tick}", f"total_ticks = {sc.total_ticks}",
            f"warmup_ticks = {sc.warmup_ticks}", f"summary_ticks = {sc.summary_ticks}",
            f"seed = {sc.seed}", f"controller = {format_value(sc.controller_enabled)}",
            f"migrate_non_io = {format_value(sc.migrate_non_io)}",
            f"dca_miss_metric = {sc.dca_miss_metric}",
            f"cost_mlc_hit = {sc.costs.mlc_hit!r}", f"cost_llc_hit = {sc.costs.llc_hit!r}",
            f"cost_memory = {sc.costs.memory!r}", ""]
    out += ["[llc]", f"sets = {g.llc_sets}", f"ways = {g.llc_ways}",
            f"dca_ways = {g.dca_way_count}", f"inclusive_ways = {g.inclusive_way_count}",
            f"line_bytes = {g.line_bytes}", ""]
    out += ["[mlc]", f"sets = {g.mlc_sets}", f"ways = {g.mlc_ways}", f"cores = {g.core_count}", ""]
    out.append("[thresholds]")
    for f in fields(Thresholds):
        out.append(f"{f.name} = {format_value(getattr(sc.thresholds, f.name))}")
    out.append("")
    for d in sc.devices:
        out += [f"[device {d.id}]", f"kind = {d.kind}", f"lines_per_epoch = {d.lines_per_epoch}",
                f"dca = {format_value(d.dca_enabled)}", ""]
    for w in sc.workloads:
        out += [f"[workload {w.id}]", f"kind = {w.kind}", f"priority = {w.priority}",
                f"cores = {format_cores(w.cores)}"]
        if w.device is not None:
            out.append(f"device = {w.device}")
        if w.mask is not None:
            out.append(f"mask = {w.mask}")
        out.append(f"active = {format_value(w.active)}")
        for f in fields(w.params):
            out.append(f"{f.name} = {format_value(getattr(w.params, f.name))}")
        out.append("")
    if sc.events:
        out.append("[events]")
        for ev in sc.events:
            args = " ".join(format_value(a) for a in ev.args)
            out.append(f"{ev.tick} = {ev.action} {args}".rstrip())
        out.append("")
    return "\n".join(out)
