"""Home topology: system -> subsystem (room) -> function module -> device.

A :class:`HomeConfig` is immutable once loaded.  ``load_config`` parses and
validates the JSON config document; ``dump_config`` is its inverse.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

from .energy import EnergyModel
from .grammar import DEFAULT_KEYWORD_CAPACITY, Vocabulary, VocabularyError
from .kws import AcousticModel

PROPAGATION = {"mesh-flood": "flooding", "mesh-routed": "routing", "local-wifi": "routing"}
# (per-hop latency ms, per-hop energy units); defaults, not measured values
TECH_DEFAULTS = {"mesh-flood": (30.0, 1.0), "mesh-routed": (15.0, 1.0), "local-wifi": (5.0, 2.0)}
APPROACHES = ("none", "coexist", "unified")
CONFLICT_STRATEGIES = ("last-writer-wins", "first-writer-wins", "reject-within-guard")


class ConfigError(ValueError):
    """Config document problem; ``path`` locates the offending field."""

    def __init__(self, message, path=""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ParseError(ConfigError):
    def __init__(self, message, line, column):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class ValidationError(ConfigError):
    def __init__(self, invariant, offender, path=""):
        self.invariant = invariant
        self.offender = offender
        super().__init__(f"{invariant}: {offender!r}", path)


class UnknownDeviceError(KeyError):
    def __init__(self, device_id):
        self.device_id = device_id
        super().__init__(f"unknown device id {device_id!r}")


class EmptyMatchError(LookupError):
    def __init__(self, selector, reason="unknown room"):
        self.selector = selector
        super().__init__(f"{reason}: {selector}")


@dataclass(frozen=True)
class LinkTech:
    name: str
    propagation: str
    latency_ms: float
    energy: float


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    tech: str
    latency_ms: float
    capacity_mps: float


@dataclass(frozen=True)
class ComponentSet:
    power: tuple = ("DC",)
    sensor_actuators: tuple = ()
    controller: bool = True
    processing_ms: float = 2.0
    microphone: bool = False
    speaker: bool = False
    indicator: bool = False
    iot_adapter: frozenset = frozenset()
    capacity_mps: float | None = None


@dataclass(frozen=True)
class KwsParams:
    approach: str = "none"
    T_ms: float = 10_000.0
    cont: bool = True
    accuracy: float | None = None  # None: preset from vocabulary size
    false_trigger_per_hour: float = 0.0
    feedback_ms: float = 200.0
    interchip_ms: float = 20.0
    indicator: bool = False


@dataclass(frozen=True)
class ActionSpec:
    attr: str
    value: str
    requires: tuple = ()  # ((attr, value), ...)


@dataclass(frozen=True)
class DeviceNode:
    id: str
    device_class: str
    categories: tuple = ()
    components: ComponentSet = ComponentSet()
    kws: KwsParams = KwsParams()
    position: tuple = (0.0, 0.0)
    vocabulary: str | None = None
    actions: dict = field(default_factory=dict)  # action id -> ActionSpec
    state: dict = field(default_factory=dict)  # attr -> initial value
    keyword_capacity: int = DEFAULT_KEYWORD_CAPACITY
    opposing: tuple = ()  # explicit ((a, b), ...); empty: derived from actions

    @property
    def link_techs(self) -> frozenset:
        return self.components.iot_adapter

    @property
    def has_kws(self) -> bool:
        return self.kws.approach != "none"

    def matches_class(self, cls: str | None) -> bool:
        return cls is None or cls == self.device_class or cls in self.categories

    def opposing_pairs(self) -> frozenset:
        """Pairs of actions that reverse each other on this device."""
        if self.opposing:
            return frozenset(frozenset(p) for p in self.opposing)
        pairs = set()
        names = sorted(self.actions)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                sa, sb = self.actions[a], self.actions[b]
                if sa.attr == sb.attr and sa.value != sb.value:
                    pairs.add(frozenset((a, b)))
        return frozenset(pairs)


@dataclass(frozen=True)
class FunctionModule:
    name: str
    devices: tuple = ()


@dataclass(frozen=True)
class Subsystem:
    name: str
    modules: tuple = ()

    @property
    def devices(self):
        return tuple(d for m in self.modules for d in m.devices)


@dataclass(frozen=True)
class MessagingParams:
    mode: str = "peer"
    broker: str | None = None
    deadline_ms: float = 1000.0
    max_retries: int = 2
    backoff_ms: float = 0.0
    backoff_factor: float = 2.0
    conflict_strategy: str = "reject-within-guard"
    guard_ms: float = 2000.0


@dataclass(frozen=True)
class NetworkParams:
    healing_delay_ms: float = 100.0
    buffer: int = 64
    capacity_mps: float = 100.0
    ttl: int | None = None  # None: diameter + 2
    bridge_cost: int = 1
    directed_flooding: bool = False


@dataclass(frozen=True)
class DeviceSelector:
    device_id: str | None = None
    room: str | None = None
    device_class: str | None = None
    action: str | None = None

    @classmethod
    def all(cls):
        return cls()

    def __str__(self):
        parts = [f"{k}={v}" for k, v in (("id", self.device_id), ("room", self.room),
                                          ("class", self.device_class), ("action", self.action)) if v]
        return "{" + (", ".join(parts) or "all") + "}"


@dataclass(frozen=True)
class HomeConfig:
    name: str
    seed: int = 0
    subsystems: tuple = ()
    links: tuple = ()
    gateways: tuple = ()
    link_techs: dict = field(default_factory=dict)
    vocabularies: dict = field(default_factory=dict)
    messaging: MessagingParams = MessagingParams()
    network: NetworkParams = NetworkParams()
    acoustic: AcousticModel = AcousticModel()
    energy: EnergyModel = EnergyModel()

    @cached_property
    def devices(self) -> tuple:
        return tuple(sorted((d for s in self.subsystems for d in s.devices), key=lambda d: d.id))

    @cached_property
    def device_index(self) -> dict:
        return {d.id: d for d in self.devices}

    @cached_property
    def room_index(self) -> dict:
        return {d.id: s.name for s in self.subsystems for d in s.devices}

    @cached_property
    def module_index(self) -> dict:
        return {d.id: m.name for s in self.subsystems for m in s.modules for d in m.devices}

    @property
    def room_names(self) -> tuple:
        return tuple(s.name for s in self.subsystems)

    def device(self, device_id: str) -> DeviceNode:
        try:
            return self.device_index[device_id]
        except KeyError:
            raise UnknownDeviceError(device_id) from None

    def vocabulary_of(self, d: DeviceNode) -> Vocabulary | None:
        return self.vocabularies.get(d.vocabulary) if d.vocabulary else None

    def node_capacity(self, device_id: str) -> float:
        d = self.device(device_id)
        if d.components.capacity_mps is not None:
            return d.components.capacity_mps
        caps = [ln.capacity_mps for ln in self.links if device_id in (ln.a, ln.b)]
        return min(caps) if caps else self.network.capacity_mps

    def broker_id(self) -> str | None:
        if self.messaging.broker:
            return self.messaging.broker
        return min(self.gateways) if self.gateways else None

    def room_centroid(self, room: str) -> tuple:
        for s in self.subsystems:
            if s.name == room:
                devs = s.devices
                if not devs:
                    return (0.0, 0.0)
                return (sum(d.position[0] for d in devs) / len(devs), sum(d.position[1] for d in devs) / len(devs))
        raise EmptyMatchError(DeviceSelector(room=room))


def select_devices(cfg: HomeConfig, selector: DeviceSelector) -> list[DeviceNode]:
    """Devices matching every set field of ``selector``, sorted by id."""
    if selector.device_id is not None:
        d = cfg.device(selector.device_id)
        candidates = [d]
    else:
        candidates = list(cfg.devices)
    if selector.room is not None:
        if selector.room not in cfg.room_names:
            raise EmptyMatchError(selector)
        candidates = [d for d in candidates if cfg.room_index[d.id] == selector.room]
    if selector.device_class is not None:
        candidates = [d for d in candidates if d.matches_class(selector.device_class)]
    if selector.action is not None:
        candidates = [d for d in candidates if selector.action in d.actions]
    return candidates


def room_of(cfg: HomeConfig, device_id: str) -> str:
    try:
        return cfg.room_index[device_id]
    except KeyError:
        raise UnknownDeviceError(device_id) from None


# -- parsing -----------------------------------------------------------------

TOP_KEYS = {"name", "seed", "subsystems", "links", "gateways", "link_techs", "vocabularies",
            "messaging", "network", "acoustic", "energy"}


def _keys(obj, allowed, path, required=()):
    if not isinstance(obj, dict):
        raise ConfigError("expected an object", path)
    for k in obj:
        if k not in allowed:
            raise ConfigError(f"unknown key {k!r}", path)
    for k in required:
        if k not in obj:
            raise ConfigError(f"missing key {k!r}", path)


def _num(obj, key, path, default, minimum=0.0):
    v = obj.get(key, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key} must be a number", path)
    if v < minimum:
        raise ConfigError(f"{key} must be >= {minimum}", path)
    return float(v)


def _bool(obj, key, path, default):
    v = obj.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError(f"{key} must be a boolean", path)
    return v


def _ident(v, path):
    if not isinstance(v, str) or not v:
        raise ConfigError("expected a non-empty identifier", path)
    return v


def _parse_kws(doc, path) -> KwsParams:
    if doc is None:
        return KwsParams()
    _keys(doc, {"approach", "T_ms", "cont", "accuracy", "false_trigger_per_hour", "feedback_ms",
                "interchip_ms", "indicator"}, path)
    approach = doc.get("approach", "unified")
    if approach not in APPROACHES:
        raise ConfigError(f"approach must be one of {APPROACHES}", path)
    acc = doc.get("accuracy", "preset")
    if acc == "preset":
        acc = None
    else:
        acc = _num(doc, "accuracy", path, None)
        if not 0.0 <= acc <= 1.0:
            raise ConfigError("accuracy must lie in [0, 1]", path)
    T = _num(doc, "T_ms", path, 10_000.0)
    if T <= 0:
        raise ConfigError("T_ms must be positive", path)
    return KwsParams(
        approach=approach,
        T_ms=T,
        cont=_bool(doc, "cont", path, True),
        accuracy=acc,
        false_trigger_per_hour=_num(doc, "false_trigger_per_hour", path, 0.0),
        feedback_ms=_num(doc, "feedback_ms", path, 200.0),
        interchip_ms=_num(doc, "interchip_ms", path, 20.0),
        indicator=_bool(doc, "indicator", path, False),
    )


def _parse_device(doc, path) -> DeviceNode:
    _keys(doc, {"id", "class", "categories", "position", "components", "kws", "vocabulary", "actions",
                "state", "keyword_capacity", "opposing"}, path, required=("id", "class"))
    did = _ident(doc["id"], f"{path}.id")
    kws = _parse_kws(doc.get("kws"), f"{path}.kws")
    comp = doc.get("components", {})
    cpath = f"{path}.components"
    _keys(comp, {"power", "sensor_actuators", "controller", "hmi", "iot_adapter", "capacity_mps"}, cpath)
    ctrl = comp.get("controller", {})
    _keys(ctrl, {"present", "processing_ms"}, f"{cpath}.controller")
    has_kws = kws.approach != "none"
    hmi = comp.get("hmi", {"microphone": has_kws, "speaker": has_kws})
    _keys(hmi, {"microphone", "speaker", "indicator"}, f"{cpath}.hmi")
    techs = comp.get("iot_adapter", [])
    if not isinstance(techs, list) or any(t not in PROPAGATION for t in techs):
        raise ConfigError(f"iot_adapter entries must be among {sorted(PROPAGATION)}", f"{cpath}.iot_adapter")
    components = ComponentSet(
        power=tuple(comp.get("power", ["DC"])),
        sensor_actuators=tuple(comp.get("sensor_actuators", [])),
        controller=_bool(ctrl, "present", f"{cpath}.controller", True),
        processing_ms=_num(ctrl, "processing_ms", f"{cpath}.controller", 2.0),
        microphone=_bool(hmi, "microphone", f"{cpath}.hmi", False),
        speaker=_bool(hmi, "speaker", f"{cpath}.hmi", False),
        indicator=_bool(hmi, "indicator", f"{cpath}.hmi", False),
        iot_adapter=frozenset(techs),
        capacity_mps=_num(comp, "capacity_mps", cpath, None),
    )
    actions = {}
    for name, spec in doc.get("actions", {}).items():
        apath = f"{path}.actions.{name}"
        _keys(spec, {"attr", "value", "requires"}, apath, required=("attr", "value"))
        req = spec.get("requires", {})
        _keys(req, set(req), apath)
        actions[name] = ActionSpec(spec["attr"], str(spec["value"]), tuple(sorted((k, str(v)) for k, v in req.items())))
    state = {k: str(v) for k, v in doc.get("state", {}).items()}
    for spec in actions.values():
        state.setdefault(spec.attr, "")
    pos = doc.get("position", [0.0, 0.0])
    if not (isinstance(pos, list) and len(pos) == 2 and all(isinstance(x, (int, float)) for x in pos)):
        raise ConfigError("position must be [x, y] in meters", f"{path}.position")
    cap = doc.get("keyword_capacity", DEFAULT_KEYWORD_CAPACITY)
    if not isinstance(cap, int) or cap <= 0:
        raise ConfigError("keyword_capacity must be a positive integer", f"{path}.keyword_capacity")
    opposing = tuple(tuple(sorted(p)) for p in doc.get("opposing", []))
    return DeviceNode(
        id=did,
        device_class=_ident(doc["class"], f"{path}.class"),
        categories=tuple(doc.get("categories", [])),
        components=components,
        kws=kws,
        position=(float(pos[0]), float(pos[1])),
        vocabulary=doc.get("vocabulary"),
        actions=actions,
        state=state,
        keyword_capacity=cap,
        opposing=opposing,
    )


def config_from_dict(doc: dict) -> HomeConfig:
    _keys(doc, TOP_KEYS, "", required=("name", "subsystems"))
    techs = {}
    raw_techs = doc.get("link_techs", {})
    _keys(raw_techs, set(PROPAGATION), "link_techs")
    for name, (lat, en) in TECH_DEFAULTS.items():
        t = raw_techs.get(name, {})
        tpath = f"link_techs.{name}"
        _keys(t, {"propagation", "latency_ms", "energy"}, tpath)
        prop = t.get("propagation", PROPAGATION[name])
        if prop != PROPAGATION[name]:
            raise ValidationError(f"{name} requires {PROPAGATION[name]} propagation", name, tpath)
        techs[name] = LinkTech(name, prop, _num(t, "latency_ms", tpath, lat), _num(t, "energy", tpath, en))

    vocabs = {}
    for vname, vdoc in doc.get("vocabularies", {}).items():
        try:
            vocabs[vname] = Vocabulary.from_dict(vname, vdoc)
        except VocabularyError as exc:
            raise ConfigError(str(exc), f"vocabularies.{vname}") from None

    net = doc.get("network", {})
    _keys(net, {"healing_delay_ms", "buffer", "capacity_mps", "ttl", "bridge_cost", "directed_flooding"}, "network")
    network = NetworkParams(
        healing_delay_ms=_num(net, "healing_delay_ms", "network", 100.0),
        buffer=int(_num(net, "buffer", "network", 64, minimum=1)),
        capacity_mps=_num(net, "capacity_mps", "network", 100.0),
        ttl=None if net.get("ttl") is None else int(_num(net, "ttl", "network", None)),
        bridge_cost=int(_num(net, "bridge_cost", "network", 1)),
        directed_flooding=_bool(net, "directed_flooding", "network", False),
    )

    msg = doc.get("messaging", {})
    _keys(msg, {"mode", "broker", "deadline_ms", "max_retries", "backoff_ms", "backoff_factor", "conflict"}, "messaging")
    conflict = msg.get("conflict", {})
    _keys(conflict, {"strategy", "guard_ms"}, "messaging.conflict")
    mode = msg.get("mode", "peer")
    if mode not in ("peer", "broker"):
        raise ConfigError("mode must be 'peer' or 'broker'", "messaging.mode")
    strategy = conflict.get("strategy", "reject-within-guard")
    if strategy not in CONFLICT_STRATEGIES:
        raise ConfigError(f"strategy must be one of {CONFLICT_STRATEGIES}", "messaging.conflict.strategy")
    messaging = MessagingParams(
        mode=mode,
        broker=msg.get("broker"),
        deadline_ms=_num(msg, "deadline_ms", "messaging", 1000.0),
        max_retries=int(_num(msg, "max_retries", "messaging", 2)),
        backoff_ms=_num(msg, "backoff_ms", "messaging", 0.0),
        backoff_factor=_num(msg, "backoff_factor", "messaging", 2.0),
        conflict_strategy=strategy,
        guard_ms=_num(conflict, "guard_ms", "messaging.conflict", 2000.0),
    )

    try:
        acoustic = AcousticModel.from_dict(doc.get("acoustic", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "acoustic") from None
    try:
        energy = EnergyModel.from_dict(doc.get("energy", {}), techs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "energy") from None

    subsystems = []
    for i, sdoc in enumerate(doc["subsystems"]):
        spath = f"subsystems[{i}]"
        _keys(sdoc, {"name", "modules"}, spath, required=("name",))
        modules = []
        for j, mdoc in enumerate(sdoc.get("modules", [])):
            mpath = f"{spath}.modules[{j}]"
            _keys(mdoc, {"name", "devices"}, mpath, required=("name",))
            devices = tuple(
                _parse_device(ddoc, f"{mpath}.devices[{k}]") for k, ddoc in enumerate(mdoc.get("devices", []))
            )
            modules.append(FunctionModule(_ident(mdoc["name"], f"{mpath}.name"), devices))
        subsystems.append(Subsystem(_ident(sdoc["name"], f"{spath}.name"), tuple(modules)))

    ids = set()
    for s in subsystems:
        for d in s.devices:
            ids.add(d.id)
    links = []
    for i, ldoc in enumerate(doc.get("links", [])):
        lpath = f"links[{i}]"
        _keys(ldoc, {"a", "b", "tech", "latency_ms", "capacity_mps"}, lpath, required=("a", "b", "tech"))
        tech = ldoc["tech"]
        if tech not in techs:
            raise ConfigError(f"unknown link tech {tech!r}", f"{lpath}.tech")
        links.append(Link(
            ldoc["a"], ldoc["b"], tech,
            _num(ldoc, "latency_ms", lpath, techs[tech].latency_ms),
            _num(ldoc, "capacity_mps", lpath, network.capacity_mps),
        ))

    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be an unsigned integer", "seed")
    cfg = HomeConfig(
        name=_ident(doc["name"], "name"),
        seed=seed,
        subsystems=tuple(subsystems),
        links=tuple(links),
        gateways=tuple(doc.get("gateways", [])),
        link_techs=techs,
        vocabularies=vocabs,
        messaging=messaging,
        network=network,
        acoustic=acoustic,
        energy=energy,
    )
    validate(cfg)
    return cfg


def validate(cfg: HomeConfig) -> None:
    """Check every structural invariant; raise ValidationError on the first."""
    rooms = set()
    seen = set()
    for i, s in enumerate(cfg.subsystems):
        if s.name in rooms:
            raise ValidationError("duplicate subsystem name", s.name, f"subsystems[{i}]")
        rooms.add(s.name)
        mods = set()
        for m in s.modules:
            if m.name in mods:
                raise ValidationError("duplicate module name in subsystem", f"{s.name}/{m.name}", f"subsystems[{i}]")
            mods.add(m.name)
            for d in m.devices:
                if d.id in seen:
                    raise ValidationError("duplicate device id", d.id)
                seen.add(d.id)
    for d in cfg.devices:
        c = d.components
        if not c.controller:
            raise ValidationError("controller must be present", d.id)
        if d.has_kws and not (c.microphone and c.speaker):
            raise ValidationError("KWS device needs microphone and speaker", d.id)
        if d.vocabulary is not None:
            v = cfg.vocabularies.get(d.vocabulary)
            if v is None:
                raise ValidationError("unknown vocabulary", d.vocabulary)
            if v.size > d.keyword_capacity:
                raise ValidationError(f"vocabulary size {v.size} exceeds keyword capacity {d.keyword_capacity}", d.id)
            for w in v.actions.values():
                if w.device_class is not None and d.matches_class(w.device_class) and w.action not in d.actions:
                    raise ValidationError(f"vocabulary action {w.action!r} targets this device but is not supported", d.id)
        elif d.has_kws:
            raise ValidationError("KWS device needs a vocabulary", d.id)
        for a, spec in d.actions.items():
            for attr, _ in spec.requires:
                if attr not in d.state:
                    raise ValidationError(f"action {a!r} requires unknown state attribute {attr!r}", d.id)
        for pair in d.opposing:
            if len(pair) != 2 or any(a not in d.actions for a in pair):
                raise ValidationError("opposing pairs must name two device actions", d.id)
    gateways = set(cfg.gateways)
    for g in cfg.gateways:
        if g not in cfg.device_index:
            raise ValidationError("unknown device id", g, "gateways")
        if len(cfg.device_index[g].link_techs) < 2:
            raise ValidationError("gateway must support at least two link technologies", g, "gateways")
    for i, ln in enumerate(cfg.links):
        for end in (ln.a, ln.b):
            if end not in cfg.device_index:
                raise ValidationError("unknown device id", end, f"links[{i}]")
            if end not in gateways and ln.tech not in cfg.device_index[end].link_techs:
                raise ValidationError(f"link tech {ln.tech!r} unsupported by endpoint", end, f"links[{i}]")
        if ln.a == ln.b:
            raise ValidationError("self-loop link", ln.a, f"links[{i}]")
        if not ln.capacity_mps > 0:
            raise ValidationError("link capacity must be positive", f"{ln.a}-{ln.b}", f"links[{i}]")
    linked = {e for ln in cfg.links for e in (ln.a, ln.b)}
    for d in cfg.devices:
        if d.id in linked and not d.link_techs:
            raise ValidationError("networked device needs an IoT adapter", d.id)
    b = cfg.messaging.broker
    if b is not None and b not in cfg.device_index:
        raise ValidationError("unknown device id", b, "messaging.broker")
    if cfg.messaging.mode == "broker" and cfg.broker_id() is None:
        raise ValidationError("broker mode needs a broker or a gateway", cfg.name, "messaging")


def load_config(text: str) -> HomeConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    return config_from_dict(doc)


def load_config_file(path) -> HomeConfig:
    with open(path, encoding="utf-8") as fh:
        return load_config(fh.read())


def _dump_device(d: DeviceNode) -> dict:
    c = d.components
    out = {
        "id": d.id,
        "class": d.device_class,
        "categories": list(d.categories),
        "position": list(d.position),
        "components": {
            "power": list(c.power),
            "sensor_actuators": list(c.sensor_actuators),
            "controller": {"present": c.controller, "processing_ms": c.processing_ms},
            "hmi": {"microphone": c.microphone, "speaker": c.speaker, "indicator": c.indicator},
            "iot_adapter": sorted(c.iot_adapter),
        },
        "kws": {
            "approach": d.kws.approach,
            "T_ms": d.kws.T_ms,
            "cont": d.kws.cont,
            "accuracy": "preset" if d.kws.accuracy is None else d.kws.accuracy,
            "false_trigger_per_hour": d.kws.false_trigger_per_hour,
            "feedback_ms": d.kws.feedback_ms,
            "interchip_ms": d.kws.interchip_ms,
            "indicator": d.kws.indicator,
        },
        "vocabulary": d.vocabulary,
        "actions": {
            a: {"attr": s.attr, "value": s.value, "requires": dict(s.requires)} for a, s in sorted(d.actions.items())
        },
        "state": dict(sorted(d.state.items())),
        "keyword_capacity": d.keyword_capacity,
        "opposing": [list(p) for p in d.opposing],
    }
    if c.capacity_mps is not None:
        out["components"]["capacity_mps"] = c.capacity_mps
    return out


def config_to_dict(cfg: HomeConfig) -> dict:
    m, n = cfg.messaging, cfg.network
    return {
        "name": cfg.name,
        "seed": cfg.seed,
        "link_techs": {
            t.name: {"propagation": t.propagation, "latency_ms": t.latency_ms, "energy": t.energy}
            for t in cfg.link_techs.values()
        },
        "vocabularies": {k: v.to_dict() for k, v in sorted(cfg.vocabularies.items())},
        "subsystems": [
            {"name": s.name, "modules": [
                {"name": mod.name, "devices": [_dump_device(d) for d in mod.devices]} for mod in s.modules
            ]}
            for s in cfg.subsystems
        ],
        "links": [
            {"a": ln.a, "b": ln.b, "tech": ln.tech, "latency_ms": ln.latency_ms, "capacity_mps": ln.capacity_mps}
            for ln in cfg.links
        ],
        "gateways": list(cfg.gateways),
        "messaging": {
            "mode": m.mode, "broker": m.broker, "deadline_ms": m.deadline_ms, "max_retries": m.max_retries,
            "backoff_ms": m.backoff_ms, "backoff_factor": m.backoff_factor,
            "conflict": {"strategy": m.conflict_strategy, "guard_ms": m.guard_ms},
        },
        "network": {
            "healing_delay_ms": n.healing_delay_ms, "buffer": n.buffer, "capacity_mps": n.capacity_mps,
            "ttl": n.ttl, "bridge_cost": n.bridge_cost, "directed_flooding": n.directed_flooding,
        },
        "acoustic": cfg.acoustic.to_dict(),
        "energy": cfg.energy.to_dict(),
    }


def dump_config(cfg: HomeConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2)


def with_overrides(cfg: HomeConfig, **changes) -> HomeConfig:
    """Re-validated copy of ``cfg`` with top-level sections replaced."""
    from dataclasses import replace

    new = replace(cfg, **changes)
    validate(new)
    return new
