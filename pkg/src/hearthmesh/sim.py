"""Deterministic discrete-event simulation of a voice-controlled home.

Virtual time is in milliseconds.  Events are ordered by (time, class,
sequence); scenario directives sort after internal events at the same
instant, so a directive injected interactively at the current time behaves
exactly like the same directive scripted in advance.

Randomness comes from seeded streams: one main stream (one hearing draw per
KWS device, in id order, for every utterance), one for background load
phases, and one per device for false wake triggers.
"""
from __future__ import annotations

import csv
import hashlib
import heapq
import io
import itertools
import json
import logging
import math
import random
from dataclasses import dataclass, field, replace

import numpy as np

from .energy import energy_account
from .grammar import Utterance, parse_utterance
from .home import ConfigError, HomeConfig, config_from_dict, config_to_dict
from .kws import (Appliance, ApplianceNotify, KwsUnit, NotifyAppliance, PlayResponse, SpottedCommand,
                  SpottedWake, Tick, hear_check, kws_step)
from .mesh import DeliveryFailure, LinkGraph, NodeLeft, NodeUp, load_arrivals, rebuild_routes, transmit
from .messaging import (ActionRecord, BrokerUnavailable, ConflictPolicy, InteractionKind, NoTargetError, Publish,
                        Relay, Request, Response, apply_decision, broker_relay, build_endpoints, dispatch_broker,
                        dispatch_peer, on_response, on_timeout, resend, resolve_conflict, resolve_intent, serve)

log = logging.getLogger("hearthmesh")

TICK_MS = 10.0
DEFAULT_INTENSITY = 65.0
REPORT_SCHEMA = "hearthmesh.report/1"
CSV_COLUMNS = (
    "id", "at_ms", "speaker", "listener", "kind", "action", "device_class", "room", "targets", "outcome",
    "latency_ms", "cloud_latency_ms", "hop_count", "sent", "delivered", "dropped", "expired", "partitioned",
    "voice_response", "response_at_ms",
)
BROKER_ALIAS = "@broker"


class ScenarioError(ConfigError):
    pass


# -- scenarios ----------------------------------------------------------------------

@dataclass(frozen=True)
class Say:
    speaker: str
    text: str
    position: tuple | None = None
    intensity: float = DEFAULT_INTENSITY
    room: str | None = None


@dataclass(frozen=True)
class Fault:
    node: str
    state: str  # down | up


@dataclass(frozen=True)
class Load:
    node: str
    offered_mps: float
    duration_ms: float
    arrivals: str = "deterministic"


@dataclass(frozen=True)
class Directive:
    at_ms: float
    action: object  # Say | Fault | Load


@dataclass(frozen=True)
class Scenario:
    directives: tuple = ()
    horizon_ms: float | None = None

    @classmethod
    def from_doc(cls, doc) -> "Scenario":
        horizon = None
        items = doc
        if isinstance(doc, dict):
            unknown = set(doc) - {"horizon_ms", "directives"}
            if unknown:
                raise ScenarioError(f"unknown key {sorted(unknown)[0]!r}")
            horizon = doc.get("horizon_ms")
            if horizon is not None and (isinstance(horizon, bool) or not isinstance(horizon, (int, float)) or horizon < 0):
                raise ScenarioError("horizon_ms must be a non-negative number", "horizon_ms")
            items = doc.get("directives", [])
        if not isinstance(items, list):
            raise ScenarioError("scenario must be a list of directives or an object with 'directives'")
        return cls(tuple(_parse_directive(d, f"directives[{i}]") for i, d in enumerate(items)),
                   None if horizon is None else float(horizon))

    def to_doc(self) -> dict:
        out = []
        for d in self.directives:
            a = d.action
            if isinstance(a, Say):
                body = {"speaker": a.speaker, "text": a.text, "intensity": a.intensity}
                if a.position is not None:
                    body["position"] = list(a.position)
                if a.room is not None:
                    body["room"] = a.room
                out.append({"at_ms": d.at_ms, "say": body})
            elif isinstance(a, Fault):
                out.append({"at_ms": d.at_ms, "fault": {"node": a.node, "state": a.state}})
            else:
                out.append({"at_ms": d.at_ms, "load": {"node": a.node, "offered_mps": a.offered_mps,
                                                       "duration_ms": a.duration_ms, "arrivals": a.arrivals}})
        return {"horizon_ms": self.horizon_ms, "directives": out}


def _number(v, path, minimum=0.0, strict=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or v < minimum or (strict and v <= minimum):
        raise ScenarioError(f"expected a number {'>' if strict else '>='} {minimum:g}", path)
    return float(v)


def _parse_directive(doc, path) -> Directive:
    if not isinstance(doc, dict):
        raise ScenarioError("directive must be an object", path)
    kinds = [k for k in ("say", "fault", "load") if k in doc]
    unknown = set(doc) - {"at_ms", "say", "fault", "load"}
    if unknown:
        raise ScenarioError(f"unknown key {sorted(unknown)[0]!r}", path)
    if len(kinds) != 1:
        raise ScenarioError("directive needs exactly one of say, fault, load", path)
    at = _number(doc.get("at_ms", 0), f"{path}.at_ms")
    kind = kinds[0]
    body = doc[kind]
    bpath = f"{path}.{kind}"
    if not isinstance(body, dict):
        raise ScenarioError("expected an object", bpath)
    if kind == "say":
        unknown = set(body) - {"speaker", "text", "position", "intensity", "room"}
        if unknown:
            raise ScenarioError(f"unknown key {sorted(unknown)[0]!r}", bpath)
        text = body.get("text")
        if not isinstance(text, str) or not text.strip():
            raise ScenarioError("text must be a non-empty string", f"{bpath}.text")
        pos = body.get("position")
        if pos is not None:
            if not (isinstance(pos, list) and len(pos) == 2 and all(
                    isinstance(x, (int, float)) and not isinstance(x, bool) for x in pos)):
                raise ScenarioError("position must be [x, y]", f"{bpath}.position")
            pos = (float(pos[0]), float(pos[1]))
        room = body.get("room")
        if pos is None and room is None:
            raise ScenarioError("say needs a position or a room", bpath)
        return Directive(at, Say(str(body.get("speaker", "user")), text, pos,
                                 _number(body.get("intensity", DEFAULT_INTENSITY), f"{bpath}.intensity", strict=True),
                                 room))
    if kind == "fault":
        unknown = set(body) - {"node", "state"}
        if unknown:
            raise ScenarioError(f"unknown key {sorted(unknown)[0]!r}", bpath)
        state = body.get("state", "down")
        if state not in ("down", "up"):
            raise ScenarioError("state must be 'down' or 'up'", f"{bpath}.state")
        if not isinstance(body.get("node"), str):
            raise ScenarioError("node must be a device id", f"{bpath}.node")
        return Directive(at, Fault(body["node"], state))
    unknown = set(body) - {"node", "offered_mps", "duration_ms", "arrivals"}
    if unknown:
        raise ScenarioError(f"unknown key {sorted(unknown)[0]!r}", bpath)
    if not isinstance(body.get("node"), str):
        raise ScenarioError("node must be a device id", f"{bpath}.node")
    arrivals = body.get("arrivals", "deterministic")
    if arrivals not in ("deterministic", "poisson"):
        raise ScenarioError("arrivals must be 'deterministic' or 'poisson'", f"{bpath}.arrivals")
    return Directive(at, Load(body["node"], _number(body.get("offered_mps"), f"{bpath}.offered_mps"),
                              _number(body.get("duration_ms"), f"{bpath}.duration_ms", strict=True), arrivals))


def load_scenario(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        from .home import ParseError
        raise ParseError(exc.msg, exc.lineno, exc.colno) from None
    return Scenario.from_doc(doc)


def load_scenario_file(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return load_scenario(fh.read())


def resolve_node(cfg: HomeConfig, node: str) -> str:
    if node == BROKER_ALIAS:
        b = cfg.broker_id()
        if b is None:
            raise ScenarioError("home has no broker for '@broker'")
        return b
    return node


def validate_scenario(cfg: HomeConfig, sc: Scenario) -> None:
    """Raise ScenarioError if a directive names an unknown device or room."""
    for i, d in enumerate(sc.directives):
        a = d.action
        path = f"directives[{i}]"
        if isinstance(a, Say):
            if a.room is not None and a.room not in cfg.room_names:
                raise ScenarioError(f"unknown room {a.room!r}", f"{path}.say.room")
        else:
            key = "fault" if isinstance(a, Fault) else "load"
            node = resolve_node(cfg, a.node)
            if node not in cfg.device_index:
                raise ScenarioError(f"unknown device id {a.node!r}", f"{path}.{key}.node")


@dataclass(frozen=True)
class NodeDownAt:
    node: str
    at_ms: float


@dataclass(frozen=True)
class NodeUpAt:
    node: str
    at_ms: float


def inject_fault(sc: Scenario, edit) -> Scenario:
    """Scenario with a node-down or node-up directive added in time order."""
    state = "down" if isinstance(edit, NodeDownAt) else "up"
    new = Directive(float(edit.at_ms), Fault(edit.node, state))
    items = list(sc.directives)
    k = sum(1 for d in items if d.at_ms <= new.at_ms)
    items.insert(k, new)
    return replace(sc, directives=tuple(items))


# -- reports -----------------------------------------------------------------------

def _r(x):
    return None if x is None else round(float(x), 6)


@dataclass
class MetricsReport:
    data: dict

    @property
    def interactions(self) -> list:
        return self.data["interactions"]

    @property
    def aggregates(self) -> dict:
        return self.data["aggregates"]

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        return interactions_csv(self.interactions)


def interactions_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for it in rows:
        intent = it.get("intent") or {}
        msgs = it["messages"]
        vr = it.get("voice_response") or {}
        w.writerow([
            it["id"], it["at_ms"], it["speaker"], it["listener"] or "", it["kind"] or "",
            intent.get("action") or "", intent.get("device_class") or "", intent.get("room") or "",
            ";".join(it["targets"]), it["outcome"], "" if it["latency_ms"] is None else it["latency_ms"],
            "" if it["cloud_latency_ms"] is None else it["cloud_latency_ms"], it["hop_count"],
            msgs["sent"], msgs["delivered"], msgs["dropped"], msgs["expired"], msgs["partitioned"],
            vr.get("kind", ""), vr.get("at_ms", ""),
        ])
    return buf.getvalue()


def trace_ndjson(trace) -> str:
    return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in trace)


def _percentile(values, q):
    return _r(np.percentile(np.asarray(values, dtype=float), q)) if values else None


# -- the engine ---------------------------------------------------------------------

@dataclass(order=True)
class SimEvent:
    time: float
    klass: int  # 0 internal, 1 scenario directive
    seq: int
    kind: str = field(compare=False)
    data: dict = field(compare=False, default_factory=dict)


@dataclass
class _Interaction:
    iid: int
    at_ms: float
    speaker: str
    text: str
    listener: str | None = None
    kind: str | None = None
    intent: object = None
    targets: tuple = ()
    outcome: str = "pending"
    reason: str | None = None
    latency_ms: float | None = None
    response: dict | None = None
    target_results: dict = field(default_factory=dict)
    target_hops: dict = field(default_factory=dict)
    delivered_targets: set = field(default_factory=set)
    heard_by: tuple = ()
    suppressed_listeners: tuple = ()
    msg_ids: list = field(default_factory=list)
    done: bool = False


class Simulation:
    """One run of a home; usable step by step (REPL) or to completion."""

    def __init__(self, cfg: HomeConfig, seed: int | None = None, horizon_ms: float | None = None):
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else int(seed)
        self.horizon = horizon_ms
        self.rng = random.Random(self.seed)
        self._load_rng = random.Random(f"load:{self.seed}")
        self.graph = LinkGraph.from_config(cfg)
        self.now = 0.0
        self._queue: list = []
        self._seq = itertools.count()
        self.trace: list = []
        self.listeners = [d for d in cfg.devices if d.has_kws and d.components.microphone]
        self.units = {d.id: KwsUnit.from_device(d, cfg.vocabulary_of(d)) for d in self.listeners}
        self._ticked = {d.id: 0.0 for d in self.listeners}
        self.appliances = {d.id: Appliance(d) for d in cfg.devices}
        self.history = {d.id: [] for d in cfg.devices}
        self.policy = ConflictPolicy.from_params(cfg.messaging)
        self.endpoints = build_endpoints(cfg, net=self)
        self.interactions: list[_Interaction] = []
        self._corr_iid: dict = {}
        self._pub_hops: dict = {}
        self.messages: list = []  # (iid, NetMessage, destination)
        self.voice: list = []
        self._new_done: list = []
        self._last_activity = 0.0
        self._finished = None
        self._log("run-start", nodes=len(cfg.devices), kws_nodes=len(self.listeners), seed=self.seed)
        if horizon_ms is not None:
            self._ft_rng = {}
            for d in self.listeners:
                if self.units[d.id].false_trigger_per_hour > 0:
                    self._ft_rng[d.id] = random.Random(f"false-trigger:{self.seed}:{d.id}")
                    self._schedule_false_trigger(d.id, 0.0)

    # -- bookkeeping --------------------------------------------------------

    def _log(self, kind, **rec):
        rec["kind"] = kind
        rec.setdefault("t", _r(self.now))
        self.trace.append(rec)
        log.debug("%s", rec)

    def _push(self, t, kind, klass=0, **data):
        if t < self.now - 1e-9:
            raise RuntimeError(f"event {kind} scheduled in the past ({t} < {self.now})")
        heapq.heappush(self._queue, SimEvent(float(t), klass, next(self._seq), kind, data))

    def schedule(self, directive: Directive):
        a = directive.action
        if isinstance(a, Say):
            self._push(directive.at_ms, "utterance", 1, say=a)
        elif isinstance(a, Fault):
            self._push(directive.at_ms, "fault", 1, node=resolve_node(self.cfg, a.node), state=a.state)
        else:
            self._push(directive.at_ms, "load", 1, load=replace(a, node=resolve_node(self.cfg, a.node)))

    def load_scenario(self, sc: Scenario):
        validate_scenario(self.cfg, sc)
        for d in sorted(sc.directives, key=lambda d: d.at_ms):
            self.schedule(d)

    def say(self, text, *, position=None, room=None, intensity=DEFAULT_INTENSITY, speaker="user", at_ms=None):
        """Inject an utterance (default: at the current virtual time)."""
        d = Directive(self.now if at_ms is None else at_ms, Say(speaker, text, position, intensity, room))
        validate_scenario(self.cfg, Scenario((d,)))
        self.schedule(d)

    # -- transport used by the messaging layer ----------------------------------

    def is_up(self, node: str) -> bool:
        return self.graph.is_up(node)

    def send(self, src, dst, payload, now):
        iid = self._corr_iid.get(payload.corr)
        m = self.graph.new_message("unicast", src, target=dst, payload=payload)
        if src == dst:
            m.outcomes[dst] = "delivered"
            m.trace.append((src, now))
            self._push(now, "net-arrival", msg=m, local=True)
            return m
        try:
            m = transmit(self.graph, m, now, self.cfg.device_index)
        except DeliveryFailure:
            pass
        for node, tech, at in m.tx:
            self._log("tx", node=node, tech=tech, at=_r(at), msg=m.msg_id)
        outcome = m.outcomes[dst]
        self._log("net-send", msg=m.msg_id, src=src, dst=dst, payload=type(payload).__name__, outcome=outcome,
                  at=_r(now), interaction=iid)
        self.messages.append((iid, m, dst))
        if iid is not None:
            self.interactions[iid].msg_ids.append(m.msg_id)
        if outcome == "delivered":
            self._push(m.arrival, "net-arrival", msg=m, local=False)
        return m

    # -- KWS helpers ------------------------------------------------------------

    def _ticks(self, dev, t):
        return math.floor(t / TICK_MS + 1e-9) - math.floor(self._ticked[dev] / TICK_MS + 1e-9)

    def _advance(self, dev, t):
        """Apply the 10 ms countdown ticks that elapsed up to ``t``."""
        n = self._ticks(dev, t)
        if n > 0:
            kws_step(self.units[dev], Tick(n * TICK_MS))
            self._ticked[dev] = t

    def _awake_at(self, dev, t) -> bool:
        w = self.units[dev].wake
        return w.t_ms - max(0, self._ticks(dev, t)) * TICK_MS > 0

    def _schedule_false_trigger(self, dev, after):
        rate = self.units[dev].false_trigger_per_hour / 3_600_000.0
        t = after + self._ft_rng[dev].expovariate(rate)
        if t <= self.horizon:
            self._push(t, "false-trigger", dev=dev)

    # -- run loop -------------------------------------------------------------------

    def step(self) -> bool:
        if not self._queue:
            return False
        if self.horizon is not None and self._queue[0].time > self.horizon:
            return False
        ev = heapq.heappop(self._queue)
        self.now = ev.time
        if ev.kind not in ("fault", "heal", "false-trigger"):
            self._last_activity = ev.time
        getattr(self, "_on_" + ev.kind.replace("-", "_"))(**ev.data)
        return True

    def run_until(self, t: float | None = None):
        while self._queue and (t is None or self._queue[0].time <= t):
            if not self.step():
                break

    def run_until_quiet(self) -> list:
        """Process every pending event; returns records finalized meanwhile."""
        self.run_until(None)
        done, self._new_done = self._new_done, []
        return [self.interaction_record(it) for it in done]

    def advance_to(self, t: float):
        self.run_until(t)
        self.now = max(self.now, t)

    # -- event handlers ----------------------------------------------------------------

    def _on_utterance(self, say: Say):
        pos = say.position if say.position is not None else self.cfg.room_centroid(say.room)
        u = Utterance(say.speaker, say.text, pos, say.intensity, self.now)
        it = _Interaction(len(self.interactions), self.now, say.speaker, say.text)
        self.interactions.append(it)
        self._log("utterance", interaction=it.iid, speaker=say.speaker, text=say.text,
                  position=[_r(pos[0]), _r(pos[1])], intensity=_r(say.intensity))
        candidates = []
        heard = []
        asleep = False
        for d in self.listeners:
            unit = self.units[d.id]
            h = hear_check(self.cfg.acoustic, u, d, self.rng, accuracy=unit.accuracy)
            if not (h.heard and self.graph.is_up(d.id)):
                continue
            heard.append(d.id)
            parsed = parse_utterance(self.cfg.vocabulary_of(d), u)
            if parsed.kind == "unrecognized":
                continue
            t_det = self.now + h.delay_ms
            if parsed.woke or self._awake_at(d.id, t_det):
                candidates.append((-h.received, d.id, h, parsed))
            else:
                asleep = True
        it.heard_by = tuple(heard)
        if not heard:
            self._finish(it, "unheard")
            return
        if not candidates:
            # a command outside every wake window is ignored, not misheard
            self._finish(it, "ignored" if asleep else "unrecognized")
            return
        candidates.sort(key=lambda c: (c[0], c[1]))
        _, dev, h, parsed = candidates[0]
        it.listener = dev
        it.suppressed_listeners = tuple(c[1] for c in candidates[1:])
        for other in it.suppressed_listeners:
            self._log("listener-suppressed", interaction=it.iid, device=other, winner=dev)
        self._push(self.now + h.delay_ms, "detect", iid=it.iid, dev=dev, parsed=parsed)

    def _on_detect(self, iid, dev, parsed):
        it = self.interactions[iid]
        unit = self.units[dev]
        self._advance(dev, self.now)
        if parsed.woke:
            self._apply_kws_effects(dev, kws_step(unit, SpottedWake()), iid if parsed.kind == "wake" else None)
            self._log("wake", device=dev, interaction=iid)
        if parsed.kind != "intent":
            return
        effects = kws_step(unit, SpottedCommand(parsed.intent))
        if not effects:
            self._log("command-ignored", device=dev, interaction=iid)
            self._finish(it, "ignored")
            return
        it.intent = parsed.intent.with_(at_ms=it.at_ms, origin=dev)
        self._log("command", device=dev, interaction=iid, action=parsed.intent.action)
        for eff in effects:
            self._push(self.now + eff.delay_ms, "chip", iid=iid)

    def _apply_kws_effects(self, dev, effects, iid):
        for eff in effects:
            if isinstance(eff, PlayResponse):
                self._push(self.now + eff.delay_ms, "response-play", dev=dev, response=eff.kind, iid=iid)
            elif isinstance(eff, NotifyAppliance) and eff.payload == "wake":
                if self.cfg.device(dev).kws.indicator:
                    self._push(self.now + eff.delay_ms, "indicator", dev=dev)

    def _on_indicator(self, dev):
        self._log("indicator", device=dev)

    def _on_false_trigger(self, dev):
        if self.graph.is_up(dev):
            self._advance(dev, self.now)
            self._log("false-wake", device=dev)
            self._apply_kws_effects(dev, kws_step(self.units[dev], SpottedWake()), None)
        self._schedule_false_trigger(dev, self.now)

    def _on_chip(self, iid):
        """Appliance controller of the listener receives the intent."""
        it = self.interactions[iid]
        try:
            r = resolve_intent(self.cfg, it.listener, it.intent)
        except NoTargetError as exc:
            self._log("no-target", interaction=iid, reason=str(exc))
            it.intent = exc.intent
            self._complete(it, False, "no-target")
            return
        it.kind = r.kind.value
        it.intent = r.intent
        it.targets = r.targets
        self._log("resolved", interaction=iid, interaction_kind=it.kind, targets=list(r.targets),
                  room=r.intent.room)
        if r.kind == InteractionKind.DIRECT:
            ok, reason = self._execute(it.listener, r.intent.action, self.now, it.listener)
            it.target_results[it.listener] = (ok, reason)
            it.delivered_targets.add(it.listener)
            self._complete(it, ok, None if ok else reason)
            return
        ep = self.endpoints[it.listener]
        corr = ep.next_corr()
        self._corr_iid[corr] = iid
        try:
            if ep.mode == "peer":
                disp = dispatch_peer(ep, r, self.now, corr)
            else:
                disp = dispatch_broker(ep, r, self.now, self.endpoints[ep.broker].directory, corr)
        except BrokerUnavailable:
            self._log("dispatch-failure", interaction=iid, broker=ep.broker)
            self._complete(it, False, "broker-unavailable", outcome="dispatch-failure")
            return
        rs = disp.expected
        for target, deadline in sorted(rs.expected.items()):
            self._push(deadline, "timeout", corr=rs.corr, target=target, listener=it.listener)
        for target in disp.local:
            ok, reason = self._execute(target, rs.action, self.now, it.listener)
            it.target_results[target] = (ok, reason)
            it.delivered_targets.add(target)
        if disp.local_publish is not None:
            broker_relay(ep, disp.local_publish, self.now)
        if rs.complete:
            ep.pending.pop(rs.corr, None)
            self._complete_set(it, rs)

    def _execute(self, dev, action, t, origin):
        app = self.appliances[dev]
        if not app.is_valid(action):
            self._log("invalid-action", device=dev, action=action)
            return False, "invalid-action"
        rec = ActionRecord(action, t, origin=origin)
        hist = self.history[dev]
        d = resolve_conflict(self.policy, self.cfg.device(dev), rec, hist)
        for k in d.superseded:
            self._log("superseded", device=dev, action=hist[k].action, at=_r(hist[k].at_ms))
        apply_decision(hist, rec, d)
        if not d.execute:
            self._log("conflict-suppressed", device=dev, action=action, reason=d.reason)
            return False, "conflict-suppressed"
        app.apply(action)
        self._log("perform", device=dev, action=action, state=dict(sorted(app.state.items())))
        return True, None

    def _on_net_arrival(self, msg, local):
        node = msg.target
        if not self.graph.is_up(node):
            msg.outcomes[node] = "dropped"
            self._log("net-drop", msg=msg.msg_id, node=node)
            return
        p = msg.payload
        ep = self.endpoints[node]
        proc = self.cfg.device(node).components.processing_ms
        if not local:
            self._log("net-arrival", msg=msg.msg_id, node=node, hops=msg.hops)
        if isinstance(p, (Request, Relay)):
            iid = self._corr_iid.get(p.corr)
            if iid is not None:
                it = self.interactions[iid]
                it.delivered_targets.add(node)
                hops = msg.hops + (self._pub_hops.get(p.corr, 0) if isinstance(p, Relay) else 0)
                it.target_hops.setdefault(node, hops)
            t = self.now + proc
            resp = serve(ep, p, t, lambda action: self._execute(node, action, t, p.listener))
            self.send(node, resp.via or resp.listener, resp, t)
        elif isinstance(p, Publish):
            self._pub_hops.setdefault(p.corr, msg.hops)
            broker_relay(ep, p, self.now + proc)
        elif isinstance(p, Response):
            if p.listener != node:
                self.send(node, p.listener, replace(p, via=None), self.now + proc)
                return
            rs = on_response(ep, p, self.now)
            iid = self._corr_iid.get(p.corr)
            if rs is not None and iid is not None:
                self._complete_set(self.interactions[iid], rs)

    def _on_timeout(self, corr, target, listener):
        ep = self.endpoints[listener]
        res = on_timeout(ep, corr, target, self.now)
        if res is None:
            return
        iid = self._corr_iid.get(corr)
        self._log("timeout", corr=corr, target=target, interaction=iid)
        if res[0] == "retry":
            self._push(res[1], "retry", corr=corr, target=target, listener=listener)
        elif res[0] == "done" and iid is not None:
            self._complete_set(self.interactions[iid], res[1])

    def _on_retry(self, corr, target, listener):
        ep = self.endpoints[listener]
        self._log("retry", corr=corr, target=target, interaction=self._corr_iid.get(corr))
        m = resend(ep, corr, target, self.now)
        if m is None:
            return
        if isinstance(m, Publish):
            broker_relay(ep, m, self.now)
        self._push(ep.pending[corr].expected[target], "timeout", corr=corr, target=target, listener=listener)

    def _complete_set(self, it, rs):
        for t, res in rs.results.items():
            it.target_results[t] = res
        ok = all(ok for ok, _ in it.target_results.values())
        outcome = "success" if ok else ("timeout" if rs.outcome() == "timeout" else "failure")
        reasons = sorted({r for good, r in it.target_results.values() if not good and r})
        self._complete(it, ok, ",".join(reasons) or None, outcome=outcome)

    def _complete(self, it, ok, reason, outcome=None):
        """Appliance side is done: report back to the KWS unit."""
        it.outcome = outcome or ("success" if ok else "failure")
        it.reason = reason
        ic = self.units[it.listener].link_ms
        self._push(self.now + ic, "chip-back", iid=it.iid, ok=ok, reason=reason)

    def _on_chip_back(self, iid, ok, reason):
        it = self.interactions[iid]
        self._apply_kws_effects(it.listener, kws_step(self.units[it.listener], ApplianceNotify(ok, reason)), iid)

    def _on_response_play(self, dev, response, iid):
        kind = response
        fb = self.units[dev].feedback_ms
        rec = {"t": _r(self.now), "device": dev, "kind": kind, "feedback_ms": _r(fb), "interaction": iid}
        self.voice.append(rec)
        self._log("voice-response", device=dev, response=kind, feedback_ms=_r(fb), interaction=iid)
        if iid is None:
            return
        it = self.interactions[iid]
        if it.done:
            return
        it.response = {"kind": kind, "at_ms": _r(self.now), "feedback_ms": _r(fb)}
        it.latency_ms = self.now - it.at_ms
        if kind == "wake":
            it.outcome = "wake"
        self._finish(it, it.outcome)

    def _finish(self, it, outcome):
        it.outcome = outcome
        it.done = True
        self._new_done.append(it)
        priced = it.kind is not None
        self._log("interaction", interaction=it.iid, outcome=outcome, priced=priced, interaction_kind=it.kind)

    def _on_fault(self, node, state):
        if state == "down":
            self.graph._down.add(node)
        else:
            self.graph._down.discard(node)
        self._log("fault", node=node, state=state)
        self._push(self.now + self.graph.healing_delay_ms, "heal", node=node)

    def _on_heal(self, node):
        change = NodeUp(node) if self.graph.is_up(node) else NodeLeft(node)
        rebuild_routes(self.graph, change)
        self._log("heal", node=node, state="up" if self.graph.is_up(node) else "down")

    def _on_load(self, load: Load):
        times = load_arrivals(load.offered_mps, load.duration_ms, self.now, self._load_rng.getrandbits(32),
                              load.arrivals)
        self.graph.add_background(load.node, times, [f"load:{load.node}:{self.now:g}:{k}" for k in range(len(times))])
        self._load_end = max(getattr(self, "_load_end", 0.0), self.now + load.duration_ms)
        self._log("load", node=load.node, offered_mps=_r(load.offered_mps), duration_ms=_r(load.duration_ms),
                  arrivals=len(times))

    # -- results ---------------------------------------------------------------------

    def finish(self) -> float:
        """Close the run; returns the end time used for energy integrals."""
        if self._finished is None:
            end = self.horizon if self.horizon is not None else self._last_activity
            self.now = max(self.now, end)
            self.graph.settle(max(end, getattr(self, "_load_end", end)))
            for it in self.interactions:
                if not it.done:
                    it.outcome = "incomplete"
            self._log("run-end", t=_r(end))
            self._finished = end
        return self._finished

    def _message_counts(self, it) -> dict:
        counts = {"sent": 0, "delivered": 0, "dropped": 0, "expired": 0, "partitioned": 0}
        ids = set(it.msg_ids)
        for iid, m, dst in self.messages:
            if iid == it.iid and m.msg_id in ids:
                counts["sent"] += 1
                counts[m.outcomes[dst]] += 1
        return counts

    def interaction_record(self, it) -> dict:
        intent = None
        if it.intent is not None:
            intent = {"action": it.intent.action, "device_class": it.intent.device_class, "room": it.intent.room}
        cloud = None
        if it.kind is not None and it.latency_ms is not None:
            cloud = it.latency_ms + self.cfg.energy.cloud_round_trip_ms
        hop = max(it.target_hops.values(), default=0)
        return {
            "id": it.iid,
            "at_ms": _r(it.at_ms),
            "speaker": it.speaker,
            "text": it.text,
            "listener": it.listener,
            "heard_by": list(it.heard_by),
            "suppressed_listeners": list(it.suppressed_listeners),
            "kind": it.kind,
            "intent": intent,
            "targets": list(it.targets),
            "outcome": it.outcome,
            "reason": it.reason,
            "latency_ms": _r(it.latency_ms),
            "cloud_latency_ms": _r(cloud),
            "hop_count": hop,
            "targets_delivered": sorted(it.delivered_targets),
            "target_results": {t: ("ok" if ok else (r or "failure")) for t, (ok, r) in sorted(it.target_results.items())},
            "messages": self._message_counts(it),
            "voice_response": it.response,
        }

    def report(self) -> MetricsReport:
        end = self.finish()
        rows = [self.interaction_record(it) for it in self.interactions]
        by_outcome: dict = {}
        by_kind: dict = {}
        for r in rows:
            by_outcome[r["outcome"]] = by_outcome.get(r["outcome"], 0) + 1
            if r["kind"]:
                by_kind[r["kind"]] = by_kind.get(r["kind"], 0) + 1
        cmd = [r for r in rows if r["kind"] is not None and r["latency_ms"] is not None]
        lat = [r["latency_ms"] for r in cmd]
        cross = [r for r in rows if r["kind"] in (InteractionKind.WITHIN.value, InteractionKind.BETWEEN.value)]
        targeted = sum(len(r["targets"]) for r in cross)
        delivered = sum(len(set(r["targets_delivered"]) & set(r["targets"])) for r in cross)
        totals = {"sent": 0, "delivered": 0, "dropped": 0, "expired": 0, "partitioned": 0}
        for _, m, dst in self.messages:
            totals["sent"] += 1
            totals[m.outcomes[dst]] += 1
        statuses = {"executed": 0, "suppressed": 0, "superseded": 0}
        for hist in self.history.values():
            for h in hist:
                statuses[h.status] += 1
        hops = [r["hop_count"] for r in cross if r["targets_delivered"]]
        energy = energy_account(self.trace, self.cfg.energy)
        bg = self.graph.background_stats()
        bg_off = sum(s["offered"] for s in bg.values())
        bg_drop = sum(s["dropped"] for s in bg.values())
        aggregates = {
            "interactions": len(rows),
            "by_outcome": dict(sorted(by_outcome.items())),
            "by_kind": dict(sorted(by_kind.items())),
            "latency_ms": {
                "count": len(lat), "mean": _r(sum(lat) / len(lat)) if lat else None,
                "p50": _percentile(lat, 50), "p90": _percentile(lat, 90), "p99": _percentile(lat, 99),
                "max": _r(max(lat)) if lat else None,
            },
            "cloud_latency_ms": {
                "mean": _r(sum(r["cloud_latency_ms"] for r in cmd) / len(cmd)) if cmd else None,
                "round_trip": _r(self.cfg.energy.cloud_round_trip_ms),
            },
            "cross_device": {
                "interactions": len(cross),
                "succeeded": sum(1 for r in cross if r["outcome"] == "success"),
                "targets": targeted,
                "targets_delivered": delivered,
                "delivery_ratio": _r(delivered / targeted) if targeted else None,
            },
            "mean_hop_count": _r(sum(hops) / len(hops)) if hops else None,
            "messages": totals,
            "conflicts": statuses,
            "listener_suppressions": sum(len(r["suppressed_listeners"]) for r in rows),
            "voice_responses": len(self.voice),
            "energy": {k: (_r(v) if not isinstance(v, dict) else {a: _r(b) for a, b in v.items()})
                       for k, v in energy.to_dict().items()},
            "background_load": {
                "offered": bg_off, "dropped": bg_drop,
                "drop_ratio": _r(bg_drop / bg_off) if bg_off else None,
                "per_node": {n: {k: (_r(v) if isinstance(v, float) else v) for k, v in s.items() if k != "dropped_ids"}
                             for n, s in bg.items()},
            },
        }
        data = {
            "schema": REPORT_SCHEMA,
            "config": self.cfg.name,
            "seed": self.seed,
            "mode": self.cfg.messaging.mode,
            "end_ms": _r(end),
            "interactions": rows,
            "voice_responses": self.voice,
            "aggregates": aggregates,
            "devices": {d: dict(sorted(a.state.items())) for d, a in sorted(self.appliances.items())},
        }
        return MetricsReport(data)


def run(cfg: HomeConfig, scenario: Scenario, seed: int | None = None):
    """Run a scenario to completion; returns (MetricsReport, trace records)."""
    validate_scenario(cfg, scenario)
    sim = Simulation(cfg, seed, scenario.horizon_ms)
    sim.load_scenario(scenario)
    sim.run_until(None)
    rep = sim.report()
    return rep, sim.trace


# -- parameter matrices -----------------------------------------------------------------

GRID_KEYS = ("node-count", "offered-load", "mode", "approach")


def derived_seed(seed: int, point: dict) -> int:
    blob = json.dumps(point, sort_keys=True).encode()
    h = int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "big")
    return (seed ^ h) & 0xFFFFFFFFFFFFFFFF


def parse_grid(specs) -> dict:
    """``["mode=peer,broker", "node-count=4,8"]`` -> ordered grid dict."""
    grid = {}
    for spec in specs:
        key, sep, vals = spec.partition("=")
        key = key.strip()
        if not sep or not vals.strip():
            raise ValueError(f"grid entry {spec!r} must look like key=v1,v2")
        if key not in GRID_KEYS:
            raise ValueError(f"unknown grid key {key!r}; expected one of {', '.join(GRID_KEYS)}")
        items = [v.strip() for v in vals.split(",") if v.strip()]
        if key == "node-count":
            items = [int(v) for v in items]
        elif key == "offered-load":
            items = [float(v.rstrip("x")) for v in items]
        elif key == "mode" and not set(items) <= {"peer", "broker"}:
            raise ValueError("mode values must be peer or broker")
        elif key == "approach" and not set(items) <= {"coexist", "unified"}:
            raise ValueError("approach values must be coexist or unified")
        grid[key] = items
    return grid


def cell_config(cfg: HomeConfig, point: dict) -> HomeConfig:
    from .topology import ring_home

    if "node-count" in point:
        cfg = ring_home(int(point["node-count"]), seed=cfg.seed)
    doc = config_to_dict(cfg)
    if "mode" in point:
        doc["messaging"]["mode"] = point["mode"]
        if point["mode"] == "broker" and doc["messaging"]["broker"] is None and not doc["gateways"]:
            doc["messaging"]["broker"] = min(d.id for d in cfg.devices)
    if "approach" in point:
        for s in doc["subsystems"]:
            for m in s["modules"]:
                for d in m["devices"]:
                    if d["kws"]["approach"] != "none":
                        d["kws"]["approach"] = point["approach"]
    return config_from_dict(doc)


def cell_scenario(cfg: HomeConfig, base, point: dict, load_node: str | None = None) -> Scenario:
    from .topology import ring_scenario

    if callable(base):
        sc = base(cfg)
    elif base is None:
        sc = Scenario.from_doc(ring_scenario(cfg, len(cfg.devices)))
    else:
        sc = base
    if not isinstance(sc, Scenario):
        sc = Scenario.from_doc(sc)
    if "offered-load" in point:
        node = load_node or cfg.broker_id() or cfg.devices[0].id
        offered = float(point["offered-load"]) * cfg.node_capacity(node)
        extra = Directive(0.0, Load(node, offered, 10_000.0))
        sc = replace(sc, directives=(extra,) + sc.directives)
    return sc


@dataclass
class MatrixResult:
    cells: list  # dicts: point, scenario, seed, report (dict|None), error (str|None)

    def to_json(self) -> str:
        return json.dumps({"schema": "hearthmesh.matrix/1", "cells": self.cells}, sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        keys = sorted({k for c in self.cells for k in c["point"]})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", *keys, "seed", "interactions", "success", "delivery_ratio", "mean_hop_count",
                    "latency_p50_ms", "load_drop_ratio", "error"])
        for c in self.cells:
            a = c["report"]["aggregates"] if c["report"] else {}
            row = [c["scenario"], *[c["point"].get(k, "") for k in keys], c["seed"]]
            if a:
                row += [a["interactions"], a["by_outcome"].get("success", 0), a["cross_device"]["delivery_ratio"],
                        a["mean_hop_count"], a["latency_ms"]["p50"], a["background_load"]["drop_ratio"], ""]
            else:
                row += ["", "", "", "", "", "", c["error"]]
            w.writerow(["" if v is None else v for v in row])
        return buf.getvalue()


def run_matrix(cfg: HomeConfig, scenarios, grid: dict, seed: int | None = None, load_node: str | None = None) -> MatrixResult:
    """Run every scenario at every grid point with independent derived seeds.

    ``scenarios`` maps a name to a Scenario, a scenario document, a callable
    taking the cell's config, or None (the built-in ring scenario).  Errors
    are recorded per cell.
    """
    base_seed = cfg.seed if seed is None else seed
    if not isinstance(scenarios, dict):
        scenarios = {"scenario": scenarios}
    keys = [k for k in GRID_KEYS if k in grid]
    unknown = set(grid) - set(GRID_KEYS)
    if unknown:
        raise ValueError(f"unknown grid key {sorted(unknown)[0]!r}")
    cells = []
    for name in sorted(scenarios):
        for values in itertools.product(*(grid[k] for k in keys)):
            point = dict(zip(keys, values))
            cell_seed = derived_seed(base_seed, {"scenario": name, **point})
            entry = {"scenario": name, "point": point, "seed": cell_seed, "report": None, "error": None}
            try:
                ccfg = cell_config(cfg, point)
                sc = cell_scenario(ccfg, scenarios[name], point, load_node)
                rep, _ = run(ccfg, sc, cell_seed)
                entry["report"] = rep.data
            except (ConfigError, ValueError, LookupError) as exc:
                entry["error"] = f"{type(exc).__name__}: {exc}"
            cells.append(entry)
    return MatrixResult(cells)
