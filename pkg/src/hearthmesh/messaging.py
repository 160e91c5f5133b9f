"""Application messaging: intent routing, peer and broker dispatch, conflicts.

Endpoints talk through a transport object with ``send(src, dst, payload,
now) -> NetMessage`` and ``is_up(node)``.  The transport owns virtual time
(it schedules arrivals); this module owns the protocol: which messages are
sent, what responses are expected, retries on timeout and idempotent
serving of repeated requests.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .grammar import Intent
from .home import DeviceSelector, HomeConfig, room_of, select_devices


class InteractionKind(str, Enum):
    DIRECT = "direct"
    WITHIN = "within-subsystem"
    BETWEEN = "between-subsystems"


class NoTargetError(LookupError):
    def __init__(self, intent: Intent, room: str | None):
        self.intent = intent
        self.room = room
        what = intent.device_class or f"action {intent.action!r}"
        super().__init__(f"no {what} in room {room!r}")


class BrokerUnavailable(RuntimeError):
    """The broker is down; every non-direct interaction fails at dispatch."""


@dataclass(frozen=True)
class Resolution:
    kind: InteractionKind
    targets: tuple
    intent: Intent
    listener: str


def resolve_intent(cfg: HomeConfig, listener: str, i: Intent) -> Resolution:
    """Map a parsed intent heard at ``listener`` onto target devices."""
    own_room = room_of(cfg, listener)
    me = cfg.device(listener)
    if i.room is None:
        filled = i.with_(room=own_room, origin=i.origin or listener)
        if i.device_class is not None and me.matches_class(i.device_class) and i.action in me.actions:
            return Resolution(InteractionKind.DIRECT, (listener,), filled, listener)
        kind = InteractionKind.WITHIN
    else:
        filled = i.with_(origin=i.origin or listener)
        kind = InteractionKind.WITHIN if i.room == own_room else InteractionKind.BETWEEN
    if i.device_class is None:
        sel = DeviceSelector(room=filled.room, action=i.action)
    else:
        sel = DeviceSelector(room=filled.room, device_class=i.device_class)
    try:
        targets = tuple(d.id for d in select_devices(cfg, sel))
    except LookupError:
        targets = ()
    if not targets:
        raise NoTargetError(filled, filled.room)
    return Resolution(kind, targets, filled, listener)


# -- conflict policy -------------------------------------------------------------

@dataclass(frozen=True)
class ConflictPolicy:
    strategy: str = "reject-within-guard"
    guard_ms: float = 2000.0

    @classmethod
    def from_params(cls, mp) -> "ConflictPolicy":
        return cls(mp.conflict_strategy, mp.guard_ms)


@dataclass
class ActionRecord:
    action: str
    at_ms: float
    status: str = "executed"  # executed | suppressed | superseded
    origin: str | None = None


@dataclass(frozen=True)
class Decision:
    execute: bool
    reason: str | None = None
    superseded: tuple = ()  # indexes into the history


def _opposes(pairs, a, b) -> bool:
    return frozenset((a, b)) in pairs


def resolve_conflict(p: ConflictPolicy, device, incoming: ActionRecord, history: list) -> Decision:
    """Arbitrate ``incoming`` against the device's recent action log.

    Only actions that reverse a recent one (by the device's opposing pairs)
    inside the guard interval are arbitrated; all others execute.
    """
    pairs = device.opposing_pairs()
    recent = [
        (k, h) for k, h in enumerate(history)
        if incoming.at_ms - h.at_ms < p.guard_ms and _opposes(pairs, h.action, incoming.action)
    ]
    executed = [(k, h) for k, h in recent if h.status == "executed"]
    if p.strategy == "last-writer-wins":
        return Decision(True, "supersedes" if executed else None, tuple(k for k, _ in executed))
    if p.strategy == "first-writer-wins":
        if executed:
            return Decision(False, f"opposes {executed[-1][1].action} at {executed[-1][1].at_ms:g} ms")
        return Decision(True)
    if p.strategy == "reject-within-guard":
        if recent:
            return Decision(False, f"opposes {recent[-1][1].action} at {recent[-1][1].at_ms:g} ms within guard")
        return Decision(True)
    raise ValueError(f"unknown conflict strategy {p.strategy!r}")


def apply_decision(history: list, incoming: ActionRecord, d: Decision) -> None:
    for k in d.superseded:
        history[k].status = "superseded"
    incoming.status = "executed" if d.execute else "suppressed"
    history.append(incoming)


def guard_violations(p: ConflictPolicy, device, log: list) -> list:
    """Pairs of executed (not superseded) opposing actions closer than the guard."""
    pairs = device.opposing_pairs()
    live = [h for h in log if h.status == "executed"]
    out = []
    for i, a in enumerate(live):
        for b in live[i + 1:]:
            if b.at_ms - a.at_ms < p.guard_ms and _opposes(pairs, a.action, b.action):
                out.append((a, b))
    return out


# -- wire payloads -----------------------------------------------------------------

@dataclass(frozen=True)
class Request:
    corr: str
    action: str
    listener: str
    attempt: int = 0


@dataclass(frozen=True)
class Publish:
    corr: str
    topic: tuple
    action: str
    listener: str
    only: tuple = ()  # retry restricted to these subscribers
    attempt: int = 0


@dataclass(frozen=True)
class Relay:
    corr: str
    topic: tuple
    action: str
    listener: str
    broker: str
    attempt: int = 0


@dataclass(frozen=True)
class Response:
    corr: str
    target: str
    ok: bool
    reason: str | None = None
    listener: str = ""
    via: str | None = None  # broker to forward through


@dataclass
class ResponseSet:
    corr: str
    expected: dict  # target -> current deadline ms
    results: dict = field(default_factory=dict)  # target -> (ok, reason)
    attempts: dict = field(default_factory=dict)  # target -> attempts made
    action: str = ""
    topic: tuple = ()

    @property
    def complete(self) -> bool:
        return all(t in self.results for t in self.expected)

    @property
    def ok(self) -> bool:
        return self.complete and all(ok for ok, _ in self.results.values())

    def outcome(self) -> str:
        if self.ok:
            return "success"
        bad = [r for ok, r in self.results.values() if not ok]
        return "timeout" if bad and all(r == "timeout" for r in bad) else "failure"


@dataclass
class Dispatch:
    messages: list
    expected: ResponseSet
    local: tuple = ()  # targets served on the listener itself, no network
    local_publish: Publish | None = None  # listener is the broker: relay without a network leg


@dataclass
class AppEndpoint:
    device_id: str
    mode: str  # peer | broker-client | broker
    net: object = None
    deadline_ms: float = 1000.0
    max_retries: int = 2
    backoff_ms: float = 0.0
    backoff_factor: float = 2.0
    subscriptions: frozenset = frozenset()
    broker: str | None = None
    directory: dict = field(default_factory=dict)  # topic -> subscriber ids (broker only)
    pending: dict = field(default_factory=dict)  # corr -> ResponseSet
    served: dict = field(default_factory=dict)  # corr -> (ok, reason)
    _corr: int = 0

    def next_corr(self) -> str:
        self._corr += 1
        return f"{self.device_id}#{self._corr}"

    def backoff(self, attempt: int) -> float:
        """Delay before retry number ``attempt`` (1-based)."""
        return self.backoff_ms * self.backoff_factor ** (attempt - 1)


def topic_of(intent: Intent) -> tuple:
    return (intent.room, intent.device_class if intent.device_class else f"action:{intent.action}")


def subscriptions_for(cfg: HomeConfig, device) -> frozenset:
    room = room_of(cfg, device.id)
    topics = {(room, device.device_class)} | {(room, c) for c in device.categories}
    topics |= {(room, f"action:{a}") for a in device.actions}
    return frozenset(topics)


def build_endpoints(cfg: HomeConfig, net=None) -> dict:
    """One endpoint per device for the configured mode."""
    mp = cfg.messaging
    broker = cfg.broker_id() if mp.mode == "broker" else None
    eps = {}
    directory: dict = {}
    for d in cfg.devices:
        subs = subscriptions_for(cfg, d)
        for t in subs:
            directory.setdefault(t, []).append(d.id)
        mode = "peer" if mp.mode == "peer" else ("broker" if d.id == broker else "broker-client")
        eps[d.id] = AppEndpoint(d.id, mode, net, mp.deadline_ms, mp.max_retries, mp.backoff_ms,
                                mp.backoff_factor, subs, broker)
    if broker is not None:
        eps[broker].directory = {t: tuple(sorted(v)) for t, v in directory.items()}
    return eps


def dispatch_peer(ep: AppEndpoint, r: Resolution, now: float, corr: str | None = None) -> Dispatch:
    """One unicast request per remote target; self-targets are served locally."""
    if ep.mode != "peer":
        raise ValueError("dispatch_peer needs a peer endpoint")
    if r.kind == InteractionKind.DIRECT:
        raise ValueError("direct interactions are not dispatched")
    corr = corr or ep.next_corr()
    remote = [t for t in r.targets if t != ep.device_id]
    local = tuple(t for t in r.targets if t == ep.device_id)
    rs = ResponseSet(corr, {t: now + ep.deadline_ms for t in remote}, action=r.intent.action)
    msgs = []
    for t in remote:
        rs.attempts[t] = 1
        msgs.append(ep.net.send(ep.device_id, t, Request(corr, r.intent.action, ep.device_id), now))
    ep.pending[corr] = rs
    return Dispatch(msgs, rs, local)


def dispatch_broker(ep: AppEndpoint, r: Resolution, now: float, directory: dict | None = None,
                    corr: str | None = None) -> Dispatch:
    """Publish to the (room, class) topic through the broker.

    ``directory`` is the broker's subscription table, used to fill the
    expected response set.  Raises BrokerUnavailable if the broker is down.
    """
    if ep.mode not in ("broker-client", "broker"):
        raise ValueError("dispatch_broker needs a broker-mode endpoint")
    if r.kind == InteractionKind.DIRECT:
        raise ValueError("direct interactions are not dispatched")
    if ep.broker is None or not ep.net.is_up(ep.broker):
        raise BrokerUnavailable(f"broker {ep.broker!r} is unavailable")
    topic = topic_of(r.intent)
    subs = tuple((directory or {}).get(topic, ()))
    corr = corr or ep.next_corr()
    remote = [s for s in subs if s != ep.device_id]
    local = tuple(s for s in subs if s == ep.device_id)
    rs = ResponseSet(corr, {s: now + ep.deadline_ms for s in remote}, action=r.intent.action, topic=topic)
    for s in remote:
        rs.attempts[s] = 1
    msgs = []
    local_pub = None
    if remote:
        pub = Publish(corr, topic, r.intent.action, ep.device_id)
        if ep.broker == ep.device_id:
            local_pub = pub
        else:
            msgs.append(ep.net.send(ep.device_id, ep.broker, pub, now))
    ep.pending[corr] = rs
    return Dispatch(msgs, rs, local, local_pub)


def broker_relay(broker: AppEndpoint, pub: Publish, now: float) -> list:
    """Fan a publish out to the topic's subscribers, excluding the publisher."""
    subs = broker.directory.get(pub.topic, ())
    if pub.only:
        subs = [s for s in subs if s in pub.only]
    out = []
    for s in subs:
        if s == pub.listener:
            continue
        relay = Relay(pub.corr, pub.topic, pub.action, pub.listener, broker.device_id, pub.attempt)
        out.append(broker.net.send(broker.device_id, s, relay, now))
    return out


def serve(ep: AppEndpoint, req, now: float, execute) -> Response:
    """Serve a request or relay; ``execute(action) -> (ok, reason)``.

    Repeated deliveries of the same correlation id (retries after a lost
    response) are answered from the cache without executing again.
    """
    if req.corr in ep.served:
        ok, reason = ep.served[req.corr]
    else:
        ok, reason = execute(req.action)
        ep.served[req.corr] = (ok, reason)
    via = req.broker if isinstance(req, Relay) else None
    return Response(req.corr, ep.device_id, ok, reason, req.listener, via)


def on_response(ep: AppEndpoint, resp: Response, now: float) -> ResponseSet | None:
    """Record a response; returns the set once it is complete."""
    rs = ep.pending.get(resp.corr)
    if rs is None or resp.target in rs.results or resp.target not in rs.expected:
        return None
    rs.results[resp.target] = (resp.ok, resp.reason)
    if rs.complete:
        del ep.pending[resp.corr]
        return rs
    return None


def on_timeout(ep: AppEndpoint, corr: str, target: str, now: float):
    """Deadline expired for ``target``.

    Returns ("retry", at_ms) while retries remain, ("done", ResponseSet)
    when giving up completes the set, or None if nothing is pending.
    """
    rs = ep.pending.get(corr)
    if rs is None or target in rs.results or rs.expected.get(target) != now:
        return None
    made = rs.attempts.get(target, 1)
    if made <= ep.max_retries:
        return ("retry", now + ep.backoff(made))
    rs.results[target] = (False, "timeout")
    if rs.complete:
        del ep.pending[corr]
        return ("done", rs)
    return ("waiting", rs)


def resend(ep: AppEndpoint, corr: str, target: str, now: float):
    """Retransmit to one target and push its deadline."""
    rs = ep.pending.get(corr)
    if rs is None or target in rs.results:
        return None
    attempt = rs.attempts.get(target, 1)
    rs.attempts[target] = attempt + 1
    rs.expected[target] = now + ep.deadline_ms
    if ep.mode == "peer":
        return ep.net.send(ep.device_id, target, Request(corr, rs.action, ep.device_id, attempt), now)
    pub = Publish(corr, rs.topic, rs.action, ep.device_id, (target,), attempt)
    if ep.broker == ep.device_id:
        return pub  # publisher is the broker: the caller relays locally
    return ep.net.send(ep.device_id, ep.broker, pub, now)
