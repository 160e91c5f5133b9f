import pytest

from hearthmesh.grammar import Intent
from hearthmesh.messaging import (ActionRecord, BrokerUnavailable, ConflictPolicy, InteractionKind, NoTargetError,
                                  Publish, Relay, Request, apply_decision, broker_relay, build_endpoints,
                                  dispatch_broker, dispatch_peer, on_response, on_timeout, resend, resolve_conflict,
                                  resolve_intent, serve, topic_of)


class FakeNet:
    def __init__(self, down=()):
        self.sent = []
        self.down = set(down)

    def is_up(self, node):
        return node not in self.down

    def send(self, src, dst, payload, now):
        self.sent.append((src, dst, payload))
        return (src, dst, payload)


def test_resolution_kinds(worked_home):
    r = resolve_intent(worked_home, "balcony-ceiling-light", Intent("turn-on", "light"))
    assert r.kind == InteractionKind.DIRECT and r.targets == ("balcony-ceiling-light",)
    r = resolve_intent(worked_home, "balcony-ceiling-light", Intent("start-wash", "washing-machine"))
    assert r.kind == InteractionKind.WITHIN and r.targets == ("balcony-washer",)
    r = resolve_intent(worked_home, "living-room-lamp", Intent("turn-off", "light", "bedroom"))
    assert r.kind == InteractionKind.BETWEEN
    assert r.targets == ("bedroom-ceiling-light", "bedroom-table-lamp")
    with pytest.raises(NoTargetError):
        resolve_intent(worked_home, "living-room-lamp", Intent("start-wash", "washing-machine", "bedroom"))


def test_peer_dispatch_one_request_per_target(worked_home):
    net = FakeNet()
    eps = build_endpoints(worked_home, net)
    r = resolve_intent(worked_home, "living-room-lamp", Intent("turn-off", "light", "bedroom"))
    d = dispatch_peer(eps["living-room-lamp"], r, 0.0)
    assert [dst for _, dst, _ in net.sent] == list(r.targets)
    assert all(isinstance(p, Request) for _, _, p in net.sent)
    assert d.expected.expected == {t: 1000.0 for t in r.targets}


def test_broker_round_trip(worked_doc):
    from helpers import edited
    cfg = edited(worked_doc, lambda d: d["messaging"].update(mode="broker"))
    net = FakeNet()
    eps = build_endpoints(cfg, net)
    client = eps["balcony-ceiling-light"]
    r = resolve_intent(cfg, "balcony-ceiling-light", Intent("turn-off", "light", "bedroom"))
    d = dispatch_broker(client, r, 0.0, eps["living-room-lamp"].directory)
    (_, dst, pub), = net.sent
    assert dst == "living-room-lamp" and isinstance(pub, Publish) and pub.topic == topic_of(r.intent)
    relays = broker_relay(eps["living-room-lamp"], pub, 10.0)
    assert sorted(dst for _, dst, _ in relays) == ["bedroom-ceiling-light", "bedroom-table-lamp"]
    calls = []
    for _, dst, rel in relays:
        assert isinstance(rel, Relay)
        resp = serve(eps[dst], rel, 20.0, lambda a: calls.append(a) or (True, None))
        assert resp.via == "living-room-lamp"
        done = on_response(client, resp, 30.0)
    assert calls == ["turn-off", "turn-off"]
    assert done is d.expected and done.outcome() == "success"


def test_dead_broker(worked_doc):
    from helpers import edited
    cfg = edited(worked_doc, lambda d: d["messaging"].update(mode="broker"))
    eps = build_endpoints(cfg, FakeNet(down={"living-room-lamp"}))
    r = resolve_intent(cfg, "balcony-ceiling-light", Intent("turn-off", "light", "bedroom"))
    with pytest.raises(BrokerUnavailable):
        dispatch_broker(eps["balcony-ceiling-light"], r, 0.0, eps["living-room-lamp"].directory)


def test_serve_is_idempotent(worked_home):
    eps = build_endpoints(worked_home, FakeNet())
    calls = []
    req = Request("x#1", "turn-on", "x")
    for _ in range(3):
        resp = serve(eps["balcony-washer"], req, 0.0, lambda a: calls.append(a) or (True, None))
    assert calls == ["turn-on"] and resp.ok


def test_retries_then_timeout(worked_home):
    net = FakeNet()
    ep = build_endpoints(worked_home, net)["balcony-ceiling-light"]
    r = resolve_intent(worked_home, "balcony-ceiling-light", Intent("start-wash", "washing-machine"))
    dispatch_peer(ep, r, 0.0, corr="c1")
    t = 1000.0
    for _ in range(ep.max_retries):
        kind, at = on_timeout(ep, "c1", "balcony-washer", t)
        assert kind == "retry" and at == t
        resend(ep, "c1", "balcony-washer", at)
        t += ep.deadline_ms
    kind, rs = on_timeout(ep, "c1", "balcony-washer", t)
    assert kind == "done" and rs.outcome() == "timeout"
    assert t == (ep.max_retries + 1) * ep.deadline_ms
    assert len(net.sent) == ep.max_retries + 1


def test_stale_timeout_ignored(worked_home):
    ep = build_endpoints(worked_home, FakeNet())["balcony-ceiling-light"]
    r = resolve_intent(worked_home, "balcony-ceiling-light", Intent("start-wash", "washing-machine"))
    dispatch_peer(ep, r, 0.0, corr="c1")
    assert on_timeout(ep, "c1", "balcony-washer", 500.0) is None


@pytest.mark.parametrize("strategy,execute", [("last-writer-wins", True), ("first-writer-wins", False),
                                               ("reject-within-guard", False)])
def test_conflict_strategies(worked_home, strategy, execute):
    light = worked_home.device("bedroom-ceiling-light")
    p = ConflictPolicy(strategy, 2000.0)
    hist = []
    first = ActionRecord("turn-on", 0.0)
    apply_decision(hist, first, resolve_conflict(p, light, first, hist))
    d = resolve_conflict(p, light, ActionRecord("turn-off", 1000.0), hist)
    assert d.execute is execute
    # outside the guard everything runs
    assert resolve_conflict(p, light, ActionRecord("turn-off", 2500.0), hist).execute
