"""Lower-level mesh transport.

Per-technology propagation (flooding with TTL and duplicate suppression,
or next-hop routing over shortest hop paths), self-healing route rebuilds,
gateway bridging between technologies, and a per-node FIFO with
deterministic service and tail drop.

Routing tables describe the topology as of the last rebuild; a node that
fails is skipped by flooding immediately but only routed around once
``rebuild_routes`` runs.  Queue reservations are made when a transfer is
planned, so concurrent transfers are served in planning order.
"""
from __future__ import annotations

import heapq
import itertools
import random
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels

DEDUP_CACHE_SIZE = 256


class DeliveryFailure(Exception):
    """Unicast target unreachable in the current topology."""

    def __init__(self, message: "NetMessage", partition: frozenset):
        self.msg = message
        self.partition = partition
        super().__init__(
            f"message {message.msg_id}: {message.target!r} unreachable from {message.source!r} "
            f"(source partition: {sorted(partition)})"
        )


class BridgeError(ValueError):
    pass


@dataclass
class NetMessage:
    msg_id: int
    kind: str  # unicast | multicast | broadcast
    source: str
    target: str | None = None
    targets: tuple = ()  # multicast members
    payload: object = None
    ttl: int = 0
    tech: str | None = None
    trace: list = field(default_factory=list)  # [(node, ms)]
    tx: list = field(default_factory=list)  # [(node, tech, ms)] one entry per radio transmission
    hops: int = 0
    outcomes: dict = field(default_factory=dict)  # recipient -> delivered|dropped|expired|partitioned
    arrival: float | None = None  # unicast arrival at the target

    @property
    def fanout(self) -> tuple:
        if self.kind == "unicast":
            return (self.target,)
        return tuple(sorted(self.outcomes)) if self.kind == "broadcast" else tuple(self.targets)


# topology changes for rebuild_routes
@dataclass(frozen=True)
class NodeJoined:
    node: str
    links: tuple = ()  # ((neighbour, tech, latency_ms), ...)
    techs: tuple = ()


@dataclass(frozen=True)
class NodeLeft:
    node: str


@dataclass(frozen=True)
class NodeUp:
    node: str


@dataclass(frozen=True)
class LinkChanged:
    a: str
    b: str
    tech: str
    latency_ms: float | None = None  # None removes the link


@dataclass
class CongestionEffect:
    node: str
    offered_mps: float
    capacity_mps: float
    arrivals: np.ndarray
    waits: np.ndarray  # NaN where dropped
    dropped_ids: list
    bin_ms: float = 100.0

    @property
    def offered(self) -> int:
        return len(self.arrivals)

    @property
    def dropped(self) -> int:
        return len(self.dropped_ids)

    @property
    def drop_fraction(self) -> float:
        return self.dropped / self.offered if self.offered else 0.0

    def delay_curve(self) -> list:
        """Mean queueing delay of accepted messages per time bin."""
        ok = ~np.isnan(self.waits)
        if not ok.any():
            return []
        t0 = self.arrivals[0]
        bins = ((self.arrivals[ok] - t0) // self.bin_ms).astype(int)
        w = self.waits[ok]
        out = []
        for b in np.unique(bins):
            out.append((float(t0 + b * self.bin_ms), float(w[bins == b].mean())))
        return out


def load_arrivals(offered_mps: float, duration_ms: float, start_ms: float = 0.0, seed: int = 0,
                  mode: str = "deterministic") -> np.ndarray:
    """Arrival times of an offered background stream.

    ``deterministic``: evenly spaced with a seeded random phase.
    ``poisson``: exponential gaps from a seeded generator.
    """
    if offered_mps < 0:
        raise ValueError("offered load must be non-negative")
    if offered_mps == 0 or duration_ms <= 0:
        return np.empty(0)
    rng = random.Random(seed)
    gap = 1000.0 / offered_mps
    end = start_ms + duration_ms
    if mode == "deterministic":
        first = start_ms + rng.random() * gap
        n = int(np.floor((end - first) / gap)) + 1 if first < end else 0
        times = first + gap * np.arange(n)
        return times[times < end]
    if mode == "poisson":
        out = []
        t = start_ms
        while True:
            t += rng.expovariate(offered_mps / 1000.0)
            if t >= end:
                break
            out.append(t)
        return np.array(out)
    raise ValueError(f"unknown arrival mode {mode!r}")


class LinkGraph:
    """Adjacency per link technology, node queues, dedup caches, route tables."""

    def __init__(self, nodes, links, propagation, *, gateways=(), node_techs=None, capacity=None,
                 processing=None, buffer=64, bridge_cost=1, healing_delay_ms=100.0,
                 directed_flooding=False, ttl=None, default_capacity=100.0):
        self.propagation = dict(propagation)  # tech -> flooding | routing
        self.gateways = frozenset(gateways)
        self.buffer = int(buffer)
        self.bridge_cost = int(bridge_cost)
        self.healing_delay_ms = float(healing_delay_ms)
        self.directed_flooding = directed_flooding
        self.fixed_ttl = ttl
        self.default_capacity = float(default_capacity)
        self._node_techs = {k: frozenset(v) for k, v in (node_techs or {}).items()}
        self._capacity = dict(capacity or {})
        self._processing = dict(processing or {})
        self._links = {}  # (a, b, tech) with a < b -> latency
        for ln in links:
            a, b, tech, lat = ln[0], ln[1], ln[2], float(ln[3])
            key = (min(a, b), max(a, b), tech)
            self._links[key] = min(lat, self._links.get(key, lat))
        self._ids = sorted(set(nodes))
        self._down = set()
        self._view_down = set()
        self._seen: dict[str, OrderedDict] = {}
        self._msg_ids = itertools.count(1)
        self._bg_pending: dict[str, list] = {}  # node -> [(time, id)] not yet collected
        self._bg_done: dict[str, list] = {}  # node -> [(time, id, wait or None)]
        self._busy_by_id: dict[str, float] = {}
        self._build()
        self.rebuild()

    @classmethod
    def from_config(cls, cfg) -> "LinkGraph":
        return cls(
            [d.id for d in cfg.devices],
            [(ln.a, ln.b, ln.tech, ln.latency_ms) for ln in cfg.links],
            {name: t.propagation for name, t in cfg.link_techs.items()},
            gateways=cfg.gateways,
            node_techs={d.id: d.link_techs for d in cfg.devices},
            capacity={d.id: cfg.node_capacity(d.id) for d in cfg.devices},
            processing={d.id: d.components.processing_ms for d in cfg.devices},
            buffer=cfg.network.buffer,
            bridge_cost=cfg.network.bridge_cost,
            healing_delay_ms=cfg.network.healing_delay_ms,
            directed_flooding=cfg.network.directed_flooding,
            ttl=cfg.network.ttl,
            default_capacity=cfg.network.capacity_mps,
        )

    # -- structure ------------------------------------------------------------

    @property
    def nodes(self) -> list:
        return list(self._ids)

    def index(self, node: str) -> int:
        return self._idx[node]

    def techs_of(self, node: str) -> frozenset:
        linked = {t for (a, b, t) in self._links if node in (a, b)}
        return self._node_techs.get(node, frozenset()) | linked

    def is_up(self, node: str) -> bool:
        return node not in self._down

    def neighbors(self, node: str, tech: str, view: bool = False) -> list:
        down = self._view_down if view else self._down
        i = self._idx[node]
        c = self._csr[tech]
        return [self._ids[j] for j in c[1][c[0][i]:c[0][i + 1]] if self._ids[j] not in down]

    def links(self):
        return [(a, b, t, lat) for (a, b, t), lat in sorted(self._links.items())]

    def _build(self):
        # carry queue state across re-indexing by id
        if hasattr(self, "_busy"):
            self._collect_background()
            for i, nid in enumerate(self._old_ids):
                self._busy_by_id[nid] = float(self._busy[i])
        self._idx = {nid: i for i, nid in enumerate(self._ids)}
        n = len(self._ids)
        self._csr = {}
        self._adj = {}
        for tech in self.propagation:
            nbrs = [[] for _ in range(n)]
            for (a, b, t), lat in self._links.items():
                if t != tech:
                    continue
                ia, ib = self._idx[a], self._idx[b]
                nbrs[ia].append((ib, lat))
                nbrs[ib].append((ia, lat))
            indptr = np.zeros(n + 1, dtype=np.int32)
            indices, lats = [], []
            for i, lst in enumerate(nbrs):
                lst.sort()
                indices.extend(j for j, _ in lst)
                lats.extend(x for _, x in lst)
                indptr[i + 1] = len(indices)
            self._csr[tech] = (indptr, np.array(indices, dtype=np.int32), np.array(lats, dtype=np.float64))
            self._adj[tech] = nbrs
        self._service = np.array(
            [1000.0 / self._capacity.get(nid, self.default_capacity) for nid in self._ids], dtype=np.float64
        )
        self._busy = np.array([self._busy_by_id.get(nid, 0.0) for nid in self._ids], dtype=np.float64)
        self._old_ids = list(self._ids)
        self._flatten_background()

    def _alive(self, view=False) -> np.ndarray:
        down = self._view_down if view else self._down
        return np.array([0 if nid in down else 1 for nid in self._ids], dtype=np.uint8)

    def rebuild(self):
        """Recompute route tables and the default TTL from the current topology."""
        self._view_down = set(self._down)
        alive = self._alive()
        self.tables = {}
        for tech, prop in self.propagation.items():
            if prop == "routing":
                indptr, indices, _ = self._csr[tech]
                self.tables[tech] = kernels.all_pairs(indptr, indices, alive)
        self._plan_cache = {}
        self._diameter = None

    @property
    def default_ttl(self) -> int:
        if self.fixed_ttl is not None:
            return self.fixed_ttl
        if self._diameter is None:
            best = 0
            for s in self._ids:
                if s in self._view_down:
                    continue
                for cost in self._plan_costs(s).values():
                    best = max(best, cost)
            self._diameter = best
        return self._diameter + 2

    def new_message(self, kind, source, *, target=None, targets=(), payload=None, ttl=None, tech=None):
        return NetMessage(
            msg_id=next(self._msg_ids), kind=kind, source=source, target=target, targets=tuple(targets),
            payload=payload, ttl=self.default_ttl if ttl is None else ttl, tech=tech,
        )

    # -- node queues --------------------------------------------------------

    def _flatten_background(self):
        n = len(self._ids)
        indptr = np.zeros(n + 1, dtype=np.int64)
        times, ids = [], []
        for i, nid in enumerate(self._ids):
            pend = self._bg_pending.get(nid, [])
            times.extend(t for t, _ in pend)
            ids.extend(m for _, m in pend)
            indptr[i + 1] = len(times)
        self._bg_indptr = indptr
        self._bg_times = np.array(times, dtype=np.float64)
        self._bg_ids = ids
        self._bg_ptr = indptr[:-1].copy()
        self._bg_wait = np.full(len(times), np.nan)

    def _collect_background(self):
        for i, nid in enumerate(self._old_ids):
            lo, p = int(self._bg_indptr[i]), int(self._bg_ptr[i])
            if p > lo:
                done = self._bg_done.setdefault(nid, [])
                for k in range(lo, p):
                    w = self._bg_wait[k]
                    done.append((float(self._bg_times[k]), self._bg_ids[k], None if np.isnan(w) else float(w)))
                self._bg_pending[nid] = self._bg_pending[nid][p - lo:]

    def _qargs(self):
        return (self._busy, self._bg_indptr, self._bg_times, self._bg_ptr, self._bg_wait, self._service, self.buffer)

    def add_background(self, node: str, times, ids=None):
        """Schedule background arrivals at ``node``'s queue (merged in time order)."""
        self._collect_background()
        if ids is None:
            ids = [next(self._msg_ids) for _ in range(len(times))]
        pend = self._bg_pending.setdefault(node, [])
        pend.extend(zip((float(t) for t in times), ids))
        pend.sort()
        self._flatten_background()
        return ids

    def offer(self, node: str, t: float) -> float:
        """Queue one transmission at ``node``; returns start time or -1 on tail drop."""
        return kernels.queue_offer(*self._qargs(), self._idx[node], float(t))

    def settle(self, t: float):
        """Process background arrivals up to ``t`` on every node."""
        args = self._qargs()
        for i in range(len(self._ids)):
            kernels.queue_advance(*args, i, float(t))

    def background_stats(self) -> dict:
        self._collect_background()
        self._flatten_background()
        out = {}
        for nid in sorted(self._bg_done):
            recs = self._bg_done[nid]
            waits = [w for _, _, w in recs if w is not None]
            out[nid] = {
                "offered": len(recs),
                "accepted": len(waits),
                "dropped": len(recs) - len(waits),
                "dropped_ids": [m for _, m, w in recs if w is None],
                "mean_wait_ms": sum(waits) / len(waits) if waits else 0.0,
                "max_wait_ms": max(waits) if waits else 0.0,
            }
        return out

    def service_ms(self, node: str) -> float:
        return float(self._service[self._idx[node]])

    def capacity(self, node: str) -> float:
        return 1000.0 / self.service_ms(node)

    # -- dedup caches -------------------------------------------------------

    def _seen_mask(self, msg_id) -> np.ndarray:
        return np.array([1 if msg_id in self._seen.get(nid, ()) else 0 for nid in self._ids], dtype=np.uint8)

    def _remember(self, node, msg_id):
        cache = self._seen.setdefault(node, OrderedDict())
        cache[msg_id] = True
        cache.move_to_end(msg_id)
        while len(cache) > DEDUP_CACHE_SIZE:
            cache.popitem(last=False)

    def has_seen(self, node, msg_id) -> bool:
        return msg_id in self._seen.get(node, ())

    # -- planning across technologies -----------------------------------------

    def _state_edges(self, u, tech):
        """Successor states of (node, tech) in the gateway-joined graph."""
        routed = self.propagation[tech] == "routing"
        down = self._view_down if routed else self._down
        for j, lat in self._adj[tech][u]:
            if self._ids[j] not in down:
                yield (j, tech), 1, lat
        nid = self._ids[u]
        if nid in self.gateways:
            for other in sorted(self.techs_of(nid)):
                if other != tech and other in self.propagation:
                    yield (u, other), self.bridge_cost, self._processing.get(nid, 0.0)

    def _plan_search(self, source: str):
        s = self._idx[source]
        heap = []
        for tech in sorted(self.techs_of(source)):
            if tech in self.propagation:
                heapq.heappush(heap, (0, 0.0, ((s, tech),)))
        best = {}
        # hop cost first, then latency, then the lexicographically smallest path
        while heap:
            cost, lat, path = heapq.heappop(heap)
            state = path[-1]
            if state in best:
                continue
            best[state] = (cost, lat, path)
            for nxt, w, dl in self._state_edges(*state):
                if nxt not in best:
                    heapq.heappush(heap, (cost + w, lat + dl, path + (nxt,)))
        return best

    def _plan_costs(self, source: str) -> dict:
        out = {}
        for (u, _), (cost, _, _) in self._plan_search(source).items():
            nid = self._ids[u]
            out[nid] = min(cost, out.get(nid, cost))
        return out

    def plan(self, source: str, target: str):
        """Segments [(tech, entry, exit)] of the cheapest gateway-joined path, or None."""
        key = (source, target)
        if key in self._plan_cache:
            return self._plan_cache[key]
        if source in self._down or target in self._view_down:
            return None
        best = self._plan_search(source)
        t = self._idx[target]
        cands = [v for (u, _), v in best.items() if u == t]
        if source == target:
            result = []
        elif not cands:
            result = None
        else:
            path = min(cands)[2]
            result = []
            seg_tech, entry, prev = path[0][1], path[0][0], path[0][0]
            for u, tech in path[1:]:
                if tech != seg_tech:
                    result.append((seg_tech, self._ids[entry], self._ids[prev]))
                    seg_tech, entry = tech, u
                prev = u
            result.append((seg_tech, self._ids[entry], self._ids[prev]))
            result = [seg for seg in result if seg[1] != seg[2] or len(result) == 1]
        self._plan_cache[key] = result
        return result

    def component(self, node: str, view: bool = True) -> frozenset:
        if view:
            return frozenset(self._ids[u] for (u, _) in self._plan_search(node)) if node not in self._down else frozenset()
        seen = {node}
        stack = [node]
        while stack:
            u = stack.pop()
            for tech in self.propagation:
                for v in self.neighbors(u, tech):
                    if v not in seen:
                        seen.add(v)
                        stack.append(v)
        return frozenset(seen)


# -- delivery on one technology ----------------------------------------------------

def _flood_run(g: LinkGraph, m: NetMessage, tech: str, src: str, now: float, toward: str | None):
    indptr, indices, lat = g._csr[tech]
    field_ = None
    if toward is not None and g.directed_flooding:
        field_ = kernels.bfs(indptr, indices, g._alive(), g.index(toward))
        if field_[g.index(src)] < 0:
            field_ = None
    res = kernels.flood(indptr, indices, lat, g._alive(), g._seen_mask(m.msg_id), *g._qargs(),
                        g.index(src), int(m.ttl), float(now), field_)
    arrival, hops, parent, fwd, _ = res
    for i in np.flatnonzero(fwd):
        start = arrival[i]  # tx logged at arrival; queue wait shows up in the children's arrivals
        m.tx.append((g._ids[i], tech, float(start)))
    for i in np.flatnonzero(arrival >= 0):
        g._remember(g._ids[i], m.msg_id)
    return arrival, hops, parent


def _path_from(g, parent, i):
    path = []
    while i >= 0:
        path.append(i)
        i = int(parent[i])
    return path[::-1]


def _classify_missing(g, tech, src, node, ttl, view):
    indptr, indices, _ = g._csr[tech]
    d = kernels.bfs(indptr, indices, g._alive(view), g.index(src))[g.index(node)]
    if d < 0 or not g.is_up(node):
        return "partitioned"
    return "expired" if d > ttl else "dropped"


def deliver_flood(g: LinkGraph, m: NetMessage, frm: str, now: float) -> list:
    """Flood ``m`` from ``frm`` on its (flooding) technology.

    Returns [(node, arrival_ms)] for every node that received the message,
    excluding the sender, ordered by arrival.  Recipient outcomes are
    written to ``m.outcomes``.
    """
    tech = m.tech
    if g.propagation.get(tech) != "flooding":
        raise ValueError(f"{tech!r} is not a flooding technology")
    toward = m.target if m.kind == "unicast" else None
    arrival, hops, parent = _flood_run(g, m, tech, frm, now, toward)
    si = g.index(frm)
    got = [(g._ids[i], float(arrival[i])) for i in np.flatnonzero(arrival >= 0) if i != si]
    got.sort(key=lambda x: (x[1], x[0]))
    if m.kind == "unicast":
        recipients = [m.target]
    elif m.kind == "multicast":
        recipients = list(m.targets)
    else:
        recipients = [nid for nid in g._ids if nid != frm and tech in g.techs_of(nid)]
    if not m.trace:
        m.trace.append((frm, float(now)))
    for r in recipients:
        i = g.index(r)
        if arrival[i] >= 0:
            m.outcomes[r] = "delivered"
        else:
            m.outcomes[r] = _classify_missing(g, tech, frm, r, m.ttl, view=False)
    if m.kind == "unicast" and arrival[g.index(m.target)] >= 0:
        ti = g.index(m.target)
        path = _path_from(g, parent, ti)
        m.trace.extend((g._ids[i], float(arrival[i])) for i in path[1:])
        m.hops += int(hops[ti])
    elif m.kind != "unicast":
        m.trace.extend(got)
    return got


def _walk(g, m, tech, path, t):
    """Forward hop by hop along ``path`` (node ids); returns arrival or None."""
    _, _, lat = g._csr[tech]
    for u, v in zip(path, path[1:]):
        if m.ttl <= 0:
            return None, "expired"
        start = g.offer(u, t)
        if start < 0:
            return None, "dropped"
        m.tx.append((u, tech, float(start)))
        if not g.is_up(v):
            return None, "dropped"  # stale route into a failed node
        t = start + _link_latency(g, tech, u, v)
        m.ttl -= 1
        m.hops += 1
        m.trace.append((v, float(t)))
    return t, "delivered"


def _link_latency(g, tech, u, v):
    a, b = min(u, v), max(u, v)
    return g._links[(a, b, tech)]


def _route_path(g, tech, src, dst):
    dist, nh = g.tables[tech]
    s, d = g.index(src), g.index(dst)
    if dist[s, d] < 0:
        return None
    path = [s]
    while path[-1] != d:
        path.append(int(nh[path[-1], d]))
    return [g._ids[i] for i in path]


def deliver_routed(g: LinkGraph, m: NetMessage, now: float) -> list:
    """Deliver ``m`` over its routing technology using the next-hop tables.

    Unicast follows the table (shortest hops, ties to the smaller node id).
    Multicast and broadcast follow the shortest-path tree rooted at the
    source.  Raises DeliveryFailure when a unicast target is unreachable.
    """
    tech = m.tech
    if g.propagation.get(tech) != "routing":
        raise ValueError(f"{tech!r} is not a routing technology")
    if not m.trace:
        m.trace.append((m.source, float(now)))
    if m.kind == "unicast":
        path = _route_path(g, tech, m.source, m.target)
        if path is None or not g.is_up(m.source):
            m.outcomes[m.target] = "partitioned"
            raise DeliveryFailure(m, g.component(m.source))
        t, outcome = _walk(g, m, tech, path, float(now))
        m.outcomes[m.target] = outcome
        return [(m.target, t)] if t is not None else []
    return _deliver_tree(g, m, tech, now)


def _deliver_tree(g, m, tech, now):
    dist, _ = g.tables[tech]
    s = g.index(m.source)
    n = len(g._ids)
    if m.kind == "broadcast":
        recipients = [nid for nid in g._ids if nid != m.source and tech in g.techs_of(nid)]
    else:
        recipients = list(m.targets)
    ds = dist[s]
    indptr, indices, _ = g._csr[tech]
    # reverse-path tree: parent = smallest-index neighbour one hop closer to the source
    parent = np.full(n, -1, dtype=np.int64)
    for v in range(n):
        if v == s or ds[v] <= 0:
            continue
        for k in range(indptr[v], indptr[v + 1]):
            u = indices[k]
            if ds[u] == ds[v] - 1:
                parent[v] = u
                break
    needed = set()
    for r in recipients:
        i = g.index(r)
        if ds[i] < 0:
            m.outcomes[r] = "partitioned"
            continue
        if ds[i] > m.ttl:
            m.outcomes[r] = "expired"
            continue
        j = i
        while j != s and j not in needed:
            needed.add(j)
            j = int(parent[j])
    arrival = {s: float(now)}
    lost = {}
    order = sorted(needed, key=lambda v: (ds[v], v))
    sent_from = {}
    for v in order:
        u = int(parent[v])
        if u not in arrival:
            lost[v] = lost.get(u, "dropped")
            continue
        if not g.is_up(g._ids[v]):
            lost[v] = "dropped"
            continue
        if u not in sent_from:
            start = g.offer(g._ids[u], arrival[u])
            sent_from[u] = start
            if start >= 0:
                m.tx.append((g._ids[u], tech, float(start)))
        start = sent_from[u]
        if start < 0:
            lost[v] = "dropped"
            continue
        arrival[v] = start + _link_latency(g, tech, g._ids[u], g._ids[v])
    got = []
    for r in recipients:
        if r in m.outcomes:
            continue
        i = g.index(r)
        if i in arrival:
            m.outcomes[r] = "delivered"
            got.append((r, arrival[i]))
        else:
            m.outcomes[r] = lost.get(i, "dropped")
    got.sort(key=lambda x: (x[1], x[0]))
    m.trace.extend(got)
    m.hops = max((int(ds[g.index(r)]) for r, _ in got), default=0)
    return got


def bridge(gateway, m: NetMessage, from_tech: str, to_tech: str, at_ms: float | None = None,
           cost: int = 1) -> NetMessage:
    """Re-emit ``m`` on another technology at a gateway device.

    Same msg-id and payload; TTL reduced by ``cost``; the trace gains the
    gateway after its processing latency.
    """
    techs = gateway.link_techs
    if from_tech not in techs or to_tech not in techs:
        missing = from_tech if from_tech not in techs else to_tech
        raise BridgeError(f"gateway {gateway.id!r} does not support {missing!r}")
    if at_ms is None:
        at_ms = m.trace[-1][1] if m.trace else 0.0
    t = at_ms + gateway.components.processing_ms
    return replace(m, tech=to_tech, ttl=m.ttl - cost, trace=m.trace + [(gateway.id, t)], tx=list(m.tx),
                   outcomes=dict(m.outcomes))


def transmit(g: LinkGraph, m: NetMessage, now: float, devices=None) -> NetMessage:
    """Unicast across technologies, bridging at gateways where needed.

    Returns the final form of the message (after any bridging) with the
    target's outcome recorded; raises DeliveryFailure on partition.
    ``devices`` maps ids to DeviceNode for gateway processing latency.
    """
    plan = g.plan(m.source, m.target)
    if plan is None:
        m.outcomes[m.target] = "partitioned"
        raise DeliveryFailure(m, g.component(m.source))
    cur = m
    t = float(now)
    if not cur.trace:
        cur.trace.append((m.source, t))
    if not plan:
        cur.outcomes[m.target] = "delivered"
        cur.arrival = t
        return cur
    prev_tech = None
    for tech, entry, exit_ in plan:
        if prev_tech is not None:
            if cur.ttl < g.bridge_cost:
                cur.outcomes[m.target] = "expired"
                return cur
            gw = devices[entry] if devices else _BareGateway(entry, g.techs_of(entry), g._processing.get(entry, 0.0))
            cur = bridge(gw, cur, prev_tech, tech, t, g.bridge_cost)
            t = cur.trace[-1][1]
        cur.tech = tech
        if g.propagation[tech] == "routing":
            path = _route_path(g, tech, entry, exit_)
            if path is None:
                cur.outcomes[m.target] = "dropped"
                return cur
            arr, outcome = _walk(g, cur, tech, path, t)
        else:
            sub = replace(cur, kind="unicast", target=exit_, trace=[], outcomes={})
            got = deliver_flood(g, sub, entry, t)
            cur.tx = sub.tx
            outcome = sub.outcomes[exit_]
            arr = dict(got).get(exit_) if outcome == "delivered" else None
            if arr is not None:
                cur.trace.extend(sub.trace[1:])
                cur.hops += sub.hops
                cur.ttl -= sub.hops
        if arr is None:
            cur.outcomes[m.target] = outcome
            return cur
        t = arr
        prev_tech = tech
    cur.outcomes[m.target] = "delivered"
    cur.arrival = t
    return cur


@dataclass(frozen=True)
class _BareGateway:
    id: str
    link_techs: frozenset
    processing_ms: float

    @property
    def components(self):
        return self


def rebuild_routes(g: LinkGraph, change) -> LinkGraph:
    """Apply a topology change (idempotently) and recompute every route table."""
    if isinstance(change, NodeLeft):
        g._down.add(change.node)
        g._seen.pop(change.node, None)
    elif isinstance(change, NodeUp):
        g._down.discard(change.node)
    elif isinstance(change, NodeJoined):
        g._down.discard(change.node)
        if change.node not in g._idx:
            g._ids = sorted(set(g._ids) | {change.node})
        if change.techs:
            g._node_techs[change.node] = frozenset(change.techs) | g._node_techs.get(change.node, frozenset())
        for nbr, tech, lat in change.links:
            g._links[(min(change.node, nbr), max(change.node, nbr), tech)] = float(lat)
        g._build()
    elif isinstance(change, LinkChanged):
        key = (min(change.a, change.b), max(change.a, change.b), change.tech)
        if change.latency_ms is None:
            g._links.pop(key, None)
        else:
            g._links[key] = float(change.latency_ms)
        g._build()
    elif change is not None:
        raise TypeError(f"unknown topology change {change!r}")
    g.rebuild()
    return g


def inject_load(g: LinkGraph, node: str, offered_mps: float, duration_ms: float, *, start_ms: float = 0.0,
                seed: int = 0, arrivals: str = "deterministic", bin_ms: float = 100.0) -> CongestionEffect:
    """Offered background load at one node's queue, starting from idle.

    Pure with respect to ``g``: the node's capacity and buffer are read but
    its live queue is untouched (the simulator schedules the same arrivals
    with ``LinkGraph.add_background``).
    """
    times = load_arrivals(offered_mps, duration_ms, start_ms, seed, arrivals)
    waits, _ = kernels.queue_run(np.ascontiguousarray(times, dtype=np.float64), float(start_ms),
                                 g.service_ms(node), g.buffer)
    ids = [f"load:{node}:{k}" for k in range(len(times))]
    dropped = [ids[k] for k in np.flatnonzero(np.isnan(waits))]
    return CongestionEffect(node, offered_mps, g.capacity(node), times, waits, dropped, bin_ms)
