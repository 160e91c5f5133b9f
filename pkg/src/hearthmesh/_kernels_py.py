"""Pure-Python graph and queue kernels.

Reference implementation of the routines in ``_ckernels.pyx``.  Both
modules must produce bit-identical results; ``kernels`` picks one at
import time.

Graphs are CSR adjacency arrays over node indices ``0..n-1`` (indices are
assigned in sorted-id order, so "smaller index" means "smaller id").
"""
import heapq
import math

import numpy as np

_EPS = 1e-9


def bfs(indptr, indices, alive, src):
    """Hop distances from ``src`` over alive nodes; -1 when unreachable."""
    n = len(indptr) - 1
    dist = np.full(n, -1, dtype=np.int32)
    if not alive[src]:
        return dist
    ip = indptr.tolist()
    ix = indices.tolist()
    al = alive.tolist()
    d = [-1] * n
    d[src] = 0
    frontier = [src]
    while frontier:
        nxt = []
        for u in frontier:
            du = d[u] + 1
            for k in range(ip[u], ip[u + 1]):
                v = ix[k]
                if al[v] and d[v] < 0:
                    d[v] = du
                    nxt.append(v)
        frontier = nxt
    dist[:] = d
    return dist


def all_pairs(indptr, indices, alive):
    """All-pairs hop distances and next-hop table.

    ``nexthop[u, v]`` is the smallest-index neighbour of ``u`` lying on a
    shortest path to ``v``; ``nexthop[u, u] == u``; -1 when unreachable.
    """
    n = len(indptr) - 1
    ip = indptr.tolist()
    ix = indices.tolist()
    al = alive.tolist()
    dist = [[-1] * n for _ in range(n)]
    for s in range(n):
        if not al[s]:
            continue
        d = dist[s]
        d[s] = 0
        frontier = [s]
        while frontier:
            nxt = []
            for u in frontier:
                du = d[u] + 1
                for k in range(ip[u], ip[u + 1]):
                    v = ix[k]
                    if al[v] and d[v] < 0:
                        d[v] = du
                        nxt.append(v)
            frontier = nxt
    nh = [[-1] * n for _ in range(n)]
    for u in range(n):
        if not al[u]:
            continue
        du = dist[u]
        row = nh[u]
        row[u] = u
        for v in range(n):
            duv = du[v]
            if duv <= 0:
                continue
            best = -1
            for k in range(ip[u], ip[u + 1]):
                w = ix[k]
                if al[w] and dist[w][v] == duv - 1 and (best < 0 or w < best):
                    best = w
            row[v] = best
    return np.array(dist, dtype=np.int32).reshape(n, n), np.array(nh, dtype=np.int32).reshape(n, n)


def _in_system(busy, service, t):
    if busy <= t:
        return 0
    return math.ceil((busy - t) / service - _EPS)


def _advance(busy, bg_indptr, bg_times, bg_ptr, bg_wait, service, buffer, u, t):
    # background arrivals at or before t are served first (FIFO)
    end = bg_indptr[u + 1]
    p = bg_ptr[u]
    b = busy[u]
    s = service[u]
    while p < end and bg_times[p] <= t:
        a = bg_times[p]
        if _in_system(b, s, a) < buffer:
            start = b if b > a else a
            b = start + s
            bg_wait[p] = start - a
        else:
            bg_wait[p] = math.nan
        p += 1
    bg_ptr[u] = p
    busy[u] = b


def queue_offer(busy, bg_indptr, bg_times, bg_ptr, bg_wait, service, buffer, u, t):
    """Offer one message to node ``u``'s FIFO at time ``t``.

    Returns the service start time, or -1.0 when the buffer is full.
    """
    _advance(busy, bg_indptr, bg_times, bg_ptr, bg_wait, service, buffer, u, t)
    b = float(busy[u])
    s = float(service[u])
    if _in_system(b, s, t) >= buffer:
        return -1.0
    start = b if b > t else t
    busy[u] = start + s
    return start


def queue_advance(busy, bg_indptr, bg_times, bg_ptr, bg_wait, service, buffer, u, t):
    _advance(busy, bg_indptr, bg_times, bg_ptr, bg_wait, service, buffer, u, t)


def queue_run(times, busy0, service, buffer):
    """Run a sorted arrival stream through an initially ``busy0`` FIFO.

    Returns (waits, busy_end); dropped arrivals have wait NaN.
    """
    waits = np.empty(len(times), dtype=np.float64)
    b = float(busy0)
    s = float(service)
    for i, a in enumerate(times.tolist()):
        if _in_system(b, s, a) < buffer:
            start = b if b > a else a
            b = start + s
            waits[i] = start - a
        else:
            waits[i] = math.nan
    return waits, b


def flood(indptr, indices, lat, alive, seen, busy, bg_indptr, bg_times, bg_ptr,
          bg_wait, service, buffer, src, ttl, now, toward):
    """TTL-bounded flood with duplicate suppression.

    Copies are processed in arrival order (ties: larger remaining ttl, then
    smaller node, then smaller parent); each node handles a message once.
    ``seen`` marks nodes that already hold the message id and therefore
    ignore it.  When ``toward`` is a distance field (directed flooding),
    nodes forward only to neighbours strictly closer to the target, and the
    target itself does not forward.

    Returns (arrival, hops, parent, forwarded, qdrop) arrays.
    """
    n = len(indptr) - 1
    arrival = np.full(n, -1.0)
    hops = np.full(n, -1, dtype=np.int32)
    parent = np.full(n, -1, dtype=np.int32)
    forwarded = np.zeros(n, dtype=np.uint8)
    qdrop = np.zeros(n, dtype=np.uint8)
    if not alive[src]:
        return arrival, hops, parent, forwarded, qdrop
    ip = indptr.tolist()
    ix = indices.tolist()
    lt = lat.tolist()
    al = alive.tolist()
    done = [False] * n
    directed = toward is not None
    heap = [(float(now), -int(ttl), src, -1, 0)]
    while heap:
        t, negrem, u, p, h = heapq.heappop(heap)
        if done[u]:
            continue
        if u != src and seen[u]:
            continue
        done[u] = True
        arrival[u] = t
        parent[u] = p
        hops[u] = h
        rem = -negrem
        if rem <= 0:
            continue
        if directed and toward[u] == 0:
            continue
        start = queue_offer(busy, bg_indptr, bg_times, bg_ptr, bg_wait, service, buffer, u, t)
        if start < 0:
            qdrop[u] = 1
            continue
        forwarded[u] = 1
        for k in range(ip[u], ip[u + 1]):
            v = ix[k]
            if not al[v] or done[v]:
                continue
            if directed and not (0 <= toward[v] < toward[u]):
                continue
            heapq.heappush(heap, (start + lt[k], -(rem - 1), v, u, h + 1))
    return arrival, hops, parent, forwarded, qdrop
