# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled graph and queue kernels; see ``_kernels_py`` for semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport ceil, NAN

cnp.import_array()

cdef double _EPS = 1e-9


def bfs(const int[::1] indptr, const int[::1] indices, const unsigned char[::1] alive, int src):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    dist_arr = np.full(n, -1, dtype=np.int32)
    cdef int[::1] dist = dist_arr
    if not alive[src]:
        return dist_arr
    cdef int[::1] q = np.empty(n, dtype=np.int32)
    cdef Py_ssize_t head = 0, tail = 0
    cdef int u, v, k
    dist[src] = 0
    q[tail] = src
    tail += 1
    while head < tail:
        u = q[head]
        head += 1
        for k in range(indptr[u], indptr[u + 1]):
            v = indices[k]
            if alive[v] and dist[v] < 0:
                dist[v] = dist[u] + 1
                q[tail] = v
                tail += 1
    return dist_arr


def all_pairs(const int[::1] indptr, const int[::1] indices, const unsigned char[::1] alive):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    dist_arr = np.full((n, n), -1, dtype=np.int32)
    nh_arr = np.full((n, n), -1, dtype=np.int32)
    cdef int[:, ::1] dist = dist_arr
    cdef int[:, ::1] nh = nh_arr
    cdef int[::1] q = np.empty(max(n, 1), dtype=np.int32)
    cdef Py_ssize_t head, tail
    cdef int s, u, v, w, k, duv, best
    for s in range(n):
        if not alive[s]:
            continue
        dist[s, s] = 0
        head = 0
        tail = 1
        q[0] = s
        while head < tail:
            u = q[head]
            head += 1
            for k in range(indptr[u], indptr[u + 1]):
                v = indices[k]
                if alive[v] and dist[s, v] < 0:
                    dist[s, v] = dist[s, u] + 1
                    q[tail] = v
                    tail += 1
    for u in range(n):
        if not alive[u]:
            continue
        nh[u, u] = u
        for v in range(n):
            duv = dist[u, v]
            if duv <= 0:
                continue
            best = -1
            for k in range(indptr[u], indptr[u + 1]):
                w = indices[k]
                if alive[w] and dist[w, v] == duv - 1 and (best < 0 or w < best):
                    best = w
            nh[u, v] = best
    return dist_arr, nh_arr


cdef inline long _in_system(double busy, double service, double t) nogil:
    if busy <= t:
        return 0
    return <long>ceil((busy - t) / service - _EPS)


cdef void _advance(double[::1] busy, const long long[::1] bg_indptr, const double[::1] bg_times,
                   long long[::1] bg_ptr, double[::1] bg_wait, const double[::1] service,
                   long buffer, int u, double t) noexcept nogil:
    cdef long long end = bg_indptr[u + 1]
    cdef long long p = bg_ptr[u]
    cdef double b = busy[u]
    cdef double s = service[u]
    cdef double a, start
    while p < end and bg_times[p] <= t:
        a = bg_times[p]
        if _in_system(b, s, a) < buffer:
            start = b if b > a else a
            b = start + s
            bg_wait[p] = start - a
        else:
            bg_wait[p] = NAN
        p += 1
    bg_ptr[u] = p
    busy[u] = b


cdef double _offer(double[::1] busy, const long long[::1] bg_indptr, const double[::1] bg_times,
                   long long[::1] bg_ptr, double[::1] bg_wait, const double[::1] service,
                   long buffer, int u, double t) noexcept nogil:
    _advance(busy, bg_indptr, bg_times, bg_ptr, bg_wait, service, buffer, u, t)
    cdef double b = busy[u]
    cdef double s = service[u]
    cdef double start
    if _in_system(b, s, t) >= buffer:
        return -1.0
    start = b if b > t else t
    busy[u] = start + s
    return start


def queue_offer(double[::1] busy, const long long[::1] bg_indptr, const double[::1] bg_times,
                long long[::1] bg_ptr, double[::1] bg_wait, const double[::1] service,
                long buffer, int u, double t):
    return _offer(busy, bg_indptr, bg_times, bg_ptr, bg_wait, service, buffer, u, t)


def queue_advance(double[::1] busy, const long long[::1] bg_indptr, const double[::1] bg_times,
                  long long[::1] bg_ptr, double[::1] bg_wait, const double[::1] service,
                  long buffer, int u, double t):
    _advance(busy, bg_indptr, bg_times, bg_ptr, bg_wait, service, buffer, u, t)


def queue_run(const double[::1] times, double busy0, double service, long buffer):
    cdef Py_ssize_t m = times.shape[0]
    waits_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] waits = waits_arr
    cdef double b = busy0
    cdef double a, start
    cdef Py_ssize_t i
    for i in range(m):
        a = times[i]
        if _in_system(b, service, a) < buffer:
            start = b if b > a else a
            b = start + service
            waits[i] = start - a
        else:
            waits[i] = NAN
    return waits_arr, b


# binary min-heap over (time, negrem, node, parent) with hops as payload
cdef inline bint _less(double[::1] ht, int[::1] hr, int[::1] hn, int[::1] hp,
                       Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    if ht[i] != ht[j]:
        return ht[i] < ht[j]
    if hr[i] != hr[j]:
        return hr[i] < hr[j]
    if hn[i] != hn[j]:
        return hn[i] < hn[j]
    return hp[i] < hp[j]


cdef inline void _swap(double[::1] ht, int[::1] hr, int[::1] hn, int[::1] hp, int[::1] hh,
                       Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    cdef double td = ht[i]
    cdef int ti
    ht[i] = ht[j]; ht[j] = td
    ti = hr[i]; hr[i] = hr[j]; hr[j] = ti
    ti = hn[i]; hn[i] = hn[j]; hn[j] = ti
    ti = hp[i]; hp[i] = hp[j]; hp[j] = ti
    ti = hh[i]; hh[i] = hh[j]; hh[j] = ti


def flood(const int[::1] indptr, const int[::1] indices, const double[::1] lat,
          const unsigned char[::1] alive, const unsigned char[::1] seen,
          double[::1] busy, const long long[::1] bg_indptr, const double[::1] bg_times,
          long long[::1] bg_ptr, double[::1] bg_wait, const double[::1] service,
          long buffer, int src, int ttl, double now, toward):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    arrival_arr = np.full(n, -1.0)
    hops_arr = np.full(n, -1, dtype=np.int32)
    parent_arr = np.full(n, -1, dtype=np.int32)
    fwd_arr = np.zeros(n, dtype=np.uint8)
    qdrop_arr = np.zeros(n, dtype=np.uint8)
    if not alive[src]:
        return arrival_arr, hops_arr, parent_arr, fwd_arr, qdrop_arr
    cdef double[::1] arrival = arrival_arr
    cdef int[::1] hops = hops_arr
    cdef int[::1] parent = parent_arr
    cdef unsigned char[::1] fwd = fwd_arr
    cdef unsigned char[::1] qdrop = qdrop_arr
    cdef unsigned char[::1] done = np.zeros(n, dtype=np.uint8)
    cdef bint directed = toward is not None
    cdef int[::1] tw
    if directed:
        tw = np.ascontiguousarray(toward, dtype=np.int32)
    cdef Py_ssize_t cap = indptr[n] + 1
    cdef double[::1] ht = np.empty(cap, dtype=np.float64)
    cdef int[::1] hr = np.empty(cap, dtype=np.int32)
    cdef int[::1] hn = np.empty(cap, dtype=np.int32)
    cdef int[::1] hp = np.empty(cap, dtype=np.int32)
    cdef int[::1] hh = np.empty(cap, dtype=np.int32)
    cdef Py_ssize_t size = 0, i, c, l, r
    cdef double t, start
    cdef int rem, u, p, h, k, v

    ht[0] = now; hr[0] = -ttl; hn[0] = src; hp[0] = -1; hh[0] = 0
    size = 1
    while size > 0:
        t = ht[0]; rem = -hr[0]; u = hn[0]; p = hp[0]; h = hh[0]
        size -= 1
        if size > 0:
            _swap(ht, hr, hn, hp, hh, 0, size)
            i = 0
            while True:
                l = 2 * i + 1
                r = l + 1
                c = i
                if l < size and _less(ht, hr, hn, hp, l, c):
                    c = l
                if r < size and _less(ht, hr, hn, hp, r, c):
                    c = r
                if c == i:
                    break
                _swap(ht, hr, hn, hp, hh, i, c)
                i = c
        if done[u]:
            continue
        if u != src and seen[u]:
            continue
        done[u] = 1
        arrival[u] = t
        parent[u] = p
        hops[u] = h
        if rem <= 0:
            continue
        if directed and tw[u] == 0:
            continue
        start = _offer(busy, bg_indptr, bg_times, bg_ptr, bg_wait, service, buffer, u, t)
        if start < 0:
            qdrop[u] = 1
            continue
        fwd[u] = 1
        for k in range(indptr[u], indptr[u + 1]):
            v = indices[k]
            if not alive[v] or done[v]:
                continue
            if directed and not (tw[v] >= 0 and tw[v] < tw[u]):
                continue
            i = size
            ht[i] = start + lat[k]; hr[i] = -(rem - 1); hn[i] = v; hp[i] = u; hh[i] = h + 1
            size += 1
            while i > 0:
                c = (i - 1) // 2
                if _less(ht, hr, hn, hp, i, c):
                    _swap(ht, hr, hn, hp, hh, i, c)
                    i = c
                else:
                    break
    return arrival_arr, hops_arr, parent_arr, fwd_arr, qdrop_arr
