"""numba kernels: keyed counter hash, schedule recursion, walk construction and queries."""
import math

import numpy as np
from numba import njit

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 2.0 ** -53
_GRID_INV = 2.0 ** 30
_GRID = 2.0 ** -30
_INF = np.inf


@njit(cache=True, nogil=True, inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True, inline="always")
def site_key(base, site):
    zz = np.uint64((site << 1) ^ (site >> 63))
    return mix64(base ^ mix64(zz + _GAMMA))


@njit(cache=True, nogil=True, inline="always")
def unit(key, k):
    """Uniform on (0, 1] at counter ``k`` of the stream keyed by ``key``."""
    x = mix64(key + (np.uint64(k) + _ONE) * _GAMMA)
    return (float(x >> _S11) + 1.0) * _INV53


@njit(cache=True, nogil=True, inline="always")
def qexp(key, k):
    e = -math.log(unit(key, k))
    return math.ceil(e * _GRID_INV) * _GRID


@njit(cache=True, nogil=True, inline="always")
def normal(key, k):
    u1 = unit(key, 2 * k)
    u2 = unit(key, 2 * k + 1)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@njit(cache=True, nogil=True, inline="always")
def clock_increment(key, m, k, given):
    """k-th clock increment of walk offset m: an injected value if present, else the hash stream."""
    if m < given.shape[0] and k < given.shape[1]:
        g = given[m, k]
        if not math.isnan(g):
            return g
    return qexp(key, k)


@njit(cache=True, nogil=True)
def site_exponentials(base, site, n):
    key = site_key(base, site)
    out = np.empty(n)
    for k in range(n):
        out[k] = qexp(key, k)
    return out


@njit(cache=True, nogil=True)
def site_clocks(base, site, n):
    key = site_key(base, site)
    out = np.empty(n)
    acc = 0.0
    for k in range(n):
        acc += qexp(key, k)
        out[k] = acc
    return out


# ---------------------------------------------------------------------------
# schedule recursion


@njit(cache=True, nogil=True)
def schedule_kernel(y, base, label0, given):
    """Full triangular A/D table for cars ``label0 .. label0+n-1``.

    Entry ``[i, j]`` (0-based offsets) is filled for ``i <= j``.  Returns
    ``(A, D, stopped, ties)``.
    """
    n = y.shape[0]
    A = np.full((n, n), np.nan)
    D = np.full((n, n), np.nan)
    stopped = np.zeros((n, n), dtype=np.bool_)
    clocks = np.zeros((n, n))
    for i in range(n):
        key = site_key(base, label0 + i)
        acc = 0.0
        for k in range(n - i):
            acc += clock_increment(key, i, k, given)
            clocks[i, i + k] = acc
    ties = 0
    for j in range(n):
        A[j, j] = 0.0
        D[j, j] = clocks[j, j]
        stopped[j, j] = True
        for i in range(j - 1, -1, -1):
            a = D[i + 1, j] + y[i + 1] - y[i]
            A[i, j] = a
            prev = D[i, j - 1]
            if a > prev:
                D[i, j] = a
            elif a == prev:
                D[i, j] = a
                ties += 1
            else:
                D[i, j] = clocks[i, j]
                stopped[i, j] = True
    return A, D, stopped, ties


# ---------------------------------------------------------------------------
# coalescing walks
#
# Walk m (0-based offset, label label0+m) stores its own leave times
# T(m, m), ..., T(m, m+count[m]-1) in jumps[start[m]:start[m]+count[m]].
# If merged[m], T(m, j) = T(m+1, j) for j >= m+count[m]; otherwise the walk
# ran past the cutoff and T(m, j) is beyond the domain.  skip[m] is the least
# o > m whose coalescence level exceeds that of m; chasing skip pointers is
# valid for both level and position queries (path compression).
# Index n is the ceiling walk: constant at its starting level.


@njit(cache=True, nogil=True, inline="always")
def _coal_level(o, n, count, merged):
    if o == n or not merged[o]:
        return np.iinfo(np.int64).max
    return o + count[o]


@njit(cache=True, nogil=True)
def build_walks_kernel(y, base, label0, cutoff, given):
    n = y.shape[0]
    start = np.zeros(n + 1, dtype=np.int64)
    count = np.zeros(n + 1, dtype=np.int64)
    merged = np.zeros(n + 1, dtype=np.bool_)
    skip = np.full(n + 1, n, dtype=np.int64)
    cap = max(16, 4 * n)
    jumps = np.empty(cap)
    used = 0
    ties = 0
    for m in range(n - 1, -1, -1):
        key = site_key(base, label0 + m)
        start[m] = used
        acc = clock_increment(key, m, 0, given)
        x = y[m] + acc
        if x >= cutoff:
            continue
        if used == cap:
            cap *= 2
            tmp = np.empty(cap)
            tmp[:used] = jumps[:used]
            jumps = tmp
        jumps[used] = x
        used += 1
        cnt = 1
        o = m + 1
        while True:
            j = m + cnt
            while _coal_level(o, n, count, merged) <= j:
                o = skip[o]
            if o == n:
                tq = _INF
            elif j < o + count[o]:
                tq = jumps[start[o] + j - o]
            else:
                tq = _INF
            if x <= tq:
                if x == tq:
                    ties += 1
                merged[m] = True
                skip[m] = o
                break
            acc += clock_increment(key, m, cnt, given)
            x = y[m] + acc
            if x >= cutoff:
                break
            if used == cap:
                cap *= 2
                tmp = np.empty(cap)
                tmp[:used] = jumps[:used]
                jumps = tmp
            jumps[used] = x
            used += 1
            cnt += 1
        count[m] = cnt
    start[n] = used
    return start, count, merged, skip, jumps[:used].copy(), ties


@njit(cache=True, nogil=True)
def t_query(m, j, y_ext, start, count, merged, skip, jumps):
    """T(m, j) in offset coordinates; +inf when beyond the cutoff.

    ``y_ext`` holds positions of walks 0..n (index n: the ceiling car, or
    +inf when unknown).  Requires ``j >= m - 1``.
    """
    n = count.shape[0] - 1
    if j == m - 1:
        return y_ext[m]
    o = m
    while _coal_level(o, n, count, merged) <= j:
        o = skip[o]
    if o == n:
        return _INF
    if j < o + count[o]:
        return jumps[start[o] + j - o]
    return _INF


@njit(cache=True, nogil=True)
def level_query(m, x, y_ext, start, count, merged, skip, jumps):
    """B^m_x in offset levels (walk m starts at level m)."""
    n = count.shape[0] - 1
    if m == n or x < y_ext[m]:
        return m
    o = m
    while True:
        if o == n:
            return n
        c = count[o]
        s = start[o]
        if merged[o] and x >= jumps[s + c - 1]:
            o = skip[o]
            continue
        lo = 0
        hi = c
        while lo < hi:
            mid = (lo + hi) // 2
            if jumps[s + mid] <= x:
                lo = mid + 1
            else:
                hi = mid
        return o + lo


@njit(cache=True, nogil=True)
def t_table(y_ext, start, count, merged, skip, jumps):
    """T(i, j) for all 0 <= i <= j < n.

    Filled top-down: a row holds the walk's own jumps, then (once it has
    coalesced) the row of the walk above it; +inf past the cutoff.
    """
    n = count.shape[0] - 1
    out = np.full((n, n), np.nan)
    for i in range(n - 1, -1, -1):
        c = min(count[i], n - i)
        s = start[i]
        for k in range(c):
            out[i, i + k] = jumps[s + k]
        follow = merged[i] and i + 1 < n
        for j in range(i + c, n):
            out[i, j] = out[i + 1, j] if follow else _INF
    return out


@njit(cache=True, nogil=True)
def jams_kernel(lo, hi, t, y_ext, start, count, merged, skip, jumps):
    """Masses B^{i+1}_{y_i+t} - B^i_{y_i+t} for walks lo..hi-1."""
    out = np.zeros(hi - lo, dtype=np.int64)
    for i in range(lo, hi):
        x = y_ext[i] + t
        out[i - lo] = (level_query(i + 1, x, y_ext, start, count, merged, skip, jumps)
                       - level_query(i, x, y_ext, start, count, merged, skip, jumps))
    return out


@njit(cache=True, nogil=True)
def car_state(j, t, lowest, y_ext, start, count, merged, skip, jumps):
    """(walk offset i, position, speed, status) of car j at time t.

    status 0: ok; 1: the car has passed below walk ``lowest`` (unknown).
    The arrival time T(i, j) - y_{i-1} at the cell below grows as i decreases,
    so the current cell is found by bisection.
    """
    i = j
    if j > lowest and t >= t_query(j, j, y_ext, start, count, merged, skip, jumps) - y_ext[j - 1]:
        # largest i in (lowest, j) whose arrival below comes after t, else lowest
        lo = lowest
        hi = j
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if t < t_query(mid, j, y_ext, start, count, merged, skip, jumps) - y_ext[mid - 1]:
                lo = mid
            else:
                hi = mid
        i = lo
    T = t_query(i, j, y_ext, start, count, merged, skip, jumps)
    if t < T - y_ext[i]:
        return i, y_ext[i], 0, 0
    if i == lowest:
        return i, T - t, 1, 1
    return i, T - t, 1, 0


@njit(cache=True, nogil=True)
def moving_kernel(lo, hi, t, y_ext, start, count, merged, skip, jumps):
    """Positions of moving cars in (y_{i-1}, y_i] for walks lo..hi-1 (lo >= 1)."""
    buf = np.empty(64)
    used = 0
    for i in range(lo, hi):
        a = y_ext[i - 1] + t
        b = y_ext[i] + t
        l1 = level_query(i, a, y_ext, start, count, merged, skip, jumps)
        l2 = level_query(i, b, y_ext, start, count, merged, skip, jumps)
        for lv in range(l1, l2):
            T = t_query(i, lv, y_ext, start, count, merged, skip, jumps)
            if T > a and T <= b:
                if used == buf.shape[0]:
                    tmp = np.empty(2 * used)
                    tmp[:used] = buf[:used]
                    buf = tmp
                buf[used] = T - t
                used += 1
    return buf[:used].copy()
