"""Numba kernels for the hot simulation loops.

All kernels take an explicit ``numpy.random.Generator`` and release the GIL,
so replicate batches can be spread over a thread pool.
"""

import numba as nb
import numpy as np


@nb.njit(nogil=True, cache=True)
def _bit_test(bits, i):
    return (bits[i >> 6] >> np.uint64(i & 63)) & np.uint64(1)


@nb.njit(nogil=True, cache=True)
def _bit_clear(bits, i):
    bits[i >> 6] &= ~(np.uint64(1) << np.uint64(i & 63))


@nb.njit(nogil=True, cache=True)
def torus_chunk(nbr, cum, rng, pos, n_max, target, remaining, first, jump0, dirs, stop_on_target):
    """Advance the embedded jump chain by at most ``n_max`` jumps.

    ``target`` is a bitset of target sites not hit yet; ``remaining`` counts
    its set bits. ``first`` (length 0 to disable) receives the global jump
    index of the first visit to each site still marked -1. ``dirs``
    (length 0 to disable) receives the direction index of every jump.

    Returns ``(jumps, pos, remaining, last_hit)``.
    """
    last_hit = -1
    track = first.shape[0] > 0
    rec = dirs.shape[0] > 0
    k = 0
    while k < n_max:
        if stop_on_target and remaining == 0:
            break
        u = rng.random()
        di = np.searchsorted(cum, u, side="right")
        if di >= cum.shape[0]:
            di = cum.shape[0] - 1
        pos = nbr[pos, di]
        if rec:
            dirs[k] = di
        k += 1
        if track and first[pos] == -1:
            first[pos] = jump0 + k
        if remaining > 0 and _bit_test(target, pos):
            _bit_clear(target, pos)
            remaining -= 1
            last_hit = pos
    return k, pos, remaining, last_hit


@nb.njit(nogil=True, cache=True)
def torus_cover_count(nbr, cum, rng, pos, target, remaining, budget):
    """Jumps until every target site is hit; -1 when the budget runs out."""
    k = 0
    last = -1
    while remaining > 0:
        if k >= budget:
            return -1, last
        u = rng.random()
        di = np.searchsorted(cum, u, side="right")
        if di >= cum.shape[0]:
            di = cum.shape[0] - 1
        pos = nbr[pos, di]
        k += 1
        if _bit_test(target, pos):
            _bit_clear(target, pos)
            remaining -= 1
            last = pos
    return k, last


@nb.njit(nogil=True, cache=True)
def torus_visit_marks(nbr, cum, rng, pos, n_jumps, visited):
    """Run exactly ``n_jumps`` jumps, setting ``visited[site] = 1`` on the way."""
    visited[pos] = 1
    for _ in range(n_jumps):
        u = rng.random()
        di = np.searchsorted(cum, u, side="right")
        if di >= cum.shape[0]:
            di = cum.shape[0] - 1
        pos = nbr[pos, di]
        visited[pos] = 1
    return pos


@nb.njit(nogil=True, cache=True)
def torus_first_visit(nbr, cum, rng, pos, budget, first, n_record):
    """Jump index of the first visit to every site, stopping once ``n_record``
    sites have been seen. ``first`` must be initialised to -1."""
    first[pos] = 0
    seen = 1
    k = 0
    while seen < n_record:
        if k >= budget:
            return -1
        u = rng.random()
        di = np.searchsorted(cum, u, side="right")
        if di >= cum.shape[0]:
            di = cum.shape[0] - 1
        pos = nbr[pos, di]
        k += 1
        if first[pos] == -1:
            first[pos] = k
            seen += 1
    return k


@nb.njit(nogil=True, cache=True)
def torus_hit_entry(nbr, cum, rng, pos, in_target, budget):
    """Jumps until the walk sits in ``in_target``; returns (jumps, site)."""
    k = 0
    while not in_target[pos]:
        if k >= budget:
            return -1, pos
        u = rng.random()
        di = np.searchsorted(cum, u, side="right")
        if di >= cum.shape[0]:
            di = cum.shape[0] - 1
        pos = nbr[pos, di]
        k += 1
    return k, pos


@nb.njit(nogil=True, cache=True)
def zd_visits(steps, cum, rng, x, horizon):
    """Visits to 0 at jump indices 1..horizon by a Z^d walk started at ``x``."""
    d = x.shape[0]
    p = x.copy()
    count = 0
    for _ in range(horizon):
        u = rng.random()
        di = np.searchsorted(cum, u, side="right")
        if di >= cum.shape[0]:
            di = cum.shape[0] - 1
        zero = True
        for j in range(d):
            p[j] += steps[di, j]
            if p[j] != 0:
                zero = False
        if zero:
            count += 1
    return count


@nb.njit(nogil=True, cache=True)
def zd_hit_or_exit(steps, cum, rng, x, r_in, r_out, budget):
    """Run a Z^d walk from ``x`` until it enters B(0, r_in) or leaves
    B(0, r_out) (l-infinity balls). Returns (status, jumps, final point)
    with status 1 for a hit, 0 for an exit, -1 when out of budget."""
    d = x.shape[0]
    p = x.copy()
    k = 0
    while True:
        m = 0
        for j in range(d):
            a = abs(p[j])
            if a > m:
                m = a
        if m <= r_in:
            return 1, k, p
        if m > r_out:
            return 0, k, p
        if k >= budget:
            return -1, k, p
        u = rng.random()
        di = np.searchsorted(cum, u, side="right")
        if di >= cum.shape[0]:
            di = cum.shape[0] - 1
        for j in range(d):
            p[j] += steps[di, j]
        k += 1


@nb.njit(nogil=True, cache=True)
def zd_torus_hit_before(steps, cum, rng, x, r_in, n_side, horizon):
    """Torus variant: does the walk enter B(0, r_in) mod ``n_side`` within
    ``horizon`` jumps? Returns 1 or 0."""
    d = x.shape[0]
    p = x.copy()
    for k in range(horizon + 1):
        m = 0
        for j in range(d):
            a = p[j] % n_side
            if a > n_side - a:
                a = n_side - a
            if a > m:
                m = a
        if m <= r_in:
            return 1
        if k == horizon:
            break
        u = rng.random()
        di = np.searchsorted(cum, u, side="right")
        if di >= cum.shape[0]:
            di = cum.shape[0] - 1
        for j in range(d):
            p[j] += steps[di, j]
    return 0


@nb.njit(nogil=True, cache=True)
def _interlacement_path(steps, cum, rng, start_k, k_index, box_r, exit_r, pts, ginv, gtab, gtab_r,
                        resample, budget, row, b):
    d = pts.shape[1]
    nk = pts.shape[0]
    side = 2 * box_r + 1
    gside = 2 * gtab_r + 1
    p = pts[start_k].copy()
    row[start_k] = 1
    k = 0
    while True:
        if k >= budget:
            return -1
        u = rng.random()
        di = np.searchsorted(cum, u, side="right")
        if di >= cum.shape[0]:
            di = cum.shape[0] - 1
        m = 0
        for j in range(d):
            p[j] += steps[di, j]
            a = abs(p[j])
            if a > m:
                m = a
        k += 1
        if m <= box_r:
            flat = 0
            for j in range(d):
                flat = flat * side + (p[j] + box_r)
            w = k_index[flat]
            if w >= 0:
                row[w] = 1
            continue
        if m <= exit_r:
            continue
        if not resample:
            return k
        # harmonic measure of the window seen from p
        for z in range(nk):
            flat = 0
            for j in range(d):
                flat = flat * gside + (p[j] - pts[z, j] + gtab_r)
            b[z] = gtab[flat]
        hm = ginv @ b
        total = 0.0
        for z in range(nk):
            if hm[z] < 0.0:
                hm[z] = 0.0
            total += hm[z]
        u = rng.random()
        if u >= total:
            return k
        acc = 0.0
        pick = nk - 1
        for z in range(nk):
            acc += hm[z]
            if u < acc:
                pick = z
                break
        for j in range(d):
            p[j] = pts[pick, j]
        row[pick] = 1


@nb.njit(nogil=True, cache=True)
def interlacement_window(steps, cum, rng, starts, labels, k_index, box_r, exit_r, pts, ginv, gtab,
                         gtab_r, resample, budget, first_label, visits):
    """Traces of the interlacement trajectories meeting a finite window.

    Coordinates are relative to the window centre; ``pts`` lists the
    window points and ``k_index`` maps B(0, box_r) (C-order, side
    2*box_r+1) to window indices or -1. Trajectory ``t`` starts at window
    point ``starts[t]`` and carries label ``labels[t]`` (ascending).

    Once a walk is outside B(0, exit_r) it either stops (``resample``
    false, truncation) or decides whether it ever comes back: the return
    probability is sum_z g(y - z) e_K(z), and the entry point follows the
    harmonic measure ``ginv @ g(y - .)``, with g read from the table
    ``gtab`` on B(0, gtab_r). With ``resample`` the traces are exact.

    ``visits[t, z]`` is set to 1 when trajectory t visits point z and
    ``first_label[z]`` receives the smallest label visiting z. Returns the
    total number of jumps, or -1 on budget exhaustion.
    """
    nk = pts.shape[0]
    b = np.empty(nk)
    total = 0
    for t in range(starts.shape[0]):
        row = visits[t]
        k = _interlacement_path(steps, cum, rng, starts[t], k_index, box_r, exit_r, pts, ginv,
                                gtab, gtab_r, resample, budget, row, b)
        if k < 0:
            return -1
        total += k
        for z in range(nk):
            if row[z] and labels[t] < first_label[z]:
                first_label[z] = labels[t]
    return total
