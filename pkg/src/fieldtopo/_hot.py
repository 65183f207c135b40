"""Hot numeric kernels.

Everything here is nopython-compatible and wrapped by
:func:`fieldtopo._backend.maybe_njit`, so the identical source runs either
numba-compiled or as plain Python (selected through ``FIELDTOPO_BACKEND``).
Inputs are flat numpy arrays; callers own all geometry bookkeeping.

Conventions shared by the sweep kernels:

* vertices are processed in descending field value, ties broken by ascending
  linear index (simulation of simplicity);
* an "event" is one vertex insertion together with its incident unions, or
  one cell of the sorted filtration; level samples are taken strictly
  between distinct field values, so a sample at level u sees every cell with
  value >= u;
* the positive/negative accumulators split each event's jump by sign, giving
  the exact decomposition beta = pos - neg with both parts non-increasing
  in the level.
"""
from __future__ import annotations

import numpy as np

from ._backend import maybe_njit


@maybe_njit
def _find(parent, x):
    root = x
    while parent[root] != root:
        root = parent[root]
    while parent[x] != root:
        nxt = parent[x]
        parent[x] = root
        x = nxt
    return root


@maybe_njit
def component_sweep(order, values, shape, boundary, levels):
    """Interior/full component counts of superlevel sets on a level grid.

    Returns six int64 arrays over ``levels``: full count, its positive and
    negative monotone parts, and the same triple for interior components
    (those not touching the window boundary).
    """
    V = order.size
    L = levels.size
    d = shape.size
    strides = np.empty(d, np.int64)
    s = np.int64(1)
    for ax in range(d - 1, -1, -1):
        strides[ax] = s
        s *= shape[ax]

    parent = np.full(V, -1, np.int64)
    size = np.zeros(V, np.int64)
    flag = np.zeros(V, np.uint8)

    out_f = np.zeros(L, np.int64)
    out_fp = np.zeros(L, np.int64)
    out_fn = np.zeros(L, np.int64)
    out_i = np.zeros(L, np.int64)
    out_ip = np.zeros(L, np.int64)
    out_in = np.zeros(L, np.int64)

    total = 0
    inter = 0
    pos_f = 0
    neg_f = 0
    pos_i = 0
    neg_i = 0
    gp = L - 1

    for t in range(V):
        v = order[t]
        val = values[v]
        while gp >= 0 and levels[gp] > val:
            out_f[gp] = total
            out_fp[gp] = pos_f
            out_fn[gp] = neg_f
            out_i[gp] = inter
            out_ip[gp] = pos_i
            out_in[gp] = neg_i
            gp -= 1

        t0 = total
        i0 = inter
        parent[v] = v
        size[v] = 1
        flag[v] = boundary[v]
        total += 1
        if int(flag[v]) == 0:
            inter += 1

        for ax in range(d):
            st = strides[ax]
            c = (v // st) % shape[ax]
            for side in range(2):
                if side == 0:
                    if c == 0:
                        continue
                    u = v - st
                else:
                    if c == shape[ax] - 1:
                        continue
                    u = v + st
                if parent[u] < 0:
                    continue
                ru = _find(parent, u)
                rv = _find(parent, v)
                if ru == rv:
                    continue
                fa = int(flag[ru])
                fb = int(flag[rv])
                if size[ru] < size[rv]:
                    ru, rv = rv, ru
                parent[rv] = ru
                size[ru] += size[rv]
                nf = fa | fb
                flag[ru] = nf
                total -= 1
                before = (1 - fa) + (1 - fb)
                after = 1 - nf
                inter -= before - after

        df = total - t0
        di = inter - i0
        if df > 0:
            pos_f += df
        else:
            neg_f -= df
        if di > 0:
            pos_i += di
        else:
            neg_i -= di

    while gp >= 0:
        out_f[gp] = total
        out_fp[gp] = pos_f
        out_fn[gp] = neg_f
        out_i[gp] = inter
        out_ip[gp] = pos_i
        out_in[gp] = neg_i
        gp -= 1

    return out_f, out_fp, out_fn, out_i, out_ip, out_in


@maybe_njit
def pair_sweep(
    ev_kind,
    ev_v1,
    ev_v2,
    ev_value,
    birth_mark,
    death_mark,
    pair_is_q,
    pair_anchor,
    n_vertices,
    boundary,
    levels,
):
    """Walk the sorted filtration once, tracking alive dimension-q features.

    ``ev_kind``: 0 vertex insert, 1 edge union, 2 structural no-op.
    ``birth_mark``/``death_mark`` give the pair index born/killed at each
    event (-1 otherwise). Counts are restricted to pairs with
    ``pair_is_q`` set; interior-at-birth flags are recorded for every pair,
    with ties resolved at the full unjittered birth level.

    Returns the six level-sampled arrays (as in component_sweep, but counting
    alive q-features) plus the per-pair interior-at-birth flags.
    """
    n_events = ev_kind.size
    L = levels.size
    n_pairs = pair_anchor.size

    parent = np.full(n_vertices, -1, np.int64)
    size = np.zeros(n_vertices, np.int64)
    flag = np.zeros(n_vertices, np.uint8)
    cnt = np.zeros(n_vertices, np.int64)

    interior_birth = np.zeros(n_pairs, np.uint8)
    pending = np.empty(64, np.int64)
    n_pending = 0

    out_f = np.zeros(L, np.int64)
    out_fp = np.zeros(L, np.int64)
    out_fn = np.zeros(L, np.int64)
    out_i = np.zeros(L, np.int64)
    out_ip = np.zeros(L, np.int64)
    out_in = np.zeros(L, np.int64)

    alive = 0
    alive_i = 0
    pos_f = 0
    neg_f = 0
    pos_i = 0
    neg_i = 0
    gp = L - 1

    for t in range(n_events):
        val = ev_value[t]
        if t > 0 and val < ev_value[t - 1]:
            # value block finished: resolve interior-at-birth queries
            for pi in range(n_pending):
                p = pending[pi]
                r = _find(parent, pair_anchor[p])
                interior_birth[p] = 1 - flag[r]
            n_pending = 0
        while gp >= 0 and levels[gp] > val:
            out_f[gp] = alive
            out_fp[gp] = pos_f
            out_fn[gp] = neg_f
            out_i[gp] = alive_i
            out_ip[gp] = pos_i
            out_in[gp] = neg_i
            gp -= 1

        a0 = alive
        i0 = alive_i
        kind = ev_kind[t]
        if kind == 0:
            v = ev_v1[t]
            parent[v] = v
            size[v] = 1
            flag[v] = boundary[v]
        elif kind == 1:
            ru = _find(parent, ev_v1[t])
            rv = _find(parent, ev_v2[t])
            if ru != rv:
                fa = int(flag[ru])
                fb = int(flag[rv])
                if size[ru] < size[rv]:
                    ru, rv = rv, ru
                    fa, fb = fb, fa
                parent[rv] = ru
                size[ru] += size[rv]
                nf = fa | fb
                flag[ru] = nf
                if nf == 1:
                    lost = 0
                    if fa == 0:
                        lost += cnt[ru]
                    if fb == 0:
                        lost += cnt[rv]
                    alive_i -= lost
                cnt[ru] += cnt[rv]

        b = birth_mark[t]
        if b >= 0:
            if n_pending >= pending.size:
                grown = np.empty(pending.size * 2, np.int64)
                grown[: pending.size] = pending
                pending = grown
            pending[n_pending] = b
            n_pending += 1
            if pair_is_q[b] == 1:
                r = _find(parent, pair_anchor[b])
                cnt[r] += 1
                alive += 1
                if flag[r] == 0:
                    alive_i += 1
        dth = death_mark[t]
        if dth >= 0 and pair_is_q[dth] == 1:
            r = _find(parent, pair_anchor[dth])
            cnt[r] -= 1
            alive -= 1
            if flag[r] == 0:
                alive_i -= 1

        df = alive - a0
        di = alive_i - i0
        if df > 0:
            pos_f += df
        else:
            neg_f -= df
        if di > 0:
            pos_i += di
        else:
            neg_i -= di

    for pi in range(n_pending):
        p = pending[pi]
        r = _find(parent, pair_anchor[p])
        interior_birth[p] = 1 - flag[r]

    while gp >= 0:
        out_f[gp] = alive
        out_fp[gp] = pos_f
        out_fn[gp] = neg_f
        out_i[gp] = alive_i
        out_ip[gp] = pos_i
        out_in[gp] = neg_i
        gp -= 1

    return out_f, out_fp, out_fn, out_i, out_ip, out_in, interior_birth


@maybe_njit
def label_components(mask, shape):
    """Union-find labels of {mask} under axis adjacency.

    Returns an int64 array with the component's root vertex id per vertex
    (-1 where the mask is off) and the number of components.
    """
    V = mask.size
    d = shape.size
    strides = np.empty(d, np.int64)
    s = np.int64(1)
    for ax in range(d - 1, -1, -1):
        strides[ax] = s
        s *= shape[ax]

    parent = np.full(V, -1, np.int64)
    size = np.zeros(V, np.int64)
    for v in range(V):
        if mask[v] != 0:
            parent[v] = v
            size[v] = 1
    for v in range(V):
        if mask[v] == 0:
            continue
        for ax in range(d):
            st = strides[ax]
            c = (v // st) % shape[ax]
            if c == shape[ax] - 1:
                continue
            u = v + st
            if mask[u] == 0:
                continue
            ru = _find(parent, u)
            rv = _find(parent, v)
            if ru == rv:
                continue
            if size[ru] < size[rv]:
                ru, rv = rv, ru
            parent[rv] = ru
            size[ru] += size[rv]

    labels = np.full(V, -1, np.int64)
    n = 0
    for v in range(V):
        if mask[v] != 0:
            r = _find(parent, v)
            labels[v] = r
            if r == v:
                n += 1
    return labels, n


@maybe_njit
def component_stats(labels, shape, boundary, localmax):
    """Aggregate per-component statistics from a label array.

    Components are reported in ascending root-id order. The reference vertex
    is the lexicographically smallest local-maximum vertex of the component
    (C-order linear index == lexicographic order on index tuples).
    """
    V = labels.size
    d = shape.size
    strides = np.empty(d, np.int64)
    s = np.int64(1)
    for ax in range(d - 1, -1, -1):
        strides[ax] = s
        s *= shape[ax]

    compact = np.full(V, -1, np.int64)
    n = 0
    for v in range(V):
        if labels[v] == v:
            compact[v] = n
            n += 1

    roots = np.empty(n, np.int64)
    sizes = np.zeros(n, np.int64)
    touch = np.zeros(n, np.uint8)
    ref = np.full(n, -1, np.int64)
    first = np.full(n, -1, np.int64)
    bbox_lo = np.empty((n, d), np.int64)
    bbox_hi = np.empty((n, d), np.int64)
    for v in range(V):
        if labels[v] == v:
            k = compact[v]
            roots[k] = v

    for v in range(V):
        r = labels[v]
        if r < 0:
            continue
        k = compact[r]
        if sizes[k] == 0:
            for ax in range(d):
                c = (v // strides[ax]) % shape[ax]
                bbox_lo[k, ax] = c
                bbox_hi[k, ax] = c
        else:
            for ax in range(d):
                c = (v // strides[ax]) % shape[ax]
                if c < bbox_lo[k, ax]:
                    bbox_lo[k, ax] = c
                if c > bbox_hi[k, ax]:
                    bbox_hi[k, ax] = c
        sizes[k] += 1
        if boundary[v] != 0:
            touch[k] = 1
        if first[k] < 0:
            first[k] = v
        if ref[k] < 0 and localmax[v] != 0:
            ref[k] = v

    for k in range(n):
        if ref[k] < 0:
            ref[k] = first[k]
    return roots, sizes, touch, ref, bbox_lo, bbox_hi


@maybe_njit
def flood_fill_stats(values, shape, u, start):
    """BFS the superlevel component containing ``start``.

    Returns (found, touches_boundary, size, bbox_lo, bbox_hi).
    """
    d = shape.size
    strides = np.empty(d, np.int64)
    s = np.int64(1)
    for ax in range(d - 1, -1, -1):
        strides[ax] = s
        s *= shape[ax]

    bbox_lo = np.zeros(d, np.int64)
    bbox_hi = np.zeros(d, np.int64)
    if values[start] < u:
        return False, False, 0, bbox_lo, bbox_hi

    visited = np.zeros(values.size, np.uint8)
    stack = np.empty(1024, np.int64)
    stack[0] = start
    n_stack = 1
    visited[start] = 1
    for ax in range(d):
        c = (start // strides[ax]) % shape[ax]
        bbox_lo[ax] = c
        bbox_hi[ax] = c
    size = 0
    touches = False
    while n_stack > 0:
        n_stack -= 1
        v = stack[n_stack]
        size += 1
        for ax in range(d):
            st = strides[ax]
            c = (v // st) % shape[ax]
            if c < bbox_lo[ax]:
                bbox_lo[ax] = c
            if c > bbox_hi[ax]:
                bbox_hi[ax] = c
            if c == 0 or c == shape[ax] - 1:
                if shape[ax] > 1:
                    touches = True
            for side in range(2):
                if side == 0:
                    if c == 0:
                        continue
                    w = v - st
                else:
                    if c == shape[ax] - 1:
                        continue
                    w = v + st
                if visited[w] == 0 and values[w] >= u:
                    visited[w] = 1
                    if n_stack >= stack.size:
                        grown = np.empty(stack.size * 2, np.int64)
                        grown[: stack.size] = stack
                        stack = grown
                    stack[n_stack] = w
                    n_stack += 1
    return True, touches, size, bbox_lo, bbox_hi


@maybe_njit
def accumulate_shot_noise(
    out, shape, window_lo, spacing, points, marks, fam, b0, eta, scale, trunc_radius
):
    """Add sum_i marks[i] * g(x - points[i]) over grid vertices, in place.

    ``out`` is the flat vertex array; geometry is padded to 3 axes by the
    caller (unused axes have shape 1, window_lo 0 and point coordinate 0).
    """
    strides = np.empty(3, np.int64)
    s = np.int64(1)
    for ax in range(2, -1, -1):
        strides[ax] = s
        s *= shape[ax]
    half = b0 / 2.0
    r2_bump = half * half
    r2_trunc = trunc_radius * trunc_radius
    reach = trunc_radius if fam == 2 else half

    n = points.shape[0]
    for i in range(n):
        mk = marks[i]
        k_lo = np.empty(3, np.int64)
        k_hi = np.empty(3, np.int64)
        for ax in range(3):
            p = points[i, ax]
            lo = np.int64(np.ceil((p - reach - window_lo[ax]) / spacing - 1e-12))
            hi = np.int64(np.floor((p + reach - window_lo[ax]) / spacing + 1e-12))
            if lo < 0:
                lo = 0
            if hi > shape[ax] - 1:
                hi = shape[ax] - 1
            k_lo[ax] = lo
            k_hi[ax] = hi
        for k0 in range(k_lo[0], k_hi[0] + 1):
            x0 = window_lo[0] + k0 * spacing - points[i, 0]
            for k1 in range(k_lo[1], k_hi[1] + 1):
                x1 = window_lo[1] + k1 * spacing - points[i, 1]
                for k2 in range(k_lo[2], k_hi[2] + 1):
                    x2 = window_lo[2] + k2 * spacing - points[i, 2]
                    if fam == 0:
                        a0 = -x0 if x0 < 0 else x0
                        a1 = -x1 if x1 < 0 else x1
                        a2 = -x2 if x2 < 0 else x2
                        if a0 <= half and a1 <= half and a2 <= half:
                            val = scale
                        else:
                            val = 0.0
                    else:
                        t = x0 * x0 + x1 * x1 + x2 * x2
                        if fam == 1:
                            if t < r2_bump:
                                val = scale * np.exp(1.0 - 1.0 / (1.0 - t / r2_bump))
                            else:
                                val = 0.0
                        else:
                            if t <= r2_trunc:
                                val = scale * (1.0 + t) ** (-eta / 2.0)
                            else:
                                val = 0.0
                    if val != 0.0:
                        out[k0 * strides[0] + k1 * strides[1] + k2 * strides[2]] += mk * val


@maybe_njit
def reduce_boundary(indptr, indices, n_cells):
    """Standard persistence reduction of a GF(2) boundary matrix.

    Columns arrive in filtration order with sorted row indices. Returns
    ``pivot_of_row`` (pivot_of_row[i] = j means column j's low is i, i.e. the
    cell pair (i, j)) and a flag per column that reduced to zero (creators).
    """
    pivot_of_row = np.full(n_cells, -1, np.int64)
    cleared = np.zeros(n_cells, np.uint8)
    col_start = np.zeros(n_cells, np.int64)
    col_len = np.zeros(n_cells, np.int64)
    pool = np.empty(max(64, indices.size * 2), np.int64)
    pool_n = 0
    work = np.empty(64, np.int64)
    tmp = np.empty(64, np.int64)

    for j in range(n_cells):
        wn = indptr[j + 1] - indptr[j]
        if wn > work.size:
            grown = np.empty(max(wn, work.size * 2), np.int64)
            work = grown
        for a in range(wn):
            work[a] = indices[indptr[j] + a]
        while wn > 0:
            low = work[wn - 1]
            k = pivot_of_row[low]
            if k < 0:
                pivot_of_row[low] = j
                if pool_n + wn > pool.size:
                    newsize = pool.size * 2
                    while newsize < pool_n + wn:
                        newsize *= 2
                    grown = np.empty(newsize, np.int64)
                    grown[:pool_n] = pool[:pool_n]
                    pool = grown
                col_start[j] = pool_n
                col_len[j] = wn
                for a in range(wn):
                    pool[pool_n + a] = work[a]
                pool_n += wn
                break
            # symmetric difference with the stored reduced column k
            bs = col_start[k]
            bl = col_len[k]
            if tmp.size < wn + bl:
                newsize = tmp.size * 2
                while newsize < wn + bl:
                    newsize *= 2
                tmp = np.empty(newsize, np.int64)
            a = 0
            b = 0
            t = 0
            while a < wn and b < bl:
                va = work[a]
                vb = pool[bs + b]
                if va < vb:
                    tmp[t] = va
                    a += 1
                    t += 1
                elif vb < va:
                    tmp[t] = vb
                    b += 1
                    t += 1
                else:
                    a += 1
                    b += 1
            while a < wn:
                tmp[t] = work[a]
                a += 1
                t += 1
            while b < bl:
                tmp[t] = pool[bs + b]
                b += 1
                t += 1
            if work.size < t:
                work = np.empty(max(t, work.size * 2), np.int64)
            for x in range(t):
                work[x] = tmp[x]
            wn = t
        if wn == 0:
            cleared[j] = 1
    return pivot_of_row, cleared
