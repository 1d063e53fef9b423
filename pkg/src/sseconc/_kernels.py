"""Compiled SSE kernels.

Operator string encoding: ``-1`` is the identity; otherwise ``op = 2*term + t``
with ``t = 1`` for an off-diagonal operator. Terms ``0 .. nb-1`` are bonds,
terms ``nb .. nb+N-1`` are single-site operators (TFIM only).

Vertices are stored compressed (only non-identity slots), with four legs per
vertex; single-site vertices use legs 0 (below) and 2 (above).
"""
import numpy as np
from numba import njit

IDENTITY = -1
KIND_XXZ = 0
KIND_TFIM = 1


@njit(cache=True)
def _bit(s):
    return 1 if s > 0 else 0


@njit(cache=True)
def diagonal_update(spins, opstring, n, beta, bond_sites, bond_class, diag, n_sites_terms, site_weight, rng):
    """One pass of identity <-> diagonal exchanges; returns the new ``n``."""
    M = opstring.shape[0]
    nb = bond_sites.shape[0]
    nterms = nb + n_sites_terms
    s = spins.copy()
    bk = beta * nterms
    for p in range(M):
        op = opstring[p]
        if op == IDENTITY:
            term = int(rng.random() * nterms)
            if term < nb:
                i = bond_sites[term, 0]
                j = bond_sites[term, 1]
                w = diag[bond_class[term], _bit(s[i]) + 2 * _bit(s[j])]
            else:
                w = site_weight
            if w > 0.0 and rng.random() * (M - n) < bk * w:
                opstring[p] = 2 * term
                n += 1
        elif op & 1 == 0:
            term = op >> 1
            if term < nb:
                i = bond_sites[term, 0]
                j = bond_sites[term, 1]
                w = diag[bond_class[term], _bit(s[i]) + 2 * _bit(s[j])]
            else:
                w = site_weight
            if rng.random() * bk * w < (M - n + 1):
                opstring[p] = IDENTITY
                n -= 1
        else:
            term = op >> 1
            if term < nb:
                s[bond_sites[term, 0]] *= -1
                s[bond_sites[term, 1]] *= -1
            else:
                s[term - nb] *= -1
    return n


@njit(cache=True)
def build_vertices(spins, opstring, n, bond_sites):
    """Compressed vertex list, leg states and the doubly linked leg list.

    Returns ``(vpos, vterm, vstate, link, first)``; ``first[i]`` is the first
    (lowest) leg on site ``i`` or -1 when no operator acts on it.
    """
    N = spins.shape[0]
    nb = bond_sites.shape[0]
    vpos = np.empty(n, np.int64)
    vterm = np.empty(n, np.int64)
    vstate = np.empty(n, np.int64)
    link = np.full(4 * n, -1, np.int64)
    first = np.full(N, -1, np.int64)
    last = np.full(N, -1, np.int64)
    s = spins.copy()
    v = 0
    for p in range(opstring.shape[0]):
        op = opstring[p]
        if op == IDENTITY:
            continue
        term = op >> 1
        vpos[v] = p
        vterm[v] = term
        if term < nb:
            i = bond_sites[term, 0]
            j = bond_sites[term, 1]
            st = _bit(s[i]) | (_bit(s[j]) << 1)
            if op & 1:
                s[i] *= -1
                s[j] *= -1
            st |= (_bit(s[i]) << 2) | (_bit(s[j]) << 3)
            vstate[v] = st
            for k in range(2):
                site = i if k == 0 else j
                lo = 4 * v + k
                if last[site] >= 0:
                    link[last[site]] = lo
                    link[lo] = last[site]
                else:
                    first[site] = lo
                last[site] = 4 * v + 2 + k
        else:
            i = term - nb
            st = _bit(s[i])
            if op & 1:
                s[i] *= -1
            st |= _bit(s[i]) << 2
            vstate[v] = st
            lo = 4 * v
            if last[i] >= 0:
                link[last[i]] = lo
                link[lo] = last[i]
            else:
                first[i] = lo
            last[i] = 4 * v + 2
        v += 1
    for i in range(N):
        if first[i] >= 0:
            link[first[i]] = last[i]
            link[last[i]] = first[i]
    return vpos, vterm, vstate, link, first


@njit(cache=True)
def _leg_site(leg, vterm, bond_sites):
    term = vterm[leg >> 2]
    nb = bond_sites.shape[0]
    if term < nb:
        return bond_sites[term, leg & 1]
    return term - nb


@njit(cache=True)
def _link_interval(leg, link, n):
    """Gaps covered by the link through ``leg``: start gap index and length.

    Gap ``g`` sits just above vertex ``g``; a link from vertex ``a`` (its upper
    leg) to vertex ``b`` (its lower leg) covers gaps ``a .. b-1`` cyclically.
    """
    v = leg >> 2
    w = link[leg] >> 2
    if (leg & 3) >= 2:
        lo, hi = v, w
    else:
        lo, hi = w, v
    length = (hi - lo) % n
    if length == 0:
        length = n
    return lo, length


@njit(cache=True)
def _overlap(a1, l1, a2, l2, n):
    d = (a2 - a1) % n
    o = min(l1, d + l2) - d
    if o < 0:
        o = 0
    o2 = min(l1, d + l2 - n)
    if o2 > 0:
        o += o2
    return o


@njit(cache=True)
def _write_back(spins, opstring, vpos, vterm, vstate, first, nb, rng):
    n = vpos.shape[0]
    for v in range(n):
        st = vstate[v]
        term = vterm[v]
        if term < nb:
            off = 1 if (st & 3) != (st >> 2) else 0
        else:
            off = 1 if (st & 1) != ((st >> 2) & 1) else 0
        opstring[vpos[v]] = 2 * term + off
    for i in range(spins.shape[0]):
        leg = first[i]
        if leg >= 0:
            spins[i] = 1 if (vstate[leg >> 2] >> (leg & 3)) & 1 else -1
        elif rng.random() < 0.5:
            spins[i] = -spins[i]


@njit(cache=True)
def _grow(a):
    b = np.empty(2 * a.shape[0], a.dtype)
    b[: a.shape[0]] = a
    return b


@njit(cache=True)
def loop_update(spins, opstring, n, bond_sites, bond_class, cum, n_loops, cap, sepidx, acc, rng):
    """Directed-loop update with the equal-time transverse estimator.

    For every loop, while the head sits on a link of site ``j`` and the tail on
    a link of site ``i``, the number of propagation gaps the two links share is
    added to ``acc[sep(i, j)]``. ``4 * E[sum per loop] / N`` is the translation
    average of <S+_i S-_j + S-_i S+_j>.

    Returns ``(loops_done, legs_visited, aborted)``.
    """
    if n == 0:
        return 0, 0, 0
    nb = bond_sites.shape[0]
    vpos, vterm, vstate, link, first = build_vertices(spins, opstring, n, bond_sites)
    N = spins.shape[0]
    size = min(cap, 4 * n) + 4
    jv = np.empty(size, np.int64)
    js = np.empty(size, np.int64)
    loop_acc = np.zeros(N, np.float64)
    touched = np.empty(N, np.int64)
    done = 0
    legs = 0
    aborted = 0
    for _ in range(n_loops):
        e0 = int(rng.random() * 4 * n)
        tail_site = _leg_site(e0, vterm, bond_sites)
        ta, tl = _link_interval(e0, link, n)
        e = e0
        steps = 0
        ntouch = 0
        bad = False
        while True:
            v = e >> 2
            kin = e & 3
            st = vstate[v]
            c = bond_class[vterm[v]]
            r = rng.random()
            kout = 0
            while kout < 3 and r >= cum[c, st, kin, kout]:
                kout += 1
            if steps == jv.shape[0]:
                jv = _grow(jv)
                js = _grow(js)
            jv[steps] = v
            js[steps] = st
            vstate[v] = st ^ (1 << kin) ^ (1 << kout)
            steps += 1
            e1 = 4 * v + kout
            if e1 == e0:
                break
            enext = link[e1]
            if enext == e0:
                break
            hs = _leg_site(e1, vterm, bond_sites)
            if hs != tail_site:
                ha, hl = _link_interval(e1, link, n)
                ov = _overlap(ta, tl, ha, hl, n)
                if ov > 0:
                    k = sepidx[tail_site, hs]
                    if loop_acc[k] == 0.0:
                        touched[ntouch] = k
                        ntouch += 1
                    loop_acc[k] += ov
            if steps >= cap:
                bad = True
                break
            e = enext
        if bad:
            for t in range(steps - 1, -1, -1):
                vstate[jv[t]] = js[t]
            aborted += 1
        else:
            done += 1
            legs += 2 * steps
            for t in range(ntouch):
                acc[touched[t]] += loop_acc[touched[t]]
        for t in range(ntouch):
            loop_acc[touched[t]] = 0.0
    _write_back(spins, opstring, vpos, vterm, vstate, first, nb, rng)
    return done, legs, aborted


@njit(cache=True)
def cluster_update(spins, opstring, n, bond_sites, bond_class, diag, rng):
    """Swendsen-Wang-like SSE cluster update for the TFIM.

    Bond vertices tie their four legs together; single-site operators cut the
    cluster, so flipping one side converts constant <-> flip operators (both
    have the same weight). Longitudinal fields live in the bond weights, so a
    cluster is flipped with heat-bath probability r / (1 + r), r being the
    product of bond weight ratios.
    """
    nb = bond_sites.shape[0]
    if n == 0:
        for i in range(spins.shape[0]):
            if rng.random() < 0.5:
                spins[i] = -spins[i]
        return 0
    vpos, vterm, vstate, link, first = build_vertices(spins, opstring, n, bond_sites)
    label = np.full(4 * n, -1, np.int64)
    stack = np.empty(4 * n, np.int64)
    members = np.empty(4 * n, np.int64)
    nclusters = 0
    for start in range(4 * n):
        if link[start] < 0 or label[start] >= 0:
            continue
        label[start] = nclusters
        top = 0
        stack[top] = start
        top += 1
        count = 0
        logr = 0.0
        while top > 0:
            top -= 1
            leg = stack[top]
            members[count] = leg
            count += 1
            v = leg >> 2
            nxt = link[leg]
            if label[nxt] < 0:
                label[nxt] = nclusters
                stack[top] = nxt
                top += 1
            if vterm[v] < nb:
                for k in range(4):
                    other = 4 * v + k
                    if label[other] < 0:
                        label[other] = nclusters
                        stack[top] = other
                        top += 1
        for t in range(count):
            leg = members[t]
            v = leg >> 2
            if vterm[v] < nb and (leg & 3) == 0:
                st = vstate[v]
                c = bond_class[vterm[v]]
                w0 = diag[c, (st & 1) + 2 * ((st >> 1) & 1)]
                fl = st ^ 15
                w1 = diag[c, (fl & 1) + 2 * ((fl >> 1) & 1)]
                logr += np.log(w1) - np.log(w0)
        if logr == 0.0:
            flip = rng.random() < 0.5
        else:
            flip = rng.random() * (1.0 + np.exp(-logr)) < 1.0
        if flip:
            for t in range(count):
                leg = members[t]
                vstate[leg >> 2] ^= 1 << (leg & 3)
        nclusters += 1
    _write_back(spins, opstring, vpos, vterm, vstate, first, nb, rng)
    return nclusters


@njit(cache=True)
def _slice_gaps(n, nslices, rng):
    """Evenly spaced gap indices with a random offset (each gap equally likely)."""
    if n == 0:
        out = np.zeros(1, np.int64)
        return out
    k = min(n, nslices)
    out = np.empty(k, np.int64)
    off = rng.random() * n / k
    for t in range(k):
        out[t] = int(off + t * n / k) % n
    return out


@njit(cache=True)
def measure_diagonal(spins, opstring, n, bond_sites, sepidx, parity, nslices, rng, corr, mags):
    """Slice-averaged diagonal observables of the representation basis.

    Adds to ``corr[r]`` the average of ``s_i s_{i+r}`` and to ``mags`` the
    averages of ``m, |m|, m^2, ms, |ms|, ms^2`` (per-site uniform and staggered
    moments).
    """
    N = spins.shape[0]
    nb = bond_sites.shape[0]
    gaps = _slice_gaps(n, nslices, rng)
    want = np.zeros(max(n, 1), np.bool_)
    for g in gaps:
        want[g] = True
    k = gaps.shape[0]
    s = spins.copy()
    tmp = np.zeros(N, np.float64)
    local = np.zeros(6, np.float64)
    if n == 0:
        _accumulate_slice(s, sepidx, parity, tmp, local)
    else:
        g = 0
        for p in range(opstring.shape[0]):
            op = opstring[p]
            if op == IDENTITY:
                continue
            if op & 1:
                term = op >> 1
                if term < nb:
                    s[bond_sites[term, 0]] *= -1
                    s[bond_sites[term, 1]] *= -1
                else:
                    s[term - nb] *= -1
            if want[g]:
                _accumulate_slice(s, sepidx, parity, tmp, local)
            g += 1
    for r in range(N):
        corr[r] += tmp[r] / (N * k)
    for t in range(6):
        mags[t] += local[t] / k


@njit(cache=True)
def _accumulate_slice(s, sepidx, parity, tmp, local):
    N = s.shape[0]
    m = 0.0
    ms = 0.0
    for i in range(N):
        si = s[i]
        m += si
        ms += si * parity[i]
        row = sepidx[i]
        for j in range(N):
            tmp[row[j]] += si * s[j]
    m /= N
    ms /= N
    local[0] += m
    local[1] += abs(m)
    local[2] += m * m
    local[3] += ms
    local[4] += abs(ms)
    local[5] += ms * ms


@njit(cache=True)
def measure_flips(spins, opstring, n, bond_sites, sepidx, beta, flip1, zz, yy, zx):
    """Off-diagonal TFIM estimators from single-site flip operators.

    With T_i the flip on site i (the transverse field in the sx basis):
    <T_i> = <N_i> / beta, <T_i D_j> = <sum over T_i of D_j> / beta for a
    diagonal D_j, and <T_i T_j> = <(n - 1) N(i, j)> / beta^2 where N counts
    cyclically adjacent operator pairs.
    """
    N = spins.shape[0]
    nb = bond_sites.shape[0]
    if n == 0:
        return
    s = spins.copy()
    prev_site = -1
    # predecessor of the first operator is the last one, cyclically
    for p in range(opstring.shape[0] - 1, -1, -1):
        op = opstring[p]
        if op != IDENTITY:
            term = op >> 1
            if (op & 1) and term >= nb:
                prev_site = term - nb
            break
    pair_w = (n - 1) / (2.0 * beta * beta * N)
    for p in range(opstring.shape[0]):
        op = opstring[p]
        if op == IDENTITY:
            continue
        term = op >> 1
        if op & 1:
            if term < nb:
                s[bond_sites[term, 0]] *= -1
                s[bond_sites[term, 1]] *= -1
                prev_site = -1
                continue
            u = term - nb
            flip1[0] += 1.0 / (beta * N)
            row = sepidx[u]
            for j in range(N):
                if j != u:
                    zx[row[j]] += s[j] / (beta * N)
            w = prev_site
            if w >= 0 and w != u:
                sign = s[u] * s[w]
                zz[sepidx[w, u]] += pair_w
                zz[sepidx[u, w]] += pair_w
                yy[sepidx[w, u]] += pair_w * sign
                yy[sepidx[u, w]] += pair_w * sign
            s[u] *= -1
            prev_site = u
        else:
            prev_site = -1


@njit(cache=True)
def run_block_xxz(spins, opstring, n, nsweeps, beta, bond_sites, bond_class, diag, cum, n_loops, cap,
                  sepidx, parity, nslices, rng, scalars, zz, xpy, mags):
    """``nsweeps`` full XXZ sweeps; sums per-sweep estimators into the outputs.

    Returns ``(n, loops, legs, aborted)``.
    """
    N = spins.shape[0]
    acc = np.zeros(N, np.float64)
    loops = 0
    legs = 0
    aborted = 0
    for _ in range(nsweeps):
        n = diagonal_update(spins, opstring, n, beta, bond_sites, bond_class, diag, 0, 0.0, rng)
        acc[:] = 0.0
        done, lg, ab = loop_update(spins, opstring, n, bond_sites, bond_class, cum, n_loops, cap, sepidx, acc, rng)
        loops += done
        legs += lg
        aborted += ab
        if done > 0:
            f = 4.0 / (done * N)
            for r in range(N):
                xpy[r] += acc[r] * f
        measure_diagonal(spins, opstring, n, bond_sites, sepidx, parity, nslices, rng, zz, mags)
        scalars[0] += n
        scalars[1] += n * n
    return n, loops, legs, aborted


@njit(cache=True)
def run_block_tfim(spins, opstring, n, nsweeps, beta, bond_sites, bond_class, diag, sepidx, parity,
                   nslices, rng, scalars, xx, zz, yy, zx, mags, flip1):
    """``nsweeps`` full TFIM sweeps (diagonal update + cluster update)."""
    N = spins.shape[0]
    clusters = 0
    for _ in range(nsweeps):
        n = diagonal_update(spins, opstring, n, beta, bond_sites, bond_class, diag, N, 1.0, rng)
        clusters += cluster_update(spins, opstring, n, bond_sites, bond_class, diag, rng)
        measure_diagonal(spins, opstring, n, bond_sites, sepidx, parity, nslices, rng, xx, mags)
        measure_flips(spins, opstring, n, bond_sites, sepidx, beta, flip1, zz, yy, zx)
        scalars[0] += n
        scalars[1] += n * n
    return n, clusters
