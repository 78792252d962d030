"""Compiled inner loops for the sum-of-trees sampler.

Trees live in fixed-size heap arrays while the chain runs (node i has
children 2i+1, 2i+2); kept iterations are serialized to flat preorder arrays
that the evaluation kernels consume. All randomness comes from an explicit
splitmix64 state so results are reproducible and threads never share RNG
state. Split convention: x[:, var] < cut goes left.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# splitmix64 constants
_GOLD = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0  # 2^-53

P_GROW = 0.25
P_PRUNE = 0.25


@njit(cache=True, nogil=True)
def _next01(state):
    """Uniform in [0, 1) from a 1-element uint64 state array."""
    state[0] = state[0] + _GOLD
    z = state[0]
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    z = z ^ (z >> _S31)
    return np.float64(z >> _S11) * _INV53


@njit(cache=True, nogil=True)
def _normal(state):
    u1 = _next01(state)
    while u1 <= 1e-300:
        u1 = _next01(state)
    u2 = _next01(state)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@njit(cache=True, nogil=True)
def _gamma(shape, state):
    # Marsaglia-Tsang; shape >= 1 always holds here
    d = shape - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    while True:
        xx = _normal(state)
        v = (1.0 + c * xx) ** 3
        if v <= 0.0:
            continue
        u = _next01(state)
        if u < 1.0 - 0.0331 * xx * xx * xx * xx:
            return d * v
        if u > 0.0 and np.log(u) < 0.5 * xx * xx + d * (1.0 - v + np.log(v)):
            return d * v


@njit(cache=True, nogil=True)
def _chisq(df, state):
    return 2.0 * _gamma(0.5 * df, state)


@njit(cache=True, nogil=True)
def _lml(cnt, s, sig2, smu2):
    """Leaf marginal log-likelihood up to terms shared by all partitions."""
    denom = sig2 + cnt * smu2
    return 0.5 * np.log(sig2 / denom) + smu2 * s * s / (2.0 * sig2 * denom)


@njit(cache=True, nogil=True)
def run_chain(
    x,
    y,
    grids,
    tree_count,
    burn,
    keep,
    sigma_mu2,
    nu,
    lam,
    sigma2_init,
    base,
    power,
    seed,
    max_depth,
    node_var,
    node_cut,
    node_val,
    node_right,
    offsets,
    changed,
    sigma2_out,
):
    """Backfitting MCMC over tree_count trees; serializes kept iterations.

    Returns (status, nodes_written): status 1 means the preorder buffers
    overflowed at nodes_written and the caller should retry with bigger ones.
    """
    n, q = x.shape
    ncut = grids.shape[1]
    heap_cap = (1 << (max_depth + 1)) - 1
    growable_max = heap_cap // 2 - 1  # children must fit in the heap

    state = np.empty(1, np.uint64)
    state[0] = seed

    # heap state: var -2 = slot unused, -1 = leaf, >=0 = split variable
    var_h = np.full((tree_count, heap_cap), -2, np.int32)
    var_h[:, 0] = -1
    cut_h = np.zeros((tree_count, heap_cap))
    val_h = np.zeros((tree_count, heap_cap))
    nodeof = np.zeros((tree_count, n), np.int32)
    fit = np.zeros(n)
    hw = np.ones(tree_count, np.int32)  # high-water mark of used heap slots

    cnt = np.zeros(heap_cap)
    sm = np.zeros(heap_cap)
    tmp_cnt = np.zeros(heap_cap)
    tmp_sm = np.zeros(heap_cap)
    member = np.zeros(heap_cap, np.uint8)
    tmp_node = np.zeros(n, np.int32)
    leaves = np.empty(heap_cap, np.int32)
    interior = np.empty(heap_cap, np.int32)
    prun = np.empty(heap_cap, np.int32)
    subleaf = np.empty(heap_cap, np.int32)
    sizes = np.zeros(heap_cap, np.int32)
    stack = np.empty(heap_cap, np.int32)
    acc = np.zeros(tree_count, np.uint8)

    depth_tab = np.empty(heap_cap, np.int64)
    for ix in range(heap_cap):
        v = ix + 1
        d = 0
        while v > 1:
            v >>= 1
            d += 1
        depth_tab[ix] = d

    sig2 = sigma2_init
    ptr = 0
    for it in range(burn + keep):
        for t in range(tree_count):
            # detach tree t and accumulate per-leaf residual stats
            for ix in range(hw[t]):
                cnt[ix] = 0.0
                sm[ix] = 0.0
            for i in range(n):
                leaf = nodeof[t, i]
                fit[i] -= val_h[t, leaf]
                cnt[leaf] += 1.0
                sm[leaf] += y[i] - fit[i]

            nl = 0
            ni = 0
            npn = 0
            for ix in range(hw[t]):
                v = var_h[t, ix]
                if v == -1:
                    leaves[nl] = ix
                    nl += 1
                elif v >= 0:
                    interior[ni] = ix
                    ni += 1
                    if var_h[t, 2 * ix + 1] == -1 and var_h[t, 2 * ix + 2] == -1:
                        prun[npn] = ix
                        npn += 1

            moved = False
            u_move = _next01(state)
            if u_move < P_GROW:
                ix = leaves[int(_next01(state) * nl)]
                if ix <= growable_max:
                    v = int(_next01(state) * q)
                    cutv = grids[v, int(_next01(state) * ncut)]
                    n_l = 0.0
                    s_l = 0.0
                    for i in range(n):
                        if nodeof[t, i] == ix and x[i, v] < cutv:
                            n_l += 1.0
                            s_l += y[i] - fit[i]
                    n_r = cnt[ix] - n_l
                    s_r = sm[ix] - s_l
                    if n_l >= 1.0 and n_r >= 1.0:
                        d = depth_tab[ix]
                        a_d = base / (1.0 + d) ** power
                        a_d1 = base / (2.0 + d) ** power
                        llr = (
                            _lml(n_l, s_l, sig2, sigma_mu2)
                            + _lml(n_r, s_r, sig2, sigma_mu2)
                            - _lml(cnt[ix], sm[ix], sig2, sigma_mu2)
                        )
                        lpr = np.log(a_d) + 2.0 * np.log(1.0 - a_d1) - np.log(1.0 - a_d)
                        np_after = npn + 1
                        if ix > 0:
                            sib = ix - 1 if ix % 2 == 0 else ix + 1
                            if var_h[t, sib] == -1:
                                np_after -= 1  # parent was prunable, no longer
                        lqr = np.log(P_PRUNE / P_GROW) + np.log(nl) - np.log(np_after)
                        if np.log(_next01(state)) < llr + lpr + lqr:
                            var_h[t, ix] = v
                            cut_h[t, ix] = cutv
                            lft = 2 * ix + 1
                            rgt = 2 * ix + 2
                            var_h[t, lft] = -1
                            var_h[t, rgt] = -1
                            cnt[lft] = n_l
                            sm[lft] = s_l
                            cnt[rgt] = n_r
                            sm[rgt] = s_r
                            for i in range(n):
                                if nodeof[t, i] == ix:
                                    if x[i, v] < cutv:
                                        nodeof[t, i] = lft
                                    else:
                                        nodeof[t, i] = rgt
                            if rgt + 1 > hw[t]:
                                hw[t] = rgt + 1
                            moved = True
            elif u_move < P_GROW + P_PRUNE:
                if npn > 0:
                    ix = prun[int(_next01(state) * npn)]
                    lft = 2 * ix + 1
                    rgt = 2 * ix + 2
                    n_l = cnt[lft]
                    s_l = sm[lft]
                    n_r = cnt[rgt]
                    s_r = sm[rgt]
                    d = depth_tab[ix]
                    a_d = base / (1.0 + d) ** power
                    a_d1 = base / (2.0 + d) ** power
                    llr = (
                        _lml(n_l + n_r, s_l + s_r, sig2, sigma_mu2)
                        - _lml(n_l, s_l, sig2, sigma_mu2)
                        - _lml(n_r, s_r, sig2, sigma_mu2)
                    )
                    lpr = -(np.log(a_d) + 2.0 * np.log(1.0 - a_d1) - np.log(1.0 - a_d))
                    lqr = np.log(P_GROW / P_PRUNE) + np.log(npn) - np.log(nl - 1)
                    if np.log(_next01(state)) < llr + lpr + lqr:
                        var_h[t, ix] = -1
                        var_h[t, lft] = -2
                        var_h[t, rgt] = -2
                        cnt[ix] = n_l + n_r
                        sm[ix] = s_l + s_r
                        for i in range(n):
                            nd = nodeof[t, i]
                            if nd == lft or nd == rgt:
                                nodeof[t, i] = ix
                        moved = True
            else:  # change a split rule in place
                if ni > 0:
                    mnode = interior[int(_next01(state) * ni)]
                    nsl = 0
                    sp = 1
                    stack[0] = mnode
                    while sp > 0:
                        sp -= 1
                        ix = stack[sp]
                        if var_h[t, ix] >= 0:
                            stack[sp] = 2 * ix + 1
                            sp += 1
                            stack[sp] = 2 * ix + 2
                            sp += 1
                        else:
                            member[ix] = 1
                            subleaf[nsl] = ix
                            nsl += 1
                    old_v = var_h[t, mnode]
                    old_c = cut_h[t, mnode]
                    var_h[t, mnode] = int(_next01(state) * q)
                    cut_h[t, mnode] = grids[var_h[t, mnode], int(_next01(state) * ncut)]
                    for si in range(nsl):
                        tmp_cnt[subleaf[si]] = 0.0
                        tmp_sm[subleaf[si]] = 0.0
                    for i in range(n):
                        if member[nodeof[t, i]] == 1:
                            ix = mnode
                            while var_h[t, ix] >= 0:
                                if x[i, var_h[t, ix]] < cut_h[t, ix]:
                                    ix = 2 * ix + 1
                                else:
                                    ix = 2 * ix + 2
                            tmp_node[i] = ix
                            tmp_cnt[ix] += 1.0
                            tmp_sm[ix] += y[i] - fit[i]
                    llr = 0.0
                    empty = False
                    for si in range(nsl):
                        ix = subleaf[si]
                        if tmp_cnt[ix] < 1.0:
                            empty = True
                            break
                        llr += _lml(tmp_cnt[ix], tmp_sm[ix], sig2, sigma_mu2) - _lml(
                            cnt[ix], sm[ix], sig2, sigma_mu2
                        )
                    if not empty and np.log(_next01(state)) < llr:
                        for i in range(n):
                            if member[nodeof[t, i]] == 1:
                                nodeof[t, i] = tmp_node[i]
                        for si in range(nsl):
                            ix = subleaf[si]
                            cnt[ix] = tmp_cnt[ix]
                            sm[ix] = tmp_sm[ix]
                        moved = True
                    else:
                        var_h[t, mnode] = old_v
                        cut_h[t, mnode] = old_c
                    for si in range(nsl):
                        member[subleaf[si]] = 0

            if moved:
                nl = 0
                for ix in range(hw[t]):
                    if var_h[t, ix] == -1:
                        leaves[nl] = ix
                        nl += 1
            acc[t] = 1 if moved else 0

            # conjugate leaf draws, then attach
            for li in range(nl):
                ix = leaves[li]
                pv = 1.0 / (1.0 / sigma_mu2 + cnt[ix] / sig2)
                val_h[t, ix] = pv * sm[ix] / sig2 + np.sqrt(pv) * _normal(state)
            for i in range(n):
                fit[i] += val_h[t, nodeof[t, i]]

        rss = 0.0
        for i in range(n):
            r = y[i] - fit[i]
            rss += r * r
        sig2 = (nu * lam + rss) / _chisq(nu + n, state)

        if it >= burn:
            k = it - burn
            sigma2_out[k] = sig2
            for t in range(tree_count):
                for ix in range(hw[t] - 1, -1, -1):
                    v = var_h[t, ix]
                    if v == -1:
                        sizes[ix] = 1
                    elif v >= 0:
                        sizes[ix] = 1 + sizes[2 * ix + 1] + sizes[2 * ix + 2]
                if ptr + sizes[0] > node_var.shape[0]:
                    return 1, ptr
                off = ptr
                sp = 1
                stack[0] = 0
                while sp > 0:
                    sp -= 1
                    ix = stack[sp]
                    node_var[ptr] = var_h[t, ix]
                    node_cut[ptr] = cut_h[t, ix]
                    node_val[ptr] = val_h[t, ix]
                    if var_h[t, ix] >= 0:
                        node_right[ptr] = ptr - off + 1 + sizes[2 * ix + 1]
                        stack[sp] = 2 * ix + 2
                        sp += 1
                        stack[sp] = 2 * ix + 1
                        sp += 1
                    else:
                        node_right[ptr] = -1
                    ptr += 1
                offsets[k * tree_count + t + 1] = ptr
                changed[k, t] = 1 if (k == 0 or acc[t] == 1) else 0
    return 0, ptr


@njit(cache=True, nogil=True)
def eval_mean_draws(node_var, node_cut, node_val, node_right, offsets, changed, keep, tree_count, xm, w):
    """Weighted mean prediction per kept draw, shape (keep,), on the scaled response.

    Row-to-leaf weight sums are reused across draws for trees whose structure
    did not change, so only accepted moves pay the routing cost.
    """
    m = xm.shape[0]
    out = np.zeros(keep)
    wsum = np.zeros((tree_count, 1023))
    for k in range(keep):
        tot = 0.0
        for t in range(tree_count):
            off = offsets[k * tree_count + t]
            sz = offsets[k * tree_count + t + 1] - off
            if changed[k, t] == 1:
                for j in range(sz):
                    wsum[t, j] = 0.0
                for i in range(m):
                    j = 0
                    while node_var[off + j] >= 0:
                        if xm[i, node_var[off + j]] < node_cut[off + j]:
                            j += 1
                        else:
                            j = node_right[off + j]
                    wsum[t, j] += w[i]
            s = 0.0
            for j in range(sz):
                if node_var[off + j] == -1:
                    s += node_val[off + j] * wsum[t, j]
            tot += s
        out[k] = tot
    return out


@njit(cache=True, nogil=True)
def eval_rows_draws(node_var, node_cut, node_val, node_right, offsets, changed, keep, tree_count, xm):
    """Full prediction matrix (keep, m) on the scaled response."""
    m = xm.shape[0]
    out = np.zeros((keep, m))
    assign = np.zeros((tree_count, m), np.int32)
    for k in range(keep):
        for t in range(tree_count):
            off = offsets[k * tree_count + t]
            if changed[k, t] == 1:
                for i in range(m):
                    j = 0
                    while node_var[off + j] >= 0:
                        if xm[i, node_var[off + j]] < node_cut[off + j]:
                            j += 1
                        else:
                            j = node_right[off + j]
                    assign[t, i] = j
            for i in range(m):
                out[k, i] += node_val[off + assign[t, i]]
    return out


@njit(cache=True, nogil=True)
def leaf_value_draws(count, total, sig2, sigma_mu2, seed, ndraws):
    """Conjugate leaf posterior draws; same code path the chain uses."""
    state = np.empty(1, np.uint64)
    state[0] = seed
    pv = 1.0 / (1.0 / sigma_mu2 + count / sig2)
    mn = pv * total / sig2
    out = np.empty(ndraws)
    for d in range(ndraws):
        out[d] = mn + np.sqrt(pv) * _normal(state)
    return out


@njit(cache=True, nogil=True)
def sigma2_cond_draws(nu, lam, rss, n, seed, ndraws):
    """Conditional error-variance draws; same code path the chain uses."""
    state = np.empty(1, np.uint64)
    state[0] = seed
    out = np.empty(ndraws)
    for d in range(ndraws):
        out[d] = (nu * lam + rss) / _chisq(nu + n, state)
    return out
