"""Pure-numpy split-search backend.

Every formula here is mirrored operation-for-operation by the compiled
backend in ``_split.pyx`` (same summation order, same tie rules, same
stable sort), so the two backends grow bit-identical trees. Keep them in
sync when editing either one.

All entry points take the full bootstrap matrix plus the node's row
indices and the candidate feature ids in their draw order. They return
``(feature_id, threshold, weighted_child_impurity)`` with ``feature_id
== -1`` when no candidate feature has two distinct values in the node.
"""

import numpy as np


def backend_name():
    return "python"


def _split_positions(sv):
    # positions i in 1..n-1 where the sorted values change; the only
    # evaluable split points
    return np.nonzero(sv[1:] != sv[:-1])[0] + 1


def _threshold(lo, hi):
    # midpoint, nudged back to lo if rounding lands on hi so that
    # routing with `x <= thr` reproduces the scanned partition
    thr = 0.5 * (lo + hi)
    if thr == hi:
        thr = lo
    return thr


def _gini_metric(sy, k, pos, n):
    nl = pos.astype(np.float64)
    nr = np.float64(n) - nl
    ssl = np.zeros(pos.shape[0])
    ssr = np.zeros(pos.shape[0])
    tot = np.zeros(k, dtype=np.int64)
    for c in range(k):
        tot[c] = np.count_nonzero(sy == c)
    cntl = np.empty((pos.shape[0], k), dtype=np.int64)
    for c in range(k):
        cum = np.cumsum(sy == c)
        cntl[:, c] = cum[pos - 1]
    for c in range(k):
        p = cntl[:, c] / nl
        ssl = ssl + p * p
        p = (tot[c] - cntl[:, c]) / nr
        ssr = ssr + p * p
    gl = 1.0 - ssl
    gr = 1.0 - ssr
    nf = np.float64(n)
    return (nl / nf) * gl + (nr / nf) * gr


def best_split_classification(X, idx, feats, y, k):
    n = idx.shape[0]
    if n < 2 or feats.shape[0] == 0:
        return -1, 0.0, np.inf
    yn = y[idx]
    best_feat = -1
    best_thr = 0.0
    best_metric = np.inf
    for f in feats:
        vals = X[idx, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        pos = _split_positions(sv)
        if pos.shape[0] == 0:
            continue
        sy = yn[order]
        metric = _gini_metric(sy, k, pos, n)
        j = int(np.argmin(metric))
        if metric[j] < best_metric:
            best_metric = metric[j]
            best_feat = int(f)
            i = int(pos[j])
            best_thr = _threshold(sv[i - 1], sv[i])
    return best_feat, best_thr, best_metric


def _group_gini_sides(sy, sg, k, n_groups, pos, n):
    """Cumulative per-(group, class) counts at the split positions."""
    b = pos.shape[0]
    cntl = np.empty((b, n_groups, k), dtype=np.int64)
    tot = np.zeros((n_groups, k), dtype=np.int64)
    for g in range(n_groups):
        gm = sg == g
        for c in range(k):
            both = gm & (sy == c)
            tot[g, c] = np.count_nonzero(both)
            cum = np.cumsum(both)
            cntl[:, g, c] = cum[pos - 1]
    return cntl, tot


def _rawlsian_side(g_side, cnt_side, n_side, mgs, lam, mm_w, avg_w, n_groups, k):
    """Blend the plain gini of one side with its qualifying-group term.

    ``cnt_side``: (b, n_groups, k) class counts of the side, ``n_side``:
    (b, n_groups) member counts. Groups are folded in ascending id order
    so the float accumulation matches the compiled scan.
    """
    b = g_side.shape[0]
    mx = np.full(b, -np.inf)
    sm = np.zeros(b)
    cq = np.zeros(b, dtype=np.int64)
    for g in range(n_groups):
        ng = n_side[:, g]
        qual = ng >= mgs
        if not np.any(qual):
            continue
        ngf = ng.astype(np.float64)
        ss = np.zeros(b)
        with np.errstate(divide="ignore", invalid="ignore"):
            for c in range(k):
                p = cnt_side[:, g, c] / ngf
                ss = ss + p * p
        gg = 1.0 - ss
        upd = qual & (gg > mx)
        mx = np.where(upd, gg, mx)
        sm = np.where(qual, sm + gg, sm)
        cq = cq + qual
    with np.errstate(invalid="ignore"):
        mn = sm / cq.astype(np.float64)
    blended = (1.0 - lam) * g_side + lam * (mm_w * mx + avg_w * mn)
    return np.where(cq > 0, blended, g_side)


def best_split_rawlsian(X, idx, feats, y, k, groups, n_groups, lam, mm_w, avg_w, mgs):
    n = idx.shape[0]
    if n < 2 or feats.shape[0] == 0:
        return -1, 0.0, np.inf
    yn = y[idx]
    gn = groups[idx]
    best_feat = -1
    best_thr = 0.0
    best_metric = np.inf
    for f in feats:
        vals = X[idx, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        pos = _split_positions(sv)
        if pos.shape[0] == 0:
            continue
        sy = yn[order]
        sg = gn[order]
        nl = pos.astype(np.float64)
        nr = np.float64(n) - nl
        nf = np.float64(n)

        tot = np.zeros(k, dtype=np.int64)
        for c in range(k):
            tot[c] = np.count_nonzero(sy == c)
        cnt = np.empty((pos.shape[0], k), dtype=np.int64)
        for c in range(k):
            cum = np.cumsum(sy == c)
            cnt[:, c] = cum[pos - 1]
        ssl = np.zeros(pos.shape[0])
        ssr = np.zeros(pos.shape[0])
        for c in range(k):
            p = cnt[:, c] / nl
            ssl = ssl + p * p
            p = (tot[c] - cnt[:, c]) / nr
            ssr = ssr + p * p
        gl = 1.0 - ssl
        gr = 1.0 - ssr

        cntl_gc, tot_gc = _group_gini_sides(sy, sg, k, n_groups, pos, n)
        ngl = cntl_gc.sum(axis=2)
        ngt = tot_gc.sum(axis=1)
        il = _rawlsian_side(gl, cntl_gc, ngl, mgs, lam, mm_w, avg_w, n_groups, k)
        ir = _rawlsian_side(
            gr, tot_gc[None, :, :] - cntl_gc, ngt[None, :] - ngl, mgs, lam, mm_w, avg_w, n_groups, k
        )
        metric = (nl / nf) * il + (nr / nf) * ir
        j = int(np.argmin(metric))
        if metric[j] < best_metric:
            best_metric = metric[j]
            best_feat = int(f)
            i = int(pos[j])
            best_thr = _threshold(sv[i - 1], sv[i])
    return best_feat, best_thr, best_metric


def best_split_regression(X, idx, feats, y):
    n = idx.shape[0]
    if n < 2 or feats.shape[0] == 0:
        return -1, 0.0, np.inf
    yn = y[idx]
    best_feat = -1
    best_thr = 0.0
    best_metric = np.inf
    for f in feats:
        vals = X[idx, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        pos = _split_positions(sv)
        if pos.shape[0] == 0:
            continue
        sy = yn[order]
        csy = np.cumsum(sy)
        csy2 = np.cumsum(sy * sy)
        toty = csy[n - 1]
        toty2 = csy2[n - 1]
        nl = pos.astype(np.float64)
        nr = np.float64(n) - nl
        nf = np.float64(n)
        syl = csy[pos - 1]
        syl2 = csy2[pos - 1]
        ml = syl / nl
        vl = syl2 / nl - ml * ml
        mr = (toty - syl) / nr
        vr = (toty2 - syl2) / nr - mr * mr
        metric = (nl / nf) * vl + (nr / nf) * vr
        j = int(np.argmin(metric))
        if metric[j] < best_metric:
            best_metric = metric[j]
            best_feat = int(f)
            i = int(pos[j])
            best_thr = _threshold(sv[i - 1], sv[i])
    return best_feat, best_thr, best_metric
