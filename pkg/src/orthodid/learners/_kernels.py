"""Compiled inner loops for the first-stage learners."""

import numpy as np
from numba import njit


@njit(cache=True)
def _soft(z, thresh):
    if z > thresh:
        return z - thresh
    if z < -thresh:
        return z + thresh
    return 0.0


@njit(cache=True)
def lasso_cd(X, y, pen, beta, intercept, fit_intercept, tol, max_sweeps):
    """Cyclic coordinate descent for (1/M)||y - a - Xb||^2 + sum_j 2*pen_j*|b_j|.

    ``pen[j]`` is the soft-threshold level, i.e. lambda*loading_j/(2M).
    ``X`` should be Fortran-ordered. Returns (beta, intercept, sweeps, converged).
    """
    m, p = X.shape
    col_sq = np.empty(p)
    for j in range(p):
        s = 0.0
        for i in range(m):
            s += X[i, j] * X[i, j]
        col_sq[j] = s / m
    r = y - intercept - X @ beta
    for sweep in range(max_sweeps):
        max_delta = 0.0
        if fit_intercept:
            shift = r.mean()
            intercept += shift
            r -= shift
            max_delta = abs(shift)
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            bj = beta[j]
            rho = 0.0
            for i in range(m):
                rho += X[i, j] * r[i]
            rho = rho / m + col_sq[j] * bj
            new = _soft(rho, pen[j]) / col_sq[j]
            delta = new - bj
            if delta != 0.0:
                for i in range(m):
                    r[i] -= X[i, j] * delta
                beta[j] = new
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
        if max_delta < tol:
            return beta, intercept, sweep + 1, True
    return beta, intercept, max_sweeps, False


@njit(cache=True)
def _logit_loss(eta, d):
    # mean of log(1 + exp(eta)) - d*eta, computed stably
    s = 0.0
    for i in range(eta.shape[0]):
        e = eta[i]
        if e > 0:
            s += e + np.log1p(np.exp(-e)) - d[i] * e
        else:
            s += np.log1p(np.exp(e)) - d[i] * e
    return s / eta.shape[0]


@njit(cache=True)
def _loss_and_residual(eta, d, res):
    # fills res with sigmoid(eta) - d and returns the mean logistic loss
    s = 0.0
    for i in range(eta.shape[0]):
        e = eta[i]
        if e > 0:
            z = np.exp(-e)
            s += e + np.log1p(z) - d[i] * e
            res[i] = 1.0 / (1.0 + z) - d[i]
        else:
            z = np.exp(e)
            s += np.log1p(z) - d[i] * e
            res[i] = z / (1.0 + z) - d[i]
    return s / eta.shape[0]


@njit(cache=True)
def logit_prox_grad(X, d, lam, beta, intercept, step_l, max_iter, tol, trace):
    """Monotone accelerated proximal gradient for the L1-penalized logistic loss.

    Minimizes (1/M) sum[log(1+exp(a + x_i'b)) - d_i (a + x_i'b)] + lam*||b||_1
    with the intercept ``a`` unpenalized. Each step is a soft-threshold of a
    gradient step at the extrapolated point, with backtracking on the
    quadratic upper bound; the accepted iterate is the better of the new prox
    point and the previous iterate, so the objective never increases.
    ``trace`` (length >= max_iter, or empty) receives the objective after
    every iteration. Returns (beta, intercept, iterations, converged, step_l).
    """
    m, p = X.shape
    XT = X.T.copy()
    xb = beta.copy()
    xa = intercept
    yb = xb.copy()
    ya = xa
    # linear predictors X @ b are carried along with the iterates so that each
    # iteration needs one product with X (per backtrack) and one with X'
    Xx = X @ xb
    Xy = Xx.copy()
    t = 1.0
    f_x = _logit_loss(xa + Xx, d) + lam * np.abs(xb).sum()
    record = trace.shape[0] >= max_iter
    res = np.empty(m)
    zb = np.empty(p)
    for it in range(max_iter):
        f_y = _loss_and_residual(ya + Xy, d, res)
        gb = XT @ res / m
        ga = res.mean()
        while True:
            for j in range(p):
                zb[j] = _soft(yb[j] - gb[j] / step_l, lam / step_l)
            za = ya - ga / step_l
            diff_b = zb - yb
            diff_a = za - ya
            Xz = X @ zb
            f_z = _logit_loss(za + Xz, d)
            quad = f_y + gb @ diff_b + ga * diff_a + 0.5 * step_l * (diff_b @ diff_b + diff_a * diff_a)
            if f_z <= quad + 1e-13 * (1.0 + abs(f_y)):
                break
            step_l *= 2.0
        F_z = f_z + lam * np.abs(zb).sum()
        gap = 0.0
        for j in range(p):
            if abs(diff_b[j]) > gap:
                gap = abs(diff_b[j])
        if abs(diff_a) > gap:
            gap = abs(diff_a)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        accepted = F_z <= f_x
        if accepted:
            nb = zb.copy()
            na = za
            Xn = Xz
            f_new = F_z
        else:
            nb = xb
            na = xa
            Xn = Xx
            f_new = f_x
        c1 = t / t_new
        c2 = (t - 1.0) / t_new
        yb = nb + c1 * (zb - nb) + c2 * (nb - xb)
        ya = na + c1 * (za - na) + c2 * (na - xa)
        Xy = Xn + c1 * (Xz - Xn) + c2 * (Xn - Xx)
        xb = nb
        xa = na
        Xx = Xn
        f_x = f_new
        t = t_new
        if record:
            trace[it] = f_x
        if not accepted:
            # restart momentum after a rejected step
            t = 1.0
            yb = xb.copy()
            ya = xa
            Xy = Xx.copy()
        # rounding can leave F_z a hair above f_new once the iterates stall
        if gap * step_l < tol and F_z <= f_new + 1e-12 * (1.0 + abs(f_new)):
            return xb, xa, it + 1, True, step_l
    return xb, xa, max_iter, False, step_l


@njit(cache=True)
def nw_loo_scores(sqdist, y, bandwidths):
    """Leave-one-out mean squared error of the Gaussian Nadaraya-Watson smoother."""
    m = y.shape[0]
    nb = bandwidths.shape[0]
    out = np.empty(nb)
    total = y.sum()
    for b in range(nb):
        h2 = bandwidths[b] * bandwidths[b]
        sse = 0.0
        for i in range(m):
            num = 0.0
            den = 0.0
            for j in range(m):
                if j == i:
                    continue
                w = np.exp(-0.5 * sqdist[i, j] / h2)
                num += w * y[j]
                den += w
            if den > 0.0:
                pred = num / den
            else:
                pred = (total - y[i]) / (m - 1)
            sse += (y[i] - pred) ** 2
        out[b] = sse / m
    return out


@njit(cache=True)
def _best_split(xcol, y, idx, min_leaf):
    """Best midpoint threshold for one feature over samples ``idx``.

    Returns (sse, threshold); sse is +inf when no admissible split exists.
    """
    n = idx.shape[0]
    vals = np.empty(n)
    for i in range(n):
        vals[i] = xcol[idx[i]]
    order = np.argsort(vals, kind="mergesort")
    sv = vals[order]
    sy = np.empty(n)
    for i in range(n):
        sy[i] = y[idx[order[i]]]
    tot = sy.sum()
    tot2 = (sy * sy).sum()
    best = np.inf
    thr = 0.0
    left = 0.0
    left2 = 0.0
    for i in range(n - 1):
        left += sy[i]
        left2 += sy[i] * sy[i]
        nl = i + 1
        nr = n - nl
        if nl < min_leaf:
            continue
        if nr < min_leaf:
            break
        if sv[i] == sv[i + 1]:
            continue
        right = tot - left
        right2 = tot2 - left2
        sse = (left2 - left * left / nl) + (right2 - right * right / nr)
        if sse < best:
            best = sse
            thr = 0.5 * (sv[i] + sv[i + 1])
    return best, thr


@njit(cache=True)
def build_tree(X, y, sample, mtry, min_leaf, seed):
    """Grow one regression tree on the rows listed in ``sample`` (may repeat).

    Nodes are stored in flat arrays: feature (-1 for leaves), threshold,
    left child, right child and node value (mean response).
    """
    np.random.seed(seed)
    n = sample.shape[0]
    p = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    # explicit stack of (node id, start, end) into a working index buffer
    buf = sample.copy()
    stack_node = np.empty(cap, dtype=np.int64)
    stack_lo = np.empty(cap, dtype=np.int64)
    stack_hi = np.empty(cap, dtype=np.int64)
    top = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = stack_node[top]
        lo = stack_lo[top]
        hi = stack_hi[top]
        idx = buf[lo:hi]
        cnt = hi - lo
        s = 0.0
        s2 = 0.0
        for i in range(cnt):
            v = y[idx[i]]
            s += v
            s2 += v * v
        mean = s / cnt
        value[node] = mean
        if cnt < 2 * min_leaf or s2 - s * s / cnt <= 1e-12 * (1.0 + s2):
            continue
        feats = np.random.permutation(p)[:mtry]
        best = np.inf
        best_f = -1
        best_t = 0.0
        for f in feats:
            sse, thr = _best_split(X[:, f], y, idx, min_leaf)
            if sse < best:
                best = sse
                best_f = f
                best_t = thr
        if best_f < 0:
            continue
        # partition idx in place
        lbuf = np.empty(cnt, dtype=np.int64)
        rbuf = np.empty(cnt, dtype=np.int64)
        nl = 0
        nr = 0
        for i in range(cnt):
            r = idx[i]
            if X[r, best_f] <= best_t:
                lbuf[nl] = r
                nl += 1
            else:
                rbuf[nr] = r
                nr += 1
        for i in range(nl):
            buf[lo + i] = lbuf[i]
        for i in range(nr):
            buf[lo + nl + i] = rbuf[i]
        feature[node] = best_f
        threshold[node] = best_t
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        stack_node[top] = lc
        stack_lo[top] = lo
        stack_hi[top] = lo + nl
        top += 1
        stack_node[top] = rc
        stack_lo[top] = lo + nl
        stack_hi[top] = hi
        top += 1
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy())


@njit(cache=True)
def predict_tree(X, feature, threshold, left, right, value):
    out = np.empty(X.shape[0])
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@njit(cache=True)
def leaf_means(X, y, feature, threshold, left, right, value):
    """Replace leaf values by the mean response of the training rows routed to each leaf.

    Every leaf holds at least one bootstrap row, hence at least one training row.
    """
    n_nodes = feature.shape[0]
    sums = np.zeros(n_nodes)
    counts = np.zeros(n_nodes)
    for i in range(X.shape[0]):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        sums[node] += y[i]
        counts[node] += 1.0
    out = value.copy()
    for node in range(n_nodes):
        if feature[node] < 0 and counts[node] > 0:
            out[node] = sums[node] / counts[node]
    return out
