# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: batched log-space forward-backward, Viterbi and
blockwise projection onto {u >= 0, sum(u) <= sigma}.

Sentences are stored back to back in one (T, J) array of per-token log
emission scores; ``offsets`` has N+1 entries delimiting them.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY
from libc.stdlib cimport malloc, free, qsort

cnp.import_array()

# Below this the shared-shift sum is recomputed with a per-cell log-sum-exp.
cdef double SHARED_SHIFT_FLOOR = 1e-250


cdef inline double _lse_col(const double[::1] a, const double[:, ::1] lt,
                            Py_ssize_t y, Py_ssize_t J) noexcept nogil:
    # log sum_{y'} exp(a[y'] + lt[y', y])
    cdef double m = -INFINITY, v, s = 0.0
    cdef Py_ssize_t k
    for k in range(J):
        v = a[k] + lt[k, y]
        if v > m:
            m = v
    if m == -INFINITY:
        return -INFINITY
    for k in range(J):
        s += exp(a[k] + lt[k, y] - m)
    return m + log(s)


cdef inline double _lse_row(const double[::1] b, const double[:, ::1] lt,
                            Py_ssize_t y, Py_ssize_t J) noexcept nogil:
    # log sum_{y2} exp(lt[y, y2] + b[y2])
    cdef double m = -INFINITY, v, s = 0.0
    cdef Py_ssize_t k
    for k in range(J):
        v = lt[y, k] + b[k]
        if v > m:
            m = v
    if m == -INFINITY:
        return -INFINITY
    for k in range(J):
        s += exp(lt[y, k] + b[k] - m)
    return m + log(s)


def forward_backward(double[::1] log_start, double[:, ::1] log_trans,
                     double[:, ::1] log_obs, long[::1] offsets,
                     bint want_pairwise=False):
    """Posterior marginals for every sentence.

    Returns ``(gamma, start_counts, trans_counts, logliks, pairwise,
    obs_score)`` where ``obs_score`` is sum_t sum_y gamma[t, y] log_obs[t, y].
    A sentence with no positive-probability path gets loglik ``-inf`` and
    zero marginals; the caller decides how to report it.
    """
    cdef Py_ssize_t T = log_obs.shape[0]
    cdef Py_ssize_t J = log_obs.shape[1]
    cdef Py_ssize_t N = offsets.shape[0] - 1
    cdef Py_ssize_t n, t, a, b, y, k, lo, hi
    cdef double m, s, logz, c, ma, mb, v, obs_score = 0.0

    gamma_arr = np.zeros((T, J))
    start_arr = np.zeros(J)
    trans_arr = np.zeros((J, J))
    ll_arr = np.zeros(N)
    cdef double[:, ::1] gamma = gamma_arr
    cdef double[::1] start_counts = start_arr
    cdef double[:, ::1] trans_counts = trans_arr
    cdef double[::1] logliks = ll_arr
    cdef double[:, :, ::1] pair
    pair_arr = None
    if want_pairwise:
        pair_arr = np.zeros((T, J, J))
        pair = pair_arr

    P_arr = np.exp(np.asarray(log_trans))
    cdef double[:, ::1] P = P_arr
    alpha_arr = np.empty((T, J))
    beta_arr = np.empty((T, J))
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    ea_arr = np.empty(J)
    eb_arr = np.empty(J)
    bb_arr = np.empty(J)
    cdef double[::1] ea = ea_arr
    cdef double[::1] eb = eb_arr
    cdef double[::1] bb = bb_arr

    with nogil:
        for n in range(N):
            lo = offsets[n]
            hi = offsets[n + 1]
            # forward
            for y in range(J):
                alpha[lo, y] = log_start[y] + log_obs[lo, y]
            for t in range(lo + 1, hi):
                m = -INFINITY
                for k in range(J):
                    if alpha[t - 1, k] > m:
                        m = alpha[t - 1, k]
                if m == -INFINITY:
                    for y in range(J):
                        alpha[t, y] = -INFINITY
                    continue
                for k in range(J):
                    ea[k] = exp(alpha[t - 1, k] - m)
                for y in range(J):
                    s = 0.0
                    for k in range(J):
                        s += ea[k] * P[k, y]
                    if s > SHARED_SHIFT_FLOOR:
                        alpha[t, y] = m + log(s) + log_obs[t, y]
                    else:
                        alpha[t, y] = _lse_col(alpha[t - 1], log_trans, y, J) + log_obs[t, y]
            m = -INFINITY
            for y in range(J):
                if alpha[hi - 1, y] > m:
                    m = alpha[hi - 1, y]
            if m == -INFINITY:
                logliks[n] = -INFINITY
                continue
            s = 0.0
            for y in range(J):
                s += exp(alpha[hi - 1, y] - m)
            logz = m + log(s)
            logliks[n] = logz
            # backward
            for y in range(J):
                beta[hi - 1, y] = 0.0
            for t in range(hi - 2, lo - 1, -1):
                m = -INFINITY
                for k in range(J):
                    bb[k] = log_obs[t + 1, k] + beta[t + 1, k]
                    if bb[k] > m:
                        m = bb[k]
                if m == -INFINITY:
                    for y in range(J):
                        beta[t, y] = -INFINITY
                    continue
                for k in range(J):
                    eb[k] = exp(bb[k] - m)
                for y in range(J):
                    s = 0.0
                    for k in range(J):
                        s += P[y, k] * eb[k]
                    if s > SHARED_SHIFT_FLOOR:
                        beta[t, y] = m + log(s)
                    else:
                        beta[t, y] = _lse_row(bb, log_trans, y, J)
            # unary marginals
            for t in range(lo, hi):
                for y in range(J):
                    v = alpha[t, y] + beta[t, y] - logz
                    if v > -INFINITY:
                        v = exp(v)
                        gamma[t, y] = v
                        if v > 0.0:
                            obs_score += v * log_obs[t, y]
                    else:
                        gamma[t, y] = 0.0
            for y in range(J):
                start_counts[y] += gamma[lo, y]
            # pairwise marginals
            for t in range(lo + 1, hi):
                ma = -INFINITY
                mb = -INFINITY
                for k in range(J):
                    if alpha[t - 1, k] > ma:
                        ma = alpha[t - 1, k]
                    bb[k] = log_obs[t, k] + beta[t, k]
                    if bb[k] > mb:
                        mb = bb[k]
                for k in range(J):
                    ea[k] = exp(alpha[t - 1, k] - ma)
                    eb[k] = exp(bb[k] - mb)
                c = ma + mb - logz
                if c <= 50.0:
                    c = exp(c)
                    for a in range(J):
                        for b in range(J):
                            v = ea[a] * P[a, b] * eb[b] * c
                            trans_counts[a, b] += v
                            if want_pairwise:
                                pair[t, a, b] = v
                else:
                    for a in range(J):
                        for b in range(J):
                            v = alpha[t - 1, a] + log_trans[a, b] + bb[b] - logz
                            v = exp(v) if v > -INFINITY else 0.0
                            trans_counts[a, b] += v
                            if want_pairwise:
                                pair[t, a, b] = v
    return gamma_arr, start_arr, trans_arr, ll_arr, pair_arr, obs_score


def viterbi(double[::1] log_start, double[:, ::1] log_trans,
            double[:, ::1] log_obs, long[::1] offsets):
    """Best path per sentence; ties go to the lower state index."""
    cdef Py_ssize_t T = log_obs.shape[0]
    cdef Py_ssize_t J = log_obs.shape[1]
    cdef Py_ssize_t N = offsets.shape[0] - 1
    cdef Py_ssize_t n, t, y, k, lo, hi, best
    cdef double bv, v

    delta_arr = np.empty((T, J))
    back_arr = np.zeros((T, J), dtype=np.int64)
    path_arr = np.zeros(T, dtype=np.int64)
    scores_arr = np.zeros(N)
    cdef double[:, ::1] delta = delta_arr
    cdef long[:, ::1] back = back_arr
    cdef long[::1] path = path_arr
    cdef double[::1] scores = scores_arr

    with nogil:
        for n in range(N):
            lo = offsets[n]
            hi = offsets[n + 1]
            for y in range(J):
                delta[lo, y] = log_start[y] + log_obs[lo, y]
            for t in range(lo + 1, hi):
                for y in range(J):
                    best = 0
                    bv = delta[t - 1, 0] + log_trans[0, y]
                    for k in range(1, J):
                        v = delta[t - 1, k] + log_trans[k, y]
                        if v > bv:
                            bv = v
                            best = k
                    delta[t, y] = bv + log_obs[t, y]
                    back[t, y] = best
            best = 0
            bv = delta[hi - 1, 0]
            for y in range(1, J):
                if delta[hi - 1, y] > bv:
                    bv = delta[hi - 1, y]
                    best = y
            scores[n] = bv
            path[hi - 1] = best
            for t in range(hi - 1, lo, -1):
                path[t - 1] = back[t, path[t]]
    return path_arr, scores_arr


cdef int _cmp_desc(const void* a, const void* b) noexcept nogil:
    cdef double x = (<double*>a)[0]
    cdef double y = (<double*>b)[0]
    if x < y:
        return 1
    if x > y:
        return -1
    return 0


def project_blocks(double[:, ::1] lam, long[::1] offsets, double sigma):
    """Project every column block ``lam[offsets[w]:offsets[w+1], v]``.

    Each block is mapped to its Euclidean projection onto
    ``{u >= 0, sum(u) <= sigma}``. Returns a new array.
    """
    cdef Py_ssize_t M = lam.shape[0]
    cdef Py_ssize_t J = lam.shape[1]
    cdef Py_ssize_t W = offsets.shape[0] - 1
    cdef Py_ssize_t w, v, i, lo, hi, n, rho
    cdef double s, cs, theta, x
    out_arr = np.empty((M, J))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t maxlen = 1
    for w in range(W):
        if offsets[w + 1] - offsets[w] > maxlen:
            maxlen = offsets[w + 1] - offsets[w]
    cdef double* buf = <double*>malloc(maxlen * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for w in range(W):
                lo = offsets[w]
                hi = offsets[w + 1]
                n = hi - lo
                for v in range(J):
                    s = 0.0
                    for i in range(lo, hi):
                        x = lam[i, v]
                        if x > 0.0:
                            s += x
                    if s <= sigma:
                        for i in range(lo, hi):
                            x = lam[i, v]
                            out[i, v] = x if x > 0.0 else 0.0
                        continue
                    for i in range(n):
                        buf[i] = lam[lo + i, v]
                    qsort(buf, n, sizeof(double), _cmp_desc)
                    cs = 0.0
                    rho = 0
                    theta = 0.0
                    for i in range(n):
                        cs += buf[i]
                        if buf[i] - (cs - sigma) / (i + 1) > 0.0:
                            rho = i + 1
                            theta = (cs - sigma) / (i + 1)
                    for i in range(lo, hi):
                        x = lam[i, v] - theta
                        out[i, v] = x if x > 0.0 else 0.0
    finally:
        free(buf)
    return out_arr
