# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``; same signatures, same doubles."""

import numpy as np

cdef double GAIN_EPS = 1e-12


cdef inline double _gain(Py_ssize_t lp, Py_ssize_t ln, Py_ssize_t rp, Py_ssize_t rn,
                         const double* L) noexcept nogil:
    cdef Py_ssize_t nl = lp + ln
    cdef Py_ssize_t nr = rp + rn
    cdef Py_ssize_t n
    cdef double g
    if nl == 0 or nr == 0:
        return 0.0
    n = nl + nr
    g = ((L[n] - (L[lp + rp] + L[ln + rn]))
         - ((L[nl] - (L[lp] + L[ln])) + (L[nr] - (L[rp] + L[rn])))) / <double>n
    if g < GAIN_EPS:
        return 0.0
    return g


def gain_from_counts(Py_ssize_t lp, Py_ssize_t ln, Py_ssize_t rp, Py_ssize_t rn,
                     const double[::1] L):
    return _gain(lp, ln, rp, rn, &L[0])


def best_split(const double[:, ::1] X, const signed char[::1] y,
               const Py_ssize_t[:, ::1] S, const Py_ssize_t[::1] feats,
               double min_gain, const double[::1] L):
    cdef Py_ssize_t R = S.shape[0]
    cdef Py_ssize_t m = S.shape[1]
    cdef Py_ssize_t r, j, i, f, lp, ln, P = 0, Q
    cdef Py_ssize_t best_r = -1, blp = 0, bln = 0
    cdef double best_g = min_gain, best_v = 0.0, g, x
    cdef const double* Lp = &L[0]
    if m < 2:
        return (-1, 0.0, min_gain, 0, 0, 0, 0)
    with nogil:
        for j in range(m):
            if y[S[0, j]] == 1:
                P += 1
        Q = m - P
        for r in range(R):
            f = feats[r]
            lp = 0
            ln = 0
            for j in range(m - 1):
                i = S[r, j]
                if y[i] == 1:
                    lp += 1
                else:
                    ln += 1
                x = X[i, f]
                if x < X[S[r, j + 1], f]:
                    g = _gain(lp, ln, P - lp, Q - ln, Lp)
                    if g > best_g:
                        best_g = g
                        best_r = r
                        best_v = x
                        blp = lp
                        bln = ln
    if best_r < 0:
        return (-1, 0.0, min_gain, 0, 0, 0, 0)
    return (best_r, best_v, best_g, blp, bln, P - blp, Q - bln)


def partition(const double[:, ::1] X, const Py_ssize_t[:, ::1] S, Py_ssize_t f, double v):
    cdef Py_ssize_t R = S.shape[0]
    cdef Py_ssize_t m = S.shape[1]
    cdef Py_ssize_t r, j, i, a, b, ml = 0
    for j in range(m):
        if X[S[0, j], f] <= v:
            ml += 1
    left_arr = np.empty((R, ml), dtype=np.intp)
    right_arr = np.empty((R, m - ml), dtype=np.intp)
    cdef Py_ssize_t[:, ::1] left = left_arr
    cdef Py_ssize_t[:, ::1] right = right_arr
    with nogil:
        for r in range(R):
            a = 0
            b = 0
            for j in range(m):
                i = S[r, j]
                if X[i, f] <= v:
                    left[r, a] = i
                    a += 1
                else:
                    right[r, b] = i
                    b += 1
    return left_arr, right_arr


def stable_indices(const double[:, ::1] X, const signed char[::1] y,
                   const Py_ssize_t[:, ::1] S, const Py_ssize_t[::1] feats,
                   Py_ssize_t best_row, double v, double min_gain,
                   const double[::1] L, const Py_ssize_t[::1] region):
    cdef Py_ssize_t R = S.shape[0]
    cdef Py_ssize_t m = S.shape[1]
    cdef Py_ssize_t f = feats[best_row]
    cdef Py_ssize_t r, j, i, fr, k, cnt, lp = 0, ln = 0, rp = 0, rn = 0, P, Q
    cdef Py_ssize_t clp, cln, crp, crn, comparisons = 0
    cdef const double* Lp = &L[0]
    # group k = 2 * side + cls, side 0 = left, cls 0 = positive
    cdef double gg[4]
    cdef int live[4]
    cdef int has_l[4]
    cdef int has_r[4]
    cdef double max_l[4]
    cdef double min_r[4]
    cdef double fl[2]
    cdef double fgr[2]
    cdef int okl[2]
    cdef int okr[2]
    cdef int any_live = 0, prec, c
    cdef double x, g
    mark_arr = np.zeros(X.shape[0], dtype=np.uint8)
    cdef unsigned char[::1] mark = mark_arr

    with nogil:
        for j in range(m):
            i = region[j]
            if X[i, f] <= v:
                if y[i] == 1:
                    lp += 1
                else:
                    ln += 1
            else:
                if y[i] == 1:
                    rp += 1
                else:
                    rn += 1
        P = lp + rp
        Q = ln + rn
        gg[0] = _gain(lp - 1, ln + 1, rp, rn, Lp) if lp > 0 else -1.0
        gg[1] = _gain(lp + 1, ln - 1, rp, rn, Lp) if ln > 0 else -1.0
        gg[2] = _gain(lp, ln, rp - 1, rn + 1, Lp) if rp > 0 else -1.0
        gg[3] = _gain(lp, ln, rp + 1, rn - 1, Lp) if rn > 0 else -1.0
        live[0] = lp > 0
        live[1] = ln > 0
        live[2] = rp > 0
        live[3] = rn > 0
        for k in range(4):
            if live[k] and gg[k] <= min_gain:
                live[k] = 0
                # gain collapse: every member of the group is unstable
                for j in range(m):
                    i = region[j]
                    if 2 * (X[i, f] > v) + (y[i] != 1) == k:
                        mark[i] = 1
            if live[k]:
                any_live = 1

        if any_live:
            for r in range(R):
                fr = feats[r]
                for k in range(4):
                    has_l[k] = 0
                    has_r[k] = 0
                clp = 0
                cln = 0
                for j in range(m - 1):
                    i = S[r, j]
                    if y[i] == 1:
                        clp += 1
                    else:
                        cln += 1
                    x = X[i, fr]
                    if not (x < X[S[r, j + 1], fr]):
                        continue
                    if fr == f and x == v:
                        continue
                    prec = fr < f or (fr == f and x < v)
                    crp = P - clp
                    crn = Q - cln
                    okl[0] = clp > 0
                    okl[1] = cln > 0
                    okr[0] = crp > 0
                    okr[1] = crn > 0
                    if okl[0]:
                        fl[0] = _gain(clp - 1, cln + 1, crp, crn, Lp)
                    if okl[1]:
                        fl[1] = _gain(clp + 1, cln - 1, crp, crn, Lp)
                    if okr[0]:
                        fgr[0] = _gain(clp, cln, crp - 1, crn + 1, Lp)
                    if okr[1]:
                        fgr[1] = _gain(clp, cln, crp + 1, crn - 1, Lp)
                    for k in range(4):
                        if not live[k]:
                            continue
                        comparisons += 2
                        c = k & 1
                        g = gg[k]
                        if okl[c] and (fl[c] > g or (fl[c] == g and prec)):
                            has_l[k] = 1
                            max_l[k] = x
                        if okr[c] and (fgr[c] > g or (fgr[c] == g and prec)) and not has_r[k]:
                            has_r[k] = 1
                            min_r[k] = x
                for j in range(m):
                    i = S[r, j]
                    k = 2 * (X[i, f] > v) + (y[i] != 1)
                    if not live[k]:
                        continue
                    x = X[i, fr]
                    if (has_l[k] and x <= max_l[k]) or (has_r[k] and x > min_r[k]):
                        mark[i] = 1

    out = np.empty(m, dtype=np.intp)
    cdef Py_ssize_t[::1] o = out
    cnt = 0
    for j in range(m):
        i = region[j]
        if not mark[i]:
            o[cnt] = i
            cnt += 1
    return out[:cnt], comparisons
