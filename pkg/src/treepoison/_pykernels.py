"""Pure numpy split-search kernels; the fallback when ``_ckernels`` is not built.

Every function here has a twin in ``_ckernels.pyx`` with the same signature and
the same floating-point expression order, so both backends return identical
doubles. Shared conventions:

* ``X`` is the full (n, d) float64 feature matrix and ``y`` the full int8
  vector of effective labels.
* ``S`` is an (r, m) intp matrix; row ``j`` lists the m region indices sorted
  by feature ``feats[j]`` (ties by index).
* ``L`` is the table ``L[k] = k * log2(k)`` from :func:`xlogx_table`.
"""

from __future__ import annotations

import math

import numpy as np

GAIN_EPS = 1e-12


def xlogx_table(n: int) -> np.ndarray:
    """``L[k] = k * log2(k)`` for k = 0..n, with L[0] = 0."""
    table = np.zeros(n + 1, dtype=np.float64)
    for k in range(2, n + 1):
        table[k] = k * math.log2(k)
    table.setflags(write=False)
    return table


def gain_from_counts(lp, ln, rp, rn, L) -> float:
    """Information gain of a split from its four side/class counts."""
    nl = lp + ln
    nr = rp + rn
    if nl == 0 or nr == 0:
        return 0.0
    n = nl + nr
    g = ((L[n] - (L[lp + rp] + L[ln + rn]))
         - ((L[nl] - (L[lp] + L[ln])) + (L[nr] - (L[rp] + L[rn])))) / n
    g = float(g)
    return 0.0 if g < GAIN_EPS else g


def _vec_gain(lp, ln, rp, rn, L):
    # callers guarantee both sides nonempty
    nl = lp + ln
    nr = rp + rn
    n = nl + nr
    g = ((L[n] - (L[lp + rp] + L[ln + rn]))
         - ((L[nl] - (L[lp] + L[ln])) + (L[nr] - (L[rp] + L[rn])))) / n
    g[g < GAIN_EPS] = 0.0
    return g


def _row_counts(X, y, row, f):
    xs = X[row, f]
    pos = np.cumsum(y[row] == 1)
    j = np.flatnonzero(xs[:-1] < xs[1:])
    lp = pos[j]
    ln = j + 1 - lp
    return xs, j, lp, ln


def best_split(X, y, S, feats, min_gain, L):
    """Return (row, threshold, gain, lp, ln, rp, rn); row is -1 if no split beats min_gain."""
    m = S.shape[1]
    P = int(np.count_nonzero(y[S[0]] == 1))
    Q = m - P
    best = (-1, 0.0, float(min_gain), 0, 0, 0, 0)
    if m < 2:
        return best
    for r in range(S.shape[0]):
        xs, j, lp, ln = _row_counts(X, y, S[r], feats[r])
        if j.size == 0:
            continue
        g = _vec_gain(lp, ln, P - lp, Q - ln, L)
        a = int(np.argmax(g))
        if g[a] > best[2]:
            best = (r, float(xs[j[a]]), float(g[a]), int(lp[a]), int(ln[a]),
                    int(P - lp[a]), int(Q - ln[a]))
    return best


def partition(X, S, f, v):
    """Split every row of ``S`` by ``X[:, f] <= v``, keeping each row's order."""
    mask = X[S, f] <= v
    r = S.shape[0]
    left = S[mask].reshape(r, -1)
    right = S[~mask].reshape(r, -1)
    return np.ascontiguousarray(left), np.ascontiguousarray(right)


def _flip_gains(lp, ln, rp, rn, L):
    """Gains after flipping one +1 / one -1 on the left / right, NaN when impossible."""
    out = {}
    for key, ok, args in (
        ("L+", lp > 0, (lp - 1, ln + 1, rp, rn)),
        ("L-", ln > 0, (lp + 1, ln - 1, rp, rn)),
        ("R+", rp > 0, (lp, ln, rp - 1, rn + 1)),
        ("R-", rn > 0, (lp, ln, rp + 1, rn - 1)),
    ):
        safe = [np.where(ok, a, 0) for a in args]
        with np.errstate(invalid="ignore", divide="ignore"):
            g = _vec_gain(*safe, L)
        g[~ok] = np.nan
        out[key] = g
    return out


def _group_gains(lp, ln, rp, rn, L):
    """Post-flip gain of the chosen split for each (side, class) group, or None."""
    return {
        ("L", 1): gain_from_counts(lp - 1, ln + 1, rp, rn, L) if lp else None,
        ("L", -1): gain_from_counts(lp + 1, ln - 1, rp, rn, L) if ln else None,
        ("R", 1): gain_from_counts(lp, ln, rp - 1, rn + 1, L) if rp else None,
        ("R", -1): gain_from_counts(lp, ln, rp + 1, rn - 1, L) if rn else None,
    }


def stable_indices(X, y, S, feats, best_row, v, min_gain, L, region):
    """Region indices whose single flip keeps (feats[best_row], v) the chosen split.

    ``region`` is the node's index set in ascending order. Returns the stable
    subset (ascending) and the number of triple comparisons performed.
    """
    f = feats[best_row]
    m = S.shape[1]
    P = int(np.count_nonzero(y[region] == 1))
    Q = m - P
    on_left = X[region, f] <= v
    is_pos = y[region] == 1
    lp = int(np.count_nonzero(on_left & is_pos))
    ln = int(np.count_nonzero(on_left)) - lp
    rp, rn = P - lp, Q - ln
    unstable = np.zeros(m, dtype=bool)
    group_of = {("L", 1): on_left & is_pos, ("L", -1): on_left & ~is_pos,
                ("R", 1): ~on_left & is_pos, ("R", -1): ~on_left & ~is_pos}
    live = {}
    for key, g in _group_gains(lp, ln, rp, rn, L).items():
        if g is None:
            continue
        if g <= min_gain:
            unstable |= group_of[key]
        else:
            live[key] = g
    comparisons = 0
    for r in range(S.shape[0]):
        if not live:
            break
        fr = feats[r]
        xs, j, clp, cln = _row_counts(X, y, S[r], fr)
        if j.size == 0:
            continue
        vs = xs[j]
        fg = _flip_gains(clp, cln, P - clp, Q - cln, L)
        if fr < f:
            prec = np.ones(j.size, dtype=bool)
        elif fr == f:
            prec = vs < v
        else:
            prec = np.zeros(j.size, dtype=bool)
        same = (vs == v) if fr == f else np.zeros(j.size, dtype=bool)
        x_region = X[region, fr]
        for (side, cls), g in live.items():
            comparisons += 2 * int(np.count_nonzero(~same))
            tag = "+" if cls == 1 else "-"
            gl, gr = fg["L" + tag], fg["R" + tag]
            beat_l = ((gl > g) | ((gl == g) & prec)) & ~same
            beat_r = ((gr > g) | ((gr == g) & prec)) & ~same
            hit = np.zeros(m, dtype=bool)
            if beat_l.any():
                hit |= x_region <= vs[beat_l].max()
            if beat_r.any():
                hit |= x_region > vs[beat_r].min()
            unstable |= hit & group_of[(side, cls)]
    return region[~unstable], comparisons
