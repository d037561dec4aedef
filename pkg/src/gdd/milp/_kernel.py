"""Dense bounded-variable primal simplex kernel.

Works on the internal form

    min c^T x   s.t.  A x <= b  (rows with is_eq: A x = b),   lo <= x <= up,

where ``lo`` is finite and ``up`` may be ``inf``. Columns are shifted so the
kernel iterates over x' = x - lo in [0, up - lo]. The tableau is dense and the
basis is reinverted from the original columns every ``REINVERT`` pivots.
"""

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f

OPTIMAL = 0
INFEASIBLE = 1
UNBOUNDED = 2
ITER_LIMIT = 3

PIV_TOL = 1e-9
OPT_TOL = 1e-9
REINVERT = 100
DEGEN_STREAK = 30


@njit(cache=True, nogil=True)
def _pivot(T, d, r, q):
    m, N = T.shape
    piv = T[r, q]
    for j in range(N):
        T[r, j] /= piv
    for i in range(m):
        if i != r:
            f = T[i, q]
            if f != 0.0:
                for j in range(N):
                    T[i, j] -= f * T[r, j]
    f = d[q]
    if f != 0.0:
        for j in range(N):
            d[j] -= f * T[r, j]


@njit(cache=True, nogil=True)
def _invert(B):
    try:
        return np.ascontiguousarray(np.linalg.inv(B)), True
    except Exception:  # singular basis
        return B, False


@njit(cache=True, nogil=True)
def _reinvert(full, bshift, cost, ubc, basis, vstat, T, beta, d):
    """Rebuild T, beta and d from the original columns for the current basis.

    Columns are laid out as n structurals, m slacks (identity) and m
    artificials (signed identity), so only the structural block needs a
    matrix product. A singular basis leaves the state untouched.
    """
    m, N = full.shape
    if m == 0:
        for j in range(N):
            d[j] = cost[j]
        return True
    n = N - 2 * m
    B = np.empty((m, m))
    for i in range(m):
        for k in range(m):
            B[k, i] = full[k, basis[i]]
    Binv, ok = _invert(B)
    if not ok:
        return False
    for i in range(m):
        for k in range(m):
            if not np.isfinite(Binv[i, k]):
                return False
    rhs = bshift.copy()
    for j in range(N):
        if vstat[j] == 1:
            for k in range(m):
                rhs[k] -= full[k, j] * ubc[j]
    if n > 0:
        T[:, :n] = Binv @ np.ascontiguousarray(full[:, :n])
    for i in range(m):
        for k in range(m):
            T[i, n + k] = Binv[i, k]
            T[i, n + m + k] = Binv[i, k] * full[k, n + m + k]
    newb = Binv @ rhs
    for i in range(m):
        beta[i] = newb[i]
    for j in range(N):
        s = cost[j]
        for i in range(m):
            s -= cost[basis[i]] * T[i, j]
        d[j] = s
    for i in range(m):
        d[basis[i]] = 0.0
    return True


@njit(cache=True, nogil=True)
def _primal(full, bshift, cost, ubc, basis, vstat, T, beta, d, max_iter, it0):
    """Run primal simplex to optimality. Returns (status, iterations so far)."""
    m, N = T.shape
    it = it0
    bland = False
    degen = 0
    since_inv = 0
    while True:
        if it >= max_iter:
            return ITER_LIMIT, it
        q = -1
        best = 0.0
        for j in range(N):
            if vstat[j] == 2 or ubc[j] <= 0.0:
                continue
            dj = d[j]
            if (vstat[j] == 0 and dj < -OPT_TOL) or (vstat[j] == 1 and dj > OPT_TOL):
                if bland:
                    q = j
                    break
                if abs(dj) > best:
                    best = abs(dj)
                    q = j
        if q < 0:
            return OPTIMAL, it
        direction = 1.0 if vstat[q] == 0 else -1.0
        tmax = ubc[q]
        r = -1
        best_lim = np.inf
        best_a = 0.0
        for i in range(m):
            a = direction * T[i, q]
            if a > PIV_TOL:
                lim = beta[i] / a
            elif a < -PIV_TOL:
                ubb = ubc[basis[i]]
                if ubb == np.inf:
                    continue
                lim = (ubb - beta[i]) / (-a)
            else:
                continue
            if lim < 0.0:
                lim = 0.0
            if r < 0 or lim < best_lim - 1e-12:
                r = i
                best_lim = lim
                best_a = abs(a)
            elif lim <= best_lim + 1e-12:
                if bland:
                    if basis[i] < basis[r]:
                        r = i
                        best_lim = min(lim, best_lim)
                        best_a = abs(a)
                elif abs(a) > best_a:
                    r = i
                    best_lim = min(lim, best_lim)
                    best_a = abs(a)
        it += 1
        if r < 0 and tmax == np.inf:
            return UNBOUNDED, it
        if r < 0 or tmax <= best_lim:
            t = tmax
            for i in range(m):
                beta[i] -= direction * t * T[i, q]
            vstat[q] = 1 - vstat[q]
        else:
            t = best_lim
            for i in range(m):
                beta[i] -= direction * t * T[i, q]
            leaving = basis[r]
            if direction * T[r, q] > 0.0:
                vstat[leaving] = 0
            else:
                vstat[leaving] = 1
            enter_val = (0.0 if vstat[q] == 0 else ubc[q]) + direction * t
            _pivot(T, d, r, q)
            beta[r] = enter_val
            basis[r] = q
            vstat[q] = 2
            d[q] = 0.0
            since_inv += 1
            if since_inv >= REINVERT:
                _reinvert(full, bshift, cost, ubc, basis, vstat, T, beta, d)
                since_inv = 0
        if t <= 1e-12:
            degen += 1
            if degen >= DEGEN_STREAK:
                bland = True
        else:
            degen = 0


@njit(cache=True, nogil=True)
def simplex(A, b, is_eq, c, lo, up, max_iter, feas_tol):
    """Solve the LP from scratch.

    Returns (status, x, objective, iterations, basis, vstat, art_sign); the
    last three describe the final basis for :func:`simplex_warm`.
    """
    m, n = A.shape
    N = n + 2 * m
    bshift = b - A @ lo
    full = np.zeros((m, N))
    ubc = np.empty(N)
    for j in range(n):
        ubc[j] = up[j] - lo[j]
        for i in range(m):
            full[i, j] = A[i, j]
    basis = np.empty(m, dtype=np.int64)
    vstat = np.zeros(N, dtype=np.int64)
    art_sign = np.ones(m)
    beta = np.empty(m)
    cost1 = np.zeros(N)
    need_phase1 = False
    scale = 1.0
    for i in range(m):
        full[i, n + i] = 1.0
        ubc[n + i] = 0.0 if is_eq[i] else np.inf
        art = n + m + i
        if (not is_eq[i]) and bshift[i] >= 0.0:
            basis[i] = n + i
            ubc[art] = 0.0
            full[i, art] = 1.0
        else:
            s = 1.0 if bshift[i] >= 0.0 else -1.0
            art_sign[i] = s
            full[i, art] = s
            ubc[art] = np.inf
            basis[i] = art
            cost1[art] = 1.0
            need_phase1 = True
        beta[i] = abs(bshift[i]) if basis[i] == art else bshift[i]
        scale = max(scale, abs(bshift[i]))
    for i in range(m):
        vstat[basis[i]] = 2
    T = np.empty((m, N))
    d = np.empty(N)
    it = 0
    ok = _reinvert(full, bshift, cost1, ubc, basis, vstat, T, beta, d)
    if need_phase1:
        status, it = _primal(full, bshift, cost1, ubc, basis, vstat, T, beta, d, max_iter, it)
        if status == ITER_LIMIT:
            return ITER_LIMIT, lo.copy(), np.nan, it, basis, vstat, art_sign
        _reinvert(full, bshift, cost1, ubc, basis, vstat, T, beta, d)
        infeas = 0.0
        for i in range(m):
            if basis[i] >= n + m:
                infeas += abs(beta[i])
        if infeas > feas_tol * scale:
            return INFEASIBLE, lo.copy(), np.nan, it, basis, vstat, art_sign
        # drive zero-level artificials out of the basis where possible
        for i in range(m):
            if basis[i] >= n + m:
                q = -1
                best = 1e-7
                for j in range(n + m):
                    if vstat[j] != 2 and ubc[j] >= 0.0 and abs(T[i, j]) > best:
                        best = abs(T[i, j])
                        q = j
                if q >= 0:
                    val = 0.0 if vstat[q] == 0 else ubc[q]
                    leaving = basis[i]
                    _pivot(T, d, i, q)
                    beta[i] = val
                    basis[i] = q
                    vstat[q] = 2
                    vstat[leaving] = 0
        for j in range(n + m, N):
            ubc[j] = 0.0
            if vstat[j] == 1:
                vstat[j] = 0
    cost2 = np.zeros(N)
    for j in range(n):
        cost2[j] = c[j]
    ok = _reinvert(full, bshift, cost2, ubc, basis, vstat, T, beta, d)
    status, it = _primal(full, bshift, cost2, ubc, basis, vstat, T, beta, d, max_iter, it)
    if status != OPTIMAL:
        return status, lo.copy(), np.nan, it, basis, vstat, art_sign
    return _finish(full, bshift, cost2, ubc, basis, vstat, T, beta, d, max_iter, it,
                   lo, c, n, art_sign, True)


@njit(cache=True, nogil=True)
def _finish(full, bshift, cost2, ubc, basis, vstat, T, beta, d, max_iter, it, lo, c, n,
            art_sign, refresh):
    ok = _reinvert(full, bshift, cost2, ubc, basis, vstat, T, beta, d) if refresh else False
    if ok:
        # clean up after reinversion drift with a few more pivots
        status, it = _primal(full, bshift, cost2, ubc, basis, vstat, T, beta, d, max_iter, it)
        if status != OPTIMAL:
            return status, lo.copy(), np.nan, it, basis, vstat, art_sign
    N = full.shape[1]
    m = full.shape[0]
    xs = np.zeros(N)
    for j in range(N):
        if vstat[j] == 1:
            xs[j] = ubc[j]
    for i in range(m):
        xs[basis[i]] = beta[i]
    x = np.empty(n)
    for j in range(n):
        v = xs[j]
        if v < 0.0:
            v = 0.0
        if v > ubc[j]:
            v = ubc[j]
        x[j] = lo[j] + v
    obj = 0.0
    for j in range(n):
        obj += c[j] * x[j]
    return OPTIMAL, x, obj, it, basis, vstat, art_sign


@njit(cache=True, nogil=True)
def _dual(full, bshift, cost, ubc, basis, vstat, T, beta, d, max_iter, it0, feas_tol):
    """Bounded dual simplex from a dual feasible basis. Returns (status, iterations)."""
    m, N = T.shape
    it = it0
    since_inv = 0
    while True:
        if it >= max_iter:
            return ITER_LIMIT, it
        r = -1
        worst = feas_tol
        above = False
        for i in range(m):
            v = beta[i]
            if v < -worst:
                worst = -v
                r = i
                above = False
            else:
                u = ubc[basis[i]]
                if u != np.inf and v - u > worst:
                    worst = v - u
                    r = i
                    above = True
        if r < 0:
            return OPTIMAL, it
        target = ubc[basis[r]] if above else 0.0
        q = -1
        best = np.inf
        best_a = 0.0
        for j in range(N):
            if vstat[j] == 2 or ubc[j] <= 0.0:
                continue
            a = T[r, j]
            if abs(a) <= PIV_TOL:
                continue
            # moving x_j in its feasible direction must push x_Br toward target
            if above:
                ok = (vstat[j] == 0 and a > 0.0) or (vstat[j] == 1 and a < 0.0)
            else:
                ok = (vstat[j] == 0 and a < 0.0) or (vstat[j] == 1 and a > 0.0)
            if not ok:
                continue
            ratio = abs(d[j] / a)
            if ratio < best - 1e-12 or (ratio <= best + 1e-12 and abs(a) > best_a):
                best = ratio
                best_a = abs(a)
                q = j
        it += 1
        if q < 0:
            return INFEASIBLE, it
        delta = (beta[r] - target) / T[r, q]
        for i in range(m):
            beta[i] -= T[i, q] * delta
        enter_val = (0.0 if vstat[q] == 0 else ubc[q]) + delta
        leaving = basis[r]
        vstat[leaving] = 1 if above else 0
        _pivot(T, d, r, q)
        beta[r] = enter_val
        basis[r] = q
        vstat[q] = 2
        d[q] = 0.0
        since_inv += 1
        if since_inv >= REINVERT:
            _reinvert(full, bshift, cost, ubc, basis, vstat, T, beta, d)
            since_inv = 0


@njit(cache=True, nogil=True)
def simplex_warm(A, b, is_eq, c, lo, up, max_iter, feas_tol, basis0, vstat0, art_sign):
    """Re-solve after bound changes starting from a previous optimal basis.

    Returns the same tuple as :func:`simplex`; status -1 asks the caller to
    fall back to a cold start (basis singular or not dual feasible).
    """
    m, n = A.shape
    N = n + 2 * m
    bshift = b - A @ lo
    full = np.zeros((m, N))
    ubc = np.empty(N)
    for j in range(n):
        ubc[j] = up[j] - lo[j]
        for i in range(m):
            full[i, j] = A[i, j]
    for i in range(m):
        full[i, n + i] = 1.0
        ubc[n + i] = 0.0 if is_eq[i] else np.inf
        full[i, n + m + i] = art_sign[i]
        ubc[n + m + i] = 0.0
    basis = basis0.copy()
    vstat = vstat0.copy()
    for j in range(N):
        if vstat[j] == 1 and ubc[j] == np.inf:
            vstat[j] = 0
    cost = np.zeros(N)
    for j in range(n):
        cost[j] = c[j]
    T = np.empty((m, N))
    beta = np.empty(m)
    d = np.empty(N)
    if not _reinvert(full, bshift, cost, ubc, basis, vstat, T, beta, d):
        return -1, lo.copy(), np.nan, 0, basis, vstat, art_sign
    for j in range(N):
        if vstat[j] == 2 or ubc[j] <= 0.0:
            continue
        if vstat[j] == 0 and d[j] < -OPT_TOL:
            if ubc[j] == np.inf:
                return -1, lo.copy(), np.nan, 0, basis, vstat, art_sign
            vstat[j] = 1
            for i in range(m):
                beta[i] -= T[i, j] * ubc[j]
        elif vstat[j] == 1 and d[j] > OPT_TOL:
            vstat[j] = 0
            for i in range(m):
                beta[i] += T[i, j] * ubc[j]
    status, it = _dual(full, bshift, cost, ubc, basis, vstat, T, beta, d, max_iter, 0, feas_tol)
    if status == ITER_LIMIT:
        return -1, lo.copy(), np.nan, it, basis, vstat, art_sign
    if status != OPTIMAL:
        return status, lo.copy(), np.nan, it, basis, vstat, art_sign
    return _finish(full, bshift, cost, ubc, basis, vstat, T, beta, d, max_iter, it,
                   lo, c, n, art_sign, it > 20)
