"""Linear quantile regression by exact minimisation of the check loss.

The solver walks between basic solutions (fits interpolating ``m`` data
points) in the manner of the Barrodale-Roberts L1 simplex: at a vertex it
prices the ``2m`` edge directions, picks the steepest descending one and
takes the *long* step to the minimiser of the objective along that edge,
which is a weighted median of the residual breakpoints.  Every step strictly
decreases the objective, so the walk cannot cycle.

A vertex with extra zero residuals (a degenerate vertex) is not certified by
its own ``2m`` edges.  There the solver enumerates the edge rays of every
sub-basis of the active set; if none of them descends the vertex is a global
minimiser, by convexity.

The kernels are compiled with numba and release the GIL, so batches of
replicate fits can be spread over threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import DidNotConverge, InvalidTau, RankDeficientDesign

OK = 0
MAXITER = 1
UNCERTIFIED = 2
SINGULAR = 3

# degenerate vertices with more sub-bases than this are certified by an LP
MAX_RAY_SUBSETS = 200_000


def check_loss(u, tau: float):
    """Check (pinball) loss ``u * (tau - 1{u < 0})``; works elementwise."""
    if not 0.0 < tau < 1.0:
        raise InvalidTau(f"tau must lie in (0, 1), got {tau}")
    u = np.asarray(u, dtype=float)
    out = np.where(u >= 0, u * tau, -u * (1.0 - tau))
    return float(out) if out.ndim == 0 else out


def zero_tolerance(y: np.ndarray) -> float:
    return 1e-8 * (1.0 + float(np.max(np.abs(y)))) if len(y) else 1e-8


@dataclass(frozen=True)
class QrFit:
    tau: float
    beta: np.ndarray
    loss: float
    residuals: np.ndarray
    n_zero: int
    basis: np.ndarray = field(repr=False)
    iterations: int = 0
    extreme_tau: bool = False


# ---------------------------------------------------------------- kernels


@njit(cache=True, nogil=True)
def _rho(u, tau):
    if u >= 0.0:
        return u * tau
    return -u * (1.0 - tau)


@njit(cache=True, nogil=True)
def _objective(r, tau):
    s = 0.0
    for i in range(r.shape[0]):
        s += _rho(r[i], tau)
    return s


@njit(cache=True, nogil=True)
def _greedy_basis(X, order):
    """First ``m`` rows in ``order`` that are linearly independent."""
    n, m = X.shape
    Q = np.zeros((m, m))
    basis = np.full(m, -1, dtype=np.int64)
    got = 0
    for idx in range(n):
        i = order[idx]
        v = X[i].copy()
        nrm0 = np.sqrt(np.sum(v * v))
        if nrm0 == 0.0:
            continue
        for j in range(got):
            v -= np.dot(Q[j], v) * Q[j]
        nrm = np.sqrt(np.sum(v * v))
        if nrm > 1e-9 * nrm0:
            Q[got] = v / nrm
            basis[got] = i
            got += 1
            if got == m:
                break
    return basis, got


@njit(cache=True, nogil=True)
def _start_basis(X, y, tau):
    beta = np.linalg.lstsq(X, y)[0]
    r = y - X @ beta
    shift = np.quantile(r, tau)
    order = np.argsort(np.abs(r - shift), kind="mergesort")
    return _greedy_basis(X, order)


@njit(cache=True, nogil=True)
def _line_search(r, w, slope0, active):
    """Minimise sum rho(r_i - t w_i) over t >= 0 given the slope at 0+.

    Only rows with nonzero residual moving towards zero create breakpoints;
    active (zero-residual) rows are already priced into ``slope0``.
    Returns (t, entering row), or (-1, -1) if no breakpoint exists.
    """
    n = r.shape[0]
    ts = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    cnt = 0
    for i in range(n):
        if active[i]:
            continue
        wi = w[i]
        if wi != 0.0 and r[i] * wi > 0.0:
            ts[cnt] = r[i] / wi
            idx[cnt] = i
            cnt += 1
    if cnt == 0:
        return -1.0, -1
    order = np.argsort(ts[:cnt], kind="mergesort")
    slope = slope0
    for j in range(cnt):
        i = idx[order[j]]
        slope += abs(w[i])
        if slope >= 0.0:
            return ts[order[j]], i
    last = idx[order[cnt - 1]]
    return ts[order[cnt - 1]], last


@njit(cache=True, nogil=True)
def _ray_derivative(r, w, active, tau):
    d = 0.0
    for i in range(r.shape[0]):
        if active[i]:
            d += _rho(-w[i], tau)
        elif r[i] > 0.0:
            d -= tau * w[i]
        else:
            d += (1.0 - tau) * w[i]
    return d


@njit(cache=True, nogil=True)
def _n_choose_k(n, k):
    if k < 0 or k > n:
        return 0
    c = 1
    for j in range(k):
        c = c * (n - j) // (j + 1)
        if c > 10**12:
            return c
    return c


@njit(cache=True, nogil=True)
def _degenerate_step(X, y, r, active, tau, thr):
    """Search every edge ray of the active set for a descent direction.

    Returns (status, new_basis) where status is 0 (certified optimal),
    1 (descent ray found, step taken: new_basis valid) or 2 (too many
    sub-bases to enumerate).
    """
    n, m = X.shape
    act = np.empty(n, dtype=np.int64)
    na = 0
    for i in range(n):
        if active[i]:
            act[na] = i
            na += 1
    k = m - 1
    empty = np.empty(0, dtype=np.int64)
    if _n_choose_k(na, k) > 200000:
        return 2, empty
    comb = np.arange(k)
    while True:
        if k == 0:
            delta = np.ones(1)
            ok = True
        else:
            XS = np.empty((k, m))
            for j in range(k):
                XS[j] = X[act[comb[j]]]
            u, sv, vt = np.linalg.svd(XS)
            ok = sv[k - 1] > 1e-10 * sv[0]
            delta = vt[m - 1].copy()
        if ok:
            w0 = X @ delta
            for sgn in (1.0, -1.0):
                w = sgn * w0
                d = _ray_derivative(r, w, active, tau)
                if d < -thr * (1.0 + np.sum(np.abs(w))):
                    t, enter = _line_search(r, w, d, active)
                    if enter < 0:
                        continue
                    nb = np.empty(m, dtype=np.int64)
                    for j in range(k):
                        nb[j] = act[comb[j]]
                    nb[m - 1] = enter
                    return 1, nb
        # next combination
        if k == 0:
            break
        j = k - 1
        while j >= 0 and comb[j] == na - k + j:
            j -= 1
        if j < 0:
            break
        comb[j] += 1
        for jj in range(j + 1, k):
            comb[jj] = comb[jj - 1] + 1
    return 0, empty


@njit(cache=True, nogil=True)
def _qr_kernel(X, y, tau, basis0, ztol, maxit):
    """Exact check-loss minimiser.  Returns (beta, basis, status, iters)."""
    n, m = X.shape
    basis = basis0.copy()
    valid = basis.shape[0] == m
    if valid:
        for j in range(m):
            if basis[j] < 0 or basis[j] >= n:
                valid = False
    if valid:
        s = np.linalg.svd(X[basis])[1]
        valid = s[m - 1] > 1e-10 * s[0]
    if not valid:
        basis, got = _start_basis(X, y, tau)
        if got < m:
            return np.zeros(m), basis, SINGULAR, 0
    thr = 1e-12
    active = np.zeros(n, dtype=np.bool_)
    it = 0
    while it < maxit:
        it += 1
        XB = X[basis]
        Binv = np.linalg.inv(XB)
        beta = Binv @ y[basis]
        r = y - X @ beta
        for i in range(n):
            active[i] = abs(r[i]) <= ztol
        for j in range(m):
            r[basis[j]] = 0.0
            active[basis[j]] = True
        W = X @ Binv
        best = 0.0
        bk = -1
        bs = 1.0
        for k in range(m):
            lin = 0.0
            dpos = 0.0
            dneg = 0.0
            mag = 0.0
            for i in range(n):
                wi = W[i, k]
                mag += abs(wi)
                if active[i]:
                    dpos += _rho(-wi, tau)
                    dneg += _rho(wi, tau)
                elif r[i] > 0.0:
                    lin -= tau * wi
                else:
                    lin += (1.0 - tau) * wi
            dp = lin + dpos
            dn = -lin + dneg
            lim = -thr * (1.0 + mag)
            if dp < lim and dp / (1.0 + mag) < best:
                best = dp / (1.0 + mag)
                bk = k
                bs = 1.0
            if dn < lim and dn / (1.0 + mag) < best:
                best = dn / (1.0 + mag)
                bk = k
                bs = -1.0
        if bk >= 0:
            w = bs * W[:, bk]
            slope0 = _ray_derivative(r, w, active, tau)
            t, enter = _line_search(r, w, slope0, active)
            if enter >= 0:
                basis[bk] = enter
                continue
        n_act = 0
        for i in range(n):
            if active[i]:
                n_act += 1
        if n_act == m:
            return beta, basis, OK, it
        status, nb = _degenerate_step(X, y, r, active, tau, thr)
        if status == 0:
            return beta, basis, OK, it
        if status == 2:
            return beta, basis, UNCERTIFIED, it
        basis = nb
    XB = X[basis]
    beta = np.linalg.solve(XB, y[basis])
    return beta, basis, MAXITER, it


@njit(cache=True, nogil=True)
def _fit_batch(X, Y, taus, rows, ztol, maxit, start):
    """Fit many responses on (row subsets of) one design.

    Y has shape (R, dY, n) with dY in {1, d}; rows has shape (R, dR, ne) with
    dR in {1, d} and R either matching Y or 1.  Row subsets select which
    observations enter the fit.  Bases are warm-started across tau within a replicate.
    Returns betas (R, d, m), statuses (R, d).
    """
    R = Y.shape[0]
    d = taus.shape[0]
    m = X.shape[1]
    betas = np.zeros((R, d, m))
    status = np.zeros((R, d), dtype=np.int64)
    for rep in range(R):
        # every replicate starts from the same basis so results do not
        # depend on how replicates are batched
        basis = start
        for k in range(d):
            yk = Y[rep, k if Y.shape[1] > 1 else 0]
            rr = rows[rep if rows.shape[0] > 1 else 0, k if rows.shape[1] > 1 else 0]
            Xs = X[rr]
            ys = yk[rr]
            beta, basis, st, _ = _qr_kernel(Xs, ys, taus[k], basis, ztol[rep], maxit)
            betas[rep, k] = beta
            status[rep, k] = st
            if st != OK:
                break
    return betas, status


# ---------------------------------------------------------------- wrappers


def _as_design(design, y):
    X = np.ascontiguousarray(design, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.ascontiguousarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise RankDeficientDesign(
            f"design {X.shape} does not match response of length {y.shape}"
        )
    n, m = X.shape
    if m < 1 or n < m:
        raise RankDeficientDesign(f"need n >= m >= 1, got n={n}, m={m}")
    return X, y


def _lp_fallback(X, y, tau):
    """Certify/solve a pathological degenerate instance with HiGHS."""
    from scipy.optimize import linprog

    n, m = X.shape
    c = np.concatenate([np.zeros(m), np.full(n, tau), np.full(n, 1.0 - tau)])
    A = np.hstack([X, np.eye(n), -np.eye(n)])
    bounds = [(None, None)] * m + [(0, None)] * (2 * n)
    res = linprog(c, A_eq=A, b_eq=y, bounds=bounds, method="highs-ds")
    if res.status != 0:
        raise DidNotConverge(f"LP fallback failed: {res.message}")
    return res.x[:m]


def _finish(X, y, tau, beta, basis, it):
    r = y - X @ beta
    ztol = zero_tolerance(y)
    n, m = X.shape
    return QrFit(
        tau=float(tau),
        beta=beta,
        loss=float(np.sum(np.where(r >= 0, r * tau, -r * (1.0 - tau)))),
        residuals=r,
        n_zero=int(np.sum(np.abs(r) <= ztol)),
        basis=basis,
        iterations=int(it),
        extreme_tau=bool(n * min(tau, 1.0 - tau) < 1.0),
    )


def qr_fit(design, y, tau: float, *, start=None, maxit: int | None = None) -> QrFit:
    """Fit the linear ``tau``-quantile regression of ``y`` on ``design``.

    ``design`` is used as given (no intercept is added).  The result is a
    vertex solution: at least ``m`` residuals are exactly zero.
    """
    if not 0.0 < tau < 1.0:
        raise InvalidTau(f"tau must lie in (0, 1), got {tau}")
    X, y = _as_design(design, y)
    n, m = X.shape
    if maxit is None:
        maxit = 50 * n
    b0 = np.asarray(start if start is not None else [], dtype=np.int64)
    beta, basis, status, it = _qr_kernel(X, y, float(tau), b0, zero_tolerance(y), maxit)
    if status == SINGULAR:
        raise RankDeficientDesign("design does not have full column rank")
    if status == MAXITER:
        raise DidNotConverge(f"no optimality certificate after {it} iterations")
    if status == UNCERTIFIED:
        beta = _lp_fallback(X, y, tau)
    return _finish(X, y, tau, beta, basis, it)


def qr_fit_grid(design, y, grid) -> list[QrFit]:
    """Fit every tau of ``grid`` (a QuantileGrid or a sequence), warm-starting."""
    taus = getattr(grid, "taus", grid)
    fits = []
    start = None
    for tau in taus:
        try:
            fit = qr_fit(design, y, float(tau), start=start)
        except (DidNotConverge, RankDeficientDesign) as exc:
            raise type(exc)(f"tau={float(tau):g}: {exc}") from exc
        start = fit.basis
        fits.append(fit)
    return fits


def fit_batch(design, Y, taus, rows=None, start=None) -> np.ndarray:
    """Coefficients for many responses at once, shape (R, d, m).

    ``Y`` is (R, n) for a response shared across tau or (R, d, n) for
    per-tau responses.  ``rows`` optionally restricts each fit to a subset of
    observations, shape (R, d, n_eff) or (R, n_eff).  ``start`` is the
    basis every replicate's first fit starts from.
    """
    X = np.ascontiguousarray(design, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 2:
        Y = Y[:, None, :]
    Y = np.ascontiguousarray(Y)
    taus = np.ascontiguousarray(taus, dtype=float)
    n = X.shape[0]
    if rows is None:
        rows = np.arange(n, dtype=np.int64)[None, None, :]
    else:
        rows = np.asarray(rows, dtype=np.int64)
        if rows.ndim == 2:
            rows = rows[:, None, :]
    rows = np.ascontiguousarray(rows)
    ztol = 1e-8 * (1.0 + np.max(np.abs(Y), axis=(1, 2)))
    maxit = 50 * n
    start = np.asarray(start if start is not None else [], dtype=np.int64)
    betas, status = _fit_batch(X, Y, taus, rows, ztol, maxit, start)
    bad = np.argwhere(status != OK)
    for rep, k in bad:
        st = status[rep, k]
        exc = None
        if st == SINGULAR:
            exc = RankDeficientDesign(f"row {rep}, tau={taus[k]:g}: singular design")
        elif st == MAXITER:
            exc = DidNotConverge(f"row {rep}, tau={taus[k]:g}: iteration cap hit")
        if exc is not None:
            exc.row, exc.tau = int(rep), float(taus[k])
            raise exc
        # uncertified degenerate vertex: finish the chain one fit at a time
        rr = rows[min(rep, rows.shape[0] - 1)]
        for kk in range(k, len(taus)):
            ri = rr[min(kk, rr.shape[0] - 1)]
            yk = Y[rep, min(kk, Y.shape[1] - 1)]
            try:
                betas[rep, kk] = qr_fit(X[ri], yk[ri], taus[kk]).beta
            except (DidNotConverge, RankDeficientDesign) as exc:
                exc.row, exc.tau = int(rep), float(taus[kk])
                raise
    return betas


def ols_fit(design, y):
    """Least-squares fit; returns (beta, fitted, residuals)."""
    X, y = _as_design(design, y)
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise RankDeficientDesign("design does not have full column rank")
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    fitted = X @ beta
    return beta, fitted, y - fitted
