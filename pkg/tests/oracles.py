"""Independent reference implementations used only by the tests."""

from __future__ import annotations

import numpy as np


# -- epsilon-SVR dual ------------------------------------------------------------

def _project_box_hyperplane(v, lo, hi, y):
    """Euclidean projection onto {lo <= a <= hi, y.a = 0} with y in {+1, -1}.

    The projection is clip(v - lam * y) where lam zeroes the piecewise-linear,
    non-increasing g(lam) = y.clip(v - lam * y); g is evaluated at every
    breakpoint and the root interpolated.
    """
    bps = np.unique(np.concatenate([y * (v - lo), y * (v - hi)]))
    vals = (y[None, :] * np.clip(v[None, :] - bps[:, None] * y[None, :], lo, hi)).sum(1)
    k = np.searchsorted(-vals, 0.0)          # first breakpoint with g <= 0
    if k == 0:
        lam = bps[0]
    elif k == len(bps):
        lam = bps[-1]
    else:
        g0, g1 = vals[k - 1], vals[k]
        lam = bps[k - 1] + (bps[k] - bps[k - 1]) * g0 / (g0 - g1)
    return np.clip(v - lam * y, lo, hi)


def svr_kkt_violation(K, z, C, eps, beta, b):
    """Largest violation of the epsilon-SVR optimality conditions at (beta, b)."""
    r = z - (K @ beta + b)
    v = [abs(beta.sum()), max(0.0, np.max(np.abs(beta)) - C)]
    for bi, ri in zip(beta, r):
        if bi == 0:
            v.append(max(0.0, abs(ri) - eps))
        elif bi == C:
            v.append(max(0.0, eps - ri))
        elif bi == -C:
            v.append(max(0.0, ri + eps))
        else:
            v.append(abs(ri - eps * np.sign(bi)))
    return max(v)


def svr_polish(K, z, C, eps, beta, bound_tol=1e-7):
    """Exact solve on the identified active set; returns (beta, b).

    Coordinates within ``bound_tol * C`` of 0 or +-C are fixed; the free ones
    and the bias solve the stationarity equations
    K_FF beta_F + b = z_F - eps * sign(beta_F) - K_FB beta_B,  sum(beta) = 0.
    """
    beta = beta.copy()
    at_zero = np.abs(beta) <= bound_tol * C
    at_c = np.abs(np.abs(beta) - C) <= bound_tol * C
    beta[at_zero] = 0.0
    beta[at_c] = C * np.sign(beta[at_c])
    free = ~(at_zero | at_c)
    if free.any():
        F = np.flatnonzero(free)
        B = np.flatnonzero(~free)
        s = np.sign(beta[F])
        m = len(F)
        A = np.zeros((m + 1, m + 1))
        A[:m, :m] = K[np.ix_(F, F)]
        A[:m, m] = 1.0
        A[m, :m] = 1.0
        rhs = np.concatenate([z[F] - eps * s - K[np.ix_(F, B)] @ beta[B], [-beta[B].sum()]])
        sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
        beta[F] = sol[:m]
        return beta, float(sol[m])
    # no free coordinate: b is any value in the interval allowed by the bounded ones
    r = z - K @ beta
    lo, hi = -np.inf, np.inf
    for i in range(len(z)):
        if beta[i] == 0:
            lo, hi = max(lo, r[i] - eps), min(hi, r[i] + eps)
        elif beta[i] > 0:
            hi = min(hi, r[i] - eps)
        else:
            lo = max(lo, r[i] + eps)
    return beta, 0.5 * (lo + hi)


def svr_dual_oracle(K, z, C, eps, iters=500_000, tol=1e-8, check_every=200, certify=1e-10):
    """Solve the epsilon-SVR dual by accelerated projected gradient.

    Variables are (alpha, alpha*) stacked; minimise
    0.5 beta'K beta + eps * sum(alpha + alpha*) - z'beta with beta = alpha - alpha*.
    Every ``check_every`` steps the iterate is polished on its active set; the
    run ends early once the polished point satisfies the optimality conditions
    to ``certify``, otherwise when a projected-gradient step moves less than
    ``tol``.  Returns (beta, b).
    """
    n = len(z)
    Q = np.block([[K, -K], [-K, K]])
    p = np.concatenate([eps - z, eps + z])
    y = np.concatenate([np.ones(n), -np.ones(n)])
    L = max(np.linalg.eigvalsh(Q).max(), 1e-12)
    x = np.zeros(2 * n)
    w, t = x.copy(), 1.0
    for k in range(iters):
        x_new = _project_box_hyperplane(w - (Q @ w + p) / L, 0.0, C, y)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        w = x_new + ((t - 1) / t_new) * (x_new - x)
        x, t = x_new, t_new
        if k % check_every == check_every - 1:
            beta, b = svr_polish(K, z, C, eps, x[:n] - x[n:])
            if svr_kkt_violation(K, z, C, eps, beta, b) < certify:
                return beta, b
            step = _project_box_hyperplane(x - (Q @ x + p) / L, 0.0, C, y) - x
            if np.max(np.abs(step)) < tol:
                break
    return svr_polish(K, z, C, eps, x[:n] - x[n:])


def svr_oracle_predict(X, z, C, gamma, eps, X_eval):
    d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1)
    K = np.exp(-gamma * d2)
    beta, b = svr_dual_oracle(K, z, C, eps)
    d2e = ((X_eval[:, None, :] - X[None, :, :]) ** 2).sum(-1)
    return np.exp(-gamma * d2e) @ beta + b, beta, b


# -- regression tree -------------------------------------------------------------

def best_split_exhaustive(X, y):
    """Best (feature, threshold, sse) over every midpoint of every feature.

    Ties keep the lowest feature index, then the lowest threshold.
    """
    best = (None, None, np.sum((y - y.mean()) ** 2))
    for j in range(X.shape[1]):
        vals = np.unique(X[:, j])
        for lo, hi in zip(vals[:-1], vals[1:]):
            thr = 0.5 * (lo + hi)
            left = X[:, j] <= thr
            sse = np.sum((y[left] - y[left].mean()) ** 2) + np.sum((y[~left] - y[~left].mean()) ** 2)
            if sse < best[2] - 1e-12:
                best = (j, thr, sse)
    return best


# -- rank statistics -------------------------------------------------------------

def spearman_rank_difference(a, b):
    """1 - 6 sum d^2 / (n (n^2 - 1)) for tie-free vectors."""
    ra = np.argsort(np.argsort(a)) + 1
    rb = np.argsort(np.argsort(b)) + 1
    n = len(a)
    return 1.0 - 6.0 * np.sum((ra - rb) ** 2) / (n * (n * n - 1))


def binom_tail_exact(hits, total):
    from fractions import Fraction
    from math import comb

    c = comb(total, hits)
    acc = 0
    for k in range(hits, total + 1):
        acc += c
        c = c * (total - k) // (k + 1)
    return float(Fraction(acc, 2 ** total))


# -- network gradients -----------------------------------------------------------

def fd_gradients(net, X, y, masks, h=1e-6):
    """Central finite differences of the batch MSE for every weight and bias."""
    from crossret.mlp import forward, mse_loss

    def loss():
        return mse_loss(forward(net, X, train=True, masks=masks)[0], y)

    out = []
    for group in (net.weights, net.biases):
        grads = []
        for p in group:
            g = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = loss()
                p[idx] = old - h
                down = loss()
                p[idx] = old
                g[idx] = (up - down) / (2 * h)
            grads.append(g)
        out.append(grads)
    return out
