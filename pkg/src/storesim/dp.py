"""Average-cost dynamic programming for ``rho1 * generation + rho2 * loss-of-load``.

Each action is parameterized by the next stored power ``s'``; the cheapest
generation that reaches ``s'`` from ``(s, delta)`` is piecewise linear in
``s'`` with at most four pieces (slopes 0, eta_d, 0, 1/eta_c). With ``v``
linearly interpolated between grid nodes, the one-step objective is
piecewise linear, so its exact minimum sits at a piece endpoint or a grid
node. Node minima per slope are answered by sparse-table range-minimum
queries, which makes one Bellman sweep O(n_s * n_d).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import integrate, optimize
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .distributions import EmpiricalDistribution, LaplaceModel
from .exceptions import HypothesisViolated, InvalidGrid, NoConvergence
from .model import SystemParams
from .policies import ThresholdPair, decide_kernel


@dataclass(frozen=True)
class CostWeights:
    rho1: float
    rho2: float

    def __post_init__(self):
        r1, r2 = float(self.rho1), float(self.rho2)
        if r1 < 0 or r2 < 0 or not (math.isfinite(r1) and math.isfinite(r2)):
            raise ValueError("weights must be finite and >= 0")
        if r1 == 0 and r2 == 0:
            raise ValueError("weights must not both be zero")
        object.__setattr__(self, "rho1", r1)
        object.__setattr__(self, "rho2", r2)


def _conditional_means(dist, n_d):
    """Equal-probability bins of ``dist`` with the conditional mean of each bin."""
    if isinstance(dist, EmpiricalDistribution):
        chunks = np.array_split(dist.values, n_d)
        chunks = [c for c in chunks if c.size]
        vals = np.array([c.mean() for c in chunks])
        probs = np.array([c.size for c in chunks], dtype=float) / dist.n
        return vals, probs
    u = np.linspace(0.0, 1.0, n_d + 1)
    if isinstance(dist, LaplaceModel):
        edges = np.empty(n_d + 1)
        edges[0], edges[-1] = -np.inf, np.inf
        edges[1:-1] = dist.ppf(u[1:-1])
        mu, b = dist.mu, dist.b
        # G(a) = E[X; X <= a]
        G = np.empty(n_d + 1)
        G[0], G[-1] = 0.0, mu
        a = edges[1:-1]
        Fa = dist.cdf(a)
        G[1:-1] = np.where(a <= mu, Fa * (a - b), mu - (1.0 - Fa) * (a + b))
        probs = np.full(n_d, 1.0 / n_d)
        return np.diff(G) * n_d, probs
    vals = np.array([
        integrate.quad(lambda t: float(dist.ppf(t)), u[j], u[j + 1], limit=200)[0] * n_d
        for j in range(n_d)
    ])
    return vals, np.full(n_d, 1.0 / n_d)


@dataclass
class Grid:
    """Uniform storage grid and a discretized disturbance law."""

    s_values: np.ndarray
    d_values: np.ndarray
    d_probs: np.ndarray

    def __post_init__(self):
        self.s_values = np.ascontiguousarray(self.s_values, dtype=float)
        self.d_values = np.ascontiguousarray(self.d_values, dtype=float)
        self.d_probs = np.ascontiguousarray(self.d_probs, dtype=float)
        s = self.s_values
        if s.ndim != 1 or s.size < 2:
            raise InvalidGrid("need at least two storage points")
        if s[0] != 0.0 or np.any(np.diff(s) <= 0):
            raise InvalidGrid("storage points must start at 0 and strictly increase")
        h = np.diff(s)
        if not np.allclose(h, h[0], rtol=1e-9, atol=0):
            raise InvalidGrid("storage points must be evenly spaced")
        if self.d_values.shape != self.d_probs.shape or self.d_values.ndim != 1 or self.d_values.size == 0:
            raise InvalidGrid("disturbance values and probabilities must be matching 1-D arrays")
        if not np.all(np.isfinite(self.d_values)) or np.any(self.d_probs < 0):
            raise InvalidGrid("disturbance values must be finite and probabilities >= 0")
        if abs(self.d_probs.sum() - 1.0) > 1e-12:
            raise InvalidGrid(f"disturbance probabilities sum to {self.d_probs.sum()!r}")

    @classmethod
    def build(cls, params: SystemParams, dist, n_s: int = 401, n_d: int = 1001) -> "Grid":
        smax = params.smax
        if not (0 < smax < math.inf):
            raise InvalidGrid("the state grid needs 0 < s_max < inf")
        if n_s < 2 or n_d < 1:
            raise InvalidGrid("need n_s >= 2 and n_d >= 1")
        vals, probs = _conditional_means(dist, int(n_d))
        return cls(np.linspace(0.0, smax, int(n_s)), vals, probs / probs.sum())

    @property
    def n_s(self) -> int:
        return self.s_values.size

    @property
    def n_d(self) -> int:
        return self.d_values.size

    @property
    def step(self) -> float:
        return float(self.s_values[1] - self.s_values[0])


# ---------------------------------------------------------------- kernels


@njit(cache=True, nogil=True)
def _sparse_argmin(w):
    n = w.shape[0]
    levels = 1
    while (1 << levels) <= n:
        levels += 1
    tab = np.empty((levels, n), dtype=np.int64)
    for k in range(n):
        tab[0, k] = k
    for lv in range(1, levels):
        half = 1 << (lv - 1)
        for k in range(n - (1 << lv) + 1):
            a = tab[lv - 1, k]
            b = tab[lv - 1, k + half]
            tab[lv, k] = a if w[a] <= w[b] else b
    return tab


@njit(cache=True, nogil=True)
def _range_argmin(tab, w, a, b):
    span = b - a + 1
    lv = 0
    while (1 << (lv + 1)) <= span:
        lv += 1
    i = tab[lv, a]
    j = tab[lv, b - (1 << lv) + 1]
    return i if w[i] <= w[j] else j


@njit(cache=True, nogil=True)
def _interp(v, h, x):
    n = v.shape[0]
    t = x / h
    k = int(math.floor(t))
    if k < 0:
        k = 0
    if k > n - 2:
        k = n - 2
    f = t - k
    return v[k] + f * (v[k + 1] - v[k])


@njit(cache=True, nogil=True)
def _gen_needed(s, x, nxt, ec, ed):
    if nxt >= s:
        return max(0.0, (nxt - s) / ec - x)
    return max(0.0, -x - ed * (s - nxt))


@njit(cache=True, nogil=True)
def _best_next(s, x, v, h, smax, gmax, cmax, dmax, ec, ed, rho1, tabs, ws):
    """Cheapest (objective, next_s, g) from stored power ``s`` under disturbance ``x``."""
    n = v.shape[0]
    disc = min(ed * s, dmax)
    if x < -gmax - disc:
        nxt = max(s - disc / ed, 0.0)
        return rho1 * gmax + _interp(v, h, nxt), nxt, gmax
    lo = max(0.0, s - dmax / ed)
    if x >= -gmax:
        hi = min(smax, s + ec * min(cmax, gmax + x))
    else:
        hi = s + (gmax + x) / ed
    if hi < lo:
        hi = lo
    k1 = s + x / ed if x < 0 else s
    k2 = s + ec * x if x > 0 else s
    bps = np.empty(5)
    bps[0] = lo
    bps[1] = min(max(k1, lo), hi)
    bps[2] = min(max(s, lo), hi)
    bps[3] = min(max(k2, lo), hi)
    bps[4] = hi
    best = np.inf
    best_s = lo
    for p in range(4):
        a = bps[p]
        b = bps[p + 1]
        if p > 0 and b <= a:
            continue
        # left endpoint
        fa = rho1 * _gen_needed(s, x, a, ec, ed) + _interp(v, h, a)
        if fa < best:
            best = fa
            best_s = a
        ia = int(math.ceil(a / h))
        ib = int(math.floor(b / h))
        if ia < 0:
            ia = 0
        if ib > n - 1:
            ib = n - 1
        if ia <= ib:
            slope_id = 0 if p == 0 or p == 2 else (1 if p == 1 else 2)
            k = _range_argmin(tabs[slope_id], ws[slope_id], ia, ib)
            node = k * h
            if node > a and node < b:
                fk = rho1 * _gen_needed(s, x, node, ec, ed) + v[k]
                if fk < best:
                    best = fk
                    best_s = node
        fb = rho1 * _gen_needed(s, x, b, ec, ed) + _interp(v, h, b)
        if fb < best:
            best = fb
            best_s = b
    return best, best_s, _gen_needed(s, x, best_s, ec, ed)


@njit(cache=True, nogil=True)
def _tables(v, h, rho1, ec, ed):
    n = v.shape[0]
    ws = np.empty((3, n))
    for k in range(n):
        sk = k * h
        ws[0, k] = v[k]
        ws[1, k] = v[k] + rho1 * ed * sk
        ws[2, k] = v[k] + rho1 * sk / ec
    t0 = _sparse_argmin(ws[0])
    tabs = np.empty((3, t0.shape[0], n), dtype=np.int64)
    tabs[0] = t0
    tabs[1] = _sparse_argmin(ws[1])
    tabs[2] = _sparse_argmin(ws[2])
    return tabs, ws


@njit(cache=True, nogil=True)
def _sweep(v, h, xs, ps, stage, smax, gmax, cmax, dmax, ec, ed, rho1, nxt_out, g_out, keep):
    n = v.shape[0]
    m = xs.shape[0]
    tabs, ws = _tables(v, h, rho1, ec, ed)
    tv = np.empty(n)
    for i in range(n):
        s = i * h
        acc = 0.0
        for j in range(m):
            val, nxt, g = _best_next(s, xs[j], v, h, smax, gmax, cmax, dmax, ec, ed, rho1, tabs, ws)
            acc += ps[j] * val
            if keep:
                nxt_out[i, j] = nxt
                g_out[i, j] = g
        tv[i] = stage[i] + acc
    return tv


@njit(cache=True, nogil=True)
def _query(v, h, s_arr, x_arr, smax, gmax, cmax, dmax, ec, ed, rho1, nxt_out, g_out):
    tabs, ws = _tables(v, h, rho1, ec, ed)
    for i in range(s_arr.shape[0]):
        _, nxt, g = _best_next(s_arr[i], x_arr[i], v, h, smax, gmax, cmax, dmax, ec, ed, rho1, tabs, ws)
        nxt_out[i] = nxt
        g_out[i] = g


# ---------------------------------------------------------------- solver


@dataclass
class DpPolicyTable:
    """Decision per (state, disturbance) cell; ``c`` and ``d`` follow from ``next_s``."""

    next_s: np.ndarray
    g: np.ndarray
    c: np.ndarray
    d: np.ndarray


@dataclass
class DpSolution:
    eta: float
    v: np.ndarray
    policy: DpPolicyTable
    iterations: int
    span_residual: float
    params: SystemParams = field(repr=False)
    grid: Grid = field(repr=False)
    weights: CostWeights = field(repr=False)
    monotone: bool = True


def _stage_cost(params, dist, weights, s_values):
    if weights.rho2 == 0:
        return np.zeros_like(s_values)
    edge = -params.gmax - np.minimum(params.eta_d * s_values, params.dmax)
    cdf = getattr(dist, "cdf_left", dist.cdf)
    return weights.rho2 * np.asarray(cdf(edge), dtype=float)


def _decisions(params, s_values, nxt, g):
    s = s_values[:, None]
    up = nxt >= s
    c = np.where(up, (nxt - s) / params.eta_c, 0.0)
    d = np.where(up, 0.0, params.eta_d * (s - nxt))
    return DpPolicyTable(nxt, g, c, d)


def value_iteration(params: SystemParams, dist, weights: CostWeights, grid: Grid | None = None,
                    tol: float = 1e-9, max_iter: int = 100_000, v0=None, ref_index: int = 0) -> DpSolution:
    """Relative value iteration; stops when the span of ``Tv - v`` drops below ``tol``."""
    if grid is None:
        grid = Grid.build(params, dist)
    if abs(grid.s_values[-1] - params.smax) > 1e-9 * max(1.0, params.smax):
        raise InvalidGrid("storage grid must end at s_max")
    h = grid.step
    args = (params.smax, params.gmax, params.cmax, params.dmax, params.eta_c, params.eta_d, weights.rho1)
    stage = _stage_cost(params, dist, weights, grid.s_values)
    v = np.zeros(grid.n_s) if v0 is None else np.array(v0, dtype=float)
    if v.shape != (grid.n_s,):
        raise InvalidGrid("initial value function has the wrong length")
    dummy = np.empty((1, 1))
    monotone = True
    span = np.inf
    diff = None
    for it in range(1, int(max_iter) + 1):
        tv = _sweep(v, h, grid.d_values, grid.d_probs, stage, *args, dummy, dummy, False)
        diff = tv - v
        span = float(diff.max() - diff.min())
        new_v = tv - tv[ref_index]
        if np.any(np.diff(new_v) > 1e-12 * max(1.0, float(np.abs(new_v).max()))):
            monotone = False
        v = new_v
        if span < tol:
            break
    else:
        raise NoConvergence(max_iter, span, float(0.5 * (diff.max() + diff.min())))
    eta = float(0.5 * (diff.max() + diff.min()))
    nxt = np.empty((grid.n_s, grid.n_d))
    g = np.empty((grid.n_s, grid.n_d))
    _sweep(v, h, grid.d_values, grid.d_probs, stage, *args, nxt, g, True)
    return DpSolution(eta, v, _decisions(params, grid.s_values, nxt, g), it, span,
                      params, grid, weights, monotone)


# ---------------------------------------------------------------- thresholds


@njit(cache=True, nogil=True)
def _max_deviation(sc, sd, gmax, smax, cmax, dmax, ec, ed, s_vals, x_vals, table, rows, cols):
    worst = 0.0
    for a in range(rows.shape[0]):
        i = rows[a]
        s = s_vals[i]
        for b in range(cols.shape[0]):
            j = cols[b]
            x = x_vals[j]
            if x < -gmax - min(ed * s, dmax):
                continue
            g, c, d = decide_kernel(2, sc, sd, gmax, smax, cmax, dmax, ec, ed, s, x)
            dev = abs(s + ec * c - d / ed - table[i, j])
            if dev > worst:
                worst = dev
    return worst


@njit(cache=True, nogil=True)
def _scan_pairs(cands_c, cands_d, gmax, smax, cmax, dmax, ec, ed, s_vals, x_vals, table, rows, cols):
    best = np.inf
    bi = 0
    bj = 0
    for a in range(cands_c.shape[0]):
        for b in range(cands_d.shape[0]):
            if cands_d[b] < cands_c[a]:
                continue
            dev = _max_deviation(cands_c[a], cands_d[b], gmax, smax, cmax, dmax, ec, ed,
                                 s_vals, x_vals, table, rows, cols)
            if dev < best:
                best = dev
                bi = a
                bj = b
    return best, bi, bj


def _stride(n, target):
    return np.unique(np.linspace(0, n - 1, min(n, target)).round().astype(np.int64))


def extract_thresholds(solution: DpSolution, grid: Grid | None = None, coarse: int = 41):
    """Nearest two-threshold policy to the numeric policy table.

    Returns ``(ThresholdPair, is_two_threshold, max_deviation)``: the pair
    minimizing the largest per-cell gap in next stored power (MW), and whether
    that gap is within one grid cell. Candidate thresholds are grid nodes;
    a coarse scan on a subsample of cells is refined on the full table.
    """
    grid = grid or solution.grid
    p = solution.params
    s = grid.s_values
    table = solution.policy.next_s
    base = (p.gmax, p.smax, p.cmax, p.dmax, p.eta_c, p.eta_d, s, grid.d_values, table)
    rows_c = _stride(grid.n_s, coarse)
    cols_c = _stride(grid.n_d, 4 * coarse)
    cand = s[_stride(grid.n_s, 2 * coarse)]
    _, bi, bj = _scan_pairs(cand, cand, *base, rows_c, cols_c)
    all_rows = np.arange(grid.n_s, dtype=np.int64)
    all_cols = np.arange(grid.n_d, dtype=np.int64)
    # refine around the coarse winner on the full table
    ci = int(np.searchsorted(s, cand[bi]))
    di = int(np.searchsorted(s, cand[bj]))
    spread = int(math.ceil(grid.n_s / (2 * coarse))) + 1
    near_c = s[max(0, ci - spread): ci + spread + 1]
    near_d = s[max(0, di - spread): di + spread + 1]
    dev, a, b = _scan_pairs(near_c, near_d, *base, all_rows, all_cols)
    pair = ThresholdPair(float(near_c[a]), float(near_d[b]))
    return pair, bool(dev <= grid.step * (1 + 1e-9) + 1e-9), float(dev)


# ---------------------------------------------------------------- two-slot construction


def _check_increasing_pdf(dist, scale):
    if not hasattr(dist, "pdf"):
        raise HypothesisViolated("distribution has no density to check")
    x = -np.linspace(0.0, 40.0 * scale, 4001)[::-1]
    f = np.asarray(dist.pdf(x), dtype=float)
    if np.any(np.diff(f) < -1e-12 * max(1.0, float(f.max()))):
        raise HypothesisViolated("density must be nondecreasing on (-inf, 0]")


def two_slot_terminal_cost(params: SystemParams, dist, weights: CostWeights, s):
    """Expected last-slot cost from stored power ``s`` when storage is discharged first."""
    ed, gmax = params.eta_d, params.gmax

    def one(sv):
        edge = -gmax - ed * sv
        gen, _ = integrate.quad(lambda x: min(max(-x - ed * sv, 0.0), gmax) * float(dist.pdf(x)),
                                -np.inf, -ed * sv, limit=200, epsabs=1e-13)
        return weights.rho1 * gen + weights.rho2 * float(dist.cdf(edge))

    return np.vectorize(one)(np.asarray(s, dtype=float))


def two_slot_slope(params: SystemParams, dist, weights: CostWeights, s):
    """Derivative of ``two_slot_terminal_cost`` in the stored power."""
    ed, gmax = params.eta_d, params.gmax
    s = np.asarray(s, dtype=float)
    lo = -gmax - ed * s
    return (-ed * weights.rho2 * np.asarray(dist.pdf(lo))
            - ed * weights.rho1 * (np.asarray(dist.cdf(-ed * s)) - np.asarray(dist.cdf(lo))))


def two_slot_thresholds(params: SystemParams, dist, weights: CostWeights) -> ThresholdPair:
    """Thresholds optimal for the first of two slots.

    The terminal cost is convex and decreasing in stored power; charging up
    to ``sc`` pays while its slope is below ``-rho1/eta_c`` and holding back
    discharge down to ``sd`` pays while it is below ``-eta_d * rho1``.
    """
    scale = dist.b if isinstance(dist, LaplaceModel) else float(getattr(dist, "std", lambda: 1.0)())
    _check_increasing_pdf(dist, scale)
    smax = params.smax

    def sup_below(level):
        fn = lambda x: float(two_slot_slope(params, dist, weights, x)) - level
        if fn(smax) <= 0:
            return smax
        if fn(0.0) > 0:
            return 0.0
        return float(optimize.brentq(fn, 0.0, smax, xtol=1e-12, rtol=1e-14))

    sc = sup_below(-weights.rho1 / params.eta_c)
    sd = sup_below(-params.eta_d * weights.rho1)
    return ThresholdPair(min(sc, sd), sd)


# ---------------------------------------------------------------- estimator


class AverageCostDP(BaseEstimator):
    """Estimator wrapper: ``fit(params, dist)`` solves, ``predict(X)`` gives next stored power.

    ``X`` is an ``(m, 2)`` array of (stored power, net generation) pairs; the
    greedy action against the fitted bias function is evaluated exactly at
    each pair, not only on grid cells.
    """

    def __init__(self, rho1=1.0, rho2=0.0, n_s=401, n_d=1001, tol=1e-9, max_iter=100_000):
        self.rho1 = rho1
        self.rho2 = rho2
        self.n_s = n_s
        self.n_d = n_d
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, params: SystemParams, dist):
        grid = Grid.build(params, dist, self.n_s, self.n_d)
        sol = value_iteration(params, dist, CostWeights(self.rho1, self.rho2), grid, self.tol, self.max_iter)
        self.solution_ = sol
        self.eta_ = sol.eta
        self.thresholds_, self.is_two_threshold_, self.max_deviation_ = extract_thresholds(sol)
        return self

    def predict(self, X):
        check_is_fitted(self, "solution_")
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValueError("X must have two columns: stored power and net generation")
        sol = self.solution_
        p = sol.params
        s = np.ascontiguousarray(X[:, 0])
        if np.any(s < 0) or np.any(s > p.smax):
            raise ValueError("stored power outside [0, s_max]")
        nxt = np.empty(len(s))
        g = np.empty(len(s))
        _query(sol.v, sol.grid.step, s, np.ascontiguousarray(X[:, 1]), p.smax, p.gmax, p.cmax, p.dmax,
               p.eta_c, p.eta_d, sol.weights.rho1, nxt, g)
        return nxt
