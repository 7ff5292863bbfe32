"""Trace simulation, Monte Carlo cost estimates and capacity sweeps.

Rare loss-of-load events are estimated with the smoothed estimator
``mean F(-g_max - min(eta_d S_i, d_max))``, which replaces the event
indicator by its conditional probability given the stored power. The raw
event frequency is reported alongside it.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .exceptions import InfeasibleDecision, TargetInfeasible
from .model import SystemParams, step
from .policies import StoragePolicy, TwoThresholdPolicy, decide_kernel
from .rng import make_rng, open_uniform


@dataclass
class Trace:
    deltas: np.ndarray
    origin: dict = field(default_factory=dict)

    def __post_init__(self):
        self.deltas = np.ascontiguousarray(np.asarray(self.deltas, dtype=float).ravel())
        if self.deltas.size == 0:
            raise ValueError("trace must have at least one slot")
        if not np.all(np.isfinite(self.deltas)):
            raise ValueError("trace contains non-finite values")

    def __len__(self):
        return self.deltas.size


@dataclass(frozen=True)
class CostReport:
    j_g: float
    j_l_event: float
    j_l_smoothed: float | None
    n: int
    curtailed_avg: float
    final_s: float

    def to_dict(self) -> dict:
        return {
            "j_g": self.j_g, "j_l_event": self.j_l_event, "j_l_smoothed": self.j_l_smoothed,
            "n": self.n, "curtailed_avg": self.curtailed_avg, "final_s": self.final_s,
        }


@dataclass
class SlotRecord:
    """Per-slot arrays; ``s[i]`` is the stored power at the start of slot ``i``."""

    s: np.ndarray
    g: np.ndarray
    c: np.ndarray
    d: np.ndarray
    lost: np.ndarray
    curtailed: np.ndarray
    final_s: float


def sample_iid(model, n: int, seed: int) -> Trace:
    """IID draws by inverse-cdf sampling from a LaplaceModel or EmpiricalDistribution."""
    n = int(n)
    if n < 1:
        raise ValueError("n must be >= 1")
    u = open_uniform(make_rng(seed), n)
    deltas = np.asarray(model.ppf(u), dtype=float)
    return Trace(deltas, {"kind": "synthetic", "seed": int(seed), "model": model.to_dict()})


# ---------------------------------------------------------------- engines


@njit(cache=True, nogil=True)
def _simulate(kind, sc, sd, gmax, smax, cmax, dmax, ec, ed, deltas, s1,
              s_out, g_out, c_out, d_out, lost_out, curt_out):
    tol = 1e-9
    s = s1
    for i in range(deltas.shape[0]):
        x = deltas[i]
        s_out[i] = s
        disc = min(ed * s, dmax)
        if x < -gmax - disc:
            g = gmax
            c = 0.0
            d = disc
            lost_out[i] = 1
            curt = 0.0
        else:
            g, c, d = decide_kernel(kind, sc, sd, gmax, smax, cmax, dmax, ec, ed, s, x)
            lost_out[i] = 0
            if (g < -tol or g > gmax + tol or c < -tol or c > cmax + tol
                    or d < -tol or d > dmax + tol or g - c + d + x < -tol):
                return 1, i, s
            curt = max(g + d - c + x, 0.0)
        nxt = s + ec * c - d / ed
        if nxt < -tol or nxt > smax + tol:
            return 1, i, s
        if abs(nxt) <= tol:
            nxt = 0.0
        elif abs(nxt - smax) <= tol:
            nxt = smax
        g_out[i] = g
        c_out[i] = c
        d_out[i] = d
        curt_out[i] = curt
        s = nxt
    return 0, -1, s


def _check_s1(params, s1):
    s1 = float(params.smax if s1 == "full" else 0.0 if s1 == "empty" else s1)
    if not (0.0 <= s1 <= params.smax):
        raise ValueError(f"s1={s1!r} outside [0, {params.smax!r}]")
    return s1


def simulate_slots(params: SystemParams, policy: StoragePolicy, trace, s1=0.0,
                   engine: str = "numba") -> SlotRecord:
    """Run ``policy`` over the trace and keep every slot."""
    deltas = trace.deltas if isinstance(trace, Trace) else Trace(trace).deltas
    s1 = _check_s1(params, s1)
    n = deltas.size
    if engine == "python":
        return _simulate_python(params, policy, deltas, s1)
    if engine != "numba":
        raise ValueError(f"unknown engine {engine!r}")
    arrs = [np.empty(n) for _ in range(5)]
    lost = np.empty(n, dtype=np.uint8)
    s_out, g_out, c_out, d_out, curt = arrs
    status, idx, final = _simulate(*policy.kernel_args(params), deltas, s1,
                                   s_out, g_out, c_out, d_out, lost, curt)
    if status != 0:
        raise InfeasibleDecision(
            f"policy {policy!r} produced an infeasible decision at slot {idx} "
            f"(s={s_out[idx]!r}, delta={deltas[idx]!r})"
        )
    return SlotRecord(s_out, g_out, c_out, d_out, lost.astype(bool), curt, float(final))


def _simulate_python(params, policy, deltas, s):
    n = deltas.size
    rec = {k: np.empty(n) for k in ("s", "g", "c", "d", "curtailed")}
    lost = np.zeros(n, dtype=bool)
    for i, x in enumerate(deltas):
        rec["s"][i] = s
        out = step(params, s, x, policy.decide(params, s, x))
        rec["g"][i], rec["c"][i], rec["d"][i] = out.decision
        rec["curtailed"][i] = out.curtailed
        lost[i] = out.lost_load
        s = out.next_s
    return SlotRecord(rec["s"], rec["g"], rec["c"], rec["d"], lost, rec["curtailed"], float(s))


def smoothed_lolp(params: SystemParams, dist, s: np.ndarray) -> np.ndarray:
    """Per-slot loss probability P(X < -g_max - min(eta_d s, d_max)) given the stored power."""
    edge = -params.gmax - np.minimum(params.eta_d * np.asarray(s, dtype=float), params.dmax)
    cdf = getattr(dist, "cdf_left", dist.cdf)
    return np.asarray(cdf(edge), dtype=float)


def summarize(params: SystemParams, rec: SlotRecord, dist=None, burn_in: int = 0) -> CostReport:
    sl = slice(int(burn_in), None)
    s = rec.s[sl]
    if s.size == 0:
        raise ValueError("burn_in leaves no slots")
    smooth = None if dist is None else float(np.mean(smoothed_lolp(params, dist, s)))
    return CostReport(
        j_g=float(np.mean(rec.g[sl])),
        j_l_event=float(np.mean(rec.lost[sl])),
        j_l_smoothed=smooth,
        n=int(s.size),
        curtailed_avg=float(np.mean(rec.curtailed[sl])),
        final_s=rec.final_s,
    )


def run_trace(params: SystemParams, policy: StoragePolicy, trace, s1=0.0, dist_for_smoothing=None,
              burn_in: int = 0, engine: str = "numba") -> CostReport:
    """Average generation, LOLP and curtailment of ``policy`` along ``trace``."""
    rec = simulate_slots(params, policy, trace, s1, engine=engine)
    return summarize(params, rec, dist_for_smoothing, burn_in)


def default_burn_in(n: int) -> int:
    return max(int(0.01 * n), 10_000)


# ---------------------------------------------------------------- stationary laws


@dataclass
class StationaryHistogram:
    storage_edges: np.ndarray
    storage_density: np.ndarray
    storage_atom_empty: float
    storage_atom_full: float
    generation_edges: np.ndarray
    generation_density: np.ndarray
    generation_atom_zero: float
    storage_sample: np.ndarray
    generation_sample: np.ndarray


def stationary_histogram(params: SystemParams, policy: StoragePolicy, model, n: int,
                         burn_in: int | None = None, seed: int = 0, bins: int = 100,
                         s1=0.0) -> StationaryHistogram:
    """Empirical stationary laws of stored power and generation after a burn-in."""
    burn_in = default_burn_in(n) if burn_in is None else int(burn_in)
    trace = sample_iid(model, burn_in + int(n), seed)
    rec = simulate_slots(params, policy, trace, s1)
    s = rec.s[burn_in:]
    g = rec.g[burn_in:]
    smax = params.smax
    empty = s == 0.0
    full = s == smax
    inner_s = s[~empty & ~full]
    hi = smax if math.isfinite(smax) else (float(s.max()) if s.size else 1.0)
    s_edges = np.linspace(0.0, hi if hi > 0 else 1.0, bins + 1)
    s_counts, _ = np.histogram(inner_s, s_edges)
    g_pos = g[g > 0]
    g_hi = params.gmax if math.isfinite(params.gmax) else (float(g.max()) if g.size else 1.0)
    g_edges = np.linspace(0.0, g_hi if g_hi > 0 else 1.0, bins + 1)
    g_counts, _ = np.histogram(g_pos, g_edges)
    m = s.size
    return StationaryHistogram(
        storage_edges=s_edges,
        storage_density=s_counts / (m * np.diff(s_edges)),
        storage_atom_empty=float(empty.mean()),
        storage_atom_full=float(full.mean()) if smax > 0 else 0.0,
        generation_edges=g_edges,
        generation_density=g_counts / (m * np.diff(g_edges)),
        generation_atom_zero=float(np.mean(g == 0.0)),
        storage_sample=s,
        generation_sample=g,
    )


# ---------------------------------------------------------------- sweeps


@dataclass
class SweepResult:
    axis_name: str
    axis: np.ndarray
    reports: list
    metadata: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if r is None or getattr(r, name) is None else getattr(r, name)
                         for r in self.reports], dtype=float)

    def rows(self):
        for i, (x, r) in enumerate(zip(self.axis, self.reports)):
            row = {self.axis_name: float(x)}
            for k, vals in self.extra.items():
                row[k] = vals[i]
            if r is not None:
                row.update(r.to_dict())
            yield row


def _threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("STORESIM_THREADS", "1") or 1)
    return max(1, int(threads))


def _pmap(fn, items, threads):
    """Ordered map; the numba kernels release the GIL so threads run in parallel."""
    threads = _threads(threads)
    if threads == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _s1_for(params, s1):
    if s1 in ("empty", "full"):
        return s1
    return min(float(s1), params.smax)


def sweep_capacity(params_base: SystemParams, policy, model, smax_values, n: int, seed: int,
                   s1="empty", burn_in: int = 0, threads: int | None = None) -> SweepResult:
    """One cost report per storage capacity, all on the same sampled trace.

    ``policy`` is a policy instance (use relative thresholds to rescale with
    ``s_max``) or a callable ``params -> policy``.
    """
    axis = np.asarray(smax_values, dtype=float)
    if axis.ndim != 1 or axis.size == 0 or np.any(np.diff(axis) <= 0):
        raise ValueError("smax_values must be strictly increasing")
    trace = sample_iid(model, int(n) + int(burn_in), seed)

    def point(smax):
        p = params_base.replace(s_max=float(smax))
        pol = policy(p) if callable(policy) and not isinstance(policy, StoragePolicy) else policy
        return run_trace(p, pol, trace, _s1_for(p, s1), model, burn_in)

    reports = _pmap(point, list(axis), threads)
    label = policy.describe() if isinstance(policy, StoragePolicy) else {"policy": repr(policy)}
    return SweepResult("s_max", axis, reports,
                       {"policy": label, "params": params_base.to_dict(), "seed": int(seed), "n": int(n)})


def threshold_pairs(s_max: float, fractions) -> list[tuple[float, float]]:
    f = np.unique(np.clip(np.asarray(fractions, dtype=float), 0.0, 1.0))
    return [(float(a * s_max), float(b * s_max)) for i, a in enumerate(f) for b in f[i:]]


def pareto_front(j_g, j_l) -> np.ndarray:
    """Indices of nondominated points, ordered by increasing ``j_g``."""
    j_g = np.asarray(j_g, dtype=float)
    j_l = np.asarray(j_l, dtype=float)
    order = np.lexsort((j_l, j_g))
    keep = []
    best = np.inf
    for i in order:
        if j_l[i] < best:
            keep.append(i)
            best = j_l[i]
    return np.array(keep, dtype=int)


def pareto_two_threshold(params: SystemParams, model, threshold_grid, n: int, seed: int,
                         s1="empty", burn_in: int = 0, threads: int | None = None) -> SweepResult:
    """Generation versus LOLP over a grid of (sc, sd) pairs.

    ``threshold_grid`` is a list of pairs in MW or an int ``m`` meaning the
    pairs from ``m`` evenly spaced fractions of ``s_max``. The nondominated
    subset is stored in ``extra['frontier']``.
    """
    if isinstance(threshold_grid, (int, np.integer)):
        pairs = threshold_pairs(params.smax, np.linspace(0.0, 1.0, int(threshold_grid)))
    else:
        pairs = [(float(a), float(b)) for a, b in threshold_grid]
    trace = sample_iid(model, int(n) + int(burn_in), seed)

    def point(pair):
        return run_trace(params, TwoThresholdPolicy(*pair), trace, _s1_for(params, s1), model, burn_in)

    reports = _pmap(point, pairs, threads)
    jg = np.array([r.j_g for r in reports])
    jl = np.array([r.j_l_smoothed for r in reports])
    front = pareto_front(jg, jl)
    order = np.arange(len(pairs))
    return SweepResult(
        "index", order.astype(float), reports,
        {"policy": "two-threshold", "params": params.to_dict(), "seed": int(seed), "n": int(n)},
        {"s_c": [p[0] for p in pairs], "s_d": [p[1] for p in pairs],
         "frontier": [bool(i in set(front.tolist())) for i in order]},
    )


@dataclass(frozen=True)
class PlanSearch:
    """Search settings for ``plan_curve``."""

    alpha: float = 0.6
    n: int = 200_000
    seed: int = 1
    smax_hi: float = 200.0
    smax_step: float = 1.0
    fractions: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    burn_in: int = 10_000
    threads: int | None = None


def _best_feasible(gmax, smax, model, cfg, trace, jg_target, jl_target):
    """Best (j_g, sc, sd, report) meeting the LOLP target at one design point, or None."""
    p = SystemParams.symmetric(cfg.alpha, gmax, smax)
    pairs = threshold_pairs(smax, cfg.fractions) if smax > 0 else [(0.0, 0.0)]
    best = None
    for sc, sd in pairs:
        r = run_trace(p, TwoThresholdPolicy(sc, sd), trace, "full", model, cfg.burn_in)
        if r.j_l_smoothed <= jl_target and r.j_g <= jg_target:
            if best is None or r.j_g < best[0]:
                best = (r.j_g, sc, sd, r)
    return best


def plan_curve(model, jg_target: float, jl_target: float, gmax_values, search_cfg: PlanSearch | None = None
               ) -> SweepResult:
    """Minimal storage capacity meeting both targets, for each generator capacity.

    For each ``g_max`` the capacity axis is bisected on a ``smax_step`` lattice;
    a capacity is feasible when some two-threshold pair on the fraction grid
    meets both targets. Infeasible points carry ``nan`` and a reason. The
    curve is made nonincreasing by carrying feasible capacities forward to
    larger generator capacities.
    """
    cfg = search_cfg or PlanSearch()
    axis = np.asarray(gmax_values, dtype=float)
    if axis.ndim != 1 or axis.size == 0 or np.any(np.diff(axis) <= 0):
        raise ValueError("gmax_values must be strictly increasing")
    trace = sample_iid(model, cfg.n + cfg.burn_in, cfg.seed)
    hi_steps = int(round(cfg.smax_hi / cfg.smax_step))

    def solve(gmax):
        check = lambda k: _best_feasible(gmax, k * cfg.smax_step, model, cfg, trace, jg_target, jl_target)
        top = check(hi_steps)
        if top is None:
            return None, TargetInfeasible(f"g_max={gmax}: targets not met at s_max={cfg.smax_hi}")
        lo, hi, best = -1, hi_steps, top
        while hi - lo > 1:
            mid = (lo + hi) // 2
            res = check(mid)
            if res is None:
                lo = mid
            else:
                hi, best = mid, res
        return (hi * cfg.smax_step, best), None

    results = _pmap(solve, list(axis), cfg.threads)
    smax_col, sc_col, sd_col, reports, notes = [], [], [], [], []
    for found, err in results:
        if found is None:
            smax_col.append(math.nan)
            sc_col.append(math.nan)
            sd_col.append(math.nan)
            reports.append(None)
            notes.append(str(err))
        else:
            smax, (_, sc, sd, rep) = found
            smax_col.append(smax)
            sc_col.append(sc)
            sd_col.append(sd)
            reports.append(rep)
            notes.append("")
    smax_arr = np.array(smax_col)
    running = np.inf
    for i, v in enumerate(smax_arr):
        if np.isfinite(v):
            running = min(running, v)
            smax_arr[i] = running
    return SweepResult(
        "g_max", axis, reports,
        {"jg_target": jg_target, "jl_target": jl_target, "search": cfg.__dict__.copy(), "model": model.to_dict()},
        {"s_max": smax_arr.tolist(), "s_max_raw": smax_col, "s_c": sc_col, "s_d": sd_col, "note": notes},
    )
