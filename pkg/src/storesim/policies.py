"""Storage control policies as decision rules (state, net generation) -> (g, c, d).

The table rules are compiled with numba so the simulator and the batch paths
share one implementation with the scalar ``decide_*`` functions. Row
boundaries are half-open: the lower bound of each row is inclusive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator

from .exceptions import InvalidRegime, InvalidThresholds
from .model import Decision, SystemParams, require_constrained, require_unconstrained


class PolicyKind(IntEnum):
    MIN_GENERATION = 0
    MIN_LOLP = 1
    TWO_THRESHOLD = 2
    MIN_GENERATION_CONSTRAINED = 3
    MIN_LOLP_CONSTRAINED = 4
    SUBOPTIMAL_LOLP = 5


@dataclass(frozen=True)
class ThresholdPair:
    s_c: float
    s_d: float

    def validate(self, s_max: float) -> "ThresholdPair":
        sc, sd = float(self.s_c), float(self.s_d)
        if not (0.0 <= sc <= sd <= s_max) or math.isnan(sc) or math.isnan(sd):
            raise InvalidThresholds(f"need 0 <= s_c <= s_d <= s_max={s_max!r}, got ({sc!r}, {sd!r})")
        return self

    def __iter__(self):
        return iter((self.s_c, self.s_d))


# ---------------------------------------------------------------- kernels


@njit(cache=True, nogil=True)
def _min_generation(gmax, smax, ec, ed, s, x):
    room = (smax - s) / ec
    if room <= x:
        return 0.0, room, 0.0
    if 0.0 <= x:
        return 0.0, x, 0.0
    if -ed * s <= x:
        return 0.0, 0.0, -x
    if -gmax - ed * s <= x:
        return -x - ed * s, 0.0, ed * s
    return gmax, 0.0, ed * s


@njit(cache=True, nogil=True)
def _min_lolp(gmax, smax, ec, ed, s, x):
    room = (smax - s) / ec
    if room <= x:
        return 0.0, room, 0.0
    if -gmax + room <= x:
        return room - x, room, 0.0
    if -gmax <= x:
        return gmax, gmax + x, 0.0
    if -gmax - ed * s <= x:
        return gmax, 0.0, -x - gmax
    return gmax, 0.0, ed * s


@njit(cache=True, nogil=True)
def _two_threshold(sc, sd, gmax, smax, ec, ed, s, x):
    room = (smax - s) / ec
    if room <= x:
        return 0.0, room, 0.0
    if s < sc:
        gap = (sc - s) / ec
        if gap <= x:
            return 0.0, x, 0.0
        if gap - gmax <= x:
            return gap - x, gap, 0.0
        if -gmax <= x:
            return gmax, gmax + x, 0.0
        if -gmax - ed * s <= x:
            return gmax, 0.0, -gmax - x
        return gmax, 0.0, ed * s
    if 0.0 <= x:
        return 0.0, x, 0.0
    if s <= sd:
        if -gmax <= x:
            return -x, 0.0, 0.0
        if -gmax - ed * s <= x:
            return gmax, 0.0, -gmax - x
        return gmax, 0.0, ed * s
    above = ed * (s - sd)
    if -above <= x:
        return 0.0, 0.0, -x
    if -above - gmax <= x:
        return -x - above, 0.0, above
    if -gmax - ed * s <= x:
        return gmax, 0.0, -gmax - x
    return gmax, 0.0, ed * s


@njit(cache=True, nogil=True)
def _suboptimal_lolp(gmax, smax, ec, ed, s, x):
    room = (smax - s) / ec
    if room <= x:
        return 0.0, room, 0.0
    if 0.0 <= x:
        return 0.0, x, 0.0
    if -gmax <= x:
        return -x, 0.0, 0.0
    if -gmax - ed * s <= x:
        return gmax, 0.0, -x - gmax
    return gmax, 0.0, ed * s


@njit(cache=True, nogil=True)
def _cap_rates(g, c, d, gmax, cmax, dmax, x):
    c = min(c, cmax)
    d = min(d, dmax)
    g = min(max(c - d - x, 0.0), gmax)
    return g, c, d


@njit(cache=True, nogil=True)
def decide_kernel(kind, sc, sd, gmax, smax, cmax, dmax, ec, ed, s, x):
    """Dispatch on an integer policy code; see ``PolicyKind``."""
    if kind == 0:
        return _min_generation(gmax, smax, ec, ed, s, x)
    if kind == 1:
        return _min_lolp(gmax, smax, ec, ed, s, x)
    if kind == 2:
        return _two_threshold(sc, sd, gmax, smax, ec, ed, s, x)
    if kind == 3:
        g, c, d = _min_generation(gmax, smax, ec, ed, s, x)
        return _cap_rates(g, c, d, gmax, cmax, dmax, x)
    if kind == 4:
        g, c, d = _min_lolp(gmax, smax, ec, ed, s, x)
        return _cap_rates(g, c, d, gmax, cmax, dmax, x)
    return _suboptimal_lolp(gmax, smax, ec, ed, s, x)


@njit(cache=True, nogil=True)
def _decide_many(kind, sc, sd, gmax, smax, cmax, dmax, ec, ed, s, x, g_out, c_out, d_out):
    for i in range(s.shape[0]):
        g, c, d = decide_kernel(kind, sc, sd, gmax, smax, cmax, dmax, ec, ed, s[i], x[i])
        g_out[i] = g
        c_out[i] = c
        d_out[i] = d


# ---------------------------------------------------------------- policy objects


class StoragePolicy(BaseEstimator):
    """Base class. Subclasses set ``kind`` and, if needed, override ``thresholds``.

    Policies take the system parameters at call time, so one instance can be
    evaluated across many configurations (and cloned with ``set_params``).
    """

    kind: PolicyKind
    label: str

    def thresholds(self, params: SystemParams) -> tuple[float, float]:
        return 0.0, 0.0

    def check(self, params: SystemParams) -> None:
        require_unconstrained(params)

    def kernel_args(self, params: SystemParams) -> tuple:
        self.check(params)
        sc, sd = self.thresholds(params)
        return (
            int(self.kind), float(sc), float(sd), params.gmax, params.smax,
            params.cmax, params.dmax, params.eta_c, params.eta_d,
        )

    def decide(self, params: SystemParams, s: float, delta: float) -> Decision:
        g, c, d = decide_kernel(*self.kernel_args(params), float(s), float(delta))
        return Decision(g, c, d)

    def decide_batch(self, params: SystemParams, s, delta):
        """Vectorized ``decide``; returns arrays ``(g, c, d)`` broadcast over inputs."""
        s, delta = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(delta, dtype=float))
        shape = s.shape
        s = np.ascontiguousarray(s).ravel()
        delta = np.ascontiguousarray(delta).ravel()
        g, c, d = (np.empty_like(s) for _ in range(3))
        _decide_many(*self.kernel_args(params), s, delta, g, c, d)
        return g.reshape(shape), c.reshape(shape), d.reshape(shape)

    def describe(self, params: SystemParams | None = None) -> dict:
        out = {"policy": self.label}
        out.update(self.get_params())
        return out


class MinGenerationPolicy(StoragePolicy):
    """Discharge before generating; never charge from generation."""

    kind = PolicyKind.MIN_GENERATION
    label = "min-gen"


class MinLolpPolicy(StoragePolicy):
    """Generate before discharging; keep storage as full as generation allows."""

    kind = PolicyKind.MIN_LOLP
    label = "min-lolp"

    def check(self, params):
        super().check(params)
        if math.isinf(params.gmax) and math.isinf(params.smax):
            raise InvalidRegime("min-lolp needs g_max or s_max bounded")


class TwoThresholdPolicy(StoragePolicy):
    """Charge up to ``sc`` with any generation; discharge below ``sd`` only when forced.

    With ``relative=True`` the thresholds are fractions of ``s_max``, which lets
    one policy value be swept over storage capacities.
    """

    kind = PolicyKind.TWO_THRESHOLD
    label = "two-threshold"

    def __init__(self, sc=0.0, sd=0.0, relative=False):
        self.sc = sc
        self.sd = sd
        self.relative = relative

    def thresholds(self, params):
        sc, sd = float(self.sc), float(self.sd)
        if self.relative:
            if not (0.0 <= sc <= sd <= 1.0):
                raise InvalidThresholds(f"relative thresholds need 0 <= sc <= sd <= 1, got ({sc}, {sd})")
            sc, sd = sc * params.smax, sd * params.smax
            sd = min(sd, params.smax)
            sc = min(sc, sd)
        ThresholdPair(sc, sd).validate(params.smax)
        return sc, sd


class MinGenerationConstrainedPolicy(StoragePolicy):
    """Min-generation decision with charge and discharge capped at the rated limits."""

    kind = PolicyKind.MIN_GENERATION_CONSTRAINED
    label = "min-gen-constrained"

    def check(self, params):
        require_constrained(params)


class MinLolpConstrainedPolicy(MinLolpPolicy):
    """Min-LOLP decision with charge and discharge capped at the rated limits."""

    kind = PolicyKind.MIN_LOLP_CONSTRAINED
    label = "min-lolp-constrained"

    def check(self, params):
        require_constrained(params)
        if math.isinf(params.gmax) and math.isinf(params.smax):
            raise InvalidRegime("min-lolp needs g_max or s_max bounded")


class SuboptimalLolpPolicy(StoragePolicy):
    """Cover moderate deficits from generation alone; storage only under duress."""

    kind = PolicyKind.SUBOPTIMAL_LOLP
    label = "suboptimal-lolp"


POLICIES = {
    cls.label: cls
    for cls in (
        MinGenerationPolicy, MinLolpPolicy, TwoThresholdPolicy,
        MinGenerationConstrainedPolicy, MinLolpConstrainedPolicy, SuboptimalLolpPolicy,
    )
}


def make_policy(name: str, **kw) -> StoragePolicy:
    try:
        cls = POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None
    return cls(**kw)


# ---------------------------------------------------------------- functional API


def decide_min_generation(params: SystemParams, s: float, delta: float) -> Decision:
    return MinGenerationPolicy().decide(params, s, delta)


def decide_min_lolp(params: SystemParams, s: float, delta: float) -> Decision:
    return MinLolpPolicy().decide(params, s, delta)


def decide_two_threshold(params: SystemParams, thresholds, s: float, delta: float) -> Decision:
    sc, sd = thresholds
    return TwoThresholdPolicy(sc, sd).decide(params, s, delta)


def decide_min_generation_constrained(params: SystemParams, s: float, delta: float) -> Decision:
    return MinGenerationConstrainedPolicy().decide(params, s, delta)


def decide_min_lolp_constrained(params: SystemParams, s: float, delta: float) -> Decision:
    return MinLolpConstrainedPolicy().decide(params, s, delta)


def decide_suboptimal_lolp(params: SystemParams, s: float, delta: float) -> Decision:
    return SuboptimalLolpPolicy().decide(params, s, delta)
