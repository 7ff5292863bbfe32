"""Single-bus system: parameters, storage dynamics, feasibility and per-slot accounting.

All quantities are power in MW. Stored energy is expressed as the power it can
deliver over one slot, so a full store holds ``s_max`` MW.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .exceptions import InfeasibleDecision, InvalidRegime

FEAS_TOL = 1e-9


class _Unbounded:
    """Marker for a capacity with no upper limit."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNBOUNDED"

    def __float__(self):
        return math.inf

    def __reduce__(self):
        return (_Unbounded, ())


UNBOUNDED = _Unbounded()


def is_unbounded(x) -> bool:
    return x is UNBOUNDED


def as_float(x) -> float:
    """Numeric value of a capacity; the unbounded marker maps to ``inf``."""
    return math.inf if x is UNBOUNDED else float(x)


def _capacity(x, name):
    if x is UNBOUNDED:
        return x
    x = float(x)
    if math.isnan(x) or x < 0:
        raise ValueError(f"{name} must be >= 0, got {x!r}")
    return UNBOUNDED if math.isinf(x) else x


@dataclass(frozen=True)
class SystemParams:
    """Generator and storage ratings.

    ``c_max`` and ``d_max`` default to the unconstrained-rate values
    ``s_max / eta_c`` and ``eta_d * s_max`` (a full charge or discharge fits in
    one slot). ``g_max`` and ``s_max`` accept ``UNBOUNDED`` or ``inf``.
    """

    g_max: object
    s_max: object
    eta_c: float = 1.0
    eta_d: float = 1.0
    c_max: object = None
    d_max: object = None
    slot_hours: float = 1.0
    constrained: bool = field(default=False, compare=False)

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "g_max", _capacity(self.g_max, "g_max"))
        set_(self, "s_max", _capacity(self.s_max, "s_max"))
        for name in ("eta_c", "eta_d"):
            v = float(getattr(self, name))
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must lie in (0, 1], got {v!r}")
            set_(self, name, v)
        smax = as_float(self.s_max)
        if self.c_max is None:
            set_(self, "c_max", _capacity(smax / self.eta_c, "c_max"))
        else:
            set_(self, "c_max", _capacity(self.c_max, "c_max"))
        if self.d_max is None:
            set_(self, "d_max", _capacity(self.eta_d * smax, "d_max"))
        else:
            set_(self, "d_max", _capacity(self.d_max, "d_max"))
        if not (float(self.slot_hours) > 0):
            raise ValueError("slot_hours must be > 0")
        set_(self, "slot_hours", float(self.slot_hours))
        if self.constrained and not self.is_constrained_rates():
            raise InvalidRegime(
                "constrained regime needs c_max <= s_max/eta_c and d_max <= eta_d*s_max"
            )

    @classmethod
    def symmetric(cls, alpha, g_max, s_max, **kw) -> "SystemParams":
        """Equal charge and discharge efficiencies with round trip ``alpha``."""
        eta = math.sqrt(alpha)
        return cls(g_max=g_max, s_max=s_max, eta_c=eta, eta_d=eta, **kw)

    def alpha(self) -> float:
        return self.eta_c * self.eta_d

    @property
    def gmax(self) -> float:
        return as_float(self.g_max)

    @property
    def smax(self) -> float:
        return as_float(self.s_max)

    @property
    def cmax(self) -> float:
        return as_float(self.c_max)

    @property
    def dmax(self) -> float:
        return as_float(self.d_max)

    def is_unconstrained_rates(self) -> bool:
        smax = self.smax
        return _close(self.eta_c * self.cmax, smax) and _close(self.dmax / self.eta_d, smax)

    def is_constrained_rates(self) -> bool:
        smax = self.smax
        return (
            self.cmax <= smax / self.eta_c * (1 + 1e-12) + 1e-12
            and self.dmax <= self.eta_d * smax * (1 + 1e-12) + 1e-12
        )

    def replace(self, **changes) -> "SystemParams":
        """Copy with fields changed. Rate caps follow ``s_max`` unless given."""
        kw = dict(
            g_max=self.g_max, s_max=self.s_max, eta_c=self.eta_c, eta_d=self.eta_d,
            slot_hours=self.slot_hours,
        )
        if not self.is_unconstrained_rates():
            kw.update(c_max=self.c_max, d_max=self.d_max, constrained=self.constrained)
        kw.update(changes)
        return SystemParams(**kw)

    def to_dict(self) -> dict:
        def enc(x):
            return "inf" if x is UNBOUNDED else x

        return {
            "g_max": enc(self.g_max), "s_max": enc(self.s_max),
            "c_max": enc(self.c_max), "d_max": enc(self.d_max),
            "eta_c": self.eta_c, "eta_d": self.eta_d, "slot_hours": self.slot_hours,
        }


def _close(a, b):
    if math.isinf(a) or math.isinf(b):
        return a == b
    return math.isclose(a, b, rel_tol=1e-12, abs_tol=1e-12)


def require_unconstrained(params: SystemParams) -> None:
    if not params.is_unconstrained_rates():
        raise InvalidRegime(
            "policy needs eta_c*c_max = d_max/eta_d = s_max; "
            f"got c_max={params.c_max!r}, d_max={params.d_max!r}, s_max={params.s_max!r}"
        )


def require_constrained(params: SystemParams) -> None:
    if not params.is_constrained_rates():
        raise InvalidRegime("need c_max <= s_max/eta_c and d_max <= eta_d*s_max")


@dataclass(frozen=True)
class Decision:
    g: float
    c: float
    d: float

    def __iter__(self):
        return iter((self.g, self.c, self.d))


@dataclass(frozen=True)
class SlotOutcome:
    next_s: float
    lost_load: bool
    curtailed: float
    g_used: float
    decision: Decision


def _check_state(params, s):
    if not (-FEAS_TOL <= s <= params.smax + FEAS_TOL):
        raise InfeasibleDecision(f"state {s!r} outside [0, {params.smax!r}]")


def max_discharge(params: SystemParams, s: float) -> float:
    return min(params.eta_d * s, params.dmax)


def loss_of_load(params: SystemParams, s: float, delta: float) -> bool:
    """Whether the deficit exceeds generator capacity plus deliverable storage."""
    return delta < -params.gmax - max_discharge(params, s)


def forced_decision(params: SystemParams, s: float) -> Decision:
    return Decision(params.gmax, 0.0, max_discharge(params, s))


def _next_state(params, s, c, d):
    return s + params.eta_c * c - d / params.eta_d


def snap(x: float, s_max: float) -> float:
    """Pull a state lying within tolerance of a bound exactly onto it."""
    if abs(x) <= FEAS_TOL:
        return 0.0
    if abs(x - s_max) <= FEAS_TOL:
        return s_max
    return x


def feasible(params: SystemParams, s: float, delta: float, dec: Decision) -> bool:
    g, c, d = dec
    tol = FEAS_TOL
    if not all(math.isfinite(x) for x in (g, c, d)):
        return False
    if not (-tol <= s <= params.smax + tol):
        return False
    if g < -tol or g > params.gmax + tol:
        return False
    if c < -tol or c > params.cmax + tol:
        return False
    if d < -tol or d > params.dmax + tol:
        return False
    supply = max(delta, -params.gmax - max_discharge(params, s))
    if g - c + d + supply < -tol:
        return False
    nxt = _next_state(params, s, c, d)
    return -tol <= nxt <= params.smax + tol


def step(params: SystemParams, s: float, delta: float, dec: Decision) -> SlotOutcome:
    """Apply one slot. Under loss of load the supplied decision is overridden."""
    s = float(s)
    delta = float(delta)
    _check_state(params, s)
    if loss_of_load(params, s, delta):
        forced = forced_decision(params, s)
        nxt = snap(_next_state(params, s, 0.0, forced.d), params.smax)
        return SlotOutcome(max(nxt, 0.0), True, 0.0, forced.g, forced)
    dec = Decision(*(float(x) for x in dec))
    if not feasible(params, s, delta, dec):
        raise InfeasibleDecision(f"decision {dec} infeasible at s={s!r}, delta={delta!r}")
    nxt = snap(_next_state(params, s, dec.c, dec.d), params.smax)
    curtailed = max(dec.g + dec.d - dec.c + delta, 0.0)
    return SlotOutcome(nxt, False, curtailed, dec.g, dec)
