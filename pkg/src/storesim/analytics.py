"""Closed-form results for zero-mean Laplace net generation.

Under the min-generation policy the stored power is a reflected random walk
whose stationary law has a closed form; generation, loss-of-load probability
and their sensitivities to storage capacity all follow from the single
quantity ``E[exp(-lam * eta_d * S)]``. The formulas here are written in terms
of ``q(x) = (1 - exp(-k x)) / (1 - alpha)`` so that the lossless limit
``alpha = 1`` is handled without a 0/0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .distributions import EmpiricalDistribution, LaplaceModel
from .exceptions import ConditionViolated, TargetInfeasible, UnsupportedModel
from .model import SystemParams, require_unconstrained

__all__ = [
    "LaplaceModel",
    "RateBounds",
    "jg_closed_form",
    "jg_derivative_smax",
    "smax_for_jg",
    "smax_for_reduction",
    "stationary_storage_cdf",
    "storage_atoms",
    "stationary_generation_cdf",
    "lolp_under_min_generation",
    "jg_asymptotic",
    "lolp_rate_bounds",
    "suboptimal_storage_cdf",
    "lolp_under_suboptimal",
    "check_lolp_asymp_conditions",
    "acoe_pair",
    "acoe_residual",
]

QUAD_EPSABS = 1e-12


def _laplace(lap) -> LaplaceModel:
    if not isinstance(lap, LaplaceModel):
        raise UnsupportedModel("closed forms need a LaplaceModel")
    if lap.mu != 0.0:
        raise UnsupportedModel(f"closed forms need mu = 0, got {lap.mu!r}")
    return lap


class _Walk:
    """Shared constants of the min-generation storage walk."""

    def __init__(self, params: SystemParams, lap: LaplaceModel):
        require_unconstrained(params)
        lap = _laplace(lap)
        self.lam = lap.lam
        self.alpha = params.alpha()
        self.eta_c = params.eta_c
        self.eta_d = params.eta_d
        self.smax = params.smax
        self.gmax = params.gmax
        # decay rate of the reflected walk: (1/eta_c - eta_d) * lam / 2
        self.k = (1.0 - self.alpha) * self.lam / (2.0 * self.eta_c)
        self.eps = math.exp(-self.lam * self.gmax)
        self.D = float(1.0 + self.alpha * self.q(self.smax))

    def q(self, x):
        x = np.asarray(x, dtype=float)
        if self.alpha < 1.0:
            out = -np.expm1(-self.k * x) / (1.0 - self.alpha)
        else:
            out = self.lam * x / (2.0 * self.eta_c)
        return out[()] if out.ndim == 0 else out

    def decay(self, x):
        return np.exp(-self.k * np.asarray(x, dtype=float))

    @property
    def mgf(self) -> float:
        """E[exp(-lam * eta_d * S)] under the stationary law."""
        return 1.0 / self.D


def jg_closed_form(params: SystemParams, lap: LaplaceModel) -> float:
    """Long-run average generation under the min-generation policy."""
    w = _Walk(params, lap)
    return (1.0 - w.eps) / (2.0 * w.lam) * w.mgf


def jg_derivative_smax(params: SystemParams, lap: LaplaceModel) -> float:
    """Magnitude of d(average generation)/d(s_max)."""
    w = _Walk(params, lap)
    if math.isinf(w.smax):
        return 0.0
    return (1.0 - w.eps) * w.eta_d * float(w.decay(w.smax)) / (4.0 * w.D**2)


def smax_for_jg(params: SystemParams, lap: LaplaceModel, target: float) -> float:
    """Smallest storage capacity with average generation at most ``target``."""
    w = _Walk(params.replace(s_max=0.0), lap)
    jg0 = (1.0 - w.eps) / (2.0 * w.lam)
    if target >= jg0:
        return 0.0
    if target <= 0:
        raise TargetInfeasible(f"generation target {target!r} needs unbounded storage")
    D = jg0 / target
    qv = (D - 1.0) / w.alpha
    if w.alpha == 1.0:
        return qv * 2.0 * w.eta_c / w.lam
    x = (1.0 - w.alpha) * qv
    if x >= 1.0:
        raise TargetInfeasible(
            f"generation target {target!r} is below the infinite-storage limit {jg0 * (1 - w.alpha)!r}"
        )
    return -math.log1p(-x) / w.k


def smax_for_reduction(params: SystemParams, lap: LaplaceModel, fraction: float) -> float:
    """Capacity achieving ``fraction`` of the possible reduction in average generation."""
    if not (0.0 <= fraction < 1.0):
        raise ValueError("fraction must lie in [0, 1)")
    j0 = jg_closed_form(params.replace(s_max=0.0), lap)
    jinf = jg_closed_form(params.replace(s_max=math.inf), lap)
    return smax_for_jg(params, lap, j0 - fraction * (j0 - jinf))


def stationary_storage_cdf(params: SystemParams, lap: LaplaceModel, s):
    """Stationary cdf of stored power under min-generation, atoms at 0 and s_max included."""
    w = _Walk(params, lap)
    s = np.asarray(s, dtype=float)
    inner = (0.5 + 0.5 * (1.0 + w.alpha) * w.q(np.clip(s, 0.0, None))) / w.D
    out = np.where(s < 0, 0.0, np.where(s >= w.smax, 1.0, inner))
    return out[()] if out.ndim == 0 else out


def storage_atoms(params: SystemParams, lap: LaplaceModel) -> tuple[float, float]:
    """Probability masses at empty and at full storage."""
    w = _Walk(params, lap)
    if w.smax == 0:
        return 1.0, 0.0
    at_zero = 0.5 / w.D
    if math.isinf(w.smax):
        return at_zero, 0.0
    below_full = (0.5 + 0.5 * (1.0 + w.alpha) * float(w.q(w.smax))) / w.D
    return at_zero, float(1.0 - below_full)


def stationary_generation_cdf(params: SystemParams, lap: LaplaceModel, g):
    """Stationary cdf of generation under min-generation."""
    w = _Walk(params, lap)
    g = np.asarray(g, dtype=float)
    inner = 1.0 - 0.5 * w.mgf * np.exp(-w.lam * np.clip(g, 0.0, None))
    out = np.where(g < 0, 0.0, np.where(g >= w.gmax, 1.0, inner))
    return out[()] if out.ndim == 0 else out


def lolp_under_min_generation(params: SystemParams, lap: LaplaceModel) -> float:
    w = _Walk(params, lap)
    return 0.5 * w.eps * w.mgf


def _partial_means(dist) -> tuple[float, float]:
    if hasattr(dist, "mean_negative_part") and hasattr(dist, "mean_positive_part"):
        return dist.mean_negative_part(), dist.mean_positive_part()
    neg, _ = integrate.quad(lambda x: float(dist.cdf(x)), -np.inf, 0.0, epsabs=QUAD_EPSABS, limit=200)
    pos, _ = integrate.quad(lambda x: 1.0 - float(dist.cdf(x)), 0.0, np.inf, epsabs=QUAD_EPSABS, limit=200)
    return neg, pos


def jg_asymptotic(dist, alpha: float) -> float:
    """Average generation with unlimited generator and storage: (E[X^-] - alpha E[X^+])^+."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must lie in [0, 1]")
    neg, pos = _partial_means(dist)
    return max(neg - alpha * pos, 0.0)


@dataclass(frozen=True)
class RateBounds:
    gamma_min: float
    gamma_max: float

    @property
    def lam0(self) -> float:
        return -self.gamma_max


def _lam0(params: SystemParams, lam: float) -> float:
    eps = math.exp(-lam * params.gmax)
    alpha = params.alpha()
    if alpha <= eps:
        raise ConditionViolated(f"need alpha > exp(-lam*g_max): alpha={alpha!r}, exp={eps!r}")
    return lam * (alpha - eps) / (params.eta_c * (1.0 + eps))


def lolp_rate_bounds(params: SystemParams, lap: LaplaceModel) -> RateBounds:
    """Bounds on the exponential decay rate of the minimum LOLP in s_max."""
    lap = _laplace(lap)
    return RateBounds(gamma_min=-params.eta_d * lap.lam, gamma_max=-_lam0(params, lap.lam))


def suboptimal_storage_cdf(params: SystemParams, lap: LaplaceModel, s):
    """Stationary cdf of stored power under the suboptimal LOLP policy."""
    lap = _laplace(lap)
    require_unconstrained(params)
    lam0 = _lam0(params, lap.lam)
    eps = math.exp(-lap.lam * params.gmax)
    alpha = params.alpha()
    smax = params.smax
    s = np.asarray(s, dtype=float)
    kk = (1.0 + alpha) / (1.0 + eps)
    # scaled by exp(-lam0 * s_max) to stay finite for large s_max
    t = np.exp(lam0 * (np.clip(s, 0.0, smax) - smax))
    inner = eps * (kk * t - math.exp(-lam0 * smax)) / (alpha - eps * math.exp(-lam0 * smax))
    out = np.where(s < 0, 0.0, np.where(s >= smax, 1.0, inner))
    return out[()] if out.ndim == 0 else out


def lolp_under_suboptimal(params: SystemParams, lap: LaplaceModel) -> float:
    """Exact stationary LOLP of the suboptimal policy (an upper bound on the minimum)."""
    lap = _laplace(lap)
    require_unconstrained(params)
    lam = lap.lam
    lam0 = _lam0(params, lam)
    eps = math.exp(-lam * params.gmax)
    alpha = params.alpha()
    smax = params.smax
    mu = lam * params.eta_d
    t = math.exp(-lam0 * smax)
    kk = (1.0 + alpha) / (1.0 + eps)
    scale = eps / (alpha - eps * t)  # C * exp(lam0 * s_max)
    atom0 = scale * t * (kk - 1.0)
    body = scale * kk * lam0 * (math.exp(-mu * smax) - t) / (lam0 - mu)
    atom_full = 1.0 - scale * (kk - t)
    return 0.5 * eps * (atom0 + body + atom_full * math.exp(-mu * smax))


def _tail_bounded(dist, scale: float) -> bool:
    x = scale * np.logspace(0.0, 8.0, 129)
    y = x * np.asarray(dist.cdf(-x), dtype=float)
    tail = y[-33:]
    if np.all(tail <= 1e-300):
        return True
    if np.any(tail <= 0):
        # mass vanishes beyond a finite point
        return bool(tail[-1] <= 1e-300)
    slope = np.polyfit(np.log(x[-33:]), np.log(tail), 1)[0]
    return bool(slope <= 1e-2)


def _positive_drift(dist, alpha: float, gmax: float) -> float:
    """E[alpha (g_max + X)^+ - (g_max + X)^-]."""
    if isinstance(dist, LaplaceModel):
        shifted = LaplaceModel(mu=dist.mu + gmax, b=dist.b)
        return alpha * shifted.mean_positive_part() - shifted.mean_negative_part()
    if isinstance(dist, EmpiricalDistribution):
        z = dist.values + gmax
        return float(np.mean(alpha * np.maximum(z, 0.0) - np.maximum(-z, 0.0)))
    pos, _ = integrate.quad(lambda x: 1.0 - float(dist.cdf(x)), -gmax, np.inf, epsabs=QUAD_EPSABS, limit=200)
    neg, _ = integrate.quad(lambda x: float(dist.cdf(x)), -np.inf, -gmax, epsabs=QUAD_EPSABS, limit=200)
    return alpha * pos - neg


def check_lolp_asymp_conditions(dist, params: SystemParams) -> bool:
    """Sufficient conditions for the minimum LOLP to decay exponentially in s_max.

    Checks that ``x * F(-x)`` stays bounded (its log-log slope over the last
    two decades of a geometric grid is not positive) and that
    ``E[alpha (g_max + X)^+ - (g_max + X)^-] > 0``.
    """
    if math.isinf(params.gmax):
        return True
    if isinstance(dist, LaplaceModel):
        scale = dist.b
    elif hasattr(dist, "ppf"):
        scale = float(dist.ppf(0.75) - dist.ppf(0.25)) or 1.0
    else:
        scale = 1.0
    return _tail_bounded(dist, scale) and _positive_drift(dist, params.alpha(), params.gmax) > 0


def acoe_pair(params: SystemParams, lap: LaplaceModel):
    """Average cost and bias function solving the optimality equation for min-generation."""
    w = _Walk(params, lap)
    if w.alpha >= 1.0 or math.isinf(w.smax):
        raise UnsupportedModel("bias function needs alpha < 1 and finite s_max")
    eta = jg_closed_form(params, lap)
    den = (1.0 - w.alpha) * w.D
    eg = 1.0 - w.eps
    slope = w.eta_d * eg / den
    amp = (1.0 / w.lam) * ((1.0 + w.alpha) / (1.0 - w.alpha)) * w.alpha * eg / den

    def v(s):
        s = np.asarray(s, dtype=float)
        return -slope * s + amp * np.exp(-w.k * (w.smax - s))

    return eta, v


def acoe_residual(params: SystemParams, lap: LaplaceModel, s_grid) -> float:
    """Max over ``s_grid`` of |eta + v(s) - E[G + v(S')]| under min-generation."""
    w = _Walk(params, lap)
    eta, v = acoe_pair(params, lap)
    f = lap.pdf
    F = lap.cdf
    ec, ed, smax, gmax = w.eta_c, w.eta_d, w.smax, w.gmax
    v0 = float(v(0.0))
    vfull = float(v(smax))

    def quad(fun, a, b):
        if b <= a:
            return 0.0
        return integrate.quad(fun, a, b, epsabs=QUAD_EPSABS, epsrel=1e-13, limit=200)[0]

    worst = 0.0
    for s in np.asarray(s_grid, dtype=float):
        room = (smax - s) / ec
        lo4 = -gmax - ed * s
        total = vfull * (1.0 - float(F(room)))
        total += quad(lambda x: float(v(s + ec * x)) * float(f(x)), 0.0, room)
        total += quad(lambda x: float(v(s + x / ed)) * float(f(x)), -ed * s, 0.0)
        if math.isinf(gmax):
            total += quad(lambda x: (-x - ed * s + v0) * float(f(x)), -np.inf, -ed * s)
        else:
            total += quad(lambda x: (-x - ed * s + v0) * float(f(x)), lo4, -ed * s)
            total += (gmax + v0) * float(F(lo4))
        worst = max(worst, abs(eta + float(v(s)) - total))
    return worst

