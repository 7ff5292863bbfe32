"""Net-generation distributions: the Laplace model and an empirical cdf."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LaplaceModel:
    """Laplace distribution with location ``mu`` and scale ``b`` (rate 1/b)."""

    mu: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        if not (float(self.b) > 0 and math.isfinite(self.b)):
            raise ValueError(f"scale b must be finite and > 0, got {self.b!r}")
        if not math.isfinite(self.mu):
            raise ValueError("location mu must be finite")
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "mu", float(self.mu))

    @classmethod
    def from_rate(cls, lam: float, mu: float = 0.0) -> "LaplaceModel":
        return cls(mu=mu, b=1.0 / lam)

    @property
    def lam(self) -> float:
        return 1.0 / self.b

    def pdf(self, x):
        return np.exp(-np.abs(np.asarray(x, dtype=float) - self.mu) / self.b) / (2.0 * self.b)

    def cdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.b
        # each branch evaluated only where its exponent is non-positive
        lo = 0.5 * np.exp(np.minimum(z, 0.0))
        hi = 1.0 - 0.5 * np.exp(-np.maximum(z, 0.0))
        out = np.where(z < 0, lo, hi)
        return out[()] if out.ndim == 0 else out

    def sf(self, x):
        return self.cdf(2.0 * self.mu - np.asarray(x, dtype=float))

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        lo = self.mu + self.b * np.log(2.0 * np.minimum(u, 0.5))
        hi = self.mu - self.b * np.log(2.0 * (1.0 - np.maximum(u, 0.5)))
        out = np.where(u < 0.5, lo, hi)
        return out[()] if out.ndim == 0 else out

    def std(self) -> float:
        return math.sqrt(2.0) * self.b

    def mean_negative_part(self) -> float:
        """E[max(-X, 0)]."""
        m, b = self.mu, self.b
        tail = 0.5 * b * math.exp(-abs(m) / b)
        return tail if m >= 0 else -m + tail

    def mean_positive_part(self) -> float:
        """E[max(X, 0)]."""
        m, b = self.mu, self.b
        tail = 0.5 * b * math.exp(-abs(m) / b)
        return m + tail if m >= 0 else tail

    def moments(self) -> dict:
        return {
            "mean": self.mu,
            "std": self.std(),
            "var": 2.0 * self.b**2,
            "mean_abs": self.b if self.mu == 0 else None,
            "mean_negative_part": self.mean_negative_part(),
            "mean_positive_part": self.mean_positive_part(),
        }

    def to_dict(self) -> dict:
        return {"family": "laplace", "mu": self.mu, "b": self.b}


class EmpiricalDistribution:
    """Right-continuous empirical cdf of a sample, with its generalized inverse."""

    def __init__(self, sample):
        x = np.sort(np.asarray(sample, dtype=float).ravel())
        if x.size == 0:
            raise ValueError("empty sample")
        if not np.all(np.isfinite(x)):
            raise ValueError("sample contains non-finite values")
        self.values = x
        self.n = x.size

    def cdf(self, x):
        out = np.searchsorted(self.values, np.asarray(x, dtype=float), side="right") / self.n
        return out[()] if np.ndim(out) == 0 else out

    def cdf_left(self, x):
        out = np.searchsorted(self.values, np.asarray(x, dtype=float), side="left") / self.n
        return out[()] if np.ndim(out) == 0 else out

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        k = np.clip(np.ceil(u * self.n).astype(np.int64) - 1, 0, self.n - 1)
        out = self.values[k]
        return out[()] if out.ndim == 0 else out

    def mean_negative_part(self) -> float:
        return float(np.mean(np.maximum(-self.values, 0.0)))

    def mean_positive_part(self) -> float:
        return float(np.mean(np.maximum(self.values, 0.0)))

    def std(self) -> float:
        return float(np.std(self.values))

    def to_dict(self) -> dict:
        return {"family": "empirical", "n": int(self.n)}
