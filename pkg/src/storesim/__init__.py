"""Storage dispatch for a single-bus power system with lossy storage."""

__version__ = "0.1.0"

from .distributions import EmpiricalDistribution, LaplaceModel
from .model import UNBOUNDED, Decision, SlotOutcome, SystemParams, feasible, loss_of_load, step
from .policies import (
    MinGenerationConstrainedPolicy,
    MinGenerationPolicy,
    MinLolpConstrainedPolicy,
    MinLolpPolicy,
    PolicyKind,
    SuboptimalLolpPolicy,
    ThresholdPair,
    TwoThresholdPolicy,
    make_policy,
)

__all__ = [
    "__version__",
    "UNBOUNDED",
    "Decision",
    "SlotOutcome",
    "SystemParams",
    "feasible",
    "loss_of_load",
    "step",
    "LaplaceModel",
    "EmpiricalDistribution",
    "PolicyKind",
    "ThresholdPair",
    "MinGenerationPolicy",
    "MinLolpPolicy",
    "TwoThresholdPolicy",
    "MinGenerationConstrainedPolicy",
    "MinLolpConstrainedPolicy",
    "SuboptimalLolpPolicy",
    "make_policy",
]
