"""Preference-based cost learning and cost-adaptive recourse generation."""

from .core import ConfidenceSet, CostMatrix, Cut, PreferenceSet, confidence_set, cost
from .sdp import (
    CenterResult,
    InfeasibleSet,
    WorstCaseOracle,
    chebyshev_center,
    max_over_confidence,
    tolerant_center,
)

__version__ = "0.1.0"

__all__ = [
    "CenterResult",
    "ConfidenceSet",
    "CostMatrix",
    "Cut",
    "InfeasibleSet",
    "PreferenceSet",
    "WorstCaseOracle",
    "chebyshev_center",
    "confidence_set",
    "cost",
    "max_over_confidence",
    "tolerant_center",
    "__version__",
]
