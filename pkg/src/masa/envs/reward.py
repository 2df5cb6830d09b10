"""Weighted-sum reward combiner."""
from __future__ import annotations

from dataclasses import dataclass, field


class MissingWeightError(KeyError):
    pass


@dataclass
class RewardTerms:
    values: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)


def reward_combine(terms: RewardTerms):
    """sum_k w_k * r_k over the terms in insertion order; values may be arrays."""
    total = 0.0
    for name, value in terms.values.items():
        if name not in terms.weights:
            raise MissingWeightError(f"no weight for reward term {name!r}")
        total = total + terms.weights[name] * value
    return total
