"""Scalar load metrics and the balance-state machine that picks fitness weights."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Sequence

DEFAULT_SD_THRESHOLD = 0.2


class EmptyInput(ValueError):
    pass


class ZeroMakespan(ValueError):
    pass


class NegativeSigma(ValueError):
    pass


class BalanceState(str, enum.Enum):
    BALANCED = "balanced"
    ALMOST_BALANCED = "almost_balanced"
    UNBALANCED = "unbalanced"


class WeightPolicy(NamedTuple):
    """``w1`` scales the completion-time penalty, ``w2`` the utilization reward."""

    w1: float
    w2: float


TTC_ONLY = WeightPolicy(1.0, 0.0)
SPLIT = WeightPolicy(0.5, 0.5)


@dataclass(frozen=True)
class NodeLoadStats:
    node_id: int
    completion_time: float
    load: float

    @property
    def overloaded(self) -> bool:
        return self.load > 1.0


@dataclass(frozen=True)
class BalanceReport:
    sigma: float
    mean_load: float
    state: BalanceState
    threshold: float


def _nonempty(values: Sequence[float], what: str) -> List[float]:
    values = list(values)
    if not values:
        raise EmptyInput(f"{what} needs at least one value")
    return values


def makespan(completion_times: Sequence[float]) -> float:
    return max(_nonempty(completion_times, "makespan"))


def node_utilization(ct_j: float, makespan: float) -> float:
    if makespan <= 0:
        raise ZeroMakespan("utilization is undefined for a zero makespan")
    return ct_j / makespan


def average_utilization(utils: Sequence[float]) -> float:
    utils = _nonempty(utils, "average_utilization")
    return math.fsum(utils) / len(utils)


def utilizations(completion_times: Sequence[float]) -> List[float]:
    """Per-node utilization against the makespan of the same list; all zero when idle."""
    span = makespan(completion_times)
    if span <= 0:
        return [0.0] * len(completion_times)
    return [node_utilization(ct, span) for ct in completion_times]


def load_std_dev(loads: Sequence[float]) -> float:
    """Population standard deviation (divides by the node count, not count - 1)."""
    loads = _nonempty(loads, "load_std_dev")
    m = len(loads)
    mean = math.fsum(loads) / m
    return math.sqrt(math.fsum((x - mean) ** 2 for x in loads) / m)


def classify_balance(sigma: float, threshold: float = DEFAULT_SD_THRESHOLD) -> BalanceState:
    if sigma < 0:
        raise NegativeSigma(f"sigma must be >= 0, got {sigma}")
    if threshold <= 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    if sigma == 0:
        return BalanceState.BALANCED
    if sigma < threshold:
        return BalanceState.ALMOST_BALANCED
    return BalanceState.UNBALANCED


def select_weights(state: BalanceState) -> WeightPolicy:
    if state is BalanceState.UNBALANCED:
        return SPLIT
    return TTC_ONLY


def balance_report(loads: Sequence[float], threshold: float = DEFAULT_SD_THRESHOLD) -> BalanceReport:
    loads = _nonempty(loads, "balance_report")
    sigma = load_std_dev(loads)
    return BalanceReport(sigma, math.fsum(loads) / len(loads), classify_balance(sigma, threshold), threshold)


def min_max_normalize(values: Sequence[float]) -> List[float]:
    """Rescale to [0, 1]; a constant list maps to all zeros."""
    values = _nonempty(values, "min_max_normalize")
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0] * len(values)
    span = hi - lo
    return [(v - lo) / span for v in values]
