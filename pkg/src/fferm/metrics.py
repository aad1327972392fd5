"""Fairness violations and accuracy on hard (argmax) predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .divergences import DivergenceKind, DivergenceSpec, divergence_direct
from .errors import EmptyConditionedSubset, EmptyGroup

__all__ = [
    "accuracy",
    "dp_violation",
    "eo_violation",
    "eodds_violation",
    "naive_baseline_curve",
    "MetricsReport",
    "metrics_report",
]


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds, dtype=int)
    labels = np.asarray(labels, dtype=int)
    return float((preds == labels).mean())


def _check_groups(groups: np.ndarray, k: int) -> None:
    for g in range(k):
        if not np.any(groups == g):
            raise EmptyGroup(g)


def dp_violation(preds, groups, k: int | None = None) -> float:
    """Largest pairwise gap in positive-prediction rates across groups.

    Binary tasks use class 1 as "positive"; with more classes the violation
    is the max over classes of the one-vs-rest gap (identical for m = 2).
    """
    preds = np.asarray(preds, dtype=int)
    groups = np.asarray(groups, dtype=int)
    if k is None:
        k = int(groups.max()) + 1 if groups.size else 0
    _check_groups(groups, k)
    if k <= 1:
        return 0.0
    classes = np.unique(preds)
    worst = 0.0
    for c in classes:
        rates = [float((preds[groups == g] == c).mean()) for g in range(k)]
        worst = max(worst, max(rates) - min(rates))
    return worst


def group_positive_rates(preds, groups, k: int | None = None) -> np.ndarray:
    preds = np.asarray(preds, dtype=int)
    groups = np.asarray(groups, dtype=int)
    if k is None:
        k = int(groups.max()) + 1
    _check_groups(groups, k)
    return np.array([float((preds[groups == g] == 1).mean()) for g in range(k)])


def eo_violation(preds, groups, labels, k: int | None = None) -> float:
    """Demographic parity violation restricted to samples with true label 1."""
    preds = np.asarray(preds, dtype=int)
    groups = np.asarray(groups, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if k is None:
        k = int(groups.max()) + 1
    mask = labels == 1
    for g in range(k):
        if not np.any(mask & (groups == g)):
            raise EmptyConditionedSubset(f"group {g} has no samples with label 1")
    return dp_violation(preds[mask], groups[mask], k=k)


def eodds_violation(preds, groups, labels, k: int | None = None) -> float:
    """Max over label classes of the per-class conditional parity violation."""
    preds = np.asarray(preds, dtype=int)
    groups = np.asarray(groups, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if k is None:
        k = int(groups.max()) + 1
    worst = 0.0
    for c in np.unique(labels):
        mask = labels == c
        for g in range(k):
            if not np.any(mask & (groups == g)):
                raise EmptyConditionedSubset(f"group {g} has no samples with label {c}")
        worst = max(worst, dp_violation(preds[mask], groups[mask], k=k))
    return worst


def naive_baseline_curve(preds, groups, labels, p_grid):
    """Expected (accuracy, dpv) of forcing the prediction to 0 with probability p.

    Closed form, not sampled: accuracy scales between the model's accuracy
    and the base rate of zero labels; positive rates, and hence the parity
    gap, scale by (1 - p).
    """
    preds = np.asarray(preds, dtype=int)
    labels = np.asarray(labels, dtype=int)
    acc = accuracy(preds, labels)
    zero_rate = float((labels == 0).mean())
    dpv = dp_violation(preds, groups)
    out = []
    for p in p_grid:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p_grid entries must lie in [0, 1], got {p}")
        out.append(((1.0 - p) * acc + p * zero_rate, (1.0 - p) * dpv))
    return out


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    dpv: float
    eov: float
    eoddsv: float
    divergence_value: float
    group_positive_rates: np.ndarray


def metrics_report(
    preds, groups, labels, spec: DivergenceSpec | None = None, k: int | None = None
) -> MetricsReport:
    """Bundle of fairness metrics; eov/eoddsv become NaN if a conditioned cell is empty."""
    preds = np.asarray(preds, dtype=int)
    groups = np.asarray(groups, dtype=int)
    labels = np.asarray(labels, dtype=int)
    if k is None:
        k = int(groups.max()) + 1
    if spec is None:
        spec = DivergenceSpec(DivergenceKind.CHI_SQUARED)
    m = int(max(preds.max(), labels.max())) + 1
    joint = np.zeros((m, k))
    np.add.at(joint, (preds, groups), 1.0)
    joint /= len(preds)
    prod = np.outer(joint.sum(axis=1), joint.sum(axis=0))
    div = divergence_direct(spec, joint.ravel(), prod.ravel(), check_simplex=False)
    try:
        eov = eo_violation(preds, groups, labels, k=k)
    except EmptyConditionedSubset:
        eov = math.nan
    try:
        eoddsv = eodds_violation(preds, groups, labels, k=k)
    except EmptyConditionedSubset:
        eoddsv = math.nan
    return MetricsReport(
        accuracy=accuracy(preds, labels),
        dpv=dp_violation(preds, groups, k=k),
        eov=eov,
        eoddsv=eoddsv,
        divergence_value=float(div),
        group_positive_rates=group_positive_rates(preds, groups, k=k),
    )
