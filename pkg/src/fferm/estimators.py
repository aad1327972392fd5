"""Empirical probability estimators feeding the fairness regularizer.

The regularizer couples the batch joint distribution of (predicted class,
group) with the product of the prediction marginal and the fixed group
priors.  Everything here is a per-sample average, which is what makes
minibatch gradients unbiased.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .divergences import (
    DivergenceSpec,
    _conjugate_grad_unchecked,
    _conjugate_unchecked,
    dual_domain,
)
from .errors import EmptyBatch, EmptyGroup, OutOfDualDomain
from .models import ModelParams, forward_batch

__all__ = ["BatchProbs", "group_priors", "batch_probs", "regularizer_terms"]


@dataclass(frozen=True)
class BatchProbs:
    """Minibatch estimates: marginal[j] and joint[j, k]; marginal = joint row sums
    only in the infinite-batch limit, but marginal[j] == sum_k joint[j, k] holds
    exactly because the indicator columns partition the batch."""

    marginal: np.ndarray
    joint: np.ndarray


def group_priors(data: Dataset) -> np.ndarray:
    """pi_k = fraction of samples in group k, over the full dataset."""
    counts = np.bincount(data.groups, minlength=data.k).astype(float)
    for g in range(data.k):
        if counts[g] == 0:
            raise EmptyGroup(g)
    return counts / data.n


def _group_onehot(groups: np.ndarray, k: int) -> np.ndarray:
    onehot = np.zeros((groups.shape[0], k))
    onehot[np.arange(groups.shape[0]), groups] = 1.0
    return onehot


def batch_probs(params: ModelParams, batch: Dataset) -> BatchProbs:
    """Soft estimators: marginal_j = mean_i F_j(x_i); joint_jk adds the group indicator."""
    if batch.n == 0:
        raise EmptyBatch("batch_probs needs a nonempty batch")
    probs, _ = forward_batch(params, batch.features)
    marginal = probs.mean(axis=0)
    joint = probs.T @ _group_onehot(batch.groups, batch.k) / batch.n
    return BatchProbs(marginal=marginal, joint=joint)


def _reg_value_grads(
    spec: DivergenceSpec,
    params: ModelParams,
    A: np.ndarray,
    X: np.ndarray,
    groups: np.ndarray,
    priors: np.ndarray,
    probs: np.ndarray | None = None,
    hidden=None,
    want_theta_grad: bool = True,
):
    """Core of the separable regularizer for one (already conditioned) batch.

    Returns (value, grad_theta, grad_A, dz) where dz is d(value)/d(logits)
    so callers can fuse the backprop with the loss backprop.  A must already
    lie in the dual domain.
    """
    b = X.shape[0]
    if probs is None:
        probs, hidden = forward_batch(params, X)
    marginal = probs.mean(axis=0)
    joint = probs.T @ _group_onehot(groups, A.shape[1]) / b
    fstar = _conjugate_unchecked(spec, A)
    fstar_prime = _conjugate_grad_unchecked(spec, A)
    pin_marg = priors[None, :] * marginal[:, None]
    value = float((A * joint).sum() - (fstar * pin_marg).sum())
    grad_A = joint - fstar_prime * pin_marg
    # per-sample class coefficients: A[j, s_i] - sum_k f*(A_jk) pi_k
    w = (fstar * priors[None, :]).sum(axis=1)
    coef = A[:, groups].T - w[None, :]
    inner = (coef * probs).sum(axis=1, keepdims=True)
    dz = probs * (coef - inner)
    dz /= b
    grad_theta = None
    if want_theta_grad:
        from .models import _backprop

        grad_theta = _backprop(params, X, dz, hidden)
    return value, grad_theta, grad_A, dz


def regularizer_terms(
    spec: DivergenceSpec,
    params: ModelParams,
    A: np.ndarray,
    batch: Dataset,
    priors: np.ndarray,
):
    """Value, theta-gradient and dual-gradient of the separable regularizer.

    value      = sum_jk A_jk joint_jk - f*(A_jk) pi_k marginal_j
    grad_theta = the same sum with joint/marginal replaced by their gradients
    grad_A_jk  = joint_jk - (f*)'(A_jk) pi_k marginal_j
    """
    if batch.n == 0:
        raise EmptyBatch("regularizer_terms needs a nonempty batch")
    A = np.asarray(A, dtype=float)
    if A.shape != (params.m, batch.k):
        raise OutOfDualDomain(f"dual matrix must be {(params.m, batch.k)}, got {A.shape}")
    if not np.all(dual_domain(spec).contains(A)):
        raise OutOfDualDomain(f"{spec.token()}: dual matrix has entries outside the domain")
    value, grad_theta, grad_A, _ = _reg_value_grads(
        spec, params, A, batch.features, batch.groups, np.asarray(priors, dtype=float)
    )
    return value, grad_theta, grad_A
