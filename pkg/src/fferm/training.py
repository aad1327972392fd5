"""Two-timescale stochastic gradient descent-ascent on the fair objective.

The objective is  mean cross-entropy + lambda * R(theta, A)  where R is the
separable regularizer from estimators.py.  Each step simultaneously descends
theta and ascends the dual matrix A (scaled by lambda, so lambda = 0 leaves A
untouched), then projects A back into the conjugate domain.  Batches come
from a seeded per-epoch permutation, so a fixed config reproduces the run
bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .divergences import (
    DOMAIN_MARGIN,
    DivergenceSpec,
    _conjugate_pair,
    clamp_dual,
    dual_domain,
    dual_init,
    variational_dual,
)
from .errors import ConfigError, EmptyConditionedSubset, EmptyGroup, NonFiniteUpdate
from .metrics import accuracy, dp_violation, eo_violation, eodds_violation
from .models import (
    LINEAR,
    ONE_HIDDEN,
    ModelParams,
    _backprop,
    _log_softmax,
    _logits,
    init_params,
)

__all__ = [
    "TrainerConfig",
    "TrainReport",
    "REPORT_COLUMNS",
    "train",
    "sgda_step",
    "project_dual",
]

NOTIONS = ("dp", "eo", "eodds")

REPORT_COLUMNS = (
    "epoch",
    "loss",
    "reg",
    "acc_train",
    "acc_test",
    "dpv_train",
    "dpv_test",
    "eov_train",
    "eov_test",
    "eoddsv_train",
    "eoddsv_test",
    "grad_norm",
)


@dataclass
class TrainerConfig:
    divergence: DivergenceSpec
    lam: float = 0.0
    eta_theta: float = 1e-5
    eta_alpha: float = 1e-6
    epochs_total: int = 2000
    warmup_epochs: int = 300
    batch_size: int = 64
    seed: int = 0
    fairness_notion: str = "dp"
    model: str = LINEAR
    hidden_width: int = 16

    def check(self, n: int | None = None) -> "TrainerConfig":
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        if self.eta_theta <= 0 or self.eta_alpha <= 0:
            raise ConfigError("step sizes must be positive")
        if self.epochs_total <= 0 or self.warmup_epochs < 0:
            raise ConfigError("epochs_total must be positive, warmup nonnegative")
        if self.batch_size <= 0:
            raise ConfigError("batch_size must be positive")
        if n is not None and self.batch_size > n:
            raise ConfigError(f"batch_size {self.batch_size} exceeds dataset size {n}")
        if self.fairness_notion not in NOTIONS:
            raise ConfigError(f"fairness_notion must be one of {NOTIONS}")
        if self.model not in (LINEAR, ONE_HIDDEN):
            raise ConfigError(f"model must be {LINEAR} or {ONE_HIDDEN}")
        return self


@dataclass
class TrainReport:
    records: np.ndarray  # (epochs_total, len(REPORT_COLUMNS))
    final_params: ModelParams
    final_dual: np.ndarray  # (conditions, m, k)
    columns: tuple = REPORT_COLUMNS
    extra: dict = field(default_factory=dict)  # e.g. penalty/delta columns

    def column(self, name: str) -> np.ndarray:
        return self.records[:, self.columns.index(name)]

    def final(self, name: str) -> float:
        return float(self.column(name)[-1])

    def to_csv(self, path, manifest_hash: str | None = None) -> None:
        cols = list(self.columns) + list(self.extra)
        mat = [self.records] + [np.asarray(self.extra[c]).reshape(-1, 1) for c in self.extra]
        rows = np.hstack(mat)
        with open(path, "w", encoding="utf-8") as fh:
            header = ",".join(cols)
            if manifest_hash is not None:
                header += ",manifest_hash"
            fh.write(header + "\n")
            for row in rows:
                cells = [str(int(row[0]))] + [repr(float(v)) for v in row[1:]]
                if manifest_hash is not None:
                    cells.append(manifest_hash)
                fh.write(",".join(cells) + "\n")


def project_dual(spec: DivergenceSpec, A) -> np.ndarray:
    """Entrywise clamp into the conjugate domain (open bounds kept off by a margin)."""
    return clamp_dual(spec, A)


# -- fairness-notion conditioning ------------------------------------------------


@dataclass
class _Condition:
    mask: np.ndarray  # over the full dataset
    priors: np.ndarray  # group priors inside the conditioned subset
    label: int | None  # label value the regularizer conditions on, None for dp


def _build_conditions(data: Dataset, notion: str) -> list[_Condition]:
    if notion == "dp":
        labels = [None]
    elif notion == "eo":
        labels = [1]
    else:
        labels = list(range(data.m))
    conditions = []
    for value in labels:
        mask = np.ones(data.n, dtype=bool) if value is None else data.labels == value
        if not mask.any():
            raise EmptyConditionedSubset(f"no samples with label {value}")
        counts = np.bincount(data.groups[mask], minlength=data.k).astype(float)
        if np.any(counts == 0):
            g = int(np.argmin(counts))
            if value is None:
                raise EmptyGroup(g)
            raise EmptyConditionedSubset(f"group {g} has no samples with label {value}")
        conditions.append(_Condition(mask, counts / counts.sum(), value))
    return conditions


def _init_dual(spec: DivergenceSpec, n_cond: int, m: int, k: int) -> np.ndarray:
    return project_dual(spec, np.full((n_cond, m, k), dual_init(spec)))


# -- the SGDA step ----------------------------------------------------------------


def _reg_piece(spec, A_c, probs, groups, priors, k):
    """Value, d(value)/d(logits) and grad_A of one conditioned regularizer term."""
    nb = probs.shape[0]
    onehot = np.zeros((nb, k))
    onehot[np.arange(nb), groups] = 1.0
    joint = probs.T @ onehot
    joint /= nb
    marginal = probs.mean(axis=0)
    fstar, fsp = _conjugate_pair(spec, A_c)
    pin = priors[None, :] * marginal[:, None]
    value = float((A_c * joint).sum() - (fstar * pin).sum())
    grad_A = joint - fsp * pin
    w = (fstar * priors[None, :]).sum(axis=1)
    coef = A_c[:, groups].T - w[None, :]
    dz = probs * (coef - (coef * probs).sum(axis=1, keepdims=True))
    dz /= nb
    return value, dz, grad_A


def _step_inplace(
    params, A, Xb, yb, sb, ob, cond_labels, priors, spec, lam, eta_theta, eta_alpha, lo, hi, k
):
    """One simultaneous update of params.flat and A, both in place.

    ob is the precomputed group one-hot block for the batch; (lo, hi) are the
    margin-shrunk dual bounds.  The dp path fuses the loss and regularizer
    backprop into a single d(logits) pass.
    """
    b = Xb.shape[0]
    z, h = _logits(params, Xb)
    z -= z.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    probs = z
    if lam > 0.0 and cond_labels[0] is None:
        A0 = A[0]
        pri = priors[0]
        fstar, fsp = _conjugate_pair(spec, A0)
        coef = ob @ A0.T
        coef -= fstar @ pri
        inner = np.einsum("ij,ij->i", coef, probs)
        scale = eta_alpha * lam / b
        A0 += scale * (probs.T @ ob)
        A0 -= (scale * fsp) * (probs.sum(axis=0)[:, None] * pri)
        coef -= inner[:, None]
        coef *= lam
        coef += 1.0
        dz = probs * coef
    elif lam > 0.0:
        dz = probs.copy()
        for c, label in enumerate(cond_labels):
            sel = yb == label
            if not sel.any():
                continue
            _, dz_reg, grad_A = _reg_piece(spec, A[c], probs[sel], sb[sel], priors[c], k)
            dz[sel] += (lam * b) * dz_reg  # undo the final /b: reg terms average per sub-batch
            A[c] += eta_alpha * lam * grad_A
    else:
        dz = probs
    dz[np.arange(b), yb] -= 1.0
    dz /= b
    np.clip(A, lo, hi, out=A)
    params.flat -= eta_theta * _backprop(params, Xb, dz, h)


def _dual_bounds(spec: DivergenceSpec):
    dom = dual_domain(spec)
    lo = dom.lower + DOMAIN_MARGIN if dom.open_lower else dom.lower
    hi = dom.upper - DOMAIN_MARGIN if dom.open_upper else dom.upper
    return lo, hi


def sgda_step(params: ModelParams, A, batch: Dataset, priors, cfg: TrainerConfig):
    """One descent(theta)/ascent(A) step at (theta, A); returns new (params, A).

    Gradients of both blocks are evaluated at the incoming iterate and applied
    simultaneously; A is projected back into the dual domain afterwards.
    """
    if batch.n == 0:
        raise ConfigError("sgda_step needs a nonempty batch")
    params = params.copy()
    A = np.array(A, dtype=float)
    squeeze = A.ndim == 2
    if squeeze:
        A = A[None]
    ob = np.zeros((batch.n, batch.k))
    ob[np.arange(batch.n), batch.groups] = 1.0
    lo, hi = _dual_bounds(cfg.divergence)
    _step_inplace(
        params,
        A,
        batch.features,
        batch.labels,
        batch.groups,
        ob,
        [None] * A.shape[0],
        np.atleast_2d(np.asarray(priors, dtype=float)),
        cfg.divergence,
        cfg.lam,
        cfg.eta_theta,
        cfg.eta_alpha,
        lo,
        hi,
        batch.k,
    )
    if not np.isfinite(params.flat).all() or not np.isfinite(A).all():
        raise NonFiniteUpdate("parameters left the finite range; reduce the step sizes")
    return params, (A[0] if squeeze else A)


# -- per-epoch bookkeeping --------------------------------------------------------


def _nan_safe(fn, *args):
    try:
        return fn(*args)
    except (EmptyConditionedSubset, EmptyGroup):
        return math.nan


def _reg_value_at(spec, A, probs, groups, conditions, k) -> float:
    total = 0.0
    for c, cond in enumerate(conditions):
        p = probs[cond.mask] if cond.label is not None else probs
        g = groups[cond.mask] if cond.label is not None else groups
        v, _, _ = _reg_piece(spec, A[c], p, g, cond.priors, k)
        total += v
    return total


def _stationarity_norm(params, probs, h, X, y, s, conditions, spec, lam, k) -> float:
    """Norm of the full-data objective gradient with A at its closed-form optimum."""
    n = X.shape[0]
    dz = probs.copy()
    dz[np.arange(n), y] -= 1.0
    dz /= n
    if lam > 0.0:
        for cond in conditions:
            mask = cond.mask if cond.label is not None else slice(None)
            p = probs[mask]
            g = s[mask]
            nb = p.shape[0]
            onehot = np.zeros((nb, k))
            onehot[np.arange(nb), g] = 1.0
            joint = p.T @ onehot / nb
            marginal = p.mean(axis=0)
            prod = np.outer(marginal, cond.priors)
            a_star = clamp_dual(
                spec, variational_dual(spec, joint.ravel(), prod.ravel(), check_simplex=False)
            ).reshape(joint.shape)
            _, dz_reg, _ = _reg_piece(spec, a_star, p, g, cond.priors, k)
            if cond.label is None:
                dz += lam * dz_reg
            else:
                dz[cond.mask] += lam * dz_reg
    return float(np.linalg.norm(_backprop(params, X, dz, h)))


def _epoch_row(epoch, params, A, data, eval_data, conditions, spec, lam_full, k):
    # the stationarity proxy always reflects the full objective (lambda as
    # configured, not the warmup schedule), so its trend is comparable across
    # the whole run
    z, h = _logits(params, data.features)
    logp = _log_softmax(z)
    probs = np.exp(logp)
    ce = float(-logp[np.arange(data.n), data.labels].mean())
    reg = _reg_value_at(spec, A, probs, data.groups, conditions, k)
    preds = np.argmax(probs, axis=1)
    gnorm = _stationarity_norm(
        params, probs, h, data.features, data.labels, data.groups, conditions, spec, lam_full, k
    )
    row = [
        float(epoch),
        ce,
        reg,
        accuracy(preds, data.labels),
        math.nan,
        dp_violation(preds, data.groups, k=k),
        math.nan,
        _nan_safe(eo_violation, preds, data.groups, data.labels, k),
        math.nan,
        _nan_safe(eodds_violation, preds, data.groups, data.labels, k),
        math.nan,
        gnorm,
    ]
    if eval_data is not None:
        zt, _ = _logits(params, eval_data.features)
        pt = np.argmax(zt, axis=1)
        row[4] = accuracy(pt, eval_data.labels)
        row[6] = _nan_safe(dp_violation, pt, eval_data.groups, k)
        row[8] = _nan_safe(eo_violation, pt, eval_data.groups, eval_data.labels, k)
        row[10] = _nan_safe(eodds_violation, pt, eval_data.groups, eval_data.labels, k)
    return row


# -- the training loop --------------------------------------------------------------


def train(data: Dataset, cfg: TrainerConfig, eval_data: Dataset | None = None) -> TrainReport:
    """Run warmup (lambda forced to 0) then the full objective; deterministic in cfg.seed."""
    cfg.check(data.n)
    data.validate()
    conditions = _build_conditions(data, cfg.fairness_notion)
    spec = cfg.divergence
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg.model, data.d, data.m, width=cfg.hidden_width, rng=rng)
    A = _init_dual(spec, len(conditions), data.m, data.k)
    priors = np.stack([c.priors for c in conditions])
    cond_labels = [c.label for c in conditions]

    X, y, s = data.features, data.labels, data.groups
    onehot_s = np.zeros((data.n, data.k))
    onehot_s[np.arange(data.n), s] = 1.0
    lo, hi = _dual_bounds(spec)
    records = np.empty((cfg.epochs_total, len(REPORT_COLUMNS)))
    for epoch in range(cfg.epochs_total):
        lam_now = 0.0 if epoch < cfg.warmup_epochs else cfg.lam
        perm = rng.permutation(data.n)
        for start in range(0, data.n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            _step_inplace(
                params,
                A,
                X[idx],
                y[idx],
                s[idx],
                onehot_s[idx],
                cond_labels,
                priors,
                spec,
                lam_now,
                cfg.eta_theta,
                cfg.eta_alpha,
                lo,
                hi,
                data.k,
            )
        if not np.isfinite(params.flat).all() or not np.isfinite(A).all():
            raise NonFiniteUpdate(
                f"parameters left the finite range in epoch {epoch}; reduce the step sizes"
            )
        records[epoch] = _epoch_row(
            epoch, params, A, data, eval_data, conditions, spec, cfg.lam, data.k
        )
    return TrainReport(records=records, final_params=params, final_dual=A)
