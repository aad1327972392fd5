"""Training that stays fair under distribution shift.

Two modes:

* gradnorm (small shifts): the worst-case divergence over an l_p ball of
  radius delta around the empirical joint/product distributions is linearized,
  giving a dual-norm penalty  lambda * delta * (||grad_P D||_q + ||grad_Q D||_q)
  on top of the divergence itself.  The gradient of the penalty w.r.t. theta
  goes through the argmax dual field via the implicit function theorem:

      d(alpha*_jk)/d(theta) = (qhat * d phat - phat * d qhat) / (qhat^2 (f*)''(alpha*))

  A squared variant (epsilon * squared l2 norms) is exposed as well.  Training
  is semi-stochastic: the distribution fields (phat, qhat, alpha*) are
  refreshed by one forward pass over all data, while backpropagation runs on
  the minibatch only, keeping transient memory at O(batch * params + m*n).

* linf (large shifts): for KL and chi-squared the worst case over a sup-norm
  ball has the closed form  D_f(min(phat + delta, 1) || max(qhat - delta, 0))
  entrywise with the simplex constraint relaxed; training does plain SGD on
  it, with zero subgradient wherever a clamp is active.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .divergences import (
    PROB_FLOOR,
    DivergenceKind,
    DivergenceSpec,
    _conjugate_pair,
    clamp_dual,
    conjugate_hess,
    divergence_direct,
    f_prime,
)
from .errors import (
    AbsoluteContinuityViolation,
    ConfigError,
    NonDifferentiable,
    NonFiniteUpdate,
    UnsupportedDivergenceForLinf,
)
from .metrics import accuracy  # noqa: F401  (re-exported convenience)
from .models import ModelParams, _backprop, _logits, init_params, weighted_prob_grad
from .training import (
    REPORT_COLUMNS,
    TrainerConfig,
    TrainReport,
    _build_conditions,
    _epoch_row,
)

__all__ = [
    "RobustConfig",
    "ShiftPenalty",
    "dro_grad_fields",
    "shift_penalty",
    "robust_train_smallshift",
    "robust_objective_linf",
    "linf_worst_case",
    "robust_train_linf",
]

GRADNORM = "gradnorm"
LINF = "linf"

LINF_KINDS = (DivergenceKind.KL, DivergenceKind.CHI_SQUARED)


@dataclass
class RobustConfig(TrainerConfig):
    mode: str = GRADNORM
    delta: float = 0.0
    p_norm: float = 2.0  # ball norm; dual exponent q is 2 (p=2) or 1 (p=inf)
    squared_penalty: bool = False
    epsilon_penalty: float = 0.0
    refresh_every_steps: int | None = None  # None: once per epoch

    def check_robust(self, n: int | None = None) -> "RobustConfig":
        self.check(n)
        if self.mode not in (GRADNORM, LINF):
            raise ConfigError(f"mode must be {GRADNORM} or {LINF}")
        if self.delta < 0:
            raise ConfigError("delta must be nonnegative")
        if self.p_norm not in (2.0, math.inf):
            raise ConfigError("p_norm must be 2 or inf")
        if self.fairness_notion != "dp":
            raise ConfigError("robust modes support the demographic-parity notion only")
        if self.mode == GRADNORM and self.divergence.kind is DivergenceKind.TOTAL_VARIATION:
            raise NonDifferentiable("gradnorm mode needs a differentiable divergence")
        if self.mode == LINF and self.divergence.kind not in LINF_KINDS:
            raise UnsupportedDivergenceForLinf(
                "the closed-form sup-norm worst case holds for kl and chi2 only"
            )
        return self


@dataclass(frozen=True)
class ShiftPenalty:
    value: float
    grad_theta: np.ndarray


# -- distribution fields ---------------------------------------------------------


def _field_probs(params: ModelParams, X: np.ndarray, groups: np.ndarray, priors, k: int):
    """Full-pass joint phat (m x k) and product qhat = marginal x priors."""
    z, h = _logits(params, X)
    z -= z.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    onehot = np.zeros((X.shape[0], k))
    onehot[np.arange(X.shape[0]), groups] = 1.0
    phat = z.T @ onehot / X.shape[0]
    qhat = np.outer(z.mean(axis=0), priors)
    return phat, qhat, z, h


def dro_grad_fields(spec: DivergenceSpec, params: ModelParams, data: Dataset, priors):
    """Danskin fields on the full data: alpha*_jk = f'(phat/qhat), f*(alpha*).

    alpha* is the maximizer of the divergence's dual representation, so it is
    the gradient of D_f w.r.t. its first argument, and f*(alpha*) is minus the
    gradient w.r.t. the second (up to sign convention: grad_Q = -f*(alpha*)).
    """
    if spec.kind is DivergenceKind.TOTAL_VARIATION:
        raise NonDifferentiable("total variation has no smooth dual field")
    phat, qhat, _, _ = _field_probs(params, data.features, data.groups, priors, data.k)
    if np.any((phat > 0) & (qhat <= 0)):
        raise AbsoluteContinuityViolation("joint mass where the product vanishes")
    alpha = np.asarray(f_prime(spec, phat / qhat))
    fstar, _ = _conjugate_pair(spec, alpha)
    return alpha, fstar


def _dual_norm_subgradient(v: np.ndarray, q: float) -> np.ndarray:
    """Subgradient of ||.||_q at v; ties and zeros take the zero subgradient."""
    if q == 2.0:
        n = np.linalg.norm(v)
        return v / n if n > 0 else np.zeros_like(v)
    return np.sign(v)


def _penalty_weights(spec, phat, qhat, cfg: RobustConfig):
    """Penalty value plus per-entry weights on grad(phat) and grad(qhat).

    Weight W_p[j,k] multiplies d(phat_jk)/d(theta); W_q[j,k] multiplies
    d(qhat_jk)/d(theta).  Chain rule through alpha* uses (f*)'(alpha*) = t
    and the conjugate curvature (f*)''.
    """
    t = phat / qhat
    alpha = np.asarray(f_prime(spec, t))
    fstar, _ = _conjugate_pair(spec, alpha)
    hess = np.asarray(conjugate_hess(spec, alpha))
    lam = cfg.lam
    if cfg.squared_penalty:
        eps = cfg.epsilon_penalty
        value = lam * eps * (float((alpha**2).sum()) + float((fstar**2).sum()))
        dval = lam * eps * 2.0 * (alpha + fstar * t)
    else:
        q = 2.0 if cfg.p_norm == 2.0 else 1.0
        u = _dual_norm_subgradient(alpha, q)
        v = _dual_norm_subgradient(fstar, q)
        if q == 2.0:
            value = lam * cfg.delta * (np.linalg.norm(alpha) + np.linalg.norm(fstar))
        else:
            value = lam * cfg.delta * (np.abs(alpha).sum() + np.abs(fstar).sum())
        dval = lam * cfg.delta * (u + v * t)
    phi = dval / (qhat**2 * hess)
    return value, phi * qhat, -phi * phat


def _coef_from_weights(W_p: np.ndarray, W_q: np.ndarray, groups: np.ndarray, priors):
    """Per-sample class coefficients for weighted-probability backprop.

    d(phat_jk) pulls in samples of group k only; d(qhat_jk) = pi_k d(marginal_j)
    pulls in every sample, so its weight collapses over k.
    """
    w = W_q @ priors
    return W_p[:, groups].T + w[None, :]


def shift_penalty(
    spec: DivergenceSpec, params: ModelParams, data: Dataset, priors, cfg: RobustConfig
) -> ShiftPenalty:
    """Dual-norm (or squared) shift penalty and its exact full-data gradient."""
    if spec.kind is DivergenceKind.TOTAL_VARIATION:
        raise NonDifferentiable("shift penalty needs a differentiable divergence")
    priors = np.asarray(priors, dtype=float)
    if (cfg.delta == 0.0 and not cfg.squared_penalty) or cfg.lam == 0.0:
        return ShiftPenalty(0.0, np.zeros_like(params.flat))
    phat, qhat, _, _ = _field_probs(params, data.features, data.groups, priors, data.k)
    value, W_p, W_q = _penalty_weights(spec, phat, qhat, cfg)
    coef = _coef_from_weights(W_p, W_q, data.groups, priors)
    grad = weighted_prob_grad(params, data.features, coef)
    return ShiftPenalty(float(value), grad)


# -- small-shift training ---------------------------------------------------------


def robust_train_smallshift(
    data: Dataset, cfg: RobustConfig, eval_data: Dataset | None = None
) -> TrainReport:
    """SGD on loss + lambda*D_f + dual-norm shift penalty (semi-stochastic).

    The fields (phat, qhat, alpha*, penalty weights) are refreshed with one
    forward pass over the full dataset every refresh_every_steps steps (default
    once per epoch); each step backpropagates minibatch estimates of
    d(phat)/d(theta) and d(qhat)/d(theta) against the frozen fields.
    """
    cfg.check_robust(data.n)
    if cfg.mode != GRADNORM:
        raise ConfigError("robust_train_smallshift needs mode='gradnorm'")
    data.validate()
    spec = cfg.divergence
    conditions = _build_conditions(data, "dp")
    priors = conditions[0].priors
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg.model, data.d, data.m, width=cfg.hidden_width, rng=rng)

    X, y, s = data.features, data.labels, data.groups
    onehot_s = np.zeros((data.n, data.k))
    onehot_s[np.arange(data.n), s] = 1.0
    steps_per_epoch = (data.n + cfg.batch_size - 1) // cfg.batch_size
    refresh_every = cfg.refresh_every_steps or steps_per_epoch

    records = np.empty((cfg.epochs_total, len(REPORT_COLUMNS)))
    penalties = np.empty(cfg.epochs_total)
    coef = None
    penalty_value = 0.0
    step = 0
    for epoch in range(cfg.epochs_total):
        lam_now = 0.0 if epoch < cfg.warmup_epochs else cfg.lam
        perm = rng.permutation(data.n)
        for start in range(0, data.n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            if lam_now > 0.0 and step % refresh_every == 0:
                coef, penalty_value = _smallshift_coef(spec, params, X, s, priors, data.k, cfg)
            _sgd_step(params, X[idx], y[idx], coef[idx] if lam_now > 0.0 else None, cfg.eta_theta)
            step += 1
        if not np.isfinite(params.flat).all():
            raise NonFiniteUpdate(f"parameters left the finite range in epoch {epoch}")
        A_star = _field_dual(spec, params, X, s, priors, data.k)
        records[epoch] = _epoch_row(
            epoch, params, A_star[None], data, eval_data, conditions, spec, cfg.lam, data.k
        )
        penalties[epoch] = penalty_value if lam_now > 0.0 else 0.0
    report = TrainReport(records=records, final_params=params, final_dual=A_star[None])
    report.extra = {"penalty": penalties, "delta": np.full(cfg.epochs_total, cfg.delta)}
    return report


def _field_dual(spec, params, X, s, priors, k) -> np.ndarray:
    phat, qhat, _, _ = _field_probs(params, X, s, priors, k)
    return clamp_dual(spec, np.asarray(f_prime(spec, phat / qhat)))


def _smallshift_coef(spec, params, X, s, priors, k, cfg: RobustConfig):
    """Frozen-field per-sample class coefficients for loss' + penalty' backprop."""
    phat, qhat, _, _ = _field_probs(params, X, s, priors, k)
    t = phat / qhat
    alpha = np.asarray(f_prime(spec, t))
    fstar, _ = _conjugate_pair(spec, alpha)
    # gradient of lambda * D_f itself (Danskin at the closed-form maximizer)
    W_p = cfg.lam * alpha
    W_q = -cfg.lam * fstar
    pen_value, pw_p, pw_q = _penalty_weights(spec, phat, qhat, cfg)
    W_p = W_p + pw_p
    W_q = W_q + pw_q
    return _coef_from_weights(W_p, W_q, s, priors), float(pen_value)


def _sgd_step(params, Xb, yb, coef_b, eta):
    """One SGD step on CE plus, if coef_b is given, the frozen-field extra terms.

    coef_b holds per-sample class coefficients C[i, j]; the extra objective is
    the batch mean of sum_j C[i, j] F_j(x_i), fused into the same backprop.
    """
    b = Xb.shape[0]
    z, h = _logits(params, Xb)
    z -= z.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    probs = z
    if coef_b is not None:
        inner = np.einsum("ij,ij->i", coef_b, probs)
        dz = probs * (coef_b - inner[:, None] + 1.0)
    else:
        dz = probs
    dz[np.arange(b), yb] -= 1.0
    dz /= b
    params.flat -= eta * _backprop(params, Xb, dz, h)


# -- sup-norm (linf) mode -----------------------------------------------------------


def _linf_clamped(phat: np.ndarray, qhat: np.ndarray, delta: float):
    p_t = np.minimum(phat + delta, 1.0)
    q_t = np.maximum(qhat - delta, 0.0)
    if np.any(q_t < PROB_FLOOR):
        warnings.warn(
            f"clamped product entries below {PROB_FLOOR} floored", stacklevel=3
        )
        q_t = np.maximum(q_t, PROB_FLOOR)
    return p_t, q_t


def linf_worst_case(spec: DivergenceSpec, phat, qhat, delta: float) -> float:
    """Closed-form worst-case divergence over a sup-norm ball of radius delta.

    Evaluates D_f at the entrywise-clamped unnormalized measures
    min(phat + delta, 1) and max(qhat - delta, 0); exact for KL and
    chi-squared, whose worst case sits at that corner whenever the dual
    field stays positive over the ball.
    """
    if spec.kind not in LINF_KINDS:
        raise UnsupportedDivergenceForLinf(
            f"{spec.token()} lacks the closed-form sup-norm worst case"
        )
    if delta < 0:
        raise ConfigError("delta must be nonnegative")
    p_t, q_t = _linf_clamped(np.asarray(phat, dtype=float), np.asarray(qhat, dtype=float), delta)
    return divergence_direct(spec, p_t.ravel(), q_t.ravel(), check_simplex=False)


def robust_objective_linf(
    spec: DivergenceSpec, params: ModelParams, data: Dataset, priors, delta: float
) -> float:
    """linf_worst_case evaluated at the model's full-data joint/product fields."""
    priors = np.asarray(priors, dtype=float)
    phat, qhat, _, _ = _field_probs(params, data.features, data.groups, priors, data.k)
    return linf_worst_case(spec, phat, qhat, delta)


def _linf_coef(spec, params, X, s, priors, k, cfg: RobustConfig):
    """Frozen-field coefficients for the clamped objective's batch backprop."""
    phat, qhat, _, _ = _field_probs(params, X, s, priors, k)
    p_t, q_t = _linf_clamped(phat, qhat, cfg.delta)
    t = p_t / q_t
    alpha = np.asarray(f_prime(spec, t))
    fstar, _ = _conjugate_pair(spec, alpha)
    # zero subgradient where a clamp is active
    W_p = cfg.lam * alpha * (phat + cfg.delta < 1.0)
    W_q = -cfg.lam * fstar * (qhat - cfg.delta > 0.0)
    value = divergence_direct(spec, p_t.ravel(), q_t.ravel(), check_simplex=False)
    return _coef_from_weights(W_p, W_q, s, priors), float(cfg.lam * value)


def robust_train_linf(
    data: Dataset, cfg: RobustConfig, eval_data: Dataset | None = None
) -> TrainReport:
    """SGD on loss + lambda * worst-case divergence under sup-norm shifts."""
    cfg.check_robust(data.n)
    if cfg.mode != LINF:
        raise ConfigError("robust_train_linf needs mode='linf'")
    data.validate()
    spec = cfg.divergence
    conditions = _build_conditions(data, "dp")
    priors = conditions[0].priors
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg.model, data.d, data.m, width=cfg.hidden_width, rng=rng)

    X, y, s = data.features, data.labels, data.groups
    steps_per_epoch = (data.n + cfg.batch_size - 1) // cfg.batch_size
    refresh_every = cfg.refresh_every_steps or steps_per_epoch

    records = np.empty((cfg.epochs_total, len(REPORT_COLUMNS)))
    penalties = np.empty(cfg.epochs_total)
    coef = None
    penalty_value = 0.0
    step = 0
    for epoch in range(cfg.epochs_total):
        lam_now = 0.0 if epoch < cfg.warmup_epochs else cfg.lam
        perm = rng.permutation(data.n)
        for start in range(0, data.n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            if lam_now > 0.0 and step % refresh_every == 0:
                coef, penalty_value = _linf_coef(spec, params, X, s, priors, data.k, cfg)
            _sgd_step(params, X[idx], y[idx], coef[idx] if lam_now > 0.0 else None, cfg.eta_theta)
            step += 1
        if not np.isfinite(params.flat).all():
            raise NonFiniteUpdate(f"parameters left the finite range in epoch {epoch}")
        A_star = _field_dual(spec, params, X, s, priors, data.k)
        records[epoch] = _epoch_row(
            epoch, params, A_star[None], data, eval_data, conditions, spec, cfg.lam, data.k
        )
        penalties[epoch] = penalty_value if lam_now > 0.0 else 0.0
    report = TrainReport(records=records, final_params=params, final_dual=A_star[None])
    report.extra = {"penalty": penalties, "delta": np.full(cfg.epochs_total, cfg.delta)}
    return report
