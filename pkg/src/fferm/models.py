"""Softmax classifiers with hand-derived gradients.

Two architectures: a linear softmax layer and a one-hidden-layer tanh
network.  Parameters live in a single flat float64 vector so they can be
finite-difference checked coordinate by coordinate.  Layout is layer-major,
row-major within each layer:

    linear:     W (m x d), b (m)
    onehidden:  W1 (width x d), b1 (width), W2 (m x width), b2 (m)

All gradients are closed form; there is no autodiff anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ClassIndexOutOfRange, DimensionMismatch, EmptyBatch

__all__ = [
    "ModelParams",
    "Prediction",
    "init_params",
    "forward",
    "forward_batch",
    "loss",
    "grad_loss",
    "grad_prob",
    "weighted_prob_grad",
    "save_model",
    "load_model",
]

LINEAR = "linear"
ONE_HIDDEN = "onehidden"


def _param_size(arch: str, d: int, m: int, width: int) -> int:
    if arch == LINEAR:
        return m * d + m
    return width * d + width + m * width + m


@dataclass
class ModelParams:
    arch: str
    d: int
    m: int
    width: int = 0
    flat: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        expected = _param_size(self.arch, self.d, self.m, self.width)
        if self.flat.size == 0:
            self.flat = np.zeros(expected)
        if self.flat.size != expected:
            raise DimensionMismatch(
                f"flat vector has {self.flat.size} entries, layout needs {expected}"
            )
        if not np.all(np.isfinite(self.flat)):
            raise DimensionMismatch("parameters must be finite")

    def layers(self):
        """Views into the flat vector, per layer."""
        if self.arch == LINEAR:
            w_end = self.m * self.d
            return (
                self.flat[:w_end].reshape(self.m, self.d),
                self.flat[w_end:],
            )
        p = self.flat
        i0 = self.width * self.d
        i1 = i0 + self.width
        i2 = i1 + self.m * self.width
        return (
            p[:i0].reshape(self.width, self.d),
            p[i0:i1],
            p[i1:i2].reshape(self.m, self.width),
            p[i2:],
        )

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, self.d, self.m, self.width, self.flat.copy())


@dataclass(frozen=True)
class Prediction:
    probs: np.ndarray
    label: int


def init_params(
    arch: str, d: int, m: int, width: int = 16, rng: np.random.Generator | None = None
) -> ModelParams:
    """Zero init for linear (uniform predictions); uniform +-1/sqrt(fan_in)
    per layer for the hidden net, drawn from rng (fixed generator if None)."""
    params = ModelParams(arch, d, m, width if arch == ONE_HIDDEN else 0)
    if arch == LINEAR:
        return params
    if rng is None:
        rng = np.random.default_rng(0)
    w1, b1, w2, b2 = params.layers()
    s1 = 1.0 / np.sqrt(d)
    s2 = 1.0 / np.sqrt(width)
    w1[:] = rng.uniform(-s1, s1, size=w1.shape)
    b1[:] = rng.uniform(-s1, s1, size=b1.shape)
    w2[:] = rng.uniform(-s2, s2, size=w2.shape)
    b2[:] = rng.uniform(-s2, s2, size=b2.shape)
    return params


def _logits(params: ModelParams, X: np.ndarray):
    """Returns (logits, hidden activations or None)."""
    if params.arch == LINEAR:
        w, b = params.layers()
        return X @ w.T + b, None
    w1, b1, w2, b2 = params.layers()
    h = np.tanh(X @ w1.T + b1)
    return h @ w2.T + b2, h


def _log_softmax(z: np.ndarray) -> np.ndarray:
    zs = z - z.max(axis=1, keepdims=True)
    return zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def forward_batch(params: ModelParams, X: np.ndarray):
    """Softmax probabilities for a batch; also returns the hidden activations."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.d:
        raise DimensionMismatch(f"expected features of width {params.d}, got {X.shape}")
    z, h = _logits(params, X)
    return _softmax(z), h


def forward(params: ModelParams, x) -> Prediction:
    probs, _ = forward_batch(params, np.atleast_2d(np.asarray(x, dtype=float)))
    p = probs[0]
    return Prediction(probs=p, label=int(np.argmax(p)))


def loss(params: ModelParams, X, y) -> float:
    """Mean cross-entropy -1/|B| sum_i log F_{y_i}(x_i)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    if X.shape[0] == 0:
        raise EmptyBatch("loss needs a nonempty batch")
    z, _ = _logits(params, X)
    logp = _log_softmax(z)
    return float(-logp[np.arange(len(y)), y].mean())


def _backprop(params: ModelParams, X: np.ndarray, dz: np.ndarray, h) -> np.ndarray:
    """Flat gradient from d(objective)/d(logits)."""
    g = np.empty_like(params.flat)
    if params.arch == LINEAR:
        w_end = params.m * params.d
        np.matmul(dz.T, X, out=g[:w_end].reshape(params.m, params.d))
        g[w_end:] = dz.sum(axis=0)
        return g
    w1, b1, w2, b2 = params.layers()
    i0 = params.width * params.d
    i1 = i0 + params.width
    i2 = i1 + params.m * params.width
    np.matmul(dz.T, h, out=g[i1:i2].reshape(params.m, params.width))
    g[i2:] = dz.sum(axis=0)
    dpre = (dz @ w2) * (1.0 - h * h)
    np.matmul(dpre.T, X, out=g[:i0].reshape(params.width, params.d))
    g[i0:i1] = dpre.sum(axis=0)
    return g


def grad_loss(params: ModelParams, X, y) -> np.ndarray:
    """Exact gradient of the mean cross-entropy."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    n = X.shape[0]
    if n == 0:
        raise EmptyBatch("grad_loss needs a nonempty batch")
    z, h = _logits(params, X)
    dz = _softmax(z)
    dz[np.arange(n), y] -= 1.0
    dz /= n
    return _backprop(params, X, dz, h)


def weighted_prob_grad(params: ModelParams, X, coef) -> np.ndarray:
    """Gradient of (1/|B|) sum_i sum_j coef[i, j] * F_j(x_i).

    coef has shape (batch, m).  This is the workhorse behind the fairness
    regularizer and the robust penalties: every term they need is a
    coefficient-weighted sum of class probabilities, so one softmax
    backprop per batch suffices (transient memory O(batch * params)).
    """
    X = np.asarray(X, dtype=float)
    coef = np.asarray(coef, dtype=float)
    n = X.shape[0]
    if n == 0:
        raise EmptyBatch("weighted_prob_grad needs a nonempty batch")
    probs, h = forward_batch(params, X)
    inner = (coef * probs).sum(axis=1, keepdims=True)
    dz = probs * (coef - inner)
    dz /= n
    return _backprop(params, X, dz, h)


def grad_prob(params: ModelParams, x, j: int) -> np.ndarray:
    """Gradient of the class-j probability F_j(x) w.r.t. the flat parameters."""
    if not 0 <= j < params.m:
        raise ClassIndexOutOfRange(f"class {j} outside [0, {params.m})")
    X = np.atleast_2d(np.asarray(x, dtype=float))
    coef = np.zeros((1, params.m))
    coef[0, j] = 1.0
    return weighted_prob_grad(params, X, coef)


# -- checkpoints ---------------------------------------------------------------


def save_model(params: ModelParams, path) -> None:
    """Text header line, then the flat vector as little-endian float64."""
    header = f"ferm-model v1 {params.arch} {params.d} {params.m}"
    if params.arch == ONE_HIDDEN:
        header += f" {params.width}"
    with open(path, "wb") as fh:
        fh.write((header + "\n").encode("ascii"))
        fh.write(params.flat.astype("<f8").tobytes())


def load_model(path) -> ModelParams:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip().split()
        payload = fh.read()
    if len(header) < 5 or header[0] != "ferm-model" or header[1] != "v1":
        raise DimensionMismatch(f"not a ferm-model checkpoint: {header!r}")
    arch = header[2]
    d, m = int(header[3]), int(header[4])
    width = int(header[5]) if arch == ONE_HIDDEN else 0
    flat = np.frombuffer(payload, dtype="<f8").astype(float)
    return ModelParams(arch, d, m, width, flat)
