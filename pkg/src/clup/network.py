"""Small feed-forward networks with manual backpropagation and SGD training.

All arithmetic runs in double precision; checkpoints store float32 (see
checkpoint.py). Networks apply ReLU on hidden layers and identity on the
output layer; the classification head is a separate affine + softmax stage.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .features import FeatureSet

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass
class Mlp:
    layer_dims: list[int]
    weights: list[np.ndarray]  # layer l has shape (dims[l+1], dims[l])
    biases: list[np.ndarray]

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]


@dataclass
class SoftmaxHead:
    weight: np.ndarray  # (num_classes, feature_dim)
    bias: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.weight.shape[0]


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    lr0: float
    lr_min: float = 0.0
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not (self.lr0 >= self.lr_min >= 0.0):
            raise ConfigError("learning rates must satisfy lr0 >= lr_min >= 0")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError("momentum must be in [0, 1)")


def _uniform_init(rng, fan_out: int, fan_in: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


def init_mlp(layer_dims, seed) -> Mlp:
    """Seeded scaled-uniform initialization, weights in [-sqrt(6/(fi+fo)), +..]."""
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ConfigError(f"invalid layer dims {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(_uniform_init(rng, fan_out, fan_in))
        biases.append(np.zeros(fan_out))
    return Mlp(layer_dims=dims, weights=weights, biases=biases)


def init_head(num_classes: int, feature_dim: int, seed) -> SoftmaxHead:
    if num_classes < 2 or feature_dim < 1:
        raise ConfigError("head needs num_classes >= 2 and feature_dim >= 1")
    rng = np.random.default_rng(seed)
    return SoftmaxHead(weight=_uniform_init(rng, num_classes, feature_dim), bias=np.zeros(num_classes))


def _forward_cached(net: Mlp, batch):
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ShapeError(
            f"batch has {x.shape[-1] if x.ndim else 0} columns, network expects {net.input_dim}"
        )
    acts = [x]
    pres = []
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        pre = acts[-1] @ w.T + b
        pres.append(pre)
        acts.append(pre if l == last else np.maximum(pre, 0.0))
    if not np.all(np.isfinite(acts[-1])):
        raise NumericError("non-finite activations in forward pass")
    return acts[-1], (acts, pres)


def forward(net: Mlp, batch) -> np.ndarray:
    """Affine+ReLU composition; identity activation on the output layer."""
    z, _ = _forward_cached(net, batch)
    return z


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def classify(head: SoftmaxHead, z) -> tuple[np.ndarray, np.ndarray]:
    """Return (logits, probs) for a batch of feature rows."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != head.weight.shape[1]:
        raise ShapeError(
            f"features have {z.shape[-1] if z.ndim else 0} columns, head expects {head.weight.shape[1]}"
        )
    logits = z @ head.weight.T + head.bias
    return logits, softmax(logits)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ConfigError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def cross_entropy(probs, targets) -> float:
    """Mean negative log-probability at the one-hot target index."""
    probs = np.asarray(probs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if probs.shape != targets.shape:
        raise ShapeError(f"probs shape {probs.shape} != targets shape {targets.shape}")
    if not np.all((targets == 0.0) | (targets == 1.0)) or not np.all(targets.sum(axis=1) == 1.0):
        raise ConfigError("targets must be one-hot rows")
    p_at = (probs * targets).sum(axis=1)
    clamped = int(np.count_nonzero(p_at < PROB_FLOOR))
    if clamped:
        log.warning("cross_entropy: clamped %d probabilities below %g", clamped, PROB_FLOOR)
    return float(-np.mean(np.log(np.maximum(p_at, PROB_FLOOR))))


def _mlp_backward(net: Mlp, cache, grad_out):
    """Backprop an upstream gradient through the network; returns grads + input grad."""
    acts, pres = cache
    last = len(net.weights) - 1
    d_weights = [None] * len(net.weights)
    d_biases = [None] * len(net.weights)
    g = np.asarray(grad_out, dtype=np.float64)
    for l in range(last, -1, -1):
        dpre = g if l == last else g * (pres[l] > 0.0)
        d_weights[l] = dpre.T @ acts[l]
        d_biases[l] = dpre.sum(axis=0)
        if not (np.all(np.isfinite(d_weights[l])) and np.all(np.isfinite(d_biases[l]))):
            raise NumericError(f"non-finite gradient in layer {l}")
        g = dpre @ net.weights[l]
    return d_weights, d_biases, g


def classifier_loss_and_grads(net: Mlp, head: SoftmaxHead, batch, targets):
    """Cross-entropy loss plus analytic gradients for every parameter."""
    z, cache = _forward_cached(net, batch)
    _, probs = classify(head, z)
    targets = np.asarray(targets, dtype=np.float64)
    loss = cross_entropy(probs, targets)
    b = probs.shape[0]
    dlogits = (probs - targets) / b
    d_head_w = dlogits.T @ z
    d_head_b = dlogits.sum(axis=0)
    if not (np.all(np.isfinite(d_head_w)) and np.all(np.isfinite(d_head_b))):
        raise NumericError("non-finite gradient in classifier head")
    dz = dlogits @ head.weight
    d_weights, d_biases, _ = _mlp_backward(net, cache, dz)
    return loss, (d_weights, d_biases, d_head_w, d_head_b)


@dataclass
class SgdState:
    """Momentum velocity buffers for one (net, head) pair."""

    vel_w: list[np.ndarray]
    vel_b: list[np.ndarray]
    vel_head_w: np.ndarray
    vel_head_b: np.ndarray

    @classmethod
    def zeros(cls, net: Mlp, head: SoftmaxHead) -> "SgdState":
        return cls(
            vel_w=[np.zeros_like(w) for w in net.weights],
            vel_b=[np.zeros_like(b) for b in net.biases],
            vel_head_w=np.zeros_like(head.weight),
            vel_head_b=np.zeros_like(head.bias),
        )


def backward_step(
    net: Mlp,
    head: SoftmaxHead,
    batch,
    targets,
    lr: float,
    momentum: float,
    state: SgdState | None = None,
    freeze_extractor: bool = False,
) -> float:
    """One momentum-SGD step on the cross-entropy loss; returns the pre-update loss.

    With momentum 0 the update is exactly parameter - lr * gradient.
    """
    loss, (d_w, d_b, d_hw, d_hb) = classifier_loss_and_grads(net, head, batch, targets)
    if state is None:
        state = SgdState.zeros(net, head)
    if not freeze_extractor:
        for l in range(len(net.weights)):
            state.vel_w[l] = momentum * state.vel_w[l] + d_w[l]
            state.vel_b[l] = momentum * state.vel_b[l] + d_b[l]
            net.weights[l] -= lr * state.vel_w[l]
            net.biases[l] -= lr * state.vel_b[l]
    state.vel_head_w = momentum * state.vel_head_w + d_hw
    state.vel_head_b = momentum * state.vel_head_b + d_hb
    head.weight -= lr * state.vel_head_w
    head.bias -= lr * state.vel_head_b
    return loss


def cosine_lr(t: int, total: int, lr0: float, lr_min: float) -> float:
    """Cosine-annealed learning rate at step t of total."""
    if total < 1:
        raise ValueError("total steps must be >= 1")
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside [0, {total}]")
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * t / total))


def train_classifier(
    net: Mlp,
    head: SoftmaxHead,
    data: FeatureSet,
    cfg: TrainConfig,
    freeze_extractor: bool = False,
) -> list[float]:
    """Train net+head in place on labelled data; returns per-epoch mean losses.

    Deterministic given cfg.seed: shuffle order is fixed, the cosine schedule runs
    over epochs * batches steps, and the last partial batch is kept.
    """
    if data.labels is None:
        raise ConfigError("training data must be labelled")
    n_classes = head.num_classes
    x = data.data.astype(np.float64)
    y = one_hot(data.labels, n_classes)
    m = x.shape[0]
    rng = np.random.default_rng(cfg.seed)
    n_batches = math.ceil(m / cfg.batch_size)
    total = cfg.epochs * n_batches
    state = SgdState.zeros(net, head)
    epoch_losses = []
    t = 0
    for _ in range(cfg.epochs):
        perm = rng.permutation(m)
        losses = []
        for start in range(0, m, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            lr = cosine_lr(t, total, cfg.lr0, cfg.lr_min)
            losses.append(
                backward_step(net, head, x[idx], y[idx], lr, cfg.momentum, state, freeze_extractor)
            )
            t += 1
        epoch_losses.append(float(np.mean(losses)))
    return epoch_losses


def predict_probs(net: Mlp, head: SoftmaxHead, x) -> np.ndarray:
    _, probs = classify(head, forward(net, x))
    return probs


def predict_labels(net: Mlp, head: SoftmaxHead, x) -> np.ndarray:
    return np.argmax(predict_probs(net, head, x), axis=1)
