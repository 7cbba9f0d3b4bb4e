"""Loss and optimizer primitives."""

from __future__ import annotations

import numpy as np


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood over the batch and its gradient (softmax - onehot) / N."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,) or labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must be {n} integers in [0, {k})")
    z = logits - logits.max(axis=1, keepdims=True)
    log_sum = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(log_sum - z[rows, labels]))
    grad = np.exp(z - log_sum[:, None])
    grad[rows, labels] -= 1.0
    return loss, grad / n


def sgd_step(params, grads, velocities, lr: float, momentum: float = 0.0, weight_decay: float = 0.0):
    """In place: v <- momentum*v + grad + weight_decay*param; param <- param - lr*v."""
    if not lr >= 0:
        raise ValueError("learning rate must be non-negative")
    for p, g, v in zip(params, grads, velocities):
        v *= momentum
        v += g
        if weight_decay:
            v += weight_decay * p
        p -= lr * v
    return params, velocities
