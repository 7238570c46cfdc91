"""Dense kernels and the Adam optimizer used by the classifiers.

All matrices are row-major float64 numpy arrays. The functions here are the
single source of truth for the arithmetic the models do: matmul, ReLU and
its backward, a numerically safe softmax cross-entropy, and a functional
Adam step with decoupled-into-gradient L2 weight decay.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError

Matrix = np.ndarray  # 2-d float64, row-major


def as_matrix(x) -> Matrix:
    """Coerce to a 2-d float64 C-contiguous array."""
    a = np.ascontiguousarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise UsageError(f"expected a 2-d matrix, got shape {a.shape}")
    return a


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with an explicit shape check."""
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise UsageError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def relu(x: Matrix) -> Matrix:
    return np.maximum(x, 0.0)


def relu_backward(grad_out: Matrix, pre_activation: Matrix) -> Matrix:
    """Chain-rule through ReLU: pass gradient where the pre-activation was
    strictly positive, zero elsewhere (subgradient 0 at 0)."""
    grad_out, pre_activation = np.asarray(grad_out), np.asarray(pre_activation)
    if grad_out.shape != pre_activation.shape:
        raise UsageError(
            f"relu_backward shape mismatch: grad {grad_out.shape} vs pre-activation {pre_activation.shape}"
        )
    return np.where(pre_activation > 0.0, grad_out, 0.0)


def softmax(logits: Matrix) -> Matrix:
    """Row-wise softmax with max subtraction for overflow safety."""
    logits = as_matrix(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Matrix, labels) -> tuple[float, Matrix]:
    """Mean softmax cross-entropy over rows and its gradient wrt the logits.

    ``labels`` is an int vector of true class ids, one per row. Returns
    ``(loss, grad)`` where ``grad = (softmax(logits) - onehot) / rows``, i.e.
    the gradient of the mean loss.
    """
    logits = as_matrix(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    rows, cols = logits.shape
    if labels.shape[0] != rows:
        raise UsageError(f"{labels.shape[0]} labels for {rows} logit rows")
    if labels.min(initial=0) < 0 or labels.max(initial=-1) >= cols:
        raise UsageError(f"label out of range for {cols} classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(rows), labels]))
    grad = softmax(logits)
    grad[np.arange(rows), labels] -= 1.0
    return loss, grad / rows


@dataclass
class AdamState:
    """First/second moment accumulators and step counter for one parameter
    matrix."""

    m: Matrix
    v: Matrix
    step: int = 0

    @classmethod
    def zeros_like(cls, param: Matrix) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), step=0)


@dataclass
class AdamConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 5e-4


def adam_update(param: Matrix, grad: Matrix, state: AdamState, config: AdamConfig) -> tuple[Matrix, AdamState]:
    """One Adam step; returns the new parameter and state, inputs untouched.

    Weight decay is classic L2: ``grad + weight_decay * param`` is formed
    before the moment updates, matching optimizers that fold the penalty
    into the gradient.
    """
    if param.shape != grad.shape:
        raise UsageError(f"adam_update shape mismatch: param {param.shape} vs grad {grad.shape}")
    g = grad + config.weight_decay * param
    step = state.step + 1
    m = config.beta1 * state.m + (1.0 - config.beta1) * g
    v = config.beta2 * state.v + (1.0 - config.beta2) * (g * g)
    m_hat = m / (1.0 - config.beta1**step)
    v_hat = v / (1.0 - config.beta2**step)
    new_param = param - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return new_param, AdamState(m=m, v=v, step=step)


def glorot_uniform(rows: int, cols: int, rng: np.random.Generator) -> Matrix:
    """Glorot/Xavier uniform init: U(-a, a) with a = sqrt(6 / (rows + cols))."""
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))
