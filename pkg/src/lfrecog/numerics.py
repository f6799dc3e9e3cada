"""Dense numeric primitives: activations, softmax, batch normalization,
and a central finite-difference gradient oracle.

All learning math runs in float64; conversion to float32 happens only at
file-format boundaries.
"""

from dataclasses import dataclass

import numpy as np


def matmul(a, b):
    """Matrix product with an explicit shape check."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x):
    """Logistic function, stable for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def tanh(x):
    return np.tanh(x)


def softmax(v, axis=-1):
    """Normalized exponentials with max-subtraction for overflow safety."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of empty vector")
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass
class BatchNormState:
    """Per-feature affine parameters and running statistics."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def initial(cls, num_features, epsilon=1e-5, momentum=0.1):
        return cls(
            gamma=np.ones(num_features),
            beta=np.zeros(num_features),
            running_mean=np.zeros(num_features),
            running_var=np.ones(num_features),
            epsilon=epsilon,
            momentum=momentum,
        )

    def copy(self):
        return BatchNormState(
            self.gamma.copy(), self.beta.copy(),
            self.running_mean.copy(), self.running_var.copy(),
            self.epsilon, self.momentum,
        )


def batchnorm_forward(batch, state, mode):
    """Normalize a (rows × features) batch.

    Train mode normalizes by batch statistics and returns an updated state
    (running stats folded in by momentum).  Infer mode is a pure function of
    (batch, state).  Returns (normalized, cache, new_state); the cache feeds
    batchnorm_backward.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[0] < 1:
        raise ValueError(f"batch must be 2-D with >= 1 row, got {batch.shape}")
    if batch.shape[1] != state.gamma.shape[0]:
        raise ValueError(
            f"feature count {batch.shape[1]} does not match state {state.gamma.shape[0]}"
        )
    if mode == "train":
        mean = batch.mean(axis=0)
        var = batch.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + state.epsilon)
        xhat = (batch - mean) * inv_std
        out = xhat * state.gamma + state.beta
        new_state = state.copy()
        m = state.momentum
        new_state.running_mean = (1.0 - m) * state.running_mean + m * mean
        new_state.running_var = (1.0 - m) * state.running_var + m * var
        cache = (xhat, inv_std, state.gamma)
        return out, cache, new_state
    elif mode == "infer":
        inv_std = 1.0 / np.sqrt(state.running_var + state.epsilon)
        xhat = (batch - state.running_mean) * inv_std
        out = xhat * state.gamma + state.beta
        cache = (xhat, inv_std, state.gamma)
        return out, cache, state
    raise ValueError(f"unknown mode {mode!r}")


def batchnorm_backward(d_out, cache):
    """Gradients through train-mode batch normalization.

    Returns (d_batch, d_gamma, d_beta).
    """
    xhat, inv_std, gamma = cache
    n = xhat.shape[0]
    d_gamma = (d_out * xhat).sum(axis=0)
    d_beta = d_out.sum(axis=0)
    d_xhat = d_out * gamma
    d_batch = (
        d_xhat - d_xhat.mean(axis=0) - xhat * (d_xhat * xhat).mean(axis=0)
    ) * inv_std
    return d_batch, d_gamma, d_beta


def finite_diff_grad(f, at, h=1e-5):
    """Central-difference gradient estimate of a scalar function of an array."""
    if h <= 0:
        raise ValueError("h must be positive")
    at = np.asarray(at, dtype=np.float64)
    grad = np.zeros_like(at)
    flat = at.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(at)
        flat[i] = orig - h
        fm = f(at)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value at perturbed index {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
