import numpy as np


def softmax(e: np.ndarray, axis: int = -1) -> np.ndarray:
    z = e - e.max(axis=axis, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=axis, keepdims=True)
    return z


def softmax_backward(a: np.ndarray, da: np.ndarray, axis: int = -1) -> np.ndarray:
    return a * (da - (a * da).sum(axis=axis, keepdims=True))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x):
    """tanh approximation; returns (value, tanh term) so the backward pass can reuse it."""
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    return 0.5 * x * (1.0 + t), t


def gelu_grad(x, t):
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
