"""Gated attention MIL with a linear regression head.

For a bag ``H`` (n x d_in)::

    G = tanh(H V^T) * sigmoid(H U^T)        n x d_hidden
    a = softmax(G w)                        attention over rows
    z = a^T G
    y = W_r . z + b_r
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimMismatchError
from ._ops import sigmoid, softmax, softmax_backward
from .params import ModelParams
from .types import Prediction, as_features


@dataclass
class AttMilCache:
    H: np.ndarray
    T: np.ndarray
    S: np.ndarray
    G: np.ndarray
    a: np.ndarray
    z: np.ndarray
    params: ModelParams


def attmil_forward(params: ModelParams, instance) -> tuple[Prediction, AttMilCache]:
    H, pid = as_features(instance)
    w = params.weights
    if H.shape[1] != params.d_in:
        raise DimMismatchError(f"instance dim {H.shape[1]} != model d_in {params.d_in}")
    T = np.tanh(H @ w["V"].T)
    S = sigmoid(H @ w["U"].T)
    G = T * S
    a = softmax(G @ w["w"])
    z = a @ G
    y = float(w["W_r"] @ z + w["b_r"])
    return Prediction(pid, y, a), AttMilCache(H, T, S, G, a, z, params)


def attmil_backward(cache: AttMilCache, dy: float) -> dict[str, np.ndarray]:
    w = cache.params.weights
    a, G, T, S, H = cache.a, cache.G, cache.T, cache.S, cache.H
    grads = {"W_r": dy * cache.z, "b_r": np.array(float(dy))}
    dz = dy * w["W_r"]
    de = softmax_backward(a, G @ dz)
    grads["w"] = G.T @ de
    dG = np.outer(a, dz) + np.outer(de, w["w"])
    dP = dG * S * (1.0 - T * T)
    dQ = dG * T * S * (1.0 - S)
    grads["V"] = dP.T @ H
    grads["U"] = dQ.T @ H
    return grads
