"""Simplified spatial-decay transformer aggregator.

Not the published radial-decay architecture: every self-attention logit gets
an additive penalty ``-lam * ||c_i - c_j||`` from patch grid coordinates, with
one learnable ``lam >= 0`` shared across layers and heads. Layers are
post-residual (no normalisation): ``X <- X + MHA(X); X <- X + FFN(X)`` with a
GELU feed-forward. The bag embedding is tanh-attention pooled and passed to a
linear regression head.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimMismatchError, MissingCoordsError
from ._ops import gelu, gelu_grad, softmax, softmax_backward
from .params import ModelParams
from .types import Prediction, as_coords, as_features


def pairwise_distances(coords) -> np.ndarray:
    c = np.asarray(coords, dtype=np.float64)
    diff = c[:, None, :] - c[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def spatial_decay_bias(coords, lam: float) -> np.ndarray:
    """``bias[i, j] = -lam * ||c_i - c_j||_2``; zero on the diagonal."""
    if coords is None:
        raise MissingCoordsError("spatial decay bias needs patch coordinates")
    if lam < 0:
        raise ValueError(f"decay rate must be >= 0, got {lam}")
    return -float(lam) * pairwise_distances(coords)


@dataclass
class _LayerCache:
    X: np.ndarray
    Qh: np.ndarray
    Kh: np.ndarray
    Vh: np.ndarray
    A: np.ndarray
    O: np.ndarray
    X1: np.ndarray
    Z1: np.ndarray
    t: np.ndarray
    Gz: np.ndarray


@dataclass
class TransformerCache:
    H: np.ndarray
    D: np.ndarray | None
    layers: list[_LayerCache]
    X: np.ndarray
    Tp: np.ndarray
    a: np.ndarray
    z: np.ndarray
    params: ModelParams
    attention_maps: list[np.ndarray] = field(default_factory=list)


def _split(X, h):
    n, dh = X.shape
    return X.reshape(n, h, dh // h).transpose(1, 0, 2)


def _merge(Xh):
    h, n, dk = Xh.shape
    return Xh.transpose(1, 0, 2).reshape(n, h * dk)


def transformer_forward(params: ModelParams, instance, coords=None) -> tuple[Prediction, TransformerCache]:
    H, pid = as_features(instance)
    w = params.weights
    if H.shape[1] != params.d_in:
        raise DimMismatchError(f"instance dim {H.shape[1]} != model d_in {params.d_in}")
    c = as_coords(instance, coords)
    lam = float(w["lam"])
    if c is None:
        if lam != 0.0:
            raise MissingCoordsError("transformer with a nonzero decay rate needs patch coordinates")
        D, bias = None, 0.0
    else:
        D = pairwise_distances(c)
        bias = -lam * D
    h = params.n_heads
    scale = 1.0 / np.sqrt(params.d_hidden // h)

    X = H @ w["W_in"].T + w["b_in"]
    layers = []
    for l in range(params.n_layers):
        Qh = _split(X @ w[f"Wq{l}"].T, h)
        Kh = _split(X @ w[f"Wk{l}"].T, h)
        Vh = _split(X @ w[f"Wv{l}"].T, h)
        A = softmax(Qh @ Kh.transpose(0, 2, 1) * scale + bias, axis=-1)
        O = _merge(A @ Vh)
        X1 = X + O @ w[f"Wo{l}"].T + w[f"bo{l}"]
        Z1 = X1 @ w[f"W1{l}"].T + w[f"b1{l}"]
        Gz, t = gelu(Z1)
        X2 = X1 + Gz @ w[f"W2{l}"].T + w[f"b2{l}"]
        layers.append(_LayerCache(X, Qh, Kh, Vh, A, O, X1, Z1, t, Gz))
        X = X2

    Tp = np.tanh(X @ w["P"].T)
    a = softmax(Tp @ w["p"])
    z = a @ X
    y = float(w["W_r"] @ z + w["b_r"])
    return Prediction(pid, y, a), TransformerCache(H, D, layers, X, Tp, a, z, params)


def transformer_backward(cache: TransformerCache, dy: float) -> dict[str, np.ndarray]:
    params = cache.params
    w = params.weights
    h = params.n_heads
    scale = 1.0 / np.sqrt(params.d_hidden // h)
    g = {"W_r": dy * cache.z, "b_r": np.array(float(dy))}

    dz = dy * w["W_r"]
    X, a, Tp = cache.X, cache.a, cache.Tp
    de = softmax_backward(a, X @ dz)
    g["p"] = Tp.T @ de
    dpre = np.outer(de, w["p"]) * (1.0 - Tp * Tp)
    g["P"] = dpre.T @ X
    dX = np.outer(a, dz) + dpre @ w["P"]

    dlam = 0.0
    for l in reversed(range(params.n_layers)):
        lc = cache.layers[l]
        # feed-forward branch
        g[f"W2{l}"] = dX.T @ lc.Gz
        g[f"b2{l}"] = dX.sum(axis=0)
        dZ1 = (dX @ w[f"W2{l}"]) * gelu_grad(lc.Z1, lc.t)
        g[f"W1{l}"] = dZ1.T @ lc.X1
        g[f"b1{l}"] = dZ1.sum(axis=0)
        dX1 = dX + dZ1 @ w[f"W1{l}"]
        # attention branch
        g[f"Wo{l}"] = dX1.T @ lc.O
        g[f"bo{l}"] = dX1.sum(axis=0)
        dOh = _split(dX1 @ w[f"Wo{l}"], h)
        dA = dOh @ lc.Vh.transpose(0, 2, 1)
        dVh = lc.A.transpose(0, 2, 1) @ dOh
        dL = softmax_backward(lc.A, dA, axis=-1)
        if cache.D is not None:
            dlam -= float((dL.sum(axis=0) * cache.D).sum())
        dQ = _merge(dL @ lc.Kh) * scale
        dK = _merge(dL.transpose(0, 2, 1) @ lc.Qh) * scale
        dV = _merge(dVh)
        g[f"Wq{l}"] = dQ.T @ lc.X
        g[f"Wk{l}"] = dK.T @ lc.X
        g[f"Wv{l}"] = dV.T @ lc.X
        dX = dX1 + dQ @ w[f"Wq{l}"] + dK @ w[f"Wk{l}"] + dV @ w[f"Wv{l}"]

    g["lam"] = np.array(dlam)
    g["W_in"] = dX.T @ cache.H
    g["b_in"] = dX.sum(axis=0)
    return g
