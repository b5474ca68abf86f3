"""Model parameter containers and initialisation."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError


class Arch(str, enum.Enum):
    ATTMIL = "attmil"
    TRANSFORMER = "transformer"


@dataclass
class ModelParams:
    """Named float64 weight tensors plus the hyperparameters that shaped them.

    ``target_mean``/``target_std`` undo target standardisation at prediction time.
    """

    arch: Arch
    d_in: int
    d_hidden: int
    weights: dict[str, np.ndarray]
    n_layers: int = 0
    n_heads: int = 0
    d_ff: int = 0
    target_mean: float = 0.0
    target_std: float = 1.0
    extra: dict = field(default_factory=dict)

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, self.d_in, self.d_hidden,
                           {k: v.copy() for k, v in self.weights.items()},
                           self.n_layers, self.n_heads, self.d_ff,
                           self.target_mean, self.target_std, dict(self.extra))

    def hyper(self) -> dict:
        return {
            "arch": self.arch.value, "d_in": self.d_in, "d_hidden": self.d_hidden,
            "n_layers": self.n_layers, "n_heads": self.n_heads, "d_ff": self.d_ff,
            "target_mean": self.target_mean, "target_std": self.target_std,
        }

    def save(self, path) -> None:
        np.savez(path, __hyper__=np.array(json.dumps(self.hyper())), **self.weights)

    @classmethod
    def load(cls, path) -> "ModelParams":
        with np.load(path) as data:
            hyper = json.loads(str(data["__hyper__"]))
            weights = {k: data[k].copy() for k in data.files if k != "__hyper__"}
        return cls(Arch(hyper["arch"]), hyper["d_in"], hyper["d_hidden"], weights,
                   hyper["n_layers"], hyper["n_heads"], hyper["d_ff"],
                   hyper["target_mean"], hyper["target_std"])


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(arch, d_in: int, d_hidden: int = 128, seed: int = 0, *, n_layers: int = 2,
                n_heads: int = 4, d_ff: int | None = None, init_lambda: float = 0.1) -> ModelParams:
    """Glorot-uniform weights, zero biases, spatial decay rate ``init_lambda``."""
    arch = Arch(arch)
    if d_in < 1 or d_hidden < 1:
        raise ConfigError("d_in and d_hidden must be >= 1")
    rng = np.random.default_rng(seed)
    w = {}
    if arch is Arch.ATTMIL:
        w["V"] = _glorot(rng, (d_hidden, d_in), d_in, d_hidden)
        w["U"] = _glorot(rng, (d_hidden, d_in), d_in, d_hidden)
        w["w"] = _glorot(rng, (d_hidden,), d_hidden, 1)
        w["W_r"] = _glorot(rng, (d_hidden,), d_hidden, 1)
        w["b_r"] = np.zeros(())
        return ModelParams(arch, d_in, d_hidden, w)

    if n_heads < 1 or d_hidden % n_heads:
        raise ConfigError(f"d_hidden={d_hidden} must be divisible by n_heads={n_heads}")
    d_ff = d_ff or 2 * d_hidden
    w["W_in"] = _glorot(rng, (d_hidden, d_in), d_in, d_hidden)
    w["b_in"] = np.zeros(d_hidden)
    for l in range(n_layers):
        for name in ("Wq", "Wk", "Wv", "Wo"):
            w[f"{name}{l}"] = _glorot(rng, (d_hidden, d_hidden), d_hidden, d_hidden)
        w[f"bo{l}"] = np.zeros(d_hidden)
        w[f"W1{l}"] = _glorot(rng, (d_ff, d_hidden), d_hidden, d_ff)
        w[f"b1{l}"] = np.zeros(d_ff)
        w[f"W2{l}"] = _glorot(rng, (d_hidden, d_ff), d_ff, d_hidden)
        w[f"b2{l}"] = np.zeros(d_hidden)
    w["lam"] = np.array(float(init_lambda))
    w["P"] = _glorot(rng, (d_hidden, d_hidden), d_hidden, d_hidden)
    w["p"] = _glorot(rng, (d_hidden,), d_hidden, 1)
    w["W_r"] = _glorot(rng, (d_hidden,), d_hidden, 1)
    w["b_r"] = np.zeros(())
    return ModelParams(arch, d_in, d_hidden, w, n_layers, n_heads, d_ff)
