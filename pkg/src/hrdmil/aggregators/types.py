from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..datamodel import Instance


@dataclass
class Prediction:
    """Aggregator output. ``y_hat`` is on the model's (possibly standardised) scale."""

    patient_id: Optional[str]
    y_hat: float
    attention: Optional[np.ndarray] = None


def as_features(instance):
    if isinstance(instance, Instance):
        return np.asarray(instance.features, dtype=np.float64), instance.patient_id
    x = np.asarray(instance, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected an n x d matrix, got shape {x.shape}")
    return x, None


def as_coords(instance, coords=None):
    if coords is not None:
        return np.asarray(coords, dtype=np.float64)
    if isinstance(instance, Instance) and instance.coords is not None:
        return np.asarray(instance.coords, dtype=np.float64)
    return None
