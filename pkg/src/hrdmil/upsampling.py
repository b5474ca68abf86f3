"""Distribution-based upsampling of a continuous target.

Targets are histogrammed into equal-width bins. Each bin gets a budget of
extra instances, ``min(round(max * alpha), round((max - count) * beta))``,
and each extra instance is re-sampled from a random patient of that bin.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable, Mapping, Sequence

import numpy as np

from ._seeding import derive_seed
from .datamodel import Cohort, Instance
from .errors import ConfigError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class UpsampleParams:
    n_bins: int = 7
    alpha: float = 0.65
    beta: float = 0.25

    def __post_init__(self):
        if self.n_bins < 1:
            raise ConfigError(f"n_bins must be >= 1, got {self.n_bins}")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ConfigError(f"{name} must lie in (0, 1], got {v}")


@dataclass
class BinLayout:
    edges: np.ndarray
    bin_counts: np.ndarray
    patient_bins: list[list[str]]

    @property
    def n_bins(self) -> int:
        return len(self.bin_counts)

    def bin_of(self, values) -> np.ndarray:
        return bin_index(self.edges, values)


@dataclass
class UpsampleResult:
    instances: list[Instance]
    budgets: np.ndarray
    added_per_bin: np.ndarray
    skipped_bins: list[int] = field(default_factory=list)
    skipped_budget: int = 0


def bin_index(edges, values) -> np.ndarray:
    """Bin membership: interior edges belong to the right bin, the last edge to the last bin."""
    edges = np.asarray(edges, dtype=np.float64)
    values = np.atleast_1d(np.asarray(values, dtype=np.float64))
    n_bins = len(edges) - 1
    if np.any(values < edges[0]) or np.any(values > edges[-1]):
        raise ValueError("values fall outside the bin layout")
    idx = np.searchsorted(edges, values, side="right") - 1
    return np.clip(idx, 0, n_bins - 1)


def _as_targets(source) -> list[tuple[str, float]]:
    if isinstance(source, Cohort):
        return [(p.patient_id, p.hrd_score) for p in source.patients]
    if isinstance(source, Mapping):
        return [(str(k), float(v)) for k, v in source.items()]
    return [(str(k), float(v)) for k, v in source]


def bin_targets(source, n_bins: int = 7) -> BinLayout:
    """Equal-width histogram of patient targets over their observed range.

    ``source`` is a Cohort, a ``{patient_id: target}`` mapping or a sequence of
    pairs. Identical targets collapse to a single bin.
    """
    pairs = _as_targets(source)
    if not pairs:
        raise ValueError("cannot bin an empty target set")
    y = np.array([t for _, t in pairs])
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    lo, hi = float(y.min()), float(y.max())
    if lo == hi:
        edges = np.array([lo, hi])
    else:
        edges = np.linspace(lo, hi, n_bins + 1)
    idx = bin_index(edges, y)
    nb = len(edges) - 1
    counts = np.bincount(idx, minlength=nb)
    members = [[] for _ in range(nb)]
    for (pid, _), b in zip(pairs, idx):
        members[b].append(pid)
    return BinLayout(edges, counts, members)


def _round_half_up(x: Decimal) -> int:
    return int(x.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def compute_budgets(bin_counts: Sequence[int], params: UpsampleParams) -> np.ndarray:
    counts = [int(c) for c in bin_counts]
    max_val = max(counts)
    alpha, beta = Decimal(repr(params.alpha)), Decimal(repr(params.beta))
    cap = _round_half_up(max_val * alpha)
    return np.array([min(cap, _round_half_up((max_val - c) * beta)) for c in counts], dtype=np.int64)


def upsample(training_instances: Sequence[Instance], layout: BinLayout, budgets,
             sampler: Callable[[str, int], Instance], seed: int) -> UpsampleResult:
    """Append ``budgets[i]`` freshly sampled instances per bin.

    ``sampler(patient_id, seed)`` must build one instance from that patient's
    own bag. Patients are drawn uniformly, with replacement, from the bin.
    The input list is not modified.
    """
    budgets = np.asarray(budgets, dtype=np.int64)
    if len(budgets) != layout.n_bins:
        raise ValueError(f"{len(budgets)} budgets for {layout.n_bins} bins")
    out = list(training_instances)
    added = np.zeros(layout.n_bins, dtype=np.int64)
    skipped, skipped_budget = [], 0
    for b, budget in enumerate(budgets):
        if budget <= 0:
            continue
        patients = layout.patient_bins[b]
        if not patients:
            skipped.append(b)
            skipped_budget += int(budget)
            continue
        for draw in range(int(budget)):
            rng = np.random.default_rng(derive_seed(seed, "upsample-pick", b, draw))
            pid = patients[int(rng.integers(len(patients)))]
            out.append(sampler(pid, derive_seed(seed, "upsample-draw", b, draw)))
            added[b] += 1
    if skipped:
        log.warning("upsampling skipped bins %s with positive budget but no patients", skipped)
    return UpsampleResult(out, budgets, added, skipped, skipped_budget)
