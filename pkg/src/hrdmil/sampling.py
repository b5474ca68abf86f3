"""Instance construction: cluster-weighted, clustered-random, random and all-features."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .clustering import ClusterAssignment
from .datamodel import Instance, PatientBag
from .errors import ConfigError, DimMismatchError, TooFewSlotsError, UseAllSignal


class Variant(str, enum.Enum):
    CLUSTER_WEIGHTED = "cluster-weighted"
    CLUSTERED_RANDOM = "clustered-random"
    RANDOM = "random"
    ALL = "all"


@dataclass(frozen=True)
class SamplingStrategy:
    variant: Variant = Variant.CLUSTER_WEIGHTED
    bagsize: Optional[int] = 100

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.variant is not Variant.ALL and (self.bagsize is None or self.bagsize < 1):
            raise ConfigError(f"bagsize must be >= 1 for {self.variant.value}, got {self.bagsize}")

    @property
    def needs_clusters(self) -> bool:
        return self.variant in (Variant.CLUSTER_WEIGHTED, Variant.CLUSTERED_RANDOM)


def allocate_proportional(sizes, bagsize: int) -> np.ndarray:
    """Split ``bagsize`` draws across clusters proportionally to cluster size.

    Floors the exact share ``S * C_i / B``, lifts empty allocations of
    nonempty clusters to one, then settles the remainder: missing draws go to
    the largest fractional parts, surplus draws come off the largest
    allocations. Ties resolve to the lower cluster index.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    total = int(sizes.sum())
    if bagsize > total:
        raise UseAllSignal(f"bagsize {bagsize} exceeds bag size {total}")
    live = sizes > 0
    n_live = int(live.sum())
    if bagsize < n_live:
        raise TooFewSlotsError(f"bagsize {bagsize} < {n_live} nonempty clusters")
    # integer arithmetic: remainder[i] is (exact share - alloc) scaled by total, so ties are exact
    scaled = bagsize * sizes
    alloc = scaled // total
    alloc[live & (alloc == 0)] = 1
    remainder = scaled - alloc * total
    short = bagsize - int(alloc.sum())
    while short > 0:
        order = sorted(range(len(sizes)), key=lambda i: (-remainder[i], i))
        for i in order:
            if short == 0:
                break
            if alloc[i] < sizes[i]:
                alloc[i] += 1
                remainder[i] -= total
                short -= 1
    while short < 0:
        candidates = np.flatnonzero(alloc > 1)
        i = int(candidates[np.argmax(alloc[candidates])])
        alloc[i] -= 1
        short += 1
    return alloc


def _check(bag: PatientBag, assignment: Optional[ClusterAssignment]):
    if assignment is not None and len(assignment.labels) != bag.size:
        raise DimMismatchError(
            f"assignment covers {len(assignment.labels)} patches, bag {bag.patient_id} has {bag.size}"
        )


def _make_instance(bag: PatientBag, indices) -> Instance:
    idx = np.sort(np.asarray(indices, dtype=np.int64))
    coords = bag.matrix.coords
    return Instance(
        patient_id=bag.patient_id,
        features=bag.matrix.features[idx],
        target=bag.hrd_score,
        indices=idx,
        coords=None if coords is None else coords[idx],
    )


def _draw_per_cluster(assignment: ClusterAssignment, counts, rng) -> list[np.ndarray]:
    picked = []
    for c, count in enumerate(counts):
        if count:
            members = assignment.members(c)
            picked.append(rng.choice(members, size=int(count), replace=False))
    return picked


def sample_cluster_weighted(bag: PatientBag, assignment: ClusterAssignment, bagsize: int,
                            seed: int) -> Instance:
    _check(bag, assignment)
    if bagsize >= bag.size:
        return sample_all(bag)
    counts = allocate_proportional(assignment.sizes, bagsize)
    rng = np.random.default_rng(seed)
    return _make_instance(bag, np.concatenate(_draw_per_cluster(assignment, counts, rng)))


def random_allocation(sizes, bagsize: int, rng: np.random.Generator) -> np.ndarray:
    """One per nonempty cluster, then each extra draw to a uniformly chosen cluster with room."""
    sizes = np.asarray(sizes, dtype=np.int64)
    if bagsize > sizes.sum():
        raise UseAllSignal(f"bagsize {bagsize} exceeds bag size {int(sizes.sum())}")
    alloc = (sizes > 0).astype(np.int64)
    if bagsize < alloc.sum():
        raise TooFewSlotsError(f"bagsize {bagsize} < {int(alloc.sum())} nonempty clusters")
    for _ in range(bagsize - int(alloc.sum())):
        open_ = np.flatnonzero(alloc < sizes)
        alloc[open_[rng.integers(len(open_))]] += 1
    return alloc


def sample_clustered_random(bag: PatientBag, assignment: ClusterAssignment, bagsize: int,
                            seed: int) -> Instance:
    _check(bag, assignment)
    if bagsize >= bag.size:
        return sample_all(bag)
    rng = np.random.default_rng(seed)
    counts = random_allocation(assignment.sizes, bagsize, rng)
    return _make_instance(bag, np.concatenate(_draw_per_cluster(assignment, counts, rng)))


def sample_random(bag: PatientBag, bagsize: int, seed: int) -> Instance:
    if bagsize >= bag.size:
        return sample_all(bag)
    rng = np.random.default_rng(seed)
    return _make_instance(bag, rng.choice(bag.size, size=bagsize, replace=False))


def sample_all(bag: PatientBag) -> Instance:
    return _make_instance(bag, np.arange(bag.size))


def draw_instance(bag: PatientBag, strategy: SamplingStrategy, seed: int,
                  assignment: Optional[ClusterAssignment] = None) -> Instance:
    """Dispatch on ``strategy.variant``."""
    v = strategy.variant
    if v is Variant.ALL:
        return sample_all(bag)
    if v is Variant.RANDOM:
        return sample_random(bag, strategy.bagsize, seed)
    if assignment is None:
        raise ConfigError(f"{v.value} sampling needs a cluster assignment")
    if v is Variant.CLUSTER_WEIGHTED:
        return sample_cluster_weighted(bag, assignment, strategy.bagsize, seed)
    return sample_clustered_random(bag, assignment, strategy.bagsize, seed)
