"""Regression training (MSE + Adam), patient-level cross-validation, gradient checks."""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import clustering
from ._seeding import derive_seed
from .aggregators import Arch, ModelParams, Prediction, backward, forward, init_params
from .datamodel import Cohort, Instance, PatientBag, build_patient_bag
from .errors import ConfigError, TrainingDivergedError
from .sampling import SamplingStrategy, Variant, draw_instance
from .upsampling import UpsampleParams, bin_targets, compute_budgets, upsample

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class ConstantTargetWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TrainConfig:
    arch: Arch = Arch.ATTMIL
    strategy: SamplingStrategy = field(default_factory=SamplingStrategy)
    epochs: int = 30
    learning_rate: float = 1e-4
    batch_size: int = 16
    seed: int = 0
    target_standardize: bool = True
    resample_per_epoch: bool = False
    upsample: Optional[UpsampleParams] = None
    k: int = clustering.DEFAULT_K
    d_hidden: int = 128
    n_layers: int = 2
    n_heads: int = 4

    def __post_init__(self):
        object.__setattr__(self, "arch", Arch(self.arch))
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.arch is Arch.TRANSFORMER and self.strategy.variant is Variant.ALL:
            raise ConfigError("the all-features configuration is only available for attmil")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "arch":
                v = v.value
            elif f.name == "strategy":
                out["strategy"] = v.variant.value
                out["bagsize"] = v.bagsize
                continue
            elif f.name == "upsample":
                v = None if v is None else asdict(v)
            out[f.name] = v
        return out


# ---------------------------------------------------------------------------
# folds and target scaling


@dataclass
class FoldSplit:
    n_folds: int
    fold_assignment: dict[str, int]

    def test_ids(self, fold: int) -> list[str]:
        return [p for p, f in self.fold_assignment.items() if f == fold]

    def train_ids(self, fold: int) -> list[str]:
        return [p for p, f in self.fold_assignment.items() if f != fold]


def make_folds(patient_ids, n_folds: int, seed: int) -> FoldSplit:
    """Shuffle patients with ``seed`` and deal them round-robin into folds."""
    if isinstance(patient_ids, Cohort):
        patient_ids = patient_ids.patient_ids
    ids = list(patient_ids)
    if n_folds < 1 or n_folds > len(ids):
        raise ConfigError(f"cannot split {len(ids)} patients into {n_folds} folds")
    order = np.random.default_rng(derive_seed(seed, "folds")).permutation(len(ids))
    assignment = {ids[j]: pos % n_folds for pos, j in enumerate(order)}
    return FoldSplit(n_folds, {p: assignment[p] for p in ids})


def standardize_targets(targets) -> tuple[np.ndarray, float, float]:
    y = np.asarray(targets, dtype=np.float64)
    mu = float(y.mean())
    sigma = float(y.std())
    if sigma == 0.0:
        warnings.warn("targets are constant; standardisation skipped", ConstantTargetWarning, stacklevel=2)
        return y - mu, mu, 1.0
    return (y - mu) / sigma, mu, sigma


def invert(y_hat, mu: float, sigma: float):
    return np.asarray(y_hat) * sigma + mu if np.ndim(y_hat) else float(y_hat) * sigma + mu


# ---------------------------------------------------------------------------
# training


InstanceSource = Union[Sequence[Instance], Callable[[int], Sequence[Instance]]]


def _adam_step(weights, grads, m, v, t, lr):
    b1t = 1.0 - ADAM_BETA1 ** t
    b2t = 1.0 - ADAM_BETA2 ** t
    for name, g in grads.items():
        m[name] = ADAM_BETA1 * m[name] + (1 - ADAM_BETA1) * g
        v[name] = ADAM_BETA2 * v[name] + (1 - ADAM_BETA2) * g * g
        weights[name] -= lr * (m[name] / b1t) / (np.sqrt(v[name] / b2t) + ADAM_EPS)
    if "lam" in weights and weights["lam"] < 0:
        weights["lam"] = np.array(0.0)


def train(config: TrainConfig, instances: InstanceSource, target_stats: Optional[tuple[float, float]] = None
          ) -> tuple[ModelParams, list[float]]:
    """Fit an aggregator by minibatch Adam on mean squared error.

    ``instances`` is either a fixed list or a callable ``epoch -> list`` (used
    when instances are re-drawn every epoch). Targets are standardised with
    ``target_stats`` = (mean, std) when given, otherwise with statistics of the
    epoch-0 instance targets.
    """
    source = instances if callable(instances) else (lambda epoch, _fixed=list(instances): _fixed)
    first = list(source(0))
    if not first:
        raise ConfigError("training needs at least one instance")
    d_in = first[0].features.shape[1]
    mu, sigma = 0.0, 1.0
    if config.target_standardize:
        if target_stats is None:
            _, mu, sigma = standardize_targets([i.target for i in first])
        else:
            mu, sigma = target_stats
            if sigma == 0:
                warnings.warn("targets are constant; standardisation skipped", ConstantTargetWarning)
                sigma = 1.0

    params = init_params(config.arch, d_in, config.d_hidden, derive_seed(config.seed, "init"),
                         n_layers=config.n_layers, n_heads=config.n_heads)
    params.target_mean, params.target_std = mu, sigma
    weights = params.weights
    m = {k: np.zeros_like(w) for k, w in weights.items()}
    v = {k: np.zeros_like(w) for k, w in weights.items()}
    step = 0
    history = []
    for epoch in range(config.epochs):
        batch_pool = first if epoch == 0 else list(source(epoch))
        order = np.random.default_rng(derive_seed(config.seed, "shuffle", epoch)).permutation(len(batch_pool))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [batch_pool[j] for j in order[start:start + config.batch_size]]
            acc = {k: np.zeros_like(w) for k, w in weights.items()}
            for inst in batch:
                pred, cache = forward(params, inst)
                resid = pred.y_hat - (inst.target - mu) / sigma
                total += resid * resid
                for k, g in backward(params, cache, 2.0 * resid / len(batch)).items():
                    acc[k] += g
            step += 1
            _adam_step(weights, acc, m, v, step, config.learning_rate)
        loss = total / len(batch_pool)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"training loss became {loss} at epoch {epoch}")
        history.append(float(loss))
    return params, history


def predict(params: ModelParams, instance: Instance) -> Prediction:
    """Forward pass mapped back onto the original target scale."""
    pred, _ = forward(params, instance)
    pred.y_hat = invert(pred.y_hat, params.target_mean, params.target_std)
    return pred


def grad_check(params: ModelParams, instance, eps: float = 1e-5, floor: float = 1e-6) -> float:
    """Worst element-wise relative error between analytic and central-difference gradients.

    Denominators are ``max(|analytic|, |numeric|, floor)`` so gradients that
    vanish below finite-difference resolution are compared absolutely.
    """
    if not eps > 0:
        raise ValueError("eps must be > 0")
    n_params = sum(w.size for w in params.weights.values())
    if n_params > 20000:
        raise ValueError(f"grad_check is meant for small models ({n_params} parameters)")
    for name in params.weights:
        params.weights[name] = np.asarray(params.weights[name], dtype=np.float64)
    _, cache = forward(params, instance)
    analytic = backward(params, cache, 1.0)
    worst = 0.0
    for name, w in params.weights.items():
        flat = w.reshape(-1)
        num = np.empty(flat.size)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            yp = forward(params, instance)[0].y_hat
            flat[i] = old - eps
            ym = forward(params, instance)[0].y_hat
            flat[i] = old
            num[i] = (yp - ym) / (2 * eps)
        a = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        err = np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), floor)
        worst = max(worst, float(err.max()))
    return worst


# ---------------------------------------------------------------------------
# cross-validation


class BagStore:
    """Lazily loaded patient bags and per-patient cluster assignments."""

    def __init__(self, cohort: Cohort, k: int = clustering.DEFAULT_K, seed: int = 0):
        self.cohort = cohort
        self.k = k
        self.seed = seed
        self._bags: dict[str, PatientBag] = {}
        self._assign: dict[str, clustering.ClusterAssignment] = {}

    def bag(self, pid: str) -> PatientBag:
        if pid not in self._bags:
            self._bags[pid] = build_patient_bag(self.cohort, pid)
        return self._bags[pid]

    def assignment(self, pid: str) -> clustering.ClusterAssignment:
        if pid not in self._assign:
            _, a = clustering.fit_patient(self.bag(pid).matrix, self.k, seed=derive_seed(self.seed, "kmeans", pid))
            self._assign[pid] = a
        return self._assign[pid]

    def prefetch(self, patient_ids, with_clusters: bool, threads: int = 1) -> None:
        def work(pid):
            bag = build_patient_bag(self.cohort, pid)
            a = None
            if with_clusters:
                _, a = clustering.fit_patient(bag.matrix, self.k, seed=derive_seed(self.seed, "kmeans", pid))
            return pid, bag, a

        todo = [p for p in patient_ids if p not in self._bags or (with_clusters and p not in self._assign)]
        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            for pid, bag, a in pool.map(work, todo):
                self._bags[pid] = bag
                if a is not None:
                    self._assign[pid] = a

    def instance(self, pid: str, strategy: SamplingStrategy, seed: int) -> Instance:
        a = self.assignment(pid) if strategy.needs_clusters else None
        return draw_instance(self.bag(pid), strategy, seed, a)


@dataclass
class PredictionRecord:
    patient_id: str
    y_true: float
    y_hat: float


@dataclass
class FoldResult:
    fold: int
    train_ids: list[str]
    test_ids: list[str]
    params: ModelParams
    history: list[float]
    predictions: list[PredictionRecord]
    n_train_instances: int
    upsampling: Optional[dict] = None


@dataclass
class CVResult:
    config: TrainConfig
    folds: list[FoldResult]

    def predictions(self) -> list[tuple[int, PredictionRecord]]:
        return [(f.fold, p) for f in self.folds for p in f.predictions]


def _fold_instances(store: BagStore, config: TrainConfig, train_ids, targets, fold_seed):
    strategy = config.strategy

    def base(epoch):
        tag = epoch if config.resample_per_epoch else 0
        return [store.instance(pid, strategy, derive_seed(config.seed, "train", tag, pid)) for pid in train_ids]

    summary = None
    if config.upsample is None:
        return (base if config.resample_per_epoch else base(0)), summary

    layout = bin_targets({pid: targets[pid] for pid in train_ids}, config.upsample.n_bins)
    budgets = compute_budgets(layout.bin_counts, config.upsample)

    def augmented(epoch):
        tag = epoch if config.resample_per_epoch else 0
        sampler = lambda pid, s: store.instance(pid, strategy, s)  # noqa: E731
        return upsample(base(epoch), layout, budgets, sampler, derive_seed(fold_seed, "upsample", tag))

    first = augmented(0)
    added = first.added_per_bin
    counts_after = layout.bin_counts + added
    summary = {
        "edges": [float(e) for e in layout.edges],
        "bin_counts": [int(c) for c in layout.bin_counts],
        "budgets": [int(b) for b in budgets],
        "added_per_bin": [int(a) for a in added],
        "upsampled_counts": [int(c) for c in counts_after],
        "skipped_bins": first.skipped_bins,
        "budget_rounding": "half-up",
        "binning": "equal-width",
    }
    if config.resample_per_epoch:
        return (lambda epoch: augmented(epoch).instances), summary
    return first.instances, summary


def _run_fold(store: BagStore, config: TrainConfig, split: FoldSplit, fold: int) -> FoldResult:
    targets = store.cohort.targets()
    train_ids, test_ids = split.train_ids(fold), split.test_ids(fold)
    fold_seed = derive_seed(config.seed, "fold", fold)
    instances, summary = _fold_instances(store, config, train_ids, targets, fold_seed)
    train_y = np.array([targets[p] for p in train_ids])
    stats = None
    if config.target_standardize:
        with warnings.catch_warnings(record=True):
            warnings.simplefilter("always")
            _, mu, sigma = standardize_targets(train_y)
        stats = (mu, sigma)
    fold_config = replace(config, seed=fold_seed)
    params, history = train(fold_config, instances, target_stats=stats)
    preds = []
    for pid in test_ids:
        inst = store.instance(pid, config.strategy, derive_seed(config.seed, "eval", pid))
        preds.append(PredictionRecord(pid, targets[pid], predict(params, inst).y_hat))
    n_train = len(instances(0)) if callable(instances) else len(instances)
    return FoldResult(fold, train_ids, test_ids, params, history, preds, n_train, summary)


def run_cv(cohort: Cohort, config: TrainConfig, n_folds: int = 5, threads: int = 1,
           store: Optional[BagStore] = None) -> CVResult:
    """Patient-level k-fold CV; every patient is predicted exactly once.

    Binning, budgets and target statistics come from each fold's training
    patients only. Folds may run on ``threads`` workers; the result does not
    depend on the schedule.
    """
    split = make_folds(cohort.patient_ids, n_folds, config.seed)
    store = store or BagStore(cohort, config.k, config.seed)
    store.prefetch(cohort.patient_ids, config.strategy.needs_clusters, threads)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            folds = list(pool.map(lambda f: _run_fold(store, config, split, f), range(n_folds)))
    else:
        folds = [_run_fold(store, config, split, f) for f in range(n_folds)]
    return CVResult(config, folds)
