"""Synthetic cohorts with a planted, imbalanced target, plus brute-force oracles.

Generative model, per patient with target ``y`` on [0, 100]:

* ``y`` follows the ``skew`` law: ``uniform`` is U(0, 100), ``right-skewed`` is
  100 * Beta(2, 5) and ``left-skewed`` is 100 * Beta(5, 2).
* Every patch is N(0, noise_sigma^2) noise in all ``dim`` coordinates.
* A ``signal_fraction`` share of patches ("tumor-like", at least one) adds
  ``signal_gain * y / 100`` to each of the first ``signal_dims`` coordinates
  and ``marker_shift`` to coordinate ``signal_dims`` (when it exists), which
  makes them separable from background patches regardless of ``y``.
* Patches sit on a square tile grid; tumor-like patches occupy the cells
  nearest a random centre, so they form one spatial blob.

With ``noise_sigma = 0`` the mean of a tumor-like patch over the signal
coordinates is exactly ``signal_gain * y / 100``.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ._seeding import derive_seed
from .datamodel import Cohort, PatchMatrix, PatientEntry, write_feature_file, write_manifest
from .errors import ConfigError, SingleClassError

SKEW_LAWS = {
    "uniform": None,
    "right-skewed": (2.0, 5.0),
    "left-skewed": (5.0, 2.0),
}
TARGET_SCALE = 100.0


@dataclass(frozen=True)
class SynthSpec:
    n_patients: int = 200
    patches_min: int = 100
    patches_max: int = 300
    dim: int = 32
    signal_dims: int = 4
    noise_sigma: float = 1.0
    skew: str = "right-skewed"
    signal_fraction: float = 0.3
    signal_gain: float = 2.0
    marker_shift: float = 2.0
    slides_per_patient: int = 1
    seed: int = 0
    name: str = "synthetic"

    def __post_init__(self):
        if self.n_patients < 1:
            raise ConfigError("n_patients must be >= 1")
        if not 1 <= self.patches_min <= self.patches_max:
            raise ConfigError("need 1 <= patches_min <= patches_max")
        if not 1 <= self.signal_dims <= self.dim:
            raise ConfigError("need 1 <= signal_dims <= dim")
        if not 0 < self.signal_fraction <= 1:
            raise ConfigError("signal_fraction must lie in (0, 1]")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.skew not in SKEW_LAWS:
            raise ConfigError(f"skew must be one of {sorted(SKEW_LAWS)}")
        if self.slides_per_patient < 1 or self.slides_per_patient > self.patches_min:
            raise ConfigError("slides_per_patient must be between 1 and patches_min")

    @classmethod
    def from_json(cls, path) -> "SynthSpec":
        return cls(**json.loads(Path(path).read_text()))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def target_cdf(spec: SynthSpec, y):
    """CDF of the generator's target law (for checking realised cohorts)."""
    from scipy.stats import beta

    y = np.asarray(y, dtype=np.float64) / TARGET_SCALE
    law = SKEW_LAWS[spec.skew]
    if law is None:
        return np.clip(y, 0.0, 1.0)
    return beta.cdf(y, *law)


def draw_target(spec: SynthSpec, rng: np.random.Generator) -> float:
    law = SKEW_LAWS[spec.skew]
    u = rng.uniform() if law is None else rng.beta(*law)
    return round(float(TARGET_SCALE * u), 6)


def _grid_cells(n: int, rng) -> np.ndarray:
    """``n`` cells of a square grid ordered by distance to a random centre."""
    side = math.ceil(math.sqrt(n))
    cells = np.array(list(itertools.product(range(side), range(side))))[:n]
    centre = cells[rng.integers(n)]
    dist = np.linalg.norm(cells - centre, axis=1)
    return cells[np.lexsort((cells[:, 1], cells[:, 0], dist))]


def synth_patient(spec: SynthSpec, patient_index: int) -> tuple[float, PatchMatrix]:
    rng = np.random.default_rng(derive_seed(spec.seed, "synth", patient_index))
    y = draw_target(spec, rng)
    n = int(rng.integers(spec.patches_min, spec.patches_max + 1))
    n_signal = max(1, int(round(spec.signal_fraction * n)))
    feats = rng.normal(0.0, 1.0, size=(n, spec.dim)) * spec.noise_sigma
    feats[:n_signal, : spec.signal_dims] += spec.signal_gain * y / TARGET_SCALE
    if spec.signal_dims < spec.dim:
        feats[:n_signal, spec.signal_dims] += spec.marker_shift
    cells = _grid_cells(n, rng)  # first n_signal cells form the tumor blob
    perm = rng.permutation(n)
    return y, PatchMatrix(feats[perm].astype(np.float32), cells[perm].astype(np.int32))


def generate_cohort(spec: SynthSpec, out_dir) -> Cohort:
    """Write feature files, ``manifest.json`` and ``synth_spec.json`` under ``out_dir``."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    width = len(str(spec.n_patients - 1))
    patients = []
    for i in range(spec.n_patients):
        pid = f"P{i:0{width}d}"
        y, mat = synth_patient(spec, i)
        bounds = np.linspace(0, mat.n_patches, spec.slides_per_patient + 1).round().astype(int)
        files = []
        for s in range(spec.slides_per_patient):
            part = slice(bounds[s], bounds[s + 1])
            coords = mat.coords[part].copy()
            coords[:, 0] += s * 10_000  # slides never overlap spatially
            fp = out / "features" / f"{pid}_s{s}.milf"
            write_feature_file(fp, PatchMatrix(mat.features[part], coords))
            files.append(fp)
        patients.append(PatientEntry(pid, y, files))
    cohort = Cohort(spec.name, patients, spec.dim, out)
    write_manifest(out / "manifest.json", cohort)
    (out / "synth_spec.json").write_text(spec.to_json() + "\n")
    return cohort


# ---------------------------------------------------------------------------
# oracles


def oracle_auroc(scores, labels) -> float:
    """Explicit enumeration over all (positive, negative) pairs."""
    scores = [float(s) for s in scores]
    labels = [bool(l) for l in labels]
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    if not pos or not neg:
        raise SingleClassError("oracle AUROC needs both classes")
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def oracle_mean_predictor_rmse(targets) -> float:
    t = [float(v) for v in targets]
    mean = sum(t) / len(t)
    return math.sqrt(sum((v - mean) ** 2 for v in t) / len(t))
