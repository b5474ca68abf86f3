"""Domain types, cohort manifests and the binary feature-file format.

Binary layout (all little-endian)::

    magic  "MILF"       4 bytes
    version u16 = 1
    flags   u16         bit0 set when coordinates follow the features
    n_patches u32
    dim     u32
    features f32[n_patches * dim]   row-major
    coords   i32[n_patches * 2]     row-major, only when flags & 1
"""
from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    DimMismatchError,
    DuplicatePatientError,
    InvalidMatrixError,
    ManifestError,
    MissingFileError,
    NonFiniteTargetError,
    NonNumericFieldError,
    RaggedRowError,
    TruncatedFileError,
    UnknownPatientError,
    UnsupportedVersionError,
)

MAGIC = b"MILF"
FORMAT_VERSION = 1
FLAG_COORDS = 0x1
_HEADER = struct.Struct("<4sHHII")
HEADER_SIZE = _HEADER.size  # 16

_F32 = np.dtype("<f4")
_I32 = np.dtype("<i4")


@dataclass(eq=False)
class PatchMatrix:
    """Feature matrix of one slide (or one patient after merging).

    ``features`` is ``(n_patches, dim)`` float32, ``coords`` an optional
    ``(n_patches, 2)`` int32 array of tile-grid positions.
    """

    features: np.ndarray
    coords: Optional[np.ndarray] = None

    def __post_init__(self):
        feats = np.asarray(self.features)
        if feats.ndim != 2:
            raise InvalidMatrixError(f"features must be 2-D, got shape {feats.shape}")
        if feats.shape[0] < 1 or feats.shape[1] < 1:
            raise InvalidMatrixError(f"empty feature matrix {feats.shape}")
        feats = np.ascontiguousarray(feats, dtype=np.float32)
        if not np.all(np.isfinite(feats)):
            raise InvalidMatrixError("features contain non-finite values")
        self.features = feats
        if self.coords is not None:
            coords = np.asarray(self.coords)
            if coords.shape != (feats.shape[0], 2):
                raise InvalidMatrixError(
                    f"coords shape {coords.shape} does not match {feats.shape[0]} patches"
                )
            if coords.dtype.kind not in "iu":
                if not np.all(coords == np.round(coords)):
                    raise InvalidMatrixError("coords must be integers")
            self.coords = np.ascontiguousarray(coords, dtype=np.int32)

    @property
    def n_patches(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other):
        if not isinstance(other, PatchMatrix):
            return NotImplemented
        if self.features.shape != other.features.shape:
            return False
        if self.features.tobytes() != other.features.tobytes():
            return False
        if (self.coords is None) != (other.coords is None):
            return False
        return self.coords is None or np.array_equal(self.coords, other.coords)


@dataclass
class PatientEntry:
    patient_id: str
    hrd_score: float
    files: list[Path]


@dataclass
class Cohort:
    name: str
    patients: list[PatientEntry]
    dim: int
    root: Optional[Path] = None
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._index = {p.patient_id: p for p in self.patients}

    @property
    def patient_ids(self) -> list[str]:
        return [p.patient_id for p in self.patients]

    def targets(self) -> dict[str, float]:
        return {p.patient_id: p.hrd_score for p in self.patients}

    def entry(self, patient_id: str) -> PatientEntry:
        try:
            return self._index[patient_id]
        except KeyError:
            raise UnknownPatientError(f"unknown patient id {patient_id!r}") from None

    def subset(self, patient_ids: Sequence[str]) -> "Cohort":
        return Cohort(self.name, [self.entry(p) for p in patient_ids], self.dim, self.root)


@dataclass(eq=False)
class PatientBag:
    patient_id: str
    matrix: PatchMatrix
    hrd_score: float

    @property
    def size(self) -> int:
        return self.matrix.n_patches


@dataclass(eq=False)
class Instance:
    """A sampled subset of one patient's bag; the unit fed to an aggregator.

    ``indices`` are the source row indices into the patient's bag.
    """

    patient_id: str
    features: np.ndarray
    target: float
    indices: np.ndarray
    coords: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.features.shape[0]


# ---------------------------------------------------------------------------
# feature files


def write_feature_file(path, matrix: PatchMatrix) -> None:
    flags = FLAG_COORDS if matrix.coords is not None else 0
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, flags, matrix.n_patches, matrix.dim)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(matrix.features.astype(_F32, copy=False).tobytes(order="C"))
        if matrix.coords is not None:
            fh.write(matrix.coords.astype(_I32, copy=False).tobytes(order="C"))


def _parse_header(buf: bytes, path) -> tuple[int, int, int]:
    if len(buf) < HEADER_SIZE:
        if len(buf) >= 4 and buf[:4] != MAGIC:
            raise BadMagicError(f"{path}: bad magic {buf[:4]!r}")
        raise TruncatedFileError(f"{path}: header truncated ({len(buf)} bytes)")
    magic, version, flags, n, dim = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported version {version}")
    return flags, n, dim


def read_feature_header(path) -> tuple[int, int, bool]:
    """Return ``(n_patches, dim, has_coords)`` without loading the payload."""
    with open(path, "rb") as fh:
        buf = fh.read(HEADER_SIZE)
    flags, n, dim = _parse_header(buf, path)
    return n, dim, bool(flags & FLAG_COORDS)


def read_feature_file(path) -> PatchMatrix:
    buf = Path(path).read_bytes()
    flags, n, dim = _parse_header(buf, path)
    n_feat = n * dim * 4
    n_coord = n * 2 * 4 if flags & FLAG_COORDS else 0
    expected = HEADER_SIZE + n_feat + n_coord
    if len(buf) < expected:
        raise TruncatedFileError(f"{path}: expected {expected} bytes, found {len(buf)}")
    feats = np.frombuffer(buf, dtype=_F32, count=n * dim, offset=HEADER_SIZE).reshape(n, dim)
    coords = None
    if flags & FLAG_COORDS:
        coords = np.frombuffer(buf, dtype=_I32, count=n * 2, offset=HEADER_SIZE + n_feat)
        coords = coords.reshape(n, 2)
    return PatchMatrix(feats.astype(np.float32), None if coords is None else coords.astype(np.int32))


def import_csv(path, dim: int) -> PatchMatrix:
    """Read a headerless CSV of ``dim`` feature columns plus optional x,y columns."""
    rows, coords = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) not in (dim, dim + 2):
                raise RaggedRowError(f"{path}:{lineno}: expected {dim} or {dim + 2} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row[:dim]]
            except ValueError as exc:
                raise NonNumericFieldError(f"{path}:{lineno}: {exc}") from None
            rows.append(vals)
            if len(row) == dim + 2:
                try:
                    coords.append([int(c) for c in row[dim:]])
                except ValueError as exc:
                    raise NonNumericFieldError(f"{path}:{lineno}: {exc}") from None
    if coords and len(coords) != len(rows):
        raise RaggedRowError(f"{path}: coordinate columns present on only some rows")
    feats = np.asarray(rows, dtype=np.float32)
    if feats.size == 0:
        feats = feats.reshape(0, dim)
    return PatchMatrix(feats, np.asarray(coords, dtype=np.int32) if coords else None)


# ---------------------------------------------------------------------------
# manifests


def load_manifest(path) -> Cohort:
    """Parse and validate a cohort manifest; file paths resolve against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise MissingFileError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("patients"), list):
        raise ManifestError(f"{path}: expected an object with a 'patients' list")
    root = path.parent
    seen = set()
    patients = []
    dim = None
    for rec in doc["patients"]:
        try:
            pid = str(rec["id"])
            score = rec["hrd_score"]
            files = list(rec["files"])
        except (KeyError, TypeError):
            raise ManifestError(f"{path}: patient record needs id, hrd_score, files: {rec!r}") from None
        if pid in seen:
            raise DuplicatePatientError(f"duplicate patient id {pid!r}")
        seen.add(pid)
        if isinstance(score, bool) or not isinstance(score, (int, float)) or not math.isfinite(score):
            raise NonFiniteTargetError(f"patient {pid!r}: hrd_score {score!r} is not a finite number")
        if not files:
            raise ManifestError(f"patient {pid!r} lists no feature files")
        resolved = []
        for f in files:
            fp = root / f
            if not fp.is_file():
                raise MissingFileError(f"patient {pid!r}: file not found: {fp}")
            _, file_dim, _ = read_feature_header(fp)
            if dim is None:
                dim = file_dim
            elif file_dim != dim:
                raise DimMismatchError(f"patient {pid!r}: {fp} has dim {file_dim}, cohort dim is {dim}")
            resolved.append(fp)
        patients.append(PatientEntry(pid, float(score), resolved))
    if not patients:
        raise ManifestError(f"{path}: manifest lists no patients")
    return Cohort(str(doc.get("cohort", path.stem)), patients, dim, root)


def write_manifest(path, cohort: Cohort) -> None:
    path = Path(path)
    root = path.parent
    doc = {
        "cohort": cohort.name,
        "patients": [
            {
                "id": p.patient_id,
                "hrd_score": p.hrd_score,
                "files": [Path(f).resolve().relative_to(root.resolve()).as_posix() for f in p.files],
            }
            for p in cohort.patients
        ],
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")


def build_patient_bag(cohort: Cohort, patient_id: str) -> PatientBag:
    """Concatenate all of a patient's feature files, in manifest order."""
    entry = cohort.entry(patient_id)
    mats = [read_feature_file(f) for f in entry.files]
    feats = np.concatenate([m.features for m in mats], axis=0)
    coords = None
    if all(m.coords is not None for m in mats):
        coords = np.concatenate([m.coords for m in mats], axis=0)
    return PatientBag(patient_id, PatchMatrix(feats, coords), entry.hrd_score)
