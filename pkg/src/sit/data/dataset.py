"""Manifests, normalization statistics, and example loading.

Normalization is a per-channel z-score computed from TRAIN-split vertex
values only and applied identically to every split; the stats travel inside
checkpoints so prediction normalizes exactly like training did. Right
hemispheres are mirrored into left orientation at load time (an exact vertex
permutation on the canonical icosphere).
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..geometry import PatchTable, extract_patches, mirror_hemisphere, read_ssig
from ..geometry.formats import SurfaceSignal
from .synthetic import MANIFEST_FIELDS

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestRow:
    subject: str
    hemi: str
    path: Path
    scan_age: float
    birth_age: float
    split: str


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray  # [C]
    std: np.ndarray  # [C], epsilon-guarded, never zero

    def apply(self, signal: SurfaceSignal) -> SurfaceSignal:
        if signal.n_channels != self.mean.shape[0]:
            raise DataError(
                f"signal has {signal.n_channels} channels, stats have {self.mean.shape[0]}"
            )
        values = (signal.values - self.mean) / self.std
        return SurfaceSignal(values=values.astype(signal.values.dtype),
                             channel_names=signal.channel_names)

    def to_lists(self) -> dict:
        return {"mean": [float(x) for x in self.mean], "std": [float(x) for x in self.std]}

    @classmethod
    def from_lists(cls, record: dict) -> "NormStats":
        return cls(mean=np.asarray(record["mean"], dtype=np.float64),
                   std=np.asarray(record["std"], dtype=np.float64))


def read_manifest(path) -> list[ManifestRow]:
    """Parse and validate a manifest CSV; file paths resolve relative to it."""
    path = Path(path)
    base = path.parent
    rows: list[ManifestRow] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_FIELDS:
            raise DataError(
                f"manifest header {reader.fieldnames} != expected {list(MANIFEST_FIELDS)}"
            )
        for lineno, record in enumerate(reader, start=2):
            if record["hemi"] not in ("L", "R"):
                raise DataError(f"manifest line {lineno}: hemi must be L or R")
            if record["split"] not in SPLITS:
                raise DataError(f"manifest line {lineno}: unknown split {record['split']!r}")
            try:
                scan_age = float(record["scan_age"])
                birth_age = float(record["birth_age"])
            except (TypeError, ValueError):
                raise DataError(f"manifest line {lineno}: non-numeric age") from None
            file_path = base / record["path"]
            if not file_path.is_file():
                raise DataError(f"manifest line {lineno}: missing file {file_path}")
            rows.append(ManifestRow(
                subject=record["subject"], hemi=record["hemi"], path=file_path,
                scan_age=scan_age, birth_age=birth_age, split=record["split"],
            ))
    if not rows:
        raise DataError(f"manifest {path} has no rows")
    subject_split: dict[str, str] = {}
    for row in rows:
        if subject_split.setdefault(row.subject, row.split) != row.split:
            raise DataError(f"subject {row.subject} appears in more than one split")
    return rows


def compute_norm_stats(rows: list[ManifestRow]) -> NormStats:
    """Per-channel mean/std over train-split vertex values only."""
    train = [row for row in rows if row.split == "train"]
    if not train:
        raise DataError("no train rows to compute normalization statistics from")
    total = None
    total_sq = None
    count = 0
    for row in train:
        values = read_ssig(row.path).values.astype(np.float64)
        if total is None:
            total = values.sum(axis=0)
            total_sq = (values**2).sum(axis=0)
        else:
            total += values.sum(axis=0)
            total_sq += (values**2).sum(axis=0)
        count += values.shape[0]
    mean = total / count
    var = total_sq / count - mean**2
    std = np.sqrt(np.maximum(var, 0.0))
    low = std < 1e-8
    if low.any():
        logger.warning("constant channel(s) %s; normalizing with std=1", np.flatnonzero(low))
        std = np.where(low, 1.0, std)
    return NormStats(mean=mean, std=std)


def load_example(row: ManifestRow, table: PatchTable, stats: NormStats):
    """(PatchSequence, (scan_age, birth_age)) for one manifest row."""
    signal = read_ssig(row.path)
    if row.hemi == "R":
        signal = mirror_hemisphere(signal)
    signal = stats.apply(signal)
    seq = extract_patches(signal, table, subject=row.subject, hemi=row.hemi)
    return seq, (row.scan_age, row.birth_age)


@dataclass
class LoadedSplit:
    tokens: np.ndarray  # [n, N, V*C] float32
    scan_ages: np.ndarray  # [n]
    birth_ages: np.ndarray  # [n]
    subjects: list[str]
    hemis: list[str]

    @property
    def n_rows(self) -> int:
        return self.tokens.shape[0]

    def targets(self, task: str) -> np.ndarray:
        if task == "pma":
            return self.scan_ages
        if task == "ga":
            return self.birth_ages
        raise DataError(f"unknown task {task!r} (expected pma or ga)")


@dataclass
class LoadedData:
    splits: dict[str, LoadedSplit]
    stats: NormStats
    channels: tuple[str, ...] = field(default=())

    def split(self, name: str) -> LoadedSplit:
        if name not in self.splits:
            raise DataError(f"dataset has no {name!r} split")
        return self.splits[name]


def load_dataset(manifest_path, table: PatchTable, stats: NormStats | None = None,
                 splits: tuple[str, ...] = SPLITS) -> LoadedData:
    """Load manifest rows into packed token arrays, one block per split."""
    rows = read_manifest(manifest_path)
    if stats is None:
        stats = compute_norm_stats(rows)
    channels: tuple[str, ...] = ()
    out: dict[str, LoadedSplit] = {}
    for split in splits:
        members = [row for row in rows if row.split == split]
        if not members:
            continue
        block = None
        scan = np.empty(len(members))
        birth = np.empty(len(members))
        subjects, hemis = [], []
        for i, row in enumerate(members):
            seq, (scan_age, birth_age) = load_example(row, table, stats)
            if block is None:
                block = np.empty((len(members), *seq.tokens.shape), dtype=np.float32)
                channels = seq.channels
            block[i] = seq.tokens
            scan[i] = scan_age
            birth[i] = birth_age
            subjects.append(row.subject)
            hemis.append(row.hemi)
        out[split] = LoadedSplit(
            tokens=block, scan_ages=scan, birth_ages=birth, subjects=subjects, hemis=hemis
        )
    if not out:
        raise DataError("no requested splits present in manifest")
    return LoadedData(splits=out, stats=stats, channels=channels)
