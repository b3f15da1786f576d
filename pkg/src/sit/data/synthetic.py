"""Synthetic cortical-surface stand-in dataset.

Each subject gets a scan age drawn uniformly from [age_min, age_max] weeks.
Signals live on the order-6 icosphere and are sums of smooth spherical bumps
B_k(v) = exp((c_k . v - 1) / s_k^2) whose amplitudes depend on the subject's
APPARENT age: amplitudes are monotone in age for half the bases (so age is
recoverable by spatial integration) and oscillatory for the rest
(distractors). Bump centers alternate between the x>0 and x<0 half-spheres
so informative signal is spread across the whole surface.

Apparent age = scan age + Gaussian jitter (maturation_jitter weeks): surfaces
reflect maturation, which tracks but does not equal chronological scan age.
That gap is what makes the scan-age deconfounding token genuinely useful for
birth-age prediction rather than redundant.

A preterm_fraction of subjects get birth_age = scan_age - offset with offset
~ Uniform(1, 14) weeks; the rest were scanned at term (offset 0). The right
hemisphere stores the mirrored pattern (as an anatomical right surface
would), so loaders must mirror it back; left and right get independent
noise.

Generation is deterministic given the spec seed: one generator, fixed draw
order.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..geometry import build_icosphere, mirror_permutation, write_ssig
from ..geometry.formats import SurfaceSignal

MESH_ORDER = 6  # all synthetic signals live on the order-6 icosphere

MANIFEST_FIELDS = ("subject", "hemi", "path", "scan_age", "birth_age", "split")


@dataclass(frozen=True)
class SyntheticSpec:
    subjects: int
    age_min: float = 26.0
    age_max: float = 45.0
    channels: int = 4
    n_bases: int = 6
    noise_std: float = 0.1
    seed: int = 0
    preterm_fraction: float = 0.3
    maturation_jitter: float = 1.0

    def __post_init__(self):
        if self.subjects < 1:
            raise ConfigError(f"subjects must be >= 1, got {self.subjects}")
        if not self.age_min < self.age_max:
            raise ConfigError(f"need age_min < age_max, got [{self.age_min}, {self.age_max}]")
        if self.channels < 1 or self.n_bases < 1:
            raise ConfigError("channels and n_bases must be >= 1")
        if self.noise_std < 0 or self.maturation_jitter < 0:
            raise ConfigError("noise_std and maturation_jitter must be >= 0")
        if not 0.0 <= self.preterm_fraction <= 1.0:
            raise ConfigError(f"preterm_fraction must be in [0, 1], got {self.preterm_fraction}")

    def to_dict(self) -> dict:
        return {
            "subjects": self.subjects,
            "age_min": self.age_min,
            "age_max": self.age_max,
            "channels": self.channels,
            "n_bases": self.n_bases,
            "noise_std": self.noise_std,
            "seed": self.seed,
            "preterm_fraction": self.preterm_fraction,
            "maturation_jitter": self.maturation_jitter,
        }


def basis_functions(spec: SyntheticSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(bases [K, V], slopes [K], mixing [C, K]) for the generator."""
    mesh = build_icosphere(MESH_ORDER)
    centers = rng.standard_normal((spec.n_bases, 3))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    # alternate half-spheres so no single region carries all the signal
    signs = np.where(np.arange(spec.n_bases) % 2 == 0, 1.0, -1.0)
    centers[:, 0] = signs * np.abs(centers[:, 0])
    widths = rng.uniform(0.3, 0.6, size=spec.n_bases)
    bases = np.exp((centers @ mesh.vertices.T - 1.0) / widths[:, None] ** 2)  # [K, V]
    slopes = rng.uniform(0.5, 1.5, size=spec.n_bases)
    mixing = rng.standard_normal((spec.channels, spec.n_bases)) / np.sqrt(spec.n_bases)
    return bases, slopes, mixing


def _amplitudes(apparent_age: float, spec: SyntheticSpec, slopes: np.ndarray,
                phases: np.ndarray) -> np.ndarray:
    mid = 0.5 * (spec.age_min + spec.age_max)
    half = 0.5 * (spec.age_max - spec.age_min)
    x = (apparent_age - mid) / half  # roughly [-1, 1]
    n_monotone = (spec.n_bases + 1) // 2
    amps = np.empty(spec.n_bases)
    amps[:n_monotone] = slopes[:n_monotone] * x
    amps[n_monotone:] = np.sin(3.0 * x + phases[n_monotone:])
    return amps


def generate_synthetic(spec: SyntheticSpec, out_dir) -> Path:
    """Write per-hemisphere SSIG files and a manifest CSV; returns manifest path."""
    out_dir = Path(out_dir)
    signals_dir = out_dir / "signals"
    signals_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    bases, slopes, mixing = basis_functions(spec, rng)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=spec.n_bases)
    perm = mirror_permutation(MESH_ORDER)
    n_vertices = bases.shape[1]
    channel_names = tuple(f"ch{i}" for i in range(spec.channels))

    # subject-level splits: 10% val, 10% test (rounded), remainder train
    ids = [f"s{i:05d}" for i in range(spec.subjects)]
    shuffled = list(rng.permutation(spec.subjects))
    n_val = int(round(0.1 * spec.subjects))
    n_test = int(round(0.1 * spec.subjects))
    split_of = {}
    for rank, subject_idx in enumerate(shuffled):
        if rank < n_val:
            split_of[ids[subject_idx]] = "val"
        elif rank < n_val + n_test:
            split_of[ids[subject_idx]] = "test"
        else:
            split_of[ids[subject_idx]] = "train"

    rows = []
    for subject in ids:
        scan_age = float(rng.uniform(spec.age_min, spec.age_max))
        apparent = scan_age + float(rng.normal(0.0, spec.maturation_jitter))
        preterm = rng.random() < spec.preterm_fraction
        offset = float(rng.uniform(1.0, 14.0)) if preterm else 0.0
        birth_age = scan_age - offset

        amps = _amplitudes(apparent, spec, slopes, phases)
        pattern = bases.T @ (amps[:, None] * mixing.T)  # [V, C], left orientation
        for hemi in ("L", "R"):
            values = pattern if hemi == "L" else pattern[perm]
            noise = rng.normal(0.0, spec.noise_std, size=(n_vertices, spec.channels))
            signal = SurfaceSignal(
                values=(values + noise).astype(np.float32), channel_names=channel_names
            )
            rel_path = f"signals/{subject}_{hemi}.ssig"
            write_ssig(out_dir / rel_path, signal)
            rows.append({
                "subject": subject,
                "hemi": hemi,
                "path": rel_path,
                "scan_age": f"{scan_age:.6f}",
                "birth_age": f"{birth_age:.6f}",
                "split": split_of[subject],
            })

    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    return manifest_path
