"""Synthetic disc/cup dataset: generation, manifests, splits, loading.

Each image is a grayscale square: a bright filled disc on a dark background
with a brighter concentric cup inside it.  The cup-to-disc radius ratio is
drawn from a per-class range, so the stage label {0=normal, 1=early,
2=advanced} is carried by geometry that survives the additive noise,
center jitter, and the training augmentations (which never change the
ratio).

Every sample's random draws come from an RNG stream derived from
(seed, sample_index), so generation is order-independent and fully
deterministic per seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import Tensor, read_t4b, write_t4b

SPLITS = ("train", "val", "test")
LABEL_NAMES = ("normal", "early", "advanced")


@dataclass(frozen=True)
class SyntheticConfig:
    image_hw: int = 64
    per_class: int = 200
    cdr_ranges: tuple[tuple[float, float], ...] = ((0.20, 0.40), (0.45, 0.60), (0.65, 0.85))
    disc_radius_frac: tuple[float, float] = (0.15, 0.25)
    center_jitter_frac: float = 0.10
    noise_std: float = 0.05
    background: float = 0.2
    disc_intensity: float = 0.6
    cup_intensity: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.image_hw < 8:
            raise ValueError("image_hw must be at least 8")
        if self.per_class < 1:
            raise ValueError("per_class must be positive")
        if len(self.cdr_ranges) != 3:
            raise ValueError("one CDR range per class is required")
        previous_hi = -1.0
        for lo, hi in self.cdr_ranges:
            if not (0.0 < lo < hi < 1.0):
                raise ValueError(f"CDR range ({lo}, {hi}) must satisfy 0 < lo < hi < 1")
            if lo <= previous_hi:
                raise ValueError("CDR ranges must be disjoint and ordered")
            previous_hi = hi
        for value in (self.background, self.disc_intensity, self.cup_intensity):
            if not 0.0 <= value <= 1.0:
                raise ValueError("intensities must lie in [0, 1]")


@dataclass(frozen=True)
class ManifestRow:
    path: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    rows: list[ManifestRow]

    def __post_init__(self):
        paths = [r.path for r in self.rows]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be unique")

    def counts(self) -> dict[str, dict[int, int]]:
        """Sample counts keyed by split then label."""
        out: dict[str, dict[int, int]] = {}
        for row in self.rows:
            out.setdefault(row.split, {}).setdefault(row.label, 0)
            out[row.split][row.label] += 1
        return out

    def save(self, path) -> None:
        path = Path(path)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["path", "label", "split"])
            for row in self.rows:
                writer.writerow([row.path, row.label, row.split])

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"manifest not found: {path}")
        rows = []
        with path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["path", "label", "split"]:
                raise ValueError(f"{path}: bad manifest header {header!r}")
            for record in reader:
                if len(record) != 3:
                    raise ValueError(f"{path}: malformed row {record!r}")
                sample_path, label_text, split = record
                label = int(label_text)
                if not 0 <= label <= 2:
                    raise ValueError(f"{path}: label {label} out of range for {sample_path}")
                if split not in SPLITS:
                    raise ValueError(f"{path}: unknown split {split!r} for {sample_path}")
                rows.append(ManifestRow(sample_path, label, split))
        return cls(rows)


@dataclass
class Sample:
    image: Tensor  # [1, h, w, 1], values in [0, 1]
    label: int

    def __post_init__(self):
        n, _, _, k = self.image.data.shape
        if n != 1 or k != 1:
            raise ValueError(f"sample image must be [1, h, w, 1], got {self.image.data.shape}")
        if self.image.data.min() < 0.0 or self.image.data.max() > 1.0:
            raise ValueError("sample values must lie in [0, 1]")
        if not 0 <= self.label <= 2:
            raise ValueError(f"label {self.label} out of range")


@dataclass(frozen=True)
class DiscGeometry:
    center_y: float
    center_x: float
    radius: float
    cdr: float


def sample_geometry(cfg: SyntheticConfig, label: int, sample_index: int):
    """Per-sample draws in fixed order; returns the geometry and the RNG
    continuation used for the noise field."""
    rng = np.random.default_rng([cfg.seed, sample_index])
    radius = cfg.image_hw * rng.uniform(*cfg.disc_radius_frac)
    jitter = cfg.center_jitter_frac * cfg.image_hw
    center_y = cfg.image_hw / 2.0 + rng.uniform(-jitter, jitter)
    center_x = cfg.image_hw / 2.0 + rng.uniform(-jitter, jitter)
    lo, hi = cfg.cdr_ranges[label]
    cdr = rng.uniform(lo, hi)
    return DiscGeometry(center_y, center_x, radius, cdr), rng


def render_sample(cfg: SyntheticConfig, label: int, sample_index: int) -> np.ndarray:
    """Render one (h, w) image: background, disc, cup, noise, clip."""
    geom, rng = sample_geometry(cfg, label, sample_index)
    hw = cfg.image_hw
    yy, xx = np.ogrid[:hw, :hw]
    dist2 = (yy - geom.center_y) ** 2 + (xx - geom.center_x) ** 2
    img = np.full((hw, hw), cfg.background)
    img[dist2 <= geom.radius ** 2] = cfg.disc_intensity
    img[dist2 <= (geom.cdr * geom.radius) ** 2] = cfg.cup_intensity
    img += rng.normal(0.0, cfg.noise_std, (hw, hw))
    np.clip(img, 0.0, 1.0, out=img)
    return img


def generate_synthetic(cfg: SyntheticConfig, out_dir) -> DatasetManifest:
    """Write per_class samples of each class as .t4b files under out_dir.

    Returned manifest rows carry empty split fields; run `split_manifest`
    and save the result next to the images.
    """
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for label in range(3):
        for i in range(cfg.per_class):
            sample_index = label * cfg.per_class + i
            img = render_sample(cfg, label, sample_index)
            rel_path = f"images/{LABEL_NAMES[label]}_{i:04d}.t4b"
            write_t4b(out_dir / rel_path, Tensor(img.reshape(1, cfg.image_hw, cfg.image_hw, 1)))
            rows.append(ManifestRow(rel_path, label, ""))
    return DatasetManifest(rows)


def split_manifest(manifest: DatasetManifest, fractions, seed: int) -> DatasetManifest:
    """Stratified split: per class, shuffle (seeded) and partition by the
    (train, val, test) fractions using largest-remainder rounding."""
    fractions = [float(f) for f in fractions]
    if len(fractions) != len(SPLITS):
        raise ValueError(f"expected {len(SPLITS)} fractions, got {len(fractions)}")
    if any(f < 0 for f in fractions):
        raise ValueError("fractions must be nonnegative")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {sum(fractions)}")
    active = sum(1 for f in fractions if f > 0)
    rng = np.random.default_rng([seed])
    assignment: dict[int, str] = {}
    for label in range(3):
        indices = [i for i, row in enumerate(manifest.rows) if row.label == label]
        if not indices:
            continue
        if len(indices) < active:
            raise ValueError(
                f"class {label} has {len(indices)} samples, fewer than {active} populated splits"
            )
        shuffled = [indices[j] for j in rng.permutation(len(indices))]
        sizes = _largest_remainder(len(indices), fractions)
        cursor = 0
        for split, size in zip(SPLITS, sizes):
            for idx in shuffled[cursor:cursor + size]:
                assignment[idx] = split
            cursor += size
    rows = [ManifestRow(row.path, row.label, assignment.get(i, row.split))
            for i, row in enumerate(manifest.rows)]
    return DatasetManifest(rows)


def _largest_remainder(total: int, fractions) -> list[int]:
    exact = [total * f for f in fractions]
    base = [int(np.floor(e)) for e in exact]
    leftover = total - sum(base)
    order = sorted(range(len(fractions)), key=lambda s: (-(exact[s] - base[s]), s))
    for s in order[:leftover]:
        base[s] += 1
    return base


def nearest_resize(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Nearest-neighbor resize of a (n, h, w, k) array."""
    _, h, w, _ = data.shape
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    return data[:, rows][:, :, cols]


def load_dataset(manifest_path, input_hw: int | None = None) -> dict[str, list[Sample]]:
    """Load all samples grouped by split, resizing to input_hw if needed."""
    manifest_path = Path(manifest_path)
    manifest = DatasetManifest.load(manifest_path)
    base = manifest_path.parent
    grouped: dict[str, list[Sample]] = {split: [] for split in SPLITS}
    for row in manifest.rows:
        file_path = base / row.path
        if not file_path.exists():
            raise FileNotFoundError(f"missing sample file: {file_path}")
        tensor = read_t4b(file_path)
        data = tensor.data
        if input_hw is not None and data.shape[1:3] != (input_hw, input_hw):
            data = nearest_resize(data, input_hw, input_hw)
        grouped[row.split].append(Sample(Tensor(data), row.label))
    return grouped
