"""Manifests, labels, foreground masks and patch selection/extraction."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import DataError, ImageIOError
from .imaging import AnnotationBox, Image2D, bilinear_resize

CLASSES = ("normal", "benign", "high_risk", "malignant")
POSITIVE_CLASSES = frozenset({"high_risk", "malignant"})
SPLITS = ("train", "val", "test")
DEFAULT_THRESHOLD = 0.02


def binary_label(class4: str) -> int:
    """1 for high-risk/malignant, 0 for normal/benign."""
    if class4 not in CLASSES:
        raise ValueError(f"unknown class {class4!r}; expected one of {CLASSES}")
    return int(class4 in POSITIVE_CLASSES)


@dataclass(frozen=True)
class ManifestRecord:
    image_path: str
    class4: str
    patient_id: str
    split: str
    annotation: AnnotationBox | None = None

    def __post_init__(self):
        if self.class4 not in CLASSES:
            raise ValueError(f"{self.image_path}: unknown class {self.class4!r}")
        if self.split not in SPLITS:
            raise ValueError(f"{self.image_path}: unknown split {self.split!r}")
        if self.class4 in POSITIVE_CLASSES and self.annotation is None:
            raise ValueError(f"{self.image_path}: {self.class4} image needs exactly one annotation")
        if self.class4 == "normal" and self.annotation is not None:
            raise ValueError(f"{self.image_path}: normal image cannot carry an annotation")

    @property
    def label(self) -> int:
        return binary_label(self.class4)

    def to_dict(self) -> dict:
        return {
            "image_path": self.image_path,
            "class4": self.class4,
            "patient_id": self.patient_id,
            "split": self.split,
            "annotation": None if self.annotation is None else self.annotation.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ManifestRecord":
        ann = d.get("annotation")
        return cls(
            image_path=str(d["image_path"]),
            class4=str(d["class4"]),
            patient_id=str(d["patient_id"]),
            split=str(d["split"]),
            annotation=None if ann is None else AnnotationBox.from_dict(ann),
        )


def read_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ImageIOError(f"{path}: {exc.strerror or exc}") from exc
    records = []
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            records.append(ManifestRecord.from_dict(json.loads(line)))
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"{path}:{n}: bad manifest record ({exc})") from exc
    return records


def write_manifest(path, records: Sequence[ManifestRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r.to_dict()) + "\n" for r in records))


@dataclass(frozen=True)
class PatchSpec:
    crop_size: int = 1024
    out_size: int = 512

    def __post_init__(self):
        if not self.crop_size >= self.out_size >= 1:
            raise ValueError(f"need crop_size >= out_size >= 1, got {self.crop_size}, {self.out_size}")

    def area_fraction(self, width: int, height: int) -> float:
        return self.crop_size ** 2 / (width * height)


@dataclass(frozen=True, eq=False)
class ForegroundMask:
    bits: np.ndarray

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @cached_property
    def flat_indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits)

    def is_empty(self) -> bool:
        return self.flat_indices.size == 0


def segment_foreground(img: Image2D, threshold_fraction: float = DEFAULT_THRESHOLD) -> ForegroundMask:
    if not 0 < threshold_fraction < 1:
        raise ValueError("threshold_fraction must be in (0, 1)")
    return ForegroundMask(img.pixels > threshold_fraction * img.max_value)


def raw_center(record: ManifestRecord, mask: ForegroundMask, rng: np.random.Generator) -> tuple[int, int]:
    """Annotation centre, or a uniformly drawn foreground pixel; before clamping."""
    if record.annotation is not None:
        return record.annotation.center_x, record.annotation.center_y
    if mask.is_empty():
        raise DataError(f"{record.image_path}: foreground mask is empty, cannot place a patch")
    flat = int(mask.flat_indices[rng.integers(mask.flat_indices.size)])
    cy, cx = divmod(flat, mask.width)
    return cx, cy


def clamp_center(cx: int, cy: int, width: int, height: int, crop: int) -> tuple[int, int]:
    """Translate a centre so the ``crop``-sized window fits inside the image."""
    if width < crop or height < crop:
        raise DataError(f"image {width}x{height} is smaller than the {crop}px crop")
    half = crop // 2
    cx = min(max(cx, half), width - (crop - half))
    cy = min(max(cy, half), height - (crop - half))
    return cx, cy


def choose_center(record: ManifestRecord, img: Image2D, mask: ForegroundMask,
                  spec: PatchSpec, rng: np.random.Generator) -> tuple[int, int]:
    cx, cy = raw_center(record, mask, rng)
    return clamp_center(cx, cy, img.width, img.height, spec.crop_size)


def crop_bounds(center: tuple[int, int], crop: int) -> tuple[int, int]:
    """Top-left corner ``(x0, y0)`` of the crop window around ``center``."""
    cx, cy = center
    return cx - crop // 2, cy - crop // 2


def extract_patch(img: Image2D, center: tuple[int, int], spec: PatchSpec) -> Image2D:
    x0, y0 = crop_bounds(center, spec.crop_size)
    x1, y1 = x0 + spec.crop_size, y0 + spec.crop_size
    if x0 < 0 or y0 < 0 or x1 > img.width or y1 > img.height:
        raise RuntimeError(f"crop [{x0}:{x1}, {y0}:{y1}] leaves the {img.width}x{img.height} image")
    crop = Image2D(img.pixels[y0:y1, x0:x1], img.levels)
    return bilinear_resize(crop, spec.out_size, spec.out_size)


def split_patients(patient_ids, ratios: Sequence[float] = (0.8, 0.1, 0.1),
                   rng: np.random.Generator | None = None,
                   names: Sequence[str] = SPLITS) -> dict[str, str]:
    """Randomly partition patients into splits with the given ratios.

    Split sizes use largest-remainder rounding so they always sum to the
    number of patients.
    """
    ids = sorted(set(patient_ids))
    if not ids:
        raise DataError("no patients to split")
    if len(ratios) != len(names) or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise ValueError("ratios must be nonnegative, one per split name")
    rng = rng if rng is not None else np.random.default_rng(0)
    n = len(ids)
    exact = np.asarray(ratios, dtype=np.float64) / sum(ratios) * n
    sizes = np.floor(exact).astype(int)
    order = sorted(range(len(sizes)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[: n - sizes.sum()]:
        sizes[i] += 1
    perm = rng.permutation(n)
    assignment = {}
    start = 0
    for name, size in zip(names, sizes):
        for k in perm[start:start + size]:
            assignment[ids[k]] = name
        start += size
    return assignment


def two_class_sampler(records: Sequence[ManifestRecord],
                      rng: np.random.Generator) -> Iterator[ManifestRecord]:
    """Endless stream; each draw is positive or negative with probability 1/2."""
    pos = [r for r in records if r.label == 1]
    neg = [r for r in records if r.label == 0]
    if not pos or not neg:
        raise DataError(f"two-class sampling needs both classes "
                        f"({len(pos)} positive, {len(neg)} negative records)")

    def draws():
        while True:
            pool = pos if rng.random() < 0.5 else neg
            yield pool[rng.integers(len(pool))]

    return draws()
