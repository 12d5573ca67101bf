"""In-memory patch datasets built from a manifest."""

from __future__ import annotations

from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .augment import AugmentConfig, augment
from .errors import DataError, ImageIOError
from .imaging import Image2D
from .patches import (DEFAULT_THRESHOLD, ForegroundMask, ManifestRecord, PatchSpec, choose_center,
                      extract_patch, read_manifest, segment_foreground)
from .pgm import read_pgm


def resolve_path(manifest_dir: Path, record: ManifestRecord) -> Path:
    p = Path(record.image_path)
    return p if p.is_absolute() else manifest_dir / p


def load_record_image(manifest_dir: Path, record: ManifestRecord) -> Image2D:
    path = resolve_path(manifest_dir, record)
    try:
        return read_pgm(path)
    except ImageIOError as exc:
        raise ImageIOError(f"record {record.image_path!r} (patient {record.patient_id}): {exc}") from exc


def to_input(patches: Sequence[Image2D], dtype=np.float32) -> np.ndarray:
    """Stack patches into an ``(N, S, S, 1)`` array scaled by ``1 / (K-1)``."""
    dtype = np.dtype(dtype)
    return np.stack([p.pixels.astype(dtype) / dtype.type(p.max_value) for p in patches])[..., None]


class PatchDataset:
    """Images of one manifest split, kept in memory with their foreground masks.

    ``transform`` (e.g. histogram matching) is applied once at load time.
    """

    def __init__(self, records: Sequence[ManifestRecord], images: dict, spec: PatchSpec,
                 threshold: float = DEFAULT_THRESHOLD):
        self.records = list(records)
        self.images = images
        self.spec = spec
        self.threshold = threshold
        self.masks: dict[str, ForegroundMask] = {}
        for r in self.records:
            if r.image_path not in self.masks:
                self.masks[r.image_path] = segment_foreground(images[r.image_path], threshold)

    @classmethod
    def from_manifest(cls, manifest_path, spec: PatchSpec, splits=None,
                      threshold: float = DEFAULT_THRESHOLD,
                      transform: Callable[[Image2D], Image2D] | None = None) -> "PatchDataset":
        manifest_path = Path(manifest_path)
        records = read_manifest(manifest_path)
        if splits is not None:
            splits = {splits} if isinstance(splits, str) else set(splits)
            records = [r for r in records if r.split in splits]
        if not records:
            raise DataError(f"{manifest_path}: no records for split(s) {sorted(splits or [])}")
        images = {}
        for r in records:
            if r.image_path not in images:
                img = load_record_image(manifest_path.parent, r)
                images[r.image_path] = transform(img) if transform else img
        return cls(records, images, spec, threshold)

    def __len__(self):
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def patch(self, record: ManifestRecord, rng: np.random.Generator) -> Image2D:
        img = self.images[record.image_path]
        center = choose_center(record, img, self.masks[record.image_path], self.spec, rng)
        return extract_patch(img, center, self.spec)

    def extract_all(self, rng: np.random.Generator, dtype=np.float32):
        """One patch per record, in manifest order; returns ``(inputs, labels)``."""
        return to_input([self.patch(r, rng) for r in self.records], dtype), self.labels

    def sample_batch(self, stream: Iterator[ManifestRecord], n: int, aug: AugmentConfig | None,
                     rng: np.random.Generator, dtype=np.float32):
        patches, labels = [], []
        for _ in range(n):
            r = next(stream)
            p = self.patch(r, rng)
            if aug is not None:
                p = augment(p, aug, rng)
            patches.append(p)
            labels.append(r.label)
        return to_input(patches, dtype), np.array(labels, dtype=np.int64)
