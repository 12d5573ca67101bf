"""Synthetic source/target mammography-like corpora.

Each image is a half-ellipse of "tissue" against a dark detector background,
with a per-image tissue level, smooth low-frequency texture and pixel noise.
Findings are bright Gaussian blobs: dim ones for benign images, brighter ones
for high-risk/malignant images, each annotated with a box at the blob centre.
Normal images carry no blob.

The target domain renders the same kind of scene and passes the real-valued
intensities through a strictly increasing warp
``v -> bias + (1 - bias) * v ** gamma`` before quantisation.  Because the
warp changes local contrast as a function of the surrounding tissue level,
a classifier keyed on blob contrast degrades on the target domain, while a
global monotone remapping (histogram matching) can undo it.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .imaging import AnnotationBox, Image2D, to_levels
from .patches import CLASSES, ManifestRecord, write_manifest
from .pgm import write_pgm


@dataclass(frozen=True)
class Warp:
    gamma: float = 2.2
    bias: float = 0.0

    def __post_init__(self):
        if self.gamma <= 0 or not 0 <= self.bias < 1:
            raise ValueError("warp needs gamma > 0 and bias in [0, 1)")

    @property
    def is_identity(self) -> bool:
        return self.gamma == 1.0 and self.bias == 0.0

    def __call__(self, v: np.ndarray) -> np.ndarray:
        """Map normalised intensities in [0, 1] into [0, 1], strictly increasing."""
        if self.is_identity:
            return v
        return self.bias + (1.0 - self.bias) * np.power(v, self.gamma)


@dataclass(frozen=True)
class SyntheticDomainSpec:
    width: int = 208
    height: int = 256
    levels: int = 4096
    target_levels: int = 4096
    tissue_level: tuple = (0.2, 0.7)
    background_level: float = 0.01
    texture_bumps: int = 6
    texture_amplitude: float = 0.06
    texture_sigma: tuple = (20.0, 40.0)
    pixel_noise: float = 0.01
    blob_sigma: tuple = (5.0, 9.0)
    benign_contrast: tuple = (0.02, 0.08)
    positive_contrast: tuple = (0.14, 0.24)
    class_fractions: dict = field(default_factory=lambda: {
        "normal": 0.3, "benign": 0.2, "high_risk": 0.15, "malignant": 0.35})
    source_counts: dict = field(default_factory=lambda: {"train": 800, "val": 200, "test": 300})
    target_counts: dict = field(default_factory=lambda: {"train": 200, "val": 100, "test": 300})
    images_per_patient: int = 2
    warp: Warp = field(default_factory=Warp)
    # render target scenes from the source seed stream (same scene per index)
    paired_scenes: bool = False

    def __post_init__(self):
        if set(self.class_fractions) - set(CLASSES):
            raise ValueError(f"class_fractions keys must be among {CLASSES}")
        if self.images_per_patient < 1:
            raise ValueError("images_per_patient must be >= 1")
        if isinstance(self.warp, dict):
            object.__setattr__(self, "warp", Warp(**self.warp))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tissue_level"] = list(self.tissue_level)
        d["texture_sigma"] = list(self.texture_sigma)
        d["blob_sigma"] = list(self.blob_sigma)
        d["benign_contrast"] = list(self.benign_contrast)
        d["positive_contrast"] = list(self.positive_contrast)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticDomainSpec":
        d = dict(d)
        for k in ("tissue_level", "texture_sigma", "blob_sigma", "benign_contrast",
                  "positive_contrast"):
            if k in d:
                d[k] = tuple(d[k])
        if "warp" in d and isinstance(d["warp"], dict):
            d["warp"] = Warp(**d["warp"])
        return cls(**d)


def class_counts(n: int, fractions: dict) -> dict:
    """Split ``n`` images over classes by largest remainder."""
    names = [c for c in CLASSES if c in fractions]
    total = sum(fractions[c] for c in names)
    exact = {c: fractions[c] / total * n for c in names}
    counts = {c: int(np.floor(exact[c])) for c in names}
    leftovers = sorted(names, key=lambda c: (-(exact[c] - counts[c]), names.index(c)))
    for c in leftovers[: n - sum(counts.values())]:
        counts[c] += 1
    return counts


def _gaussian(gx, gy, x0, y0, sigma):
    return np.exp(-((gx - x0) ** 2 + (gy - y0) ** 2) / (2.0 * sigma ** 2))


def render_scene(spec: SyntheticDomainSpec, class4: str, rng: np.random.Generator):
    """Real-valued scene in [0, 1] plus the finding annotation (or None)."""
    h, w = spec.height, spec.width
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    cy = h / 2 + rng.uniform(-0.05, 0.05) * h
    a = w * rng.uniform(0.8, 0.95)
    b = h * rng.uniform(0.38, 0.46)
    radius = np.sqrt((gx / a) ** 2 + ((gy - cy) / b) ** 2)
    tissue = np.clip((1.0 - radius) / 0.08, 0.0, 1.0)

    def inside_point(max_radius):
        while True:
            r = np.sqrt(rng.uniform(0, 1)) * max_radius
            t = rng.uniform(-np.pi / 2, np.pi / 2)
            x, y = r * np.cos(t) * a, cy + r * np.sin(t) * b
            if 0 <= x < w and 0 <= y < h:
                return x, y

    level = np.full((h, w), rng.uniform(*spec.tissue_level))
    for _ in range(spec.texture_bumps):
        x0, y0 = inside_point(0.9)
        amp = rng.uniform(-spec.texture_amplitude, spec.texture_amplitude)
        level += amp * _gaussian(gx, gy, x0, y0, rng.uniform(*spec.texture_sigma))
    scene = spec.background_level + tissue * (level - spec.background_level)

    annotation = None
    if class4 != "normal":
        lo_hi = spec.benign_contrast if class4 == "benign" else spec.positive_contrast
        bx, by = inside_point(0.7)
        sigma = rng.uniform(*spec.blob_sigma)
        scene = scene + rng.uniform(*lo_hi) * _gaussian(gx, gy, bx, by, sigma)
        side = int(round(4 * sigma))
        annotation = AnnotationBox(int(bx), int(by), side, side)
    scene = scene + rng.standard_normal((h, w)) * spec.pixel_noise
    return np.clip(scene, 0.0, 1.0), annotation


def render_image(spec: SyntheticDomainSpec, class4: str, rng: np.random.Generator,
                 warp: Warp | None = None, levels: int | None = None):
    scene, annotation = render_scene(spec, class4, rng)
    if warp is not None:
        scene = warp(scene)
    levels = levels or spec.levels
    return to_levels(scene * (levels - 1), levels), annotation


def generate_domain(spec: SyntheticDomainSpec, counts: dict, seed_key, warp: Warp | None = None,
                    levels: int | None = None, prefix: str = "img"):
    """Yield ``(ManifestRecord, Image2D)`` pairs for every split in ``counts``.

    Every image draws from its own stream keyed by ``seed_key`` and its index,
    so two domains generated with the same key share their scenes exactly.
    """
    seed_key = list(np.atleast_1d(seed_key))
    index = 0
    for split in ("train", "val", "test"):
        n = int(counts.get(split, 0))
        if n == 0:
            continue
        per_class = class_counts(n, spec.class_fractions)
        classes = [c for c in CLASSES for _ in range(per_class.get(c, 0))]
        order_rng = np.random.default_rng(seed_key + [len(CLASSES), hash_split(split)])
        classes = [classes[i] for i in order_rng.permutation(n)]
        for k, class4 in enumerate(classes):
            rng = np.random.default_rng(seed_key + [index])
            img, ann = render_image(spec, class4, rng, warp, levels)
            patient = f"{prefix}-{split}-p{k // spec.images_per_patient:05d}"
            name = f"{split}/{prefix}_{index:05d}.pgm"
            yield ManifestRecord(name, class4, patient, split, ann), img
            index += 1


def hash_split(split: str) -> int:
    return {"train": 11, "val": 12, "test": 13}[split]


def write_domain(out_dir, pairs) -> list[ManifestRecord]:
    out_dir = Path(out_dir)
    records = []
    for record, img in pairs:
        write_pgm(out_dir / record.image_path, img)
        records.append(record)
    write_manifest(out_dir / "manifest.jsonl", records)
    return records


def synthesize(spec: SyntheticDomainSpec, out_dir, seed: int) -> dict:
    """Write ``source/`` and ``target/`` corpora (images + manifest.jsonl)."""
    out_dir = Path(out_dir)
    source = write_domain(out_dir / "source",
                          generate_domain(spec, spec.source_counts, [seed, 0], None,
                                          spec.levels, "src"))
    target_key = [seed, 0 if spec.paired_scenes else 1]
    target = write_domain(out_dir / "target",
                          generate_domain(spec, spec.target_counts, target_key, spec.warp,
                                          spec.target_levels, "tgt"))
    return {"source": out_dir / "source" / "manifest.jsonl",
            "target": out_dir / "target" / "manifest.jsonl",
            "source_records": len(source), "target_records": len(target)}


def identity_spec(spec: SyntheticDomainSpec) -> SyntheticDomainSpec:
    return replace(spec, warp=Warp(1.0, 0.0), target_levels=spec.levels)
