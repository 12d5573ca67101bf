"""Cumulative histograms, corpus-average CDFs and histogram matching.

A matching table maps every source level ``p`` to
``round(F_R^-1(F_S(p)))``, where the reference inverse CDF is evaluated by
linear interpolation between the two reference levels bracketing the
quantile.  On flat stretches of ``F_R`` the smallest level reaching the
quantile wins, which keeps the table nondecreasing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError
from .imaging import Image2D, rescale_levels, round_half_away

COMMON_LEVELS = 4096


@dataclass(frozen=True, eq=False)
class Cdf:
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size < 1:
            raise ValueError("CDF values must be a nonempty 1-D array")
        if np.any(np.diff(v) < 0):
            raise ValueError("CDF must be nondecreasing")
        if v[0] < 0 or abs(v[-1] - 1.0) > 1e-12:
            raise ValueError(f"CDF must lie in [0, 1] and end at 1, ends at {v[-1]!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def levels(self) -> int:
        return self.values.size

    def to_json(self) -> dict:
        return {"kind": "cdf", "levels": self.levels, "values": self.values.tolist()}

    @classmethod
    def from_json(cls, d: Mapping) -> "Cdf":
        cdf = cls(np.asarray(d["values"], dtype=np.float64))
        if cdf.levels != int(d["levels"]):
            raise ValueError("CDF level count does not match its values")
        return cdf


@dataclass(frozen=True, eq=False)
class HmLut:
    table: np.ndarray
    target_levels: int

    def __post_init__(self):
        t = np.array(self.table, dtype=np.int64)
        if t.ndim != 1 or t.size < 1:
            raise ValueError("LUT must be a nonempty 1-D table")
        if t.min() < 0 or t.max() > self.target_levels - 1:
            raise ValueError("LUT entries outside the target level range")
        if np.any(np.diff(t) < 0):
            raise ValueError("LUT must be nondecreasing")
        t.setflags(write=False)
        object.__setattr__(self, "table", t)

    @property
    def source_levels(self) -> int:
        return self.table.size

    @classmethod
    def identity(cls, levels: int) -> "HmLut":
        return cls(np.arange(levels), levels)

    def to_json(self) -> dict:
        return {"kind": "hm_lut", "source_levels": self.source_levels,
                "target_levels": self.target_levels, "map": self.table.tolist()}

    @classmethod
    def from_json(cls, d: Mapping) -> "HmLut":
        lut = cls(np.asarray(d["map"], dtype=np.int64), int(d["target_levels"]))
        if lut.source_levels != int(d["source_levels"]):
            raise ValueError("LUT length does not match source_levels")
        return lut


@dataclass(frozen=True)
class CorpusCdfSpec:
    """How many images of each class enter a domain's average CDF."""

    quotas: Mapping[str, int] = field(default_factory=lambda: {
        "normal": 400, "benign": 400, "malignant": 400})

    @property
    def sample_count(self) -> int:
        return sum(self.quotas.values())


def compute_cdf(img: Image2D, mask: np.ndarray | None = None) -> Cdf:
    """Fraction of pixels at or below each level (optionally within ``mask``)."""
    px = img.pixels if mask is None else img.pixels[mask]
    if px.size == 0:
        raise DataError("cannot compute a CDF over zero pixels")
    counts = np.bincount(px.ravel(), minlength=img.levels)
    return Cdf(np.cumsum(counts) / px.size)


def mean_cdf(cdfs: Iterable[Cdf]) -> Cdf:
    total = None
    n = 0
    for c in cdfs:
        if total is None:
            total = np.zeros(c.levels)
        elif c.levels != total.size:
            raise ValueError("cannot average CDFs with different level counts")
        total += c.values
        n += 1
    if n == 0:
        raise DataError("no CDFs to average")
    return Cdf(total / n)


def select_corpus(records: Sequence, spec: CorpusCdfSpec, rng: np.random.Generator,
                  label: Callable = lambda r: r.class4) -> list:
    """Draw ``spec.quotas[c]`` records of each class ``c`` without replacement."""
    chosen = []
    for cls, quota in spec.quotas.items():
        pool = [r for r in records if label(r) == cls]
        if len(pool) < quota:
            raise DataError(f"average CDF needs {quota} '{cls}' samples, only {len(pool)} available")
        idx = np.sort(rng.choice(len(pool), size=quota, replace=False))
        chosen.extend(pool[i] for i in idx)
    return chosen


def average_cdf(records: Sequence, spec: CorpusCdfSpec, rng: np.random.Generator,
                load: Callable[[object], Image2D], levels: int | None = COMMON_LEVELS) -> Cdf:
    """Per-bin mean of per-image CDFs over a class-balanced random draw.

    ``records`` are anything with a ``class4`` attribute; ``load`` turns a
    record into its image.  When ``levels`` is set, images are first rescaled
    onto that common grid.
    """
    chosen = select_corpus(records, spec, rng)

    def cdf_of(r):
        img = load(r)
        if levels is not None:
            img = rescale_levels(img, levels)
        return compute_cdf(img)

    return mean_cdf(cdf_of(r) for r in chosen)


def inverse_cdf(f_r: Cdf, q: np.ndarray) -> np.ndarray:
    """Real-valued reference level for each quantile in ``q``."""
    v = f_r.values
    q = np.asarray(q, dtype=np.float64)
    j = np.minimum(np.searchsorted(v, q, side="left"), v.size - 1)
    lo = np.maximum(j - 1, 0)
    denom = v[j] - v[lo]
    frac = np.divide(q - v[lo], denom, out=np.ones_like(q), where=denom > 0)
    out = np.where(j == 0, 0.0, lo + frac)
    return np.where(q <= v[0], 0.0, out)


def build_hm_lut(f_s: Cdf, f_r: Cdf) -> HmLut:
    """Matching table sending source quantiles onto the reference distribution."""
    target = round_half_away(inverse_cdf(f_r, f_s.values))
    table = np.clip(target, 0, f_r.levels - 1).astype(np.int64)
    return HmLut(table, f_r.levels)


def apply_hm(img: Image2D, lut: HmLut) -> Image2D:
    if img.levels != lut.source_levels:
        raise ValueError(f"image has K={img.levels} levels, LUT expects {lut.source_levels}")
    return Image2D(lut.table[img.pixels].astype(np.uint16), lut.target_levels)


def ks_distance(a: Cdf, b: Cdf) -> float:
    if a.levels != b.levels:
        raise ValueError(f"CDFs on different grids ({a.levels} vs {b.levels} levels)")
    return float(np.max(np.abs(a.values - b.values)))


def match_to_reference(img: Image2D, lut: HmLut) -> Image2D:
    """Rescale ``img`` onto the LUT's source grid if needed, then apply it."""
    if img.levels != lut.source_levels:
        img = rescale_levels(img, lut.source_levels)
    return apply_hm(img, lut)


def save_json(path, obj: Cdf | HmLut) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj.to_json()) + "\n")


def load_json(path) -> Cdf | HmLut:
    d = json.loads(Path(path).read_text())
    kind = d.get("kind", "cdf")
    return HmLut.from_json(d) if kind == "hm_lut" else Cdf.from_json(d)
