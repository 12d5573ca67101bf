"""Training-time augmentation: random flips, rotation, translation and noise."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .imaging import (Image2D, add_gaussian_noise, flip_h, flip_v, rotate, round_half_away,
                      translate)

STEPS = ("flip", "rotate", "translate", "noise")


@dataclass(frozen=True)
class AugmentConfig:
    flip_prob: float = 0.5
    noise_sigma: float = 1.0
    translate_sigma: float = 20.0
    rotate_range_deg: float = 30.0
    order: tuple = STEPS
    # "raw": sigma in intensity levels; "normalized": sigma as a fraction of K-1
    noise_scale: str = "raw"

    def __post_init__(self):
        if not 0 <= self.flip_prob <= 1:
            raise ValueError("flip_prob must be in [0, 1]")
        if min(self.noise_sigma, self.translate_sigma, self.rotate_range_deg) < 0:
            raise ValueError("augmentation magnitudes must be nonnegative")
        if self.rotate_range_deg > 180:
            raise ValueError("rotate_range_deg must be <= 180")
        if sorted(self.order) != sorted(STEPS):
            raise ValueError(f"order must be a permutation of {STEPS}")
        if self.noise_scale not in ("raw", "normalized"):
            raise ValueError("noise_scale must be 'raw' or 'normalized'")
        object.__setattr__(self, "order", tuple(self.order))

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        return cls(flip_prob=0.0, noise_sigma=0.0, translate_sigma=0.0, rotate_range_deg=0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["order"] = list(self.order)
        return d


@dataclass(frozen=True)
class AugmentDraw:
    flip_h: bool
    flip_v: bool
    degrees: float
    dx: int
    dy: int


def sample_draw(cfg: AugmentConfig, rng: np.random.Generator) -> AugmentDraw:
    # always consume the same number of variates so streams stay aligned
    u = rng.random(2)
    degrees = rng.uniform(-cfg.rotate_range_deg, cfg.rotate_range_deg)
    shift = round_half_away(rng.standard_normal(2) * cfg.translate_sigma)
    return AugmentDraw(
        flip_h=bool(u[0] < cfg.flip_prob),
        flip_v=bool(u[1] < cfg.flip_prob),
        degrees=float(degrees),
        dx=int(shift[0]),
        dy=int(shift[1]),
    )


def apply_draw(img: Image2D, draw: AugmentDraw, cfg: AugmentConfig,
               rng: np.random.Generator) -> Image2D:
    for step in cfg.order:
        if step == "flip":
            if draw.flip_h:
                img = flip_h(img)
            if draw.flip_v:
                img = flip_v(img)
        elif step == "rotate":
            img = rotate(img, draw.degrees)
        elif step == "translate":
            img = translate(img, draw.dx, draw.dy)
        else:
            sigma = cfg.noise_sigma
            if cfg.noise_scale == "normalized":
                sigma *= img.max_value
            img = add_gaussian_noise(img, sigma, rng)
    return img


def augment(patch: Image2D, cfg: AugmentConfig, rng: np.random.Generator) -> Image2D:
    return apply_draw(patch, sample_draw(cfg, rng), cfg, rng)
