"""Seeded, deterministic augmentation suite for auxiliary-model training.

Transforms mimic defects seen in handwritten scans: rotation, contrast
change, translation, pen-stroke-like black spots, white spots, and dashed
lines. Factor conventions follow the common augmentation-layer usage:
rotation factor is a fraction of a full turn (0.05 -> +/-18 degrees) and
contrast scale is drawn from [1 - f, 1 + f]. Vacated pixels are filled with
white (1.0), the paper background, so no fake ink is fabricated.

Every transform takes an explicit numpy Generator; `augment` derives one
independent stream per transform from (config.seed, sample counter), so a
config change for one transform never shifts the draws of another.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

BACKGROUND = 1.0


@dataclass(frozen=True)
class SpotParams:
    count: tuple[int, int] = (0, 3)
    radius: tuple[float, float] = (1.0, 3.0)

    def __post_init__(self):
        if self.count[0] > self.count[1] or self.count[0] < 0:
            raise ValueError(f"bad spot count range {self.count}")
        if self.radius[0] > self.radius[1] or self.radius[0] < 0:
            raise ValueError(f"bad spot radius range {self.radius}")


@dataclass(frozen=True)
class DashedLineParams:
    count: tuple[int, int] = (0, 2)
    length: tuple[float, float] = (6.0, 20.0)
    gap: float = 3.0

    def __post_init__(self):
        if self.count[0] > self.count[1] or self.count[0] < 0:
            raise ValueError(f"bad line count range {self.count}")
        if self.length[0] > self.length[1] or self.length[0] < 0:
            raise ValueError(f"bad line length range {self.length}")
        if self.gap <= 0:
            raise ValueError("gap must be positive")


@dataclass(frozen=True)
class AugmentConfig:
    rotation_factor: float = 0.05
    contrast_factor: float = 0.5
    translation_fraction: float = 0.2
    black_spots: SpotParams = field(default_factory=SpotParams)
    white_spots: SpotParams = field(default_factory=SpotParams)
    dashed_lines: DashedLineParams = field(default_factory=DashedLineParams)
    seed: int = 0

    def __post_init__(self):
        if self.rotation_factor < 0 or self.contrast_factor < 0:
            raise ValueError("factors must be >= 0")
        if not 0 <= self.translation_fraction <= 1:
            raise ValueError("translation_fraction must be in [0, 1]")

    @classmethod
    def disabled(cls, seed: int = 0) -> "AugmentConfig":
        """A config under which augment() is an exact no-op."""
        return cls(rotation_factor=0.0, contrast_factor=0.0, translation_fraction=0.0,
                   black_spots=SpotParams(count=(0, 0)), white_spots=SpotParams(count=(0, 0)),
                   dashed_lines=DashedLineParams(count=(0, 0)), seed=seed)


def draw_rotation_angle(factor: float, rng: np.random.Generator) -> float:
    """Angle in degrees, uniform over [-factor*360, +factor*360]."""
    bound = factor * 360.0
    return float(rng.uniform(-bound, bound))


def rotate(img: np.ndarray, factor: float, rng: np.random.Generator) -> np.ndarray:
    """Rotate about the image center with bilinear resampling, white fill."""
    if factor == 0:
        return img.copy()
    angle = draw_rotation_angle(factor, rng)
    out = ndimage.rotate(img, angle, axes=(1, 0), reshape=False, order=1,
                         mode="constant", cval=BACKGROUND)
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def adjust_contrast(img: np.ndarray, factor: float, rng: np.random.Generator) -> np.ndarray:
    """Scale deviations from the image mean by s ~ U[1 - factor, 1 + factor]."""
    if factor == 0:
        return img.copy()
    s = rng.uniform(1.0 - factor, 1.0 + factor)
    mean = img.mean()
    return np.clip(mean + s * (img - mean), 0.0, 1.0).astype(img.dtype)


def translate(img: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Shift by integer offsets up to floor(fraction * dimension), white fill."""
    if fraction == 0:
        return img.copy()
    h, w = img.shape[:2]
    max_dx = int(math.floor(fraction * w))
    max_dy = int(math.floor(fraction * h))
    dx = int(rng.integers(-max_dx, max_dx + 1)) if max_dx else 0
    dy = int(rng.integers(-max_dy, max_dy + 1)) if max_dy else 0
    if dx == 0 and dy == 0:
        return img.copy()
    out = np.full_like(img, BACKGROUND)
    src_y = slice(max(0, -dy), min(h, h - dy))
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_y = slice(max(0, dy), min(h, h + dy))
    dst_x = slice(max(0, dx), min(w, w + dx))
    out[dst_y, dst_x] = img[src_y, src_x]
    return out


def _disc_coverage(shape: tuple[int, int], cx: float, cy: float, radius: float) -> np.ndarray:
    """Per-pixel coverage of a disc with a 1-px feathered edge, in [0, 1]."""
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    dist = np.hypot(xs - cx, ys - cy)
    return np.clip(radius + 0.5 - dist, 0.0, 1.0)


def _stamp_spots(img: np.ndarray, params: SpotParams, value: float,
                 rng: np.random.Generator) -> np.ndarray:
    n = int(rng.integers(params.count[0], params.count[1] + 1))
    if n == 0:
        return img.copy()
    out = img.astype(np.float64, copy=True)
    h, w = out.shape[:2]
    for _ in range(n):
        radius = rng.uniform(params.radius[0], params.radius[1])
        cx = rng.uniform(0, w - 1)
        cy = rng.uniform(0, h - 1)
        cov = _disc_coverage((h, w), cx, cy, radius)
        if out.ndim == 3:
            cov = cov[:, :, None]
        out = out * (1.0 - cov) + value * cov
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def add_black_spots(img: np.ndarray, params: SpotParams, rng: np.random.Generator) -> np.ndarray:
    """Stamp filled ink discs (value 0) with soft edges."""
    return _stamp_spots(img, params, 0.0, rng)


def add_white_spots(img: np.ndarray, params: SpotParams, rng: np.random.Generator) -> np.ndarray:
    """Stamp paper-colored discs (value 1) with soft edges."""
    return _stamp_spots(img, params, 1.0, rng)


def add_dashed_lines(img: np.ndarray, params: DashedLineParams,
                     rng: np.random.Generator) -> np.ndarray:
    """Draw ink dashes along a random straight line through a random anchor.

    Dash segments and gaps both have length params.gap; the line's total
    extent is drawn from params.length and its orientation from [0, pi).
    """
    n = int(rng.integers(params.count[0], params.count[1] + 1))
    if n == 0:
        return img.copy()
    out = img.copy()
    h, w = out.shape[:2]
    for _ in range(n):
        theta = rng.uniform(0.0, math.pi)
        total = rng.uniform(params.length[0], params.length[1])
        x0 = rng.uniform(0, w - 1)
        y0 = rng.uniform(0, h - 1)
        ux, uy = math.cos(theta), math.sin(theta)
        t = 0.0
        while t <= total:
            if int(t // params.gap) % 2 == 0:  # on-phase
                x = int(round(x0 + t * ux))
                y = int(round(y0 + t * uy))
                if 0 <= x < w and 0 <= y < h:
                    out[y, x] = 0.0
            t += 0.5
    return out


# Transform order is fixed; each index keys an independent RNG stream.
_PIPELINE = ("rotate", "contrast", "translate", "black_spots", "white_spots", "dashed_lines")


def transform_rng(seed: int, counter: int, transform_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, counter, transform_index]))


def augment(img: np.ndarray, config: AugmentConfig, counter: int = 0) -> np.ndarray:
    """Apply the full suite in fixed order, deterministically.

    The output is a pure function of (img, config, counter); the all-disabled
    config returns the input bit-for-bit.
    """
    rngs = [transform_rng(config.seed, counter, k) for k in range(len(_PIPELINE))]
    out = rotate(img, config.rotation_factor, rngs[0])
    out = adjust_contrast(out, config.contrast_factor, rngs[1])
    out = translate(out, config.translation_fraction, rngs[2])
    out = add_black_spots(out, config.black_spots, rngs[3])
    out = add_white_spots(out, config.white_spots, rngs[4])
    out = add_dashed_lines(out, config.dashed_lines, rngs[5])
    return out


def counter_for(sample_id: str, index: int = 0) -> int:
    """Stable per-sample counter derived from the sample id (for parallel use)."""
    import hashlib

    digest = hashlib.sha256(f"{sample_id}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "big")
