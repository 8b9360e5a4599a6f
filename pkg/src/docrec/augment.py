"""Image augmentation for training.

Nine pixel-level transforms — resolution change, perspective warp, elastic
distortion, ink dilation, ink erosion, color jitter, Gaussian blur, Gaussian
noise, and sharpening — are applied in a random order, each with its own
trigger probability, behind a single pipeline gate.  All randomness flows
through one generator, so augmentation is reproducible from a seed.

Images are grayscale uint8 rasters with white (255) background and dark ink;
"dilation" and "erosion" refer to the ink strokes, i.e. grayscale minimum
and maximum filters respectively.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class AugmentConfig:
    """Transform parameters; the source material leaves these ranges open,
    so the defaults are deliberately conservative."""

    pipeline_prob: float = 0.90
    transform_prob: float = 0.10
    resolution_range: tuple[float, float] = (0.6, 1.4)
    perspective_max: float = 0.04        # corner shift, fraction of image size
    elastic_alpha: tuple[float, float] = (6.0, 14.0)
    elastic_sigma: tuple[float, float] = (3.0, 5.0)
    morph_sizes: tuple[int, ...] = (3,)
    brightness_max: float = 0.15         # fraction of full scale
    contrast_range: tuple[float, float] = (0.8, 1.2)
    blur_sigma: tuple[float, float] = (0.4, 1.2)
    noise_sigma: tuple[float, float] = (4.0, 12.0)
    sharpen_amount: tuple[float, float] = (0.4, 1.2)
    min_side: int = 8                    # resolution change never goes below

    def __post_init__(self):
        for name in ("pipeline_prob", "transform_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        positive_lo = ("resolution_range", "elastic_sigma", "contrast_range",
                       "blur_sigma")
        for name in positive_lo + ("elastic_alpha", "noise_sigma",
                                   "sharpen_amount"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} bounds are out of order")
            if lo < 0 or (name in positive_lo and lo <= 0):
                raise ValueError(f"{name} lower bound is too small")
        if self.perspective_max < 0:
            raise ValueError("perspective_max must be non-negative")
        if not 0.0 <= self.brightness_max <= 1.0:
            raise ValueError("brightness_max must be in [0, 1]")
        if not self.morph_sizes or any(
                s < 1 or s % 2 == 0 for s in self.morph_sizes):
            # even windows are asymmetric, which would break the guarantee
            # that dilation followed by erosion never loses ink
            raise ValueError("morphology sizes must be odd and positive")
        if self.min_side < 1:
            raise ValueError("min_side must be at least 1")


def _as_float(image: np.ndarray) -> np.ndarray:
    return np.asarray(image, dtype=np.float64)


def _as_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(image), 0, 255).astype(np.uint8)


def resolution_change(image: np.ndarray, rng: np.random.Generator,
                      cfg: AugmentConfig) -> np.ndarray:
    lo, hi = cfg.resolution_range
    factor = rng.uniform(lo, hi)
    h, w = image.shape
    oh = max(cfg.min_side, round(h * factor))
    ow = max(cfg.min_side, round(w * factor))
    ys = np.clip((np.arange(oh) + 0.5) * (h / oh) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(ow) + 0.5) * (w / ow) - 0.5, 0, w - 1)
    grid = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(_as_float(image), grid, order=1, mode="nearest")


def _homography(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """3x3 projective map sending each src corner to its dst corner."""
    rows = []
    rhs = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs.extend([u, v])
    h = np.linalg.solve(np.array(rows, dtype=np.float64), np.array(rhs))
    return np.append(h, 1.0).reshape(3, 3)


def perspective_warp(image: np.ndarray, rng: np.random.Generator,
                     cfg: AugmentConfig) -> np.ndarray:
    h, w = image.shape
    shift = cfg.perspective_max * min(h, w)
    corners = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]],
                       dtype=np.float64)
    jittered = corners + rng.uniform(-shift, shift, size=(4, 2))
    # map output pixels back to input coordinates
    m = _homography(corners, jittered)
    ys, xs = np.mgrid[0:h, 0:w]
    ones = np.ones_like(xs, dtype=np.float64)
    coords = np.stack([xs, ys, ones])
    mapped = np.tensordot(m, coords.reshape(3, -1), axes=1)
    px = (mapped[0] / mapped[2]).reshape(h, w)
    py = (mapped[1] / mapped[2]).reshape(h, w)
    return ndimage.map_coordinates(_as_float(image), [py, px], order=1,
                                   mode="constant", cval=255.0)


def elastic_distortion(image: np.ndarray, rng: np.random.Generator,
                       cfg: AugmentConfig) -> np.ndarray:
    h, w = image.shape
    alpha = rng.uniform(*cfg.elastic_alpha)
    sigma = rng.uniform(*cfg.elastic_sigma)
    dy = ndimage.gaussian_filter(rng.uniform(-1, 1, (h, w)), sigma) * alpha
    dx = ndimage.gaussian_filter(rng.uniform(-1, 1, (h, w)), sigma) * alpha
    ys, xs = np.mgrid[0:h, 0:w]
    return ndimage.map_coordinates(_as_float(image), [ys + dy, xs + dx],
                                   order=1, mode="nearest")


def ink_dilation(image: np.ndarray, rng: np.random.Generator,
                 cfg: AugmentConfig) -> np.ndarray:
    size = int(rng.choice(cfg.morph_sizes))
    return ndimage.minimum_filter(image, size=size)


def ink_erosion(image: np.ndarray, rng: np.random.Generator,
                cfg: AugmentConfig) -> np.ndarray:
    size = int(rng.choice(cfg.morph_sizes))
    return ndimage.maximum_filter(image, size=size)


def color_jitter(image: np.ndarray, rng: np.random.Generator,
                 cfg: AugmentConfig) -> np.ndarray:
    out = _as_float(image)
    contrast = rng.uniform(*cfg.contrast_range)
    brightness = rng.uniform(-cfg.brightness_max, cfg.brightness_max) * 255.0
    mean = out.mean()
    return (out - mean) * contrast + mean + brightness


def gaussian_blur(image: np.ndarray, rng: np.random.Generator,
                  cfg: AugmentConfig) -> np.ndarray:
    return ndimage.gaussian_filter(_as_float(image), rng.uniform(*cfg.blur_sigma))


def gaussian_noise(image: np.ndarray, rng: np.random.Generator,
                   cfg: AugmentConfig) -> np.ndarray:
    sigma = rng.uniform(*cfg.noise_sigma)
    return _as_float(image) + rng.normal(0.0, sigma, image.shape)


def sharpen(image: np.ndarray, rng: np.random.Generator,
            cfg: AugmentConfig) -> np.ndarray:
    amount = rng.uniform(*cfg.sharpen_amount)
    arr = _as_float(image)
    return arr + amount * (arr - ndimage.gaussian_filter(arr, 1.0))


TRANSFORMS = (
    resolution_change,
    perspective_warp,
    elastic_distortion,
    ink_dilation,
    ink_erosion,
    color_jitter,
    gaussian_blur,
    gaussian_noise,
    sharpen,
)


def augment(image: np.ndarray, rng: np.random.Generator,
            cfg: AugmentConfig | None = None) -> np.ndarray:
    """Randomly transformed copy of a grayscale uint8 image.

    With probability ``1 - pipeline_prob`` nothing is applied; otherwise the
    nine transforms are visited in a random order and each fires with
    probability ``transform_prob``.  Output dimensions may differ from the
    input when the resolution change fires.
    """
    cfg = cfg or AugmentConfig()
    if image.ndim != 2:
        raise ValueError(f"expected a 2D grayscale image, got shape {image.shape}")
    if rng.random() >= cfg.pipeline_prob:
        return np.array(image, dtype=np.uint8, copy=True)
    out = np.asarray(image)
    for idx in rng.permutation(len(TRANSFORMS)):
        if rng.random() < cfg.transform_prob:
            out = TRANSFORMS[idx](out, rng, cfg)
    return _as_uint8(out)
