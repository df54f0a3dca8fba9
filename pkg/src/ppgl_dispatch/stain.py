"""CIE LAB statistic alignment of slide colours to a reference distribution.

Images are float arrays of shape (height, width, 3) with sRGB values in [0, 1].
Tissue masks are boolean arrays of shape (height, width).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .cases import StainStats

DEFAULT_EPSILON = 1e-6
DEFAULT_TISSUE_THRESHOLD = 85.0

# IEC 61966-2-1 linear sRGB -> XYZ
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
# D65 white as the image of RGB (1, 1, 1), so white maps to a = b = 0 exactly
WHITE_D65 = _RGB_TO_XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0


class NoTissueError(ValueError):
    """Raised when a mask selects too few pixels to estimate statistics."""


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError(f"image must have shape (height, width, 3), got {image.shape}")
    if not np.all(np.isfinite(image)) or image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("image channel values must lie in [0, 1]")
    return image


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.maximum(c, 0.0)
    return np.where(c <= 0.0031308, c * 12.92, 1.055 * c ** (1.0 / 2.4) - 0.055)


def _f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA**3, np.cbrt(t), t / (3 * _DELTA**2) + 4.0 / 29.0)


def _f_inv(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA, t**3, 3 * _DELTA**2 * (t - 4.0 / 29.0))


def rgb_to_lab(image: np.ndarray) -> np.ndarray:
    """sRGB in [0, 1] to CIE L*a*b* under D65. Works on any (..., 3) array."""
    rgb = np.asarray(image, dtype=np.float64)
    xyz = _srgb_to_linear(rgb) @ _RGB_TO_XYZ.T
    fx, fy, fz = (_f(xyz[..., i] / WHITE_D65[i]) for i in range(3))
    return np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)


def lab_to_rgb(lab: np.ndarray, clip: bool = True) -> np.ndarray:
    """Inverse of rgb_to_lab. Out-of-gamut results are clamped to [0, 1] unless clip=False."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_f_inv(fx), _f_inv(fy), _f_inv(fz)], axis=-1) * WHITE_D65
    rgb = _linear_to_srgb(xyz @ _XYZ_TO_RGB.T)
    return np.clip(rgb, 0.0, 1.0) if clip else rgb


def tissue_mask(image: np.ndarray, luminance_threshold: float = DEFAULT_TISSUE_THRESHOLD) -> np.ndarray:
    """Flag pixels darker than the threshold; near-white background is excluded."""
    if not 0 < luminance_threshold < 100:
        raise ValueError(f"luminance_threshold must be in (0, 100), got {luminance_threshold}")
    return rgb_to_lab(_check_image(image))[..., 0] < luminance_threshold


def compute_stain_stats(lab_image: np.ndarray, mask: np.ndarray) -> StainStats:
    """Per-channel mean and population std over masked pixels (std may be 0)."""
    mean, std = masked_moments(lab_image, mask)
    return StainStats(*mean.tolist(), *std.tolist())


def masked_moments(lab_image: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lab_image = np.asarray(lab_image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != lab_image.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {lab_image.shape[:2]}")
    n = int(mask.sum())
    if n < 2:
        raise NoTissueError(f"need at least 2 tissue pixels, mask selects {n}")
    px = lab_image[mask]
    mean = px.mean(axis=0)
    std = np.sqrt(((px - mean) ** 2).mean(axis=0))
    return mean, std


def align_lab(
    lab_image: np.ndarray,
    mask: np.ndarray,
    target: StainStats,
    epsilon: float = DEFAULT_EPSILON,
) -> np.ndarray:
    """Apply the per-channel affine alignment in LAB space, before any gamut clamping.

    Source statistics come from the masked pixels; the map is applied to every pixel.
    """
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    target.require_positive_std()
    mu_src, sd_src = masked_moments(lab_image, mask)
    mu_tgt = np.asarray(target.mean)
    sd_tgt = np.asarray(target.std)
    return sd_tgt * (np.asarray(lab_image, dtype=np.float64) - mu_src) / (sd_src + epsilon) + mu_tgt


def normalize(
    image: np.ndarray,
    target: StainStats,
    epsilon: float = DEFAULT_EPSILON,
    luminance_threshold: float = DEFAULT_TISSUE_THRESHOLD,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Colour-normalise an RGB image to target tissue statistics; returns RGB clamped to [0, 1]."""
    image = _check_image(image)
    lab = rgb_to_lab(image)
    if mask is None:
        mask = lab[..., 0] < luminance_threshold
    return lab_to_rgb(align_lab(lab, mask, target, epsilon))


# --- image I/O --------------------------------------------------------------


def read_png(path: str | Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_png(image: np.ndarray, path: str | Path) -> None:
    from PIL import Image

    arr = np.rint(_check_image(image) * 255.0).astype(np.uint8)
    Image.fromarray(arr).save(path)


def read_raw(path: str | Path) -> np.ndarray:
    """Read the exact-value debug format: {"width", "height", "pixels": [[r, g, b], ...]}."""
    d = json.loads(Path(path).read_text("utf-8"))
    w, h = int(d["width"]), int(d["height"])
    px = np.asarray(d["pixels"], dtype=np.float64)
    if px.shape != (w * h, 3):
        raise ValueError(f"expected {w * h} pixels of 3 channels, got shape {px.shape}")
    return _check_image(px.reshape(h, w, 3))


def write_raw(image: np.ndarray, path: str | Path) -> None:
    image = _check_image(image)
    h, w, _ = image.shape
    d = {"width": w, "height": h, "pixels": image.reshape(-1, 3).tolist()}
    Path(path).write_text(json.dumps(d), "utf-8")


def read_image(path: str | Path) -> np.ndarray:
    return read_raw(path) if str(path).endswith(".json") else read_png(path)


def write_image(image: np.ndarray, path: str | Path) -> None:
    if str(path).endswith(".json"):
        write_raw(image, path)
    else:
        write_png(image, path)
