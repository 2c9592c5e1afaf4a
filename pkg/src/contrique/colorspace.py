"""Quality-preserving color transforms: RGB, LAB, HSV, grayscale, and a
local mean-subtraction (MS) band-pass channel.

Every transform returns a 3xHxW float32 tensor with channels mapped into
[0, 1] by the space's nominal range; single-channel spaces replicate their
channel three times so one encoder serves all spaces.
"""

import numpy as np
from scipy import ndimage

COLORSPACES = ("RGB", "LAB", "HSV", "GRAY", "MS")

# sRGB <-> XYZ (D65 white point), IEC 61966-2-1
_RGB_TO_XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])

# Local-mean window for the MS transform: 7x7 Gaussian, sigma = 7/6, the
# window conventionally used for scene-statistics features.
MS_WINDOW_SIZE = 7
MS_WINDOW_SIGMA = 7.0 / 6.0


def _as_unit_rgb(image) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 RGB image, got shape {img.shape}")
    if img.dtype == np.uint8:
        return img.astype(np.float64) / 255.0
    img = img.astype(np.float64)
    if img.min() < -1e-6 or img.max() > 255.0 + 1e-6:
        raise ValueError("float image values must lie in [0, 255]")
    return img / 255.0


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def _lab_f(t: np.ndarray) -> np.ndarray:
    delta = 6.0 / 29.0
    return np.where(t > delta ** 3, np.cbrt(t), t / (3 * delta ** 2) + 4.0 / 29.0)


def rgb_to_lab(rgb01: np.ndarray) -> np.ndarray:
    """CIE LAB from unit-range sRGB; returns HxWx3 with L in [0,100]."""
    linear = _srgb_to_linear(rgb01)
    xyz = linear @ _RGB_TO_XYZ.T
    fxyz = _lab_f(xyz / _WHITE_D65)
    L = 116.0 * fxyz[..., 1] - 16.0
    a = 500.0 * (fxyz[..., 0] - fxyz[..., 1])
    b = 200.0 * (fxyz[..., 1] - fxyz[..., 2])
    return np.stack([L, a, b], axis=-1)


def rgb_to_hsv(rgb01: np.ndarray) -> np.ndarray:
    """HSV with all channels in [0,1] (hue as fraction of the circle)."""
    r, g, b = rgb01[..., 0], rgb01[..., 1], rgb01[..., 2]
    maxc = rgb01.max(axis=-1)
    minc = rgb01.min(axis=-1)
    delta = maxc - minc
    v = maxc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1.0), 0.0)

    with np.errstate(invalid="ignore", divide="ignore"):
        safe = np.where(delta > 0, delta, 1.0)
        hr = ((g - b) / safe) % 6.0
        hg = (b - r) / safe + 2.0
        hb = (r - g) / safe + 4.0
    h = np.where(maxc == r, hr, np.where(maxc == g, hg, hb))
    h = np.where(delta > 0, h / 6.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def rgb_to_gray(rgb01: np.ndarray) -> np.ndarray:
    """Rec. 601 luma in [0,1]."""
    return rgb01 @ np.array([0.299, 0.587, 0.114])


def _gaussian_window_1d(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    w = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return w / w.sum()


def mean_subtract(gray01: np.ndarray) -> np.ndarray:
    """Band-pass MS coefficients: signal minus its Gaussian local mean.

    Zero for constant inputs; near zero-mean on large images. Bounded in
    [-1, 1] for unit-range inputs.
    """
    w = _gaussian_window_1d(MS_WINDOW_SIZE, MS_WINDOW_SIGMA)
    local_mean = ndimage.convolve1d(gray01, w, axis=0, mode="reflect")
    local_mean = ndimage.convolve1d(local_mean, w, axis=1, mode="reflect")
    return gray01 - local_mean


def convert_color(image, space: str) -> np.ndarray:
    """Convert an 8-bit RGB image (HxWx3) to a 3xHxW float32 tensor in [0,1].

    Spaces: RGB (identity /255), LAB (L/100, (a+128)/255, (b+128)/255), HSV,
    GRAY (luma replicated), MS (mean-subtracted luma mapped x/2 + 0.5, so a
    flat image lands at 0.5).
    """
    rgb01 = _as_unit_rgb(image)
    if space == "RGB":
        chans = rgb01
    elif space == "LAB":
        lab = rgb_to_lab(rgb01)
        chans = np.stack([
            lab[..., 0] / 100.0,
            (lab[..., 1] + 128.0) / 255.0,
            (lab[..., 2] + 128.0) / 255.0,
        ], axis=-1)
    elif space == "HSV":
        chans = rgb_to_hsv(rgb01)
    elif space == "GRAY":
        g = rgb_to_gray(rgb01)
        chans = np.stack([g, g, g], axis=-1)
    elif space == "MS":
        ms = mean_subtract(rgb_to_gray(rgb01))
        mapped = ms / 2.0 + 0.5
        chans = np.stack([mapped, mapped, mapped], axis=-1)
    else:
        raise ValueError(f"unknown colorspace {space!r}; expected one of {COLORSPACES}")
    tensor = np.ascontiguousarray(np.moveaxis(chans, -1, 0), dtype=np.float32)
    return np.clip(tensor, 0.0, 1.0)
