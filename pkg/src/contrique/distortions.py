"""Synthetic distortion bank: D types x L severity levels, plus class labels.

Every distortion maps an HxWx3 8-bit RGB array to another array of the same
shape, deterministically given (image, type, level, seed). Severity ladders
are configuration data, not code: the built-in bank below covers blur, noise,
compression, and color families with explicit 5-point ladders, and any other
bank with uniform levels-per-type can be supplied via a config file.
"""

import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .config import derive_seed, config_fingerprint, load_config_file
from .manifest import ImageRecord, load_manifest, write_manifest

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DistortionSpec:
    """One distortion type with its severity ladder (mildest first)."""

    distortion_id: int
    name: str
    level_params: tuple


@dataclass(frozen=True)
class DistortionConfig:
    """Ordered bank of D distortion types with a uniform level count L."""

    distortions: tuple

    def __post_init__(self):
        if not self.distortions:
            raise ValueError("distortion bank must not be empty")
        ids = [d.distortion_id for d in self.distortions]
        if ids != list(range(1, len(ids) + 1)):
            raise ValueError(f"distortion ids must be 1..D in order, got {ids}")
        lengths = {len(d.level_params) for d in self.distortions}
        if len(lengths) != 1:
            raise ValueError(f"levels per type must be uniform, got lengths {lengths}")
        names = [d.name for d in self.distortions]
        if len(set(names)) != len(names):
            raise ValueError("distortion names must be unique")

    @property
    def num_types(self) -> int:
        return len(self.distortions)

    @property
    def levels_per_type(self) -> int:
        return len(self.distortions[0].level_params)

    @property
    def num_classes(self) -> int:
        # all (type, level) pairs plus the reserved pristine class 0
        return self.num_types * self.levels_per_type + 1

    def spec_for(self, distortion_id: int) -> DistortionSpec:
        if not 1 <= distortion_id <= self.num_types:
            raise ValueError(
                f"distortion_id {distortion_id} out of range [1, {self.num_types}]"
            )
        return self.distortions[distortion_id - 1]

    def to_dict(self) -> dict:
        return {
            "distortions": [
                {"id": d.distortion_id, "name": d.name, "params": list(d.level_params)}
                for d in self.distortions
            ]
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DistortionConfig":
        specs = tuple(
            DistortionSpec(d["id"], d["name"], tuple(d["params"]))
            for d in obj["distortions"]
        )
        return cls(distortions=specs)

    @classmethod
    def from_file(cls, path) -> "DistortionConfig":
        return cls.from_dict(load_config_file(path))


def class_label(source_type: str, distortion_id=None, level=None,
                levels_per_type: int = 5) -> int:
    """Auxiliary-task class for a record: 0 for pristine, else a (type, level)
    index in [1, D*L]. UGC records have no synthetic class; calling this on
    one is a usage bug and raises."""
    if source_type == "pristine":
        return 0
    if source_type == "ugc":
        raise ValueError("UGC records have no synthetic distortion class")
    if source_type == "synthetic":
        if distortion_id is None or level is None:
            raise ValueError("synthetic class label requires distortion_id and level")
        if level < 1 or level > levels_per_type:
            raise ValueError(f"level {level} out of range [1, {levels_per_type}]")
        if distortion_id < 1:
            raise ValueError(f"distortion_id must be >= 1, got {distortion_id}")
        return (distortion_id - 1) * levels_per_type + level
    raise ValueError(f"no class label for source_type {source_type!r}")


# --------------------------------------------------------------------------
# distortion implementations
# --------------------------------------------------------------------------

def _check_image(image) -> np.ndarray:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise ValueError(f"expected 8-bit image, got dtype {img.dtype}")
    return img


def _to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def _gaussian_blur(img, sigma, rng):
    out = np.empty_like(img, dtype=np.float64)
    for c in range(3):
        out[..., c] = ndimage.gaussian_filter(
            img[..., c].astype(np.float64), sigma, mode="reflect"
        )
    return _to_uint8(out)


def _motion_kernel(length: int, angle_deg: float) -> np.ndarray:
    k = np.zeros((length, length), dtype=np.float64)
    theta = np.deg2rad(angle_deg)
    c = (length - 1) / 2.0
    for t in np.linspace(-c, c, 4 * length):
        x = int(round(c + t * np.cos(theta)))
        y = int(round(c + t * np.sin(theta)))
        k[y, x] = 1.0
    return k / k.sum()

def _motion_blur(img, length, rng):
    length = int(length)
    if min(img.shape[0], img.shape[1]) < length:
        raise ValueError(
            f"image {img.shape[:2]} smaller than motion kernel length {length}"
        )
    angle = rng.uniform(0.0, 180.0)
    k = _motion_kernel(length, angle)
    out = np.empty_like(img, dtype=np.float64)
    for c in range(3):
        out[..., c] = ndimage.convolve(
            img[..., c].astype(np.float64), k, mode="reflect"
        )
    return _to_uint8(out)


def _white_noise(img, sigma, rng):
    noise = rng.normal(0.0, sigma, size=img.shape)
    return _to_uint8(img.astype(np.float64) + noise)


def _impulse_noise(img, fraction, rng):
    out = img.copy()
    h, w = img.shape[:2]
    n_hit = int(round(fraction * h * w))
    if n_hit == 0:
        return out
    flat = rng.choice(h * w, size=n_hit, replace=False)
    salt = rng.random(n_hit) < 0.5
    ys, xs = np.unravel_index(flat, (h, w))
    out[ys[salt], xs[salt]] = 255
    out[ys[~salt], xs[~salt]] = 0
    return out


def _jpeg(img, quality, rng):
    if min(img.shape[0], img.shape[1]) < 8:
        raise ValueError(f"image {img.shape[:2]} too small for JPEG block coding")
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    return np.asarray(Image.open(buf).convert("RGB"))


def _resample(img, factor, rng):
    h, w = img.shape[:2]
    nh, nw = max(1, int(round(h / factor))), max(1, int(round(w / factor)))
    if nh < 1 or nw < 1:
        raise ValueError(f"image {img.shape[:2]} too small for resample factor {factor}")
    pil = Image.fromarray(img)
    small = pil.resize((nw, nh), Image.BILINEAR)
    back = small.resize((w, h), Image.BILINEAR)
    return np.asarray(back)


def _contrast(img, scale, rng):
    return _to_uint8((img.astype(np.float64) - 128.0) * scale + 128.0)


def _brightness(img, shift, rng):
    return _to_uint8(img.astype(np.float64) + shift)


def _saturation(img, scale, rng):
    # scale chroma around the per-pixel luma; avoids an HSV round trip
    x = img.astype(np.float64)
    luma = x @ np.array([0.299, 0.587, 0.114])
    out = luma[..., None] + (x - luma[..., None]) * scale
    return _to_uint8(out)


def _pixelate(img, block, rng):
    block = int(block)
    h, w = img.shape[:2]
    if min(h, w) < block:
        raise ValueError(f"image {img.shape[:2]} smaller than pixelation block {block}")
    pil = Image.fromarray(img)
    small = pil.resize((max(1, w // block), max(1, h // block)), Image.NEAREST)
    back = small.resize((w, h), Image.NEAREST)
    return np.asarray(back)


_IMPLEMENTATIONS = {
    "gaussian_blur": _gaussian_blur,
    "motion_blur": _motion_blur,
    "white_noise": _white_noise,
    "impulse_noise": _impulse_noise,
    "jpeg": _jpeg,
    "resample": _resample,
    "contrast": _contrast,
    "brightness": _brightness,
    "saturation": _saturation,
    "pixelate": _pixelate,
}

# Severity ladders, mildest to most severe. Parameter values are tuning
# choices made so that PSNR against the source decreases level over level.
DEFAULT_BANK = DistortionConfig(distortions=(
    DistortionSpec(1, "gaussian_blur", (0.8, 1.6, 2.6, 4.0, 6.0)),
    DistortionSpec(2, "motion_blur", (3, 5, 9, 13, 19)),
    DistortionSpec(3, "white_noise", (5.0, 10.0, 18.0, 28.0, 42.0)),
    DistortionSpec(4, "impulse_noise", (0.005, 0.015, 0.04, 0.09, 0.18)),
    DistortionSpec(5, "jpeg", (43, 36, 24, 12, 7)),
    DistortionSpec(6, "resample", (1.5, 2.0, 3.0, 4.5, 7.0)),
    DistortionSpec(7, "contrast", (0.85, 0.7, 0.55, 0.4, 0.25)),
    DistortionSpec(8, "brightness", (12.0, 24.0, 38.0, 55.0, 78.0)),
    DistortionSpec(9, "saturation", (0.75, 0.55, 0.38, 0.2, 0.05)),
    DistortionSpec(10, "pixelate", (2, 3, 4, 6, 9)),
))


def apply_distortion(image, distortion_id: int, level: int, seed: int,
                     config: DistortionConfig = DEFAULT_BANK) -> np.ndarray:
    """Apply one bank distortion at the given severity level.

    Output has the source's exact shape and dtype and is a pure function of
    (image, distortion_id, level, seed).
    """
    img = _check_image(image)
    spec = config.spec_for(distortion_id)
    if not 1 <= level <= config.levels_per_type:
        raise ValueError(
            f"level {level} out of range [1, {config.levels_per_type}]"
        )
    try:
        impl = _IMPLEMENTATIONS[spec.name]
    except KeyError:
        raise ValueError(f"unknown distortion implementation {spec.name!r}") from None
    rng = np.random.default_rng(seed)
    out = impl(img, spec.level_params[level - 1], rng)
    assert out.shape == img.shape and out.dtype == np.uint8
    return out


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio between two 8-bit images, in dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(255.0 ** 2 / mse))


# --------------------------------------------------------------------------
# bank generation
# --------------------------------------------------------------------------

def generate_bank(pristine_manifest, config: DistortionConfig, out_dir,
                  seed: int) -> Path:
    """Materialize the full D*L bank for every pristine source.

    Writes one PNG per (source, type, level) под out_dir/images plus a JSONL
    manifest covering the synthetic images and the pristine originals.
    Reruns with the same seed reproduce the manifest byte for byte: synthetic
    paths are stored relative to the manifest and per-image noise seeds are
    derived from (seed, record id, type, level), not from completion order.
    """
    pristine_manifest = Path(pristine_manifest)
    records = load_manifest(pristine_manifest)
    for rec in records:
        if rec.source_type != "pristine":
            raise ValueError(
                f"bank input must be pristine-only; record {rec.id!r} is "
                f"{rec.source_type!r}"
            )

    out_dir = Path(out_dir)
    images_dir = out_dir / "images"
    images_dir.mkdir(parents=True, exist_ok=True)

    out_records = []
    skipped = []
    for rec in sorted(records, key=lambda r: r.id):
        src_path = Path(rec.path)
        if not src_path.is_absolute():
            src_path = pristine_manifest.parent / src_path
        try:
            img = np.asarray(Image.open(src_path).convert("RGB"))
        except Exception as e:
            logger.warning("skipping unreadable pristine image %s: %s", rec.id, e)
            skipped.append({"id": rec.id, "error": str(e)})
            continue
        out_records.append(ImageRecord(
            id=rec.id, path=str(rec.path), source_type="pristine",
            width=img.shape[1], height=img.shape[0],
        ))
        for spec in config.distortions:
            for level in range(1, config.levels_per_type + 1):
                rec_seed = derive_seed(seed, rec.id, spec.distortion_id, level)
                distorted = apply_distortion(
                    img, spec.distortion_id, level, rec_seed, config
                )
                out_id = f"{rec.id}_d{spec.distortion_id:02d}_l{level}"
                rel = f"images/{out_id}.png"
                Image.fromarray(distorted).save(out_dir / rel)
                out_records.append(ImageRecord(
                    id=out_id, path=rel, source_type="synthetic",
                    distortion_id=spec.distortion_id, level=level,
                    reference_id=rec.id,
                    width=distorted.shape[1], height=distorted.shape[0],
                ))

    out_records.sort(key=lambda r: r.id)
    manifest_path = write_manifest(out_records, out_dir / "manifest.jsonl")
    summary = {
        "n_pristine": len(records) - len(skipped),
        "n_synthetic": sum(1 for r in out_records if r.source_type == "synthetic"),
        "skipped": skipped,
        "seed": seed,
        "bank_fingerprint": config_fingerprint(config.to_dict()),
    }
    with open(out_dir / "bank_summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
        f.write("\n")
    if skipped:
        logger.warning("bank generation skipped %d unreadable images", len(skipped))
    return manifest_path
