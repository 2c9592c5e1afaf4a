"""Procedural toy corpora for desk-scale experiments.

Pristine images are random smooth color fields with superimposed shapes and
texture, large enough to crop from at two scales. UGC-style images take a
fresh pristine source and stack one or two random bank distortions at random
levels, mimicking unlabeled mixed degradations.
"""

from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .config import derive_seed
from .distortions import DEFAULT_BANK, apply_distortion
from .manifest import ImageRecord, write_manifest


def synthetic_pristine_image(seed: int, height: int = 144, width: int = 192) -> np.ndarray:
    """One random textured color image (HxWx3 uint8)."""
    rng = np.random.default_rng(seed)
    # smooth color base: low-res random field upsampled per channel
    base = rng.uniform(40, 215, size=(6, 8, 3))
    img = np.stack([
        ndimage.zoom(base[..., c], (height / 6, width / 8), order=3)
        for c in range(3)
    ], axis=-1)

    yy, xx = np.mgrid[0:height, 0:width]
    for _ in range(rng.integers(4, 9)):
        color = rng.uniform(0, 255, size=3)
        kind = rng.choice(["rect", "disc", "stripe"])
        if kind == "rect":
            y0, x0 = rng.integers(0, height - 8), rng.integers(0, width - 8)
            hh = int(rng.integers(height // 8, height // 2))
            ww = int(rng.integers(width // 8, width // 2))
            img[y0:y0 + hh, x0:x0 + ww] = 0.5 * img[y0:y0 + hh, x0:x0 + ww] + 0.5 * color
        elif kind == "disc":
            cy, cx = rng.integers(0, height), rng.integers(0, width)
            r = rng.integers(min(height, width) // 10, min(height, width) // 3)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2
            img[mask] = 0.6 * img[mask] + 0.4 * color
        else:
            period = rng.integers(6, 24)
            phase = rng.uniform(0, 2 * np.pi)
            angle = rng.uniform(0, np.pi)
            wave = np.sin(2 * np.pi * (yy * np.sin(angle) + xx * np.cos(angle))
                          / period + phase)
            img += 18.0 * wave[..., None] * rng.uniform(0.3, 1.0, size=3)

    # fine texture so blur/noise/compression ladders are all visible
    img += rng.normal(0, 6.0, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def ugc_style_image(seed: int, height: int = 144, width: int = 192,
                    bank=DEFAULT_BANK) -> np.ndarray:
    """A unique image with one or two random mixed distortions baked in."""
    rng = np.random.default_rng(seed)
    img = synthetic_pristine_image(int(rng.integers(1 << 31)), height, width)
    for _ in range(int(rng.integers(1, 3))):
        d = int(rng.integers(1, bank.num_types + 1))
        level = int(rng.integers(1, bank.levels_per_type + 1))
        img = apply_distortion(img, d, level, int(rng.integers(1 << 31)), bank)
    return img


def generate_toy_corpus(out_dir, n_pristine: int, n_ugc: int, seed: int = 0,
                        height: int = 144, width: int = 192) -> tuple[Path, Path]:
    """Write pristine + UGC image sets with their manifests.

    Returns (pristine_manifest, ugc_manifest); paths inside are relative to
    each manifest's directory.
    """
    out_dir = Path(out_dir)
    pris_dir = out_dir / "pristine"
    ugc_dir = out_dir / "ugc"
    pris_dir.mkdir(parents=True, exist_ok=True)
    ugc_dir.mkdir(parents=True, exist_ok=True)

    pris_records = []
    for i in range(n_pristine):
        img = synthetic_pristine_image(derive_seed(seed, "pristine", i),
                                       height, width)
        rec_id = f"pris_{i:04d}"
        rel = f"images/{rec_id}.png"
        (pris_dir / "images").mkdir(exist_ok=True)
        Image.fromarray(img).save(pris_dir / rel)
        pris_records.append(ImageRecord(
            id=rec_id, path=rel, source_type="pristine",
            width=width, height=height,
        ))
    pris_manifest = write_manifest(pris_records, pris_dir / "manifest.jsonl")

    ugc_records = []
    for i in range(n_ugc):
        img = ugc_style_image(derive_seed(seed, "ugc", i), height, width)
        rec_id = f"ugc_{i:04d}"
        rel = f"images/{rec_id}.png"
        (ugc_dir / "images").mkdir(exist_ok=True)
        Image.fromarray(img).save(ugc_dir / rel)
        ugc_records.append(ImageRecord(
            id=rec_id, path=rel, source_type="ugc",
            width=width, height=height,
        ))
    ugc_manifest = write_manifest(ugc_records, ugc_dir / "manifest.jsonl")
    return pris_manifest, ugc_manifest
