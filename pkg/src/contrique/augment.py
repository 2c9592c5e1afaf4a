"""Training-view construction: anti-aliased half-scale, random M x M crops
with zero padding, random colorspace selection, horizontal flips, patch
tiling, and balanced batch assembly.

Only quality-preserving operations are exposed here; aggressive augmentations
(color jitter, random-resize, blur-as-augmentation, MixUp) alter distortion
statistics and are deliberately not part of this API.
"""

import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .colorspace import COLORSPACES, convert_color
from .distortions import class_label

ANTIALIAS_SIZE = 5
ANTIALIAS_SIGMA = 1.0


@dataclass(frozen=True)
class ViewInstance:
    """One augmented crop (or patch) with its contrastive group key.

    ``group_key`` is "class:<label>" for synthetic/pristine sources and
    "ugc:<id>" for authentic ones; the two crops of a source share it.
    ``source_key`` identifies the originating image so per-source terms can
    be averaged in the training objective.
    """

    tensor: np.ndarray  # 3 x M x M float32 in [0, 1]
    group_key: str
    is_ugc: bool
    scale: str          # "full" | "half"
    colorspace: str
    origin: str = "crop"  # "crop" | "patch"
    source_key: str = ""

    def __post_init__(self):
        t = self.tensor
        if t.ndim != 3 or t.shape[0] != 3 or t.shape[1] != t.shape[2]:
            raise ValueError(f"view tensor must be 3xMxM, got {t.shape}")


@dataclass
class TrainingBatch:
    """Views of one training step plus the source -> view-index pairing."""

    views: list
    pairing: dict = field(default_factory=dict)

    def validate(self):
        # balance is over sampled slots (a pool smaller than n/2 may repeat a
        # source, which then simply contributes more mutual positives)
        n_syn = sum(1 for v in self.views if not v.is_ugc)
        n_ugc = sum(1 for v in self.views if v.is_ugc)
        if n_syn != n_ugc:
            raise ValueError(f"unbalanced batch: {n_syn} synthetic vs {n_ugc} ugc views")
        for src, idxs in self.pairing.items():
            if len(idxs) < 2:
                raise ValueError(f"source {src!r} contributes {len(idxs)} view(s); need >= 2")


def downscale_half(image) -> np.ndarray:
    """Anti-aliased 2x downscale to ceil(H/2) x ceil(W/2), aspect preserved.

    5x5 separable Gaussian (sigma 1.0, reflect padding) then decimation, so
    energy at the old Nyquist frequency is strongly attenuated before
    subsampling. Returns float64 in the input's value range.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim not in (2, 3):
        raise ValueError(f"expected HxW or HxWx3 image, got shape {img.shape}")
    h, w = img.shape[0], img.shape[1]
    if h < 2 or w < 2:
        raise ValueError(f"image {img.shape[:2]} too small to halve")
    half = (ANTIALIAS_SIZE - 1) / 2.0
    x = np.arange(ANTIALIAS_SIZE) - half
    k = np.exp(-(x ** 2) / (2.0 * ANTIALIAS_SIGMA ** 2))
    k /= k.sum()
    out = ndimage.convolve1d(img, k, axis=0, mode="reflect")
    out = ndimage.convolve1d(out, k, axis=1, mode="reflect")
    return out[::2, ::2]


def random_crop(image, m: int, rng: np.random.Generator) -> np.ndarray:
    """Random contiguous M x M crop; smaller inputs are centered on a zero
    canvas (symmetric padding, extra pixel toward bottom/right)."""
    img = np.asarray(image)
    if m < 1:
        raise ValueError(f"crop size must be >= 1, got {m}")
    h, w = img.shape[0], img.shape[1]
    chans = img.shape[2:] if img.ndim == 3 else ()

    out = np.zeros((m, m) + chans, dtype=img.dtype)
    if h >= m:
        top = int(rng.integers(0, h - m + 1))
        rows_src = slice(top, top + m)
        rows_dst = slice(0, m)
    else:
        pad = (m - h) // 2
        rows_src = slice(0, h)
        rows_dst = slice(pad, pad + h)
    if w >= m:
        left = int(rng.integers(0, w - m + 1))
        cols_src = slice(left, left + m)
        cols_dst = slice(0, m)
    else:
        pad = (m - w) // 2
        cols_src = slice(0, w)
        cols_dst = slice(pad, pad + w)
    out[rows_dst, cols_dst] = img[rows_src, cols_src]
    return out


def hflip(tensor: np.ndarray) -> np.ndarray:
    """Horizontal flip of a CxHxW tensor (involution)."""
    return np.ascontiguousarray(tensor[..., ::-1])


@functools.lru_cache(maxsize=1024)
def _load_image_cached(path: str) -> np.ndarray:
    img = np.asarray(Image.open(path).convert("RGB"))
    img.setflags(write=False)
    return img


def load_image(path) -> np.ndarray:
    """Read an image file as HxWx3 uint8 (cached, read-only)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    return _load_image_cached(str(path))


def group_key_for(record, levels_per_type: int) -> tuple[str, bool]:
    """Contrastive group for a record: distortion class, or its own identity
    for UGC. Returns (key, is_ugc)."""
    if record.source_type == "ugc":
        return f"ugc:{record.id}", True
    label = class_label(record.source_type, record.distortion_id,
                        record.level, levels_per_type)
    return f"class:{label}", False


def view_pair_from_image(image, group_key: str, is_ugc: bool, m: int,
                         rng: np.random.Generator,
                         colorspaces=COLORSPACES, flip_prob: float = 0.5,
                         source_key: str = "") -> tuple:
    """Build the (full-scale, half-scale) view pair for one image.

    Each view draws its own crop position, colorspace, and flip coin; the
    half-scale path downsamples first and crops from the smaller image.
    """
    views = []
    for scale in ("full", "half"):
        base = image if scale == "full" else downscale_half(image)
        crop = random_crop(base, m, rng)
        space = str(rng.choice(list(colorspaces)))
        tensor = convert_color(crop, space)
        if rng.random() < flip_prob:
            tensor = hflip(tensor)
        views.append(ViewInstance(
            tensor=tensor, group_key=group_key, is_ugc=is_ugc, scale=scale,
            colorspace=space, origin="crop", source_key=source_key or group_key,
        ))
    return tuple(views)


def make_views(record, m: int, rng: np.random.Generator,
               levels_per_type: int = 5, colorspaces=COLORSPACES,
               flip_prob: float = 0.5, manifest_dir=None) -> tuple:
    """Two augmented views (full + half scale) of a manifest record."""
    path = Path(record.path)
    if not path.is_absolute() and manifest_dir is not None:
        path = Path(manifest_dir) / path
    image = load_image(path)
    key, is_ugc = group_key_for(record, levels_per_type)
    return view_pair_from_image(image, key, is_ugc, m, rng,
                                colorspaces=colorspaces, flip_prob=flip_prob,
                                source_key=record.id)


def tile_tensor(tensor: np.ndarray, p: int) -> list:
    """Partition a CxMxM tensor into (M/P)^2 non-overlapping CxPxP tiles,
    row-major. P must divide M."""
    c, m, m2 = tensor.shape
    if m != m2:
        raise ValueError(f"expected square tensor, got {tensor.shape}")
    if p < 1 or m % p != 0:
        raise ValueError(f"patch size {p} must divide crop size {m}")
    g = m // p
    return [
        np.ascontiguousarray(tensor[:, i * p:(i + 1) * p, j * p:(j + 1) * p])
        for i in range(g) for j in range(g)
    ]


def partition_patches(view: ViewInstance, p: int) -> list:
    """Tile a crop view into patch views inheriting its group and flags."""
    return [
        ViewInstance(tensor=t, group_key=view.group_key, is_ugc=view.is_ugc,
                     scale=view.scale, colorspace=view.colorspace,
                     origin="patch", source_key=view.source_key)
        for t in tile_tensor(view.tensor, p)
    ]


def _sample_pool(pool, count: int, rng: np.random.Generator):
    if not pool:
        raise ValueError("cannot sample from an empty pool")
    replace = len(pool) < count
    idx = rng.choice(len(pool), size=count, replace=replace)
    return [pool[int(i)] for i in idx]


def assemble_batch(synthetic_pool, ugc_pool, n_images: int,
                   rng: np.random.Generator, m: int = 96,
                   levels_per_type: int = 5, colorspaces=COLORSPACES,
                   flip_prob: float = 0.5, manifest_dirs=(None, None)) -> TrainingBatch:
    """Balanced batch: n_images/2 sources from each pool, two views each."""
    if n_images < 2 or n_images % 2 != 0:
        raise ValueError(f"n_images must be even and >= 2, got {n_images}")
    half = n_images // 2
    chosen = [
        (rec, manifest_dirs[0]) for rec in _sample_pool(synthetic_pool, half, rng)
    ] + [
        (rec, manifest_dirs[1]) for rec in _sample_pool(ugc_pool, half, rng)
    ]
    views = []
    pairing = {}
    for rec, mdir in chosen:
        pair = make_views(rec, m, rng, levels_per_type=levels_per_type,
                          colorspaces=colorspaces, flip_prob=flip_prob,
                          manifest_dir=mdir)
        idxs = []
        for v in pair:
            idxs.append(len(views))
            views.append(v)
        pairing.setdefault(rec.id, []).extend(idxs)
    batch = TrainingBatch(views=views, pairing=pairing)
    batch.validate()
    return batch
