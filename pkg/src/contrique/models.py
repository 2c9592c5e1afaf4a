"""Encoder f and projector g.

The encoder maps a 3xMxM view to a unit-norm representation h via a small
residual CNN with global average pooling; the projector is a 2-layer MLP
producing the contrastive embedding z. Patch-level features come from an
adaptive average pool over the final spatial feature map. Evaluation features
concatenate h at native and anti-aliased half resolution with the projector
discarded.

Group normalization keeps forward passes batch-independent, so inference is
deterministic and training/eval modes agree.
"""

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .augment import downscale_half
from .colorspace import convert_color

CHECKPOINT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class EncoderSpec:
    widths: tuple = (16, 32, 64, 128)
    patch_grid: int = 2

    @property
    def feature_dim(self) -> int:
        return self.widths[-1]


@dataclass(frozen=True)
class ProjectorSpec:
    hidden_dim: int = 256
    output_dim: int = 64


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(min(8, channels), channels)


class ResidualBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False)
        self.n1 = _norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1, bias=False)
        self.n2 = _norm(c_out)
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Sequential(
                nn.Conv2d(c_in, c_out, 1, stride=stride, bias=False), _norm(c_out)
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = F.relu(self.n1(self.conv1(x)))
        out = self.n2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class Encoder(nn.Module):
    """Residual feature extractor; total spatial downsampling factor 8."""

    def __init__(self, spec: EncoderSpec = EncoderSpec()):
        super().__init__()
        self.spec = spec
        w = spec.widths
        self.stem = nn.Sequential(
            nn.Conv2d(3, w[0], 3, padding=1, bias=False), _norm(w[0]), nn.ReLU()
        )
        blocks = []
        c_prev = w[0]
        for i, c in enumerate(w):
            blocks.append(ResidualBlock(c_prev, c, stride=1 if i == 0 else 2))
            c_prev = c
        self.stages = nn.Sequential(*blocks)

    def feature_map(self, x: torch.Tensor) -> torch.Tensor:
        return self.stages(self.stem(x))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        fmap = self.feature_map(x)
        pooled = fmap.mean(dim=(2, 3))
        return F.normalize(pooled, dim=1, eps=1e-12)


class Projector(nn.Module):
    def __init__(self, in_dim: int, spec: ProjectorSpec = ProjectorSpec()):
        super().__init__()
        self.spec = spec
        self.net = nn.Sequential(
            nn.Linear(in_dim, spec.hidden_dim),
            nn.ReLU(),
            nn.Linear(spec.hidden_dim, spec.output_dim),
        )

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.net(h)


def encode(encoder: Encoder, views: torch.Tensor) -> torch.Tensor:
    """Unit-norm representations h for a batch of 3xMxM views."""
    if views.ndim != 4 or views.shape[1] != 3:
        raise ValueError(f"expected Bx3xMxM batch, got {tuple(views.shape)}")
    return encoder(views)


def patch_features(fmap: torch.Tensor, grid: int) -> torch.Tensor:
    """Adaptive-average G x G pooling of a BxCxhxw feature map, each cell
    L2-normalized. Returns B x G^2 x C."""
    if fmap.ndim != 4:
        raise ValueError(f"expected BxCxhxw feature map, got {tuple(fmap.shape)}")
    if fmap.shape[2] < grid or fmap.shape[3] < grid:
        raise ValueError(
            f"feature map {tuple(fmap.shape[2:])} smaller than patch grid {grid}"
        )
    pooled = F.adaptive_avg_pool2d(fmap, grid)          # B x C x G x G
    pooled = pooled.flatten(2).transpose(1, 2)          # B x G^2 x C
    return F.normalize(pooled, dim=2, eps=1e-12)


class ContriqueModel(nn.Module):
    """Encoder + projector pair used during contrastive pretraining."""

    def __init__(self, encoder_spec: EncoderSpec = EncoderSpec(),
                 projector_spec: ProjectorSpec = ProjectorSpec()):
        super().__init__()
        self.encoder = Encoder(encoder_spec)
        self.projector = Projector(encoder_spec.feature_dim, projector_spec)

    def forward(self, views: torch.Tensor, with_patches: bool = True):
        """Global and (optionally) patch embeddings for a view batch.

        Returns (h, z, patch_h, patch_z); patch tensors are None when
        disabled. Patch rows are ordered per view, row-major over the grid.
        """
        fmap = self.encoder.feature_map(views)
        h = F.normalize(fmap.mean(dim=(2, 3)), dim=1, eps=1e-12)
        z = self.projector(h)
        if not with_patches:
            return h, z, None, None
        grid = self.encoder.spec.patch_grid
        ph = patch_features(fmap, grid)                    # B x G^2 x C
        pz = self.projector(ph.reshape(-1, ph.shape[-1]))  # (B*G^2) x K
        return h, z, ph, pz


def extract_eval_features(image, model, colorspace: str = "RGB") -> np.ndarray:
    """Frozen evaluation features: encoder output at native resolution
    concatenated with the anti-aliased half-resolution output. No projector,
    no augmentation; deterministic for a fixed checkpoint."""
    encoder = model.encoder if isinstance(model, ContriqueModel) else model
    was_training = encoder.training
    encoder.eval()
    try:
        with torch.no_grad():
            parts = []
            for img in (image, downscale_half(image)):
                tensor = torch.from_numpy(convert_color(img, colorspace))
                h = encoder(tensor.unsqueeze(0))
                parts.append(h.squeeze(0).numpy().astype(np.float32))
    finally:
        encoder.train(was_training)
    return np.concatenate(parts)


# --------------------------------------------------------------------------
# feature containers
# --------------------------------------------------------------------------

def save_features(path, features_by_id: dict, fingerprint: str = "",
                  colorspace: str = "RGB") -> Path:
    """Write an .npz feature container: ``ids`` (unicode), ``features``
    (n x D float32, row-aligned with ids), ``fingerprint``, ``colorspace``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ids = sorted(features_by_id)
    feats = np.stack([np.asarray(features_by_id[i], dtype=np.float32) for i in ids])
    np.savez(path, ids=np.array(ids), features=feats,
             fingerprint=np.array(fingerprint), colorspace=np.array(colorspace))
    return path


def load_features(path) -> tuple[dict, dict]:
    """Read a feature container; returns ({id: vector}, metadata)."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"feature file not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        ids = [str(i) for i in data["ids"]]
        feats = data["features"]
        meta = {
            "fingerprint": str(data["fingerprint"]) if "fingerprint" in data else "",
            "colorspace": str(data["colorspace"]) if "colorspace" in data else "RGB",
        }
    if len(ids) != len(feats):
        raise ValueError(f"corrupt feature file {path}: id/row count mismatch")
    return {i: feats[k] for k, i in enumerate(ids)}, meta


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(path, model: ContriqueModel, epoch: int, fingerprint: str,
                    optimizer=None, train_config: dict | None = None) -> Path:
    """Versioned checkpoint container (torch serialization; schema in README)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "fingerprint": fingerprint,
        "epoch": epoch,
        "encoder_spec": asdict(model.encoder.spec),
        "projector_spec": asdict(model.projector.spec),
        "encoder_state": model.encoder.state_dict(),
        "projector_state": model.projector.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "train_config": train_config,
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path):
    """Restore (model, payload) from a checkpoint file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise ValueError(f"corrupt checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise ValueError(f"corrupt checkpoint {path}: missing format header")
    if payload["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(
            f"unsupported checkpoint version {payload['format_version']}"
        )
    enc_spec = EncoderSpec(
        widths=tuple(payload["encoder_spec"]["widths"]),
        patch_grid=payload["encoder_spec"]["patch_grid"],
    )
    proj_spec = ProjectorSpec(**payload["projector_spec"])
    model = ContriqueModel(enc_spec, proj_spec)
    model.encoder.load_state_dict(payload["encoder_state"])
    model.projector.load_state_dict(payload["projector_state"])
    return model, payload
