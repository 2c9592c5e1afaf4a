"""2-D embedding plots: deterministic principal-components projection by
default, seeded stochastic neighbor embedding as an option."""

import csv
from pathlib import Path

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt


def pca_project(features: np.ndarray) -> np.ndarray:
    """Top-2 principal components with a fixed sign convention (the largest
    |loading| of each component is positive), so output is deterministic."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError("need at least 3 feature rows")
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    for i in range(comps.shape[0]):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return centered @ comps.T


def tsne_project(features: np.ndarray, seed: int = 0) -> np.ndarray:
    """Stochastic neighbor embedding (optional route; needs scikit-learn)."""
    try:
        from sklearn.manifold import TSNE
    except ImportError as e:
        raise RuntimeError(
            "t-SNE projection requires scikit-learn (pip install scikit-learn)"
        ) from e
    x = np.asarray(features, dtype=np.float64)
    perplexity = min(30.0, max(2.0, (x.shape[0] - 1) / 3.0))
    return TSNE(n_components=2, random_state=seed,
                perplexity=perplexity, init="pca").fit_transform(x)


def plot_embedding(features_by_id: dict, labels_by_id: dict, out_path,
                   method: str = "pca", seed: int = 0,
                   fingerprint: str = "") -> tuple[Path, Path]:
    """Scatter the 2-D projection colored by label; writes the image plus a
    CSV of coordinates next to it. Returns (image_path, csv_path)."""
    ids = sorted(features_by_id)
    if len(ids) < 3:
        raise ValueError("need at least 3 points to plot")
    missing = [i for i in ids if i not in labels_by_id]
    if missing:
        raise ValueError(f"id {missing[0]!r} has no label")
    x = np.stack([np.asarray(features_by_id[i], dtype=np.float64) for i in ids])
    if method == "pca":
        coords = pca_project(x)
    elif method == "tsne":
        coords = tsne_project(x, seed=seed)
    else:
        raise ValueError(f"unknown projection method {method!r}")

    labels = [labels_by_id[i] for i in ids]
    uniq = sorted(set(map(str, labels)))
    cmap = plt.get_cmap("tab10" if len(uniq) <= 10 else "tab20")

    fig, ax = plt.subplots(figsize=(7, 6))
    for k, lab in enumerate(uniq):
        mask = np.array([str(l) == lab for l in labels])
        ax.scatter(coords[mask, 0], coords[mask, 1], s=14,
                   color=cmap(k % cmap.N), label=lab, alpha=0.8)
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.legend(fontsize=7, markerscale=1.2, loc="best")
    title = f"embedding projection ({method})"
    if fingerprint:
        title += f"  [{fingerprint}]"
    ax.set_title(title, fontsize=9)

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)

    csv_path = out_path.with_suffix(".csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["id", "x", "y", "label"])
        for i, (px, py), lab in zip(ids, coords, labels):
            writer.writerow([i, f"{px:.6f}", f"{py:.6f}", lab])
    return out_path, csv_path
