"""Frozen-feature quality evaluation: ridge probe, rank/linear correlations
with a four-parameter logistic, repeated-split protocol, full-reference
difference features, and embedding-space diagnostics."""

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, stats

from .config import config_fingerprint, derive_seed
from .manifest import SplitAssignment, split_ids

DEFAULT_LAMBDA_GRID = tuple(float(x) for x in np.logspace(-3, 3, 7))


@dataclass
class RidgeModel:
    """No-intercept linear probe y = W h, optionally on z-scored features.

    Standardization statistics come from the fitting split and ride along so
    prediction applies the identical transform.
    """

    weights: np.ndarray
    lam: float
    feature_mean: np.ndarray | None = None
    feature_scale: np.ndarray | None = None

    def predict(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != len(self.weights):
            raise ValueError(
                f"feature dimension {x.shape[1]} != model dimension {len(self.weights)}"
            )
        if self.feature_mean is not None:
            x = (x - self.feature_mean) / self.feature_scale
        y = x @ self.weights
        return float(y[0]) if squeeze else y


def fit_ridge(features, gt, lam: float, standardize: bool = False) -> RidgeModel:
    """Solve (X^T X + lam I) W = X^T gt.

    With ``standardize`` the system is solved on per-dimension z-scored
    features (training statistics recorded on the model), which makes the
    intercept-free form usable on features with nonzero means.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(gt, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError(f"bad shapes: features {x.shape}, gt {y.shape}")
    if x.shape[0] < 1:
        raise ValueError("need at least one sample")
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("features/gt must be finite")

    mean = scale = None
    if standardize:
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale = np.where(scale < 1e-12, 1.0, scale)
        x = (x - mean) / scale

    d = x.shape[1]
    gram = x.T @ x
    if lam == 0 and np.linalg.matrix_rank(gram) < d:
        raise ValueError(
            "singular normal equations at lambda=0 (collinear features); "
            "use lambda > 0"
        )
    w = np.linalg.solve(gram + lam * np.eye(d), x.T @ y)
    return RidgeModel(weights=w, lam=float(lam), feature_mean=mean,
                      feature_scale=scale)


def srocc(pred, gt) -> float:
    """Spearman rank correlation with average (mid) ranks for ties."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 1:
        raise ValueError(f"pred/gt must be equal-length vectors, got {p.shape}, {g.shape}")
    if len(p) < 2:
        raise ValueError("need at least two points")
    if np.ptp(p) == 0 or np.ptp(g) == 0:
        raise ValueError("rank correlation undefined for constant input")
    rp = stats.rankdata(p, method="average")
    rg = stats.rankdata(g, method="average")
    return float(np.corrcoef(rp, rg)[0, 1])


def _pearson(a, b) -> float:
    return float(np.corrcoef(a, b)[0, 1])


def _logistic4(x, b1, b2, b3, b4):
    return b2 + (b1 - b2) / (1.0 + np.exp(-(x - b3) / np.abs(b4)))


def plcc_logistic(pred, gt, maxfev: int = 10_000):
    """Pearson correlation after a fitted four-parameter logistic mapping.

    Returns (plcc, betas, fallback). On fit failure the raw Pearson
    correlation is returned with ``fallback`` set.
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if len(p) != len(g) or len(p) < 5:
        raise ValueError("logistic fit needs >= 5 aligned points")
    if np.ptp(g) == 0:
        raise ValueError("ground truth is constant")

    p0 = [float(g.max()), float(g.min()), float(np.median(p)),
          float(p.std()) if p.std() > 0 else 1.0]
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            betas, _ = optimize.curve_fit(
                _logistic4, p, g, p0=p0, maxfev=maxfev, xtol=1e-10, ftol=1e-10
            )
        mapped = _logistic4(p, *betas)
        if np.ptp(mapped) == 0 or not np.isfinite(mapped).all():
            raise RuntimeError("degenerate logistic fit")
        return _pearson(mapped, g), np.asarray(betas, dtype=np.float64), False
    except (RuntimeError, optimize.OptimizeWarning, ValueError):
        return _pearson(p, g), np.asarray(p0, dtype=np.float64), True


def select_lambda(features, gt, split: SplitAssignment, grid, ids,
                  standardize: bool = True) -> float:
    """Grid value maximizing validation rank correlation; ties pick the
    smaller lambda."""
    grid = sorted(float(l) for l in grid)
    if not grid:
        raise ValueError("lambda grid must be non-empty")
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(gt, dtype=np.float64)
    idx = {i: k for k, i in enumerate(ids)}
    train = [idx[i] for i in sorted(split.train_ids)]
    val = [idx[i] for i in sorted(split.val_ids)]
    if not train or not val:
        raise ValueError("empty train or validation partition")
    if np.ptp(y[val]) == 0:
        raise ValueError("validation ground truth is constant; cannot rank lambdas")

    best_lam, best_score = None, -np.inf
    for lam in grid:
        model = fit_ridge(x[train], y[train], lam, standardize=standardize)
        score = srocc(model.predict(x[val]), y[val])
        if score > best_score:
            best_lam, best_score = lam, score
    return best_lam


@dataclass
class EvalReport:
    """Per-split correlations with their medians and the run provenance."""

    srocc: list
    plcc: list
    lambdas: list
    betas: list
    plcc_fallback: list
    seed: int
    n_splits: int
    fingerprint: str
    extras: dict = field(default_factory=dict)

    @property
    def median_srocc(self) -> float:
        return float(np.median(self.srocc))

    @property
    def median_plcc(self) -> float:
        return float(np.median(self.plcc))

    def to_dict(self) -> dict:
        return {
            "srocc": self.srocc,
            "plcc": self.plcc,
            "median_srocc": self.median_srocc,
            "median_plcc": self.median_plcc,
            "lambdas": self.lambdas,
            "logistic_betas": [list(map(float, b)) for b in self.betas],
            "plcc_fallback": self.plcc_fallback,
            "seed": self.seed,
            "n_splits": self.n_splits,
            "fingerprint": self.fingerprint,
            **self.extras,
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")
        return path


def _align(features_by_id: dict, mos_by_id: dict):
    missing = [i for i in features_by_id if i not in mos_by_id]
    if missing:
        raise ValueError(f"id {missing[0]!r} has features but no score")
    missing = [i for i in mos_by_id if i not in features_by_id]
    if missing:
        raise ValueError(f"id {missing[0]!r} has a score but no features")
    ids = sorted(features_by_id)
    x = np.stack([np.asarray(features_by_id[i], dtype=np.float64) for i in ids])
    y = np.asarray([mos_by_id[i] for i in ids], dtype=np.float64)
    return ids, x, y


def evaluate_nr(features_by_id: dict, mos_by_id: dict, n_splits: int = 10,
                ratios=(0.7, 0.1, 0.2), seed: int = 0,
                lambda_grid=DEFAULT_LAMBDA_GRID, reference_by_id: dict | None = None,
                standardize: bool = True,
                fixed_split: SplitAssignment | None = None) -> EvalReport:
    """Repeated-split linear-probe evaluation of frozen features.

    Each split selects the ridge coefficient on validation rank correlation,
    fits on train, and scores the held-out test partition. Content grouping
    via ``reference_by_id`` keeps same-source images in one partition. A
    ``fixed_split`` replaces the internal splitter (single-split protocol).
    """
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    ids, x, y = _align(features_by_id, mos_by_id)
    group_of = None
    if reference_by_id is not None:
        group_of = lambda i: reference_by_id[i]

    splits = []
    if fixed_split is not None:
        splits.append(fixed_split)
    else:
        for k in range(n_splits):
            splits.append(split_ids(ids, ratios=ratios,
                                    seed=derive_seed(seed, "eval-split", k),
                                    group_of=group_of, split_index=k))

    sroccs, plccs, lams, betas_list, fallbacks = [], [], [], [], []
    idx = {i: k for k, i in enumerate(ids)}
    for split in splits:
        train = [idx[i] for i in sorted(split.train_ids)]
        test = [idx[i] for i in sorted(split.test_ids)]
        if not train or not test:
            raise ValueError(f"split {split.split_index} has an empty partition")
        lam = select_lambda(x, y, split, lambda_grid, ids, standardize=standardize)
        model = fit_ridge(x[train], y[train], lam, standardize=standardize)
        pred = model.predict(x[test])
        sroccs.append(srocc(pred, y[test]))
        plcc, betas, fallback = plcc_logistic(pred, y[test])
        plccs.append(plcc)
        lams.append(lam)
        betas_list.append(betas)
        fallbacks.append(fallback)

    fingerprint = config_fingerprint({
        "n_splits": len(splits), "ratios": list(ratios), "seed": seed,
        "lambda_grid": list(lambda_grid), "standardize": standardize,
        "n_items": len(ids), "content_split": reference_by_id is not None,
    })
    return EvalReport(srocc=sroccs, plcc=plccs, lambdas=lams, betas=betas_list,
                      plcc_fallback=fallbacks, seed=seed, n_splits=len(splits),
                      fingerprint=fingerprint)


def fr_features(h_ref, h_dist) -> np.ndarray:
    """Full-reference feature: elementwise |h_ref - h_dist| (symmetric, zero
    when the distorted image equals its reference)."""
    a = np.asarray(h_ref, dtype=np.float64)
    b = np.asarray(h_dist, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"feature length mismatch: {a.shape} vs {b.shape}")
    return np.abs(a - b)


def evaluate_fr(ref_features_by_id: dict, dist_features_by_id: dict,
                mos_by_id: dict, reference_of: dict, **kwargs) -> EvalReport:
    """No-reference protocol applied to |h_ref - h_dist| difference features.

    ``reference_of`` maps each distorted id to its pristine source id, which
    also provides the content grouping for the splits.
    """
    diffs = {}
    for i in dist_features_by_id:
        ref_id = reference_of.get(i)
        if ref_id is None:
            raise ValueError(f"distorted id {i!r} has no reference mapping")
        if ref_id not in ref_features_by_id:
            raise ValueError(f"missing reference features for {ref_id!r}")
        diffs[i] = fr_features(ref_features_by_id[ref_id], dist_features_by_id[i])
    kwargs.setdefault("reference_by_id", reference_of)
    return evaluate_nr(diffs, mos_by_id, **kwargs)


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------

def _normalize_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if (norms == 0).any():
        raise ValueError("zero feature vector")
    return x / norms


def diagnostics_separability(features_by_id: dict, class_by_id: dict, k: int = 5):
    """Embedding-space clustering quality by class.

    Returns (within_sim, between_sim, knn_accuracy): mean cosine similarity
    among same-class pairs vs different-class pairs, and leave-one-out k-NN
    accuracy with deterministic tie-breaking (vote ties go to the smallest
    class id; equal distances rank by index).
    """
    ids = sorted(features_by_id)
    if set(ids) != set(class_by_id):
        raise ValueError("features and class labels must cover the same ids")
    x = np.stack([np.asarray(features_by_id[i], dtype=np.float64) for i in ids])
    labels = [class_by_id[i] for i in ids]
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ValueError("need at least two classes")
    counts = {c: labels.count(c) for c in classes}
    thin = [c for c, n in counts.items() if n < 2]
    if thin:
        raise ValueError(f"class {thin[0]!r} has fewer than 2 items")

    xn = _normalize_rows(x)
    sim = np.clip(xn @ xn.T, -1.0, 1.0)
    lab = np.asarray(labels, dtype=object)
    same = lab[:, None] == lab[None, :]
    off_diag = ~np.eye(len(ids), dtype=bool)
    within = float(sim[same & off_diag].mean())
    between = float(sim[~same].mean())

    correct = 0
    for i in range(len(ids)):
        order = sorted((j for j in range(len(ids)) if j != i),
                       key=lambda j: (-sim[i, j], j))
        votes = {}
        for j in order[:k]:
            votes[labels[j]] = votes.get(labels[j], 0) + 1
        top = max(votes.values())
        winner = min(c for c, v in votes.items() if v == top)
        correct += winner == labels[i]
    return within, between, correct / len(ids)


def diagnostics_colorspace_invariance(model, records, mos_by_id: dict, spaces,
                                      image_loader, n_splits: int = 10,
                                      seed: int = 0, **kwargs) -> dict:
    """Median rank correlation of the probe when evaluation images are fed in
    each colorspace; reports the per-space medians and their spread."""
    from .models import extract_eval_features

    reports = {}
    for space in spaces:
        feats = {
            rec.id: extract_eval_features(image_loader(rec), model, colorspace=space)
            for rec in records
        }
        reports[space] = evaluate_nr(feats, mos_by_id, n_splits=n_splits,
                                     seed=seed, **kwargs)
    medians = {s: r.median_srocc for s, r in reports.items()}
    spread = max(medians.values()) - min(medians.values())
    return {"medians": medians, "spread": spread, "reports": reports}
