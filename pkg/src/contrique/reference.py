"""Direct, loop-based reference evaluations of the losses and metrics.

Everything here is written with plain Python arithmetic (no shared code with
the vectorized implementations) so it can serve as an independent check. The
`selfcheck` suite cross-validates the fast paths against these references and
against hand-derived closed-form values; `contrique selfcheck` runs it.
"""

import math

import numpy as np


def cosine_ref(a, b) -> float:
    num = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("zero vector")
    return num / (na * nb)


def nt_xent_ref(z, groups, tau: float) -> list:
    """Per-instance contrastive losses evaluated term by term.

    For each instance i and each positive j (same group), accumulates
    -log(exp(phi_ij/tau) / sum_{k != i} exp(phi_ik/tau)) and averages over the
    positives. Logit shifts by the row max keep exp() in range; the shift
    cancels exactly in the ratio.
    """
    n = len(z)
    losses = []
    for i in range(n):
        phis = [cosine_ref(z[i], z[k]) / tau for k in range(n)]
        positives = [j for j in range(n) if j != i and groups[j] == groups[i]]
        if not positives:
            raise ValueError(f"instance {i} has no positives")
        shift = max(phis[k] for k in range(n) if k != i)
        denom = math.fsum(math.exp(phis[k] - shift) for k in range(n) if k != i)
        total = 0.0
        for j in positives:
            total += -math.log(math.exp(phis[j] - shift) / denom)
        losses.append(total / len(positives))
    return losses


def mixed_ref(z, groups, is_ugc, sources, tau: float) -> float:
    """Mixed objective: supervised term for non-UGC instances (positives by
    group), instance term for UGC (positives by source), averaged per source
    then over sources. Denominators always span the whole batch."""
    n = len(z)
    per = []
    for i in range(n):
        keys = sources if is_ugc[i] else groups
        phis = [cosine_ref(z[i], z[k]) / tau for k in range(n)]
        positives = [j for j in range(n) if j != i and keys[j] == keys[i]]
        if not positives:
            raise ValueError(f"instance {i} has no positives")
        shift = max(phis[k] for k in range(n) if k != i)
        denom = math.fsum(math.exp(phis[k] - shift) for k in range(n) if k != i)
        per.append(math.fsum(
            -math.log(math.exp(phis[j] - shift) / denom) for j in positives
        ) / len(positives))
    seen = []
    for s in sources:
        if s not in seen:
            seen.append(s)
    per_source = [
        math.fsum(per[i] for i in range(n) if sources[i] == s)
        / sum(1 for i in range(n) if sources[i] == s)
        for s in seen
    ]
    return math.fsum(per_source) / len(per_source)


def srocc_ref(pred, gt) -> float:
    """Rank correlation via the classic d^2 formula (valid without ties)."""
    def ranks(xs):
        order = sorted(range(len(xs)), key=lambda i: xs[i])
        r = [0] * len(xs)
        for rank, i in enumerate(order, start=1):
            r[i] = rank
        return r

    n = len(pred)
    rp, rg = ranks(pred), ranks(gt)
    d2 = sum((a - b) ** 2 for a, b in zip(rp, rg))
    return 1.0 - 6.0 * d2 / (n * (n ** 2 - 1))


def ridge_gradient_descent_ref(x, y, lam, lr=1e-3, steps=200_000):
    """Brute-force ridge solution by gradient descent on the penalized
    least-squares objective; slow but implementation-independent."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.zeros(x.shape[1])
    for _ in range(steps):
        grad = -2.0 * x.T @ (y - x @ w) + 2.0 * lam * w
        w -= lr * grad
    return w


# --------------------------------------------------------------------------
# selfcheck suite
# --------------------------------------------------------------------------

def _check(name, ok, detail=""):
    return {"name": name, "passed": bool(ok), "detail": detail}


def run_selfcheck() -> list:
    """Cross-check the fast implementations against reference evaluations and
    hand-derived values. Returns one result dict per check."""
    import torch

    from .evaluation import fit_ridge, plcc_logistic, srocc
    from .losses import EmbeddingBatch, mixed_loss, supervised_nt_xent

    results = []

    # separated pairs: z1=z2=(1,0), z3=z4=(0,1), tau=1 -> L1 = log((e+2)/e)
    z = [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]
    groups = ["a", "a", "b", "b"]
    expected = math.log((math.e + 2.0) / math.e)
    ref = nt_xent_ref(z, groups, tau=1.0)
    batch = EmbeddingBatch(z=torch.tensor(z, dtype=torch.float64),
                           group_key=groups, is_ugc=[False] * 4, tau=1.0)
    per, _ = supervised_nt_xent(batch)
    results.append(_check(
        "separated-pairs loss equals log((e+2)/e)",
        abs(ref[0] - expected) < 1e-12 and abs(float(per[0]) - expected) < 1e-6,
        f"ref={ref[0]:.10f} impl={float(per[0]):.10f} expected={expected:.10f}",
    ))

    # identical embeddings -> every loss log(N-1)
    z = [[0.5, 0.5]] * 6
    groups = ["a", "a", "b", "b", "c", "c"]
    ref = nt_xent_ref(z, groups, tau=0.5)
    batch = EmbeddingBatch(z=torch.tensor(z, dtype=torch.float64),
                           group_key=groups, is_ugc=[False] * 6, tau=0.5)
    per, _ = supervised_nt_xent(batch)
    expected = math.log(5.0)
    ok = all(abs(r - expected) < 1e-12 for r in ref) and \
        bool(torch.allclose(per, torch.full_like(per, expected), atol=1e-6))
    results.append(_check("identical embeddings give log(N-1)", ok,
                          f"expected={expected:.10f}"))

    # sharp temperature with dominant positives -> loss below 1e-3
    rng = np.random.default_rng(11)
    base = rng.normal(size=(4, 16))
    z = np.concatenate([base + 0.01 * rng.normal(size=base.shape) for _ in range(2)])
    groups = [f"g{i}" for i in range(4)] * 2
    ref = nt_xent_ref(z.tolist(), groups, tau=0.01)
    batch = EmbeddingBatch(z=torch.tensor(z, dtype=torch.float64),
                           group_key=groups, is_ugc=[False] * 8, tau=0.01)
    per, _ = supervised_nt_xent(batch)
    ok = max(ref) < 1e-3 and float(per.max()) < 1e-3 and \
        max(abs(r - float(p)) for r, p in zip(ref, per)) < 1e-6
    results.append(_check("sharp-temperature loss vanishes", ok,
                          f"max ref={max(ref):.2e} max impl={float(per.max()):.2e}"))

    # mixed objective against the loop reference on a random batch
    rng = np.random.default_rng(7)
    z = rng.normal(size=(8, 8))
    groups = ["c1", "c1", "c2", "c2", "u1", "u1", "u2", "u2"]
    sources = ["s1", "s1", "s2", "s2", "u1", "u1", "u2", "u2"]
    is_ugc = [False] * 4 + [True] * 4
    ref_val = mixed_ref(z.tolist(), groups, is_ugc, sources, tau=0.3)
    batch = EmbeddingBatch(z=torch.tensor(z, dtype=torch.float64),
                           group_key=groups, is_ugc=is_ugc, tau=0.3,
                           source_key=sources)
    impl_val = float(mixed_loss(batch))
    results.append(_check("mixed objective matches loop reference",
                          abs(ref_val - impl_val) < 1e-10,
                          f"ref={ref_val:.12f} impl={impl_val:.12f}"))

    # rank correlation hand example: ranks (1,3,2,4) vs (1,2,3,4) -> 0.8
    s_impl = srocc(np.array([1.0, 3.0, 2.0, 4.0]), np.array([1.0, 2.0, 3.0, 4.0]))
    s_ref = srocc_ref([1.0, 3.0, 2.0, 4.0], [1.0, 2.0, 3.0, 4.0])
    results.append(_check("rank correlation hand example = 0.8",
                          abs(s_impl - 0.8) < 1e-12 and abs(s_ref - 0.8) < 1e-12,
                          f"impl={s_impl} ref={s_ref}"))

    s_rev = srocc(np.array([4.0, 3.0, 2.0, 1.0]), np.array([1.0, 2.0, 3.0, 4.0]))
    results.append(_check("reversed ranks give -1", abs(s_rev + 1.0) < 1e-12,
                          f"impl={s_rev}"))

    # ridge closed form: x=[1,2,3], y=[1,2,3], lam=1 -> w = 14/15
    model = fit_ridge(np.array([[1.0], [2.0], [3.0]]),
                      np.array([1.0, 2.0, 3.0]), 1.0)
    results.append(_check("ridge closed form 14/15",
                          abs(model.weights[0] - 14.0 / 15.0) < 1e-12,
                          f"w={model.weights[0]:.12f}"))

    # logistic recovery: gt generated by a known 4-parameter curve of pred
    rng = np.random.default_rng(3)
    pred = rng.uniform(-2.0, 2.0, size=200)
    b1, b2, b3, b4 = 9.0, 1.0, 0.25, 0.6
    gt = b2 + (b1 - b2) / (1.0 + np.exp(-(pred - b3) / b4))
    plcc, betas, fallback = plcc_logistic(pred, gt)
    fitted = betas[1] + (betas[0] - betas[1]) / (
        1.0 + np.exp(-(pred - betas[2]) / abs(betas[3])))
    rmse = float(np.sqrt(np.mean((fitted - gt) ** 2)))
    results.append(_check("logistic parameter recovery",
                          (not fallback) and rmse < 1e-6 and abs(plcc - 1.0) < 1e-9,
                          f"rmse={rmse:.2e} plcc={plcc:.12f}"))

    return results
