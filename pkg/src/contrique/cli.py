"""Command-line entry point.

Sub-commands: gen-distortions, train, extract, eval-nr, eval-fr, visualize,
selfcheck. Exit codes: 0 success, 1 runtime/data error (one-line diagnostic
on stderr), 2 usage error.
"""

import argparse
import sys
from pathlib import Path

from . import __version__
from .config import load_config_file


def _lambda_grid(text: str):
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad lambda grid {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="contrique",
        description="Distortion-discriminative contrastive pretraining and "
                    "frozen-feature quality evaluation.",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-distortions",
                       help="synthesize the D x L distortion bank from pristine images")
    p.add_argument("--pristine", required=True, help="pristine JSONL manifest")
    p.add_argument("--config", help="bank config file (TOML/JSON); built-in 10x5 bank if omitted")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="contrastive pretraining")
    p.add_argument("--config", help="train config file (TOML/JSON)")
    p.add_argument("--synthetic", required=True, help="synthetic bank manifest")
    p.add_argument("--ugc", required=True, help="UGC manifest")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--epochs", type=int, help="override total_epochs")
    p.add_argument("--seed", type=int, help="override seed")
    p.add_argument("--batch-images", type=int, help="override n_images")

    p = sub.add_parser("extract", help="frozen evaluation features for a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output .npz feature file")
    p.add_argument("--colorspace", default="RGB")

    p = sub.add_parser("eval-nr", help="no-reference linear-probe evaluation")
    p.add_argument("--features", required=True, help=".npz feature file")
    p.add_argument("--mos", required=True, help="JSONL manifest carrying mos scores")
    p.add_argument("--splits", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda-grid", type=_lambda_grid, default=None)
    p.add_argument("--by-content", action="store_true",
                   help="group splits by reference_id from the manifest")
    p.add_argument("--out", required=True, help="output report JSON")

    p = sub.add_parser("eval-fr", help="full-reference evaluation on |h_ref - h_dist|")
    p.add_argument("--features-ref", required=True)
    p.add_argument("--features-dist", required=True)
    p.add_argument("--mos", required=True,
                   help="JSONL manifest with mos and reference_id per distorted image")
    p.add_argument("--splits", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda-grid", type=_lambda_grid, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("visualize", help="2-D embedding scatter plot + CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True, help="JSONL manifest supplying labels")
    p.add_argument("--label-field", default="class",
                   choices=["class", "source_type", "reference_id", "level"])
    p.add_argument("--method", default="pca", choices=["pca", "tsne"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output image (.png or .svg)")

    sub.add_parser("selfcheck", help="run the loss/metric oracle suite")
    return parser


def _cmd_gen_distortions(args) -> int:
    from .distortions import DEFAULT_BANK, DistortionConfig, generate_bank
    bank = DistortionConfig.from_file(args.config) if args.config else DEFAULT_BANK
    manifest = generate_bank(args.pristine, bank, args.out, args.seed)
    print(manifest)
    return 0


def _cmd_train(args) -> int:
    from .training import TrainConfig, train
    settings = load_config_file(args.config) if args.config else {}
    for flag, key in (("epochs", "total_epochs"), ("seed", "seed"),
                      ("batch_images", "n_images")):
        value = getattr(args, flag)
        if value is not None:
            settings[key] = value
    config = TrainConfig.from_dict(settings)
    final = train(config, args.synthetic, args.ugc, args.out,
                  resume=args.resume)
    print(final)
    return 0


def _cmd_extract(args) -> int:
    from .augment import load_image
    from .manifest import load_manifest
    from .models import extract_eval_features, load_checkpoint, save_features

    model, payload = load_checkpoint(args.checkpoint)
    records = load_manifest(args.manifest)
    manifest_dir = Path(args.manifest).parent
    feats = {}
    for rec in records:
        path = Path(rec.path)
        if not path.is_absolute():
            path = manifest_dir / path
        feats[rec.id] = extract_eval_features(load_image(path), model,
                                              colorspace=args.colorspace)
    out = save_features(args.out, feats, fingerprint=payload["fingerprint"],
                        colorspace=args.colorspace)
    print(out)
    return 0


def _mos_map(records):
    mos = {r.id: r.mos for r in records if r.mos is not None}
    if not mos:
        raise ValueError("manifest carries no mos scores")
    return mos


def _cmd_eval_nr(args) -> int:
    from .evaluation import DEFAULT_LAMBDA_GRID, evaluate_nr
    from .manifest import load_manifest
    from .models import load_features

    feats, meta = load_features(args.features)
    records = load_manifest(args.mos)
    mos = _mos_map(records)
    reference = None
    if args.by_content:
        reference = {r.id: r.reference_id for r in records if r.mos is not None}
        missing = [i for i, ref in reference.items() if ref is None]
        if missing:
            raise ValueError(f"--by-content: record {missing[0]!r} has no reference_id")
    report = evaluate_nr(feats, mos, n_splits=args.splits, seed=args.seed,
                         lambda_grid=args.lambda_grid or DEFAULT_LAMBDA_GRID,
                         reference_by_id=reference)
    report.extras["features_fingerprint"] = meta["fingerprint"]
    report.extras["colorspace"] = meta["colorspace"]
    report.save(args.out)
    print(f"median SROCC {report.median_srocc:.4f}  median PLCC "
          f"{report.median_plcc:.4f}  -> {args.out}")
    return 0


def _cmd_eval_fr(args) -> int:
    from .evaluation import DEFAULT_LAMBDA_GRID, evaluate_fr
    from .manifest import load_manifest
    from .models import load_features

    ref_feats, ref_meta = load_features(args.features_ref)
    dist_feats, _ = load_features(args.features_dist)
    records = load_manifest(args.mos)
    mos = _mos_map(records)
    reference_of = {r.id: r.reference_id for r in records if r.mos is not None}
    missing = [i for i, ref in reference_of.items() if ref is None]
    if missing:
        raise ValueError(f"record {missing[0]!r} has no reference_id")
    report = evaluate_fr(ref_feats, dist_feats, mos, reference_of,
                         n_splits=args.splits, seed=args.seed,
                         lambda_grid=args.lambda_grid or DEFAULT_LAMBDA_GRID)
    report.extras["features_fingerprint"] = ref_meta["fingerprint"]
    report.save(args.out)
    print(f"median SROCC {report.median_srocc:.4f}  median PLCC "
          f"{report.median_plcc:.4f}  -> {args.out}")
    return 0


def _cmd_visualize(args) -> int:
    from .manifest import load_manifest
    from .models import load_features
    from .visualize import plot_embedding

    feats, meta = load_features(args.features)
    records = load_manifest(args.labels)
    labels = {}
    for rec in records:
        if args.label_field == "class":
            if rec.source_type == "synthetic":
                labels[rec.id] = f"d{rec.distortion_id:02d}_l{rec.level}"
            else:
                labels[rec.id] = rec.source_type
        else:
            labels[rec.id] = str(getattr(rec, args.label_field))
    labels = {i: labels[i] for i in feats if i in labels}
    if len(labels) != len(feats):
        missing = sorted(set(feats) - set(labels))
        raise ValueError(f"id {missing[0]!r} has features but no label")
    img, csv_path = plot_embedding(feats, labels, args.out, method=args.method,
                                   seed=args.seed, fingerprint=meta["fingerprint"])
    print(f"{img}\n{csv_path}")
    return 0


def _cmd_selfcheck(args) -> int:
    from .reference import run_selfcheck
    results = run_selfcheck()
    width = max(len(r["name"]) for r in results)
    ok = True
    for r in results:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"[{status}] {r['name']:<{width}}  {r['detail']}")
        ok = ok and r["passed"]
    return 0 if ok else 1


_COMMANDS = {
    "gen-distortions": _cmd_gen_distortions,
    "train": _cmd_train,
    "extract": _cmd_extract,
    "eval-nr": _cmd_eval_nr,
    "eval-fr": _cmd_eval_fr,
    "visualize": _cmd_visualize,
    "selfcheck": _cmd_selfcheck,
}


def dispatch(argv) -> int:
    if not argv:
        print(f"contrique {__version__}")
        return 0
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = _COMMANDS[args.command]
    try:
        return handler(args)
    except (ValueError, FileNotFoundError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
