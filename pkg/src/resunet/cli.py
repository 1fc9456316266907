"""``resunet`` command line: phantom | preprocess | train | predict | evaluate | report.

Exit codes: 0 success, 1 domain error (one ``error: <Kind>: <message>`` line on
stderr), 2 usage error. Every subcommand writes ``manifest.json`` next to its
outputs and refuses to reuse a non-empty output directory without ``--force``.
``RESUNET_THREADS`` caps torch's intra-op thread count.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, load_config
from .errors import ResUNetError
from .inference import ModelSet, Regime, ensemble_predict
from .io import list_case_dirs, read_case, read_labels, write_case, write_labels
from .metrics import aggregate, evaluate_case, read_case_csv, write_case_csv, write_summary_csv
from .phantom import PhantomSpec, generate_case
from .preprocess import extract_patches, load_patches, normalize_case, save_patches
from .training import train_multiview
from .volume import ALL_VIEWS, REGIONS, View

log = logging.getLogger("resunet")


class OutputExists(ResUNetError):
    pass


def configure_threads() -> None:
    value = os.environ.get("RESUNET_THREADS")
    if value:
        import torch

        torch.set_num_threads(max(1, int(value)))


def _versions() -> dict:
    import nibabel
    import scipy
    import torch

    return {
        "resunet": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "torch": torch.__version__,
        "nibabel": nibabel.__version__,
    }


def _prepare_out(path, force: bool) -> Path:
    path = Path(path)
    if path.exists() and (not path.is_dir() or any(path.iterdir())):
        if not force:
            raise OutputExists(f"{path} exists and is not empty; pass --force to overwrite")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out: Path, command: str, argv, cfg: PipelineConfig | None, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "argv": list(argv),
        "seed": cfg.seed if cfg else None,
        "config_hash": cfg.hash() if cfg else None,
        "config": cfg.to_dict() if cfg else None,
        "versions": _versions(),
    }
    manifest.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")


def _config(args, **overrides) -> PipelineConfig:
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("seed", args.seed)
        overrides.setdefault("train.seed", args.seed)
    return load_config(getattr(args, "config", None), overrides)


# -- subcommands --------------------------------------------------------------


def cmd_phantom(args, argv) -> None:
    out = _prepare_out(args.out, args.force)
    dims = tuple(args.dims) * 3 if len(args.dims) == 1 else tuple(args.dims)
    if len(dims) != 3:
        raise ResUNetError("--dims takes one or three integers")
    spec = PhantomSpec(dims=dims, seed=args.seed)
    spec.validate()
    ids = []
    for index in range(args.start, args.start + args.n):
        case = generate_case(spec, index)
        write_case(case, out / case.case_id, fmt=args.format)
        ids.append(case.case_id)
    _write_manifest(out, "phantom", argv, None, {"seed": args.seed, "dims": list(dims), "cases": ids})
    print(f"wrote {len(ids)} phantom cases to {out}")


def cmd_preprocess(args, argv) -> None:
    cfg = _config(args, **{"data.patch_size": args.patch_size})
    views = [View.parse(v) for v in (args.views.split(",") if args.views else cfg.data.views)]
    case_dirs = list_case_dirs(args.data)
    if not case_dirs:
        raise ResUNetError(f"no cases found under {args.data}")
    out = _prepare_out(args.out, args.force)
    by_view = {v: [] for v in views}
    for case_dir in case_dirs:
        case = normalize_case(read_case(case_dir))
        for view in views:
            by_view[view].extend(extract_patches(case, view, cfg.data.patch_size))
    counts = {}
    for view, patches in by_view.items():
        if patches:
            save_patches(patches, out, view.value)
        counts[view.value] = len(patches)
    _write_manifest(out, "preprocess", argv, cfg, {"cases": [d.name for d in case_dirs], "patch_counts": counts})
    print(json.dumps(counts))


def cmd_train(args, argv) -> None:
    overrides = {"train.epochs": args.epochs, "train.regime": args.regime, "train.view": args.view}
    cfg = _config(args, **overrides)
    regime = Regime.parse(cfg.train.regime)
    store = Path(args.patches)
    needed = ALL_VIEWS if regime is not Regime.SINGLE_VIEW else (View.parse(cfg.train.view),)
    patches_by_view = {}
    for view in needed:
        if not (store / f"{view.value}_index.json").exists():
            raise ResUNetError(f"patch store {store} has no {view.value} patches")
        patches_by_view[view] = load_patches(store, view.value)
    out = _prepare_out(args.out, args.force)
    models, histories = train_multiview(
        None,
        cfg.train,
        cfg.network,
        ratio=cfg.data.split_ratio,
        by_case=cfg.data.by_case,
        patches_by_view=patches_by_view,
    )
    models.save(out)
    for tag, history in histories.items():
        history.write_csv(out / f"history_{tag}.csv")
    final = {tag: h.train_loss[-1] if len(h) else None for tag, h in histories.items()}
    _write_manifest(out, "train", argv, cfg, {"regime": regime.value, "final_train_loss": final})
    print(json.dumps({"regime": regime.value, "models": len(models.models), "final_train_loss": final}))


def cmd_predict(args, argv) -> None:
    models = ModelSet.load(args.models)
    case_dirs = list_case_dirs(args.data)
    if not case_dirs:
        raise ResUNetError(f"no cases found under {args.data}")
    out = _prepare_out(args.out, args.force)
    for case_dir in case_dirs:
        case = normalize_case(read_case(case_dir))
        labels = ensemble_predict(models, case)
        write_labels(labels, out / f"{case.case_id}.nii.gz", case.header, spacing=case.spacing)
    _write_manifest(out, "predict", argv, None, {"regime": models.regime.value, "cases": [d.name for d in case_dirs]})
    print(f"wrote {len(case_dirs)} predictions to {out}")


def _find_prediction(pred_dir: Path, case_id: str) -> Path | None:
    for name in (f"{case_id}.nii.gz", f"{case_id}.nii", f"{case_id}.raw"):
        if (pred_dir / name).exists():
            return pred_dir / name
    return None


def cmd_evaluate(args, argv) -> None:
    pred_dir = Path(args.pred)
    case_dirs = list_case_dirs(args.gt)
    if not case_dirs:
        raise ResUNetError(f"no reference cases found under {args.gt}")
    out = _prepare_out(args.out, args.force)
    results = []
    for case_dir in case_dirs:
        case = read_case(case_dir)
        if case.labels is None:
            raise ResUNetError(f"reference case {case.case_id} has no segmentation")
        path = _find_prediction(pred_dir, case.case_id)
        if path is None:
            raise ResUNetError(f"no prediction for case {case.case_id} in {pred_dir}")
        results.append(evaluate_case(read_labels(path), case.labels, case.spacing, case_id=case.case_id))
    summary = aggregate(results)
    write_case_csv(results, out / "per_case.csv")
    write_summary_csv(summary, out / "summary.csv")
    (out / "boxplots.json").write_text(summary.to_json())
    _write_manifest(out, "evaluate", argv, None, {"cases": [r.case_id for r in results]})
    means = {f"dice_{r}": round(summary[r, "dice"].mean, 4) for r in REGIONS}
    print(json.dumps(means))


def cmd_report(args, argv) -> None:
    """Markdown tables shaped like the paper's result tables, one row per evaluation."""
    rows = []
    for item in args.eval:
        name, _, directory = item.rpartition("=")
        directory = Path(directory)
        summary = aggregate(read_case_csv(directory / "per_case.csv"))
        rows.append((name or directory.name, summary))
    lines = ["| Method | " + " | ".join(f"Dice {r}" for r in REGIONS) + " | " + " | ".join(f"HD95 {r}" for r in REGIONS) + " |"]
    lines.append("|---" * 7 + "|")
    for name, s in rows:
        cells = [f"{s[r, 'dice'].mean:.2f}" for r in REGIONS] + [f"{s[r, 'hd95'].mean:.2f}" for r in REGIONS]
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    lines += ["", "| Method | " + " | ".join(f"Sensitivity {r}" for r in REGIONS) + " | " + " | ".join(f"Specificity {r}" for r in REGIONS) + " |"]
    lines.append("|---" * 7 + "|")
    for name, s in rows:
        cells = [f"{s[r, 'sensitivity'].mean:.2f}" for r in REGIONS] + [f"{s[r, 'specificity'].mean:.3f}" for r in REGIONS]
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    text = "\n".join(lines) + "\n"
    out = Path(args.out)
    if out.exists() and not args.force:
        raise OutputExists(f"{out} exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    _write_manifest(out.parent, "report", argv, None, {"evaluations": args.eval})
    print(text, end="")


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resunet", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate synthetic cases")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dims", type=int, nargs="+", default=[64])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start", type=int, default=0, help="first case index")
    p.add_argument("--format", choices=("nifti", "fixture"), default="nifti")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("preprocess", help="normalise cases and extract tumour patches")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--views", help="comma-separated subset of axial,sagittal,coronal")
    p.add_argument("--patch-size", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one model or a per-view ensemble")
    p.add_argument("--patches", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--regime", choices=[r.value for r in Regime])
    p.add_argument("--view", choices=[v.value for v in ALL_VIEWS])
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="segment cases with a trained model set")
    p.add_argument("--models", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="per-region metrics against reference labels")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="markdown result tables from evaluation directories")
    p.add_argument("--eval", action="append", required=True, metavar="[NAME=]DIR")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def dispatch(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    configure_threads()
    try:
        args.func(args, argv)
    except (ResUNetError, ValueError, OSError) as exc:
        message = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
