"""Command-line surface: dataset generation, source pretraining, adaptation,
evaluation, ablation sweeps, and view-count sweeps.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Errors are printed
as one machine-parseable line on stderr. Runs that write artifacts also write
a ``<out>.manifest.json`` recording the resolved configuration, input/output
digests, and seed, so a run can be reproduced bit for bit.

Config precedence for ``adapt``-family commands: built-in defaults, then a
``--config`` JSON file, then explicit flags.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import replace

from . import __version__
from .adapt import AdaptConfig, DivergenceError, adapt_run, evaluate, run_grid
from .data import Dataset, DatasetFormatError, FAMILIES, make_blobs_pair, make_tiny_digits_pair, make_two_moons_pair
from .harness import PRESET_ORDER, run_ablation, run_views_sweep, write_report_csv
from .models import CheckpointError, load_checkpoint, save_checkpoint
from .pretrain import ConvergenceError, PretrainConfig, pretrain_source
from .tensor import ShapeMismatchError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single-line errors instead of argparse's exit
        raise UsageError(message)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path, command: str, config: dict, inputs: dict, outputs: dict, seed) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "inputs": {k: {"path": str(v), "sha256": _sha256(v)} for k, v in inputs.items()},
        "outputs": {k: {"path": str(v), "sha256": _sha256(v)} for k, v in outputs.items()},
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


# -- config plumbing -------------------------------------------------------------

_FLAG_TO_FIELD = {
    "alpha": "alpha",
    "beta": "beta",
    "gamma": "gamma",
    "views": "views",
    "temperature": "temperature",
    "optimizer": "optimizer",
    "lr": "learning_rate",
    "momentum": "momentum",
    "weight_decay": "weight_decay",
    "schedule": "schedule",
    "batch_size": "batch_size",
    "epochs": "max_epochs",
    "mc_samples": "mc_samples",
    "augment": "augment_regime",
    "augment_strength": "augment_strength",
    "seed": "seed",
}


def _add_adapt_flags(p: argparse.ArgumentParser, sweep_owns_views: bool = False) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=int)
    if not sweep_owns_views:
        p.add_argument("--views", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--optimizer", choices=("sgd", "adam"))
    p.add_argument("--lr", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--schedule", choices=("fixed", "cosine"))
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--mc-samples", dest="mc_samples", type=int)
    p.add_argument("--augment", choices=("weak", "strong"))
    p.add_argument("--augment-strength", dest="augment_strength", type=float)
    p.add_argument("--seed", type=int)


def _resolve_adapt_config(args) -> AdaptConfig:
    merged = AdaptConfig().to_dict()
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as f:
            file_values = json.load(f)
        unknown = set(file_values) - set(merged)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        merged.update(file_values)
    for flag, field_name in _FLAG_TO_FIELD.items():
        value = getattr(args, flag, None)
        if value is not None:
            merged[field_name] = value
    try:
        return AdaptConfig.from_dict(merged)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None


def _load_labeled(path) -> Dataset:
    return Dataset.load(path)


def _check_model_data(model, dataset: Dataset, what: str) -> None:
    if tuple(model.input_shape) != tuple(dataset.model_input_shape):
        raise ValueError(
            f"shape mismatch: checkpoint expects input {tuple(model.input_shape)} "
            f"but {what} shape {tuple(dataset.model_input_shape)}"
        )


# -- subcommands -------------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    if args.family == "two-moons":
        source, target = make_two_moons_pair(
            args.n, rotation_deg=args.rotation, noise=args.noise, seed=args.seed
        )
    elif args.family == "blobs":
        source, target = make_blobs_pair(
            args.n,
            n_classes=args.classes,
            n_features=args.features,
            shift_magnitude=args.shift,
            seed=args.seed,
        )
    else:
        source, target = make_tiny_digits_pair(args.n, seed=args.seed)
    target_train, target_eval = target.split(args.eval_fraction, seed=args.seed)

    out = args.out
    paths = {
        "source": f"{out}.source.fdat",
        "target": f"{out}.target.fdat",
        "eval": f"{out}.eval.fdat",
    }
    source.save(paths["source"])
    target_train.save(paths["target"])
    target_eval.save(paths["eval"])
    _write_manifest(
        f"{out}.manifest.json",
        "gen-data",
        {
            "family": args.family,
            "n": args.n,
            "rotation": args.rotation,
            "noise": args.noise,
            "shift": args.shift,
            "classes": args.classes,
            "features": args.features,
            "eval_fraction": args.eval_fraction,
        },
        {},
        paths,
        args.seed,
    )
    print(f"wrote {paths['source']} {paths['target']} {paths['eval']}")
    return 0


def _cmd_pretrain(args) -> int:
    dataset = _load_labeled(args.data)
    dataset.descriptor["seed"] = args.seed
    config = PretrainConfig(
        label_smoothing=args.label_smoothing,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        seed=args.seed,
    )
    model, history = pretrain_source(dataset, config)
    save_checkpoint(model, args.out)
    _write_manifest(
        f"{args.out}.manifest.json",
        "pretrain",
        config.to_dict(),
        {"data": args.data},
        {"checkpoint": args.out},
        args.seed,
    )
    print(f"best_val_accuracy={model.meta['best_val_accuracy']:.4f} checkpoint={args.out}")
    return 0


def _cmd_adapt(args) -> int:
    if args.grid and args.grid_select == "labeled" and not args.eval_data:
        raise UsageError("--grid-select labeled requires --eval-data")
    config = _resolve_adapt_config(args)
    model, _ = load_checkpoint(args.source_ckpt)
    target = Dataset.load(args.target_data, domain="target")
    _check_model_data(model, target, f"target data {args.target_data} has")

    eval_data = None
    if args.eval_data:
        eval_ds = Dataset.load(args.eval_data)
        _check_model_data(model, eval_ds, f"eval data {args.eval_data} has")
        eval_data = (eval_ds.model_inputs(), eval_ds.labels)

    inputs = {"source_ckpt": args.source_ckpt, "target_data": args.target_data}
    extra: dict = {}
    if args.grid:
        result, pair, rows = run_grid(
            model, target.model_inputs(), config, eval_data=eval_data, selection=args.grid_select
        )
        extra = {"grid_rows": rows, "grid_selected": {"alpha": pair[0], "beta": pair[1]}}
        config = replace(config, alpha=pair[0], beta=pair[1])
    else:
        result = adapt_run(model, target.model_inputs(), config, eval_data=eval_data)

    save_checkpoint(result.model, args.out)
    outputs = {"checkpoint": args.out}
    if args.log:
        result.log.save(args.log)
        outputs["log"] = args.log
    _write_manifest(
        f"{args.out}.manifest.json",
        "adapt",
        {**config.to_dict(), **extra},
        inputs,
        outputs,
        config.seed,
    )
    final = result.log.epochs[-1].mean_total if result.log.epochs else float("nan")
    print(
        f"adapted checkpoint={args.out} epochs={len(result.log.epochs)} "
        f"best_epoch={result.best_epoch} final_loss={final:.6f}"
    )
    return 0


def _cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.ckpt)
    dataset = Dataset.load(args.data)
    _check_model_data(model, dataset, f"eval data {args.data} has")
    acc = evaluate(
        model, dataset.model_inputs(), dataset.labels, perturbation=args.perturb, seed=args.seed
    )
    print(f"accuracy={acc:.6f}")
    return 0


def _parse_presets(value: str) -> tuple[str, ...]:
    if value == "all":
        return PRESET_ORDER
    presets = tuple(p.strip() for p in value.split(",") if p.strip())
    unknown = [p for p in presets if p not in PRESET_ORDER]
    if unknown:
        raise UsageError(
            f"unknown presets {unknown}; choose from {', '.join(PRESET_ORDER)} or 'all'"
        )
    return presets


def _parse_views(value: str) -> tuple[int, ...]:
    try:
        if ".." in value:
            lo, hi = value.split("..")
            views = tuple(range(int(lo), int(hi) + 1))
        else:
            views = tuple(int(v) for v in value.split(","))
    except ValueError:
        raise UsageError(f"cannot parse view spec {value!r}; use forms like '1..5' or '1,2,4'")
    if not views or any(v < 1 for v in views):
        raise UsageError(f"view counts must be >= 1, got {value!r}")
    return views


def _load_sweep_io(args):
    model, _ = load_checkpoint(args.source_ckpt)
    target = Dataset.load(args.target_data, domain="target")
    eval_ds = Dataset.load(args.eval_data)
    _check_model_data(model, target, f"target data {args.target_data} has")
    _check_model_data(model, eval_ds, f"eval data {args.eval_data} has")
    task = args.task or "task"
    target.descriptor.setdefault("family", task)
    return model, target, eval_ds


def _cmd_ablate(args) -> int:
    config = _resolve_adapt_config(args)
    model, target, eval_ds = _load_sweep_io(args)
    presets = _parse_presets(args.presets)
    rows = run_ablation(model, target, eval_ds, config, presets=presets, repeats=args.repeats)
    write_report_csv(rows, args.out)
    _write_manifest(
        f"{args.out}.manifest.json",
        "ablate",
        {**config.to_dict(), "presets": list(presets), "repeats": args.repeats},
        {"source_ckpt": args.source_ckpt, "target_data": args.target_data, "eval_data": args.eval_data},
        {"report": args.out},
        config.seed,
    )
    for row in rows:
        print(f"{row['preset']}: {row['accuracy_mean']:.4f} +- {row['accuracy_std']:.4f}")
    return 0


def _cmd_sweep_views(args) -> int:
    views = _parse_views(args.views)
    args.views = None  # the sweep owns the flag; keep it out of the config
    config = _resolve_adapt_config(args)
    model, target, eval_ds = _load_sweep_io(args)
    rows = run_views_sweep(model, target, eval_ds, config, views=views, repeats=args.repeats)
    write_report_csv(rows, args.out)
    _write_manifest(
        f"{args.out}.manifest.json",
        "sweep-views",
        {**config.to_dict(), "views": list(views), "repeats": args.repeats},
        {"source_ckpt": args.source_ckpt, "target_data": args.target_data, "eval_data": args.eval_data},
        {"report": args.out},
        config.seed,
    )
    for row in rows:
        print(f"{row['preset']}: {row['accuracy_mean']:.4f} +- {row['accuracy_std']:.4f}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="faust-adapt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[], help="generate a source/target dataset pair")
    p.add_argument("--family", choices=sorted(FAMILIES), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--rotation", type=float, default=40.0, help="two-moons target rotation (deg)")
    p.add_argument("--noise", type=float, default=0.1, help="two-moons noise sigma")
    p.add_argument("--shift", type=float, default=2.0, help="blobs target shift magnitude")
    p.add_argument("--classes", type=int, default=3, help="blobs class count")
    p.add_argument("--features", type=int, default=4, help="blobs feature count")
    p.add_argument("--eval-fraction", dest="eval_fraction", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("pretrain", help="train a source model on a labeled dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--label-smoothing", dest="label_smoothing", type=float, default=0.1)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=64)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("adapt", help="source-free adaptation of a pretrained checkpoint")
    p.add_argument("--source-ckpt", dest="source_ckpt", required=True)
    p.add_argument("--target-data", dest="target_data", required=True)
    p.add_argument("--eval-data", dest="eval_data", help="labeled split for per-epoch accuracy logging only")
    p.add_argument("--log", help="write the run log as JSONL")
    p.add_argument("--grid", action="store_true", help="tune (alpha, beta) over the 5-point grid")
    p.add_argument("--grid-select", dest="grid_select", choices=("loss", "labeled"), default="loss")
    p.add_argument("--out", required=True)
    _add_adapt_flags(p)
    p.set_defaults(func=_cmd_adapt)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a labeled dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--perturb", choices=("none", "weak", "strong"), default="none")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run loss-subset presets and emit a CSV report")
    p.add_argument("--source-ckpt", dest="source_ckpt", required=True)
    p.add_argument("--target-data", dest="target_data", required=True)
    p.add_argument("--eval-data", dest="eval_data", required=True)
    p.add_argument("--presets", "--preset", dest="presets", default="all")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--task", help="task name recorded in the report")
    p.add_argument("--out", required=True)
    _add_adapt_flags(p)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("sweep-views", help="sweep the number of augmented views")
    p.add_argument("--source-ckpt", dest="source_ckpt", required=True)
    p.add_argument("--target-data", dest="target_data", required=True)
    p.add_argument("--eval-data", dest="eval_data", required=True)
    p.add_argument("--views", default="1..5")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--task", help="task name recorded in the report")
    p.add_argument("--out", required=True)
    _add_adapt_flags(p, sweep_owns_views=True)
    p.set_defaults(func=_cmd_sweep_views)

    return parser


_RUNTIME_ERRORS = (
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
    DatasetFormatError,
    CheckpointError,
    ShapeMismatchError,
    DivergenceError,
    ConvergenceError,
    ValueError,
)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except _RUNTIME_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
