"""Command-line surface tying the toolkit together.

Exit codes: 0 success, 1 validation error (bad arguments, bad data,
contract violations), 2 I/O error. Every subcommand honors ``--format
json|csv`` and writes to ``--out`` (atomically) or stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import classifier, ensemble, joint, reporting, stacking, store, sweep
from .errors import FeatstackError, ValidationError


class _JsonReport:
    """Adapter so plain dicts flow through reporting.serialize_report."""

    def __init__(self, obj, csv_rows=None):
        self.obj = obj
        self.csv_rows = csv_rows

    def to_json_dict(self):
        return self.obj

    def to_csv_rows(self):
        if self.csv_rows is None:
            raise ValidationError("this report is only available as JSON")
        return self.csv_rows


def _deliver(report, args) -> None:
    text = reporting.serialize_report(report, args.format)
    if args.out:
        store.atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)


def _parse_networks(value: str) -> list[str]:
    ids = [v.strip() for v in value.split(",") if v.strip()]
    if not ids:
        raise ValidationError("no networks")
    return ids


def _load_grid(args) -> sweep.GridSpec:
    if getattr(args, "grid", None):
        return sweep.GridSpec.from_json_dict(json.loads(Path(args.grid).read_text()))
    return sweep.GridSpec()


def cmd_synth(args) -> int:
    if not args.out:
        raise ValidationError("synth requires --out DIR for the bundle files")
    if args.spec:
        spec = store.SynthSpec.from_json_dict(json.loads(Path(args.spec).read_text()))
    else:
        spec = store.complementary_pair_spec()
    bundle = store.generate_synthetic(spec, seed=args.seed, dataset_id=args.dataset_id)
    manifest = store.write_bundle(bundle, args.out)
    _summary = {
        "manifest": str(manifest),
        "dataset_id": bundle.dataset_id,
        "n": bundle.n,
        "num_classes": bundle.num_classes,
        "networks": {nid: fm.d for nid, fm in sorted(bundle.features.items())},
    }
    sys.stdout.write(json.dumps(_summary, indent=2) + "\n")
    return 0


def cmd_ingest(args) -> int:
    bundle = store.load_bundle(args.manifest)
    split_counts = {part: int((bundle.split == part).sum()) for part in store.SPLIT_NAMES}
    report = _JsonReport(
        {
            "dataset_id": bundle.dataset_id,
            "n": bundle.n,
            "num_classes": bundle.num_classes,
            "networks": {nid: fm.d for nid, fm in sorted(bundle.features.items())},
            "splits": split_counts,
        }
    )
    _deliver(report, args)
    return 0


def _stack_spec_from_args(args) -> stacking.StackSpec:
    ids = _parse_networks(args.networks)
    weights = None
    if getattr(args, "weights", None):
        values = [float(v) for v in args.weights.split(",")]
        if len(values) != len(ids):
            raise ValidationError("weights length must match networks")
        paired = sorted(zip(ids, values))
        return stacking.StackSpec(
            network_ids=tuple(nid for nid, _ in paired),
            weights=tuple(w for _, w in paired),
        )
    return stacking.StackSpec(network_ids=tuple(sorted(ids)), weights=weights)


def cmd_train(args) -> int:
    bundle = store.load_bundle(args.manifest)
    spec = _stack_spec_from_args(args)
    data = sweep.prepare_stacked(bundle, spec, normalize=not args.no_normalize)
    config = classifier.TrainConfig(
        lr0=args.lr,
        reg=args.reg,
        epochs=args.epochs,
        decay=args.decay,
        batch_size=args.batch_size,
        dropout_p=args.dropout_p,
        dropout_enabled=args.dropout == "on",
        loss_kind=args.loss,
        seed=args.seed,
    )
    model = classifier.train_linear(
        data, config, stack_spec=spec, normalized=not args.no_normalize
    )
    if args.model_out:
        classifier.save_model(model, args.model_out)
    report = _JsonReport(
        {
            "dataset_id": bundle.dataset_id,
            "stack_spec": spec.to_json_dict(),
            "best_val_accuracy": model.best_val_accuracy,
            "best_epoch": model.best_epoch,
            "model_file": args.model_out,
        }
    )
    _deliver(report, args)
    return 0


def cmd_sweep(args) -> int:
    bundle = store.load_bundle(args.manifest)
    spec = _stack_spec_from_args(args)
    result = sweep.run_sweep(
        bundle,
        spec,
        _load_grid(args),
        parallelism=args.parallelism,
        base_seed=args.seed,
        normalize=not args.no_normalize,
    )
    if args.model_out and result.winner_model is not None:
        classifier.save_model(result.winner_model, args.model_out)
    _deliver(result, args)
    return 0


def cmd_subsets(args) -> int:
    specs = stacking.enumerate_subsets(_parse_networks(args.networks))
    rows = [["networks"]] + [[s.key] for s in specs]
    report = _JsonReport({"subsets": [s.to_json_dict() for s in specs]}, csv_rows=rows)
    _deliver(report, args)
    return 0


def cmd_ensemble(args) -> int:
    bundle = store.load_bundle(args.manifest)
    result = ensemble.stack_ensemble(
        bundle,
        _parse_networks(args.networks),
        _load_grid(args),
        parallelism=args.parallelism,
        base_seed=args.seed,
        normalize=not args.no_normalize,
        prob=args.prob,
    )
    _deliver(result, args)
    return 0


def cmd_weights(args) -> int:
    accs = {}
    for pair in args.accuracies.split(","):
        if "=" not in pair:
            raise ValidationError(f"expected name=value, got '{pair}'")
        name, value = pair.split("=", 1)
        accs[name.strip()] = float(value)
    weights = stacking.accuracy_weights(accs)
    rows = [["network", "accuracy", "weight"]] + [
        [nid, accs[nid], weights[nid]] for nid in sorted(weights)
    ]
    report = _JsonReport({"weights": {nid: weights[nid] for nid in sorted(weights)}}, rows)
    _deliver(report, args)
    return 0


def cmd_joint_train(args) -> int:
    if args.recipe:
        recipe = joint.TransferRecipe.from_json_dict(json.loads(Path(args.recipe).read_text()))
    else:
        recipe = joint.TransferRecipe()
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    if args.save_trunks and out_dir:
        for seed in recipe.seeds:
            trunks, _ = joint._experiment_trunks(recipe, seed)
            seed_dir = out_dir / f"seed{seed}"
            seed_dir.mkdir(parents=True, exist_ok=True)
            for name, trunk in trunks.items():
                joint.save_joint_model(
                    joint.JointModel(trunk=trunk, heads={}), seed_dir / f"{name}.npz"
                )
    result = joint.run_transfer_experiment(recipe, parallelism=args.parallelism)
    text = reporting.serialize_report(result, args.format)
    if out_dir:
        suffix = "csv" if args.format == "csv" else "json"
        store.atomic_write_text(out_dir / f"transfer_results.{suffix}", text)
        sys.stdout.write(json.dumps({"out": str(out_dir)}, indent=2) + "\n")
    else:
        sys.stdout.write(text)
    return 0


def cmd_transfer_eval(args) -> int:
    trunk = joint.load_trunk(args.trunk)
    bundle = store.load_bundle(args.manifest)
    task = joint.task_from_bundle(bundle, network=args.network)
    acc = joint.transfer_eval(
        trunk,
        task,
        _load_grid(args),
        parallelism=args.parallelism,
        base_seed=args.seed,
    )
    _deliver(_JsonReport({"task": task.task_id, "accuracy": acc}), args)
    return 0


def cmd_confusion(args) -> int:
    bundle = store.load_bundle(args.manifest)
    model = classifier.load_model(args.model)
    if model.stack_spec is None:
        raise ValidationError("model carries no stack spec; cannot assemble features")
    stacked = stacking.stack_bundle(bundle, model.stack_spec, normalize=model.normalized)
    mask = bundle.mask(args.split)
    _, predicted = classifier.predict(model, stacked.data[mask].astype(float))
    matrix = reporting.confusion(
        predicted, bundle.labels[mask], bundle.num_classes, class_names=bundle.class_names
    )
    _deliver(matrix, args)
    return 0


def cmd_report(args) -> int:
    results: dict[str, dict[stacking.StackSpec, float]] = {}
    for path in args.results:
        obj = json.loads(Path(path).read_text())
        spec = stacking.StackSpec.from_json_dict(obj["stack_spec"])
        winner = obj["results"][obj["winner_index"]]
        results.setdefault(obj["dataset_id"], {})[spec] = winner["val_accuracy"]
    table = reporting.degradation_table(results)
    _deliver(table, args)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="base RNG seed")
    common.add_argument(
        "--parallelism", type=int, default=1, help="max concurrent sweep workers"
    )
    common.add_argument("--out", default=None, help="output file (default: stdout)")
    common.add_argument(
        "--format", choices=("json", "csv"), default="json", help="output format"
    )

    parser = _Parser(prog="featstack", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic bundle")
    p.add_argument("--spec", help="SynthSpec JSON file (default: complementary pair)")
    p.add_argument("--dataset-id", default="synth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="validate and summarize a bundle")
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common], help="train one classifier head")
    p.add_argument("--manifest", required=True)
    p.add_argument("--networks", required=True, help="comma-separated network ids")
    p.add_argument("--weights", help="comma-separated per-network weights")
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--reg", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--decay", type=float, default=0.98)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--dropout", choices=("on", "off"), default="off")
    p.add_argument("--dropout-p", type=float, default=0.5)
    p.add_argument("--loss", choices=("svm", "softmax"), default="svm")
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--model-out", help="write the trained model blob here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", parents=[common], help="grid-search one stack")
    p.add_argument("--manifest", required=True)
    p.add_argument("--networks", required=True)
    p.add_argument("--weights", help="comma-separated per-network weights")
    p.add_argument("--grid", help="GridSpec JSON file (default: standard grid)")
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--model-out", help="write the winning model blob here")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("subsets", parents=[common], help="enumerate stack subsets")
    p.add_argument("--networks", required=True)
    p.set_defaults(func=cmd_subsets)

    p = sub.add_parser("ensemble", parents=[common], help="subset-ensemble a stack")
    p.add_argument("--manifest", required=True)
    p.add_argument("--networks", required=True)
    p.add_argument("--grid")
    p.add_argument("--no-normalize", action="store_true")
    p.add_argument("--prob", action="store_true", help="average softmax probabilities")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("weights", parents=[common], help="accuracy-ratio stack weights")
    p.add_argument("--accuracies", required=True, help="e.g. netA=0.3,netB=0.6")
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser(
        "joint-train", parents=[common], help="run the joint-training transfer experiment"
    )
    p.add_argument("--recipe", help="TransferRecipe JSON (default: reference recipe)")
    p.add_argument("--save-trunks", action="store_true", help="also save trained trunks")
    p.set_defaults(func=cmd_joint_train)

    p = sub.add_parser(
        "transfer-eval", parents=[common], help="frozen-trunk transfer accuracy on a task"
    )
    p.add_argument("--trunk", required=True, help="joint model .npz file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--network", default="input")
    p.add_argument("--grid")
    p.set_defaults(func=cmd_transfer_eval)

    p = sub.add_parser("confusion", parents=[common], help="confusion matrix of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=store.SPLIT_NAMES, default="val")
    p.set_defaults(func=cmd_confusion)

    p = sub.add_parser(
        "report", parents=[common], help="degradation table from sweep JSON files"
    )
    p.add_argument("--results", nargs="+", required=True, help="sweep result JSON files")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except SystemExit as e:  # --help
        return 0 if not e.code else 1
    except FeatstackError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
