"""featextract: export per-image features from torchvision models."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .extract import ExtractJob, extract_features, list_model_layers


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="featextract", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("extract", help="run a model over an image directory")
    p.add_argument("--images", required=True, help="image directory")
    p.add_argument("--model", required=True, help="torchvision model name, e.g. vgg16")
    p.add_argument("--layer", required=True, help="graph node to export, e.g. classifier.4")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument(
        "--weights",
        choices=("pretrained", "random"),
        default="pretrained",
        help="'random' builds an untrained (seeded) model for offline smoke runs",
    )
    p.add_argument("--network-id", help="network id to embed (default: model name)")
    p.add_argument("--dataset-id", help="dataset id to embed (default: image dir name)")
    p.add_argument("--seed", type=int, default=0, help="init seed for --weights random")

    p = sub.add_parser("layers", help="list a model's extractable layer names")
    p.add_argument("--model", required=True)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "layers":
        for name in list_model_layers(args.model):
            print(name)
        return 0
    if args.command != "extract":
        parser.print_usage(sys.stderr)
        return 1
    try:
        job = ExtractJob(
            image_dir=args.images,
            model=args.model,
            layer=args.layer,
            out_dir=args.out,
            batch_size=args.batch_size,
            weights=args.weights,
            network_id=args.network_id,
            dataset_id=args.dataset_id,
            seed=args.seed,
        )
        result = extract_features(job)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2
    print(
        json.dumps(
            {
                "feature_file": str(result.feature_file),
                "manifest_fragment": str(result.manifest_fragment),
                "n": result.n,
                "d": result.d,
                "skipped": result.skipped,
            },
            indent=2,
        )
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
