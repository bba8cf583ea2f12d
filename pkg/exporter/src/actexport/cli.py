"""Entry points wrapping export_run / export_confusion.

Models come from an importable factory (``module:callable`` returning the
nn.Module) plus an optional state-dict file, and data from a .pt file
holding ``{"images": Tensor, "labels": Tensor}``. Both file loads are
tensors-only; no pickled code is executed.
"""

import argparse
import importlib
import sys

import torch
from torch.utils.data import TensorDataset

from .errors import ExportError
from .export import export_confusion, export_run


def _load_model(spec, weights):
    try:
        mod_name, _, attr = spec.partition(":")
        factory = getattr(importlib.import_module(mod_name), attr or "build")
    except (ImportError, AttributeError, ValueError) as exc:
        raise ExportError(f"cannot resolve model factory {spec!r}: {exc}") from exc
    model = factory()
    if weights:
        state = torch.load(weights, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    return model.eval()


def _load_data(path):
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(blob, dict) or "images" not in blob or "labels" not in blob:
        raise ExportError(f"{path} must hold a dict with 'images' and 'labels'")
    return TensorDataset(blob["images"], blob["labels"].to(torch.int64))


def _common(parser):
    parser.add_argument("--model-factory", required=True, metavar="MOD:FN",
                        help="import path of a callable returning the model")
    parser.add_argument("--weights", metavar="FILE",
                        help="optional state-dict .pt to load into the model")
    parser.add_argument("--data", required=True, metavar="FILE",
                        help=".pt file with 'images' and 'labels' tensors")
    parser.add_argument("--batch-size", type=int, default=64, metavar="B")


def main_run(argv=None):
    parser = argparse.ArgumentParser(
        "export-run",
        description="dump per-layer activations, labels, and logits",
    )
    _common(parser)
    parser.add_argument("--layer", action="append", required=True,
                        metavar="NAME", help="module to hook (repeatable, "
                        "in network order)")
    parser.add_argument("--n-samples", type=int, default=None, metavar="N",
                        help="subsample size (default: all)")
    parser.add_argument("--seed", type=int, required=True,
                        help="subsampling seed")
    parser.add_argument("--out", required=True, metavar="DIR")
    parser.add_argument("--source", default=None,
                        help="model identifier recorded in the manifest "
                        "(default: the factory spec)")
    args = parser.parse_args(argv)
    try:
        model = _load_model(args.model_factory, args.weights)
        manifest = export_run(
            model, _load_data(args.data), args.layer, args.n_samples,
            args.seed, args.out, batch_size=args.batch_size,
            source=args.source or args.model_factory,
        )
    except (ExportError, ValueError, OSError) as exc:
        print(f"export-run: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {manifest.num_samples} samples x {len(manifest.layers)} "
          f"layers to {args.out}")
    return 0


def main_confusion(argv=None):
    parser = argparse.ArgumentParser(
        "export-confusion",
        description="dump the (true, predicted) count matrix",
    )
    _common(parser)
    parser.add_argument("--out", required=True, metavar="FILE",
                        help="output .npy path")
    args = parser.parse_args(argv)
    try:
        model = _load_model(args.model_factory, args.weights)
        conf = export_confusion(model, _load_data(args.data), args.out,
                                batch_size=args.batch_size)
    except (ExportError, ValueError, OSError) as exc:
        print(f"export-confusion: {exc}", file=sys.stderr)
        return 3
    correct = int(conf.trace())
    total = int(conf.sum())
    print(f"wrote {conf.shape[0]}x{conf.shape[1]} confusion to {args.out} "
          f"({correct}/{total} correct)")
    return 0
