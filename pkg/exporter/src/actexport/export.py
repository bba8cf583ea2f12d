"""Hook-based activation export into the scoring toolkit's run layout.

The consumer side is file-format only: activations as (N, C, H, W) float32
.npy per layer, int64 labels, float32 logits, and a manifest.json naming
the layers in network order. Nothing here imports the scoring package;
`prunescope validate` is the round-trip check.
"""

import json
import os
from dataclasses import dataclass

import numpy as np
import torch
from torch.utils.data import DataLoader, Subset

from .errors import IoError, LayerNotFound


@dataclass(frozen=True)
class ExportManifest:
    layers: list
    num_samples: int
    num_classes: int
    seed: int
    source: str

    def to_obj(self):
        return {
            "layers": list(self.layers),
            "num_samples": int(self.num_samples),
            "num_classes": int(self.num_classes),
            "seed": int(self.seed),
            "source": self.source,
        }


def select_indices(n_total, n_samples, seed):
    """Deterministic subsample: a seeded permutation's first n, ascending.

    Sorting keeps dataset order (sequential reads, stable batch shapes);
    which samples are taken depends only on the seed. Asking for more than
    the dataset holds exports everything.
    """
    if n_samples is None or n_samples >= n_total:
        return np.arange(n_total, dtype=np.int64)
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    return np.sort(rng.permutation(n_total)[:n_samples]).astype(np.int64)


def _resolve(model, layer_names):
    modules = dict(model.named_modules())
    picked = []
    for name in layer_names:
        if name not in modules:
            raise LayerNotFound(name, modules)
        picked.append((name, modules[name]))
    return picked


def _as_nchw(name, out):
    out = out.detach().to("cpu", torch.float32)
    if out.dim() == 4:
        return out
    if out.dim() == 2:  # dense layers export as 1x1 maps
        return out[:, :, None, None]
    raise ValueError(
        f"layer {name!r} produced a rank-{out.dim()} output; "
        "only rank-2 and rank-4 activations can be exported"
    )


def _save(path, arr):
    try:
        np.save(path, arr)
    except OSError as exc:
        raise IoError(f"writing {path}: {exc}") from exc


def _forward_collect(model, dataset, indices, layers, batch_size):
    """Run the model over the selected samples, capturing hooked outputs."""
    model.eval()
    captured = {name: [] for name, _ in layers}
    logits_parts = []
    labels_parts = []
    handles = []

    def _make_hook(name):
        def hook(_mod, _inp, out):
            captured[name].append(_as_nchw(name, out))
        return hook

    for name, module in layers:
        handles.append(module.register_forward_hook(_make_hook(name)))
    loader = DataLoader(Subset(dataset, indices.tolist()),
                        batch_size=batch_size, shuffle=False)
    try:
        with torch.inference_mode():
            for x, y in loader:
                logits_parts.append(model(x).detach().to("cpu", torch.float32))
                labels_parts.append(y.detach().to("cpu", torch.int64))
    finally:
        for h in handles:
            h.remove()

    acts = {name: torch.cat(parts).numpy() for name, parts in captured.items()}
    logits = torch.cat(logits_parts).numpy()
    labels = torch.cat(labels_parts).numpy()
    return acts, logits, labels


def export_run(model, dataset, layer_names, n_samples, seed, out_dir,
               batch_size=64, source="model"):
    """Dump per-layer activations plus labels/logits/manifest under out_dir.

    dataset: map-style, yielding (input, label) pairs. layer_names fixes
    the network order recorded in the manifest.
    """
    layer_names = list(layer_names)
    if not layer_names:
        raise ValueError("need at least one layer to export")
    layers = _resolve(model, layer_names)
    indices = select_indices(len(dataset), n_samples, seed)
    acts, logits, labels = _forward_collect(model, dataset, indices,
                                            layers, batch_size)
    if logits.ndim != 2:
        raise ValueError("model output must be (N, classes) logits")

    try:
        os.makedirs(out_dir, exist_ok=True)
        for name in layer_names:
            os.makedirs(os.path.join(out_dir, name), exist_ok=True)
    except OSError as exc:
        raise IoError(f"creating {out_dir}: {exc}") from exc
    for name in layer_names:
        _save(os.path.join(out_dir, name, "activations.npy"),
              np.ascontiguousarray(acts[name], dtype=np.float32))
    _save(os.path.join(out_dir, "labels.npy"), labels)
    _save(os.path.join(out_dir, "logits.npy"),
          np.ascontiguousarray(logits, dtype=np.float32))

    manifest = ExportManifest(
        layers=layer_names,
        num_samples=int(labels.shape[0]),
        num_classes=int(logits.shape[1]),
        seed=int(seed),
        source=source,
    )
    try:
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(manifest.to_obj(), fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"writing manifest: {exc}") from exc
    return manifest


def export_confusion(model, dataset, out_path, batch_size=64):
    """Count (true label, argmax prediction) pairs over the whole dataset
    and save the matrix as int64 .npy. Returns the matrix."""
    model.eval()
    loader = DataLoader(dataset, batch_size=batch_size, shuffle=False)
    true_parts = []
    pred_parts = []
    num_classes = None
    with torch.inference_mode():
        for x, y in loader:
            logits = model(x)
            num_classes = int(logits.shape[1])
            pred_parts.append(logits.argmax(dim=1).to("cpu", torch.int64))
            true_parts.append(y.detach().to("cpu", torch.int64))
    truth = torch.cat(true_parts).numpy()
    pred = torch.cat(pred_parts).numpy()
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (truth, pred), 1)
    _save(out_path, conf)
    return conf
