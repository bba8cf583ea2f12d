"""Synthetic activation tensors with known ground truth.

Channel c draws from a counter-based Philox stream keyed (seed, base + c),
so its values never depend on how many other channels exist or in what
order they are filled. Three channel kinds:

    signal    class y pools around y * separation * noise_std
    noise     the same spread with no label dependence
    constant  exact zeros, the degenerate-variance edge case

Labels are repeat(arange(Y), n_per_class). Block helpers plant coarse
ground truth over a seeded permutation of class ids for the hierarchy
recovery tests, and nuisance_features builds the anisotropic datasets
where discriminant projections must beat variance-maximizing ones.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpec
from .tensorio import ActivationSet


@dataclass(frozen=True)
class ChannelSpec:
    """One synthetic channel: its kind and Gaussian parameters."""

    kind: str
    separation: float = 0.0
    noise_std: float = 1.0

    def __post_init__(self):
        if self.kind not in ("signal", "noise", "constant"):
            raise InvalidSpec(f"unknown channel kind {self.kind!r}")
        if self.kind == "signal" and self.separation <= 0:
            raise InvalidSpec("signal channels need separation > 0")
        if self.kind != "constant" and self.noise_std <= 0:
            raise InvalidSpec("noise_std must be positive")


def layer_specs(num_signal, num_noise, num_constant, separation=3.0, noise_std=1.0):
    """Convenience builder: signal block, then noise, then constant."""
    return (
        [ChannelSpec("signal", separation, noise_std)] * num_signal
        + [ChannelSpec("noise", 0.0, noise_std)] * num_noise
        + [ChannelSpec("constant")] * num_constant
    )


def _channel_rng(seed, stream):
    return np.random.Generator(np.random.Philox(key=[int(seed), int(stream)]))


def gaussian_channels(specs, n_per_class, y, hw, seed, stream_base=0):
    """Build an ActivationSet from per-channel specs.

    hw is the spatial shape: an int makes square maps, a pair is (H, W).
    stream_base offsets the per-channel streams so several layers can share
    one seed without repeating values.
    """
    if y < 2 or n_per_class < 2:
        raise InvalidSpec("need at least 2 classes and 2 samples per class")
    if not specs:
        raise InvalidSpec("need at least one channel spec")
    specs = list(specs)
    h, w = (hw, hw) if np.isscalar(hw) else hw
    n = y * n_per_class
    labels = np.repeat(np.arange(y, dtype=np.int64), n_per_class)
    data = np.zeros((n, len(specs), h, w))
    for c, spec in enumerate(specs):
        if spec.kind == "constant":
            continue
        rng = _channel_rng(seed, stream_base + c)
        block = rng.normal(0.0, spec.noise_std, size=(n, h, w))
        if spec.kind == "signal":
            block = block + (labels * spec.separation * spec.noise_std)[:, None, None]
        data[:, c] = block
    return ActivationSet(data, labels, y)


def make_logits(labels, num_classes, margin=4.0, noise_std=1.0, seed=0, stream=2**40):
    """Noisy one-hot logits: the true class leads by `margin` on average."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    rng = _channel_rng(seed, stream)
    logits = rng.normal(0.0, noise_std, size=(n, num_classes))
    logits[np.arange(n), labels] += margin
    return logits


def _block_permutation(num_classes, seed):
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.permutation(num_classes)


def block_assignment(block_sizes, seed):
    """Ground-truth coarse ids for classes grouped in permuted blocks.

    Class ids 0..F-1 are shuffled by the seed, then cut into consecutive
    blocks of the given sizes; block b is coarse class b.
    """
    block_sizes = [int(b) for b in block_sizes]
    if not block_sizes or min(block_sizes) < 1:
        raise InvalidSpec("need at least one non-empty block")
    f = sum(block_sizes)
    perm = _block_permutation(f, seed)
    assign = np.empty(f, dtype=np.int64)
    at = 0
    for b, size in enumerate(block_sizes):
        assign[perm[at : at + size]] = b
        at += size
    return assign


def block_confusion(block_sizes, intra, inter, seed):
    """Class confusion counts with planted block structure.

    Same-block entries (diagonal included) get `intra`, cross-block entries
    get `inter`; intra must exceed inter for the blocks to mean anything.
    Class ids are permuted by the seed, so the blocks are not contiguous.
    """
    if not intra > inter >= 0:
        raise InvalidSpec("confusion blocks need intra > inter >= 0")
    assign = block_assignment(block_sizes, seed)
    same = assign[:, None] == assign[None, :]
    return np.where(same, int(intra), int(inter)).astype(np.int64)


def block_centroids(block_sizes, separation, spread, dim, seed):
    """Class centroids clustered around well-separated block anchors.

    Block anchors sit `separation` apart along distinct axes; class
    centroids scatter `spread` around their block's anchor. kmeans must
    recover the blocks whenever separation >> spread.
    """
    if spread <= 0 or separation <= 0:
        raise InvalidSpec("separation and spread must be positive")
    blocks = len(block_sizes)
    if dim < blocks:
        raise InvalidSpec(f"dim {dim} cannot hold {blocks} distinct anchors")
    assign = block_assignment(block_sizes, seed)
    rng = np.random.Generator(np.random.PCG64(seed + 1))
    anchors = np.zeros((blocks, dim))
    anchors[np.arange(blocks), np.arange(blocks)] = separation
    points = anchors[assign] + rng.normal(0.0, spread, size=(len(assign), dim))
    return points, assign


def nuisance_features(
    num_classes,
    n_per_class,
    nuisance_dims=6,
    signal_scale=1.0,
    nuisance_scale=12.0,
    seed=0,
):
    """Rows where class signal hides under high-variance nuisance directions.

    The first Y dimensions hold unit-variance clusters offset signal_scale
    along each class axis; the remaining dims are zero-mean noise at
    nuisance_scale. Variance-maximizing projections latch onto the nuisance
    block, discriminant projections recover the signal block.
    """
    if num_classes < 2 or n_per_class < 2:
        raise InvalidSpec("need at least 2 classes and 2 samples per class")
    n = num_classes * n_per_class
    d = num_classes + nuisance_dims
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), n_per_class)
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.normal(0.0, 1.0, size=(n, d))
    x[np.arange(n), labels] += signal_scale
    x[:, num_classes:] *= nuisance_scale
    return x, labels
