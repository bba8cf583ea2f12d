"""Shared constructors for randomized test inputs."""

import numpy as np

from prunescope import ActivationSet, LabelScheme


def random_acts(
    rng,
    n_extra_max=40,
    c_max=8,
    hw_max=4,
    y_max=5,
    class_offset=0.0,
):
    """Random small activation tensor with every class present at least twice
    (so every one-vs-rest side holds >= 2 activations even at 1x1 spatial).

    class_offset > 0 adds a deterministic per-class mean shift to every
    channel, bounding class mean gaps away from zero.
    """
    y = int(rng.integers(2, y_max + 1))
    c = int(rng.integers(1, c_max + 1))
    h = int(rng.integers(1, hw_max + 1))
    w = int(rng.integers(1, hw_max + 1))
    base = np.repeat(np.arange(y), 2)
    extra = rng.integers(0, y, size=int(rng.integers(0, n_extra_max + 1)))
    labels = np.concatenate([base, extra]).astype(np.int64)
    rng.shuffle(labels)
    data = rng.normal(size=(labels.size, c, h, w))
    if class_offset:
        data = data + class_offset * (labels[:, None, None, None] + 1.0)
    return ActivationSet(data, labels, y)


def fine_scheme(acts, name="fine"):
    return LabelScheme("fine", acts.num_classes, name)


def acts_from_values(values_by_class, hw=(1, 1)):
    """Build a 1-channel ActivationSet from explicit per-class sample values.

    values_by_class: list (indexed by class) of lists of scalars; each
    scalar becomes one sample with constant spatial content.
    """
    h, w = hw
    rows = []
    labels = []
    for cls, vals in enumerate(values_by_class):
        for v in vals:
            rows.append(np.full((1, h, w), float(v)))
            labels.append(cls)
    data = np.stack(rows)
    return ActivationSet(data, np.asarray(labels, dtype=np.int64), len(values_by_class))
