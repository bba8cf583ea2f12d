"""Hierarchical pruning plans.

A plan walks the network's layers in order (1-indexed, per the manifest)
and records, per layer, which label scheme scored it and which channels
survive. The watershed l_WS = floor(alpha * L), clamped to [1, L-1],
splits the network into a shallow segment (indices <= l_WS) and a deep one
(indices > l_WS); the mode decides which scheme each segment gets:

    all-fine      every layer scored with fine labels
    all-coarse    every layer scored with coarse labels
    coarse-fine   coarse up to the watershed, fine after it
    fine-coarse   the reverse split
    three-level   watersheds at 1/3 and 2/3; coarsest, coarse, then fine

Keep counts round half up; `multiple-of-8` rounding snaps the count to the
nearest positive multiple of eight (ties upward), clamped to [1, C].
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    InvalidAlpha,
    InvalidRatio,
    InvalidSpec,
    MalformedFile,
    MissingReport,
    SchemeMismatch,
)
from .tensorio import LabelScheme

MODES = ("all-fine", "all-coarse", "coarse-fine", "fine-coarse", "three-level")
ROUNDINGS = ("none", "multiple-of-8")

# Which report slot each segment draws from, shallow to deep.
_MODE_ROLES = {
    "all-fine": ["fine"],
    "all-coarse": ["coarse"],
    "coarse-fine": ["coarse", "fine"],
    "fine-coarse": ["fine", "coarse"],
    "three-level": ["coarsest", "coarse", "fine"],
}


def watershed_index(num_layers, alpha=0.5):
    """Last shallow-segment layer, 1-indexed: clamp(floor(alpha*L), 1, L-1)."""
    if num_layers < 2:
        raise InvalidSpec(f"a watershed needs at least 2 layers, got {num_layers}")
    if not 0.0 < alpha < 1.0:
        raise InvalidAlpha(f"alpha must lie strictly inside (0, 1), got {alpha}")
    return min(max(int(math.floor(alpha * num_layers)), 1), num_layers - 1)


def keep_count(channels, ratio, rounding="none"):
    """How many channels survive pruning `ratio` of `channels`."""
    if not 0.0 < ratio < 1.0:
        raise InvalidRatio(f"prune ratio must lie strictly in (0, 1), got {ratio}")
    if rounding not in ROUNDINGS:
        raise InvalidSpec(f"unknown rounding {rounding!r}; choose one of {ROUNDINGS}")
    k = int(math.floor((1.0 - ratio) * channels + 0.5))
    if rounding == "multiple-of-8":
        k = max(8, 8 * int(math.floor(k / 8.0 + 0.5)))
        return min(k, channels)
    return min(max(k, 1), channels)


def select_channels(scores, ratio, rounding="none"):
    """Indices of the highest-scoring channels, ascending.

    Equal scores keep the lower channel index: the sort of negated scores
    is stable, so ties preserve index order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size < 2:
        raise InvalidSpec(
            f"scores must be a vector of at least 2 channels, got {scores.shape}"
        )
    k = keep_count(scores.size, ratio, rounding)
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:k])


def mode_roles(mode, num_layers, alpha=0.5):
    """Role per layer plus the watershed indices the mode used.

    Returns (roles, watersheds) where roles is a list of num_layers role
    names drawn from {"fine", "coarse", "coarsest"} and watersheds the
    segment boundaries (empty for single-scheme modes).
    """
    if mode not in MODES:
        raise InvalidSpec(f"unknown plan mode {mode!r}; choose one of {MODES}")
    roles = _MODE_ROLES[mode]
    if len(roles) == 1:
        return [roles[0]] * num_layers, []
    if len(roles) == 2:
        w = watershed_index(num_layers, alpha)
        return [roles[0]] * w + [roles[1]] * (num_layers - w), [w]
    if num_layers < 3:
        raise InvalidSpec(f"three-level needs at least 3 layers, got {num_layers}")
    w1 = watershed_index(num_layers, 1.0 / 3.0)
    w2 = watershed_index(num_layers, 2.0 / 3.0)
    if w2 <= w1:  # unreachable for L >= 3, kept as a guard
        w2 = w1 + 1
    per = ["coarsest"] * w1 + ["coarse"] * (w2 - w1) + ["fine"] * (num_layers - w2)
    return per, [w1, w2]


@dataclass(frozen=True)
class PruningPlan:
    mode: str
    metric: str
    watershed_alpha: float
    rounding: str
    watersheds: list
    layers: list  # dicts: layer, scheme_used, ratio, channels, keep, drop

    @property
    def watershed(self):
        return self.watersheds[0] if self.watersheds else None

    def to_obj(self):
        return {
            "kind": "pruning_plan",
            "mode": self.mode,
            "metric": self.metric,
            "watershed_alpha": self.watershed_alpha,
            "watershed_index": self.watershed,
            "watersheds": [int(w) for w in self.watersheds],
            "rounding": self.rounding,
            "layers": [
                {
                    "layer": e["layer"],
                    "scheme_used": e["scheme_used"].to_obj(),
                    "metric": self.metric,
                    "ratio": float(e["ratio"]),
                    "channels": int(e["channels"]),
                    "keep": np.asarray(e["keep"], dtype=np.int64),
                    "drop": np.asarray(e["drop"], dtype=np.int64),
                }
                for e in self.layers
            ],
        }

    @classmethod
    def from_obj(cls, obj):
        if not isinstance(obj, dict) or obj.get("kind") != "pruning_plan":
            raise MalformedFile("not a pruning plan")
        layers = []
        for entry in obj.get("layers", []):
            keep = np.asarray(entry["keep"], dtype=np.int64)
            drop = np.asarray(entry["drop"], dtype=np.int64)
            channels = int(entry["channels"])
            merged = np.concatenate([keep, drop])
            if keep.size < 1 or not np.array_equal(
                np.sort(merged), np.arange(channels)
            ):
                raise MalformedFile(
                    f"layer {entry.get('layer')!r} keep/drop do not partition "
                    f"[0, {channels})"
                )
            layers.append(
                {
                    "layer": entry["layer"],
                    "scheme_used": LabelScheme.from_obj(entry["scheme_used"]),
                    "ratio": float(entry["ratio"]),
                    "channels": channels,
                    "keep": keep,
                    "drop": drop,
                }
            )
        return cls(
            mode=obj["mode"],
            metric=obj["metric"],
            watershed_alpha=float(obj["watershed_alpha"]),
            rounding=obj["rounding"],
            watersheds=[int(w) for w in obj.get("watersheds", [])],
            layers=layers,
        )


_ROLE_GRANULARITY = {"fine": "fine", "coarse": "coarse", "coarsest": "coarse"}


def build_plan(reports, mode, ratios, alpha=0.5, rounding="none"):
    """Assemble a plan from per-layer score reports.

    reports: list in network order; each element maps role name ("fine",
    "coarse", "coarsest") to that layer's ChannelScoreReport. ratios: one
    real in (0, 1), or one per layer. All consumed reports must agree on
    the metric, and per role on the label scheme; mixing incompatible
    scoring passes is an input error, not something to paper over.
    """
    if not reports:
        raise InvalidSpec("a plan needs at least one layer")
    num_layers = len(reports)
    if np.isscalar(ratios):
        ratios = [float(ratios)] * num_layers
    ratios = [float(r) for r in ratios]
    if len(ratios) != num_layers:
        raise InvalidRatio(
            f"{len(ratios)} ratios supplied for {num_layers} layers"
        )
    roles, watersheds = mode_roles(mode, num_layers, alpha)
    metric = None
    role_schemes = {}
    entries = []
    names = set()
    for i, (slot, role, ratio) in enumerate(zip(reports, roles, ratios)):
        rep = slot.get(role)
        position = f"layer {i + 1}"
        if rep is None:
            raise MissingReport(
                f"no {role} score report for {position}", layer=i + 1, role=role
            )
        if rep.layer in names:
            raise InvalidSpec(f"duplicate layer name {rep.layer!r}")
        names.add(rep.layer)
        if metric is None:
            metric = rep.metric
        elif rep.metric != metric:
            raise SchemeMismatch(
                f"{position} was scored with {rep.metric}, the plan uses {metric}"
            )
        if rep.scheme.granularity != _ROLE_GRANULARITY[role]:
            raise SchemeMismatch(
                f"{position} needs a {_ROLE_GRANULARITY[role]} scheme for the "
                f"{role} slot, got {rep.scheme.granularity}"
            )
        prior = role_schemes.setdefault(role, rep.scheme)
        if rep.scheme != prior:
            raise SchemeMismatch(
                f"{role} reports disagree on the label scheme "
                f"({rep.scheme} vs {prior})"
            )
        keep = select_channels(rep.scores, ratio, rounding)
        drop = np.setdiff1d(np.arange(rep.channels), keep)
        entries.append(
            {
                "layer": rep.layer,
                "scheme_used": rep.scheme,
                "ratio": ratio,
                "channels": rep.channels,
                "keep": keep,
                "drop": drop,
            }
        )
    return PruningPlan(
        mode=mode,
        metric=metric,
        watershed_alpha=float(alpha),
        rounding=rounding,
        watersheds=watersheds,
        layers=entries,
    )
