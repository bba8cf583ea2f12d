"""Channel discriminance scores.

Every metric consumes one layer's activations (N x C x H x W) plus integer
labels under a LabelScheme and emits one non-negative score per channel.
The two-class ratio statistics (SD, AbsSNR, FDR, Ttest) generalize to Y
classes by averaging the one-vs-rest value over classes, iterating classes
then channels in index order so aggregation is canonical. MMD compares
per-class kernel mean embeddings of the flattened spatial vectors; DI is
the discriminant-information trace on the same vectors.

Variance guard: every variance enters ratios as var + eps, so constant
channels score 0 instead of NaN. The ratio metrics pool over activations
(counts are N_y * H * W); MMD counts samples.

Per-channel memory: MMD materializes one class-pair block of kernel values
at a time, worst case O(N^2) floats per channel; DI factors an (HW, HW)
matrix per channel. Callers planning to parallelize across channels should
budget for that.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .dca import scatter_matrices
from .errors import (
    DegenerateClass,
    LabelOutOfRange,
    LinearAlgebraFailure,
    MalformedFile,
)
from .tensorio import LabelScheme

METRICS = ("G-SD", "G-AbsSNR", "G-FDR", "G-Ttest", "MMD", "DI", "Random")
GENERALIZED = ("G-SD", "G-AbsSNR", "G-FDR", "G-Ttest")

DEFAULT_EPS = 1e-8
DEFAULT_SIGMA = 1.0
DEFAULT_RHO = 1e-4


@dataclass(frozen=True)
class BinaryPartitionStats:
    """Pooled one-vs-rest statistics of a single channel.

    Counts are activation counts (samples times spatial positions), and
    the variances are population variances, unguarded.
    """

    mu_pos: float
    var_pos: float
    mu_neg: float
    var_neg: float
    n_pos: int
    n_neg: int


def _check_scheme(acts, scheme):
    if acts.labels.max() >= scheme.num_classes:
        raise LabelOutOfRange(
            f"label {int(acts.labels.max())} does not fit scheme "
            f"{scheme.name!r} with {scheme.num_classes} classes"
        )


def _acts3(acts):
    return acts.data.reshape(acts.n, acts.channels, acts.spatial)


def _layer_stats(acts3, labels, num_classes):
    """(counts, act_counts, sums, m2s) per class, channels vectorized."""
    counts, sums, m2s = kernels.pooled_class_stats(acts3, labels, num_classes)
    return counts, counts * acts3.shape[2], sums, m2s


def _one_vs_rest(act_counts, sums, m2s, c):
    """Complement-side count, mean vector, and variance vector for class c.

    The rest-side second moment combines the per-class pieces
    m2_z + n_z (mu_z - mu_rest)^2; every addend is non-negative, so no
    cancellation enters here.
    """
    rest = np.arange(len(act_counts)) != c
    n_neg = int(act_counts[rest].sum())
    if n_neg == 0:
        return 0, None, None
    mu = sums[rest].sum(axis=0) / n_neg
    nz = act_counts[rest] > 0
    means = np.zeros_like(sums[rest])
    np.divide(sums[rest], act_counts[rest, None], out=means, where=nz[:, None])
    dev = means - mu[None, :]
    var = (m2s[rest] + act_counts[rest, None] * (dev * dev)).sum(axis=0) / n_neg
    return n_neg, mu, var


def partition_stats(acts, channel, c):
    """One-vs-rest pooled stats of one channel for class c.

    Both sides need at least 2 activations for the variances to mean
    anything; fewer is a mis-specified scheme, not a zero score.
    """
    acts3 = _acts3(acts)[:, [channel], :]
    y = acts.num_classes
    counts, act_counts, sums, m2s = _layer_stats(acts3, acts.labels, y)
    n_pos = int(act_counts[c])
    n_neg, mu_neg, var_neg = _one_vs_rest(act_counts, sums, m2s, c)
    if n_pos < 2 or n_neg < 2:
        raise DegenerateClass(
            f"class {c} leaves {n_pos} vs {n_neg} activations; "
            "both sides need at least 2",
            class_id=int(c),
        )
    return BinaryPartitionStats(
        mu_pos=float(sums[c, 0] / n_pos),
        var_pos=float(m2s[c, 0] / n_pos),
        mu_neg=float(mu_neg[0]),
        var_neg=float(var_neg[0]),
        n_pos=n_pos,
        n_neg=n_neg,
    )


def _sd(mu_p, var_p, n_p, mu_n, var_n, n_n, eps):
    vp = var_p + eps
    vn = var_n + eps
    d = mu_p - mu_n
    return 0.5 * (vp / vn + vn / vp) + 0.5 * (d * d) / (vp + vn) - 1.0


def _abssnr(mu_p, var_p, n_p, mu_n, var_n, n_n, eps):
    return np.abs(mu_p - mu_n) / (np.sqrt(var_p + eps) + np.sqrt(var_n + eps))


def _fdr(mu_p, var_p, n_p, mu_n, var_n, n_n, eps):
    d = mu_p - mu_n
    return (d * d) / (var_p + eps + var_n + eps)


def _ttest(mu_p, var_p, n_p, mu_n, var_n, n_n, eps):
    d = np.abs(mu_p - mu_n)
    return d / np.sqrt((var_p + eps) / n_p + (var_n + eps) / n_n)


_BINARY = {"G-SD": _sd, "G-AbsSNR": _abssnr, "G-FDR": _fdr, "G-Ttest": _ttest}


def sd_binary(s, eps=DEFAULT_EPS):
    """Symmetric divergence of the two pooled Gaussians: variance-ratio
    term plus mean-gap term minus the identical-distribution floor."""
    return float(_sd(s.mu_pos, s.var_pos, s.n_pos, s.mu_neg, s.var_neg, s.n_neg, eps))


def abssnr_binary(s, eps=DEFAULT_EPS):
    return float(
        _abssnr(s.mu_pos, s.var_pos, s.n_pos, s.mu_neg, s.var_neg, s.n_neg, eps)
    )


def fdr_binary(s, eps=DEFAULT_EPS):
    return float(_fdr(s.mu_pos, s.var_pos, s.n_pos, s.mu_neg, s.var_neg, s.n_neg, eps))


def ttest_binary(s, eps=DEFAULT_EPS):
    return float(
        _ttest(s.mu_pos, s.var_pos, s.n_pos, s.mu_neg, s.var_neg, s.n_neg, eps)
    )


def _generalized_vector(acts3, labels, num_classes, metric, eps):
    """All channels at once: (1/Y) sum over one-vs-rest partitions."""
    counts, act_counts, sums, m2s = _layer_stats(acts3, labels, num_classes)
    total = int(act_counts.sum())
    bad = np.nonzero((act_counts < 2) | (total - act_counts < 2))[0]
    if bad.size:
        raise DegenerateClass(
            f"class {int(bad[0])} leaves a side with fewer than 2 activations",
            class_id=int(bad[0]),
        )
    fn = _BINARY[metric]
    nz = act_counts > 0
    means = np.zeros_like(sums)
    np.divide(sums, act_counts[:, None], out=means, where=nz[:, None])
    variances = np.zeros_like(m2s)
    np.divide(m2s, act_counts[:, None], out=variances, where=nz[:, None])
    per = np.zeros((num_classes, acts3.shape[1]))
    for c in range(num_classes):
        n_neg, mu_neg, var_neg = _one_vs_rest(act_counts, sums, m2s, c)
        per[c] = fn(
            means[c], variances[c], act_counts[c], mu_neg, var_neg, n_neg, eps
        )
    return per.sum(axis=0) / num_classes


def generalized_score(metric, acts, channel, scheme, eps=DEFAULT_EPS):
    """One ratio metric for one channel, averaged over one-vs-rest splits."""
    if metric not in GENERALIZED:
        raise ValueError(f"{metric!r} is not one of the generalized metrics")
    _check_scheme(acts, scheme)
    acts3 = _acts3(acts)[:, [channel], :]
    return float(
        _generalized_vector(acts3, acts.labels, scheme.num_classes, metric, eps)[0]
    )


def _mmd_channel(x, labels, num_classes, sigma):
    blocks = kernels.rbf_block_sums(x, labels, num_classes, sigma)
    counts = np.bincount(labels, minlength=num_classes)
    n = x.shape[0]
    idx = np.arange(num_classes)
    total = 0.0
    for c in range(num_classes):
        n_pos = int(counts[c])
        n_neg = n - n_pos
        rest = idx != c
        s_pp = blocks[c, c]
        s_nn = blocks[np.ix_(rest, rest)].sum()
        s_pn = blocks[c, rest].sum()
        total += (
            s_pp / (n_pos * n_pos)
            + s_nn / (n_neg * n_neg)
            - 2.0 * s_pn / (n_pos * n_neg)
        )
    return total / num_classes


def mmd_score(acts, channel, scheme, sigma=DEFAULT_SIGMA):
    """Biased (V-statistic) squared MMD of one channel's spatial vectors,
    averaged over the one-vs-rest splits. Self-pairs stay in the sums."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    _check_scheme(acts, scheme)
    y = scheme.num_classes
    counts = np.bincount(acts.labels, minlength=y)
    empty = np.nonzero(counts == 0)[0]
    if empty.size:
        raise DegenerateClass(
            f"MMD needs every class populated; class {int(empty[0])} is empty",
            class_id=int(empty[0]),
        )
    x = _acts3(acts)[:, channel, :]
    return float(_mmd_channel(x, acts.labels, y, sigma))


def _di_matrix(x, labels, rho):
    pair = scatter_matrices(x, labels)
    d = x.shape[1]
    try:
        solved = np.linalg.solve(pair.s_bar + rho * np.eye(d), pair.s_b)
    except np.linalg.LinAlgError as exc:
        raise LinearAlgebraFailure(f"scatter solve failed: {exc}") from exc
    return float(np.trace(solved))


def di_score(acts, channel, scheme, rho=DEFAULT_RHO):
    """Discriminant information tr((S_bar + rho I)^-1 S_B) of one channel.

    Classes are whatever appears in the labels; with a single class S_B is
    zero and the score is 0 by construction, not an error.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    _check_scheme(acts, scheme)
    x = _acts3(acts)[:, channel, :]
    return _di_matrix(x, acts.labels, rho)


@dataclass(frozen=True)
class ChannelScoreReport:
    """Scores for every channel of one layer, with the settings that made them."""

    layer: str
    metric: str
    scheme: LabelScheme
    scores: np.ndarray
    params: dict

    @property
    def channels(self):
        return len(self.scores)

    @property
    def num_classes(self):
        return self.scheme.num_classes

    def to_obj(self):
        return {
            "layer": self.layer,
            "metric": self.metric,
            "scheme": self.scheme.to_obj(),
            "params": self.params,
            "scores": np.asarray(self.scores, dtype=np.float64),
        }

    @classmethod
    def from_obj(cls, obj):
        if not isinstance(obj, dict) or "metric" not in obj or "scores" not in obj:
            raise MalformedFile("not a channel score report")
        try:
            report = cls(
                layer=obj["layer"],
                metric=obj["metric"],
                scheme=LabelScheme.from_obj(obj["scheme"]),
                scores=np.asarray(obj["scores"], dtype=np.float64),
                params=dict(obj.get("params", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedFile(f"broken score report: {exc}") from None
        if report.metric not in METRICS:
            raise MalformedFile(f"unknown metric {report.metric!r} in report")
        if report.scores.ndim != 1 or not np.isfinite(report.scores).all():
            raise MalformedFile("score vector must be 1-D and finite")
        return report


def score_layer(
    metric,
    acts,
    scheme,
    eps=DEFAULT_EPS,
    sigma=DEFAULT_SIGMA,
    rho=DEFAULT_RHO,
    seed=None,
    layer="layer",
):
    """Score every channel of one layer under the scheme's label universe.

    Channels are scored in index order; errors raised while scoring one
    channel carry that channel index.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; choose one of {METRICS}")
    _check_scheme(acts, scheme)
    acts3 = _acts3(acts)
    y = scheme.num_classes
    params = {}
    if metric in GENERALIZED:
        scores = _generalized_vector(acts3, acts.labels, y, metric, eps)
        params["eps"] = float(eps)
    elif metric == "MMD":
        scores = np.array(
            [mmd_score(acts, c, scheme, sigma) for c in range(acts.channels)]
        )
        params["sigma"] = float(sigma)
    elif metric == "DI":
        if rho <= 0:
            raise ValueError("rho must be positive")
        scores = np.empty(acts.channels)
        for c in range(acts.channels):
            try:
                scores[c] = _di_matrix(acts3[:, c, :], acts.labels, rho)
            except LinearAlgebraFailure as exc:
                raise LinearAlgebraFailure(str(exc), channel=c) from exc
        params["rho"] = float(rho)
    else:
        if seed is None:
            raise ValueError("the Random metric needs a seed")
        rng = np.random.Generator(np.random.PCG64(seed))
        scores = rng.random(acts.channels)
        params["seed"] = int(seed)
    return ChannelScoreReport(
        layer=layer, metric=metric, scheme=scheme, scores=scores, params=params
    )
