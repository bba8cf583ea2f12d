"""Scatter matrices, discriminant/principal subspaces, distillation losses.

Rows of a feature matrix are samples in some D-dimensional space (for conv
layers, activations flattened row-major over C, H, W). Scatter is summed
per class after canonically ordering rows, so any sample permutation gives
bit-identical matrices. Discriminant components solve the symmetric pencil

    (S_W + S_B) v = lambda (S_W + rho I) v

by Cholesky whitening; columns satisfy v' (S_W + rho I) v = 1 and come
back with eigenvalues descending and each column's largest-magnitude entry
positive. The PCA variant diagonalizes total scatter / N instead and its
columns are orthonormal.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import jsonio, tensorio
from .errors import (
    DegenerateClass,
    InsufficientDimension,
    LabelOutOfRange,
    LinearAlgebraFailure,
    MalformedFile,
    ShapeMismatch,
)

DEFAULT_RHO = 1e-4
DEFAULT_LAMBDA = 10.0
DEFAULT_GAMMA = 1.0
DEFAULT_TEMPERATURE = 1.0
DEFAULT_PROBE_REG = 1e-6


@dataclass(frozen=True)
class ScatterPair:
    """Within-class and between-class scatter with their sum."""

    s_w: np.ndarray
    s_b: np.ndarray
    s_bar: np.ndarray
    class_counts: np.ndarray


def scatter_matrices(x, labels):
    """Unnormalized within/between scatter of (N, D) rows.

    S_W sums squared deviations around each class mean, S_B weights class
    mean offsets from the grand mean by class size. Classes are the values
    present in `labels`. Rows are lexicographically ordered within each
    class before accumulation; BLAS products on identical bytes are
    reproducible, so the result does not depend on sample order.
    """
    x = np.asarray(x, dtype=np.float64) + 0.0  # clear negative zeros
    labels = np.asarray(labels)
    if x.ndim != 2:
        raise ShapeMismatch(f"scatter needs (N, D) rows, got {x.shape}")
    if labels.shape != (x.shape[0],):
        raise ShapeMismatch("one label per row required")
    n, d = x.shape
    if n < 2:
        raise DegenerateClass("scatter needs at least 2 samples")
    classes = np.unique(labels)
    class_sums = np.zeros((len(classes), d))
    counts = np.zeros(len(classes), dtype=np.int64)
    blocks = []
    for i, y in enumerate(classes):
        xc = x[labels == y]
        xc = xc[np.lexsort(xc.T)]
        class_sums[i] = xc.sum(axis=0)
        counts[i] = xc.shape[0]
        blocks.append(xc)
    grand_mean = class_sums.sum(axis=0) / n
    s_w = np.zeros((d, d))
    s_b = np.zeros((d, d))
    for i, xc in enumerate(blocks):
        mu = class_sums[i] / counts[i]
        dev = xc - mu
        s_w += dev.T @ dev
        g = mu - grand_mean
        s_b += counts[i] * np.outer(g, g)
    return ScatterPair(s_w=s_w, s_b=s_b, s_bar=s_w + s_b, class_counts=counts)


def _fix_signs(v):
    # Largest-magnitude entry of each column made positive; first index wins ties.
    for j in range(v.shape[1]):
        i = int(np.argmax(np.abs(v[:, j])))
        if v[i, j] < 0:
            v[:, j] = -v[:, j]
    return v


@dataclass(frozen=True)
class DcaProjection:
    """A learned subspace: columns of w are the projection directions."""

    kind: str
    w: np.ndarray
    eigenvalues: np.ndarray
    ridge: float
    scheme: tensorio.LabelScheme | None = None

    @property
    def dim(self):
        return self.w.shape[0]

    @property
    def k(self):
        return self.w.shape[1]

    def sidecar_obj(self):
        return {
            "kind": self.kind,
            "ridge": self.ridge,
            "scheme": self.scheme.to_obj() if self.scheme else None,
            "eigenvalues": np.asarray(self.eigenvalues, dtype=np.float64),
        }


def save_projection(proj, base_path):
    """Persist as <base>.npy (the D x k matrix) plus <base>.json sidecar."""
    tensorio.save_matrix(proj.w, str(base_path) + ".npy")
    jsonio.dump(proj.sidecar_obj(), str(base_path) + ".json")


def load_projection(base_path):
    w = tensorio.load_matrix(str(base_path) + ".npy")
    try:
        meta = jsonio.load(str(base_path) + ".json")
    except OSError as exc:
        raise MalformedFile(f"projection sidecar missing: {exc}") from exc
    except ValueError as exc:
        raise MalformedFile(f"unparseable projection sidecar: {exc}") from exc
    if not isinstance(meta, dict) or meta.get("kind") not in ("dca", "pca"):
        raise MalformedFile("projection sidecar must declare kind dca or pca")
    evals = np.asarray(meta.get("eigenvalues", []), dtype=np.float64)
    if evals.shape != (w.shape[1],):
        raise MalformedFile(
            f"sidecar lists {evals.size} eigenvalues for {w.shape[1]} columns"
        )
    scheme = meta.get("scheme")
    return DcaProjection(
        kind=meta["kind"],
        w=w,
        eigenvalues=evals,
        ridge=float(meta.get("ridge", 0.0)),
        scheme=tensorio.LabelScheme.from_obj(scheme) if scheme else None,
    )


def dca_components(x, labels, rho=DEFAULT_RHO, scheme=None):
    """Top-Y discriminant components of (N, D) rows, Y = distinct labels.

    The whitened problem is M = L^-1 (S_W + S_B) L^-T with
    L = chol(S_W + rho I); eigenvectors map back as v = L^-T u, keeping
    v' (S_W + rho I) v = 1. The between-class scatter has rank at most
    Y - 1, so the Y-th eigenvalue sits at the ridge-dominated floor; the
    component is kept anyway and the eigenvalue records the fact.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    x = np.asarray(x, dtype=np.float64)
    pair = scatter_matrices(x, labels)
    d = x.shape[1]
    k = len(pair.class_counts)
    if k > d:
        raise InsufficientDimension(
            f"{k} classes need at least {k} feature dimensions, got {d}",
            k=k,
            dim=d,
        )
    try:
        chol = np.linalg.cholesky(pair.s_w + rho * np.eye(d))
    except np.linalg.LinAlgError as exc:
        raise LinearAlgebraFailure(
            f"within-class scatter not positive definite at ridge {rho}: {exc}"
        ) from exc
    half = scipy.linalg.solve_triangular(chol, pair.s_bar, lower=True)
    m = scipy.linalg.solve_triangular(chol, half.T, lower=True).T
    try:
        evals, evecs = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise LinearAlgebraFailure(f"eigensolve failed: {exc}") from exc
    order = np.argsort(evals)[::-1][:k]
    v = scipy.linalg.solve_triangular(chol.T, evecs[:, order], lower=False)
    return DcaProjection(
        kind="dca",
        w=_fix_signs(v),
        eigenvalues=evals[order],
        ridge=float(rho),
        scheme=scheme,
    )


def pca_components(x, k, scheme=None):
    """Top-k principal directions of total scatter / N, orthonormal columns."""
    x = np.asarray(x, dtype=np.float64) + 0.0
    if x.ndim != 2:
        raise ShapeMismatch(f"pca needs (N, D) rows, got {x.shape}")
    n, d = x.shape
    if not 1 <= k <= d:
        raise InsufficientDimension(
            f"cannot extract {k} components from {d} dimensions", k=int(k), dim=d
        )
    if n < 2:
        raise DegenerateClass("pca needs at least 2 samples")
    xs = x[np.lexsort(x.T)]  # canonical row order, see scatter_matrices
    mean = xs.sum(axis=0) / n
    dev = xs - mean
    total = dev.T @ dev
    try:
        evals, evecs = np.linalg.eigh(total / n)
    except np.linalg.LinAlgError as exc:
        raise LinearAlgebraFailure(f"eigensolve failed: {exc}") from exc
    order = np.argsort(evals)[::-1][:k]
    return DcaProjection(
        kind="pca",
        w=_fix_signs(evecs[:, order]),
        eigenvalues=evals[order],
        ridge=0.0,
        scheme=scheme,
    )


def project(x, proj):
    """Project (N, D) rows onto the columns of the projection, giving (N, k)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != proj.dim:
        raise ShapeMismatch(
            f"rows of width {x.shape[-1]} cannot enter a dim-{proj.dim} projection"
        )
    return x @ proj.w


def inter_kd_loss(a_t, w_t, a_s, w_s):
    """L1 gap between teacher and student projections, summed over entries.

    Single-layer form; callers distilling several inserted layers sum the
    per-layer values. Both projections must share the component count and
    row order must pair teacher sample i with student sample i.
    """
    pt = project(a_t, w_t)
    ps = project(a_s, w_s)
    if pt.shape != ps.shape:
        raise ShapeMismatch(
            f"projected shapes differ: teacher {pt.shape}, student {ps.shape}"
        )
    return float(np.abs(pt - ps).sum())


def _log_softmax(z):
    m = z.max(axis=1, keepdims=True)
    shifted = z - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def output_kd_loss(logits_t, logits_s, temperature=DEFAULT_TEMPERATURE):
    """Mean over samples of T^2 KL(softmax(t/T) || softmax(s/T)).

    The T^2 factor keeps the gradient scale comparable across temperatures.
    """
    t = np.asarray(logits_t, dtype=np.float64)
    s = np.asarray(logits_s, dtype=np.float64)
    if t.shape != s.shape or t.ndim != 2:
        raise ShapeMismatch(
            f"logit shapes must match: teacher {t.shape}, student {s.shape}"
        )
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    lt = _log_softmax(t / temperature)
    ls = _log_softmax(s / temperature)
    kl = (np.exp(lt) * (lt - ls)).sum(axis=1)
    return float(temperature * temperature * kl.mean())


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of the true class."""
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeMismatch("logits must be (N, Y) with one label per row")
    if labels.min() < 0 or labels.max() >= z.shape[1]:
        raise LabelOutOfRange(
            f"labels must lie in [0, {z.shape[1]}) to index the logit columns"
        )
    lp = _log_softmax(z)
    return float(-lp[np.arange(z.shape[0]), labels].mean())


def combined_loss(ce, inter, out, lam=DEFAULT_LAMBDA, gamma=DEFAULT_GAMMA):
    """Training objective: ce + lam * inter + gamma * out."""
    return float(ce) + float(lam) * float(inter) + float(gamma) * float(out)


def linear_probe(features, labels, reg=DEFAULT_PROBE_REG, seed=0, train_frac=0.8):
    """Held-out accuracy of a one-vs-rest least-squares classifier.

    Stands in for a heavier margin classifier when comparing subspaces:
    ridge-regularized LS onto 0/1 one-hot targets with a bias column (the
    bias is regularized too, harmless at this reg). The 80/20 split comes
    from a seeded permutation, so probe numbers are reproducible.
    """
    x = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise ShapeMismatch("probe needs (N, D) rows and one label per row")
    if reg <= 0:
        raise ValueError("reg must be positive")
    n = x.shape[0]
    classes = np.unique(labels)
    y = len(classes)
    if y < 2:
        raise DegenerateClass("probe needs at least 2 classes")
    if n < 2 * y:
        raise DegenerateClass(
            f"probe needs N >= 2Y, got N={n} for Y={y}"
        )
    remap = np.searchsorted(classes, labels)
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(n)
    n_train = int(train_frac * n)
    if n_train < 1 or n_train >= n:
        raise DegenerateClass(f"split leaves no held-out rows for N={n}")
    tr, te = perm[:n_train], perm[n_train:]
    xtr = np.hstack([x[tr], np.ones((len(tr), 1))])
    xte = np.hstack([x[te], np.ones((len(te), 1))])
    targets = np.zeros((len(tr), y))
    targets[np.arange(len(tr)), remap[tr]] = 1.0
    gram = xtr.T @ xtr + reg * np.eye(x.shape[1] + 1)
    try:
        w = np.linalg.solve(gram, xtr.T @ targets)
    except np.linalg.LinAlgError as exc:
        raise LinearAlgebraFailure(f"probe normal equations failed: {exc}") from exc
    pred = np.argmax(xte @ w, axis=1)
    return float(np.mean(pred == remap[te]))


def flatten_activations(acts):
    """N x C x H x W activations as (N, C*H*W) rows, row-major over C, H, W."""
    return acts.data.reshape(acts.n, -1)
