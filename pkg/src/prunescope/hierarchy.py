"""Coarse label hierarchies learned from activations or confusions.

A CoarseMapping sends each of F fine classes to one of C coarse classes,
C < F, total and surjective. Two learned routes: k-means on per-class
centroids of flattened activations, or spectral clustering of a class-
confusion affinity. Both are seeded and deterministic; cluster ids are
relabeled in order of first appearance, so equal partitions serialize
identically.
"""

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateClass,
    InvalidClusterCount,
    LabelOutOfRange,
    LinearAlgebraFailure,
    MalformedFile,
    ShapeMismatch,
)

KMEANS_RESTARTS = 10
KMEANS_MAX_ITER = 300

METHODS = ("kmeans-centroids", "spectral-confusion", "ground-truth")


def class_centroids(acts):
    """Mean flattened activation per class: row f is the centroid of class f.

    Activations flatten row-major over (C, H, W), giving (F, C*H*W). Rows
    are summed in value-canonical order per class, so sample order cannot
    perturb the centroids.
    """
    flat = acts.data.reshape(acts.n, -1) + 0.0
    y = acts.num_classes
    if y < 2:
        raise DegenerateClass("centroids need at least 2 classes")
    out = np.empty((y, flat.shape[1]))
    for f in range(y):
        rows = flat[acts.labels == f]
        if rows.shape[0] == 0:
            raise DegenerateClass(f"class {f} has no samples", class_id=f)
        rows = rows[np.lexsort(rows.T)]
        out[f] = rows.sum(axis=0) / rows.shape[0]
    return out


def confusion_matrix(logit_set, num_classes):
    """Counts of (true, predicted) pairs; prediction is the row argmax.

    Ties go to the lowest class index. The logit width must equal the
    class count, otherwise predictions could not cover every class.
    """
    logits = logit_set.logits
    labels = logit_set.labels
    if logits.shape[1] != num_classes:
        raise ShapeMismatch(
            f"logit width {logits.shape[1]} does not match class count {num_classes}"
        )
    if labels.min() < 0 or labels.max() >= num_classes:
        raise LabelOutOfRange(
            f"labels must lie in [0, {num_classes})", num_classes=num_classes
        )
    pred = np.argmax(logits, axis=1)
    m = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(m, (labels, pred), 1)
    return m


@dataclass(frozen=True)
class CoarseMapping:
    """fine class -> coarse class table plus how it was made."""

    map: np.ndarray
    num_fine: int
    num_coarse: int
    method: str
    seed: int

    def __post_init__(self):
        a = np.asarray(self.map, dtype=np.int64)
        object.__setattr__(self, "map", a)
        if not 2 <= self.num_coarse < self.num_fine:
            raise InvalidClusterCount(
                f"coarse count must satisfy 2 <= C < {self.num_fine}, "
                f"got {self.num_coarse}"
            )
        if a.shape != (self.num_fine,):
            raise ShapeMismatch("mapping length must equal the fine class count")
        if a.min() < 0 or a.max() >= self.num_coarse:
            raise LabelOutOfRange("coarse ids must lie in [0, num_coarse)")
        if np.unique(a).size != self.num_coarse:
            raise DegenerateClass(
                f"{self.num_coarse} coarse classes declared but only "
                f"{np.unique(a).size} used"
            )
        a.flags.writeable = False

    def to_obj(self):
        return {
            "method": self.method,
            "seed": self.seed,
            "num_fine": self.num_fine,
            "num_coarse": self.num_coarse,
            "map": [int(v) for v in self.map],
        }

    @classmethod
    def from_obj(cls, obj):
        if not isinstance(obj, dict) or "map" not in obj:
            raise MalformedFile("not a coarse mapping")
        try:
            return cls(
                map=np.asarray(obj["map"], dtype=np.int64),
                num_fine=int(obj["num_fine"]),
                num_coarse=int(obj["num_coarse"]),
                method=obj.get("method", "ground-truth"),
                seed=int(obj.get("seed", 0)),
            )
        except KeyError as exc:
            raise MalformedFile(f"mapping is missing {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise MalformedFile(f"broken mapping: {exc}") from None


def apply_mapping(labels, q):
    """Relabel fine labels through the mapping table."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= q.num_fine):
        raise LabelOutOfRange(
            f"labels must lie in [0, {q.num_fine}) to be coarsened"
        )
    return q.map[labels]


def _canonical(assign):
    # First-appearance relabeling: partition-equal assignments serialize equal.
    out = np.empty_like(assign)
    table = {}
    for i, a in enumerate(assign):
        out[i] = table.setdefault(int(a), len(table))
    return out


def _plus_plus_init(points, k, rng):
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[int(rng.integers(n))]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            pick = int(rng.integers(n))
        else:
            pick = int(np.searchsorted(np.cumsum(d2), rng.random() * total))
            pick = min(pick, n - 1)
        centers[j] = points[pick]
        d2 = np.minimum(d2, ((points - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(points, centers):
    n, k = points.shape[0], centers.shape[0]
    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(KMEANS_MAX_ITER):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)  # ties take the lowest center
        dist = d2[np.arange(n), new_assign]
        sizes = np.bincount(new_assign, minlength=k)
        for empty in np.nonzero(sizes == 0)[0]:
            # Donate the point farthest from its centroid, never emptying
            # the donor cluster; ties resolve to the lowest point index.
            donors = sizes[new_assign] >= 2
            cand = np.where(donors, dist, -1.0)
            point = int(np.argmax(cand))
            sizes[new_assign[point]] -= 1
            new_assign[point] = empty
            sizes[empty] += 1
            dist[point] = -1.0
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            centers[j] = points[assign == j].mean(axis=0)
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    wcss = float(d2[np.arange(n), assign].sum())
    return assign, wcss


def kmeans_mapping(centroids, num_coarse, seed, method="kmeans-centroids"):
    """Cluster (F, D) class representatives into num_coarse groups.

    Ten k-means++ restarts on independent child streams of the seed; the
    lowest within-cluster sum of squares wins, first restart breaking ties,
    so parallel restart execution could never change the answer.
    """
    points = np.asarray(centroids, dtype=np.float64)
    if points.ndim != 2:
        raise ShapeMismatch(f"expected (F, D) class points, got {points.shape}")
    f = points.shape[0]
    if not 2 <= num_coarse < f:
        raise InvalidClusterCount(
            f"coarse count must satisfy 2 <= C < {f}, got {num_coarse}"
        )
    best = None
    for stream in np.random.SeedSequence(seed).spawn(KMEANS_RESTARTS):
        rng = np.random.Generator(np.random.PCG64(stream))
        centers = _plus_plus_init(points, num_coarse, rng)
        assign, wcss = _lloyd(points, centers.copy())
        if best is None or wcss < best[0]:
            best = (wcss, assign)
    return CoarseMapping(
        map=_canonical(best[1]),
        num_fine=f,
        num_coarse=num_coarse,
        method=method,
        seed=int(seed),
    )


def spectral_mapping(confusion, num_coarse, seed):
    """Coarsen classes by spectral clustering of the confusion affinity.

    Affinity is the symmetrized confusion with the diagonal zeroed: inter-
    class confusion is the similarity signal, self-hits are not. Rows that
    confuse with nothing get a unit self-loop so the normalized Laplacian
    stays defined. The embedding takes the eigenvectors of the num_coarse
    smallest eigenvalues, sign-fixed and row-normalized, then k-means with
    the same seed.
    """
    m = np.asarray(confusion, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeMismatch(f"confusion must be square, got {m.shape}")
    f = m.shape[0]
    if not 2 <= num_coarse < f:
        raise InvalidClusterCount(
            f"coarse count must satisfy 2 <= C < {f}, got {num_coarse}"
        )
    if m.min() < 0:
        raise MalformedFile("confusion counts cannot be negative")
    a = m + m.T
    np.fill_diagonal(a, 0.0)
    degree = a.sum(axis=1)
    isolated = degree == 0
    if isolated.any():
        a[isolated, isolated] = 1.0
        degree = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(degree)
    lap = np.eye(f) - inv_sqrt[:, None] * a * inv_sqrt[None, :]
    try:
        evals, evecs = np.linalg.eigh(lap)
    except np.linalg.LinAlgError as exc:
        raise LinearAlgebraFailure(f"Laplacian eigensolve failed: {exc}") from exc
    emb = evecs[:, :num_coarse].copy()
    for j in range(num_coarse):
        i = int(np.argmax(np.abs(emb[:, j])))
        if emb[i, j] < 0:
            emb[:, j] = -emb[:, j]
    norms = np.sqrt((emb * emb).sum(axis=1))
    nz = norms > 0
    emb[nz] = emb[nz] / norms[nz, None]
    mapping = kmeans_mapping(emb, num_coarse, seed, method="spectral-confusion")
    return mapping
