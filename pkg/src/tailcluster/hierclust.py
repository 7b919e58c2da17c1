"""Agglomerative clustering on a precomputed dissimilarity matrix.

Supports average (UPGMA) and complete linkage, cuts by number of clusters,
by mean silhouette, or at the largest gap between consecutive merge heights,
and partition comparison by the adjusted Rand index.

Clusters are numbered as in SciPy's linkage matrices: leaves are 0..d-1 and
the cluster created by merge ``m`` gets id ``d + m``.
"""

from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import DomainError

LINKAGES = ("average", "complete")

# Relative tolerance under which two merge candidates or two dendrogram gaps
# are considered tied.
TIE_RTOL = 1e-12


@dataclass(frozen=True)
class Merge:
    a: int
    b: int
    height: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    merges: tuple
    leaf_labels: tuple
    linkage: str = "average"

    @property
    def n_leaves(self):
        return len(self.leaf_labels)

    @property
    def heights(self):
        return np.array([m.height for m in self.merges])

    def to_linkage_matrix(self):
        """SciPy-compatible (d-1) x 4 linkage matrix."""
        return np.array([[m.a, m.b, m.height, m.size] for m in self.merges], dtype=float)

    def to_dict(self):
        return {
            "linkage": self.linkage,
            "leaves": list(self.leaf_labels),
            "merges": [{"a": m.a, "b": m.b, "height": float(m.height), "size": m.size} for m in self.merges],
        }

    @classmethod
    def from_dict(cls, record):
        merges = tuple(Merge(int(m["a"]), int(m["b"]), float(m["height"]), int(m["size"])) for m in record["merges"])
        return cls(merges, tuple(record["leaves"]), record.get("linkage", "average"))


@dataclass(frozen=True)
class Partition:
    labels: tuple

    def __post_init__(self):
        labels = tuple(int(x) for x in self.labels)
        if labels and sorted(set(labels)) != list(range(max(labels) + 1)):
            raise DomainError("partition labels must be contiguous from 0")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_labels(cls, labels):
        """Relabel arbitrary cluster ids to 0..k-1 in order of first appearance."""
        mapping = {}
        return cls(tuple(mapping.setdefault(x, len(mapping)) for x in labels))

    @property
    def k(self):
        return len(set(self.labels))

    @property
    def d(self):
        return len(self.labels)

    def clusters(self):
        """Member index lists, one per label."""
        out = [[] for _ in range(self.k)]
        for i, lab in enumerate(self.labels):
            out[lab].append(i)
        return out


def _as_matrix(delta):
    values = getattr(delta, "values", delta)
    m = np.asarray(values, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError(f"expected a square dissimilarity matrix, got shape {m.shape}")
    if not np.array_equal(m, m.T) or np.any(np.diag(m) != 0.0) or np.any(m < 0.0):
        raise DomainError("dissimilarity matrix must be symmetric, non-negative, with zero diagonal")
    return m


def agglomerate(delta, linkage="average", labels=None):
    """Agglomerative clustering with average (UPGMA) or complete linkage.

    At each step the pair of clusters at the smallest inter-cluster
    dissimilarity is merged. Candidates within a relative ``TIE_RTOL`` of the
    minimum are ties, resolved by the lexicographically smallest pair of
    cluster representatives (the smallest leaf index in each cluster).
    Average linkage keeps exact sums of cross-pair dissimilarities, so equal
    inputs produce equal linkage values.
    """
    if linkage not in LINKAGES:
        raise DomainError(f"linkage must be one of {LINKAGES}, got {linkage!r}")
    m = _as_matrix(delta)
    d = m.shape[0]
    if d < 2:
        raise DomainError("need at least two items to cluster")
    if labels is None:
        labels = getattr(delta, "tickers", None) or tuple(str(i) for i in range(d))

    # Slot i holds an active cluster. agg[i, j] is the sum (average) or the
    # maximum (complete) of cross-pair dissimilarities between slots i and j.
    agg = m.copy()
    size = np.ones(d, dtype=int)
    rep = np.arange(d)
    ident = list(range(d))
    active = np.ones(d, dtype=bool)
    merges = []
    last = 0.0
    for step in range(d - 1):
        idx = np.flatnonzero(active)
        sub = agg[np.ix_(idx, idx)]
        if linkage == "average":
            sub = sub / np.outer(size[idx], size[idx])
        iu, ju = np.triu_indices(len(idx), 1)
        vals = sub[iu, ju]
        best = vals.min()
        tied = np.flatnonzero(vals <= best + TIE_RTOL * max(1.0, abs(best)))
        ra = rep[idx[iu[tied]]]
        rb = rep[idx[ju[tied]]]
        lo = np.minimum(ra, rb)
        hi = np.maximum(ra, rb)
        pick = tied[np.lexsort((hi, lo))[0]]
        i, j = idx[iu[pick]], idx[ju[pick]]
        # exact arithmetic makes both linkages monotone; guard against rounding
        height = max(float(vals[pick]), last)
        last = height

        a, b = sorted((ident[i], ident[j]))
        merges.append(Merge(a, b, height, int(size[i] + size[j])))
        if linkage == "average":
            agg[i, :] = agg[i, :] + agg[j, :]
        else:
            agg[i, :] = np.maximum(agg[i, :], agg[j, :])
        agg[:, i] = agg[i, :]
        agg[i, i] = 0.0
        size[i] += size[j]
        rep[i] = min(rep[i], rep[j])
        ident[i] = d + step
        active[j] = False
    return Dendrogram(tuple(merges), tuple(labels), linkage)


def cut_k(dendrogram, k):
    """Partition obtained by undoing the last k - 1 merges."""
    d = dendrogram.n_leaves
    if not 1 <= k <= d:
        raise DomainError(f"k={k} outside [1, {d}]")
    parent = list(range(2 * d - 1))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for step, merge in enumerate(dendrogram.merges[: d - k]):
        parent[find(merge.a)] = d + step
        parent[find(merge.b)] = d + step
    return Partition.from_labels(find(i) for i in range(d))


def silhouette_samples(delta, partition):
    """Per-item silhouette; items in singleton clusters score 0."""
    m = _as_matrix(delta)
    labels = np.asarray(partition.labels)
    if len(labels) != m.shape[0]:
        raise DomainError("partition size does not match the matrix")
    k = partition.k
    onehot = np.zeros((len(labels), k))
    onehot[np.arange(len(labels)), labels] = 1.0
    counts = onehot.sum(axis=0)
    sums = m @ onehot  # sums[i, c] = total dissimilarity from i to cluster c
    own = counts[labels] - 1.0
    s = np.zeros(len(labels))
    for i, c in enumerate(labels):
        if own[i] == 0:
            continue
        a = sums[i, c] / own[i]
        others = [sums[i, c2] / counts[c2] for c2 in range(k) if c2 != c]
        b = min(others)
        denom = max(a, b)
        s[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return s


def silhouette_mean(delta, partition):
    """Mean silhouette computed from the dissimilarity matrix; needs 2 <= k <= d - 1."""
    d = len(partition.labels)
    if not 2 <= partition.k <= d - 1:
        raise DomainError(f"silhouette needs 2 <= k <= d - 1, got k={partition.k}, d={d}")
    return float(np.mean(silhouette_samples(delta, partition)))


def best_cut_silhouette(dendrogram, delta, k_min, k_max):
    """The cut over k in [k_min, k_max] with the highest mean silhouette.

    Ties go to the smaller k. Returns ``(partition, score)``.
    """
    d = dendrogram.n_leaves
    if not 2 <= k_min <= k_max <= d - 1:
        raise DomainError(f"need 2 <= k_min <= k_max <= d - 1, got [{k_min}, {k_max}] with d={d}")
    best = None
    for k in range(k_min, k_max + 1):
        part = cut_k(dendrogram, k)
        score = silhouette_mean(delta, part)
        if best is None or score > best[1]:
            best = (part, score)
    return best


def best_cut_max_gap(dendrogram):
    """Cut just below the largest jump between consecutive merge heights.

    With heights h_1 <= ... <= h_{d-1}, the gap index m maximizing
    h_{m+1} - h_m gives k = d - m clusters. Gaps within a relative
    ``TIE_RTOL`` of the largest are ties, resolved by the larger index.
    """
    d = dendrogram.n_leaves
    if d < 3:
        raise DomainError("max-gap cut needs at least three items")
    h = dendrogram.heights
    gaps = np.diff(h)
    tol = TIE_RTOL * max(1.0, float(np.max(np.abs(h))))
    m = int(np.flatnonzero(gaps >= gaps.max() - tol)[-1]) + 1
    return cut_k(dendrogram, d - m)


def adjusted_rand_index(p1, p2):
    """Adjusted Rand index from the contingency table of two partitions."""
    a = np.asarray(getattr(p1, "labels", p1))
    b = np.asarray(getattr(p2, "labels", p2))
    if a.shape != b.shape:
        raise DomainError("partitions have different lengths")
    n = len(a)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    index = sum(comb(int(x), 2) for x in table.ravel())
    rows = sum(comb(int(x), 2) for x in table.sum(axis=1))
    cols = sum(comb(int(x), 2) for x in table.sum(axis=0))
    total = comb(n, 2)
    expected = rows * cols / total if total else 0.0
    maximum = 0.5 * (rows + cols)
    if maximum == expected:
        # both partitions trivial in the same way (e.g. identical all-singletons)
        return 1.0
    return float((index - expected) / (maximum - expected))


def write_partition(path, partition, tickers):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("ticker,label\n")
        for t, lab in zip(tickers, partition.labels):
            fh.write(f"{t},{lab}\n")


def read_partition(path):
    with open(path, encoding="utf-8") as fh:
        next(fh)
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    return tuple(r[0] for r in rows), Partition(tuple(int(r[1]) for r in rows))
