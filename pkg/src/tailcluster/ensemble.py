"""Evidence accumulation over an ensemble of tail-dependence clusterings.

Each (copula family, quantile, linkage) triple contributes one partition:
pairwise copula fits give a dissimilarity matrix per quantile, which is
clustered and cut at the best mean silhouette. Co-membership votes across all
partitions form the co-association counts ``V``, the consensus ``M = V / n``
and the consensus dissimilarity ``D = 1 - M``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import copula, hierclust
from .dissimilarity import build_matrix
from .errors import ConfigError, DomainError, FitError, PipelineError

log = logging.getLogger(__name__)

DEFAULT_QUANTILES = (0.05, 0.1, 0.15, 0.2)
DEFAULT_LINKAGES = ("average", "complete")
CUT_RULES = ("max_gap", "silhouette", "fixed_k")


@dataclass(frozen=True)
class EnsembleConfig:
    families: tuple = copula.ENSEMBLE_FAMILIES
    quantiles: tuple = DEFAULT_QUANTILES
    linkages: tuple = DEFAULT_LINKAGES
    k_min: int = 5
    k_max: int = 10

    def __post_init__(self):
        object.__setattr__(self, "families", tuple(self.families))
        object.__setattr__(self, "quantiles", tuple(float(q) for q in self.quantiles))
        object.__setattr__(self, "linkages", tuple(self.linkages))
        if not (self.families and self.quantiles and self.linkages):
            raise ConfigError("families, quantiles and linkages must all be non-empty")
        for name in self.families:
            if name not in copula.family_names():
                raise ConfigError(f"unknown copula family {name!r}")
        for name in self.linkages:
            if name not in hierclust.LINKAGES:
                raise ConfigError(f"unknown linkage {name!r}")
        if any(not 0.0 < q <= 0.5 for q in self.quantiles):
            raise ConfigError(f"quantiles must lie in (0, 0.5], got {self.quantiles}")
        for seq, what in ((self.families, "families"), (self.quantiles, "quantiles"), (self.linkages, "linkages")):
            if len(set(seq)) != len(seq):
                raise ConfigError(f"duplicate entries in {what}")
        if not 2 <= self.k_min <= self.k_max:
            raise ConfigError(f"need 2 <= k_min <= k_max, got [{self.k_min}, {self.k_max}]")

    @property
    def size(self):
        return len(self.families) * len(self.quantiles) * len(self.linkages)


@dataclass(frozen=True)
class ConsensusState:
    votes: np.ndarray = field(repr=False)
    consensus: np.ndarray = field(repr=False)
    dissimilarity: np.ndarray = field(repr=False)
    ensemble_size: int = 0


@dataclass(frozen=True)
class EnsembleMember:
    family: str
    quantile: float
    linkage: str
    partition: hierclust.Partition
    silhouette: float

    def to_dict(self):
        return {
            "family": self.family,
            "q": self.quantile,
            "linkage": self.linkage,
            "k": self.partition.k,
            "silhouette": float(self.silhouette),
            "labels": list(self.partition.labels),
        }


@dataclass(frozen=True)
class EnsembleResult:
    members: tuple
    state: ConsensusState
    dropped_families: tuple = ()
    matrices: tuple = ()

    @property
    def partitions(self):
        return [m.partition for m in self.members]


def partition_vote(partition, i, j):
    """1 if items i and j share a cluster, else 0."""
    labels = partition.labels
    d = len(labels)
    if not (0 <= i < d and 0 <= j < d):
        raise DomainError(f"indices ({i}, {j}) out of range for {d} items")
    return int(labels[i] == labels[j])


def accumulate(partitions):
    """Co-association counts, consensus and consensus dissimilarity."""
    partitions = list(partitions)
    if not partitions:
        raise DomainError("cannot accumulate an empty ensemble")
    d = len(partitions[0].labels)
    votes = np.zeros((d, d), dtype=np.int64)
    for p in partitions:
        labels = np.asarray(p.labels)
        if len(labels) != d:
            raise DomainError("partitions cover different numbers of items")
        votes += labels[:, None] == labels[None, :]
    n = len(partitions)
    consensus = votes / n
    return ConsensusState(votes, consensus, 1.0 - consensus, n)


def cluster_layer(delta, linkages, k_min, k_max):
    """Cluster one dissimilarity matrix with each linkage; returns (linkage, partition, score)."""
    out = []
    for linkage in linkages:
        dend = hierclust.agglomerate(delta, linkage)
        part, score = hierclust.best_cut_silhouette(dend, delta, k_min, k_max)
        out.append((linkage, part, score))
    return out


def fit_family_layers(pseudo, families, executor=None):
    """Pair fits per family. A family whose fits fail is dropped with a warning.

    Returns ``(fits_by_family, dropped)``.
    """
    fits, dropped = {}, []
    for name in families:
        try:
            fits[name] = copula.fit_pairs(pseudo, name, executor)
        except FitError as exc:
            log.warning("dropping copula family %s from the ensemble: %s", name, exc)
            dropped.append(name)
    return fits, tuple(dropped)


def run_ensemble(pseudo, cfg, executor=None, fits=None, tickers=None, tail="lower"):
    """Build the nmr partitions and accumulate them.

    Parameters
    ----------
    pseudo : (d, T) array
        Pseudo-observations, one row per series.
    cfg : EnsembleConfig
    executor : concurrent.futures.Executor, optional
        Used for the pair fits.
    fits : dict, optional
        Precomputed ``{family: [CopulaFit, ...]}``. Families missing from it
        count as dropped. Each fit is reused for every quantile.
    tail : {"lower", "upper"}
        Upper-tail mode evaluates the upper coefficient at ``1 - q``.
    """
    u = np.asarray(pseudo, dtype=float)
    d = u.shape[0]
    if d < cfg.k_max + 1:
        raise DomainError(f"need at least k_max + 1 = {cfg.k_max + 1} series, got {d}")
    if fits is None:
        fits, dropped = fit_family_layers(u, cfg.families, executor)
    else:
        dropped = tuple(f for f in cfg.families if f not in fits)
    members, matrices = [], []
    for name in cfg.families:
        if name not in fits:
            continue
        for q in cfg.quantiles:
            delta = build_matrix(fits[name], q, d=d, tickers=tickers, tail=tail)
            matrices.append(delta)
            for linkage, part, score in cluster_layer(delta, cfg.linkages, cfg.k_min, cfg.k_max):
                members.append(EnsembleMember(name, q, linkage, part, score))
    if not members:
        raise PipelineError("every copula family failed to fit; the ensemble is empty")
    state = accumulate(m.partition for m in members)
    return EnsembleResult(tuple(members), state, dropped, tuple(matrices))


def final_partition(state, linkage="average", rule="max_gap", k_min=None, k_max=None, k=None):
    """Cluster the consensus dissimilarity and cut it.

    ``rule`` is ``"max_gap"`` (largest jump in merge heights),
    ``"silhouette"`` (best mean silhouette over [k_min, k_max]) or
    ``"fixed_k"``. Returns ``(partition, dendrogram)``.
    """
    dend = hierclust.agglomerate(state.dissimilarity, linkage)
    if rule == "max_gap":
        part = hierclust.best_cut_max_gap(dend)
    elif rule == "silhouette":
        part, _ = hierclust.best_cut_silhouette(dend, state.dissimilarity, k_min, k_max)
    elif rule == "fixed_k":
        part = hierclust.cut_k(dend, k)
    else:
        raise DomainError(f"unknown cut rule {rule!r}; expected one of {CUT_RULES}")
    return part, dend


def single_copula_partition(fits, linkage, k_min, k_max, d=None, tickers=None):
    """Competitor clustering from one family's asymptotic lower-tail coefficients.

    Returns ``(partition, silhouette)``.
    """
    delta = build_matrix(fits, 0.5, d=d, tickers=tickers, asymptotic=True)
    dend = hierclust.agglomerate(delta, linkage)
    return hierclust.best_cut_silhouette(dend, delta, k_min, k_max)
