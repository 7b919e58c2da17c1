"""Tail-dependence dissimilarity matrices.

A pair with tail dependence coefficient ``lam`` is at distance
``sqrt(2 * (1 - lam))``: 0 under full tail dependence and sqrt(2) without it.
"""

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import copula
from .errors import DomainError, IncompleteInputError

PROVENANCES = ("copula_tdc", "consensus")
SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class DissimilarityMatrix:
    values: np.ndarray = field(repr=False)
    family: str = None
    quantile: float = None
    provenance: str = "copula_tdc"
    tickers: tuple = None
    tail: str = "lower"

    def __post_init__(self):
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DomainError(f"dissimilarity matrix must be square, got shape {v.shape}")
        if not np.array_equal(v, v.T):
            raise DomainError("dissimilarity matrix is not symmetric")
        if np.any(np.diag(v) != 0.0):
            raise DomainError("dissimilarity matrix has a non-zero diagonal")
        if not np.all((v >= 0.0) & (v <= SQRT2)):
            raise DomainError("dissimilarity entries must lie in [0, sqrt(2)]")
        if self.provenance not in PROVENANCES:
            raise DomainError(f"unknown provenance {self.provenance!r}")
        if self.tickers is not None and len(self.tickers) != v.shape[0]:
            raise DomainError("ticker count does not match the matrix size")

    @property
    def d(self):
        return self.values.shape[0]

    def metadata(self):
        return {"family": self.family, "q": self.quantile, "provenance": self.provenance, "tail": self.tail}

    def write(self, csv_path, json_path=None):
        """CSV with a ticker header row and column, plus an optional JSON sidecar."""
        write_labelled_matrix(csv_path, self.values, self.tickers or tuple(str(i) for i in range(self.d)))
        if json_path is not None:
            with open(json_path, "w", encoding="utf-8") as fh:
                json.dump(self.metadata(), fh, indent=2, sort_keys=True)
                fh.write("\n")


def write_labelled_matrix(path, values, labels):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["", *labels])
        for label, row in zip(labels, values):
            w.writerow([label, *(repr(float(x)) for x in row)])


def read_labelled_matrix(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    labels = tuple(rows[0][1:])
    values = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    return labels, values


def tdc_to_dissimilarity(lam):
    """sqrt(2 (1 - lam)) for lam in [0, 1]."""
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"tail dependence coefficient {lam} outside [0, 1]")
    return math.sqrt(2.0 * (1.0 - lam))


def _pair_index(fits):
    index = {}
    for fit in fits:
        i, j = sorted(fit.pair)
        index[(i, j)] = fit
    return index


def build_matrix(fits, q, d=None, tickers=None, tail="lower", asymptotic=False):
    """Dissimilarity matrix from all-pairs fits of a single copula family.

    Parameters
    ----------
    fits : iterable of CopulaFit
        One fit per unordered pair, each with its ``pair`` set.
    q : float
        Quantile level in (0, 1/2]. In upper-tail mode the coefficient is
        evaluated at ``1 - q``.
    tail : {"lower", "upper"}
    asymptotic : bool
        Use the limiting lower-tail coefficient instead of the finite one.
    """
    fits = list(fits)
    if not fits:
        raise IncompleteInputError("no copula fits supplied")
    families = {f.family for f in fits}
    if len(families) != 1:
        raise DomainError(f"fits mix several families: {sorted(families)}")
    if tail not in ("lower", "upper"):
        raise DomainError(f"tail must be 'lower' or 'upper', got {tail!r}")
    if not 0.0 < q <= 0.5:
        raise DomainError(f"quantile q={q} outside (0, 0.5]")
    index = _pair_index(fits)
    if d is None:
        d = len(tickers) if tickers is not None else 1 + max(j for _, j in index)
    (family,) = families

    values = np.zeros((d, d))
    for i in range(d):
        for j in range(i + 1, d):
            fit = index.get((i, j))
            if fit is None:
                raise IncompleteInputError(f"missing {family} fit for pair ({i}, {j})")
            if asymptotic:
                lam = copula.asymptotic_lower_tdc(family, fit.params)
            elif tail == "lower":
                lam = copula.finite_lower_tdc(family, fit.params, q)
            else:
                lam = copula.finite_upper_tdc(family, fit.params, 1.0 - q)
            # evaluation noise can push a ratio a hair outside [0, 1]
            lam = min(max(lam, 0.0), 1.0)
            values[i, j] = values[j, i] = tdc_to_dissimilarity(lam)
    return DissimilarityMatrix(
        values, family=family, quantile=None if asymptotic else float(q),
        tickers=None if tickers is None else tuple(tickers), tail=tail,
    )
