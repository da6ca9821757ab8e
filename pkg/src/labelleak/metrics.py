"""Leakage metrics: LeAcc and LnAcc per batch, ClassAcc and a confusion
matrix per client."""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .exceptions import SizeError, UndefinedMetricError
from .validation import check_histogram


@dataclass(frozen=True)
class BatchEvaluation:
    gt: np.ndarray
    rec: np.ndarray
    n: int

    def __post_init__(self):
        gt = check_histogram(self.gt, "gt")
        rec = check_histogram(self.rec, "rec", length=gt.shape[0])
        if gt.sum() != self.n:
            raise SizeError(f"ground truth sums to {gt.sum()}, not N={self.n}")
        object.__setattr__(self, "gt", gt)
        object.__setattr__(self, "rec", rec)


def _pair(gt, rec):
    gt = check_histogram(gt, "gt")
    return gt, check_histogram(rec, "rec", length=gt.shape[0])


def leacc(gt, rec, complement=True):
    """Fraction of classes whose presence is inferred correctly.

    With ``complement=False`` the raw mismatch rate is returned instead.
    """
    gt, rec = _pair(gt, rec)
    k = gt.shape[0]
    mismatched = int(np.count_nonzero((gt > 0) != (rec > 0)))
    return (k - mismatched) / k if complement else mismatched / k


def lnacc(gt, rec, n=None):
    """Histogram intersection normalized by the batch size."""
    gt, rec = _pair(gt, rec)
    n = int(gt.sum()) if n is None else n
    if gt.sum() != n:
        raise SizeError(f"ground truth sums to {gt.sum()}, not N={n}")
    return int(np.minimum(gt, rec).sum()) / n


def class_totals(batches):
    if not batches:
        raise SizeError("no batches to aggregate")
    return sum(b.gt for b in batches), sum(b.rec for b in batches)


def classacc_from_totals(g, r):
    present = np.flatnonzero(g > 0)
    if present.size == 0:
        raise UndefinedMetricError("no class occurs in the ground truth")
    # exact rational mean, rounded once
    total = sum(Fraction(int(min(g[j], r[j])), int(g[j])) for j in present)
    return float(total / present.size)


def classacc(batches):
    """Class-averaged accuracy over a client's pooled batches.

    Per class, the matched count ``min(G_j, R_j)`` over the total ground truth
    ``G_j``; averaged over the classes that occur.
    """
    return classacc_from_totals(*class_totals(batches))


def confusion_matrix(batches):
    """Row-normalized K x K reconstruction confusion matrix.

    Histograms carry no pairing between instances, so within each batch the
    matched part ``min(gt_j, rec_j)`` sits on the diagonal and each class's
    unmatched ground truth is spread over the classes with surplus
    reconstructions in proportion to that surplus.
    """
    if not batches:
        raise SizeError("no batches to aggregate")
    k = batches[0].gt.shape[0]
    cm = np.zeros((k, k))
    for b in batches:
        matched = np.minimum(b.gt, b.rec)
        cm[np.diag_indices(k)] += matched
        deficit = b.gt - matched
        surplus = b.rec - matched
        if surplus.sum() > 0:
            cm += np.outer(deficit, surplus / surplus.sum())
    totals = sum(b.gt for b in batches)
    rows = totals > 0
    cm[rows] /= totals[rows, None]
    return cm


def mean_leacc(batches, complement=True):
    return float(np.mean([leacc(b.gt, b.rec, complement) for b in batches]))


def mean_lnacc(batches):
    return float(np.mean([lnacc(b.gt, b.rec, b.n) for b in batches]))
