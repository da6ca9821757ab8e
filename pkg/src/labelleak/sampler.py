"""Batch construction under shuffled, sequential and balanced sampling."""

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .exceptions import SizeError
from .numerics import make_rng
from .validation import check_count


class SamplingStrategy(str, Enum):
    SHUFFLED = "shuffled"
    SEQUENTIAL = "sequential"
    BALANCED = "balanced"


@dataclass(frozen=True)
class Batch:
    window_indices: np.ndarray
    declared_size: int

    def __post_init__(self):
        if len(self.window_indices) != self.declared_size:
            raise SizeError("batch length differs from its declared size")

    def __len__(self):
        return self.declared_size


class EmptyClassWarning(UserWarning):
    pass


def _chunk(order, n):
    n_batches = len(order) // n
    return [Batch(np.asarray(order[i * n:(i + 1) * n]), n) for i in range(n_batches)]


def _balanced(labels, n, n_batches, class_count, rng):
    pools = [np.flatnonzero(labels == k) for k in range(class_count)]
    present = [k for k in range(class_count) if pools[k].size]
    empty = [k for k in range(class_count) if not pools[k].size]
    if empty:
        warnings.warn(f"classes {empty} have no windows; their share goes to the other classes",
                      EmptyClassWarning, stacklevel=3)
    per_class, rem = divmod(n, len(present))
    # each class pool is consumed in random order and reshuffled once exhausted
    queues = {k: [] for k in present}

    def draw(k, m):
        out = []
        while len(out) < m:
            if not queues[k]:
                queues[k] = list(rng.permutation(pools[k]))
            out.append(queues[k].pop())
        return out

    batches = []
    for _ in range(n_batches):
        idx = []
        for rank, k in enumerate(present):
            idx.extend(draw(k, per_class + (1 if rank < rem else 0)))
        batches.append(Batch(np.asarray(idx, dtype=np.int64), n))
    return batches


def make_batches(windows, n, strategy, rng, allow_single_batch=False):
    """Split ``windows`` into batches of ``n`` windows.

    * shuffled: random permutation, chunked; the partial tail is dropped.
    * sequential: windows in temporal order, chunked; tail dropped.
    * balanced: ``n // K`` windows per class per batch (remainder to the lowest
      class indices), drawn from per-class pools, repeating windows once a pool
      runs dry. Produces as many batches as shuffled sampling would.

    When ``n`` exceeds the number of windows, a single batch holding every
    window is returned if ``allow_single_batch`` is set, else ``SizeError``.
    """
    n = check_count(n, "N", minimum=1)
    strategy = SamplingStrategy(strategy)
    total = len(windows)
    if total == 0:
        raise SizeError("no windows to sample from")
    rng = make_rng(rng)
    if n > total:
        if not allow_single_batch:
            raise SizeError(f"batch size {n} exceeds the {total} available windows")
        n = total
    n_batches = total // n

    if strategy is SamplingStrategy.SEQUENTIAL:
        return _chunk(np.argsort(windows.starts, kind="stable"), n)
    if strategy is SamplingStrategy.SHUFFLED:
        return _chunk(rng.permutation(total), n)
    return _balanced(windows.labels, n, n_batches, windows.class_count, rng)


def batch_histogram(labels, batch, class_count):
    return np.bincount(np.asarray(labels)[batch.window_indices], minlength=class_count)
