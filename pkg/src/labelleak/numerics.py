"""Deterministic numeric kernels: softmax, cross-entropy gradients, NNLS and
seeded sampling.

All arithmetic is float64. Random draws go through :class:`numpy.random.Generator`
backed by PCG64, which is bit-reproducible across platforms for a fixed seed.
"""

import numpy as np

from .exceptions import DomainError, NumericError, SizeError
from .validation import check_count, check_matrix, check_vector

RNG_ALGORITHM = "PCG64"
NNLS_MAX_ITER = 10_000
NNLS_RESIDUAL_TOL = 1e-10


def make_rng(seed):
    """Return a PCG64-backed generator for ``seed``.

    Passing an existing ``Generator`` returns it unchanged so that callers can
    plumb either a seed or a generator through.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        raise DomainError("an explicit seed is required")
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed, n):
    """Derive ``n`` independent generators from one seed (one per worker)."""
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.PCG64(c)) for c in children]


def derive_seed(seed, *keys):
    """Deterministic 63-bit child seed for ``(seed, *keys)``."""
    entropy = [int(seed)] + [int(k) for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def softmax(logits):
    """Numerically stable softmax of a vector, or row-wise for a matrix."""
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise SizeError("softmax of an empty vector")
    if not np.all(np.isfinite(z)):
        raise DomainError("softmax input contains non-finite entries")
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def ce_logit_gradient(probs, label):
    """Gradient of cross-entropy w.r.t. the logits: ``probs - onehot(label)``."""
    p = check_vector(probs, "probs")
    if not 0 <= int(label) < p.shape[0]:
        raise IndexError(f"label {label} out of range for {p.shape[0]} classes")
    g = p.copy()
    g[int(label)] -= 1.0
    return g


def solve_nonneg_least_squares(A, b, max_iter=NNLS_MAX_ITER, tol=NNLS_RESIDUAL_TOL):
    """Solve ``min ||Ax - b||_2`` subject to ``x >= 0``.

    Lawson-Hanson active-set method. Returns ``(x, residual_norm)``.
    Raises :class:`NumericError` (carrying the best iterate) if the iteration
    cap is reached before the KKT conditions hold.
    """
    A = check_matrix(A, "A")
    b = check_vector(b, "b")
    m, n = A.shape
    if m != b.shape[0]:
        raise SizeError(f"A has {m} rows but b has length {b.shape[0]}")

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    kkt_tol = 10 * max(m, n) * np.finfo(float).eps * max(1.0, np.linalg.norm(A, 1) * np.linalg.norm(b))
    r = b - A @ x
    w = A.T @ r
    it = 0
    while True:
        if np.linalg.norm(r) <= tol:
            break
        if passive.all() or np.max(np.where(passive, -np.inf, w)) <= kkt_tol:
            break
        if it >= max_iter:
            raise NumericError("NNLS iteration cap reached", best=x, residual=float(np.linalg.norm(r)))
        j = int(np.argmax(np.where(passive, -np.inf, w)))
        passive[j] = True
        while True:
            it += 1
            if it > max_iter:
                raise NumericError("NNLS iteration cap reached", best=x, residual=float(np.linalg.norm(b - A @ x)))
            z = np.zeros(n)
            z[passive] = np.linalg.lstsq(A[:, passive], b, rcond=None)[0]
            if np.all(z[passive] > 0):
                x = z
                break
            # step back towards x until the first passive variable hits zero
            neg = passive & (z <= 0)
            alpha = np.min(x[neg] / (x[neg] - z[neg]))
            x = x + alpha * (z - x)
            passive &= x > np.finfo(float).eps * 10
            x[~passive] = 0.0
        r = b - A @ x
        w = A.T @ r
    return x, float(np.linalg.norm(b - A @ x))


def sample_gaussian(rng, count, sigma):
    """``count`` i.i.d. draws from N(0, sigma^2)."""
    count = check_count(count, "count")
    if not np.isfinite(sigma) or sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    rng = make_rng(rng)
    if sigma == 0:
        return np.zeros(count)
    return sigma * rng.standard_normal(count)
