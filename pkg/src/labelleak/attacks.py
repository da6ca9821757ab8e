"""Label-histogram reconstruction from final-layer gradients.

Four heuristic attacks (LLG, LLG*, LLBG, EBI) share one two-phase greedy
decoder and differ in which gradient they score and how they estimate the
per-instance impact ``m``. iLRG instead solves a nonnegative linear system.

Every attack sees only a :class:`~labelleak.model.GradientUpdate` and, where
white-box knowledge is assumed, the model snapshot the client started from.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import CapabilityError, DegenerateError, DomainError, NumericError, SizeError
from .model import forward
from .numerics import make_rng, softmax, solve_nonneg_least_squares
from .validation import check_count, check_vector

ILRG_BIAS_THRESHOLD = 1e-8
ILRG_REL_THRESHOLD = 0.2
DEFAULT_PROBES = 10


@dataclass(frozen=True)
class ImpactEstimate:
    m: float
    source: str  # "untrained_prior" | "empirical" | "dummy_probe"


@dataclass
class AttackResult:
    attack_name: str
    counts: np.ndarray
    impact: ImpactEstimate = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def class_count(self):
        return self.counts.shape[0]


def greedy_decode(scores, m, n, phase1):
    """Two-phase greedy decoding of a label histogram.

    Phase 1 gives one count to every class flagged in ``phase1`` and shifts its
    score by ``-m``. Phase 2 repeatedly credits the class with the lowest score
    (ties to the lowest index) and shifts it by ``-m`` until ``n`` counts are
    handed out. If more classes are flagged than ``n`` allows, the most
    negative-scoring ones win.
    """
    m = m.m if isinstance(m, ImpactEstimate) else float(m)
    if not m < 0:
        raise DomainError(f"impact m must be negative, got {m}")
    scores = check_vector(scores, "scores").copy()
    n = check_count(n, "N")
    flags = np.asarray(phase1, dtype=bool)
    if flags.shape != scores.shape:
        raise SizeError("phase1 flags must have one entry per class")
    counts = np.zeros(scores.shape[0], dtype=np.int64)
    if n == 0:
        return counts
    flagged = np.flatnonzero(flags)
    flagged = flagged[np.argsort(scores[flagged], kind="stable")][:n]
    for j in sorted(flagged):
        counts[j] += 1
        scores[j] -= m
    for _ in range(n - int(counts.sum())):
        j = int(np.argmin(scores))
        counts[j] += 1
        scores[j] -= m
    return counts


def uniform_histogram(k, n):
    counts = np.full(k, n // k, dtype=np.int64)
    counts[: n % k] += 1
    return counts


def largest_remainder_round(x, n):
    """Round nonnegative reals to integers summing to ``n``.

    ``x`` is first rescaled to sum to ``n``; leftover units go to the largest
    fractional parts (ties to the lowest index).
    """
    x = np.clip(np.asarray(x, dtype=np.float64), 0, None)
    total = x.sum()
    if total <= 0:
        raise NumericError("cannot round an all-zero solution", best=x)
    scaled = x * (n / total)
    base = np.floor(scaled).astype(np.int64)
    short = n - int(base.sum())
    if short > 0:
        order = np.argsort(-(scaled - base), kind="stable")
        base[order[:short]] += 1
    return base


def _require_bias(update, name):
    if update.bias_grad is None:
        raise CapabilityError(f"{name} needs a bias gradient; the model has no final-layer bias")
    return update.bias_grad


def attack_llbg(update):
    """LLBG for untrained models: impact fixed at ``-1/N``."""
    beta = _require_bias(update, "LLBG")
    n = update.declared_n
    impact = ImpactEstimate(-1.0 / n, "untrained_prior")
    counts = greedy_decode(beta, impact, n, beta < 0)
    return AttackResult("llbg", counts, impact, {"phase1": np.flatnonzero(beta < 0).tolist()})


def attack_ebi(update):
    """EBI: impact estimated as the sum of the negative bias components over N."""
    beta = _require_bias(update, "EBI")
    n = update.declared_n
    neg = beta < 0
    if not neg.any():
        return AttackResult("ebi", uniform_histogram(beta.shape[0], n), None,
                            {"degenerate": "no negative bias component", "phase1": []})
    impact = ImpactEstimate(float(beta[neg].sum() / n), "empirical")
    counts = greedy_decode(beta, impact, n, neg)
    return AttackResult("ebi", counts, impact, {"phase1": np.flatnonzero(neg).tolist()})


def _llg_scores(update):
    g = update.weight_grad.sum(axis=1)
    if not np.any(update.weight_grad):
        raise DegenerateError("weight gradient is identically zero")
    return g


def llg_impact(g, n):
    """Empirical LLG impact: negative row-sums summed and divided by N.

    Falls back to ``-max|g| / N`` when no row-sum is negative.
    """
    neg = g < 0
    if neg.any():
        return ImpactEstimate(float(g[neg].sum() / n), "empirical")
    return ImpactEstimate(float(-np.abs(g).max() / n), "empirical")


def attack_llg(update):
    """LLG: weight-gradient row-sums as scores, empirically estimated impact."""
    g = _llg_scores(update)
    n = update.declared_n
    impact = llg_impact(g, n)
    counts = greedy_decode(g, impact, n, g < 0)
    return AttackResult("llg", counts, impact, {"phase1": np.flatnonzero(g < 0).tolist()})


def probe_impact(model, n, rng, probes=DEFAULT_PROBES):
    """Per-instance impact on a weight-gradient row-sum, measured on dummy data.

    Each probe is a batch of ``n`` standard-normal inputs with uniformly drawn
    labels. A sample of class y moves row y's sum by ``(p_y - 1) * sum(h) / n``;
    the estimate is the mean of that quantity over all probe samples.
    """
    rng = make_rng(rng)
    k, d = model.arch.class_count, model.arch.input_dim
    effects = []
    for _ in range(probes):
        X = rng.standard_normal((n, d))
        y = rng.integers(0, k, size=n)
        h, p = forward(model, X)
        effects.append((p[np.arange(n), y] - 1.0) * h.sum(axis=1) / n)
    return ImpactEstimate(float(np.mean(np.concatenate(effects))), "dummy_probe")


def attack_llg_star(update, model, rng, probes=DEFAULT_PROBES, impact=None):
    """LLG*: LLG decoding with the impact measured on dummy batches.

    A precomputed ``impact`` skips the probing, which only depends on the
    snapshot and N.
    """
    g = _llg_scores(update)
    n = update.declared_n
    diagnostics = {"phase1": np.flatnonzero(g < 0).tolist()}
    if impact is None and probes > 0:
        impact = probe_impact(model, n, rng, probes)
    if impact is None or not impact.m < 0:
        diagnostics["fallback"] = "probe estimate unavailable; used the LLG estimator"
        impact = llg_impact(g, n)
    counts = greedy_decode(g, impact, n, g < 0)
    return AttackResult("llg_star", counts, impact, diagnostics)


def attack_ilrg(update, final_layer, threshold=ILRG_BIAS_THRESHOLD, rel_threshold=ILRG_REL_THRESHOLD):
    """iLRG: recover class-mean features, push them through the final layer,
    then solve ``N * beta = sum_k lambda_k p(k) - lambda`` for ``lambda >= 0``.

    The batch size is appended as the row ``sum(lambda) = N``; without it the
    system is rank deficient because every column of ``P - I`` sums to zero.
    """
    beta = _require_bias(update, "iLRG")
    w_last, b_last = final_layer
    if b_last is None:
        raise CapabilityError("iLRG needs the final-layer bias of the snapshot")
    n = update.declared_n
    k = beta.shape[0]
    usable = np.abs(beta) > max(threshold, rel_threshold * np.abs(beta).max())
    if not usable.any():
        raise NumericError("bias gradient is zero for every class; nothing to invert",
                           residual=float(np.linalg.norm(beta)))
    feats = np.empty((k, update.weight_grad.shape[1]))
    feats[usable] = update.weight_grad[usable] / beta[usable, None]
    if not usable.all():
        feats[~usable] = feats[usable].mean(axis=0)
    probs = softmax(feats @ w_last.T + b_last)  # row k = p(k)
    A = np.vstack([probs.T - np.eye(k), np.ones((1, k))])
    rhs = np.concatenate([n * beta, [n]])
    if np.linalg.matrix_rank(A) < k:
        raise NumericError("iLRG system is singular", residual=float(np.linalg.norm(rhs)))
    lam, residual = solve_nonneg_least_squares(A, rhs)
    counts = largest_remainder_round(lam, n)
    return AttackResult("ilrg", counts, None,
                        {"residual": residual, "excluded": np.flatnonzero(~usable).tolist(),
                         "solution": lam.tolist()})


# -- estimator facades ------------------------------------------------------------

class LabelAttack(BaseEstimator):
    """Base class: ``fit`` takes the model snapshot the server broadcast,
    ``predict`` maps updates to label histograms."""

    name = None

    def fit(self, model=None):
        self.snapshot_ = model
        return self

    def reconstruct(self, update):
        raise NotImplementedError

    def predict(self, updates):
        if hasattr(updates, "weight_grad"):
            updates = [updates]
        return np.vstack([self.reconstruct(u).counts for u in updates])


class LLBG(LabelAttack):
    name = "llbg"

    def reconstruct(self, update):
        return attack_llbg(update)


class EBI(LabelAttack):
    name = "ebi"

    def reconstruct(self, update):
        return attack_ebi(update)


class LLG(LabelAttack):
    name = "llg"

    def reconstruct(self, update):
        return attack_llg(update)


class LLGStar(LabelAttack):
    name = "llg_star"

    def __init__(self, probes=DEFAULT_PROBES, random_state=0):
        self.probes = probes
        self.random_state = random_state

    def fit(self, model=None):
        if model is None:
            raise CapabilityError("LLG* needs the model snapshot")
        self.snapshot_ = model
        self._impacts = {}
        return self

    def reconstruct(self, update):
        n = update.declared_n
        if n not in self._impacts and self.probes > 0:
            self._impacts[n] = probe_impact(self.snapshot_, n, make_rng([self.random_state, n]), self.probes)
        return attack_llg_star(update, self.snapshot_, None, probes=0, impact=self._impacts.get(n))


class ILRG(LabelAttack):
    name = "ilrg"

    def __init__(self, bias_threshold=ILRG_BIAS_THRESHOLD):
        self.bias_threshold = bias_threshold

    def fit(self, model=None):
        if model is None:
            raise CapabilityError("iLRG needs the model snapshot")
        self.snapshot_ = model
        return self

    def reconstruct(self, update):
        return attack_ilrg(update, self.snapshot_.final_layer, self.bias_threshold)


ATTACKS = {cls.name: cls for cls in (LLG, LLGStar, LLBG, EBI, ILRG)}
BIAS_ATTACKS = ("ebi", "llbg", "ilrg")
WEIGHT_ATTACKS = ("llg", "llg_star")


def make_attack(name, **params):
    try:
        return ATTACKS[name](**params)
    except KeyError:
        raise DomainError(f"unknown attack {name!r}; choose from {sorted(ATTACKS)}") from None
