"""Local differential privacy applied by the client to its final-layer update."""

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import DomainError
from .model import GradientUpdate
from .numerics import make_rng, sample_gaussian

CLIP_THEN_NOISE = "clip_then_noise"
NOISE_THEN_CLIP = "noise_then_clip"


@dataclass(frozen=True)
class LdpConfig:
    clip_norm: float = None
    noise_sigma: float = None
    order: str = CLIP_THEN_NOISE

    def __post_init__(self):
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise DomainError(f"clip norm must be positive, got {self.clip_norm}")
        if self.noise_sigma is not None and not self.noise_sigma >= 0:
            raise DomainError(f"noise sigma must be >= 0, got {self.noise_sigma}")
        if self.order not in (CLIP_THEN_NOISE, NOISE_THEN_CLIP):
            raise DomainError(f"unknown order {self.order!r}")

    @property
    def enabled(self):
        return self.clip_norm is not None or self.noise_sigma is not None

    def to_dict(self):
        return {"clip_norm": self.clip_norm, "noise_sigma": self.noise_sigma, "order": self.order,
                "norm_granularity": "joint"}


def _rebuild(update, flat):
    k, p = update.weight_grad.shape
    w = flat[: k * p].reshape(k, p)
    b = None if update.bias_grad is None else flat[k * p:]
    return GradientUpdate(w, b, update.declared_n, update.steps_averaged)


def update_norm(update):
    """L2 norm of weights and bias gradients taken together."""
    return float(np.linalg.norm(update.flat()))


def clip_update(update, rho):
    """Rescale the update to norm ``rho`` if its joint L2 norm exceeds ``rho``."""
    if not rho > 0:
        raise DomainError(f"clip norm must be positive, got {rho}")
    norm = update_norm(update)
    if norm <= rho:
        return update
    return _rebuild(update, update.flat() * (rho / norm))


def noise_update(update, sigma, rng):
    """Add i.i.d. N(0, sigma^2) noise to every gradient component."""
    flat = update.flat()
    return _rebuild(update, flat + sample_gaussian(make_rng(rng), flat.shape[0], sigma))


def apply_ldp(update, cfg, rng):
    if cfg is None or not cfg.enabled:
        warnings.warn("LDP requested without clipping or noise; update left unchanged", stacklevel=2)
        return update
    steps = [lambda u: clip_update(u, cfg.clip_norm) if cfg.clip_norm is not None else u,
             lambda u: noise_update(u, cfg.noise_sigma, rng) if cfg.noise_sigma is not None else u]
    if cfg.order == NOISE_THEN_CLIP:
        steps.reverse()
    for step in steps:
        update = step(update)
    return update


class LdpTransformer(BaseEstimator, TransformerMixin):
    """Transformer facade: maps a list of updates to their privatized versions."""

    def __init__(self, clip_norm=None, noise_sigma=None, order=CLIP_THEN_NOISE, random_state=0):
        self.clip_norm = clip_norm
        self.noise_sigma = noise_sigma
        self.order = order
        self.random_state = random_state

    def fit(self, updates=None, y=None):
        self.config_ = LdpConfig(self.clip_norm, self.noise_sigma, self.order)
        return self

    def transform(self, updates):
        cfg = getattr(self, "config_", None) or LdpConfig(self.clip_norm, self.noise_sigma, self.order)
        rng = make_rng(self.random_state)
        if isinstance(updates, GradientUpdate):
            return apply_ldp(updates, cfg, rng)
        return [apply_ldp(u, cfg, rng) for u in updates]
