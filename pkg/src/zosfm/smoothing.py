"""Gaussian-smoothing gradient oracles.

A handle ``F`` is any callable mapping a batch of points ``(m, n)`` to an
array of ``m`` values (the extension handles in ``zosfm.lovasz`` qualify).
Directions ``u`` are standard normal (identity covariance) and may carry
leading batch dimensions ``(..., n)``; every oracle returns one estimate per
direction, with the same shape as ``u``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ParameterError

VARIANTS = ("forward", "central", "backward", "online-split", "online-reverse")
ONLINE_VARIANTS = ("online-split", "online-reverse")

# Function evaluations per direction; each costs one extension evaluation.
EVALS_PER_SAMPLE = {v: 2 for v in VARIANTS}

STREAMS = ("directions", "thresholds", "backend", "init")


@dataclass(frozen=True)
class SmoothingConfig:
    """Smoothing parameter ``mu``, directions per step ``t`` and oracle variant."""

    mu: float
    t: int = 1
    variant: str = "forward"
    seed: int = 0

    def __post_init__(self):
        if not self.mu > 0:
            raise ParameterError(f"smoothing parameter must be positive, got {self.mu}")
        if int(self.t) != self.t or self.t < 1:
            raise ParameterError(f"batch size must be a positive integer, got {self.t}")
        if self.variant not in VARIANTS:
            raise ParameterError(f"unknown oracle variant {self.variant!r}; choose from {VARIANTS}")


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for directions, thresholds, backend sampling and init."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(ss) for name, ss in zip(STREAMS, children)}


def _evaluate(F, points: np.ndarray) -> np.ndarray:
    flat = points.reshape(-1, points.shape[-1])
    values = np.asarray(F(flat), dtype=float).reshape(points.shape[:-1])
    if not np.all(np.isfinite(values)):
        raise NumericError("function handle returned non-finite values")
    return values


def _pair(F_a, pts_a, F_b, pts_b) -> tuple[np.ndarray, np.ndarray]:
    if F_a is F_b:
        both = _evaluate(F_a, np.stack([pts_a, pts_b]))
        return both[0], both[1]
    return _evaluate(F_a, pts_a), _evaluate(F_b, pts_b)


def _prepare(x, u):
    u = np.asarray(u, dtype=float)
    # One base evaluation per direction keeps the cost at 2 per direction.
    return np.broadcast_to(np.asarray(x, dtype=float), u.shape), u


def _check_mu(mu):
    if not mu > 0:
        raise ParameterError(f"smoothing parameter must be positive, got {mu}")


def oracle_forward(F, x, mu: float, u) -> np.ndarray:
    """``(F(x + mu u) - F(x)) / mu * u``."""
    _check_mu(mu)
    x, u = _prepare(x, u)
    hi, lo = _pair(F, x + mu * u, F, x)
    return ((hi - lo) / mu)[..., None] * u


def oracle_central(F, x, mu: float, u) -> np.ndarray:
    """``(F(x + mu u) - F(x - mu u)) / (2 mu) * u``."""
    _check_mu(mu)
    x, u = _prepare(x, u)
    hi, lo = _pair(F, x + mu * u, F, x - mu * u)
    return ((hi - lo) / (2.0 * mu))[..., None] * u


def oracle_backward(F, x, mu: float, u) -> np.ndarray:
    """``(F(x) - F(x - mu u)) / mu * u``."""
    _check_mu(mu)
    x, u = _prepare(x, u)
    hi, lo = _pair(F, x, F, x - mu * u)
    return ((hi - lo) / mu)[..., None] * u


def oracle_online_split(F_k, F_half, x, mu: float, u) -> np.ndarray:
    """``(F_k(x + mu u) - F_{k+1/2}(x)) / mu * u``; unbiased for the smoothed ``F_k`` gradient."""
    _check_mu(mu)
    x, u = _prepare(x, u)
    hi, lo = _pair(F_k, x + mu * u, F_half, x)
    return ((hi - lo) / mu)[..., None] * u


def oracle_online_reverse(F_k, F_half, x, mu: float, u) -> np.ndarray:
    """``(F_{k+1/2}(x + mu u) - F_k(x)) / mu * u``; unbiased for the smoothed ``F_{k+1/2}`` gradient."""
    _check_mu(mu)
    x, u = _prepare(x, u)
    hi, lo = _pair(F_half, x + mu * u, F_k, x)
    return ((hi - lo) / mu)[..., None] * u


_SINGLE = {
    "forward": oracle_forward,
    "central": oracle_central,
    "backward": oracle_backward,
}
_ONLINE = {
    "online-split": oracle_online_split,
    "online-reverse": oracle_online_reverse,
}


def directional_estimates(variant: str, handles, x, mu: float, u) -> np.ndarray:
    """Single-direction estimates for every direction in ``u`` (shape ``(..., n)``).

    ``handles`` is ``F`` (or ``(F,)``) for the offline variants and
    ``(F_k, F_{k+1/2})`` for the online ones. Offline variants also accept a
    pair and then use its first entry.
    """
    if variant not in VARIANTS:
        raise ParameterError(f"unknown oracle variant {variant!r}")
    if callable(handles):
        handles = (handles,)
    if variant in _ONLINE:
        if len(handles) == 1:
            handles = (handles[0], handles[0])
        return _ONLINE[variant](handles[0], handles[1], x, mu, u)
    return _SINGLE[variant](handles[0], x, mu, u)


def oracle_batch(variant: str, handles, x, config: SmoothingConfig, rng: np.random.Generator,
                 u=None) -> np.ndarray:
    """Mean of ``config.t`` independent single-direction estimates at ``x``.

    Directions are drawn as one ``(t, n)`` block from ``rng`` unless given.
    """
    x = np.asarray(x, dtype=float)
    if u is None:
        u = rng.standard_normal((config.t, x.shape[-1]))
    u = np.asarray(u, dtype=float)
    return directional_estimates(variant, handles, x, config.mu, u).mean(axis=-2)


def smoothed_value_mc(F, x, mu: float, m: int, seed=0) -> tuple[float, float]:
    """Monte Carlo estimate of ``E_u F(x + mu u)`` and its standard error."""
    if m < 2:
        raise ParameterError("need at least two samples for a standard error")
    _check_mu(mu)
    x = np.asarray(x, dtype=float)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.standard_normal((int(m), x.size))
    values = _evaluate(F, x[None, :] + mu * u)
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(m))
