"""Lovasz extension of a normalised set function, its cheaper estimates, and rounding.

All evaluators accept a single point of shape ``(n,)`` or a batch ``(m, n)``
and vectorise over the batch. Points may lie anywhere in ``R^n``: the
sorted-gains formula is used verbatim outside the unit cube, which is what
the smoothing oracles need when ``x + mu*u`` leaves ``[0, 1]^n``.

Coordinate ties are broken by ascending element index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError, ParameterError
from .setfn import SetFunction

BACKEND_KINDS = ("exact", "stochastic", "taylor", "lowrank")


def _points(x, n: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != n:
        raise DimensionError(f"expected point(s) of dimension {n}, got shape {np.shape(x)}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("point has non-finite coordinates")
    return arr, single


def sorted_order(x) -> np.ndarray:
    """Permutation sorting ``x`` in decreasing order, ties by ascending index."""
    return np.argsort(-np.asarray(x, dtype=float), axis=-1, kind="stable")


def prefix_gains(oracle: SetFunction, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sorting permutation, sorted coordinates and marginal gains ``f(A_k) - f(A_{k-1})``."""
    X, _ = _points(x, oracle.n)
    order = sorted_order(X)
    values = oracle.chain(order)
    gains = values.copy()
    gains[:, 1:] -= values[:, :-1]
    return order, np.take_along_axis(X, order, axis=1), gains


def lovasz_exact(oracle: SetFunction, x):
    """``f^L(x) = sum_k x_{j_k} [f(A_k) - f(A_{k-1})]``; ``n`` queries per point."""
    X, single = _points(x, oracle.n)
    _, xs, gains = prefix_gains(oracle, X)
    out = np.sum(xs * gains, axis=1)
    return float(out[0]) if single else out


def lovasz_subgradient(oracle: SetFunction, x) -> np.ndarray:
    """Greedy subgradient: component ``j_k`` equals ``f(A_k) - f(A_{k-1})``."""
    X, single = _points(x, oracle.n)
    order, _, gains = prefix_gains(oracle, X)
    g = np.empty_like(gains)
    np.put_along_axis(g, order, gains, axis=1)
    return g[0] if single else g


def lovasz_value_and_subgradient(oracle: SetFunction, x) -> tuple[float, np.ndarray]:
    """Both at the cost of one chain (``n`` queries): ``f^L(x) = <g, x>``."""
    X, _ = _points(x, oracle.n)
    g = lovasz_subgradient(oracle, X[0])
    return float(g @ X[0]), g


def _sample_positions(n: int, rho: float, m: int, rng: np.random.Generator) -> np.ndarray:
    k = math.ceil(rho * n - 1e-12)
    if k >= n:
        return np.broadcast_to(np.arange(n), (m, n))
    return np.sort(rng.permuted(np.broadcast_to(np.arange(n), (m, n)), axis=1)[:, :k], axis=1)


def lovasz_stochastic(oracle: SetFunction, x, rho: float, rng: np.random.Generator):
    """Sampled-prefix estimate ``sum_{i in I} (x_{pi(i)} - x_{pi(i+1)}) f(S_i)``.

    ``I`` holds ``ceil(rho*n)`` positions drawn uniformly without replacement,
    independently for each point; ``x_{pi(n+1)} = 0``. No reweighting is
    applied, so for ``rho < 1`` the estimate is biased. Costs ``|I|`` queries
    per point.
    """
    if not 0.0 < rho <= 1.0:
        raise ParameterError(f"sampling ratio must lie in (0, 1], got {rho}")
    X, single = _points(x, oracle.n)
    m, n = X.shape
    order = sorted_order(X)
    xs = np.take_along_axis(X, order, axis=1)
    gaps = xs - np.concatenate([xs[:, 1:], np.zeros((m, 1))], axis=1)
    pos = _sample_positions(n, rho, m, rng)
    values = oracle.chain_at(order, pos)
    out = np.sum(np.take_along_axis(gaps, pos, axis=1) * values, axis=1)
    return float(out[0]) if single else out


def lovasz_stochastic_gradient(oracle: SetFunction, x, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Gradient of the sampled-prefix estimate in ``x`` (fixed sample and order)."""
    if not 0.0 < rho <= 1.0:
        raise ParameterError(f"sampling ratio must lie in (0, 1], got {rho}")
    X, _ = _points(x, oracle.n)
    n = oracle.n
    order = sorted_order(X)
    pos = _sample_positions(n, rho, 1, rng)[0]
    values = oracle.chain_at(order, pos[None, :])[0]
    coef = np.zeros(n)
    coef[pos] += values
    nxt = pos + 1 < n
    coef[pos[nxt] + 1] -= values[nxt]
    g = np.zeros(n)
    g[order[0]] = coef
    return g


def threshold_round(x, tau: float) -> np.ndarray:
    """``{i : x(i) > tau}`` as a boolean characteristic vector."""
    if not 0.0 <= tau <= 1.0:
        raise ParameterError(f"threshold must lie in [0, 1], got {tau}")
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise DomainError("threshold rounding needs a point of the unit cube")
    return x > tau


def rounding_expectation(oracle: SetFunction, x) -> float:
    """``E_tau f({x > tau})`` for ``tau ~ U[0, 1]``, integrated exactly.

    The integrand is constant between consecutive distinct coordinates, so
    the expectation is a finite sum over at most ``n + 1`` intervals.
    """
    X, _ = _points(x, oracle.n)
    x = X[0]
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise DomainError("rounding expectation is defined on the unit cube")
    cuts = np.unique(np.concatenate([[0.0, 1.0], x]))
    lo, hi = cuts[:-1], cuts[1:]
    keep = hi > lo
    lo, hi = lo[keep], hi[keep]
    sets = x[None, :] >= hi[:, None]
    nonempty = sets.any(axis=1)
    total = 0.0
    if np.any(nonempty):
        vals = oracle.evaluate(sets[nonempty])
        total = float(np.sum((hi - lo)[nonempty] * vals))
    return total


@dataclass(frozen=True)
class LovaszBackend:
    """How the extension is evaluated inside a solver.

    ``stochastic`` uses the sampled-prefix estimate with ratio ``rho``;
    ``taylor`` and ``lowrank`` need a kernel-backed oracle (see
    ``zosfm.clustering``), ``rank`` being the Nystrom landmark count.
    """

    kind: str = "exact"
    rho: float = 1.0
    rank: int | None = None

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ParameterError(f"unknown backend {self.kind!r}; choose from {BACKEND_KINDS}")
        if not 0.0 < self.rho <= 1.0:
            raise ParameterError(f"sampling ratio must lie in (0, 1], got {self.rho}")
        if self.kind == "lowrank" and (self.rank is None or self.rank < 1):
            raise ParameterError("lowrank backend needs a positive rank")


class ExactExtension:
    """Callable handle ``F(X) -> values`` over ``R^n`` backed by the exact formula."""

    exact = True

    def __init__(self, oracle: SetFunction):
        self.oracle = oracle
        self.charges = oracle
        self.n = oracle.n

    def __call__(self, X):
        return lovasz_exact(self.oracle, X)

    def subgradient(self, x) -> np.ndarray:
        return lovasz_subgradient(self.oracle, x)


class StochasticExtension:
    """Sampled-prefix estimate; owns its index-sampling generator."""

    exact = False

    def __init__(self, oracle: SetFunction, rho: float, rng: np.random.Generator):
        if not 0.0 < rho <= 1.0:
            raise ParameterError(f"sampling ratio must lie in (0, 1], got {rho}")
        self.oracle = oracle
        self.charges = oracle
        self.n = oracle.n
        self.rho = rho
        self.rng = rng

    def __call__(self, X):
        return lovasz_stochastic(self.oracle, X, self.rho, self.rng)

    def subgradient(self, x) -> np.ndarray:
        return lovasz_stochastic_gradient(self.oracle, x, self.rho, self.rng)


def make_extension(oracle: SetFunction, backend: LovaszBackend | None = None,
                   rng: np.random.Generator | None = None):
    """Resolve a backend to a callable extension handle for ``oracle``.

    The returned handle exposes ``oracle`` (the set function used for
    rounding), ``charges`` (the oracle whose counter it moves, or ``None``),
    ``n``, ``exact`` and ``subgradient(x)``.
    """
    backend = backend or LovaszBackend()
    if backend.kind == "exact":
        return ExactExtension(oracle)
    if backend.kind == "stochastic":
        return StochasticExtension(oracle, backend.rho, rng if rng is not None else np.random.default_rng())
    hook = getattr(oracle, "extension_for", None)
    if hook is None:
        raise ParameterError(f"backend {backend.kind!r} needs a kernel-backed oracle")
    return hook(backend, rng)
