"""Offline projected zeroth-order descent over the unit cube.

The solver minimises the Lovasz extension with two-point Gaussian-smoothing
gradient estimates, projects every step back onto ``[0, 1]^n`` and rounds
each iterate to a set with a fresh uniform threshold. A projected
subgradient method is provided as the first-order baseline.

Several independent seeded runs can be advanced together
(``solve_offline_many``); each run owns its random streams, so replica ``r``
of a joint run follows the same path as a solo run with the same seed when
the backend is deterministic.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import CapabilityError, DomainError, IterationError, ParameterError, ZosfmError
from .lovasz import LovaszBackend, lovasz_exact, lovasz_subgradient, make_extension
from .setfn import MAX_SUBMODULAR_CHECK_N, SetFunction
from .smoothing import SmoothingConfig, directional_estimates, rng_streams

MAX_EXACT_LIPSCHITZ_N = MAX_SUBMODULAR_CHECK_N
DEFAULT_TRACE_STRIDE = 10


def project_cube(x) -> np.ndarray:
    """Coordinatewise clamp onto ``[0, 1]``."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DomainError("cannot project a point with non-finite coordinates")
    return np.clip(x, 0.0, 1.0)


@dataclass(frozen=True)
class OfflineHyperparams:
    """Step size, smoothing, horizon and batch for a constant-step run.

    ``L0`` and ``r0`` are kept when the values were derived from an accuracy
    target, so the matching bound can be reported next to the result.
    """

    mu: float
    h: float
    N: int
    t: int = 1
    L0: float | None = None
    r0: float | None = None

    def __post_init__(self):
        if not self.mu > 0:
            raise ParameterError(f"mu must be positive, got {self.mu}")
        if not (self.h >= 0 and math.isfinite(self.h)):
            raise ParameterError(f"step size must be finite and non-negative, got {self.h}")
        if int(self.N) != self.N or self.N < 0:
            raise ParameterError(f"iteration budget must be a non-negative integer, got {self.N}")
        if int(self.t) != self.t or self.t < 1:
            raise ParameterError(f"batch size must be a positive integer, got {self.t}")
        for name in ("L0", "r0"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ParameterError(f"{name} must be positive, got {v}")


def _ceil(value: float) -> int:
    # guards against 287.00000000000006 -> 288 from rounding in r0**2
    return math.ceil(value - 1e-9 * max(1.0, abs(value)))


def derive_offline_hyperparams(eps: float, L0: float, r0: float, n: int, t: int = 1) -> OfflineHyperparams:
    """Accuracy-driven constants: smallest admissible ``N``, its step ``h``, and ``mu`` at its bound."""
    for name, v in (("eps", eps), ("L0", L0), ("r0", r0)):
        if not v > 0:
            raise ParameterError(f"{name} must be positive, got {v}")
    if n < 1:
        raise ParameterError("dimension must be positive")
    N = max(_ceil(4.0 * r0**2 * L0**2 * (n + 4) ** 2 / eps**2 - 1.0), 0)
    h = r0 / (math.sqrt(N + 1) * L0 * (n + 4))
    mu = eps / (2.0 * L0 * math.sqrt(n))
    return OfflineHyperparams(mu=mu, h=h, N=N, t=t, L0=L0, r0=r0)


def offline_bound(params: OfflineHyperparams, n: int, L0: float | None = None, r0: float | None = None) -> float:
    """Right-hand side bounding the average expected gap ``mean_k E f^L(x_k) - f*``.

    ``r0^2 / (2h(N+1)) + mu L0 sqrt(n) + h L0^2 (n+4)^2 / 2``; ``r0`` defaults
    to ``sqrt(n)`` (the cube diameter).
    """
    L0 = L0 if L0 is not None else params.L0
    r0 = r0 if r0 is not None else (params.r0 if params.r0 is not None else math.sqrt(n))
    if L0 is None:
        raise ParameterError("a Lipschitz constant is needed for the bound")
    if params.h == 0:
        return math.inf
    return (r0**2 / (2.0 * params.h * (params.N + 1)) + params.mu * L0 * math.sqrt(n)
            + params.h * L0**2 * (n + 4) ** 2 / 2.0)


class LipschitzEstimate(float):
    """A Lipschitz constant with a flag saying whether it is exact or a sampled lower bound."""

    def __new__(cls, value: float, exact: bool):
        obj = super().__new__(cls, value)
        obj.exact = exact
        return obj


def estimate_lipschitz(oracle: SetFunction, mode: str = "exact", samples: int = 1000,
                       rng: np.random.Generator | None = None) -> LipschitzEstimate:
    """Lipschitz constant of the extension (maximal gradient norm over its linear pieces).

    ``exact``: dynamic programme over the subset lattice maximising
    ``sum_k (f(A_k) - f(A_{k-1}))^2`` over all maximal chains; ``2^n`` queries,
    ``n <= 12``. ``sampling``: largest subgradient norm at ``samples`` random
    cube points, a lower bound.
    """
    n = oracle.n
    if mode == "exact":
        if n > MAX_EXACT_LIPSCHITZ_N:
            raise CapabilityError(f"exact Lipschitz constant limited to n <= {MAX_EXACT_LIPSCHITZ_N}")
        idx = np.arange(2**n, dtype=np.int64)
        masks = ((idx[:, None] >> np.arange(n)) & 1).astype(bool)
        table = oracle.evaluate(masks)
        pop = masks.sum(axis=1)
        best = np.full(2**n, -np.inf)
        best[0] = 0.0
        for c in range(1, n + 1):
            layer = idx[pop == c]
            cand = np.full(layer.size, -np.inf)
            for i in range(n):
                bit = 1 << i
                has = (layer & bit) != 0
                prev = layer[has] ^ bit
                val = best[prev] + (table[layer[has]] - table[prev]) ** 2
                cand[has] = np.maximum(cand[has], val)
            best[layer] = cand
        return LipschitzEstimate(math.sqrt(max(best[-1], 0.0)), True)
    if mode == "sampling":
        if samples < 1:
            raise ParameterError("need at least one sample")
        rng = rng if rng is not None else np.random.default_rng(0)
        g = lovasz_subgradient(oracle, rng.random((int(samples), n)))
        return LipschitzEstimate(float(np.max(np.linalg.norm(g, axis=1))), False)
    raise ParameterError(f"unknown Lipschitz mode {mode!r}")


@dataclass
class RunTrace:
    """Per-iteration record of one run; every array has ``N + 1`` rows.

    ``lovasz_values`` holds the exact extension value of the true objective at
    each iterate (NaN where it was skipped by the trace stride).
    ``queries_cumulative`` counts gradient-oracle queries only; the
    one-query rounding evaluation per iterate is reported separately in
    ``rounding_queries``. Online runs fill the ledger columns.
    """

    iterates: np.ndarray
    lovasz_values: np.ndarray
    rounded_sets: np.ndarray
    set_values: np.ndarray
    queries_cumulative: np.ndarray
    wall_ms: np.ndarray
    thresholds: np.ndarray
    regret_static: np.ndarray | None = None
    regret_dynamic: np.ndarray | None = None
    diagnostics: list[str] = field(default_factory=list)

    @property
    def rounding_queries(self) -> int:
        return int(np.count_nonzero(~np.isnan(self.set_values)))

    def __len__(self) -> int:
        return self.iterates.shape[0]


@dataclass(frozen=True)
class BestOfSequence:
    """Best iterate by extension value and best rounded set by set value."""

    x_hat: np.ndarray
    s_hat: np.ndarray
    f_lovasz_best: float
    f_set_best: float
    index: int
    set_index: int


def best_of_sequence(trace: RunTrace) -> BestOfSequence:
    lv = trace.lovasz_values
    finite = ~np.isnan(lv)
    idx = int(np.flatnonzero(finite)[np.argmin(lv[finite])]) if finite.any() else 0
    sidx = int(np.nanargmin(trace.set_values))
    return BestOfSequence(
        x_hat=trace.iterates[idx].copy(),
        s_hat=trace.rounded_sets[sidx].copy(),
        f_lovasz_best=float(lv[idx]) if finite.any() else math.nan,
        f_set_best=float(trace.set_values[sidx]),
        index=idx,
        set_index=sidx,
    )


GradientFn = Callable[[int, np.ndarray], tuple[np.ndarray, int]]


class _Blocks:
    """Per-replica draws fetched ``block`` steps at a time.

    A generator yields the same numbers whether asked for ``block`` values at
    once or one at a time, so buffering leaves every stream unchanged.
    """

    def __init__(self, gens: Sequence[np.random.Generator], shape: tuple, normal: bool, block: int = 256):
        self.gens = list(gens)
        self.shape = tuple(shape)
        self.normal = normal
        self.block = block
        self._buf = None
        self._i = block

    def next(self) -> np.ndarray:
        if self._i == self.block:
            size = (self.block,) + self.shape
            draw = (lambda g: g.standard_normal(size)) if self.normal else (lambda g: g.random(size))
            self._buf = np.stack([draw(g) for g in self.gens], axis=1)
            self._i = 0
        out = self._buf[self._i]
        self._i += 1
        return out


def _descend(X0: np.ndarray, h: float, N: int, gradient: GradientFn,
             oracle_at: Callable[[int], SetFunction], thresholds: Sequence[np.random.Generator],
             record_lovasz: Callable[[int], bool]) -> list[RunTrace]:
    """Projected descent for ``R`` replicas stacked as the rows of ``X0``.

    ``gradient(k, X)`` returns the step directions and the number of
    gradient queries it charged for all replicas together. Every replica
    must cost the same, so the per-replica tally is that count divided by
    ``R``.
    """
    R, n = X0.shape
    iterates = np.empty((N + 1, R, n))
    lovasz = np.full((N + 1, R), np.nan)
    sets = np.zeros((N + 1, R, n), dtype=bool)
    set_values = np.full((N + 1, R), np.nan)
    queries = np.zeros((N + 1, R), dtype=np.int64)
    wall = np.zeros((N + 1, R))
    taus = np.full((N + 1, R), np.nan)

    def traces(length):
        return [RunTrace(iterates[:length, r].copy(), lovasz[:length, r].copy(), sets[:length, r].copy(),
                         set_values[:length, r].copy(), queries[:length, r].copy(), wall[:length, r].copy(),
                         taus[:length, r].copy()) for r in range(R)]

    X = project_cube(X0)
    tau_draws = _Blocks(thresholds, (), normal=False)
    used = 0
    start = time.perf_counter()
    for k in range(N + 1):
        try:
            oracle = oracle_at(k)
            tau = tau_draws.next()
            S = X > tau[:, None]
            iterates[k] = X
            taus[k] = tau
            sets[k] = S
            set_values[k] = oracle.evaluate(S)
            if record_lovasz(k):
                with oracle.uncounted():
                    lovasz[k] = lovasz_exact(oracle, X)
            queries[k] = used
            wall[k] = (time.perf_counter() - start) * 1e3
            if k == N:
                break
            G, q = gradient(k, X)
            if q % R:
                raise ZosfmError("replicas charged unequal query counts")
            used += q // R
            X = project_cube(X - h * G)
        except IterationError:
            raise
        except Exception as exc:  # noqa: BLE001 - re-raised with the partial trace attached
            partial = traces(k)
            raise IterationError(f"{type(exc).__name__}: {exc}", k, partial[0] if R == 1 else partial) from exc
    return traces(N + 1)


def _initial_points(n: int, x0, R: int, streams=None) -> np.ndarray:
    if x0 is None:
        x0 = np.full(n, 0.5)
    elif isinstance(x0, str):
        if x0 == "centre":
            x0 = np.full(n, 0.5)
        elif x0 == "random" and streams is not None:
            return np.stack([s["init"].random(n) for s in streams])
        else:
            raise ParameterError(f"unknown initial point {x0!r}; use 'centre', 'random' or a vector")
    X0 = np.asarray(x0, dtype=float)
    if X0.ndim == 1:
        X0 = np.broadcast_to(X0, (R, n))
    if X0.shape != (R, n):
        raise ParameterError(f"initial point must have shape ({n},) or ({R}, {n})")
    if np.any(X0 < 0) or np.any(X0 > 1) or not np.all(np.isfinite(X0)):
        raise DomainError("initial point must lie in the unit cube")
    return np.array(X0)


def _charged(handles) -> list[SetFunction]:
    """Distinct oracles whose counters the handles charge (``charges`` attribute)."""
    seen = {}
    for hd in handles:
        o = getattr(hd, "charges", None)
        if o is not None:
            seen[id(o)] = o
    return list(seen.values())


def _count(oracles) -> int:
    return sum(o.query_count for o in oracles)


def zo_gradient(handles_at: Callable[[int], tuple], variant: str, mu: float, t: int,
                directions: Sequence[np.random.Generator]) -> GradientFn:
    """Mini-batch smoothing estimate for every replica; directions drawn per replica."""
    draws = {}

    def gradient(k, X):
        hs = handles_at(k)
        charged = _charged(hs)
        before = _count(charged)
        if "u" not in draws:
            draws["u"] = _Blocks(directions, (t, X.shape[1]), normal=True)
        U = draws["u"].next()
        G = directional_estimates(variant, hs, X[:, None, :], mu, U).mean(axis=1)
        return G, _count(charged) - before

    return gradient


def solve_offline_many(oracle: SetFunction, params: OfflineHyperparams, config: SmoothingConfig,
                       seeds: Sequence[int], backend: LovaszBackend | None = None, x0=None,
                       trace_stride: int = DEFAULT_TRACE_STRIDE) -> list[tuple[RunTrace, BestOfSequence]]:
    """Independent zeroth-order runs, one per seed, advanced in lockstep.

    A stochastic backend shares one index stream (from the first seed) across
    replicas, so only deterministic backends reproduce solo runs exactly.
    """
    if config.variant not in ("forward", "central", "backward"):
        raise ParameterError(f"offline solver needs an offline oracle variant, got {config.variant!r}")
    seeds = list(seeds)
    if not seeds:
        raise ParameterError("need at least one seed")
    n = oracle.n
    streams = [rng_streams(s) for s in seeds]
    ext = make_extension(oracle, backend, streams[0]["backend"])
    X0 = _initial_points(n, x0, len(seeds), streams)
    gradient = zo_gradient(lambda k: (ext,), config.variant, config.mu, params.t,
                           [s["directions"] for s in streams])
    exact = getattr(ext, "exact", False)
    stride = max(int(trace_stride), 1)
    traces = _descend(X0, params.h, params.N, gradient, lambda k: oracle, [s["thresholds"] for s in streams],
                      lambda k: exact or k % stride == 0 or k == params.N)
    return [(tr, best_of_sequence(tr)) for tr in traces]


def solve_offline(oracle: SetFunction, params: OfflineHyperparams, config: SmoothingConfig,
                  backend: LovaszBackend | None = None, x0=None, seed: int | None = None,
                  trace_stride: int = DEFAULT_TRACE_STRIDE) -> tuple[RunTrace, BestOfSequence]:
    """One zeroth-order run from ``x0`` (default: the cube centre; ``"random"`` draws it uniformly).

    At each of the ``N`` steps: average ``t`` two-point estimates, step by
    ``-h`` times the average, project onto the cube. Every iterate
    ``x_0..x_N`` is rounded with a fresh uniform threshold and its set value
    recorded (one query each).
    """
    seed = config.seed if seed is None else seed
    return solve_offline_many(oracle, params, config, [seed], backend, x0, trace_stride)[0]


def solve_subgradient(oracle: SetFunction, h: float, N: int, backend: LovaszBackend | None = None,
                      x0=None, seed: int = 0, trace_stride: int = DEFAULT_TRACE_STRIDE
                      ) -> tuple[RunTrace, BestOfSequence]:
    """Projected subgradient baseline with constant step ``h``: ``n`` queries per step (exact backend)."""
    if not (h >= 0 and math.isfinite(h)):
        raise ParameterError(f"step size must be finite and non-negative, got {h}")
    streams = rng_streams(seed)
    ext = make_extension(oracle, backend, streams["backend"])
    X0 = _initial_points(oracle.n, x0, 1, [streams])

    charged = _charged([ext])

    def gradient(k, X):
        before = _count(charged)
        G = np.stack([ext.subgradient(x) for x in X])
        return G, _count(charged) - before

    exact = getattr(ext, "exact", False)
    stride = max(int(trace_stride), 1)
    trace = _descend(X0, h, int(N), gradient, lambda k: oracle, [streams["thresholds"]],
                     lambda k: exact or k % stride == 0 or k == N)[0]
    return trace, best_of_sequence(trace)
