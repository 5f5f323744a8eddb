"""Online minimisation over a time-varying sequence of submodular functions.

Times run over ``0, 1/2, 1, 3/2, ...``: the function at ``k + 1/2`` is the one
in force between the two evaluations of the split-time oracle at step ``k``.
The decision maker plays ``S_k`` (threshold rounding of ``x_k``) and pays
``f_k(S_k)``; the half-step function only enters the gradient estimate.

Regret is reported at two levels: on sets (``f_k(S_k)``, the quantity the
decision maker pays) and on the extension (``f^L_k(x_k)``, the quantity the
step-size theory bounds). The comparator is found by brute force for
``n <= 12``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import CapabilityError, DimensionError, ParameterError
from .lovasz import LovaszBackend, lovasz_exact, make_extension
from .optim import RunTrace, _descend, _initial_points, estimate_lipschitz, zo_gradient
from .setfn import MAX_SUBMODULAR_CHECK_N, ModularFunction, SetFunction, SumFunction, all_subsets
from .smoothing import ONLINE_VARIANTS, SmoothingConfig, rng_streams

MAX_COMPARATOR_N = MAX_SUBMODULAR_CHECK_N


class DriftWarning(UserWarning):
    """Observed within-step change of the objective exceeds the declared bound."""


def _half_index(time: float) -> int:
    j = 2.0 * float(time)
    if j != round(j) or j < 0:
        raise ParameterError(f"time must be a non-negative multiple of 1/2, got {time}")
    return int(round(j))


class OnlineProblem:
    """An oblivious sequence of oracles ``f_0, f_{1/2}, f_1, ..., f_{N+1/2}``.

    ``build(time)`` is called lazily once per time and cached. ``drift_bound``
    is the declared bound ``V`` on ``|f^L_k(x) - f^L_{k+1/2}(x)|`` (``None``
    when nothing is declared).
    """

    def __init__(self, horizon: int, build: Callable[[float], SetFunction], drift_bound: float | None = None):
        if int(horizon) != horizon or horizon < 0:
            raise ParameterError("horizon must be a non-negative integer")
        if drift_bound is not None and drift_bound < 0:
            raise ParameterError("drift bound must be non-negative")
        self.horizon = int(horizon)
        self._build = build
        self.drift_bound = drift_bound
        self._cache: dict[int, SetFunction] = {}
        self._tables: np.ndarray | None = None
        self.n = self.at(0).n

    @classmethod
    def from_sequence(cls, oracles: Sequence[SetFunction], drift_bound: float | None = None) -> "OnlineProblem":
        """Oracles listed at times ``0, 1/2, 1, ...``; needs ``2N + 1`` or ``2N + 2`` entries."""
        oracles = list(oracles)
        if len(oracles) < 1:
            raise ParameterError("need at least one oracle")
        horizon = (len(oracles) - 1) // 2
        return cls(horizon, lambda t: oracles[_half_index(t)], drift_bound)

    @classmethod
    def static(cls, oracle: SetFunction, horizon: int) -> "OnlineProblem":
        return cls(horizon, lambda t: oracle)

    def at(self, time: float) -> SetFunction:
        j = _half_index(time)
        if j > 2 * self.horizon + 1:
            raise ParameterError(f"time {time} beyond horizon {self.horizon} + 1/2")
        if j not in self._cache:
            oracle = self._build(j / 2.0)
            if self._cache and oracle.n != next(iter(self._cache.values())).n:
                raise DimensionError(f"oracle at time {j / 2} changes the ground set")
            self._cache[j] = oracle
        return self._cache[j]

    def tables(self) -> np.ndarray:
        """``(N + 1, 2^n)`` values of ``f_k`` on all subsets (lexicographic), uncounted."""
        if self._tables is None:
            if self.n > MAX_COMPARATOR_N:
                raise CapabilityError(f"brute-force comparators limited to n <= {MAX_COMPARATOR_N}")
            masks = all_subsets(self.n)
            rows = []
            for k in range(self.horizon + 1):
                f = self.at(k)
                with f.uncounted():
                    rows.append(f.evaluate(masks))
            self._tables = np.array(rows)
        return self._tables


def path_length(points) -> float:
    """``sum_i ||u_i - u_{i-1}||`` over consecutive points."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise DimensionError("need a non-empty sequence of equal-length vectors")
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def minimiser_path(problem: OnlineProblem) -> tuple[np.ndarray, float]:
    """Per-step minimisers (lexicographic tie-break) as 0/1 vectors and their path length."""
    masks = all_subsets(problem.n)
    idx = np.argmin(problem.tables(), axis=1)
    path = masks[idx].astype(float)
    return path, path_length(path)


def derive_static_hyperparams(N: int, L0: float, n: int) -> tuple[float, float]:
    """``h = sqrt(n) / (sqrt(N+1) L0 (n+4))`` and ``mu = 1 / (L0 sqrt(n) sqrt(N+1))``."""
    if not L0 > 0:
        raise ParameterError(f"Lipschitz constant must be positive, got {L0}")
    if N < 0:
        raise ParameterError("horizon must be non-negative")
    root = math.sqrt(N + 1)
    return math.sqrt(n) / (root * L0 * (n + 4)), 1.0 / (L0 * math.sqrt(n) * root)


def derive_dynamic_hyperparams(N: int, L0: float, n: int, P_star: float) -> tuple[float, float]:
    """Path-length-aware step ``h = sqrt(n + 3 sqrt(n) P) / (sqrt(N+1) L0 (n+4))``; ``mu`` as static."""
    if P_star < 0:
        raise ParameterError(f"path length must be non-negative, got {P_star}")
    _, mu = derive_static_hyperparams(N, L0, n)
    h = math.sqrt(n + 3.0 * math.sqrt(n) * P_star) / (math.sqrt(N + 1) * L0 * (n + 4))
    return h, mu


def static_bound(N: int, n: int, L0: float) -> float:
    """``(N+1)^{1/2} (1 + sqrt(n) (n+4) L0)``."""
    return math.sqrt(N + 1) * (1.0 + math.sqrt(n) * (n + 4) * L0)


def dynamic_bound(N: int, n: int, L0: float, P_star: float) -> float:
    """``(N+1)^{1/2} (1 + (n+4) L0 (n + 3 sqrt(n) P)^{1/2})``."""
    return math.sqrt(N + 1) * (1.0 + (n + 4) * L0 * math.sqrt(n + 3.0 * math.sqrt(n) * P_star))


def reverse_bound(N: int, n: int, L0: float, V: float) -> tuple[float, float]:
    """The two parts of the reverse-oracle bound: the static term and the drift term ``2V(N+1)``."""
    return static_bound(N, n, L0), 2.0 * V * (N + 1)


@dataclass
class RegretLedger:
    """Regret of one run at set level and at extension level.

    ``comparator_static`` is the best fixed set and the sum of its losses;
    ``comparators_dynamic`` lists per-step minimisers and minima;
    ``path_length`` is the length of that minimiser path.
    """

    static_regret: float
    dynamic_regret: float
    lovasz_static_regret: float
    lovasz_dynamic_regret: float
    per_step_losses: np.ndarray
    lovasz_losses: np.ndarray
    comparator_static: tuple[np.ndarray, float]
    comparators_dynamic: list[tuple[np.ndarray, float]]
    path_length: float


def _comparators(problem: OnlineProblem, comparator=None):
    if comparator is not None:
        static_value, minima = comparator
        minima = np.asarray(minima, dtype=float)
        if minima.shape != (problem.horizon + 1,):
            raise DimensionError("external comparator needs one minimum per step")
        return None, float(static_value), None, minima
    tables = problem.tables()
    totals = tables.sum(axis=0)
    best = int(np.argmin(totals))
    masks = all_subsets(problem.n)
    return masks[best], float(totals[best]), masks[np.argmin(tables, axis=1)], tables.min(axis=1)


def static_regret(losses, problem: OnlineProblem, comparator=None) -> float:
    """``sum_k loss_k - min_S sum_k f_k(S)``."""
    _, best, _, _ = _comparators(problem, comparator)
    return float(np.sum(losses) - best)


def dynamic_regret(losses, problem: OnlineProblem, comparator=None) -> float:
    """``sum_k loss_k - sum_k min_S f_k(S)``."""
    _, _, _, minima = _comparators(problem, comparator)
    return float(np.sum(losses) - minima.sum())


def regret_ledger(trace: RunTrace, problem: OnlineProblem, comparator=None) -> RegretLedger:
    """Ledger for a finished run; also fills the cumulative regret columns of ``trace``."""
    best_set, best_total, step_sets, minima = _comparators(problem, comparator)
    losses = trace.set_values
    lovasz_losses = trace.lovasz_values
    if comparator is None:
        prefix_best = np.cumsum(problem.tables(), axis=0).min(axis=1)
        trace.regret_static = np.cumsum(losses) - prefix_best
    else:
        trace.regret_static = np.full(losses.shape, np.nan)
        trace.regret_static[-1] = losses.sum() - best_total
    trace.regret_dynamic = np.cumsum(losses - minima)
    steps = [] if step_sets is None else [(s.copy(), float(v)) for s, v in zip(step_sets, minima)]
    path = path_length(step_sets.astype(float)) if step_sets is not None else math.nan
    return RegretLedger(
        static_regret=float(losses.sum() - best_total),
        dynamic_regret=float((losses - minima).sum()),
        lovasz_static_regret=float(lovasz_losses.sum() - best_total),
        lovasz_dynamic_regret=float((lovasz_losses - minima).sum()),
        per_step_losses=losses.copy(),
        lovasz_losses=lovasz_losses.copy(),
        comparator_static=(best_set, best_total),
        comparators_dynamic=steps,
        path_length=path,
    )


def max_lipschitz(problem: OnlineProblem) -> float:
    """``max_k L0(f_k)`` over integer times, computed exactly without charging queries."""
    best = 0.0
    for k in range(problem.horizon + 1):
        f = problem.at(k)
        with f.uncounted():
            best = max(best, float(estimate_lipschitz(f)))
    return best


@dataclass(frozen=True)
class OnlineSettings:
    """Resolved constants of an online run."""

    h: float
    mu: float
    L0: float | None
    P_star: float | None
    bound: float | None


def resolve_online_settings(problem: OnlineProblem, mode: str = "static", L0: float | None = None,
                            P_star: float | None = None, h: float | None = None,
                            mu: float | None = None) -> OnlineSettings:
    """Fill in ``h`` and ``mu`` from the tuning rule of ``mode`` unless given explicitly.

    ``mode`` is ``static``, ``dynamic`` or ``explicit``. A missing ``L0`` is
    computed as the largest per-step Lipschitz constant; a missing ``P_star``
    (dynamic mode) is taken from the brute-force minimiser path.
    """
    N, n = problem.horizon, problem.n
    if mode not in ("static", "dynamic", "explicit"):
        raise ParameterError(f"unknown tuning mode {mode!r}")
    if mode == "explicit":
        if h is None or mu is None:
            raise ParameterError("explicit mode needs both h and mu")
        return OnlineSettings(h, mu, L0, P_star, None)
    if L0 is None:
        L0 = max_lipschitz(problem)
    if mode == "static":
        dh, dmu = derive_static_hyperparams(N, L0, n)
        bound = static_bound(N, n, L0)
    else:
        if P_star is None:
            P_star = minimiser_path(problem)[1]
        dh, dmu = derive_dynamic_hyperparams(N, L0, n, P_star)
        bound = dynamic_bound(N, n, L0, P_star)
    return OnlineSettings(dh if h is None else h, dmu if mu is None else mu, L0, P_star, bound)


def solve_online_many(problem: OnlineProblem, settings: OnlineSettings, config: SmoothingConfig,
                      seeds: Sequence[int], backend: LovaszBackend | None = None, x0=None,
                      ledger: bool = True, comparator=None) -> list[tuple[RunTrace, RegretLedger | None]]:
    """Independent online runs advanced in lockstep, one per seed.

    Step ``k`` averages ``t`` split-time estimates built from the extension
    at time ``k`` (shifted point) and at time ``k + 1/2`` (base point), or
    the reverse pairing for ``online-reverse``; then steps and projects.
    """
    variant = config.variant
    if variant not in ONLINE_VARIANTS:
        variant = "online-split" if variant == "forward" else variant
        if variant not in ONLINE_VARIANTS:
            raise ParameterError(f"online solver needs an online oracle variant, got {config.variant!r}")
    seeds = list(seeds)
    if not seeds:
        raise ParameterError("need at least one seed")
    streams = [rng_streams(s) for s in seeds]
    X0 = _initial_points(problem.n, x0, len(seeds), streams)
    backend_rng = streams[0]["backend"]
    extensions: dict[int, object] = {}

    def ext(time):
        j = _half_index(time)
        if j not in extensions:
            extensions[j] = make_extension(problem.at(time), backend, backend_rng)
        return extensions[j]

    V = problem.drift_bound
    violations = [0] * len(seeds)
    inner = zo_gradient(lambda k: (ext(k), ext(k + 0.5)), variant, settings.mu, config.t,
                        [s["directions"] for s in streams])

    def gradient(k, X):
        if V is not None:
            f_now, f_half = problem.at(k), problem.at(k + 0.5)
            with f_now.uncounted(), f_half.uncounted():
                drift = np.abs(lovasz_exact(f_now, X) - lovasz_exact(f_half, X))
            for r in np.flatnonzero(drift > V * (1 + 1e-9) + 1e-12):
                violations[r] += 1
        return inner(k, X)

    traces = _descend(X0, settings.h, problem.horizon, gradient, problem.at,
                      [s["thresholds"] for s in streams], lambda k: True)
    out = []
    for r, tr in enumerate(traces):
        if violations[r]:
            msg = f"observed drift exceeded declared bound V={V} at {violations[r]} steps"
            tr.diagnostics.append(msg)
            warnings.warn(msg, DriftWarning, stacklevel=2)
        led = None
        if ledger:
            if problem.n > MAX_COMPARATOR_N and comparator is None:
                raise CapabilityError(f"regret ledger needs n <= {MAX_COMPARATOR_N} or an external comparator")
            led = regret_ledger(tr, problem, comparator)
        out.append((tr, led))
    return out


def solve_online(problem: OnlineProblem, mode: str, config: SmoothingConfig, x0=None, seed: int | None = None,
                 backend: LovaszBackend | None = None, L0: float | None = None, P_star: float | None = None,
                 ledger: bool = True, comparator=None) -> tuple[RunTrace, RegretLedger | None]:
    """One online run with constants tuned for ``mode`` (``static`` or ``dynamic``)."""
    settings = resolve_online_settings(problem, mode, L0, P_star)
    seed = config.seed if seed is None else seed
    return solve_online_many(problem, settings, config, [seed], backend, x0, ledger, comparator)[0]


def drifting_modular(base: SetFunction, horizon: int, amplitude: float, period: float,
                     drift_bound: float | None = None, hold_half_steps: bool = False) -> OnlineProblem:
    """``f_t = base + sum_{i in S} a sin(2 pi (t / period + i / n))`` at every half-step ``t``.

    With ``hold_half_steps`` the function at ``k + 1/2`` is the one at ``k``,
    so the objective only moves between iterations. Otherwise it also moves
    within an iteration, and the split-time estimate picks up a term of size
    ``|f_k - f_{k+1/2}| / mu`` that is not covered by the usual second-moment bound.
    """
    n = base.n
    phase = np.arange(n) / n

    def build(t):
        t = math.floor(t) if hold_half_steps else t
        return SumFunction([base, ModularFunction(amplitude * np.sin(2 * np.pi * (t / period + phase)))])

    return OnlineProblem(horizon, build, drift_bound)


def alternating(functions: Sequence[SetFunction], horizon: int) -> OnlineProblem:
    """Cycle through ``functions`` at integer times; half-steps keep the current function."""
    functions = list(functions)
    return OnlineProblem(horizon, lambda t: functions[int(math.floor(t)) % len(functions)])


def half_step_shift(base: SetFunction, shift: SetFunction, horizon: int, scale: float) -> OnlineProblem:
    """``f_k = base`` at integer times and ``base + scale * shift`` at half-steps.

    With ``|shift^L| <= 1`` on the cube the declared drift bound is ``|scale|``.
    """
    shifted = SumFunction([base, _Scaled(shift, scale)])
    return OnlineProblem(horizon, lambda t: base if float(t).is_integer() else shifted, abs(scale))


class _Scaled(SetFunction):
    def __init__(self, inner: SetFunction, scale: float):
        self.inner = inner
        self.scale = float(scale)
        super().__init__(inner.n)

    def _raw(self, masks):
        return self.scale * self.inner._raw(masks)

    def _raw_chain(self, orders):
        return self.scale * self.inner._raw_chain(orders)

    def _raw_chain_at(self, orders, positions):
        return self.scale * self.inner._raw_chain_at(orders, positions)
