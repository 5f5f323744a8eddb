"""Set-function value oracles with query accounting.

Every oracle is normalised: the raw value of the empty set is evaluated once
at construction (one counted query), cached as ``offset`` and subtracted from
every later answer, so ``f(()) == 0`` always holds on the public interface.

Elements of the ground set are indexed ``0 .. n-1`` and subsets are passed as
boolean characteristic vectors of length ``n``.
"""

from __future__ import annotations

import contextlib
import itertools
import math
import threading
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import CapabilityError, DimensionError, DomainError, ParameterError

MAX_BRUTE_FORCE_N = 20
MAX_SUBMODULAR_CHECK_N = 12
MAX_GROUND_N = 63


def as_mask(s, n: int) -> np.ndarray:
    """Validate a characteristic vector (or batch of them) and return it as bool."""
    arr = np.asarray(s)
    if arr.ndim == 0 or arr.shape[-1] != n:
        raise DimensionError(f"expected characteristic vector(s) of length {n}, got shape {arr.shape}")
    if arr.dtype != bool:
        if not np.all((arr == 0) | (arr == 1)):
            raise DomainError("characteristic vectors must be binary")
        arr = arr.astype(bool)
    return arr


def subset(n: int, elements: Iterable[int]) -> np.ndarray:
    """Characteristic vector of ``elements`` in a ground set of size ``n``."""
    s = np.zeros(n, dtype=bool)
    for i in elements:
        if not 0 <= i < n:
            raise DimensionError(f"element {i} outside ground set of size {n}")
        s[i] = True
    return s


def all_subsets(n: int) -> np.ndarray:
    """All ``2**n`` characteristic vectors in lexicographic order of the bit pattern.

    Row ``r`` has element ``i`` set iff bit ``n-1-i`` of ``r`` is set, so the
    empty set comes first and ties resolved by first occurrence favour the
    lexicographically smallest pattern.
    """
    if n > MAX_BRUTE_FORCE_N:
        raise CapabilityError(f"cannot enumerate 2^{n} subsets (limit n <= {MAX_BRUTE_FORCE_N})")
    r = np.arange(2**n, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((r[:, None] >> shifts) & 1).astype(bool)


class SetFunction:
    """Base value oracle. Subclasses implement ``_raw`` on a batch of masks.

    ``query_count`` grows by one per subset evaluated through the public
    methods (``__call__``, ``evaluate``, ``chain``). Evaluations inside an
    ``uncounted()`` block are used for instrumentation and are not tallied.
    """

    kind = "custom"

    def __init__(self, n: int):
        n = int(n)
        if not 1 <= n <= MAX_GROUND_N:
            raise ParameterError(f"ground-set size must be in [1, {MAX_GROUND_N}], got {n}")
        self.n = n
        self._queries = 0
        self._lock = threading.Lock()
        self._local = threading.local()
        self.offset = 0.0
        self.offset = float(self._raw(np.zeros((1, n), dtype=bool))[0])
        self._tally(1)

    # -- subclass hooks -------------------------------------------------
    def _raw(self, masks: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _raw_chain(self, orders: np.ndarray) -> np.ndarray:
        m, n = orders.shape
        ranks = np.argsort(orders, axis=1)
        # masks[r, k, i] is True iff element i is among the first k+1 of orders[r]
        masks = ranks[:, None, :] <= np.arange(n)[None, :, None]
        return self._raw(masks.reshape(m * n, n)).reshape(m, n)

    def _raw_chain_at(self, orders: np.ndarray, positions: np.ndarray) -> np.ndarray:
        n = orders.shape[1]
        ranks = np.argsort(orders, axis=1)
        masks = ranks[:, None, :] <= positions[:, :, None]
        return self._raw(masks.reshape(-1, n)).reshape(positions.shape)

    # -- accounting -----------------------------------------------------
    @property
    def query_count(self) -> int:
        return self._queries

    def reset_count(self) -> None:
        with self._lock:
            self._queries = 0

    def _tally(self, k: int) -> None:
        if getattr(self._local, "paused", 0):
            return
        with self._lock:
            self._queries += int(k)

    @contextlib.contextmanager
    def uncounted(self) -> Iterator["SetFunction"]:
        """Evaluate without charging queries (used for traces and ledgers)."""
        self._local.paused = getattr(self._local, "paused", 0) + 1
        try:
            yield self
        finally:
            self._local.paused -= 1

    # -- public evaluation ----------------------------------------------
    def __call__(self, s) -> float:
        mask = as_mask(s, self.n)
        if mask.ndim != 1:
            raise DimensionError("use evaluate() for batches of subsets")
        self._tally(1)
        return float(self._raw(mask[None, :])[0] - self.offset)

    def evaluate(self, masks) -> np.ndarray:
        """Normalised values of a batch ``(m, n)`` of subsets; costs ``m`` queries."""
        masks = as_mask(masks, self.n)
        if masks.ndim == 1:
            masks = masks[None, :]
        masks = masks.reshape(-1, self.n)
        self._tally(masks.shape[0])
        return self._raw(masks) - self.offset

    def chain(self, orders) -> np.ndarray:
        """Values of the prefix sets ``{o_1..o_k}``, k = 1..n, for each row of ``orders``.

        Costs ``n`` queries per row. Subclasses may exploit the nested
        structure (e.g. one factorisation per chain).
        """
        orders = np.atleast_2d(np.asarray(orders, dtype=np.intp))
        if orders.shape[1] != self.n:
            raise DimensionError(f"orders must have {self.n} columns")
        self._tally(orders.size)
        return self._raw_chain(orders) - self.offset

    def chain_at(self, orders, positions) -> np.ndarray:
        """Values of selected prefix sets: entry ``[r, c]`` is ``f`` of the first
        ``positions[r, c] + 1`` elements of ``orders[r]``. One query per entry."""
        orders = np.atleast_2d(np.asarray(orders, dtype=np.intp))
        positions = np.atleast_2d(np.asarray(positions, dtype=np.intp))
        if orders.shape[1] != self.n or positions.shape[0] != orders.shape[0]:
            raise DimensionError("orders and positions do not line up")
        self._tally(positions.size)
        return self._raw_chain_at(orders, positions) - self.offset

    def raw(self, s) -> float:
        """Un-normalised value ``f(S)``; costs one query."""
        return self(s) + self.offset

    def __repr__(self) -> str:
        return f"{type(self).__name__}(n={self.n})"


def evaluate_normalised(oracle: SetFunction, s) -> float:
    """``f(S) - f(())`` for a single subset, charging one query."""
    return oracle(s)


class TabulatedFunction(SetFunction):
    """Set function stored as a value table indexed by bitmask (bit i = element i)."""

    kind = "table"

    def __init__(self, n: int, values: Sequence[float]):
        values = np.asarray(values, dtype=float)
        if values.shape != (2**n,):
            raise DimensionError(f"table must have 2^{n} entries")
        self.values = values
        self._weights = (1 << np.arange(n, dtype=np.int64))
        super().__init__(n)

    @classmethod
    def from_oracle(cls, oracle: SetFunction) -> "TabulatedFunction":
        """Tabulate another oracle (costs ``2**n`` queries on it)."""
        n = oracle.n
        if n > MAX_BRUTE_FORCE_N:
            raise CapabilityError(f"cannot tabulate n={n}")
        idx = np.arange(2**n, dtype=np.int64)
        masks = ((idx[:, None] >> np.arange(n)) & 1).astype(bool)
        return cls(n, oracle.evaluate(masks) + oracle.offset)

    def _raw(self, masks):
        return self.values[masks.astype(np.int64) @ self._weights]


class CallableFunction(SetFunction):
    """Wrap a Python callable ``fn(mask) -> float`` taking one boolean vector."""

    def __init__(self, n: int, fn: Callable[[np.ndarray], float]):
        self._fn = fn
        super().__init__(n)

    def _raw(self, masks):
        return np.array([float(self._fn(m)) for m in masks])


class ModularFunction(SetFunction):
    """``f(S) = sum_{i in S} c_i``."""

    kind = "modular"

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=float).ravel()
        super().__init__(self.weights.size)

    def _raw(self, masks):
        return masks.astype(float) @ self.weights


class GraphCut(SetFunction):
    """Weighted cut ``sum_{i in S, j not in S} w_ij`` plus optional unary weights.

    ``weights`` is a symmetric non-negative adjacency matrix; each undirected
    edge contributes once when it crosses the cut.
    """

    kind = "graph-cut"

    def __init__(self, weights, unary=None):
        w = np.asarray(weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise DimensionError("adjacency matrix must be square")
        if not np.allclose(w, w.T):
            raise ParameterError("adjacency matrix must be symmetric")
        if np.any(w < 0):
            raise ParameterError("edge weights must be non-negative")
        self.weights = w.copy()
        np.fill_diagonal(self.weights, 0.0)
        n = w.shape[0]
        self.unary = np.zeros(n) if unary is None else np.asarray(unary, dtype=float).ravel()
        if self.unary.shape != (n,):
            raise DimensionError("unary weights must have one entry per element")
        super().__init__(n)

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[tuple[int, int, float]], unary=None) -> "GraphCut":
        w = np.zeros((n, n))
        for i, j, wt in edges:
            if not (0 <= i < n and 0 <= j < n):
                raise DimensionError(f"edge ({i}, {j}) outside ground set of size {n}")
            w[i, j] += wt
            if i != j:
                w[j, i] += wt
        return cls(w, unary)

    def _raw(self, masks):
        s = masks.astype(float)
        return np.einsum("mi,ij,mj->m", s, self.weights, 1.0 - s) + s @ self.unary


def _phi_sqrt(k, scale=1.0, slope=0.0):
    return scale * np.sqrt(k) + slope * k


def _phi_log1p(k, scale=1.0, slope=0.0):
    return scale * np.log1p(k) + slope * k


def _phi_cap(k, cap=1.0, slope=0.0):
    return np.minimum(k, cap) + slope * k


def _phi_power(k, exponent=0.5, scale=1.0, slope=0.0):
    if not 0.0 < exponent <= 1.0:
        raise ParameterError("power map needs exponent in (0, 1] to stay concave")
    return scale * np.power(k, exponent) + slope * k


CONCAVE_MAPS: dict[str, Callable] = {
    "sqrt": _phi_sqrt,
    "log1p": _phi_log1p,
    "cap": _phi_cap,
    "power": _phi_power,
}


class ConcaveCardinality(SetFunction):
    """``f(S) = phi(|S|)`` for a concave scalar map ``phi``.

    ``phi`` is either one of the names in ``CONCAVE_MAPS`` (parameters passed
    as keyword arguments) or a callable accepting an integer array.
    """

    kind = "concave-cardinality"

    def __init__(self, n: int, phi="sqrt", **params):
        if isinstance(phi, str):
            if phi not in CONCAVE_MAPS:
                raise ParameterError(f"unknown concave map {phi!r}; choose from {sorted(CONCAVE_MAPS)}")
            base = CONCAVE_MAPS[phi]
            self.phi_name = phi
            self._phi = lambda k: base(k, **params)
        else:
            self.phi_name = getattr(phi, "__name__", "custom")
            self._phi = phi
        self.params = dict(params)
        super().__init__(n)

    def _raw(self, masks):
        return np.asarray(self._phi(masks.sum(axis=1).astype(float)), dtype=float)


class SumFunction(SetFunction):
    """Pointwise sum of oracles over the same ground set.

    Terms are evaluated through their raw hooks, so only this oracle's counter
    moves.
    """

    def __init__(self, terms: Sequence[SetFunction]):
        if not terms:
            raise ParameterError("need at least one term")
        n = terms[0].n
        if any(t.n != n for t in terms):
            raise DimensionError("all terms must share the ground set")
        self.terms = list(terms)
        super().__init__(n)

    def _raw(self, masks):
        return sum(t._raw(masks) for t in self.terms)

    def _raw_chain(self, orders):
        return sum(t._raw_chain(orders) for t in self.terms)

    def _raw_chain_at(self, orders, positions):
        return sum(t._raw_chain_at(orders, positions) for t in self.terms)


def _lex_values(oracle: SetFunction) -> tuple[np.ndarray, np.ndarray]:
    n = oracle.n
    if n > MAX_BRUTE_FORCE_N:
        raise CapabilityError(f"brute force limited to n <= {MAX_BRUTE_FORCE_N}, got {n}")
    masks = all_subsets(n)
    values = np.empty(masks.shape[0])
    step = 1 << 15
    for lo in range(0, masks.shape[0], step):
        values[lo:lo + step] = oracle.evaluate(masks[lo:lo + step])
    return masks, values


def tabulate(oracle: SetFunction) -> tuple[np.ndarray, np.ndarray]:
    """All subsets (lexicographic order) with their normalised values; ``2**n`` queries."""
    return _lex_values(oracle)


def brute_force_min(oracle: SetFunction, n: int | None = None) -> tuple[np.ndarray, float]:
    """Exhaustive minimiser; ties go to the lexicographically smallest bit pattern."""
    if n is not None and n != oracle.n:
        raise DimensionError("ground-set size does not match the oracle")
    masks, values = _lex_values(oracle)
    best = int(np.argmin(values))
    return masks[best].copy(), float(values[best])


def is_submodular(oracle: SetFunction, n: int | None = None, tol: float = 1e-9) -> bool:
    """Exhaustive diminishing-returns check.

    Uses the local form ``f(S+i) - f(S) >= f(S+i+j) - f(S+j)`` over all
    ``S`` and ``i != j`` outside ``S``, which is equivalent to the inequality
    over every chain ``S <= T``. ``tol`` is relative to the largest ``|f|``.
    """
    if n is not None and n != oracle.n:
        raise DimensionError("ground-set size does not match the oracle")
    n = oracle.n
    if n > MAX_SUBMODULAR_CHECK_N:
        raise CapabilityError(f"exhaustive submodularity check limited to n <= {MAX_SUBMODULAR_CHECK_N}")
    idx = np.arange(2**n, dtype=np.int64)
    masks = ((idx[:, None] >> np.arange(n)) & 1).astype(bool)
    table = oracle.evaluate(masks)
    slack = tol * max(1.0, float(np.max(np.abs(table))))
    for i, j in itertools.combinations(range(n), 2):
        bi, bj = 1 << i, 1 << j
        base = idx[(idx & (bi | bj)) == 0]
        lhs = table[base | bi] - table[base]
        rhs = table[base | bi | bj] - table[base | bj]
        if np.any(lhs < rhs - slack):
            return False
    return True


def random_graph_cut(n: int, rng: np.random.Generator, density: float = 0.6,
                     max_weight: float = 1.0, unary_scale: float = 0.0,
                     integer: bool = False) -> GraphCut:
    """Random Erdos-Renyi cut function, optionally with a signed unary term."""
    w = rng.uniform(0.0, max_weight, size=(n, n))
    if integer:
        w = np.ceil(w)
    w *= rng.random((n, n)) < density
    w = np.triu(w, 1)
    w = w + w.T
    unary = None
    if unary_scale:
        unary = rng.uniform(-unary_scale, unary_scale, size=n)
        if integer:
            unary = np.round(unary)
    return GraphCut(w, unary)


def random_concave_cardinality(n: int, rng: np.random.Generator) -> ConcaveCardinality:
    """Random concave-of-cardinality function with a linear tilt."""
    name = ["sqrt", "log1p", "cap"][int(rng.integers(3))]
    slope = float(rng.uniform(-1.0, 0.5))
    if name == "cap":
        return ConcaveCardinality(n, "cap", cap=float(rng.integers(1, n + 1)), slope=slope)
    return ConcaveCardinality(n, name, scale=float(rng.uniform(0.5, 2.0)), slope=slope)


def value_gap(oracle: SetFunction) -> float:
    """Smallest positive ``f(S) - f*`` over all subsets (``inf`` if constant)."""
    _, values = _lex_values(oracle)
    gaps = values - values.min()
    gaps = gaps[gaps > 1e-12 * max(1.0, float(np.abs(values).max()))]
    return float(gaps.min()) if gaps.size else math.inf
