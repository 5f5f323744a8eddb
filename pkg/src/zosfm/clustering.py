"""Kernel-based semi-supervised two-cluster problems.

A set ``A`` is one cluster and its complement the other. Costs are built
from an RBF kernel over a planar point cloud:

* ``LogDetCost``: ``logdet K_AA``.
* ``MutualInfoCost``: Gaussian-process mutual information between the two
  clusters plus label-prior terms ``-sum_A log eta - sum_{not A} log(1-eta)``.

Both oracles evaluate whole chains with one batched Cholesky factorisation
per point. The leading minors of the permuted kernel give ``logdet`` of
every prefix, and the reversed permutation gives every complement. They
also provide the ``taylor`` (query-free smooth surrogate) and ``lowrank``
(Nystrom) backends through ``extension_for``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, ParameterError
from .online import OnlineProblem
from .setfn import SetFunction, as_mask

DEFAULT_SIGMA2 = 0.05
DEFAULT_ETA_CLAMP = 1e-3
MOON_OFFSET = (1.0, 0.5)
JITTER_START = 1e-8
JITTER_MAX = 1e-4
# relative eigenvalue cutoff for the landmark pseudo-inverse
NYSTROM_RCOND = 1e-10


@dataclass
class PointCloud:
    """Planar points with optional 0/1 ground truth and a supervised subset."""

    points: np.ndarray
    labels: np.ndarray | None = None
    labelled_mask: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        if self.points.ndim != 2 or self.points.shape[1] != 2 or self.points.shape[0] < 2:
            raise DimensionError("a point cloud needs at least two planar points")
        p = self.points.shape[0]
        if self.labels is not None:
            self.labels = np.asarray(self.labels).astype(int)
            if self.labels.shape != (p,) or not np.isin(self.labels, (0, 1)).all():
                raise DimensionError("labels must be one 0/1 value per point")
        if self.labelled_mask is None:
            self.labelled_mask = np.zeros(p, dtype=bool)
        self.labelled_mask = np.asarray(self.labelled_mask, dtype=bool)
        if self.labelled_mask.shape != (p,):
            raise DimensionError("labelled mask must have one entry per point")
        if self.labelled_mask.any() and self.labels is None:
            raise ParameterError("labelled points need ground-truth labels")

    @property
    def p(self) -> int:
        return self.points.shape[0]

    def displaced(self, delta) -> "PointCloud":
        return PointCloud(self.points + np.asarray(delta, dtype=float), self.labels, self.labelled_mask)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "label", "labelled_flag"])
            for i, (x, y) in enumerate(self.points):
                label = "" if self.labels is None else int(self.labels[i])
                w.writerow([repr(float(x)), repr(float(y)), label, int(self.labelled_mask[i])])

    @classmethod
    def from_csv(cls, path) -> "PointCloud":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or set(rows[0]) != {"x", "y", "label", "labelled_flag"}:
            raise ConfigError(f"{path}: expected columns x, y, label, labelled_flag")
        pts = [(float(r["x"]), float(r["y"])) for r in rows]
        have = [r["label"] != "" for r in rows]
        labels = [int(r["label"]) for r in rows] if all(have) else None
        if any(have) and not all(have):
            raise ConfigError(f"{path}: labels must be given for all points or none")
        return cls(np.array(pts), labels, [r["labelled_flag"] in ("1", "True", "true") for r in rows])


def choose_labelled(labels, count: int, rng: np.random.Generator) -> np.ndarray:
    """Random supervised subset with ``count // 2`` points from each class (remainder to class 0)."""
    labels = np.asarray(labels)
    if count < 0 or count > labels.size:
        raise ParameterError(f"cannot label {count} of {labels.size} points")
    mask = np.zeros(labels.size, dtype=bool)
    quota = {0: count - count // 2, 1: count // 2}
    for c, q in quota.items():
        members = np.flatnonzero(labels == c)
        if q > members.size:
            raise ParameterError(f"class {c} has only {members.size} points")
        mask[rng.choice(members, size=q, replace=False)] = True
    return mask


def two_moons(p: int, noise: float = 0.0, seed=0, n_labelled: int = 0) -> PointCloud:
    """Two interleaving unit half-circles; the lower one shifted by ``(1, -0.5)``.

    Class 0 (``ceil(p/2)`` points) lies on the upper arc, class 1 on the
    lower arc; angles are evenly spaced and isotropic Gaussian noise with
    standard deviation ``noise`` is added.
    """
    if p < 2:
        raise ParameterError("need at least two points")
    if noise < 0:
        raise ParameterError("noise level must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p0 = p - p // 2
    p1 = p // 2
    a0 = np.linspace(0.0, math.pi, p0)
    a1 = np.linspace(0.0, math.pi, p1)
    upper = np.column_stack([np.cos(a0), np.sin(a0)])
    lower = np.column_stack([MOON_OFFSET[0] - np.cos(a1), MOON_OFFSET[1] - np.sin(a1)])
    pts = np.vstack([upper, lower])
    if noise > 0:
        pts = pts + noise * rng.standard_normal(pts.shape)
    labels = np.r_[np.zeros(p0, dtype=int), np.ones(p1, dtype=int)]
    mask = choose_labelled(labels, n_labelled, rng) if n_labelled else None
    return PointCloud(pts, labels, mask)


@dataclass
class KernelMatrix:
    """Symmetric PSD kernel and the diagonal jitter that makes it factorisable."""

    K: np.ndarray
    jitter: float = 0.0
    _chol: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def p(self) -> int:
        return self.K.shape[0]

    @property
    def regularised(self) -> np.ndarray:
        return self.K + self.jitter * np.eye(self.p)

    def cholesky(self) -> np.ndarray:
        if self._chol is None:
            self._chol = np.linalg.cholesky(self.regularised)
        return self._chol

    def logdet(self) -> float:
        return float(2.0 * np.log(np.diag(self.cholesky())).sum())


def with_jitter(K) -> KernelMatrix:
    """Smallest jitter ``1e-8 tr(K)/p * 2^j`` (capped at ``1e-4 tr(K)/p``) giving a Cholesky factor."""
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DimensionError("kernel must be square")
    if not np.allclose(K, K.T, atol=1e-12, rtol=0):
        raise ParameterError("kernel must be symmetric")
    K = 0.5 * (K + K.T)
    p = K.shape[0]
    scale = max(float(np.trace(K)) / p, np.finfo(float).tiny)
    jitter = JITTER_START * scale
    while jitter <= JITTER_MAX * scale * (1 + 1e-12):
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(p))
        except np.linalg.LinAlgError:
            jitter *= 2.0
            continue
        return KernelMatrix(K, jitter, L)
    raise NumericError(f"kernel not factorisable with jitter up to {JITTER_MAX} * tr(K)/p")


def rbf_kernel(cloud: PointCloud | np.ndarray, sigma2: float = DEFAULT_SIGMA2) -> KernelMatrix:
    """``K_ij = exp(-|x_i - x_j|^2 / (2 sigma2))`` with jitter chosen for factorisation."""
    if not sigma2 > 0:
        raise ParameterError(f"bandwidth must be positive, got {sigma2}")
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    sq = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=-1)
    return with_jitter(np.exp(-sq / (2.0 * sigma2)))


def nystrom_approx(kernel: KernelMatrix, m: int, seed=0, landmarks=None) -> KernelMatrix:
    """``K_{:,M} pinv(K_MM) K_{M,:}`` for ``m`` landmarks drawn uniformly without replacement.

    The pseudo-inverse drops eigenvalues of ``K_MM`` below ``1e-10`` times the
    largest; the result is formed as ``B B^T`` so it is PSD by construction.
    """
    K = kernel.K
    p = K.shape[0]
    if not 1 <= m <= p:
        raise ParameterError(f"landmark count must lie in [1, {p}], got {m}")
    if landmarks is None:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        landmarks = np.sort(rng.choice(p, size=m, replace=False))
    M = np.asarray(landmarks, dtype=int)
    w, V = np.linalg.eigh(K[np.ix_(M, M)])
    keep = w > NYSTROM_RCOND * max(float(w.max()), 0.0)
    B = K[:, M] @ (V[:, keep] / np.sqrt(w[keep]))
    return with_jitter(B @ B.T)


class _KernelCost(SetFunction):
    def __init__(self, kernel: KernelMatrix):
        self.kernel = kernel
        self._Kj = kernel.regularised
        super().__init__(kernel.p)

    def _logdet_masks(self, masks: np.ndarray) -> np.ndarray:
        # identity off the subset leaves logdet K_AA unchanged and keeps one shape per batch
        both = masks[:, :, None] & masks[:, None, :]
        P = np.where(both, self._Kj, np.eye(self.n))
        return 2.0 * np.log(np.diagonal(self._factor(P), axis1=1, axis2=2)).sum(axis=1)

    def _factor(self, P):
        try:
            return np.linalg.cholesky(P)
        except np.linalg.LinAlgError as exc:
            raise NumericError("principal submatrix not factorisable") from exc

    def _prefix_logdets(self, orders: np.ndarray) -> np.ndarray:
        """``(m, n+1)`` logdets of the first ``k`` elements of each order, ``k = 0..n``."""
        P = self._Kj[orders[:, :, None], orders[:, None, :]]
        d = np.log(np.diagonal(self._factor(P), axis1=1, axis2=2))
        return np.concatenate([np.zeros((len(orders), 1)), 2.0 * np.cumsum(d, axis=1)], axis=1)

    def _raw_chain_at(self, orders, positions):
        return np.take_along_axis(self._raw_chain(orders), positions, axis=1)


class LogDetCost(_KernelCost):
    """``logdet K_AA`` of the regularised kernel (submodular for PSD ``K``)."""

    def _raw(self, masks):
        return self._logdet_masks(masks)

    def _raw_chain(self, orders):
        return self._prefix_logdets(orders)[:, 1:]

    def extension_for(self, backend, rng=None):
        if backend.kind == "taylor":
            return TaylorLogDetExtension(self)
        if backend.kind == "lowrank":
            return LowRankExtension(self, LogDetCost(nystrom_approx(self.kernel, backend.rank, rng)))
        raise ParameterError(f"no {backend.kind!r} backend for this oracle")


def label_priors(cloud: PointCloud, clamp: float = DEFAULT_ETA_CLAMP, default: float = 0.5) -> np.ndarray:
    """``eta_k``: ``1 - clamp`` for points labelled 1, ``clamp`` for points labelled 0, else ``default``."""
    if not 0 < clamp < 0.5:
        raise ParameterError("clamp must lie in (0, 1/2)")
    eta = np.full(cloud.p, float(default))
    if cloud.labelled_mask.any():
        lab = cloud.labels[cloud.labelled_mask]
        eta[cloud.labelled_mask] = np.where(lab == 1, 1.0 - clamp, clamp)
    return eta


class MutualInfoCost(_KernelCost):
    """``1/2 (logdet K_AA + logdet K_{not A} - logdet K_VV) - sum_A log eta - sum_{not A} log(1 - eta)``.

    ``eta`` is clamped into ``[clamp, 1 - clamp]``.
    """

    def __init__(self, kernel: KernelMatrix, eta, clamp: float = DEFAULT_ETA_CLAMP):
        eta = np.asarray(eta, dtype=float)
        if eta.shape != (kernel.p,):
            raise DimensionError("need one prior per point")
        if not 0 < clamp < 0.5:
            raise ParameterError("clamp must lie in (0, 1/2)")
        self.eta = np.clip(eta, clamp, 1.0 - clamp)
        self.clamp = clamp
        self._in = -np.log(self.eta)
        self._out = -np.log1p(-self.eta)
        self._ld_all = kernel.logdet()
        super().__init__(kernel)

    @property
    def prior_weights(self) -> np.ndarray:
        """Modular part after normalisation: ``log(1 - eta) - log(eta)`` per element."""
        return self._in - self._out

    def _raw(self, masks):
        info = 0.5 * (self._logdet_masks(masks) + self._logdet_masks(~masks) - self._ld_all)
        s = masks.astype(float)
        return info + s @ self._in + (1.0 - s) @ self._out

    def _raw_chain(self, orders):
        n = self.n
        fwd = self._prefix_logdets(orders)
        bwd = self._prefix_logdets(orders[:, ::-1])
        k = np.arange(1, n + 1)
        info = 0.5 * (fwd[:, k] + bwd[:, n - k] - self._ld_all)
        cum_in = np.cumsum(self._in[orders], axis=1)
        cum_out = self._out.sum() - np.cumsum(self._out[orders], axis=1)
        return info + cum_in + cum_out

    def extension_for(self, backend, rng=None):
        if backend.kind == "taylor":
            return TaylorMutualInfoExtension(self)
        if backend.kind == "lowrank":
            approx = MutualInfoCost(nystrom_approx(self.kernel, backend.rank, rng), self.eta, self.clamp)
            return LowRankExtension(self, approx)
        raise ParameterError(f"no {backend.kind!r} backend for this oracle")


def mutual_info_cost(kernel: KernelMatrix, eta, clamp: float = DEFAULT_ETA_CLAMP) -> MutualInfoCost:
    return MutualInfoCost(kernel, eta, clamp)


def logdet_cost(kernel: KernelMatrix) -> LogDetCost:
    return LogDetCost(kernel)


class TaylorSurrogate:
    """Second-order expansion of ``logdet(D K D)`` around the identity, ``D = diag(sqrt(x))``.

    With ``E = D K D - I``, ``tr(E) - tr(E^2)/2`` equals the polynomial
    ``2 sum_i x_i K_ii - x^T (K o K) x / 2 - 3p/2``, which is what is
    evaluated (so it also makes sense off the cube). ``O(p^2)`` per point,
    no set-function queries.
    """

    def __init__(self, K):
        K = np.asarray(K.regularised if isinstance(K, KernelMatrix) else K, dtype=float)
        self.p = K.shape[0]
        self.diag2 = 2.0 * np.diag(K)
        self.H = K * K

    def __call__(self, X) -> np.ndarray | float:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        out = X @ self.diag2 - 0.5 * np.einsum("mi,ij,mj->m", X, self.H, X) - 1.5 * self.p
        return float(out[0]) if single else out

    def gradient(self, x) -> np.ndarray:
        return self.diag2 - np.asarray(x, dtype=float) @ self.H


def taylor_surrogate(kernel: KernelMatrix) -> TaylorSurrogate:
    return TaylorSurrogate(kernel)


class _SurrogateHandle:
    exact = False
    charges = None

    def __init__(self, oracle: SetFunction):
        self.oracle = oracle
        self.n = oracle.n

    def subgradient(self, x) -> np.ndarray:
        return self.gradient(x)


class TaylorLogDetExtension(_SurrogateHandle):
    """``T(x) - T(0)``: the surrogate shifted to vanish at the origin like the normalised cost."""

    def __init__(self, oracle: LogDetCost):
        super().__init__(oracle)
        self.T = TaylorSurrogate(oracle.kernel)
        self._base = self.T(np.zeros(self.n))

    def __call__(self, X):
        return self.T(X) - self._base

    def gradient(self, x):
        return self.T.gradient(x)


class TaylorMutualInfoExtension(_SurrogateHandle):
    """``(T(x) + T(1-x) - T(0) - T(1)) / 2 + <log(1-eta) - log eta, x>``.

    Mirrors the cost's structure (a term for each cluster plus prior terms)
    and vanishes at both cube corners ``0`` and ``1`` in its information part.
    """

    def __init__(self, oracle: MutualInfoCost):
        super().__init__(oracle)
        self.T = TaylorSurrogate(oracle.kernel)
        ones = np.ones(self.n)
        self._base = 0.5 * (self.T(np.zeros(self.n)) + self.T(ones))
        self.w = oracle.prior_weights

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        return 0.5 * (self.T(X) + self.T(1.0 - X)) - self._base + X @ self.w

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * (self.T.gradient(x) - self.T.gradient(1.0 - x)) + self.w


class LowRankExtension:
    """Exact Lovasz extension of the same cost built on a Nystrom kernel.

    Queries are charged to the approximate oracle; ``oracle`` stays the
    original cost, which is the one used for rounding.
    """

    exact = False

    def __init__(self, oracle: SetFunction, approx: SetFunction):
        self.oracle = oracle
        self.approx = approx
        self.charges = approx
        self.n = oracle.n

    def __call__(self, X):
        from .lovasz import lovasz_exact
        return lovasz_exact(self.approx, X)

    def subgradient(self, x):
        from .lovasz import lovasz_subgradient
        return lovasz_subgradient(self.approx, x)


def _trajectory_table(trajectory, horizon: int, p: int) -> Callable[[float], np.ndarray]:
    if callable(trajectory):
        return lambda t: np.broadcast_to(np.asarray(trajectory(t), dtype=float), (p, 2))
    arr = np.asarray(trajectory, dtype=float)
    steps = 2 * horizon + 2
    if arr.ndim == 2 and arr.shape == (steps, 2):
        arr = np.broadcast_to(arr[:, None, :], (steps, p, 2))
    if arr.ndim != 3 or arr.shape[1:] != (p, 2) or arr.shape[0] < steps:
        raise ConfigError(f"trajectory must give a displacement at all {steps} times 0, 1/2, ..., N + 1/2")
    if not np.all(np.isfinite(arr[:steps])):
        raise ConfigError("trajectory has missing (non-finite) displacements")
    return lambda t: arr[int(round(2 * t))]


def moving_clusters(base: PointCloud, trajectory, horizon: int, sigma2: float = DEFAULT_SIGMA2,
                    clamp: float = DEFAULT_ETA_CLAMP, eta=None) -> OnlineProblem:
    """Mutual-information costs of a cloud whose points move over time.

    ``trajectory`` maps a time ``t`` (integer or half-integer) to per-point
    displacements ``(p, 2)`` (or one shared ``(2,)`` shift), or is an array
    of them listed at ``0, 1/2, ..., N + 1/2``.
    """
    displacement = _trajectory_table(trajectory, horizon, base.p)
    priors = label_priors(base, clamp) if eta is None else np.asarray(eta, dtype=float)

    def build(t):
        delta = displacement(t)
        if not np.all(np.isfinite(delta)):
            raise ConfigError(f"trajectory undefined at time {t}")
        return MutualInfoCost(rbf_kernel(base.displaced(delta), sigma2), priors, clamp)

    return OnlineProblem(horizon, build)


def moon_translation(cloud: PointCloud, velocity0, velocity1) -> Callable[[float], np.ndarray]:
    """Each ground-truth class drifts linearly with its own velocity."""
    if cloud.labels is None:
        raise ParameterError("per-class motion needs ground-truth labels")
    v = np.where(cloud.labels[:, None] == 1, np.asarray(velocity1, float), np.asarray(velocity0, float))
    return lambda t: t * v


def clustering_accuracy(s, cloud: PointCloud) -> float:
    """Fraction of points whose membership matches the labels, maximised over the two namings."""
    if cloud.labels is None:
        raise ParameterError("accuracy needs ground-truth labels")
    s = as_mask(s, cloud.p)
    agree = float(np.mean(s == (cloud.labels == 1)))
    return max(agree, 1.0 - agree)


def labels_respected(s, cloud: PointCloud) -> bool:
    """Whether all supervised points sit on the side their labels ask for, up to swapping sides."""
    s = as_mask(s, cloud.p)
    m = cloud.labelled_mask
    want = cloud.labels[m] == 1
    return bool(np.all(s[m] == want) or np.all(s[m] != want))


def cluster_problem(p: int = 50, n_labelled: int = 8, noise: float = 0.01, sigma2: float = DEFAULT_SIGMA2,
                    seed=0, clamp: float = DEFAULT_ETA_CLAMP) -> tuple[PointCloud, MutualInfoCost]:
    """Two-moons cloud with a supervised subset and its mutual-information cost."""
    cloud = two_moons(p, noise, seed, n_labelled)
    return cloud, MutualInfoCost(rbf_kernel(cloud, sigma2), label_priors(cloud, clamp), clamp)


def load_cloud(path) -> PointCloud:
    return PointCloud.from_csv(Path(path))
