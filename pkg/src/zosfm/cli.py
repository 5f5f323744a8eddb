"""Config-driven experiment runner.

Usage::

    zosfm run experiment.ini
    zosfm validate experiment.ini
    zosfm compare a.csv b.csv [--json]
    zosfm list-problems
    zosfm plot-stub [--output plot.py]

Configs are INI files with ``[experiment]``, ``[problem]`` and ``[solver]``
sections (see ``configs/`` in the repository). Every seed is one cell; each
cell writes a trace CSV and the run writes ``summary.json``. Setting
``ZOSFM_OUTPUT_DIR`` overrides the configured output directory.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import clustering as cl
from .errors import ConfigError, IterationError, ZosfmError
from .lovasz import BACKEND_KINDS, LovaszBackend
from .online import (OnlineProblem, drifting_modular, half_step_shift, resolve_online_settings,
                     reverse_bound, solve_online_many)
from .optim import (OfflineHyperparams, RunTrace, derive_offline_hyperparams, estimate_lipschitz,
                    offline_bound, solve_offline, solve_subgradient)
from .setfn import (CONCAVE_MAPS, ConcaveCardinality, GraphCut, ModularFunction, brute_force_min,
                    random_concave_cardinality, random_graph_cut, value_gap)
from .smoothing import VARIANTS, SmoothingConfig

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
OUTPUT_ENV = "ZOSFM_OUTPUT_DIR"
TRACE_COLUMNS = ["iter", "f_lovasz", "f_set_rounded", "best_so_far", "queries_cum",
                 "regret_static", "regret_dynamic", "wall_ms"]

KINDS = ("offline", "online-static", "online-dynamic", "cluster-offline", "cluster-online", "lovasz-bench")
FAMILIES = {
    "graph-cut": "random cut function plus optional unary term (n, seed, density, max_weight, unary_scale, integer)",
    "edge-list": "cut function from 0-based 'i j weight' lines (n, edges, unary)",
    "concave": "concave function of cardinality (n, phi, scale, slope, cap, exponent; random when phi is absent)",
    "modular": "modular function (weights)",
    "two-moons": "mutual-information clustering cost on a two-moons cloud (p, labelled, noise, sigma2, clamp, cloud_csv)",
    "logdet-moons": "log-determinant cost on a two-moons cloud (p, noise, sigma2)",
}
DYNAMICS = ("sinusoid", "shift")
METHODS = ("zo", "subgradient")


# -- configuration -------------------------------------------------------

class Config:
    """Typed access to an INI file; every failure names the section, key and line."""

    def __init__(self, path):
        self.path = Path(path)
        try:
            self.text = self.path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from exc
        self.parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            self.parser.read_string(self.text, source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        for name in ("experiment", "problem", "solver"):
            if not self.parser.has_section(name):
                self.parser.add_section(name)

    def _where(self, section, key) -> str:
        current = None
        for lineno, line in enumerate(self.text.splitlines(), 1):
            m = re.match(r"\s*\[([^\]]+)\]", line)
            if m:
                current = m.group(1).strip()
            elif current == section and re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
                return f"{self.path}:{lineno}: [{section}] {key}"
        return f"{self.path}: [{section}] {key}"

    def fail(self, section, key, msg):
        raise ConfigError(f"{self._where(section, key)}: {msg}")

    def has(self, section, key) -> bool:
        return self.parser.has_option(section, key)

    def str(self, section, key, default=None, choices=None):
        if not self.has(section, key):
            if default is None:
                self.fail(section, key, "missing required value")
            return default
        value = self.parser.get(section, key).strip()
        if choices is not None and value not in choices:
            self.fail(section, key, f"{value!r} not one of {', '.join(choices)}")
        return value

    def float(self, section, key, default=None, positive=False, nonneg=False):
        if not self.has(section, key):
            if default is None:
                self.fail(section, key, "missing required value")
            return default
        raw = self.parser.get(section, key)
        try:
            value = float(raw)
        except ValueError:
            self.fail(section, key, f"expected a number, got {raw!r}")
        if not math.isfinite(value) or (positive and not value > 0) or (nonneg and value < 0):
            self.fail(section, key, f"out of range: {raw!r}")
        return value

    def int(self, section, key, default=None, minimum=None):
        if not self.has(section, key):
            if default is None:
                self.fail(section, key, "missing required value")
            return default
        raw = self.parser.get(section, key)
        try:
            value = int(raw)
        except ValueError:
            self.fail(section, key, f"expected an integer, got {raw!r}")
        if minimum is not None and value < minimum:
            self.fail(section, key, f"must be at least {minimum}, got {value}")
        return value

    def bool(self, section, key, default=False):
        if not self.has(section, key):
            return default
        try:
            return self.parser.getboolean(section, key)
        except ValueError:
            self.fail(section, key, "expected a boolean")

    def list(self, section, key, cast=None, default=None):
        if not self.has(section, key):
            if default is None:
                self.fail(section, key, "missing required value")
            return list(default)
        items = [s.strip() for s in self.parser.get(section, key).split(",") if s.strip()]
        try:
            return items if cast is None else [cast(s) for s in items]
        except ValueError:
            self.fail(section, key, f"cannot parse list {self.parser.get(section, key)!r}")


class Experiment:
    """A validated configuration; building it performs every check before any run."""

    def __init__(self, cfg: Config):
        self.cfg = cfg
        c = cfg
        self.kind = c.str("experiment", "kind", choices=KINDS)
        self.seeds = c.list("experiment", "seeds", int)
        if not self.seeds:
            c.fail("experiment", "seeds", "seed list is empty")
        self.output = Path(os.environ.get(OUTPUT_ENV) or c.str("experiment", "output", "output"))
        self.workers = c.int("experiment", "workers", 1, minimum=1)

        default_family = {"cluster-offline": "two-moons", "cluster-online": "two-moons",
                          "lovasz-bench": "logdet-moons"}.get(self.kind, "graph-cut")
        self.family = c.str("problem", "family", default_family, choices=tuple(FAMILIES))
        clusterish = self.family in ("two-moons", "logdet-moons")
        if self.kind.startswith("cluster") and self.family != "two-moons":
            c.fail("problem", "family", "cluster experiments need the two-moons family")
        if self.kind in ("online-static", "online-dynamic") and clusterish:
            c.fail("problem", "family", "online regret experiments need a small synthetic family")

        self.method = c.str("solver", "method", "zo", choices=METHODS)
        self.backend = self._backend()
        online = self.kind in ("online-static", "online-dynamic", "cluster-online")
        self.variant = c.str("solver", "variant", "online-split" if online else "forward", choices=VARIANTS)
        if online and not self.variant.startswith("online"):
            c.fail("solver", "variant", "online experiments need online-split or online-reverse")
        if not online and self.variant.startswith("online"):
            c.fail("solver", "variant", "offline experiments need forward, central or backward")
        self.mode = c.str("solver", "mode", "explicit", choices=("explicit", "theorem"))
        self.t = c.int("solver", "t", 1, minimum=1)
        self.trace_stride = c.int("solver", "trace_stride", 10, minimum=1)
        self.x0 = self._x0()
        self.methods = c.list("solver", "methods", default=METHODS) if self.kind == "lovasz-bench" else [self.method]
        self.backends = (c.list("solver", "backends", default=BACKEND_KINDS)
                         if self.kind == "lovasz-bench" else [self.backend.kind])
        for m in self.methods:
            if m not in METHODS:
                c.fail("solver", "methods", f"unknown method {m!r}")
        for b in self.backends:
            if b not in BACKEND_KINDS:
                c.fail("solver", "backends", f"unknown backend {b!r}")

        if self.mode == "theorem" and self.kind == "cluster-online":
            c.fail("solver", "mode", "cluster-online needs explicit mu and h")
        explicit = self.mode == "explicit"
        self.mu = c.float("solver", "mu", positive=True) if explicit else None
        self.h = c.float("solver", "h", nonneg=True) if explicit else None
        self.epsilon = self.r0 = None
        if online:
            key = ("problem", "horizon") if c.has("problem", "horizon") else ("solver", "N")
            self.N = c.int(*key, minimum=0)
        elif explicit:
            self.N = c.int("solver", "N", minimum=0)
        else:
            self.N = None
            if c.str("solver", "epsilon") == "half-gap":
                self.epsilon = "half-gap"
            else:
                self.epsilon = c.float("solver", "epsilon", positive=True)
            self.r0 = c.float("solver", "r0", 0.0, nonneg=True) or None
        # building the problem once surfaces bad problem parameters now
        try:
            self.build_problem()
        except ConfigError:
            raise
        except (ZosfmError, ValueError) as exc:
            raise ConfigError(f"{c.path}: [problem] {exc}") from exc

    def _backend(self) -> LovaszBackend:
        c = self.cfg
        kind = c.str("solver", "backend", "exact", choices=BACKEND_KINDS)
        rho = c.float("solver", "rho", 1.0, positive=True)
        if rho > 1:
            c.fail("solver", "rho", "sampling ratio must lie in (0, 1]")
        rank = c.int("solver", "rank", 0, minimum=0) or None
        if self.kind == "lovasz-bench" and rank is None:
            rank = 10
        if kind == "lowrank" and rank is None:
            c.fail("solver", "rank", "lowrank backend needs a positive rank")
        return LovaszBackend(kind, rho, rank)

    def _x0(self):
        c = self.cfg
        raw = c.str("solver", "x0", "centre")
        if raw in ("centre", "random"):
            return raw
        vals = c.list("solver", "x0", float)
        if any(v < 0 or v > 1 for v in vals):
            c.fail("solver", "x0", "initial point must lie in the unit cube")
        return np.array(vals)

    # -- problems ----------------------------------------------------------

    def build_problem(self):
        """Offline oracle, or an ``OnlineProblem`` for the online kinds (plus the cloud where relevant)."""
        c = self.cfg
        fam = self.family
        cloud = None
        if fam in ("two-moons", "logdet-moons"):
            if c.has("problem", "cloud_csv"):
                try:
                    cloud = cl.load_cloud(c.str("problem", "cloud_csv"))
                except OSError as exc:
                    c.fail("problem", "cloud_csv", f"cannot read ({exc.strerror})")
            else:
                cloud = cl.two_moons(c.int("problem", "p", 50, minimum=2), c.float("problem", "noise", 0.01, nonneg=True),
                                     c.int("problem", "seed", 0),
                                     c.int("problem", "labelled", 8 if fam == "two-moons" else 0, minimum=0))
            sigma2 = c.float("problem", "sigma2", cl.DEFAULT_SIGMA2, positive=True)
            clamp = c.float("problem", "clamp", cl.DEFAULT_ETA_CLAMP, positive=True)
            if not clamp < 0.5:
                c.fail("problem", "clamp", "must lie in (0, 1/2)")
            if self.n_vector_x0() not in (None, cloud.p):
                c.fail("solver", "x0", f"initial point has {self.n_vector_x0()} entries, expected {cloud.p}")
            if self.kind == "cluster-online":
                v0 = c.list("problem", "velocity0", float, default=(0.0, 0.0))
                v1 = c.list("problem", "velocity1", float, default=(0.0, 0.0))
                if len(v0) != 2 or len(v1) != 2:
                    c.fail("problem", "velocity0", "velocities need two components")
                return cl.moving_clusters(cloud, cl.moon_translation(cloud, v0, v1), self.N, sigma2, clamp), cloud
            if fam == "logdet-moons":
                return cl.LogDetCost(cl.rbf_kernel(cloud, sigma2)), cloud
            return cl.MutualInfoCost(cl.rbf_kernel(cloud, sigma2), cl.label_priors(cloud, clamp), clamp), cloud
        base = self._synthetic()
        if self.n_vector_x0() not in (None, base.n):
            c.fail("solver", "x0", f"initial point has {self.n_vector_x0()} entries, expected {base.n}")
        if self.kind in ("online-static", "online-dynamic"):
            dyn = c.str("problem", "dynamics", "sinusoid", choices=DYNAMICS)
            drift = c.float("problem", "drift", 0.0, nonneg=True) if c.has("problem", "drift") else None
            if dyn == "sinusoid":
                return drifting_modular(base, self.N, c.float("problem", "amplitude", 0.5, nonneg=True),
                                        c.float("problem", "period", 50.0, positive=True), drift,
                                        c.bool("problem", "hold_half_steps", False)), None
            direction = np.array(c.list("problem", "shift", float, default=[1.0 / base.n] * base.n))
            if direction.size != base.n or np.abs(direction).sum() > 1 + 1e-12:
                c.fail("problem", "shift", "need n weights with absolute sum at most 1")
            V = c.float("problem", "drift", 0.1, nonneg=True)
            return half_step_shift(base, ModularFunction(direction), self.N, V), None
        return base, None

    def n_vector_x0(self):
        return None if isinstance(self.x0, str) else self.x0.size

    def _synthetic(self):
        c = self.cfg
        fam = self.family
        if fam == "modular":
            return ModularFunction(c.list("problem", "weights", float))
        if fam == "edge-list":
            return self._edge_list()
        n = c.int("problem", "n", 6, minimum=1)
        if n > 20:
            c.fail("problem", "n", "synthetic families are limited to n <= 20")
        rng = np.random.default_rng(c.int("problem", "seed", 0))
        if fam == "graph-cut":
            return random_graph_cut(n, rng, c.float("problem", "density", 0.6, nonneg=True),
                                    c.float("problem", "max_weight", 1.0, positive=True),
                                    c.float("problem", "unary_scale", 0.0, nonneg=True),
                                    c.bool("problem", "integer", False))
        if not c.has("problem", "phi"):
            return random_concave_cardinality(n, rng)
        phi = c.str("problem", "phi", choices=tuple(CONCAVE_MAPS))
        params = {k: c.float("problem", k) for k in ("scale", "slope", "cap", "exponent") if c.has("problem", k)}
        try:
            return ConcaveCardinality(n, phi, **params)
        except (TypeError, ValueError) as exc:
            c.fail("problem", "phi", str(exc))

    def _edge_list(self):
        """``edges`` holds one ``i j weight`` triple per line (or separated by ``;``), 0-based."""
        c = self.cfg
        n = c.int("problem", "n", minimum=1)
        edges = []
        for item in re.split(r"[;\n]", c.str("problem", "edges")):
            if not item.strip():
                continue
            parts = item.split()
            try:
                i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
            except (ValueError, IndexError):
                c.fail("problem", "edges", f"cannot parse edge {item.strip()!r}; expected 'i j weight'")
            if not (0 <= i < n and 0 <= j < n) or i == j or w < 0:
                c.fail("problem", "edges", f"invalid edge {item.strip()!r}")
            edges.append((i, j, w))
        unary = c.list("problem", "unary", float) if c.has("problem", "unary") else None
        if unary is not None and len(unary) != n:
            c.fail("problem", "unary", f"need {n} unary weights")
        return GraphCut.from_edges(n, edges, unary)


def load_experiment(path) -> Experiment:
    return Experiment(Config(path))


# -- traces ----------------------------------------------------------------

def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_trace_csv(path, trace: RunTrace) -> None:
    """One row per iterate; regret columns stay empty when not computed."""
    best = np.fmin.accumulate(trace.set_values) if len(trace) else trace.set_values
    rs, rd = trace.regret_static, trace.regret_dynamic
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for k in range(len(trace)):
            w.writerow([k, _fmt(trace.lovasz_values[k]), _fmt(trace.set_values[k]), _fmt(best[k]),
                        _fmt(trace.queries_cumulative[k]), _fmt(None if rs is None else rs[k]),
                        _fmt(None if rd is None else rd[k]), f"{trace.wall_ms[k]:.3f}"])


def read_trace_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != TRACE_COLUMNS:
        raise ConfigError(f"{path}: trace header does not match {','.join(TRACE_COLUMNS)}")
    body = rows[1:]
    out = {}
    for j, name in enumerate(TRACE_COLUMNS):
        out[name] = np.array([float(r[j]) if r[j] != "" else math.nan for r in body])
    return out


# -- cells -----------------------------------------------------------------

def _trace_name(exp: Experiment, seed: int, backend: str, method: str) -> str:
    if exp.kind == "lovasz-bench":
        return f"{exp.kind}_{backend}_{method}_seed{seed}.csv"
    return f"{exp.kind}_seed{seed}.csv"


def _offline_params(exp: Experiment, oracle):
    """Returns hyperparameters and a dict of derived quantities for the summary."""
    info = {}
    if exp.mode == "explicit":
        return OfflineHyperparams(mu=exp.mu, h=exp.h, N=exp.N, t=exp.t), info
    n = oracle.n
    L0 = estimate_lipschitz(oracle, "exact" if n <= 12 else "sampling")
    eps = value_gap(oracle) / 2.0 if exp.epsilon == "half-gap" else exp.epsilon
    params = derive_offline_hyperparams(eps, float(L0), exp.r0 or math.sqrt(n), n, exp.t)
    info.update(epsilon=eps, L0=float(L0), L0_exact=L0.exact, r0=params.r0,
                bound_offline=offline_bound(params, n))
    return params, info


def _run_offline_cell(exp: Experiment, seed: int, oracle, cloud, backend_kind: str, method: str):
    backend = LovaszBackend(backend_kind, exp.backend.rho, exp.backend.rank)
    params, info = _offline_params(exp, oracle)
    if method == "subgradient":
        trace, best = solve_subgradient(oracle, params.h, params.N, backend, exp.x0, seed, exp.trace_stride)
    else:
        trace, best = solve_offline(oracle, params, SmoothingConfig(params.mu, params.t, exp.variant, seed),
                                    backend, exp.x0, seed, exp.trace_stride)
    info.update(mu=params.mu, h=params.h, N=params.N, t=params.t, best_lovasz=best.f_lovasz_best,
                best_set_value=best.f_set_best, best_set=np.flatnonzero(best.s_hat).tolist())
    if oracle.n <= 20 and cloud is None:
        info["f_star"] = brute_force_min(oracle)[1] if oracle.n <= 16 else None
    if exp.family == "two-moons" and cloud.labels is not None:
        info["accuracy"] = cl.clustering_accuracy(best.s_hat, cloud)
        if cloud.labelled_mask.any():
            info["labels_respected"] = cl.labels_respected(best.s_hat, cloud)
    return trace, info


def _run_online_cell(exp: Experiment, seed: int, problem: OnlineProblem, cloud):
    mode = "explicit" if exp.mode == "explicit" else exp.kind.split("-")[1]
    settings = resolve_online_settings(problem, mode, h=exp.h, mu=exp.mu)
    config = SmoothingConfig(settings.mu, exp.t, exp.variant, seed)
    ledger = cloud is None
    trace, led = solve_online_many(problem, settings, config, [seed], exp.backend, exp.x0, ledger=ledger)[0]
    info = {"mu": settings.mu, "h": settings.h, "N": problem.horizon, "t": exp.t, "L0": settings.L0}
    if led is not None:
        info.update(static_regret=led.static_regret, dynamic_regret=led.dynamic_regret,
                    lovasz_static_regret=led.lovasz_static_regret,
                    lovasz_dynamic_regret=led.lovasz_dynamic_regret, path_length=led.path_length)
        if settings.bound is not None:
            info["bound_" + mode] = settings.bound
        if settings.P_star is not None:
            info["P_star"] = settings.P_star
        if exp.variant == "online-reverse" and problem.drift_bound is not None and settings.L0:
            a, b = reverse_bound(problem.horizon, problem.n, settings.L0, problem.drift_bound)
            info.update(bound_reverse_static=a, bound_reverse_drift=b)
    if cloud is not None:
        acc = [cl.clustering_accuracy(s, cloud) for s in trace.rounded_sets]
        info.update(final_accuracy=acc[-1], mean_accuracy=float(np.mean(acc)),
                    final_iterate_accuracy=cl.clustering_accuracy(trace.iterates[-1] > 0.5, cloud))
    info["diagnostics"] = list(trace.diagnostics)
    return trace, info


def run_cell(exp: Experiment, seed: int, outdir: Path) -> list[dict]:
    """Run every (backend, method) combination for one seed; never raises."""
    results = []
    problem, cloud = exp.build_problem()
    for backend_kind in exp.backends:
        for method in exp.methods:
            name = _trace_name(exp, seed, backend_kind, method)
            entry = {"seed": seed, "backend": backend_kind, "method": method, "trace": name, "status": "ok"}
            try:
                if isinstance(problem, OnlineProblem):
                    trace, info = _run_online_cell(exp, seed, problem, cloud)
                else:
                    trace, info = _run_offline_cell(exp, seed, problem, cloud, backend_kind, method)
                write_trace_csv(outdir / name, trace)
                entry.update(info)
                entry["queries"] = int(trace.queries_cumulative[-1])
                entry["iterations"] = len(trace) - 1
            except IterationError as exc:
                partial = exc.trace[0] if isinstance(exc.trace, list) else exc.trace
                if partial is not None and len(partial):
                    write_trace_csv(outdir / name, partial)
                entry.update(status="failed", error=str(exc), failed_iteration=exc.iteration)
            except Exception as exc:  # noqa: BLE001 - reported in the summary
                entry.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            results.append(entry)
    return results


def _cell_job(args):
    path, seed, outdir = args
    return run_cell(load_experiment(path), seed, Path(outdir))


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        return None if not math.isfinite(float(v)) else float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def run_experiment(exp: Experiment) -> dict:
    outdir = exp.output
    outdir.mkdir(parents=True, exist_ok=True)
    if exp.workers > 1 and len(exp.seeds) > 1:
        jobs = [(str(exp.cfg.path), s, str(outdir)) for s in exp.seeds]
        with ProcessPoolExecutor(max_workers=exp.workers) as pool:
            cells = [e for res in pool.map(_cell_job, jobs) for e in res]
    else:
        cells = [e for s in exp.seeds for e in run_cell(exp, s, outdir)]
    summary = {"kind": exp.kind, "config": str(exp.cfg.path), "cells": cells, "means": {}}
    keys = ("best_lovasz", "best_set_value", "accuracy", "static_regret", "dynamic_regret",
            "lovasz_static_regret", "lovasz_dynamic_regret", "final_accuracy")
    groups: dict[str, list[dict]] = {}
    for e in cells:
        if e["status"] == "ok":
            groups.setdefault(f"{e['backend']}/{e['method']}", []).append(e)
    for g, es in groups.items():
        summary["means"][g] = {k: float(np.mean([e[k] for e in es])) for k in keys if all(k in e for e in es)}
        if all("accuracy" in e for e in es):
            summary["means"][g]["fraction_accuracy_ge_0.9"] = float(np.mean([e["accuracy"] >= 0.9 for e in es]))
    for e in cells:
        for k, v in e.items():
            if k.startswith("bound_"):
                summary.setdefault("bounds", {})[k[len("bound_"):]] = v
    summary["failed"] = sum(e["status"] != "ok" for e in cells)
    with open(outdir / "summary.json", "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
    return summary


# -- compare ---------------------------------------------------------------

def compare_traces(paths) -> dict:
    """Final values, totals and ratios of each trace relative to the first one."""
    if len(paths) < 2:
        raise ConfigError("compare needs at least two trace files")
    data = [read_trace_csv(p) for p in paths]
    ref = data[0]
    ref_q = int(ref["queries_cum"][-1])
    ref_wall = ref["wall_ms"][-1]
    rows = []
    for p, d in zip(paths, data):
        iters = d["iter"].size - 1
        q = int(d["queries_cum"][-1])
        wall = d["wall_ms"][-1]
        per_iter = Fraction(q, iters) if iters else Fraction(0)
        ratio = Fraction(q, ref_q) if ref_q else (Fraction(1) if q == 0 else None)
        best = d["best_so_far"]
        rows.append({
            "trace": str(p),
            "iterations": iters,
            "final_best": float(best[-1]),
            "final_lovasz": float(d["f_lovasz"][~np.isnan(d["f_lovasz"])][-1]) if np.any(~np.isnan(d["f_lovasz"])) else None,
            "total_queries": q,
            "queries_per_iter": float(per_iter),
            "wall_ms": float(wall),
            "query_ratio": None if ratio is None else float(ratio),
            "query_ratio_exact": None if ratio is None else f"{ratio.numerator}/{ratio.denominator}",
            "speedup": float(ref_wall / wall) if wall > 0 else None,
        })
    length = min(d["iter"].size for d in data)
    aligned = {str(p): d["best_so_far"][:length].tolist() for p, d in zip(paths, data)}
    return {"reference": str(paths[0]), "rows": rows, "aligned_best_so_far": aligned}


def _print_table(result) -> None:
    cols = ["iterations", "final_best", "total_queries", "queries_per_iter", "query_ratio", "wall_ms", "speedup"]
    print("trace," + ",".join(cols))
    for r in result["rows"]:
        cells = []
        for c in cols:
            v = r[c]
            cells.append("" if v is None else (f"{v:.6g}" if isinstance(v, float) else str(v)))
        print(r["trace"] + "," + ",".join(cells))


PLOT_STUB = '''"""Plot best-so-far curves from trace CSVs (needs matplotlib)."""
import csv
import sys

import matplotlib.pyplot as plt


def load(path, column):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    xs = [int(r["iter"]) for r in rows if r[column] != ""]
    ys = [float(r[column]) for r in rows if r[column] != ""]
    return xs, ys


column = "best_so_far"
for path in sys.argv[1:]:
    plt.plot(*load(path, column), label=path)
plt.xlabel("iteration")
plt.ylabel(column)
plt.legend()
plt.show()
'''


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zosfm", description="zeroth-order submodular minimisation experiments")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run all cells of an experiment config")
    p.add_argument("config")
    p = sub.add_parser("validate", help="check a config without running it")
    p.add_argument("config")
    p = sub.add_parser("compare", help="compare trace CSVs against the first one")
    p.add_argument("traces", nargs="+")
    p.add_argument("--json", action="store_true", help="print the full comparison as JSON")
    sub.add_parser("list-problems", help="list problem families and experiment kinds")
    p = sub.add_parser("plot-stub", help="write a matplotlib script for trace CSVs")
    p.add_argument("--output", default="-")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "list-problems":
            print("experiment kinds: " + ", ".join(KINDS))
            for name, desc in FAMILIES.items():
                print(f"{name}: {desc}")
            print("online dynamics: " + ", ".join(DYNAMICS))
            return EXIT_OK
        if args.command == "plot-stub":
            if args.output == "-":
                sys.stdout.write(PLOT_STUB)
            else:
                Path(args.output).write_text(PLOT_STUB)
            return EXIT_OK
        if args.command == "compare":
            result = compare_traces(args.traces)
            if args.json:
                print(json.dumps(result, indent=2))
            else:
                _print_table(result)
            return EXIT_OK
        exp = load_experiment(args.config)
        if args.command == "validate":
            print(f"{args.config}: ok ({exp.kind}, {len(exp.seeds)} seeds)")
            return EXIT_OK
        summary = run_experiment(exp)
        print(f"wrote {len(summary['cells'])} cells to {exp.output}")
        if summary["failed"]:
            for e in summary["cells"]:
                if e["status"] != "ok":
                    print(f"seed {e['seed']} {e['backend']}/{e['method']} failed: {e['error']}", file=sys.stderr)
            return EXIT_RUNTIME
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ZosfmError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME if args.command == "run" else EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
