import itertools
import math
import warnings

import numpy as np
import pytest

from zosfm.errors import CapabilityError, DimensionError, ParameterError
from zosfm.online import (DriftWarning, OnlineProblem, OnlineSettings, alternating, derive_dynamic_hyperparams,
                          derive_static_hyperparams, drifting_modular, dynamic_bound, dynamic_regret,
                          half_step_shift, max_lipschitz, minimiser_path, path_length, resolve_online_settings,
                          reverse_bound, solve_online, solve_online_many, static_bound, static_regret)
from zosfm.setfn import GraphCut, ModularFunction, random_graph_cut
from zosfm.smoothing import SmoothingConfig


def pick_first():
    return ModularFunction([-1.0, 0.0])


def pick_second():
    return ModularFunction([0.0, -1.0])


def test_static_constants_worked_example():
    h, mu = derive_static_hyperparams(99, 1.0, 4)
    assert h == pytest.approx(0.025)
    assert mu == pytest.approx(0.05)


def test_dynamic_constants_worked_example():
    h, mu = derive_dynamic_hyperparams(99, 1.0, 4, 4.0)
    assert h == pytest.approx(math.sqrt(28) / 80)
    assert mu == pytest.approx(0.05)
    assert derive_dynamic_hyperparams(99, 1.0, 4, 0.0)[0] == pytest.approx(0.025)


def test_bounds_written_out():
    assert static_bound(99, 4, 1.0) == pytest.approx(10 * (1 + 2 * 8))
    assert dynamic_bound(99, 4, 1.0, 0.0) == pytest.approx(static_bound(99, 4, 1.0))
    assert dynamic_bound(99, 4, 1.0, 4.0) == pytest.approx(10 * (1 + 8 * math.sqrt(28)))
    assert reverse_bound(9, 4, 1.0, 0.5) == (pytest.approx(static_bound(9, 4, 1.0)), pytest.approx(10.0))


def test_constants_reject_bad_inputs():
    with pytest.raises(ParameterError):
        derive_static_hyperparams(10, 0.0, 3)
    with pytest.raises(ParameterError):
        derive_dynamic_hyperparams(10, 1.0, 3, -1.0)


def test_path_length_examples():
    assert path_length([[0, 0]]) == 0.0
    assert path_length([[0, 0], [3, 4]]) == 5.0
    assert path_length([[0, 0], [1, 0], [1, 1]]) == 2.0
    with pytest.raises(DimensionError):
        path_length([0, 1])


def test_minimiser_path_of_alternating_problem():
    N = 7
    prob = alternating([pick_first(), pick_second()], N)
    path, P = minimiser_path(prob)
    assert P == pytest.approx(N * math.sqrt(2))
    assert path[0].tolist() == [1.0, 0.0] and path[1].tolist() == [0.0, 1.0]


def test_static_problem_has_zero_path():
    prob = OnlineProblem.static(random_graph_cut(4, np.random.default_rng(0), unary_scale=1.0), 10)
    assert minimiser_path(prob)[1] == 0.0


def test_times_and_ground_sets_are_checked():
    prob = alternating([pick_first(), pick_second()], 3)
    assert prob.at(3.5) is prob.at(3)
    with pytest.raises(ParameterError):
        prob.at(4)
    with pytest.raises(ParameterError):
        prob.at(0.25)
    mixed = OnlineProblem(2, lambda t: ModularFunction(np.ones(2 if t < 1 else 3)))
    with pytest.raises(DimensionError):
        mixed.at(1)


def test_from_sequence_reads_half_steps():
    fs = [ModularFunction([float(i), 0.0]) for i in range(6)]
    prob = OnlineProblem.from_sequence(fs)
    assert prob.horizon == 2
    assert prob.at(1.5) is fs[3]


def test_regret_signs_on_hand_built_losses():
    prob = alternating([pick_first(), pick_second()], 3)
    # best fixed set {0,1} collects -1 each step, total -4
    assert static_regret([-1, -1, -1, -1], prob) == 0.0
    assert static_regret([0, 0, 0, 0], prob) == 4.0
    assert dynamic_regret([-1, -1, -1, -1], prob) == 0.0
    assert dynamic_regret([0, -1, 0, -1], prob) == 2.0


def test_external_comparator_is_used():
    prob = alternating([pick_first(), pick_second()], 1)
    assert static_regret([1, 1], prob, comparator=(-5.0, [0.0, 0.0])) == 7.0
    with pytest.raises(DimensionError):
        dynamic_regret([1, 1], prob, comparator=(0.0, [0.0]))


def test_max_lipschitz_over_steps():
    prob = alternating([ModularFunction([3.0, 4.0]), ModularFunction([1.0, 0.0])], 4)
    assert max_lipschitz(prob) == pytest.approx(5.0)


def test_settings_resolution():
    prob = OnlineProblem.static(ModularFunction([1.0, 0.0, 0.0, 0.0]), 99)
    s = resolve_online_settings(prob, "static")
    assert (s.h, s.mu) == (pytest.approx(0.025), pytest.approx(0.05))
    d = resolve_online_settings(prob, "dynamic")
    assert d.P_star == 0.0 and d.h == pytest.approx(s.h)
    e = resolve_online_settings(prob, "explicit", h=0.3, mu=0.2)
    assert (e.h, e.mu) == (0.3, 0.2)
    with pytest.raises(ParameterError):
        resolve_online_settings(prob, "explicit", h=0.3)
    with pytest.raises(ParameterError):
        resolve_online_settings(prob, "clairvoyant")


def test_single_step_horizon():
    prob = OnlineProblem.static(GraphCut([[0, 1], [1, 0]]), 0)
    trace, led = solve_online(prob, "static", SmoothingConfig(mu=0.1), seed=1)
    assert len(trace) == 1
    assert led.static_regret >= 0.0
    assert led.static_regret == pytest.approx(trace.set_values[0] - 0.0)


def test_ledger_is_consistent_with_trace():
    base = random_graph_cut(4, np.random.default_rng(2), unary_scale=1.0)
    prob = drifting_modular(base, 60, 0.5, 20.0)
    trace, led = solve_online(prob, "static", SmoothingConfig(mu=0.1, variant="online-split"), seed=3)
    assert led.static_regret == pytest.approx(trace.regret_static[-1])
    assert led.dynamic_regret == pytest.approx(trace.regret_dynamic[-1])
    assert led.dynamic_regret >= led.static_regret - 1e-12
    assert led.lovasz_dynamic_regret >= led.lovasz_static_regret - 1e-12
    assert np.all(np.diff(trace.regret_dynamic) >= -1e-12)
    totals = [sum(prob.at(k)(s) for k in range(61)) for s in itertools.product([0, 1], repeat=4)]
    assert led.comparator_static[1] == pytest.approx(min(totals))


def test_drift_above_declared_bound_is_flagged():
    prob = OnlineProblem(5, lambda t: pick_first() if float(t).is_integer() else pick_second(), drift_bound=0.0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        trace, _ = solve_online_many(prob, OnlineSettings(0.1, 0.1, None, None, None),
                                     SmoothingConfig(mu=0.1, variant="online-split"), [0])[0]
    assert any(issubclass(w.category, DriftWarning) for w in caught)
    assert trace.diagnostics and "declared bound" in trace.diagnostics[0]


def test_declared_bound_holds_for_half_step_shift():
    base = random_graph_cut(3, np.random.default_rng(4), unary_scale=1.0)
    prob = half_step_shift(base, ModularFunction([0.5, -0.3, 0.2]), 30, 0.2)
    assert prob.drift_bound == pytest.approx(0.2)
    with warnings.catch_warnings():
        warnings.simplefilter("error", DriftWarning)
        trace, _ = solve_online_many(prob, OnlineSettings(0.05, 0.05, None, None, None),
                                     SmoothingConfig(mu=0.05, variant="online-reverse"), [1])[0]
    assert not trace.diagnostics


def test_large_ground_sets_need_an_external_comparator():
    prob = OnlineProblem.static(ModularFunction(np.ones(13)), 2)
    settings = OnlineSettings(0.1, 0.1, None, None, None)
    with pytest.raises(CapabilityError):
        solve_online_many(prob, settings, SmoothingConfig(mu=0.1), [0])
    (trace, led), = solve_online_many(prob, settings, SmoothingConfig(mu=0.1), [0], ledger=False)
    assert led is None and len(trace) == 3


def test_offline_only_variants_rejected():
    prob = OnlineProblem.static(ModularFunction([1.0]), 2)
    with pytest.raises(ParameterError):
        solve_online_many(prob, OnlineSettings(0.1, 0.1, None, None, None), SmoothingConfig(mu=0.1, variant="central"),
                          [0])


def test_online_query_count():
    n, N, t = 3, 12, 2
    f = random_graph_cut(n, np.random.default_rng(6))
    prob = OnlineProblem.static(f, N)
    f.reset_count()
    trace, _ = solve_online_many(prob, OnlineSettings(0.1, 0.1, None, None, None),
                                 SmoothingConfig(mu=0.1, t=t), [0], ledger=False)[0]
    assert trace.queries_cumulative[-1] == N * 2 * t * n


def test_lockstep_runs_equal_solo_runs():
    base = random_graph_cut(4, np.random.default_rng(7), unary_scale=1.0)
    prob = drifting_modular(base, 40, 0.3, 10.0)
    settings = resolve_online_settings(prob, "static")
    cfg = SmoothingConfig(mu=settings.mu, t=2)
    joint = solve_online_many(prob, settings, cfg, [5, 6])
    solo = solve_online_many(prob, settings, cfg, [6])
    assert np.array_equal(joint[1][0].iterates, solo[0][0].iterates)
    assert joint[1][1].static_regret == solo[0][1].static_regret


def test_held_half_steps_only_move_between_iterations():
    base = random_graph_cut(3, np.random.default_rng(8), unary_scale=1.0)
    held = drifting_modular(base, 5, 2.0, 4.0, hold_half_steps=True)
    moving = drifting_modular(base, 5, 2.0, 4.0)
    masks = np.array([[True, False, False]])
    assert held.at(2.5).evaluate(masks) == pytest.approx(held.at(2).evaluate(masks))
    assert moving.at(2.5).evaluate(masks) != pytest.approx(moving.at(2).evaluate(masks))
    assert held.at(3).evaluate(masks) == pytest.approx(moving.at(3).evaluate(masks))
