import math

import numpy as np
import pytest

from oracles import smoothed_gradient_mc
from zosfm.errors import NumericError, ParameterError
from zosfm.lovasz import ExactExtension
from zosfm.optim import estimate_lipschitz
from zosfm.setfn import GraphCut, random_graph_cut
from zosfm.smoothing import (SmoothingConfig, directional_estimates, oracle_backward, oracle_batch, oracle_central,
                             oracle_forward, oracle_online_reverse, oracle_online_split, rng_streams,
                             smoothed_value_mc)

C = np.array([1.0, -2.0, 0.5])


def linear(X):
    return np.asarray(X) @ C


def shifted(delta):
    return lambda X: linear(X) + delta


def test_linear_function_gives_projection_regardless_of_mu():
    rng = np.random.default_rng(0)
    u = rng.standard_normal((7, 3))
    x = rng.random(3)
    expect = (u @ C)[:, None] * u
    for mu in (1e-3, 1.0, 50.0):
        assert np.allclose(oracle_forward(linear, x, mu, u), expect)
        assert np.allclose(oracle_central(linear, x, mu, u), expect)
        assert np.allclose(oracle_backward(linear, x, mu, u), expect)


def test_constant_function_gives_zero():
    u = np.random.default_rng(1).standard_normal((5, 3))
    const = lambda X: np.full(len(X), 4.0)  # noqa: E731
    assert np.all(oracle_forward(const, np.zeros(3), 0.1, u) == 0)


def test_central_difference_of_even_function_at_origin_is_zero():
    u = np.random.default_rng(2).standard_normal((9, 3))
    sq = lambda X: np.sum(np.asarray(X) ** 2, axis=-1)  # noqa: E731
    assert np.allclose(oracle_central(sq, np.zeros(3), 0.3, u), 0.0)


def test_split_time_variants_reduce_to_forward_when_functions_coincide():
    f = random_graph_cut(4, np.random.default_rng(3), unary_scale=1.0)
    F = ExactExtension(f)
    rng = np.random.default_rng(4)
    x, u = rng.random(4), rng.standard_normal((6, 4))
    fwd = oracle_forward(F, x, 0.05, u)
    assert np.allclose(oracle_online_split(F, F, x, 0.05, u), fwd)
    assert np.allclose(oracle_online_reverse(F, F, x, 0.05, u), fwd)
    assert np.allclose(directional_estimates("online-split", F, x, 0.05, u), fwd)


def test_split_time_with_constant_shift():
    rng = np.random.default_rng(5)
    x, u = rng.random(3), rng.standard_normal((4, 3))
    delta, mu = 0.3, 0.1
    got = oracle_online_split(linear, shifted(delta), x, mu, u)
    assert np.allclose(got, ((u @ C) - delta / mu)[:, None] * u)


def test_split_time_magnitude_falls_with_mu_for_constant_functions():
    u = np.random.default_rng(6).standard_normal((1, 3))
    a = lambda X: np.full(len(X), 1.0)  # noqa: E731
    b = lambda X: np.full(len(X), 0.0)  # noqa: E731
    small = np.linalg.norm(oracle_online_split(a, b, np.zeros(3), 1.0, u))
    large = np.linalg.norm(oracle_online_split(a, b, np.zeros(3), 10.0, u))
    assert large == pytest.approx(small / 10.0)


@pytest.mark.parametrize("variant,handles", [
    ("forward", (linear,)),
    ("online-split", (linear, shifted(0.2))),
    ("online-reverse", (linear, shifted(0.2))),
])
def test_batch_mean_recovers_linear_gradient(variant, handles):
    m = 100_000
    rng = np.random.default_rng(7)
    u = rng.standard_normal((m, 3))
    g = directional_estimates(variant, handles, np.full(3, 0.5), 0.1, u)
    se = g.std(axis=0, ddof=1) / math.sqrt(m)
    assert np.all(np.abs(g.mean(axis=0) - C) <= 3 * se)


def test_batch_of_one_equals_single_estimate():
    cfg = SmoothingConfig(mu=0.1, t=1)
    rng_a, rng_b = np.random.default_rng(8), np.random.default_rng(8)
    x = np.full(3, 0.2)
    single = oracle_forward(linear, x, 0.1, rng_b.standard_normal((1, 3)))[0]
    assert np.allclose(oracle_batch("forward", linear, x, cfg, rng_a), single)


def test_batching_divides_variance():
    f = random_graph_cut(4, np.random.default_rng(9), unary_scale=1.0)
    F = ExactExtension(f)
    x = np.array([0.2, 0.7, 0.4, 0.9])
    rng = np.random.default_rng(10)
    trials = 10_000
    u16 = rng.standard_normal((trials, 16, 4))
    with f.uncounted():
        one = directional_estimates("forward", F, x, 0.05, u16[:, 0])
        many = directional_estimates("forward", F, x, 0.05, u16).mean(axis=1)
    v1, v16 = one.var(axis=0, ddof=1).sum(), many.var(axis=0, ddof=1).sum()
    # relative sampling error of a variance estimate ~ sqrt(2/(trials-1)) (heavier tails allowed for)
    err = 3 * math.sqrt(2.0 / (trials - 1)) * 3
    assert v16 <= (1 / 16 + err) * v1


def test_each_direction_costs_two_evaluations():
    f = random_graph_cut(5, np.random.default_rng(11))
    F = ExactExtension(f)
    u = np.random.default_rng(12).standard_normal((3, 4, 5))
    x = np.random.default_rng(13).random((3, 1, 5))
    for variant in ("forward", "central", "backward"):
        f.reset_count()
        directional_estimates(variant, F, x, 0.1, u)
        assert f.query_count == 2 * 12 * 5


def test_non_finite_values_raise():
    bad = lambda X: np.full(len(X), np.inf)  # noqa: E731
    with pytest.raises(NumericError):
        oracle_forward(bad, np.zeros(2), 0.1, np.ones((1, 2)))


def test_config_validation():
    with pytest.raises(ParameterError):
        SmoothingConfig(mu=0.0)
    with pytest.raises(ParameterError):
        SmoothingConfig(mu=1.0, t=0)
    with pytest.raises(ParameterError):
        SmoothingConfig(mu=1.0, variant="sideways")


def test_streams_are_reproducible_and_distinct():
    a, b = rng_streams(3), rng_streams(3)
    assert np.array_equal(a["directions"].standard_normal(5), b["directions"].standard_normal(5))
    c = rng_streams(3)
    assert not np.array_equal(c["directions"].random(5), c["thresholds"].random(5))


def test_smoothed_value_of_constant_and_linear():
    mean, se = smoothed_value_mc(lambda X: np.full(len(X), 2.5), np.zeros(3), 0.2, 100)
    assert mean == 2.5 and se == 0.0
    mean, se = smoothed_value_mc(linear, np.full(3, 0.5), 0.2, 50_000, seed=1)
    assert abs(mean - linear(np.full(3, 0.5))) <= 3 * se


def test_smoothing_gap_within_lipschitz_bound():
    f = GraphCut([[0, 1], [1, 0]])
    x = np.array([0.5, 0.5])
    mu = 0.01
    mean, se = smoothed_value_mc(ExactExtension(f), x, mu, 100_000, seed=2)
    L0 = estimate_lipschitz(f)
    assert abs(mean - 0.0) <= mu * L0 * math.sqrt(2) + 3 * se


def test_second_moment_bound():
    f = random_graph_cut(5, np.random.default_rng(14), unary_scale=1.0)
    L0 = estimate_lipschitz(f)
    m = 20_000
    u = np.random.default_rng(15).standard_normal((m, 5))
    with f.uncounted():
        g = oracle_forward(ExactExtension(f), np.random.default_rng(16).random(5), 0.05, u)
    sq = np.sum(g * g, axis=1)
    assert sq.mean() <= L0**2 * (5 + 4) ** 2 * (1 + 3 * sq.std() / math.sqrt(m) / sq.mean())


@pytest.mark.parametrize("variant", ["forward", "central", "backward"])
def test_offline_variants_unbiased_against_derivative_route(variant):
    f = GraphCut([[0, 1], [1, 0]])
    F = ExactExtension(f)
    x, mu, m = np.array([0.6, 0.45]), 0.1, 100_000
    ref, ref_se = smoothed_gradient_mc(F, x, mu, m, seed=20)
    u = np.random.default_rng(21).standard_normal((m, 2))
    g = directional_estimates(variant, F, x, mu, u)
    se = g.std(axis=0, ddof=1) / math.sqrt(m)
    assert np.all(np.abs(g.mean(axis=0) - ref) <= 3 * np.hypot(se, ref_se))


def test_same_seed_gives_identical_outputs():
    f = random_graph_cut(4, np.random.default_rng(17))
    F = ExactExtension(f)
    x = np.full(4, 0.5)
    cfg = SmoothingConfig(mu=0.1, t=5)
    a = oracle_batch("central", F, x, cfg, rng_streams(4)["directions"])
    b = oracle_batch("central", F, x, cfg, rng_streams(4)["directions"])
    assert np.array_equal(a, b)
