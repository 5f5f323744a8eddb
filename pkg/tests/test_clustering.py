import math

import numpy as np
import pytest

from zosfm.clustering import (KernelMatrix, LogDetCost, MutualInfoCost, PointCloud, TaylorSurrogate,
                              choose_labelled, clustering_accuracy, cluster_problem, label_priors,
                              labels_respected, moon_translation, moving_clusters, nystrom_approx, rbf_kernel,
                              two_moons, with_jitter)
from zosfm.errors import ConfigError, DimensionError, NumericError, ParameterError
from zosfm.lovasz import LovaszBackend, lovasz_exact, make_extension
from zosfm.setfn import all_subsets, is_submodular, subset


def small_problem(p=8, seed=0, noise=0.05):
    cloud = two_moons(p, noise, seed, n_labelled=2)
    return cloud, MutualInfoCost(rbf_kernel(cloud), label_priors(cloud))


def test_moons_layout():
    cloud = two_moons(11)
    assert cloud.p == 11
    assert (cloud.labels == 0).sum() == 6
    upper = cloud.points[cloud.labels == 0]
    lower = cloud.points[cloud.labels == 1]
    assert np.allclose(np.hypot(*upper.T), 1.0)
    assert np.allclose(np.hypot(lower[:, 0] - 1.0, lower[:, 1] - 0.5), 1.0)
    assert np.all(upper[:, 1] >= -1e-12) and np.all(lower[:, 1] <= 0.5 + 1e-12)


def test_moons_are_reproducible_and_noise_is_seeded():
    a, b = two_moons(20, 0.1, 3, 4), two_moons(20, 0.1, 3, 4)
    assert np.array_equal(a.points, b.points) and np.array_equal(a.labelled_mask, b.labelled_mask)
    assert not np.array_equal(a.points, two_moons(20, 0.1, 4, 4).points)


def test_labelled_points_are_stratified():
    labels = np.r_[np.zeros(25, int), np.ones(25, int)]
    mask = choose_labelled(labels, 8, np.random.default_rng(0))
    assert mask.sum() == 8 and (labels[mask] == 1).sum() == 4
    with pytest.raises(ParameterError):
        choose_labelled(labels[:3], 8, np.random.default_rng(0))


def test_rbf_entries():
    pts = np.array([[0.0, 0.0], [0.3, 0.4], [1.0, 0.0]])
    k = rbf_kernel(pts, sigma2=0.5)
    assert np.allclose(np.diag(k.K), 1.0)
    assert k.K[0, 1] == pytest.approx(math.exp(-0.25 / 1.0))
    assert k.K[0, 2] == pytest.approx(math.exp(-1.0))
    assert np.allclose(k.K, k.K.T)
    with pytest.raises(ParameterError):
        rbf_kernel(pts, sigma2=0.0)


def test_kernel_is_psd_after_jitter():
    k = rbf_kernel(two_moons(50, 0.01, 0))
    assert np.linalg.eigvalsh(k.regularised).min() > 0
    assert 0 < k.jitter <= 1e-4 * np.trace(k.K) / 50


def test_jitter_grows_until_factorisable():
    K = np.ones((3, 3))
    k = with_jitter(K)
    assert k.jitter >= 1e-8
    np.linalg.cholesky(k.regularised)
    with pytest.raises(NumericError):
        with_jitter(np.array([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(ParameterError):
        with_jitter(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_mutual_information_special_sets():
    cloud, f = small_problem()
    n = cloud.p
    assert f(np.zeros(n, bool)) == 0.0
    # the information part vanishes on the full set too, leaving the priors
    assert f(np.ones(n, bool)) == pytest.approx(f.prior_weights.sum(), abs=1e-10)


def test_mutual_information_by_direct_formula():
    cloud, f = small_problem(seed=1)
    Kj = f.kernel.regularised
    eta = f.eta

    def logdet(idx):
        return np.linalg.slogdet(Kj[np.ix_(idx, idx)])[1] if len(idx) else 0.0

    full = logdet(list(range(8)))
    base = 0.5 * (full - full) - np.log1p(-eta).sum()
    for mask in all_subsets(8)[::17]:
        a, b = np.flatnonzero(mask), np.flatnonzero(~mask)
        raw = 0.5 * (logdet(a) + logdet(b) - full) - np.log(eta[a]).sum() - np.log1p(-eta[b]).sum()
        assert f(mask) == pytest.approx(raw - base, abs=1e-9)


def test_logdet_cost_by_direct_formula():
    k = rbf_kernel(two_moons(7, 0.05, 2))
    f = LogDetCost(k)
    for mask in all_subsets(7)[::9]:
        idx = np.flatnonzero(mask)
        expect = np.linalg.slogdet(k.regularised[np.ix_(idx, idx)])[1] if idx.size else 0.0
        assert f(mask) == pytest.approx(expect, abs=1e-9)


@pytest.mark.parametrize("seed", range(3))
def test_kernel_costs_are_submodular(seed):
    cloud, f = small_problem(seed=seed)
    assert is_submodular(f)
    assert is_submodular(LogDetCost(rbf_kernel(cloud)))


def test_chain_evaluation_matches_mask_evaluation():
    cloud, f = small_problem(seed=4)
    orders = np.array([np.random.default_rng(i).permutation(8) for i in range(5)])
    chain = f.chain(orders)
    for r, order in enumerate(orders):
        for k in range(8):
            assert chain[r, k] == pytest.approx(f(subset(8, order[: k + 1])), abs=1e-10)


def test_prior_clamp_and_validation():
    cloud = two_moons(6, 0.0, 0, 2)
    eta = label_priors(cloud, clamp=0.01)
    assert set(np.round(eta[cloud.labelled_mask], 6)) == {0.01, 0.99}
    assert np.all(eta[~cloud.labelled_mask] == 0.5)
    f = MutualInfoCost(rbf_kernel(cloud), np.r_[0.0, np.full(5, 0.5)], clamp=0.01)
    assert f.eta[0] == 0.01
    with pytest.raises(DimensionError):
        MutualInfoCost(rbf_kernel(cloud), np.full(3, 0.5))


def test_nystrom_with_all_landmarks_recovers_kernel():
    k = rbf_kernel(two_moons(30, 0.02, 0))
    approx = nystrom_approx(k, 30)
    assert np.max(np.abs(approx.K - k.K)) <= 1e-8


def test_nystrom_is_psd_and_low_rank():
    k = rbf_kernel(two_moons(30, 0.02, 0))
    approx = nystrom_approx(k, 5, seed=1)
    w = np.linalg.eigvalsh(approx.K)
    assert w.min() >= -1e-10
    assert np.sum(w > 1e-8 * w.max()) <= 5
    with pytest.raises(ParameterError):
        nystrom_approx(k, 0)


def test_nystrom_error_falls_with_more_landmarks():
    k = rbf_kernel(two_moons(40, 0.02, 0))
    medians = []
    for m in (4, 8, 16, 32):
        errs = [np.linalg.norm(nystrom_approx(k, m, seed=s).K - k.K) for s in range(11)]
        medians.append(np.median(errs))
    assert all(a > b for a, b in zip(medians, medians[1:]))


def test_taylor_surrogate_is_exact_at_identity():
    T = TaylorSurrogate(np.eye(4))
    assert T(np.ones(4)) == pytest.approx(0.0)
    assert T(np.zeros(4)) == pytest.approx(-6.0)


def test_taylor_gradient_matches_finite_differences():
    k = rbf_kernel(two_moons(6, 0.05, 0))
    T = TaylorSurrogate(k)
    x = np.random.default_rng(0).random(6)
    g = T.gradient(x)
    for i in range(6):
        e = np.zeros(6)
        e[i] = 1e-6
        assert g[i] == pytest.approx((T(x + e) - T(x - e)) / 2e-6, abs=1e-6)


def test_taylor_error_is_cubic_in_perturbation():
    rng = np.random.default_rng(0)
    p = 5
    worst = 0.0
    for _ in range(100):
        A = rng.normal(size=(p, p))
        K = np.eye(p) + 0.02 * (A + A.T)
        x = 1.0 + rng.uniform(-0.03, 0.03, p)
        D = np.diag(np.sqrt(x))
        E = D @ K @ D - np.eye(p)
        size = np.linalg.norm(E, 2)
        if not 0 < size <= 0.1:
            continue
        err = abs(np.linalg.slogdet(D @ K @ D)[1] - TaylorSurrogate(K)(x))
        worst = max(worst, err / (p * size**3 / (3 * (1 - 0.1))))
    assert 0 < worst <= 1.0


def test_surrogate_handles_need_no_queries_and_vanish_at_origin():
    cloud, f = small_problem()
    f.reset_count()
    ext = make_extension(f, LovaszBackend("taylor"))
    assert ext(np.zeros(8)) == pytest.approx(0.0)
    assert ext(np.ones(8)) == pytest.approx(f.prior_weights.sum())
    g = ext.gradient(np.full(8, 0.3))
    assert g.shape == (8,) and f.query_count == 0
    ld = make_extension(LogDetCost(f.kernel), LovaszBackend("taylor"))
    assert ld(np.zeros(8)) == pytest.approx(0.0)


def test_lowrank_backend_charges_the_approximate_oracle():
    cloud, f = small_problem()
    ext = make_extension(f, LovaszBackend("lowrank", rank=8), np.random.default_rng(0))
    f.reset_count()
    x = np.random.default_rng(1).random(8)
    value = ext(x)
    assert f.query_count == 0
    with f.uncounted():
        assert value == pytest.approx(lovasz_exact(f, x), abs=1e-6)
    assert ext.charges.query_count > 0


def test_shared_translation_leaves_costs_unchanged():
    cloud = two_moons(8, 0.0, 0, 2)
    prob = moving_clusters(cloud, lambda t: np.array([0.1 * t, -0.2 * t]), 3)
    masks = all_subsets(8)[::31]
    assert np.allclose(prob.at(0).evaluate(masks), prob.at(3.5).evaluate(masks), atol=1e-9)


def test_moving_clusters_with_listed_trajectory():
    cloud = two_moons(6, 0.0, 0, 2)
    shifts = np.zeros((6, 2))
    prob = moving_clusters(cloud, shifts, 2)
    assert prob.horizon == 2
    with pytest.raises(ConfigError):
        moving_clusters(cloud, np.zeros((4, 2)), 2)
    gappy = shifts.copy()
    gappy[3, 0] = np.nan
    with pytest.raises(ConfigError):
        moving_clusters(cloud, gappy, 2)


def test_class_velocities_separate_the_moons():
    cloud = two_moons(6, 0.0, 0)
    move = moon_translation(cloud, [0.0, 0.0], [1.0, 0.0])
    d = move(2.0)
    assert np.all(d[cloud.labels == 0] == 0) and np.all(d[cloud.labels == 1] == [2.0, 0.0])


def test_accuracy_examples():
    cloud = two_moons(10, 0.0, 0, 2)
    truth = cloud.labels == 1
    assert clustering_accuracy(truth, cloud) == 1.0
    assert clustering_accuracy(~truth, cloud) == 1.0
    one_wrong = truth.copy()
    one_wrong[0] = ~one_wrong[0]
    assert clustering_accuracy(one_wrong, cloud) == pytest.approx(0.9)
    assert clustering_accuracy(np.zeros(10, bool), cloud) == 0.5
    assert labels_respected(truth, cloud) and labels_respected(~truth, cloud)


def test_point_cloud_csv_round_trip(tmp_path):
    cloud = two_moons(12, 0.03, 5, 4)
    path = tmp_path / "cloud.csv"
    cloud.to_csv(path)
    back = PointCloud.from_csv(path)
    assert np.array_equal(back.points, cloud.points)
    assert np.array_equal(back.labels, cloud.labels)
    assert np.array_equal(back.labelled_mask, cloud.labelled_mask)
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ConfigError):
        PointCloud.from_csv(path)


def test_point_cloud_validation():
    with pytest.raises(DimensionError):
        PointCloud(np.zeros((3, 3)))
    with pytest.raises(ParameterError):
        PointCloud(np.zeros((3, 2)), None, [True, False, False])


def test_default_problem_truth_beats_trivial_split():
    cloud, f = cluster_problem()
    truth = cloud.labels == 1
    assert f(truth) < f(np.zeros(cloud.p, bool))
    assert isinstance(f.kernel, KernelMatrix)
