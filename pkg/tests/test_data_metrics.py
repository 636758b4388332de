import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dinof import metrics
from dinof.data import Kind, ToyDistribution, get_distribution
from dinof.errors import UsageError
from dinof.score import analytic_score_fn
from dinof.sde import SdeSpec

GMM8 = get_distribution("gmm8")
VP = SdeSpec(family="vp")


# datasets


def test_gmm8_mode_occupancy():
    x = GMM8.sample(8000, np.random.default_rng(0))
    occ = metrics.mode_occupancy(x, GMM8)
    np.testing.assert_allclose(occ, 0.125, atol=0.015)
    # a 3-sigma disc in 2-D holds 1 - exp(-4.5) of each mode's mass
    assert occ.sum() == pytest.approx(1 - np.exp(-4.5), abs=4 * np.sqrt(0.011 / 8000))


def test_gmm8_geometry():
    mix = GMM8.mixture()
    np.testing.assert_allclose(np.linalg.norm(mix.means, axis=1), 4.0)
    np.testing.assert_allclose(mix.covs, np.broadcast_to(0.0225 * np.eye(2), (8, 2, 2)))


def test_gmm_generalizes_to_coordinate_axes():
    mix = get_distribution("gmm8", 5).mixture()
    assert mix.means.shape == (10, 5)
    np.testing.assert_allclose(np.abs(mix.means).sum(1), 4.0)


def test_single_gaussian_sample_mean():
    x = get_distribution("gaussian", 3).sample(100_000, np.random.default_rng(0))
    assert np.max(np.abs(x.mean(0))) <= 0.02


@pytest.mark.parametrize("kind", list(Kind))
def test_sampling_shapes_and_determinism(kind):
    dist = ToyDistribution(kind)
    a = dist.sample(1, np.random.default_rng(3))
    assert a.shape == (1, 2)
    np.testing.assert_array_equal(dist.sample(50, np.random.default_rng(3)), dist.sample(50, np.random.default_rng(3)))


def test_unknown_dataset_and_bad_dims():
    with pytest.raises(UsageError, match="unknown dataset"):
        get_distribution("cifar10")
    with pytest.raises(UsageError):
        ToyDistribution(Kind.TWO_MOONS, dim=3)
    with pytest.raises(UsageError):
        get_distribution("two_moons").mixture()


def test_gmm_density_matches_histogram():
    mix = GMM8.mixture()
    x = mix.sample(200_000, np.random.default_rng(0))
    # probability of a small box around a mode: MC count vs integrated density
    c, h = mix.means[0], 0.1
    inside = np.all(np.abs(x - c) <= h, axis=1).mean()
    g = np.linspace(-h, h, 41)
    gx, gy = np.meshgrid(g, g)
    dens = np.exp(mix.log_prob(np.stack([gx.ravel(), gy.ravel()], 1) + c)).reshape(gx.shape)
    mass = np.trapezoid(np.trapezoid(dens, g, axis=1), g)
    se = np.sqrt(mass * (1 - mass) / len(x))
    assert abs(inside - mass) <= 4 * se


def test_gmm_score_matches_log_prob_gradient():
    mix = GMM8.mixture().diffused(VP, 0.3)
    x = np.random.default_rng(0).standard_normal((6, 2)) * 3
    h = 1e-6
    num = np.stack([(mix.log_prob(x + h * e) - mix.log_prob(x - h * e)) / (2 * h) for e in np.eye(2)], 1)
    np.testing.assert_allclose(mix.score(x), num, rtol=1e-6, atol=1e-8)


# energy distance and MMD


def test_energy_distance_of_identical_sets_is_zero():
    a = np.random.default_rng(0).standard_normal((300, 2))
    assert metrics.energy_distance(a, a) == pytest.approx(0.0, abs=1e-12)


def test_energy_distance_of_point_masses():
    # two point masses at distance r: 2r - 0 - 0
    assert metrics.energy_distance(np.zeros((3, 2)), np.array([[3.0, 4.0]] * 2)) == pytest.approx(10.0)


def test_energy_distance_rotation_invariance():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((200, 2)), rng.standard_normal((150, 2)) + 1
    th = 0.7
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    assert metrics.energy_distance(a @ rot.T, b @ rot.T) == pytest.approx(metrics.energy_distance(a, b), rel=1e-10)


def test_energy_permutation_rejects_shifted_gaussian():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((2000, 1)), rng.standard_normal((2000, 1)) + 5
    res = metrics.energy_permutation_test(a, b, n_perm=200, rng=rng)
    assert res.statistic > res.percentile(99)
    assert res.statistic == pytest.approx(metrics.energy_distance(a, b), rel=1e-10)


def test_energy_permutation_null_matches_direct_relabeling():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((30, 2)), rng.standard_normal((20, 2))
    res = metrics.energy_permutation_test(a, b, n_perm=5, rng=np.random.default_rng(9))
    z = np.concatenate([a, b])
    replay = np.random.default_rng(9)
    for p in range(5):
        mask = np.zeros(50, bool)
        mask[replay.permutation(50)[:30]] = True
        assert res.null[p] == pytest.approx(metrics.energy_distance(z[mask], z[~mask]), rel=1e-10)


def test_thread_count_does_not_change_results(monkeypatch):
    rng = np.random.default_rng(4)
    a, b = rng.standard_normal((3000, 2)), rng.standard_normal((2500, 2))
    monkeypatch.setattr(metrics, "_BLOCK_ELEMS", 1 << 16)
    monkeypatch.setenv("DINOF_THREADS", "1")
    one = (metrics.energy_distance(a, b), metrics.mmd_rbf(a, b))
    monkeypatch.setenv("DINOF_THREADS", "4")
    assert (metrics.energy_distance(a, b), metrics.mmd_rbf(a, b)) == one


def test_mmd_of_disjoint_halves_is_within_permutation_band():
    x = GMM8.sample(1000, np.random.default_rng(5))
    res = metrics.mmd_permutation_test(x[:500], x[500:], n_perm=200, rng=np.random.default_rng(6))
    assert res.percentile(2.5) <= res.statistic <= res.percentile(97.5)


def test_mmd_detects_a_shift():
    rng = np.random.default_rng(7)
    a, b = rng.standard_normal((300, 2)), rng.standard_normal((300, 2)) + 1
    res = metrics.mmd_permutation_test(a, b, n_perm=100, rng=rng)
    assert res.p_value < 0.02


def test_metric_input_validation():
    with pytest.raises(UsageError):
        metrics.energy_distance(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(UsageError):
        metrics.mmd_rbf(np.zeros((1, 2)), np.zeros((3, 2)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 40), st.integers(2, 40))
def test_symmetry_and_order_invariance(seed, n, m):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((n, 2)), rng.standard_normal((m, 2)) * 2
    pa, pb = rng.permutation(n), rng.permutation(m)
    ed = metrics.energy_distance(a, b)
    assert ed >= -1e-12
    assert metrics.energy_distance(b, a) == pytest.approx(ed, rel=1e-9, abs=1e-12)
    assert metrics.energy_distance(a[pa], b[pb]) == pytest.approx(ed, rel=1e-9, abs=1e-12)
    h = 1.3
    mmd = metrics.mmd_rbf(a, b, h)
    assert metrics.mmd_rbf(b, a, h) == pytest.approx(mmd, rel=1e-9, abs=1e-12)
    assert metrics.mmd_rbf(a[pa], b[pb], h) == pytest.approx(mmd, rel=1e-9, abs=1e-12)


@pytest.mark.slow
def test_null_rejection_rate_is_nominal():
    rng = np.random.default_rng(2024)
    rejections = 0
    for _ in range(400):
        a, b = rng.standard_normal((60, 2)), rng.standard_normal((60, 2))
        rejections += metrics.energy_permutation_test(a, b, n_perm=199, rng=rng).p_value <= 0.05
    assert rejections / 400 == pytest.approx(0.05, abs=0.02)


# GMM diagnostics


def test_score_mse_of_analytic_score_is_zero():
    score = analytic_score_fn(GMM8.mixture(), VP)
    assert metrics.score_mse(score, GMM8, VP, [0.1, 0.5, 0.9], n=512, rng=np.random.default_rng(0)) == 0.0


def test_score_mse_of_zero_model_is_mean_score_norm():
    rng_a, rng_b = np.random.default_rng(1), np.random.default_rng(1)
    zero = metrics.score_mse(lambda x, t: np.zeros_like(x), GMM8, VP, [0.5], n=256, rng=rng_a)
    rel = metrics.score_mse(lambda x, t: np.zeros_like(x), GMM8, VP, [0.5], n=256, rng=rng_b, relative=True)
    assert zero > 0
    assert rel == pytest.approx(1.0)


def test_collapsed_sampler_covers_one_mode():
    x = np.tile(GMM8.mixture().means[3], (500, 1)) + 0.01
    assert metrics.mode_coverage(x, GMM8) == 0.125


def test_far_away_samples_are_not_assigned():
    x = np.zeros((10, 2))  # origin is 4 units from every mode
    np.testing.assert_array_equal(metrics.mode_occupancy(x, GMM8), 0.0)


def test_mode_coverage_undefined_off_gmm():
    with pytest.raises(UsageError):
        metrics.mode_coverage(np.zeros((3, 2)), get_distribution("two_moons"))


def test_evaluate_report_rows():
    rng = np.random.default_rng(8)
    a, b = GMM8.sample(400, rng), GMM8.sample(400, rng)
    report = metrics.evaluate(a, b, GMM8)
    names = [n for n, _ in report.rows()]
    assert names == ["energy_distance", "mmd_rbf", "mode_coverage"]
    assert report.mode_coverage == 1.0
    assert abs(report.mmd_rbf) < 0.01
