import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from idscaling.id_estimation import (
    estimate_id_knn,
    estimate_id_mle,
    id_vs_pointcount,
    knn_dimension_from_ratios,
    mle_dimension_from_ratios,
    neighbor_ratios,
)
from idscaling.manifolds import PointCloud, sample_hypercube
from idscaling.rng import make_rng


def brute_force_ratios(points, k):
    """Independent all-pairs oracle: plain loops, lexicographic tie-break."""
    out = []
    for i in range(len(points)):
        dists = sorted(
            (float(np.sqrt(np.einsum("j,j->", points[j] - points[i], points[j] - points[i]))), j)
            for j in range(len(points))
            if j != i
        )
        r = [d for d, _ in dists[:k]]
        if r[0] == 0.0:
            continue
        out.append([rj / r[0] for rj in r[1:]])
    return np.array(out)


def test_three_collinear_points_hand_case():
    cloud = PointCloud(np.array([[0.0], [1.0], [3.0]]))
    nbrs = neighbor_ratios(cloud, k=2)
    # point at 0: r1=1 (to 1), r2=3 (to 3); point at 1: r1=1, r2=2; point at 3: r1=2, r2=3
    assert nbrs.ratios[:, 0] == pytest.approx([3.0, 2.0, 1.5])
    assert nbrs.excluded_count == 0


def test_duplicate_points_excluded():
    cloud = PointCloud(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]))
    nbrs = neighbor_ratios(cloud, k=2)
    assert nbrs.excluded_count == 2
    assert nbrs.n_used == 2


def test_all_points_identical_errors():
    cloud = PointCloud(np.zeros((5, 2)))
    with pytest.raises(ValueError, match="no usable points"):
        neighbor_ratios(cloud, k=2)


def test_ratios_match_brute_force_oracle():
    rng = make_rng(3)
    pts = rng.random((60, 2))
    nbrs = neighbor_ratios(PointCloud(pts), k=4)
    oracle = brute_force_ratios(pts, 4)
    assert np.array_equal(nbrs.ratios, oracle)


def test_kdtree_path_bit_identical():
    rng = make_rng(4)
    pts = rng.random((300, 3))
    a = neighbor_ratios(PointCloud(pts), k=5, method="brute")
    b = neighbor_ratios(PointCloud(pts), k=5, method="kdtree")
    assert np.array_equal(a.ratios, b.ratios)
    assert a.excluded_count == b.excluded_count


def test_neighbor_count_precondition():
    cloud = PointCloud(np.eye(3))
    with pytest.raises(ValueError):
        neighbor_ratios(cloud, k=3)
    with pytest.raises(ValueError):
        neighbor_ratios(cloud, k=1)


def test_ratios_sorted_and_at_least_one():
    cloud = sample_hypercube(3, 200, seed=11)
    nbrs = neighbor_ratios(cloud, k=6)
    assert np.all(nbrs.ratios >= 1.0)
    assert np.all(np.diff(nbrs.ratios, axis=1) >= 0.0)


# -- knn cumulative estimator -------------------------------------------------


def test_inverse_cdf_oracle_k2():
    # mu = (1-u)**(-1/d) samples the k=2 ratio law exactly
    d_true, n = 5.0, 50000
    u = make_rng(100).random(n)
    mu = (1.0 - u) ** (-1.0 / d_true)
    d_hat, r2, n_used = knn_dimension_from_ratios(mu, k=2)
    assert abs(d_hat - d_true) < 0.1
    assert n_used == n
    assert r2 > 0.99


def test_rejection_sampling_oracle_k3():
    # target density for mu_3 is 2d(mu^d - 1)/mu^(2d+1); dominate it with
    # twice the k=2 law and accept with probability 1 - mu^(-d)
    d_true = 4.0
    rng = make_rng(200)
    samples = []
    while len(samples) < 50000:
        u = rng.random(100000)
        mu = (1.0 - u) ** (-1.0 / d_true)
        accept = rng.random(100000) < (1.0 - mu ** (-d_true))
        samples.extend(mu[accept].tolist())
    mu3 = np.array(samples[:50000])
    d_hat, _, _ = knn_dimension_from_ratios(mu3, k=3)
    assert abs(d_hat - d_true) < 0.15


def test_knn_k2_matches_direct_twonn():
    cloud = sample_hypercube(2, 2000, seed=12)
    est = estimate_id_knn(cloud, k=2)
    # direct transcription of the two-nearest-neighbor regression
    mu = np.sort(neighbor_ratios(cloud, 2).ratios[:, 0])
    n = mu.shape[0]
    x = np.log(mu)
    y = -np.log(1.0 - np.arange(1, n + 1) / (n + 1.0))
    d_direct = float(np.dot(x, y) / np.dot(x, x))
    assert abs(est.d_hat - d_direct) < 1e-12


def test_knn_zero_variance_errors():
    with pytest.raises(ValueError, match="zero-variance"):
        knn_dimension_from_ratios(np.ones(100), k=2)


def test_monotone_cdf_positions():
    # the regression's empirical CDF i/(n+1) is strictly increasing by design
    n = 1000
    cdf = np.arange(1, n + 1) / (n + 1.0)
    assert np.all(np.diff(cdf) > 0)
    assert cdf[-1] < 1.0


def test_discard_fraction_drops_top_ratios():
    d_true = 3.0
    u = make_rng(300).random(20000)
    mu = (1.0 - u) ** (-1.0 / d_true)
    d_all, _, n_all = knn_dimension_from_ratios(mu, k=2)
    d_cut, _, n_cut = knn_dimension_from_ratios(mu, k=2, discard_top_fraction=0.1)
    assert n_cut == n_all - 2000
    assert abs(d_cut - d_true) < 0.15


@settings(max_examples=20, deadline=None)
@given(exponent=st.integers(-40, 40), k=st.integers(2, 5))
def test_scale_invariance_bit_identical_pow2(exponent, k):
    # power-of-two scalings are exact in binary floating point, so the
    # cancellation of the scale in every ratio is bit-exact
    pts = make_rng(13).random((80, 3))
    base = estimate_id_knn(PointCloud(pts), k=k)
    scaled = estimate_id_knn(PointCloud(pts * 2.0**exponent), k=k)
    assert scaled.d_hat == base.d_hat


@settings(max_examples=20, deadline=None)
@given(scale=st.floats(min_value=1e-6, max_value=1e6), k=st.integers(2, 5))
def test_scale_invariance_general(scale, k):
    # arbitrary scales round the inputs themselves, so identity holds to
    # rounding error rather than bit-exactly
    pts = make_rng(13).random((80, 3))
    base = estimate_id_knn(PointCloud(pts), k=k)
    scaled = estimate_id_knn(PointCloud(pts * scale), k=k)
    assert scaled.d_hat == pytest.approx(base.d_hat, rel=1e-9)


def test_permutation_invariance_distinct_distances():
    pts = make_rng(14).random((150, 3))
    perm = make_rng(15).permutation(150)
    a = estimate_id_knn(PointCloud(pts), k=2)
    b = estimate_id_knn(PointCloud(pts[perm]), k=2)
    assert a.d_hat == b.d_hat


# -- MLE estimator -------------------------------------------------------------


def test_mle_constant_per_point_mean():
    # rows engineered so every per-point value equals v exactly
    v, k = 4.0, 5
    mu = np.exp(np.linspace(0.1, 0.4, k - 1))
    denom = (k - 1) * np.log(mu[-1]) - np.log(mu[:-1]).sum()
    scale = ((k - 2) / v) / denom  # log-scaling multiplies the denominator
    ratios = np.tile(mu**scale, (50, 1))
    per_point = mle_dimension_from_ratios(ratios, k, unbiased=True)
    assert per_point == pytest.approx(np.full(50, v))
    assert float(per_point.mean()) == pytest.approx(v)


def test_mle_order_statistics_oracle():
    # neighbor radii of a unit-rate spatial point process: r_i = v_i**(1/d)
    # with v_i the arrival times of a unit-rate temporal process
    d_true, k, n = 10.0, 100, 10000
    arrivals = np.cumsum(make_rng(400).exponential(size=(n, k)), axis=1)
    radii = arrivals ** (1.0 / d_true)
    ratios = radii[:, 1:] / radii[:, :1]
    per_point = mle_dimension_from_ratios(ratios, k, unbiased=True)
    assert abs(per_point.mean() - d_true) < 0.3
    # biased form overshoots by roughly (k-1)/(k-2)
    biased = mle_dimension_from_ratios(ratios, k, unbiased=False)
    assert biased.mean() > per_point.mean()


def test_mle_on_hypercube_underestimates_at_large_k():
    cloud = sample_hypercube(10, 10000, seed=16)
    est = estimate_id_mle(cloud, k=100, unbiased=True)
    assert est.d_hat < 10.0
    assert est.per_point is not None and est.per_point.shape[0] == est.n_used


def test_mle_requires_k_at_least_3():
    cloud = sample_hypercube(2, 50, seed=17)
    with pytest.raises(ValueError):
        estimate_id_mle(cloud, k=2)


def test_oracle_recovery_within_3_stderr():
    d_true, n = 7.0, 30000
    u = make_rng(500).random(n)
    mu = (1.0 - u) ** (-1.0 / d_true)
    d_hat, _, _ = knn_dimension_from_ratios(mu, k=2)
    # TwoNN slope estimate has stderr ~ d/sqrt(n)
    assert abs(d_hat - d_true) < 3.0 * d_true / np.sqrt(n)

    k = 20
    arrivals = np.cumsum(make_rng(501).exponential(size=(n, k)), axis=1)
    ratios = (arrivals ** (1.0 / d_true))[:, 1:] / (arrivals ** (1.0 / d_true))[:, :1]
    per_point = mle_dimension_from_ratios(ratios, k, unbiased=True)
    stderr = per_point.std(ddof=1) / np.sqrt(per_point.shape[0])
    assert abs(per_point.mean() - d_true) < 3.0 * stderr + 0.02 * d_true


# -- subsample profiles ---------------------------------------------------------


def test_id_vs_pointcount_identity_subsample():
    cloud = sample_hypercube(2, 400, seed=18)
    profile = id_vs_pointcount(cloud, 2, [400])
    assert len(profile) == 1
    assert profile[0][0] == 400
    assert profile[0][1].d_hat == estimate_id_knn(cloud, 2).d_hat


def test_id_vs_pointcount_sorted_output():
    cloud = sample_hypercube(2, 500, seed=19)
    profile = id_vs_pointcount(cloud, 2, [500, 100, 250])
    assert [n for n, _ in profile] == [100, 250, 500]


def test_id_vs_pointcount_skips_tiny_counts():
    cloud = sample_hypercube(2, 100, seed=20)
    with pytest.warns(UserWarning, match="too small"):
        profile = id_vs_pointcount(cloud, 4, [3, 50])
    assert [n for n, _ in profile] == [50]


def test_id_vs_pointcount_rejects_oversample():
    cloud = sample_hypercube(2, 100, seed=20)
    with pytest.raises(ValueError):
        id_vs_pointcount(cloud, 2, [101])


def test_id_vs_pointcount_stabilizes_on_hypercube():
    cloud = sample_hypercube(4, 10000, seed=23)
    profile = id_vs_pointcount(cloud, 2, [5000, 10000])
    d5, d10 = profile[0][1].d_hat, profile[1][1].d_hat
    assert abs(d5 - d10) / d10 < 0.1
