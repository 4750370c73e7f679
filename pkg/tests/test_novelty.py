"""Novelty detectors against independent oracles.

The one-class SVM oracle is a projected gradient solver for the dual QP
using a bisection projection onto the capped simplex; the KDE oracle is
direct double-loop summation; the NN oracle is a linear scan.
"""

import math

import numpy as np
import pytest

from anorec.errors import ValidationError
from anorec.novelty import (
    DetectorConfig,
    KernelDensityDetector,
    NearestNeighborDetector,
    OneClassSvm,
    make_detector,
    rbf_kernel,
    scott_bandwidth,
)
from anorec.reduction import pq_train


# ---------------------------------------------------------------------------
# oracles

def nn_oracle(train, queries):
    out = []
    for q in queries:
        best = math.inf
        for row in train:
            best = min(best, math.dist(q, row))
        out.append(best)
    return np.array(out)


def project_capped_simplex(v, cap):
    """Euclidean projection onto {0 <= a <= cap, sum a = 1} by bisection."""
    lo, hi = float(v.min()) - cap - 1.0, float(v.max())
    for _ in range(100):
        tau = 0.5 * (lo + hi)
        total = np.clip(v - tau, 0.0, cap).sum()
        if total > 1.0:
            lo = tau
        else:
            hi = tau
    return np.clip(v - 0.5 * (lo + hi), 0.0, cap)


def qp_oracle(K, nu, step_tol=1e-8, max_iter=200_000):
    """Projected gradient on 1/2 a'Ka over the capped simplex."""
    n = K.shape[0]
    cap = 1.0 / (nu * n)
    lipschitz = float(np.linalg.eigvalsh(K)[-1])
    alpha = project_capped_simplex(np.full(n, 1.0 / n), cap)
    for _ in range(max_iter):
        new = project_capped_simplex(alpha - (K @ alpha) / lipschitz, cap)
        if np.max(np.abs(new - alpha)) <= step_tol:
            return new
        alpha = new
    raise AssertionError("qp oracle did not converge")


def kde_oracle(train, bandwidth, queries):
    n, d = train.shape
    out = []
    for q in queries:
        total = 0.0
        for row in train:
            term = 1.0
            for j in range(d):
                z = (q[j] - row[j]) / bandwidth[j]
                term *= math.exp(-0.5 * z * z) / (bandwidth[j] * math.sqrt(2 * math.pi))
            total += term
        out.append(total / n)
    return np.array(out)


# ---------------------------------------------------------------------------
# Scott bandwidth

class TestScottBandwidth:
    def test_power_of_two_closed_form(self):
        # n = 1024, d = 16, sample sigma exactly 1 -> h = 1024**(-1/20) = 2**-0.5
        a = math.sqrt(1023.0 / 1024.0)
        col = np.array([a, -a] * 512)
        X = np.stack([col] * 16, axis=1)
        h = scott_bandwidth(X)
        assert np.allclose(h, 2.0 ** -0.5, atol=1e-12)

    def test_two_pass_oracle(self):
        rng = np.random.Generator(np.random.PCG64(40))
        X = rng.normal(size=(50, 4)) * np.array([1.0, 0.1, 5.0, 2.0])
        h = scott_bandwidth(X)
        n, d = X.shape
        for j in range(d):
            mu = sum(X[i, j] for i in range(n)) / n
            var = sum((X[i, j] - mu) ** 2 for i in range(n)) / (n - 1)
            expected = math.sqrt(var) * n ** (-1.0 / (d + 4))
            assert h[j] == pytest.approx(expected, abs=1e-12)

    def test_constant_dimension_floored(self):
        rng = np.random.Generator(np.random.PCG64(41))
        X = rng.normal(size=(30, 3))
        X[:, 1] = 7.0
        h = scott_bandwidth(X)
        sigma = X.std(axis=0, ddof=1)
        typical = sigma[sigma > 0].mean()
        assert h[1] == pytest.approx(1e-6 * max(1.0, typical))
        assert h[0] > h[1]

    def test_all_constant_floored_at_1e6(self):
        X = np.full((10, 2), 4.0)
        assert np.allclose(scott_bandwidth(X), 1e-6)

    def test_single_sample_rejected(self):
        with pytest.raises(ValidationError):
            scott_bandwidth(np.ones((1, 3)))


# ---------------------------------------------------------------------------
# nearest neighbor

class TestNearestNeighbor:
    def test_training_point_scores_zero(self):
        X = np.array([[0.0, 0.0], [3.0, 4.0]])
        det = NearestNeighborDetector().fit(X)
        assert det.score(X[1]) == 0.0

    def test_simple_distance(self):
        det = NearestNeighborDetector().fit(np.array([[0.0, 0.0], [1.0, 0.0]]))
        assert det.score(np.array([0.25, 0.0])) == pytest.approx(0.25)

    def test_matches_linear_scan_oracle(self):
        rng = np.random.Generator(np.random.PCG64(50))
        for dim in (2, 16, 64):
            train = rng.normal(size=(300, dim))
            queries = rng.normal(size=(40, dim))
            det = NearestNeighborDetector().fit(train)
            got = det.score_many(queries)
            assert np.max(np.abs(got - nn_oracle(train, queries))) <= 1e-9

    def test_compressed_bits_zero_is_distance_to_means(self):
        rng = np.random.Generator(np.random.PCG64(51))
        X = rng.normal(size=(80, 4))
        cb = pq_train(X, m=2, bits=0, iterations=3, seed=0)
        det = NearestNeighborDetector(codebook=cb).fit(X)
        q = rng.normal(size=4)
        means = np.concatenate([X[:, :2].mean(axis=0), X[:, 2:].mean(axis=0)])
        assert det.score(q) == pytest.approx(np.linalg.norm(q - means), rel=1e-12)

    def test_compressed_matches_decode_oracle(self):
        rng = np.random.Generator(np.random.PCG64(52))
        X = rng.normal(size=(200, 8))
        cb = pq_train(X, m=4, bits=4, iterations=15, seed=1)
        det = NearestNeighborDetector(codebook=cb).fit(X)
        from anorec.reduction import pq_decode, pq_encode

        recon = pq_decode(cb, pq_encode(cb, X))
        for q in rng.normal(size=(10, 8)):
            expected = math.sqrt(min(np.sum((recon - q) ** 2, axis=1)))
            assert det.score(q) == pytest.approx(expected, rel=1e-12)

    def test_scores_nonnegative_finite(self):
        rng = np.random.Generator(np.random.PCG64(53))
        det = NearestNeighborDetector().fit(rng.normal(size=(50, 6)))
        scores = det.score_many(rng.normal(size=(30, 6)) * 10)
        assert np.all(scores >= 0) and np.all(np.isfinite(scores))

    def test_empty_training_rejected(self):
        with pytest.raises(ValidationError):
            NearestNeighborDetector().fit(np.zeros((0, 4)))

    def test_dim_mismatch_rejected(self):
        det = NearestNeighborDetector().fit(np.zeros((3, 4)) + np.eye(3, 4))
        with pytest.raises(ValidationError):
            det.score(np.zeros(5))


# ---------------------------------------------------------------------------
# one-class SVM

def seeded_points(seed, n=10, dim=2, spread=2.0):
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.normal(size=(n, dim)) * spread


class TestOneClassSvm:
    def test_outlier_scores_higher_than_center(self):
        rng = np.random.Generator(np.random.PCG64(60))
        X = rng.normal(size=(100, 2))
        det = OneClassSvm(gamma=0.5, nu=0.1).fit(X)
        assert det.score(np.array([8.0, 8.0])) > det.score(np.array([0.0, 0.0]))

    def test_dual_feasibility_and_kkt(self):
        for seed in (0, 1, 2):
            X = seeded_points(seed)
            det = OneClassSvm(gamma=0.5, nu=0.3, tol=1e-7).fit(X)
            a = det.alpha
            C = 1.0 / (0.3 * len(X))
            assert abs(a.sum() - 1.0) <= 1e-9
            assert np.all(a >= -1e-12) and np.all(a <= C + 1e-12)
            G = rbf_kernel(X, X, 0.5) @ a
            up = a < C * (1 - 1e-8)
            down = a > C * 1e-8
            violation = np.max(-G[up]) - np.min(-G[down])
            assert violation <= 1e-6

    def test_objective_matches_projected_gradient_oracle(self):
        for seed in (3, 4, 5, 6):
            X = seeded_points(seed)
            K = rbf_kernel(X, X, 0.5)
            # fixture sanity: kernel well conditioned so the oracle converges
            assert np.linalg.eigvalsh(K)[0] > 1e-4
            det = OneClassSvm(gamma=0.5, nu=0.2, tol=1e-9).fit(X)
            ref = qp_oracle(K, 0.2)
            obj = det.dual_objective()
            obj_ref = 0.5 * float(ref @ K @ ref)
            assert abs(obj - obj_ref) <= 1e-5

    def test_nu_one_forces_uniform_alpha(self):
        X = seeded_points(7)
        det = OneClassSvm(gamma=0.5, nu=1.0).fit(X)
        assert np.allclose(det.alpha, 1.0 / len(X), atol=1e-12)

    def test_nu_property(self):
        # margin-error fraction <= nu <= support-vector fraction
        rng = np.random.Generator(np.random.PCG64(61))
        X = rng.normal(size=(60, 2))
        n = len(X)
        for nu in (0.1, 0.5, 1.0):
            det = OneClassSvm(gamma=0.5, nu=nu, tol=1e-8).fit(X)
            C = 1.0 / (nu * n)
            scores = det.score_many(X)
            margin_errors = int((scores > 1e-7).sum())
            svs = int((det.alpha > C * 1e-6).sum())
            assert margin_errors <= nu * n + 1e-9
            assert svs >= nu * n - 1e-9

    def test_translation_leaves_model_unchanged(self):
        X = seeded_points(8, n=30)
        shift = np.array([13.7, -4.2])
        a = OneClassSvm(gamma=0.5, nu=0.2, tol=1e-8).fit(X)
        b = OneClassSvm(gamma=0.5, nu=0.2, tol=1e-8).fit(X + shift)
        queries = seeded_points(9, n=15)
        sa = a.score_many(queries)
        sb = b.score_many(queries + shift)
        assert np.allclose(sa, sb, atol=1e-8)
        assert np.array_equal(np.argsort(sa), np.argsort(sb))

    def test_width_convention_toggle(self):
        cfg = DetectorConfig(kind="ocsvm", rbf_param=2.0, rbf_param_is_width=True)
        assert cfg.gamma() == pytest.approx(1.0 / 8.0)
        cfg2 = DetectorConfig(kind="ocsvm", rbf_param=0.001)
        assert cfg2.gamma() == pytest.approx(0.001)

    def test_invalid_params_rejected(self):
        with pytest.raises(ValidationError):
            OneClassSvm(gamma=0.0)
        with pytest.raises(ValidationError):
            OneClassSvm(gamma=1.0, nu=0.0)
        with pytest.raises(ValidationError):
            OneClassSvm(gamma=1.0, nu=1.5)
        with pytest.raises(ValidationError):
            OneClassSvm(gamma=1.0).fit(np.zeros((1, 2)))


# ---------------------------------------------------------------------------
# kernel density

class TestKernelDensity:
    def test_closed_form_two_points(self):
        det = KernelDensityDetector(bandwidth=1.0).fit(np.array([[-1.0], [1.0]]))
        phi1 = math.exp(-0.5) / math.sqrt(2 * math.pi)
        assert det.density(np.array([0.0])) == pytest.approx(phi1, rel=1e-12)
        assert det.score(np.array([0.0])) == pytest.approx(1.0 / phi1, rel=1e-12)

    def test_closed_form_duplicate_points(self):
        det = KernelDensityDetector(bandwidth=1.0).fit(np.array([[0.5], [0.5]]))
        phi0 = 1.0 / math.sqrt(2 * math.pi)
        assert det.density(np.array([0.5])) == pytest.approx(phi0, rel=1e-12)
        assert det.score(np.array([0.5])) == pytest.approx(math.sqrt(2 * math.pi), rel=1e-12)

    def test_matches_direct_summation_oracle(self):
        rng = np.random.Generator(np.random.PCG64(70))
        train = rng.normal(size=(40, 3)) * np.array([1.0, 2.0, 0.5])
        det = KernelDensityDetector().fit(train)
        queries = rng.normal(size=(25, 3))
        got = det.density_many(queries)
        expected = kde_oracle(train, det.bandwidth, queries)
        assert np.allclose(got, expected, rtol=1e-9)

    def test_density_decreases_away_from_data(self):
        det = KernelDensityDetector(bandwidth=1.0).fit(
            np.array([[-1.0], [0.0], [1.0]])
        )
        p = [det.density(np.array([x])) for x in (0.0, 1.5, 3.0, 6.0)]
        assert p[0] > p[1] > p[2] > p[3]

    def test_score_is_reciprocal_density(self):
        rng = np.random.Generator(np.random.PCG64(71))
        train = rng.normal(size=(30, 2))
        det = KernelDensityDetector().fit(train)
        q = rng.normal(size=2)
        assert det.score(q) == pytest.approx(1.0 / det.density(q), rel=1e-12)

    def test_far_query_hits_floor_not_inf(self):
        det = KernelDensityDetector(bandwidth=0.1).fit(np.zeros((2, 2)) + [[0, 0], [1, 1]])
        s = det.score(np.array([1e6, 1e6]))
        assert np.isfinite(s)
        assert s == pytest.approx(1e300)

    def test_permutation_invariance(self):
        rng = np.random.Generator(np.random.PCG64(72))
        train = rng.normal(size=(50, 3))
        q = rng.normal(size=(10, 3))
        a = KernelDensityDetector().fit(train).density_many(q)
        perm = rng.permutation(50)
        b = KernelDensityDetector().fit(train[perm]).density_many(q)
        assert np.allclose(a, b, rtol=1e-10)

    def test_translation_invariance(self):
        rng = np.random.Generator(np.random.PCG64(73))
        train = rng.normal(size=(40, 2))
        q = rng.normal(size=(12, 2))
        shift = np.array([250.0, -31.5])
        a = KernelDensityDetector().fit(train).score_many(q)
        b = KernelDensityDetector().fit(train + shift).score_many(q + shift)
        assert np.allclose(a, b, rtol=1e-6)
        assert np.array_equal(np.argsort(a), np.argsort(b))

    def test_bad_bandwidth_rejected(self):
        with pytest.raises(ValidationError):
            KernelDensityDetector(bandwidth=0.0).fit(np.ones((3, 1)) * [[1], [2], [3]])

    def test_dim_mismatch_rejected(self):
        det = KernelDensityDetector(bandwidth=1.0).fit(np.array([[0.0], [1.0]]))
        with pytest.raises(ValidationError):
            det.density(np.zeros(3))


# ---------------------------------------------------------------------------
# nn translation invariance + factory

def test_nn_translation_invariance():
    rng = np.random.Generator(np.random.PCG64(80))
    train = rng.normal(size=(60, 4))
    q = rng.normal(size=(20, 4))
    shift = rng.normal(size=4) * 50
    a = NearestNeighborDetector().fit(train).score_many(q)
    b = NearestNeighborDetector().fit(train + shift).score_many(q + shift)
    assert np.allclose(a, b, atol=1e-8)
    assert np.array_equal(np.argsort(a), np.argsort(b))


class TestFactory:
    def test_kinds(self):
        assert isinstance(make_detector(DetectorConfig(kind="kde")), KernelDensityDetector)
        assert isinstance(make_detector(DetectorConfig(kind="ocsvm")), OneClassSvm)
        det = make_detector(DetectorConfig(kind="nn", preprocessing="none"))
        assert isinstance(det, NearestNeighborDetector)
        assert det.codebook is None

    def test_nn_pq_needs_codebook(self):
        with pytest.raises(ValidationError):
            make_detector(DetectorConfig(kind="nn"))

    def test_invalid_kind_rejected(self):
        with pytest.raises(ValidationError):
            make_detector(DetectorConfig(kind="forest"))

    def test_pq_only_pairs_with_nn(self):
        with pytest.raises(ValidationError):
            make_detector(DetectorConfig(kind="kde", preprocessing="pq"))

    def test_ocsvm_factory_uses_gamma(self):
        det = make_detector(DetectorConfig(kind="ocsvm", rbf_param=0.25))
        assert det.gamma == pytest.approx(0.25)
