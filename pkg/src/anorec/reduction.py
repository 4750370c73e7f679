"""Dimensionality reduction: PCA projection and product quantization.

Both serve the grid bank's shared preprocessing step: distance-based
detectors see compact codes, kernel-based detectors see a low-dimensional
projection. Everything here is deterministic given its seed; product
quantizer training derives one independent stream per subspace so the
codebook does not depend on subspace processing order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# PCA

@dataclass
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), rows orthonormal
    explained_variance: np.ndarray  # (k,), descending

    @property
    def in_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def out_dim(self) -> int:
        return self.components.shape[0]


def _fix_signs(components: np.ndarray) -> np.ndarray:
    # convention: the largest-magnitude entry of each component is positive
    for row in components:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    return components


def pca_fit(X, k: int) -> PcaModel:
    """Fit a k-dimensional PCA with the 1/(n-1) covariance convention.

    Uses an eigendecomposition of the d x d covariance when d <= n and a
    thin SVD of the centered data otherwise; both give identical models up
    to floating point. k must satisfy 1 <= k <= min(n - 1, d).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("pca_fit expects a 2-D sample matrix")
    n, d = X.shape
    if n < 2:
        raise ValidationError(f"pca_fit needs at least 2 samples, got {n}")
    kmax = min(n - 1, d)
    if not 1 <= k <= kmax:
        raise ValidationError(
            f"pca dimension {k} outside valid range [1, {kmax}] for shape ({n}, {d})"
        )
    mean = X.mean(axis=0)
    Xc = X - mean
    total_var = float((Xc * Xc).sum()) / (n - 1)
    if total_var == 0.0:
        raise ValidationError("pca_fit: data has zero variance in every direction")

    if d <= n:
        cov = (Xc.T @ Xc) / (n - 1)
        eigvals, eigvecs = np.linalg.eigh(cov)
        order = np.argsort(eigvals)[::-1][:k]
        var = np.clip(eigvals[order], 0.0, None)
        components = eigvecs[:, order].T.copy()
    else:
        _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
        var = (s[:k] ** 2) / (n - 1)
        components = Vt[:k].copy()

    return PcaModel(
        mean=mean,
        components=_fix_signs(components),
        explained_variance=np.asarray(var, dtype=np.float64),
    )


def pca_transform(model: PcaModel, X) -> np.ndarray:
    """Project samples; accepts a single vector or a matrix."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.in_dim:
        raise ValidationError(
            f"pca_transform: input dim {X.shape[-1]} != model dim {model.in_dim}"
        )
    out = (X - model.mean) @ model.components.T
    return out[0] if single else out


# ---------------------------------------------------------------------------
# k-means (Lloyd with k-means++ seeding), private to the quantizer

def _kmeans_pp_seed(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = X[first]
    closest = ((X - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = float(closest.sum())
        if total <= 0.0:
            # fewer distinct points than centroids; duplicates are fine,
            # Lloyd's empty-cluster handling keeps them parked
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=closest / total))
        centroids[j] = X[idx]
        np.minimum(closest, ((X - centroids[j]) ** 2).sum(axis=1), out=closest)
    return centroids


def _kmeans(
    X: np.ndarray, k: int, iterations: int, rng: np.random.Generator
) -> tuple[np.ndarray, list[float]]:
    """Returns (centroids (k, d), per-iteration mean squared error history)."""
    n = X.shape[0]
    centroids = _kmeans_pp_seed(X, k, rng)
    history: list[float] = []
    assign = None
    for _ in range(iterations):
        d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)  # ties: lowest index
        err = float(d2[np.arange(n), new_assign].mean())
        history.append(err)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = X[assign == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
            else:
                # re-seed an empty cluster at the globally worst-fit point
                worst = int(np.argmax(d2[np.arange(n), assign]))
                centroids[j] = X[worst]
    return centroids, history


# ---------------------------------------------------------------------------
# Product quantizer

@dataclass
class PqCodebook:
    centroids: np.ndarray  # (m, 2**bits, d // m)
    bits: int
    training_error: list[list[float]] = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.centroids.shape[0]

    @property
    def subspace_dim(self) -> int:
        return self.centroids.shape[2]

    @property
    def dim(self) -> int:
        return self.m * self.subspace_dim

    @property
    def code_bits(self) -> int:
        return self.m * self.bits

    @property
    def code_dtype(self):
        return np.uint8 if self.bits <= 8 else np.uint16


def pq_train(
    X, m: int = 16, bits: int = 8, iterations: int = 25, seed: int = 0
) -> PqCodebook:
    """Train per-subspace codebooks with independent seeded k-means runs."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("pq_train expects a 2-D sample matrix")
    n, d = X.shape
    if n < 1:
        raise ValidationError("pq_train needs at least one sample")
    if m < 1:
        raise ValidationError("pq_train: m must be positive")
    if d % m != 0:
        raise ValidationError(f"pq_train: dim {d} not divisible by m {m}")
    if not 0 <= bits <= 16:
        raise ValidationError(f"pq_train: bits must lie in [0, 16], got {bits}")
    if iterations < 1:
        raise ValidationError("pq_train: iterations must be positive")
    k = 1 << bits
    if n < k:
        log.warning(
            "pq_train: %d training vectors for %d centroids per subspace; "
            "codebook will hold duplicates",
            n,
            k,
        )
    dsub = d // m
    centroids = np.empty((m, k, dsub), dtype=np.float64)
    errors: list[list[float]] = []
    children = np.random.SeedSequence(seed).spawn(m)
    for j in range(m):
        rng = np.random.Generator(np.random.PCG64(children[j]))
        sub = X[:, j * dsub : (j + 1) * dsub]
        centroids[j], hist = _kmeans(sub, k, iterations, rng)
        errors.append(hist)
    return PqCodebook(centroids=centroids, bits=bits, training_error=errors)


def pq_encode(codebook: PqCodebook, X) -> np.ndarray:
    """Assign each subvector to its nearest centroid (ties: lowest index)."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != codebook.dim:
        raise ValidationError(
            f"pq_encode: input dim {X.shape[1]} != codebook dim {codebook.dim}"
        )
    m, dsub = codebook.m, codebook.subspace_dim
    codes = np.empty((X.shape[0], m), dtype=codebook.code_dtype)
    for j in range(m):
        sub = X[:, j * dsub : (j + 1) * dsub]
        d2 = ((sub[:, None, :] - codebook.centroids[j][None, :, :]) ** 2).sum(axis=2)
        codes[:, j] = np.argmin(d2, axis=1)
    return codes[0] if single else codes


def pq_decode(codebook: PqCodebook, codes) -> np.ndarray:
    """Reconstruct vectors from codes by concatenating centroids."""
    codes = np.asarray(codes)
    single = codes.ndim == 1
    if single:
        codes = codes[None, :]
    if codes.shape[1] != codebook.m:
        raise ValidationError(
            f"pq_decode: code length {codes.shape[1]} != m {codebook.m}"
        )
    if codes.size and int(codes.max()) >= codebook.centroids.shape[1]:
        raise ValidationError("pq_decode: code value out of centroid range")
    parts = [codebook.centroids[j][codes[:, j]] for j in range(codebook.m)]
    out = np.concatenate(parts, axis=1)
    return out[0] if single else out


def pq_distance_table(codebook: PqCodebook, query) -> np.ndarray:
    """Squared distances from each query subvector to every centroid, (m, 2**bits)."""
    query = np.asarray(query, dtype=np.float64)
    if query.ndim != 1 or query.shape[0] != codebook.dim:
        raise ValidationError(
            f"pq_distance_table: query dim {query.shape} != codebook dim {codebook.dim}"
        )
    m, dsub = codebook.m, codebook.subspace_dim
    sub = query.reshape(m, dsub)
    return ((sub[:, None, :] - codebook.centroids) ** 2).sum(axis=2)


def pq_adc_distance(codebook: PqCodebook, query, codes) -> np.ndarray | float:
    """Asymmetric squared distance: raw query against coded vectors.

    Exact squared L2 between the query and each decoded vector, computed
    via table lookup.
    """
    table = pq_distance_table(codebook, query)
    codes = np.asarray(codes)
    single = codes.ndim == 1
    if single:
        codes = codes[None, :]
    if codes.shape[1] != codebook.m:
        raise ValidationError(
            f"pq_adc_distance: code length {codes.shape[1]} != m {codebook.m}"
        )
    dists = table[np.arange(codebook.m)[None, :], codes].sum(axis=1)
    return float(dists[0]) if single else dists
