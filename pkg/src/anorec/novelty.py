"""Novelty detectors over region features.

Three interchangeable scorers, all trained on normal data only and all
emitting "larger is more anomalous" scores:

  NearestNeighborDetector   distance to the closest training vector,
                            exact or through a product-quantized index
  OneClassSvm               nu-parameterized one-class SVM with an RBF
                            kernel, solved in the dual by SMO
  KernelDensityDetector     product Gaussian KDE with per-dimension
                            Scott bandwidths, scoring by reciprocal density

Scores from different detectors are not on a common scale; anything that
compares regions must stay within one detector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, ValidationError
from .reduction import PqCodebook, pq_adc_distance, pq_encode

DENSITY_FLOOR = 1e-300

# Bandwidths collapse when a dimension is constant; floor them relative to
# the typical spread so the product kernel stays finite.
BANDWIDTH_FLOOR_SCALE = 1e-6


def scott_bandwidth(X) -> np.ndarray:
    """Per-dimension Scott bandwidths h_j = sigma_j * n**(-1/(d+4)).

    sigma uses the n-1 denominator. Each h_j is floored at
    1e-6 * max(1, mean nonzero sigma) so constant dimensions cannot
    zero out the kernel.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError("scott_bandwidth expects a 2-D sample matrix")
    n, d = X.shape
    if n < 2:
        raise ValidationError(f"scott_bandwidth needs at least 2 samples, got {n}")
    sigma = X.std(axis=0, ddof=1)
    nonzero = sigma[sigma > 0]
    typical = float(nonzero.mean()) if nonzero.size else 0.0
    floor = BANDWIDTH_FLOOR_SCALE * max(1.0, typical)
    return np.maximum(sigma * n ** (-1.0 / (d + 4)), floor)


@dataclass
class DetectorConfig:
    """Configuration shared by detector construction sites."""

    kind: str = "nn"  # nn | ocsvm | kde
    preprocessing: str | None = None  # pq | pca | none; None picks per kind
    pca_dim: int = 16
    pq_subvectors: int = 16
    pq_bits: int = 8
    pq_iterations: int = 25
    rbf_param: float = 0.001
    rbf_param_is_width: bool = False  # True: gamma = 1 / (2 * rbf_param**2)
    nu: float = 0.1
    svm_tol: float = 1e-4
    svm_max_iter: int = 100_000
    seed: int = 0

    KINDS = ("nn", "ocsvm", "kde")

    def validate(self) -> None:
        if self.kind not in self.KINDS:
            raise ValidationError(f"unknown detector kind {self.kind!r}")
        if self.preprocessing not in (None, "pq", "pca", "none"):
            raise ValidationError(f"unknown preprocessing {self.preprocessing!r}")
        if self.preprocessing == "pq" and self.kind != "nn":
            raise ValidationError(
                "pq preprocessing only pairs with the nn detector"
            )
        if not 0.0 < self.nu <= 1.0:
            raise ValidationError(f"nu must lie in (0, 1], got {self.nu}")
        if self.rbf_param <= 0:
            raise ValidationError("rbf_param must be positive")
        if self.pca_dim < 1:
            raise ValidationError("pca_dim must be positive")

    def resolved_preprocessing(self) -> str:
        if self.preprocessing is not None:
            return self.preprocessing
        return "pq" if self.kind == "nn" else "pca"

    def gamma(self) -> float:
        if self.rbf_param_is_width:
            return 1.0 / (2.0 * self.rbf_param**2)
        return self.rbf_param


class NearestNeighborDetector:
    """Distance to the nearest training vector, in input units.

    With a codebook the index stores codes and answers with the square
    root of the asymmetric (ADC) squared distance, so exact and compressed
    modes share units.
    """

    def __init__(self, codebook: PqCodebook | None = None):
        self.codebook = codebook
        self.train: np.ndarray | None = None
        self.codes: np.ndarray | None = None

    @property
    def dim(self) -> int:
        if self.codebook is not None:
            return self.codebook.dim
        if self.train is None:
            raise ValidationError("detector is not fitted")
        return self.train.shape[1]

    def fit(self, X) -> "NearestNeighborDetector":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValidationError("nn fit needs a non-empty 2-D sample matrix")
        if self.codebook is not None:
            if X.shape[1] != self.codebook.dim:
                raise ValidationError(
                    f"nn fit: dim {X.shape[1]} != codebook dim {self.codebook.dim}"
                )
            self.codes = pq_encode(self.codebook, X)
        else:
            self.train = X.copy()
        return self

    def score_many(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if self.codebook is not None:
            if self.codes is None:
                raise ValidationError("detector is not fitted")
            out = np.empty(X.shape[0])
            for i, q in enumerate(X):
                out[i] = math.sqrt(
                    max(float(np.min(pq_adc_distance(self.codebook, q, self.codes))), 0.0)
                )
        else:
            if self.train is None:
                raise ValidationError("detector is not fitted")
            if X.shape[1] != self.train.shape[1]:
                raise ValidationError(
                    f"nn score: dim {X.shape[1]} != trained dim {self.train.shape[1]}"
                )
            out = np.empty(X.shape[0])
            for i, q in enumerate(X):
                d2 = ((self.train - q) ** 2).sum(axis=1)
                out[i] = math.sqrt(max(float(d2.min()), 0.0))
        return out

    def score(self, x) -> float:
        return float(self.score_many(np.asarray(x)[None, :])[0])


def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    """exp(-gamma * ||a - b||^2) for all pairs; exact pairwise distances."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    d2 = ((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2)
    return np.exp(-gamma * d2)


class OneClassSvm:
    """nu one-class SVM trained by sequential minimal optimization.

    Dual problem:   min 1/2 a' K a   s.t. 0 <= a_i <= 1/(nu n), sum a = 1.
    The decision value is rho - sum_i a_i k(x_i, x); positive scores mean
    the query sits outside the learned support region. Working pairs are
    chosen by maximal KKT violation and the solver stops when the largest
    violation falls under tol.
    """

    def __init__(
        self,
        gamma: float,
        nu: float = 0.1,
        tol: float = 1e-4,
        max_iter: int = 100_000,
    ):
        if gamma <= 0:
            raise ValidationError("gamma must be positive")
        if not 0.0 < nu <= 1.0:
            raise ValidationError(f"nu must lie in (0, 1], got {nu}")
        if tol <= 0:
            raise ValidationError("tol must be positive")
        self.gamma = float(gamma)
        self.nu = float(nu)
        self.tol = float(tol)
        self.max_iter = int(max_iter)
        self.alpha: np.ndarray | None = None
        self.rho: float | None = None
        self.train: np.ndarray | None = None
        self.n_iter: int = 0

    def fit(self, X) -> "OneClassSvm":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 2:
            raise ValidationError("ocsvm fit needs at least 2 samples")
        n = X.shape[0]
        C = 1.0 / (self.nu * n)
        K = rbf_kernel(X, X, self.gamma)
        alpha = np.full(n, 1.0 / n)
        G = K @ alpha  # gradient of 1/2 a'Ka is Ka

        # feasible directions: increase where a_i < C, decrease where a_i > 0
        bound_eps = C * 1e-12
        it = 0
        for it in range(1, self.max_iter + 1):
            up = alpha < C - bound_eps
            down = alpha > bound_eps
            if not up.any() or not down.any():
                # nu = 1 pins every alpha at the bound; nothing can move
                break
            minus_g = -G
            i = int(np.flatnonzero(up)[np.argmax(minus_g[up])])
            j = int(np.flatnonzero(down)[np.argmin(minus_g[down])])
            violation = minus_g[i] - minus_g[j]
            if violation <= self.tol:
                break
            curvature = K[i, i] + K[j, j] - 2.0 * K[i, j]
            if curvature <= 1e-12:
                curvature = 1e-12
            total = alpha[i] + alpha[j]
            step = (G[j] - G[i]) / curvature
            new_i = alpha[i] + step
            # project the pair update onto the box keeping the pair sum fixed
            new_i = min(max(new_i, 0.0), C)
            new_i = min(max(new_i, total - C), total)
            new_j = total - new_i
            delta_i = new_i - alpha[i]
            delta_j = new_j - alpha[j]
            alpha[i] = new_i
            alpha[j] = new_j
            G += K[:, i] * delta_i + K[:, j] * delta_j
        else:
            raise ConvergenceError(
                f"one-class SVM did not converge in {self.max_iter} iterations "
                f"(violation {violation:.3e}, tol {self.tol:.3e})"
            )
        self.n_iter = it

        free = (alpha > C * 1e-8) & (alpha < C * (1 - 1e-8))
        if free.any():
            rho = float(G[free].mean())
        else:
            at_upper = alpha >= C * (1 - 1e-8)
            at_lower = alpha <= C * 1e-8
            lo = float(G[at_upper].max()) if at_upper.any() else None
            hi = float(G[at_lower].min()) if at_lower.any() else None
            if lo is not None and hi is not None:
                rho = 0.5 * (lo + hi)
            elif lo is not None:
                rho = lo
            elif hi is not None:
                rho = hi
            else:
                rho = float(G.mean())
        self.alpha = alpha
        self.rho = rho
        self.train = X.copy()
        return self

    def dual_objective(self) -> float:
        """1/2 a' K a at the solution."""
        if self.alpha is None or self.train is None:
            raise ValidationError("detector is not fitted")
        K = rbf_kernel(self.train, self.train, self.gamma)
        return 0.5 * float(self.alpha @ K @ self.alpha)

    def score_many(self, X) -> np.ndarray:
        if self.alpha is None or self.train is None or self.rho is None:
            raise ValidationError("detector is not fitted")
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.shape[1] != self.train.shape[1]:
            raise ValidationError(
                f"ocsvm score: dim {X.shape[1]} != trained dim {self.train.shape[1]}"
            )
        sv = self.alpha > 0
        k = rbf_kernel(X, self.train[sv], self.gamma)
        return self.rho - k @ self.alpha[sv]

    def score(self, x) -> float:
        return float(self.score_many(np.asarray(x)[None, :])[0])


class KernelDensityDetector:
    """Product Gaussian KDE scored by reciprocal density.

    Per-dimension Scott bandwidths unless a fixed bandwidth vector is
    supplied. Density is floored at 1e-300 before inversion so scores
    stay finite.
    """

    def __init__(self, bandwidth=None):
        self.fixed_bandwidth = bandwidth
        self.train: np.ndarray | None = None
        self.bandwidth: np.ndarray | None = None

    def fit(self, X) -> "KernelDensityDetector":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] < 2:
            raise ValidationError("kde fit needs at least 2 samples")
        self.train = X.copy()
        if self.fixed_bandwidth is not None:
            h = np.broadcast_to(
                np.asarray(self.fixed_bandwidth, dtype=np.float64), (X.shape[1],)
            ).copy()
            if np.any(h <= 0):
                raise ValidationError("bandwidths must be positive")
            self.bandwidth = h
        else:
            self.bandwidth = scott_bandwidth(X)
        return self

    def density_many(self, X) -> np.ndarray:
        if self.train is None or self.bandwidth is None:
            raise ValidationError("detector is not fitted")
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.shape[1] != self.train.shape[1]:
            raise ValidationError(
                f"kde density: dim {X.shape[1]} != trained dim {self.train.shape[1]}"
            )
        d = self.train.shape[1]
        lognorm = -0.5 * d * math.log(2.0 * math.pi) - float(
            np.log(self.bandwidth).sum()
        )
        out = np.empty(X.shape[0])
        for i, q in enumerate(X):
            z2 = (((q - self.train) / self.bandwidth) ** 2).sum(axis=1)
            out[i] = float(np.exp(-0.5 * z2 + lognorm).mean())
        return out

    def density(self, x) -> float:
        return float(self.density_many(np.asarray(x)[None, :])[0])

    def score_many(self, X) -> np.ndarray:
        p = self.density_many(X)
        return 1.0 / np.maximum(p, DENSITY_FLOOR)

    def score(self, x) -> float:
        return float(self.score_many(np.asarray(x)[None, :])[0])


def make_detector(config: DetectorConfig, codebook: PqCodebook | None = None):
    """Construct an unfitted detector for a config; codebook feeds nn+pq."""
    config.validate()
    if config.kind == "nn":
        if config.resolved_preprocessing() == "pq" and codebook is None:
            raise ValidationError("nn detector with pq preprocessing needs a codebook")
        return NearestNeighborDetector(
            codebook=codebook if config.resolved_preprocessing() == "pq" else None
        )
    if config.kind == "ocsvm":
        return OneClassSvm(
            gamma=config.gamma(),
            nu=config.nu,
            tol=config.svm_tol,
            max_iter=config.svm_max_iter,
        )
    return KernelDensityDetector()
