"""Mixture-model ground truth, GMM sampling and Gram-matrix construction.

Convention: ``second_moments[l]`` is the NON-centred second moment
``C_l = E[x x^T]`` of class ``l``, not its covariance. A Gaussian draw for
class ``l`` therefore has covariance ``C_l - m_l m_l^T``. Data matrices are
``p x n`` with one sample per column, classes stored contiguously.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from .exceptions import ContractError, EstimationError, InvalidMomentError
from .numerics import RngStream, as_matrix, sym_eig

PSD_RTOL = 1e-8


def _psd_factor(cov, name):
    """Square-root factor ``L`` with ``L L^T = cov``; rejects non-PSD input."""
    vals, vecs = np.linalg.eigh((cov + cov.T) / 2)
    scale = max(np.max(np.abs(vals)), 1.0) if vals.size else 1.0
    if vals.size and vals[0] < -PSD_RTOL * scale:
        raise InvalidMomentError(
            f"{name}: C - m m^T has eigenvalue {vals[0]:.3e} (not PSD)"
        )
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass
class MixtureModel:
    """First and second moments of a k-class mixture in dimension p.

    means : (p, k) array, column l is m_l
    second_moments : (k, p, p) array, C_l = E[x x^T] for class l
    class_counts : (k,) int array, n_l
    """

    means: np.ndarray
    second_moments: np.ndarray
    class_counts: np.ndarray

    def __post_init__(self):
        self.means = np.ascontiguousarray(as_matrix(self.means, "means"))
        self.second_moments = np.ascontiguousarray(self.second_moments, dtype=float)
        self.class_counts = np.asarray(self.class_counts, dtype=np.int64).reshape(-1)
        p, k = self.means.shape
        if self.second_moments.shape != (k, p, p):
            raise ContractError(
                f"second_moments must have shape {(k, p, p)}, "
                f"got {self.second_moments.shape}"
            )
        if self.class_counts.shape != (k,):
            raise ContractError(f"class_counts must have length {k}")
        if np.any(self.class_counts < 0):
            raise ContractError("class_counts must be non-negative")
        if not np.all(np.isfinite(self.second_moments)):
            raise ContractError("second_moments has non-finite entries")

    @classmethod
    def from_covariances(cls, means, covariances, class_counts):
        """Build from centred covariances by adding ``m m^T`` per class."""
        means = as_matrix(means, "means")
        covs = np.asarray(covariances, dtype=float)
        second = covs + np.einsum("pk,qk->kpq", means, means)
        return cls(means, second, class_counts)

    @property
    def p(self) -> int:
        return self.means.shape[0]

    @property
    def k(self) -> int:
        return self.means.shape[1]

    @property
    def n(self) -> int:
        return int(self.class_counts.sum())

    @property
    def c(self) -> float:
        """Dimension-to-sample ratio p / n."""
        return self.p / self.n

    @property
    def covariances(self) -> np.ndarray:
        outer = np.einsum("pk,qk->kpq", self.means, self.means)
        return np.ascontiguousarray(self.second_moments - outer)

    @cached_property
    def noise_factors(self) -> np.ndarray:
        """Per-class ``L_l`` with ``L_l L_l^T = C_l - m_l m_l^T`` (cached)."""
        covs = self.covariances
        return np.stack([_psd_factor(covs[l], f"class {l}") for l in range(self.k)])

    @property
    def balanced(self) -> bool:
        return bool(np.all(self.class_counts == self.class_counts[0]))

    @property
    def labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.k), self.class_counts)

    def validate(self, kappa_max: float | None = None, k_max: int | None = None):
        """Check symmetry, PSD-ness of C_l and C_l - m_l m_l^T and mean scale."""
        if k_max is not None and self.k > k_max:
            raise ContractError(f"k={self.k} exceeds configured maximum {k_max}")
        for l in range(self.k):
            C = self.second_moments[l]
            scale = max(np.max(np.abs(C)), 1.0)
            if np.max(np.abs(C - C.T)) > 1e-10 * scale:
                raise InvalidMomentError(f"class {l}: second moment not symmetric")
            vals = np.linalg.eigvalsh((C + C.T) / 2)
            if vals[0] < -PSD_RTOL * max(vals[-1], 1.0):
                raise InvalidMomentError(f"class {l}: second moment not PSD")
            _psd_factor(self.covariances[l], f"class {l}")
            if kappa_max is not None:
                norm = np.linalg.norm(self.means[:, l])
                if norm > kappa_max * np.sqrt(self.p) * (1 + 1e-12):
                    raise ContractError(
                        f"class {l}: ||m|| = {norm:.4g} exceeds "
                        f"kappa_max*sqrt(p) = {kappa_max * np.sqrt(self.p):.4g}"
                    )
        return self


@dataclass
class LabeledSample:
    """Data matrix (p x n) with class labels and the class means used to centre it."""

    data: np.ndarray
    labels: np.ndarray
    means: np.ndarray
    permutation: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.data = as_matrix(self.data, "data")
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.means = as_matrix(self.means, "means")
        if self.labels.shape[0] != self.data.shape[1]:
            raise ContractError(
                f"{self.labels.shape[0]} labels for {self.data.shape[1]} samples"
            )
        if self.means.shape[0] != self.data.shape[0]:
            raise ContractError("means and data disagree on dimension p")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.k):
            raise ContractError("labels must lie in [0, k)")

    @property
    def p(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    @property
    def k(self) -> int:
        return self.means.shape[1]

    @property
    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)

    @property
    def selectors(self) -> np.ndarray:
        """The n x k matrix J whose column l indicates class l."""
        J = np.zeros((self.n, self.k))
        J[np.arange(self.n), self.labels] = 1.0
        return J

    @property
    def centered(self) -> np.ndarray:
        """Z = X - M J^T."""
        return self.data - self.means[:, self.labels]


def sort_by_label(data, labels):
    """Stable-sort columns of ``data`` by label.

    Returns ``(data_sorted, labels_sorted, permutation)`` where
    ``data_sorted = data[:, permutation]``.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    perm = np.argsort(labels, kind="stable")
    return np.asarray(data)[:, perm], labels[perm], perm


def sample_gmm(model: MixtureModel, stream: RngStream) -> LabeledSample:
    """Draw a class-contiguous Gaussian sample with the model's moments.

    Class ``l`` uses substream ``l`` of ``stream``, so adding samples to one
    class leaves the draws of the other classes unchanged.
    """
    p = model.p
    blocks = []
    factors = model.noise_factors
    for l in range(model.k):
        n_l = int(model.class_counts[l])
        L = factors[l]
        noise = stream.substream(l).generator().standard_normal((p, n_l))
        blocks.append(model.means[:, [l]] + L @ noise)
    X = np.concatenate(blocks, axis=1) if blocks else np.zeros((p, 0))
    return LabeledSample(X, model.labels, model.means.copy())


def estimate_moments(sample: LabeledSample) -> MixtureModel:
    """Class means and non-centred second moments of a labelled sample.

    The centred part is symmetrised and its eigenvalues clipped at zero
    before ``m m^T`` is added back, so the result always satisfies the
    model invariants.
    """
    X, labels = sample.data, sample.labels
    k = sample.k
    p = X.shape[0]
    counts = np.bincount(labels, minlength=k)
    means = np.zeros((p, k))
    second = np.zeros((k, p, p))
    for l in range(k):
        if counts[l] == 0:
            raise EstimationError(f"class {l} is empty")
        if counts[l] < 2:
            raise EstimationError(f"class {l} has a single sample (need >= 2)")
        Xl = X[:, labels == l]
        m = Xl.mean(axis=1)
        D = Xl - m[:, None]
        S = D @ D.T / counts[l]
        S = (S + S.T) / 2
        vals, vecs = np.linalg.eigh(S)
        S = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        S = (S + S.T) / 2
        means[:, l] = m
        second[l] = S + np.outer(m, m)
    return MixtureModel(means, second, counts)


def gram(sample) -> np.ndarray:
    """G = X^T X / p for a :class:`LabeledSample` or a raw p x n array."""
    X = sample.data if isinstance(sample, LabeledSample) else as_matrix(sample, "X")
    p = X.shape[0]
    if p < 1:
        raise ContractError("gram needs p >= 1")
    G = X.T @ X / p
    return (G + G.T) / 2


def gram_decomposition(sample: LabeledSample):
    """Split G into ``(signal, noise, cross)``.

    signal = J M^T M J^T / p, noise = Z^T Z / p,
    cross = (J M^T Z + Z^T M J^T) / p.
    """
    p = sample.p
    J = sample.selectors
    M = sample.means
    Z = sample.centered
    MJ = M @ J.T  # p x n, column i is m_{label(i)}
    signal = MJ.T @ MJ / p
    noise = Z.T @ Z / p
    half = MJ.T @ Z / p
    cross = half + half.T
    return signal, noise, cross


@dataclass(frozen=True)
class EmpiricalSpectrum:
    """Uniform probability measure on a sorted eigenvalue array."""

    eigenvalues: np.ndarray

    def cdf(self, x):
        """Right-continuous empirical CDF evaluated at ``x``."""
        vals = self.eigenvalues
        return np.searchsorted(vals, np.asarray(x, dtype=float), side="right") / vals.size

    def __len__(self):
        return self.eigenvalues.size


def esd(g, zero_rtol: float = 1e-9) -> EmpiricalSpectrum:
    """Empirical spectral distribution of a symmetric (Gram) matrix.

    Eigenvalues within ``zero_rtol * max|lambda|`` of zero are set to
    exactly zero, so the rank-deficiency atom of a p < n Gram matrix is a
    true point mass instead of rounding noise.
    """
    vals = sym_eig(g, vectors=False)
    if vals.size:
        vals[np.abs(vals) <= zero_rtol * np.max(np.abs(vals))] = 0.0
    return EmpiricalSpectrum(np.sort(vals))


# -- factories used by configs ------------------------------------------------

def make_covariance(kind: str, p: int, stream: RngStream | None = None, **params):
    """Covariance factory.

    kinds: ``identity`` (scale ``s``), ``ramp`` (diagonal from ``lo`` to
    ``hi``), ``toeplitz`` (AR(``rho``): rho**|i-j|, scaled by ``s``),
    ``lowrank`` (``I + s V V^T`` with ``V`` a seeded p x ``r`` orthonormal
    frame).
    """
    if kind == "identity":
        return params.get("s", 1.0) * np.eye(p)
    if kind == "ramp":
        lo, hi = params.get("lo", 0.5), params.get("hi", 1.5)
        return np.diag(np.linspace(lo, hi, p))
    if kind == "toeplitz":
        rho = params.get("rho", 0.4)
        if not -1 < rho < 1:
            raise ContractError("toeplitz rho must lie in (-1, 1)")
        return params.get("s", 1.0) * scipy.linalg.toeplitz(rho ** np.arange(p))
    if kind == "lowrank":
        r, s = int(params.get("r", 2)), params.get("s", 4.0)
        stream = stream if stream is not None else RngStream(0, 0)
        V, _ = np.linalg.qr(stream.generator().standard_normal((p, r)))
        return np.eye(p) + s * V @ V.T
    raise ContractError(f"unknown covariance kind {kind!r}")


def orthogonal_means(p: int, k: int, kappa: float, stream: RngStream) -> np.ndarray:
    """``kappa * sqrt(p)`` times k orthonormal columns of a seeded rotation."""
    if k > p:
        raise ContractError("need k <= p for orthogonal means")
    Q, R = np.linalg.qr(stream.generator().standard_normal((p, k)))
    Q = Q * np.sign(np.diag(R))
    return kappa * np.sqrt(p) * Q


def balanced_counts(n: int, k: int) -> np.ndarray:
    base, extra = divmod(n, k)
    return np.array([base + (l < extra) for l in range(k)], dtype=np.int64)

