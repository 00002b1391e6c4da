"""scikit-learn style wrappers.

These follow the scikit-learn orientation (``X`` is ``n_samples x
n_features``) and transpose internally to the package's ``p x n``
convention. Hyper-parameters are plain constructor arguments so
``get_params``/``set_params``/``clone`` work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import equivalent as eq
from . import pushforward as pf
from .lab import top_eigvecs
from .model import LabeledSample, estimate_moments, gram, sample_gmm, sort_by_label
from .numerics import RngStream


def _labeled(X, y):
    X, y = check_X_y(X, y, dtype=float, ensure_min_samples=2)
    classes, codes = np.unique(y, return_inverse=True)
    data, labels, perm = sort_by_label(X.T, codes)
    k = classes.size
    means = np.stack([data[:, labels == l].mean(axis=1) for l in range(k)], axis=1)
    return LabeledSample(data, labels, means, perm), classes


class GaussianMixtureSurrogate(BaseEstimator):
    """Class means and second moments of labelled data, with a GMM sampler.

    After ``fit`` the estimated :class:`~concgram.model.MixtureModel` is
    available as ``model_``.
    """

    def __init__(self, seed=0):
        self.seed = seed

    def fit(self, X, y):
        sample, self.classes_ = _labeled(X, y)
        self.model_ = estimate_moments(sample)
        self.n_features_in_ = sample.p
        return self

    def sample(self, stream_index=0):
        """Draw a GMM sample of the fitted shape; returns ``(X, y)``."""
        check_is_fitted(self, "model_")
        s = sample_gmm(self.model_, RngStream(self.seed, 0).substream(stream_index))
        return s.data.T.copy(), self.classes_[s.labels]


class DeterministicEquivalent(BaseEstimator):
    """Deterministic equivalent of the Gram resolvent of labelled data.

    ``fit`` estimates class moments; the fitted object then answers
    questions about the limiting spectrum of ``G = X X^T / p`` (sklearn
    orientation), such as the fixed point, density, and class projection
    of the equivalent resolvent.
    """

    def __init__(self, omega="hadamard", weighting="counts", tol=None):
        self.omega = omega
        self.weighting = weighting
        self.tol = tol

    def fit(self, X, y):
        sample, self.classes_ = _labeled(X, y)
        self.model_ = estimate_moments(sample)
        self.n_features_in_ = sample.p
        return self

    def solve(self, z):
        check_is_fitted(self, "model_")
        return eq.solve_delta(self.model_, z, tol=self.tol, weighting=self.weighting)

    def resolvent(self, z):
        """The equivalent resolvent at real ``z > 0`` or complex ``z``."""
        return eq.rtilde(self.model_, self.solve(z), self.omega)

    def density(self, x_grid, eps=None):
        check_is_fitted(self, "model_")
        return eq.density(self.model_, x_grid, eps=eps, omega=self.omega,
                          weighting=self.weighting)

    def predict(self, x_grid):
        """Limiting spectral density evaluated on ``x_grid``."""
        return self.density(np.asarray(x_grid, dtype=float)).density

    def subspace(self, interval, quadrature_points=64):
        check_is_fitted(self, "model_")
        return eq.subspace_stats(self.model_, interval, quadrature_points,
                                 omega=self.omega, weighting=self.weighting)


class GramEigenspace(TransformerMixin, BaseEstimator):
    """Leading eigenvectors of ``G = X X^T / n_features`` as an embedding.

    The embedding is transductive: ``transform`` accepts only the training
    matrix (checked by shape) and returns its ``n_samples x n_components``
    sign-fixed eigenvector coordinates.
    """

    def __init__(self, n_components=2):
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_array(X, dtype=float, ensure_min_samples=2)
        self.n_features_in_ = X.shape[1]
        self.eigenvalues_, self.embedding_ = top_eigvecs(gram(X.T), self.n_components)
        self._n_samples = X.shape[0]
        return self

    def transform(self, X):
        check_is_fitted(self, "embedding_")
        X = check_array(X, dtype=float)
        if X.shape[0] != self._n_samples or X.shape[1] != self.n_features_in_:
            raise ValueError("GramEigenspace.transform only embeds the training matrix")
        return self.embedding_.copy()


class LipschitzPushforward(TransformerMixin, BaseEstimator):
    """Random spectrally normalised relu network applied to each row.

    ``fit`` builds the network for ``n_features_in_`` inputs from ``seed``;
    ``transform`` maps rows through it. ``lipschitz_bound_`` is the
    certified constant of the built network.
    """

    def __init__(self, widths=(64, 64), output_dim=None, sigma_star=1.0,
                 residual=False, seed=0):
        self.widths = widths
        self.output_dim = output_dim
        self.sigma_star = sigma_star
        self.residual = residual
        self.seed = seed

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.n_features_in_ = X.shape[1]
        self.network_ = pf.random_network(
            X.shape[1], list(self.widths), RngStream(self.seed, 0),
            sigma_star=self.sigma_star, output_dim=self.output_dim,
            residual=self.residual,
        )
        self.lipschitz_bound_ = self.network_.lipschitz_bound()
        return self

    def transform(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.network_.forward(X.T).T
