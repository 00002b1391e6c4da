"""Monte-Carlo experiments built on the sampling and equivalent modules.

The central experiment compares the Gram spectrum of Lipschitz-pushforward
data with that of a Gaussian mixture carrying the same class means and
second moments. Each trial owns a substream, and results are aggregated in
trial order, so reports depend on the seed only.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.stats import ks_2samp

from .equivalent import DensityCurve, DeviationResult, deviation
from .exceptions import ContractError
from .model import (EmpiricalSpectrum, LabeledSample, esd, estimate_moments,
                    gram, sample_gmm)
from .numerics import RngStream, as_matrix
from .pushforward import LipschitzNetwork, sample_pushforward


def _values(spectrum):
    if isinstance(spectrum, EmpiricalSpectrum):
        return spectrum.eigenvalues
    return np.asarray(spectrum, dtype=float).reshape(-1)


def ks_distance(esd_a, esd_b) -> float:
    """Sup-norm distance between the empirical CDFs of two spectra."""
    a, b = _values(esd_a), _values(esd_b)
    if a.size == 0 or b.size == 0:
        raise ContractError("ks_distance needs two non-empty spectra")
    with warnings.catch_warnings():
        # only the statistic is used; the p-value warns on one-point samples
        warnings.simplefilter("ignore", RuntimeWarning)
        return float(ks_2samp(a, b, method="asymp").statistic)


def esd_theory_distance(spectrum, curve: DensityCurve) -> float:
    """Kolmogorov distance between an ESD and a limiting density curve.

    The theoretical CDF is the running trapezoid integral of the density
    plus the atom at zero; it is evaluated at the sample eigenvalues.
    """
    vals = np.sort(_values(spectrum))
    grid, rho = curve.grid, curve.density
    steps = np.diff(grid) * (rho[1:] + rho[:-1]) / 2
    cont = np.concatenate([[0.0], np.cumsum(steps)])

    def cdf(x, left=False):
        c = np.interp(x, grid, cont, left=0.0, right=cont[-1])
        hit = (x > 0) if left else (x >= 0)
        return c + curve.atom_at_zero * hit

    n = vals.size
    # compare both one-sided limits so tied eigenvalues (the atom) count once
    emp_right = np.searchsorted(vals, vals, side="right") / n
    emp_left = np.searchsorted(vals, vals, side="left") / n
    gap_right = np.abs(emp_right - cdf(vals))
    gap_left = np.abs(emp_left - cdf(vals, left=True))
    return float(max(gap_right.max(), gap_left.max()))


# -- eigenvectors -------------------------------------------------------------

def fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so each one's largest-magnitude entry is positive."""
    v = np.array(vectors, dtype=float, copy=True)
    if v.ndim == 1:
        v = v[:, None]
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


def top_eigvecs(g, count: int = 2):
    """Leading ``count`` eigenpairs of a symmetric matrix, sign-fixed.

    Returns ``(eigenvalues descending, n x count vectors)``.
    """
    g = as_matrix(g, "g")
    n = g.shape[0]
    count = min(count, n)
    vals, vecs = scipy.linalg.eigh((g + g.T) / 2, subset_by_index=[n - count, n - 1],
                                   check_finite=False)
    return vals[::-1], fix_signs(vecs[:, ::-1])


def class_alignment(vectors, labels, k=None) -> np.ndarray:
    """``k x m`` matrix with entries ``(1/sqrt(n_l)) * j_l^T u_j``."""
    vectors = np.asarray(vectors, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    k = int(labels.max()) + 1 if k is None else k
    out = np.zeros((k, vectors.shape[1]))
    for l in range(k):
        sel = labels == l
        if sel.any():
            out[l] = vectors[sel].sum(axis=0) / np.sqrt(sel.sum())
    return out


def orient_alignment(alignment) -> np.ndarray:
    """Fix the global sign of each alignment column by a class anchor.

    An eigenvector is defined up to sign, and the coordinate-based sign of
    :func:`fix_signs` is unrelated to the classes, so alignments of two
    datasets are compared after this orientation: each column is flipped so
    that its first entry with magnitude at least half the column maximum is
    positive. The relative signs between classes are what remain comparable.
    """
    a = np.array(alignment, dtype=float, copy=True)
    for j in range(a.shape[1]):
        col = np.abs(a[:, j])
        if col.max() == 0:
            continue
        anchor = int(np.flatnonzero(col >= 0.5 * col.max())[0])
        if a[anchor, j] < 0:
            a[:, j] = -a[:, j]
    return a


@dataclass
class EigenspaceExport:
    """Rows for ``scatter.csv`` and an eigenvalue histogram."""

    index: np.ndarray
    labels: np.ndarray
    u: np.ndarray
    eigenvalues: np.ndarray
    hist_counts: np.ndarray
    hist_edges: np.ndarray

    def scatter_rows(self):
        for i, l, (a, b) in zip(self.index, self.labels, self.u):
            yield int(i), int(l), float(a), float(b)

    def histogram_rows(self):
        for lo, hi, c in zip(self.hist_edges[:-1], self.hist_edges[1:], self.hist_counts):
            yield float(lo), float(hi), int(c)


def eigenspace_export(g, labels, bins: int = 50) -> EigenspaceExport:
    """Top-2 sign-fixed eigenvectors of ``g`` plus an eigenvalue histogram.

    A degenerate spectrum (all eigenvalues equal) gives one bin.
    """
    g = as_matrix(g, "g")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = g.shape[0]
    if n < 2:
        raise ContractError("eigenspace_export needs n >= 2")
    if labels.size != n:
        raise ContractError(f"{labels.size} labels for an {n} x {n} matrix")
    if bins < 1:
        raise ContractError("bins must be >= 1")
    vals = esd(g).eigenvalues
    _, u = top_eigvecs(g, 2)
    lo, hi = float(vals[0]), float(vals[-1])
    if hi - lo <= 1e-12 * max(1.0, abs(hi)):
        counts, edges = np.array([n]), np.array([lo, hi])
    else:
        counts, edges = np.histogram(vals, bins=bins, range=(lo, hi))
    return EigenspaceExport(np.arange(n), labels, u, vals, counts, edges)


# -- universality -------------------------------------------------------------

@dataclass
class SpectralReport:
    """Pushforward (``a``) against moment-matched GMM (``b``).

    ``ks_distance`` and ``baseline_ks`` are medians over trials of
    KS(pushforward, GMM) and of KS between two independent GMM draws.
    Eigenvectors, alignments and spectra are those of trial 0; the
    alignment comparisons orient each column with :func:`orient_alignment`.
    """

    esd_a: np.ndarray
    esd_b: np.ndarray
    ks_distance: float
    baseline_ks: float
    ks_trials: np.ndarray
    baseline_trials: np.ndarray
    top_eigvecs_a: np.ndarray
    top_eigvecs_b: np.ndarray
    alignment_a: np.ndarray
    alignment_b: np.ndarray
    labels: np.ndarray
    lipschitz_bound: float
    seeds: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    @property
    def ks_ratio(self) -> float:
        return self.ks_distance / self.baseline_ks if self.baseline_ks > 0 else np.inf

    def _top_pair(self):
        a = orient_alignment(self.alignment_a[:, :1])[:, 0]
        b = orient_alignment(self.alignment_b[:, :1])[:, 0]
        return a, b

    @property
    def top_alignment_gap(self) -> float:
        """Largest |difference| between the oriented top-eigenvector alignments."""
        a, b = self._top_pair()
        return float(np.max(np.abs(a - b)))

    @property
    def top_alignment_signs_agree(self) -> bool:
        """Whether the oriented top alignments share their sign pattern."""
        a, b = self._top_pair()
        return bool(np.all(np.sign(np.round(a, 12)) == np.sign(np.round(b, 12))))

    def summary(self) -> dict:
        return {
            "ks_distance": self.ks_distance,
            "baseline_ks": self.baseline_ks,
            "ks_ratio": self.ks_ratio,
            "ks_trials": self.ks_trials.tolist(),
            "baseline_trials": self.baseline_trials.tolist(),
            "alignment_a": self.alignment_a.tolist(),
            "alignment_b": self.alignment_b.tolist(),
            "top_alignment_gap": self.top_alignment_gap,
            "top_alignment_signs_agree": self.top_alignment_signs_agree,
            "lipschitz_bound": self.lipschitz_bound,
        }


def compare_with_gmm(sample: LabeledSample, trials: int, stream: RngStream,
                     lipschitz: float = float("nan"),
                     draw=None) -> SpectralReport:
    """Compare a labelled sample's Gram spectrum with moment-matched GMMs.

    ``draw(t, substream)`` returns the data sample of trial ``t``; by
    default ``sample`` is reused. Moments are re-estimated on every trial's
    data. Substream ``t`` of ``stream`` holds trial ``t``.
    """
    if trials < 1:
        raise ContractError("trials must be >= 1")
    ks, base = [], []
    first = None
    t0 = time.perf_counter()
    for t in range(trials):
        sub = stream.substream(t)
        data = sample if draw is None else draw(t, sub.substream(0))
        model = estimate_moments(data)
        gmm_a = sample_gmm(model, sub.substream(1))
        # the baseline reruns the same pipeline with GMM data in place of
        # the pushforward: estimate moments of gmm_a and draw again
        gmm_b = sample_gmm(estimate_moments(gmm_a), sub.substream(2))
        g_data, g_gmm = gram(data), gram(gmm_a)
        e_data, e_gmm = esd(g_data), esd(g_gmm)
        ks.append(ks_distance(e_data, e_gmm))
        base.append(ks_distance(e_gmm, esd(gram(gmm_b))))
        if t == 0:
            _, u_a = top_eigvecs(g_data)
            _, u_b = top_eigvecs(g_gmm)
            first = (e_data.eigenvalues, e_gmm.eigenvalues, u_a, u_b,
                     class_alignment(u_a, data.labels, data.k),
                     class_alignment(u_b, gmm_a.labels, data.k), data.labels)
    elapsed = time.perf_counter() - t0
    ks, base = np.array(ks), np.array(base)
    return SpectralReport(
        esd_a=first[0], esd_b=first[1],
        ks_distance=float(np.median(ks)), baseline_ks=float(np.median(base)),
        ks_trials=ks, baseline_trials=base,
        top_eigvecs_a=first[2], top_eigvecs_b=first[3],
        alignment_a=first[4], alignment_b=first[5], labels=first[6],
        lipschitz_bound=float(lipschitz),
        seeds={"master_seed": stream.master_seed, "stream_id": stream.stream_id,
               "trials": trials},
        timing={"seconds": elapsed},
    )


def sample_network(net: LipschitzNetwork, n_per_class, stream: RngStream) -> LabeledSample:
    """Class-contiguous pushforward sample; class ``l`` uses substream ``l``."""
    k = net.k or 1
    counts = np.broadcast_to(np.asarray(n_per_class, dtype=np.int64), (k,))
    blocks = [sample_pushforward(net, l if net.k else None, int(counts[l]),
                                 stream.substream(l)) for l in range(k)]
    X = np.concatenate(blocks, axis=1)
    labels = np.repeat(np.arange(k), counts)
    means = np.stack([b.mean(axis=1) for b in blocks], axis=1)
    return LabeledSample(X, labels, means)


def universality_experiment(net: LipschitzNetwork, n_per_class, trials: int,
                            stream: RngStream) -> SpectralReport:
    """Pushforward Gram spectrum against moment-matched GMM spectra.

    Each trial draws fresh pushforward data, estimates its class moments,
    and draws two GMM samples of the same shape: one to compare with the
    data and one for the GMM-vs-GMM baseline.
    """
    return compare_with_gmm(
        None, trials, stream, lipschitz=net.lipschitz_bound(),
        draw=lambda t, sub: sample_network(net, n_per_class, sub),
    )


# -- deviation ----------------------------------------------------------------

def deviation_study(model_factory, z: float, p_list, trials: int,
                    stream: RngStream, omega: str = "hadamard") -> DeviationResult:
    """:func:`equivalent.deviation` plus CSV-ready rows (see :func:`deviation_rows`)."""
    if trials < 1:
        raise ContractError("trials must be >= 1")
    return deviation(model_factory, z, list(p_list), trials, stream, omega)


def deviation_rows(result: DeviationResult):
    for p, d in zip(result.p_values, result.deviations):
        yield int(p), float(d), int(result.trials)


__all__ = [
    "ks_distance", "esd_theory_distance", "fix_signs", "top_eigvecs",
    "class_alignment", "orient_alignment", "EigenspaceExport", "eigenspace_export", "SpectralReport",
    "compare_with_gmm", "sample_network", "universality_experiment",
    "deviation_study", "deviation_rows",
]
