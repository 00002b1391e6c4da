"""Dense linear-algebra substrate and reproducible random streams.

Matrices are plain ``numpy.ndarray`` objects (2-D, C-contiguous, finite).
Randomness flows through :class:`RngStream`, an immutable token naming a
Philox4x64 counter-based generator keyed by ``(master_seed, stream_id)``.
Two tokens with the same key and counter always produce the same numbers,
and substreams are derived by hashing, so the order in which streams are
consumed never changes what any one of them yields.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .exceptions import ContractError, ConvergenceError

_U64 = 1 << 64


def as_matrix(a, name="matrix", dtype=float):
    """Validate ``a`` as a finite 2-D array and return it as ``dtype``."""
    arr = np.asarray(a, dtype=dtype)
    if arr.ndim != 2:
        raise ContractError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} has non-finite entries")
    return arr


@dataclass(frozen=True)
class RngStream:
    """Immutable handle on an independent random stream.

    ``counter`` counts Philox blocks already consumed; :meth:`advanced`
    returns a new token rather than mutating this one, so tokens can be
    passed between threads freely.
    """

    master_seed: int
    stream_id: int = 0
    counter: int = 0

    def __post_init__(self):
        object.__setattr__(self, "master_seed", int(self.master_seed) % _U64)
        object.__setattr__(self, "stream_id", int(self.stream_id) % _U64)
        if self.counter < 0:
            raise ContractError("counter must be non-negative")

    def generator(self) -> np.random.Generator:
        key = np.array([self.master_seed, self.stream_id], dtype=np.uint64)
        bitgen = np.random.Philox(key=key)
        if self.counter:
            bitgen = bitgen.advance(self.counter)
        return np.random.Generator(bitgen)

    def substream(self, index: int) -> "RngStream":
        """Child stream ``index`` of this stream (hash-derived id, counter 0)."""
        seq = np.random.SeedSequence(
            entropy=self.master_seed, spawn_key=(self.stream_id, int(index) % _U64)
        )
        child = int(seq.generate_state(1, dtype=np.uint64)[0])
        return RngStream(self.master_seed, child, 0)

    def advanced(self, blocks: int) -> "RngStream":
        return replace(self, counter=self.counter + int(blocks))


def gaussian_matrix(stream: RngStream, rows: int, cols: int) -> np.ndarray:
    """``rows x cols`` matrix of i.i.d. standard normal entries."""
    if rows < 1 or cols < 1:
        raise ContractError("rows and cols must be >= 1")
    return stream.generator().standard_normal((rows, cols))


def sym_eig(a, rtol: float = 1e-10, vectors: bool = True):
    """Eigendecomposition of a real symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending and the
    eigenvectors as orthonormal columns; with ``vectors=False`` only the
    eigenvalues.
    """
    a = as_matrix(a, "a")
    if a.shape[0] != a.shape[1]:
        raise ContractError(f"sym_eig needs a square matrix, got {a.shape}")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if scale > 0 and np.max(np.abs(a - a.T)) > rtol * scale:
        raise ContractError("sym_eig needs a symmetric matrix")
    # LAPACK syevd: Householder tridiagonalisation then divide and conquer.
    if not vectors:
        return np.linalg.eigvalsh(a)
    return np.linalg.eigh(a)


def spectral_norm(w) -> float:
    w = as_matrix(w, "w")
    if w.size == 0:
        return 0.0
    return float(np.linalg.norm(w, 2))


def frobenius_norm(w) -> float:
    w = as_matrix(w, "w")
    return float(np.linalg.norm(w, "fro")) if w.size else 0.0


def top_singular_triplet(w, tol: float = 1e-10, max_iter: int = 10_000,
                         start=None, seed: int = 0):
    """Largest singular value and vectors of ``w`` by power iteration.

    Iterates ``v <- W^T W v`` until ``||W^T u - sigma v|| <= tol * sigma``.
    The start vector is ``start`` when given (warm start), otherwise a
    Gaussian vector drawn from stream 0 of ``seed``. Returns
    ``(sigma1, u1, v1)``.

    Raises :class:`ConvergenceError` carrying the last iterate as
    ``(sigma, u, v)`` when ``max_iter`` is exhausted.
    """
    w = as_matrix(w, "w")
    if tol <= 0:
        raise ContractError("tol must be positive")
    if not np.any(w):
        raise ContractError("top_singular_triplet needs a nonzero matrix")
    rows, cols = w.shape
    if start is None:
        v = RngStream(seed, 0).generator().standard_normal(cols)
    else:
        v = np.asarray(start, dtype=float).reshape(cols).copy()
    nv = np.linalg.norm(v)
    if nv == 0:
        v = np.ones(cols)
        nv = np.sqrt(cols)
    v /= nv

    sigma, u = 0.0, np.zeros(rows)
    history = []
    for _ in range(max_iter):
        wu = w @ v
        s = np.linalg.norm(wu)
        if s == 0.0:
            # start vector in the null space: restart from a fixed direction
            v = np.ones(cols) / np.sqrt(cols) + np.arange(cols) / cols
            v /= np.linalg.norm(v)
            continue
        u = wu / s
        wtu = w.T @ u
        sigma = np.linalg.norm(wtu)
        resid = np.linalg.norm(wtu - sigma * v)
        v = wtu / sigma
        history.append(resid / sigma)
        if resid <= tol * sigma:
            u = w @ v
            sigma = np.linalg.norm(u)
            return float(sigma), u / sigma, v
    raise ConvergenceError(
        f"power iteration did not reach tol={tol} in {max_iter} iterations",
        last=(float(sigma), u, v), history=history,
    )


def leading_singular_values(w, count: int = 1) -> np.ndarray:
    """Top ``count`` singular values (descending) without vectors."""
    w = as_matrix(w, "w")
    small = min(w.shape)
    count = min(count, small)
    gram = w.T @ w if w.shape[1] <= w.shape[0] else w @ w.T
    vals = scipy.linalg.eigh(gram, eigvals_only=True, check_finite=False,
                             subset_by_index=[small - count, small - 1])
    return np.sqrt(np.clip(vals[::-1], 0.0, None))


def leading_singular_pairs(w, count: int = 2):
    """Top ``count`` singular triplets from a partial symmetric eigensolve.

    Solves for the largest eigenpairs of the smaller Gram matrix with
    LAPACK's subset driver; cheap for the ~100x100 matrices of the walk
    simulator where clustered top singular values stall power iteration.
    Returns ``(sigmas, U, V)`` with sigmas descending and
    ``sigmas[i] == U[:, i] @ w @ V[:, i]`` up to rounding.
    """
    w = as_matrix(w, "w")
    rows, cols = w.shape
    small = min(rows, cols)
    count = min(count, small)
    if cols <= rows:
        gram = w.T @ w
        _, vecs = scipy.linalg.eigh(gram, subset_by_index=[small - count, small - 1],
                                   check_finite=False)
        V = vecs[:, ::-1]
        WV = w @ V
        sig = np.linalg.norm(WV, axis=0)
        safe = np.where(sig > 0, sig, 1.0)
        U = WV / safe
    else:
        gram = w @ w.T
        _, vecs = scipy.linalg.eigh(gram, subset_by_index=[small - count, small - 1],
                                   check_finite=False)
        U = vecs[:, ::-1]
        WtU = w.T @ U
        sig = np.linalg.norm(WtU, axis=0)
        safe = np.where(sig > 0, sig, 1.0)
        V = WtU / safe
    return sig, U, V
