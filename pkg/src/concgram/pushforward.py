"""Lipschitz pushforwards of Gaussian noise.

A :class:`LipschitzNetwork` maps ``z ~ N(0, I_d)`` through a stack of
layers (affine, relu, residual, frozen-statistics rescale) and optionally a
per-class affine head. Every layer exposes a certified Lipschitz constant
and the network bound is their product. Arrays follow the package-wide
convention of one sample per column.

The truncated spectral normalization ``W - max(0, s1 - s*) u1 v1^T`` lives
here as well, since both the random-network factory and the walk simulator
use it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .exceptions import ContractError, StructureError
from .numerics import (RngStream, as_matrix, leading_singular_pairs,
                       spectral_norm, top_singular_triplet)

#: number of columns drawn from one substream by :func:`sample_pushforward`
COLUMN_BLOCK = 256


# -- layers ------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Affine:
    """``x -> W x + b``; Lipschitz constant ``sigma_1(W)``."""

    weight: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        w = as_matrix(self.weight, "affine weight")
        object.__setattr__(self, "weight", np.ascontiguousarray(w))
        if self.bias is not None:
            b = np.asarray(self.bias, dtype=float).reshape(-1)
            if b.shape[0] != w.shape[0]:
                raise StructureError(
                    f"affine bias has length {b.shape[0]}, expected {w.shape[0]}"
                )
            if not np.all(np.isfinite(b)):
                raise ContractError("affine bias has non-finite entries")
            object.__setattr__(self, "bias", b)

    kind = "affine"

    @property
    def in_dim(self):
        return self.weight.shape[1]

    @property
    def out_dim(self):
        return self.weight.shape[0]

    def __call__(self, x):
        y = self.weight @ x
        if self.bias is not None:
            y = y + self.bias[:, None]
        return y

    def lipschitz(self) -> float:
        return spectral_norm(self.weight)


@dataclass(frozen=True, eq=False)
class ReLU:
    """Entrywise ``max(x, 0)``; 1-Lipschitz and shape preserving."""

    kind = "relu"
    in_dim = None
    out_dim = None

    def __call__(self, x):
        return np.maximum(x, 0.0)

    def lipschitz(self) -> float:
        return 1.0


@dataclass(frozen=True, eq=False)
class Rescale:
    """Batch-norm with frozen statistics: ``x -> a * (x - mu) / s``."""

    a: np.ndarray
    mu: float = 0.0
    s: float = 1.0

    kind = "rescale"

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(-1)
        if not np.all(np.isfinite(a)):
            raise ContractError("rescale gain has non-finite entries")
        if not self.s > 0:
            raise ContractError(f"rescale needs s > 0, got {self.s}")
        object.__setattr__(self, "a", a)

    @property
    def in_dim(self):
        return self.a.shape[0]

    @property
    def out_dim(self):
        return self.a.shape[0]

    def __call__(self, x):
        return self.a[:, None] * (x - self.mu) / self.s

    def lipschitz(self) -> float:
        return float(np.max(np.abs(self.a)) / self.s) if self.a.size else 0.0


@dataclass(frozen=True, eq=False)
class Residual:
    """``x -> x + F(x)`` with ``F`` a dimension-preserving layer chain."""

    inner: tuple = field(default_factory=tuple)

    kind = "residual"

    def __post_init__(self):
        inner = tuple(self.inner)
        object.__setattr__(self, "inner", inner)
        dim = _chain_dims(inner, None)
        first = next((l.in_dim for l in inner if l.in_dim is not None), None)
        if first is not None and dim is not None and first != dim:
            raise StructureError(
                f"residual branch maps {first} -> {dim}; it must preserve dimension"
            )

    @property
    def in_dim(self):
        return next((l.in_dim for l in self.inner if l.in_dim is not None), None)

    @property
    def out_dim(self):
        return self.in_dim

    def __call__(self, x):
        y = x
        for layer in self.inner:
            y = layer(y)
        return x + y

    def lipschitz(self) -> float:
        return 1.0 + float(np.prod([l.lipschitz() for l in self.inner]))


def _chain_dims(layers, dim):
    """Propagate dimensions through ``layers``; ``None`` means "unknown yet"."""
    for i, layer in enumerate(layers):
        if layer.in_dim is not None:
            if dim is not None and layer.in_dim != dim:
                raise StructureError(
                    f"layer {i} ({layer.kind}) expects input dim {layer.in_dim}, "
                    f"receives {dim}"
                )
            dim = layer.out_dim
    return dim


# -- network -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LipschitzNetwork:
    """A shared trunk of layers plus optional per-class affine heads."""

    input_dim: int
    layers: tuple = field(default_factory=tuple)
    heads: tuple | None = None

    def __post_init__(self):
        if int(self.input_dim) < 1:
            raise StructureError("input_dim must be >= 1")
        object.__setattr__(self, "input_dim", int(self.input_dim))
        object.__setattr__(self, "layers", tuple(self.layers))
        trunk = _chain_dims(self.layers, self.input_dim)
        if self.heads is not None:
            heads = tuple(self.heads)
            if not heads:
                raise StructureError("heads, when given, must be non-empty")
            out = {h.out_dim for h in heads}
            for h in heads:
                if not isinstance(h, Affine):
                    raise StructureError("class heads must be affine layers")
                _chain_dims([h], trunk)
            if len(out) != 1:
                raise StructureError("all class heads must share one output dim")
            object.__setattr__(self, "heads", heads)
        bound = self.lipschitz_bound()
        if not np.isfinite(bound):
            raise StructureError("network Lipschitz bound is not finite")

    @property
    def trunk_dim(self) -> int:
        return _chain_dims(self.layers, self.input_dim)

    @property
    def output_dim(self) -> int:
        if self.heads is not None:
            return self.heads[0].out_dim
        return self.trunk_dim

    @property
    def k(self) -> int | None:
        return None if self.heads is None else len(self.heads)

    def forward(self, z, cls=None):
        """Apply the network to the columns of ``z`` (``d x n``)."""
        z = np.asarray(z, dtype=float)
        if z.ndim != 2 or z.shape[0] != self.input_dim:
            raise StructureError(
                f"input must be {self.input_dim} x n, got shape {z.shape}"
            )
        y = z
        for layer in self.layers:
            y = layer(y)
        if self.heads is not None:
            y = self.heads[self._check_class(cls)](y)
        return y

    __call__ = forward

    def _check_class(self, cls):
        if self.heads is None:
            return None
        if cls is None or not 0 <= int(cls) < len(self.heads):
            raise ContractError(f"class index must lie in [0, {len(self.heads)})")
        return int(cls)

    def lipschitz_bound(self, cls=None) -> float:
        """Product of per-layer constants (the worst head when ``cls`` is None)."""
        trunk = float(np.prod([l.lipschitz() for l in self.layers]))
        if self.heads is None:
            return trunk
        if cls is None:
            return trunk * max(h.lipschitz() for h in self.heads)
        return trunk * self.heads[self._check_class(cls)].lipschitz()

    def scaled(self, factor: float) -> "LipschitzNetwork":
        """Same network followed by multiplication by ``factor``."""
        dim = self.output_dim
        if self.heads is None:
            return LipschitzNetwork(self.input_dim,
                                    self.layers + (Affine(factor * np.eye(dim)),))
        heads = tuple(Affine(factor * h.weight,
                             None if h.bias is None else factor * h.bias)
                      for h in self.heads)
        return LipschitzNetwork(self.input_dim, self.layers, heads)


def lipschitz_bound(net: LipschitzNetwork, cls=None) -> float:
    """Certified Lipschitz constant of ``net`` (see :meth:`LipschitzNetwork.lipschitz_bound`)."""
    return net.lipschitz_bound(cls)


def identity_network(dim: int) -> LipschitzNetwork:
    return LipschitzNetwork(dim, ())


# -- spectral normalization --------------------------------------------------

def spectral_normalize(w, sigma_star: float, *, method: str = "power",
                       tol: float = 1e-10, max_iter: int = 10_000, start=None,
                       triplet=None):
    """Cap the top singular value of ``w`` at ``sigma_star``.

    Returns ``W - max(0, s1 - sigma_star) u1 v1^T``. Only the leading
    singular pair is touched, so when ``s1 > sigma_star`` the result has
    top singular value ``max(sigma_star, s2)``.

    ``method="power"`` uses power iteration (convergence failures
    propagate); ``method="eigh"`` uses a partial symmetric eigensolve,
    which is robust when the top singular values are clustered. A
    precomputed leading triplet ``(s1, u1, v1)`` may be passed as
    ``triplet`` to skip the solve.
    """
    if not sigma_star > 0:
        raise ContractError(f"sigma_star must be positive, got {sigma_star}")
    w = as_matrix(w, "w")
    if not np.any(w):
        return w.copy()
    if triplet is not None:
        s1, u, v = triplet
    elif method == "power":
        s1, u, v = top_singular_triplet(w, tol=tol, max_iter=max_iter, start=start)
    elif method == "eigh":
        sig, U, V = leading_singular_pairs(w, 1)
        s1, u, v = float(sig[0]), U[:, 0], V[:, 0]
    else:
        raise ContractError(f"unknown method {method!r}")
    cut = max(0.0, s1 - sigma_star)
    if cut == 0.0:
        return w.copy()
    return w - cut * np.outer(u, v)


# -- factories ---------------------------------------------------------------

def random_affine(in_dim, out_dim, stream: RngStream, sigma_star=None,
                  bias_scale: float = 0.0) -> Affine:
    """Affine layer with N(0, 1/in_dim) weights, optionally spectrally normalized."""
    gen = stream.generator()
    w = gen.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)
    if sigma_star is not None:
        w = spectral_normalize(w, sigma_star, method="eigh")
    b = bias_scale * gen.standard_normal(out_dim) if bias_scale else None
    return Affine(w, b)


def random_network(input_dim: int, widths, stream: RngStream, *,
                   sigma_star: float | None = 1.0, heads: int | None = None,
                   output_dim: int | None = None, residual: bool = False,
                   bias_scale: float = 0.0) -> LipschitzNetwork:
    """Random relu network ``affine -> relu -> ... -> [head]``.

    ``widths`` lists the hidden widths; with ``heads=k`` each class gets its
    own affine head onto ``output_dim``. ``residual=True`` wraps every
    square hidden affine+relu pair in a residual block. Layer ``i`` draws
    from substream ``i`` and head ``l`` from substream ``1000 + l``.
    """
    layers = []
    dim = int(input_dim)
    for i, width in enumerate(widths):
        width = int(width)
        aff = random_affine(dim, width, stream.substream(i), sigma_star, bias_scale)
        if residual and width == dim:
            layers.append(Residual((aff, ReLU())))
        else:
            layers.extend([aff, ReLU()])
        dim = width
    head_layers = None
    if heads is not None:
        if output_dim is None:
            raise ContractError("output_dim is required with heads")
        head_layers = tuple(
            random_affine(dim, int(output_dim), stream.substream(1000 + l),
                          sigma_star, bias_scale)
            for l in range(int(heads))
        )
    elif output_dim is not None:
        layers.append(random_affine(dim, int(output_dim), stream.substream(1000),
                                    sigma_star, bias_scale))
    return LipschitzNetwork(int(input_dim), tuple(layers), head_layers)


# -- sampling ----------------------------------------------------------------

def latent_columns(dim: int, count: int, stream: RngStream) -> np.ndarray:
    """``dim x count`` standard normal inputs.

    Columns are drawn in blocks of :data:`COLUMN_BLOCK`, block ``b`` from
    substream ``b``; column ``j`` is therefore the same vector for every
    ``count > j``.
    """
    out = np.empty((dim, count))
    for b, start in enumerate(range(0, count, COLUMN_BLOCK)):
        stop = min(start + COLUMN_BLOCK, count)
        rows = stream.substream(b).generator().standard_normal((COLUMN_BLOCK, dim))
        out[:, start:stop] = rows[: stop - start].T
    return out


def sample_pushforward(net: LipschitzNetwork, cls, count: int,
                       stream: RngStream) -> np.ndarray:
    """``output_dim x count`` matrix of ``net(z)`` for i.i.d. ``z ~ N(0, I)``."""
    if count < 0:
        raise ContractError("count must be non-negative")
    net._check_class(cls)
    if count == 0:
        return np.zeros((net.output_dim, 0))
    return net.forward(latent_columns(net.input_dim, count, stream), cls)


def empirical_lipschitz(net: LipschitzNetwork, pairs: int, stream: RngStream,
                        cls=None, scale: float = 1.0) -> float:
    """Largest ``|net(x)-net(y)| / |x-y|`` over random Gaussian pairs."""
    gen = stream.generator()
    x = scale * gen.standard_normal((net.input_dim, pairs))
    y = x + gen.standard_normal((net.input_dim, pairs)) * gen.uniform(
        1e-3, 1.0, size=pairs) * scale
    num = np.linalg.norm(net.forward(x, cls) - net.forward(y, cls), axis=0)
    den = np.linalg.norm(x - y, axis=0)
    return float(np.max(num / den))


# -- concentration probe -----------------------------------------------------

@dataclass
class ConcentrationReport:
    """Tail statistics of linear observations of a pushforward.

    ``sigma_hat`` and ``r2`` come from the least-squares fit
    ``log P(t) = log C - (t / sigma)^2``; ``q_hat`` and ``sigma_free`` from
    the same model with a free exponent.
    """

    t: np.ndarray
    exceedance: np.ndarray
    fit_mask: np.ndarray
    sigma_hat: float
    log_c: float
    r2: float
    q_hat: float
    sigma_free: float
    lipschitz_bound: float
    std: float
    trials: int
    directions: int
    p: int

    @property
    def bound_ratio(self) -> float:
        """``sigma_hat / lipschitz_bound``: the fitted constant ``C_fit``."""
        return self.sigma_hat / self.lipschitz_bound if self.lipschitz_bound else np.inf

    def exceedance_at(self, t: float) -> float:
        idx = np.flatnonzero(np.isclose(self.t, t))
        if idx.size == 0:
            raise ContractError(f"t={t} is not on the probe grid")
        return float(self.exceedance[idx[0]])


def _unit_directions(p, count, stream):
    u = stream.generator().standard_normal((p, count))
    return u / np.linalg.norm(u, axis=0)


def _pooled_exceedance(dev, t):
    """Mean over rows of the fraction of entries strictly above each ``t``."""
    srt = np.sort(dev, axis=1)
    counts = dev.shape[1] - np.stack(
        [np.searchsorted(row, t, side="right") for row in srt])
    return counts.mean(axis=0) / dev.shape[1]


def concentration_probe(net: LipschitzNetwork, trials: int, directions,
                        stream: RngStream, *, cls=None, t_grid=None,
                        min_count: int = 20) -> ConcentrationReport:
    """Empirical tail of ``f(x) = u^T x`` for unit vectors ``u``.

    ``directions`` is either a count of random unit directions or an explicit
    ``p x m`` matrix whose columns are normalised. The exceedance curve
    ``P(|f - mean f| > t)`` is averaged over directions. Without ``t_grid``
    the grid spans 0.5 to 4 pooled standard deviations. Only grid points
    with at least ``min_count`` exceedances and ``P <= 0.5`` enter the fits.
    """
    if trials < 1000:
        raise ContractError("concentration_probe needs trials >= 1000")
    p = net.output_dim
    if np.ndim(directions) == 0:
        m = int(directions)
        if m < 1:
            raise ContractError("need at least one direction")
        U = _unit_directions(p, m, stream.substream(1))
    else:
        U = as_matrix(directions, "directions")
        if U.shape[0] != p:
            raise ContractError(f"directions must have {p} rows")
        U = U / np.linalg.norm(U, axis=0)
    x = sample_pushforward(net, cls, trials, stream.substream(0))
    f = U.T @ x
    f -= f.mean(axis=1, keepdims=True)
    dev = np.abs(f)
    scales = np.sqrt(np.mean(f ** 2, axis=1))
    std = float(np.sqrt(np.mean(scales ** 2)))
    if t_grid is None:
        t = std * np.linspace(0.5, 4.0, 15)
    else:
        t = np.asarray(t_grid, dtype=float).reshape(-1)
    exceed = _pooled_exceedance(dev, t)
    # Fits use deviations standardised per direction, so observations with
    # different variances do not blend into an artificially heavy tail; the
    # fitted scale is mapped back through the pooled standard deviation.
    safe = np.where(scales > 0, scales, 1.0)
    std_exceed = _pooled_exceedance(dev / safe[:, None] * std, t)
    mask = (std_exceed * trials >= min_count) & (std_exceed <= 0.5) & (t > 0)

    sigma_hat = log_c = r2 = q_hat = sigma_free = np.nan
    if mask.sum() >= 3:
        tt, lp = t[mask], np.log(std_exceed[mask])
        slope, log_c = np.polyfit(tt ** 2, lp, 1)
        if slope < 0:
            sigma_hat = float(1.0 / np.sqrt(-slope))
            resid = lp - (log_c + slope * tt ** 2)
            ss = np.sum((lp - lp.mean()) ** 2)
            r2 = float(1 - np.sum(resid ** 2) / ss) if ss > 0 else 1.0
            try:
                with warnings.catch_warnings():
                    # parameter covariance is unused; 3-point fits cannot estimate it
                    warnings.simplefilter("ignore", OptimizeWarning)
                    (_, sigma_free, q_hat), _ = curve_fit(
                        lambda s, a, sig, q: a - (s / sig) ** q, tt, lp,
                        p0=[log_c, sigma_hat, 2.0],
                        bounds=([-np.inf, 1e-12, 0.2], [np.inf, np.inf, 10.0]),
                    )
            except (RuntimeError, ValueError):
                pass
    return ConcentrationReport(
        t=t, exceedance=exceed, fit_mask=mask, sigma_hat=float(sigma_hat),
        log_c=float(log_c), r2=float(r2), q_hat=float(q_hat),
        sigma_free=float(sigma_free), lipschitz_bound=net.lipschitz_bound(cls),
        std=std, trials=int(trials), directions=U.shape[1], p=p,
    )


__all__ = [
    "Affine", "ReLU", "Rescale", "Residual", "LipschitzNetwork",
    "lipschitz_bound", "identity_network", "spectral_normalize",
    "random_affine", "random_network", "latent_columns", "sample_pushforward",
    "empirical_lipschitz", "ConcentrationReport", "concentration_probe",
]
