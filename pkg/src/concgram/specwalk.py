"""Random-walk model of training with truncated spectral normalization.

Each step perturbs a ``d1 x d0`` weight matrix by ``-eta * E`` with ``E``
standard normal, then (optionally) caps the top singular value at
``sigma_star``. Under this dynamic the top singular value settles below
``sqrt(sigma_star**2 + eta**2 * d1 * d0)``; without the cap it drifts
upward like ``eta * sqrt(t) * (sqrt(d0) + sqrt(d1))``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .exceptions import ContractError
from .numerics import (RngStream, as_matrix, leading_singular_pairs,
                       leading_singular_values)
from .pushforward import spectral_normalize

BURNIN_FRACTION = 0.1
EXCEEDANCE_EPS = 0.05


@dataclass(frozen=True)
class WalkConfig:
    d0: int = 100
    d1: int = 100
    eta: float = 0.01
    sigma_star: float = 1.0
    iterations: int = 2000
    seed: int = 0
    normalize: bool = True

    def __post_init__(self):
        if self.d0 < 1 or self.d1 < 1:
            raise ContractError("d0 and d1 must be >= 1")
        if not self.eta > 0:
            raise ContractError(f"eta must be positive, got {self.eta}")
        if not self.sigma_star > 0:
            raise ContractError(f"sigma_star must be positive, got {self.sigma_star}")
        if self.iterations < 1:
            raise ContractError("iterations must be >= 1")

    @property
    def bound(self) -> float:
        return walk_bound(self.sigma_star, self.eta, self.d0, self.d1)

    def to_dict(self):
        return asdict(self)


def walk_bound(sigma_star, eta, d0, d1) -> float:
    """``sqrt(sigma_star**2 + eta**2 * d1 * d0)``."""
    return float(np.sqrt(sigma_star ** 2 + eta ** 2 * d1 * d0))


def network_bound(layers, epsilon: float = EXCEEDANCE_EPS) -> float:
    """Product over layers of ``epsilon + walk_bound(layer)``.

    ``layers`` is a sequence of :class:`WalkConfig` or of mappings with keys
    ``sigma_star``, ``eta``, ``d0`` and ``d1``.
    """
    layers = list(layers)
    if not layers:
        raise ContractError("network_bound needs at least one layer")
    total = 1.0
    for cfg in layers:
        get = cfg.get if isinstance(cfg, dict) else lambda k: getattr(cfg, k)
        total *= epsilon + walk_bound(get("sigma_star"), get("eta"),
                                      get("d0"), get("d1"))
    return float(total)


@dataclass
class StepInfo:
    """Diagnostics of one step: top two singular values of the noisy matrix."""

    sigma_pre: float
    sigma2_pre: float
    sigma_post: float
    frob_pre: float
    frob_post: float


def _advance(w, cfg: WalkConfig, gen):
    """Unchecked step; returns ``(W_next, W_bar, sigma1_bar, sigma2_bar)``."""
    w_bar = w - cfg.eta * gen.standard_normal(w.shape)
    if not cfg.normalize:
        sig = leading_singular_values(w_bar, 2)
        out = w_bar
    else:
        sig, U, V = leading_singular_pairs(w_bar, 2)
        out = spectral_normalize(w_bar, cfg.sigma_star,
                                 triplet=(float(sig[0]), U[:, 0], V[:, 0]))
    s2 = float(sig[1]) if sig.size > 1 else 0.0
    return out, w_bar, float(sig[0]), s2


def walk_step(w, cfg: WalkConfig, stream: RngStream, *, return_info=False):
    """One noisy step ``W - eta E`` followed by the optional cap.

    The cap is :func:`spectral_normalize` with a partial symmetric
    eigensolve for the leading pair; after it the top singular value is
    ``max(sigma_star, sigma_2)`` of the noisy matrix. ``stream`` may be an
    :class:`RngStream` or an already running ``numpy`` generator.
    """
    w = as_matrix(w, "w")
    if w.shape != (cfg.d1, cfg.d0):
        raise ContractError(f"w must be {cfg.d1} x {cfg.d0}, got {w.shape}")
    gen = stream if isinstance(stream, np.random.Generator) else stream.generator()
    out, w_bar, s1, s2 = _advance(w, cfg, gen)
    if not return_info:
        return out
    info = StepInfo(s1, s2, _post_sigma(cfg, s1, s2),
                    float(np.linalg.norm(w_bar)), float(np.linalg.norm(out)))
    return out, info


def _post_sigma(cfg, s1, s2):
    """Top singular value after the cap, from the pre-cap top two."""
    if cfg.normalize and s1 > cfg.sigma_star:
        return max(cfg.sigma_star, s2)
    return s1


@dataclass
class WalkTrace:
    """Per-iteration top singular values of one walk.

    ``sigma1`` holds ``sigma_1(W_t)`` after step ``t`` (after the cap when
    normalizing) and ``sigma_pre`` the value before the cap.
    """

    config: WalkConfig
    sigma1: np.ndarray
    sigma_pre: np.ndarray
    bound: float
    epsilon: float
    burnin: int
    violations_after_burnin: int

    @property
    def steps_after_burnin(self) -> int:
        return int(self.sigma1.size - self.burnin)

    @property
    def violation_rate(self) -> float:
        steps = self.steps_after_burnin
        return self.violations_after_burnin / steps if steps else 0.0

    @property
    def final_sigma1(self) -> float:
        return float(self.sigma1[-1])

    def first_exceedance(self, level=None):
        """Index of the first iteration with ``sigma1 > level`` (None if never)."""
        level = self.bound if level is None else level
        hits = np.flatnonzero(self.sigma1 > level)
        return int(hits[0]) if hits.size else None


def initial_weights(cfg: WalkConfig, stream: RngStream) -> np.ndarray:
    """Entries uniform on ``[-1/sqrt(d0), 1/sqrt(d0)]``."""
    r = 1.0 / np.sqrt(cfg.d0)
    return stream.generator().uniform(-r, r, size=(cfg.d1, cfg.d0))


def run_walk(cfg: WalkConfig, *, epsilon: float = EXCEEDANCE_EPS,
             burnin_fraction: float = BURNIN_FRACTION) -> WalkTrace:
    """Iterate :func:`walk_step` from a uniform start and count exceedances.

    The initial matrix comes from substream 0 of ``cfg.seed``; the noise of
    all steps is read sequentially from substream 1. An exceedance after
    burn-in is an iteration with ``sigma1 > bound + epsilon``.
    """
    if not 0 <= burnin_fraction < 1:
        raise ContractError("burnin_fraction must lie in [0, 1)")
    root = RngStream(cfg.seed, 0)
    w = initial_weights(cfg, root.substream(0))
    n = cfg.iterations
    sigma1 = np.empty(n)
    sigma_pre = np.empty(n)
    gen = root.substream(1).generator()
    for t in range(n):
        w, _, s1, s2 = _advance(w, cfg, gen)
        sigma1[t] = _post_sigma(cfg, s1, s2)
        sigma_pre[t] = s1
    burnin = int(np.floor(burnin_fraction * n))
    bound = cfg.bound
    violations = int(np.sum(sigma1[burnin:] > bound + epsilon))
    return WalkTrace(cfg, sigma1, sigma_pre, bound, float(epsilon), burnin,
                     violations)
