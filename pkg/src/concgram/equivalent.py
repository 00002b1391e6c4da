"""Deterministic equivalent of the Gram resolvent R(z) = (G + z I)^-1.

Given class moments ``(m_l, C_l)`` and counts ``n_l``, the scalars
``delta_l(z)`` solve

    delta_l = (1/p) tr C_l Qt(delta),
    Qt(delta) = (sum_j (n_j / p) C_j / (1 + delta_j) + z I_p)^-1,

and the equivalent resolvent is

    Rt(z) = (1/z) blockdiag(I_{n_l} / (1 + delta_l)) + (1/(p z)) J Omega J^T.

With balanced classes ``n_j / p = 1 / (c k)``. Public density and contour
routines take the Stieltjes variable ``w`` of ``m(w) = (1/n) tr (G - w I)^-1``
and evaluate the equivalent at ``z = -w``; for complex ``w`` this relies on
the analytic continuation of the same fixed point, which is standard but
not proven here.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from .exceptions import (
    ContractError,
    FixedPointError,
    InvalidContourError,
    PartialResultError,
)
from .model import MixtureModel, gram, sample_gmm
from .numerics import RngStream

TOL_REAL = 1e-12
TOL_COMPLEX = 1e-10
MAX_ITER = 10_000
MIN_DAMPING = 2.0 ** -10
OMEGA_FORMS = ("hadamard", "leave-two-out")


# -- spectral form of the model ------------------------------------------------

class _Form:
    """Precomputed view of the second moments used by the fixed-point map.

    When all C_l commute they share an eigenbasis U and the map only needs
    their eigenvalues (``lam``, shape k x p); otherwise the dense matrices
    are kept and each evaluation solves a p x p system.
    """

    def __init__(self, model: MixtureModel, weighting: str = "counts"):
        C = model.second_moments
        k, p = model.k, model.p
        self.p, self.k = p, k
        if weighting == "counts":
            self.weights = model.class_counts / p
        elif weighting == "balanced":
            self.weights = np.full(k, 1.0 / (model.c * k))
        else:
            raise ContractError(f"unknown weighting {weighting!r}")
        self.C = C
        self.traces = np.einsum("kii->k", C) / p
        self.basis = None
        self.lam = None
        if self._commuting(C):
            mix = np.tensordot(np.sqrt(np.arange(2, k + 2)), C, axes=1)
            _, U = np.linalg.eigh((mix + mix.T) / 2)
            rotated = [U.T @ C[l] @ U for l in range(k)]
            lam_full = np.array([np.diag(R).copy() for R in rotated])
            off = max(np.max(np.abs(R - np.diag(np.diag(R)))) for R in rotated)
            scale = max(np.max(np.abs(C)), 1.0)
            if off <= 1e-9 * scale:
                self.basis = U
                self.lam = lam_full
        self.diagonal = self.basis is not None
        self._last = None  # (key, Q) of the latest dense q_tilde evaluation

    @staticmethod
    def _commuting(C):
        k = C.shape[0]
        scale = max(np.max(np.abs(C)), 1.0) ** 2
        for a in range(k):
            for b in range(a + 1, k):
                comm = C[a] @ C[b] - C[b] @ C[a]
                if np.max(np.abs(comm)) > 1e-10 * scale * C.shape[1]:
                    return False
        return True

    # F(delta) for a batch of z values; z: (m,), delta: (m, k)
    def apply(self, z, delta):
        if self.diagonal:
            den = (1.0 / (1.0 + delta)) @ (self.weights[:, None] * self.lam) + z[:, None]
            return (1.0 / den) @ self.lam.T / self.p
        out = np.empty_like(delta)
        for i in range(z.shape[0]):
            Q = self.q_tilde(z[i], delta[i])
            out[i] = np.einsum("kpq,qp->k", self.C, Q) / self.p
        return out

    def jacobian(self, z, delta):
        """dF_l / d delta_j, shape (m, k, k)."""
        scale = self.weights[None, :] / (1.0 + delta) ** 2
        if self.diagonal:
            den = (1.0 / (1.0 + delta)) @ (self.weights[:, None] * self.lam) + z[:, None]
            inv2 = 1.0 / den ** 2
            T = np.einsum("li,mi,ji->mlj", self.lam, inv2, self.lam) / self.p
            return T * scale[:, None, :]
        out = np.empty(delta.shape + (self.k,), dtype=np.result_type(delta, z))
        for i in range(z.shape[0]):
            Q = self.q_tilde(z[i], delta[i])
            B = np.matmul(Q[None], self.C.astype(Q.dtype, copy=False))
            out[i] = np.einsum("lpq,jqp->lj", B, B, optimize=True) / self.p
        return out * scale[:, None, :]

    def q_tilde(self, z, delta):
        if self.diagonal:
            den = (self.weights / (1.0 + delta)) @ self.lam + z
            return (self.basis / den) @ self.basis.T
        key = (complex(z), np.asarray(delta).tobytes())
        if self._last is not None and self._last[0] == key:
            return self._last[1]
        A = np.tensordot(self.weights / (1.0 + delta), self.C, axes=1)
        A[np.diag_indices(self.p)] += z
        Q = scipy.linalg.inv(A, overwrite_a=True, check_finite=False)
        Q.setflags(write=False)
        self._last = (key, Q)
        return Q

    def quad_form(self, z, delta, A, B):
        """A^T Qt B without forming Qt when the basis is shared."""
        if self.diagonal:
            den = (self.weights / (1.0 + delta)) @ self.lam + z
            UA = self.basis.T @ A
            UB = self.basis.T @ B
            return (UA / den[:, None]).T @ UB
        K = np.tensordot(self.weights / (1.0 + delta), self.C, axes=1) + z * np.eye(self.p)
        return A.T @ np.linalg.solve(K, B.astype(K.dtype))


# -- fixed point ---------------------------------------------------------------

@dataclass
class DeltaSolution:
    """Fixed point ``delta*(z)`` together with the map that produced it."""

    z: complex
    delta: np.ndarray
    iterations: int
    residual: float
    _form: _Form = field(repr=False)

    @property
    def q_tilde(self) -> np.ndarray:
        return self._form.q_tilde(self.z, self.delta)

    def quad_form(self, A, B=None):
        return self._form.quad_form(self.z, self.delta, A, A if B is None else B)


def _check_z(z):
    z = complex(z)
    if z == 0:
        raise ContractError("z = 0 is outside the domain of the fixed point")
    if z.imag == 0 and z.real < 0:
        raise ContractError("real z must be positive (use complex z off the axis)")
    return z


def _admissible(z, delta):
    """Points whose iterate keeps the sign structure of the true solution."""
    if np.iscomplexobj(z):
        im = np.imag(delta) * np.imag(z)[:, None]
        ok = np.all(im <= 1e-14 * (1 + np.abs(delta)), axis=1)
    else:
        ok = np.all(np.real(delta) > -1.0, axis=1)
    return ok & np.all(np.isfinite(delta), axis=1)


def _iterate(form: _Form, z, tol, max_iter, init=None, polish=True, newton=True):
    """Damped Picard iteration for a batch of z values.

    Each point carries its own damping factor, halved whenever its residual
    grows and doubled back (up to 1) when it shrinks. With ``newton`` a
    Newton step on ``delta - F(delta)`` is tried first and kept only if it
    lowers the residual and preserves the sign of ``Im delta``; otherwise
    the damped Picard step is taken. Returns
    ``(delta, iterations, residual, converged, history)``.
    """
    z = np.asarray(z)
    complex_z = np.iscomplexobj(z) and np.any(z.imag != 0)
    dtype = complex if complex_z else float
    z = z.astype(dtype)
    m = z.shape[0]
    if init is None:
        delta = (form.traces[None, :] / z[:, None]).astype(dtype)
    else:
        delta = np.broadcast_to(np.asarray(init, dtype=dtype), (m, form.k)).copy()
    alpha = np.ones(m)
    prev = np.full(m, np.inf)
    iters = np.zeros(m, dtype=np.int64)
    residual = np.full(m, np.inf)
    active = np.ones(m, dtype=bool)
    history = []
    eye = np.eye(form.k)
    F_all = form.apply(z, delta)
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        d = delta[idx]
        zi = z[idx]
        F = F_all[idx]
        res = np.max(np.abs(F - d), axis=1)
        history.append((idx, res))
        residual[idx] = res
        iters[idx] = it
        done = res <= tol
        active[idx[done]] = False
        keep = ~done
        idx, d, zi, F, res = idx[keep], d[keep], zi[keep], F[keep], res[keep]
        if idx.size == 0:
            break
        grew = res > prev[idx]
        alpha[idx[grew]] = np.maximum(alpha[idx[grew]] / 2.0, MIN_DAMPING)
        alpha[idx[~grew]] = np.minimum(alpha[idx[~grew]] * 2.0, 1.0)
        prev[idx] = res
        a = alpha[idx][:, None]
        step = (1.0 - a) * d + a * F
        F_step = form.apply(zi, step)
        if newton:
            Jf = form.jacobian(zi, d)
            try:
                dn = d - np.linalg.solve(eye - Jf, (d - F)[..., None])[..., 0]
            except np.linalg.LinAlgError:
                dn = np.full_like(d, np.nan)
            ok = _admissible(zi, dn)
            if np.any(ok):
                Fn = np.full_like(d, np.nan)
                Fn[ok] = form.apply(zi[ok], dn[ok])
                res_n = np.max(np.abs(Fn - dn), axis=1)
                res_step = np.max(np.abs(F_step - step), axis=1)
                take = ok & (res_n < np.minimum(res, res_step))
                step[take] = dn[take]
                F_step[take] = Fn[take]
        delta[idx] = step
        F_all[idx] = F_step
    converged = residual <= tol
    if polish and np.any(converged):
        # a few undamped steps past tol so delta sits at machine precision
        idx = np.flatnonzero(converged)
        for _ in range(100):
            d = delta[idx]
            F = form.apply(z[idx], d)
            res = np.max(np.abs(F - d), axis=1)
            better = res < residual[idx]
            if not np.any(better):
                break
            delta[idx[better]] = F[better]
            residual[idx[better]] = res[better]
            idx = idx[better]
    return delta, iters, residual, converged, history


def _point_history(history, i):
    out = []
    for idx, res in history:
        pos = np.searchsorted(idx, i)
        if pos < idx.size and idx[pos] == i:
            out.append(float(res[pos]))
    return out


def solve_delta(model: MixtureModel, z, tol: float | None = None,
                max_iter: int = MAX_ITER, init=None, weighting: str = "counts",
                _form: _Form | None = None) -> DeltaSolution:
    """Solve the fixed-point system at a single ``z``.

    ``tol`` defaults to 1e-12 for real z and 1e-10 for complex z. ``init``
    warm-starts the iteration (default ``tr(C_l) / (p z)``).
    """
    z = _check_z(z)
    if tol is None:
        tol = TOL_REAL if z.imag == 0 else TOL_COMPLEX
    if tol <= 0:
        raise ContractError("tol must be positive")
    form = _form if _form is not None else _Form(model, weighting)
    zz = np.array([z if z.imag else z.real])
    delta, iters, res, conv, history = _iterate(form, zz, tol, max_iter, init)
    if not conv[0]:
        raise FixedPointError(
            f"fixed point at z={z} stalled at residual {res[0]:.3e}",
            last=delta[0], history=_point_history(history, 0),
        )
    return DeltaSolution(z, delta[0], int(iters[0]), float(res[0]), form)


def _homotopy_init(form, zs, tol, max_iter):
    """Starting points for complex z close to the real axis.

    Solves first with the imaginary part inflated to ``0.1 (1 + |Re z|)``
    and shrinks it tenfold per stage, warm-starting each stage from the
    previous one so the iterates follow the physical branch.
    """
    target = np.abs(zs.imag)
    floor = 0.1 * (1.0 + np.abs(zs.real))
    if np.all(target >= floor):
        return None
    sign = np.where(zs.imag < 0, -1.0, 1.0)
    level = np.maximum(floor, target)
    init = None
    while True:
        zz = zs.real + 1j * sign * level
        d, _, _, conv, _ = _iterate(form, zz, max(tol, 1e-8), max_iter, init=init,
                                    polish=False)
        if init is not None:
            d[~conv] = init[~conv]
        init = d
        if np.all(level <= target):
            return init
        level = np.maximum(level / 10.0, target)


def solve_delta_batch(model: MixtureModel, zs, tol=None, max_iter=MAX_ITER,
                      weighting="counts", _form=None):
    """Solve at many z at once. Returns ``(solutions, failed_indices)``.

    Points that fail are left as ``None`` in ``solutions``.
    """
    zs = np.asarray(zs, dtype=complex).reshape(-1)
    for z in zs:
        _check_z(z)
    form = _form if _form is not None else _Form(model, weighting)
    real = np.all(zs.imag == 0)
    if tol is None:
        tol = TOL_REAL if real else TOL_COMPLEX
    if form.diagonal:
        arg = zs.real if real else zs
        init = None if real else _homotopy_init(form, zs, tol, max_iter)
        delta, iters, res, conv, _ = _iterate(form, arg, tol, max_iter, init=init)
        if init is not None and not np.all(conv):
            bad = np.flatnonzero(~conv)
            d2, i2, r2, c2, _ = _iterate(form, arg[bad], tol, max_iter)
            delta[bad], iters[bad], res[bad], conv[bad] = d2, i2, r2, c2
    else:
        # dense map: one point at a time, warm-started along the batch
        m = zs.size
        delta = np.zeros((m, form.k), dtype=float if real else complex)
        iters = np.zeros(m, dtype=np.int64)
        res = np.zeros(m)
        conv = np.zeros(m, dtype=bool)
        prev = None
        for i, z in enumerate(zs):
            arg = np.array([z.real if real else z])
            d, it, r, c, _ = _iterate(form, arg, tol, max_iter, init=prev)
            if not c[0] and prev is not None:
                d, it, r, c, _ = _iterate(form, arg, tol, max_iter)
            delta[i], iters[i], res[i], conv[i] = d[0], it[0], r[0], c[0]
            prev = d[0] if c[0] else None
    sols = [
        DeltaSolution(complex(zs[i]), delta[i], int(iters[i]), float(res[i]), form)
        if conv[i] else None
        for i in range(zs.size)
    ]
    return sols, [i for i in range(zs.size) if not conv[i]]


# -- equivalent resolvent -----------------------------------------------------

def omega_matrix(model: MixtureModel, solution: DeltaSolution, omega: str = "hadamard"):
    """k x k matrix Omega_z.

    ``hadamard``: symmetrised ``(M^T Qt M) diag((delta-1)/(delta+1))``, which
    at k = 1 is the single-class closed form. ``leave-two-out``:
    ``-D M^T Qt M D`` with ``D = diag(1/(1+delta))``, the off-diagonal
    resolvent entries obtained by removing two samples at a time.
    """
    MQM = solution.quad_form(model.means)
    d = solution.delta
    if omega == "hadamard":
        A = MQM * ((d - 1) / (d + 1))[None, :]
        return (A + A.T) / 2
    if omega == "leave-two-out":
        D = 1.0 / (1.0 + d)
        return -(D[:, None] * MQM * D[None, :])
    raise ContractError(f"unknown omega form {omega!r}; choose from {OMEGA_FORMS}")


@dataclass
class EquivalentResolvent:
    """Structured Rt(z): per-class diagonal plus ``J Omega J^T / (p z)``."""

    z: complex
    diag_blocks: np.ndarray
    omega: np.ndarray
    class_counts: np.ndarray
    p: int

    @property
    def n(self) -> int:
        return int(self.class_counts.sum())

    @property
    def k(self) -> int:
        return self.class_counts.size

    @property
    def labels(self):
        return np.repeat(np.arange(self.k), self.class_counts)

    def entry(self, i, j):
        lab = self.labels
        a, b = lab[i], lab[j]
        val = self.omega[a, b] / (self.p * self.z)
        return val + (self.diag_blocks[a] if i == j else 0.0)

    def materialize(self, max_n: int = 4096) -> np.ndarray:
        if self.n > max_n:
            raise ContractError(f"refusing to materialise n={self.n} > {max_n}")
        lab = self.labels
        R = self.omega[np.ix_(lab, lab)] / (self.p * self.z)
        R[np.diag_indices(self.n)] += self.diag_blocks[lab]
        if np.all(np.imag(R) == 0):
            R = np.real(R)
        return R

    def class_projection(self) -> np.ndarray:
        """``J^T Rt J`` (k x k)."""
        N = self.class_counts.astype(float)
        return np.diag(N * self.diag_blocks) + np.outer(N, N) * self.omega / (self.p * self.z)

    def normalized_trace(self) -> complex:
        """``(1/n) tr Rt``."""
        N = self.class_counts.astype(float)
        tr = np.sum(N * self.diag_blocks) + np.sum(N * np.diag(self.omega)) / (self.p * self.z)
        return tr / self.n


def rtilde(model: MixtureModel, solution: DeltaSolution,
           omega: str = "hadamard") -> EquivalentResolvent:
    if solution.delta.shape != (model.k,) or solution._form.p != model.p:
        raise ContractError("solution was not computed for this model")
    z = solution.z if solution.z.imag else solution.z.real
    diag = 1.0 / (z * (1.0 + solution.delta))
    return EquivalentResolvent(
        z, diag, omega_matrix(model, solution, omega), model.class_counts.copy(), model.p
    )


def k1_closed_form(mean, second_moment, n: int, z: float) -> np.ndarray:
    """Dense single-class equivalent, solved independently of the k-class code.

    ``R = I / (z (1 + d)) + (d - 1) / (p z (d + 1)) * (m^T Qt m) * 1 1^T`` with
    ``Qt = (C / (c (1 + d)) + z I)^-1`` and ``d`` the scalar fixed point,
    found here by bracketing rather than iteration.
    """
    m = np.asarray(mean, dtype=float).reshape(-1)
    C = np.asarray(second_moment, dtype=float)
    p = m.size
    c = p / n
    lam, U = np.linalg.eigh((C + C.T) / 2)
    lam = np.clip(lam, 0.0, None)

    def gap(d):
        return d - np.sum(lam / (lam / (c * (1 + d)) + z)) / p

    hi = np.sum(lam) / (p * z) + 1.0
    d = scipy.optimize.brentq(gap, 0.0, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                              maxiter=500)
    um = U.T @ m
    mQm = np.sum(um ** 2 / (lam / (c * (1 + d)) + z))
    R = np.full((n, n), (d - 1) / (p * z * (d + 1)) * mQm)
    R[np.diag_indices(n)] += 1.0 / (z * (1 + d))
    return R


# -- deviation study ----------------------------------------------------------

@dataclass
class DeviationResult:
    p_values: np.ndarray
    deviations: np.ndarray
    noise_floor: np.ndarray
    trials: int
    slope: float
    omega: str

    @property
    def ratios(self):
        return self.deviations[1:] / self.deviations[:-1]


def loglog_slope(x, y) -> float:
    x, y = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(x, y, 1)[0])


def deviation(model_factory: Callable[[int], MixtureModel], z: float,
              p_list: Sequence[int], trials: int, stream: RngStream,
              omega: str = "hadamard") -> DeviationResult:
    """Spectral-norm gap between the mean sampled resolvent and Rt(z).

    ``model_factory(p)`` returns the model at dimension p (its class counts
    fix n). For every p, ``trials`` GMM samples are drawn from substreams
    of ``stream`` and their resolvents averaged in trial order. The
    ``noise_floor`` column is half the gap between the two half-sample
    means, a rough scale for the Monte-Carlo error of the average.
    """
    if trials < 1:
        raise ContractError("trials must be >= 1")
    z = float(z)
    if z <= 0:
        raise ContractError("deviation needs real z > 0")
    devs, floors = [], []
    for p in p_list:
        model = model_factory(int(p))
        sol = solve_delta(model, z)
        Rt = rtilde(model, sol, omega).materialize()
        n = model.n
        sub = stream.substream(int(p))
        half = trials // 2
        acc_a = np.zeros((n, n))
        acc_b = np.zeros((n, n))
        for t in range(trials):
            G = gram(sample_gmm(model, sub.substream(t)))
            G[np.diag_indices(n)] += z
            R = scipy.linalg.inv(G, overwrite_a=True, check_finite=False)
            if t < half:
                acc_a += R
            else:
                acc_b += R
        mean_R = (acc_a + acc_b) / trials
        devs.append(_sym_norm(mean_R - Rt))
        if half >= 1 and trials - half >= 1:
            floors.append(_sym_norm(acc_a / half - acc_b / (trials - half)) / 2)
        else:
            floors.append(np.nan)
    devs = np.array(devs)
    slope = loglog_slope(p_list, devs) if len(p_list) > 1 else float("nan")
    return DeviationResult(np.asarray(p_list), devs, np.array(floors), trials, slope, omega)


def _sym_norm(A):
    A = (A + A.T) / 2
    vals = scipy.linalg.eigvalsh(A, check_finite=False)
    return float(np.max(np.abs(vals)))


# -- spectral density -----------------------------------------------------------

@dataclass
class DensityCurve:
    grid: np.ndarray
    density: np.ndarray
    atom_at_zero: float
    eps: float
    raw_density: np.ndarray
    stieltjes: np.ndarray
    iterations: np.ndarray | None = None
    residuals: np.ndarray | None = None

    def mass(self) -> float:
        return float(self.atom_at_zero + np.trapezoid(self.density, self.grid))

    def support_edges(self, rel_threshold: float = 0.02):
        """Intervals where the density exceeds ``rel_threshold * max``.

        Returns a list of ``(left, right)`` grid values, one per connected
        run of grid points above the threshold.
        """
        on = self.density >= rel_threshold * np.max(self.density)
        edges = []
        i = 0
        while i < on.size:
            if on[i]:
                j = i
                while j + 1 < on.size and on[j + 1]:
                    j += 1
                edges.append((float(self.grid[i]), float(self.grid[j])))
                i = j + 1
            else:
                i += 1
        return edges


def stieltjes(model: MixtureModel, w, omega="hadamard", weighting="counts", tol=None,
              max_iter=MAX_ITER, return_solutions=False):
    """``m(w) = (1/n) tr Rt(-w)`` for an array of complex ``w`` off the real axis.

    Returns ``(m, failed)``, plus the list of :class:`DeltaSolution` (None
    where the fixed point failed) when ``return_solutions`` is set.
    """
    w = np.asarray(w, dtype=complex).reshape(-1)
    form = _Form(model, weighting)
    sols, failed = solve_delta_batch(model, -w, tol=tol, max_iter=max_iter, _form=form)
    out = np.full(w.size, np.nan + 1j * np.nan)
    for i, s in enumerate(sols):
        if s is not None:
            out[i] = rtilde(model, s, omega).normalized_trace()
    if return_solutions:
        return out, failed, sols
    return out, failed


def density(model: MixtureModel, x_grid, eps: float | None = None, omega="hadamard",
            weighting="counts", max_iter: int = MAX_ITER) -> DensityCurve:
    """Limiting spectral density of G from the equivalent resolvent.

    ``rho(x) = Im[m(x + i eps) + a / (x + i eps)] / pi`` where
    ``a = max(0, 1 - c)`` is the rank-deficiency atom at zero, reported
    separately. ``eps`` defaults to 1e-3 times the grid span.
    """
    x = np.asarray(x_grid, dtype=float).reshape(-1)
    if x.size < 2 or np.any(np.diff(x) <= 0):
        raise ContractError("x_grid must be strictly ascending with >= 2 points")
    if eps is None:
        eps = 1e-3 * (x[-1] - x[0])
    if eps <= 0:
        raise ContractError("eps must be positive")
    w = x + 1j * eps
    m, failed, sols = stieltjes(model, w, omega=omega, weighting=weighting,
                                max_iter=max_iter, return_solutions=True)
    atom = max(0.0, 1.0 - model.c)
    raw = np.imag(m + atom / w) / np.pi
    iters = np.array([s.iterations if s is not None else -1 for s in sols])
    resid = np.array([s.residual if s is not None else np.nan for s in sols])
    curve = DensityCurve(x, np.clip(np.nan_to_num(raw, nan=0.0), 0.0, None), atom,
                         float(eps), raw, m, iters, resid)
    if failed:
        raise PartialResultError(
            f"fixed point failed at {len(failed)} grid points",
            failed=[float(x[i]) for i in failed], partial=curve,
        )
    return curve


# -- eigenspace statistics via contour integration ------------------------------

def _contour(a, b, points, height):
    """Counter-clockwise rectangle around [a, b]: nodes and weights ``dw``."""
    t, wts = np.polynomial.legendre.leggauss(points)
    half_w, mid = (b - a) / 2, (a + b) / 2
    nodes, weights = [], []
    # bottom edge left to right, right edge upward, top right to left, left downward
    nodes.append(mid + half_w * t - 1j * height)
    weights.append(half_w * wts + 0j)
    nodes.append(b + 1j * height * t)
    weights.append(1j * height * wts)
    nodes.append(mid - half_w * t + 1j * height)
    weights.append(-half_w * wts + 0j)
    nodes.append(a - 1j * height * t)
    weights.append(-1j * height * wts)
    return np.concatenate(nodes), np.concatenate(weights)


def subspace_stats(model: MixtureModel, interval, quadrature_points: int = 64,
                   omega: str = "hadamard", weighting: str = "counts",
                   density_threshold: float = 1e-3, check_contour: bool = True):
    """Predicted ``(1/n) j_l^T U U^T j_m`` for eigenvectors with eigenvalues in (a, b).

    Integrates ``-(1/(2 pi i)) J^T Rt(-w) J dw`` over a rectangle with real
    extent [a, b] and half-height ``0.1 (b - a)``, using Gauss-Legendre
    nodes on each edge. Only the k x k projection of Rt is ever formed.
    """
    a, b = map(float, interval)
    if not b > a:
        raise ContractError("interval must satisfy a < b")
    if quadrature_points < 32:
        raise ContractError("quadrature_points must be >= 32")
    form = _Form(model, weighting)
    if check_contour:
        _check_contour_ends(model, a, b, density_threshold, form)
    nodes, weights = _contour(a, b, quadrature_points, 0.1 * (b - a))
    # conjugate symmetry: integrate over the upper half and reflect
    upper = nodes.imag > 0
    sols, failed = solve_delta_batch(model, -nodes[upper], _form=form)
    if failed:
        raise PartialResultError(
            f"fixed point failed at {len(failed)} contour nodes",
            failed=[complex(nodes[upper][i]) for i in failed],
        )
    k = model.k
    total = np.zeros((k, k), dtype=complex)
    for s, dw in zip(sols, weights[upper]):
        P = rtilde(model, s, omega).class_projection()
        total += P * dw
    lower_nodes = nodes[~upper]
    lower_w = weights[~upper]
    # f(conj w) = conj f(w) for the real-symmetric model
    for wn, dw in zip(lower_nodes, lower_w):
        s = sols[_nearest_conj(nodes[upper], wn)]
        P = np.conj(rtilde(model, s, omega).class_projection())
        total += P * dw
    stats = -(total / (2j * np.pi)) / model.n
    stats = np.real(stats)
    return (stats + stats.T) / 2


def _nearest_conj(upper_nodes, w):
    return int(np.argmin(np.abs(upper_nodes - np.conj(w))))


def _check_contour_ends(model, a, b, threshold, form):
    eps = 1e-4 * (b - a)
    w = np.array([a + 1j * eps, b + 1j * eps])
    sols, failed = solve_delta_batch(model, -w, _form=form)
    atom = max(0.0, 1.0 - model.c)
    for i, x in enumerate((a, b)):
        if sols[i] is None:
            raise InvalidContourError(f"fixed point failed at contour end x={x}")
        m = rtilde(model, sols[i]).normalized_trace()
        rho = np.imag(m + atom / w[i]) / np.pi
        if rho > threshold:
            raise InvalidContourError(
                f"contour crosses the support at x={x:.4g} (density {rho:.3g})"
            )
