import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from concgram import equivalent as eq
from concgram.exceptions import (ContractError, FixedPointError, InvalidContourError,
                                 PartialResultError)
from concgram.lab import deviation_study, top_eigvecs
from concgram.model import MixtureModel, balanced_counts, gram, sample_gmm
from concgram.numerics import RngStream

from conftest import random_model


def iso_model(p, n, k=1, scales=None):
    scales = scales or [1.0] * k
    return MixtureModel(np.zeros((p, k)), np.stack([s * np.eye(p) for s in scales]),
                        balanced_counts(n, k))


def quadratic_root(z, c):
    """Positive root of z d^2 + (z + 1/c - 1) d - 1 = 0 (isotropic single class)."""
    b = z + 1 / c - 1
    return (-b + np.sqrt(b * b + 4 * z)) / (2 * z)


# -- fixed point ---------------------------------------------------------------

def test_golden_ratio_fixed_point():
    sol = eq.solve_delta(iso_model(50, 50), 1.0)
    assert abs(sol.delta[0] - (np.sqrt(5) - 1) / 2) <= 1e-10
    assert sol.residual <= 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 20), st.sampled_from([(20, 40), (30, 30), (40, 20), (10, 50)]))
def test_isotropic_fixed_point_matches_quadratic(z, shape):
    p, n = shape
    sol = eq.solve_delta(iso_model(p, n), z)
    assert sol.delta[0] == pytest.approx(quadratic_root(z, p / n), rel=1e-10, abs=1e-12)


def test_large_z_limit():
    rng = np.random.default_rng(0)
    model = random_model(rng, p=10, k=3)
    z = 1e6
    sol = eq.solve_delta(model, z)
    traces = np.trace(model.second_moments, axis1=1, axis2=2) / model.p
    assert np.all(np.real(sol.delta) <= traces / z)
    assert np.all(np.real(sol.delta) >= 0)


def test_fixed_point_residual_and_q_tilde():
    rng = np.random.default_rng(1)
    model = random_model(rng, p=8, k=2)
    sol = eq.solve_delta(model, 0.7)
    K = sum(model.class_counts[j] / model.p * model.second_moments[j] / (1 + sol.delta[j])
            for j in range(2)) + 0.7 * np.eye(8)
    Q = np.linalg.inv(K)
    np.testing.assert_allclose(sol.q_tilde, Q, atol=1e-12)
    F = [np.trace(model.second_moments[l] @ Q) / model.p for l in range(2)]
    assert np.max(np.abs(F - sol.delta)) <= 1e-12


def test_fixed_point_monte_carlo_oracle():
    p = n = 2000
    model = iso_model(p, n, k=2, scales=[1.0, 2.0])
    sol = eq.solve_delta(model, 1.0)
    traces = []
    root = RngStream(31, 0)
    # trace fluctuations are O(1/p); 30 draws pin the mean far below 2%
    for t in range(30):
        X = sample_gmm(model, root.substream(t)).data
        lam = scipy.linalg.eigvalsh(X.T @ X / p, check_finite=False)
        traces.append(np.mean(1.0 / (lam + 1.0)))
    tr_q = np.mean(traces)  # (1/p) tr E[(X X^T / p + I)^-1], n = p
    np.testing.assert_allclose(sol.delta, [1.0 * tr_q, 2.0 * tr_q], rtol=0.02)


def test_uniqueness_from_random_starts():
    rng = np.random.default_rng(2)
    model = random_model(rng, p=9, k=3)
    ref = eq.solve_delta(model, 0.5).delta
    for _ in range(10):
        init = rng.uniform(0, 10, size=3)
        d = eq.solve_delta(model, 0.5, init=init).delta
        assert np.max(np.abs(d - ref)) <= 10 * 1e-12


def test_delta_decreasing_in_z():
    rng = np.random.default_rng(3)
    model = random_model(rng, p=7, k=2)
    zs = [0.1, 0.3, 1.0, 3.0, 10.0]
    ds = np.array([eq.solve_delta(model, z).delta for z in zs])
    assert np.all(np.diff(ds, axis=0) < 0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 8), st.floats(1e-3, 3), st.integers(0, 2**16))
def test_herglotz_sign(re, im, seed):
    model = random_model(np.random.default_rng(seed), p=6, k=2)
    for z in (re + 1j * im, re - 1j * im):
        sol = eq.solve_delta(model, z)
        assert np.all(np.imag(sol.delta) * z.imag <= 1e-12)


def test_domain_and_failure_errors():
    model = iso_model(10, 10)
    with pytest.raises(ContractError):
        eq.solve_delta(model, 0.0)
    with pytest.raises(ContractError):
        eq.solve_delta(model, -1.0)
    with pytest.raises(ContractError):
        eq.solve_delta(model, 1.0, tol=0.0)
    with pytest.raises(FixedPointError) as err:
        eq.solve_delta(model, 1.0, max_iter=1, init=[50.0])
    assert err.value.history


def test_batch_matches_single():
    rng = np.random.default_rng(4)
    model = random_model(rng, p=6, k=2)
    zs = np.array([0.2, 1.0, 4.0])
    sols, failed = eq.solve_delta_batch(model, zs)
    assert not failed
    for z, s in zip(zs, sols):
        np.testing.assert_allclose(s.delta, eq.solve_delta(model, z).delta, atol=1e-11)


# -- equivalent resolvent --------------------------------------------------------

def test_zero_means_give_block_diagonal():
    model = iso_model(12, 10, k=2, scales=[1.0, 3.0])
    sol = eq.solve_delta(model, 0.8)
    R = eq.rtilde(model, sol)
    assert not np.any(R.omega)
    expected = np.diag(np.repeat(1 / (0.8 * (1 + sol.delta)), model.class_counts))
    np.testing.assert_allclose(R.materialize(), expected, atol=1e-15)


def test_general_k_matches_single_class_formula():
    rng = np.random.default_rng(5)
    for _ in range(50):
        p = int(rng.integers(3, 15))
        n = int(rng.integers(3, 30))
        model = random_model(rng, p=p, k=1, counts=[n], mean_scale=rng.uniform(0, 3))
        z = float(rng.uniform(0.05, 5))
        R = eq.rtilde(model, eq.solve_delta(model, z)).materialize()
        ref = eq.k1_closed_form(model.means[:, 0], model.second_moments[0], n, z)
        assert np.max(np.abs(R - ref)) <= 1e-12


def test_resolvent_structure():
    rng = np.random.default_rng(6)
    model = random_model(rng, p=8, k=3, counts=[3, 4, 2])
    R = eq.rtilde(model, eq.solve_delta(model, 1.3))
    D = R.materialize()
    np.testing.assert_allclose(D, D.T, atol=1e-15)
    assert R.entry(0, 1) == pytest.approx(D[0, 1])
    assert R.entry(4, 4) == pytest.approx(D[4, 4])
    J = np.zeros((9, 3))
    J[np.arange(9), R.labels] = 1
    np.testing.assert_allclose(R.class_projection(), J.T @ D @ J, atol=1e-13)
    assert R.normalized_trace() == pytest.approx(np.trace(D) / 9)


def test_resolvent_large_z_limit():
    rng = np.random.default_rng(7)
    model = random_model(rng, p=6, k=2, counts=[4, 5])
    gaps = []
    for z in (1e2, 1e4, 1e6):
        R = eq.rtilde(model, eq.solve_delta(model, z)).materialize()
        gaps.append(np.linalg.norm(R - np.eye(9) / z, 2) * z)
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-4


def test_rtilde_rejects_foreign_solution():
    a = iso_model(6, 6)
    b = iso_model(7, 6)
    with pytest.raises(ContractError):
        eq.rtilde(b, eq.solve_delta(a, 1.0))
    with pytest.raises(ContractError):
        eq.omega_matrix(a, eq.solve_delta(a, 1.0), "bogus")


def test_omega_forms_agree_for_equal_deltas():
    # for a single class both forms reduce to scalar multiples of m^T Qt m
    model = MixtureModel.from_covariances(np.ones((5, 1)), np.eye(5)[None], [5])
    sol = eq.solve_delta(model, 1.0)
    had = eq.omega_matrix(model, sol, "hadamard")
    lto = eq.omega_matrix(model, sol, "leave-two-out")
    d = sol.delta[0]
    assert lto[0, 0] / had[0, 0] == pytest.approx(-1 / ((1 + d) * (d - 1)))


# -- Stieltjes transform and density -------------------------------------------

def test_stieltjes_bridge():
    p, n = 300, 600
    model = MixtureModel.from_covariances(np.random.default_rng(8).standard_normal((p, 2)),
                                          np.stack([np.eye(p), 1.5 * np.eye(p)]), [300, 300])
    w = np.array([0.7 + 0.3j, 2.0 + 0.5j, -0.4 + 0.2j])
    m, failed = eq.stieltjes(model, w)
    assert not failed
    emp = []
    for t in range(5):
        G = gram(sample_gmm(model, RngStream(t)))
        lam = np.linalg.eigvalsh(G)
        emp.append([np.mean(1 / (lam - wi)) for wi in w])
    np.testing.assert_allclose(m, np.mean(emp, axis=0), rtol=0.02)


def test_marchenko_pastur_edges():
    curve = eq.density(iso_model(400, 200), np.linspace(0, 3.5, 400), eps=1e-8)
    (lo, hi), = curve.support_edges(1e-4)
    cell = curve.grid[1] - curve.grid[0]
    assert abs(lo - (1 - 1 / np.sqrt(2)) ** 2) <= cell
    assert abs(hi - (1 + 1 / np.sqrt(2)) ** 2) <= cell
    assert 0.98 <= curve.mass() <= 1.02
    assert curve.atom_at_zero == 0.0


def test_marchenko_pastur_density_values():
    c = 2.0
    x = np.linspace(0.2, 2.8, 60)
    curve = eq.density(iso_model(400, 200), x, eps=1e-9)
    a, b = (1 - 1 / np.sqrt(c)) ** 2, (1 + 1 / np.sqrt(c)) ** 2
    # G = X^T X / p has the MP law of ratio 1/c
    ref = c * np.sqrt(np.clip((b - x) * (x - a), 0, None)) / (2 * np.pi * x)
    np.testing.assert_allclose(curve.density, ref, atol=1e-6)


def test_atom_at_zero():
    curve = eq.density(iso_model(100, 200), np.linspace(0.01, 7, 400))
    assert curve.atom_at_zero == 0.5
    assert 0.98 <= curve.mass() <= 1.02
    assert np.all(curve.raw_density >= -1e-12)


def test_density_default_eps_and_grid_checks():
    model = iso_model(20, 20)
    curve = eq.density(model, np.linspace(0, 5, 11))
    assert curve.eps == pytest.approx(5e-3)
    with pytest.raises(ContractError):
        eq.density(model, [1.0, 0.5])
    with pytest.raises(ContractError):
        eq.density(model, [0.5, 1.0], eps=-1)


def test_density_partial_result_lists_failures():
    with pytest.raises(PartialResultError) as err:
        eq.density(iso_model(20, 20), np.linspace(0.5, 3, 5), eps=1e-6, max_iter=1)
    assert err.value.failed
    assert err.value.partial.grid.size == 5


# -- subspace statistics ------------------------------------------------------

def test_subspace_full_support_is_identity_projector():
    model = iso_model(200, 200, k=2, scales=[1.0, 2.0])
    model = MixtureModel(model.means, model.second_moments, [150, 50])
    stats = eq.subspace_stats(model, (-0.5, 12.0))
    np.testing.assert_allclose(stats, np.diag([0.75, 0.25]), atol=1e-3)


def test_subspace_no_signal_has_no_class_alignment():
    model = iso_model(200, 200, k=2)
    stats = eq.subspace_stats(model, (3.0, 6.0), check_contour=False)
    assert abs(stats[0, 1]) <= 1e-3
    np.testing.assert_allclose(stats, stats.T)


def test_subspace_matches_sampled_spike():
    p = n = 2000
    e = np.zeros(p)
    e[0] = 0.1 * np.sqrt(p)
    model = MixtureModel.from_covariances(np.stack([e, -e], 1), np.stack([np.eye(p)] * 2),
                                          [n // 2, n // 2])
    s = sample_gmm(model, RngStream(0))
    vals, U = top_eigvecs(gram(s), 1)
    proj = s.selectors.T @ U[:, 0]
    emp = np.outer(proj, proj) / n
    pred = eq.subspace_stats(model, (0.5 * vals[0], 1.5 * vals[0]))
    np.testing.assert_allclose(pred, emp, atol=0.05)
    assert np.all(np.linalg.eigvalsh(pred) >= -1e-3)


def test_subspace_contour_errors():
    model = iso_model(100, 100)
    with pytest.raises(InvalidContourError):
        eq.subspace_stats(model, (1.0, 2.0))
    with pytest.raises(ContractError):
        eq.subspace_stats(model, (2.0, 1.0))
    with pytest.raises(ContractError):
        eq.subspace_stats(model, (-1.0, 5.0), quadrature_points=16)


# -- deviation ----------------------------------------------------------------

def test_deviation_small_at_p_200():
    res = deviation_study(lambda p: iso_model(p, p), 1.0, [200], 200, RngStream(1))
    assert res.deviations[0] <= 0.15


def test_single_trial_deviation_larger():
    fac = lambda p: iso_model(p, p)
    one = deviation_study(fac, 1.0, [100], 1, RngStream(2)).deviations[0]
    many = deviation_study(fac, 1.0, [100], 200, RngStream(2)).deviations[0]
    assert one > many


def test_deviation_rejects_bad_input():
    with pytest.raises(ContractError):
        deviation_study(lambda p: iso_model(p, p), 1.0, [10], 0, RngStream(0))
    with pytest.raises(ContractError):
        eq.deviation(lambda p: iso_model(p, p), -1.0, [10], 5, RngStream(0))


def test_loglog_slope():
    p = np.array([10, 100, 1000])
    assert eq.loglog_slope(p, 3 * p ** -0.5) == pytest.approx(-0.5)
