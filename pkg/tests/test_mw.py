import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given, settings, strategies as st

from eqwave.errors import DegenerateSolutionError, DomainError
from eqwave.model import TWO_PI
from eqwave.mw import (MWSolution, admissible_pairs, collocation_residual, count_lower_bound, diff_matrix,
                       enumerate_family, evaluate, genericity_rank, grid, primary_mw_normalize, rank_of,
                       reappear_mw, relative_residual, resample, shift_values, solve_mw, verify_quadratic_growth)

BOUND = dict(T0=1.0, V0=np.pi, eps0=0.1, delta0=0.1, gamma0=1.0)


def trig_samples(M, n=3, seed=0, modes=6):
    rng = np.random.default_rng(seed)
    y = grid(M)
    c = rng.standard_normal((modes, n)) + 1j * rng.standard_normal((modes, n))
    U = np.real(sum(np.exp(1j * k * y)[:, None] * c[k] for k in range(modes)))
    dU = np.real(sum(1j * k * np.exp(1j * k * y)[:, None] * c[k] for k in range(modes)))
    return U, dU, c


def dummy_mw(**kw):
    base = dict(values=trig_samples(33)[0], beta=TWO_PI / 3, omega=1.0, tau=1.0, phi=0.0)
    base.update(kw)
    return MWSolution(**base)


# ------------------------------------------------------------- trig basis


@settings(max_examples=40)
@given(st.floats(-50, 50))
def test_shift_exact_against_interpolation(s):
    U = trig_samples(33)[0]
    direct = evaluate(U, grid(33) - s)
    assert np.max(np.abs(shift_values(U, s) - direct)) <= 1e-12


def test_diff_matrix_exact_on_trig_polynomials():
    U, dU, _ = trig_samples(33)
    assert np.max(np.abs(diff_matrix(33) @ U - dU)) <= 1e-11


def test_resample_round_trip():
    U = trig_samples(33)[0]
    assert np.allclose(resample(resample(U, 129), 33), U, atol=1e-13)


# ----------------------------------------------------------- reappearance


def test_reappear_examples():
    mw = dummy_mw()
    tau, phi = reappear_mw(mw, 1)
    assert tau == pytest.approx(4.0) and phi == pytest.approx(3.0)
    assert reappear_mw(mw, 0) == pytest.approx((1.0, 0.0))
    with pytest.raises(DomainError):
        reappear_mw(mw, -1)


def test_primary_normalize_delay():
    out = primary_mw_normalize(dummy_mw(tau=4.0, omega=TWO_PI / 3 * 0.75))
    assert out.tau == pytest.approx(1.0)
    assert out.tau < out.T


def test_primary_normalize_phase_window(lk):
    mw = dummy_mw(omega=7 * np.pi / 3)  # V = 7 pi
    out = primary_mw_normalize(mw, lk)
    assert np.pi - 1e-12 <= out.V <= 3 * np.pi + 1e-12
    assert (out.V - mw.V) / TWO_PI == pytest.approx(round((out.V - mw.V) / TWO_PI))


def test_primary_normalize_idempotent(lk_mw):
    model, mw = lk_mw
    assert primary_mw_normalize(mw, model) is mw


# ---------------------------------------------------------------- solving


def test_mw_invariants(lk_mw_run):
    model, mw, (beta_sim, omega_sim) = lk_mw_run
    assert mw.residual_norm <= 1e-9
    assert relative_residual(model, mw, 2 * mw.M + 1) <= 1e-7
    assert abs(mw.beta - beta_sim) / mw.beta <= 1e-3
    assert abs(mw.omega - omega_sim) / abs(mw.omega) <= 1e-3
    assert mw.amplitude() > 1e-3


def test_phase_conditions_hold_against_seed(lk_mw):
    model, mw = lk_mw
    sol = solve_mw(model, mw, mw.tau + 0.05, mw.phi)
    assert sol.M == mw.M
    D = diff_matrix(mw.M)
    p1 = np.sum((D @ mw.values) * sol.values) / mw.M
    p2 = np.sum((mw.values @ model.A.T) * sol.values) / mw.M
    assert abs(p1) <= 1e-12 and abs(p2) <= 1e-12


def test_delayed_profile_mode_shift(lk_mw):
    _, mw = lk_mw
    direct = evaluate(mw.values, grid(mw.M) - mw.beta * mw.tau)
    assert np.max(np.abs(mw.delayed_values() - direct)) <= 1e-12


@pytest.mark.parametrize("k", [1, 2, 3])
def test_reappearance_round_trip(lk_mw, k):
    model, mw = lk_mw
    tau, phi = reappear_mw(mw, k)
    seed = replace(mw, values=mw.values * (1 + 1e-4), beta=mw.beta * (1 + 1e-5))
    sol = solve_mw(model, seed, tau, phi)
    assert abs(sol.beta - mw.beta) <= 1e-8 and abs(sol.omega - mw.omega) <= 1e-8
    # same profile up to the time-shift symmetry: compare |a|^2 spectra
    a2, b2 = np.sum(mw.values ** 2, 1), np.sum(sol.values ** 2, 1)
    assert np.allclose(np.abs(np.fft.fft(a2)), np.abs(np.fft.fft(b2)), atol=1e-7 * mw.M)


def test_constant_profile_rejected(lk):
    mw = MWSolution(np.tile([0.8, 0.0, -0.1], (33, 1)), 0.2, 0.1, 5.0, 1.0)
    with pytest.raises(DegenerateSolutionError):
        solve_mw(lk, mw)


def test_nonpositive_beta_rejected(lk_mw):
    model, mw = lk_mw
    with pytest.raises(DomainError):
        solve_mw(model, replace(mw, beta=-0.1))


# -------------------------------------------------------------- genericity


def test_rank_synthetic():
    assert rank_of(np.eye(2)).rank == 2
    assert rank_of(np.array([[1.0, 2.0], [2.0, 4.0]])).rank == 1


def test_lk_mw_generic(lk_mw):
    model, mw = lk_mw
    g = genericity_rank(model, mw)
    assert g.rank == 2
    assert g.singular_values[-1] > 1e-6 * g.singular_values[0]


# ---------------------------------------------------------------- counting


def test_count_bound_table():
    b30 = count_lower_bound(tau=30.0, **BOUND)
    assert b30.r == pytest.approx(0.5 / (6 * np.pi))
    assert b30.tau_star == pytest.approx(max(20.0, 8 * np.pi))
    assert (b30.k_count, b30.l_count, b30.N) == (1, 2, 2)
    b100 = count_lower_bound(tau=100.0, **BOUND)
    assert (b100.k_count, b100.l_count, b100.N) == (5, 7, 35)
    b20 = count_lower_bound(tau=20.0, **BOUND)
    assert b20.N == 0 and b20.below_threshold


@pytest.mark.parametrize("bad", [dict(gamma0=7.0), dict(eps0=0.0), dict(V0=0.5), dict(delta0=-1.0)])
def test_count_bound_domain(bad):
    with pytest.raises(DomainError):
        count_lower_bound(tau=50.0, **{**BOUND, **bad})


@given(st.floats(26, 2000), st.floats(0, 500))
def test_count_bound_monotone(t1, dt):
    assert count_lower_bound(tau=t1 + dt, **BOUND).N >= count_lower_bound(tau=t1, **BOUND).N


@given(st.floats(2 * 25.14, 3000))
def test_count_bound_doubling(tau):
    n1 = count_lower_bound(tau=tau, **BOUND).N
    assert count_lower_bound(tau=2 * tau, **BOUND).N >= 2 * n1


def test_quadratic_growth_table_excludes_short_delays():
    g = verify_quadratic_growth(taus=[20.0, 30.0, 60.0, 120.0, 240.0], **BOUND)
    assert list(g.tau) == [30.0, 60.0, 120.0, 240.0]
    assert list(g.N) == [2, 12, 54, 228]
    assert g.c0 > 0


def test_admissible_pairs_respect_bounds():
    pairs = admissible_pairs(tau=100.0, phi=0.5, **BOUND)
    assert pairs
    for k, l in pairs:
        assert k > 1 / 0.1
        assert abs(100.0 / k - 1.0) < 0.1
        assert abs(0.5 / k - np.pi + TWO_PI * l / k) < 1.0
    assert not admissible_pairs(tau=8.0, phi=0.5, **BOUND)


def test_enumerate_family_small(lk_mw):
    model, mw = lk_mw
    res = enumerate_family(model, mw, 7000.0, 1.0, 0.05, 0.1337, 0.1, max_pairs=5)
    assert len(res.members) == 5 and not res.unresolved
    bo = np.array([[m.solution.beta, m.solution.omega] for m in res.members])
    for i in range(len(bo)):
        for j in range(i + 1, len(bo)):
            assert np.sum(np.abs(bo[i] - bo[j])) > 1e-8
    for m in res.members:
        assert m.solution.tau == 7000.0
        assert m.solution.residual_norm <= 1e-9
        assert collocation_residual(model, m.solution) <= 1e-9
    assert abs(res.jacobian_det) > 1e-10
