import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eqwave.cw import (CWPoint, PrimaryBranch, continue_primary, cw_residual, default_seed, enumerate_cws,
                       monotone_pieces, predicted_count, reappearance_phi, solve_cw, solve_cw_at)
from eqwave.errors import ConfigError
from eqwave.model import TWO_PI, EquivariantModel, lang_kobayashi, rotation_generator, stuart_landau

ALPHA, ETA, J = 2.0, 0.1, -0.5
K_LK = ETA * np.sqrt(1 + ALPHA ** 2) / np.pi


def lk_closed_form(psi, alpha=ALPHA, eta=ETA, J=J):
    N0 = -eta * np.cos(psi)
    omega = eta * (np.sin(psi) - alpha * np.cos(psi))
    E0 = np.sqrt(-(J + N0) / (2 * N0 + 1))
    return E0, N0, omega


def dense_count(tau, phi, alpha=ALPHA, eta=ETA, n=400_000):
    """Number of psi in S^1 with psi + Omega(psi) tau = phi mod 2 pi, by a fine scan."""
    psi = np.linspace(0.0, TWO_PI, n + 1)
    lift = psi + eta * (np.sin(psi) - alpha * np.cos(psi)) * tau - phi
    m = np.floor(lift / TWO_PI)
    return int(np.sum(np.abs(np.diff(m))))


@pytest.fixture(scope="module")
def lk_eps():
    return lang_kobayashi({"alpha": ALPHA, "eta": ETA, "J": J, "eps": 0.05})


@pytest.fixture(scope="module")
def lk_branch(lk_eps):
    return continue_primary(lk_eps, 0.0, TWO_PI, seed=default_seed(lk_eps, 0.0))


@pytest.mark.parametrize("psi,E0,N0,omega", [
    (0.0, np.sqrt(0.75), -0.1, -0.2),
    (np.pi / 2, np.sqrt(0.5), 0.0, 0.1),
])
def test_lk_ecm_closed_form_points(lk_eps, psi, E0, N0, omega):
    cw = solve_cw(lk_eps, psi, (np.array([0.8, 0.0, 0.0]), 0.0))
    assert cw.x0 == pytest.approx([E0, 0.0, N0], abs=1e-10)
    assert cw.omega == pytest.approx(omega, abs=1e-10)


def test_lk_no_feedback(lk_eps):
    m = lk_eps.with_params(eta=0.0)
    for psi in (0.0, 1.0, 4.0):
        cw = solve_cw(m, psi, (np.array([0.5, 0.0, 0.1]), 0.05))
        assert cw.x0 == pytest.approx([np.sqrt(0.5), 0, 0], abs=1e-9)
        assert cw.omega == pytest.approx(0.0, abs=1e-9)


def test_cw_invariants(lk_eps):
    cw = solve_cw(lk_eps, 1.3, default_seed(lk_eps, 1.3))
    assert cw_residual(lk_eps, cw) <= 1e-10 * (1 + np.linalg.norm(cw.x0))
    assert abs(lk_eps.pin @ cw.x0) <= 1e-12


def test_branch_matches_closed_form(lk_branch):
    assert lk_branch.closed and lk_branch.stalled is None
    E0, N0, om = lk_closed_form(lk_branch.psi)
    assert np.max(np.abs(lk_branch.omega - om)) <= 1e-8
    assert np.max(np.abs(lk_branch.x0[:, 2] - N0)) <= 1e-8
    assert np.max(np.abs(lk_branch.x0[:, 0] - E0)) <= 1e-8


def test_branch_steps_bounded(lk_branch):
    assert np.max(np.abs(np.diff(lk_branch.unwrapped_psi()))) <= 0.1 + 1e-12


def test_sl_branch_closed():
    m = stuart_landau()
    br = continue_primary(m, 0.0, TWO_PI, seed=default_seed(m, 0.0))
    assert br.closed
    assert max(c.residual_norm for c in br.nodes) <= 1e-10
    assert np.allclose(br.omega, 1.0 + 0.05 * np.sin(br.psi), atol=1e-10)


def test_reappearance_phi_examples():
    assert reappearance_phi(CWPoint(np.zeros(3), 0.0, 0.3), 17.0) == pytest.approx(0.3)
    assert reappearance_phi(CWPoint(np.zeros(3), -0.2, 0.0), 10.0) == pytest.approx(TWO_PI - 2.0)


@settings(max_examples=15, deadline=None)
@given(st.floats(0, TWO_PI), st.floats(0, 150))
def test_reappearance_round_trip(psi, tau):
    m = lang_kobayashi({"alpha": ALPHA, "eta": ETA, "J": J, "eps": 0.05})
    cw = solve_cw(m, psi, default_seed(m, psi))
    phi = reappearance_phi(cw, tau)
    back = solve_cw_at(m, tau, phi, (cw.x0 + 1e-4, cw.omega + 1e-5))
    assert np.max(np.abs(back.x0 - cw.x0)) <= 1e-9
    assert abs(back.omega - cw.omega) <= 1e-9


def test_monotone_pieces_cyclic_merge():
    psi = np.linspace(0, TWO_PI, 41)  # last node closes the loop
    pieces = monotone_pieces(np.sin(psi), closed=True)
    assert len(pieces) == 2
    assert sorted(s for p in pieces for s in p) == list(range(40))


def test_predicted_count_synthetic_total_variation():
    psi = np.linspace(0, TWO_PI, 2001)
    nodes = [CWPoint(np.zeros(2), float(np.sin(2 * p)), float(p)) for p in psi]
    K, interval, pieces = predicted_count(PrimaryBranch(nodes, closed=True), 1.0)
    assert K == pytest.approx(8 / TWO_PI, rel=1e-5)
    assert len(pieces) == 4


def test_predicted_count_lk(lk_branch):
    K, _, pieces = predicted_count(lk_branch, 100.0)
    assert [p[1] for p in pieces] == pytest.approx([K_LK, K_LK], rel=1e-6)
    assert K == pytest.approx(2 * K_LK, rel=1e-6)
    assert all(p[2] == (6, 8) for p in pieces)


def test_constant_omega_single_cw(lk_eps):
    m = lk_eps.with_params(eta=0.0)
    br = continue_primary(m, 0.0, TWO_PI, seed=default_seed(m, 0.0))
    for tau, phi in ((0.0, 1.0), (50.0, 4.0), (123.0, 0.2)):
        rep = enumerate_cws(br, tau, phi)
        assert rep.found == 1 and rep.K == pytest.approx(0.0, abs=1e-12)


def test_zero_delay_psi_equals_phi(lk_branch):
    rep = enumerate_cws(lk_branch, 0.0, 2.2)
    assert rep.found == 1
    assert rep.cws[0].psi == pytest.approx(2.2, abs=1e-10)


@pytest.mark.parametrize("tau", [20.0, 100.0])
@pytest.mark.parametrize("phi", [0.0, 1.1, 4.5])
def test_count_matches_dense_scan(lk_branch, tau, phi):
    rep = enumerate_cws(lk_branch, tau, phi)
    assert rep.found == dense_count(tau, phi)
    for cw in rep.cws:
        assert reappearance_phi(cw, tau) == pytest.approx(phi, abs=1e-8) or \
            abs(reappearance_phi(cw, tau) - phi) == pytest.approx(TWO_PI, abs=1e-8)


def test_found_cws_distinct_and_valid(lk_eps, lk_branch):
    rep = enumerate_cws(lk_branch, 60.0, 2.0)
    psis = np.sort([c.psi for c in rep.cws])
    assert np.min(np.diff(psis)) > 1e-6
    for cw in rep.cws:
        assert cw_residual(lk_eps, cw) <= 1e-9


def test_custom_model_needs_seed():
    m = EquivariantModel(rotation_generator(2), lambda x, y, p: -x + y)
    with pytest.raises(ConfigError):
        default_seed(m)
