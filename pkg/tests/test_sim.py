import numpy as np
import pytest

from eqwave.cw import default_seed, reappearance_phi, solve_cw
from eqwave.cw_spectrum import cw_spectrum, nontrivial
from eqwave.errors import DivergenceError, ResolutionError
from eqwave.model import TWO_PI, group_action, stuart_landau
from eqwave.sim import (HistorySegment, converge_to_orbit, extract_frequencies, fft_peak, fit_rate,
                        group_distance, integrate)


def cw_at(model, psi, tau):
    cw = solve_cw(model, psi, default_seed(model, psi))
    return cw, model.with_params(tau=tau, phi=reappearance_phi(cw, tau))


def test_off_state_is_fixed(lk):
    m = lk.with_params(tau=3.0, phi=0.4)
    off = np.array([0.0, 0.0, 0.5])
    tr = integrate(m, HistorySegment.constant(off, 3.0, 3.0 / 64), 60.0)
    assert np.max(np.abs(tr.x - off)) <= 1e-12


def test_cw_tracked(lk):
    cw, m = cw_at(lk, 0.3, 5.0)
    h = 5.0 / 64
    tr = integrate(m, HistorySegment.from_cw(m, cw, 5.0, h), 100.0, h)
    exact = np.array([group_action(m.generator, cw.omega * t) @ cw.x0 for t in tr.t])
    assert np.max(np.abs(tr.x - exact)) <= 1e-7


def test_fourth_order_convergence(lk):
    cw, m = cw_at(lk, 0.3, 5.0)
    errs = []
    for steps in (16, 32, 64):
        h = 5.0 / steps
        tr = integrate(m, HistorySegment.from_cw(m, cw, 5.0, h), 50.0, h)
        exact = group_action(m.generator, cw.omega * tr.t[-1]) @ cw.x0
        errs.append(np.linalg.norm(tr.x[-1] - exact))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    assert all(13 <= r <= 19 for r in ratios), ratios


def test_flow_equivariance(lk, rng):
    m = lk.with_params(tau=4.0, phi=1.1)
    h = 4.0 / 64
    base = lambda t: np.array([0.6 + 0.1 * np.sin(t), 0.2 * np.cos(2 * t), -0.1])
    theta = 0.83
    R = group_action(m.generator, theta)
    t1 = integrate(m, HistorySegment.from_function(base, 4.0, h), 40.0, h)
    t2 = integrate(m, HistorySegment.from_function(lambda t: R @ base(t), 4.0, h), 40.0, h)
    assert np.max(np.abs(t1.x @ R.T - t2.x)) <= 1e-12


def test_step_must_divide_delay(lk):
    m = lk.with_params(tau=2.0)
    with pytest.raises(ResolutionError):
        integrate(m, HistorySegment.constant([0.5, 0, 0], 2.0, 0.5), 10.0, 0.5)
    with pytest.raises(ValueError):
        integrate(m, HistorySegment.constant([0.5, 0, 0], 2.0, 2.0 / 20), 10.0, 2.0 / 32)


def test_divergence_detected():
    m = stuart_landau({"alpha": 1.0, "beta": 1.0, "gamma": 1.0, "eta": 0.05}, tau=1.0)
    with pytest.raises(DivergenceError) as exc:
        integrate(m, HistorySegment.constant([1.0, 0.0], 1.0, 1.0 / 32), 50.0, 1.0 / 32)
    assert 0 < exc.value.escape_time < 50


def test_fft_peak_on_sine():
    dt = 0.01
    t = np.arange(0, 400, dt)
    assert fft_peak(np.sin(1.7 * t), dt) == pytest.approx(1.7, rel=1e-3)


def test_group_distance_invariant(lk, rng):
    x = rng.standard_normal((5, 3))
    R = group_action(lk.generator, 2.2)
    assert np.max(group_distance(lk, x @ R.T, x)) <= 1e-12


def test_fit_rate_on_decay():
    t = np.linspace(0, 100, 2001)
    assert fit_rate(t, 3 * np.exp(-0.05 * t)) == pytest.approx(-0.05, rel=1e-10)


def test_cw_unperturbed_distance_zero(lk):
    cw, m = cw_at(lk, 0.0, 5.0)
    h = 5.0 / 64
    tr = integrate(m, HistorySegment.from_cw(m, cw, 5.0, h), 120.0, h)
    fit = converge_to_orbit(m, tr, cw)
    # only the O(h^4) discretization error separates the trajectory from the orbit
    assert np.max(fit.distance) <= 1e-7


def test_sl_rotating_wave_frequencies(sl):
    cw, m = cw_at(sl, 0.4, 3.0)
    h = 3.0 / 64
    tr = integrate(m, HistorySegment.from_cw(m, cw, 3.0, h), 300.0, h)
    _, omega_mean = extract_frequencies(tr)
    assert omega_mean == pytest.approx(cw.omega, rel=1e-6)


@pytest.mark.parametrize("psi,kick", [(0.0, 1e-3), (0.7, 1e-7)])
def test_cw_rate_matches_spectrum(lk, psi, kick):
    tau = 25.0
    cw, m = cw_at(lk, psi, tau)
    rep = cw_spectrum(m, cw, tau)
    nt = nontrivial(rep.rightmost)
    lam = nt[np.argmax(nt.real)]
    h = tau / 500
    hist = HistorySegment.from_cw(m, cw, tau, h)
    hist.values += kick * np.array([1.0, 0.3, 0.1])
    tr = integrate(m, hist, max(12 / abs(lam.real), 20 * tau), h, save_every=10)
    fit = converge_to_orbit(m, tr, cw, tail=0.7)
    assert np.sign(fit.rate) == np.sign(lam.real)
    assert abs(fit.rate - lam.real) <= 0.1 * abs(lam.real)
