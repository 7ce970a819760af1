"""Modulated waves x(t) = exp(A omega t) a(beta t) with 2 pi-periodic profile a.

The profile solves the periodic delay BVP

    beta a'(y) = -A omega a(y) + f(a(y), exp(A (phi - omega tau)) a(y - beta tau)),

discretized by trigonometric collocation on M = 2 NF + 1 equispaced
points.  The delayed profile is an exact mode-wise phase shift.  Two
phase conditions remove the time-shift and rotation symmetries.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (DegenerateSolutionError, DerivativeUnavailableError, DomainError,
                     EqwaveError, NoConvergenceError, RankDeficiencyError)
from .model import TWO_PI, EquivariantModel, batch_jacobians, eval_rhs, group_action

log = logging.getLogger(__name__)

MW_TOL = 1e-9
MAX_NEWTON = 30


# ----------------------------------------------------------- trig machinery


def grid(M: int) -> np.ndarray:
    return TWO_PI * np.arange(M) / M


def wavenumbers(M: int) -> np.ndarray:
    return np.fft.fftfreq(M, 1.0 / M)


def diff_matrix(M: int) -> np.ndarray:
    """Fourier differentiation matrix on M (odd) equispaced points."""
    k = wavenumbers(M)
    F = np.fft.fft(np.eye(M), axis=0)
    return np.real(np.fft.ifft(1j * k[:, None] * F, axis=0))


def shift_matrix(M: int, s: float) -> np.ndarray:
    """Matrix taking samples of a(y) to samples of a(y - s)."""
    k = wavenumbers(M)
    F = np.fft.fft(np.eye(M), axis=0)
    return np.real(np.fft.ifft(np.exp(-1j * k * s)[:, None] * F, axis=0))


def shift_values(U: np.ndarray, s: float) -> np.ndarray:
    """Shift samples ``U`` (shape (M, n)) by ``s`` in coefficient space."""
    M = U.shape[0]
    c = np.fft.fft(U, axis=0)
    return np.real(np.fft.ifft(np.exp(-1j * wavenumbers(M) * s)[:, None] * c, axis=0))


def evaluate(U: np.ndarray, y) -> np.ndarray:
    """Trig interpolant of samples ``U`` (M, n) at points ``y``; returns (len(y), n)."""
    M = U.shape[0]
    c = np.fft.fft(U, axis=0) / M
    k = wavenumbers(M)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    return np.real(np.exp(1j * np.outer(y, k)) @ c)


def resample(U: np.ndarray, M_new: int) -> np.ndarray:
    """Zero-pad or truncate the Fourier series to ``M_new`` (odd) points."""
    M = U.shape[0]
    c = np.fft.fft(U, axis=0) / M
    NF, NF2 = (M - 1) // 2, (M_new - 1) // 2
    out = np.zeros((M_new, U.shape[1]), dtype=complex)
    k = min(NF, NF2)
    out[: k + 1] = c[: k + 1]
    if k > 0:
        out[-k:] = c[-k:]
    return np.real(np.fft.ifft(out * M_new, axis=0))


# --------------------------------------------------------------- solutions


@dataclass
class MWSolution:
    """A modulated wave.  ``values`` holds a(y_j) at y_j = 2 pi j / M, shape (M, n)."""

    values: np.ndarray
    beta: float
    omega: float
    tau: float
    phi: float
    residual_norm: float = np.nan
    psi0: float | None = None

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def NF(self) -> int:
        return (self.M - 1) // 2

    @property
    def coeffs(self) -> np.ndarray:
        """Complex Fourier coefficients c_k, k = 0..NF, shape (NF + 1, n)."""
        return (np.fft.fft(self.values, axis=0) / self.M)[: self.NF + 1]

    @property
    def T(self) -> float:
        return TWO_PI / self.beta

    @property
    def V(self) -> float:
        return self.T * self.omega

    @property
    def psi(self) -> float:
        """Effective feedback phase phi - omega tau (mod 2 pi)."""
        return float(np.mod(self.phi - self.omega * self.tau, TWO_PI))

    def profile(self, y) -> np.ndarray:
        """a(y) with shape (n, len(y))."""
        return evaluate(self.values, y).T if np.ndim(y) else evaluate(self.values, y)[0]

    def profile_derivative(self, y) -> np.ndarray:
        dv = diff_matrix(self.M) @ self.values
        return evaluate(dv, y).T if np.ndim(y) else evaluate(dv, y)[0]

    def delayed_values(self) -> np.ndarray:
        return shift_values(self.values, self.beta * self.tau)

    def amplitude(self) -> float:
        """Size of the oscillating part of |a|^2 (zero on a continuous wave)."""
        r2 = np.sum(self.values ** 2, axis=1)
        return float(np.max(r2) - np.min(r2))


@dataclass
class DerivedQuantities:
    T: float
    V: float
    V_normalized: float


def derived(mw: MWSolution) -> DerivedQuantities:
    V = mw.V
    Vn = V - TWO_PI * np.floor((V - np.pi) / TWO_PI)
    return DerivedQuantities(mw.T, V, float(Vn))


# ------------------------------------------------------------------ residual


def _assemble(model, U, beta, omega, tau, phi, ref, jac=True):
    M, n = U.shape
    A = model.A
    D = diff_matrix(M)
    s = beta * tau
    S = shift_matrix(M, s)
    psi = phi - omega * tau
    R = group_action(model.generator, psi)
    Ud = S @ U
    Y = Ud @ R.T
    fv = eval_rhs(model, U.T, Y.T).T  # (M, n)
    DU = D @ U
    G = beta * DU + U @ (omega * A).T - fv
    dref = D @ ref
    Aref = ref @ A.T
    p1 = np.sum(dref * U) / M
    p2 = np.sum(Aref * U) / M
    F = np.concatenate([G.ravel(), [p1, p2]])
    if not jac:
        return F
    d1, d2 = batch_jacobians(model, U.T, Y.T)  # (M, n, n)
    d2R = d2 @ R
    N = M * n
    J = np.zeros((N + 2, N + 2))
    J[:N, :N] = np.kron(beta * D, np.eye(n)) + np.kron(np.eye(M), omega * A)
    # -D1 f blocks
    for j in range(M):
        J[j * n:(j + 1) * n, j * n:(j + 1) * n] -= d1[j]
    # -D2 f R S
    big = np.zeros((N, N))
    for j in range(M):
        big[j * n:(j + 1) * n, :] = np.kron(S[j], d2R[j])
    J[:N, :N] -= big
    # beta: D U - D2 R d/dbeta a(y - beta tau) = D U + tau D2 R S D U
    SDU = S @ DU
    J[:N, N] = (DU + tau * np.einsum("jab,jb->ja", d2R, SDU)).ravel()
    # omega: A U - D2 d/domega[R(phi - omega tau)] S U = A U + tau D2 A R S U
    J[:N, N + 1] = (U @ A.T + tau * np.einsum("jab,jb->ja", d2, Ud @ (A @ R).T)).ravel()
    J[N, :N] = dref.ravel() / M
    J[N + 1, :N] = Aref.ravel() / M
    return F, J


def collocation_residual(model: EquivariantModel, mw: MWSolution, M: int | None = None) -> float:
    """Max-norm BVP residual at M collocation points (default: the solution's own grid)."""
    U = mw.values if M is None else resample(mw.values, M)
    Mm = U.shape[0]
    A = model.A
    D = diff_matrix(Mm)
    R = group_action(model.generator, mw.phi - mw.omega * mw.tau)
    Y = shift_values(U, mw.beta * mw.tau) @ R.T
    G = mw.beta * (D @ U) + U @ (mw.omega * A).T - eval_rhs(model, U.T, Y.T).T
    return float(np.max(np.abs(G)))


def relative_residual(model, mw, M=None) -> float:
    return collocation_residual(model, mw, M) / (1.0 + np.max(np.linalg.norm(mw.values, axis=1)))


def _newton_mw(model, U, beta, omega, tau, phi, ref, tol, maxit):
    M, n = U.shape
    z = np.concatenate([U.ravel(), [beta, omega]])
    scale = 1.0 + np.max(np.linalg.norm(U, axis=1))
    F, J = _assemble(model, U, beta, omega, tau, phi, ref)
    nrm = np.max(np.abs(F))
    for it in range(maxit):
        if nrm <= tol * scale and it > 0:
            break
        try:
            dz = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise RankDeficiencyError("singular collocation Jacobian") from exc
        t = 1.0
        while True:
            zt = z + t * dz
            Ut = zt[:-2].reshape(M, n)
            try:
                Ft, Jt = _assemble(model, Ut, zt[-2], zt[-1], tau, phi, ref)
                nt = np.max(np.abs(Ft))
            except ArithmeticError:
                nt = np.inf
            if nt < (1 - 1e-4 * t) * nrm or t < 1e-3:
                break
            t *= 0.5
        if not np.isfinite(nt):
            raise NoConvergenceError("collocation Newton diverged", last=z, residual=nrm)
        step = np.max(np.abs(t * dz))
        z, F, J, nrm = zt, Ft, Jt, nt
        scale = 1.0 + np.max(np.linalg.norm(z[:-2].reshape(M, n), axis=1))
        if nrm <= tol * scale and step < 1e-6 * scale:
            break
    else:
        if nrm > tol * scale:
            raise NoConvergenceError(f"collocation Newton: residual {nrm:.2e} after {maxit} iterations",
                                     last=z, residual=nrm)
    if nrm > tol * scale:
        raise NoConvergenceError(f"collocation Newton: residual {nrm:.2e}", last=z, residual=nrm)
    return z[:-2].reshape(M, n), float(z[-2]), float(z[-1]), nrm, J


def solve_mw(model: EquivariantModel, guess: MWSolution, tau: float | None = None, phi: float | None = None,
             *, tol: float = MW_TOL, NF: int | None = None, NF_max: int = 128, refine_tol: float = 1e-7,
             maxit: int = MAX_NEWTON) -> MWSolution:
    """Newton solve of the modulated-wave BVP at (tau, phi).

    ``guess`` supplies the profile samples, beta and omega; (tau, phi)
    default to the model's.  The number of modes doubles until the
    residual on a twice finer grid is below ``refine_tol``.
    """
    tau = model.tau if tau is None else float(tau)
    phi = model.phi if phi is None else float(phi)
    if guess.beta <= 0:
        raise DomainError("beta guess must be positive")
    if guess.amplitude() < 1e-8:
        raise DegenerateSolutionError("guess has no oscillatory content")
    U = guess.values if NF is None else resample(guess.values, 2 * NF + 1)
    beta, omega = guess.beta, guess.omega
    while True:
        ref = U.copy()
        U, beta, omega, nrm, _ = _newton_mw(model, U, beta, omega, tau, phi, ref, tol, maxit)
        if beta <= 0:
            raise NoConvergenceError("collocation Newton converged to beta <= 0", residual=nrm)
        sol = MWSolution(U, beta, omega, tau, float(np.mod(phi, TWO_PI)), 0.0)
        if sol.amplitude() < 1e-8:
            raise DegenerateSolutionError("modulated wave collapsed onto a continuous wave")
        fine = relative_residual(model, sol, 2 * sol.M + 1)
        if fine <= refine_tol:
            sol.residual_norm = relative_residual(model, sol)
            return sol
        if sol.NF * 2 > NF_max:
            raise NoConvergenceError(f"residual on refined grid {fine:.2e} with NF={sol.NF}", residual=fine)
        U = resample(U, 4 * sol.NF + 1)


def newton_jacobian(model: EquivariantModel, mw: MWSolution) -> np.ndarray:
    _, J = _assemble(model, mw.values, mw.beta, mw.omega, mw.tau, mw.phi, mw.values)
    return J


# ----------------------------------------------------------- seeding


def mw_from_trajectory(model: EquivariantModel, traj, beta: float, omega: float, M: int = 65) -> MWSolution:
    """Profile guess a(beta t) = exp(-A omega t) x(t) over the last modulation period."""
    T = TWO_PI / beta
    t_end = traj.t[-1]
    ts = t_end - T + grid(M) / beta
    xs = np.array([np.interp(ts, traj.t, traj.x[:, i]) for i in range(model.n)]).T
    U = np.array([group_action(model.generator, -omega * t) @ x for t, x in zip(ts, xs)])
    return MWSolution(U, beta, omega, model.tau, model.phi)


def mw_from_simulation(model: EquivariantModel, cw, t_sim: float = 6000.0, *, perturb: float = 1e-3,
                       h: float | None = None, keep: float = 3000.0, M: int = 65, rng=None) -> tuple:
    """Simulate from a perturbed CW and build a profile guess from the tail.

    Returns ``(guess, (beta_fft, omega_mean))``.  The model's (tau, phi)
    set the regime; the CW only provides the initial history.
    """
    from .sim import HistorySegment, extract_frequencies, integrate_tail

    tau = model.tau
    h = tau / max(64, int(np.ceil(tau / 0.05))) if h is None else h
    hist = HistorySegment.from_cw(model, cw, tau, h)
    kick = np.ones(model.n) if rng is None else rng.standard_normal(model.n)
    hist.values[-1] = hist.values[-1] + perturb * kick
    _, traj = integrate_tail(model, hist, t_sim, h, keep=min(keep, 0.5 * t_sim))
    beta, omega = extract_frequencies(traj)
    return mw_from_trajectory(model, traj, beta, omega, M), (beta, omega)


def mw_from_hopf(model: EquivariantModel, cw, lam: complex, amplitude: float = 1e-2, M: int = 33) -> MWSolution:
    """Guess near a Hopf point of a CW: x0 + amplitude Re(v exp(i y)), beta = Im(lambda)."""
    from .cw_spectrum import char_data, char_matrix

    data = char_data(model, cw, model.tau)
    _, _, vh = np.linalg.svd(char_matrix(data, lam))
    v = vh[-1].conj()
    y = grid(M)
    U = cw.x0[None, :] + amplitude * np.real(np.outer(np.exp(1j * y), v)) / np.linalg.norm(v)
    return MWSolution(U, abs(lam.imag), cw.omega, model.tau, model.phi)


# ---------------------------------------------------------- reappearance


def reappear_mw(mw: MWSolution, k: int) -> tuple:
    """(tau_k, phi_k) at which the same modulated wave exists."""
    tau_k = mw.tau + TWO_PI / mw.beta * k
    if tau_k < 0:
        raise DomainError(f"k={k} gives negative delay {tau_k:.6g}")
    phi_k = float(np.mod(mw.phi + TWO_PI * mw.omega / mw.beta * k, TWO_PI))
    return float(tau_k), phi_k


def primary_mw_normalize(mw: MWSolution, model: EquivariantModel | None = None) -> MWSolution:
    """Representative with 0 <= tau < T and V = T omega in [pi, 3 pi)."""
    T = mw.T
    k = int(np.floor(mw.tau / T + 1e-12))
    out = mw
    if k:
        tau_p, phi_p = reappear_mw(mw, -k)
        out = replace(out, tau=tau_p, phi=phi_p)
    V = out.V
    j = -int(np.floor((V - np.pi) / TWO_PI + 1e-12))
    if j:
        if model is None:
            raise ValueError("shifting omega needs the model's generator")
        R = [group_action(model.generator, -j * yy) for yy in grid(out.M)]
        U = np.array([r @ u for r, u in zip(R, out.values)])
        out = replace(out, values=U, omega=out.omega + j * out.beta)
    return out


def normalize_omega(V: float) -> int:
    """Number j of beta-shifts bringing V + 2 pi j into [pi, 3 pi)."""
    return -int(np.floor((V - np.pi) / TWO_PI + 1e-12))


# ------------------------------------------------------------- genericity


@dataclass
class Genericity:
    matrix: np.ndarray
    rank: int
    singular_values: np.ndarray


def rank_of(matrix, rel: float = 1e-6) -> Genericity:
    s = np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)
    r = int(np.sum(s > rel * s[0])) if s[0] > 0 else 0
    return Genericity(np.asarray(matrix, dtype=float), r, s)


def TV_at(model: EquivariantModel, mw: MWSolution, chi: float, psi: float, **kw) -> tuple:
    """(T, V, solution) of the BVP re-solved at delay ``chi`` and phase ``psi``."""
    sol = solve_mw(model, mw, chi, psi, **kw)
    return sol.T, sol.T * sol.omega, sol


def genericity_rank(model: EquivariantModel, mw: MWSolution, h: float | None = None) -> Genericity:
    """Central differences of (T, V) with respect to (tau, phi) and their rank."""
    h = 1e-4 * (1.0 + mw.tau) if h is None else h
    try:
        Tp, Vp, _ = TV_at(model, mw, mw.tau + h, mw.phi)
        Tm, Vm, _ = TV_at(model, mw, mw.tau - h, mw.phi)
        Tq, Vq, _ = TV_at(model, mw, mw.tau, mw.phi + h)
        Tr, Vr, _ = TV_at(model, mw, mw.tau, mw.phi - h)
    except EqwaveError as exc:
        raise DerivativeUnavailableError(f"perturbed solve failed: {exc}") from exc
    mat = np.array([[(Tp - Tm) / (2 * h), (Tq - Tr) / (2 * h)],
                    [(Vp - Vm) / (2 * h), (Vq - Vr) / (2 * h)]])
    return rank_of(mat)


# ------------------------------------------------------------- counting


@dataclass
class CountBound:
    r: float
    tau_star: float
    k_count: int
    l_count: int
    N: int
    below_threshold: bool


def count_params_r(T0, delta0, gamma0) -> float:
    return 0.5 * min(1.0, delta0 / T0, gamma0 / (6 * np.pi))


def count_lower_bound(T0: float, V0: float, eps0: float, delta0: float, gamma0: float, tau: float) -> CountBound:
    """Guaranteed number of coexisting modulated waves at delay ``tau``."""
    if not (T0 > 0 and eps0 > 0 and delta0 > 0 and 0 < gamma0 < TWO_PI):
        raise DomainError("need T0, eps0, delta0 > 0 and 0 < gamma0 < 2 pi")
    if not (np.pi - 1e-9 <= V0 <= 3 * np.pi + 1e-9):
        raise DomainError("V0 must lie in [pi, 3 pi]")
    r = count_params_r(T0, delta0, gamma0)
    tau_star = max(2 * T0 / eps0, 8 * np.pi * T0 / gamma0)
    if tau <= tau_star:
        return CountBound(r, tau_star, 0, 0, 0, True)
    kc = int(np.floor(2 * r / T0 * tau))
    lc = int(np.floor((gamma0 - 6 * np.pi * r) / (TWO_PI * T0) * tau))
    return CountBound(r, tau_star, kc, lc, kc * lc, False)


@dataclass
class GrowthTable:
    tau: np.ndarray
    N: np.ndarray
    ratio: np.ndarray
    slope: float
    c0: float


def verify_quadratic_growth(T0, V0, eps0, delta0, gamma0, taus) -> GrowthTable:
    """N(tau)/tau^2 and the log-log slope of N over delays above tau*."""
    rows = [(t, count_lower_bound(T0, V0, eps0, delta0, gamma0, t)) for t in taus]
    rows = [(t, b.N) for t, b in rows if not b.below_threshold and b.N > 0]
    if len(rows) < 2:
        raise DomainError("need at least two delays above tau* with N > 0")
    t = np.array([r[0] for r in rows], dtype=float)
    N = np.array([r[1] for r in rows], dtype=float)
    slope = float(np.polyfit(np.log(t), np.log(N), 1)[0])
    ratio = N / t ** 2
    return GrowthTable(t, N, ratio, slope, float(ratio.min()))


def admissible_pairs(T0, V0, eps0, delta0, gamma0, tau, phi) -> list:
    """Integer pairs (k, l) with 1/eps0 < k, |tau/k - T0| < delta0, |phi/k - V0 + 2 pi l/k| < gamma0."""
    kmin = max(int(np.floor(1.0 / eps0)) + 1, int(np.ceil(tau / (T0 + delta0))), 1)
    kmax = int(np.floor(tau / max(T0 - delta0, 1e-300))) if T0 > delta0 else int(10 * tau / T0) + 1
    pairs = []
    for k in range(kmin, kmax + 1):
        if not abs(tau / k - T0) < delta0:
            continue
        lo = (k * (V0 - gamma0) - phi) / TWO_PI
        hi = (k * (V0 + gamma0) - phi) / TWO_PI
        for l in range(int(np.floor(lo)), int(np.ceil(hi)) + 1):
            if abs(phi / k - V0 + TWO_PI * l / k) < gamma0:
                pairs.append((k, l))
    return pairs


@dataclass
class FamilyMember:
    k: int
    l: int
    chi: float
    psi: float
    primary: MWSolution
    solution: MWSolution


@dataclass
class FamilyResult:
    members: list
    unresolved: list
    pairs: list
    jacobian_det: float | None = None
    warnings: list = field(default_factory=list)


def solve_perturbed(model, mw0, eps, d, g, start=None, *, tol=1e-11, maxit=20, h=1e-5):
    """Solve T(chi, psi) + eps chi = T0 + d, V(chi, psi) + eps psi = V0 + g near (tau0, phi0).

    Returns (chi, psi, solution at (chi, psi)).  The recursion for the pair
    (k, l) is the case eps = 1/k, d = tau/k - T0, g = phi/k - V0 + 2 pi l/k.
    """
    T0, V0 = mw0.T, mw0.V
    chi, psi = (mw0.tau, mw0.phi) if start is None else start
    seed = mw0
    for _ in range(maxit):
        T, V, sol = TV_at(model, seed, chi, psi)
        G = np.array([T + eps * chi - T0 - d, V + eps * psi - V0 - g])
        if np.max(np.abs(G)) < tol * (1 + abs(T) + abs(V)):
            return chi, psi, sol
        Tc, Vc, _ = TV_at(model, sol, chi + h, psi)
        Tp, Vp, _ = TV_at(model, sol, chi, psi + h)
        J = np.array([[(Tc - T) / h + eps, (Tp - T) / h],
                      [(Vc - V) / h, (Vp - V) / h + eps]])
        dx = np.linalg.solve(J, -G)
        chi, psi = chi + dx[0], psi + dx[1]
        if not (np.isfinite(chi) and np.isfinite(psi)):
            break
        seed = sol
    raise NoConvergenceError(f"perturbed (T, V) system failed at eps={eps:.3g}, d={d:.3g}, g={g:.3g}")


def solve_recursion(model, mw0, k, l, tau, phi, start=None, **kw):
    """Newton on T(chi, psi) + chi/k = tau/k, V(chi, psi) + psi/k = phi/k + 2 pi l/k."""
    return solve_perturbed(model, mw0, 1.0 / k, tau / k - mw0.T, phi / k - mw0.V + TWO_PI * l / k, start, **kw)


@dataclass
class Radii:
    eps0: float
    delta0: float
    gamma0: float
    converged: np.ndarray  # boolean (n, n, n) over the probe grid


def _probe(model, mw0, eps_max, delta_max, gamma_max, n):
    T0 = mw0.T
    es = eps_max * np.arange(1, n + 1) / n
    ds = np.linspace(-delta_max, delta_max, n)
    gs = np.linspace(-gamma_max, gamma_max, n)
    ok = np.zeros((n, n, n), dtype=bool)
    for i, e in enumerate(es):
        for j, d in enumerate(ds):
            for q, g in enumerate(gs):
                try:
                    chi, psi, _ = solve_perturbed(model, mw0, e, d, g, tol=1e-9, maxit=12)
                    ok[i, j, q] = abs(chi - mw0.tau) < T0 / 2 and abs(psi - mw0.phi) < np.pi
                except (EqwaveError, np.linalg.LinAlgError, ArithmeticError):
                    pass
    c = n // 2
    best = None
    for lev in range(c, 0, -1):
        for ie in range(n - 1, -1, -1):
            if ok[: ie + 1, c - lev: c + lev + 1, c - lev: c + lev + 1].all():
                cand = (es[ie], lev * (ds[1] - ds[0]), lev * (gs[1] - gs[0]))
                if best is None or np.prod(cand) > np.prod(best):
                    best = cand
                break
    return best, ok


def estimate_radii(model: EquivariantModel, mw0: MWSolution, eps_max: float = 0.1,
                   delta_max: float | None = None, gamma_max: float = 0.4, n: int = 5,
                   shrink: int = 4) -> Radii:
    """Probe the Newton basin of the perturbed (T, V) system on an n x n x n grid.

    Grid points are eps in (0, eps_max], d in [-delta_max, delta_max], g in
    [-gamma_max, gamma_max].  The largest nested box about d = g = 0 in
    which every point converges is halved.  A converged point must stay in
    |chi - tau0| < T0/2, |psi - phi0| < pi.  If no box converges the d and
    g ranges are halved, at most ``shrink`` times.
    """
    delta_max = 0.02 * mw0.T if delta_max is None else delta_max
    for _ in range(shrink + 1):
        best, ok = _probe(model, mw0, eps_max, delta_max, gamma_max, n)
        if best is not None:
            return Radii(0.5 * best[0], 0.5 * best[1], 0.5 * best[2], ok)
        delta_max, gamma_max = 0.5 * delta_max, 0.5 * gamma_max
    raise NoConvergenceError("no probe box with full convergence")


def beta_omega_jacobian(model, mw, h=1e-5) -> np.ndarray:
    """d(beta, omega)/d(chi, psi) by forward differences."""
    sp = solve_mw(model, mw, mw.tau + h, mw.phi)
    sq = solve_mw(model, mw, mw.tau, mw.phi + h)
    return np.array([[(sp.beta - mw.beta) / h, (sq.beta - mw.beta) / h],
                     [(sp.omega - mw.omega) / h, (sq.omega - mw.omega) / h]])


def enumerate_family(model: EquivariantModel, mw0: MWSolution, tau: float, phi: float,
                     eps0: float, delta0: float, gamma0: float, *, max_pairs: int | None = None) -> FamilyResult:
    """Modulated waves at (tau, phi) reappearing from the family around ``mw0``.

    ``mw0`` must be normalized so that V0 = T0 omega0 lies in [pi, 3 pi).
    Each admissible (k, l) is solved for (chi, psi) near (tau0, phi0);
    the resulting profile is a solution at (tau, phi).
    """
    T0, V0 = mw0.T, mw0.V
    pairs = admissible_pairs(T0, V0, eps0, delta0, gamma0, tau, phi)
    pairs.sort(key=lambda p: (abs(p[0] - tau / T0), p[1]))
    if max_pairs is not None:
        pairs = pairs[:max_pairs]
    members, unresolved = [], []
    last = None
    for k, l in pairs:
        # warm start from the previous resolved pair
        cand = last if last is not None else (mw0.tau, mw0.phi)
        try:
            try:
                chi, psi, sol = solve_recursion(model, mw0, k, l, tau, phi, cand)
            except NoConvergenceError:
                if cand == (mw0.tau, mw0.phi):
                    raise
                chi, psi, sol = solve_recursion(model, mw0, k, l, tau, phi, (mw0.tau, mw0.phi))
        except (EqwaveError, np.linalg.LinAlgError, ArithmeticError) as exc:
            log.info("pair (%d, %d) unresolved: %s", k, l, exc)
            unresolved.append((k, l))
            continue
        last = (chi, psi)
        # the profile at (chi, psi) solves the BVP at (tau, phi); polish there
        try:
            full = solve_mw(model, sol, tau, phi)
        except EqwaveError as exc:
            log.info("pair (%d, %d) polish failed: %s", k, l, exc)
            unresolved.append((k, l))
            continue
        members.append(FamilyMember(k, l, chi, psi, sol, full))
    res = FamilyResult(members, unresolved, pairs)
    try:
        Jbw = beta_omega_jacobian(model, mw0)
        res.jacobian_det = float(np.linalg.det(Jbw))
        if abs(res.jacobian_det) < 1e-10:
            res.warnings.append(f"(chi, psi) -> (beta, omega) Jacobian nearly singular; pairs {pairs}")
    except EqwaveError as exc:
        res.warnings.append(f"distinctness Jacobian unavailable: {exc}")
    bo = np.array([[m.solution.beta, m.solution.omega] for m in members])
    for i in range(len(members)):
        for j in range(i + 1, len(members)):
            if np.sum(np.abs(bo[i] - bo[j])) <= 1e-8:
                res.warnings.append(f"pairs {members[i].k, members[i].l} and {members[j].k, members[j].l} coincide")
    return res
