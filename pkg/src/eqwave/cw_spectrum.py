"""Linear stability of continuous waves.

In the frame rotating with the wave the CW is an equilibrium and its
characteristic matrix is

    Delta(lambda) = lambda I - M1 + A omega - M2 exp(-lambda tau),

with M1 = D1 f(x0, R x0), M2 = D2 f(x0, R x0) R and R = exp(A psi).
For large delay the spectrum splits into a strong part (eigenvalues of
M1 - A omega) and curves lambda ~ gamma(chi)/tau + i chi obtained from the
generalized eigenproblem (i chi - M1 + A omega) v = Y M2 v.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import MarginalStabilityError, NoFeedbackError, ResolutionError
from .model import EquivariantModel, group_action, jacobians

CLASS_TOL = 1e-8
STRONGLY_UNSTABLE = "strongly_unstable"
WEAKLY_UNSTABLE = "weakly_unstable"
STABLE = "stable"


@dataclass(frozen=True)
class CharEqData:
    M1: np.ndarray
    M2: np.ndarray
    Aomega: np.ndarray
    tau: float
    x0: np.ndarray | None = None
    A: np.ndarray | None = None

    @property
    def n(self):
        return self.M1.shape[0]

    def trivial_defect(self) -> float:
        """|(M1 + M2 - A omega) A x0|; vanishes for every CW."""
        return float(np.linalg.norm((self.M1 + self.M2 - self.Aomega) @ (self.A @ self.x0)))


def char_data(model: EquivariantModel, cw, tau: float | None = None) -> CharEqData:
    """Linearization data of ``cw`` (a CWPoint) at delay ``tau``."""
    R = group_action(model.generator, cw.psi)
    jac = jacobians(model, cw.x0, R @ cw.x0)
    return CharEqData(jac.M1, jac.D2 @ R, cw.omega * model.A, float(model.tau if tau is None else tau),
                      np.array(cw.x0), np.array(model.A))


def char_matrix(data: CharEqData, lam: complex) -> np.ndarray:
    n = data.n
    return lam * np.eye(n) - data.M1 + data.Aomega - data.M2 * np.exp(-lam * data.tau)


def char_residual(data: CharEqData, lam: complex) -> complex:
    """det Delta(lambda)."""
    return complex(np.linalg.det(char_matrix(data, lam)))


def scaled_residual(data: CharEqData, lam: complex) -> float:
    """Smallest singular value of Delta(lambda) relative to 1 + |Delta|."""
    s = np.linalg.svd(char_matrix(data, lam), compute_uv=False)
    return float(s[-1] / (1.0 + s[0]))


def strong_spectrum(data: CharEqData) -> np.ndarray:
    """Eigenvalues of M1 - A omega, by decreasing real part."""
    lam = sla.eigvals(data.M1 - data.Aomega)
    if not np.all(np.isfinite(lam)):
        raise ArithmeticError("eigensolver returned non-finite values")
    return lam[np.lexsort((-lam.imag, -lam.real))]


# ----------------------------------------------------- continuous spectrum


@dataclass
class ContinuousSpectrum:
    """Curves sampled on ``chi``; column j of ``Y``/``gamma`` is branch j.

    ``gamma`` is -1/2 ln|Y|.  ``rate`` is -ln|Y|, the limit of tau Re(lambda)
    for characteristic roots near i chi.
    """

    chi: np.ndarray
    Y: np.ndarray
    gamma: np.ndarray
    deficient: int

    @property
    def rate(self) -> np.ndarray:
        return 2.0 * self.gamma


def _deficiency(M2, tol=1e-10):
    s1 = np.linalg.svd(M2, compute_uv=False)
    s2 = np.linalg.svd(M2 @ M2, compute_uv=False)
    scale = max(s1[0], 1e-300)
    r1 = int(np.sum(s1 > tol * scale))
    r2 = int(np.sum(s2 > tol * scale * scale))
    if r1 != r2:
        raise ArithmeticError("degenerate coupling: ker M2 != ker M2^2")
    return M2.shape[0] - r1


def default_chi_max(data: CharEqData) -> float:
    rho = np.max(np.abs(np.linalg.eigvals(data.M1 - data.Aomega)))
    return float(4.0 * rho + 4.0 * np.linalg.norm(data.M2, 2))


def default_chi_grid(data: CharEqData, chi_max: float | None = None, num: int = 400) -> np.ndarray:
    chi_max = default_chi_max(data) if chi_max is None else float(chi_max)
    grid = np.linspace(-chi_max, chi_max, num)
    # the trivial touch at chi = 0 needs resolving on a log scale
    fine = chi_max * np.logspace(-6, -1, 30)
    return np.unique(np.concatenate([grid, fine, -fine, [0.0]]))


def _finite_Y(data, chi, deficient):
    n = data.n
    a = 1j * chi * np.eye(n) - data.M1 + data.Aomega
    Y = sla.eigvals(a, data.M2.astype(complex))
    Y = Y[np.isfinite(Y)]
    order = np.argsort(np.abs(Y))
    Y = Y[order]
    if Y.size > n - deficient:
        # numerically "finite" but huge: the deficient directions
        Y = Y[: n - deficient]
    return Y


def continuous_spectrum(data: CharEqData, chi_grid=None, *, refine: bool = True) -> ContinuousSpectrum:
    """Asymptotic continuous spectrum gamma_j(chi) = -1/2 ln|Y_j(chi)|."""
    if not np.any(data.M2):
        raise NoFeedbackError("M2 vanishes; only the strong spectrum is defined")
    deficient = _deficiency(data.M2)
    chi = default_chi_grid(data) if chi_grid is None else np.asarray(chi_grid, dtype=float)
    m = data.n - deficient

    def sample(c):
        Y = np.full(m, np.nan + 0j)
        y = _finite_Y(data, c, deficient)
        Y[: y.size] = y
        return Y

    Ys = np.array([sample(c) for c in chi])
    if refine and chi.size > 2:
        # add midpoints where a curve changes sign
        g = -np.log(np.abs(Ys))
        extra = []
        for j in range(m):
            s = np.sign(g[:, j])
            idx = np.nonzero(s[:-1] * s[1:] < 0)[0]
            for i in idx:
                extra.extend(np.linspace(chi[i], chi[i + 1], 9)[1:-1])
        if extra:
            chi2 = np.concatenate([chi, extra])
            order = np.argsort(chi2)
            chi = chi2[order]
            Ys = np.concatenate([Ys, np.array([sample(c) for c in extra])])[order]
    gamma = -0.5 * np.log(np.abs(Ys))
    # branch j = j-th largest gamma at each chi
    order = np.argsort(-gamma, axis=1)
    gamma = np.take_along_axis(gamma, order, axis=1)
    Ys = np.take_along_axis(Ys, order, axis=1)
    return ContinuousSpectrum(chi, Ys, gamma, deficient)


def asymptotic_rates(data: CharEqData, chi) -> np.ndarray:
    """-ln|Y_j(chi)| for each branch j at a single frequency chi."""
    deficient = _deficiency(data.M2)
    return np.sort(-np.log(np.abs(_finite_Y(data, float(chi), deficient))))[::-1]


# ----------------------------------------------------------- rightmost roots


def _cheb(N):
    """Chebyshev points on [-1, 1] and the differentiation matrix."""
    x = np.cos(np.pi * np.arange(N + 1) / N)
    c = np.ones(N + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(N + 1)
    X = np.tile(x, (N + 1, 1)).T
    dX = X - X.T
    D = np.outer(c, 1.0 / c) / (dX + np.eye(N + 1))
    D -= np.diag(D.sum(axis=1))
    return x, D


def generator_matrix(data: CharEqData, N: int) -> np.ndarray:
    """Collocation of the linearized solution operator's generator on [-tau, 0]."""
    n = data.n
    tau = data.tau
    _, D = _cheb(N)
    D = D * (2.0 / tau)  # theta = tau (x - 1) / 2
    G = np.kron(D, np.eye(n))
    G[:n, :] = 0.0
    G[:n, :n] = data.M1 - data.Aomega
    G[:n, -n:] += data.M2
    return G


def polish_root(data: CharEqData, lam: complex, maxit: int = 60, tol: float = 1e-13):
    """Newton on det Delta; returns (lambda, scaled residual)."""
    n = data.n
    tau = data.tau
    lam = complex(lam)
    for _ in range(maxit):
        Dm = char_matrix(data, lam)
        dD = np.eye(n) + tau * data.M2 * np.exp(-lam * tau)
        try:
            tr = np.trace(np.linalg.solve(Dm, dD))
        except np.linalg.LinAlgError:
            break
        if tr == 0 or not np.isfinite(tr):
            break
        step = 1.0 / tr
        lam -= step
        if abs(step) <= tol * (1.0 + abs(lam)):
            break
    return lam, scaled_residual(data, lam)


def _dedupe(vals, tol):
    out = []
    for v in vals:
        if all(abs(v - u) > tol for u in out):
            out.append(v)
    return out


def rightmost_roots(data: CharEqData, m: int = 10, *, N0: int = 32, N_max: int = 1024,
                    stat_tol: float = 1e-8, res_tol: float = 1e-8, m_max: int = 160) -> np.ndarray:
    """The ``m`` rightmost characteristic roots (decreasing real part).

    Candidates come from a Chebyshev collocation of the generator; each is
    Newton-polished on the characteristic equation.  The collocation order
    doubles until the polished set is stationary to ``stat_tol``.  When all
    ``m`` roots lie in the closed right half plane the window is widened (up
    to ``m_max``) so the result always reaches past the trivial root 0.
    """
    if data.tau <= 0:
        raise ValueError("rightmost_roots needs tau > 0")
    while True:
        roots = _rightmost(data, m, N0, N_max, stat_tol, res_tol)
        if roots.size < m or roots[-1].real < -1e-10 or m >= m_max:
            return roots
        m = min(2 * m, m_max)


def _rightmost(data, m, N0, N_max, stat_tol, res_tol):
    prev = None
    N = N0
    while N <= N_max:
        ev = sla.eigvals(generator_matrix(data, N))
        ev = ev[np.isfinite(ev)]
        ev = ev[np.argsort(-ev.real)][: 3 * m + 6]
        pol = []
        for e in ev:
            lam, res = polish_root(data, e)
            if res <= res_tol and abs(lam - e) < 0.5 + 0.1 * abs(e):
                pol.append(lam)
        pol = _dedupe(pol, 1e-7)
        pol = sorted(pol, key=lambda z: (-z.real, -z.imag))[:m]
        cur = np.array(pol)
        if prev is not None and cur.size == prev.size == m and np.max(np.abs(cur - prev)) <= stat_tol:
            return cur
        prev = cur
        N *= 2
    raise ResolutionError(f"rightmost roots not stationary up to collocation order {N_max}")


def nontrivial(roots, tol: float = 1e-6) -> np.ndarray:
    """Drop the trivial root lambda = 0 (once)."""
    roots = list(roots)
    k = int(np.argmin(np.abs(roots))) if roots else -1
    if k >= 0 and abs(roots[k]) <= tol:
        roots.pop(k)
    return np.array(roots)


def continuous_spectrum_distance(data: CharEqData, roots, strong=None, exclude: float = 1e-6) -> float:
    """max over roots of |tau Re(lambda) - (-ln|Y_j(Im lambda)|)|, nearest branch j.

    Roots closer than ``exclude`` to 0 and roots near the strong spectrum
    are ignored.
    """
    strong = strong_spectrum(data) if strong is None else strong
    worst = 0.0
    for lam in roots:
        if abs(lam) <= exclude:
            continue
        if np.min(np.abs(strong - lam)) < 0.1 * max(1.0, abs(lam)) and strong[np.argmin(np.abs(strong - lam))].real > 0:
            continue
        rates = asymptotic_rates(data, lam.imag)
        worst = max(worst, float(np.min(np.abs(data.tau * lam.real - rates))))
    return worst


# -------------------------------------------------------------- classifying


@dataclass
class SpectrumReport:
    strong_roots: np.ndarray
    continuous: ContinuousSpectrum | None
    rightmost: np.ndarray = field(default_factory=lambda: np.array([]))
    cls: str | None = None
    tau: float = 0.0


def classify_cw(report: SpectrumReport, tol: float = CLASS_TOL) -> str:
    """Large-delay class from the strong and continuous spectra.

    Raises :class:`MarginalStabilityError` when a deciding value lies in
    the band [-tol, tol].
    """
    re = np.real(report.strong_roots)
    if np.any(re > tol):
        return STRONGLY_UNSTABLE
    if np.any(np.abs(re) <= tol):
        raise MarginalStabilityError("strong spectrum on the imaginary axis")
    cs = report.continuous
    if cs is None:
        return STABLE
    g = cs.gamma.copy()
    zero = np.nonzero(cs.chi == 0.0)[0]
    for i in zero:
        # trivial touch: the branch passing through gamma = 0 at chi = 0
        j = int(np.nanargmin(np.abs(g[i])))
        g[i, j] = -np.inf
    gmax = np.nanmax(g)
    if gmax > tol:
        return WEAKLY_UNSTABLE
    if gmax >= -tol:
        nearzero = np.abs(cs.chi[np.nonzero(g >= -tol)[0]])
        # only samples hugging the trivial touch may come this close
        if np.any(nearzero > 1e-3 * np.max(np.abs(cs.chi))):
            raise MarginalStabilityError("continuous spectrum touches the axis away from chi = 0")
    return STABLE


def cw_spectrum(model: EquivariantModel, cw, tau: float | None = None, *, chi_max: float | None = None,
                m: int = 10, with_roots: bool = True) -> SpectrumReport:
    """Full spectral report for ``cw`` at delay ``tau`` (default: model.tau)."""
    data = char_data(model, cw, tau)
    strong = strong_spectrum(data)
    cont = continuous_spectrum(data, default_chi_grid(data, chi_max)) if np.any(data.M2) else None
    roots = rightmost_roots(data, m) if with_roots and data.tau > 0 else np.array([])
    report = SpectrumReport(strong, cont, roots, None, data.tau)
    try:
        report.cls = classify_cw(report)
    except MarginalStabilityError:
        report.cls = "marginal"
    return report
