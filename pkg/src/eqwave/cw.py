"""Continuous waves x(t) = exp(A omega t) x0: solving, continuation, counting."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .errors import (ConfigError, DomainError, EqwaveError, NoConvergenceError, RankDeficiencyError,
                     ResolutionError)
from .model import TWO_PI, EquivariantModel, eval_rhs, group_action, jacobians

log = logging.getLogger(__name__)

NEWTON_TOL = 1e-10
NEWTON_MAXIT = 25


@dataclass(frozen=True)
class CWPoint:
    x0: np.ndarray
    omega: float
    psi: float
    residual_norm: float = 0.0

    def phi_at(self, tau: float) -> float:
        return reappearance_phi(self, tau)


@dataclass
class PrimaryBranch:
    """CWs sampled along the primary set psi -> (X0(psi), Omega(psi)).

    ``fold_indices`` lists node indices where psi reverses direction;
    the branch is smooth between consecutive folds.
    """

    nodes: list
    branch_id: int = 0
    closed: bool = False
    model: EquivariantModel | None = None
    fold_indices: list = field(default_factory=list)
    stalled: str | None = None

    @property
    def psi(self) -> np.ndarray:
        return np.array([c.psi for c in self.nodes])

    @property
    def omega(self) -> np.ndarray:
        return np.array([c.omega for c in self.nodes])

    @property
    def x0(self) -> np.ndarray:
        return np.array([c.x0 for c in self.nodes])

    def unwrapped_psi(self) -> np.ndarray:
        return np.unwrap(self.psi)

    def __len__(self):
        return len(self.nodes)


@dataclass
class PieceCount:
    """Counting result on one monotone-Omega piece of a branch."""

    segments: list
    K: float
    predicted: tuple
    found: int


@dataclass
class CWCountReport:
    K: float
    predicted: tuple
    found: int
    cws: list
    tau: float
    phi: float
    pieces: list = field(default_factory=list)


# ------------------------------------------------------------------ solving


def _cw_system(model, x0, omega, psi):
    R = group_action(model.generator, psi)
    y = R @ x0
    F = eval_rhs(model, x0, y) - omega * (model.A @ x0)
    return np.append(F, model.pin @ x0), R, y


def _newton(resid_jac, z0, what):
    z = np.array(z0, dtype=float)
    F, J = resid_jac(z)
    nrm = np.linalg.norm(F)
    for _ in range(NEWTON_MAXIT):
        if nrm <= NEWTON_TOL * (1.0 + np.linalg.norm(z[:-1])):
            return z, nrm
        if np.linalg.cond(J) > 1e14:
            raise RankDeficiencyError(f"{what}: singular Newton Jacobian")
        dz = np.linalg.solve(J, -F)
        # Armijo backtracking on |F|
        t = 1.0
        while True:
            zt = z + t * dz
            try:
                Ft, Jt = resid_jac(zt)
                nt = np.linalg.norm(Ft)
            except ArithmeticError:
                nt = np.inf
            if nt <= (1.0 - 1e-4 * t) * nrm or t < 1e-4:
                break
            t *= 0.5
        if not np.isfinite(nt) or np.linalg.norm(t * dz) > 1e6 * (1.0 + np.linalg.norm(z)):
            raise NoConvergenceError(f"{what}: Newton step blew up", last=z, residual=nrm)
        z, F, J, nrm = zt, Ft, Jt, nt
    if nrm <= NEWTON_TOL * (1.0 + np.linalg.norm(z[:-1])):
        return z, nrm
    raise NoConvergenceError(f"{what}: no convergence in {NEWTON_MAXIT} iterations", last=z, residual=nrm)


def default_seed(model: EquivariantModel, psi: float = 0.0) -> tuple:
    """Closed-form (x0, omega) on the primary set of a built-in model at ``psi``."""
    p = model.params
    c, s = np.cos(psi), np.sin(psi)
    if model.name == "lang_kobayashi":
        N0 = -p["eta"] * c
        E2 = -(p["J"] + N0) / (2 * N0 + 1)
        if E2 <= 0:
            raise DomainError(f"no lasing CW at psi={psi:.6g}")
        return np.array([np.sqrt(E2), 0.0, N0]), p["eta"] * (s - p["alpha"] * c)
    if model.name == "stuart_landau":
        r2 = -(p["alpha"] + p["eta"] * c) / p["gamma"]
        if r2 <= 0:
            raise DomainError(f"no nontrivial CW at psi={psi:.6g}")
        return np.array([np.sqrt(r2), 0.0]), p["beta"] + p["eta"] * s
    raise ConfigError(f"no closed-form seed for model {model.name!r}; supply one")


def solve_cw(model: EquivariantModel, psi: float, guess) -> CWPoint:
    """Newton solve of f(x0, exp(A psi) x0) - A omega x0 = 0, b.x0 = 0.

    ``guess`` is ``(x0, omega)`` or a :class:`CWPoint`.
    """
    x0, omega = (guess.x0, guess.omega) if isinstance(guess, CWPoint) else guess
    n = model.n
    A, b = model.A, model.pin

    def rj(z):
        x, w = z[:n], z[n]
        F, R, y = _cw_system(model, x, w, psi)
        jac = jacobians(model, x, y)
        J = np.zeros((n + 1, n + 1))
        J[:n, :n] = jac.M1 + jac.D2 @ R - w * A
        J[:n, n] = -A @ x
        J[n, :n] = b
        return F, J

    z, nrm = _newton(rj, np.append(np.asarray(x0, float), float(omega)), "solve_cw")
    return CWPoint(z[:n], float(z[n]), float(np.mod(psi, TWO_PI)), float(nrm))


def solve_cw_at(model: EquivariantModel, tau: float, phi: float, guess) -> CWPoint:
    """Solve for a CW at fixed (tau, phi); psi = phi - omega tau is an output."""
    x0, omega = (guess.x0, guess.omega) if isinstance(guess, CWPoint) else guess
    n = model.n
    A, b = model.A, model.pin

    def rj(z):
        x, w = z[:n], z[n]
        F, R, y = _cw_system(model, x, w, phi - w * tau)
        jac = jacobians(model, x, y)
        J = np.zeros((n + 1, n + 1))
        J[:n, :n] = jac.M1 + jac.D2 @ R - w * A
        J[:n, n] = -A @ x - tau * (jac.D2 @ (A @ y))
        J[n, :n] = b
        return F, J

    z, nrm = _newton(rj, np.append(np.asarray(x0, float), float(omega)), "solve_cw_at")
    return CWPoint(z[:n], float(z[n]), float(np.mod(phi - z[n] * tau, TWO_PI)), float(nrm))


def cw_residual(model: EquivariantModel, cw: CWPoint, psi: float | None = None) -> float:
    F, _, _ = _cw_system(model, cw.x0, cw.omega, cw.psi if psi is None else psi)
    return float(np.linalg.norm(F[:-1]))


def reappearance_phi(cw: CWPoint, tau: float) -> float:
    """Feedback phase at which ``cw`` solves the system with delay ``tau``."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    return float(np.mod(cw.psi + cw.omega * tau, TWO_PI))


# ------------------------------------------------------------- continuation


def _extended_jac(model, x, w, psi):
    """Jacobian of the CW system w.r.t. (x0, omega, psi)."""
    n = model.n
    A = model.A
    F, R, y = _cw_system(model, x, w, psi)
    jac = jacobians(model, x, y)
    J = np.zeros((n + 1, n + 2))
    J[:n, :n] = jac.M1 + jac.D2 @ R - w * A
    J[:n, n] = -A @ x
    J[:n, n + 1] = jac.D2 @ (A @ y)
    J[n, :n] = model.pin
    return F, J


def _tangent(J, prev=None):
    # null vector of the (n+1) x (n+2) Jacobian
    _, _, vt = np.linalg.svd(J)
    t = vt[-1]
    if prev is not None and t @ prev < 0:
        t = -t
    elif prev is None and t[-1] < 0:
        t = -t
    return t / np.linalg.norm(t)


def _pal_correct(model, z_pred, z_prev, tangent, ds):
    n = model.n

    def rj(z):
        F, J = _extended_jac(model, z[:n], z[n], z[n + 1])
        g = tangent @ (z - z_prev) - ds
        return np.append(F, g), np.vstack([J, tangent])

    return _newton(rj, z_pred, "pseudo-arclength")


def continue_primary(model: EquivariantModel, psi_start: float = 0.0, psi_end: float = TWO_PI,
                     *, seed=None, h0: float = 0.05, h_min: float = 1e-6, h_max: float = 0.1,
                     max_steps: int = 20000, slope_switch: float = 1e4) -> PrimaryBranch:
    """Follow the primary CW set from ``psi_start`` to ``psi_end``.

    Natural-parameter steps in psi with a secant predictor; near folds
    (steep Omega or failed corrector) the step is taken in pseudo-arclength
    over (x0, omega, psi) instead.  A branch that cannot advance is
    returned partially with ``stalled`` set.
    """
    if seed is None:
        raise ValueError("continue_primary needs a seed (x0, omega) or CWPoint")
    first = solve_cw(model, psi_start, seed)
    n = model.n
    direction = 1.0 if psi_end >= psi_start else -1.0
    length = abs(psi_end - psi_start)
    nodes = [first]
    zs = [np.concatenate([first.x0, [first.omega, psi_start]])]
    h = h0
    folds = []
    stalled = None
    travelled = 0.0  # signed progress of unwrapped psi in `direction`
    steps = 0
    while travelled < length - 1e-14 and steps < max_steps:
        steps += 1
        z = zs[-1]
        hstep = min(h, length - travelled)
        secant = zs[-1] - zs[-2] if len(zs) > 1 else None
        use_pal = False
        if secant is not None and abs(secant[-1]) > 0:
            slope = abs(secant[n] / secant[-1])
            use_pal = slope > slope_switch
        elif secant is not None:
            use_pal = True
        ok = False
        if not use_pal:
            psi_new = z[-1] + direction * hstep
            if secant is not None:
                pred = z + secant * (direction * hstep / secant[-1])
            else:
                pred = z.copy()
                pred[-1] = psi_new
            try:
                cw = solve_cw(model, psi_new, (pred[:n], pred[n]))
                znew = np.concatenate([cw.x0, [cw.omega, psi_new]])
                if np.linalg.norm(znew[:-1] - z[:-1]) < 10 * max(hstep, 1e-3) * (1 + np.linalg.norm(z[:-1])):
                    ok = True
            except (NoConvergenceError, RankDeficiencyError, ArithmeticError):
                pass
        if not ok:
            # pseudo-arclength step
            F, J = _extended_jac(model, z[:n], z[n], z[-1])
            prev_t = secant / np.linalg.norm(secant) if secant is not None else None
            t = _tangent(J, prev_t)
            if prev_t is None and t[-1] * direction < 0:
                t = -t
            try:
                znew, nrm = _pal_correct(model, z + hstep * t, z, t, hstep)
                cw = CWPoint(znew[:n], float(znew[n]), float(np.mod(znew[-1], TWO_PI)), float(nrm))
                ok = True
            except (NoConvergenceError, RankDeficiencyError, ArithmeticError):
                ok = False
        if not ok:
            h *= 0.5
            if h < h_min:
                stalled = f"step below {h_min:g} at psi={z[-1]:.6g}"
                log.warning("continuation stalled: %s", stalled)
                break
            continue
        dpsi = (znew[-1] - z[-1]) * direction
        if secant is not None and dpsi * secant[-1] * direction < 0:
            folds.append(len(nodes) - 1)
        travelled += dpsi
        zs.append(znew)
        nodes.append(cw)
        h = min(h * 1.3, h_max)
    if stalled is None and travelled < length - 1e-14:
        stalled = f"max_steps={max_steps} reached"
    closed = False
    if stalled is None and abs(length - TWO_PI) < 1e-12:
        a, b = nodes[0], nodes[-1]
        closed = (abs(a.omega - b.omega) < 1e-8 and np.linalg.norm(a.x0 - b.x0) < 1e-8)
    return PrimaryBranch(nodes, 0, closed, model, folds, stalled)


def branch_on_grid(model: EquivariantModel, psis, seed) -> PrimaryBranch:
    """Solve at prescribed psi values by sequential warm starts (no folds)."""
    nodes = []
    guess = seed
    for psi in psis:
        cw = solve_cw(model, psi, guess)
        nodes.append(cw)
        guess = cw
    psis = np.asarray(psis)
    closed = bool(abs(psis[-1] - psis[0] - TWO_PI) < 1e-12
                  and abs(nodes[0].omega - nodes[-1].omega) < 1e-8)
    return PrimaryBranch(nodes, 0, closed, model)


# ----------------------------------------------------------------- counting


def _lift(branch: PrimaryBranch, tau: float) -> np.ndarray:
    return branch.unwrapped_psi() + branch.omega * tau


def refine_branch(branch: PrimaryBranch) -> PrimaryBranch:
    """Insert a solved midpoint between every pair of neighbouring nodes."""
    if branch.model is None:
        raise ResolutionError("branch carries no model; cannot refine")
    model = branch.model
    upsi = branch.unwrapped_psi()
    new = [branch.nodes[0]]
    for i in range(len(branch) - 1):
        a, b = branch.nodes[i], branch.nodes[i + 1]
        mid = 0.5 * (upsi[i] + upsi[i + 1])
        if abs(upsi[i + 1] - upsi[i]) > 1e-12:
            guess = (0.5 * (a.x0 + b.x0), 0.5 * (a.omega + b.omega))
            new.append(solve_cw(model, mid, guess))
        new.append(b)
    folds = [2 * k for k in branch.fold_indices]
    return PrimaryBranch(new, branch.branch_id, branch.closed, model, folds)


def monotone_pieces(omega: np.ndarray, closed: bool = False) -> list:
    """Group segment indices into maximal runs on which omega is monotone.

    Returns a list of segment-index lists (segment i joins nodes i and
    i+1).  On a closed branch a run crossing the seam is merged.
    """
    d = np.diff(omega)
    scale = max(np.max(np.abs(omega)), 1.0)
    sign = np.sign(np.where(np.abs(d) <= 1e-13 * scale, 0.0, d))
    pieces = [[]]
    cur = 0.0
    for i, sg in enumerate(sign):
        if sg != 0 and cur != 0 and sg != cur:
            pieces.append([])
        if sg != 0:
            cur = sg
        pieces[-1].append(i)
    if closed and len(pieces) > 1:
        first = next((v for v in sign[pieces[0]] if v != 0), 0)
        last = next((v for v in sign[pieces[-1]][::-1] if v != 0), 0)
        if first == last or first == 0 or last == 0:
            pieces[0] = pieces.pop() + pieces[0]
    return pieces


def _refine_extremum(branch: PrimaryBranch, i: int, sign: float) -> float:
    """sign * max of sign * Omega near node i, refined with the CW solver."""
    om = branch.omega
    nodes = branch.nodes
    n = len(nodes)
    if branch.model is None or n < 3:
        return float(om[i])
    u = branch.unwrapped_psi()
    if i >= 1:
        left = u[i] - u[i - 1]
    elif branch.closed:
        left = u[-1] - u[-2]
    else:
        return float(om[i])
    if i + 1 < n:
        right = u[i + 1] - u[i]
    elif branch.closed:
        right = u[1] - u[0]
    else:
        return float(om[i])
    if left * right <= 0:
        return float(om[i])  # fold: psi turns here, keep the node value
    pl, pr = sorted((u[i] - left, u[i] + right))
    model = branch.model
    state = {"g": (nodes[i].x0, nodes[i].omega)}

    def neg(p):
        cw = solve_cw(model, p, state["g"])
        state["g"] = (cw.x0, cw.omega)
        return -sign * cw.omega

    try:
        res = minimize_scalar(neg, bounds=(pl, pr), method="bounded", options={"xatol": 1e-12})
    except EqwaveError:
        return float(om[i])
    return float(max(sign * om[i], -res.fun) * sign)


def _piece_K(branch: PrimaryBranch, segs, cache=None):
    omega = branch.omega
    idx = sorted(set(segs) | {i + 1 for i in segs})
    cache = {} if cache is None else cache
    i_max = idx[int(np.argmax(omega[idx]))]
    i_min = idx[int(np.argmin(omega[idx]))]
    if ("max", i_max) not in cache:
        cache[("max", i_max)] = _refine_extremum(branch, i_max, 1.0)
    if ("min", i_min) not in cache:
        cache[("min", i_min)] = _refine_extremum(branch, i_min, -1.0)
    return float((cache[("max", i_max)] - cache[("min", i_min)]) / TWO_PI)


def predicted_count(branch: PrimaryBranch, tau: float):
    """Linear-in-delay CW count: ``(K, (lo, hi), pieces)``.

    ``K`` is the total variation of Omega over the branch divided by 2 pi,
    i.e. the sum of the piece values.
    Each monotone piece carries ``(segments, K_piece, (lo, hi))`` with
    K_piece = (Omega_max - Omega_min)/(2 pi) and the interval
    [floor(K tau) - 1, floor(K tau) + 1], clamped at zero.  Extremes of
    Omega between nodes are refined with the CW solver when the branch
    carries its model.
    """
    om = branch.omega
    cache = {}
    pieces = []
    for segs in monotone_pieces(om, branch.closed):
        Ki = _piece_K(branch, segs, cache)
        base = int(np.floor(Ki * tau))
        pieces.append((segs, Ki, (max(base - 1, 0), base + 1)))
    K = float(sum(p[1] for p in pieces))  # total variation / 2 pi
    base = int(np.floor(K * tau))
    return K, (max(base - 1, 0), base + 1), pieces


def _segment_root(model, branch, i, level, tau, upsi):
    """Root of psi + Omega(psi) tau = level on the segment between nodes i, i+1."""
    a, b = branch.nodes[i], branch.nodes[i + 1]
    pa, pb = upsi[i], upsi[i + 1]
    la, lb = pa + a.omega * tau - level, pb + b.omega * tau - level
    if la == 0.0:
        return a
    cache = {}

    def g(p):
        s = (p - pa) / (pb - pa)
        guess = (a.x0 + s * (b.x0 - a.x0), a.omega + s * (b.omega - a.omega))
        cw = solve_cw(model, p, guess)
        cache[p] = cw
        return p + cw.omega * tau - level

    if abs(pb - pa) < 1e-12:
        # fold segment: interpolate, then polish at fixed (tau, phi)
        s = la / (la - lb)
        guess = (a.x0 + s * (b.x0 - a.x0), a.omega + s * (b.omega - a.omega))
        return solve_cw_at(model, tau, level, guess)
    p = brentq(g, pa, pb, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
    return cache[p] if p in cache else solve_cw(model, p, (a.x0, a.omega))


def _levels(lift_a, lift_b, phi):
    """Levels phi + 2 pi m lying in the closed interval between the lifts."""
    lo, hi = min(lift_a, lift_b), max(lift_a, lift_b)
    m0 = int(np.ceil((lo - phi) / TWO_PI))
    m1 = int(np.floor((hi - phi) / TWO_PI))
    return [phi + TWO_PI * m for m in range(m0, m1 + 1)]


def enumerate_cws(branch: PrimaryBranch, tau: float, phi: float, *, refine: bool = True,
                  max_refinements: int = 8) -> CWCountReport:
    """All CWs on ``branch`` that exist at delay ``tau`` and phase ``phi``.

    The lift psi + Omega(psi) tau is unwrapped along the branch; every
    crossing of a level phi + 2 pi m is located by bracketing and refined
    with :func:`solve_cw`.  Each segment is treated as half-open so shared
    nodes (including the seam of a closed branch) are counted once.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    for _ in range(max_refinements + 1):
        lift = _lift(branch, tau)
        jump = np.max(np.abs(np.diff(lift))) if len(branch) > 1 else 0.0
        if jump < np.pi / 4 or not refine:
            break
        branch = refine_branch(branch)
    if len(branch) > 1 and jump > np.pi:
        raise ResolutionError(f"lift increment {jump:.3g} > pi between branch nodes")
    model = branch.model
    upsi = branch.unwrapped_psi()
    phi = float(np.mod(phi, TWO_PI))
    cws = []
    seg_of = []
    nseg = len(branch) - 1
    for i in range(nseg):
        la, lb = lift[i], lift[i + 1]
        keep_end = (i == nseg - 1) and not branch.closed
        for level in _levels(la, lb, phi):
            if level == lb and not keep_end:
                continue
            if la == lb:
                continue
            if model is None:
                s = (level - la) / (lb - la)
                a, b = branch.nodes[i], branch.nodes[i + 1]
                cw = CWPoint(a.x0 + s * (b.x0 - a.x0), a.omega + s * (b.omega - a.omega),
                             float(np.mod(upsi[i] + s * (upsi[i + 1] - upsi[i]), TWO_PI)), np.nan)
            else:
                cw = _segment_root(model, branch, i, level, tau, upsi)
            cws.append(cw)
            seg_of.append(i)
    K, interval, pieces = predicted_count(branch, tau)
    piece_counts = []
    for segs, Ki, iv in pieces:
        members = set(segs)
        found = sum(1 for j in seg_of if j in members)
        piece_counts.append(PieceCount(segs, Ki, iv, found))
    return CWCountReport(K, interval, len(cws), cws, float(tau), phi, piece_counts)
