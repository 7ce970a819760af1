"""Method-of-steps integration of x'(t) = f(x(t), exp(A phi) x(t - tau)).

Classical RK4 on a uniform grid whose step divides the delay; delayed
values at half steps come from cubic Hermite interpolation of stored
values and derivatives, which keeps the scheme fourth order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ResolutionError
from .model import TWO_PI, EquivariantModel, eval_rhs, group_action

BLOWUP = 1e8


@dataclass
class HistorySegment:
    """Initial data on a uniform mesh covering [-tau, 0]."""

    mesh: np.ndarray
    values: np.ndarray
    derivs: np.ndarray

    def __post_init__(self):
        self.mesh = np.asarray(self.mesh, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.derivs = np.asarray(self.derivs, dtype=float)

    @classmethod
    def from_function(cls, fn, tau: float, h: float, dfn=None) -> "HistorySegment":
        """Sample ``fn`` (and its derivative ``dfn``) on [-tau, 0] with step ``h``."""
        m = max(int(round(tau / h)), 1) if tau > 0 else 1
        mesh = np.linspace(-tau, 0.0, m + 1) if tau > 0 else np.array([-h, 0.0])
        vals = np.array([fn(t) for t in mesh])
        if dfn is None:
            eps = 1e-5 * max(h, 1e-3)
            ders = np.array([(np.asarray(fn(t + eps)) - np.asarray(fn(t - eps))) / (2 * eps) for t in mesh])
        else:
            ders = np.array([dfn(t) for t in mesh])
        return cls(mesh, vals, ders)

    @classmethod
    def constant(cls, x, tau: float, h: float) -> "HistorySegment":
        x = np.asarray(x, dtype=float)
        return cls.from_function(lambda t: x, tau, h, lambda t: np.zeros_like(x))

    @classmethod
    def from_cw(cls, model: EquivariantModel, cw, tau: float, h: float) -> "HistorySegment":
        A = model.A

        def fn(t):
            return group_action(model.generator, cw.omega * t) @ cw.x0

        return cls.from_function(fn, tau, h, lambda t: cw.omega * (A @ fn(t)))

    @classmethod
    def from_mw(cls, model: EquivariantModel, mw, tau: float, h: float) -> "HistorySegment":
        A = model.A

        def fn(t):
            return group_action(model.generator, mw.omega * t) @ mw.profile(mw.beta * t)

        def dfn(t):
            R = group_action(model.generator, mw.omega * t)
            return mw.omega * (A @ fn(t)) + mw.beta * (R @ mw.profile_derivative(mw.beta * t))

        return cls.from_function(fn, tau, h, dfn)


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    rotation_block: tuple = (0, 1)
    meta: dict = field(default_factory=dict)

    @property
    def amplitude(self) -> np.ndarray:
        i, j = self.rotation_block
        return np.hypot(self.x[:, i], self.x[:, j])

    @property
    def phase(self) -> np.ndarray:
        i, j = self.rotation_block
        return np.arctan2(self.x[:, j], self.x[:, i])


def _rotation_block(A):
    idx = np.argwhere(np.abs(A) > 0)
    if idx.size == 0:
        return (0, 1)
    i, j = sorted(idx[0])
    return (int(i), int(j))


def integrate(model: EquivariantModel, history: HistorySegment, t_end: float, h: float | None = None,
              *, save_every: int = 1) -> Trajectory:
    """RK4 method of steps from t = 0 to ``t_end``.

    ``h`` defaults to tau/64 and is adjusted down so that tau/h is an
    integer; the history mesh must use the same step.
    """
    tau = model.tau
    if tau <= 0:
        raise ValueError("integrate needs tau > 0")
    m = int(round(tau / (h if h is not None else tau / 64)))
    if m < 16:
        raise ResolutionError("step must satisfy h <= tau/16")
    h = tau / m
    if history.mesh.size != m + 1 or abs(history.mesh[0] + tau) > 1e-9 * tau or abs(history.mesh[-1]) > 1e-12:
        raise ValueError("history mesh must cover [-tau, 0] with step tau/m")
    R = group_action(model.generator, model.phi)
    nsteps = int(np.ceil(t_end / h - 1e-9))
    n = model.n
    X = np.empty((m + nsteps + 1, n))
    F = np.empty_like(X)
    X[: m + 1] = history.values
    F[: m + 1] = history.derivs
    rhs = model.rhs
    p = model.params
    half = 0.5 * h
    eighth = h / 8.0
    x = X[m].copy()
    for k in range(nsteps):
        i = m + k  # index of current time
        yd0 = R @ X[i - m]
        yd1 = R @ X[i - m + 1]
        ydm = R @ (0.5 * (X[i - m] + X[i - m + 1]) + eighth * (F[i - m] - F[i - m + 1]))
        k1 = np.asarray(rhs(x, yd0, p))
        k2 = np.asarray(rhs(x + half * k1, ydm, p))
        k3 = np.asarray(rhs(x + half * k2, ydm, p))
        k4 = np.asarray(rhs(x + h * k3, yd1, p))
        F[i] = k1
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        X[i + 1] = x
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP:
            raise DivergenceError(f"solution escaped at t={(k + 1) * h:.6g}", escape_time=(k + 1) * h)
    F[m + nsteps] = eval_rhs(model, x, R @ X[nsteps])
    idx = np.arange(m, m + nsteps + 1, save_every)
    t = (idx - m) * h
    return Trajectory(t, X[idx].copy(), _rotation_block(model.A), {"h": h, "tau": tau, "phi": model.phi})


def integrate_tail(model, history, t_end, h=None, *, keep: float | None = None, save_every=1):
    """Integrate and return a new history from the final delay interval, plus the trajectory."""
    traj = integrate(model, history, t_end, h, save_every=1)
    hh = traj.meta["h"]
    m = int(round(model.tau / hh))
    vals = traj.x[-(m + 1):]
    R = group_action(model.generator, model.phi)
    # derivatives: need delayed values one delay further back
    back = traj.x[-(2 * m + 1): -m] if traj.x.shape[0] >= 2 * m + 1 else None
    if back is None:
        ders = np.gradient(vals, hh, axis=0)
    else:
        ders = np.array([eval_rhs(model, v, R @ b) for v, b in zip(vals, back)])
    hist = HistorySegment(np.linspace(-model.tau, 0, m + 1), vals, ders)
    if keep is not None:
        cut = traj.t >= traj.t[-1] - keep
        traj = Trajectory(traj.t[cut], traj.x[cut], traj.rotation_block, traj.meta)
    if save_every > 1:
        traj = Trajectory(traj.t[::save_every], traj.x[::save_every], traj.rotation_block, traj.meta)
    return hist, traj


# ------------------------------------------------------------- frequencies


def fft_peak(signal: np.ndarray, dt: float, fmin: float = 0.0) -> float:
    """Angular frequency of the largest spectral peak (Hann window, parabolic bin interpolation)."""
    s = np.asarray(signal, dtype=float)
    s = s - s.mean()
    w = np.hanning(s.size)
    spec = np.abs(np.fft.rfft(s * w))
    freqs = np.fft.rfftfreq(s.size, dt) * TWO_PI
    spec[freqs <= fmin] = 0.0
    k = int(np.argmax(spec))
    if 0 < k < spec.size - 1:
        # parabola through log magnitudes (Gaussian-like peak)
        a, b, c = np.log(spec[k - 1: k + 2] + 1e-300)
        delta = 0.5 * (a - c) / (a - 2 * b + c)
    else:
        delta = 0.0
    return float((k + delta) * (freqs[1] - freqs[0]))


def rotation_rate(traj: Trajectory) -> float:
    """Mean angular velocity of the rotation-block phase."""
    ph = np.unwrap(traj.phase)
    t = traj.t
    slope, _ = np.polyfit(t - t[0], ph, 1)
    return float(slope)


def extract_frequencies(traj: Trajectory, invariant=None) -> tuple:
    """(beta, omega_mean) from a trajectory on a modulated wave.

    ``beta`` is the FFT peak of an S^1-invariant observable (default: the
    squared amplitude of the rotation block); ``omega_mean`` is the mean
    rotation rate.
    """
    dt = traj.t[1] - traj.t[0]
    obs = traj.amplitude ** 2 if invariant is None else invariant(traj.x)
    return fft_peak(obs, dt), rotation_rate(traj)


# ----------------------------------------------------------- orbit distance


def _trig_max(x, r, A, grid=64):
    """Maximize x . exp(A theta) r over theta for each row pair; returns theta."""
    from scipy.linalg import expm

    thetas = np.linspace(0, TWO_PI, grid, endpoint=False)
    Rs = np.array([expm(A * th) for th in thetas])
    vals = np.einsum("ti,kij,tj->tk", x, Rs, r)
    th = thetas[np.argmax(vals, axis=1)]
    for _ in range(30):
        Rt = np.array([expm(A * s) for s in th])
        ARr = np.einsum("ij,tjk,tk->ti", A, Rt, r)
        AARr = np.einsum("ij,tj->ti", A, ARr)
        g1 = np.einsum("ti,ti->t", x, ARr)
        g2 = np.einsum("ti,ti->t", x, AARr)
        step = np.where(g2 < 0, -g1 / np.where(g2 == 0, -1.0, g2), 0.0)
        th = th + step
        if np.max(np.abs(step)) < 1e-14:
            break
    return th


def group_distance(model: EquivariantModel, x: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """min over theta of |x - exp(A theta) ref| for each row."""
    x = np.atleast_2d(x)
    ref = np.atleast_2d(ref)
    if ref.shape[0] == 1:
        ref = np.repeat(ref, x.shape[0], axis=0)
    th = _trig_max(x, ref, model.A)
    from scipy.linalg import expm

    Rt = np.array([expm(model.A * s) for s in th])
    return np.linalg.norm(x - np.einsum("tij,tj->ti", Rt, ref), axis=1)


def orbit_distance_mw(model: EquivariantModel, x: np.ndarray, mw, ngrid: int = 128) -> np.ndarray:
    """Distance of each state to the torus {exp(A theta) a(s)} of a modulated wave."""
    from scipy.optimize import minimize_scalar

    s_grid = np.linspace(0, TWO_PI, ngrid, endpoint=False)
    prof = mw.profile(s_grid).T  # (ngrid, n)
    out = np.empty(x.shape[0])
    for i, xi in enumerate(x):
        d = group_distance(model, np.repeat(xi[None], ngrid, axis=0), prof)
        k = int(np.argmin(d))

        def fun(s):
            return group_distance(model, xi[None], mw.profile(np.array([s])).T)[0]

        res = minimize_scalar(fun, bracket=(s_grid[k] - TWO_PI / ngrid, s_grid[k], s_grid[k] + TWO_PI / ngrid),
                              tol=1e-12)
        out[i] = min(res.fun, d[k])
    return out


@dataclass
class ConvergenceFit:
    t: np.ndarray
    distance: np.ndarray
    rate: float
    converging: bool


def fit_rate(t: np.ndarray, d: np.ndarray, tail: float = 0.5) -> float:
    """Exponential rate of ``d`` over the final ``tail`` fraction, fitted on the upper envelope."""
    cut = t >= t[0] + (1 - tail) * (t[-1] - t[0])
    tt, dd = t[cut], np.log(np.maximum(d[cut], 1e-300))
    peaks = np.nonzero((dd[1:-1] >= dd[:-2]) & (dd[1:-1] > dd[2:]))[0] + 1
    if peaks.size >= 4:
        tt, dd = tt[peaks], dd[peaks]
    slope, _ = np.polyfit(tt, dd, 1)
    return float(slope)


def converge_to_orbit(model: EquivariantModel, traj: Trajectory, reference, *, tail: float = 0.5,
                      stride: int = 1) -> ConvergenceFit:
    """Group-quotient distance to a CW or MW and its fitted exponential rate."""
    tau = model.tau
    if traj.t[-1] - traj.t[0] < 20 * tau:
        raise ValueError("trajectory must span at least 20 delay intervals")
    t = traj.t[::stride]
    x = traj.x[::stride]
    if hasattr(reference, "x0"):
        d = group_distance(model, x, reference.x0)
    else:
        d = orbit_distance_mw(model, x, reference)
    rate = fit_rate(t, d, tail)
    cut = t >= t[0] + (1 - tail) * (t[-1] - t[0])
    return ConvergenceFit(t, d, rate, bool(rate < 0 and d[cut][-1] < d[cut][0]))
