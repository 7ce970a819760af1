"""Floquet multipliers of modulated waves.

The variational equation of the profile BVP,

    beta v'(y) = [-A omega + D1f(y)] v(y) + D2f(y) R v(y - beta tau),

is periodic in y with period 2 pi.  Its period map acts on histories
sampled on a uniform mesh over [-beta tau, 0]; one application is p RK4
steps of size 2 pi / p with delayed values from local Lagrange
interpolation on the mesh.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, eigs

from .errors import EqwaveError, ResolutionError
from .model import TWO_PI, EquivariantModel, batch_jacobians, group_action
from .mw import MWSolution, diff_matrix, evaluate, solve_mw, reappear_mw

STENCIL = 8
FLOQUET_TOL = 1e-8
TRIVIAL_TOL = 1e-6
DENSE_LIMIT = 1800


def _lagrange_weights(frac: float, q: int = STENCIL) -> tuple:
    """Weights for value at index offset ``frac`` using nodes floor-based, q points."""
    base = int(np.floor(frac))
    nodes = np.arange(base - q // 2 + 1, base + q // 2 + 1)
    x = frac
    w = np.ones(q)
    for i, xi in enumerate(nodes):
        for j, xj in enumerate(nodes):
            if i != j:
                w[i] *= (x - xj) / (xi - xj)
    return nodes, w


class PeriodMap:
    """Discretized period map of the variational equation around ``mw``.

    The state is the history v(y_i), y_i = i h for i = -L..0, stacked
    point-major into a vector of length n (L + 1).
    """

    def __init__(self, model: EquivariantModel, mw: MWSolution, p: int | None = None,
                 min_per_delay: int = 64, min_per_period: int = 512):
        self.model = model
        self.mw = mw
        n = model.n
        d = mw.beta * mw.tau
        if d <= 0:
            raise ValueError("period map needs beta tau > 0")
        if p is None:
            p = max(min_per_period, int(np.ceil(min_per_delay * TWO_PI / d)))
        self.p = p
        self.h = h = TWO_PI / p
        self.delay_steps = m = d / h
        if m < 1 + STENCIL // 2:
            raise ResolutionError("delay shorter than the interpolation stencil; increase p")
        self.L = L = int(np.ceil(m)) + STENCIL // 2 + 1
        self.n = n
        self.dim = n * (L + 1)
        # coefficient matrices at y_j + c h for c in {0, 1/2, 1}
        ys = h * np.arange(2 * p + 1) / 2.0  # half-step grid on [0, 2 pi]
        U = evaluate(mw.values, ys)  # (2p+1, n)
        Ud = evaluate(mw.values, ys - d)
        R = group_action(model.generator, mw.phi - mw.omega * mw.tau)
        d1, d2 = batch_jacobians(model, U.T, (Ud @ R.T).T)
        self.P = (d1 - mw.omega * model.A[None]) / mw.beta  # (2p+1, n, n)
        self.Q = (d2 @ R) / mw.beta
        # delayed positions relative to the current index j: j + c - m
        self.interp = {}
        for key, c in (("0", 0.0), ("h", 0.5), ("1", 1.0)):
            nodes, w = _lagrange_weights(c - m)
            self.interp[key] = (nodes, w)

    def _delayed(self, V, j, key):
        nodes, w = self.interp[key]
        return np.tensordot(w, V[j + nodes], axes=(0, 0))

    def apply(self, X: np.ndarray, steps: tuple | None = None) -> np.ndarray:
        """Apply the map to columns of ``X`` (shape (dim, K)); ``steps`` = (start, stop) substeps."""
        n, L, p, h = self.n, self.L, self.p, self.h
        X = np.asarray(X)
        K = X.shape[1]
        start, stop = (0, p) if steps is None else steps
        V = np.empty((L + 1 + stop - start, n, K), dtype=np.result_type(X, float))
        V[: L + 1] = X.reshape(L + 1, n, K)
        P, Q = self.P, self.Q
        for s in range(start, stop):
            j = L + s - start
            v = V[j]
            k1 = P[2 * s] @ v + Q[2 * s] @ self._delayed(V, j, "0")
            ydh = Q[2 * s + 1] @ self._delayed(V, j, "h")
            k2 = P[2 * s + 1] @ (v + 0.5 * h * k1) + ydh
            k3 = P[2 * s + 1] @ (v + 0.5 * h * k2) + ydh
            k4 = P[2 * s + 2] @ (v + h * k3) + Q[2 * s + 2] @ self._delayed(V, j, "1")
            V[j + 1] = v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        return V[-(L + 1):].reshape(self.dim, K)

    def matrix(self, steps: tuple | None = None) -> np.ndarray:
        return self.apply(np.eye(self.dim), steps)

    def sample(self, fn) -> np.ndarray:
        """Stack ``fn(y)`` (shape (n,)) over the history mesh y = -L h .. 0."""
        ys = self.h * np.arange(-self.L, 1)
        return np.concatenate([fn(y) for y in ys])

    def multipliers(self, m: int = 10) -> np.ndarray:
        if self.dim <= DENSE_LIMIT:
            mu = sla.eigvals(self.matrix())
        else:
            op = LinearOperator((self.dim, self.dim), matvec=lambda v: self.apply(v.reshape(-1, 1))[:, 0],
                                dtype=float)
            mu = eigs(op, k=min(m + 4, self.dim - 2), which="LM", return_eigenvectors=False, tol=1e-12)
        return mu[np.argsort(-np.abs(mu))][:m]


@dataclass
class FloquetReport:
    multipliers: np.ndarray
    trivial: tuple
    trivial_error: float
    cls: str
    p: int = 0
    tau: float = 0.0
    period: float = 0.0

    @property
    def nontrivial(self) -> np.ndarray:
        keep = [i for i in range(self.multipliers.size) if i not in self.trivial]
        return self.multipliers[keep]

    def max_exponent(self) -> float:
        """Largest nontrivial Floquet exponent ln|mu| / T (T = 2 pi / beta)."""
        nt = self.nontrivial
        return float(np.log(np.max(np.abs(nt))) / self.period) if nt.size else -np.inf


def _designate_trivial(mu):
    order = np.argsort(np.abs(mu - 1.0))
    return tuple(int(i) for i in order[:2])


def _classify(mu, trivial, tol=FLOQUET_TOL, band=TRIVIAL_TOL):
    nt = np.abs(np.delete(mu, list(trivial)))
    if nt.size == 0:
        return "stable"
    top = np.max(nt)
    if top > 1 + band:
        return "unstable"
    if top >= 1 - band:
        return "marginal"
    return "stable"


def monodromy_multipliers(model: EquivariantModel, mw: MWSolution, m: int = 10, *, p: int | None = None,
                          check: bool = True, rel_tol: float = 1e-6, max_doublings: int = 3) -> FloquetReport:
    """Largest ``m`` Floquet multipliers of ``mw``.

    With ``check`` the mesh is doubled until the top multipliers change by
    less than ``rel_tol`` (relative).
    """
    pm = PeriodMap(model, mw, p)
    mu = pm.multipliers(m)
    if check:
        for _ in range(max_doublings):
            pm2 = PeriodMap(model, mw, 2 * pm.p)
            mu2 = pm2.multipliers(m)
            if _match(mu, mu2, rel_tol):
                pm, mu = pm2, mu2
                break
            pm, mu = pm2, mu2
        else:
            raise ResolutionError("Floquet multipliers not stationary under mesh refinement")
    triv = _designate_trivial(mu)
    err = float(np.max(np.abs(mu[list(triv)] - 1.0)))
    return FloquetReport(mu, triv, err, _classify(mu, triv), pm.p, mw.tau, TWO_PI / mw.beta)


def _match(a, b, rel):
    if a.size != b.size:
        return False
    # greedy matching
    used = set()
    for x in a:
        d = np.abs(b - x)
        for i in np.argsort(d):
            if i not in used:
                used.add(i)
                if d[i] > rel * max(1.0, abs(x)):
                    return False
                break
    return True


def trivial_multiplier_check(model: EquivariantModel, mw: MWSolution, p: int | None = None,
                             extra=None) -> dict:
    """|P v - v| / |v| for v = a'(y) and v = A a(y) (and optional ``extra`` vectors)."""
    pm = PeriodMap(model, mw, p)
    dvals = diff_matrix(mw.M) @ mw.values
    A = model.A
    v1 = pm.sample(lambda y: evaluate(dvals, [y])[0])
    v2 = pm.sample(lambda y: A @ evaluate(mw.values, [y])[0])
    out = {}
    vecs = {"da/dy": v1, "A a": v2}
    if extra is not None:
        vecs.update(extra)
    for name, v in vecs.items():
        Pv = pm.apply(np.asarray(v).reshape(-1, 1))[:, 0]
        out[name] = float(np.linalg.norm(Pv - v) / np.linalg.norm(v))
    return out


# ------------------------------------------------------------ large delay


@dataclass
class TrendReport:
    k: list
    tau: list
    exponents: list
    reports: list = field(default_factory=list)
    trend: str = "insufficient data"
    truncated: bool = False


def large_delay_trend(model: EquivariantModel, mw0: MWSolution, chain: int = 3, m: int = 8,
                      tol: float = 1e-8) -> TrendReport:
    """Floquet exponents along the reappearance chain tau_k = tau0 + k T.

    The trend is ``strongly_unstable`` when the largest nontrivial exponent
    stays at a positive level as tau grows, ``stable`` / ``weakly_unstable``
    when it decays towards zero like 1/tau from below / above.
    """
    ks, taus, exps, reps = [], [], [], []
    truncated = False
    for k in range(chain + 1):
        tk, phik = reappear_mw(mw0, k)
        try:
            mwk = solve_mw(model, mw0, tk, phik)
            rep = monodromy_multipliers(model, mwk, m)
        except EqwaveError:
            truncated = True
            break
        ks.append(k)
        taus.append(tk)
        exps.append(rep.max_exponent())
        reps.append(rep)
    out = TrendReport(ks, taus, exps, reps, truncated=truncated)
    if len(ks) < 3:
        return out
    e = np.array(exps)
    t = np.array(taus)
    if np.all(e <= tol):
        out.trend = "stable"
    elif e[-1] <= tol:
        out.trend = "stable"
    else:
        # a 1/tau decay gives e[-1]/e[-2] ~ t[-2]/t[-1]; a persistent level gives ~1
        cut = 0.5 * (1.0 + t[-2] / t[-1])
        out.trend = "strongly_unstable" if e[-1] / e[-2] > cut or e[-2] <= 0 else "weakly_unstable"
    return out
