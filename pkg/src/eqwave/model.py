"""S^1-equivariant delay models x'(t) = f(x(t), exp(A phi) x(t - tau)).

The right-hand side ``f`` always receives the delayed state *after* the
rotation by ``exp(A phi)`` (or ``exp(A psi)`` in a rotating frame); the
solvers apply that rotation, models never do.

All states are real.  Complex amplitudes are split into (Re, Im) pairs.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, ModelEvaluationError

TWO_PI = 2.0 * np.pi

RhsFn = Callable[[np.ndarray, np.ndarray, Mapping[str, float]], np.ndarray]
JacFn = Callable[[np.ndarray, np.ndarray, Mapping[str, float]], tuple]


@dataclass(frozen=True)
class GroupGenerator:
    """Skew-symmetric generator A with exp(2 pi A) = I."""

    A: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ConfigError("generator must be a square matrix")
        if not np.allclose(A, -A.T, rtol=0.0, atol=1e-12):
            raise ConfigError("generator is not skew-symmetric")
        A = 0.5 * (A - A.T)
        err = np.max(np.abs(expm(TWO_PI * A) - np.eye(A.shape[0])))
        if err > 1e-12:
            raise ConfigError(f"exp(2*pi*A) != I (error {err:.2e}); not an S^1 action")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def action(self, theta: float) -> np.ndarray:
        return group_action(self, theta)


def rotation_generator(n: int, blocks=((0, 1),)) -> GroupGenerator:
    """Generator rotating each coordinate pair in ``blocks`` with unit speed."""
    A = np.zeros((n, n))
    for i, j in blocks:
        A[j, i] = 1.0
        A[i, j] = -1.0
    return GroupGenerator(A)


def group_action(gen: GroupGenerator, theta: float) -> np.ndarray:
    """Return exp(A theta)."""
    theta = float(theta)
    if not np.isfinite(theta):
        raise ValueError("theta must be finite")
    # reduce first: exp(A 2 pi) = I, keeps the argument of expm small
    theta = np.fmod(theta, TWO_PI)
    return expm(gen.A * theta)


@dataclass(frozen=True)
class ModelJacobians:
    M1: np.ndarray
    D2: np.ndarray


@dataclass(frozen=True)
class EquivariantModel:
    """An equivariant right-hand side together with its delay parameters.

    Parameters
    ----------
    generator : GroupGenerator
        The group generator A.
    rhs : callable
        ``rhs(x, y, params)``.  ``x`` and ``y`` have shape ``(n,)`` or
        ``(n, m)``; the result has the same shape.
    params : mapping
        Model constants.
    tau, phi : float
        Delay and feedback phase.
    jac : callable, optional
        Analytic ``(D1f, D2f)``; for batched input the blocks have shape
        ``(m, n, n)``.  Finite differences are used when absent.
    pin : array, optional
        Vector b of the pinning condition b.x0 = 0.
    """

    generator: GroupGenerator
    rhs: RhsFn
    params: Mapping[str, float] = field(default_factory=dict)
    tau: float = 0.0
    phi: float = 0.0
    jac: JacFn | None = None
    pin: np.ndarray | None = None
    name: str = "custom"

    def __post_init__(self):
        if self.tau < 0 or not np.isfinite(self.tau):
            raise ConfigError("tau must be finite and >= 0")
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "phi", float(np.mod(self.phi, TWO_PI)))
        object.__setattr__(self, "tau", float(self.tau))
        if self.pin is None:
            object.__setattr__(self, "pin", default_pin(self.generator))
        else:
            b = np.asarray(self.pin, dtype=float)
            if np.linalg.norm(self.generator.A @ b) < 1e-12:
                raise ConfigError("pinning vector lies in ker A")
            object.__setattr__(self, "pin", b)

    @property
    def n(self) -> int:
        return self.generator.n

    @property
    def A(self) -> np.ndarray:
        return self.generator.A

    def with_params(self, **changes) -> "EquivariantModel":
        """Copy with some of tau, phi, pin or model constants replaced."""
        top = {k: changes.pop(k) for k in ("tau", "phi", "pin") if k in changes}
        if changes:
            params = dict(self.params)
            params.update(changes)
            top["params"] = params
        return replace(self, **top)

    def f(self, x, y) -> np.ndarray:
        return eval_rhs(self, x, y)


def default_pin(gen: GroupGenerator) -> np.ndarray:
    """Second coordinate of the first rotation block (b = e_2 for LK)."""
    A = gen.A
    for i in range(gen.n):
        for j in range(i + 1, gen.n):
            if A[j, i] != 0.0:
                b = np.zeros(gen.n)
                b[j] = 1.0
                return b
    raise ConfigError("generator is zero; no pinning vector exists")


def eval_rhs(model: EquivariantModel, x, y) -> np.ndarray:
    """Evaluate f(x, y); ``y`` is the already-rotated delayed state."""
    out = np.asarray(model.rhs(np.asarray(x, dtype=float), np.asarray(y, dtype=float), model.params), dtype=float)
    if not np.all(np.isfinite(out)):
        raise ModelEvaluationError(f"non-finite right-hand side in model {model.name!r}")
    return out


def _fd_jacobians(model, x, y):
    n = x.size
    fx = np.empty((n, n))
    fy = np.empty((n, n))
    hx = 1e-6 * (1.0 + np.linalg.norm(x))
    hy = 1e-6 * (1.0 + np.linalg.norm(y))
    for j in range(n):
        e = np.zeros(n)
        e[j] = hx
        fx[:, j] = (eval_rhs(model, x + e, y) - eval_rhs(model, x - e, y)) / (2 * hx)
        e[j] = hy
        fy[:, j] = (eval_rhs(model, x, y + e) - eval_rhs(model, x, y - e)) / (2 * hy)
    return fx, fy


def jacobians(model: EquivariantModel, x, y, *, analytic: bool = True) -> ModelJacobians:
    """Partial derivatives D1f and D2f at a single point (x, y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("x and y must be finite")
    if analytic and model.jac is not None:
        d1, d2 = model.jac(x, y, model.params)
    else:
        d1, d2 = _fd_jacobians(model, x, y)
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    if not (np.all(np.isfinite(d1)) and np.all(np.isfinite(d2))):
        raise ModelEvaluationError("non-finite Jacobian")
    return ModelJacobians(d1, d2)


def batch_jacobians(model: EquivariantModel, X: np.ndarray, Y: np.ndarray):
    """Jacobians at the columns of ``X``/``Y`` (shape (n, m)) -> two (m, n, n) arrays."""
    if model.jac is not None:
        d1, d2 = model.jac(X, Y, model.params)
        d1, d2 = np.asarray(d1, dtype=float), np.asarray(d2, dtype=float)
    else:
        pairs = [_fd_jacobians(model, X[:, i], Y[:, i]) for i in range(X.shape[1])]
        d1 = np.array([p[0] for p in pairs])
        d2 = np.array([p[1] for p in pairs])
    if not (np.all(np.isfinite(d1)) and np.all(np.isfinite(d2))):
        raise ModelEvaluationError("non-finite Jacobian")
    return d1, d2


def equivariance_residual(model: EquivariantModel, theta, x, y) -> float:
    """Relative residual of f(R x, R y) = R f(x, y), R = exp(A theta)."""
    R = group_action(model.generator, theta)
    fxy = eval_rhs(model, x, y)
    lhs = eval_rhs(model, R @ x, R @ y)
    return float(np.linalg.norm(lhs - R @ fxy) / (1.0 + np.linalg.norm(fxy)))


# ---------------------------------------------------------------- built-ins


def _lk_rhs(x, y, p):
    alpha, eta, J, eps = p["alpha"], p["eta"], p["J"], p["eps"]
    er, ei, N = x[0], x[1], x[2]
    intensity = er * er + ei * ei
    return np.array([
        N * (er - alpha * ei) + eta * y[0],
        N * (alpha * er + ei) + eta * y[1],
        eps * (J + N + (2.0 * N + 1.0) * intensity),
    ])


def _lk_jac(x, y, p):
    alpha, eta, eps = p["alpha"], p["eta"], p["eps"]
    er, ei, N = x[0], x[1], x[2]
    one = np.ones_like(er)
    zero = np.zeros_like(er)
    d1 = np.array([
        [N * one, -alpha * N * one, er - alpha * ei],
        [alpha * N * one, N * one, alpha * er + ei],
        [2 * eps * (2 * N + 1) * er, 2 * eps * (2 * N + 1) * ei, eps * (1 + 2 * (er * er + ei * ei)) * one],
    ])
    d2 = np.array([
        [eta * one, zero, zero],
        [zero, eta * one, zero],
        [zero, zero, zero],
    ])
    if d1.ndim == 3:
        d1 = np.moveaxis(d1, -1, 0)
        d2 = np.moveaxis(d2, -1, 0)
    return d1, d2


def _sl_rhs(x, y, p):
    alpha, beta, gamma, eta = p["alpha"], p["beta"], p["gamma"], p["eta"]
    zr, zi = x[0], x[1]
    g = alpha + gamma * (zr * zr + zi * zi)
    return np.array([
        g * zr - beta * zi + eta * y[0],
        beta * zr + g * zi + eta * y[1],
    ])


def _sl_jac(x, y, p):
    alpha, beta, gamma, eta = p["alpha"], p["beta"], p["gamma"], p["eta"]
    zr, zi = x[0], x[1]
    g = alpha + gamma * (zr * zr + zi * zi)
    one = np.ones_like(zr)
    zero = np.zeros_like(zr)
    d1 = np.array([
        [g + 2 * gamma * zr * zr, -beta * one + 2 * gamma * zr * zi],
        [beta * one + 2 * gamma * zr * zi, g + 2 * gamma * zi * zi],
    ])
    d2 = np.array([[eta * one, zero], [zero, eta * one]])
    if d1.ndim == 3:
        d1 = np.moveaxis(d1, -1, 0)
        d2 = np.moveaxis(d2, -1, 0)
    return d1, d2


LK_DEFAULTS = {"alpha": 2.0, "eta": 0.1, "J": -0.5, "eps": 0.05}
SL_DEFAULTS = {"alpha": 1.0, "beta": 1.0, "gamma": -1.0, "eta": 0.05}


def _require(params, names, model_name):
    missing = [k for k in names if k not in params]
    if missing:
        raise ConfigError(f"{model_name}: missing parameter(s) {', '.join(missing)}")
    return {k: float(params[k]) for k in names}


def lang_kobayashi(params: Mapping[str, float] | None = None, tau: float = 0.0, phi: float = 0.0) -> EquivariantModel:
    """Lang-Kobayashi laser, state (Re E, Im E, N).

    E' = (1 + i alpha) N E + eta exp(i phi) E(t - tau)
    N' = eps (J + N + (2N + 1)|E|^2)
    """
    p = _require(LK_DEFAULTS if params is None else params, ("alpha", "eta", "J", "eps"), "lang_kobayashi")
    return EquivariantModel(rotation_generator(3), _lk_rhs, p, tau, phi, _lk_jac, name="lang_kobayashi")


def stuart_landau(params: Mapping[str, float] | None = None, tau: float = 0.0, phi: float = 0.0) -> EquivariantModel:
    """Stuart-Landau oscillator z' = (alpha + i beta + gamma|z|^2) z + eta exp(i phi) z(t - tau)."""
    p = _require(SL_DEFAULTS if params is None else params, ("alpha", "beta", "gamma", "eta"), "stuart_landau")
    return EquivariantModel(rotation_generator(2), _sl_rhs, p, tau, phi, _sl_jac, name="stuart_landau")


_CUSTOM: dict[str, tuple] = {}


def register_model(name: str, generator: GroupGenerator, rhs: RhsFn, jac: JacFn | None = None,
                   defaults: Mapping[str, float] | None = None) -> None:
    """Make a custom right-hand side available to :func:`model_from_config`."""
    _CUSTOM[name] = (generator, rhs, jac, dict(defaults or {}))


def builtin_models() -> dict:
    return {"lang_kobayashi": lang_kobayashi, "stuart_landau": stuart_landau}


_ALIASES = {"lk": "lang_kobayashi", "sl": "stuart_landau"}


def model_from_config(cfg: Mapping) -> EquivariantModel:
    """Build a model from ``{"model", "params", "tau", "phi"}``.

    Custom models use ``"model": "custom"`` with ``"name"`` naming a
    registered right-hand side.
    """
    if "model" not in cfg:
        raise ConfigError("model config needs a 'model' entry")
    kind = _ALIASES.get(cfg["model"], cfg["model"])
    params = cfg.get("params")
    tau = float(cfg.get("tau", 0.0))
    phi = float(cfg.get("phi", 0.0))
    builtins = builtin_models()
    if kind in builtins:
        return builtins[kind](params, tau=tau, phi=phi)
    if kind == "custom":
        name = cfg.get("name")
        if name not in _CUSTOM:
            raise ConfigError(f"custom model {name!r} is not registered")
        gen, rhs, jac, defaults = _CUSTOM[name]
        p = dict(defaults)
        p.update(params or {})
        return EquivariantModel(gen, rhs, p, tau, phi, jac, name=name)
    raise ConfigError(f"unknown model {cfg['model']!r}")


def model_to_config(model: EquivariantModel) -> dict:
    return {"model": model.name if model.name in builtin_models() else "custom",
            **({} if model.name in builtin_models() else {"name": model.name}),
            "params": dict(model.params), "tau": model.tau, "phi": model.phi}
