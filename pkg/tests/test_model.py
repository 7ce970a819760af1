import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eqwave.errors import ConfigError, ModelEvaluationError
from eqwave.model import (TWO_PI, EquivariantModel, GroupGenerator, batch_jacobians,
                          equivariance_residual, eval_rhs, group_action, jacobians, lang_kobayashi,
                          model_from_config, model_to_config, rotation_generator, stuart_landau)

finite = st.floats(-3, 3, allow_nan=False)
vec3 = st.lists(finite, min_size=3, max_size=3).map(np.array)
angle = st.floats(-20, 20, allow_nan=False)


def test_generator_rejects_non_skew():
    with pytest.raises(ConfigError):
        GroupGenerator(np.array([[0.0, 1.0], [1.0, 0.0]]))


def test_generator_rejects_non_periodic_action():
    with pytest.raises(ConfigError):
        GroupGenerator(np.array([[0.0, -0.5], [0.5, 0.0]]))


def test_generator_stored_skew():
    A = rotation_generator(3).A
    assert np.array_equal(A.T, -A)


@pytest.mark.parametrize("theta", [0.0, TWO_PI])
def test_group_action_identity(theta):
    assert np.allclose(group_action(rotation_generator(3), theta), np.eye(3), atol=1e-12)


def test_group_action_quarter_turn():
    R = group_action(rotation_generator(3), np.pi / 2)
    expect = np.array([[0, -1, 0], [1, 0, 0], [0, 0, 1.0]])
    assert np.allclose(R, expect, atol=1e-14)


@given(angle, angle)
def test_group_action_is_homomorphism(a, b):
    g = rotation_generator(3)
    assert np.allclose(group_action(g, a) @ group_action(g, b), group_action(g, a + b), atol=1e-12)


def test_lk_off_state_is_equilibrium():
    m = lang_kobayashi({"alpha": 2, "eta": 0.1, "J": -0.5, "eps": 0.05})
    x = np.array([0.0, 0.0, 0.5])
    assert np.allclose(eval_rhs(m, x, x), 0.0, atol=1e-15)


def test_sl_unit_circle():
    m = stuart_landau({"alpha": 1, "beta": 0, "gamma": -1, "eta": 0})
    out = eval_rhs(m, np.array([1.0, 0.0]), np.array([0.3, -2.0]))
    assert np.allclose(out, 0.0, atol=1e-15)


@settings(max_examples=60)
@given(angle, vec3, vec3)
def test_lk_equivariance(theta, x, y):
    m = lang_kobayashi({"alpha": 2, "eta": 0.1, "J": -0.5, "eps": 0.05})
    assert equivariance_residual(m, theta, x, y) <= 1e-10 * (1 + np.linalg.norm(eval_rhs(m, x, y)))


@settings(max_examples=60)
@given(angle, vec3, vec3)
def test_sl_equivariance(theta, x, y):
    m = stuart_landau()
    assert equivariance_residual(m, theta, x[:2], y[:2]) <= 1e-12 * (1 + np.linalg.norm(eval_rhs(m, x[:2], y[:2])))


def test_linear_model_jacobians():
    B = np.array([[-1.0, -2.0], [2.0, -1.0]])
    C = np.array([[0.5, -0.1], [0.1, 0.5]])
    m = EquivariantModel(rotation_generator(2), lambda x, y, p: B @ x + C @ y)
    jac = jacobians(m, np.array([0.3, -0.7]), np.array([1.0, 2.0]))
    assert np.allclose(jac.M1, B, atol=1e-9)
    assert np.allclose(jac.D2, C, atol=1e-9)


def test_lk_jacobian_at_zero_field():
    m = lang_kobayashi({"alpha": 2, "eta": 0.1, "J": -0.5, "eps": 0.05})
    N = 0.3
    jac = jacobians(m, np.array([0.0, 0.0, N]), np.zeros(3))
    assert np.allclose(jac.M1[:2, :2], N * np.array([[1, -2], [2, 1]]), atol=1e-14)


@settings(max_examples=30)
@given(vec3, vec3)
def test_lk_analytic_matches_fd(x, y):
    m = lang_kobayashi({"alpha": 2, "eta": 0.1, "J": -0.5, "eps": 0.05})
    a = jacobians(m, x, y)
    fd = jacobians(m, x, y, analytic=False)
    assert np.max(np.abs(a.M1 - fd.M1)) <= 1e-6 * (1 + np.linalg.norm(x) ** 2)
    assert np.max(np.abs(a.D2 - fd.D2)) <= 1e-6


def test_fd_directional_derivative(rng):
    m = stuart_landau()
    x, y, v = rng.standard_normal((3, 2))
    jac = jacobians(m, x, y, analytic=False)
    h = 1e-6 * (1 + np.linalg.norm(x))
    dd = (eval_rhs(m, x + h * v, y) - eval_rhs(m, x, y)) / h
    assert np.allclose(dd, jac.M1 @ v, atol=1e-4)


def test_batch_jacobians_match_pointwise(rng):
    m = lang_kobayashi({"alpha": 2, "eta": 0.1, "J": -0.5, "eps": 0.05})
    X, Y = rng.standard_normal((2, 3, 5))
    d1, d2 = batch_jacobians(m, X, Y)
    for i in range(5):
        j = jacobians(m, X[:, i], Y[:, i])
        assert np.allclose(d1[i], j.M1) and np.allclose(d2[i], j.D2)


def test_default_pin_not_in_kernel():
    m = lang_kobayashi({"alpha": 2, "eta": 0.1, "J": -0.5, "eps": 0.05})
    assert np.array_equal(m.pin, [0.0, 1.0, 0.0])
    assert np.allclose(m.A @ m.pin, [-1.0, 0.0, 0.0])


def test_pin_in_kernel_rejected():
    with pytest.raises(ConfigError):
        lang_kobayashi().with_params(pin=np.array([0.0, 0.0, 1.0]))


def test_missing_parameter():
    with pytest.raises(ConfigError):
        lang_kobayashi({"alpha": 2.0, "eta": 0.1})


def test_non_finite_rhs():
    m = EquivariantModel(rotation_generator(2), lambda x, y, p: np.full_like(x, np.nan))
    with pytest.raises(ModelEvaluationError):
        eval_rhs(m, np.ones(2), np.ones(2))


def test_negative_delay_rejected():
    with pytest.raises(ConfigError):
        lang_kobayashi(tau=-1.0)


def test_config_round_trip():
    m = lang_kobayashi({"alpha": 2, "eta": 0.1, "J": -0.5, "eps": -0.05}, tau=3.0, phi=7.0)
    m2 = model_from_config(model_to_config(m))
    assert m2.params == m.params and m2.tau == m.tau and m2.phi == pytest.approx(7.0 - TWO_PI)


def test_config_aliases_and_errors():
    assert model_from_config({"model": "sl"}).name == "stuart_landau"
    with pytest.raises(ConfigError):
        model_from_config({"model": "nope"})
    with pytest.raises(ConfigError):
        model_from_config({})
