import numpy as np
import pytest
from hypothesis import given, strategies as st

from balanced_lowrank.errors import InvalidInput
from balanced_lowrank.linalg import sym_part
from balanced_lowrank.manifold import ConstraintBasis, RestrictedStiefelPoint, feasibility_residuals, is_tangent, tangent_project
from balanced_lowrank.optimizer import (
    InnerOptimizerConfig, OptState, inner_step, plain_point, step_constrained, step_scale, step_v,
)

from conftest import basis_and_point
from oracles import adam_first_step, tangent_least_squares

SGD = InnerOptimizerConfig(kind="sgd_momentum", learning_rate=0.1)
ADAM = InnerOptimizerConfig()


def test_config_validation():
    for bad in ({"kind": "rmsprop"}, {"learning_rate": 0.0}, {"momentum": 1.0}, {"beta2": -0.1},
                {"eps_adam": 0.0}, {"weight_decay": -1.0}):
        with pytest.raises(InvalidInput):
            InnerOptimizerConfig(**bad)
    assert InnerOptimizerConfig().to_dict()["beta1"] == 0.9


def test_inner_step_examples():
    delta, state = inner_step(np.array([[1.0]]), OptState(), SGD)
    np.testing.assert_allclose(delta, [[-0.1]])
    assert state.step_count == 1
    cfg = InnerOptimizerConfig(learning_rate=0.001)
    delta, _ = inner_step(np.array([[1.0]]), OptState(), cfg)
    np.testing.assert_allclose(delta, adam_first_step(np.array([[1.0]]), 0.001), rtol=1e-15)
    assert delta[0, 0] == pytest.approx(-0.001, rel=1e-7)
    for cfg in (SGD, ADAM):
        delta, _ = inner_step(np.zeros((3, 2)), OptState(), cfg)
        assert np.array_equal(delta, np.zeros((3, 2)))


def test_sgd_momentum_accumulates():
    cfg = InnerOptimizerConfig(kind="sgd_momentum", learning_rate=0.5, momentum=0.9)
    g = np.array([[2.0]])
    d1, s1 = inner_step(g, OptState(), cfg)
    d2, s2 = inner_step(g, s1, cfg)
    np.testing.assert_allclose(d1, [[-1.0]])
    np.testing.assert_allclose(d2, [[-0.5 * (0.9 * 2 + 2)]])
    assert s2.step_count == 2


def test_inner_step_shape_mismatch():
    _, state = inner_step(np.ones((2, 2)), OptState(), ADAM)
    with pytest.raises(InvalidInput):
        inner_step(np.ones((3, 2)), state, ADAM)


def test_zero_gradient_is_identity_step(rng):
    _, p = basis_and_point(rng, 8, 3, 2)
    for cfg in (SGD, ADAM):
        q, _ = step_constrained(p, np.zeros((8, 3)), OptState(), cfg)
        assert np.linalg.norm(q.u - p.u) <= 1e-12
        v, _ = step_v(plain_point(p.u), np.zeros((8, 3)), OptState(), cfg)
        assert np.linalg.norm(v.u - p.u) <= 1e-12


def test_two_dimensional_closed_form():
    p = plain_point(np.array([[1.0], [0.0]]))
    g, lr = 0.7, 0.1
    cfg = InnerOptimizerConfig(kind="sgd_momentum", learning_rate=lr)
    q, _ = step_constrained(p, np.array([[0.0], [g]]), OptState(), cfg)
    expect = np.array([[1.0], [-lr * g]]) / np.hypot(1.0, lr * g)
    np.testing.assert_allclose(q.u, expect, atol=1e-15)


@pytest.mark.parametrize("cfg", [SGD, ADAM], ids=["sgd", "adam"])
def test_long_run_feasibility(rng, cfg):
    basis, p = basis_and_point(rng, 16, 4, 3)
    state = OptState()
    for _ in range(1000):
        p, state = step_constrained(p, rng.standard_normal((16, 4)), state, cfg)
        assert max(feasibility_residuals(basis, p.u)) <= 1e-8
    assert state.step_count == 1000


def test_step_v_matches_empty_constraint_bitwise(rng):
    _, p = basis_and_point(rng, 9, 3, 0)
    grad = rng.standard_normal((9, 3))
    a, sa = step_v(p, grad, OptState(), ADAM)
    b, sb = step_constrained(RestrictedStiefelPoint(p.u, ConstraintBasis.empty(9)), grad, OptState(), ADAM)
    assert np.array_equal(a.u, b.u) and np.array_equal(sa.first, sb.first)
    _, constrained = basis_and_point(rng, 9, 3, 1)
    with pytest.raises(InvalidInput):
        step_v(constrained, grad, OptState(), ADAM)


def test_step_v_orthonormality_long_run(rng):
    _, v = basis_and_point(rng, 12, 4, 0)
    state = OptState()
    for _ in range(1000):
        v, state = step_v(v, rng.standard_normal((12, 4)), state, SGD)
        assert np.linalg.norm(v.u.T @ v.u - np.eye(4)) <= 1e-8


def test_step_scale_examples():
    s, state = step_scale(1.0, 2.0, OptState(), SGD)
    assert s == pytest.approx(0.8)
    s, _ = step_scale(1.0, 0.0, OptState(), SGD)
    assert s == 1.0
    decayed, _ = step_scale(1.0, 0.0, OptState(), InnerOptimizerConfig(kind="sgd_momentum", learning_rate=0.1, weight_decay=0.5))
    assert decayed == pytest.approx(0.95)
    with pytest.raises(InvalidInput):
        step_scale(np.nan, 1.0, OptState(), SGD)


def test_step_scale_adam_constant_gradient_trace():
    # With a constant gradient the bias-corrected moments equal g and g^2 exactly,
    # so each step moves by lr * g / (|g| + eps).
    cfg = InnerOptimizerConfig(learning_rate=0.01)
    s, state, g = 0.5, OptState(), 3.0
    trace = [s]
    for _ in range(5):
        s, state = step_scale(s, g, state, cfg)
        trace.append(s)
    expect = 0.5 - 0.01 * g / (abs(g) + 1e-8) * np.arange(6)
    np.testing.assert_allclose(trace, expect, rtol=0, atol=1e-15)
    assert np.all(np.diff(trace) < 0)


def test_descent_on_distance_objective(rng):
    cfg = InnerOptimizerConfig(kind="sgd_momentum", learning_rate=1e-3)
    for _ in range(100):
        basis, p = basis_and_point(rng, 10, 3, 2)
        _, target = basis_and_point(rng, 10, 3, 0)
        f0 = 0.5 * np.sum((p.u - target.u) ** 2)
        q, _ = step_constrained(p, p.u - target.u, OptState(), cfg)
        assert 0.5 * np.sum((q.u - target.u) ** 2) <= f0 + 1e-15


@given(st.integers(0, 2**32 - 1))
def test_projected_gradient_is_least_squares_tangent(seed):
    rng = np.random.default_rng(seed)
    basis, p = basis_and_point(rng, 9, 2, 2)
    grad = rng.standard_normal((9, 2))
    assert np.linalg.norm(tangent_project(p, grad) - tangent_least_squares(p.u, basis.g, grad)) <= 1e-7


def test_corrected_increment_is_tangent(rng):
    basis, p = basis_and_point(rng, 16, 4, 3)
    state = OptState()
    for _ in range(20):
        g = tangent_project(p, rng.standard_normal((16, 4)))
        delta, state = inner_step(g, state, ADAM)
        delta = tangent_project(p, delta)
        assert np.linalg.norm(basis.g.T @ delta) <= 1e-9
        assert np.linalg.norm(sym_part(p.u.T @ delta)) <= 1e-9


def test_project_moments_flag(rng):
    _, p = basis_and_point(rng, 8, 2, 1)
    cfg = InnerOptimizerConfig(project_moments=True)
    _, state = step_constrained(p, rng.standard_normal((8, 2)), OptState(), cfg)
    assert is_tangent(p, state.first)
