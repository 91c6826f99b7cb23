import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import sparse

from proxcubic.problem import (DatasetError, NonsmoothTerm, ScheduleConfig, load_sparse_text,
                               make_logistic, make_quadratic,
                               quadratic_from_matrix, reference_minimum, synth_stream)


def central_grad(fun, x, h=1e-6):
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-8)


PROBLEMS = {
    "logistic": lambda: synth_stream(1, 60, 6, "logistic"),
    "cubic_regression": lambda: synth_stream(2, 60, 6, "cubic_regression", cubic_weight=0.7),
    "quadratic": lambda: synth_stream(3, 60, 6, "quadratic"),
    "sparse_logistic": lambda: make_logistic(
        sparse.random(60, 6, density=0.5, random_state=4, format="csr"),
        np.where(np.arange(60) % 3 == 0, 1.0, -1.0)),
}


@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_per_sample_gradients_match_finite_differences(name):
    prob = PROBLEMS[name]()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(20):
        x = rng.standard_normal(prob.dim) * 0.5
        i = int(rng.integers(prob.n_samples))
        fd = central_grad(lambda z: prob.smooth_eval(z, i), x)
        worst = max(worst, rel_err(prob.smooth_grad(x, i), fd))
    assert worst <= 1e-5


@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_hessians_match_finite_differences_of_gradients(name):
    prob = PROBLEMS[name]()
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        x = rng.standard_normal(prob.dim) * 0.5
        v = rng.standard_normal(prob.dim)
        h = 1e-6
        fd = (prob.grad(x + h * v) - prob.grad(x - h * v)) / (2 * h)
        worst = max(worst, rel_err(prob.hvp(x, v), fd))
        worst = max(worst, rel_err(prob.hess(x) @ v, fd))
    assert worst <= 1e-5


@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_hvp_equals_dense_hessian_times_vector(name):
    prob = PROBLEMS[name]()
    rng = np.random.default_rng(2)
    x = rng.standard_normal(prob.dim)
    v = rng.standard_normal(prob.dim)
    for i in range(5):
        np.testing.assert_allclose(prob.smooth_hvp(x, i, v), prob.smooth_hess(x, i) @ v,
                                   rtol=1e-13, atol=1e-13)


@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_finite_sum_structure(name):
    prob = PROBLEMS[name]()
    x = np.random.default_rng(3).standard_normal(prob.dim)
    n = prob.n_samples
    vals = np.mean([prob.smooth_eval(x, i) for i in range(n)])
    grads = np.mean([prob.smooth_grad(x, i) for i in range(n)], axis=0)
    hess = np.mean([prob.smooth_hess(x, i) for i in range(n)], axis=0)
    assert abs(vals - prob.f(x)) <= 1e-12 * max(1, abs(vals))
    np.testing.assert_allclose(grads, prob.grad(x), atol=1e-12)
    np.testing.assert_allclose(hess, prob.hess(x), atol=1e-12)


@pytest.mark.parametrize("name", sorted(PROBLEMS))
def test_convexity_spot_check(name):
    prob = PROBLEMS[name]()
    rng = np.random.default_rng(4)
    for _ in range(50):
        x, y = rng.standard_normal((2, prob.dim)) * 2
        assert prob.f(0.5 * x + 0.5 * y) <= 0.5 * prob.f(x) + 0.5 * prob.f(y) + 1e-12


def test_logistic_at_origin():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((8, 3))
    y = np.array([1, -1, 1, 1, -1, -1, 1, -1.0])
    prob = make_logistic(X, y)
    for i in range(8):
        assert prob.smooth_eval(np.zeros(3), i) == pytest.approx(math.log(2), rel=1e-15)
        np.testing.assert_allclose(prob.smooth_grad(np.zeros(3), i), -y[i] * X[i] / 2, rtol=1e-15)


def test_logistic_single_sample_hvp():
    prob = make_logistic(np.array([[1.0, 0.0]]), np.array([1.0]), D=1.0)
    np.testing.assert_allclose(prob.smooth_hvp(np.zeros(2), 0, np.array([1.0, 0.0])),
                               [0.25, 0.0], atol=1e-16)


def test_logistic_constants_from_data_norms():
    X = np.array([[3.0, 4.0], [0.0, 1.0]])
    prob = make_logistic(X, np.array([1.0, -1.0]), D=2.0)
    c = prob.constants
    assert c.L3 == pytest.approx(125 / (6 * math.sqrt(3)))
    assert c.gamma1 == pytest.approx(10.0)
    assert c.tau1 == pytest.approx(math.sqrt(13.0))
    assert c.gamma2 == pytest.approx(25 / 4)
    assert c.D == 2.0
    assert make_logistic(X, np.array([1.0, -1.0]), L3=0.5, D=1.0).constants.L3 == 0.5


def test_logistic_rejects_bad_input():
    with pytest.raises(ValueError, match="dimension mismatch"):
        make_logistic(np.ones((3, 2)), np.ones(4))
    with pytest.raises(ValueError, match="labels"):
        make_logistic(np.ones((3, 2)), np.array([1.0, 0.0, 1.0]))


def test_quadratic_minimizers():
    I = np.eye(3)
    for b, h, expect in [
        (np.zeros(3), NonsmoothTerm.zero(), np.zeros(3)),
        (np.array([1.0, 0, 0]), NonsmoothTerm.zero(), np.array([1.0, 0, 0])),
    ]:
        prob = quadratic_from_matrix(I, b, h)
        x, F = reference_minimum(prob)
        np.testing.assert_allclose(x, expect, atol=1e-9)
    prob = quadratic_from_matrix(np.diag([1.0, 2.0]), np.zeros(2), NonsmoothTerm.l1(1.0))
    x, F = reference_minimum(prob, x0=np.array([3.0, -2.0]))
    np.testing.assert_allclose(x, 0.0, atol=1e-12)
    assert F == pytest.approx(0.0, abs=1e-20)


def test_quadratic_matrix_is_reproduced_and_non_psd_rejected():
    rng = np.random.default_rng(6)
    B = rng.standard_normal((4, 4))
    A = B @ B.T
    prob = quadratic_from_matrix(A, np.zeros(4))
    np.testing.assert_allclose(prob.hess(np.zeros(4)), A, atol=1e-12)
    with pytest.raises(ValueError, match="positive semidefinite"):
        quadratic_from_matrix(np.diag([1.0, -1.0]), np.zeros(2))
    with pytest.raises(ValueError, match="dimension mismatch"):
        make_quadratic(np.ones((5, 3)), np.ones(2))


def test_quadratic_single_sample_gradient():
    rng = np.random.default_rng(7)
    U = rng.standard_normal((5, 3, 2))
    b = rng.standard_normal((5, 3))
    prob = make_quadratic(U, b, D=1.0)
    x = rng.standard_normal(3)
    for i in range(5):
        Ai = U[i] @ U[i].T
        np.testing.assert_allclose(prob.smooth_grad(x, i), Ai @ x - b[i], atol=1e-14)


def test_load_sparse_text(tmp_path):
    p = tmp_path / "a.txt"
    p.write_text("+1 1:0.5 3:2.0\n")
    X, y = load_sparse_text(p)
    np.testing.assert_array_equal(X.toarray(), [[0.5, 0.0, 2.0]])
    np.testing.assert_array_equal(y, [1.0])
    p.write_text("-1 2:1\n+1 1:1\n")
    X, y = load_sparse_text(p)
    np.testing.assert_array_equal(X.toarray(), [[0, 1], [1, 0]])
    np.testing.assert_array_equal(y, [-1, 1])


@pytest.mark.parametrize("content, message", [
    ("", "empty dataset"),
    ("+1 1:0.5\n-1 3:x\n", "line 2"),
    ("+1 3:1 2:1\n", "increase"),
    ("abc 1:1\n", "line 1"),
    ("+1 0:1\n", "1-based"),
])
def test_load_sparse_text_errors(tmp_path, content, message):
    p = tmp_path / "bad.txt"
    p.write_text(content)
    with pytest.raises(DatasetError, match=message):
        load_sparse_text(p)


def test_load_sparse_text_missing_file(tmp_path):
    with pytest.raises(DatasetError, match="cannot read"):
        load_sparse_text(tmp_path / "missing.txt")


def test_synth_stream_determinism_and_moments():
    a = synth_stream(11, 400, 5, "logistic")
    b = synth_stream(11, 400, 5, "logistic")
    c = synth_stream(12, 400, 5, "logistic")
    np.testing.assert_array_equal(a.data, b.data)
    np.testing.assert_array_equal(a.targets, b.targets)
    assert np.any(a.data != c.data)
    assert np.all(np.abs(a.data.mean(axis=0)) <= 5 / math.sqrt(400))
    with pytest.raises(ValueError):
        synth_stream(1, 0, 3)
    with pytest.raises(ValueError):
        synth_stream(1, 3, 3, model="poisson")


def test_schedule_config_validation():
    with pytest.raises(ValueError):
        ScheduleConfig(L3=0.0)
    with pytest.raises(ValueError):
        ScheduleConfig(delta=1.0)
    with pytest.raises(ValueError):
        ScheduleConfig(horizon_T=0)
    assert ScheduleConfig(D=3.0).R_bound == 6.0


def test_strong_convexity_only_with_l2_part():
    assert NonsmoothTerm.l1(1.0).strong_convexity == 0.0
    assert NonsmoothTerm.box(-1, 1).strong_convexity == 0.0
    assert NonsmoothTerm.l2_squared(0.3).strong_convexity == 0.3
    assert NonsmoothTerm.l1_plus_l2(1.0, 0.2).strong_convexity == 0.2


TERMS = [NonsmoothTerm.zero(), NonsmoothTerm.l1(0.3), NonsmoothTerm.l2_squared(0.7),
         NonsmoothTerm.l1_plus_l2(0.2, 0.5), NonsmoothTerm.box(-0.5, 1.0)]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, len(TERMS) - 1), st.integers(0, 10_000), st.floats(0.1, 10.0))
def test_nonsmooth_prox_optimality(k, seed, c):
    h = TERMS[k]
    v = np.random.default_rng(seed).standard_normal(5) * 2
    x = h.prox(v, c)
    # c (v - x) must be a subgradient of h at x
    assert h.subdiff_distance(x, c * (v - x)) <= 1e-10


@settings(max_examples=60, deadline=None)
@given(st.integers(0, len(TERMS) - 1), st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_nonsmooth_eval_is_convex(k, seed, t):
    h = TERMS[k]
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-0.5, 1.0, (2, 5))
    assert h.eval(t * x + (1 - t) * y) <= t * h.eval(x) + (1 - t) * h.eval(y) + 1e-12
