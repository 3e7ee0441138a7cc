import numpy as np
import pytest
from scipy.special import expit

from triangulation.data import Dataset
from triangulation.exceptions import NonConvergenceError, SingularDesignError, ValidationError
from triangulation.glm import Family, design_matrix, fit_glm, predict_mean


def test_linear_exact_line():
    x = np.linspace(-1, 1, 20)
    d = Dataset({"x": x, "y": 2 + 3 * x})
    fit = fit_glm(d, "y", ["x"], "linear")
    np.testing.assert_allclose(fit.coefficients, [2, 3], atol=1e-10)
    assert fit.coef("(intercept)") == pytest.approx(2, abs=1e-10)


def test_linear_matches_normal_equations(rng):
    n = 300
    cols = {"x1": rng.normal(size=n), "x2": rng.normal(size=n), "y": rng.normal(size=n)}
    w = rng.uniform(0.5, 2, size=n)
    d = Dataset(cols)
    X = np.column_stack([np.ones(n), cols["x1"], cols["x2"]])
    for weights in (None, w):
        W = np.ones(n) if weights is None else weights
        oracle = np.linalg.solve(X.T @ (W[:, None] * X), X.T @ (W * cols["y"]))
        fit = fit_glm(d, "y", ["x1", "x2"], Family.LINEAR, obs_weights=weights)
        np.testing.assert_allclose(fit.coefficients, oracle, atol=1e-8)


def test_logistic_score_equation(rng):
    n = 2000
    x = rng.normal(size=n)
    y = (rng.random(n) < expit(0.3 + 0.8 * x)).astype(float)
    d = Dataset({"x": x, "y": y}, binary=["y"])
    fit = fit_glm(d, "y", ["x"], "logistic")
    assert fit.converged
    mu = predict_mean(fit, d)
    assert abs(mu.mean() - y.mean()) < 1e-8
    X = design_matrix(d, ["x"])
    assert np.max(np.abs(X.T @ (y - mu) / n)) < 1e-8
    assert fit.coef("x") == pytest.approx(0.8, abs=0.15)


def test_logistic_weighted_score_equation(rng):
    n = 1000
    x = rng.normal(size=n)
    y = (rng.random(n) < expit(x)).astype(float)
    w = rng.uniform(0.2, 3, n)
    d = Dataset({"x": x, "y": y}, binary=["y"])
    fit = fit_glm(d, "y", ["x"], "logistic", obs_weights=w)
    mu = predict_mean(fit, d)
    assert abs(np.dot(w, y - mu) / w.sum()) < 1e-8


def test_logistic_zero_coefficients_predict_half():
    d = Dataset({"x": [0.0, 1.0, 0.0, 1.0], "y": [0, 1, 1, 0]}, binary=["y"])
    fit = fit_glm(d, "y", ["x"], "logistic")
    np.testing.assert_allclose(fit.coefficients, 0, atol=1e-10)
    np.testing.assert_allclose(predict_mean(fit, d), 0.5, atol=1e-10)


def test_override_equals_substitution(rng):
    n = 200
    a = rng.integers(0, 2, n).astype(float)
    x = rng.normal(size=n)
    y = (rng.random(n) < expit(a - x)).astype(float)
    d = Dataset({"a": a, "x": x, "y": y}, binary=["a", "y"])
    fit = fit_glm(d, "y", ["a", "x"], "logistic")
    ones = Dataset({"a": np.ones(n), "x": x, "y": y}, binary=["a", "y"])
    np.testing.assert_array_equal(predict_mean(fit, d, {"a": 1.0}), predict_mean(fit, ones))


def test_separation_raises():
    x = np.arange(20.0)
    d = Dataset({"x": x, "y": (x > 9.5).astype(float)}, binary=["y"])
    with pytest.raises(NonConvergenceError) as info:
        fit_glm(d, "y", ["x"], "logistic")
    assert info.value.fit is not None and not info.value.fit.converged


def test_singular_design():
    x = np.arange(10.0)
    d = Dataset({"x": x, "x2": 2 * x, "y": x})
    with pytest.raises(SingularDesignError):
        fit_glm(d, "y", ["x", "x2"], "linear")


def test_logistic_needs_binary():
    d = Dataset({"x": [0.0, 1.0, 2.0], "y": [0.0, 1.0, 1.0]})
    with pytest.raises(ValidationError):
        fit_glm(d, "y", ["x"], "logistic")


def test_cache_reorders_coefficients(rng):
    n = 100
    d = Dataset({"a": rng.normal(size=n), "b": rng.normal(size=n), "y": rng.normal(size=n)})
    f1 = fit_glm(d, "y", ["a", "b"], "linear")
    f2 = fit_glm(d, "y", ["b", "a"], "linear")
    assert f2.coef("a") == f1.coef("a") and f2.coef("b") == f1.coef("b")
    assert f2.predictor_names == ("b", "a")


def test_ill_conditioned_logistic_uses_qr(rng):
    # near-collinear predictors push the design below the normal-equation threshold
    n = 3000
    x = rng.normal(size=n)
    x2 = x + 1e-4 * rng.normal(size=n)
    y = (rng.random(n) < expit(0.5 * x)).astype(float)
    d = Dataset({"x": x, "x2": x2, "y": y}, binary=["y"])
    fit = fit_glm(d, "y", ["x", "x2"], "logistic")
    mu = predict_mean(fit, d)
    X = design_matrix(d, ["x", "x2"])
    assert np.max(np.abs(X.T @ (y - mu) / n)) < 1e-8
