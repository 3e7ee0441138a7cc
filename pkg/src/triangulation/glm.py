"""Linear and logistic regression fitted by (weighted) least squares / IRLS.

Design matrices are intercept plus raw columns; no interactions. Linear fits
solve through a QR factorization of the sqrt-weighted design. Logistic Newton
steps use the normal equations when the design is well conditioned and fall
back to QR otherwise.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .data import Dataset
from .exceptions import (
    DomainError,
    NonConvergenceError,
    SingularDesignError,
    ValidationError,
)

PROB_CLIP = 1e-12
RCOND_MIN = 1e-12
MAX_ITER = 100
MAX_HALVINGS = 20
COEF_TOL = 1e-10
SCORE_TOL = 1e-8
WELL_CONDITIONED = 1e-3


class Family(str, enum.Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"


@dataclass(frozen=True)
class GLMFit:
    family: Family
    coefficients: np.ndarray
    predictor_names: tuple[str, ...]
    converged: bool
    iterations: int
    obs_weights_used: bool
    response: str = ""

    def coef(self, name: str) -> float:
        """Coefficient of a predictor (``"(intercept)"`` for the intercept)."""
        if name == "(intercept)":
            return float(self.coefficients[0])
        try:
            return float(self.coefficients[1 + self.predictor_names.index(name)])
        except ValueError:
            raise DomainError(f"{name!r} is not a predictor of this fit") from None


def design_matrix(data: Dataset, predictors: Sequence[str], overrides: Mapping[str, float] | None = None) -> np.ndarray:
    overrides = overrides or {}
    X = np.empty((data.n, len(predictors) + 1))
    X[:, 0] = 1.0
    for j, name in enumerate(predictors, start=1):
        if name in overrides:
            X[:, j] = overrides[name]
        elif name in data:
            X[:, j] = data[name]
        else:
            raise DomainError(f"predictor {name!r} not found in data or overrides")
    return X


def _rcond(X: np.ndarray, sw: np.ndarray | None) -> float:
    Xw = X if sw is None else X * sw[:, None]
    r = np.linalg.qr(Xw, mode="r")
    s = np.linalg.svd(r, compute_uv=False)
    if s[0] == 0:
        return 0.0
    return float(s[-1] / s[0])


def _wls(X: np.ndarray, z: np.ndarray, sw: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(X * sw[:, None])
    return np.linalg.solve(r, q.T @ (z * sw))


def _log1pexp(eta: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(eta))) + np.maximum(eta, 0.0)


def _loglik(y, eta, w):
    return float(np.dot(w, y * eta - _log1pexp(eta)))


def fit_glm(
    data: Dataset,
    response: str,
    predictors: Sequence[str],
    family: Family | str,
    obs_weights: np.ndarray | None = None,
) -> GLMFit:
    """Fit a main-effects linear or logistic model with intercept.

    Unweighted fits are memoized on the dataset, keyed by the predictor set,
    so repeated fits of the same nuisance model are free.
    """
    family = Family(family)
    predictors = tuple(predictors)
    data.require((response, *predictors))
    if family is Family.LOGISTIC and not data.is_binary(response):
        raise ValidationError(f"logistic response {response!r} must be declared binary")

    key = None
    if obs_weights is None:
        key = (response, frozenset(predictors), family)
        hit = data._fit_cache.get(key)
        if hit is not None:
            return _reorder(hit, predictors)

    fit = _fit(data, response, predictors, family, obs_weights)
    if key is not None:
        data._fit_cache[key] = fit
    return fit


def _reorder(fit: GLMFit, predictors: tuple[str, ...]) -> GLMFit:
    if fit.predictor_names == predictors:
        return fit
    idx = [0] + [1 + fit.predictor_names.index(p) for p in predictors]
    return GLMFit(
        family=fit.family,
        coefficients=fit.coefficients[idx],
        predictor_names=predictors,
        converged=fit.converged,
        iterations=fit.iterations,
        obs_weights_used=fit.obs_weights_used,
        response=fit.response,
    )


def _fit(data, response, predictors, family, obs_weights) -> GLMFit:
    y = data[response]
    X = design_matrix(data, predictors)
    n, p = X.shape
    if obs_weights is not None:
        w = np.asarray(obs_weights, dtype=float)
        if w.shape != (n,):
            raise ValidationError(f"obs_weights must have length {n}")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise ValidationError("obs_weights must be finite and strictly positive")
    else:
        w = np.ones(n)
    if n < p:
        raise SingularDesignError(f"{n} rows for {p} coefficients")
    sw = np.sqrt(w)
    rc = _rcond(X, None if obs_weights is None else sw)
    if rc < RCOND_MIN:
        raise SingularDesignError(
            f"design for {response} ~ {' + '.join(predictors) or '1'} is rank deficient"
        )

    def make(coef, converged, iterations):
        return GLMFit(
            family=family,
            coefficients=coef,
            predictor_names=predictors,
            converged=converged,
            iterations=iterations,
            obs_weights_used=obs_weights is not None,
            response=response,
        )

    if family is Family.LINEAR:
        return make(_wls(X, y, sw), True, 1)

    # normal equations are accurate enough when the design is well conditioned;
    # fall back to QR of the weighted design otherwise
    use_qr = rc < WELL_CONDITIONED
    wsum = float(w.sum())
    Xt = np.ascontiguousarray(X.T)
    coef = np.zeros(p)
    eta = np.zeros(n)
    ll = _loglik(y, eta, w)
    for it in range(1, MAX_ITER + 1):
        mu = expit(eta)
        var = np.maximum(mu * (1 - mu), PROB_CLIP)
        wv = w * var
        if use_qr:
            step = _wls(X, (y - mu) / var, np.sqrt(wv))
        else:
            step = np.linalg.solve((Xt * wv) @ X, Xt @ (w * (y - mu)))
        # step-halving guards against likelihood decrease
        for _ in range(MAX_HALVINGS + 1):
            new = coef + step
            new_eta = new @ Xt
            new_ll = _loglik(y, new_eta, w)
            if new_ll >= ll - 1e-12 * abs(ll):
                break
            step = step / 2
        delta = float(np.max(np.abs(new - coef)))
        coef, eta, ll = new, new_eta, new_ll
        if delta < COEF_TOL * (1 + float(np.max(np.abs(coef)))):
            score = Xt @ (w * (y - expit(eta))) / wsum
            if np.max(np.abs(score)) < SCORE_TOL:
                return make(coef, True, it)
    fit = make(coef, False, MAX_ITER)
    raise NonConvergenceError(
        f"IRLS for {response} did not converge in {MAX_ITER} iterations "
        "(complete or quasi-complete separation?)",
        fit=fit,
    )


def predict_mean(fit: GLMFit, data: Dataset, overrides: Mapping[str, float] | None = None) -> np.ndarray:
    """Fitted conditional mean, with some predictors optionally held constant."""
    X = design_matrix(data, fit.predictor_names, overrides)
    eta = X @ fit.coefficients
    if fit.family is Family.LINEAR:
        return eta
    return expit(eta)


def clip_probabilities(p: np.ndarray, lo: float = PROB_CLIP, hi: float | None = None) -> tuple[np.ndarray, int]:
    """Clip to [lo, hi] (hi defaults to 1 - lo); returns the array and the clip count."""
    hi = 1.0 - lo if hi is None else hi
    clipped = (p < lo) | (p > hi)
    return np.clip(p, lo, hi), int(clipped.sum())
