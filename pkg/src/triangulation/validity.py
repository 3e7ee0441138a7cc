"""Estimators of model-validity parameters (log odds ratios).

``log_or_zestimator`` solves the doubly robust estimating equation

    g(o; beta) = (y - zeta(a, w)) (z - eta(a, w)) exp(-beta (y - y0)(z - z0))

with zeta = E[Y | Z=z0, A, W] and eta = E[Z | Y=y0, A, W] fitted by logistic
regression on the reference-value subsamples. The plug-in variants read the
coefficient of the anchor off an (optionally reweighted) regression.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import Dataset, EstimateMethod, EstimateWithIF
from .exceptions import (
    DegenerateInformationError,
    HighClipWarning,
    RootNotBracketedError,
    ValidationError,
)
from .glm import Family, clip_probabilities, fit_glm, predict_mean

MIN_ROWS_ZEST = 50
ROOT_BRACKET = (-20.0, 20.0)
ROOT_TOL = 1e-10
HIGH_CLIP_RATE = 0.01


@dataclass(frozen=True)
class ORSpec:
    """log OR(left, right | conditioning) with reference values."""

    left: str
    right: str
    conditioning: tuple[str, ...] = field(default=())
    reference_left: float = 0.0
    reference_right: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "conditioning", tuple(self.conditioning))
        if self.left == self.right:
            raise ValidationError("left and right must differ")
        if {self.left, self.right} & set(self.conditioning):
            raise ValidationError("conditioning set must exclude left and right")


def _family(data: Dataset, name: str) -> Family:
    return Family.LOGISTIC if data.is_binary(name) else Family.LINEAR


def _subset(data: Dataset, mask: np.ndarray) -> Dataset:
    return data.take(np.flatnonzero(mask))


def solve_monotone(h, dh, lo: float, hi: float, tol: float = ROOT_TOL, max_iter: int = 200) -> float:
    """Root of a function with a sign change on [lo, hi].

    Newton steps from the current point; any step leaving the bracket (or
    failing to shrink |h|) is replaced by bisection. The bracket is updated
    on every evaluation so the iteration cannot escape it.
    """
    f_lo, f_hi = h(lo), h(hi)
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    if np.sign(f_lo) == np.sign(f_hi):
        raise RootNotBracketedError(
            f"estimating equation has no sign change on [{lo}, {hi}]"
        )
    x = 0.0 if lo < 0 < hi else 0.5 * (lo + hi)
    fx = h(x)
    for _ in range(max_iter):
        if np.sign(fx) == np.sign(f_lo):
            lo, f_lo = x, fx
        else:
            hi, f_hi = x, fx
        d = dh(x)
        cand = x - fx / d if d != 0 else np.nan
        if not (lo < cand < hi):
            cand = 0.5 * (lo + hi)
        fc = h(cand)
        if abs(fc) > abs(fx) and abs(hi - lo) > tol:
            mid = 0.5 * (lo + hi)
            cand, fc = mid, h(mid)
        step = abs(cand - x)
        x, fx = cand, fc
        # polish past the tolerance so the residual sits at rounding level
        if abs(fx) < tol and step < 1e-13 * (1 + abs(x)):
            return x
        if fx == 0:
            return x
    if abs(fx) < tol:
        return x
    raise RootNotBracketedError("root search did not converge")


def log_or_zestimator(data: Dataset, spec: ORSpec) -> EstimateWithIF:
    """Influence-function-based estimate of log OR(left, right | conditioning)."""
    data.require((spec.left, spec.right, *spec.conditioning))
    for name in (spec.left, spec.right):
        if not data.is_binary(name):
            raise ValidationError(f"{name!r} must be binary for the odds-ratio Z-estimator")
    if data.n < MIN_ROWS_ZEST:
        raise ValidationError(f"need at least {MIN_ROWS_ZEST} rows, got {data.n}")

    view, perm = data.canonical()
    y = view[spec.left]
    z = view[spec.right]
    cond = spec.conditioning

    zeta_fit = fit_glm(_subset(view, z == spec.reference_right), spec.left, cond, Family.LOGISTIC)
    eta_fit = fit_glm(_subset(view, y == spec.reference_left), spec.right, cond, Family.LOGISTIC)
    zeta = predict_mean(zeta_fit, view)
    eta = predict_mean(eta_fit, view)

    resid = (y - zeta) * (z - eta)
    s = (y - spec.reference_left) * (z - spec.reference_right)

    def h(beta):
        return float(np.mean(resid * np.exp(-beta * s)))

    def dh(beta):
        return float(np.mean(-s * resid * np.exp(-beta * s)))

    beta = solve_monotone(h, dh, *ROOT_BRACKET)
    g = resid * np.exp(-beta * s)
    info = float(np.mean(s * g))
    if abs(info) < 1e-10:
        raise DegenerateInformationError(f"estimating-equation slope {info:.3e} is ~0")
    phi_sorted = g / info
    phi = np.empty_like(phi_sorted)
    phi[perm] = phi_sorted
    return EstimateWithIF(
        value=beta,
        influence=phi,
        method=EstimateMethod.INFLUENCE_FUNCTION,
        diagnostics={"residual": float(np.mean(g)), "information": info},
    )


def log_or_plugin(data: Dataset, spec: ORSpec) -> EstimateWithIF:
    """Coefficient of ``right`` in a regression of ``left`` on right + conditioning.

    Logistic when ``left`` is binary (a conditional log odds ratio), linear
    otherwise, where a zero coefficient encodes the same independence.
    """
    view, _ = data.canonical()
    fit = fit_glm(view, spec.left, (spec.right, *spec.conditioning), _family(view, spec.left))
    return EstimateWithIF(value=fit.coef(spec.right), method=EstimateMethod.PLUGIN_PARAMETRIC)


@dataclass(frozen=True)
class MediatorModel:
    """Sequential logistic models for binary mediators.

    Mediator j is regressed on ``predictors`` plus mediators 0..j-1.
    """

    mediators: tuple[str, ...]
    predictors: tuple[str, ...]

    def fits(self, data: Dataset):
        out = []
        for j, m in enumerate(self.mediators):
            if not data.is_binary(m):
                raise ValidationError(f"mediator {m!r} must be binary")
            out.append(fit_glm(data, m, (*self.predictors, *self.mediators[:j]), Family.LOGISTIC))
        return out

    def density(self, data: Dataset, fits=None, overrides=None) -> tuple[np.ndarray, int]:
        """P(M = m_i | predictors_i) for the observed mediator values.

        Returns the (clipped) density and the number of clipped factors.
        """
        fits = fits if fits is not None else self.fits(data)
        dens = np.ones(data.n)
        clipped = 0
        for m, fit in zip(self.mediators, fits):
            p, c = clip_probabilities(predict_mean(fit, data, overrides))
            clipped += c
            dens *= np.where(data[m] == 1.0, p, 1.0 - p)
        return dens, clipped


def _clip_diagnostics(clipped: int, n: int) -> dict:
    diag = {"clipped": clipped, "clip_rate": clipped / n, "warnings": []}
    if clipped > HIGH_CLIP_RATE * n:
        msg = f"{clipped} of {n} fitted probabilities clipped"
        diag["warnings"].append(msg)
        warnings.warn(msg, HighClipWarning, stacklevel=3)
    return diag


def verma_log_or(
    data: Dataset,
    outcome: str,
    anchor: str,
    covariates: Sequence[str],
    mediator_model: MediatorModel,
) -> EstimateWithIF:
    """Reweighted log odds ratio of outcome and anchor given covariates.

    Rows are weighted by 1 / P(M = m_i | A, Z, C) from the fitted mediator
    model; the anchor's coefficient in the weighted regression of outcome on
    anchor + covariates is returned. Zero when the frontdoor-type equality
    constraint holds.
    """
    covariates = tuple(covariates)
    view, _ = data.canonical()
    view.require((outcome, anchor, *covariates, *mediator_model.mediators, *mediator_model.predictors))
    dens, clipped = mediator_model.density(view)
    fit = fit_glm(view, outcome, (anchor, *covariates), _family(view, outcome), obs_weights=1.0 / dens)
    diag = _clip_diagnostics(clipped, view.n)
    return EstimateWithIF(value=fit.coef(anchor), method=EstimateMethod.PLUGIN_PARAMETRIC, diagnostics=diag)
