"""Estimators of the identifying functionals and an exact discrete oracle.

The sampled-data estimators all fit main-effects parametric nuisances and
return an :class:`EstimateWithIF`; only AIPW carries influence values.
``exact_functionals`` evaluates the backdoor, frontdoor and IV formulas by
summation over a fully specified joint of binary variables and is used as
the reference for the sampled-data estimators.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset, EstimateMethod, EstimateWithIF
from .exceptions import (
    DegenerateConditionalError,
    SingularDesignError,
    UnknownColumnError,
    ValidationError,
    WeakInstrumentError,
)
from .glm import Family, clip_probabilities, fit_glm, predict_mean
from .validity import MediatorModel, _clip_diagnostics

PROPENSITY_CLIP = (0.01, 0.99)
WEAK_INSTRUMENT_TOL = 1e-6


def _outcome_family(data: Dataset, outcome: str) -> Family:
    return Family.LOGISTIC if data.is_binary(outcome) else Family.LINEAR


def _require_binary(data: Dataset, *names: str) -> None:
    for name in names:
        if not data.is_binary(name):
            raise ValidationError(f"{name!r} must be declared binary")


def _arm_contrast(view: Dataset, target: str, switch: str, covariates: tuple, family: Family) -> float:
    """Regression-standardized E[target | switch=1, L] - E[target | switch=0, L].

    With no covariates the saturated fit reproduces the two arm means, which
    are used directly; this stays exact when an arm mean is 0 or 1, where
    the logistic MLE is at infinity.
    """
    if not covariates:
        s = view[switch]
        if s.min() == s.max():
            raise SingularDesignError(f"{switch!r} takes a single value")
        t = view[target]
        return float(t[s == 1].mean() - t[s == 0].mean())
    fit = fit_glm(view, target, (switch, *covariates), family)
    return float(np.mean(predict_mean(fit, view, {switch: 1.0}) - predict_mean(fit, view, {switch: 0.0})))


def backdoor_aipw(
    data: Dataset,
    treatment: str,
    outcome: str,
    adjustment: Sequence[str],
    propensity: float | np.ndarray | None = None,
) -> EstimateWithIF:
    """Augmented IPW estimate of the backdoor-adjusted average effect.

    ``propensity`` replaces the fitted P(A=1 | W) when the treatment
    mechanism is known (e.g. a randomized design); an array must be in the
    caller's row order.
    """
    adjustment = tuple(adjustment)
    data.require((treatment, outcome, *adjustment))
    _require_binary(data, treatment)
    view, perm = data.canonical()
    a = view[treatment]
    y = view[outcome]

    if propensity is None:
        pi_fit = fit_glm(view, treatment, adjustment, Family.LOGISTIC)
        pi = predict_mean(pi_fit, view)
    else:
        pi = np.broadcast_to(np.asarray(propensity, dtype=float), (data.n,))[perm]
    pi, clipped = clip_probabilities(pi, *PROPENSITY_CLIP)

    mu_fit = fit_glm(view, outcome, (treatment, *adjustment), _outcome_family(view, outcome))
    mu = predict_mean(mu_fit, view)
    mu1 = predict_mean(mu_fit, view, {treatment: 1.0})
    mu0 = predict_mean(mu_fit, view, {treatment: 0.0})

    uncentered = (y - mu) * (a - pi) / (pi * (1 - pi)) + mu1 - mu0
    value = float(np.mean(uncentered))
    phi = np.empty(data.n)
    phi[perm] = uncentered - value
    return EstimateWithIF(
        value=value,
        influence=phi,
        method=EstimateMethod.INFLUENCE_FUNCTION,
        diagnostics={"propensity_clipped": clipped},
    )


def backdoor_plugin(data: Dataset, treatment: str, outcome: str, adjustment: Sequence[str]) -> EstimateWithIF:
    """Outcome-regression plug-in: mean of mu(1, l) - mu(0, l)."""
    adjustment = tuple(adjustment)
    data.require((treatment, outcome, *adjustment))
    _require_binary(data, treatment)
    view, _ = data.canonical()
    value = _arm_contrast(view, outcome, treatment, adjustment, _outcome_family(view, outcome))
    return EstimateWithIF(value=value, method=EstimateMethod.PLUGIN_PARAMETRIC)


def frontdoor_dual_ipw(
    data: Dataset,
    treatment: str,
    outcome: str,
    mediators: Sequence[str],
    covariates: Sequence[str],
) -> EstimateWithIF:
    """Mediator-density-ratio estimate of the frontdoor functional.

    mean over rows of (P(m|A=1,l) - P(m|A=0,l)) / P(m|a,l) * y, with the
    mediator density from sequential logistic models on A and ``covariates``.
    """
    mediators, covariates = tuple(mediators), tuple(covariates)
    data.require((treatment, outcome, *mediators, *covariates))
    _require_binary(data, treatment, *mediators)
    view, _ = data.canonical()
    model = MediatorModel(mediators, (treatment, *covariates))
    fits = model.fits(view)
    observed, c_obs = model.density(view, fits)
    under1, c1 = model.density(view, fits, {treatment: 1.0})
    under0, c0 = model.density(view, fits, {treatment: 0.0})
    y = view[outcome]
    value = float(np.mean((under1 - under0) / observed * y))
    diag = _clip_diagnostics(c_obs + c1 + c0, 3 * view.n)
    return EstimateWithIF(value=value, method=EstimateMethod.PLUGIN_PARAMETRIC, diagnostics=diag)


def iv_plugin(
    data: Dataset,
    instrument: str,
    treatment: str,
    outcome: str,
    covariates: Sequence[str],
) -> EstimateWithIF:
    """Covariate-adjusted Wald ratio with regression-standardized arms."""
    covariates = tuple(covariates)
    data.require((instrument, treatment, outcome, *covariates))
    _require_binary(data, instrument, treatment)
    view, _ = data.canonical()
    num = _arm_contrast(view, outcome, instrument, covariates, _outcome_family(view, outcome))
    den = _arm_contrast(view, treatment, instrument, covariates, Family.LOGISTIC)
    if abs(den) < WEAK_INSTRUMENT_TOL:
        raise WeakInstrumentError(f"first-stage contrast {den:.3e} is too close to zero")
    return EstimateWithIF(
        value=num / den,
        method=EstimateMethod.PLUGIN_PARAMETRIC,
        diagnostics={"numerator": num, "denominator": den},
    )


class DiscreteJoint:
    """Joint distribution over binary variables.

    ``probabilities`` is indexed in C order over the 2^k lattice, first
    variable most significant.
    """

    def __init__(self, variables: Sequence[str], probabilities):
        self.variables = tuple(variables)
        if len(set(self.variables)) != len(self.variables):
            raise ValidationError("duplicate variable names")
        p = np.asarray(probabilities, dtype=float).reshape(-1)
        k = len(self.variables)
        if p.size != 2**k:
            raise ValidationError(f"need {2**k} probabilities for {k} binary variables, got {p.size}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValidationError("probabilities must be nonnegative and sum to 1")
        self.probabilities = p
        self.table = p.reshape((2,) * k)

    def axis(self, name: str) -> int:
        try:
            return self.variables.index(name)
        except ValueError:
            raise UnknownColumnError(name) from None

    def prob(self, **assignment: int) -> float:
        """Marginal probability of a partial assignment."""
        idx = tuple(
            assignment[v] if v in assignment else slice(None) for v in self.variables
        )
        for v in assignment:
            self.axis(v)
        return float(np.sum(self.table[idx]))

    def sample(self, n: int, rng: np.random.Generator) -> Dataset:
        cells = rng.choice(self.probabilities.size, size=n, p=self.probabilities)
        bits = np.array(list(itertools.product((0, 1), repeat=len(self.variables))), dtype=float)
        rows = bits[cells]
        return Dataset(
            {v: rows[:, j] for j, v in enumerate(self.variables)},
            binary=self.variables,
        )


@dataclass(frozen=True)
class Roles:
    """Variable roles for the exact functionals.

    A functional is computed only when its covariate tuple is not None
    (backdoor, frontdoor) or an instrument is named (IV).
    """

    treatment: str
    outcome: str
    backdoor: tuple[str, ...] | None = None
    mediators: tuple[str, ...] = ()
    frontdoor: tuple[str, ...] | None = None
    instrument: str | None = None
    iv: tuple[str, ...] = ()


def _assignments(names):
    for values in itertools.product((0, 1), repeat=len(names)):
        yield dict(zip(names, values))


def _cond_mean(joint: DiscreteJoint, target: str, given: dict) -> float:
    denom = joint.prob(**given)
    if denom <= 0:
        raise DegenerateConditionalError(f"P({given}) = 0")
    return joint.prob(**given, **{target: 1}) / denom


def _standardized_contrast(joint, target, switch, covs) -> float:
    total = 0.0
    for l in _assignments(covs):
        pl = joint.prob(**l)
        if pl == 0:
            continue
        total += pl * (_cond_mean(joint, target, {**l, switch: 1}) - _cond_mean(joint, target, {**l, switch: 0}))
    return total


def exact_functionals(joint: DiscreteJoint, roles: Roles) -> dict[str, float | None]:
    """Backdoor, frontdoor and IV functionals by exhaustive summation."""
    A, Y = roles.treatment, roles.outcome
    out: dict[str, float | None] = {"backdoor": None, "frontdoor": None, "iv": None}
    for v in (A, Y, *roles.mediators, *(roles.backdoor or ()), *(roles.frontdoor or ()), *roles.iv):
        joint.axis(v)

    if roles.backdoor is not None:
        out["backdoor"] = _standardized_contrast(joint, Y, A, roles.backdoor)

    if roles.frontdoor is not None:
        if not roles.mediators:
            raise ValidationError("frontdoor functional needs mediators")
        L, M = roles.frontdoor, roles.mediators
        total = 0.0
        for l in _assignments(L):
            pl = joint.prob(**l)
            if pl == 0:
                continue
            p_a1 = joint.prob(**l, **{A: 1})
            p_a0 = joint.prob(**l, **{A: 0})
            if p_a1 == 0 or p_a0 == 0:
                raise DegenerateConditionalError(f"P({A} | {l}) has an empty arm")
            for m in _assignments(M):
                shift = joint.prob(**m, **l, **{A: 1}) / p_a1 - joint.prob(**m, **l, **{A: 0}) / p_a0
                inner = 0.0
                for a_prime in (0, 1):
                    pal = joint.prob(**l, **{A: a_prime})
                    if pal == 0:
                        continue
                    inner += pal * _cond_mean(joint, Y, {**m, **l, A: a_prime})
                total += inner * shift
        out["frontdoor"] = total

    if roles.instrument is not None:
        Z = roles.instrument
        joint.axis(Z)
        num = _standardized_contrast(joint, Y, Z, roles.iv)
        den = _standardized_contrast(joint, A, Z, roles.iv)
        if abs(den) < 1e-15 or math.isnan(den):
            raise DegenerateConditionalError("IV first-stage contrast is zero")
        out["iv"] = num / den
    return out
