"""Map candidate model specifications to their (beta, psi) estimators."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, EstimatorStyle, EstimateMethod, EstimateWithIF, ModelKind, ModelSpec
from .estimators import backdoor_aipw, backdoor_plugin, frontdoor_dual_ipw, iv_plugin
from .kernel import KernelConfig, triangulate
from .validity import MediatorModel, ORSpec, log_or_plugin, log_or_zestimator, verma_log_or


@dataclass
class ModelEstimates:
    spec: ModelSpec
    beta: EstimateWithIF
    psi: EstimateWithIF


def _frontdoor_constraint(data: Dataset, spec: ModelSpec) -> EstimateWithIF:
    mediator_model = MediatorModel(spec.mediators, (spec.treatment, spec.anchor, *spec.adjustment))
    return verma_log_or(data, spec.outcome, spec.anchor, spec.adjustment, mediator_model)


def estimate_model(data: Dataset, spec: ModelSpec) -> ModelEstimates:
    """Validity parameter and effect estimate for one candidate model.

    backdoor   beta = log OR(Y, Z | A, W); psi = AIPW (influence) or
               outcome-regression plug-in, adjusting for W
    frontdoor  beta = reweighted log OR(Y, Z | C) under 1/P(M | A, Z, C);
               psi = dual IPW with covariates {Z} + C
    IV         beta = frontdoor constraint + sum over mediators of
               log OR(M, Z | A, C); psi = plug-in Wald ratio given C
    """
    data.require(spec.variables)
    A, Y, Z, C = spec.treatment, spec.outcome, spec.anchor, spec.adjustment

    if spec.kind is ModelKind.BACKDOOR:
        test = ORSpec(left=Y, right=Z, conditioning=(A, *C))
        if spec.estimator is EstimatorStyle.INFLUENCE:
            beta = log_or_zestimator(data, test)
            psi = backdoor_aipw(data, A, Y, C)
        else:
            beta = log_or_plugin(data, test)
            psi = backdoor_plugin(data, A, Y, C)

    elif spec.kind is ModelKind.FRONTDOOR:
        beta = _frontdoor_constraint(data, spec)
        psi = frontdoor_dual_ipw(data, A, Y, spec.mediators, (Z, *C))

    else:
        verma = _frontdoor_constraint(data, spec)
        parts = [verma.value]
        for j, m in enumerate(spec.mediators):
            test = ORSpec(left=m, right=Z, conditioning=(A, *C, *spec.mediators[:j]))
            parts.append(log_or_plugin(data, test).value)
        beta = EstimateWithIF(
            value=float(sum(parts)),
            method=EstimateMethod.PLUGIN_PARAMETRIC,
            diagnostics={"components": parts, **verma.diagnostics},
        )
        psi = iv_plugin(data, Z, A, Y, C)

    return ModelEstimates(spec=spec, beta=beta, psi=psi)


def estimate_models(data: Dataset, specs) -> list[ModelEstimates]:
    return [estimate_model(data, s) for s in specs]


def point_estimate(estimates: list[ModelEstimates], cfg: KernelConfig, n: int) -> float:
    betas = np.array([e.beta.value for e in estimates])
    psis = np.array([e.psi.value for e in estimates])
    return triangulate(betas, psis, cfg.resolved(n))
