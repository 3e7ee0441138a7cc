"""Confidence intervals for the triangulated estimate.

Three branches: a delta-method Wald interval when every estimator carries
influence values, the empirical bootstrap with nuisance refitting for
parametric plug-in estimators, and subsampling otherwise.
"""
from __future__ import annotations

import logging
import math
import warnings
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .data import (
    Dataset,
    EstimateWithIF,
    InferenceBranch,
    ModelResult,
    ModelSpec,
    TriangulationResult,
)
from .exceptions import (
    BranchMismatchError,
    DomainError,
    EstimationError,
    NumericalWarning,
    UnstableBootstrapError,
    ValidationError,
)
from .kernel import KernelConfig, gamma_partials, gaussian_kernel, is_degenerate, weights
from .pipeline import estimate_models

log = logging.getLogger(__name__)

MAX_REPLICATE_FAILURE_RATE = 0.10


@dataclass(frozen=True)
class InferenceConfig:
    branch: InferenceBranch = InferenceBranch.WALD
    alpha: float = 0.05
    bootstrap_B: int = 500
    subsample_b: int = 500
    subsample_exponent: float = 0.8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "branch", InferenceBranch(self.branch))
        if not 0 < self.alpha <= 0.5:
            raise ValidationError("alpha must lie in (0, 0.5]")
        if self.bootstrap_B < 100 or self.subsample_b < 100:
            raise ValidationError("need at least 100 bootstrap / subsample replicates")
        if not 0 < self.subsample_exponent < 1:
            raise ValidationError("subsample exponent must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be an unsigned 64-bit integer")


def _key(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    return int(part)


def stream(seed: int, *keys) -> np.random.Generator:
    """Counter-based generator for a named substream of ``seed``.

    The same (seed, keys) always yields the same stream, independent of how
    many other streams were drawn before it.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _model_results(labels, betas, psis, cfg: KernelConfig, psi_cis=None, ci_method=None):
    w = weights(betas, cfg)
    mass = gaussian_kernel(np.asarray(betas, dtype=float), cfg.a)
    out = []
    for k, label in enumerate(labels):
        out.append(ModelResult(
            label=label,
            beta=float(betas[k]),
            psi=float(psis[k]),
            weight=float(w[k]),
            kernel_mass=float(np.atleast_1d(mass)[k]),
            psi_ci=None if psi_cis is None else psi_cis[k],
            psi_ci_method=ci_method,
        ))
    return out


def wald_ci(
    beta_estimates: Sequence[EstimateWithIF],
    psi_estimates: Sequence[EstimateWithIF],
    cfg: KernelConfig,
    alpha: float = 0.05,
    labels: Sequence[str] | None = None,
) -> TriangulationResult:
    """Delta-method interval psi_n +/- z * sqrt(gamma' Sigma gamma / n)."""
    if len(beta_estimates) != len(psi_estimates) or not beta_estimates:
        raise DomainError("need matching, nonempty lists of beta and psi estimates")
    K = len(beta_estimates)
    labels = list(labels) if labels is not None else [f"model_{k + 1}" for k in range(K)]
    missing = [
        f"{labels[k]} ({which})"
        for k in range(K)
        for which, est in (("beta", beta_estimates[k]), ("psi", psi_estimates[k]))
        if est.influence is None
    ]
    if missing:
        raise BranchMismatchError(
            "Wald inference needs influence values for every estimator; missing for: "
            + ", ".join(missing)
        )
    ests = [*beta_estimates, *psi_estimates]
    n = ests[0].influence.shape[0]
    if any(e.influence.shape[0] != n for e in ests):
        raise DomainError("influence vectors have different lengths")
    cfg = cfg.resolved(n)

    betas = np.array([e.value for e in beta_estimates])
    psis = np.array([e.value for e in psi_estimates])
    phi = np.column_stack([e.influence for e in ests])
    phi = phi - phi.mean(axis=0)
    sigma = phi.T @ phi / n
    gamma = gamma_partials(betas, psis, cfg)
    var = float(gamma @ sigma @ gamma)
    if var < 0:
        warnings.warn(f"negative delta-method variance {var:.3e} clamped to 0", NumericalWarning)
        var = 0.0
    se = math.sqrt(var / n)
    z = float(norm.ppf(1 - alpha / 2))
    psi_n = float(np.dot(weights(betas, cfg), psis))

    psi_cis = []
    for k in range(K):
        se_k = math.sqrt(sigma[K + k, K + k] / n)
        psi_cis.append((psis[k] - z * se_k, psis[k] + z * se_k))
    return TriangulationResult(
        per_model=_model_results(labels, betas, psis, cfg, psi_cis, "influence_function"),
        psi_combined=psi_n,
        kernel_a=cfg.a,
        lam=cfg.lam,
        degenerate_flag=is_degenerate(betas, cfg),
        inference_branch=InferenceBranch.WALD,
        se=se,
        ci=(psi_n - z * se, psi_n + z * se),
        diagnostics={"sigma_min_eigenvalue": float(np.linalg.eigvalsh(sigma).min()), "n": n},
    )


def _replicate(data: Dataset, models, cfg: KernelConfig, rows: np.ndarray):
    est = estimate_models(data.take(rows), models)
    betas = np.array([e.beta.value for e in est])
    psis = np.array([e.psi.value for e in est])
    return float(np.dot(weights(betas, cfg), psis)), psis


def _run_replicates(data, models, cfg, icfg, count, size, replace, tag):
    # lambda stays at its full-sample value so every replicate estimates the
    # same functional (for the bootstrap this is 1/n either way)
    cfg = cfg.resolved(data.n)
    combined = []
    per_model = []
    failures = 0
    for r in range(count):
        rng = stream(icfg.seed, tag, r)
        if replace:
            rows = rng.integers(0, data.n, size=size)
        else:
            rows = rng.choice(data.n, size=size, replace=False)
        try:
            psi, psis = _replicate(data, models, cfg, rows)
        except EstimationError as exc:
            failures += 1
            log.debug("%s replicate %d failed: %s", tag, r, exc)
            continue
        combined.append(psi)
        per_model.append(psis)
    if failures > MAX_REPLICATE_FAILURE_RATE * count:
        raise UnstableBootstrapError(f"{failures} of {count} {tag} replicates failed")
    return np.sort(np.array(combined)), np.array(per_model), failures


def _quantiles(sorted_values: np.ndarray, alpha: float) -> tuple[float, float]:
    lo, hi = np.quantile(sorted_values, [alpha / 2, 1 - alpha / 2])
    return float(lo), float(hi)


def _full_sample(data: Dataset, models: Sequence[ModelSpec], cfg: KernelConfig):
    est = estimate_models(data, models)
    betas = np.array([e.beta.value for e in est])
    psis = np.array([e.psi.value for e in est])
    cfg = cfg.resolved(data.n)
    psi_n = float(np.dot(weights(betas, cfg), psis))
    return est, betas, psis, cfg, psi_n


def bootstrap_ci(
    data: Dataset,
    models: Sequence[ModelSpec],
    cfg: KernelConfig,
    icfg: InferenceConfig,
) -> TriangulationResult:
    """Percentile interval from the nonparametric bootstrap.

    Every replicate refits all nuisance models. The reported point estimate
    is always the full-sample one.
    """
    if icfg.branch is not InferenceBranch.BOOTSTRAP:
        raise BranchMismatchError(f"bootstrap_ci called with branch {icfg.branch.value}")
    est, betas, psis, fcfg, psi_n = _full_sample(data, models, cfg)
    reps, per_model, failures = _run_replicates(
        data, models, cfg, icfg, icfg.bootstrap_B, data.n, True, "bootstrap"
    )
    psi_cis = [_quantiles(np.sort(per_model[:, k]), icfg.alpha) for k in range(len(models))]
    return TriangulationResult(
        per_model=_model_results([m.label for m in models], betas, psis, fcfg, psi_cis, "bootstrap_percentile"),
        psi_combined=psi_n,
        kernel_a=fcfg.a,
        lam=fcfg.lam,
        degenerate_flag=is_degenerate(betas, fcfg),
        inference_branch=InferenceBranch.BOOTSTRAP,
        se=float(np.std(reps, ddof=1)) if reps.size > 1 else None,
        ci=_quantiles(reps, icfg.alpha),
        diagnostics={"replicates": int(reps.size), "failed_replicates": failures, "n": data.n},
    )


def subsample_size(n: int, exponent: float = 0.8) -> int:
    # tiny offset absorbs rounding in n ** exponent for exact powers
    return int(math.floor(n**exponent + 1e-9))


def subsample_ci(
    data: Dataset,
    models: Sequence[ModelSpec],
    cfg: KernelConfig,
    icfg: InferenceConfig,
) -> TriangulationResult:
    """Subsampling intervals from b draws of size m = floor(n^exponent).

    ``ci`` holds the plain percentile interval of the subsample estimates;
    ``ci_rescaled`` the recentred interval
    [psi_n - sqrt(m/n) q_hi, psi_n - sqrt(m/n) q_lo] with q the quantiles of
    psi_m - psi_n.
    """
    if icfg.branch is not InferenceBranch.SUBSAMPLE:
        raise BranchMismatchError(f"subsample_ci called with branch {icfg.branch.value}")
    if data.n < 200:
        raise ValidationError(f"subsampling needs n >= 200, got {data.n}")
    m = subsample_size(data.n, icfg.subsample_exponent)
    est, betas, psis, fcfg, psi_n = _full_sample(data, models, cfg)
    reps, per_model, failures = _run_replicates(
        data, models, cfg, icfg, icfg.subsample_b, m, False, "subsample"
    )
    literal = _quantiles(reps, icfg.alpha)
    q_lo, q_hi = _quantiles(reps - psi_n, icfg.alpha)
    scale = math.sqrt(m / data.n)
    rescaled = (psi_n - scale * q_hi, psi_n - scale * q_lo)
    psi_cis = [_quantiles(np.sort(per_model[:, k]), icfg.alpha) for k in range(len(models))]
    return TriangulationResult(
        per_model=_model_results([s.label for s in models], betas, psis, fcfg, psi_cis, "subsample_percentile"),
        psi_combined=psi_n,
        kernel_a=fcfg.a,
        lam=fcfg.lam,
        degenerate_flag=is_degenerate(betas, fcfg),
        inference_branch=InferenceBranch.SUBSAMPLE,
        ci=literal,
        ci_rescaled=rescaled,
        diagnostics={
            "subsample_size": m,
            "replicates": int(reps.size),
            "failed_replicates": failures,
            "n": data.n,
        },
    )


def triangulate_data(
    data: Dataset,
    models: Sequence[ModelSpec],
    cfg: KernelConfig,
    icfg: InferenceConfig,
) -> TriangulationResult:
    """Estimate every model on ``data`` and run the configured branch."""
    if icfg.branch is InferenceBranch.WALD:
        est = estimate_models(data, models)
        return wald_ci(
            [e.beta for e in est], [e.psi for e in est], cfg, icfg.alpha, [m.label for m in models]
        )
    if icfg.branch is InferenceBranch.BOOTSTRAP:
        return bootstrap_ci(data, models, cfg, icfg)
    return subsample_ci(data, models, cfg, icfg)
