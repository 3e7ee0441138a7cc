"""Simulation designs, do-intervention oracles and the multi-trial runner.

Two designs are hard-coded. Design S1 has three candidate backdoor
adjustment sets, only the smallest of which avoids M-bias through the
colliders C4 and C5. Design S2 pits a backdoor, a frontdoor and an IV model
against each other with one latent confounder U.
"""
from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .data import Dataset, EstimatorStyle, InferenceBranch, ModelKind, ModelSpec
from .exceptions import ExperimentUnstableError, TriangulationError, ValidationError
from .inference import InferenceConfig, derive_seed, stream, triangulate_data
from .kernel import KernelConfig, triangulate
from .pipeline import estimate_models

log = logging.getLogger(__name__)

MAX_TRIAL_FAILURE_RATE = 0.05
LIMIT_N = 1_000_000


class Scenario(str, enum.Enum):
    S1_EPS71 = "S1_eps71"
    S1_EPS36 = "S1_eps36"
    S2_FDOOR_IV_OK = "S2_fdoor_iv_ok"
    S2_FDOOR_ONLY = "S2_fdoor_only"

    @property
    def design(self) -> str:
        return self.value[:2]

    @property
    def variant(self) -> str:
        return {
            "S1_eps71": "eps71",
            "S1_eps36": "eps36",
            "S2_fdoor_iv_ok": "both_ok",
            "S2_fdoor_only": "fdoor_only",
        }[self.value]

    @classmethod
    def parse(cls, name: "str | Scenario") -> "Scenario":
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(s.value for s in cls)
            raise ValidationError(f"unknown scenario {name!r}; valid names: {valid}") from None


S1_VARIANTS = ("eps71", "eps36")
S2_VARIANTS = ("both_ok", "fdoor_only")


def _check_variant(variant: str, allowed) -> None:
    if variant not in allowed:
        raise ValidationError(f"unknown variant {variant!r}; expected one of {', '.join(allowed)}")


# Design S1. eps71 is the DGP with the U1 -> Z edge and eps36 the one
# without it: the labels follow the measured minimum |beta| of the
# incorrect adjustment sets.
def _s1_exogenous(n: int, variant: str, rng: np.random.Generator) -> dict[str, np.ndarray]:
    u1, u2, c1, c2, c3 = (rng.standard_normal(n) for _ in range(5))
    c4 = -2.5 * u1 + 2.0 * u2 + rng.standard_normal(n)
    c5 = -2.5 * u1 + 2.0 * u2 + rng.standard_normal(n)
    if variant == "eps71":
        z = (rng.random(n) < expit(u1)).astype(float)
    else:
        z = (rng.random(n) < 0.5).astype(float)
    return {"Z": z, "U1": u1, "U2": u2, "C1": c1, "C2": c2, "C3": c3, "C4": c4, "C5": c5}


def _s1_coefficients(variant: str) -> tuple[float, float]:
    # (Z in the treatment equation, A in the outcome equation)
    return (2.0, 1.0) if variant == "eps71" else (2.75, 1.5)


def _s1_outcome_index(ex, a, variant, outcome_uses_colliders):
    _, ya = _s1_coefficients(variant)
    lin = ya * a + 2.0 * ex["U2"] + ex["C3"]
    if outcome_uses_colliders:
        lin = lin + ex["C4"] + ex["C5"]
    return lin


def generate_s1(n: int, variant: str, seed: int, outcome_uses_colliders: bool = False) -> Dataset:
    """Draw n rows from design S1.

    By default Y depends on A, U2 and C3 only, as the design's graph has no
    edge from C4 or C5 into Y. ``outcome_uses_colliders=True`` adds C4 + C5
    to the outcome index, under which no candidate set is valid.
    """
    _check_variant(variant, S1_VARIANTS)
    if n < 1:
        raise ValidationError("n must be positive")
    rng = stream(seed, "s1", variant)
    ex = _s1_exogenous(n, variant, rng)
    za, _ = _s1_coefficients(variant)
    a_index = za * ex["Z"] - 3.0 * ex["U1"] + ex["C1"] + ex["C2"] + ex["C3"]
    a = (rng.random(n) < expit(a_index)).astype(float)
    y = (rng.random(n) < expit(_s1_outcome_index(ex, a, variant, outcome_uses_colliders))).astype(float)
    cols = {**ex, "A": a, "Y": y}
    order = ("Z", "U1", "U2", "C1", "C2", "C3", "C4", "C5", "A", "Y")
    return Dataset._trusted({k: cols[k] for k in order}, frozenset({"Z", "A", "Y"}), frozenset({"U1", "U2"}))


def _s2_params(variant: str):
    # A index (Z, C, U), M index (const, A, Z, C), Y mean (M, C, U)
    if variant == "both_ok":
        return (2.0, 2.0, 2.0), (-2.0, 4.0, 0.0, -0.5), (2.0, 2.0, 2.0)
    return (1.0, 1.0, -0.5), (-1.0, 2.0, -1.0, 1.0), (2.0, -0.75, -2.0)


def generate_s2(n: int, variant: str, seed: int) -> Dataset:
    """Draw n rows from design S2 (Y Gaussian, everything else binary or N(0,1))."""
    _check_variant(variant, S2_VARIANTS)
    if n < 1:
        raise ValidationError("n must be positive")
    rng = stream(seed, "s2", variant)
    (az, ac, au), (m0, ma, mz, mc), (ym, yc, yu) = _s2_params(variant)
    z = (rng.random(n) < 0.5).astype(float)
    c = rng.standard_normal(n)
    u = rng.standard_normal(n)
    a = (rng.random(n) < expit(az * z + ac * c + au * u)).astype(float)
    m = (rng.random(n) < expit(m0 + ma * a + mz * z + mc * c)).astype(float)
    y = ym * m + yc * c + yu * u + rng.standard_normal(n)
    cols = {"Z": z, "C": c, "U": u, "A": a, "M": m, "Y": y}
    return Dataset._trusted(cols, frozenset({"Z", "A", "M"}), frozenset({"U"}))


def generate(scenario: Scenario | str, n: int, seed: int) -> Dataset:
    scenario = Scenario.parse(scenario)
    if scenario.design == "S1":
        return generate_s1(n, scenario.variant, seed)
    return generate_s2(n, scenario.variant, seed)


def scenario_models(scenario: Scenario | str) -> list[ModelSpec]:
    """Fixed candidate-model list of a scenario."""
    scenario = Scenario.parse(scenario)
    if scenario.design == "S1":
        sets = (("C1", "C2", "C3"), ("C1", "C2", "C3", "C4"), ("C1", "C2", "C3", "C4", "C5"))
        return [
            ModelSpec(
                kind=ModelKind.BACKDOOR,
                treatment="A",
                outcome="Y",
                anchor="Z",
                adjustment=w,
                label="backdoor {" + ",".join(w) + "}",
                estimator=EstimatorStyle.INFLUENCE,
            )
            for w in sets
        ]
    common = dict(treatment="A", outcome="Y", anchor="Z", adjustment=("C",), estimator=EstimatorStyle.PLUGIN)
    return [
        ModelSpec(kind=ModelKind.BACKDOOR, label="backdoor", **common),
        ModelSpec(kind=ModelKind.FRONTDOOR, mediators=("M",), label="frontdoor", **common),
        ModelSpec(kind=ModelKind.IV, mediators=("M",), label="iv", **common),
    ]


def correct_models(scenario: Scenario | str) -> tuple[int, ...]:
    """Indices of the candidate models whose identifying assumptions hold."""
    return {
        Scenario.S1_EPS71: (0,),
        Scenario.S1_EPS36: (0,),
        Scenario.S2_FDOOR_IV_OK: (1, 2),
        Scenario.S2_FDOOR_ONLY: (1,),
    }[Scenario.parse(scenario)]


def default_inference(scenario: Scenario | str) -> InferenceBranch:
    return InferenceBranch.WALD if Scenario.parse(scenario).design == "S1" else InferenceBranch.BOOTSTRAP


@dataclass(frozen=True)
class OracleATE:
    theta: float
    mc_se: float


def oracle_ate(scenario: Scenario | str, N_mc: int = 10**6, seed: int = 0) -> OracleATE:
    """Average treatment effect by simulating the structural equations under do(A).

    Both interventions share the exogenous draws; the outcome noise is
    integrated out analytically (E[Y | do(a), exogenous] is used in place of
    a draw of Y), which only lowers the Monte-Carlo variance.
    """
    scenario = Scenario.parse(scenario)
    if N_mc < 10**6:
        raise ValidationError("N_mc must be at least 1e6")
    rng = stream(seed, "oracle_ate", scenario.value)
    chunks = []
    remaining = N_mc
    while remaining > 0:
        k = min(remaining, 1_000_000)
        remaining -= k
        if scenario.design == "S1":
            v = scenario.variant
            ex = _s1_exogenous(k, v, rng)
            d = expit(_s1_outcome_index(ex, 1.0, v, False)) - expit(_s1_outcome_index(ex, 0.0, v, False))
        else:
            _, (m0, ma, mz, mc), (ym, _, _) = _s2_params(scenario.variant)
            z = (rng.random(k) < 0.5).astype(float)
            c = rng.standard_normal(k)
            # C and U enter Y additively and cancel in the contrast
            base = m0 + mz * z + mc * c
            d = ym * (expit(base + ma) - expit(base))
        chunks.append(d)
    diffs = np.concatenate(chunks)
    return OracleATE(theta=float(diffs.mean()), mc_se=float(diffs.std(ddof=1) / math.sqrt(diffs.size)))


@dataclass(frozen=True)
class LargeSample:
    betas: np.ndarray
    psis: np.ndarray
    psi_limit: float


@lru_cache(maxsize=16)
def _large_sample(scenario: Scenario, N: int, seed: int, a: float) -> LargeSample:
    data = generate(scenario, N, seed).observed()
    est = estimate_models(data, scenario_models(scenario))
    betas = np.array([e.beta.value for e in est])
    psis = np.array([e.psi.value for e in est])
    betas.flags.writeable = False
    psis.flags.writeable = False
    psi = triangulate(betas, psis, KernelConfig(a=a, lam=0.0))
    return LargeSample(betas=betas, psis=psis, psi_limit=psi)


def oracle_betas(scenario: Scenario | str, N: int = LIMIT_N, seed: int = 0) -> np.ndarray:
    """Validity parameters estimated on one sample of size N."""
    if N < 10**6:
        raise ValidationError("N must be at least 1e6")
    return _large_sample(Scenario.parse(scenario), int(N), int(seed), 0.1).betas.copy()


def large_sample_limits(scenario: Scenario | str, N: int = LIMIT_N, seed: int = 0, a: float = 0.1) -> LargeSample:
    """Large-sample (beta, psi) and the lambda = 0 triangulation of them."""
    return _large_sample(Scenario.parse(scenario), int(N), int(seed), float(a))


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: Scenario
    n: int
    trials: int
    seed: int = 0
    kernel: KernelConfig = field(default_factory=KernelConfig)
    inference: InferenceConfig | None = None
    oracle_N: int = 10**6
    limit_N: int = LIMIT_N
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "scenario", Scenario.parse(self.scenario))
        if self.n < 200:
            raise ValidationError("n must be at least 200")
        if self.trials < 1:
            raise ValidationError("trials must be at least 1")
        if self.workers < 1:
            raise ValidationError("workers must be at least 1")
        if self.inference is None:
            object.__setattr__(
                self, "inference", InferenceConfig(branch=default_inference(self.scenario), seed=self.seed)
            )

    @property
    def models(self) -> list[ModelSpec]:
        return scenario_models(self.scenario)


def _run_one(cfg: ScenarioConfig, t: int) -> dict:
    data_seed = derive_seed(cfg.seed, cfg.scenario.value, "trial", t)
    record: dict = {"trial": t, "data_seed": data_seed}
    data = generate(cfg.scenario, cfg.n, data_seed).observed()
    icfg = replace(cfg.inference, seed=derive_seed(cfg.seed, cfg.scenario.value, "replicates", t))
    try:
        res = triangulate_data(data, cfg.models, cfg.kernel, icfg)
    except TriangulationError as exc:
        record["error"] = f"{type(exc).__name__}: {exc}"
        return record
    record.update(
        psi_n=res.psi_combined,
        se=res.se,
        ci=list(res.ci),
        ci_rescaled=None if res.ci_rescaled is None else list(res.ci_rescaled),
        betas=[m.beta for m in res.per_model],
        psis=[m.psi for m in res.per_model],
        weights=[m.weight for m in res.per_model],
        degenerate=res.degenerate_flag,
        error=None,
    )
    return record


@dataclass
class TrialMetrics:
    scenario: str
    n: int
    labels: list[str]
    theta: float
    theta_mc_se: float
    psi_limit: float
    records: list[dict]
    failed: int
    mean_estimate: float
    sd_estimate: float
    bias: float
    coverage_theta: float
    coverage_psi: float
    mean_ci_width: float
    band: tuple[float, float]
    model_mean_psi: list[float]
    model_sd_psi: list[float]
    model_mean_beta: list[float]
    model_mean_weight: list[float]

    def estimates(self) -> np.ndarray:
        return np.array([r["psi_n"] for r in self.records if r.get("error") is None])

    def model_psis(self) -> np.ndarray:
        return np.array([r["psis"] for r in self.records if r.get("error") is None])

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "n": self.n,
            "labels": self.labels,
            "theta": self.theta,
            "theta_mc_se": self.theta_mc_se,
            "psi_limit": self.psi_limit,
            "trials": len(self.records),
            "failed": self.failed,
            "mean_estimate": self.mean_estimate,
            "sd_estimate": self.sd_estimate,
            "bias": self.bias,
            "coverage_theta": self.coverage_theta,
            "coverage_psi": self.coverage_psi,
            "mean_ci_width": self.mean_ci_width,
            "band": list(self.band),
            "model_mean_psi": self.model_mean_psi,
            "model_sd_psi": self.model_sd_psi,
            "model_mean_beta": self.model_mean_beta,
            "model_mean_weight": self.model_mean_weight,
            "records": self.records,
        }


def aggregate(cfg: ScenarioConfig, records: list[dict], theta: OracleATE, psi_limit: float) -> TrialMetrics:
    records = sorted(records, key=lambda r: r["trial"])
    ok = [r for r in records if r.get("error") is None]
    failed = len(records) - len(ok)
    if failed > MAX_TRIAL_FAILURE_RATE * len(records):
        raise ExperimentUnstableError(f"{failed} of {len(records)} trials failed")
    est = np.array([r["psi_n"] for r in ok])
    lo = np.array([r["ci"][0] for r in ok])
    hi = np.array([r["ci"][1] for r in ok])
    psis = np.array([r["psis"] for r in ok])
    for r in ok:
        r["covers_theta"] = bool(r["ci"][0] <= theta.theta <= r["ci"][1])
        r["covers_psi"] = bool(r["ci"][0] <= psi_limit <= r["ci"][1])
    band = np.percentile(est, [2.5, 97.5])
    return TrialMetrics(
        scenario=cfg.scenario.value,
        n=cfg.n,
        labels=[m.label for m in cfg.models],
        theta=theta.theta,
        theta_mc_se=theta.mc_se,
        psi_limit=psi_limit,
        records=records,
        failed=failed,
        mean_estimate=float(est.mean()),
        sd_estimate=float(est.std(ddof=1)) if est.size > 1 else 0.0,
        bias=float(est.mean() - theta.theta),
        coverage_theta=float(np.mean((lo <= theta.theta) & (theta.theta <= hi))),
        coverage_psi=float(np.mean((lo <= psi_limit) & (psi_limit <= hi))),
        mean_ci_width=float(np.mean(hi - lo)),
        band=(float(band[0]), float(band[1])),
        model_mean_psi=psis.mean(axis=0).tolist(),
        model_sd_psi=(psis.std(axis=0, ddof=1) if len(ok) > 1 else np.zeros(psis.shape[1])).tolist(),
        model_mean_beta=np.mean([r["betas"] for r in ok], axis=0).tolist(),
        model_mean_weight=np.mean([r["weights"] for r in ok], axis=0).tolist(),
    )


def run_trials(cfg: ScenarioConfig) -> TrialMetrics:
    """Repeat generate / estimate / triangulate and summarise coverage and bias.

    Trial t draws its data and its resampling streams from seeds derived
    from (cfg.seed, scenario, t), so any trial can be rerun on its own and
    the aggregates do not depend on execution order.
    """
    theta = oracle_ate(cfg.scenario, cfg.oracle_N, derive_seed(cfg.seed, "oracle"))
    limit = large_sample_limits(cfg.scenario, cfg.limit_N, derive_seed(cfg.seed, "limit"), cfg.kernel.a)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            records = list(pool.map(_run_one, [cfg] * cfg.trials, range(cfg.trials)))
    else:
        records = [_run_one(cfg, t) for t in range(cfg.trials)]
    for r in records:
        if r.get("error"):
            log.warning("trial %d failed: %s", r["trial"], r["error"])
    return aggregate(cfg, records, theta, limit.psi_limit)


@dataclass(frozen=True)
class PointTrials:
    betas: np.ndarray
    psis: np.ndarray
    psi_n: np.ndarray


def _point_one(args) -> tuple[np.ndarray, np.ndarray, float] | None:
    scenario, n, seed, t, kernel = args
    data = generate(scenario, n, derive_seed(seed, scenario.value, "trial", t)).observed()
    try:
        est = estimate_models(data, scenario_models(scenario))
    except TriangulationError:
        return None
    betas = np.array([e.beta.value for e in est])
    psis = np.array([e.psi.value for e in est])
    return betas, psis, triangulate(betas, psis, kernel.resolved(n))


def point_trials(scenario: Scenario | str, n: int, trials: int, seed: int = 0,
                 kernel: KernelConfig | None = None) -> PointTrials:
    """Point estimates only (no intervals) over repeated datasets.

    Uses the same per-trial data streams as :func:`run_trials`; failed
    trials are skipped under the same 5% tolerance.
    """
    scenario = Scenario.parse(scenario)
    kernel = kernel or KernelConfig()
    out = [_point_one((scenario, n, seed, t, kernel)) for t in range(trials)]
    ok = [o for o in out if o is not None]
    if len(out) - len(ok) > MAX_TRIAL_FAILURE_RATE * trials:
        raise ExperimentUnstableError(f"{len(out) - len(ok)} of {trials} trials failed")
    return PointTrials(
        betas=np.array([o[0] for o in ok]),
        psis=np.array([o[1] for o in ok]),
        psi_n=np.array([o[2] for o in ok]),
    )
