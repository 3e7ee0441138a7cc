"""Gaussian-kernel model weights and the triangulated combination.

Kernel masses are handled on the log scale so that weights stay finite when
every |beta| is many multiples of ``a`` (where the raw kernel underflows).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .exceptions import DomainError, NoValidModelError

DEGENERACY_FACTOR = 10.0


@dataclass(frozen=True)
class KernelConfig:
    """Kernel sharpness ``a`` and stabilizer ``lam``.

    ``lam=None`` means "1/n", resolved against the sample size with
    :meth:`resolved`.
    """

    a: float = 0.1
    lam: float | None = None

    def __post_init__(self):
        if not (self.a > 0 and math.isfinite(self.a)):
            raise DomainError(f"kernel parameter a must be positive, got {self.a}")
        if self.lam is not None and not (self.lam >= 0 and math.isfinite(self.lam)):
            raise DomainError(f"lambda must be nonnegative, got {self.lam}")

    def resolved(self, n: int) -> "KernelConfig":
        if self.lam is not None:
            return self
        return replace(self, lam=1.0 / n)

    def _lam(self) -> float:
        if self.lam is None:
            raise DomainError("lambda is unresolved; call KernelConfig.resolved(n) first")
        return self.lam


def gaussian_kernel(beta, a: float):
    """delta_a(beta) = exp(-(beta/a)^2) / (a sqrt(pi))."""
    if not a > 0:
        raise DomainError(f"kernel parameter a must be positive, got {a}")
    beta = np.asarray(beta, dtype=float)
    out = np.exp(-((beta / a) ** 2)) / (a * math.sqrt(math.pi))
    return float(out) if out.ndim == 0 else out


def log_kernel(beta, a: float) -> np.ndarray:
    if not a > 0:
        raise DomainError(f"kernel parameter a must be positive, got {a}")
    beta = np.asarray(beta, dtype=float)
    return -((beta / a) ** 2) - math.log(a * math.sqrt(math.pi))


def _scaled(log_delta: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    """Kernel masses and lambda, both divided by the largest of them.

    Normalizing after the shift keeps weights accurate to a few ulps even
    when every log-mass is far from zero.
    """
    log_lam = math.log(lam) if lam > 0 else -math.inf
    m = max(float(np.max(log_delta)), log_lam)
    lam_s = math.exp(log_lam - m) if lam > 0 else 0.0
    return np.exp(log_delta - m), lam_s


def weights(betas: Sequence[float], cfg: KernelConfig) -> np.ndarray:
    """w_k = delta(beta_k) / (lambda + sum_j delta(beta_j))."""
    betas = np.atleast_1d(np.asarray(betas, dtype=float))
    if betas.size < 1:
        raise DomainError("need at least one model")
    e, lam_s = _scaled(log_kernel(betas, cfg.a), cfg._lam())
    return e / (lam_s + e.sum())


def kernel_mass(betas: Sequence[float], a: float) -> float:
    return float(np.sum(gaussian_kernel(np.atleast_1d(betas), a)))


def is_degenerate(betas: Sequence[float], cfg: KernelConfig) -> bool:
    """True when the total kernel mass is below 10 * lambda."""
    return kernel_mass(betas, cfg.a) < DEGENERACY_FACTOR * cfg._lam()


def _pair(betas, psis) -> tuple[np.ndarray, np.ndarray]:
    betas = np.atleast_1d(np.asarray(betas, dtype=float))
    psis = np.atleast_1d(np.asarray(psis, dtype=float))
    if betas.shape != psis.shape:
        raise DomainError(f"betas and psis differ in length ({betas.size} vs {psis.size})")
    if betas.size < 1:
        raise DomainError("need at least one model")
    return betas, psis


def triangulate(betas: Sequence[float], psis: Sequence[float], cfg: KernelConfig) -> float:
    betas, psis = _pair(betas, psis)
    return float(np.dot(weights(betas, cfg), psis))


def naive_triangulate(betas: Sequence[float], psis: Sequence[float], tol: float = 1e-9) -> float:
    """Average of psi_k over models with |beta_k| <= tol."""
    betas, psis = _pair(betas, psis)
    if tol < 0:
        raise DomainError("tolerance must be nonnegative")
    keep = np.abs(betas) <= tol
    if not keep.any():
        raise NoValidModelError(f"no model has |beta| <= {tol}")
    return float(np.mean(psis[keep]))


def gamma_partials(betas: Sequence[float], psis: Sequence[float], cfg: KernelConfig) -> np.ndarray:
    """Gradient of the triangulated estimate in (beta_1..beta_K, psi_1..psi_K).

    d psi / d beta_k = (2 beta_k w_k / a^2) * (sum_{i != k} w_i psi_i - psi_k r_k),
    r_k = (lambda + sum_{j != k} delta_j) / (lambda + sum_j delta_j),
    and d psi / d psi_k = w_k.
    """
    betas, psis = _pair(betas, psis)
    e, lam_s = _scaled(log_kernel(betas, cfg.a), cfg._lam())
    den = lam_s + e.sum()
    w = e / den
    K = betas.size
    rest = np.empty(K)
    cross = np.empty(K)
    for k in range(K):
        others = np.delete(np.arange(K), k)
        # 1 - w_k summed directly, without cancellation
        rest[k] = (lam_s + e[others].sum()) / den
        cross[k] = float(np.dot(w[others], psis[others]))
    d_beta = (2.0 * betas * w / cfg.a**2) * (cross - psis * rest)
    return np.concatenate([d_beta, w])


@dataclass(frozen=True)
class Theorem1Diagnostics:
    D_a: float
    bound: float
    attained: float
    eps: float
    lower_bound_Da: float


def theorem1_diagnostics(
    betas: Sequence[float],
    psis: Sequence[float],
    theta: float,
    correct_indices,
    cfg: KernelConfig | None = None,
) -> Theorem1Diagnostics:
    """Robustness-bound diagnostics for a known split into correct/incorrect models.

    The bound is stated for the unstabilized functional, so lambda is forced
    to zero here whatever ``cfg`` says.
    """
    a = (cfg or KernelConfig()).a
    betas, psis = _pair(betas, psis)
    K = betas.size
    correct = sorted(set(int(i) for i in correct_indices))
    if not correct or len(correct) >= K or correct[0] < 0 or correct[-1] >= K:
        raise DomainError("correct_indices must be a nonempty proper subset of model indices")
    mask = np.zeros(K, dtype=bool)
    mask[correct] = True
    ld = log_kernel(betas, a)
    D_a = math.exp(logsumexp(ld[mask]) - logsumexp(ld[~mask]))
    bound = float(np.max(np.abs(psis - theta))) / (1.0 + D_a)
    # weights sum to one at lambda = 0, so this equals |psi - theta| without
    # the cancellation of subtracting theta from the combined estimate
    w = weights(betas, KernelConfig(a=a, lam=0.0))
    attained = abs(float(np.dot(w, psis - theta)))
    eps = float(np.min(np.abs(betas[~mask])))
    n_incorrect = int((~mask).sum())
    lower = math.exp((eps / a) ** 2) / n_incorrect
    return Theorem1Diagnostics(D_a=D_a, bound=bound, attained=attained, eps=eps, lower_bound_Da=lower)


def discrimination_factor(eps: float, a: float, n_incorrect: int) -> float:
    """Guaranteed bias-reduction factor 1 + exp(eps^2/a^2)/|I|."""
    if n_incorrect < 1:
        raise DomainError("need at least one incorrect model")
    if not a > 0:
        raise DomainError(f"kernel parameter a must be positive, got {a}")
    return 1.0 + math.exp((eps / a) ** 2) / n_incorrect
