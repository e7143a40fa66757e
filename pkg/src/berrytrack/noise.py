"""Sampling-noise proxy, Hadamard-test shot simulator, and shot-count estimates.

The proxy adds i.i.d. Gaussian noise to derivative elements instead of modeling
a specific measurement grouping, keeping results strategy agnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class NoiseModel:
    """Gaussian per-element noise on gradient and Hessian; owns its RNG stream."""

    sigma2_grad: float = 0.0
    sigma2_hess: float = 0.0
    seed: int | None = None
    symmetrize: bool = True
    _rng: np.random.Generator = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.sigma2_grad < 0 or self.sigma2_hess < 0:
            raise ValueError("noise variances must be non-negative")
        if self._rng is None:
            self._rng = np.random.default_rng(self.seed)

    @property
    def enabled(self) -> bool:
        return self.sigma2_grad > 0 or self.sigma2_hess > 0

    def perturb_gradient(self, grad: np.ndarray) -> np.ndarray:
        if self.sigma2_grad == 0:
            return np.array(grad, copy=True)
        return grad + self._rng.normal(scale=math.sqrt(self.sigma2_grad), size=grad.shape)

    def perturb_hessian(self, hess: np.ndarray) -> np.ndarray:
        if self.sigma2_hess == 0:
            return np.array(hess, copy=True)
        n = hess.shape[0]
        noise = self._rng.normal(scale=math.sqrt(self.sigma2_hess), size=(n, n))
        if self.symmetrize:
            # independent draws on the upper triangle, mirrored below
            iu = np.triu_indices(n)
            sym = np.zeros((n, n))
            sym[iu] = noise[iu]
            sym = sym + np.triu(sym, 1).T
            return hess + sym
        return hess + noise


def perturb_derivatives(grad: np.ndarray, hess: np.ndarray, model: NoiseModel):
    """Noisy copies of (grad, hess); exact inputs pass through at zero variance."""
    return model.perturb_gradient(np.asarray(grad, dtype=float)), \
        model.perturb_hessian(np.asarray(hess, dtype=float))


def simulate_hadamard_test(omega_true: float, shots: int, seed=None) -> float:
    """Binomial estimate of a real overlap: shots draws with P(+1) = (1 + omega)/2."""
    if shots < 1:
        raise ValueError("need at least one shot")
    if not -1.0 <= omega_true <= 1.0:
        raise ValueError("true overlap must lie in [-1, 1]")
    rng = np.random.default_rng(seed)
    p = 0.5 * (1.0 + omega_true)
    hits = rng.binomial(shots, p)
    return 2.0 * hits / shots - 1.0


@dataclass(frozen=True)
class ShotEstimate:
    one_norm: float
    target_sigma: float
    n_shots: int


def integral_one_norm(ham) -> float:
    """Total one-norm of the sampled cost coefficients: sum|h_eff| + sum|g/2|."""
    return float(np.sum(np.abs(ham.h_eff)) + 0.5 * np.sum(np.abs(ham.g_act)))


def estimate_shots(ham, target_sigma: float) -> ShotEstimate:
    """Shots to reach accuracy target_sigma with per-term allocation: ceil(norm^2/sigma^2)."""
    if target_sigma <= 0:
        raise ValueError("target accuracy must be positive")
    norm = integral_one_norm(ham)
    return ShotEstimate(
        one_norm=norm,
        target_sigma=float(target_sigma),
        n_shots=int(math.ceil(norm**2 / target_sigma**2)),
    )
