"""Closed-form convergence and sampling budgets for single-step Newton tracking.

These are sufficient-condition bounds, implemented exactly as derived, not
practical resource prescriptions; the loose shot form in particular is far
from tight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

SQRT2 = math.sqrt(2.0)


def _require_positive(**kwargs):
    for name, val in kwargs.items():
        if not (val > 0):
            raise ValueError(f"{name} must be positive, got {val}")


@dataclass(frozen=True)
class ProblemConstants:
    """Problem-level constants feeding the budget formulas."""

    m: float                 # convexity lower bound at the tracked minimum
    L: float                 # Hessian Lipschitz constant
    gdot_max: float          # max 2-norm of grad of dE/dt
    n_p: int                 # parameter count
    grad_norm: float = 1.0   # gradient 2-norm entering the Hessian variance budget
    H_norm: float = 1.0      # Hamiltonian spectral norm
    Hdot_norm: float = 1.0   # spectral norm of dH/dt
    gap: float = 1.0         # ground-state gap
    M_H: float = 1.0         # shots per Hessian element per unit variance


@dataclass(frozen=True)
class BoundsReport:
    radius: float
    dt_max: float
    sigma_theta_max: float
    sigma2_grad_max: float
    sigma2_hess_max: float
    m_tot_tight: float
    m_tot_loose: float
    g_max: float
    l_bound: float
    gdot_bound: float

    def to_dict(self) -> dict:
        return asdict(self)


def convergence_radius(m: float, L: float) -> float:
    """Radius m/(4L) of the guaranteed quadratic-convergence ball around the minimizer."""
    _require_positive(m=m, L=L)
    return m / (4.0 * L)


def step_and_noise_budget(m: float, L: float, gdot_max: float) -> tuple:
    """(dt_max, sigma_theta_max) keeping single NR steps inside the convergence ball.

    dt_max = m^2 / (8 L gdot_max); sigma_theta_max = (sqrt(2)-1)/4 * m/L.
    """
    _require_positive(m=m, L=L, gdot_max=gdot_max)
    return m**2 / (8.0 * L * gdot_max), (SQRT2 - 1.0) / 4.0 * m / L


def variance_budgets(m: float, L: float, n_p: int, grad_norm: float) -> tuple:
    """Per-element variance budgets (sigma2_grad_max, sigma2_hess_max).

    Both carry the (3 - 2 sqrt 2)/32 split-budget prefactor; the Hessian budget
    additionally divides by the squared gradient norm.
    """
    _require_positive(m=m, L=L, n_p=n_p, grad_norm=grad_norm)
    pref = (3.0 - 2.0 * SQRT2) / 32.0
    s2g = pref * m**4 / (n_p * L**2)
    s2h = pref * m**6 / (n_p * L**2 * grad_norm**2)
    return s2g, s2h


def total_shots_bound(c: ProblemConstants) -> tuple:
    """(tight, loose) total-shot bounds.

    tight = 1e3 n_p L^3 |G|^2 gdot_max Delta^-8 M_H;
    loose = 1e3 n_p^4 |H|^7 |Hdot| Delta^-8 M_H.
    """
    _require_positive(m=c.m, L=c.L, gdot_max=c.gdot_max, n_p=c.n_p,
                      grad_norm=c.grad_norm, H_norm=c.H_norm,
                      Hdot_norm=c.Hdot_norm, gap=c.gap, M_H=c.M_H)
    tight = 1e3 * c.n_p * c.L**3 * c.grad_norm**2 * c.gdot_max * c.gap**-8 * c.M_H
    loose = 1e3 * c.n_p**4 * c.H_norm**7 * c.Hdot_norm * c.gap**-8 * c.M_H
    return tight, loose


def derivative_norm_bounds(n_p: int, H_norm: float, Hdot_norm: float) -> tuple:
    """(G_max, L_bound, Gdot_bound) from nested-commutator norms of unit generators.

    G_max = 2 sqrt(n_p) |H|; L_bound = 8 n_p^(3/2) |H| (factor 8 covers the
    deepest commutator nesting, including orbital-rotation generators);
    Gdot_bound = 2 sqrt(n_p) |Hdot|.
    """
    _require_positive(n_p=n_p, H_norm=H_norm, Hdot_norm=Hdot_norm)
    return (2.0 * math.sqrt(n_p) * H_norm,
            8.0 * n_p**1.5 * H_norm,
            2.0 * math.sqrt(n_p) * Hdot_norm)


def param_overlap_bound(theta_a, theta_b) -> float:
    """Lower bound 1 - |theta_a - theta_b|_1 on the overlap of two ansatz states.

    Valid for products of rotations with unit-norm generators; an overlap of -1
    therefore requires the parameters to move by at least 2 in one-norm.
    """
    ta = np.asarray(theta_a, dtype=float).reshape(-1)
    tb = np.asarray(theta_b, dtype=float).reshape(-1)
    if ta.size != tb.size:
        raise ValueError("parameter vectors differ in length")
    return float(1.0 - np.sum(np.abs(ta - tb)))


def bounds_report(c: ProblemConstants) -> BoundsReport:
    """Assemble every budget into one report."""
    radius = convergence_radius(c.m, c.L)
    dt_max, sig_theta = step_and_noise_budget(c.m, c.L, c.gdot_max)
    s2g, s2h = variance_budgets(c.m, c.L, c.n_p, c.grad_norm)
    tight, loose = total_shots_bound(c)
    g_max, l_bound, gdot_bound = derivative_norm_bounds(c.n_p, c.H_norm, c.Hdot_norm)
    return BoundsReport(
        radius=radius, dt_max=dt_max, sigma_theta_max=sig_theta,
        sigma2_grad_max=s2g, sigma2_hess_max=s2h,
        m_tot_tight=tight, m_tot_loose=loose,
        g_max=g_max, l_bound=l_bound, gdot_bound=gdot_bound,
    )


def simulate_drifting_tracking(m: float, L: float, gdot_max: float, n_steps: int,
                               noise_scale: float, rng: np.random.Generator,
                               dt: float | None = None) -> float:
    """Scalar drifting-minimum tracking oracle; returns the max post-step error.

    Cost E(t, u) = m u^2/2 + L u^3/6 around a minimizer moving at (4/5) gdot/m
    per unit t (so the declared gdot_max bounds the actual one inside the
    convergence ball). One NR step per t-step; uniform noise of magnitude up to
    noise_scale is injected into the estimate before each step.
    """
    _require_positive(m=m, L=L, gdot_max=gdot_max, n_steps=n_steps)
    if dt is None:
        dt = step_and_noise_budget(m, L, gdot_max)[0]
    drift = 0.8 * gdot_max / m * dt
    delta = 0.0  # estimate minus current minimizer
    worst = 0.0
    for _ in range(n_steps):
        guess = delta + rng.uniform(-noise_scale, noise_scale) - drift
        grad = m * guess + 0.5 * L * guess**2
        hess = m + L * guess
        delta = guess - grad / hess
        worst = max(worst, abs(delta))
    return worst
