"""Quantized-Berry-phase resolution by minimum tracking.

One full optimization fixes the t=0 optimum; every later grid point gets a
single (optionally regularized and backtracked) Newton-Raphson update computed
from the next point's cost surface. The loop closes with the real overlap
between initial and final tracked states, whose sign is the Berry phase.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.linalg

from . import SCHEMA_VERSION
from . import hamiltonian as hml
from . import noise as noise_mod
from . import orbital as orb
from . import statevec as sv

FAIL_NONCONVEX = "NonConvexHessian"
FAIL_LOW_FIDELITY = "LowFidelity"
FAIL_BACKTRACK = "BacktrackExhausted"
FAIL_REAL_LOG = "RealLogFailure"


class BacktrackExhaustedError(RuntimeError):
    pass


class OptimizationError(RuntimeError):
    pass


@dataclass
class TrackerConfig:
    """Algorithm knobs; every constant the update rule uses is exposed here."""

    n_steps: int = 25
    m_thr: float = 1e-4
    reg: bool = False
    backtrack: bool = False
    alpha: float = 1e-4
    beta: float = 0.5
    mu: float = 1e-4
    rho: float = 2.0
    fidelity: float = 0.5
    sigma2_grad: float = 0.0
    sigma2_hess: float = 0.0
    seed: int = 0
    max_backtrack: int = 50
    include_active_active: bool | None = None  # None: auto (off when the PQC has rotation gates)
    block_tol: float = 1e-3

    def __post_init__(self):
        if self.n_steps < 2:
            raise ValueError("need at least 2 discretization steps")
        if not (0.0 < self.beta < 1.0):
            raise ValueError("backtracking damping beta must be in (0, 1)")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("Armijo constant alpha must be in (0, 1)")
        if not (0.0 < self.fidelity < 1.0):
            raise ValueError("final fidelity requirement must be in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrackState:
    """Per-step trace entry; energy is the exact cost at the updated point."""

    t: float
    theta: np.ndarray
    C: np.ndarray | None
    energy: float
    lambda0: float
    step_norm: float

    def to_json_dict(self) -> dict:
        return {
            "t": self.t,
            "energy": self.energy,
            "lambda0": self.lambda0,
            "step_norm": self.step_norm,
        }


@dataclass
class BerryPhaseResult:
    outcome: str                        # "zero" | "pi" | "fail"
    omega: float | None
    fail_reason: str | None
    n_steps: int
    config: TrackerConfig
    trace: list
    theta_initial: np.ndarray
    theta_final: np.ndarray
    seed: int
    wall_time_s: float

    @property
    def failed(self) -> bool:
        return self.outcome == "fail"

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "outcome": self.outcome,
            "omega": self.omega,
            "fail_reason": self.fail_reason,
            "n_steps": self.n_steps,
            "config": self.config.to_dict(),
            "trace": [s.to_json_dict() for s in self.trace],
            "theta_initial": np.asarray(self.theta_initial).tolist(),
            "theta_final": np.asarray(self.theta_final).tolist(),
            "seed": self.seed,
            "wall_time_s": self.wall_time_s,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


@dataclass
class TrackPoint:
    """Joint parameter state: circuit angles plus (for OO problems) MO coefficients."""

    theta: np.ndarray
    C: np.ndarray | None = None

    def copy(self) -> "TrackPoint":
        return TrackPoint(self.theta.copy(), None if self.C is None else self.C.copy())


# ---------------------------------------------------------------------------
# Tracking problems


class AnalyticProblem:
    """Dense Hamiltonian family tracked with a plane-rotation (or custom) real ansatz."""

    def __init__(self, loop: hml.LoopSpec, ansatz: sv.AnsatzCircuit):
        self.loop = loop
        self.ansatz = ansatz
        self.n_theta = ansatz.n_params
        self.n_kappa = 0

    def hamiltonian(self, t: float) -> np.ndarray:
        return np.asarray(self.loop.point(t), dtype=float)

    def initial_point(self) -> TrackPoint:
        return TrackPoint(theta=np.zeros(self.n_theta))

    def energy(self, t: float, point: TrackPoint) -> float:
        h = self.hamiltonian(t)
        v = self.ansatz.prepare(point.theta).real_array()
        return float(v @ h @ v)

    def derivatives(self, t: float, point: TrackPoint):
        h = self.hamiltonian(t)
        psi, dpsi, d2psi = self.ansatz.derivative_states(point.theta, order=2)
        hpsi = h @ psi
        grad = 2.0 * dpsi @ hpsi
        hess = 2.0 * (dpsi @ h @ dpsi.T + d2psi @ hpsi)
        hess = 0.5 * (hess + hess.T)
        return float(psi @ hpsi), grad, hess

    def apply_step(self, point: TrackPoint, dx: np.ndarray) -> TrackPoint:
        return TrackPoint(theta=point.theta + dx)

    def final_overlap(self, p0: TrackPoint, p1: TrackPoint) -> float:
        a = self.ansatz.prepare(p0.theta).real_array()
        b = self.ansatz.prepare(p1.theta).real_array()
        return float(a @ b)


class MolecularProblem:
    """Bundle-list loop tracked with an orbital-optimized PQC ansatz.

    The composite parameter vector is (theta, kappa); kappa re-expands around
    zero after every accepted step via C <- C exp(-kappa).
    """

    def __init__(self, loop: hml.LoopSpec, ansatz: sv.AnsatzCircuit,
                 include_active_active: bool | None = None, block_tol: float = 1e-3):
        if loop.active_space is None:
            raise ValueError("bundle loop carries no active-space specification")
        self.loop = loop
        self.active = loop.active_space
        self.ansatz = ansatz
        if include_active_active is None:
            include_active_active = not any(
                g.label.startswith("rot(") for g in ansatz.generators)
        self.kmap = orb.kappa_index_map(self.active, include_active_active)
        self.n_theta = ansatz.n_params
        self.n_kappa = self.kmap.n_params
        self.block_tol = block_tol

    # -- setup ---------------------------------------------------------------

    def initial_point(self) -> TrackPoint:
        return TrackPoint(theta=np.zeros(self.n_theta),
                          C=reference_orbitals(self.loop))

    # -- cost machinery --------------------------------------------------------

    def _active_parts(self, t: float, C: np.ndarray):
        bundle = self.loop.point(t)
        ham = hml.build_active_hamiltonian(bundle, C, self.active)
        # fold the e_pqrs contraction term into an effective one-body piece
        h1 = ham.h_eff - 0.5 * np.einsum("pqqs->ps", ham.g_act)
        return ham, h1

    def _apply_hamiltonian(self, h1: np.ndarray, g_act: np.ndarray,
                           vecs: np.ndarray) -> np.ndarray:
        na = self.active.n_active
        phi = sv._phi_stack(na, vecs)
        out = np.einsum("pq,...pqd->...d", h1, phi)
        tmat = 0.5 * np.einsum("pqrs,...rsd->...pqd", g_act, phi)
        ops = sv.spin_summed_excitation_ops(na)
        flat = tmat.reshape(-1, na * na, tmat.shape[-1])
        acc = np.zeros((flat.shape[0], tmat.shape[-1]))
        for i, op in enumerate(ops):
            acc += (op @ flat[:, i, :].T).T
        return out + acc.reshape(out.shape)

    def energy(self, t: float, point: TrackPoint) -> float:
        ham, h1 = self._active_parts(t, point.C)
        v = self.ansatz.prepare(point.theta).real_array()
        return float(v @ self._apply_hamiltonian(h1, ham.g_act, v)) + ham.e_const

    def derivatives(self, t: float, point: TrackPoint):
        bundle = self.loop.point(t)
        h_mo, g_mo = hml.mo_integrals(bundle, point.C)
        e_core, h_eff = hml.core_folding(h_mo, g_mo, self.active)
        act = list(self.active.active)
        g_act = g_mo[np.ix_(act, act, act, act)]
        e_const = bundle.e_nuc_core + e_core
        h1 = h_eff - 0.5 * np.einsum("pqqs->ps", g_act)

        psi, dpsi, d2psi = self.ansatz.derivative_states(point.theta, order=2)
        hpsi = self._apply_hamiltonian(h1, g_act, psi)
        hdpsi = self._apply_hamiltonian(h1, g_act, dpsi)
        energy = float(psi @ hpsi) + e_const
        grad_theta = 2.0 * dpsi @ hpsi
        hess_tt = 2.0 * (dpsi @ hdpsi.T + d2psi @ hpsi)
        hess_tt = 0.5 * (hess_tt + hess_tt.T)

        na = self.active.n_active
        rdms = sv.rdms_from_vector(psi, na)
        full = orb.full_space_rdms(rdms, self.active)
        grad_kappa = orb.orbital_gradient(full, h_mo, g_mo, self.kmap)
        hess_kk = orb.orbital_hessian(full, h_mo, g_mo, self.kmap)

        dgam = np.einsum("jqpd,d->jpq", sv._phi_stack(na, dpsi), psi)
        dgam = dgam + dgam.transpose(0, 2, 1)
        phi_psi = sv._phi_stack(na, psi)
        phi_d = sv._phi_stack(na, dpsi)
        dGam = np.einsum("jqpd,rsd->jpqrs", phi_d, phi_psi) + np.einsum(
            "qpd,jrsd->jpqrs", phi_psi, phi_d)
        corr = np.einsum("jd,psd->jps", dpsi, phi_psi) + np.einsum(
            "d,jpsd->jps", psi, phi_d)
        for q in range(na):
            dGam[:, :, q, q, :] -= corr
        dg_full, dG_full = orb.full_space_rdm_derivatives(dgam, dGam, self.active)
        hess_kt = orb.mixed_hessian(dg_full, dG_full, h_mo, g_mo, self.kmap)

        n = self.n_theta + self.n_kappa
        grad = np.concatenate([grad_theta, grad_kappa])
        hess = np.zeros((n, n))
        hess[: self.n_theta, : self.n_theta] = hess_tt
        hess[self.n_theta:, self.n_theta:] = hess_kk
        hess[self.n_theta:, : self.n_theta] = hess_kt
        hess[: self.n_theta, self.n_theta:] = hess_kt.T
        return energy, grad, hess

    def apply_step(self, point: TrackPoint, dx: np.ndarray) -> TrackPoint:
        dtheta = dx[: self.n_theta]
        dkappa = dx[self.n_theta:]
        return TrackPoint(theta=point.theta + dtheta,
                          C=orb.apply_kappa(point.C, self.kmap, dkappa))

    def transfer(self, p0: TrackPoint, p1: TrackPoint) -> orb.OrbitalTransfer:
        return orb.transfer_and_generator(p0.C, p1.C, self.active, self.block_tol)

    def final_overlap(self, p0: TrackPoint, p1: TrackPoint) -> float:
        transfer = self.transfer(p0, p1)
        if not transfer.aligned:
            raise orb.RealLogError(
                f"active spaces misaligned: block residual {transfer.block_residual:.3e} "
                f"exceeds {self.block_tol:.0e}")
        state1 = self.ansatz.prepare(p1.theta)
        rotated = orb.apply_orbital_rotation_to_state(state1, transfer.G_generator, self.active)
        state0 = self.ansatz.prepare(p0.theta)
        return float(np.real(state0.overlap(rotated)))


def reference_orbitals(loop: hml.LoopSpec) -> np.ndarray:
    """Initial MO coefficients over the OAO basis: manifest-provided or fresh RHF."""
    if loop.initial_c_oao is not None:
        return np.array(loop.initial_c_oao, dtype=float)
    active = loop.active_space
    n_elec = 2 * active.n_core + active.n_active_electrons
    C, _ = orb.restricted_hartree_fock(loop.point(0.0), n_elec)
    return C


def build_problem(loop: hml.LoopSpec, ansatz: sv.AnsatzCircuit, cfg: TrackerConfig):
    if loop.kind == "bundle-list":
        return MolecularProblem(loop, ansatz,
                                include_active_active=cfg.include_active_active,
                                block_tol=cfg.block_tol)
    return AnalyticProblem(loop, ansatz)


# ---------------------------------------------------------------------------
# Newton-Raphson updates


def newton_step(grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """dx = -hess^{-1} grad via a symmetric solve; caller guarantees invertibility."""
    return -scipy.linalg.solve(hess, grad, assume_a="sym")


def _regularized_dx(grad: np.ndarray, hess: np.ndarray, lambda0: float,
                    cost0: float, eval_at, cfg: TrackerConfig) -> tuple:
    """Regularized, optionally backtracked update; returns (dx, n_backtracks)."""
    if lambda0 < cfg.m_thr:
        nu = cfg.rho * abs(lambda0) + cfg.mu
        b = hess + nu * np.eye(hess.shape[0])
    else:
        b = hess
    dx = -scipy.linalg.solve(b, grad, assume_a="sym")
    n_bt = 0
    if cfg.backtrack:
        while eval_at(dx) > cost0 + cfg.alpha * float(grad @ dx):
            dx = cfg.beta * dx
            n_bt += 1
            if n_bt > cfg.max_backtrack:
                raise BacktrackExhaustedError(
                    f"Armijo condition unmet after {cfg.max_backtrack} dampings")
    return dx, n_bt


def regularized_step(theta_now: np.ndarray, grad: np.ndarray, hess: np.ndarray,
                     cost, cfg: TrackerConfig) -> np.ndarray:
    """Plain-vector regularized NR update: returns theta_now + d_theta.

    `cost` evaluates the fixed-t energy at a parameter vector; it is consulted
    only when cfg.backtrack is set.
    """
    theta_now = np.asarray(theta_now, dtype=float)
    lambda0 = float(np.linalg.eigvalsh(np.asarray(hess, dtype=float)).min())
    dx, _ = _regularized_dx(
        np.asarray(grad, dtype=float), np.asarray(hess, dtype=float), lambda0,
        float(cost(theta_now)), lambda d: float(cost(theta_now + d)), cfg)
    return theta_now + dx


# ---------------------------------------------------------------------------
# Full optimization at the loop start


def full_optimize(problem, point: TrackPoint | None = None, t: float = 0.0,
                  grad_tol: float = 1e-8, max_iter: int = 200,
                  cfg: TrackerConfig | None = None) -> tuple:
    """Regularized, backtracked NR iteration to a local minimum of E(t, .).

    Returns (point, info) with info carrying the final gradient norm, the lowest
    Hessian eigenvalue and the iteration count. Deterministic saddle escapes
    kick along the most negative eigenvector when the gradient vanishes there.
    """
    if cfg is None:
        cfg = TrackerConfig(reg=True, backtrack=True)
    else:
        cfg = TrackerConfig(**{**cfg.to_dict(), "reg": True, "backtrack": True,
                               "sigma2_grad": 0.0, "sigma2_hess": 0.0})
    if point is None:
        point = problem.initial_point()
    kicks = 0
    for it in range(max_iter):
        energy, grad, hess = problem.derivatives(t, point)
        gnorm = float(np.max(np.abs(grad))) if grad.size else 0.0
        w, v = np.linalg.eigh(hess)
        lambda0 = float(w[0])
        if gnorm <= grad_tol:
            if lambda0 < -1e-6 and kicks < 12:
                # stationary but not a minimum: nudge along the descent eigenvector
                direction = v[:, 0]
                if direction[np.argmax(np.abs(direction))] < 0:
                    direction = -direction
                point = problem.apply_step(point, 0.1 * direction)
                kicks += 1
                continue
            return point, {"iterations": it, "grad_norm": gnorm,
                           "lambda0": lambda0, "energy": energy}
        dx, _ = _regularized_dx(
            grad, hess, lambda0, energy,
            lambda d: problem.energy(t, problem.apply_step(point, d)), cfg)
        point = problem.apply_step(point, dx)
    energy, grad, _ = problem.derivatives(t, point)
    raise OptimizationError(
        f"full optimization did not reach |grad|_inf <= {grad_tol:.0e} in "
        f"{max_iter} iterations (final {np.max(np.abs(grad)):.3e})")


# ---------------------------------------------------------------------------
# The loop driver


def final_overlap(ansatz: sv.AnsatzCircuit, theta0, theta1,
                  transfer: orb.OrbitalTransfer | None = None,
                  active=None) -> float:
    """Re<psi(theta0)| G_{0->1} |psi(theta1)>; G omitted for non-OO problems."""
    ket = ansatz.prepare(theta1)
    if transfer is not None:
        if not transfer.aligned:
            raise orb.RealLogError("transfer block residual exceeds tolerance")
        ket = orb.apply_orbital_rotation_to_state(ket, transfer.G_generator, active)
    bra = ansatz.prepare(theta0)
    return float(np.real(bra.overlap(ket)))


def run_loop(loop: hml.LoopSpec, ansatz: sv.AnsatzCircuit,
             cfg: TrackerConfig) -> BerryPhaseResult:
    """Resolve the quantized Berry phase of a closed loop (single NR update per step)."""
    if not loop.supports_steps(cfg.n_steps):
        raise hml.LoopGridError(
            f"loop grid with {loop.n_steps} steps cannot serve n_steps={cfg.n_steps}")
    started = time.perf_counter()
    problem = build_problem(loop, ansatz, cfg)
    model = noise_mod.NoiseModel(sigma2_grad=cfg.sigma2_grad,
                                 sigma2_hess=cfg.sigma2_hess, seed=cfg.seed)

    point0, info = full_optimize(problem, cfg=cfg)
    point = point0.copy()
    trace = [TrackState(t=0.0, theta=point0.theta.copy(),
                        C=None if point0.C is None else point0.C.copy(),
                        energy=info["energy"], lambda0=info["lambda0"], step_norm=0.0)]

    fail_reason = None
    dt = 1.0 / cfg.n_steps
    for k in range(1, cfg.n_steps + 1):
        t = k * dt
        cost_here, grad, hess = problem.derivatives(t, point)
        grad_n, hess_n = noise_mod.perturb_derivatives(grad, hess, model)
        lambda0 = float(np.linalg.eigvalsh(hess_n).min())
        if not cfg.reg:
            if lambda0 < cfg.m_thr:
                fail_reason = FAIL_NONCONVEX
                break
            dx = newton_step(grad_n, hess_n)
        else:
            try:
                dx, _ = _regularized_dx(
                    grad_n, hess_n, lambda0, cost_here,
                    lambda d: problem.energy(t, problem.apply_step(point, d)), cfg)
            except BacktrackExhaustedError:
                fail_reason = FAIL_BACKTRACK
                break
        point = problem.apply_step(point, dx)
        trace.append(TrackState(
            t=t, theta=point.theta.copy(),
            C=None if point.C is None else point.C.copy(),
            energy=problem.energy(t, point), lambda0=lambda0,
            step_norm=float(np.linalg.norm(dx))))

    omega = None
    if fail_reason is None:
        try:
            omega = problem.final_overlap(point0, point)
        except orb.RealLogError:
            fail_reason = FAIL_REAL_LOG
        if fail_reason is None:
            if omega == 0.0 or omega * omega < cfg.fidelity:
                fail_reason = FAIL_LOW_FIDELITY

    outcome = "fail" if fail_reason else ("pi" if omega < 0 else "zero")
    return BerryPhaseResult(
        outcome=outcome,
        omega=omega,
        fail_reason=fail_reason,
        n_steps=cfg.n_steps,
        config=cfg,
        trace=trace,
        theta_initial=point0.theta.copy(),
        theta_final=point.theta.copy(),
        seed=cfg.seed,
        wall_time_s=time.perf_counter() - started,
    )
