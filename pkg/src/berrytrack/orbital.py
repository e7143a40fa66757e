"""Orbital-optimization machinery: Lowdin orthogonalization, kappa rotations,
analytic orbital gradient/Hessian from RDMs, the active-space transfer unitary,
and a small restricted Hartree-Fock solver for initial orbitals.

All MO coefficient matrices are orthogonal and expressed over the Lowdin OAO
basis, so orthonormality is geometry independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import statevec as sv


class LinearDependenceError(ValueError):
    """Overlap matrix is numerically singular."""


def lowdin_inverse_sqrt(S: np.ndarray, eig_floor: float = 1e-10) -> np.ndarray:
    """Symmetric S^{-1/2} by eigendecomposition; raises on near linear dependence."""
    S = np.asarray(S, dtype=float)
    w, v = np.linalg.eigh(0.5 * (S + S.T))
    if w.min() < eig_floor:
        raise LinearDependenceError(f"overlap eigenvalue {w.min():.3e} below {eig_floor:.0e}")
    return (v / np.sqrt(w)) @ v.T


def lowdin_sqrt(S: np.ndarray) -> np.ndarray:
    """Symmetric S^{1/2} (used to map AO coefficients into the OAO frame)."""
    S = np.asarray(S, dtype=float)
    w, v = np.linalg.eigh(0.5 * (S + S.T))
    if w.min() <= 0:
        raise LinearDependenceError("overlap matrix is not positive definite")
    return (v * np.sqrt(w)) @ v.T


# ---------------------------------------------------------------------------
# Kappa parameterization


@dataclass
class KappaIndexMap:
    """Non-redundant orbital-rotation pairs {p in O+A, q in A+V, q > p}.

    Active-active pairs are dropped when the circuit ansatz already spans the
    corresponding singles directions (the include_active_active switch).
    """

    pairs: tuple
    n_orb: int

    @property
    def n_params(self) -> int:
        return len(self.pairs)

    def to_matrix(self, values: np.ndarray) -> np.ndarray:
        """Expand the unraveled vector into the antisymmetric kappa matrix."""
        values = np.asarray(values, dtype=float).reshape(-1)
        if values.size != self.n_params:
            raise ValueError(f"expected {self.n_params} kappa values, got {values.size}")
        k = np.zeros((self.n_orb, self.n_orb))
        for (p, q), v in zip(self.pairs, values):
            k[p, q] = v
            k[q, p] = -v
        return k


def kappa_index_map(active, include_active_active: bool = True) -> KappaIndexMap:
    occ_act = set(active.core) | set(active.active)
    act_virt = set(active.active) | set(active.virtual)
    act = set(active.active)
    pairs = []
    for p in range(active.n_orb):
        for q in range(p + 1, active.n_orb):
            if p not in occ_act or q not in act_virt:
                continue
            if not include_active_active and p in act and q in act:
                continue
            pairs.append((p, q))
    return KappaIndexMap(pairs=tuple(pairs), n_orb=active.n_orb)


def apply_kappa(C: np.ndarray, kmap: KappaIndexMap, values: np.ndarray) -> np.ndarray:
    """C * exp(-kappa) with the exact matrix exponential of the antisymmetric expansion."""
    return C @ scipy.linalg.expm(-kmap.to_matrix(values))


# ---------------------------------------------------------------------------
# Full-space RDMs from active-space RDMs


def full_space_rdms(rdms: sv.RDMPair, active) -> sv.RDMPair:
    """Embed active RDMs in the full orbital space with deterministic core blocks.

    Core orbitals contribute gamma_ii = 2 and the standard closed-shell 2-RDM
    patterns; every element with a virtual index vanishes.
    """
    n = active.n_orb
    core = list(active.core)
    act = list(active.active)
    gamma = np.zeros((n, n))
    Gamma = np.zeros((n, n, n, n))
    for i in core:
        gamma[i, i] = 2.0
    gamma[np.ix_(act, act)] = rdms.gamma
    for i in core:
        for j in core:
            Gamma[i, i, j, j] += 4.0
            Gamma[i, j, j, i] += -2.0
    if core and act:
        ga = rdms.gamma
        for i in core:
            Gamma[np.ix_(act, act, [i], [i])] += 2.0 * ga[:, :, None, None]
            Gamma[np.ix_([i], [i], act, act)] += 2.0 * ga[None, None, :, :]
            Gamma[np.ix_(act, [i], [i], act)] += -ga[:, None, None, :]
            Gamma[np.ix_([i], act, act, [i])] += -ga.T[None, :, :, None]
    Gamma[np.ix_(act, act, act, act)] = rdms.Gamma
    return sv.RDMPair(gamma=gamma, Gamma=Gamma)


def full_space_rdm_derivatives(dgamma_act: np.ndarray, dGamma_act: np.ndarray, active):
    """Embed active RDM theta-derivatives; core-only blocks are theta independent."""
    n_p = dgamma_act.shape[0]
    n = active.n_orb
    core = list(active.core)
    act = list(active.active)
    dgamma = np.zeros((n_p, n, n))
    dGamma = np.zeros((n_p, n, n, n, n))
    dgamma[np.ix_(range(n_p), act, act)] = dgamma_act
    for i in core:
        dGamma[np.ix_(range(n_p), act, act, [i], [i])] += 2.0 * dgamma_act[:, :, :, None, None]
        dGamma[np.ix_(range(n_p), [i], [i], act, act)] += 2.0 * dgamma_act[:, None, None, :, :]
        dGamma[np.ix_(range(n_p), act, [i], [i], act)] += -dgamma_act[:, :, None, None, :]
        dGamma[np.ix_(range(n_p), [i], act, act, [i])] += -dgamma_act.transpose(0, 2, 1)[:, None, :, :, None]
    dGamma[np.ix_(range(n_p), act, act, act, act)] = dGamma_act
    return dgamma, dGamma


# ---------------------------------------------------------------------------
# Analytic orbital derivatives (full-space RDMs and MO integrals)


def generalized_fock(gamma: np.ndarray, Gamma: np.ndarray, h: np.ndarray,
                     g: np.ndarray) -> np.ndarray:
    """F_pq = sum_m gamma_pm h_qm + sum_mnk Gamma_pmnk g_qmnk."""
    return np.einsum("pm,qm->pq", gamma, h) + np.einsum("pmnk,qmnk->pq", Gamma, g)


def orbital_gradient(rdms_full: sv.RDMPair, h: np.ndarray, g: np.ndarray,
                     kmap: KappaIndexMap) -> np.ndarray:
    """dE/d(kappa_pq) = 2 (F_pq - F_qp) on the non-redundant index set."""
    F = generalized_fock(rdms_full.gamma, rdms_full.Gamma, h, g)
    grad_mat = 2.0 * (F - F.T)
    return np.array([grad_mat[p, q] for p, q in kmap.pairs])


def _hessian_base(gamma: np.ndarray, Gamma: np.ndarray, h: np.ndarray,
                  g: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Unsymmetrized kernel B_pqrs; the Hessian applies (1-P_pq)(1-P_rs) to it."""
    n = h.shape[0]
    Y = (np.einsum("pmrn,qmns->pqrs", Gamma, g)
         + np.einsum("pmnr,qmns->pqrs", Gamma, g)
         + np.einsum("prmn,qsmn->pqrs", Gamma, g))
    B = 2.0 * np.einsum("pr,qs->pqrs", gamma, h)
    B += 2.0 * Y
    FF = F + F.T
    eye = np.eye(n)
    B -= np.einsum("pr,qs->pqrs", FF, eye)
    return B


def orbital_hessian(rdms_full: sv.RDMPair, h: np.ndarray, g: np.ndarray,
                    kmap: KappaIndexMap) -> np.ndarray:
    """d2E/d(kappa_pq)d(kappa_rs), symmetric over the non-redundant pairs."""
    F = generalized_fock(rdms_full.gamma, rdms_full.Gamma, h, g)
    B = _hessian_base(rdms_full.gamma, rdms_full.Gamma, h, g, F)
    ps = np.array([p for p, _ in kmap.pairs])
    qs = np.array([q for _, q in kmap.pairs])
    # gather with permutation operators (1-P_pq)(1-P_rs)
    hess = (B[ps[:, None], qs[:, None], ps[None, :], qs[None, :]]
            - B[qs[:, None], ps[:, None], ps[None, :], qs[None, :]]
            - B[ps[:, None], qs[:, None], qs[None, :], ps[None, :]]
            + B[qs[:, None], ps[:, None], qs[None, :], ps[None, :]])
    return 0.5 * (hess + hess.T)


def mixed_hessian(dgamma_full: np.ndarray, dGamma_full: np.ndarray, h: np.ndarray,
                  g: np.ndarray, kmap: KappaIndexMap) -> np.ndarray:
    """d2E/d(kappa_pq)d(theta_j) = 2 (dF_pq - dF_qp)/d(theta_j); shape (n_kappa, n_theta).

    Consumes the RDM theta-derivatives already sampled for the circuit gradient,
    so no additional circuit evaluations are needed.
    """
    dF = (np.einsum("jpm,qm->jpq", dgamma_full, h)
          + np.einsum("jpmnk,qmnk->jpq", dGamma_full, g))
    grad_mat = 2.0 * (dF - dF.transpose(0, 2, 1))
    return np.stack([grad_mat[:, p, q] for p, q in kmap.pairs], axis=0)


# ---------------------------------------------------------------------------
# Transfer unitary between MO frames


@dataclass
class OrbitalTransfer:
    """C0 -> C1 transfer: block residual diagnostic plus the active-block generator."""

    C01: np.ndarray
    block_residual: float
    G_generator: np.ndarray | None
    aligned: bool


class RealLogError(ValueError):
    """Active transfer block has no principal real logarithm (det = -1)."""


def _principal_real_log_orthogonal(Q: np.ndarray) -> np.ndarray:
    """Principal real log of a special-orthogonal matrix via its real Schur form."""
    if Q.shape[0] == 0:
        return np.zeros((0, 0))
    if np.linalg.det(Q) < 0:
        raise RealLogError("active-block determinant is -1 (reflection); "
                           "cannot arise from continuous tracking")
    t, z = scipy.linalg.schur(Q, output="real")
    n = Q.shape[0]
    log_t = np.zeros((n, n))
    minus_ones = []
    k = 0
    while k < n:
        if k + 1 < n and abs(t[k + 1, k]) > 1e-12:
            ang = np.arctan2(t[k + 1, k], t[k, k])
            log_t[k, k + 1] = -ang
            log_t[k + 1, k] = ang
            k += 2
        else:
            if t[k, k] < 0:
                minus_ones.append(k)
            k += 1
    if len(minus_ones) % 2 == 1:
        raise RealLogError("odd count of -1 eigenvalues; matrix is a reflection")
    for a, b in zip(minus_ones[::2], minus_ones[1::2]):
        log_t[a, b] = np.pi
        log_t[b, a] = -np.pi
    return z @ log_t @ z.T


def transfer_and_generator(C0: np.ndarray, C1: np.ndarray, active,
                           block_tol: float = 1e-3) -> OrbitalTransfer:
    """C01 = C0^T C1 with cross-block diagnostic and the active-block real log."""
    for name, c in (("C0", C0), ("C1", C1)):
        if np.max(np.abs(c.T @ c - np.eye(c.shape[0]))) > 1e-8:
            raise ValueError(f"{name} is not orthogonal")
    C01 = C0.T @ C1
    blocks = [list(active.core), list(active.active), list(active.virtual)]
    mask = np.ones_like(C01, dtype=bool)
    for b in blocks:
        if b:
            mask[np.ix_(b, b)] = False
    block_residual = float(np.max(np.abs(C01[mask]))) if mask.any() else 0.0
    aligned = block_residual <= block_tol
    G = None
    if aligned:
        act = list(active.active)
        q_act = C01[np.ix_(act, act)]
        u, _, vt = np.linalg.svd(q_act)  # nearest orthogonal: drops leakage of order residual^2
        G = _principal_real_log_orthogonal(u @ vt)
    return OrbitalTransfer(C01=C01, block_residual=block_residual,
                           G_generator=G, aligned=aligned)


def apply_orbital_rotation_to_state(state: sv.Statevector, G_generator: np.ndarray,
                                    active) -> sv.Statevector:
    """exp(sum_pq G_pq E_pq) applied to the active statevector (both spin channels)."""
    G = np.asarray(G_generator, dtype=float)
    na = active.n_active
    if G.shape != (na, na):
        raise ValueError(f"generator shape {G.shape} does not match {na} active orbitals")
    if np.max(np.abs(G + G.T)) > 1e-8:
        raise ValueError("orbital-rotation generator is not antisymmetric")
    if state.n_qubits != 2 * na:
        raise sv.DimensionMismatchError("state does not live on the active space")
    if not np.any(G):
        return state.copy()
    ops = sv.spin_summed_excitation_ops(na)
    kop = sum(G[p, q] * ops[p * na + q] for p in range(na) for q in range(na) if G[p, q] != 0.0)
    gen = sv.RealGenerator.from_matrix(kop, label="orbital-transfer", normalize=False)
    return sv.apply_real_rotation(state, gen, 1.0)


# ---------------------------------------------------------------------------
# Restricted Hartree-Fock (initial orbitals and SCF cross-checks)


class SCFConvergenceError(RuntimeError):
    pass


def restricted_hartree_fock(bundle, n_electrons: int, max_iter: int = 200,
                            tol: float = 1e-10) -> tuple:
    """Closed-shell RHF in the OAO frame with DIIS.

    Returns (C, e_total): orthogonal MO coefficients over the OAO basis (lowest
    orbitals occupied) and the total SCF energy including e_nuc_core.
    """
    if n_electrons % 2 != 0:
        raise ValueError("RHF needs an even electron count")
    h, g = bundle.oao_integrals()
    n = bundle.n_orb
    nocc = n_electrons // 2
    if nocc > n:
        raise ValueError("more electron pairs than orbitals")
    w, c = np.linalg.eigh(h)
    C = c
    diis_f, diis_e = [], []
    e_old = None
    for it in range(max_iter):
        cocc = C[:, :nocc]
        D = cocc @ cocc.T
        J = np.einsum("pqrs,rs->pq", g, D)
        K = np.einsum("prqs,rs->pq", g, D)
        F = h + 2.0 * J - K
        e_tot = bundle.e_nuc_core + np.einsum("pq,pq->", D, h + F)
        err = F @ D - D @ F
        diis_f.append(F)
        diis_e.append(err)
        if len(diis_f) > 8:
            diis_f.pop(0)
            diis_e.pop(0)
        if np.max(np.abs(err)) < tol and e_old is not None and abs(e_tot - e_old) < tol:
            return C, float(e_tot)
        e_old = e_tot
        if len(diis_f) > 1:
            m = len(diis_f)
            B = -np.ones((m + 1, m + 1))
            B[m, m] = 0.0
            for i in range(m):
                for j in range(m):
                    B[i, j] = np.sum(diis_e[i] * diis_e[j])
            rhs = np.zeros(m + 1)
            rhs[m] = -1.0
            try:
                coef = np.linalg.solve(B, rhs)[:m]
                F = sum(ci * fi for ci, fi in zip(coef, diis_f))
            except np.linalg.LinAlgError:
                pass
        w, C = np.linalg.eigh(F)
    raise SCFConvergenceError(f"RHF did not converge in {max_iter} iterations "
                              f"(|FD-DF| = {np.max(np.abs(err)):.3e})")
