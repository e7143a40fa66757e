"""Dense statevector simulator for real-rotation circuits.

Spin orbitals are mapped to qubits by Jordan-Wigner with the interleaved
ordering (0-up, 0-down, 1-up, 1-down, ...); qubit j is the j-th mode and
occupies bit (n_qubits - 1 - j) of the basis-state index, so a determinant
reads left to right like the ket label (|1100> has index 0b1100).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

NORM_TOL = 1e-12
GENERATOR_NORM_TOL = 1e-10


class DimensionMismatchError(ValueError):
    """Operator and state act on different spaces."""


@dataclass
class Statevector:
    """Complex amplitude vector over n_qubits; realness is an invariant, not a dtype."""

    amplitudes: np.ndarray
    n_qubits: int

    @classmethod
    def from_array(cls, amps: np.ndarray) -> "Statevector":
        amps = np.asarray(amps, dtype=np.complex128)
        n = int(round(np.log2(amps.size)))
        if 2**n != amps.size:
            raise ValueError(f"amplitude vector length {amps.size} is not a power of two")
        return cls(amps, n)

    @classmethod
    def computational_basis(cls, n_qubits: int, index: int) -> "Statevector":
        amps = np.zeros(2**n_qubits, dtype=np.complex128)
        amps[index] = 1.0
        return cls(amps, n_qubits)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def max_imag(self) -> float:
        return float(np.max(np.abs(self.amplitudes.imag)))

    def real_array(self) -> np.ndarray:
        """Real amplitudes; raises if the state is not real within tolerance."""
        if self.max_imag() > NORM_TOL:
            raise ValueError(f"state has imaginary amplitudes up to {self.max_imag():.3e}")
        return np.ascontiguousarray(self.amplitudes.real)

    def overlap(self, other: "Statevector") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def expectation(self, op) -> float:
        v = self.amplitudes
        return float(np.real(np.vdot(v, op @ v)))

    def copy(self) -> "Statevector":
        return Statevector(self.amplitudes.copy(), self.n_qubits)


# ---------------------------------------------------------------------------
# Jordan-Wigner operators


@lru_cache(maxsize=None)
def jw_annihilation_ops(n_modes: int) -> tuple:
    """Sparse annihilation operators c_j under JW; qubit |1> means occupied."""
    z = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, -1.0]]))
    lower = sp.csr_matrix(np.array([[0.0, 1.0], [0.0, 0.0]]))  # |0><1|
    eye = sp.identity(2, format="csr")
    ops = []
    for j in range(n_modes):
        factors = [z] * j + [lower] + [eye] * (n_modes - j - 1)
        op = factors[0]
        for f in factors[1:]:
            op = sp.kron(op, f, format="csr")
        ops.append(op)
    return tuple(ops)


@lru_cache(maxsize=None)
def spin_summed_excitation_ops(n_active: int) -> tuple:
    """E_pq = sum_sigma c+_{p sigma} c_{q sigma} on 2*n_active qubits, row-major (p, q)."""
    c = jw_annihilation_ops(2 * n_active)
    ops = []
    for p in range(n_active):
        for q in range(n_active):
            e = c[2 * p].T @ c[2 * q] + c[2 * p + 1].T @ c[2 * q + 1]
            ops.append(sp.csr_matrix(e))
    return tuple(ops)


@lru_cache(maxsize=None)
def number_operator(n_modes: int) -> sp.csr_matrix:
    c = jw_annihilation_ops(n_modes)
    op = c[0].T @ c[0]
    for j in range(1, n_modes):
        op = op + c[j].T @ c[j]
    return sp.csr_matrix(op)


def sector_indices(n_active: int, n_electrons: int, sz_twice: int = 0) -> np.ndarray:
    """Basis indices with fixed particle number and 2*Sz (up spins on even modes)."""
    n_modes = 2 * n_active
    out = []
    for b in range(2**n_modes):
        bits = [(b >> (n_modes - 1 - m)) & 1 for m in range(n_modes)]
        if sum(bits) != n_electrons:
            continue
        if sum(bits[0::2]) - sum(bits[1::2]) != sz_twice:
            continue
        out.append(b)
    return np.asarray(out, dtype=int)


@lru_cache(maxsize=None)
def total_spin_squared(n_active: int) -> sp.csr_matrix:
    """S^2 = S-S+ + Sz^2 + Sz as a sparse JW operator."""
    c = jw_annihilation_ops(2 * n_active)
    splus = sum(c[2 * p].T @ c[2 * p + 1] for p in range(n_active))
    sz = 0.5 * sum(c[2 * p].T @ c[2 * p] - c[2 * p + 1].T @ c[2 * p + 1]
                   for p in range(n_active))
    s2 = splus.T @ splus + sz @ sz + sz
    return sp.csr_matrix(s2)


@lru_cache(maxsize=None)
def singlet_sector_basis(n_active: int, n_electrons: int) -> np.ndarray:
    """Orthonormal basis (columns, full dimension) of the N-electron Sz=0 singlet space."""
    sec = sector_indices(n_active, n_electrons, sz_twice=0)
    s2 = total_spin_squared(n_active).toarray()[np.ix_(sec, sec)]
    w, v = np.linalg.eigh(s2)
    cols = v[:, w < 1e-8]
    dim = 2 ** (2 * n_active)
    basis = np.zeros((dim, cols.shape[1]))
    basis[sec, :] = cols
    return basis


def hartree_fock_index(n_active: int, n_electrons: int) -> int:
    """Basis index of the closed-shell determinant filling the lowest spatial orbitals."""
    if n_electrons % 2 != 0:
        raise ValueError("spin-restricted mode needs an even electron count")
    n_modes = 2 * n_active
    idx = 0
    for m in range(n_electrons):
        idx |= 1 << (n_modes - 1 - m)
    return idx


def hartree_fock_state(n_active: int, n_electrons: int) -> Statevector:
    return Statevector.computational_basis(2 * n_active, hartree_fock_index(n_active, n_electrons))


# ---------------------------------------------------------------------------
# Real antisymmetric generators and exact rotations


@dataclass
class _RotationPlan:
    """Canonical-form factorization of a generator restricted to its support."""

    support: np.ndarray      # indices touched by the generator
    q: np.ndarray            # orthogonal basis of the support block
    pair_i: np.ndarray       # rotation-plane first coordinates (in Q basis)
    pair_j: np.ndarray       # rotation-plane second coordinates
    speeds: np.ndarray       # angular speed per plane


@dataclass
class RealGenerator:
    """Sparse real antisymmetric operator with unit spectral norm."""

    matrix: sp.csr_matrix
    label: str = ""
    _plan: _RotationPlan | None = field(default=None, repr=False, compare=False)

    @classmethod
    def from_matrix(cls, mat, label: str = "", normalize: bool = True) -> "RealGenerator":
        m = sp.csr_matrix(mat, dtype=np.float64)
        defect = abs(m + m.T)
        scale = max(abs(m).max(), 1.0)
        if defect.nnz and defect.max() > 1e-12 * scale:
            raise ValueError(f"generator '{label}' is not antisymmetric (defect {defect.max():.3e})")
        m = (m - m.T) * 0.5  # make A = -A^T structural
        gen = cls(m.tocsr(), label)
        if normalize:
            nrm = gen.spectral_norm()
            if nrm == 0.0:
                raise ValueError(f"generator '{label}' is identically zero")
            if abs(nrm - 1.0) > GENERATOR_NORM_TOL:
                gen = cls((m / nrm).tocsr(), label)
        return gen

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def support(self) -> np.ndarray:
        rows = np.unique(self.matrix.nonzero()[0])
        return rows

    def spectral_norm(self) -> float:
        plan = self._rotation_plan()
        return float(np.max(np.abs(plan.speeds))) if plan.speeds.size else 0.0

    def _rotation_plan(self) -> _RotationPlan:
        if self._plan is None:
            idx = self.support()
            if idx.size == 0:
                self._plan = _RotationPlan(
                    support=idx, q=np.zeros((0, 0)),
                    pair_i=np.zeros(0, dtype=int), pair_j=np.zeros(0, dtype=int),
                    speeds=np.zeros(0))
                return self._plan
            block = self.matrix[np.ix_(idx, idx)].toarray()
            # real Schur of an antisymmetric (normal) matrix is block diagonal
            t, q = scipy.linalg.schur(block, output="real")
            s = idx.size
            pair_i, pair_j, speeds = [], [], []
            k = 0
            while k < s:
                if k + 1 < s and abs(t[k, k + 1]) > 1e-14:
                    pair_i.append(k)
                    pair_j.append(k + 1)
                    speeds.append(t[k, k + 1])
                    k += 2
                else:
                    k += 1
            self._plan = _RotationPlan(
                support=idx,
                q=np.ascontiguousarray(q),
                pair_i=np.array(pair_i, dtype=int),
                pair_j=np.array(pair_j, dtype=int),
                speeds=np.asarray(speeds, dtype=float),
            )
        return self._plan

    def apply_generator(self, vecs: np.ndarray) -> np.ndarray:
        """A @ vecs along the last axis; vecs shape (..., dim)."""
        flat = np.atleast_2d(vecs.reshape(-1, vecs.shape[-1]))
        out = (self.matrix @ flat.T).T
        return out.reshape(vecs.shape)

    def apply_rotation(self, theta: float, vecs: np.ndarray) -> np.ndarray:
        """exp(theta A) @ vecs along the last axis, exact on the invariant subspace."""
        if not np.isfinite(theta):
            raise ValueError("rotation angle must be finite")
        if vecs.shape[-1] != self.dim:
            raise DimensionMismatchError(
                f"generator dim {self.dim} does not match state dim {vecs.shape[-1]}")
        if theta == 0.0:
            return np.array(vecs, copy=True)
        plan = self._rotation_plan()
        out = np.array(vecs, copy=True)
        flat = out.reshape(-1, out.shape[-1])
        sub = flat[:, plan.support]
        y = sub @ plan.q
        ang = plan.speeds * theta
        c, s = np.cos(ang), np.sin(ang)
        yi = y[:, plan.pair_i]
        yj = y[:, plan.pair_j]
        y[:, plan.pair_i] = c * yi + s * yj
        y[:, plan.pair_j] = -s * yi + c * yj
        flat[:, plan.support] = y @ plan.q.T
        return out


def apply_real_rotation(state: Statevector, gen: RealGenerator, theta: float) -> Statevector:
    """exp(theta A) applied to the state; orthogonal, norm preserving."""
    if gen.dim != state.dim:
        raise DimensionMismatchError(
            f"generator dim {gen.dim} does not match state dim {state.dim}")
    re = gen.apply_rotation(theta, state.amplitudes.real)
    im = gen.apply_rotation(theta, state.amplitudes.imag)
    return Statevector(re + 1j * im, state.n_qubits)


# ---------------------------------------------------------------------------
# Ansatz circuits


@dataclass
class AnsatzCircuit:
    """Ordered product of real rotations applied to a fixed initial determinant.

    prepare(theta) returns U(theta)|psi0> with U = U_{n-1}(theta_{n-1}) ... U_0(theta_0),
    factor U_0 applied first (circuit-composition order).
    """

    generators: tuple
    initial_state: Statevector

    def __post_init__(self):
        self.generators = tuple(self.generators)
        for g in self.generators:
            if g.dim != self.initial_state.dim:
                raise DimensionMismatchError("generator does not act on the initial state's space")

    @property
    def n_params(self) -> int:
        return len(self.generators)

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        if theta.size != self.n_params:
            raise ValueError(f"expected {self.n_params} angles, got {theta.size}")
        return theta

    def prepare(self, theta) -> Statevector:
        theta = self._check_theta(theta)
        v = self.initial_state.real_array().copy()
        for g, th in zip(self.generators, theta):
            v = g.apply_rotation(th, v)
        return Statevector(v.astype(np.complex128), self.initial_state.n_qubits)

    def derivative_states(self, theta, order: int = 1):
        """State and its exact parameter derivatives.

        Returns (psi, dpsi, d2psi) as real arrays: psi (dim,), dpsi (n_p, dim),
        d2psi (n_p, n_p, dim) or None when order < 2. Derivatives are computed
        by inserting each generator at its gate position and batching all
        pending columns through the remaining gates.
        """
        theta = self._check_theta(theta)
        n = self.n_params
        dim = self.initial_state.dim
        cur = self.initial_state.real_array().copy()
        dpsi = np.zeros((n, dim))
        d2psi = np.zeros((n, n, dim)) if order >= 2 else None
        for k, (g, th) in enumerate(zip(self.generators, theta)):
            cur = g.apply_rotation(th, cur)
            if k > 0:
                dpsi[:k] = g.apply_rotation(th, dpsi[:k])
                if order >= 2:
                    d2psi[:k, :k] = g.apply_rotation(th, d2psi[:k, :k])
            if order >= 1:
                dpsi[k] = g.apply_generator(cur)
                if order >= 2:
                    cols = g.apply_generator(dpsi[: k + 1])
                    d2psi[k, : k + 1] = cols
                    d2psi[: k + 1, k] = cols
        return cur, dpsi, d2psi


def prepare_ansatz(ansatz: AnsatzCircuit, theta) -> Statevector:
    """U(theta)|psi0>; real amplitudes, unit norm."""
    return ansatz.prepare(theta)


# ---------------------------------------------------------------------------
# Fermionic ansatz builders


def _pair_double_generator(n_active: int, occ: int, virt: int) -> RealGenerator:
    """Paired double excitation c+_{v up} c+_{v dn} c_{o dn} c_{o up} - h.c. (unit norm)."""
    c = jw_annihilation_ops(2 * n_active)
    term = c[2 * virt].T @ (c[2 * virt + 1].T @ (c[2 * occ + 1] @ c[2 * occ]))
    mat = term - term.T
    return RealGenerator.from_matrix(mat, label=f"pair({occ}->{virt})")


def _orbital_rotation_generator(n_active: int, p: int, q: int) -> RealGenerator:
    """Spin-adapted singles rotation E_pq - E_qp, rescaled to unit spectral norm."""
    c = jw_annihilation_ops(2 * n_active)
    e_pq = c[2 * p].T @ c[2 * q] + c[2 * p + 1].T @ c[2 * q + 1]
    return RealGenerator.from_matrix(e_pq - e_pq.T, label=f"rot({p},{q})")


def build_uccd_ansatz(active) -> AnsatzCircuit:
    """Paired-UCCD: one pair double excitation per (occupied, virtual) spatial pair.

    CAS(2,2) gives the single-parameter minimal ansatz. Requires an even active
    electron count (closed-shell reference).
    """
    n_act = active.n_active
    eta = active.n_active_electrons
    if eta % 2 != 0:
        raise ValueError("odd active electron count is unsupported in spin-restricted mode")
    n_occ = eta // 2
    gens = [
        _pair_double_generator(n_act, i, a)
        for i in range(n_occ)
        for a in range(n_occ, n_act)
    ]
    return AnsatzCircuit(tuple(gens), hartree_fock_state(n_act, eta))


def build_npf_ansatz(active, layers: int) -> AnsatzCircuit:
    """Number-preserving fabric of two-spatial-orbital blocks.

    Each block carries an orbital-rotation generator followed by a pair
    double-excitation generator (2 parameters). A layer places blocks on every
    adjacent spatial pair (p, p+1); in the first layer, blocks whose two
    orbitals are both doubly occupied or both empty in the reference
    determinant are omitted, since their generators stabilize it. For CAS(4,4)
    this gives 20 parameters at 4 layers.
    """
    n_act = active.n_active
    eta = active.n_active_electrons
    if n_act < 2:
        raise ValueError("fabric needs at least two active spatial orbitals")
    if eta % 2 != 0:
        raise ValueError("odd active electron count is unsupported in spin-restricted mode")
    n_occ = eta // 2
    gens = []
    for layer in range(layers):
        for p in range(n_act - 1):
            both_occ = p + 1 < n_occ
            both_virt = p >= n_occ
            if layer == 0 and (both_occ or both_virt):
                continue
            gens.append(_orbital_rotation_generator(n_act, p, p + 1))
            gens.append(_pair_double_generator(n_act, p, p + 1))
    return AnsatzCircuit(tuple(gens), hartree_fock_state(n_act, eta))


def build_plane_rotation_ansatz(dim: int, initial_index: int = 0) -> AnsatzCircuit:
    """All elementary plane rotations |i><j| - |j><i| of a dim-dimensional real space.

    The direct ansatz for analytic Hamiltonian families: expressive on the whole
    real sphere (globally redundant for dim > 2, so pair with regularization).
    """
    n = int(round(np.log2(dim)))
    if 2**n != dim:
        raise ValueError("plane-rotation ansatz needs a power-of-two dimension")
    gens = []
    for i in range(dim):
        for j in range(i + 1, dim):
            m = sp.lil_matrix((dim, dim))
            m[j, i] = 1.0
            m[i, j] = -1.0
            gens.append(RealGenerator.from_matrix(m.tocsr(), label=f"plane({i},{j})"))
    return AnsatzCircuit(tuple(gens), Statevector.computational_basis(n, initial_index))


# ---------------------------------------------------------------------------
# Reduced density matrices


@dataclass
class RDMPair:
    """Spin-summed 1- and 2-RDM (chemists' index order pqrs)."""

    gamma: np.ndarray
    Gamma: np.ndarray

    def validate(self, n_electrons: int, tol_tr: float = 1e-10, tol_sym: float = 1e-12):
        """Raises on violated closed-system RDM identities."""
        g, G = self.gamma, self.Gamma
        if np.max(np.abs(g - g.T)) > tol_sym:
            raise ValueError("1-RDM is not symmetric")
        if abs(np.trace(g) - n_electrons) > tol_tr:
            raise ValueError(f"Tr gamma = {np.trace(g):.12f} != {n_electrons}")
        partial = np.einsum("pqrr->pq", G)
        if np.max(np.abs(partial - (n_electrons - 1) * g)) > tol_tr:
            raise ValueError("2-RDM partial trace rule violated")
        if np.max(np.abs(G - G.transpose(2, 3, 0, 1))) > tol_sym:
            raise ValueError("2-RDM pair-exchange symmetry violated")
        if np.max(np.abs(G - G.transpose(1, 0, 3, 2))) > tol_sym:
            raise ValueError("2-RDM real-state symmetry violated")


def _excitation_stack(n_active: int) -> np.ndarray:
    """Dense stack E[p, q] as (n_active, n_active, dim, dim); cached via sparse ops."""
    ops = spin_summed_excitation_ops(n_active)
    dim = ops[0].shape[0]
    out = np.zeros((n_active, n_active, dim, dim))
    for p in range(n_active):
        for q in range(n_active):
            out[p, q] = ops[p * n_active + q].toarray()
    return out


def _phi_stack(n_active: int, vecs: np.ndarray) -> np.ndarray:
    """phi[..., p, q, :] = E_pq @ vecs for each trailing-axis vector."""
    ops = spin_summed_excitation_ops(n_active)
    flat = np.atleast_2d(vecs.reshape(-1, vecs.shape[-1]))
    cols = np.stack([(op @ flat.T).T for op in ops], axis=1)  # (m, NA^2, dim)
    shape = vecs.shape[:-1] + (n_active, n_active, vecs.shape[-1])
    return cols.reshape(shape)


def rdms_from_vector(v: np.ndarray, n_active: int) -> RDMPair:
    """RDMs of a real amplitude vector on 2*n_active qubits."""
    phi = _phi_stack(n_active, v)
    gamma = np.einsum("d,pqd->pq", v, phi)
    two = np.einsum("qpd,rsd->pqrs", phi, phi)
    corr = np.einsum("d,psd->ps", v, phi)
    na = n_active
    for q in range(na):
        two[:, q, q, :] -= corr
    return RDMPair(gamma=gamma, Gamma=two)


def compute_rdms(state: Statevector, active) -> RDMPair:
    """Spin-summed RDMs of an active-space state (2 qubits per spatial orbital)."""
    n_act = active.n_active
    if state.n_qubits != 2 * n_act:
        raise DimensionMismatchError(
            f"state has {state.n_qubits} qubits, active space needs {2 * n_act}")
    return rdms_from_vector(state.real_array(), n_act)


def transition_rdms(bra: np.ndarray, ket: np.ndarray, n_active: int):
    """<bra|E_pq|ket> and <bra|e_pqrs|ket> for real vectors (not symmetrized)."""
    phi_b = _phi_stack(n_active, bra)
    phi_k = _phi_stack(n_active, ket)
    gamma = np.einsum("qpd,d->pq", phi_b, ket)
    two = np.einsum("qpd,rsd->pqrs", phi_b, phi_k)
    corr = np.einsum("d,psd->ps", bra, phi_k)
    for q in range(n_active):
        two[:, q, q, :] -= corr
    return gamma, two


def rdm_theta_derivatives(ansatz: AnsatzCircuit, theta, n_active: int | None = None):
    """Exact d(gamma)/d(theta_j) and d(Gamma)/d(theta_j) via generator insertion.

    Returns (dgamma, dGamma) with leading axis j; no finite differences involved.
    """
    if n_active is None:
        n_active = ansatz.initial_state.n_qubits // 2
    psi, dpsi, _ = ansatz.derivative_states(theta, order=1)
    phi_psi = _phi_stack(n_active, psi)
    phi_d = _phi_stack(n_active, dpsi)  # (n_p, NA, NA, dim)
    dgamma = np.einsum("jqpd,d->jpq", phi_d, psi) + np.einsum("qpd,jd->jpq", phi_psi, dpsi)
    dGamma = np.einsum("jqpd,rsd->jpqrs", phi_d, phi_psi) + np.einsum(
        "qpd,jrsd->jpqrs", phi_psi, phi_d)
    corr = np.einsum("jd,psd->jps", dpsi, phi_psi) + np.einsum("d,jpsd->jps", psi, phi_d)
    for q in range(n_active):
        dGamma[:, :, q, q, :] -= corr
    return dgamma, dGamma
