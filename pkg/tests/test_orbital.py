import numpy as np
import pytest
import scipy.linalg

from berrytrack import hamiltonian as hml
from berrytrack import orbital as orb
from berrytrack import statevec as sv
from berrytrack import tracker as trk

from conftest import random_bundle, random_orthogonal

PADDED = hml.ActiveSpaceSpec(1, 2, 1, 2)


def embed_active_vector(v_act: np.ndarray, active: hml.ActiveSpaceSpec) -> np.ndarray:
    """Pad an active statevector with occupied core and empty virtual registers."""
    n_modes = 2 * active.n_orb
    dim_act = 2 * active.n_active
    out = np.zeros(2**n_modes)
    core_bits = "1" * (2 * active.n_core)
    virt_bits = "0" * (2 * active.n_virtual)
    for k in range(v_act.size):
        bits = format(k, f"0{dim_act}b")
        out[int(core_bits + bits + virt_bits, 2)] = v_act[k]
    return out


def setup_random_instance(seed, n=4, active=PADDED, theta=0.23):
    rng = np.random.default_rng(seed)
    b = random_bundle(rng, n)
    C = random_orthogonal(rng, n)
    ans = sv.build_uccd_ansatz(active)
    psi = ans.prepare([theta])
    rd = sv.compute_rdms(psi, active)
    return rng, b, C, ans, np.atleast_1d(theta), rd


# ---------------------------------------------------------------------------
# Lowdin


def test_lowdin_identity():
    np.testing.assert_allclose(orb.lowdin_inverse_sqrt(np.eye(3)), np.eye(3), atol=1e-14)


def test_lowdin_2x2_against_eigendecomposition_oracle():
    S = np.array([[1.0, 0.5], [0.5, 1.0]])
    x = orb.lowdin_inverse_sqrt(S)
    w, v = np.linalg.eigh(S)
    oracle = sum(np.outer(v[:, i], v[:, i]) / np.sqrt(w[i]) for i in range(2))
    np.testing.assert_allclose(x, oracle, atol=1e-13)
    np.testing.assert_allclose(x @ S @ x, np.eye(2), atol=1e-12)


def test_lowdin_diagonal_case():
    np.testing.assert_allclose(orb.lowdin_inverse_sqrt(np.diag([4.0, 1.0])),
                               np.diag([0.5, 1.0]), atol=1e-14)


def test_lowdin_near_singular_raises():
    with pytest.raises(orb.LinearDependenceError):
        orb.lowdin_inverse_sqrt(np.diag([1.0, 1e-12]))


# ---------------------------------------------------------------------------
# kappa machinery


def test_kappa_index_map_excludes_redundant_blocks():
    kmap = orb.kappa_index_map(PADDED, include_active_active=True)
    assert (1, 2) in kmap.pairs           # active-active kept in UCCD mode
    assert (0, 3) in kmap.pairs           # core-virtual kept
    kmap2 = orb.kappa_index_map(PADDED, include_active_active=False)
    assert (1, 2) not in kmap2.pairs
    # core-core and virtual-virtual never appear (single-orbital blocks here)
    for p, q in kmap.pairs:
        assert not (p == 0 and q == 0)


def test_apply_kappa_zero_is_identity():
    rng = np.random.default_rng(20)
    C = random_orthogonal(rng, 4)
    kmap = orb.kappa_index_map(PADDED)
    np.testing.assert_allclose(orb.apply_kappa(C, kmap, np.zeros(kmap.n_params)), C,
                               atol=1e-15)


def test_apply_kappa_single_pair_is_givens_rotation():
    kmap = orb.KappaIndexMap(pairs=((0, 1),), n_orb=2)
    out = orb.apply_kappa(np.eye(2), kmap, [np.pi / 2])
    # exp(-kappa) with kappa = [[0, pi/2], [-pi/2, 0]] swaps the columns
    np.testing.assert_allclose(np.abs(out), [[0.0, 1.0], [1.0, 0.0]], atol=1e-12)


def test_apply_kappa_orthogonality_vs_eigendecomposition_oracle():
    rng = np.random.default_rng(21)
    kmap = orb.kappa_index_map(PADDED)
    C = random_orthogonal(rng, 4)
    vals = rng.normal(size=kmap.n_params, scale=0.7)
    out = orb.apply_kappa(C, kmap, vals)
    assert np.max(np.abs(out.T @ out - np.eye(4))) <= 1e-10
    # oracle: exponential via the skew matrix's unitary eigendecomposition
    k = kmap.to_matrix(vals)
    w, v = np.linalg.eig(-k)
    oracle = np.real(v @ np.diag(np.exp(w)) @ np.linalg.inv(v))
    np.testing.assert_allclose(out, C @ oracle, atol=1e-10)


# ---------------------------------------------------------------------------
# full-space RDMs


def test_full_space_rdms_match_padded_simulation_oracle():
    # oracle: brute-force RDMs of the state embedded with explicit core/virtual qubits
    _, _, _, ans, theta, rd = setup_random_instance(22)
    full = orb.full_space_rdms(rd, PADDED)
    v_full = embed_active_vector(ans.prepare(theta).real_array(), PADDED)
    brute = sv.rdms_from_vector(v_full, PADDED.n_orb)
    np.testing.assert_allclose(full.gamma, brute.gamma, atol=1e-13)
    np.testing.assert_allclose(full.Gamma, brute.Gamma, atol=1e-13)


def test_full_space_rdm_derivatives_match_padded_oracle():
    _, _, _, ans, theta, _ = setup_random_instance(23)
    dg_act, dG_act = sv.rdm_theta_derivatives(ans, theta)
    dg, dG = orb.full_space_rdm_derivatives(dg_act, dG_act, PADDED)
    eps = 1e-6
    vp = embed_active_vector(ans.prepare(theta + eps).real_array(), PADDED)
    vm = embed_active_vector(ans.prepare(theta - eps).real_array(), PADDED)
    rp, rm = sv.rdms_from_vector(vp, 4), sv.rdms_from_vector(vm, 4)
    np.testing.assert_allclose(dg[0], (rp.gamma - rm.gamma) / (2 * eps), atol=1e-8)
    np.testing.assert_allclose(dG[0], (rp.Gamma - rm.Gamma) / (2 * eps), atol=1e-8)


# ---------------------------------------------------------------------------
# analytic orbital derivatives vs finite differences


def energy_at(bundle, C, active, ans, theta):
    ham = hml.build_active_hamiltonian(bundle, C, active)
    return hml.energy_from_rdms(ham, sv.compute_rdms(ans.prepare(theta), active))


def test_orbital_gradient_matches_finite_differences():
    _, b, C, ans, theta, rd = setup_random_instance(24)
    kmap = orb.kappa_index_map(PADDED)
    h_mo, g_mo = hml.mo_integrals(b, C)
    grad = orb.orbital_gradient(orb.full_space_rdms(rd, PADDED), h_mo, g_mo, kmap)
    eps = 1e-5
    scale = max(1.0, np.max(np.abs(grad)))
    for i in range(kmap.n_params):
        dv = np.zeros(kmap.n_params)
        dv[i] = eps
        fd = (energy_at(b, orb.apply_kappa(C, kmap, dv), PADDED, ans, theta)
              - energy_at(b, orb.apply_kappa(C, kmap, -dv), PADDED, ans, theta)) / (2 * eps)
        assert abs(grad[i] - fd) / scale <= 1e-7


def test_orbital_gradient_zero_for_zero_electrons():
    rng = np.random.default_rng(25)
    b = random_bundle(rng, 2)
    active = hml.ActiveSpaceSpec(0, 2, 0, 0)
    kmap = orb.kappa_index_map(active)
    zeros = sv.RDMPair(np.zeros((2, 2)), np.zeros((2, 2, 2, 2)))
    h_mo, g_mo = hml.mo_integrals(b, np.eye(2))
    grad = orb.orbital_gradient(orb.full_space_rdms(zeros, active), h_mo, g_mo, kmap)
    assert np.max(np.abs(grad)) == 0.0


def test_orbital_gradient_stationary_at_optimum(padded_pi_loop):
    # optimizer-converged point has orbital gradient at the optimizer tolerance
    ans = sv.build_uccd_ansatz(padded_pi_loop.active_space)
    prob = trk.MolecularProblem(padded_pi_loop, ans)
    point, info = trk.full_optimize(prob)
    assert info["grad_norm"] <= 1e-8


def test_orbital_hessian_matches_finite_difference_of_gradient():
    _, b, C, ans, theta, rd = setup_random_instance(26)
    kmap = orb.kappa_index_map(PADDED)
    h_mo, g_mo = hml.mo_integrals(b, C)
    full = orb.full_space_rdms(rd, PADDED)
    hess = orb.orbital_hessian(full, h_mo, g_mo, kmap)
    assert np.max(np.abs(hess - hess.T)) == 0.0
    eps = 1e-4
    fd_hess = np.zeros_like(hess)
    for i in range(kmap.n_params):
        for j in range(i, kmap.n_params):
            dvi = np.zeros(kmap.n_params)
            dvj = np.zeros(kmap.n_params)
            dvi[i] = eps
            dvj[j] = eps
            epp = energy_at(b, orb.apply_kappa(C, kmap, dvi + dvj), PADDED, ans, theta)
            epm = energy_at(b, orb.apply_kappa(C, kmap, dvi - dvj), PADDED, ans, theta)
            emp = energy_at(b, orb.apply_kappa(C, kmap, -dvi + dvj), PADDED, ans, theta)
            emm = energy_at(b, orb.apply_kappa(C, kmap, -dvi - dvj), PADDED, ans, theta)
            fd_hess[i, j] = fd_hess[j, i] = (epp - epm - emp + emm) / (4 * eps * eps)
    assert np.max(np.abs(hess - fd_hess)) / np.max(np.abs(fd_hess)) <= 1e-5


def test_orbital_hessian_single_pair_toy_second_difference():
    # N=2, one kappa pair: scalar Hessian equals the energy second difference
    rng = np.random.default_rng(27)
    b = random_bundle(rng, 2)
    active = hml.ActiveSpaceSpec(0, 2, 0, 2)
    ans = sv.build_uccd_ansatz(active)
    theta = np.array([0.31])
    rd = sv.compute_rdms(ans.prepare(theta), active)
    kmap = orb.kappa_index_map(active)
    assert kmap.n_params == 1
    h_mo, g_mo = hml.mo_integrals(b, np.eye(2))
    hess = orb.orbital_hessian(orb.full_space_rdms(rd, active), h_mo, g_mo, kmap)
    eps = 1e-4
    e0 = energy_at(b, np.eye(2), active, ans, theta)
    ep = energy_at(b, orb.apply_kappa(np.eye(2), kmap, [eps]), active, ans, theta)
    em = energy_at(b, orb.apply_kappa(np.eye(2), kmap, [-eps]), active, ans, theta)
    fd = (ep - 2 * e0 + em) / eps**2
    assert abs(hess[0, 0] - fd) <= 1e-5 * max(1.0, abs(fd))


def test_mixed_hessian_matches_cross_finite_differences():
    _, b, C, ans, theta, _ = setup_random_instance(28)
    kmap = orb.kappa_index_map(PADDED)
    h_mo, g_mo = hml.mo_integrals(b, C)
    dg_act, dG_act = sv.rdm_theta_derivatives(ans, theta)
    dg, dG = orb.full_space_rdm_derivatives(dg_act, dG_act, PADDED)
    mix = orb.mixed_hessian(dg, dG, h_mo, g_mo, kmap)
    eps = 1e-4
    fd = np.zeros_like(mix)
    for i in range(kmap.n_params):
        dv = np.zeros(kmap.n_params)
        dv[i] = eps
        cp, cm = orb.apply_kappa(C, kmap, dv), orb.apply_kappa(C, kmap, -dv)
        epp = energy_at(b, cp, PADDED, ans, theta + eps)
        epm = energy_at(b, cp, PADDED, ans, theta - eps)
        emp = energy_at(b, cm, PADDED, ans, theta + eps)
        emm = energy_at(b, cm, PADDED, ans, theta - eps)
        fd[i, 0] = (epp - epm - emp + emm) / (4 * eps * eps)
    assert np.max(np.abs(mix - fd)) / max(1.0, np.max(np.abs(fd))) <= 1e-5


def test_mixed_hessian_zero_column_for_inert_generator():
    # generator annihilating the tracked sector gives an all-zero mixed column
    active = hml.ActiveSpaceSpec(0, 4, 0, 4)
    gen = sv._pair_double_generator(4, occ=2, virt=3)
    ans = sv.AnsatzCircuit((gen,), sv.hartree_fock_state(4, 4))
    dg_act, dG_act = sv.rdm_theta_derivatives(ans, [0.0])
    dg, dG = orb.full_space_rdm_derivatives(dg_act, dG_act, active)
    rng = np.random.default_rng(29)
    b = random_bundle(rng, 4)
    h_mo, g_mo = hml.mo_integrals(b, np.eye(4))
    kmap = orb.kappa_index_map(active)
    mix = orb.mixed_hessian(dg, dG, h_mo, g_mo, kmap)
    assert np.max(np.abs(mix)) == 0.0


# ---------------------------------------------------------------------------
# transfer unitary


def test_transfer_identity():
    rng = np.random.default_rng(30)
    C = random_orthogonal(rng, 4)
    tr = orb.transfer_and_generator(C, C, PADDED)
    np.testing.assert_allclose(tr.C01, np.eye(4), atol=1e-12)
    assert tr.block_residual <= 1e-12
    np.testing.assert_allclose(tr.G_generator, np.zeros((2, 2)), atol=1e-12)


def test_transfer_blockdiag_roundtrip():
    # oracle: matrix log/exp round trip on the active block
    rng = np.random.default_rng(31)
    C0 = random_orthogonal(rng, 4)
    ang = 0.37
    r_act = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
    block = np.eye(4)
    block[1:3, 1:3] = r_act
    block[0, 0] = -1.0  # core sign flip stays in-block
    tr = orb.transfer_and_generator(C0, C0 @ block, PADDED)
    assert tr.block_residual <= 1e-12
    np.testing.assert_allclose(scipy.linalg.expm(tr.G_generator), r_act, atol=1e-10)


def test_transfer_reports_cross_block_leakage():
    C0 = np.eye(4)
    leak = scipy.linalg.expm(np.array([
        [0.0, 1e-3, 0, 0], [-1e-3, 0.0, 0, 0], [0, 0, 0.0, 0], [0, 0, 0, 0.0]]))
    tr = orb.transfer_and_generator(C0, leak, PADDED, block_tol=1e-4)
    assert abs(tr.block_residual - 1e-3) <= 1e-4
    assert not tr.aligned


def test_transfer_reflection_rejected():
    C0 = np.eye(4)
    block = np.eye(4)
    block[1, 1] = -1.0  # det(active block) = -1
    with pytest.raises(orb.RealLogError):
        orb.transfer_and_generator(C0, C0 @ block, PADDED)


# ---------------------------------------------------------------------------
# applying orbital rotations to states


def test_apply_orbital_rotation_zero_generator():
    psi = sv.hartree_fock_state(2, 2)
    out = orb.apply_orbital_rotation_to_state(psi, np.zeros((2, 2)), PADDED)
    np.testing.assert_allclose(out.amplitudes, psi.amplitudes, atol=0)


def test_apply_orbital_rotation_half_pi_swaps_pair():
    # oracle: dense exponential of the one-body generator
    psi = sv.hartree_fock_state(2, 2)
    g = np.array([[0.0, np.pi / 2], [-np.pi / 2, 0.0]])
    out = orb.apply_orbital_rotation_to_state(psi, g, PADDED)
    ops = sv.spin_summed_excitation_ops(2)
    kop = sum(g[p, q] * ops[2 * p + q].toarray() for p in range(2) for q in range(2))
    expected = scipy.linalg.expm(kop) @ psi.real_array()
    np.testing.assert_allclose(out.real_array(), expected, atol=1e-10)
    assert abs(abs(out.amplitudes[0b0011]) - 1.0) <= 1e-10
    assert abs(out.norm() - 1.0) <= 1e-12


def test_apply_orbital_rotation_preserves_particle_number():
    rng = np.random.default_rng(32)
    psi = sv.build_uccd_ansatz(hml.ActiveSpaceSpec(0, 2, 0, 2)).prepare([0.4])
    nop = sv.number_operator(4)
    for _ in range(5):
        a = rng.normal(scale=0.8)
        g = np.array([[0.0, a], [-a, 0.0]])
        out = orb.apply_orbital_rotation_to_state(psi, g, PADDED)
        assert abs(out.expectation(nop) - psi.expectation(nop)) <= 1e-12


def test_transfer_direction_connects_mo_frames():
    # ground states of the same Hamiltonian in two frames are joined by G_{0->1}
    rng = np.random.default_rng(33)
    b = random_bundle(rng, 4)
    C0 = random_orthogonal(rng, 4)
    kmap_aa = orb.KappaIndexMap(pairs=((1, 2),), n_orb=4)
    C1 = orb.apply_kappa(C0, kmap_aa, [0.42])
    tr = orb.transfer_and_generator(C0, C1, PADDED)
    ham0 = hml.build_active_hamiltonian(b, C0, PADDED)
    ham1 = hml.build_active_hamiltonian(b, C1, PADDED)
    basis = sv.singlet_sector_basis(2, 2)
    w0, v0 = np.linalg.eigh(basis.T @ ham0.dense @ basis)
    w1, v1 = np.linalg.eigh(basis.T @ ham1.dense @ basis)
    psi0 = sv.Statevector.from_array(basis @ v0[:, 0])
    psi1 = sv.Statevector.from_array(basis @ v1[:, 0])
    rotated = orb.apply_orbital_rotation_to_state(psi1, tr.G_generator, PADDED)
    assert abs(abs(np.real(psi0.overlap(rotated))) - 1.0) <= 1e-10


# ---------------------------------------------------------------------------
# gauge properties


def test_energy_invariant_along_excluded_kappa_directions(padded_pi_loop):
    # core-core and virtual-virtual rotations are excluded as redundant
    loop = padded_pi_loop
    b = loop.point(0.0)
    active = loop.active_space
    ans = sv.build_uccd_ansatz(active)
    theta = np.array([0.17])
    C, _ = orb.restricted_hartree_fock(b, 4)
    e0 = energy_at(b, C, active, ans, theta)
    flip = np.eye(4)
    flip[0, 0] = -1.0
    e1 = energy_at(b, C @ flip, active, ans, theta)
    assert abs(e0 - e1) <= 1e-9


def test_overlap_gauge_consistency(padded_pi_loop):
    # |<psi0| G |psi1>| unchanged under core/virtual gauge rotations of C1
    loop = padded_pi_loop
    active = loop.active_space
    ans = sv.build_uccd_ansatz(active)
    rng = np.random.default_rng(34)
    C0 = random_orthogonal(rng, 4)
    kmap_aa = orb.KappaIndexMap(pairs=((1, 2),), n_orb=4)
    C1 = orb.apply_kappa(C0, kmap_aa, [0.3])
    th0, th1 = np.array([0.1]), np.array([-0.4])

    def overlap(c1):
        tr = orb.transfer_and_generator(C0, c1, active)
        return abs(trk.final_overlap(ans, th0, th1, tr, active))

    base = overlap(C1)
    gauge = np.eye(4)
    gauge[0, 0] = -1.0
    gauge[3, 3] = -1.0
    assert abs(overlap(C1 @ gauge) - base) <= 1e-8


# ---------------------------------------------------------------------------
# restricted Hartree-Fock


def test_rhf_matches_variational_ground_state_bound(padded_pi_loop):
    b = padded_pi_loop.point(0.0)
    C, e_rhf = orb.restricted_hartree_fock(b, 4)
    assert np.max(np.abs(C.T @ C - np.eye(4))) <= 1e-10
    active = padded_pi_loop.active_space
    ham = hml.build_active_hamiltonian(b, C, active)
    hf_energy = hml.energy_from_rdms(
        ham, sv.compute_rdms(sv.hartree_fock_state(2, 2), active))
    assert abs(hf_energy - e_rhf) <= 1e-8
    exact = np.linalg.eigvalsh(ham.dense)[0] + ham.e_const
    assert e_rhf >= exact - 1e-10
