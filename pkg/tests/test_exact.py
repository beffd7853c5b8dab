import math

import numpy as np
import pytest

import helpers
import oracles
from hybrid_eigensolver.exact import (
    ConvergenceError,
    Isometry,
    block_rdm,
    build_sector_matrix,
    hamiltonian_connections,
    isometry_from_rdm,
    lanczos,
    reconstruct_full_state,
    solve_sector,
)
from hybrid_eigensolver.model import build_lattice, hamiltonian_terms
from hybrid_eigensolver.symmetry import SectorSpec, build_group

PI = math.pi
SINGLET = SectorSpec((0.0,), (1,), 1, 0.0)


def random_hermitian(n, seed, complex_=True):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) + (1j * rng.standard_normal((n, n)) if complex_ else 0)
    return (A + A.conj().T) / 2


@pytest.mark.parametrize("complex_", [False, True])
def test_lanczos_matches_dense(complex_):
    H = random_hermitian(300, 3, complex_)
    e, v = lanczos(lambda x: H @ x, 300, n_eigs=3, dtype=H.dtype)
    ref = np.linalg.eigvalsh(H)[:3]
    assert np.allclose(e, ref, atol=1e-9)
    for k in range(3):
        assert np.linalg.norm(H @ v[:, k] - e[k] * v[:, k]) <= 1e-10
    assert np.allclose(v.conj().T @ v, np.eye(3), atol=1e-10)


def test_lanczos_degenerate_spectrum():
    d = np.array([-1.0, -1.0, -1.0, 0.5] + list(np.linspace(1, 5, 60)))
    Q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((64, 64)))
    H = Q @ np.diag(d) @ Q.T
    e, _ = lanczos(lambda x: H @ x, 64, n_eigs=4)
    assert np.allclose(e, [-1, -1, -1, 0.5], atol=1e-10)


def test_lanczos_raises_without_convergence():
    H = random_hermitian(400, 1)
    with pytest.raises(ConvergenceError):
        lanczos(lambda x: H @ x, 400, n_eigs=1, krylov_dim=5, max_restarts=2, dtype=H.dtype)


def test_lanczos_seeded_is_reproducible():
    H = random_hermitian(80, 2, False)
    v1 = lanczos(lambda x: H @ x, 80, seed=7)[1]
    v2 = lanczos(lambda x: H @ x, 80, seed=7)[1]
    assert np.array_equal(v1, v2)


def test_n4_heisenberg_ring():
    lat = build_lattice("chain", 4, 2)
    terms = hamiltonian_terms(lat, 1.0, 0.0)
    sol = solve_sector(lat, terms, SINGLET)
    assert sol.ground_energy == pytest.approx(-2.0, abs=1e-12)
    group = build_group(lat, SectorSpec((0.0,), None, None, 0.0))
    diag = dict(hamiltonian_connections(0b0101, terms, group))[0b0101]
    assert diag == pytest.approx(-1.0)


@pytest.mark.parametrize("N", [4, 6, 8, 10, 12])
@pytest.mark.parametrize("g", [0.0, 0.2, 0.5])
def test_sector_minimum_is_full_ground_state(N, g):
    lat = build_lattice("chain", N, 2)
    terms = hamiltonian_terms(lat, 1.0, g)
    ref = oracles.ground_energy(N, oracles.chain_bonds(N, g))[0]
    best = np.inf
    for sec in helpers.all_chain_sectors():
        if sec.m != 0:
            continue
        try:
            E = solve_sector(lat, terms, sec).ground_energy
        except ValueError:  # empty sector
            continue
        assert E >= ref - 1e-10
        best = min(best, E)
    assert best == pytest.approx(ref, abs=1e-10)
    if N % 4 == 0 and g < 0.5:
        assert solve_sector(lat, terms, SINGLET).ground_energy == pytest.approx(ref, abs=1e-10)


@pytest.mark.parametrize("N", [8, 10])
def test_sector_spectra_embedded_in_full_spectrum(N):
    lat = build_lattice("chain", N, 2)
    terms = hamiltonian_terms(lat, 1.0, 0.3)
    H = oracles.sparse_hamiltonian(N, oracles.chain_bonds(N, 0.3))
    idx = oracles.sz_indices(N, 0.0)
    full = np.linalg.eigvalsh(H[idx][:, idx].toarray())
    for sec in helpers.all_chain_sectors():
        if sec.m != 0:
            continue
        group = build_group(lat, sec)
        from hybrid_eigensolver.symmetry import enumerate_sector_basis

        basis = enumerate_sector_basis(N, group, 0.0)
        if len(basis) == 0:
            continue
        M = build_sector_matrix(basis, terms)
        assert M.hermiticity_error() <= 1e-12
        for e in np.linalg.eigvalsh(M.entries.toarray()):
            assert np.min(np.abs(full - e)) <= 1e-10


def test_known_desk_energies():
    for N, E in ((8, -3.35073322), (12, -4.95687817), (16, -6.57712032)):
        lat = build_lattice("chain", N, 4)
        sol = solve_sector(lat, hamiltonian_terms(lat, 1.0, 0.2), SINGLET)
        assert sol.ground_energy == pytest.approx(E, abs=1e-8)
    assert oracles.ground_energy(16, oracles.chain_bonds(16, 0.2))[0] == pytest.approx(-6.57712032, abs=1e-8)


@pytest.mark.parametrize("sector", [SINGLET, SectorSpec((PI,), (-1,), -1, 0.0)])
def test_reconstruct_is_sector_eigenstate(sector):
    N = 10
    lat = build_lattice("chain", N, 2)
    sol = solve_sector(lat, hamiltonian_terms(lat, 1.0, 0.25), sector)
    psi = reconstruct_full_state(sol.basis, sol.vectors[:, 0])
    assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-12)
    H = oracles.sparse_hamiltonian(N, oracles.chain_bonds(N, 0.25))
    assert np.linalg.norm(H @ psi - sol.ground_energy * psi) <= 1e-9
    configs = np.arange(1 << N)
    for perm, flip, chi in zip(sol.group.perms, sol.group.flips, sol.group.chars):
        moved = np.zeros_like(psi)
        moved[helpers.act_many(perm, flip, configs, N)] = psi
        assert np.allclose(moved, chi * psi, atol=1e-12)


def test_rdm_of_singlet_pair():
    psi = np.zeros(4, dtype=complex)
    psi[0b01], psi[0b10] = 1 / np.sqrt(2), -1 / np.sqrt(2)
    rho = block_rdm(psi, [0], 2)
    assert np.allclose(rho.matrix, np.eye(2) / 2, atol=1e-15)
    both = block_rdm(psi, [0, 1], 2)
    assert np.allclose(both.matrix, np.outer(psi, psi.conj()), atol=1e-15)


def test_rdm_bit_order_follows_site_list():
    # |site0 = down, site1 = up, site2 = up>
    psi = np.zeros(8)
    psi[0b001] = 1.0
    assert block_rdm(psi, [0, 2], 3).matrix[0b01, 0b01] == 1.0
    assert block_rdm(psi, [2, 0], 3).matrix[0b10, 0b10] == 1.0


@pytest.fixture(scope="module")
def n12_ground_state():
    lat = build_lattice("chain", 12, 4)
    sol = solve_sector(lat, hamiltonian_terms(lat, 1.0, 0.2), SINGLET)
    return reconstruct_full_state(sol.basis, sol.vectors[:, 0])


def test_rdm_trace_and_translation_invariance(n12_ground_state):
    spectra = []
    for start in range(12):
        rho = block_rdm(n12_ground_state, [(start + k) % 12 for k in range(4)], 12)
        assert np.trace(rho.matrix).real == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(rho.matrix, rho.matrix.conj().T, atol=1e-15)
        spectra.append(rho.spectrum())
    for s in spectra[1:]:
        assert np.allclose(s, spectra[0], atol=1e-10)
    assert np.all(spectra[0] > -1e-14)


def test_isometry_properties(n12_ground_state):
    rho = block_rdm(n12_ground_state, [0, 1, 2, 3], 12)
    iso = isometry_from_rdm(rho, 11)
    assert iso.chi == 11 and iso.block_dim == 16
    assert iso.orthonormality_error() <= 1e-12
    assert iso.retained_weight == pytest.approx(np.sum(rho.spectrum()[:11]), abs=1e-12)
    for row in iso.matrix:
        # first of the (near-)equal largest entries carries the phase convention
        k = np.flatnonzero(np.abs(row) >= np.abs(row).max() - 1e-12)[0]
        assert abs(row[k].imag) < 1e-15 and row[k].real > 0
    # retained rows are eigenvectors of the RDM
    assert np.allclose(iso.matrix.conj() @ rho.matrix.T, iso.weights[:, None] * iso.matrix.conj(), atol=1e-12)
    full = isometry_from_rdm(rho, 16)
    assert np.allclose(full.matrix @ full.matrix.conj().T, np.eye(16), atol=1e-12)
    with pytest.raises(ValueError):
        isometry_from_rdm(rho, 17)


def test_isometry_degenerate_ordering_is_deterministic():
    rho = np.diag([0.4, 0.3, 0.3, 0.0])
    a = isometry_from_rdm(rho, 3).matrix
    U = np.eye(4)[[0, 2, 1, 3]]
    b = isometry_from_rdm(U @ rho @ U.T, 3).matrix
    assert np.allclose(a[0], [1, 0, 0, 0])
    assert np.allclose(np.abs(a[1:]).sum(axis=0)[1:3], [1, 1])
    assert np.array_equal(np.sort(np.argmax(np.abs(a), axis=1)), np.sort(np.argmax(np.abs(b), axis=1)))


def test_identity_isometry():
    iso = Isometry.identity(8)
    assert iso.orthonormality_error() == 0.0
    assert iso.chi == 8
