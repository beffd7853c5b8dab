import math

import numpy as np
import pytest

import oracles
from hybrid_eigensolver.ansatz import HybridState
from hybrid_eigensolver.estimator import (
    ExactSum,
    batch_means_error,
    energy,
    gradient,
    local_energies,
    local_energy,
    sampled_estimate,
)
from hybrid_eigensolver.exact import Isometry, hamiltonian_connections, reconstruct_full_state, solve_sector
from hybrid_eigensolver.model import build_lattice, hamiltonian_terms
from hybrid_eigensolver.symmetry import SectorSpec

PI = math.pi
SINGLET = SectorSpec((0.0,), (1,), 1, 0.0)
TRIPLET = SectorSpec((PI,), (-1,), -1, 0.0)
G = 0.2


def setup(seed=0, sector=SINGLET, N=8, b=4, chi=3, D=2):
    lat = build_lattice("chain", N, b)
    rng = np.random.default_rng(seed + 500)
    q, _ = np.linalg.qr(rng.standard_normal((1 << b, 1 << b)) + 1j * rng.standard_normal((1 << b, 1 << b)))
    st = HybridState.random(lat, Isometry(q[:chi].copy()), D, sector, seed=seed)
    return st, hamiltonian_terms(lat, 1.0, G)


def oracle_energy(st, sector):
    """<Psi|H|Psi>/<Psi|Psi> with Psi assembled in the full space from oracle projections."""
    N = st.lattice.n_sites
    gens = oracles.chain_sector_gens(N, sector.momentum[0], sector.parities[0], sector.z)
    elems = oracles.group_with_characters(N, gens)
    H = oracles.sparse_hamiltonian(N, oracles.chain_bonds(N, G))
    psi = np.zeros(1 << N, dtype=complex)
    seen = set()
    for a in oracles.sz_indices(N, 0.0):
        v = oracles.projected_vector(int(a), elems, N)
        nrm = np.linalg.norm(v)
        r = int(np.flatnonzero(np.abs(v) > 1e-12).min()) if nrm > 1e-9 else None
        if r is None or r != a or r in seen:
            continue
        seen.add(r)
        psi += st.amplitude_symm(r) * v / nrm
    return (np.vdot(psi, H @ psi) / np.vdot(psi, psi)).real


@pytest.mark.parametrize("sector", [SINGLET, TRIPLET])
def test_exact_sum_matches_full_space_expectation(sector):
    st, terms = setup(1, sector)
    est = energy(st, terms)
    assert est.mean == pytest.approx(oracle_energy(st, sector), abs=1e-12)
    assert abs(est.imag_mean) < 1e-12


def test_local_energy_constant_on_eigenstate():
    lat = build_lattice("chain", 8, 4)
    terms = hamiltonian_terms(lat, 1.0, G)
    sol = solve_sector(lat, terms, SINGLET)
    st = HybridState.from_dense(lat, reconstruct_full_state(sol.basis, sol.vectors[:, 0]), SINGLET)
    eloc = local_energies(st, sol.basis.configs, terms)
    assert np.allclose(eloc, sol.ground_energy, atol=1e-10)
    est, grad = ExactSum(st, terms).evaluate(st)
    assert est.mean == pytest.approx(sol.ground_energy, abs=1e-12)
    assert grad.norm <= 1e-10


def test_local_energy_from_connections():
    st, terms = setup(2)
    r = 0b00110101
    r = st.group.representative(r)[0]
    conns = hamiltonian_connections(r, terms, st.group)
    assert local_energy(st, r, conns) == pytest.approx(local_energies(st, [r], terms)[0], abs=1e-12)
    assert local_energy(st, r, terms=terms) == pytest.approx(local_energy(st, r, conns), abs=1e-12)


def test_variational_bound_random_states():
    lat = build_lattice("chain", 8, 4)
    E0 = solve_sector(lat, hamiltonian_terms(lat, 1.0, G), SINGLET).ground_energy
    for seed in range(10):
        st, terms = setup(seed)
        assert energy(st, terms).mean >= E0 - 1e-12


def central_difference(st, terms, exact, k, h=1e-5):
    theta = st.parameters
    out = 0
    for step, w in ((h, 1.0), (1j * h, 1j)):
        e = np.zeros_like(theta)
        e[k] = step
        ep = exact.evaluate(st.with_parameters(theta + e), with_gradient=False)[0].mean
        em = exact.evaluate(st.with_parameters(theta - e), with_gradient=False)[0].mean
        out += 0.5 * w * (ep - em) / (2 * h)
    return out


@pytest.mark.parametrize("seed,sector", [(3, SINGLET), (4, TRIPLET)])
def test_exact_gradient_finite_differences(seed, sector):
    st, terms = setup(seed, sector)
    exact = ExactSum(st, terms)
    grad = exact.evaluate(st)[1].vector
    fd = np.array([central_difference(st, terms, exact, k) for k in range(st.n_params)])
    assert np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-3)) <= 1e-6


def test_gradient_invariant_under_state_normalisation():
    st, terms = setup(5)
    exact = ExactSum(st, terms)
    est, grad = exact.evaluate(st)
    c = 3.7 * np.exp(0.4j)
    t = [x.copy() for x in st.tensors]
    t[1] = t[1] * c
    scaled = st.replace(tensors=t)
    est2, grad2 = exact.evaluate(scaled)
    assert est2.mean == pytest.approx(est.mean, abs=1e-12)
    n0 = st.tensors[0].size
    # untouched block: unchanged; scaled block: dE/dtheta* picks up 1/conj(c)
    assert np.allclose(grad2.vector[:n0], grad.vector[:n0], atol=1e-12)
    assert np.allclose(grad2.vector[n0:], grad.vector[n0:] / np.conj(c), atol=1e-12)


def test_sampled_energy_within_error_bars():
    st, terms = setup(6)
    exact = energy(st, terms).mean
    est = energy(st, terms, mode="sampled", n_samples=40_000, seed=1)
    assert est.std_error > 0
    assert abs(est.mean - exact) <= 4 * est.std_error
    assert 0 < est.acceptance_rate <= 1


def test_sampled_gradient_approaches_exact():
    st, terms = setup(7)
    g_exact = gradient(st, terms)
    g_s = gradient(st, terms, mode="sampled", n_samples=200_000, seed=3)
    assert np.linalg.norm(g_s.vector - g_exact.vector) <= 0.1 * g_exact.norm


def test_sampled_estimate_reuses_batch():
    from hybrid_eigensolver.sampler import draw_samples

    st, terms = setup(8)
    batch = draw_samples(st, 2000, seed=2)
    a, _ = sampled_estimate(st, terms, batch=batch, with_gradient=False)
    b, _ = sampled_estimate(st, terms, batch=batch, with_gradient=False)
    assert a.mean == b.mean
    assert a.n_samples == int(batch.accepted.sum())


def test_unknown_mode():
    st, terms = setup(0)
    with pytest.raises(ValueError):
        energy(st, terms, mode="metropolis")


def test_batch_means_error():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(64_000)
    assert batch_means_error(x) == pytest.approx(1 / np.sqrt(64_000), rel=0.35)
    assert batch_means_error(np.ones(1)) == 0.0
