import numpy as np
import pytest

from hybrid_eigensolver.ansatz import HybridState, load_checkpoint
from hybrid_eigensolver.estimator import EnergyEstimate, ExactSum, GradientEstimate
from hybrid_eigensolver.exact import Isometry, block_rdm, isometry_from_rdm, reconstruct_full_state, solve_sector
from hybrid_eigensolver.model import build_lattice, hamiltonian_terms
from hybrid_eigensolver.optimizer import Adam, DivergenceError, OptimizerConfig, _clip, bond_ladder, optimize
from hybrid_eigensolver.symmetry import SectorSpec

SINGLET = SectorSpec((0.0,), (1,), 1, 0.0)


@pytest.fixture(scope="module")
def n8():
    lat = build_lattice("chain", 8, 4)
    terms = hamiltonian_terms(lat, 1.0, 0.2)
    sol = solve_sector(lat, terms, SINGLET)
    ref_lat = build_lattice("chain", 12, 4)
    ref = solve_sector(ref_lat, hamiltonian_terms(ref_lat, 1.0, 0.2), SINGLET)
    psi = reconstruct_full_state(ref.basis, ref.vectors[:, 0])
    iso = isometry_from_rdm(block_rdm(psi, range(4), 12), 5)
    return lat, terms, sol, iso


def test_adam_minimises_complex_quadratic():
    target = np.array([1 + 2j, -0.5j, 3.0])
    theta = np.zeros(3, complex)
    opt = Adam(3)
    for _ in range(3000):
        theta = theta + opt.step(theta - target, 0.01)
    assert np.allclose(theta, target, atol=1e-3)


def test_clip():
    g = np.array([3.0, 4.0j])
    assert np.linalg.norm(_clip(g, 1.0)) == pytest.approx(1.0)
    assert _clip(g, None) is g
    assert np.array_equal(_clip(g, 10.0), g)


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(learning_rate=0)
    with pytest.raises(ValueError):
        OptimizerConfig(mode="metropolis")
    with pytest.raises(ValueError):
        OptimizerConfig(n_samples=0)


def test_exact_optimisation_improves_and_respects_bound(n8):
    lat, terms, sol, iso = n8
    st = HybridState.random(lat, iso, 2, SINGLET, seed=0)
    cfg = OptimizerConfig(max_iterations=150, learning_rate=0.02)
    res = optimize(st, terms, cfg, exact=ExactSum(st, terms, sol.matrix))
    E = res.trace.energies
    assert len(res.trace) == 150
    assert np.median(E[-50:]) <= np.median(E[:50])
    assert res.best_energy == E.min()
    assert res.best_energy < E[0] - 0.1
    assert np.all(E >= sol.ground_energy - 1e-12)
    assert ExactSum(st, terms).evaluate(res.best_state, with_gradient=False)[0].mean == pytest.approx(res.best_energy)


def test_optimisation_is_reproducible(n8):
    lat, terms, _, iso = n8
    st = HybridState.random(lat, iso, 2, SINGLET, seed=1)
    cfg = OptimizerConfig(max_iterations=30)
    a = optimize(st, terms, cfg)
    b = optimize(st, terms, cfg)
    assert np.array_equal(a.trace.energies, b.trace.energies)
    assert np.array_equal(a.state.parameters, b.state.parameters)


def test_zero_gradient_start_stays_put():
    lat = build_lattice("chain", 8, 4)
    terms = hamiltonian_terms(lat, 1.0, 0.2)
    sol = solve_sector(lat, terms, SINGLET)
    st = HybridState.from_dense(lat, reconstruct_full_state(sol.basis, sol.vectors[:, 0]), SINGLET)
    res = optimize(st, terms, OptimizerConfig(max_iterations=20))
    assert res.converged
    assert np.allclose(res.trace.energies, sol.ground_energy, atol=1e-12)
    assert np.array_equal(res.state.parameters, st.parameters)


def test_warm_start_phase(n8):
    lat, terms, _, iso = n8
    st = HybridState.random(lat, iso, 2, SINGLET, seed=2)
    cfg = OptimizerConfig(max_iterations=40, warm_start=True, warm_start_iterations=15)
    res = optimize(st, terms, cfg)
    phases = [r.phase for r in res.trace]
    assert phases[:15] == ["warm"] * 15 and set(phases[15:]) == {"symmetric"}
    assert res.best_state.group.order == st.group.order


def test_sampled_mode_adapts_samples(n8):
    lat, terms, _, iso = n8
    st = HybridState.random(lat, iso, 2, SINGLET, seed=3)
    cfg = OptimizerConfig(mode="sampled", n_samples=256, max_samples=1024, max_iterations=12, seed=5)
    res = optimize(st, terms, cfg)
    ns = [r.n_samples for r in res.trace]
    assert max(ns) > min(ns)
    assert all(r.std_error > 0 for r in res.trace)
    a = optimize(st, terms, cfg)
    assert np.array_equal(a.trace.energies, res.trace.energies)


def test_divergence_detected(n8, monkeypatch):
    lat, terms, _, iso = n8
    st = HybridState.random(lat, iso, 2, SINGLET, seed=4)
    energies = iter([-1.0, -1.5, 5.0])

    def fake(self, state, with_gradient=True, diagnostics=False):
        est = EnergyEstimate(next(energies), 0.0, 1, 1.0)
        return est, GradientEstimate(np.ones(state.n_params, complex), est)

    monkeypatch.setattr(ExactSum, "evaluate", fake)
    with pytest.raises(DivergenceError) as info:
        optimize(st, terms, OptimizerConfig(max_iterations=10))
    assert info.value.result.best_energy == -1.5


def test_checkpoint_written(n8, tmp_path):
    lat, terms, _, iso = n8
    st = HybridState.random(lat, iso, 2, SINGLET, seed=5)
    path = tmp_path / "run.ckpt"
    res = optimize(st, terms, OptimizerConfig(max_iterations=10, checkpoint_every=3), checkpoint_path=path)
    back = load_checkpoint(path, expected={"D": 2})
    assert np.array_equal(back.parameters, res.best_state.parameters)


def test_convergence_stops_early(n8):
    lat, terms, _, iso = n8
    st = HybridState.random(lat, iso, 2, SINGLET, seed=6)
    cfg = OptimizerConfig(max_iterations=5000, convergence_window=20, convergence_tol=1e-6)
    res = optimize(st, terms, cfg)
    assert res.converged and len(res.trace) < 5000


def test_bond_ladder_energies_decrease(n8):
    lat, terms, sol, iso = n8
    st = HybridState.random(lat, iso, 1, SINGLET, seed=7)
    out = bond_ladder(st, terms, [1, 2, 3], OptimizerConfig(max_iterations=150, learning_rate=0.02))
    E = [out[D].best_energy for D in (1, 2, 3)]
    assert E[1] <= E[0] + 1e-9 and E[2] <= E[1] + 1e-6
    assert [out[D].best_state.bond_dim for D in (1, 2, 3)] == [1, 2, 3]
    assert min(E) >= sol.ground_energy - 1e-12
