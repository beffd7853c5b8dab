"""Hybrid tensor-network eigensolver for periodic J1-J2 Heisenberg models.

Block isometries taken from reduced density matrices are stitched together
by a matrix product state; amplitudes are projected onto a symmetry sector
and optimised by variational Monte Carlo with direct sampling.
"""
__version__ = "0.1.0"

from .model import Lattice, HamiltonianTerm, build_lattice, hamiltonian_terms
from .symmetry import SectorSpec, SymmetryGroup, build_group, enumerate_sector_basis, norm_squared, representative
from .exact import (
    ConvergenceError,
    Isometry,
    block_rdm,
    hamiltonian_connections,
    isometry_from_rdm,
    lanczos,
    reconstruct_full_state,
    solve_sector,
)
from .ansatz import CheckpointError, HybridState, load_checkpoint, parameter_count, save_checkpoint
from .sampler import draw_sample, draw_samples
from .estimator import ExactSum, energy, gradient, local_energy, sampled_estimate
from .optimizer import DivergenceError, OptimizerConfig, bond_ladder, optimize
from .analysis import ExtrapolationResult, extrapolate_inverse_D, relative_error
