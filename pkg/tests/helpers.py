"""Comparisons between the package and the oracles in ``oracles.py``."""
from __future__ import annotations

import functools

import numpy as np
import scipy.sparse as sp

import oracles
from hybrid_eigensolver.exact import hamiltonian_connections
from hybrid_eigensolver.model import build_lattice, hamiltonian_terms
from hybrid_eigensolver.symmetry import SectorSpec, build_group


def act_many(perm, flip, configs, N):
    out = np.zeros_like(configs)
    for i in range(N):
        out |= ((configs >> i) & 1) << perm[i]
    return out ^ ((1 << N) - 1) if flip else out


@functools.lru_cache(maxsize=None)
def full_hamiltonian(kind, size, g):
    if kind == "chain":
        return oracles.sparse_hamiltonian(size, oracles.chain_bonds(size, g))
    return oracles.sparse_hamiltonian(size * size, oracles.torus_bonds(size, g))


def projection_errors(kind, size, sector: SectorSpec, g=0.3):
    """Compare norms and sector matrix elements with ``U^dagger H U`` built in the full space.

    Returns ``None`` when the oracle finds the characters inconsistent (the
    package must then refuse the sector), else ``(norm_err, matrix_err, dim)``.
    """
    N = size if kind == "chain" else size * size
    if kind == "chain":
        gens = oracles.chain_sector_gens(N, sector.momentum[0], sector.parities[0], sector.z)
    else:
        gens = oracles.torus_sector_gens(size, *sector.momentum, *sector.parities, sector.z)
    elems = oracles.group_with_characters(N, gens)
    lattice = build_lattice(kind, size if kind == "chain" else (size, size), 2 if kind == "chain" else 4)
    if elems is None:
        try:
            build_group(lattice, sector)
        except ValueError:
            return None
        raise AssertionError("package accepted an inconsistent sector")
    group = build_group(lattice, sector)
    assert group.order == len(elems)

    configs = oracles.sz_indices(N, sector.m).astype(np.int64)
    # unnormalised projections of every configuration at once, as a sparse matrix
    rows = np.arange(len(configs))
    r_idx, c_idx, vals = [], [], []
    for (perm, flip), c in elems.items():
        r_idx.append(rows)
        c_idx.append(act_many(perm, flip, configs, N))
        vals.append(np.full(len(configs), np.conj(c)))
    P = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(r_idx), np.concatenate(c_idx))), shape=(len(configs), 1 << N)
    )
    norms = np.asarray(abs(P).power(2).sum(axis=1)).ravel()
    lib_norms = group.norms_squared(configs.astype(np.uint64))
    norm_err = float(np.max(np.abs(norms - lib_norms)))

    reps = np.unique(group.representatives(configs.astype(np.uint64))[0]).astype(np.int64)
    pos = {int(c): k for k, c in enumerate(configs)}
    basis = [int(r) for r in reps if norms[pos[int(r)]] > 1e-9]
    if not basis:
        return norm_err, 0.0, 0
    sel = np.array([pos[r] for r in basis])
    U = (sp.diags(1 / np.sqrt(norms[sel])) @ P[sel]).T.tocsc()
    H = full_hamiltonian(kind, size, g)
    ref = (U.conj().T @ (H @ U)).toarray()
    index = {r: k for k, r in enumerate(basis)}
    terms = hamiltonian_terms(lattice, 1.0, g)
    M = np.zeros_like(ref, dtype=complex)
    for a in basis:
        for b, v in hamiltonian_connections(a, terms, group):
            M[index[b], index[a]] += v
    return norm_err, float(np.max(np.abs(M - ref))), len(basis)


def all_chain_sectors():
    for k, p, z in oracles.chain_sectors():
        yield SectorSpec((k,), (p,), z, 0.0)
    for k in (0.0, np.pi):
        for p in (1, -1):
            yield SectorSpec((k,), (p,), None, 1.0)


def all_torus_sectors():
    import itertools

    for kx, ky in itertools.product((0.0, np.pi), repeat=2):
        for par in itertools.product((1, -1), repeat=4):
            for z in (1, -1):
                yield SectorSpec((kx, ky), par, z, 0.0)
