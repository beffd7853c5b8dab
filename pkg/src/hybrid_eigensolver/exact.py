"""Sector-resolved exact diagonalization and RDM-derived block isometries."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .model import HamiltonianTerm, Lattice
from .symmetry import SectorBasis, SectorSpec, SymmetryGroup, build_group, enumerate_sector_basis

__all__ = [
    "ConvergenceError",
    "SectorMatrix",
    "SectorSolution",
    "BlockRDM",
    "Isometry",
    "TermArrays",
    "hamiltonian_connections",
    "build_sector_matrix",
    "lanczos",
    "lowest_eigenpairs",
    "solve_sector",
    "reconstruct_full_state",
    "block_rdm",
    "isometry_from_rdm",
    "DENSE_LIMIT",
]

logger = logging.getLogger(__name__)

DENSE_LIMIT = 24


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class TermArrays:
    """Bond list flattened into arrays for vectorised bit manipulation."""

    def __init__(self, terms: list[HamiltonianTerm]):
        self.i = np.array([t.i for t in terms], dtype=np.uint64)
        self.j = np.array([t.j for t in terms], dtype=np.uint64)
        self.coupling = np.array([t.coupling for t in terms], dtype=np.float64)
        self.flip_masks = (np.uint64(1) << self.i) | (np.uint64(1) << self.j)

    def __len__(self):
        return len(self.coupling)

    def split(self, configs):
        """Diagonal energies and the real-space configurations reached by spin exchange.

        Returns ``diag`` of shape ``(M,)``, a boolean ``(M, T)`` mask of
        anti-aligned bonds, and the ``(M, T)`` exchanged configurations.
        """
        a = np.atleast_1d(np.asarray(configs, dtype=np.uint64))
        one = np.uint64(1)
        si = (a[:, None] >> self.i[None, :]) & one
        sj = (a[:, None] >> self.j[None, :]) & one
        anti = si != sj
        diag = (0.25 * self.coupling[None, :] * np.where(anti, -1.0, 1.0)).sum(axis=1)
        return diag, anti, a[:, None] ^ self.flip_masks[None, :]


def _connections_batch(configs, norms_a, terms: TermArrays, group: SymmetryGroup, basis: SectorBasis | None):
    """Off-diagonal sector matrix elements <b_symm|H|a_symm> for a batch of representatives.

    Returns flat arrays ``(row_in_batch, b_repr, amplitude)`` plus the
    diagonal. If ``basis`` is given, reps outside it are dropped using its
    stored norms; otherwise norms are recomputed.
    """
    diag, anti, flipped = terms.split(configs)
    rows, cols = np.nonzero(anti)
    b = flipped[rows, cols]
    b_rep, g = group.representatives(b) if len(b) else (b, np.zeros(0, int))
    if basis is not None:
        idx = basis.index(b_rep)
        keep = idx >= 0
        nb = np.where(keep, basis.norms[np.maximum(idx, 0)], 0.0)
    else:
        nb = group.norms_squared(b_rep) if len(b_rep) else np.zeros(0)
        keep = nb > 0
    amp = 0.5 * terms.coupling[cols] * np.conj(group.chars[g]) * np.sqrt(nb / norms_a[rows])
    return rows[keep], b_rep[keep], amp[keep], diag


def hamiltonian_connections(a_repr: int, terms, group: SymmetryGroup) -> list[tuple[int, complex]]:
    """Nonzero sector matrix elements ``<b_symm|H|a_symm>`` in the column of ``a_repr``.

    The diagonal element appears as ``(a_repr, value)``. Contributions
    reaching the same representative are summed; representatives whose
    sector norm vanishes are dropped.
    """
    ta = terms if isinstance(terms, TermArrays) else TermArrays(terms)
    norm_a = group.norm_squared(a_repr)
    if norm_a == 0:
        raise ValueError(f"configuration {a_repr} is not in the sector")
    out: dict[int, complex] = {}
    if len(ta):
        _, b_rep, amp, diag = _connections_batch([a_repr], np.array([norm_a]), ta, group, None)
        out[a_repr] = complex(diag[0])
        for b, v in zip(b_rep.tolist(), amp.tolist()):
            out[b] = out.get(b, 0.0) + v
    return [(b, complex(v)) for b, v in out.items() if v != 0 or b == a_repr]


@dataclass
class SectorMatrix:
    """Sparse Hamiltonian on a sector basis; ``entries[b, a] = <b_symm|H|a_symm>``."""

    basis: SectorBasis
    entries: sp.csr_matrix

    @property
    def dim(self) -> int:
        return len(self.basis)

    def hermiticity_error(self) -> float:
        d = self.entries - self.entries.conj().T
        return float(abs(d).max()) if d.nnz else 0.0


def build_sector_matrix(basis: SectorBasis, terms, chunk: int = 4096) -> SectorMatrix:
    ta = terms if isinstance(terms, TermArrays) else TermArrays(terms)
    group = basis.group
    n = len(basis)
    dtype = np.float64 if group.is_real else np.complex128
    if n == 0 or len(ta) == 0:
        return SectorMatrix(basis, sp.csr_matrix((n, n), dtype=dtype))
    rows_all, cols_all, vals_all = [], [], []
    for start in range(0, n, chunk):
        a = basis.configs[start:start + chunk]
        na = basis.norms[start:start + chunk]
        r, b_rep, amp, diag = _connections_batch(a, na, ta, group, basis)
        rows_all += [basis.index(b_rep), np.arange(start, start + len(a))]
        cols_all += [r + start, np.arange(start, start + len(a))]
        vals_all += [amp, diag.astype(np.complex128)]
    vals = np.concatenate(vals_all)
    if dtype is np.float64:
        vals = vals.real
    m = sp.coo_matrix((vals, (np.concatenate(rows_all), np.concatenate(cols_all))), shape=(n, n))
    m.sum_duplicates()
    return SectorMatrix(basis, m.tocsr())


def lanczos(
    matvec,
    dim: int,
    n_eigs: int = 1,
    tol: float = 1e-10,
    krylov_dim: int = 120,
    max_restarts: int = 200,
    seed: int = 1234,
    dtype=np.float64,
):
    """Lowest eigenpairs of a Hermitian operator by restarted Lanczos.

    Full reorthogonalization; converged vectors are locked and later searches
    run in their orthogonal complement. Returns ``(energies, vectors)`` with
    vectors as columns.
    """
    if n_eigs > dim:
        raise ValueError(f"requested {n_eigs} eigenpairs of a {dim}-dimensional operator")
    rng = np.random.default_rng(seed)
    locked: list[np.ndarray] = []
    energies: list[float] = []
    m = min(dim, krylov_dim)

    def project(v):
        for _ in range(2):
            for u in locked:
                v = v - np.vdot(u, v) * u
        return v

    while len(locked) < n_eigs:
        start = rng.standard_normal(dim).astype(dtype)
        if np.iscomplexobj(start):
            start = start + 1j * rng.standard_normal(dim)
        start = project(start)
        residual = np.inf
        for _ in range(max_restarts):
            q = start / np.linalg.norm(start)
            Q = [q]
            alphas, betas = [], []
            for j in range(m - len(locked)):
                w = project(matvec(Q[-1]))
                alphas.append(np.vdot(Q[-1], w).real)
                w = w - alphas[-1] * Q[-1]
                if j > 0:
                    w = w - betas[-1] * Q[-2]
                Qm = np.array(Q)
                for _ in range(2):
                    w = project(w - Qm.T @ (Qm.conj() @ w))
                beta = np.linalg.norm(w)
                if beta < 1e-13 * max(1.0, abs(alphas[-1])) or j == m - len(locked) - 1:
                    break
                betas.append(beta)
                Q.append(w / beta)
            k = len(alphas)
            T = np.diag(alphas) + np.diag(betas[: k - 1], 1) + np.diag(betas[: k - 1], -1)
            theta, s = np.linalg.eigh(T)
            y = np.array(Q[:k]).T @ s[:, 0]
            y = project(y)
            y /= np.linalg.norm(y)
            hy = matvec(y)
            e = np.vdot(y, hy).real
            residual = np.linalg.norm(hy - e * y)
            if residual <= tol:
                locked.append(y)
                energies.append(e)
                break
            start = y
        else:
            raise ConvergenceError(
                f"Lanczos did not converge: residual {residual:.3e} > {tol:.1e}", residual
            )
    order = np.argsort(energies, kind="stable")
    return np.asarray(energies)[order], np.array(locked).T[:, order]


def lowest_eigenpairs(matrix: SectorMatrix, n_eigs: int = 1, tol: float = 1e-10, seed: int = 1234):
    """``[(energy, vector), ...]`` ascending, vectors normalized in the sector basis."""
    if n_eigs < 1:
        raise ValueError("n_eigs must be at least 1")
    H = matrix.entries
    if matrix.dim == 0:
        raise ValueError("empty sector")
    if matrix.dim == 1:
        return [(float(H[0, 0].real), np.ones(1, dtype=H.dtype))]
    e, v = lanczos(lambda x: H @ x, matrix.dim, n_eigs, tol=tol, seed=seed, dtype=H.dtype)
    return [(float(e[i]), v[:, i]) for i in range(len(e))]


@dataclass
class SectorSolution:
    lattice: Lattice
    sector: SectorSpec
    group: SymmetryGroup
    basis: SectorBasis
    matrix: SectorMatrix
    energies: np.ndarray
    vectors: np.ndarray = field(repr=False)

    @property
    def ground_energy(self) -> float:
        return float(self.energies[0])


def solve_sector(lattice: Lattice, terms, sector: SectorSpec, n_eigs: int = 1, tol: float = 1e-10) -> SectorSolution:
    group = build_group(lattice, sector)
    basis = enumerate_sector_basis(lattice.n_sites, group, sector.m)
    matrix = build_sector_matrix(basis, terms)
    logger.info("sector dimension %d, group order %d", len(basis), group.order)
    pairs = lowest_eigenpairs(matrix, min(n_eigs, len(basis)), tol=tol)
    energies = np.array([p[0] for p in pairs])
    vectors = np.array([p[1] for p in pairs]).T
    return SectorSolution(lattice, sector, group, basis, matrix, energies, vectors)


def reconstruct_full_state(basis: SectorBasis, vector, n_sites: int | None = None) -> np.ndarray:
    """Dense ``2^N`` amplitudes of ``sum_a vector[a] |a_symm>``; index = configuration."""
    group = basis.group
    N = group.n_sites if n_sites is None else n_sites
    if N > DENSE_LIMIT:
        raise ValueError(f"dense reconstruction limited to {DENSE_LIMIT} sites, got {N}")
    psi = np.zeros(1 << N, dtype=np.complex128)
    img = group.images(basis.configs).astype(np.int64)
    coef = np.asarray(vector)[:, None] * np.conj(group.chars)[None, :] / np.sqrt(basis.norms)[:, None]
    np.add.at(psi, img.ravel(), coef.ravel())
    return psi


@dataclass
class BlockRDM:
    sites: tuple[int, ...]
    matrix: np.ndarray

    def spectrum(self) -> np.ndarray:
        return np.sort(np.linalg.eigvalsh(self.matrix))[::-1]


def block_rdm(psi: np.ndarray, sites, n_sites: int | None = None) -> BlockRDM:
    """``Tr_{outside}|psi><psi|`` on ``sites``; row index bit ``k`` is ``sites[k]``."""
    N = int(round(np.log2(len(psi)))) if n_sites is None else n_sites
    sites = tuple(int(s) for s in sites)
    t = np.asarray(psi).reshape((2,) * N)
    # C-order axis ax holds the bit of site N-1-ax
    front = [N - 1 - s for s in reversed(sites)]
    rest = [ax for ax in range(N) if ax not in front]
    M = t.transpose(front + rest).reshape(1 << len(sites), -1)
    rho = M @ M.conj().T
    return BlockRDM(sites, 0.5 * (rho + rho.conj().T))


@dataclass
class Isometry:
    """Rows are the retained RDM eigenvectors: ``matrix[gamma, block_state]``."""

    matrix: np.ndarray
    weights: np.ndarray = field(default=None)

    @property
    def chi(self) -> int:
        return self.matrix.shape[0]

    @property
    def block_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def retained_weight(self) -> float:
        return float(np.sum(self.weights)) if self.weights is not None else float("nan")

    def orthonormality_error(self) -> float:
        return float(np.abs(self.matrix @ self.matrix.conj().T - np.eye(self.chi)).max())

    @classmethod
    def identity(cls, block_dim: int) -> "Isometry":
        return cls(np.eye(block_dim, dtype=np.complex128), np.ones(block_dim) / block_dim)


def _fix_phase(v):
    k = np.argmax(np.abs(v) - 1e-12 * np.arange(len(v)))  # first of near-equal maxima
    return v * (abs(v[k]) / v[k])


def isometry_from_rdm(rdm: BlockRDM | np.ndarray, chi: int, degeneracy_tol: float = 1e-10) -> Isometry:
    """The ``chi`` dominant eigenvectors of a block RDM as an isometry.

    Each eigenvector's largest-magnitude entry is made real positive.
    Within a (near-)degenerate eigenvalue group, vectors are ordered
    lexicographically by their rounded (real, imag) entries.
    """
    rho = rdm.matrix if isinstance(rdm, BlockRDM) else np.asarray(rdm)
    dim = rho.shape[0]
    if not 1 <= chi <= dim:
        raise ValueError(f"chi must lie in [1, {dim}], got {chi}")
    w, v = np.linalg.eigh(rho)
    w, v = w[::-1], v[:, ::-1]
    vecs = [_fix_phase(v[:, i]) for i in range(dim)]

    def key(i):
        x = np.round(vecs[i], 9)
        return tuple(np.ravel(np.column_stack([x.real, x.imag])))

    order = []
    i = 0
    while i < dim:
        j = i + 1
        while j < dim and abs(w[j] - w[i]) <= degeneracy_tol:
            j += 1
        order += sorted(range(i, j), key=key, reverse=True)
        if i < chi < j:
            logger.warning("chi=%d truncates inside a degenerate RDM multiplet [%d, %d)", chi, i, j)
        i = j
    order = order[:chi]
    return Isometry(np.array([vecs[i] for i in order], dtype=np.complex128), w[order].copy())
