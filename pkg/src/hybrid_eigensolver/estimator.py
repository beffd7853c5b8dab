"""Local energies, energy expectation and gradient in the symmetric basis.

Samples live in real space; energies and gradients are evaluated on their
representatives. With ``eps = E_loc(rep(x)) - <E_loc>`` the gradient with
respect to the conjugated tensor entries is

    dE/dtheta* = < conj(O(x)) Re eps > + i < conj(O(rep(x))) Im eps >

averaged over ``|phi(x)|^2``, where ``O = d ln phi / d theta``. Both the
exhaustive and the sampled path feed the same accumulation kernel.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .ansatz import HybridState
from .exact import SectorMatrix, TermArrays, _connections_batch, build_sector_matrix
from .sampler import SampleBatch, draw_samples
from .symmetry import enumerate_sector_basis

__all__ = [
    "EnergyEstimate",
    "GradientEstimate",
    "ExactSum",
    "local_energy",
    "local_energies",
    "energy",
    "gradient",
    "sampled_estimate",
    "batch_means_error",
]

logger = logging.getLogger(__name__)


@dataclass
class EnergyEstimate:
    mean: float
    std_error: float
    n_samples: int
    acceptance_rate: float
    imag_mean: float = 0.0
    dropped: int = 0


@dataclass
class GradientEstimate:
    vector: np.ndarray
    energy: EnergyEstimate
    mean_O: np.ndarray | None = field(default=None, repr=False)
    mean_OE: np.ndarray | None = field(default=None, repr=False)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))


def batch_means_error(values: np.ndarray, n_batches: int = 32) -> float:
    n = len(values)
    if n < 2:
        return 0.0
    k = min(n_batches, n)
    means = np.array([b.mean() for b in np.array_split(values, k)])
    return float(means.std(ddof=1) / np.sqrt(k))


def local_energies(state: HybridState, reps, terms) -> np.ndarray:
    """``E_loc`` for each representative; ``nan`` where ``psi(rep) == 0``."""
    ta = terms if isinstance(terms, TermArrays) else TermArrays(terms)
    reps = np.atleast_1d(np.asarray(reps, dtype=np.uint64))
    group = state.group
    norms = group.norms_squared(reps)
    if np.any(norms == 0):
        raise ValueError("representative outside the sector")
    rows, b_rep, amp, diag = _connections_batch(reps, norms, ta, group, None)
    need, inv = np.unique(np.concatenate([reps, b_rep]), return_inverse=True)
    lpsi = state.log_amplitude_symm(need)
    la, lb = lpsi[inv[: len(reps)]], lpsi[inv[len(reps):]]
    out = diag.astype(np.complex128)
    with np.errstate(invalid="ignore", over="ignore"):
        ratio = np.where(np.isneginf(lb.real), 0.0, np.exp(lb - la[rows]))
    np.add.at(out, rows, ratio * np.conj(amp))
    out[np.isneginf(la.real)] = np.nan
    return out


def local_energy(state: HybridState, a_repr: int, connections=None, terms=None) -> complex:
    """``sum_b psi(b)/psi(a) <a|H|b>`` from a connection list ``[(b, <b|H|a>), ...]``."""
    if connections is None:
        return complex(local_energies(state, [a_repr], terms)[0])
    reps = np.array([b for b, _ in connections], dtype=np.uint64)
    elems = np.array([v for _, v in connections], dtype=np.complex128)
    lp = state.log_amplitude_symm(np.concatenate([[a_repr], reps]).astype(np.uint64))
    if np.isneginf(lp[0].real):
        raise ZeroDivisionError("psi(a_symm) vanishes")
    return complex(np.sum(np.exp(lp[1:] - lp[0]) * np.conj(elems)))


def _accumulate(state, real_configs, repr_configs, weights, eloc, diagnostics=False, contraction=None, rep_rows=None):
    """Shared kernel: weighted energy and covariance gradient.

    ``weights`` are normalised probabilities over the real-space rows. When
    every representative already occurs among ``real_configs``, pass the
    contraction of ``real_configs`` and ``rep_rows`` (row of each sorted
    unique representative) to skip a second contraction.
    Returns ``(complex mean of E_loc, flat gradient, mean_O, mean_OE)``.
    """
    e_mean = np.sum(weights * eloc)
    eps = eloc - e_mean
    uniq, inv = np.unique(repr_configs, return_inverse=True)
    phase = np.bincount(inv, weights=weights * eps.imag, minlength=len(uniq))
    n_real = len(real_configs)
    if contraction is None:
        configs = np.concatenate([real_configs, uniq])
        rep_rows = n_real + np.arange(len(uniq))
    else:
        configs = real_configs
    K = np.zeros((4 if diagnostics else 2, len(configs)))
    K[0, :n_real] = weights * eps.real
    np.add.at(K[1], rep_rows, phase)
    if diagnostics:
        K[2, :n_real] = weights
        K[3, :n_real] = weights * eloc.real
    sums = state.log_derivative_tensors(configs, K, contraction)
    flat = np.conj(np.concatenate([t.reshape(len(K), -1) for t in sums], axis=1))
    grad = flat[0] + 1j * flat[1]
    if diagnostics:
        return e_mean, grad, flat[2], flat[3]
    return e_mean, grad, None, None


class ExactSum:
    """Exhaustive evaluation over a sector basis; precomputes everything parameter independent."""

    def __init__(self, state: HybridState, terms, matrix: SectorMatrix | None = None):
        self.group = state.group
        if matrix is None:
            basis = enumerate_sector_basis(state.lattice.n_sites, state.group, state.sector.m)
            matrix = build_sector_matrix(basis, terms)
        self.matrix = matrix
        self.basis = matrix.basis
        self.table = state.orbit_table(self.basis.configs)
        self.repr_of_row = self.basis.configs[self.table.owner]

        # basis configs are sorted, so the k-th rep row is the k-th unique rep
        self.rep_rows = np.flatnonzero(self.table.is_rep)[np.argsort(self.table.owner[self.table.is_rep])]

    def psi(self, state: HybridState, contraction=None):
        """Sector vector (scaled so its largest modulus is ~1) and real-space log amplitudes."""
        lp = (state.log_amplitude_real(self.table.configs) if contraction is None else contraction.log_phi)
        lpsi = state.log_amplitude_symm(self.basis.configs, self.table, lp)
        shift = np.max(lpsi.real)
        return np.exp(lpsi - shift), lp, shift

    def evaluate(self, state: HybridState, with_gradient: bool = True, diagnostics: bool = False):
        con = state.contract(self.table.configs, environments=with_gradient)
        psi, lp, shift = self.psi(state, con)
        hpsi = self.matrix.entries @ psi
        w_rep = np.abs(psi) ** 2
        Z = w_rep.sum()
        if Z == 0:
            raise FloatingPointError("state vanishes on the sector")
        with np.errstate(invalid="ignore", divide="ignore"):
            eloc = np.where(w_rep > 0, hpsi / psi, 0.0)
        n = len(self.basis)
        if not with_gradient:
            e = np.sum(w_rep * eloc) / Z
            return EnergyEstimate(float(e.real), 0.0, n, 1.0, float(e.imag)), None
        w_real = np.exp(2 * (lp.real - shift))
        w_real /= w_real.sum()
        e, vec, mO, mOE = _accumulate(
            state, self.table.configs, self.repr_of_row, w_real, eloc[self.table.owner], diagnostics,
            contraction=con, rep_rows=self.rep_rows,
        )
        est = EnergyEstimate(float(e.real), 0.0, n, 1.0, float(e.imag))
        return est, GradientEstimate(vec, est, mO, mOE)


def sampled_estimate(
    state: HybridState,
    terms,
    n_samples: int | None = None,
    seed=None,
    batch: SampleBatch | None = None,
    with_gradient: bool = True,
    threads: int = 1,
    diagnostics: bool = False,
):
    """Energy (and gradient) from direct samples; rejected samples are discarded."""
    if batch is None:
        batch = draw_samples(state, n_samples, seed=seed, threads=threads)
    acc = batch.accepted
    if not np.any(acc):
        raise FloatingPointError("no accepted samples")
    x = batch.a_real[acc]
    r = batch.a_repr[acc]
    uniq, inv = np.unique(r, return_inverse=True)
    eloc = local_energies(state, uniq, terms)[inv]
    good = np.isfinite(eloc)
    dropped = int(np.sum(~good))
    if dropped:
        logger.warning("%d samples dropped: psi(a_symm) = 0", dropped)
    x, r, eloc = x[good], r[good], eloc[good]
    n = len(eloc)
    if n == 0:
        raise FloatingPointError("no usable samples")
    err = batch_means_error(eloc.real)
    if not with_gradient:
        e = eloc.mean()
        return EnergyEstimate(float(e.real), err, n, batch.acceptance_rate, float(e.imag), dropped), None
    w = np.full(n, 1.0 / n)
    e, vec, mO, mOE = _accumulate(state, x, r, w, eloc, diagnostics)
    est = EnergyEstimate(float(e.real), err, n, batch.acceptance_rate, float(e.imag), dropped)
    return est, GradientEstimate(vec, est, mO, mOE)


def energy(state: HybridState, terms, mode: str = "exact_sum", n_samples: int = 10_000, seed=None,
           exact: ExactSum | None = None) -> EnergyEstimate:
    if mode == "exact_sum":
        return (exact or ExactSum(state, terms)).evaluate(state, with_gradient=False)[0]
    if mode == "sampled":
        return sampled_estimate(state, terms, n_samples, seed=seed, with_gradient=False)[0]
    raise ValueError(f"unknown mode {mode!r}")


def gradient(state: HybridState, terms, mode: str = "exact_sum", n_samples: int = 10_000, seed=None,
             exact: ExactSum | None = None, batch: SampleBatch | None = None) -> GradientEstimate:
    if mode == "exact_sum":
        return (exact or ExactSum(state, terms)).evaluate(state)[1]
    if mode == "sampled":
        return sampled_estimate(state, terms, n_samples, seed=seed, batch=batch)[1]
    raise ValueError(f"unknown mode {mode!r}")
