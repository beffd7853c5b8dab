"""Direct (Markov-chain free) sampling of ``|phi(a)|^2``.

Spins are drawn one at a time in block order. Blocks to the right of the
cursor are traced out through ``C C^dagger = 1``, which collapses each one
to the transfer map ``E_j = sum_g B_j[g] (x) conj(B_j[g])``; their products
are cached once per parameter set.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .ansatz import HybridState
from .symmetry import GroupElement, magnetization

__all__ = [
    "EnvironmentCache",
    "SampleRecord",
    "SampleBatch",
    "SamplingError",
    "transfer_matrix",
    "precompute_environments",
    "draw_sample",
    "draw_samples",
    "to_symmetric",
    "dump_samples",
    "ACCEPTED",
    "ZERO_NORM",
    "WRONG_MAGNETIZATION",
]

logger = logging.getLogger(__name__)

ACCEPTED, ZERO_NORM, WRONG_MAGNETIZATION, DEGENERATE = 0, 1, 2, 3
REASONS = {ACCEPTED: None, ZERO_NORM: "zero_norm", WRONG_MAGNETIZATION: "wrong_magnetization", DEGENERATE: "degenerate"}
CHUNK = 4096


class SamplingError(RuntimeError):
    pass


def transfer_matrix(B: np.ndarray) -> np.ndarray:
    """``sum_g B[:, g, :] (x) conj(B[:, g, :])`` as a ``(Dl^2, Dr^2)`` matrix."""
    Dl, chi, Dr = B.shape
    return np.einsum("agb,cgd->acbd", B, B.conj()).reshape(Dl * Dl, Dr * Dr)


@dataclass
class EnvironmentCache:
    """``right[i]`` is the normalised trace of blocks ``i+1..n-1`` as a ``(Dr, Dr)`` matrix;
    the true environment is ``exp(log_scale[i]) * right[i]``."""

    right: list
    log_scale: np.ndarray


def precompute_environments(state: HybridState) -> EnvironmentCache:
    n_b = len(state.tensors)
    right = [None] * n_b
    scale = np.zeros(n_b)
    R = np.ones((1, 1), dtype=np.complex128)
    acc = 0.0
    for i in reversed(range(n_b)):
        right[i] = R
        scale[i] = acc
        B = state.tensors[i]
        R = np.einsum("agb,bc,dgc->ad", B, R, B.conj())
        tr = np.trace(R).real
        if tr <= 0:
            raise SamplingError("state has vanishing norm")
        R = R / tr
        acc += np.log(tr)
    return EnvironmentCache(right, scale)


class SampleRecord(NamedTuple):
    a_real: int
    a_repr: int
    g: GroupElement | None
    accepted: bool
    rejection_reason: str | None


@dataclass
class SampleBatch:
    a_real: np.ndarray
    a_repr: np.ndarray
    g_index: np.ndarray
    status: np.ndarray

    @property
    def accepted(self) -> np.ndarray:
        return self.status == ACCEPTED

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted)) if len(self.status) else 0.0

    def __len__(self):
        return len(self.a_real)

    def record(self, k: int, group=None) -> SampleRecord:
        g = group.elements[int(self.g_index[k])] if group is not None else None
        return SampleRecord(
            int(self.a_real[k]), int(self.a_repr[k]), g, bool(self.status[k] == ACCEPTED), REASONS[int(self.status[k])]
        )

    @classmethod
    def concatenate(cls, parts) -> "SampleBatch":
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("a_real", "a_repr", "g_index", "status")))


def _sample_chunk(state: HybridState, cache: EnvironmentCache, n: int, rng: np.random.Generator):
    lat = state.lattice
    n_b, bsz = lat.n_blocks, lat.block_size
    cand = np.arange(1 << bsz)
    configs = np.zeros(n, dtype=np.uint64)
    left = np.ones((n, 1), dtype=np.complex128)
    ok = np.ones(n, dtype=bool)
    for i in range(n_b):
        C = state.isometries[i].matrix
        u = np.einsum("sl,lgr->sgr", left, state.tensors[i])
        psi = np.einsum("ga,sgr->sar", C, u)
        P = np.einsum("sar,rq,saq->sa", psi, cache.right[i], psi.conj()).real
        P = np.maximum(P, 0.0)
        prefix = np.zeros(n, dtype=np.int64)
        for k in range(bsz):
            low = (1 << k) - 1
            match = (cand[None, :] & low) == prefix[:, None]
            down = ((cand >> k) & 1).astype(bool)
            w_up = np.where(match & ~down[None, :], P, 0.0).sum(axis=1)
            w_dn = np.where(match & down[None, :], P, 0.0).sum(axis=1)
            tot = w_up + w_dn
            good = tot > 0
            ok &= good
            p_up = np.where(good, w_up / np.where(good, tot, 1.0), 1.0)
            spin = (rng.random(n) >= p_up).astype(np.int64)
            prefix |= spin << k
            configs |= spin.astype(np.uint64) << np.uint64(lat.block_layout[i][k])
        left = psi[np.arange(n), prefix]
        nrm = np.linalg.norm(left, axis=1)
        left = left / np.where(nrm > 0, nrm, 1.0)[:, None]
    return configs, ok


def _classify(state: HybridState, configs: np.ndarray, ok: np.ndarray) -> SampleBatch:
    group = state.group
    reps, gidx = group.representatives(configs) if len(configs) else (configs, np.zeros(0, int))
    status = np.full(len(configs), ACCEPTED, dtype=np.int8)
    if state.sector.m is not None:
        status[magnetization(configs, state.lattice.n_sites) != state.sector.m] = WRONG_MAGNETIZATION
    todo = status == ACCEPTED
    if np.any(todo):
        norms = group.norms_squared(configs[todo])
        sub = status[todo]
        sub[norms == 0] = ZERO_NORM
        status[todo] = sub
    status[~ok] = DEGENERATE
    return SampleBatch(configs, reps, gidx, status)


def draw_samples(
    state: HybridState,
    n: int,
    seed=None,
    cache: EnvironmentCache | None = None,
    threads: int = 1,
    acceptance_floor: float | None = None,
) -> SampleBatch:
    """Draw ``n`` independent configurations from ``|phi|^2`` and classify them.

    The stream is split into fixed-size chunks, each with its own child seed,
    so the output does not depend on ``threads``.
    """
    cache = precompute_environments(state) if cache is None else cache
    sizes = [min(CHUNK, n - s) for s in range(0, n, CHUNK)]
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))

    def work(k):
        return _sample_chunk(state, cache, sizes[k], np.random.default_rng(seeds[k]))

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, range(len(sizes))))
    else:
        parts = [work(k) for k in range(len(sizes))]
    if parts:
        configs = np.concatenate([p[0] for p in parts])
        ok = np.concatenate([p[1] for p in parts])
    else:
        configs, ok = np.zeros(0, np.uint64), np.zeros(0, bool)
    if not np.all(ok):
        logger.warning("%d samples aborted: vanishing conditional weight", int(np.sum(~ok)))
    batch = _classify(state, configs, ok)
    if acceptance_floor is not None and batch.acceptance_rate < acceptance_floor:
        logger.warning("acceptance rate %.3f below floor %.3f", batch.acceptance_rate, acceptance_floor)
    return batch


def draw_sample(state: HybridState, cache: EnvironmentCache, rng: np.random.Generator) -> SampleRecord:
    configs, ok = _sample_chunk(state, cache, 1, rng)
    if not ok[0]:
        raise SamplingError("total conditional weight vanished; degenerate state")
    return _classify(state, configs, ok).record(0, state.group)


def to_symmetric(record: SampleRecord) -> tuple[int, int]:
    """``(a_repr, a_real)`` for an accepted sample."""
    if not record.accepted:
        raise ValueError(f"sample was rejected ({record.rejection_reason})")
    return record.a_repr, record.a_real


def dump_samples(batch: SampleBatch, fh, n_sites: int) -> None:
    """One line per sample: ``a_real a_repr accepted``; bit strings print site N-1 first."""
    for a, r, s in zip(batch.a_real.tolist(), batch.a_repr.tolist(), batch.status.tolist()):
        fh.write(f"{a:0{n_sites}b} {r:0{n_sites}b} {int(s == ACCEPTED)}\n")
