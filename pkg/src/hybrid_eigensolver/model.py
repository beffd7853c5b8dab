"""Lattices and the J1-J2 Heisenberg Hamiltonian.

Sites are integers ``0..N-1``. On the torus, site ``(x, y)`` has index
``x + L*y``. A spin configuration is an ``N``-bit integer whose bit ``i``
holds site ``i`` (0 = up, 1 = down).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Lattice",
    "HamiltonianTerm",
    "build_lattice",
    "hamiltonian_terms",
    "total_coupling",
]

MIN_CHAIN = 4
MIN_TORUS = 4


@dataclass(frozen=True)
class Lattice:
    """Periodic chain or square torus, partitioned into equal blocks.

    ``block_layout[i]`` lists the sites of block ``i`` along the MPS chain;
    inside a block, position ``k`` is bit ``k`` of the block state index.
    """

    kind: str
    dims: tuple[int, ...]
    nn_bonds: tuple[tuple[int, int], ...]
    nnn_bonds: tuple[tuple[int, int], ...]
    block_shape: tuple[int, ...]
    block_layout: tuple[tuple[int, ...], ...]

    @property
    def n_sites(self) -> int:
        return int(np.prod(self.dims))

    @property
    def block_size(self) -> int:
        return int(np.prod(self.block_shape))

    @property
    def n_blocks(self) -> int:
        return len(self.block_layout)

    def coords(self, site: int) -> tuple[int, ...]:
        if self.kind == "chain":
            return (site,)
        L = self.dims[0]
        return (site % L, site // L)

    def site(self, *xy: int) -> int:
        if self.kind == "chain":
            return xy[0] % self.dims[0]
        L = self.dims[0]
        return (xy[0] % L) + L * (xy[1] % L)

    def describe(self) -> dict:
        return {"kind": self.kind, "dims": list(self.dims), "block": list(self.block_shape)}


@dataclass(frozen=True)
class HamiltonianTerm:
    """Heisenberg exchange ``coupling * S_i . S_j``."""

    i: int
    j: int
    coupling: float = field(default=1.0)

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("a bond needs two distinct sites")
        if not np.isfinite(self.coupling):
            raise ValueError("coupling must be finite")

    @property
    def sites(self) -> tuple[int, int]:
        return (self.i, self.j)


def _dedup(pairs, label):
    seen = []
    found = set()
    for i, j in pairs:
        key = (min(i, j), max(i, j))
        if key in found:
            continue
        found.add(key)
        seen.append(key)
    if len(seen) < len(pairs):
        warnings.warn(
            f"{len(pairs) - len(seen)} duplicate wrap-around {label} bonds removed",
            stacklevel=3,
        )
    return tuple(seen)


def build_lattice(kind: str, dims, b) -> Lattice:
    """Construct a periodic lattice and its block partition.

    Parameters
    ----------
    kind : {"chain", "torus"}
    dims : int or tuple
        ``N`` for a chain, ``(L, L)`` for a torus.
    b : int or tuple
        Block size. On the torus either a tile shape ``(bx, by)`` or an int
        that is a perfect square (``4`` means ``2x2`` tiles).
    """
    if kind == "chain":
        N = int(dims[0] if isinstance(dims, (tuple, list)) else dims)
        if N < MIN_CHAIN:
            raise ValueError(f"chain needs at least {MIN_CHAIN} sites, got {N}")
        bsz = int(b[0] if isinstance(b, (tuple, list)) else b)
        if bsz < 1 or N % bsz:
            raise ValueError(f"N={N} is not divisible by block size {bsz}")
        nn = _dedup([(i, (i + 1) % N) for i in range(N)], "nearest-neighbour")
        nnn = _dedup([(i, (i + 2) % N) for i in range(N)], "next-nearest-neighbour")
        layout = tuple(tuple(range(k * bsz, (k + 1) * bsz)) for k in range(N // bsz))
        return Lattice("chain", (N,), nn, nnn, (bsz,), layout)

    if kind != "torus":
        raise ValueError(f"unknown lattice kind {kind!r}")
    dims = tuple(int(d) for d in (dims if isinstance(dims, (tuple, list)) else (dims, dims)))
    if len(dims) != 2 or dims[0] != dims[1]:
        raise ValueError(f"only square tori are supported, got {dims}")
    L = dims[0]
    if L < MIN_TORUS:
        raise ValueError(f"torus needs at least {MIN_TORUS}x{MIN_TORUS} sites, got {L}x{L}")
    if isinstance(b, (tuple, list)):
        bx, by = (int(v) for v in b)
    else:
        side = int(round(np.sqrt(int(b))))
        if side * side != int(b):
            raise ValueError(f"torus block size {b} is not a square tile")
        bx = by = side
    if L % bx or L % by:
        raise ValueError(f"{L}x{L} torus is not divisible into {bx}x{by} tiles")

    def s(x, y):
        return (x % L) + L * (y % L)

    nn, nnn = [], []
    for y in range(L):
        for x in range(L):
            nn += [(s(x, y), s(x + 1, y)), (s(x, y), s(x, y + 1))]
            nnn += [(s(x, y), s(x + 1, y + 1)), (s(x, y), s(x + 1, y - 1))]
    layout = []
    # boustrophedon over tile rows
    for ty in range(L // by):
        txs = range(L // bx) if ty % 2 == 0 else reversed(range(L // bx))
        for tx in txs:
            layout.append(
                tuple(s(tx * bx + dx, ty * by + dy) for dy in range(by) for dx in range(bx))
            )
    return Lattice(
        "torus",
        (L, L),
        _dedup(nn, "nearest-neighbour"),
        _dedup(nnn, "next-nearest-neighbour"),
        (bx, by),
        tuple(layout),
    )


def hamiltonian_terms(lattice: Lattice, J1: float = 1.0, g: float = 0.0) -> list[HamiltonianTerm]:
    """Two-site terms of ``J1 sum_nn S.S + g*J1 sum_nnn S.S``; zero couplings dropped."""
    terms = []
    for coupling, bonds in ((J1, lattice.nn_bonds), (g * J1, lattice.nnn_bonds)):
        if coupling == 0.0:
            continue
        terms.extend(HamiltonianTerm(i, j, float(coupling)) for i, j in bonds)
    return terms


def total_coupling(terms) -> float:
    return float(sum(abs(t.coupling) for t in terms))
