"""Lattice symmetry groups, sector characters and symmetric bases.

A group element acts on a configuration by moving the spin on site ``i`` to
site ``perm[i]`` and then, if ``flip`` is set, complementing every bit.
The symmetric basis state labelled by a representative ``r`` is

    |r_symm> = N_r^{-1/2} sum_g conj(chi(g)) g|r>

so a sector state obeys ``g|psi> = chi(g)|psi>``.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .model import Lattice

__all__ = [
    "GroupElement",
    "SectorSpec",
    "SymmetryGroup",
    "RepresentativeState",
    "SectorBasis",
    "apply_element",
    "build_group",
    "close_group",
    "chain_generators",
    "torus_generators",
    "trivial_group",
    "representative",
    "norm_squared",
    "enumerate_sector_basis",
    "magnetization",
    "ENUMERATION_LIMIT",
]

ENUMERATION_LIMIT = 36
_TOL = 1e-9


def _as_u64(configs) -> np.ndarray:
    return np.atleast_1d(np.asarray(configs, dtype=np.uint64))


def full_mask(n_sites: int) -> np.uint64:
    return np.uint64((1 << n_sites) - 1)


def magnetization(configs, n_sites: int):
    """Total S^z, i.e. ``(#up - #down) / 2``."""
    downs = np.bitwise_count(_as_u64(configs)).astype(np.int64)
    out = (n_sites - 2 * downs) / 2
    return out if np.ndim(configs) else float(out[0])


@dataclass(frozen=True)
class GroupElement:
    perm: tuple[int, ...]
    flip: bool = False

    def __post_init__(self):
        if sorted(self.perm) != list(range(len(self.perm))):
            raise ValueError("site map is not a bijection")

    @classmethod
    def identity(cls, n_sites: int) -> "GroupElement":
        return cls(tuple(range(n_sites)), False)

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        # (self @ other) acts as other first, then self
        return GroupElement(tuple(self.perm[p] for p in other.perm), self.flip ^ other.flip)

    def inverse(self) -> "GroupElement":
        inv = [0] * len(self.perm)
        for i, p in enumerate(self.perm):
            inv[p] = i
        return GroupElement(tuple(inv), self.flip)


def apply_element(g: GroupElement, a: int) -> int:
    out = 0
    for i, p in enumerate(g.perm):
        if (a >> i) & 1:
            out |= 1 << p
    if g.flip:
        out ^= (1 << len(g.perm)) - 1
    return out


@dataclass(frozen=True)
class SectorSpec:
    """Quantum numbers of a symmetry sector.

    ``momentum`` holds ``k`` (chain) or ``(kx, ky)`` (torus); ``parities``
    holds ``(p,)`` or ``(px, py, s1, s2)``; ``z`` is the spin-inversion
    eigenvalue. Any of them may be ``None`` to leave that symmetry out.
    ``m`` is the target total S^z (``None`` disables S^z filtering).
    """

    momentum: tuple[float, ...] | None = None
    parities: tuple[int, ...] | None = None
    z: int | None = None
    m: float | None = 0.0

    def __post_init__(self):
        if self.momentum is not None:
            for k in self.momentum:
                if not (math.isclose(k, 0.0, abs_tol=1e-12) or math.isclose(k, math.pi, rel_tol=1e-12)):
                    raise ValueError(f"only momenta 0 and pi are supported, got {k}")
        for p in (self.parities or ()):
            if p not in (1, -1):
                raise ValueError(f"parities must be +1 or -1, got {p}")
        if self.z is not None:
            if self.z not in (1, -1):
                raise ValueError(f"inversion eigenvalue must be +1 or -1, got {self.z}")
            if self.m is None or self.m != 0:
                raise ValueError("spin inversion is only a symmetry of the m=0 sector")

    def to_dict(self) -> dict:
        return {
            "momentum": None if self.momentum is None else [float(k) for k in self.momentum],
            "parities": None if self.parities is None else list(self.parities),
            "z": self.z,
            "m": self.m,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SectorSpec":
        mom = d.get("momentum")
        par = d.get("parities")
        return cls(
            None if mom is None else tuple(float(k) for k in mom),
            None if par is None else tuple(int(p) for p in par),
            d.get("z"),
            d.get("m"),
        )

    def trivial(self) -> "SectorSpec":
        """Same magnetization, no spatial or inversion symmetry."""
        return SectorSpec(None, None, None, self.m)


class SymmetryGroup:
    """Closed group of site permutations (+ optional inversion) with sector characters.

    Elements are stored in breadth-first closure order starting from the
    identity; that order fixes which element ``representative`` returns on ties.
    """

    def __init__(self, n_sites: int, elements: Sequence[GroupElement], chars: Sequence[complex]):
        self.n_sites = n_sites
        self.elements = list(elements)
        self.perms = np.array([e.perm for e in self.elements], dtype=np.int64).reshape(-1, n_sites)
        self.flips = np.array([e.flip for e in self.elements], dtype=bool)
        self.chars = np.asarray(chars, dtype=np.complex128)
        self._weights = (np.uint64(1) << self.perms.astype(np.uint64)).T.copy()  # (N, G)
        self._flip_xor = np.where(self.flips, full_mask(n_sites), np.uint64(0)).astype(np.uint64)

    @property
    def order(self) -> int:
        return len(self.elements)

    @property
    def is_real(self) -> bool:
        return bool(np.all(np.abs(self.chars.imag) < 1e-14))

    def images(self, configs) -> np.ndarray:
        """All images ``g.a``; shape ``(len(configs), order)``."""
        a = _as_u64(configs)
        bits = (a[:, None] >> np.arange(self.n_sites, dtype=np.uint64)) & np.uint64(1)
        out = bits @ self._weights
        return out ^ self._flip_xor[None, :]

    def representatives(self, configs) -> tuple[np.ndarray, np.ndarray]:
        """Orbit minima and the index of the first element reaching each."""
        img = self.images(configs)
        idx = np.argmin(img, axis=1)
        return img[np.arange(len(img)), idx], idx

    def representative(self, a: int) -> tuple[int, int]:
        r, g = self.representatives([a])
        return int(r[0]), int(g[0])

    def norms_squared(self, configs) -> np.ndarray:
        a = _as_u64(configs)
        img = self.images(a)
        stab = img == a[:, None]
        s = stab.astype(np.complex128) @ np.conj(self.chars)
        n_stab = stab.sum(axis=1)
        norm = (self.order / n_stab) * np.abs(s) ** 2
        norm[np.abs(s) < _TOL] = 0.0
        return norm

    def norm_squared(self, a: int) -> float:
        return float(self.norms_squared([a])[0])

    def orbit(self, a: int) -> np.ndarray:
        return np.unique(self.images([a])[0])

    def character(self, index) -> complex:
        return self.chars[index]

    def element_index(self, g: GroupElement) -> int:
        for i, e in enumerate(self.elements):
            if e == g:
                return i
        raise KeyError("element not in group")


def close_group(
    n_sites: int,
    generators: Sequence[tuple[GroupElement, complex]],
    max_order: int | None = None,
) -> SymmetryGroup:
    """Breadth-first closure of ``generators`` with multiplicative characters.

    Raises ``ValueError`` if the generator characters do not extend to a
    one-dimensional representation, or if the order exceeds ``max_order``.
    """
    e = GroupElement.identity(n_sites)
    found = {e: 1.0 + 0j}
    order = [e]
    queue = deque([e])
    while queue:
        h = queue.popleft()
        for gen, chi in generators:
            x = gen @ h
            c = chi * found[h]
            if x in found:
                if abs(found[x] - c) > 1e-10:
                    raise ValueError("sector characters are not a one-dimensional representation")
                continue
            found[x] = c
            order.append(x)
            queue.append(x)
            if max_order is not None and len(order) > max_order:
                raise ValueError(f"group order exceeds cap {max_order}")
    return SymmetryGroup(n_sites, order, [found[x] for x in order])


def trivial_group(n_sites: int) -> SymmetryGroup:
    return SymmetryGroup(n_sites, [GroupElement.identity(n_sites)], [1.0])


def _perm(lattice: Lattice, f) -> GroupElement:
    return GroupElement(tuple(lattice.site(*f(*lattice.coords(i))) for i in range(lattice.n_sites)))


def chain_generators(lattice: Lattice) -> dict[str, GroupElement]:
    """Translation ``T: i -> i+1`` and bond mirror ``P: i -> 1-i`` (about bond (0,1))."""
    return {
        "T": _perm(lattice, lambda x: (x + 1,)),
        "P": _perm(lattice, lambda x: (1 - x,)),
        "Z": GroupElement(tuple(range(lattice.n_sites)), True),
    }


def torus_generators(lattice: Lattice) -> dict[str, GroupElement]:
    """Tx, Ty; bond mirrors Px (x -> 1-x), Py (y -> 1-y); diagonal mirrors
    s1 ((x,y) -> (y,x)), s2 ((x,y) -> (-y,-x)); inversion Z."""
    return {
        "Tx": _perm(lattice, lambda x, y: (x + 1, y)),
        "Ty": _perm(lattice, lambda x, y: (x, y + 1)),
        "Px": _perm(lattice, lambda x, y: (1 - x, y)),
        "Py": _perm(lattice, lambda x, y: (x, 1 - y)),
        "s1": _perm(lattice, lambda x, y: (y, x)),
        "s2": _perm(lattice, lambda x, y: (-y, -x)),
        "Z": GroupElement(tuple(range(lattice.n_sites)), True),
    }


def build_group(lattice: Lattice, sector: SectorSpec) -> SymmetryGroup:
    """Group generated by the symmetries named in ``sector``, with its characters."""
    gens: list[tuple[GroupElement, complex]] = []
    if lattice.kind == "chain":
        table = chain_generators(lattice)
        if sector.momentum is not None:
            (k,) = sector.momentum
            gens.append((table["T"], np.exp(1j * k)))
        if sector.parities is not None:
            (p,) = sector.parities
            gens.append((table["P"], p))
    else:
        table = torus_generators(lattice)
        if sector.momentum is not None:
            kx, ky = sector.momentum
            gens += [(table["Tx"], np.exp(1j * kx)), (table["Ty"], np.exp(1j * ky))]
        if sector.parities is not None:
            px, py, s1, s2 = sector.parities
            gens += [(table["Px"], px), (table["Py"], py), (table["s1"], s1), (table["s2"], s2)]
    if sector.z is not None:
        gens.append((table["Z"], sector.z))
    # with real characters, snap e^{i pi} to exactly -1
    gens = [(g, complex(np.round(c.real)) if abs(np.imag(c)) < 1e-12 else c) for g, c in gens]
    return close_group(lattice.n_sites, gens, max_order=16 * lattice.n_sites)


def representative(a: int, group: SymmetryGroup) -> tuple[int, GroupElement]:
    r, gi = group.representative(a)
    return r, group.elements[gi]


def norm_squared(a: int, group: SymmetryGroup) -> float:
    return group.norm_squared(a)


@dataclass(frozen=True)
class RepresentativeState:
    config: int
    norm_sq: float
    orbit_size: int


class SectorBasis:
    """Sorted representatives of a sector; the index space of sector vectors."""

    def __init__(self, group: SymmetryGroup, configs: np.ndarray, norms: np.ndarray, orbit_sizes: np.ndarray, m):
        self.group = group
        self.configs = np.asarray(configs, dtype=np.uint64)
        self.norms = np.asarray(norms, dtype=np.float64)
        self.orbit_sizes = np.asarray(orbit_sizes, dtype=np.int64)
        self.m = m

    def __len__(self) -> int:
        return len(self.configs)

    def __iter__(self) -> Iterator[RepresentativeState]:
        for c, n, o in zip(self.configs, self.norms, self.orbit_sizes):
            yield RepresentativeState(int(c), float(n), int(o))

    def __getitem__(self, i) -> RepresentativeState:
        return RepresentativeState(int(self.configs[i]), float(self.norms[i]), int(self.orbit_sizes[i]))

    def index(self, configs) -> np.ndarray:
        """Positions of ``configs`` in the basis, ``-1`` where absent."""
        c = _as_u64(configs)
        pos = np.searchsorted(self.configs, c)
        pos = np.minimum(pos, max(len(self.configs) - 1, 0))
        ok = len(self.configs) > 0
        hit = (self.configs[pos] == c) if ok else np.zeros(len(c), bool)
        return np.where(hit, pos, -1)


def _configs_with_downs(n_sites: int, n_down: int | None) -> np.ndarray:
    if n_down is None:
        return np.arange(1 << n_sites, dtype=np.uint64)
    if n_down < 0 or n_down > n_sites:
        return np.zeros(0, dtype=np.uint64)
    if n_sites <= 26:
        allc = np.arange(1 << n_sites, dtype=np.uint64)
        return allc[np.bitwise_count(allc) == n_down]
    # Gosper's hack; only reached for large, sparse sectors
    count = math.comb(n_sites, n_down)
    if count > 50_000_000:
        raise ValueError(f"S^z sector has {count} configurations; too many to enumerate")
    out = np.empty(count, dtype=np.uint64)
    x = (1 << n_down) - 1
    for i in range(count):
        out[i] = x
        if x == 0:
            break
        c = x & -x
        r = x + c
        x = (((r ^ x) >> 2) // c) | r
    return out


def enumerate_sector_basis(
    n_sites: int,
    group: SymmetryGroup,
    m: float | None = 0.0,
    limit: int = ENUMERATION_LIMIT,
    chunk: int = 1 << 15,
) -> SectorBasis:
    """All representatives with magnetization ``m`` and nonzero sector norm, ascending."""
    if n_sites > limit:
        raise ValueError(f"{n_sites} sites exceeds the enumeration limit of {limit}")
    n_down = None
    if m is not None:
        twice = n_sites - 2 * m
        if abs(twice - round(twice)) > 1e-9 or round(twice) % 2:
            return SectorBasis(group, np.zeros(0), np.zeros(0), np.zeros(0), m)
        n_down = int(round(twice)) // 2
    candidates = _configs_with_downs(n_sites, n_down)
    reps, norms, sizes = [], [], []
    for start in range(0, len(candidates), chunk):
        c = candidates[start:start + chunk]
        img = group.images(c)
        is_rep = img.min(axis=1) == c
        c, img = c[is_rep], img[is_rep]
        stab = img == c[:, None]
        s = stab.astype(np.complex128) @ np.conj(group.chars)
        n_stab = stab.sum(axis=1)
        norm = (group.order / n_stab) * np.abs(s) ** 2
        keep = np.abs(s) >= _TOL
        reps.append(c[keep])
        norms.append(norm[keep])
        sizes.append(group.order // n_stab[keep])
    if reps:
        configs = np.concatenate(reps)
        order = np.argsort(configs)
        return SectorBasis(group, configs[order], np.concatenate(norms)[order], np.concatenate(sizes)[order], m)
    return SectorBasis(group, np.zeros(0), np.zeros(0), np.zeros(0), m)
