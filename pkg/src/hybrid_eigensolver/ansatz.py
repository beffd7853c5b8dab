"""Block-isometry wavefunction bridged by an open-chain MPS.

Real-space amplitude of a configuration ``a`` with block states ``a_1..a_n``::

    phi(a) = prod_i  sum_g B_i[:, g, :] C_i[g, a_i]

with ``B_i`` of shape ``(D_left, chi, D_right)`` (``D_left = 1`` on the
first block, ``D_right = 1`` on the last) and ``C_i`` a fixed isometry.
The symmetric-basis amplitude of a representative ``r`` has modulus
``sqrt(sum_{a in orbit(r)} |phi(a)|^2)`` and the phase of ``phi(r)``.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .exact import Isometry
from .model import Lattice, build_lattice
from .symmetry import SectorSpec, SymmetryGroup, build_group, trivial_group

__all__ = [
    "HybridState",
    "LogDerivatives",
    "OrbitTable",
    "parameter_count",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
]


def parameter_count(n_sites: int, b: int, chi: int, D: int) -> int:
    """``2*chi*D + (n_b - 2)*chi*D^2`` with ``n_b = N/b``."""
    if b < 1 or n_sites % b:
        raise ValueError(f"N={n_sites} not divisible by b={b}")
    n_b = n_sites // b
    if n_b < 2:
        raise ValueError("need at least two blocks")
    if chi < 1 or D < 1:
        raise ValueError("chi and D must be positive")
    return 2 * chi * D + (n_b - 2) * chi * D * D


class LogDerivatives(NamedTuple):
    """Wirtinger derivatives ``d/d theta*`` of ``Re ln phi(a_real)`` and ``Im ln phi(a_repr)``."""

    real: np.ndarray
    phase: np.ndarray

    @property
    def combined(self) -> np.ndarray:
        """``d ln(phi~)^* / d theta*`` with ``ln phi~ = Re ln phi(a_real) + i Im ln phi(a_repr)``."""
        return self.real - 1j * self.phase


@dataclass
class _Contraction:
    log_phi: np.ndarray  # (M,) complex, -inf real part where phi == 0
    vecs: list  # per block (M, chi)
    left: list  # per block (M, Dl), normalised
    right: list  # per block (M, Dr), normalised
    dens: list  # per block (M,), left . A . right with the same normalisation


class OrbitTable(NamedTuple):
    """Distinct orbit members of a batch of representatives.

    ``configs[k]`` belongs to representative ``owner[k]``; ``is_rep`` marks
    the representative itself inside its orbit.
    """

    configs: np.ndarray
    owner: np.ndarray
    is_rep: np.ndarray


class HybridState:
    """MPS tensors plus frozen block isometries, optionally tied to a symmetry sector."""

    def __init__(
        self,
        lattice: Lattice,
        tensors: Sequence[np.ndarray],
        isometries: Isometry | Sequence[Isometry],
        sector: SectorSpec | None = None,
        group: SymmetryGroup | None = None,
    ):
        self.lattice = lattice
        n_b = lattice.n_blocks
        if n_b < 2:
            raise ValueError("the MPS backbone needs at least two blocks")
        if isinstance(isometries, Isometry):
            isometries = [isometries] * n_b
        if len(isometries) != n_b or len(tensors) != n_b:
            raise ValueError("need one tensor and one isometry per block")
        self.isometries = list(isometries)
        self.tensors = [np.ascontiguousarray(t, dtype=np.complex128) for t in tensors]
        chi = self.isometries[0].chi
        for i, (t, c) in enumerate(zip(self.tensors, self.isometries)):
            if c.block_dim != 1 << lattice.block_size:
                raise ValueError(f"isometry {i} acts on {c.block_dim} states, block has {1 << lattice.block_size}")
            if t.ndim != 3 or t.shape[1] != c.chi:
                raise ValueError(f"tensor {i} has shape {t.shape}, expected (Dl, {c.chi}, Dr)")
            if i > 0 and t.shape[0] != self.tensors[i - 1].shape[2]:
                raise ValueError(f"bond mismatch between blocks {i - 1} and {i}")
        if self.tensors[0].shape[0] != 1 or self.tensors[-1].shape[2] != 1:
            raise ValueError("boundary tensors must have trivial outer bonds")
        if not all(np.all(np.isfinite(t)) for t in self.tensors):
            raise ValueError("non-finite tensor entries")
        self.sector = sector if sector is not None else SectorSpec(m=None)
        self.group = group if group is not None else (
            build_group(lattice, self.sector) if sector is not None else trivial_group(lattice.n_sites)
        )
        D = self.bond_dim
        if self.shared_isometry and all(
            t.shape[0] in (1, D) and t.shape[2] in (1, D) for t in self.tensors
        ):
            expected = parameter_count(lattice.n_sites, lattice.block_size, chi, D)
            assert self.n_params == expected, (self.n_params, expected)
        weights = np.zeros((lattice.n_sites, n_b), dtype=np.int64)
        for blk, sites in enumerate(lattice.block_layout):
            for k, s in enumerate(sites):
                weights[s, blk] = 1 << k
        self._block_weights = weights

    # -- construction -------------------------------------------------
    @classmethod
    def random(
        cls,
        lattice: Lattice,
        isometry: Isometry | Sequence[Isometry],
        D: int,
        sector: SectorSpec | None = None,
        seed=None,
        group: SymmetryGroup | None = None,
    ) -> "HybridState":
        """Complex Gaussian entries of scale ``1/sqrt(D)``."""
        rng = np.random.default_rng(seed)
        n_b = lattice.n_blocks
        isos = [isometry] * n_b if isinstance(isometry, Isometry) else list(isometry)
        tensors = []
        for i in range(n_b):
            shape = (1 if i == 0 else D, isos[i].chi, 1 if i == n_b - 1 else D)
            z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
            tensors.append(z / np.sqrt(2 * D))
        return cls(lattice, tensors, isos, sector, group)

    @classmethod
    def from_dense(
        cls,
        lattice: Lattice,
        psi: np.ndarray,
        sector: SectorSpec | None = None,
        group: SymmetryGroup | None = None,
        cutoff: float = 1e-14,
    ) -> "HybridState":
        """Exact embedding of a dense state: identity isometries, MPS by sequential SVD."""
        N, b, n_b = lattice.n_sites, lattice.block_size, lattice.n_blocks
        t = np.asarray(psi, dtype=np.complex128).reshape((2,) * N)
        axes = [N - 1 - s for blk in lattice.block_layout for s in reversed(blk)]
        rest = t.transpose(axes).reshape(-1)
        tensors = []
        Dl = 1
        for i in range(n_b - 1):
            mat = rest.reshape(Dl * (1 << b), -1)
            u, s, vh = np.linalg.svd(mat, full_matrices=False)
            keep = max(1, int(np.sum(s > cutoff * s[0]))) if s[0] > 0 else 1
            tensors.append(u[:, :keep].reshape(Dl, 1 << b, keep))
            rest = s[:keep, None] * vh[:keep]
            Dl = keep
        tensors.append(rest.reshape(Dl, 1 << b, 1))
        D = max(t.shape[2] for t in tensors[:-1])
        # pad to a uniform bond dimension
        padded = []
        for i, T in enumerate(tensors):
            dl = 1 if i == 0 else D
            dr = 1 if i == n_b - 1 else D
            P = np.zeros((dl, T.shape[1], dr), dtype=np.complex128)
            P[: T.shape[0], :, : T.shape[2]] = T
            padded.append(P)
        return cls(lattice, padded, Isometry.identity(1 << b), sector, group)

    def replace(self, tensors=None, group: SymmetryGroup | None = None, sector: SectorSpec | None = None) -> "HybridState":
        return HybridState(
            self.lattice,
            self.tensors if tensors is None else tensors,
            self.isometries,
            self.sector if sector is None else sector,
            self.group if group is None else group,
        )

    def with_trivial_group(self) -> "HybridState":
        return self.replace(group=trivial_group(self.lattice.n_sites), sector=self.sector.trivial())

    def grow_bond(self, D_new: int, noise: float = 1e-3, seed=None) -> "HybridState":
        """Zero-pad every internal bond to ``D_new`` and add complex noise of size ``noise``."""
        if D_new < self.bond_dim:
            raise ValueError("cannot shrink the bond dimension")
        rng = np.random.default_rng(seed)
        n_b = len(self.tensors)
        out = []
        for i, T in enumerate(self.tensors):
            shape = (1 if i == 0 else D_new, T.shape[1], 1 if i == n_b - 1 else D_new)
            P = noise * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
            P[: T.shape[0], :, : T.shape[2]] += T
            out.append(P)
        return self.replace(tensors=out)

    # -- parameters ---------------------------------------------------
    @property
    def bond_dim(self) -> int:
        return max(max(t.shape[0], t.shape[2]) for t in self.tensors)

    @property
    def chi(self) -> int:
        return self.isometries[0].chi

    @property
    def shared_isometry(self) -> bool:
        return all(c is self.isometries[0] for c in self.isometries)

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.tensors)

    @property
    def parameters(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors])

    def unflatten(self, vec: np.ndarray) -> list[np.ndarray]:
        out, pos = [], 0
        for t in self.tensors:
            out.append(np.asarray(vec[pos:pos + t.size]).reshape(t.shape))
            pos += t.size
        return out

    def with_parameters(self, vec: np.ndarray) -> "HybridState":
        return self.replace(tensors=self.unflatten(vec))

    def describe(self) -> dict:
        L = self.lattice
        return {
            "N": L.n_sites, "b": L.block_size, "n_b": L.n_blocks,
            "chi": self.chi, "D": self.bond_dim, "n_params": self.n_params,
        }

    # -- contractions -------------------------------------------------
    def block_states(self, configs) -> np.ndarray:
        a = np.atleast_1d(np.asarray(configs, dtype=np.uint64))
        bits = ((a[:, None] >> np.arange(self.lattice.n_sites, dtype=np.uint64)) & np.uint64(1)).astype(np.int64)
        return bits @ self._block_weights

    def _contract(self, configs, environments: bool = False) -> _Contraction:
        idx = self.block_states(configs)
        M = len(idx)
        n_b = len(self.tensors)
        vecs = [self.isometries[i].matrix[:, idx[:, i]].T for i in range(n_b)]
        mats = []
        for i in range(n_b):
            Dl, chi, Dr = self.tensors[i].shape
            flat = self.tensors[i].transpose(1, 0, 2).reshape(chi, Dl * Dr)
            mats.append((vecs[i] @ flat).reshape(M, Dl, Dr))
        log_scale = np.zeros(M)
        left = [None] * n_b
        v = np.ones((M, 1), dtype=np.complex128)
        for i in range(n_b):
            left[i] = v
            v = np.matmul(v[:, None, :], mats[i])[:, 0, :]
            nrm = np.sqrt(np.sum(v.real ** 2 + v.imag ** 2, axis=1))
            safe = np.where(nrm > 0, nrm, 1.0)
            v = v / safe[:, None]
            log_scale += np.log(safe)
        final = v[:, 0]
        with np.errstate(divide="ignore"):
            log_phi = log_scale + np.log(np.abs(final)) + 1j * np.angle(final)
        right = [None] * n_b
        dens = [None] * n_b
        if environments:
            w = np.ones((M, 1), dtype=np.complex128)
            for i in reversed(range(n_b)):
                right[i] = w
                w = np.matmul(mats[i], w[:, :, None])[:, :, 0]
                nrm = np.sqrt(np.sum(w.real ** 2 + w.imag ** 2, axis=1))
                w = w / np.where(nrm > 0, nrm, 1.0)[:, None]
            dens = [np.matmul(np.matmul(left[i][:, None, :], mats[i]), right[i][:, :, None])[:, 0, 0] for i in range(n_b)]
        return _Contraction(log_phi, vecs, left, right, dens)

    def log_amplitude_real(self, configs) -> np.ndarray:
        """``ln phi`` (complex); real part ``-inf`` where the amplitude vanishes."""
        out = self._contract(configs).log_phi
        return out if np.ndim(configs) else out[0]

    def amplitude_real(self, configs):
        lp = self.log_amplitude_real(configs)
        with np.errstate(invalid="ignore"):
            return np.where(np.isneginf(np.real(lp)), 0.0, np.exp(lp)) if np.ndim(lp) else (
                0.0 if np.isneginf(lp.real) else complex(np.exp(lp)))

    def contract(self, configs, environments: bool = True) -> _Contraction:
        return self._contract(configs, environments)

    def log_derivative_tensors(self, configs, coeffs, contraction: _Contraction | None = None) -> list[np.ndarray]:
        """``sum_m coeffs[..., m] * d ln phi(configs[m]) / d B_i`` for every block ``i``.

        ``ln phi`` is holomorphic in the tensor entries, so this is the
        ordinary complex derivative. ``coeffs`` may carry a leading axis to
        accumulate several weightings in one pass.
        """
        c = self._contract(configs, environments=True) if contraction is None else contraction
        coeffs = np.asarray(coeffs)
        lead = coeffs.shape[:-1]
        K = coeffs.reshape(-1, coeffs.shape[-1])
        out = []
        for i in range(len(self.tensors)):
            Dl, chi, Dr = self.tensors[i].shape
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = np.where(c.dens[i] != 0, 1.0 / c.dens[i], 0.0)
            lr = (c.left[i][:, :, None] * c.right[i][:, None, :]).reshape(-1, Dl * Dr) * inv[:, None]
            # (K, M) x (M, chi) x (M, Dl*Dr) -> (K, chi, Dl*Dr)
            kv = (K[:, :, None] * c.vecs[i][None]).transpose(0, 2, 1).reshape(-1, len(inv))
            acc = (kv @ lr).reshape(-1, chi, Dl, Dr).transpose(0, 2, 1, 3)
            out.append(acc.reshape(lead + (Dl, chi, Dr)))
        return out

    def log_derivative(self, configs) -> np.ndarray:
        """Holomorphic ``d ln phi / d theta`` per configuration; shape ``(M, n_params)``."""
        c = self._contract(configs, environments=True)
        blocks = []
        for i in range(len(self.tensors)):
            o = np.einsum("ml,mg,mr->mlgr", c.left[i], c.vecs[i], c.right[i])
            blocks.append(o.reshape(o.shape[0], -1) / c.dens[i][:, None])
        return np.concatenate(blocks, axis=1)

    def log_derivatives(self, a_real, a_repr) -> LogDerivatives:
        """Derivatives feeding the gradient for one sampled pair ``(a_real, a_repr)``.

        ``real`` is ``d Re ln phi(a_real) / d theta*`` and ``phase`` is
        ``d Im ln phi(a_repr) / d theta*``.
        """
        lp = self.log_amplitude_real([a_real, a_repr])
        if np.any(np.isneginf(lp.real)):
            raise ValueError("log-derivative undefined at a zero amplitude")
        O = self.log_derivative([a_real, a_repr])
        return LogDerivatives(0.5 * np.conj(O[0]), 0.5j * np.conj(O[1]))

    # -- symmetric basis ----------------------------------------------
    def orbit_table(self, reps) -> OrbitTable:
        reps = np.atleast_1d(np.asarray(reps, dtype=np.uint64))
        img = np.sort(self.group.images(reps), axis=1)
        distinct = np.ones(img.shape, dtype=bool)
        distinct[:, 1:] = img[:, 1:] != img[:, :-1]
        owner = np.broadcast_to(np.arange(len(reps))[:, None], img.shape)[distinct]
        is_rep = np.zeros(img.shape, dtype=bool)
        is_rep[:, 0] = True  # sorted rows start with the orbit minimum
        return OrbitTable(img[distinct], owner, is_rep[distinct])

    def log_amplitude_symm(self, reps, table: OrbitTable | None = None, log_phi=None) -> np.ndarray:
        """``ln psi`` for representatives: log of the orbit-summed weight, phase of ``phi(rep)``."""
        reps = np.atleast_1d(np.asarray(reps, dtype=np.uint64))
        table = self.orbit_table(reps) if table is None else table
        lp = self.log_amplitude_real(table.configs) if log_phi is None else log_phi
        re = 2 * lp.real
        top = np.full(len(reps), -np.inf)
        np.maximum.at(top, table.owner, re)
        shift = np.where(np.isfinite(top), top, 0.0)
        acc = np.zeros(len(reps))
        np.add.at(acc, table.owner, np.exp(re - shift[table.owner]))
        with np.errstate(divide="ignore"):
            log_mod = 0.5 * (np.log(acc) + shift)
        phase = np.zeros(len(reps))
        phase[table.owner[table.is_rep]] = lp.imag[table.is_rep]
        return log_mod + 1j * phase

    def amplitude_symm(self, a_repr: int) -> complex:
        """``psi(a_symm)``; requires ``a_repr`` to carry a nonzero sector norm."""
        if self.group.norm_squared(a_repr) == 0:
            raise ValueError(f"configuration {a_repr} has zero norm in this sector")
        lp = self.log_amplitude_symm([a_repr])[0]
        return 0.0 if np.isneginf(lp.real) else complex(np.exp(lp))


# -- checkpoints ------------------------------------------------------
MAGIC = b"HYBRIDMP"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(state: HybridState, path) -> None:
    """Little-endian binary checkpoint plus a JSON sidecar manifest.

    Layout: 8-byte magic, u32 version, u32 header length, UTF-8 JSON header
    (lattice, sector, tensor and isometry shapes), then every MPS tensor and
    every distinct isometry, row-major, as interleaved float64 (re, im).
    """
    path = Path(path)
    uniq: list[Isometry] = []
    iso_index = []
    for c in state.isometries:
        for k, u in enumerate(uniq):
            if u is c:
                iso_index.append(k)
                break
        else:
            iso_index.append(len(uniq))
            uniq.append(c)
    header = {
        "lattice": state.lattice.describe(),
        "sector": state.sector.to_dict(),
        "dims": state.describe(),
        "tensor_shapes": [list(t.shape) for t in state.tensors],
        "isometry_shapes": [list(c.matrix.shape) for c in uniq],
        "isometry_index": iso_index,
        "isometry_weights": [None if c.weights is None else np.asarray(c.weights).tolist() for c in uniq],
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(hbytes)))
    buf.write(hbytes)
    for arr in [*state.tensors, *(c.matrix for c in uniq)]:
        buf.write(np.ascontiguousarray(arr, dtype="<c16").tobytes())
    path.write_bytes(buf.getvalue())
    manifest = dict(header, format="hybrid-mps checkpoint", version=VERSION, file=path.name)
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(path, expected: dict | None = None) -> HybridState:
    """Inverse of ``save_checkpoint``; ``expected`` may pin dims such as ``{"D": 4}``."""
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a hybrid-mps checkpoint")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[16:16 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header") from exc
    for key, val in (expected or {}).items():
        if header["dims"].get(key) != val:
            raise CheckpointError(
                f"{path}: dimension mismatch, checkpoint has {key}={header['dims'].get(key)}, job expects {val}"
            )
    pos = 16 + hlen
    arrays = []
    for shape in header["tensor_shapes"] + header["isometry_shapes"]:
        n = int(np.prod(shape)) * 16
        if pos + n > len(raw):
            raise CheckpointError(f"{path}: corrupt checkpoint (truncated data)")
        arrays.append(np.frombuffer(raw[pos:pos + n], dtype="<c16").reshape(shape).astype(np.complex128))
        pos += n
    if pos != len(raw):
        raise CheckpointError(f"{path}: corrupt checkpoint (trailing bytes)")
    n_t = len(header["tensor_shapes"])
    uniq = [
        Isometry(m, None if w is None else np.asarray(w))
        for m, w in zip(arrays[n_t:], header["isometry_weights"])
    ]
    lat = header["lattice"]
    lattice = build_lattice(lat["kind"], tuple(lat["dims"]), tuple(lat["block"]) if lat["kind"] == "torus" else lat["block"][0])
    sector = SectorSpec.from_dict(header["sector"])
    return HybridState(lattice, arrays[:n_t], [uniq[k] for k in header["isometry_index"]], sector)
