"""Relative errors, 1/D extrapolation and result tables."""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import asdict, dataclass

import numpy as np

from .ansatz import parameter_count

__all__ = [
    "ExtrapolationResult",
    "relative_error",
    "extrapolate_inverse_D",
    "parameter_count",
    "write_table",
    "write_series",
    "PAPER_PARAMETER_COUNTS",
]

# (N, b, chi) -> parameters at D = 2, as quoted for the chain benchmarks
PAPER_PARAMETER_COUNTS = {
    (32, 4, 11): 308,
    (32, 8, 21): 252,
    (32, 4, 16): 448,
    (32, 8, 34): 408,
    (64, 4, 11): 660,
    (64, 8, 21): 588,
    (64, 4, 16): 960,
    (64, 8, 34): 952,
}


def relative_error(E: float, E_ref: float) -> float:
    if E_ref == 0:
        raise ZeroDivisionError("reference energy is zero")
    return abs((E - E_ref) / E_ref)


@dataclass
class ExtrapolationResult:
    points: list[tuple[int, float]]
    slope: float
    intercept: float
    residual: float

    @property
    def energy(self) -> float:
        return self.intercept

    def to_dict(self) -> dict:
        return asdict(self)


def extrapolate_inverse_D(points, errors=None, weighted: bool = False, n_largest: int = 3) -> ExtrapolationResult:
    """Least-squares line ``E = E_inf + slope/D`` through the ``n_largest`` largest distinct ``D``.

    Repeated ``D`` values are averaged first. ``residual`` is the root mean
    square deviation of the fitted points; no acceptance threshold is applied.
    With ``weighted`` the fit uses ``1/error^2`` weights.
    """
    groups = defaultdict(list)
    errs = defaultdict(list)
    for k, (D, E) in enumerate(points):
        groups[int(D)].append(float(E))
        if errors is not None:
            errs[int(D)].append(float(errors[k]))
    if len(groups) < n_largest:
        raise ValueError(f"need at least {n_largest} distinct bond dimensions, got {len(groups)}")
    Ds = sorted(groups)[-n_largest:]
    E = np.array([np.mean(groups[D]) for D in Ds])
    x = 1.0 / np.array(Ds, dtype=float)
    w = np.ones_like(x)
    if weighted:
        if errors is None:
            raise ValueError("weighted fit needs errors")
        sig = np.array([np.sqrt(np.sum(np.square(errs[D]))) / len(errs[D]) for D in Ds])
        w = 1.0 / np.maximum(sig, 1e-300) ** 2
    A = np.column_stack([np.ones_like(x), x]) * np.sqrt(w)[:, None]
    (c0, c1), *_ = np.linalg.lstsq(A, E * np.sqrt(w), rcond=None)
    res = float(np.sqrt(np.mean((E - (c0 + c1 * x)) ** 2)))
    return ExtrapolationResult([(D, float(e)) for D, e in zip(Ds, E)], float(c1), float(c0), res)


def write_table(rows: list[dict], path) -> None:
    if not rows:
        return
    keys = list(rows[0])
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(rows)


def write_series(points, n_sites: int, path, fit: ExtrapolationResult | None = None) -> None:
    """Plot-ready JSON: ``x = 1/D``, ``y = E/N`` (totals are converted only here)."""
    pts = sorted((int(D), float(E)) for D, E in points)
    out = {
        "x": [1.0 / D for D, _ in pts],
        "y": [E / n_sites for _, E in pts],
        "D": [D for D, _ in pts],
    }
    if fit is not None:
        out["fit"] = {"slope": fit.slope / n_sites, "intercept": fit.intercept / n_sites, "D_used": [D for D, _ in fit.points]}
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2)
