import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_eigensolver.analysis import (
    PAPER_PARAMETER_COUNTS,
    extrapolate_inverse_D,
    parameter_count,
    relative_error,
    write_series,
    write_table,
)


def test_relative_error():
    assert relative_error(-3.0, -3.0) == 0.0
    assert relative_error(-28.0, -28.0028) == pytest.approx(1.0e-4, rel=1e-3)
    E_ref = -6.5
    assert relative_error(-6.4, E_ref) == pytest.approx(relative_error(2 * E_ref + 6.4, E_ref))
    with pytest.raises(ZeroDivisionError):
        relative_error(1.0, 0.0)


def test_exact_linear_model_recovered():
    pts = [(D, -0.4438 + 0.013 / D) for D in (2, 3, 4, 5, 6)]
    fit = extrapolate_inverse_D(pts)
    assert fit.intercept == pytest.approx(-0.4438, abs=1e-12)
    assert fit.slope == pytest.approx(0.013, abs=1e-12)
    assert [D for D, _ in fit.points] == [4, 5, 6]
    assert fit.residual < 1e-14


def test_only_three_largest_used():
    # a wild point at small D must not move the fit
    pts = [(2, 100.0), (4, -1 + 0.5 / 4), (6, -1 + 0.5 / 6), (8, -1 + 0.5 / 8)]
    assert extrapolate_inverse_D(pts).intercept == pytest.approx(-1.0, abs=1e-12)


def test_duplicates_averaged():
    pts = [(2, -1.0), (2, -3.0), (3, -2.0), (4, -2.0)]
    fit = extrapolate_inverse_D(pts)
    assert dict(fit.points)[2] == -2.0
    assert fit.slope == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        extrapolate_inverse_D([(2, -1.0), (2, -1.1), (3, -1.2)])


def test_residual_reported_for_curved_data():
    pts = [(D, -1 + 0.3 / D**2) for D in range(2, 7)]
    fit = extrapolate_inverse_D(pts)
    assert fit.residual > 0
    assert fit.intercept < -1 + 1e-9 + 0.3 / 36


def test_weighted_fit():
    pts = [(4, -1.0 + 0.25), (5, -1.0 + 0.2), (6, -1.0 + 1 / 6 + 0.01)]
    plain = extrapolate_inverse_D(pts)
    heavy = extrapolate_inverse_D(pts, errors=[1e-4, 1e-4, 1.0], weighted=True)
    assert heavy.intercept == pytest.approx(-1.0, abs=1e-3)
    assert abs(plain.intercept + 1.0) > abs(heavy.intercept + 1.0)
    with pytest.raises(ValueError):
        extrapolate_inverse_D(pts, weighted=True)


@settings(max_examples=50, deadline=None)
@given(
    shift=st.floats(-10, 10),
    scale=st.floats(0.1, 10),
    noise=st.lists(st.floats(-1e-2, 1e-2), min_size=4, max_size=4),
)
def test_affine_equivariance(shift, scale, noise):
    pts = [(D, -1 + 0.2 / D + n) for D, n in zip((2, 3, 4, 5), noise)]
    base = extrapolate_inverse_D(pts).intercept
    shifted = extrapolate_inverse_D([(D, E + shift) for D, E in pts]).intercept
    scaled = extrapolate_inverse_D([(D, E * scale) for D, E in pts]).intercept
    assert shifted == pytest.approx(base + shift, abs=1e-9)
    assert scaled == pytest.approx(base * scale, abs=1e-9)


def test_parameter_counts_reexported():
    assert [parameter_count(N, b, chi, 2) for N, b, chi in PAPER_PARAMETER_COUNTS] == list(PAPER_PARAMETER_COUNTS.values())


def test_table_and_series(tmp_path):
    rows = [{"D": 2, "energy": -6.5}, {"D": 3, "energy": -6.55, "std_error": 0.01}]
    write_table(rows, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "D,energy,std_error"
    assert len(lines) == 3
    pts = [(2, -6.4), (3, -6.5), (4, -6.55)]
    fit = extrapolate_inverse_D(pts)
    write_series(pts, 16, tmp_path / "s.json", fit)
    data = json.loads((tmp_path / "s.json").read_text())
    assert np.allclose(data["x"], [1 / 2, 1 / 3, 1 / 4])
    assert np.allclose(data["y"], [E / 16 for _, E in pts])
    assert data["fit"]["intercept"] == pytest.approx(fit.intercept / 16)
