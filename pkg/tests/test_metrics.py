import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedlink.metrics import (
    EvaluationReport,
    evaluate,
    format_grid,
    grid_axes,
    grid_from_reports,
    mse,
    r2_score,
    write_grid_csv,
)


def test_r2_perfect():
    assert r2_score([1, 2, 3], [1, 2, 3]) == 1.0


def test_r2_mean_prediction_is_zero():
    y = np.array([1.0, 4.0, 2.0, 9.0])
    assert r2_score(y, np.full(4, y.mean())) == pytest.approx(0.0, abs=1e-15)


def test_r2_hand_example():
    # mean 1.5, ss_tot = 2.25 + 0.25 + 0.25 + 2.25 = 5, ss_res = 4
    assert r2_score([0, 1, 2, 3], [0, 1, 2, 5]) == pytest.approx(0.2, abs=1e-15)


def test_r2_errors():
    with pytest.raises(ValueError, match="constant"):
        r2_score([2, 2, 2], [1, 2, 3])
    with pytest.raises(ValueError, match="mismatch"):
        r2_score([1, 2, 3], [1, 2])


def test_r2_flattens_multistep():
    y = np.arange(12.0).reshape(4, 3)
    pred = y + 0.5
    assert r2_score(y, pred) == pytest.approx(1 - 12 * 0.25 / np.sum((y - y.mean()) ** 2))


@settings(max_examples=50)
@given(st.lists(st.floats(-100, 100), min_size=3, max_size=40), st.floats(0.1, 10), st.floats(-5, 5))
def test_r2_affine_invariance(values, scale, shift):
    y = np.array(values)
    if np.ptp(y) < 1e-3:
        return
    pred = y[::-1]
    assert r2_score(scale * y + shift, scale * pred + shift) == pytest.approx(r2_score(y, pred), rel=1e-9, abs=1e-9)


def test_mse():
    assert mse([0, 0], [1, 3]) == 5.0


def test_evaluate_perfect_and_single():
    y = np.arange(10.0).reshape(5, 2)
    rep = evaluate({1: (y, y), 2: (y, y)}, "federated", 1, 2)
    assert rep.average_r2 == 1.0
    assert all(v["r2"] == 1.0 for v in rep.per_client.values())
    one = evaluate({7: (y + 1, y)}, "centralized", 1, 2)
    assert one.average_r2 == one.per_client[7]["r2"]


def test_report_csv_and_table(tmp_path):
    y = np.arange(10.0)
    rep = evaluate({1: (y, y), 2: (y + 1, y)}, "federated", 4, 8, seed=3)
    path = tmp_path / "r.csv"
    rep.write_csv(path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["node_id", "r2", "mse"]
    assert rows[-1][0] == "avg" and float(rows[-1][1]) == pytest.approx(rep.average_r2)
    assert "Avg" in rep.format_table()


def _rep(h, p, r2, seed):
    return EvaluationReport(h, p, "federated", {1: {"r2": r2, "mse": 0.0}}, seed)


def test_grid_mean_over_seeds_and_axes(tmp_path):
    reps = [_rep(h, p, 1.0 - 0.01 * h - 0.02 * p + 0.001 * s, s)
            for h in (1, 4, 8, 12) for p in (1, 4, 8, 12) for s in (0, 1)]
    grid = grid_from_reports(reps)
    assert len(grid) == 16
    assert grid[(1, 1)] == pytest.approx(1.0 - 0.03 + 0.0005)
    assert grid_axes(grid) == ([12, 8, 4, 1], [12, 8, 4, 1])
    path = tmp_path / "g.csv"
    write_grid_csv(grid, path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["h\\p", "12", "8", "4", "1"]
    assert [r[0] for r in rows[1:]] == ["12", "8", "4", "1"]
    assert float(rows[4][4]) == pytest.approx(grid[(1, 1)])
    assert format_grid(grid).splitlines()[0].split() == ["h\\p", "12", "8", "4", "1"]


def test_single_cell_grid(tmp_path):
    grid = grid_from_reports([_rep(1, 1, 0.9, 0)])
    write_grid_csv(grid, tmp_path / "g.csv")
    assert len(list(csv.reader((tmp_path / "g.csv").open()))) == 2
