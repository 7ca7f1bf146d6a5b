"""R^2 / MSE per client and the averaged reporting used for the (h, p) grids."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def r2_score(y_true, y_pred) -> float:
    """Coefficient of determination over the flattened inputs."""
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.size} vs {y_pred.size}")
    if y_true.size < 2:
        raise ValueError("r2_score needs at least two samples")
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("r2_score is undefined for a constant y_true")
    ss_res = float(np.sum((y_true - y_pred) ** 2))
    return 1.0 - ss_res / ss_tot


def mse(y_true, y_pred) -> float:
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.size} vs {y_pred.size}")
    return float(np.mean((y_true - y_pred) ** 2))


@dataclass
class EvaluationReport:
    h: int
    p: int
    mode: str
    per_client: dict[int, dict[str, float]] = field(default_factory=dict)
    seed: int | None = None

    @property
    def average_r2(self) -> float:
        return float(np.mean([v["r2"] for _, v in sorted(self.per_client.items())]))

    @property
    def average_mse(self) -> float:
        return float(np.mean([v["mse"] for _, v in sorted(self.per_client.items())]))

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_id", "r2", "mse"])
            for node, v in sorted(self.per_client.items()):
                w.writerow([node, repr(float(v["r2"])), repr(float(v["mse"]))])
            w.writerow(["avg", repr(float(self.average_r2)), repr(float(self.average_mse))])

    def format_table(self) -> str:
        nodes = sorted(self.per_client)
        head = f"{'h':>3} {'p':>3} {'mode':<12}" + "".join(f"{'C' + str(n):>8}" for n in nodes) + f"{'Avg':>8}"
        row = f"{self.h:>3} {self.p:>3} {self.mode:<12}" + "".join(
            f"{self.per_client[n]['r2']:>8.3f}" for n in nodes
        ) + f"{self.average_r2:>8.3f}"
        return head + "\n" + row


def evaluate(forecasts, mode: str, h: int, p: int, seed: int | None = None) -> EvaluationReport:
    """Score each client's (predicted, actual) windows in original units.

    ``forecasts`` maps node id to an object with ``predicted`` and ``actual``
    arrays, or to a (predicted, actual) pair.
    """
    if not forecasts:
        raise ValueError("no clients to evaluate")
    report = EvaluationReport(h, p, mode, seed=seed)
    for node, fc in sorted(forecasts.items()):
        pred, actual = (fc.predicted, fc.actual) if hasattr(fc, "predicted") else fc
        report.per_client[node] = {"r2": r2_score(actual, pred), "mse": mse(actual, pred)}
    return report


def grid_from_reports(reports) -> dict[tuple[int, int], float]:
    """Mean-over-seeds average R^2 per (h, p)."""
    cells: dict[tuple[int, int], list[float]] = {}
    for rep in reports:
        cells.setdefault((rep.h, rep.p), []).append(rep.average_r2)
    return {key: float(np.mean(vals)) for key, vals in cells.items()}


def grid_axes(grid) -> tuple[list[int], list[int]]:
    """Row (h) and column (p) labels, both largest first."""
    return sorted({k[0] for k in grid}, reverse=True), sorted({k[1] for k in grid}, reverse=True)


def write_grid_csv(grid: dict[tuple[int, int], float], path) -> None:
    """Rows are h, columns p; missing cells stay blank."""
    hs, ps = grid_axes(grid)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["h\\p"] + ps)
        for h in hs:
            w.writerow([h] + [repr(float(grid[(h, p)])) if (h, p) in grid else "" for p in ps])


def format_grid(grid: dict[tuple[int, int], float]) -> str:
    hs, ps = grid_axes(grid)
    lines = ["h\\p " + "".join(f"{p:>8}" for p in ps)]
    for h in hs:
        lines.append(f"{h:>4}" + "".join(f"{grid[(h, p)]:>8.3f}" if (h, p) in grid else f"{'-':>8}" for p in ps))
    return "\n".join(lines)
