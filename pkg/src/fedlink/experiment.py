"""Glue between the building blocks: corpora, training cells, sweeps and run directories."""
from __future__ import annotations

import csv
import json
import logging
import math
import re
from pathlib import Path

import numpy as np

from . import neuralnet as nn
from .config import RunConfig
from .federation import (
    ClientForecast,
    TrainingResult,
    build_client,
    run_centralized,
    run_federated,
)
from .metrics import EvaluationReport, evaluate
from .seeding import derive_seed, stream
from .topology import Topology, brain_topology_path, load_topology
from .traffic_data import DataError, NodeSeries, SyntheticSpec, generate_synthetic, ingest_series, write_series

log = logging.getLogger(__name__)

MODES = {"fed": "federated", "federated": "federated", "central": "centralized", "centralized": "centralized"}
_NODE_FILE = re.compile(r"node_(\d+)\.csv$")


def min_raw_length(config: RunConfig) -> int:
    """Shortest raw series that still yields a few windows at the largest (h, p)."""
    widest = max(max(config.h_values), config.h) + max(max(config.p_values), config.p)
    return (widest + 10) * config.resample_window


def corpus_lengths(config: RunConfig) -> list[int]:
    floor = min_raw_length(config)
    return [max(math.floor(n * config.scale), floor) for n in config.node_lengths]


def synthetic_specs(config: RunConfig, seed: int | None = None) -> list[SyntheticSpec]:
    """Heterogeneous per-node profiles: hourly series with a 24-sample daily cycle.

    Levels vary across nodes so that link loads differ; noise, daily swing,
    slow wander and spikes scale with the level.
    """
    root = config.seeds[0] if seed is None else seed
    prof = stream(root, "profile")
    specs = []
    for k, length in enumerate(corpus_lengths(config), start=1):
        base = 100.0 * (0.5 + 1.5 * prof.random())
        specs.append(
            SyntheticSpec(
                length=length,
                base_level=base,
                diurnal_amplitude=0.3 * base,
                diurnal_period_samples=24,
                trend_per_sample=0.0,
                noise_std=0.15 * base,
                spike_probability=0.005,
                spike_magnitude=2.0 * base,
                seed=derive_seed(root, "synthetic", k),
                wander_std=0.2 * base,
                wander_timescale=240.0,
            )
        )
    return specs


def synthetic_corpus(config: RunConfig, seed: int | None = None) -> list[NodeSeries]:
    return [generate_synthetic(spec, node_id=k) for k, spec in enumerate(synthetic_specs(config, seed), start=1)]


def write_corpus(series: list[NodeSeries], data_dir) -> list[Path]:
    data_dir = Path(data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for s in series:
        path = data_dir / f"node_{s.node_id}.csv"
        write_series(s, path)
        paths.append(path)
    return paths


def load_corpus(data_dir) -> list[NodeSeries]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"data directory not found: {data_dir}")
    found = []
    for path in data_dir.iterdir():
        m = _NODE_FILE.search(path.name)
        if m:
            found.append((int(m.group(1)), path))
    if not found:
        raise DataError(f"no node_<k>.csv files in {data_dir}")
    return [ingest_series(path, node) for node, path in sorted(found)]


def resolve_topology(config: RunConfig) -> Topology:
    path = brain_topology_path() if config.topology is None else Path(config.topology)
    return load_topology(path, config.topology_mode)


def build_clients(series: list[NodeSeries], h: int, p: int, config: RunConfig):
    return [
        build_client(s, h, p, config.preprocess_config(), config.split_spec(), config.scaler_scope, config.weight_by)
        for s in series
    ]


def train_cell(series, h: int, p: int, mode: str, config: RunConfig, seed: int | None = None,
               on_round=None) -> TrainingResult:
    mode = MODES[mode]
    clients = build_clients(series, h, p, config)
    runner = run_federated if mode == "federated" else run_centralized
    return runner(clients, h, p, config.train_config(seed), on_round=on_round)


def run_dir(config: RunConfig, mode: str, h: int, p: int, seed: int) -> Path:
    return Path(config.output_dir) / "runs" / f"{MODES[mode]}_h{h}_p{p}_s{seed}"


def save_run(result: TrainingResult, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    nn.save_weights(result.model, directory / "weights.csv")
    with (directory / "history.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "train_loss", "val_loss"])
        for r, tl, vl in result.history.rows():
            w.writerow([r, repr(float(tl)), repr(float(vl))])
    pred_dir = directory / "predictions"
    pred_dir.mkdir(exist_ok=True)
    for node, fc in sorted(result.forecasts.items()):
        write_forecast(fc, pred_dir / f"node_{node}.csv")
    (directory / "meta.json").write_text(json.dumps({"mode": result.mode, "rounds": len(result.history)}) + "\n")


def write_forecast(fc: ClientForecast, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "step", "predicted", "actual"])
        for i in range(fc.predicted.shape[0]):
            for t in range(fc.predicted.shape[1]):
                w.writerow([int(fc.offsets[i]), t + 1, repr(float(fc.predicted[i, t])), repr(float(fc.actual[i, t]))])


def read_forecasts(directory) -> dict[int, ClientForecast]:
    pred_dir = Path(directory) / "predictions"
    if not pred_dir.is_dir():
        raise DataError(f"no prediction dumps under {directory}")
    out = {}
    for path in sorted(pred_dir.iterdir()):
        m = _NODE_FILE.search(path.name)
        if not m:
            continue
        node = int(m.group(1))
        with path.open() as fh:
            rows = list(csv.DictReader(fh))
        windows = sorted({int(r["window"]) for r in rows})
        steps = max(int(r["step"]) for r in rows)
        pos = {wdx: i for i, wdx in enumerate(windows)}
        pred = np.zeros((len(windows), steps))
        act = np.zeros((len(windows), steps))
        for r in rows:
            i, t = pos[int(r["window"])], int(r["step"]) - 1
            pred[i, t] = float(r["predicted"])
            act[i, t] = float(r["actual"])
        out[node] = ClientForecast(node, np.array(windows), pred, act)
    if not out:
        raise DataError(f"no prediction dumps under {directory}")
    return out


def evaluate_saved(series, config: RunConfig, mode: str, h: int, p: int, seed: int) -> EvaluationReport:
    """Rebuild test windows from the data and score the stored weights on them."""
    weights = run_dir(config, mode, h, p, seed) / "weights.csv"
    if not weights.is_file():
        raise DataError(f"missing trained weights: {weights}")
    model = nn.load_weights(weights)
    if (model.h, model.p) != (h, p):
        raise DataError(f"{weights} was trained for h={model.h}, p={model.p}")
    forecasts = {}
    for c in build_clients(series, h, p, config):
        pred = c.scaler.inverse(nn.predict(model, c.test.inputs))
        forecasts[c.node_id] = (pred, c.scaler.inverse(c.test.targets))
    return evaluate(forecasts, MODES[mode], h, p, seed=seed)


def sweep(series, config: RunConfig, mode: str = "federated", cells=None, seed: int | None = None,
          progress=None) -> dict[tuple[int, int], tuple[TrainingResult, EvaluationReport]]:
    """Train and score every (h, p) cell in memory."""
    cells = config.cells(sweep=True) if cells is None else cells
    seed = config.seeds[0] if seed is None else seed
    out = {}
    for h, p in cells:
        result = train_cell(series, h, p, mode, config, seed)
        report = evaluate(result.forecasts, MODES[mode], h, p, seed=seed)
        out[(h, p)] = (result, report)
        if progress is not None:
            progress(h, p, report)
    return out
