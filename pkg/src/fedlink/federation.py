"""FedAvg simulation over per-node clients, plus the pooled centralized baseline."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import neuralnet as nn
from .seeding import derive_seed, stream
from .traffic_data import NodeSeries, PreprocessConfig, Scaler, preprocess_pipeline
from .windowing import SplitSpec, WindowedDataset, make_windows, split_chronological, training_span

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    rounds: int = 50
    hidden_size: int = 64
    dropout: float = 0.2
    lr: float = 0.001
    batch_size: int = 256
    clip_norm: float | None = 5.0
    seed: int = 0
    jobs: int = 1


@dataclass
class ClientState:
    node_id: int
    train: WindowedDataset
    val: WindowedDataset
    test: WindowedDataset
    scaler: Scaler
    sample_count: int
    raw_length: int = 0

    def __post_init__(self):
        if self.sample_count <= 0:
            raise ValueError(f"client {self.node_id}: sample_count must be positive")


@dataclass
class RoundHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def append(self, train_loss: float, val_loss: float) -> None:
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise nn.DivergenceError(f"non-finite loss in round {len(self) + 1}")
        self.train_loss.append(float(train_loss))
        self.val_loss.append(float(val_loss))

    def rows(self):
        for r, (tl, vl) in enumerate(zip(self.train_loss, self.val_loss), start=1):
            yield r, tl, vl


@dataclass
class ClientForecast:
    """Multi-step test forecasts for one node, in original traffic units."""

    node_id: int
    offsets: np.ndarray
    predicted: np.ndarray  # (n_windows, p)
    actual: np.ndarray  # (n_windows, p)


@dataclass
class TrainingResult:
    model: nn.Seq2SeqModel
    history: RoundHistory
    forecasts: dict[int, ClientForecast]
    mode: str


def build_client(
    series: NodeSeries,
    h: int,
    p: int,
    preprocess: PreprocessConfig = PreprocessConfig(),
    split: SplitSpec = SplitSpec(),
    scaler_scope: str = "train",
    weight_by: str = "windows",
) -> ClientState:
    """Preprocess a raw hourly series and cut it into scaled train/val/test windows."""
    if scaler_scope not in ("train", "full"):
        raise ValueError(f"unknown scaler_scope {scaler_scope!r}")
    if weight_by not in ("windows", "raw_samples"):
        raise ValueError(f"unknown weight_by {weight_by!r}")
    # the smoothed length does not depend on scaling, so the fit span is known up front
    n_smoothed = len(series) // preprocess.resample_window
    fit_length = training_span(n_smoothed, h, p, split) if scaler_scope == "train" else None
    scaled, scaler = preprocess_pipeline(series, preprocess, fit_length)
    train, val, test = split_chronological(make_windows(scaled, h, p), split)
    count = len(train) if weight_by == "windows" else len(series)
    return ClientState(series.node_id, train, val, test, scaler, count, len(series))


def fedavg_aggregate(updates) -> np.ndarray:
    """Sample-weighted mean of client weight vectors, summed in the given order."""
    updates = list(updates)
    if not updates:
        raise ValueError("no client updates to aggregate")
    length = np.asarray(updates[0][0]).shape
    counts = np.array([float(c) for _, c in updates])
    if (counts <= 0).any():
        raise ValueError("sample counts must be positive")
    total = counts.sum()
    if not total > 0:
        raise ValueError("zero total sample count")
    out = np.zeros(length)
    for (weights, _), count in zip(updates, counts):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != length:
            raise ValueError("client weight vectors differ in length")
        out += (count / total) * weights
    return out


def _weighted_mean(values, weights) -> float:
    # normalize first: a lone client gets alpha == 1.0 and its value passes through exactly
    weights = np.asarray(weights, dtype=np.float64)
    alphas = weights / weights.sum()
    return float(sum(a * v for a, v in zip(alphas, values)))


def _initial_model(h: int, p: int, config: TrainConfig) -> nn.Seq2SeqModel:
    return nn.init_model(h, p, config.hidden_size, derive_seed(config.seed, "init"), config.dropout)


def _forecasts(model: nn.Seq2SeqModel, clients) -> dict[int, ClientForecast]:
    out = {}
    for c in clients:
        pred = c.scaler.inverse(nn.predict(model, c.test.inputs))
        out[c.node_id] = ClientForecast(c.node_id, c.test.offsets.copy(), pred, c.scaler.inverse(c.test.targets))
    return out


def _check_clients(clients, h: int, p: int):
    clients = sorted(clients, key=lambda c: c.node_id)
    if not clients:
        raise ValueError("need at least one client")
    ids = [c.node_id for c in clients]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate client node ids")
    for c in clients:
        if (c.train.h, c.train.p) != (h, p):
            raise ValueError(f"client {c.node_id} windows are ({c.train.h}, {c.train.p}), expected ({h}, {p})")
    return clients


def run_federated(clients, h: int, p: int, config: TrainConfig = TrainConfig(), on_round=None) -> TrainingResult:
    """Broadcast, one local epoch per client, FedAvg; repeated ``config.rounds`` times.

    Each client keeps its own Adam moments and shuffle/dropout stream across
    rounds. Clients may train on ``config.jobs`` threads; aggregation always
    runs in node-id order so results do not depend on the thread count.
    """
    clients = _check_clients(clients, h, p)
    global_model = _initial_model(h, p, config)
    n_params = global_model.theta.size
    locals_ = {c.node_id: global_model.clone() for c in clients}
    optims = {c.node_id: nn.AdamState.zeros(n_params) for c in clients}
    rngs = {c.node_id: stream(config.seed, "shuffle", c.node_id) for c in clients}
    history = RoundHistory()

    def local_update(client: ClientState, weights: np.ndarray):
        model = locals_[client.node_id]
        nn.set_weights(model, weights)
        try:
            loss = nn.train_epoch(
                model, client.train.inputs, client.train.targets, optims[client.node_id],
                rngs[client.node_id], config.batch_size, config.lr, config.clip_norm,
            )
        except nn.DivergenceError as exc:
            raise nn.DivergenceError(f"client {client.node_id}: {exc}") from exc
        return nn.get_weights(model), loss

    pool = ThreadPoolExecutor(config.jobs) if config.jobs > 1 else None
    try:
        for rnd in range(1, config.rounds + 1):
            broadcast = nn.get_weights(global_model)
            if pool is None:
                results = [local_update(c, broadcast) for c in clients]
            else:
                results = list(pool.map(lambda c: local_update(c, broadcast), clients))
            nn.set_weights(global_model, fedavg_aggregate((w, c.sample_count) for (w, _), c in zip(results, clients)))
            train_loss = _weighted_mean([loss for _, loss in results], [c.sample_count for c in clients])
            val_loss = _weighted_mean(
                [nn.evaluate_loss(global_model, c.val.inputs, c.val.targets) for c in clients],
                [len(c.val) for c in clients],
            )
            history.append(train_loss, val_loss)
            log.debug("round %d train=%.5f val=%.5f", rnd, train_loss, val_loss)
            if on_round is not None:
                on_round(rnd, train_loss, val_loss)
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainingResult(global_model, history, _forecasts(global_model, clients), "federated")


def run_centralized(clients, h: int, p: int, config: TrainConfig = TrainConfig(), on_round=None) -> TrainingResult:
    """Train one model on the pooled training windows for ``config.rounds`` epochs.

    Windows are concatenated in node-id order. The shuffle stream is keyed by
    the pooled node ids, so with a single client this is bit-for-bit the same
    computation as a one-client federated run.
    """
    clients = _check_clients(clients, h, p)
    model = _initial_model(h, p, config)
    X = np.concatenate([c.train.inputs for c in clients])
    Y = np.concatenate([c.train.targets for c in clients])
    state = nn.AdamState.zeros(model.theta.size)
    rng = stream(config.seed, "shuffle", *(c.node_id for c in clients))
    history = RoundHistory()
    for epoch in range(1, config.rounds + 1):
        train_loss = nn.train_epoch(model, X, Y, state, rng, config.batch_size, config.lr, config.clip_norm)
        val_loss = _weighted_mean(
            [nn.evaluate_loss(model, c.val.inputs, c.val.targets) for c in clients],
            [len(c.val) for c in clients],
        )
        history.append(train_loss, val_loss)
        if on_round is not None:
            on_round(epoch, train_loss, val_loss)
    return TrainingResult(model, history, _forecasts(model, clients), "centralized")


def pooled_train_size(clients) -> int:
    return sum(len(c.train) for c in clients)
