"""Project node forecasts onto links and rank links by utilization score.

Every node's traffic is split evenly over the other |K|-1 destinations, each
share is routed on its minimum-hop path, and the per-arc sums form a cube
tau[arc, sequence, step]. Per sequence the mean and population std over the
horizon are taken, averaged over sequences, max-normalized across arcs and
blended with weight beta into the score zeta.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .topology import Topology, all_pairs_paths, arc_label

log = logging.getLogger(__name__)


@dataclass
class AlignedForecasts:
    node_ids: tuple[int, ...]
    values: np.ndarray  # (K, M, p), non-negative
    clamped: int = 0

    @property
    def num_sequences(self) -> int:
        return self.values.shape[1]

    @property
    def horizon(self) -> int:
        return self.values.shape[2]

    def scaled(self, factor: float) -> "AlignedForecasts":
        return AlignedForecasts(self.node_ids, self.values * factor, self.clamped)


@dataclass
class LinkTrafficCube:
    labels: tuple[str, ...]
    tau: np.ndarray  # (L, M, p)

    def index(self, label: str) -> int:
        return self.labels.index(label)


@dataclass
class LinkScoreReport:
    labels: tuple[str, ...]
    mu_bar: np.ndarray
    sigma_bar: np.ndarray
    mu_norm: np.ndarray
    sigma_norm: np.ndarray
    zeta: np.ndarray
    beta: float

    @property
    def order(self) -> list[int]:
        return _ranking(self.zeta, self.labels)

    @property
    def ranks(self) -> np.ndarray:
        """1-based rank of each arc, in ``labels`` order."""
        out = np.empty(len(self.labels), dtype=int)
        for r, i in enumerate(self.order, start=1):
            out[i] = r
        return out

    def top(self, q: int) -> list[str]:
        return rank_links(dict(zip(self.labels, self.zeta)), q)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.labels, (float(z) for z in self.zeta)))


def align_truncate(per_node) -> AlignedForecasts:
    """Keep the first M sequences of every node, M being the smallest count.

    ``per_node`` maps node id to an array (n_sequences, p). Negative values are
    clamped to zero and counted.
    """
    if not per_node:
        raise ValueError("no node forecasts")
    items = sorted(per_node.items())
    arrays = []
    for node, seqs in items:
        seqs = np.asarray(seqs, dtype=np.float64)
        if seqs.ndim == 1:
            seqs = seqs[:, None]
        if seqs.shape[0] == 0:
            raise ValueError(f"node {node} has no prediction sequences")
        arrays.append(seqs)
    horizons = {a.shape[1] for a in arrays}
    if len(horizons) != 1:
        raise ValueError(f"nodes disagree on the horizon: {sorted(horizons)}")
    m = min(a.shape[0] for a in arrays)
    values = np.stack([a[:m] for a in arrays])
    if not np.isfinite(values).all():
        raise ValueError("non-finite forecast values")
    negative = int((values < 0).sum())
    if negative:
        log.warning("clamped %d negative forecast values to 0", negative)
        values = np.maximum(values, 0.0)
    return AlignedForecasts(tuple(node for node, _ in items), values, negative)


def split_pair_traffic(x: float, num_nodes: int) -> np.ndarray:
    """Even split of one node's traffic over the other num_nodes-1 destinations."""
    if num_nodes < 2:
        raise ValueError("need at least two nodes to split traffic")
    if x < 0:
        raise ValueError("traffic must be non-negative")
    return np.full(num_nodes - 1, x / (num_nodes - 1))


def accumulate_link_traffic(forecasts: AlignedForecasts, topology: Topology, paths=None) -> LinkTrafficCube:
    """Sum the per-pair shares onto every arc of each pair's path.

    Pairs are visited in sorted (s, d) order, so two arcs crossed by the same
    set of flows receive bit-identical sums.
    """
    if set(forecasts.node_ids) != set(topology.node_ids):
        raise ValueError("forecast nodes and topology nodes differ")
    if paths is None:
        paths = all_pairs_paths(topology)
    K = len(forecasts.node_ids)
    if K < 2:
        raise ValueError("need at least two nodes")
    row = {node: i for i, node in enumerate(forecasts.node_ids)}
    arc_idx = topology.arc_index()
    shares = forecasts.values / (K - 1)
    tau = np.zeros((len(topology.arcs),) + forecasts.values.shape[1:])
    for s in topology.node_ids:
        for d in topology.node_ids:
            if s == d:
                continue
            try:
                path = paths[(s, d)]
            except KeyError:
                raise ValueError(f"no path for pair ({s}, {d})") from None
            for arc in path.arcs:
                tau[arc_idx[arc]] += shares[row[s]]
    return LinkTrafficCube(tuple(topology.labels), tau)


def merge_undirected(cube: LinkTrafficCube, topology: Topology) -> LinkTrafficCube:
    """Sum the two arcs of each physical link onto one ``L{min}{max}`` entry."""
    groups: dict[tuple[int, int], list[int]] = {}
    for i, (u, v) in enumerate(topology.arcs):
        groups.setdefault((min(u, v), max(u, v)), []).append(i)
    keys = sorted(groups)
    tau = np.stack([cube.tau[groups[k]].sum(axis=0) for k in keys])
    return LinkTrafficCube(tuple(arc_label(*k) for k in keys), tau)


def sequence_stats(cube: LinkTrafficCube) -> tuple[np.ndarray, np.ndarray]:
    """Per (arc, sequence) mean and population std over the horizon."""
    return cube.tau.mean(axis=2), cube.tau.std(axis=2)


def aggregate_stats(mu, sigma) -> tuple[np.ndarray, np.ndarray]:
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape[-1] < 1:
        raise ValueError("need at least one sequence")
    return mu.mean(axis=-1), sigma.mean(axis=-1)


def _normalize(values: np.ndarray) -> np.ndarray:
    top = values.max()
    # an all-zero component contributes nothing instead of 0/0
    if not top > 0:
        return np.zeros_like(values)
    return values / top


def link_utilization_scores(mu_bar, sigma_bar, beta: float = 0.5):
    """zeta = beta * mu/mu_max + (1 - beta) * sigma/sigma_max, per arc.

    Returns (zeta, normalized mu, normalized sigma).
    """
    mu_bar = np.asarray(mu_bar, dtype=np.float64)
    sigma_bar = np.asarray(sigma_bar, dtype=np.float64)
    mu_n = _normalize(mu_bar)
    sigma_n = _normalize(sigma_bar)
    return beta * mu_n + (1.0 - beta) * sigma_n, mu_n, sigma_n


def _ranking(zeta, labels) -> list[int]:
    return sorted(range(len(labels)), key=lambda i: (-zeta[i], labels[i]))


def rank_links(zeta: dict[str, float], q: int) -> list[str]:
    """Top-q labels by descending score, ties by ascending label."""
    if not 1 <= q <= len(zeta):
        raise ValueError(f"q={q} out of range for {len(zeta)} links")
    labels = list(zeta)
    scores = [zeta[k] for k in labels]
    return [labels[i] for i in _ranking(scores, labels)[:q]]


def score_cube(cube: LinkTrafficCube, beta: float = 0.5) -> LinkScoreReport:
    mu, sigma = sequence_stats(cube)
    mu_bar, sigma_bar = aggregate_stats(mu, sigma)
    zeta, mu_n, sigma_n = link_utilization_scores(mu_bar, sigma_bar, beta)
    return LinkScoreReport(cube.labels, mu_bar, sigma_bar, mu_n, sigma_n, zeta, beta)


def most_utilized_sequence(predicted: LinkTrafficCube, actual: LinkTrafficCube, label: str, beta: float = 0.5):
    """Sequence maximizing beta*mu + (1-beta)*sigma on the predicted cube.

    Returns (m, predicted trace, actual trace of the same sequence); ties go
    to the earliest sequence.
    """
    i = predicted.index(label)
    traces = predicted.tau[i]
    composite = beta * traces.mean(axis=1) + (1.0 - beta) * traces.std(axis=1)
    m = int(np.argmax(composite))
    return m, traces[m].copy(), actual.tau[actual.index(label), m].copy()


def spearman(a, b) -> float:
    ra = rankdata(a)
    rb = rankdata(b)
    if ra.std() == 0 or rb.std() == 0:
        return 1.0 if np.array_equal(ra, rb) else float("nan")
    return float(np.corrcoef(ra, rb)[0, 1])


def compare_actual_predicted(predicted: LinkScoreReport, actual: LinkScoreReport, q: int = 6) -> dict:
    if tuple(predicted.labels) != tuple(actual.labels):
        raise ValueError("predicted and actual reports cover different links")
    top_p = predicted.top(q)
    top_a = actual.top(q)
    rows = [
        (r, lp, float(predicted.zeta[predicted.labels.index(lp)]), la, float(actual.zeta[actual.labels.index(la)]))
        for r, (lp, la) in enumerate(zip(top_p, top_a), start=1)
    ]
    return {
        "overlap": len(set(top_p) & set(top_a)) / q,
        "spearman": spearman(predicted.zeta, actual.zeta),
        "top_predicted": top_p,
        "top_actual": top_a,
        "table": rows,
    }


@dataclass
class LinkRiskResult:
    predicted_cube: LinkTrafficCube
    actual_cube: LinkTrafficCube
    predicted: LinkScoreReport
    actual: LinkScoreReport
    comparison: dict
    aligned_predicted: AlignedForecasts
    aligned_actual: AlignedForecasts


def analyze(predicted_per_node, actual_per_node, topology: Topology, beta: float = 0.5, q: int = 6,
            link_mode: str = "directed") -> LinkRiskResult:
    """Run the full ranking on predicted and on actual traffic side by side."""
    if link_mode not in ("directed", "undirected-aggregate"):
        raise ValueError(f"unknown link mode {link_mode!r}")
    paths = all_pairs_paths(topology)
    pred = align_truncate(predicted_per_node)
    act = align_truncate(actual_per_node)
    if pred.values.shape != act.values.shape:
        raise ValueError("predicted and actual forecasts do not align")
    pred_cube = accumulate_link_traffic(pred, topology, paths)
    act_cube = accumulate_link_traffic(act, topology, paths)
    if link_mode == "undirected-aggregate":
        pred_cube = merge_undirected(pred_cube, topology)
        act_cube = merge_undirected(act_cube, topology)
    if not 1 <= q <= len(pred_cube.labels):
        raise ValueError(f"q={q} out of range for {len(pred_cube.labels)} links")
    pred_rep = score_cube(pred_cube, beta)
    act_rep = score_cube(act_cube, beta)
    return LinkRiskResult(pred_cube, act_cube, pred_rep, act_rep,
                          compare_actual_predicted(pred_rep, act_rep, q), pred, act)


def write_outputs(result: LinkRiskResult, out_dir, h: int, p: int, q: int) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pred, act = result.predicted, result.actual
    written = []

    scores = out_dir / f"link_scores_{h}_{p}.csv"
    with scores.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["link", "mu_bar_pred", "sigma_bar_pred", "mu_bar_actual", "sigma_bar_actual",
                    "zeta_pred", "zeta_actual", "rank_pred", "rank_actual"])
        rp, ra = pred.ranks, act.ranks
        for i in pred.order:
            w.writerow([pred.labels[i], repr(float(pred.mu_bar[i])), repr(float(pred.sigma_bar[i])),
                        repr(float(act.mu_bar[i])), repr(float(act.sigma_bar[i])),
                        repr(float(pred.zeta[i])), repr(float(act.zeta[i])), int(rp[i]), int(ra[i])])
    written.append(scores)

    top = out_dir / "top_q.csv"
    with top.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "link_pred", "zeta_pred", "link_actual", "zeta_actual"])
        for row in result.comparison["table"]:
            w.writerow([row[0], row[1], repr(float(row[2])), row[3], repr(float(row[4]))])
    written.append(top)

    for label in result.comparison["top_predicted"][:q]:
        m, trace_p, trace_a = most_utilized_sequence(result.predicted_cube, result.actual_cube, label, pred.beta)
        seq = out_dir / f"link_{label}_sequence.csv"
        with seq.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sequence", "step", "predicted", "actual"])
            for t, (a, b) in enumerate(zip(trace_p, trace_a), start=1):
                w.writerow([m, t, repr(float(a)), repr(float(b))])
        written.append(seq)
    return written


def format_top_table(result: LinkRiskResult) -> str:
    comp = result.comparison
    lines = [f"{'rank':>4}  {'actual':<8}{'zeta':>7}   {'predicted':<10}{'zeta':>7}"]
    for r, lp, zp, la, za in comp["table"]:
        lines.append(f"{r:>4}  {la:<8}{za:>7.3f}   {lp:<10}{zp:>7.3f}")
    lines.append(f"top-{len(comp['table'])} overlap {comp['overlap']:.3f}, spearman {comp['spearman']:.3f}")
    return "\n".join(lines)
