"""Command-line front end.

Exit codes: 0 success, 1 usage/configuration error, 2 data error,
3 numeric divergence.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import experiment as ex
from .config import ConfigError, RunConfig, from_dict, load_config
from .linkrisk import analyze, format_top_table, write_outputs
from .metrics import format_grid, grid_from_reports, write_grid_csv
from .neuralnet import DivergenceError
from .topology import TopologyError
from .traffic_data import DataError, smooth_stages, fit_scaler, apply_scaler, write_series
from .windowing import training_span

log = logging.getLogger("fedlink")

OUTPUT_ENV = "FEDLINK_OUTPUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

# flag dest -> RunConfig field
_OVERRIDES = {
    "data_dir": "data_dir", "output_dir": "output_dir", "topology": "topology",
    "topology_mode": "topology_mode", "link_mode": "link_mode",
    "h": "h", "p": "p", "h_values": "h_values", "p_values": "p_values",
    "rounds": "rounds", "hidden_size": "hidden_size", "dropout": "dropout", "lr": "lr",
    "batch_size": "batch_size", "seeds": "seeds", "jobs": "jobs", "beta": "beta", "q": "q",
    "scaler_scope": "scaler_scope", "weight_by": "weight_by", "scale": "scale",
    "train_frac": "train_frac", "val_frac_of_train": "val_frac_of_train",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(sub: argparse.ArgumentParser) -> None:
    g = sub.add_argument_group("configuration")
    g.add_argument("--config", help="JSON run configuration")
    g.add_argument("--data-dir")
    g.add_argument("--output-dir", help=f"overrides ${OUTPUT_ENV} and the config file")
    g.add_argument("--topology", help="edge-list file (default: bundled 9-node backbone)")
    g.add_argument("--topology-mode", choices=["directed", "undirected"])
    g.add_argument("--link-mode", choices=["directed", "undirected-aggregate"])
    g.add_argument("--h", type=int)
    g.add_argument("--p", type=int)
    g.add_argument("--h-values", type=int, nargs="+")
    g.add_argument("--p-values", type=int, nargs="+")
    g.add_argument("--sweep", action="store_true", help="use every (h, p) in the h/p value lists")
    g.add_argument("--rounds", type=int)
    g.add_argument("--hidden-size", type=int)
    g.add_argument("--dropout", type=float)
    g.add_argument("--lr", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--seeds", type=int, nargs="+")
    g.add_argument("--jobs", type=int)
    g.add_argument("--beta", type=float)
    g.add_argument("--q", type=int)
    g.add_argument("--scaler-scope", choices=["train", "full"])
    g.add_argument("--weight-by", choices=["windows", "raw_samples"])
    g.add_argument("--scale", type=float, help="multiplier on synthetic node lengths")
    g.add_argument("--train-frac", type=float)
    g.add_argument("--val-frac-of-train", type=float)
    g.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedlink", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub = subs.add_parser("gen-data", help="write synthetic hourly node series")
    _common(sub)
    sub.set_defaults(func=cmd_gen_data)

    sub = subs.add_parser("preprocess", help="dump preprocessed (standardized) series")
    _common(sub)
    sub.set_defaults(func=cmd_preprocess)

    sub = subs.add_parser("train", help="federated or centralized training")
    _common(sub)
    sub.add_argument("--mode", choices=["fed", "central"], default="fed")
    sub.set_defaults(func=cmd_train)

    sub = subs.add_parser("evaluate", help="R^2 reports and the (h, p) grid from stored weights")
    _common(sub)
    sub.add_argument("--mode", choices=["fed", "central"], default="fed")
    sub.set_defaults(func=cmd_evaluate)

    sub = subs.add_parser("rank-links", help="link utilization scores from stored forecasts")
    _common(sub)
    sub.add_argument("--mode", choices=["fed", "central"], default="fed")
    sub.set_defaults(func=cmd_rank_links)

    sub = subs.add_parser("report", help="summarize everything found in the output directory")
    _common(sub)
    sub.set_defaults(func=cmd_report)
    return parser


def resolve_config(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    """Defaults < config file < $FEDLINK_OUTPUT_DIR < flags."""
    config = load_config(args.config) if args.config else RunConfig()
    data = config.to_dict()
    if environ.get(OUTPUT_ENV):
        data["output_dir"] = environ[OUTPUT_ENV]
    for dest, key in _OVERRIDES.items():
        value = getattr(args, dest, None)
        if value is not None:
            data[key] = value
    return from_dict(data)


def cmd_gen_data(config: RunConfig, args) -> int:
    series = ex.synthetic_corpus(config)
    paths = ex.write_corpus(series, config.data_dir)
    for s, path in zip(series, paths):
        print(f"node {s.node_id}: {len(s)} samples -> {path}")
    return EXIT_OK


def cmd_preprocess(config: RunConfig, args) -> int:
    out_dir = Path(config.output_dir) / "preprocessed"
    pre = config.preprocess_config()
    for raw in ex.load_corpus(config.data_dir):
        smoothed = smooth_stages(raw, pre)
        fit_on = smoothed
        if config.scaler_scope == "train":
            span = training_span(len(smoothed), config.h, config.p, config.split_spec())
            fit_on = smoothed.with_values(smoothed.values[:span])
        scaler = fit_scaler(fit_on)
        path = out_dir / f"node_{raw.node_id}.csv"
        write_series(apply_scaler(smoothed, scaler), path, header="value")
        print(f"node {raw.node_id}: {len(raw)} -> {len(smoothed)} samples, "
              f"mean={scaler.mean:.6g} std={scaler.std_dev:.6g} -> {path}")
    return EXIT_OK


def cmd_train(config: RunConfig, args) -> int:
    ex.resolve_topology(config)
    series = ex.load_corpus(config.data_dir)
    for h, p in config.cells(args.sweep):
        for seed in config.seeds:
            result = ex.train_cell(series, h, p, args.mode, config, seed)
            directory = ex.run_dir(config, args.mode, h, p, seed)
            ex.save_run(result, directory)
            hist = result.history
            print(f"{result.mode} h={h} p={p} seed={seed}: {len(hist)} rounds, "
                  f"train={hist.train_loss[-1]:.5f} val={hist.val_loss[-1]:.5f} -> {directory}")
    return EXIT_OK


def cmd_evaluate(config: RunConfig, args) -> int:
    series = ex.load_corpus(config.data_dir)
    mode = ex.MODES[args.mode]
    report_dir = Path(config.output_dir) / "reports"
    reports = []
    for h, p in config.cells(args.sweep):
        for seed in config.seeds:
            rep = ex.evaluate_saved(series, config, args.mode, h, p, seed)
            rep.write_csv(report_dir / f"{mode}_h{h}_p{p}_s{seed}.csv")
            reports.append(rep)
            print(rep.format_table())
    for seed in config.seeds:
        write_grid_csv(grid_from_reports([r for r in reports if r.seed == seed]),
                       report_dir / f"grid_{mode}_s{seed}.csv")
    grid = grid_from_reports(reports)
    write_grid_csv(grid, report_dir / f"grid_{mode}.csv")
    print(f"\naverage R^2 ({mode}, mean over {len(config.seeds)} seed(s)); rows h, columns p")
    print(format_grid(grid))
    return EXIT_OK


def cmd_rank_links(config: RunConfig, args) -> int:
    topology = ex.resolve_topology(config)
    for seed in config.seeds:
        for h, p in config.cells(args.sweep):
            forecasts = ex.read_forecasts(ex.run_dir(config, args.mode, h, p, seed))
            n_links = len(topology.arcs) if config.link_mode == "directed" else len(topology.arcs) // 2
            if config.q > n_links:
                raise ConfigError(f"q={config.q} exceeds the {n_links} links of the topology")
            result = analyze(
                {k: fc.predicted for k, fc in forecasts.items()},
                {k: fc.actual for k, fc in forecasts.items()},
                topology, config.beta, config.q, config.link_mode,
            )
            out = Path(config.output_dir) / "links" / f"{ex.MODES[args.mode]}_h{h}_p{p}_s{seed}"
            write_outputs(result, out, h, p, config.q)
            print(f"h={h} p={p} seed={seed} ({result.aligned_predicted.num_sequences} aligned sequences)")
            print(format_top_table(result))
    return EXIT_OK


def cmd_report(config: RunConfig, args) -> int:
    root = Path(config.output_dir)
    found = False
    for grid_file in sorted((root / "reports").glob("grid_*.csv")) if (root / "reports").is_dir() else []:
        found = True
        print(f"== {grid_file.relative_to(root)}")
        print(grid_file.read_text().rstrip())
    for top in sorted((root / "links").glob("*/top_q.csv")) if (root / "links").is_dir() else []:
        found = True
        print(f"== {top.relative_to(root)}")
        print(top.read_text().rstrip())
    if not found:
        raise DataError(f"nothing to report under {root}; run evaluate or rank-links first")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
        return args.func(config, args)
    except ConfigError as exc:
        print(f"fedlink: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"fedlink: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataError, TopologyError, OSError) as exc:
        print(f"fedlink: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
