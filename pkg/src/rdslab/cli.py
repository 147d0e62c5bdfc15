"""Command line entry point: ``rdslab <subcommand> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import RDSLabError
from .estimators import bias_test, estimate_report
from .graph import (
    read_edge_list,
    read_node_attributes,
    sbm_params,
    sbm_sample,
    second_eigenvalue,
    write_edge_list,
)
from .montecarlo import ExperimentConfig, run_mse, run_pgf_scan, run_power, run_qq, surrogate_network
from .tree import distance_pgf, galton_watson, m_tree, read_tree_csv, write_tree_csv
from .walk import DesignMeta, WalkSample, stream, tp_walk, tp_walk_without_replacement, write_walk_csv


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if args.paper_scale:
        cfg = cfg.paper_scale()
    updates = {"out": args.out, "threads": args.threads}
    if args.seed is not None:
        updates["seed"] = args.seed
    return replace(cfg, **updates)


def _write_attr(path: Path, name: str, labels, values) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node", name])
        for lab, v in zip(labels, values):
            w.writerow([int(lab), repr(float(v))])


def cmd_graph_gen(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = stream(cfg.seed, 0)
    if args.kind == "surrogate":
        fg = surrogate_network(rng)
        g = fg.graph
        for name, vals in fg.features.items():
            _write_attr(out / f"{name}.csv", name, g.labels, vals)
    else:
        if args.p is not None:
            p, r = args.p, args.r
        else:
            p, r = sbm_params(args.lambda2, args.degree_sum if args.degree_sum else 50.0 / args.n)
        g = sbm_sample(args.n, p, r, rng)
        _write_attr(out / "block.csv", "block", g.labels, g.blocks)
    write_edge_list(g, out / "graph.txt")
    print(json.dumps({"n": g.n, "dropped": g.n_dropped, "mean_degree": g.mean_degree, "lambda2": second_eigenvalue(g)}))
    return 0


def _tree_from_args(args, rng):
    if args.tree == "m-tree":
        return m_tree(args.m, args.waves)
    probs = [float(x) for x in args.offspring.split(",")]
    if args.size:
        from .montecarlo import sweep_tree

        return sweep_tree(args.size, probs, rng)
    return galton_watson(probs, rng, max_wave=args.waves)


def _load_graph_and_feature(args):
    g = read_edge_list(args.graph)
    y = None
    if args.feature:
        _, y = read_node_attributes(args.feature, g)
    return g, y


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    g, y = _load_graph_and_feature(args)
    rng = stream(cfg.seed, 0)
    t = _tree_from_args(args, rng)
    root = int(args.root_init) if args.root_init.isdigit() else args.root_init
    walk = tp_walk if args.replacement == "with" else tp_walk_without_replacement
    s = walk(g, t, root_init=root, rng=rng, y=y)
    write_tree_csv(s.tree, out / "tree.csv")
    # graph_node is written as the original label so files round-trip
    labelled = WalkSample(s.tree, np.where(s.assignment >= 0, g.labels[s.assignment], -1), s.deg_obs, s.meta, s.y_obs)
    write_walk_csv(labelled, out / "walk.csv")
    print(json.dumps({"n": s.n, "truncations": s.meta.truncations}))
    return 0


def _read_sample(args):
    t = read_tree_csv(args.tree_csv)
    with open(args.walk) as fh:
        rows = list(csv.DictReader(fh))
    assignment = np.full(t.n, -1, dtype=np.int64)
    y = np.empty(len(rows))
    deg = np.empty(len(rows))
    for k, row in enumerate(rows):
        assignment[int(row["tree_node"])] = int(row["graph_node"])
        y[k] = float(row["y"])
        deg[k] = float(row["deg"])
    return WalkSample(t, assignment, deg, DesignMeta(True, "file"), y)


def _pi_for(args, s):
    if not args.graph:
        return None, None
    g = read_edge_list(args.graph)
    pi = np.zeros(int(g.labels.max()) + 1)
    pi[g.labels] = g.pi
    return pi, g.n


def cmd_estimate(args) -> int:
    s = _read_sample(args)
    pi, N = _pi_for(args, s)
    rep = estimate_report(s, pi=pi, N=N, alpha=args.alpha, pgf=distance_pgf(s.tree))
    print(rep.to_json())
    return 0


def cmd_test_bias(args) -> int:
    s = _read_sample(args)
    rep = estimate_report(s, alpha=args.alpha, pgf=distance_pgf(s.tree))
    res = bias_test(rep.bias_hat, rep.sigma_hat_sq, args.alpha)
    print(json.dumps({"bias_hat": rep.bias_hat, "sigma_hat_sq": rep.sigma_hat_sq, **res._asdict()}, default=str))
    return 0


def cmd_qq(args) -> int:
    res = run_qq(_config(args))
    for r in res:
        print(f"{r.scenario:28s} {r.estimator:4s} qq={r.qq_correlation:.4f} skew={r.skewness:+.3f} kurt={r.excess_kurtosis:+.3f}")
    return 0


def cmd_power(args) -> int:
    cfg = _config(args)
    if args.scenarios:
        cfg = replace(cfg, scenarios=tuple(int(x) for x in args.scenarios.split(",")))
    for row in run_power(cfg).rows:
        print(*row, sep=",")
    return 0


def cmd_mse(args) -> int:
    cfg = _config(args)
    res = run_mse(cfg)
    for name in res.crossover:
        print(f"{name}: crossover {res.crossover_label(name, cfg.sweep)}")
    return 0


def cmd_pgf_scan(args) -> int:
    cfg = _config(args)
    res = run_pgf_scan(cfg)
    for k, (n, iv) in enumerate(zip(res.sizes, res.intervals)):
        print(f"tree {k}: n={n} nonconvex={[(round(a, 2), round(b, 2)) for a, b in iv]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--config", help="JSON experiment configuration")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker processes")
    common.add_argument("--paper-scale", action="store_true", help="N=5000 and R=2000")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="rdslab", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("graph-gen", parents=[common], help="generate an SBM or surrogate graph")
    p.add_argument("--kind", choices=["sbm", "surrogate"], default="sbm")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--lambda2", type=float, default=0.5)
    p.add_argument("--degree-sum", type=float, help="p + r (default 50/n)")
    p.add_argument("--p", type=float)
    p.add_argument("--r", type=float)
    p.set_defaults(func=cmd_graph_gen)

    p = sub.add_parser("simulate", parents=[common], help="draw one walk sample")
    p.add_argument("--graph", required=True, help="edge list")
    p.add_argument("--feature", help="node,<feature> CSV")
    p.add_argument("--tree", choices=["m-tree", "gw"], default="m-tree")
    p.add_argument("--m", type=int, default=2)
    p.add_argument("--waves", type=int, default=8)
    p.add_argument("--offspring", default="0,0.3333333333333333,0.3333333333333333,0.3333333333333334")
    p.add_argument("--size", type=int, help="grow a GW tree to this many nodes instead")
    p.add_argument("--replacement", choices=["with", "without"], default="with")
    p.add_argument("--root-init", default="stationary")
    p.set_defaults(func=cmd_simulate)

    for name, func, helptext in (
        ("estimate", cmd_estimate, "estimators and bias test for a sample"),
        ("test-bias", cmd_test_bias, "zero-bias z-test for a sample"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--walk", required=True, help="walk CSV")
        p.add_argument("--tree-csv", required=True, help="tree CSV")
        p.add_argument("--alpha", type=float, default=0.05)
        if name == "estimate":
            p.add_argument("--graph", help="edge list; enables the IPW estimator")
        p.set_defaults(func=func)

    p = sub.add_parser("qq", parents=[common], help="Q-Q normality study")
    p.set_defaults(func=cmd_qq)
    p = sub.add_parser("power", parents=[common], help="power of the bias test")
    p.add_argument("--scenarios", help="comma separated subset of 1,2,3,4")
    p.set_defaults(func=cmd_power)
    p = sub.add_parser("mse", parents=[common], help="MSE sweep and crossover")
    p.set_defaults(func=cmd_mse)
    p = sub.add_parser("pgf-scan", parents=[common], help="convexity scan of G")
    p.set_defaults(func=cmd_pgf_scan)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (RDSLabError, OSError) as exc:
        print(f"rdslab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
