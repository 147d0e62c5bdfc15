"""Monte Carlo experiments: Q-Q normality study, power and MSE sweeps, G scans.

Every replicate draws from its own generator keyed by
``(master seed, scenario code, ..., replicate index)``, so outputs do not
depend on how replicates are split across worker processes.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from .errors import ConfigError, DegenerateError, DomainError
from .estimators import (
    bias_adjusted,
    bias_feature,
    harmonic_mean_degree,
    sample_mean,
    vh_estimate,
    z_quantile,
)
from .graph import Graph, graph_from_weights, sbm_params, sbm_sample, second_eigenvalue
from .tree import (
    ReferralTree,
    convexity_scan,
    distance_pgf,
    galton_watson,
    m_tree,
    pgf_eval,
    truncate_bfs,
)
from .variance import plugin_variance
from .walk import iid_stationary, stream, tp_walk, tp_walk_without_replacement

log = logging.getLogger(__name__)

QQ_LAMBDAS = (0.5, 0.6, 0.8, 0.9)
QQ_TREES = ("2-tree", "gw")
SWEEP_N = (20, 50, 100, 200, 350, 500)
GW_UNIFORM_123 = (0.0, 1 / 3, 1 / 3, 1 / 3)
GW_APPENDIX = (0.1, 0.1, 0.3, 0.5)
GW_SPARSE = (0.0, 0.9, 0.1)  # E eta = 1.1
MEAN_DEGREE = 50.0  # (p + r) N; 25 expected neighbours

# scenario codes for stream keys
_QQ, _POWER_IID, _WALK, _PGF, _GRAPH, _SURROGATE = 1, 2, 3, 4, 5, 6


# --------------------------------------------------------------------------
# Diagnostics


def standardize(values) -> np.ndarray:
    """Centre and scale to mean 0 and (ddof=1) standard deviation 1."""
    v = np.asarray(values, dtype=float)
    sd = v.std(ddof=1)
    if not sd > 0:
        raise DegenerateError("cannot standardize constant values")
    return (v - v.mean()) / sd


def normal_scores(R: int) -> np.ndarray:
    """Standard normal quantiles at plotting positions (i - 0.5)/R."""
    return norm.ppf((np.arange(1, R + 1) - 0.5) / R)


def normality_diagnostics(values) -> tuple[float, float, float]:
    """(Q-Q correlation, skewness, excess kurtosis) of a Monte Carlo sample."""
    v = np.asarray(values, dtype=float)
    if v.size < 20:
        raise DomainError("need at least 20 values")
    d = v - v.mean()
    m2 = np.mean(d**2)
    if m2 <= 1e-300 * max(1.0, np.mean(v**2)):
        raise DegenerateError("constant input")
    qq = float(np.corrcoef(np.sort(d), normal_scores(v.size))[0, 1])
    return qq, float(np.mean(d**3) / m2**1.5), float(np.mean(d**4) / m2**2 - 3)


def bootstrap_se(values, stat: Callable, B: int = 200, seed: int = 0) -> np.ndarray:
    """Bootstrap standard error of ``stat(values)`` (vector valued stats allowed)."""
    v = np.asarray(values, dtype=float)
    rng = np.random.default_rng(seed)
    draws = np.array([stat(v[rng.integers(0, v.size, v.size)]) for _ in range(B)])
    return draws.std(axis=0, ddof=1)


# --------------------------------------------------------------------------
# Configuration


@dataclass
class ExperimentConfig:
    """Knobs for every experiment; unset fields fall back to desk-scale defaults."""

    seed: int = 20240601
    reps: int = 1000
    waves: int = 8
    N: int = 2000
    degree_sum: float | None = None  # p + r of the two-block SBM; None keeps mean degree 25
    lambdas: tuple[float, ...] = QQ_LAMBDAS
    trees: tuple[str, ...] = QQ_TREES
    replacement: tuple[bool, ...] = (True, False)
    alpha: float = 0.05
    sweep: tuple[int, ...] = SWEEP_N
    scenarios: tuple[int, ...] = (1, 2, 3, 4)
    features: tuple[str, ...] = ("gender", "nominations")
    power_reps: int = 1000
    gw_offspring: tuple[float, ...] = GW_SPARSE
    pgf_trees: int = 20
    pgf_cap: int = 5000
    pgf_offspring: tuple[float, ...] = GW_APPENDIX
    pgf_step: float = 0.01
    graph: dict | None = None  # {"edge_list": path, "attributes": [paths]} replaces the surrogate
    out: str = "out"
    threads: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def paper_scale(self) -> "ExperimentConfig":
        return replace(self, N=5000, reps=2000)

    def validate(self) -> None:
        if self.reps < 1 or self.power_reps < 1:
            raise ConfigError("replication counts must be >= 1")
        if self.waves < 1:
            raise ConfigError("waves must be >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        bad = set(self.scenarios) - {1, 2, 3, 4}
        if bad:
            raise ConfigError(f"unknown scenario ids {sorted(bad)}")
        bad = set(self.trees) - set(QQ_TREES)
        if bad:
            raise ConfigError(f"unknown tree designs {sorted(bad)}")


def _pmap(fn, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * threads))))


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


# --------------------------------------------------------------------------
# Q-Q study


@dataclass
class ScenarioResult:
    scenario: str
    lambda2: float
    lambda2_realized: float
    tree: str
    replacement: bool
    estimator: str
    estimates: np.ndarray = field(repr=False)
    standardized: np.ndarray = field(repr=False)
    qq_correlation: float = float("nan")
    skewness: float = float("nan")
    excess_kurtosis: float = float("nan")
    se: tuple[float, float, float] = (float("nan"),) * 3
    mean_n: float = float("nan")
    truncations: float = 0.0

    def summary(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("estimates", "standardized", "se")}
        d.update(se_qq=self.se[0], se_skew=self.se[1], se_kurt=self.se[2])
        return d


def qq_graph(cfg: ExperimentConfig, lam: float, index: int) -> Graph:
    ds = cfg.degree_sum if cfg.degree_sum is not None else MEAN_DEGREE / cfg.N
    p, r = sbm_params(lam, ds)
    return sbm_sample(cfg.N, p, r, stream(cfg.seed, _GRAPH, index))


def _qq_tree(design: str, h: int, rng) -> ReferralTree:
    if design == "2-tree":
        return m_tree(2, h)
    return galton_watson(GW_UNIFORM_123, rng, max_wave=h)


def _qq_replicate(args) -> tuple[float, float, int, int]:
    g, design, replacement, h, seed, code, rep = args
    rng = stream(seed, _QQ, code, rep)
    t = _qq_tree(design, h, rng)
    walk = tp_walk if replacement else tp_walk_without_replacement
    s = walk(g, t, rng=rng, y=g.blocks)
    return sample_mean(s.y_obs), vh_estimate(s.y_obs, s.deg_obs), s.n, s.meta.truncations


def run_qq(cfg: ExperimentConfig, write: bool = True) -> list[ScenarioResult]:
    """Sampling distributions of the sample mean and VH under four designs.

    The feature is the 0/1 block label of a two-block SBM whose block kernel
    has second eigenvalue ``lambda2``. Writes ``qq.csv`` and ``qq_summary.csv``.
    """
    cfg.validate()
    results: list[ScenarioResult] = []
    rows = []
    code = 0
    scores = normal_scores(cfg.reps)
    for li, lam in enumerate(cfg.lambdas):
        g = qq_graph(cfg, lam, li)
        lam_real = second_eigenvalue(g)
        for design in cfg.trees:
            for replacement in cfg.replacement:
                code += 1
                if not replacement:
                    nmax = 2 ** (cfg.waves + 1) - 1 if design == "2-tree" else (3 ** (cfg.waves + 1) - 1) // 2
                    if design == "2-tree" and nmax > g.n:
                        raise ConfigError(f"without-replacement sample of {nmax} exceeds N = {g.n}")
                name = f"lam{lam}-{design}-{'with' if replacement else 'without'}"
                log.info("qq scenario %s", name)
                args = [(g, design, replacement, cfg.waves, cfg.seed, code, r) for r in range(cfg.reps)]
                out = np.array(_pmap(_qq_replicate, args, cfg.threads), dtype=float)
                for col, est in enumerate(("mean", "vh")):
                    vals = out[:, col]
                    z = standardize(vals)
                    diag = normality_diagnostics(vals)
                    se = tuple(bootstrap_se(vals, normality_diagnostics, seed=cfg.seed + code))
                    res = ScenarioResult(
                        name, lam, lam_real, design, replacement, est, vals, z, *diag, se=se,
                        mean_n=float(out[:, 2].mean()), truncations=float(out[:, 3].mean()),
                    )
                    results.append(res)
                    order = np.argsort(z, kind="stable")
                    for q, r in zip(scores, order):
                        rows.append([name, _fmt(lam), design, "with" if replacement else "without", est, int(r), _fmt(z[r]), _fmt(q)])
    if write:
        out_dir = Path(cfg.out)
        _write_csv(out_dir / "qq.csv", ["scenario", "lambda2", "tree", "replacement", "estimator", "rep", "standardized", "normal_q"], rows)
        summ = [r.summary() for r in results]
        _write_csv(out_dir / "qq_summary.csv", list(summ[0]), [[_fmt(v) if not isinstance(v, str) else v for v in d.values()] for d in summ])
    return results


# --------------------------------------------------------------------------
# Surrogate friendship network


@dataclass
class FeatureGraph:
    graph: Graph
    features: dict[str, np.ndarray]


def surrogate_network(
    rng: np.random.Generator,
    N: int = 1089,
    groups: int = 12,
    homophily: float = 0.9,
    max_nominations: int = 10,
    mean_nominations: float = 4.5,
) -> FeatureGraph:
    """Synthetic nomination network standing in for a school friendship survey.

    Every student nominates at most ``max_nominations`` friends, mostly inside
    their own group, preferring popular targets; the graph is ``A + A^T`` so
    mutual nominations carry weight 2. Features: ``nominations`` (out-degree,
    correlated with the walk's degree) and ``gender`` (independent coin).
    """
    group = rng.integers(0, groups, N)
    popularity = rng.lognormal(0.0, 0.8, N)
    out = np.minimum(rng.poisson(mean_nominations, N), max_nominations)
    members = [np.flatnonzero(group == k) for k in range(groups)]
    A = np.zeros((N, N))
    for i in range(N):
        if out[i] == 0:
            continue
        own = members[group[i]]
        pool_in = own[own != i]
        pool_out = np.flatnonzero(group != group[i])
        chosen: set[int] = set()
        while len(chosen) < out[i]:
            pool = pool_in if rng.random() < homophily else pool_out
            w = popularity[pool]
            j = int(pool[np.searchsorted(np.cumsum(w), rng.random() * w.sum(), side="right").clip(0, pool.size - 1)])
            chosen.add(j)
        A[i, list(chosen)] = 1.0
    g = graph_from_weights(A + A.T)
    keep = g.labels
    return FeatureGraph(
        g,
        {
            "nominations": out[keep].astype(float),
            "gender": rng.integers(0, 2, N)[keep].astype(float),
        },
    )


def load_feature_graph(cfg: ExperimentConfig) -> FeatureGraph:
    if cfg.graph is None:
        return surrogate_network(stream(cfg.seed, _SURROGATE))
    from .graph import read_edge_list, read_node_attributes

    g = read_edge_list(cfg.graph["edge_list"])
    feats = {}
    for path in cfg.graph.get("attributes", []):
        name, vals = read_node_attributes(path, g)
        feats[name] = vals
    missing = set(cfg.features) - set(feats)
    if missing:
        raise ConfigError(f"features {sorted(missing)} not found in attribute files")
    return FeatureGraph(g, feats)


# --------------------------------------------------------------------------
# Power and MSE


def scenario1_power(mean: float, sd: float, n, alpha: float = 0.05):
    """Exact power of the known-variance z-test for i.i.d. normal data."""
    z = z_quantile(alpha)
    shift = np.sqrt(n) * abs(mean) / sd
    return norm.cdf(-z + shift) + norm.cdf(-z - shift)


def sweep_tree(n: int, offspring, rng) -> ReferralTree:
    """GW tree grown wave by wave until it has >= n nodes, cut to the first n."""
    t = galton_watson(offspring, rng, node_cap=n)
    return truncate_bfs(t, n)


def _walk_replicate(args) -> np.ndarray:
    """One walk sample of size n; per feature returns
    (bias_hat, plug-in var, sample mean, IPW, VH)."""
    fg, names, n, offspring, seed, rep = args
    g = fg.graph
    rng = stream(seed, _WALK, n, rep)
    t = sweep_tree(n, offspring, rng)
    s = tp_walk(g, t, rng=rng)
    pgf = distance_pgf(t)
    dbar_true = g.mean_degree
    deg = s.deg_obs
    dhat = harmonic_mean_degree(deg)
    out = np.empty((len(names), 5))
    for k, name in enumerate(names):
        y = fg.features[name][s.sampled]
        yprime = bias_feature(y, deg, dhat)
        pv = plugin_variance(s, yprime, pgf)
        out[k] = (
            yprime.mean(),
            pv.sigma_hat_sq,
            y.mean(),
            np.mean(y * dbar_true / deg),
            vh_estimate(y, deg),
        )
    return out


def walk_replicates(fg: FeatureGraph, names, n: int, cfg: ExperimentConfig) -> np.ndarray:
    """(reps, features, 5) array of per-sample statistics for walk sampling."""
    args = [(fg, tuple(names), n, cfg.gw_offspring, cfg.seed, r) for r in range(cfg.power_reps)]
    return np.array(_pmap(_walk_replicate, args, cfg.threads))


def _iid_replicate(args) -> np.ndarray:
    fg, names, n, seed, rep = args
    g = fg.graph
    X = iid_stationary(g, n, stream(seed, _POWER_IID, n, rep))
    deg = g.deg[X]
    dhat = harmonic_mean_degree(deg)
    return np.array([bias_feature(fg.features[nm][X], deg, dhat).mean() for nm in names])


def population_bias_feature(fg: FeatureGraph, name: str) -> tuple[np.ndarray, float, float]:
    """``y' = y (1 - dbar/deg)`` with its pi-mean and pi-variance."""
    g = fg.graph
    yp = bias_feature(fg.features[name], g.deg, g.mean_degree)
    m = float(g.pi @ yp)
    return yp, m, float(g.pi @ (yp - m) ** 2)


@dataclass
class PowerResult:
    rows: list  # (feature, scenario, n, power, se)

    def power(self, feature: str, scenario: int) -> np.ndarray:
        return np.array([r[3] for r in self.rows if r[0] == feature and r[1] == scenario])

    def se(self, feature: str, scenario: int) -> np.ndarray:
        return np.array([r[4] for r in self.rows if r[0] == feature and r[1] == scenario])


def run_power(cfg: ExperimentConfig, fg: FeatureGraph | None = None, write: bool = True) -> PowerResult:
    """Power of the zero-bias test versus n for scenarios 1-4.

    1: i.i.d. normal draws with the pi-moments of y' (exact, closed form).
    2: i.i.d. draws from pi, known variance ``var_pi(y')/n``.
    3: walk samples tested against the Monte Carlo variance of ``bias_hat``.
    4: walk samples tested against their own plug-in ``G(R_hat) var_hat``.
    """
    cfg.validate()
    fg = fg or load_feature_graph(cfg)
    names = list(cfg.features)
    z = z_quantile(cfg.alpha)
    R = cfg.power_reps
    rows = []
    for n in cfg.sweep:
        walks = walk_replicates(fg, names, n, cfg) if {3, 4} & set(cfg.scenarios) else None
        iid = (
            np.array(_pmap(_iid_replicate, [(fg, tuple(names), n, cfg.seed, r) for r in range(R)], cfg.threads))
            if 2 in cfg.scenarios
            else None
        )
        for k, name in enumerate(names):
            _, mean_p, var_p = population_bias_feature(fg, name)
            for sc in cfg.scenarios:
                if sc == 1:
                    pw, se = float(scenario1_power(mean_p, np.sqrt(var_p), n, cfg.alpha)), 0.0
                else:
                    if sc == 2:
                        rej = np.abs(iid[:, k]) > z * np.sqrt(var_p / n)
                    elif sc == 3:
                        stat = walks[:, k, 0]
                        rej = np.abs(stat) > z * stat.std(ddof=1)
                    else:
                        stat, v = walks[:, k, 0], walks[:, k, 1]
                        rej = np.array([abs(b) > z * np.sqrt(vv) if vv > 0 else b != 0 for b, vv in zip(stat, v)])
                    pw = float(rej.mean())
                    se = float(np.sqrt(pw * (1 - pw) / R))
                rows.append((name, sc, n, pw, se))
    if write:
        _write_csv(Path(cfg.out) / "power.csv", ["feature", "scenario", "n", "power", "se"], [[r[0], r[1], r[2], _fmt(r[3]), _fmt(r[4])] for r in rows])
    return PowerResult(rows)


@dataclass
class MSEResult:
    rows: list  # (feature, estimator, n, mse, se)
    crossover: dict[str, int | None]
    sq_errors: dict = field(default_factory=dict, repr=False)

    def mse(self, feature: str, estimator: str) -> np.ndarray:
        return np.array([r[3] for r in self.rows if r[0] == feature and r[1] == estimator])

    def se(self, feature: str, estimator: str) -> np.ndarray:
        return np.array([r[4] for r in self.rows if r[0] == feature and r[1] == estimator])

    def crossover_label(self, feature: str, sweep: Sequence[int]) -> str:
        c = self.crossover[feature]
        return f"> {max(sweep)}" if c is None else str(c)


def run_mse(cfg: ExperimentConfig, fg: FeatureGraph | None = None, write: bool = True) -> MSEResult:
    """MSE of the sample mean, IPW and bias-adjusted estimators under walk sampling.

    The bias-adjusted estimator switches to IPW when the scenario-4 test
    rejects. Crossover is the smallest swept n where IPW beats the sample mean.
    """
    cfg.validate()
    fg = fg or load_feature_graph(cfg)
    names = list(cfg.features)
    z = z_quantile(cfg.alpha)
    rows = []
    sq: dict = {}
    crossover: dict[str, int | None] = {nm: None for nm in names}
    for n in cfg.sweep:
        walks = walk_replicates(fg, names, n, cfg)
        for k, name in enumerate(names):
            mu = float(fg.features[name].mean())
            bias_hat, v, mu_hat, mu_ipw = (walks[:, k, j] for j in range(4))
            reject = np.where(v > 0, np.abs(bias_hat) > z * np.sqrt(np.maximum(v, 0)), bias_hat != 0)
            mu_ba = np.array([bias_adjusted(a, b, r) for a, b, r in zip(mu_hat, mu_ipw, reject)])
            mses = {}
            for est, vals in (("mean", mu_hat), ("ipw", mu_ipw), ("ba", mu_ba)):
                e2 = (vals - mu) ** 2
                sq[(name, est, n)] = e2
                mses[est] = e2.mean()
                rows.append((name, est, n, float(e2.mean()), float(e2.std(ddof=1) / np.sqrt(e2.size))))
            if crossover[name] is None and mses["ipw"] < mses["mean"]:
                crossover[name] = n
    if write:
        out = Path(cfg.out)
        _write_csv(out / "mse.csv", ["feature", "estimator", "n", "mse", "se"], [[r[0], r[1], r[2], _fmt(r[3]), _fmt(r[4])] for r in rows])
        _write_csv(out / "crossover.csv", ["feature", "crossover"], [[nm, f"> {max(cfg.sweep)}" if c is None else c] for nm, c in crossover.items()])
    return MSEResult(rows, crossover, sq)


# --------------------------------------------------------------------------
# G convexity scan


@dataclass
class PGFScanResult:
    sizes: list[int]
    intervals: list[list[tuple[float, float]]]

    @property
    def nonconvex(self) -> list[bool]:
        return [bool(iv) for iv in self.intervals]


def _pgf_tree(args):
    seed, k, offspring, cap, step = args
    # stop at exactly cap nodes; a partial last wave is what makes G'' dip near -1
    t = truncate_bfs(galton_watson(offspring, stream(seed, _PGF, k), node_cap=cap), cap)
    p = distance_pgf(t)
    scan = convexity_scan(p, -1.0, step)
    G = np.asarray(pgf_eval(p, scan.z).G)
    return t.n, scan.nonconvex_intervals, scan.z, G, scan.d2G


def run_pgf_scan(cfg: ExperimentConfig, write: bool = True) -> PGFScanResult:
    """G and G'' on [-1, 1] for ``pgf_trees`` Galton-Watson trees grown to ``pgf_cap`` nodes."""
    args = [(cfg.seed, k, cfg.pgf_offspring, cfg.pgf_cap, cfg.pgf_step) for k in range(cfg.pgf_trees)]
    res = _pmap(_pgf_tree, args, cfg.threads)
    if write:
        rows = []
        for k, (_, _, z, G, d2) in enumerate(res):
            for zz, gg, dd in zip(z, G, d2):
                rows.append([k, _fmt(round(zz, 10)), _fmt(gg), _fmt(dd), _fmt(dd < -1e-12)])
        _write_csv(Path(cfg.out) / "pgf.csv", ["tree_id", "z", "G", "Gpp", "nonconvex"], rows)
    return PGFScanResult([r[0] for r in res], [r[1] for r in res])


def default_threads() -> int:
    return max(1, (os.cpu_count() or 1))
