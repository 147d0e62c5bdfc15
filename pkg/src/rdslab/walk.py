"""Tree-indexed random walks on a population graph.

Each referral ``X_parent -> X_child`` is an independent draw from row
``X_parent`` of the walk kernel. The without-replacement variant instead
picks uniformly among neighbours that are not yet in the sample.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import DataError, DegenerateError, DimensionError, DomainError
from .graph import Graph
from .tree import ReferralTree

RootInit = Union[str, int]


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(seed, *key)``; same key, same stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, key)]))


@dataclass(frozen=True)
class DesignMeta:
    replacement: bool
    root_init: str
    seed: int | None = None
    truncations: int = 0


@dataclass(frozen=True, eq=False)
class WalkSample:
    """Outcome of one walk.

    ``assignment[k]`` is the graph node visited by tree node k (-1 for an
    artificial root). ``tree`` is the realised tree; for without-replacement
    walks it may be a pruned copy of the requested one. ``y_obs`` and
    ``deg_obs`` are aligned with ``tree.sample_nodes``.
    """

    tree: ReferralTree
    assignment: np.ndarray
    deg_obs: np.ndarray
    meta: DesignMeta
    y_obs: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.deg_obs.size

    @property
    def sampled(self) -> np.ndarray:
        return self.assignment[self.tree.sample_nodes]

    def with_feature(self, y) -> "WalkSample":
        return WalkSample(self.tree, self.assignment, self.deg_obs, self.meta, observe_feature(self, y))

    def parent_child_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Indices into the observation vectors of every observed referral edge."""
        t = self.tree
        first = 1 if t.artificial_root else 0
        child = np.arange(1, t.n)
        par = t.parent[1:]
        keep = par >= first
        return par[keep] - first, child[keep] - first


def _root_law(g: Graph, root_init: RootInit) -> tuple[np.ndarray | None, str]:
    if isinstance(root_init, (int, np.integer)):
        if not 0 <= root_init < g.n:
            raise DomainError(f"fixed root node {root_init} is not in the graph")
        return None, f"fixed:{int(root_init)}"
    if root_init == "stationary":
        return g.pi, "stationary"
    if root_init == "uniform":
        return np.full(g.n, 1.0 / g.n), "uniform"
    raise DomainError(f"unknown root_init {root_init!r}")


def draw_roots(g: Graph, root_init: RootInit, size, rng: np.random.Generator) -> np.ndarray:
    law, _ = _root_law(g, root_init)
    if law is None:
        return np.full(size, int(root_init), dtype=np.int64)
    return np.searchsorted(np.cumsum(law), rng.random(size) * law.sum(), side="right").clip(0, g.n - 1)


def draw_neighbors(g: Graph, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One kernel step from every entry of ``states`` (cumulative-sum inversion)."""
    keys = g.row_keys()
    idx = np.searchsorted(keys, states + rng.random(states.shape), side="right")
    return g.weights.indices[idx]


def _seed_slots(t: ReferralTree) -> np.ndarray:
    return np.flatnonzero(t.parent == 0) if t.artificial_root else np.array([0])


def tp_walk_batch(
    g: Graph, t: ReferralTree, reps: int, rng: np.random.Generator, root_init: RootInit = "stationary"
) -> np.ndarray:
    """``reps`` independent with-replacement walks; returns a (reps, n) node array."""
    X = np.full((reps, t.n), -1, dtype=np.int64)
    seeds = _seed_slots(t)
    X[:, seeds] = draw_roots(g, root_init, (reps, seeds.size), rng)
    bounds = np.searchsorted(t.wave, np.arange(t.height + 2))
    for w in range(1, t.height + 1):
        lo, hi = bounds[w], bounds[w + 1]
        if t.artificial_root and w == 1:
            continue
        X[:, lo:hi] = draw_neighbors(g, X[:, t.parent[lo:hi]], rng)
    return X


def _sample(g: Graph, t: ReferralTree, assignment, meta: DesignMeta, y=None) -> WalkSample:
    s = WalkSample(t, assignment, g.deg[assignment[t.sample_nodes]], meta)
    return s if y is None else s.with_feature(y)


def tp_walk(
    g: Graph,
    t: ReferralTree,
    root_init: RootInit = "stationary",
    rng: np.random.Generator | None = None,
    y=None,
    seed: int | None = None,
) -> WalkSample:
    """(T, P)-walk: every referral is an independent kernel step.

    With an artificial root each seed is drawn independently from the root law.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    X = tp_walk_batch(g, t, 1, rng, root_init)[0]
    meta = DesignMeta(replacement=True, root_init=_root_law(g, root_init)[1], seed=seed)
    return _sample(g, t, X, meta, y)


def tp_walk_without_replacement(
    g: Graph,
    t: ReferralTree,
    root_init: RootInit = "stationary",
    rng: np.random.Generator | None = None,
    y=None,
    seed: int | None = None,
) -> WalkSample:
    """Referrals drawn uniformly from neighbours not yet sampled.

    Tree nodes are filled in index (breadth-first) order. A referral with no
    unsampled neighbour available is dropped together with its subtree and
    counted in ``meta.truncations``. Edge weights are ignored.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    law, label = _root_law(g, root_init)
    n = t.n
    X = np.full(n, -1, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    used = np.zeros(g.n, dtype=bool)
    indptr, indices = g.weights.indptr, g.weights.indices
    truncations = 0
    for k in range(n):
        if k == 0 and t.artificial_root:
            continue
        par = t.parent[k]
        if par >= 0 and not alive[par]:
            alive[k] = False
            continue
        if par < 0 or (t.artificial_root and par == 0):
            if law is None:
                node = int(root_init)
                if used[node]:
                    raise DegenerateError("fixed root cannot seed more than one walk without replacement")
            else:
                avail = np.where(used, 0.0, law)
                if avail.sum() <= 0:
                    alive[k] = False
                    truncations += 1
                    continue
                node = int(np.searchsorted(np.cumsum(avail), rng.random() * avail.sum(), side="right"))
                node = min(node, g.n - 1)
            if par < 0 and indptr[node + 1] == indptr[node]:
                raise DegenerateError("root has no neighbours")
        else:
            nb = indices[indptr[X[par]] : indptr[X[par] + 1]]
            cand = nb[~used[nb]]
            if cand.size == 0:
                alive[k] = False
                truncations += 1
                continue
            node = int(cand[rng.integers(cand.size)])
        X[k] = node
        used[node] = True

    new_id = np.cumsum(alive) - 1
    keep = np.flatnonzero(alive)
    if t.artificial_root:
        keep = np.concatenate(([0], keep[keep > 0]))
        alive[0] = True
        new_id = np.cumsum(alive) - 1
    parent = np.where(t.parent[keep] < 0, -1, new_id[np.maximum(t.parent[keep], 0)])
    realised = ReferralTree(parent=parent.astype(np.int64), wave=t.wave[keep].copy(), artificial_root=t.artificial_root)
    meta = DesignMeta(replacement=False, root_init=label, seed=seed, truncations=truncations)
    return _sample(g, realised, X[keep], meta, y)


def observe_feature(s: WalkSample, y) -> np.ndarray:
    """Feature values at the sampled graph nodes (artificial root excluded)."""
    y = np.asarray(y, dtype=float)
    nodes = s.sampled
    if nodes.size and nodes.max() >= y.size:
        raise DataError("feature vector is shorter than the graph")
    vals = y[nodes]
    if np.any(np.isnan(vals)):
        raise DataError("feature missing for a sampled node")
    return vals


def iid_stationary(g: Graph, n: int, rng: np.random.Generator) -> np.ndarray:
    """n independent draws from pi."""
    return draw_roots(g, "stationary", n, rng)


def wave_count_walk(
    P, pi, m: int, h: int, reps: int, rng: np.random.Generator
) -> np.ndarray:
    """Per-wave occupation counts of a stationary walk on an m-tree.

    Returns ``z`` with shape (reps, h + 1, N) where ``z[r, i, k]`` counts the
    wave-i tree nodes sitting on state k. Given wave i, the ``m * z[r, i, k]``
    children of state-k nodes split multinomially over row k of P, so the
    law of the counts (and of every wave sum) is that of the full walk.
    """
    P = np.asarray(P, dtype=float)
    pi = np.asarray(pi, dtype=float)
    N = pi.size
    if P.shape != (N, N):
        raise DimensionError("P and pi disagree")
    z = np.zeros((reps, h + 1, N), dtype=np.int64)
    roots = np.searchsorted(np.cumsum(pi), rng.random(reps) * pi.sum(), side="right").clip(0, N - 1)
    z[np.arange(reps), 0, roots] = 1
    for i in range(1, h + 1):
        nxt = np.zeros((reps, N), dtype=np.int64)
        for k in range(N):
            trials = m * z[:, i - 1, k]
            if trials.any():
                nxt += rng.multinomial(trials, P[k])
        z[:, i] = nxt
    return z


def write_walk_csv(s: WalkSample, path: str | Path) -> None:
    """``tree_node,graph_node,wave,y,deg`` (artificial root omitted)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tree_node", "graph_node", "wave", "y", "deg"])
        for k, node in enumerate(s.tree.sample_nodes):
            yv = "" if s.y_obs is None else repr(float(s.y_obs[k]))
            w.writerow([int(node), int(s.assignment[node]), int(s.tree.wave[node]), yv, repr(float(s.deg_obs[k]))])
