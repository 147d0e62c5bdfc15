"""Referral trees and the distance generating function G.

Trees are stored as parent arrays in breadth-first order (node 0 is the
root, every parent precedes its children). ``G(z) = E z^D`` where D is the
distance between two nodes drawn independently and uniformly from the tree.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import (
    CapacityError,
    ConstructionError,
    DomainError,
    EdgeListParseError,
    ExtinctionError,
)

DEFAULT_NODE_CAP = 1_000_000
DEFAULT_PGF_CAP = 200_000
DEFAULT_RESTARTS = 1000


@dataclass(frozen=True, eq=False)
class ReferralTree:
    """Rooted tree indexing a sample.

    ``parent[0] == -1``; for k > 0, ``parent[k] < k``. When
    ``artificial_root`` is set node 0 is a placeholder joining several seeds
    and is not itself a sample.
    """

    parent: np.ndarray
    wave: np.ndarray
    artificial_root: bool = False

    @property
    def n(self) -> int:
        return self.parent.size

    @property
    def height(self) -> int:
        return int(self.wave.max())

    @property
    def offspring(self) -> np.ndarray:
        return np.bincount(self.parent[1:], minlength=self.n)

    @property
    def wave_sizes(self) -> np.ndarray:
        return np.bincount(self.wave)

    def children(self) -> list[np.ndarray]:
        order = np.argsort(self.parent[1:], kind="stable") + 1
        bounds = np.searchsorted(self.parent[order], np.arange(self.n + 1))
        return [order[bounds[k] : bounds[k + 1]] for k in range(self.n)]

    @property
    def sample_nodes(self) -> np.ndarray:
        """Tree nodes that carry an observation."""
        return np.arange(1 if self.artificial_root else 0, self.n)

    def branching(self) -> int | None:
        """m if this is a complete m-tree, else None."""
        eta = self.offspring
        inner = self.wave < self.height
        if self.artificial_root or self.n == 1:
            return None if self.artificial_root else 1
        m = int(eta[0])
        if m < 1 or np.any(eta[inner] != m) or np.any(eta[~inner] != 0):
            return None
        return m


def tree_from_parents(parent: Sequence[int], artificial_root: bool = False) -> ReferralTree:
    """Validate a parent array and relabel it into breadth-first order."""
    parent = np.asarray(parent, dtype=np.int64)
    n = parent.size
    if n == 0:
        raise ConstructionError("empty tree")
    roots = np.flatnonzero(parent < 0)
    if roots.size != 1 or roots[0] != 0:
        raise ConstructionError("node 0 must be the unique root (parent -1)")
    if np.any(parent[1:] >= n):
        raise ConstructionError("parent id out of range")
    kids: list[list[int]] = [[] for _ in range(n)]
    for k in range(1, n):
        kids[parent[k]].append(k)
    order = []
    queue = deque([0])
    while queue:
        v = queue.popleft()
        order.append(v)
        queue.extend(kids[v])
    if len(order) != n:
        raise ConstructionError("parent array contains a cycle or is disconnected")
    new_id = np.empty(n, dtype=np.int64)
    new_id[order] = np.arange(n)
    new_parent = np.full(n, -1, dtype=np.int64)
    old = np.array(order)
    new_parent[1:] = new_id[parent[old[1:]]]
    return _with_waves(new_parent, artificial_root)


def _with_waves(parent: np.ndarray, artificial_root: bool = False) -> ReferralTree:
    wave = np.zeros(parent.size, dtype=np.int64)
    for k in range(1, parent.size):
        wave[k] = wave[parent[k]] + 1
    return ReferralTree(parent=parent, wave=wave, artificial_root=artificial_root)


def m_tree(m: int, h: int, node_cap: int = DEFAULT_NODE_CAP) -> ReferralTree:
    """Complete m-ary tree of height h."""
    if m < 1 or h < 0:
        raise DomainError(f"need m >= 1 and h >= 0, got m={m}, h={h}")
    n = h + 1 if m == 1 else (m ** (h + 1) - 1) // (m - 1)
    if n > node_cap:
        raise CapacityError(f"m-tree has {n} nodes, above the cap {node_cap}")
    k = np.arange(n)
    parent = np.where(k == 0, -1, (k - 1) // m)
    sizes = m ** np.arange(h + 1) if m > 1 else np.ones(h + 1, dtype=np.int64)
    wave = np.repeat(np.arange(h + 1), sizes)
    return ReferralTree(parent=parent.astype(np.int64), wave=wave.astype(np.int64))


def _validate_offspring(dist) -> np.ndarray:
    dist = np.asarray(dist, dtype=float)
    if dist.ndim != 1 or dist.size == 0 or np.any(dist < 0) or abs(dist.sum() - 1) > 1e-9:
        raise DomainError("offspring distribution must be a probability vector")
    return dist / dist.sum()


def galton_watson(
    offspring_dist,
    rng: np.random.Generator,
    max_wave: int | None = None,
    node_cap: int | None = None,
    restart_on_extinction: bool | None = None,
    max_restarts: int = DEFAULT_RESTARTS,
    hard_cap: int = DEFAULT_NODE_CAP,
) -> ReferralTree:
    """Grow a Galton-Watson tree breadth-first.

    Exactly one of ``max_wave`` and ``node_cap`` must be given. With
    ``max_wave=h`` the tree holds waves 0..h. With ``node_cap=c`` growth stops
    at the first completed wave that brings the total to at least c nodes;
    trees that die out first are discarded and regrown (restart is the
    default in this mode).
    """
    dist = _validate_offspring(offspring_dist)
    if (max_wave is None) == (node_cap is None):
        raise DomainError("give exactly one of max_wave and node_cap")
    if restart_on_extinction is None:
        restart_on_extinction = node_cap is not None
    if restart_on_extinction and dist[0] >= 1:
        raise DomainError("restart mode needs P(eta >= 1) > 0")
    support = np.arange(dist.size)

    for _ in range(max_restarts):
        parent = [np.array([-1])]
        frontier = np.array([0])
        total, wave = 1, 0
        while True:
            if max_wave is not None and wave >= max_wave:
                break
            eta = rng.choice(support, size=frontier.size, p=dist)
            kids = np.repeat(frontier, eta)
            if kids.size == 0:
                break
            parent.append(kids)
            frontier = np.arange(total, total + kids.size)
            total += kids.size
            wave += 1
            if total > hard_cap:
                raise CapacityError(f"tree exceeded {hard_cap} nodes")
            if node_cap is not None and total >= node_cap:
                break
        reached = total >= node_cap if node_cap is not None else wave >= max_wave
        if reached or not restart_on_extinction:
            return _with_waves(np.concatenate(parent).astype(np.int64))
    raise ExtinctionError(f"tree went extinct {max_restarts} times in a row")


def truncate_bfs(t: ReferralTree, n: int) -> ReferralTree:
    """First n nodes in breadth-first order."""
    if n < 1 or n > t.n:
        raise DomainError(f"cannot keep {n} of {t.n} nodes")
    return ReferralTree(parent=t.parent[:n].copy(), wave=t.wave[:n].copy(), artificial_root=t.artificial_root)


def attach_artificial_root(subtrees: Sequence[ReferralTree]) -> ReferralTree:
    """Join several seed trees under a new placeholder root."""
    if len(subtrees) == 0:
        raise DomainError("need at least one seed subtree")
    parent = [-1]
    offset = 1
    for sub in subtrees:
        p = sub.parent.copy()
        p[1:] += offset
        p[0] = 0
        parent.extend(p.tolist())
        offset += sub.n
    return tree_from_parents(parent, artificial_root=True)


# --------------------------------------------------------------------------
# Distance distribution


@dataclass(frozen=True, eq=False)
class DistancePGF:
    """Ordered-pair distance histogram of a tree.

    ``counts[d]`` is the number of ordered pairs (I, J), I and J ranging over
    the same n nodes, with ``d(I, J) = d``.
    """

    n: int
    counts: np.ndarray

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / float(self.n) ** 2

    def __call__(self, z):
        return npoly.polyval(z, self.probabilities)


def _depth_convolution_counts(t: ReferralTree) -> np.ndarray:
    # For each node v, pairs whose lowest common ancestor is v are counted by
    # convolving the depth histograms of v's child subtrees.
    counts = np.zeros(2 * t.height + 1, dtype=np.int64)
    counts[0] = t.n
    hist: list[np.ndarray | None] = [None] * t.n
    kids = t.children()
    for v in range(t.n - 1, -1, -1):
        acc = np.ones(1, dtype=np.int64)
        for c in kids[v]:
            shifted = np.concatenate(([0], hist[c]))
            cross = np.convolve(acc, shifted)
            counts[: cross.size] += 2 * cross
            if shifted.size > acc.size:
                shifted[: acc.size] += acc
                acc = shifted
            else:
                acc[: shifted.size] += shifted
            hist[c] = None
        hist[v] = acc
    return np.trim_zeros(counts, "b")


def distance_pgf(
    t: ReferralTree, include_artificial_root: bool = True, node_cap: int = DEFAULT_PGF_CAP
) -> DistancePGF:
    """Exact distance histogram over all ordered node pairs.

    The artificial root, when present, is part of the node set by default;
    ``include_artificial_root=False`` drops the pairs that involve it while
    still measuring seed-to-seed distances through it.
    """
    if t.n > node_cap:
        raise CapacityError(f"tree has {t.n} nodes, above the cap {node_cap}")
    counts = _depth_convolution_counts(t)
    n = t.n
    if t.artificial_root and not include_artificial_root:
        ws = t.wave_sizes
        counts = counts.copy()
        counts[0] -= 1
        counts[1 : ws.size] -= 2 * ws[1:]
        counts = np.trim_zeros(counts, "b")
        n -= 1
        if n == 0:
            raise ConstructionError("no nodes left after removing the artificial root")
    return DistancePGF(n=n, counts=counts)


def bfs_distance_counts(t: ReferralTree, nodes: Sequence[int] | None = None) -> np.ndarray:
    """Ordered-pair distance histogram restricted to ``nodes`` (one BFS per node)."""
    nodes = np.arange(t.n) if nodes is None else np.asarray(nodes)
    member = np.zeros(t.n, dtype=bool)
    member[nodes] = True
    adj: list[list[int]] = [[] for _ in range(t.n)]
    for k in range(1, t.n):
        adj[k].append(int(t.parent[k]))
        adj[int(t.parent[k])].append(k)
    counts = np.zeros(2 * t.height + 1, dtype=np.int64)
    for s in nodes:
        dist = np.full(t.n, -1)
        dist[s] = 0
        queue = deque([int(s)])
        while queue:
            v = queue.popleft()
            for u in adj[v]:
                if dist[u] < 0:
                    dist[u] = dist[v] + 1
                    queue.append(u)
        counts += np.bincount(dist[member], minlength=counts.size)
    return np.trim_zeros(counts, "b")


class PGFValue(NamedTuple):
    G: np.ndarray | float
    dG: np.ndarray | float
    d2G: np.ndarray | float


def pgf_eval(p: DistancePGF, z) -> PGFValue:
    """``G(z)``, ``G'(z)`` and ``G''(z)`` by exact polynomial evaluation."""
    c = p.probabilities
    return PGFValue(
        npoly.polyval(z, c),
        npoly.polyval(z, npoly.polyder(c, 1)) if c.size > 1 else np.zeros_like(np.asarray(z, float)),
        npoly.polyval(z, npoly.polyder(c, 2)) if c.size > 2 else np.zeros_like(np.asarray(z, float)),
    )


class ConvexityScan(NamedTuple):
    z: np.ndarray
    d2G: np.ndarray
    nonconvex_intervals: list[tuple[float, float]]

    @property
    def convex(self) -> bool:
        return not self.nonconvex_intervals


def convexity_scan(p: DistancePGF, lambda_min: float = -1.0, step: float = 0.01, tol: float = 1e-12) -> ConvexityScan:
    """Evaluate ``G''`` on a grid over ``[lambda_min, 1]`` and report negative runs."""
    if not (-1 <= lambda_min < 1):
        raise DomainError(f"lambda_min must lie in [-1, 1), got {lambda_min}")
    if step <= 0:
        raise DomainError("grid step must be positive")
    k = int(np.floor((1 - lambda_min) / step + 1e-9))
    z = lambda_min + step * np.arange(k + 1)
    if z[-1] < 1 - 1e-12:
        z = np.append(z, 1.0)
    z = np.clip(z, -1.0, 1.0)
    d2 = np.asarray(pgf_eval(p, z).d2G, dtype=float)
    neg = d2 < -tol
    intervals = []
    k = 0
    while k < z.size:
        if neg[k]:
            start = k
            while k + 1 < z.size and neg[k + 1]:
                k += 1
            intervals.append((float(z[start]), float(z[k])))
        k += 1
    return ConvexityScan(z, d2, intervals)


# --------------------------------------------------------------------------
# CSV


def write_tree_csv(t: ReferralTree, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["node", "parent", "wave"])
        for k in range(t.n):
            w.writerow([k, int(t.parent[k]), int(t.wave[k])])


def read_tree_csv(path: str | Path, artificial_root: bool = False) -> ReferralTree:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["node", "parent", "wave"]:
            raise EdgeListParseError("tree CSV header must be 'node,parent,wave'", 1)
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows[int(row[0])] = int(row[1])
            except (ValueError, IndexError):
                raise EdgeListParseError(f"cannot parse {row!r}", lineno) from None
    if sorted(rows) != list(range(len(rows))):
        raise ConstructionError("tree node ids must be 0..n-1")
    return tree_from_parents([rows[k] for k in range(len(rows))], artificial_root=artificial_root)
