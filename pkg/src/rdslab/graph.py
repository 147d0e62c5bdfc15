"""Population graphs, the random-walk kernel and its spectrum.

A :class:`Graph` is an undirected, weighted, simple graph whose random walk
``P_ij = w_ij / deg(i)`` is reversible with stationary law ``pi ~ deg``.
:func:`spectral_decomposition` diagonalises ``P`` through the symmetric
operator ``D^-1/2 W D^-1/2`` and returns eigenfunctions that are orthonormal
in the pi-weighted inner product.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import (
    CapacityError,
    ConsistencyError,
    ConstructionError,
    DataError,
    DegenerateError,
    DimensionError,
    DomainError,
    EdgeListParseError,
    NotApplicableError,
    NumericalError,
)

DEFAULT_DENSE_LIMIT = 10_000
UNIT_MODULUS_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Graph:
    """Weighted undirected population graph.

    Attributes:
        weights: symmetric CSR matrix of edge weights with an empty diagonal.
        deg: weighted degree of every node.
        pi: stationary distribution of the simple (weighted) random walk.
        labels: original node ids, ``labels[k]`` is the id of internal node k.
        blocks: optional block membership (set by the block-model generators).
        n_dropped: nodes discarded when keeping the largest component.
    """

    weights: sp.csr_matrix
    deg: np.ndarray
    pi: np.ndarray
    labels: np.ndarray
    blocks: np.ndarray | None = None
    n_dropped: int = 0
    _keys: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.deg.shape[0]

    @property
    def is_weighted(self) -> bool:
        return bool(np.any(self.weights.data != 1.0))

    @property
    def mean_degree(self) -> float:
        return float(self.deg.mean())

    def transition_matrix(self) -> np.ndarray:
        """Dense ``P = D^-1 W``."""
        return np.asarray(self.weights.multiply(1.0 / self.deg[:, None]).todense())

    def neighbors(self, i: int) -> np.ndarray:
        w = self.weights
        return w.indices[w.indptr[i] : w.indptr[i + 1]]

    def row_keys(self) -> np.ndarray:
        """Row-offset cumulative transition probabilities, aligned with ``weights.data``.

        Entry k of row i is ``i + sum_{j<=k} P_ij``, so the keys increase
        globally and row i ends exactly at ``i + 1``. A draw from row i is
        ``searchsorted(keys, i + u, side="right")`` with u uniform on [0, 1).
        """
        if self._keys is None:
            w = self.weights
            rows = np.repeat(np.arange(self.n), np.diff(w.indptr))
            local = np.cumsum(w.data) - np.repeat(np.cumsum(self.deg) - self.deg, np.diff(w.indptr))
            keys = rows + local / self.deg[rows]
            keys[w.indptr[1:] - 1] = np.arange(1, self.n + 1)
            object.__setattr__(self, "_keys", keys)
        return self._keys


def graph_from_weights(
    weights, labels: Sequence[int] | None = None, blocks=None, prune: bool = True
) -> Graph:
    """Build a :class:`Graph` from a dense or sparse weight matrix.

    Disconnected input is reduced to its largest connected component when
    ``prune`` is set; otherwise it raises :class:`ConstructionError`.
    """
    w = sp.csr_matrix(weights, dtype=float)
    if w.shape[0] != w.shape[1]:
        raise DimensionError(f"weight matrix must be square, got {w.shape}")
    w.eliminate_zeros()
    if w.nnz and w.data.min() < 0:
        raise DomainError("edge weights must be nonnegative")
    if w.diagonal().any():
        raise DomainError("self-loops are not allowed (w_ii must be 0)")
    asym = abs(w - w.T)
    if asym.nnz and asym.max() > 1e-12 * max(1.0, abs(w).max()):
        raise DomainError("weight matrix is not symmetric")
    n = w.shape[0]
    labels = np.arange(n) if labels is None else np.asarray(labels)
    blocks = None if blocks is None else np.asarray(blocks)
    if n == 0:
        raise ConstructionError("empty graph")

    n_comp, comp = connected_components(w, directed=False)
    dropped = 0
    if n_comp > 1:
        if not prune:
            raise ConstructionError(f"graph has {n_comp} connected components")
        sizes = np.bincount(comp)
        keep = np.flatnonzero(comp == np.argmax(sizes))
        dropped = n - keep.size
        w = w[keep][:, keep].tocsr()
        labels = labels[keep]
        if blocks is not None:
            blocks = blocks[keep]
        warnings.warn(f"kept largest connected component; dropped {dropped} nodes")
    w.sort_indices()
    deg = np.asarray(w.sum(axis=1)).ravel()
    if deg.size == 0 or np.any(deg <= 0):
        raise ConstructionError("graph is empty after pruning isolated nodes")
    pi = deg / deg.sum()
    return Graph(weights=w, deg=deg, pi=pi, labels=labels, blocks=blocks, n_dropped=dropped)


def from_edge_list(lines: Iterable[str], n: int | None = None) -> Graph:
    """Parse whitespace separated ``i j w`` records (``w`` defaults to 1).

    Blank lines and ``#`` comments are ignored. Node ids are 0-based; ``n``
    defaults to one more than the largest id seen.
    """
    rows, cols, vals = [], [], []
    seen: dict[tuple[int, int], int] = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise EdgeListParseError(f"expected 'i j w', got {raw.strip()!r}", lineno)
        try:
            i, j = int(parts[0]), int(parts[1])
            wt = float(parts[2]) if len(parts) == 3 else 1.0
        except ValueError:
            raise EdgeListParseError(f"cannot parse {raw.strip()!r}", lineno) from None
        if i < 0 or j < 0 or (n is not None and max(i, j) >= n):
            raise EdgeListParseError(f"node id out of range in {raw.strip()!r}", lineno)
        if not np.isfinite(wt):
            raise EdgeListParseError("weight is not finite", lineno)
        if wt < 0:
            raise DomainError(f"line {lineno}: negative weight {wt}")
        if i == j:
            raise EdgeListParseError("self-loop", lineno)
        key = (min(i, j), max(i, j))
        if key in seen:
            raise EdgeListParseError(f"duplicate edge {key} (first on line {seen[key]})", lineno)
        seen[key] = lineno
        rows.append(i)
        cols.append(j)
        vals.append(wt)
    if not rows:
        raise ConstructionError("edge list contains no edges")
    size = n if n is not None else max(max(rows), max(cols)) + 1
    upper = sp.coo_matrix((vals, (rows, cols)), shape=(size, size))
    return graph_from_weights(upper + upper.T)


def read_edge_list(path: str | Path, n: int | None = None) -> Graph:
    with open(path) as fh:
        return from_edge_list(fh, n=n)


def write_edge_list(g: Graph, path: str | Path) -> None:
    upper = sp.triu(g.weights, k=1).tocoo()
    with open(path, "w") as fh:
        fh.write("# i j w\n")
        for i, j, wt in zip(upper.row, upper.col, upper.data):
            fh.write(f"{g.labels[i]} {g.labels[j]} {wt:.17g}\n")


def read_node_attributes(path: str | Path, g: Graph) -> tuple[str, np.ndarray]:
    """Read a ``node,<feature>`` CSV and align it with the graph's nodes."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != 2 or header[0].strip() != "node":
            raise EdgeListParseError("attribute file header must be 'node,<feature>'", 1)
        name = header[1].strip()
        values: dict[int, float] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                values[int(row[0])] = float(row[1])
            except (ValueError, IndexError):
                raise EdgeListParseError(f"cannot parse {row!r}", lineno) from None
    missing = [int(lab) for lab in g.labels if int(lab) not in values]
    if missing:
        raise DataError(f"feature {name!r} missing for nodes {missing[:10]}")
    return name, np.array([values[int(lab)] for lab in g.labels])


# --------------------------------------------------------------------------
# Stochastic block model


def _decode_lower(k: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # k = i(i-1)/2 + j with 0 <= j < i
    i = np.floor((1 + np.sqrt(1 + 8 * k.astype(float))) / 2).astype(np.int64)
    i -= (i * (i - 1) // 2) > k
    i += ((i + 1) * i // 2) <= k
    return i, k - i * (i - 1) // 2


def sbm_edges(block_sizes: Sequence[int], B, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Sample the upper-triangle edge list of a Bernoulli block model.

    For every block pair the edge count is drawn from its binomial law and
    that many distinct pairs are picked uniformly, which is equivalent to
    independent Bernoulli trials per pair.
    """
    B = np.asarray(B, dtype=float)
    sizes = np.asarray(block_sizes, dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    src, dst = [], []
    for u in range(len(sizes)):
        for v in range(u, len(sizes)):
            npairs = sizes[u] * (sizes[u] - 1) // 2 if u == v else sizes[u] * sizes[v]
            if npairs == 0 or B[u, v] == 0:
                continue
            m = rng.binomial(npairs, B[u, v])
            k = rng.choice(npairs, size=m, replace=False)
            if u == v:
                i, j = _decode_lower(k)
                src.append(offsets[u] + i)
                dst.append(offsets[u] + j)
            else:
                src.append(offsets[u] + k // sizes[v])
                dst.append(offsets[v] + k % sizes[v])
    if not src:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(src), np.concatenate(dst)


def sbm_sample(n: int, p: float, r: float, rng: np.random.Generator) -> Graph:
    """Two equal-block SBM: within-block edges w.p. ``p``, between w.p. ``r``.

    The largest connected component is returned; ``Graph.blocks`` holds the
    0/1 block labels of the retained nodes.
    """
    if not (0 <= r <= p <= 1):
        raise DomainError(f"need 0 <= r <= p <= 1, got p={p}, r={r}")
    if p + r == 0:
        raise DegenerateError("p + r = 0 gives an empty graph")
    if n < 2 or n % 2:
        raise DomainError(f"n must be even and >= 2, got {n}")
    half = n // 2
    i, j = sbm_edges([half, half], [[p, r], [r, p]], rng)
    if i.size == 0:
        raise ConstructionError("SBM draw produced no edges")
    upper = sp.coo_matrix((np.ones(i.size), (i, j)), shape=(n, n))
    blocks = np.repeat([0, 1], half)
    return graph_from_weights(upper + upper.T, blocks=blocks)


def sbm_from_config(cfg: dict) -> Graph:
    """Build an SBM graph from a ``{n, p, r, seed}`` mapping."""
    rng = np.random.default_rng(int(cfg.get("seed", 0)))
    return sbm_sample(int(cfg["n"]), float(cfg["p"]), float(cfg["r"]), rng)


def sbm_params(lambda2: float, degree_sum: float = 0.01) -> tuple[float, float]:
    """(p, r) with ``p + r = degree_sum`` and ``(p - r)/(p + r) = lambda2``."""
    p = degree_sum * (1 + lambda2) / 2
    return p, degree_sum - p


def complete_block_graph(block_sizes: Sequence[int], B) -> Graph:
    """Weighted graph with ``w_ij = B[z(i), z(j)]`` for every pair ``i != j``."""
    B = np.asarray(B, dtype=float)
    z = np.repeat(np.arange(len(block_sizes)), block_sizes)
    w = B[z][:, z]
    np.fill_diagonal(w, 0.0)
    return graph_from_weights(w, blocks=z, prune=False)


# --------------------------------------------------------------------------
# Spectrum


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigen-decomposition of a reversible kernel.

    ``eigenfunctions[:, l]`` is f_l; eigenvalues are ordered by modulus with
    ``eigenvalues[0] == 1`` and ``eigenfunctions[:, 0] == 1``.
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    pi: np.ndarray

    @property
    def n(self) -> int:
        return self.eigenvalues.size

    @property
    def lambda2(self) -> float:
        return float(self.eigenvalues[1]) if self.n > 1 else 0.0

    @property
    def lambda_min(self) -> float:
        return float(self.eigenvalues.min())

    def coefficients(self, y) -> np.ndarray:
        """``<y, f_l>_pi`` for every l (index 0 is ``E_pi y``)."""
        y = np.asarray(y, dtype=float)
        if y.shape != self.pi.shape:
            raise DimensionError(f"feature has shape {y.shape}, expected {self.pi.shape}")
        return self.eigenfunctions.T @ (y * self.pi)

    def power(self, t: int) -> np.ndarray:
        """``P^t`` rebuilt from the spectral representation."""
        f = self.eigenfunctions
        return (f * self.eigenvalues**t) @ f.T * self.pi[None, :]

    def return_probabilities(self, t: int) -> np.ndarray:
        """Diagonal of ``P^t``: ``pi_i * sum_l lambda_l^t f_l(i)^2``."""
        return self.pi * ((self.eigenfunctions**2) @ (self.eigenvalues**t))

    def check_gap(self) -> None:
        if self.n > 1 and 1 - abs(self.lambda2) < UNIT_MODULUS_TOL:
            raise DegenerateError(f"|lambda_2| = {abs(self.lambda2):.12g} is numerically 1")


def _order(evals: np.ndarray, top: int) -> np.ndarray:
    rest = [k for k in range(evals.size) if k != top]
    rest.sort(key=lambda k: (-round(abs(evals[k]), 12), -evals[k]))
    return np.array([top] + rest, dtype=int)


def _fix_signs(f: np.ndarray) -> np.ndarray:
    for col in range(f.shape[1]):
        nz = np.flatnonzero(np.abs(f[:, col]) > 1e-12)
        if nz.size and f[nz[0], col] < 0:
            f[:, col] *= -1
    return f


def kernel_spectrum(P, pi) -> Spectrum:
    """Spectrum of a reversible kernel ``P`` with stationary law ``pi``."""
    P = np.asarray(P, dtype=float)
    pi = np.asarray(pi, dtype=float)
    s = np.sqrt(pi)
    S = s[:, None] * P / s[None, :]
    S = (S + S.T) / 2
    try:
        evals, vecs = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    top = int(np.argmin(np.abs(evals - 1.0)))
    order = _order(evals, top)
    evals = evals[order]
    f = vecs[:, order] / s[:, None]
    f[:, 0] = 1.0
    evals[0] = 1.0
    return Spectrum(eigenvalues=evals, eigenfunctions=_fix_signs(f), pi=pi)


def spectral_decomposition(g: Graph, dense_limit: int = DEFAULT_DENSE_LIMIT) -> Spectrum:
    """Full eigendecomposition of the walk on ``g``.

    Uses the symmetrised operator ``S_ij = w_ij / sqrt(deg_i deg_j)``; the
    eigenfunctions are ``f_l(i) = v_l(i) / sqrt(pi_i)``.
    """
    if g.n > dense_limit:
        raise CapacityError(f"n = {g.n} exceeds the dense eigensolver limit {dense_limit}")
    d = 1.0 / np.sqrt(g.deg)
    S = np.asarray(g.weights.multiply(d[:, None]).multiply(d[None, :]).todense())
    try:
        evals, vecs = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    top = int(np.argmin(np.abs(evals - 1.0)))
    order = _order(evals, top)
    evals = evals[order]
    f = vecs[:, order] / np.sqrt(g.pi)[:, None]
    f[:, 0] = 1.0
    evals[0] = 1.0
    return Spectrum(eigenvalues=evals, eigenfunctions=_fix_signs(f), pi=g.pi)


def second_eigenvalue(g: Graph) -> float:
    """Second largest-modulus eigenvalue of the walk, via a sparse solver.

    Cheap route for large graphs where only the realised lambda_2 is needed.
    """
    from scipy.sparse.linalg import eigsh

    if g.n <= 50:
        return spectral_decomposition(g).lambda2
    d = sp.diags(1.0 / np.sqrt(g.deg))
    S = d @ g.weights @ d
    # fixed start vector; ARPACK's default is random and breaks reproducibility
    v0 = np.random.default_rng(0).uniform(0.5, 1.5, g.n)
    evals = eigsh(S, k=3, which="LM", v0=v0, return_eigenvectors=False)
    evals = sorted(evals, key=lambda x: (-round(abs(x), 12), -x))
    top = int(np.argmin(np.abs(np.array(evals) - 1.0)))
    return float([e for k, e in enumerate(evals) if k != top][0])


def pi_inner(y, f, pi) -> float:
    """``<y, f>_pi = sum_i y(i) f(i) pi_i``."""
    y, f, pi = (np.asarray(a, dtype=float) for a in (y, f, pi))
    if not (y.shape == f.shape == pi.shape):
        raise DimensionError(f"shape mismatch: {y.shape}, {f.shape}, {pi.shape}")
    return float(np.sum(y * f * pi))


def stationary_residual(P, pi) -> float:
    """``||pi P - pi||_1``."""
    return float(np.abs(np.asarray(pi) @ np.asarray(P) - np.asarray(pi)).sum())


# --------------------------------------------------------------------------
# Block kernels and the CLT conditions


@dataclass(frozen=True)
class BlockModelSpec:
    block_sizes: tuple[int, ...]
    B: np.ndarray
    block_features: tuple[float, ...] | None = None

    def __post_init__(self):
        B = np.asarray(self.B, dtype=float)
        K = len(self.block_sizes)
        if B.shape != (K, K):
            raise DimensionError(f"B must be {K}x{K}, got {B.shape}")
        if not np.allclose(B, B.T, atol=0, rtol=0):
            raise DomainError("B must be symmetric")
        if np.any(B < 0):
            raise DomainError("B entries must be nonnegative")
        object.__setattr__(self, "B", B)

    @property
    def K(self) -> int:
        return len(self.block_sizes)


def block_transition(spec: BlockModelSpec) -> tuple[np.ndarray, float]:
    """Block-level kernel ``E(D)^-1 E(A)`` and its second eigenvalue.

    Row u of the kernel is the expected share of a block-u node's edges that
    land in each block. For two equal blocks with ``B = [[p, r], [r, p]]`` the
    second eigenvalue is ``(p - r)/(p + r)``.
    """
    if spec.K < 2:
        raise DomainError("need at least two blocks")
    sizes = np.asarray(spec.block_sizes, dtype=float)
    EA = spec.B * sizes[None, :]
    ED = EA.sum(axis=1)
    if np.any(ED <= 0):
        raise DegenerateError("a block has zero expected degree")
    P = EA / ED[:, None]
    pi = sizes * ED / np.sum(sizes * ED)
    return P, kernel_spectrum(P, pi).lambda2


def two_block_kernel(p: float) -> np.ndarray:
    """``[[p, 1-p], [1-p, p]]``."""
    return np.array([[p, 1 - p], [1 - p, p]])


def circulant_block_kernel(K: int, p: float) -> np.ndarray:
    """2K-block kernel ``p 1(u=v) + (1-p)/(2K-1) 1(u!=v)``."""
    m = 2 * K
    P = np.full((m, m), (1 - p) / (m - 1))
    np.fill_diagonal(P, p)
    return P


def stationary_distribution(P) -> np.ndarray:
    """Left Perron vector of a row-stochastic matrix."""
    P = np.asarray(P, dtype=float)
    evals, vecs = np.linalg.eig(P.T)
    v = np.real(vecs[:, np.argmin(np.abs(evals - 1))])
    return v / v.sum()


class C2PrimeResult(NamedTuple):
    gamma: float
    passed: bool
    row_l1_to_pi: float  # max_i sum_j |P_ij - pi_j|, the coarser necessary condition


def check_c2prime(P, pi, tol: float = 1e-8) -> C2PrimeResult:
    """Sup-norm contraction constant of ``P`` on mean-zero functions.

    For each row, ``max_{||f||<=1, E_pi f=0} |(Pf)_i| = min_c sum_j |P_ij - c pi_j|``
    (LP duality); the minimiser is the pi-weighted median of ``P_ij/pi_j``.
    The condition passes when the constant is below ``1/sqrt(2)``.
    """
    P = np.asarray(P, dtype=float)
    pi = np.asarray(pi, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] != pi.size:
        raise DimensionError("P must be square and match pi")
    if stationary_residual(P, pi) > tol:
        raise ConsistencyError("pi is not stationary for P")
    gamma = 0.0
    for row in P:
        ratio = row / pi
        order = np.argsort(ratio)
        cum = np.cumsum(pi[order])
        c = ratio[order][np.searchsorted(cum, 0.5 * cum[-1])]
        gamma = max(gamma, float(np.abs(row - c * pi).sum()))
    coarse = float(np.abs(P - pi[None, :]).sum(axis=1).max())
    return C2PrimeResult(gamma, gamma < 1 / np.sqrt(2), coarse)


def block_levels(y, blocks) -> np.ndarray:
    """Per-block feature value; raises if ``y`` is not constant within blocks."""
    y = np.asarray(y, dtype=float)
    blocks = np.asarray(blocks)
    K = int(blocks.max()) + 1
    levels = np.empty(K)
    for b in range(K):
        vals = y[blocks == b]
        if vals.size == 0:
            raise NotApplicableError(f"block {b} is empty")
        if np.ptp(vals) > 0:
            raise NotApplicableError(f"feature is not constant on block {b}")
        levels[b] = vals[0]
    return levels


def check_c1_sufficient(kernel, levels, tol: float = 1e-12) -> bool:
    """Symmetry condition implying vanishing odd moments of the 2-tree sum.

    ``levels[u]`` is the feature value on block u. True when the level set is
    closed under negation and the level kernel ``p(a, b)`` (probability that
    a child's level is b given the parent's level a) satisfies
    ``p(a, b) = p(-a, -b)``.
    """
    P = np.asarray(kernel, dtype=float)
    levels = np.asarray(levels, dtype=float)
    if P.shape != (levels.size, levels.size):
        raise DimensionError("kernel and levels disagree in size")
    values = np.unique(levels)
    if not all(np.any(np.abs(values + v) <= tol) for v in values):
        return False
    idx = {v: k for k, v in enumerate(values)}
    lvl = np.array([idx[v] for v in levels])
    level_kernel = np.full((values.size, values.size), np.nan)
    for u in range(levels.size):
        row = np.bincount(lvl, weights=P[u], minlength=values.size)
        prev = level_kernel[lvl[u]]
        if not np.isnan(prev[0]) and np.max(np.abs(prev - row)) > tol:
            raise NotApplicableError("level transition p(u, v) is not well defined")
        level_kernel[lvl[u]] = row
    neg = np.array([idx[values[np.argmin(np.abs(values + v))]] for v in values])
    return bool(np.max(np.abs(level_kernel - level_kernel[np.ix_(neg, neg)])) <= tol)
