"""Exact and plug-in variance of sample averages over tree-indexed walks.

For a stationary walk on a single-rooted tree the sample average of a
feature has variance ``sum_{l>=2} <y, f_l>_pi^2 G(lambda_l)``, where G is the
distance generating function of the tree. The plug-in estimator replaces
the eigen-expansion by ``G(R_hat) * var_hat``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DomainError, PreconditionError
from .estimators import vh_estimate
from .graph import Spectrum
from .tree import DistancePGF, convexity_scan, pgf_eval
from .walk import WalkSample

LINEAR_REGIME_TOL = 1e-9


def _centered_coefficients(spec: Spectrum, y) -> np.ndarray:
    # <y - E_pi y, f_l>_pi for l >= 2; centering only changes the l = 1 term
    return spec.coefficients(y)[1:]


def exact_pair_covariance(spec: Spectrum, y, d: int) -> float:
    """``cov(y(X_sigma), y(X_tau))`` for tree nodes at distance d."""
    if d < 0:
        raise DomainError("distance must be nonnegative")
    a = _centered_coefficients(spec, y)
    return float(np.sum(spec.eigenvalues[1:] ** d * a**2))


@dataclass
class VarianceBreakdown:
    eigenvalues: np.ndarray
    weight_sq: np.ndarray  # <y~, f_l>^2, l >= 2
    G_of_lambda: np.ndarray
    sigma_sq_exact: float
    var_pi: float
    R: float
    jensen_lower: float
    convexity_ok: bool

    @property
    def terms(self) -> np.ndarray:
        return self.weight_sq * self.G_of_lambda

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda", "weight_sq", "G_of_lambda", "term"])
            for row in zip(self.eigenvalues, self.weight_sq, self.G_of_lambda, self.terms):
                w.writerow([repr(float(v)) for v in row])

    def summary_json(self) -> str:
        return json.dumps(
            {
                "sigma_sq_exact": self.sigma_sq_exact,
                "R": self.R,
                "jensen_lower": self.jensen_lower,
                "convex": self.convexity_ok,
            }
        )


def exact_mean_variance(pgf: DistancePGF, spec: Spectrum, y, step: float = 0.01) -> VarianceBreakdown:
    """Exact variance of the sample average plus the lag-1 (Jensen) comparison."""
    a2 = _centered_coefficients(spec, y) ** 2
    lam = spec.eigenvalues[1:]
    G = np.asarray(pgf_eval(pgf, lam).G, dtype=float)
    sigma = float(np.sum(a2 * G))
    var = float(a2.sum())
    R = float(np.sum(a2 * lam) / var) if var > 0 else float("nan")
    lower = float(pgf_eval(pgf, R).G * var) if var > 0 else 0.0
    lam_min = float(np.clip(spec.lambda_min, -1.0, 1.0 - step)) if lam.size else 0.0
    convex = convexity_scan(pgf, lam_min, step).convex
    return VarianceBreakdown(lam, a2, G, sigma, var, R, lower, convex)


class PluginVariance(NamedTuple):
    R_hat: float
    sigma_hat_sq: float
    var_hat: float
    cov_hat: float
    degenerate: bool


def plugin_variance(s: WalkSample, ytilde_obs, pgf: DistancePGF) -> PluginVariance:
    """``G(R_hat) * var_hat`` estimate of Var(sample average of ytilde).

    Both moments are centred at the VH estimate of ``ytilde``; the lag-1
    covariance averages over observed parent-child pairs (n - 1 of them for a
    single-rooted tree). ``R_hat`` is clipped to [-1, 1].
    """
    yt = np.asarray(ytilde_obs, dtype=float)
    if yt.size < 2:
        raise DomainError("need at least two observations")
    par, child = s.parent_child_pairs()
    if par.size == 0:
        raise DomainError("need at least one parent-child pair")
    mu = vh_estimate(yt, s.deg_obs)
    dev = yt - mu
    var_hat = float(np.mean(dev**2))
    cov_hat = float(np.sum(dev[par] * dev[child]) / par.size)
    if var_hat <= 1e-300 or np.all(yt == yt[0]):
        return PluginVariance(float("nan"), 0.0, 0.0, cov_hat, True)
    R = float(np.clip(cov_hat / var_hat, -1.0, 1.0))
    return PluginVariance(R, float(pgf_eval(pgf, R).G) * var_hat, var_hat, cov_hat, False)


def lemma3_wave_variance(spec: Spectrum, y, m: int, h: int) -> tuple[float, str]:
    """Exact ``var(Y_h)`` for an m-tree walk, with its growth regime.

    Wave-h pairs at distance 2k number ``m^h`` (k = 0) and
    ``m^{h+k} - m^{h+k-1}`` (k >= 1); each contributes the lag-2k covariance.
    """
    if m < 1 or h < 0:
        raise DomainError("need m >= 1 and h >= 0")
    a2 = _centered_coefficients(spec, y) ** 2
    lam2 = spec.eigenvalues[1:] ** 2
    k = np.arange(1, h + 1)
    weights = (m - 1) * float(m) ** (k - 1.0)
    total = float(a2.sum() + np.sum(a2[None, :] * weights[:, None] * lam2[None, :] ** k[:, None]))
    rate = m * spec.lambda2**2
    if abs(rate - 1) <= LINEAR_REGIME_TOL:
        regime = "linear"
    else:
        regime = "bounded" if rate < 1 else "exponential"
    return total, regime


# --------------------------------------------------------------------------
# Variance of IPW versus the sample mean for random uncorrelated features


class VarianceComparison(NamedTuple):
    var_ipw: float
    var_mean: float
    VD: float
    bound: float


def pi_variance(pi) -> float:
    """``(1/N) sum pi_i^2 - 1/N^2``."""
    pi = np.asarray(pi, dtype=float)
    return float(np.mean(pi**2) - 1.0 / pi.size**2)


def iid_variance_comparison(pi, n: int, mu1: float = 0.0, mu2: float = 1.0, N: int | None = None) -> VarianceComparison:
    """Closed forms for n i.i.d. draws from pi of N uncorrelated features.

    Features have mean ``mu1`` and second moment ``mu2``. ``bound`` is the
    lower bound ``mu2 N (N/(n C1^2) - 1) var(pi)`` with ``C1 = max N pi_i``.
    """
    pi = np.asarray(pi, dtype=float)
    N = pi.size if N is None else N
    if pi.size != N:
        raise DomainError("N must equal len(pi)")
    if mu2 < mu1**2:
        raise DomainError("need mu2 >= mu1^2")
    s2 = float(np.sum(pi**2))
    var_mean = (mu2 - mu1**2) / n + (n - 1) / n * (mu2 * s2 + mu1**2 * (1 - s2) - mu1**2)
    inv = float(np.sum(1.0 / (N**2 * pi)))
    var_ipw = (mu2 * inv - mu1**2) / n + (n - 1) / n * (mu2 / N + mu1**2 * (1 - 1.0 / N) - mu1**2)
    C1 = float(N * pi.max())
    bound = mu2 * N * (N / (n * C1**2) - 1) * pi_variance(pi)
    return VarianceComparison(var_ipw, var_mean, var_ipw - var_mean, bound)


def tree_variance_comparison(
    spec: Spectrum,
    pgf: DistancePGF,
    deg,
    mu1: float = 0.0,
    mu2: float = 1.0,
    C1: float | None = None,
    C2: float | None = None,
    n: int | None = None,
) -> VarianceComparison:
    """Closed forms for a (T, P)-walk sample of N uncorrelated random features.

    Cross-sample terms use the return probabilities ``p_ii^d`` (from the
    spectrum) aggregated over the tree's distance histogram. The ``mu1``
    cross term of the IPW arm carries ``sum_ij P^d_ij / pi_j``; it vanishes
    from the difference only when ``mu1 = 0``. ``bound`` is
    ``mu2 (N^2 C1^2/(n C2^2) var(pi) - C2/(N C1^2))`` for degree bounds
    ``C1 N <= deg_i <= C2 N`` (tightest bounds by default).
    """
    deg = np.asarray(deg, dtype=float)
    N = deg.size
    pi = spec.pi
    if n is not None and n != pgf.n:
        raise DomainError(f"n = {n} does not match the tree size {pgf.n}")
    n = pgf.n
    if mu2 < mu1**2:
        raise DomainError("need mu2 >= mu1^2")
    C1 = float(deg.min() / N) if C1 is None else C1
    C2 = float(deg.max() / N) if C2 is None else C2
    if np.any(deg < C1 * N * (1 - 1e-12)) or np.any(deg > C2 * N * (1 + 1e-12)):
        raise PreconditionError("degrees violate C1 N <= deg <= C2 N")
    vy = mu2 - mu1**2
    inv = float(np.sum(1.0 / (N**2 * pi)))
    col = spec.eigenfunctions.sum(axis=0) ** 2  # (sum_i f_l(i))^2
    mean_cross = 0.0
    ipw_cross = 0.0
    for d in range(1, pgf.counts.size):
        c = float(pgf.counts[d])
        if c == 0:
            continue
        pii = spec.return_probabilities(d)
        A = float(np.sum(pii / (N**2 * pi)))
        S = N**2 + float(np.sum(spec.eigenvalues[1:] ** d * col[1:]))
        mean_cross += c * vy * float(np.sum(pi * pii))
        ipw_cross += c * (mu2 * A + mu1**2 * (S / N**2 - A) - mu1**2)
    var_mean = vy / n + mean_cross / n**2
    var_ipw = (mu2 * inv - mu1**2) / n + ipw_cross / n**2
    bound = mu2 * (N**2 * C1**2 / (n * C2**2) * pi_variance(pi) - C2 / (N * C1**2))
    return VarianceComparison(var_ipw, var_mean, var_ipw - var_mean, bound)


def ipw_crossover_constant(C1: float, C2: float, C3: float) -> float:
    """``C2^3 / (C3 C1^4)``: var_ipw > var_mean once N exceeds this multiple of n.

    ``C3`` is a lower bound on ``N^2 var(pi)``; it is a modelling choice and
    is not inferred from the graph.
    """
    if min(C1, C2, C3) <= 0 or C1 > C2:
        raise DomainError("need 0 < C1 <= C2 and C3 > 0")
    return C2**3 / (C3 * C1**4)
