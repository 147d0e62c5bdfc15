"""Point estimators, the bias test and the wave statistic.

Variance convention: every ``sigma_hat_sq`` consumed or produced here is an
estimate of Var(sample mean), not of n * Var(sample mean).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np
from scipy.stats import norm

from .errors import DegenerateError, DimensionError, DomainError, ShapeError, ThresholdViolationError
from .graph import Spectrum, UNIT_MODULUS_TOL
from .walk import WalkSample

Z_ROUNDED = 1.96


def z_quantile(alpha: float = 0.05) -> float:
    return float(norm.ppf(1 - alpha / 2))


def _positive(deg, what="degree") -> np.ndarray:
    deg = np.asarray(deg, dtype=float)
    if np.any(deg <= 0):
        raise ZeroDivisionError(f"{what} must be positive")
    return deg


def sample_mean(obs) -> float:
    obs = np.asarray(obs, dtype=float)
    if obs.size == 0:
        raise DomainError("empty sample")
    return float(obs.mean())


def ipw_estimate(obs, pi_at_samples, N: int) -> float:
    """``(1/n) sum y / (N pi)``."""
    obs = np.asarray(obs, dtype=float)
    pi = _positive(pi_at_samples, "pi")
    if obs.shape != pi.shape:
        raise DimensionError("obs and pi_at_samples differ in length")
    if obs.size == 0:
        raise DomainError("empty sample")
    return float(np.mean(obs / (N * pi)))


def harmonic_mean_degree(deg_obs) -> float:
    deg = _positive(deg_obs)
    if deg.size == 0:
        raise DomainError("empty sample")
    if np.all(deg == deg[0]):
        return float(deg[0])  # exact, so y' vanishes identically on regular samples
    return float(deg.size / np.sum(1.0 / deg))


def vh_weights(deg_obs) -> np.ndarray:
    inv = 1.0 / _positive(deg_obs)
    return inv / inv.sum()


def vh_estimate(obs, deg_obs) -> float:
    """Volz-Heckathorn (Hajek) estimator with inverse-degree weights."""
    obs = np.asarray(obs, dtype=float)
    if obs.size == 0:
        raise DomainError("empty sample")
    w = vh_weights(deg_obs)
    if w.shape != obs.shape:
        raise DimensionError("obs and deg_obs differ in length")
    return float(w @ obs)


def bias_feature(y, deg, dbar: float) -> np.ndarray:
    """``y (1 - dbar / deg)``; its pi-mean is the bias of the sample average."""
    return np.asarray(y, dtype=float) * (1.0 - dbar / _positive(deg))


class BiasTest(NamedTuple):
    z: float
    reject: bool
    reject_rounded: bool  # same test against the rounded 1.96
    degenerate: bool


def bias_test(bias_hat: float, sigma_hat_sq: float, alpha: float = 0.05) -> BiasTest:
    """Two-sided z-test of zero bias; ``sigma_hat_sq`` estimates Var(bias_hat)."""
    if sigma_hat_sq < 0:
        raise DomainError("variance estimate must be nonnegative")
    if sigma_hat_sq == 0:
        hit = bias_hat != 0
        return BiasTest(float(np.copysign(np.inf, bias_hat)) if hit else 0.0, hit, hit, True)
    z = bias_hat / np.sqrt(sigma_hat_sq)
    return BiasTest(float(z), bool(abs(z) > z_quantile(alpha)), bool(abs(z) > Z_ROUNDED), False)


def bias_adjusted(mu_hat: float, mu_weighted: float, reject: bool) -> float:
    """Hard-thresholded bias correction: switch to the weighted estimate on rejection."""
    return mu_weighted if reject else mu_hat


# --------------------------------------------------------------------------
# Wave statistic


class WaveStatistic(NamedTuple):
    Y: np.ndarray  # Y_1..Y_h
    T: float
    approximate_centering: bool


def wave_statistic(s: WalkSample, y, m: int, pi=None) -> WaveStatistic:
    """Per-wave sums ``Y_i = m^{-i/2} sum_{|tau|=i} y(X_tau)`` and ``T_h = h^{-1/2} sum Y_i``.

    ``y`` is a node feature. With ``pi`` it is centred at ``E_pi y``;
    without, at the VH estimate from the sample (flagged as approximate).
    """
    t = s.tree
    if t.artificial_root or t.branching() != m:
        raise ShapeError(f"sample tree is not a complete {m}-tree")
    y = np.asarray(y, dtype=float)
    vals = y[s.assignment]
    if pi is not None:
        vals = vals - float(np.asarray(pi) @ y)
    else:
        vals = vals - vh_estimate(y[s.sampled], s.deg_obs)
    h = t.height
    sums = np.bincount(t.wave, weights=vals, minlength=h + 1)[1:]
    Y = sums / np.sqrt(float(m) ** np.arange(1, h + 1))
    T = float(Y.sum() / np.sqrt(h)) if h > 0 else 0.0
    return WaveStatistic(Y, T, pi is None)


def wave_statistic_from_counts(z: np.ndarray, y_centered, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Batched Y_i and T_h from per-wave occupation counts ``z`` of shape (reps, h+1, N)."""
    sums = z[:, 1:, :] @ np.asarray(y_centered, dtype=float)
    h = sums.shape[1]
    Y = sums / np.sqrt(float(m) ** np.arange(1, h + 1))
    return Y, Y.sum(axis=1) / np.sqrt(h)


def _check_threshold(spec: Spectrum, m: float) -> None:
    spec.check_gap()
    if m * spec.lambda2**2 >= 1 - UNIT_MODULUS_TOL:
        raise ThresholdViolationError(
            f"m = {m} is not below lambda_2^-2 = {spec.lambda2 ** -2 if spec.lambda2 else np.inf:.6g}"
        )


def theorem1_sigma0(spec: Spectrum, y, m: int) -> float:
    """Limit variance of ``T_h`` for an m-tree walk with ``m < lambda_2^-2``.

    Equals ``var_pi(y') - var_pi(P y')`` with ``y' = (sqrt(m) P - I)^-1 y``;
    in the eigenbasis this is ``sum_l <y, f_l>^2 (1 - l^2) / (sqrt(m) l - 1)^2``.
    """
    _check_threshold(spec, m)
    a = spec.coefficients(y)[1:]
    lam = spec.eigenvalues[1:]
    return float(np.sum(a**2 * (1 - lam**2) / (np.sqrt(m) * lam - 1) ** 2))


# --------------------------------------------------------------------------
# Report


@dataclass
class EstimateReport:
    n: int
    mu_hat: float
    mu_ipw: float | None
    mu_vh: float
    dbar_hat: float
    bias_hat: float
    sigma_hat_sq: float
    z: float
    reject: bool
    mu_ba: float
    reject_rounded: bool = False
    degenerate: bool = False
    weighted_arm: str = "vh"
    convention: str = "var_of_mean"

    def to_json(self) -> str:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float) and not np.isfinite(v):
                d[k] = str(v)
        return json.dumps(d)


def estimate_report(s: WalkSample, pi=None, N: int | None = None, alpha: float = 0.05, pgf=None) -> EstimateReport:
    """All estimators plus the bias test for one sample.

    The variance of ``bias_hat`` is the plug-in ``G(R_hat) * var_hat`` of the
    observed ``y'_VH`` values. When ``pi`` is given, the bias-adjusted
    estimator switches to the IPW arm, otherwise to VH.
    """
    from .tree import distance_pgf
    from .variance import plugin_variance

    if s.y_obs is None:
        raise DegenerateError("sample has no observed feature; call with_feature first")
    y, deg = s.y_obs, s.deg_obs
    mu_hat = sample_mean(y)
    mu_vh = vh_estimate(y, deg)
    dbar = harmonic_mean_degree(deg)
    yprime = bias_feature(y, deg, dbar)
    bias_hat = float(yprime.mean())
    if pgf is None:
        pgf = distance_pgf(s.tree)
    pv = plugin_variance(s, yprime, pgf)
    test = bias_test(bias_hat, pv.sigma_hat_sq, alpha)
    mu_ipw = None
    if pi is not None:
        pi = np.asarray(pi, dtype=float)
        mu_ipw = ipw_estimate(y, pi[s.sampled], N if N is not None else pi.size)
    weighted = mu_ipw if mu_ipw is not None else mu_vh
    return EstimateReport(
        n=s.n,
        mu_hat=mu_hat,
        mu_ipw=mu_ipw,
        mu_vh=mu_vh,
        dbar_hat=dbar,
        bias_hat=bias_hat,
        sigma_hat_sq=pv.sigma_hat_sq,
        z=test.z,
        reject=test.reject,
        mu_ba=bias_adjusted(mu_hat, weighted, test.reject),
        reject_rounded=test.reject_rounded,
        degenerate=test.degenerate or pv.degenerate,
        weighted_arm="ipw" if mu_ipw is not None else "vh",
    )
