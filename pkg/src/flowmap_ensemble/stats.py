"""One-step error statistics for trained models and ensembles.

An error sample is ``step(model, exact_window) - exact_next`` for one model
(or one ensemble).  Across many independently trained models these
samples have a bias (their mean) and a variance; averaging ``K`` models
leaves the bias alone and divides the variance by about ``K``.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Sequence

import numpy as np

from . import nncore
from .errors import InvalidArgumentError
from .nncore import Architecture
from .predict import ensemble_step
from .training import Ensemble

CONVENTIONS = ("biased_n", "unbiased_n_minus_1")


@dataclass
class LteStats:
    bias: np.ndarray
    variance: np.ndarray
    mse: np.ndarray
    n_samples: int
    variance_convention: str = "unbiased_n_minus_1"


@dataclass
class GofResult:
    statistic: float
    dof: int
    critical_value: float
    p_value: float
    reject: bool
    n_bins: int
    alpha: float
    counts: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "dof": self.dof,
            "critical_value": self.critical_value,
            "p_value": self.p_value,
            "reject": self.reject,
            "n_bins": self.n_bins,
            "alpha": self.alpha,
        }


def one_step_errors(models: Sequence, arch: Architecture, exact_window, exact_next) -> np.ndarray:
    """Errors of one step from an exact window, one row per model.

    Each entry of ``models`` is either a flat parameter vector (a single
    network) or an :class:`Ensemble`, which steps by averaging its members.
    """
    w = nncore.make_window(arch, exact_window)
    u = np.asarray(exact_next, dtype=np.float64)
    if u.shape != (arch.state_dim,):
        raise InvalidArgumentError(f"exact_next must have length {arch.state_dim}")
    out = np.empty((len(models), arch.state_dim))
    for k, m in enumerate(models):
        if isinstance(m, Ensemble):
            if m.arch != arch:
                raise InvalidArgumentError("ensemble architecture differs from arch")
            out[k] = ensemble_step(m, w)[0] - u
        else:
            out[k] = nncore.residual_step(arch, m, w) - u
    return out


def bias_variance_mse(samples, convention: str = "unbiased_n_minus_1") -> LteStats:
    e = np.asarray(samples, dtype=np.float64)
    if e.ndim == 1:
        e = e[:, None]
    if e.shape[0] < 2:
        raise InvalidArgumentError("need at least two samples")
    if convention not in CONVENTIONS:
        raise InvalidArgumentError(f"unknown variance convention {convention!r}")
    n = e.shape[0]
    bias = e.mean(axis=0)
    ss = ((e - bias) ** 2).sum(axis=0)
    var = ss / n if convention == "biased_n" else ss / (n - 1)
    mse = (e ** 2).mean(axis=0)
    return LteStats(bias, var, mse, n, convention)


def bootstrap_indices(pool_size: int, K: int, n_ensembles: int, rng: np.random.Generator) -> np.ndarray:
    if pool_size < 1:
        raise InvalidArgumentError("pool must not be empty")
    if K < 1 or n_ensembles < 1:
        raise InvalidArgumentError("K and n_ensembles must be >= 1")
    return rng.integers(0, pool_size, size=(n_ensembles, K))


def bootstrap_ensembles(pool: Ensemble, K: int, n_ensembles: int,
                        rng: np.random.Generator) -> list[Ensemble]:
    """Ensembles of ``K`` members drawn with replacement from ``pool``."""
    picks = bootstrap_indices(pool.K, K, n_ensembles, rng)
    return [pool.subset(row) for row in picks]


@dataclass
class ScalingReport:
    rows: dict[int, LteStats]
    errors: dict[int, np.ndarray]

    def variance_ratio(self, K: int) -> np.ndarray:
        return self.rows[K].variance / self.rows[1].variance


def variance_scaling_report(pool: Ensemble, K_list: Sequence[int], exact_window, exact_next,
                            n_ensembles: int, rng: np.random.Generator,
                            convention: str = "unbiased_n_minus_1") -> ScalingReport:
    """Bias/variance/MSE of one-step errors for bootstrap ensembles of each size.

    The ``K = 1`` row always comes from the raw pool.  Because every member
    of every ensemble steps from the same exact window, each pool member's
    prediction is computed once and ensembles average those rows, the same
    arithmetic as :func:`~flowmap_ensemble.predict.ensemble_step`.
    """
    arch = pool.arch
    w = nncore.make_window(arch, exact_window)
    u = np.asarray(exact_next, dtype=np.float64)
    member_preds = np.array([ensemble_step(pool.subset([i]), w)[0] for i in range(pool.K)])
    rows, errors = {}, {}
    errors[1] = member_preds - u
    rows[1] = bias_variance_mse(errors[1], convention)
    for K in K_list:
        if K == 1:
            continue
        picks = bootstrap_indices(pool.K, K, n_ensembles, rng)
        errors[K] = np.array([member_preds[row].mean(axis=0) for row in picks]) - u
        rows[K] = bias_variance_mse(errors[K], convention)
    return ScalingReport(rows, errors)


# ------------------------------------------------------------- chi-square law

def _gamma_p_series(a: float, x: float) -> float:
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-17:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_contfrac(a: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def gamma_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma function ``P(a, x)``."""
    if x <= 0.0:
        return 0.0
    if x < a + 1.0:
        return min(1.0, _gamma_p_series(a, x))
    return max(0.0, 1.0 - _gamma_q_contfrac(a, x))


def gamma_q(a: float, x: float) -> float:
    if x <= 0.0:
        return 1.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _gamma_p_series(a, x))
    return min(1.0, _gamma_q_contfrac(a, x))


def chi2_cdf(x: float, dof: int) -> float:
    if dof < 1:
        raise InvalidArgumentError("dof must be >= 1")
    if x <= 0:
        return 0.0
    return gamma_p(0.5 * dof, 0.5 * x)


def chi2_sf(x: float, dof: int) -> float:
    if dof < 1:
        raise InvalidArgumentError("dof must be >= 1")
    if x <= 0:
        return 1.0
    return gamma_q(0.5 * dof, 0.5 * x)


def chi2_ppf(p: float, dof: int) -> float:
    """Inverse of :func:`chi2_cdf` by bracketed bisection."""
    if not 0.0 < p < 1.0:
        raise InvalidArgumentError("p must lie in (0, 1)")
    lo, hi = 0.0, max(1.0, float(dof))
    while chi2_cdf(hi, dof) < p:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if chi2_cdf(mid, dof) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * hi:
            break
    return 0.5 * (lo + hi)


def default_n_bins(n: int) -> int:
    return min(30, max(8, n // 50))


def chi2_gof_gaussian(samples, mean: float, variance: float, alpha: float = 0.05,
                      n_bins: int | None = None) -> GofResult:
    """Pearson test of ``samples`` against ``N(mean, variance)``.

    Bins have equal probability under the null, so each expects
    ``n / n_bins`` counts.  Mean and variance are supplied rather than
    fitted, hence ``dof = n_bins - 1``.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise InvalidArgumentError("empty sample")
    if not variance > 0:
        raise InvalidArgumentError("variance must be positive")
    if n_bins is None:
        n_bins = default_n_bins(x.size)
    if n_bins < 2:
        raise InvalidArgumentError("need at least two bins")
    std = NormalDist()
    edges = np.array([std.inv_cdf(j / n_bins) for j in range(1, n_bins)])
    z = (x - mean) / math.sqrt(variance)
    counts = np.bincount(np.searchsorted(edges, z, side="right"), minlength=n_bins)
    expected = x.size / n_bins
    stat = float(np.sum((counts - expected) ** 2) / expected)
    dof = n_bins - 1
    p_value = chi2_sf(stat, dof)
    crit = chi2_ppf(1.0 - alpha, dof)
    return GofResult(stat, dof, crit, p_value, bool(p_value < alpha), n_bins, alpha,
                     counts.tolist())


# ------------------------------------------------------------------- exports

def write_report_csv(path, report: ScalingReport, component_names: Sequence[str] | None = None) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["K", "component", "bias", "variance", "mse", "n"])
        for K in sorted(report.rows):
            st = report.rows[K]
            for c in range(st.bias.shape[0]):
                name = component_names[c] if component_names else f"x{c + 1}"
                wr.writerow([K, name, repr(float(st.bias[c])), repr(float(st.variance[c])),
                             repr(float(st.mse[c])), st.n_samples])


def write_gof_json(path, results: dict[str, GofResult], K: int) -> None:
    doc = [{"component": name, "K": K, **res.to_dict()} for name, res in results.items()]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def histogram_table(samples, mean: float, variance: float, n_bins: int = 20) -> list[tuple]:
    """Equal-width histogram with the Gaussian density at each bin center."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    counts, edges = np.histogram(x, bins=n_bins)
    g = NormalDist(mean, math.sqrt(variance))
    return [(float(edges[j]), float(edges[j + 1]), int(counts[j]),
             g.pdf(0.5 * (edges[j] + edges[j + 1]))) for j in range(n_bins)]


def write_histogram_csv(path, samples, mean: float, variance: float, n_bins: int = 20) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["bin_left", "bin_right", "count", "gaussian_pdf_at_center"])
        for left, right, count, pdf in histogram_table(samples, mean, variance, n_bins):
            wr.writerow([repr(left), repr(right), count, repr(pdf)])
