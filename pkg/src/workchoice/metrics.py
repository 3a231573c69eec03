"""Model comparison statistics: likelihoods, Pearson, two-sample KS, distances."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import OCCUPATIONS, ATTRIBUTES, Dataset
from .rng import Rng

SEGMENT_LABELS = {
    "gender": {1: "Female", 0: "Male"},
    "has_car": {1: "Car-Yes", 0: "Car-No"},
}


@dataclass(frozen=True)
class CorrelationResult:
    statistic: float
    p_value: float
    n: int


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    n1: int
    n2: int


@dataclass(frozen=True)
class DistanceSample:
    """Home-to-work distances with the segment labels of their individuals."""

    distances: np.ndarray
    gender: np.ndarray
    has_car: np.ndarray

    def __len__(self) -> int:
        return self.distances.size

    def segment(self, name: str, value: int) -> np.ndarray:
        return self.distances[getattr(self, name) == value]


@dataclass(frozen=True)
class AverageLogLikelihood:
    weighted: float
    unweighted: float
    n_obs: int


# -- special functions ------------------------------------------------------


def _betacf(a: float, b: float, x: float, tol: float = 1e-14, max_iter: int = 10000) -> float:
    """Continued fraction of the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return betainc_regularized(0.5 * df, 0.5, df / (df + t * t))


def kolmogorov_survival(lam: float) -> float:
    """``Q(lam) = 2 sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lam^2)``, clamped to [0, 1].

    The series is summed until a term falls below 1e-12.  Below
    ``lam = 0.2`` the function equals 1 to better than 1e-12, where the
    alternating series converges too slowly to be worth summing.
    """
    if lam < 0.2:
        return 1.0
    total = 0.0
    sign = 1.0
    k = 1
    while True:
        term = 2.0 * math.exp(-2.0 * k * k * lam * lam)
        total += sign * term
        if term < 1e-12:
            break
        sign = -sign
        k += 1
    return min(1.0, max(0.0, total))


# -- statistics --------------------------------------------------------------


def pearson(x, y) -> CorrelationResult:
    """Pearson correlation with a two-tailed Student-t p-value (n - 2 df).

    Raises ``ValueError`` for unequal lengths, fewer than 3 points, or a
    constant input (correlation undefined).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two vectors of equal length")
    n = x.size
    if n < 3:
        raise ValueError("pearson needs at least 3 observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("correlation undefined for a constant input vector")
    r = float(dx @ dy) / (math.sqrt(sxx) * math.sqrt(syy))
    r = min(1.0, max(-1.0, r))
    df = n - 2
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt(df / ((1.0 - r) * (1.0 + r)))
        p = student_t_two_sided_p(t, df)
    return CorrelationResult(r, min(1.0, max(0.0, p)), n)


def ks_two_sample(sample_a, sample_b) -> KsResult:
    """Two-sample Kolmogorov-Smirnov test with the asymptotic p-value."""
    a = np.sort(np.asarray(sample_a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(sample_b, dtype=np.float64).ravel())
    n1, n2 = a.size, b.size
    if n1 == 0 or n2 == 0:
        raise ValueError("KS test needs two nonempty samples")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / n1
    cdf_b = np.searchsorted(b, pooled, side="right") / n2
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    ne = n1 * n2 / (n1 + n2)
    sq = math.sqrt(ne)
    lam = (sq + 0.12 + 0.11 / sq) * d
    return KsResult(d, kolmogorov_survival(lam), n1, n2)


def zone_choice_counts(work_zones, n_zones: int) -> np.ndarray:
    z = np.asarray(work_zones, dtype=np.int64).ravel()
    if z.size and (z.min() < 0 or z.max() >= n_zones):
        raise ValueError(f"zone id out of range [0, {n_zones})")
    return np.bincount(z, minlength=n_zones)


def attribute_choice_correlations(work_zones, jobs) -> dict[str, CorrelationResult]:
    """Correlation of per-zone job counts (each occupation and total) with choice counts."""
    jobs = np.asarray(jobs, dtype=np.float64)
    if jobs.shape[0] < 3:
        raise ValueError("need at least 3 zones")
    counts = zone_choice_counts(work_zones, jobs.shape[0]).astype(np.float64)
    table = {name: pearson(jobs[:, k], counts) for k, name in enumerate(OCCUPATIONS)}
    table["total"] = pearson(jobs.sum(axis=1), counts)
    return table


def sample_choices(model, dataset: Dataset, draws_per_individual: int = 100, seed: int = 0) -> np.ndarray:
    """Work-zone draws from each individual's predicted distribution, (N, draws)."""
    if draws_per_individual < 1:
        raise ValueError("draws_per_individual must be at least 1")
    probs = model.probabilities(dataset)
    sums = probs.sum(axis=1)
    bad = np.flatnonzero(~np.all(np.isfinite(probs), axis=1) | ~(sums > 0) | np.any(probs < 0, axis=1))
    if bad.size:
        raise ValueError(f"degenerate probability vector for individual row {bad[0]}")
    return Rng(seed).choice_rows(probs, draws_per_individual)


def distance_distribution(choices, dataset: Dataset) -> DistanceSample:
    """Home-to-chosen-zone distances; ``choices`` is (N,) or (N, draws)."""
    c = np.asarray(choices, dtype=np.int64)
    if c.ndim == 1:
        c = c[:, None]
    if c.shape[0] != dataset.n_individuals:
        raise ValueError("choices rows must match individuals")
    if c.size and (c.min() < 0 or c.max() >= dataset.n_zones):
        raise ValueError("choice zone id out of range")
    xy = dataset.centroids
    home = np.repeat(dataset.home, c.shape[1])
    flat = c.ravel()
    d = np.hypot(xy[flat, 0] - xy[home, 0], xy[flat, 1] - xy[home, 1])
    return DistanceSample(
        distances=d,
        gender=np.repeat(dataset.gender, c.shape[1]),
        has_car=np.repeat(dataset.has_car, c.shape[1]),
    )


def segmented_ks(model_sample: DistanceSample, data_sample: DistanceSample, segment: str) -> dict[str, KsResult]:
    """KS test within each value of ``segment`` (``"gender"`` or ``"has_car"``)."""
    labels = SEGMENT_LABELS[segment]
    out = {}
    for value, label in labels.items():
        a = model_sample.segment(segment, value)
        b = data_sample.segment(segment, value)
        if a.size == 0 or b.size == 0:
            raise ValueError(f"segment {label} is empty in the {'model' if a.size == 0 else 'data'} sample")
        out[label] = ks_two_sample(a, b)
    return out


def individual_attribute_correlations(dataset: Dataset) -> dict[str, CorrelationResult]:
    """Correlation of each attribute code with the observed commute distance."""
    dataset.require_choices()
    dist = distance_distribution(dataset.work, dataset).distances
    return {name: pearson(dataset.attribute(name), dist) for name in ATTRIBUTES}


def null_loglikelihood(dataset: Dataset) -> float:
    """``sum_n w_n log(1 / J_n)`` with ``J_n`` the zones that have jobs."""
    n_avail = int(np.count_nonzero(dataset.jobs.sum(axis=1) > 0))
    return float(dataset.weights.sum() * math.log(1.0 / n_avail))


def average_loglikelihood(model, dataset: Dataset) -> AverageLogLikelihood:
    """Weighted mean ``sum w ln P / sum w`` and the plain per-observation mean."""
    logp = model.log_probabilities_chosen(dataset)
    w = dataset.weights
    return AverageLogLikelihood(float(w @ logp / w.sum()), float(logp.mean()), int(logp.size))


def freedman_diaconis_edges(pooled, n_bins: int = 50) -> np.ndarray:
    """``n_bins + 1`` edges from 0 with the Freedman-Diaconis bin width.

    Falls back to ``max / n_bins`` when the IQR is zero.
    """
    x = np.asarray(pooled, dtype=np.float64)
    q75, q25 = np.percentile(x, [75, 25])
    width = 2.0 * (q75 - q25) / np.cbrt(x.size)
    if not width > 0:
        top = float(x.max()) if x.size else 1.0
        width = (top if top > 0 else 1.0) / n_bins
    return np.arange(n_bins + 1) * width


def histogram_density(values, edges) -> np.ndarray:
    """Share of values per bin; values past the last edge land in the last bin."""
    v = np.minimum(np.asarray(values, dtype=np.float64), edges[-1])
    counts, _ = np.histogram(v, bins=edges)
    return counts / max(1, v.size)
