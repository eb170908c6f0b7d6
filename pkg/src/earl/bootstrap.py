"""Monte-Carlo bootstrap over a sample, and the replicate-spread error measure.

Resamples are stored as multiplicity vectors over sample positions, which is
both compact and exactly what a job's weighted ``initialize`` consumes.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .jobs import JobDefinition, WorkMeter
from .sampling import Sample

ZERO_MEAN_RTOL = 1e-12


class ZeroMeanError(ArithmeticError):
    """Replicate mean is zero, so the coefficient of variation is undefined."""


@dataclass
class Resample:
    counts: np.ndarray
    bounds: tuple[tuple[int, int], ...]
    # multiplicity changes relative to the resample this one was derived from
    added: np.ndarray | None = field(default=None, repr=False)
    removed: np.ndarray | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return int(self.counts.sum())

    @property
    def parts(self) -> list[np.ndarray]:
        return [self.counts[lo:hi] for lo, hi in self.bounds]

    def positions(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.counts)), self.counts)


@dataclass(frozen=True)
class ReplicateSet:
    estimates: np.ndarray

    def __post_init__(self):
        if len(self.estimates) < 2:
            raise ValueError("a replicate set needs B >= 2")
        if not np.all(np.isfinite(self.estimates)):
            raise ValueError("replicate estimates must be finite")

    @property
    def B(self) -> int:
        return len(self.estimates)


@dataclass(frozen=True)
class ErrorEstimate:
    c_v: float
    mean_estimate: float
    var_B: float
    absolute: bool = False  # c_v holds the plain standard deviation


def draw_resample(s: Sample, rng=None) -> Resample:
    n = len(s)
    if n < 1:
        raise ValueError("cannot resample an empty sample")
    rng = np.random.default_rng(rng)
    counts = np.bincount(rng.integers(0, n, n), minlength=n)
    return Resample(counts, tuple(s.bounds))


def evaluate(job: JobDefinition, values: np.ndarray, counts: np.ndarray,
             meter: WorkMeter | None = None):
    """Job state for the multiset given by ``counts`` over ``values``."""
    idx = np.flatnonzero(counts)
    return job.run(values[idx], counts[idx], meter)


def _draw_counts(n: int, m: int, rng) -> np.ndarray:
    return np.bincount(rng.integers(0, n, m), minlength=n)


def resample_chain(s: Sample, B: int, job: JobDefinition, rngs, *, share: bool = True,
                   meter: WorkMeter | None = None):
    """Draw ``B`` resamples and evaluate the job on each.

    With sharing on (and a mergeable job) each resample is built as a prefix
    of ``k`` draws plus ``n - k`` further draws. With probability
    ``prob_identical_fraction(n, k/n)`` a resample reuses the previous
    resample's prefix draws together with their cached job state, so only the
    remaining draws are fed to the job. Every resample is still ``n`` i.i.d.
    uniform draws. Returns (resamples, states).
    """
    n, values, bounds = len(s), s.values, tuple(s.bounds)
    k, q = 0, 0.0
    if share and job.mergeable and n > 1:
        y, _ = optimal_share_fraction(n)
        k = int(math.floor(y * n + 1e-9))
        q = prob_identical_fraction(n, y)
    out, states = [], []
    prefix = prefix_state = None
    for b in range(B):
        rng = rngs[b] if isinstance(rngs, (list, tuple)) else rngs
        if k:
            if prefix is None or rng.random() >= q:
                prefix = _draw_counts(n, k, rng)
                prefix_state = evaluate(job, values, prefix, meter)
            rest = _draw_counts(n, n - k, rng)
            idx = np.flatnonzero(rest)
            state = job.feed(prefix_state, values[idx], rest[idx], meter) if len(idx) else prefix_state
            counts = prefix + rest
        else:
            counts = _draw_counts(n, n, rng)
            state = evaluate(job, values, counts, meter)
        out.append(Resample(counts, bounds))
        states.append(state)
    return out, states


def replicate_estimates(s: Sample, B: int, job: JobDefinition, rng=None, *,
                        share: bool = True, meter: WorkMeter | None = None) -> ReplicateSet:
    if B < 2:
        raise ValueError("B must be >= 2")
    rng = np.random.default_rng(rng)
    _, states = resample_chain(s, B, job, rng, share=share, meter=meter)
    return ReplicateSet(np.array([job.finalize(st) for st in states], dtype=float))


def error_estimate(r: ReplicateSet | np.ndarray, *, absolute_fallback: bool = False) -> ErrorEstimate:
    """Replicate spread with the 1/B variance denominator; c_v = sd / |mean|.

    At (numerically) zero mean the ratio is undefined. That raises
    :class:`ZeroMeanError` unless ``absolute_fallback`` is set, in which case
    the plain standard deviation is returned and flagged ``absolute``.
    """
    est = r.estimates if isinstance(r, ReplicateSet) else np.asarray(r, dtype=float)
    if len(est) < 2:
        raise ValueError("error estimate needs B >= 2")
    mean = float(est.mean())
    var_b = float(np.mean((est - mean) ** 2))
    sd = math.sqrt(var_b)
    if mean == 0 or abs(mean) < ZERO_MEAN_RTOL * sd:
        if not absolute_fallback or sd == 0:
            raise ZeroMeanError("zero-mean replicates: c_v undefined, use absolute error")
        return ErrorEstimate(sd, mean, var_b, absolute=True)
    return ErrorEstimate(sd / abs(mean), mean, var_b)


def closed_form_mean_variance(s: Sample | np.ndarray) -> float:
    """Variance of the sample mean: unbiased sample variance over n."""
    x = np.asarray(s.values if isinstance(s, Sample) else s, dtype=float)
    if x.ndim != 1:
        raise ValueError("closed form needs numeric scalar values")
    if len(x) < 2:
        raise ValueError("closed form needs n >= 2")
    return float(np.var(x, ddof=1) / len(x))


def prob_identical_fraction(n: int, y: float) -> float:
    """n! / ((n - k)! n^k) with k = floor(y n), as a stable running product."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 <= y <= 1:
        raise ValueError("y must lie in [0, 1]")
    k = int(math.floor(y * n + 1e-9))
    p = 1.0
    for j in range(k):
        p *= (n - j) / n
    return p


def optimal_share_fraction(n: int) -> tuple[float, float]:
    """Maximise P(X = y) * y over y = j/n by binary search.

    The ratio obj(j+1)/obj(j) = (j+1)(n-j) / (j n) falls monotonically in j,
    so the objective is unimodal; the first j with obj(j+1) <= obj(j) is the
    smallest maximiser.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lo, hi = 1, n
    while lo < hi:
        mid = (lo + hi) // 2
        if (mid + 1) * (n - mid) <= mid * n:
            hi = mid
        else:
            lo = mid + 1
    y = lo / n
    return y, prob_identical_fraction(n, y) * y


def exhaustive_share_fraction(n: int) -> tuple[float, float]:
    """Brute-force argmax over every j (exact rationals; smallest j wins ties)."""
    best_j, best, p = 1, Fraction(-1), Fraction(1)
    for j in range(1, n + 1):
        p *= Fraction(n - j + 1, n)
        obj = p * Fraction(j, n)
        if obj > best:
            best_j, best = j, obj
    return best_j / n, float(best)


def exact_replicate_distribution(s: Sample, job: JobDefinition) -> dict[float, float]:
    """Distribution of the job statistic over all n^n equally likely resamples."""
    n = len(s)
    values = s.values
    dist: dict[float, float] = {}
    w = 1.0 / n**n
    for draws in itertools.product(range(n), repeat=n):
        counts = np.bincount(np.array(draws), minlength=n)
        est = job.finalize(evaluate(job, values, counts))
        dist[est] = dist.get(est, 0.0) + w
    return dist
