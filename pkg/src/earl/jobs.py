"""Job definitions: the initialize/update/finalize/correct reduce interface.

A job never sees records one at a time. ``initialize`` and ``update`` take a
:class:`Batch` of values with integer multiplicities, which is how a bootstrap
resample (a multiset over sample positions) is handed to the job. Jobs flagged
``retractable`` accept negative multiplicities, so an incrementally maintained
resample can delete items from an existing state instead of rebuilding it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable, NamedTuple

import numpy as np

Z_95 = 1.959963984540054


class JobError(ValueError):
    """A job cannot produce a result from the given state or inputs."""


class Batch(NamedTuple):
    values: np.ndarray
    weights: np.ndarray


class WorkMeter:
    """Counts items handed to initialize/update, weighted by multiplicity."""

    def __init__(self):
        self.items = 0
        self.calls = 0

    def add(self, weights) -> None:
        self.items += int(np.abs(weights).sum())
        self.calls += 1


@dataclass(frozen=True)
class JobDefinition:
    name: str
    initialize: Callable[[Batch], Any]
    update: Callable[[Any, Any], Any]
    finalize: Callable[[Any], float]
    correct: Callable[[float, float], float]
    mergeable: bool = True
    retractable: bool = False
    summarize: Callable[[Any], dict] | None = None

    def run(self, values, weights=None, meter: WorkMeter | None = None) -> Any:
        """initialize over a batch, metering the items touched."""
        values = np.asarray(values) if not isinstance(values, np.ndarray) else values
        if weights is None:
            weights = np.ones(len(values), dtype=np.int64)
        if meter is not None:
            meter.add(weights)
        return self.initialize(Batch(values, weights))

    def feed(self, state, values, weights, meter: WorkMeter | None = None) -> Any:
        if meter is not None:
            meter.add(weights)
        return self.update(state, Batch(values, weights))


def _identity(x: float, p: float) -> float:
    return x


# -- mean / sum ---------------------------------------------------------------

@dataclass(frozen=True)
class ScalarState:
    count: float
    sum: float


def _scalar_init(batch: Batch) -> ScalarState:
    w = batch.weights
    return ScalarState(float(w.sum()), float(np.dot(w, batch.values)) if len(w) else 0.0)


def _scalar_update(state: ScalarState, other) -> ScalarState:
    if isinstance(other, Batch):
        other = _scalar_init(other)
    return ScalarState(state.count + other.count, state.sum + other.sum)


def _mean_finalize(state: ScalarState) -> float:
    if state.count <= 0:
        raise JobError("mean of an empty state")
    return state.sum / state.count


def mean_job() -> JobDefinition:
    return JobDefinition("mean", _scalar_init, _scalar_update, _mean_finalize, _identity,
                         mergeable=True, retractable=True)


def _sum_correct(x: float, p: float) -> float:
    if not p > 0:
        raise JobError(f"sampled fraction must be > 0, got {p}")
    return x / p


def sum_job() -> JobDefinition:
    return JobDefinition("sum", _scalar_init, _scalar_update, lambda s: s.sum, _sum_correct,
                         mergeable=True, retractable=True)


# -- median -------------------------------------------------------------------

@dataclass(frozen=True)
class MedianState:
    values: np.ndarray  # sorted, unique
    weights: np.ndarray  # integer multiplicities, all > 0

    @property
    def count(self) -> int:
        return int(self.weights.sum())


def _aggregate(values, weights) -> MedianState:
    uniq, inv = np.unique(np.asarray(values, dtype=float), return_inverse=True)
    w = np.bincount(inv, weights=weights, minlength=len(uniq)).round().astype(np.int64)
    if (w < 0).any():
        raise JobError("retracted more copies of a value than the state holds")
    keep = w > 0
    return MedianState(uniq[keep], w[keep])


def _median_init(batch: Batch) -> MedianState:
    return _aggregate(batch.values, batch.weights)


def _median_update(state: MedianState, other) -> MedianState:
    # a Batch and a MedianState both expose values/weights
    return _aggregate(np.concatenate([state.values, other.values]),
                      np.concatenate([state.weights, other.weights]))


def _median_finalize(state: MedianState) -> float:
    total = state.count
    if total == 0:
        raise JobError("median of an empty state")
    cum = np.cumsum(state.weights)
    lo = state.values[np.searchsorted(cum, (total + 1) // 2)]
    hi = state.values[np.searchsorted(cum, total // 2 + 1)]
    return float((lo + hi) / 2)


def median_job() -> JobDefinition:
    # union-merge of value multisets is order-free, so sharing partial states is safe
    return JobDefinition("median", _median_init, _median_update, _median_finalize, _identity,
                         mergeable=True, retractable=True)


# -- categorical proportion ---------------------------------------------------

@dataclass(frozen=True)
class ProportionState:
    successes: float
    trials: float


def proportion_stats(successes: float, trials: float) -> dict:
    if trials <= 0:
        raise JobError("proportion over zero trials")
    p = successes / trials
    var = p * (1 - p) / trials
    half = Z_95 * math.sqrt(var)
    return {"proportion": p, "variance": var, "interval": [p - half, p + half]}


def proportion_job(success_label: str) -> JobDefinition:
    label = str(success_label)

    def init(batch: Batch) -> ProportionState:
        hits = np.asarray(batch.values == label, dtype=bool)
        w = batch.weights
        return ProportionState(float(w[hits].sum()), float(w.sum()))

    def update(state: ProportionState, other) -> ProportionState:
        if isinstance(other, Batch):
            other = init(other)
        return ProportionState(state.successes + other.successes, state.trials + other.trials)

    def finalize(state: ProportionState) -> float:
        return proportion_stats(state.successes, state.trials)["proportion"]

    def summarize(state: ProportionState) -> dict:
        return proportion_stats(state.successes, state.trials)

    return JobDefinition(f"proportion:{label}", init, update, finalize, _identity,
                         mergeable=True, retractable=True, summarize=summarize)


# -- k-means ------------------------------------------------------------------

@dataclass(frozen=True)
class KMeansState:
    points: np.ndarray  # (m, d)
    weights: np.ndarray


def _kmeans_pp(points, weights, k, rng) -> np.ndarray:
    w = weights / weights.sum()
    centers = [points[rng.choice(len(points), p=w)]]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        prob = w * d2
        total = prob.sum()
        idx = rng.choice(len(points), p=prob / total) if total > 0 else rng.choice(len(points), p=w)
        centers.append(points[idx])
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def lloyd(points, weights, centers, max_iters: int, tol: float):
    """Weighted Lloyd iterations. Returns (centers, labels, wcss_trace)."""
    trace = []
    for _ in range(max_iters):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        trace.append(float(np.dot(weights, d2[np.arange(len(points)), labels])))
        new = centers.copy()
        for j in range(len(centers)):
            mask = labels == j
            if mask.any():
                new[j] = np.average(points[mask], axis=0, weights=weights[mask])
        shift = float(np.sqrt(((new - centers) ** 2).sum(axis=1)).max())
        centers = new
        if shift <= tol:
            break
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    trace.append(float(np.dot(weights, d2[np.arange(len(points)), labels])))
    return centers, labels, trace


def kmeans_fit(state: KMeansState, k: int, max_iters: int, tol: float, seed: int, n_init: int):
    pts, w = state.points, state.weights.astype(float)
    if len(np.unique(pts, axis=0)) < k:
        raise JobError(f"fewer than k={k} distinct points")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        centers, _, trace = lloyd(pts, w, _kmeans_pp(pts, w, k, rng), max_iters, tol)
        if best is None or trace[-1] < best[1]:
            best = (centers, trace[-1])
    centers = best[0][np.lexsort(best[0].T[::-1])]
    return centers, best[1]


def kmeans_job(k: int, max_iters: int = 100, tol: float = 1e-6, seed: int = 0,
               n_init: int = 5) -> JobDefinition:
    """Replicate statistic is the within-cluster sum of squares; centroids are
    reported through ``summarize``, sorted by first coordinate."""
    if k < 1:
        raise ValueError("k must be >= 1")

    def init(batch: Batch) -> KMeansState:
        pts = np.asarray(batch.values, dtype=float)
        return KMeansState(pts.reshape(len(pts), -1), np.asarray(batch.weights))

    def update(state: KMeansState, other) -> KMeansState:
        other = init(other) if isinstance(other, Batch) else other
        return KMeansState(np.vstack([state.points, other.points]),
                           np.concatenate([state.weights, other.weights]))

    def finalize(state: KMeansState) -> float:
        return kmeans_fit(state, k, max_iters, tol, seed, n_init)[1]

    def summarize(state: KMeansState) -> dict:
        centers, wcss = kmeans_fit(state, k, max_iters, tol, seed, n_init)
        return {"centroids": centers.tolist(), "wcss": wcss}

    return JobDefinition(f"kmeans:{k}", init, update, finalize, _identity,
                         mergeable=True, retractable=False, summarize=summarize)


def parse_job(selector: str) -> JobDefinition:
    """``mean | sum | median | proportion:<label> | kmeans:<k>``"""
    name, _, arg = selector.partition(":")
    if name == "mean" and not arg:
        return mean_job()
    if name == "sum" and not arg:
        return sum_job()
    if name == "median" and not arg:
        return median_job()
    if name == "proportion" and arg:
        return proportion_job(arg)
    if name == "kmeans" and arg.isdigit():
        return kmeans_job(int(arg))
    raise ValueError(f"unknown job selector {selector!r}")
