"""scikit-learn style front end.

``EarlyApproximation.fit`` runs the whole early-result pipeline on a dataset
file, an open :class:`BlockFile`, or an in-memory array (written to a
temporary file first so the samplers see the same block layout).
``SampleSizeEstimator.fit`` runs only the local B and n estimate on an array.
"""
from __future__ import annotations

import os
import tempfile

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .datastore import DEFAULT_BLOCK_SIZE, BlockFile, Record, open_dataset
from .engine import RuntimeConfig, run_job
from .generate import write_values
from .jobs import parse_job
from .sampling import Sample
from .ssabe import EstimatorConfig, estimate_B, estimate_n


def _validate(X, job: str):
    """Numeric arrays go through check_array; label arrays stay 1-D tokens."""
    if job.startswith("proportion:"):
        arr = np.asarray(X, dtype=object).ravel()
        if arr.size == 0:
            raise ValueError("empty input")
        return arr
    arr = check_array(X, ensure_2d=False, dtype=np.float64)
    return arr


class EarlyApproximation(BaseEstimator):
    """Approximate a job result on a uniform sample, to a target c_v."""

    def __init__(self, job="mean", sigma=0.05, tau=0.01, p_init=0.01, ladder_depth=5,
                 sampler="pre", bootstraps=None, sample_size=None, intra_sharing=True,
                 workers=4, mode="early", seed=0, block_size=DEFAULT_BLOCK_SIZE):
        self.job = job
        self.sigma = sigma
        self.tau = tau
        self.p_init = p_init
        self.ladder_depth = ladder_depth
        self.sampler = sampler
        self.bootstraps = bootstraps
        self.sample_size = sample_size
        self.intra_sharing = intra_sharing
        self.workers = workers
        self.mode = mode
        self.seed = seed
        self.block_size = block_size

    def _configs(self):
        cfg = EstimatorConfig(sigma=self.sigma, tau=self.tau, p_init=self.p_init,
                              l=self.ladder_depth)
        rt = RuntimeConfig(workers=self.workers, sampler=self.sampler, seed=self.seed,
                           bootstraps=self.bootstraps, sample_size=self.sample_size,
                           intra_sharing=self.intra_sharing, mode=self.mode)
        return cfg, rt

    def fit(self, X, y=None):
        job = parse_job(self.job)
        cfg, rt = self._configs()
        if isinstance(X, BlockFile):
            result = run_job(X, job, cfg, rt)
        elif isinstance(X, (str, os.PathLike)):
            with open_dataset(X, self.block_size) as bf:
                result = run_job(bf, job, cfg, rt)
        else:
            arr = _validate(X, self.job)
            with tempfile.TemporaryDirectory() as tmp:
                path = os.path.join(tmp, "data.txt")
                write_values(path, arr)
                with open_dataset(path, self.block_size) as bf:
                    result = run_job(bf, job, cfg, rt)
        self.result_ = result
        self.estimate_ = result.estimate
        self.cv_ = result.cv
        self.B_ = result.B
        self.n_ = result.n
        self.p_ = result.p
        self.mode_ = result.mode
        if result.summary and "centroids" in result.summary:
            self.cluster_centers_ = np.asarray(result.summary["centroids"])
        return self

    def predict(self, X):
        """Nearest-centroid labels; only defined for k-means jobs."""
        check_is_fitted(self, "result_")
        if not hasattr(self, "cluster_centers_"):
            raise AttributeError(f"predict is only available for k-means jobs, not {self.job!r}")
        X = check_array(X, dtype=np.float64)
        d2 = ((X[:, None, :] - self.cluster_centers_[None, :, :]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)


def sample_from_values(values, N: int | None = None) -> Sample:
    """Wrap an in-memory array (already in random order) as a sample."""
    arr = np.asarray(values)
    vals = [tuple(row) for row in arr.tolist()] if arr.ndim == 2 else arr.tolist()
    items = tuple(Record(f"k{i}", v, (0, i)) for i, v in enumerate(vals))
    return Sample(items, ((1, len(items)),), "post_map", float(N if N is not None else len(items)))


class SampleSizeEstimator(BaseEstimator):
    """Bootstrap count and sample size for a target c_v, from an initial sample."""

    def __init__(self, job="mean", sigma=0.05, tau=0.01, ladder_depth=5, population=None,
                 seed=0):
        self.job = job
        self.sigma = sigma
        self.tau = tau
        self.ladder_depth = ladder_depth
        self.population = population
        self.seed = seed

    def fit(self, X, y=None):
        arr = _validate(X, self.job)
        job = parse_job(self.job)
        N = self.population if self.population is not None else 100 * len(arr)
        cfg = EstimatorConfig(sigma=self.sigma, tau=self.tau, l=self.ladder_depth)
        rng = np.random.default_rng(self.seed)
        s = sample_from_values(arr, N)
        be = estimate_B(s, job, cfg, rng)
        ne = estimate_n(s, be.B, job, cfg, rng, N=N)
        self.B_ = be.B
        self.stabilized_ = be.stabilized
        self.n_ = ne.n
        self.curve_ = ne.curve
        return self
