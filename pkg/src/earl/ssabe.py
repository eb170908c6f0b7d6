"""Sample-size and bootstrap-count estimation, run locally before the engine.

Phase one grows a replicate set on the initial sample one resample at a time
until the coefficient of variation settles. Phase two measures c_v on a
ladder of nested prefixes of the initial sample, fits
``c_v(n) = a / sqrt(n) + b`` and solves it for the target bound.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .bootstrap import draw_resample, error_estimate, evaluate
from .delta import update_resample_naive
from .jobs import JobDefinition, WorkMeter
from .sampling import Sample

MIN_RUNG = 30
DEFAULT_PATIENCE = 3


@dataclass(frozen=True)
class EstimatorConfig:
    sigma: float = 0.05
    tau: float = 0.01
    p_init: float = 0.01
    l: int = 5
    patience: int = DEFAULT_PATIENCE
    B_cap: int | None = None

    def __post_init__(self):
        if not 0 < self.sigma < 1:
            raise ValueError("sigma must lie in (0, 1)")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1)")
        if not 0 < self.p_init < 1:
            raise ValueError("p_init must lie in (0, 1)")
        if self.l < 2:
            raise ValueError("ladder depth l must be >= 2")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.B_cap is None:
            object.__setattr__(self, "B_cap", math.ceil(1 / self.tau - 1e-9))
        if self.B_cap < 2:
            raise ValueError("B_cap must be >= 2")


@dataclass(frozen=True)
class CvCurve:
    points: tuple[tuple[int, float], ...]
    a: float
    b: float
    residual: float

    def __post_init__(self):
        if not self.points:
            raise ValueError("a curve needs at least one point")
        if self.a < 0:
            raise ValueError("fitted slope must be non-negative")

    def __call__(self, n) -> np.ndarray | float:
        return self.a / np.sqrt(n) + self.b

    def solve(self, sigma: float, N: int, floor: int = MIN_RUNG) -> int:
        """Smallest n with c_v(n) <= sigma, clamped to [floor, N]; N when unreachable."""
        if self.b >= sigma:
            return N
        if self.a == 0:
            return min(floor, N)
        n = math.ceil((self.a / (sigma - self.b)) ** 2 - 1e-9)
        return int(min(max(n, floor), N))


def fit_cv_curve(points) -> CvCurve:
    """Least squares in the regressor n^-1/2 with a, b >= 0, on relative residuals.

    A negative intercept would claim c_v turns negative for large n; leaving
    it free lets rung noise drag it below zero and undersize n. The noise of
    a measured c_v scales with c_v itself, so each rung is weighted by 1/c_v;
    unweighted, the noisy small rungs can prop up a spurious intercept.
    """
    pts = tuple((int(n), float(c)) for n, c in points)
    if not pts:
        raise ValueError("no points to fit")
    n = np.array([p[0] for p in pts], dtype=float)
    cv = np.array([p[1] for p in pts])
    if len(pts) == 1:
        return CvCurve(pts, float(cv[0]) * math.sqrt(n[0]), 0.0, 0.0)
    w = 1 / cv if (cv > 0).all() else np.ones_like(cv)
    X = np.column_stack([n ** -0.5, np.ones_like(n)]) * w[:, None]
    (a, b), _ = nnls(X, cv * w)
    resid = float(np.sum((cv - (a * n ** -0.5 + b)) ** 2))
    return CvCurve(pts, float(a), float(b), resid)


@dataclass(frozen=True)
class BEstimate:
    B: int
    stabilized: bool
    trace: tuple[float, ...] = field(repr=False)  # c_v after each resample, from B=2

    def __int__(self) -> int:
        return self.B


def _relative_change(cur: float, prev: float) -> float:
    if prev == 0:
        return 0.0 if cur == 0 else math.inf
    return abs(cur - prev) / prev


def estimate_B(s_init: Sample, job: JobDefinition, cfg: EstimatorConfig, rng=None,
               meter: WorkMeter | None = None) -> BEstimate:
    """Add one resample at a time; stop once the relative change of c_v stays
    below tau for ``patience`` consecutive steps (a zero spread stops at B=2)."""
    rng = np.random.default_rng(rng)
    values = s_init.values
    est, trace = [], []
    run = 0
    for B in range(1, cfg.B_cap + 1):
        counts = draw_resample(s_init, rng).counts
        est.append(job.finalize(evaluate(job, values, counts, meter)))
        if B < 2:
            continue
        cv = error_estimate(np.array(est)).c_v
        if trace:
            run = run + 1 if _relative_change(cv, trace[-1]) < cfg.tau else 0
        trace.append(cv)
        if cv == 0 and B == 2:
            return BEstimate(2, True, tuple(trace))
        if run >= cfg.patience:
            return BEstimate(B, True, tuple(trace))
    return BEstimate(cfg.B_cap, False, tuple(trace))


def ladder_sizes(n0: int, l: int) -> list[int]:
    """n_i = n0 / 2^(l-i) for i = 1..l, smallest rung raised to MIN_RUNG."""
    sizes = sorted({max(min(MIN_RUNG, n0), n0 // 2 ** (l - i)) for i in range(1, l + 1)})
    return sizes


@dataclass(frozen=True)
class NEstimate:
    n: int
    curve: CvCurve
    rungs: tuple[int, ...]


def ladder_cv(s_init: Sample, B: int, job: JobDefinition, sizes, rng=None,
              meter: WorkMeter | None = None) -> list[tuple[int, float]]:
    """c_v at each rung. Rungs are nested prefixes, so each resample of a rung is
    delta-maintained into a resample of the next and its job state is updated
    with the multiplicity changes instead of being rebuilt."""
    rng = np.random.default_rng(rng)
    base = s_init.prefix(sizes[-1]).rebatched(np.diff([0, *sizes]))
    values = base.values
    first = base.prefix(sizes[0])
    resamples = [draw_resample(first, rng) for _ in range(B)]
    states = [evaluate(job, values, b.counts, meter) for b in resamples]
    points = []
    for i, n_i in enumerate(sizes):
        if i:
            s_i = base.prefix(n_i)
            for j, b in enumerate(resamples):
                nb = update_resample_naive(b, s_i, rng)
                resamples[j] = nb
                delta = nb.added - nb.removed
                if job.retractable or not nb.removed.any():
                    idx = np.flatnonzero(delta)
                    states[j] = job.feed(states[j], values[idx], delta[idx], meter)
                else:
                    states[j] = evaluate(job, values, nb.counts, meter)
        points.append((n_i, error_estimate(np.array([job.finalize(st) for st in states])).c_v))
    return points


def estimate_n(s_init: Sample, B: int, job: JobDefinition, cfg: EstimatorConfig, rng=None,
               *, N: int | None = None, meter: WorkMeter | None = None) -> NEstimate:
    if B < 2:
        raise ValueError("B must be >= 2")
    n0 = len(s_init)
    if n0 < 2 ** (cfg.l - 1):
        raise ValueError(f"initial sample of {n0} is too small for ladder depth {cfg.l}")
    N = int(N if N is not None else round(s_init.kv_count_estimate))
    sizes = ladder_sizes(n0, cfg.l)
    points = ladder_cv(s_init, B, job, sizes, rng, meter)
    curve = fit_cv_curve(points)
    if all(c == 0 for _, c in points):
        return NEstimate(sizes[0], curve, tuple(sizes))
    return NEstimate(curve.solve(cfg.sigma, N), curve, tuple(sizes))


def feasibility_gate(B: int, n: int, N: int) -> str:
    return "full" if B * n >= N else "early"


def theoretical_B(epsilon0: float) -> int:
    if not epsilon0 > 0:
        raise ValueError("epsilon0 must be > 0")
    return math.ceil(0.5 / epsilon0 ** 2 - 1e-9)
