"""Job lifecycle: sample, resample, estimate, then expand or stop.

A coordinator owns the loop. Each iteration the B resamples are split into
contiguous shards, one per worker; a worker evaluates (or incrementally
maintains) its shard and posts the shard's c_v to the error board. The
coordinator averages the new board entries and either stops or grows the
sample along the refitted c_v curve.
"""
from __future__ import annotations

import itertools
import json
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .bootstrap import Resample, ZeroMeanError, error_estimate, evaluate, resample_chain
from .datastore import BlockFile, iter_records
from .delta import DEFAULT_SKETCH_C, LayeredResample, update_resample_sketched
from .jobs import JobDefinition, WorkMeter
from .sampling import (Sample, expand_sample, postmap_sample, premap_sample,
                       reservoir_sample)
from .ssabe import (CvCurve, EstimatorConfig, estimate_B, estimate_n, feasibility_gate,
                    fit_cv_curve)

SAMPLERS = {"pre": "pre_map", "post": "post_map", "reservoir": "reservoir"}
MODES = ("early", "full", "degraded")


class NoSurvivorsError(RuntimeError):
    """Every worker failed, so no replicate survived."""


# -- error board --------------------------------------------------------------

@dataclass(frozen=True)
class ErrorReport:
    worker_id: int
    timestamp: int
    c_v: float


class ErrorBoard:
    """Append-only log of worker reports with a global monotonic clock."""

    def __init__(self):
        self._log: list[ErrorReport] = []
        self._clock = itertools.count(1)
        self._lock = threading.Lock()

    def post(self, worker_id: int, c_v: float) -> ErrorReport:
        with self._lock:
            rep = ErrorReport(worker_id, next(self._clock), float(c_v))
            self._log.append(rep)
            return rep

    @property
    def reports(self) -> tuple[ErrorReport, ...]:
        with self._lock:
            return tuple(self._log)

    def read_since(self, cursor: int) -> list[ErrorReport]:
        return [r for r in self.reports if r.timestamp > cursor]

    def new_error_average(self, cursor: int) -> tuple[float | None, int]:
        """Average over reports newer than ``cursor`` and the advanced cursor."""
        new = self.read_since(cursor)
        if not new:
            return None, cursor
        return average_board_error(self, cursor), max(r.timestamp for r in new)


def average_board_error(board: ErrorBoard, cursor: int = 0) -> float | None:
    """Mean c_v of reports newer than ``cursor``; None when there are none.

    Reports are summed in worker order so the result does not depend on
    which worker happened to post first.
    """
    new = sorted(board.read_since(cursor), key=lambda r: (r.worker_id, r.timestamp))
    if not new:
        return None
    return math.fsum(r.c_v for r in new) / len(new)


# -- configuration and result -------------------------------------------------

@dataclass
class RuntimeConfig:
    workers: int = 4
    sampler: str = "pre"
    seed: int = 0
    bootstraps: int | None = None  # skips the B estimate when set
    sample_size: int | None = None  # skips the n estimate when set
    intra_sharing: bool = True
    failures: list[tuple[int, int]] = field(default_factory=list)  # (worker, iteration)
    max_iterations: int = 20
    sketch_c: float = DEFAULT_SKETCH_C
    mode: str = "early"

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {sorted(SAMPLERS)}")
        if self.mode not in ("early", "full"):
            raise ValueError("mode must be early or full")
        if self.bootstraps is not None and self.bootstraps < 2:
            raise ValueError("bootstraps must be >= 2")
        if self.sample_size is not None and self.sample_size < 2:
            raise ValueError("sample_size must be >= 2")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        self.failures = [(int(w), int(i)) for w, i in self.failures]
        for w, i in self.failures:
            if not 0 <= w < self.workers:
                raise ValueError(f"no worker {w} among {self.workers}")
            if i < 1:
                raise ValueError("failure iterations start at 1")


def inject_failure(runtime: RuntimeConfig, worker_ids, at: int) -> None:
    """Schedule ``worker_ids`` to die part way through iteration ``at``."""
    for w in sorted(set(worker_ids)):
        if not 0 <= w < runtime.workers:
            raise ValueError(f"no worker {w} among {runtime.workers}")
        runtime.failures.append((w, int(at)))


@dataclass
class FinalResult:
    estimate: float
    cv: float
    B: int
    n: int
    p: float
    iterations: int
    records_processed: int
    mode: str
    seed: int = 0
    replicates: int = 0
    estimation_records: int = 0
    cv_absolute: bool = False
    summary: dict | None = None
    curve: list = field(default_factory=list)  # [n, cv] points behind the n estimate
    trace: list = field(default_factory=list, repr=False)  # [iteration, n, B, cv, D]

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("trace")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "FinalResult":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    @classmethod
    def from_json(cls, text: str) -> "FinalResult":
        return cls.from_dict(json.loads(text))


# -- full scan ----------------------------------------------------------------

def scan_values(bf: BlockFile) -> np.ndarray:
    """Every record value, in file order."""
    with open(bf.path, "rb") as fh:
        tokens = fh.read().decode("utf-8").split()
    vals = tokens[1::2]
    if len(tokens) % 2 == 0:
        try:
            if "," in vals[0]:
                flat = np.array(",".join(vals).split(","), dtype=float)
                return flat.reshape(len(vals), -1)
            return np.array(vals, dtype=float)
        except ValueError:
            if all("," not in v for v in vals):
                return np.array(vals, dtype=object)
    # irregular layout: fall back to the record parser
    got = [r.value for r in iter_records(bf)]
    if got and isinstance(got[0], str):
        return np.array(got, dtype=object)
    return np.asarray(got, dtype=float)


def _full_state(bf: BlockFile, job: JobDefinition, meter: WorkMeter | None = None):
    values = scan_values(bf)
    return values, job.run(values, None, meter)


def full_scan(bf: BlockFile, job: JobDefinition) -> float:
    _, state = _full_state(bf, job)
    return job.correct(job.finalize(state), 1.0)


def _full_result(bf, job, *, seed, iterations=0, before=0, estimation=0, trace=None,
                 curve=None):
    meter = WorkMeter()
    values, state = _full_state(bf, job, meter)
    N = len(values)
    est = job.correct(job.finalize(state), 1.0)
    summary = job.summarize(state) if job.summarize else None
    return FinalResult(float(est), 0.0, 0, N, 1.0, iterations, before + meter.items, "full",
                       seed=seed, estimation_records=estimation, summary=summary,
                       curve=curve or [], trace=trace or [])


def grow_target(points, sigma: float, N: int) -> int:
    """Sample size the refitted curve asks for.

    The intercept comes from a fit over every point; the slope is re-solved
    through the newest observation. Maintained replicates change little
    between iterations, so a plain refit lets older points pin the curve and
    the loop creeps.
    """
    b = fit_cv_curve(points).b
    n, cv = points[-1]
    a = max(cv - b, 0.0) * math.sqrt(n)
    return CvCurve(tuple(points), a, b, 0.0).solve(sigma, N)


# -- the loop -----------------------------------------------------------------

class _RecordSource:
    """Re-iterable record stream over a block file."""

    def __init__(self, bf: BlockFile):
        self.bf = bf

    def __iter__(self):
        return iter_records(self.bf)


def _initial_sample(bf: BlockFile, sampler: str, n: int, rng) -> Sample:
    if sampler == "pre":
        return premap_sample(bf, n, rng=rng)
    if sampler == "post":
        return postmap_sample(iter_records(bf), n, rng)
    return reservoir_sample(_RecordSource(bf), n, rng)


@dataclass
class _Slot:
    """One resample owned by a worker, with its private generator and state."""

    rng: np.random.Generator
    counts: np.ndarray | None = None
    layered: LayeredResample | None = None
    state: object = None
    estimate: float = float("nan")


class _WorkerFailed(Exception):
    pass


def _work_shard(w: int, slots: list[_Slot], s: Sample, job: JobDefinition, first: bool,
                share: bool, c: float, die: bool, meter: WorkMeter) -> list[float]:
    """Process one shard; a dying worker stops half way and its results are lost."""
    stop = len(slots) // 2 if die else len(slots)
    values = s.values
    if first:
        resamples, states = resample_chain(s, stop, job, [sl.rng for sl in slots[:stop]],
                                           share=share, meter=meter)
        for sl, b, st in zip(slots, resamples, states):
            sl.counts, sl.state = b.counts, st
    else:
        for sl in slots[:stop]:
            if sl.layered is None:
                sl.layered = LayeredResample.from_resample(
                    _as_resample(sl.counts, s, len(sl.counts)), c, sl.rng)
            lb = update_resample_sketched(sl.layered, s, sl.rng)
            if lb.added is None:
                continue
            delta = lb.added - lb.removed
            if job.retractable or not lb.removed.any():
                idx = np.flatnonzero(delta)
                sl.state = job.feed(sl.state, values[idx], delta[idx], meter)
            else:
                sl.state = evaluate(job, values, lb.counts(), meter)
    if die:
        raise _WorkerFailed(w)
    for sl in slots:
        sl.estimate = float(job.finalize(sl.state))
    return [sl.estimate for sl in slots]


def _as_resample(counts, s: Sample, n: int) -> Resample:
    bounds = [(lo, min(hi, n)) for lo, hi in s.bounds if lo < n]
    return Resample(counts, tuple(bounds))


def _cv(estimates) -> tuple[float, bool]:
    """(c_v, absolute). At zero mean the plain standard deviation stands in."""
    try:
        e = error_estimate(np.asarray(estimates, float), absolute_fallback=True)
    except ZeroMeanError:  # zero mean and zero spread
        return 0.0, True
    return e.c_v, e.absolute


def run_job(bf: BlockFile, job: JobDefinition, cfg: EstimatorConfig | None = None,
            runtime: RuntimeConfig | None = None) -> FinalResult:
    cfg = cfg or EstimatorConfig()
    runtime = runtime or RuntimeConfig()
    seed = int(runtime.seed)
    if runtime.mode == "full":
        return _full_result(bf, job, seed=seed)

    root = np.random.SeedSequence(seed)
    sample_seq, ssabe_seq, expand_seq = root.spawn(3)
    sample_rng = np.random.default_rng(sample_seq)

    # size the initial sample from a byte-level count estimate
    probe = _initial_sample(bf, runtime.sampler, 1, np.random.default_rng(sample_seq.spawn(1)[0]))
    N_est = probe.kv_count_estimate
    n0 = max(math.ceil(cfg.p_init * N_est), 2 ** (cfg.l - 1), 30)
    if n0 >= N_est:
        return _full_result(bf, job, seed=seed)
    s_init = _initial_sample(bf, runtime.sampler, n0, sample_rng)
    N = int(round(s_init.kv_count_estimate))

    est_meter = WorkMeter()
    ssabe_rng = np.random.default_rng(ssabe_seq)
    B = runtime.bootstraps
    if B is None:
        B = estimate_B(s_init, job, cfg, ssabe_rng, est_meter).B
    curve_pts: list[tuple[int, float]] = []
    n = runtime.sample_size
    if n is None:
        ne = estimate_n(s_init, B, job, cfg, ssabe_rng, N=N, meter=est_meter)
        n, curve_pts = ne.n, list(ne.curve.points)
    ladder = [list(pt) for pt in curve_pts]
    estimation = len(s_init) + est_meter.items
    if feasibility_gate(B, n, N) == "full":
        return _full_result(bf, job, seed=seed, estimation=estimation, curve=ladder)

    s = s_init.prefix(n) if n <= len(s_init) else expand_sample(s_init, n - len(s_init),
                                                                rng=sample_rng)
    s = s.rebatched([len(s)])
    sample_reads = len(s)

    workers = max(1, min(runtime.workers, B // 2))
    shard_idx = np.array_split(np.arange(B), workers)
    slots = [_Slot(np.random.default_rng([seed, 7, b])) for b in range(B)]
    alive = set(range(workers))
    meters = [WorkMeter() for _ in range(workers)]
    board = ErrorBoard()
    cursor = 0
    degraded = False
    trace = []
    expand_rng = np.random.default_rng(expand_seq)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for it in range(1, runtime.max_iterations + 1):
            dying = {w for w, i in runtime.failures if i == it}
            futures = {}
            for w in sorted(alive):
                shard = [slots[b] for b in shard_idx[w].tolist()]
                futures[w] = pool.submit(_work_shard, w, shard, s, job, it == 1,
                                         runtime.intra_sharing, runtime.sketch_c,
                                         w in dying, meters[w])
            lost, absolute = set(), False
            for w, fut in futures.items():
                try:
                    shard_cv, shard_abs = _cv(fut.result())
                except _WorkerFailed:
                    lost.add(w)
                    continue
                board.post(w, shard_cv)
                absolute |= shard_abs
            if lost:
                alive -= lost
                degraded = True
            if not alive:
                raise NoSurvivorsError("no survivors: every worker failed")

            estimates = [slots[b].estimate for w in sorted(alive) for b in shard_idx[w]]
            cv, cursor = board.new_error_average(cursor)
            if degraded or absolute:
                # survivors (or mixed absolute reports) are pooled instead
                cv, absolute = _cv(estimates)
            D = sample_reads + sum(m.items for m in meters)
            trace.append([it, len(s), len(estimates), cv, D])

            if cv <= cfg.sigma:
                p = s.p
                est = job.correct(float(np.mean(estimates)), p)
                summary = job.summarize(job.run(s.values)) if job.summarize else None
                return FinalResult(float(est), float(cv), len(estimates), len(s), float(p), it,
                                   D, "degraded" if degraded else "early", seed=seed,
                                   replicates=len(estimates), estimation_records=estimation,
                                   cv_absolute=absolute, summary=summary, curve=ladder,
                                   trace=trace)
            if s.saturated or len(s) >= N or it == runtime.max_iterations:
                break
            curve_pts.append((len(s), cv))
            target = grow_target(curve_pts, cfg.sigma, N)
            n_next = min(max(target, len(s) + 1), 2 * len(s), N)
            if n_next <= len(s):
                break
            s = expand_sample(s, n_next - len(s), rng=expand_rng)
            sample_reads += len(s) - trace[-1][1]

    return _full_result(bf, job, seed=seed, iterations=len(trace),
                        before=trace[-1][4] if trace else 0, estimation=estimation, trace=trace,
                        curve=ladder)
