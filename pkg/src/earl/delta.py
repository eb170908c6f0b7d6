"""Incremental maintenance of bootstrap resamples when the sample grows.

When a sample ``s`` of size n grows to ``s'`` of size n' (the new batch being
positions ``[n, n')``), a resample of ``s`` is turned into a resample of
``s'`` instead of being redrawn:

1. draw the size K of the part that comes from the old sample,
   K ~ Binomial(n', n/n'),
2. delete n - K multiplicity-weighted items if K < n, or add K - n
   uniform draws from ``s`` if K > n,
3. add n' - K uniform draws from the new batch.

The sketched variant keeps small random subsets (sketches) of every part of
the resample and of every sample batch in memory, serves deletions and
additions from them, and touches the persisted resample only when a sketch
runs dry.
"""
from __future__ import annotations

import bisect
import math
import os
import random
from dataclasses import dataclass, field

import numpy as np

from .bootstrap import Resample
from .sampling import Sample

EXACT_LIMIT = 10_000
GAUSS_GUARD = 5.0
DEFAULT_SKETCH_C = 4.0
SPILL_MAGIC = b"EARLSPL1"
SPILL_DTYPE = np.dtype([("pos", "<u8"), ("mult", "<u4")])


@dataclass(frozen=True)
class SizeModel:
    n: int
    n_prime: int
    mode: str | None = None

    def __post_init__(self):
        if not 1 <= self.n <= self.n_prime:
            raise ValueError("need 1 <= n <= n_prime")
        if self.mode is None:
            object.__setattr__(self, "mode", choose_size_mode(self.n, self.n_prime))
        elif self.mode not in ("exact_binomial", "gaussian_approx"):
            raise ValueError(f"unknown mode {self.mode!r}")

    @property
    def sd(self) -> float:
        return math.sqrt(self.n * (1 - self.n / self.n_prime))


def choose_size_mode(n: int, n_prime: int) -> str:
    """Gaussian only for large n' and when n +- 5 sd stays inside [0, n']."""
    if n_prime < EXACT_LIMIT:
        return "exact_binomial"
    sd = math.sqrt(n * (1 - n / n_prime))
    if n - GAUSS_GUARD * sd >= 0 and n + GAUSS_GUARD * sd <= n_prime:
        return "gaussian_approx"
    return "exact_binomial"


def sample_new_old_part_size(m: SizeModel, rng=None) -> int:
    rng = np.random.default_rng(rng)
    if m.n == m.n_prime:
        return m.n_prime
    if m.mode == "exact_binomial":
        return int(rng.binomial(m.n_prime, m.n / m.n_prime))
    k = int(round(rng.normal(m.n, m.sd)))
    return min(max(k, 0), m.n_prime)


def _py_rng(rng) -> random.Random:
    """Scalar-speed generator seeded from a numpy one (per-item work is tiny)."""
    return random.Random(int(np.random.default_rng(rng).integers(1 << 62)))


@dataclass
class AccessCounter:
    reads: int = 0
    writes: int = 0

    @property
    def total(self) -> int:
        return self.reads + self.writes


def _new_part_bounds(b_len: int, s: Sample) -> tuple[int, int]:
    n_prime = len(s)
    if n_prime < b_len:
        raise ValueError("sample shrank")
    return b_len, n_prime


def update_resample_naive(b: Resample, s: Sample, rng=None, *,
                          io: AccessCounter | None = None) -> Resample:
    """Maintain ``b`` (a resample of the first ``len(b.counts)`` items of ``s``)
    into a resample of all of ``s``. The returned resample carries the
    ``added``/``removed`` multiplicity vectors."""
    rng = np.random.default_rng(rng)
    n, n_prime = _new_part_bounds(len(b.counts), s)
    if n_prime == n:
        return b
    k = sample_new_old_part_size(SizeModel(n, n_prime), rng)
    added = np.zeros(n_prime, dtype=np.int64)
    removed = np.zeros(n_prime, dtype=np.int64)
    if k < n:
        slots = np.repeat(np.arange(n), b.counts)
        gone = slots[rng.choice(n, size=n - k, replace=False)]
        removed[:n] = np.bincount(gone, minlength=n)
    elif k > n:
        added[:n] = np.bincount(rng.integers(0, n, k - n), minlength=n)
    added[n:] = np.bincount(rng.integers(0, n_prime - n, n_prime - k), minlength=n_prime - n)
    counts = np.zeros(n_prime, dtype=np.int64)
    counts[:n] = b.counts
    counts += added - removed
    if io is not None:
        io.reads += n
        io.writes += n_prime
    return Resample(counts, tuple(s.bounds), added=added, removed=removed)


# -- sketches -----------------------------------------------------------------

def sketch_capacity(m: int, c: float) -> int:
    return int(math.ceil(c * math.sqrt(m))) if m > 0 else 0


@dataclass
class Sketch:
    """Random without-replacement subset of a backing multiset, in random order.

    Entries are consumed front to back; ``cursor`` marks the used prefix.
    """

    entries: list[int]
    capacity: int
    c: float = DEFAULT_SKETCH_C
    cursor: int = 0

    @property
    def used_flags(self) -> list[bool]:
        return [i < self.cursor for i in range(len(self.entries))]

    @property
    def unused(self) -> list[int]:
        return self.entries[self.cursor:]

    @property
    def exhausted(self) -> bool:
        return self.cursor >= len(self.entries)

    def take(self) -> int:
        item = self.entries[self.cursor]
        self.cursor += 1
        return item


def sketch_refresh(sk: Sketch, backing, rng=None) -> Sketch:
    """Redraw a sketch of ``backing`` (any sequence, duplicates allowed as
    distinct slots) with size ``min(capacity, len(backing))``."""
    rng = np.random.default_rng(rng)
    backing = list(backing)
    if not backing:
        raise ValueError("cannot sketch an empty backing set")
    cap = max(sk.capacity, sketch_capacity(len(backing), sk.c))
    pick = rng.permutation(len(backing))[:cap].tolist()
    return Sketch([backing[i] for i in pick], cap, sk.c)


def _fresh_sketch(backing, c: float, py: random.Random) -> Sketch:
    """Sketch of ``backing`` (a sequence or range) in random order."""
    m = len(backing)
    cap = sketch_capacity(m, c)
    return Sketch(py.sample(backing, min(cap, m)) if m else [], cap, c)


# -- disk layer ---------------------------------------------------------------

def write_spill(path, counts: np.ndarray) -> None:
    nz = np.flatnonzero(counts)
    rec = np.empty(len(nz), dtype=SPILL_DTYPE)
    rec["pos"] = nz
    rec["mult"] = counts[nz]
    with open(path, "wb") as fh:
        fh.write(SPILL_MAGIC)
        fh.write(rec.tobytes())


def read_spill(path, n: int | None = None) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(8) != SPILL_MAGIC:
            raise ValueError(f"{path}: not a spill file")
        rec = np.frombuffer(fh.read(), dtype=SPILL_DTYPE)
    size = n if n is not None else (int(rec["pos"].max()) + 1 if len(rec) else 0)
    counts = np.zeros(size, dtype=np.int64)
    counts[rec["pos"].astype(np.int64)] = rec["mult"]
    return counts


class DiskLayer:
    """The persisted full resample. Every read or write is counted per item."""

    def __init__(self, counts: np.ndarray, spill_path=None):
        self._counts = np.asarray(counts, dtype=np.int64).copy()
        self.io = AccessCounter()
        self.spill_path = os.fspath(spill_path) if spill_path is not None else None
        if self.spill_path:
            write_spill(self.spill_path, self._counts)

    def __len__(self) -> int:
        return len(self._counts)

    def grow(self, n: int) -> None:
        if n > len(self._counts):
            self._counts = np.concatenate([self._counts, np.zeros(n - len(self._counts), np.int64)])

    def read(self, lo: int, hi: int) -> np.ndarray:
        part = self._counts[lo:hi].copy()
        self.io.reads += int(part.sum())
        return part

    def commit(self, lo: int, delta: np.ndarray) -> None:
        changed = int(np.abs(delta).sum())
        if not changed:
            return
        self._counts[lo:lo + len(delta)] += delta
        self.io.writes += changed
        if self.spill_path:
            write_spill(self.spill_path, self._counts)

    def peek(self) -> np.ndarray:
        """Uncounted copy, for verification only."""
        return self._counts.copy()


@dataclass
class LayeredResample:
    disk: DiskLayer
    pending: np.ndarray  # uncommitted multiplicity changes (memory layer)
    bounds: tuple[tuple[int, int], ...]
    part_sizes: list[int]
    part_sketches: list[Sketch]  # sketch(b_{ds_k})
    batch_sketches: list[Sketch]  # sketch(ds_k)
    c: float = DEFAULT_SKETCH_C
    sample_reads: int = 0
    added: np.ndarray | None = field(default=None, repr=False)
    removed: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_resample(cls, b: Resample, c: float = DEFAULT_SKETCH_C, rng=None,
                      spill_path=None) -> "LayeredResample":
        py = _py_rng(rng)
        part_sk, batch_sk, sizes = [], [], []
        for lo, hi in b.bounds:
            slots = np.repeat(np.arange(lo, hi), b.counts[lo:hi]).tolist()
            part_sk.append(_fresh_sketch(slots, c, py))
            batch_sk.append(_fresh_sketch(range(lo, hi), c, py))
            sizes.append(len(slots))
        return cls(DiskLayer(b.counts, spill_path), np.zeros(len(b.counts), np.int64),
                   tuple(b.bounds), sizes, part_sk, batch_sk, c)

    @property
    def n(self) -> int:
        return len(self.pending)

    @property
    def size(self) -> int:
        return sum(self.part_sizes)

    def counts(self) -> np.ndarray:
        """Current multiplicities, merging both layers (uncounted)."""
        return self.disk.peek() + self.pending

    def to_resample(self) -> Resample:
        return Resample(self.counts(), self.bounds)

    def commit(self) -> None:
        """Flush every pending change to the disk layer."""
        self.disk.commit(0, self.pending)
        self.pending[:] = 0

    # step 2, deletions: sequential picks from sketch(b_{ds_k})
    def _take_slot(self, k: int, rng) -> int:
        sk = self.part_sketches[k]
        if sk.exhausted:
            lo, hi = self.bounds[k]
            self.disk.commit(lo, self.pending[lo:hi])
            self.pending[lo:hi] = 0
            part = self.disk.read(lo, hi)
            sk = _fresh_sketch(np.repeat(np.arange(lo, hi), part).tolist(), self.c, rng)
            self.part_sketches[k] = sk
        return sk.take()

    # additions: with-replacement draws built from a without-replacement stream
    def _draw_from_batch(self, k: int, m: int, rng) -> list[int]:
        lo, hi = self.bounds[k]
        size = hi - lo
        distinct: list[int] = []
        out: list[int] = []
        for _ in range(m):
            d = len(distinct)
            if d and rng.random() * size < d:
                out.append(distinct[rng.randrange(d)])
                continue
            sk = self.batch_sketches[k]
            if sk.exhausted:
                seen = set(distinct)
                backing = [p for p in range(lo, hi) if p not in seen]
                self.sample_reads += len(backing)
                sk = _fresh_sketch(backing, self.c, rng)
                self.batch_sketches[k] = sk
            pick = sk.take()
            distinct.append(pick)
            out.append(pick)
        return out

    def _absorb(self, k: int, new_slots: list[int], rng) -> None:
        """End-of-iteration: compact the part sketch, then fold in the slots
        added to the part by reservoir replacement."""
        sk = self.part_sketches[k]
        entries = sk.unused
        r = len(entries)
        m = self.part_sizes[k] - len(new_slots)
        for slot in new_slots:
            m += 1
            j = rng.randrange(m)
            if j < r:
                entries[j] = slot
        rng.shuffle(entries)
        self.part_sketches[k] = Sketch(entries, sk.capacity, self.c)


def update_resample_sketched(lb: LayeredResample, s: Sample, rng=None) -> LayeredResample:
    """Sketch-served variant of :func:`update_resample_naive`.

    Same output law; the disk layer is touched only when a sketch is used up.
    ``lb`` is updated in place and returned.
    """
    rng = np.random.default_rng(rng)
    n, n_prime = _new_part_bounds(lb.n, s)
    if n_prime == n:
        lb.added = lb.removed = None
        return lb
    py = _py_rng(rng)
    k_old = sample_new_old_part_size(SizeModel(n, n_prime), rng)
    added = np.zeros(n_prime, dtype=np.int64)
    removed = np.zeros(n_prime, dtype=np.int64)
    lb.pending = np.concatenate([lb.pending, np.zeros(n_prime - n, np.int64)])
    lb.disk.grow(n_prime)
    old_parts = len(lb.bounds)
    new_slots: dict[int, list[int]] = {}

    if k_old < n:
        # each deletion picks a part with probability proportional to its
        # remaining size, i.e. a uniform slot of the whole resample
        sizes = list(lb.part_sizes)
        left = sum(sizes)
        for _ in range(n - k_old):
            u = py.randrange(left)
            k = 0
            while u >= sizes[k]:
                u -= sizes[k]
                k += 1
            pos = lb._take_slot(k, py)
            lb.pending[pos] -= 1
            removed[pos] += 1
            sizes[k] -= 1
            left -= 1
        lb.part_sizes = sizes
    elif k_old > n:
        ends = [hi for _, hi in lb.bounds]
        per_part = [0] * old_parts
        for _ in range(k_old - n):
            per_part[bisect.bisect_right(ends, py.randrange(n))] += 1
        for k, ak in enumerate(per_part):
            if ak:
                picks = lb._draw_from_batch(k, ak, py)
                for pos in picks:
                    added[pos] += 1
                    lb.pending[pos] += 1
                lb.part_sizes[k] += ak
                new_slots[k] = picks

    # step 3: the new batch is in memory, so its draws and sketches cost no disk access
    fresh = rng.integers(n, n_prime, n_prime - k_old)
    new_counts = np.bincount(fresh - n, minlength=n_prime - n)
    added[n:] = new_counts
    lb.pending[n:] += new_counts
    lb.bounds = tuple(s.bounds)
    for lo, hi in lb.bounds[old_parts:]:
        in_part = fresh[(fresh >= lo) & (fresh < hi)].tolist()
        lb.part_sizes.append(len(in_part))
        lb.part_sketches.append(_fresh_sketch(in_part, lb.c, py))
        lb.batch_sketches.append(_fresh_sketch(range(lo, hi), lb.c, py))

    for k in range(old_parts):
        lb._absorb(k, new_slots.get(k, []), py)
        sk = lb.batch_sketches[k]
        if sk.cursor:
            lo, hi = lb.bounds[k]
            lb.sample_reads += sk.capacity
            lb.batch_sketches[k] = _fresh_sketch(range(lo, hi), lb.c, py)
    lb.added, lb.removed = added, removed
    return lb
