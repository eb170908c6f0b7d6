"""Uniform record samplers: pre-map (byte offsets), post-map (random keys), reservoir.

A :class:`Sample` is grown in delta batches. Every sampler draws without
replacement over the whole lifetime of a sample, identified by record origin.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable

import numpy as np

from .datastore import BlockFile, NoFollowingLineError, Record, line_starts, read_line_at

MODES = ("pre_map", "post_map", "reservoir")
RETRY_FACTOR = 50


class SampleExhaustedError(RuntimeError):
    """The dataset holds fewer distinct records than requested."""


class FullDataModeError(SampleExhaustedError):
    """A post-map stream is shorter than the requested sample."""


class InclusionBitmap:
    """Per-split set of line-start offsets already drawn into the sample."""

    def __init__(self):
        self._by_split: dict[int, set[int]] = {}

    def __contains__(self, origin: tuple[int, int]) -> bool:
        return origin[1] in self._by_split.get(origin[0], ())

    def add(self, origin: tuple[int, int]) -> None:
        self._by_split.setdefault(origin[0], set()).add(origin[1])

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_split.values())

    def offsets(self) -> set[int]:
        return set().union(*self._by_split.values()) if self._by_split else set()


@dataclass
class _PreMapSource:
    bf: BlockFile
    bitmap: InclusionBitmap
    bytes_seen: int = 0
    lines_seen: int = 0

    @property
    def kv_estimate(self) -> float:
        return self.bf.total_bytes / (self.bytes_seen / self.lines_seen)


@dataclass
class _KeyedStore:
    """Records ordered by an i.i.d. random key; drawing pops the smallest keys."""

    records: list[Record]
    order: np.ndarray
    cursor: int = 0

    @property
    def remaining(self) -> int:
        return len(self.records) - self.cursor

    def pop(self, m: int) -> list[Record]:
        idx = self.order[self.cursor:self.cursor + m]
        self.cursor += len(idx)
        return [self.records[i] for i in idx.tolist()]


@dataclass(frozen=True)
class Sample:
    items: tuple[Record, ...]
    batches: tuple[tuple[int, int], ...]  # (batch index k, size n_k)
    mode: str
    kv_count_estimate: float
    saturated: bool = False
    source: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if sum(size for _, size in self.batches) != len(self.items):
            raise ValueError("batch sizes must sum to the sample size")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def n(self) -> int:
        return len(self.items)

    @property
    def bounds(self) -> list[tuple[int, int]]:
        """Position range ``[start, end)`` of each batch."""
        out, start = [], 0
        for _, size in self.batches:
            out.append((start, start + size))
            start += size
        return out

    @cached_property
    def values(self) -> np.ndarray:
        vals = [r.value for r in self.items]
        if vals and isinstance(vals[0], str):
            return np.array(vals, dtype=object)
        return np.asarray(vals, dtype=float)

    @property
    def p(self) -> float:
        """Sampled fraction of the dataset."""
        return min(1.0, self.n / self.kv_count_estimate)

    def origins(self) -> set[tuple[int, int]]:
        return {r.origin for r in self.items}

    def prefix(self, m: int) -> "Sample":
        """The first ``m`` items, batches truncated. Prefixes of a sample are
        themselves uniform samples because items are stored in draw order."""
        batches, left = [], m
        for k, size in self.batches:
            if left <= 0:
                break
            batches.append((k, min(size, left)))
            left -= size
        return replace(self, items=self.items[:m], batches=tuple(batches))

    def rebatched(self, sizes) -> "Sample":
        sizes = list(sizes)
        return replace(self, batches=tuple((i + 1, s) for i, s in enumerate(sizes)))


def _check_unique(items) -> None:
    if len({r.origin for r in items}) != len(items):
        raise AssertionError("duplicate record origin in sample")


def _premap_draw(src: _PreMapSource, want: int, rng, exclude: InclusionBitmap) -> list[Record]:
    bf = src.bf
    splits = bf.splits
    got: list[Record] = []
    attempts, limit = 0, RETRY_FACTOR * want
    while len(got) < want and attempts < limit:
        chunk = min(limit - attempts, 2 * (want - len(got)) + 16)
        for pos in rng.integers(0, bf.total_bytes, size=chunk).tolist():
            attempts += 1
            try:
                rec = read_line_at(bf, bf.split_of(pos), pos)
            except NoFollowingLineError:
                # tail of the last line wraps to the first line of the file
                rec = read_line_at(bf, splits[0], 0)
            if rec.origin in exclude:
                continue
            exclude.add(rec.origin)
            got.append(rec)
            if len(got) == want:
                break
    if len(got) < want:
        # retry bound hit: finish from an exact index of the unseen lines
        seen = exclude.offsets()
        rest = [int(s) for s in line_starts(bf) if int(s) not in seen]
        take = rng.permutation(len(rest))[: want - len(got)]
        for i in take.tolist():
            rec = read_line_at(bf, bf.split_of(rest[i]), rest[i])
            exclude.add(rec.origin)
            got.append(rec)
    for rec in got:
        src.bytes_seen += _line_length(bf, rec.line_start)
        src.lines_seen += 1
    return got


def _line_length(bf: BlockFile, start: int) -> int:
    end = bf.data.find(b"\n", start)
    return (bf.total_bytes if end < 0 else end + 1) - start


def premap_sample(
    bf: BlockFile, target_n: int, bitmap: InclusionBitmap | None = None, rng=None
) -> Sample:
    """Sample ``target_n`` distinct lines by random byte offsets.

    Offsets are uniform over the file, which picks each split with
    probability proportional to its length.
    """
    if target_n < 1:
        raise ValueError("target_n must be >= 1")
    rng = np.random.default_rng(rng)
    bitmap = InclusionBitmap() if bitmap is None else bitmap
    src = _PreMapSource(bf, bitmap)
    got = _premap_draw(src, target_n, rng, bitmap)
    if len(got) < target_n:
        raise SampleExhaustedError(
            f"sample exhausts dataset: {len(got)} distinct lines < {target_n}"
        )
    _check_unique(got)
    return Sample(tuple(got), ((1, target_n),), "pre_map", src.kv_estimate, source=src)


def postmap_sample(records: Iterable[Record], target_n: int, rng=None) -> Sample:
    """Read the whole stream under random keys, then draw ``target_n`` of them."""
    if target_n < 1:
        raise ValueError("target_n must be >= 1")
    rng = np.random.default_rng(rng)
    records = list(records)
    if len(records) < target_n:
        raise FullDataModeError(
            f"full-data mode: stream has {len(records)} records < {target_n}"
        )
    store = _KeyedStore(records, np.argsort(rng.random(len(records)), kind="stable"))
    got = store.pop(target_n)
    return Sample(tuple(got), ((1, target_n),), "post_map", float(len(records)), source=store)


class _Counted:
    def __init__(self, it):
        self.it = iter(it)
        self.count = 0

    def __iter__(self):
        return self

    def __next__(self):
        item = next(self.it)
        self.count += 1
        return item


def _reservoir(stream, n: int, rng) -> tuple[list, int]:
    """Li's Algorithm L; returns the reservoir in random order and the stream length."""
    counted = _Counted(stream)
    res = list(itertools.islice(counted, n))
    if len(res) == n and n > 0:
        w = math.exp(math.log(rng.random()) / n)
        while True:
            skip = math.floor(math.log(rng.random()) / math.log1p(-w)) if w < 1 else 0
            nxt = next(itertools.islice(counted, skip, skip + 1), None)
            if nxt is None:
                break
            res[int(rng.integers(n))] = nxt
            w *= math.exp(math.log(rng.random()) / n)
    order = rng.permutation(len(res)).tolist()
    return [res[i] for i in order], counted.count


def reservoir_sample(records: Iterable[Record], n: int, rng=None) -> Sample:
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(rng)
    got, total = _reservoir(records, n, rng)
    batches = ((1, len(got)),) if got else ()
    return Sample(tuple(got), batches, "reservoir", float(total), saturated=len(got) < n,
                  source=records)


def expand_sample(s: Sample, delta_n: int, source=None, rng=None) -> Sample:
    """Append a batch of ``delta_n`` fresh records, disjoint from ``s``.

    When the dataset runs out the maximal sample is returned with
    ``saturated=True``. ``source`` is only needed for reservoir samples built
    from a one-shot iterator; it must then be a re-iterable record source.
    """
    if delta_n < 1:
        raise ValueError("delta_n must be >= 1")
    rng = np.random.default_rng(rng)
    kv = s.kv_count_estimate
    if s.mode == "pre_map":
        src = s.source
        got = _premap_draw(src, delta_n, rng, src.bitmap)
        kv = src.kv_estimate
    elif s.mode == "post_map":
        got = s.source.pop(delta_n)
    elif s.mode == "reservoir":
        stream = source if source is not None else s.source
        seen = s.origins()
        got, _ = _reservoir((r for r in stream if r.origin not in seen), delta_n, rng)
    else:
        raise ValueError(f"unknown sample mode {s.mode!r}")
    items = s.items + tuple(got)
    _check_unique(items)
    batches = s.batches + (((len(s.batches) + 1, len(got)),) if got else ())
    return replace(s, items=items, batches=batches, kv_count_estimate=kv,
                   saturated=len(got) < delta_n)
