"""Block-partitioned, line-oriented record storage.

A dataset is a UTF-8 text file with one ``key<TAB>value`` record per line.
The file is cut into fixed-size logical splits (the unit a mapper would be
handed); records may straddle split boundaries and are always read whole.
"""
from __future__ import annotations

import math
import mmap
import os
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

DEFAULT_BLOCK_SIZE = 1 << 20


class EmptyDatasetError(ValueError):
    """The dataset file has no bytes."""


class NoFollowingLineError(LookupError):
    """A byte position has no complete line at or after it."""


@dataclass(frozen=True)
class Split:
    split_id: int
    start: int
    length: int

    @property
    def end(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class Record:
    key: str
    value: object
    origin: tuple[int, int]  # (split_id, line_start)

    @property
    def line_start(self) -> int:
        return self.origin[1]


def parse_value(text: str):
    """Numeric scalar, comma-separated numeric vector, or categorical token."""
    if "," in text:
        try:
            return tuple(float(x) for x in text.split(","))
        except ValueError:
            return text
    try:
        return float(text)
    except ValueError:
        return text


def parse_line(line: bytes, origin: tuple[int, int]) -> Record:
    text = line.decode("utf-8").rstrip("\r\n")
    key, sep, value = text.partition("\t")
    if not sep or not key:
        raise ValueError(f"malformed record at byte {origin[1]}: {text!r}")
    return Record(key=key, value=parse_value(value.strip()), origin=origin)


@dataclass
class BlockFile:
    path: str
    total_bytes: int
    block_size: int = DEFAULT_BLOCK_SIZE
    record_count_estimate: int | None = None
    _splits: list[Split] | None = field(default=None, repr=False)
    _map: mmap.mmap | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.total_bytes < 0:
            raise ValueError("total_bytes must be >= 0")
        if self.block_size <= 0:
            raise ValueError("block_size must be > 0")

    @property
    def splits(self) -> list[Split]:
        if self._splits is None:
            self._splits = logical_splits(self)
        return self._splits

    @property
    def data(self) -> mmap.mmap:
        if self._map is None:
            with open(self.path, "rb") as fh:
                self._map = mmap.mmap(fh.fileno(), 0, access=mmap.ACCESS_READ)
        return self._map

    def split_of(self, pos: int) -> Split:
        return self.splits[pos // self.block_size]

    def close(self) -> None:
        if self._map is not None:
            self._map.close()
            self._map = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_dataset(path, block_size: int = DEFAULT_BLOCK_SIZE) -> BlockFile:
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise FileNotFoundError(f"no such dataset: {path}")
    size = os.path.getsize(path)
    if size == 0:
        raise EmptyDatasetError(f"empty dataset: {path}")
    return BlockFile(path=path, total_bytes=size, block_size=block_size)


def logical_splits(bf: BlockFile) -> list[Split]:
    count = math.ceil(bf.total_bytes / bf.block_size)
    return [
        Split(i, i * bf.block_size, min(bf.block_size, bf.total_bytes - i * bf.block_size))
        for i in range(count)
    ]


def read_line_at(bf: BlockFile, split: Split, pos: int) -> Record:
    """Read the record at ``pos``, or the next one if ``pos`` is mid-line.

    A position counts as a line start when it is 0 or follows a newline.
    Lines that run past the split end are read to completion.
    """
    if not split.start <= pos < split.end:
        raise ValueError(f"position {pos} outside split {split}")
    data = bf.data
    start = pos
    if pos > 0 and data[pos - 1] != 0x0A:
        nl = data.find(b"\n", pos)
        if nl < 0 or nl + 1 >= bf.total_bytes:
            raise NoFollowingLineError(f"no following line after byte {pos}")
        start = nl + 1
    end = data.find(b"\n", start)
    end = bf.total_bytes if end < 0 else end + 1
    return parse_line(data[start:end], (start // bf.block_size, start))


def iter_records(bf: BlockFile) -> Iterator[Record]:
    """Sequential scan of every record in file order."""
    with open(bf.path, "rb") as fh:
        offset = 0
        for line in fh:
            if line.strip():
                yield parse_line(line, (offset // bf.block_size, offset))
            offset += len(line)


def line_starts(bf: BlockFile) -> np.ndarray:
    """Byte offset of every line start (brute-force index, for audits)."""
    buf = np.frombuffer(bf.data, dtype=np.uint8)
    nl = np.flatnonzero(buf == 0x0A) + 1
    starts = np.concatenate(([0], nl[nl < bf.total_bytes]))
    return starts.astype(np.int64)
