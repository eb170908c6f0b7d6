"""Synthetic dataset generation with a truth manifest.

Every generated record is fixed width, so all lines in a file have the same
byte length. That keeps byte-offset sampling exactly uniform over records.
"""
from __future__ import annotations

import json
import os

import numpy as np

DISTRIBUTIONS = ("normal", "uniform", "categorical", "clusters")
ORDERINGS = ("random", "clustered")


def _fmt_scalar(values: np.ndarray) -> list[str]:
    return [f"{v:+.9e}" for v in values.tolist()]


def _fmt_vector(points: np.ndarray) -> list[str]:
    return [",".join(f"{c:+.9e}" for c in row) for row in points.tolist()]


def generate_dataset(
    path,
    n: int,
    dist: str = "normal",
    *,
    loc: float = 0.0,
    scale: float = 1.0,
    labels: tuple[str, ...] = ("a", "b"),
    probs: tuple[float, ...] | None = None,
    centers=None,
    cluster_std: float = 0.5,
    ordering: str = "random",
    seed: int = 0,
) -> dict:
    """Write ``n`` records to ``path`` and a ``<path>.manifest.json`` next to it.

    ``ordering="clustered"`` sorts records by value before writing, which
    mimics data laid out on disk by a clustering attribute.
    Returns the manifest dict.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if dist not in DISTRIBUTIONS:
        raise ValueError(f"unknown distribution {dist!r}")
    if ordering not in ORDERINGS:
        raise ValueError(f"unknown ordering {ordering!r}")
    rng = np.random.default_rng(seed)
    manifest: dict = {"n": n, "dist": dist, "ordering": ordering, "seed": seed}

    if dist in ("normal", "uniform"):
        if dist == "normal":
            values = rng.normal(loc, scale, n)
            manifest.update(loc=loc, scale=scale, true_mean=loc, true_median=loc)
        else:
            values = rng.uniform(loc, loc + scale, n)
            mid = loc + scale / 2
            manifest.update(loc=loc, scale=scale, true_mean=mid, true_median=mid)
        if ordering == "clustered":
            values = np.sort(values)
        fields = _fmt_scalar(values)
        parsed = np.array([float(f) for f in fields])
        manifest.update(
            sample_mean=float(parsed.mean()),
            sample_median=float(np.median(parsed)),
            sample_sum=float(parsed.sum()),
        )
    elif dist == "categorical":
        labels = tuple(labels)
        width = max(len(lab) for lab in labels)
        p = np.full(len(labels), 1 / len(labels)) if probs is None else np.asarray(probs, float)
        idx = rng.choice(len(labels), size=n, p=p / p.sum())
        if ordering == "clustered":
            idx = np.sort(idx)
        fields = [labels[i].ljust(width) for i in idx.tolist()]
        manifest.update(
            labels=list(labels),
            true_proportion={lab: float(q) for lab, q in zip(labels, p / p.sum())},
            sample_proportion={
                lab: float(np.mean(idx == i)) for i, lab in enumerate(labels)
            },
        )
    else:
        centers = np.asarray(
            centers if centers is not None else [[0, 0], [10, 0], [0, 10], [10, 10]], float
        )
        which = rng.integers(0, len(centers), n)
        points = centers[which] + rng.normal(0, cluster_std, (n, centers.shape[1]))
        if ordering == "clustered":
            order = np.lexsort(points.T[::-1])
            points, which = points[order], which[order]
        fields = _fmt_vector(points)
        manifest.update(centers=centers.tolist(), cluster_std=cluster_std)

    manifest["total_bytes"] = _write_fields(path, fields)
    with open(manifest_path(path), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def _write_fields(path, fields: list[str]) -> int:
    key_width = len(str(len(fields) - 1))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(f"k{i:0{key_width}d}\t{f}\n" for i, f in enumerate(fields)))
    return os.path.getsize(path)


def write_values(path, values) -> int:
    """Write an array as fixed-width records: 1-D numeric, 2-D numeric rows,
    or 1-D string tokens. Returns the file size in bytes."""
    arr = np.asarray(values)
    if len(arr) == 0:
        raise ValueError("nothing to write")
    if arr.dtype.kind in "OUS":
        tokens = [str(v) for v in arr.ravel().tolist()]
        if any(not t or any(ch.isspace() for ch in t) for t in tokens):
            raise ValueError("tokens must be non-empty and contain no whitespace")
        width = max(map(len, tokens))
        return _write_fields(path, [t.ljust(width) for t in tokens])
    arr = arr.astype(float)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    return _write_fields(path, _fmt_scalar(arr) if arr.ndim == 1 else _fmt_vector(arr))


def manifest_path(path) -> str:
    return os.fspath(path) + ".manifest.json"


def load_manifest(path) -> dict:
    with open(manifest_path(path), encoding="utf-8") as fh:
        return json.load(fh)
