import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from earl.jobs import (Batch, JobError, WorkMeter, Z_95, kmeans_job, lloyd, mean_job,
                       median_job, parse_job, proportion_job, proportion_stats, sum_job)

SCALAR = [mean_job(), sum_job(), median_job(), proportion_job("a")]


def run(job, values, weights=None):
    return job.finalize(job.run(np.asarray(values, dtype=object if job.name.startswith("prop") else float), weights))


def test_mean_examples():
    assert run(mean_job(), [1, 2, 3]) == 2
    assert run(mean_job(), [7, 7, 7]) == 7
    x = np.random.default_rng(0).standard_normal(10_000)
    assert abs(run(mean_job(), x)) < 0.05
    with pytest.raises(JobError):
        mean_job().finalize(mean_job().run(np.array([])))


def test_sum_and_correction():
    job = sum_job()
    assert run(job, [1, 2, 3, 4]) == 10
    assert job.correct(4, 0.5) == 8
    assert job.correct(10, 1) == 10
    with pytest.raises(JobError):
        job.correct(4, 0)


def test_median_examples():
    assert run(median_job(), [5]) == 5
    assert run(median_job(), [1, 2, 3, 4]) == 2.5
    assert run(median_job(), [3, 1, 2]) == 2
    with pytest.raises(JobError):
        median_job().finalize(median_job().run(np.array([])))


@settings(max_examples=200)
@given(st.lists(st.integers(-50, 50), min_size=1, max_size=1000))
def test_median_matches_sort_oracle(xs):
    s = sorted(xs)
    m = len(s)
    oracle = s[m // 2] if m % 2 else (s[m // 2 - 1] + s[m // 2]) / 2
    assert run(median_job(), xs) == oracle


def test_median_retraction():
    job = median_job()
    st_ = job.run(np.array([1.0, 2.0, 3.0, 9.0]))
    st_ = job.feed(st_, np.array([9.0]), np.array([-1]))
    assert job.finalize(st_) == 2
    with pytest.raises(JobError):
        job.feed(st_, np.array([9.0]), np.array([-1]))


def test_proportion_examples():
    job = proportion_job("a")
    st_ = job.run(np.array(["a"] * 30 + ["b"] * 70, dtype=object))
    out = job.summarize(st_)
    assert out["proportion"] == pytest.approx(0.3)
    assert out["variance"] == pytest.approx(0.0021)
    zero = proportion_stats(0, 100)
    assert zero["proportion"] == 0 and zero["interval"] == [0, 0]
    assert proportion_stats(100, 100)["proportion"] == 1
    with pytest.raises(JobError):
        proportion_stats(0, 0)


@pytest.mark.parametrize("succ,trials", [(s, t) for t in (1, 7, 100, 500) for s in range(0, t + 1, max(1, t // 5))])
def test_proportion_variance_grid(succ, trials):
    out = proportion_stats(succ, trials)
    p = succ / trials
    assert out["variance"] == pytest.approx(p * (1 - p) / trials)
    half = Z_95 * math.sqrt(p * (1 - p) / trials)
    assert out["interval"] == pytest.approx([p - half, p + half])


def test_kmeans_examples():
    job = kmeans_job(2, seed=0)
    pts = np.array([[0.0], [0.1], [10.0], [10.1]])
    out = job.summarize(job.run(pts))
    assert np.allclose(out["centroids"], [[0.05], [10.05]])
    one = kmeans_job(1).summarize(kmeans_job(1).run(pts))
    assert np.allclose(one["centroids"], [[pts.mean()]])
    with pytest.raises(JobError):
        kmeans_job(5).finalize(kmeans_job(5).run(pts))


def test_kmeans_deterministic_and_wcss_monotone():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(300, 2)) + rng.integers(0, 3, (300, 1)) * 5
    job = kmeans_job(3, seed=9)
    assert job.finalize(job.run(pts)) == job.finalize(job.run(pts))
    init = pts[rng.choice(300, 3, replace=False)]
    _, _, trace = lloyd(pts, np.ones(300), init, 100, 0.0)
    assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))


@pytest.mark.parametrize("job", SCALAR + [kmeans_job(2)], ids=lambda j: j.name)
def test_correct_identity(job):
    assert job.correct(3.5, 1) == 3.5


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=50), st.randoms())
def test_order_independence(xs, r):
    perm = xs[:]
    r.shuffle(perm)
    for job in (mean_job(), sum_job(), median_job()):
        assert math.isclose(run(job, xs), run(job, perm), rel_tol=1e-12, abs_tol=1e-9)


def test_weighted_equals_expanded_and_merge():
    vals = np.array([1.0, 4.0, 9.0])
    w = np.array([2, 0, 3])
    expanded = np.repeat(vals, w)
    for job in (mean_job(), sum_job(), median_job()):
        assert job.finalize(job.run(vals, w)) == pytest.approx(job.finalize(job.run(expanded)))
        a, b = job.run(expanded[:2]), job.run(expanded[2:])
        assert job.finalize(job.update(a, b)) == pytest.approx(job.finalize(job.run(expanded)))


def test_meter_counts_weighted_items():
    m = WorkMeter()
    mean_job().run(np.array([1.0, 2.0]), np.array([3, 1]), m)
    mean_job().feed(mean_job().run(np.array([1.0])), np.array([1.0]), np.array([-2]), m)
    assert (m.items, m.calls) == (6, 2)


def test_parse_job():
    assert parse_job("mean").name == "mean"
    assert parse_job("proportion:yes").name == "proportion:yes"
    assert parse_job("kmeans:4").name == "kmeans:4"
    for bad in ("avg", "kmeans:x", "proportion:", "mean:1"):
        with pytest.raises(ValueError):
            parse_job(bad)
