"""Acceptance checks, one per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` or ``python3 tests/test_acceptance.py``.
The lines are also collected into the terminal summary.
"""
import itertools
import math
import sys
import time
from collections import Counter

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from earl.audit import (ALPHA, TV_LIMIT, audit_binomial, audit_uniformity, joint_stats,
                        maintained_draws, position_tv, tv_noise_floor)
from earl.bootstrap import (closed_form_mean_variance, error_estimate,
                            exact_replicate_distribution, exhaustive_share_fraction,
                            optimal_share_fraction, prob_identical_fraction, replicate_estimates,
                            resample_chain)
from earl.datastore import open_dataset
from earl.engine import RuntimeConfig, inject_failure, run_job
from earl.estimator import sample_from_values
from earl.generate import generate_dataset, load_manifest
from earl.jobs import (WorkMeter, kmeans_job, mean_job, median_job, parse_job, proportion_job,
                       proportion_stats, sum_job)
from earl.sampling import premap_sample
from earl.ssabe import EstimatorConfig, theoretical_B

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.slow


def report(criterion, ok: bool, detail: str) -> bool:
    line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def _dataset(tmp_path_factory, name, n, dist, **kw):
    path = tmp_path_factory.mktemp(name) / f"{name}.txt"
    generate_dataset(path, n, dist, **kw)
    return str(path)


@pytest.fixture(scope="module")
def standard_normal(tmp_path_factory):
    return _dataset(tmp_path_factory, "stdnormal", 1_000_000, "normal", seed=2024)


@pytest.fixture(scope="module")
def median_data(tmp_path_factory):
    return _dataset(tmp_path_factory, "median", 1_000_000, "normal", loc=0.5, seed=7)


@pytest.fixture(scope="module")
def cluster_data(tmp_path_factory):
    return _dataset(tmp_path_factory, "clusters", 100_000, "clusters", seed=11)


@pytest.fixture(scope="module")
def label_data(tmp_path_factory):
    return _dataset(tmp_path_factory, "labels", 1_000_000, "categorical",
                    labels=("yes", "no"), probs=(0.3, 0.7), seed=13)


# -- 1 ------------------------------------------------------------------------

def _mean_to_5pct(path, seeds=50):
    truth = load_manifest(path)["sample_mean"]
    N = load_manifest(path)["n"]
    runs = []
    t0 = time.perf_counter()
    with open_dataset(path) as bf:
        for seed in range(seeds):
            runs.append(run_job(bf, mean_job(), EstimatorConfig(sigma=0.05),
                                RuntimeConfig(seed=seed)))
    elapsed = time.perf_counter() - t0
    first = runs[0]
    frac = first.n / N
    covered = sum(r.mode == "early" and abs(r.estimate - truth) <= 2 * r.cv * abs(r.estimate)
                  for r in runs) / seeds
    ok = (first.mode == "early" and first.cv <= 0.05 and 10 <= first.B <= 60
          and 0.005 <= frac <= 0.03 and covered >= 0.9 and elapsed <= 60)
    detail = (f"seed 0: mode={first.mode} c_v={first.cv:.4f} B={first.B} fraction={frac:.4%}; "
              f"coverage {covered:.0%} of {seeds}; {elapsed:.1f}s total; "
              f"modes {dict(Counter(r.mode for r in runs))}")
    return ok, detail


def test_criterion_1_standard_normal_as_written(standard_normal):
    # zero true mean: c_v = sd/|mean| cannot reach 0.05 from any sample of this file
    ok, detail = _mean_to_5pct(standard_normal)
    assert report(1, ok, "[N(0,1) as written] " + detail)


def test_criterion_1_shifted_mean(shifted_normal):
    ok, detail = _mean_to_5pct(shifted_normal)
    assert report("1 (N(0.2,1) variant)", ok, detail)


# -- 2 ------------------------------------------------------------------------

def test_criterion_2_median_work_ratio(median_data):
    with open_dataset(median_data) as bf:
        N = load_manifest(median_data)["n"]
        r = run_job(bf, median_job(), EstimatorConfig(sigma=0.05), RuntimeConfig(seed=1))
        full = run_job(bf, median_job(), runtime=RuntimeConfig(mode="full"))
    ratio = r.records_processed / full.records_processed
    ok = r.mode == "early" and ratio <= 0.4
    assert report(2, ok, f"D={r.records_processed} full={full.records_processed} (N={N}) "
                         f"ratio={ratio:.3f} mode={r.mode} "
                         f"(estimation records {r.estimation_records})")


# -- 3 ------------------------------------------------------------------------

def test_criterion_3_bootstrap_vs_closed_form():
    rng = np.random.default_rng(3)
    var_b, cf = [], []
    for _ in range(100):
        s = sample_from_values(rng.normal(2.0, 1.5, 1000))
        var_b.append(error_estimate(replicate_estimates(s, 100, mean_job(), rng)).var_B)
        cf.append(closed_form_mean_variance(s))
    var_b, cf = np.array(var_b), np.array(cf)
    of_mean = abs(var_b.mean() - cf.mean()) / cf.mean()
    per_trial = float(np.mean(np.abs(var_b - cf) / cf))
    ok = of_mean <= 0.15 and per_trial <= 0.15
    assert report(3, ok, f"relative error of averaged var_B {of_mean:.3%}, "
                         f"mean per-trial relative error {per_trial:.3%} (limit 15%)")


# -- 4 ------------------------------------------------------------------------

def test_criterion_4_old_part_size_law():
    rep = audit_binomial(n=10, n_prime=20, draws=100_000, seed=4,
                         gauss_n=10_000, gauss_n_prime=20_000)
    assert report(4, rep["passed"], f"chi-square p={rep['p_value']:.3f} "
                                    f"Gaussian mode KS={rep['gauss_ks']:.4f}")


# -- 5 ------------------------------------------------------------------------

@pytest.mark.parametrize("n,n_prime", [(2, 3), (4, 6), (5, 8)])
def test_criterion_5_delta_equivalence(n, n_prime):
    trials = 1_000_000
    floor = tv_noise_floor(n_prime, trials, seed=n_prime)
    parts, ok = [], True
    for i, path in enumerate(("naive", "sketched")):
        draws = maintained_draws(n, n_prime, trials, path, seed=100 * n_prime + i)
        pos, js = position_tv(draws), joint_stats(draws)
        if floor < TV_LIMIT / 2:
            good = js["joint_tv"] <= TV_LIMIT
        else:
            # a perfect sampler's joint TV exceeds the limit here; gate on the
            # per-position laws and a joint goodness-of-fit test instead
            good = pos <= TV_LIMIT and js["p_value"] > ALPHA
        ok &= good
        parts.append(f"{path}: joint TV {js['joint_tv']:.4f} position TV {pos:.4f} "
                     f"chi-square p {js['p_value']:.3f}")
    assert report(5, ok, f"{n}->{n_prime}, {trials} trials, noise floor {floor:.4f}; "
                         + "; ".join(parts))


# -- 6 ------------------------------------------------------------------------

def test_criterion_6_identical_prefix():
    anchor = prob_identical_fraction(29, 0.3)
    mismatches = [n for n in range(1, 201)
                  if optimal_share_fraction(n)[0] != exhaustive_share_fraction(n)[0]]
    rng = np.random.default_rng(6)
    savings = {}
    for n in (100, 300, 1000):
        s = sample_from_values(rng.normal(0, 1, n))
        shared, plain = WorkMeter(), WorkMeter()
        resample_chain(s, 50, median_job(), np.random.default_rng(n), share=True, meter=shared)
        resample_chain(s, 50, median_job(), np.random.default_rng(n), share=False, meter=plain)
        savings[n] = 1 - shared.items / plain.items
    ok = 0.34 <= anchor <= 0.36 and not mismatches and all(v > 0 for v in savings.values())
    assert report(6, ok, f"P(29, 0.3)={anchor:.5f}; optimum mismatches for n<=200: "
                         f"{len(mismatches)}; median update savings "
                         + ", ".join(f"n={n}: {v:.1%}" for n, v in savings.items()))


# -- 7 ------------------------------------------------------------------------

def test_criterion_7_sampler_uniformity(uniform_1k):
    with open(uniform_1k, "rb") as fh:
        assert len({len(line) for line in fh}) == 1  # equal-length lines
    reps = {sm: audit_uniformity(sm, n=50, trials=10_000, seed=7, path=uniform_1k)
            for sm in ("post", "reservoir", "pre")}
    ok = all(r["passed"] for r in reps.values())
    assert report(7, ok, "; ".join(f"{sm}: p={r['p_value']:.3f}" for sm, r in reps.items()))


# -- 8 ------------------------------------------------------------------------

def test_criterion_8_single_iteration(shifted_normal):
    sigma = 0.05
    rates, Bs = {}, []
    with open_dataset(shifted_normal) as bf:
        for name, job in (("mean", mean_job()), ("sum", sum_job())):
            hits = 0
            for seed in range(50):
                r = run_job(bf, job, EstimatorConfig(sigma=sigma), RuntimeConfig(seed=1000 + seed))
                Bs.append(r.B)
                # the first iteration runs at exactly the (B, n) the estimator chose
                hits += bool(r.trace) and r.trace[0][3] <= 1.2 * sigma
            rates[name] = hits / 50
    tb = theoretical_B(sigma)
    ok = all(v >= 0.9 for v in rates.values()) and tb == 200 and tb > max(Bs)
    assert report(8, ok, ", ".join(f"{k}: {v:.0%} first-iteration c_v<=1.2 sigma"
                                   for k, v in rates.items())
                  + f"; theoretical B {tb} vs empirical B max {max(Bs)} median "
                  f"{int(np.median(Bs))}")


# -- 9 ------------------------------------------------------------------------

def test_criterion_9_fault_tolerance(shifted_normal):
    truth = load_manifest(shifted_normal)["sample_mean"]
    runs = []
    with open_dataset(shifted_normal) as bf:
        for seed in range(40):
            rt = RuntimeConfig(workers=4, seed=seed)
            inject_failure(rt, [seed % 4], at=1)
            runs.append(run_job(bf, mean_job(), EstimatorConfig(sigma=0.05), rt))
    degraded = sum(r.mode == "degraded" for r in runs)
    within = sum(r.mode == "degraded" and abs(r.estimate - truth) <= 2 * r.cv * abs(r.estimate)
                 for r in runs) / 40
    ok = degraded == 40 and within >= 0.85
    assert report(9, ok, f"{degraded}/40 degraded, {within:.0%} within 2 c_v; "
                         f"replicates kept {min(r.replicates for r in runs)}-"
                         f"{max(r.replicates for r in runs)} of B")


# -- 10 -----------------------------------------------------------------------

def test_criterion_10_kmeans(cluster_data):
    centers = np.array(load_manifest(cluster_data)["centers"])
    gap = min(np.linalg.norm(a - b) for a, b in itertools.combinations(centers, 2))
    good, modes, worst = 0, Counter(), 0.0
    with open_dataset(cluster_data) as bf:
        for seed in range(30):
            r = run_job(bf, parse_job("kmeans:4"), EstimatorConfig(sigma=0.05),
                        RuntimeConfig(seed=seed))
            modes[r.mode] += 1
            got = np.asarray(r.summary["centroids"])
            d = np.linalg.norm(got[:, None, :] - centers[None, :, :], axis=2)
            rows, cols = linear_sum_assignment(d)
            dist = d[rows, cols].max()
            worst = max(worst, dist)
            good += r.mode == "early" and dist <= 0.05 * gap
    ok = good / 30 >= 0.9
    assert report(10, ok, f"{good}/30 early runs with every centroid within 5% of the gap "
                          f"({0.05 * gap:.2f}); worst distance {worst:.3f}; modes {dict(modes)}")


# -- 11 -----------------------------------------------------------------------

def test_criterion_11_proportion_coverage(label_data):
    truth = load_manifest(label_data)["sample_proportion"]["yes"]
    job = proportion_job("yes")
    rng = np.random.default_rng(11)
    hits = 0
    with open_dataset(label_data) as bf:
        for _ in range(1000):
            s = premap_sample(bf, 500, rng=rng)
            st = job.run(s.values)
            lo, hi = proportion_stats(st.successes, st.trials)["interval"]
            hits += lo <= truth <= hi
    cover = hits / 1000
    assert report(11, 0.93 <= cover <= 0.97, f"coverage {cover:.1%} at n=500, "
                                              f"true proportion {truth:.4f}")


# -- 12 -----------------------------------------------------------------------

def _merge(dist):
    """Sorted (value, probability) pairs with float-noise duplicates merged."""
    out = []
    for v, p in sorted(dist):
        if out and abs(v - out[-1][0]) <= 1e-9 * max(1.0, abs(v)):
            out[-1][1] += p
        else:
            out.append([v, p])
    return out


def _multinomial_law(values, job):
    n = len(values)
    law = []
    for counts in itertools.product(range(n + 1), repeat=n):
        if sum(counts) != n:
            continue
        w = math.factorial(n) / math.prod(math.factorial(c) for c in counts) / n ** n
        law.append((job.finalize(job.run(values, np.array(counts))), w))
    return _merge(law)


def _ordered_draw_law(values, job):
    n = len(values)
    return _merge((job.finalize(job.run(values[list(d)])), 1 / n ** n)
                  for d in itertools.product(range(n), repeat=n))


def test_criterion_12_exhaustive_small_instances():
    cases = {
        "mean": (mean_job(), [np.array([1.5]), np.array([1.5, -2.0]),
                              np.array([1.5, -2.0, 4.25])]),
        "sum": (sum_job(), [np.array([3.0]), np.array([3.0, 0.5]), np.array([3.0, 0.5, -1.0])]),
        "median": (median_job(), [np.array([2.0]), np.array([2.0, 7.0]),
                                  np.array([2.0, 7.0, -1.0])]),
        "proportion": (proportion_job("yes"), [np.array(["yes"], dtype=object),
                                               np.array(["yes", "no"], dtype=object),
                                               np.array(["yes", "no", "yes"], dtype=object)]),
        "kmeans(k=1)": (kmeans_job(1), [np.array([[0.0, 1.0]]),
                                        np.array([[0.0, 1.0], [2.0, -1.0]]),
                                        np.array([[0.0, 1.0], [2.0, -1.0], [4.0, 4.0]])]),
    }
    worst, bad = 0.0, []
    for name, (job, samples) in cases.items():
        for values in samples:
            a = _multinomial_law(values, job)
            b = _ordered_draw_law(values, job)
            c = _merge(exact_replicate_distribution(sample_from_values(values), job).items())
            for other in (b, c):
                if len(a) != len(other):
                    bad.append((name, len(values)))
                    continue
                for (va, pa), (vb, pb) in zip(a, other):
                    worst = max(worst, abs(pa - pb))
                    if abs(va - vb) > 1e-9 * max(1.0, abs(va)) or abs(pa - pb) > 1e-12:
                        bad.append((name, len(values)))
    assert report(12, not bad, f"{len(cases)} jobs x n=1..3; worst probability gap {worst:.1e}"
                               + (f"; mismatches {sorted(set(bad))}" if bad else ""))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
