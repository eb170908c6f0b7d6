import numpy as np

from earl.datastore import iter_records, open_dataset
from earl.generate import generate_dataset, load_manifest, write_values


def test_normal_manifest_and_fixed_width(tmp_path):
    path = tmp_path / "n.txt"
    m = generate_dataset(path, 500, "normal", loc=3.0, seed=1)
    assert load_manifest(path) == m
    lines = path.read_bytes().splitlines(keepends=True)
    assert len(lines) == 500 and len({len(x) for x in lines}) == 1
    vals = np.array([r.value for r in iter_records(open_dataset(path))])
    assert np.isclose(vals.mean(), m["sample_mean"])
    assert m["true_mean"] == 3.0


def test_clustered_ordering_sorts_values(tmp_path):
    path = tmp_path / "c.txt"
    generate_dataset(path, 200, "uniform", ordering="clustered", seed=2)
    vals = [r.value for r in iter_records(open_dataset(path))]
    assert vals == sorted(vals)


def test_categorical_and_clusters(tmp_path):
    m = generate_dataset(tmp_path / "cat.txt", 1000, "categorical", labels=("yes", "no"),
                         probs=(0.3, 0.7), seed=3)
    vals = [r.value for r in iter_records(open_dataset(tmp_path / "cat.txt"))]
    assert set(vals) == {"yes", "no"}
    assert np.isclose(np.mean([v == "yes" for v in vals]), m["sample_proportion"]["yes"])
    generate_dataset(tmp_path / "k.txt", 100, "clusters", seed=4)
    pts = [r.value for r in iter_records(open_dataset(tmp_path / "k.txt"))]
    assert all(isinstance(p, tuple) and len(p) == 2 for p in pts)


def test_write_values_round_trip(tmp_path):
    x = np.array([1.5, -2.0, 3.25])
    write_values(tmp_path / "v.txt", x)
    assert [r.value for r in iter_records(open_dataset(tmp_path / "v.txt"))] == x.tolist()
    write_values(tmp_path / "t.txt", np.array(["a", "bb"]))
    assert [r.value for r in iter_records(open_dataset(tmp_path / "t.txt"))] == ["a", "bb"]
