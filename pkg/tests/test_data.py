"""Dataset tests: synthetic generators and CSV ingestion."""

import numpy as np
import pytest

from gep.data import (
    CsvParseError,
    Dataset,
    ingest_csv,
    standardize_stats,
    synth_dataset,
    train_eval_split,
)
from gep.linalg import stable_rank
from gep.models import init_model, per_sample_gradients


def test_lowrank_task_gradient_rank():
    rng = np.random.default_rng(0)
    data = synth_dataset(
        "lowrank-gradient-task",
        {"n": 200, "input_dim": 99, "rank": 5},
        rng,
    )
    model = init_model("linear", 99, 1)
    grads = per_sample_gradients(model, data)
    assert grads.shape == (200, 100)
    assert stable_rank(grads) <= 5 + 1e-6
    # exact rank five: the sixth singular value vanishes
    s = np.linalg.svd(grads, compute_uv=False)
    assert s[5] <= 1e-10 * s[0]


def test_lowrank_task_with_tail_is_approximately_lowrank():
    rng = np.random.default_rng(1)
    data = synth_dataset(
        "lowrank-gradient-task",
        {"n": 200, "input_dim": 99, "rank": 5, "tail": 0.1},
        rng,
    )
    model = init_model("linear", 99, 1)
    grads = per_sample_gradients(model, data)
    s = np.linalg.svd(grads, compute_uv=False)
    assert s[5] > 1e-6 * s[0]  # tail present
    assert (s[:5] ** 2).sum() >= 0.8 * (s**2).sum()  # but still dominated


def test_gaussian_mixture_class_balance():
    rng = np.random.default_rng(2)
    n, c = 10_000, 10
    data = synth_dataset(
        "gaussian-mixture", {"n": n, "input_dim": 8, "classes": c}, rng
    )
    counts = np.bincount(data.labels, minlength=c)
    sigma = np.sqrt(n * (1 / c) * (1 - 1 / c))
    assert np.all(np.abs(counts - n / c) <= 3 * sigma)


def test_separable_margin_and_perceptron_oracle():
    rng = np.random.default_rng(3)
    data = synth_dataset(
        "separable", {"n": 500, "input_dim": 10, "margin": 1.0}, rng
    )
    # all points respect the margin around some hyperplane; the perceptron
    # mistake bound guarantees convergence to zero training error
    x = np.hstack([data.features, np.ones((data.n, 1))])
    y = 2 * data.labels.astype(np.float64) - 1
    w = np.zeros(x.shape[1])
    radius = float(np.max(np.linalg.norm(x, axis=1)))
    max_updates = int(radius**2 / 1.0**2) + 1
    updates = 0
    for _ in range(50):
        mistakes = 0
        for i in range(data.n):
            if y[i] * float(x[i] @ w) <= 0:
                w += y[i] * x[i]
                mistakes += 1
                updates += 1
        if mistakes == 0:
            break
    assert mistakes == 0
    assert updates <= max_updates
    assert np.all(y * (x @ w) > 0)


def test_synth_dataset_deterministic():
    params = {"n": 50, "input_dim": 6, "classes": 3}
    a = synth_dataset("gaussian-mixture", params, np.random.default_rng(9))
    b = synth_dataset("gaussian-mixture", params, np.random.default_rng(9))
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels, b.labels)
    with pytest.raises(ValueError):
        synth_dataset("nope", {}, np.random.default_rng(0))


def test_ingest_csv_toy(tmp_path):
    path = tmp_path / "toy.csv"
    path.write_text("x1,x2,label\n1.0,2.0,0\n3.0,4.0,1\n5.0,6.0,1\n")
    data = ingest_csv(str(path), "label")
    assert data.n == 3 and data.d == 2
    np.testing.assert_array_equal(data.labels, np.array([0, 1, 1]))
    # file order preserved
    np.testing.assert_array_equal(data.features[0], np.array([1.0, 2.0]))


def test_ingest_csv_errors(tmp_path):
    missing = tmp_path / "missing.csv"
    missing.write_text("a,b\n1,2\n")
    with pytest.raises(CsvParseError, match="label"):
        ingest_csv(str(missing), "label")

    bad_cell = tmp_path / "bad.csv"
    bad_cell.write_text("a,label\n1,0\nx,1\n")
    with pytest.raises(CsvParseError, match="row 3"):
        ingest_csv(str(bad_cell), "label")

    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(CsvParseError, match="empty"):
        ingest_csv(str(empty), "label")

    header_only = tmp_path / "header.csv"
    header_only.write_text("a,label\n")
    with pytest.raises(CsvParseError, match="no data rows"):
        ingest_csv(str(header_only), "label")


def test_ingest_csv_standardize(tmp_path):
    path = tmp_path / "std.csv"
    path.write_text("a,b,label\n1.0,7.0,0\n3.0,7.0,1\n5.0,7.0,0\n")
    data = ingest_csv(str(path), "label", normalize="per-feature-standardize")
    np.testing.assert_allclose(data.features[:, 0].mean(), 0.0, atol=1e-12)
    np.testing.assert_allclose(data.features[:, 0].std(), 1.0, rtol=1e-12)
    # constant column maps to zeros rather than dividing by zero
    np.testing.assert_array_equal(data.features[:, 1], np.zeros(3))

    # reusing training statistics on a held-out file
    raw = ingest_csv(str(path), "label")
    stats = standardize_stats(raw.features)
    again = ingest_csv(
        str(path), "label", normalize="per-feature-standardize", stats=stats
    )
    np.testing.assert_allclose(again.features, data.features)


def test_ingest_csv_float_labels(tmp_path):
    path = tmp_path / "reg.csv"
    path.write_text("a,label\n1.0,0.25\n2.0,-1.5\n")
    data = ingest_csv(str(path), "label")
    assert data.labels.dtype == np.float64


def test_train_eval_split_disjoint():
    rng = np.random.default_rng(5)
    data = Dataset(rng.standard_normal((40, 3)), np.arange(40))
    train, holdout = train_eval_split(data, 0.25, rng)
    assert train.n == 30 and holdout.n == 10
    assert set(train.labels.tolist()).isdisjoint(holdout.labels.tolist())
