import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from distillbox.datasets import DatasetError, DatasetSpec, export_csv, generate, import_csv, iterate_batches
from distillbox.rng import stream


def _nearest_centroid_accuracy(data):
    train = data.train
    cents = np.stack([train.inputs[train.labels == c].mean(axis=0) for c in range(data.num_classes)])
    d = ((data.dev.inputs[:, None, :] - cents[None]) ** 2).sum(axis=2)
    return float(np.mean(d.argmin(axis=1) == data.dev.labels))


def test_noiseless_blobs_separable():
    for dims, classes in ((2, 3), (5, 3), (2, 6)):
        data = generate(DatasetSpec("blobs", 60, 30, 30, dims=dims, classes=classes, noise=0.0), seed=1)
        assert _nearest_centroid_accuracy(data) == 1.0


def test_generation_deterministic_and_seed_dependent():
    spec = DatasetSpec("rings", 50, 20, 20, noise=0.1)
    a, b, c = generate(spec, 3), generate(spec, 3), generate(spec, 4)
    for name in ("train", "dev", "test"):
        assert a[name].inputs.tobytes() == b[name].inputs.tobytes()
        assert np.array_equal(a[name].labels, b[name].labels)
    assert a.train.inputs.tobytes() != c.train.inputs.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["blobs", "rings"]), st.integers(2, 7), st.integers(7, 40), st.integers(7, 40),
       st.integers(7, 40), st.integers(0, 10**6))
def test_balance_and_disjointness(kind, classes, n_train, n_dev, n_test, seed):
    data = generate(DatasetSpec(kind, n_train, n_dev, n_test, classes=classes, noise=0.2), seed)
    seen = set()
    for split in (data.train, data.dev, data.test):
        counts = np.bincount(split.labels, minlength=classes)
        assert counts.max() - counts.min() <= 1
        ids = set(split.indices.tolist())
        assert not ids & seen
        seen |= ids
    assert len(seen) == n_train + n_dev + n_test


def test_rings_radii_follow_labels():
    data = generate(DatasetSpec("rings", 300, 30, 30, classes=4, noise=0.0), seed=0)
    r = np.linalg.norm(data.train.inputs, axis=1)
    np.testing.assert_allclose(r, data.train.labels + 1.0, rtol=0, atol=1e-12)


def test_linear_regression_noiseless_is_exactly_linear():
    data = generate(DatasetSpec("linear_regression", 40, 10, 10, dims=4, noise=0.0), seed=2)
    w, *_ = np.linalg.lstsq(data.train.inputs, data.train.targets, rcond=None)
    np.testing.assert_allclose(data.test.inputs @ w, data.test.targets, rtol=0, atol=1e-10)
    assert data.output_dim == 1 and data.task == "regression"


def test_image_shape_reshapes_features():
    data = generate(DatasetSpec("blobs", 6, 3, 3, dims=12, classes=3, image_shape=(3, 2, 2)), seed=0)
    assert data.train.inputs.shape == (6, 3, 2, 2)


@pytest.mark.parametrize("kwargs, needle", [
    ({"kind": "moons"}, "unknown dataset kind"),
    ({"noise": -1.0}, "noise"),
    ({"classes": 1}, "2 classes"),
    ({"n_dev": 2}, "n >= classes"),
    ({"kind": "rings", "dims": 3}, "planar"),
    ({"dims": 4, "image_shape": (3, 2)}, "image_shape"),
])
def test_spec_validation(kwargs, needle):
    base = {"kind": "blobs", "n_train": 10, "n_dev": 10, "n_test": 10}
    with pytest.raises(DatasetError, match=needle):
        DatasetSpec(**{**base, **kwargs})


def test_batch_sizes():
    data = generate(DatasetSpec("blobs", 10, 3, 3), seed=0)
    sizes = [len(b["label"]) for b in iterate_batches(data.train, 4, stream(0, "shuffle/0"))]
    assert sizes == [4, 4, 2]
    (whole,) = iterate_batches(data.train, 100, stream(0, "shuffle/0"))
    assert sorted(whole["input"].data[:, 0]) == sorted(data.train.inputs[:, 0])


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 50), st.integers(1, 60), st.integers(0, 1000))
def test_batches_cover_split_exactly(n, batch_size, seed):
    data = generate(DatasetSpec("blobs", n, 3, 3), seed=0)
    batches = list(iterate_batches(data.train, batch_size, stream(seed, "shuffle/0")))
    rows = np.concatenate([b["input"].data for b in batches])
    key = lambda a: sorted(map(tuple, a))  # noqa: E731
    assert key(rows) == key(data.train.inputs)
    again = np.concatenate([b["input"].data for b in iterate_batches(data.train, batch_size,
                                                                     stream(seed, "shuffle/0"))])
    assert rows.tobytes() == again.tobytes()


def test_csv_round_trip(tmp_path):
    for spec in (DatasetSpec("blobs", 8, 3, 3, noise=1.0), DatasetSpec("linear_regression", 8, 3, 3, noise=0.5)):
        split = generate(spec, seed=5).train
        export_csv(split, tmp_path / "s.csv")
        back = import_csv(tmp_path / "s.csv")
        assert back.inputs.tobytes() == split.inputs.tobytes()
        if split.labels is not None:
            assert np.array_equal(back.labels, split.labels)
        else:
            assert back.targets.tobytes() == split.targets.tobytes()
