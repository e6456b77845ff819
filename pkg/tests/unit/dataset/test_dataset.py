import json
import os

import numpy as np
import pytest

from bunca import dataset as dataset_module
from bunca.dataset import (
    Dataset,
    DatasetError,
    dataset_stats,
    high_influence_counts,
    high_influence_distribution,
    load_dataset,
    save_dataset,
)
from bunca.enums import DATASET_STATS, Popularity
from bunca.graph import SparseBinaryMatrix

MINIMAL = {
    "user_bundle_train.txt": "0\t0\n1\t1\n",
    "user_bundle_tune.txt": "0\t1\n",
    "user_bundle_test.txt": "1\t0\n",
    "user_item.txt": "0\t0\n1\t2\n",
    "bundle_item.txt": "0\t0\n0\t1\n1\t1\n1\t2\n",
}


def _write(directory, files=None, **changes):
    directory.mkdir(parents=True, exist_ok=True)
    files = dict(files or MINIMAL)
    files.update({k.replace("__", "."): v for k, v in changes.items()})
    for name, text in files.items():
        (directory / name).write_text(text, encoding="utf8")
    return directory


def test_minimal_fixture(tmp_path):
    ds = load_dataset(_write(tmp_path / "mini"))
    assert ds.name == "mini"
    assert (ds.n_users, ds.n_bundles, ds.n_items) == (2, 2, 3)
    assert ds.X.shape == (2, 2)
    assert ds.Z.nnz == 4
    assert ds.duplicates == 0
    assert ds.all_interactions().nnz == 4


def test_duplicate_lines_are_counted(tmp_path, mocker):
    warn = mocker.patch.object(dataset_module, "warning")
    ds = load_dataset(_write(tmp_path / "dup", user_item__txt="0\t0\n0\t0\n1\t2\n"))
    assert ds.user_item.nnz == 2
    assert ds.duplicates == 1
    assert "duplicate" in warn.call_args.args[0]


def test_space_separated_line_names_file_and_line(tmp_path):
    directory = _write(tmp_path / "bad", user_item__txt="0\t0\n3 7\n")
    with pytest.raises(DatasetError) as ie:
        load_dataset(directory)
    assert "user_item.txt:2" in str(ie.value)


@pytest.mark.parametrize("line", ["0\t\u00b2", "0\t\u0663", "-1\t0", "0\t1.0"])
def test_non_decimal_ids_name_file_and_line(tmp_path, line):
    directory = _write(tmp_path / "digits", user_bundle_train__txt=f"0\t0\n{line}\n")
    with pytest.raises(DatasetError) as ie:
        load_dataset(directory)
    assert "user_bundle_train.txt:2" in str(ie.value)


def test_invalid_utf8_names_file_and_line(tmp_path):
    directory = _write(tmp_path / "bytes")
    (directory / "bundle_item.txt").write_bytes(b"0\t0\n0\t1\n1\t\xff\n")
    with pytest.raises(DatasetError) as ie:
        load_dataset(directory)
    assert "bundle_item.txt:3" in str(ie.value)


def test_counts_file_needs_ascii_digits(tmp_path):
    directory = _write(tmp_path / "counts", counts__txt="users 2\nbundles \u0662\nitems 3\n")
    with pytest.raises(DatasetError) as ie:
        load_dataset(directory)
    assert "counts.txt:2" in str(ie.value)


def test_id_beyond_declared_count(tmp_path):
    directory = _write(tmp_path / "big", counts__txt="users 2\nbundles 2\nitems 2\n")
    with pytest.raises(DatasetError) as ie:
        load_dataset(directory)
    assert "item id 2" in str(ie.value)


def test_counts_file_allows_unused_entities(tmp_path):
    directory = _write(tmp_path / "wide", counts__txt="users 5\nbundles 2\nitems 3\n")
    assert load_dataset(directory).n_users == 5


def test_overlapping_splits(tmp_path):
    directory = _write(tmp_path / "overlap", user_bundle_test__txt="0\t0\n")
    with pytest.raises(DatasetError) as ie:
        load_dataset(directory)
    assert "(0, 0)" in str(ie.value)


def test_missing_file(tmp_path):
    directory = _write(tmp_path / "partial")
    (directory / "bundle_item.txt").unlink()
    with pytest.raises(DatasetError):
        load_dataset(directory)
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "absent")


def test_save_then_load(tmp_path, toy):
    loaded = load_dataset(save_dataset(toy, tmp_path / "copy"), name="toy")
    assert loaded.n_items == toy.n_items
    for split in ("train", "tune", "test", "user_item", "bundle_item"):
        assert getattr(loaded, split) == getattr(toy, split)


def test_bundle_without_items_warns(mocker):
    warn = mocker.patch.object(dataset_module, "warning")
    m = SparseBinaryMatrix.from_pairs
    Dataset(
        "lonely",
        1,
        2,
        1,
        train=m([0], [1], 1, 2),
        tune=SparseBinaryMatrix.empty(1, 2),
        test=SparseBinaryMatrix.empty(1, 2),
        user_item=m([0], [0], 1, 1),
        bundle_item=m([0], [0], 2, 1),
    )
    assert "no items" in warn.call_args.args[0]


def test_stats_average_items():
    m = SparseBinaryMatrix.from_pairs
    ds = Dataset(
        "two",
        1,
        2,
        6,
        train=m([0, 0], [0, 1], 1, 2),
        tune=SparseBinaryMatrix.empty(1, 2),
        test=SparseBinaryMatrix.empty(1, 2),
        user_item=m([0], [0], 1, 6),
        bundle_item=m([0, 0, 0, 1, 1, 1], [0, 1, 2, 3, 4, 5], 2, 6),
    )
    stats = dataset_stats(ds)
    assert stats.avg_items_per_bundle == 3.0
    assert stats.user_bundle == 2
    assert json.loads(stats.to_json())["items"] == 6


def _popularity_dataset(popularity, bundles):
    """Items with the given interaction counts from distinct users."""
    users, items = [], []
    n_users = max(popularity)
    for item, count in enumerate(popularity):
        users.extend(range(count))
        items.extend([item] * count)
    m = SparseBinaryMatrix.from_pairs
    b_rows = [b for b, members in enumerate(bundles) for _ in members]
    b_cols = [i for members in bundles for i in members]
    n_bundles, n_items = len(bundles), len(popularity)
    return Dataset(
        "pop",
        n_users,
        n_bundles,
        n_items,
        train=SparseBinaryMatrix.empty(n_users, n_bundles),
        tune=SparseBinaryMatrix.empty(n_users, n_bundles),
        test=SparseBinaryMatrix.empty(n_users, n_bundles),
        user_item=m(users, items, n_users, n_items),
        bundle_item=m(b_rows, b_cols, n_bundles, n_items),
    )


def test_high_influence_counts():
    ds = _popularity_dataset([10, 1, 1, 3, 3], [[0, 1, 2], [3, 4]])
    assert high_influence_counts(ds) == {0: 1, 1: 0}
    assert high_influence_distribution(ds) == {0: 1, 1: 1}


def test_empty_bundle_left_out_of_histogram(mocker):
    warn = mocker.patch.object(dataset_module, "warning")
    ds = _popularity_dataset([10, 1, 1], [[0, 1, 2], []])
    assert high_influence_distribution(ds) == {1: 1}
    assert "left out" in warn.call_args.args[0]


def test_bundle_popularity_variant():
    ds = _popularity_dataset([1, 1, 1], [[0, 1], [1, 2], [1]])
    # item 1 sits in all three bundles
    assert high_influence_counts(ds, Popularity.BUNDLE) == {0: 1, 1: 1, 2: 0}


@pytest.mark.skipif("BUNCA_YOUSHU_DIR" not in os.environ, reason="Youshu files not available")
def test_youshu_statistics():
    stats = dataset_stats(load_dataset(os.environ["BUNCA_YOUSHU_DIR"]))
    users, items, bundles, ui, ub, avg = DATASET_STATS["youshu"]
    assert (stats.users, stats.items, stats.bundles) == (users, items, bundles)
    assert (stats.user_item, stats.user_bundle) == (ui, ub)
    assert round(stats.avg_items_per_bundle, 2) == avg


def test_split_lookup(toy):
    assert toy.split("tune") is toy.tune
    with pytest.raises(DatasetError):
        toy.split("valid")
    assert np.array_equal(toy.Y.to_dense(), toy.user_item.to_dense())
