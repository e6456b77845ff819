"""Bundle datasets in the public three-relation pair-file layout.

A dataset directory holds ``user_bundle_{train,tune,test}.txt``,
``user_item.txt`` and ``bundle_item.txt``; each line is ``left<TAB>right`` with
0-based decimal ids. An optional ``counts.txt`` declares the entity counts as
``users n``, ``bundles n`` and ``items n`` lines, otherwise they are inferred as
the largest id seen plus one.
"""

import json
import re
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from bunca import BuncaError
from bunca.enums import (
    BUNDLE_ITEM_FILE,
    COUNTS_FILE,
    SPLIT_FILES,
    USER_ITEM_FILE,
    Popularity,
)
from bunca.graph import SparseBinaryMatrix
from bunca.log import DebugMixin, warning

PathLike = Union[str, Path]

SPLITS = tuple(SPLIT_FILES)

_DECIMAL = re.compile(r"[0-9]+")


class DatasetError(BuncaError):
    """Raised on malformed or inconsistent dataset files."""


@dataclass(frozen=True, eq=False)
class Dataset(DebugMixin):
    """Immutable user/bundle/item relations with a train/tune/test split."""

    name: str
    n_users: int
    n_bundles: int
    n_items: int
    train: SparseBinaryMatrix
    tune: SparseBinaryMatrix
    test: SparseBinaryMatrix
    user_item: SparseBinaryMatrix
    bundle_item: SparseBinaryMatrix
    duplicates: int = 0

    def __post_init__(self):
        expected = {
            "train": (self.n_users, self.n_bundles),
            "tune": (self.n_users, self.n_bundles),
            "test": (self.n_users, self.n_bundles),
            "user_item": (self.n_users, self.n_items),
            "bundle_item": (self.n_bundles, self.n_items),
        }
        for field_name, shape in expected.items():
            matrix = getattr(self, field_name)
            if matrix.shape != shape:
                raise DatasetError(f"{field_name} is {matrix.shape}, expected {shape}")
        for a, b in (("train", "tune"), ("train", "test"), ("tune", "test")):
            overlap = _overlap(getattr(self, a), getattr(self, b))
            if overlap:
                u, bundle = overlap
                raise DatasetError(
                    f"pair ({u}, {bundle}) appears in both the {a} and {b} splits"
                )
        used = np.zeros(self.n_bundles, dtype=bool)
        for split in SPLITS:
            used[getattr(self, split).col_indices] = True
        empty = np.flatnonzero(used & (self.bundle_item.row_degrees() == 0))
        if len(empty):
            warning(f"{self.name}: {len(empty)} interacted bundles have no items")

    @property
    def X(self) -> SparseBinaryMatrix:
        return self.train

    @property
    def Y(self) -> SparseBinaryMatrix:
        return self.user_item

    @property
    def Z(self) -> SparseBinaryMatrix:
        return self.bundle_item

    def split(self, name: str) -> SparseBinaryMatrix:
        if name not in SPLITS:
            raise DatasetError(f"unknown split {name!r}")
        return getattr(self, name)

    def all_interactions(self) -> SparseBinaryMatrix:
        rows, cols = [], []
        for split in SPLITS:
            r, c = self.split(split).pairs()
            rows.append(r)
            cols.append(c)
        return SparseBinaryMatrix.from_pairs(
            np.concatenate(rows), np.concatenate(cols), self.n_users, self.n_bundles
        )


def _overlap(a: SparseBinaryMatrix, b: SparseBinaryMatrix) -> Optional[Tuple[int, int]]:
    both = a.to_csr().multiply(b.to_csr()).tocoo()
    if both.nnz:
        return int(both.row[0]), int(both.col[0])
    return None


def is_decimal(field: str) -> bool:
    """ASCII digits only; ``str.isdigit`` also accepts superscripts and other scripts."""
    return _DECIMAL.fullmatch(field) is not None


def text_lines(path: Path) -> Iterator[Tuple[int, str]]:
    """Numbered UTF-8 lines without their line break; undecodable bytes name the line."""
    try:
        raw = path.read_bytes()
    except OSError as ex:
        raise DatasetError(f"cannot read {path}: {ex}") from ex
    for lineno, chunk in enumerate(raw.splitlines(), start=1):
        try:
            yield lineno, chunk.decode("utf8")
        except UnicodeDecodeError as ex:
            raise DatasetError(f"{path.name}:{lineno}: not valid UTF-8 ({ex.reason})") from ex


def _read_pairs(path: Path) -> Tuple[np.ndarray, np.ndarray, List[int]]:
    """Parse ``left<TAB>right`` lines; returns ids and the line number of each pair."""
    if not path.exists():
        raise DatasetError(f"missing dataset file {path}")
    left, right, lines = [], [], []
    for lineno, line in text_lines(path):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 2 or not all(is_decimal(f) for f in fields):
            raise DatasetError(f"{path.name}:{lineno}: malformed line {line!r}")
        left.append(int(fields[0]))
        right.append(int(fields[1]))
        lines.append(lineno)
    return np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64), lines


def _read_counts(path: Path) -> Dict[str, int]:
    counts = {}
    for lineno, line in text_lines(path):
        if not line.strip():
            continue
        parts = line.split()
        known = parts[0] in ("users", "bundles", "items")
        if len(parts) != 2 or not known or not is_decimal(parts[1]):
            raise DatasetError(f"{path.name}:{lineno}: malformed line {line!r}")
        counts[parts[0]] = int(parts[1])
    missing = {"users", "bundles", "items"} - set(counts)
    if missing:
        raise DatasetError(f"{path.name}: missing {', '.join(sorted(missing))}")
    return counts


class _Loader(DebugMixin):
    name = "load"

    def __init__(self, directory: Path):
        self.directory = directory
        self.duplicates = 0

    def matrix(self, fname, raw, left_kind, right_kind, counts) -> SparseBinaryMatrix:
        left, right, lines = raw
        n_left, n_right = counts[left_kind], counts[right_kind]
        for ids, bound, kind in ((left, n_left, left_kind), (right, n_right, right_kind)):
            bad = np.flatnonzero(ids >= bound)
            if len(bad):
                first = bad[0]
                raise DatasetError(
                    f"{fname}:{lines[first]}: {kind[:-1]} id {ids[first]} "
                    f">= declared count {bound}"
                )
        m = SparseBinaryMatrix.from_pairs(left, right, n_left, n_right)
        dropped = len(left) - m.nnz
        if dropped:
            self.duplicates += dropped
            warning(f"{fname}: {dropped} duplicate lines ignored")
        return m


def load_dataset(directory: PathLike, name: Optional[str] = None) -> Dataset:
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"dataset directory {directory} does not exist")
    loader = _Loader(directory)
    raw = {split: _read_pairs(directory / fname) for split, fname in SPLIT_FILES.items()}
    raw_ui = _read_pairs(directory / USER_ITEM_FILE)
    raw_bi = _read_pairs(directory / BUNDLE_ITEM_FILE)

    counts_path = directory / COUNTS_FILE
    if counts_path.exists():
        counts = _read_counts(counts_path)
    else:

        def top(*arrays):
            return int(max((a.max() + 1 for a in arrays if len(a)), default=0))

        counts = {
            "users": top(*(r[0] for r in raw.values()), raw_ui[0]),
            "bundles": top(*(r[1] for r in raw.values()), raw_bi[0]),
            "items": top(raw_ui[1], raw_bi[1]),
        }

    splits = {
        split: loader.matrix(SPLIT_FILES[split], raw[split], "users", "bundles", counts)
        for split in SPLITS
    }
    user_item = loader.matrix(USER_ITEM_FILE, raw_ui, "users", "items", counts)
    bundle_item = loader.matrix(BUNDLE_ITEM_FILE, raw_bi, "bundles", "items", counts)
    ds = Dataset(
        name=name or directory.name,
        n_users=counts["users"],
        n_bundles=counts["bundles"],
        n_items=counts["items"],
        user_item=user_item,
        bundle_item=bundle_item,
        duplicates=loader.duplicates,
        **splits,
    )
    loader.log(
        f"{ds.name}: {ds.n_users} users, {ds.n_bundles} bundles, {ds.n_items} items, "
        f"train/tune/test {ds.train.nnz}/{ds.tune.nnz}/{ds.test.nnz}"
    )
    return ds


def write_pairs(path: Path, matrix: SparseBinaryMatrix):
    rows, cols = matrix.pairs()
    path.write_text("".join(f"{r}\t{c}\n" for r, c in zip(rows, cols)), encoding="utf8")


def save_dataset(ds: Dataset, directory: PathLike) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split, fname in SPLIT_FILES.items():
        write_pairs(directory / fname, ds.split(split))
    write_pairs(directory / USER_ITEM_FILE, ds.user_item)
    write_pairs(directory / BUNDLE_ITEM_FILE, ds.bundle_item)
    (directory / COUNTS_FILE).write_text(
        f"users {ds.n_users}\nbundles {ds.n_bundles}\nitems {ds.n_items}\n", encoding="utf8"
    )
    return directory


@dataclass(frozen=True)
class DatasetStats:
    users: int
    items: int
    bundles: int
    user_item: int
    user_bundle: int
    avg_items_per_bundle: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)


def dataset_stats(ds: Dataset) -> DatasetStats:
    user_bundle = sum(ds.split(split).nnz for split in SPLITS)
    avg = ds.bundle_item.nnz / ds.n_bundles if ds.n_bundles else 0.0
    return DatasetStats(
        users=ds.n_users,
        items=ds.n_items,
        bundles=ds.n_bundles,
        user_item=ds.user_item.nnz,
        user_bundle=user_bundle,
        avg_items_per_bundle=avg,
    )


def item_popularity(ds: Dataset, popularity: Popularity = Popularity.USER) -> np.ndarray:
    if Popularity(popularity) is Popularity.USER:
        return ds.user_item.col_degrees()
    return ds.bundle_item.col_degrees()


def high_influence_counts(
    ds: Dataset, popularity: Popularity = Popularity.USER
) -> Dict[int, int]:
    """Per bundle, how many items are strictly more popular than the bundle mean.

    Bundles without items are left out.
    """
    pop = item_popularity(ds, popularity).astype(np.float64)
    out = {}
    for b in range(ds.n_bundles):
        items = ds.bundle_item.row(b)
        if not len(items):
            continue
        values = pop[items]
        out[b] = int(np.count_nonzero(values > values.sum() / len(values)))
    return out


def high_influence_distribution(
    ds: Dataset, popularity: Popularity = Popularity.USER
) -> Dict[int, int]:
    """Histogram: number of high-influence items -> number of bundles."""
    per_bundle = high_influence_counts(ds, popularity)
    skipped = ds.n_bundles - len(per_bundle)
    if skipped:
        warning(f"{ds.name}: {skipped} bundles without items left out of the histogram")
    return dict(sorted(Counter(per_bundle.values()).items()))
